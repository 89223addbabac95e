"""Crack detection and crack statistics for strain-hardening composite specimens."""

__version__ = "0.1.0"
