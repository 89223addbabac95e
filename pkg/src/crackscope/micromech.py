"""Multiple-cracking micromechanics and crack-density / crack-width model fits.

Units: lengths in mm, moduli in GPa, bond strength in MPa, crack density in
1/m, crack widths in micrometres.
"""

from __future__ import annotations

import json
import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass

import numpy as np


class SaturationError(ValueError):
    """L_f^2 - 2*pi*L_f*lambda*x < 0: no admissible crack spacing."""


@dataclass(frozen=True)
class MicromechParams:
    fiber_length: float  # L_f, mm
    fiber_radius: float  # r_f, mm
    fiber_fraction: float  # V_f
    matrix_fraction: float  # V_m
    matrix_modulus: float  # E_m, GPa
    matrix_failure_strain: float  # eps_mu
    bond_strength: float  # tau_eff, MPa
    snubbing_coefficient: float = 0.0  # f

    def __post_init__(self):
        positive = (
            "fiber_length", "fiber_radius", "fiber_fraction", "matrix_fraction",
            "matrix_modulus", "matrix_failure_strain", "bond_strength",
        )
        for name in positive:
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.snubbing_coefficient < 0:
            raise ValueError("snubbing_coefficient must be >= 0")
        if self.fiber_fraction + self.matrix_fraction > 1 + 1e-9:
            raise ValueError("fiber and matrix volume fractions exceed 1")


@dataclass(frozen=True)
class TheoryOutputs:
    g: float
    lam: float
    x_mm: float
    xprime_mm: float
    cdmax_per_m: float

    def to_text(self) -> str:
        return (
            f"g={self.g!r}\nlambda={self.lam!r}\nx_mm={self.x_mm!r}\n"
            f"xprime_mm={self.xprime_mm!r}\ncdmax_per_m={self.cdmax_per_m!r}\n"
        )


def snubbing_factor(f: float, exponential: bool = False) -> float:
    """g = 2(pi f/2 + 1)/(4 + f^2), or 2(1 + e^{pi f/2})/(4 + f^2) with ``exponential``."""
    if exponential:
        return 2.0 * (1.0 + math.exp(math.pi * f / 2.0)) / (4.0 + f * f)
    return 2.0 * (math.pi * f / 2.0 + 1.0) / (4.0 + f * f)


def transfer_distance(p: MicromechParams) -> float:
    """x = V_m E_m eps_mu r_f / (2 V_f tau_eff), in mm (GPa converted to MPa)."""
    return (
        p.matrix_fraction * p.matrix_modulus * 1e3 * p.matrix_failure_strain * p.fiber_radius
        / (p.fiber_fraction * 2.0 * p.bond_strength)
    )


def crack_spacing(fiber_length: float, lam: float, x: float) -> float:
    """Lower-bound crack spacing x'.

    Evaluated as pi*L*lam*x / (L + sqrt(L^2 - 2 pi L lam x)), algebraically
    equal to (L - sqrt(...))/2 but free of cancellation as x -> 0.
    """
    disc = fiber_length**2 - 2.0 * math.pi * fiber_length * lam * x
    if disc < 0:
        raise SaturationError(
            f"saturation condition violated: x = {x!r} mm gives discriminant {disc!r}"
        )
    return math.pi * fiber_length * lam * x / (fiber_length + math.sqrt(disc))


def theory_outputs(p: MicromechParams, exponential_snubbing: bool = False) -> TheoryOutputs:
    g = snubbing_factor(p.snubbing_coefficient, exponential_snubbing)
    lam = 4.0 / (math.pi * g)
    x = transfer_distance(p)
    xp = crack_spacing(p.fiber_length, lam, x)
    return TheoryOutputs(g, lam, x, xp, 1e3 / (2.0 * xp))


def strain_from_cracks(n_cracks: float, length_m: float, avg_opening_mm: float, elastic_strain: float | None = None) -> float:
    """eps = (N/L) * avg(c) (+ elastic strain when given)."""
    if length_m <= 0:
        raise ValueError("length must be positive")
    if n_cracks < 0:
        raise ValueError("crack count must be >= 0")
    eps = (n_cracks / length_m) * (avg_opening_mm * 1e-3)
    return eps + (elastic_strain or 0.0)


# -- trilinear crack-density model ------------------------------------------


@dataclass(frozen=True)
class TrilinearParams:
    eps_cr: float
    eps_lcr: float
    cd_max: float
    r_squared: float | None

    def predict(self, strain) -> np.ndarray:
        return trilinear(np.asarray(strain, dtype=np.float64), self.eps_cr, self.eps_lcr, self.cd_max)

    def to_json(self) -> str:
        return json.dumps({"model": "trilinear", **asdict(self)}, indent=2) + "\n"


def _shape(eps: np.ndarray, e_cr: float, e_lcr: float) -> np.ndarray:
    return np.clip((eps - e_cr) / (e_lcr - e_cr), 0.0, 1.0)


def trilinear(eps: np.ndarray, e_cr: float, e_lcr: float, cd_max: float) -> np.ndarray:
    return cd_max * _shape(eps, e_cr, e_lcr)


def _best_height(eps, cd, e_cr, e_lcr):
    h = _shape(eps, e_cr, e_lcr)
    hh = float(h @ h)
    if hh == 0:
        return 0.0, float(cd @ cd)
    c = float(h @ cd) / hh
    r = cd - c * h
    return c, float(r @ r)


def _grid_search(eps, cd, cr_vals, lcr_vals):
    best = None
    for a in cr_vals:
        for b in lcr_vals:
            if b <= a:
                continue
            c, ss = _best_height(eps, cd, a, b)
            # lowest SSres; ties by smaller eps_cr, then smaller eps_lcr (iteration order)
            if best is None or ss < best[0]:
                best = (ss, a, b, c)
    return best


def _segment_polish(eps, cd, best, rounds: int = 20):
    """Exact least squares with the data partition of the current breakpoints held fixed.

    Within a fixed partition the model (0 | a + b*eps | h) is linear in
    (a, b, h); breakpoints are recovered as -a/b and (h - a)/b. Accepted only
    when it lowers SSres.
    """
    ss, e_cr, e_lcr, c = best
    for _ in range(rounds):
        lo = eps <= e_cr
        hi = eps >= e_lcr
        mid = ~lo & ~hi
        if mid.sum() < 2:
            break
        A = np.zeros((len(eps), 3))
        A[mid, 0] = 1.0
        A[mid, 1] = eps[mid]
        A[hi, 2] = 1.0
        coef, *_ = np.linalg.lstsq(A, cd, rcond=None)
        a, b, h = coef
        if b <= 0 or h <= 0:
            break
        n_cr, n_lcr = -a / b, (h - a) / b
        if not n_cr < n_lcr:
            break
        n_c, n_ss = _best_height(eps, cd, n_cr, n_lcr)
        if n_ss >= ss:
            break
        ss, e_cr, e_lcr, c = n_ss, n_cr, n_lcr, n_c
    return ss, e_cr, e_lcr, c


def fit_trilinear(points: Sequence[tuple[float, float]], coarse: int = 50, refine: int = 10) -> TrilinearParams:
    """Fit cd = 0 | ramp | plateau by breakpoint grid search.

    A coarse ``coarse x coarse`` grid over the observed strain range is
    refined ``refine``-fold around the best cell (re-centred until the optimum
    sits at least two fine steps inside the window), then polished by exact
    least squares on the induced data partition. The plateau height is
    solved in closed form for every candidate pair of breakpoints.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or len(pts) < 6:
        raise ValueError("need at least 6 (strain, cd) points")
    eps, cd = pts[:, 0], pts[:, 1]
    if np.any(np.diff(eps) < 0):
        raise ValueError("strains must be non-decreasing")
    lo, hi = float(eps[0]), float(eps[-1])
    if hi <= lo:
        raise ValueError("strain range is empty")
    ss_tot = float(((cd - cd.mean()) ** 2).sum())
    if ss_tot == 0:
        return TrilinearParams(lo, hi, float(cd[0]), None)

    grid = np.linspace(lo, hi, coarse)
    step = grid[1] - grid[0]
    best = _grid_search(eps, cd, grid, grid)
    fine = step / refine
    offsets = fine * np.arange(-refine, refine + 1)
    for _ in range(100):
        _, a, b, _ = best
        # the current centre is part of the window, so SSres never increases
        best = _grid_search(eps, cd, a + offsets, b + offsets)
        if max(abs(best[1] - a), abs(best[2] - b)) <= (refine - 2) * fine * (1 + 1e-9):
            break
    ss, e_cr, e_lcr, c = _segment_polish(eps, cd, best)
    return TrilinearParams(float(e_cr), float(e_lcr), float(c), 1.0 - ss / ss_tot)


def r_squared(observed, predicted) -> float | None:
    y = np.asarray(observed, dtype=np.float64)
    ss_tot = float(((y - y.mean()) ** 2).sum())
    if ss_tot == 0:
        return None
    return 1.0 - float(((y - np.asarray(predicted)) ** 2).sum()) / ss_tot


# -- constant crack-width model ------------------------------------------------


@dataclass(frozen=True)
class ConstantAcwFit:
    acw_constant: float
    fit_window: tuple[float, float]
    r_squared: float | None
    n_points: int

    def to_json(self) -> str:
        d = asdict(self)
        d["fit_window"] = list(self.fit_window)
        return json.dumps({"model": "constant_acw", **d}, indent=2) + "\n"


def fit_constant_acw(points: Sequence[tuple[float, float | None]], window: tuple[float, float]) -> ConstantAcwFit:
    """Least-squares constant (the mean) of ACW over strains inside ``window``.

    Points whose ACW is None (no cracks) are skipped. R^2 compares the
    constant against the windowed points; with zero spread it is None.
    """
    lo, hi = window
    sel = [(e, a) for e, a in points if a is not None and lo <= e <= hi]
    if not sel:
        raise ValueError(f"no ACW points inside strain window [{lo}, {hi}]")
    if len(sel) < 3:
        raise ValueError(f"need >= 3 points in window, found {len(sel)}")
    acw = np.array([a for _, a in sel], dtype=np.float64)
    mean = float(acw.mean())
    if mean <= 0:
        raise ValueError("fitted ACW constant is not positive")
    # centred R^2 of the mean is 0 whenever the points vary; None without spread
    return ConstantAcwFit(mean, (lo, hi), r_squared(acw, np.full_like(acw, mean)), len(sel))


def normalize_strain(strains, eps_lcr: float) -> np.ndarray:
    if eps_lcr <= 0:
        raise ValueError("eps_lcr must be positive")
    return np.asarray(strains, dtype=np.float64) / eps_lcr


@dataclass(frozen=True)
class DamageRatio:
    ratio: float
    failure: bool


def damage_ratio(cd_observed: float, cd_max: float) -> DamageRatio:
    """CD / CD_max; ``failure`` once the ratio reaches one."""
    if cd_max <= 0:
        raise ValueError("cd_max must be positive")
    r = cd_observed / cd_max
    return DamageRatio(r, r >= 1.0)
