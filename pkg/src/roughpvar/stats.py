"""Power-variation statistics and limit-theorem ingredients.

The central object is the centered statistic

    sum-part    n**(p*H - 1) * sum_{t_k < t} |delta y_k|**p
    compensator E|N|**p * integral_0^t |y'_u|**p du

whose fluctuations obey a three-regime limit theorem in the Hurst index:
mixed Gaussian above 1/4, mixed Gaussian plus a deterministic-variance drift
at 1/4, and a pure probability-limit drift below 1/4. The drift and
conditional standard deviation functionals are quadratures of derivative
levels over the fine grid carried by the controlled path.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Literal

import numpy as np

from .controlled import ControlledPath
from .fbm import FbmPath
from .hermite import (
    AbsPowerFamily,
    TruncationSpec,
    asymptotic_variance,
    gaussian_abs_moment,
)

Quadrature = Literal["trapezoid", "midpoint"]

REGIME_MIXED = "mixed-gaussian"
REGIME_CRITICAL = "critical"
REGIME_DEGENERATE = "degenerate"

_CRITICAL_TOL = 1e-12


class RegimeError(ValueError):
    """Raised when a limit functional is requested outside its regime."""


@dataclass(frozen=True)
class StatConfig:
    """How to evaluate the centered statistic.

    Attributes
    ----------
    p : float
        Power-variation exponent, >= 1.
    t : float
        Endpoint in (0, 1]; snapped down to the grid.
    quadrature : str
        Rule for the compensator integral: ``trapezoid`` (default) or
        ``midpoint`` (composite over pairs of fine cells).
    fine_factor : int
        Resolution multiple used when constructing paths for quadrature.
    """

    p: float
    t: float = 1.0
    quadrature: Quadrature = "trapezoid"
    fine_factor: int = 16

    def __post_init__(self) -> None:
        if self.p < 1.0:
            raise ValueError(f"p must be >= 1, got {self.p}")
        if not 0.0 < self.t <= 1.0:
            raise ValueError(f"t must lie in (0, 1], got {self.t}")
        if self.quadrature not in ("trapezoid", "midpoint"):
            raise ValueError(f"unknown quadrature rule {self.quadrature!r}")
        if self.fine_factor < 1:
            raise ValueError("fine_factor must be >= 1")


@dataclass(frozen=True)
class LimitSpec:
    """Regime classification plus the limit ingredients for one path.

    ``cond_std`` is None in the degenerate regime, where no distributional
    normalization applies.
    """

    regime: str
    rate_exponent: float
    drift: float
    cond_std: float | None


def classify_regime(hurst: float) -> str:
    """Regime of the limit theorem as a function of the Hurst index."""
    if not 0.0 < hurst <= 0.5:
        raise ValueError(f"the limit theorem covers hurst in (0, 1/2], got {hurst}")
    if abs(hurst - 0.25) <= _CRITICAL_TOL:
        return REGIME_CRITICAL
    return REGIME_MIXED if hurst > 0.25 else REGIME_DEGENERATE


def rate_exponent(hurst: float) -> float:
    """Convergence-rate exponent: 1/2 at and above the critical index, else 2H."""
    regime = classify_regime(hurst)
    if regime == REGIME_DEGENERATE:
        return 2.0 * hurst
    return 0.5


def _snap_count(t: float, n: int) -> int:
    """Number of whole grid cells below t (t snapped down to the grid)."""
    if not 0.0 <= t <= 1.0 + 1e-12:
        raise ValueError(f"t must lie in [0, 1], got {t}")
    return min(int(math.floor(t * n + 1e-9)), n)


def integrate_grid(values: np.ndarray, step: float, rule: Quadrature = "trapezoid") -> float:
    """Integrate node samples over a uniform grid by the requested rule.

    ``midpoint`` treats consecutive pairs of cells as one midpoint cell
    (weight 2*step on odd nodes); it needs an even cell count and falls back
    to trapezoid with a warning otherwise.
    """
    values = np.asarray(values, dtype=float)
    cells = len(values) - 1
    if cells < 0:
        raise ValueError("need at least one node")
    if cells == 0:
        return 0.0
    if rule == "midpoint":
        if cells % 2 == 0:
            return float(2.0 * step * values[1::2].sum())
        warnings.warn(
            "midpoint rule needs an even cell count; falling back to trapezoid",
            RuntimeWarning,
            stacklevel=2,
        )
    return float(step * (values.sum() - 0.5 * (values[0] + values[-1])))


def power_variation(values: np.ndarray, p: float, t: float = 1.0) -> float:
    """Raw power variation sum_{t_k < t} |delta y|**p of node samples."""
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    values = np.asarray(values, dtype=float)
    n = len(values) - 1
    m = _snap_count(t, n)
    if m == 0:
        return 0.0
    return float(np.sum(np.abs(np.diff(values[: m + 1])) ** p))


def _compensator(cp: ControlledPath, p: float, t: float, rule: Quadrature) -> float:
    """Integral of |y'|**p over [0, t_snapped] on the finest available grid."""
    if cp.ell < 2:
        raise ValueError("the compensator needs the first derivative level")
    quad_cp = cp.quadrature_path()
    factor = cp.fine_factor if cp.fine is not None else 1
    m = _snap_count(t, cp.n)
    mf = m * factor
    yprime = quad_cp.level(1)[: mf + 1]
    return integrate_grid(np.abs(yprime) ** p, 1.0 / (cp.n * factor), rule)


def pvar_statistic(cp: ControlledPath, cfg: StatConfig) -> float:
    """Centered power-variation statistic of a controlled path.

    The sum part uses the coarse grid; the compensator integrates the first
    derivative level over the fine companion (when present) with the
    configured quadrature rule. Exactly centered in expectation when the
    path is the driver itself.
    """
    n = cp.n
    hurst = cp.alpha
    m = _snap_count(cfg.t, n)
    dy = np.diff(cp.levels[0][: m + 1]) if m > 0 else np.empty(0)
    sum_part = float(n ** (cfg.p * hurst - 1.0) * np.sum(np.abs(dy) ** cfg.p))
    compensator = _compensator(cp, cfg.p, cfg.t, cfg.quadrature)
    return sum_part - gaussian_abs_moment(cfg.p) * compensator


def limit_drift(
    cp: ControlledPath, p: float, t: float = 1.0, rule: Quadrature = "trapezoid"
) -> float:
    """Drift functional of the critical and degenerate regimes.

    Evaluates

        -(E|N|**p / 8) int_0^t phi''(y') (y'')^2 du
        + ((p - 2) E|N|**p / 24) int_0^t phi'(y') y''' du

    over the fine grid, with phi the p-th absolute power. Missing derivative
    levels beyond the stored order are treated as zero after a warning (four
    levels carry the full functional).
    """
    if cp.ell < 4:
        warnings.warn(
            f"drift functional uses levels up to order 3; path has {cp.ell} "
            "levels, missing ones are taken as zero",
            RuntimeWarning,
            stacklevel=2,
        )
    quad_cp = cp.quadrature_path()
    factor = cp.fine_factor if cp.fine is not None else 1
    mf = _snap_count(t, cp.n) * factor
    step = 1.0 / (cp.n * factor)

    def level_or_zero(i: int) -> np.ndarray:
        if i < cp.ell:
            return quad_cp.level(i)[: mf + 1]
        return np.zeros(mf + 1)

    yp = level_or_zero(1)
    ypp = level_or_zero(2)
    yppp = level_or_zero(3)
    family = AbsPowerFamily(p)
    moment = gaussian_abs_moment(p)
    first = integrate_grid(family.eval(2, yp) * ypp**2, step, rule)
    second = integrate_grid(family.eval(1, yp) * yppp, step, rule)
    return -moment / 8.0 * first + (p - 2.0) * moment / 24.0 * second


def limit_cond_std(
    cp: ControlledPath,
    p: float,
    hurst: float | None = None,
    t: float = 1.0,
    rule: Quadrature = "trapezoid",
    truncation: TruncationSpec | None = None,
) -> float:
    """Conditional standard deviation of the mixed Gaussian limit.

    ``sigma(p, H) * sqrt(int_0^t |y'_u|**(2p) du)`` with sigma the square
    root of the asymptotic variance series. Raises :class:`RegimeError`
    below the critical index, where the limit is not distributional.
    """
    if hurst is None:
        hurst = cp.alpha
    if classify_regime(hurst) == REGIME_DEGENERATE:
        raise RegimeError(
            f"no conditional std below the critical index (hurst={hurst})"
        )
    quad_cp = cp.quadrature_path()
    factor = cp.fine_factor if cp.fine is not None else 1
    mf = _snap_count(t, cp.n) * factor
    step = 1.0 / (cp.n * factor)
    yprime = quad_cp.level(1)[: mf + 1]
    scale = integrate_grid(np.abs(yprime) ** (2.0 * p), step, rule)
    return math.sqrt(asymptotic_variance(p, hurst, truncation)) * math.sqrt(scale)


def build_limit_spec(
    cp: ControlledPath,
    p: float,
    hurst: float | None = None,
    t: float = 1.0,
    rule: Quadrature = "trapezoid",
) -> LimitSpec:
    """Classify the regime and evaluate the matching limit ingredients."""
    if hurst is None:
        hurst = cp.alpha
    regime = classify_regime(hurst)
    drift = 0.0
    cond: float | None = None
    if regime == REGIME_MIXED:
        cond = limit_cond_std(cp, p, hurst, t, rule)
    elif regime == REGIME_CRITICAL:
        drift = limit_drift(cp, p, t, rule)
        cond = limit_cond_std(cp, p, hurst, t, rule)
    else:
        drift = limit_drift(cp, p, t, rule)
    return LimitSpec(
        regime=regime, rate_exponent=rate_exponent(hurst), drift=drift, cond_std=cond
    )


def weighted_increment_sum(
    x: FbmPath, f: Callable, weight_values: np.ndarray, s: float = 0.0, t: float = 1.0
) -> float:
    """Weighted sum of a functional of normalized driver increments.

    Computes sum_{s <= t_k < t} weight[k] * f(n**H delta x_k). The weight
    array is indexed on the driver grid; ``f`` must accept arrays. An empty
    window gives 0.
    """
    weight_values = np.asarray(weight_values, dtype=float)
    if weight_values.shape != (x.n + 1,):
        raise ValueError(
            f"weight must be sampled on the driver grid, expected {x.n + 1} "
            f"nodes, got {weight_values.shape}"
        )
    n = x.n
    lo = int(math.ceil(s * n - 1e-9))
    hi = _snap_count(t, n)
    if hi <= lo:
        return 0.0
    scaled = float(n) ** x.hurst * np.diff(x.values)[lo:hi]
    return float(np.sum(weight_values[lo:hi] * np.asarray(f(scaled), dtype=float)))


def riemann_error(cp: ControlledPath, t: float = 1.0, rule: Quadrature = "trapezoid") -> float:
    """Left Riemann sum of the path minus its fine-grid integral over [0, t]."""
    n = cp.n
    m = _snap_count(t, n)
    if m == 0:
        return 0.0
    left_sum = float(np.sum(cp.level(0)[:m])) / n
    quad_cp = cp.quadrature_path()
    factor = cp.fine_factor if cp.fine is not None else 1
    integral = integrate_grid(
        quad_cp.level(0)[: m * factor + 1], 1.0 / (n * factor), rule
    )
    return left_sum - integral


def riemann_correction_sum(
    cp: ControlledPath, t: float = 1.0, rule: Quadrature = "midpoint"
) -> float:
    """Weighted sum of local driver-integral corrections.

    Computes sum_{t_k < t} y_{t_k} * int_{t_k}^{t_{k+1}} (x_u - x_{t_k}) du
    with the inner integral evaluated on the fine grid (midpoint rule by
    default, per-cell trapezoid as fallback/alternative). Without a fine
    companion the inner integral degrades to the two-endpoint trapezoid.
    """
    n = cp.n
    m = _snap_count(t, n)
    if m == 0:
        return 0.0
    quad_cp = cp.quadrature_path()
    factor = cp.fine_factor if cp.fine is not None else 1
    xf = quad_cp.x.values[: m * factor + 1]
    hf = 1.0 / (n * factor)

    if rule == "midpoint" and factor % 2 == 0:
        mids = xf[1 : m * factor : 2].reshape(m, factor // 2)
        cell_integrals = 2.0 * hf * mids.sum(axis=1)
    else:
        if rule == "midpoint":
            warnings.warn(
                "midpoint rule needs an even fine factor; using trapezoid",
                RuntimeWarning,
                stacklevel=2,
            )
        per_fine_cell = 0.5 * hf * (xf[:-1] + xf[1:])
        cell_integrals = per_fine_cell.reshape(m, factor).sum(axis=1)

    x_coarse = cp.x.values[:m]
    corrections = cell_integrals - x_coarse / n
    return float(np.sum(cp.level(0)[:m] * corrections))


def weighted_pvar_sum(
    weight_values: np.ndarray, x: FbmPath, p: float, t: float = 1.0
) -> float:
    """Unnormalized weighted centered power variation of the driver.

    sum_{t_k < t} weight[k] * (|n**H delta x_k|**p - E|N|**p).
    """
    if p < 1.0:
        raise ValueError(f"p must be >= 1, got {p}")
    moment = gaussian_abs_moment(p)
    return weighted_increment_sum(
        x, lambda u: np.abs(u) ** p - moment, weight_values, 0.0, t
    )
