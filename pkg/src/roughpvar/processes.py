"""Reference controlled processes for the Monte Carlo harness.

Each builder takes the driver sampled at fine resolution and returns the
controlled path at the coarse resolution with the fine construction
attached. Closed-form processes (the driver itself, its square and cube
integrals, the exponential flow) are evaluated exactly on the fine grid, so
their coarse rows are exact subsamples; the generic process runs the
rough-differential-equation solver.
"""

from __future__ import annotations

import numpy as np

from .controlled import ControlledPath, FunctionFamily, solve_rde, subsample_controlled
from .fbm import FbmPath

PROCESS_TAGS = ("fbm", "sq", "cube", "exp-rde", "custom-rde")

_DEFAULT_ELL = 6


def build_controlled_process(
    tag: str,
    x_fine: FbmPath,
    fine_factor: int = 1,
    params: dict | None = None,
) -> ControlledPath:
    """Construct one of the registry processes over a sampled driver.

    Parameters
    ----------
    tag : str
        One of ``fbm`` (the driver itself), ``sq`` (running square / 2),
        ``cube`` (running cube / 6), ``exp-rde`` (the exponential flow of
        dy = y dx from 1, evaluated in closed form), ``custom-rde``
        (numeric solve of dy = b(y) dt + V(y) dx with polynomial b and V).
    x_fine : FbmPath
        Driver at resolution ``fine_factor * n``.
    fine_factor : int
        Resolution ratio; the returned path lives on the coarse grid.
    params : dict
        Process options: ``ell`` (level count, default 6) for every tag;
        ``y0``, ``drift_coeffs``, ``field_coeffs`` for ``custom-rde``.
    """
    params = dict(params or {})
    ell = int(params.pop("ell", _DEFAULT_ELL))
    if ell < 2:
        raise ValueError("processes need at least two levels")
    if fine_factor < 1 or x_fine.n % fine_factor != 0:
        raise ValueError(
            f"fine_factor must divide the fine resolution {x_fine.n}, got {fine_factor}"
        )

    if tag == "custom-rde":
        y0 = float(params.pop("y0", 1.0))
        drift_coeffs = params.pop("drift_coeffs", None)
        field_coeffs = params.pop("field_coeffs", (0.0, 1.0))
        _reject_unknown(tag, params)
        drift = (
            FunctionFamily.polynomial(drift_coeffs, order=2)
            if drift_coeffs is not None
            else None
        )
        field = FunctionFamily.polynomial(field_coeffs, order=ell)
        return solve_rde(drift, field, y0, x_fine, ell=ell, refine=fine_factor)

    _reject_unknown(tag, params)
    xv = x_fine.values
    zeros = np.zeros_like(xv)
    ones = np.ones_like(xv)
    if tag == "fbm":
        base = [xv, ones]
    elif tag == "sq":
        base = [0.5 * xv**2, xv, ones]
    elif tag == "cube":
        base = [xv**3 / 6.0, 0.5 * xv**2, xv, ones]
    elif tag == "exp-rde":
        base = [np.exp(xv)] * ell
    else:
        raise ValueError(f"unknown process tag {tag!r}; known: {PROCESS_TAGS}")
    raw = base[:ell] if ell <= len(base) else base + [zeros] * (ell - len(base))

    fine_cp = ControlledPath.from_raw_levels(x_fine, raw, alpha=x_fine.hurst)
    if fine_factor == 1:
        return fine_cp
    return subsample_controlled(fine_cp, fine_factor)


def _reject_unknown(tag: str, params: dict) -> None:
    if params:
        raise ValueError(f"unknown parameters for process {tag!r}: {sorted(params)}")
