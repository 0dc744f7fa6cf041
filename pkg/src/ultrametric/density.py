"""Heat-kernel densities on X_n and on Q_p.

Two independent routes produce the finite-level density: the inverse
transform of the symbol ``exp(-t|xi|^alpha)`` (whole grid at once) and the
ball-sum decomposition, which is a short sum of ball integrals per point.  The
infinite-level density is a one-sided geometric-type series truncated with a
certified tail bound.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
import math

import numpy as np
from scipy.special import gamma, gammainc, gammaincc

from .grid import GridError, GridParams, GridPoint, ball_integral, norm_table
from .transform import GridFunction, convolve as _convolve, inverse

__all__ = [
    "DensityFamily",
    "density_spectral",
    "density_closed_form",
    "density_closed_form_table",
    "density_limit",
    "density_limit_bracket",
    "convolve",
    "sup_bound_report",
]


def _check_time(t: float) -> float:
    t = float(t)
    if not (t > 0 and math.isfinite(t)):
        raise ValueError(f"time must be positive and finite, got {t}")
    return t


def _exp_diff(a: float, b: float) -> float:
    """``exp(-a) - exp(-b)`` for ``0 <= a <= b`` without cancellation."""
    return -math.exp(-a) * math.expm1(-(b - a))


@dataclass(frozen=True, eq=False)
class DensityFamily:
    """The density ``p_{t,n}`` as a grid function."""

    params: GridParams
    t: float
    values: GridFunction

    @property
    def real(self) -> np.ndarray:
        return self.values.values.real

    @property
    def imag_residue(self) -> float:
        return float(np.max(np.abs(self.values.values.imag)))

    def mass(self) -> float:
        return float(self.params.mass * math.fsum(self.real))

    def __call__(self, u: int) -> float:
        return float(self.real[u % self.params.M])


@lru_cache(maxsize=256)
def _density_cached(params: GridParams, t: float) -> DensityFamily:
    symbol = GridFunction.from_norm(params, lambda r: np.exp(-t * r**params.alpha))
    return DensityFamily(params, t, inverse(symbol))


def density_spectral(params: GridParams, t: float) -> DensityFamily:
    """``p_{t,n} = F_n^{-1} exp(-t |.|^alpha)`` on the whole grid."""
    return _density_cached(params, _check_time(t))


def _ball_weights(params: GridParams, t: float) -> dict[int, float]:
    """Coefficient of each ball integral ``int_{B_i} chi(x xi) dxi`` in p_{t,n}."""
    p, n, a = params.p, params.n, params.alpha
    w = {n: math.exp(-t * p ** (a * n))}
    for i in range(-n + 1, n):
        w[i] = _exp_diff(t * p ** (a * i), t * p ** (a * (i + 1)))
    return w


def density_closed_form(params: GridParams, t: float, x: GridPoint) -> float:
    """Ball-sum evaluation of ``p_{t,n}(x)``; every term is non-negative."""
    t = _check_time(t)
    p, n, a = params.p, params.n, params.alpha
    terms = [p ** (-n) * -math.expm1(-t * p ** (a * (-n + 1)))]
    for i, w in _ball_weights(params, t).items():
        terms.append(w * ball_integral(x, i, params))
    return math.fsum(terms)


def density_closed_form_table(params: GridParams, t: float) -> np.ndarray:
    """Vectorised ball-sum route over every residue ``u``."""
    t = _check_time(t)
    p, n, a = params.p, params.n, params.alpha
    r = norm_table(params)
    out = np.full(params.M, p ** (-n) * -math.expm1(-t * p ** (a * (-n + 1))))
    for i, w in sorted(_ball_weights(params, t).items()):
        out += np.where(r <= float(p) ** (-i), w * float(p) ** i, 0.0)
    return out


def _tail_bound(p: int, alpha: float, t: float, lo: float, hi: float) -> float:
    """``t * int_lo^hi exp(-t y) y^(1/alpha) dy`` via the regularised gamma function."""
    s = 1.0 + 1.0 / alpha
    scale = t ** (-1.0 / alpha) * gamma(s)
    if math.isinf(hi):
        return scale * gammaincc(s, t * lo)
    return scale * (gammainc(s, t * hi) - gammainc(s, t * lo))


def _series_term(p: int, alpha: float, t: float, i: int) -> float:
    return _exp_diff(t * p ** (alpha * i), t * p ** (alpha * (i + 1))) * float(p) ** i


def density_limit_bracket(
    p: int, alpha: float, t: float, norm_value: float, tail_tol: float = 1e-14
) -> tuple[float, float, int]:
    """Partial sum, certified tail bound and term count for ``p_t(x)``.

    ``norm_value`` is ``|x|`` (a power of p) or 0.  The true value lies in
    ``[partial, partial + tail]``.
    """
    t = _check_time(t)
    if not tail_tol > 0:
        raise ValueError("tail_tol must be positive")
    if norm_value == 0:
        top = None
    else:
        m = round(math.log(norm_value, p))
        if not math.isclose(float(p) ** m, norm_value, rel_tol=1e-12):
            raise ValueError(f"|x| = {norm_value} is not a power of {p}")
        top = -m

    # upper end: i = top for x != 0, else extend until the upper tail is small
    if top is None:
        hi = max(0, math.ceil(math.log(max(1.0 / t, 1.0), p) / alpha))
        while _tail_bound(p, alpha, t, float(p) ** (alpha * (hi + 1)), math.inf) > tail_tol / 2:
            hi += 1
    else:
        hi = top
    lo = min(hi, 0)
    while _tail_bound(p, alpha, t, 0.0, float(p) ** (alpha * lo)) > tail_tol / 2:
        lo -= 1
    partial = math.fsum(_series_term(p, alpha, t, i) for i in range(lo, hi + 1))
    tail = _tail_bound(p, alpha, t, 0.0, float(p) ** (alpha * lo))
    if top is None:
        tail += _tail_bound(p, alpha, t, float(p) ** (alpha * (hi + 1)), math.inf)
    return partial, tail, hi - lo + 1


def density_limit(p: int, alpha: float, t: float, norm_value: float, tail_tol: float = 1e-14) -> float:
    """Infinite-level density ``p_t(x)`` for ``|x| = norm_value``."""
    partial, _, _ = density_limit_bracket(p, alpha, t, norm_value, tail_tol)
    return partial


def convolve(a: DensityFamily, b: DensityFamily) -> GridFunction:
    if a.params != b.params:
        raise GridError(f"incompatible grids: {a.params} vs {b.params}")
    return _convolve(a.values, b.values)


def sup_bound_report(p: int, alpha: float, t: float, levels) -> list[dict]:
    """Max of ``p_{t,n}`` per level, where it sits, and a boundedness flag."""
    rows = []
    for n in levels:
        dens = density_spectral(GridParams(p, n, alpha), t)
        vals = dens.real
        rows.append({"n": n, "max": float(vals.max()), "argmax": int(np.argmax(vals))})
    bound = density_limit(p, alpha, t, 0.0)
    for row in rows:
        # p_{t,n}(0) <= first term + p_t(0) since every dropped series term is >= 0
        params = GridParams(p, row["n"], alpha)
        slack = params.mass + math.exp(-t * p ** (alpha * row["n"])) * p ** row["n"]
        row["bounded"] = row["max"] <= bound + slack
    return rows
