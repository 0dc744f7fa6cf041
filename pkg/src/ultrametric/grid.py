"""Exact arithmetic on the finite p-adic grid X_n = B_n / B_{-n}.

A point of X_n is stored as a residue ``u`` modulo ``M = p**(2n)`` and stands
for the p-adic number ``x = u * p**(-n)``.  Addition on X_n is addition of
residues, and the rank-zero character of Q_p evaluated at a product of two
grid points is ``exp(2*pi*i * (u*v mod M) / M)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
import math

import numpy as np

__all__ = [
    "GridError",
    "GridParams",
    "GridPoint",
    "HaarWeight",
    "add",
    "neg",
    "norm",
    "valuation",
    "character_phase",
    "ball_integral",
    "rational_norm",
    "norm_table",
]

# constructor contract: M must fit a signed 128-bit integer
_MAX_MODULUS = 2**127 - 1


class GridError(ValueError):
    """Raised for invalid grid parameters or incompatible grid points."""


def _is_prime(p: int) -> bool:
    if p < 2:
        return False
    if p < 4:
        return True
    if p % 2 == 0:
        return False
    return all(p % d for d in range(3, math.isqrt(p) + 1, 2))


@dataclass(frozen=True)
class GridParams:
    """Prime ``p``, level ``n`` and Vladimirov exponent ``alpha``."""

    p: int
    n: int
    alpha: float = 1.0
    M: int = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if isinstance(self.p, bool) or not isinstance(self.p, (int, np.integer)):
            raise GridError(f"p must be an integer, got {self.p!r}")
        if not _is_prime(int(self.p)):
            raise GridError(f"p must be prime, got {self.p}")
        if isinstance(self.n, bool) or not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise GridError(f"level n must be a positive integer, got {self.n!r}")
        if not (self.alpha > 0 and math.isfinite(self.alpha)):
            raise GridError(f"alpha must be a positive real, got {self.alpha!r}")
        M = int(self.p) ** (2 * int(self.n))
        if M > _MAX_MODULUS:
            raise GridError(f"modulus p^(2n) = {self.p}^{2 * self.n} overflows 128 bits")
        object.__setattr__(self, "p", int(self.p))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "alpha", float(self.alpha))
        object.__setattr__(self, "M", M)

    @property
    def haar(self) -> "HaarWeight":
        return HaarWeight(float(self.p) ** (-self.n), float(self.p) ** self.n)

    @property
    def mass(self) -> float:
        """Haar mass ``p**-n`` of a single grid point."""
        return float(self.p) ** (-self.n)

    def point(self, u: int) -> "GridPoint":
        return GridPoint(u % self.M, self)

    def points(self):
        return (GridPoint(u, self) for u in range(self.M))

    def from_rational(self, x: Fraction | int) -> "GridPoint":
        """Grid representative of a rational ``x`` with ``|x| <= p**n``.

        The part of ``x`` inside B_{-n} is discarded, as in the quotient map.
        """
        x = Fraction(x)
        if rational_norm(x, self.p) > float(self.p) ** self.n:
            raise GridError(f"{x} lies outside the ball B_{self.n}")
        y = x * self.p**self.n
        # y is a p-adic integer: reduce numerator * denominator^{-1} mod M
        return GridPoint(y.numerator * pow(y.denominator, -1, self.M) % self.M, self)


@dataclass(frozen=True)
class HaarWeight:
    mass_per_point: float
    total_mass: float


@dataclass(frozen=True, order=True)
class GridPoint:
    """Residue ``u`` in [0, M) representing ``x = u * p**(-n)``."""

    u: int
    params: GridParams = field(compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.u < self.params.M:
            raise GridError(f"residue {self.u} outside [0, {self.params.M})")
        object.__setattr__(self, "u", int(self.u))

    def __add__(self, other: "GridPoint") -> "GridPoint":
        return add(self, other)

    def __neg__(self) -> "GridPoint":
        return neg(self)

    def __sub__(self, other: "GridPoint") -> "GridPoint":
        return add(self, neg(other))

    def __hash__(self) -> int:
        return hash((self.u, self.params))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, GridPoint):
            return NotImplemented
        return self.u == other.u and self.params == other.params

    @property
    def value(self) -> Fraction:
        """The canonical representative as an exact rational."""
        return Fraction(self.u, self.params.p**self.params.n)

    def digits(self) -> list[int]:
        """Base-p digits ``a_{-n}, ..., a_{n-1}`` of the canonical representative."""
        p, u = self.params.p, self.u
        out = []
        for _ in range(2 * self.params.n):
            u, d = divmod(u, p)
            out.append(d)
        return out

    def norm(self) -> float:
        return norm(self, self.params)


def _check_same(a: GridPoint, b: GridPoint) -> None:
    if a.params != b.params:
        raise GridError(f"incompatible grids: {a.params} vs {b.params}")


def add(a: GridPoint, b: GridPoint) -> GridPoint:
    _check_same(a, b)
    return GridPoint((a.u + b.u) % a.params.M, a.params)


def neg(a: GridPoint) -> GridPoint:
    return GridPoint((a.params.M - a.u) % a.params.M, a.params)


def _int_valuation(u: int, p: int) -> int:
    v = 0
    while u % p == 0:
        u //= p
        v += 1
    return v


def valuation(pt: GridPoint, params: GridParams | None = None) -> float:
    """p-adic valuation of ``x``; ``inf`` for the zero point."""
    params = params or pt.params
    if pt.u == 0:
        return math.inf
    return _int_valuation(pt.u, params.p) - params.n


def norm(pt: GridPoint, params: GridParams | None = None) -> float:
    """Canonical absolute value ``|x|_p`` of the grid point."""
    params = params or pt.params
    if pt.u == 0:
        return 0.0
    return float(params.p) ** (params.n - _int_valuation(pt.u, params.p))


def rational_norm(x: Fraction | int, p: int) -> float:
    x = Fraction(x)
    if x == 0:
        return 0.0
    v = _int_valuation(abs(x.numerator), p) - _int_valuation(x.denominator, p)
    return float(p) ** (-v)


def character_phase(a: GridPoint, b: GridPoint, params: GridParams | None = None) -> int:
    """Phase ``k`` with ``chi(x*y) = exp(2*pi*i*k/M)``."""
    _check_same(a, b)
    params = params or a.params
    return (a.u * b.u) % params.M


def ball_integral(x: GridPoint | Fraction | int, i: int, params: GridParams | None = None) -> float:
    """Integral of ``xi -> chi(x*xi)`` over the ball B_i of radius ``p**i``.

    Equals ``p**i`` when ``|x| <= p**-i`` and vanishes otherwise.
    """
    if isinstance(x, GridPoint):
        params = params or x.params
        nx = norm(x, params)
        p = params.p
    else:
        if params is None:
            raise GridError("params are required for a rational point")
        p = params.p
        nx = rational_norm(x, p)
    return float(p) ** i if nx <= float(p) ** (-i) else 0.0


@lru_cache(maxsize=64)
def _norm_table(params: GridParams) -> np.ndarray:
    p, n, M = params.p, params.n, params.M
    out = np.zeros(M)
    # |u p^-n| = p^(n-v): fill by valuation shells, from coarse to fine
    for v in range(2 * n):
        out[:: p**v] = float(p) ** (n - v)
    out[0] = 0.0
    out.flags.writeable = False
    return out


def norm_table(params: GridParams) -> np.ndarray:
    """``|x|`` for every residue ``u`` in ``range(M)`` (read-only array)."""
    return _norm_table(params)
