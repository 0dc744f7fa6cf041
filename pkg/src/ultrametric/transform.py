"""Finite Fourier transform on L^2(X_n).

``(F_n f)(u) = p**-n * sum_v f(v) * exp(-2*pi*i*u*v/M)``, a length-M cyclic DFT
scaled by the Haar mass of a point.  With this scaling F_n is unitary for the
Haar-weighted inner product.  All phases are exact integers ``k mod M`` looked
up in a single per-grid twiddle table.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Literal

import numpy as np

from .grid import GridError, GridParams, norm_table

__all__ = [
    "GridFunction",
    "twiddles",
    "forward",
    "inverse",
    "direct_transform",
    "fast_transform",
    "convolve",
    "FAST_THRESHOLD",
]

Direction = Literal["forward", "inverse"]

# M above which forward/inverse switch to the radix-p path
FAST_THRESHOLD = 512


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Complex function on X_n; ``values[u]`` is the value at ``u * p**-n``."""

    params: GridParams
    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.array(self.values, dtype=complex)
        if vals.shape != (self.params.M,):
            raise GridError(f"expected {self.params.M} values, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @classmethod
    def from_callable(cls, params: GridParams, f: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Restrict a function of the residue array ``u`` to the grid."""
        return cls(params, f(np.arange(params.M)))

    @classmethod
    def from_norm(cls, params: GridParams, f: Callable[[np.ndarray], np.ndarray]) -> "GridFunction":
        """Radial function ``x -> f(|x|)`` sampled on the grid."""
        return cls(params, f(norm_table(params)))

    @classmethod
    def delta(cls, params: GridParams, u: int = 0) -> "GridFunction":
        vals = np.zeros(params.M, dtype=complex)
        vals[u % params.M] = 1.0
        return cls(params, vals)

    @classmethod
    def constant(cls, params: GridParams, c: complex = 1.0) -> "GridFunction":
        return cls(params, np.full(params.M, c, dtype=complex))

    @property
    def real(self) -> np.ndarray:
        return self.values.real

    def inner(self, other: "GridFunction") -> complex:
        self._check(other)
        return complex(self.params.mass * np.vdot(other.values, self.values))

    def l2_norm(self) -> float:
        return float(np.sqrt(self.params.mass * np.sum(np.abs(self.values) ** 2)))

    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def integral(self) -> complex:
        return complex(self.params.mass * self.values.sum())

    def _check(self, other: "GridFunction") -> None:
        if self.params != other.params:
            raise GridError(f"incompatible grids: {self.params} vs {other.params}")

    def __add__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.params, self.values + other.values)

    def __sub__(self, other: "GridFunction") -> "GridFunction":
        self._check(other)
        return GridFunction(self.params, self.values - other.values)

    def __mul__(self, c) -> "GridFunction":
        if isinstance(c, GridFunction):
            self._check(c)
            return GridFunction(self.params, self.values * c.values)
        return GridFunction(self.params, self.values * c)

    __rmul__ = __mul__

    def to_csv(self, path: str | Path) -> None:
        """Write ``u,re,im`` rows in increasing ``u`` with round-trip precision."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["u", "re", "im"])
            for u, z in enumerate(self.values):
                w.writerow([u, repr(float(z.real)), repr(float(z.imag))])

    @classmethod
    def from_csv(cls, path: str | Path, params: GridParams) -> "GridFunction":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        if [int(r["u"]) for r in rows] != list(range(params.M)):
            raise GridError(f"{path}: rows must cover u = 0..{params.M - 1} in order")
        return cls(params, [complex(float(r["re"]), float(r["im"])) for r in rows])


@lru_cache(maxsize=32)
def twiddles(params: GridParams) -> np.ndarray:
    """``exp(2*pi*i*k/M)`` for ``k`` in ``range(M)``."""
    k = np.arange(params.M)
    table = np.exp(2j * np.pi * k / params.M)
    table.flags.writeable = False
    return table


def direct_transform(f: GridFunction, direction: Direction = "forward") -> GridFunction:
    """Reference O(M^2) transform."""
    params = f.params
    table = twiddles(params)
    sign = -1 if direction == "forward" else 1
    M = params.M
    if M > 2**31:
        raise GridError("direct transform needs M*M to fit in int64")
    out = np.empty(M, dtype=complex)
    u = np.arange(M, dtype=np.int64)
    # row at a time keeps memory at O(M)
    for row in range(M):
        out[row] = np.dot(table[(sign * row * u) % M], f.values)
    return GridFunction(params, params.mass * out)


def _radix_p(x: np.ndarray, p: int, M: int, table: np.ndarray, sign: int) -> np.ndarray:
    # x has shape (batch, m); decimation in time over the residue of the index mod p
    batch, m = x.shape
    if m == 1:
        return x
    sub = m // p
    parts = x.reshape(batch, sub, p).transpose(0, 2, 1).reshape(batch * p, sub)
    parts = _radix_p(parts, p, M, table, sign).reshape(batch, p, sub)
    k = np.arange(m, dtype=np.int64)
    r = np.arange(p, dtype=np.int64)
    tw = table[(sign * np.outer(r, k) * (M // m)) % M]  # (p, m)
    return np.einsum("rk,brk->bk", tw, np.tile(parts, (1, 1, p)))


def fast_transform(f: GridFunction, direction: Direction = "forward") -> GridFunction:
    """Radix-p decimation-in-time transform, O(M * 2n * p) operations."""
    params = f.params
    sign = -1 if direction == "forward" else 1
    out = _radix_p(f.values[None, :], params.p, params.M, twiddles(params), sign)[0]
    return GridFunction(params, params.mass * out)


def forward(f: GridFunction) -> GridFunction:
    if f.params.M > FAST_THRESHOLD:
        return fast_transform(f, "forward")
    return direct_transform(f, "forward")


def inverse(f: GridFunction) -> GridFunction:
    if f.params.M > FAST_THRESHOLD:
        return fast_transform(f, "inverse")
    return direct_transform(f, "inverse")


def convolve(f: GridFunction, g: GridFunction) -> GridFunction:
    """Haar convolution ``(f*g)(u) = p**-n * sum_v f(v) g(u - v)``.

    Direct sum on small grids; on large ones through the convolution theorem.
    """
    f._check(g)
    M = f.params.M
    if M > FAST_THRESHOLD:
        return inverse(forward(f) * forward(g))
    u = np.arange(M)
    idx = (u[:, None] - u[None, :]) % M
    return GridFunction(f.params, f.params.mass * (g.values[idx] @ f.values))
