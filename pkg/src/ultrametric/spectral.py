"""Finite Schrodinger operators H_n = P_n^alpha + V_n and their semigroups.

Convention: every operator is stored as its matrix in the point basis, i.e.
``(A f)(x) = sum_y A[x, y] f(y)``.  Because every point carries the same Haar
mass, self-adjointness on L^2(X_n) is plain matrix symmetry.  The propagator
is the integral kernel against Haar measure, so ``K = p**n * A`` for
``A = exp(-t H_n)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
import math
from typing import Sequence

import numpy as np
from scipy.linalg import subspace_angles

from .density import density_spectral
from .grid import GridParams, norm_table
from .transform import GridFunction, forward, inverse

__all__ = [
    "CapacityError",
    "StructureError",
    "DENSE_LIMIT",
    "PotentialSpec",
    "SpectralModel",
    "Propagator",
    "apply_vladimirov",
    "vladimirov_matrix",
    "materialize_hamiltonian",
    "heat_semigroup",
    "trotter_semigroup",
    "propagator",
    "generator_rates",
    "trace_convergence_report",
    "diagonal_decay_check",
    "eigen_convergence_report",
    "coarse_average",
]

DENSE_LIMIT = 4096
DEGENERACY_GAP = 1e-8
# eigenvalue differences below this are round-off, not a convergence signal
GAP_FLOOR = 1e-9


class CapacityError(RuntimeError):
    """Grid too large for a dense operator."""


class StructureError(AssertionError):
    """A materialised operator violates a structural property it must have."""


@dataclass(frozen=True)
class PotentialSpec:
    """Non-negative potential ``v``: ``scale * |x|**gamma`` or an explicit table."""

    kind: str = "power"
    gamma: float = 1.0
    scale: float = 1.0
    table: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("power", "table", "zero"):
            raise ValueError(f"unknown potential kind {self.kind!r}")
        if self.kind == "power" and not self.gamma > 0:
            raise ValueError("power potential needs gamma > 0")
        if self.scale < 0:
            raise ValueError("potential scale must be non-negative")
        if self.kind == "table":
            if self.table is None:
                raise ValueError("table potential needs values")
            if min(self.table) < 0:
                raise ValueError("potential values must be non-negative")

    @classmethod
    def zero(cls) -> "PotentialSpec":
        return cls(kind="zero")

    @classmethod
    def power(cls, gamma: float, scale: float = 1.0) -> "PotentialSpec":
        return cls(kind="power", gamma=gamma, scale=scale)

    @classmethod
    def from_table(cls, values: Sequence[float]) -> "PotentialSpec":
        return cls(kind="table", table=tuple(float(v) for v in values))

    def scaled(self, c: float) -> "PotentialSpec":
        return PotentialSpec(self.kind, self.gamma, self.scale * c, self.table)

    def values(self, params: GridParams) -> np.ndarray:
        """``v_n``, the restriction of ``v`` to X_n."""
        if self.kind == "zero":
            return np.zeros(params.M)
        if self.kind == "power":
            return self.scale * norm_table(params) ** self.gamma
        if len(self.table) != params.M:
            raise ValueError(f"potential table has {len(self.table)} entries, grid has {params.M}")
        return self.scale * np.asarray(self.table)

    def sphere_inf(self, params: GridParams) -> np.ndarray:
        """``v*(x) = min over |y| = |x|`` of ``v_n(y)``, per grid point."""
        v = self.values(params)
        r = norm_table(params)
        out = np.empty_like(v)
        for radius in np.unique(r):
            mask = r == radius
            out[mask] = v[mask].min()
        return out


def _guard(params: GridParams, limit: int = DENSE_LIMIT) -> None:
    if params.M > limit:
        raise CapacityError(f"M = {params.M} exceeds the dense-storage guard {limit}")


def apply_vladimirov(f: GridFunction, params: GridParams | None = None) -> GridFunction:
    """Matrix-free ``P_n^alpha f = F_n^{-1}(|xi|^alpha F_n f)``."""
    params = params or f.params
    symbol = norm_table(params) ** params.alpha
    return inverse(forward(f) * symbol)


def _vladimirov_kernel(params: GridParams) -> np.ndarray:
    # P[x, y] = g(x - y), g = p^-n * F_n^{-1}(|xi|^alpha)
    sym = GridFunction.from_norm(params, lambda r: r**params.alpha)
    return params.mass * inverse(sym).values


def vladimirov_matrix(params: GridParams, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Dense point-basis matrix of ``P_n^alpha``."""
    _guard(params, limit)
    g = _vladimirov_kernel(params)
    if np.abs(g.imag).max() > 1e-12 * max(1.0, np.abs(g).max()):
        raise StructureError("Vladimirov kernel is not real")
    u = np.arange(params.M)
    return g.real[(u[:, None] - u[None, :]) % params.M]


@dataclass(frozen=True, eq=False)
class SpectralModel:
    """Dense ``H_n`` with its eigendecomposition (eigenvalues ascending)."""

    params: GridParams
    potential: PotentialSpec
    H: np.ndarray
    eigenvalues: np.ndarray
    # Euclidean-orthonormal columns; Haar-orthonormal eigenfunctions are p^{n/2} times these
    vectors: np.ndarray = field(repr=False)

    @cached_property
    def eigenfunctions(self) -> np.ndarray:
        """Columns normalised so that ``p**-n * sum_u e_i(u) e_j(u) = delta_ij``."""
        return self.vectors * self.params.p ** (self.params.n / 2)

    def trace(self, t: float) -> float:
        return math.fsum(np.exp(-t * self.eigenvalues))


@dataclass(frozen=True, eq=False)
class Propagator:
    params: GridParams
    t: float
    kernel: np.ndarray

    def apply(self, f: GridFunction) -> GridFunction:
        return GridFunction(self.params, self.params.mass * (self.kernel @ f.values))

    def trace(self) -> float:
        return float(self.params.mass * math.fsum(np.diag(self.kernel)))


def materialize_hamiltonian(
    params: GridParams, potential: PotentialSpec, limit: int = DENSE_LIMIT
) -> SpectralModel:
    P = vladimirov_matrix(params, limit)
    H = P + np.diag(potential.values(params))
    asym = np.abs(H - H.T).max()
    if asym > 1e-12 * max(1.0, np.abs(H).max()):
        raise StructureError(f"H_n not symmetric (residue {asym:.3e})")
    H = 0.5 * (H + H.T)
    lam, vec = np.linalg.eigh(H)
    return SpectralModel(params, potential, H, lam, vec)


def heat_semigroup(model: SpectralModel, t: float) -> np.ndarray:
    """Point-basis matrix of ``exp(-t H_n)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    if t == 0:
        return np.eye(model.params.M)
    V = model.vectors
    return (V * np.exp(-t * model.eigenvalues)) @ V.T


def _free_heat_matrix(params: GridParams, t: float) -> np.ndarray:
    # exp(-t P) f = p_{t,n} * f, so A[x, y] = p^-n p_{t,n}(x - y)
    dens = density_spectral(params, t).real
    u = np.arange(params.M)
    return params.mass * dens[(u[:, None] - u[None, :]) % params.M]


def trotter_semigroup(model: SpectralModel, t: float, N: int) -> np.ndarray:
    """``(exp(-t P/N) exp(-t V/N))**N`` with the kinetic factor as a convolution."""
    if N < 1:
        raise ValueError("N must be >= 1")
    step = _free_heat_matrix(model.params, t / N) * np.exp(-t * model.potential.values(model.params) / N)[None, :]
    return np.linalg.matrix_power(step, N)


def propagator(model: SpectralModel, t: float) -> Propagator:
    if not t > 0:
        raise ValueError("t must be positive")
    return Propagator(model.params, float(t), model.params.p**model.params.n * heat_semigroup(model, t))


def generator_rates(params: GridParams, limit: int = DENSE_LIMIT) -> np.ndarray:
    """Q-matrix ``-P_n^alpha`` of the grid random walk."""
    L = -vladimirov_matrix(params, limit)
    off = L - np.diag(np.diag(L))
    if off.min() < -1e-12:
        raise StructureError(f"negative jump rate {off.min():.3e}")
    L = np.where(np.eye(params.M, dtype=bool), L, np.clip(L, 0.0, None))
    rows = np.abs(L.sum(axis=1)).max()
    if rows > 1e-10:
        raise StructureError(f"generator rows do not sum to zero (max {rows:.3e})")
    return L


def _strictly_decreasing(xs: Sequence[float], floor: float = 0.0) -> bool:
    # differences already at round-off level count as converged
    return all(b < a or (a <= floor and b <= floor) for a, b in zip(xs, xs[1:]))


def trace_convergence_report(
    p: int, alpha: float, potential: PotentialSpec, t: float, levels: Sequence[int]
) -> dict:
    """Traces of ``exp(-t H_n)`` per level, successive differences and diagonal tail mass."""
    rows, tails = [], {}
    prev = None
    for n in levels:
        params = GridParams(p, n, alpha)
        model = materialize_hamiltonian(params, potential)
        tr = model.trace(t)
        rows.append({"n": n, "t": t, "trace": tr, "diff": math.nan if prev is None else abs(tr - prev)})
        prev = tr
        K = propagator(model, t)
        diag = np.diag(K.kernel)
        r = norm_table(params)
        for m in range(-n + 1, n + 1):
            tails.setdefault(m, {})[n] = float(params.mass * diag[r >= float(p) ** m].sum())
    diffs = [r["diff"] for r in rows[1:]]
    ms = sorted(tails)
    sup_tail = [max(tails[m].values()) for m in ms]
    return {
        "rows": rows,
        "tails": tails,
        "diffs_decreasing": _strictly_decreasing(diffs),
        "sup_tail": dict(zip(ms, sup_tail)),
        "tail_decreasing": all(b <= a for a, b in zip(sup_tail, sup_tail[1:]))
        and all(
            tails[m2][n] <= tails[m1][n] + 1e-15
            for m1, m2 in zip(ms, ms[1:])
            for n in tails[m2]
            if n in tails[m1]
        ),
    }


def diagonal_decay_check(model: SpectralModel, t: float, k: float) -> dict:
    """Largest ratio ``K(x,x) / (exp(-t v*(x)/2) + |x|**-k)`` over the grid.

    At ``x = 0`` the ``|x|**-k`` branch is dropped, leaving the bound 1.
    """
    params = model.params
    if not 0 < k < params.alpha:
        raise ValueError(f"k must lie in (0, alpha) = (0, {params.alpha})")
    K = propagator(model, t).kernel
    diag = np.diag(K)
    r = norm_table(params)
    with np.errstate(divide="ignore"):
        power = np.where(r > 0, r ** (-k), 0.0)
    bound = np.exp(-0.5 * t * model.potential.sphere_inf(params)) + power
    ratio = diag / bound
    p0 = density_spectral(params, t)(0)
    return {
        "max_ratio": float(ratio.max()),
        "argmax": int(np.argmax(ratio)),
        "diag_max": float(diag.max()),
        "p_tn_0": p0,
        "below_free_kernel": bool(np.all(diag <= p0 * (1 + 1e-12))),
    }


def coarse_average(values: np.ndarray, fine: GridParams, coarse: GridParams) -> np.ndarray:
    """Average a fine-grid function over each coarse ball ``x + B_{-n0}`` inside ``B_{n0}``."""
    p, n, n0 = fine.p, fine.n, coarse.n
    if coarse.p != p or n0 > n:
        raise ValueError("coarse grid must share p and have a lower level")
    step = p ** (n - n0)
    k = np.arange(step)
    u0 = np.arange(coarse.M)
    idx = (step * (u0[:, None] + k[None, :] * coarse.M)) % fine.M
    return values[idx].mean(axis=1)


def _align_sign(vec: np.ndarray, ref: np.ndarray) -> np.ndarray:
    # sign fixed by the largest entry on the coarsest common grid
    j = int(np.argmax(np.abs(ref)))
    return -vec if ref[j] < 0 else vec


def eigen_convergence_report(
    p: int,
    alpha: float,
    potential: PotentialSpec,
    levels: Sequence[int],
    count: int = 5,
    compact_radius: float | None = None,
) -> dict:
    """Lowest eigenvalues per level and level-to-level eigenfunction differences."""
    levels = list(levels)
    models = [materialize_hamiltonian(GridParams(p, n, alpha), potential) for n in levels]
    if count > models[-1].params.M:
        raise ValueError("count exceeds the size of the finest grid")
    coarsest = models[0].params
    radius = compact_radius if compact_radius is not None else float(p) ** coarsest.n
    # small grids contribute only the eigenvalues they have
    spectrum = [m.eigenvalues[:count].copy() for m in models]
    gaps = {
        j: [abs(b[j] - a[j]) for a, b in zip(spectrum, spectrum[1:]) if len(a) > j]
        for j in range(count)
    }

    # clusters of near-equal eigenvalues at the finest level
    lam = spectrum[-1]
    degenerate = {j for j in range(count) for i in range(count) if i != j and abs(lam[i] - lam[j]) < DEGENERACY_GAP}

    # ground state on the compact ball, level to level
    ground = []
    for m in models:
        f = m.eigenfunctions[:, 0]
        ground.append(_align_sign(f, coarse_average(f, m.params, coarsest)))
    positive = all(bool(np.all(g > 0)) for g in ground)
    sup_diffs = []
    for (ma, fa), (mb, fb) in zip(zip(models, ground), zip(models[1:], ground[1:])):
        ca = coarse_average(fa, ma.params, ma.params)
        cb = coarse_average(fb, mb.params, ma.params)
        mask = norm_table(ma.params) <= radius
        sup_diffs.append(float(np.abs(ca - cb)[mask].max()))

    # excited states on the coarser grid of each pair: vector-wise when isolated,
    # principal angles for clusters
    excited = {}
    for j in range(1, count):
        diffs = []
        for ma, mb in zip(models, models[1:]):
            if ma.params.M <= j:
                continue
            cluster = [i for i in range(count) if abs(lam[i] - lam[j]) < DEGENERACY_GAP]
            if len(cluster) > 1:
                A = np.stack([coarse_average(ma.eigenfunctions[:, i], ma.params, ma.params) for i in cluster], 1)
                B = np.stack([coarse_average(mb.eigenfunctions[:, i], mb.params, ma.params) for i in cluster], 1)
                diffs.append(float(np.sin(subspace_angles(A, B)).max()))
            else:
                ca = coarse_average(ma.eigenfunctions[:, j], ma.params, ma.params)
                cb = coarse_average(mb.eigenfunctions[:, j], mb.params, ma.params)
                diffs.append(float(np.abs(_align_sign(ca, ca) - _align_sign(cb, cb)).max()))
        excited[j] = {"degenerate": j in degenerate, "diffs": diffs}

    return {
        "levels": levels,
        "spectrum": [s.tolist() for s in spectrum],
        "gaps": gaps,
        "gaps_decreasing": all(_strictly_decreasing(g, GAP_FLOOR) for g in gaps.values()),
        "ground_positive": positive,
        "ground_sup_diffs": sup_diffs,
        "ground_decreasing": _strictly_decreasing(sup_diffs),
        "degenerate": sorted(degenerate),
        "excited": excited,
        "eigenfunctions": [(m.params.n, g) for m, g in zip(models, ground)],
    }
