"""Acceptance criteria 1-15, each at its stated tolerance and runtime budget.

Run under pytest (one test per criterion; a summary block lists every
criterion) or directly with ``python3 tests/test_acceptance.py``.
"""

from __future__ import annotations

from dataclasses import dataclass
import itertools
import json
import math
from pathlib import Path
import sys
import tempfile
import time

import numpy as np
import pytest
from scipy.stats import chisquare

from ultrametric import cli
from ultrametric.density import (
    convolve,
    density_closed_form_table,
    density_limit,
    density_spectral,
)
from ultrametric.grid import GridParams, norm_table
from ultrametric.spectral import (
    PotentialSpec,
    eigen_convergence_report,
    generator_rates,
    heat_semigroup,
    materialize_hamiltonian,
    propagator,
    trace_convergence_report,
    trotter_semigroup,
)
from ultrametric.stochastic import (
    SeedSpec,
    centsov_check,
    derive_stream,
    feynman_kac_estimate,
    increment_sampler,
    modulus_stats,
    moment_check,
    sample_bridges,
)
from ultrametric.transform import GridFunction, convolve as f_convolve, direct_transform, fast_transform, forward, inverse

CONFIGS = Path(__file__).resolve().parent.parent / "configs"
V = PotentialSpec.power(1.0)
SWEEP = list(itertools.product((2, 3), (1, 2, 3, 4), (0.5, 1.0, 2.0)))
TIMES = (0.01, 0.1, 1.0, 10.0)


@dataclass(frozen=True)
class Criterion:
    number: int
    title: str
    budget_s: float | None
    check: object


CRITERIA: dict[int, Criterion] = {}


def criterion(number: int, title: str, budget_s: float | None):
    def register(fn):
        CRITERIA[number] = Criterion(number, title, budget_s, fn)
        return fn

    return register


@criterion(1, "density positivity and normalization", 10)
def c1():
    worst_min, worst_mass = math.inf, 0.0
    for (p, n, a), t in itertools.product(SWEEP, TIMES):
        fam = density_spectral(GridParams(p, n, a), t)
        worst_min = min(worst_min, float(fam.real.min()))
        worst_mass = max(worst_mass, abs(fam.mass() - 1.0))
    return worst_min > 0 and worst_mass <= 1e-12, f"min density {worst_min:.3e}, max |mass-1| {worst_mass:.2e} (tol 1e-12)"


@criterion(2, "two-route density agreement", 10)
def c2():
    worst = 0.0
    for (p, n, a), t in itertools.product(SWEEP, TIMES):
        params = GridParams(p, n, a)
        worst = max(worst, float(np.abs(density_spectral(params, t).real - density_closed_form_table(params, t)).max()))
    return worst < 1e-12, f"max |spectral - ball sum| {worst:.2e} (tol 1e-12)"


@criterion(3, "semigroup law", 10)
def c3():
    rng = np.random.default_rng(20240503)
    worst = 0.0
    for p, n, a in SWEEP:
        params = GridParams(p, n, a)
        for t, s in np.exp(rng.uniform(math.log(0.01), math.log(10.0), size=(10, 2))):
            lhs = convolve(density_spectral(params, t), density_spectral(params, s)).values
            worst = max(worst, float(np.abs(lhs - density_spectral(params, t + s).real).max()))
    return worst < 1e-10, f"max |p_t * p_s - p_(t+s)| {worst:.2e} over {len(SWEEP) * 10} pairs (tol 1e-10)"


@criterion(4, "transform unitarity, convolution theorem, fast path", 5)
def c4():
    rng = np.random.default_rng(4)
    grids = [GridParams(2, 1), GridParams(2, 2), GridParams(2, 3), GridParams(2, 4), GridParams(3, 1), GridParams(3, 2), GridParams(5, 1), GridParams(7, 1)]
    unit = conv = 0.0
    for params in grids:
        for _ in range(5):
            f, g = (GridFunction(params, rng.normal(size=params.M) + 1j * rng.normal(size=params.M)) for _ in range(2))
            # unit L2(Haar) norm, so absolute and relative errors coincide
            f, g = f * (1 / f.l2_norm()), g * (1 / g.l2_norm())
            Ff, Fg = forward(f), forward(g)
            unit = max(unit, abs(Ff.l2_norm() - 1.0), abs(Ff.inner(Fg) - f.inner(g)), float(np.abs(inverse(Ff).values - f.values).max()))
            conv = max(conv, float(np.abs(forward(f_convolve(f, g)).values - (Ff * Fg).values).max()))
    fast = 0.0
    for params in (GridParams(2, 3), GridParams(3, 2)):
        f = GridFunction(params, rng.normal(size=params.M) + 1j * rng.normal(size=params.M))
        for d in ("forward", "inverse"):
            fast = max(fast, float(np.abs(fast_transform(f, d).values - direct_transform(f, d).values).max()))
    ok = unit <= 1e-12 and conv <= 1e-11 and fast <= 1e-12
    return ok, f"unitarity {unit:.1e} (1e-12), convolution {conv:.1e} (1e-11), fast vs direct at M=64,81 {fast:.1e} (1e-12)"


@criterion(5, "level convergence of densities on |x| <= 4", 5)
def c5():
    sups = []
    for n in (2, 3, 4):
        params = GridParams(2, n, 1.0)
        r = norm_table(params)
        vals = density_spectral(params, 1.0).real
        limits = {x: density_limit(2, 1.0, 1.0, x, tail_tol=1e-12) for x in np.unique(r[r <= 4])}
        sups.append(max(abs(vals[u] - limits[r[u]]) for u in np.flatnonzero(r <= 4)))
    monotone = all(b <= a for a, b in zip(sups, sups[1:]))
    ok = monotone and sups[-1] < 1e-3
    return ok, f"sup diffs n=2..4: {', '.join(f'{s:.3e}' for s in sups)}; non-increasing={monotone}; n=4 value vs 1e-3"


@criterion(6, "Q-matrix structure of the generator", 10)
def c6():
    worst_off, worst_row = 0.0, 0.0
    for p, n, a in itertools.product((2, 3), (1, 2, 3), (0.5, 1.0, 2.0)):
        L = generator_rates(GridParams(p, n, a))
        off = L[~np.eye(L.shape[0], dtype=bool)]
        worst_off = min(worst_off, float(off.min()))
        worst_row = max(worst_row, float(np.abs(L.sum(axis=1)).max()))
    return worst_off >= -1e-12 and worst_row <= 1e-10, f"min off-diagonal {worst_off:.1e}, max |row sum| {worst_row:.1e}"


FK_PAIRS = [(0, 0), (0, 1), (0, 2), (1, 3), (4, 8), (2, 6), (5, 5), (3, 12), (15, 1)]


@criterion(7, "finite Feynman-Kac and Trotter order", 120)
def c7():
    params = GridParams(2, 2, 1.0)
    model = materialize_hamiltonian(params, V)
    K = propagator(model, 1.0).kernel
    zs = []
    for a, b in FK_PAIRS:
        est = feynman_kac_estimate(params, a, b, 1.0, 64, 100_000, V, SeedSpec(7, derive_stream("fk", a, b)))
        zs.append(abs(est.mean - K[a, b]) / est.stderr)
    exact = heat_semigroup(model, 1.0)
    errs = [np.linalg.norm(trotter_semigroup(model, 1.0, N) - exact, 2) for N in (32, 64, 128, 256)]
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    ok = max(zs) <= 3 and len(zs) >= 8 and all(1.7 <= q <= 2.3 for q in ratios)
    return ok, f"max z over {len(zs)} pairs {max(zs):.2f} (<= 3); Trotter ratios {', '.join(f'{q:.3f}' for q in ratios)}"


@criterion(8, "propagator identities", 30)
def c8():
    worst = {"symmetry": 0.0, "chapman_kolmogorov": 0.0, "trace": 0.0, "lower": 0.0, "upper": 0.0}
    for (p, n, a) in SWEEP:
        if n > 3:
            continue
        params = GridParams(p, n, a)
        model = materialize_hamiltonian(params, V)
        u = np.arange(params.M)
        diff = (u[None, :] - u[:, None]) % params.M
        for t in TIMES:
            K = propagator(model, t).kernel
            K2 = propagator(model, 2 * t).kernel
            free = density_spectral(params, t).real[diff]
            worst["symmetry"] = max(worst["symmetry"], float(np.abs(K - K.T).max()))
            worst["chapman_kolmogorov"] = max(worst["chapman_kolmogorov"], float(np.abs(params.mass * K @ K - K2).max()))
            worst["trace"] = max(worst["trace"], abs(params.mass * math.fsum(np.diag(K)) - model.trace(t)))
            worst["lower"] = max(worst["lower"], float(-K.min()))
            worst["upper"] = max(worst["upper"], float((K - free).max()))
    ok = all(v <= 1e-10 for v in worst.values())
    return ok, ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + " (tol 1e-10)"


@criterion(9, "moment bound: slope and uniform ratio", 10)
def c9():
    slopes, ratios = {}, {}
    for n in (2, 3, 4):
        params = GridParams(2, n, 2.0)
        slopes[n] = moment_check(params, 1.0, np.geomspace(1e-3, 1e-1, 21))["slope"]
        ratios[n] = moment_check(params, 1.0, np.geomspace(1e-3, 10.0, 41))["C_k"]
    spread = max(ratios.values()) / min(ratios.values()) - 1
    slope_ok = abs(slopes[4] - 0.5) <= 0.1
    ok = slope_ok and spread < 0.2
    detail = (
        f"slope on [1e-3,1e-1] at n=2,3,4: {', '.join(f'{s:.3f}' for s in slopes.values())} (target 0.5 +/- 0.1 at n=4); "
        f"max ratio on [1e-3,10]: {', '.join(f'{r:.3f}' for r in ratios.values())}, spread {spread:.1%} (< 20%)"
    )
    return ok, detail


@criterion(10, "Centsov factorization and bound", 10)
def c10():
    grid = np.linspace(0.1, 1.0, 10)  # 10^3 grid of time triples, 120 of them ordered
    fact, consts, holds = 0.0, [], True
    for n in (2, 3, 4):
        rep = centsov_check(GridParams(2, n, 2.0), 1.5, grid)
        fact = max(fact, rep["max_factorization_error"])
        consts.append(rep["D_k"])
        holds &= rep["bound_holds"]
    ok = fact <= 1e-12 and holds
    return ok, f"max |joint - product| {fact:.1e} (1e-12); D_k at n=2,3,4 {', '.join(f'{c:.4f}' for c in consts)}; bound holds={holds}"


@criterion(11, "trace convergence", 30)
def c11():
    rep = trace_convergence_report(2, 2.0, V, 1.0, [1, 2, 3, 4])
    diffs = [r["diff"] for r in rep["rows"][1:]]
    ok = rep["diffs_decreasing"] and rep["tail_decreasing"]
    return ok, f"trace diffs {', '.join(f'{d:.4e}' for d in diffs)}; tail mass decreasing in m uniformly={rep['tail_decreasing']}"


@criterion(12, "eigenvalue and eigenfunction convergence", 60)
def c12():
    rep = eigen_convergence_report(2, 2.0, V, [1, 2, 3, 4], count=5, compact_radius=2.0)
    ok = rep["gaps_decreasing"] and rep["ground_positive"] and rep["ground_decreasing"]
    return ok, (
        f"gaps decreasing={rep['gaps_decreasing']}; ground sup diffs on |x|<=2 "
        f"{', '.join(f'{d:.4f}' for d in rep['ground_sup_diffs'])}; ground positive={rep['ground_positive']}"
    )


def _pooled_chi2(counts, probs):
    expected = counts.sum() * probs
    keep = expected >= 5
    obs = np.append(counts[keep], counts[~keep].sum())
    exp = np.append(expected[keep], expected[~keep].sum())
    if exp[-1] < 5:
        obs, exp = obs[:-1], exp[:-1]
        obs[-1] += counts[~keep].sum()
        exp[-1] += expected[~keep].sum()
    return float(chisquare(obs, exp).pvalue)


@criterion(13, "sampler correctness", 60)
def c13():
    params = GridParams(2, 3, 1.0)
    sampler = increment_sampler(params, 0.25)
    draws = sampler.sample(SeedSpec(13, derive_stream("increments")).generator(), 1_000_000)
    prob = sampler.probabilities
    counts = np.bincount(draws, minlength=params.M)
    z = np.abs(counts - draws.size * prob) / np.sqrt(draws.size * prob * (1 - prob))
    a, b = 0, 5
    paths = sample_bridges(params, a, b, 1.0, 2, 100_000, SeedSpec(13, derive_stream("bridges")))
    endpoint = float((paths[:, -1] == b).mean())
    u = np.arange(params.M)
    w = density_spectral(params, 0.5).real[(u - a) % params.M] * density_spectral(params, 0.5).real[(b - u) % params.M]
    pval = _pooled_chi2(np.bincount(paths[:, 1], minlength=params.M), w / w.sum())
    ok = z.max() <= 4 and endpoint == 1.0 and pval >= 0.01
    return ok, f"max increment z {z.max():.2f} (<= 4); endpoint hit rate {endpoint:.0%}; midpoint chi2 p={pval:.3f} (>= 0.01)"


@criterion(14, "tightness diagnostic", 60)
def c14():
    deltas = [0.4, 0.2, 0.1, 0.05, 0.025]
    N, eta, rows, ok = 64, 1.0, [], True
    times = np.arange(N + 1) / N
    for n in (2, 3):
        params = GridParams(2, n, 1.0)
        paths = sample_bridges(params, 0, 0, 1.0, N, 10_000, SeedSpec(14, derive_stream("tightness", n)))
        probs = [float((modulus_stats(params, paths, times, d) > eta).mean()) for d in deltas]
        ok &= all(b <= a for a, b in zip(probs, probs[1:]))
        rows.append(f"n={n}: " + ", ".join(f"{p:.4f}" for p in probs))
    return ok, "P(m > 1) for delta = 0.4 .. 0.025; " + "; ".join(rows)


@criterion(15, "end-to-end determinism", None)
def c15():
    configs = sorted(CONFIGS.glob("*.json"))
    codes = {}
    with tempfile.TemporaryDirectory() as tmp:
        outs = []
        for run in ("a", "b"):
            out = Path(tmp) / run
            for cfg in configs:
                codes[cfg.stem] = cli.main(["run", "--config", str(cfg), "--strict", "--out", str(out / cfg.stem)])
            outs.append(out)
        files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
        same = [(outs[0] / f).read_bytes() == (outs[1] / f).read_bytes() for f in files]
        names = sorted(p.relative_to(outs[1]) for p in outs[1].rglob("*.csv"))
    ok = len(configs) == 11 and files == names and all(same) and all(c in (0, 1) for c in codes.values())
    return ok, f"{sum(same)}/{len(files)} CSV files byte-identical across two strict runs of {len(configs)} configs"


def evaluate(number: int) -> tuple[bool, str]:
    c = CRITERIA[number]
    start = time.perf_counter()
    passed, detail = c.check()
    elapsed = time.perf_counter() - start
    in_time = c.budget_s is None or elapsed < c.budget_s
    budget = "no budget" if c.budget_s is None else f"budget {c.budget_s:g}s"
    ok = bool(passed) and in_time
    line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {c.title}: {detail}; {elapsed:.2f}s ({budget})"
    return ok, line


@pytest.mark.acceptance
@pytest.mark.parametrize("number", sorted(CRITERIA))
def test_criterion(number, acceptance_log):
    ok, line = evaluate(number)
    acceptance_log.append(line)
    print(line)
    assert ok, line


if __name__ == "__main__":
    results = [evaluate(k) for k in sorted(CRITERIA)]
    for _, line in results:
        print(line)
    sys.exit(0 if all(ok for ok, _ in results) else 1)
