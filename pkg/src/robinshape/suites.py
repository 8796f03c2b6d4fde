"""Verification batteries behind the `verify` command.

Each suite returns a dict with "passed", CSV-ready "rows" (header first),
a text "summary", and optionally a "failing" payload for replay.  All
randomness flows through Philox keyed by the suite seed, so reruns with the
same configuration are byte-identical.
"""

from __future__ import annotations

import math

import numpy as np

from .model import IntegrandModel
from .pdesolve import SolverConfig, grid_robin_eigenvalue
from .radial import (RadialEigenvalueQuery, RadialSolution,
                     robin_eigenvalue_ball, shoot_eigenvalues)
from .sbvgrid import Grid, SbvField, ShapeMask, poincare_check, reduction_check


def _poincare_fields(rng, grid, trials):
    """Seeded 1d test fields: rectangular plateaus, smooth bumps, and
    piecewise-constant fields with flagged internal jumps."""
    n = grid.n
    for trial in range(trials):
        fam = ("rect", "bump", "jumpy")[int(rng.integers(0, 3))]
        length = int(rng.integers(3, n - 2))
        i0 = int(rng.integers(1, n - length))
        v = float(rng.uniform(0.2, 3.0))
        values = np.zeros(n)
        extra = []
        if fam == "rect":
            values[i0:i0 + length] = v
        elif fam == "bump":
            t = (np.arange(length) + 0.5) / length
            values[i0:i0 + length] = v * np.sin(math.pi * t)
        else:
            pieces = int(rng.integers(2, 5))
            cuts = sorted(set(int(c) for c in
                              rng.integers(1, length, size=pieces - 1)))
            lo = 0
            for cut in cuts + [length]:
                values[i0 + lo:i0 + cut] = float(rng.uniform(0.2, 3.0))
                if lo > 0:
                    extra.append((0, i0 + lo))
                lo = cut
        field = SbvField.from_values(grid, values, extra)
        yield trial, fam, field


def _cached_eig(cache, h):
    def eig(query):
        k = int(round(2.0 * query.R / h))
        lam = cache.get(k)
        if lam is None:
            return robin_eigenvalue_ball(query)
        return RadialSolution(lam, np.zeros((0, 2)), {"method": "cache"})
    return eig


def _poincare_eval(task):
    # module-level so worker processes can unpickle it
    n, values, extra, b, p, alpha, cache = task
    grid = Grid(1, n, 1.0 / n)
    field = SbvField.from_values(grid, np.asarray(values), extra)
    return poincare_check(field, b, p, alpha, _cached_eig(cache, grid.h))


def poincare_suite(trials: int = 1000, n: int = 128, seed: int = 20240501,
                   b: float = 1.0, p: float = 2.0, alpha: float = 2.0,
                   mesh_n: int = 768, min_ratio: float = 0.99,
                   eq_tol: float = 0.02, workers: int = 1) -> dict:
    """Ball lower bound on seeded discrete fields plus the equality case.

    With workers > 1 the per-field checks fan out to a process pool; results
    are collected by task index, so the output is identical either way."""
    grid = Grid(1, n, 1.0 / n)
    rng = np.random.Generator(np.random.Philox(key=seed))
    # one batched solve for every possible support size (the oracle cache)
    counts = np.arange(1, n + 1)
    radii = counts * grid.h / 2.0
    lams = shoot_eigenvalues(1, radii, np.full(n, b), mesh_n)
    cache = {int(k): float(l) for k, l in zip(counts, lams)}
    eig = _cached_eig(cache, grid.h)

    fields = list(_poincare_fields(rng, grid, trials))
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor
        tasks = [(n, f.values, sorted(f.jumps), b, p, alpha, cache)
                 for _, _, f in fields]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            ratios = list(pool.map(_poincare_eval, tasks, chunksize=64))
    else:
        ratios = [poincare_check(f, b, p, alpha, eig) for _, _, f in fields]

    rows = [("trial", "family", "m", "ratio")]
    min_seen = (np.inf, None, None)
    for (trial, fam, field), ratio in zip(fields, ratios):
        m = field.support_volume()
        rows.append((trial, fam, repr(m), repr(ratio)))
        if ratio < min_seen[0]:
            min_seen = (ratio, trial, field)

    # equality case: the sampled radial eigenfunction of the matched ball
    k = n // 2
    lam = cache[k]
    x = grid.centers()[:, 0]
    i0 = (n - k) // 2
    center = (x[i0] - grid.h / 2) + k * grid.h / 2
    values = np.zeros(n)
    values[i0:i0 + k] = np.cos(math.sqrt(lam) * (x[i0:i0 + k] - center))
    eq_field = SbvField.from_values(grid, values)
    eq_ratio = poincare_check(eq_field, b, p, alpha, eig)
    rows.append(("eq", "eigenfunction", repr(k * grid.h), repr(eq_ratio)))

    passed = (min_seen[0] >= min_ratio) and (abs(eq_ratio - 1.0) <= eq_tol)
    return {
        "name": "poincare",
        "passed": bool(passed),
        "rows": rows,
        "summary": (f"min ratio {min_seen[0]:.6f} over {trials} fields "
                    f"(floor {min_ratio}); eigenfunction ratio {eq_ratio:.6f} "
                    f"(tolerance {eq_tol})"),
        "failing": None if passed else min_seen[2],
    }


def reduction_suite(trials: int = 100, n: int = 64, seed: int = 20240502,
                    gap_floor: float = -1e-8, model: IntegrandModel | None = None) -> dict:
    """F(u) >= J({u != 0}) on random fields over random supports."""
    if model is None:
        model = IntegrandModel(p=2, q=2, L=1.0, c0=1.0, f=1.0, beta1=1.0,
                               normalization="energy")
    grid = Grid(1, n, 1.0 / n)
    rng = np.random.Generator(np.random.Philox(key=seed))
    rows = [("trial", "support_cells", "gap")]
    worst = (np.inf, None)
    for trial in range(trials):
        support = rng.random(n) < 0.5
        values = np.where(support, rng.uniform(0.2, 2.5, size=n), 0.0)
        field = SbvField.from_values(grid, values)
        gap = reduction_check(model, field, SolverConfig())
        rows.append((trial, int(np.count_nonzero(support)), repr(gap)))
        if gap < worst[0]:
            worst = (gap, field)
    passed = worst[0] >= gap_floor
    return {
        "name": "reduction",
        "passed": bool(passed),
        "rows": rows,
        "summary": f"min gap {worst[0]:.3e} over {trials} trials (floor {gap_floor:g})",
        "failing": None if passed else worst[1],
    }


def scaling_suite(rel_tol: float = 1e-6, mesh_shoot: int = 1024,
                  mesh_descent: int = 192, sweep_points: int = 20) -> dict:
    """Change-of-variables identity lam_{b,q}(tB) = t^-q lam_{b t^(q-1),q}(B)
    plus strict radius monotonicity of the eigenvalue."""
    rows = [("check", "d", "q", "t_or_R", "value", "reference", "rel_err")]
    worst = 0.0
    ok = True
    for d in (1, 2):
        for q in (2.0, 3.0):
            mesh = mesh_shoot if q == 2.0 else mesh_descent
            for t in (0.5, 2.0, 3.0):
                lt = robin_eigenvalue_ball(RadialEigenvalueQuery(
                    d=d, R=t, b=1.0, grad_exp=q, bdry_exp=q, denom_exp=q,
                    mesh_n=mesh)).lam
                lb = robin_eigenvalue_ball(RadialEigenvalueQuery(
                    d=d, R=1.0, b=t ** (q - 1.0), grad_exp=q, bdry_exp=q,
                    denom_exp=q, mesh_n=mesh)).lam
                ref = t ** (-q) * lb
                rel = abs(lt - ref) / abs(ref)
                worst = max(worst, rel)
                ok &= rel <= rel_tol
                rows.append(("identity", d, q, t, repr(lt), repr(ref), repr(rel)))
    for d in (1, 2):
        radii = np.linspace(0.3, 3.0, sweep_points)
        lams = shoot_eigenvalues(d, radii, np.ones(sweep_points), mesh_shoot)
        mono = bool(np.all(np.diff(lams) < 0))
        ok &= mono
        for R, lam in zip(radii, lams):
            rows.append(("monotone", d, 2.0, repr(float(R)), repr(float(lam)),
                         "", ""))
        rows.append(("monotone-strict", d, 2.0, "", str(mono), "", ""))
    return {
        "name": "scaling",
        "passed": bool(ok),
        "rows": rows,
        "summary": f"worst identity rel err {worst:.2e} (tol {rel_tol:g}); "
                   f"radius monotonicity {'holds' if ok else 'VIOLATED'}",
        "failing": None,
    }


def ball_minimality_suite(ns=(128, 256), b: float = 1.0, box: float = 1.5) -> dict:
    """Grid eigensolver comparison: the disc beats the square of equal area."""
    rows = [("n", "lambda_disc", "lambda_square", "margin")]
    margins = []
    for n in ns:
        grid = Grid(2, n, box / n)
        k = round(1.0 / grid.h)
        side = k * grid.h
        R = side / math.sqrt(math.pi)
        c = (box / 2.0, box / 2.0)
        i0 = (n - k) // 2
        sq = ShapeMask(grid, np.zeros((n, n), dtype=bool))
        sq.cells[i0:i0 + k, i0:i0 + k] = True
        disc = ShapeMask.disc(grid, c, R)
        lam_d, _ = grid_robin_eigenvalue(grid, disc, b)
        lam_s, _ = grid_robin_eigenvalue(grid, sq, b)
        margins.append(lam_s - lam_d)
        rows.append((n, repr(lam_d), repr(lam_s), repr(lam_s - lam_d)))
    m_ext = 2.0 * margins[-1] - margins[0]
    rows.append(("richardson", "", "", repr(m_ext)))
    consistent = abs(m_ext - margins[-1]) <= 0.5 * abs(margins[-1])
    passed = all(m > 0 for m in margins) and m_ext > 0 and consistent
    return {
        "name": "ball-minimality",
        "passed": bool(passed),
        "rows": rows,
        "summary": (f"margins {[round(m, 5) for m in margins]}, Richardson "
                    f"{m_ext:.5f}; disc {'<' if passed else 'NOT <'} square"),
        "failing": None,
    }


SUITES = {
    "poincare": poincare_suite,
    "reduction": reduction_suite,
    "scaling": scaling_suite,
    "ball-minimality": ball_minimality_suite,
}
