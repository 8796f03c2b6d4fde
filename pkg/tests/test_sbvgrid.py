import math

import numpy as np
import pytest

from robinshape.model import IntegrandModel
from robinshape.pdesolve import SolverConfig, solve_inner
from robinshape.sbvgrid import (Grid, SbvField, ShapeMask, boundary_faces,
                                bv_norm, discrete_gradient,
                                eval_free_discontinuity,
                                eval_shape_functional, gradient_field,
                                perimeter, poincare_check, read_field_text,
                                reduction_check, support_jumps,
                                write_field_text)

import oracles


def slab_model(c0=0.0, f=1.0, beta=1.0):
    return IntegrandModel(p=2, q=2, L=1.0, c0=c0, f=f, beta1=beta,
                          normalization="energy")


# ---------------------------------------------------------------- gradients

def test_gradient_constant_field():
    grid = Grid(2, 8, 0.125)
    fld = SbvField.from_values(grid, np.ones((8, 8)))
    g = gradient_field(fld)
    inner = g[1:-1, 1:-1]  # away from the support boundary at the box edge
    assert np.max(np.abs(inner)) == 0.0


def test_gradient_linear_field_is_exact():
    n = 32
    grid = Grid(1, n, 1.0 / n)
    x = grid.centers()[:, 0]
    fld = SbvField.from_values(grid, x)
    g = gradient_field(fld)[:, 0]
    assert np.max(np.abs(g[1:-1] - 1.0)) < 1e-12
    assert discrete_gradient(fld, (5,))[0] == pytest.approx(1.0, abs=1e-12)


def test_gradient_step_carried_by_jump():
    n = 16
    grid = Grid(1, n, 1.0 / n)
    vals = np.where(np.arange(n) < n // 2, 1.0, 0.0)
    fld = SbvField.from_values(grid, vals)
    g = gradient_field(fld)[:, 0]
    assert np.max(np.abs(g)) == 0.0  # the step lives on the flagged face


def test_gradient_single_cell_matches_field():
    rng = np.random.default_rng(5)
    grid = Grid(2, 8, 0.125)
    vals = rng.uniform(0.5, 1.5, size=(8, 8))
    fld = SbvField.from_values(grid, vals, extra_jumps=[(0, 4, 2), (1, 3, 5)])
    full = gradient_field(fld)
    for cell in [(0, 0), (4, 2), (3, 4), (3, 5), (7, 7), (2, 2)]:
        assert np.allclose(discrete_gradient(fld, cell), full[cell])


def test_support_boundary_must_be_flagged():
    grid = Grid(1, 8, 0.125)
    vals = np.zeros(8)
    vals[2:5] = 1.0
    fld = SbvField(grid, vals, frozenset())  # bypass auto flagging
    with pytest.raises(ValueError):
        eval_free_discontinuity(slab_model(), fld)


# ------------------------------------------------- free-discontinuity value

def test_free_discontinuity_zero_field():
    grid = Grid(1, 16, 1.0 / 16)
    assert eval_free_discontinuity(slab_model(), SbvField.zero(grid)) == 0.0


def test_free_discontinuity_plateau_plain_normalization():
    # constant 1 across the box, f = 0: only the two end faces pay, each
    # g(1) + g(0) = 1 under the plain beta |s|^q convention
    n = 64
    grid = Grid(1, n, 1.0 / n)
    m = IntegrandModel(p=2, q=2, L=0.5, c0=0.0, f=0.0, beta1=1.0)
    fld = SbvField.from_values(grid, np.ones(n))
    assert eval_free_discontinuity(m, fld) == pytest.approx(2.0, abs=1e-12)
    # the energy normalization halves the face charge
    m_energy = slab_model(beta=1.0, f=0.0)
    assert eval_free_discontinuity(m_energy, fld) == pytest.approx(1.0, abs=1e-12)


def test_free_discontinuity_slab_solution_first_order():
    errs = []
    for n in (64, 128, 256):
        grid = Grid(1, n, 1.0 / n)
        x = grid.centers()[:, 0]
        fld = SbvField.from_values(grid, oracles.slab_solution(x, 1.0))
        F = eval_free_discontinuity(slab_model(), fld)
        errs.append(abs(F - (-7.0 / 24.0)))
    assert errs[-1] / abs(7.0 / 24.0) < 0.01
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert min(orders) >= 0.9


def test_free_discontinuity_smooth_field_converges_to_integral():
    # u = sin(pi x) sin(pi y), no jumps except the zero trace at the box
    # boundary: F -> int (1/2)|grad u|^2 - u = pi^2/4 - 4/pi^2
    target = math.pi**2 / 4.0 - 4.0 / math.pi**2
    errs = []
    for n in (32, 64, 128):
        grid = Grid(2, n, 1.0 / n)
        pts = grid.centers()
        vals = np.sin(math.pi * pts[..., 0]) * np.sin(math.pi * pts[..., 1])
        fld = SbvField.from_values(grid, vals)
        F = eval_free_discontinuity(slab_model(), fld)
        errs.append(abs(F - target))
    orders = [math.log2(errs[i] / errs[i + 1]) for i in range(len(errs) - 1)]
    assert min(orders) >= 0.9


def test_free_discontinuity_insertion_order_invariant():
    rng = np.random.default_rng(2)
    n = 32
    grid = Grid(1, n, 1.0 / n)
    vals = np.where(rng.random(n) < 0.7, rng.uniform(0.5, 1.5, n), 0.0)
    jumps = sorted(support_jumps(grid, vals) | {(0, 5), (0, 9)})
    m = slab_model()
    vals_ref = eval_free_discontinuity(m, SbvField(grid, vals, frozenset(jumps)))
    shuffled = [jumps[i] for i in rng.permutation(len(jumps))]
    assert eval_free_discontinuity(m, SbvField(grid, vals, frozenset(shuffled))) \
        == vals_ref


# ----------------------------------------------------------------- perimeter

def test_perimeter_single_cell():
    grid = Grid(2, 16, 1.0 / 16)
    mask = ShapeMask(grid, np.zeros((16, 16), bool))
    mask.cells[5, 5] = True
    assert perimeter(mask, "uncorrected") == pytest.approx(4 / 16)
    grid1 = Grid(1, 16, 1.0 / 16)
    m1 = ShapeMask(grid1, np.zeros(16, bool))
    m1.cells[5] = True
    assert perimeter(m1) == pytest.approx(2.0)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 10])
def test_perimeter_square_exact_both_modes(k):
    n = 32
    grid = Grid(2, n, 1.0 / n)
    mask = ShapeMask(grid, np.zeros((n, n), bool))
    mask.cells[4:4 + k, 7:7 + k] = True
    exact = 4 * k * grid.h
    assert perimeter(mask, "uncorrected") == pytest.approx(exact, rel=1e-12)
    assert perimeter(mask, "corrected") == pytest.approx(exact, rel=1e-12)


def test_perimeter_disc_corrected():
    n = 256
    grid = Grid(2, n, 1.0 / n)
    mask = ShapeMask.disc(grid, (0.5, 0.5), 0.4)
    target = 2 * math.pi * 0.4
    assert abs(perimeter(mask, "corrected") - target) / target < 0.03
    # the uncorrected staircase overshoots by the taxicab factor
    assert perimeter(mask, "uncorrected") / target > 1.2


def test_perimeter_disc_corrected_across_resolutions():
    R = 0.4
    target = 2 * math.pi * R
    for n in (128, 256, 512):
        grid = Grid(2, n, 1.0 / n)
        mask = ShapeMask.disc(grid, (0.5, 0.5), R)
        assert abs(perimeter(mask, "corrected") - target) / target < 0.02


def test_perimeter_diagonal_strip_corrected():
    n = 64
    grid = Grid(2, n, 1.0 / n)
    cells = np.zeros((n, n), bool)
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    cells[(ii + jj >= 30) & (ii + jj <= 60)] = True
    mask = ShapeMask(grid, cells)
    corr = perimeter(mask, "corrected")
    unc = perimeter(mask, "uncorrected")
    # the two 45-degree edges shrink by sqrt(2)/2; box-edge faces stay
    assert corr < 0.8 * unc


def test_boundary_faces_sum_to_perimeter():
    grid = Grid(2, 64, 1.0 / 64)
    mask = ShapeMask.disc(grid, (0.5, 0.5), 0.3)
    for mode in ("uncorrected", "corrected"):
        faces = boundary_faces(mask, mode)
        assert sum(w for _, w in faces) == pytest.approx(perimeter(mask, mode))
        assert all(0 < w <= grid.h + 1e-15 for _, w in faces)


# ------------------------------------------------------------ shape energy

def test_shape_functional_empty_mask():
    grid = Grid(1, 32, 1.0 / 32)
    J, fld = eval_shape_functional(slab_model(), ShapeMask.empty(grid))
    assert J == 0.0
    assert np.all(fld.values == 0.0)


def test_shape_functional_full_slab():
    n = 256
    grid = Grid(1, n, 1.0 / n)
    J, fld = eval_shape_functional(slab_model(), ShapeMask.full(grid))
    assert J == pytest.approx(-7.0 / 24.0, rel=0.01)


def test_shape_functional_accepts_solver_handle():
    n = 64
    grid = Grid(1, n, 1.0 / n)
    calls = []

    def handle(model, g, mask):
        calls.append(mask.count())
        return solve_inner(model, g, mask, SolverConfig())

    J, _ = eval_shape_functional(slab_model(), ShapeMask.full(grid), handle)
    J_ref, _ = eval_shape_functional(slab_model(), ShapeMask.full(grid))
    assert calls == [n]
    assert J == J_ref


def test_shape_functional_square_self_refinement():
    m = slab_model()
    vals = []
    for n in (64, 256):
        grid = Grid(2, n, 1.0 / n)
        mask = ShapeMask(grid, np.zeros((n, n), bool))
        q = n // 4
        mask.cells[q:3 * q, q:3 * q] = True
        J, _ = eval_shape_functional(m, mask)
        vals.append(J)
    assert vals[0] == pytest.approx(vals[1], rel=0.02)


# ---------------------------------------------------------------- reduction

def test_reduction_zero_field():
    grid = Grid(1, 32, 1.0 / 32)
    gap = reduction_check(slab_model(c0=1.0), SbvField.zero(grid))
    assert gap == 0.0


def test_reduction_minimizer_fixed_point():
    n = 64
    grid = Grid(1, n, 1.0 / n)
    model = slab_model(c0=1.0)
    mask = ShapeMask.interval(grid, 0.2, 0.8)
    fld = solve_inner(model, grid, mask, SolverConfig())
    gap = reduction_check(model, fld)
    assert abs(gap) < 1e-10


def test_reduction_random_fields_nonnegative():
    rng = np.random.default_rng(31)
    model = slab_model(c0=1.0)
    n = 64
    grid = Grid(1, n, 1.0 / n)
    worst = np.inf
    for _ in range(30):
        support = rng.random(n) < 0.5
        vals = np.where(support, rng.uniform(0.2, 2.5, n), 0.0)
        fld = SbvField.from_values(grid, vals)
        worst = min(worst, reduction_check(model, fld))
    assert worst >= -1e-8


# ----------------------------------------------------------------- poincare

def test_poincare_indicator_closed_form():
    # u = k on an interval of measure m: LHS = 2 b k^p exactly,
    # RHS = lam * (k^alpha m)^(p/alpha) with lam from the transcendental root
    n, k_cells, kval, b = 128, 64, 1.7, 1.0
    grid = Grid(1, n, 1.0 / n)
    vals = np.zeros(n)
    vals[32:32 + k_cells] = kval
    fld = SbvField.from_values(grid, vals)
    m = k_cells * grid.h
    lam = oracles.robin_lambda_interval(m / 2.0, b)
    lhs = 2 * b * kval**2
    rhs = lam * (kval**2 * m)
    ratio = poincare_check(fld, b, 2.0, 2.0)
    assert ratio == pytest.approx(lhs / rhs, rel=1e-6)
    assert ratio >= 1.0


def test_poincare_eigenfunction_near_equality():
    n, k = 128, 64
    grid = Grid(1, n, 1.0 / n)
    m = k * grid.h
    lam = oracles.robin_lambda_interval(m / 2.0, 1.0)
    x = grid.centers()[:, 0]
    i0 = (n - k) // 2
    center = x[i0] - grid.h / 2 + m / 2
    vals = np.zeros(n)
    vals[i0:i0 + k] = np.cos(math.sqrt(lam) * (x[i0:i0 + k] - center))
    fld = SbvField.from_values(grid, vals)
    ratio = poincare_check(fld, 1.0, 2.0, 2.0)
    assert ratio == pytest.approx(1.0, abs=0.02)


def test_poincare_mixed_exponents_indicator():
    # the lemma's form: gradient/jump exponent p over the L^alpha norm
    n, k_cells, kval, b = 128, 40, 1.3, 1.0
    grid = Grid(1, n, 1.0 / n)
    vals = np.zeros(n)
    vals[20:20 + k_cells] = kval
    fld = SbvField.from_values(grid, vals)
    for p, alpha in ((2.0, 1.5), (3.0, 2.0)):
        ratio = poincare_check(fld, b, p, alpha)
        assert ratio >= 0.99


def test_poincare_rejects_empty_support():
    grid = Grid(1, 16, 1.0 / 16)
    with pytest.raises(ValueError):
        poincare_check(SbvField.zero(grid), 1.0, 2.0, 2.0)


# --------------------------------------------------------- BV norm and bound

def test_perimeter_bounded_by_bv_over_essinf():
    model = slab_model(c0=0.5)
    n = 128
    grid = Grid(1, n, 1.0 / n)
    mask = ShapeMask.interval(grid, 0.3, 0.7)
    fld = solve_inner(model, grid, mask, SolverConfig())
    essinf = float(np.min(fld.values[mask.cells]))
    assert essinf > 0
    assert perimeter(mask) <= bv_norm(fld) / essinf + 1e-12


# ------------------------------------------------------------- serialization

def test_field_roundtrip():
    rng = np.random.default_rng(9)
    for d, n in ((1, 16), (2, 8)):
        grid = Grid(d, n, 1.0 / n)
        vals = np.where(rng.random(grid.shape()) < 0.6,
                        rng.uniform(-1, 2, grid.shape()), 0.0)
        extra = [(0, 3) if d == 1 else (0, 3, 2)]
        fld = SbvField.from_values(grid, vals, extra)
        mask = ShapeMask(grid, vals != 0.0)
        path = f"/tmp/robinshape_roundtrip_{d}.txt"
        write_field_text(path, fld, mask)
        fld2, mask2 = read_field_text(path)
        assert fld2.grid == grid
        assert np.array_equal(fld2.values, fld.values)
        assert fld2.jumps == fld.jumps
        assert np.array_equal(mask2.cells, mask.cells)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(3, 8, 0.1)
    with pytest.raises(ValueError):
        Grid(1, 2, 0.1)
    with pytest.raises(ValueError):
        Grid(1, 8, -0.1)
    g = Grid(2, 8, 0.25)
    assert g.volume == pytest.approx(4.0)
    assert g.cell_volume == pytest.approx(0.0625)
    assert g.face_weight == pytest.approx(0.25)


def test_mask_constructors():
    grid = Grid(1, 10, 0.1)
    m = ShapeMask.interval(grid, 0.25, 0.65)
    assert m.count() == 5  # centers 0.25, 0.35, ..., 0.65 inclusive
    assert m.volume() == pytest.approx(0.5)
    grid2 = Grid(2, 10, 0.1)
    d = ShapeMask.disc(grid2, (0.5, 0.5), 0.25)
    assert 0.1 < d.volume() < 0.3
