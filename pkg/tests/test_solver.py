import numpy as np
import pytest

from siadvect.core import VelocityField, make_grid, sample_field
from siadvect.schemes1d import Kappa
from siadvect.schemes2d import RectBoundary, SchemeSpec, build_operator
from siadvect.solver import (OFFSET_INDEX, STENCIL_OFFSETS, AssemblyError,
                             LinearStep, SweepPolicy, contract_explicit,
                             dense_solve, fast_sweep_solve, gauss_seidel_pass,
                             residual, validate_coefficients)

RNG = np.random.default_rng(5)
K = len(STENCIL_OFFSETS)


def identity_step(rhs):
    ny, nx = rhs.shape
    A = np.zeros((ny, nx, K))
    A[:, :, OFFSET_INDEX[(0, 0)]] = 1.0
    return LinearStep(A, rhs, np.ones((ny, nx), dtype=bool))


def random_dominant_step(ny, nx, rng):
    A = rng.uniform(-0.2, 0.2, size=(ny, nx, K))
    A[:, :, OFFSET_INDEX[(0, 0)]] = 3.0 + rng.uniform(0, 1, size=(ny, nx))
    rhs = rng.uniform(-1, 1, size=(ny, nx))
    return LinearStep(A, rhs, np.ones((ny, nx), dtype=bool))


def test_identity_system_single_pass():
    rhs = RNG.uniform(-1, 1, size=(5, 6))
    step = identity_step(rhs)
    u = gauss_seidel_pass(step, np.zeros_like(rhs))
    assert np.array_equal(u, rhs)
    assert residual(step, u) == 0.0


def test_residual_reports_max_defect():
    rhs = np.zeros((4, 4))
    step = identity_step(rhs)
    u = np.zeros((4, 4))
    u[2, 1] = 0.25
    assert residual(step, u) == pytest.approx(0.25)


def test_upwind_chain_solves_in_one_sweep():
    # one-signed velocity makes the implicit matrix triangular in the
    # forward sweep order, so a single cycle is already exact
    g = make_grid(-1.0, 1.0, 32)
    vel = VelocityField.constant(g, 2.0)
    exact = lambda x, y, t: np.sin(3.0 * (np.asarray(x) - 2.0 * t))
    op = build_operator(g, vel, 0.05, SchemeSpec.semi_implicit_1d(
        Kappa.upwind_sign()), rect=RectBoundary(value_fn=exact))
    u0 = sample_field(g, lambda x: np.sin(3.0 * x)).values
    step = op.make_step(u0, 0.0)
    u1, info = fast_sweep_solve(step, u0, SweepPolicy.fixed(1), dim=1)
    assert info.sweeps == 1
    assert residual(step, u1) < 1e-12


def test_sweeps_match_dense_solve():
    step = random_dominant_step(6, 7, np.random.default_rng(42))
    frame = np.zeros((6, 7))
    direct = dense_solve(step, frame)
    swept, info = fast_sweep_solve(step, frame,
                                   SweepPolicy.tolerance(1e-14, max_sweeps=60))
    assert info.converged
    assert np.abs(direct - swept).max() < 1e-12


def test_dense_solve_respects_unmasked_values():
    step = random_dominant_step(5, 5, np.random.default_rng(7))
    step.mask[2, 2] = False
    frame = np.zeros((5, 5))
    frame[2, 2] = 1.7
    u = dense_solve(step, frame)
    assert u[2, 2] == 1.7
    # the solved rows satisfy their equations with the frozen value in place
    assert residual(step, u) < 1e-12


def test_pinned_values_installed():
    rhs = np.zeros((4, 4))
    step = identity_step(rhs)
    step.mask[1, 2] = False
    step.pinned_idx = np.array([[1, 2]], dtype=np.int64)
    step.pinned_values = np.array([9.0])
    u, _ = fast_sweep_solve(step, np.zeros((4, 4)), SweepPolicy.fixed(1))
    assert u[1, 2] == 9.0


def test_contract_explicit_skips_out_of_grid():
    B = np.zeros((3, 4, K))
    B[:, :, OFFSET_INDEX[(0, 0)]] = 2.0
    B[:, :, OFFSET_INDEX[(1, 0)]] = -1.0
    u = RNG.uniform(-1, 1, size=(3, 4))
    out = contract_explicit(B, u)
    want = 2.0 * u
    want[:, :-1] -= u[:, 1:]
    assert np.allclose(out, want, rtol=0, atol=1e-15)


def test_validate_coefficients():
    A = np.zeros((3, 3, K))
    A[:, :, OFFSET_INDEX[(0, 0)]] = 1.0
    mask = np.ones((3, 3), dtype=bool)
    validate_coefficients(A, mask, STENCIL_OFFSETS, "implicit")
    A[0, 0, OFFSET_INDEX[(-1, 0)]] = 0.5
    with pytest.raises(AssemblyError, match=r"\(i=0, j=0\)"):
        validate_coefficients(A, mask, STENCIL_OFFSETS, "implicit")
    # the same reference on an unmasked node is ignored
    mask[0, 0] = False
    validate_coefficients(A, mask, STENCIL_OFFSETS, "implicit")


def test_tolerance_policy_convergence_flag():
    step = random_dominant_step(5, 5, np.random.default_rng(3))
    frame = np.zeros((5, 5))
    _, tight = fast_sweep_solve(step, frame,
                                SweepPolicy.tolerance(1e-30, max_sweeps=2))
    assert not tight.converged
    assert tight.sweeps == 2
    _, ok = fast_sweep_solve(step, frame,
                             SweepPolicy.tolerance(1e-10, max_sweeps=60))
    assert ok.converged
    assert ok.residual <= 1e-10


def test_sweep_policy_validation():
    with pytest.raises(ValueError):
        SweepPolicy.fixed(0)
    with pytest.raises(ValueError):
        SweepPolicy.tolerance(0.0)
