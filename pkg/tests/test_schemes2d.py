import numpy as np
import pytest

from siadvect.core import VelocityField, make_grid, sample_field
from siadvect.experiments import builtin_case
from siadvect.schemes1d import Kappa, kappa_value, semi_implicit_axis_coeffs
from siadvect.schemes2d import (AssemblyError, ImplicitDomain, NodeClass,
                                RectBoundary, SchemeSpec,
                                apply_inflow_substitution,
                                assemble_ctu_row, assemble_semi_implicit_row_2d,
                                boundary_gamma, build_operator, classify_node,
                                ctu_corner_terms, interior_row,
                                outflow_extrapolate, row_footprint,
                                _fold_ghost)
from siadvect.solver import (OFFSET_INDEX, SweepPolicy, dense_solve,
                             fast_sweep_solve)

K3 = Kappa.third_order_semi_implicit()
RNG = np.random.default_rng(17)


def test_scheme_spec_validation():
    with pytest.raises(ValueError):
        SchemeSpec("lax_wendroff", K3, K3)
    with pytest.raises(ValueError):
        SchemeSpec.ctu(K3, theta=1.2)
    assert SchemeSpec.semi_implicit_1d(K3).dim == 1
    assert SchemeSpec.fully_implicit_1d(K3).dim == 1
    assert SchemeSpec.semi_implicit_2d(K3).dim == 2
    assert SchemeSpec.ctu(K3).kappa_y is K3


def test_si2d_zero_vy_embeds_1d_row():
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vel = VelocityField.constant(g, 1.3, 0.0)
    row = assemble_semi_implicit_row_2d(4, 4, vel, 0.05, g.h, K3, K3)
    c = 0.05 * 1.3 / g.h
    imp, exp = semi_implicit_axis_coeffs(c, kappa_value(K3, c))
    for off, val in imp.items():
        want = val + (1.0 if off == 0 else 0.0)
        assert row.implicit[(off, 0)] == pytest.approx(want)
    for off, val in exp.items():
        want = val + (1.0 if off == 0 else 0.0)
        assert row.explicit[(off, 0)] == pytest.approx(want)
    assert all(dj == 0 for (_, dj) in row.implicit)


def test_ctu_corner_terms_unit_courant():
    imp, exp = ctu_corner_terms(1.0, 1.0, 1.0)
    q = 1.0 / 6.0
    p = 1.0 / 12.0
    assert imp == {(0, 0): pytest.approx(q), (-1, -1): pytest.approx(q),
                   (-1, 0): pytest.approx(-q), (0, -1): pytest.approx(-q)}
    assert exp[(0, 0)] == pytest.approx(2 * p)
    assert exp[(1, 1)] == pytest.approx(p)
    assert exp[(-1, -1)] == pytest.approx(p)
    for off in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        assert exp[off] == pytest.approx(-p)


def test_ctu_corner_terms_half_theta():
    imp, exp = ctu_corner_terms(1.0, 1.0, 0.5)
    assert imp[(0, 0)] == pytest.approx(1.0 / 6.0)
    want = 1.0 / 24.0
    assert exp == {(1, 1): pytest.approx(want), (-1, -1): pytest.approx(want),
                   (-1, 1): pytest.approx(-want), (1, -1): pytest.approx(-want)}


def test_ctu_corner_terms_invariants():
    for _ in range(30):
        c, d = RNG.uniform(-2, 2, size=2)
        theta = float(RNG.uniform(0, 1))
        imp, exp = ctu_corner_terms(float(c), float(d), theta)
        assert sum(imp.values()) == pytest.approx(0.0, abs=1e-14)
        assert sum(exp.values()) == pytest.approx(0.0, abs=1e-14)
        # theta enters affinely through the explicit part only
        imp0, exp0 = ctu_corner_terms(float(c), float(d), 0.0)
        imp1, exp1 = ctu_corner_terms(float(c), float(d), 1.0)
        assert imp == imp0 == imp1
        for off in set(exp0) | set(exp1) | set(exp):
            blend = theta * exp1.get(off, 0.0) + (1 - theta) * exp0.get(off, 0.0)
            assert exp.get(off, 0.0) == pytest.approx(blend, abs=1e-14)
    assert ctu_corner_terms(1.7, 0.0, 1.0) == ({}, {})


def test_ctu_reduces_to_si2d_on_axis_velocity():
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vel = VelocityField.constant(g, -0.9, 0.0)
    a = assemble_ctu_row(4, 4, vel, 0.05, g.h, K3, K3, 0.7)
    b = assemble_semi_implicit_row_2d(4, 4, vel, 0.05, g.h, K3, K3)
    assert a.implicit == b.implicit and a.explicit == b.explicit


def test_interior_row_family_dispatch():
    g1 = make_grid(-1.0, 1.0, 8)
    v1 = VelocityField.constant(g1, 1.0)
    row = interior_row(4, 0, v1, 0.05, g1.h, SchemeSpec.fully_implicit_1d(K3))
    assert row.index == (4, 0)
    assert row.explicit == {(0, 0): 1.0}


def test_classify_node():
    phi = -np.ones((7, 7))
    foot = ((-2, 0), (-1, 0), (0, 0), (1, 0), (0, -1), (0, 1))
    assert classify_node(3, 3, phi, foot) == NodeClass.INTERIOR_FULL
    # footprint leaving the grid counts as near-boundary
    assert classify_node(1, 3, phi, foot) == NodeClass.NEAR_BOUNDARY
    phi2 = phi.copy()
    phi2[3, 5] = 0.5
    assert classify_node(3, 3, phi2, ((0, 0), (2, 0))) == NodeClass.NEAR_BOUNDARY
    assert classify_node(3, 3, phi2, ((0, 0), (1, 0))) == NodeClass.INTERIOR_FULL
    phi3 = phi.copy()
    phi3[3, 3] = 0.0
    assert classify_node(3, 3, phi3, foot) == NodeClass.OUTSIDE


def test_row_footprint_sorted_union():
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vel = VelocityField.constant(g, 1.0, 1.0)
    row = assemble_ctu_row(4, 4, vel, 0.05, g.h, K3, K3)
    offs = row_footprint(row)
    assert offs == tuple(sorted(offs))
    assert set(offs) == set(row.implicit) | set(row.explicit)


def test_boundary_gamma():
    assert boundary_gamma(-0.5, 0.5) == pytest.approx(0.5)
    assert boundary_gamma(-0.9, 0.1) == pytest.approx(0.1)
    for bad in ((0.2, 0.5), (-0.5, -0.1), (0.0, 1.0), (-1.0, 0.0)):
        with pytest.raises(ValueError):
            boundary_gamma(*bad)


def test_apply_inflow_substitution():
    from siadvect.schemes1d import StencilRow
    row = StencilRow(index=(3, 3), implicit={(0, 0): 1.2, (1, 0): 0.3},
                     explicit={(0, 0): 1.0})
    out = apply_inflow_substitution(row, (1, 0), 0.25, 2.0)
    assert (1, 0) not in out.implicit
    assert out.implicit[(0, 0)] == pytest.approx(1.2 - 0.1)
    assert out.rhs_extra == pytest.approx(-0.8)
    row2 = StencilRow(index=(3, 3), implicit={(0, 0): 1.0, (1, 0): 0.3},
                      explicit={})
    with pytest.raises(ValueError):
        apply_inflow_substitution(row2, (1, 0), 1.0, 2.0)


def test_inflow_substitution_preserves_constants():
    # a row exact on constants stays exact when the eliminated node is
    # expressed through a boundary value equal to the same constant
    from siadvect.schemes1d import StencilRow
    const = 4.2
    row = StencilRow(index=(0, 0),
                     implicit={(0, 0): 1.4, (1, 0): -0.25, (-1, 0): -0.15},
                     explicit={(0, 0): 1.0})
    assert sum(row.implicit.values()) == pytest.approx(sum(row.explicit.values()))
    out = apply_inflow_substitution(row, (1, 0), 0.3, const)
    lhs = sum(out.implicit.values()) * const
    rhs = sum(out.explicit.values()) * const + out.rhs_extra
    assert lhs == pytest.approx(rhs)


def test_outflow_extrapolate():
    vals = np.array([[0.0, 1.0, 3.0]])
    assert outflow_extrapolate(vals, 2, 0, 1, 0) == pytest.approx(5.0)
    # donor out of grid falls back to the constant
    assert outflow_extrapolate(np.array([[3.0]]), 0, 0, 1, 0) == pytest.approx(3.0)
    usable = np.array([[True, False, True]])
    assert outflow_extrapolate(vals, 2, 0, 1, 0, usable) == pytest.approx(3.0)


def test_fold_ghost_exact_on_linears():
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    u = lambda i, j: 0.4 + 0.7 * i - 1.1 * j

    def folded(i, j, off):
        return sum(w * u(ii, jj) for (ii, jj), w in _fold_ghost(g, i, j, off))

    for (i, j), off in (((0, 4), (-1, 0)), ((8, 4), (2, 0)), ((4, 0), (0, -2)),
                        ((0, 0), (-1, -1)), ((8, 8), (1, 1)), ((0, 8), (-1, 1))):
        assert folded(i, j, off) == pytest.approx(u(i + off[0], j + off[1]))
    # in-grid axis reference passes through unchanged
    assert _fold_ghost(g, 4, 4, (1, 0)) == [((5, 4), 1.0)]


def test_rect_inflow_requires_values():
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vel = VelocityField.constant(g, 1.0, 0.5)
    with pytest.raises(AssemblyError, match="boundary values"):
        build_operator(g, vel, 0.05, SchemeSpec.semi_implicit_2d(K3))
    op = build_operator(g, vel, 0.05, SchemeSpec.semi_implicit_2d(K3),
                        rect=RectBoundary(value_fn=lambda x, y, t: 0.0))
    # west and south edges are inflow; the shared corner is pinned once
    assert op.stats["n_pinned"] == g.nx + g.ny - 1


def test_rect_boundary_validation():
    with pytest.raises(ValueError):
        RectBoundary(exact_ghosts=True)
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vel = VelocityField.constant(g, 1.0, 0.0)
    dom = ImplicitDomain.from_function(
        g, lambda x, y: x ** 2 + y ** 2 - 0.25, lambda x, y, t: 0.0)
    with pytest.raises(ValueError, match="either"):
        build_operator(g, vel, 0.05, SchemeSpec.semi_implicit_2d(K3),
                       domain=dom, rect=RectBoundary())


def test_build_operator_dim_mismatch():
    g2 = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    g1 = make_grid(-1.0, 1.0, 8)
    v2 = VelocityField.constant(g2, 1.0, 0.0)
    v1 = VelocityField.constant(g1, 1.0)
    with pytest.raises(ValueError):
        build_operator(g2, v2, 0.05, SchemeSpec.semi_implicit_1d(K3))
    with pytest.raises(ValueError):
        build_operator(g1, v1, 0.05, SchemeSpec.semi_implicit_2d(K3))
    dom = ImplicitDomain.from_function(
        g2, lambda x, y: x ** 2 + y ** 2 - 0.25, lambda x, y, t: 0.0)
    with pytest.raises(ValueError):
        build_operator(g1, v1, 0.05, SchemeSpec.semi_implicit_1d(K3), domain=dom)
    bad = ImplicitDomain(-np.ones((3, 3)), lambda x, y, t: 0.0)
    with pytest.raises(ValueError, match="shape"):
        build_operator(g2, v2, 0.05, SchemeSpec.semi_implicit_2d(K3), domain=bad)


def test_implicit_domain_needs_interior():
    with pytest.raises(ValueError, match="nowhere negative"):
        ImplicitDomain(np.ones((5, 5)), lambda x, y, t: 0.0)


def test_rect_step_exact_on_linears():
    # uniform transport of a linear profile is reproduced to rounding by the
    # edge policy: inflow pinning, per-axis ring rows, folded outflow ghosts
    g = make_grid(-1.0, 1.0, 8, -1.0, 1.0)
    vx, vy = 0.9, -0.4
    exact = lambda x, y, t: 0.3 + 0.8 * (x - vx * t) - 0.5 * (y - vy * t)
    vel = VelocityField.constant(g, vx, vy)
    tau = 0.04
    u0 = sample_field(g, lambda x, y: exact(x, y, 0.0)).values
    for scheme in (SchemeSpec.semi_implicit_2d(K3),
                   SchemeSpec.ctu(K3, theta=0.5)):
        op = build_operator(g, vel, tau, scheme,
                            rect=RectBoundary(value_fn=exact))
        u1 = dense_solve(op.make_step(u0, 0.0), u0)
        want = sample_field(g, lambda x, y: exact(x, y, tau)).values
        assert np.abs(u1 - want).max() < 1e-13


def test_vortex_edges_stay_identity():
    # boundary-normal velocities at roundoff scale must not be classified as
    # inflow, and the edge nodes keep their initial values through a step
    case = builtin_case("vortex")
    g = make_grid(-1.0, 1.0, 40, -1.0, 1.0)
    vel = VelocityField.from_function(g, case.fx, case.fy)
    op = build_operator(g, vel, 0.025, SchemeSpec.semi_implicit_2d(K3))
    assert op.stats["n_pinned"] == 0
    u0 = sample_field(g, case.u0).values
    u1, _ = fast_sweep_solve(op.make_step(u0, 0.0), u0.copy(),
                             SweepPolicy.fixed(2))
    edge = np.zeros(g.shape, dtype=bool)
    edge[0, :] = edge[-1, :] = True
    edge[:, 0] = edge[:, -1] = True
    assert np.abs(u1 - u0)[edge].max() < 1e-12


def test_cut_cell_stats_on_circle():
    case = builtin_case("rotation_euclid")
    g = make_grid(-1.0, 1.0, 40, -1.0, 1.0)
    vel = VelocityField.from_function(g, case.fx, case.fy)
    dom = ImplicitDomain.from_function(g, case.phi_fn,
                                       lambda x, y, t: case.exact(x, y, t))
    op = build_operator(g, vel, 1.0 / 50, SchemeSpec.semi_implicit_2d(K3),
                        domain=dom)
    st = op.stats
    assert st["min_inside_gap"] == pytest.approx(0.0788, abs=2e-3)
    assert st["n_near_boundary"] == 160
    assert st["n_pinned"] == 12
    assert st["max_courant"] > 0
    # outside nodes are excluded from the solve mask
    assert not op.mask[op.outside].any()


def test_cut_cell_constant_preservation():
    # constant data with matching boundary values is a fixed point of the
    # cut-cell step, including the gamma-substituted rows
    g = make_grid(-1.0, 1.0, 16, -1.0, 1.0)
    vel = VelocityField.from_function(g, lambda x, y: -y, lambda x, y: x)
    dom = ImplicitDomain.from_function(
        g, lambda x, y: np.hypot(x, y) - 0.55, lambda x, y, t: 4.2)
    op = build_operator(g, vel, 0.02, SchemeSpec.semi_implicit_2d(K3),
                        domain=dom)
    u0 = np.full(g.shape, 4.2)
    u1 = dense_solve(op.make_step(u0, 0.0), u0)
    assert np.abs(u1 - u0)[op.mask].max() < 1e-12


def test_bulk_matches_per_node_rows():
    # the vectorized assembly and the reference row builder agree exactly
    g = make_grid(-1.0, 1.0, 12, -1.0, 1.0)
    vel = VelocityField.from_function(
        g, lambda x, y: np.sin(x + 0.3) * np.cos(y),
        lambda x, y: np.cos(2 * x) * np.sin(y - 0.1))
    exact = lambda x, y, t: np.zeros_like(np.asarray(x) * np.asarray(y))
    for scheme in (SchemeSpec.semi_implicit_2d(K3, Kappa.upwind_sign()),
                   SchemeSpec.ctu(K3, theta=0.3)):
        op = build_operator(g, vel, 0.03, scheme,
                            rect=RectBoundary(value_fn=exact))
        for i, j in ((3, 4), (6, 6), (9, 3), (5, 9)):
            row = interior_row(i, j, vel, 0.03, g.h, scheme)
            a = np.zeros(len(OFFSET_INDEX))
            b = np.zeros(len(OFFSET_INDEX))
            for off, val in row.implicit.items():
                a[OFFSET_INDEX[off]] = val
            for off, val in row.explicit.items():
                b[OFFSET_INDEX[off]] = val
            assert np.allclose(op.A[j, i], a, rtol=0, atol=1e-15)
            assert np.allclose(op.B[j, i], b, rtol=0, atol=1e-15)
