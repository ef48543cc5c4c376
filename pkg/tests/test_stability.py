import numpy as np
import pytest

from siadvect.schemes1d import Kappa
from siadvect.schemes2d import SchemeSpec
from siadvect.stability import (SamplingSpec, WaveProbe, amplification_factor,
                                frozen_row, max_amplification,
                                max_amplification_box, ray_fan,
                                stability_threshold)

SMALL = SamplingSpec(points=128, candidates=8, refine_iters=25)
SILW = SchemeSpec.semi_implicit_1d(Kappa.upwind_sign())
SIF = SchemeSpec.semi_implicit_1d(Kappa.central())
IMPL_THIRD = SchemeSpec.fully_implicit_1d(Kappa.constant(1.0 / 3.0))


def test_wave_probe_phase_range():
    WaveProbe(np.pi, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        WaveProbe(3.5, 0.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        WaveProbe(0.0, -4.0, 1.0, 1.0)


def test_sampling_spec_defaults():
    spec = SamplingSpec()
    assert spec.resolve_points(1) == 2048
    assert spec.resolve_points(2) == 512
    assert SamplingSpec(points=64).resolve_points(1) == 64


def test_zero_phase_symbol_is_one():
    for scheme in (SILW, SIF, IMPL_THIRD,
                   SchemeSpec.semi_implicit_2d(Kappa.central()),
                   SchemeSpec.ctu(Kappa.third_order_semi_implicit())):
        D = 0.3 if scheme.dim == 2 else 0.0
        s = amplification_factor(scheme, 0.7, D, 0.0, 0.0)
        assert s == pytest.approx(1.0 + 0.0j, abs=1e-14)


def test_conjugate_symmetry():
    for xi in (0.3, 1.1, 2.9):
        s_pos = amplification_factor(IMPL_THIRD, 0.8, 0.0, xi, 0.0)
        s_neg = amplification_factor(IMPL_THIRD, 0.8, 0.0, -xi, 0.0)
        assert s_neg == pytest.approx(np.conj(s_pos), abs=1e-14)
    s_pos = amplification_factor(SchemeSpec.ctu(Kappa.central()),
                                 0.6, 0.4, 1.2, 0.7)
    s_neg = amplification_factor(SchemeSpec.ctu(Kappa.central()),
                                 0.6, 0.4, -1.2, -0.7)
    assert s_neg == pytest.approx(np.conj(s_pos), abs=1e-14)


def test_frozen_row_center_node():
    row = frozen_row(SILW, 2.0)
    assert row.implicit == {(0, 0): pytest.approx(2.0),
                            (-1, 0): pytest.approx(-1.0)}


def test_upwind_sign_symbol_is_unimodular():
    for C in (0.4, 1.0, 3.7, 20.0):
        rep = max_amplification(SILW, C, sampling=SMALL)
        assert rep.max_abs_s == pytest.approx(1.0, abs=1e-12)
        assert rep.stable


def test_central_semi_implicit_stable_at_large_courant():
    rep = max_amplification(SIF, 5.0, sampling=SMALL)
    assert rep.stable
    assert rep.max_abs_s <= 1.0 + 1e-9


def test_fully_implicit_third_kappa_window():
    # the constant-1/3 fully implicit scheme loses stability on (2, 3)
    # and restabilizes beyond it
    assert max_amplification(IMPL_THIRD, 1.9, sampling=SMALL).stable
    mid = max_amplification(IMPL_THIRD, 2.5, sampling=SMALL)
    assert not mid.stable
    assert mid.max_abs_s == pytest.approx(6.0, rel=1e-6)
    assert max_amplification(IMPL_THIRD, 3.5, sampling=SMALL).stable


def test_fully_implicit_upwind_kappa_unstable():
    rep = max_amplification(SchemeSpec.fully_implicit_1d(Kappa.upwind_sign()),
                            0.5, sampling=SMALL)
    assert not rep.stable
    assert rep.max_abs_s == pytest.approx(2.0, rel=1e-9)


def test_threshold_finds_first_crossing():
    th = stability_threshold(IMPL_THIRD, bracket=(0.1, 2.5), tol=1e-3,
                             sampling=SMALL)
    assert not th.unconditional
    assert th.limit == pytest.approx(2.0, abs=2e-3)
    assert th.bracket[0] <= th.limit <= th.bracket[1]


def test_threshold_third_order_implicit():
    scheme = SchemeSpec.fully_implicit_1d(Kappa.third_order_implicit())
    th = stability_threshold(scheme, bracket=(0.3, 0.7), tol=1e-3,
                             sampling=SMALL)
    assert th.limit == pytest.approx(0.5, abs=2e-3)


def test_threshold_unconditional_on_bracket():
    th = stability_threshold(SILW, bracket=(0.5, 4.0), tol=1e-2,
                             sampling=SMALL, scan_points=9)
    assert th.unconditional
    assert th.limit == 4.0


def test_threshold_rejects_unstable_start():
    scheme = SchemeSpec.fully_implicit_1d(Kappa.upwind_sign())
    with pytest.raises(ValueError, match="already unstable"):
        stability_threshold(scheme, bracket=(0.5, 5.0), sampling=SMALL)


def test_ray_fan_unit_quadrant():
    fan = ray_fan(5)
    assert len(fan) == 5
    assert fan[0] == pytest.approx((1.0, 0.0))
    assert fan[-1] == pytest.approx((0.0, 1.0), abs=1e-15)
    for cx, cy in fan:
        assert np.hypot(cx, cy) == pytest.approx(1.0)
        assert cx >= -1e-15 and cy >= -1e-15


def test_box_scan_rejects_1d_schemes():
    with pytest.raises(ValueError, match="2D"):
        max_amplification_box(IMPL_THIRD, 2.0)


def test_box_scan_small_courant_stable():
    scheme = SchemeSpec.semi_implicit_2d(Kappa.upwind_sign())
    rep = max_amplification_box(scheme, 0.5, 0.5, sampling=SMALL)
    assert rep.stable
    assert rep.max_abs_s <= 1.0 + 1e-9
