import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracplap.barriers import BarrierHandle, build_subsolution, cone_psi, phi1, phi2, sample, scaled
from fracplap.core import Field, Grid, OperatorParams, custom_domain
from fracplap.operator import eval_point


def test_phi2_values():
    assert phi2(np.zeros(1)) == 1.0
    assert phi2(np.array([2.0])) == 0.0
    assert phi2(np.array([1.0])) == pytest.approx(math.exp(0.25 - 1.0 / 3.0))
    assert phi2(np.array([1.0])) == pytest.approx(0.9200, abs=5e-5)
    # continuity at the support edge
    assert phi2(np.array([2.0 - 1e-9])) < 1e-100


def test_phi1_values():
    assert phi1(np.zeros(2)) == 1.0
    assert phi1(np.array([1.0, 0.0])) == 0.0
    assert phi1(np.array([3.0])) == 0.0
    assert phi1(np.array([0.5])) == pytest.approx(math.exp(1 - 4 / 3))
    assert phi1(np.array([0.5])) == pytest.approx(0.7165, abs=5e-5)


def test_cone_psi_values():
    for s in (0.1, 0.5, 0.9):
        assert cone_psi(np.zeros(1), s) == 1.0
        assert cone_psi(np.array([1.0]), s) == 0.0
    assert cone_psi(np.array([0.6]), 0.5) == pytest.approx(0.8)
    with pytest.raises(ValueError):
        cone_psi(np.zeros(1), 1.0)


def test_batched_points():
    pts = np.array([[0.0], [0.5], [3.0]])
    np.testing.assert_allclose(phi1(pts), [1.0, math.exp(1 - 4 / 3), 0.0])


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(["phi1", "phi2", "cone_psi"]), st.floats(0.0, 3.0), st.floats(0.0, 3.0))
def test_radially_nonincreasing(kind, r1, r2):
    h = BarrierHandle(kind, (0.0, 0.0), 1.0, 1.0, 0.5)
    lo, hi = sorted((r1, r2))
    a, b = h(np.array([[lo, 0.0], [0.0, hi]]))
    assert a >= b


@pytest.mark.parametrize("kind,support", [("phi1", 1.0), ("phi2", 2.0), ("cone_psi", 1.0)])
def test_exact_zero_outside_support(kind, support):
    h = BarrierHandle(kind, (0.0,), 1.5, 2.0)
    r = np.linspace(support * 1.5, support * 10, 50)[:, None]
    assert np.all(h(r) == 0.0)
    assert np.all(h(-r) == 0.0)


def test_scaled_center_and_support():
    g = Grid((-4.0,), 0.125, (65,))
    f = scaled(BarrierHandle("cone_psi"), (1.0,), 2.0, 0.3, g)
    assert f.node_value([1.0]) == pytest.approx(0.3)
    f1 = scaled(BarrierHandle("phi1"), (0.5,), 1.5, 1.0, g)
    x = g.axis(0)
    nz = x[f1.values > 0]
    assert nz.min() > 0.5 - 1.5 and nz.max() < 0.5 + 1.5
    assert BarrierHandle("phi1", (0.5,), 1.5).support_radius == 1.5


def test_scaled_rejects_overflow():
    g = Grid((-1.0,), 0.125, (17,))
    with pytest.raises(ValueError):
        scaled(BarrierHandle("phi1"), (0.5,), 1.0, 1.0, g)


def test_operator_scaling_on_barriers():
    # eps * psi(x / R) evaluated on the R-scaled grid at R x equals eps^(p-1) / R^sp times the base value
    h = 2.0 ** -6
    base_grid = Grid((-2.0,), h, (257,))
    params = OperatorParams(1, 0.5, 3.0)
    eps, R = 0.5, 2.0
    psi = sample(BarrierHandle("cone_psi", (0.0,), 1.0, 1.0, 0.5), base_grid)
    big = base_grid.scaled(R)
    psi_er = scaled(BarrierHandle("cone_psi", s=0.5), (0.0,), R, eps, big)
    lhs = eval_point(psi_er, params, None, [0.0])
    rhs = eps ** (params.p - 1) / R ** params.sp * eval_point(psi, params, None, [0.0])
    assert lhs / rhs == pytest.approx(1.0, abs=1e-3)


def test_phi2_operator_bounded_over_support():
    h = 2.0 ** -5
    g = Grid((-3.0,), h, (193,))
    u = sample(BarrierHandle("phi2"), g)
    vals = [eval_point(u, OperatorParams(1, 0.5, 3.0), None, [x]) for x in g.axis(0)[16:-16:4]]
    assert np.all(np.isfinite(vals)) and max(map(abs, vals)) < 50


def test_cone_psi_operator_nearly_constant():
    h = 2.0 ** -8
    g = Grid((-2.0,), h, (1025,))
    u = sample(BarrierHandle("cone_psi", (0.0,), 1.0, 1.0, 0.5), g)
    params = OperatorParams(1, 0.5, 2.0)
    xs = [k * h for k in range(-128, 129, 16)]
    vals = np.array([eval_point(u, params, None, [x]) for x in xs])
    assert vals.std() / vals.mean() <= 0.05


class TestSubsolution:
    def setup_method(self):
        self.g = Grid((0.0,), 0.05, (201,))
        self.u = Field(self.g, np.clip(self.g.axis(0) / 4, 0, 1))
        self.D = custom_domain(lambda x: x[:, 0] >= 2.0, 1)

    def test_eps_zero_empty_d(self):
        empty = custom_domain(lambda x: np.zeros(len(x), dtype=bool), 1)
        f = build_subsolution(self.u, empty, 0.0, ((1.0,), 1.0), 0.5)
        assert np.all(f.values == 0.0)
        with pytest.raises(ValueError):
            build_subsolution(self.u, empty, 0.1, ((1.0,), 1.0), 0.5)

    def test_center_value(self):
        f = build_subsolution(self.u, self.D, 0.2, ((1.0,), 1.0), 0.5)
        assert f.node_value([1.0]) == pytest.approx(0.2)
        assert f.node_value([3.0]) == self.u.node_value([3.0])

    @pytest.mark.parametrize("dist", [0.1, 0.2, 0.4])
    def test_boundary_growth(self, dist):
        eps, s = 0.3, 0.5
        f = build_subsolution(self.u, self.D, eps, ((1.0,), 1.0), s)
        # tangency at 0, inward normal +x
        assert f.node_value([dist]) >= eps * dist ** s
