import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracplap.barriers import BarrierHandle, sample
from fracplap.core import (Field, Grid, OperatorParams, ball, constant_exterior, half_space,
                           perforated_slabs, periodic_tangential)
from fracplap.operator import g_power, perturbation_gap
from fracplap.solvers import slide_compare
from fracplap.verify import (HypothesisViolated, SuiteReport, check_1d_reduction, check_asymptotic,
                             check_bound_below, check_comparison, check_density_condition,
                             check_g_inequality, check_max_principle, check_monotonicity,
                             check_perturbation_lemma, check_sliding, check_strong_max,
                             check_uniqueness, run_all)

P2 = OperatorParams(1, 0.5, 2.0)


def line_grid():
    return Grid((-3.0,), 0.0625, (97,))


class TestReport:
    def test_relations_and_status(self):
        rep = SuiteReport("x")
        assert rep.check("a", "plumbing", 1.0, 1.0, "<=").passed
        assert not rep.check("b", "plumbing", 1.0, 1.0, "<").passed
        d = rep.to_dict()
        assert d["status"] == "fail" and not d["passed"]
        rep.mark_vacuous("why")
        assert rep.to_dict()["status"] == "vacuous" and rep.passed

    def test_json_safe(self):
        rep = SuiteReport("x", details={"inf": float("inf"), "arr": np.arange(3)})
        json.dumps(rep.to_dict())


class TestDensity:
    def test_half_space(self):
        r = check_density_condition(half_space(2).complement(), (0.3, 0.7), 1.0, range(12))
        assert abs(r.liminf - 0.5) <= 3 * r.liminf_stderr

    def test_slabs(self):
        r = check_density_condition(perforated_slabs(2).complement(), (0.25, 0.5), 1.0, range(12), seed=1)
        assert r.liminf >= 0.4

    def test_ball_vanishes(self):
        r = check_density_condition(ball((0.0, 0.0), 1.0), (0.0, 0.0), 1.0, range(12), seed=2)
        assert max(r.ratios[7:]) == 0.0

    def test_sample_floor(self):
        with pytest.raises(ValueError):
            check_density_condition(half_space(1), (0.0,), 1.0, range(3), samples=100)

    def test_seeded(self):
        a = check_density_condition(half_space(1), (0.0,), 1.0, range(4), seed=7)
        b = check_density_condition(half_space(1), (0.0,), 1.0, range(4), seed=7)
        assert a == b


class TestMaxPrinciple:
    def test_zero_field_passes(self):
        g = line_grid()
        z = Field(g, np.zeros(g.counts))
        rep = check_max_principle(z, z, ball((0.0,), 1.0), P2)
        assert not rep.vacuous and rep.passed
        assert rep.assertions[0].measured == 0.0

    def test_negative_bump_is_vacuous(self):
        g = line_grid()
        bump = sample(BarrierHandle("phi1", (0.0,), 1.0, 1.0), g)
        u = bump.with_values(-bump.values)
        z = Field(g, np.zeros(g.counts))
        rep = check_max_principle(u, z, ball((0.0,), 1.5), P2)
        assert rep.vacuous and not rep.assertions
        with pytest.raises(HypothesisViolated):
            check_max_principle(u, z, ball((0.0,), 1.5), P2, strict=True)

    def test_positive_violation_outside_is_vacuous(self):
        g = line_grid()
        u = Field(g, np.ones(g.counts))
        z = Field(g, np.zeros(g.counts))
        assert check_max_principle(u, z, ball((0.0,), 1.0), P2).vacuous


class TestStrongMax:
    def test_equal_branch(self):
        g = line_grid()
        u = Field(g, np.linspace(0, 1, 97))
        rep = check_strong_max(u, u, ball((0.0,), 1.0))
        assert rep.details["branch"] == "equal" and rep.passed

    def test_strict_branch_on_solution(self, half_line):
        pr, res = half_line(2.0)
        u = res.field
        w, _, _ = slide_compare(u, pr.grid.h, [-1.0])
        v = u.with_values(u.values - w.values)
        rep = check_strong_max(u, v, pr.omega)
        assert rep.details["branch"] == "strict" and rep.passed

    def test_two_solves_equal_branch(self, half_line):
        a = half_line(2.0, "ramp")[1].field
        b = half_line(2.0, "zero")[1].field
        rep = check_strong_max(a, b, half_space(1), tol=1e-6)
        assert rep.details["branch"] == "equal" and rep.passed

    def test_unordered_is_vacuous(self):
        g = line_grid()
        u = Field(g, np.zeros(g.counts))
        v = Field(g, np.ones(g.counts))
        assert check_strong_max(u, v, ball((0.0,), 1.0)).vacuous


class TestComparison:
    def test_constant_shift(self):
        g = line_grid()
        u = sample(BarrierHandle("phi2", (0.0,), 1.0, 1.0), g)
        # shift the exterior data too, so every difference u(x) - u(y) is unchanged
        v = Field(g, u.values - 0.25, constant_exterior(-0.25))
        gamma = ball((0.0,), 1.0)
        rep = check_comparison(u, v, gamma, OperatorParams(1, 0.5, 3.0), tol=1e-6)
        assert rep.passed and not rep.vacuous
        assert rep.hypotheses["operator_gap_min"] == pytest.approx(0.0, abs=1e-9)
        # margin equals the constant
        assert rep.assertions[0].measured == pytest.approx(0.25)

    def test_identical(self):
        g = line_grid()
        u = sample(BarrierHandle("phi1", (0.0,), 1.0, 1.0), g)
        rep = check_comparison(u, u, ball((0.0,), 0.5), P2)
        assert rep.passed and rep.assertions[0].measured == 0.0

    def test_subsolution_on_solution(self, half_line):
        pr, res = half_line(2.0)
        rep = run_all(["comparison"], context={"problem": pr, "result": res, "tol": 1e-6})
        r = rep.reports[0]
        assert not r.vacuous and r.passed
        assert r.hypotheses["subsolution_eps"] <= 1.0


class TestBoundBelow:
    def test_half_line(self, half_line):
        pr, res = half_line(2.0)
        rep = check_bound_below(res.field, pr.omega, 10.0, 0.9)
        assert rep.passed and rep.details["max_passing_eps1"] >= 0.9

    def test_r0_too_large(self, half_line):
        pr, res = half_line(2.0)
        rep = check_bound_below(res.field, pr.omega, 1000.0, 0.5)
        assert rep.vacuous and rep.details["empty_node_set"]

    def test_counter_input_fails(self):
        g = Grid((0.0,), 0.05, (201,))
        u = sample(BarrierHandle("phi1", (5.0,), 0.5, 1e-3), g)
        rep = check_bound_below(u, half_space(1), 0.0, 0.1)
        assert not rep.passed and not rep.vacuous


class TestAsymptotic:
    def test_profile(self, half_line):
        pr, res = half_line(2.0)
        rep = check_asymptotic(res.field, pr.omega, [0.01, 0.05, 1.0], 1.0)
        prof = rep.details["profile"]
        assert rep.passed
        assert np.isfinite(prof["0.05"]) and prof["1"] == 0.0
        assert prof["0.01"] >= prof["0.05"]

    def test_unreachable_level_fails(self, half_line):
        pr, res = half_line(2.0)
        rep = check_asymptotic(res.field, pr.omega, [1e-9], 1.0)
        assert not rep.passed


class TestMonotonicity:
    def test_ramp_has_margin_h(self):
        g = Grid((0.0,), 0.1, (11,))
        rep = check_monotonicity(Field(g, g.axis(0)), [1.0])
        assert rep.passed
        assert rep.assertions[0].measured == pytest.approx(0.1)

    def test_constant_fails_strictness(self):
        g = Grid((0.0,), 0.1, (11,))
        rep = check_monotonicity(Field(g, np.full(11, 0.4)), [1.0])
        assert not rep.passed
        assert rep.assertions[1].measured == 0.0

    def test_solution(self, half_line):
        pr, res = half_line(2.0)
        assert check_monotonicity(res.field, [1.0], pr.omega).passed

    def test_2d_axis(self):
        g = Grid((0.0, 0.0), 0.5, (4, 5))
        vals = np.tile(g.axis(1), (4, 1))
        f = Field(g, vals)
        assert check_monotonicity(f, [0.0, 1.0]).passed
        assert not check_monotonicity(f, [1.0, 0.0]).passed

    def test_rejects_off_lattice(self):
        g = Grid((0.0, 0.0), 0.5, (4, 5))
        with pytest.raises(ValueError):
            check_monotonicity(Field(g, np.zeros(g.counts)), [1.0, 0.5])


class TestReduction:
    def test_tangentially_constant(self):
        g = Grid((0.0, 0.0), 0.25, (8, 8))
        f = Field(g, np.tile(np.linspace(0, 0.9, 8), (8, 1)), periodic_tangential(0.0, 0.95))
        rep = check_1d_reduction(f)
        assert rep.passed and rep.assertions[0].measured == 0.0

    def test_x1_ramp_fails(self):
        g = Grid((0.0, 0.0), 0.25, (8, 8))
        f = Field(g, np.tile(g.axis(0)[:, None], (1, 8)))
        assert not check_1d_reduction(f).passed

    def test_needs_2d(self):
        with pytest.raises(ValueError):
            check_1d_reduction(Field(Grid((0.0,), 1.0, (3,)), np.zeros(3)))


class TestGInequality:
    def test_suite_passes(self):
        rep = check_g_inequality()
        assert rep.passed and len(rep.assertions) == 10

    def test_direct_examples(self):
        assert g_power(2.0, 3.0) == 4.0 and 2.0 * (g_power(1.0, 3.0) * 2) == 4.0
        lhs = g_power(1.0, 4.0)
        rhs = 4.0 * (g_power(2.0, 4.0) + g_power(-1.0, 4.0))
        assert (lhs, rhs) == (1.0, 28.0)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(2.0, 8.0), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_inequality_property(self, p, t1, t2):
        if t1 + t2 <= 0:
            t1, t2 = -t1, -t2
        if t1 + t2 <= 0:
            return
        c = 2.0 ** (p - 2)
        lhs = g_power(t1 + t2, p)
        rhs = c * (g_power(t1, p) + g_power(t2, p))
        assert lhs <= rhs + 1e-12 * c * (abs(g_power(t1, p)) + abs(g_power(t2, p)))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(-50, 50), st.floats(-50, 50))
    def test_p2_equality(self, t1, t2):
        assert g_power(t1 + t2, 2.0) == pytest.approx(g_power(t1, 2.0) + g_power(t2, 2.0), abs=1e-12)


class TestPerturbation:
    def test_zero_bump_gives_zero_gap(self, half_line):
        pr, res = half_line(2.0)
        bump = BarrierHandle("phi2", (10.0,), 0.5, 0.0)
        for eps in (1.0, 0.1, 0.01):
            assert perturbation_gap(res.field, bump, eps, pr.params, pr.q, (10.0,)) == 0.0

    def test_linear_in_eps_for_p2(self, half_line):
        pr, res = half_line(2.0)
        bump = BarrierHandle("phi2", (10.0,), 0.5, 1.0)
        g1 = perturbation_gap(res.field, bump, 0.1, pr.params, pr.q, (10.0,))
        g2 = perturbation_gap(res.field, bump, 0.2, pr.params, pr.q, (10.0,))
        assert g2 == pytest.approx(2 * g1, rel=1e-9)

    def test_perturbation_fit(self, half_line):
        pr, res = half_line(2.0)
        bump = BarrierHandle("phi2", (10.0,), 0.5, 1.0)
        rep = check_perturbation_lemma(res.field, bump, pr.params, (10.0,),
                                       [2.0 ** -k for k in range(1, 9)], [1, 2, 4], [20, 30, 40, 60], pr.q)
        assert rep.passed, rep.to_dict()
        assert 0.7 <= rep.details["near_exponent"] / 1.0 <= 1.3


class TestSlidingAndUniqueness:
    def test_sliding_on_solution(self, half_line):
        _, res = half_line(2.0)
        rep = check_sliding(res.field, [1.0], 2.0)
        assert rep.passed

    def test_sliding_fails_on_decreasing(self):
        g = Grid((0.0,), 0.1, (11,))
        dec = Field(g, 1.0 - g.axis(0), periodic_tangential(1.0, 0.0))
        rep = check_sliding(dec, [1.0], 0.5)
        assert not rep.passed and rep.note

    def test_uniqueness(self):
        g = Grid((0.0,), 0.1, (11,))
        u = Field(g, g.axis(0))
        assert check_uniqueness(u, u.with_values(u.values + 5e-6), 1e-6).passed
        assert not check_uniqueness(u, u.with_values(u.values + 1e-3), 1e-6).passed


class TestRunAll:
    def test_empty(self):
        agg = run_all([])
        assert agg.passed and agg.reports == []

    def test_unknown(self):
        with pytest.raises(ValueError, match="bogus"):
            run_all(["g_inequality", "bogus"])

    def test_default_suites_pass(self, half_line):
        pr, res = half_line(2.0)
        _, res_b = half_line(2.0, "zero")
        ctx = {"problem": pr, "result": res, "result_zero_init": res_b, "tol": 1e-6}
        from fracplap.verify import SUITES
        agg = run_all(list(SUITES), context=ctx)
        failing = [r.suite for r in agg.reports if not r.passed or r.vacuous and r.suite != "max_principle"]
        assert agg.passed and not failing, failing
        d = json.loads(agg.to_json())
        assert "claim:sliding" in d["anchors"] and "plumbing" in d["anchors"]
