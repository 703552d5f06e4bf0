import functools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from nlink.analysis import (
    InsufficientSampling,
    build_interpolant,
    default_test_family,
    field_error,
    fit_order,
    init_from_curve,
    initial_data_error,
    initial_energy_bound,
    qt_norm,
    reference_curve,
    self_convergence,
    space_norm,
    torque_term_magnitude,
    weak_form_residual,
)
from nlink.dynamics import IntegratorSpec, simulate, solve_velocity
from nlink.model import Configuration, PhysParams, elastic_energy, vertices

from conftest import random_config

P = PhysParams()
FAMILY_SPEC = IntegratorSpec(t_end=0.05, n_samples=121, rtol=1e-9, atol=1e-11,
                             sampling="geometric", first_sample=1e-10)


def arc_profile(s, a=math.pi):
    return a * s


def constant_profile(s):
    return 0.4


def snapshot(rng, N, bc="free"):
    c = random_config(rng, N, bc)
    return c, solve_velocity(c)[1]


def gauss_integral(f, N, h, order=12):
    x, w = np.polynomial.legendre.leggauss(order)
    x, w = 0.5 * (x + 1), 0.5 * w
    s = (np.arange(N)[:, None] + x) * h
    return float((f(s) * w * h).sum())


@pytest.fixture(scope="module")
def arc_family():
    return {N: simulate(init_from_curve(arc_profile, (0, 0), N, P), FAMILY_SPEC)
            for N in (10, 20, 40, 80)}


class TestInterpolants:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="unknown interpolant"):
            build_interpolant("q_linear", Configuration(theta=[0.0]))

    def test_loads_required(self):
        with pytest.raises(ValueError, match="loads"):
            build_interpolant("n_linear", Configuration(theta=[0.0]))

    @given(st.integers(1, 20), st.integers(0, 2**31))
    def test_r_linear_nodal(self, N, seed):
        c = random_config(np.random.default_rng(seed), N)
        it = build_interpolant("r_linear", c)
        s = np.arange(N + 1) * c.h
        assert np.allclose(it(s), vertices(c), atol=1e-12)

    def test_straight_r_hat_equals_r_linear(self):
        c = Configuration(theta=[0.3] * 5, r1=[1.0, 2.0])
        s = np.linspace(0, 1, 57)
        assert np.allclose(build_interpolant("r_hat", c)(s), build_interpolant("r_linear", c)(s))

    def test_theta_linear_two_links(self):
        # theta_1 at s = 0 and s = h, theta_2 at s = L: the second link runs 0 -> pi/2
        c = Configuration(theta=[0.0, math.pi / 2])
        it = build_interpolant("theta_linear", c)
        assert it(0.75) == pytest.approx(math.pi / 4)
        assert it(0.25) == 0.0 and it(1.0) == pytest.approx(math.pi / 2)

    def test_piecewise_constant(self, rng):
        c, loads = snapshot(rng, 4)
        s = (np.arange(4) + 0.3) * c.h
        assert np.array_equal(build_interpolant("theta_pc", c)(s), c.theta)
        assert np.array_equal(build_interpolant("m_pc", c, loads)(s), loads.m[:4])

    @given(st.integers(1, 15), st.integers(0, 2**31))
    def test_r_hat_integrates_tangent(self, N, seed):
        c = random_config(np.random.default_rng(seed), N)
        it = build_interpolant("r_hat", c)
        th = build_interpolant("theta_linear", c)
        s = np.linspace(0, 1, 23)
        x, w = np.polynomial.legendre.leggauss(40)
        ref = []
        for b in s:
            # integrate the tangent cell by cell to respect the kinks
            edges = np.unique(np.concatenate([np.arange(N + 1) * c.h, [b]]))
            edges = edges[edges <= b]
            tot = np.zeros(2)
            for a0, a1 in zip(edges[:-1], edges[1:]):
                u = a0 + (a1 - a0) * 0.5 * (x + 1)
                t = th(u)
                tot += 0.5 * (a1 - a0) * np.array([w @ np.cos(t), w @ np.sin(t)])
            ref.append(c.r1 + tot)
        assert np.allclose(it(s), ref, atol=1e-11)
        assert np.allclose(np.linalg.norm(it.derivative(s), axis=1), 1.0)


class TestSpaceNorms:
    def test_theta_s_snapshot(self):
        c = Configuration(theta=[0.0, 0.1, 0.3])
        th = build_interpolant("theta_linear", c)
        assert space_norm(th, derivative=True) ** 2 == pytest.approx(0.15, rel=1e-13)
        assert space_norm(th, derivative=True) ** 2 == pytest.approx(2 * elastic_energy(c))

    @given(st.integers(1, 12), st.integers(0, 2**31),
           st.sampled_from(["r_linear", "n_linear", "m_linear", "theta_linear",
                            "theta_pc", "m_pc", "r_hat"]))
    def test_closed_form_matches_quadrature(self, N, seed, kind):
        c, loads = snapshot(np.random.default_rng(seed), N)
        it = build_interpolant(kind, c, loads)

        def sq(s):
            v = np.asarray(it(s))
            return v**2 if v.ndim == 2 else (v**2).sum(-1)

        ref = gauss_integral(sq, N, c.h)
        assert space_norm(it) ** 2 == pytest.approx(ref, rel=1e-10, abs=1e-14)

    def test_h1_adds_derivative(self, rng):
        c, _ = snapshot(rng, 6)
        it = build_interpolant("r_linear", c)
        assert space_norm(it, "H1") ** 2 == pytest.approx(
            space_norm(it) ** 2 + space_norm(it, derivative=True) ** 2)
        assert space_norm(it, derivative=True) == pytest.approx(1.0)

    def test_pc_has_no_derivative(self, rng):
        c, _ = snapshot(rng, 3)
        with pytest.raises(ValueError, match="piecewise constant"):
            space_norm(build_interpolant("theta_pc", c), derivative=True)

    @given(st.integers(2, 30), st.integers(0, 2**31), st.sampled_from(["free", "pinned"]))
    def test_angle_interpolants_close(self, N, seed, bc):
        c, loads = snapshot(np.random.default_rng(seed), N, bc)
        bar = build_interpolant("theta_pc", c)
        lin = build_interpolant("theta_linear", c)
        diff = lin.values[1:] - bar.values  # cellwise (1 - u)(theta_i - theta_{i-1})
        d = math.sqrt(c.h * np.sum(diff**2) / 3)
        mbar = space_norm(build_interpolant("m_pc", c, loads))
        assert d <= c.h / (math.sqrt(3) * c.params.E) * mbar * (1 + 1e-12) + 1e-15

    @given(st.integers(2, 30), st.integers(0, 2**31), st.sampled_from(["free", "pinned"]))
    def test_moment_interpolants_close(self, N, seed, bc):
        c, loads = snapshot(np.random.default_rng(seed), N, bc)
        m_lin = build_interpolant("m_linear", c, loads)
        diff = np.diff(loads.m)  # m^h - m_bar = u (m_{i+1} - m_i)
        d = math.sqrt(c.h * np.sum(diff**2) / 3)
        ms = space_norm(m_lin, derivative=True)
        assert d == pytest.approx(c.h / math.sqrt(3) * ms, rel=1e-12, abs=1e-15)
        assert d <= math.sqrt(c.h / 3) * ms * (1 + 1e-12) + 1e-15


class TestQtNorm:
    def test_tangent_norm_exact(self, arc_family):
        tr = arc_family[10]
        T = tr.times[-1] - tr.times[0]
        for kind in ("r_linear", "r_hat"):
            assert qt_norm(tr, kind, derivative="s") == pytest.approx(math.sqrt(P.L * T), rel=1e-13)

    def test_stationary_velocity_zero(self):
        tr = simulate(Configuration(theta=[0.2] * 5), IntegratorSpec(t_end=1.0, n_samples=5))
        assert qt_norm(tr, "r_linear", derivative="t") == 0.0
        assert torque_term_magnitude(tr) == 0.0

    def test_insufficient_sampling(self):
        tr = simulate(Configuration(theta=[0.2] * 5), IntegratorSpec(t_end=1.0, n_samples=2))
        with pytest.raises(InsufficientSampling):
            qt_norm(tr, "r_linear")

    def test_bad_arguments(self, arc_family):
        with pytest.raises(ValueError):
            qt_norm(arc_family[10], "r_linear", norm="L1")
        with pytest.raises(ValueError):
            qt_norm(arc_family[10], "r_linear", derivative="x")

    def test_time_quadrature(self):
        # a rigid translation has constant norms: the trapezoid sum is exact
        c = Configuration(theta=[0.0, 0.0], r1=[0.0, 0.0])
        tr = simulate(c, IntegratorSpec(t_end=2.0, n_samples=7))
        assert qt_norm(tr, "theta_pc") == 0.0
        assert qt_norm(tr, "r_linear", "L2_Linf") == pytest.approx(math.sqrt(2.0))

    def test_energy_relation(self, arc_family):
        # int ||theta^h_s||^2 dt equals twice the time integral of the energy
        tr = arc_family[20]
        lhs = qt_norm(tr, "theta_linear", derivative="s") ** 2
        rhs = 2 * np.trapezoid(tr.energy / P.E, tr.times)
        assert lhs == pytest.approx(rhs, rel=1e-12)

    def test_m_time_derivative(self, arc_family):
        tr = arc_family[10]
        analytic = qt_norm(tr, "m_linear", derivative="t")
        md = np.gradient(tr.m, tr.times, axis=0)
        assert np.isfinite(analytic) and analytic > 0
        # nodal rates agree with differencing the samples where sampling is fine
        from nlink.analysis import _time_derivative_values

        exact = np.array(_time_derivative_values(tr, "m_linear"))
        k = len(tr) // 2
        assert np.allclose(exact[k], md[k], rtol=5e-2, atol=1e-3 * np.abs(exact[k]).max())


class TestInitialData:
    def test_constant(self):
        c = init_from_curve(constant_profile, (0, 0), 7, P)
        assert np.allclose(c.theta, 0.4)

    def test_linear_two_links(self):
        c = init_from_curve(lambda s: s, (0, 0), 2, P)
        assert np.allclose(c.theta, [0.25, 0.75])

    def test_polynomial_exact(self):
        c = init_from_curve(lambda s: s**9, (0, 0), 3, P)
        edges = np.arange(4) / 3
        exact = (edges[1:] ** 10 - edges[:-1] ** 10) / 10 * 3
        assert np.allclose(c.theta, exact, rtol=1e-13)

    def test_start_point_and_bc(self):
        c = init_from_curve(constant_profile, (1.0, -1.0), 3, P, "pinned", time=0.5)
        assert np.array_equal(c.r1, [1.0, -1.0]) and c.bc.value == "pinned" and c.time == 0.5

    @pytest.mark.parametrize("N", [10, 20, 40])
    def test_energy_bound_arc(self, N):
        c = init_from_curve(arc_profile, (0, 0), N, P)
        assert elastic_energy(c) <= 0.5 * P.E * math.pi**2 * P.L
        assert initial_energy_bound(math.pi, P) == pytest.approx(0.5 * math.pi**2)

    def test_reference_curve_line(self):
        r = reference_curve(constant_profile, [0.0, 0.5, 1.0], (1.0, 0.0))
        assert np.allclose(r, [[1, 0], [1 + 0.5 * math.cos(0.4), 0.5 * math.sin(0.4)],
                               [1 + math.cos(0.4), math.sin(0.4)]])

    def test_reference_curve_circle(self):
        r = reference_curve(lambda s: 2 * math.pi * s, [0.25, 1.0])
        R = 1 / (2 * math.pi)
        assert np.allclose(r, [[R, R], [0, 0]], atol=1e-12)

    def test_initial_error_decreases(self):
        f = functools.partial(lambda s, a: a * math.sin(math.pi * s), a=math.pi / 2)
        e = [initial_data_error(f, init_from_curve(f, (0, 0), N, P)) for N in (10, 20, 40)]
        assert e[0] > e[1] > e[2]
        assert initial_data_error(constant_profile, init_from_curve(constant_profile, (0, 0), 5, P)) < 1e-13


class TestConvergence:
    def test_constant_profile_zero(self):
        spec = IntegratorSpec(t_end=0.01, n_samples=5)
        rep = self_convergence(constant_profile, P, spec, [2, 4], 16)
        # vertices are cumulative sums of different lengths, so r agrees to rounding
        assert np.all(rep.errors["r"] <= 1e-15)
        assert np.all(rep.errors["m"] == 0) and np.all(rep.errors["n"] == 0)

    @pytest.mark.parametrize("Ns", [[10, 10], [20, 10], []])
    def test_ns_validation(self, Ns):
        with pytest.raises(ValueError, match="strictly increasing"):
            self_convergence(arc_profile, P, FAMILY_SPEC, Ns, 80)

    def test_reference_too_coarse(self):
        with pytest.raises(ValueError, match="N_ref"):
            self_convergence(arc_profile, P, FAMILY_SPEC, [5, 10], 20)

    def test_small_family(self):
        spec = IntegratorSpec(t_end=0.02, n_samples=61, sampling="geometric", first_sample=1e-9)
        rep = self_convergence(arc_profile, P, spec, [4, 8, 16], 64)
        for name in ("r", "m", "n"):
            assert rep.monotone[name], (name, rep.errors[name])
        assert rep.orders["r"] >= 1.0 and rep.passed
        rows = list(rep.rows())
        assert [r["N"] for r in rows] == [4, 8, 16] and rows[0]["h"] == 0.25
        d = rep.to_dict()
        assert d["passed"] and "subsequence" in d["notes"]

    def test_workers_match_serial(self):
        spec = IntegratorSpec(t_end=0.01, n_samples=11)
        a = self_convergence(arc_profile, P, spec, [4, 8], 32, workers=1)
        b = self_convergence(arc_profile, P, spec, [4, 8], 32, workers=2)
        for name in a.errors:
            assert np.array_equal(a.errors[name], b.errors[name])

    def test_field_error_needs_shared_times(self, arc_family):
        other = simulate(init_from_curve(arc_profile, (0, 0), 10, P),
                         IntegratorSpec(t_end=0.05, n_samples=11))
        with pytest.raises(ValueError, match="sample times"):
            field_error(other, arc_family[20], "r", 80)

    def test_field_error_self_zero(self, arc_family):
        assert field_error(arc_family[10], arc_family[10], "n", 40) == 0.0

    def test_fit_order(self):
        h = np.array([0.1, 0.05, 0.025])
        assert fit_order(h, 3 * h**2) == pytest.approx(2.0)
        assert fit_order(h, np.zeros(3)) is None


class TestWeakForm:
    def test_stationary_zero(self):
        tr = simulate(Configuration(theta=[0.2] * 6), IntegratorSpec(t_end=1.0, n_samples=5))
        for cell in (False, True):
            res = weak_form_residual(tr, cell_averaged=cell)
            assert all(v == 0.0 for v in res.values())

    @pytest.mark.parametrize("N", [10, 40])
    def test_cell_averaged_exact(self, arc_family, N):
        res = weak_form_residual(arc_family[N], cell_averaged=True)
        smooth = weak_form_residual(arc_family[N])
        for k in res:
            assert res[k] <= 1e-10 * max(smooth[k], 1e-300) + 1e-16

    def test_residuals_decrease(self, arc_family):
        res = [weak_form_residual(arc_family[N]) for N in (10, 20, 40)]
        for k in ("force", "moment", "constitutive"):
            vals = [r[k] for r in res]
            assert vals[0] > vals[1] > vals[2], (k, vals)

    def test_family_is_compactly_supported(self):
        fam = default_test_family(2.0, 0.0, 1.0)
        assert len(fam) == 3
        for phi, psi in fam:
            assert abs(phi(np.array(0.0))) == 0 and abs(phi(np.array(2.0))) < 1e-15
            assert psi(np.array(0.0)) == 0 and psi(np.array(1.0)) == 0

    def test_needs_samples(self):
        tr = simulate(Configuration(theta=[0.0, 0.5]), IntegratorSpec(t_end=0.01, n_samples=2))
        with pytest.raises(InsufficientSampling):
            weak_form_residual(tr)


class TestTorqueTerm:
    def test_decreases_with_slope(self, arc_family):
        Ns = (10, 20, 40, 80)
        vals = [torque_term_magnitude(arc_family[N]) for N in Ns]
        assert all(a > b for a, b in zip(vals, vals[1:])), vals
        assert fit_order(P.L / np.array(Ns), vals) >= 1.0

    def test_definition(self, arc_family):
        tr = arc_family[20]
        expect = tr.h**2 / 12 * P.c_perp * qt_norm(tr, "theta_pc", derivative="t")
        assert torque_term_magnitude(tr) == pytest.approx(expect, rel=1e-15)
