import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kinwass import transport
from kinwass.transport import (EmpiricalMeasure, SinkhornError, SizeCapError,
                               TransportPlan, phase_cost, pushforward_costs,
                               sinkhorn_wp, torus_dist, wasserstein_p)


def uniform_cloud(rng, n, d=1, domain="torus"):
    return EmpiricalMeasure(x=rng.random((n, d)), v=rng.normal(size=(n, d)),
                            w=np.full(n, 1.0 / n), domain=domain)


def brute_force_wpp(mu, nu, p):
    """Optimal total cost by enumerating permutations (equal weights)."""
    cpos, cvel = transport.cost_matrices(mu, nu, p)
    total = cpos + cvel
    n = mu.n
    best = math.inf
    for perm in itertools.permutations(range(n)):
        best = min(best, sum(total[i, perm[i]] for i in range(n)) / n)
    return best


class TestValidation:
    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(x=np.zeros((3, 1)), v=np.zeros((2, 1)),
                             w=np.full(3, 1 / 3))

    def test_weights_must_normalize(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(x=np.zeros((2, 1)), v=np.zeros((2, 1)),
                             w=np.array([0.5, 0.6]))

    def test_negative_weights(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(x=np.zeros((2, 1)), v=np.zeros((2, 1)),
                             w=np.array([1.5, -0.5]))

    def test_torus_range(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(x=np.array([[1.2]]), v=np.zeros((1, 1)),
                             w=np.array([1.0]))
        # allowed off-torus when euclidean
        EmpiricalMeasure(x=np.array([[1.2]]), v=np.zeros((1, 1)),
                         w=np.array([1.0]), domain="euclidean")

    def test_bad_domain(self):
        with pytest.raises(ValueError):
            EmpiricalMeasure(x=np.zeros((1, 1)), v=np.zeros((1, 1)),
                             w=np.array([1.0]), domain="plane")

    def test_incompatible_measures(self, rng):
        mu = uniform_cloud(rng, 4, d=1)
        nu = uniform_cloud(rng, 4, d=2)
        with pytest.raises(ValueError):
            wasserstein_p(mu, nu, 2)


class TestCosts:
    def test_torus_wraparound(self):
        assert torus_dist([0.1], [0.9]) == pytest.approx(0.2)
        assert torus_dist([0.25], [0.5]) == pytest.approx(0.25)

    def test_torus_2d(self):
        assert torus_dist([0.05, 0.0], [0.95, 0.0]) == pytest.approx(0.1)

    def test_phase_cost_split(self):
        cp, cv = phase_cost(([0.1], [1.0]), ([0.9], [0.5]), 2)
        assert cp == pytest.approx(0.04)
        assert cv == pytest.approx(0.25)

    def test_phase_cost_euclidean(self):
        cp, _ = phase_cost(([0.1], [0.0]), ([0.9], [0.0]), 1,
                           domain="euclidean")
        assert cp == pytest.approx(0.8)

    def test_cost_matrices_agree_with_phase_cost(self, rng):
        mu = uniform_cloud(rng, 5)
        nu = uniform_cloud(rng, 5)
        cpos, cvel = transport.cost_matrices(mu, nu, 3)
        cp, cv = phase_cost((mu.x[2], mu.v[2]), (nu.x[4], nu.v[4]), 3)
        assert cpos[2, 4] == pytest.approx(cp, rel=1e-12)
        assert cvel[2, 4] == pytest.approx(cv, rel=1e-12)


class TestExactSolvers:
    @pytest.mark.parametrize("p", [1, 2, 3])
    def test_assignment_matches_brute_force(self, rng, p):
        for _ in range(5):
            mu = uniform_cloud(rng, 6)
            nu = uniform_cloud(rng, 6)
            val, plan = wasserstein_p(mu, nu, p)
            assert plan.total_cost() == pytest.approx(
                brute_force_wpp(mu, nu, p), rel=1e-12)
            assert val == pytest.approx(plan.total_cost() ** (1 / p))
            assert plan.gap == 0.0 and not plan.approximate

    def test_identical_clouds_zero(self, rng):
        mu = uniform_cloud(rng, 16)
        val, plan = wasserstein_p(mu, mu, 2)
        assert val == 0.0
        assert plan.cost_pos == 0.0 and plan.cost_vel == 0.0

    def test_lp_unequal_weights(self, rng):
        w = rng.random(7)
        w /= math.fsum(w)
        mu = EmpiricalMeasure(x=rng.random((7, 1)),
                              v=rng.normal(size=(7, 1)), w=w)
        nu = uniform_cloud(rng, 5)
        val, plan = wasserstein_p(mu, nu, 2)
        assert val > 0
        em, en = plan.marginal_errors(mu, nu)
        assert em < 1e-10 and en < 1e-10

    def test_lp_matches_assignment_on_equal_weights(self, rng):
        mu = uniform_cloud(rng, 6)
        nu = uniform_cloud(rng, 6)
        val, _ = wasserstein_p(mu, nu, 2)
        cpos, cvel = transport.cost_matrices(mu, nu, 2)
        plan = transport._solve_transport_lp(mu, nu, cpos + cvel,
                                             cpos, cvel, 2)
        assert plan.value() == pytest.approx(val, rel=1e-9)

    def test_triangle_inequality(self, rng):
        a = uniform_cloud(rng, 8)
        b = uniform_cloud(rng, 8)
        c = uniform_cloud(rng, 8)
        dab, _ = wasserstein_p(a, b, 2)
        dbc, _ = wasserstein_p(b, c, 2)
        dac, _ = wasserstein_p(a, c, 2)
        assert dac <= dab + dbc + 1e-12

    def test_size_caps(self, rng):
        n = transport.GENERAL_CAP + 1
        w = rng.random(n)
        w /= math.fsum(w)
        mu = EmpiricalMeasure(x=rng.random((n, 1)),
                              v=rng.normal(size=(n, 1)), w=w)
        nu = uniform_cloud(rng, 8)
        with pytest.raises(SizeCapError):
            wasserstein_p(mu, nu, 2)


class TestSinkhorn:
    def test_coincident_particles_shortcut(self):
        mu = EmpiricalMeasure(x=np.full((4, 1), 0.25), v=np.zeros((4, 1)),
                              w=np.full(4, 0.25))
        val, plan = sinkhorn_wp(mu, mu, 2)
        assert val == 0.0
        assert plan.gap == 0.0

    def test_identical_clouds_small_value(self, rng):
        mu = uniform_cloud(rng, 32)
        val, plan = sinkhorn_wp(mu, mu, 2)
        # entropic blur keeps this above 0 but the certificate must
        # bracket the true optimum (which is exactly 0)
        assert val < 0.05
        assert plan.total_cost() - plan.gap <= 1e-12

    def test_accuracy_vs_exact(self, rng):
        mu = uniform_cloud(rng, 64)
        nu = uniform_cloud(rng, 64)
        exact, _ = wasserstein_p(mu, nu, 2)
        approx, plan = sinkhorn_wp(mu, nu, 2)
        assert approx == pytest.approx(exact, rel=0.02)
        # rounded plan is feasible: approximate cost upper-bounds exact
        assert plan.total_cost() >= exact ** 2 - 1e-12

    def test_marginals_exact_after_rounding(self, rng):
        mu = uniform_cloud(rng, 48)
        nu = uniform_cloud(rng, 48)
        _, plan = sinkhorn_wp(mu, nu, 2)
        em, en = plan.marginal_errors(mu, nu)
        assert em < 1e-10 and en < 1e-10

    def test_gap_certificate(self, rng):
        mu = uniform_cloud(rng, 64)
        nu = uniform_cloud(rng, 64)
        exact, _ = wasserstein_p(mu, nu, 2)
        _, plan = sinkhorn_wp(mu, nu, 2)
        assert plan.gap >= 0.0
        assert plan.total_cost() - plan.gap <= exact ** 2 + 1e-12

    def test_epsilon_to_zero_converges(self, rng):
        mu = uniform_cloud(rng, 24)
        nu = uniform_cloud(rng, 24)
        exact, _ = wasserstein_p(mu, nu, 2)
        errs = []
        cpos, cvel = transport.cost_matrices(mu, nu, 2)
        cmax = float(np.max(cpos + cvel))
        for final in (1e-1, 1e-2, 1e-3):
            sched = cmax * np.geomspace(0.25, final, 8)
            val, _ = sinkhorn_wp(mu, nu, 2, epsilon_schedule=sched)
            errs.append(abs(val - exact))
        assert errs[2] < errs[0]
        assert errs[2] < 0.02 * exact

    def test_bad_schedule(self, rng):
        mu = uniform_cloud(rng, 8)
        nu = uniform_cloud(rng, 8)
        with pytest.raises(ValueError):
            sinkhorn_wp(mu, nu, 2, epsilon_schedule=[0.1, 0.2])
        with pytest.raises(ValueError):
            sinkhorn_wp(mu, nu, 2, epsilon_schedule=[0.1, 0.0])

    def test_unreachable_tolerance_raises(self, rng):
        mu = uniform_cloud(rng, 16)
        nu = uniform_cloud(rng, 16)
        with pytest.raises(SinkhornError) as exc:
            sinkhorn_wp(mu, nu, 2, epsilon_schedule=[0.5], max_iter=2,
                        tol=1e-14)
        assert exc.value.residual > 0


class TestCsvRoundtrips:
    def test_measure_roundtrip(self, rng, tmp_path):
        mu = uniform_cloud(rng, 10, d=2)
        path = tmp_path / "mu.csv"
        mu.to_csv(path, header_lines=("config_hash=abc", "seed=1"))
        text = path.read_text()
        assert text.startswith("# config_hash=abc\n# seed=1\n")
        back = EmpiricalMeasure.from_csv(path)
        np.testing.assert_array_equal(back.x, mu.x)
        np.testing.assert_array_equal(back.v, mu.v)
        np.testing.assert_array_equal(back.w, mu.w)

    def test_plan_roundtrip(self, rng, tmp_path):
        mu = uniform_cloud(rng, 6)
        nu = uniform_cloud(rng, 6)
        _, plan = wasserstein_p(mu, nu, 2)
        path = tmp_path / "plan.csv"
        plan.to_csv(path)
        back = TransportPlan.from_csv(path, p=2)
        np.testing.assert_array_equal(back.i, plan.i)
        np.testing.assert_array_equal(back.j, plan.j)
        np.testing.assert_array_equal(back.mass, plan.mass)


class TestPushforward:
    def test_initial_flows_reproduce_plan_costs(self, rng):
        mu = uniform_cloud(rng, 8)
        nu = uniform_cloud(rng, 8)
        _, plan = wasserstein_p(mu, nu, 2)
        cx, cv = pushforward_costs(plan, mu.x, mu.v, nu.x, nu.v, 2)
        assert cx == pytest.approx(plan.cost_pos, rel=1e-12, abs=1e-15)
        assert cv == pytest.approx(plan.cost_vel, rel=1e-12, abs=1e-15)

    def test_velocity_shift_exact(self, rng):
        mu = uniform_cloud(rng, 8)
        _, plan = wasserstein_p(mu, mu, 2)
        delta = 1e-3
        cx, cv = pushforward_costs(plan, mu.x, mu.v, mu.x, mu.v + delta, 2)
        assert cx == 0.0
        assert cv == pytest.approx(delta ** 2, rel=1e-12)

    def test_index_bounds(self, rng):
        mu = uniform_cloud(rng, 8)
        _, plan = wasserstein_p(mu, mu, 2)
        with pytest.raises(ValueError):
            pushforward_costs(plan, mu.x[:4], mu.v[:4], mu.x, mu.v, 2)


@st.composite
def small_clouds(draw):
    n = draw(st.integers(min_value=2, max_value=5))
    coords = st.floats(min_value=0.0, max_value=0.999,
                       allow_nan=False, allow_infinity=False)
    vels = st.floats(min_value=-2.0, max_value=2.0,
                     allow_nan=False, allow_infinity=False)
    x1 = draw(st.lists(coords, min_size=n, max_size=n))
    v1 = draw(st.lists(vels, min_size=n, max_size=n))
    x2 = draw(st.lists(coords, min_size=n, max_size=n))
    v2 = draw(st.lists(vels, min_size=n, max_size=n))
    w = np.full(n, 1.0 / n)
    return (EmpiricalMeasure(x=np.array(x1)[:, None],
                             v=np.array(v1)[:, None], w=w),
            EmpiricalMeasure(x=np.array(x2)[:, None],
                             v=np.array(v2)[:, None], w=w))


class TestProperties:
    @given(pair=small_clouds())
    @settings(max_examples=40, deadline=None)
    def test_symmetry_and_nonnegativity(self, pair):
        mu, nu = pair
        d1, _ = wasserstein_p(mu, nu, 2)
        d2, _ = wasserstein_p(nu, mu, 2)
        assert d1 >= 0
        assert d1 == pytest.approx(d2, rel=1e-9, abs=1e-12)

    @given(pair=small_clouds())
    @settings(max_examples=25, deadline=None)
    def test_matches_brute_force(self, pair):
        mu, nu = pair
        _, plan = wasserstein_p(mu, nu, 2)
        assert plan.total_cost() == pytest.approx(
            brute_force_wpp(mu, nu, 2), rel=1e-9, abs=1e-12)
