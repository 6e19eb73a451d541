# Unit tests for sample-averaged model estimation and n-hop synthesis.
import numpy as np
import pytest

from nhop_eql.environments import (
    CliffWalkSpec,
    ErdosRenyiSpec,
    build_cliffwalk_env,
    build_er_env,
)
from nhop_eql.estimation import (
    SamplingConfig,
    build_multiscale_envs,
    estimate_model,
    estimation_error,
    select_orders,
)
from nhop_eql.mdp import ProbabilityTransitionTensor, matrix_power_ptt


def rng_for(seed):
    return np.random.default_rng(np.random.SeedSequence([seed, 0xE57]))


class TestSamplingConfig:
    def test_defaults_order_set(self):
        cfg = SamplingConfig(num_environments=3)
        assert cfg.order_set == (1, 2, 3)

    def test_order_set_must_contain_one(self):
        with pytest.raises(ValueError):
            SamplingConfig(order_set=(2, 3, 4, 5))

    def test_order_exceeding_k_allowed(self):
        cfg = SamplingConfig(num_environments=4, order_set=(1, 2, 3, 5))
        assert cfg.order_set == (1, 2, 3, 5)

    def test_duplicate_orders_rejected(self):
        with pytest.raises(ValueError):
            SamplingConfig(order_set=(1, 2, 2, 3))

    def test_too_few_environments(self):
        with pytest.raises(ValueError):
            SamplingConfig(num_environments=1)


class TestEstimateModel:
    def test_deterministic_env_recovers_kernel(self):
        env = build_cliffwalk_env(CliffWalkSpec(rows=2, cols=2))
        cfg = SamplingConfig(min_visits=2000, num_environments=2,
                             max_total_samples=200_000)
        model = estimate_model(env, cfg, rng_for(0))
        assert model.complete
        # prior mass 1/S over >= 2000 observations per visited transition
        assert estimation_error(env.ptt, model.p_hat) < 0.01
        np.testing.assert_allclose(model.c_hat.expected_costs,
                                   env.costs.expected_costs, atol=1e-12)

    def test_incomplete_when_cap_hit(self):
        env = build_er_env(ErdosRenyiSpec(num_states=10, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=10_000, num_environments=2,
                             max_total_samples=500)
        model = estimate_model(env, cfg, rng_for(1))
        assert not model.complete
        assert model.samples_used == 500

    def test_p_hat_valid_even_with_no_samples(self):
        env = build_er_env(ErdosRenyiSpec(num_states=6, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=1, num_environments=2, max_total_samples=1)
        model = estimate_model(env, cfg, rng_for(2))
        np.testing.assert_allclose(model.p_hat.entries.sum(axis=1), 1.0, atol=1e-9)

    def test_counts_match_samples_used(self):
        env = build_er_env(ErdosRenyiSpec(num_states=8, num_actions=2, seed=9))
        cfg = SamplingConfig(min_visits=5, num_environments=2,
                             max_total_samples=3000)
        model = estimate_model(env, cfg, rng_for(3))
        assert model.counts.sum() == model.samples_used

    def test_milestone_callbacks_fire_in_order(self):
        env = build_er_env(ErdosRenyiSpec(num_states=6, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=50, num_environments=2,
                             max_total_samples=10_000)
        seen = []
        estimate_model(env, cfg, rng_for(4), milestones=[50, 200, 800],
                       on_milestone=lambda n, m: seen.append(n))
        assert seen == sorted(seen)
        assert len(seen) == 3

    def test_error_decreases_with_more_visits(self):
        env = build_er_env(ErdosRenyiSpec(num_states=6, num_actions=2, seed=3))
        errors = []
        for v in (5, 50, 500):
            cfg = SamplingConfig(min_visits=v, num_environments=2,
                                 max_total_samples=500_000)
            model = estimate_model(env, cfg, rng_for(5))
            errors.append(estimation_error(env.ptt, model.p_hat))
        assert errors[0] > errors[1] > errors[2]


class TestBuildMultiscaleEnvs:
    def test_single_order_is_identity(self):
        env = build_er_env(ErdosRenyiSpec(num_states=6, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=20, num_environments=2,
                             max_total_samples=100_000)
        model = estimate_model(env, cfg, rng_for(6))
        envs = build_multiscale_envs(model, (1,))
        assert envs[0].ptt is model.p_hat
        assert envs[0].label == 1

    def test_power_matches_hand_squared_matrix(self):
        env = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=20, num_environments=2,
                             max_total_samples=100_000)
        model = estimate_model(env, cfg, rng_for(7))
        envs = build_multiscale_envs(model, (1, 2))
        expected = matrix_power_ptt(model.p_hat, 2)
        np.testing.assert_array_equal(envs[1].ptt.entries, expected.entries)

    def test_shared_costs(self):
        env = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        cfg = SamplingConfig(min_visits=20, num_environments=2,
                             max_total_samples=100_000)
        model = estimate_model(env, cfg, rng_for(8))
        envs = build_multiscale_envs(model, (1, 2, 3))
        assert all(e.costs is model.c_hat for e in envs)


class TestEstimationError:
    def test_identical_is_zero(self):
        env = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        assert estimation_error(env.ptt, env.ptt) == 0.0

    def test_hand_frobenius(self):
        # single action, difference +-0.1 in 4 cells: sqrt(4 * 0.01) = 0.2
        base = np.eye(4)
        perturbed = base.copy()
        perturbed[0, 0] -= 0.1
        perturbed[0, 1] += 0.1
        perturbed[1, 1] -= 0.1
        perturbed[1, 0] += 0.1
        P = ProbabilityTransitionTensor(base[:, :, None])
        Q = ProbabilityTransitionTensor(perturbed[:, :, None])
        assert estimation_error(P, Q) == pytest.approx(0.2)

    def test_symmetric(self):
        a = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        b = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=4))
        assert estimation_error(a.ptt, b.ptt) == estimation_error(b.ptt, a.ptt)

    def test_spectral_at_most_frobenius(self):
        a = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        b = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=4))
        assert estimation_error(a.ptt, b.ptt, "spectral") <= estimation_error(a.ptt, b.ptt)

    def test_dimension_mismatch(self):
        a = build_er_env(ErdosRenyiSpec(num_states=5, num_actions=2, seed=3))
        b = build_er_env(ErdosRenyiSpec(num_states=6, num_actions=2, seed=3))
        with pytest.raises(ValueError):
            estimation_error(a.ptt, b.ptt)


class TestSelectOrders:
    def test_four_of_eight(self):
        assert select_orders(4, 8) == (1, 2, 3, 5)

    def test_five_of_eight(self):
        assert select_orders(5, 8) == (1, 2, 3, 5, 7)

    def test_minimum(self):
        assert select_orders(2, 3) == (1, 2)

    def test_skips_power_of_two_multiples(self):
        orders = select_orders(6, 30)
        # 4=2*2, 6=3*2, 8=2*4, 10=5*2, 12=3*4 all excluded
        assert 4 not in orders and 6 not in orders and 10 not in orders

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            select_orders(1, 5)
        with pytest.raises(ValueError):
            select_orders(4, 3)
