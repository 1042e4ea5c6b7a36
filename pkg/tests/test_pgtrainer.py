import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from narsearch import archspace as asp
from narsearch import controller as ctl
from narsearch import oracles as orc
from narsearch import pgtrainer as pg

from conftest import generic_vocab, random_space


class RandomRewardOracle(orc.Oracle):
    """Deterministic pseudo-random rewards keyed by the architecture."""

    def __init__(self, seed=0):
        self.seed = seed

    def evaluate(self, arch, step):
        h = hash((self.seed, arch.ops, arch.skips, 0)) % 10_000
        return h / 10_000.0


class FailingOracle(orc.Oracle):
    def __init__(self, fail_at):
        self.fail_at = fail_at
        self.count = 0

    def evaluate(self, arch, step):
        if self.count == self.fail_at:
            raise RuntimeError("synthetic oracle crash")
        self.count += 1
        return 0.5


def make_setup(seed=0, n=4, k=3, fixed=False, hidden=8):
    frozen = asp.residual_skip_mask(asp.candidate_edges(n)) if fixed else None
    space = asp.make_space(n, generic_vocab(k), frozen)
    mode = ctl.FIXED_SKIP if fixed else ctl.JOINT
    params = ctl.init_controller(
        ctl.ControllerConfig(hidden=hidden, n_ops=k, n_nodes=n, mode=mode), seed)
    return space, mode, params


class TestCollectBatch:
    def test_single_sample(self):
        space, mode, params = make_setup()
        batch = pg.collect_batch(params, space, mode, RandomRewardOracle(), 1, 0,
                                 np.random.default_rng(0))
        assert batch.n == 1

    def test_bitwise_determinism(self):
        space, mode, params = make_setup()
        oracle = RandomRewardOracle()
        b1 = pg.collect_batch(params, space, mode, oracle, 16, 3, np.random.default_rng(5))
        b2 = pg.collect_batch(params, space, mode, oracle, 16, 3, np.random.default_rng(5))
        assert [s.arch for s in b1.samples] == [s.arch for s in b2.samples]
        assert [s.reward for s in b1.samples] == [s.reward for s in b2.samples]
        assert all(
            d1.log_prob == d2.log_prob
            for s1, s2 in zip(b1.samples, b2.samples)
            for d1, d2 in zip(s1.trace, s2.trace)
        )

    def test_parallel_equals_serial(self):
        space, mode, params = make_setup()
        space_spec = orc.TabularOracleSpec.generate(space, seed=2, n_interactions=3)
        oracle = orc.TabularOracle(space_spec, space)
        serial = pg.collect_batch(params, space, mode, oracle, 64, 0,
                                  np.random.default_rng(9))
        with ThreadPoolExecutor(4) as pool:
            parallel = pg.collect_batch(params, space, mode, oracle, 64, 0,
                                        np.random.default_rng(9), pool=pool)
        assert [s.arch for s in serial.samples] == [s.arch for s in parallel.samples]
        assert [s.reward for s in serial.samples] == [s.reward for s in parallel.samples]

    def test_oracle_failure_carries_sample_index(self):
        space, mode, params = make_setup()
        with pytest.raises(pg.OracleFailure) as err:
            pg.collect_batch(params, space, mode, FailingOracle(fail_at=3), 8, 0,
                             np.random.default_rng(1))
        assert err.value.sample_index == 3

    def test_out_of_range_reward_rejected(self):
        class BadOracle(orc.Oracle):
            def evaluate(self, arch, step):
                return 1.5

        space, mode, params = make_setup()
        with pytest.raises(pg.OracleFailure):
            pg.collect_batch(params, space, mode, BadOracle(), 2, 0,
                             np.random.default_rng(1))


class TestReinforceGradient:
    def test_zero_rewards_zero_gradient(self):
        class Zero(orc.Oracle):
            def evaluate(self, arch, step):
                return 0.0

        space, mode, params = make_setup()
        batch = pg.collect_batch(params, space, mode, Zero(), 8, 0,
                                 np.random.default_rng(0))
        assert np.all(pg.reinforce_gradient(params, batch) == 0.0)

    def test_rewards_equal_to_baseline_zero_gradient(self):
        class Const(orc.Oracle):
            def evaluate(self, arch, step):
                return 0.37

        space, mode, params = make_setup()
        batch = pg.collect_batch(params, space, mode, Const(), 8, 0,
                                 np.random.default_rng(0))
        baseline = pg.BaselineState(ema=0.37, decay=0.9, initialized=True)
        grad = pg.reinforce_gradient(params, batch, baseline)
        assert np.max(np.abs(grad)) < 1e-16

    def test_two_sample_batch_matches_hand_composition(self):
        space, mode, params = make_setup(n=3, k=3)
        batch = pg.collect_batch(params, space, mode, RandomRewardOracle(), 2, 0,
                                 np.random.default_rng(4))
        hand = sum(
            (s.reward / 2.0) * ctl.grad_log_prob(params, space, mode, s.arch)
            for s in batch.samples
        )
        grad = pg.reinforce_gradient(params, batch)
        assert np.max(np.abs(grad - hand)) < 1e-12

    def test_entropy_bonus_changes_gradient(self):
        space, mode, params = make_setup()
        batch = pg.collect_batch(params, space, mode, RandomRewardOracle(), 4, 0,
                                 np.random.default_rng(2))
        g0 = pg.reinforce_gradient(params, batch, entropy_coef=0.0)
        g1 = pg.reinforce_gradient(params, batch, entropy_coef=0.1)
        assert not np.array_equal(g0, g1)

    def test_entropy_gradient_vanishes_at_uniform(self):
        # zero params give uniform distributions, the entropy maximum
        space = asp.make_space(3, generic_vocab(4))
        cfg = ctl.ControllerConfig(hidden=6, n_ops=4, n_nodes=3, mode=ctl.JOINT)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))

        class Zero(orc.Oracle):
            def evaluate(self, arch, step):
                return 0.0

        batch = pg.collect_batch(zero, space, ctl.JOINT, Zero(), 4, 0,
                                 np.random.default_rng(3))
        grad = pg.reinforce_gradient(zero, batch, entropy_coef=1.0)
        assert np.max(np.abs(grad)) < 1e-12


class TestEquivalence:
    def test_reinforce_equals_ce_surrogate(self, rng):
        worst = 0.0
        for trial in range(20):
            space = random_space(rng, fixed_skip=bool(trial % 2))
            mode = ctl.FIXED_SKIP if space.fixed_skip else ctl.JOINT
            params = ctl.init_controller(
                ctl.ControllerConfig(hidden=int(rng.integers(4, 10)),
                                     n_ops=space.n_ops, n_nodes=space.n_nodes,
                                     mode=mode),
                int(rng.integers(2 ** 31)))
            batch = pg.collect_batch(params, space, mode,
                                     RandomRewardOracle(int(rng.integers(100))),
                                     int(rng.integers(1, 8)), 0,
                                     np.random.default_rng(int(rng.integers(2 ** 31))))
            g_pg = pg.reinforce_gradient(params, batch)
            g_ce = pg.ce_surrogate_gradient(params, batch)
            rel = np.abs(g_pg - g_ce) / np.maximum(
                np.maximum(np.abs(g_pg), np.abs(g_ce)), 1e-8)
            worst = max(worst, float(rel.max()))
        assert worst < 1e-10

    def test_all_zero_rewards(self):
        class Zero(orc.Oracle):
            def evaluate(self, arch, step):
                return 0.0

        space, mode, params = make_setup()
        batch = pg.collect_batch(params, space, mode, Zero(), 5, 0,
                                 np.random.default_rng(0))
        assert np.all(pg.ce_surrogate_gradient(params, batch) == 0.0)

    def test_single_sample_unit_reward_is_grad_log_prob(self):
        class One(orc.Oracle):
            def evaluate(self, arch, step):
                return 1.0

        space, mode, params = make_setup(n=3)
        batch = pg.collect_batch(params, space, mode, One(), 1, 0,
                                 np.random.default_rng(8))
        g_ce = pg.ce_surrogate_gradient(params, batch)
        g_ref = ctl.grad_log_prob(params, space, mode, batch.samples[0].arch)
        assert np.max(np.abs(g_ce - g_ref)) < 1e-14

    def test_ce_weights_aggregate_to_assigned_rewards(self):
        # summing each decision group's cross-entropy weights reproduces the
        # per-decision credit table
        from narsearch.reward import assign_rewards

        space, mode, params = make_setup(n=4, k=3)
        batch = pg.collect_batch(params, space, mode, RandomRewardOracle(3), 16, 0,
                                 np.random.default_rng(6))
        table = assign_rewards(batch, space)
        for j in range(space.n_nodes):
            for k in range(space.n_ops):
                weight = sum(s.reward / batch.n for s in batch.samples
                             if s.arch.ops[j] == k)
                assert weight == pytest.approx(table.op_rewards[j, k], abs=1e-15)

    def test_baseline_invariance_by_exact_enumeration(self):
        # sum over all architectures of p(arch) * grad log p(arch) vanishes,
        # so subtracting any constant baseline cannot bias the expectation
        space = asp.make_space(3, generic_vocab(2))  # 8 op combos x 2 skip = 16
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=6, n_ops=2, n_nodes=3, mode=ctl.JOINT), 17)
        acc = np.zeros(params.n_params)
        total_p = 0.0
        for ops in [(a, b, c) for a in range(2) for b in range(2) for c in range(2)]:
            for bit in (0, 1):
                arch = asp.ArchitectureVector(ops, (bit,))
                lp, _ = ctl.log_prob(params, space, ctl.JOINT, arch)
                p = math.exp(lp)
                total_p += p
                acc += p * ctl.grad_log_prob(params, space, ctl.JOINT, arch)
        assert abs(total_p - 1.0) < 1e-10
        for b in (1.0, -3.0, 100.0):
            assert np.max(np.abs(b * acc)) < 1e-10


class TestUpdate:
    def test_zero_gradient_leaves_params(self):
        _, _, params = make_setup()
        state = pg.AdamState.init(params.n_params)
        new_params, _ = pg.update(params, np.zeros(params.n_params), state)
        assert np.array_equal(new_params.flat, params.flat)

    def test_identical_calls_identical_results(self):
        _, _, params = make_setup()
        grad = np.random.default_rng(0).normal(size=params.n_params)
        s0 = pg.AdamState.init(params.n_params)
        p1, s1 = pg.update(params, grad, s0)
        p2, s2 = pg.update(params, grad, pg.AdamState.init(params.n_params))
        assert np.array_equal(p1.flat, p2.flat)
        assert np.array_equal(s1.m, s2.m)

    def test_ascent_on_quadratic_converges(self):
        # maximize -(x - 3)^2 coordinate-wise via the Adam ascent step
        cfg = ctl.ControllerConfig(hidden=1, n_ops=2, n_nodes=1)
        p = ctl.param_count(cfg)
        params = ctl.ControllerParams(cfg, np.zeros(p))
        state = pg.AdamState.init(p)
        for _ in range(4000):
            grad = 2.0 * (3.0 - params.flat)
            params, state = pg.update(params, grad, state, lr=0.01)
        assert np.max(np.abs(params.flat - 3.0)) < 0.05

    def test_non_finite_gradient_rejected(self):
        _, _, params = make_setup()
        before = params.flat.copy()
        grad = np.zeros(params.n_params)
        grad[0] = np.nan
        with pytest.raises(pg.NonFiniteGradientError):
            pg.update(params, grad, pg.AdamState.init(params.n_params))
        assert np.array_equal(params.flat, before)

    def test_wrong_length_rejected(self):
        _, _, params = make_setup()
        with pytest.raises(pg.TrainerError):
            pg.update(params, np.zeros(3), pg.AdamState.init(params.n_params))


class TestBaseline:
    def _batch(self, reward):
        class Const(orc.Oracle):
            def evaluate(self, arch, step):
                return reward

        space, mode, params = make_setup()
        return pg.collect_batch(params, space, mode, Const(), 4, 0,
                                np.random.default_rng(0))

    def test_first_update_sets_mean(self):
        state = pg.update_baseline(pg.BaselineState(decay=0.9), self._batch(0.5))
        assert state.ema == 0.5 and state.initialized

    def test_ema_arithmetic(self):
        state = pg.BaselineState(ema=0.5, decay=0.9, initialized=True)
        state = pg.update_baseline(state, self._batch(1.0))
        assert state.ema == pytest.approx(0.55, abs=1e-15)

    def test_constant_rewards_fixed_point(self):
        state = pg.BaselineState(decay=0.9)
        for _ in range(200):
            state = pg.update_baseline(state, self._batch(0.8))
        assert state.ema == pytest.approx(0.8, abs=1e-9)

    def test_uninitialized_contributes_zero(self):
        assert pg.BaselineState(decay=0.9).value == 0.0


class TestGradLog:
    def test_zero_gradient(self):
        _, _, params = make_setup()
        rec = pg.log_grad_magnitudes(np.zeros(params.n_params), params, 0)
        assert rec.op_head_grad_norm == 0.0 and rec.skip_head_grad_norm == 0.0

    def test_hand_built_sparse_gradient(self):
        _, _, params = make_setup()
        grad = np.zeros(params.n_params)
        grad[params.op_head_slice][0] = 3.0
        grad[params.op_head_slice][1] = 4.0
        grad[params.skip_head_slice][0] = -2.0
        rec = pg.log_grad_magnitudes(grad, params, 7)
        assert rec.op_head_grad_norm == pytest.approx(5.0)
        assert rec.skip_head_grad_norm == pytest.approx(2.0)
        assert rec.step == 7

    def test_partition_covers_heads(self):
        _, _, params = make_setup()
        grad = np.random.default_rng(3).normal(size=params.n_params)
        rec = pg.log_grad_magnitudes(grad, params, 0)
        both = math.sqrt(rec.op_head_grad_norm ** 2 + rec.skip_head_grad_norm ** 2)
        heads = np.concatenate([grad[params.op_head_slice], grad[params.skip_head_slice]])
        assert both == pytest.approx(float(np.linalg.norm(heads)))

    def test_fixed_skip_mode_skip_norm_always_zero(self):
        space, mode, params = make_setup(fixed=True)
        oracle = RandomRewardOracle()
        for step in range(5):
            batch = pg.collect_batch(params, space, mode, oracle, 8, step,
                                     np.random.default_rng(step))
            grad = pg.reinforce_gradient(params, batch)
            rec = pg.log_grad_magnitudes(grad, params, step)
            assert rec.skip_head_grad_norm == 0.0

    def test_csv_format(self, tmp_path):
        log = pg.GradLog([pg.GradRecord(0, 0.5, 0.25), pg.GradRecord(1, 0.125, 0.0)])
        path = tmp_path / "gradlog.csv"
        log.write_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "step,op_grad_norm,skip_grad_norm"
        assert lines[1] == "0,0.5,0.25"


class TestTrainingLoop:
    def test_pure_function_of_seed(self):
        space, mode, params = make_setup(fixed=True)
        spec = orc.TabularOracleSpec.generate(space, seed=5, n_interactions=2)

        def run():
            oracle = orc.TabularOracle(spec, space)
            return pg.run_reinforce(
                params, space, mode, oracle, updates=20, n_samples=8,
                seed_seq=np.random.SeedSequence(77))

        o1, o2 = run(), run()
        assert np.array_equal(o1.params.flat, o2.params.flat)
        assert o1.history == o2.history

    def test_best_so_far_non_decreasing(self):
        space, mode, params = make_setup(fixed=True)
        spec = orc.TabularOracleSpec.generate(space, seed=5, n_interactions=2)
        outcome = pg.run_reinforce(
            params, space, mode, orc.TabularOracle(spec, space), updates=30,
            n_samples=8, seed_seq=np.random.SeedSequence(3))
        bests = [h.best_so_far for h in outcome.history]
        assert all(a <= b for a, b in zip(bests, bests[1:]))
        assert outcome.best_reward == bests[-1]
