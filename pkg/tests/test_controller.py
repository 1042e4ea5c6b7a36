import math

import numpy as np
import pytest

from narsearch import archspace as asp
from narsearch import controller as ctl

from conftest import generic_vocab, random_space


def small_space(n=4, k=4, fixed=False):
    frozen = None
    if fixed:
        frozen = asp.residual_skip_mask(asp.candidate_edges(n))
    return asp.make_space(n, generic_vocab(k), frozen)


class TestInit:
    def test_deterministic(self):
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4)
        a = ctl.init_controller(cfg, 42)
        b = ctl.init_controller(cfg, 42)
        assert np.array_equal(a.flat, b.flat)

    def test_seeds_differ(self):
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4)
        assert not np.array_equal(ctl.init_controller(cfg, 1).flat,
                                  ctl.init_controller(cfg, 2).flat)

    def test_param_count_hand_derivation(self):
        # H=8, E=8, K=4: embeddings (1 start + 4 ops + 2 skip values) x 8 = 56;
        # LSTM 32x8 + 32x8 + 32 = 544; op head 4x8 + 4 = 36; skip head 2x8 + 2 = 18.
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4)
        assert ctl.param_count(cfg) == 56 + 544 + 36 + 18 == 654
        assert ctl.init_controller(cfg, 0).flat.shape == (654,)

    def test_init_range(self):
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4)
        flat = ctl.init_controller(cfg, 7).flat
        assert np.all(np.abs(flat) <= 0.1)

    def test_flat_and_views_alias(self):
        cfg = ctl.ControllerConfig(hidden=4, n_ops=3, n_nodes=2)
        params = ctl.init_controller(cfg, 0)
        params.flat[:] = 0.0
        params.flat[0] = 5.0
        assert params.emb[0, 0] == 5.0
        params.w_op[0, 0] = -3.0
        assert params.flat[params.op_head_slice][0] == -3.0

    def test_head_slices_cover_heads_exactly(self):
        cfg = ctl.ControllerConfig(hidden=4, n_ops=3, n_nodes=2)
        params = ctl.init_controller(cfg, 0)
        k, h = cfg.n_ops, cfg.hidden
        assert params.op_head_slice.stop - params.op_head_slice.start == k * (h + 1)
        assert params.skip_head_slice.stop - params.skip_head_slice.start == 2 * (h + 1)
        assert params.op_head_slice.stop == params.skip_head_slice.start


class TestSampling:
    def test_zero_params_uniform(self):
        space = small_space(fixed=False)
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.JOINT)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        _, trace = ctl.sample(zero, space, ctl.JOINT, np.random.default_rng(0))
        for dec in trace:
            expected = 0.25 if dec.kind == "op" else 0.5
            assert np.allclose(dec.probs, expected, atol=1e-15)

    def test_fixed_skip_copies_mask(self):
        space = small_space(fixed=True)
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.FIXED_SKIP)
        params = ctl.init_controller(cfg, 3)
        for seed in range(20):
            arch, trace = ctl.sample(params, space, ctl.FIXED_SKIP, np.random.default_rng(seed))
            assert arch.skips == space.frozen_skips
            assert all(d.kind == "op" for d in trace)

    def test_sample_is_deterministic_in_rng_state(self):
        space = small_space()
        params = ctl.init_controller(ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4), 3)
        a1, t1 = ctl.sample(params, space, ctl.JOINT, np.random.default_rng(99))
        a2, t2 = ctl.sample(params, space, ctl.JOINT, np.random.default_rng(99))
        assert a1 == a2
        assert [d.log_prob for d in t1] == [d.log_prob for d in t2]

    def test_trace_distributions_normalized(self, rng):
        for trial in range(10):
            space = random_space(rng, fixed_skip=bool(trial % 2))
            mode = ctl.FIXED_SKIP if space.fixed_skip else ctl.JOINT
            cfg = ctl.ControllerConfig(hidden=6, n_ops=space.n_ops,
                                       n_nodes=space.n_nodes, mode=mode)
            params = ctl.init_controller(cfg, int(rng.integers(2 ** 31)))
            _, trace = ctl.sample(params, space, mode, np.random.default_rng(trial))
            for dec in trace:
                assert abs(sum(dec.probs) - 1.0) < 1e-12
                assert all(p > 0 for p in dec.probs)
                assert abs(dec.log_prob - math.log(dec.probs[dec.choice])) < 1e-12

    def test_empirical_frequencies_match_log_probs(self):
        # tiny enumerable space: frequencies of whole architectures over 1e5
        # draws agree with exp(log_prob) within 3 standard errors
        space = asp.make_space(2, generic_vocab(3), frozen_skips=())
        cfg = ctl.ControllerConfig(hidden=6, n_ops=3, n_nodes=2, mode=ctl.FIXED_SKIP)
        params = ctl.init_controller(cfg, 12)
        m = 100_000
        rngs = np.random.default_rng(7).spawn(m)
        archs, _, _ = ctl.sample_batch(params, space, ctl.FIXED_SKIP, rngs)
        counts = {}
        for a in archs:
            counts[a.ops] = counts.get(a.ops, 0) + 1
        for ops in [(i, j) for i in range(3) for j in range(3)]:
            arch = asp.ArchitectureVector(ops, ())
            p = math.exp(ctl.log_prob(params, space, ctl.FIXED_SKIP, arch)[0])
            freq = counts.get(ops, 0) / m
            se = math.sqrt(p * (1 - p) / m)
            assert abs(freq - p) < 3 * se + 1e-12, (ops, freq, p)

    def test_batch_matches_per_sample_generators(self):
        space = small_space()
        params = ctl.init_controller(ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4), 5)
        parent = np.random.default_rng(31)
        rngs = parent.spawn(6)
        archs, _, _ = ctl.sample_batch(params, space, ctl.JOINT, rngs)
        rngs2 = np.random.default_rng(31).spawn(6)
        singles = [ctl.sample(params, space, ctl.JOINT, r)[0] for r in rngs2]
        assert archs == singles


class TestLogProb:
    def test_uniform_fixed_skip(self):
        space = asp.make_space(2, generic_vocab(4), frozen_skips=())
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=2, mode=ctl.FIXED_SKIP)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        total, _ = ctl.log_prob(zero, space, ctl.FIXED_SKIP, asp.ArchitectureVector((1, 3), ()))
        assert abs(total - 2 * math.log(0.25)) < 1e-12

    def test_uniform_joint_counts_decisions(self):
        # 4 nodes, K=4, 3 candidate edges: 4 operator + 3 skip decisions
        space = small_space(n=4, k=4)
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.JOINT)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        arch = asp.ArchitectureVector((0, 1, 2, 3), (1, 0, 1))
        total, trace = ctl.log_prob(zero, space, ctl.JOINT, arch)
        assert abs(total - (4 * math.log(0.25) + 3 * math.log(0.5))) < 1e-12
        assert len(trace) == 7

    def test_sample_then_score_identical(self, rng):
        for trial in range(10):
            space = random_space(rng, fixed_skip=bool(trial % 2))
            mode = ctl.FIXED_SKIP if space.fixed_skip else ctl.JOINT
            params = ctl.init_controller(
                ctl.ControllerConfig(hidden=7, n_ops=space.n_ops,
                                     n_nodes=space.n_nodes, mode=mode),
                int(rng.integers(2 ** 31)))
            arch, trace = ctl.sample(params, space, mode, np.random.default_rng(trial))
            total, trace2 = ctl.log_prob(params, space, mode, arch)
            assert total == pytest.approx(sum(d.log_prob for d in trace), abs=1e-12)
            assert [d.choice for d in trace] == [d.choice for d in trace2]

    def test_probabilities_sum_to_one_over_space(self):
        # n=2, K=2 fixed-skip space has exactly 4 architectures
        space = asp.make_space(2, generic_vocab(2), frozen_skips=())
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=12, n_ops=2, n_nodes=2, mode=ctl.FIXED_SKIP), 9)
        total = sum(
            math.exp(ctl.log_prob(params, space, ctl.FIXED_SKIP,
                                  asp.ArchitectureVector((i, j), ()))[0])
            for i in range(2) for j in range(2)
        )
        assert abs(total - 1.0) < 1e-10

    def test_invalid_arch_rejected(self):
        space = small_space(fixed=True)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=4, n_ops=4, n_nodes=4, mode=ctl.FIXED_SKIP), 0)
        bad = asp.ArchitectureVector((0, 0, 0, 9), space.frozen_skips)
        with pytest.raises(ctl.InvalidArchitectureError):
            ctl.log_prob(params, space, ctl.FIXED_SKIP, bad)

    def test_fixed_skip_requires_mask(self):
        space = small_space(fixed=False)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=4, n_ops=4, n_nodes=4), 0)
        with pytest.raises(ctl.ControllerError):
            ctl.sample(params, space, ctl.FIXED_SKIP, np.random.default_rng(0))


class TestGradients:
    def test_finite_difference_random_points(self, rng):
        errs = []
        for trial in range(8):
            space = random_space(rng, fixed_skip=bool(trial % 2), n_range=(2, 5), k_range=(2, 5))
            mode = ctl.FIXED_SKIP if space.fixed_skip else ctl.JOINT
            params = ctl.init_controller(
                ctl.ControllerConfig(hidden=int(rng.integers(3, 8)), n_ops=space.n_ops,
                                     n_nodes=space.n_nodes, mode=mode),
                int(rng.integers(2 ** 31)))
            arch, _ = ctl.sample(params, space, mode, np.random.default_rng(trial))
            errs.append(ctl.finite_diff_check(params, space, mode, arch, h=1e-6))
        assert max(errs) < 1e-5

    def test_finite_difference_zero_point(self):
        space = small_space(n=3, k=4)
        cfg = ctl.ControllerConfig(hidden=6, n_ops=4, n_nodes=3, mode=ctl.JOINT)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        arch, _ = ctl.sample(zero, space, ctl.JOINT, np.random.default_rng(5))
        assert ctl.finite_diff_check(zero, space, ctl.JOINT, arch, h=1e-6) < 1e-5

    def test_finite_difference_with_temperature_and_clip(self):
        vocab = generic_vocab(3)
        space = asp.make_space(3, vocab)
        cfg = ctl.ControllerConfig(hidden=6, n_ops=3, n_nodes=3, mode=ctl.JOINT,
                                   temperature=0.7, logit_clip=2.5)
        params = ctl.init_controller(cfg, 1)
        arch, _ = ctl.sample(params, space, ctl.JOINT, np.random.default_rng(5))
        assert ctl.finite_diff_check(params, space, ctl.JOINT, arch, h=1e-6) < 1e-5

    def test_larger_step_gives_larger_error(self):
        space = small_space(n=3, k=3)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=6, n_ops=3, n_nodes=3), 3)
        arch, _ = ctl.sample(params, space, ctl.JOINT, np.random.default_rng(1))
        e_small = ctl.finite_diff_check(params, space, ctl.JOINT, arch, h=1e-6)
        e_large = ctl.finite_diff_check(params, space, ctl.JOINT, arch, h=1e-2)
        # truncation is O(h^2); at h=1e-6 the difference quotient is
        # roundoff-dominated, so only the direction is asserted
        print(f"fd error h=1e-6: {e_small:.3e}, h=1e-2: {e_large:.3e}")
        assert e_large > e_small

    def test_score_function_identity_single_decision(self):
        # one-decision sequence: sum_k p(k) grad log p(k) = 0 over every coordinate
        space = asp.make_space(1, generic_vocab(4), frozen_skips=())
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=1, mode=ctl.FIXED_SKIP), 21)
        acc = np.zeros(params.n_params)
        for k in range(4):
            arch = asp.ArchitectureVector((k,), ())
            lp, _ = ctl.log_prob(params, space, ctl.FIXED_SKIP, arch)
            acc += math.exp(lp) * ctl.grad_log_prob(params, space, ctl.FIXED_SKIP, arch)
        assert np.max(np.abs(acc)) < 1e-12

    def test_score_function_identity_final_skip_decision(self):
        # forcing both values of the last (skip) decision with a fixed prefix:
        # the skip-head components sum to zero weighted by the conditionals
        space = asp.make_space(3, generic_vocab(3))
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=6, n_ops=3, n_nodes=3, mode=ctl.JOINT), 4)
        ops = (2, 0, 1)
        acc = np.zeros(params.n_params)
        conds = []
        for bit in (0, 1):
            arch = asp.ArchitectureVector(ops, (bit,))
            _, trace = ctl.log_prob(params, space, ctl.JOINT, arch)
            p_bit = trace[-1].probs[bit]
            conds.append(p_bit)
            acc += p_bit * ctl.grad_log_prob(params, space, ctl.JOINT, arch)
        assert abs(sum(conds) - 1.0) < 1e-12
        skip_head = acc[params.skip_head_slice]
        assert np.max(np.abs(skip_head)) < 1e-12

    def test_zero_params_single_decision_gradient_signs(self):
        # uniform softmax: the chosen logit's bias gradient is positive
        # (1 - 1/K), the others are -1/K
        space = asp.make_space(1, generic_vocab(4), frozen_skips=())
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=1, mode=ctl.FIXED_SKIP)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        grad = ctl.grad_log_prob(zero, space, ctl.FIXED_SKIP,
                                 asp.ArchitectureVector((2,), ()))
        params_view = ctl.ControllerParams(cfg, grad.copy())
        assert params_view.b_op[2] == pytest.approx(0.75)
        assert np.allclose(np.delete(params_view.b_op, 2), -0.25)

    def test_forced_decisions_excluded_from_grad_and_logp(self):
        space = small_space(n=4, k=4)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.JOINT), 8)
        arch, _ = ctl.sample(params, space, ctl.JOINT, np.random.default_rng(0))
        total, trace = ctl.log_prob(params, space, ctl.JOINT, arch,
                                    forced_skips=arch.skips)
        assert all(d.kind == "op" for d in trace)
        grad = ctl.grad_log_prob(params, space, ctl.JOINT, arch, forced_skips=arch.skips)
        assert np.all(grad[params.skip_head_slice] == 0.0)
        # forcing the operators instead removes the op-head gradient
        grad2 = ctl.grad_log_prob(params, space, ctl.JOINT, arch, forced_ops=arch.ops)
        assert np.all(grad2[params.op_head_slice] == 0.0)
        assert np.any(grad2[params.skip_head_slice] != 0.0)

    def test_forced_value_disagreement_rejected(self):
        space = small_space(n=4, k=4)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=4, n_ops=4, n_nodes=4, mode=ctl.JOINT), 8)
        arch = asp.ArchitectureVector((0, 0, 0, 0), (1, 0, 0))
        with pytest.raises(ctl.ControllerError):
            ctl.log_prob(params, space, ctl.JOINT, arch, forced_skips=(0, 0, 0))


class TestGreedyAndEntropy:
    def test_greedy_deterministic_and_valid(self):
        space = small_space(fixed=True)
        params = ctl.init_controller(
            ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.FIXED_SKIP), 2)
        a1 = ctl.greedy_arch(params, space, ctl.FIXED_SKIP)
        a2 = ctl.greedy_arch(params, space, ctl.FIXED_SKIP)
        assert a1 == a2
        assert asp.validate(a1, space) == []

    def test_uniform_policy_has_max_entropy(self):
        space = small_space(n=3, k=4)
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=3, mode=ctl.JOINT)
        zero = ctl.ControllerParams(cfg, np.zeros(ctl.param_count(cfg)))
        ents = ctl.policy_entropies(zero, space, ctl.JOINT)
        assert np.allclose(ents["op"], math.log(4), atol=1e-12)
        assert np.allclose(ents["skip"], math.log(2), atol=1e-12)
        assert ctl.operator_distribution_entropy(zero, space, ctl.JOINT) == pytest.approx(math.log(4))

    def test_temperature_sharpens(self):
        space = small_space(n=3, k=4)
        base_cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=3, mode=ctl.JOINT)
        params = ctl.init_controller(base_cfg, 5)
        sharp_cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=3, mode=ctl.JOINT,
                                         temperature=0.25)
        sharp = ctl.ControllerParams(sharp_cfg, params.flat.copy())
        e_base = np.mean(ctl.policy_entropies(params, space, ctl.JOINT)["op"])
        e_sharp = np.mean(ctl.policy_entropies(sharp, space, ctl.JOINT)["op"])
        assert e_sharp < e_base


class TestCheckpoint:
    def test_round_trip_bitwise(self, tmp_path):
        cfg = ctl.ControllerConfig(hidden=8, n_ops=4, n_nodes=4, mode=ctl.FIXED_SKIP,
                                   temperature=0.9)
        params = ctl.init_controller(cfg, 77)
        path = tmp_path / "controller.ckpt"
        ctl.save_checkpoint(path, params, seed=77)
        loaded, seed = ctl.load_checkpoint(path)
        assert seed == 77
        assert loaded.config == cfg
        assert np.array_equal(loaded.flat, params.flat)

    def test_header_is_json_line(self, tmp_path):
        import json

        cfg = ctl.ControllerConfig(hidden=4, n_ops=4, n_nodes=2)
        params = ctl.init_controller(cfg, 1)
        path = tmp_path / "c.ckpt"
        ctl.save_checkpoint(path, params, seed=1)
        with open(path, "rb") as fh:
            header = json.loads(fh.readline())
            body = fh.read()
        assert header["p"] == params.n_params
        assert len(body) == 8 * params.n_params
