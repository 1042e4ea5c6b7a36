"""REINFORCE training primitives for the architecture controller.

Two gradient routes are implemented for the same objective: the score-function
estimator (mean of reward-weighted per-sample log-probability gradients) and
the reward-weighted cross-entropy surrogate, which seeds every decision's
cross-entropy derivative with that sample's reward before backpropagating.
The two agree coordinate-wise up to floating-point reordering; checking that
agreement is one of the package's acceptance gates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from .archspace import ArchitectureVector, SearchSpaceSpec


from .oracles import OracleFailure


class TrainerError(ValueError):
    pass


class NonFiniteGradientError(TrainerError):
    pass


@dataclass(frozen=True)
class Sample:
    arch: ArchitectureVector
    trace: tuple[ctl.Decision, ...]
    reward: float


@dataclass(frozen=True)
class SampleBatch:
    """N sampled architectures with rewards, plus the sampling context
    needed to recompute gradients (mode and any forced decisions)."""

    spec: SearchSpaceSpec
    mode: str
    samples: tuple[Sample, ...]
    forced_ops: tuple[int, ...] | None = None
    forced_skips: tuple[int, ...] | None = None

    def __post_init__(self):
        if len(self.samples) < 1:
            raise TrainerError("batch needs at least one sample")
        for s in self.samples:
            if not np.isfinite(s.reward):
                raise TrainerError("rewards must be finite")

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def rewards(self) -> np.ndarray:
        return np.array([s.reward for s in self.samples])


def collect_batch(
    params: ctl.ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    oracle,
    n_samples: int,
    step: int,
    rng,
    forced_ops: tuple[int, ...] | None = None,
    forced_skips: tuple[int, ...] | None = None,
    pool=None,
) -> SampleBatch:
    """Sample n_samples architectures and evaluate them with the oracle.

    Each sample uses its own generator spawned from `rng`, so the batch is a
    deterministic function of (params, rng state, step) and independent of
    how the oracle evaluations are parallelized.
    """
    if n_samples < 1:
        raise TrainerError("n_samples must be >= 1")
    rngs = rng.spawn(n_samples)
    archs, traces, _ = ctl.sample_batch(params, spec, mode, rngs, forced_ops, forced_skips)
    rewards = oracle.evaluate_batch(archs, step, pool=pool)
    samples = []
    for i, (arch, trace) in enumerate(zip(archs, traces)):
        r = float(rewards[i])
        if not np.isfinite(r) or not 0.0 <= r <= 1.0:
            raise OracleFailure(i, ValueError(f"reward {r} outside [0, 1]"))
        samples.append(Sample(arch, tuple(trace), r))
    return SampleBatch(spec, mode, tuple(samples), forced_ops, forced_skips)


def _batch_run(params: ctl.ControllerParams, batch: SampleBatch) -> ctl._Run:
    """Teacher-forced forward pass over the whole batch."""
    plan = ctl.decision_plan(batch.spec, batch.mode, batch.forced_ops, batch.forced_skips)
    edge_idx = {e: i for i, e in enumerate(batch.spec.topology.candidate_edges)}
    n = batch.n
    choices = np.zeros((len(plan), n), dtype=np.int64)
    for i, s in enumerate(batch.samples):
        for si, step in enumerate(plan):
            if step.kind == "op":
                choices[si, i] = s.arch.ops[step.node - 1]
            else:
                choices[si, i] = s.arch.skips[edge_idx[step.edge]]
    return ctl._forward(params, plan, n, forced_choices=choices)


def reinforce_gradient(
    params: ctl.ControllerParams,
    batch: SampleBatch,
    baseline: "BaselineState | None" = None,
    entropy_coef: float = 0.0,
) -> np.ndarray:
    """Score-function gradient (1/N) sum_i (R_i - b) * grad log p(arch_i).

    Computes each sample's full log-probability gradient first, then scales
    by its advantage and averages. With entropy_coef > 0 the mean gradient of
    the summed per-decision entropies is added (exploration bonus; excluded
    from the cross-entropy equivalence check).
    """
    run = _batch_run(params, batch)
    b = baseline.value if baseline is not None else 0.0
    weights = (batch.rewards - b) / batch.n
    grad = ctl._backward(params, run, ctl._logp_seeds(run), per_sample=False,
                         sample_weights=weights)
    if entropy_coef != 0.0:
        ent = ctl._backward(params, run, ctl._entropy_seeds(run), per_sample=False)
        grad = grad + (entropy_coef / batch.n) * ent
    return grad


def ce_surrogate_gradient(params: ctl.ControllerParams, batch: SampleBatch) -> np.ndarray:
    """Gradient of the reward-weighted cross-entropy surrogate.

    Every decision of sample i contributes its cross-entropy derivative
    weighted by R_i / N; summed over a decision group (node, choice) those
    weights are exactly the assigned per-decision rewards, so this is the
    decomposed form of the score-function estimator.
    """
    run = _batch_run(params, batch)
    seeds = ctl._logp_seeds(run, weights=batch.rewards / batch.n)
    return ctl._backward(params, run, seeds, per_sample=False)


# ---------------------------------------------------------------------------
# Optimizer and baseline
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    step: int
    m: np.ndarray
    v: np.ndarray

    @classmethod
    def init(cls, n_params: int) -> "AdamState":
        return cls(0, np.zeros(n_params), np.zeros(n_params))


def update(
    params: ctl.ControllerParams,
    gradient: np.ndarray,
    opt_state: AdamState,
    lr: float = 3.5e-4,
    betas: tuple[float, float] = (0.9, 0.999),
    eps: float = 1e-8,
) -> tuple[ctl.ControllerParams, AdamState]:
    """One Adam ascent step; returns fresh params and optimizer state."""
    if gradient.shape != params.flat.shape:
        raise TrainerError("gradient length does not match parameter count")
    if not np.all(np.isfinite(gradient)):
        raise NonFiniteGradientError("gradient contains non-finite entries")
    b1, b2 = betas
    t = opt_state.step + 1
    m = b1 * opt_state.m + (1.0 - b1) * gradient
    v = b2 * opt_state.v + (1.0 - b2) * gradient * gradient
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)
    flat = params.flat + lr * m_hat / (np.sqrt(v_hat) + eps)
    return ctl.ControllerParams(params.config, flat), AdamState(t, m, v)


@dataclass(frozen=True)
class BaselineState:
    ema: float = 0.0
    decay: float = 0.95
    initialized: bool = False

    @property
    def value(self) -> float:
        return self.ema if self.initialized else 0.0


def update_baseline(state: BaselineState, batch: SampleBatch) -> BaselineState:
    mean = float(batch.rewards.mean())
    if not state.initialized:
        return BaselineState(mean, state.decay, True)
    return BaselineState(state.decay * state.ema + (1.0 - state.decay) * mean,
                         state.decay, True)


# ---------------------------------------------------------------------------
# Gradient-magnitude logging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GradRecord:
    step: int
    op_head_grad_norm: float
    skip_head_grad_norm: float


def log_grad_magnitudes(
    gradient: np.ndarray, params: ctl.ControllerParams, step: int
) -> GradRecord:
    """L2 norms of the gradient restricted to the two decision heads."""
    op = float(np.linalg.norm(gradient[params.op_head_slice]))
    sk = float(np.linalg.norm(gradient[params.skip_head_slice]))
    return GradRecord(step, op, sk)


@dataclass
class GradLog:
    records: list[GradRecord] = field(default_factory=list)

    def append(self, rec: GradRecord):
        self.records.append(rec)

    def write_csv(self, path):
        with open(path, "w") as fh:
            fh.write("step,op_grad_norm,skip_grad_norm\n")
            for r in self.records:
                fh.write(f"{r.step},{r.op_head_grad_norm!r},{r.skip_head_grad_norm!r}\n")


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UpdateRecord:
    step: int
    mean_reward: float
    best_so_far: float
    op_grad_norm: float
    skip_grad_norm: float


@dataclass
class TrainOutcome:
    params: ctl.ControllerParams
    history: list[UpdateRecord]
    gradlog: GradLog
    best_arch: ArchitectureVector | None
    best_reward: float
    batches_best: list[tuple[ArchitectureVector, float]]  # per-update best sample


def run_reinforce(
    params: ctl.ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    oracle,
    *,
    updates: int,
    n_samples: int,
    seed_seq: np.random.SeedSequence,
    lr: float = 3.5e-4,
    baseline_enabled: bool = True,
    baseline_decay: float = 0.95,
    entropy_coef: float = 0.0,
    step_offset: int = 0,
    forcing=None,
    pool=None,
) -> TrainOutcome:
    """Run `updates` controller updates; pure function of (inputs, seed_seq).

    `forcing(step)` may supply (forced_ops, forced_skips) per update. The
    oracle sees `step_offset + update_index` as its step argument.
    """
    opt = AdamState.init(params.n_params)
    baseline = BaselineState(decay=baseline_decay)
    gradlog = GradLog()
    history: list[UpdateRecord] = []
    batches_best: list[tuple[ArchitectureVector, float]] = []
    best_arch, best_reward = None, -np.inf

    for u in range(updates):
        step = step_offset + u
        rng = np.random.default_rng(seed_seq.spawn(1)[0])
        forced_ops, forced_skips = forcing(u) if forcing is not None else (None, None)
        batch = collect_batch(params, spec, mode, oracle, n_samples, step, rng,
                              forced_ops, forced_skips, pool=pool)
        i_best = int(np.argmax(batch.rewards))
        r_best = float(batch.rewards[i_best])
        batches_best.append((batch.samples[i_best].arch, r_best))
        if r_best > best_reward:
            best_reward, best_arch = r_best, batch.samples[i_best].arch

        grad = reinforce_gradient(params, batch,
                                  baseline if baseline_enabled else None,
                                  entropy_coef)
        rec = log_grad_magnitudes(grad, params, step)
        gradlog.append(rec)
        baseline = update_baseline(baseline, batch)
        params, opt = update(params, grad, opt, lr=lr)
        history.append(UpdateRecord(step, float(batch.rewards.mean()), best_reward,
                                    rec.op_head_grad_norm, rec.skip_head_grad_norm))

    return TrainOutcome(params, history, gradlog, best_arch, best_reward, batches_best)
