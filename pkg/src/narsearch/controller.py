"""Autoregressive LSTM meta-controller over architecture decisions.

The controller emits one categorical decision per LSTM step: the operator of
each node, then (in joint mode) a binary decision per candidate skip edge of
that node. Each decision's sampled token is embedded and fed as the next
step's input, so every distribution is conditioned on the full decision
prefix. All parameters live in one flat float64 vector; the structured
matrices are numpy views into it. Gradients of log-probabilities are exact,
computed by backpropagation through time, and checkable against central
finite differences.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .archspace import ArchitectureVector, SearchSpaceSpec, validate

JOINT = "joint"
FIXED_SKIP = "fixed_skip"
MODES = (JOINT, FIXED_SKIP)


class ControllerError(ValueError):
    pass


class InvalidArchitectureError(ControllerError):
    def __init__(self, violations: list[str]):
        super().__init__("invalid architecture: " + "; ".join(violations))
        self.violations = violations


@dataclass(frozen=True)
class ControllerConfig:
    hidden: int
    n_ops: int
    n_nodes: int
    mode: str = JOINT
    embed: int | None = None  # defaults to hidden
    temperature: float | None = None
    logit_clip: float | None = None

    def __post_init__(self):
        if self.hidden < 1:
            raise ControllerError("hidden size must be >= 1")
        if self.n_ops < 2:
            raise ControllerError("need at least 2 operator candidates")
        if self.mode not in MODES:
            raise ControllerError(f"unknown mode {self.mode!r}")
        if self.temperature is not None and self.temperature <= 0:
            raise ControllerError("temperature must be positive")
        if self.logit_clip is not None and self.logit_clip <= 0:
            raise ControllerError("logit_clip must be positive")

    @property
    def embed_dim(self) -> int:
        return self.hidden if self.embed is None else self.embed

    @property
    def n_tokens(self) -> int:
        # one start token, one token per operator, one per skip value
        return 1 + self.n_ops + 2

    def to_json(self) -> dict:
        return {
            "hidden": self.hidden,
            "n_ops": self.n_ops,
            "n_nodes": self.n_nodes,
            "mode": self.mode,
            "embed": self.embed,
            "temperature": self.temperature,
            "logit_clip": self.logit_clip,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ControllerConfig":
        return cls(**obj)


def param_count(config: ControllerConfig) -> int:
    h, e, k = config.hidden, config.embed_dim, config.n_ops
    v = config.n_tokens
    return v * e + 4 * h * (e + h + 1) + k * (h + 1) + 2 * (h + 1)


class ControllerParams:
    """Flat float64 parameter vector with aliased structured views.

    Layout order: token embeddings, LSTM input weights, LSTM recurrent
    weights, LSTM bias (gate order i, f, g, o), operator head, skip head.
    The two head slices are exposed for gradient-magnitude logging.
    """

    def __init__(self, config: ControllerConfig, flat: np.ndarray):
        p = param_count(config)
        if flat.shape != (p,) or flat.dtype != np.float64:
            raise ControllerError(f"flat vector must be float64 of length {p}")
        self.config = config
        self.flat = flat
        h, e, k, v = config.hidden, config.embed_dim, config.n_ops, config.n_tokens
        offset = 0

        def view(shape):
            nonlocal offset
            size = int(np.prod(shape))
            out = flat[offset:offset + size].reshape(shape)
            offset += size
            return out

        self.emb = view((v, e))
        self.w_x = view((4 * h, e))
        self.w_h = view((4 * h, h))
        self.b = view((4 * h,))
        op_start = offset
        self.w_op = view((k, h))
        self.b_op = view((k,))
        self.op_head_slice = slice(op_start, offset)
        sk_start = offset
        self.w_sk = view((2, h))
        self.b_sk = view((2,))
        self.skip_head_slice = slice(sk_start, offset)
        assert offset == p

    @property
    def n_params(self) -> int:
        return self.flat.shape[0]

    def copy(self) -> "ControllerParams":
        return ControllerParams(self.config, self.flat.copy())


def init_controller(config: ControllerConfig, seed: int) -> ControllerParams:
    """Initialize all parameters uniformly in [-0.1, 0.1], deterministically."""
    rng = np.random.default_rng(seed)
    flat = rng.uniform(-0.1, 0.1, size=param_count(config))
    return ControllerParams(config, flat)


# ---------------------------------------------------------------------------
# Decision plans
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlanStep:
    kind: str                       # "op" | "skip"
    node: int                       # 1-based node index
    edge: tuple[int, int] | None    # (t, j) for skip steps
    forced: int | None = None       # forced value, excluded from log-prob/grad


def decision_plan(
    spec: SearchSpaceSpec,
    mode: str,
    forced_ops: tuple[int, ...] | None = None,
    forced_skips: tuple[int, ...] | None = None,
) -> tuple[PlanStep, ...]:
    """Canonical decision sequence for a space.

    Joint mode interleaves node j's operator with that node's incoming skip
    decisions; fixed-skip mode contains operator decisions only (the frozen
    skips never enter the controller). Forced decisions stay in the sequence
    as inputs (preserving the conditioning chain) but are excluded from
    log-probabilities and gradients.
    """
    if mode not in MODES:
        raise ControllerError(f"unknown mode {mode!r}")
    if mode == FIXED_SKIP:
        if not spec.fixed_skip:
            raise ControllerError("fixed_skip mode requires spec.frozen_skips")
        if forced_skips is not None:
            raise ControllerError("fixed_skip mode has no skip decisions to force")
    steps = []
    edge_idx = {e: i for i, e in enumerate(spec.topology.candidate_edges)}
    for j in range(1, spec.n_nodes + 1):
        forced_op = None if forced_ops is None else forced_ops[j - 1]
        steps.append(PlanStep("op", j, None, forced_op))
        if mode == JOINT:
            for (t, jj) in spec.topology.candidate_edges:
                if jj != j:
                    continue
                forced_bit = None if forced_skips is None else forced_skips[edge_idx[(t, jj)]]
                steps.append(PlanStep("skip", j, (t, jj), forced_bit))
    return tuple(steps)


@dataclass(frozen=True)
class Decision:
    """One free decision of a sampled/scored architecture."""

    kind: str
    node: int
    edge: tuple[int, int] | None
    choice: int
    log_prob: float
    probs: tuple[float, ...]


# ---------------------------------------------------------------------------
# Forward / backward core (batched over samples)
# ---------------------------------------------------------------------------

_START_TOKEN = 0


def _token_of(config: ControllerConfig, kind: str, value: int) -> int:
    if kind == "op":
        return 1 + value
    return 1 + config.n_ops + value


@dataclass
class _Run:
    """Forward intermediates needed for sampling results and BPTT."""

    plan: tuple[PlanStep, ...]
    n: int
    tokens: np.ndarray            # (D, N) input token at each step
    gates: list                   # per step (i, f, g, o) each (N, H)
    cells: list                   # per step c_s (N, H)
    tanh_c: list                  # per step tanh(c_s) (N, H)
    hiddens: list                 # per step h_s (N, H)
    probs: list                   # per step (N, Kd) or None for forced steps
    clip_tanh: list               # per step tanh(z1/clip) or None
    choices: np.ndarray           # (D, N)
    log_probs: np.ndarray         # (D, N), zero at forced steps
    entropies: list               # per step (N,) or None


def _head(params: ControllerParams, kind: str):
    if kind == "op":
        return params.w_op, params.b_op
    return params.w_sk, params.b_sk


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


def _forward(
    params: ControllerParams,
    plan: tuple[PlanStep, ...],
    n: int,
    rngs: list | None = None,
    forced_choices: np.ndarray | None = None,
) -> _Run:
    """Run the controller over `plan` for `n` samples.

    Free steps draw from `rngs` (one generator per sample) unless
    `forced_choices` (D, N) supplies the value (teacher forcing, still
    counted). Plan-forced steps always take the plan value and are skipped
    for probabilities.
    """
    cfg = params.config
    h_dim = cfg.hidden
    d = len(plan)
    tau = cfg.temperature
    clip = cfg.logit_clip

    tokens = np.zeros((d, n), dtype=np.int64)
    choices = np.zeros((d, n), dtype=np.int64)
    log_probs = np.zeros((d, n))
    gates, cells, tanh_cs, hiddens, probs_l, clip_l, ent_l = [], [], [], [], [], [], []

    h = np.zeros((n, h_dim))
    c = np.zeros((n, h_dim))
    tok = np.full(n, _START_TOKEN, dtype=np.int64)

    for s, step in enumerate(plan):
        tokens[s] = tok
        x = params.emb[tok]                       # (N, E)
        z = x @ params.w_x.T + h @ params.w_h.T + params.b
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        gi, gf, go = _sigmoid(zi), _sigmoid(zf), _sigmoid(zo)
        gg = np.tanh(zg)
        c = gf * c + gi * gg
        tc = np.tanh(c)
        h = go * tc
        gates.append((gi, gf, gg, go))
        cells.append(c)
        tanh_cs.append(tc)
        hiddens.append(h)

        if step.forced is not None:
            probs_l.append(None)
            clip_l.append(None)
            ent_l.append(None)
            chosen = np.full(n, step.forced, dtype=np.int64)
        else:
            w_head, b_head = _head(params, step.kind)
            logits = h @ w_head.T + b_head
            if tau is not None:
                logits = logits / tau
            if clip is not None:
                ct = np.tanh(logits / clip)
                logits = clip * ct
                clip_l.append(ct)
            else:
                clip_l.append(None)
            lse = logits - logits.max(axis=1, keepdims=True)
            lsm = lse - np.log(np.exp(lse).sum(axis=1, keepdims=True))
            p = np.exp(lsm)
            probs_l.append(p)
            ent_l.append(-(p * lsm).sum(axis=1))
            if forced_choices is not None:
                chosen = forced_choices[s]
            else:
                u = np.array([rng.random() for rng in rngs])
                cs = np.cumsum(p, axis=1)
                chosen = np.minimum((cs < u[:, None]).sum(axis=1), p.shape[1] - 1)
            log_probs[s] = lsm[np.arange(n), chosen]
        choices[s] = chosen
        tok = (1 if step.kind == "op" else 1 + cfg.n_ops) + chosen

    return _Run(plan, n, tokens, gates, cells, tanh_cs, hiddens, probs_l, clip_l,
                choices, log_probs, ent_l)


def _backward(
    params: ControllerParams,
    run: _Run,
    seeds: list,
    per_sample: bool,
    sample_weights: np.ndarray | None = None,
) -> np.ndarray:
    """BPTT with per-step logit seeds (N, Kd) or None.

    With per_sample=True returns an (N, P) matrix of independent per-sample
    gradients; otherwise the seeds' contributions are summed into one (P,)
    vector. `sample_weights` (N,) contracts the per-sample gradients into a
    weighted (P,) sum without materializing them, preserving the
    compute-then-scale order per parameter group. The sequential reverse
    sweep only propagates the (N, H) chain; all weight-gradient outer
    products are batched into matmuls afterwards.
    """
    cfg = params.config
    n, d = run.n, len(run.plan)
    h_dim, e_dim, k, v = cfg.hidden, cfg.embed_dim, cfg.n_ops, cfg.n_tokens
    tau = cfg.temperature
    if sample_weights is not None and per_sample:
        raise ControllerError("sample_weights implies a contracted result")

    dz_all = np.zeros((d, n, 4 * h_dim))
    dlogits_all: list = [None] * d
    dh_next = np.zeros((n, h_dim))
    dc_next = np.zeros((n, h_dim))

    for s in range(d - 1, -1, -1):
        step = run.plan[s]
        seed = seeds[s]
        dh = dh_next
        if seed is not None:
            dlogits = seed
            if cfg.logit_clip is not None:
                dlogits = dlogits * (1.0 - run.clip_tanh[s] ** 2)
            if tau is not None:
                dlogits = dlogits / tau
            dlogits_all[s] = dlogits
            w_head, _ = _head(params, step.kind)
            dh = dh + dlogits @ w_head

        gi, gf, gg, go = run.gates[s]
        tc = run.tanh_c[s]
        c_prev = run.cells[s - 1] if s > 0 else np.zeros((n, h_dim))

        d_o = dh * tc
        dc = dc_next + dh * go * (1.0 - tc * tc)
        d_i = dc * gg
        d_g = dc * gi
        d_f = dc * c_prev
        dc_next = dc * gf
        dz = dz_all[s]
        dz[:, :h_dim] = d_i * gi * (1.0 - gi)
        dz[:, h_dim:2 * h_dim] = d_f * gf * (1.0 - gf)
        dz[:, 2 * h_dim:3 * h_dim] = d_g * (1.0 - gg * gg)
        dz[:, 3 * h_dim:] = d_o * go * (1.0 - go)
        dh_next = dz @ params.w_h

    # Assemble weight gradients from the stored per-step quantities.
    x_all = params.emb[run.tokens]                                # (D, N, E)
    h_prev_all = np.zeros((d, n, h_dim))
    for s in range(1, d):
        h_prev_all[s] = run.hiddens[s - 1]
    dx_all = dz_all @ params.w_x                                  # (D, N, E)

    def head_grads(kind, k_dim):
        idx = [s for s in range(d) if dlogits_all[s] is not None and run.plan[s].kind == kind]
        lead = (n,) if (per_sample or sample_weights is not None) else ()
        if not idx:
            w, b = np.zeros(lead + (k_dim, h_dim)), np.zeros(lead + (k_dim,))
        else:
            dl = np.stack([dlogits_all[s] for s in idx])          # (Ds, N, Kd)
            hs = np.stack([run.hiddens[s] for s in idx])          # (Ds, N, H)
            if lead:
                w = np.matmul(dl.transpose(1, 2, 0), hs.transpose(1, 0, 2))
                b = dl.sum(axis=0)
            else:
                ds = len(idx)
                w = dl.reshape(ds * n, k_dim).T @ hs.reshape(ds * n, h_dim)
                b = dl.sum(axis=(0, 1))
        return w, b

    weighted = sample_weights is not None
    d_wop, d_bop = head_grads("op", k)
    d_wsk, d_bsk = head_grads("skip", 2)

    if per_sample or weighted:
        d_wx = np.matmul(dz_all.transpose(1, 2, 0), x_all.transpose(1, 0, 2))
        d_wh = np.matmul(dz_all.transpose(1, 2, 0), h_prev_all.transpose(1, 0, 2))
        d_b = dz_all.sum(axis=0)                                  # (N, 4H)
        d_emb = np.zeros((n, v, e_dim))
        rows = np.arange(n)
        for s in range(d):
            d_emb[rows, run.tokens[s]] += dx_all[s]
        parts = [d_emb, d_wx, d_wh, d_b, d_wop, d_bop, d_wsk, d_bsk]
        if per_sample:
            return np.concatenate([a.reshape(n, -1) for a in parts], axis=1)
        w = sample_weights
        return np.concatenate(
            [np.tensordot(w, a, axes=(0, 0)).ravel() for a in parts]
        )

    dz_flat = dz_all.reshape(d * n, 4 * h_dim)
    d_wx = dz_flat.T @ x_all.reshape(d * n, e_dim)
    d_wh = dz_flat.T @ h_prev_all.reshape(d * n, h_dim)
    d_b = dz_flat.sum(axis=0)
    d_emb = np.zeros((v, e_dim))
    np.add.at(d_emb, run.tokens.ravel(), dx_all.reshape(d * n, e_dim))
    parts = [d_emb, d_wx, d_wh, d_b, d_wop, d_bop, d_wsk, d_bsk]
    return np.concatenate([a.ravel() for a in parts])


def _logp_seeds(run: _Run, weights: np.ndarray | None = None) -> list:
    """Seeds for d/dlogits of sum of chosen log-probs, optionally weighted
    per sample."""
    seeds = []
    rows = np.arange(run.n)
    for s, p in enumerate(run.probs):
        if p is None:
            seeds.append(None)
            continue
        seed = -p.copy()
        seed[rows, run.choices[s]] += 1.0
        if weights is not None:
            seed = seed * weights[:, None]
        seeds.append(seed)
    return seeds


def _entropy_seeds(run: _Run) -> list:
    """Seeds for d/dlogits of the summed decision entropies."""
    seeds = []
    for s, p in enumerate(run.probs):
        if p is None:
            seeds.append(None)
            continue
        lsm = np.log(p)
        ent = run.entropies[s]
        seeds.append(-p * (lsm + ent[:, None]))
    return seeds


# ---------------------------------------------------------------------------
# Public operations
# ---------------------------------------------------------------------------

def _arch_from_choices(
    spec: SearchSpaceSpec, plan: tuple[PlanStep, ...], choices: np.ndarray, i: int
) -> ArchitectureVector:
    ops = [0] * spec.n_nodes
    skips = list(spec.frozen_skips) if spec.fixed_skip else [0] * spec.n_edges
    edge_idx = {e: idx for idx, e in enumerate(spec.topology.candidate_edges)}
    for s, step in enumerate(plan):
        val = int(choices[s, i])
        if step.kind == "op":
            ops[step.node - 1] = val
        else:
            skips[edge_idx[step.edge]] = val
    return ArchitectureVector(tuple(ops), tuple(skips))


def _trace_from_run(run: _Run, i: int) -> list[Decision]:
    out = []
    for s, step in enumerate(run.plan):
        if step.forced is not None:
            continue
        p = run.probs[s][i]
        out.append(
            Decision(step.kind, step.node, step.edge, int(run.choices[s, i]),
                     float(run.log_probs[s, i]), tuple(p.tolist()))
        )
    return out


def _choices_from_arch(
    spec: SearchSpaceSpec, plan: tuple[PlanStep, ...], arch: ArchitectureVector
) -> np.ndarray:
    edge_idx = {e: idx for idx, e in enumerate(spec.topology.candidate_edges)}
    choices = np.zeros((len(plan), 1), dtype=np.int64)
    for s, step in enumerate(plan):
        if step.kind == "op":
            choices[s, 0] = arch.ops[step.node - 1]
        else:
            choices[s, 0] = arch.skips[edge_idx[step.edge]]
    return choices


def _check_spec(params: ControllerParams, spec: SearchSpaceSpec):
    if spec.n_ops != params.config.n_ops or spec.n_nodes != params.config.n_nodes:
        raise ControllerError(
            f"space ({spec.n_nodes} nodes, {spec.n_ops} ops) does not match "
            f"controller config ({params.config.n_nodes}, {params.config.n_ops})"
        )


def sample_batch(
    params: ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    rngs: list,
    forced_ops: tuple[int, ...] | None = None,
    forced_skips: tuple[int, ...] | None = None,
) -> tuple[list[ArchitectureVector], list[list[Decision]], _Run]:
    """Sample len(rngs) architectures in one batched pass.

    Each sample draws from its own generator, so the batch equals the
    per-sample serial definition and is independent of evaluation order.
    """
    _check_spec(params, spec)
    plan = decision_plan(spec, mode, forced_ops, forced_skips)
    run = _forward(params, plan, len(rngs), rngs=rngs)
    archs = [_arch_from_choices(spec, plan, run.choices, i) for i in range(len(rngs))]
    traces = [_trace_from_run(run, i) for i in range(len(rngs))]
    return archs, traces, run


def sample(
    params: ControllerParams, spec: SearchSpaceSpec, mode: str, rng
) -> tuple[ArchitectureVector, list[Decision]]:
    archs, traces, _ = sample_batch(params, spec, mode, [rng])
    return archs[0], traces[0]


def _forced_run(params, spec, mode, arch, forced_ops=None, forced_skips=None) -> _Run:
    _check_spec(params, spec)
    violations = validate(arch, spec)
    if violations:
        raise InvalidArchitectureError(violations)
    plan = decision_plan(spec, mode, forced_ops, forced_skips)
    choices = _choices_from_arch(spec, plan, arch)
    for s, step in enumerate(plan):
        if step.forced is not None and choices[s, 0] != step.forced:
            raise ControllerError(
                f"architecture disagrees with the forced value at step {s} "
                f"({step.kind}, node {step.node})"
            )
    return _forward(params, plan, 1, forced_choices=choices)


def log_prob(
    params: ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    arch: ArchitectureVector,
    forced_ops: tuple[int, ...] | None = None,
    forced_skips: tuple[int, ...] | None = None,
) -> tuple[float, list[Decision]]:
    """Total log-probability of `arch` plus the per-decision trace."""
    run = _forced_run(params, spec, mode, arch, forced_ops, forced_skips)
    return float(run.log_probs.sum()), _trace_from_run(run, 0)


def grad_log_prob(
    params: ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    arch: ArchitectureVector,
    forced_ops: tuple[int, ...] | None = None,
    forced_skips: tuple[int, ...] | None = None,
) -> np.ndarray:
    """Exact gradient of log p(arch) as a flat length-P vector."""
    run = _forced_run(params, spec, mode, arch, forced_ops, forced_skips)
    return _backward(params, run, _logp_seeds(run), per_sample=False)


def finite_diff_check(
    params: ControllerParams,
    spec: SearchSpaceSpec,
    mode: str,
    arch: ArchitectureVector,
    h: float = 1e-6,
) -> float:
    """Max relative error between grad_log_prob and central differences.

    Every coordinate of the gradient is approximated by a central difference
    with step h. The returned error is the largest coordinate discrepancy
    |analytic - numeric| relative to max(|analytic|, |numeric|, 1e-8), where
    |.| is the max-norm of the respective gradient vector: per-coordinate
    denominators would measure nothing but difference-quotient roundoff
    (about eps/2h in absolute terms) on the near-zero coordinates every LSTM
    gradient contains, regardless of whether the analytic gradient is right.
    """
    if h <= 0:
        raise ControllerError("step size must be positive")
    analytic = grad_log_prob(params, spec, mode, arch)
    flat = params.flat
    numeric = np.zeros_like(analytic)
    probe = ControllerParams(params.config, flat.copy())
    for idx in range(flat.shape[0]):
        orig = probe.flat[idx]
        probe.flat[idx] = orig + h
        up, _ = log_prob(probe, spec, mode, arch)
        probe.flat[idx] = orig - h
        down, _ = log_prob(probe, spec, mode, arch)
        probe.flat[idx] = orig
        numeric[idx] = (up - down) / (2.0 * h)
    scale = max(np.abs(analytic).max(), np.abs(numeric).max(), 1e-8)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def greedy_arch(params: ControllerParams, spec: SearchSpaceSpec, mode: str) -> ArchitectureVector:
    """Per-decision argmax rollout of the policy (deterministic)."""
    _check_spec(params, spec)
    plan = decision_plan(spec, mode)
    cfg = params.config
    h = np.zeros((1, cfg.hidden))
    c = np.zeros((1, cfg.hidden))
    tok = np.array([_START_TOKEN])
    choices = np.zeros((len(plan), 1), dtype=np.int64)
    for s, step in enumerate(plan):
        x = params.emb[tok]
        z = x @ params.w_x.T + h @ params.w_h.T + params.b
        zi, zf, zg, zo = np.split(z, 4, axis=1)
        c = _sigmoid(zf) * c + _sigmoid(zi) * np.tanh(zg)
        h = _sigmoid(zo) * np.tanh(c)
        w_head, b_head = _head(params, step.kind)
        logits = (h @ w_head.T + b_head)[0]
        choice = int(np.argmax(logits))
        choices[s, 0] = choice
        tok = np.array([_token_of(cfg, step.kind, choice)])
    return _arch_from_choices(spec, plan, choices, 0)


def policy_entropies(
    params: ControllerParams, spec: SearchSpaceSpec, mode: str
) -> dict[str, list[float]]:
    """Per-decision entropies (nats) along the greedy rollout."""
    arch = greedy_arch(params, spec, mode)
    _, trace = log_prob(params, spec, mode, arch)
    ops, skips = [], []
    for dec in trace:
        p = np.array(dec.probs)
        ent = float(-(p * np.log(p)).sum())
        (ops if dec.kind == "op" else skips).append(ent)
    return {"op": ops, "skip": skips}


def operator_distribution_entropy(
    params: ControllerParams, spec: SearchSpaceSpec, mode: str
) -> float:
    """Entropy (nats) of the policy's operator distribution, averaged over
    nodes along the greedy rollout.

    Measures how diverse the operators favored by the policy are across the
    whole architecture: a policy that commits every node to one operator
    scores near zero even when each node is fully decided, while committing
    different nodes to different operators keeps the entropy high.
    """
    arch = greedy_arch(params, spec, mode)
    _, trace = log_prob(params, spec, mode, arch)
    dists = [np.array(dec.probs) for dec in trace if dec.kind == "op"]
    mean = np.mean(dists, axis=0)
    return float(-(mean * np.log(np.maximum(mean, 1e-300))).sum())


# ---------------------------------------------------------------------------
# Checkpoint format: one JSON header line, then P little-endian float64s.
# ---------------------------------------------------------------------------

def save_checkpoint(path, params: ControllerParams, seed: int):
    header = {
        "config": params.config.to_json(),
        "seed": seed,
        "p": params.n_params,
    }
    with open(path, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        fh.write(params.flat.astype("<f8").tobytes())


def load_checkpoint(path) -> tuple[ControllerParams, int]:
    with open(path, "rb") as fh:
        header = json.loads(fh.readline().decode("utf-8"))
        raw = fh.read()
    config = ControllerConfig.from_json(header["config"])
    flat = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    if flat.shape[0] != header["p"]:
        raise ControllerError(
            f"checkpoint body has {flat.shape[0]} values, header says {header['p']}"
        )
    return ControllerParams(config, flat), int(header["seed"])
