"""Reward oracles for desk-scale architecture search.

Three evaluators share one contract (reward in [0, 1] per architecture):

* TabularOracle - an exactly enumerable synthetic landscape: per-node operator
  utilities, per-edge skip weights and sparse pairwise operator interactions,
  squashed through a logistic. Pure, so searches can be scored against the
  enumerated optimum.
* ProxyBiasOracle - wraps a base oracle with a decaying bonus for skip-dense
  architectures plus decaying keyed noise, modeling the early-training bias of
  truncated proxy-task evaluation.
* ToySupernet - a weight-sharing supernet over dense feature transforms with
  one parameter bank per parametric operator per node feeding a synthetic
  two-class task; evaluation trains the selected child's banks briefly and
  returns validation accuracy.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np

from .archspace import ArchitectureVector, SearchSpaceSpec, serialize_arch_vector, skips_to_hex


class GuardError(RuntimeError):
    """A requested exhaustive computation exceeds its size guard."""


class OracleFailure(RuntimeError):
    """An oracle evaluation failed; carries the failing sample's index."""

    def __init__(self, sample_index: int, cause: Exception):
        super().__init__(f"oracle failed on sample {sample_index}: {cause}")
        self.sample_index = sample_index
        self.cause = cause


ENUMERATION_GUARD = 2 ** 24


class Oracle:
    """Reward evaluator contract: evaluate(arch, step) -> float in [0, 1]."""

    def evaluate(self, arch: ArchitectureVector, step: int) -> float:
        raise NotImplementedError

    def evaluate_batch(self, archs, step: int, pool=None) -> list[float]:
        """Evaluate a batch; results are in sample-index order regardless of
        `pool` (a concurrent.futures executor or None)."""

        def run(item):
            i, arch = item
            try:
                return self.evaluate(arch, step)
            except OracleFailure:
                raise
            except Exception as exc:
                raise OracleFailure(i, exc) from exc

        items = list(enumerate(archs))
        if pool is None:
            return [run(item) for item in items]
        return list(pool.map(run, items))


# ---------------------------------------------------------------------------
# Tabular landscape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TabularOracleSpec:
    """Synthetic reward tables; rewards are logistic(linear score).

    interactions entries are (node_a, op_a, node_b, op_b, coeff) with 1-based
    nodes; the coefficient applies when both nodes select the named operators.
    """

    op_utilities: tuple[tuple[float, ...], ...]
    edge_weights: tuple[float, ...]
    interactions: tuple[tuple[int, int, int, int, float], ...]
    seed: int

    @classmethod
    def generate(
        cls,
        space: SearchSpaceSpec,
        seed: int,
        op_scale: float = 1.0,
        edge_scale: float = 0.5,
        n_interactions: int = 0,
        interaction_scale: float = 0.3,
    ) -> "TabularOracleSpec":
        """Draw tables deterministically from `seed` (utilities row-major,
        then edge weights in canonical order, then interactions)."""
        rng = np.random.default_rng(seed)
        u = rng.normal(0.0, op_scale, size=(space.n_nodes, space.n_ops))
        w = rng.normal(0.0, edge_scale, size=space.n_edges)
        inter = []
        for _ in range(n_interactions):
            ja, jb = sorted(rng.choice(space.n_nodes, size=2, replace=False) + 1)
            ka = int(rng.integers(space.n_ops))
            kb = int(rng.integers(space.n_ops))
            inter.append((int(ja), ka, int(jb), kb, float(rng.normal(0.0, interaction_scale))))
        return cls(
            tuple(tuple(float(x) for x in row) for row in u),
            tuple(float(x) for x in w),
            tuple(inter),
            seed,
        )


def tabular_evaluate(spec: TabularOracleSpec, arch: ArchitectureVector) -> float:
    """Pure reward: logistic of utilities + edge weights + interactions."""
    score = 0.0
    for j, k in enumerate(arch.ops):
        score += spec.op_utilities[j][k]
    for e, bit in enumerate(arch.skips):
        if bit:
            score += spec.edge_weights[e]
    for (ja, ka, jb, kb, coeff) in spec.interactions:
        if arch.ops[ja - 1] == ka and arch.ops[jb - 1] == kb:
            score += coeff
    return float(1.0 / (1.0 + np.exp(-score)))


class TabularOracle(Oracle):
    def __init__(self, spec: TabularOracleSpec, space: SearchSpaceSpec):
        if len(spec.op_utilities) != space.n_nodes or len(spec.edge_weights) != space.n_edges:
            raise ValueError("tabular tables do not match the space dimensions")
        self.spec = spec
        self.space = space

    def evaluate(self, arch: ArchitectureVector, step: int) -> float:
        return tabular_evaluate(self.spec, arch)


def _iter_space(space: SearchSpaceSpec):
    """All architectures in lexicographic (ops, skips) order."""
    import itertools

    skip_patterns = (
        [space.frozen_skips]
        if space.fixed_skip
        else itertools.product((0, 1), repeat=space.n_edges)
    )
    skip_patterns = [tuple(s) for s in skip_patterns]
    for ops in itertools.product(range(space.n_ops), repeat=space.n_nodes):
        for skips in skip_patterns:
            yield ArchitectureVector(ops, skips)


def enumerate_optimum(
    spec: TabularOracleSpec,
    space: SearchSpaceSpec,
    full_ranking: bool = False,
) -> tuple[ArchitectureVector, float, list[tuple[ArchitectureVector, float]] | None]:
    """Exhaustively scan the space; ties keep the lexicographically smallest
    (ops, skips) encoding. Guarded at 2^24 architectures."""
    op_count = space.n_ops ** space.n_nodes
    skip_count = 1 if space.fixed_skip else 2 ** space.n_edges
    total = op_count * skip_count
    if total > ENUMERATION_GUARD:
        raise GuardError(
            f"space has {total} architectures, enumeration guard is {ENUMERATION_GUARD}"
        )
    best_arch, best_reward = None, -np.inf
    ranking = [] if full_ranking else None
    for arch in _iter_space(space):
        r = tabular_evaluate(spec, arch)
        if ranking is not None:
            ranking.append((arch, r))
        if r > best_reward:
            best_arch, best_reward = arch, r
    if ranking is not None:
        ranking.sort(key=lambda ar: (-ar[1], ar[0].ops, ar[0].skips))
    return best_arch, float(best_reward), ranking


# ---------------------------------------------------------------------------
# Biased proxy-task wrapper
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProxyBiasSpec:
    bias_strength: float = 0.3   # bonus at step 0 for fully skip-dense archs
    decay_steps: float = 200.0   # e-folding of both bias and noise
    noise_scale: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.bias_strength < 0 or self.noise_scale < 0 or self.decay_steps <= 0:
            raise ValueError("proxy spec requires beta0, sigma0 >= 0 and T > 0")

    def bias(self, step: int) -> float:
        return self.bias_strength * float(np.exp(-step / self.decay_steps))

    def noise(self, step: int) -> float:
        return self.noise_scale * float(np.exp(-step / self.decay_steps))


def skip_density(arch: ArchitectureVector) -> float:
    """Fraction of candidate edges switched on (0.5 when there are none)."""
    if not arch.skips:
        return 0.5
    return sum(arch.skips) / len(arch.skips)


def _keyed_normal(seed: int, arch: ArchitectureVector, step: int) -> float:
    key = f"{seed}|{serialize_arch_vector(arch)}|{skips_to_hex(arch.skips)}|{step}"
    digest = hashlib.sha256(key.encode("utf-8")).digest()
    gen = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return float(gen.standard_normal())


class ProxyBiasOracle(Oracle):
    """Adds beta(step) * (skip_density - 0.5) plus sigma(step) * xi to the
    base reward, clamped to [0, 1]; xi is a standard normal keyed by
    (seed, arch, step), so evaluation stays deterministic."""

    def __init__(self, base: Oracle, spec: ProxyBiasSpec):
        self.base = base
        self.spec = spec

    def evaluate(self, arch: ArchitectureVector, step: int) -> float:
        r = self.base.evaluate(arch, step)
        r += self.spec.bias(step) * (skip_density(arch) - 0.5)
        sigma = self.spec.noise(step)
        if sigma > 0.0:
            r += sigma * _keyed_normal(self.spec.seed, arch, step)
        return float(min(1.0, max(0.0, r)))


# ---------------------------------------------------------------------------
# Toy weight-sharing supernet
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DatasetSpec:
    """Two balanced Gaussian classes at +-separation/2 along a random
    direction, isotropic noise, in feature_dim dimensions."""

    n_train: int = 512
    n_val: int = 256
    separation: float = 3.0
    noise: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ToySupernetSpec:
    feature_dim: int = 16
    child_steps: int = 50
    child_lr: float = 0.05
    child_batch: int = 32
    init_scale: float = 0.1
    grad_clip: float = 5.0       # global norm cap per child gradient step
    seed: int = 0
    dataset: DatasetSpec = DatasetSpec()

    def __post_init__(self):
        if self.feature_dim % 2 != 0:
            raise ValueError("feature_dim must be even (pooling halves it)")


def make_dataset(spec: DatasetSpec, feature_dim: int):
    rng = np.random.default_rng(spec.seed)
    direction = rng.normal(size=feature_dim)
    direction /= np.linalg.norm(direction)
    n = spec.n_train + spec.n_val
    y = np.array([0] * (n // 2) + [1] * (n - n // 2), dtype=np.int64)
    y = y[rng.permutation(n)]
    signs = np.where(y == 1, 1.0, -1.0)
    x = signs[:, None] * (spec.separation / 2.0) * direction + spec.noise * rng.normal(size=(n, feature_dim))
    return (x[: spec.n_train], y[: spec.n_train]), (x[spec.n_train:], y[spec.n_train:])


def _op_style(space: SearchSpaceSpec, k: int) -> str:
    """Toy semantics per vocabulary entry: parametric ops alternate between a
    rectified and a saturating affine transform, non-parametric ops between
    max and mean pooling over feature halves."""
    entry = space.vocab.entries[k]
    same_kind = [i for i, e in enumerate(space.vocab.entries) if e.parametric == entry.parametric]
    pos = same_kind.index(k)
    if entry.parametric:
        return "relu" if pos % 2 == 0 else "tanh"
    return "maxpool" if pos % 2 == 0 else "meanpool"


class ToySupernet(Oracle):
    """Weight-sharing supernet: node j's bank for parametric operator k is an
    affine transform; pooling operators own no parameters. Skip edges add the
    source node's output into the target node's input. A shared linear
    readout classifies the final node's features.

    evaluate() trains the selected child in place for child_steps minibatch
    gradient steps, then returns validation accuracy; the shared banks carry
    state across evaluations. evaluate_batch() trains every child against a
    common snapshot and applies the per-child parameter deltas in sample
    order, so batches are reproducible for any worker count.
    """

    def __init__(self, space: SearchSpaceSpec, spec: ToySupernetSpec):
        self.space = space
        self.spec = spec
        f = spec.feature_dim
        rng = np.random.default_rng(spec.seed)
        self.banks: dict[tuple[int, int], dict[str, np.ndarray]] = {}
        for j in range(1, space.n_nodes + 1):
            for k, entry in enumerate(space.vocab.entries):
                if entry.parametric:
                    self.banks[(j, k)] = {
                        "w": rng.normal(0.0, spec.init_scale / np.sqrt(f), size=(f, f)),
                        "b": np.zeros(f),
                    }
        self.readout = {
            "w": rng.normal(0.0, spec.init_scale / np.sqrt(f), size=(2, f)),
            "b": np.zeros(2),
        }
        (self.x_train, self.y_train), (self.x_val, self.y_val) = make_dataset(spec.dataset, f)
        self._styles = {k: _op_style(space, k) for k in range(space.n_ops)}

    # -- forward / backward over one child ---------------------------------

    def _forward(self, arch, x, banks, readout):
        f2 = self.spec.feature_dim // 2
        acts = [x]  # acts[t] = output of node t, acts[0] = input
        caches = []
        for j in range(1, self.space.n_nodes + 1):
            inp = acts[j - 1].copy()
            for e, (t, jj) in enumerate(self.space.topology.candidate_edges):
                if jj == j and arch.skips[e]:
                    inp += acts[t]
            k = arch.ops[j - 1]
            style = self._styles[k]
            if style in ("relu", "tanh"):
                bank = banks[(j, k)]
                pre = inp @ bank["w"].T + bank["b"]
                out = np.maximum(pre, 0.0) if style == "relu" else np.tanh(pre)
                caches.append(("par", j, k, style, inp, pre, out))
            else:
                u, v = inp[:, :f2], inp[:, f2:]
                if style == "maxpool":
                    m = np.maximum(u, v)
                    caches.append(("pool", j, k, style, inp, u >= v, None))
                else:
                    m = 0.5 * (u + v)
                    caches.append(("pool", j, k, style, inp, None, None))
                out = np.concatenate([m, m], axis=1)
            acts.append(out)
        logits = acts[-1] @ readout["w"].T + readout["b"]
        return acts, caches, logits

    @staticmethod
    def _softmax_ce(logits, y):
        shifted = logits - logits.max(axis=1, keepdims=True)
        lsm = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
        loss = float(-lsm[np.arange(len(y)), y].mean())
        probs = np.exp(lsm)
        dlogits = probs.copy()
        dlogits[np.arange(len(y)), y] -= 1.0
        return loss, dlogits / len(y)

    def _train_step(self, arch, xb, yb, banks, readout) -> float:
        acts, caches, logits = self._forward(arch, xb, banks, readout)
        loss, dlogits = self._softmax_ce(logits, yb)
        grads = {"out": (dlogits.T @ acts[-1], dlogits.sum(axis=0))}
        f2 = self.spec.feature_dim // 2
        d_acts = [np.zeros_like(a) for a in acts]
        d_acts[-1] = dlogits @ readout["w"]
        for cache in reversed(caches):
            kind, j, k, style, inp, aux, out = cache
            da = d_acts[j]
            if kind == "par":
                if style == "relu":
                    dpre = da * (aux > 0)          # aux = pre-activation
                else:
                    dpre = da * (1.0 - out ** 2)   # tanh'(pre) from the output
                grads[(j, k)] = (dpre.T @ inp, dpre.sum(axis=0))
                dinp = dpre @ banks[(j, k)]["w"]
            else:
                dm = da[:, :f2] + da[:, f2:]
                dinp = np.zeros_like(inp)
                if style == "maxpool":
                    dinp[:, :f2] = dm * aux        # aux = (u >= v) mask
                    dinp[:, f2:] = dm * (~aux)
                else:
                    dinp[:, :f2] = 0.5 * dm
                    dinp[:, f2:] = 0.5 * dm
            d_acts[j - 1] += dinp
            for e, (t, jj) in enumerate(self.space.topology.candidate_edges):
                if jj == j and arch.skips[e]:
                    d_acts[t] += dinp
        # Clipped SGD step: a deep rectified chain can otherwise blow up when
        # the same child is trained across many evaluations.
        total_sq = sum(float((gw * gw).sum() + (gb * gb).sum()) for gw, gb in grads.values())
        scale = self.spec.child_lr
        clip = self.spec.grad_clip
        if clip > 0 and total_sq > clip * clip:
            scale *= clip / np.sqrt(total_sq)
        for key, (gw, gb) in grads.items():
            target = readout if key == "out" else banks[key]
            target["w"] -= scale * gw
            target["b"] -= scale * gb
        return loss

    # -- contract -----------------------------------------------------------

    def _batch_rng(self, step: int, sample_idx: int):
        key = f"{self.spec.seed}|child|{step}|{sample_idx}"
        digest = hashlib.sha256(key.encode("utf-8")).digest()
        return np.random.default_rng(int.from_bytes(digest[:8], "little"))

    def _train_child(self, arch, step, sample_idx, banks, readout):
        rng = self._batch_rng(step, sample_idx)
        for _ in range(self.spec.child_steps):
            idx = rng.integers(0, len(self.x_train), size=self.spec.child_batch)
            self._train_step(arch, self.x_train[idx], self.y_train[idx], banks, readout)

    def _accuracy(self, arch, banks, readout) -> float:
        _, _, logits = self._forward(arch, self.x_val, banks, readout)
        return float((logits.argmax(axis=1) == self.y_val).mean())

    def evaluate(self, arch: ArchitectureVector, step: int) -> float:
        self._train_child(arch, step, 0, self.banks, self.readout)
        return self._accuracy(arch, self.banks, self.readout)

    def evaluate_batch(self, archs, step: int, pool=None) -> list[float]:
        snap_banks = {key: {n: v.copy() for n, v in bank.items()} for key, bank in self.banks.items()}
        snap_readout = {n: v.copy() for n, v in self.readout.items()}

        def run_child(i_arch):
            i, arch = i_arch
            try:
                banks = {key: {n: v.copy() for n, v in bank.items()}
                         for key, bank in snap_banks.items()}
                readout = {n: v.copy() for n, v in snap_readout.items()}
                self._train_child(arch, step, i, banks, readout)
                return self._accuracy(arch, banks, readout), banks, readout
            except Exception as exc:
                raise OracleFailure(i, exc) from exc

        tasks = list(enumerate(archs))
        results = list(pool.map(run_child, tasks)) if pool is not None else [run_child(t) for t in tasks]

        rewards = []
        for reward, banks, readout in results:
            for key, bank in banks.items():
                for name, value in bank.items():
                    self.banks[key][name] += value - snap_banks[key][name]
            for name, value in readout.items():
                self.readout[name] += value - snap_readout[name]
            rewards.append(reward)
        return rewards

    def pretrain(self, epochs: int, rng) -> list[float]:
        """Warm the shared banks on uniformly random architectures.

        One epoch is a full pass over the training split in minibatches, each
        with a freshly drawn architecture; returns per-epoch mean losses.
        """
        losses = []
        for _ in range(epochs):
            order = rng.permutation(len(self.x_train))
            batch_losses = []
            for start in range(0, len(order), self.spec.child_batch):
                idx = order[start:start + self.spec.child_batch]
                ops = tuple(int(k) for k in rng.integers(0, self.space.n_ops, self.space.n_nodes))
                if self.space.fixed_skip:
                    skips = self.space.frozen_skips
                else:
                    skips = tuple(int(b) for b in rng.integers(0, 2, self.space.n_edges))
                arch = ArchitectureVector(ops, skips)
                batch_losses.append(
                    self._train_step(arch, self.x_train[idx], self.y_train[idx], self.banks, self.readout)
                )
            losses.append(float(np.mean(batch_losses)))
        return losses

    def bank_checksums(self) -> dict:
        sums = {key: float(np.abs(bank["w"]).sum() + np.abs(bank["b"]).sum())
                for key, bank in self.banks.items()}
        sums["readout"] = float(np.abs(self.readout["w"]).sum() + np.abs(self.readout["b"]).sum())
        return sums


def supernet_pretrain(oracle: ToySupernet, epochs: int, rng) -> list[float]:
    if epochs < 0:
        raise ValueError("epochs must be >= 0")
    return oracle.pretrain(epochs, rng)
