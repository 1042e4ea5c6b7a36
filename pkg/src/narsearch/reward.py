"""Per-decision reward assignment implied by the policy gradient.

A batch of N sampled architectures with rewards R_i induces a credit table:
operator k at node j receives the mean of R_i over samples that picked it,
and each skip edge splits the mean reward between its realized values. Row
sums over a node's operators and the two sides of an edge both recover the
batch mean reward, which is the module's conservation check. Repeating the
assignment over fresh batches exposes how noisy each decision's credit is;
the skip side is systematically noisier at small N.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .archspace import SearchSpaceSpec
from .pgtrainer import SampleBatch


@dataclass(eq=False)
class RewardAssignmentTable:
    """op_rewards[j-1, k] and skip_rewards[e, value] credit per decision."""

    op_rewards: np.ndarray      # (n_nodes, n_ops)
    skip_rewards: np.ndarray    # (n_edges, 2), column index = skip value

    def to_json(self, spec: SearchSpaceSpec) -> dict:
        return {
            "op_rewards": [[float(x) for x in row] for row in self.op_rewards],
            "skip_rewards": [
                {"t": t, "j": j,
                 "r1": float(self.skip_rewards[e, 1]),
                 "r0": float(self.skip_rewards[e, 0])}
                for e, (t, j) in enumerate(spec.topology.candidate_edges)
            ],
        }


def assign_rewards(batch: SampleBatch, spec: SearchSpaceSpec) -> RewardAssignmentTable:
    """Accumulate R_i / N into each sampled decision's table cell."""
    n = batch.n
    op = np.zeros((spec.n_nodes, spec.n_ops))
    sk = np.zeros((spec.n_edges, 2))
    for s in batch.samples:
        share = s.reward / n
        for j, k in enumerate(s.arch.ops):
            op[j, k] += share
        for e, bit in enumerate(s.arch.skips):
            sk[e, bit] += share
    return RewardAssignmentTable(op, sk)


@dataclass(eq=False)
class NoiseStats:
    """Across-batch mean/variance per decision, plus a per-node view of how
    skip-credit noise grows with the number of incoming edges."""

    op_mean: np.ndarray      # (n_nodes, n_ops)
    op_var: np.ndarray
    skip_mean: np.ndarray    # (n_edges, 2)
    skip_var: np.ndarray
    count: int
    depth_profile: list[tuple[int, int, float]]  # (node j, incoming edges, mean skip var)

    def mean_op_variance(self) -> float:
        return float(self.op_var.mean())

    def mean_skip_variance(self) -> float:
        return float(self.skip_var.mean()) if self.skip_var.size else 0.0

    def rows(self, spec: SearchSpaceSpec):
        """CSV rows: decision_id, kind, node, edge_t, mean, variance, count."""
        for j in range(spec.n_nodes):
            for k in range(spec.n_ops):
                yield (f"op_j{j + 1}_k{k}", "op", j + 1, "",
                       float(self.op_mean[j, k]), float(self.op_var[j, k]), self.count)
        for e, (t, j) in enumerate(spec.topology.candidate_edges):
            for value in (1, 0):
                yield (f"skip_t{t}_j{j}_v{value}", "skip", j, t,
                       float(self.skip_mean[e, value]), float(self.skip_var[e, value]),
                       self.count)


def assignment_noise_stats(
    tables: list[RewardAssignmentTable], spec: SearchSpaceSpec
) -> NoiseStats:
    """Empirical mean and unbiased variance of every table entry across
    repeated batches (needs at least two tables)."""
    if len(tables) < 2:
        raise ValueError("need >= 2 tables for noise statistics")
    op_stack = np.stack([t.op_rewards for t in tables])
    sk_stack = np.stack([t.skip_rewards for t in tables])
    op_mean, op_var = op_stack.mean(axis=0), op_stack.var(axis=0, ddof=1)
    sk_mean, sk_var = sk_stack.mean(axis=0), sk_stack.var(axis=0, ddof=1)
    depth = []
    for j in range(3, spec.n_nodes + 1):
        idx = [e for e, (t, jj) in enumerate(spec.topology.candidate_edges) if jj == j]
        if idx:
            depth.append((j, len(idx), float(sk_var[idx].mean())))
    return NoiseStats(op_mean, op_var, sk_mean, sk_var, len(tables), depth)


def write_noise_csv(path, stats: NoiseStats, spec: SearchSpaceSpec):
    with open(path, "w") as fh:
        fh.write("decision_id,kind,node,edge_t,mean,variance,count\n")
        for row in stats.rows(spec):
            did, kind, node, t, mean, var, count = row
            fh.write(f"{did},{kind},{node},{t},{mean!r},{var!r},{count}\n")
