"""Search strategies over the architecture space.

* nar_search - operator refinement: skips frozen to an initial architecture's
  mask, the controller samples operators only. Optionally warms a supernet's
  shared parameters on random architectures first (the pretrain variant).
* joint_search - one controller over operators and skips together, the regime
  whose credit-assignment noise the toolkit is built to demonstrate.
* alternating_search - block-coordinate search: phases alternately free the
  operator decisions (skips forced to the incumbent) and the skip decisions
  (operators forced), the incumbent advancing to the best architecture each
  phase observed.
* exact_alternating_ascent - the same alternation with exact block maximization
  on an enumerable landscape, whose reward trace is provably non-decreasing
  and terminating.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from . import controller as ctl
from . import pgtrainer as pg
from .archspace import ArchitectureVector, SearchSpaceSpec
from .oracles import Oracle, TabularOracleSpec, ToySupernet, tabular_evaluate

NAR_FIXED_SKIP = "nar_fixed_skip"
ALTERNATING = "alternating"
JOINT = "joint"
SEARCH_MODES = (NAR_FIXED_SKIP, ALTERNATING, JOINT)


class SearchConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SearchConfig:
    space: SearchSpaceSpec
    mode: str
    oracle: Oracle
    master_seed: int
    updates: int = 500
    n_samples: int = 32
    lr: float = 3.5e-4
    baseline_enabled: bool = True
    baseline_decay: float = 0.95
    entropy_coef: float = 0.0
    block: int = 100                     # updates per alternating phase
    pretrain_epochs: int = 0
    hidden: int = 64
    embed: int | None = None
    temperature: float | None = None
    logit_clip: float | None = None
    init_arch: ArchitectureVector | None = None

    def __post_init__(self):
        if self.mode not in SEARCH_MODES:
            raise SearchConfigError(f"unknown search mode {self.mode!r}")
        if self.mode == NAR_FIXED_SKIP and not self.space.fixed_skip:
            raise SearchConfigError("nar_fixed_skip requires a frozen skip mask")
        if self.block < 1:
            raise SearchConfigError("alternation block must be >= 1")
        if self.updates < 0 or self.n_samples < 1:
            raise SearchConfigError("updates must be >= 0 and n_samples >= 1")

    def controller_config(self, controller_mode: str) -> ctl.ControllerConfig:
        return ctl.ControllerConfig(
            hidden=self.hidden,
            n_ops=self.space.n_ops,
            n_nodes=self.space.n_nodes,
            mode=controller_mode,
            embed=self.embed,
            temperature=self.temperature,
            logit_clip=self.logit_clip,
        )


@dataclass(frozen=True)
class PhaseRecord:
    index: int
    kind: str                      # "O" | "S"
    first_step: int
    updates: int
    incumbent: ArchitectureVector  # incumbent after the phase
    incumbent_reward: float


@dataclass
class SearchResult:
    best_arch: ArchitectureVector
    best_reward: float
    history: list[pg.UpdateRecord]
    params: ctl.ControllerParams
    derived_arch: ArchitectureVector
    phases: list[PhaseRecord] | None = None
    pretrain_losses: list[float] | None = None


def _seeds(config: SearchConfig):
    root = np.random.SeedSequence(config.master_seed)
    s_init, s_pretrain, s_updates, s_misc = root.spawn(4)
    return int(s_init.generate_state(1)[0]), s_pretrain, s_updates, s_misc


def _finalize(config, controller_mode, outcome, params, phases=None, pretrain_losses=None):
    derived = ctl.greedy_arch(params, config.space, controller_mode)
    if outcome is not None and outcome.best_arch is not None:
        best_arch, best_reward = outcome.best_arch, outcome.best_reward
        history = outcome.history
    else:
        best_arch = derived
        best_reward = float(config.oracle.evaluate(derived, 0))
        history = []
    return SearchResult(best_arch, best_reward, history, params, derived,
                        phases, pretrain_losses)


def nar_search(config: SearchConfig, pool=None) -> SearchResult:
    """Policy-gradient refinement of operators under the frozen skip mask."""
    if config.mode != NAR_FIXED_SKIP:
        raise SearchConfigError("nar_search requires mode nar_fixed_skip")
    init_seed, s_pre, s_upd, _ = _seeds(config)
    pretrain_losses = None
    if config.pretrain_epochs > 0 and isinstance(config.oracle, ToySupernet):
        rng = np.random.default_rng(s_pre)
        pretrain_losses = config.oracle.pretrain(config.pretrain_epochs, rng)
    params = ctl.init_controller(config.controller_config(ctl.FIXED_SKIP), init_seed)
    outcome = None
    if config.updates > 0:
        outcome = pg.run_reinforce(
            params, config.space, ctl.FIXED_SKIP, config.oracle,
            updates=config.updates, n_samples=config.n_samples, seed_seq=s_upd,
            lr=config.lr, baseline_enabled=config.baseline_enabled,
            baseline_decay=config.baseline_decay, entropy_coef=config.entropy_coef,
            pool=pool,
        )
        params = outcome.params
    return _finalize(config, ctl.FIXED_SKIP, outcome, params,
                     pretrain_losses=pretrain_losses)


def joint_search(config: SearchConfig, pool=None) -> SearchResult:
    """One controller over the joint operator + skip space."""
    if config.mode != JOINT:
        raise SearchConfigError("joint_search requires mode joint")
    init_seed, _, s_upd, _ = _seeds(config)
    params = ctl.init_controller(config.controller_config(ctl.JOINT), init_seed)
    outcome = None
    if config.updates > 0:
        outcome = pg.run_reinforce(
            params, config.space, ctl.JOINT, config.oracle,
            updates=config.updates, n_samples=config.n_samples, seed_seq=s_upd,
            lr=config.lr, baseline_enabled=config.baseline_enabled,
            baseline_decay=config.baseline_decay, entropy_coef=config.entropy_coef,
            pool=pool,
        )
        params = outcome.params
    return _finalize(config, ctl.JOINT, outcome, params)


def alternating_search(config: SearchConfig, pool=None) -> SearchResult:
    """Alternate operator phases (skips forced to the incumbent) with skip
    phases (operators forced), each `block` controller updates long.

    The incumbent starts from config.init_arch (default: the fresh policy's
    argmax) and advances to a phase's best observed architecture only when
    that strictly improves its reward, so the incumbent reward sequence at
    phase boundaries is non-decreasing. On spaces without candidate edges the
    skip phases are vacuous and the run degenerates to joint_search exactly.
    """
    if config.mode != ALTERNATING:
        raise SearchConfigError("alternating_search requires mode alternating")
    if config.space.n_edges == 0:
        result = joint_search(_with_mode(config, JOINT), pool=pool)
        result.phases = []
        return result

    init_seed, _, s_upd, _ = _seeds(config)
    params = ctl.init_controller(config.controller_config(ctl.JOINT), init_seed)
    if config.init_arch is not None:
        incumbent = config.init_arch
    else:
        incumbent = ctl.greedy_arch(params, config.space, ctl.JOINT)
    incumbent_reward = float(config.oracle.evaluate(incumbent, 0))

    history: list[pg.UpdateRecord] = []
    phases: list[PhaseRecord] = []
    best_arch, best_reward = incumbent, incumbent_reward
    step = 0
    phase_index = 0
    while step < config.updates:
        block = min(config.block, config.updates - step)
        kind = "O" if phase_index % 2 == 0 else "S"
        forced_ops = incumbent.ops if kind == "S" else None
        forced_skips = incumbent.skips if kind == "O" else None
        outcome = pg.run_reinforce(
            params, config.space, ctl.JOINT, config.oracle,
            updates=block, n_samples=config.n_samples, seed_seq=s_upd,
            lr=config.lr, baseline_enabled=config.baseline_enabled,
            baseline_decay=config.baseline_decay, entropy_coef=config.entropy_coef,
            step_offset=step,
            forcing=lambda u: (forced_ops, forced_skips),
            pool=pool,
        )
        params = outcome.params
        for rec in outcome.history:
            history.append(pg.UpdateRecord(rec.step, rec.mean_reward,
                                           max(best_reward, rec.best_so_far),
                                           rec.op_grad_norm, rec.skip_grad_norm))
        if outcome.best_reward > incumbent_reward:
            incumbent, incumbent_reward = outcome.best_arch, outcome.best_reward
        if outcome.best_reward > best_reward:
            best_arch, best_reward = outcome.best_arch, outcome.best_reward
        phases.append(PhaseRecord(phase_index, kind, step, block, incumbent, incumbent_reward))
        step += block
        phase_index += 1

    result = _finalize(config, ctl.JOINT, None, params, phases=phases)
    result.history = history
    result.best_arch, result.best_reward = best_arch, best_reward
    return result


def _with_mode(config: SearchConfig, mode: str) -> SearchConfig:
    from dataclasses import replace

    return replace(config, mode=mode)


def run_search(config: SearchConfig, pool=None) -> SearchResult:
    if config.mode == NAR_FIXED_SKIP:
        return nar_search(config, pool=pool)
    if config.mode == ALTERNATING:
        return alternating_search(config, pool=pool)
    return joint_search(config, pool=pool)


# ---------------------------------------------------------------------------
# Exact alternating coordinate ascent on a tabular landscape
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AscentStep:
    phase: str                    # "init" | "O" | "S"
    arch: ArchitectureVector
    reward: float


def _best_op_block(oracle_spec, space, arch, enum_limit):
    """Maximize the reward over all operator assignments with skips fixed.

    Enumerates when K^n fits the limit, otherwise runs per-node greedy passes
    to a node-wise local optimum. Returns the incumbent on ties."""
    if space.n_ops ** space.n_nodes <= enum_limit:
        best_ops, best_r = arch.ops, tabular_evaluate(oracle_spec, arch)
        for ops in itertools.product(range(space.n_ops), repeat=space.n_nodes):
            r = tabular_evaluate(oracle_spec, ArchitectureVector(ops, arch.skips))
            if r > best_r:
                best_ops, best_r = ops, r
        return ArchitectureVector(tuple(best_ops), arch.skips), best_r
    ops = list(arch.ops)
    best_r = tabular_evaluate(oracle_spec, arch)
    improved = True
    while improved:
        improved = False
        for j in range(space.n_nodes):
            for k in range(space.n_ops):
                if k == ops[j]:
                    continue
                cand = ops.copy()
                cand[j] = k
                r = tabular_evaluate(oracle_spec, ArchitectureVector(tuple(cand), arch.skips))
                if r > best_r:
                    ops, best_r, improved = cand, r, True
    return ArchitectureVector(tuple(ops), arch.skips), best_r


def _best_skip_block(oracle_spec, space, arch, enum_limit):
    """Maximize the reward over all skip patterns with operators fixed."""
    if 2 ** space.n_edges <= enum_limit:
        best_skips, best_r = arch.skips, tabular_evaluate(oracle_spec, arch)
        for skips in itertools.product((0, 1), repeat=space.n_edges):
            r = tabular_evaluate(oracle_spec, ArchitectureVector(arch.ops, skips))
            if r > best_r:
                best_skips, best_r = skips, r
        return ArchitectureVector(arch.ops, tuple(best_skips)), best_r
    skips = list(arch.skips)
    best_r = tabular_evaluate(oracle_spec, arch)
    improved = True
    while improved:
        improved = False
        for e in range(space.n_edges):
            cand = skips.copy()
            cand[e] = 1 - cand[e]
            r = tabular_evaluate(oracle_spec, ArchitectureVector(arch.ops, tuple(cand)))
            if r > best_r:
                skips, best_r, improved = cand, r, True
    return ArchitectureVector(arch.ops, tuple(skips)), best_r


def exact_alternating_ascent(
    oracle_spec: TabularOracleSpec,
    space: SearchSpaceSpec,
    init_arch: ArchitectureVector,
    enum_limit: int = 2 ** 20,
    max_phases: int = 10_000,
) -> tuple[list[AscentStep], int]:
    """Alternate exact operator and skip block maximization until a full
    round improves nothing.

    Returns the trace (starting from the initial architecture; only strictly
    improving phases append entries, so the rewards are non-decreasing and an
    optimal start yields a length-1 trace) plus the number of phases
    attempted. Termination is guaranteed: every recorded phase strictly
    improves a reward that has finitely many values.
    """
    reward = tabular_evaluate(oracle_spec, init_arch)
    arch = init_arch
    trace = [AscentStep("init", arch, reward)]
    attempts = 0
    while True:
        improved = False
        for kind in ("O", "S"):
            if kind == "S" and (space.fixed_skip or space.n_edges == 0):
                continue
            attempts += 1
            if attempts > max_phases:
                raise RuntimeError("exact ascent exceeded the phase limit")
            if kind == "O":
                cand, r = _best_op_block(oracle_spec, space, arch, enum_limit)
            else:
                cand, r = _best_skip_block(oracle_spec, space, arch, enum_limit)
            if r > reward:
                arch, reward = cand, r
                trace.append(AscentStep(kind, arch, reward))
                improved = True
        if not improved:
            return trace, attempts
