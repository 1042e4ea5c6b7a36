"""Command-line experiment harness.

    nar <search|enumerate|analyze-rewards|demo|gradcheck> --config <path>
        [--workers N] [--out DIR] [--no-plots]

Every run writes a manifest (config snapshot, seed, timestamps, output files)
before doing any work and finalizes it afterwards; re-running a command with
the manifest as its --config reproduces the numeric outputs bitwise for the
pure oracles, whatever --workers is. JSON outputs are validated against the
schemas shipped in narsearch/schemas. Exit codes: 0 success, 2 configuration
error, 3 size-guard violation, 4 oracle failure.

The output directory defaults to runs/<command>-<timestamp> and can be set
with --out or the NAR_OUT_DIR environment variable.
"""

from __future__ import annotations

import argparse
import datetime
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources

import numpy as np

from . import __version__
from . import archspace as asp
from . import controller as ctl
from . import nar
from . import oracles as orc
from . import pgtrainer as pg
from . import plots
from . import reward as rwd


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Schemas
# ---------------------------------------------------------------------------

def _load_schemas() -> dict:
    out = {}
    for entry in resources.files("narsearch.schemas").iterdir():
        if entry.name.endswith(".schema.json"):
            out[entry.name] = json.loads(entry.read_text())
    return out


_SCHEMAS = _load_schemas()


def _validator(name: str):
    import jsonschema
    from referencing import Registry, Resource

    registry = Registry().with_resources(
        (key, Resource.from_contents(schema)) for key, schema in _SCHEMAS.items()
    )
    return jsonschema.Draft202012Validator(_SCHEMAS[name], registry=registry)


def validate_json(obj, schema_name: str):
    errors = sorted(_validator(schema_name).iter_errors(obj), key=str)
    if errors:
        raise ConfigError(
            f"{schema_name}: " + "; ".join(e.message for e in errors[:5])
        )


def write_json(path, obj, schema_name: str | None = None):
    if schema_name is not None:
        validate_json(obj, schema_name)
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Config loading and builders
# ---------------------------------------------------------------------------

def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if "config" in raw and "tool" in raw:   # a manifest; rerun its config
        raw = raw["config"]
    validate_json(raw, "config.schema.json")
    return raw


def build_space(cfg: dict) -> asp.SearchSpaceSpec:
    sc = cfg["space"]
    ops = sc["operators"]
    if isinstance(ops, str):
        vocab = asp.VOCAB_PRESETS[ops]
    else:
        vocab = asp.OperatorVocabulary(
            tuple(asp.OperatorDescriptor(o["name"], bool(o["parametric"])) for o in ops)
        )
    topo = asp.candidate_edges(int(sc["n_nodes"]))
    frozen = sc.get("frozen_skips")
    if frozen is None:
        mask = None
    elif frozen in asp.SKIP_MASK_PRESETS:
        mask = asp.SKIP_MASK_PRESETS[frozen](topo)
    else:
        mask = asp.skips_from_hex(frozen, topo.n_edges)
    try:
        return asp.SearchSpaceSpec(vocab, topo, mask)
    except asp.ArchSpaceError as exc:
        raise ConfigError(str(exc))


def build_oracle(cfg: dict, space: asp.SearchSpaceSpec):
    oc = cfg.get("oracle")
    if oc is None:
        raise ConfigError("config needs an 'oracle' section")
    kind = oc["kind"]
    if kind == "tabular":
        spec = orc.TabularOracleSpec.generate(
            space,
            seed=int(oc.get("seed", 0)),
            op_scale=float(oc.get("op_scale", 1.0)),
            edge_scale=float(oc.get("edge_scale", 0.5)),
            n_interactions=int(oc.get("interactions", 0)),
            interaction_scale=float(oc.get("interaction_scale", 0.3)),
        )
        return orc.TabularOracle(spec, space)
    if kind == "proxy":
        base_cfg = dict(cfg)
        base_cfg["oracle"] = oc.get("base", {"kind": "tabular", "seed": oc.get("seed", 0)})
        base = build_oracle(base_cfg, space)
        pspec = orc.ProxyBiasSpec(
            bias_strength=float(oc.get("bias_strength", 0.3)),
            decay_steps=float(oc.get("decay_steps", 200.0)),
            noise_scale=float(oc.get("noise_scale", 0.1)),
            seed=int(oc.get("seed", 0)),
        )
        return orc.ProxyBiasOracle(base, pspec)
    if kind == "supernet":
        ds = oc.get("dataset", {})
        sspec = orc.ToySupernetSpec(
            feature_dim=int(oc.get("feature_dim", 16)),
            child_steps=int(oc.get("child_steps", 50)),
            child_lr=float(oc.get("child_lr", 0.05)),
            child_batch=int(oc.get("child_batch", 32)),
            init_scale=float(oc.get("init_scale", 0.1)),
            grad_clip=float(oc.get("grad_clip", 5.0)),
            seed=int(oc.get("seed", 0)),
            dataset=orc.DatasetSpec(
                n_train=int(ds.get("n_train", 512)),
                n_val=int(ds.get("n_val", 256)),
                separation=float(ds.get("separation", 3.0)),
                noise=float(ds.get("noise", 1.0)),
                seed=int(ds.get("seed", 0)),
            ),
        )
        return orc.ToySupernet(space, sspec)
    raise ConfigError(f"unknown oracle kind {kind!r}")


def build_search_config(cfg: dict, space, oracle) -> nar.SearchConfig:
    mode = cfg.get("mode")
    if mode is None:
        raise ConfigError("search config needs a top-level 'mode'")
    sc = cfg.get("search", {})
    cc = cfg.get("controller", {})
    init_arch = None
    init_ops = sc.get("init_ops")
    if init_ops is not None:
        try:
            init_arch = asp.parse_arch_vector(init_ops, space)
        except asp.ArchSpaceError as exc:
            raise ConfigError(f"init_ops: {exc}")
    try:
        return nar.SearchConfig(
            space=space,
            mode=mode,
            oracle=oracle,
            master_seed=int(cfg["seed"]),
            updates=int(sc.get("updates", 500)),
            n_samples=int(sc.get("n_samples", 32)),
            lr=float(sc.get("lr", 3.5e-4)),
            baseline_enabled=bool(sc.get("baseline", True)),
            baseline_decay=float(sc.get("baseline_decay", 0.95)),
            entropy_coef=float(sc.get("entropy_coef", 0.0)),
            block=int(sc.get("block", 100)),
            pretrain_epochs=int(sc.get("pretrain_epochs", 0)),
            hidden=int(cc.get("hidden", 64)),
            embed=cc.get("embed"),
            temperature=cc.get("temperature"),
            logit_clip=cc.get("logit_clip"),
            init_arch=init_arch,
        )
    except nar.SearchConfigError as exc:
        raise ConfigError(str(exc))


# ---------------------------------------------------------------------------
# Manifest
# ---------------------------------------------------------------------------

class Manifest:
    def __init__(self, command: str, cfg: dict, out_dir, workers: int):
        self.data = {
            "tool": "nar",
            "version": __version__,
            "command": command,
            "seed": int(cfg["seed"]),
            "config": cfg,
            "started_at": datetime.datetime.now(datetime.timezone.utc).isoformat(),
            "finished_at": None,
            "out_dir": str(out_dir),
            "workers": workers,
            "outputs": [],
        }
        self.path = os.path.join(out_dir, "manifest.json")
        write_json(self.path, self.data, "manifest.schema.json")

    def add(self, *paths):
        self.data["outputs"].extend(os.path.basename(str(p)) for p in paths)

    def finalize(self):
        self.data["finished_at"] = datetime.datetime.now(datetime.timezone.utc).isoformat()
        write_json(self.path, self.data, "manifest.schema.json")


def _arch_json(arch: asp.ArchitectureVector) -> dict:
    return asp.arch_to_json(arch)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_search(cfg, out_dir, workers, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    oracle = build_oracle(cfg, space)
    config = build_search_config(cfg, space, oracle)
    result = nar.run_search(config, pool=pool)

    ckpt = os.path.join(out_dir, "controller.ckpt")
    ctl.save_checkpoint(ckpt, result.params, config.master_seed)

    gradlog = pg.GradLog([pg.GradRecord(h.step, h.op_grad_norm, h.skip_grad_norm)
                          for h in result.history])
    gradlog_path = os.path.join(out_dir, "gradlog.csv")
    gradlog.write_csv(gradlog_path)

    payload = {
        "mode": config.mode,
        "space": asp.space_to_json(space),
        "best_arch": _arch_json(result.best_arch),
        "best_reward": result.best_reward,
        "derived_arch": _arch_json(result.derived_arch),
        "checkpoint": "controller.ckpt",
        "pretrain_losses": result.pretrain_losses,
        "phases": None if result.phases is None else [
            {"index": p.index, "kind": p.kind, "first_step": p.first_step,
             "updates": p.updates, "incumbent": _arch_json(p.incumbent),
             "incumbent_reward": p.incumbent_reward}
            for p in result.phases
        ],
        "history": [
            {"step": h.step, "mean_reward": h.mean_reward, "best_so_far": h.best_so_far,
             "op_grad_norm": h.op_grad_norm, "skip_grad_norm": h.skip_grad_norm}
            for h in result.history
        ],
    }
    result_path = os.path.join(out_dir, "result.json")
    write_json(result_path, payload, "result.schema.json")

    outputs = [result_path, gradlog_path, ckpt]
    if make_plots and result.history:
        fig_path = os.path.join(out_dir, "search.png")
        plots.plot_search_history(result.history, fig_path)
        outputs.append(fig_path)
    print(f"best arch {asp.serialize_arch_vector(result.best_arch)} "
          f"reward {result.best_reward:.6f}")
    return outputs


def cmd_enumerate(cfg, out_dir, workers, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    oracle = build_oracle(cfg, space)
    if not isinstance(oracle, orc.TabularOracle):
        raise ConfigError("enumerate requires a tabular oracle")
    full = bool(cfg.get("enumerate", {}).get("full_ranking", False))
    best, best_reward, ranking = orc.enumerate_optimum(oracle.spec, space, full_ranking=full)
    op_count, skip_count = asp.cardinality(space)

    outputs = []
    ranking_name = None
    if ranking is not None:
        ranking_path = os.path.join(out_dir, "ranking.csv")
        with open(ranking_path, "w") as fh:
            fh.write("rank,ops,skips,reward\n")
            for i, (arch, r) in enumerate(ranking):
                fh.write(f"{i + 1},{asp.serialize_arch_vector(arch)},"
                         f"{asp.skips_to_hex(arch.skips)},{r!r}\n")
        outputs.append(ranking_path)
        ranking_name = "ranking.csv"

    payload = {
        "space": asp.space_to_json(space),
        "best_arch": _arch_json(best),
        "best_reward": best_reward,
        "n_architectures": op_count * skip_count,
        "ranking_csv": ranking_name,
    }
    optimum_path = os.path.join(out_dir, "optimum.json")
    write_json(optimum_path, payload, "optimum.schema.json")
    print(f"optimum {asp.serialize_arch_vector(best)} reward {best_reward:.6f}")
    return [optimum_path] + outputs


def cmd_analyze_rewards(cfg, out_dir, workers, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    oracle = build_oracle(cfg, space)
    an = cfg.get("analysis", {})
    batches = int(an.get("batches", 50))
    n_samples = int(an.get("n_samples", 16))
    mode = ctl.FIXED_SKIP if space.fixed_skip else ctl.JOINT

    root = np.random.SeedSequence(int(cfg["seed"]))
    s_init, s_batches = root.spawn(2)
    cc = cfg.get("controller", {})
    params = ctl.init_controller(
        ctl.ControllerConfig(hidden=int(cc.get("hidden", 64)), n_ops=space.n_ops,
                             n_nodes=space.n_nodes, mode=mode, embed=cc.get("embed")),
        int(s_init.generate_state(1)[0]),
    )
    tables = []
    for b in range(batches):
        rng = np.random.default_rng(s_batches.spawn(1)[0])
        batch = pg.collect_batch(params, space, mode, oracle, n_samples, b, rng, pool=pool)
        tables.append(rwd.assign_rewards(batch, space))
    stats = rwd.assignment_noise_stats(tables, space)

    mean_table = rwd.RewardAssignmentTable(stats.op_mean, stats.skip_mean)
    payload = mean_table.to_json(space)
    payload.update({"batches": batches, "n_samples": n_samples, "aggregate": "mean"})
    assignment_path = os.path.join(out_dir, "assignment.json")
    write_json(assignment_path, payload, "assignment.schema.json")

    noise_path = os.path.join(out_dir, "noise.csv")
    rwd.write_noise_csv(noise_path, stats, space)

    outputs = [assignment_path, noise_path]
    if make_plots:
        fig_path = os.path.join(out_dir, "noise.png")
        plots.plot_noise_profile(stats, space, fig_path)
        outputs.append(fig_path)
    print(f"mean op-credit variance {stats.mean_op_variance():.3e}, "
          f"mean skip-credit variance {stats.mean_skip_variance():.3e}")
    return outputs


def _demo_fig1(cfg, out_dir, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    if space.fixed_skip:
        raise ConfigError("the gradient-magnitude demo needs a joint space (no frozen skips)")
    n_seeds = int(cfg.get("demo", {}).get("seeds", 10))
    base_seed = int(cfg["seed"])

    series, rows = {}, []
    csv_path = os.path.join(out_dir, "fig1_gradnorms.csv")
    with open(csv_path, "w") as fh:
        fh.write("seed,step,op_grad_norm,skip_grad_norm\n")
        for i in range(n_seeds):
            run_cfg = cfg.copy()
            oracle = build_oracle(run_cfg, space)
            config = build_search_config({**cfg, "mode": "joint", "seed": base_seed + i},
                                         space, oracle)
            result = nar.joint_search(config, pool=pool)
            op = np.array([h.op_grad_norm for h in result.history])
            sk = np.array([h.skip_grad_norm for h in result.history])
            for h in result.history:
                fh.write(f"{base_seed + i},{h.step},{h.op_grad_norm!r},{h.skip_grad_norm!r}\n")
            series[base_seed + i] = (op, sk)
            rows.append({
                "seed": base_seed + i,
                "op_var": float(op.var(ddof=1)),
                "skip_var": float(sk.var(ddof=1)),
                "skip_noisier": bool(sk.var(ddof=1) > op.var(ddof=1)),
            })
    count = sum(r["skip_noisier"] for r in rows)
    payload = {"seeds": rows, "skip_noisier_count": count, "n_seeds": n_seeds,
               "majority": count * 2 > n_seeds}
    summary_path = os.path.join(out_dir, "fig1_summary.json")
    write_json(summary_path, payload, "demo_fig1.schema.json")
    outputs = [csv_path, summary_path]
    if make_plots:
        fig_path = os.path.join(out_dir, "fig1.png")
        plots.plot_grad_norm_series(series, fig_path)
        outputs.append(fig_path)
    print(f"skip-head gradient noisier than operator head in {count}/{n_seeds} seeds")
    return outputs


def _demo_bias(cfg, out_dir, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    if not space.fixed_skip:
        raise ConfigError("the bias demo needs space.frozen_skips for the refinement arm")
    joint_space = asp.SearchSpaceSpec(space.vocab, space.topology, None)
    oc = cfg.get("oracle", {})
    if oc.get("kind") != "proxy":
        raise ConfigError("the bias demo needs a proxy oracle wrapping a tabular base")
    base_oracle = build_oracle({**cfg, "oracle": oc.get("base", {"kind": "tabular"})},
                               joint_space)
    optimum, optimum_reward, _ = orc.enumerate_optimum(base_oracle.spec, joint_space)
    optimum_density = orc.skip_density(optimum)

    n_seeds = int(cfg.get("demo", {}).get("seeds", 10))
    base_seed = int(cfg["seed"])
    rows = []
    for i in range(n_seeds):
        proxied = build_oracle({**cfg, "oracle": {**oc, "seed": int(oc.get("seed", 0)) + i}},
                               joint_space)
        config = build_search_config({**cfg, "mode": "joint", "seed": base_seed + i},
                                     joint_space, proxied)
        result = nar.joint_search(config, pool=pool)
        rows.append({
            "seed": base_seed + i,
            "density": orc.skip_density(result.derived_arch),
            "best_reward": result.best_reward,
        })

    refine_oracle = build_oracle({**cfg, "oracle": oc}, space)
    refine_cfg = build_search_config({**cfg, "mode": "nar_fixed_skip", "seed": base_seed},
                                     space, refine_oracle)
    refine_result = nar.nar_search(refine_cfg, pool=pool)
    refine_density = orc.skip_density(refine_result.derived_arch)
    mask_density = sum(space.frozen_skips) / max(1, space.n_edges)

    exceed = sum(r["density"] > optimum_density for r in rows)
    payload = {
        "bias_strength": float(oc.get("bias_strength", 0.3)),
        "optimum_density": optimum_density,
        "optimum_reward": optimum_reward,
        "frozen_mask_density": mask_density,
        "refine_density": refine_density,
        "joint": rows,
        "exceed_count": exceed,
        "n_seeds": n_seeds,
    }
    summary_path = os.path.join(out_dir, "bias_summary.json")
    write_json(summary_path, payload, "demo_bias.schema.json")

    csv_path = os.path.join(out_dir, "bias_densities.csv")
    with open(csv_path, "w") as fh:
        fh.write("seed,joint_density,optimum_density,frozen_mask_density\n")
        for r in rows:
            fh.write(f"{r['seed']},{r['density']!r},{optimum_density!r},{mask_density!r}\n")

    outputs = [summary_path, csv_path]
    if make_plots:
        fig_path = os.path.join(out_dir, "bias.png")
        plots.plot_bias_densities([r["density"] for r in rows], optimum_density,
                                  mask_density, fig_path)
        outputs.append(fig_path)
    print(f"joint argmax denser than the base optimum in {exceed}/{n_seeds} seeds "
          f"(optimum density {optimum_density:.2f}, refinement density {refine_density:.2f})")
    return outputs


def _demo_eq11(cfg, out_dir, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    demo = cfg.get("demo", {})
    instances = int(demo.get("instances", 100))
    interactions = int(demo.get("interactions", 5))
    base_seed = int(cfg["seed"])

    rng = np.random.default_rng(base_seed)
    monotone = 0
    max_attempts = 0
    lengths = []
    traces_for_plot = []
    csv_path = os.path.join(out_dir, "trace.csv")
    with open(csv_path, "w") as fh:
        fh.write("instance,phase_index,phase,arch,skips,reward\n")
        for inst in range(instances):
            spec = orc.TabularOracleSpec.generate(
                space, seed=int(rng.integers(2 ** 31)), n_interactions=interactions)
            ops = tuple(int(x) for x in rng.integers(0, space.n_ops, space.n_nodes))
            if space.fixed_skip:
                skips = space.frozen_skips
            else:
                skips = tuple(int(x) for x in rng.integers(0, 2, space.n_edges))
            init = asp.ArchitectureVector(ops, skips)
            trace, attempts = nar.exact_alternating_ascent(spec, space, init)
            rewards = [s.reward for s in trace]
            if all(rewards[i] <= rewards[i + 1] for i in range(len(rewards) - 1)):
                monotone += 1
            max_attempts = max(max_attempts, attempts)
            lengths.append(len(trace))
            if inst < 8:
                traces_for_plot.append(trace)
            for pi, s in enumerate(trace):
                fh.write(f"{inst},{pi},{s.phase},{asp.serialize_arch_vector(s.arch)},"
                         f"{asp.skips_to_hex(s.arch.skips)},{s.reward!r}\n")

    payload = {
        "instances": instances,
        "monotone_count": monotone,
        "verdict": f"monotone: {monotone}/{instances}",
        "max_phases_attempted": max_attempts,
        "mean_trace_length": float(np.mean(lengths)),
    }
    summary_path = os.path.join(out_dir, "eq11_summary.json")
    write_json(summary_path, payload, "demo_eq11.schema.json")
    outputs = [csv_path, summary_path]
    if make_plots:
        fig_path = os.path.join(out_dir, "eq11.png")
        plots.plot_ascent_traces(traces_for_plot, fig_path)
        outputs.append(fig_path)
    print(payload["verdict"])
    return outputs


def cmd_demo(which, cfg, out_dir, workers, pool, make_plots) -> list[str]:
    runner = {"fig1": _demo_fig1, "bias": _demo_bias, "eq11": _demo_eq11}.get(which)
    if runner is None:
        raise ConfigError(f"unknown demo {which!r}")
    return runner(cfg, out_dir, pool, make_plots)


def cmd_gradcheck(cfg, out_dir, workers, pool, make_plots) -> list[str]:
    space = build_space(cfg)
    gc = cfg.get("gradcheck", {})
    points = int(gc.get("points", 20))
    h = float(gc.get("h", 1e-6))
    tolerance = float(gc.get("tolerance", 1e-5))
    modes = gc.get("modes", ["joint", "fixed_skip"])
    cc = cfg.get("controller", {})
    hidden = int(cc.get("hidden", 8))

    root = np.random.SeedSequence(int(cfg["seed"]))
    report = {}
    overall = 0.0
    for mode in modes:
        if mode == ctl.FIXED_SKIP and not space.fixed_skip:
            check_space = asp.SearchSpaceSpec(
                space.vocab, space.topology, (0,) * space.topology.n_edges)
        elif mode == ctl.JOINT and space.fixed_skip:
            check_space = asp.SearchSpaceSpec(space.vocab, space.topology, None)
        else:
            check_space = space
        errors = []
        for i in range(points):
            s_params, s_arch = root.spawn(2)
            config = ctl.ControllerConfig(hidden=hidden, n_ops=space.n_ops,
                                          n_nodes=space.n_nodes, mode=mode,
                                          embed=cc.get("embed"))
            if i == 0:
                params = ctl.ControllerParams(config, np.zeros(ctl.param_count(config)))
            else:
                params = ctl.init_controller(config, int(s_params.generate_state(1)[0]))
            arch, _ = ctl.sample(params, check_space, mode,
                                 np.random.default_rng(s_arch))
            errors.append(ctl.finite_diff_check(params, check_space, mode, arch, h=h))
        report[mode] = {"max_rel_error": max(errors), "errors": errors}
        overall = max(overall, max(errors))

    payload = {"h": h, "tolerance": tolerance, "points": points, "modes": report,
               "max_rel_error": overall, "pass": bool(overall < tolerance)}
    report_path = os.path.join(out_dir, "gradcheck.json")
    write_json(report_path, payload, "gradcheck.schema.json")
    print(f"gradcheck max relative error {overall:.3e} "
          f"({'PASS' if payload['pass'] else 'FAIL'} vs {tolerance:g})")
    return [report_path]


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nar",
        description="Architecture search experiments: operator refinement with "
                    "frozen skips, joint and alternating policy-gradient search, "
                    "enumeration, credit-assignment analysis, gradient checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="config JSON (or a manifest to re-run)")
        p.add_argument("--workers", type=int, default=os.cpu_count() or 1,
                       help="oracle evaluation workers (default: logical cores)")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--no-plots", action="store_true", help="skip figure rendering")

    common(sub.add_parser("search", help="run the configured search mode"))
    common(sub.add_parser("enumerate", help="exhaustively score a tabular space"))
    common(sub.add_parser("analyze-rewards", help="per-decision credit tables and noise"))
    demo = sub.add_parser("demo", help="canned experiments")
    demo.add_argument("which", choices=["fig1", "bias", "eq11"])
    common(demo)
    common(sub.add_parser("gradcheck", help="finite-difference check of controller gradients"))
    return parser


def _out_dir(args) -> str:
    base = args.out or os.environ.get("NAR_OUT_DIR")
    if base is None:
        stamp = datetime.datetime.now().strftime("%Y%m%d-%H%M%S")
        base = os.path.join("runs", f"{args.command}-{stamp}")
    os.makedirs(base, exist_ok=True)
    return base


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        out_dir = _out_dir(args)
        manifest = Manifest(args.command, cfg, out_dir, args.workers)
        pool = ThreadPoolExecutor(args.workers) if args.workers > 1 else None
        try:
            if args.command == "search":
                outputs = cmd_search(cfg, out_dir, args.workers, pool, not args.no_plots)
            elif args.command == "enumerate":
                outputs = cmd_enumerate(cfg, out_dir, args.workers, pool, not args.no_plots)
            elif args.command == "analyze-rewards":
                outputs = cmd_analyze_rewards(cfg, out_dir, args.workers, pool, not args.no_plots)
            elif args.command == "demo":
                outputs = cmd_demo(args.which, cfg, out_dir, args.workers, pool, not args.no_plots)
            else:
                outputs = cmd_gradcheck(cfg, out_dir, args.workers, pool, not args.no_plots)
        finally:
            if pool is not None:
                pool.shutdown()
        manifest.add(*outputs)
        manifest.finalize()
        print(f"outputs in {out_dir}")
        return 0
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except orc.GuardError as exc:
        print(f"guard violation: {exc}", file=sys.stderr)
        return 3
    except pg.OracleFailure as exc:
        print(f"oracle failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
