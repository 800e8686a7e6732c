"""Command-line surface.

Subcommands: train, eval, demo, validate, run, analyze-limits, replay,
ablate, serve, plus init-config / init-net to materialize editable
starting files.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np
import yaml

from . import compliance
from .config import (
    VARIANTS,
    RunConfig,
    apply_variant,
    load_config,
    save_config,
)
from .hil import OracleConfig, ScriptedOracle, collect_demos
from .mpnet import default_insertion_net, load_net, save_net, traverse, validate_mpnet
from .records import append_episode, read_episodes
from .runtime import (
    build_env,
    build_net,
    evaluate_checkpoint,
    format_ablation_table,
    occupancy_analysis,
    occupancy_to_csv,
    run_ablation_suite,
    train,
)


def _cmd_init_config(args) -> int:
    cfg = apply_variant(RunConfig(seed=args.seed), args.variant)
    save_config(cfg, args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_init_net(args) -> int:
    save_net(default_insertion_net(), args.out)
    print(f"wrote {args.out}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    if args.variant:
        cfg = apply_variant(cfg, args.variant)
    if args.episodes is not None:
        cfg = dataclasses.replace(cfg, train_episodes=args.episodes)
    res = train(cfg, args.out)
    print(
        f"done: eval success {res.eval.success_rate:.2f}, "
        f"cycle {res.eval.cycle_time if res.eval.cycle_time is None else round(res.eval.cycle_time, 2)} s, "
        f"final intervention rate {res.final_window.intervention_rate:.3f}, "
        f"{res.updates} updates in {res.wallclock_s:.0f} s"
    )
    print(f"checkpoint: {res.checkpoint}")
    return 0


def _cmd_eval(args) -> int:
    rep = evaluate_checkpoint(args.checkpoint, n=args.n)
    cyc = "-" if rep.cycle_time is None else f"{rep.cycle_time:.2f} s"
    print(f"episodes: {rep.n}")
    print(f"success rate: {rep.success_rate:.2f}")
    print(f"mean cycle time: {cyc}")
    print(f"outcomes: {''.join('S' if o else 'F' for o in rep.outcomes)}")
    return 0


def _cmd_demo(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    env = build_env(cfg, reset_seed=cfg.seed + 13)
    net = build_net(cfg)
    if args.operator == "scripted":
        operator = ScriptedOracle(cfg.geometry, OracleConfig(seed=cfg.seed + 11),
                                  mode="demo")
    else:
        from .bridge import ConsoleBridge, ConsoleGate

        bridge = ConsoleBridge(port=args.port)
        bridge.start()
        print(f"console bridge listening on ws://127.0.0.1:{bridge.port}")
        operator = _ConsoleDemoOperator(ConsoleGate(bridge))
    records, discarded = collect_demos(args.n, net, env, operator)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("")
    for rec in records:
        append_episode(out, rec)
    print(f"stored {len(records)} successful demos ({discarded} discarded) -> {out}")
    return 0


class _ConsoleDemoOperator:
    """Demo-mode operator backed by the console gate; always overriding."""

    def __init__(self, gate):
        self.gate = gate

    def begin_episode(self, episode: int) -> None:
        pass

    def poll(self, state, obs=None, node: str = "", elapsed: int = 0, env=None,
             mode: str = "demo"):
        from .hil import OperatorInput

        inp = self.gate.poll(state, obs, node, elapsed, env, mode)
        if inp is None:
            inp = OperatorInput(axes=np.zeros(self.gate.act_dim),
                                override_active=True, source="console")
        inp.override_active = True
        return inp


def _cmd_validate(args) -> int:
    net = load_net(args.net)
    problems = validate_mpnet(net)
    if not problems:
        print(f"{args.net}: OK ({len(net.nodes)} nodes, initial {net.initial!r})")
        return 0
    for p in problems:
        print(f"VIOLATION: {p}")
    return 1


def _cmd_run(args) -> int:
    net = load_net(args.net)
    cfg = load_config(args.config) if args.config else RunConfig()
    env = build_env(cfg, reset_seed=cfg.seed)
    outcomes = []
    for ep in range(args.n):
        env.reset(ep)
        if args.mode == "demo":
            oracle = ScriptedOracle(cfg.geometry, OracleConfig(seed=cfg.seed + 11),
                                    mode="demo")
            oracle.begin_episode(ep)
            rec = traverse(net, env, gate=oracle, mode="demo", episode=ep)
        else:
            mp = net.adaptive_node()
            dim = mp.action_dim if mp else 0
            rec = traverse(net, env, policy=lambda f: np.zeros(dim),
                           mode=args.mode, episode=ep)
        outcomes.append(rec.outcome)
        print(
            f"episode {ep}: {'success' if rec.outcome else 'failure'} "
            f"in {rec.n_steps} steps (cycle {rec.cycle_steps()} ticks)"
        )
        if args.out:
            append_episode(args.out, rec)
    print(f"success rate: {np.mean(outcomes):.2f}")
    return 0


def _load_limit_specs(path: str) -> list[dict]:
    with open(path) as f:
        doc = yaml.safe_load(f)
    if "axes" in doc:
        return doc["axes"]
    # fall back: a full run config; analyze its adaptive production limits
    from .sim import default_limits

    cfg = load_config(path)
    specs = []
    for axis, lim in default_limits(static=cfg.limits == "static").items():
        if lim.kind != "adaptive":
            print(f"note: axis {axis} uses a static bound, skipping")
            continue
        c = lim.adaptive
        specs.append(
            {"axis_label": axis, "f_max": c.f_max, "alpha_min": c.alpha_min,
             "theta": c.theta}
        )
    return specs


def _cmd_analyze_limits(args) -> int:
    specs = _load_limit_specs(args.config)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    status = 0
    for spec in specs:
        label = spec.get("axis_label", "axis")
        f_max = float(spec["f_max"])
        alpha_min = float(spec["alpha_min"])
        if "theta" in spec:
            theta = float(spec["theta"])
        elif "equilibrium" in spec:
            theta = compliance.solve_theta(float(spec["equilibrium"]), f_max, alpha_min)
        else:
            print(f"axis {label}: need theta or equilibrium")
            status = 1
            continue
        cfg = compliance.AdaptiveLimitConfig(
            f_max=f_max, alpha_min=alpha_min, theta=theta, axis_label=label
        )
        rep = compliance.check_stability(cfg)
        verdict = "STABLE" if rep.stable else "UNSTABLE"
        print(
            f"axis {label}: f_max={f_max:g} alpha_min={alpha_min:g} "
            f"theta={theta:.6f} fixed_point={rep.fixed_point:.6f} "
            f"margin={rep.margin:.4f} {verdict}"
        )
        f0 = float(spec.get("f0", 0.0))
        steps = int(spec.get("steps", 100))
        seq = compliance.simulate_recurrence(cfg, f0, steps)
        csv_path = out_dir / f"limit_{label}.csv"
        with open(csv_path, "w") as f:
            f.write("step,f_meas,f_lim\n")
            for t, fm in enumerate(seq):
                f_lim = compliance.alpha_eval(fm, cfg) * cfg.f_max
                f.write(f"{t},{fm:.9f},{f_lim:.9f}\n")
        print(f"  trace -> {csv_path}")
    return status


def _cmd_replay(args) -> int:
    records = read_episodes(args.log)
    if not records:
        print("no episodes in log")
        return 1
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    steps_path = out_dir / "steps.csv"
    with open(steps_path, "w") as f:
        f.write(
            "episode,tick,primitive,x,z,c,vx,vz,wc,fx,fz,mc,"
            "action0,action1,intervened,reward\n"
        )
        for rec in records:
            for s in rec.steps:
                a0 = s.action[0] if s.action else ""
                a1 = s.action[1] if s.action and len(s.action) > 1 else ""
                f.write(
                    f"{rec.episode},{s.tick},{s.primitive},"
                    f"{s.pose[0]:.4f},{s.pose[1]:.4f},{s.pose[2]:.4f},"
                    f"{s.velocity[0]:.4f},{s.velocity[1]:.4f},{s.velocity[2]:.4f},"
                    f"{s.wrench[0]:.4f},{s.wrench[1]:.4f},{s.wrench[2]:.4f},"
                    f"{a0},{a1},{int(s.intervened)},{s.reward:.4f}\n"
                )
    try:
        hist, xe, ze = occupancy_analysis(records, autonomous_only=not args.all_steps)
        occupancy_to_csv(out_dir / "occupancy.csv", hist, xe, ze)
        print(f"wrote {steps_path} and {out_dir / 'occupancy.csv'}")
    except ValueError as exc:
        print(f"wrote {steps_path}; occupancy skipped: {exc}")
    n_succ = sum(r.outcome for r in records)
    print(f"{len(records)} episodes, {n_succ} successes")
    return 0


def _cmd_ablate(args) -> int:
    base = load_config(args.config)
    variants = args.variants.split(",")
    if args.episodes is not None:
        base = dataclasses.replace(base, train_episodes=args.episodes)
    rows = run_ablation_suite(base, variants, args.out)
    print(format_ablation_table(rows))
    with open(Path(args.out) / "table.json", "w") as f:
        json.dump([dataclasses.asdict(r) for r in rows], f, indent=2)
    return 0 if all(r.error is None for r in rows) else 1


def _cmd_serve(args) -> int:
    from .serve import serve_session

    cfg = load_config(args.config) if args.config else RunConfig()
    return serve_session(cfg, port=args.port, mode=args.mode,
                         episodes=args.episodes)


def main(argv: list[str] | None = None) -> int:
    p = argparse.ArgumentParser(prog="pegbench",
                                description="planar insertion RL workbench")
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("init-config", help="write a starter run config")
    s.add_argument("--out", default="run.yaml")
    s.add_argument("--variant", default="full", choices=VARIANTS)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(fn=_cmd_init_config)

    s = sub.add_parser("init-net", help="write the built-in insertion net")
    s.add_argument("--out", default="net.yaml")
    s.set_defaults(fn=_cmd_init_net)

    s = sub.add_parser("train", help="train one variant")
    s.add_argument("--config", required=True)
    s.add_argument("--variant", choices=VARIANTS)
    s.add_argument("--episodes", type=int)
    s.add_argument("--out", default="runs/train")
    s.set_defaults(fn=_cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("-n", type=int, default=20)
    s.set_defaults(fn=_cmd_eval)

    s = sub.add_parser("demo", help="collect operator demonstrations")
    s.add_argument("-n", type=int, default=20)
    s.add_argument("--operator", choices=("scripted", "console"), default="scripted")
    s.add_argument("--config")
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--out", default="demos.jsonl")
    s.set_defaults(fn=_cmd_demo)

    s = sub.add_parser("validate", help="check an MP-net file")
    s.add_argument("net")
    s.set_defaults(fn=_cmd_validate)

    s = sub.add_parser("run", help="run episodes of a net file")
    s.add_argument("net")
    s.add_argument("--mode", choices=("train", "eval", "demo"), default="eval")
    s.add_argument("-n", type=int, default=1)
    s.add_argument("--config")
    s.add_argument("--out")
    s.set_defaults(fn=_cmd_run)

    s = sub.add_parser("analyze-limits", help="stability report + traces")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="limits")
    s.set_defaults(fn=_cmd_analyze_limits)

    s = sub.add_parser("replay", help="episode log to CSV + occupancy data")
    s.add_argument("log")
    s.add_argument("--out", default="replay")
    s.add_argument("--all-steps", action="store_true",
                   help="include intervened steps in the occupancy histogram")
    s.set_defaults(fn=_cmd_replay)

    s = sub.add_parser("ablate", help="train and compare variants")
    s.add_argument("--config", required=True)
    s.add_argument("--variants", default="full,no_interventions,no_demos,no_priors")
    s.add_argument("--episodes", type=int)
    s.add_argument("--out", default="runs/ablation")
    s.set_defaults(fn=_cmd_ablate)

    s = sub.add_parser("serve", help="interactive session with the console bridge")
    s.add_argument("--config")
    s.add_argument("--port", type=int, default=8787)
    s.add_argument("--mode", choices=("train", "eval"), default="train")
    s.add_argument("--episodes", type=int, default=1000)
    s.set_defaults(fn=_cmd_serve)

    args = p.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
