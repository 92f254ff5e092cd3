"""Command-line driver for the fit / train / eval / report / serve workflows.

All artifacts land in the output directory (default ./out): fitted
estimator (estimator.llem), trained policy (policy.llqp), learning curve
CSV, suite reports in csv/json/md, and one JSON trajectory log per rollout.
Runs are deterministic for a fixed config and seed; repeating a command
rewrites byte-identical outputs.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import agent, bridge, harness, perception, shared
from .config import SimConfig, load_config


def _ensure_out(args) -> str:
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _estimator_path(args) -> str:
    return args.estimator or os.path.join(args.out, "estimator.llem")


def _policy_path(args) -> str:
    return args.policy or os.path.join(args.out, "policy.llqp")


def _load_model(args) -> perception.EstimatorModel:
    path = _estimator_path(args)
    if not os.path.exists(path):
        sys.exit(f"no estimator at {path}; run `fit-estimators` first")
    return perception.load_estimator(path)


def _load_policy(args) -> agent.PolicySnapshot:
    path = _policy_path(args)
    if not os.path.exists(path):
        sys.exit(f"no policy at {path}; run `train` first")
    return agent.load_policy(path)


def cmd_fit_estimators(cfg: SimConfig, args) -> int:
    out = _ensure_out(args)
    samples = perception.collect_training_set(
        cfg.camera, cfg.landmark, harness.scenario_pad(cfg, harness.scenario1_grid(cfg)[0]),
        cfg.estimator.sampler(), cfg.estimator.training_samples,
        seed=cfg.estimator.seed if args.seed is None else args.seed,
        noise=cfg.noise,
    )
    model = perception.fit_estimators(samples, knots=cfg.estimator.knots)
    path = os.path.join(out, "estimator.llem")
    perception.save_estimator(model, path)
    print(f"fit {model.training_sample_count} samples -> {path}")
    print(f"altitude residual rms: {model.fit_residual_rms:.4f} m")
    print(f"depth residual rms:    {model.depth_residual_rms:.4f} m")
    return 0


def cmd_train(cfg: SimConfig, args) -> int:
    out = _ensure_out(args)
    model = _load_model(args)
    env = harness.build_training_env(cfg, model)
    seed = 0 if args.seed is None else args.seed
    episodes = args.episodes or cfg.agent.episodes
    policy, curve = agent.train(env, cfg.hyper, episodes, seed)
    ppath = os.path.join(out, "policy.llqp")
    agent.save_policy(policy, ppath)
    agent.save_learning_curve(curve, os.path.join(out, "learning_curve.csv"))
    tail = [p.ret for p in curve[-max(1, episodes // 10):]]
    print(f"trained {episodes} episodes (seed {seed}) -> {ppath}")
    print(f"mean return over final tenth: {float(np.mean(tail)):.2f}")
    return 0


def _write_reports(out: str, label: str, records) -> None:
    for fmt in ("csv", "json", "md"):
        path = os.path.join(out, f"{label}_report.{fmt}")
        with open(path, "w", newline="") as f:
            f.write(harness.emit_report(records, fmt))


def cmd_eval(cfg: SimConfig, args) -> int:
    out = _ensure_out(args)
    model = _load_model(args)
    policy = _load_policy(args)
    scenarios = (
        harness.scenario1_grid(cfg) if args.scenario == "static" else harness.scenario2_set(cfg)
    )
    records, trajs = harness.run_suite(cfg, scenarios, policy, model)
    _write_reports(out, args.scenario, records)
    tdir = os.path.join(out, "trajectories")
    os.makedirs(tdir, exist_ok=True)
    for sc in scenarios:
        for rep, traj in enumerate(trajs[sc.id]):
            name = f"{args.scenario}_case{sc.id:02d}_rep{rep}.json"
            with open(os.path.join(tdir, name), "w") as f:
                f.write(harness.trajectory_document(cfg, sc, rep, traj))
    n_ok = sum(sum(r.repeat_successes) for r in records)
    n_all = sum(len(r.repeat_successes) for r in records)
    print(harness.emit_report(records, "csv"), end="")
    print(f"rollout successes: {n_ok}/{n_all}")
    return 0


def cmd_report(cfg: SimConfig, args) -> int:
    with open(args.records) as f:
        records = harness.records_from_json(f.read())
    doc = harness.emit_report(records, args.format)
    if args.out_file:
        with open(args.out_file, "w", newline="") as f:
            f.write(doc)
    else:
        print(doc, end="")
    return 0


def cmd_serve(cfg: SimConfig, args) -> int:
    model = _load_model(args)
    policy = _load_policy(args)
    bridge.serve(args.bind, cfg, model, policy)
    return 0


def cmd_demo_pilot(cfg: SimConfig, args) -> int:
    out = _ensure_out(args)
    model = _load_model(args)
    policy = _load_policy(args)
    scenario = harness.scenario1_grid(cfg)[0]
    env = harness.build_env(cfg, scenario, model)
    pilot = shared.PilotModel(kind=shared.PilotKind(args.pilot), noise_scale=args.pilot_noise)
    seed = scenario.seed if args.seed is None else args.seed
    traj = shared.run_blended_episode(
        env, policy, pilot, np.random.default_rng([seed]),
        alpha_max=cfg.blend.alpha_max,
        pilot_rng=np.random.default_rng([seed, 991]),
    )
    log_path = os.path.join(out, "pilot_command_log.csv")
    shared.write_command_log(
        log_path, [(s.t, _cmd_from_step(s)) for s in traj.steps]
    )
    print(f"pilot={args.pilot} outcome={traj.outcome_kind} success={traj.success} "
          f"duration={traj.duration:.2f}s")
    if traj.touchdown_lateral is not None:
        print(f"touchdown displacement: {traj.touchdown_lateral * 100:.1f} cm")
    print(f"blended command log -> {log_path}")
    return 0


def _cmd_from_step(s: agent.StepRecord):
    from .world import ControlCommand

    return ControlCommand(velocity=(s.cmd[0], s.cmd[1], s.cmd[2]), yaw_rate=s.cmd[3], land=bool(s.cmd[4]))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="monolander", description=__doc__)
    p.add_argument("--config", default=None, help="YAML config file")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--estimator", default=None, help="estimator file (default <out>/estimator.llem)")
    p.add_argument("--policy", default=None, help="policy file (default <out>/policy.llqp)")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("fit-estimators", help="fit the altitude/depth tables from simulated poses")

    t = sub.add_parser("train", help="train the landing policy")
    t.add_argument("--episodes", type=int, default=None)

    e = sub.add_parser("eval", help="run an evaluation suite and write reports")
    e.add_argument("--scenario", choices=["static", "dynamic"], required=True)

    r = sub.add_parser("report", help="re-emit a report from persisted JSON records")
    r.add_argument("records", help="path to a *_report.json file")
    r.add_argument("--format", choices=["csv", "json", "md"], default="md")
    r.add_argument("--out-file", default=None)

    s = sub.add_parser("serve", help="run the live session bridge")
    s.add_argument("--bind", default="127.0.0.1:8900")

    d = sub.add_parser("demo-pilot", help="fly one blended episode with a scripted pilot")
    d.add_argument("--pilot", default="noisy",
                   choices=[k.value for k in shared.PilotKind])
    d.add_argument("--pilot-noise", type=float, default=0.3)

    return p


_HANDLERS = {
    "fit-estimators": cmd_fit_estimators,
    "train": cmd_train,
    "eval": cmd_eval,
    "report": cmd_report,
    "serve": cmd_serve,
    "demo-pilot": cmd_demo_pilot,
}


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    cfg = load_config(args.config)
    return _HANDLERS[args.command](cfg, args)


if __name__ == "__main__":
    sys.exit(main())
