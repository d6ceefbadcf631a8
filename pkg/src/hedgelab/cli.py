"""Command-line entry points: train agents, evaluate, sweep, explain.

Configuration is a single flat JSON object (numbers, strings, booleans,
lists); command-line flags override file values. Every command writes a
manifest.json recording the resolved configuration, seeds, and output files;
pointing --config at a previous manifest reruns the command byte-identically.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys

import numpy as np

from .analysis import (
    RunManifest,
    Stopwatch,
    SweepSpec,
    apply_env_axis,
    delta_strategy_trainer,
    emit_histogram,
    episode_costs,
    report_csv_row,
    report_from_costs,
    REPORT_HEADER,
    run_sweep,
    training_stability,
    write_manifest,
)
from .ddpg import DdpgAgent, DdpgConfig, train as train_ddpg
from .env import EnvConfig, delta_hedger, feature_names, raw_to_features, rollout
from .market import EXPLAIN_DOMAIN, MarketParams, TradingGrid, substream
from .mvh import MvhTrainConfig, PolicyStack, TrainingDiverged, train_mvh
from .pricing import OptionSpec
from .shapley import ShapConfig, dump_heatmap_csv, dump_shap_csv, per_step_heatmap, \
    shap_values, shap_variable_importance
from .svg import heatmap_svg

DEFAULTS = {
    # market / option / frictions (paper's defaults)
    "mu": 0.05, "sigma": 0.20, "rate": 0.0, "s0": 100.0,
    "strike": 100.0, "maturity_days": 30,
    "alpha": 0.01, "beta": 0.01, "lambda_ra": 0.1,
    "option_holding": -1.0, "contract_multiplier": 100.0,
    "gamma": 0.99, "settle_unwind": True,
    # DDPG
    "ddpg_episodes": 5000, "ddpg_actor_lr": 1e-5, "ddpg_critic_lr": 1e-4,
    "ddpg_smoothing": 1e-3, "ddpg_minibatch": 64, "ddpg_buffer": 100_000,
    "ddpg_warmup": 1000, "ddpg_ou_theta": 0.15, "ddpg_ou_sigma": 0.2,
    "ddpg_reward_scale": None,
    "ddpg_actor_hidden": [12, 12, 12], "ddpg_critic_hidden": [24, 24, 24],
    # deep-MVH
    "mvh_epochs": 100, "mvh_samples": 50_000, "mvh_minibatch": 256,
    "mvh_lr": 1e-3, "mvh_lr_halve_every": 25, "mvh_dropout": 0.25,
    "mvh_batch_norm": True, "mvh_hidden": [10, 15, 10],
    "parametrization": "rate",
    # shared
    "include_delta": True, "eval_episodes": 1000,
    "shap_background": 500, "shap_instances": 200, "shap_episodes": 200,
    "seed": 0, "out": "runs/out",
}


def load_config(path: str | None) -> dict:
    cfg = dict(DEFAULTS)
    if path:
        with open(path) as fh:
            data = json.load(fh)
        if "config" in data and isinstance(data["config"], dict):
            data = data["config"]  # manifest reuse
        unknown = set(data) - set(DEFAULTS)
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(data)
    return cfg


def env_from(cfg: dict) -> EnvConfig:
    days = int(cfg["maturity_days"])
    return EnvConfig(
        market=MarketParams(cfg["mu"], cfg["sigma"], cfg["rate"], cfg["s0"]),
        option=OptionSpec(cfg["strike"], days / 365.0),
        grid=TradingGrid.daily(days),
        alpha=cfg["alpha"], beta=cfg["beta"], lambda_ra=cfg["lambda_ra"],
        option_holding=cfg["option_holding"],
        contract_multiplier=cfg["contract_multiplier"],
        gamma_discount=cfg["gamma"], settle_unwind=cfg["settle_unwind"],
    )


def ddpg_from(cfg: dict) -> DdpgConfig:
    return DdpgConfig(
        actor_hidden=tuple(cfg["ddpg_actor_hidden"]),
        critic_hidden=tuple(cfg["ddpg_critic_hidden"]),
        actor_lr=cfg["ddpg_actor_lr"], critic_lr=cfg["ddpg_critic_lr"],
        smoothing=cfg["ddpg_smoothing"], episodes=int(cfg["ddpg_episodes"]),
        minibatch=int(cfg["ddpg_minibatch"]), buffer_capacity=int(cfg["ddpg_buffer"]),
        warmup=int(cfg["ddpg_warmup"]), ou_theta=cfg["ddpg_ou_theta"],
        ou_sigma=cfg["ddpg_ou_sigma"], gamma=cfg["gamma"],
        reward_scale=cfg["ddpg_reward_scale"], include_delta=cfg["include_delta"],
    )


def mvh_from(cfg: dict) -> MvhTrainConfig:
    return MvhTrainConfig(
        hidden=tuple(cfg["mvh_hidden"]), parametrization=cfg["parametrization"],
        epochs=int(cfg["mvh_epochs"]), samples_per_epoch=int(cfg["mvh_samples"]),
        minibatch=int(cfg["mvh_minibatch"]), lr=cfg["mvh_lr"],
        lr_halve_every=int(cfg["mvh_lr_halve_every"]), dropout=cfg["mvh_dropout"],
        batch_norm=cfg["mvh_batch_norm"], gamma=cfg["gamma"],
        include_delta=cfg["include_delta"],
    )


def _write_curve_csv(path: str, header: tuple[str, str], values) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, v in enumerate(values):
            writer.writerow([i, repr(float(v))])


def cmd_train_ddpg(cfg: dict) -> None:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    env_cfg = env_from(cfg)
    with Stopwatch() as sw:
        agent, curve = train_ddpg(ddpg_from(cfg), env_cfg, int(cfg["seed"]))
    curve_path = os.path.join(out, "ddpg_learning_curve.csv")
    _write_curve_csv(curve_path, ("episode", "cumulative_reward"), curve)
    agent.save(os.path.join(out, "ddpg"))
    manifest = RunManifest(
        command="train-ddpg", config=cfg, seeds=[int(cfg["seed"])],
        outputs=[curve_path] + [os.path.join(out, f"ddpg.{k}.ckpt") for k in
                                ("actor", "critic", "actor_target", "critic_target")],
        wall_clock_sec=sw.elapsed,
    )
    write_manifest(manifest, os.path.join(out, "manifest.json"))
    print(f"trained DDPG for {len(curve)} episodes; "
          f"final cumulative reward {curve[-1]:.4f}")


def cmd_train_mvh(cfg: dict) -> None:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    env_cfg = env_from(cfg)
    stack_dir = os.path.join(out, "mvh_stack")
    try:
        with Stopwatch() as sw:
            stack, curve = train_mvh(mvh_from(cfg), env_cfg, int(cfg["seed"]))
    except TrainingDiverged as err:
        if err.stack is not None:
            err.stack.save(stack_dir)
            print(f"training diverged ({err}); last checkpoint saved to {stack_dir}",
                  file=sys.stderr)
        raise SystemExit(2)
    log_curve = [math.log(v) if v > 0 else float("nan") for v in curve]
    curve_path = os.path.join(out, "mvh_learning_curve.csv")
    _write_curve_csv(curve_path, ("epoch", "mean_log_loss"), log_curve)
    stack.save(stack_dir)
    manifest = RunManifest(
        command="train-mvh", config=cfg, seeds=[int(cfg["seed"])],
        outputs=[curve_path, stack_dir], wall_clock_sec=sw.elapsed,
    )
    write_manifest(manifest, os.path.join(out, "manifest.json"))
    print(f"trained deep-MVH for {len(curve)} epochs; final mean loss {curve[-1]:.6f}")


def load_policy(strategy: str, checkpoint: str | None, cfg: dict, env_cfg: EnvConfig):
    if strategy == "delta":
        return delta_hedger(env_cfg)
    if checkpoint is None:
        raise FileNotFoundError(f"strategy {strategy!r} needs --checkpoint")
    if strategy == "ddpg":
        if not os.path.exists(checkpoint + ".actor.ckpt"):
            raise FileNotFoundError(f"no DDPG checkpoint at prefix {checkpoint!r}")
        return DdpgAgent.load(checkpoint, ddpg_from(cfg), env_cfg).policy()
    if strategy == "deep_mvh":
        if not os.path.isdir(checkpoint):
            raise FileNotFoundError(f"no deep-MVH stack directory {checkpoint!r}")
        return PolicyStack.load(checkpoint, env_cfg).policy()
    raise ValueError(f"unknown strategy {strategy!r}")


def cmd_eval(cfg: dict, strategy: str, checkpoint: str | None) -> None:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    env_cfg = env_from(cfg)
    policy = load_policy(strategy, checkpoint, cfg, env_cfg)
    n = int(cfg["eval_episodes"])
    seed = int(cfg["seed"])
    with Stopwatch() as sw:
        costs, tcs = episode_costs(policy, env_cfg, n, seed)
    report = report_from_costs(costs, tcs, strategy)
    report_path = os.path.join(out, f"eval_{strategy}.csv")
    with open(report_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["strategy"] + REPORT_HEADER)
        writer.writerow(report_csv_row(report, [strategy]))
    costs_path = os.path.join(out, f"costs_{strategy}.csv")
    with open(costs_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "total_hedge_cost", "total_tc"])
        for e in range(n):
            writer.writerow([e, repr(float(costs[e])), repr(float(tcs[e]))])
    hist_path = os.path.join(out, f"hist_{strategy}.svg")
    emit_histogram(report, hist_path)
    manifest = RunManifest(
        command="eval", config=cfg, seeds=[seed],
        outputs=[report_path, costs_path, hist_path], wall_clock_sec=sw.elapsed,
    )
    write_manifest(manifest, os.path.join(out, f"manifest_eval_{strategy}.json"))
    print(f"{strategy}: mean cost {report.mean:.4f}, std {report.std:.4f} "
          f"over {n} episodes (positive = loss)")


def make_trainers(cfg: dict) -> dict:
    """Per-strategy factories (env_cfg, seed, overrides) -> frozen policy."""

    def ddpg_trainer(env_cfg, seed, overrides):
        local = dict(cfg)
        if "gamma" in overrides:
            local["gamma"] = overrides["gamma"]
        if "lr" in overrides:
            local["ddpg_actor_lr"] = overrides["lr"]
            local["ddpg_critic_lr"] = overrides["lr"] * 10.0
        if "architecture" in overrides:
            local["ddpg_actor_hidden"] = list(overrides["architecture"])
        agent, _ = train_ddpg(ddpg_from(local), env_cfg, seed)
        return agent.policy()

    def mvh_trainer(env_cfg, seed, overrides):
        local = dict(cfg)
        if "gamma" in overrides:
            local["gamma"] = overrides["gamma"]
        if "lr" in overrides:
            local["mvh_lr"] = overrides["lr"]
        if "architecture" in overrides:
            local["mvh_hidden"] = list(overrides["architecture"])
        stack, _ = train_mvh(mvh_from(local), env_cfg, seed)
        return stack.policy()

    return {
        "delta": delta_strategy_trainer(),
        "ddpg": ddpg_trainer,
        "deep_mvh": mvh_trainer,
    }


def parse_axis_values(axis: str, raw: str) -> list:
    parts = [p for p in raw.split(",") if p]
    if axis == "maturity":
        return [int(p) for p in parts]
    if axis == "architecture":
        return [tuple(int(w) for w in p.split("-")) for p in parts]
    return [float(p) for p in parts]


def cmd_sweep(cfg: dict, axis: str, values: str, strategies: str, seeds: str) -> None:
    out = cfg["out"]
    spec = SweepSpec(
        axis=axis,
        values=parse_axis_values(axis, values),
        strategies=[s for s in strategies.split(",") if s],
        seeds=[int(s) for s in seeds.split(",")] if seeds else [int(cfg["seed"])],
        episodes=int(cfg["eval_episodes"]),
    )
    with Stopwatch() as sw:
        rows = run_sweep(spec, env_from(cfg), make_trainers(cfg), out)
    outputs = [os.path.join(out, f"sweep_{axis}.csv")]
    manifest = RunManifest(command="sweep", config=cfg, seeds=spec.seeds,
                           outputs=outputs, wall_clock_sec=sw.elapsed)
    write_manifest(manifest, os.path.join(out, f"manifest_sweep_{axis}.json"))
    ok = sum(1 for r in rows if not r["error"])
    print(f"sweep over {axis}: {ok}/{len(rows)} cells succeeded; see {outputs[0]}")


def collect_step_states(env_cfg: EnvConfig, policy, n_episodes: int, seed: int,
                        include_delta: bool) -> list[np.ndarray]:
    """Raw per-step feature rows generated by running the policy on its env."""
    rows = [[] for _ in range(env_cfg.grid.n_steps)]
    for e in range(n_episodes):
        rec = rollout(env_cfg, policy, seed=seed, episode=e, domain=EXPLAIN_DOMAIN)
        for m in range(env_cfg.grid.n_steps):
            s = rec.states[m]
            row = [s.time, s.stock, s.option_price, s.delta, s.holding]
            if not include_delta:
                del row[3]
            rows[m].append(row)
    return [np.array(r) for r in rows]


def cmd_explain(cfg: dict, strategy: str, checkpoint: str | None) -> None:
    out = cfg["out"]
    os.makedirs(out, exist_ok=True)
    env_cfg = env_from(cfg)
    include_delta = bool(cfg["include_delta"])
    names = feature_names(include_delta)
    seed = int(cfg["seed"])
    rng = substream(seed, EXPLAIN_DOMAIN, 10_000)
    n_bg = int(cfg["shap_background"])
    n_inst = int(cfg["shap_instances"])
    outputs = []

    with Stopwatch() as sw:
        policy = load_policy(strategy, checkpoint, cfg, env_cfg)
        step_states = collect_step_states(env_cfg, policy, int(cfg["shap_episodes"]),
                                          seed, include_delta)
        if strategy == "deep_mvh":
            stack = PolicyStack.load(checkpoint, env_cfg)
            heat = per_step_heatmap(stack, step_states, n_bg, n_inst, rng)
            heat_csv = os.path.join(out, "shap_heatmap.csv")
            dump_heatmap_csv(heat, names, heat_csv)
            heat_svg = os.path.join(out, "shap_heatmap.svg")
            heatmap_svg(heat, names, "per-step SHAP variable importance", heat_svg)
            importance = heat.mean(axis=0)
            outputs += [heat_csv, heat_svg]
        else:
            pool = np.vstack(step_states)
            bg_idx = rng.choice(len(pool), size=min(n_bg, len(pool)), replace=False)
            inst_idx = rng.choice(len(pool), size=min(n_inst, len(pool)), replace=False)
            shap_cfg = ShapConfig(feature_names=names, background=pool[bg_idx])
            if strategy == "ddpg":
                agent = DdpgAgent.load(checkpoint, ddpg_from(cfg), env_cfg)
                on_features = agent.policy_on_features()
            else:  # delta baseline explains its own closed-form rule
                mult = env_cfg.contract_multiplier * abs(env_cfg.option_holding)
                delta_col = names.index("delta")
                on_features = lambda x: np.atleast_2d(x)[:, delta_col] * mult
            f_raw = (lambda x: on_features(raw_to_features(x, env_cfg, include_delta))) \
                if strategy == "ddpg" else on_features
            result = shap_values(f_raw, pool[inst_idx], shap_cfg)
            shap_csv = os.path.join(out, f"shap_{strategy}.csv")
            dump_shap_csv(result, shap_csv)
            importance = shap_variable_importance(result)
            outputs.append(shap_csv)

    vi_csv = os.path.join(out, f"shapvi_{strategy}.csv")
    with open(vi_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "importance"])
        for name, val in zip(names, importance):
            writer.writerow([name, repr(float(val))])
    outputs.append(vi_csv)
    manifest = RunManifest(command="explain", config=cfg, seeds=[seed],
                           outputs=outputs, wall_clock_sec=sw.elapsed)
    write_manifest(manifest, os.path.join(out, f"manifest_explain_{strategy}.json"))
    ranking = sorted(zip(names, importance), key=lambda kv: -kv[1])
    print(f"{strategy} SHAP variable importance: "
          + ", ".join(f"{n}={v:.4f}" for n, v in ranking))


def cmd_stability(cfg: dict, agent: str, seeds: str) -> None:
    out = cfg["out"]
    seed_list = [int(s) for s in seeds.split(",") if s]
    env_cfg = env_from(cfg)
    if agent == "ddpg":
        train_fn = lambda seed: train_ddpg(ddpg_from(cfg), env_cfg, seed)[1]
    elif agent == "deep_mvh":
        train_fn = lambda seed: train_mvh(mvh_from(cfg), env_cfg, seed)[1]
    else:
        raise ValueError(f"unknown agent {agent!r}")
    with Stopwatch() as sw:
        summary = training_stability(agent, seed_list, train_fn, out)
    manifest = RunManifest(command="stability", config=cfg, seeds=seed_list,
                           outputs=[summary["csv"]], wall_clock_sec=sw.elapsed)
    write_manifest(manifest, os.path.join(out, f"manifest_stability_{agent}.json"))
    print(f"{agent} final values per seed: "
          + ", ".join(f"{v:.5f}" for v in summary["final_values"]))


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="flat JSON config file (or a manifest.json)")
    p.add_argument("--seed", type=int, help="master seed")
    p.add_argument("--out", help="output directory")
    p.add_argument("--episodes", type=int, help="evaluation episodes")
    p.add_argument("--no-delta-feature", action="store_true",
                   help="drop the option Delta from the agent state")
    p.add_argument("--parametrization", choices=["rate", "direct"],
                   help="deep-MVH control parametrization")


def _merge(args: argparse.Namespace) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.out is not None:
        cfg["out"] = args.out
    if args.episodes is not None:
        cfg["eval_episodes"] = args.episodes
    if args.no_delta_feature:
        cfg["include_delta"] = False
    if args.parametrization is not None:
        cfg["parametrization"] = args.parametrization
    for key in ("ddpg_episodes", "mvh_epochs", "mvh_samples"):
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="hedgelab",
        description="Train and analyze hedging agents on a simulated call-hedging desk.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train-ddpg", help="train the DDPG hedger")
    _add_common(p)
    p.add_argument("--ddpg-episodes", dest="ddpg_episodes", type=int)

    p = sub.add_parser("train-mvh", help="train the deep-MVH stack")
    _add_common(p)
    p.add_argument("--mvh-epochs", dest="mvh_epochs", type=int)
    p.add_argument("--mvh-samples", dest="mvh_samples", type=int)

    p = sub.add_parser("eval", help="evaluate a strategy on fresh test episodes")
    _add_common(p)
    p.add_argument("--strategy", required=True, choices=["delta", "ddpg", "deep_mvh"])
    p.add_argument("--checkpoint", help="DDPG prefix or deep-MVH stack directory")

    p = sub.add_parser("sweep", help="parameter sweep with per-cell retraining")
    _add_common(p)
    p.add_argument("--axis", required=True,
                   choices=["alpha", "lambda", "sigma", "maturity",
                            "gamma", "lr", "architecture"])
    p.add_argument("--values", required=True,
                   help="comma list; architectures as 10-15-10")
    p.add_argument("--strategies", default="delta",
                   help="comma list of delta,ddpg,deep_mvh")
    p.add_argument("--seeds", default="", help="comma list of training seeds")
    p.add_argument("--ddpg-episodes", dest="ddpg_episodes", type=int)
    p.add_argument("--mvh-epochs", dest="mvh_epochs", type=int)
    p.add_argument("--mvh-samples", dest="mvh_samples", type=int)

    p = sub.add_parser("explain", help="exact Shapley attribution of a policy")
    _add_common(p)
    p.add_argument("--strategy", required=True, choices=["delta", "ddpg", "deep_mvh"])
    p.add_argument("--checkpoint")

    p = sub.add_parser("stability", help="learning curves across training seeds")
    _add_common(p)
    p.add_argument("--agent", required=True, choices=["ddpg", "deep_mvh"])
    p.add_argument("--seeds", required=True, help="comma list, at least two")
    p.add_argument("--ddpg-episodes", dest="ddpg_episodes", type=int)
    p.add_argument("--mvh-epochs", dest="mvh_epochs", type=int)
    p.add_argument("--mvh-samples", dest="mvh_samples", type=int)

    args = parser.parse_args(argv)
    cfg = _merge(args)

    if args.command == "train-ddpg":
        cmd_train_ddpg(cfg)
    elif args.command == "train-mvh":
        cmd_train_mvh(cfg)
    elif args.command == "eval":
        cmd_eval(cfg, args.strategy, args.checkpoint)
    elif args.command == "sweep":
        cmd_sweep(cfg, args.axis, args.values, args.strategies, args.seeds)
    elif args.command == "explain":
        cmd_explain(cfg, args.strategy, args.checkpoint)
    elif args.command == "stability":
        cmd_stability(cfg, args.agent, args.seeds)
    return 0


if __name__ == "__main__":
    sys.exit(main())
