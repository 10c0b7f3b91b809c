"""Command-line pipeline driver.

Commands: gen-data, train-surrogate, validate-surrogate, hysteresis-test,
train-dqn, train-td3, eval-regulation, eval-path, pipeline. Each command
reads the YAML config (defaults when omitted), applies --set overrides,
writes a resolved-config snapshot next to its outputs, and exits 0 on
success, 1 on runtime failure, 2 on usage/config errors.

Seed derivation from the global seed: acquisition uses seed+1, the
train/val/test split seed+2, training environments seed+3 (DQN) and seed+4
(TD3), evaluation start states seed+5. Stage-internal seeds (network init,
batch order) come from each section's own `seed` field.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import dqn as dqn_mod
from . import evalrep, protocol, surrogate, td3 as td3_mod
from .config import RunConfig, apply_overrides
from .core import MinMaxScaler
from .env import CatheterEnv, EpisodeConfig, SurrogateBackend, goal_reachable
from .protocol import windowize_and_split

COMMANDS = ("gen-data", "train-surrogate", "validate-surrogate",
            "hysteresis-test", "train-dqn", "train-td3",
            "eval-regulation", "eval-path", "pipeline")


class ConfigError(Exception):
    pass


def load_config(args) -> RunConfig:
    try:
        cfg = RunConfig.load(args.config) if args.config else RunConfig()
        if args.set:
            cfg = apply_overrides(cfg, args.set)
        if args.out:
            cfg.out_root = args.out
        elif os.environ.get("MAGCATH_OUT"):
            cfg.out_root = os.environ["MAGCATH_OUT"]
        return cfg
    except (ValueError, TypeError, OSError) as exc:
        raise ConfigError(str(exc)) from exc


def snapshot(cfg: RunConfig, stage_dir: Path):
    stage_dir.mkdir(parents=True, exist_ok=True)
    cfg.save(stage_dir / "resolved_config.yaml")


def _paths(cfg: RunConfig) -> dict:
    root = Path(cfg.out_root)
    return {
        "root": root,
        "data": root / "data",
        "surrogate": root / "surrogate",
        "hysteresis": root / "hysteresis",
        "dqn": root / "dqn",
        "td3": root / "td3",
        "eval": root / "eval",
    }


def _workspace_scaler(cfg: RunConfig) -> MinMaxScaler:
    return MinMaxScaler([cfg.env.workspace_x[0], cfg.env.workspace_y[0]],
                        [cfg.env.workspace_x[1], cfg.env.workspace_y[1]])


def _load_datasets(cfg: RunConfig):
    trials = protocol.load_trials(_paths(cfg)["data"])
    return windowize_and_split(trials, split=cfg.campaign.split,
                               seed=cfg.seed + 2)


def _load_surrogate(cfg: RunConfig) -> surrogate.SurrogateModel:
    return surrogate.SurrogateModel.load(_paths(cfg)["surrogate"] / "checkpoint")


def make_env(cfg: RunConfig, model: surrogate.SurrogateModel, training: bool,
             rng_seed: int, epsilon: float | None = None) -> CatheterEnv:
    ep = EpisodeConfig(
        epsilon=epsilon if epsilon is not None else cfg.env.epsilon_mm,
        t_max=cfg.env.t_max,
        noise_sigma=cfg.env.training_noise_sigma if training else 0.0,
        lam=cfg.env.effort_lambda,
        padding=cfg.env.padding,
    )
    return CatheterEnv(SurrogateBackend(model), cfg.plant, ep,
                       rng=np.random.default_rng(rng_seed),
                       scaler=_workspace_scaler(cfg))


# --- stage implementations ---------------------------------------------------

def cmd_gen_data(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    campaign = protocol.default_campaign(cfg.campaign.trials_per_family,
                                         seed=cfg.seed + 1)
    trials = protocol.run_acquisition(campaign, cfg.plant, paths["data"],
                                      seed=cfg.seed + 1, dt=cfg.campaign.dt)
    snapshot(cfg, paths["data"])
    if verbose:
        n = sum(len(t) for t in trials)
        print(f"gen-data: {len(trials)} trials, {n} samples -> {paths['data']}")
    return trials


def cmd_train_surrogate(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    train_ds, val_ds, test_ds = _load_datasets(cfg)
    model = surrogate.train_surrogate(train_ds, val_ds, cfg.surrogate)
    out = paths["surrogate"]
    out.mkdir(parents=True, exist_ok=True)
    model.save(out / "checkpoint")
    dqn_mod.write_training_log(out / "history.csv", model.history)
    snapshot(cfg, out)
    if verbose:
        best = min(h["val_loss"] for h in model.history)
        print(f"train-surrogate: {len(model.history)} epochs, "
              f"best val loss {best:.3e} -> {out}")
    return model


def cmd_validate_surrogate(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    _, _, test_ds = _load_datasets(cfg)
    final_report = surrogate.validate(model, test_ds)
    full_report = surrogate.validate(model, test_ds, per_step=True)
    payload = {"final_step": final_report.to_dict(),
               "all_steps": full_report.to_dict()}
    evalrep.emit_report(paths["surrogate"], "validation_report", payload)
    snapshot(cfg, paths["surrogate"])
    if verbose:
        print(f"validate-surrogate: final-step RMSE "
              f"{final_report.rmse_overall:.3f} mm, coverage(1mm) "
              f"{final_report.coverage[1.0]:.1%}")
    return final_report


def cmd_hysteresis_test(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    report = surrogate.hysteresis_branch_test(model, cfg.plant)
    evalrep.emit_report(paths["hysteresis"], "hysteresis_report", report.to_dict())
    snapshot(cfg, paths["hysteresis"])
    if verbose:
        sep = report.separations["forward_vs_reverse"]
        errs = [b.get("error_mm") for b in report.branches.values()]
        print(f"hysteresis-test: forward/reverse separation {sep:.2f} mm, "
              f"branch errors {['%.3f' % e for e in errs]} mm")
    return report


def cmd_train_dqn(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    env = make_env(cfg, model, training=True, rng_seed=cfg.seed + 3)
    _, log = dqn_mod.train_dqn(env, cfg.dqn, out_dir=paths["dqn"],
                               progress=100 if verbose else None)
    snapshot(cfg, paths["dqn"])
    if verbose:
        tail = np.mean([r["return"] for r in log[-100:]])
        print(f"train-dqn: {len(log)} episodes, mean return(last 100) {tail:.1f}")
    return log


def cmd_train_td3(cfg: RunConfig, verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    env = make_env(cfg, model, training=True, rng_seed=cfg.seed + 4)
    _, log = td3_mod.train_td3(env, cfg.td3, out_dir=paths["td3"],
                               progress=50 if verbose else None)
    snapshot(cfg, paths["td3"])
    if verbose:
        tail = np.mean([r["return"] for r in log[-100:]])
        print(f"train-td3: {len(log)} episodes, mean return(last 100) {tail:.1f}")
    return log


def _policies(cfg: RunConfig, agents):
    paths = _paths(cfg)
    out = {}
    for agent in agents:
        if agent == "dqn":
            out["dqn"] = dqn_mod.greedy_policy(dqn_mod.load_qnet(paths["dqn"] / "qnet"))
        elif agent == "td3":
            out["td3"] = td3_mod.Td3Agent.load(paths["td3"], cfg.td3).policy()
        else:
            raise ConfigError(f"unknown agent {agent!r}")
    return out


def cmd_eval_regulation(cfg: RunConfig, agents=("dqn", "td3"), goal=None,
                        verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    goal = tuple(goal) if goal else cfg.eval.goal
    if not goal_reachable(goal, cfg.plant):
        raise ConfigError(f"goal {goal} outside the reachable workspace")
    results = {}
    for agent, policy in _policies(cfg, agents).items():
        per_threshold = {}
        for thr in cfg.eval.thresholds_mm:
            env = make_env(cfg, model, training=False,
                           rng_seed=cfg.seed + 5, epsilon=thr)
            summary = evalrep.eval_regulation(
                policy, env, n_starts=cfg.eval.n_starts, goal=goal,
                seed=cfg.seed + 5)
            per_threshold[f"{thr:g}mm"] = summary.to_dict()
            if verbose:
                print(f"eval-regulation[{agent}] thr={thr:g}mm: "
                      f"success {summary.success_rate:.0%}, "
                      f"avg steps {summary.avg_steps_to_success:.1f}, "
                      f"avg |e| {summary.avg_final_error_norm:.3f} mm")
        results[agent] = per_threshold
        evalrep.emit_report(paths["eval"], f"regulation_{agent}",
                            {"goal_mm": list(goal), **per_threshold})
    snapshot(cfg, paths["eval"])
    return results


def cmd_eval_path(cfg: RunConfig, agents=("dqn", "td3"), verbose=True):
    paths = _paths(cfg)
    model = _load_surrogate(cfg)
    results = {}
    for agent, policy in _policies(cfg, agents).items():
        for kind in evalrep.PATH_KINDS:
            env = make_env(cfg, model, training=False, rng_seed=cfg.seed + 5)
            env.config.t_max = 10 ** 9  # waypoint loop owns its own budgets
            path = evalrep.gen_reference_path(kind, cfg.eval.n_waypoints)
            result = evalrep.eval_path_following(
                policy, env, path,
                waypoint_tol=cfg.eval.waypoint_tol_mm,
                max_steps_per_waypoint=cfg.eval.waypoint_max_steps)
            results[(agent, kind)] = result
            evalrep.emit_report(
                paths["eval"], f"path_{kind}_{agent}", result.to_dict(),
                traces={"trace": result.trace,
                        "waypoints": evalrep.waypoint_rows(result)})
            if verbose:
                print(f"eval-path[{agent}] {kind}: mean error "
                      f"{result.mean_error:.3f} mm")
    snapshot(cfg, paths["eval"])
    return results


def cmd_pipeline(cfg: RunConfig, verbose=True):
    t0 = time.time()
    cmd_gen_data(cfg, verbose)
    cmd_train_surrogate(cfg, verbose)
    cmd_validate_surrogate(cfg, verbose)
    cmd_hysteresis_test(cfg, verbose)
    cmd_train_dqn(cfg, verbose)
    cmd_train_td3(cfg, verbose)
    cmd_eval_regulation(cfg, verbose=verbose)
    cmd_eval_path(cfg, verbose=verbose)
    if verbose:
        print(f"pipeline: completed in {time.time() - t0:.0f} s")


# --- argument parsing --------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magcath",
        description="Synthetic magnetic-catheter pipeline: data, surrogate, "
                    "RL control, evaluation.")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", help="YAML config file (defaults used if omitted)")
    parser.add_argument("--set", action="append", default=[],
                        metavar="SECTION.KEY=VALUE",
                        help="override a config value (repeatable)")
    parser.add_argument("--out", help="output root (overrides config and MAGCATH_OUT)")
    parser.add_argument("--agent", choices=("dqn", "td3", "both"), default="both",
                        help="agent(s) for eval commands")
    parser.add_argument("--goal", help="goal as 'x,y' in mm for eval-regulation")
    parser.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        cfg = load_config(args)
        agents = ("dqn", "td3") if args.agent == "both" else (args.agent,)
        goal = None
        if args.goal:
            parts = args.goal.split(",")
            if len(parts) != 2:
                raise ConfigError("--goal must be 'x,y'")
            goal = (float(parts[0]), float(parts[1]))
        verbose = not args.quiet
        if args.command == "gen-data":
            cmd_gen_data(cfg, verbose)
        elif args.command == "train-surrogate":
            cmd_train_surrogate(cfg, verbose)
        elif args.command == "validate-surrogate":
            cmd_validate_surrogate(cfg, verbose)
        elif args.command == "hysteresis-test":
            cmd_hysteresis_test(cfg, verbose)
        elif args.command == "train-dqn":
            cmd_train_dqn(cfg, verbose)
        elif args.command == "train-td3":
            cmd_train_td3(cfg, verbose)
        elif args.command == "eval-regulation":
            cmd_eval_regulation(cfg, agents, goal, verbose)
        elif args.command == "eval-path":
            cmd_eval_path(cfg, agents, verbose)
        elif args.command == "pipeline":
            cmd_pipeline(cfg, verbose)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
