"""Command line entry point.

Subcommands: ``generate`` (synthetic dataset CSV), ``train`` (run directory
with checkpoint and history), ``eval`` (report CSVs), ``inspect-latent``
(latent CSVs).  Every command takes ``--config`` (JSON, defaults filled and
echoed into the run directory), ``--seed`` (overrides config seeds), and
``--quiet``.  TSAE_THREADS caps per-cycle evaluation parallelism.

Exit codes: 0 success, 2 I/O problems, 3 numerical failure, 4 shape or
config mismatch.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import warnings

from .data import load_csv, split_dataset, write_csv
from .errors import ConfigError, TsaeError
from .evaluation import (export_report, latent_across_soc, latent_at_fixed_soc,
                         oracle_metrics, rollout_metrics)
from .simulate import SimConfig, discharge_capacity, fade_values, generate_dataset
from .training import TrainConfig, load_checkpoint, save_checkpoint, train

DEFAULT_CONFIG = {
    "data": {
        "source": "synthetic",
        "path": None,
        "n_cycles": 60,
        "soc_start": 0.8,
        "soc_stop": 0.2,
        "theta_q_end": 0.85,
        "theta_r_end": 1.3,
        "cell_id": "S0",
        "seed": 0,
        # Desk-scale sampling: 2 s steps keep the default 60-cycle corpus
        # small; set dt_s to 0.1 for the paper's 10 Hz rate.
        "sim": {
            "q_nom_ah": 4.85,
            "r0_ohm": 0.030,
            "r1_ohm": 0.020,
            "c1_farad": 1000.0,
            "dt_s": 2.0,
            "noise_std_v": 0.002,
        },
    },
    "model": {
        "n_a": 500,
        "n_b": 200,
        "n_xs": 3,
        "encoder_layers": None,
    },
    "train": {
        "corr_weight": 0.1,
        "learning_rate": 1e-3,
        "batch_size": 4,
        "contiguous_run_length": 16,
        "max_epochs": 100,
        "patience": 10,
        "seed": 0,
        "val_fraction": 0.2,
        "clip_norm": 5.0,
    },
    "eval": {
        "holdout_cells": [],
        "holdout_cycles": [],
        "soc_target": 0.8,
        "soc_tolerance": 0.05,
    },
}


def _merge_config(defaults: dict, overrides: dict, path: str = "") -> dict:
    merged = copy.deepcopy(defaults)
    for key, value in overrides.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown config key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key]:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {here!r} must be an object")
            merged[key] = _merge_config(defaults[key], value, here)
        else:
            merged[key] = value
    return merged


def load_run_config(path=None, seed=None) -> dict:
    """Read a run config JSON, fill defaults, apply the --seed override."""
    overrides = {}
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                overrides = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
        if not isinstance(overrides, dict):
            raise ConfigError(f"config {path} must hold a JSON object")
    cfg = _merge_config(DEFAULT_CONFIG, overrides)
    if seed is not None:
        cfg["data"]["seed"] = seed
        cfg["train"]["seed"] = seed
    return cfg


def _train_config(cfg: dict) -> TrainConfig:
    model = cfg["model"]
    layers = model.get("encoder_layers")
    d = dict(cfg["train"])
    d.update({"n_a": model["n_a"], "n_b": model["n_b"], "n_xs": model["n_xs"],
              "encoder_layers": layers})
    return TrainConfig.from_dict(d)


def _sim_config(cfg: dict) -> SimConfig:
    known = {"q_nom_ah", "r0_ohm", "r1_ohm", "c1_farad", "dt_s", "noise_std_v"}
    sim = cfg["data"]["sim"]
    unknown = set(sim) - known
    if unknown:
        raise ConfigError(f"unknown sim config key(s): {sorted(unknown)}")
    return SimConfig(seed=cfg["data"]["seed"], **{k: sim[k] for k in sim})


def _echo_config(cfg: dict, out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _say(args, message: str) -> None:
    if not args.quiet:
        print(message)


def _load_dataset(path, quiet: bool):
    with warnings.catch_warnings():
        if quiet:
            warnings.simplefilter("ignore")
        return load_csv(path)


def cmd_generate(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    data_cfg = cfg["data"]
    sim = _sim_config(cfg)
    n_cycles = int(data_cfg["n_cycles"])
    dataset = generate_dataset(
        sim, n_cycles,
        theta_q_schedule=fade_values(n_cycles, 1.0, float(data_cfg["theta_q_end"])),
        theta_r_schedule=fade_values(n_cycles, 1.0, float(data_cfg["theta_r_end"])),
        soc_start=float(data_cfg["soc_start"]),
        soc_stop=float(data_cfg["soc_stop"]),
        seed=int(data_cfg["seed"]),
        cell_id=str(data_cfg["cell_id"]),
    )
    write_csv(dataset, args.out)
    capacities = [discharge_capacity(c.current_a, sim.dt_s, sim.q_nom_ah)
                  for c in dataset.cycles]
    _say(args, f"wrote {len(dataset.cycles)} cycles to {args.out}")
    _say(args, f"discharge capacity per cycle: {capacities[0]:.1f}% (first) "
               f"-> {capacities[-1]:.1f}% (last)")


def _parse_sweep(text: str):
    # accepted form: n_xs=LO..HI
    try:
        name, span = text.split("=", 1)
        lo, hi = span.split("..", 1)
        name = name.strip()
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise ConfigError(
            f"cannot parse sweep spec {text!r}; expected n_xs=LO..HI"
        ) from None
    if name != "n_xs":
        raise ConfigError(f"only n_xs sweeps are supported, got {name!r}")
    if not 1 <= lo <= hi:
        raise ConfigError(f"bad sweep range {lo}..{hi}")
    return name, range(lo, hi + 1)


def _write_history(path, history, append: bool) -> None:
    mode = "a" if append and os.path.exists(path) else "w"
    with open(path, mode, encoding="utf-8") as fh:
        if mode == "w":
            fh.write("epoch,train_pred,train_corr,val_pred\n")
        for row in history.epochs:
            fh.write(f"{row.epoch},{row.train_pred!r},{row.train_corr!r},"
                     f"{row.val_pred!r}\n")


def _run_training(args, cfg: dict, tcfg: TrainConfig, dataset, out_dir: str,
                  init_params=None, epoch_offset: int = 0) -> None:
    eval_cfg = cfg["eval"]
    split = split_dataset(
        dataset, eval_cfg["holdout_cells"], tcfg.val_fraction, tcfg.seed,
        n_a=tcfg.n_a, n_b=tcfg.n_b, stride=1,
        block_length=tcfg.contiguous_run_length,
        holdout_cycles=eval_cfg["holdout_cycles"],
    )
    progress = None
    if not args.quiet:
        def progress(row):
            print(f"epoch {row.epoch}: train_pred={row.train_pred:.6g} "
                  f"train_corr={row.train_corr:.6g} val_pred={row.val_pred:.6g}")
    try:
        bundle, history = train(split.train, split.val, tcfg,
                                init_params=init_params,
                                epoch_offset=epoch_offset, progress=progress)
    except TsaeError as exc:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "error.txt"), "w", encoding="utf-8") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
        raise
    os.makedirs(out_dir, exist_ok=True)
    run_name = os.path.basename(os.path.normpath(out_dir)) or "run"
    ckpt_path = os.path.join(out_dir, f"{run_name}.ckpt")
    save_checkpoint(bundle, ckpt_path)
    _write_history(os.path.join(out_dir, "history.csv"), history,
                   append=epoch_offset > 0)
    _echo_config(cfg, out_dir)
    _say(args, f"trained {history.n_epochs} epoch(s); best epoch "
               f"{history.best_epoch} (val_pred={min(r.val_pred for r in history.epochs):.6g})")
    _say(args, f"checkpoint: {ckpt_path}")


def cmd_train(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    dataset = _load_dataset(args.data, args.quiet)
    if args.resume is not None:
        if args.sweep:
            raise ConfigError("--resume and --sweep cannot be combined")
        prior = load_checkpoint(args.resume)
        tcfg = TrainConfig(**{**prior.cfg.to_dict(),
                              "max_epochs": int(cfg["train"]["max_epochs"]),
                              "patience": int(cfg["train"]["patience"]),
                              "encoder_layers": prior.cfg.encoder_layers})
        _run_training(args, cfg, tcfg, dataset, args.out_dir,
                      init_params=prior.params,
                      epoch_offset=prior.epochs_completed)
        return
    base = _train_config(cfg)
    if args.sweep:
        _, values = _parse_sweep(args.sweep)
        for n_xs in values:
            sub_cfg = copy.deepcopy(cfg)
            sub_cfg["model"]["n_xs"] = n_xs
            tcfg = _train_config(sub_cfg)
            sub_dir = os.path.join(args.out_dir, f"nxs_{n_xs}")
            _say(args, f"[sweep] n_xs={n_xs} -> {sub_dir}")
            _run_training(args, sub_cfg, tcfg, dataset, sub_dir)
        return
    _run_training(args, cfg, base, dataset, args.out_dir)


def _select_eval_cycles(dataset, eval_cfg) -> list:
    holdout_cells = set(eval_cfg["holdout_cells"])
    holdout_cycles = set(eval_cfg["holdout_cycles"])
    if not holdout_cells and not holdout_cycles:
        return list(dataset.cycles)
    known = set(dataset.cell_ids())
    missing = holdout_cells - known
    if missing:
        raise ConfigError(f"holdout cell(s) not in dataset: {sorted(missing)}")
    cycles = [c for c in dataset.cycles
              if c.cell_id in holdout_cells or c.cycle_index in holdout_cycles]
    if not cycles:
        raise ConfigError("holdout selection matches no cycles")
    return cycles


def cmd_eval(args) -> None:
    cfg = load_run_config(args.config, args.seed)
    bundle = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data, args.quiet)
    cycles = _select_eval_cycles(dataset, cfg["eval"])
    q_nom = cfg["data"]["sim"]["q_nom_ah"]
    if args.oracle:
        report = oracle_metrics(cycles, bundle.cfg.n_a, bundle.cfg.n_b)
    else:
        report = rollout_metrics(bundle, cycles, q_nom_ah=q_nom)
    paths = export_report(report, args.out_dir)
    _echo_config(cfg, args.out_dir)
    print(f"RMSE: {report.rmse_v * 1000.0:.1f} mV")
    print(f"max abs error: {report.maxabs_v * 1000.0:.1f} mV")
    _say(args, f"reports: {paths['metrics']}, {paths['predictions']}, "
               f"{paths['latents']}")


def _write_latent_csv(path, rows, n_xs: int, lead_cols) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(list(lead_cols) + [f"x{i + 1}" for i in range(n_xs)]) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def cmd_inspect_latent(args) -> None:
    if args.soc is None and args.cycle is None:
        raise ConfigError("pass --soc and/or --cycle to select an inspection")
    cfg = load_run_config(args.config, args.seed)
    bundle = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.data, args.quiet)
    q_nom = cfg["data"]["sim"]["q_nom_ah"]
    os.makedirs(args.out_dir, exist_ok=True)
    n_xs = bundle.cfg.n_xs
    if args.soc is not None:
        points = latent_at_fixed_soc(bundle, dataset, args.soc,
                                     cfg["eval"]["soc_tolerance"], q_nom_ah=q_nom)
        path = os.path.join(args.out_dir, "latents_fixed_soc.csv")
        rows = [
            [int(points.cycle_indices[i]), repr(float(points.socs[i]))]
            + [repr(float(v)) for v in points.latents[i]]
            for i in range(points.cycle_indices.size)
        ]
        _write_latent_csv(path, rows, n_xs, ("cycle", "soc"))
        _say(args, f"fixed-SOC latents ({points.cycle_indices.size} cycles): {path}")
    if args.cycle is not None:
        matches = [c for c in dataset.cycles if c.cycle_index == args.cycle]
        if not matches:
            raise ConfigError(f"cycle {args.cycle} not present in {args.data}")
        trajectory = latent_across_soc(bundle, matches[0], q_nom_ah=q_nom)
        path = os.path.join(args.out_dir, f"latent_trajectory_cycle{args.cycle}.csv")
        rows = [
            [int(trajectory.starts[i]), repr(float(trajectory.socs[i]))]
            + [repr(float(v)) for v in trajectory.latents[i]]
            for i in range(trajectory.starts.size)
        ]
        _write_latent_csv(path, rows, n_xs, ("window_start", "soc"))
        autocorr = ", ".join(f"x{i + 1}={v:.3f}"
                             for i, v in enumerate(trajectory.feature_autocorrelations()))
        _say(args, f"trajectory ({trajectory.starts.size} windows): {path}")
        _say(args, f"latent lag-1 autocorrelation: {autocorr}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", default=None, help="run config JSON")
    parser.add_argument("--seed", type=int, default=None,
                        help="override data and train seeds")
    parser.add_argument("--quiet", action="store_true",
                        help="suppress informational output")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tsae",
        description="Two-timescale battery autoencoder: synthetic data, "
                    "training, evaluation, latent inspection.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset CSV")
    _add_common(p)
    p.add_argument("--out", required=True, help="output CSV path")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train a model into a run directory")
    _add_common(p)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out-dir", required=True, help="run directory")
    p.add_argument("--resume", default=None, metavar="CKPT",
                   help="continue from a checkpoint (optimizer state restarts)")
    p.add_argument("--sweep", default=None, metavar="SPEC",
                   help="hyperparameter sweep, e.g. n_xs=1..5")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on holdout data")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--oracle", action="store_true",
                   help=argparse.SUPPRESS)  # passthrough harness for tests
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-latent", help="export latent-space CSVs")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--soc", type=float, default=None,
                   help="fixed-SOC target for per-cycle latents")
    p.add_argument("--cycle", type=int, default=None,
                   help="cycle index for a latent trajectory")
    p.set_defaults(func=cmd_inspect_latent)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except TsaeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
