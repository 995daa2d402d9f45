"""Command-line entry point: ``wearagen <subcommand> [flags]``.

Subcommands: synth-data, preprocess, train, generate, evaluate, reproduce.
Each run writes a ``<output>.manifest.json`` (or ``manifest.json`` inside an
output directory) describing the resolved configuration, seeds, inputs,
outputs with SHA-256 checksums, and wall-clock duration.

Configuration precedence: command-line flags, then a JSON config file
(``--config``, or ``$WEARAGEN_CONFIG_DIR/<subcommand>.json``), then the
built-in defaults. Exit codes: 0 success, 2 validation error, 3 runtime or
numerical error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cohort import ChannelParams, CohortConfig, simulate_cohort
from .data import (
    WINDOW_LEN, WindowBatch, clean_cohort, dequantize_array, fit_scaler, make_cohort_windows,
    read_day_csv, read_windows, write_day_csv, write_windows,
)
from .evaluation import (
    DEFAULT_MAX_PAIRS, EvalReport, evaluate_sets, export_features, next_day_mae, to_windows,
    validate_report, write_summary_csv,
)
from .exceptions import NumericalError, ValidationError
from .generate import (
    GenerationConfig, generate, read_generated_csv, select_prompts, write_bin_trace_csv,
    write_generated_csv, write_long_csv,
)
from .model import ModelConfig, load_checkpoint
from .train import TrainConfig, evaluate_loss, split_by_individual, subsample_individuals, train

logger = logging.getLogger("wearagen")

CONFIG_DIR_ENV = "WEARAGEN_CONFIG_DIR"
EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 2, 3
REPRODUCE_FRACTIONS = (0.005, 0.01, 0.1, 1.0)


def sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, subcommand, args, seeds, inputs, outputs, started):
    manifest = {
        "subcommand": subcommand,
        "version": __version__,
        "config": {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "_config_keys")},
        "seeds": seeds,
        "inputs": {str(p): sha256(p) for p in inputs if Path(p).is_file()},
        "outputs": {str(p): sha256(p) for p in outputs if Path(p).is_file()},
        "duration_seconds": time.time() - started,
    }
    Path(path).write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return manifest


def _ensure_parent(path) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory for {path}: {exc}") from None
    if path.parent.exists() and not os.access(path.parent, os.W_OK):
        raise ValidationError(f"output path {path} is not writable")
    return path


def _ensure_dir(path) -> Path:
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ValidationError(f"cannot create output directory {path}: {exc}") from None
    if not os.access(path, os.W_OK):
        raise ValidationError(f"output directory {path} is not writable")
    return path


def _positive(name):
    def conv(s):
        v = float(s)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"{name} must be > 0, got {s}")
        return v
    return conv


# --------------------------------------------------------------------------
# synth-data


def cohort_config_from_args(args) -> CohortConfig:
    return CohortConfig(
        num_individuals=args.individuals, num_days=args.days, seed=args.seed,
        hr=ChannelParams(args.hr_location, args.hr_spread, args.hr_noise, args.hr_weekly),
        sleep=ChannelParams(args.sleep_location, args.sleep_spread, args.sleep_noise, args.sleep_weekly),
        steps=ChannelParams(args.steps_location, args.steps_spread, args.steps_noise, args.steps_weekly),
        ar_coefficient=args.ar, missingness_rate=args.missingness,
    )


def cmd_synth_data(args) -> dict:
    started = time.time()
    cfg = cohort_config_from_args(args)
    cfg.validate()
    out = _ensure_parent(args.output)
    cohort = simulate_cohort(cfg)
    write_day_csv(out, cohort)
    print(f"wrote {sum(len(s) for s in cohort)} day rows for {len(cohort)} individuals to {out}")
    return write_manifest(args.manifest or str(out) + ".manifest.json", "synth-data", args,
                          {"seed": cfg.seed}, [], [out], started)


# --------------------------------------------------------------------------
# preprocess


def cmd_preprocess(args) -> dict:
    started = time.time()
    src = Path(args.input)
    if not src.is_file():
        raise ValidationError(f"input {src} does not exist")
    out_dir = _ensure_dir(args.output_dir)
    raw = read_day_csv(src)
    cleaned, skipped = clean_cohort(raw, args.coverage_threshold)
    long_enough = [s for s in cleaned if len(s) >= WINDOW_LEN]
    too_short = [s.individual_id for s in cleaned if len(s) < WINDOW_LEN]
    if not long_enough:
        raise ValidationError("no individual has enough days for a single window")
    ids = [s.individual_id for s in long_enough]
    splits = split_by_individual(ids, tuple(args.split), args.seed)
    by_id = {s.individual_id: s for s in long_enough}
    spec = fit_scaler([by_id[i] for i in splits[0]], args.num_bins)

    outputs, counts = [], {}
    for name, members in zip(("train", "val", "test"), splits):
        batch = make_cohort_windows([by_id[i] for i in members], spec, args.stride)
        path = out_dir / f"{name}.agwb"
        write_windows(path, batch, spec)
        if batch.values is not None:
            np.save(out_dir / f"{name}.values.npy", batch.values)
            outputs.append(out_dir / f"{name}.values.npy")
        outputs += [path, Path(str(path) + ".json")]
        counts[name] = {"individuals": len(members), "windows": len(batch)}
    (out_dir / "scaler.json").write_text(json.dumps(spec.to_dict(), indent=2) + "\n", encoding="utf-8")
    outputs.append(out_dir / "scaler.json")
    summary = {
        "individuals_read": len(raw),
        "individuals_dropped": [{"individual_id": e.individual_id, "reason": e.reason} for e in skipped],
        "individuals_too_short": too_short,
        "splits": counts,
    }
    (out_dir / "preprocess_summary.json").write_text(json.dumps(summary, indent=2) + "\n", encoding="utf-8")
    outputs.append(out_dir / "preprocess_summary.json")
    print(f"kept {len(long_enough)} of {len(raw)} individuals "
          f"({len(skipped)} dropped, {len(too_short)} too short)")
    for name, c in counts.items():
        print(f"  {name}: {c['individuals']} individuals, {c['windows']} windows")
    return write_manifest(out_dir / "manifest.json", "preprocess", args, {"seed": args.seed},
                          [src], outputs, started)


# --------------------------------------------------------------------------
# train


def model_config_from_args(args) -> ModelConfig:
    if args.tiny:
        return ModelConfig(d_model=8, num_heads=2, num_blocks=1, ffn_hidden=32,
                           num_bins=args.num_bins, seq_len=WINDOW_LEN, dropout_p=0.0)
    return ModelConfig(d_model=args.d_model, num_heads=args.heads, num_blocks=args.blocks,
                       ffn_hidden=args.ffn_hidden, num_bins=args.num_bins, seq_len=WINDOW_LEN,
                       dropout_p=args.dropout)


def _windows_by_fraction(batch: WindowBatch, fraction: float, seed: int) -> WindowBatch:
    if fraction >= 1.0:
        return batch
    keep = set(subsample_individuals(batch.individuals(), fraction, seed))
    return batch.subset([i for i, s in enumerate(batch.sources) if s[0] in keep])


def cmd_train(args) -> dict:
    started = time.time()
    batch, spec = read_windows(args.windows)
    if len(batch) == 0:
        raise ValidationError(f"{args.windows} holds no windows")
    args.num_bins = spec.num_bins
    mcfg = model_config_from_args(args)
    if batch.windows.shape[1] != mcfg.seq_len:
        raise ValidationError(f"window length {batch.windows.shape[1]} != model seq_len {mcfg.seq_len}")
    tcfg = TrainConfig(epochs=args.epochs, lr=args.lr, decay_factor=args.decay_factor,
                       decay_interval=args.decay_interval, batch_size=args.batch_size,
                       beta1=args.beta1, beta2=args.beta2, eps=args.eps, seed=args.seed)
    tcfg.validate()
    batch = _windows_by_fraction(batch, args.fraction, args.seed)
    val = None
    inputs = [Path(args.windows)]
    if args.val_windows:
        vb, vspec = read_windows(args.val_windows)
        if vspec != spec:
            raise ValidationError("validation windows use a different scaler")
        val = vb.windows
        inputs.append(Path(args.val_windows))
    out_dir = _ensure_dir(args.output_dir)
    print(f"training on {len(batch)} windows ({len(batch.individuals())} individuals)")
    result = train(batch.windows, mcfg, tcfg, val_windows=val, out_dir=out_dir,
                   max_steps=args.max_steps,
                   checkpoint_extra={"scaler": spec.to_dict(), "num_train_windows": len(batch)})
    if result.val_log:
        (out_dir / "val_log.json").write_text(json.dumps(result.val_log, indent=2) + "\n",
                                              encoding="utf-8")
    outputs = list(result.checkpoints) + [out_dir / "loss_log.csv", out_dir / "val_log.json"]
    if result.loss_log:
        print(f"final combined training loss {result.loss_log[-1]['loss_combined']:.4f}")
    return write_manifest(out_dir / "manifest.json", "train", args, {"seed": args.seed},
                          inputs, outputs, started)


# --------------------------------------------------------------------------
# generate


def _load_model_for(checkpoint, spec):
    params, mcfg, extra = load_checkpoint(checkpoint)
    if mcfg.num_bins != spec.num_bins:
        raise ValidationError(f"checkpoint has {mcfg.num_bins} bins but the windows use {spec.num_bins}")
    if "scaler" in extra and extra["scaler"]["num_bins"] != spec.num_bins:
        raise ValidationError("checkpoint scaler does not match the window file")
    return params, mcfg


def cmd_generate(args) -> dict:
    started = time.time()
    batch, spec = read_windows(args.windows)
    params, mcfg = _load_model_for(args.checkpoint, spec)
    if batch.windows.shape[1] != mcfg.seq_len:
        raise ValidationError("prompt window length does not match the checkpoint")
    if args.prompt:
        wanted = {(i, int(d)) for i, d in (p.split(":") for p in args.prompt)}
        idx = [k for k, s in enumerate(batch.sources) if s in wanted]
        if len(idx) != len(wanted):
            raise ValidationError("some --prompt individual:day pairs are not in the window file")
    else:
        idx = select_prompts(len(batch), args.prompts, args.seed).tolist()
    gcfg = GenerationConfig(horizon=args.horizon,
                            temperatures=(args.temperature_hr, args.temperature_sleep,
                                          args.temperature_steps),
                            seed=args.seed)
    ids = [f"{batch.sources[k][0]}@{batch.sources[k][1]}" if batch.sources else f"w{k}" for k in idx]
    result = generate(batch.windows[idx], params, mcfg, spec, gcfg, ids)
    out = _ensure_parent(args.output)
    write_generated_csv(out, result)
    outputs = [out]
    if args.bin_trace:
        write_bin_trace_csv(_ensure_parent(args.bin_trace), result)
        outputs.append(Path(args.bin_trace))
    if args.long_csv:
        real = {pid: dequantize_array(batch.windows[k], spec) for pid, k in zip(ids, idx)}
        write_long_csv(_ensure_parent(args.long_csv),
                       {"prompt": real, "generated": dict(zip(ids, result.values))})
        outputs.append(Path(args.long_csv))
    print(f"wrote {result.values.shape[0] * result.values.shape[1]} generated day rows to {out}")
    return write_manifest(args.manifest or str(out) + ".manifest.json", "generate", args,
                          {"seed": args.seed}, [Path(args.windows), Path(args.checkpoint)],
                          outputs, started)


# --------------------------------------------------------------------------
# evaluate


def _real_values(windows_path, batch, spec):
    values_path = Path(str(windows_path).replace(".agwb", ".values.npy"))
    if values_path != Path(windows_path) and values_path.is_file():
        vals = np.load(values_path)
        if vals.shape == batch.windows.shape:
            return vals
    return dequantize_array(batch.windows, spec)


def run_evaluation(params, mcfg, real_windows: WindowBatch, real_values, generated_values, spec,
                   max_pairs, seed, cosine_space="scaled", dtw_space="original"):
    mae = None
    if params is not None:
        m = next_day_mae(params, mcfg, real_windows.windows, spec, real_values)
        mae = {"resting_hr": float(m[0]), "sleep_minutes": float(m[1]), "steps": float(m[2])}
    cos, dtw = evaluate_sets(real_values, generated_values, spec, max_pairs, seed,
                             cosine_space, dtw_space)
    return EvalReport(
        mae=mae, cosine=cos, dtw=dtw,
        counts={"real_sequences": int(len(real_values)), "generated_sequences": int(len(generated_values))},
        seeds={"pair_sampling": int(seed)},
        settings={"max_pairs": int(max_pairs), "cosine_space": cosine_space, "dtw_space": dtw_space,
                  "window_len": int(real_values.shape[1])},
    )


def cmd_evaluate(args) -> dict:
    started = time.time()
    batch, spec = read_windows(args.windows)
    if len(batch) < 2:
        raise ValidationError("evaluation needs at least two real windows")
    real_values = _real_values(args.windows, batch, spec)
    params = mcfg = None
    inputs = [Path(args.windows)]
    if args.checkpoint:
        params, mcfg = _load_model_for(args.checkpoint, spec)
        _, _, extra = load_checkpoint(args.checkpoint)
        if "scaler" in extra and extra["scaler"] != spec.to_dict():
            raise ValidationError("checkpoint was trained with a different scaler than the real windows")
        inputs.append(Path(args.checkpoint))
    if args.generated:
        gen = to_windows(read_generated_csv(args.generated), batch.windows.shape[1])
        lo, hi = np.array(spec.mins), np.array(spec.maxs)
        if np.any(gen < lo - 1e-9) or np.any(gen > hi + 1e-9):
            raise ValidationError("generated values fall outside the real windows' scaler range")
        inputs.append(Path(args.generated))
    else:
        gen = real_values
    report = run_evaluation(params, mcfg, batch, real_values, gen, spec, args.max_pairs, args.seed,
                            args.cosine_space, args.dtw_space)
    validate_report(report.to_dict())
    out_dir = _ensure_dir(args.output_dir)
    report.write(out_dir / "eval_report.json")
    n_feat = export_features(out_dir / "features.csv", real_values, gen, spec)
    outputs = [out_dir / "eval_report.json", out_dir / "features.csv"]
    if report.mae is not None:
        write_summary_csv(out_dir / "summary.csv",
                          [(args.training_size or "", *report.mae.values())])
        outputs.append(out_dir / "summary.csv")
    print(f"cosine cross {report.cosine['cross']['mean']:.4f} "
          f"(intra-real {report.cosine['intra_real']['mean']:.4f}); "
          f"dtw cross {report.dtw['cross']['mean']:.1f} "
          f"(intra-real {report.dtw['intra_real']['mean']:.1f}); {n_feat} feature columns")
    return write_manifest(out_dir / "manifest.json", "evaluate", args, {"seed": args.seed},
                          inputs, outputs, started)


# --------------------------------------------------------------------------
# reproduce


def cmd_reproduce(args) -> dict:
    """synth-data -> preprocess -> train at four data fractions -> generate -> evaluate."""
    started = time.time()
    root = _ensure_dir(args.output_dir)
    ns = argparse.Namespace
    base = vars(build_parser().parse_args(["synth-data"]))
    synth = ns(**{**base, "individuals": args.individuals, "days": args.days, "seed": args.seed,
                  "output": str(root / "cohort.csv"), "manifest": None})
    cmd_synth_data(synth)
    base = vars(build_parser().parse_args(["preprocess", "--input", "x", "--output-dir", "x"]))
    cmd_preprocess(ns(**{**base, "input": str(root / "cohort.csv"),
                         "output_dir": str(root / "windows"), "seed": args.seed}))
    _, spec = read_windows(root / "windows" / "test.agwb")
    test_batch, _ = read_windows(root / "windows" / "test.agwb")
    val_batch, _ = read_windows(root / "windows" / "val.agwb")
    test_values = _real_values(root / "windows" / "test.agwb", test_batch, spec)

    rows, trend = [], []
    for frac in args.fractions:
        tag = f"frac{frac:g}"
        base = vars(build_parser().parse_args(["train", "--windows", "x", "--output-dir", "x"]))
        cmd_train(ns(**{**base, "windows": str(root / "windows" / "train.agwb"),
                        "val_windows": str(root / "windows" / "val.agwb"),
                        "output_dir": str(root / tag), "fraction": frac, "seed": args.seed,
                        "epochs": args.epochs, "tiny": args.tiny}))
        params, mcfg, extra = load_checkpoint(root / tag / "final.agck")
        n_prompts = min(args.prompts, len(test_batch))
        idx = select_prompts(len(test_batch), n_prompts, args.seed)
        gen = generate(test_batch.windows[idx], params, mcfg, spec,
                       GenerationConfig(horizon=args.horizon, seed=args.seed))
        write_generated_csv(root / tag / "generated.csv", gen)
        gen_windows = to_windows(list(gen.values), test_batch.windows.shape[1])
        report = run_evaluation(params, mcfg, test_batch, test_values, gen_windows, spec,
                                args.max_pairs, args.seed)
        report.settings["training_fraction"] = frac
        report.settings["training_windows"] = int(extra.get("num_train_windows", 0))
        report.settings["val_combined_loss"] = float(evaluate_loss(val_batch.windows, params, mcfg)["combined"])
        validate_report(report.to_dict())
        report.write(root / tag / "eval_report.json")
        rows.append((extra.get("num_train_windows", 0) * test_batch.windows.shape[1],
                     *report.mae.values()))
        trend.append({"fraction": frac, "training_days": rows[-1][0],
                      "val_combined_loss": report.settings["val_combined_loss"],
                      "cosine_cross": report.cosine["cross"]["mean"],
                      "cosine_intra_real": report.cosine["intra_real"]["mean"],
                      "dtw_cross": report.dtw["cross"]["mean"],
                      "dtw_intra_real": report.dtw["intra_real"]["mean"],
                      "mae": report.mae})
        print(f"[{tag}] val loss {trend[-1]['val_combined_loss']:.4f}  "
              f"cosine {trend[-1]['cosine_cross']:.4f}  dtw {trend[-1]['dtw_cross']:.1f}")
    write_summary_csv(root / "summary.csv", rows)
    (root / "trend.json").write_text(json.dumps(trend, indent=2) + "\n", encoding="utf-8")
    return write_manifest(root / "manifest.json", "reproduce", args, {"seed": args.seed}, [],
                          [root / "summary.csv", root / "trend.json"], started)


# --------------------------------------------------------------------------
# parser


def _add_common(p):
    p.add_argument("--config", help="JSON file of flag defaults (flags on the command line win)")
    p.add_argument("--threads", type=int, default=None, help="BLAS thread limit (default: library default)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="wearagen", description=__doc__.split("\n\n")[0],
                                     formatter_class=fmt)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    d = CohortConfig()
    p = sub.add_parser("synth-data", help="simulate a synthetic day-level cohort CSV", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--individuals", type=int, default=d.num_individuals, help="number of individuals")
    p.add_argument("--days", type=int, default=d.num_days, help="days per individual")
    p.add_argument("--seed", type=int, default=d.seed, help="cohort seed")
    for ch, cp in (("hr", d.hr), ("sleep", d.sleep), ("steps", d.steps)):
        p.add_argument(f"--{ch}-location", type=float, default=cp.location, help=f"{ch} baseline mean")
        p.add_argument(f"--{ch}-spread", type=float, default=cp.spread, help=f"{ch} baseline std")
        p.add_argument(f"--{ch}-noise", type=float, default=cp.noise,
                       help=f"{ch} AR(1) noise scale" + (" (log units)" if ch == "steps" else ""))
        p.add_argument(f"--{ch}-weekly", type=float, default=cp.weekly_amplitude,
                       help=f"{ch} day-of-week amplitude")
    p.add_argument("--ar", type=float, default=d.ar_coefficient, help="AR(1) coefficient in [0, 1)")
    p.add_argument("--missingness", type=float, default=d.missingness_rate,
                   help="fraction of days with coverage below 0.8")
    p.add_argument("--output", "-o", default="cohort.csv", help="output day-level CSV")
    p.add_argument("--manifest", default=None, help="manifest path (default: <output>.manifest.json)")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("preprocess", help="filter, impute, scale, bin and window a day-level CSV",
                       formatter_class=fmt)
    _add_common(p)
    p.add_argument("--input", "-i", required=True, help="day-level CSV")
    p.add_argument("--output-dir", "-o", required=True, help="directory for window files")
    p.add_argument("--stride", type=int, default=WINDOW_LEN, help="window stride in days")
    p.add_argument("--num-bins", type=int, default=100, help="bins per channel")
    p.add_argument("--coverage-threshold", type=float, default=0.8,
                   help="days with coverage <= this are treated as missing")
    p.add_argument("--split", type=float, nargs=3, default=(0.8, 0.1, 0.1),
                   metavar=("TRAIN", "VAL", "TEST"), help="split fractions by individual")
    p.add_argument("--seed", type=int, default=0, help="split seed")
    p.set_defaults(func=cmd_preprocess)

    m, t = ModelConfig(), TrainConfig()
    p = sub.add_parser("train", help="train the transformer on a window file", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--windows", required=True, help="training .agwb file")
    p.add_argument("--val-windows", default=None, help="validation .agwb file")
    p.add_argument("--output-dir", "-o", required=True, help="checkpoint/log directory")
    p.add_argument("--fraction", type=float, default=1.0,
                   help="fraction of training individuals to keep (data-scaling study)")
    p.add_argument("--epochs", type=int, default=t.epochs, help="training epochs")
    p.add_argument("--lr", type=float, default=t.lr, help="initial learning rate")
    p.add_argument("--decay-factor", type=float, default=t.decay_factor, help="lr divisor per decay")
    p.add_argument("--decay-interval", type=int, default=t.decay_interval, help="epochs between lr decays")
    p.add_argument("--batch-size", type=int, default=t.batch_size, help="windows per step")
    p.add_argument("--beta1", type=float, default=t.beta1, help="Adam beta1")
    p.add_argument("--beta2", type=float, default=t.beta2, help="Adam beta2")
    p.add_argument("--eps", type=float, default=t.eps, help="Adam epsilon")
    p.add_argument("--d-model", type=int, default=m.d_model, help="embedding width")
    p.add_argument("--heads", type=int, default=m.num_heads, help="attention heads")
    p.add_argument("--blocks", type=int, default=m.num_blocks, help="transformer blocks")
    p.add_argument("--ffn-hidden", type=int, default=m.ffn_hidden, help="feed-forward hidden width")
    p.add_argument("--dropout", type=float, default=m.dropout_p, help="dropout probability")
    p.add_argument("--tiny", action="store_true", help="d_model 8, 2 heads, 1 block, no dropout")
    p.add_argument("--max-steps", type=int, default=None, help="stop after this many updates")
    p.add_argument("--seed", type=int, default=t.seed, help="init/shuffle/dropout seed")
    p.set_defaults(func=cmd_train)

    g = GenerationConfig()
    p = sub.add_parser("generate", help="sample synthetic days from a checkpoint", formatter_class=fmt)
    _add_common(p)
    p.add_argument("--checkpoint", required=True, help=".agck checkpoint")
    p.add_argument("--windows", required=True, help="held-out .agwb file supplying prompts")
    p.add_argument("--prompts", "--random-prompts", type=int, default=10, dest="prompts",
                   help="number of prompts drawn uniformly with --seed")
    p.add_argument("--prompt", action="append", default=None, metavar="ID:DAY",
                   help="explicit prompt (individual id and start day); repeatable")
    p.add_argument("--horizon", type=int, default=g.horizon, help="days to generate per prompt")
    p.add_argument("--temperature-hr", type=_positive("temperature"), default=g.temperatures[0],
                   help="resting heart rate temperature")
    p.add_argument("--temperature-sleep", type=_positive("temperature"), default=g.temperatures[1],
                   help="sleep temperature")
    p.add_argument("--temperature-steps", type=_positive("temperature"), default=g.temperatures[2],
                   help="steps temperature")
    p.add_argument("--seed", type=int, default=g.seed, help="sampling seed")
    p.add_argument("--output", "-o", default="generated.csv", help="generated CSV")
    p.add_argument("--bin-trace", default=None, help="optional CSV of sampled bins")
    p.add_argument("--long-csv", default=None, help="optional long-format CSV for plotting")
    p.add_argument("--manifest", default=None, help="manifest path (default: <output>.manifest.json)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("evaluate", help="MAE, cosine and DTW statistics, feature export",
                       formatter_class=fmt)
    _add_common(p)
    p.add_argument("--windows", required=True, help="real (held-out) .agwb file")
    p.add_argument("--checkpoint", default=None, help="checkpoint for next-day MAE")
    p.add_argument("--generated", default=None,
                   help="generated CSV (omitted: compare the real set with itself)")
    p.add_argument("--output-dir", "-o", required=True, help="report directory")
    p.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS, help="pair sampling cap")
    p.add_argument("--cosine-space", choices=("scaled", "original"), default="scaled",
                   help="value space for cosine similarity")
    p.add_argument("--dtw-space", choices=("scaled", "original"), default="original",
                   help="value space for DTW")
    p.add_argument("--training-size", default=None, help="label for the summary CSV row")
    p.add_argument("--seed", type=int, default=0, help="pair sampling seed")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("reproduce", help="end-to-end data-scaling study on a synthetic cohort",
                       formatter_class=fmt)
    _add_common(p)
    p.add_argument("--output-dir", "-o", required=True, help="run directory")
    p.add_argument("--individuals", type=int, default=200, help="cohort size")
    p.add_argument("--days", type=int, default=365, help="days per individual")
    p.add_argument("--fractions", type=float, nargs="+", default=list(REPRODUCE_FRACTIONS),
                   help="training-data fractions")
    p.add_argument("--epochs", type=int, default=t.epochs, help="training epochs")
    p.add_argument("--tiny", action="store_true", help="use the tiny model preset")
    p.add_argument("--prompts", type=int, default=100, help="prompts per model")
    p.add_argument("--horizon", type=int, default=WINDOW_LEN, help="generated days per prompt")
    p.add_argument("--max-pairs", type=int, default=DEFAULT_MAX_PAIRS, help="pair sampling cap")
    p.add_argument("--seed", type=int, default=0, help="seed for every stage")
    p.set_defaults(func=cmd_reproduce)
    return parser


def _config_defaults(argv, parser) -> dict:
    """Defaults from ``--config`` or ``$WEARAGEN_CONFIG_DIR/<subcommand>.json``."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("subcommand", nargs="?")
    known, _ = pre.parse_known_args(argv)
    path = known.config
    if path is None and known.subcommand and os.environ.get(CONFIG_DIR_ENV):
        candidate = Path(os.environ[CONFIG_DIR_ENV]) / f"{known.subcommand}.json"
        path = candidate if candidate.is_file() else None
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ValidationError(f"cannot read config {path}: {exc}") from None
    return {k.replace("-", "_"): v for k, v in data.items()}


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        defaults = _config_defaults(argv, parser)
        if defaults:
            for action in parser._subparsers._group_actions:
                for name, sp in action.choices.items():
                    valid = {a.dest for a in sp._actions}
                    sp.set_defaults(**{k: v for k, v in defaults.items() if k in valid})
        try:
            args = parser.parse_args(argv)
        except SystemExit as exc:
            return EXIT_OK if exc.code in (0, None) else EXIT_VALIDATION
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.threads:
            from threadpoolctl import threadpool_limits

            with threadpool_limits(limits=args.threads):
                args.func(args)
        else:
            args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
