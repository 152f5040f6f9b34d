"""Command-line entry point: ``smartcrop <subcommand> ...``.

Exit codes: 0 success, 1 some instances failed, 2 usage or config error,
3 every instance failed.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import Config, ConfigError, load_config, render_defaults
from .decoder import FULL_CONTEXT, PRESERVE_DENSITY, PRESERVE_STEPS, SMARTCROP, DecodeConfig, decode
from .experiments import (
    RunConfig,
    correlation_bins,
    first_pass_lengths,
    invariance_study,
    method_name,
    run_benchmark,
    sensitivity_sweep,
    shuffled_control,
    write_csv,
    write_jsonl,
    InstanceRecord,
)
from .flops import CostModel, savings, step_flops, trace_flops
from .model import DiffusionLM, ModelConfig, TrainingConfig, load_weights, save_weights, train
from .neural import OptimizerConfig
from .tasks import get_preset
from .vocab import Vocabulary

logger = logging.getLogger("smartcrop")

EXIT_OK, EXIT_PARTIAL, EXIT_USAGE, EXIT_TOTAL = 0, 1, 2, 3

SUMMARY_COLUMNS = [
    "benchmark", "method", "L_p", "avg_processed_length", "metric", "flops_saved_pct",
    "perf_delta_pct", "tau", "n", "n_failed", "n_fallback", "flops_saved_ratio_of_totals_pct",
    "flops_p", "flops_stars", "metric_diff", "metric_ci_low", "metric_ci_high", "metric_p",
    "metric_stars", "schedule_mode", "reuse_first_pass",
]
REPORT_COLUMNS = ["Method", "L_p", "Avg. Processed Length", "Metric", "FLOPs Saved %", "Perf. Δ %", "Stars"]
SWEEP_COLUMNS = ["delta", "mean", "ci_low", "ci_high", "control_mean", "fc_mean"]
BINS_COLUMNS = ["bin_center", "mean_delta", "count", "low_confidence"]


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _write_manifest(out: Path, command: str, cfg: Config, artifacts: list[str], started: float) -> None:
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": cfg.snapshot(),
        "seeds": {"seed": cfg.seed, "eval_seed": cfg.eval_seed},
        "artifacts": {a: _digest(out / a) for a in sorted(artifacts)},
        "timestamps": {"started": started, "finished": time.time()},
    }
    (out / f"manifest-{command}.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _output_dir(cfg: Config) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_model(path) -> DiffusionLM:
    if path is None:
        raise ConfigError("no 'weights' path configured")
    if not Path(path).is_file():
        raise ConfigError(f"weight file not found: {path}")
    try:
        return load_weights(path)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def _cost_model(cfg: Config, model: DiffusionLM) -> CostModel:
    if cfg.cost_preset == "model":
        base = CostModel.for_model(model)
    elif cfg.cost_preset == "llada-8b":
        base = CostModel.llada_8b()
    else:
        raise ConfigError(f"unknown cost_preset {cfg.cost_preset!r}")
    c1 = base.c1 if cfg.cost_c1 is None else cfg.cost_c1
    c2 = base.c2 if cfg.cost_c2 is None else cfg.cost_c2
    return CostModel(c1, c2, base.n_params)


def _run_config(cfg: Config, model: DiffusionLM, task_name=None, n=None, seed=None) -> RunConfig:
    spec = get_preset(task_name or cfg.task)
    instances = spec.generate(model.vocab, cfg.eval_seed if seed is None else seed,
                              cfg.eval_examples if n is None else n)
    if cfg.schedule_mode not in (None, PRESERVE_DENSITY, PRESERVE_STEPS):
        raise ConfigError(f"unknown schedule_mode {cfg.schedule_mode!r}")
    for tau in cfg.taus:
        if not 0 <= tau <= 1:
            raise ConfigError(f"tau out of range: {tau}")
    return RunConfig(
        task=spec,
        instances=instances,
        oracle=model,
        taus=tuple(cfg.taus),
        schedule_mode=cfg.schedule_mode,
        reuse_first_pass=cfg.reuse_first_pass,
        cost_model=_cost_model(cfg, model),
        seed=cfg.seed,
        resamples=cfg.resamples,
        workers=cfg.workers,
        l_new=cfg.l_new,
        steps=cfg.steps,
    )


def _failure_exit(out: Path, records: list[InstanceRecord]) -> int:
    failed = sorted({(r.id, r.method, r.error) for r in records if not r.ok})
    path = out / "failures.txt"
    if not failed:
        if path.exists():
            path.unlink()
        return EXIT_OK
    path.write_text("".join(f"{i}\t{m}\t{e}\n" for i, m, e in failed))
    return EXIT_TOTAL if all(not r.ok for r in records) else EXIT_PARTIAL


# ---------------------------------------------------------------------------
# subcommands


def cmd_train(cfg: Config) -> int:
    started = time.time()
    out = _output_dir(cfg)
    vocab = Vocabulary.standard(cfg.vocab_size)
    specs = [get_preset(name) for name in cfg.train_tasks]
    corpus = []
    for i, spec in enumerate(specs):
        corpus.extend(spec.generate(vocab, cfg.seed * 1000 + i, cfg.train_examples))
    l_new = cfg.train_l_new or max(spec.l_new for spec in specs)
    mcfg = ModelConfig(vocab=vocab, d_model=cfg.d_model, n_layers=cfg.n_layers,
                       n_heads=cfg.n_heads, max_positions=cfg.max_positions)
    tcfg = TrainingConfig(epochs=cfg.epochs, batch_size=cfg.batch_size, l_new=l_new,
                          optimizer=OptimizerConfig(cfg.learning_rate), seed=cfg.seed,
                          length_jitter=cfg.length_jitter, tight_fraction=cfg.tight_fraction,
                          tight_slack=cfg.tight_slack, warmup_steps=cfg.warmup_steps)
    model = DiffusionLM(mcfg, seed=cfg.seed)
    history = train(model, corpus, tcfg)
    save_weights(model, out / "model.bin")
    write_csv(({"step": i + 1, "loss": v} for i, v in enumerate(history)), out / "loss.csv", ["step", "loss"])
    _write_manifest(out, "train", cfg, ["model.bin", "loss.csv"], started)
    print(f"trained {model.num_parameters()} parameters for {len(history)} steps; "
          f"final loss {history[-1]:.4f}; weights at {out / 'model.bin'}")
    return EXIT_OK


def cmd_decode(args) -> int:
    mode = {"fc": FULL_CONTEXT, "sc": SMARTCROP}.get(args.mode, args.mode)
    if mode == FULL_CONTEXT and args.tau is not None:
        raise UsageError("--tau only applies to --mode sc")
    if args.tau is not None and not 0 <= args.tau <= 1:
        raise UsageError(f"--tau must lie in [0, 1], got {args.tau}")
    if mode == SMARTCROP and args.tau is None:
        args.tau = 0.9
    model = _load_model(args.weights)
    try:
        prompt = model.vocab.encode(args.prompt)
    except KeyError as exc:
        raise UsageError(f"unknown token in --prompt: {exc}") from None
    steps = args.steps or args.l_new
    dcfg = DecodeConfig(mode, tau=args.tau, schedule_mode=args.schedule_mode,
                        reuse_first_pass=not args.no_reuse_first_pass)
    trace = decode(model, prompt, args.l_new, steps, dcfg)
    Path(args.trace).write_text(trace.to_json(args.id, model.vocab) + "\n")
    print(model.vocab.decode(trace.generated(model.vocab.eos_id)))
    if mode == SMARTCROP:
        cost = CostModel.for_model(model)
        sc = trace_flops(trace, cost)
        fc = min(steps, args.l_new) * step_flops(len(prompt) + args.l_new, cost)
        print(f"L_hat={trace.predicted_length} crop_length={trace.crop_length} "
              f"T'={trace.steps_after_crop} FLOPs={sc} FC_FLOPs={fc} saved={savings(fc, sc):.2f}%",
              file=sys.stderr)
    return EXIT_OK


def cmd_eval(cfg: Config) -> int:
    started = time.time()
    out = _output_dir(cfg)
    model = _load_model(cfg.weights)
    rc = _run_config(cfg, model)
    result = run_benchmark(rc)
    write_jsonl(result.records, out / "instances.jsonl")
    write_csv(result.summary, out / "summary.csv", SUMMARY_COLUMNS)
    (out / "eval_metadata.json").write_text(json.dumps(result.metadata, indent=2, sort_keys=True) + "\n")
    _write_manifest(out, "eval", cfg, ["instances.jsonl", "summary.csv", "eval_metadata.json"], started)
    for row in result.summary:
        saved = row["flops_saved_pct"]
        print(f"{row['method']:>8}  metric={row['metric']:.4f}  "
              f"saved={'-' if saved is None else f'{saved:.2f}%'}")
    return _failure_exit(out, result.records)


def _control(cfg: Config, model: DiffusionLM, rc: RunConfig):
    donors = [name for name in cfg.donor_tasks if name != rc.task.name]
    if not donors:
        raise ConfigError("shuffled control needs at least one donor task other than the evaluated task")
    pool = []
    for name in donors:
        drc = _run_config(cfg, model, task_name=name, n=cfg.donor_examples)
        lengths = first_pass_lengths(model, drc.instances, drc.l_new, cfg.sweep_tau)
        pool.extend(lengths[inst.id] - len(inst.prompt) for inst in drc.instances)
    return shuffled_control(rc, pool, repetitions=cfg.control_repetitions), donors


def cmd_control(cfg: Config) -> int:
    started = time.time()
    out = _output_dir(cfg)
    model = _load_model(cfg.weights)
    rc = _run_config(cfg, model)
    result, donors = _control(cfg, model, rc)
    write_jsonl(result.records, out / "control_instances.jsonl")
    row = {"task": rc.task.name, "mean": result.mean, "ci_low": result.ci_low, "ci_high": result.ci_high,
           "repetitions": result.metadata["repetitions"], "pool_size": result.metadata["pool_size"],
           "donor_tasks": "+".join(donors)}
    write_csv([row], out / "control.csv")
    _write_manifest(out, "control", cfg, ["control.csv", "control_instances.jsonl"], started)
    print(f"control mean {result.mean:.4f} [{result.ci_low:.4f}, {result.ci_high:.4f}]")
    return _failure_exit(out, result.records)


def cmd_sweep(cfg: Config) -> int:
    started = time.time()
    out = _output_dir(cfg)
    model = _load_model(cfg.weights)
    rc = _run_config(cfg, model)
    from .experiments import decode_instance

    fc = [decode_instance(rc, inst, DecodeConfig(FULL_CONTEXT), "FC") for inst in rc.instances]
    fc_ok = [r.metric for r in fc if r.ok]
    fc_mean = float(np.mean(fc_ok)) if fc_ok else None
    control = None
    if cfg.donor_tasks:
        control, _ = _control(cfg, model, rc)
    result = sensitivity_sweep(rc, cfg.deltas, tau=cfg.sweep_tau, control=control, fc_metric=fc_mean,
                               scale_generated_only=cfg.scale_generated_only)
    write_csv(result.rows, out / "sweep.csv", SWEEP_COLUMNS)
    records = fc + result.records + ([] if control is None else control.records)
    write_jsonl(result.records, out / "sweep_instances.jsonl")
    _write_manifest(out, "sweep", cfg, ["sweep.csv", "sweep_instances.jsonl"], started)
    for row in result.rows:
        print(f"delta={row['delta']:+.1f}  mean={row['mean']:.4f}  [{row['ci_low']:.4f}, {row['ci_high']:.4f}]")
    return _failure_exit(out, records)


def cmd_invariance(cfg: Config) -> int:
    started = time.time()
    out = _output_dir(cfg)
    model = _load_model(cfg.weights)
    spec = get_preset(cfg.task)
    instances = spec.generate(model.vocab, cfg.eval_seed, cfg.eval_examples)
    result = invariance_study(model, instances, cfg.l_new_grid, tau=cfg.invariance_tau)
    write_csv(result.rows, out / "invariance.csv")
    write_jsonl(result.per_instance, out / "invariance_instances.jsonl")
    _write_manifest(out, "invariance", cfg, ["invariance.csv", "invariance_instances.jsonl"], started)
    for row in result.rows:
        print(f"L_new={row['L_new']:>4}  median={row['q50']:.1f}  max={row['max']:.0f}  "
              f"truncated={row['n_truncated']}")
    print(f"median spread across L_new: {100 * result.median_spread:.1f}%")
    return EXIT_OK


def _read_records(path: Path) -> list[InstanceRecord]:
    out = []
    for line in path.read_text(encoding="utf-8").splitlines():
        d = json.loads(line)
        d = {k: (float("nan") if v is None and k in ("metric", "flops", "mean_pass_length") else v)
             for k, v in d.items()}
        out.append(InstanceRecord(**d))
    return out


def _num(text: str, fmt: str) -> str:
    return "-" if text == "" else format(float(text), fmt)


def cmd_report(cfg: Config) -> int:
    started = time.time()
    out = Path(cfg.output_dir)
    summary_path = out / "summary.csv"
    inst_path = out / "instances.jsonl"
    if not summary_path.is_file() or not inst_path.is_file():
        raise ConfigError(f"no eval outputs in {out}; run 'smartcrop eval' first")
    with open(summary_path, newline="", encoding="utf-8") as fh:
        summary = list(csv.DictReader(fh))
    rows = []
    for s in summary:
        rows.append({
            "Method": s["method"],
            "L_p": _num(s["L_p"], ".1f"),
            "Avg. Processed Length": _num(s["avg_processed_length"], ".1f"),
            "Metric": _num(s["metric"], ".4f"),
            "FLOPs Saved %": "" if s["flops_saved_pct"] == "" else _num(s["flops_saved_pct"], ".2f"),
            "Perf. Δ %": "" if s["perf_delta_pct"] == "" else _num(s["perf_delta_pct"], "+.2f"),
            "Stars": s["metric_stars"],
        })
    write_csv(rows, out / "report.csv", REPORT_COLUMNS)
    records = _read_records(inst_path)
    fc = [r for r in records if r.method == "FC"]
    sc = [r for r in records if r.method == method_name(cfg.bins_tau)]
    artifacts = ["report.csv"]
    if sc:
        write_csv(correlation_bins(fc, sc, cfg.bin_width), out / "bins.csv", BINS_COLUMNS)
        artifacts.append("bins.csv")
    else:
        logger.warning("no %s records; bins.csv not written", method_name(cfg.bins_tau))
    _write_manifest(out, "report", cfg, artifacts, started)
    print((out / "report.csv").read_text(encoding="utf-8"), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smartcrop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_ in [
        ("train", "train the toy model"),
        ("eval", "FC vs SmartCrop benchmark over the tau grid"),
        ("sweep", "length-perturbation sweep with FC and shuffled-control references"),
        ("control", "shuffled-length control"),
        ("invariance", "predicted-length distributions across initial canvas sizes"),
        ("report", "results table and delta-vs-length bins from eval outputs"),
    ]:
        p = sub.add_parser(name, help=help_)
        p.add_argument("config", help="key-value config file or a run manifest")
        p.add_argument("--workers", type=int, default=None, help="decode worker threads")

    p = sub.add_parser("decode", help="decode a single prompt")
    p.add_argument("--weights", required=True)
    p.add_argument("--prompt", required=True, help="space-separated prompt tokens")
    p.add_argument("--mode", choices=["fc", "sc", FULL_CONTEXT, SMARTCROP], default="fc")
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--schedule-mode", choices=[PRESERVE_DENSITY, PRESERVE_STEPS], default=PRESERVE_DENSITY)
    p.add_argument("--l-new", type=int, default=160)
    p.add_argument("--steps", type=int, default=None, help="denoising steps (default: --l-new)")
    p.add_argument("--no-reuse-first-pass", action="store_true")
    p.add_argument("--trace", default="trace.jsonl", help="trace output path")
    p.add_argument("--id", default="prompt-0", help="id recorded in the trace")

    sub.add_parser("defaults", help="print the default config")
    return parser


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "control": cmd_control,
    "invariance": cmd_invariance,
    "report": cmd_report,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "defaults":
            print(render_defaults(), end="")
            return EXIT_OK
        if args.command == "decode":
            return cmd_decode(args)
        cfg = load_config(args.config)
        if args.workers is not None:
            cfg.values["workers"] = args.workers
        return COMMANDS[args.command](cfg)
    except (ConfigError, UsageError) as exc:
        print(f"smartcrop {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
