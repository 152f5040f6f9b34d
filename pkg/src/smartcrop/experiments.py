"""Experimental protocols: FC vs SC benchmark, length-perturbation sweep,
shuffled-length control, L_new invariance study and delta-vs-length bins.

Every protocol is deterministic given its seeds.  Results are plain lists of
dicts so they can go straight to CSV or JSONL via :func:`write_csv` and
:func:`write_jsonl`.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .canvas import init_canvas
from .crop import perturb_length, predict_crop
from .decoder import FULL_CONTEXT, SMARTCROP, DecodeConfig, decode
from .flops import CostModel, savings, trace_flops
from .model import LogitOracle
from .stats import (
    DEFAULT_RESAMPLES,
    P_VALUE_CONVENTION,
    PairedSample,
    mean_ci,
    paired_bootstrap,
    significance_stars,
)
from .tasks import DEFAULT_SCHEDULE_MODE, Instance, TaskSpec

logger = logging.getLogger(__name__)

TAU_GRID = (0.5, 0.75, 0.9, 0.95, 0.99)
DELTA_GRID = tuple(round(-0.5 + 0.1 * i, 1) for i in range(11))
L_NEW_GRID = (32, 64, 128, 256)
LOW_COUNT = 5


class InvariantError(RuntimeError):
    """A property that must hold on every run was violated."""


@dataclass
class RunConfig:
    task: TaskSpec
    instances: list[Instance]
    oracle: LogitOracle
    taus: tuple[float, ...] = TAU_GRID
    schedule_mode: str | None = None
    reuse_first_pass: bool = True
    cost_model: CostModel | None = None
    seed: int = 0
    resamples: int = DEFAULT_RESAMPLES
    workers: int = 1
    l_new: int | None = None
    steps: int | None = None

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise ValueError("instance ids must be unique")
        if self.schedule_mode is None:
            self.schedule_mode = DEFAULT_SCHEDULE_MODE.get(self.task.name, "preserve-density")
        if self.cost_model is None:
            if hasattr(self.oracle, "config") and hasattr(self.oracle, "num_parameters"):
                self.cost_model = CostModel.for_model(self.oracle)
            else:
                self.cost_model = CostModel(1, 0)
        if self.l_new is None:
            self.l_new = self.task.l_new
        if self.steps is None:
            self.steps = self.task.steps

    def sc_config(self, tau=None, forced_length=None) -> DecodeConfig:
        return DecodeConfig(SMARTCROP, tau=tau, schedule_mode=self.schedule_mode,
                            reuse_first_pass=self.reuse_first_pass, forced_length=forced_length)


@dataclass
class InstanceRecord:
    id: str
    method: str
    metric: float
    flops: float
    prompt_len: int
    canvas_len: int
    processed_length: int
    mean_pass_length: float
    generated_length: int
    steps_executed: int
    true_length: int | None = None
    tau: float | None = None
    predicted_length: int | None = None
    forced_length: int | None = None
    fallback: bool = False
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self) -> dict:
        return asdict(self)


def method_name(tau: float | None) -> str:
    return "FC" if tau is None else f"SC-{tau:g}"


def _parallel_map(fn, items, workers: int):
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def decode_instance(cfg: RunConfig, inst: Instance, dcfg: DecodeConfig, method: str) -> InstanceRecord:
    """Decode one instance and score it; decode failures become error records."""
    L_p = len(inst.prompt)
    L_c = L_p + cfg.l_new
    try:
        trace = decode(cfg.oracle, inst.prompt, cfg.l_new, cfg.steps, dcfg)
    except Exception as exc:  # recorded per instance; the run carries on
        logger.warning("decode failed for %s/%s: %s", inst.id, method, exc)
        return InstanceRecord(inst.id, method, math.nan, math.nan, L_p, L_c, 0, math.nan, 0, 0,
                              inst.true_length, dcfg.tau, None, dcfg.forced_length, False, str(exc))
    gen = trace.generated(cfg.oracle.vocab.eos_id)
    return InstanceRecord(
        id=inst.id,
        method=method,
        metric=cfg.task.score(gen, inst.reference),
        flops=trace_flops(trace, cfg.cost_model),
        prompt_len=L_p,
        canvas_len=L_c,
        processed_length=trace.final_length,
        mean_pass_length=float(np.mean(trace.processed_lengths)),
        generated_length=len(gen),
        steps_executed=trace.steps_executed,
        true_length=inst.true_length,
        tau=dcfg.tau,
        predicted_length=trace.predicted_length,
        forced_length=dcfg.forced_length,
        fallback=trace.fallback,
    )


def _paired(fc: dict, sc: dict) -> tuple[dict, dict]:
    ok = sorted(i for i in fc if i in sc and fc[i].ok and sc[i].ok)
    return {i: fc[i] for i in ok}, {i: sc[i] for i in ok}


def summarize(cfg: RunConfig, fc_records: list[InstanceRecord], sc_records: list[InstanceRecord],
              method: str, tau: float | None) -> dict:
    """One summary row in the shape of the main results table."""
    fc = {r.id: r for r in fc_records}
    sc = {r.id: r for r in sc_records}
    fc_ok, sc_ok = _paired(fc, sc)
    recs = list(sc_ok.values())
    row = {
        "benchmark": cfg.task.name,
        "method": method,
        "tau": tau,
        "n": len(recs),
        "n_failed": sum(not r.ok for r in sc_records),
        "L_p": float(np.mean([r.prompt_len for r in recs])) if recs else math.nan,
        "avg_processed_length": float(np.mean([r.processed_length for r in recs])) if recs else math.nan,
        "metric": float(np.mean([r.metric for r in recs])) if recs else math.nan,
        "flops_saved_pct": None,
        "flops_saved_ratio_of_totals_pct": None,
        "flops_p": None,
        "flops_stars": None,
        "perf_delta_pct": None,
        "metric_diff": None,
        "metric_ci_low": None,
        "metric_ci_high": None,
        "metric_p": None,
        "metric_stars": None,
        "n_fallback": sum(r.fallback for r in recs),
        "schedule_mode": None if tau is None else cfg.schedule_mode,
        "reuse_first_pass": None if tau is None else cfg.reuse_first_pass,
    }
    if tau is None or len(recs) < 2:
        return row
    ids = tuple(sorted(sc_ok))
    per_inst = [savings(fc_ok[i].flops, sc_ok[i].flops) for i in ids]
    row["flops_saved_pct"] = float(np.mean(per_inst))
    row["flops_saved_ratio_of_totals_pct"] = savings(
        sum(fc_ok[i].flops for i in ids), sum(sc_ok[i].flops for i in ids)
    )
    flops_test = paired_bootstrap(PairedSample(ids, np.zeros(len(ids)), per_inst),
                                  cfg.resamples, cfg.seed)
    row["flops_p"] = flops_test.p_value
    row["flops_stars"] = significance_stars(flops_test.p_value)
    fc_metric = float(np.mean([fc_ok[i].metric for i in ids]))
    if fc_metric != 0:
        row["perf_delta_pct"] = 100.0 * (row["metric"] - fc_metric) / fc_metric
    test = paired_bootstrap(
        PairedSample(ids, [fc_ok[i].metric for i in ids], [sc_ok[i].metric for i in ids]),
        cfg.resamples, cfg.seed,
    )
    row.update(metric_diff=test.mean_difference, metric_ci_low=test.ci_low,
               metric_ci_high=test.ci_high, metric_p=test.p_value,
               metric_stars=significance_stars(test.p_value))
    return row


@dataclass
class BenchmarkResult:
    records: list[InstanceRecord]
    summary: list[dict]
    metadata: dict = field(default_factory=dict)

    def by_method(self, method: str) -> list[InstanceRecord]:
        return [r for r in self.records if r.method == method]


def check_monotone(records: list[InstanceRecord], summary: list[dict], taus) -> None:
    """Raise :class:`InvariantError` unless L_hat and mean savings are monotone in tau."""
    taus = sorted(taus)
    by_id: dict[str, dict[float, int]] = {}
    for r in records:
        if r.tau is not None and r.ok and r.forced_length is None:
            by_id.setdefault(r.id, {})[r.tau] = r.predicted_length
    for id_, lens in by_id.items():
        seq = [lens[t] for t in taus if t in lens]
        if any(b < a for a, b in zip(seq, seq[1:])):
            raise InvariantError(f"L_hat decreases with tau for {id_}: {seq}")
    saved = {row["tau"]: row["flops_saved_pct"] for row in summary
             if row["tau"] is not None and row["flops_saved_pct"] is not None}
    seq = [saved[t] for t in taus if t in saved]
    if any(b > a for a, b in zip(seq, seq[1:])):
        raise InvariantError(f"mean FLOPs saved increases with tau: {seq}")


def run_benchmark(cfg: RunConfig) -> BenchmarkResult:
    """Decode every instance under FC and SC at each tau, then summarise."""
    fc = _parallel_map(
        lambda inst: decode_instance(cfg, inst, DecodeConfig(FULL_CONTEXT), "FC"),
        cfg.instances, cfg.workers,
    )
    records = list(fc)
    summary = [summarize(cfg, fc, fc, "FC", None)]
    for tau in cfg.taus:
        name = method_name(tau)
        sc = _parallel_map(
            lambda inst: decode_instance(cfg, inst, cfg.sc_config(tau=tau), name),
            cfg.instances, cfg.workers,
        )
        records.extend(sc)
        summary.append(summarize(cfg, fc, sc, name, tau))
    check_monotone(records, summary, cfg.taus)
    meta = {
        "task": cfg.task.name,
        "l_new": cfg.l_new,
        "steps": cfg.steps,
        "taus": list(cfg.taus),
        "schedule_mode": cfg.schedule_mode,
        "reuse_first_pass": cfg.reuse_first_pass,
        "cost_model": {"c1": cfg.cost_model.c1, "c2": cfg.cost_model.c2},
        "resamples": cfg.resamples,
        "seed": cfg.seed,
        "p_value_convention": P_VALUE_CONVENTION,
        "savings_aggregation": "mean of per-instance savings",
    }
    return BenchmarkResult(records, summary, meta)


# ---------------------------------------------------------------------------
# sensitivity sweep and shuffled control


def first_pass_lengths(oracle: LogitOracle, instances, l_new: int, tau: float) -> dict[str, int]:
    """Predicted total length per instance from a single full-canvas pass."""
    out = {}
    for inst in instances:
        canvas = init_canvas(inst.prompt, l_new, oracle.vocab.mask_id)
        out[inst.id] = predict_crop(oracle.logits(canvas), oracle.vocab, canvas.prompt_len, tau).predicted_length
    return out


@dataclass
class ControlResult:
    mean: float
    ci_low: float
    ci_high: float
    per_instance: dict[str, float]
    records: list[InstanceRecord]
    metadata: dict


def shuffled_control(cfg: RunConfig, donor_new_tokens, repetitions: int = 5, seed: int | None = None) -> ControlResult:
    """Decode with crop lengths drawn from a pooled donor distribution.

    ``donor_new_tokens`` holds predicted new-token counts (``L_hat - L_p``)
    from other tasks.  Each instance gets ``L_p + draw``, clamped to its
    canvas; the per-instance score is averaged over ``repetitions`` draws.
    """
    pool = np.asarray(list(donor_new_tokens), dtype=np.int64)
    if len(pool) == 0:
        raise ValueError("donor pool is empty")
    seed = cfg.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    draws = rng.choice(pool, size=(repetitions, len(cfg.instances)), replace=True)
    records = []
    for rep in range(repetitions):
        def run(pair):
            j, inst = pair
            L_p = len(inst.prompt)
            forced = int(min(max(L_p + int(draws[rep, j]), L_p + 1), L_p + cfg.l_new))
            return decode_instance(cfg, inst, cfg.sc_config(forced_length=forced), f"control-{rep}")
        records.extend(_parallel_map(run, list(enumerate(cfg.instances)), cfg.workers))
    per_inst: dict[str, list[float]] = {}
    for r in records:
        if r.ok:
            per_inst.setdefault(r.id, []).append(r.metric)
    scores = {i: float(np.mean(v)) for i, v in sorted(per_inst.items())}
    vals = list(scores.values())
    if len(vals) >= 2:
        m, lo, hi = mean_ci(vals, resamples=cfg.resamples, seed=seed)
    else:
        m = lo = hi = float(vals[0]) if vals else math.nan
    meta = {"repetitions": repetitions, "seed": seed, "pool_size": int(len(pool)),
            "draw": "one pooled draw per instance per repetition, scores averaged over repetitions"}
    return ControlResult(m, lo, hi, scores, records, meta)


@dataclass
class SweepResult:
    rows: list[dict]
    records: list[InstanceRecord]
    predicted: dict[str, int]


def sensitivity_sweep(cfg: RunConfig, deltas=DELTA_GRID, tau: float = 0.9,
                      control: ControlResult | None = None, fc_metric: float | None = None,
                      scale_generated_only: bool = False) -> SweepResult:
    """Re-decode each instance with its predicted length scaled by ``1 + delta``.

    The prediction is computed once per instance at ``tau`` and reused for
    every delta.  ``fc_metric`` and ``control`` only fill the reference
    columns of the output rows.
    """
    predicted = first_pass_lengths(cfg.oracle, cfg.instances, cfg.l_new, tau)
    records = []
    rows = []
    for delta in sorted(deltas):
        def run(inst, delta=delta):
            L_p = len(inst.prompt)
            forced = perturb_length(predicted[inst.id], delta, L_p, L_p + cfg.l_new,
                                    scale_generated_only=scale_generated_only)
            rec = decode_instance(cfg, inst, cfg.sc_config(tau=tau, forced_length=forced),
                                  f"delta{delta:+.1f}")
            return rec
        recs = _parallel_map(run, cfg.instances, cfg.workers)
        records.extend(recs)
        vals = [r.metric for r in recs if r.ok]
        if len(vals) >= 2:
            m, lo, hi = mean_ci(vals, resamples=cfg.resamples, seed=cfg.seed)
        else:
            m = lo = hi = float(vals[0]) if vals else math.nan
        rows.append({
            "delta": delta,
            "mean": m,
            "ci_low": lo,
            "ci_high": hi,
            "control_mean": None if control is None else control.mean,
            "fc_mean": fc_metric,
            "mean_crop_new_tokens": float(np.mean([r.forced_length - r.prompt_len for r in recs])),
            "n": len(vals),
        })
    return SweepResult(rows, records, predicted)


# ---------------------------------------------------------------------------
# invariance of predicted length across initial canvas sizes


@dataclass
class InvarianceResult:
    rows: list[dict]
    per_instance: list[dict]
    median_spread: float


QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def invariance_study(oracle: LogitOracle, instances, l_new_grid=L_NEW_GRID, tau: float = 0.9) -> InvarianceResult:
    """Predicted new tokens ``L_hat - L_p`` per instance for each initial ``L_new``.

    Values equal to ``L_new`` sit on the canvas edge and are flagged as
    right-truncated.  ``median_spread`` is ``(max - min) / max`` of the
    per-``L_new`` medians.
    """
    per_instance = []
    rows = []
    for l_new in l_new_grid:
        vals = []
        for inst in instances:
            canvas = init_canvas(inst.prompt, l_new, oracle.vocab.mask_id)
            dec = predict_crop(oracle.logits(canvas), oracle.vocab, canvas.prompt_len, tau)
            dl = dec.predicted_new_tokens
            vals.append(dl)
            per_instance.append({
                "id": inst.id, "L_new": l_new, "delta_L_hat": dl,
                "true_length": inst.true_length, "truncated": dl == l_new,
                "threshold_reached": dec.threshold_reached,
            })
        arr = np.asarray(vals, dtype=np.float64)
        row = {"L_new": l_new, "n": len(arr), "mean": float(arr.mean()),
               "min": float(arr.min()), "max": float(arr.max())}
        for q, v in zip(QUANTILES, np.quantile(arr, QUANTILES)):
            row[f"q{int(round(q * 100)):02d}"] = float(v)
        row["n_truncated"] = int((arr == l_new).sum())
        rows.append(row)
    medians = [r["q50"] for r in rows]
    spread = (max(medians) - min(medians)) / max(medians) if max(medians) > 0 else 0.0
    return InvarianceResult(rows, per_instance, float(spread))


# ---------------------------------------------------------------------------
# per-instance delta against generated length


def correlation_bins(fc_records, sc_records, bin_width: int) -> list[dict]:
    """Mean SC-minus-FC metric delta in fixed-width bins of SC generated length."""
    if bin_width < 1:
        raise ValueError("bin_width must be positive")
    fc = {r.id: r for r in fc_records}
    sc = {r.id: r for r in sc_records}
    fc_ok, sc_ok = _paired(fc, sc)
    bins: dict[int, list[float]] = {}
    for i in sorted(sc_ok):
        b = sc_ok[i].generated_length // bin_width
        bins.setdefault(b, []).append(sc_ok[i].metric - fc_ok[i].metric)
    return [
        {
            "bin_center": (b + 0.5) * bin_width,
            "mean_delta": float(np.mean(d)),
            "count": len(d),
            "low_confidence": len(d) < LOW_COUNT,
        }
        for b, d in sorted(bins.items())
    ]


# ---------------------------------------------------------------------------
# output


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return str(v)


def write_csv(rows, path, columns=None) -> None:
    rows = list(rows)
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    raise TypeError(f"not JSON serialisable: {type(o)}")


def write_jsonl(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            d = r.to_dict() if hasattr(r, "to_dict") else r
            d = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}
            fh.write(json.dumps(d, sort_keys=True, default=_json_default) + "\n")
