"""Flat ``key = value`` run configuration.

Blank lines and ``#`` comments are ignored.  Every key is declared in
:data:`KEYS` with its type and default; unknown keys are an error.  Values
are never taken from the environment.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .experiments import DELTA_GRID, TAU_GRID


class ConfigError(ValueError):
    pass


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {s!r}")


def _floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def _names(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _opt_int(s: str):
    return None if s.strip() in ("", "none", "auto") else int(s)


def _opt_float(s: str):
    return None if s.strip() in ("", "none", "auto") else float(s)


def _opt_str(s: str):
    return None if s.strip() in ("", "none", "auto") else s.strip()


# key -> (parser, default as text, description)
KEYS: dict[str, tuple] = {
    "seed": (int, "0", "seed for training corpus, initialisation and training"),
    "output_dir": (str, "runs/default", "every output of the subcommand goes here"),
    "weights": (_opt_str, "none", "weight file read by decode/eval/sweep/control/invariance"),
    "vocab_size": (int, "64", "vocabulary size"),
    "d_model": (int, "64", "model width"),
    "n_layers": (int, "2", "transformer blocks"),
    "n_heads": (int, "4", "attention heads"),
    "max_positions": (int, "512", "position-embedding table size"),
    "train_tasks": (_names, "copyk-long", "comma list of presets mixed into the training corpus"),
    "train_examples": (int, "2000", "training examples per task"),
    "train_l_new": (_opt_int, "auto", "generation slots on the training canvas (auto: largest preset L_new)"),
    "epochs": (int, "20", "training epochs"),
    "batch_size": (int, "16", "training batch size"),
    "learning_rate": (float, "0.003", "peak Adam learning rate"),
    "warmup_steps": (int, "100", "linear warmup steps"),
    "length_jitter": (_bool, "true", "draw the training canvas size per batch"),
    "tight_fraction": (float, "0.25", "share of batches trained on near-tight canvases"),
    "tight_slack": (int, "8", "max spare slots on a near-tight canvas"),
    "task": (str, "copyk-long", "evaluation preset"),
    "eval_examples": (int, "100", "evaluation instances"),
    "eval_seed": (int, "1", "seed for the evaluation instances"),
    "l_new": (_opt_int, "auto", "canvas slots (auto: preset)"),
    "steps": (_opt_int, "auto", "denoising steps T (auto: preset)"),
    "taus": (_floats, ",".join(map(str, TAU_GRID)), "SmartCrop thresholds"),
    "schedule_mode": (_opt_str, "auto", "preserve-density | preserve-steps (auto: preset default)"),
    "reuse_first_pass": (_bool, "true", "use the cropping pass as denoising step 1"),
    "cost_preset": (str, "model", "model | llada-8b"),
    "cost_c1": (_opt_float, "auto", "linear FLOPs coefficient override"),
    "cost_c2": (_opt_float, "auto", "quadratic FLOPs coefficient override"),
    "resamples": (int, "5000", "bootstrap resamples"),
    "workers": (int, "1", "decode worker threads"),
    "sweep_tau": (float, "0.9", "threshold whose prediction the sweep perturbs"),
    "deltas": (_floats, ",".join(map(str, DELTA_GRID)), "perturbation grid"),
    "scale_generated_only": (_bool, "false", "perturb L_hat - L_p instead of L_hat"),
    "donor_tasks": (_names, "arith,verbose-qa", "presets pooled for the shuffled control"),
    "donor_examples": (int, "100", "instances per donor preset"),
    "control_repetitions": (int, "5", "control draws per instance"),
    "l_new_grid": (_ints, "32,64,128,256", "initial canvas sizes for the invariance study"),
    "invariance_tau": (float, "0.9", "threshold for the invariance study"),
    "bins_tau": (float, "0.99", "SC operating point for delta-vs-length bins"),
    "bin_width": (int, "5", "generated-length bin width"),
}


@dataclass
class Config:
    values: dict
    source: str

    def __getattr__(self, name):
        try:
            return self.__dict__["values"][name]
        except KeyError:
            raise AttributeError(name) from None

    def snapshot(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}


def parse_config(text: str, source: str = "<string>") -> Config:
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in KEYS:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        raw[key] = value
    return _resolve(raw, source)


def _resolve(raw: dict, source: str) -> Config:
    values = {}
    for key, (parser, default, _) in KEYS.items():
        text = raw.get(key, default)
        try:
            # manifest snapshots carry already-typed values
            values[key] = parser(text) if isinstance(text, str) else text
        except (ValueError, ConfigError) as exc:
            raise ConfigError(f"{source}: bad value for {key!r}: {exc}") from None
    return Config(values, source)


def load_config(path) -> Config:
    """Read a key-value config, or the config snapshot inside a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        try:
            snap = json.loads(text)["config"]
        except (ValueError, KeyError, TypeError):
            raise ConfigError(f"{path}: not a run manifest") from None
        unknown = set(snap) - set(KEYS)
        if unknown:
            raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
        raw = {k: (tuple(v) if isinstance(v, list) else v) for k, v in snap.items()}
        raw = {k: ("none" if v is None else v) for k, v in raw.items()}
        return _resolve(raw, str(path))
    return parse_config(text, str(path))


def render_defaults() -> str:
    lines = []
    for key, (_, default, desc) in KEYS.items():
        lines.append(f"# {desc}")
        lines.append(f"{key} = {default}")
    return "\n".join(lines) + "\n"
