"""Length-aware canvas cropping for masked diffusion language models.

A single full-canvas pass yields per-position end-of-sequence
probabilities; their survival curve gives a predicted total length at a
confidence threshold ``tau``, and the canvas is cropped to that length
before the remaining denoising steps run.
"""

__version__ = "0.1.0"

from .canvas import Canvas, init_canvas
from .crop import (
    CropDecision,
    EosProbabilities,
    SurvivalCurve,
    crop_canvas,
    eos_probabilities,
    perturb_length,
    predict_crop,
    predicted_length,
    survival_curve,
)
from .decoder import (
    FULL_CONTEXT,
    PRESERVE_DENSITY,
    PRESERVE_STEPS,
    SMARTCROP,
    DecodeConfig,
    DecodeError,
    DecodeTrace,
    build_schedule,
    decode,
    rescaled_steps,
)
from .flops import CostModel, FlopsReport, savings, step_flops, trace_flops
from .model import DiffusionLM, LogitOracle, ModelConfig, ScriptedOracle, TrainingConfig, load_weights, save_weights, train
from .stats import BootstrapResult, PairedSample, paired_bootstrap, significance_stars
from .tasks import Instance, TaskSpec, get_preset
from .vocab import Vocabulary

__all__ = [
    "Canvas", "init_canvas",
    "CropDecision", "EosProbabilities", "SurvivalCurve", "crop_canvas", "eos_probabilities",
    "perturb_length", "predict_crop", "predicted_length", "survival_curve",
    "FULL_CONTEXT", "PRESERVE_DENSITY", "PRESERVE_STEPS", "SMARTCROP", "DecodeConfig", "DecodeError",
    "DecodeTrace", "build_schedule", "decode", "rescaled_steps",
    "CostModel", "FlopsReport", "savings", "step_flops", "trace_flops",
    "DiffusionLM", "LogitOracle", "ModelConfig", "ScriptedOracle", "TrainingConfig", "load_weights",
    "save_weights", "train",
    "BootstrapResult", "PairedSample", "paired_bootstrap", "significance_stars",
    "Instance", "TaskSpec", "get_preset", "Vocabulary",
]
