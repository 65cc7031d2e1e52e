"""Quantized-ANN to integrate-and-fire SNN conversion with a training-time noise adaptor."""

__version__ = "0.1.0"

from .converter import SnnNet, convert, load_snn, reset_state, save_snn  # noqa: E402
from .data import Dataset, gen_synthetic, load_idx  # noqa: E402
from .engine import SimConfig, SimResult, simulate, two_stage_offset, unevenness_demo  # noqa: E402
from .network import QuantNet  # noqa: E402
from .quant import QuantActLayer, expected_activation, make_rng, sample_noise  # noqa: E402
from .trainer import TrainConfig, cosine_lr, evaluate_ann, train  # noqa: E402
from .checkpoint import load_checkpoint, save_checkpoint  # noqa: E402

__all__ = [
    "Dataset", "QuantActLayer", "QuantNet", "SimConfig", "SimResult", "SnnNet", "TrainConfig",
    "convert", "cosine_lr", "evaluate_ann", "expected_activation", "gen_synthetic",
    "load_checkpoint", "load_idx", "load_snn", "make_rng", "reset_state", "sample_noise",
    "save_checkpoint", "save_snn", "simulate", "train", "two_stage_offset", "unevenness_demo",
]
