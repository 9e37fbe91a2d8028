"""Minimal numeric engine: layer-level autodiff, Adam and checkpoints."""

from magloc.numkit import kernels
from magloc.numkit.autodiff import Tape, TapeEntry, Tensor, backward
from magloc.numkit.checkpoint import config_digest, read_checkpoint, write_checkpoint
from magloc.numkit.kernels import mae_metric
from magloc.numkit.optim import AdamState, adam_step


def count_params(model) -> int:
    """Total number of scalar parameters (weights plus biases)."""
    params = model.parameters() if hasattr(model, "parameters") else model
    return int(sum(p.data.size for p in params))


def conv1d(x, w, b, dilation=1, padding="same"):
    """Untaped convolution on plain arrays."""
    return kernels.conv1d_forward(x, w, b, dilation, padding)[0]


__all__ = [
    "AdamState",
    "Tape",
    "TapeEntry",
    "Tensor",
    "adam_step",
    "backward",
    "config_digest",
    "conv1d",
    "count_params",
    "kernels",
    "mae_metric",
    "read_checkpoint",
    "write_checkpoint",
]
