"""MagNetS / MagNetXL: seven dilated convolutions, global pooling, FC-64, FC-2.

Every convolution keeps the sequence length (zero "same" padding by
default) and is followed by a ReLU.  The pooled features go through a
64-unit ReLU layer and a linear 2-unit layer that regresses (x, y).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from magloc.errors import CheckpointError, ConfigError, ShapeError
from magloc.features import CHANNELS, ChannelStats
from magloc.numkit import Tape, Tensor, backward, count_params, kernels
from magloc.numkit.checkpoint import config_digest, read_checkpoint, write_checkpoint

DILATIONS = (1, 2, 4, 8, 16, 32, 64)
KERNELS = (5, 8, 10, 12, 15, 18, 20)
CHANNEL_SCHEDULES = {
    "S": (32, 32, 32, 32, 64, 64, 128),
    "XL": (32, 32, 64, 64, 128, 128, 256),
}
BUDGETS = {"S": (288_000, 432_000), "XL": (750_000, 1_250_000)}


@dataclass(frozen=True)
class MagNetConfig:
    variant: str = "S"
    in_channels: int = 3
    kernels: tuple[int, ...] = KERNELS
    dilations: tuple[int, ...] = DILATIONS
    channels: tuple[int, ...] = CHANNEL_SCHEDULES["S"]
    hidden: int = 64
    outputs: int = 2
    padding: str = "same"

    def __post_init__(self):
        for name in ("kernels", "dilations", "channels"):
            object.__setattr__(self, name, tuple(int(v) for v in getattr(self, name)))

    @classmethod
    def default(cls, variant: str = "S", in_channels: int = 3) -> "MagNetConfig":
        if variant not in CHANNEL_SCHEDULES:
            raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(CHANNEL_SCHEDULES)}")
        return cls(variant=variant, in_channels=in_channels, channels=CHANNEL_SCHEDULES[variant])

    @classmethod
    def for_mode(cls, mode: str, variant: str = "S") -> "MagNetConfig":
        return cls.default(variant, len(CHANNELS[mode]))

    @property
    def layers(self) -> int:
        return len(self.kernels)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("kernels", "dilations", "channels"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MagNetConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def violations(self) -> list[str]:
        """Every broken structural constraint (empty when the config is valid)."""
        out = []
        if self.variant not in CHANNEL_SCHEDULES:
            out.append(f"variant must be one of {sorted(CHANNEL_SCHEDULES)}, got {self.variant!r}")
        if self.layers != 7:
            out.append(f"layer count must be 7, got {self.layers}")
        if not (len(self.kernels) == len(self.dilations) == len(self.channels)):
            out.append("kernels, dilations and channels must have one entry per layer")
        if self.dilations != DILATIONS[: len(self.dilations)] or len(self.dilations) != 7:
            out.append(f"dilations must be exactly {DILATIONS}")
        if any(b < a for a, b in zip(self.kernels, self.kernels[1:])):
            out.append("kernel sizes must be non-decreasing")
        if any(not 5 <= k <= 20 for k in self.kernels):
            out.append("kernel sizes must lie in [5, 20]")
        if any(b < a for a, b in zip(self.channels, self.channels[1:])):
            out.append("channel counts must be non-decreasing")
        final = {"S": 128, "XL": 256}.get(self.variant)
        if final is not None and self.channels and self.channels[-1] != final:
            out.append(f"{self.variant} must end with {final} channels, got {self.channels[-1]}")
        if self.in_channels not in (2, 3):
            out.append(f"input channels must be 2 or 3, got {self.in_channels}")
        if self.hidden != 64 or self.outputs != 2:
            out.append("head must be dense 64 followed by dense 2")
        if self.padding not in kernels.PADDING_MODES:
            out.append(f"padding must be one of {kernels.PADDING_MODES}")
        return out


def closed_form_param_count(config: MagNetConfig) -> int:
    total, c_prev = 0, config.in_channels
    for k, c in zip(config.kernels, config.channels):
        total += k * c_prev * c + c
        c_prev = c
    return total + c_prev * config.hidden + config.hidden + config.hidden * config.outputs + config.outputs


def receptive_field(config: MagNetConfig) -> int:
    """``1 + sum_i d_i (k_i - 1)``; equals ``1 + (k - 1)(2^n - 1)`` for constant k."""
    return 1 + sum(d * (k - 1) for k, d in zip(config.kernels, config.dilations))


@dataclass
class Model:
    config: MagNetConfig
    conv: list[tuple[Tensor, Tensor]]
    head: list[tuple[Tensor, Tensor]]
    stats: ChannelStats | None = None
    mode: str | None = None
    # predictions in meters = raw output * target_scale + target_offset
    target_offset: tuple[float, float] = (0.0, 0.0)
    target_scale: float = 1.0
    meta: dict = field(default_factory=dict)

    def named_parameters(self) -> list[tuple[str, Tensor]]:
        out = []
        for i, (w, b) in enumerate(self.conv):
            out += [(f"conv{i}.weight", w), (f"conv{i}.bias", b)]
        for i, (w, b) in enumerate(self.head):
            out += [(f"dense{i}.weight", w), (f"dense{i}.bias", b)]
        return out

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    @property
    def dtype(self):
        return self.conv[0][0].dtype

    def copy(self) -> "Model":
        def dup(pairs):
            return [(Tensor(w.data.copy(), True, w.name), Tensor(b.data.copy(), True, b.name)) for w, b in pairs]

        return replace(self, conv=dup(self.conv), head=dup(self.head), meta=dict(self.meta))

    def load_state(self, arrays: list[np.ndarray]) -> None:
        params = self.parameters()
        if len(arrays) != len(params):
            raise ShapeError(f"expected {len(params)} parameter arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != a.shape:
                raise ShapeError(f"parameter {p.name} has shape {p.shape}, got {a.shape}")
            p.data = np.array(a, dtype=p.dtype)

    def state(self) -> list[np.ndarray]:
        return [p.data.copy() for p in self.parameters()]

    def predict(self, windows, batch_size: int = 256) -> np.ndarray:
        """Positions (N, 2) in meters for raw (unstandardized) windows (N, C, W)."""
        x = np.asarray(windows)
        single = x.ndim == 2
        if single:
            x = x[None]
        if self.stats is not None:
            x = self.stats.apply(x)
        out = np.concatenate([forward(self, x[i : i + batch_size]) for i in range(0, len(x), batch_size)]) if len(x) else np.zeros((0, 2))
        return out[0] if single else out


def build(config: MagNetConfig, seed: int = 0, dtype=np.float32, validate: bool = True) -> Model:
    """He-uniform weights, zero biases, deterministic in ``seed``."""
    if validate:
        problems = config.violations()
        if problems:
            raise ConfigError("invalid MagNet config: " + "; ".join(problems))
    rng = np.random.default_rng(seed)

    def he(shape, fan_in, name):
        bound = np.sqrt(6.0 / fan_in)
        return Tensor(rng.uniform(-bound, bound, size=shape).astype(dtype), True, name)

    conv, c_prev = [], config.in_channels
    for i, (k, c) in enumerate(zip(config.kernels, config.channels)):
        conv.append((he((c, c_prev, k), c_prev * k, f"conv{i}.weight"), Tensor(np.zeros(c, dtype), True, f"conv{i}.bias")))
        c_prev = c
    head = [
        (he((config.hidden, c_prev), c_prev, "dense0.weight"), Tensor(np.zeros(config.hidden, dtype), True, "dense0.bias")),
        (he((config.outputs, config.hidden), config.hidden, "dense1.weight"), Tensor(np.zeros(config.outputs, dtype), True, "dense1.bias")),
    ]
    model = Model(config, conv, head)
    if validate:
        validate_budget(config, model)
    return model


def validate_budget(config: MagNetConfig, model: Model | None = None) -> int:
    """Parameter count of the config; raises if it falls outside the variant's band."""
    count = count_params(model) if model is not None else closed_form_param_count(config)
    lo, hi = BUDGETS.get(config.variant, (0, float("inf")))
    if not lo <= count <= hi:
        raise ConfigError(f"{config.variant} parameter count {count} outside budget band [{lo}, {hi}]")
    return count


def _check_input(model: Model, x: np.ndarray) -> np.ndarray:
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[1] != model.config.in_channels:
        raise ShapeError(f"model expects (N, {model.config.in_channels}, L) windows, got {x.shape}")
    return x


def _channel_major(x: np.ndarray, dtype) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(1, 0, 2), dtype=dtype)


def forward(model: Model, windows) -> np.ndarray:
    """Positions in meters for standardized windows: (C, W) -> (2,), (N, C, W) -> (N, 2)."""
    x_in = np.asarray(windows)
    single = x_in.ndim == 2
    h = _channel_major(_check_input(model, x_in), model.dtype)
    cfg = model.config
    for (w, b), d in zip(model.conv, cfg.dilations):
        h = kernels.relu_forward(kernels.conv1d_forward(h, w.data, b.data, d, cfg.padding)[0])
    h = kernels.global_avg_pool_forward(h)
    (w1, b1), (w2, b2) = model.head
    h = kernels.relu_forward(kernels.dense_forward(h, w1.data, b1.data))
    out = kernels.dense_forward(h, w2.data, b2.data).T
    out = out * model.target_scale + np.asarray(model.target_offset)
    return out[0] if single else out


def forward_tape(model: Model, tape: Tape, x: Tensor) -> Tensor:
    """Taped forward on channel-major input (C, N, L); returns raw outputs (2, N)."""
    h = x
    for (w, b), d in zip(model.conv, model.config.dilations):
        h = tape.relu(tape.conv1d(h, w, b, d, model.config.padding))
    h = tape.global_avg_pool(h)
    (w1, b1), (w2, b2) = model.head
    h = tape.relu(tape.dense(h, w1, b1))
    return tape.dense(h, w2, b2)


def loss_and_grads(model: Model, x: np.ndarray, y_scaled: np.ndarray) -> tuple[float, list[np.ndarray]]:
    """MSE on scaled targets for a batch of standardized windows (N, C, W)."""
    tape = Tape()
    xt = Tensor(_channel_major(_check_input(model, x), model.dtype))
    pred = forward_tape(model, tape, xt)
    loss = tape.mse_loss(pred, Tensor(np.ascontiguousarray(y_scaled.T, dtype=model.dtype)))
    grads = backward(tape, loss, wrt=model.parameters())
    return float(loss.data), grads


def save_model(model: Model, path, training: dict | None = None) -> None:
    meta = {
        "format": "magloc-model",
        "config": model.config.to_dict(),
        "mode": model.mode,
        "stats": model.stats.to_dict() if model.stats else None,
        "target": {"offset": list(model.target_offset), "scale": model.target_scale},
        "training": training if training is not None else model.meta.get("training", {}),
    }
    write_checkpoint(path, [(n, p.data) for n, p in model.named_parameters()], meta)


def load_model(path, expected: MagNetConfig | None = None) -> Model:
    meta, blobs = read_checkpoint(path, expected.digest() if expected else None)
    if meta.get("format") != "magloc-model":
        raise CheckpointError(f"{path}: not a MagNet checkpoint")
    config = MagNetConfig.from_dict(meta["config"])
    model = build(config, seed=0, validate=False)
    names = [n for n, _ in model.named_parameters()]
    if names != [n for n, _ in blobs]:
        raise CheckpointError(f"{path}: parameter names do not match the config")
    model.load_state([a for _, a in blobs])
    model.mode = meta.get("mode")
    model.stats = ChannelStats.from_dict(meta["stats"]) if meta.get("stats") else None
    model.target_offset = tuple(meta["target"]["offset"])
    model.target_scale = meta["target"]["scale"]
    model.meta = {"training": meta.get("training", {})}
    return model


def shape_table(config: MagNetConfig, length: int = 200) -> list[tuple[str, tuple[int, ...], tuple[int, ...]]]:
    """(layer, weight shape, output shape) rows for a single window."""
    rows, c_prev = [], config.in_channels
    for i, (k, c) in enumerate(zip(config.kernels, config.channels)):
        rows.append((f"conv{i}", (c, c_prev, k), (c, length)))
        c_prev = c
    rows.append(("pool", (), (c_prev,)))
    rows.append(("dense0", (config.hidden, c_prev), (config.hidden,)))
    rows.append(("dense1", (config.outputs, config.hidden), (config.outputs,)))
    return rows


def load_config(path) -> MagNetConfig:
    return MagNetConfig.from_dict(json.loads(Path(path).read_text()))
