"""Tensors, the operation tape and reverse-mode differentiation.

Operations are recorded at layer granularity: one tape entry per
convolution, dense layer, activation, pooling or loss.  Only the arrays a
backward rule actually needs are kept on the tape.

    tape = Tape()
    h = tape.conv1d(x, w, b, dilation=2)
    loss = tape.mse_loss(tape.dense(tape.global_avg_pool(h), w2, b2), y)
    grads = backward(tape, loss, wrt=[w, b, w2, b2])
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from magloc.errors import ContractError
from magloc.numkit import kernels

_ids = itertools.count()


class Tensor:
    """A dense float32/float64 array with an identity on the tape."""

    __slots__ = ("data", "requires_grad", "name", "id")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self.id = next(_ids)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype})"


@dataclass
class TapeEntry:
    kind: str
    inputs: tuple[int, ...]
    output: int
    saved: dict[str, Any]
    # (grad_out, entry) -> one gradient (or None) per input
    rule: Callable[[np.ndarray, "TapeEntry"], Sequence[np.ndarray | None]]


def _needs(t: Tensor, tape: "Tape") -> bool:
    return t.requires_grad or t.id in tape._produced


@dataclass
class Tape:
    """Ordered record of the operations of one forward pass."""

    entries: list[TapeEntry] = field(default_factory=list)
    _produced: set[int] = field(default_factory=set)
    _leaves: dict[int, Tensor] = field(default_factory=dict)

    def _record(self, kind, inputs: Sequence[Tensor], out_data, saved, rule) -> Tensor:
        out = Tensor(out_data)
        if any(_needs(t, self) for t in inputs):
            for t in inputs:
                if t.requires_grad and t.id not in self._produced:
                    self._leaves[t.id] = t
            saved["needs"] = tuple(_needs(t, self) for t in inputs)
            self.entries.append(TapeEntry(kind, tuple(t.id for t in inputs), out.id, saved, rule))
            self._produced.add(out.id)
        return out

    def conv1d(self, x: Tensor, w: Tensor, b: Tensor, dilation: int = 1, padding: str = "same") -> Tensor:
        out, cols = kernels.conv1d_forward(x.data, w.data, b.data, dilation, padding)
        saved = {"cols": cols, "x_shape": x.shape, "w": w.data, "dilation": dilation, "padding": padding}
        return self._record("conv1d", (x, w, b), out, saved, _conv1d_rule)

    def relu(self, x: Tensor) -> Tensor:
        return self._record("relu", (x,), kernels.relu_forward(x.data), {"x": x.data}, _relu_rule)

    def dense(self, x: Tensor, w: Tensor, b: Tensor) -> Tensor:
        out = kernels.dense_forward(x.data, w.data, b.data)
        return self._record("dense", (x, w, b), out, {"x": x.data, "w": w.data}, _dense_rule)

    def global_avg_pool(self, x: Tensor) -> Tensor:
        out = kernels.global_avg_pool_forward(x.data)
        return self._record("global_avg_pool", (x,), out, {"x_shape": x.shape}, _pool_rule)

    def mse_loss(self, pred: Tensor, target: Tensor) -> Tensor:
        out = np.asarray(kernels.mse_forward(pred.data, target.data), dtype=pred.dtype)
        saved = {"pred": pred.data, "target": target.data}
        return self._record("mse_loss", (pred, target), out, saved, _mse_rule)


def _conv1d_rule(g, e):
    s = e.saved
    gx, gw, gb = kernels.conv1d_backward(
        g, s["cols"], s["x_shape"], s["w"], s["dilation"], s["padding"], need_input_grad=s["needs"][0]
    )
    return gx, gw, gb


def _relu_rule(g, e):
    return (kernels.relu_backward(g, e.saved["x"]),)


def _dense_rule(g, e):
    return kernels.dense_backward(g, e.saved["x"], e.saved["w"])


def _pool_rule(g, e):
    return (kernels.global_avg_pool_backward(g, e.saved["x_shape"]),)


def _mse_rule(g, e):
    s = e.saved
    gp = kernels.mse_backward(g, s["pred"], s["target"])
    return gp, -gp


def backward(tape: Tape, loss: Tensor, wrt: Sequence[Tensor] | None = None):
    """Reverse sweep over ``tape`` starting from the scalar ``loss``.

    With ``wrt`` given, returns a list of gradients aligned with it
    (zeros for tensors the loss does not depend on).  Otherwise returns a
    dict mapping every leaf tensor id that requires grad to its gradient.
    """
    if loss.data.size != 1 or loss.data.ndim != 0:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(entry.output, None)
        if g is None:
            continue
        for tid, need, gi in zip(entry.inputs, entry.saved["needs"], entry.rule(g, entry)):
            if not need or gi is None:
                continue
            if tid in grads:
                grads[tid] = grads[tid] + gi
            else:
                grads[tid] = gi
    if wrt is None:
        return {tid: grads.get(tid, np.zeros_like(t.data)) for tid, t in tape._leaves.items()}
    return [grads.get(t.id, np.zeros_like(t.data)) for t in wrt]
