"""Dense tensors with reverse-mode autodiff on an explicit gradient tape.

The tape records operations in execution order and backward() replays them
in exact reverse order with one fixed accumulation order per op.  That fixed
order is load-bearing: it is what makes a training step running split across
two parties bitwise identical to the same step running in one process.

Values are float32 by default (the wire format is float32); float64 is used
only for finite-difference gradient checks.  Gradients always flow in the
dtype of the values they correspond to.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable

import numpy as np

from .errors import AutodiffError, ShapeError

F32 = np.float32
F64 = np.float64

# When enabled, every op asserts its output is finite.  Cheap at the scales
# this library targets; tests switch it on globally.
_debug_checks = os.environ.get("FEDSPLIT_DEBUG", "") not in ("", "0")


def set_debug_checks(enabled: bool) -> None:
    global _debug_checks
    _debug_checks = enabled


def debug_checks_enabled() -> bool:
    return _debug_checks


class Tensor:
    """A dense rank-<=3 real array, optionally tracked for gradients.

    requires_grad marks gradient *leaves* (parameters and injected cut-layer
    activations): backward() accumulates into their .grad buffer and leaves
    it in place until zero_grad().  Intermediate results get transient grad
    buffers inside backward() only.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None and isinstance(data, np.ndarray) and data.dtype in (F32, F64):
            arr = data
        else:
            arr = np.asarray(data, dtype=dtype if dtype is not None else F32)
        if arr.ndim > 3:
            raise ShapeError(f"rank-{arr.ndim} tensors are not supported")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


class Tape:
    """Ordered record of ops; backward visits nodes in reverse record order."""

    __slots__ = ("_nodes", "_outputs")

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable]] = []
        self._outputs: set[int] = set()

    def __len__(self) -> int:
        return len(self._nodes)

    def record(self, out: Tensor, backward_fn: Callable) -> Tensor:
        self._nodes.append((out, backward_fn))
        self._outputs.add(id(out))
        if _debug_checks and not np.all(np.isfinite(out.data)):
            raise AutodiffError("non-finite value produced by a forward op")
        return out

    def _send(self, t: Tensor, g: np.ndarray, flows: dict[int, np.ndarray]) -> None:
        """Route one gradient contribution to a leaf or an intermediate."""
        if t.requires_grad:
            if t.grad is None:
                t.grad = np.zeros_like(t.data)
            t.grad += g
        elif id(t) in self._outputs:
            buf = flows.get(id(t))
            if buf is None:
                # copy: an op may hand the same array to several inputs
                flows[id(t)] = g.copy()
            else:
                buf += g
        # constants (masks, frozen tables) drop their contribution

    def backward(self, root: Tensor, seed: np.ndarray | None = None) -> None:
        """Backpropagate from root; seed defaults to 1 for a scalar root.

        Passing an explicit seed is how a received dloss/dV_content gets
        injected at the cut layer: the tape then carries it through the
        local subgraph without ever materializing a Jacobian.
        """
        if id(root) not in self._outputs:
            raise AutodiffError("backward() root was not recorded on this tape")
        if seed is None:
            if root.data.shape != ():
                raise AutodiffError(
                    f"backward() without a seed needs a scalar, got shape {root.data.shape}"
                )
            seed = np.ones((), dtype=root.data.dtype)
        else:
            seed = np.asarray(seed, dtype=root.data.dtype)
            if seed.shape != root.data.shape:
                raise ShapeError(
                    f"seed gradient shape {seed.shape} != root shape {root.data.shape}"
                )
        flows: dict[int, np.ndarray] = {id(root): seed.copy()}
        for out, fn in reversed(self._nodes):
            g = flows.pop(id(out), None)
            if g is None:
                continue
            fn(g, flows)


def _require_2d(name: str, t: Tensor) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name} must be rank-2, got shape {t.data.shape}")


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def matmul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    _require_2d("matmul lhs", a)
    _require_2d("matmul rhs", b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul inner dims differ: {a.data.shape} x {b.data.shape}")
    out = Tensor(a.data @ b.data)

    def bwd(g, flows):
        tape._send(a, g @ b.data.T, flows)
        tape._send(b, a.data.T @ g, flows)

    return tape.record(out, bwd)


def concat(tape: Tape, parts: Iterable[Tensor], axis: int) -> Tensor:
    parts = list(parts)
    if not parts:
        raise ShapeError("concat of zero parts")
    base = list(parts[0].data.shape)
    for p in parts[1:]:
        s = list(p.data.shape)
        if len(s) != len(base) or any(
            s[i] != base[i] for i in range(len(base)) if i != axis
        ):
            raise ShapeError(
                f"concat extents incompatible along axis {axis}: "
                f"{[tuple(q.data.shape) for q in parts]}"
            )
    out = Tensor(np.concatenate([p.data for p in parts], axis=axis))
    offsets = np.cumsum([0] + [p.data.shape[axis] for p in parts])

    def bwd(g, flows):
        for i, p in enumerate(parts):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            tape._send(p, np.ascontiguousarray(g[tuple(sl)]), flows)

    return tape.record(out, bwd)


def add(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; the only broadcast allowed is a bias row (B,n)+(n,)."""
    bias_row = a.data.ndim == 2 and b.data.shape == (a.data.shape[1],)
    if not bias_row and a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data + b.data)

    def bwd(g, flows):
        tape._send(a, g, flows)
        tape._send(b, g.sum(axis=0) if bias_row else g, flows)

    return tape.record(out, bwd)


def mul(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(a.data * b.data)

    def bwd(g, flows):
        tape._send(a, g * b.data, flows)
        tape._send(b, g * a.data, flows)

    return tape.record(out, bwd)


def tanh(tape: Tape, a: Tensor) -> Tensor:
    out = Tensor(np.tanh(a.data))

    def bwd(g, flows):
        tape._send(a, g * (1.0 - out.data * out.data), flows)

    return tape.record(out, bwd)


def sigmoid(tape: Tape, a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):  # saturates to exact 0.0/1.0, by design
        out = Tensor(1.0 / (1.0 + np.exp(-a.data)))

    def bwd(g, flows):
        tape._send(a, g * out.data * (1.0 - out.data), flows)

    return tape.record(out, bwd)


def relu(tape: Tape, a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0))

    def bwd(g, flows):
        tape._send(a, g * (a.data > 0), flows)

    return tape.record(out, bwd)


def maximum(tape: Tape, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; gradient routes to the argmax only (ties -> first)."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"maximum shapes differ: {a.data.shape} vs {b.data.shape}")
    out = Tensor(np.maximum(a.data, b.data))

    def bwd(g, flows):
        take_a = a.data >= b.data
        tape._send(a, g * take_a, flows)
        tape._send(b, g * ~take_a, flows)

    return tape.record(out, bwd)


def slice_cols(tape: Tape, a: Tensor, lo: int, hi: int) -> Tensor:
    _require_2d("slice_cols input", a)
    if not (0 <= lo < hi <= a.data.shape[1]):
        raise ShapeError(f"column slice [{lo}:{hi}] out of range for {a.data.shape}")
    out = Tensor(a.data[:, lo:hi].copy())

    def bwd(g, flows):
        full = np.zeros_like(a.data)
        full[:, lo:hi] = g
        tape._send(a, full, flows)

    return tape.record(out, bwd)


def scale_rows(tape: Tape, m: Tensor, s: Tensor) -> Tensor:
    """Multiply each row of m (B,n) by the per-row scalar s (B,1)."""
    _require_2d("scale_rows input", m)
    if s.data.shape != (m.data.shape[0], 1):
        raise ShapeError(f"row scale must be ({m.data.shape[0]},1), got {s.data.shape}")
    out = Tensor(m.data * s.data)

    def bwd(g, flows):
        tape._send(m, g * s.data, flows)
        tape._send(s, (g * m.data).sum(axis=1, keepdims=True), flows)

    return tape.record(out, bwd)


def _stable_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def masked_softmax(tape: Tape, scores: Tensor, mask: np.ndarray | None) -> Tensor:
    """Row softmax; positions where mask==0 are pushed to -1e9 first.

    Masked positions end up with exactly zero weight (their exp underflows
    after the row-max shift), which is what keeps pooled outputs invariant
    to the amount of trailing padding.
    """
    _require_2d("softmax input", scores)
    z = scores.data
    if mask is not None:
        if mask.shape != z.shape:
            raise ShapeError(f"mask shape {mask.shape} != scores shape {z.shape}")
        z = z + (mask.astype(z.dtype) - 1.0) * z.dtype.type(1e9)
    out = Tensor(_stable_softmax(z))

    def bwd(g, flows):
        dot = (g * out.data).sum(axis=1, keepdims=True)
        tape._send(scores, out.data * (g - dot), flows)

    return tape.record(out, bwd)


def softmax_rows(tape: Tape, logits: Tensor) -> Tensor:
    return masked_softmax(tape, logits, None)


def softmax_cross_entropy(
    tape: Tape, logits: Tensor, labels: np.ndarray
) -> tuple[Tensor, Tensor]:
    """Mean cross-entropy over the batch; returns (loss, probs).

    probs is detached (predictions only); gradients flow through loss with
    backward (probs - onehot) / B.  Log-sum-exp keeps extreme logits finite.
    """
    _require_2d("logits", logits)
    n, k = logits.data.shape
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeError(f"labels shape {labels.shape} != ({n},)")
    if labels.min(initial=0) < 0 or labels.max(initial=0) >= k:
        raise ShapeError(f"label out of range for {k} classes: {labels}")
    z = logits.data
    zmax = z.max(axis=1, keepdims=True)
    shifted = z - zmax
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    logp = shifted - lse
    probs = Tensor(np.exp(logp))
    loss = Tensor(np.asarray(-logp[np.arange(n), labels].mean(), dtype=z.dtype))

    def bwd(g, flows):
        d = probs.data.copy()
        d[np.arange(n), labels] -= 1.0
        tape._send(logits, d * (g / z.dtype.type(n)), flows)

    tape.record(loss, bwd)
    return loss, probs


def sum_all(tape: Tape, a: Tensor) -> Tensor:
    out = Tensor(np.asarray(a.data.sum(), dtype=a.data.dtype))

    def bwd(g, flows):
        tape._send(a, np.full_like(a.data, g), flows)

    return tape.record(out, bwd)
