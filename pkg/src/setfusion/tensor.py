"""Dense float64 tensors with tape-based reverse-mode differentiation.

The carrier for every numeric value in the library. Design points that the
rest of the package leans on:

* All storage is 64-bit, row-major. Desk-scale sizes make memory irrelevant
  and tight gradient tolerances possible.
* A ``Tape`` records operations only while active (``with Tape() as t:``)
  and only for results that depend on a tensor with ``requires_grad``.
  Without an active tape every op is a plain numpy computation, so
  evaluation paths carry no autodiff overhead.
* ``set_sum`` / ``set_max`` reduce over the leading axis in a canonical
  (value-sorted) accumulation order, which makes reductions over an
  unordered set bit-stable under reordering of the rows. ``reduce_sum``
  keeps numpy's layout-order accumulation and is the general-purpose op.
* ``matmul_rows`` computes each output row with an independent BLAS call:
  a row's bits then cannot depend on where it sits in the stack (plain
  gemm does not guarantee that).
* ``finite_diff_grad`` is the independent gradient oracle; it never touches
  the tape machinery.
"""

from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, NumericOverflowError, ShapeError

__all__ = [
    "Tensor",
    "Tape",
    "tensor_new",
    "matmul",
    "matmul_rows",
    "ew_binary",
    "map_unary",
    "exp",
    "sigmoid",
    "relu",
    "softmax_set",
    "reduce_sum",
    "set_sum",
    "set_max",
    "add_rowvec",
    "repeat_cols",
    "reshape",
    "take_row",
    "stack_rows",
    "bce_loss",
    "backward",
    "finite_diff_grad",
    "enable_fault",
    "clear_faults",
]

# Active fault modes, settable for negative-control tests only.
_FAULTS: set[str] = set()


def enable_fault(name: str) -> None:
    """Switch on a deliberate defect (negative control for self-tests)."""
    if name not in {"softmax_skew"}:
        raise ContractError(f"unknown fault mode: {name!r}")
    _FAULTS.add(name)


def clear_faults() -> None:
    _FAULTS.clear()


class Tensor:
    """Dense float64 array, optionally holding a gradient of the same size."""

    __slots__ = ("data", "grad", "requires_grad", "node_id", "tape")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id: int | None = None
        self.tape: "Tape | None" = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def values(self) -> np.ndarray:
        """Flat row-major view of the stored values."""
        return self.data.reshape(-1)

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={list(self.shape)}, requires_grad={self.requires_grad})"

    # Arithmetic sugar over the two elementwise ops. Scalars are allowed.
    def __add__(self, other):
        return ew_binary("add", self, _as_tensor(other))

    def __radd__(self, other):
        return ew_binary("add", _as_tensor(other), self)

    def __mul__(self, other):
        return ew_binary("mul", self, _as_tensor(other))

    def __rmul__(self, other):
        return ew_binary("mul", _as_tensor(other), self)

    def __sub__(self, other):
        return ew_binary("add", self, ew_binary("mul", _as_tensor(other), _const(-1.0)))

    def __rsub__(self, other):
        return ew_binary("add", _as_tensor(other), ew_binary("mul", self, _const(-1.0)))

    def __neg__(self):
        return ew_binary("mul", self, _const(-1.0))


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _const(v: float) -> Tensor:
    return Tensor(np.float64(v))


class Tape:
    """Ordered record of operations for one reverse pass.

    Entries are appended in execution order, so inputs always precede the
    op that consumes them; the reverse sweep visits each entry exactly once.
    A tape can be consumed by ``backward`` at most once.
    """

    _active: "Tape | None" = None

    def __init__(self):
        self.entries: list[tuple[int, tuple[int, ...], Callable]] = []
        self.tensors: list[Tensor] = []
        self._ids: dict[int, int] = {}
        self.consumed = False

    def __enter__(self) -> "Tape":
        if Tape._active is not None:
            raise ContractError("a tape is already active; nested tapes are not supported")
        Tape._active = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        Tape._active = None

    def node(self, t: Tensor) -> int:
        nid = self._ids.get(id(t))
        if nid is None:
            nid = len(self.tensors)
            self._ids[id(t)] = nid
            self.tensors.append(t)
            t.node_id = nid
            t.tape = self
        return nid

    def record(self, out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> None:
        in_ids = tuple(self.node(t) for t in inputs)
        out_id = self.node(out)
        self.entries.append((out_id, in_ids, backward_fn))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise ContractError("tape already consumed; rerun the forward pass before backward")
        if loss.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
        lid = self._ids.get(id(loss))
        if lid is None:
            raise ContractError("loss tensor was not recorded on this tape")
        self.consumed = True

        grads: list[np.ndarray | None] = [None] * len(self.tensors)
        grads[lid] = np.ones_like(loss.data)
        for out_id, in_ids, backward_fn in reversed(self.entries):
            g = grads[out_id]
            if g is None:
                continue
            for nid, piece in zip(in_ids, backward_fn(g)):
                if piece is None:
                    continue
                if grads[nid] is None:
                    grads[nid] = piece.copy()
                else:
                    grads[nid] += piece
        for t, g in zip(self.tensors, grads):
            if t.requires_grad and g is not None:
                t.grad = g.reshape(-1)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every recorded tensor that requires one."""
    if loss.tape is None:
        raise ContractError("loss does not lie on a tape")
    loss.tape.backward(loss)


def _tracked(*tensors: Tensor) -> bool:
    tape = Tape._active
    if tape is None:
        return False
    return any(t.requires_grad or id(t) in tape._ids for t in tensors)


def _record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    if _tracked(*inputs):
        Tape._active.record(out, inputs, backward_fn)
    return out


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericOverflowError(f"{op} produced a non-finite value")


def tensor_new(shape: Sequence[int], init: str = "zeros", *, value: float = 0.0,
               lo: float = 0.0, hi: float = 1.0, seed: int = 0,
               requires_grad: bool = False) -> Tensor:
    """Allocate a tensor of the given extents.

    ``init`` is one of ``zeros``, ``constant`` (uses ``value``) or
    ``uniform`` (uses ``lo``, ``hi``, ``seed``; deterministic per seed).
    """
    shape = tuple(int(s) for s in shape)
    if any(s < 1 for s in shape):
        raise ShapeError(f"extents must be >= 1, got {list(shape)}")
    if init == "zeros":
        data = np.zeros(shape)
    elif init == "constant":
        data = np.full(shape, float(value))
    elif init == "uniform":
        if not lo < hi:
            raise ContractError(f"uniform init needs lo < hi, got [{lo}, {hi})")
        data = np.random.default_rng(seed).uniform(lo, hi, size=shape)
    else:
        raise ContractError(f"unknown init {init!r}")
    return Tensor(data, requires_grad=requires_grad)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of a [M,K] by a [K,P] tensor."""
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul needs rank-2 operands, got {list(a.shape)} x {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents disagree: {list(a.shape)} x {list(b.shape)}")
    out = Tensor(a.data @ b.data)
    _check_finite(out.data, "matmul")

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record(out, (a, b), bwd)


def matmul_rows(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product whose output rows are computed one at a time.

    Each row of the result is then a pure function of the matching input
    row and ``b``, independent of how the rows are stacked; reordering the
    rows of ``a`` reorders the result bit-exactly.
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(f"matmul_rows needs rank-2 operands, got {list(a.shape)} x {list(b.shape)}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"inner extents disagree: {list(a.shape)} x {list(b.shape)}")
    rows = [a.data[i : i + 1] @ b.data for i in range(a.shape[0])]
    out = Tensor(np.vstack(rows))
    _check_finite(out.data, "matmul_rows")

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return _record(out, (a, b), bwd)


def ew_binary(op: str, a: Tensor, b: Tensor) -> Tensor:
    """Elementwise add or mul of same-shape tensors (or one scalar operand)."""
    if op not in ("add", "mul"):
        raise ContractError(f"unknown elementwise op {op!r}")
    a_scalar, b_scalar = a.size == 1, b.size == 1
    if a.shape != b.shape and not (a_scalar or b_scalar):
        raise ShapeError(f"shape mismatch for {op}: {list(a.shape)} vs {list(b.shape)}")
    if op == "add":
        out = Tensor(a.data + b.data)
    else:
        out = Tensor(a.data * b.data)
    _check_finite(out.data, op)

    def reduce_to(g, t, is_scalar):
        if is_scalar and g.shape != t.data.shape:
            return np.sum(g).reshape(t.data.shape)
        return g

    if op == "add":
        def bwd(g):
            return (reduce_to(g, a, a_scalar), reduce_to(g, b, b_scalar))
    else:
        def bwd(g):
            return (reduce_to(g * b.data, a, a_scalar), reduce_to(g * a.data, b, b_scalar))

    return _record(out, (a, b), bwd)


def map_unary(op: str, a: Tensor) -> Tensor:
    """Elementwise exp, sigmoid or relu."""
    x = a.data
    if op == "exp":
        with np.errstate(over="raise"):
            try:
                y = np.exp(x)
            except FloatingPointError:
                raise NumericOverflowError("exp overflow; stabilize inputs before exponentiating") from None
        def bwd(g, y=y):
            return (g * y,)
    elif op == "sigmoid":
        y = np.where(x >= 0, 1.0 / (1.0 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1.0 + np.exp(-np.abs(x))))
        def bwd(g, y=y):
            return (g * y * (1.0 - y),)
    elif op == "relu":
        y = np.maximum(x, 0.0)
        def bwd(g, x=x):
            return (g * (x > 0.0),)
    else:
        raise ContractError(f"unknown unary op {op!r}")
    out = Tensor(y)
    _check_finite(out.data, op)
    return _record(out, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    return map_unary("exp", a)


def sigmoid(a: Tensor) -> Tensor:
    return map_unary("sigmoid", a)


def relu(a: Tensor) -> Tensor:
    return map_unary("relu", a)


def _sorted_axis0_sum(arr: np.ndarray) -> np.ndarray:
    # Canonical accumulation order: summands sorted per slot before adding,
    # so the value of the sum cannot depend on the order of the rows.
    return np.sort(arr, axis=0).sum(axis=0)


def softmax_set(c: Tensor) -> Tensor:
    """Normalize an [N,D] stack over its set axis, independently per slot.

    Stabilized by per-slot max subtraction, which is exact at N=1 (the
    single score is exactly 1.0) and removes exp overflow for any input.
    """
    if c.data.ndim != 2:
        raise ShapeError(f"softmax_set needs an [N,D] tensor, got {list(c.shape)}")
    shifted = c.data - c.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    denom = _sorted_axis0_sum(e)
    s = e / denom
    if "softmax_skew" in _FAULTS:
        s = s * (1.0 + 0.1 * np.arange(s.shape[0], dtype=np.float64))[:, None]
    out = Tensor(s)
    _check_finite(out.data, "softmax_set")

    def bwd(g, s=s):
        return (s * (g - (g * s).sum(axis=0, keepdims=True)),)

    return _record(out, (c,), bwd)


def reduce_sum(a: Tensor, axis: int) -> Tensor:
    """Sum over one axis, removing it. Accumulation order is fixed by the
    row-major layout, so repeated runs are bit-identical."""
    if not 0 <= axis < a.data.ndim:
        raise ShapeError(f"axis {axis} out of range for rank {a.data.ndim}")
    out = Tensor(a.data.sum(axis=axis))
    _check_finite(out.data, "reduce_sum")

    def bwd(g):
        return (np.repeat(np.expand_dims(g, axis), a.shape[axis], axis=axis),)

    return _record(out, (a,), bwd)


def set_sum(a: Tensor) -> Tensor:
    """Sum over the leading (set) axis in canonical value order.

    Bit-stable under any reordering of the rows; use for reductions whose
    input is semantically an unordered set.
    """
    if a.data.ndim < 1:
        raise ShapeError("set_sum needs at least rank 1")
    out = Tensor(_sorted_axis0_sum(a.data))
    _check_finite(out.data, "set_sum")

    def bwd(g):
        return (np.broadcast_to(g, a.shape).copy(),)

    return _record(out, (a,), bwd)


def set_max(a: Tensor) -> Tensor:
    """Max over the leading (set) axis; subgradient routes to the first
    argmax row on ties."""
    if a.data.ndim < 1:
        raise ShapeError("set_max needs at least rank 1")
    out = Tensor(a.data.max(axis=0))
    _check_finite(out.data, "set_max")
    winners = a.data.argmax(axis=0)

    def bwd(g, winners=winners):
        full = np.zeros_like(a.data)
        np.put_along_axis(full, winners[None, ...], g[None, ...], axis=0)
        return (full,)

    return _record(out, (a,), bwd)


def add_rowvec(mat: Tensor, row: Tensor) -> Tensor:
    """Add a [1,F] row vector to every row of an [N,F] matrix."""
    if mat.data.ndim != 2 or row.data.ndim != 2 or row.shape[0] != 1:
        raise ShapeError(f"add_rowvec needs [N,F] + [1,F], got {list(mat.shape)} + {list(row.shape)}")
    if mat.shape[1] != row.shape[1]:
        raise ShapeError(f"width mismatch: {list(mat.shape)} + {list(row.shape)}")
    out = Tensor(mat.data + row.data)
    _check_finite(out.data, "add_rowvec")

    def bwd(g):
        return (g, g.sum(axis=0, keepdims=True))

    return _record(out, (mat, row), bwd)


def repeat_cols(a: Tensor, width: int) -> Tensor:
    """Broadcast an [N,1] column across ``width`` columns."""
    if a.data.ndim != 2 or a.shape[1] != 1:
        raise ShapeError(f"repeat_cols needs an [N,1] tensor, got {list(a.shape)}")
    out = Tensor(np.repeat(a.data, width, axis=1))

    def bwd(g):
        return (g.sum(axis=1, keepdims=True),)

    return _record(out, (a,), bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != a.size:
        raise ShapeError(f"cannot reshape {list(a.shape)} to {list(shape)}")
    out = Tensor(a.data.reshape(shape))

    def bwd(g):
        return (g.reshape(a.shape),)

    return _record(out, (a,), bwd)


def take_row(a: Tensor, i: int) -> Tensor:
    """Extract row ``i`` of an [N,F] matrix as a [1,F] tensor."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_row needs a rank-2 tensor, got {list(a.shape)}")
    if not 0 <= i < a.shape[0]:
        raise ShapeError(f"row {i} out of range for {list(a.shape)}")
    out = Tensor(a.data[i : i + 1].copy())

    def bwd(g):
        full = np.zeros_like(a.data)
        full[i] = g[0]
        return (full,)

    return _record(out, (a,), bwd)


def stack_rows(tensors: Iterable[Tensor]) -> Tensor:
    """Stack rank-1 or [1,F] tensors into an [N,F] matrix."""
    ts = list(tensors)
    if not ts:
        raise ContractError("stack_rows needs at least one tensor")
    rows = [t.data.reshape(1, -1) for t in ts]
    width = rows[0].shape[1]
    if any(r.shape[1] != width for r in rows):
        raise ShapeError("stack_rows needs equal row widths")
    out = Tensor(np.vstack(rows))

    def bwd(g):
        return tuple(g[i].reshape(ts[i].shape) for i in range(len(ts)))

    return _record(out, ts, bwd)


_BCE_EPS = 1e-7


def bce_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions clamped to [1e-7, 1-1e-7]."""
    if pred.shape != target.shape:
        raise ShapeError(f"shape mismatch: {list(pred.shape)} vs {list(target.shape)}")
    p = np.clip(pred.data, _BCE_EPS, 1.0 - _BCE_EPS)
    t = target.data
    per = -(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    out = Tensor(per.mean())
    _check_finite(out.data, "bce_loss")
    n = pred.size

    def bwd(g, p=p, t=t, n=n):
        inside = (pred.data > _BCE_EPS) & (pred.data < 1.0 - _BCE_EPS)
        dp = (p - t) / (p * (1.0 - p)) / n * inside
        return (float(g) * dp, None)

    return _record(out, (pred, target), bwd)


def finite_diff_grad(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-5) -> Tensor:
    """Central-difference gradient of a pure scalar function of ``x``.

    Independent of the tape machinery by construction: only forward
    evaluations of ``f`` at perturbed copies of ``x``.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    saved, Tape._active = Tape._active, None  # oracle never records
    try:
        flat = x.data.reshape(-1)
        grad = np.empty_like(flat)
        for i in range(flat.size):
            bumped = flat.copy()
            bumped[i] = flat[i] + eps
            hi = f(Tensor(bumped.reshape(x.shape))).item()
            bumped[i] = flat[i] - eps
            lo = f(Tensor(bumped.reshape(x.shape))).item()
            grad[i] = (hi - lo) / (2.0 * eps)
    finally:
        Tape._active = saved
    return Tensor(grad.reshape(x.shape))
