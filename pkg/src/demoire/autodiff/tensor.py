"""Dense tensors and the explicit differentiation tape.

A :class:`Tensor` is an immutable wrapper around a contiguous row-major numpy
array.  Gradients are tracked only for tensors registered on a :class:`Tape`
with :meth:`Tape.watch`; every op whose inputs live on a tape records a node on
that same tape, so there is no process-wide graph.

Typical training step::

    with Tape() as tape:
        tape.watch(*params)
        loss = model(x).sum()
    grads = tape.gradient(loss, params)
"""

from __future__ import annotations

from typing import Callable, Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_DTYPE = np.float32
_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))


def _contiguous(arr: np.ndarray) -> np.ndarray:
    # np.ascontiguousarray would promote 0-d arrays to 1-d
    return arr if arr.flags.c_contiguous else arr.copy(order="C")


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible."""


class TapeError(RuntimeError):
    """Raised on misuse of a differentiation tape."""


class Tensor:
    """N-dimensional float array, optionally linked into a :class:`Tape`.

    ``dtype`` defaults to single precision.  Float64 numpy arrays keep their
    precision when no dtype is given, so gradient checks can run in double.
    """

    __slots__ = ("data", "tape", "handle")
    __array_priority__ = 100

    def __init__(self, data, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        if dtype is None:
            if isinstance(data, np.ndarray) and data.dtype in _FLOAT_DTYPES:
                dtype = data.dtype
            else:
                dtype = DEFAULT_DTYPE
        dtype = np.dtype(dtype)
        if dtype not in _FLOAT_DTYPES:
            raise TypeError(f"unsupported dtype {dtype}; use float32 or float64")
        self.data = _contiguous(np.array(data, dtype=dtype))
        self.tape: Tape | None = None
        self.handle: int | None = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = cls.__new__(cls)
        t.data = _contiguous(np.asarray(arr))
        t.tape = None
        t.handle = None
        return t

    # --- metadata -----------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def on_tape(self) -> bool:
        return self.tape is not None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._wrap(self.data)

    def astype(self, dtype) -> "Tensor":
        from . import ops

        return ops.cast(self, dtype)

    def __repr__(self) -> str:
        tag = f", tape_handle={self.handle}" if self.tape is not None else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag})"

    def __len__(self) -> int:
        return self.shape[0]

    # --- operator sugar -----------------------------------------------------
    def __add__(self, other):
        from . import ops

        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops

        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops

        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops

        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops

        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops

        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops

        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops

        return ops.div(other, self)

    def __neg__(self):
        from . import ops

        return ops.neg(self)

    def __pow__(self, exponent):
        from . import ops

        return ops.power(self, exponent)

    def __matmul__(self, other):
        from . import ops

        return ops.matmul(self, other)

    def __getitem__(self, index):
        from . import ops

        return ops.index(self, index)

    def sum(self, axis=None, keepdims=False):
        from . import ops

        return ops.sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        from . import ops

        return ops.mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        from . import ops

        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops

        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes or None)

    @property
    def T(self):
        return self.transpose()


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class _Node(NamedTuple):
    out: int
    inputs: tuple[int | None, ...]
    backward: BackwardFn


class Tape:
    """Ordered record of primitive ops for one differentiation pass.

    Nodes are appended in execution order, so the list is topologically
    sorted by construction.  A tape is single-owner; do not share it across
    threads.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._leaves: dict[int, Tensor] = {}
        self._leaf_ids: dict[int, int] = {}
        self._next = 0

    def __len__(self) -> int:
        return len(self._nodes)

    def __enter__(self) -> "Tape":
        return self

    def __exit__(self, *exc) -> None:
        self.release()

    def _new_handle(self) -> int:
        h = self._next
        self._next += 1
        return h

    def watch(self, *tensors) -> None:
        """Register leaf tensors whose gradients are wanted."""
        for t in _flatten(tensors):
            if t.tape is self:
                continue
            if t.tape is not None and t.handle not in t.tape._leaves:
                raise TapeError("cannot watch an intermediate value of another tape")
            t.tape = self
            t.handle = self._new_handle()
            self._leaves[t.handle] = t
            self._leaf_ids[id(t)] = t.handle

    def release(self) -> None:
        """Unlink watched leaves so later ops on them are not recorded here."""
        for t in self._leaves.values():
            if t.tape is self:
                t.tape = None
                t.handle = None

    def record(self, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
        out = Tensor._wrap(data)
        out.tape = self
        out.handle = self._new_handle()
        handles = tuple(t.handle if t.tape is self else None for t in inputs)
        self._nodes.append(_Node(out.handle, handles, backward))
        return out

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss) through the tape; returns gradients keyed by leaf handle."""
        if loss.tape is not self:
            raise TapeError("loss was not computed on this tape")
        if loss.size != 1:
            raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.handle: np.ones_like(loss.data)}
        for node in reversed(self._nodes):
            g = grads.get(node.out)
            if g is None:
                continue
            if node.out not in self._leaves:
                del grads[node.out]
            in_grads = node.backward(g)
            for h, ig in zip(node.inputs, in_grads):
                if h is None or ig is None:
                    continue
                prev = grads.get(h)
                grads[h] = ig if prev is None else prev + ig
        return {h: g for h, g in grads.items() if h in self._leaves}

    def gradient(self, loss: Tensor, sources: Iterable[Tensor]) -> list[np.ndarray]:
        """Gradients of ``loss`` for each source, zeros where unreachable."""
        sources = list(sources)
        handles = []
        for s in sources:
            h = self._leaf_ids.get(id(s))
            if h is None or self._leaves[h] is not s:
                raise TapeError("gradient source was not watched on this tape")
            handles.append(h)
        grads = self.backward(loss)
        out = []
        for s, h in zip(sources, handles):
            g = grads.get(h)
            out.append(np.zeros_like(s.data) if g is None else g.reshape(s.shape))
        return out


def _flatten(items) -> list[Tensor]:
    out = []
    for it in items:
        if isinstance(it, Tensor):
            out.append(it)
        else:
            out.extend(_flatten(it))
    return out


def common_tape(tensors: Sequence[Tensor]) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif t.tape is not tape:
            raise TapeError("operands belong to different tapes")
    return tape


def apply(inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op result, recording it when any input is taped."""
    tape = common_tape(inputs)
    if tape is None:
        return Tensor._wrap(data)
    return tape.record(inputs, data, backward)


def as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype or DEFAULT_DTYPE))
