import contextvars
from dataclasses import dataclass
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from ..errors import NonFiniteError, UsageError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_active_tape: contextvars.ContextVar[Optional["ComputeTape"]] = contextvars.ContextVar(
    "cobra_active_tape", default=None
)


class Tensor:
    """Dense float64 array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single value, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad}{label})"

    def __add__(self, other):
        from .ops import add

        return add(self, as_tensor(other))

    __radd__ = __add__

    def __sub__(self, other):
        from .ops import sub

        return sub(self, as_tensor(other))

    def __mul__(self, other):
        from .ops import mul

        return mul(self, as_tensor(other))

    __rmul__ = __mul__

    def __neg__(self):
        from .ops import scale

        return scale(self, -1.0)

    def __matmul__(self, other):
        from .ops import matmul

        return matmul(self, other)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


@dataclass
class TapeEntry:
    output: Tensor
    inputs: Tuple[Tensor, ...]
    backward: BackwardFn


class ComputeTape:
    """Records differentiable operations while active.

    Use as a context manager; ops executed outside any active tape are not
    recorded, which is how inference runs.
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._token = None

    def __enter__(self) -> "ComputeTape":
        self._token = _active_tape.set(self)
        return self

    def __exit__(self, *exc) -> None:
        _active_tape.reset(self._token)
        self._token = None

    def __len__(self) -> int:
        return len(self.entries)

    def record(self, output: Tensor, inputs: Sequence[Tensor], backward: BackwardFn) -> None:
        self.entries.append(TapeEntry(output, tuple(inputs), backward))


def active_tape() -> Optional[ComputeTape]:
    return _active_tape.get()


def record_op(data: np.ndarray, inputs: Sequence[Tensor], backward: BackwardFn) -> Tensor:
    """Wrap an op result and record its backward rule on the active tape."""
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires_grad)
    if not np.all(np.isfinite(out.data)):
        raise NonFiniteError(f"non-finite values produced for output of shape {out.shape}")
    tape = _active_tape.get()
    if requires_grad and tape is not None:
        tape.record(out, inputs, backward)
    return out


def backward(loss: Tensor, tape: ComputeTape) -> None:
    """Populate grads of every requires_grad tensor reachable from `loss`.

    Leaf tensors accumulate across calls; tape outputs have their grad
    overwritten with the value from this pass.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")

    pending = {id(loss): np.ones_like(loss.data)}
    tensors = {id(loss): loss}
    produced = set()
    for entry in reversed(tape.entries):
        key = id(entry.output)
        produced.add(key)
        grad_out = pending.pop(key, None)
        if grad_out is None:
            continue
        entry.output.grad = grad_out
        for parent, grad in zip(entry.inputs, entry.backward(grad_out)):
            if grad is None or not parent.requires_grad:
                continue
            pkey = id(parent)
            tensors[pkey] = parent
            pending[pkey] = pending[pkey] + grad if pkey in pending else grad

    for key, grad in pending.items():
        leaf = tensors[key]
        if key in produced or not leaf.requires_grad:
            continue
        leaf.grad = grad.copy() if leaf.grad is None else leaf.grad + grad
