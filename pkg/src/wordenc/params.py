"""Named parameter storage.

A ParameterStore maps tensor names to trainable Tensors.  Name order is
lexicographic everywhere (iteration, checkpointing, counting) so that two
stores built from the same config and seed are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .autodiff import Tensor


class ParameterStore:
    def __init__(self):
        self._tensors: dict[str, Tensor] = {}

    def add(self, name: str, data) -> Tensor:
        if name in self._tensors:
            raise ValueError(f"duplicate parameter name {name!r}")
        t = Tensor(np.asarray(data), requires_grad=True, name=name)
        self._tensors[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> list[str]:
        return sorted(self._tensors)

    def items(self):
        for name in self.names():
            yield name, self._tensors[name]

    def __iter__(self):
        return iter(self.names())

    def zero_grad(self):
        for t in self._tensors.values():
            t.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        """Gradients by name; missing grads are zero arrays."""
        return {
            name: (t.grad if t.grad is not None else np.zeros_like(t.data))
            for name, t in self.items()
        }

    def copy(self) -> "ParameterStore":
        """Deep copy of the data; the copy carries no gradients."""
        out = ParameterStore()
        for name, t in self.items():
            out.add(name, t.data.copy())
        return out

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore()
        for name, t in self.items():
            out.add(name, t.data.astype(dtype))
        return out

    def total_parameters(self) -> int:
        return sum(t.data.size for t in self._tensors.values())
