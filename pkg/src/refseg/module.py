"""Parameter-owning module base.

Modules register :class:`~refseg.tensor.Parameter` and child modules as plain
attributes; traversal follows attribute insertion order so parameter names
(and therefore checkpoints and optimizer state) are deterministic.
"""

from __future__ import annotations

from typing import Iterator

import numpy as np

from .tensor import Parameter

__all__ = ["Module", "ModuleList", "glorot", "normal_init"]


def glorot(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int, fan_out: int) -> np.ndarray:
    s = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)


def normal_init(rng: np.random.Generator, shape: tuple[int, ...], std: float = 0.02) -> np.ndarray:
    return rng.normal(0.0, std, size=shape)


class Module:
    """Base class; subclasses assign Parameters / sub-Modules as attributes."""

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for key, val in vars(self).items():
            if key.startswith("_"):     # private attrs are not part of the tree
                continue
            name = f"{prefix}{key}"
            if isinstance(val, Parameter):
                yield name, val
            elif isinstance(val, Module):
                yield from val.named_parameters(prefix=name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.zero_grad()

    def freeze(self) -> None:
        """Mark every parameter frozen (excluded from gradients and updates)."""
        for p in self.parameters():
            p.freeze()

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def parameter_census(self) -> dict[str, tuple[int, ...]]:
        """Name → shape for every parameter, in traversal order."""
        return {name: p.shape for name, p in self.named_parameters()}


class ModuleList(Module):
    """Sequence of sub-modules addressed as ``<name>.<index>``."""

    def __init__(self, mods: list[Module]):
        self._n = len(mods)
        for i, m in enumerate(mods):
            setattr(self, str(i), m)

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> Module:
        return getattr(self, str(i))

    def __iter__(self) -> Iterator[Module]:
        return (self[i] for i in range(self._n))
