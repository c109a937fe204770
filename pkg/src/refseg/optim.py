"""AdamW with decoupled weight decay and serializable state."""

from __future__ import annotations

import numpy as np

from .tensor import Parameter

__all__ = ["StateMismatch", "AdamW"]


class StateMismatch(ValueError):
    """Optimizer state does not line up with the parameter set."""


class AdamW:
    """Decoupled-weight-decay Adam over named parameters.

    Frozen parameters are excluded at construction; ``step`` applies the
    standard bias-corrected update ``p -= lr * (m̂/(√v̂+eps) + wd·p)`` and is
    fully deterministic.
    """

    def __init__(
        self,
        named_params: list[tuple[str, Parameter]],
        lr: float = 5e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        weight_decay: float = 1e-2,
    ):
        self.params = [(n, p) for n, p in named_params if not p.frozen]
        names = [n for n, _ in self.params]
        if len(set(names)) != len(names):
            raise StateMismatch(f"duplicate parameter names: {sorted(names)}")
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.zero_grad()

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for n, p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            m = self.m[n]
            v = self.v[n]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    # -- resume support ----------------------------------------------------

    def state_entries(self) -> list[tuple[str, np.ndarray, bool]]:
        """Flatten moment buffers for the checkpoint container."""
        out = []
        for n, _ in self.params:
            out.append((f"m.{n}", self.m[n], False))
            out.append((f"v.{n}", self.v[n], False))
        return out

    def state_meta(self) -> dict:
        return {"t": self.t}

    def load_state(self, entries: dict[str, np.ndarray], meta: dict) -> None:
        expect = {f"{kind}.{n}" for n, _ in self.params for kind in ("m", "v")}
        if set(entries) != expect:
            missing = sorted(expect - set(entries))
            extra = sorted(set(entries) - expect)
            raise StateMismatch(f"optimizer state keys differ; missing={missing} extra={extra}")
        for n, p in self.params:
            for kind, slot in (("m", self.m), ("v", self.v)):
                arr = entries[f"{kind}.{n}"]
                if arr.shape != p.data.shape:
                    raise StateMismatch(f"state {kind}.{n} shape {arr.shape} vs param {p.data.shape}")
                slot[n] = arr.astype(np.float64, copy=True)
        self.t = int(meta["t"])
