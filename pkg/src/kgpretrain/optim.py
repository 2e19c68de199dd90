"""AdamW with decoupled weight decay, operating on named parameter dicts."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import Tensor
from .errors import NumericError, ShapeError


@dataclass
class AdamWState:
    """Per-parameter first/second moments plus the shared step counter."""

    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def ensure(self, name: str, param: Tensor) -> None:
        if name not in self.m:
            self.m[name] = np.zeros_like(param.data)
            self.v[name] = np.zeros_like(param.data)


def adamw_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamWState,
    on_nonfinite: str = "abort",
) -> None:
    """One decoupled-weight-decay update, in place.

    theta <- theta - lr * (mhat / (sqrt(vhat) + eps) + wd * theta).
    Parameters without a grad entry are treated as zero-gradient (decay
    still applies). Non-finite gradients either abort or skip the whole
    step, per ``on_nonfinite``.
    """
    if on_nonfinite not in ("abort", "skip"):
        raise ValueError(f"on_nonfinite must be 'abort' or 'skip', got {on_nonfinite!r}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if g.shape != params[name].data.shape:
            raise ShapeError(f"grad shape {g.shape} vs param {params[name].data.shape} for {name!r}")
        if not np.all(np.isfinite(g)):
            if on_nonfinite == "abort":
                raise NumericError(f"non-finite gradient for parameter {name!r}")
            return

    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        state.ensure(name, p)
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / bc1
        vhat = v / bc2
        p.data -= (state.lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * p.data)).astype(
            p.data.dtype
        )
