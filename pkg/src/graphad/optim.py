"""Trainable parameter store, Adam updates and a finite-difference checker.

Parameters are named float64 torch tensors; reverse-mode gradients come
from torch autograd over the model's forward math. Adam keeps its moment
buffers inside the store so updates are a pure function of (store, config).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

DTYPE = torch.float64


class NonfiniteGradientError(Exception):
    pass


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 5e-6
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.lr < 0:
            raise ValueError("lr must be >= 0")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("betas must be in [0, 1)")


class ParamStore:
    """Named float64 arrays with gradient slots and Adam moment buffers."""

    def __init__(self, arrays: dict[str, np.ndarray]):
        self.params: dict[str, torch.Tensor] = {}
        for name, arr in arrays.items():
            t = torch.as_tensor(np.asarray(arr), dtype=DTYPE).clone()
            t.requires_grad_(True)
            self.params[name] = t
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.step = 0
        # per-array update counts; bias correction stays exact when main
        # and auxiliary arrays are updated on alternating schedules
        self.t = {n: 0 for n in self.params}

    def __getitem__(self, name: str) -> torch.Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def names(self) -> list[str]:
        return list(self.params)

    def zero_grad(self, names: list[str] | None = None) -> None:
        for n in names if names is not None else self.params:
            if self.params[n].grad is not None:
                self.params[n].grad = None

    def clone(self) -> "ParamStore":
        out = ParamStore({n: p.detach().numpy() for n, p in self.params.items()})
        out.m = {n: t.clone() for n, t in self.m.items()}
        out.v = {n: t.clone() for n, t in self.v.items()}
        out.step = self.step
        out.t = dict(self.t)
        return out

    def numpy(self) -> dict[str, np.ndarray]:
        return {n: p.detach().numpy().copy() for n, p in self.params.items()}


def adam_step(params: ParamStore, config: AdamConfig, names: list[str] | None = None) -> ParamStore:
    """Bias-corrected Adam update, in place; returns the store.

    When `names` is given only those arrays are updated (used for the
    alternating auxiliary-net phase). Missing gradients count as zero.
    """
    targets = names if names is not None else params.names()
    params.step += 1
    b1, b2 = config.beta1, config.beta2
    with torch.no_grad():
        for n in targets:
            p = params.params[n]
            g = p.grad if p.grad is not None else torch.zeros_like(p)
            if not torch.isfinite(g).all():
                raise NonfiniteGradientError(f"nonfinite gradient in {n}")
            params.t[n] += 1
            t = params.t[n]
            params.m[n].mul_(b1).add_(g, alpha=1 - b1)
            params.v[n].mul_(b2).addcmul_(g, g, value=1 - b2)
            m_hat = params.m[n] / (1 - b1**t)
            v_hat = params.v[n] / (1 - b2**t)
            p.sub_(config.lr * m_hat / (v_hat.sqrt() + config.eps))
            if not torch.isfinite(p).all():
                raise NonfiniteGradientError(f"nonfinite parameter after update in {n}")
    return params


def grad_check(loss_fn, params: ParamStore, probes: int, h: float = 1e-4,
               seed: int = 0, names: list[str] | None = None) -> float:
    """Max relative error between autograd and central finite differences.

    loss_fn is a zero-argument callable returning a scalar tensor computed
    from `params`. Probed coordinates are drawn uniformly over all entries
    of the selected arrays.
    """
    targets = names if names is not None else params.names()
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = {
        n: (params[n].grad.detach().clone() if params[n].grad is not None
            else torch.zeros_like(params[n]))
        for n in targets
    }

    sizes = [params[n].numel() for n in targets]
    total = sum(sizes)
    rng = np.random.default_rng(seed)
    flat_ids = rng.choice(total, size=min(probes, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for fid in flat_ids:
        which = int(np.searchsorted(bounds, fid, side="right"))
        idx = int(fid - (bounds[which - 1] if which > 0 else 0))
        name = targets[which]
        flat = params[name].data.view(-1)
        orig = flat[idx].item()
        with torch.no_grad():
            flat[idx] = orig + h
        f_plus = float(loss_fn().detach())
        with torch.no_grad():
            flat[idx] = orig - h
        f_minus = float(loss_fn().detach())
        with torch.no_grad():
            flat[idx] = orig
        numeric = (f_plus - f_minus) / (2 * h)
        a = analytic[name].view(-1)[idx].item()
        rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
        worst = max(worst, rel)
    return worst
