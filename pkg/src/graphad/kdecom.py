"""KPI decomposition into stable/volatile components plus the CLUB bound.

Each component comes from its own two stacked fully-connected tanh layers
applied independently per day row. Mutual information between the input
and the volatile component is suppressed during training by minimizing a
contrastive log-ratio upper bound: a small auxiliary net models
q(volatile | input) as a diagonal Gaussian, and the bound is the mean
positive-pair log-likelihood minus the mean over all cross pairs.

The cross-pair term is computed in closed form (the Gaussian log-density
is quadratic in v, so the double sum reduces to batch moments of v),
which keeps the estimator O(B*D) instead of O(B^2*D).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch

from .optim import DTYPE, ParamStore

LOGVAR_MIN, LOGVAR_MAX = -8.0, 8.0
LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class DecomposedSeries:
    stable: np.ndarray   # [30][D]
    volatile: np.ndarray  # [30][D]


def decompose_core(x: torch.Tensor, params: ParamStore, branch: str) -> torch.Tensor:
    """tanh(tanh(x W1 + b1) W2 + b2) per day row; x is [..., D]."""
    w1 = params[f"decom.{branch}.w1"]
    if x.shape[-1] != w1.shape[0]:
        raise ValueError(f"input dim {x.shape[-1]} != decomposition dim {w1.shape[0]}")
    h = torch.tanh(x @ w1 + params[f"decom.{branch}.b1"])
    return torch.tanh(h @ params[f"decom.{branch}.w2"] + params[f"decom.{branch}.b2"])


def decompose(window: np.ndarray, params: ParamStore) -> DecomposedSeries:
    x = torch.as_tensor(np.asarray(window), dtype=DTYPE)
    with torch.no_grad():
        stable = decompose_core(x, params, "stable")
        volatile = decompose_core(x, params, "volatile")
    return DecomposedSeries(stable=stable.numpy(), volatile=volatile.numpy())


# ---------------------------------------------------------------------------
# CLUB auxiliary net: affine-sigmoid-affine mean and log-variance heads


def init_club_params(dim: int, hidden: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
    out = {}
    for head in ("mean", "logvar"):
        out[f"club.{head}.w1"] = rng.normal(0.0, 1.0 / np.sqrt(dim), size=(dim, hidden))
        out[f"club.{head}.b1"] = np.zeros(hidden)
        out[f"club.{head}.w2"] = rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, dim))
        out[f"club.{head}.b2"] = np.zeros(dim)
    return out


def club_mean_logvar(x: torch.Tensor, params: ParamStore) -> tuple[torch.Tensor, torch.Tensor]:
    hm = torch.sigmoid(x @ params["club.mean.w1"] + params["club.mean.b1"])
    mean = hm @ params["club.mean.w2"] + params["club.mean.b2"]
    hv = torch.sigmoid(x @ params["club.logvar.w1"] + params["club.logvar.b1"])
    logvar = hv @ params["club.logvar.w2"] + params["club.logvar.b2"]
    return mean, torch.clamp(logvar, LOGVAR_MIN, LOGVAR_MAX)


def _check_batch(x: torch.Tensor, v: torch.Tensor, min_b: int) -> int:
    if x.ndim != 2 or v.ndim != 2 or x.shape[0] != v.shape[0]:
        raise ValueError(f"expected aligned 2-d batches, got {tuple(x.shape)} / {tuple(v.shape)}")
    b = x.shape[0]
    if b < min_b:
        raise ValueError(f"batch size {b} < {min_b}")
    return b


def club_upper_bound(x_batch, v_batch, params: ParamStore) -> torch.Tensor:
    """(1/B) sum_i log q(v_i|x_i) - (1/B^2) sum_ij log q(v_j|x_i)."""
    x = torch.as_tensor(np.asarray(x_batch), dtype=DTYPE) if not isinstance(x_batch, torch.Tensor) else x_batch
    v = torch.as_tensor(np.asarray(v_batch), dtype=DTYPE) if not isinstance(v_batch, torch.Tensor) else v_batch
    b = _check_batch(x, v, 2)
    mean, logvar = club_mean_logvar(x, params)
    inv_var = torch.exp(-logvar)
    positive = (-0.5 * (v - mean) ** 2 * inv_var).sum(dim=1).mean()
    # cross term: mean over j of (v_j - mean_i)^2 = E[v^2] - 2 mean_i E[v] + mean_i^2
    v_mom1 = v.mean(dim=0)
    v_mom2 = (v**2).mean(dim=0)
    cross_sq = v_mom2 - 2.0 * mean * v_mom1 + mean**2
    negative = (-0.5 * cross_sq * inv_var).sum(dim=1).mean()
    # the -0.5*(log 2 pi + logvar) normalization is identical in both terms
    return positive - negative


def gaussian_log_likelihood(v: torch.Tensor, mean: torch.Tensor, logvar: torch.Tensor) -> torch.Tensor:
    return (-0.5 * (LOG_2PI + logvar) - 0.5 * (v - mean) ** 2 * torch.exp(-logvar)).sum(dim=1)


def club_aux_loss(x_batch, v_batch, params: ParamStore) -> torch.Tensor:
    """Negative mean log-likelihood of positive pairs; inputs are detached
    so gradients reach only the auxiliary net."""
    x = torch.as_tensor(np.asarray(x_batch), dtype=DTYPE) if not isinstance(x_batch, torch.Tensor) else x_batch
    v = torch.as_tensor(np.asarray(v_batch), dtype=DTYPE) if not isinstance(v_batch, torch.Tensor) else v_batch
    _check_batch(x, v, 1)
    x = x.detach()
    v = v.detach()
    mean, logvar = club_mean_logvar(x, params)
    return -gaussian_log_likelihood(v, mean, logvar).mean()
