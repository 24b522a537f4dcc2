from dataclasses import dataclass, field
from typing import Dict, Optional
import logging

import numpy as np

from utils.errors import NumericError

logger = logging.getLogger(__name__)


@dataclass
class AdamState:
    lr: float = 0.005
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def create(cls, params: Dict[str, np.ndarray], lr: float = 0.005, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> "AdamState":
        """Zero moments for every parameter in the registry."""
        return cls(
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
            m={name: np.zeros_like(p) for name, p in params.items()},
            v={name: np.zeros_like(p) for name, p in params.items()},
        )


def adam_step(state: AdamState, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
    """
    One bias-corrected Adam update, in place.

    Every parameter registered in ``state`` must be present in both
    ``params`` and ``grads``.
    """
    if set(params) != set(state.m) or set(grads) != set(state.m):
        skipped = sorted(set(state.m) - (set(params) & set(grads)))
        unknown = sorted((set(params) | set(grads)) - set(state.m))
        raise NumericError(f"adam_step: parameter registry mismatch, skipped {skipped}, unregistered {unknown}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise NumericError(f"adam_step: non-finite gradient for parameter '{name}'")

    state.t += 1
    correction1 = 1.0 - state.beta1 ** state.t
    correction2 = 1.0 - state.beta2 ** state.t
    for name, theta in params.items():
        g = grads[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        theta -= state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)


def clip_gradients(grads: Dict[str, np.ndarray], max_norm: Optional[float]) -> float:
    """Rescale all gradients in place so their global L2 norm is at most ``max_norm``; returns the norm before clipping."""
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if max_norm is not None and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for g in grads.values():
            g *= scale
        logger.debug(f"Clipped gradient norm {norm:.4f} to {max_norm}")
    return norm
