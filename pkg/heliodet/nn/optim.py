"""
SGD with momentum and L2 weight decay

    v <- momentum * v + g + weight_decay * w
    w <- w - lr * v
"""

from typing import Dict, Optional

import numpy as np

from heliodet.exceptions import ShapeError


def sgd_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    velocity: Dict[str, np.ndarray],
    lr: float,
    momentum: float = 0.0,
    weight_decay: float = 0.0
) -> Dict[str, np.ndarray]:
    """
    One in-place update of every parameter

    Args:
        params: Name -> parameter array (updated in place)
        grads: Name -> gradient array, same shapes as params
        velocity: Name -> momentum buffer (created on first use, updated in place)
        lr: Learning rate
        momentum: Momentum coefficient
        weight_decay: L2 coefficient added to the gradient

    Returns:
        The params dict
    """
    for name, w in params.items():
        g = grads[name]
        if g.shape != w.shape:
            raise ShapeError(name, f"gradient shape {g.shape} does not match parameter {w.shape}")
        v = velocity.get(name)
        if v is None:
            v = velocity[name] = np.zeros_like(w)
        v *= momentum
        v += g
        if weight_decay:
            v += weight_decay * w
        w -= lr * v
    return params


class SGD:
    """Momentum SGD bound to a network's parameters"""

    def __init__(self, network, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.network = network
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity: Dict[str, np.ndarray] = {}

    def step(self, lr: Optional[float] = None):
        sgd_step(
            dict(self.network.named_params()),
            dict(self.network.named_grads()),
            self.velocity,
            self.lr if lr is None else lr,
            self.momentum,
            self.weight_decay,
        )
