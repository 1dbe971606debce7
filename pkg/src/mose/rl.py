"""Actor-critic pieces that point the enhancer at a quality metric.

The enhancer acting at step t emits a noise prediction; executing it moves
the trajectory to x_{t-1}.  The reward is the metric improvement of that
move measured against the clean signal, so summed over a full walk the
rewards telescope to final-minus-initial quality.  The scorer (critic)
learns discounted future improvement; the actor term pushes the enhancer
toward actions the scorer ranks higher, with gradients flowing only
through the action input.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .metric import MetricSpec
from .signals import LatentState


def reward(prev: LatentState, cur: LatentState, x0: np.ndarray,
           metric: MetricSpec) -> float:
    """Metric improvement of the move cur -> prev (one reverse step)."""
    if prev.t != cur.t - 1:
        raise ValueError(f"states are not adjacent: {prev.t} vs {cur.t}")
    x0 = np.asarray(x0)
    return metric.evaluate(prev.x, x0) - metric.evaluate(cur.x, x0)


class Transition:
    """One executed reverse step and its reward."""

    __slots__ = ("state", "action", "next_state", "reward")

    def __init__(self, state: LatentState, action: np.ndarray,
                 next_state: LatentState, reward: float):
        if next_state.t != state.t - 1:
            raise ValueError("next_state must sit one step below state")
        if np.asarray(action).shape != state.x.shape:
            raise ValueError("action shape must match the latent shape")
        if not np.isfinite(reward):
            raise ValueError(f"non-finite reward {reward!r}")
        self.state = state
        self.action = np.asarray(action)
        self.next_state = next_state
        self.reward = float(reward)


def actor_loss(value_net, params_v, x_t, eps_hat: ad.Tensor,
               x0) -> ad.Tensor:
    """Negated scorer output; backward reaches only the enhancer.

    ``eps_hat`` must be the live tape output of the enhancer.  The scorer's
    parameters enter as constants, so its weights get no gradient, which is
    the actor/critic separation.
    """
    v = value_net.forward(params_v, x_t, eps_hat, x0, params_tracked=False)
    return ad.scale(ad.mean_all(v), -1.0)


def critic_target(r: float, gamma: float, value_net, params_v, net_d,
                  params_d, x_prev: LatentState, y: np.ndarray,
                  x0: np.ndarray) -> float:
    """Bootstrapped scorer target: r + gamma * V(x_{t-1}, D(x_{t-1}), x0).

    Plain float, no tape: targets are constants to the scorer update.  At
    the end of the walk (x_prev.t == 0) the tail is dropped.
    """
    if x_prev.t == 0:
        return float(r)
    eps_next = net_d.forward(params_d, x_prev.x, y, float(x_prev.t)).value
    v_next = value_net.forward(params_v, x_prev.x, eps_next, x0,
                               t=x_prev.t).value \
        if value_net.step_input else \
        value_net.forward(params_v, x_prev.x, eps_next, x0).value
    return float(r) + float(gamma) * float(v_next)


def bellman_loss(value_net, params_v, x_t, eps_t, x0,
                 target: float | np.ndarray) -> ad.Tensor:
    """Squared regression of the scorer onto a fixed target."""
    v = value_net.forward(params_v, x_t, eps_t, x0, params_tracked=True)
    diff = ad.sub(ad.const(np.asarray(target, dtype=v.value.dtype)), v)
    return ad.mean_all(ad.square(diff))
