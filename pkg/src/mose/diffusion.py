"""The conditional forward process and its learned reverse.

The forward marginal interpolates the clean signal toward the conditioner
while adding noise (see :mod:`mose.schedule` for the constants).  The network
is trained to predict the *combined* noise

    C_t = (w_t sqrt(ab_t) / sqrt(1 - ab_t)) (y - x0)
        + (sqrt(delta_t) / sqrt(1 - ab_t)) eps

which folds the conditioner mismatch and the Gaussian noise into a single
target; algebraically C_t = (x_t - sqrt(ab_t) x0) / sqrt(1 - ab_t), so a
perfect prediction recovers x0 from any latent in one division.

Reverse steps use the schedule's precomputed posterior coefficients.  The
chain starts at sqrt(ab_T) * y (plus start noise unless deterministic) and
walks t = T..1; the last step adds no noise.  Fast sampling runs the same
walk over a short schedule built from explicit inference variances whose
fractional positions on the training chain are found by matching
sqrt(alpha_bar); positions feed only the step embedding.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import AlignmentError, ScheduleError
from .schedule import NoiseSchedule, schedule_from_betas
from .signals import LatentState, SignalPair


def forward_sample(pair: SignalPair, t: int, eps: np.ndarray,
                   sched: NoiseSchedule) -> LatentState:
    """Draw x_t from the forward marginal using the provided noise."""
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"t = {t} outside 1..{sched.T}")
    eps = np.asarray(eps)
    if eps.shape != pair.x0.shape:
        raise ValueError("noise shape must match the signal shape")
    w = float(sched.w[t])
    sa = math.sqrt(float(sched.alpha_bar[t]))
    sd = math.sqrt(float(sched.delta[t]))
    x_t = (1.0 - w) * sa * pair.x0 + w * sa * pair.y + sd * eps
    return LatentState(x_t, t)


def forward_sample_batch(x0: np.ndarray, y: np.ndarray, t: np.ndarray,
                         eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Vectorized forward draw for (B, L) signals and per-row steps."""
    dt = x0.dtype
    w = sched.w[t]
    sa = np.sqrt(sched.alpha_bar[t])
    sd = np.sqrt(sched.delta[t])
    c0 = ((1.0 - w) * sa).astype(dt)[:, None]
    cy = (w * sa).astype(dt)[:, None]
    ce = sd.astype(dt)[:, None]
    return c0 * x0 + cy * y + ce * eps


def target_noise(pair: SignalPair, eps: np.ndarray, t: int,
                 sched: NoiseSchedule) -> np.ndarray:
    """The combined-noise regression target C_t."""
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"t = {t} outside 1..{sched.T}")
    ab = float(sched.alpha_bar[t])
    s1 = math.sqrt(1.0 - ab)
    c_mix = float(sched.w[t]) * math.sqrt(ab) / s1
    c_eps = math.sqrt(float(sched.delta[t])) / s1
    return c_mix * (pair.y - pair.x0) + c_eps * np.asarray(eps)


def target_noise_batch(x0: np.ndarray, y: np.ndarray, t: np.ndarray,
                       eps: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    dt = x0.dtype
    ab = sched.alpha_bar[t]
    s1 = np.sqrt(1.0 - ab)
    c_mix = (sched.w[t] * np.sqrt(ab) / s1).astype(dt)[:, None]
    c_eps = (np.sqrt(sched.delta[t]) / s1).astype(dt)[:, None]
    return c_mix * (y - x0) + c_eps * eps


def elbo_loss(eps_hat: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute error against the combined-noise target."""
    eps_hat = np.asarray(eps_hat)
    target = np.asarray(target)
    if eps_hat.shape != target.shape:
        raise ValueError("prediction and target shapes differ")
    return float(np.mean(np.abs(eps_hat - target)))


class ReverseCoefficients:
    """Reverse-mean weights of one step: x, y, and predicted-noise terms."""

    __slots__ = ("c_xt", "c_yt", "c_eps")

    def __init__(self, c_xt: float, c_yt: float, c_eps: float):
        self.c_xt = c_xt
        self.c_yt = c_yt
        self.c_eps = c_eps

    def __repr__(self):
        return (f"ReverseCoefficients(c_xt={self.c_xt!r}, c_yt={self.c_yt!r}, "
                f"c_eps={self.c_eps!r})")


def reverse_coefficients(t: int, sched: NoiseSchedule) -> ReverseCoefficients:
    if not 1 <= t <= sched.T:
        raise ScheduleError(f"t = {t} outside 1..{sched.T}")
    return ReverseCoefficients(float(sched.coef_x[t]), float(sched.coef_y[t]),
                               float(sched.coef_eps[t]))


def reverse_step(state: LatentState, y: np.ndarray, eps_hat: np.ndarray,
                 z: np.ndarray | None, sched: NoiseSchedule) -> LatentState:
    """One reverse transition x_t -> x_{t-1}; noise is forced off at t = 1."""
    t = int(state.t)
    if state.t != t or not 1 <= t <= sched.T:
        raise ScheduleError(f"reverse_step needs integer t in 1..{sched.T}, "
                            f"got {state.t!r}")
    c = reverse_coefficients(t, sched)
    x = c.c_xt * state.x + c.c_yt * np.asarray(y) - c.c_eps * np.asarray(eps_hat)
    if t > 1 and z is not None:
        x = x + math.sqrt(float(sched.delta_tilde[t])) * np.asarray(z)
    return LatentState(x, t - 1)


def reverse_mean_batch(x_t: np.ndarray, y: np.ndarray, eps_hat: np.ndarray,
                       t: np.ndarray, sched: NoiseSchedule) -> np.ndarray:
    """Posterior means for (B, L) latents with per-row integer steps."""
    dt = x_t.dtype
    cx = sched.coef_x[t].astype(dt)[:, None]
    cy = sched.coef_y[t].astype(dt)[:, None]
    ce = sched.coef_eps[t].astype(dt)[:, None]
    return cx * x_t + cy * y - ce * eps_hat


def _reverse_chain(net, params, y: np.ndarray, chain: NoiseSchedule,
                   step_inputs: np.ndarray, rng: np.random.Generator | None,
                   noiseless: bool) -> np.ndarray:
    """Walk a reverse chain from its terminal marginal down to step 0.

    ``step_inputs[s-1]`` is what the network sees as the step index for
    chain step s; for the training chain these are just 1..T.
    """
    y = np.asarray(y)
    S = chain.T
    x = math.sqrt(float(chain.alpha_bar[S])) * y
    draw = (lambda: rng.standard_normal(y.shape).astype(y.dtype, copy=False)) \
        if (rng is not None and not noiseless) else None
    if draw is not None:
        x = x + math.sqrt(float(chain.delta[S])) * draw()
    for s in range(S, 0, -1):
        eps_hat = net.forward(params, x, y, float(step_inputs[s - 1])).value
        # python-float coefficients keep float32 chains in float32
        x = float(chain.coef_x[s]) * x + float(chain.coef_y[s]) * y \
            - float(chain.coef_eps[s]) * eps_hat
        if s > 1 and draw is not None:
            x = x + math.sqrt(float(chain.delta_tilde[s])) * draw()
    return x


def enhance(net, params, y: np.ndarray, sched: NoiseSchedule,
            rng: np.random.Generator | None = None,
            noiseless: bool = False) -> np.ndarray:
    """Full-length reverse walk conditioned on the degraded signal."""
    steps = np.arange(1, sched.T + 1, dtype=np.float64)
    return _reverse_chain(net, params, y, sched, steps, rng, noiseless)


def align_inference_steps(infer: NoiseSchedule,
                          train: NoiseSchedule) -> np.ndarray:
    """Fractional training-step positions of an inference schedule.

    Matches sqrt(alpha_bar): each inference step lands where the training
    chain has the same retained-signal level, linearly interpolated between
    neighbouring integer steps.  Raises if a step falls past the end of the
    training chain.
    """
    grid = np.sqrt(train.alpha_bar)  # index 0..T, strictly decreasing
    tail = float(grid[train.T])
    taus = np.empty(infer.T)
    for s in range(1, infer.T + 1):
        a = math.sqrt(float(infer.alpha_bar[s]))
        if a < tail:
            # tolerate product-rounding jitter right at the terminal level
            if a >= tail - 1e-9 * tail:
                taus[s - 1] = float(train.T)
                continue
            raise AlignmentError(
                f"inference step {s} retains less signal (sqrt level "
                f"{a:.6g}) than the end of the training chain "
                f"({tail:.6g}); it cannot be aligned")
        j = int(np.searchsorted(-grid, -a, side="right")) - 1
        if j >= train.T:
            taus[s - 1] = float(train.T)
        elif grid[j] == a:
            taus[s - 1] = float(j)
        else:
            taus[s - 1] = j + (grid[j] - a) / (grid[j] - grid[j + 1])
    return taus


def fast_sample(net, params, y: np.ndarray, infer_betas,
                sched: NoiseSchedule, rng: np.random.Generator | None = None,
                noiseless: bool = False) -> np.ndarray:
    """Reverse walk over a short inference schedule aligned to ``sched``."""
    infer_betas = np.asarray(infer_betas, dtype=np.float64)
    if infer_betas.size > sched.T:
        raise AlignmentError("inference schedule is longer than the "
                             "training schedule")
    mini = schedule_from_betas(infer_betas, weight_mode=sched.weight_mode)
    taus = align_inference_steps(mini, sched)
    return _reverse_chain(net, params, y, mini, taus, rng, noiseless)


def default_fast_schedule(sched: NoiseSchedule, n_steps: int = 6) -> np.ndarray:
    """A geometric ladder of noise levels spanning the training chain.

    Levels run from the first training step's noise share to the terminal
    one, so the result is always alignable and ends exactly at the training
    chain's terminal signal level.
    """
    if not 2 <= n_steps <= sched.T:
        raise ScheduleError(f"n_steps must be in 2..{sched.T}")
    lo = 1.0 - float(sched.alpha_bar[1])
    hi = 1.0 - float(sched.alpha_bar[sched.T])
    levels = np.geomspace(lo, hi, n_steps)
    ab = 1.0 - levels
    prev = np.concatenate([[1.0], ab[:-1]])
    betas = 1.0 - ab / prev
    return betas
