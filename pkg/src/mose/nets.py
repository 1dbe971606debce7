"""Networks, parameter storage, and the optimizer.

Both networks run on the autodiff tape in :mod:`mose.autodiff`.  Parameters
live in one flat vector per network (float32 by default) with named views,
which makes checkpointing, resuming, and finite-difference probing trivial.

The enhancer is a stack of dilated 1-D convolution blocks conditioned on a
sinusoidal step embedding; its output head starts at zero so the initial
noise prediction is exactly zero.  The scorer encodes the latent, the
candidate action, and the clean signal with strided convolutions, pools over
time, and finishes with a small ReLU MLP whose head also starts at zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import CheckpointError, DivergenceError


class StepEmbedding:
    """Fixed sinusoidal features of the (possibly fractional) step index."""

    def __init__(self, dim: int = 16, max_time: float = 200.0):
        if dim < 2 or dim % 2 != 0:
            raise ValueError("embedding dim must be an even integer >= 2")
        self.dim = dim
        self.max_time = float(max_time)
        half = dim // 2
        # geometric frequency ladder from 1 down to 1/max_time
        exponents = np.arange(half) / max(1, half - 1)
        self.freqs = self.max_time ** (-exponents)

    def __call__(self, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        ang = t[:, None] * self.freqs[None, :]
        return np.concatenate([np.sin(ang), np.cos(ang)], axis=1)


class ParamSet:
    """A flat parameter vector plus named views and a gradient buffer."""

    def __init__(self, manifest: list[tuple[str, tuple[int, ...]]],
                 flat: np.ndarray):
        total = sum(int(np.prod(shape)) for _, shape in manifest)
        if flat.ndim != 1 or flat.size != total:
            raise ValueError(f"flat vector has {flat.size} entries, manifest "
                             f"needs {total}")
        self.manifest = [(name, tuple(shape)) for name, shape in manifest]
        self.flat = flat
        self.grad = np.zeros_like(flat)
        self._views = {}
        self._grad_views = {}
        off = 0
        for name, shape in self.manifest:
            n = int(np.prod(shape))
            self._views[name] = self.flat[off: off + n].reshape(shape)
            self._grad_views[name] = self.grad[off: off + n].reshape(shape)
            off += n

    @property
    def dtype(self):
        return self.flat.dtype

    @property
    def size(self) -> int:
        return self.flat.size

    def view(self, name: str) -> np.ndarray:
        return self._views[name]

    def grad_view(self, name: str) -> np.ndarray:
        return self._grad_views[name]

    def zero_grad(self) -> None:
        self.grad[:] = 0

    def copy(self) -> "ParamSet":
        return ParamSet(self.manifest, self.flat.copy())


def _init_flat(manifest, rng: np.random.Generator, dtype,
               zero_names: frozenset) -> np.ndarray:
    chunks = []
    for name, shape in manifest:
        n = int(np.prod(shape))
        if name in zero_names:
            chunks.append(np.zeros(n))
            continue
        if len(shape) == 3:        # conv kernel (out, in, k)
            fan_in = shape[1] * shape[2]
        elif len(shape) == 2:      # linear (in, out)
            fan_in = shape[0]
        else:                      # bias: reuse the owning layer's bound
            fan_in = max(1, shape[0])
        bound = 1.0 / math.sqrt(fan_in)
        chunks.append(rng.uniform(-bound, bound, size=n))
    return np.concatenate(chunks).astype(dtype)


class DiffusionNet:
    """Context-windowed noise predictor over (latent, conditioner) pairs."""

    def __init__(self, channels: int = 16, blocks: int = 4, kernel: int = 3,
                 dilations=None, emb_dim: int = 16, max_time: float = 200.0):
        if dilations is None:
            dilations = [2 ** i for i in range(blocks)]
        if len(dilations) != blocks:
            raise ValueError("need one dilation per block")
        self.channels = channels
        self.blocks = blocks
        self.kernel = kernel
        self.dilations = list(dilations)
        self.embedding = StepEmbedding(emb_dim, max_time)
        m = [("in_proj.w", (channels, 2, 1)), ("in_proj.b", (channels,))]
        for i in range(blocks):
            m += [(f"block{i}.emb.w", (emb_dim, channels)),
                  (f"block{i}.emb.b", (channels,)),
                  (f"block{i}.dconv.w", (channels, channels, kernel)),
                  (f"block{i}.dconv.b", (channels,)),
                  (f"block{i}.mix.w", (channels, channels, 1)),
                  (f"block{i}.mix.b", (channels,))]
        m += [("out_proj.w", (1, channels, 1)), ("out_proj.b", (1,))]
        self.manifest = m
        self._leaves = None

    def init_params(self, rng: np.random.Generator,
                    dtype=np.float32, zero_head: bool = True) -> ParamSet:
        zero = frozenset({"out_proj.w", "out_proj.b"}) if zero_head \
            else frozenset()
        return ParamSet(self.manifest, _init_flat(self.manifest, rng,
                                                  dtype, zero))

    def forward(self, params: ParamSet, x_t, y, t,
                params_tracked: bool = False) -> ad.Tensor:
        """Predict the combined noise; accepts (L,) or (B, L) inputs."""
        x_arr = x_t.value if isinstance(x_t, ad.Tensor) else np.asarray(x_t)
        single = x_arr.ndim == 1
        mk = ad.leaf if params_tracked else ad.const
        p = {name: mk(params.view(name)) for name, _ in self.manifest}
        if params_tracked:
            self._leaves = p

        def wrap(a):
            a = np.asarray(a)
            if single:
                a = a[None, :]
            return ad.const(a)

        xt = x_t if isinstance(x_t, ad.Tensor) else wrap(x_t)
        yt = wrap(y)
        emb = self.embedding(t).astype(params.dtype)
        if single and emb.shape[0] != 1:
            raise ValueError("scalar t expected for single-vector input")
        embt = ad.const(emb)

        h = ad.conv1d(ad.stack_channels(xt, yt), p["in_proj.w"],
                      p["in_proj.b"])
        h = ad.relu(h)
        for i, dil in enumerate(self.dilations):
            cond = ad.linear(embt, p[f"block{i}.emb.w"], p[f"block{i}.emb.b"])
            u = ad.conv1d(h, p[f"block{i}.dconv.w"], p[f"block{i}.dconv.b"],
                          dilation=dil)
            u = ad.add(u, ad.expand_time(cond))
            u = ad.relu(u)
            u = ad.conv1d(u, p[f"block{i}.mix.w"], p[f"block{i}.mix.b"])
            h = ad.add(h, u)
        out = ad.conv1d(h, p["out_proj.w"], p["out_proj.b"])
        out = ad.squeeze_channel(out)
        return ad.index_first(out) if single else out

    def accumulate_grads(self, params: ParamSet) -> None:
        """Fold the gradients of the last tracked forward into ``params``."""
        if self._leaves is None:
            raise RuntimeError("no tracked forward pass recorded")
        for name, _ in self.manifest:
            g = self._leaves[name].grad
            if g is not None:
                params.grad_view(name)[...] += g
        self._leaves = None


class ValueNet:
    """Scores an action in context: (latent, action, clean) -> scalar."""

    def __init__(self, channels: int = 16, kernel: int = 5,
                 strides=(4, 4, 4), mlp_width: int = 32,
                 step_input: bool = False, emb_dim: int = 16,
                 max_time: float = 200.0):
        self.channels = channels
        self.kernel = kernel
        self.strides = tuple(strides)
        self.mlp_width = mlp_width
        self.step_input = step_input
        self.embedding = StepEmbedding(emb_dim, max_time)
        m = []
        c_in = 3
        for i, _ in enumerate(self.strides):
            m += [(f"enc{i}.w", (channels, c_in, kernel)),
                  (f"enc{i}.b", (channels,))]
            c_in = channels
        feat = channels
        if step_input:
            m += [("step.w", (emb_dim, channels)), ("step.b", (channels,))]
            feat += channels
        m += [("fc0.w", (feat, mlp_width)), ("fc0.b", (mlp_width,)),
              ("fc1.w", (mlp_width, mlp_width)), ("fc1.b", (mlp_width,)),
              ("fc2.w", (mlp_width, mlp_width)), ("fc2.b", (mlp_width,)),
              ("fc3.w", (mlp_width, 1)), ("fc3.b", (1,))]
        self.manifest = m
        self._leaves = None

    def init_params(self, rng: np.random.Generator,
                    dtype=np.float32, zero_head: bool = True) -> ParamSet:
        zero = frozenset({"fc3.w", "fc3.b"}) if zero_head else frozenset()
        return ParamSet(self.manifest, _init_flat(self.manifest, rng,
                                                  dtype, zero))

    def forward(self, params: ParamSet, x_t, action, x0, t=None,
                params_tracked: bool = False) -> ad.Tensor:
        """Score shape: () for single vectors, (B,) for batches."""
        a_arr = action.value if isinstance(action, ad.Tensor) \
            else np.asarray(action)
        single = a_arr.ndim == 1
        mk = ad.leaf if params_tracked else ad.const
        p = {name: mk(params.view(name)) for name, _ in self.manifest}
        if params_tracked:
            self._leaves = p

        def wrap(a):
            a = np.asarray(a)
            if single:
                a = a[None, :]
            return ad.const(a)

        if isinstance(action, ad.Tensor):
            at = ad.unbatch(action) if single else action
        else:
            at = wrap(action)
        h = ad.stack_channels(wrap(x_t), at, wrap(x0))
        for i, s in enumerate(self.strides):
            h = ad.relu(ad.conv1d(h, p[f"enc{i}.w"], p[f"enc{i}.b"],
                                  stride=s))
        feat = ad.mean_axis(h, axis=2)
        if self.step_input:
            if t is None:
                raise ValueError("this scorer was built with step_input=True")
            emb = ad.const(self.embedding(t).astype(params.dtype))
            feat = ad.concat([feat, ad.relu(ad.linear(emb, p["step.w"],
                                                      p["step.b"]))], axis=1)
        h = ad.relu(ad.linear(feat, p["fc0.w"], p["fc0.b"]))
        h = ad.relu(ad.linear(h, p["fc1.w"], p["fc1.b"]))
        h = ad.relu(ad.linear(h, p["fc2.w"], p["fc2.b"]))
        out = ad.squeeze_last(ad.linear(h, p["fc3.w"], p["fc3.b"]))
        return ad.index_first(out) if single else out

    def accumulate_grads(self, params: ParamSet) -> None:
        if self._leaves is None:
            raise RuntimeError("no tracked forward pass recorded")
        for name, _ in self.manifest:
            g = self._leaves[name].grad
            if g is not None:
                params.grad_view(name)[...] += g
        self._leaves = None


@dataclass
class AdamState:
    """First and second moment buffers plus the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def fresh(cls, params: ParamSet) -> "AdamState":
        return cls(np.zeros_like(params.flat), np.zeros_like(params.flat))


def adam_step(params: ParamSet, state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> ParamSet:
    """One Adam update in place; zeroes the gradient buffer afterwards."""
    g = params.grad
    if not np.all(np.isfinite(g)):
        raise DivergenceError("non-finite gradients; aborting the update")
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * g
    state.v *= beta2
    state.v += (1.0 - beta2) * np.square(g)
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    m_hat = state.m / bc1
    v_hat = state.v / bc2
    params.flat -= lr * m_hat / (np.sqrt(v_hat) + eps)
    params.zero_grad()
    return params


def save_param_file(path, params: ParamSet) -> None:
    """Raw little-endian float32 dump of the flat vector."""
    if params.dtype != np.float32:
        raise CheckpointError("checkpoint format stores float32 parameters; "
                              f"got {params.dtype}")
    params.flat.astype("<f4", copy=False).tofile(str(path))


def load_param_file(path, expected_size: int) -> np.ndarray:
    try:
        flat = np.fromfile(str(path), dtype="<f4")
    except OSError as exc:
        raise CheckpointError(f"cannot read parameter file {path}: {exc}") \
            from exc
    if flat.size != expected_size:
        raise CheckpointError(f"{path}: holds {flat.size} values, manifest "
                              f"says {expected_size}")
    return flat
