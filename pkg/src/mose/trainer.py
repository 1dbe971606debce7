"""Two-phase training loop, evaluation, and the schedule-mismatch probe.

Phase 1 (iterations 1..n_th) trains the enhancer on the combined-noise
regression alone.  Phase 2 adds the metric-oriented actor term and starts
training the scorer on bootstrapped improvement targets.  Per iteration the
generator is consumed in a fixed order (utterance indices, noise, steps), so
a run is exactly replayable from its config and seed, and checkpoints store
the generator state for bit-identical resumption.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from typing import NamedTuple

import numpy as np

from . import autodiff as ad
from .diffusion import (enhance, fast_sample, forward_sample_batch,
                        reverse_mean_batch, target_noise_batch)
from .errors import CheckpointError, ConfigError, DataError, DivergenceError
from .metric import MetricSpec, external_metric, get_metric
from .nets import (AdamState, DiffusionNet, ParamSet, ValueNet, adam_step,
                   load_param_file, save_param_file)
from .schedule import NoiseSchedule, build_schedule
from .signals import SignalPair

_CKPT_FORMAT = "mose-checkpoint-1"


@dataclass(frozen=True)
class TrainConfig:
    """Everything that determines a training run except the corpus files."""

    n_total: int = 4000        # total iterations
    n_th: int = 3000           # iterations of pure regression warm-up
    gamma: float = 0.95        # discount for bootstrapped targets
    alpha: float = 1.0         # weight of the actor term
    lr_d: float = 2e-4         # enhancer learning rate, phase 1
    lr_d_joint: float = 1e-4   # enhancer learning rate, phase 2
    lr_v: float = 1e-5         # scorer learning rate
    batch: int = 8
    seed: int = 0
    steps: int = 50            # chain length T
    beta_min: float = 1e-4
    beta_max: float = 0.035
    metric: str = "si_snr"     # reward metric name
    metric_cmd: str = ""       # external scorer command template, optional
    elbo_only: bool = False    # regression-only baseline, no scorer at all
    critic_step_input: bool = False
    update_v_first: bool = False
    d_channels: int = 16
    d_blocks: int = 4
    d_kernel: int = 3
    v_channels: int = 16
    v_kernel: int = 5
    v_mlp_width: int = 32
    emb_dim: int = 16

    def __post_init__(self):
        if self.n_total < 1:
            raise ConfigError("n_total must be >= 1")
        if not 0 <= self.n_th <= self.n_total:
            raise ConfigError("need 0 <= n_th <= n_total")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError("gamma must lie in [0, 1)")
        if self.alpha < 0.0:
            raise ConfigError("alpha must be >= 0")
        for name in ("lr_d", "lr_d_joint", "lr_v"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be > 0")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.steps < 2:
            raise ConfigError("steps must be >= 2")
        if not 0.0 < self.beta_min <= self.beta_max < 1.0:
            raise ConfigError("need 0 < beta_min <= beta_max < 1")
        for name in ("d_channels", "d_blocks", "d_kernel", "v_channels",
                     "v_kernel", "v_mlp_width", "emb_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


def config_to_text(cfg: TrainConfig) -> str:
    """Canonical key = value rendering; floats keep full precision."""
    lines = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            s = "true" if v else "false"
        elif isinstance(v, float):
            s = repr(v)
        else:
            s = str(v)
        lines.append(f"{f.name} = {s}")
    return "\n".join(lines) + "\n"


def config_from_mapping(mapping: dict, base: TrainConfig | None = None) -> TrainConfig:
    """Build a config from string (or typed) values, rejecting unknown keys."""
    base = base or TrainConfig()
    by_name = {f.name: f for f in fields(TrainConfig)}
    updates = {}
    for key, raw in mapping.items():
        if key not in by_name:
            raise ConfigError(f"unknown config key {key!r}")
        ftype = by_name[key].type
        try:
            if ftype == "bool" or isinstance(getattr(base, key), bool):
                if isinstance(raw, bool):
                    val = raw
                elif str(raw).strip().lower() in ("true", "1", "yes"):
                    val = True
                elif str(raw).strip().lower() in ("false", "0", "no"):
                    val = False
                else:
                    raise ValueError(f"not a boolean: {raw!r}")
            elif isinstance(getattr(base, key), int):
                val = int(str(raw).strip())
            elif isinstance(getattr(base, key), float):
                val = float(str(raw).strip())
            else:
                val = str(raw).strip()
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
        updates[key] = val
    return replace(base, **updates)


def parse_config_file(path, base: TrainConfig | None = None) -> TrainConfig:
    """Read a flat ``key = value`` file with # comments."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    mapping = {}
    for i, ln in enumerate(lines, 1):
        s = ln.strip()
        if not s or s.startswith("#"):
            continue
        if "=" not in s:
            raise ConfigError(f"{path}:{i}: expected 'key = value', got {ln!r}")
        key, _, val = s.partition("=")
        mapping[key.strip()] = val.strip()
    return config_from_mapping(mapping, base)


def config_hash(cfg: TrainConfig) -> str:
    return hashlib.sha256(config_to_text(cfg).encode()).hexdigest()[:16]


class TelemetryRow(NamedTuple):
    iter: int
    phase: int
    l1: float
    l2: float
    l3: float
    reward_mean: float
    target_mean: float


TELEMETRY_HEADER = "iter,phase,l1,l2,l3,reward_mean,target_mean"


def write_telemetry_csv(path, rows, append: bool = False) -> None:
    mode = "a" if append else "w"
    with open(path, mode, encoding="utf-8", newline="") as fh:
        if not append:
            fh.write(TELEMETRY_HEADER + "\n")
        for r in rows:
            fh.write(f"{r.iter},{r.phase},{r.l1!r},{r.l2!r},{r.l3!r},"
                     f"{r.reward_mean!r},{r.target_mean!r}\n")


def _truncate_telemetry(path, upto: int) -> None:
    """Rewrite a telemetry file keeping rows up to an iteration.

    Drops rows past ``upto`` (stale relative to the checkpoint being resumed)
    and any torn trailing line left by an interrupted write, so appending
    resumed rows yields exactly the uninterrupted file.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError:
        lines = []
    rows = []
    if lines and lines[0] == TELEMETRY_HEADER:
        for ln in lines[1:]:
            parts = ln.split(",")
            try:
                row = TelemetryRow(int(parts[0]), int(parts[1]),
                                   *map(float, parts[2:7]))
            except (ValueError, IndexError):
                break
            if row.iter > upto:
                break
            rows.append(row)
    write_telemetry_csv(path, rows)


def read_telemetry_csv(path) -> list[TelemetryRow]:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != TELEMETRY_HEADER:
        raise DataError(f"{path}: missing telemetry header")
    rows = []
    for ln in lines[1:]:
        it, ph, *vals = ln.split(",")
        rows.append(TelemetryRow(int(it), int(ph), *map(float, vals)))
    return rows


def build_nets(cfg: TrainConfig) -> tuple[DiffusionNet, ValueNet]:
    max_time = float(max(200, 4 * cfg.steps))
    dnet = DiffusionNet(channels=cfg.d_channels, blocks=cfg.d_blocks,
                        kernel=cfg.d_kernel, emb_dim=cfg.emb_dim,
                        max_time=max_time)
    vnet = ValueNet(channels=cfg.v_channels, kernel=cfg.v_kernel,
                    mlp_width=cfg.v_mlp_width,
                    step_input=cfg.critic_step_input, emb_dim=cfg.emb_dim,
                    max_time=max_time)
    return dnet, vnet


def resolve_metric(cfg: TrainConfig, sample_rate: int) -> MetricSpec:
    if cfg.metric_cmd:
        return external_metric(cfg.metric, cfg.metric_cmd, sample_rate)
    return get_metric(cfg.metric)


# ---------------------------------------------------------------------------
# checkpoints

def _manifest_lines(cfg_hash: str, iteration: int, l1_ref: float,
                    dnet: DiffusionNet, vnet: ValueNet,
                    adam_d: AdamState, adam_v: AdamState) -> list[str]:
    lines = [f"format = {_CKPT_FORMAT}",
             f"config_hash = {cfg_hash}",
             f"iteration = {iteration}",
             f"l1_ref = {l1_ref!r}",
             f"adam_d_step = {adam_d.step}",
             f"adam_v_step = {adam_v.step}"]
    for tag, net in (("d", dnet), ("v", vnet)):
        for name, shape in net.manifest:
            dims = " ".join(str(d) for d in shape)
            lines.append(f"param {tag} {name} {dims}")
    return lines


def checkpoint_save(path, cfg: TrainConfig, iteration: int,
                    params_d: ParamSet, params_v: ParamSet,
                    adam_d: AdamState, adam_v: AdamState,
                    rng: np.random.Generator, l1_ref: float,
                    dnet: DiffusionNet, vnet: ValueNet) -> None:
    os.makedirs(path, exist_ok=True)
    save_param_file(os.path.join(path, "theta_d.f32"), params_d)
    save_param_file(os.path.join(path, "theta_v.f32"), params_v)
    for tag, st in (("d", adam_d), ("v", adam_v)):
        st.m.astype("<f4", copy=False).tofile(
            os.path.join(path, f"adam_{tag}_m.f32"))
        st.v.astype("<f4", copy=False).tofile(
            os.path.join(path, f"adam_{tag}_v.f32"))
    with open(os.path.join(path, "rng.json"), "w", encoding="utf-8") as fh:
        json.dump(rng.bit_generator.state, fh)
    with open(os.path.join(path, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_to_text(cfg))
    lines = _manifest_lines(config_hash(cfg), iteration, l1_ref, dnet, vnet,
                            adam_d, adam_v)
    with open(os.path.join(path, "manifest.txt"), "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


@dataclass
class CheckpointState:
    config: TrainConfig
    config_hash: str
    iteration: int
    l1_ref: float
    params_d: ParamSet
    params_v: ParamSet
    adam_d: AdamState
    adam_v: AdamState
    rng_state: dict


def checkpoint_load(path) -> CheckpointState:
    mpath = os.path.join(path, "manifest.txt")
    try:
        with open(mpath, "r", encoding="utf-8") as fh:
            lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    except OSError as exc:
        raise CheckpointError(f"cannot read {mpath}: {exc}") from exc
    kv = {}
    manifests = {"d": [], "v": []}
    for ln in lines:
        if ln.startswith("param "):
            parts = ln.split()
            if len(parts) < 4 or parts[1] not in manifests:
                raise CheckpointError(f"{mpath}: malformed line {ln!r}")
            try:
                shape = tuple(int(x) for x in parts[3:])
            except ValueError as exc:
                raise CheckpointError(f"{mpath}: malformed line {ln!r}") \
                    from exc
            manifests[parts[1]].append((parts[2], shape))
        elif " = " in ln:
            key, _, val = ln.partition(" = ")
            kv[key.strip()] = val.strip()
        else:
            raise CheckpointError(f"{mpath}: malformed line {ln!r}")
    if kv.get("format") != _CKPT_FORMAT:
        raise CheckpointError(f"{mpath}: unknown format {kv.get('format')!r}")
    try:
        iteration = int(kv["iteration"])
        l1_ref = float(kv["l1_ref"])
        steps = (int(kv["adam_d_step"]), int(kv["adam_v_step"]))
        cfg_hash = kv["config_hash"]
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"{mpath}: missing or malformed field: {exc}") \
            from exc
    cfg = parse_config_file(os.path.join(path, "config.txt"))
    if config_hash(cfg) != cfg_hash:
        raise CheckpointError(f"{path}: config.txt does not match the "
                              f"recorded config hash")
    sizes = {tag: sum(int(np.prod(s)) for _, s in manifests[tag])
             for tag in ("d", "v")}
    params_d = ParamSet(manifests["d"], load_param_file(
        os.path.join(path, "theta_d.f32"), sizes["d"]))
    params_v = ParamSet(manifests["v"], load_param_file(
        os.path.join(path, "theta_v.f32"), sizes["v"]))
    adam = {}
    for tag in ("d", "v"):
        m = load_param_file(os.path.join(path, f"adam_{tag}_m.f32"),
                            sizes[tag])
        v = load_param_file(os.path.join(path, f"adam_{tag}_v.f32"),
                            sizes[tag])
        adam[tag] = AdamState(m, v, steps[0] if tag == "d" else steps[1])
    try:
        with open(os.path.join(path, "rng.json"), "r", encoding="utf-8") as fh:
            rng_state = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: bad rng state: {exc}") from exc
    return CheckpointState(cfg, cfg_hash, iteration, l1_ref, params_d,
                           params_v, adam["d"], adam["v"], rng_state)


# ---------------------------------------------------------------------------
# training

@dataclass
class TrainResult:
    config: TrainConfig
    schedule: NoiseSchedule
    dnet: DiffusionNet
    vnet: ValueNet
    params_d: ParamSet
    params_v: ParamSet
    adam_d: AdamState
    adam_v: AdamState
    telemetry: list
    l1_ref: float
    iteration: int
    rng: np.random.Generator


def _corpus_matrices(corpus: list[SignalPair]):
    if not corpus:
        raise DataError("empty training corpus")
    length = corpus[0].x0.size
    rate = corpus[0].sample_rate
    for p in corpus:
        if p.x0.size != length:
            raise DataError("training corpus must be equal-length")
        if p.sample_rate != rate:
            raise DataError("training corpus must share one sample rate")
    x0 = np.stack([p.x0 for p in corpus]).astype(np.float32)
    y = np.stack([p.y for p in corpus]).astype(np.float32)
    return x0, y, rate


def train(cfg: TrainConfig, corpus: list[SignalPair], out_dir=None,
          resume: CheckpointState | str | None = None,
          checkpoint_every: int = 0, iter_callback=None) -> TrainResult:
    """Run (or continue) a training run; returns the final state.

    With ``out_dir`` set, telemetry is streamed to ``telemetry.csv`` there
    and a final checkpoint is written to ``out_dir/checkpoint``.  Resuming
    appends telemetry rows for the iterations it actually runs.
    """
    sched = build_schedule(cfg.steps, cfg.beta_min, cfg.beta_max)
    dnet, vnet = build_nets(cfg)
    x0mat, ymat, rate = _corpus_matrices(corpus)
    metric = resolve_metric(cfg, rate)
    n_utt, length = x0mat.shape

    if isinstance(resume, str):
        resume = checkpoint_load(resume)
    if resume is not None:
        if resume.config_hash != config_hash(cfg):
            raise CheckpointError(
                "checkpoint was produced by a different config "
                f"({resume.config_hash} != {config_hash(cfg)})")
        if resume.params_d.manifest != dnet.manifest or \
                resume.params_v.manifest != vnet.manifest:
            raise CheckpointError("checkpoint layer manifest does not match "
                                  "the configured networks")
        params_d, params_v = resume.params_d, resume.params_v
        adam_d, adam_v = resume.adam_d, resume.adam_v
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = resume.rng_state
        start = resume.iteration
        l1_ref = resume.l1_ref
    else:
        rng = np.random.Generator(np.random.PCG64(cfg.seed))
        params_d = dnet.init_params(rng)
        params_v = vnet.init_params(rng)
        adam_d = AdamState.fresh(params_d)
        adam_v = AdamState.fresh(params_v)
        start = 0
        l1_ref = math.nan

    telemetry = []
    tele_path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        tele_path = os.path.join(str(out_dir), "telemetry.csv")
        if start == 0 or not os.path.exists(tele_path):
            write_telemetry_csv(tele_path, [])
        else:
            _truncate_telemetry(tele_path, start)
    guard_window = min(20, cfg.n_total)
    warm_l1 = []
    flushed = 0

    for i in range(start + 1, cfg.n_total + 1):
        # fixed draw order per iteration: utterances, noise, steps
        idx = rng.integers(0, n_utt, size=cfg.batch)
        eps = rng.standard_normal((cfg.batch, length)).astype(np.float32)
        t_arr = rng.integers(1, cfg.steps + 1, size=cfg.batch)
        xb0 = x0mat[idx]
        yb = ymat[idx]
        x_t = forward_sample_batch(xb0, yb, t_arr, eps, sched)
        target = target_noise_batch(xb0, yb, t_arr, eps, sched)

        phase1 = i <= cfg.n_th
        joint = (not phase1) and (not cfg.elbo_only)
        lr_d = cfg.lr_d if phase1 else cfg.lr_d_joint

        if not joint:
            pred = dnet.forward(params_d, x_t, yb, t_arr, params_tracked=True)
            l1_t = ad.mean_all(ad.abs_(ad.sub(pred, ad.const(target))))
            ad.backward(l1_t)
            dnet.accumulate_grads(params_d)
            adam_step(params_d, adam_d, lr_d)
            row = TelemetryRow(i, 1 if phase1 else 2, float(l1_t.value),
                               math.nan, math.nan, math.nan, math.nan)
        else:
            row = _joint_update(cfg, sched, dnet, vnet, params_d, params_v,
                                adam_d, adam_v, metric, x_t, yb, xb0, t_arr,
                                target, lr_d, i)

        telemetry.append(row)
        if not math.isfinite(row.l1):
            raise DivergenceError(f"iteration {i}: non-finite loss")
        if i <= guard_window:
            warm_l1.append(row.l1)
            if i == guard_window and math.isnan(l1_ref):
                l1_ref = float(np.mean(warm_l1))
        elif math.isfinite(l1_ref) and row.l1 > 10.0 * l1_ref:
            raise DivergenceError(
                f"iteration {i}: regression loss {row.l1:.6g} exceeded 10x "
                f"its early-run level {l1_ref:.6g}")
        if iter_callback is not None:
            iter_callback(i, params_d, params_v)
        if tele_path is not None and (i % 200 == 0 or i == cfg.n_total):
            write_telemetry_csv(tele_path, telemetry[flushed:], append=True)
            flushed = len(telemetry)
        if checkpoint_every and out_dir is not None \
                and i % checkpoint_every == 0 and i < cfg.n_total:
            # flush first so the file never lags the checkpoint iteration
            if tele_path is not None and flushed < len(telemetry):
                write_telemetry_csv(tele_path, telemetry[flushed:],
                                    append=True)
                flushed = len(telemetry)
            checkpoint_save(os.path.join(str(out_dir), "checkpoint"), cfg, i,
                            params_d, params_v, adam_d, adam_v, rng, l1_ref,
                            dnet, vnet)

    if out_dir is not None:
        if flushed < len(telemetry):
            write_telemetry_csv(tele_path, telemetry[flushed:], append=True)
        checkpoint_save(os.path.join(str(out_dir), "checkpoint"), cfg,
                        cfg.n_total, params_d, params_v, adam_d, adam_v, rng,
                        l1_ref, dnet, vnet)
    return TrainResult(cfg, sched, dnet, vnet, params_d, params_v, adam_d,
                       adam_v, telemetry, l1_ref, cfg.n_total, rng)


def _joint_update(cfg, sched, dnet, vnet, params_d, params_v, adam_d, adam_v,
                  metric, x_t, yb, xb0, t_arr, target, lr_d,
                  i) -> TelemetryRow:
    """One phase-2 iteration: actor-augmented enhancer update + scorer update."""
    t_emb = t_arr.astype(np.float64)
    t_kw = {"t": t_emb} if vnet.step_input else {}

    pred = dnet.forward(params_d, x_t, yb, t_emb, params_tracked=True)
    action = pred.value  # detached action executed by the sampler

    def update_d():
        l1_t = ad.mean_all(ad.abs_(ad.sub(pred, ad.const(target))))
        v_act = vnet.forward(params_v, x_t, pred, xb0, params_tracked=False,
                             **t_kw)
        l2_t = ad.scale(ad.mean_all(v_act), -1.0)
        loss = ad.add(l1_t, ad.scale(l2_t, cfg.alpha))
        ad.backward(loss)
        dnet.accumulate_grads(params_d)
        adam_step(params_d, adam_d, lr_d)
        return float(l1_t.value), float(l2_t.value)

    def update_v():
        x_prev = reverse_mean_batch(x_t, yb, action, t_arr, sched)
        rew = np.empty(cfg.batch)
        for b in range(cfg.batch):
            rew[b] = metric.evaluate(x_prev[b], xb0[b]) \
                - metric.evaluate(x_t[b], xb0[b])
        targets = rew.copy()
        mask = t_arr >= 2
        if np.any(mask):
            t_next = (t_arr[mask] - 1).astype(np.float64)
            eps_next = dnet.forward(params_d, x_prev[mask], yb[mask],
                                    t_next).value
            nxt_kw = {"t": t_next} if vnet.step_input else {}
            v_next = vnet.forward(params_v, x_prev[mask], eps_next,
                                  xb0[mask], **nxt_kw).value
            targets[mask] += cfg.gamma * v_next.astype(np.float64)
        v_pred = vnet.forward(params_v, x_t, ad.const(action), xb0,
                              params_tracked=True, **t_kw)
        diff = ad.sub(ad.const(targets.astype(np.float32)), v_pred)
        l3_t = ad.mean_all(ad.square(diff))
        ad.backward(l3_t)
        vnet.accumulate_grads(params_v)
        adam_step(params_v, adam_v, cfg.lr_v)
        return float(l3_t.value), float(np.mean(rew)), float(np.mean(targets))

    if cfg.update_v_first:
        l3, rew_mean, tgt_mean = update_v()
        l1, l2 = update_d()
    else:
        l1, l2 = update_d()
        l3, rew_mean, tgt_mean = update_v()
    return TelemetryRow(i, 2, l1, l2, l3, rew_mean, tgt_mean)


# ---------------------------------------------------------------------------
# evaluation

def default_threads(requested: int | None = None) -> int:
    """Worker count: explicit argument, else MOSE_THREADS, else a small pool."""
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("MOSE_THREADS", "").strip()
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ConfigError(f"MOSE_THREADS must be an integer, got {env!r}") \
                from None
    return min(4, os.cpu_count() or 1)


@dataclass
class EvalRow:
    id: str
    snr_db: float | None
    split: str
    metric: str
    noisy: float      # score of the unprocessed degraded signal
    enhanced: float   # score after the reverse walk


@dataclass
class EvalReport:
    rows: list

    def summary(self) -> list[dict]:
        by_metric: dict[str, list[EvalRow]] = {}
        for r in self.rows:
            by_metric.setdefault(r.metric, []).append(r)
        out = []
        for name, rows in by_metric.items():
            enh = np.array([r.enhanced for r in rows])
            noi = np.array([r.noisy for r in rows])
            out.append({"metric": name, "n": len(rows),
                        "enhanced_mean": float(enh.mean()),
                        "enhanced_std": float(enh.std()),
                        "noisy_mean": float(noi.mean()),
                        "noisy_std": float(noi.std())})
        return out


def evaluate(dnet: DiffusionNet, params_d: ParamSet,
             pairs: list[SignalPair], metrics: list[MetricSpec],
             sched: NoiseSchedule, *, sampler: str = "full",
             fast_betas=None, seed: int = 0,
             threads: int | None = None) -> EvalReport:
    """Enhance every pair and score it; deterministic per (seed, index).

    Per-utterance noise comes from an independent child generator keyed by
    the utterance index, so results do not depend on the thread schedule.
    """
    if sampler not in ("full", "fast"):
        raise ConfigError(f"sampler must be 'full' or 'fast', got {sampler!r}")
    if sampler == "fast" and fast_betas is None:
        raise ConfigError("fast sampling needs fast_betas")

    def work(k: int) -> list[EvalRow]:
        pair = pairs[k]
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        y32 = pair.y.astype(np.float32)
        if sampler == "full":
            xhat = enhance(dnet, params_d, y32, sched, rng=rng)
        else:
            xhat = fast_sample(dnet, params_d, y32, fast_betas, sched,
                               rng=rng)
        rows = []
        for m in metrics:
            rows.append(EvalRow(pair.id, pair.snr_db, pair.split, m.name,
                                m.evaluate(pair.y, pair.x0),
                                m.evaluate(xhat, pair.x0)))
        return rows

    n_workers = default_threads(threads)
    if n_workers <= 1 or len(pairs) <= 1:
        chunks = [work(k) for k in range(len(pairs))]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            chunks = list(pool.map(work, range(len(pairs))))
    return EvalReport([r for chunk in chunks for r in chunk])


def write_eval_csv(path, report: EvalReport) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "snr_db", "split", "metric", "noisy", "enhanced"])
        for r in report.rows:
            wr.writerow([r.id, "" if r.snr_db is None else repr(r.snr_db),
                         r.split, r.metric, repr(r.noisy), repr(r.enhanced)])


def write_comparison_csv(path, reports: dict[str, EvalReport],
                         metric_names: list[str]) -> None:
    """One row per system, one column per metric, plus the unprocessed row."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["system"] + list(metric_names))
        first = next(iter(reports.values()))
        noisy = {s["metric"]: s["noisy_mean"] for s in first.summary()}
        wr.writerow(["unprocessed"] + [repr(noisy[m]) for m in metric_names])
        for label, rep in reports.items():
            enh = {s["metric"]: s["enhanced_mean"] for s in rep.summary()}
            wr.writerow([label] + [repr(enh[m]) for m in metric_names])


@dataclass
class SweepResult:
    long_rows: list        # (alpha, seed, metric, enhanced_mean, noisy_mean, n)
    by_alpha: dict         # alpha -> metric -> mean over seeds
    unprocessed: dict      # metric -> mean score of the degraded inputs


def alpha_sweep(base: TrainConfig, train_pairs: list[SignalPair],
                test_pairs: list[SignalPair], alphas, seeds,
                metric_names=("si_snr",), sampler: str = "full",
                fast_betas=None, threads: int | None = None,
                progress=None) -> SweepResult:
    """Train one model per (alpha, seed) and score each on the test split.

    alpha = 0 runs skip the scorer entirely: with no actor weight the
    enhancer updates are identical either way, and the regression-only path
    is much cheaper.
    """
    metrics = [get_metric(m) for m in metric_names]
    long_rows = []
    sums: dict[float, dict[str, list[float]]] = {}
    unprocessed: dict[str, float] = {}
    for a in alphas:
        for s in seeds:
            cfg = replace(base, alpha=float(a), seed=int(s),
                          elbo_only=(float(a) == 0.0))
            res = train(cfg, train_pairs)
            rep = evaluate(res.dnet, res.params_d, test_pairs, metrics,
                           res.schedule, sampler=sampler,
                           fast_betas=fast_betas, seed=int(s) + 7919,
                           threads=threads)
            for srow in rep.summary():
                long_rows.append((float(a), int(s), srow["metric"],
                                  srow["enhanced_mean"], srow["noisy_mean"],
                                  srow["n"]))
                sums.setdefault(float(a), {}).setdefault(
                    srow["metric"], []).append(srow["enhanced_mean"])
                unprocessed.setdefault(srow["metric"], srow["noisy_mean"])
            if progress is not None:
                progress(a, s, rep)
    by_alpha = {a: {m: float(np.mean(v)) for m, v in inner.items()}
                for a, inner in sums.items()}
    return SweepResult(long_rows, by_alpha, unprocessed)


def write_sweep_csv(path, sweep: SweepResult, metric_names) -> None:
    """Compact comparison table: unprocessed row plus one row per alpha."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["system"] + list(metric_names))
        wr.writerow(["unprocessed"] + [repr(sweep.unprocessed[m])
                                       for m in metric_names])
        for a in sorted(sweep.by_alpha):
            wr.writerow([f"alpha={a:g}"] + [repr(sweep.by_alpha[a][m])
                                            for m in metric_names])


# ---------------------------------------------------------------------------
# schedule-mismatch probe

@dataclass
class MismatchRow:
    id: str
    elbo_sum: float       # regression loss summed over every step
    rollout_reward: float  # cumulative metric improvement along the walk
    metric_delta: float   # end-to-end metric gain over the degraded input


@dataclass
class MismatchResult:
    rows: list
    corr_elbo: float      # corr(elbo_sum, metric_delta)
    corr_reward: float    # corr(rollout_reward, metric_delta)


def mismatch_experiment(dnet: DiffusionNet, params_elbo: ParamSet,
                        params_metric: ParamSet, pairs: list[SignalPair],
                        sched: NoiseSchedule, reward_metric: MetricSpec,
                        report_metric: MetricSpec, seed: int = 0) -> MismatchResult:
    """Compare two per-utterance training signals against realized quality.

    For each utterance: sum the regression loss of the regression-only model
    over all steps (fresh noise per step), then walk the metric-trained
    model's deterministic reverse chain accumulating stepwise reward, and
    measure the end-to-end metric gain of that same walk.  Returns the two
    Pearson correlations against the gain.
    """
    if len(pairs) < 3:
        raise DataError("mismatch probe needs at least 3 utterances")
    rows = []
    for k, pair in enumerate(pairs):
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(k,)))
        x0_32 = pair.x0.astype(np.float32)
        y32 = pair.y.astype(np.float32)
        x0b = x0_32[None, :]
        yb = y32[None, :]
        elbo_sum = 0.0
        for t in range(1, sched.T + 1):
            t_b = np.array([t])
            eps = rng.standard_normal((1, y32.size)).astype(np.float32)
            x_t = forward_sample_batch(x0b, yb, t_b, eps, sched)
            target = target_noise_batch(x0b, yb, t_b, eps, sched)
            pred = dnet.forward(params_elbo, x_t, yb,
                                t_b.astype(np.float64)).value
            elbo_sum += float(np.mean(np.abs(pred - target)))

        x = math.sqrt(float(sched.alpha_bar[sched.T])) * y32
        m_cur = reward_metric.evaluate(x, pair.x0)
        total_r = 0.0
        for t in range(sched.T, 0, -1):
            pred = dnet.forward(params_metric, x, y32, float(t)).value
            x = float(sched.coef_x[t]) * x + float(sched.coef_y[t]) * y32 \
                - float(sched.coef_eps[t]) * pred
            m_prev = reward_metric.evaluate(x, pair.x0)
            total_r += m_prev - m_cur
            m_cur = m_prev
        delta = report_metric.evaluate(x, pair.x0) \
            - report_metric.evaluate(pair.y, pair.x0)
        rows.append(MismatchRow(pair.id, elbo_sum, total_r, delta))

    elbo = np.array([r.elbo_sum for r in rows])
    rew = np.array([r.rollout_reward for r in rows])
    dlt = np.array([r.metric_delta for r in rows])
    if elbo.std() == 0.0 or rew.std() == 0.0 or dlt.std() == 0.0:
        raise DataError("mismatch probe: a column has zero variance, "
                        "correlations are undefined")
    corr_elbo = float(np.corrcoef(elbo, dlt)[0, 1])
    corr_reward = float(np.corrcoef(rew, dlt)[0, 1])
    return MismatchResult(rows, corr_elbo, corr_reward)


def write_mismatch_csv(path, result: MismatchResult) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["id", "elbo_sum", "rollout_reward", "metric_delta"])
        for r in result.rows:
            wr.writerow([r.id, repr(r.elbo_sum), repr(r.rollout_reward),
                         repr(r.metric_delta)])
        wr.writerow([])
        wr.writerow(["corr_elbo", repr(result.corr_elbo)])
        wr.writerow(["corr_reward", repr(result.corr_reward)])
