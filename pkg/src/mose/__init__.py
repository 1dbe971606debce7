"""mose: metric-oriented signal enhancement.

A conditional diffusion model whose forward process interpolates the clean
signal toward its degraded observation, trained in two phases: plain
combined-noise regression, then an actor-critic phase that points the
enhancer at an arbitrary quality metric through a learned scorer.
Pure numpy; the tape in :mod:`mose.autodiff` supplies the gradients.
"""

from .diffusion import (ReverseCoefficients, align_inference_steps,
                        default_fast_schedule, elbo_loss, enhance,
                        fast_sample, forward_sample, forward_sample_batch,
                        reverse_coefficients, reverse_mean_batch,
                        reverse_step, target_noise, target_noise_batch)
from .errors import (AlignmentError, CheckFailure, CheckpointError,
                     ConfigError, DataError, DivergenceError, MetricError,
                     MoseError, ScheduleError)
from .metric import (MetricSpec, external_metric, get_metric, neg_mse,
                     register_metric, seg_snr, si_snr)
from .nets import (AdamState, DiffusionNet, ParamSet, StepEmbedding,
                   ValueNet, adam_step, load_param_file, save_param_file)
from .rl import Transition, actor_loss, bellman_loss, critic_target, reward
from .schedule import (NoiseSchedule, StepConstants, build_schedule,
                       dump_table, interpolation_weight, schedule_from_betas)
from .signals import (LatentState, SignalPair, load_corpus, mix_at_snr,
                      synth_corpus, wav_read, wav_write, write_corpus)
from .trainer import (CheckpointState, EvalReport, EvalRow, MismatchResult,
                      MismatchRow, SweepResult, TelemetryRow, TrainConfig,
                      TrainResult, alpha_sweep, checkpoint_load,
                      checkpoint_save, config_from_mapping, config_hash,
                      config_to_text, evaluate, mismatch_experiment,
                      parse_config_file, read_telemetry_csv, train,
                      write_comparison_csv, write_eval_csv,
                      write_mismatch_csv, write_sweep_csv,
                      write_telemetry_csv)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
