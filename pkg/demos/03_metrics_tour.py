"""Tour of the built-in quality metrics and the external-scorer hook.

Each metric maps (candidate, reference) to a scalar where larger is
better.  They disagree on purpose: si_snr ignores overall gain, seg_snr
averages frame-local ratios in dB, neg_mse is a plain squared error with
the sign flipped.  The training loop treats the choice as a plug-in, and
an arbitrary shell command can stand in for all of them.
"""

import os
import sys
import tempfile

import numpy as np

from mose.metric import external_metric, get_metric

rng = np.random.default_rng(3)
n = 4096
ref = np.sin(2 * np.pi * 330.0 * np.arange(n) / 16000.0)
ref += 0.2 * rng.standard_normal(n)

candidates = {
    "identical": ref.copy(),
    "2x gain": 2.0 * ref,
    "light noise": ref + 0.05 * rng.standard_normal(n),
    "heavy noise": ref + 0.5 * rng.standard_normal(n),
    "late burst": np.concatenate([ref[: n // 2],
                                  ref[n // 2:] + 0.8 * rng.standard_normal(n // 2)]),
}

metrics = [get_metric(name) for name in ("si_snr", "seg_snr", "neg_mse")]
header = f"{'candidate':<12}" + "".join(f"{m.name:>12}" for m in metrics)
print(header)
print("-" * len(header))
for label, cand in candidates.items():
    row = f"{label:<12}"
    for m in metrics:
        row += f"{m.evaluate(cand, ref):>12.3f}"
    print(row)

print()
print("si_snr is gain-invariant: the 2x row matches the identical row.")
print("seg_snr and neg_mse both punish the gain error.")

# external scorer: any command that reads two wav paths and prints a float.
# this one scores by negative peak absolute difference.
script = r"""
import sys
import numpy as np
from mose.signals import wav_read
cand, _ = wav_read(sys.argv[1])
ref, _ = wav_read(sys.argv[2])
print(-float(np.max(np.abs(cand - ref))))
"""
with tempfile.TemporaryDirectory() as td:
    path = os.path.join(td, "peak_score.py")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(script)
    peak = external_metric(
        "peak", f"{sys.executable} {path} {{candidate}} {{reference}}")
    print()
    print("external scorer (negative peak error):")
    for label in ("identical", "light noise", "heavy noise"):
        print(f"  {label:<12} {peak.evaluate(candidates[label], ref):+.4f}")
