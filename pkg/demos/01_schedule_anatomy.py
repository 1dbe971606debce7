"""Walk through the noise schedule that drives everything else.

The forward process mixes the clean signal toward a scaled copy of the
degraded one while injecting Gaussian noise.  Three sequences control it:
the usual variance ladder beta_t, the signal survival alpha_bar_t, and the
interpolation weight w_t that decides how much of the mean has slid from
clean to degraded.  At the final step w hits 1: the marginal centers on the
degraded signal and the walk can start from it at inference time with no
clean reference in sight.
"""

import numpy as np

from mose import build_schedule, dump_table, interpolation_weight

sched = build_schedule(50, 1e-4, 0.035)

print("T =", sched.T, "| weight_mode =", sched.weight_mode)
print()
print(f"{'t':>3} {'beta':>10} {'alpha_bar':>12} {'w':>10} {'delta':>12} "
      f"{'delta_tilde':>12}")
for t in (1, 10, 25, 40, 49, 50):
    print(f"{t:>3} {sched.beta[t]:>10.6f} {sched.alpha_bar[t]:>12.8f} "
          f"{sched.w[t]:>10.7f} {sched.delta[t]:>12.4e} "
          f"{sched.delta_tilde[t]:>12.4e}")

print()
print("terminal pin: w[50] =", sched.w[50])
raw = interpolation_weight(float(sched.alpha_bar[50]))
print("the weight formula alone would give", raw)

# delta is the effective noise variance after the weighted mean is removed;
# it dips near t=1 where almost nothing has happened yet
print()
print("min delta:", sched.delta[1:].min(), "at t =",
      int(np.argmin(sched.delta[1:]) + 1))

# the reverse-step noise never exceeds the forward noise of the step below,
# which is what makes the conjugate walk contract
assert np.all(sched.delta_tilde[2:] <= sched.delta[1:-1] + 1e-15)
print("contraction delta_tilde[t] <= delta[t-1] holds for every step")

with open("schedule_table.tsv", "w", encoding="utf-8") as fh:
    fh.write(dump_table(sched))
print()
print("full table written to schedule_table.tsv")

# with the weight forced to zero the same machinery is a plain
# unconditional diffusion; compare the reverse variances
zero = build_schedule(20, 1e-3, 0.05, weight_mode="zero")
print()
print("zero-weight sibling: delta == 1 - alpha_bar at every step ->",
      bool(np.allclose(zero.delta[1:], 1.0 - zero.alpha_bar[1:])))
