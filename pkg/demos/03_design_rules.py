# %% [markdown]
# # Design rules
#
# The benefit-driven rule tilts randomization with a cubic blend whose floor
# decays over time. The gbar-driven rule picks each new design so that the
# running average hits a target exactly, clipping to [0, 1] when it cannot.

# %%
import numpy as np

from adaptrial.designs import gamma_blend, gbar_step, nu_schedule

x = np.linspace(-2, 2, 9)
for t in (1, 3, 9):
    nu = nu_schedule(1000 + 250 * t, 1000)
    print(f"t={t} nu={nu:.2e}", np.round(gamma_blend(x, nu, 1.0), 3))

# %%
print("step from gbar=0.5 to target 0.55 at i=2:", gbar_step(2, 0.55, 0.5))
print("late correction saturates:", gbar_step(1000, 0.6, 0.5))

# %% [markdown]
# Run the gbar-driven policy with the true variances and watch the average
# design settle on the oracle allocation.

# %%
from adaptrial import appendix_b_scenario, average_design, oracle_neyman, run_experiment
from adaptrial.designs import GbarDriven

scenario = appendix_b_scenario()
traj = run_experiment(scenario, GbarDriven(oracle_scenario=scenario, n0=1000), 1500, seed=1)
grid = np.linspace(0, 3, 7)
for n in (1000, 1100, 1500):
    gap = np.abs(average_design(traj.designs[:n], grid) - oracle_neyman(scenario, grid)).max()
    print(f"n={n}: max |gbar - oracle| = {gap:.4f}")
print("units with a deterministic design:", int(np.sum((traj.p1 == 0) | (traj.p1 == 1))))
