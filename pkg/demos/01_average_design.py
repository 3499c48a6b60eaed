# %% [markdown]
# # The average design and local positivity
#
# An adaptive experiment uses a different randomization function for each
# unit. The estimators in `adaptrial` weight by the average of those
# functions. This demo shows why that matters when some units are
# randomized deterministically.

# %%
import numpy as np

from adaptrial import DesignFunction, average_design, positivity_check

always = DesignFunction.constant(1.0)
never = DesignFunction.constant(0.0)
designs = [always, never] * 5

# %% [markdown]
# Each design alone puts zero mass on one arm. Their average does not.

# %%
grid = np.linspace(0, 3, 7)
print("gbar(1|w):", average_design(designs, grid, 1))
print("each design positive? ", [positivity_check([d], grid, 0.05) for d in (always, never)])
print("average positive?     ", positivity_check(designs, grid, 0.4))

# %% [markdown]
# Designs of different kinds mix freely. A Neyman-type design is stored as
# its fitted coefficients, so it can be re-evaluated at any covariate later.

# %%
from adaptrial.designs import gamma_design, neyman_design

ney = neyman_design((1.0, 0.0, 0.0, 3.0), (41.5, -40.5, 13.5, -1.5))
tilt = gamma_design((0.4, -0.3), nu=0.1, b=1.0)
for w in (0.5, 1.5, 2.5):
    print(f"w={w}: neyman {ney(w):.3f}  tilt {tilt(w):.3f}  average {average_design([ney, tilt], w):.3f}")
