# %% [markdown]
# # How fast does the average design approach the oracle?
#
# The second moment of the efficient influence curve under the average design
# is computed by quadrature and reported relative to the oracle Neyman value.

# %%
from adaptrial.harness import McConfig, design_convergence_trajectory, population_eic_second_moment
from adaptrial import appendix_b_scenario

scenario = appendix_b_scenario()
print("E[D^2] at gbar = 0.5:", round(population_eic_second_moment(scenario, 0.5), 4))

# %%
rows = design_convergence_trajectory(McConfig(), reps=5)
for r in rows:
    print(f"{r['design']:28s} t={r['time_point']:2d} relative={r['relative']:.4f}")
