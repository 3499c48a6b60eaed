# %% [markdown]
# # Monte Carlo comparison of designs
#
# A reduced replication count keeps this quick; the acceptance suite uses 500.
# Designs share common random numbers, so variance ratios are paired.

# %%
from dataclasses import replace

from adaptrial.harness import McConfig, relvar_designs, relvar_estimators, run_monte_carlo

cfg = McConfig(reps=40, time_points=(2, 6, 10))
runs = {k: run_monte_carlo(replace(cfg, design_kind=k)) for k in ("non_adaptive", "standard_neyman")}

# %%
for kind, m in runs.items():
    for t in cfg.time_points:
        r = m.row("ADL-TMLE", t)
        print(f"{kind:16s} n={r['n']} bias={r['bias']:+.4f} var={r['var']:.5f} coverage={r['coverage']:.2f}")

# %%
for r in relvar_estimators(runs["standard_neyman"]):
    print(f"Var(ADL-TMLE)/Var(AD-TMLE) at n={r['n']}: {r['ratio']:.3f}")
for r in relvar_designs(runs["standard_neyman"], runs["non_adaptive"]):
    print(f"standard_neyman / non_adaptive at n={r['n']}: {r['ratio']:.3f} [{r['ci_lo']:.2f}, {r['ci_hi']:.2f}]")
