# %% [markdown]
# # Every solution of a four-bus mesh
#
# A walk through the monodromy solver on the complete graph K4 with random
# susceptances, checked against the total-degree homotopy.

# %%
from __future__ import annotations

import numpy as np

from monoflow.baseline import compare_with_monodromy, solve_total_degree
from monoflow.monodromy import run_monodromy, seed
from monoflow.network import build_system, complete_graph, enumerate_trivial_solutions, random_susceptances
from monoflow.numsys import evaluate

rng = np.random.default_rng(2024)
net = complete_graph(4, random_susceptances(6, rng))
system = build_system(net)
print(net.to_text())

# %% [markdown]
# The trivial layer: every sign pattern of x with y = 0 solves the system.

# %%
trivials = enumerate_trivial_solutions(net)
print(len(trivials), "trivial solutions")

# %% [markdown]
# A seed pair: pick angles first, then solve the linear balance rows for b.

# %%
pair = seed(net, rng)
print("kernel residual", np.abs(pair.A @ pair.b_seed).max())
print("system residual", np.abs(evaluate(system, pair.b_seed, pair.z_seed)).max())

# %%
mono = run_monodromy(system, net.susceptances, rng=rng)
reg = mono.registry
print("nontrivial", reg.nontrivial_count, "orbits", len(reg), "histogram", reg.orbit_histogram())
print("loops", mono.stats)

# %% [markdown]
# Independent check by the total-degree homotopy (4^3 = 64 paths).

# %%
td = solve_total_degree(system, rng=np.random.default_rng(1))
report = compare_with_monodromy(td, reg, trivials)
print("paths", td.path_count, "finite", td.finite_paths, "matched", report.matched, "ok", report.ok)
