# %% [markdown]
# # Solution counts for small meshes and rings
#
# Totals should be C(2(n-1), n-1) for complete graphs and
# n * C(n-1, floor((n-1)/2)) for cycles, independent of the draw.

# %%
from __future__ import annotations

from math import comb

import numpy as np

from monoflow.monodromy import run_monodromy
from monoflow.network import build_system, complete_graph, cycle_graph, random_susceptances

cases = [("complete", complete_graph, n) for n in (4, 5)] + [("cycle", cycle_graph, n) for n in (5, 6, 7)]

# %%
for name, family, n in cases:
    template = family(n)
    totals = set()
    for draw in range(3):
        net = family(n, random_susceptances(template.num_edges, np.random.default_rng(draw)))
        res = run_monodromy(build_system(net), net.susceptances, rng=np.random.default_rng(draw + 1))
        totals.add(res.registry.nontrivial_count + 2 ** (n - 1))
    want = comb(2 * (n - 1), n - 1) if name == "complete" else n * comb(n - 1, (n - 1) // 2)
    print(f"{name}{n}: found {sorted(totals)}, formula {want}")
