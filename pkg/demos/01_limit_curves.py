# %% [markdown]
# # Limit dispersion curves and their crossings
#
# Without holes the cell problem separates and every eigenvalue is
# (eta + 2 pi j)^2 + (pi k / H)^2.  We list the crossings, see which ones
# can open a gap, and check the finite element solver against the formula.

# %%
import math

import numpy as np

from perfstrip.fem import BlochAssembler, solve_lowest
from perfstrip.geometry import CellSpec
from perfstrip.limit_model import find_nodes, limit_eigenvalues
from perfstrip.meshgen import mesh_cell

H = 0.4

# %%
for e in limit_eigenvalues(H, 0.0, 6):
    print(f"(j={e.j:+d}, k={e.k})  {e.value / math.pi ** 2:.4f} pi^2")

# %% [markdown]
# The crossings up to 5 pi^2.  Only two of them carry a gap: the one at
# eta = pi where the two lowest curves meet, and the one at eta = 0 where
# the j = +1 and j = -1 curves meet.

# %%
for n in find_nodes(H, 5 * math.pi ** 2):
    print(f"{n.label():48s} {n.status:20s} {'proven' if n.proven else ''}")

# %% [markdown]
# The heavier the height, the earlier the first transversal mode arrives; at
# H = 0.7 it sits below 4 pi^2 and hides the crossing at eta = 0.

# %%
for n in find_nodes(0.7, 5 * math.pi ** 2):
    if n.eta_star == 0.0 and set(n.branches) == {(1, 0), (-1, 0)}:
        print("H = 0.7:", n.status, "-", n.rule)

# %% [markdown]
# ## The same spectrum from P1 elements

# %%
mesh = mesh_cell(CellSpec(H, 0), 0.01)
asm = BlochAssembler(mesh)
for eta in (0.0, math.pi / 2, math.pi):
    fem = solve_lowest(asm(eta), 5).values
    exact = np.array([e.value for e in limit_eigenvalues(H, eta, 5)])
    rel = np.abs(fem - exact) / np.maximum(exact, 1.0)
    print(f"eta={eta:.4f}  max relative error {rel.max():.2e}")

# %% [markdown]
# At eta = pi the two lowest eigenvalues coincide to round-off, because the
# quasi-periodic discretization treats both crossing waves alike.

# %%
v = solve_lowest(asm(math.pi), 2).values
print(v, abs(v[1] - v[0]))
