# %% [markdown]
# # Boundary-layer constants of a disk
#
# The gap widths depend on the hole only through a handful of numbers
# computed on a single-hole strip: m1, m2 and M_Xi.  Here we compute them
# for a disk of radius 0.08 in a strip of height 0.4.

# %%
from perfstrip.cell_constants import (compute_cell_constants, reference_strip, richardson,
                                      solve_W1)
from perfstrip.geometry import HoleShape
from perfstrip.meshgen import mesh_strip, refine_uniform

H = 0.4
disk = HoleShape("disk", (0.0, 0.2), (0.08,))
strip = reference_strip(disk, H)
print(f"strip half length T = {strip.T:.3f}")

# %%
cc = compute_cell_constants(strip, 0.0025)
d = cc.diagnostics
print(f"m1   = {cc.m1:.6f}  (energy {d['m1_energy']:.8f}, far field {d['m1_farfield']:.8f})")
print(f"m2   = {cc.m2:.2e}  (zero for a symmetric hole)")
print(f"M_Xi = {cc.M_Xi:.6f}")
print(f"decay rate of W1_0: {d['decay_check']['W1_0']['rate']:.2f}, "
      f"expected about {d['decay_check']['expected_rate']:.2f}")

# %% [markdown]
# The two routes to m1 agree to round-off on any mesh, so they say nothing
# about discretization error.  Nested refinement does: the energy converges
# at second order and Richardson extrapolation removes the leading term.

# %%
coarse = mesh_strip(strip, 0.008, grading=1.3)
meshes = [coarse, refine_uniform(coarse), refine_uniform(refine_uniform(coarse))]
m1 = [solve_W1(strip, 0.008, mesh=m)[1]["m1_energy"] for m in meshes]
for m, v in zip(meshes, m1):
    print(f"{m.n_vertices:6d} vertices  m1 = {v:.8f}")
print("successive ratio", (m1[1] - m1[0]) / (m1[2] - m1[1]))
print("extrapolated", richardson(m1[1], m1[2]))

# %% [markdown]
# A tilted ellipse is not mirror symmetric, so m2 no longer vanishes, and
# reflecting the hole flips its sign.

# %%
tilted = HoleShape("ellipse", (0.0, 0.2), (0.1, 0.05, 0.5))
a = compute_cell_constants(reference_strip(tilted, H), 0.005).m2
b = compute_cell_constants(reference_strip(tilted.reflected(H), H), 0.005).m2
print(f"m2 = {a:.6f}, reflected {b:.6f}")
