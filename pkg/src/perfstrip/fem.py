"""P1 finite elements for the Floquet-Bloch cell problem and the strip correctors.

The cell problem is discretized directly in the quasi-periodic space: the
value at a right-wall vertex is ``exp(i eta)`` times the value at its
left-wall partner.  The plain Neumann stiffness and mass matrices are
assembled once; each Floquet parameter only recombines three cached pieces.
Compared with the periodic gauge ``U = exp(i eta x_1) V`` this keeps the
discretization error tied to the physical wavenumber ``eta + 2 pi j`` of a
branch (both branches crossing at ``eta = pi`` are resolved alike), and at
``eta = pi`` the pencil is real.

Reduced eigenvectors hold the values at non-slave vertices;
``BlochSystem.expand`` returns quasi-periodic vertex values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .meshgen import PeriodicMesh

DENSE_CEILING = 4000
SOLVER_TOL = 1e-9


class AssemblyError(RuntimeError):
    pass


class SolvabilityError(ValueError):
    """Neumann data violates the compatibility condition int F + int G = 0."""


class CapacityError(RuntimeError):
    pass


class SolverError(RuntimeError):
    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def dof_map(mesh: PeriodicMesh) -> tuple:
    """Map mesh vertices to reduced DOFs (slaves merged onto masters).

    Returns ``(dofs, ndof)``; chains such as corner vertices paired twice are
    resolved transitively.
    """
    n = mesh.n_vertices
    parent = np.arange(n)
    pairs = mesh.periodic_pairs
    if mesh.kind == "cell":
        left = set(mesh.tagged("left").ravel().tolist())
        right = set(mesh.tagged("right").ravel().tolist())
        paired_m = set(pairs[:, 0].tolist())
        paired_s = set(pairs[:, 1].tolist())
        if left - paired_m or right - paired_s:
            raise AssemblyError("unpaired lateral trace vertex")
    for m, s in pairs:
        parent[s] = m
    # resolve chains
    for _ in range(3):
        parent = parent[parent]
    uniq, dofs = np.unique(parent, return_inverse=True)
    return dofs.ravel(), len(uniq)


def _p1_geometry(mesh: PeriodicMesh):
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0])
                  - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    if np.any(area <= 0):
        raise AssemblyError("nonpositive triangle area")
    # gradients of barycentric coordinates
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1) / (2 * area[:, None])
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1) / (2 * area[:, None])
    return area, b, c


def _assemble(mesh: PeriodicMesh, dofs, ndof, local):
    """Sum (m, 3, 3) element blocks into an ndof x ndof CSR matrix."""
    t = dofs[mesh.triangles]
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    A = sp.coo_matrix((local.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()
    A.sum_duplicates()
    return A


def element_matrices(mesh: PeriodicMesh):
    """Element stiffness, mass and first-derivative coupling blocks.

    Block entry ``[e, i, j]`` pairs test function i with trial function j;
    the coupling is ``int phi_j d_1 phi_i - d_1 phi_j phi_i``.
    """
    area, b, c = _p1_geometry(mesh)
    S = area[:, None, None] * (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :])
    Mloc = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0
    M = area[:, None, None] * Mloc[None]
    C = (area / 3.0)[:, None, None] * (b[:, :, None] - b[:, None, :])
    return S, M, C


@dataclass(frozen=True, eq=False)
class BlochSystem:
    """Hermitian pencil ``K(eta) v = Lambda M v`` on the reduced DOFs."""

    eta: float
    K: sp.csr_matrix
    M: sp.csr_matrix
    dof_map: np.ndarray
    mesh: Optional[PeriodicMesh] = None
    phases: Optional[np.ndarray] = None

    @property
    def ndof(self) -> int:
        return self.K.shape[0]

    def expand(self, v: np.ndarray) -> np.ndarray:
        """Quasi-periodic vertex values of a reduced vector."""
        out = v[self.dof_map]
        return out if self.phases is None else out * self.phases


@dataclass(frozen=True, eq=False)
class RealSystem:
    """Real Neumann/periodic system ``K w = F`` with mass matrix ``M``."""

    K: sp.csr_matrix
    M: sp.csr_matrix
    F: np.ndarray
    dof_map: np.ndarray
    mesh: Optional[PeriodicMesh] = None

    @property
    def ndof(self) -> int:
        return self.K.shape[0]


class BlochAssembler:
    """Caches the eta-independent pieces so sweeps only combine three matrices.

    With ``T(eta)`` mapping reduced DOFs to vertex values (slave = e^{i eta}
    master) the pencil is ``T^H K0 T``, ``T^H M0 T``, which splits into
    ``A + e^{i eta} B + e^{-i eta} B^T``.
    """

    def __init__(self, mesh: PeriodicMesh):
        if mesh.kind != "cell":
            raise AssemblyError("Bloch assembly needs a cell mesh with left/right pairing")
        self.mesh = mesh
        self.dofs, self.ndof = dof_map(mesh)
        n = mesh.n_vertices
        ident = np.arange(n)
        S, M, _ = element_matrices(mesh)
        K0 = _assemble(mesh, ident, n, S)
        M0 = _assemble(mesh, ident, n, M)
        slave = np.zeros(n, dtype=bool)
        slave[mesh.periodic_pairs[:, 1]] = True
        self.slave = slave
        R0 = sp.csr_matrix((np.where(slave, 0.0, 1.0), (ident, self.dofs)), shape=(n, self.ndof))
        Sl = sp.csr_matrix((np.where(slave, 1.0, 0.0), (ident, self.dofs)), shape=(n, self.ndof))
        self.KA = (R0.T @ K0 @ R0 + Sl.T @ K0 @ Sl).tocsr()
        self.KB = (R0.T @ K0 @ Sl).tocsr()
        self.MA = (R0.T @ M0 @ R0 + Sl.T @ M0 @ Sl).tocsr()
        self.MB = (R0.T @ M0 @ Sl).tocsr()

    def phases(self, eta: float) -> np.ndarray:
        """Vertex multipliers turning reduced values into quasi-periodic ones."""
        return np.where(self.slave, np.exp(1j * eta), 1.0)

    def __call__(self, eta: float) -> BlochSystem:
        eta = float(eta)
        z = np.exp(1j * eta)
        K = self.KA + z * self.KB + np.conj(z) * self.KB.T
        M = self.MA + z * self.MB + np.conj(z) * self.MB.T
        if eta == 0.0:
            K, M = K.real, M.real
        return BlochSystem(eta, K.tocsr(), M.tocsr(), self.dofs, self.mesh,
                           self.phases(eta))


def assemble_bloch(mesh: PeriodicMesh, eta: float) -> BlochSystem:
    """P1 Galerkin pencil of the quasi-periodic cell problem for ``eta``."""
    if not -np.pi - 1e-12 <= eta <= np.pi + 1e-12:
        raise AssemblyError(f"eta={eta} outside [-pi, pi]")
    return BlochAssembler(mesh)(eta)


def _edge_normals(mesh: PeriodicMesh, edges: np.ndarray):
    p, q = mesh.vertices[edges[:, 0]], mesh.vertices[edges[:, 1]]
    d = q - p
    L = np.hypot(d[:, 0], d[:, 1])
    # domain on the left of (p -> q): outward normal is (dy, -dx)
    nu = np.column_stack([d[:, 1], -d[:, 0]]) / L[:, None]
    return p, q, L, nu


NEUMANN_DATA = ("-nu1", "-nu2", "volume_one")


def assemble_real_neumann(mesh: PeriodicMesh, neumann_data: str,
                          check: bool = True) -> RealSystem:
    """Real stiffness/mass and load for the strip corrector problems.

    ``neumann_data``: ``"-nu1"`` (G = -nu_1 on the hole), ``"-nu2"``
    (G = -nu_2), or ``"volume_one"`` (F = 1, no boundary data).  ``nu`` is
    the normal pointing out of the meshed domain, i.e. into the hole.
    Boundary integrals use two-point Gauss quadrature per polygon edge.
    """
    if neumann_data not in NEUMANN_DATA:
        raise ValueError(f"neumann_data must be one of {NEUMANN_DATA}")
    dofs, ndof = dof_map(mesh)
    S, Mloc, _ = element_matrices(mesh)
    K = _assemble(mesh, dofs, ndof, S)
    M = _assemble(mesh, dofs, ndof, Mloc)
    F = np.zeros(ndof)
    vol = 0.0
    bnd = 0.0
    if neumann_data == "volume_one":
        area = mesh.triangle_areas()
        np.add.at(F, dofs[mesh.triangles].ravel(), np.repeat(area / 3.0, 3))
        vol = float(area.sum())
    else:
        edges = mesh.hole_edges()
        if len(edges):
            p, q, L, nu = _edge_normals(mesh, edges)
            g = -nu[:, 0] if neumann_data == "-nu1" else -nu[:, 1]
            gp = np.array([0.5 - 0.5 / np.sqrt(3), 0.5 + 0.5 / np.sqrt(3)])
            for s in gp:
                w = 0.5 * L * g  # Gauss weight 1/2 on [0, 1] times edge length
                np.add.at(F, dofs[edges[:, 0]], w * (1 - s))
                np.add.at(F, dofs[edges[:, 1]], w * s)
            bnd = float(np.sum(g * L))
    if check:
        scale = max(np.abs(F).sum(), 1e-300)
        if abs(vol + bnd) > 1e-8 * scale:
            raise SolvabilityError(
                f"compatibility violated: int F + int G = {vol + bnd:.3e}"
            )
    return RealSystem(K, M, F, dofs, mesh)


def solve_mean_zero(system: RealSystem) -> np.ndarray:
    """Solve the singular Neumann system with the constraint ``int w = 0``.

    Uses the bordered symmetric system ``[[K, m], [m^T, 0]]`` where
    ``m = M 1``; returns vertex values.
    """
    m = np.asarray(system.M @ np.ones(system.ndof)).ravel()
    n = system.ndof
    A = sp.bmat([[system.K, sp.csr_matrix(m[:, None])],
                 [sp.csr_matrix(m[None, :]), None]], format="csc")
    rhs = np.concatenate([system.F, [0.0]])
    sol = spla.spsolve(A, rhs)
    return sol[:n][system.dof_map]


@dataclass
class EigenSeq:
    values: np.ndarray
    vectors: Optional[np.ndarray] = None
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __len__(self):
        return len(self.values)


def _residuals(K, M, vals, vecs):
    # normwise backward error of each pair, independent of the mesh scaling
    R = K @ vecs - (M @ vecs) * vals[None, :]
    num = np.linalg.norm(R, axis=0)
    nK = spla.norm(K, 1) if sp.issparse(K) else np.linalg.norm(K, 1)
    nM = spla.norm(M, 1) if sp.issparse(M) else np.linalg.norm(M, 1)
    den = (nK + np.abs(vals) * nM) * np.linalg.norm(vecs, axis=0)
    return num / den


def solve_lowest(system: Union[BlochSystem, RealSystem], count: int,
                 tol: float = SOLVER_TOL, dense_ceiling: int = DENSE_CEILING,
                 iterative: bool = True, vectors: bool = True) -> EigenSeq:
    """Lowest ``count`` eigenpairs of ``K v = Lambda M v``, ascending.

    Below ``dense_ceiling`` DOFs the pencil is solved densely (Cholesky of M
    then Hermitian eigendecomposition).  Above it, shift-invert Lanczos about
    ``sigma = -1`` is used, i.e. the largest eigenvalues of
    ``(K + M)^{-1} M`` which are ``1 / (1 + Lambda)``.

    Residuals are backward errors
    ``||K v - Lambda M v|| / ((||K||_1 + |Lambda| ||M||_1) ||v||)``.
    """
    K, M = system.K, system.M
    n = K.shape[0]
    if count < 1 or count > n:
        raise ValueError(f"count must be in 1..{n}")
    if n <= dense_ceiling:
        vals, vecs = sla.eigh(K.toarray(), M.toarray(), subset_by_index=[0, count - 1])
    else:
        if not iterative:
            raise CapacityError(f"{n} DOFs exceed the dense ceiling {dense_ceiling}")
        vals, vecs = _shift_invert(K, M, count, tol)
    vals = np.asarray(vals.real if np.iscomplexobj(vals) else vals, dtype=float)
    order = np.argsort(vals, kind="stable")
    vals, vecs = vals[order], vecs[:, order]
    res = _residuals(K, M, vals, vecs)
    # dense solves are exact up to rounding; hold them to a looser floor
    limit = tol if n > dense_ceiling else max(tol, 1e-8)
    if np.any(res > limit):
        raise SolverError(f"eigen residual {res.max():.3e} above {limit:.1e}", res.max())
    return EigenSeq(vals, vecs if vectors else None, res)


def _shift_invert(K, M, count, tol):
    A = (K + M).tocsc()
    lu = spla.splu(A)
    n = K.shape[0]
    dtype = np.result_type(K.dtype, M.dtype)

    def matvec(x):
        return lu.solve(np.asarray(M @ x, dtype=dtype))

    op = spla.LinearOperator((n, n), matvec=matvec, dtype=dtype)
    # B = (K+M)^{-1} M is self-adjoint in the M inner product
    k = count + 2 if count + 2 < n - 1 else count
    ncv = min(n - 1, max(2 * k + 1, 20))
    v0 = np.ones(n, dtype=dtype)
    last = None
    for attempt in range(3):
        try:
            mu, vecs = spla.eigs(op, k=k, which="LM", ncv=ncv, tol=tol * 1e-2, v0=v0,
                                 maxiter=20 * n)
            break
        except spla.ArpackNoConvergence as exc:
            ncv = min(n - 1, 2 * ncv)
            last = exc
    else:
        raise SolverError("shift-invert iteration did not converge") from last
    mu = mu.real
    lam = 1.0 / mu - 1.0
    order = np.argsort(lam)[:count]
    vecs = vecs[:, order]
    # M-orthonormalize (Rayleigh-Ritz on the converged subspace)
    Kr = vecs.conj().T @ (K @ vecs)
    Mr = vecs.conj().T @ (M @ vecs)
    Kr = 0.5 * (Kr + Kr.conj().T)
    Mr = 0.5 * (Mr + Mr.conj().T)
    lam, Y = sla.eigh(Kr, Mr)
    vecs = vecs @ Y
    if not np.issubdtype(dtype, np.complexfloating):
        vecs = vecs.real
    return lam, vecs


def residual_certificate(system: BlochSystem, trial: np.ndarray, mu_trial: float) -> float:
    """Radius ``delta`` with some pencil eigenvalue ``mu_p = 1/(1+Lambda_p)`` within it.

    Works in the energy inner product ``<u, v> = v^H (K + M) u`` where the
    operator ``B = (K + M)^{-1} M`` is self-adjoint, so
    ``min_p |mu_p - mu_trial| <= ||B u - mu_trial u|| / ||u||``.
    """
    u = np.asarray(trial)
    if not np.any(u):
        raise ValueError("trial vector must be nonzero")
    A = (system.K + system.M).tocsc()
    Mu = system.M @ u
    if A.shape[0] <= DENSE_CEILING:
        Bu = sla.solve(A.toarray(), Mu, assume_a="her")
    else:
        Bu = spla.spsolve(A, Mu)
    r = Bu - mu_trial * u
    num = np.vdot(r, A @ r).real
    den = np.vdot(u, A @ u).real
    return float(np.sqrt(max(num, 0.0) / den))


def dump_coo(A, path) -> None:
    """Coordinate text dump ``i j re im`` of a sparse matrix."""
    A = sp.coo_matrix(A)
    with open(path, "w") as fh:
        for i, j, v in zip(A.row, A.col, A.data):
            fh.write(f"{i} {j} {np.real(v):.17g} {np.imag(v):.17g}\n")
