import math

import numpy as np
import pytest
import scipy.linalg as sla
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from perfstrip.fem import (BlochAssembler, CapacityError, RealSystem, SolvabilityError,
                           assemble_bloch, assemble_real_neumann, residual_certificate,
                           solve_lowest)
from perfstrip.geometry import CellSpec, HoleShape, StripSpec
from perfstrip.limit_model import limit_eigenvalues
from perfstrip.meshgen import mesh_cell, mesh_strip, refine_uniform

PI = math.pi
H = 0.4
DISK = HoleShape("disk", (0.0, 0.2), (0.08,))


@pytest.fixture(scope="module")
def plain():
    return mesh_cell(CellSpec(H, 0), 0.02)


@pytest.fixture(scope="module")
def holed():
    return mesh_cell(CellSpec(H, 2, DISK), 0.015, grading=1.3)


@pytest.fixture(scope="module")
def small():
    # 50 reduced DOFs
    return BlochAssembler(mesh_cell(CellSpec(H, 0), math.sqrt(2) * 0.1))(1.1)


def test_constants_in_kernel_at_zero(holed):
    s = assemble_bloch(holed, 0.0)
    assert np.abs(s.K @ np.ones(s.ndof)).max() < 1e-10


@given(eta=st.floats(-PI, PI))
@settings(max_examples=20, deadline=None)
def test_hermitian_and_conjugate_symmetric(holed, eta):
    asm = BlochAssembler(holed)
    a, b = asm(eta), asm(-eta)
    for A in (a.K, a.M):
        assert abs(A - A.conj().T).max() <= 1e-12 * abs(A).max()
    assert abs(b.K - a.K.conj()).max() <= 1e-12 * abs(a.K).max()
    assert abs(b.M - a.M.conj()).max() <= 1e-12 * abs(a.M).max()


def test_mass_positive_definite(holed):
    M = assemble_bloch(holed, 0.7).M.toarray()
    sla.cholesky(M)


def test_unperforated_values_at_zero(plain):
    v = solve_lowest(assemble_bloch(plain, 0.0), 4).values
    expect = [0, 4 * PI ** 2, 4 * PI ** 2, 6.25 * PI ** 2]
    assert abs(v[0]) < 1e-9
    np.testing.assert_allclose(v[1:], expect[1:], rtol=3e-3)


def test_double_point_at_pi(plain):
    v = solve_lowest(assemble_bloch(plain, PI), 2).values
    assert abs(v[1] - v[0]) <= 1e-10 * PI ** 2
    assert v[0] == pytest.approx(PI ** 2, rel=1e-3)


def test_one_by_one_system():
    s = RealSystem(sp.csr_matrix([[2.0]]), sp.csr_matrix([[1.0]]), np.zeros(1), np.zeros(1, int))
    assert solve_lowest(s, 1).values[0] == pytest.approx(2.0)


def test_capacity_error(plain):
    with pytest.raises(CapacityError):
        solve_lowest(assemble_bloch(plain, 0.3), 2, dense_ceiling=10, iterative=False)


def test_iterative_matches_dense(holed):
    s = assemble_bloch(holed, 1.3)
    d = solve_lowest(s, 5, dense_ceiling=10 ** 6).values
    i = solve_lowest(s, 5, dense_ceiling=10).values
    np.testing.assert_allclose(i, d, rtol=1e-9, atol=1e-9)


def test_spectrum_symmetry_and_periodicity(holed):
    asm = BlochAssembler(holed)
    for eta in (0.4, 2.0):
        a = solve_lowest(asm(eta), 4).values
        b = solve_lowest(asm(-eta), 4).values
        np.testing.assert_allclose(a, b, rtol=1e-10)
    np.testing.assert_allclose(solve_lowest(asm(PI), 4).values,
                               solve_lowest(asm(-PI), 4).values, rtol=1e-10)


def test_nested_refinement_never_raises_eigenvalues(holed):
    fine = refine_uniform(holed)
    for eta in (0.0, 1.0, PI):
        c = solve_lowest(assemble_bloch(holed, eta), 5).values
        f = solve_lowest(assemble_bloch(fine, eta), 5).values
        assert np.all(f <= c + 1e-8 * np.maximum(c, 1.0))


def test_second_order_convergence(plain):
    fine = refine_uniform(plain)
    eta = PI / 2
    exact = np.array([e.value for e in limit_eigenvalues(H, eta, 5)])
    e1 = np.abs(solve_lowest(assemble_bloch(plain, eta), 5).values - exact)
    e2 = np.abs(solve_lowest(assemble_bloch(fine, eta), 5).values - exact)
    assert np.all((3.5 <= e1 / e2) & (e1 / e2 <= 4.5))


def test_neumann_loads_are_compatible():
    mesh = mesh_strip(StripSpec(H, DISK, 1.2), 0.02, grading=1.3)
    for data in ("-nu1", "-nu2"):
        s = assemble_real_neumann(mesh, data)
        assert abs(s.F.sum()) <= 1e-12 * np.abs(s.F).sum()


def test_volume_load_is_incompatible():
    mesh = mesh_strip(StripSpec(H, DISK, 1.2), 0.02, grading=1.3)
    with pytest.raises(SolvabilityError):
        assemble_real_neumann(mesh, "volume_one")


def _energy_spectrum(system):
    # mu = 1/(1+Lambda) with (K+M)-orthonormal eigenvectors
    A = (system.K + system.M).toarray()
    mu, V = sla.eigh(system.M.toarray(), A)
    return mu, V, A


def test_certificate_of_an_eigenvector_is_tiny(small):
    mu, V, _ = _energy_spectrum(small)
    for p in (0, 7, 30):
        assert residual_certificate(small, V[:, p], mu[p]) <= 1e-12


@given(seed=st.integers(0, 2 ** 32 - 1), mt=st.floats(0.0, 1.0))
@settings(max_examples=50, deadline=None)
def test_certificate_interval_contains_an_eigenvalue(small, seed, mt):
    mu, _, _ = _energy_spectrum(small)
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(small.ndof) + 1j * rng.standard_normal(small.ndof)
    delta = residual_certificate(small, u, mt)
    assert np.min(np.abs(mu - mt)) <= delta * (1 + 1e-12)


def test_certificate_is_linear_in_perturbation(small):
    mu, V, A = _energy_spectrum(small)
    p = 5
    rng = np.random.default_rng(7)
    c = rng.standard_normal(len(mu))
    c[p] = 0.0
    w = V @ c
    for tau in (1e-2, 1e-4, 1e-6):
        u = V[:, p] + tau * w
        # exact value from the spectral decomposition
        r = tau * np.sqrt(np.sum((c * (mu - mu[p])) ** 2))
        exact = r / np.sqrt(1 + tau ** 2 * np.sum(c ** 2))
        assert residual_certificate(small, u, mu[p]) == pytest.approx(exact, rel=1e-6)
    slope = np.sqrt(np.sum((c * (mu - mu[p])) ** 2))
    assert residual_certificate(small, V[:, p] + 1e-3 * w, mu[p]) <= slope * 1e-3


def test_zero_trial_rejected(small):
    with pytest.raises(ValueError):
        residual_certificate(small, np.zeros(small.ndof), 0.5)
