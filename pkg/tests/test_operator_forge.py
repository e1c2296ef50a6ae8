import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from coefficients import CoefficientField, make_class
from coefficients import auxiliary_pair
from operator_forge import (
    B_accretivity,
    B_quadratic_form_bound,
    ForgeError,
    OperatorCache,
    assemble_D,
    assemble_Q,
    assemble_TA,
    assemble_theta,
    dump_matrix,
    load_matrix,
    multiplication_operator,
    range_leakage,
)
from torus_grid import TorusGrid


def _mode_block(T: np.ndarray, grid: TorusGrid, k: int) -> np.ndarray:
    """2x2 matrix of T on span{(e_k, 0), (0, e_k)} for a constant coefficient."""
    e = grid.mode(k) / np.sqrt(grid.N)
    zero = np.zeros(grid.N)
    P = np.stack([np.concatenate([e, zero]), np.concatenate([zero, e])], axis=1)
    return P.conj().T @ T @ P


def test_D_is_self_adjoint_and_kills_constants() -> None:
    grid = TorusGrid(16)
    D = assemble_D(grid).entries
    np.testing.assert_allclose(D, D.conj().T, atol=1e-12)
    np.testing.assert_allclose(D @ np.ones(32), 0.0, atol=1e-12)


def test_identity_coefficient_gives_T_equal_D() -> None:
    grid = TorusGrid(16)
    A = make_class("identity", grid)
    T = assemble_TA(A)
    np.testing.assert_allclose(T.entries, assemble_D(grid).entries, atol=1e-12)
    assert T.meta["factorization_error"] < 1e-12
    assert T.range_basis.shape == (32, 30)
    assert T.kernel_basis.shape == (32, 2)


def test_diagonal_coefficient_mode_symbol() -> None:
    grid = TorusGrid(16)
    a, d = 2.0, 0.5
    samples = np.broadcast_to(np.diag([a, d]).astype(complex), (16, 2, 2)).copy()
    T = assemble_TA(CoefficientField(grid, 1, samples))
    for k in (1, 3):
        block = _mode_block(T.entries, grid, k)
        np.testing.assert_allclose(block, [[0.0, 1j * k * d / a], [-1j * k, 0.0]], atol=1e-10)
        eig = np.sort(np.linalg.eigvals(block).real)
        np.testing.assert_allclose(eig, [-k * np.sqrt(d / a), k * np.sqrt(d / a)], atol=1e-10)


def test_variable_coefficient_range_and_kernel() -> None:
    A = make_class("hermitian", TorusGrid(16), seed=3)
    T = assemble_TA(A)
    assert T.meta["factorization_error"] < 1e-10
    assert range_leakage(T) < 1e-10
    np.testing.assert_allclose(T.entries @ T.kernel_basis, 0.0, atol=1e-9)
    Y = T.range_basis
    np.testing.assert_allclose(Y.conj().T @ Y, np.eye(Y.shape[1]), atol=1e-10)


def test_singular_abar_is_rejected() -> None:
    grid = TorusGrid(8)
    samples = np.broadcast_to(np.eye(2, dtype=complex), (8, 2, 2)).copy()
    samples[2, 0, 0] = 0.0
    with pytest.raises(ForgeError):
        assemble_TA(CoefficientField(grid, 1, samples))


def test_multiplication_operator_acts_pointwise() -> None:
    rng = np.random.default_rng(0)
    blocks = rng.standard_normal((8, 2, 2)) + 1j * rng.standard_normal((8, 2, 2))
    v = rng.standard_normal((2, 8)) + 1j * rng.standard_normal((2, 8))
    expected = np.einsum("xab,bx->ax", blocks, v).reshape(-1)
    np.testing.assert_allclose(multiplication_operator(blocks) @ v.reshape(-1), expected, atol=1e-12)


def test_theta_for_identity_is_bounded_by_one_half() -> None:
    grid = TorusGrid(16)
    A = make_class("identity", grid)
    D = assemble_D(grid).entries
    for t in (0.1, 1.0, 5.0):
        theta = assemble_theta(A, t).entries
        expected = np.linalg.solve(np.eye(32) + t * t * D @ D, t * D)
        np.testing.assert_allclose(theta, expected, atol=1e-10)
        assert np.linalg.norm(theta, 2) <= 0.5 + 1e-12
        np.testing.assert_allclose(assemble_Q(A, t).entries, theta, atol=1e-12)
    with pytest.raises(ForgeError):
        assemble_theta(A, 0.0)


def test_operator_cache_reuses_entries() -> None:
    A = make_class("hermitian", TorusGrid(8), seed=1)
    cache = OperatorCache(maxsize=2)
    first = assemble_Q(A, 0.5, cache)
    second = assemble_Q(A, 0.5, cache)
    assert first is second
    assert cache.hits >= 1
    assemble_theta(A, 2.0, cache)
    assemble_theta(A, 3.0, cache)
    assert len(cache) == 2
    cache.clear()
    assert len(cache) == 0


def test_B_accretivity_for_identity_and_hermitian() -> None:
    grid = TorusGrid(16)
    assert B_accretivity(make_class("identity", grid)) == pytest.approx(1.0)
    A = make_class("hermitian", grid, seed=2)
    rng = np.random.default_rng(5)
    assert B_quadratic_form_bound(A, rng, trials=10) >= B_accretivity(A) - 1e-12


def test_dump_matrix_writes_complex128(tmp_path: Path) -> None:
    T = assemble_TA(make_class("constant", TorusGrid(8), seed=6))
    path = tmp_path / "ta.bin"
    dump_matrix(T, str(path))
    assert path.stat().st_size == T.dim * T.dim * 16
    np.testing.assert_array_equal(load_matrix(str(path), T.dim), T.entries)
    with pytest.raises(ForgeError):
        load_matrix(str(path), T.dim + 1)


def test_D_mode_blocks_and_square() -> None:
    grid = TorusGrid(16)
    D = assemble_D(grid).entries
    for k in (1, 2, 5):
        block = _mode_block(D, grid, k)
        np.testing.assert_allclose(block, [[0.0, 1j * k], [-1j * k, 0.0]], atol=1e-10)
        np.testing.assert_allclose(np.sort(np.linalg.eigvals(block).real), [-k, k], atol=1e-10)
        v = np.concatenate([grid.mode(k), 0.3 * grid.mode(k)])
        np.testing.assert_allclose(D @ (D @ v), k * k * v, atol=1e-9)
    np.testing.assert_allclose(_mode_block(D, grid, 0), 0.0, atol=1e-12)


def test_constant_hermitian_spectrum_is_sheared_by_real_off_diagonal() -> None:
    grid = TorusGrid(16)
    a, d = 2.0, 1.0

    def constant(b: complex) -> CoefficientField:
        block = np.array([[a, b], [np.conj(b), d]], dtype=complex)
        return CoefficientField(grid, 1, np.broadcast_to(block, (16, 2, 2)).copy())

    b = 0.3 + 0.4j
    T = assemble_TA(constant(b)).entries
    for k in (1, 3):
        eig = np.linalg.eigvals(_mode_block(T, grid, k))
        eig = eig[np.argsort(eig.real)]
        # a lambda^2 - 2ik Re(b) lambda - d k^2 = 0
        root = k * np.sqrt(a * d - b.real ** 2) / a
        expected = 1j * k * b.real / a + np.array([-root, root])
        np.testing.assert_allclose(eig, expected, atol=1e-10)

    eig = np.linalg.eigvals(assemble_TA(constant(0.4j)).entries)
    assert np.abs(eig.imag).max() <= 1e-8 * np.abs(eig).max()


def test_adjoint_of_tBstarD_is_tDB() -> None:
    A = make_class("hermitian", TorusGrid(16), seed=5)
    B = auxiliary_pair(A).B
    B_op = multiplication_operator(B)
    B_star_op = multiplication_operator(np.conj(np.transpose(B, (0, 2, 1))))
    D = assemble_D(A.grid).entries
    t = 0.7
    left = (t * B_star_op @ D).conj().T
    right = t * D @ B_op
    assert np.linalg.norm(left - right) <= 1e-10 * np.linalg.norm(right)
