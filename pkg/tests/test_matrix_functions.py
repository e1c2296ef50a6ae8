import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from analysis_norms import random_lowmode_field
from coefficients import make_class, resample
from matrix_functions import (
    CUBIC_PSI,
    EXP_PSI,
    PSI_FAMILY,
    RESOLVENT_PSI,
    NoGap,
    OutsideRange,
    decay_constant,
    matrix_sign,
    psi_apply,
    quadratic_estimate,
    semigroup_apply,
)
from operator_forge import assemble_TA
from torus_grid import TGrid, TorusGrid, log_gauss_rule


def _identity_setup():
    grid = TorusGrid(16)
    T = assemble_TA(make_class("identity", grid))
    return grid, T, matrix_sign(T)


def _eigenfield(grid: TorusGrid, sign: int) -> np.ndarray:
    """Mode-1 eigenvector of D with eigenvalue sign * 1 (L = 2 pi)."""
    e = grid.mode(1)
    return np.concatenate([e, -1j * sign * e])


def test_sign_of_diagonal_matrix() -> None:
    split = matrix_sign(np.diag([1.0, 2.0, -3.0]))
    np.testing.assert_allclose(split.S_sign, np.diag([1.0, 1.0, -1.0]), atol=1e-12)
    assert split.d_plus == 2 and split.d_minus == 1
    assert split.spectral_gap == pytest.approx(1.0)
    assert split.minus_gap == pytest.approx(3.0)


def test_sign_of_non_normal_matrix() -> None:
    rng = np.random.default_rng(4)
    V = np.eye(4) + 0.3 * rng.standard_normal((4, 4))
    T = V @ np.diag([1.0, 2.0, -1.0, -3.0]) @ np.linalg.inv(V)
    split = matrix_sign(T)
    expected = V @ np.diag([1.0, 1.0, -1.0, -1.0]) @ np.linalg.inv(V)
    np.testing.assert_allclose(split.S_sign, expected, atol=1e-9)
    np.testing.assert_allclose(split.S_sign @ split.S_sign, np.eye(4), atol=1e-9)
    assert split.d_plus == 2


def test_sign_rejects_spectrum_on_imaginary_axis() -> None:
    with pytest.raises(NoGap):
        matrix_sign(np.diag([1.0, 1j]))
    with pytest.raises(NoGap):
        matrix_sign(np.zeros((3, 3)))


def test_identity_split_dimensions_and_gap() -> None:
    _, T, split = _identity_setup()
    assert split.reduced_dim == 30
    assert split.d_plus == 15 and split.d_minus == 15
    assert split.spectral_gap == pytest.approx(1.0, abs=1e-8)


def test_variable_coefficient_projectors() -> None:
    T = assemble_TA(make_class("hermitian", TorusGrid(16), seed=3))
    split = matrix_sign(T)
    chi = split.chi_plus
    np.testing.assert_allclose(chi @ chi, chi, atol=1e-8)
    np.testing.assert_allclose(chi @ T.kernel_basis, 0.0, atol=1e-8)
    commutator = T.entries @ chi - chi @ T.entries
    assert np.linalg.norm(commutator) <= 1e-8 * np.linalg.norm(T.entries)
    np.testing.assert_allclose(
        split.chi_plus + split.chi_minus, split.basis @ split.coordinates, atol=1e-8
    )
    assert split.spectral_gap > 0


def test_semigroup_on_eigenvector() -> None:
    grid, _, split = _identity_setup()
    f = _eigenfield(grid, +1)
    for t in (0.0, 0.5, 3.0):
        np.testing.assert_allclose(semigroup_apply(split, t, f), math.exp(-t) * f, atol=1e-10)
    assert split.restricted_exp(0.5) is split.restricted_exp(0.5)
    assert decay_constant(split, f, [0.0, 0.5, 1.0, 4.0]) == pytest.approx(1.0)
    with pytest.raises(OutsideRange):
        semigroup_apply(split, 1.0, _eigenfield(grid, -1))
    with pytest.raises(ValueError):
        semigroup_apply(split, -1.0, f)


@pytest.mark.parametrize("psi", [EXP_PSI, RESOLVENT_PSI, CUBIC_PSI])
def test_psi_acts_by_its_scalar_on_eigenvectors(psi) -> None:
    grid, _, split = _identity_setup()
    for sign in (+1, -1):
        f = _eigenfield(grid, sign)
        for t in (0.2, 1.5):
            expected = psi.scalar(sign * t) * f
            np.testing.assert_allclose(psi_apply(split, t, f, psi), expected, atol=1e-9)
    constant = np.concatenate([np.ones(16), np.zeros(16)])
    np.testing.assert_allclose(psi_apply(split, 1.0, constant, psi), 0.0, atol=1e-10)


def test_quadratic_estimate_closed_forms() -> None:
    grid, _, split = _identity_setup()
    f = _eigenfield(grid, +1) + _eigenfield(grid, -1) * 0.5
    rule = log_gauss_rule(1e-6, 1e4)
    # int t^2/(1+t^2)^2 dt/t = 1/2 and int t^2 e^{-2t} dt/t = 1/4
    assert quadratic_estimate(split, RESOLVENT_PSI, f, rule=rule) ** 2 == pytest.approx(0.5, rel=1e-6)
    assert quadratic_estimate(split, EXP_PSI, f, rule=rule) == pytest.approx(0.5, rel=1e-6)
    assert quadratic_estimate(split, CUBIC_PSI, np.zeros(32)) == 0.0
    with pytest.raises(ValueError):
        quadratic_estimate(split, CUBIC_PSI, f)
    coarse = quadratic_estimate(split, RESOLVENT_PSI, f, tgrid=TGrid(1e-3, 1e3, 80))
    assert coarse ** 2 == pytest.approx(0.5, rel=1e-2)
    assert set(PSI_FAMILY) == {"z_exp", "z_resolvent", "z_cubic_exp"}


def test_sign_is_odd_commutes_and_matches_eigen_projector() -> None:
    rng = np.random.default_rng(8)
    V = np.eye(6) + 0.2 * (rng.standard_normal((6, 6)) + 1j * rng.standard_normal((6, 6)))
    eigenvalues = np.array([0.5, 1.2, 2.0, -0.7, -1.5, -2.0]) + 0.3j * rng.standard_normal(6)
    T = V @ np.diag(eigenvalues) @ np.linalg.inv(V)
    S = matrix_sign(T).S_sign
    np.testing.assert_allclose(matrix_sign(-T).S_sign, -S, atol=1e-8)
    assert np.linalg.norm(S @ T - T @ S) <= 1e-8 * np.linalg.norm(T)
    projector = V @ np.diag((eigenvalues.real > 0).astype(float)) @ np.linalg.inv(V)
    np.testing.assert_allclose(matrix_sign(T).chi_plus, projector, atol=1e-7)


def test_semigroup_law_on_variable_coefficient() -> None:
    T = assemble_TA(make_class("hermitian", TorusGrid(16), seed=3))
    split = matrix_sign(T)
    rng = np.random.default_rng(6)
    coords = rng.standard_normal(split.d_plus) + 1j * rng.standard_normal(split.d_plus)
    f = split.V_plus @ coords
    for t1, t2 in ((0.1, 0.3), (0.5, 1.5)):
        composed = semigroup_apply(split, t1, semigroup_apply(split, t2, f))
        direct = semigroup_apply(split, t1 + t2, f)
        assert np.linalg.norm(composed - direct) <= 1e-9 * np.linalg.norm(direct)


def test_psi_is_linear_in_t_near_zero() -> None:
    grid, _, split = _identity_setup()
    f = _eigenfield(grid, +1) + 0.5 * _eigenfield(grid, -1)
    small, large = 1e-4, 1e-2
    slope = math.log(np.linalg.norm(psi_apply(split, large, f, CUBIC_PSI))
                     / np.linalg.norm(psi_apply(split, small, f, CUBIC_PSI))) / math.log(large / small)
    assert slope == pytest.approx(1.0, abs=1e-2)


def test_quadratic_estimate_is_stable_under_refinement() -> None:
    coarse_grid, fine_grid = TorusGrid(16), TorusGrid(32)
    A = make_class("hermitian", coarse_grid, seed=7)
    ratios = []
    for grid in (coarse_grid, fine_grid):
        field_ = A if grid.N == 16 else resample(A, grid)
        split = matrix_sign(assemble_TA(field_))
        f = random_lowmode_field(grid, 2, np.random.default_rng(12), 3, mean_free=True).reshape(-1)
        ratios.append(quadratic_estimate(split, RESOLVENT_PSI, f, tgrid=TGrid.for_grid(grid, 160)))
    assert 0.0 < ratios[0] < math.inf
    assert abs(ratios[1] - ratios[0]) / ratios[0] <= 0.1
