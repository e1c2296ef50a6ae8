import math
import sys
from pathlib import Path

import numpy as np
import pytest

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.append(str(ROOT))

from analysis_norms import random_lowmode_field
from coefficients import make_class
from dirichlet_solver import (
    BoundaryData,
    IllPosed,
    TraceToleranceError,
    build_generator,
    check_wellposed,
    domain_norm_ratios,
    generator_chain_error,
    kato_square_root,
    propagator,
    semigroup_law_error,
    solution_frames,
    solve_dirichlet,
    trace_norm_ratios,
    weakform_residual,
)
from torus_grid import TGrid, TorusGrid


def _identity_maps(N: int = 16):
    A = make_class("identity", TorusGrid(N))
    return A, check_wellposed(A)


def _random_boundary(grid: TorusGrid, seed: int, m: int = 1) -> BoundaryData:
    rng = np.random.default_rng(seed)
    return BoundaryData(grid, random_lowmode_field(grid, m, rng, 4, mean_free=True))


def test_boundary_data_requires_zero_mean() -> None:
    grid = TorusGrid(8)
    with pytest.raises(ValueError):
        BoundaryData(grid, np.ones(8))
    with pytest.raises(ValueError):
        BoundaryData(grid, np.zeros(7))
    projected = BoundaryData.project(grid, 1.0 + grid.mode(1))
    np.testing.assert_allclose(projected.values[0], grid.mode(1), atol=1e-12)
    again = BoundaryData.from_frame(grid, projected.to_frame())
    np.testing.assert_allclose(again.values, projected.values, atol=1e-15)


def test_identity_is_wellposed_with_known_singular_values() -> None:
    _, maps = _identity_maps()
    assert maps.wellposed and maps.square
    assert maps.sigma_min_S == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-10)
    assert maps.sigma_min_R == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-10)
    assert maps.verdict()["d_plus"] == 15


def test_identity_solution_is_poisson_extension() -> None:
    A, maps = _identity_maps()
    grid = A.grid
    tgrid = TGrid.for_grid(grid, 120)
    for k in (1, -2, 3):
        u0 = BoundaryData(grid, grid.mode(k))
        solution = solve_dirichlet(maps, u0, tgrid)
        for j in (0, 40, 80):
            t = tgrid.nodes[j]
            np.testing.assert_allclose(solution.U.values[j, 0], math.exp(-abs(k) * t) * grid.mode(k), atol=1e-9)
        t = 0.3
        grad = solution.grad_at(t)
        np.testing.assert_allclose(grad[0], -abs(k) * math.exp(-abs(k) * t) * grid.mode(k), atol=1e-9)
        np.testing.assert_allclose(grad[1], 1j * k * math.exp(-abs(k) * t) * grid.mode(k), atol=1e-9)
        assert solution.exact_trace_error < 1e-10
        assert solution.trace_error < 5e-2
        assert solution.mean_defect < 1e-10
        assert solution.decay_ratio < 1e-12


def test_trace_tolerance_and_ill_posed_data() -> None:
    A, maps = _identity_maps()
    grid = A.grid
    u0 = BoundaryData(grid, grid.mode(4))
    tgrid = TGrid.for_grid(grid, 40)
    with pytest.raises(TraceToleranceError):
        solve_dirichlet(maps, u0, tgrid, trace_tolerance=1e-14)
    relaxed = solve_dirichlet(maps, u0, tgrid, trace_tolerance=1e-14, strict=False)
    assert relaxed.trace_error > 1e-14

    strict_maps = check_wellposed(A, sigma_floor=10.0)
    assert not strict_maps.wellposed
    with pytest.raises(IllPosed):
        solve_dirichlet(strict_maps, u0, tgrid)
    with pytest.raises(IllPosed):
        build_generator(strict_maps)


def test_generator_is_minus_abs_derivative_for_identity() -> None:
    A, maps = _identity_maps()
    grid = A.grid
    package = build_generator(maps)
    u0 = BoundaryData(grid, grid.mode(2) + 0.5 * grid.mode(-3))
    expected = -2.0 * grid.mode(2) - 1.5 * grid.mode(-3)
    np.testing.assert_allclose(package.apply(u0)[0], expected, atol=1e-9)
    P = propagator(package, 0.4)
    np.testing.assert_allclose(P @ grid.mode(2), math.exp(-0.8) * grid.mode(2), atol=1e-9)
    assert semigroup_law_error(package, 0.3, 0.7) < 1e-10
    np.testing.assert_allclose(domain_norm_ratios(package, [u0]), [1.0], rtol=1e-9)
    coords = package.to_coordinates(u0)
    np.testing.assert_allclose(package.from_coordinates(coords), u0.values, atol=1e-12)


def test_variable_coefficient_solution_identities() -> None:
    A = make_class("hermitian", TorusGrid(16), seed=7)
    maps = check_wellposed(A)
    assert maps.wellposed
    grid = A.grid
    tgrid = TGrid.for_grid(grid, 120)
    u0 = _random_boundary(grid, 3)
    solution = solve_dirichlet(maps, u0, tgrid)
    assert solution.exact_trace_error < 1e-9
    package = build_generator(maps)
    assert generator_chain_error(package, solution) < 1e-7
    assert semigroup_law_error(package, 0.2, 0.5) < 1e-9
    v = random_lowmode_field(grid, 1, np.random.default_rng(5), 3, mean_free=True)
    assert weakform_residual(solution, v) < 1e-5

    frame = solution_frames([solution, solution])
    assert set(frame.columns) == {"datum", "t", "x", "component", "re", "im"}
    assert len(frame) == 2 * tgrid.M * grid.N


def test_trace_norm_ratios_for_identity() -> None:
    A, maps = _identity_maps()
    fs = [maps.hardy_vector(BoundaryData(A.grid, A.grid.mode(k))) for k in (1, 5)]
    ratios = trace_norm_ratios(maps, fs)
    np.testing.assert_allclose(ratios["normal_tangential"], 1.0, rtol=1e-9)
    np.testing.assert_allclose(ratios["rellich"], 1.0, rtol=1e-9)


def test_block_solution_matches_kato_square_root() -> None:
    A = make_class("block", TorusGrid(16), seed=4)
    grid = A.grid
    maps = check_wellposed(A)
    kato = kato_square_root(A)
    tgrid = TGrid.for_grid(grid, 80)
    u0 = _random_boundary(grid, 9)
    solution = solve_dirichlet(maps, u0, tgrid)
    for t in (0.1, 0.5, 2.0):
        diff = grid.remove_mean(solution.U_at(t)) - kato.evolve(u0.values, t)
        assert grid.norm(diff) / u0.norm < 1e-6
    ratio = grid.norm(kato.sqrt_apply(u0.values)) / grid.norm(grid.derivative(u0.values))
    assert 0 < ratio < math.inf
