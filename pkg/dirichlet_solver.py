"""Well-posedness via the trace maps, the Dirichlet solve, the weak form and the generator.

Boundary data are zero-mean grid functions (constants lie in the kernel of D on
the torus and never decay). The trace map S is f -> Pi_0 f_0 from range(chi_+)
onto zero-mean data, both sides in orthonormal coordinates.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg

from analysis_norms import HalfSpaceField
from coefficients import CoefficientField
from matrix_functions import SpectralSplit, matrix_sign
from operator_forge import DiscreteOperator, assemble_TA, multiplication_operator
from torus_grid import TGrid, TorusGrid, log_gauss_rule, spectral_derivative

logger = logging.getLogger(__name__)

MEAN_TOLERANCE = 1e-12
DEFAULT_SIGMA_FLOOR = 1e-6
DEFAULT_TRACE_TOLERANCE = 5e-2
DECAY_TOLERANCE = 1e-8
CHAIN_TOLERANCE = 1e-7


class IllPosed(ValueError):
    """The trace map S is not invertible beyond the singular-value floor."""


class TraceToleranceError(ValueError):
    """The computed solution does not recover its boundary datum."""


@dataclass(frozen=True, eq=False)
class BoundaryData:
    grid: TorusGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values, dtype=complex)
        if values.ndim == 1:
            values = values[None, :]
        if values.shape[1] != self.grid.N:
            raise ValueError(f"boundary data has {values.shape[1]} samples, expected {self.grid.N}")
        if not np.all(np.isfinite(values)):
            raise ValueError("boundary data has non-finite entries")
        scale = max(1.0, float(np.abs(values).max(initial=0.0)))
        if float(np.abs(values.mean(axis=1)).max()) > MEAN_TOLERANCE * scale:
            raise ValueError("boundary data must have zero mean; use BoundaryData.project")
        object.__setattr__(self, "values", values)

    @classmethod
    def project(cls, grid: TorusGrid, values: np.ndarray) -> "BoundaryData":
        """Remove the spatial mean, then wrap."""
        values = np.asarray(values, dtype=complex)
        if values.ndim == 1:
            values = values[None, :]
        return cls(grid, grid.remove_mean(values))

    @property
    def m(self) -> int:
        return self.values.shape[0]

    @property
    def norm(self) -> float:
        return self.grid.norm(self.values)

    def to_frame(self) -> pd.DataFrame:
        data: Dict[str, Any] = {"x": self.grid.points}
        for c in range(self.m):
            data[f"re_{c}"] = self.values[c].real
            data[f"im_{c}"] = self.values[c].imag
        return pd.DataFrame(data)

    @classmethod
    def from_frame(cls, grid: TorusGrid, frame: pd.DataFrame) -> "BoundaryData":
        components = sorted(int(col[3:]) for col in frame.columns if col.startswith("re_"))
        if not components or len(frame) != grid.N:
            raise ValueError("boundary CSV needs N rows and re_<c>/im_<c> columns")
        values = np.stack(
            [frame[f"re_{c}"].to_numpy() + 1j * frame[f"im_{c}"].to_numpy() for c in components]
        )
        return cls.project(grid, values)


def mean_free_frame(grid: TorusGrid, m: int) -> np.ndarray:
    """W_m: orthonormal columns spanning zero-mean C^m-valued grid functions."""
    return np.kron(np.eye(m), grid.mean_free_basis)


@dataclass(frozen=True, eq=False)
class TraceMaps:
    A: CoefficientField
    T: DiscreteOperator
    split: SpectralSplit
    S_matrix: np.ndarray = field(repr=False)
    R_matrix: np.ndarray = field(repr=False)
    sigma_S: np.ndarray = field(repr=False)
    sigma_R: np.ndarray = field(repr=False)
    sigma_floor: float = DEFAULT_SIGMA_FLOOR

    @property
    def sigma_min_S(self) -> float:
        return float(self.sigma_S.min()) if self.sigma_S.size else 0.0

    @property
    def sigma_min_R(self) -> float:
        return float(self.sigma_R.min()) if self.sigma_R.size else 0.0

    @property
    def square(self) -> bool:
        return self.S_matrix.shape[0] == self.S_matrix.shape[1]

    @property
    def wellposed(self) -> bool:
        return self.square and self.sigma_min_S >= self.sigma_floor

    @property
    def R_invertible(self) -> bool:
        return self.R_matrix.shape[0] == self.R_matrix.shape[1] and self.sigma_min_R >= self.sigma_floor

    @property
    def frame(self) -> np.ndarray:
        return mean_free_frame(self.A.grid, self.A.m)

    def verdict(self) -> Dict[str, Any]:
        return {
            "wellposed": self.wellposed,
            "sigma_min_S": self.sigma_min_S,
            "sigma_min_R": self.sigma_min_R,
            "R_invertible": self.R_invertible,
            "sigma_floor": self.sigma_floor,
            "d_plus": self.split.d_plus,
            "spectral_gap": self.split.spectral_gap,
        }

    def hardy_coordinates(self, u0: BoundaryData) -> np.ndarray:
        """a with V_+ a = S^{-1} u0."""
        if not self.wellposed:
            raise IllPosed(
                f"S is not invertible: sigma_min = {self.sigma_min_S:.3e} < {self.sigma_floor:.1e}"
            )
        rhs = self.frame.conj().T @ u0.values.reshape(-1)
        return scipy.linalg.solve(self.S_matrix, rhs)

    def hardy_vector(self, u0: BoundaryData) -> np.ndarray:
        """f = S^{-1} u0 in range(chi_+), full space."""
        return self.split.V_plus @ self.hardy_coordinates(u0)


def check_wellposed(
    A: CoefficientField,
    sigma_floor: float = DEFAULT_SIGMA_FLOOR,
    T: Optional[DiscreteOperator] = None,
    split: Optional[SpectralSplit] = None,
) -> TraceMaps:
    """Assemble S and R on range(chi_+(T_A)) and report their smallest singular values."""
    T = T if T is not None else assemble_TA(A)
    split = split if split is not None else matrix_sign(T)
    m, N = A.m, A.grid.N
    W = mean_free_frame(A.grid, m)
    V = split.V_plus
    S_matrix = W.conj().T @ V[: m * N]
    R_matrix = W.conj().T @ V[m * N :]
    sigma_S = np.linalg.svd(S_matrix, compute_uv=False)
    sigma_R = np.linalg.svd(R_matrix, compute_uv=False)
    maps = TraceMaps(A, T, split, S_matrix, R_matrix, sigma_S, sigma_R, sigma_floor)
    logger.info(
        "well-posedness: %s (sigma_min(S)=%.4e, sigma_min(R)=%.4e, d+=%d)",
        "yes" if maps.wellposed else "no", maps.sigma_min_S, maps.sigma_min_R, split.d_plus,
    )
    return maps


def conormal(A: CoefficientField, grad: np.ndarray) -> np.ndarray:
    """Pointwise A grad for grad of shape (2m, N)."""
    return np.einsum("iab,bi->ai", A.samples, grad)


@dataclass(frozen=True, eq=False)
class DirichletSolution:
    maps: TraceMaps
    boundary: BoundaryData
    coordinates: np.ndarray = field(repr=False)
    U: HalfSpaceField = field(repr=False)
    gradU: HalfSpaceField = field(repr=False)
    trace_error: float
    exact_trace_error: float
    mean_defect: float
    decay_ratio: float

    @property
    def f(self) -> np.ndarray:
        return self.maps.split.V_plus @ self.coordinates

    def F_at(self, t: float) -> np.ndarray:
        """e^{-tT} f as a (2m, N) array."""
        split = self.maps.split
        if t == 0:
            vec = self.f
        else:
            vec = split.V_plus @ (split.restricted_exp(t) @ self.coordinates)
        return vec.reshape(2 * self.maps.A.m, -1)

    def U_at(self, t: float) -> np.ndarray:
        return self.F_at(t)[: self.maps.A.m]

    def grad_at(self, t: float) -> np.ndarray:
        """(d_t U, d_x U) = -T e^{-tT} f."""
        return -(self.maps.T.entries @ self.F_at(t).reshape(-1)).reshape(2 * self.maps.A.m, -1)

    def grad_dt_at(self, t: float) -> np.ndarray:
        """d_t of the gradient field: T^2 e^{-tT} f."""
        T = self.maps.T.entries
        return (T @ (T @ self.F_at(t).reshape(-1))).reshape(2 * self.maps.A.m, -1)

    def summary(self) -> Dict[str, float]:
        return {
            "trace_error": self.trace_error,
            "exact_trace_error": self.exact_trace_error,
            "mean_defect": self.mean_defect,
            "decay_ratio": self.decay_ratio,
            "boundary_norm": self.boundary.norm,
        }

    def to_frame(self) -> pd.DataFrame:
        """Long format (t, x, component, re, im) of U on the t-grid."""
        grid, tgrid = self.boundary.grid, self.U.tgrid
        M, c, N = self.U.values.shape
        t = np.repeat(tgrid.nodes, c * N)
        comp = np.tile(np.repeat(np.arange(c), N), M)
        x = np.tile(grid.points, M * c)
        flat = self.U.values.reshape(-1)
        return pd.DataFrame({"t": t, "x": x, "component": comp, "re": flat.real, "im": flat.imag})


def solve_dirichlet(
    maps: TraceMaps,
    u0: BoundaryData,
    tgrid: TGrid,
    trace_tolerance: float = DEFAULT_TRACE_TOLERANCE,
    strict: bool = True,
) -> DirichletSolution:
    """U(t) = (e^{-tT_A} f)_0 with f = S^{-1} u0, sampled on the t-grid."""
    A = maps.A
    m = A.m
    if u0.m != m or u0.grid != A.grid:
        raise ValueError("boundary data does not match the coefficient grid or system size")
    coords = maps.hardy_coordinates(u0)
    split = maps.split
    u_norm = u0.norm

    samples_F = []
    for t in tgrid.nodes:
        samples_F.append(split.V_plus @ (split.restricted_exp(float(t)) @ coords))
    F = np.stack(samples_F).reshape(tgrid.M, 2 * m, -1)
    grad = -np.einsum("ij,tj->ti", maps.T.entries, F.reshape(tgrid.M, -1)).reshape(F.shape)
    U = HalfSpaceField(A.grid, tgrid, F[:, :m])
    gradU = HalfSpaceField(A.grid, tgrid, grad)

    f0 = (split.V_plus @ coords).reshape(2 * m, -1)[:m]
    grid = A.grid
    if u_norm == 0:
        trace_error = exact_trace_error = mean_defect = decay_ratio = 0.0
    else:
        t1, t2 = tgrid.nodes[0], tgrid.nodes[1]
        # linear extrapolation of the two smallest nodes to t = 0
        extrapolated = (t2 * U.values[0] - t1 * U.values[1]) / (t2 - t1)
        trace_error = grid.norm(grid.remove_mean(extrapolated) - u0.values) / u_norm
        exact_trace_error = grid.norm(grid.remove_mean(f0) - u0.values) / u_norm
        mean_defect = float(np.abs(grid.mean(f0)).max()) * math.sqrt(grid.L) / u_norm
        decay_ratio = grid.norm(U.values[-1]) / u_norm

    if decay_ratio > DECAY_TOLERANCE:
        logger.warning("solution has not decayed at t_max: ||U(t_max)||/||u0|| = %.3e", decay_ratio)
    if trace_error > trace_tolerance:
        message = f"trace recovery error {trace_error:.3e} exceeds {trace_tolerance:.1e}"
        if strict:
            raise TraceToleranceError(message)
        logger.warning(message)
    elif trace_error > 0.5 * trace_tolerance:
        logger.warning("trace recovery error %.3e is close to the tolerance", trace_error)

    return DirichletSolution(
        maps, u0, coords, U, gradU, trace_error, exact_trace_error, mean_defect, decay_ratio
    )


def weakform_sides(
    solution: DirichletSolution, v: np.ndarray, t: float, t_hi: Optional[float] = None
) -> Tuple[complex, complex]:
    """Both sides of int_t^inf ((A grad U_s)_par, d_x v) ds = -((A grad U_t)_0, v)."""
    A = solution.maps.A
    grid, m = A.grid, A.m
    v = np.asarray(v, dtype=complex).reshape(m, grid.N)
    dv = grid.derivative(v)
    t_hi = t_hi if t_hi is not None else solution.U.tgrid.t_max
    nodes, weights = log_gauss_rule(t, t_hi)
    lhs = 0j
    for s, w in zip(nodes, weights):
        flux = conormal(A, solution.grad_at(float(s)))
        lhs += w * s * grid.inner(flux[m:], dv)
    rhs = -grid.inner(conormal(A, solution.grad_at(t))[:m], v)
    return complex(lhs), complex(rhs)


def weakform_residual(
    solution: DirichletSolution, v: np.ndarray, t_values: Optional[Sequence[float]] = None
) -> float:
    """max over t of |LHS - RHS| / (|LHS| + |RHS| + ||u0|| ||v||)."""
    A = solution.maps.A
    grid = A.grid
    tgrid = solution.U.tgrid
    if t_values is None:
        nodes = tgrid.nodes[tgrid.nodes <= grid.L]
        picks = np.unique(np.linspace(0, len(nodes) - 1, 5).round().astype(int))
        t_values = nodes[picks]
    scale = solution.boundary.norm * grid.norm(np.asarray(v))
    worst = 0.0
    for t in t_values:
        lhs, rhs = weakform_sides(solution, v, float(t))
        denom = abs(lhs) + abs(rhs) + scale
        if denom > 0:
            worst = max(worst, abs(lhs - rhs) / denom)
    return worst


@dataclass(frozen=True, eq=False)
class GeneratorPackage:
    maps: TraceMaps
    generator: np.ndarray = field(repr=False)  # in zero-mean coordinates
    S_lu: Any = field(repr=False)

    @property
    def grid_matrix(self) -> np.ndarray:
        """The generator acting on zero-mean grid data (mN x mN)."""
        W = self.maps.frame
        return W @ self.generator @ W.conj().T

    def apply(self, u0: BoundaryData) -> np.ndarray:
        return (self.grid_matrix @ u0.values.reshape(-1)).reshape(u0.values.shape)

    def propagator(self, t: float) -> np.ndarray:
        """P_t = S e^{-t T_+} S^{-1} on zero-mean coordinates."""
        S = self.maps.S_matrix
        inner = self.maps.split.restricted_exp(t) @ scipy.linalg.lu_solve(self.S_lu, np.eye(S.shape[0]))
        return S @ inner

    def exp_generator(self, t: float) -> np.ndarray:
        return scipy.linalg.expm(t * self.generator)

    def to_coordinates(self, u0: BoundaryData) -> np.ndarray:
        return self.maps.frame.conj().T @ u0.values.reshape(-1)

    def from_coordinates(self, coords: np.ndarray) -> np.ndarray:
        return (self.maps.frame @ coords).reshape(self.maps.A.m, -1)


def build_generator(maps: TraceMaps) -> GeneratorPackage:
    """Gen = -S T_+ S^{-1} on zero-mean data."""
    if not maps.wellposed:
        raise IllPosed(
            f"Generator needs an invertible S: sigma_min = {maps.sigma_min_S:.3e}"
        )
    lu = scipy.linalg.lu_factor(maps.S_matrix)
    S = maps.S_matrix
    T_plus = maps.split.T_restricted
    generator = -S @ T_plus @ scipy.linalg.lu_solve(lu, np.eye(S.shape[0]))
    return GeneratorPackage(maps, generator, lu)


def propagator(package: GeneratorPackage, t: float) -> np.ndarray:
    """P_t as a matrix on zero-mean grid data."""
    W = package.maps.frame
    return W @ package.propagator(t) @ W.conj().T


def generator_chain_error(package: GeneratorPackage, solution: DirichletSolution) -> float:
    """max_t ||Pi_0 d_t U - Gen Pi_0 U|| / ||Gen Pi_0 U|| on the t-grid (below t = L)."""
    grid = package.maps.A.grid
    m = package.maps.A.m
    G = package.grid_matrix
    worst = 0.0
    for j, t in enumerate(solution.U.tgrid.nodes):
        if t > grid.L:
            break
        U_t = grid.remove_mean(solution.U.values[j]).reshape(-1)
        dtU = grid.remove_mean(solution.gradU.values[j][:m]).reshape(-1)
        target = G @ U_t
        scale = np.linalg.norm(target)
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(dtU - target) / scale))
    return worst


def semigroup_law_error(package: GeneratorPackage, t1: float, t2: float) -> float:
    P1, P2, P12 = package.propagator(t1), package.propagator(t2), package.propagator(t1 + t2)
    return float(np.linalg.norm(P1 @ P2 - P12) / max(np.linalg.norm(P12), 1e-300))


def trace_norm_ratios(maps: TraceMaps, fs: Sequence[np.ndarray]) -> Dict[str, np.ndarray]:
    """||f_0||/||f_par|| and ||f_par||/||(A f)_0|| for f in range(chi_+)."""
    A = maps.A
    m, grid = A.m, A.grid
    normal_tangential, rellich = [], []
    for f in fs:
        F = np.asarray(f).reshape(2 * m, -1)
        f_par = grid.norm(F[m:])
        normal_tangential.append(grid.norm(F[:m]) / f_par if f_par > 0 else math.inf)
        Af0 = grid.norm(conormal(A, F)[:m])
        rellich.append(f_par / Af0 if Af0 > 0 else math.inf)
    return {"normal_tangential": np.asarray(normal_tangential), "rellich": np.asarray(rellich)}


def domain_norm_ratios(package: GeneratorPackage, data: Sequence[BoundaryData]) -> np.ndarray:
    """||d_x u0|| / ||Gen u0|| for each datum."""
    grid = package.maps.A.grid
    ratios = []
    for u0 in data:
        gen_norm = grid.norm(package.apply(u0))
        grad_norm = grid.norm(grid.derivative(u0.values))
        ratios.append(grad_norm / gen_norm if gen_norm > 0 else math.inf)
    return np.asarray(ratios)


@dataclass(frozen=True, eq=False)
class KatoPackage:
    """e^{-t L^{1/2}} for L = -A00^{-1} d_x A_parpar d_x on the range of L."""

    grid: TorusGrid
    m: int
    L: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    sqrt_restricted: np.ndarray = field(repr=False)

    def split_datum(self, u0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """u0 = basis a + constant."""
        u = np.asarray(u0, dtype=complex).reshape(-1)
        frame = np.concatenate(
            [self.basis, np.kron(np.eye(self.m), np.ones((self.grid.N, 1)))], axis=1
        )
        coeffs = np.linalg.solve(frame, u)
        k = self.basis.shape[1]
        return coeffs[:k], coeffs[k:]

    def evolve(self, u0: np.ndarray, t: float) -> np.ndarray:
        """Zero-mean part of e^{-t L^{1/2}} applied to the range component of u0."""
        a, _ = self.split_datum(u0)
        out = self.basis @ (scipy.linalg.expm(-t * self.sqrt_restricted) @ a)
        return self.grid.remove_mean(out.reshape(self.m, -1))

    def sqrt_apply(self, u0: np.ndarray) -> np.ndarray:
        a, _ = self.split_datum(u0)
        return (self.basis @ (self.sqrt_restricted @ a)).reshape(self.m, -1)


def kato_square_root(A: CoefficientField) -> KatoPackage:
    """Independent construction of L^{1/2} from the block coefficients A00, A_parpar."""
    grid, m = A.grid, A.m
    dx_m = np.kron(np.eye(m), spectral_derivative(grid))
    A00 = multiplication_operator(A.A00)
    App = multiplication_operator(A.Aparpar)
    L = -np.linalg.solve(A00, dx_m @ App @ dx_m)
    basis, _ = np.linalg.qr(np.linalg.solve(A00, mean_free_frame(grid, m)), mode="reduced")
    L_r = basis.conj().T @ L @ basis
    root = scipy.linalg.sqrtm(L_r)
    if not np.all(np.isfinite(root)):
        raise np.linalg.LinAlgError("matrix square root of L failed")
    return KatoPackage(grid, m, L, basis, np.asarray(root))


def solution_frames(solutions: List[DirichletSolution]) -> pd.DataFrame:
    frames = []
    for idx, sol in enumerate(solutions):
        frame = sol.to_frame()
        frame.insert(0, "datum", idx)
        frames.append(frame)
    return pd.concat(frames, ignore_index=True)
