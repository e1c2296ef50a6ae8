"""Dense discrete operators: D, multiplication by Abar/Aunder/B, T_A, Theta_t, Q_t.

Unknowns are ordered component-major: index = (component) * N + (grid index),
components normal first ([v_0, v_par]).
"""
from __future__ import annotations

import logging
import threading
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Hashable, Optional

import numpy as np
import scipy.linalg

from coefficients import CoefficientField, auxiliary_pair
from torus_grid import TorusGrid, spectral_derivative

logger = logging.getLogger(__name__)

FACTORIZATION_TOLERANCE = 1e-10


class ForgeError(ValueError):
    """Raised when an operator cannot be assembled (singular factors, failed resolvent)."""


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    entries: np.ndarray = field(repr=False)
    grid: Optional[TorusGrid]
    label: str
    m: int = 1
    t: Optional[float] = None
    # orthonormal bases of range(T) and ker(T) when known (set for T_A)
    range_basis: Optional[np.ndarray] = field(default=None, repr=False)
    kernel_basis: Optional[np.ndarray] = field(default=None, repr=False)
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def __matmul__(self, other: np.ndarray) -> np.ndarray:
        return self.entries @ other

    def adjoint(self) -> np.ndarray:
        return self.entries.conj().T

    def operator_norm(self) -> float:
        return float(np.linalg.norm(self.entries, 2))


class OperatorCache:
    """Small LRU of assembled operators keyed by (coefficient hash, label, t).

    Builders run outside the lock; the first completed entry for a key wins.
    """

    def __init__(self, maxsize: int = 512) -> None:
        self.maxsize = maxsize
        self._entries: "OrderedDict[Hashable, DiscreteOperator]" = OrderedDict()
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    def get_or_build(
        self, key: Hashable, builder: Callable[[], DiscreteOperator]
    ) -> DiscreteOperator:
        with self._lock:
            if key in self._entries:
                self._entries.move_to_end(key)
                self.hits += 1
                return self._entries[key]
            self.misses += 1
        built = builder()
        with self._lock:
            existing = self._entries.get(key)
            if existing is not None:
                return existing
            self._entries[key] = built
            while len(self._entries) > self.maxsize:
                self._entries.popitem(last=False)
        return built

    def __len__(self) -> int:
        return len(self._entries)

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()


DEFAULT_CACHE = OperatorCache()


def multiplication_operator(blocks: np.ndarray) -> np.ndarray:
    """Dense operator of pointwise multiplication by (N, c, c) matrices."""
    N, c, _ = blocks.shape
    full = np.zeros((c, N, c, N), dtype=complex)
    idx = np.arange(N)
    full[:, idx, :, idx] = blocks
    return full.reshape(c * N, c * N)


def constant_fields(grid: TorusGrid, components: int) -> np.ndarray:
    """Columns e_b (x) 1: the constant fields, one per component."""
    return np.kron(np.eye(components), np.ones((grid.N, 1)))


def mean_free_fields(grid: TorusGrid, components: int) -> np.ndarray:
    """Orthonormal basis of the zero-mean subspace of C^{components N}."""
    return np.kron(np.eye(components), grid.mean_free_basis)


def assemble_D(grid: TorusGrid, m: int = 1) -> DiscreteOperator:
    """D = [[0, d/dx], [-d/dx, 0]] (x) I_m."""
    dx = spectral_derivative(grid)
    coupling = np.block(
        [[np.zeros((m, m)), np.eye(m)], [-np.eye(m), np.zeros((m, m))]]
    )
    return DiscreteOperator(np.kron(coupling, dx), grid, "D", m=m)


def _orthonormal_columns(matrix: np.ndarray) -> np.ndarray:
    q, _ = np.linalg.qr(matrix, mode="reduced")
    return q


def assemble_TA(A: CoefficientField, check: bool = True) -> DiscreteOperator:
    """T_A = Abar^{-1} D Aunder, cross-checked against Abar^{-1} D B Abar."""
    try:
        aux = auxiliary_pair(A)
    except ValueError as exc:
        raise ForgeError(f"Cannot assemble T_A: {exc}") from exc
    D = assemble_D(A.grid, A.m).entries
    Abar = multiplication_operator(aux.Abar)
    Abar_inv = multiplication_operator(aux.Abar_inv)
    Aunder = multiplication_operator(aux.Aunder)
    B = multiplication_operator(aux.B)
    T = Abar_inv @ D @ Aunder

    meta: Dict[str, Any] = {"min_singular_Abar": aux.min_singular_Abar}
    if check:
        alt = Abar_inv @ D @ B @ Abar
        scale = max(np.linalg.norm(T), 1.0)
        rel = float(np.linalg.norm(T - alt) / scale)
        meta["factorization_error"] = rel
        if rel > FACTORIZATION_TOLERANCE:
            raise ForgeError(f"T_A factorization mismatch: relative error {rel:.3e}")

    components = A.size
    range_basis = _orthonormal_columns(Abar_inv @ mean_free_fields(A.grid, components))
    under_sigma = np.linalg.svd(aux.Aunder, compute_uv=False)[:, -1].min()
    if under_sigma <= 1e-12:
        raise ForgeError("Aunder is singular; the kernel of T_A is not spanned by A_under^{-1} constants")
    kernel = np.linalg.solve(Aunder, constant_fields(A.grid, components))
    kernel_basis = _orthonormal_columns(kernel)
    logger.debug("Assembled T_A (d=%d, factorization error %.2e)", T.shape[0],
                 meta.get("factorization_error", float("nan")))
    return DiscreteOperator(
        T, A.grid, "T_A", m=A.m, range_basis=range_basis, kernel_basis=kernel_basis, meta=meta
    )


def range_leakage(T: DiscreteOperator) -> float:
    """||(I - Y Y^*) T Y|| / ||T|| for the stored range basis Y."""
    if T.range_basis is None:
        return 0.0
    Y = T.range_basis
    image = T.entries @ Y
    leak = image - Y @ (Y.conj().T @ image)
    return float(np.linalg.norm(leak) / max(np.linalg.norm(T.entries), 1e-300))


def _B_adjoint_operator(A: CoefficientField) -> np.ndarray:
    aux = auxiliary_pair(A)
    return multiplication_operator(np.conj(np.transpose(aux.B, (0, 2, 1))))


def assemble_theta(
    A: CoefficientField, t: float, cache: Optional[OperatorCache] = None
) -> DiscreteOperator:
    """Theta_t = (t B^* D)(I + (t B^* D)^2)^{-1} by one LU solve."""
    if not t > 0:
        raise ForgeError(f"t must be positive, got {t}")

    def build() -> DiscreteOperator:
        D = assemble_D(A.grid, A.m).entries
        M = t * (_B_adjoint_operator(A) @ D)
        resolvent = np.eye(M.shape[0]) + M @ M
        try:
            lu = scipy.linalg.lu_factor(resolvent, check_finite=True)
        except (np.linalg.LinAlgError, ValueError) as exc:
            raise ForgeError(f"Resolvent factorization failed at t={t:g}: {exc}") from exc
        if not np.all(np.isfinite(lu[0])) or np.min(np.abs(np.diag(lu[0]))) == 0.0:
            raise ForgeError(f"Resolvent is singular at t={t:g}; A is likely not accretive")
        if logger.isEnabledFor(logging.DEBUG):
            logger.debug("Resolvent condition number at t=%.3e: %.3e", t,
                         np.linalg.cond(resolvent, 1))
        # M commutes with (I + M^2)^{-1}
        theta = scipy.linalg.lu_solve(lu, M)
        return DiscreteOperator(theta, A.grid, "Theta_t", m=A.m, t=t)

    if cache is None:
        return build()
    return cache.get_or_build((A.digest, "Theta_t", float(t)), build)


def assemble_Q(
    A: CoefficientField, t: float, cache: Optional[OperatorCache] = None
) -> DiscreteOperator:
    """Q_t = Theta_t (Abar^{-1})^*."""

    def build() -> DiscreteOperator:
        theta = assemble_theta(A, t, cache)
        aux = auxiliary_pair(A)
        inv_adj = multiplication_operator(np.conj(np.transpose(aux.Abar_inv, (0, 2, 1))))
        return DiscreteOperator(theta.entries @ inv_adj, A.grid, "Q_t", m=A.m, t=t)

    if cache is None:
        return build()
    return cache.get_or_build((A.digest, "Q_t", float(t)), build)


def B_accretivity(A: CoefficientField) -> float:
    """min_i lambda_min(Re B(x_i)); pointwise lower bound for Re <B g, g> / ||g||^2."""
    aux = auxiliary_pair(A)
    herm = 0.5 * (aux.B + np.conj(np.transpose(aux.B, (0, 2, 1))))
    return float(np.linalg.eigvalsh(herm)[:, 0].min())


def B_quadratic_form_bound(A: CoefficientField, rng: np.random.Generator, trials: int = 20) -> float:
    """min over random g of Re <B g, g> / ||g||^2."""
    aux = auxiliary_pair(A)
    B = multiplication_operator(aux.B)
    d = B.shape[0]
    values = []
    for _ in range(trials):
        g = rng.standard_normal(d) + 1j * rng.standard_normal(d)
        values.append(float(np.real(np.vdot(g, B @ g)) / np.vdot(g, g).real))
    return min(values)


def dump_matrix(op: DiscreteOperator, path: str) -> None:
    """Row-major little-endian complex128 (re, im pairs), for debugging."""
    np.ascontiguousarray(op.entries, dtype="<c16").tofile(path)


def load_matrix(path: str, dim: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<c16")
    if data.size != dim * dim:
        raise ForgeError(f"{path} holds {data.size} entries, expected {dim * dim}")
    return data.reshape(dim, dim)
