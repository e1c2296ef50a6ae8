"""Sign function, spectral projections and restricted semigroups of T_A.

The split is computed on an orthonormal basis Y of range(T) (the invariant
complement of the kernel); exponentials are only ever taken on the restricted
blocks, where they are bounded.
"""
from __future__ import annotations

import logging
import math
import threading
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Dict, Optional, Sequence, Tuple, Union

import numpy as np
import scipy.linalg

from operator_forge import DiscreteOperator
from torus_grid import TGrid

logger = logging.getLogger(__name__)

MAX_ITERATIONS = 60
CONVERGENCE_TOL = 1e-12
STAGNATION_TOL = 1e-8
SCALING_CUTOFF = 1e-2
GAP_FLOOR = 1e-8
ALGEBRA_TOL = 1e-8
RANGE_TOL = 1e-8
CONDITION_LIMIT = 1e14
DECAY_SLACK = 0.1


class NoGap(np.linalg.LinAlgError):
    """The spectrum touches (or numerically reaches) the imaginary axis."""


class NotConverged(np.linalg.LinAlgError):
    """Newton iteration for the sign function ran out of iterations."""


class OutsideRange(ValueError):
    """A vector expected in range(chi_+) has a component outside it."""


@dataclass(frozen=True, eq=False)
class SpectralSplit:
    """Spectral split of T on range(T).

    ``S_sign``, ``P_plus`` and ``P_minus`` act on coordinates with respect to
    ``basis`` (the columns Y); ``V_plus``/``V_minus`` and ``chi_plus``/``chi_minus``
    live in the full space.
    """

    S_sign: np.ndarray = field(repr=False)
    P_plus: np.ndarray = field(repr=False)
    P_minus: np.ndarray = field(repr=False)
    basis: np.ndarray = field(repr=False)
    coordinates: np.ndarray = field(repr=False)
    V_plus: np.ndarray = field(repr=False)
    V_minus: np.ndarray = field(repr=False)
    T_restricted: np.ndarray = field(repr=False)
    T_minus_restricted: np.ndarray = field(repr=False)
    spectral_gap: float
    minus_gap: float
    iterations: int
    _exp_cache: Dict[Tuple[str, float], np.ndarray] = field(
        default_factory=dict, repr=False
    )
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def d_plus(self) -> int:
        return self.V_plus.shape[1]

    @property
    def d_minus(self) -> int:
        return self.V_minus.shape[1]

    @property
    def reduced_dim(self) -> int:
        return self.basis.shape[1]

    @cached_property
    def chi_plus(self) -> np.ndarray:
        """chi_+(T) on the full space (zero on the kernel)."""
        return self.basis @ self.P_plus @ self.coordinates

    @cached_property
    def chi_minus(self) -> np.ndarray:
        return self.basis @ self.P_minus @ self.coordinates

    def restricted_exp(self, t: float, side: str = "plus") -> np.ndarray:
        """exp(-t T_+) on range(chi_+) or exp(+t T_-) on range(chi_-), cached per t."""
        key = (side, float(t))
        with self._lock:
            cached = self._exp_cache.get(key)
        if cached is not None:
            return cached
        if side == "plus":
            value = scipy.linalg.expm(-t * self.T_restricted)
        else:
            value = scipy.linalg.expm(t * self.T_minus_restricted)
        with self._lock:
            self._exp_cache.setdefault(key, value)
        return value

    def range_residual(self, f: np.ndarray) -> float:
        """||chi_+ f - f|| / ||f|| (0 for f = 0)."""
        f = np.asarray(f)
        scale = np.linalg.norm(f)
        if scale == 0:
            return 0.0
        return float(np.linalg.norm(self.chi_plus @ f - f) / scale)


def _as_matrix(T: Union[DiscreteOperator, np.ndarray]) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Full matrix, range basis Y and coordinate map E (first rows of [Y Z]^{-1})."""
    if isinstance(T, DiscreteOperator):
        matrix = T.entries
        Y, Z = T.range_basis, T.kernel_basis
    else:
        matrix = np.asarray(T, dtype=complex)
        Y, Z = None, None
    d = matrix.shape[0]
    if Y is None:
        eye = np.eye(d, dtype=complex)
        return matrix, eye, eye
    if Z is None or Z.shape[1] == 0:
        return matrix, Y, Y.conj().T
    frame = np.concatenate([Y, Z], axis=1)
    if frame.shape[0] != frame.shape[1]:
        raise ValueError("range and kernel bases do not span the space")
    E = np.linalg.inv(frame)[: Y.shape[1]]
    return matrix, Y, E


def _newton_sign(T_red: np.ndarray) -> Tuple[np.ndarray, int]:
    d = T_red.shape[0]
    S = np.array(T_red, dtype=complex)
    scaling = True
    previous = math.inf
    for iteration in range(1, MAX_ITERATIONS + 1):
        try:
            S_inv = np.linalg.inv(S)
        except np.linalg.LinAlgError as exc:
            raise NoGap(f"Sign iteration hit a singular iterate at step {iteration}") from exc
        if not np.all(np.isfinite(S_inv)):
            raise NoGap(f"Sign iteration blew up at step {iteration}")
        if np.linalg.norm(S, 1) * np.linalg.norm(S_inv, 1) > CONDITION_LIMIT:
            raise NoGap(f"Sign iterate is numerically singular at step {iteration}")
        mu = 1.0
        if scaling:
            _, logabs = np.linalg.slogdet(S)
            mu = math.exp(-logabs / d)
        S_next = 0.5 * (mu * S + S_inv / mu)
        change = float(np.linalg.norm(S_next - S) / np.linalg.norm(S))
        logger.debug("sign iteration %d: relative change %.3e (mu=%.3e)", iteration, change, mu)
        S = S_next
        if change < SCALING_CUTOFF:
            scaling = False
        if change <= CONVERGENCE_TOL:
            return S, iteration
        # rounding floor: no further progress possible
        if change < STAGNATION_TOL and change >= 0.5 * previous:
            return S, iteration
        previous = change
    raise NotConverged(f"Sign iteration did not converge in {MAX_ITERATIONS} steps")


def _range_columns(P: np.ndarray) -> np.ndarray:
    rank = int(round(float(np.real(np.trace(P)))))
    if rank <= 0:
        return np.zeros((P.shape[0], 0), dtype=complex)
    Q, R, _ = scipy.linalg.qr(P, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    if rank < len(diag) and diag[0] > 0:
        logger.debug("projector rank %d, R gap %.3e -> %.3e", rank, diag[rank - 1], diag[rank])
    return Q[:, :rank]


def matrix_sign(T: Union[DiscreteOperator, np.ndarray]) -> SpectralSplit:
    """Scaled Newton iteration for sign(T) on range(T) and the induced split."""
    matrix, Y, E = _as_matrix(T)
    T_red = Y.conj().T @ matrix @ Y
    d = T_red.shape[0]
    norm_T = float(np.linalg.norm(matrix, 2)) if matrix.size else 0.0
    if d == 0 or norm_T == 0.0:
        raise NoGap("T vanishes on its range; there is nothing to split")

    S, iterations = _newton_sign(T_red)
    eye = np.eye(d)
    if np.linalg.norm(S @ S - eye) > ALGEBRA_TOL * math.sqrt(d):
        raise NoGap("sign(T)^2 != I: the spectrum is too close to the imaginary axis")

    P_plus = 0.5 * (eye + S)
    P_minus = 0.5 * (eye - S)
    W_plus = _range_columns(P_plus)
    W_minus = _range_columns(P_minus)
    T_plus = W_plus.conj().T @ T_red @ W_plus
    T_minus = W_minus.conj().T @ T_red @ W_minus
    gap_plus = float(np.linalg.eigvals(T_plus).real.min()) if T_plus.size else math.inf
    gap_minus = float((-np.linalg.eigvals(T_minus).real).min()) if T_minus.size else math.inf
    floor = GAP_FLOOR * norm_T
    if min(gap_plus, gap_minus) <= floor:
        raise NoGap(
            f"Spectral gap {min(gap_plus, gap_minus):.3e} is below the floor {floor:.3e}"
        )
    logger.debug(
        "spectral split: d'=%d, d+=%d, d-=%d, gap=%.4e, %d iterations",
        d, W_plus.shape[1], W_minus.shape[1], gap_plus, iterations,
    )
    return SpectralSplit(
        S_sign=S,
        P_plus=P_plus,
        P_minus=P_minus,
        basis=Y,
        coordinates=E,
        V_plus=Y @ W_plus,
        V_minus=Y @ W_minus,
        T_restricted=T_plus,
        T_minus_restricted=T_minus,
        spectral_gap=gap_plus,
        minus_gap=gap_minus,
        iterations=iterations,
    )


def semigroup_apply(split: SpectralSplit, t: float, f: np.ndarray) -> np.ndarray:
    """e^{-tT} f for f in range(chi_+), through the restricted exponential."""
    if t < 0:
        raise ValueError(f"t must be non-negative, got {t}")
    f = np.asarray(f, dtype=complex)
    residual = split.range_residual(f)
    if residual > RANGE_TOL:
        raise OutsideRange(f"f is not in range(chi_+): relative residual {residual:.3e}")
    if t == 0:
        return f.copy()
    coords = split.V_plus.conj().T @ f
    return split.V_plus @ (split.restricted_exp(t) @ coords)


def decay_constant(
    split: SpectralSplit, f: np.ndarray, t_values: Sequence[float], delta: float = DECAY_SLACK
) -> float:
    """max_t ||e^{-tT} f|| e^{t gap (1 - delta)} / ||f|| over ``t_values``."""
    norm_f = np.linalg.norm(f)
    if norm_f == 0:
        return 0.0
    rate = split.spectral_gap * (1.0 - delta)
    best = 0.0
    for t in t_values:
        value = np.linalg.norm(semigroup_apply(split, float(t), f))
        if value == 0:
            continue
        best = max(best, math.exp(math.log(value / norm_f) + t * rate))
    return best


@dataclass(frozen=True)
class PsiFunction:
    """Admissible psi with its branches on Re z > 0 and Re z < 0."""

    name: str
    scalar: Callable[[complex], complex]
    plus: Callable[[np.ndarray], np.ndarray]
    minus: Callable[[np.ndarray], np.ndarray]


def _sgn(z: complex) -> float:
    return 1.0 if np.real(z) > 0 else -1.0


def _resolvent_branch(M: np.ndarray) -> np.ndarray:
    eye = np.eye(M.shape[0])
    return np.linalg.solve(eye + M @ M, M)


EXP_PSI = PsiFunction(
    "z_exp",
    lambda z: z * np.exp(-_sgn(z) * z),
    lambda M: M @ scipy.linalg.expm(-M),
    lambda M: M @ scipy.linalg.expm(M),
)
RESOLVENT_PSI = PsiFunction(
    "z_resolvent",
    lambda z: z / (1.0 + z * z),
    _resolvent_branch,
    _resolvent_branch,
)
CUBIC_PSI = PsiFunction(
    "z_cubic_exp",
    lambda z: z * (1.0 + z * z) * np.exp(-_sgn(z) * z),
    lambda M: M @ (np.eye(M.shape[0]) + M @ M) @ scipy.linalg.expm(-M),
    lambda M: M @ (np.eye(M.shape[0]) + M @ M) @ scipy.linalg.expm(M),
)
PSI_FAMILY: Dict[str, PsiFunction] = {
    psi.name: psi for psi in (EXP_PSI, RESOLVENT_PSI, CUBIC_PSI)
}


def psi_apply(
    split: SpectralSplit,
    t: float,
    f: np.ndarray,
    psi: PsiFunction = CUBIC_PSI,
) -> np.ndarray:
    """psi(tT) f: each branch on its spectral subspace, zero on the kernel."""
    if not t > 0:
        raise ValueError(f"t must be positive, got {t}")
    f = np.asarray(f, dtype=complex)
    coords = split.coordinates @ f
    f_red_plus = split.P_plus @ coords
    f_red_minus = split.P_minus @ coords
    W_plus = split.basis.conj().T @ split.V_plus
    W_minus = split.basis.conj().T @ split.V_minus
    out = np.zeros_like(f)
    if split.d_plus:
        block = psi.plus(t * split.T_restricted)
        out = out + split.V_plus @ (block @ (W_plus.conj().T @ f_red_plus))
    if split.d_minus:
        block = psi.minus(t * split.T_minus_restricted)
        out = out + split.V_minus @ (block @ (W_minus.conj().T @ f_red_minus))
    return out


def quadratic_estimate(
    split: SpectralSplit,
    psi: PsiFunction,
    f: np.ndarray,
    tgrid: Optional[TGrid] = None,
    rule: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> float:
    """|||psi(tT) f||| / ||f|| with the t-grid trapezoid rule (or an explicit rule)."""
    f = np.asarray(f, dtype=complex)
    norm_f = np.linalg.norm(f)
    if norm_f == 0:
        return 0.0
    if rule is not None:
        nodes, weights = rule
    elif tgrid is not None:
        nodes, weights = tgrid.nodes, tgrid.weights
    else:
        raise ValueError("quadratic_estimate needs a t-grid or a quadrature rule")
    total = 0.0
    for t, w in zip(nodes, weights):
        total += w * float(np.linalg.norm(psi_apply(split, float(t), f, psi)) ** 2)
    return math.sqrt(total) / float(norm_f)
