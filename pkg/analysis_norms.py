"""Half-space norms: |||.|||, non-tangential maximal functions, P_t, S_t, gamma_t, Carleson boxes.

Fields on the half-space are sampled on (t-grid) x (torus grid) with shape
(M, components, N). Spatial norms carry dx and t-integrals the measure dt/t.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from coefficients import CoefficientField
from operator_forge import OperatorCache, assemble_Q, constant_fields
from torus_grid import TGrid, TorusGrid, tgrid_integral
from utils import write_csv

logger = logging.getLogger(__name__)

MEAN_TOLERANCE = 1e-12


class NormError(ValueError):
    """Raised for inputs outside an operator's domain (nonzero mean, t beyond one period)."""


@dataclass(frozen=True, eq=False)
class HalfSpaceField:
    grid: TorusGrid
    tgrid: TGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 3 or values.shape[0] != self.tgrid.M or values.shape[2] != self.grid.N:
            raise NormError(
                f"Field shape {values.shape} does not match (M={self.tgrid.M}, c, N={self.grid.N})"
            )
        if not np.all(np.isfinite(values)):
            raise NormError("Field has non-finite entries")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_callable(
        cls, grid: TorusGrid, tgrid: TGrid, func: Callable[[float], np.ndarray]
    ) -> "HalfSpaceField":
        values = np.stack([np.asarray(func(float(t))).reshape(-1, grid.N) for t in tgrid.nodes])
        return cls(grid, tgrid, values)

    @property
    def components(self) -> int:
        return self.values.shape[1]

    def normal(self, m: int) -> np.ndarray:
        return self.values[:, :m]

    def tangential(self, m: int) -> np.ndarray:
        return self.values[:, m:]

    def scaled_by_t(self) -> "HalfSpaceField":
        return HalfSpaceField(self.grid, self.tgrid, self.tgrid.nodes[:, None, None] * self.values)

    def slice_norms(self) -> np.ndarray:
        """||F(t_j, .)||_2 for every t_j."""
        flat = self.values.reshape(self.tgrid.M, -1)
        return math.sqrt(self.grid.dx) * np.linalg.norm(flat, axis=1)


@dataclass(frozen=True)
class WhitneyBox:
    c0: float = 0.5
    c1: float = 1.0

    def __post_init__(self) -> None:
        if not 0.0 < self.c0 < 1.0:
            raise NormError(f"c0 must lie in (0, 1), got {self.c0}")
        if not self.c1 > 0:
            raise NormError(f"c1 must be positive, got {self.c1}")

    def t_range(self, t: float) -> Tuple[float, float]:
        return (1.0 - self.c0) * t, (1.0 + self.c0) * t

    def volume(self, t: float) -> float:
        return 2.0 * self.c0 * t * 2.0 * self.c1 * t

    @property
    def normalized_volume(self) -> float:
        """|Q(t,x)| / t^2, the same for every t."""
        return 4.0 * self.c0 * self.c1


def square_norm(F: HalfSpaceField) -> float:
    """|||F||| = (int ||F_t||^2 dt/t)^{1/2} on the t-grid."""
    return math.sqrt(max(tgrid_integral(F.slice_norms() ** 2, F.tgrid), 0.0))


def _ball_offsets(grid: TorusGrid, radius: float) -> np.ndarray:
    offsets = np.arange(grid.N)
    distance = grid.periodic_distance(0.0, offsets * grid.dx)
    return offsets[distance < radius]


def _ball_indicator(grid: TorusGrid, radius: float) -> np.ndarray:
    mask = np.zeros(grid.N)
    offsets = _ball_offsets(grid, radius)
    mask[offsets] = 1.0
    return mask


def _ball_average(grid: TorusGrid, values: np.ndarray, radius: float) -> np.ndarray:
    """Average of ``values`` over the sample points of B(x, radius), for every x."""
    mask = _ball_indicator(grid, radius)
    # the ball is symmetric, so correlation equals convolution
    conv = np.fft.ifft(np.fft.fft(values) * np.fft.fft(mask)).real
    return conv / mask.sum()


def ntm_modified(F: HalfSpaceField, box: Optional[WhitneyBox] = None) -> np.ndarray:
    """Modified maximal function sup_t t^{-1} ||F||_{L2(Q(t,x))} on the torus grid.

    The box integral is the continuum volume times the discrete box average of
    |F|^2 (t-samples weighted by dt, x-samples uniformly); only boxes that fit in
    one period (c1 t <= L/2) take part.
    """
    box = box or WhitneyBox()
    grid, nodes = F.grid, F.tgrid.nodes
    energy = np.sum(np.abs(F.values) ** 2, axis=1)  # (M, N)
    dt_weights = F.tgrid.weights * nodes
    result = np.zeros(grid.N)
    for t in nodes:
        if box.c1 * t > 0.5 * grid.L:
            break
        lo, hi = box.t_range(t)
        inside = (nodes >= lo * (1 - 1e-12)) & (nodes <= hi * (1 + 1e-12))
        w = dt_weights[inside]
        averaged_t = (w[:, None] * energy[inside]).sum(axis=0) / w.sum()
        box_average = _ball_average(grid, averaged_t, box.c1 * t)
        result = np.maximum(result, np.sqrt(np.maximum(box_average, 0.0) * box.normalized_volume))
    return result


def ntm_standard(F: HalfSpaceField, aperture: float = 1.0, l1_average: bool = False) -> np.ndarray:
    """Cone maximal function sup_{|y-x| < c t} |F(t, y)|.

    With ``l1_average`` the pointwise sup in y is replaced by the average of |F|
    over the ball B(x, c t).
    """
    if not aperture > 0:
        raise NormError(f"aperture must be positive, got {aperture}")
    grid = F.grid
    pointwise = np.linalg.norm(F.values, axis=1)  # (M, N)
    result = np.zeros(grid.N)
    for j, t in enumerate(F.tgrid.nodes):
        radius = aperture * t
        if l1_average:
            local = _ball_average(grid, pointwise[j], radius)
        else:
            offsets = _ball_offsets(grid, radius)
            index = (np.arange(grid.N)[:, None] + offsets[None, :]) % grid.N
            local = pointwise[j][index].max(axis=1)
        result = np.maximum(result, local)
    return result


def _symbol_apply(grid: TorusGrid, v: np.ndarray, symbol: np.ndarray) -> np.ndarray:
    return grid.fourier_multiplier(np.asarray(v, dtype=complex), symbol)


def pt_symbol(grid: TorusGrid, t: float) -> np.ndarray:
    k = grid.wavenumbers
    return 1.0 / (1.0 + (t * k) ** 2)


def apply_Pt(grid: TorusGrid, v: np.ndarray, t: float) -> np.ndarray:
    """Componentwise resolvent multiplier (1 + t^2 k^2)^{-1}."""
    return _symbol_apply(grid, v, pt_symbol(grid, t))


def apply_t_abs_grad(grid: TorusGrid, v: np.ndarray, t: float) -> np.ndarray:
    """t (-Laplacian)^{1/2}: multiplier t|k|."""
    return _symbol_apply(grid, v, t * np.abs(grid.wavenumbers))


def quotient_symbol(grid: TorusGrid, t: float) -> np.ndarray:
    s = t * np.abs(grid.wavenumbers)
    return s / (1.0 + s * s)


def _check_mean_free(grid: TorusGrid, v: np.ndarray) -> None:
    v = np.asarray(v)
    scale = max(1.0, float(np.abs(v).max(initial=0.0)))
    drift = float(np.abs(grid.mean(v)).max(initial=0.0))
    if drift > MEAN_TOLERANCE * scale:
        raise NormError(f"Input has nonzero mean {drift:.3e}")


def smoothing_quotient(grid: TorusGrid, v: np.ndarray, t: float) -> np.ndarray:
    """(I - P_t)/(t|grad|) as the bounded multiplier t|k|/(1 + t^2 k^2), on zero-mean input."""
    _check_mean_free(grid, v)
    return _symbol_apply(grid, v, quotient_symbol(grid, t))


def apply_St(grid: TorusGrid, v: np.ndarray, t: float, clamp: bool = False) -> np.ndarray:
    """Average over the dyadic interval of side l with l/2 < t <= l.

    ``clamp`` maps t > L to the whole-torus average instead of raising.
    """
    if not t > 0:
        raise NormError(f"t must be positive, got {t}")
    if t > grid.L:
        if not clamp:
            raise NormError(f"S_t needs t <= L = {grid.L:g}, got {t:g}")
        level = 0
    else:
        level = grid.dyadic_tree.level_for_scale(t)
    return grid.dyadic_tree.average(np.asarray(v), level)


def gamma(A: CoefficientField, t: float, cache: Optional[OperatorCache] = None) -> np.ndarray:
    """gamma_t(x_i) as an (N, c, c) array: column b is Q_t applied to the constant e_b."""
    c, N = A.size, A.grid.N
    Q = assemble_Q(A, t, cache).entries
    columns = Q @ constant_fields(A.grid, c)  # (cN, c)
    return columns.reshape(c, N, c).transpose(1, 0, 2)


def apply_gamma(gamma_t: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Pointwise (gamma_t w)(x_i) for w of shape (c, N)."""
    return np.einsum("iab,bi->ai", gamma_t, np.asarray(w))


def decompose_Qt(
    A: CoefficientField,
    t: float,
    v: np.ndarray,
    cache: Optional[OperatorCache] = None,
) -> Dict[str, np.ndarray]:
    """The three-term splitting of Q_t v: smoothing term, principal-part error, principal part."""
    grid, c = A.grid, A.size
    v = np.asarray(v, dtype=complex).reshape(c, grid.N)
    Q = assemble_Q(A, t, cache).entries
    gamma_t = gamma(A, t, cache)

    def q_apply(w: np.ndarray) -> np.ndarray:
        return (Q @ w.reshape(-1)).reshape(c, grid.N)

    lifted = apply_t_abs_grad(grid, v, t)
    first = q_apply(smoothing_quotient(grid, lifted, t))
    smoothed = apply_Pt(grid, v, t)
    principal = apply_gamma(gamma_t, apply_St(grid, smoothed, t, clamp=True))
    second = q_apply(smoothed) - principal
    return {
        "Qv": q_apply(v),
        "smoothing": first,
        "principal_error": second,
        "principal": principal,
    }


@dataclass(frozen=True)
class CarlesonBox:
    level: int
    index: int
    side: float
    mass: float

    @property
    def ratio(self) -> float:
        return self.mass / self.side


@dataclass(frozen=True)
class CarlesonBoxReport:
    boxes: List[CarlesonBox]
    carleson_norm: float
    argmax: Tuple[int, int]

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            [(b.level, b.index, b.side, b.mass, b.ratio) for b in self.boxes],
            columns=["level", "index", "side", "mass", "ratio"],
        )


def _truncated_log_weights(nodes: np.ndarray, log_step: float, upper: float) -> np.ndarray:
    """Trapezoid weights (dt/t) on the nodes t_j <= upper."""
    weights = np.zeros(len(nodes))
    count = int(np.count_nonzero(nodes <= upper * (1 + 1e-12)))
    if count >= 2:
        weights[:count] = log_step
        weights[0] = weights[count - 1] = 0.5 * log_step
    return weights


def carleson_density(gammas: np.ndarray) -> np.ndarray:
    """|gamma_t(x)|^2 (spectral norm) for gammas of shape (M, N, c, c)."""
    return np.linalg.norm(gammas, ord=2, axis=(2, 3)) ** 2


def carleson_norm(
    gammas: np.ndarray, grid: TorusGrid, tgrid: TGrid, density: Optional[np.ndarray] = None
) -> CarlesonBoxReport:
    """sup over dyadic Q of (int int_{R_Q} |gamma_t(x)|^2 dx dt/t) / |Q|."""
    if density is None:
        density = carleson_density(gammas)
    if density.shape != (tgrid.M, grid.N):
        raise NormError(f"density shape {density.shape} != {(tgrid.M, grid.N)}")
    tree = grid.dyadic_tree
    boxes: List[CarlesonBox] = []
    best, argmax = -1.0, (0, 0)
    for level in range(tree.levels):
        side = tree.side(level)
        w = _truncated_log_weights(tgrid.nodes, tgrid.log_step, side)
        column = (w[:, None] * density).sum(axis=0) * grid.dx  # (N,)
        masses = column.reshape(2**level, -1).sum(axis=1)
        for index, mass in enumerate(masses):
            box = CarlesonBox(level, index, side, float(mass))
            boxes.append(box)
            if box.ratio > best:
                best, argmax = box.ratio, (level, index)
    return CarlesonBoxReport(boxes, max(best, 0.0), argmax)


def gamma_lattice(
    A: CoefficientField, tgrid: TGrid, cache: Optional[OperatorCache] = None
) -> np.ndarray:
    """gamma_t on every t-grid node: shape (M, N, c, c)."""
    return np.stack([gamma(A, float(t), cache) for t in tgrid.nodes])


@dataclass(frozen=True)
class Profile:
    name: str
    phi: Callable[[float], float]
    dphi: Callable[[float], float]


def log_gaussian(center: float = 1.0, width: float = 1.0) -> Profile:
    def phi(t: float) -> float:
        u = math.log(t / center)
        return math.exp(-u * u / (2.0 * width * width))

    def dphi(t: float) -> float:
        return phi(t) * (-math.log(t / center) / (width * width * t))

    return Profile("log_gaussian", phi, dphi)


def log_bump(t_lo: float, t_hi: float) -> Profile:
    """Smooth bump supported in (t_lo, t_hi), built in log t."""
    a, b = math.log(t_lo), math.log(t_hi)

    def _u(t: float) -> float:
        return (math.log(t) - a) / (b - a)

    def phi(t: float) -> float:
        u = _u(t)
        if not 0.0 < u < 1.0:
            return 0.0
        return math.exp(4.0 - 1.0 / (u * (1.0 - u)))

    def dphi(t: float) -> float:
        u = _u(t)
        if not 0.0 < u < 1.0:
            return 0.0
        return phi(t) * (1.0 - 2.0 * u) / (u * u * (1.0 - u) ** 2) / (t * (b - a))

    return Profile("log_bump", phi, dphi)


def poisson(rate: float = 1.0) -> Profile:
    return Profile("poisson", lambda t: math.exp(-rate * t), lambda t: -rate * math.exp(-rate * t))


@dataclass(frozen=True, eq=False)
class ProfiledField:
    """v(t, x) = phi(t) g(x) with an analytic t-derivative."""

    profile: Profile
    g: np.ndarray = field(repr=False)

    def at(self, t: float) -> np.ndarray:
        return self.profile.phi(t) * self.g

    def dt(self, t: float) -> np.ndarray:
        return self.profile.dphi(t) * self.g

    def sample(self, grid: TorusGrid, tgrid: TGrid) -> HalfSpaceField:
        return HalfSpaceField.from_callable(grid, tgrid, self.at)


def random_lowmode_field(
    grid: TorusGrid,
    components: int,
    rng: np.random.Generator,
    max_mode: int,
    mean_free: bool = False,
) -> np.ndarray:
    """Random (components, N) field built from modes |k| <= max_mode.

    The coefficients depend only on ``rng``, so the same draw samples the same
    function on every grid.
    """
    modes = np.arange(-max_mode, max_mode + 1)
    coeffs = rng.standard_normal((components, modes.size)) + 1j * rng.standard_normal(
        (components, modes.size)
    )
    if mean_free:
        coeffs[:, modes == 0] = 0.0
    phase = np.exp(1j * np.outer(modes, grid.points) * (2.0 * math.pi / grid.L))
    return coeffs @ phase / math.sqrt(modes.size)


def norm_report_frame(quantities: Dict[str, float], config_hash: str) -> pd.DataFrame:
    rows = [(name, float(value), config_hash) for name, value in sorted(quantities.items())]
    return pd.DataFrame(rows, columns=["quantity", "value", "config_hash"])


def write_norm_report(path: str, quantities: Dict[str, float], config_hash: str) -> None:
    write_csv(path, norm_report_frame(quantities, config_hash))


def carleson_embedding_constant(
    A: CoefficientField,
    tgrid: TGrid,
    fields: Sequence[np.ndarray],
    carleson: float,
    aperture: float = 1.0,
    cache: Optional[OperatorCache] = None,
) -> float:
    """max over v of |||gamma_t S_t P_t v||| / (sqrt(carleson) ||N_*(S_t P_t v)||_2)."""
    grid = A.grid
    if carleson <= 0:
        return 0.0
    gammas = [gamma(A, float(t), cache) for t in tgrid.nodes]
    worst = 0.0
    for v in fields:
        averaged = np.stack(
            [apply_St(grid, apply_Pt(grid, v, float(t)), float(t), clamp=True) for t in tgrid.nodes]
        )
        principal = np.stack([apply_gamma(g, a) for g, a in zip(gammas, averaged)])
        lhs = square_norm(HalfSpaceField(grid, tgrid, principal))
        rhs = grid.norm(ntm_standard(HalfSpaceField(grid, tgrid, averaged), aperture))
        if rhs > 0:
            worst = max(worst, lhs / (math.sqrt(carleson) * rhs))
    return worst
