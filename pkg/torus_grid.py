"""Periodic spatial grid, dyadic interval tree and logarithmic t-grid.

The boundary R is replaced by the torus of period L. Every grid function is a
length-N array of samples at x_i = i L / N and norms carry the cell width
dx = L / N, so that ||e^{ikx}||_2^2 = L.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from functools import cached_property
from typing import List, Sequence, Tuple

import numpy as np

logger = logging.getLogger(__name__)


class GridError(ValueError):
    """Raised for invalid grid parameters or mismatched sample counts."""


def _is_power_of_two(value: int) -> bool:
    return value > 0 and (value & (value - 1)) == 0


@dataclass(frozen=True)
class TorusGrid:
    N: int
    L: float = 2.0 * math.pi

    def __post_init__(self) -> None:
        if not _is_power_of_two(int(self.N)) or self.N < 8:
            raise GridError(f"N must be a power of two >= 8, got {self.N}")
        if not self.L > 0:
            raise GridError(f"L must be positive, got {self.L}")

    @property
    def J(self) -> int:
        return int(round(math.log2(self.N)))

    @property
    def dx(self) -> float:
        return self.L / self.N

    @cached_property
    def points(self) -> np.ndarray:
        return np.arange(self.N) * self.dx

    @cached_property
    def mode_numbers(self) -> np.ndarray:
        """Integer modes in FFT order, Nyquist taken as +N/2: {-N/2+1, ..., N/2}."""
        modes = np.fft.fftfreq(self.N, d=1.0 / self.N).round().astype(int)
        modes[self.N // 2] = self.N // 2
        return modes

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        return self.mode_numbers * (2.0 * math.pi / self.L)

    @cached_property
    def dft_matrix(self) -> np.ndarray:
        """Unitary DFT: row j is the mode mode_numbers[j]."""
        n = np.arange(self.N)
        return np.exp(-2j * math.pi * np.outer(self.mode_numbers, n) / self.N) / math.sqrt(
            self.N
        )

    @cached_property
    def mean_free_basis(self) -> np.ndarray:
        """Orthonormal (Euclidean) columns e^{ikx}/sqrt(N) for every k != 0."""
        basis = self.dft_matrix.conj().T
        return basis[:, self.mode_numbers != 0]

    def mode(self, k: int) -> np.ndarray:
        """Samples of e^{i k (2 pi / L) x}."""
        return np.exp(1j * k * (2.0 * math.pi / self.L) * self.points)

    def inner(self, f: np.ndarray, g: np.ndarray) -> complex:
        """L2 inner product (f, g) = dx * sum f conj(g) over all axes."""
        return complex(self.dx * np.vdot(np.asarray(g), np.asarray(f)))

    def norm(self, f: np.ndarray) -> float:
        return float(math.sqrt(self.dx) * np.linalg.norm(np.asarray(f).ravel()))

    def norm_fourier(self, f: np.ndarray) -> float:
        """Same norm computed from Fourier coefficients (Parseval)."""
        coeffs = np.fft.fft(np.asarray(f), axis=-1)
        return float(math.sqrt(self.dx / self.N) * np.linalg.norm(coeffs.ravel()))

    def mean(self, f: np.ndarray) -> np.ndarray:
        return np.asarray(f).mean(axis=-1)

    def remove_mean(self, f: np.ndarray) -> np.ndarray:
        f = np.asarray(f)
        return f - f.mean(axis=-1, keepdims=True)

    def periodic_distance(self, x: float, y: np.ndarray) -> np.ndarray:
        d = np.abs(np.asarray(y) - x) % self.L
        return np.minimum(d, self.L - d)

    def fourier_multiplier(self, f: np.ndarray, symbol: np.ndarray) -> np.ndarray:
        """Apply the multiplier ``symbol`` (one value per wavenumber) along the last axis."""
        return np.fft.ifft(np.fft.fft(np.asarray(f), axis=-1) * symbol, axis=-1)

    def derivative(self, f: np.ndarray) -> np.ndarray:
        return self.fourier_multiplier(f, 1j * self.wavenumbers)

    @cached_property
    def dyadic_tree(self) -> "DyadicTree":
        return DyadicTree(self)


def spectral_derivative(grid: TorusGrid) -> np.ndarray:
    """Dense N x N Fourier differentiation matrix, exact on band-limited functions."""
    F = grid.dft_matrix
    matrix = F.conj().T @ (1j * grid.wavenumbers[:, None] * F)
    # skew-adjoint up to rounding; make it exact
    return 0.5 * (matrix - matrix.conj().T)


class DyadicTree:
    """Dyadic intervals of length L 2^{-s}, s = 0..J, with origin at x = 0."""

    def __init__(self, grid: TorusGrid) -> None:
        self.grid = grid
        self.levels = grid.J + 1

    def side(self, level: int) -> float:
        return self.grid.L * 2.0 ** (-level)

    def points_per_interval(self, level: int) -> int:
        return self.grid.N >> level

    def membership(self, level: int) -> np.ndarray:
        """Interval index (0..2^s - 1) of every grid point at ``level``."""
        self._check_level(level)
        return np.arange(self.grid.N) // self.points_per_interval(level)

    def intervals(self, level: int) -> List[np.ndarray]:
        size = self.points_per_interval(level)
        return [np.arange(q * size, (q + 1) * size) for q in range(2**level)]

    def level_for_scale(self, t: float) -> int:
        """Level s with side l_s satisfying l_s / 2 < t <= l_s (clamped at J)."""
        if t <= 0:
            raise GridError(f"scale must be positive, got {t}")
        level = int(math.floor(math.log2(self.grid.L / t)))
        # guard rounding at exact powers of two
        while level > 0 and self.side(level) < t:
            level -= 1
        while self.side(level + 1) >= t and level + 1 <= self.grid.J:
            level += 1
        return max(0, min(level, self.grid.J))

    def average(self, v: np.ndarray, level: int) -> np.ndarray:
        """Conditional expectation onto level-``level`` intervals along the last axis."""
        self._check_level(level)
        v = np.asarray(v)
        size = self.points_per_interval(level)
        shaped = v.reshape(*v.shape[:-1], 2**level, size)
        means = shaped.mean(axis=-1, keepdims=True)
        return np.broadcast_to(means, shaped.shape).reshape(v.shape).copy()

    def _check_level(self, level: int) -> None:
        if not 0 <= level <= self.grid.J:
            raise GridError(f"level must lie in [0, {self.grid.J}], got {level}")


@dataclass(frozen=True)
class TGrid:
    t_min: float
    t_max: float
    M: int

    def __post_init__(self) -> None:
        if not 0 < self.t_min < self.t_max:
            raise GridError(f"Need 0 < t_min < t_max, got {self.t_min}, {self.t_max}")
        if self.M < 2:
            raise GridError(f"M must be >= 2, got {self.M}")

    @classmethod
    def for_grid(cls, grid: TorusGrid, M: int) -> "TGrid":
        return cls(grid.L / (8.0 * grid.N), 16.0 * grid.L, M)

    @property
    def ratio(self) -> float:
        return (self.t_max / self.t_min) ** (1.0 / (self.M - 1))

    @property
    def log_step(self) -> float:
        return math.log(self.t_max / self.t_min) / (self.M - 1)

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = self.t_min * np.exp(self.log_step * np.arange(self.M))
        nodes[-1] = self.t_max
        return nodes

    @cached_property
    def weights(self) -> np.ndarray:
        """Trapezoid weights in log t for the measure dt/t."""
        w = np.full(self.M, self.log_step)
        w[0] = w[-1] = 0.5 * self.log_step
        return w


def tgrid_integral(field_norms: Sequence[float], tgrid: TGrid) -> float:
    """sum_j w_j ||F_{t_j}||^2, the truncated form of int_0^inf ||F_t||^2 dt/t."""
    values = np.asarray(field_norms, dtype=float)
    if values.shape != (tgrid.M,):
        raise GridError(f"Expected {tgrid.M} values, got shape {values.shape}")
    return float(np.dot(tgrid.weights, values))


def log_gauss_rule(
    t_lo: float, t_hi: float, panel_width: float = 0.5, order: int = 16
) -> Tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule in u = log t for the measure dt/t.

    Multiply the weights by the nodes to integrate against dt.
    """
    if not 0 < t_lo < t_hi:
        raise GridError(f"Need 0 < t_lo < t_hi, got {t_lo}, {t_hi}")
    span = math.log(t_hi / t_lo)
    panels = max(1, int(math.ceil(span / panel_width)))
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(math.log(t_lo), math.log(t_hi), panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    u = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return np.exp(u), weights
