"""Coefficient fields A(x) on the torus: generation, validation, serialization.

Samples are stored as an (N, 2m, 2m) complex array in the normal/tangential
splitting (normal block first). Generated fields are trigonometric polynomials
drawn independently of N, so the same continuum field can be sampled on any grid.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Dict, Optional, Set, Tuple

import numpy as np

from settings import COEFFICIENT_FILE_SCHEMA
from torus_grid import TorusGrid
from utils import (
    SchemaValidationError,
    atomic_write_text,
    content_hash,
    validate_against_schema,
)

logger = logging.getLogger(__name__)

KAPPA_FLOOR = 1e-10
REFERENCE_POINTS = 1024  # shift/normalization is computed on this grid, independent of N
SHIFT_MARGIN = 0.05
CLASS_TOLERANCE = 1e-12
DIRECTION_SLACK = 1e-12
KINDS = ("identity", "constant", "hermitian", "block")


class CoefficientError(ValueError):
    """Raised for infeasible generation parameters or malformed coefficient files."""


class NotAccretive(CoefficientError):
    def __init__(self, value: float, location: float) -> None:
        super().__init__(
            f"Coefficient field is not strictly accretive: min eigenvalue of Re A is "
            f"{value:.3e} at x = {location:.6g}"
        )
        self.value = value
        self.location = location


@dataclass(frozen=True)
class CoefficientField:
    grid: TorusGrid
    m: int
    samples: np.ndarray = field(repr=False)
    kind: str = "custom"

    def __post_init__(self) -> None:
        size = 2 * self.m
        samples = np.array(self.samples, dtype=complex)
        if samples.shape != (self.grid.N, size, size):
            raise CoefficientError(
                f"Expected samples of shape {(self.grid.N, size, size)}, got {samples.shape}"
            )
        if not np.all(np.isfinite(samples)):
            raise CoefficientError("Coefficient samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    @property
    def size(self) -> int:
        return 2 * self.m

    @property
    def A00(self) -> np.ndarray:
        return self.samples[:, : self.m, : self.m]

    @property
    def A0par(self) -> np.ndarray:
        return self.samples[:, : self.m, self.m :]

    @property
    def Apar0(self) -> np.ndarray:
        return self.samples[:, self.m :, : self.m]

    @property
    def Aparpar(self) -> np.ndarray:
        return self.samples[:, self.m :, self.m :]

    @cached_property
    def Lambda(self) -> float:
        """max_i ||A(x_i)||_op."""
        return float(np.linalg.norm(self.samples, ord=2, axis=(1, 2)).max())

    @cached_property
    def digest(self) -> str:
        return content_hash(self.samples, self.m, self.grid.L)

    def adjoint(self) -> "CoefficientField":
        return CoefficientField(
            self.grid, self.m, np.conj(np.transpose(self.samples, (0, 2, 1))), self.kind
        )

    def describe(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "m": self.m,
            "N": self.grid.N,
            "L": self.grid.L,
            "hash": self.digest,
            "Lambda": self.Lambda,
            "classes": sorted(classify(self)),
        }


@dataclass(frozen=True)
class AuxiliaryPair:
    Abar: np.ndarray
    Aunder: np.ndarray
    Abar_inv: np.ndarray
    B: np.ndarray
    min_singular_Abar: float


def auxiliary_pair(A: CoefficientField) -> AuxiliaryPair:
    """Per-point Abar = [A00 A0par; 0 I], Aunder = [I 0; Apar0 Aparpar], B = Aunder Abar^{-1}."""
    m, N = A.m, A.grid.N
    eye = np.broadcast_to(np.eye(m), (N, m, m))
    zeros = np.zeros((N, m, m), dtype=complex)
    Abar = np.concatenate(
        [np.concatenate([A.A00, A.A0par], axis=2), np.concatenate([zeros, eye], axis=2)],
        axis=1,
    )
    Aunder = np.concatenate(
        [np.concatenate([eye, zeros], axis=2), np.concatenate([A.Apar0, A.Aparpar], axis=2)],
        axis=1,
    )
    sigma_min = float(np.linalg.svd(Abar, compute_uv=False)[:, -1].min())
    if sigma_min <= KAPPA_FLOOR:
        raise CoefficientError(f"Abar is singular on the grid (sigma_min = {sigma_min:.3e})")
    Abar_inv = np.linalg.inv(Abar)
    return AuxiliaryPair(
        Abar=Abar,
        Aunder=Aunder,
        Abar_inv=Abar_inv,
        B=Aunder @ Abar_inv,
        min_singular_Abar=sigma_min,
    )


def real_part_min_eig(samples: np.ndarray) -> Tuple[float, int]:
    """min_i lambda_min((A + A^*)/2) and the index where it is attained."""
    hermitian = 0.5 * (samples + np.conj(np.transpose(samples, (0, 2, 1))))
    lowest = np.linalg.eigvalsh(hermitian)[:, 0]
    idx = int(np.argmin(lowest))
    return float(lowest[idx]), idx


def estimate_kappa(A: CoefficientField) -> float:
    """Pointwise accretivity constant; for n = 1 this is the Garding constant on N(curl)."""
    value, idx = real_part_min_eig(A.samples)
    if value <= KAPPA_FLOOR:
        raise NotAccretive(value, float(A.grid.points[idx]))
    return value


def _trig_field(
    rng: np.random.Generator, size: int, roughness: int, points: np.ndarray, L: float
) -> np.ndarray:
    """Random matrix-valued trigonometric polynomial of degree <= roughness at ``points``."""
    degrees = np.arange(-roughness, roughness + 1)
    decay = 1.0 / (1.0 + np.abs(degrees)) ** 2
    coeffs = (
        rng.standard_normal((degrees.size, size, size))
        + 1j * rng.standard_normal((degrees.size, size, size))
    ) * decay[:, None, None]
    phases = np.exp(1j * 2.0 * np.pi / L * np.outer(points, degrees))
    return np.einsum("xk,kab->xab", phases, coeffs)


def _shift_to_kappa(values_ref: np.ndarray, kappa_target: float) -> float:
    lowest, _ = real_part_min_eig(values_ref)
    return max(0.0, kappa_target - lowest) + SHIFT_MARGIN * kappa_target


def make_class(
    kind: str,
    grid: TorusGrid,
    m: int = 1,
    seed: int = 0,
    roughness: int = 2,
    kappa_target: float = 0.5,
    amplitude: float = 0.5,
) -> CoefficientField:
    """Generate a field in one of the well-posed classes (identity, constant, hermitian, block)."""
    if kind not in KINDS:
        raise CoefficientError(f"Unknown coefficient kind {kind!r}; allowed: {', '.join(KINDS)}")
    if not kappa_target > 0:
        raise CoefficientError(f"kappa_target must be positive, got {kappa_target}")
    if m < 1:
        raise CoefficientError(f"m must be >= 1, got {m}")
    if not 0 <= roughness <= grid.N // 4:
        raise CoefficientError(f"roughness must lie in [0, N/4 = {grid.N // 4}], got {roughness}")

    size = 2 * m
    if kind == "identity":
        samples = np.broadcast_to(np.eye(size, dtype=complex), (grid.N, size, size)).copy()
        return CoefficientField(grid, m, samples, kind)

    rng = np.random.default_rng(seed)
    reference = np.arange(REFERENCE_POINTS) * grid.L / REFERENCE_POINTS
    degree = 0 if kind == "constant" else roughness
    raw_grid = amplitude * _trig_field(rng, size, degree, grid.points, grid.L)
    rng = np.random.default_rng(seed)
    raw_ref = amplitude * _trig_field(rng, size, degree, reference, grid.L)

    if kind == "hermitian":
        raw_grid = 0.5 * (raw_grid + np.conj(np.transpose(raw_grid, (0, 2, 1))))
        raw_ref = 0.5 * (raw_ref + np.conj(np.transpose(raw_ref, (0, 2, 1))))
    elif kind == "block":
        for raw in (raw_grid, raw_ref):
            raw[:, :m, m:] = 0.0
            raw[:, m:, :m] = 0.0

    shift = _shift_to_kappa(raw_ref, kappa_target)
    samples = raw_grid + shift * np.eye(size)[None, :, :]
    field_ = CoefficientField(grid, m, samples, kind)
    logger.debug("Generated %s field (seed=%s, shift=%.4f, kappa=%.4f)", kind, seed, shift,
                 estimate_kappa(field_))
    return field_


def make_direction(
    grid: TorusGrid, m: int = 1, seed: int = 0, roughness: int = 2, hermitian: bool = False
) -> CoefficientField:
    """Perturbation direction E with ||E||_inf <= 1 (normalized on the reference grid)."""
    if not 0 <= roughness <= grid.N // 4:
        raise CoefficientError(f"roughness must lie in [0, N/4 = {grid.N // 4}], got {roughness}")
    size = 2 * m
    reference = np.arange(REFERENCE_POINTS) * grid.L / REFERENCE_POINTS
    values = []
    for points in (grid.points, reference):
        rng = np.random.default_rng(seed)
        raw = _trig_field(rng, size, roughness, points, grid.L)
        if hermitian:
            raw = 0.5 * (raw + np.conj(np.transpose(raw, (0, 2, 1))))
        values.append(raw)
    scale = float(np.linalg.norm(values[1], ord=2, axis=(1, 2)).max())
    scale = max(scale, float(np.linalg.norm(values[0], ord=2, axis=(1, 2)).max()))
    return CoefficientField(grid, m, values[0] / scale, "hermitian" if hermitian else "custom")


def perturb(A: CoefficientField, E: CoefficientField, epsilon: float) -> CoefficientField:
    """A + epsilon E for a direction with ||E||_inf <= 1; callers re-check kappa."""
    if E.grid != A.grid or E.m != A.m:
        raise CoefficientError("Perturbation direction lives on a different grid or system size")
    if E.Lambda > 1.0 + DIRECTION_SLACK:
        raise CoefficientError(f"Perturbation direction must satisfy ||E||_inf <= 1, got {E.Lambda:.6g}")
    if epsilon == 0:
        return A
    return CoefficientField(A.grid, A.m, A.samples + epsilon * E.samples, "custom")


def block_part(A: CoefficientField) -> CoefficientField:
    """A with the normal/tangential off-diagonal blocks removed."""
    samples = np.array(A.samples)
    samples[:, : A.m, A.m :] = 0.0
    samples[:, A.m :, : A.m] = 0.0
    return CoefficientField(A.grid, A.m, samples, "block")


def classify(A: CoefficientField, tol: float = CLASS_TOLERANCE) -> Set[str]:
    """Which well-posed classes the field belongs to (hermitian, block, constant)."""
    classes: Set[str] = set()
    scale = max(A.Lambda, 1.0)
    if np.abs(A.samples - np.conj(np.transpose(A.samples, (0, 2, 1)))).max() <= tol * scale:
        classes.add("hermitian")
    if max(np.abs(A.A0par).max(initial=0.0), np.abs(A.Apar0).max(initial=0.0)) <= tol * scale:
        classes.add("block")
    if np.abs(A.samples - A.samples[0]).max() <= tol * scale:
        classes.add("constant")
    return classes


def resample(A: CoefficientField, grid: TorusGrid) -> CoefficientField:
    """Trigonometric interpolation of A onto ``grid`` (exact for degree < min(N)/2)."""
    if grid.L != A.grid.L:
        raise CoefficientError("Cannot resample between tori of different period")
    if grid.N == A.grid.N:
        return A
    n_old, n_new = A.grid.N, grid.N
    spectrum = np.fft.fft(A.samples, axis=0) / n_old
    modes_old = np.fft.fftfreq(n_old, d=1.0 / n_old).round().astype(int)
    keep = np.abs(modes_old) < min(n_old, n_new) // 2
    new_spectrum = np.zeros((n_new,) + A.samples.shape[1:], dtype=complex)
    new_spectrum[modes_old[keep] % n_new] = spectrum[keep]
    samples = np.fft.ifft(new_spectrum, axis=0) * n_new
    return CoefficientField(grid, A.m, samples, A.kind)


def to_document(A: CoefficientField) -> Dict[str, Any]:
    entries = [
        [[float(z.real), float(z.imag)] for z in point.ravel()] for point in A.samples
    ]
    return {"schema": 1, "m": A.m, "N": A.grid.N, "L": A.grid.L, "kind": A.kind,
            "entries": entries}


def from_document(payload: Dict[str, Any]) -> CoefficientField:
    try:
        validate_against_schema(COEFFICIENT_FILE_SCHEMA, payload)
    except SchemaValidationError as exc:
        raise CoefficientError(f"Malformed coefficient document: {exc}") from exc
    m, N = int(payload["m"]), int(payload["N"])
    grid = TorusGrid(N, float(payload["L"]))
    raw = np.asarray(payload["entries"], dtype=float)
    if raw.shape != (N, (2 * m) ** 2, 2):
        raise CoefficientError(
            f"entries must have shape {(N, (2 * m) ** 2, 2)}, got {raw.shape}"
        )
    samples = (raw[..., 0] + 1j * raw[..., 1]).reshape(N, 2 * m, 2 * m)
    return CoefficientField(grid, m, samples, str(payload["kind"]))


def save_field(A: CoefficientField, path: str) -> None:
    atomic_write_text(path, json.dumps(to_document(A)))


def load_field(path: str) -> CoefficientField:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CoefficientError(f"Cannot read coefficient file {path}: {exc}") from exc
    return from_document(payload)


def field_from_config(block: Dict[str, Any], grid: TorusGrid, m: int) -> CoefficientField:
    """Build a field from a RunConfig coefficient block (inline kind or file path)."""
    path: Optional[str] = block.get("path")
    if path:
        loaded = load_field(path)
        return resample(loaded, grid) if loaded.grid.N != grid.N else loaded
    return make_class(
        block.get("kind", "identity"),
        grid,
        m=m,
        seed=int(block.get("seed", 0)),
        roughness=int(block.get("roughness", 2)),
        kappa_target=float(block.get("kappa_target", 0.5)),
        amplitude=float(block.get("amplitude", 0.5)),
    )
