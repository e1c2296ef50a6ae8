# config.py
import math
from typing import Any, Dict, List

DEFAULT_N = 32  # grid points, power of two
DEFAULT_M = 160  # t-grid samples
DEFAULT_L = 2.0 * math.pi
DEFAULT_SYSTEM_SIZE = 1  # m

DEFAULT_WHITNEY_C0 = 0.5
DEFAULT_WHITNEY_C1 = 1.0
DEFAULT_APERTURE = 1.0
DEFAULT_SIGMA_FLOOR = 1e-6
DEFAULT_SEED = 0
DEFAULT_TRIALS = 20

# Low Fourier modes used for random boundary data and test fields, so that the
# same continuum object is sampled at N and 2N.
DEFAULT_MAX_MODE = 4

COEFFICIENT_KINDS: List[str] = ["identity", "constant", "hermitian", "block"]

DEFAULT_COEFFICIENT: Dict[str, Any] = {
    "kind": "hermitian",
    "seed": 7,
    "roughness": 2,
    "kappa_target": 0.5,
    "amplitude": 0.5,
    "path": None,
}

TOLERANCES: Dict[str, float] = {
    "algebra": 1e-8,
    "decomposition": 1e-10,
    "ibp": 1e-6,
    "weakform": 1e-5,
    "semigroup": 1e-9,
    "block_kato": 1e-6,
    "trace": 5e-2,
    "stability": 0.25,
    "equiv_stability": 0.25,
    "quad_stability": 0.20,
    "carleson_stability": 0.15,
    "openness_radius": 0.05,
    "openness_jump": 2.0,
}

EXPERIMENT_IDS: List[str] = [
    "EQUIV",
    "BILINEAR",
    "IBP",
    "QUAD",
    "DECOMP",
    "CARLESON",
    "RELLICH",
    "DOMAIN",
    "OPENNESS",
    "BLOCK-KATO",
]

EXPERIMENT_STATEMENTS: Dict[str, str] = {
    "GOLDEN": "Poisson golden suite for A=I: per-mode solutions, generator symbol, Hardy trace norms",
    "EQUIV": "||u||^2 ~ sup_t ||U_t||^2 ~ ||N~_*(U)||^2 ~ |||t grad U|||^2 for solutions of a well-posed Dirichlet problem",
    "BILINEAR": "|int int grad U . conj(v)| <= C ||u0|| (|||t grad v||| + ||N_* v||)",
    "IBP": "int int grad U . conj(v) = -int int t dF . conj(dv) - int int t d^2F . conj(v) (integration by parts in t)",
    "QUAD": "|||psi(t T_A) f||| <~ ||f|| for admissible psi",
    "DECOMP": "Q_t v = Q_t((I-P_t)/(t|grad|)) t|grad| v + (Q_t P_t - gamma_t S_t P_t) v + gamma_t S_t P_t v",
    "CARLESON": "|gamma_t(x)|^2 dt dx / t is a Carleson measure",
    "RELLICH": "||f_0|| ~ ||f_par|| and ||f_par|| ~ ||(A f)_0|| on range(chi_+(T_A))",
    "DOMAIN": "domain of the Dirichlet semigroup generator is W^{1,2} with ||grad u0|| ~ ||Gen u0||",
    "OPENNESS": "the set of A with (Dir-A) well-posed is open in L_infinity",
    "BLOCK-KATO": "block case: V(t) = exp(-t L^{1/2}) u0 and ||L^{1/2} u|| ~ ||grad u||",
}

THREADS_ENV_VAR = "HALFSPACE_LAB_THREADS"
CONFIG_SCHEMA_VERSION = 1

# Exemplar document for utils.validate_against_schema: every key must be present.
RUN_CONFIG_SCHEMA: Dict[str, Any] = {
    "schema": 1,
    "N": 32,
    "M": 160,
}

COEFFICIENT_FILE_SCHEMA: Dict[str, Any] = {
    "schema": 1,
    "m": 1,
    "N": 32,
    "L": 6.28,
    "kind": "string",
    # N samples x (2m)^2 entries x (re, im)
    "entries": [[[0.0, 0.0]]],
}

REPORT_FILE_SCHEMA: Dict[str, Any] = {
    "id": "string",
    "statement": "string",
    "config": {"N": 32},
    "constants": {},
    "pass": True,
}
