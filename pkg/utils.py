import hashlib
import json
import logging
import os
import tempfile
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, TypeVar

import numpy as np
import pandas as pd

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class SchemaValidationError(ValueError):
    """Raised when a JSON document does not match the expected schema."""


def safe_json_loads(raw: str) -> Any:
    """
    Safely parse JSON string. If parsing fails, try to extract the first
    top-level JSON object from the string by trimming outside text.
    """
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        start = raw.find("{")
        end = raw.rfind("}")
        if start != -1 and end != -1 and end > start:
            try:
                return json.loads(raw[start : end + 1])
            except json.JSONDecodeError:
                pass
        raise


def validate_against_schema(schema: Any, payload: Any, path: str = "$") -> None:
    """
    Validate that ``payload`` mirrors the structure of ``schema``.

    Checks presence and nesting of keys/collections rather than strict typing.
    Raises SchemaValidationError on mismatch.
    """

    def _validate(expected: Any, value: Any, current_path: str) -> None:
        if isinstance(expected, dict):
            if not isinstance(value, dict):
                raise SchemaValidationError(
                    f"Expected object at {current_path}, got {type(value).__name__}"
                )
            for key, sub_schema in expected.items():
                if key not in value:
                    raise SchemaValidationError(
                        f"Missing key '{key}' at {current_path}"
                    )
                _validate(sub_schema, value[key], f"{current_path}.{key}")
            return

        if isinstance(expected, list):
            if not isinstance(value, list):
                raise SchemaValidationError(
                    f"Expected list at {current_path}, got {type(value).__name__}"
                )
            if expected:
                exemplar = expected[0]
                for idx, item in enumerate(value):
                    _validate(exemplar, item, f"{current_path}[{idx}]")
            return

        # Primitive exemplar: just ensure presence and non-null value
        if value is None or (isinstance(value, str) and not value.strip()):
            raise SchemaValidationError(
                f"Expected non-empty value at {current_path}, got '{value}'"
            )

    _validate(schema, payload, path)


def to_jsonable(value: Any) -> Any:
    """Convert numpy scalars/arrays and nested containers into plain JSON types."""
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_,)):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, (np.floating, float)):
        x = float(value)
        if not np.isfinite(x):
            return "inf" if x > 0 else ("-inf" if x < 0 else "nan")
        return x
    if isinstance(value, (np.complexfloating, complex)):
        return [to_jsonable(value.real), to_jsonable(value.imag)]
    return value


def canonical_json(payload: Any) -> str:
    """Deterministic JSON text: sorted keys, fixed separators."""
    return json.dumps(to_jsonable(payload), sort_keys=True, indent=2, separators=(",", ": "))


def content_hash(*parts: Any) -> str:
    """Short sha256 over bytes, arrays or JSON-able values."""
    digest = hashlib.sha256()
    for part in parts:
        if isinstance(part, np.ndarray):
            digest.update(str(part.dtype).encode())
            digest.update(str(part.shape).encode())
            digest.update(np.ascontiguousarray(part).tobytes())
        elif isinstance(part, bytes):
            digest.update(part)
        else:
            digest.update(canonical_json(part).encode("utf-8"))
    return digest.hexdigest()[:16]


def atomic_write_text(path: str, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and a rename."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except Exception:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise


def write_json(path: str, payload: Any) -> None:
    atomic_write_text(path, canonical_json(payload) + "\n")


def write_csv(path: str, frame: pd.DataFrame) -> None:
    """Write a DataFrame as CSV atomically, full float precision."""
    atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


def load_json_file(path: str) -> Any:
    with open(path, "r", encoding="utf-8") as f:
        return safe_json_loads(f.read())


def parallel_map(
    func: Callable[[T], R], items: Sequence[T], max_workers: Optional[int] = None
) -> List[R]:
    """Order-preserving map, threaded when more than one worker is allowed.

    numpy/scipy kernels release the GIL, so threads are enough here.
    """
    workers = max_workers or 1
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def spawn_rngs(seed: int, count: int, *keys: int) -> List[np.random.Generator]:
    """Independent, reproducible generators for ``count`` trials."""
    sequence = np.random.SeedSequence([int(seed), *[int(k) for k in keys]])
    return [np.random.default_rng(child) for child in sequence.spawn(count)]


def parse_int_list(raw: str) -> List[int]:
    """Parse a comma-separated list of integers such as ``1,3,-2``."""
    if not raw:
        return []
    return [int(piece.strip()) for piece in raw.split(",") if piece.strip()]


def summarize(values: Iterable[float]) -> Dict[str, float]:
    arr = np.asarray(list(values), dtype=float)
    if arr.size == 0:
        return {"min": float("nan"), "max": float("nan"), "count": 0}
    return {"min": float(arr.min()), "max": float(arr.max()), "count": int(arr.size)}
