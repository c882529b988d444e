"""JSON-with-base64 array container shared by model and prior files.

Arrays travel as base64-encoded little-endian float64, row-major, with
their shapes declared in a separate "shapes" map so the JSON header stays
diffable while payloads stay compact.
"""

from __future__ import annotations

import base64

import numpy as np


class ContainerError(ValueError):
    """Malformed packed-array container (bad base64, shape mismatch, ...)."""


def pack_array(arr: np.ndarray) -> str:
    a = np.ascontiguousarray(np.asarray(arr, dtype=np.float64))
    return base64.b64encode(a.astype("<f8").tobytes()).decode("ascii")


def unpack_array(data: str, shape: list[int] | tuple[int, ...], field: str) -> np.ndarray:
    try:
        raw = base64.b64decode(data.encode("ascii"), validate=True)
    except Exception as exc:
        raise ContainerError(f"field '{field}': invalid base64 payload ({exc})") from exc
    expected = int(np.prod(shape)) * 8 if len(shape) else 8
    if len(raw) != expected:
        raise ContainerError(
            f"field '{field}': payload holds {len(raw)} bytes, shape {list(shape)} needs {expected}"
        )
    return np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)


def pack_fields(doc: dict, arrays: dict[str, np.ndarray]) -> dict:
    """Add packed arrays plus their 'shapes' map to a JSON document dict."""
    shapes = doc.setdefault("shapes", {})
    for name, arr in arrays.items():
        a = np.asarray(arr)
        doc[name] = pack_array(a)
        shapes[name] = list(a.shape)
    return doc


def unpack_fields(doc: dict, names: list[str]) -> dict[str, np.ndarray]:
    shapes = doc.get("shapes")
    if not isinstance(shapes, dict):
        raise ContainerError("missing 'shapes' map")
    out = {}
    for name in names:
        if name not in doc:
            raise ContainerError(f"missing array field '{name}'")
        if name not in shapes:
            raise ContainerError(f"field '{name}' has no entry in 'shapes'")
        out[name] = unpack_array(doc[name], shapes[name], name)
    return out
