"""
File formats: STVD tensor datasets, binary PPM images, JSON configs and
reports, CSV study tables.

STVD layout (all little-endian)::

    b"STVD" | u8 version=1 | u32 order D | D x u32 dims | u64 count N | N*n* float64

The payload follows the library's C-order vectorization, observation by
observation.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .distributions import FamilyParams
from .ecm import FitConfig, FitResult, InitMethod, ScaleUpdate
from .family import Family
from .simulate import StudyRow
from .tensor import MAX_ORDER

STVD_MAGIC = b"STVD"
STVD_VERSION = 1
_MAX_DIM = 2**31


class FormatError(ValueError):
    """A file does not follow its declared format."""


def write_dataset(data: ArrayLike, path: str | Path, dims: tuple[int, ...] | None = None) -> None:
    """Write a stack of tensors ``(N, n_1, ..., n_D)``.

    ``dims`` is only needed for an empty stack given as a plain list.
    """
    x = np.asarray(data, dtype="<f8")
    if dims is not None:
        dims = tuple(int(d) for d in dims)
        if x.size == 0:
            x = x.reshape((0,) + dims)
        elif x.shape[1:] != dims:
            raise ValueError(f"data dims {x.shape[1:]} differ from {dims}")
    if x.ndim < 2 or x.ndim > MAX_ORDER + 1:
        raise ValueError(f"expected a stack of order 1..{MAX_ORDER} tensors, got shape {x.shape}")
    dims = x.shape[1:]
    if any(d < 1 for d in dims):
        raise ValueError("all tensor dims must be >= 1")
    header = STVD_MAGIC + struct.pack("<BI", STVD_VERSION, len(dims))
    header += struct.pack(f"<{len(dims)}I", *dims) + struct.pack("<Q", x.shape[0])
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(x).tobytes(order="C"))


def read_dataset(path: str | Path) -> NDArray:
    """Read an STVD file into an ``(N, *dims)`` float64 array."""
    raw = Path(path).read_bytes()
    if raw[:4] != STVD_MAGIC:
        raise FormatError(f"{path}: bad magic {raw[:4]!r}, expected {STVD_MAGIC!r}")
    if len(raw) < 9:
        raise FormatError(f"{path}: truncated header")
    version, order = struct.unpack_from("<BI", raw, 4)
    if version != STVD_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if not 1 <= order <= MAX_ORDER:
        raise FormatError(f"{path}: tensor order {order} outside 1..{MAX_ORDER}")
    head = 9 + 4 * order + 8
    if len(raw) < head:
        raise FormatError(f"{path}: truncated header, need {head} bytes, found {len(raw)}")
    dims = struct.unpack_from(f"<{order}I", raw, 9)
    (count,) = struct.unpack_from("<Q", raw, 9 + 4 * order)
    if any(d < 1 for d in dims):
        raise FormatError(f"{path}: zero dimension in {dims}")
    n_star = math.prod(dims)
    expected = count * n_star * 8
    if n_star >= _MAX_DIM**2 or expected > 2**62:
        raise FormatError(f"{path}: dims {dims} x count {count} overflow")
    found = len(raw) - head
    if found != expected:
        kind = "truncated payload" if found < expected else "trailing bytes after payload"
        raise FormatError(f"{path}: {kind}: expected {expected} payload bytes, found {found}")
    arr = np.frombuffer(raw, dtype="<f8", offset=head, count=count * n_star)
    return arr.reshape((count,) + tuple(dims)).astype(np.float64)


def _ppm_tokens(raw: bytes, n: int) -> tuple[list[bytes], int]:
    """First ``n`` whitespace-separated header tokens (comments skipped) and
    the offset just past the single whitespace byte that ends the header."""
    tokens, i = [], 0
    while len(tokens) < n:
        while i < len(raw) and raw[i:i + 1].isspace():
            i += 1
        if i < len(raw) and raw[i:i + 1] == b"#":
            while i < len(raw) and raw[i:i + 1] not in (b"\n", b"\r"):
                i += 1
            continue
        start = i
        while i < len(raw) and not raw[i:i + 1].isspace() and raw[i:i + 1] != b"#":
            i += 1
        if start == i:
            raise FormatError("truncated PPM header")
        tokens.append(raw[start:i])
    return tokens, i + 1


def read_ppm(path: str | Path) -> NDArray:
    """Binary PPM (P6, maxval 255) as a ``(height, width, 3)`` array in [0, 1]."""
    raw = Path(path).read_bytes()
    if raw[:2] != b"P6":
        raise FormatError(f"{path}: not a binary PPM (magic {raw[:2]!r})")
    tokens, offset = _ppm_tokens(raw, 4)
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError:
        raise FormatError(f"{path}: malformed PPM header") from None
    if maxval != 255:
        raise FormatError(f"{path}: maxval {maxval} unsupported, expected 255")
    if width < 1 or height < 1:
        raise FormatError(f"{path}: empty image")
    n = width * height * 3
    pix = raw[offset:offset + n]
    if len(pix) != n:
        raise FormatError(f"{path}: truncated pixel data: expected {n} bytes, found {len(pix)}")
    return np.frombuffer(pix, dtype=np.uint8).reshape(height, width, 3).astype(np.float64) / 255.0


def write_ppm(image: ArrayLike, path: str | Path) -> None:
    """Write an ``(h, w, 3)`` array in [0, 1] as P6."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError(f"expected an (h, w, 3) image, got {img.shape}")
    data = np.clip(np.rint(img * 255.0), 0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii"))
        fh.write(data.tobytes())


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------

CONFIG_KEYS = {"family", "max_iter", "aitken_tol", "reg_epsilon", "scale_update", "init", "seed", "initial_params"}


def parse_config(doc: dict[str, Any]) -> tuple[Family | None, FitConfig]:
    """Map a JSON config document onto ``(family, FitConfig)``.

    Unknown keys are rejected.
    """
    if not isinstance(doc, dict):
        raise ValueError("config must be a JSON object")
    unknown = sorted(set(doc) - CONFIG_KEYS)
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    family = Family.parse(doc["family"]) if "family" in doc else None
    kw: dict[str, Any] = {}
    for key in ("max_iter", "seed"):
        if key in doc:
            if isinstance(doc[key], bool) or not isinstance(doc[key], int):
                raise ValueError(f"config {key} must be an integer")
            kw[key] = doc[key]
    for key in ("aitken_tol", "reg_epsilon"):
        if key in doc:
            if isinstance(doc[key], bool) or not isinstance(doc[key], (int, float)):
                raise ValueError(f"config {key} must be a number")
            kw[key] = float(doc[key])
    if "scale_update" in doc:
        kw["scale_update"] = ScaleUpdate(doc["scale_update"])
    if "init" in doc:
        kw["init"] = InitMethod(doc["init"])
    if "initial_params" in doc:
        kw["initial_params"] = FamilyParams.from_dict(doc["initial_params"])
    return family, FitConfig(**kw)


def load_config(path: str | Path) -> tuple[Family | None, FitConfig]:
    with open(path) as fh:
        return parse_config(json.load(fh))


@dataclass
class FitReport:
    family: str
    loglik: float
    bic: float
    iterations: int
    converged: bool
    stop_reason: str
    n_free_params: int
    n_obs: int
    wall_time: float
    scale_update: str
    params: dict[str, Any]
    loglik_trace: list[float] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @classmethod
    def from_result(cls, res: FitResult, wall_time: float, scale_update: ScaleUpdate | str) -> "FitReport":
        return cls(
            family=res.params.family.value,
            loglik=float(res.loglik),
            bic=float(res.bic),
            iterations=int(res.iterations),
            converged=bool(res.converged),
            stop_reason=res.stop_reason,
            n_free_params=int(res.n_free_params),
            n_obs=int(res.n_obs),
            wall_time=float(wall_time),
            scale_update=ScaleUpdate(scale_update).value,
            params=res.params.to_dict(),
            loglik_trace=[float(v) for v in res.loglik_trace],
            warnings=list(res.warnings),
        )

    def fitted_params(self) -> FamilyParams:
        return FamilyParams.from_dict(self.params)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "FitReport":
        doc = json.loads(text)
        names = {f for f in cls.__dataclass_fields__}
        unknown = set(doc) - names
        if unknown:
            raise ValueError(f"unknown report keys: {', '.join(sorted(unknown))}")
        return cls(**doc)


# ---------------------------------------------------------------------------
# CSV
# ---------------------------------------------------------------------------


def _fmt(v: Any) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def write_rows_csv(rows: Iterable[StudyRow], path: str | Path, exclude: Iterable[str] = ()) -> None:
    """Study rows as CSV; floats carry 17 significant digits."""
    exclude = set(exclude)
    cols = [c for c in StudyRow.columns() if c not in exclude]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            d = asdict(row)
            w.writerow([_fmt(d[c]) for c in cols])


def read_rows_csv(path: str | Path) -> list[StudyRow]:
    types = {f: t for f, t in StudyRow.__annotations__.items()}
    out = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw: dict[str, Any] = {}
            for name in StudyRow.columns():
                if name not in rec:
                    kw[name] = 0.0 if types[name] == "float" else ""
                    continue
                v, t = rec[name], types[name]
                if t == "int":
                    kw[name] = int(v)
                elif t == "float":
                    kw[name] = float(v)
                elif t == "bool":
                    kw[name] = v == "true"
                else:
                    kw[name] = v
            out.append(StudyRow(**kw))
    return out
