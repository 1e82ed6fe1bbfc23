"""Epitome geometry and the patch-extraction operator.

An epitome set is ``N`` small images of identical shape.  The operator
``phi`` maps it to a dictionary whose columns are all overlapping patches of
a fixed shape.  Columns are ordered epitome-major, then by the row-major
position of the patch's top-left corner; inside a column the patch pixels
are stored row-major.

``phi_star`` averages every dictionary entry back onto the epitome pixel it
came from.  It is the left inverse of ``phi`` and ``phi(phi_star(D))`` is the
orthogonal projection of ``D`` onto the range of ``phi``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np


class GeometryError(ValueError):
    """Patch and epitome shapes are incompatible."""


@dataclass(frozen=True)
class PatchShape:
    height: int
    width: int

    def __post_init__(self):
        if int(self.height) < 1 or int(self.width) < 1:
            raise GeometryError(f"patch dims must be >= 1, got {self.height}x{self.width}")

    @property
    def m(self) -> int:
        return self.height * self.width

    @classmethod
    def square(cls, size: int) -> "PatchShape":
        return cls(size, size)


@dataclass(frozen=True)
class EpitomeGeometry:
    count: int
    height: int
    width: int

    def __post_init__(self):
        if self.count < 1 or self.height < 1 or self.width < 1:
            raise GeometryError(f"invalid epitome geometry {self}")

    @property
    def size(self) -> int:
        """Total number of parameters M."""
        return self.count * self.height * self.width

    def n_atoms(self, shape: PatchShape) -> int:
        check_compatible(self, shape)
        return self.count * (self.height - shape.height + 1) * (self.width - shape.width + 1)


def check_compatible(geom: EpitomeGeometry, shape: PatchShape) -> None:
    if geom.height < shape.height or geom.width < shape.width:
        raise GeometryError(
            f"patch {shape.height}x{shape.width} larger than epitome {geom.height}x{geom.width}"
        )


@dataclass(frozen=True, eq=False)
class EpitomeSet:
    """``N`` epitomes stored as a read-only ``(N, height, width)`` float64 array."""

    pixels: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        arr = np.array(self.pixels, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[None]
        if arr.ndim != 3 or 0 in arr.shape:
            raise GeometryError(f"epitome pixels must be (N, h, w), got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("epitome pixels must be finite")
        arr.setflags(write=False)
        object.__setattr__(self, "pixels", arr)

    @property
    def geometry(self) -> EpitomeGeometry:
        return EpitomeGeometry(*self.pixels.shape)

    @property
    def count(self) -> int:
        return self.pixels.shape[0]

    @property
    def vector(self) -> np.ndarray:
        """The parameter vector E of length M."""
        return self.pixels.reshape(-1)

    @classmethod
    def from_vector(cls, vec: np.ndarray, geom: EpitomeGeometry, meta: dict | None = None) -> "EpitomeSet":
        vec = np.asarray(vec, dtype=np.float64)
        if vec.size != geom.size:
            raise GeometryError(f"vector of length {vec.size} does not match M={geom.size}")
        return cls(vec.reshape(geom.count, geom.height, geom.width), dict(meta or {}))

    def __eq__(self, other):
        if not isinstance(other, EpitomeSet):
            return NotImplemented
        return self.pixels.shape == other.pixels.shape and np.array_equal(self.pixels, other.pixels)

    __hash__ = None


class EpitomeOperator:
    """The linear map phi for a fixed (geometry, patch shape) pair.

    The gather table ``index`` has shape ``(m, p)``; entry ``[k, j]`` is the
    flat epitome pixel copied into row ``k`` of atom ``j``.
    """

    def __init__(self, geom: EpitomeGeometry, shape: PatchShape):
        check_compatible(geom, shape)
        self.geometry = geom
        self.shape = shape

    @property
    def m(self) -> int:
        return self.shape.m

    @property
    def p(self) -> int:
        return self.geometry.n_atoms(self.shape)

    @property
    def size(self) -> int:
        return self.geometry.size

    @cached_property
    def index(self) -> np.ndarray:
        g, s = self.geometry, self.shape
        ny, nx = g.height - s.height + 1, g.width - s.width + 1
        dy, dx = np.meshgrid(np.arange(s.height), np.arange(s.width), indexing="ij")
        within = (dy * g.width + dx).reshape(-1)
        cy, cx = np.meshgrid(np.arange(ny), np.arange(nx), indexing="ij")
        corners = (cy * g.width + cx).reshape(-1)
        offsets = (np.arange(g.count)[:, None] * g.height * g.width + corners[None, :]).reshape(-1)
        idx = within[:, None] + offsets[None, :]
        idx.setflags(write=False)
        return idx

    @cached_property
    def counts(self) -> np.ndarray:
        """Pixel count map: how many dictionary entries map to each epitome pixel."""
        c = np.bincount(self.index.reshape(-1), minlength=self.size)
        c.setflags(write=False)
        return c

    def phi(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != self.size:
            raise GeometryError(f"epitome vector has {vec.size} entries, expected {self.size}")
        return vec[self.index]

    def phi_star(self, D: np.ndarray) -> np.ndarray:
        D = np.asarray(D, dtype=np.float64)
        if D.shape != (self.m, self.p):
            raise GeometryError(f"dictionary shape {D.shape} != ({self.m}, {self.p})")
        sums = np.bincount(self.index.reshape(-1), weights=D.reshape(-1), minlength=self.size)
        return sums / self.counts

    def project(self, D: np.ndarray) -> np.ndarray:
        return self.phi(self.phi_star(D))


class FlatOperator:
    """Identity parameterisation: the dictionary entries are the parameters.

    Shares the operator interface so the learner can run plain dictionary
    learning with the same code path.
    """

    def __init__(self, m: int, p: int):
        self.m, self.p = int(m), int(p)
        self.size = self.m * self.p
        self.counts = np.ones(self.size, dtype=np.int64)

    def phi(self, vec: np.ndarray) -> np.ndarray:
        return np.asarray(vec, dtype=np.float64).reshape(self.m, self.p).copy()

    def phi_star(self, D: np.ndarray) -> np.ndarray:
        D = np.asarray(D, dtype=np.float64)
        if D.shape != (self.m, self.p):
            raise GeometryError(f"dictionary shape {D.shape} != ({self.m}, {self.p})")
        return D.reshape(-1).copy()

    def project(self, D: np.ndarray) -> np.ndarray:
        return np.array(D, dtype=np.float64)


def phi(E: EpitomeSet, shape: PatchShape) -> np.ndarray:
    return EpitomeOperator(E.geometry, shape).phi(E.vector)


def phi_star(D: np.ndarray, geom: EpitomeGeometry, shape: PatchShape) -> EpitomeSet:
    return EpitomeSet.from_vector(EpitomeOperator(geom, shape).phi_star(D), geom)


def project(D: np.ndarray, geom: EpitomeGeometry, shape: PatchShape) -> np.ndarray:
    return EpitomeOperator(geom, shape).project(D)


def column_norms(D: np.ndarray) -> np.ndarray:
    return np.sqrt(np.einsum("ij,ij->j", D, D))


# --- persistence -----------------------------------------------------------

MAGIC = b"EPI1"
_HEADER = struct.Struct("<4s5I")


def save_epitome(E: EpitomeSet, path, shape: PatchShape, meta: dict | None = None) -> None:
    """Write ``E`` in the EPI1 binary format plus a ``key=value`` sidecar.

    Layout: magic, then N, height, width, patch height, patch width as
    little-endian uint32, then M little-endian float64 pixels.
    """
    path = Path(path)
    g = E.geometry
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, g.count, g.height, g.width, shape.height, shape.width))
        fh.write(E.vector.astype("<f8").tobytes())
    meta = {**E.meta, **(meta or {})}
    lines = [f"{k}={v}" for k, v in sorted(meta.items())]
    sidecar_path(path).write_text("\n".join(lines) + ("\n" if lines else ""))


def load_epitome(path) -> tuple[EpitomeSet, PatchShape]:
    path = Path(path)
    raw = path.read_bytes()
    if len(raw) < _HEADER.size or raw[:4] != MAGIC:
        raise ValueError(f"{path}: not an EPI1 epitome file")
    _, n, h, w, ph, pw = _HEADER.unpack_from(raw)
    geom = EpitomeGeometry(n, h, w)
    payload = raw[_HEADER.size:]
    if len(payload) != 8 * geom.size:
        raise ValueError(f"{path}: expected {geom.size} pixels, found {len(payload) // 8}")
    vec = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        for line in side.read_text().splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                meta[k.strip()] = v.strip()
    return EpitomeSet.from_vector(vec, geom, meta), PatchShape(ph, pw)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")
