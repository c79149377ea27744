"""Lattice domains, sphere-valued fields and the binary snapshot format.

Arrays are indexed ``[i, j]`` with ``i`` along x and ``j`` along y; node
``(i, j)`` sits at ``origin + (i*h, j*h)``.  Field values are stored as three
planes, shape ``(3, nx, ny)``.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from skyf.errors import (
    AdmissibilityError,
    EigenvalueConvergenceError,
    EmptyDomainError,
    SnapshotFormatError,
    SnapshotNormError,
    SnapshotSizeError,
)

SHAPES = ("rectangle", "disk", "strip", "bitmap")
UNIT_TOL = 1e-12
SNAPSHOT_MAGIC = b"SKYF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIId")


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class GridDomain:
    h: float
    mask: np.ndarray
    shape_tag: str = "bitmap"
    geometry: dict = field(default_factory=dict)
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not self.h > 0:
            raise ValueError(f"grid spacing must be positive, got {self.h}")
        if self.shape_tag not in SHAPES:
            raise ValueError(f"unknown shape_tag {self.shape_tag!r}")
        mask = np.ascontiguousarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be two-dimensional")
        if not mask.any():
            raise EmptyDomainError("no lattice node falls inside the domain")
        if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
            raise ValueError("domain nodes touch the array edge; a guard ring is required")
        object.__setattr__(self, "mask", _readonly(mask))
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))

    @property
    def nx(self) -> int:
        return self.mask.shape[0]

    @property
    def ny(self) -> int:
        return self.mask.shape[1]

    @property
    def n_interior(self) -> int:
        return int(self.mask.sum())

    @property
    def area(self) -> float:
        return self.h**2 * self.n_interior

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.h * np.arange(self.nx)
        y = self.origin[1] + self.h * np.arange(self.ny)
        return np.meshgrid(x, y, indexing="ij")

    def node_position(self, i: int, j: int) -> tuple[float, float]:
        return (self.origin[0] + i * self.h, self.origin[1] + j * self.h)

    def boundary_distance(self) -> np.ndarray:
        """Distance from each node to the nearest node outside the domain.

        A closed ball ``B_r(x)`` centred at a node covers only masked nodes
        iff ``r`` is strictly below this value.
        """
        cached = self.__dict__.get("_bdist")
        if cached is None:
            cached = _readonly(ndimage.distance_transform_edt(self.mask) * self.h)
            object.__setattr__(self, "_bdist", cached)
        return cached

    def contains_ball(self, center, radius: float) -> bool:
        X, Y = self.coords()
        inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius**2
        return bool(np.all(self.mask[inside])) and bool(inside.any())


def build_domain(shape_tag: str, geometry: dict | np.ndarray | None, h: float) -> GridDomain:
    """Discretize a domain by node-centre inclusion.

    Geometry keys: rectangle/strip take ``width`` (or ``length``) and
    ``height`` (or ``width`` for strips, default 1); disk takes ``radius``
    (centred at the origin); bitmap takes the mask array itself (or
    ``{"mask": array}``), padded with one exterior ring when needed.
    """
    if not h > 0:
        raise ValueError(f"grid spacing must be positive, got {h}")
    tol = 1e-9 * h
    geometry = {} if geometry is None else geometry

    if shape_tag in ("rectangle", "strip"):
        if shape_tag == "strip":
            a = float(geometry.get("length", geometry.get("L")))
            b = float(geometry.get("width", 1.0))
        else:
            a = float(geometry["width"])
            b = float(geometry["height"])
        if a <= 0 or b <= 0:
            raise EmptyDomainError(f"degenerate {shape_tag} {a} x {b}")
        nx = int(math.floor(a / h + 1e-9)) + 3
        ny = int(math.floor(b / h + 1e-9)) + 3
        x = (np.arange(nx) - 1) * h
        y = (np.arange(ny) - 1) * h
        X, Y = np.meshgrid(x, y, indexing="ij")
        mask = (X > tol) & (X < a - tol) & (Y > tol) & (Y < b - tol)
        geom = {"length": a, "width": b} if shape_tag == "strip" else {"width": a, "height": b}
        if not mask.any():
            raise EmptyDomainError(f"no node strictly inside the {shape_tag}")
        return GridDomain(h, mask, shape_tag, geom, (-h, -h))

    if shape_tag == "disk":
        R = float(geometry["radius"])
        if R <= 0:
            raise EmptyDomainError(f"disk radius must be positive, got {R}")
        c = int(math.floor(R / h + 1e-9)) + 1
        x = (np.arange(2 * c + 1) - c) * h
        X, Y = np.meshgrid(x, x, indexing="ij")
        mask = X**2 + Y**2 < R**2 - tol
        if not mask.any():
            raise EmptyDomainError("no node strictly inside the disk")
        return GridDomain(h, mask, "disk", {"radius": R}, (-c * h, -c * h))

    if shape_tag == "bitmap":
        raw = geometry["mask"] if isinstance(geometry, dict) else geometry
        mask = np.asarray(raw, dtype=bool)
        if not mask.any():
            raise EmptyDomainError("bitmap has no interior node")
        if mask[0].any() or mask[-1].any() or mask[:, 0].any() or mask[:, -1].any():
            mask = np.pad(mask, 1)
        return GridDomain(h, mask, "bitmap", {}, (0.0, 0.0))

    raise ValueError(f"unknown shape_tag {shape_tag!r}")


def dirichlet_laplacian(domain: GridDomain) -> sp.csr_matrix:
    """5-point negative Laplacian on the masked nodes, zero exterior values."""
    idx = -np.ones(domain.mask.shape, dtype=np.int64)
    n = domain.n_interior
    idx[domain.mask] = np.arange(n)
    rows, cols = [np.arange(n)], [np.arange(n)]
    vals = [np.full(n, 4.0)]
    for shift in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        nb = np.roll(idx, shift=(-shift[0], -shift[1]), axis=(0, 1))
        ok = domain.mask & (nb >= 0)
        rows.append(idx[ok])
        cols.append(nb[ok])
        vals.append(-np.ones(int(ok.sum())))
    A = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A / domain.h**2


def poincare_lambda0(domain: GridDomain, rtol: float = 1e-8, max_iter: int = 1000) -> float:
    """Smallest eigenvalue of the masked Dirichlet Laplacian by inverse iteration."""
    A = dirichlet_laplacian(domain).tocsc()
    solve = spla.factorized(A)
    x = np.ones(A.shape[0])
    lam_old = np.inf
    for _ in range(max_iter):
        y = solve(x)
        x = y / np.linalg.norm(y)
        lam = float(x @ (A @ x))
        if abs(lam - lam_old) <= rtol * abs(lam):
            return lam
        lam_old = lam
    raise EigenvalueConvergenceError(
        f"inverse iteration did not reach rtol={rtol} in {max_iter} steps; mask ill-conditioned?"
    )


@dataclass(frozen=True)
class ModelParams:
    kappa: float
    Q: float
    lambda0: float

    def __post_init__(self):
        # kappa = 0 is allowed for the non-strict insertion variant
        if not self.kappa >= 0:
            raise ValueError(f"kappa must be non-negative, got {self.kappa}")
        if not self.Q >= 1:
            raise ValueError(f"Q must be >= 1, got {self.Q}")
        if not self.lambda0 > 0:
            raise ValueError(f"lambda0 must be positive, got {self.lambda0}")

    @classmethod
    def for_domain(cls, domain: GridDomain, kappa: float, Q: float) -> "ModelParams":
        return cls(kappa, Q, poincare_lambda0(domain))

    def with_(self, **changes) -> "ModelParams":
        d = {"kappa": self.kappa, "Q": self.Q, "lambda0": self.lambda0}
        d.update(changes)
        return ModelParams(**d)


@dataclass(frozen=True, eq=False)
class MagnetizationField:
    domain: GridDomain
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.shape != (3, self.domain.nx, self.domain.ny):
            raise ValueError(
                f"values shape {v.shape} does not match domain {(3, self.domain.nx, self.domain.ny)}"
            )
        check_admissible(self.domain, v)
        object.__setattr__(self, "values", _readonly(v))

    @classmethod
    def uniform_down(cls, domain: GridDomain) -> "MagnetizationField":
        v = np.zeros((3, domain.nx, domain.ny))
        v[2] = -1.0
        return cls(domain, v)

    @classmethod
    def project(cls, domain: GridDomain, values: np.ndarray) -> "MagnetizationField":
        """Renormalize nodewise and clamp the exterior to -e3."""
        return cls(domain, admissible_values(domain.mask, values))

    def with_values(self, values: np.ndarray) -> "MagnetizationField":
        return MagnetizationField(self.domain, values)


def random_field(domain: GridDomain, seed: int = 0, tilt: float | None = None) -> MagnetizationField:
    """Seeded random admissible field.

    With ``tilt`` the field is -e3 perturbed by Gaussian noise of that size
    before renormalization; without it every interior node is uniform on S^2.
    """
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((3, domain.nx, domain.ny))
    if tilt is not None:
        v *= tilt
        v[2] -= 1.0
    return MagnetizationField.project(domain, v)


def admissible_values(mask: np.ndarray, values: np.ndarray) -> np.ndarray:
    v = np.array(values, dtype=np.float64, copy=True)
    norm = np.sqrt(np.einsum("kij,kij->ij", v, v))
    if np.any(norm[mask] == 0):
        raise AdmissibilityError("cannot renormalize a zero vector")
    v /= np.where(mask, norm, 1.0)
    v[:, ~mask] = 0.0
    v[2, ~mask] = -1.0
    return v


def check_admissible(domain: GridDomain, values: np.ndarray) -> None:
    """Raise AdmissibilityError unless |m| = 1 everywhere and m = -e3 outside."""
    if not np.all(np.isfinite(values)):
        raise AdmissibilityError("non-finite field values")
    norm = np.sqrt(np.einsum("kij,kij->ij", values, values))
    bad = np.abs(norm - 1.0) > UNIT_TOL
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise AdmissibilityError(f"|m| = {norm[i, j]!r} at node ({i}, {j})")
    ext = ~domain.mask
    if np.any(values[0][ext] != 0.0) or np.any(values[1][ext] != 0.0) or np.any(values[2][ext] != -1.0):
        raise AdmissibilityError("exterior node not clamped to -e3")


def write_snapshot(field: MagnetizationField, path) -> None:
    d = field.domain
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, d.nx, d.ny, d.h)
    body = d.mask.astype(np.uint8).tobytes(order="C")
    data = field.values.astype("<f8").tobytes(order="C")
    Path(path).write_bytes(header + body + data)


def read_snapshot(path) -> MagnetizationField:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise SnapshotSizeError(f"file too short for header ({len(raw)} bytes)")
    magic, version, nx, ny, h = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise SnapshotFormatError(f"bad magic {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot version {version}")
    n = nx * ny
    expected = _HEADER.size + n + 24 * n
    if len(raw) != expected:
        raise SnapshotSizeError(f"expected {expected} bytes for {nx}x{ny}, got {len(raw)}")
    mask = np.frombuffer(raw, dtype=np.uint8, count=n, offset=_HEADER.size)
    if np.any(mask > 1):
        raise SnapshotFormatError("mask bytes must be 0 or 1")
    values = np.frombuffer(raw, dtype="<f8", count=3 * n, offset=_HEADER.size + n)
    values = values.astype(np.float64).reshape(3, nx, ny)
    norm = np.sqrt(np.einsum("kij,kij->ij", values, values))
    if not np.all(np.abs(norm - 1.0) <= UNIT_TOL):
        raise SnapshotNormError("snapshot contains non-unit vectors")
    domain = GridDomain(h, mask.reshape(nx, ny).astype(bool), "bitmap")
    return MagnetizationField(domain, values)
