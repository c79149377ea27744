"""Discrete energy, its gradient, the Euler-Lagrange residual and the degree.

Discretization
--------------
* exchange: squared forward differences on every lattice link (links to the
  clamped exterior included).  ``h`` cancels, so the sum is scale free.
* DMI: ``-2 kappa h^2 sum m' . grad_c m3`` with centred differences.
* anisotropy: ``(Q - 1) h^2 sum |m'|^2``.
* degree: signed solid angles of two spherical triangles per plaquette.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from skyf.errors import DegenerateTriangleError
from skyf.grid import MagnetizationField, ModelParams

FOUR_PI = 4.0 * math.pi
EIGHT_PI = 8.0 * math.pi
DEGENERATE_TOL = 1e-12

BREAKDOWN_COLUMNS = (
    "exchange",
    "dmi",
    "anisotropy",
    "total",
    "degree",
    "alpha",
    "lower_bound_margin_1",
    "lower_bound_margin_2",
    "topological_margin",
)


@dataclass(frozen=True)
class EnergyBreakdown:
    exchange: float
    dmi: float
    anisotropy: float
    total: float
    degree: float
    alpha: float
    lower_bound_margin_1: float
    lower_bound_margin_2: float
    topological_margin: float

    def csv_row(self) -> list[str]:
        return [repr(float(getattr(self, c))) for c in BREAKDOWN_COLUMNS]

    def as_dict(self) -> dict:
        return asdict(self)


def _vals(field):
    return field.values if isinstance(field, MagnetizationField) else np.asarray(field)


def _link_differences(m):
    return m[:, 1:, :] - m[:, :-1, :], m[:, :, 1:] - m[:, :, :-1]


def exchange_energy(field: MagnetizationField, region: np.ndarray | None = None) -> float:
    """Sum of squared forward differences over lattice links.

    With ``region`` given, only links whose two end nodes both lie in the
    region are counted (used to measure energy inside a sub-ball).
    """
    m = _vals(field)
    dx, dy = _link_differences(m)
    if region is None:
        return float(np.sum(dx * dx) + np.sum(dy * dy))
    rx = region[1:, :] & region[:-1, :]
    ry = region[:, 1:] & region[:, :-1]
    return float(np.sum((dx * dx).sum(axis=0)[rx]) + np.sum((dy * dy).sum(axis=0)[ry]))


def _centered(a, h):
    """Undivided centred differences at the inner nodes ``[1:-1, 1:-1]``."""
    return a[2:, 1:-1] - a[:-2, 1:-1], a[1:-1, 2:] - a[1:-1, :-2]


def dmi_energy(field: MagnetizationField, params: ModelParams) -> float:
    m = _vals(field)
    h = field.domain.h
    cx, cy = _centered(m[2], h)
    inner = m[0, 1:-1, 1:-1] * cx + m[1, 1:-1, 1:-1] * cy
    # m' vanishes on clamped nodes, so summing over all inner nodes equals the
    # sum over the domain
    return float(-params.kappa * h * np.sum(inner))


def anisotropy_energy(field: MagnetizationField, params: ModelParams) -> float:
    m = _vals(field)
    h = field.domain.h
    return float((params.Q - 1.0) * h * h * np.sum(m[0] ** 2 + m[1] ** 2))


def anisotropy_integral(field: MagnetizationField) -> float:
    """Integral of 1 - m3^2 over the domain."""
    m = field.values
    return float(field.domain.h**2 * np.sum((1.0 - m[2] ** 2)[field.domain.mask]))


def alpha_of(params: ModelParams) -> float:
    k2 = params.kappa**2
    q1 = params.Q - 1.0
    if k2 == 0.0:
        return 0.0
    return 2.0 * k2 / (math.sqrt(q1 * q1 + 4.0 * params.lambda0 * k2) + q1)


def beta_of(params: ModelParams, d: int) -> float:
    if d < 1:
        raise ValueError(f"degree must be >= 1, got {d}")
    q1 = params.Q - 1.0
    if params.lambda0 >= q1:
        return 1.0
    return d * params.kappa**2 / q1


@dataclass(frozen=True)
class FeasibilityReport:
    d: int
    alpha: float
    smallness_bound: float
    smallness_ok: bool
    area: float
    area_ratio: float  # |Omega| kappa^2 / d; compared against an unknown constant


def feasibility_check(params: ModelParams, d: int, domain) -> FeasibilityReport:
    a = alpha_of(params)
    bound = min(2.0 / (d + 1), 0.5)
    area = domain.area if hasattr(domain, "area") else float(domain)
    ratio = area * params.kappa**2 / d if d > 0 else math.inf
    return FeasibilityReport(d, a, bound, a <= bound, area, ratio)


def _solid_angles(a, b, c):
    num = np.einsum("kij,kij->ij", a, np.cross(b, c, axis=0))
    den = 1.0 + np.einsum("kij,kij->ij", a, b) + np.einsum("kij,kij->ij", b, c) + np.einsum(
        "kij,kij->ij", c, a
    )
    bad = (np.abs(num) < DEGENERATE_TOL) & (den < DEGENERATE_TOL)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise DegenerateTriangleError(
            f"spherical triangle at plaquette ({i}, {j}) has an ill-defined solid angle; "
            "the field is under-resolved"
        )
    return 2.0 * np.arctan2(num, den)


def solid_angle_density(field: MagnetizationField, chunk: int = 256) -> np.ndarray:
    """Signed solid angle of each plaquette, shape ``(nx-1, ny-1)``."""
    m = _vals(field)
    nx = m.shape[1]
    out = np.empty((nx - 1, m.shape[2] - 1))
    for s in range(0, nx - 1, chunk):
        e = min(s + chunk, nx - 1)
        p00 = m[:, s:e, :-1]
        p10 = m[:, s + 1 : e + 1, :-1]
        p11 = m[:, s + 1 : e + 1, 1:]
        p01 = m[:, s:e, 1:]
        out[s:e] = _solid_angles(p00, p10, p11) + _solid_angles(p00, p11, p01)
    return out


def topological_degree(field: MagnetizationField) -> float:
    return float(np.sum(solid_angle_density(field)) / FOUR_PI)


def total_energy(field: MagnetizationField, params: ModelParams) -> EnergyBreakdown:
    ex = exchange_energy(field)
    dmi = dmi_energy(field, params)
    an = anisotropy_energy(field, params)
    tot = ex + dmi + an
    deg = topological_degree(field)
    a = alpha_of(params)
    q1 = params.Q - 1.0
    return EnergyBreakdown(
        exchange=ex,
        dmi=dmi,
        anisotropy=an,
        total=tot,
        degree=deg,
        alpha=a,
        lower_bound_margin_1=tot - (1.0 - a) * ex,
        lower_bound_margin_2=tot - (1.0 - 2.0 * a) * ex - 0.5 * q1 * anisotropy_integral(field),
        topological_margin=ex - EIGHT_PI * abs(round(deg)),
    )


def energy_value(values: np.ndarray, h: float, params: ModelParams) -> float:
    """Total energy of a raw value array (no admissibility check); solver hot path."""
    m = values
    dx, dy = _link_differences(m)
    ex = np.sum(dx * dx) + np.sum(dy * dy)
    cx, cy = _centered(m[2], h)
    dmi = -params.kappa * h * np.sum(m[0, 1:-1, 1:-1] * cx + m[1, 1:-1, 1:-1] * cy)
    an = (params.Q - 1.0) * h * h * np.sum(m[0] ** 2 + m[1] ** 2)
    return float(ex + dmi + an)


def raw_gradient(values: np.ndarray, mask: np.ndarray, h: float, params: ModelParams) -> np.ndarray:
    """Exact gradient of :func:`energy_value` with respect to the domain nodes."""
    m = values
    g = np.zeros_like(m)
    dx, dy = _link_differences(m)
    g[:, :-1, :] -= 2.0 * dx
    g[:, 1:, :] += 2.0 * dx
    g[:, :, :-1] -= 2.0 * dy
    g[:, :, 1:] += 2.0 * dy
    kh = params.kappa * h
    cx, cy = _centered(m[2], h)
    g[0, 1:-1, 1:-1] -= kh * cx
    g[1, 1:-1, 1:-1] -= kh * cy
    c1x, _ = _centered(m[0], h)
    _, c2y = _centered(m[1], h)
    g[2, 1:-1, 1:-1] += kh * (c1x + c2y)
    g[0:2] += 2.0 * (params.Q - 1.0) * h * h * m[0:2]
    g[:, ~mask] = 0.0
    return g


def project_tangent(g: np.ndarray, m: np.ndarray) -> np.ndarray:
    return g - np.einsum("kij,kij->ij", g, m) * m


def energy_gradient(field: MagnetizationField, params: ModelParams) -> np.ndarray:
    """Gradient of the discrete total energy, projected nodewise onto T_m S^2."""
    g = raw_gradient(field.values, field.domain.mask, field.domain.h, params)
    return project_tangent(g, field.values)


def el_residual_field(field: MagnetizationField, params: ModelParams) -> np.ndarray:
    """Left-hand side of the Euler-Lagrange equation at every node.

    The ``|grad m|^2`` term is discretized as ``-m . Lap_h m``, its exact
    identity on the sphere, so the residual equals ``-P_m(grad E) / (2 h^2)``
    for the discrete energy above.
    """
    m = field.values
    h = field.domain.h
    k, q1 = params.kappa, params.Q - 1.0
    lap = np.zeros_like(m)
    lap[:, 1:-1, 1:-1] = (
        m[:, 2:, 1:-1] + m[:, :-2, 1:-1] + m[:, 1:-1, 2:] + m[:, 1:-1, :-2] - 4.0 * m[:, 1:-1, 1:-1]
    ) / (h * h)
    grad_sq = -np.einsum("kij,kij->ij", m, lap)
    g3 = np.zeros((2,) + m.shape[1:])
    div = np.zeros(m.shape[1:])
    cx, cy = _centered(m[2], h)
    g3[0, 1:-1, 1:-1] = cx / (2 * h)
    g3[1, 1:-1, 1:-1] = cy / (2 * h)
    c1x, _ = _centered(m[0], h)
    _, c2y = _centered(m[1], h)
    div[1:-1, 1:-1] = (c1x + c2y) / (2 * h)
    m3 = m[2]
    mp_g3 = m[0] * g3[0] + m[1] * g3[1]

    r = lap + m * grad_sq
    r[2] += q1 * m3
    r -= q1 * m3 * m3 * m
    r[2] -= k * div
    r += k * m3 * div * m
    r[0] += k * g3[0]
    r[1] += k * g3[1]
    r -= k * mp_g3 * m
    r[:, ~field.domain.mask] = 0.0
    return r


def el_residual(field: MagnetizationField, params: ModelParams, region: np.ndarray | None = None) -> float:
    """Max over domain nodes (optionally restricted to ``region``) of the EL residual norm."""
    r = el_residual_field(field, params)
    norm = np.sqrt(np.einsum("kij,kij->ij", r, r))
    sel = field.domain.mask if region is None else field.domain.mask & region
    return float(norm[sel].max()) if sel.any() else 0.0


def square_integrals(field: MagnetizationField) -> tuple[float, float]:
    """Centred-difference values of the integrals of |d1 m -/+ m x d2 m|^2."""
    m = _vals(field)
    h = field.domain.h
    d1 = (m[:, 2:, 1:-1] - m[:, :-2, 1:-1]) / (2 * h)
    d2 = (m[:, 1:-1, 2:] - m[:, 1:-1, :-2]) / (2 * h)
    mc = np.cross(m[:, 1:-1, 1:-1], d2, axis=0)
    s_plus = h * h * float(np.sum((d1 - mc) ** 2))
    s_minus = h * h * float(np.sum((d1 + mc) ** 2))
    return s_plus, s_minus


def squares_identity_gap(field: MagnetizationField) -> tuple[float, float]:
    ex = exchange_energy(field)
    deg = topological_degree(field)
    s_plus, s_minus = square_integrals(field)
    return abs(ex + EIGHT_PI * deg - s_plus), abs(ex - EIGHT_PI * deg - s_minus)


def energy_density(field: MagnetizationField, params: ModelParams) -> np.ndarray:
    """Per-node energy (not divided by h^2); sums exactly to the total energy.

    Each link's exchange contribution is split evenly between its end nodes.
    """
    m = field.values
    h = field.domain.h
    e = exchange_density(field)
    cx, cy = _centered(m[2], h)
    e[1:-1, 1:-1] -= params.kappa * h * (m[0, 1:-1, 1:-1] * cx + m[1, 1:-1, 1:-1] * cy)
    e += (params.Q - 1.0) * h * h * (m[0] ** 2 + m[1] ** 2)
    return e


def exchange_density(field: MagnetizationField) -> np.ndarray:
    """Per-node exchange energy with links split evenly between end nodes."""
    m = field.values
    dx, dy = _link_differences(m)
    lx = (dx * dx).sum(axis=0)
    ly = (dy * dy).sum(axis=0)
    e = np.zeros(m.shape[1:])
    e[:-1, :] += 0.5 * lx
    e[1:, :] += 0.5 * lx
    e[:, :-1] += 0.5 * ly
    e[:, 1:] += 0.5 * ly
    return e


def reflect(field: MagnetizationField) -> MagnetizationField:
    """Map (m', m3) to (-m', m3)."""
    v = field.values.copy()
    v[0:2] *= -1.0
    v[0:2][:, ~field.domain.mask] = 0.0
    return MagnetizationField(field.domain, v)
