"""Belavin-Polyakov profiles and the cutoff-and-paste insertion construction."""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate, ndimage, signal

from skyf.energy import EIGHT_PI, exchange_density, topological_degree, total_energy
from skyf.errors import AnnulusError, InsertionError, NoCandidateError
from skyf.grid import GridDomain, MagnetizationField, ModelParams

# rho = kappa * delta^2 / (2 * C2); value from calibrate_c2() on the flat background
C2_DEFAULT = 22.0
EPSILON_DEFAULT = 0.01

REPORT_COLUMNS = (
    "site_x",
    "site_y",
    "delta",
    "r0",
    "rho",
    "circle_avg_x",
    "circle_avg_y",
    "degree_before",
    "degree_after",
    "energy_before",
    "energy_after",
    "strictness_margin",
    "site_density",
)


def bp_radial(r):
    r = np.asarray(r, dtype=float)
    return 2.0 * r / (1.0 + r * r)


def bp_radial_truncated(r, L: float):
    if L < 2:
        raise ValueError(f"truncation parameter must be >= 2, got {L}")
    r = np.asarray(r, dtype=float)
    ramp = 2.0 * bp_radial(L / 2.0) * (1.0 - r / L)
    return np.where(r <= L / 2.0, bp_radial(r), np.where(r <= L, ramp, 0.0))


def rotation_taking(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Minimal geodesic rotation R with R a = b for unit, non-antipodal a, b."""
    a = np.asarray(a, float)
    b = np.asarray(b, float)
    v = np.cross(a, b)
    c = float(a @ b)
    if c <= -1.0 + 1e-14:
        raise InsertionError("rotation between antipodal vectors is not unique")
    K = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + K + K @ K / (1.0 + c)


@dataclass(frozen=True, eq=False)
class BPProfileSpec:
    center: tuple[float, float]
    rho: float
    L: float
    rotation: np.ndarray = None

    def __post_init__(self):
        R = np.eye(3) if self.rotation is None else np.asarray(self.rotation, float)
        if self.L < 2:
            raise ValueError(f"L must be >= 2, got {self.L}")
        if not self.rho > 0:
            raise ValueError(f"rho must be positive, got {self.rho}")
        if np.linalg.norm(R.T @ R - np.eye(3)) >= 1e-12 or np.linalg.det(R) <= 0:
            raise ValueError("rotation must be a proper orthogonal matrix")
        object.__setattr__(self, "rotation", R)


def bp_unit_profile(y1, y2, L: float = math.inf):
    """Phi_L at points (y1, y2); L = inf gives the untruncated profile."""
    r = np.hypot(y1, y2)
    with np.errstate(invalid="ignore", divide="ignore"):
        ux = np.where(r > 0, y1 / np.where(r > 0, r, 1.0), 0.0)
        uy = np.where(r > 0, y2 / np.where(r > 0, r, 1.0), 0.0)
    if math.isinf(L):
        f = bp_radial(r)
        m3 = (1.0 - r * r) / (1.0 + r * r)
    else:
        f = bp_radial_truncated(r, L)
        inner = r <= L / 2.0
        m3 = np.where(inner, (1.0 - r * r) / (1.0 + r * r), -np.sqrt(np.clip(1.0 - f * f, 0.0, None)))
    out = np.stack([-f * ux, -f * uy, m3])
    return out / np.linalg.norm(out, axis=0)


def bp_profile(spec: BPProfileSpec, x1, x2) -> np.ndarray:
    """R Phi_L((x - center) / rho), shape ``(3,) + x1.shape``."""
    y1 = (np.asarray(x1, float) - spec.center[0]) / spec.rho
    y2 = (np.asarray(x2, float) - spec.center[1]) / spec.rho
    phi = bp_unit_profile(y1, y2, spec.L)
    return np.einsum("ab,b...->a...", spec.rotation, phi)


def paste_profile(field: MagnetizationField, spec: BPProfileSpec) -> MagnetizationField:
    """Overwrite the ball of radius rho*L with the profile (initialization helper).

    Outside that ball the profile equals R(-e3); with R = I this is the
    background itself, so pasting on a -e3 region is seamless.
    """
    X, Y = field.domain.coords()
    inside = (X - spec.center[0]) ** 2 + (Y - spec.center[1]) ** 2 < (spec.rho * spec.L) ** 2
    inside &= field.domain.mask
    v = field.values.copy()
    prof = bp_profile(spec, X[inside], Y[inside])
    v[:, inside] = prof
    return MagnetizationField.project(field.domain, v)


# --- radial quadrature of the profile energies ------------------------------


def _quad(fn, a, b):
    val, _ = integrate.quad(fn, a, b, epsabs=1e-13, epsrel=1e-12, limit=400)
    return val


def _outer_terms(L):
    fl2 = 2.0 * float(bp_radial(L / 2.0))
    slope = -fl2 / L

    def f(r):
        return fl2 * (1.0 - r / L)

    return f, slope


def truncated_bp_exchange(L: float) -> float:
    """Dirichlet energy of Phi_L over the plane by 1D quadrature.

    Inside r <= L/2 the integrand is the exact 8/(1+r^2)^2; on the linear ramp
    it is f'^2/(1-f^2) + f^2/r^2.  L = 2 has infinite energy (the ramp starts
    at f = 1).
    """
    if L < 2:
        raise ValueError(f"L must be >= 2, got {L}")
    if math.isinf(L):
        return EIGHT_PI
    if L == 2:
        return math.inf
    inner = EIGHT_PI * L * L / (4.0 + L * L)
    f, s = _outer_terms(L)
    outer = 2.0 * math.pi * _quad(lambda r: r * (s * s / (1.0 - f(r) ** 2) + f(r) ** 2 / (r * r)), L / 2.0, L)
    return inner + outer


def truncated_bp_dmi_integral(L: float) -> float:
    """Integral of Phi_L' . grad Phi_L3 over the plane (4*pi as L -> inf)."""
    t = L / 2.0
    # inner: 2 pi int_0^t 8 r^3 / (1 + r^2)^3 dr
    inner = 2.0 * math.pi * (2.0 * t**4 / (1.0 + t * t) ** 2)
    if math.isinf(L):
        return inner if not math.isinf(t) else 4.0 * math.pi
    f, s = _outer_terms(L)
    outer = 2.0 * math.pi * _quad(lambda r: r * (-(f(r) ** 2) * s / math.sqrt(1.0 - f(r) ** 2)), t, L)
    return inner + outer


def truncated_bp_anisotropy_integral(L: float) -> float:
    """Integral of |Phi_L'|^2 over the plane."""
    t = L / 2.0
    inner = 4.0 * math.pi * (math.log(1.0 + t * t) - t * t / (1.0 + t * t))
    f, _ = _outer_terms(L)
    outer = 2.0 * math.pi * _quad(lambda r: r * f(r) ** 2, t, L)
    return inner + outer


def flat_insertion_energy(params: ModelParams, r0: float, rho: float) -> float:
    """Continuum energy of phi_rho = Phi_{r0/(2 rho)}(x / rho) (R = I) pasted on -e3."""
    L = r0 / (2.0 * rho)
    return (
        truncated_bp_exchange(L)
        - 2.0 * params.kappa * rho * truncated_bp_dmi_integral(L)
        + (params.Q - 1.0) * rho * rho * truncated_bp_anisotropy_integral(L)
    )


def calibrate_c2(params: ModelParams, delta: float, grid=None) -> tuple[float, float]:
    """Scan C2 for the largest flat-background margin 8*pi - E(phi_rho).

    The flat background ties every annulus shell, so r0 = 3/4 delta.
    Returns ``(C2, margin)``.
    """
    if grid is None:
        grid = np.geomspace(1.0, 200.0, 241)
    r0 = 0.75 * delta
    best = (math.nan, -math.inf)
    for c2 in grid:
        rho = params.kappa * delta**2 / (2.0 * c2)
        if r0 / (2.0 * rho) <= 2.0:
            continue
        margin = EIGHT_PI - flat_insertion_energy(params, r0, rho)
        if margin > best[1]:
            best = (float(c2), margin)
    return best


# --- annulus selection and cutoff-and-paste ---------------------------------


def _interp(field: MagnetizationField, px: np.ndarray, py: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of the field at physical points, renormalized."""
    dom = field.domain
    ci = (np.asarray(px) - dom.origin[0]) / dom.h
    cj = (np.asarray(py) - dom.origin[1]) / dom.h
    out = np.stack([ndimage.map_coordinates(field.values[k], [ci, cj], order=1, mode="nearest") for k in range(3)])
    return out / np.linalg.norm(out, axis=0)


def _circle(field, x, r, weight):
    n = max(16, math.ceil(2.0 * math.pi * r / (0.5 * field.domain.h)))
    theta = 2.0 * math.pi * np.arange(n) / n
    u = _interp(field, x[0] + r * np.cos(theta), x[1] + r * np.sin(theta))
    ds = 2.0 * math.pi * r / n
    du = np.roll(u, -1, axis=1) - u
    up = u + np.array([0.0, 0.0, 1.0])[:, None]
    energy = float(np.sum(du * du) / ds + weight * np.sum(up * up) * ds)
    avg = u[:2].mean(axis=1)
    return energy, avg


@dataclass(frozen=True)
class AnnulusChoice:
    r0: float
    circle_average: tuple[float, float]
    circle_energy: float


def select_annulus(field: MagnetizationField, x, delta: float, weight: float = 1.0) -> AnnulusChoice:
    """Pick the shell radius in [3/4 delta, delta] with the least circle energy.

    The circle energy is the tangential Dirichlet energy plus
    ``weight * |m + e3|^2`` along the circle.  Ties go to the smaller radius.
    """
    dom = field.domain
    x = (float(x[0]), float(x[1]))
    if not dom.contains_ball(x, delta):
        raise AnnulusError(f"ball of radius {delta} around {x} leaves the domain")
    radii = 0.75 * delta + dom.h * np.arange(int(math.floor(0.25 * delta / dom.h + 1e-9)) + 1)
    if len(radii) < 3:
        raise AnnulusError(f"annulus under-resolved: {len(radii)} shells for delta={delta}, h={dom.h}")
    best = None
    for r in radii:
        e, avg = _circle(field, x, float(r), weight)
        if best is None or e < best[0]:
            best = (e, float(r), avg)
    e, r0, avg = best
    return AnnulusChoice(r0, (float(avg[0]), float(avg[1])), e)


@dataclass(frozen=True)
class InsertionReport:
    site_x: float
    site_y: float
    delta: float
    r0: float
    rho: float
    circle_avg_x: float
    circle_avg_y: float
    degree_before: float
    degree_after: float
    energy_before: float
    energy_after: float
    strictness_margin: float
    site_density: float

    def csv_row(self) -> list[str]:
        return [repr(float(getattr(self, c))) for c in REPORT_COLUMNS]

    def write_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(REPORT_COLUMNS) + "\n")
            fh.write(",".join(self.csv_row()) + "\n")


def default_delta(field: MagnetizationField, params: ModelParams, x) -> float:
    dom = field.domain
    dist = _point_boundary_distance(dom, x)
    cands = [1.0 / math.sqrt(max(params.lambda0, params.Q - 1.0)), 0.5 * dist]
    if params.kappa > 0:
        cands.append(1.0 / (4.0 * params.kappa))
    return min(cands)


def default_rho(params: ModelParams, delta: float, c2: float = C2_DEFAULT) -> float:
    """kappa delta^2 / (2 C2); with kappa = 0 the scale is delta^2."""
    if params.kappa > 0:
        return params.kappa * delta * delta / (2.0 * c2)
    return delta * delta


def _point_boundary_distance(dom, x) -> float:
    X, Y = dom.coords()
    out = ~dom.mask
    return float(np.sqrt(((X[out] - x[0]) ** 2 + (Y[out] - x[1]) ** 2).min()))


def paste_bp(
    field: MagnetizationField,
    params: ModelParams,
    x,
    delta: float | None = None,
    rho: float | None = None,
    site_density: float | None = None,
) -> tuple[MagnetizationField, InsertionReport]:
    """Insert one degree of Belavin-Polyakov bubble inside B_delta(x).

    The field is cut off on the annulus r0/2 < |y - x| < r0 towards a constant
    trace, then a rotated, truncated profile of scale ``rho`` is pasted into
    B_{r0/2}.  Raises InsertionError unless the degree rises by exactly one.
    """
    dom = field.domain
    x = (float(x[0]), float(x[1]))
    if delta is None:
        delta = default_delta(field, params, x)
    if rho is None:
        rho = default_rho(params, delta)
    if rho > delta / 8.0:
        raise InsertionError(f"rho={rho} exceeds delta/8={delta / 8.0}")
    weight = max(params.lambda0, params.Q - 1.0)
    choice = select_annulus(field, x, delta, weight)
    r0 = choice.r0
    avg = np.array(choice.circle_average)
    a2 = float(avg @ avg)
    if a2 >= 1.0:
        raise InsertionError("circle average has unit length")
    R = rotation_taking(np.array([0.0, 0.0, 1.0]), np.array([-avg[0], -avg[1], math.sqrt(1.0 - a2)]))
    L = r0 / (2.0 * rho)
    if L <= 2.0:
        raise InsertionError(f"truncation parameter {L} <= 2")
    spec = BPProfileSpec(x, rho, L, R)

    # work on the bounding box of B_r0 only
    i0 = max(int(math.floor((x[0] - r0 - dom.origin[0]) / dom.h)) - 1, 0)
    i1 = min(int(math.ceil((x[0] + r0 - dom.origin[0]) / dom.h)) + 2, dom.nx)
    j0 = max(int(math.floor((x[1] - r0 - dom.origin[1]) / dom.h)) - 1, 0)
    j1 = min(int(math.ceil((x[1] + r0 - dom.origin[1]) / dom.h)) + 2, dom.ny)
    bx = dom.origin[0] + dom.h * np.arange(i0, i1)
    by = dom.origin[1] + dom.h * np.arange(j0, j1)
    X, Y = np.meshgrid(bx, by, indexing="ij")
    s = np.hypot(X - x[0], Y - x[1])
    box = field.values[:, i0:i1, j0:j1]
    new = np.array(box)
    mask = dom.mask[i0:i1, j0:j1]

    ann = mask & (s > 0.5 * r0) & (s < r0)
    if np.any(ann):
        sa = s[ann]
        # the cutoff only sees the trace on the outer circle, extended radially
        trace = _interp(field, x[0] + (X[ann] - x[0]) * r0 / sa, x[1] + (Y[ann] - x[1]) * r0 / sa)
        v = 2.0 * sa / r0 - 1.0  # 0 on the inner circle, 1 on the outer
        mp = v * (trace[:2] - avg[:, None]) + avg[:, None]
        norm2 = np.einsum("kn,kn->n", mp, mp)
        if np.any(norm2 >= 1.0):
            raise InsertionError("cutoff field leaves the lower hemisphere")
        new[:2, ann] = mp
        new[2, ann] = -np.sqrt(1.0 - norm2)
    core = mask & (s <= 0.5 * r0)
    new[:, core] = bp_profile(spec, X[core], Y[core])

    before = topological_degree(field)
    values = field.values.copy()
    values[:, i0:i1, j0:j1] = new
    out = MagnetizationField.project(dom, values)
    after = topological_degree(out)
    if round(after) != round(before) + 1:
        raise InsertionError(f"degree went from {before:.6f} to {after:.6f}")
    e0 = total_energy(field, params).total
    e1 = total_energy(out, params).total
    if site_density is None:
        site_density = maximal_density_at(field, params, x)
    report = InsertionReport(
        x[0], x[1], delta, r0, rho, float(avg[0]), float(avg[1]),
        before, after, e0, e1, EIGHT_PI - (e1 - e0), site_density,
    )
    return out, report


# --- site selection ---------------------------------------------------------


def site_density_field(field: MagnetizationField, params: ModelParams) -> np.ndarray:
    """Per-node h^2 * (|grad m|^2 + max{lambda0, Q-1} |m + e3|^2)."""
    m = field.values
    up = m[0] ** 2 + m[1] ** 2 + (m[2] + 1.0) ** 2
    w = max(params.lambda0, params.Q - 1.0)
    return np.where(field.domain.mask, exchange_density(field) + w * field.domain.h**2 * up, 0.0)


def _disk_kernel(k: int) -> np.ndarray:
    o = np.arange(-k, k + 1)
    return (o[:, None] ** 2 + o[None, :] ** 2 <= k * k).astype(float)


def _radii_steps(max_steps: float) -> list[int]:
    out, k = [], 2
    while k < max_steps:
        out.append(k)
        k *= 2
    return out


def maximal_density_map(field: MagnetizationField, params: ModelParams) -> np.ndarray:
    """Largest ball average of the site density over radii 2h, 4h, 8h, ...

    Only balls inside the domain count; nodes with no admissible radius get
    +inf.
    """
    dom = field.domain
    dens = site_density_field(field, params)
    steps = dom.boundary_distance() / dom.h
    best = np.full(dens.shape, -np.inf)
    for k in _radii_steps(float(steps.max())):
        K = _disk_kernel(k)
        avg = signal.fftconvolve(dens, K, mode="same") / (K.sum() * dom.h**2)
        ok = steps > k
        best[ok] = np.maximum(best[ok], avg[ok])
    best[~np.isfinite(best)] = np.inf
    return best


def maximal_density_at(field: MagnetizationField, params: ModelParams, x) -> float:
    """Same quantity as maximal_density_map at a single point, by direct sums."""
    dom = field.domain
    dens = site_density_field(field, params)
    X, Y = dom.coords()
    d2 = ((X - x[0]) ** 2 + (Y - x[1]) ** 2) / dom.h**2
    dist = _point_boundary_distance(dom, x) / dom.h
    best = -math.inf
    for k in _radii_steps(dist):
        ball = d2 <= k * k + 1e-9
        best = max(best, float(dens[ball].sum() / (ball.sum() * dom.h**2)))
    return best if math.isfinite(best) else math.inf


def choose_insertion_site(
    field: MagnetizationField,
    params: ModelParams,
    epsilon: float = EPSILON_DEFAULT,
    min_distance: float = 0.0,
) -> tuple[tuple[float, float], float, bool]:
    """Node with the smallest maximal density; ties go to the first (i, j).

    Candidates sit at distance > max(2h, min_distance) from the boundary;
    pass ``min_distance = 2 * delta`` to leave room for a ball of radius delta.
    Returns ``(site, site_density, quiet)`` where ``quiet`` tells whether the
    density is at most ``epsilon * kappa^2``.
    """
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    dom = field.domain
    cand = dom.boundary_distance() > max(2.0 * dom.h, min_distance)
    if not cand.any():
        raise NoCandidateError(f"no node lies farther than max(2h, {min_distance}) from the boundary")
    M = np.where(cand, maximal_density_map(field, params), np.inf)
    flat = int(np.argmin(M))
    i, j = np.unravel_index(flat, M.shape)
    val = float(M[i, j])
    return dom.node_position(int(i), int(j)), val, val <= epsilon * params.kappa**2


# --- insertion on a locally refined window ------------------------------------


def refine_window(field: MagnetizationField, center, half_width: float, h_fine: float) -> MagnetizationField:
    """Resample a square window of the field onto a finer node grid.

    The window's outer ring is clamped to -e3 like any exterior, so the
    window energy carries a small border term that is the same before and
    after a paste well inside it.
    """
    dom = field.domain
    c = int(math.ceil(half_width / h_fine)) + 1
    origin = (center[0] - c * h_fine, center[1] - c * h_fine)
    lo = np.array(origin)
    hi = lo + 2 * c * h_fine
    if not (dom.contains_ball(center, math.hypot(*(hi - lo)) / 2.0 + dom.h)):
        raise InsertionError("refinement window leaves the domain")
    n = 2 * c + 1
    mask = np.ones((n, n), dtype=bool)
    mask[[0, -1], :] = False
    mask[:, [0, -1]] = False
    wdom = GridDomain(h_fine, mask, "bitmap", {}, origin)
    ax = origin[0] + h_fine * np.arange(n)
    ay = origin[1] + h_fine * np.arange(n)
    vals = np.empty((3, n, n))
    for row in range(0, n, 512):
        X, Y = np.meshgrid(ax[row : row + 512], ay, indexing="ij")
        vals[:, row : row + 512] = _interp(field, X, Y)
    return MagnetizationField.project(wdom, vals)


def refined_insertion(
    field: MagnetizationField,
    params: ModelParams,
    x,
    delta: float,
    rho: float | None = None,
    points_per_core: float = 16.0,
    site_density: float | None = None,
) -> tuple[MagnetizationField, InsertionReport]:
    """Run paste_bp on a window refined so that the core scale spans
    ``points_per_core`` grid steps.

    Energies in the report are window energies; the degrees are global:
    the coarse field's degree plus the window's increment.
    """
    if rho is None:
        rho = default_rho(params, delta)
    h_f = rho / points_per_core
    window = refine_window(field, x, delta + 2.0 * h_f, h_f)
    if site_density is None:
        site_density = maximal_density_at(field, params, x)
    out, rep = paste_bp(window, params, x, delta, rho, site_density=site_density)
    base = topological_degree(field)
    rep = replace(
        rep,
        degree_before=base,
        degree_after=base + (rep.degree_after - rep.degree_before),
    )
    return out, rep
