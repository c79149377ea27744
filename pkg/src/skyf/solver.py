"""Projected gradient descent on the sphere with degree monitoring."""

from __future__ import annotations

import csv
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from skyf.energy import (
    energy_value,
    feasibility_check,
    project_tangent,
    raw_gradient,
    topological_degree,
)
from skyf.errors import DegenerateTriangleError, InsertionError, RepairCapExceeded
from skyf.grid import MagnetizationField, ModelParams, write_snapshot

logger = logging.getLogger(__name__)

STEP_RULES = ("fixed", "adaptive-curvature", "backtracking")
TRACE_COLUMNS = ("iter", "total", "exchange", "dmi", "anisotropy", "degree", "grad_norm", "step")
MIN_STEP = 1e-14
QUIET_TILT = 0.5
ARMIJO = 1e-4


@dataclass(frozen=True)
class SolverOptions:
    max_iters: int = 20000
    grad_tol: float = 1e-7
    step_rule: str = "adaptive-curvature"
    initial_step: float = 0.05
    degree_guard: bool = True
    seed: int = 0
    snapshot_every: int = 0
    snapshot_dir: str | None = None

    def __post_init__(self):
        if not self.grad_tol > 0:
            raise ValueError("grad_tol must be positive")
        if not self.initial_step > 0:
            raise ValueError("initial_step must be positive")
        if self.step_rule not in STEP_RULES:
            raise ValueError(f"step_rule must be one of {STEP_RULES}")


@dataclass(frozen=True)
class TraceRecord:
    iter: int
    total: float
    exchange: float
    dmi: float
    anisotropy: float
    degree: float
    grad_norm: float
    step: float


@dataclass
class SolveTrace:
    records: list[TraceRecord] = field(default_factory=list)
    reason: str = ""
    lost_values: np.ndarray | None = field(default=None, repr=False)

    @property
    def converged(self) -> bool:
        return self.reason == "converged"

    @property
    def final(self) -> TraceRecord:
        return self.records[-1]

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_COLUMNS)
            for r in self.records:
                w.writerow([r.iter] + [repr(float(getattr(r, c))) for c in TRACE_COLUMNS[1:]])
            w.writerow(["# termination", self.reason])


def _normalize(v: np.ndarray, mask: np.ndarray) -> np.ndarray:
    norm = np.sqrt(np.einsum("kij,kij->ij", v, v))
    v /= np.where(mask, norm, 1.0)
    v[:, ~mask] = 0.0
    v[2, ~mask] = -1.0
    return v


def _record(it, m, h, params, grad_norm, step, degree):
    f_ex = np.diff(m, axis=1)
    f_ey = np.diff(m, axis=2)
    ex = float(np.sum(f_ex * f_ex) + np.sum(f_ey * f_ey))
    tot = energy_value(m, h, params)
    an = float((params.Q - 1.0) * h * h * np.sum(m[0] ** 2 + m[1] ** 2))
    return TraceRecord(it, tot, ex, tot - ex - an, an, degree, grad_norm, step)


def minimize(
    field0: MagnetizationField,
    params: ModelParams,
    options: SolverOptions | None = None,
    callback=None,
) -> tuple[MagnetizationField, SolveTrace]:
    """Minimize the discrete energy over admissible fields of fixed degree.

    Each step moves along the negative projected gradient and renormalizes
    nodewise.  ``adaptive-curvature`` takes a two-point secant (Barzilai-Borwein)
    step length and backtracks until the Armijo condition holds, so the
    recorded energy never increases.

    ``callback(it, field)`` is invoked on every recorded iterate.
    """
    opts = options or SolverOptions()
    dom = field0.domain
    mask, h = dom.mask, dom.h
    m = field0.values.copy()
    E = energy_value(m, h, params)
    g = project_tangent(raw_gradient(m, mask, h, params), m)
    deg = topological_degree(field0)
    target = round(deg)
    trace = SolveTrace()
    alpha = opts.initial_step
    s_prev = y_prev = None
    snap_dir = Path(opts.snapshot_dir) if opts.snapshot_dir else None

    for it in range(opts.max_iters + 1):
        gnorm = float(np.sqrt(np.einsum("kij,kij->ij", g, g)).max())
        trace.records.append(_record(it, m, h, params, gnorm, alpha if it else 0.0, deg))
        if callback is not None:
            callback(it, MagnetizationField(dom, m))
        if snap_dir is not None and opts.snapshot_every and it % opts.snapshot_every == 0:
            write_snapshot(MagnetizationField(dom, m), snap_dir / f"iter_{it:07d}.skyf")
        if gnorm <= opts.grad_tol:
            trace.reason = "converged"
            break
        if it == opts.max_iters:
            trace.reason = "max-iters"
            break

        if opts.step_rule == "adaptive-curvature" and s_prev is not None:
            sy = float(np.vdot(s_prev, y_prev))
            alpha = float(np.vdot(s_prev, s_prev)) / sy if sy > 0 else 2.0 * alpha
        elif opts.step_rule == "backtracking" and it:
            alpha = 2.0 * alpha
        elif opts.step_rule == "fixed":
            alpha = opts.initial_step

        g2 = float(np.vdot(g, g))
        while True:
            trial = _normalize(m - alpha * g, mask)
            E_new = energy_value(trial, h, params)
            if opts.step_rule == "fixed" or E_new <= E - ARMIJO * alpha * g2:
                break
            alpha *= 0.5
            if alpha < MIN_STEP:
                break
        if alpha < MIN_STEP:
            trace.reason = "stalled"
            break

        new_deg = _safe_degree(MagnetizationField(dom, trial))
        if opts.degree_guard and not (math.isfinite(new_deg) and round(new_deg) == target):
            trace.reason = "degree-lost"
            trace.lost_values = trial
            break
        g_new = project_tangent(raw_gradient(trial, mask, h, params), trial)
        s_prev = trial - m
        y_prev = g_new - g
        m, E, g, deg = trial, E_new, g_new, new_deg

    return MagnetizationField(dom, m), trace


REPAIR_CAP = 5


def _reseed(field: MagnetizationField, params: ModelParams) -> MagnetizationField:
    """Paste a grid-resolved profile (core of two to four steps) at the quietest spot.

    The spot is the node farthest from every exterior node and every node
    where the field departs from -e3 by more than QUIET_TILT, so the
    untilted profile blends into the background and leaves existing
    skyrmions alone.  When no quiet disk is large enough (residue of a
    collapse, noisy starts) only the boundary distance counts.
    """
    from skyf.profiles import BPProfileSpec, paste_profile

    dom = field.domain
    m = field.values
    tilt = np.sqrt(m[0] ** 2 + m[1] ** 2 + (m[2] + 1.0) ** 2)
    room = ndimage.distance_transform_edt(dom.mask & (tilt <= QUIET_TILT)) * dom.h
    # shrink the core (down to two grid steps) before giving up on quiet space
    for steps in (4, 3, 2):
        rho = steps * dom.h
        if room.max() - dom.h >= 3.0 * rho:
            break
    else:
        rho = 4.0 * dom.h
        room = dom.boundary_distance()
    k = int(np.argmax(room))
    L = min(8.0, (float(room.flat[k]) - dom.h) / rho)
    if L < 3.0:
        raise InsertionError(f"domain too thin to host a resolved profile (room {room.flat[k]:.3g})")
    site = dom.node_position(*np.unravel_index(k, room.shape))
    before = _safe_degree(field)
    if not math.isfinite(before):
        raise InsertionError("degree of the field to reseed is undefined")
    out = paste_profile(field, BPProfileSpec(site, rho, L))
    after = _safe_degree(out)
    # pasting over a stray defect of negative degree can raise the degree by more than one
    if not (math.isfinite(after) and round(after) > round(before)):
        raise InsertionError(f"reseed changed the degree from {before} to {after}")
    if round(after) > round(before) + 1:
        logger.warning("reseed raised the degree from %d to %d", round(before), round(after))
    return out


def minimize_with_degree_repair(
    field0: MagnetizationField,
    params: ModelParams,
    options: SolverOptions | None = None,
    d_target: int = 1,
    repair_cap: int = REPAIR_CAP,
    callback=None,
) -> tuple[MagnetizationField, SolveTrace, int]:
    """Minimize, re-inserting a profile whenever the flow loses degree.

    Returns the field, the concatenated trace and the number of repairs.
    """
    if d_target < 1:
        raise ValueError("d_target must be >= 1")
    opts = options or SolverOptions()
    rep = feasibility_check(params, d_target, field0.domain)
    if not rep.smallness_ok:
        warnings.warn(
            f"alpha={rep.alpha:.4f} exceeds the smallness threshold {rep.smallness_bound:.4f} for d={d_target}",
            stacklevel=2,
        )
    field = field0
    while round(topological_degree(field)) < d_target:
        field = _reseed(field, params)
    full = SolveTrace()
    repairs = 0
    while True:
        field, trace = minimize(field, params, opts, callback=callback)
        offset = full.records[-1].iter + 1 if full.records else 0
        full.records.extend(TraceRecord(**{**r.__dict__, "iter": r.iter + offset}) for r in trace.records)
        full.reason = trace.reason
        if trace.reason != "degree-lost":
            break
        logger.info("degree lost at iteration %d", full.records[-1].iter)
        # restart from the first iterate past the collapse
        field = MagnetizationField(field.domain, trace.lost_values)
        while not _safe_degree(field) > d_target - 0.5:
            if repairs >= repair_cap:
                raise RepairCapExceeded(f"degree lost after {repairs} repairs")
            repairs += 1
            field = _reseed(field, params)
    return field, full, repairs


def _safe_degree(field):
    try:
        return topological_degree(field)
    except DegenerateTriangleError:
        return math.nan
