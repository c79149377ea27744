"""Experiment drivers: concentration as Q grows and the existence table."""

from __future__ import annotations

import csv
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from skyf.energy import EIGHT_PI, anisotropy_integral, energy_density, feasibility_check, total_energy
from skyf.errors import SkyfError
from skyf.grid import GridDomain, MagnetizationField, ModelParams
from skyf.solver import SolverOptions, minimize_with_degree_repair

logger = logging.getLogger(__name__)

PEAK_LEVEL = 0.01
CORE_LENGTHS = 10.0
LOCALIZED = 0.9


@dataclass(frozen=True)
class Peak:
    x: float
    y: float
    mass: float
    degree: int
    touches_boundary: bool


@dataclass
class QRecord:
    Q: float
    total: float = math.nan
    exchange: float = math.nan
    dmi: float = math.nan
    anisotropy: float = math.nan
    degree: float = math.nan
    anisotropy_integral: float = math.nan
    repairs: int = 0
    converged: bool = False
    peaks: list[Peak] = field(default_factory=list)
    localization: float = math.nan
    inconclusive: bool = True
    error: str = ""

    @property
    def inferred_degree(self) -> int:
        return sum(p.degree for p in self.peaks)


@dataclass
class ConcentrationReport:
    d: int
    kappa: float
    Q_list: list[float]
    records: list[QRecord]

    CSV_COLUMNS = (
        "Q", "total", "exchange", "dmi", "anisotropy", "degree", "anisotropy_integral",
        "repairs", "converged", "n_peaks", "inferred_degree", "localization", "inconclusive",
        "boundary_peak",
    )

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.CSV_COLUMNS)
            for r in self.records:
                w.writerow([
                    repr(float(r.Q)), repr(r.total), repr(r.exchange), repr(r.dmi), repr(r.anisotropy),
                    repr(r.degree), repr(r.anisotropy_integral), r.repairs, int(r.converged),
                    len(r.peaks), r.inferred_degree, repr(r.localization), int(r.inconclusive),
                    int(any(p.touches_boundary for p in r.peaks)),
                ])

    def write_peaks_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("Q", "x", "y", "mass", "degree", "touches_boundary"))
            for r in self.records:
                for p in r.peaks:
                    w.writerow([repr(float(r.Q)), repr(p.x), repr(p.y), repr(p.mass), p.degree, int(p.touches_boundary)])


def detect_peaks(
    field_: MagnetizationField, params: ModelParams, radius: float, level: float = PEAK_LEVEL
) -> tuple[list[Peak], float]:
    """Threshold the energy density at ``level * max``, one peak per component.

    Each node within ``radius`` of some peak goes to its nearest peak, so
    ball masses never double count.  Returns the peaks and the fraction of
    the total energy carried by the union of the balls.
    """
    dom = field_.domain
    dens = energy_density(field_, params)
    total = float(dens.sum())
    labels, n = ndimage.label(dens >= level * dens.max()) if dens.max() > 0 else (None, 0)
    if n == 0:
        return [], 0.0
    tops = ndimage.maximum_position(dens, labels, range(1, n + 1))
    X, Y = dom.coords()
    centers = [dom.node_position(int(i), int(j)) for i, j in tops]
    d2 = np.stack([(X - cx) ** 2 + (Y - cy) ** 2 for cx, cy in centers])
    owner = np.argmin(d2, axis=0)
    near = np.min(d2, axis=0) <= radius * radius
    bdist = dom.boundary_distance()
    peaks = []
    for k, (cx, cy) in enumerate(centers):
        mass = float(dens[near & (owner == k)].sum())
        i, j = tops[k]
        peaks.append(Peak(cx, cy, mass, int(round(mass / EIGHT_PI)), bool(bdist[i, j] <= radius)))
    frac = float(dens[near].sum()) / total if total > 0 else math.nan
    return peaks, frac


def q_sweep(
    domain: GridDomain,
    kappa: float,
    d: int,
    Q_list,
    options: SolverOptions | None = None,
    init: MagnetizationField | None = None,
    dump_dir: str | None = None,
) -> ConcentrationReport:
    """Minimize at increasing Q, warm-starting each from the previous minimizer."""
    Q_list = [float(q) for q in Q_list]
    if any(b <= a for a, b in zip(Q_list, Q_list[1:])):
        raise ValueError("Q_list must be increasing")
    opts = options or SolverOptions()
    current = init if init is not None else MagnetizationField.uniform_down(domain)
    records = []
    for Q in Q_list:
        rec = QRecord(Q)
        params = ModelParams.for_domain(domain, kappa, Q)
        if not feasibility_check(params, d, domain).smallness_ok:
            logger.warning("smallness condition fails at Q=%g", Q)
        try:
            out, trace, repairs = minimize_with_degree_repair(current, params, opts, d_target=d)
        except SkyfError as exc:
            rec.error = f"{type(exc).__name__}: {exc}"
            records.append(rec)
            logger.warning("Q=%g inconclusive: %s", Q, rec.error)
            continue
        b = total_energy(out, params)
        rec.total, rec.exchange, rec.dmi, rec.anisotropy, rec.degree = b.total, b.exchange, b.dmi, b.anisotropy, b.degree
        rec.anisotropy_integral = anisotropy_integral(out)
        rec.repairs = repairs
        rec.converged = trace.converged
        radius = CORE_LENGTHS / math.sqrt(Q - 1.0) if Q > 1.0 else math.inf
        rec.peaks, rec.localization = detect_peaks(out, params, radius)
        rec.inconclusive = not (rec.localization >= LOCALIZED and rec.converged)
        if dump_dir is not None:
            write_density_dump(os.path.join(dump_dir, f"density_Q{Q:g}.txt"), out, params)
        records.append(rec)
        current = out
    return ConcentrationReport(d, kappa, Q_list, records)


def write_density_dump(path, field_: MagnetizationField, params: ModelParams) -> None:
    """Energy density (per unit area) as a text matrix under an ``nx ny h`` header."""
    dom = field_.domain
    dens = energy_density(field_, params) / dom.h**2
    with open(path, "w") as fh:
        fh.write(f"{dom.nx} {dom.ny} {dom.h!r}\n")
        for row in dens:
            fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def read_density_dump(path) -> tuple[float, np.ndarray]:
    with open(path) as fh:
        nx, ny, h = fh.readline().split()
        data = np.loadtxt(fh, ndmin=2)
    if data.shape != (int(nx), int(ny)):
        raise ValueError(f"density dump {path} has shape {data.shape}, header says {nx}x{ny}")
    return float(h), data


def defect_measure(field_: MagnetizationField, params: ModelParams, cell: float) -> list[tuple[tuple[float, float], float]]:
    """Energy carried by each square tile of side ``cell``.

    Tiles partition the nodes, so the masses add up to the total energy.
    Returned centers are tile centers; empty tiles are skipped.
    """
    if not cell > 0:
        raise ValueError("cell must be positive")
    dom = field_.domain
    dens = energy_density(field_, params)
    X, Y = dom.coords()
    ti = np.floor((X - dom.origin[0]) / cell).astype(np.int64)
    tj = np.floor((Y - dom.origin[1]) / cell).astype(np.int64)
    key = ti * (tj.max() + 1) + tj
    sel = dens != 0
    keys, inv = np.unique(key[sel], return_inverse=True)
    mass = np.bincount(inv, weights=dens[sel])
    ncol = tj.max() + 1
    out = []
    for k, m in zip(keys, mass):
        i, j = divmod(int(k), int(ncol))
        out.append(((dom.origin[0] + (i + 0.5) * cell, dom.origin[1] + (j + 0.5) * cell), float(m)))
    return out


def ball_mass(field_: MagnetizationField, params: ModelParams, center, radius: float) -> float:
    dom = field_.domain
    X, Y = dom.coords()
    inside = (X - center[0]) ** 2 + (Y - center[1]) ** 2 <= radius * radius
    return float(energy_density(field_, params)[inside].sum())


# --- existence table ----------------------------------------------------------

TABLE_COLUMNS = (
    "domain", "kappa", "Q", "d", "alpha", "smallness_bound", "smallness_ok", "area_ratio",
    "achieved", "energy", "margin", "repairs", "note",
)


@dataclass(frozen=True)
class ExistenceCell:
    domain: str
    kappa: float
    Q: float
    d: int
    alpha: float
    smallness_bound: float
    smallness_ok: bool
    area_ratio: float
    achieved: bool
    energy: float
    margin: float
    repairs: int
    note: str

    def row(self) -> list:
        return [self.domain, repr(self.kappa), repr(self.Q), self.d, repr(self.alpha), repr(self.smallness_bound),
                int(self.smallness_ok), repr(self.area_ratio), int(self.achieved), repr(self.energy),
                repr(self.margin), self.repairs, self.note]


def _cell(job):
    name, domain, kappa, Q, d, opts = job
    params = ModelParams.for_domain(domain, kappa, Q)
    feas = feasibility_check(params, d, domain)
    energy, repairs, note, achieved = math.nan, 0, "", False
    try:
        out, trace, repairs = minimize_with_degree_repair(MagnetizationField.uniform_down(domain), params, opts, d_target=d)
        b = total_energy(out, params)
        energy = b.total
        achieved = trace.converged and round(b.degree) == d and energy < EIGHT_PI * d
        note = trace.reason
    except SkyfError as exc:
        note = type(exc).__name__
    return ExistenceCell(name, kappa, Q, d, feas.alpha, feas.smallness_bound, feas.smallness_ok,
                         feas.area_ratio, achieved, energy, EIGHT_PI * d - energy, repairs, note)


def resolve_workers(workers: int | None = None) -> int:
    if workers is None:
        workers = int(os.environ.get("SKYF_WORKERS", "1") or 1)
    return max(1, int(workers))


def existence_table(
    domain_family, kappa_list, Q: float, d_max: int, options: SolverOptions | None = None, workers: int | None = None
) -> list[ExistenceCell]:
    """One cell per (domain, kappa, d); cells are independent solver runs.

    ``domain_family`` is a sequence of ``(name, GridDomain)`` pairs.
    """
    opts = options or SolverOptions()
    jobs = [(name, dom, float(k), float(Q), d, opts)
            for name, dom in domain_family for k in kappa_list for d in range(1, d_max + 1)]
    n = resolve_workers(workers)
    if n == 1:
        return [_cell(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(_cell, jobs))


def write_table_csv(path, cells) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TABLE_COLUMNS)
        for c in cells:
            w.writerow(c.row())
