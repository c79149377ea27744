"""Fast invariant suite behind ``skyf verify``: one PASS/FAIL per check."""

from __future__ import annotations

import math
import tempfile
from pathlib import Path

import numpy as np

from skyf import energy as en
from skyf.analysis import defect_measure
from skyf.config import parse_config
from skyf.errors import ConfigError
from skyf.grid import (
    MagnetizationField,
    ModelParams,
    build_domain,
    poincare_lambda0,
    random_field,
    read_snapshot,
    write_snapshot,
)
from skyf.profiles import BPProfileSpec, paste_bp, paste_profile, truncated_bp_exchange
from skyf.solver import SolverOptions, minimize

# first zero of J0 squared: the unit-disk Dirichlet eigenvalue
UNIT_DISK_LAMBDA0 = 2.404825557695773**2


def _check(name, fn):
    try:
        ok, detail = fn()
    except Exception as exc:  # a crash is a failed check, not a crashed suite
        ok, detail = False, f"{type(exc).__name__}: {exc}"
    return name, bool(ok), detail


def _bp_degree():
    dom = build_domain("disk", {"radius": 1.0}, 1.0 / 128)
    f = paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec((0.0, 0.0), 0.1, 16.0))
    deg = en.topological_degree(f)
    flat = en.topological_degree(MagnetizationField.uniform_down(dom))
    return abs(deg - 1) < 1e-9 and flat == 0, f"degree {deg:.12f}, flat {flat}"


def _quadrature():
    v = truncated_bp_exchange(16.0)
    return 24.75 < v < 25.5, f"exchange(L=16) = {v:.6f}"


def _lambda0():
    lam = poincare_lambda0(build_domain("disk", {"radius": 1.0}, 1.0 / 32))
    rel = abs(lam - UNIT_DISK_LAMBDA0) / UNIT_DISK_LAMBDA0
    # the staircase boundary makes the error first order: about 2% here
    return rel < 0.03, f"lambda0 = {lam:.5f} (continuum {UNIT_DISK_LAMBDA0:.5f})"


def _gradient():
    dom = build_domain("disk", {"radius": 1.0}, 1.0 / 8)
    p = ModelParams.for_domain(dom, 0.7, 2.0)
    f = random_field(dom, 3)
    g = en.energy_gradient(f, p)
    rng = np.random.default_rng(4)
    worst = 0.0
    for _ in range(5):
        i, j = np.argwhere(dom.mask)[rng.integers(dom.n_interior)]
        m = f.values[:, i, j]
        t = np.cross(m, rng.standard_normal(3))
        t /= np.linalg.norm(t)
        eps = 1e-6
        vals = []
        for s in (eps, -eps):
            v = f.values.copy()
            v[:, i, j] = (m + s * t) / np.linalg.norm(m + s * t)
            vals.append(en.energy_value(v, dom.h, p))
        fd = (vals[0] - vals[1]) / (2 * eps)
        an = float(g[:, i, j] @ t)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-3))
    return worst < 1e-6, f"worst relative error {worst:.2e}"


def _lower_bounds():
    dom = build_domain("disk", {"radius": 2.0}, 0.25)
    p = ModelParams.for_domain(dom, 0.5, 1.5)
    worst = math.inf
    for seed in range(10):
        b = en.total_energy(random_field(dom, seed), p)
        worst = min(worst, b.lower_bound_margin_1, b.lower_bound_margin_2)
    return worst >= -1e-10, f"smallest margin {worst:.3e}"


def _snapshot():
    dom = build_domain("disk", {"radius": 1.0}, 0.125)
    f = random_field(dom, 1)
    with tempfile.TemporaryDirectory() as tmp:
        a, b = Path(tmp) / "a.skyf", Path(tmp) / "b.skyf"
        write_snapshot(f, a)
        write_snapshot(read_snapshot(a), b)
        same = a.read_bytes() == b.read_bytes()
    return same, "byte-identical round trip" if same else "bytes differ"


def _paste():
    dom = build_domain("disk", {"radius": 4.0}, 1.0 / 32)
    p = ModelParams.for_domain(dom, 0.5, 1.5)
    f = MagnetizationField.uniform_down(dom)
    out, rep = paste_bp(f, p, (0.0, 0.0), 1.0, rho=1.0 / 8)
    X, Y = dom.coords()
    outside = X**2 + Y**2 >= rep.r0**2
    untouched = np.array_equal(out.values[:, outside], f.values[:, outside])
    ok = round(rep.degree_after) == 1 and untouched
    return ok, f"degree {rep.degree_before:.0f} -> {rep.degree_after:.6f}, outside untouched: {untouched}"


def _monotone():
    dom = build_domain("disk", {"radius": 3.0}, 0.25)
    p = ModelParams.for_domain(dom, 0.5, 1.5)
    _, tr = minimize(random_field(dom, 2, tilt=0.3), p, SolverOptions(max_iters=200))
    e = np.array([r.total for r in tr.records])
    return bool(np.all(np.diff(e) <= 0)), f"{len(e)} iterates, final {e[-1]:.6f}"


def _defect():
    dom = build_domain("disk", {"radius": 2.0}, 0.125)
    p = ModelParams.for_domain(dom, 0.5, 1.5)
    f = random_field(dom, 5, tilt=0.5)
    tot = en.total_energy(f, p).total
    s = sum(m for _, m in defect_measure(f, p, 0.5))
    return abs(s - tot) <= 1e-10 * max(1.0, abs(tot)), f"partition sum {s:.12f} vs total {tot:.12f}"


def _squares():
    dom = build_domain("disk", {"radius": 8.0}, 1.0 / 8)
    f = paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec((0.0, 0.0), 1.0, 7.0))
    sp, sm = en.square_integrals(f)
    return sp >= 0 and sm >= 0, f"square integrals {sp:.4f}, {sm:.4f}"


def _config():
    try:
        parse_config("params.kappa = 0.5\nnot.a.key = 1\n", "probe")
    except ConfigError as exc:
        return "not.a.key" in str(exc) and ":2" in str(exc), str(exc)
    return False, "unknown key accepted"


CHECKS = (
    ("degree of a pasted profile", _bp_degree),
    ("profile exchange quadrature", _quadrature),
    ("unit-disk eigenvalue", _lambda0),
    ("analytic gradient", _gradient),
    ("a priori lower bounds", _lower_bounds),
    ("snapshot round trip", _snapshot),
    ("insertion degree and locality", _paste),
    ("monotone solver trace", _monotone),
    ("defect measure additivity", _defect),
    ("non-negative square integrals", _squares),
    ("config rejects unknown keys", _config),
)


def run_checks() -> list[tuple[str, bool, str]]:
    return [_check(name, fn) for name, fn in CHECKS]
