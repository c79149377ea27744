"""Acceptance criteria 1-10, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
printed as the tests run and again in the terminal summary.
"""

import math
import time

import numpy as np
import pytest
from scipy import integrate

from skyf import energy as en
from skyf.analysis import q_sweep
from skyf.cli import main as cli_main
from skyf.errors import SkyfError
from skyf.grid import MagnetizationField, ModelParams, build_domain, random_field, read_snapshot, write_snapshot
from skyf.profiles import (
    C2_DEFAULT,
    BPProfileSpec,
    bp_unit_profile,
    choose_insertion_site,
    paste_profile,
    refined_insertion,
    truncated_bp_exchange,
)
from skyf.solver import SolverOptions, minimize, minimize_with_degree_repair

VERDICTS: dict[int, str] = {}

GRAD_TOL = 1e-6
KAPPA, Q = 0.5, 1.5


def verdict(number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    VERDICTS[number] = line
    print(line)
    assert ok, line


def residual_bound(h):
    # a projected gradient below GRAD_TOL bounds the residual by GRAD_TOL / (2 h^2)
    return GRAD_TOL / (2 * h * h)


def disk_run(h, rho=0.7, L=6.0, callback=None):
    dom = build_domain("disk", {"radius": 20.0}, h)
    p = ModelParams.for_domain(dom, KAPPA, Q)
    f0 = paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec((0.0, 0.0), rho, L))
    t = time.perf_counter()
    f, tr = minimize(f0, p, SolverOptions(grad_tol=GRAD_TOL), callback=callback)
    return f, tr, p, time.perf_counter() - t


@pytest.fixture(scope="module")
def criterion6():
    """The run as specified (h = 1/4), with lower-bound margins of every iterate."""
    worst = [math.inf]

    def watch(it, field):
        b = en.total_energy(field, params)
        worst[0] = min(worst[0], b.lower_bound_margin_1, b.lower_bound_margin_2)

    dom = build_domain("disk", {"radius": 20.0}, 0.25)
    params = ModelParams.for_domain(dom, KAPPA, Q)
    f, tr, p, secs = disk_run(0.25, callback=watch)
    return f, tr, p, secs, worst[0]


@pytest.fixture(scope="module")
def reference_minimizer():
    """Same problem on h = 1/8, where the lattice supports a degree-one minimizer."""
    return disk_run(0.125)


def test_criterion_1_degree():
    t = time.perf_counter()
    dom = build_domain("disk", {"radius": 1.0}, 1 / 128)
    flat = MagnetizationField.uniform_down(dom)
    one = paste_profile(flat, BPProfileSpec((0.0, 0.0), 0.1, 16.0))
    two = paste_profile(paste_profile(flat, BPProfileSpec((-0.45, 0.0), 0.02, 16.0)), BPProfileSpec((0.45, 0.0), 0.02, 16.0))
    d0, d1, d2 = (en.topological_degree(f) for f in (flat, one, two))
    secs = time.perf_counter() - t
    ok = d0 == 0 and abs(d1 - 1) < 1e-9 and abs(d2 - 2) < 1e-9 and secs < 5
    verdict(1, ok, f"flat {d0:.1e}, one paste {d1:.12f}, two pastes {d2:.12f}, {secs:.1f} s")


def test_criterion_2_profile_energy():
    t = time.perf_counter()
    oracle, _ = integrate.quad(lambda r: 2 * math.pi * 8 * r / (1 + r * r) ** 2, 0, 8, epsabs=1e-13)
    dom = build_domain("disk", {"radius": 9.0}, 1 / 32)
    X, Y = dom.coords()
    f = MagnetizationField.project(dom, bp_unit_profile(X, Y))
    grid = en.exchange_energy(f, region=X**2 + Y**2 < 64.0)
    rel = abs(grid - oracle) / oracle
    base = truncated_bp_exchange(8.0) - en.EIGHT_PI
    Ls = np.concatenate([np.geomspace(8.0, 1e4, 120), [math.inf]])
    worst = max((truncated_bp_exchange(L) - en.EIGHT_PI) / base for L in Ls)
    secs = time.perf_counter() - t
    ok = rel < 0.02 and worst <= 4.0 and secs < 10
    verdict(2, ok, f"B_8 exchange {grid:.5f} vs {oracle:.5f} ({100 * rel:.3f}%), "
                   f"worst tail ratio {worst:.3f} <= 4, {secs:.1f} s")


def test_criterion_3_gradient():
    t = time.perf_counter()
    dom = build_domain("disk", {"radius": 1.0}, 1 / 32)
    rng = np.random.default_rng(2024)
    worst = 0.0
    for seed in range(100):
        p = ModelParams.for_domain(dom, float(rng.uniform(0, 2)), float(rng.uniform(1, 5)))
        f = random_field(dom, seed)
        g = en.energy_gradient(f, p)
        v = en.project_tangent(rng.standard_normal(f.values.shape), f.values)
        v[:, ~dom.mask] = 0.0
        # cube root of machine epsilon balances truncation against roundoff
        eps = 1e-5

        def E(s):
            w = f.values + s * v
            return en.energy_value(w / np.linalg.norm(w, axis=0), dom.h, p)

        fd = (E(eps) - E(-eps)) / (2 * eps)
        an = float(np.sum(g * v))
        worst = max(worst, abs(fd - an) / abs(an))
    secs = time.perf_counter() - t
    verdict(3, worst < 1e-6 and secs < 30, f"worst relative error {worst:.2e} over 100 fields ({dom.nx}x{dom.ny}), {secs:.1f} s")


def test_criterion_4_lower_bounds(criterion6):
    dom = build_domain("disk", {"radius": 20.0}, 0.25)
    p = ModelParams.for_domain(dom, KAPPA, Q)
    worst_random = math.inf
    for seed in range(100):
        f = random_field(dom, seed, tilt=None if seed % 2 else 0.5)
        b = en.total_energy(f, p)
        worst_random = min(worst_random, b.lower_bound_margin_1, b.lower_bound_margin_2)
    worst_iter = criterion6[4]
    n_iter = len(criterion6[1].records)
    ok = worst_random >= -1e-10 and worst_iter >= -1e-10
    verdict(4, ok, f"smallest margin {worst_random:.4g} on 100 random fields, {worst_iter:.4g} on {n_iter} solver iterates")


def test_criterion_5_squares():
    t = time.perf_counter()
    rows = []
    for h in (1 / 8, 1 / 16):
        dom = build_domain("disk", {"radius": 20.0}, h)
        f = paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec((0.0, 0.0), 1.0, 16.0))
        gp, gm = en.squares_identity_gap(f)
        sp, sm = en.square_integrals(f)
        ex, deg = en.exchange_energy(f), en.topological_degree(f)
        rows.append((gp, gm, sp, sm, ex >= en.EIGHT_PI * deg - gm))
    secs = time.perf_counter() - t
    shrink = (rows[0][0] / rows[1][0], rows[0][1] / rows[1][1])
    ok = min(shrink) >= 2 and all(r[2] >= 0 and r[3] >= 0 and r[4] for r in rows) and secs < 10
    verdict(5, ok, f"gaps {rows[0][0]:.4f},{rows[0][1]:.4f} -> {rows[1][0]:.4f},{rows[1][1]:.4f} "
                   f"(shrink {shrink[0]:.2f}, {shrink[1]:.2f}), squares non-negative, {secs:.1f} s")


def test_criterion_6_strict_subadditivity(criterion6, reference_minimizer):
    f, tr, p, secs, _ = criterion6
    rf, rtr, rp, rsecs = reference_minimizer
    rb = en.total_energy(rf, rp)
    print(f"reference h=1/8: {rtr.reason} after {rtr.final.iter} iterations, energy {rb.total:.5f}, "
          f"margin {en.EIGHT_PI - rb.total:.5f}, degree {rb.degree:.6f}, residual {en.el_residual(rf, rp):.2e}, {rsecs:.0f} s")
    b = en.total_energy(f, p)
    res = en.el_residual(f, p)
    ok = (tr.converged and b.total < en.EIGHT_PI and round(b.degree) == 1 and abs(b.degree - 1) < 1e-6
          and res <= residual_bound(f.domain.h) and secs < 300)
    verdict(6, ok, f"h=1/4: {tr.reason} after {tr.final.iter} iterations, energy {b.total:.5f}, "
                   f"margin {en.EIGHT_PI - b.total:.5f}, degree {b.degree:.6f}, residual {res:.2e}, {secs:.0f} s")


def test_criterion_7_insertion(reference_minimizer):
    g, tr, p, _ = reference_minimizer
    t = time.perf_counter()
    delta = 1 / math.sqrt(2.0)
    site, dens, _ = choose_insertion_site(g, p, min_distance=8 * delta)
    margins, degrees = [], []
    for dl in (delta, 2 * delta):
        rho = p.kappa * dl * dl / (2 * C2_DEFAULT)
        _, rep = refined_insertion(g, p, site, dl, rho, points_per_core=16.0, site_density=dens)
        margins.append(rep.strictness_margin)
        degrees.append(rep.degree_after)
    ratio = margins[1] / margins[0]
    p0 = p.with_(kappa=0.0)
    excess = []
    for dl in (1 / 8, 1 / 16):
        _, rep = refined_insertion(g, p0, site, dl, dl * dl, points_per_core=16.0)
        excess.append(((rep.energy_after - rep.energy_before) - en.EIGHT_PI) / dl**2)
        degrees.append(rep.degree_after)
    secs = time.perf_counter() - t
    ok = (tr.converged and all(abs(d - 2) < 1e-6 for d in degrees) and min(margins) > 0
          and 2.5 <= ratio <= 6 and excess[1] <= 2 * max(excess[0], 1.0) and secs < 120)
    verdict(7, ok, f"site {site}, margins {margins[0]:.4f} and {margins[1]:.4f} (ratio {ratio:.2f}), "
                   f"kappa=0 excess/delta^2 {excess[0]:.1f} and {excess[1]:.1f}, degrees {[round(d, 6) for d in degrees]}, "
                   f"{secs:.0f} s after the h=1/8 minimizer")


def test_criterion_8_existence_ladder():
    t = time.perf_counter()
    dom = build_domain("strip", {"length": 64.0, "width": 8.0}, 0.25)
    p = ModelParams.for_domain(dom, KAPPA, Q)
    f = MagnetizationField.uniform_down(dom)
    energies, notes = [0.0], []
    ok = True
    for d in (1, 2, 3):
        try:
            f, tr, repairs = minimize_with_degree_repair(f, p, SolverOptions(grad_tol=GRAD_TOL), d_target=d)
        except SkyfError as exc:
            notes.append(f"d={d}: {type(exc).__name__}")
            ok = False
            break
        b = en.total_energy(f, p)
        good = (tr.converged and round(b.degree) == d and b.total < en.EIGHT_PI * d
                and b.total < energies[-1] + en.EIGHT_PI)
        ok &= good
        energies.append(b.total)
        notes.append(f"d={d}: {tr.reason}, E={b.total:.4f}, degree {b.degree:.4f}, repairs {repairs}")
        if not good:
            break
    secs = time.perf_counter() - t
    verdict(8, ok and secs < 1200, "; ".join(notes) + f"; {secs:.0f} s")


def test_criterion_9_concentration():
    t = time.perf_counter()
    dom = build_domain("disk", {"radius": 10.0}, 0.25)
    Qs = [4.0, 16.0, 64.0, 256.0]
    rep = q_sweep(dom, 1.0, 2, Qs, SolverOptions(grad_tol=GRAD_TOL))
    secs = time.perf_counter() - t
    first, last = rep.records[0], rep.records[-1]
    K = first.anisotropy_integral * (first.Q - 1.0)
    checks = (
        last.error == "" and last.converged,
        abs(last.total - 16 * math.pi) <= 0.05 * 16 * math.pi,
        last.anisotropy_integral <= K / (last.Q - 1.0),
        last.localization >= 0.9,
        last.inferred_degree == 2,
        secs < 1800,
    )
    rows = [f"Q={r.Q:g}: " + (r.error or f"E={r.total:.4f}, A={r.anisotropy_integral:.3g}, "
                              f"loc={r.localization:.3f}, peaks={r.inferred_degree}") for r in rep.records]
    verdict(9, all(checks), "; ".join(rows) + f"; {secs:.0f} s")


def test_criterion_10_determinism(tmp_path):
    t = time.perf_counter()
    dom = build_domain("disk", {"radius": 3.0}, 0.125)
    f = random_field(dom, 17)
    write_snapshot(f, tmp_path / "a.skyf")
    write_snapshot(read_snapshot(tmp_path / "a.skyf"), tmp_path / "b.skyf")
    round_trip = (tmp_path / "a.skyf").read_bytes() == (tmp_path / "b.skyf").read_bytes()
    outputs = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        cli_main(["minimize", "-o", str(out), "--seed", "5", "-s", "init.kind=random", "-s", "domain.radius=5",
                  "-s", "domain.h=0.125", "-s", "solve.max_iters=300"])
        outputs.append([(out / n).read_bytes() for n in ("trace.csv", "energy.csv", "final.skyf")])
    same = outputs[0] == outputs[1]
    secs = time.perf_counter() - t
    verdict(10, round_trip and same and secs < 60,
            f"snapshot round trip {'byte-exact' if round_trip else 'differs'}, "
            f"seeded CSVs {'identical' if same else 'differ'}, {secs:.1f} s")
