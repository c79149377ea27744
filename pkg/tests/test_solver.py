import numpy as np
import pytest

from skyf import energy as en
from skyf.errors import InsertionError, RepairCapExceeded
from skyf.grid import MagnetizationField, ModelParams, build_domain, random_field, read_snapshot
from skyf.profiles import BPProfileSpec, paste_profile
from skyf.solver import (
    TRACE_COLUMNS,
    SolverOptions,
    minimize,
    _reseed,
    minimize_with_degree_repair,
)


@pytest.fixture(scope="module")
def disk3():
    dom = build_domain("disk", {"radius": 3.0}, 0.25)
    return dom, ModelParams.for_domain(dom, 0.5, 1.5)


class TestOptions:
    @pytest.mark.parametrize(
        "kw", [{"grad_tol": 0.0}, {"initial_step": -1.0}, {"step_rule": "newton"}]
    )
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            SolverOptions(**kw)


class TestMinimize:
    def test_uniform_down_is_critical(self, disk3):
        dom, p = disk3
        f, tr = minimize(MagnetizationField.uniform_down(dom), p)
        assert tr.converged and len(tr.records) == 1
        assert tr.final.total == 0.0

    @pytest.mark.parametrize("rule", ["adaptive-curvature", "backtracking"])
    def test_monotone(self, disk3, rule):
        dom, p = disk3
        _, tr = minimize(random_field(dom, 4, tilt=0.4), p, SolverOptions(max_iters=300, step_rule=rule))
        e = np.array([r.total for r in tr.records])
        assert np.all(np.diff(e) <= 0)
        assert tr.reason in ("converged", "max-iters")

    def test_fixed_step_runs(self, disk3):
        dom, p = disk3
        _, tr = minimize(random_field(dom, 4, tilt=0.1), p, SolverOptions(max_iters=50, step_rule="fixed", initial_step=0.01))
        assert len(tr.records) == 51 and tr.reason == "max-iters"
        assert all(r.step == 0.01 for r in tr.records[1:])

    def test_converged_residual(self, disk3):
        dom, p = disk3
        opts = SolverOptions(grad_tol=1e-7)
        f, tr = minimize(random_field(dom, 1, tilt=0.3), p, opts)
        assert tr.converged
        # the projected gradient is -2 h^2 times the residual at every node
        assert en.el_residual(f, p) <= opts.grad_tol / (2 * dom.h**2) * (1 + 1e-9)
        b = en.total_energy(f, p)
        assert tr.final.total == pytest.approx(b.total, rel=1e-12, abs=1e-14)
        assert tr.final.exchange == pytest.approx(b.exchange, rel=1e-12, abs=1e-14)

    def test_callback_sees_every_iterate(self, disk3):
        dom, p = disk3
        seen = []
        _, tr = minimize(random_field(dom, 2, tilt=0.2), p, SolverOptions(max_iters=20),
                         callback=lambda it, f: seen.append((it, en.total_energy(f, p).total)))
        assert [s[0] for s in seen] == [r.iter for r in tr.records]
        assert [s[1] for s in seen] == pytest.approx([r.total for r in tr.records], rel=1e-12)

    def test_degree_guard(self):
        dom = build_domain("disk", {"radius": 2.0}, 0.25)
        p = ModelParams.for_domain(dom, 0.0, 1.0)
        f0 = paste_profile(MagnetizationField.uniform_down(dom), BPProfileSpec((0.0, 0.0), 0.5, 3.0))
        f, tr = minimize(f0, p)
        assert tr.reason == "degree-lost"
        assert round(en.topological_degree(f)) == 1
        lost = MagnetizationField(dom, tr.lost_values)
        assert round(en.topological_degree(lost)) != 1
        assert all(round(r.degree) == 1 for r in tr.records)

    def test_deterministic_trace(self, disk3, tmp_path):
        dom, p = disk3
        out = []
        for k in range(2):
            _, tr = minimize(random_field(dom, 9, tilt=0.3), p, SolverOptions(max_iters=100))
            tr.write_csv(tmp_path / f"t{k}.csv")
            out.append((tmp_path / f"t{k}.csv").read_bytes())
        assert out[0] == out[1]
        lines = out[0].decode().splitlines()
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert lines[-1].startswith("# termination,")

    def test_snapshots(self, disk3, tmp_path):
        dom, p = disk3
        f, tr = minimize(random_field(dom, 3, tilt=0.3), p,
                         SolverOptions(max_iters=10, snapshot_every=5, snapshot_dir=str(tmp_path)))
        names = sorted(x.name for x in tmp_path.iterdir())
        assert names == ["iter_0000000.skyf", "iter_0000005.skyf", "iter_0000010.skyf"]
        assert np.array_equal(read_snapshot(tmp_path / names[-1]).values, f.values)


class TestRepair:
    def test_reaches_target_degree(self):
        dom = build_domain("disk", {"radius": 4.0}, 0.125)
        p = ModelParams.for_domain(dom, 0.5, 1.5)
        f, tr, repairs = minimize_with_degree_repair(
            MagnetizationField.uniform_down(dom), p, SolverOptions(max_iters=200)
        )
        assert round(en.topological_degree(f)) == 1
        assert [r.iter for r in tr.records] == list(range(len(tr.records)))

    def test_reseeds_do_not_overlap(self):
        dom = build_domain("disk", {"radius": 10.0}, 0.25)
        p = ModelParams.for_domain(dom, 1.0, 4.0)
        f = MagnetizationField.uniform_down(dom)
        for d in (1, 2, 3):
            f = _reseed(f, p)
            assert round(en.topological_degree(f)) == d

    def test_cap(self):
        # a tiny disk with weak chirality cannot hold a skyrmion: every reseed collapses
        dom = build_domain("disk", {"radius": 1.0}, 1 / 16)
        p = ModelParams.for_domain(dom, 0.1, 1.0)
        with pytest.raises(RepairCapExceeded):
            minimize_with_degree_repair(MagnetizationField.uniform_down(dom), p, SolverOptions(max_iters=5000), repair_cap=2)

    def test_smallness_warning(self):
        dom = build_domain("disk", {"radius": 2.0}, 0.25)
        p = ModelParams.for_domain(dom, 3.0, 1.5)
        assert not en.feasibility_check(p, 3, dom).smallness_ok
        # the disk is too small to reseed, so the warning is followed by an insertion error
        with pytest.warns(UserWarning, match="smallness"), pytest.raises(InsertionError):
            minimize_with_degree_repair(MagnetizationField.uniform_down(dom), p, SolverOptions(max_iters=1), d_target=3)

    def test_rejects_zero_target(self, disk3):
        dom, p = disk3
        with pytest.raises(ValueError):
            minimize_with_degree_repair(MagnetizationField.uniform_down(dom), p, d_target=0)

