import json

import numpy as np
import pytest

from weakkam.aiming import AimingSchedule, ControlledProcess, quadrature_budget, simulate
from weakkam.cell import solve_cell
from weakkam.errors import InvalidArgument
from weakkam.lagrangian import eval_L, kinked, mechanical, pendulum_potential, velocity_bound
from weakkam.lower_bound import (GENERATOR_KINDS, LowerBoundViolation, ProcessGenerator, anneal_adversary,
                                 field_hash, fuzz, lower_margin, total_functional, verify_lower)
from weakkam.torus import GridScalarField, GridSpec, interpolate, torus_dist, wrap

PENDULUM = mechanical(pendulum_potential())


@pytest.fixture(scope="module")
def cell():
    return solve_cell(PENDULUM, GridSpec(1, 256))


def test_constant_process_functional():
    phi = GridScalarField.constant(GridSpec(1, 32), 0.0)
    for x in (0.0, 0.25, 0.7):
        proc = ControlledProcess.from_velocities([x], [0.0, 1.0], [[0.0]], PENDULUM)
        expected = eval_L(PENDULUM, [x], [0.0])
        assert total_functional(proc, phi) == pytest.approx(expected, abs=1e-12)
        assert total_functional(proc, phi, PENDULUM) == pytest.approx(expected, abs=1e-12)


def test_zero_horizon():
    grid = GridSpec(1, 32)
    phi = GridScalarField(grid, np.random.default_rng(0).normal(size=grid.size))
    proc = ControlledProcess.from_velocities([0.3], [0.0], np.zeros((0, 1)), PENDULUM)
    assert proc.r == 0.0
    assert total_functional(proc, phi) == pytest.approx(interpolate(phi, [0.3]))
    assert lower_margin(proc, phi, 1.0) == 0.0


def test_functional_against_fine_quadrature():
    grid = GridSpec(1, 64)
    phi = GridScalarField(grid, np.random.default_rng(1).normal(size=grid.size))
    spec = kinked(0.5, pendulum_potential())
    for seed in range(5):
        gen = ProcessGenerator("random-piecewise-constant", seed, cap=6.0, segments=64, r=5.0)
        proc = gen.generate(spec)
        fine = float(interpolate(phi, proc.end)) + proc.requadrature(spec, 1000).sum()
        assert total_functional(proc, phi, spec) == pytest.approx(fine, abs=1e-4 * proc.r)


def test_margin_invariant_under_constant_shift(cell):
    gen = ProcessGenerator.for_solution("random-piecewise-constant", 3, PENDULUM, cell.phi)
    proc = gen.generate(PENDULUM)
    a = lower_margin(proc, cell.phi, cell.hbar)
    b = lower_margin(proc, cell.phi + 12.5, cell.hbar)
    assert a == pytest.approx(b, abs=1e-12)


def test_constant_processes_respect_bound(cell):
    r = 3.0
    for x in np.linspace(0, 1, 41, endpoint=False):
        proc = ControlledProcess.from_velocities([x], [0.0, r], [[0.0]], PENDULUM)
        margin = verify_lower(proc, cell.phi, cell.hbar, PENDULUM, cell.residual_sup)
        assert margin == pytest.approx((eval_L(PENDULUM, [x], [0.0]) + cell.hbar) * r, abs=1e-9)


@pytest.mark.parametrize("kind", GENERATOR_KINDS)
def test_generators_produce_valid_processes(kind, cell):
    spec = PENDULUM
    for seed in range(3):
        gen = ProcessGenerator.for_solution(kind, seed, spec, cell.phi, segments=16, r=2.0)
        proc = gen.generate(spec, cell.phi, cell.hbar)
        assert proc.times[0] == 0.0 and proc.r == pytest.approx(2.0)
        assert 1 <= len(proc.velocities) <= 16
        assert np.all(np.linalg.norm(proc.velocities, axis=1) <= gen.cap + 1e-12)
        step = wrap(proc.positions[:-1] + proc.durations[:, None] * proc.velocities)
        np.testing.assert_allclose(torus_dist(step, proc.positions[1:]), 0.0, atol=1e-12)
        np.testing.assert_allclose(np.diff(proc.cost), proc.requadrature(spec), atol=1e-13)
        again = gen.generate(spec, cell.phi, cell.hbar)
        np.testing.assert_array_equal(again.velocities, proc.velocities)


def test_generator_cap_default(cell):
    gen = ProcessGenerator.for_solution("bang-bang", 0, PENDULUM, cell.phi)
    assert gen.cap == pytest.approx(2 * velocity_bound(PENDULUM, cell.phi.lipschitz()))
    proc = gen.generate(PENDULUM)
    assert np.allclose(np.abs(proc.velocities), gen.cap)


@pytest.mark.parametrize("kwargs", [
    {"kind": "teleport", "seed": 0, "cap": 1.0},
    {"kind": "bang-bang", "seed": 0, "cap": np.inf},
    {"kind": "bang-bang", "seed": 0, "cap": 1.0, "segments": 65},
    {"kind": "bang-bang", "seed": 0, "cap": 1.0, "r": 0.0},
])
def test_generator_rejects(kwargs):
    with pytest.raises(InvalidArgument):
        ProcessGenerator(**kwargs)


def test_heuristics_need_phi():
    for kind in ("gradient-descent-heuristic", "adversarial-annealed"):
        with pytest.raises(InvalidArgument):
            ProcessGenerator(kind, 0, 1.0).generate(PENDULUM)


def test_violation_is_dumped(tmp_path, cell):
    proc = ControlledProcess.from_velocities([0.5], [0.0, 1.0], [[0.0]], PENDULUM)
    with pytest.raises(LowerBoundViolation) as info:
        verify_lower(proc, cell.phi, cell.hbar - 5.0, PENDULUM, cell.residual_sup, dump_dir=tmp_path)
    report = info.value.report
    assert report["margin"] < -report["slack"]["total"]
    assert report["phi_sha256"] == field_hash(cell.phi)
    ctx = json.loads((tmp_path / "counterexample.json").read_text())
    assert ctx["hbar"] == cell.hbar - 5.0
    assert (tmp_path / "counterexample.csv").read_text() == proc.to_csv()


def test_field_hash_sensitive():
    grid = GridSpec(1, 16)
    a = GridScalarField.constant(grid, 0.0)
    assert field_hash(a) == field_hash(GridScalarField.constant(grid, 0.0))
    assert field_hash(a) != field_hash(a + 1e-15)


def test_fuzz_finds_no_violation(cell):
    report = fuzz(cell.phi, cell.hbar, PENDULUM, seeds=range(8), r=5.0, residual_sup=cell.residual_sup)
    assert set(report) == set(GENERATOR_KINDS[:3])
    for entry in report.values():
        assert entry["violations"] == []
        assert entry["min_margin"] > -1e-3 * 5.0


def test_fuzz_parallel_matches_serial(cell):
    kw = dict(kinds=GENERATOR_KINDS[:2], seeds=range(6), r=2.0, residual_sup=cell.residual_sup)
    assert fuzz(cell.phi, cell.hbar, PENDULUM, workers=2, **kw) == fuzz(cell.phi, cell.hbar, PENDULUM, **kw)


def test_annealer(cell):
    proc, margin, stats = anneal_adversary(cell.phi, cell.hbar, PENDULUM, r=10.0, proposals=3000, seed=1)
    rest = ControlledProcess.from_velocities(proc.start, [0.0, 10.0], [[0.0]], PENDULUM)
    assert margin <= lower_margin(rest, cell.phi, cell.hbar) + 1e-12
    assert margin >= -0.1
    assert margin == pytest.approx(stats["best_margin"], abs=1e-9)
    assert len(proc.velocities) == 64
    again = anneal_adversary(cell.phi, cell.hbar, PENDULUM, r=10.0, proposals=3000, seed=1)
    assert again[1] == margin
    with pytest.raises(InvalidArgument):
        anneal_adversary(cell.phi, cell.hbar, PENDULUM, proposals=0)


def test_aiming_trajectory_is_sandwiched(cell):
    eps, r = 0.1, 2.0
    sched = AimingSchedule.build(eps, cell.phi, PENDULUM)
    proc = simulate([0.6], cell.phi, sched.kappa, sched.partition(r), PENDULUM, sched)
    slack = cell.residual_sup * r + quadrature_budget(proc, PENDULUM)
    margin = lower_margin(proc, cell.phi, cell.hbar)
    # the grid solution is off from the exact one by O(K h) at both endpoints;
    # over a short horizon that is not covered by residual_sup * r
    grid_error = cell.phi.lipschitz() * cell.phi.grid.h
    assert -slack - grid_error <= margin <= (r + 1) * eps + slack
