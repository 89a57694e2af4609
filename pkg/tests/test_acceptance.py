"""Acceptance suite: one PASS/FAIL line per criterion, tolerances pinned from the build contract.

Criteria that the published data cannot meet are implemented faithfully and
left failing; see the project decision log for the analysis.
"""

from __future__ import annotations

import itertools
import time
import warnings

import numpy as np
import pytest

import test_coordination
import test_fuzzy_model
import test_lmi_synthesis
import test_simulation
from conftest import record_criterion
from fuzzy_lsmpc import datasets
from fuzzy_lsmpc.coordination import CoordinationConfig, run_algorithm
from fuzzy_lsmpc.errors import InfeasibleSynthesis
from fuzzy_lsmpc.lmi_synthesis import CoordinationValues, certify_gains, rpi_schur_deviation, synthesize, \
    terminal_schur_deviation
from fuzzy_lsmpc.simulation import (
    UniformBallDisturbance,
    default_initial_state,
    input_violations,
    settling_step,
    simulate,
    total_cost,
    verify_iss_decrease,
    verify_rpi_montecarlo,
)

# disturbance radius of the acceptance plant (the examples leave it unspecified)
ACCEPT_GAMMA = 1e-5
SEEDS = range(10)
STEPS = 30


@pytest.fixture(scope="module")
def plant():
    sys, hp = datasets.example1_tuned(gamma=ACCEPT_GAMMA)
    gains = synthesize(sys, hp)
    return sys, hp, gains, default_initial_state(gains)


@pytest.fixture(scope="module")
def runs(plant):
    sys, hp, gains, x0 = plant
    return [simulate(sys, gains, x0, UniformBallDisturbance(s), STEPS, hp=hp) for s in SEEDS]


@pytest.fixture(scope="module")
def coordination(plant):
    sys, hp, _, x0 = plant
    t0 = time.perf_counter()
    gains, report, traj = run_algorithm(sys, hp, x0, CoordinationConfig(K=10, tol=1e-6, max_iter=20,
                                                                         disturbance=UniformBallDisturbance(0)))
    return gains, report, traj, time.perf_counter() - t0


def test_criterion_01_schur_oracle():
    t0 = time.perf_counter()
    worst = 0.0
    count = 0
    for name, sys, hp in (("example1", datasets.example1(), datasets.example1_hyperparams()),
                          ("example2", datasets.example2(), datasets.example2_hyperparams())):
        for i, sub in enumerate(sys.subsystems):
            rng = np.random.default_rng(1000 * i + len(name))
            for _ in range(100):
                k = [rng.normal(scale=3.0, size=(sub.m, sub.n)) for _ in range(sub.rule_count)]
                s = rng.uniform(0.05, 10.0)
                coord = CoordinationValues(delta=tuple(rng.normal(size=sub.n) for _ in range(sys.N)),
                                           z=rng.normal(size=sub.n))
                xbar = rng.normal(size=sub.n)
                for v in itertools.product(range(sub.rule_count), repeat=2):
                    worst = max(worst, rpi_schur_deviation(sys, hp, i, v, k, s),
                                terminal_schur_deviation(sys, hp, i, v, k, s, xbar, coord))
                count += 1
    dt = time.perf_counter() - t0
    ok = worst < 1e-9 and dt < 5.0
    record_criterion(1, ok, f"{count} instantiations x all vertices, max deviation {worst:.2e} (< 1e-9), "
                            f"{dt:.2f} s (< 5 s)")
    assert ok


def test_criterion_02_published_hyperparameters_feasible():
    sys, hp = datasets.example1(), datasets.example1_hyperparams()
    t0 = time.perf_counter()
    try:
        gains = synthesize(sys, hp)
    except InfeasibleSynthesis as exc:
        dt = time.perf_counter() - t0
        record_criterion(2, False, f"subsystem {exc.subsystem + 1} infeasible, failing families "
                                   f"{exc.failed_families}, {dt:.2f} s")
        pytest.fail(str(exc))
    dt = time.perf_counter() - t0
    margins = certify_gains(sys, hp, gains)
    worst = max(v for m in margins.values() for f, v in m.items() if f in ("rpi", "terminal"))
    ok = worst < -1e-9 and dt < 30.0
    record_criterion(2, ok, f"worst strict margin {worst:.2e} (< -1e-9), {dt:.2f} s (< 30 s)")
    assert ok


def test_criterion_03_settling(plant, runs):
    t0 = time.perf_counter()
    sys, hp, gains, x0 = plant
    limits = (10, 5, 5)
    worst = [0, 0, 0]
    for traj in runs:
        for i in range(sys.N):
            band = 0.01 * np.abs(x0[i]).max()
            k = settling_step(traj.states(i), band)
            worst[i] = max(worst[i], STEPS + 1 if k is None else k)
    dt = time.perf_counter() - t0
    ok = all(w <= lim for w, lim in zip(worst, limits)) and dt < 5.0
    record_criterion(3, ok, f"worst 1% settling steps {worst} vs limits {list(limits)} over "
                            f"{len(runs)} seeds")
    assert ok


def test_criterion_04_coordination(coordination):
    _, report, _, dt = coordination
    err = report.error_per_iteration
    ok = (report.converged and report.iterations_used <= 3 and err[-1] <= 1e-6
          and err[-1] < err[0] * 1e-3 and dt < 60.0)
    record_criterion(4, ok, f"errors {[f'{e:.2e}' for e in err]}, {report.iterations_used} passes (<= 3), "
                            f"{dt:.2f} s (< 60 s)")
    assert ok


def _acceptance_trajectories(runs, coordination):
    return list(runs) + [coordination[2]]


def test_criterion_05_cost_positivity(plant, runs, coordination):
    gains = plant[2]
    trajs = _acceptance_trajectories(runs, coordination)
    gsets = [gains] * len(runs) + [coordination[0]]
    jmin = min(total_cost(t, g)[0].min() for t, g in zip(trajs, gsets))
    ok = jmin >= 0
    record_criterion(5, ok, f"min accumulated J_i(t) = {jmin:.3e} over {len(trajs)} trajectories")
    assert ok


def test_criterion_06_rpi_montecarlo(plant):
    sys, hp, gains, _ = plant
    t0 = time.perf_counter()
    rep = verify_rpi_montecarlo(sys, gains, hp, samples=10_000, seed=0, tol=1e-9)
    dt = time.perf_counter() - t0
    bad = verify_rpi_montecarlo(sys, gains.scaled(10.0), hp, samples=10_000, seed=0, tol=1e-9)
    ok = rep.exits == 0 and rep.decrease_violations == 0 and bad.violations > 0 and dt < 10.0
    record_criterion(6, ok, f"certified: {rep.exits} exits, {rep.decrease_violations} decrease violations "
                            f"in {dt:.2f} s (< 10 s); x10 gains: {bad.violations} violations (> 0)")
    assert ok


def test_criterion_07_iss_decrease(plant, runs, coordination):
    hp, gains = plant[1], plant[2]
    reports = [verify_iss_decrease(t, gains, hp) for t in runs]
    reports.append(verify_iss_decrease(coordination[2], coordination[0], hp))
    fails = sum(len(r.failures) for r in reports)
    worst = max(r.max_residual for r in reports)
    ok = fails == 0
    record_criterion(7, ok, f"{fails} failing steps, worst residual {worst:.3e} (<= 0)")
    assert ok


def test_criterion_08_input_constraint(plant, runs, coordination):
    sys, hp = plant[0], plant[1]
    trajs = _acceptance_trajectories(runs, coordination)
    viol = sum(len(input_violations(t, sys, hp)) for t in trajs)
    in_set = sum(int(np.sum(f[:-1])) for t in trajs for f in t.in_rpi)
    ok = viol == 0 and in_set > 0
    record_criterion(8, ok, f"{viol} violations over {in_set} in-set (subsystem, step) samples")
    assert ok


def test_criterion_09_example2_published_gains():
    sys = datasets.example2(gamma=0.01)
    gains, hp = datasets.example2_gains(), datasets.example2_hyperparams()
    x0 = [np.array([0.1, 0.0])] * 2
    with np.errstate(all="ignore"), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        traj = simulate(sys, gains, x0, UniformBallDisturbance(0), 200, hp=hp)
        y = [traj.states(i) @ sys.subsystems[i].C_out.T for i in range(sys.N)]
    peak = max(float(np.nanmax(np.abs(v))) for v in y)
    settle = [settling_step(v, 0.02) for v in y]
    ok = np.isfinite(peak) and all(k is not None for k in settle)
    record_criterion(9, ok, f"peak |y| = {peak:.3e}, +-0.02 settling steps {settle} within 200 steps")
    assert ok


def test_criterion_10_property_suites(tuned, ex1):
    checks = {
        "membership convexity": lambda: (test_fuzzy_model.test_membership_convexity(),
                                         test_fuzzy_model.test_triangular_membership_convexity()),
        "blend vertex/idempotence": lambda: (test_fuzzy_model.test_blend_vertex(ex1),
                                             test_fuzzy_model.test_blend_idempotence()),
        "LMI affinity": lambda: [test_lmi_synthesis.test_builders_affine_and_symmetric(
            (datasets.example1(), datasets.example1_hyperparams()), i) for i in range(3)],
        "vertex domination (1000 mu)": lambda: test_lmi_synthesis.test_vertex_domination(tuned),
        "decoupling equivalence": test_fuzzy_model.test_decoupling_equivalence,
        "determinism": lambda: test_simulation.test_determinism(tuned),
        "decoupled coordination": test_coordination.test_decoupled_converges_first_pass,
    }
    failed = []
    for name, fn in checks.items():
        try:
            fn()
        except Exception as exc:  # noqa: BLE001 - every failure is reported by name
            failed.append(f"{name}: {type(exc).__name__}")
    ok = not failed
    record_criterion(10, ok, f"{len(checks) - len(failed)}/{len(checks)} property suites pass"
                             + (f"; failed {failed}" if failed else ""))
    assert ok
