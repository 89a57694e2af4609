"""Command-line front end: ``synth``, ``coordinate``, ``simulate`` and ``verify``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys as _sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import datasets, serialization
from .coordination import CoordinationConfig, run_algorithm
from .errors import FuzzyMPCError, InfeasibleSynthesis, InvalidHyperparams, NoConvergence, PremiseOutOfRange
from .fuzzy_model import delay_schedule_from_dict
from .lmi_synthesis import FAMILIES, GainSet, SynthesisHyperparams, certify_gains, synthesize
from .simulation import (
    default_initial_state,
    disturbance_from_dict,
    input_violations,
    settling_step,
    simulate,
    total_cost,
    verify_iss_decrease,
    verify_rpi_montecarlo,
)

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_INFEASIBLE, EXIT_INVALID, EXIT_NO_CONVERGENCE = 0, 2, 3, 4


@dataclass
class RunConfig:
    """Everything a subcommand needs, validated before any solve."""

    system: object = "example1"
    hyperparams: dict = field(default_factory=dict)
    steps: int = 30
    seed: int = 0
    disturbance: dict = field(default_factory=lambda: {"kind": "uniform_ball"})
    delay_schedule: dict | None = None
    x0: list | None = None
    x0_scale: float = 0.5
    history: list | None = None
    K: int = 10
    tol: float = 1e-6
    max_iter: int = 20
    samples: int = 10_000
    out: str = "out"
    raw: dict = field(default_factory=dict)

    @classmethod
    def from_sources(cls, args: argparse.Namespace) -> "RunConfig":
        raw = {}
        if args.config:
            raw = json.loads(Path(args.config).read_text() or "{}")
        sim = raw.get("simulation", {})
        co = raw.get("coordination", {})
        cfg = cls(
            system=raw.get("system", "example1"),
            hyperparams=raw.get("hyperparams", {}),
            steps=sim.get("steps", 30), seed=sim.get("seed", 0),
            disturbance=sim.get("disturbance", {"kind": "uniform_ball"}),
            delay_schedule=sim.get("delay_schedule"), x0=sim.get("x0"),
            x0_scale=sim.get("x0_scale", 0.5), history=sim.get("history"),
            K=co.get("K", 10), tol=co.get("tol", 1e-6), max_iter=co.get("max_iter", 20),
            samples=raw.get("verify", {}).get("samples", 10_000), out=raw.get("out", "out"), raw=raw)
        # command-line flags win over the file
        if args.system is not None:
            cfg.system = args.system
        if args.seed is not None:
            cfg.seed = args.seed
        if args.steps is not None:
            cfg.steps = args.steps
        if args.out is not None:
            cfg.out = args.out
        if cfg.steps < 0 or cfg.K < 1 or cfg.x0_scale <= 0:
            raise ValueError("steps must be >= 0, K >= 1 and x0_scale > 0")
        return cfg

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "raw"}
        d["system"] = self.system if isinstance(self.system, (str, dict)) else str(self.system)
        return d


# ---------------------------------------------------------------------------
# loading
# ---------------------------------------------------------------------------


def _per(v, N):
    return tuple(v) if isinstance(v, (list, tuple)) and len(v) == N and np.ndim(v[0]) == 0 else (v,) * N


def _mats(v, N, n):
    """Scalar -> ``v I``; one matrix -> shared; list of ``N`` matrices -> as given."""
    a = np.asarray(v, float)
    if a.ndim == 0:
        return tuple(float(a) * np.eye(n) for _ in range(N))
    if a.ndim == 2:
        return (a,) * N
    if a.ndim == 1 and len(a) == N:
        return tuple(float(s) * np.eye(n) for s in a)
    return tuple(np.asarray(x, float) for x in v)


def apply_overrides(hp: SynthesisHyperparams, overrides: dict, sys) -> SynthesisHyperparams:
    N, n = sys.N, sys.subsystems[0].n
    kw = {}
    for key, val in overrides.items():
        if key in ("lam", "varpi", "tau", "H", "rho"):
            kw[key] = tuple(float(x) for x in _per(val, N))
        elif key in ("X", "Q"):
            kw[key] = _mats(val, N, n)
        elif key == "R":
            kw[key] = tuple(np.atleast_2d(r) for r in _mats(val, N, sys.subsystems[0].m))
        elif key in ("alpha", "eps", "gain_bound", "xbar_bound"):
            kw[key] = float(val)
        else:
            raise InvalidHyperparams(f"unknown hyperparameter {key!r}")
    hp = replace(hp, **kw)
    hp.validate(sys)
    return hp


def load_problem(cfg: RunConfig):
    """System, hyperparameters and (when the dataset publishes them) gains."""
    src = cfg.system
    published = None
    opts = {}
    if isinstance(src, dict):
        opts = {k: v for k, v in src.items() if k != "builtin"}
        src = src["builtin"]
    if src == "example1":
        sys = datasets.example1(**opts)
        hp = datasets.example1_hyperparams()
    elif src == "example1_tuned":
        sys, hp = datasets.example1_tuned(**opts)
    elif src == "example2":
        sys = datasets.example2(**opts)
        hp = datasets.example2_hyperparams()
        published = datasets.example2_gains()
    else:
        sys = serialization.load_system(src)
        n = sys.subsystems[0].n
        hp = SynthesisHyperparams.uniform(sys.N, lam=0.1, X=[np.eye(s.n) for s in sys.subsystems],
                                          varpi=1.0, tau=1.0, H=5.0, Q=np.eye(n),
                                          R=np.eye(sys.subsystems[0].m), rho=0.5)
    hp = apply_overrides(hp, cfg.hyperparams, sys)
    return sys, hp, published


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FUZZY_LSMPC_THREADS", "1")))
    except ValueError:
        return 1


def _x0(cfg, sys, gains):
    if cfg.x0 is not None:
        return [np.asarray(x, float) for x in cfg.x0]
    return default_initial_state(gains, scale=cfg.x0_scale)


def _disturbance(cfg):
    options = dict(cfg.disturbance)
    if options.get("kind") == "uniform_ball":
        options.setdefault("seed", cfg.seed)
    return disturbance_from_dict(options)


def _delay(cfg, sys):
    return None if cfg.delay_schedule is None else delay_schedule_from_dict(cfg.delay_schedule, sys.h)


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_synth(cfg: RunConfig, args) -> int:
    sys, hp, _ = load_problem(cfg)
    out = Path(cfg.out)
    try:
        gains = synthesize(sys, hp, workers=min(_threads(), sys.N))
    except InfeasibleSynthesis as exc:
        report = {"feasible": False, "subsystem": exc.subsystem, "failed_families": exc.failed_families,
                  "margins": exc.margins, "message": str(exc)}
        paths = [serialization.write_json(out / "report.json", report)]
        serialization.write_manifest(out, "synth", cfg.to_dict(), cfg.seed, paths)
        print(f"infeasible: {exc}")
        return EXIT_INFEASIBLE
    report = {"feasible": True, "certified": gains.certified(), "sigma": list(gains.sigma),
              "margins": {str(i): m for i, m in gains.certificate_margins.items()}}
    paths = [serialization.save_gains(gains, out / "gains.json"),
             serialization.write_json(out / "report.json", report)]
    serialization.write_manifest(out, "synth", cfg.to_dict(), cfg.seed, paths)
    print(f"feasible: sigma = {np.round(gains.sigma, 6).tolist()}, written to {out}")
    return EXIT_OK


def cmd_coordinate(cfg: RunConfig, args) -> int:
    sys, hp, _ = load_problem(cfg)
    out = Path(cfg.out)
    if cfg.x0 is None and cfg.max_iter >= 1:
        x0 = _x0(cfg, sys, synthesize(sys, hp, workers=min(_threads(), sys.N)))
    else:
        x0 = [np.asarray(x, float) for x in (cfg.x0 or [np.zeros(s.n) for s in sys.subsystems])]
    conf = CoordinationConfig(K=cfg.K, tol=cfg.tol, max_iter=cfg.max_iter, disturbance=_disturbance(cfg),
                              delay_schedule=_delay(cfg, sys), history=cfg.history,
                              workers=min(_threads(), sys.N))
    code = EXIT_OK
    try:
        gains, report, traj = run_algorithm(sys, hp, x0, conf)
    except NoConvergence as exc:
        gains, report, traj = exc.gains, exc.report, exc.trajectory
        code = EXIT_NO_CONVERGENCE
    paths = [serialization.write_json(out / "coordination.json", {
        "converged": report.converged, "iterations_used": report.iterations_used,
        "error_per_iteration": report.error_per_iteration})]
    if gains is not None:
        paths.append(serialization.save_gains(gains, out / "gains.json"))
    if traj is not None:
        paths.append(serialization.write_trajectory_csv(traj, out / "trajectory.csv"))
    serialization.write_manifest(out, "coordinate", cfg.to_dict(), cfg.seed, paths)
    print(f"converged={report.converged} iterations={report.iterations_used} "
          f"errors={[float(f'{e:.3e}') for e in report.error_per_iteration]}")
    return code


def _gains_for(cfg, args, sys, hp, published) -> GainSet:
    if args.gains:
        return serialization.load_gains(args.gains)
    if published is not None:
        return published
    return synthesize(sys, hp, workers=min(_threads(), sys.N))


def cmd_simulate(cfg: RunConfig, args) -> int:
    sys, hp, published = load_problem(cfg)
    gains = _gains_for(cfg, args, sys, hp, published)
    out = Path(cfg.out)
    x0 = _x0(cfg, sys, gains)
    traj = simulate(sys, gains, x0, _disturbance(cfg), cfg.steps, _delay(cfg, sys), hp=hp,
                    history=cfg.history, on_violation="raise", metadata={"seed": cfg.seed})
    J, _ = total_cost(traj, gains)
    report = {"steps": cfg.steps, "subsystems": []}
    for i, s in enumerate(sys.subsystems):
        xs = traj.states(i)
        band = 0.01 * float(np.abs(xs[0]).max()) if np.any(xs[0]) else 0.0
        entry = {"x0": xs[0].tolist(), "final_state": xs[-1].tolist(),
                 "max_abs_state": float(np.abs(xs).max()),
                 "settling_step_1pct": settling_step(xs, band),
                 "min_accumulated_cost": float(J[i].min()),
                 "always_in_level_set": bool(traj.in_rpi[i].all())}
        if s.C_out is not None:
            y = xs @ s.C_out.T
            entry["max_abs_output"] = float(np.abs(y).max())
            entry["final_abs_output"] = float(np.abs(y[-1]).max())
        report["subsystems"].append(entry)
    paths = [serialization.write_trajectory_csv(traj, out / "trajectory.csv"),
             serialization.write_json(out / "report.json", report)]
    serialization.write_manifest(out, "simulate", cfg.to_dict(), cfg.seed, paths)
    print(json.dumps(report, indent=2))
    return EXIT_OK


def cmd_verify(cfg: RunConfig, args) -> int:
    if not args.gains:
        raise ValueError("verify needs --gains")
    sys, hp, _ = load_problem(cfg)
    gains = serialization.load_gains(args.gains)
    if gains.N != sys.N or gains.X is None:
        raise InvalidHyperparams("gain file does not match the system or lacks shape matrices")
    out = Path(cfg.out)
    margins = certify_gains(sys, hp, gains, families=tuple(f for f in FAMILIES if f != "level"))
    frozen = replace(gains, certificate_margins=margins)
    mc = verify_rpi_montecarlo(sys, gains, hp, cfg.samples, cfg.seed)
    checks = {"lmi_certificate": frozen.certified(), "rpi_montecarlo": mc.violations == 0}
    report = {"checks": checks, "margins": {str(i): m for i, m in margins.items()},
              "montecarlo": {"samples": mc.samples, "exits": mc.exits,
                             "decrease_violations": mc.decrease_violations,
                             "worst_exit": mc.worst_exit, "worst_decrease": mc.worst_decrease}}
    try:
        traj = simulate(sys, gains, _x0(cfg, sys, gains), _disturbance(cfg), cfg.steps, _delay(cfg, sys),
                        hp=hp, history=cfg.history, on_violation="raise")
    except PremiseOutOfRange as exc:
        # the run left the region where the fuzzy model is valid
        checks["trajectory_in_level_sets"] = False
        report["trajectory_error"] = str(exc)
    else:
        iss = verify_iss_decrease(traj, gains, hp)
        inputs = input_violations(traj, sys, hp)
        J, _ = total_cost(traj, gains)
        checks.update({
            "trajectory_in_level_sets": bool(all(f.all() for f in traj.in_rpi)),
            "iss_decrease": iss.passed,
            "input_constraint": not inputs,
            "cost_positivity": bool(J.min() >= 0),
        })
        report.update({"iss_failures": iss.failures[:50], "input_failures": inputs[:50]})
    paths = [serialization.write_json(out / "verify.json", report)]
    serialization.write_manifest(out, "verify", cfg.to_dict(), cfg.seed, paths)
    for name, ok in checks.items():
        print(f"{'PASS' if ok else 'FAIL'} {name}")
    return EXIT_OK if all(checks.values()) else EXIT_INFEASIBLE


COMMANDS = {"synth": cmd_synth, "coordinate": cmd_coordinate, "simulate": cmd_simulate, "verify": cmd_verify}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fuzzy-lsmpc", description=__doc__)
    p.add_argument("command", choices=sorted(COMMANDS))
    p.add_argument("--config", help="JSON run configuration")
    p.add_argument("--system", help="builtin name (example1, example1_tuned, example2) or system JSON path")
    p.add_argument("--gains", help="gain JSON file")
    p.add_argument("--seed", type=int)
    p.add_argument("--steps", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.from_sources(args)
        return COMMANDS[args.command](cfg, args)
    except InfeasibleSynthesis as exc:
        print(f"infeasible: {exc}", file=_sys.stderr)
        return EXIT_INFEASIBLE
    except NoConvergence as exc:
        print(f"no convergence: {exc}", file=_sys.stderr)
        return EXIT_NO_CONVERGENCE
    except (FuzzyMPCError, ValueError, KeyError, TypeError, OSError, json.JSONDecodeError) as exc:
        print(f"invalid input: {exc}", file=_sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    raise SystemExit(main())
