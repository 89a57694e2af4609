"""JSON system and gain files, trajectory CSV export and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .errors import DimensionMismatch
from .fuzzy_model import LargeScaleSystem, SubsystemRules, membership_from_dict
from .lmi_synthesis import GainSet

logger = logging.getLogger(__name__)

TRAJECTORY_HEADER = ["k", "subsystem", "state_index", "x", "u_index", "u", "d_index", "d",
                     "V", "Vbar", "stage_cost", "in_rpi"]


def _mat(a) -> list:
    return np.asarray(a, float).tolist()


def system_to_dict(sys: LargeScaleSystem) -> dict:
    """Neighbour keys in ``f`` are 1-based subsystem numbers; zero couplings are omitted."""
    subs = []
    for i, s in enumerate(sys.subsystems):
        d = {
            "A": [_mat(a) for a in s.A], "B": [_mat(b) for b in s.B],
            "A_d": [_mat(a) for a in s.A_d], "w": [_mat(w) for w in s.w],
            "f": {str(j + 1): _mat(f) for j, f in sorted(s.f.items()) if np.any(f)},
            "membership": s.membership.to_dict(),
        }
        if s.C_out is not None:
            d["C_out"] = _mat(s.C_out)
        subs.append(d)
    return {"subsystems": subs, "h": sys.h, "gamma": sys.gamma.tolist(),
            "u_max": [u.tolist() for u in sys.u_max]}


def system_from_dict(d: dict) -> LargeScaleSystem:
    try:
        raw = d["subsystems"]
    except (KeyError, TypeError) as exc:
        raise DimensionMismatch("system document needs a 'subsystems' list") from exc
    if not raw:
        raise DimensionMismatch("system document lists no subsystems")
    N = len(raw)
    subs = []
    for i, s in enumerate(raw):
        f = {}
        for key, mat in (s.get("f") or {}).items():
            j = int(key) - 1
            if not 0 <= j < N:
                raise DimensionMismatch(f"subsystem {i + 1}: neighbour key {key} out of range 1..{N}")
            f[j] = mat
        subs.append(SubsystemRules(
            index=i + 1, A=s["A"], B=s["B"], A_d=s.get("A_d", [np.zeros_like(np.asarray(a, float)) for a in s["A"]]),
            w=s["w"], f=f, membership=membership_from_dict(s.get("membership", {"kind": "cos2"})),
            C_out=s.get("C_out")))
    gamma = d.get("gamma", [1.0] * N)
    gamma = [gamma] * N if np.isscalar(gamma) else gamma
    u_max = d.get("u_max", [[1e6] * s.m for s in subs])
    u_max = [[u_max] * s.m for s in subs] if np.isscalar(u_max) else u_max
    return LargeScaleSystem(subs, h=d.get("h", 1), gamma=gamma, u_max=u_max)


def _read_json(path) -> dict:
    text = Path(path).read_text()
    if not text.strip():
        raise DimensionMismatch(f"{path} is empty")
    return json.loads(text)


def _write_json(path, data) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def load_system(path) -> LargeScaleSystem:
    return system_from_dict(_read_json(path))


def save_system(sys: LargeScaleSystem, path) -> Path:
    return _write_json(path, system_to_dict(sys))


def load_gains(path) -> GainSet:
    return GainSet.from_dict(_read_json(path))


def save_gains(gains: GainSet, path) -> Path:
    return _write_json(path, gains.to_dict())


def write_json(path, data) -> Path:
    return _write_json(path, data)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if np.isnan(v) else repr(v)


def write_trajectory_csv(traj, path) -> Path:
    """One row per ``(k, subsystem, index)``; ``u``/``d``/``stage_cost`` are blank at the final sample."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_HEADER)
        for k in range(traj.steps + 1):
            for i in range(traj.N):
                x = traj.states(i)[k]
                u = traj.u[i][k] if k < traj.steps else np.array([])
                d = traj.d[i][k] if k < traj.steps else np.array([])
                cost = traj.stage_cost[i][k] if k < traj.steps else None
                m_i = traj.u[i].shape[1] if k < traj.steps else 0
                c_i = traj.d[i].shape[1] if k < traj.steps else 0
                for r in range(max(len(x), m_i, c_i)):
                    w.writerow([
                        k, i + 1,
                        r if r < len(x) else "", _fmt(x[r]) if r < len(x) else "",
                        r if r < m_i else "", _fmt(u[r]) if r < m_i else "",
                        r if r < c_i else "", _fmt(d[r]) if r < c_i else "",
                        _fmt(traj.V[i][k]), _fmt(traj.Vbar[i][k]), _fmt(cost), _fmt(traj.in_rpi[i][k]),
                    ])
    return path


def config_hash(config: dict) -> str:
    canon = json.dumps(config, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canon.encode()).hexdigest()


def write_manifest(out_dir, command: str, config: dict, seed: int | None, outputs: list) -> Path:
    manifest = {
        "command": command,
        "config": config,
        "config_sha256": config_hash(config),
        "seed": seed,
        "version": __version__,
        "numpy": np.__version__,
        "python": platform.python_version(),
        "outputs": [str(Path(p).name) for p in outputs],
    }
    return _write_json(Path(out_dir) / "manifest.json", manifest)
