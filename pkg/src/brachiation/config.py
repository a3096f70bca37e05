"""Flat key = value experiment configuration.

Keys are namespaced (robot.*, colloc.*, mpc.*, sim.*, obstacle.N.*, disturb.*,
sweep.*). Unknown keys are errors; '#' starts a comment. Values are scalars,
comma-separated vectors, or bare words (integrator names).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .collision import Obstacle
from .model import NQ, NU, RobotParams
from .mpc import MpcConfig
from .harness import (AVOID_OBSTACLE, AVOID_TARGET, IMPACT_MOMENTUM,
                      IMPACT_NORMAL, IMPACT_TIME, START_STATE, TRACK_TARGET,
                      SimConfig, swing_time, START_POINT)
from .trajopt import CollocConfig


class ConfigError(ValueError):
    pass


_ROBOT_VEC = {"l": "L", "m": "mass", "i": "inertia", "lc": "lc"}
_ROBOT_BOUNDS = {"tau_min": 3, "tau_max": 3, "q_min": 4, "q_max": 4,
                 "qd_min": 4, "qd_max": 4}


def _parse_value(text: str):
    parts = [p.strip() for p in text.split(",")]
    try:
        vals = [float(p) for p in parts]
    except ValueError:
        return text.strip()
    return vals[0] if len(vals) == 1 else np.array(vals)


def parse_file(path) -> dict:
    """Read a flat key = value file into an ordered dict of parsed values."""
    out: dict = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, val = line.split("=", 1)
            key = key.strip()
            if not key:
                raise ConfigError(f"{path}:{lineno}: empty key")
            if key in out:
                raise ConfigError(f"{path}:{lineno}: duplicate key {key!r}")
            out[key] = _parse_value(val)
    return out


@dataclass
class ExperimentSetup:
    """Everything a CLI run needs, assembled from defaults plus a config file."""

    robot: RobotParams = field(default_factory=RobotParams)
    mpc: MpcConfig = field(default_factory=MpcConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    obstacles: list = field(default_factory=list)
    colloc_overrides: dict = field(default_factory=dict)
    disturb_time: float = IMPACT_TIME
    disturb_momentum: float = IMPACT_MOMENTUM
    disturb_normal: np.ndarray = field(default_factory=lambda: IMPACT_NORMAL.copy())
    sweep_r2: np.ndarray = field(default_factory=lambda: np.array([0.2, 0.5, 0.8]))
    sweep_T: np.ndarray = field(default_factory=lambda: np.array([0.5, 0.8, 1.1, 1.4, 1.7]))
    sweep_parallel: bool = True

    def colloc_config(self, default_target=TRACK_TARGET,
                      use_obstacles: bool = True,
                      paper_literal_deft: bool = False) -> CollocConfig:
        ov = dict(self.colloc_overrides)
        target = np.asarray(ov.pop("target", default_target), dtype=float)
        x_start = ov.pop("x_start", START_STATE.copy())
        start_point = ov.pop("start_point", START_POINT)
        T = ov.pop("T", None)
        if T is None:
            T = swing_time(start_point, target, g=self.robot.g)
        obstacles = tuple(self.obstacles) if use_obstacles else ()
        return CollocConfig(T=float(T), x_start=np.asarray(x_start, dtype=float),
                            ee_target=target, obstacles=obstacles,
                            paper_literal_deft=paper_literal_deft, **ov)


def _vector(val, n, key) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(val, dtype=float))
    if arr.shape != (n,):
        raise ConfigError(f"{key}: expected {n} comma-separated values")
    return arr


def _weight_matrix(val, n, key) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(val, dtype=float))
    if arr.shape == (1,):
        return float(arr[0]) * np.eye(n)
    if arr.shape == (n,):
        return np.diag(arr)
    raise ConfigError(f"{key}: expected a scalar or {n} diagonal entries")


def build_setup(entries: dict) -> ExperimentSetup:
    """Validate parsed entries and assemble an ExperimentSetup."""
    setup = ExperimentSetup()
    robot_kw: dict = {}
    obstacles: dict[int, dict] = {}
    mpc_kw: dict = {}
    sim_kw: dict = {}

    for key, val in entries.items():
        parts = key.split(".")
        ns = parts[0]
        if ns == "robot" and len(parts) == 2:
            name = parts[1].lower()
            if name == "g":
                robot_kw["g"] = float(val)
                continue
            if name in _ROBOT_BOUNDS:
                robot_kw[name] = _vector(val, _ROBOT_BOUNDS[name], key)
                continue
            # per-link scalars: L1..L4, m1..m4, I1..I4, lc1..lc4
            for prefix, attr in _ROBOT_VEC.items():
                if name.startswith(prefix) and name[len(prefix):].isdigit():
                    idx = int(name[len(prefix):])
                    if not 1 <= idx <= NQ:
                        raise ConfigError(f"{key}: link index out of range")
                    robot_kw.setdefault(attr, {})[idx - 1] = float(val)
                    break
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "colloc" and len(parts) == 2:
            name = parts[1]
            ov = setup.colloc_overrides
            if name == "T":
                ov["T"] = float(val)
            elif name == "N":
                ov["N"] = int(val)
            elif name == "Q1":
                ov["Q1"] = _weight_matrix(val, NQ, key)
            elif name == "R1":
                ov["R1"] = _weight_matrix(val, NU, key)
            elif name in ("d_min_self", "capsule_radius", "obstacle_margin"):
                ov[name] = float(val)
            elif name == "self_collision":
                ov["self_collision"] = bool(int(val))
            elif name == "start_q":
                q = _vector(val, NQ, key)
                x = ov.get("x_start", START_STATE.copy())
                ov["x_start"] = np.concatenate([q, x[NQ:]])
            elif name == "start_qd":
                qd = _vector(val, NQ, key)
                x = ov.get("x_start", START_STATE.copy())
                ov["x_start"] = np.concatenate([x[:NQ], qd])
            elif name == "target":
                ov["target"] = _vector(val, 2, key)
            elif name == "start_point":
                ov["start_point"] = _vector(val, 2, key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "mpc" and len(parts) == 2:
            name = parts[1]
            if name == "horizon":
                mpc_kw["N_h"] = int(val)
            elif name == "dt_pred":
                mpc_kw["dt_pred"] = float(val)
            elif name == "Q2":
                mpc_kw["Q2"] = _weight_matrix(val, 2 * NQ, key)
            elif name == "W":
                mpc_kw["W"] = _weight_matrix(val, 2, key)
            elif name == "R2":
                mpc_kw["R2"] = _weight_matrix(val, NU, key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "sim" and len(parts) == 2:
            name = parts[1]
            if name == "dt":
                sim_kw["dt_sim"] = float(val)
            elif name == "integrator":
                sim_kw["integrator"] = str(val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "obstacle" and len(parts) == 3 and parts[1].isdigit():
            slot = obstacles.setdefault(int(parts[1]), {})
            if parts[2] == "center":
                slot["center"] = _vector(val, 2, key)
            elif parts[2] == "radius":
                slot["radius"] = float(val)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "disturb" and len(parts) == 2:
            if parts[1] == "time":
                setup.disturb_time = float(val)
            elif parts[1] == "momentum":
                setup.disturb_momentum = float(val)
            elif parts[1] == "normal":
                setup.disturb_normal = _vector(val, 2, key)
            else:
                raise ConfigError(f"unknown config key {key!r}")
        elif ns == "sweep" and len(parts) == 2:
            if parts[1] == "r2":
                setup.sweep_r2 = np.atleast_1d(np.asarray(val, dtype=float))
            elif parts[1] == "T":
                setup.sweep_T = np.atleast_1d(np.asarray(val, dtype=float))
            elif parts[1] == "parallel":
                setup.sweep_parallel = bool(int(val))
            else:
                raise ConfigError(f"unknown config key {key!r}")
        else:
            raise ConfigError(f"unknown config key {key!r}")

    defaults = RobotParams()
    final_kw = {}
    for attr, v in robot_kw.items():
        if isinstance(v, dict):
            vec = getattr(defaults, attr).copy()
            for i, x in v.items():
                vec[i] = x
            final_kw[attr] = vec
        else:
            final_kw[attr] = v
    if final_kw:
        setup.robot = replace(defaults, **final_kw)
    if mpc_kw:
        setup.mpc = MpcConfig(**mpc_kw)
    if sim_kw:
        setup.sim = SimConfig(**sim_kw)
    for idx in sorted(obstacles):
        slot = obstacles[idx]
        if "center" not in slot or "radius" not in slot:
            raise ConfigError(f"obstacle.{idx} needs both center and radius")
        setup.obstacles.append(Obstacle(c=slot["center"], r=slot["radius"]))
    return setup


def load_setup(path=None) -> ExperimentSetup:
    if path is None:
        return ExperimentSetup()
    return build_setup(parse_file(path))
