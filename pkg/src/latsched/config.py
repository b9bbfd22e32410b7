"""Scenario configuration: JSON schema, validation, and assembly.

One JSON file describes a complete scenario: the target model, the perception
method bank, the cost window, and optional graph / simulation / certificate /
experiment blocks. Method penalties may be given directly or derived from CPU
and attention weights as

    penalty = lambda_load * cpu * latency + lambda_att

Validation errors name the offending JSON path.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bounds import LyapunovCertificate
from .dynamics import ContinuousModel, PerceptionMethod, validate_methods
from .errors import ConfigError, InvalidModelError


def _require(block: dict, key: str, path: str):
    if key not in block:
        raise ConfigError(f"{path}.{key}: missing required field")
    return block[key]


def _number(value, path: str, positive: bool = False) -> float:
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise ConfigError(f"{path}: expected a number, got {type(value).__name__}")
    if positive and value <= 0:
        raise ConfigError(f"{path}: must be > 0")
    return float(value)


def _matrix(value, path: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected a nested array of numbers") from None
    if arr.ndim != 2:
        raise ConfigError(f"{path}: expected a 2-D matrix, got shape {arr.shape}")
    return arr


def _vector(value, path: str) -> np.ndarray:
    try:
        arr = np.array(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(f"{path}: expected an array of numbers") from None
    if arr.ndim != 1:
        raise ConfigError(f"{path}: expected a 1-D vector, got shape {arr.shape}")
    return arr


@dataclass
class GraphConfig:
    b0: float = 1.0
    count: int = 500
    seed: int = 0
    admit_tol: float | None = None


@dataclass
class SimConfig:
    dt: float = 1e-3
    horizon: float = 10.0
    occlusions: list = field(default_factory=list)
    true_R: dict = field(default_factory=dict)
    seed: int = 0
    runs: int = 1
    adaptive: bool = False
    window: int = 10


@dataclass
class ExperimentConfig:
    name: str = "moving-horizon"
    graph_sizes: list = field(default_factory=lambda: [50, 500, 5000])
    oracle: str = "exhaustive"
    oracle_samples: int = 10000
    schedule_steps: int = 100
    true_R_factor: float = 4.0


@dataclass
class ScenarioConfig:
    model: ContinuousModel
    methods: list
    tf: float
    lam_alpha: float
    graph: GraphConfig
    sim: SimConfig
    experiment: ExperimentConfig
    gamma: float = 0.98
    certificate: LyapunovCertificate | None = None


def parse_scenario(payload: dict) -> ScenarioConfig:
    if not isinstance(payload, dict):
        raise ConfigError("top level: expected a JSON object")

    mblock = _require(payload, "model", "")
    if not isinstance(mblock, dict):
        raise ConfigError("model: expected an object")
    dt_s = _number(_require(mblock, "dt_s", "model"), "model.dt_s", positive=True)
    try:
        model = ContinuousModel(
            A=_matrix(_require(mblock, "A", "model"), "model.A"),
            B=_matrix(_require(mblock, "B", "model"), "model.B"),
            W=_matrix(_require(mblock, "W", "model"), "model.W"),
            C=_matrix(_require(mblock, "C", "model"), "model.C"),
            x0=_vector(_require(mblock, "x0", "model"), "model.x0"),
            P0=_matrix(_require(mblock, "P0", "model"), "model.P0"),
            dt_s=dt_s,
        )
    except InvalidModelError as exc:
        raise ConfigError(f"model: {exc}") from exc

    raw_methods = _require(payload, "methods", "")
    if not isinstance(raw_methods, list) or not raw_methods:
        raise ConfigError("methods: expected a non-empty array")
    methods = []
    for i, entry in enumerate(raw_methods):
        path = f"methods[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError(f"{path}: expected an object")
        steps = _require(entry, "steps", path)
        if not isinstance(steps, int) or isinstance(steps, bool) or steps < 1:
            raise ConfigError(f"{path}.steps: expected a positive integer")
        R = _matrix(_require(entry, "R", path), f"{path}.R")
        if R.shape != (model.n_z, model.n_z):
            raise ConfigError(
                f"{path}.R: shape {R.shape} does not match measurement dimension {model.n_z}"
            )
        cpu = _number(_require(entry, "cpu", path), f"{path}.cpu")
        if "penalty" in entry:
            penalty = _number(entry["penalty"], f"{path}.penalty")
        else:
            load = _number(entry.get("lambda_load", 0.0), f"{path}.lambda_load")
            att = _number(entry.get("lambda_att", 0.0), f"{path}.lambda_att")
            penalty = load * cpu * steps * dt_s + att
        try:
            methods.append(
                PerceptionMethod(id=i + 1, steps=steps, R=R, cpu=cpu, penalty=penalty)
            )
        except InvalidModelError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
    validate_methods(methods)

    cblock = _require(payload, "cost", "")
    tf = _number(_require(cblock, "Tf", "cost"), "cost.Tf", positive=True)
    lam = _number(_require(cblock, "lambda_alpha", "cost"), "cost.lambda_alpha")
    if abs(tf / dt_s - round(tf / dt_s)) > 1e-6:
        raise ConfigError("cost.Tf: must be an integer multiple of model.dt_s")

    graph = GraphConfig()
    if "graph" in payload:
        g = payload["graph"]
        graph = GraphConfig(
            b0=_number(g.get("B0", graph.b0), "graph.B0", positive=True),
            count=int(_number(g.get("count", graph.count), "graph.count", positive=True)),
            seed=int(_number(g.get("seed", graph.seed), "graph.seed")),
            admit_tol=None if g.get("admit_tol") is None
            else _number(g["admit_tol"], "graph.admit_tol", positive=True),
        )

    sim = SimConfig()
    if "sim" in payload:
        s = payload["sim"]
        occl = s.get("occlusions", [])
        if not isinstance(occl, list) or any(
            not isinstance(w, list) or len(w) != 2 for w in occl
        ):
            raise ConfigError("sim.occlusions: expected an array of [start, stop] pairs")
        true_R = {}
        for key, mat in (s.get("true_R") or {}).items():
            try:
                mid = int(key)
            except ValueError:
                raise ConfigError(f"sim.true_R.{key}: keys must be method ids") from None
            if not any(m.id == mid for m in methods):
                raise ConfigError(f"sim.true_R.{key}: no such method id")
            R = _matrix(mat, f"sim.true_R.{key}")
            if R.shape != (model.n_z, model.n_z):
                raise ConfigError(f"sim.true_R.{key}: shape mismatch")
            true_R[mid] = R
        sim = SimConfig(
            dt=_number(s.get("dt", sim.dt), "sim.dt", positive=True),
            horizon=_number(s.get("horizon", sim.horizon), "sim.horizon", positive=True),
            occlusions=[(float(a), float(b)) for a, b in occl],
            true_R=true_R,
            seed=int(_number(s.get("seed", sim.seed), "sim.seed")),
            runs=int(_number(s.get("runs", sim.runs), "sim.runs", positive=True)),
            adaptive=bool(s.get("adaptive_R", sim.adaptive)),
            window=int(_number(s.get("window", sim.window), "sim.window", positive=True)),
        )
        if grid_mismatch(dt_s, sim.dt):
            raise ConfigError("sim.dt: must divide model.dt_s exactly")

    gamma = 0.98
    certificate = None
    if "certificate" in payload:
        cert = payload["certificate"]
        gamma = _number(cert.get("gamma", gamma), "certificate.gamma")
        if not (0.0 < gamma < 1.0):
            raise ConfigError("certificate.gamma: must lie strictly in (0, 1)")
        if "Omega" in cert or "Y" in cert:
            omega = _matrix(_require(cert, "Omega", "certificate"), "certificate.Omega")
            ys_raw = _require(cert, "Y", "certificate")
            if not isinstance(ys_raw, list) or len(ys_raw) != len(methods):
                raise ConfigError("certificate.Y: expected one matrix per method")
            ys = tuple(_matrix(y, f"certificate.Y[{i}]") for i, y in enumerate(ys_raw))
            if omega.shape != (model.n_x, model.n_x):
                raise ConfigError("certificate.Omega: shape mismatch with model")
            for i, y in enumerate(ys):
                if y.shape != (model.n_x, model.n_z):
                    raise ConfigError(f"certificate.Y[{i}]: shape mismatch with model")
            try:
                certificate = LyapunovCertificate(omega=omega, ys=ys, gamma=gamma)
            except ValueError as exc:
                raise ConfigError(f"certificate: {exc}") from exc

    experiment = ExperimentConfig()
    if "experiment" in payload:
        e = payload["experiment"]
        name = e.get("name", experiment.name)
        known = {"bound-validation", "cost-histogram", "moving-horizon", "adaptive-R"}
        if name not in known:
            raise ConfigError(f"experiment.name: expected one of {sorted(known)}")
        oracle = e.get("oracle", experiment.oracle)
        if oracle not in ("exhaustive", "random"):
            raise ConfigError("experiment.oracle: expected 'exhaustive' or 'random'")
        experiment = ExperimentConfig(
            name=name,
            graph_sizes=[int(v) for v in e.get("graph_sizes", experiment.graph_sizes)],
            oracle=oracle,
            oracle_samples=int(_number(
                e.get("oracle_samples", experiment.oracle_samples),
                "experiment.oracle_samples", positive=True)),
            schedule_steps=int(_number(
                e.get("schedule_steps", experiment.schedule_steps),
                "experiment.schedule_steps", positive=True)),
            true_R_factor=_number(
                e.get("true_R_factor", experiment.true_R_factor),
                "experiment.true_R_factor", positive=True),
        )

    return ScenarioConfig(
        model=model,
        methods=methods,
        tf=tf,
        lam_alpha=lam,
        graph=graph,
        sim=sim,
        experiment=experiment,
        gamma=gamma,
        certificate=certificate,
    )


def grid_mismatch(dt_s: float, dt: float) -> bool:
    ratio = dt_s / dt
    return abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1


def load_scenario(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_scenario(payload)
