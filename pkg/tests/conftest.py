import numpy as np
import pytest

from latsched import ContinuousModel, PerceptionMethod, build_dynamics

DT_S = 1.0 / 30.0


def benchmark_model(**overrides):
    """Planar double-integrator target with position detections."""
    params = dict(
        A=[[0, 1, 0, 0], [0, 0, 0, 0], [0, 0, 0, 1], [0, 0, 0, 0]],
        B=[[0, 0], [1, 0], [0, 0], [0, 1]],
        W=np.diag([0.5, 0.5]),
        C=[[1, 0, 0, 0], [0, 0, 1, 0]],
        x0=np.zeros(4),
        P0=4 * np.eye(4),
        dt_s=DT_S,
    )
    params.update(overrides)
    return ContinuousModel(**params)


def benchmark_methods():
    """Fast/cheap vs slow/accurate detector pair."""
    return [
        PerceptionMethod(id=1, steps=3, R=np.diag([0.5, 0.5]), cpu=0.5,
                         penalty=0.5 * 3 * DT_S),
        PerceptionMethod(id=2, steps=9, R=np.diag([0.05, 0.05]), cpu=0.8,
                         penalty=0.8 * 9 * DT_S),
    ]


@pytest.fixture(scope="session")
def bench():
    model = benchmark_model()
    methods = benchmark_methods()
    dyn = build_dynamics(model, methods)
    return model, methods, dyn


def scalar_setup(ad: float = 1.0, r: float = 1.0, w: float = 0.0, dt_s: float = 1.0):
    """1-D model whose one-step transition is exactly `ad`."""
    a = float(np.log(ad)) if ad > 0 else 0.0
    model = ContinuousModel(
        A=[[a]], B=[[1.0]], W=[[w]], C=[[1.0]], x0=[0.0], P0=[[1.0]], dt_s=dt_s,
    )
    method = PerceptionMethod(id=1, steps=1, R=[[r]], cpu=0.5, penalty=0.0)
    dyn = build_dynamics(model, [method])
    return model, method, dyn


def random_spd(rng, n: int, scale: float = 1.0) -> np.ndarray:
    mat = rng.standard_normal((n, n))
    spd = mat @ mat.T + 0.1 * np.eye(n)
    return spd * (scale / np.linalg.norm(spd, "fro"))
