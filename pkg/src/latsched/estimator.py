"""Latency-aware Kalman prediction and correction.

The filter runs on epoch times tau_k. A measurement captured at tau_k with
method rho becomes available at tau_k + latency(rho), so one `correct` call
performs the combined predict-and-update that advances the belief from tau_k
to tau_{k+1} in a single step:

    L     = Ad P C' (C P C' + R)^-1
    x[k+1] = Ad x[k] + L (z[k] - C x[k])
    P[k+1] = (Ad - L C) P (Ad - L C)' + L R L' + Wd          (Joseph form)

`switched_step` is the same covariance recursion with a fixed, externally
supplied gain per method; it exists to validate the boundedness certificate
empirically (the optimal filter can never beat it in trace).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .dynamics import DiscretizedDynamics, PerceptionMethod
from .errors import SingularUpdateError

_COND_LIMIT = 1e12


def _clean_covariance(P: np.ndarray, name: str = "covariance") -> np.ndarray:
    """Symmetrize and clamp tiny negative eigenvalues; reject real negativity."""
    P = np.asarray(P, dtype=float)
    P = 0.5 * (P + P.T)
    eigvals, eigvecs = np.linalg.eigh(P)
    scale = max(np.linalg.norm(P, "fro"), 1e-300)
    if eigvals.min() < -1e-10 * scale:
        raise ValueError(
            f"{name} has eigenvalue {eigvals.min():.3e}; beyond round-off negativity"
        )
    if eigvals.min() < 0.0:
        eigvals = np.clip(eigvals, 0.0, None)
        P = (eigvecs * eigvals) @ eigvecs.T
        P = 0.5 * (P + P.T)
    return P


@dataclass(frozen=True)
class BeliefState:
    """Time-stamped estimate pair (t, xhat, Phat)."""

    t: float
    xhat: np.ndarray
    Phat: np.ndarray

    def __post_init__(self):
        xhat = np.asarray(self.xhat, dtype=float).reshape(-1)
        Phat = _clean_covariance(self.Phat, "Phat")
        xhat.setflags(write=False)
        Phat.setflags(write=False)
        object.__setattr__(self, "xhat", xhat)
        object.__setattr__(self, "Phat", Phat)


@dataclass(frozen=True)
class Measurement:
    """One processed measurement.

    `produced_at` is when the detection became available (capture time plus
    the method latency); `R_actual` optionally carries an online covariance
    estimate that overrides the method's nominal R in the correction.
    """

    k: int
    z: np.ndarray
    produced_at: float
    method_id: int
    R_actual: np.ndarray | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=float).reshape(-1)
        z.setflags(write=False)
        object.__setattr__(self, "z", z)


def predict(belief: BeliefState, elapsed: float, dyn: DiscretizedDynamics) -> BeliefState:
    """Propagate the belief forward by `elapsed` seconds with no measurement."""
    if elapsed < 0:
        raise ValueError("elapsed must be >= 0")
    if elapsed == 0.0:
        return belief
    Ad, Wd = dyn.pair(elapsed)
    xhat = Ad @ belief.xhat
    Phat = Ad @ belief.Phat @ Ad.T + Wd
    return BeliefState(belief.t + elapsed, xhat, Phat)


def _gain_and_next_cov(
    P: np.ndarray, Ad: np.ndarray, Wd: np.ndarray, C: np.ndarray, R: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    S = C @ P @ C.T + R
    S = 0.5 * (S + S.T)
    eig = np.linalg.eigvalsh(S)
    if eig[0] <= 0.0 or eig[-1] / eig[0] > _COND_LIMIT:
        raise SingularUpdateError(
            f"innovation covariance condition {eig[-1] / max(eig[0], 1e-300):.3e} exceeds limit"
        )
    chol = cho_factor(S, lower=True)
    # L = Ad P C' S^-1  computed without forming S^-1 explicitly.
    L = cho_solve(chol, C @ P @ Ad.T).T
    F = Ad - L @ C
    P_next = F @ P @ F.T + L @ R @ L.T + Wd
    return L, 0.5 * (P_next + P_next.T)


def riccati_step(
    P: np.ndarray,
    method: PerceptionMethod,
    dyn: DiscretizedDynamics,
    R: np.ndarray | None = None,
) -> np.ndarray:
    """Covariance-only filter step for one method (measurement-independent)."""
    Ad, Wd = dyn.step_pair(method.steps)
    R = method.R if R is None else R
    _, P_next = _gain_and_next_cov(P, Ad, Wd, dyn.model.C, R)
    return P_next


def correct(
    belief: BeliefState,
    meas: Measurement,
    method: PerceptionMethod,
    dyn: DiscretizedDynamics,
) -> BeliefState:
    """Combined predict-and-update over the method latency.

    `belief` must sit at the capture epoch of `meas`; the returned belief sits
    one latency later, with the measurement folded in.
    """
    Ad, Wd = dyn.step_pair(method.steps)
    C = dyn.model.C
    R = method.R if meas.R_actual is None else np.asarray(meas.R_actual, dtype=float)
    L, P_next = _gain_and_next_cov(belief.Phat, Ad, Wd, C, R)
    xhat = Ad @ belief.xhat + L @ (meas.z - C @ belief.xhat)
    return BeliefState(belief.t + method.latency(dyn.dt_s), xhat, P_next)


def switched_step(
    P: np.ndarray,
    method: PerceptionMethod,
    gains: dict,
    dyn: DiscretizedDynamics,
) -> np.ndarray:
    """Fixed-gain covariance recursion P -> Lam P Lam' + L R L' + Wd.

    `gains` maps method id to its fixed gain L; Lam = Ad - L C. Used to check
    the certificate-based bound against the optimal filter.
    """
    Ad, Wd = dyn.step_pair(method.steps)
    L = np.asarray(gains[method.id], dtype=float)
    Lam = Ad - L @ dyn.model.C
    P_next = Lam @ P @ Lam.T + L @ method.R @ L.T + Wd
    return 0.5 * (P_next + P_next.T)


def steady_state(
    method: PerceptionMethod,
    dyn: DiscretizedDynamics,
    tol: float = 1e-13,
    max_iter: int = 200000,
) -> tuple[np.ndarray, np.ndarray]:
    """Fixed point (P*, L*) of the single-method covariance recursion."""
    P = np.eye(dyn.model.n_x)
    Ad, Wd = dyn.step_pair(method.steps)
    C = dyn.model.C
    for _ in range(max_iter):
        L, P_next = _gain_and_next_cov(P, Ad, Wd, C, method.R)
        if np.linalg.norm(P_next - P, "fro") <= tol * max(1.0, np.linalg.norm(P, "fro")):
            return P_next, L
        P = P_next
    raise RuntimeError("steady-state covariance iteration did not converge")
