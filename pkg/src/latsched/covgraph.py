"""Quantized covariance space and its per-method transition graph.

The filter covariance recursion maps each representative matrix to one
successor per method. Expanding that map until it closes (every successor is
itself within the admission tolerance of some representative) produces a
finite directed graph over which scheduling becomes a staged shortest-path
problem. Quantization is nearest-neighbor in the Frobenius norm; the achieved
coarseness (max distance from any mapped covariance to its assigned
representative) is measured a posteriori and reported on the graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dynamics import DiscretizedDynamics
from .errors import GraphExpansionError
from .estimator import riccati_step

FORMAT_VERSION = 1


def sample_region(n: int, b0: float, count: int, seed) -> np.ndarray:
    """Random symmetric PSD matrices with Frobenius norm uniform on (0, b0].

    Eigenvalues are drawn uniform on (0, 1), rotated by a random orthogonal
    basis (QR of a Gaussian matrix), and the result rescaled to the target
    norm. Deterministic given the seed.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if b0 <= 0:
        raise ValueError("b0 must be > 0")
    rng = np.random.default_rng(seed)
    out = np.empty((count, n, n))
    for i in range(count):
        eigvals = rng.uniform(0.0, 1.0, size=n)
        q, r = np.linalg.qr(rng.standard_normal((n, n)))
        q = q * np.sign(np.diag(r))
        P = (q * eigvals) @ q.T
        P = 0.5 * (P + P.T)
        norm = np.linalg.norm(P, "fro")
        target = rng.uniform(0.0, 1.0)
        # Uniform target norm on (0, b0]; resample the rare exact zero.
        while target == 0.0:
            target = rng.uniform(0.0, 1.0)
        out[i] = P * (target * b0 / norm)
    return out


@dataclass
class CovarianceGraph:
    """Closed transition graph over quantized covariance representatives.

    Attributes:
        reps: (Q, n, n) representative covariances.
        succ: (Q, D) successor node index for each (node, method) pair;
            method id rho maps to column rho - 1. Node ids are 0-based.
        delta: achieved quantization coarseness.
        b0: Frobenius bound of the initial sampling region.
        bound: max representative norm after expansion.
        policy: optional per-node first-decision table (1-based method ids).
        policy_meta: parameters the policy was computed for (tf, lam_alpha).
    """

    reps: np.ndarray
    succ: np.ndarray
    delta: float
    b0: float
    bound: float
    policy: np.ndarray | None = None
    policy_meta: dict | None = None

    def __post_init__(self):
        self.reps = np.ascontiguousarray(np.asarray(self.reps, dtype=float))
        self.succ = np.ascontiguousarray(np.asarray(self.succ, dtype=np.int64))
        self._flat = self.reps.reshape(self.reps.shape[0], -1)

    @property
    def size(self) -> int:
        return self.reps.shape[0]

    @property
    def n_methods(self) -> int:
        return self.succ.shape[1]

    def nearest(self, P: np.ndarray) -> tuple[int, float]:
        """Nearest representative by Frobenius distance; ties go to the lowest id."""
        if self.size == 0:
            raise ValueError("graph has no representatives")
        diff = self._flat - np.asarray(P, dtype=float).reshape(-1)
        d2 = np.einsum("ij,ij->i", diff, diff)
        idx = int(np.argmin(d2))
        return idx, float(np.sqrt(d2[idx]))

    def save(self, path) -> None:
        payload = {
            "format_version": FORMAT_VERSION,
            "n": int(self.reps.shape[1]),
            "delta": self.delta,
            "b0": self.b0,
            "bound": self.bound,
            "reps": [rep.reshape(-1).tolist() for rep in self.reps],
            "edges": [
                [int(q), int(col + 1), int(self.succ[q, col])]
                for q in range(self.size)
                for col in range(self.n_methods)
            ],
        }
        if self.policy is not None:
            payload["policy"] = [int(p) for p in self.policy]
            payload["policy_meta"] = self.policy_meta or {}
        with open(path, "w") as fh:
            json.dump(payload, fh)

    @classmethod
    def load(cls, path) -> "CovarianceGraph":
        with open(path) as fh:
            payload = json.load(fh)
        if payload.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported graph format {payload.get('format_version')}")
        n = payload["n"]
        reps = np.array(payload["reps"], dtype=float).reshape(-1, n, n)
        n_methods = max(edge[1] for edge in payload["edges"])
        succ = np.zeros((reps.shape[0], n_methods), dtype=np.int64)
        for q, rho, target in payload["edges"]:
            succ[q, rho - 1] = target
        policy = payload.get("policy")
        return cls(
            reps=reps,
            succ=succ,
            delta=payload["delta"],
            b0=payload["b0"],
            bound=payload["bound"],
            policy=None if policy is None else np.asarray(policy, dtype=np.int64),
            policy_meta=payload.get("policy_meta"),
        )


def quantize(P: np.ndarray, graph: CovarianceGraph) -> int:
    """Node id of the nearest representative."""
    return graph.nearest(P)[0]


def default_admit_tol(reps: np.ndarray) -> float:
    """Coarseness of the initial sample set: median nearest-neighbor distance.

    The median (rather than the max, which is driven by the single most
    isolated sample and barely shrinks with the sample count) decreases as the
    set grows, so denser initial sets yield finer expanded graphs. A single
    representative means the coarsest possible quantization (one cell covering
    everything), so its tolerance is infinite. With two or more, the result is
    floored at a small multiple of the representative scale so duplicated or
    fixed-point representatives map to themselves instead of spawning endless
    chains of nearly identical nodes.
    """
    reps = np.asarray(reps, dtype=float)
    count = reps.shape[0]
    flat = reps.reshape(count, -1)
    if count < 2:
        return np.inf
    floor = 1e-9 * (1.0 + float(np.linalg.norm(flat, axis=1).max(initial=0.0)))
    sq = np.einsum("ij,ij->i", flat, flat)
    nearest = np.empty(count)
    chunk = max(1, min(count, 4_000_000 // max(count, 1)))
    for start in range(0, count, chunk):
        stop = min(start + chunk, count)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * (flat[start:stop] @ flat.T)
        d2[np.arange(start, stop) - start, np.arange(start, stop)] = np.inf
        nearest[start:stop] = np.sqrt(np.clip(d2.min(axis=1), 0.0, None))
    return max(float(np.median(nearest)), floor)


def expand_graph(
    reps,
    methods,
    dyn: DiscretizedDynamics,
    admit_tol: float | None = None,
    b0: float | None = None,
    max_growth: int = 100,
) -> CovarianceGraph:
    """Close the per-method successor map, admitting new nodes as needed.

    For every node and method the filter covariance step (nominal R) is
    computed; if its nearest existing representative is farther than
    `admit_tol` the successor becomes a new node, otherwise the edge points at
    that representative. Aborts if the node count exceeds `max_growth` times
    the initial count, which a valid boundedness certificate rules out.
    """
    reps = np.asarray(reps, dtype=float)
    if reps.ndim != 3 or reps.shape[0] == 0:
        raise ValueError("reps must be a non-empty (Q, n, n) array")
    initial = reps.shape[0]
    n = reps.shape[1]
    if admit_tol is None:
        admit_tol = default_admit_tol(reps)
    if b0 is None:
        b0 = float(max(np.linalg.norm(rep, "fro") for rep in reps))

    cap = initial * max_growth
    store = np.zeros((max(initial * 2, 16), n * n))
    store[:initial] = reps.reshape(initial, -1)
    count = initial
    succ_rows: list[list[int]] = []
    achieved_delta = 0.0

    q = 0
    while q < count:
        row = []
        P = store[q].reshape(n, n)
        for method in methods:
            P_next = riccati_step(P, method, dyn)
            flat = P_next.reshape(-1)
            diff = store[:count] - flat
            d2 = np.einsum("ij,ij->i", diff, diff)
            j = int(np.argmin(d2))
            dist = float(np.sqrt(d2[j]))
            if dist > admit_tol:
                if count == cap:
                    raise GraphExpansionError(
                        f"expansion exceeded {max_growth}x the initial node count "
                        f"({cap}); check the model for unbounded covariance growth"
                    )
                if count == store.shape[0]:
                    store = np.vstack([store, np.zeros_like(store)])
                store[count] = flat
                row.append(count)
                count += 1
            else:
                row.append(j)
                achieved_delta = max(achieved_delta, dist)
        succ_rows.append(row)
        q += 1

    final = store[:count].reshape(count, n, n)
    bound = float(np.linalg.norm(final.reshape(count, -1), axis=1).max())
    return CovarianceGraph(
        reps=final,
        succ=np.asarray(succ_rows, dtype=np.int64),
        delta=achieved_delta,
        b0=b0,
        bound=bound,
    )
