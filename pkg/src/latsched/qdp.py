"""Approximate scheduling by dynamic programming over the covariance graph.

The window [0, Tf] is cut into alpha_max = Tf / dt_s stages. A graph edge
(q --rho--> q') taken at stage l lands at stage min(l + m_rho, alpha_max) and
costs

    (1/Tf) [ lam_alpha * r_rho + c(d) + tr(P_q @ M(d)) ],
    d = (min(l + m_rho, alpha_max) - l) * dt_s

so every window-covering arrival aggregates in the final stage column.
`qdp_matrices` runs the forward cost-to-arrive relaxation and `qdp` traces the
optimal schedule back from the best terminal cell. `backward_tables` runs the
dual cost-to-go pass, which yields the optimal first decision from *every*
node in one sweep; `precompute_policy` uses it to build the lookup table the
moving-horizon controller consults at run time.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covgraph import CovarianceGraph
from .dynamics import DiscretizedDynamics
from .errors import IncompleteScheduleError
from .exact import Schedule, window_steps


@dataclass
class QdpWorkspace:
    """Stage costs shared by every DP run on one (graph, methods, dyn) triple.

    cost_table[q, j-1] holds c(j dt_s) + tr(P_q @ M(j dt_s)) for j = 1..max m;
    the lam_alpha penalty and the 1/Tf scaling are applied per call.
    """

    graph: CovarianceGraph
    steps: np.ndarray
    penalties: np.ndarray
    cost_table: np.ndarray

    @property
    def n_methods(self) -> int:
        return self.steps.shape[0]


def make_workspace(graph: CovarianceGraph, methods, dyn: DiscretizedDynamics) -> QdpWorkspace:
    steps = np.array([m.steps for m in methods], dtype=np.int64)
    penalties = np.array([m.penalty for m in methods], dtype=float)
    max_steps = int(steps.max())
    flat = graph.reps.reshape(graph.size, -1)
    table = np.empty((graph.size, max_steps))
    for j in range(1, max_steps + 1):
        M, c = dyn.step_gram(j)
        table[:, j - 1] = flat @ M.reshape(-1) + c
    return QdpWorkspace(graph=graph, steps=steps, penalties=penalties, cost_table=table)


@dataclass
class DPTables:
    """Forward DP state: best cost-to-arrive per (node, stage) with trace-back.

    MJ[q, l] is the best cost from the start cell to node q at stage l (inf if
    unreached). MQ / MP / MS record the predecessor node, the 1-based method id
    on the arriving edge, and the actual source stage; -1 marks unset cells.
    """

    MQ: np.ndarray
    MP: np.ndarray
    MJ: np.ndarray
    MS: np.ndarray
    q0: int
    alpha_max: int
    relaxations: int


def qdp_matrices(
    q0: int,
    tf: float,
    lam_alpha: float,
    graph: CovarianceGraph,
    methods,
    dyn: DiscretizedDynamics,
    workspace: QdpWorkspace | None = None,
) -> DPTables:
    """Forward relaxation over all stages, nodes, and methods.

    Exactly alpha_max * Q * D edge relaxations are performed. Ties prefer the
    lower method id (methods are swept in ascending order with strict
    improvement), then the lowest predecessor node.
    """
    ws = workspace if workspace is not None else make_workspace(graph, methods, dyn)
    alpha_max = window_steps(tf, dyn.dt_s)
    Q = graph.size
    if not (0 <= q0 < Q):
        raise ValueError(f"q0={q0} outside 0..{Q - 1}")

    MJ = np.full((Q, alpha_max + 1), np.inf)
    MQ = np.full((Q, alpha_max + 1), -1, dtype=np.int64)
    MP = np.full((Q, alpha_max + 1), -1, dtype=np.int64)
    MS = np.full((Q, alpha_max + 1), -1, dtype=np.int64)
    MJ[q0, 0] = 0.0
    node_ids = np.arange(Q)
    relaxations = 0

    for stage in range(alpha_max):
        src = MJ[:, stage]
        relaxations += Q * ws.n_methods
        if not np.any(np.isfinite(src)):
            continue
        for col in range(ws.n_methods):
            m = int(ws.steps[col])
            land = min(stage + m, alpha_max)
            d_steps = land - stage
            cand = src + (lam_alpha * ws.penalties[col] + ws.cost_table[:, d_steps - 1]) / tf
            targets = ws.graph.succ[:, col]
            best = np.full(Q, np.inf)
            np.minimum.at(best, targets, cand)
            improved = best < MJ[:, land]
            if not improved.any():
                continue
            # Lowest source node among those achieving the per-target minimum.
            winner = cand <= best[targets]
            pick = np.where(winner, node_ids, Q)
            origin = np.full(Q, Q, dtype=np.int64)
            np.minimum.at(origin, targets, pick)
            MJ[improved, land] = best[improved]
            MQ[improved, land] = origin[improved]
            MP[improved, land] = col + 1
            MS[improved, land] = stage

    return DPTables(MQ=MQ, MP=MP, MJ=MJ, MS=MS, q0=q0, alpha_max=alpha_max,
                    relaxations=relaxations)


def qdp(
    q0: int,
    tf: float,
    lam_alpha: float,
    graph: CovarianceGraph,
    methods,
    dyn: DiscretizedDynamics,
    workspace: QdpWorkspace | None = None,
) -> tuple[Schedule, float]:
    """Best window-covering schedule from node q0 and its graph-trajectory cost."""
    tables = qdp_matrices(q0, tf, lam_alpha, graph, methods, dyn, workspace)
    final = tables.MJ[:, tables.alpha_max]
    q = int(np.argmin(final))
    cost = float(final[q])
    if not np.isfinite(cost):
        raise IncompleteScheduleError(
            "no window-covering path reached the terminal stage; graph closure is broken"
        )
    seq: list[int] = []
    stage = tables.alpha_max
    while stage > 0:
        rho = int(tables.MP[q, stage])
        src_stage = int(tables.MS[q, stage])
        src_node = int(tables.MQ[q, stage])
        if rho < 0:
            raise IncompleteScheduleError("trace-back hit an unset cell; tables corrupt")
        seq.append(rho)
        q, stage = src_node, src_stage
    seq.reverse()
    return Schedule(tuple(seq)), cost


def evaluate_on_graph(
    graph: CovarianceGraph,
    q0: int,
    schedule: Schedule,
    tf: float,
    lam_alpha: float,
    methods,
    dyn: DiscretizedDynamics,
) -> float:
    """Cost of a schedule along the quantized trajectory (nodes, not true covariances)."""
    tf_steps = window_steps(tf, dyn.dt_s)
    if not schedule.minimally_covers(tf_steps, methods):
        raise IncompleteScheduleError(
            f"schedule {tuple(schedule)} does not minimally cover {tf_steps} steps"
        )
    by_id = {m.id: m for m in methods}
    q = q0
    elapsed = 0
    total = 0.0
    for pid in schedule:
        method = by_id[pid]
        d_steps = min(method.steps, tf_steps - elapsed)
        M, c = dyn.step_gram(d_steps)
        total += lam_alpha * method.penalty + c + float((graph.reps[q] * M).sum())
        elapsed += method.steps
        q = int(graph.succ[q, pid - 1])
    return total / tf


def backward_tables(
    tf: float,
    lam_alpha: float,
    graph: CovarianceGraph,
    methods,
    dyn: DiscretizedDynamics,
    workspace: QdpWorkspace | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """Cost-to-go V[q, l] and optimal decision PI[q, l] for every cell at once.

    V[q, 0] equals the qdp cost from q; PI[:, 0] is the policy table. Ties
    prefer the lower method id.
    """
    ws = workspace if workspace is not None else make_workspace(graph, methods, dyn)
    alpha_max = window_steps(tf, dyn.dt_s)
    Q = graph.size
    V = np.zeros((Q, alpha_max + 1))
    PI = np.zeros((Q, alpha_max + 1), dtype=np.int64)
    for stage in range(alpha_max - 1, -1, -1):
        best = None
        best_rho = None
        for col in range(ws.n_methods):
            m = int(ws.steps[col])
            land = min(stage + m, alpha_max)
            d_steps = land - stage
            cand = (lam_alpha * ws.penalties[col] + ws.cost_table[:, d_steps - 1]) / tf
            cand = cand + V[ws.graph.succ[:, col], land]
            if best is None:
                best = cand
                best_rho = np.full(Q, col + 1, dtype=np.int64)
            else:
                take = cand < best
                best = np.where(take, cand, best)
                best_rho[take] = col + 1
        V[:, stage] = best
        PI[:, stage] = best_rho
    return V, PI


def precompute_policy(
    graph: CovarianceGraph,
    tf: float,
    lam_alpha: float,
    methods,
    dyn: DiscretizedDynamics,
) -> np.ndarray:
    """First optimal decision for every node, as a (Q,) array of 1-based ids.

    One backward sweep costs the same as a single qdp call and covers all
    start nodes; entry q matches the first element of qdp(q, ...) whenever the
    optimum from q is unique.
    """
    _, PI = backward_tables(tf, lam_alpha, graph, methods, dyn)
    return PI[:, 0].copy()


def attach_policy(
    graph: CovarianceGraph,
    tf: float,
    lam_alpha: float,
    methods,
    dyn: DiscretizedDynamics,
) -> CovarianceGraph:
    """Store the policy table (and its parameters) on the graph in place."""
    graph.policy = precompute_policy(graph, tf, lam_alpha, methods, dyn)
    graph.policy_meta = {"tf": tf, "lam_alpha": lam_alpha}
    return graph
