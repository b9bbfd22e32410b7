import numpy as np
import pytest

from latsched import (
    CovarianceGraph,
    GraphExpansionError,
    expand_graph,
    quantize,
    riccati_step,
    sample_region,
    steady_state,
)
from latsched.covgraph import default_admit_tol


class TestSampleRegion:
    def test_single_sample_valid(self):
        P = sample_region(3, 2.0, 1, seed=0)[0]
        assert np.allclose(P, P.T)
        assert np.linalg.norm(P, "fro") <= 2.0
        assert np.linalg.eigvalsh(P).min() >= -1e-12

    def test_bulk_properties(self):
        reps = sample_region(4, 1.0, 1000, seed=5)
        norms = np.linalg.norm(reps.reshape(1000, -1), axis=1)
        assert norms.max() <= 1.0 + 1e-12
        assert norms.min() > 0.0
        eigs = np.linalg.eigvalsh(reps)
        assert eigs.min() >= -1e-12
        # Norm should be roughly uniform on (0, 1]: mean near 0.5.
        assert 0.4 < norms.mean() < 0.6

    def test_deterministic_given_seed(self):
        a = sample_region(4, 1.0, 10, seed=42)
        b = sample_region(4, 1.0, 10, seed=42)
        assert np.array_equal(a, b)

    def test_rejects_bad_args(self):
        with pytest.raises(ValueError):
            sample_region(3, 1.0, 0, seed=0)
        with pytest.raises(ValueError):
            sample_region(3, -1.0, 5, seed=0)


class TestQuantize:
    def test_representative_maps_to_itself(self, bench):
        _, methods, dyn = bench
        reps = sample_region(4, 1.0, 20, seed=1)
        graph = expand_graph(reps, methods, dyn)
        for q in (0, 7, 19):
            assert quantize(graph.reps[q], graph) == q

    def test_tie_breaks_to_lowest_id(self):
        reps = np.zeros((8, 2, 2))
        for i in range(8):
            reps[i] = np.eye(2) * (i + 1)
        # Equidistant between reps 2 and 3 (diagonals 3 and 4).
        graph = CovarianceGraph(reps=reps, succ=np.zeros((8, 1), dtype=int),
                                delta=0.0, b0=10.0, bound=10.0)
        probe = np.eye(2) * 3.5
        assert quantize(probe, graph) == 2

    def test_matches_linear_scan(self, bench):
        _, methods, dyn = bench
        reps = sample_region(4, 1.0, 500, seed=3)
        graph = expand_graph(reps, methods, dyn)
        rng = np.random.default_rng(4)
        for _ in range(25):
            P = sample_region(4, 1.5, 1, rng)[0]
            dists = [np.linalg.norm(P - rep, "fro") for rep in graph.reps]
            assert quantize(P, graph) == int(np.argmin(dists))


class TestExpandGraph:
    def test_closure(self, bench):
        _, methods, dyn = bench
        graph = expand_graph(sample_region(4, 1.0, 30, seed=9), methods, dyn)
        assert graph.succ.shape == (graph.size, 2)
        assert graph.succ.min() >= 0
        assert graph.succ.max() < graph.size

    def test_riccati_fixed_point_self_loop(self, bench):
        _, methods, dyn = bench
        only = [methods[0]]
        P_star, _ = steady_state(only[0], dyn)
        graph = expand_graph(P_star[None, :, :], only, dyn)
        assert graph.size == 1
        assert graph.succ[0, 0] == 0

    def test_empty_methods_returns_input(self, bench):
        _, _, dyn = bench
        reps = sample_region(4, 1.0, 5, seed=2)
        graph = expand_graph(reps, [], dyn)
        assert graph.size == 5
        assert graph.succ.shape == (5, 0)

    def test_achieved_delta_definition(self, bench):
        _, methods, dyn = bench
        reps = sample_region(4, 1.0, 40, seed=11)
        graph = expand_graph(reps, methods, dyn)
        worst = 0.0
        for q in range(graph.size):
            for col, method in enumerate(methods):
                target = graph.succ[q, col]
                P_next = riccati_step(graph.reps[q], method, dyn)
                dist = np.linalg.norm(P_next - graph.reps[target], "fro")
                if not np.allclose(P_next, graph.reps[target], atol=1e-12):
                    worst = max(worst, dist)
        assert np.isclose(graph.delta, worst, rtol=1e-9)

    def test_delta_shrinks_with_count(self, bench):
        _, methods, dyn = bench
        deltas = {count: [] for count in (50, 500)}
        for seed in range(10):
            for count in deltas:
                reps = sample_region(4, 1.0, count, seed=seed)
                deltas[count].append(expand_graph(reps, methods, dyn).delta)
        assert np.median(deltas[500]) <= np.median(deltas[50])

    def test_growth_guard(self, bench):
        _, methods, dyn = bench
        reps = sample_region(4, 1.0, 2, seed=0)
        with pytest.raises(GraphExpansionError):
            expand_graph(reps, methods, dyn, admit_tol=1e-15, max_growth=2)

    def test_deterministic(self, bench):
        _, methods, dyn = bench
        reps = sample_region(4, 1.0, 25, seed=6)
        g1 = expand_graph(reps, methods, dyn)
        g2 = expand_graph(reps, methods, dyn)
        assert np.array_equal(g1.reps, g2.reps)
        assert np.array_equal(g1.succ, g2.succ)
        assert g1.delta == g2.delta

    def test_expansion_stays_inside_certified_bound(self, bench):
        from latsched import bound_bs, synthesize_certificate

        model, methods, dyn = bench
        cert = synthesize_certificate(model, methods, dyn, gamma=0.98)
        assert cert is not None
        bs = bound_bs(cert, 1.0, methods, dyn)
        for seed in range(3):
            graph = expand_graph(sample_region(4, 1.0, 60, seed=seed),
                                 methods, dyn, b0=1.0)
            assert graph.bound <= bs


class TestAdmitTol:
    def test_single_rep_is_coarsest(self):
        assert default_admit_tol(np.eye(3)[None, :, :]) == np.inf

    def test_matches_pairwise_scan(self):
        rng = np.random.default_rng(8)
        reps = sample_region(3, 1.0, 30, rng)
        flat = reps.reshape(30, -1)
        nn = [
            min(np.linalg.norm(flat[i] - flat[j]) for j in range(30) if j != i)
            for i in range(30)
        ]
        assert np.isclose(default_admit_tol(reps), np.median(nn), rtol=1e-12)


class TestSerialization:
    def test_round_trip(self, bench, tmp_path):
        _, methods, dyn = bench
        graph = expand_graph(sample_region(4, 1.0, 20, seed=13), methods, dyn)
        graph.policy = np.ones(graph.size, dtype=np.int64)
        graph.policy_meta = {"tf": 1.0, "lam_alpha": 5.0}
        path = tmp_path / "graph.json"
        graph.save(path)
        loaded = CovarianceGraph.load(path)
        assert np.array_equal(loaded.reps, graph.reps)
        assert np.array_equal(loaded.succ, graph.succ)
        assert loaded.delta == graph.delta
        assert loaded.b0 == graph.b0
        assert loaded.bound == graph.bound
        assert np.array_equal(loaded.policy, graph.policy)
        assert loaded.policy_meta == graph.policy_meta

    def test_version_check(self, bench, tmp_path):
        import json

        _, methods, dyn = bench
        graph = expand_graph(sample_region(4, 1.0, 3, seed=1), methods, dyn)
        path = tmp_path / "graph.json"
        graph.save(path)
        payload = json.loads(path.read_text())
        payload["format_version"] = 99
        path.write_text(json.dumps(payload))
        with pytest.raises(ValueError):
            CovarianceGraph.load(path)
