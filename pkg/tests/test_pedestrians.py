import numpy as np
import pytest

from urbanmpc import (PathGraph, PedestrianState, PredictorConfig,
                      assign_references, predict_all, propagate)


@pytest.fixture
def cfg():
    return PredictorConfig(horizon=40)


@pytest.fixture
def straight_graph():
    # one long sidewalk along +x
    return PathGraph(nodes=[[0.0, 0.0], [60.0, 0.0]], edges=[(0, 1)])


@pytest.fixture
def fork_graph():
    # sidewalk that splits into a continuing sidewalk and a crosswalk
    nodes = [[0.0, 0.0], [10.0, 0.0], [40.0, 0.0], [10.0, -12.0]]
    return PathGraph(nodes=nodes, edges=[(0, 1), (1, 2), (1, 3)])


class TestAssignReferences:
    def test_single_route_no_branch(self, straight_graph, cfg):
        meas = PedestrianState(px=5.0, py=0.3, speed=1.4, heading=0.0)
        routes = assign_references(meas, straight_graph, cfg)
        assert len(routes) == 1
        assert routes[0][1] == pytest.approx(1.0)

    def test_fork_splits_even(self, fork_graph):
        cfg = PredictorConfig(horizon=100)   # reach 12 m passes the fork at 10 m
        meas = PedestrianState(px=2.0, py=0.1, speed=1.4, heading=0.0)
        routes = assign_references(meas, fork_graph, cfg)
        assert len(routes) == 2
        assert [w for _, w in routes] == pytest.approx([0.5, 0.5])

    def test_gating_rejects_far_measurement(self, straight_graph, cfg):
        meas = PedestrianState(px=5.0, py=50.0, speed=1.4, heading=0.0)
        assert assign_references(meas, straight_graph, cfg) == []


class TestPropagate:
    def test_noiseless_on_route_advances_exactly(self, straight_graph):
        cfg = PredictorConfig(horizon=30, nominal_speed=1.4,
                              process_noise=(0.0, 0.0),
                              initial_std=(0.0, 0.0, 0.0, 0.0))
        meas = PedestrianState(px=5.0, py=0.0, speed=1.4, heading=0.0)
        routes = assign_references(meas, straight_graph, cfg)
        pred = propagate(meas, routes[0][0], cfg)
        for k in range(31):
            assert pred.positions[k][0] == pytest.approx(5.0 + 1.4 * cfg.dt * k,
                                                         abs=1e-9)
            assert pred.positions[k][1] == pytest.approx(0.0, abs=1e-12)
        assert np.all(pred.lam_a < 1e-12)
        assert np.all(pred.lam_b < 1e-12)

    def test_alpha_aligned_with_route_and_axes_ordered(self, straight_graph):
        cfg = PredictorConfig(horizon=60, process_noise=(0.4, 0.2),
                              initial_std=(0.05, 0.05, 0.05, 0.05))
        meas = PedestrianState(px=1.0, py=0.0, speed=1.4, heading=0.0)
        pred = propagate(meas, [[0.0, 0.0], [60.0, 0.0]], cfg)
        # oracle: eigendecomposition of the propagated covariance
        for k in (20, 40, 60):
            w, V = np.linalg.eigh(pred.cov[k])
            assert pred.lam_a[k] == pytest.approx(
                cfg.confidence_scale * np.sqrt(w[1]), rel=1e-9)
            assert pred.lam_b[k] == pytest.approx(
                cfg.confidence_scale * np.sqrt(w[0]), rel=1e-9)
            assert pred.lam_a[k] >= pred.lam_b[k]
        # along-track (x) growth dominates on a straight route: major axis
        # aligned with the route direction
        assert abs(np.cos(pred.alpha[60])) > 0.95

    def test_lateral_offset_contracts(self, straight_graph):
        cfg = PredictorConfig(horizon=100, process_noise=(0.0, 0.0))
        meas = PedestrianState(px=5.0, py=1.0, speed=1.4, heading=0.0)
        pred = propagate(meas, [[0.0, 0.0], [60.0, 0.0]], cfg)
        lateral = np.abs(pred.positions[:, 1])
        assert np.all(np.diff(lateral) <= 1e-12)
        assert lateral[-1] < 0.1 * lateral[0]

    def test_covariance_stays_psd(self, straight_graph, cfg):
        meas = PedestrianState(px=5.0, py=0.5, speed=1.2, heading=0.2)
        routes = assign_references(meas, straight_graph, cfg)
        pred = propagate(meas, routes[0][0], cfg)
        for k in range(cfg.horizon + 1):
            eig = np.linalg.eigvalsh(pred.cov[k])
            assert eig.min() >= -1e-10

    def test_axes_nondecreasing_with_noise(self, straight_graph, cfg):
        meas = PedestrianState(px=5.0, py=0.0, speed=1.4, heading=0.0)
        routes = assign_references(meas, straight_graph, cfg)
        pred = propagate(meas, routes[0][0], cfg)
        assert np.all(np.diff(pred.lam_a) >= -1e-12)


class TestPredictAll:
    def test_empty_measurements(self, straight_graph, cfg):
        preds, unmatched = predict_all([], straight_graph, cfg)
        assert preds == [] and unmatched == []

    def test_one_pedestrian_two_routes(self, fork_graph):
        cfg = PredictorConfig(horizon=100)
        meas = [PedestrianState(px=2.0, py=0.0, speed=1.4, heading=0.0)]
        preds, unmatched = predict_all(meas, fork_graph, cfg)
        assert len(preds) == 2
        assert unmatched == []
        assert {p.weight for p in preds} == {0.5}
        assert [p.hypothesis_id for p in preds] == ["p0r0", "p0r1"]

    def test_three_pedestrians_unbranched(self, straight_graph, cfg):
        meas = [PedestrianState(px=float(5 * i), py=0.0, speed=1.2, heading=0.0)
                for i in range(3)]
        preds, unmatched = predict_all(meas, straight_graph, cfg)
        assert len(preds) == 3 and unmatched == []

    def test_unmatched_reported_not_fatal(self, straight_graph, cfg):
        meas = [PedestrianState(px=5.0, py=0.0, speed=1.2, heading=0.0),
                PedestrianState(px=5.0, py=500.0, speed=1.2, heading=0.0)]
        preds, unmatched = predict_all(meas, straight_graph, cfg)
        assert len(preds) == 1
        assert unmatched == [1]

    def test_weights_sum_to_one_through_double_fork(self):
        cfg = PredictorConfig(horizon=300)   # reach past both forks
        nodes = [[0, 0], [10, 0], [20, 0], [10, -10], [20, -10], [30, 0],
                 [20, 10]]
        edges = [(0, 1), (1, 2), (1, 3), (2, 5), (2, 6), (3, 4)]
        graph = PathGraph(nodes=nodes, edges=edges)
        meas = [PedestrianState(px=1.0, py=0.0, speed=1.4, heading=0.0)]
        preds, _ = predict_all(meas, graph, cfg)
        assert len(preds) >= 3
        assert sum(p.weight for p in preds) == pytest.approx(1.0, abs=1e-12)
