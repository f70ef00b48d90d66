"""Environment-aware multi-hypothesis pedestrian prediction.

Pedestrians are tracked as unicycles that follow a graph of walkable
polylines (sidewalks, crosswalks).  A measurement is associated to the
nearest edge within a gating radius; every simple forward route through
the graph's branch points becomes one hypothesis, weighted by an equal
split at each bifurcation.  Each hypothesis is rolled forward in closed
loop under a proportional regulator (heading toward the local route
tangent plus a lateral pull back onto the route, speed toward nominal)
while an EKF-style recursion P+ = F P F^T + G W G^T propagates the state
covariance.  The position-block eigen-decomposition, scaled by the
confidence factor, yields the per-stage uncertainty ellipses consumed by
the collision constraints.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .reference import wrap_angle


@dataclass(frozen=True)
class PedestrianState:
    """Measured planar unicycle state: position [m], speed [m/s], heading [rad]."""

    px: float
    py: float
    speed: float
    heading: float

    def as_array(self) -> np.ndarray:
        return np.array([self.px, self.py, self.speed, self.heading])


@dataclass(frozen=True)
class PredictorConfig:
    nominal_speed: float = 1.4        # typical walking speed [m/s]
    heading_gain: float = 2.0         # regulator gain on heading error [1/s]
    speed_gain: float = 1.0           # regulator gain on speed error [1/s]
    # pull toward the route [rad per m offset]; kept small enough that the
    # e_y loop is overdamped at walking speed (contraction without overshoot)
    lateral_gain: float = 0.3
    process_noise: tuple = (0.3, 0.3)  # accel / heading-rate noise std devs
    initial_std: tuple = (0.1, 0.1, 0.1, 0.1)  # measurement std (px, py, v, psi)
    confidence_scale: float = 2.0     # ellipse = c_sigma * sqrt(eig) (~95 %)
    horizon: int = 100
    dt: float = 0.05
    gate_radius: float = 5.0          # max measurement-to-graph distance [m]

    def __post_init__(self):
        if self.heading_gain <= 0 or self.speed_gain <= 0:
            raise ValueError("regulator gains must be positive")
        if self.confidence_scale <= 0:
            raise ValueError("confidence_scale must be positive")
        if min(self.process_noise) < 0 or min(self.initial_std) < 0:
            raise ValueError("noise magnitudes must be nonnegative")

    def noise_cov(self) -> np.ndarray:
        return np.diag(np.asarray(self.process_noise, dtype=float) ** 2)

    def initial_cov(self) -> np.ndarray:
        return np.diag(np.asarray(self.initial_std, dtype=float) ** 2)


@dataclass(frozen=True)
class PedestrianPrediction:
    """One hypothesis: per-stage positions and uncertainty-ellipse geometry."""

    positions: np.ndarray    # (N+1, 2)
    lam_a: np.ndarray        # (N+1,) major semi-axis [m]
    lam_b: np.ndarray        # (N+1,) minor semi-axis [m]
    alpha: np.ndarray        # (N+1,) major-axis orientation [rad]
    cov: np.ndarray          # (N+1, 2, 2) position covariance, for diagnostics
    hypothesis_id: str = "p0r0"
    weight: float = 1.0


class PathGraph:
    """Directed graph of walkable straight segments between 2-D nodes."""

    def __init__(self, nodes, edges):
        self.nodes = np.asarray(nodes, dtype=float)
        if self.nodes.ndim != 2 or self.nodes.shape[1] != 2:
            raise ValueError("nodes must be an (n, 2) array")
        self.edges = [(int(i), int(j)) for i, j in edges]
        for i, j in self.edges:
            if not (0 <= i < len(self.nodes) and 0 <= j < len(self.nodes)):
                raise ValueError(f"edge ({i}, {j}) references a missing node")
            if np.allclose(self.nodes[i], self.nodes[j]):
                raise ValueError(f"edge ({i}, {j}) has zero length")
        self._succ: dict[int, list[int]] = {}
        for e_idx, (i, _) in enumerate(self.edges):
            self._succ.setdefault(i, []).append(e_idx)

    def edge_points(self, e_idx: int):
        i, j = self.edges[e_idx]
        return self.nodes[i], self.nodes[j]

    def successors(self, e_idx: int) -> list[int]:
        """Outgoing edges at the head node, excluding an immediate U-turn."""
        _, j = self.edges[e_idx]
        i, _ = self.edges[e_idx]
        return [s for s in self._succ.get(j, []) if self.edges[s][1] != i]

    def nearest_edge(self, point, heading: float | None = None):
        """Closest edge to a point: (edge index, param t in [0,1], distance).

        Distance decides; on near-ties (within 1e-9) the edge whose direction
        best matches the supplied heading wins, then the lower edge index.
        """
        p = np.asarray(point, dtype=float)
        best = (None, 0.0, np.inf, np.inf)
        for e_idx, (i, j) in enumerate(self.edges):
            a, b = self.nodes[i], self.nodes[j]
            ab = b - a
            t = float(np.clip(np.dot(p - a, ab) / np.dot(ab, ab), 0.0, 1.0))
            d = float(np.hypot(*(p - (a + t * ab))))
            mis = 0.0
            if heading is not None:
                mis = abs(wrap_angle(heading - np.arctan2(ab[1], ab[0])))
            if d < best[2] - 1e-9 or (d < best[2] + 1e-9 and mis < best[3] - 1e-12):
                best = (e_idx, t, d, mis)
        return best[0], best[1], best[2]


@dataclass
class _Route:
    """A forward polyline through the graph plus its hypothesis weight."""

    polyline: np.ndarray
    weight: float
    edge_ids: list = field(default_factory=list)


def _enumerate_routes(graph: PathGraph, e_idx: int, t: float,
                      reach: float) -> list[_Route]:
    a, b = graph.edge_points(e_idx)
    start = a + t * (b - a)
    first_leg = float(np.hypot(*(b - start)))
    routes: list[_Route] = []

    def walk(pts, length, weight, edge, visited):
        succ = graph.successors(edge)
        succ = [s for s in succ if s not in visited]
        if length >= reach or not succ:
            routes.append(_Route(np.asarray(pts), weight, list(visited)))
            return
        w = weight / len(succ)
        for s in succ:
            _, j = graph.edges[s]
            nxt = graph.nodes[j]
            walk(pts + [nxt], length + float(np.hypot(*(nxt - pts[-1]))),
                 w, s, visited + [s])

    walk([start, b], first_leg, 1.0, e_idx, [e_idx])
    return routes


def assign_references(measurement: PedestrianState, graph: PathGraph,
                      cfg: PredictorConfig) -> list[tuple[np.ndarray, float]]:
    """Match a measurement to the graph and enumerate route hypotheses.

    Returns (polyline, weight) pairs covering every simple forward route
    within horizon reach (speed * N * dt plus a 5 m margin), weights split
    equally at each bifurcation.  Empty if no edge lies within the gating
    radius.
    """
    e_idx, t, dist = graph.nearest_edge(
        (measurement.px, measurement.py), measurement.heading)
    if e_idx is None or dist > cfg.gate_radius:
        return []
    reach = max(measurement.speed, cfg.nominal_speed) * cfg.horizon * cfg.dt + 5.0
    routes = _enumerate_routes(graph, e_idx, t, reach)
    return [(r.polyline, r.weight) for r in routes]


def _project_polyline(route: np.ndarray, p: np.ndarray):
    """Closest point on a polyline: (arc length, e_y, tangent angle, at_end)."""
    seg = np.diff(route, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    cum = np.concatenate(([0.0], np.cumsum(seg_len)))
    rel = p[None, :] - route[:-1]
    t = np.clip(np.einsum("nd,nd->n", rel, seg) / seg_len**2, 0.0, 1.0)
    foot = route[:-1] + t[:, None] * seg
    d2 = np.sum((p[None, :] - foot) ** 2, axis=1)
    i = int(np.argmin(d2))
    tang = float(np.arctan2(seg[i, 1], seg[i, 0]))
    diff = p - foot[i]
    e_y = -np.sin(tang) * diff[0] + np.cos(tang) * diff[1]
    arc = cum[i] + t[i] * seg_len[i]
    at_end = arc >= cum[-1] - 1e-9
    return arc, float(e_y), tang, bool(at_end)


def _regulator_step(s: np.ndarray, route: np.ndarray, cfg: PredictorConfig):
    """One explicit-Euler step of the closed-loop unicycle.

    Returns (next state, closed-loop Jacobian 4x4).  The target heading is
    the local route tangent corrected by atan(lateral_gain * e_y) toward the
    route; target speed is nominal, or zero once the route end is reached.
    """
    px, py, v, psi = s
    arc, e_y, tang, at_end = _project_polyline(route, s[:2])
    corr = np.arctan(cfg.lateral_gain * e_y)
    psi_ref = tang - corr
    v_ref = 0.0 if at_end else cfg.nominal_speed

    dt = cfg.dt
    err = wrap_angle(psi_ref - psi)
    nxt = np.array([
        px + v * np.cos(psi) * dt,
        py + v * np.sin(psi) * dt,
        v + cfg.speed_gain * (v_ref - v) * dt,
        psi + cfg.heading_gain * err * dt,
    ])
    if nxt[2] < 0.0:
        nxt[2] = 0.0

    # analytic closed-loop Jacobian; the projection is locally affine within
    # a segment so d(e_y)/dp is the segment's left normal
    n_hat = np.array([-np.sin(tang), np.cos(tang)])
    dcorr_de = cfg.lateral_gain / (1.0 + (cfg.lateral_gain * e_y) ** 2)
    F = np.eye(4)
    F[0, 2] = np.cos(psi) * dt
    F[0, 3] = -v * np.sin(psi) * dt
    F[1, 2] = np.sin(psi) * dt
    F[1, 3] = v * np.cos(psi) * dt
    F[2, 2] = 1.0 - cfg.speed_gain * dt
    F[3, 0] = -cfg.heading_gain * dt * dcorr_de * n_hat[0]
    F[3, 1] = -cfg.heading_gain * dt * dcorr_de * n_hat[1]
    F[3, 3] = 1.0 - cfg.heading_gain * dt
    return nxt, F


def _ellipse_from_cov(P2: np.ndarray, scale: float):
    """(lam_a, lam_b, alpha) of the scaled standard-deviation ellipse."""
    sym = 0.5 * (P2 + P2.T)
    w, V = np.linalg.eigh(sym)
    w = np.maximum(w, 0.0)
    lam_b, lam_a = scale * np.sqrt(w[0]), scale * np.sqrt(w[1])
    alpha = float(np.arctan2(V[1, 1], V[0, 1]))
    return float(lam_a), float(lam_b), alpha


def propagate(measurement: PedestrianState, route, cfg: PredictorConfig,
              weight: float = 1.0, hypothesis_id: str = "p0r0") -> PedestrianPrediction:
    """Roll one route hypothesis over the horizon with covariance propagation."""
    route = np.asarray(route, dtype=float)
    n = cfg.horizon
    W = cfg.noise_cov()
    G = np.zeros((4, 2))
    G[2, 0] = cfg.dt   # acceleration noise into speed
    G[3, 1] = cfg.dt   # heading-rate noise into heading

    s = measurement.as_array()
    P = cfg.initial_cov()
    GWG = G @ W @ G.T

    positions = np.empty((n + 1, 2))
    cov = np.empty((n + 1, 2, 2))
    lam_a = np.empty(n + 1)
    lam_b = np.empty(n + 1)
    alpha = np.empty(n + 1)

    for k in range(n + 1):
        positions[k] = s[:2]
        cov[k] = P[:2, :2]
        lam_a[k], lam_b[k], alpha[k] = _ellipse_from_cov(P[:2, :2],
                                                         cfg.confidence_scale)
        if k == n:
            break
        s, F = _regulator_step(s, route, cfg)
        P = F @ P @ F.T + GWG
        P = 0.5 * (P + P.T)

    return PedestrianPrediction(positions=positions, lam_a=lam_a, lam_b=lam_b,
                                alpha=alpha, cov=cov,
                                hypothesis_id=hypothesis_id, weight=weight)


def predict_all(measurements, graph: PathGraph, cfg: PredictorConfig):
    """Predictions for every measurement and route hypothesis.

    Returns (predictions, unmatched): a flat prediction list ordered by
    pedestrian index then route enumeration order, and the indices of
    measurements that matched no edge within the gating radius.
    """
    predictions: list[PedestrianPrediction] = []
    unmatched: list[int] = []
    for p_idx, meas in enumerate(measurements):
        routes = assign_references(meas, graph, cfg)
        if not routes:
            unmatched.append(p_idx)
            continue
        for r_idx, (poly, w) in enumerate(routes):
            predictions.append(
                propagate(meas, poly, cfg, weight=w,
                          hypothesis_id=f"p{p_idx}r{r_idx}"))
    return predictions, unmatched
