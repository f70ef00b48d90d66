"""Per-cycle assembly of the tracking QP around the current guess.

Each control cycle linearizes the tracking problem at the previous guess
trajectory: a rotated position cost that penalizes only the lateral
deviation from the path, the linearized vehicle dynamics, a road-corridor
row per stage, one half-plane row per pedestrian hypothesis and stage, and
the actuator/state boxes.  Road and pedestrian rows are L1-relaxed so the
QP stays feasible when predictions jump; the penalty weights are chosen
high enough that feasible problems keep their hard-constrained solution.

The assembled :class:`~urbanmpc.qp.OcpQp` is posed in deviations from the
guess (initial-value embedding): bounds and linear cost terms are shifted
by the guess, and the dynamics offset is the integration residual
b_k = f(guess_k) - guess_{k+1}.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .qp import OcpQp, StageRows
from .reference import ReferenceCurve, ReferencePoint
from .vehicle import NX, VehicleParams


@dataclass(frozen=True)
class ControllerConfig:
    """Horizon, tuning weights, bounds, and constraint geometry."""

    horizon: int = 100
    dt: float = 0.05
    # state weights: lateral position, v, theta, delta, omega
    q_weights: tuple = (2.0, 0.1, 10.0, 0.1, 10.0)
    r_weights: tuple = (2.0, 1.0)
    # state / input boxes
    v_min: float = -1.0
    v_max: float = 20.0
    delta_max: float = 0.4942
    omega_max: float = 0.1765
    a_min: float = -2.0
    a_max: float = 1.0
    delta_sp_max: float = 0.4942
    # road corridor half width [m] and slack weights
    lateral_bound: float = 1.0
    road_slack_weight: float = 100.0
    ped_slack_weight: float = 10000.0
    # speed-dependent steering limit a1 v + b1 d <= c1, a2 v + b2 d >= c2;
    # defaults draw the line from (0 m/s, 0.4942 rad) to (20 m/s, 0.10 rad)
    use_speed_steering_limit: bool = False
    speed_steering: tuple = (0.019710, 1.0, 0.4942, -0.019710, 1.0, -0.4942)
    # vehicle footprint ellipse (semi-axes, centered mid-wheelbase) [m]
    footprint: tuple = (2.5, 1.1)
    # pedestrian rows are emitted only within this distance of the guess [m]
    activation_radius: float = 30.0
    # steering-command delay compensated by state augmentation [s]
    delay: float = 0.0
    # QP termination
    qp_tol: float = 1e-6
    qp_max_iter: int = 30
    vehicle: VehicleParams = field(default_factory=VehicleParams)

    def __post_init__(self):
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.lateral_bound <= 0:
            raise ValueError("lateral_bound must be positive")
        if min(self.q_weights) < 0 or min(self.r_weights) <= 0:
            raise ValueError("weights must be nonnegative (input weights positive)")
        if self.delay < 0:
            raise ValueError("delay must be nonnegative")

    @property
    def n_delay_steps(self) -> int:
        return int(round(self.delay / self.dt))


@dataclass
class StageCost:
    """Tracking-cost blocks of one stage, paper form (no 1/2 convention)."""

    Q: np.ndarray            # (6, 6) PSD
    R: np.ndarray            # (2, 2) PD
    S: np.ndarray            # (6, 2), zero by default


@dataclass
class StageConstraint:
    """Absolute-coordinate inequality rows of one stage."""

    C: np.ndarray            # (m, 6)
    D: np.ndarray            # (m, 2)
    dlo: np.ndarray
    dup: np.ndarray
    soft: np.ndarray         # bool per row
    weight: np.ndarray       # L1 weight where soft

    @staticmethod
    def empty():
        return StageConstraint(C=np.zeros((0, NX)), D=np.zeros((0, 2)),
                               dlo=np.zeros(0), dup=np.zeros(0),
                               soft=np.zeros(0, dtype=bool), weight=np.zeros(0))

    @staticmethod
    def concat(parts):
        parts = [p for p in parts if p is not None and len(p.dlo)]
        if not parts:
            return StageConstraint.empty()
        return StageConstraint(
            C=np.vstack([p.C for p in parts]),
            D=np.vstack([p.D for p in parts]),
            dlo=np.concatenate([p.dlo for p in parts]),
            dup=np.concatenate([p.dup for p in parts]),
            soft=np.concatenate([p.soft for p in parts]),
            weight=np.concatenate([p.weight for p in parts]))


@dataclass(frozen=True)
class ObstacleHalfplane:
    """One keep-out half-plane: normal . [x, y] >= offset (rear-axle frame)."""

    normal: np.ndarray       # unit 2-vector
    offset: float
    stage: int
    hypothesis_id: str
    d_safe: float


def rotation_cost(theta: float) -> np.ndarray:
    """Rank-one projector T(theta) selecting the rotated lateral direction."""
    s, c = np.sin(theta), np.cos(theta)
    return np.array([[s * s, c * s], [c * s, c * c]])


def build_cost(refs: list[ReferencePoint], cfg: ControllerConfig) -> list[StageCost]:
    """Stage costs with the position block rotated into the path frame.

    Q_k = blockdiag(q1 T(-r_theta_k), q2..q5): only the lateral deviation
    from the path is penalized, so a vehicle that falls behind its reference
    (obstacle!) is not dragged forward along the path.
    """
    q1, q2, q3, q4, q5 = cfg.q_weights
    R = np.diag(cfg.r_weights).astype(float)
    S = np.zeros((NX, 2))
    costs = []
    for rp in refs:
        Q = np.zeros((NX, NX))
        Q[:2, :2] = q1 * rotation_cost(-rp.theta)
        Q[2, 2], Q[3, 3], Q[4, 4], Q[5, 5] = q2, q3, q4, q5
        costs.append(StageCost(Q=Q, R=R, S=S))
    return costs


def build_road_constraints(guess_states: np.ndarray, curve: ReferenceCurve,
                           cfg: ControllerConfig) -> list:
    """One soft two-sided lateral-corridor row per stage 1..N.

    The guess position of each stage is projected onto the path; the row
    bounds the rotated lateral coordinate x sin(-th) + y cos(-th) within
    +- lateral_bound of the projection's value.  Stage 0 carries no row
    (the initial state is pinned).
    """
    guess_states = np.asarray(guess_states, dtype=float)
    n = guess_states.shape[0]
    out: list = [None] * n
    sigma, _, tang = curve.project_batch(guess_states[1:, :2])
    proj_pos = curve.position(sigma)
    s_m, c_m = np.sin(-tang), np.cos(-tang)
    delta_road = proj_pos[:, 0] * s_m + proj_pos[:, 1] * c_m
    for k in range(1, n):
        C = np.zeros((1, NX))
        C[0, 0] = s_m[k - 1]
        C[0, 1] = c_m[k - 1]
        out[k] = StageConstraint(
            C=C, D=np.zeros((1, 2)),
            dlo=np.array([delta_road[k - 1] - cfg.lateral_bound]),
            dup=np.array([delta_road[k - 1] + cfg.lateral_bound]),
            soft=np.array([True]), weight=np.array([cfg.road_slack_weight]))
    return out


def ellipse_support(lam_a: float, lam_b: float, psi: float) -> float:
    """Radial distance from ellipse center to its boundary along angle psi."""
    if lam_a < 1e-12:
        return 0.0
    lam_b = max(lam_b, 1e-12)
    den = np.hypot(lam_b * np.cos(psi), lam_a * np.sin(psi))
    return float(lam_a * lam_b / den)


def build_pedestrian_constraints(guess_states: np.ndarray, predictions,
                                 cfg: ControllerConfig) -> list[ObstacleHalfplane]:
    """Half-plane keep-out rows per stage and prediction hypothesis.

    The guess trajectory linearizes the geometry: the vehicle-center point
    is placed half a wheel base ahead of the guess rear axle; the bearing
    from vehicle center toward the predicted pedestrian sets the row normal,
    and the pedestrian-ellipse & vehicle-footprint support radii along that
    bearing build the safety distance.  Rows are only emitted within the
    activation radius of the guess.
    """
    guess_states = np.asarray(guess_states, dtype=float)
    n = guess_states.shape[0]
    half_wb = 0.5 * cfg.vehicle.l_w
    ego_a, ego_b = cfg.footprint
    planes: list[ObstacleHalfplane] = []
    for pred in predictions:
        if pred.positions.shape[0] < n:
            raise ValueError("prediction horizon shorter than controller horizon")
        for k in range(1, n):
            gx, gy = guess_states[k, 0], guess_states[k, 1]
            gth = guess_states[k, 3]
            px, py = pred.positions[k]
            if np.hypot(px - gx, py - gy) > cfg.activation_radius:
                continue
            ex = gx + half_wb * np.cos(gth)
            ey = gy + half_wb * np.sin(gth)
            phi = np.arctan2(ey - py, ex - px) + np.pi
            cph, sph = np.cos(phi), np.sin(phi)
            d_ped = ellipse_support(pred.lam_a[k], pred.lam_b[k],
                                    phi - pred.alpha[k])
            d_ego = ellipse_support(ego_a, ego_b, phi - gth)
            d_safe = d_ego + d_ped
            lbx = px - d_safe * cph - (ex - gx)
            lby = py - d_safe * sph - (ey - gy)
            normal = np.array([-cph, -sph])
            planes.append(ObstacleHalfplane(
                normal=normal, offset=float(normal @ [lbx, lby]), stage=k,
                hypothesis_id=pred.hypothesis_id, d_safe=float(d_safe)))
    return planes


def halfplanes_to_rows(planes: list[ObstacleHalfplane], n_stages: int,
                       cfg: ControllerConfig) -> list:
    """Group half-planes into per-stage soft StageConstraint rows."""
    out: list = [None] * n_stages
    by_stage: dict[int, list[ObstacleHalfplane]] = {}
    for pl in planes:
        by_stage.setdefault(pl.stage, []).append(pl)
    for k, pls in by_stage.items():
        C = np.zeros((len(pls), NX))
        dlo = np.empty(len(pls))
        for i, pl in enumerate(pls):
            C[i, :2] = pl.normal
            dlo[i] = pl.offset
        out[k] = StageConstraint(
            C=C, D=np.zeros((len(pls), 2)), dlo=dlo,
            dup=np.full(len(pls), np.inf),
            soft=np.ones(len(pls), dtype=bool),
            weight=np.full(len(pls), cfg.ped_slack_weight))
    return out


def build_input_constraints(guess_states: np.ndarray,
                            cfg: ControllerConfig) -> list:
    """Hard actuator and state boxes; optional speed-dependent steering rows.

    Input rows (a, delta_sp) cover stages 0..N-1; state rows (v, delta,
    omega) cover stages 1..N, the initial state being fixed anyway.
    """
    n = np.asarray(guess_states).shape[0]
    a1, b1, c1, a2, b2, c2 = cfg.speed_steering

    state_C = np.zeros((3, NX))
    state_C[0, 2] = 1.0   # v
    state_C[1, 4] = 1.0   # delta
    state_C[2, 5] = 1.0   # omega
    state_lo = np.array([cfg.v_min, -cfg.delta_max, -cfg.omega_max])
    state_up = np.array([cfg.v_max, cfg.delta_max, cfg.omega_max])

    if cfg.use_speed_steering_limit:
        speed_C = np.zeros((2, NX))
        speed_C[0, 2], speed_C[0, 4] = a1, b1
        speed_C[1, 2], speed_C[1, 4] = a2, b2
        state_C = np.vstack([state_C, speed_C])
        state_lo = np.concatenate([state_lo, [-np.inf, c2]])
        state_up = np.concatenate([state_up, [c1, np.inf]])

    m_state = state_C.shape[0]
    input_D = np.array([[1.0, 0.0], [0.0, 1.0]])
    input_lo = np.array([cfg.a_min, -cfg.delta_sp_max])
    input_up = np.array([cfg.a_max, cfg.delta_sp_max])

    out = []
    for k in range(n):
        parts = []
        if k < n - 1:
            parts.append(StageConstraint(
                C=np.zeros((2, NX)), D=input_D, dlo=input_lo.copy(),
                dup=input_up.copy(), soft=np.zeros(2, dtype=bool),
                weight=np.zeros(2)))
        if k >= 1:
            parts.append(StageConstraint(
                C=state_C.copy(), D=np.zeros((m_state, 2)),
                dlo=state_lo.copy(), dup=state_up.copy(),
                soft=np.zeros(m_state, dtype=bool), weight=np.zeros(m_state)))
        out.append(StageConstraint.concat(parts))
    return out


def assemble_qp(x0: np.ndarray, guess_x: np.ndarray, guess_u: np.ndarray,
                A: np.ndarray, B: np.ndarray, b: np.ndarray,
                costs: list[StageCost], refs: list[ReferencePoint],
                constraint_sets: list[list],
                phys_guess_x: np.ndarray | None = None) -> OcpQp:
    """Deviation-variable OcpQp from the per-stage pieces.

    guess_x/A/B/b may live in a delay-augmented state space of width
    nx >= 6; costs, references and constraint rows always address the
    leading 6 physical states and are zero-padded.  phys_guess_x defaults
    to the leading block of guess_x.

    The tracking cost (z - r)' W (z - r) maps to the solver's 1/2-convention
    as Q = 2 W with linear term 2 W (guess - r); row bounds are shifted by
    the row value at the guess.
    """
    guess_x = np.asarray(guess_x, dtype=float)
    guess_u = np.asarray(guess_u, dtype=float)
    N = guess_u.shape[0]
    nx = guess_x.shape[1]
    nu = guess_u.shape[1]
    if phys_guess_x is None:
        phys_guess_x = guess_x[:, :NX]

    Qs = np.zeros((N + 1, nx, nx))
    Ss = np.zeros((N, nx, nu))
    Rs = np.zeros((N, nu, nu))
    qs = np.zeros((N + 1, nx))
    rs = np.zeros((N, nu))
    for k in range(N + 1):
        ref_x = refs[k].state_array()
        Qs[k, :NX, :NX] = 2.0 * costs[k].Q
        qs[k, :NX] = 2.0 * costs[k].Q @ (phys_guess_x[k] - ref_x)
        if k < N:
            Rs[k] = 2.0 * costs[k].R
            Ss[k, :NX, :] = 2.0 * costs[k].S
            rs[k] = 2.0 * costs[k].R @ (guess_u[k] - refs[k].input_array())

    rows = []
    for k in range(N + 1):
        merged = StageConstraint.concat(
            [cs[k] if k < len(cs) else None for cs in constraint_sets])
        m = len(merged.dlo)
        if m == 0:
            rows.append(None)
            continue
        C = np.zeros((m, nx))
        C[:, :NX] = merged.C
        D = merged.D if k < N else np.zeros((m, nu))
        at_guess = merged.C @ phys_guess_x[k]
        if k < N:
            at_guess = at_guess + merged.D @ guess_u[k]
        rows.append(StageRows(
            C=C, D=D, dlo=merged.dlo - at_guess, dup=merged.dup - at_guess,
            soft_weight=np.where(merged.soft, merged.weight, 0.0)))

    x0_dev = np.asarray(x0, dtype=float) - guess_x[0]
    return OcpQp(A, B, b, Qs, Ss, Rs, qs, rs, x0_dev, rows)
