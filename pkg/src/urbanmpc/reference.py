"""Arc-length-parametrized reference paths and per-stage reference points.

A route is a piecewise-linear curve xi(sigma) = (x^c, y^c)(sigma) with a
piecewise-linear speed profile v^c(sigma), sigma being arc length along the
waypoints.  Each control cycle re-derives per-stage references by projecting
the current position onto the curve and integrating sigma forward with the
*previous guess* velocities

    sigma_{k+1} = sigma_k + v_guess_k * cos(e_psi_k) * dt

so a vehicle held up by an obstacle keeps its reference nearby instead of
being dragged after a runaway clock.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def wrap_angle(a):
    """Wrap angle(s) to (-pi, pi]."""
    w = np.mod(np.asarray(a) + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if np.isscalar(a) or np.ndim(a) == 0 else w


@dataclass(frozen=True)
class FrenetError:
    """Path-relative errors at a projection point.

    e_y is the lateral offset, signed positive to the left of the travel
    direction.  e_psi is the heading error of the queried heading against the
    local tangent.  kappa is a finite-difference curvature estimate, kept for
    diagnostics only (the discrete sigma recursion does not use it).
    """

    e_y: float
    e_psi: float
    kappa: float


@dataclass(frozen=True)
class ReferencePoint:
    """Per-stage state and input targets handed to the tracking cost."""

    x: float
    y: float
    theta: float
    v: float
    delta: float
    omega: float
    a: float
    delta_sp: float

    def state_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.v, self.theta, self.delta, self.omega])

    def input_array(self) -> np.ndarray:
        return np.array([self.a, self.delta_sp])


class ReferenceCurve:
    """Piecewise-linear curve and speed profile over arc length sigma."""

    def __init__(self, waypoints, speeds):
        pts = np.asarray(waypoints, dtype=float)
        spd = np.asarray(speeds, dtype=float)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("waypoints must be an (n, 2) array with n >= 2")
        if spd.shape != (pts.shape[0],):
            raise ValueError("speeds must match the number of waypoints")
        seg = np.diff(pts, axis=0)
        seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(seg_len <= 0.0):
            raise ValueError("consecutive waypoints must be distinct")
        self.points = pts
        self.speeds = spd
        self.seg_vec = seg
        self.seg_len = seg_len
        self.seg_dir = seg / seg_len[:, None]
        self.breakpoints = np.concatenate(([0.0], np.cumsum(seg_len)))
        self.seg_angle = np.arctan2(seg[:, 1], seg[:, 0])
        # curvature at interior breakpoints: turn angle over mean adjacent length
        n_seg = len(seg_len)
        bp_kappa = np.zeros(n_seg + 1)
        if n_seg > 1:
            turn = wrap_angle(np.diff(self.seg_angle))
            bp_kappa[1:-1] = turn / (0.5 * (seg_len[:-1] + seg_len[1:]))
        self._bp_kappa = bp_kappa

    @property
    def length(self) -> float:
        return float(self.breakpoints[-1])

    def _segment_of(self, sigma):
        """Segment index for sigma values, final sigma maps to the last segment."""
        s = np.clip(np.asarray(sigma, dtype=float), 0.0, self.length)
        idx = np.searchsorted(self.breakpoints, s, side="right") - 1
        return np.clip(idx, 0, len(self.seg_len) - 1), s

    def position(self, sigma):
        idx, s = self._segment_of(sigma)
        t = (s - self.breakpoints[idx]) / self.seg_len[idx]
        pos = self.points[idx] + t[..., None] * self.seg_vec[idx]
        return pos

    def speed(self, sigma):
        s = np.clip(sigma, 0.0, self.length)
        return np.interp(s, self.breakpoints, self.speeds)

    def tangent_angle(self, sigma):
        idx, _ = self._segment_of(sigma)
        return self.seg_angle[idx]

    def curvature(self, sigma):
        """Finite-difference curvature of the breakpoint nearest to sigma."""
        idx, s = self._segment_of(sigma)
        t = (s - self.breakpoints[idx]) / self.seg_len[idx]
        nearest_bp = idx + (t > 0.5)
        return self._bp_kappa[nearest_bp]

    def project_batch(self, positions):
        """Closest-point projection of (m, 2) positions onto the curve.

        Exact per-segment minimization of the squared distance; ties broken
        toward smaller sigma by strict comparison while scanning segments in
        order.  Returns (sigma (m,), e_y (m,), tangent_angle (m,)).
        """
        p = np.atleast_2d(np.asarray(positions, dtype=float))
        rel = p[:, None, :] - self.points[None, :-1, :]           # (m, nseg, 2)
        t = np.einsum("mnd,nd->mn", rel, self.seg_vec) / self.seg_len**2
        t = np.clip(t, 0.0, 1.0)
        foot = self.points[None, :-1, :] + t[:, :, None] * self.seg_vec[None, :, :]
        d2 = np.sum((p[:, None, :] - foot) ** 2, axis=2)
        best = np.argmin(d2, axis=1)                              # first minimum wins
        rows = np.arange(p.shape[0])
        tb = t[rows, best]
        sigma = self.breakpoints[best] + tb * self.seg_len[best]
        tang = self.seg_angle[best]
        diff = p - foot[rows, best]
        # left normal of the travel direction is (-ty, tx)
        e_y = -np.sin(tang) * diff[:, 0] + np.cos(tang) * diff[:, 1]
        return sigma, e_y, tang

    def advance_sigma(self, sigma: float, v_guess: float, e_psi: float,
                      dt: float) -> float:
        """One step of the guess-velocity sigma recursion, clamped to the curve."""
        s = sigma + v_guess * np.cos(e_psi) * dt
        return float(np.clip(s, 0.0, self.length))


def project(position, curve: ReferenceCurve, heading: float = 0.0):
    """Project a position onto the curve.

    Returns (sigma0, FrenetError).  The heading error inside FrenetError is
    measured for the supplied heading (default 0).
    """
    sigma, e_y, tang = curve.project_batch(np.asarray(position, dtype=float)[None, :])
    e_psi = wrap_angle(heading - tang[0])
    kappa = float(curve.curvature(sigma[0]))
    return float(sigma[0]), FrenetError(e_y=float(e_y[0]), e_psi=float(e_psi),
                                        kappa=kappa)


def build_references(sigma0: float, guess_velocities, guess_headings,
                     curve: ReferenceCurve, delta0: float, dt: float):
    """Per-stage references from the projected start and the previous guess.

    sigma is chained with the guess velocities; positions come off the curve,
    the heading reference is the direction between consecutive reference
    points (carried forward where they degenerate, e.g. clamped at the curve
    end), the speed reference is the curve profile, and the steering-related
    references are pinned to the current steering angle delta0 with zero rate
    and zero acceleration.

    Returns a list of N+1 ReferencePoint for N = len(guess_velocities).
    """
    v_g = np.asarray(guess_velocities, dtype=float)
    th_g = np.asarray(guess_headings, dtype=float)
    n = v_g.shape[0]
    if th_g.shape[0] < n:
        raise ValueError("need a guess heading per stage 0..N-1")

    sigmas = np.empty(n + 1)
    sigmas[0] = float(np.clip(sigma0, 0.0, curve.length))
    for k in range(n):
        e_psi = wrap_angle(th_g[k] - float(curve.tangent_angle(sigmas[k])))
        sigmas[k + 1] = curve.advance_sigma(sigmas[k], v_g[k], e_psi, dt)

    pos = curve.position(sigmas)
    v_ref = curve.speed(sigmas)

    theta_ref = np.empty(n + 1)
    last_theta = float(curve.tangent_angle(sigmas[0]))
    for k in range(n):
        d = pos[k + 1] - pos[k]
        if np.hypot(d[0], d[1]) >= 1e-9:
            last_theta = float(np.arctan2(d[1], d[0]))
        theta_ref[k] = last_theta
    theta_ref[n] = theta_ref[n - 1] if n > 0 else last_theta

    return [
        ReferencePoint(x=float(pos[k, 0]), y=float(pos[k, 1]),
                       theta=float(theta_ref[k]), v=float(v_ref[k]),
                       delta=float(delta0), omega=0.0, a=0.0,
                       delta_sp=float(delta0))
        for k in range(n + 1)
    ]
