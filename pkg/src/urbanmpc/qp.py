"""Stage-structured convex QP: problem container, solver front end, checks.

The problem layout matches one SQP subproblem of the controller: per-stage
cost blocks [[Q, S], [S', R]] plus linear terms, affine dynamics equalities,
an initial-state pin, and two-sided inequality rows per stage of which any
row may be declared soft (L1 slack pair with a linear weight entering the
cost).  ``solve`` runs the Riccati-factorized interior-point kernel;
``kkt_residuals`` re-derives optimality residuals with plain numpy,
independently of the solve path, so solver and check cannot share a bug.

A versioned little-endian binary dump of problem plus solution is provided
for offline debugging (see :func:`dump_qp` for the exact layout).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import _qp_kernel
from ._qp_kernel import STATUS_MAX_ITER, STATUS_NUMERICAL, STATUS_OPTIMAL

_STATUS_NAMES = {
    STATUS_OPTIMAL: "optimal",
    STATUS_MAX_ITER: "max-iter",
    STATUS_NUMERICAL: "numerical-failure",
}


@dataclass
class StageRows:
    """Inequality rows of one stage: dlo <= C x + D u <= dup.

    ``soft_weight`` is 0 for hard rows, otherwise the L1 penalty weight of
    the row's slack pair.  Terminal-stage rows must have D == 0.
    """

    C: np.ndarray
    D: np.ndarray
    dlo: np.ndarray
    dup: np.ndarray
    soft_weight: np.ndarray

    def __post_init__(self):
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        self.dlo = np.asarray(self.dlo, dtype=float).ravel()
        self.dup = np.asarray(self.dup, dtype=float).ravel()
        self.soft_weight = np.asarray(self.soft_weight, dtype=float).ravel()
        m = self.C.shape[0]
        if not (self.D.shape[0] == m == len(self.dlo) == len(self.dup)
                == len(self.soft_weight)):
            raise ValueError("inconsistent row counts in StageRows")
        if np.any(self.dlo > self.dup):
            raise ValueError("row lower bound exceeds upper bound")
        if np.any(self.soft_weight < 0):
            raise ValueError("soft weights must be nonnegative")


class OcpQp:
    """One horizon-structured QP instance.

    Parameters are stacked arrays: A (N,nx,nx), B (N,nx,nu), b (N,nx),
    Q (N+1,nx,nx), S (N,nx,nu), R (N,nu,nu), q (N+1,nx), r (N,nu), x0 (nx,)
    and an optional list of N+1 StageRows (None entries allowed).
    """

    def __init__(self, A, B, b, Q, S, R, q, r, x0, rows=None):
        self.A = np.ascontiguousarray(A, dtype=float)
        self.B = np.ascontiguousarray(B, dtype=float)
        self.b = np.ascontiguousarray(b, dtype=float)
        self.Q = np.ascontiguousarray(Q, dtype=float)
        self.S = np.ascontiguousarray(S, dtype=float)
        self.R = np.ascontiguousarray(R, dtype=float)
        self.q = np.ascontiguousarray(q, dtype=float)
        self.r = np.ascontiguousarray(r, dtype=float)
        self.x0 = np.ascontiguousarray(x0, dtype=float)

        self.N, self.nx, self.nu = self.B.shape
        if self.A.shape != (self.N, self.nx, self.nx):
            raise ValueError("A has inconsistent shape")
        if self.b.shape != (self.N, self.nx):
            raise ValueError("b has inconsistent shape")
        if self.Q.shape != (self.N + 1, self.nx, self.nx):
            raise ValueError("Q has inconsistent shape")
        if self.S.shape != (self.N, self.nx, self.nu):
            raise ValueError("S has inconsistent shape")
        if self.R.shape != (self.N, self.nu, self.nu):
            raise ValueError("R has inconsistent shape")
        if self.q.shape != (self.N + 1, self.nx):
            raise ValueError("q has inconsistent shape")
        if self.r.shape != (self.N, self.nu):
            raise ValueError("r has inconsistent shape")
        if self.x0.shape != (self.nx,):
            raise ValueError("x0 has inconsistent shape")

        # concatenate constraint rows with stage offsets
        if rows is None:
            rows = [None] * (self.N + 1)
        if len(rows) != self.N + 1:
            raise ValueError("need one StageRows (or None) per stage 0..N")
        off = np.zeros(self.N + 2, dtype=np.int64)
        blocks_C, blocks_D = [], []
        blocks_lo, blocks_up, blocks_w = [], [], []
        for k, sr in enumerate(rows):
            m = 0 if sr is None else sr.C.shape[0]
            off[k + 1] = off[k] + m
            if m:
                if sr.C.shape[1] != self.nx or sr.D.shape[1] != self.nu:
                    raise ValueError(f"stage {k} rows have wrong width")
                if k == self.N and np.any(sr.D != 0.0):
                    raise ValueError("terminal rows must not involve inputs")
                blocks_C.append(sr.C)
                blocks_D.append(sr.D)
                blocks_lo.append(sr.dlo)
                blocks_up.append(sr.dup)
                blocks_w.append(sr.soft_weight)
        self.row_offsets = off
        if blocks_C:
            self.C = np.ascontiguousarray(np.vstack(blocks_C))
            self.D = np.ascontiguousarray(np.vstack(blocks_D))
            self.dlo = np.concatenate(blocks_lo)
            self.dup = np.concatenate(blocks_up)
            self.soft_weight = np.concatenate(blocks_w)
        else:
            self.C = np.zeros((0, self.nx))
            self.D = np.zeros((0, self.nu))
            self.dlo = np.zeros(0)
            self.dup = np.zeros(0)
            self.soft_weight = np.zeros(0)
        self.n_rows = self.C.shape[0]

    # ------------------------------------------------------------- helpers
    def stage_slice(self, k: int) -> slice:
        return slice(self.row_offsets[k], self.row_offsets[k + 1])

    def validate(self):
        """Reject non-symmetric / non-PSD cost data before iterating."""
        for name, arr in (("A", self.A), ("B", self.B), ("b", self.b),
                          ("Q", self.Q), ("R", self.R), ("q", self.q),
                          ("x0", self.x0)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
        if np.max(np.abs(self.Q - np.transpose(self.Q, (0, 2, 1)))) > 1e-9:
            raise ValueError("Q blocks must be symmetric")
        if np.max(np.abs(self.R - np.transpose(self.R, (0, 2, 1)))) > 1e-9:
            raise ValueError("R blocks must be symmetric")
        eye_x = np.eye(self.nx)
        try:
            np.linalg.cholesky(self.Q + 2e-9 * eye_x)
        except np.linalg.LinAlgError:
            raise ValueError("Q blocks must be positive semidefinite")
        try:
            np.linalg.cholesky(self.R)
        except np.linalg.LinAlgError:
            raise ValueError("R blocks must be positive definite")
        # full stage Hessian PSD given R PD: check Schur complement
        Rinv_St = np.linalg.solve(self.R, np.transpose(self.S, (0, 2, 1)))
        schur = self.Q[:-1] - self.S @ Rinv_St
        try:
            np.linalg.cholesky(schur + 2e-9 * eye_x)
        except np.linalg.LinAlgError:
            raise ValueError("per-stage Hessian [[Q,S],[S',R]] must be PSD")

    def row_values(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """C x_k + D u_k for every constraint row."""
        vals = np.zeros(self.n_rows)
        for k in range(self.N + 1):
            sl = self.stage_slice(k)
            if sl.start == sl.stop:
                continue
            v = self.C[sl] @ x[k]
            if k < self.N:
                v = v + self.D[sl] @ u[k]
            vals[sl] = v
        return vals

    def objective(self, x, u, sig_lo=None, sig_up=None) -> float:
        """Cost of a candidate, including L1 slack terms when supplied."""
        val = 0.0
        for k in range(self.N):
            val += 0.5 * x[k] @ self.Q[k] @ x[k] + x[k] @ self.S[k] @ u[k] \
                + 0.5 * u[k] @ self.R[k] @ u[k] \
                + self.q[k] @ x[k] + self.r[k] @ u[k]
        val += 0.5 * x[self.N] @ self.Q[self.N] @ x[self.N] \
            + self.q[self.N] @ x[self.N]
        if sig_lo is not None:
            val += float(self.soft_weight @ np.maximum(sig_lo, 0.0))
        if sig_up is not None:
            val += float(self.soft_weight @ np.maximum(sig_up, 0.0))
        return float(val)


@dataclass
class OcpSolution:
    """Primal/dual solution with status and independent residual norms."""

    x: np.ndarray                 # (N+1, nx)
    u: np.ndarray                 # (N, nu)
    eq_mult: np.ndarray           # (N+1, nx) dynamics/initial multipliers
    ineq_mult_lo: np.ndarray      # (M,)
    ineq_mult_up: np.ndarray      # (M,)
    slack_lo: np.ndarray          # (M,) soft L1 slacks, lower sides
    slack_up: np.ndarray          # (M,)
    status: str
    iterations: int
    residuals: np.ndarray         # stationarity, primal, dual, complementarity
    merit_history: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"

    def max_slack(self) -> float:
        if len(self.slack_lo) == 0:
            return 0.0
        return float(max(np.max(self.slack_lo), np.max(self.slack_up)))


def solve(qp: OcpQp, warm_start: OcpSolution | None = None,
          tol: float = 1e-8, max_iter: int = 30,
          centering: float = 0.1) -> OcpSolution:
    """Solve the QP to KKT tolerance with optional warm starting.

    Warm starting always seeds the primal trajectory; multipliers are seeded
    too when the supplied solution carries them (identical re-solves then
    terminate immediately), otherwise duals restart from a strictly interior
    default, which transfers better across shifted problems.
    """
    qp.validate()
    N, nx, nu, M = qp.N, qp.nx, qp.nu, qp.n_rows

    warm_x = np.zeros((N + 1, nx))
    warm_u = np.zeros((N, nu))
    warm_p = np.zeros((N + 1, nx))
    warm_ll = np.zeros(M)
    warm_lu = np.zeros(M)
    warm_sl = np.zeros(M)
    warm_su = np.zeros(M)
    use_primal = 0
    use_dual = 0
    if warm_start is not None:
        if warm_start.x.shape == warm_x.shape and warm_start.u.shape == warm_u.shape:
            warm_x[:] = warm_start.x
            warm_u[:] = warm_start.u
            use_primal = 1
            if (len(warm_start.ineq_mult_lo) == M
                    and warm_start.eq_mult.shape == warm_p.shape):
                warm_p[:] = warm_start.eq_mult
                warm_ll[:] = warm_start.ineq_mult_lo
                warm_lu[:] = warm_start.ineq_mult_up
                warm_sl[:] = warm_start.slack_lo
                warm_su[:] = warm_start.slack_up
                use_dual = 1

    out = _qp_kernel.ip_solve(
        qp.A, qp.B, qp.b, qp.Q, qp.S, qp.R, qp.q, qp.r, qp.x0,
        qp.row_offsets, qp.C, qp.D, qp.dlo, qp.dup, qp.soft_weight,
        tol, max_iter, centering,
        warm_x, warm_u, warm_p, warm_ll, warm_lu, warm_sl, warm_su,
        use_primal, use_dual)
    (x, u, p, lam_lo, lam_up, _s_lo, _s_up, sig_lo, sig_up,
     status, iters, res, mu_hist, n_mu) = out

    return OcpSolution(
        x=np.asarray(x), u=np.asarray(u), eq_mult=np.asarray(p),
        ineq_mult_lo=np.asarray(lam_lo), ineq_mult_up=np.asarray(lam_up),
        slack_lo=np.asarray(sig_lo), slack_up=np.asarray(sig_up),
        status=_STATUS_NAMES[int(status)], iterations=int(iters),
        residuals=np.asarray(res), merit_history=np.asarray(mu_hist)[:int(n_mu)])


def kkt_residuals(qp: OcpQp, sol: OcpSolution) -> np.ndarray:
    """Stationarity, primal, dual, complementarity infinity norms.

    Evaluated directly from problem data and the candidate, with none of the
    solver's internal quantities, so it independently certifies a solve.
    """
    x, u = sol.x, sol.u
    lam_lo, lam_up = sol.ineq_mult_lo, sol.ineq_mult_up
    sig_lo, sig_up = sol.slack_lo, sol.slack_up
    p = sol.eq_mult
    vals = qp.row_values(x, u)
    finite_lo = qp.dlo > -_qp_kernel.BIG
    finite_up = qp.dup < _qp_kernel.BIG
    is_soft = qp.soft_weight > 0.0

    stat = 0.0
    for k in range(qp.N + 1):
        sl = qp.stage_slice(k)
        gx = qp.Q[k] @ x[k] + qp.q[k] - p[k]
        if k < qp.N:
            gx = gx + qp.S[k] @ u[k] + qp.A[k].T @ p[k + 1]
            gu = qp.S[k].T @ x[k] + qp.R[k] @ u[k] + qp.r[k] + qp.B[k].T @ p[k + 1]
        if sl.start != sl.stop:
            lam_net = lam_up[sl] - lam_lo[sl]
            gx = gx + qp.C[sl].T @ lam_net
            if k < qp.N:
                gu = gu + qp.D[sl].T @ lam_net
        stat = max(stat, float(np.max(np.abs(gx))))
        if k < qp.N:
            stat = max(stat, float(np.max(np.abs(gu))))
    # the soft-slack multiplier gamma = w - lam is implied by stationarity;
    # its sign violation surfaces as dual infeasibility (lam > w) below

    prim = float(np.max(np.abs(x[0] - qp.x0)))
    for k in range(qp.N):
        d = x[k + 1] - qp.A[k] @ x[k] - qp.B[k] @ u[k] - qp.b[k]
        prim = max(prim, float(np.max(np.abs(d))))
    dual = 0.0
    comp = 0.0
    if qp.n_rows:
        viol_lo = np.where(finite_lo,
                           (qp.dlo - np.where(is_soft, sig_lo, 0.0)) - vals, 0.0)
        viol_up = np.where(finite_up,
                           vals - (qp.dup + np.where(is_soft, sig_up, 0.0)), 0.0)
        prim = max(prim, float(np.max(np.maximum(viol_lo, 0.0), initial=0.0)))
        prim = max(prim, float(np.max(np.maximum(viol_up, 0.0), initial=0.0)))
        prim = max(prim, float(np.max(np.maximum(-sig_lo, 0.0), initial=0.0)))
        prim = max(prim, float(np.max(np.maximum(-sig_up, 0.0), initial=0.0)))

        dual = max(dual, float(np.max(np.maximum(-lam_lo, 0.0), initial=0.0)))
        dual = max(dual, float(np.max(np.maximum(-lam_up, 0.0), initial=0.0)))
        if np.any(is_soft):
            over_lo = np.where(is_soft & finite_lo, lam_lo - qp.soft_weight, 0.0)
            over_up = np.where(is_soft & finite_up, lam_up - qp.soft_weight, 0.0)
            dual = max(dual, float(np.max(np.maximum(over_lo, 0.0), initial=0.0)))
            dual = max(dual, float(np.max(np.maximum(over_up, 0.0), initial=0.0)))

        dlo_f = np.where(finite_lo, qp.dlo, 0.0)
        dup_f = np.where(finite_up, qp.dup, 0.0)
        s_lo = vals - dlo_f + np.where(is_soft, sig_lo, 0.0)
        s_up = dup_f + np.where(is_soft, sig_up, 0.0) - vals
        comp_lo = np.where(finite_lo, np.abs(s_lo * lam_lo), 0.0)
        comp_up = np.where(finite_up, np.abs(s_up * lam_up), 0.0)
        comp = max(float(np.max(comp_lo, initial=0.0)),
                   float(np.max(comp_up, initial=0.0)))
        if np.any(is_soft):
            gl = np.where(is_soft & finite_lo, np.abs(sig_lo * (qp.soft_weight - lam_lo)), 0.0)
            gu_ = np.where(is_soft & finite_up, np.abs(sig_up * (qp.soft_weight - lam_up)), 0.0)
            comp = max(comp, float(np.max(gl, initial=0.0)),
                       float(np.max(gu_, initial=0.0)))

    return np.array([stat, prim, dual, comp])


# --------------------------------------------------------------- binary dump

_MAGIC = b"OCPQPBIN"
_VERSION = 1


def dump_qp(qp: OcpQp, path, solution: OcpSolution | None = None) -> None:
    """Write a QP (and optionally its solution) for offline debugging.

    Layout, all little-endian:
      bytes 0..7    magic "OCPQPBIN"
      u32           format version (1)
      u32 x 4       N, nx, nu, M (total constraint rows)
      u8            1 if a solution block follows the problem block
      7 bytes       zero padding
      problem block: float64 arrays in order
          A (N*nx*nx), B (N*nx*nu), b (N*nx), Q ((N+1)*nx*nx), S (N*nx*nu),
          R (N*nu*nu), q ((N+1)*nx), r (N*nu), x0 (nx),
          row_offsets as int64 (N+2), C (M*nx), D (M*nu), dlo (M), dup (M),
          soft_weight (M)
      solution block (if flagged): i32 status, i32 iterations,
          residuals (4 float64), then float64 arrays
          x ((N+1)*nx), u (N*nu), eq_mult ((N+1)*nx),
          ineq_mult_lo (M), ineq_mult_up (M), slack_lo (M), slack_up (M)
    """
    status_code = {v: k for k, v in _STATUS_NAMES.items()}
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIII", _VERSION, qp.N, qp.nx, qp.nu, qp.n_rows))
        fh.write(struct.pack("<B7x", 0 if solution is None else 1))
        for arr in (qp.A, qp.B, qp.b, qp.Q, qp.S, qp.R, qp.q, qp.r, qp.x0):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
        fh.write(np.asarray(qp.row_offsets, dtype="<i8").tobytes())
        for arr in (qp.C, qp.D, qp.dlo, qp.dup, qp.soft_weight):
            fh.write(np.asarray(arr, dtype="<f8").tobytes())
        if solution is not None:
            fh.write(struct.pack("<ii", status_code[solution.status],
                                 solution.iterations))
            fh.write(np.asarray(solution.residuals, dtype="<f8").tobytes())
            for arr in (solution.x, solution.u, solution.eq_mult,
                        solution.ineq_mult_lo, solution.ineq_mult_up,
                        solution.slack_lo, solution.slack_up):
                fh.write(np.asarray(arr, dtype="<f8").tobytes())


def load_qp(path):
    """Read a dump back: (OcpQp, OcpSolution | None)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:8] != _MAGIC:
        raise ValueError(f"{path}: not an OCP QP dump")
    version, N, nx, nu, M = struct.unpack_from("<IIIII", raw, 8)
    if version != _VERSION:
        raise ValueError(f"{path}: unsupported dump version {version}")
    (has_sol,) = struct.unpack_from("<B", raw, 28)
    pos = 36

    def take(shape, dtype="<f8"):
        nonlocal pos
        n = int(np.prod(shape)) if shape else 1
        width = np.dtype(dtype).itemsize
        arr = np.frombuffer(raw, dtype=dtype, count=n, offset=pos).reshape(shape)
        pos += n * width
        return np.ascontiguousarray(arr.astype(np.float64)
                                    if dtype == "<f8" else arr.astype(np.int64))

    A = take((N, nx, nx))
    B = take((N, nx, nu))
    b = take((N, nx))
    Q = take((N + 1, nx, nx))
    S = take((N, nx, nu))
    R = take((N, nu, nu))
    q = take((N + 1, nx))
    r = take((N, nu))
    x0 = take((nx,))
    off = take((N + 2,), dtype="<i8")
    C = take((M, nx))
    D = take((M, nu))
    dlo = take((M,))
    dup = take((M,))
    w = take((M,))

    rows = []
    for k in range(N + 1):
        lo, hi = int(off[k]), int(off[k + 1])
        if hi > lo:
            rows.append(StageRows(C[lo:hi], D[lo:hi], dlo[lo:hi],
                                  dup[lo:hi], w[lo:hi]))
        else:
            rows.append(None)
    qp = OcpQp(A, B, b, Q, S, R, q, r, x0, rows)

    sol = None
    if has_sol:
        status_i, iters = struct.unpack_from("<ii", raw, pos)
        pos += 8
        residuals = take((4,))
        x = take((N + 1, nx))
        u = take((N, nu))
        p = take((N + 1, nx))
        ll = take((M,))
        lu = take((M,))
        sl = take((M,))
        su = take((M,))
        sol = OcpSolution(x=x, u=u, eq_mult=p, ineq_mult_lo=ll,
                          ineq_mult_up=lu, slack_lo=sl, slack_up=su,
                          status=_STATUS_NAMES[status_i], iterations=iters,
                          residuals=residuals)
    return qp, sol
