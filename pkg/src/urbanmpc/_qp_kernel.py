"""Interior-point core for stage-structured QPs.

Primal-dual interior point over the horizon-structured KKT system.  Each
Newton system is condensed stage-locally: every finite inequality side
contributes a rank-one weight to the stage Hessian, soft (L1) sides are
eliminated together with their slack pair, and the remaining
equality-constrained problem is factorized by a backward Riccati recursion
and a forward rollout, so one iteration costs O(N (nx + nu)^3).

The entry point is :func:`ip_solve`, written against the numba-supported
numpy subset.  With numba available the module compiles it (cached); the
identical code runs in plain python otherwise, just slower.

Problem form (deviation or absolute variables, the solver does not care):

    min   sum_k 1/2 x_k' Q_k x_k + x_k' S_k u_k + 1/2 u_k' R_k u_k
          + q_k' x_k + r_k' u_k   + 1/2 x_N' Q_N x_N + q_N' x_N
          + sum_soft w (sig_lo + sig_up)
    s.t.  x_0 = x0
          x_{k+1} = A_k x_k + B_k u_k + b_k
          dlo - sig_lo <= C x_k + D u_k <= dup + sig_up     (rows of stage k)
          sig_lo, sig_up >= 0  (only on rows with soft weight w > 0)

Constraint rows are stored concatenated; ``off[k]:off[k+1]`` are the rows
of stage k, stage N rows must have zero D.  Infinite bounds disable a side.

Status codes: 0 optimal, 1 max-iter, 2 numerical failure.
"""

import numpy as np

try:
    from numba import njit

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]

        def wrap(fn):
            return fn

        return wrap


BIG = 1e19
STATUS_OPTIMAL = 0
STATUS_MAX_ITER = 1
STATUS_NUMERICAL = 2


@njit(cache=True)
def _chol_solve_sym(G, RHS):
    """Solve G X = RHS for symmetric positive definite G (in place safe).

    Returns (X, ok).  Hand-rolled Cholesky so failures surface as a flag
    instead of an exception (numba-friendly); retries with growing diagonal
    regularization before giving up.
    """
    n = G.shape[0]
    m = RHS.shape[1]
    L = np.zeros((n, n))
    ok = False
    reg = 0.0
    for attempt in range(4):
        ok = True
        for i in range(n):
            for j in range(i + 1):
                acc = G[i, j]
                if i == j:
                    acc += reg
                for t in range(j):
                    acc -= L[i, t] * L[j, t]
                if i == j:
                    if acc <= 0.0:
                        ok = False
                        break
                    L[i, i] = np.sqrt(acc)
                else:
                    L[i, j] = acc / L[j, j]
            if not ok:
                break
        if ok:
            break
        reg = 1e-12 if attempt == 0 else reg * 1e4
    X = np.zeros((n, m))
    if not ok:
        return X, False
    # forward then backward substitution, column-wise
    for c in range(m):
        for i in range(n):
            acc = RHS[i, c]
            for t in range(i):
                acc -= L[i, t] * X[t, c]
            X[i, c] = acc / L[i, i]
        for i in range(n - 1, -1, -1):
            acc = X[i, c]
            for t in range(i + 1, n):
                acc -= L[t, i] * X[t, c]
            X[i, c] = acc / L[i, i]
    return X, True


@njit(cache=True)
def ip_solve(A, B, bvec, Q, S, R, qlin, rlin, x0,
             off, C, D, dlo, dup, wsoft,
             tol, max_iter, sigma_c,
             warm_x, warm_u, warm_p,
             warm_lam_lo, warm_lam_up, warm_sig_lo, warm_sig_up,
             use_warm_primal, use_warm_dual):
    N = A.shape[0]
    nx = A.shape[1]
    nu = B.shape[2]
    M = C.shape[0]

    # ------------------------------------------------------------------ init
    x = np.zeros((N + 1, nx))
    u = np.zeros((N, nu))
    p = np.zeros((N + 1, nx))
    if use_warm_primal == 1:
        x[:] = warm_x
        u[:] = warm_u
    if use_warm_dual == 1:
        p[:] = warm_p

    has_lo = np.zeros(M, dtype=np.bool_)
    has_up = np.zeros(M, dtype=np.bool_)
    soft = np.zeros(M, dtype=np.bool_)
    stage_of = np.zeros(M, dtype=np.int64)
    for k in range(N + 1):
        for i in range(off[k], off[k + 1]):
            stage_of[i] = k
    for i in range(M):
        has_lo[i] = dlo[i] > -BIG
        has_up[i] = dup[i] < BIG
        soft[i] = wsoft[i] > 0.0

    # row values at current primal point
    def_val = np.zeros(M)

    s_lo = np.zeros(M)
    s_up = np.zeros(M)
    lam_lo = np.zeros(M)
    lam_up = np.zeros(M)
    sig_lo = np.zeros(M)
    sig_up = np.zeros(M)
    gam_lo = np.zeros(M)
    gam_up = np.zeros(M)

    n_pairs = 0
    for i in range(M):
        k = stage_of[i]
        v = 0.0
        for c in range(nx):
            v += C[i, c] * x[k, c]
        if k < N:
            for c in range(nu):
                v += D[i, c] * u[k, c]
        def_val[i] = v
        if has_lo[i]:
            n_pairs += 1
            if soft[i]:
                n_pairs += 1
        if has_up[i]:
            n_pairs += 1
            if soft[i]:
                n_pairs += 1

    for i in range(M):
        w = wsoft[i]
        if has_lo[i]:
            if use_warm_dual == 1:
                lam_lo[i] = max(warm_lam_lo[i], 1e-12)
                sig_lo[i] = max(warm_sig_lo[i], 1e-12) if soft[i] else 0.0
                if soft[i] and lam_lo[i] > w * (1.0 - 1e-12):
                    lam_lo[i] = w * (1.0 - 1e-12)
                raw = def_val[i] - dlo[i] + sig_lo[i]
                s_lo[i] = max(raw, 1e-12)
            else:
                lam_lo[i] = min(1.0, 0.5 * w) if soft[i] else 1.0
                if soft[i]:
                    sig_lo[i] = max(0.1, 0.1 - (def_val[i] - dlo[i]))
                raw = def_val[i] - dlo[i] + sig_lo[i]
                s_lo[i] = max(raw, 0.1)
            if soft[i]:
                gam_lo[i] = w - lam_lo[i]
        if has_up[i]:
            if use_warm_dual == 1:
                lam_up[i] = max(warm_lam_up[i], 1e-12)
                sig_up[i] = max(warm_sig_up[i], 1e-12) if soft[i] else 0.0
                if soft[i] and lam_up[i] > w * (1.0 - 1e-12):
                    lam_up[i] = w * (1.0 - 1e-12)
                raw = dup[i] + sig_up[i] - def_val[i]
                s_up[i] = max(raw, 1e-12)
            else:
                lam_up[i] = min(1.0, 0.5 * w) if soft[i] else 1.0
                if soft[i]:
                    sig_up[i] = max(0.1, 0.1 - (dup[i] - def_val[i]))
                raw = dup[i] + sig_up[i] - def_val[i]
                s_up[i] = max(raw, 0.1)
            if soft[i]:
                gam_up[i] = w - lam_up[i]

    mu = 0.0
    if n_pairs > 0:
        acc = 0.0
        for i in range(M):
            if has_lo[i]:
                acc += s_lo[i] * lam_lo[i]
                if soft[i]:
                    acc += sig_lo[i] * gam_lo[i]
            if has_up[i]:
                acc += s_up[i] * lam_up[i]
                if soft[i]:
                    acc += sig_up[i] * gam_up[i]
        mu = acc / n_pairs

    mu_hist = np.zeros(max_iter + 1)
    mu_hist[0] = mu
    n_mu = 1

    res = np.zeros(4)       # stationarity, primal, dual, complementarity
    best_res = np.inf
    best_x = x.copy()
    best_u = u.copy()
    best_p = p.copy()
    best_lam_lo = lam_lo.copy()
    best_lam_up = lam_up.copy()
    best_s_lo = s_lo.copy()
    best_s_up = s_up.copy()
    best_sig_lo = sig_lo.copy()
    best_sig_up = sig_up.copy()
    best_res4 = res.copy()

    status = STATUS_MAX_ITER
    iters = 0

    # work arrays
    Qt = np.zeros((N + 1, nx, nx))
    St = np.zeros((N, nx, nu))
    Rt = np.zeros((N, nu, nu))
    gx = np.zeros((N + 1, nx))
    gu = np.zeros((N, nu))
    Pmat = np.zeros((N + 1, nx, nx))
    plin = np.zeros((N + 1, nx))
    Kmat = np.zeros((N, nu, nx))
    kff = np.zeros((N, nu))
    dx = np.zeros((N + 1, nx))
    du = np.zeros((N, nu))
    pnew = np.zeros((N + 1, nx))
    dlam_lo = np.zeros(M)
    dlam_up = np.zeros(M)
    ds_lo = np.zeros(M)
    ds_up = np.zeros(M)
    dsig_lo = np.zeros(M)
    dsig_up = np.zeros(M)
    dgam_lo = np.zeros(M)
    dgam_up = np.zeros(M)

    for it in range(max_iter + 1):
        # ------------------------------------------------------ row values
        for i in range(M):
            k = stage_of[i]
            v = 0.0
            for c in range(nx):
                v += C[i, c] * x[k, c]
            if k < N:
                for c in range(nu):
                    v += D[i, c] * u[k, c]
            def_val[i] = v

        # ------------------------------------------------------- residuals
        r_stat = 0.0
        r_prim = 0.0
        r_dual = 0.0
        r_comp = 0.0

        for k in range(N + 1):
            for c in range(nx):
                acc = qlin[k, c] - p[k, c]
                for t in range(nx):
                    acc += Q[k, c, t] * x[k, t]
                if k < N:
                    for t in range(nu):
                        acc += S[k, c, t] * u[k, t]
                    for t in range(nx):
                        acc += A[k, t, c] * p[k + 1, t]
                gx[k, c] = acc   # constraint terms added below, then maxed
            if k < N:
                for c in range(nu):
                    acc = rlin[k, c]
                    for t in range(nx):
                        acc += S[k, t, c] * x[k, t]
                    for t in range(nu):
                        acc += R[k, c, t] * u[k, t]
                    for t in range(nx):
                        acc += B[k, t, c] * p[k + 1, t]
                    gu[k, c] = acc

        # constraint-side contributions to residuals (and finish stationarity)
        for i in range(M):
            k = stage_of[i]
            if has_lo[i]:
                contrib = -lam_lo[i]
            else:
                contrib = 0.0
            if has_up[i]:
                contrib += lam_up[i]
            if contrib != 0.0:
                for c in range(nx):
                    gx[k, c] += C[i, c] * contrib
                if k < N:
                    for c in range(nu):
                        gu[k, c] += D[i, c] * contrib
        for k in range(N + 1):
            for c in range(nx):
                a = abs(gx[k, c])
                if a > r_stat:
                    r_stat = a
            if k < N:
                for c in range(nu):
                    a = abs(gu[k, c])
                    if a > r_stat:
                        r_stat = a

        for i in range(M):
            w = wsoft[i]
            if has_lo[i]:
                r_s = s_lo[i] - (def_val[i] - dlo[i] + sig_lo[i])
                if abs(r_s) > r_prim:
                    r_prim = abs(r_s)
                cpr = s_lo[i] * lam_lo[i]
                if abs(cpr) > r_comp:
                    r_comp = abs(cpr)
                if soft[i]:
                    rw = w - lam_lo[i] - gam_lo[i]
                    if abs(rw) > r_stat:
                        r_stat = abs(rw)
                    cps = sig_lo[i] * gam_lo[i]
                    if abs(cps) > r_comp:
                        r_comp = abs(cps)
            if has_up[i]:
                r_s = s_up[i] - (dup[i] + sig_up[i] - def_val[i])
                if abs(r_s) > r_prim:
                    r_prim = abs(r_s)
                cpr = s_up[i] * lam_up[i]
                if abs(cpr) > r_comp:
                    r_comp = abs(cpr)
                if soft[i]:
                    rw = w - lam_up[i] - gam_up[i]
                    if abs(rw) > r_stat:
                        r_stat = abs(rw)
                    cps = sig_up[i] * gam_up[i]
                    if abs(cps) > r_comp:
                        r_comp = abs(cps)

        for c in range(nx):
            a = abs(x[0, c] - x0[c])
            if a > r_prim:
                r_prim = a
        for k in range(N):
            for c in range(nx):
                acc = x[k + 1, c] - bvec[k, c]
                for t in range(nx):
                    acc -= A[k, c, t] * x[k, t]
                for t in range(nu):
                    acc -= B[k, c, t] * u[k, t]
                if abs(acc) > r_prim:
                    r_prim = abs(acc)

        res[0] = r_stat
        res[1] = r_prim
        res[2] = r_dual
        res[3] = r_comp

        worst = max(max(r_stat, r_prim), max(r_dual, r_comp))
        if worst < best_res:
            best_res = worst
            best_x[:] = x
            best_u[:] = u
            best_p[:] = p
            best_lam_lo[:] = lam_lo
            best_lam_up[:] = lam_up
            best_s_lo[:] = s_lo
            best_s_up[:] = s_up
            best_sig_lo[:] = sig_lo
            best_sig_up[:] = sig_up
            best_res4[:] = res

        if worst <= tol:
            status = STATUS_OPTIMAL
            iters = it
            break
        if it == max_iter:
            status = STATUS_MAX_ITER
            iters = it
            break

        # --------------------------------------------------- Newton assembly
        mu_t = sigma_c * mu

        for k in range(N + 1):
            for a_ in range(nx):
                for b_ in range(nx):
                    Qt[k, a_, b_] = Q[k, a_, b_]
            if k < N:
                for a_ in range(nx):
                    for b_ in range(nu):
                        St[k, a_, b_] = S[k, a_, b_]
                for a_ in range(nu):
                    for b_ in range(nu):
                        Rt[k, a_, b_] = R[k, a_, b_]
        # gx/gu currently hold full stationarity residuals incl. p terms;
        # rebuild the p-free gradient for the condensed subproblem
        for k in range(N + 1):
            for c in range(nx):
                acc = qlin[k, c]
                for t in range(nx):
                    acc += Q[k, c, t] * x[k, t]
                if k < N:
                    for t in range(nu):
                        acc += S[k, c, t] * u[k, t]
                gx[k, c] = acc
            if k < N:
                for c in range(nu):
                    acc = rlin[k, c]
                    for t in range(nx):
                        acc += S[k, t, c] * x[k, t]
                    for t in range(nu):
                        acc += R[k, c, t] * u[k, t]
                    gu[k, c] = acc

        fail = False
        for i in range(M):
            k = stage_of[i]
            w = wsoft[i]
            beta = 0.0
            rho = 0.0
            if has_lo[i]:
                r_s = s_lo[i] - (def_val[i] - dlo[i] + sig_lo[i])
                r_c = mu_t - s_lo[i] * lam_lo[i]
                if soft[i]:
                    r_cs = mu_t - sig_lo[i] * gam_lo[i]
                    r_w = w - lam_lo[i] - gam_lo[i]
                    s_hat = s_lo[i] + lam_lo[i] * sig_lo[i] / gam_lo[i]
                    r_hat = r_c + lam_lo[i] * r_s \
                        - lam_lo[i] * (r_cs - sig_lo[i] * r_w) / gam_lo[i]
                else:
                    s_hat = s_lo[i]
                    r_hat = r_c + lam_lo[i] * r_s
                beta += lam_lo[i] / s_hat
                rho -= r_hat / s_hat
                ds_lo[i] = s_hat      # stash for recovery
                dlam_lo[i] = r_hat
            if has_up[i]:
                r_s = s_up[i] - (dup[i] + sig_up[i] - def_val[i])
                r_c = mu_t - s_up[i] * lam_up[i]
                if soft[i]:
                    r_cs = mu_t - sig_up[i] * gam_up[i]
                    r_w = w - lam_up[i] - gam_up[i]
                    s_hat = s_up[i] + lam_up[i] * sig_up[i] / gam_up[i]
                    r_hat = r_c + lam_up[i] * r_s \
                        - lam_up[i] * (r_cs - sig_up[i] * r_w) / gam_up[i]
                else:
                    s_hat = s_up[i]
                    r_hat = r_c + lam_up[i] * r_s
                beta += lam_up[i] / s_hat
                rho += r_hat / s_hat
                ds_up[i] = s_hat
                dlam_up[i] = r_hat
            # lam contributions to the p-free gradient
            contrib = 0.0
            if has_lo[i]:
                contrib -= lam_lo[i]
            if has_up[i]:
                contrib += lam_up[i]
            contrib += rho
            for a_ in range(nx):
                ca = C[i, a_]
                gx[k, a_] += ca * contrib
                for b_ in range(nx):
                    Qt[k, a_, b_] += beta * ca * C[i, b_]
            if k < N:
                for a_ in range(nu):
                    da = D[i, a_]
                    gu[k, a_] += da * contrib
                    for b_ in range(nu):
                        Rt[k, a_, b_] += beta * da * D[i, b_]
                for a_ in range(nx):
                    for b_ in range(nu):
                        St[k, a_, b_] += beta * C[i, a_] * D[i, b_]

        # ------------------------------------------------- Riccati backward
        for a_ in range(nx):
            plin[N, a_] = gx[N, a_]
            for b_ in range(nx):
                Pmat[N, a_, b_] = Qt[N, a_, b_]

        PA = np.zeros((nx, nx))
        PB = np.zeros((nx, nu))
        G = np.zeros((nu, nu))
        F = np.zeros((nu, nx))
        tmp = np.zeros(nx)
        RHS = np.zeros((nu, nx + 1))
        for k in range(N - 1, -1, -1):
            for a_ in range(nx):
                for b_ in range(nx):
                    acc = 0.0
                    for t in range(nx):
                        acc += Pmat[k + 1, a_, t] * A[k, t, b_]
                    PA[a_, b_] = acc
                for b_ in range(nu):
                    acc = 0.0
                    for t in range(nx):
                        acc += Pmat[k + 1, a_, t] * B[k, t, b_]
                    PB[a_, b_] = acc
            for a_ in range(nu):
                for b_ in range(nu):
                    acc = Rt[k, a_, b_]
                    for t in range(nx):
                        acc += B[k, t, a_] * PB[t, b_]
                    G[a_, b_] = acc
                for b_ in range(nx):
                    acc = St[k, b_, a_]
                    for t in range(nx):
                        acc += B[k, t, a_] * PA[t, b_]
                    F[a_, b_] = acc
            # tmp = P_{k+1} c + plin_{k+1} with c = -r_eq_k
            req = bvecres(bvec, x, u, A, B, k, nx, nu)
            for a_ in range(nx):
                acc = plin[k + 1, a_]
                for t in range(nx):
                    acc -= Pmat[k + 1, a_, t] * req[t]
                tmp[a_] = acc
            for a_ in range(nu):
                acc = gu[k, a_]
                for t in range(nx):
                    acc += B[k, t, a_] * tmp[t]
                RHS[a_, nx] = acc
                for b_ in range(nx):
                    RHS[a_, b_] = F[a_, b_]
            X, ok = _chol_solve_sym(G, RHS)
            if not ok:
                fail = True
                break
            for a_ in range(nu):
                for b_ in range(nx):
                    Kmat[k, a_, b_] = -X[a_, b_]
                kff[k, a_] = -X[a_, nx]
            # P_k = Qt + A'PA + F'K ; plin_k = gx + A'(P c + plin+) + F'kff
            for a_ in range(nx):
                for b_ in range(nx):
                    acc = Qt[k, a_, b_]
                    for t in range(nx):
                        acc += A[k, t, a_] * PA[t, b_]
                    for t in range(nu):
                        acc += F[t, a_] * Kmat[k, t, b_]
                    Pmat[k, a_, b_] = acc
            for a_ in range(nx):
                acc = gx[k, a_]
                for t in range(nx):
                    acc += A[k, t, a_] * tmp[t]
                for t in range(nu):
                    acc += F[t, a_] * kff[k, t]
                plin[k, a_] = acc
            # symmetrize
            for a_ in range(nx):
                for b_ in range(a_ + 1, nx):
                    m_ = 0.5 * (Pmat[k, a_, b_] + Pmat[k, b_, a_])
                    Pmat[k, a_, b_] = m_
                    Pmat[k, b_, a_] = m_

        if fail:
            status = STATUS_NUMERICAL
            iters = it
            break

        # -------------------------------------------------- forward rollout
        for c in range(nx):
            dx[0, c] = x0[c] - x[0, c]
        for k in range(N):
            for a_ in range(nu):
                acc = kff[k, a_]
                for t in range(nx):
                    acc += Kmat[k, a_, t] * dx[k, t]
                du[k, a_] = acc
            req = bvecres(bvec, x, u, A, B, k, nx, nu)
            for a_ in range(nx):
                acc = -req[a_]
                for t in range(nx):
                    acc += A[k, a_, t] * dx[k, t]
                for t in range(nu):
                    acc += B[k, a_, t] * du[k, t]
                dx[k + 1, a_] = acc
        for k in range(N + 1):
            for a_ in range(nx):
                acc = plin[k, a_]
                for t in range(nx):
                    acc += Pmat[k, a_, t] * dx[k, t]
                pnew[k, a_] = acc

        # ------------------------------------------------- side recoveries
        for i in range(M):
            k = stage_of[i]
            w = wsoft[i]
            dv = 0.0
            for c in range(nx):
                dv += C[i, c] * dx[k, c]
            if k < N:
                for c in range(nu):
                    dv += D[i, c] * du[k, c]
            if has_lo[i]:
                s_hat = ds_lo[i]
                r_hat = dlam_lo[i]
                dl = (r_hat - lam_lo[i] * dv) / s_hat
                dlam_lo[i] = dl
                if soft[i]:
                    r_cs = mu_t - sig_lo[i] * gam_lo[i]
                    r_w = w - lam_lo[i] - gam_lo[i]
                    dsg = (r_cs - sig_lo[i] * r_w + sig_lo[i] * dl) / gam_lo[i]
                    dsig_lo[i] = dsg
                    dgam_lo[i] = r_w - dl
                else:
                    dsg = 0.0
                    dsig_lo[i] = 0.0
                    dgam_lo[i] = 0.0
                r_s = s_lo[i] - (def_val[i] - dlo[i] + sig_lo[i])
                ds_lo[i] = dv + dsg - r_s
            if has_up[i]:
                s_hat = ds_up[i]
                r_hat = dlam_up[i]
                dl = (r_hat + lam_up[i] * dv) / s_hat
                dlam_up[i] = dl
                if soft[i]:
                    r_cs = mu_t - sig_up[i] * gam_up[i]
                    r_w = w - lam_up[i] - gam_up[i]
                    dsg = (r_cs - sig_up[i] * r_w + sig_up[i] * dl) / gam_up[i]
                    dsig_up[i] = dsg
                    dgam_up[i] = r_w - dl
                else:
                    dsg = 0.0
                    dsig_up[i] = 0.0
                    dgam_up[i] = 0.0
                r_s = s_up[i] - (dup[i] + sig_up[i] - def_val[i])
                ds_up[i] = -dv + dsg - r_s

        # ------------------------------------------ step size and update
        alpha = 1.0
        if n_pairs > 0:
            frac = 0.995
            for i in range(M):
                if has_lo[i]:
                    if ds_lo[i] < 0.0:
                        alpha = min(alpha, -frac * s_lo[i] / ds_lo[i])
                    if dlam_lo[i] < 0.0:
                        alpha = min(alpha, -frac * lam_lo[i] / dlam_lo[i])
                    if soft[i]:
                        if dsig_lo[i] < 0.0:
                            alpha = min(alpha, -frac * sig_lo[i] / dsig_lo[i])
                        if dgam_lo[i] < 0.0:
                            alpha = min(alpha, -frac * gam_lo[i] / dgam_lo[i])
                if has_up[i]:
                    if ds_up[i] < 0.0:
                        alpha = min(alpha, -frac * s_up[i] / ds_up[i])
                    if dlam_up[i] < 0.0:
                        alpha = min(alpha, -frac * lam_up[i] / dlam_up[i])
                    if soft[i]:
                        if dsig_up[i] < 0.0:
                            alpha = min(alpha, -frac * sig_up[i] / dsig_up[i])
                        if dgam_up[i] < 0.0:
                            alpha = min(alpha, -frac * gam_up[i] / dgam_up[i])
            # keep the complementarity measure monotonically decreasing
            for _bt in range(40):
                acc = 0.0
                for i in range(M):
                    if has_lo[i]:
                        acc += (s_lo[i] + alpha * ds_lo[i]) \
                            * (lam_lo[i] + alpha * dlam_lo[i])
                        if soft[i]:
                            acc += (sig_lo[i] + alpha * dsig_lo[i]) \
                                * (gam_lo[i] + alpha * dgam_lo[i])
                    if has_up[i]:
                        acc += (s_up[i] + alpha * ds_up[i]) \
                            * (lam_up[i] + alpha * dlam_up[i])
                        if soft[i]:
                            acc += (sig_up[i] + alpha * dsig_up[i]) \
                                * (gam_up[i] + alpha * dgam_up[i])
                mu_new = acc / n_pairs
                if mu_new < mu or mu <= tol * 1e-3:
                    break
                alpha *= 0.5
            mu = mu_new

        for k in range(N + 1):
            for c in range(nx):
                x[k, c] += alpha * dx[k, c]
                p[k, c] += alpha * (pnew[k, c] - p[k, c])
        for k in range(N):
            for c in range(nu):
                u[k, c] += alpha * du[k, c]
        for i in range(M):
            if has_lo[i]:
                s_lo[i] += alpha * ds_lo[i]
                lam_lo[i] += alpha * dlam_lo[i]
                if soft[i]:
                    sig_lo[i] += alpha * dsig_lo[i]
                    gam_lo[i] += alpha * dgam_lo[i]
            if has_up[i]:
                s_up[i] += alpha * ds_up[i]
                lam_up[i] += alpha * dlam_up[i]
                if soft[i]:
                    sig_up[i] += alpha * dsig_up[i]
                    gam_up[i] += alpha * dgam_up[i]

        if n_mu <= max_iter:
            mu_hist[n_mu] = mu
            n_mu += 1

    if status != STATUS_OPTIMAL:
        # hand back the best iterate seen
        x = best_x
        u = best_u
        p = best_p
        lam_lo = best_lam_lo
        lam_up = best_lam_up
        s_lo = best_s_lo
        s_up = best_s_up
        sig_lo = best_sig_lo
        sig_up = best_sig_up
        res = best_res4

    return (x, u, p, lam_lo, lam_up, s_lo, s_up, sig_lo, sig_up,
            status, iters, res, mu_hist, n_mu)


@njit(cache=True)
def bvecres(bvec, x, u, A, B, k, nx, nu):
    """Dynamics defect r_eq_k = x_{k+1} - A x_k - B u_k - b_k."""
    out = np.zeros(nx)
    for c in range(nx):
        acc = x[k + 1, c] - bvec[k, c]
        for t in range(nx):
            acc -= A[k, c, t] * x[k, t]
        for t in range(nu):
            acc -= B[k, c, t] * u[k, t]
        out[c] = acc
    return out
