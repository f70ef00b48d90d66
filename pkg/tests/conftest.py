import numpy as np
import pytest

from urbanmpc import VehicleParams


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def random_ocp_qp(rng, N=None, nx=None, nu=None, with_rows=True,
                  soft_weight=0.0, margin_lo=0.1, margin_hi=2.0):
    """Random feasible OCP-QP built around a sampled interior trajectory.

    Dynamics are rolled out from a random x0 with random inputs, then the
    row bounds are placed strictly around the realized row values, so an
    interior point exists by construction.
    """
    from urbanmpc import OcpQp, StageRows

    N = int(rng.integers(2, 21)) if N is None else N
    nx = int(rng.integers(2, 7)) if nx is None else nx
    nu = int(rng.integers(1, 3)) if nu is None else nu

    A = rng.standard_normal((N, nx, nx)) * 0.3
    A += np.eye(nx) * 0.7
    B = rng.standard_normal((N, nx, nu)) * 0.5
    b = rng.standard_normal((N, nx)) * 0.2

    Q = np.zeros((N + 1, nx, nx))
    for k in range(N + 1):
        m = rng.standard_normal((nx, nx)) * 0.4
        Q[k] = m @ m.T + 0.1 * np.eye(nx)
    S = rng.standard_normal((N, nx, nu)) * 0.05
    R = np.zeros((N, nu, nu))
    for k in range(N):
        m = rng.standard_normal((nu, nu)) * 0.3
        R[k] = m @ m.T + 0.5 * np.eye(nu)
    q = rng.standard_normal((N + 1, nx)) * 0.3
    r = rng.standard_normal((N, nu)) * 0.3

    x0 = rng.standard_normal(nx) * 0.5
    xs = [x0]
    us = []
    for k in range(N):
        u = rng.standard_normal(nu) * 0.3
        us.append(u)
        xs.append(A[k] @ xs[k] + B[k] @ u + b[k])
    xs = np.asarray(xs)
    us = np.asarray(us)

    rows = None
    if with_rows:
        rows = []
        for k in range(N + 1):
            m_rows = int(rng.integers(1, 4))
            C = rng.standard_normal((m_rows, nx))
            D = np.zeros((m_rows, nu)) if k == N else rng.standard_normal((m_rows, nu))
            v = C @ xs[k] + (D @ us[k] if k < N else 0.0)
            lo = v - rng.uniform(margin_lo, margin_hi, m_rows)
            up = v + rng.uniform(margin_lo, margin_hi, m_rows)
            # disable a side now and then
            kill = rng.random(m_rows)
            lo = np.where(kill < 0.2, -np.inf, lo)
            up = np.where(kill > 0.8, np.inf, up)
            w = np.full(m_rows, soft_weight)
            rows.append(StageRows(C=C, D=D, dlo=lo, dup=up, soft_weight=w))
    return OcpQp(A, B, b, Q, S, R, q, r, x0, rows)
