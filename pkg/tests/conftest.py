import numpy as np
import pytest

from mgempc.miqp import MiqpProblem


def make_miqp(Q, c, A_in=None, b_in=None, A_eq=None, b_eq=None, lb=None, ub=None,
              binary=(), const0=0.0) -> MiqpProblem:
    n = len(c)

    def arr2(a):
        return np.asarray(a, dtype=float).reshape(-1, n)

    return MiqpProblem(
        Q=np.asarray(Q, dtype=float), c=np.asarray(c, dtype=float), const0=const0,
        A_eq=arr2(A_eq) if A_eq is not None else np.zeros((0, n)),
        b_eq=np.asarray(b_eq, dtype=float).ravel() if b_eq is not None else np.zeros(0),
        A_in=arr2(A_in) if A_in is not None else np.zeros((0, n)),
        b_in=np.asarray(b_in, dtype=float).ravel() if b_in is not None else np.zeros(0),
        lb=np.asarray(lb, dtype=float) if lb is not None else np.full(n, -np.inf),
        ub=np.asarray(ub, dtype=float) if ub is not None else np.full(n, np.inf),
        binary_idx=np.asarray(binary, dtype=int))


def random_psd_miqp(rng, n=7, n_binary=4, m_in=5, flat=3):
    """Random bounded MIQP on [0, 1]^n with a partially flat PSD objective."""
    M = rng.normal(size=(n, n))
    w, V = np.linalg.eigh((M.T @ M + M @ M.T) / 2)
    w = np.clip(w, 0.0, None)
    w[:flat] = 0.0
    Q = V @ np.diag(w) @ V.T
    Q = (Q + Q.T) / 2
    c = 2.0 * rng.normal(size=n)
    x0 = rng.uniform(0, 1, size=n)
    A_in = rng.normal(size=(m_in, n))
    b_in = A_in @ x0 + rng.uniform(0.05, 0.8, size=m_in)
    return make_miqp(Q, c, A_in, b_in, lb=np.zeros(n), ub=np.ones(n),
                     binary=list(range(n_binary)))


@pytest.fixture
def reference_params():
    from mgempc import grid
    return grid.reference_params()
