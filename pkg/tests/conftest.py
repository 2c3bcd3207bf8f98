import numpy as np
import pytest

import droplqg as dl

BACKENDS = dl.available_backends()


@pytest.fixture(params=BACKENDS)
def backend(request):
    return request.param


def scalar_pair_spec(p=(0.3, 0.7), T=3, family="gaussian", sx=(1.0, 2.0),
                     sw=(0.5, 1.0), M=None, A=(1.0, 0.8), Brem=(1.0, 0.5)):
    """The workhorse two-subsystem scalar instance."""
    if M is None:
        M = np.zeros((2, 3))
    return dl.make_spec(
        A_blocks=list(A), B_remote=list(Brem), B_local=[1.0, 1.0],
        Q=[[2.0, 0.2], [0.2, 1.5]], M=M, R=np.eye(3),
        Q_terminal=np.eye(2), sigma_x0=list(sx), sigma_w=list(sw),
        drop_prob=list(p), horizon=T, noise_family=family)


def triple_spec(p=(0.2, 0.5, 0.8), T=3):
    Q = np.array([[2.0, 0.2, 0.1], [0.2, 1.5, 0.0], [0.1, 0.0, 1.8]])
    return dl.make_spec(
        A_blocks=[1.0, 0.9, 1.1], B_remote=[1.0, 0.5, 0.3],
        B_local=[1.0, 1.0, 1.0], Q=Q, M=np.zeros((3, 4)), R=np.eye(4),
        Q_terminal=np.eye(3), sigma_x0=[1.0, 1.5, 0.7],
        sigma_w=[0.5, 0.8, 0.6], drop_prob=list(p), horizon=T)


def random_joint_cost(rng, n, m, r_shift=0.5):
    """Random symmetric [[Q,M],[M',R]] that is PSD with R strictly PD."""
    C = rng.standard_normal((n + m, n + m))
    J = C.T @ C
    J[n:, n:] += r_shift * np.eye(m)
    return J[:n, :n], J[:n, n:], J[n:, n:]


def random_psd(rng, n, singular=False):
    k = max(1, n - 1) if singular else n
    C = rng.standard_normal((k, n))
    return C.T @ C


def random_instance(rng, N=2, max_dim=2, T=3, p=None, singular_cov=False):
    """Random valid problem instance with subsystem dims up to max_dim."""
    dims = [int(rng.integers(1, max_dim + 1)) for _ in range(N)]
    m0 = int(rng.integers(0, 2))
    mloc = [int(rng.integers(1, max_dim + 1)) for _ in range(N)]
    n = sum(dims)
    m = m0 + sum(mloc)
    Qs, Ms, Rs = [], [], []
    for _ in range(T):
        Q, M, R = random_joint_cost(rng, n, m)
        Qs.append(Q)
        Ms.append(M)
        Rs.append(R)
    if p is None:
        p = rng.uniform(0.0, 1.0, size=N)
    return dl.make_spec(
        A_blocks=[rng.standard_normal((d, d)) * 0.8 for d in dims],
        B_remote=[rng.standard_normal((d, m0)) for d in dims],
        B_local=[rng.standard_normal((d, mi)) for d, mi in zip(dims, mloc)],
        Q=Qs, M=Ms, R=Rs,
        Q_terminal=random_psd(rng, n),
        sigma_x0=[random_psd(rng, d, singular_cov) for d in dims],
        sigma_w=[random_psd(rng, d, singular_cov) for d in dims],
        drop_prob=list(np.asarray(p, float)),
        horizon=T)
