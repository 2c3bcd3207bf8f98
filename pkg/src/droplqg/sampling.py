"""Reproducible primitive randomness.

Every primitive source (x0 of subsystem i; w of subsystem i at step t; the
channel bit of subsystem i at step t) gets its own counter-based Philox
substream, keyed off the root seed. Within a source, replication r always
occupies the same positions of the stream, so draws are identical no matter
how many replications are requested or how work is later chunked across
threads. This keeps the primitives exactly independent and makes every run a
pure function of (spec, seed, reps, family).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NumericalError
from .model import SystemSpec

_SRC_X0 = 0
_SRC_W = 1
_SRC_GAMMA = 2


def _source_rng(seed: int, tag: int, i: int, t: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(tag, i, t))
    return np.random.Generator(np.random.Philox(ss))


def psd_sqrt(sigma: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition (works for singular
    covariances; small negative eigenvalues from rounding are clipped)."""
    sigma = np.asarray(sigma, float)
    if sigma.size == 0:
        return sigma.copy()
    sym = 0.5 * (sigma + sigma.T)
    eigs, vecs = np.linalg.eigh(sym)
    scale = max(1.0, float(np.max(np.abs(eigs))))
    if eigs[0] < -1e-9 * scale:
        raise NumericalError(f"covariance is not PSD (min eigenvalue {eigs[0]:.3e})")
    root = vecs * np.sqrt(np.clip(eigs, 0.0, None))
    return root @ vecs.T


def _standardized(rng: np.random.Generator, family: str, shape) -> np.ndarray:
    """Zero-mean, unit-variance i.i.d. samples from the requested family."""
    if family == "gaussian":
        return rng.standard_normal(shape)
    if family == "uniform":
        return (rng.random(shape) - 0.5) * np.sqrt(12.0)
    if family == "rademacher-scaled":
        return rng.integers(0, 2, size=shape).astype(float) * 2.0 - 1.0
    raise ValueError(f"unknown noise family {family!r}")


@dataclass(frozen=True)
class Draws:
    """All primitive randomness for a batch of replications.

    x0: (reps, n) initial states; w: (T, reps, n) process noise;
    gamma: (T+1, reps, N) channel bits (1 = delivered).
    """

    seed: int
    reps: int
    family: str
    x0: np.ndarray
    w: np.ndarray
    gamma: np.ndarray


def draw_primitives(spec: SystemSpec, seed: int, reps: int,
                    family: str | None = None) -> Draws:
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    family = spec.noise_family if family is None else family
    n, T, N = spec.n_state, spec.horizon, spec.N

    x0 = np.zeros((reps, n))
    w = np.zeros((T, reps, n))
    gamma = np.zeros((T + 1, reps, N), dtype=np.uint8)

    for i in range(N):
        s = spec.state_slice(i + 1)
        root = psd_sqrt(spec.sigma_x0[i])
        rng = _source_rng(seed, _SRC_X0, i)
        x0[:, s] = _standardized(rng, family, (reps, root.shape[0])) @ root.T

        for t in range(T):
            root_t = psd_sqrt(spec.sigma_w[i][t])
            rng = _source_rng(seed, _SRC_W, i, t)
            w[t, :, s] = _standardized(rng, family, (reps, root_t.shape[0])) @ root_t.T

        p = spec.drop_prob[i]
        for t in range(T + 1):
            rng = _source_rng(seed, _SRC_GAMMA, i, t)
            gamma[t, :, i] = (rng.random(reps) >= p).astype(np.uint8)

    return Draws(seed=int(seed), reps=int(reps), family=family,
                 x0=x0, w=w, gamma=gamma)
