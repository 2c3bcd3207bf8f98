"""Backend selection and the flat array bundle consumed by both rollout kernels.

The compiled Cython kernel is preferred when the extension built; the numpy
backend is the fallback. Override with the DROPLQG_BACKEND environment
variable ("compiled" or "numpy") or per call via the backend argument.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import _kernel_np

try:
    from . import _kernel as _kernel_c
except ImportError:
    _kernel_c = None


def available_backends() -> tuple:
    return ("numpy",) if _kernel_c is None else ("compiled", "numpy")


def default_backend() -> str:
    env = os.environ.get("DROPLQG_BACKEND")
    if env:
        if env not in ("compiled", "numpy"):
            raise ValueError(f"DROPLQG_BACKEND must be 'compiled' or 'numpy', got {env!r}")
        if env == "compiled" and _kernel_c is None:
            raise RuntimeError("DROPLQG_BACKEND=compiled but the extension is not built")
        return env
    return "compiled" if _kernel_c is not None else "numpy"


@dataclass(frozen=True)
class BatchProblem:
    """Everything a rollout kernel needs, as C-contiguous float64 arrays.

    Strategy gains are embedded into full-size matrices: Kc[t] maps the
    stacked estimate to the stacked action vector (remote block first), and
    Lt[t] maps the stacked error to the stacked action vector with zero
    remote rows and zero cross-subsystem blocks. Both are applied with a
    leading minus. The decomposition arrays (P0 .. Pi) are None unless the
    per-replication cost-decomposition terms were requested.
    """

    n: int
    m: int
    N: int
    T: int
    state_off: np.ndarray   # (N+1,) int64
    A: np.ndarray           # (n, n)
    B: np.ndarray           # (n, m)
    Kc: np.ndarray          # (T, m, n)
    Lt: np.ndarray          # (T, m, n)
    Q: np.ndarray           # (T, n, n)
    Mx: np.ndarray          # (T, n, m)
    R: np.ndarray           # (T, m, m)
    QT: np.ndarray          # (n, n)
    P0: np.ndarray = None       # (n, n)
    Ptil0: np.ndarray = None    # (n, n) block-diagonal embed of Ptilde^i_0
    Kopt: np.ndarray = None     # (T, m, n)
    Delta: np.ndarray = None    # (T, m, m)
    Ktil: np.ndarray = None     # (T, m, n) embedded optimal error gains
    Dtil: np.ndarray = None     # (N, T, m, m) embedded Delta_tilde^i
    Pi: np.ndarray = None       # (T, n, n) block-diagonal embed of Pi^i_{t+1}


def _c(a):
    return np.ascontiguousarray(np.asarray(a, dtype=float))


def embed_local_gains(spec, local_gains_t) -> np.ndarray:
    """Put per-subsystem error gains into one (m, n) matrix with the right
    zero pattern (remote rows zero, block i at (action-i rows, state-i cols))."""
    out = np.zeros((spec.n_action, spec.n_state))
    for i in range(spec.N):
        out[spec.action_slice(i + 1), spec.state_slice(i + 1)] = local_gains_t[i]
    return out


def _embed_state_blockdiag(spec, blocks) -> np.ndarray:
    out = np.zeros((spec.n_state, spec.n_state))
    for i in range(spec.N):
        s = spec.state_slice(i + 1)
        out[s, s] = blocks[i]
    return out


def _embed_action_block(spec, i, block) -> np.ndarray:
    out = np.zeros((spec.n_action, spec.n_action))
    s = spec.action_slice(i + 1)
    out[s, s] = block
    return out


def build_batch_problem(spec, strategy, globals_, schedule=None) -> BatchProblem:
    """Flatten (spec, strategy[, schedule]) into kernel arrays. Passing a
    schedule enables the per-replication decomposition terms."""
    T, N = spec.horizon, spec.N
    n, m = spec.n_state, spec.n_action

    Kc = np.stack([_c(strategy.common[t]) for t in range(T)])
    Lt = np.stack([embed_local_gains(spec, [strategy.local[i][t] for i in range(N)])
                   for t in range(T)])
    kw = {}
    if schedule is not None:
        kw["P0"] = _c(schedule.P[0])
        kw["Ptil0"] = _c(_embed_state_blockdiag(
            spec, [schedule.P_tilde[i][0] for i in range(N)]))
        kw["Kopt"] = np.stack([_c(schedule.K[t]) for t in range(T)])
        kw["Delta"] = np.stack([_c(schedule.Delta[t]) for t in range(T)])
        kw["Ktil"] = np.stack(
            [embed_local_gains(spec, [schedule.K_tilde[i][t] for i in range(N)])
             for t in range(T)])
        kw["Dtil"] = np.stack([
            np.stack([_embed_action_block(spec, i, schedule.Delta_tilde[i][t])
                      for t in range(T)])
            for i in range(N)])
        kw["Pi"] = np.stack([_c(_embed_state_blockdiag(
            spec, [schedule.Pi[i][t + 1] for i in range(N)])) for t in range(T)])

    return BatchProblem(
        n=n, m=m, N=N, T=T,
        state_off=spec.state_offsets(),
        A=_c(globals_.A), B=_c(globals_.B),
        Kc=Kc, Lt=Lt,
        Q=np.stack([_c(spec.Q[t]) for t in range(T)]),
        Mx=np.stack([_c(spec.M[t]) for t in range(T)]),
        R=np.stack([_c(spec.R[t]) for t in range(T)]),
        QT=_c(spec.Q_terminal),
        **kw,
    )


def rollout_batch(prob: BatchProblem, x0, w, gamma, collect_states=False,
                  want_decomp=False, backend=None):
    """Dispatch one chunk of replications to the selected kernel."""
    if want_decomp and prob.P0 is None:
        raise ValueError("decomposition terms need a BatchProblem built with a schedule")
    name = backend or default_backend()
    if name == "numpy":
        return _kernel_np.rollout_batch(prob, x0, w, gamma,
                                        collect_states=collect_states,
                                        want_decomp=want_decomp)
    if name == "compiled":
        if _kernel_c is None:
            raise RuntimeError("compiled backend requested but the extension is not built")
        return _kernel_c.rollout_batch(prob, np.ascontiguousarray(x0),
                                       np.ascontiguousarray(w),
                                       np.ascontiguousarray(gamma),
                                       collect_states, want_decomp)
    raise ValueError(f"unknown backend {name!r}")
