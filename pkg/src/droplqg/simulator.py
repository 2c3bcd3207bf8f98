"""Closed-loop rollout of plant + channels + controllers, single trajectories
and Monte Carlo batches.

Single trajectories go through the estimator module step by step and keep a
full record. Batches go through a rollout kernel (compiled or numpy) in fixed
chunks; all primitive randomness is drawn up front from per-source substreams,
so results are bit-identical for any worker count.
"""

from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._backend import build_batch_problem, default_backend, rollout_batch
from .errors import StructuralError
from .estimator import ControlDecision, EstimatorState, estimator_init, \
    estimator_predict, estimator_update
from .model import GlobalMatrices, SystemSpec, assemble_global
from .sampling import Draws, draw_primitives

CHUNK_REPS = 8192  # fixed chunk size; part of the algorithm, not a tuning knob


# ---------------------------------------------------------------------------
# Strategies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LinearStrategy:
    """u = -common[t] @ xhat for the stacked common part (remote action plus
    every local common part), and utilde^i = -local[i][t] @ xtilde^i. The
    optimal strategy is common = K, local = K_tilde."""

    common: tuple   # [t] -> (m, n)
    local: tuple    # [i][t] -> (m_i, n_i)


def validate_strategy(spec: SystemSpec, strategy: LinearStrategy) -> None:
    T, n, m = spec.horizon, spec.n_state, spec.n_action
    if len(strategy.common) != T:
        raise StructuralError(f"strategy has {len(strategy.common)} common gains, "
                              f"expected {T}")
    for t, k in enumerate(strategy.common):
        if np.shape(k) != (m, n):
            raise StructuralError(f"common gain at t={t} has shape {np.shape(k)}, "
                                  f"expected {(m, n)}")
    if len(strategy.local) != spec.N:
        raise StructuralError(f"strategy has {len(strategy.local)} local gain "
                              f"sequences, expected {spec.N}")
    for i in range(spec.N):
        mi = spec.local_action_dims[i]
        ni = spec.state_dims[i]
        if len(strategy.local[i]) != T:
            raise StructuralError(f"local gains for subsystem {i + 1} cover "
                                  f"{len(strategy.local[i])} steps, expected {T}")
        for t, k in enumerate(strategy.local[i]):
            if np.shape(k) != (mi, ni):
                raise StructuralError(
                    f"local gain ({i + 1}, t={t}) has shape {np.shape(k)}, "
                    f"expected {(mi, ni)}")


def optimal_strategy(schedule) -> LinearStrategy:
    return LinearStrategy(common=tuple(schedule.K),
                          local=tuple(tuple(seq) for seq in schedule.K_tilde))


def zero_strategy(spec: SystemSpec) -> LinearStrategy:
    n, m, T = spec.n_state, spec.n_action, spec.horizon
    z = np.zeros((m, n))
    return LinearStrategy(
        common=tuple(z for _ in range(T)),
        local=tuple(tuple(np.zeros((spec.local_action_dims[i], spec.state_dims[i]))
                          for _ in range(T)) for i in range(spec.N)))


def random_strategy(spec: SystemSpec, seed: int, scale: float = 0.5) -> LinearStrategy:
    rng = np.random.default_rng(seed)
    n, m, T = spec.n_state, spec.n_action, spec.horizon
    return LinearStrategy(
        common=tuple(scale * rng.standard_normal((m, n)) for _ in range(T)),
        local=tuple(tuple(
            scale * rng.standard_normal((spec.local_action_dims[i], spec.state_dims[i]))
            for _ in range(T)) for i in range(spec.N)))


def strategy_controls(strategy: LinearStrategy, t: int, state: EstimatorState,
                      spec: SystemSpec) -> ControlDecision:
    """Evaluate an arbitrary linear strategy; exposes the common part so the
    estimator can replicate it."""
    xhat = state.x_hat_stacked()
    common = -(np.asarray(strategy.common[t]) @ xhat)
    u_remote = common[spec.action_slice(0)]
    u_hat = tuple(common[spec.action_slice(i + 1)] for i in range(spec.N))
    u_tilde = tuple(-(np.asarray(strategy.local[i][t]) @ state.x_tilde[i])
                    for i in range(spec.N))
    u_local = tuple(h + tl for h, tl in zip(u_hat, u_tilde))
    return ControlDecision(u_remote=u_remote, u_hat=u_hat,
                           u_tilde=u_tilde, u_local=u_local)


# ---------------------------------------------------------------------------
# Elementary pieces
# ---------------------------------------------------------------------------

def channel_output(x, gamma):
    """Erasure channel: the state itself on delivery, None on a drop. A zero
    state is a real packet, distinct from a blank."""
    if gamma not in (0, 1):
        raise ValueError(f"gamma must be 0 or 1, got {gamma!r}")
    return np.array(x, float, copy=True) if gamma == 1 else None


def plant_step(x, u, w, globals_: GlobalMatrices):
    return globals_.A @ np.asarray(x, float) + globals_.B @ np.asarray(u, float) \
        + np.asarray(w, float)


def stage_cost(x, u, Q, M, R) -> float:
    x = np.asarray(x, float).reshape(-1)
    u = np.asarray(u, float).reshape(-1)
    return float(x @ Q @ x + 2.0 * (x @ M @ u) + u @ R @ u)


# ---------------------------------------------------------------------------
# Single trajectory
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TrajectoryRecord:
    seed: int
    rep: int
    x: np.ndarray           # (T+1, n)
    u: np.ndarray           # (T, m)
    gamma: np.ndarray       # (T+1, N)
    z: tuple                # [t][i] -> vector or None (blank)
    x_hat: np.ndarray       # (T+1, n)
    x_tilde: np.ndarray     # (T+1, n)
    stage_costs: np.ndarray  # (T,)
    terminal_cost: float
    total_cost: float


def run_trajectory(spec: SystemSpec, strategy: LinearStrategy, seed: int,
                   rep: int = 0, draws: Draws | None = None) -> TrajectoryRecord:
    """One closed-loop rollout. Draws come from the same substreams as
    monte_carlo, so replication ``rep`` here reproduces replication ``rep``
    of a batch with the same seed."""
    validate_strategy(spec, strategy)
    if draws is None:
        draws = draw_primitives(spec, seed, rep + 1)
    g = assemble_global(spec)
    T, n, N = spec.horizon, spec.n_state, spec.N
    soff = spec.state_offsets()

    def split(vec):
        return [vec[soff[i]:soff[i + 1]] for i in range(N)]

    x = draws.x0[rep].copy()
    gamma0 = draws.gamma[0, rep]
    est = estimator_init(split(x), gamma0)

    xs = np.empty((T + 1, n))
    us = np.empty((T, spec.n_action))
    xhat = np.empty((T + 1, n))
    xtil = np.empty((T + 1, n))
    zs = []
    stage = np.empty(T)
    xs[0] = x
    xhat[0] = est.x_hat_stacked()
    xtil[0] = est.x_tilde_stacked()
    zs.append(tuple(channel_output(b, int(gb))
                    for b, gb in zip(split(x), gamma0)))

    for t in range(T):
        dec = strategy_controls(strategy, t, est, spec)
        u = dec.stacked()
        us[t] = u
        stage[t] = stage_cost(x, u, spec.Q[t], spec.M[t], spec.R[t])

        predicted = estimator_predict(est, dec.u_remote, dec.u_hat, spec)
        w = draws.w[t, rep]
        x = plant_step(x, u, w, g)
        gam = draws.gamma[t + 1, rep]
        z = tuple(channel_output(b, int(gb)) for b, gb in zip(split(x), gam))
        est = estimator_update(est, predicted, z, gam, split(x))

        xs[t + 1] = x
        xhat[t + 1] = est.x_hat_stacked()
        xtil[t + 1] = est.x_tilde_stacked()
        zs.append(z)

    terminal = float(x @ spec.Q_terminal @ x)
    total = float(np.sum(stage) + terminal)
    return TrajectoryRecord(
        seed=int(seed), rep=int(rep), x=xs, u=us,
        gamma=draws.gamma[:, rep].copy(), z=tuple(zs),
        x_hat=xhat, x_tilde=xtil, stage_costs=stage,
        terminal_cost=terminal, total_cost=total)


def trajectory_to_csv(record: TrajectoryRecord, spec: SystemSpec, fh) -> None:
    """Columns: t, x[*], u[*], gamma[*], z[*] (blank cells for drops),
    xhat[*], xtilde[*], stage_cost. The row at t = T carries the terminal
    cost and empty action cells."""
    n, m, N, T = spec.n_state, spec.n_action, spec.N, spec.horizon
    soff = spec.state_offsets()
    writer = csv.writer(fh, lineterminator="\n")
    header = (["t"] + [f"x{j}" for j in range(n)] + [f"u{j}" for j in range(m)]
              + [f"gamma{i + 1}" for i in range(N)] + [f"z{j}" for j in range(n)]
              + [f"xhat{j}" for j in range(n)] + [f"xtilde{j}" for j in range(n)]
              + ["stage_cost"])
    writer.writerow(header)
    for t in range(T + 1):
        z_cells = [""] * n
        for i in range(N):
            zi = record.z[t][i]
            if zi is not None:
                for k, v in enumerate(zi):
                    z_cells[soff[i] + k] = repr(float(v))
        u_cells = ([repr(float(v)) for v in record.u[t]] if t < T else [""] * m)
        cost = record.stage_costs[t] if t < T else record.terminal_cost
        writer.writerow(
            [t] + [repr(float(v)) for v in record.x[t]] + u_cells
            + [int(v) for v in record.gamma[t]] + z_cells
            + [repr(float(v)) for v in record.x_hat[t]]
            + [repr(float(v)) for v in record.x_tilde[t]]
            + [repr(float(cost))])


# ---------------------------------------------------------------------------
# Monte Carlo batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CostReport:
    reps: int
    mean: float
    se: float
    seed: int
    se_defined: bool = True
    backend: str = "numpy"
    decomposition: dict | None = None

    def to_json_dict(self) -> dict:
        out = {"reps": self.reps, "mean": self.mean, "se": self.se,
               "seed": self.seed, "se_defined": self.se_defined,
               "backend": self.backend}
        if self.decomposition is not None:
            out["decomposition"] = self.decomposition
        return out


@dataclass(frozen=True)
class Ensemble:
    """Per-step state estimates and errors for a whole batch, for the
    statistical diagnostics."""

    spec: SystemSpec
    x_hat: np.ndarray    # (T+1, reps, n)
    x_tilde: np.ndarray  # (T+1, reps, n)
    gamma: np.ndarray    # (T+1, reps, N)


def _run_batch(spec, strategy, reps, seed, family=None, workers=1,
               backend=None, collect_states=False, schedule=None):
    """Draw everything up front, then roll chunks (possibly on a thread pool)
    and concatenate in chunk order. Returns (dict of arrays, draws)."""
    validate_strategy(spec, strategy)
    draws = draw_primitives(spec, seed, reps, family)
    g = assemble_global(spec)
    prob = build_batch_problem(spec, strategy, g, schedule=schedule)
    want_decomp = schedule is not None

    starts = list(range(0, reps, CHUNK_REPS))

    def run_chunk(lo):
        hi = min(lo + CHUNK_REPS, reps)
        return rollout_batch(prob, draws.x0[lo:hi], draws.w[:, lo:hi],
                             draws.gamma[:, lo:hi],
                             collect_states=collect_states,
                             want_decomp=want_decomp, backend=backend)

    if workers <= 1 or len(starts) == 1:
        parts = [run_chunk(lo) for lo in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(run_chunk, starts))

    merged = {}
    for key in parts[0]:
        axis = 1 if key in ("xhat", "xtilde") else 0
        merged[key] = np.concatenate([p[key] for p in parts], axis=axis)
    return merged, draws


def monte_carlo(spec: SystemSpec, strategy: LinearStrategy, reps: int,
                seed: int, family: str | None = None, workers: int = 1,
                backend: str | None = None) -> CostReport:
    """Mean and standard error of the total cost over independent
    replications. Deterministic in (spec, strategy, reps, seed, family),
    regardless of worker count or chunking."""
    if reps < 1:
        raise ValueError(f"reps must be >= 1, got {reps}")
    out, _ = _run_batch(spec, strategy, reps, seed, family=family,
                        workers=workers, backend=backend)
    total = out["total"]
    mean = float(np.sum(total) / reps)
    if reps > 1:
        se = float(np.std(total, ddof=1) / np.sqrt(reps))
        se_defined = True
    else:
        se, se_defined = 0.0, False
    return CostReport(reps=reps, mean=mean, se=se, seed=int(seed),
                      se_defined=se_defined,
                      backend=backend or default_backend())


def simulate_ensemble(spec: SystemSpec, strategy: LinearStrategy, reps: int,
                      seed: int, family: str | None = None, workers: int = 1,
                      backend: str | None = None):
    """monte_carlo plus the per-step ensembles needed by the orthogonality
    and estimator-property checks."""
    out, draws = _run_batch(spec, strategy, reps, seed, family=family,
                            workers=workers, backend=backend,
                            collect_states=True)
    total = out["total"]
    mean = float(np.sum(total) / reps)
    se = float(np.std(total, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    report = CostReport(reps=reps, mean=mean, se=se, seed=int(seed),
                        se_defined=reps > 1,
                        backend=backend or default_backend())
    ens = Ensemble(spec=spec, x_hat=out["xhat"], x_tilde=out["xtilde"],
                   gamma=draws.gamma)
    return report, ens


def strategy_to_json_dict(strategy: LinearStrategy) -> dict:
    return {
        "common": [np.asarray(k).tolist() for k in strategy.common],
        "local": [[np.asarray(k).tolist() for k in seq] for seq in strategy.local],
    }


def strategy_from_json(doc: dict, spec: SystemSpec) -> LinearStrategy:
    if not isinstance(doc, dict) or "common" not in doc or "local" not in doc:
        raise StructuralError("strategy document needs 'common' and 'local' keys")
    strategy = LinearStrategy(
        common=tuple(np.asarray(k, float) for k in doc["common"]),
        local=tuple(tuple(np.asarray(k, float) for k in seq)
                    for seq in doc["local"]))
    validate_strategy(spec, strategy)
    return strategy
