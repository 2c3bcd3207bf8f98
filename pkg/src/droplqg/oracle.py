"""Independent ground truth.

exact_cost_enumerated conditions on the full channel realization: given the
sequence of drop/deliver bits everything in the closed loop is linear, so the
second moment of (state, estimate) propagates exactly and expected stage
costs are trace forms against it. Weighting the conditional costs by the
sequence probabilities gives the exact expected cost of any linear strategy,
for any zero-mean noise family with the specified covariances.

centralized_lqr is written as its own recursion on purpose: it cross-checks
the synthesis module and must not share its code path.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._backend import embed_local_gains
from .errors import EnumerationCapError
from .model import SystemSpec, assemble_global, sigma_w_global, sigma_x_global
from .simulator import LinearStrategy, validate_strategy

DEFAULT_CAP_BITS = 20


@dataclass(frozen=True)
class EnumeratedCost:
    value: float
    probs: np.ndarray        # (nseq,)
    cond_costs: np.ndarray   # (nseq,)
    gammas: np.ndarray       # (nseq, T+1, N) uint8

    def to_csv_rows(self):
        for k in range(self.probs.shape[0]):
            bits = "".join(str(int(b)) for b in self.gammas[k].reshape(-1))
            yield bits, float(self.probs[k]), float(self.cond_costs[k])


def _gamma_grid(spec: SystemSpec, cap_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """All channel sequences with nonzero probability, plus their
    probabilities. Channels with p in {0, 1} are pinned, so they do not
    enlarge the grid."""
    T, N = spec.horizon, spec.N
    positions = [(t, i) for t in range(T + 1) for i in range(N)]
    pinned = {}
    free = []
    for k, (t, i) in enumerate(positions):
        p = spec.drop_prob[i]
        if p == 0.0:
            pinned[k] = 1
        elif p == 1.0:
            pinned[k] = 0
        else:
            free.append(k)
    if len(free) > cap_bits:
        raise EnumerationCapError(
            f"{len(free)} free channel bits exceed the cap of {cap_bits}")

    nseq = 1 << len(free)
    seq = np.arange(nseq, dtype=np.int64)
    flat = np.empty((nseq, len(positions)), dtype=np.uint8)
    for k, val in pinned.items():
        flat[:, k] = val
    for bit, k in enumerate(free):
        flat[:, k] = ((seq >> bit) & 1).astype(np.uint8)

    probs = np.ones(nseq)
    for bit, k in enumerate(free):
        p = spec.drop_prob[positions[k][1]]
        probs *= np.where(flat[:, k] == 1, 1.0 - p, p)
    return flat.reshape(nseq, T + 1, N), probs


def exact_cost_enumerated(spec: SystemSpec, strategy: LinearStrategy,
                          cap_bits: int = DEFAULT_CAP_BITS) -> EnumeratedCost:
    """Exact expected cost of a linear strategy by conditional second-moment
    propagation over every channel sequence."""
    validate_strategy(spec, strategy)
    gammas, probs = _gamma_grid(spec, cap_bits)
    nseq = gammas.shape[0]
    g = assemble_global(spec)
    T, N, n, m = spec.horizon, spec.N, spec.n_state, spec.n_action
    soff = spec.state_offsets()

    def expand(bits):
        # (nseq, N) channel bits -> (nseq, n) per-coordinate delivery mask
        out = np.empty((nseq, n))
        for i in range(N):
            out[:, soff[i]:soff[i + 1]] = bits[:, i:i + 1].astype(float)
        return out

    Sx = sigma_x_global(spec)

    # xi = (x, xhat); initial second moment with xhat0 = D x0 per sequence
    d0 = expand(gammas[:, 0])
    S = np.zeros((nseq, 2 * n, 2 * n))
    S[:, :n, :n] = Sx
    S[:, :n, n:] = Sx * d0[:, None, :]
    S[:, n:, :n] = d0[:, :, None] * Sx
    S[:, n:, n:] = d0[:, :, None] * Sx * d0[:, None, :]

    cond = np.zeros(nseq)
    Ex = np.zeros((n, 2 * n))
    Ex[:, :n] = np.eye(n)
    Ehat = np.zeros((n, 2 * n))
    Ehat[:, n:] = np.eye(n)

    for t in range(T):
        Kc = np.asarray(strategy.common[t], float)
        Lt = embed_local_gains(spec, [strategy.local[i][t] for i in range(N)])
        # u = -[Lt | Kc - Lt] xi ;  uhat = -Kc xhat
        Gu = np.zeros((m, 2 * n))
        Gu[:, :n] = Lt
        Gu[:, n:] = Kc - Lt

        CQ = Ex.T @ spec.Q[t] @ Ex
        CM = Ex.T @ spec.M[t] @ Gu
        CR = Gu.T @ spec.R[t] @ Gu
        cost_form = CQ - 2.0 * CM + CR        # E[c_t] = tr(cost_form @ S)
        cond += np.einsum("ij,sji->s", cost_form, S, optimize=True)

        Fx = g.A @ Ex - g.B @ Gu              # x_{t+1} rows
        Fhat_off = (g.A - g.B @ Kc) @ Ehat    # xhat_off rows
        d = expand(gammas[:, t + 1])          # (nseq, n)
        F = np.empty((nseq, 2 * n, 2 * n))
        F[:, :n, :] = Fx
        F[:, n:, :] = d[:, :, None] * Fx + (1.0 - d[:, :, None]) * Fhat_off

        Sw = sigma_w_global(spec, t)
        S = np.einsum("sij,sjk,slk->sil", F, S, F, optimize=True)
        S[:, :n, :n] += Sw
        S[:, :n, n:] += Sw * d[:, None, :]
        S[:, n:, :n] += d[:, :, None] * Sw
        S[:, n:, n:] += d[:, :, None] * Sw * d[:, None, :]

    CT = Ex.T @ spec.Q_terminal @ Ex
    cond += np.einsum("ij,sji->s", CT, S, optimize=True)

    return EnumeratedCost(value=float(probs @ cond), probs=probs,
                          cond_costs=cond, gammas=gammas)


def centralized_lqr(spec: SystemSpec):
    """Finite-horizon LQR with cross terms on the global (A, B), ignoring the
    channels entirely: gains in positive convention and the optimal cost
    tr(P0 Sx) + sum_s tr(P_{s+1} Sw_s). Self-contained textbook recursion."""
    g = assemble_global(spec)
    A, B = g.A, g.B
    T = spec.horizon
    P = [None] * (T + 1)
    K = [None] * T
    P[T] = np.asarray(spec.Q_terminal, float)
    for t in range(T - 1, -1, -1):
        Qt, Mt, Rt = spec.Q[t], spec.M[t], spec.R[t]
        S = Rt + B.T @ P[t + 1] @ B
        G = Mt + A.T @ P[t + 1] @ B
        if B.shape[1] == 0:
            K[t] = np.zeros((0, A.shape[1]))
            P[t] = Qt + A.T @ P[t + 1] @ A
        else:
            Sinv = np.linalg.inv(S)
            K[t] = Sinv @ G.T
            P[t] = Qt + A.T @ P[t + 1] @ A - G @ Sinv @ G.T
    cost = float(np.trace(P[0] @ sigma_x_global(spec)))
    for s in range(T):
        cost += float(np.trace(P[s + 1] @ sigma_w_global(spec, s)))
    return K, cost


# ---------------------------------------------------------------------------
# Numerical strategy search (optimality falsifier)
# ---------------------------------------------------------------------------

def _pack(spec: SystemSpec, strategy: LinearStrategy) -> np.ndarray:
    parts = [np.asarray(k, float).reshape(-1) for k in strategy.common]
    for i in range(spec.N):
        parts += [np.asarray(k, float).reshape(-1) for k in strategy.local[i]]
    return np.concatenate(parts) if parts else np.zeros(0)


def _unpack(spec: SystemSpec, theta: np.ndarray) -> LinearStrategy:
    T, n, m = spec.horizon, spec.n_state, spec.n_action
    pos = 0
    common = []
    for _ in range(T):
        common.append(theta[pos:pos + m * n].reshape(m, n).copy())
        pos += m * n
    local = []
    for i in range(spec.N):
        mi, ni = spec.local_action_dims[i], spec.state_dims[i]
        seq = []
        for _ in range(T):
            seq.append(theta[pos:pos + mi * ni].reshape(mi, ni).copy())
            pos += mi * ni
        local.append(tuple(seq))
    return LinearStrategy(common=tuple(common), local=tuple(local))


def strategy_search(spec: SystemSpec, init: LinearStrategy | None = None,
                    budget: int = 200_000, restarts: int = 0, seed: int = 0,
                    cap_bits: int = DEFAULT_CAP_BITS, tol: float = 1e-14):
    """Derivative-free minimization of the exact enumerated cost over all
    gain entries: cyclic coordinate steps with parabolic fits (the cost is an
    exact quadratic in each single entry), plus optional random restarts.

    Returns (best strategy, best cost). A falsifier, not a certifier.
    """
    from .simulator import zero_strategy

    if init is None:
        init = zero_strategy(spec)
    rng = np.random.default_rng(seed)
    evals = 0

    def cost_of(theta):
        nonlocal evals
        evals += 1
        return exact_cost_enumerated(spec, _unpack(spec, theta), cap_bits).value

    def descend(theta):
        f0 = cost_of(theta)
        ndim = theta.shape[0]
        h = np.full(ndim, 0.25)
        while evals < budget:
            improved = f0
            for k in range(ndim):
                if evals + 2 > budget:
                    break
                hk = h[k]
                tp = theta.copy(); tp[k] += hk
                tm = theta.copy(); tm[k] -= hk
                fp, fm = cost_of(tp), cost_of(tm)
                curv = fp - 2.0 * f0 + fm
                if curv > 0:
                    step = -hk * (fp - fm) / (2.0 * curv)
                    cand = theta.copy(); cand[k] += step
                    fc = cost_of(cand)
                    if fc < f0:
                        theta, f0 = cand, fc
                    h[k] = max(abs(step) * 0.5, 1e-9)
                elif fp < f0 or fm < f0:
                    # non-convex slice far from the optimum: take the better side
                    if fp < fm:
                        theta, f0 = tp, fp
                    else:
                        theta, f0 = tm, fm
                    h[k] *= 2.0
                else:
                    h[k] *= 0.5
            if improved - f0 <= tol * max(1.0, abs(f0)):
                break
        return theta, f0

    theta0 = _pack(spec, init)
    best_theta, best_f = descend(theta0.copy())
    for _ in range(restarts):
        if evals >= budget:
            break
        start = theta0 + rng.standard_normal(theta0.shape)
        th, f = descend(start)
        if f < best_f:
            best_theta, best_f = th, f
    return _unpack(spec, best_theta), float(best_f)


# ---------------------------------------------------------------------------
# Grid-minimization oracle for the Riccati/gain operators
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadMinEntry:
    x: np.ndarray
    grid_min: float
    grid_argmin: np.ndarray
    predicted_min: float
    predicted_argmin: np.ndarray
    value_gap: float
    argmin_gap: float


def grid_minimize(f, dim: int, radius: float, rounds: int = 8,
                  points: int = 33) -> tuple[float, np.ndarray]:
    """Iteratively refined product-grid minimization of f over a box around
    the origin. f must accept an (npts, dim) array and return (npts,)."""
    center = np.zeros(dim)
    for _ in range(rounds):
        axes = [np.linspace(c - radius, c + radius, points) for c in center]
        grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, dim)
        vals = f(grid)
        best = int(np.argmin(vals))
        center = grid[best]
        radius *= 2.5 / (points - 1)   # keep a margin around the new center
    return float(f(center[None, :])[0]), center


def quadratic_min_check(P, A, B, Q, M, R, trial_states,
                        value_tol: float = 1e-5, argmin_tol: float = 1e-5):
    """Minimize u -> [x;u]'[[Q,M],[M',R]][x;u] + (Ax+Bu)'P(Ax+Bu) on a
    refined grid for each trial state and compare the minimum against the
    Riccati-step value and the argmin against -gain_step(.) x."""
    from .synthesis import gain_step, riccati_step

    P, A, B = np.asarray(P, float), np.asarray(A, float), np.asarray(B, float)
    Q, M, R = np.asarray(Q, float), np.asarray(M, float), np.asarray(R, float)
    d = B.shape[1]
    if d > 3:
        raise ValueError("grid oracle is for small action dimensions (<= 3)")
    Pn = riccati_step(P, A, B, Q, M, R)
    K = gain_step(P, A, B, M, R)

    entries = []
    for x in trial_states:
        x = np.asarray(x, float).reshape(-1)

        def f(us):
            xs = np.broadcast_to(x, (us.shape[0], x.shape[0]))
            nxt = xs @ A.T + us @ B.T
            return (np.einsum("ri,ij,rj->r", xs, Q, xs)
                    + 2.0 * np.einsum("ri,ij,rj->r", xs, M, us)
                    + np.einsum("ri,ij,rj->r", us, R, us)
                    + np.einsum("ri,ij,rj->r", nxt, P, nxt))

        radius = 10.0 * (1.0 + float(np.linalg.norm(x)))
        gmin, gargmin = grid_minimize(f, d, radius)
        pred_min = float(x @ Pn @ x)
        pred_arg = -(K @ x)
        entries.append(QuadMinEntry(
            x=x, grid_min=gmin, grid_argmin=gargmin,
            predicted_min=pred_min, predicted_argmin=pred_arg,
            value_gap=abs(gmin - pred_min),
            argmin_gap=float(np.max(np.abs(gargmin - pred_arg))) if d else 0.0))

    ok = all(e.value_gap <= value_tol * max(1.0, abs(e.predicted_min))
             and e.argmin_gap <= argmin_tol * max(1.0, float(np.max(np.abs(e.predicted_argmin))) if d else 1.0)
             for e in entries)
    return ok, entries
