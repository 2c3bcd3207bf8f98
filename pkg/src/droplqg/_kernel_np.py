"""Numpy rollout backend: all replications advance in lockstep, one batched
matrix product per operation per step. Semantics are identical to the
compiled kernel in _kernel.pyx."""

from __future__ import annotations

import numpy as np


def _quad(X, W):
    # row-wise quadratic form x' W x for X of shape (reps, d)
    return np.einsum("ri,ij,rj->r", X, W, X, optimize=True)


def rollout_batch(prob, x0, w, gamma, collect_states=False, want_decomp=False):
    """Run every replication of the closed loop and accumulate costs.

    prob is a BatchProblem (see _backend); x0 (reps, n), w (T, reps, n) and
    gamma (T+1, reps, N) come from sampling.draw_primitives (possibly sliced
    to a chunk of replications). Returns a dict of per-replication arrays.
    """
    n, m, T, N = prob.n, prob.m, prob.T, prob.N
    reps = x0.shape[0]
    soff = prob.state_off

    def deliver_mask(t):
        # expand per-subsystem channel bits to per-state-coordinate 0/1
        g = gamma[t].astype(float)
        out = np.empty((reps, n))
        for i in range(N):
            out[:, soff[i]:soff[i + 1]] = g[:, i:i + 1]
        return out

    X = x0.copy()
    d0 = deliver_mask(0)
    Xhat = d0 * X
    Xtil = X - Xhat

    stage_sum = np.zeros(reps)
    out = {}
    if want_decomp:
        init = _quad(Xhat, prob.P0) + _quad(Xtil, prob.Ptil0)
        common_pen = np.zeros(reps)
        local_pen = np.zeros((reps, N))
        noise = np.zeros(reps)
    if collect_states:
        xhat_ens = np.empty((T + 1, reps, n))
        xtil_ens = np.empty((T + 1, reps, n))
        xhat_ens[0], xtil_ens[0] = Xhat, Xtil

    for t in range(T):
        Uhat = -(Xhat @ prob.Kc[t].T)           # (u0, uhat_1..uhat_N) stacked
        Util = -(Xtil @ prob.Lt[t].T)           # remote rows are zero
        U = Uhat + Util

        stage_sum += (_quad(X, prob.Q[t])
                      + 2.0 * np.einsum("ri,ij,rj->r", X, prob.Mx[t], U, optimize=True)
                      + _quad(U, prob.R[t]))

        if want_decomp:
            vc = Uhat + Xhat @ prob.Kopt[t].T
            common_pen += _quad(vc, prob.Delta[t])
            vl = Util + Xtil @ prob.Ktil[t].T
            for i in range(N):
                local_pen[:, i] += _quad(vl, prob.Dtil[i, t])
            noise += _quad(w[t], prob.Pi[t])

        Xhat_off = Xhat @ prob.A.T + Uhat @ prob.B.T
        X = X @ prob.A.T + U @ prob.B.T + w[t]
        d = deliver_mask(t + 1)
        Xhat = d * X + (1.0 - d) * Xhat_off
        Xtil = X - Xhat

        if collect_states:
            xhat_ens[t + 1], xtil_ens[t + 1] = Xhat, Xtil

    terminal = _quad(X, prob.QT)
    out["stage_sum"] = stage_sum
    out["terminal"] = terminal
    out["total"] = stage_sum + terminal
    if want_decomp:
        out["init"] = init
        out["common_pen"] = common_pen
        out["local_pen"] = local_pen
        out["noise"] = noise
    if collect_states:
        out["xhat"] = xhat_ens
        out["xtilde"] = xtil_ens
    return out
