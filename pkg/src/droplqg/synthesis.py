"""Backward Riccati recursions and optimal gains.

Two coupled recursions run from the terminal time: a global one on (A, B) for
the common-information part, and one per subsystem on (A^ii, B^ii) for the
local error part, averaged through Pi^i = (1-p^i) P^ii + p^i Ptilde^i.

Gains are stored in positive convention, K = (R + B'PB)^{-1} (M' + B'PA),
and applied as u = -K x throughout the package.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import NumericalError, StructuralError
from .model import (SystemSpec, assemble_global, check_pd, check_psd,
                    extract_block, validate_spec)


def _sym(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def _solve_spd(S: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve S X = rhs with S symmetric positive definite (Cholesky)."""
    try:
        c = scipy.linalg.cho_factor(_sym(S), lower=True)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"inner matrix R + B'PB is not positive definite: {exc}")
    return scipy.linalg.cho_solve(c, rhs)


def riccati_step(P, A, B, Q, M, R) -> np.ndarray:
    """One backward step: Q + A'PA - (M + A'PB)(R + B'PB)^{-1}(M + A'PB)'.

    The result is symmetrized. An empty action space (B with zero columns)
    makes the correction term zero.
    """
    P, A, B = np.asarray(P, float), np.asarray(A, float), np.asarray(B, float)
    Q, M, R = np.asarray(Q, float), np.asarray(M, float), np.asarray(R, float)
    base = Q + A.T @ P @ A
    if B.shape[1] == 0:
        return _sym(base)
    G = M + A.T @ P @ B                      # n x m
    S = R + B.T @ P @ B
    return _sym(base - G @ _solve_spd(S, G.T))


def gain_step(P, A, B, M, R) -> np.ndarray:
    """Gain K = (R + B'PB)^{-1}(M + A'PB)', to be applied as u = -K x."""
    P, A, B = np.asarray(P, float), np.asarray(A, float), np.asarray(B, float)
    M, R = np.asarray(M, float), np.asarray(R, float)
    if B.shape[1] == 0:
        return np.zeros((0, A.shape[1]))
    G = M + A.T @ P @ B
    S = R + B.T @ P @ B
    return _solve_spd(S, G.T)


@dataclass(frozen=True)
class RiccatiSchedule:
    """All synthesized matrices, indexed by time.

    P[t] for t = 0..T; P_tilde[i][t] for t = 0..T; Pi[i][t] for t = 1..T
    (index 0 is None: it is never defined or needed); K[t] and K_tilde[i][t]
    for t = 0..T-1; Delta[t] = R_t + B'P_{t+1}B and
    Delta_tilde[i][t] = R^ii_t + B^ii' Pi^i_{t+1} B^ii for t = 0..T-1.
    """

    spec: SystemSpec
    P: tuple
    P_tilde: tuple      # [i][t]
    Pi: tuple           # [i][t], entry 0 is None
    K: tuple
    K_tilde: tuple      # [i][t]
    Delta: tuple
    Delta_tilde: tuple  # [i][t]

    def to_json_dict(self) -> dict:
        def mat(x):
            return np.asarray(x).tolist()
        return {
            "P": [{"t": t, "value": mat(p)} for t, p in enumerate(self.P)],
            "P_tilde": [{"i": i + 1, "t": t, "value": mat(p)}
                        for i, seq in enumerate(self.P_tilde)
                        for t, p in enumerate(seq)],
            "Pi": [{"i": i + 1, "t": t, "value": mat(p)}
                   for i, seq in enumerate(self.Pi)
                   for t, p in enumerate(seq) if p is not None],
            "K": [{"t": t, "value": mat(k)} for t, k in enumerate(self.K)],
            "K_tilde": [{"i": i + 1, "t": t, "value": mat(k)}
                        for i, seq in enumerate(self.K_tilde)
                        for t, k in enumerate(seq)],
            "Delta": [{"t": t, "value": mat(d)} for t, d in enumerate(self.Delta)],
            "Delta_tilde": [{"i": i + 1, "t": t, "value": mat(d)}
                            for i, seq in enumerate(self.Delta_tilde)
                            for t, d in enumerate(seq)],
        }


def _assert_psd(x, what, t):
    ok, lo = check_psd(x)
    if not ok:
        raise NumericalError(f"{what} at t={t} is not PSD (min eigenvalue {lo:.3e})")


def _assert_pd(x, what, t):
    ok, lo = check_pd(x)
    if not ok:
        raise NumericalError(f"{what} at t={t} is not PD (min eigenvalue {lo:.3e})")


def synthesize(spec: SystemSpec) -> RiccatiSchedule:
    """Run both backward recursions over t = T-1..0 and collect every gain.

    Global: P_T = Q_T, P_t = riccati(P_{t+1}, A, B, Q_t, M_t, R_t),
    K_t = gain(P_{t+1}, A, B, M_t, R_t).
    Per subsystem i: Ptilde^i_T = Q^ii_T,
    Pi^i_{t+1} = (1-p^i) P^ii_{t+1} + p^i Ptilde^i_{t+1},
    Ptilde^i_t = riccati(Pi^i_{t+1}, A^ii, B^ii, Q^ii_t, M^ii_t, R^ii_t),
    Ktilde^i_t = gain(Pi^i_{t+1}, A^ii, B^ii, M^ii_t, R^ii_t).
    """
    report = validate_spec(spec)
    if not report.ok:
        raise StructuralError(f"invalid spec:\n{report}")

    g = assemble_global(spec)
    T = spec.horizon

    P = [None] * (T + 1)
    K = [None] * T
    Delta = [None] * T
    P[T] = _sym(np.asarray(spec.Q_terminal, float))
    for t in range(T - 1, -1, -1):
        try:
            P[t] = riccati_step(P[t + 1], g.A, g.B, spec.Q[t], spec.M[t], spec.R[t])
            K[t] = gain_step(P[t + 1], g.A, g.B, spec.M[t], spec.R[t])
        except NumericalError as exc:
            raise NumericalError(f"global recursion failed at t={t}: {exc}")
        Delta[t] = _sym(spec.R[t] + g.B.T @ P[t + 1] @ g.B)
        _assert_psd(P[t], "P", t)
        _assert_pd(Delta[t], "Delta", t)

    P_tilde, Pi, K_tilde, Delta_tilde = [], [], [], []
    for i in range(spec.N):
        p = spec.drop_prob[i]
        Aii = spec.A_blocks[i]
        Bii = spec.B_local[i]
        Qii = [extract_block(spec.Q[t], spec, ("Q", i + 1, i + 1)) for t in range(T)]
        Mii = [extract_block(spec.M[t], spec, ("M", i + 1, i + 1)) for t in range(T)]
        Rii = [extract_block(spec.R[t], spec, ("R", i + 1, i + 1)) for t in range(T)]

        Pt = [None] * (T + 1)
        Pii = [None] * (T + 1)
        Pi_i = [None] * (T + 1)
        Kt = [None] * T
        Dt = [None] * T
        Pt[T] = extract_block(spec.Q_terminal, spec, ("Q", i + 1, i + 1)).copy()
        for t in range(T - 1, -1, -1):
            Pii[t + 1] = extract_block(P[t + 1], spec, ("P", i + 1, i + 1))
            Pi_i[t + 1] = (1.0 - p) * Pii[t + 1] + p * Pt[t + 1]
            try:
                Pt[t] = riccati_step(Pi_i[t + 1], Aii, Bii, Qii[t], Mii[t], Rii[t])
                Kt[t] = gain_step(Pi_i[t + 1], Aii, Bii, Mii[t], Rii[t])
            except NumericalError as exc:
                raise NumericalError(
                    f"local recursion for subsystem {i + 1} failed at t={t}: {exc}")
            Dt[t] = _sym(Rii[t] + Bii.T @ Pi_i[t + 1] @ Bii)
            _assert_psd(Pt[t], f"P_tilde[{i + 1}]", t)
            _assert_psd(Pi_i[t + 1], f"Pi[{i + 1}]", t + 1)
            _assert_pd(Dt[t], f"Delta_tilde[{i + 1}]", t)
        P_tilde.append(tuple(Pt))
        Pi.append(tuple(Pi_i))
        K_tilde.append(tuple(Kt))
        Delta_tilde.append(tuple(Dt))

    return RiccatiSchedule(
        spec=spec,
        P=tuple(P),
        P_tilde=tuple(P_tilde),
        Pi=tuple(Pi),
        K=tuple(K),
        K_tilde=tuple(K_tilde),
        Delta=tuple(Delta),
        Delta_tilde=tuple(Delta_tilde),
    )
