"""Common-information state estimate and per-subsystem errors.

The remote controller tracks xhat^i for every subsystem from channel outputs
and the replicated common action parts; local controller i additionally knows
its own state, hence the error xtilde^i = x^i - xhat^i. On a delivery the
estimate snaps to the received state and the error is exactly zero.

xtilde is always computed as (true state - xhat), never by integrating its
own recursion; the error recursion is a testable property, not the
implementation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError
from .model import SystemSpec


@dataclass(frozen=True)
class EstimatorState:
    t: int
    x_hat: tuple    # per subsystem
    x_tilde: tuple  # per subsystem, known only to the local controller

    def x_hat_stacked(self) -> np.ndarray:
        return np.concatenate(self.x_hat)

    def x_tilde_stacked(self) -> np.ndarray:
        return np.concatenate(self.x_tilde)


@dataclass(frozen=True)
class ControlDecision:
    """Actions split into the common part (replicated at the remote
    controller) and the local corrections. u_local[i] = u_hat[i] + u_tilde[i];
    the remote action has no local part."""

    u_remote: np.ndarray
    u_hat: tuple
    u_tilde: tuple
    u_local: tuple

    def stacked(self) -> np.ndarray:
        return np.concatenate([self.u_remote, *self.u_local])

    def common_stacked(self) -> np.ndarray:
        return np.concatenate([self.u_remote, *self.u_hat])


def estimator_init(x0_blocks, gamma0) -> EstimatorState:
    """t=0: the estimate is the delivered state, or the prior mean (zero)."""
    x_hat, x_tilde = [], []
    for x0, g in zip(x0_blocks, gamma0):
        x0 = np.asarray(x0, float).reshape(-1)
        if g:
            x_hat.append(x0.copy())
            x_tilde.append(np.zeros_like(x0))
        else:
            x_hat.append(np.zeros_like(x0))
            x_tilde.append(x0.copy())
    return EstimatorState(t=0, x_hat=tuple(x_hat), x_tilde=tuple(x_tilde))


def estimator_predict(state: EstimatorState, u_remote, u_hat, spec: SystemSpec):
    """Model-predicted estimates A^ii xhat^i + B^i0 u0 + B^ii uhat^i, one per
    subsystem (what the estimate becomes on a drop)."""
    u_remote = np.asarray(u_remote, float).reshape(-1)
    out = []
    for i in range(spec.N):
        pred = spec.A_blocks[i] @ state.x_hat[i] \
            + spec.B_remote[i] @ u_remote \
            + spec.B_local[i] @ np.asarray(u_hat[i], float).reshape(-1)
        out.append(pred)
    return out


def estimator_update(state: EstimatorState, predicted, z, gamma,
                     true_states) -> EstimatorState:
    """Advance to t+1 from channel outputs. Delivered: estimate = received
    state, error = 0 exactly. Dropped: estimate = prediction, error = true
    state - estimate (maintained from the local controller's knowledge of its
    own state; only used for simulation bookkeeping)."""
    x_hat, x_tilde = [], []
    for i, (pred, zi, g, xi) in enumerate(zip(predicted, z, gamma, true_states)):
        if g:
            if zi is None:
                raise ProtocolError(
                    f"channel {i + 1} reported a delivery but the packet is blank")
            zi = np.asarray(zi, float).reshape(-1)
            x_hat.append(zi.copy())
            x_tilde.append(np.zeros_like(zi))
        else:
            pred = np.asarray(pred, float).reshape(-1)
            x_hat.append(pred)
            x_tilde.append(np.asarray(xi, float).reshape(-1) - pred)
    return EstimatorState(t=state.t + 1, x_hat=tuple(x_hat), x_tilde=tuple(x_tilde))


def optimal_controls(schedule, t: int, state: EstimatorState) -> ControlDecision:
    """Optimal actions from a synthesized schedule: the common part is
    -K_t xhat (rows partitioned as remote, local-1, ..., local-N) and each
    local correction is -Ktilde^i_t xtilde^i."""
    spec = schedule.spec
    if not 0 <= t <= spec.horizon - 1:
        raise IndexError(f"t={t} outside 0..{spec.horizon - 1}")
    xhat = state.x_hat_stacked()
    common = -(schedule.K[t] @ xhat)
    u_remote = common[spec.action_slice(0)]
    u_hat = tuple(common[spec.action_slice(i + 1)] for i in range(spec.N))
    u_tilde = tuple(-(schedule.K_tilde[i][t] @ state.x_tilde[i])
                    for i in range(spec.N))
    u_local = tuple(h + tl for h, tl in zip(u_hat, u_tilde))
    return ControlDecision(u_remote=u_remote, u_hat=u_hat,
                           u_tilde=u_tilde, u_local=u_local)
