"""Closed-form optimal cost and the statistical diagnostics.

The total cost of any strategy in the structured linear family splits into a
strategy-free part (initial-state terms plus noise terms) and nonnegative
penalty terms that vanish exactly at the optimal gains. The closed form below
evaluates the strategy-free part; the decomposition check estimates every
term by Monte Carlo and verifies that they add up to the simulated cost for
arbitrary gains.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import SystemSpec, extract_block
from .simulator import Ensemble, LinearStrategy, _run_batch


def optimal_cost_closed_form(spec: SystemSpec, schedule) -> float:
    """J* = sum_i [(1-p^i) tr(P0^ii Sx^i) + p^i tr(Ptilde0^i Sx^i)]
    + sum_{s<T} sum_i tr(Pi^i_{s+1} Sw^i_s).

    The initial term expands the estimate/error split at t=0: with
    probability 1-p^i the packet arrives and x0^i is weighted by P0^ii,
    otherwise it sits in the error and is weighted by Ptilde0^i; cross-block
    terms vanish because the subsystems' initial states are independent and
    zero mean. Noise terms are plain trace forms.
    """
    total = 0.0
    for i in range(spec.N):
        p = spec.drop_prob[i]
        sx = spec.sigma_x0[i]
        P0ii = extract_block(schedule.P[0], spec, ("P", i + 1, i + 1))
        total += (1.0 - p) * float(np.trace(P0ii @ sx))
        total += p * float(np.trace(schedule.P_tilde[i][0] @ sx))
        for s in range(spec.horizon):
            total += float(np.trace(schedule.Pi[i][s + 1] @ spec.sigma_w[i][s]))
    return total


@dataclass(frozen=True)
class Estimate:
    value: float
    se: float

    def to_json_dict(self):
        return {"estimate": self.value, "se": self.se}


@dataclass(frozen=True)
class CostDecomposition:
    init_term: Estimate
    control_penalty_common: Estimate
    control_penalty_local: tuple   # per subsystem
    noise_term: Estimate

    def to_json_dict(self):
        return {
            "init_term": self.init_term.to_json_dict(),
            "control_penalty_common": self.control_penalty_common.to_json_dict(),
            "control_penalty_local": [e.to_json_dict()
                                      for e in self.control_penalty_local],
            "noise_term": self.noise_term.to_json_dict(),
        }


@dataclass(frozen=True)
class DecompositionReport:
    decomposition: CostDecomposition
    total: Estimate
    residual: Estimate  # mean and SE of (total - sum of terms) per replication
    reps: int
    seed: int

    def to_json_dict(self):
        out = self.decomposition.to_json_dict()
        out["total"] = self.total.to_json_dict()
        out["residual"] = self.residual.to_json_dict()
        out["reps"] = self.reps
        out["seed"] = self.seed
        return out


def _estimate(values: np.ndarray) -> Estimate:
    reps = values.shape[0]
    se = float(np.std(values, ddof=1) / np.sqrt(reps)) if reps > 1 else 0.0
    return Estimate(value=float(np.sum(values) / reps), se=se)


def decomposition_check(spec: SystemSpec, schedule, strategy: LinearStrategy,
                        reps: int, seed: int, family: str | None = None,
                        workers: int = 1, backend: str | None = None
                        ) -> DecompositionReport:
    """Monte Carlo estimate of every decomposition term for an arbitrary
    linear strategy, plus the residual against the simulated total cost. The
    residual has zero expectation for every structured strategy, not just the
    optimal one."""
    out, _ = _run_batch(spec, strategy, reps, seed, family=family,
                        workers=workers, backend=backend, schedule=schedule)
    terms_sum = out["init"] + out["common_pen"] + out["noise"] \
        + np.sum(out["local_pen"], axis=1)
    decomp = CostDecomposition(
        init_term=_estimate(out["init"]),
        control_penalty_common=_estimate(out["common_pen"]),
        control_penalty_local=tuple(_estimate(out["local_pen"][:, i])
                                    for i in range(spec.N)),
        noise_term=_estimate(out["noise"]),
    )
    return DecompositionReport(
        decomposition=decomp,
        total=_estimate(out["total"]),
        residual=_estimate(out["total"] - terms_sum),
        reps=reps, seed=int(seed))


# ---------------------------------------------------------------------------
# Orthogonality / estimator-property diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OrthogonalityReport:
    """Sample statistics per time step.

    cross[t][name] is the scalar estimate of E[xhat' W xtilde] (name "identity"
    or "Q"); pair_cross[t][(i, j)][name] estimates E[xtilde^i' W xtilde^j];
    cost_split[t] is the difference E[x'Qx] - E[xhat'Q xhat]
    - sum_i E[xtilde^i'Q^ii xtilde^i]; cond_means[t] holds per-channel-prefix
    conditional means of xtilde, as (prefix_code, count, mean, se) rows;
    cov_components[t] is the componentwise covariance matrix between xhat and
    xtilde with its SE matrix.
    """

    cross: tuple
    pair_cross: tuple
    cost_split: tuple
    cond_means: tuple
    cov_components: tuple

    def max_cross_sigmas(self) -> float:
        worst = 0.0
        for per_t in self.cross:
            for est in per_t.values():
                if est.se > 0:
                    worst = max(worst, abs(est.value) / est.se)
        for per_t in self.pair_cross:
            for per_pair in per_t.values():
                for est in per_pair.values():
                    if est.se > 0:
                        worst = max(worst, abs(est.value) / est.se)
        return worst


def _pair_stat(a: np.ndarray, W: np.ndarray, b: np.ndarray) -> Estimate:
    vals = np.einsum("ri,ij,rj->r", a, W, b, optimize=True)
    return _estimate(vals)


def orthogonality_check(ensemble: Ensemble, min_group: int = 50
                        ) -> OrthogonalityReport:
    """Sample versions of the orthogonality properties on a simulated
    ensemble: estimate/error cross terms, cross-subsystem error cross terms,
    the per-step cost split, and channel-prefix-conditional error means."""
    spec = ensemble.spec
    T, N, n = spec.horizon, spec.N, spec.n_state
    reps = ensemble.x_hat.shape[1]
    if reps == 0:
        raise ValueError("empty ensemble")

    cross, pair_cross, cost_split, cond_means, cov_comp = [], [], [], [], []
    prefix_code = np.zeros(reps, dtype=np.int64)

    for t in range(T + 1):
        xh = ensemble.x_hat[t]
        xt = ensemble.x_tilde[t]
        Qt = spec.Q[t] if t < T else spec.Q_terminal

        cross.append({
            "identity": _pair_stat(xh, np.eye(n), xt),
            "Q": _pair_stat(xh, Qt, xt),
        })

        per_pair = {}
        for i in range(N):
            for j in range(i + 1, N):
                si, sj = spec.state_slice(i + 1), spec.state_slice(j + 1)
                Wij = extract_block(Qt, spec, ("Q", i + 1, j + 1))
                eye_ij = np.eye(si.stop - si.start, sj.stop - sj.start)
                per_pair[(i + 1, j + 1)] = {
                    "identity": _pair_stat(xt[:, si], eye_ij, xt[:, sj]),
                    "Q": _pair_stat(xt[:, si], Wij, xt[:, sj]),
                }
        pair_cross.append(per_pair)

        x = xh + xt
        lhs = np.einsum("ri,ij,rj->r", x, Qt, x, optimize=True)
        rhs = np.einsum("ri,ij,rj->r", xh, Qt, xh, optimize=True)
        for i in range(N):
            si = spec.state_slice(i + 1)
            Qii = extract_block(Qt, spec, ("Q", i + 1, i + 1))
            rhs = rhs + np.einsum("ri,ij,rj->r", xt[:, si], Qii, xt[:, si],
                                  optimize=True)
        cost_split.append(_estimate(lhs - rhs))

        # componentwise cov(xhat_a, xtilde_b) with a delta-method SE
        prod = xh[:, :, None] * xt[:, None, :]
        cov = prod.mean(axis=0) - np.outer(xh.mean(axis=0), xt.mean(axis=0))
        se = (np.std(prod, axis=0, ddof=1) / np.sqrt(reps)) if reps > 1 \
            else np.zeros((n, n))
        cov_comp.append((cov, se))

        # mean error within each realized channel prefix
        code = np.zeros(reps, dtype=np.int64)
        for i in range(N):
            code = code * 2 + ensemble.gamma[t, :, i]
        prefix_code = prefix_code * (2 ** N) + code
        rows = []
        for value in np.unique(prefix_code):
            mask = prefix_code == value
            cnt = int(np.sum(mask))
            if cnt < min_group:
                continue
            sel = xt[mask]
            mean = sel.mean(axis=0)
            se_g = (np.std(sel, axis=0, ddof=1) / np.sqrt(cnt)) if cnt > 1 \
                else np.zeros(n)
            rows.append((int(value), cnt, mean, se_g))
        cond_means.append(tuple(rows))

    return OrthogonalityReport(
        cross=tuple(cross), pair_cross=tuple(pair_cross),
        cost_split=tuple(cost_split), cond_means=tuple(cond_means),
        cov_components=tuple(cov_comp))


def orthogonality_report_json(report: OrthogonalityReport) -> dict:
    return {
        "cross": [{name: est.to_json_dict() for name, est in per_t.items()}
                  for per_t in report.cross],
        "pair_cross": [
            {f"{i}-{j}": {name: est.to_json_dict() for name, est in stats.items()}
             for (i, j), stats in per_t.items()}
            for per_t in report.pair_cross],
        "cost_split": [est.to_json_dict() for est in report.cost_split],
    }
