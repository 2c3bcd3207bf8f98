"""Acceptance battery: one test per criterion, each printing a pass/fail line
(visible with -s; pytest -v shows one PASSED/FAILED line per criterion either
way). Tolerances are fixed here, not tuned at runtime."""

import dataclasses
import json
import time

import numpy as np
import pytest

import droplqg as dl
from droplqg.cli import main
from droplqg.oracle import _pack
from droplqg.theory import orthogonality_check

from conftest import random_joint_cost, scalar_pair_spec, triple_spec

REPS = 100_000


def report(name, ok, detail=""):
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
    assert ok, f"{name}: {detail}"


def reference_instance():
    return scalar_pair_spec(p=(0.3, 0.7), T=3)


def test_criterion_1_operator_identity():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 4))
        m = int(rng.integers(1, 4))
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        Q, M, R = random_joint_cost(rng, n, m)
        C = rng.standard_normal((n, n))
        P = C.T @ C
        Pn = dl.riccati_step(P, A, B, Q, M, R)
        K = dl.gain_step(P, A, B, M, R)
        Delta = R + B.T @ P @ B
        ref = Q + A.T @ P @ A - K.T @ Delta @ K
        rel = np.max(np.abs(Pn - ref)) / max(1.0, np.max(np.abs(ref)))
        worst = max(worst, rel)
    elapsed = time.perf_counter() - t0
    report("criterion 1 (operator identity, 100 instances)",
           worst <= 1e-10 and elapsed < 1.0,
           f"worst rel err {worst:.2e}, {elapsed:.2f}s")


def test_criterion_2_quadratic_min_oracle():
    rng = np.random.default_rng(202)
    t0 = time.perf_counter()
    worst_val = worst_arg = 0.0
    for k in range(50):
        n = int(rng.integers(1, 3))
        m = 1 if k % 2 == 0 else 2
        A = rng.standard_normal((n, n))
        B = rng.standard_normal((n, m))
        Q, M, R = random_joint_cost(rng, n, m)
        C = rng.standard_normal((n, n))
        P = C.T @ C
        ok, entries = dl.quadratic_min_check(
            P, A, B, Q, M, R, [rng.standard_normal(n)],
            value_tol=1e-5, argmin_tol=1e-5)
        assert ok, f"instance {k}"
        worst_val = max(worst_val, entries[0].value_gap)
        worst_arg = max(worst_arg, entries[0].argmin_gap)
    elapsed = time.perf_counter() - t0
    report("criterion 2 (grid-minimization oracle, 50 instances)",
           elapsed < 10.0,
           f"worst value gap {worst_val:.2e}, worst argmin gap {worst_arg:.2e}, "
           f"{elapsed:.1f}s")


def _centralized_reduction(spec):
    spec0 = dataclasses.replace(spec, drop_prob=(0.0,) * spec.N)
    sched = dl.synthesize(spec0)
    K, _ = dl.centralized_lqr(spec0)
    gap = max(float(np.max(np.abs(sched.K[t] - K[t])))
              for t in range(spec0.horizon))
    strat = dl.optimal_strategy(sched)
    max_err = 0.0
    for rep in range(50):
        rec = dl.run_trajectory(spec0, strat, seed=303, rep=rep)
        max_err = max(max_err, float(np.max(np.abs(rec.x_tilde))))
    return gap, max_err


def test_criterion_3_centralized_reduction():
    gap, max_err = _centralized_reduction(reference_instance())
    report("criterion 3 (centralized reduction at p=0)",
           gap <= 1e-9 and max_err == 0.0,
           f"gain gap {gap:.2e}, max |xtilde| {max_err}")


def _oracle_triangle(spec, seed):
    sched = dl.synthesize(spec)
    jstar = dl.optimal_cost_closed_form(spec, sched)
    opt = dl.optimal_strategy(sched)
    exact = dl.exact_cost_enumerated(spec, opt)
    rel = abs(exact.value - jstar) / max(1.0, abs(jstar))
    mc = dl.monte_carlo(spec, opt, REPS, seed=seed)
    sigmas = abs(mc.mean - jstar) / mc.se
    return exact, rel, mc, sigmas, jstar


def test_criterion_4_oracle_triangle():
    t0 = time.perf_counter()
    exact, rel, mc, sigmas, jstar = _oracle_triangle(reference_instance(), seed=404)
    elapsed = time.perf_counter() - t0
    report("criterion 4 (oracle triangle, N=2 T=3 p=(0.3,0.7))",
           rel <= 1e-9 and sigmas <= 3.0 and elapsed < 30.0,
           f"closed form {jstar:.9f}, enumerated rel gap {rel:.2e}, "
           f"MC {mc.mean:.4f}+-{mc.se:.4f} ({sigmas:.2f} SE), {elapsed:.1f}s")


def test_criterion_5_optimality_falsification():
    t0 = time.perf_counter()
    spec = reference_instance()
    sched = dl.synthesize(spec)
    jstar = dl.optimal_cost_closed_form(spec, sched)
    opt_vec = _pack(spec, dl.optimal_strategy(sched))
    best_cost = np.inf
    best_vec = None
    for k in range(10):
        init = dl.random_strategy(spec, seed=500 + k, scale=1.0)
        found, cost = dl.strategy_search(spec, init=init, budget=80_000,
                                         seed=600 + k)
        assert cost >= jstar - 1e-8, f"search found cost {cost} below J*={jstar}"
        if cost < best_cost:
            best_cost = cost
            best_vec = _pack(spec, found)
    gain_gap = float(np.max(np.abs(best_vec - opt_vec)))
    elapsed = time.perf_counter() - t0
    report("criterion 5 (optimality falsification, 10 inits)",
           best_cost >= jstar - 1e-8 and gain_gap <= 1e-3 and elapsed < 300.0,
           f"best cost gap {best_cost - jstar:.2e}, max gain gap {gain_gap:.2e}, "
           f"{elapsed:.0f}s")


def test_criterion_6_decomposition_residual():
    spec = reference_instance()
    sched = dl.synthesize(spec)
    worst = 0.0
    for k in range(5):
        strat = dl.random_strategy(spec, seed=700 + k)
        rep = dl.decomposition_check(spec, sched, strat, REPS, seed=710 + k)
        sig = abs(rep.residual.value) / rep.residual.se
        worst = max(worst, sig)
    report("criterion 6 (cost-decomposition residual, 5 random strategies)",
           worst <= 3.0, f"worst residual {worst:.2f} SE at {REPS} reps")


def test_criterion_7_estimator_exactness_and_moments():
    spec = reference_instance()
    sched = dl.synthesize(spec)
    opt = dl.optimal_strategy(sched)
    _, ens = dl.simulate_ensemble(spec, opt, REPS, seed=808)

    worst_exact = 0.0
    for i in range(spec.N):
        delivered = ens.gamma[:, :, i] == 1
        block = np.abs(ens.x_tilde[:, :, spec.state_slice(i + 1)])
        worst_exact = max(worst_exact, float(block[delivered].max()))

    rep = orthogonality_check(ens)
    cross_sig = rep.max_cross_sigmas()
    worst_cov = 0.0
    for cov, se in rep.cov_components:
        mask = se > 0
        if np.any(mask):
            worst_cov = max(worst_cov, float(np.max(np.abs(cov[mask]) / se[mask])))
    worst_cond = 0.0
    for rows in rep.cond_means:
        for _, _, mean, se in rows:
            nz = se > 0
            if np.any(nz):
                worst_cond = max(worst_cond, float(np.max(np.abs(mean[nz]) / se[nz])))
    report("criterion 7 (estimator exact zeros and moment checks)",
           worst_exact == 0.0 and cross_sig <= 4.0 and worst_cov <= 4.0
           and worst_cond <= 4.0,
           f"max |xtilde| delivered {worst_exact}, cross terms {cross_sig:.2f} SE, "
           f"componentwise {worst_cov:.2f} SE, conditional means {worst_cond:.2f} SE")


def test_criterion_8_distribution_freeness():
    spec = reference_instance()
    opt = dl.optimal_strategy(dl.synthesize(spec))
    reports = {fam: dl.monte_carlo(spec, opt, REPS, seed=909, family=fam)
               for fam in ("gaussian", "uniform", "rademacher-scaled")}
    worst = 0.0
    names = list(reports)
    for a in range(len(names)):
        for b in range(a + 1, len(names)):
            ra, rb = reports[names[a]], reports[names[b]]
            worst = max(worst, abs(ra.mean - rb.mean) / np.hypot(ra.se, rb.se))
    report("criterion 8 (noise-distribution freeness)",
           worst <= 3.0,
           f"worst pairwise gap {worst:.2f} combined SE; means "
           + ", ".join(f"{k}={v.mean:.4f}" for k, v in reports.items()))


def test_criterion_9_general_n():
    t0 = time.perf_counter()
    spec = triple_spec(p=(0.2, 0.5, 0.8), T=3)

    # criterion 1 on the N=3 schedule itself
    sched = dl.synthesize(spec)
    g = dl.assemble_global(spec)
    worst_id = 0.0
    for t in range(spec.horizon):
        Delta = spec.R[t] + g.B.T @ sched.P[t + 1] @ g.B
        ref = spec.Q[t] + g.A.T @ sched.P[t + 1] @ g.A \
            - sched.K[t].T @ Delta @ sched.K[t]
        rel = np.max(np.abs(sched.P[t] - ref)) / max(1.0, np.max(np.abs(ref)))
        worst_id = max(worst_id, rel)

    gap, max_err = _centralized_reduction(spec)
    exact, rel, mc, sigmas, jstar = _oracle_triangle(spec, seed=111)
    elapsed = time.perf_counter() - t0
    report("criterion 9 (general N=3: identity, reduction, triangle)",
           worst_id <= 1e-10 and gap <= 1e-9 and max_err == 0.0
           and rel <= 1e-9 and sigmas <= 3.0
           and exact.probs.shape[0] == 4096 and elapsed < 60.0,
           f"identity {worst_id:.2e}, gain gap {gap:.2e}, triangle rel {rel:.2e}, "
           f"MC {sigmas:.2f} SE, {exact.probs.shape[0]} sequences, {elapsed:.0f}s")


def test_criterion_10_reproducibility(tmp_path):
    config = {
        "system": {
            "N": 2, "horizon": 3,
            "subsystems": [
                {"A": [[1.0]], "B_remote": [[1.0]], "B_local": [[1.0]],
                 "sigma_x0": [[1.0]], "sigma_w": [[0.5]], "drop_prob": 0.3},
                {"A": [[0.8]], "B_remote": [[0.5]], "B_local": [[1.0]],
                 "sigma_x0": [[2.0]], "sigma_w": [[1.0]], "drop_prob": 0.7},
            ],
            "cost": {
                "Q": [[2.0, 0.2], [0.2, 1.5]],
                "M": [[0.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
                "R": [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                "Q_terminal": [[1.0, 0.0], [0.0, 1.0]],
            },
        },
        "seed": 424242, "reps": 30000,
    }
    path = tmp_path / "config.json"
    path.write_text(json.dumps(config))
    blobs = []
    for name, workers in (("one", "1"), ("eight", "8")):
        out = tmp_path / name
        code = main(["simulate", "--config", str(path), "--out", str(out),
                     "--workers", workers, "--dump-trajectories", "3"])
        assert code == 0
        blob = (out / "cost_report.json").read_bytes()
        for r in range(3):
            blob += (out / f"trajectory_{r}.csv").read_bytes()
        blobs.append(blob)
    report("criterion 10 (1-thread vs 8-thread byte-identical outputs)",
           blobs[0] == blobs[1],
           f"{len(blobs[0])} bytes compared")
