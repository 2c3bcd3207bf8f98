import numpy as np
import pytest

import droplqg as dl
from droplqg.errors import ConfigError, StructuralError

from conftest import random_instance, scalar_pair_spec, triple_spec


def scalar_spec(Q=1.0, M=0.0, R=1.0, p=0.3, T=2):
    if np.ndim(M) == 0:
        M = [[M]]
    return dl.make_spec(
        A_blocks=[1.0], B_remote=[np.zeros((1, 0))], B_local=[1.0],
        Q=Q, M=M, R=R, Q_terminal=1.0, sigma_x0=[1.0], sigma_w=[1.0],
        drop_prob=[p], horizon=T)


def test_validate_scalar_identity_weights_ok():
    spec = scalar_spec(Q=1.0, M=[[0.0]], R=1.0, p=0.3)
    report = dl.validate_spec(spec)
    assert report.ok
    assert report.violations == ()


def test_validate_r_zero_eigenvalue():
    spec = scalar_spec(Q=1.0, M=[[0.0]], R=0.0)
    report = dl.validate_spec(spec)
    assert not report.ok
    assert any("positive definite" in v.detail and v.subject.startswith("R")
               for v in report.violations)


def test_validate_joint_cost_not_psd():
    # [[1, 2], [2, 1]] has eigenvalues 3 and -1
    spec = scalar_spec(Q=1.0, M=[[2.0]], R=1.0)
    report = dl.validate_spec(spec)
    assert not report.ok
    bad = [v for v in report.violations if "joint cost matrix not PSD" in v.detail]
    assert len(bad) == spec.horizon
    assert "-1.0" in bad[0].detail


def test_validate_reports_all_violations():
    spec = dl.make_spec(
        A_blocks=[1.0], B_remote=[np.zeros((1, 0))], B_local=[1.0],
        Q=1.0, M=[[0.0]], R=0.0, Q_terminal=1.0,
        sigma_x0=[-1.0], sigma_w=[1.0], drop_prob=[1.3], horizon=1)
    report = dl.validate_spec(spec)
    rules = {v.rule for v in report.violations}
    assert {"A3", "A2", "drop-prob-range"} <= rules


def test_validate_covariance_asymmetric():
    bad = dl.make_spec(
        A_blocks=[np.eye(2)], B_remote=[np.zeros((2, 0))],
        B_local=[np.eye(2)],
        Q=np.eye(2), M=np.zeros((2, 2)), R=np.eye(2), Q_terminal=np.eye(2),
        sigma_x0=[[[1.0, 0.5], [0.0, 1.0]]], sigma_w=[np.eye(2)],
        drop_prob=[0.5], horizon=1)
    report = dl.validate_spec(bad)
    assert any(v.rule == "A2" and "symmetric" in v.detail
               for v in report.violations)
    assert report.ok != bool(report.violations)


def test_validate_dimension_mismatch():
    spec = dl.make_spec(
        A_blocks=[np.eye(2)], B_remote=[np.zeros((1, 1))], B_local=[np.eye(2)],
        Q=np.eye(2), M=np.zeros((2, 3)), R=np.eye(3), Q_terminal=np.eye(2),
        sigma_x0=[np.eye(2)], sigma_w=[np.eye(2)], drop_prob=[0.1], horizon=1)
    report = dl.validate_spec(spec)
    assert any(v.rule == "dimension" and "B_remote[0]" in v.subject
               for v in report.violations)
    with pytest.raises(StructuralError):
        dl.assemble_global(spec)


def test_psd_tolerance_accepts_rounding_noise():
    eps = np.array([[1.0, 0.0], [0.0, -1e-12]])
    ok, _ = dl.model.check_psd(eps)
    assert ok
    ok, _ = dl.model.check_psd(np.array([[1.0, 0.0], [0.0, -1e-6]]))
    assert not ok


def test_assemble_global_n2_scalar():
    spec = scalar_pair_spec(A=(1.0, 1.0), Brem=(1.0, 1.0))
    g = dl.assemble_global(spec)
    assert np.array_equal(g.A, np.diag([1.0, 1.0]))
    assert np.array_equal(g.B, np.array([[1.0, 1.0, 0.0], [1.0, 0.0, 1.0]]))


def test_assemble_global_n1():
    A = np.array([[0.5, 0.1], [0.0, 0.9]])
    B0 = np.array([[1.0], [0.2]])
    B1 = np.array([[0.3], [1.0]])
    spec = dl.make_spec(
        A_blocks=[A], B_remote=[B0], B_local=[B1],
        Q=np.eye(2), M=np.zeros((2, 2)), R=np.eye(2), Q_terminal=np.eye(2),
        sigma_x0=[np.eye(2)], sigma_w=[np.eye(2)], drop_prob=[0.2], horizon=2)
    g = dl.assemble_global(spec)
    assert np.array_equal(g.A, A)
    assert np.array_equal(g.B, np.hstack([B0, B1]))


def test_assemble_global_n3_zero_pattern():
    spec = triple_spec()
    g = dl.assemble_global(spec)
    for i in range(3):
        for j in range(3):
            blk = dl.extract_block(g.B, spec, ("B", i + 1, j + 1))
            if i == j:
                assert np.array_equal(blk, spec.B_local[i])
            else:
                assert np.all(blk == 0.0)
    # off-diagonal A blocks are zero, diagonal equals the subsystem matrices
    for i in range(3):
        assert np.array_equal(
            dl.extract_block(g.A, spec, ("P", i + 1, i + 1)), spec.A_blocks[i])


def test_extract_block_examples():
    spec = scalar_pair_spec()
    Q = np.array([[1.0, 2.0], [2.0, 5.0]])
    assert dl.extract_block(Q, spec, "Q22") == np.array([[5.0]])
    M = np.arange(6.0).reshape(2, 3)
    # M11 is row block 1, column block "local-1" (the second column block)
    assert dl.extract_block(M, spec, "M11") == np.array([[1.0]])
    P = np.array([[7.0, 1.0], [1.0, 9.0]])
    assert dl.extract_block(P, spec, "P11") == np.array([[7.0]])


def test_extract_block_out_of_range():
    spec = scalar_pair_spec()
    with pytest.raises(IndexError):
        dl.extract_block(np.eye(2), spec, ("Q", 3, 1))
    with pytest.raises(IndexError):
        dl.extract_block(np.eye(3), spec, ("R", 0, 3))


def test_extract_assemble_roundtrip_bitexact():
    rng = np.random.default_rng(0)
    for k in range(10):
        spec = random_instance(rng, N=int(rng.integers(1, 4)), max_dim=3)
        g = dl.assemble_global(spec)
        for i in range(spec.N):
            assert np.array_equal(
                dl.extract_block(g.A, spec, ("P", i + 1, i + 1)),
                spec.A_blocks[i])
            assert np.array_equal(
                dl.extract_block(g.B, spec, ("B", i + 1, 0)), spec.B_remote[i])
            assert np.array_equal(
                dl.extract_block(g.B, spec, ("B", i + 1, i + 1)),
                spec.B_local[i])


def test_remote_action_dim_zero():
    spec = dl.make_spec(
        A_blocks=[1.0, 1.0], B_remote=[np.zeros((1, 0)), np.zeros((1, 0))],
        B_local=[1.0, 1.0], Q=np.eye(2), M=np.zeros((2, 2)), R=np.eye(2),
        Q_terminal=np.eye(2), sigma_x0=[1.0, 1.0], sigma_w=[1.0, 1.0],
        drop_prob=[0.5, 0.5], horizon=2)
    assert spec.remote_action_dim == 0
    assert dl.validate_spec(spec).ok
    g = dl.assemble_global(spec)
    assert g.B.shape == (2, 2)


def test_per_step_cost_sequences():
    Qs = [np.eye(2) * (t + 1) for t in range(3)]
    spec = scalar_pair_spec()
    spec2 = dl.make_spec(
        A_blocks=[1.0, 0.8], B_remote=[1.0, 0.5], B_local=[1.0, 1.0],
        Q=Qs, M=np.zeros((2, 3)), R=np.eye(3), Q_terminal=np.eye(2),
        sigma_x0=[1.0, 2.0], sigma_w=[0.5, 1.0], drop_prob=[0.3, 0.7],
        horizon=3)
    assert dl.validate_spec(spec2).ok
    assert spec2.Q[2][0, 0] == 3.0
    assert spec.Q[0] is spec.Q[2]  # broadcast shares the same array


def test_spec_arrays_immutable():
    spec = scalar_pair_spec()
    with pytest.raises(ValueError):
        spec.Q[0][0, 0] = 5.0


def test_spec_from_json_roundtrip():
    doc = {
        "N": 1, "horizon": 2,
        "subsystems": [{"A": [[1.0]], "B_remote": [[1.0]],
                        "B_local": [[1.0]], "sigma_x0": [[1.0]],
                        "sigma_w": [[1.0]], "drop_prob": 0.25}],
        "cost": {"Q": [[1.0]], "M": [[0.0, 0.0]],
                 "R": [[1.0, 0.0], [0.0, 1.0]], "Q_terminal": [[1.0]]},
        "noise_family": "uniform",
    }
    spec = dl.spec_from_json(doc)
    assert spec.N == 1
    assert spec.noise_family == "uniform"
    assert dl.validate_spec(spec).ok


def test_spec_from_json_drop_prob_range():
    doc = {
        "N": 1, "horizon": 1,
        "subsystems": [{"A": [[1.0]], "B_remote": [[1.0]],
                        "B_local": [[1.0]], "sigma_x0": [[1.0]],
                        "sigma_w": [[1.0]], "drop_prob": 1.3}],
        "cost": {"Q": [[1.0]], "M": [[0.0, 0.0]],
                 "R": [[1.0, 0.0], [0.0, 1.0]], "Q_terminal": [[1.0]]},
    }
    with pytest.raises(ConfigError) as exc:
        dl.spec_from_json(doc)
    assert any(ptr == "/subsystems/0/drop_prob" for ptr, _ in exc.value.errors)


def test_spec_from_json_missing_terminal_cost():
    doc = {
        "N": 1, "horizon": 1,
        "subsystems": [{"A": [[1.0]], "B_remote": [[1.0]],
                        "B_local": [[1.0]], "sigma_x0": [[1.0]],
                        "sigma_w": [[1.0]], "drop_prob": 0.5}],
        "cost": {"Q": [[1.0]], "M": [[0.0, 0.0]],
                 "R": [[1.0, 0.0], [0.0, 1.0]]},
    }
    with pytest.raises(ConfigError) as exc:
        dl.spec_from_json(doc)
    assert any(ptr.endswith("/cost/Q_terminal") for ptr, _ in exc.value.errors)


def test_global_covariances():
    spec = scalar_pair_spec(sx=(1.0, 2.0), sw=(0.5, 1.0))
    assert np.array_equal(dl.model.sigma_x_global(spec), np.diag([1.0, 2.0]))
    assert np.array_equal(dl.model.sigma_w_global(spec, 0), np.diag([0.5, 1.0]))
