import numpy as np
import pytest

import droplqg as dl
from droplqg._backend import available_backends, build_batch_problem, \
    rollout_batch
from droplqg.sampling import draw_primitives

from conftest import random_instance, scalar_pair_spec, triple_spec

HAVE_COMPILED = "compiled" in available_backends()

needs_compiled = pytest.mark.skipif(not HAVE_COMPILED,
                                    reason="compiled kernel not built")


def _both(spec, strategy, reps, seed, schedule=None, **flags):
    draws = draw_primitives(spec, seed, reps)
    prob = build_batch_problem(spec, strategy, dl.assemble_global(spec),
                               schedule=schedule)
    out = {}
    for backend in available_backends():
        out[backend] = rollout_batch(prob, draws.x0, draws.w, draws.gamma,
                                     backend=backend, **flags)
    return out


@needs_compiled
def test_backends_agree_on_costs():
    rng = np.random.default_rng(2)
    for k in range(6):
        spec = random_instance(rng, N=int(rng.integers(1, 4)), max_dim=3)
        strat = dl.random_strategy(spec, seed=k)
        outs = _both(spec, strat, 500, seed=k)
        a, b = outs["compiled"], outs["numpy"]
        for key in ("stage_sum", "terminal", "total"):
            scale = np.maximum(1.0, np.abs(a[key]))
            assert np.max(np.abs(a[key] - b[key]) / scale) < 1e-12, key


@needs_compiled
def test_backends_agree_on_decomposition_and_states():
    spec = triple_spec()
    sched = dl.synthesize(spec)
    strat = dl.random_strategy(spec, seed=5)
    outs = _both(spec, strat, 300, seed=9, schedule=sched,
                 collect_states=True, want_decomp=True)
    a, b = outs["compiled"], outs["numpy"]
    for key in ("init", "common_pen", "local_pen", "noise", "xhat", "xtilde"):
        scale = np.maximum(1.0, np.abs(a[key]))
        assert np.max(np.abs(a[key] - b[key]) / scale) < 1e-12, key


@needs_compiled
def test_backend_env_override(monkeypatch):
    monkeypatch.setenv("DROPLQG_BACKEND", "numpy")
    assert dl.default_backend() == "numpy"
    monkeypatch.setenv("DROPLQG_BACKEND", "compiled")
    assert dl.default_backend() == "compiled"
    monkeypatch.setenv("DROPLQG_BACKEND", "bogus")
    with pytest.raises(ValueError):
        dl.default_backend()


def test_batch_matches_single_trajectories(backend):
    spec = scalar_pair_spec()
    strat = dl.random_strategy(spec, seed=4)
    reps = 16
    draws = draw_primitives(spec, 12, reps)
    prob = build_batch_problem(spec, strat, dl.assemble_global(spec))
    out = rollout_batch(prob, draws.x0, draws.w, draws.gamma, backend=backend,
                        collect_states=True)
    for r in range(reps):
        rec = dl.run_trajectory(spec, strat, 12, rep=r, draws=draws)
        assert abs(out["total"][r] - rec.total_cost) < 1e-10
        assert np.allclose(out["xhat"][:, r], rec.x_hat, atol=1e-12)
        assert np.allclose(out["xtilde"][:, r], rec.x_tilde, atol=1e-12)


def test_delivered_errors_exactly_zero(backend):
    spec = scalar_pair_spec(p=(0.5, 0.5))
    strat = dl.random_strategy(spec, seed=6)
    draws = draw_primitives(spec, 8, 200)
    prob = build_batch_problem(spec, strat, dl.assemble_global(spec))
    out = rollout_batch(prob, draws.x0, draws.w, draws.gamma, backend=backend,
                        collect_states=True)
    for t in range(spec.horizon + 1):
        for i in range(spec.N):
            delivered = draws.gamma[t, :, i] == 1
            block = out["xtilde"][t][:, spec.state_slice(i + 1)]
            assert np.all(block[delivered] == 0.0)


def test_decomposition_requires_schedule():
    spec = scalar_pair_spec()
    strat = dl.zero_strategy(spec)
    draws = draw_primitives(spec, 1, 10)
    prob = build_batch_problem(spec, strat, dl.assemble_global(spec))
    with pytest.raises(ValueError):
        rollout_batch(prob, draws.x0, draws.w, draws.gamma, want_decomp=True)


def test_fallback_when_extension_missing(monkeypatch):
    # simulate an install without the compiled extension
    from droplqg import _backend
    monkeypatch.setattr(_backend, "_kernel_c", None)
    monkeypatch.delenv("DROPLQG_BACKEND", raising=False)
    assert _backend.available_backends() == ("numpy",)
    assert _backend.default_backend() == "numpy"
    spec = scalar_pair_spec()
    rep = dl.monte_carlo(spec, dl.zero_strategy(spec), 50, seed=2)
    assert rep.backend == "numpy"
    draws = draw_primitives(spec, 1, 5)
    prob = build_batch_problem(spec, dl.zero_strategy(spec),
                               dl.assemble_global(spec))
    with pytest.raises(RuntimeError):
        rollout_batch(prob, draws.x0, draws.w, draws.gamma, backend="compiled")
