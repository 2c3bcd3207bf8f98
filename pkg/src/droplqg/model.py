"""Problem instances: block dynamics, cost weights, noise statistics, drop channels.

A system is N decoupled linear subsystems x^i' = A^ii x^i + B^i0 u^0 + B^ii u^i + w^i,
one remote controller acting on all of them through B^i0, and one lossy uplink per
subsystem. Cost matrices are partitioned block-wise over (states, remote action,
local actions).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StructuralError

NOISE_FAMILIES = ("gaussian", "uniform", "rademacher-scaled")

# Tolerance scales for semidefiniteness checks (relative to spectral norm).
PSD_TOL_SCALE = 1e-9
PD_TOL_SCALE = 1e-12


def _as_matrix(x) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise StructuralError(f"expected a matrix, got array of ndim {m.ndim}")
    return m


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


def _broadcast_steps(value, horizon: int) -> tuple[np.ndarray, ...]:
    """One matrix broadcast over t, or an explicit per-step sequence of matrices."""
    arr = np.asarray(value, dtype=float)
    if arr.ndim <= 2:
        m = _freeze(_as_matrix(arr))
        return tuple(m for _ in range(horizon))
    return tuple(_freeze(_as_matrix(v)) for v in value)


@dataclass(frozen=True)
class SystemSpec:
    """Full problem instance. Immutable after construction (arrays are read-only)."""

    N: int
    horizon: int
    A_blocks: tuple
    B_remote: tuple
    B_local: tuple
    Q: tuple          # per-step, length horizon
    M: tuple
    R: tuple
    Q_terminal: np.ndarray
    sigma_x0: tuple
    sigma_w: tuple    # [i][t]
    drop_prob: tuple
    noise_family: str = "gaussian"

    @property
    def state_dims(self) -> tuple:
        return tuple(a.shape[0] for a in self.A_blocks)

    @property
    def local_action_dims(self) -> tuple:
        return tuple(b.shape[1] for b in self.B_local)

    @property
    def remote_action_dim(self) -> int:
        return self.B_remote[0].shape[1]

    @property
    def n_state(self) -> int:
        return sum(self.state_dims)

    @property
    def n_action(self) -> int:
        return self.remote_action_dim + sum(self.local_action_dims)

    def state_offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.state_dims))).astype(np.int64)

    def action_offsets(self) -> np.ndarray:
        """Offsets of the N+1 action blocks, ordered (remote, local-1, ..., local-N)."""
        dims = (self.remote_action_dim,) + self.local_action_dims
        return np.concatenate(([0], np.cumsum(dims))).astype(np.int64)

    def state_slice(self, i: int) -> slice:
        off = self.state_offsets()
        return slice(int(off[i - 1]), int(off[i]))

    def action_slice(self, j: int) -> slice:
        """Action block j, with j = 0 the remote block and j >= 1 local block j."""
        off = self.action_offsets()
        return slice(int(off[j]), int(off[j + 1]))


def make_spec(A_blocks, B_remote, B_local, Q, M, R, Q_terminal, sigma_x0,
              sigma_w, drop_prob, horizon, noise_family="gaussian") -> SystemSpec:
    """Normalize user input into a SystemSpec (scalars become 1x1 matrices,
    constant cost/noise matrices are broadcast over the horizon).

    Dimension consistency is *not* enforced here; ``validate_spec`` reports it.
    """
    horizon = int(horizon)
    if horizon < 1:
        raise StructuralError(f"horizon must be >= 1, got {horizon}")
    N = len(A_blocks)
    if N < 1:
        raise StructuralError("need at least one subsystem")
    if noise_family not in NOISE_FAMILIES:
        raise StructuralError(
            f"unknown noise_family {noise_family!r}; expected one of {NOISE_FAMILIES}")
    if len(B_remote) != N or len(B_local) != N or len(sigma_x0) != N \
            or len(sigma_w) != N or len(drop_prob) != N:
        raise StructuralError("per-subsystem lists must all have length N")

    return SystemSpec(
        N=N,
        horizon=horizon,
        A_blocks=tuple(_freeze(_as_matrix(a)) for a in A_blocks),
        B_remote=tuple(_freeze(_as_matrix(b)) for b in B_remote),
        B_local=tuple(_freeze(_as_matrix(b)) for b in B_local),
        Q=_broadcast_steps(Q, horizon),
        M=_broadcast_steps(M, horizon),
        R=_broadcast_steps(R, horizon),
        Q_terminal=_freeze(_as_matrix(Q_terminal)),
        sigma_x0=tuple(_freeze(_as_matrix(s)) for s in sigma_x0),
        sigma_w=tuple(_broadcast_steps(s, horizon) for s in sigma_w),
        drop_prob=tuple(float(p) for p in drop_prob),
        noise_family=str(noise_family),
    )


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    rule: str      # "A2", "A3", "dimension", "drop-prob-range"
    subject: str   # offending matrix/index, e.g. "R[2]" or "sigma_w[1][0]"
    detail: str

    def __str__(self):
        return f"[{self.rule}] {self.subject}: {self.detail}"


@dataclass(frozen=True)
class ValidationReport:
    violations: tuple

    @property
    def ok(self) -> bool:
        return len(self.violations) == 0

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(str(v) for v in self.violations)


def _sym_part(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.T)


def _spectral_scale(x: np.ndarray) -> float:
    if x.size == 0:
        return 1.0
    return max(1.0, float(np.max(np.abs(np.linalg.eigvalsh(_sym_part(x))))))


def check_symmetric(x: np.ndarray, rtol: float = 1e-8) -> bool:
    if x.shape[0] != x.shape[1]:
        return False
    if x.size == 0:
        return True
    scale = max(1.0, float(np.max(np.abs(x))))
    return float(np.max(np.abs(x - x.T))) <= rtol * scale


def check_psd(x: np.ndarray) -> tuple[bool, float]:
    """(ok, min eigenvalue) under the PSD tolerance; x is symmetrized first."""
    if x.size == 0:
        return True, 0.0
    eigs = np.linalg.eigvalsh(_sym_part(x))
    tol = PSD_TOL_SCALE * max(1.0, float(np.max(np.abs(eigs))))
    return bool(eigs[0] >= -tol), float(eigs[0])


def check_pd(x: np.ndarray) -> tuple[bool, float]:
    """(ok, min eigenvalue) under the PD tolerance; empty matrices pass vacuously."""
    if x.size == 0:
        return True, 0.0
    eigs = np.linalg.eigvalsh(_sym_part(x))
    tol = PD_TOL_SCALE * max(1.0, float(np.max(np.abs(eigs))))
    return bool(eigs[0] >= tol), float(eigs[0])


def validate_spec(spec: SystemSpec) -> ValidationReport:
    """Check dimension consistency, the joint cost PSD / R PD assumptions,
    covariance PSDness and drop-probability ranges. All violations are
    collected; nothing raises."""
    out = []
    n_dims = spec.state_dims
    m0 = spec.remote_action_dim
    m_loc = spec.local_action_dims
    n, m = spec.n_state, spec.n_action
    T = spec.horizon

    dims_ok = True

    def dim(subject, detail):
        nonlocal dims_ok
        dims_ok = False
        out.append(Violation("dimension", subject, detail))

    for i in range(spec.N):
        ni = n_dims[i]
        if spec.A_blocks[i].shape != (ni, ni):
            dim(f"A[{i}]", f"expected square, got {spec.A_blocks[i].shape}")
        if spec.B_remote[i].shape != (ni, m0):
            dim(f"B_remote[{i}]",
                f"expected {(ni, m0)}, got {spec.B_remote[i].shape}")
        if spec.B_local[i].shape[0] != ni:
            dim(f"B_local[{i}]",
                f"expected {ni} rows, got {spec.B_local[i].shape[0]}")
        if spec.sigma_x0[i].shape != (ni, ni):
            dim(f"sigma_x0[{i}]",
                f"expected {(ni, ni)}, got {spec.sigma_x0[i].shape}")
        if len(spec.sigma_w[i]) != T:
            dim(f"sigma_w[{i}]", f"expected {T} matrices, got {len(spec.sigma_w[i])}")
        for t, s in enumerate(spec.sigma_w[i]):
            if s.shape != (ni, ni):
                dim(f"sigma_w[{i}][{t}]", f"expected {(ni, ni)}, got {s.shape}")

    if not (len(spec.Q) == len(spec.M) == len(spec.R) == T):
        dim("Q/M/R", f"expected {T} matrices per sequence, got "
            f"{len(spec.Q)}/{len(spec.M)}/{len(spec.R)}")
    for t in range(min(T, len(spec.Q))):
        if spec.Q[t].shape != (n, n):
            dim(f"Q[{t}]", f"expected {(n, n)}, got {spec.Q[t].shape}")
    for t in range(min(T, len(spec.M))):
        if spec.M[t].shape != (n, m):
            dim(f"M[{t}]", f"expected {(n, m)}, got {spec.M[t].shape}")
    for t in range(min(T, len(spec.R))):
        if spec.R[t].shape != (m, m):
            dim(f"R[{t}]", f"expected {(m, m)}, got {spec.R[t].shape}")
    if spec.Q_terminal.shape != (n, n):
        dim("Q_terminal", f"expected {(n, n)}, got {spec.Q_terminal.shape}")

    # (A3): joint cost PSD, R PD, per step. Skipped when shapes are broken.
    if dims_ok:
        for t in range(T):
            Qt, Mt, Rt = spec.Q[t], spec.M[t], spec.R[t]
            joint = np.block([[Qt, Mt], [Mt.T, Rt]])
            if not check_symmetric(joint):
                out.append(Violation("A3", f"[[Q,M],[M',R]][{t}]", "not symmetric"))
            ok, lo = check_psd(joint)
            if not ok:
                out.append(Violation(
                    "A3", f"[[Q,M],[M',R]][{t}]",
                    f"joint cost matrix not PSD (min eigenvalue {lo:.3e})"))
            ok, lo = check_pd(Rt)
            if not ok:
                out.append(Violation(
                    "A3", f"R[{t}]",
                    f"R not positive definite (min eigenvalue {lo:.3e})"))
        ok, lo = check_psd(spec.Q_terminal)
        if not check_symmetric(spec.Q_terminal):
            out.append(Violation("A3", "Q_terminal", "not symmetric"))
        if not ok:
            out.append(Violation(
                "A3", "Q_terminal", f"not PSD (min eigenvalue {lo:.3e})"))

    # (A2): covariances symmetric PSD.
    for i in range(spec.N):
        seq = [("sigma_x0", spec.sigma_x0[i], None)]
        seq += [("sigma_w", s, t) for t, s in enumerate(spec.sigma_w[i])]
        for name, s, t in seq:
            subject = f"{name}[{i}]" if t is None else f"{name}[{i}][{t}]"
            if s.shape[0] != s.shape[1]:
                continue  # already reported as a dimension violation
            if not check_symmetric(s):
                out.append(Violation("A2", subject, "covariance not symmetric"))
            ok, lo = check_psd(s)
            if not ok:
                out.append(Violation(
                    "A2", subject, f"covariance not PSD (min eigenvalue {lo:.3e})"))

    for i, p in enumerate(spec.drop_prob):
        if not (0.0 <= p <= 1.0):
            out.append(Violation(
                "drop-prob-range", f"drop_prob[{i}]", f"p = {p} outside [0, 1]"))

    return ValidationReport(violations=tuple(out))


# ---------------------------------------------------------------------------
# Global block assembly and block extraction
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GlobalMatrices:
    A: np.ndarray   # block diagonal over subsystems
    B: np.ndarray   # column blocks [remote | local-1 | ... | local-N]


def assemble_global(spec: SystemSpec) -> GlobalMatrices:
    """Stack subsystem blocks into the global (A, B). B's local column block i
    is zero outside the subsystem-i rows."""
    n, m = spec.n_state, spec.n_action
    soff = spec.state_offsets()
    aoff = spec.action_offsets()
    m0 = spec.remote_action_dim

    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for i in range(spec.N):
        r = slice(soff[i], soff[i + 1])
        ni = soff[i + 1] - soff[i]
        if spec.A_blocks[i].shape != (ni, ni):
            raise StructuralError(f"A[{i}] has shape {spec.A_blocks[i].shape}, "
                                  f"expected {(ni, ni)}")
        if spec.B_remote[i].shape != (ni, m0):
            raise StructuralError(f"B_remote[{i}] has shape {spec.B_remote[i].shape}, "
                                  f"expected {(ni, m0)}")
        if spec.B_local[i].shape[0] != ni:
            raise StructuralError(f"B_local[{i}] has {spec.B_local[i].shape[0]} rows, "
                                  f"expected {ni}")
        A[r, r] = spec.A_blocks[i]
        B[r, 0:m0] = spec.B_remote[i]
        B[r, aoff[i + 1]:aoff[i + 2]] = spec.B_local[i]
    return GlobalMatrices(A=_freeze(A), B=_freeze(B))


_BLOCK_KINDS = {
    "Q": ("state", "state"),
    "P": ("state", "state"),
    "M": ("state", "action"),
    "B": ("state", "action"),
    "R": ("action", "action"),
}


def _parse_selector(selector):
    if isinstance(selector, str):
        kind = selector.rstrip("0123456789")
        digits = selector[len(kind):]
        if len(digits) != 2:
            raise ValueError(f"cannot parse selector {selector!r}; "
                             "use tuple form (kind, i, j) for indices > 9")
        return kind, int(digits[0]), int(digits[1])
    kind, i, j = selector
    return kind, int(i), int(j)


def extract_block(matrix: np.ndarray, spec: SystemSpec, selector) -> np.ndarray:
    """Read one block of a block-partitioned matrix.

    ``selector`` is "Q11", "M10", ("R", 0, 2), ... — kinds Q/P are
    state-by-state, M/B state-by-action, R action-by-action. State indices are
    1-based subsystem numbers; action indices use 0 for the remote block and
    i for local block i. Pure slicing: no arithmetic is performed.
    """
    kind, i, j = _parse_selector(selector)
    if kind not in _BLOCK_KINDS:
        raise ValueError(f"unknown block kind {kind!r}")
    row_axis, col_axis = _BLOCK_KINDS[kind]

    def ax_slice(axis, idx):
        if axis == "state":
            if not 1 <= idx <= spec.N:
                raise IndexError(f"state block index {idx} out of range 1..{spec.N}")
            return spec.state_slice(idx)
        if not 0 <= idx <= spec.N:
            raise IndexError(f"action block index {idx} out of range 0..{spec.N}")
        return spec.action_slice(idx)

    return matrix[ax_slice(row_axis, i), ax_slice(col_axis, j)]


def sigma_x_global(spec: SystemSpec) -> np.ndarray:
    """Block-diagonal initial-state covariance (subsystems are independent)."""
    n = spec.n_state
    out = np.zeros((n, n))
    for i in range(spec.N):
        s = spec.state_slice(i + 1)
        out[s, s] = spec.sigma_x0[i]
    return out


def sigma_w_global(spec: SystemSpec, t: int) -> np.ndarray:
    n = spec.n_state
    out = np.zeros((n, n))
    for i in range(spec.N):
        s = spec.state_slice(i + 1)
        out[s, s] = spec.sigma_w[i][t]
    return out


# ---------------------------------------------------------------------------
# JSON interface
# ---------------------------------------------------------------------------

def _require(doc, key, ptr, errors, types=None):
    if key not in doc:
        errors.append((f"{ptr}/{key}", "missing required key"))
        return None
    val = doc[key]
    if types is not None and not isinstance(val, types):
        errors.append((f"{ptr}/{key}", f"expected {types}, got {type(val).__name__}"))
        return None
    return val


def spec_from_json(doc: dict, ptr: str = "") -> SystemSpec:
    """Build a SystemSpec from its JSON document form.

    Expected top-level keys: N, horizon, subsystems (array of objects with
    A, B_remote, B_local, sigma_x0, sigma_w, drop_prob), cost (Q, M, R,
    Q_terminal; each a matrix or an array of per-step matrices), noise_family.
    Raises ConfigError with JSON-pointer locations on schema problems.
    """
    errors: list = []
    if not isinstance(doc, dict):
        raise ConfigError([(ptr or "/", "system document must be an object")])

    N = _require(doc, "N", ptr, errors, int)
    horizon = _require(doc, "horizon", ptr, errors, int)
    subsystems = _require(doc, "subsystems", ptr, errors, list)
    cost = _require(doc, "cost", ptr, errors, dict)
    family = doc.get("noise_family", "gaussian")
    if family not in NOISE_FAMILIES:
        errors.append((f"{ptr}/noise_family",
                       f"expected one of {list(NOISE_FAMILIES)}, got {family!r}"))

    if N is not None and subsystems is not None and len(subsystems) != N:
        errors.append((f"{ptr}/subsystems", f"expected {N} entries, got {len(subsystems)}"))
    if horizon is not None and horizon < 1:
        errors.append((f"{ptr}/horizon", f"must be >= 1, got {horizon}"))

    subs = []
    for k, sub in enumerate(subsystems or []):
        sp = f"{ptr}/subsystems/{k}"
        if not isinstance(sub, dict):
            errors.append((sp, "expected an object"))
            continue
        entry = {}
        for key in ("A", "B_remote", "B_local", "sigma_x0", "sigma_w"):
            entry[key] = _require(sub, key, sp, errors, list)
        p = _require(sub, "drop_prob", sp, errors, (int, float))
        if p is not None and not (0.0 <= p <= 1.0):
            errors.append((f"{sp}/drop_prob", f"must lie in [0, 1], got {p}"))
        entry["drop_prob"] = p
        subs.append(entry)

    cost_vals = {}
    for key in ("Q", "M", "R", "Q_terminal"):
        cost_vals[key] = _require(cost or {}, key, f"{ptr}/cost", errors, list)

    if errors:
        raise ConfigError(errors)

    try:
        return make_spec(
            A_blocks=[s["A"] for s in subs],
            B_remote=[s["B_remote"] for s in subs],
            B_local=[s["B_local"] for s in subs],
            Q=cost_vals["Q"], M=cost_vals["M"], R=cost_vals["R"],
            Q_terminal=cost_vals["Q_terminal"],
            sigma_x0=[s["sigma_x0"] for s in subs],
            sigma_w=[s["sigma_w"] for s in subs],
            drop_prob=[s["drop_prob"] for s in subs],
            horizon=horizon,
            noise_family=family,
        )
    except (StructuralError, ValueError) as exc:
        raise ConfigError([(ptr or "/", str(exc))]) from exc


def load_spec(path) -> SystemSpec:
    with open(path) as fh:
        return spec_from_json(json.load(fh))
