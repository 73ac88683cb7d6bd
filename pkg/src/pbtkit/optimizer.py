"""Success-probability maximization over the sender's measurement.

For a fixed resource state, the measurements that teleport perfectly on
every success outcome are cut out by linear constraints: replacing the input
state with any operator X on the input space, the port-k output of element
M_k must be q_k X.  Together with positivity of the M_k and of the leftover
failure element, maximizing the total success probability sum_k q_k is a
semidefinite program.

Two problem forms are provided.  ``build_sdp``/``solve`` keep the resource
fixed and optimize the measurement only.  ``build_joint_sdp``/``solve_joint``
also optimize the resource: the protocol is parameterized by the conditional
Choi operators of the input-to-port maps, which form a valid protocol exactly
when they are PSD and sum below (identity x resource marginal); a steering
construction turns the optimum back into a concrete resource state and
measurement.  The joint form is what attains the N/(N+3) single-qubit
ceiling; with the resource pinned to maximally entangled pairs the true
optima are strictly smaller for N >= 2 (exactly 1/3 at N = 2).

The teleportation constraint forces every feasible block onto an explicit
face of the PSD cone (its partial trace is proportional to a fixed
rank-deficient operator, which pins the support).  The solver therefore
works in exact face coordinates, where the geometry is transversal: a
first-order consensus splitting scheme alternates projection onto the affine
constraints (precomputed factorization) with PSD-cone eigenvalue clipping,
plus an objective-ascent tilt.  A final rounding pass projects to exact
feasibility and re-evaluates the objective, so the reported optimum is a
true lower bound.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .engine import (
    PbtProtocol,
    measure,
    port_label,
    success_probability,
    teleport_report,
)
from .errors import LayoutError, ProtocolError
from .pauli import haar_states
from .report import AuditReport
from .signaling import bound
from .tensor import (
    HermitianMatrix,
    StateVector,
    SystemLayout,
    maximally_entangled,
    merge_subsystems,
    permute_subsystems,
    tensor_product,
)

#: largest total protocol dimension accepted by the optimizer
DIMENSION_CAP = 1 << 15


# ---------------------------------------------------------------------------
# orthonormal real parameterization of Hermitian matrices


def hermitian_basis_entries(d: int) -> list[list[tuple[int, int, complex]]]:
    """Sparse entries of the orthonormal Hermitian basis of C^{d x d}:
    diagonal units first, then symmetric and antisymmetric pair combinations."""
    entries: list[list[tuple[int, int, complex]]] = []
    for i in range(d):
        entries.append([(i, i, 1.0 + 0j)])
    s = 1.0 / np.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            entries.append([(i, j, s + 0j), (j, i, s + 0j)])
            entries.append([(i, j, 1j * s), (j, i, -1j * s)])
    return entries


def hermitian_basis(d: int) -> list[np.ndarray]:
    out = []
    for spec in hermitian_basis_entries(d):
        m = np.zeros((d, d), dtype=np.complex128)
        for i, j, w in spec:
            m[i, j] += w
        out.append(m)
    return out


def _pair_offsets(d: int) -> dict[tuple[int, int], int]:
    offsets = {}
    idx = d
    for i in range(d):
        for j in range(i + 1, d):
            offsets[(i, j)] = idx
            idx += 2
    return offsets


def herm_to_vec(m: np.ndarray) -> np.ndarray:
    """Coordinates in the orthonormal Hermitian basis (a Frobenius isometry)."""
    d = m.shape[0]
    vec = np.empty(d * d)
    vec[:d] = np.diag(m).real
    idx = d
    s = np.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            vec[idx] = s * m[i, j].real
            vec[idx + 1] = s * m[i, j].imag
            idx += 2
    return vec


def vec_to_herm(vec: np.ndarray, d: int) -> np.ndarray:
    m = np.zeros((d, d), dtype=np.complex128)
    np.fill_diagonal(m, vec[:d])
    idx = d
    s = 1.0 / np.sqrt(2.0)
    for i in range(d):
        for j in range(i + 1, d):
            val = (vec[idx] + 1j * vec[idx + 1]) * s
            m[i, j] = val
            m[j, i] = np.conj(val)
            idx += 2
    return m


def _basis_positions(d: int, offsets, i: int, j: int) -> list[tuple[int, complex]]:
    """Which basis coordinates see entry (i, j), with conjugated weights."""
    s = 1.0 / np.sqrt(2.0)
    if i == j:
        return [(i, 1.0 + 0j)]
    if i < j:
        base = offsets[(i, j)]
        return [(base, s + 0j), (base + 1, -1j * s)]
    base = offsets[(j, i)]
    return [(base, s + 0j), (base + 1, 1j * s)]


def _lift_matrix(basis: np.ndarray) -> np.ndarray:
    """Real-coordinate matrix of Y -> V Y V^dag for an isometry V (big^2 x r^2)."""
    r = basis.shape[1]
    cols = []
    for spec in hermitian_basis_entries(r):
        y = np.zeros((r, r), dtype=np.complex128)
        for i, j, w in spec:
            y[i, j] += w
        cols.append(herm_to_vec(basis @ y @ basis.conj().T))
    return np.stack(cols, axis=1)


def _omega_vec(d: int) -> np.ndarray:
    vec = np.zeros(d * d, dtype=np.complex128)
    for i in range(d):
        vec[i * d + i] = 1.0
    return vec


# ---------------------------------------------------------------------------
# problem assembly: fixed resource


def standard_resource(n: int, N: int) -> StateVector:
    """N maximally entangled pairs of 2^n-dimensional systems, as (A, B1..BN)."""
    d = 2**n
    pairs = [maximally_entangled((f"A{j}", d), (port_label(j), d))
             for j in range(1, N + 1)]
    resource = tensor_product(pairs)
    order = [f"A{j}" for j in range(1, N + 1)] + [port_label(j) for j in range(1, N + 1)]
    resource = permute_subsystems(resource, order)
    return merge_subsystems(resource, [f"A{j}" for j in range(1, N + 1)], "A")


@dataclass
class PbtSdp:
    """The teleportation SDP for a fixed resource: per-port affine constraint
    blocks over real Hermitian coordinates, plus the q-coupling pattern."""

    n: int
    N: int
    resource: StateVector
    dim_povm: int                 # 2^n * dim(A)
    blocks: list[np.ndarray]      # per port: rows x dim_povm^2
    rhs_pattern: np.ndarray       # q-coupling vector over the constraint rows

    @property
    def rows_per_port(self) -> int:
        return self.rhs_pattern.size

    def port_map_residual(self, ms: Sequence[np.ndarray], qs: Sequence[float]) -> float:
        """Max violation of the teleportation constraints, in basis coordinates."""
        worst = 0.0
        for k in range(self.N):
            lhs = self.blocks[k] @ herm_to_vec(ms[k])
            worst = max(worst, float(np.max(np.abs(lhs - qs[k] * self.rhs_pattern))))
        return worst

    def fit_q(self, m: np.ndarray, k: int) -> float:
        lhs = self.blocks[k] @ herm_to_vec(m)
        return float(lhs @ self.rhs_pattern / (self.rhs_pattern @ self.rhs_pattern))

    def psd_violation(self, ms: Sequence[np.ndarray]) -> float:
        worst = 0.0
        for m in ms:
            worst = max(worst, float(max(0.0, -np.linalg.eigvalsh(m)[0])))
        slack = np.eye(self.dim_povm) - sum(ms)
        return max(worst, float(max(0.0, -np.linalg.eigvalsh(slack)[0])))

    def faces(self) -> list[np.ndarray]:
        """Exact support faces forced by the teleportation constraints.

        In Choi form the constraint reads (partial trace over the other
        ports) = q x (rank-one projector), which pins the support of every
        feasible Choi block; pulling that support back through the resource
        amplitude matrix gives the support of every feasible M_k."""
        d = 2**self.n
        dim_alice = self.resource.layout.dim("A")
        c_mat = self.resource.amplitudes.reshape(dim_alice, d**self.N).T
        c_pinv = np.linalg.pinv(c_mat)
        out = []
        for k in range(1, self.N + 1):
            vecs = []
            for t in range(d ** (self.N - 1)):
                w = np.zeros((d, d**self.N), dtype=np.complex128)
                w_t = _choi_face_vector(d, self.N, k, t)
                w = w_t.reshape(d, d**self.N)
                u = (w @ c_pinv.T).reshape(-1).conj()
                vecs.append(u)
            basis, _ = np.linalg.qr(np.stack(vecs, axis=1))
            out.append(basis)
        return out


def _choi_face_vector(d: int, N: int, k: int, t: int) -> np.ndarray:
    """Normalized vector (Omega on input x port k) tensor |t> on the other ports."""
    dims = (d,) + (d,) * N
    vec = np.zeros(dims, dtype=np.complex128)
    other = []
    rem = t
    for _ in range(N - 1):
        other.append(rem % d)
        rem //= d
    other = list(reversed(other))
    for i in range(d):
        idx = [0] * (N + 1)
        idx[0] = i
        idx[k] = i
        pos = 0
        for ax in range(1, N + 1):
            if ax != k:
                idx[ax] = other[pos]
                pos += 1
        vec[tuple(idx)] = 1.0 / np.sqrt(d)
    return vec.reshape(-1)


def build_sdp(n: int, N: int, resource: StateVector) -> PbtSdp:
    """Assemble the fixed-resource constraint system; verify the zero
    measurement is feasible."""
    d = 2**n
    expected = ("A",) + tuple(port_label(j) for j in range(1, N + 1))
    if resource.layout.labels != expected:
        raise LayoutError(f"resource layout {resource.layout.labels} != {expected}")
    dim_alice = resource.layout.dim("A")
    global_dim = d * dim_alice * d**N
    if global_dim > DIMENSION_CAP:
        raise LayoutError(
            f"global dimension {global_dim} exceeds the optimizer cap {DIMENSION_CAP}"
        )
    dim_povm = d * dim_alice
    n_basis = d * d

    xi = resource.amplitudes.reshape((dim_alice,) + (d,) * N)
    x_mats = hermitian_basis(d)
    in_entries = hermitian_basis_entries(dim_povm)
    out_entries = hermitian_basis_entries(d)

    blocks = []
    for k in range(1, N + 1):
        moved = np.moveaxis(xi, k, N)
        xi_k = moved.reshape(dim_alice, d ** (N - 1), d)
        # P[n', beta, m', delta] = sum_t xi[n', t, beta] conj(xi[m', t, delta])
        p_tens = np.einsum("ntb,mtd->nbmd", xi_k, xi_k.conj())
        # Q[n', m', c] = sum_{p,q} conj(H_c[p,q]) P[n', p, m', q]
        q_tens = np.zeros((dim_alice, dim_alice, n_basis), dtype=np.complex128)
        for c, spec in enumerate(out_entries):
            for p, qq, w in spec:
                q_tens[:, :, c] += np.conj(w) * p_tens[:, p, :, qq]
        block = np.zeros((n_basis * n_basis, dim_povm * dim_povm))
        for e, spec in enumerate(in_entries):
            for row, col, w in spec:
                alpha, m_idx = divmod(row, dim_alice)
                alpha2, n_idx = divmod(col, dim_alice)
                qa = q_tens[n_idx, m_idx, :]
                for b, x in enumerate(x_mats):
                    coeff = w * x[alpha2, alpha]
                    if coeff == 0:
                        continue
                    block[b * n_basis : (b + 1) * n_basis, e] += (coeff * qa).real
        blocks.append(block)

    rhs = np.zeros(n_basis * n_basis)
    for b in range(n_basis):
        rhs[b * n_basis + b] = 1.0
    sdp = PbtSdp(n=n, N=N, resource=resource, dim_povm=dim_povm, blocks=blocks,
                 rhs_pattern=rhs)
    zero = [np.zeros((dim_povm, dim_povm), dtype=np.complex128) for _ in range(N)]
    if sdp.port_map_residual(zero, [0.0] * N) > 1e-14 or sdp.psd_violation(zero) > 0:
        raise ProtocolError("zero measurement is not feasible; constraint assembly broken")
    return sdp


# ---------------------------------------------------------------------------
# problem assembly: joint (resource-optimizing) form


@dataclass
class JointPbtSdp:
    """Choi-form teleportation SDP with the resource marginal as a variable.

    Variables: Choi blocks J_1..J_N on (input x ports), the port-side
    marginal sigma, and the success weights q.  A family is realizable by
    some resource and measurement exactly when every J_k is PSD and
    sum_k J_k <= identity x sigma."""

    n: int
    N: int
    dim_choi: int                  # 2^n * 2^(nN)
    dim_sigma: int                 # 2^(nN)
    blocks: list[np.ndarray]       # per port: rows x dim_choi^2
    rhs_pattern: np.ndarray        # Choi of the identity map, in row coordinates
    embed: np.ndarray              # sigma coordinates -> (identity x sigma) coordinates

    @property
    def rows_per_port(self) -> int:
        return self.rhs_pattern.size

    def port_map_residual(self, js: Sequence[np.ndarray], qs: Sequence[float]) -> float:
        worst = 0.0
        for k in range(self.N):
            lhs = self.blocks[k] @ herm_to_vec(js[k])
            worst = max(worst, float(np.max(np.abs(lhs - qs[k] * self.rhs_pattern))))
        return worst

    def fit_q(self, j: np.ndarray, k: int) -> float:
        lhs = self.blocks[k] @ herm_to_vec(j)
        return float(lhs @ self.rhs_pattern / (self.rhs_pattern @ self.rhs_pattern))

    def faces(self) -> list[np.ndarray]:
        d = 2**self.n
        out = []
        for k in range(1, self.N + 1):
            cols = [_choi_face_vector(d, self.N, k, t) for t in range(d ** (self.N - 1))]
            out.append(np.stack(cols, axis=1))
        return out


def build_joint_sdp(n: int, N: int) -> JointPbtSdp:
    """Assemble the joint constraint system over Choi variables."""
    d = 2**n
    dim_sigma = d**N
    dim_choi = d * dim_sigma
    if d * dim_sigma * dim_sigma > DIMENSION_CAP:
        raise LayoutError(
            f"extracted protocol dimension {d * dim_sigma**2} exceeds the cap "
            f"{DIMENSION_CAP}"
        )
    dims = (d,) + (d,) * N
    offsets_out = _pair_offsets(d * d)
    in_entries = hermitian_basis_entries(dim_choi)
    n_rows = (d * d) ** 2

    def decode(flat: int) -> tuple[int, ...]:
        out = []
        for dim in reversed(dims):
            out.append(flat % dim)
            flat //= dim
        return tuple(reversed(out))

    blocks = []
    for k in range(1, N + 1):
        block = np.zeros((n_rows, dim_choi * dim_choi))
        for e, spec in enumerate(in_entries):
            for row, col, w in spec:
                ri = decode(row)
                ci = decode(col)
                if any(ri[ax] != ci[ax] for ax in range(1, N + 1) if ax != k):
                    continue
                i_out = ri[0] * d + ri[k]
                j_out = ci[0] * d + ci[k]
                for c, cw in _basis_positions(d * d, offsets_out, i_out, j_out):
                    block[c, e] += (cw * w).real
        blocks.append(block)

    omega = _omega_vec(d)
    target = np.outer(omega, omega.conj())
    rhs = np.zeros(n_rows)
    for c, spec in enumerate(hermitian_basis_entries(d * d)):
        rhs[c] = float(sum(np.conj(w) * target[i, j] for i, j, w in spec).real)

    embed = np.zeros((dim_choi * dim_choi, dim_sigma * dim_sigma))
    offsets_choi = _pair_offsets(dim_choi)
    for e, spec in enumerate(hermitian_basis_entries(dim_sigma)):
        for i, j, w in spec:
            for a in range(d):
                pos_i = a * dim_sigma + i
                pos_j = a * dim_sigma + j
                for c, cw in _basis_positions(dim_choi, offsets_choi, pos_i, pos_j):
                    embed[c, e] += (cw * w).real
    return JointPbtSdp(n=n, N=N, dim_choi=dim_choi, dim_sigma=dim_sigma,
                       blocks=blocks, rhs_pattern=rhs, embed=embed)


# ---------------------------------------------------------------------------
# solver


@dataclass
class SolverConfig:
    """Splitting-scheme knobs.  The run has two phases: an adaptive-penalty
    phase that makes objective progress, then a stiff-penalty refinement
    phase (no over-relaxation, no adaptation) that drives the iterate onto
    the constraint set so the final rounding loses almost nothing."""

    max_iterations: int = 20_000
    primal_tolerance: float = 1e-9
    objective_tolerance: float = 1e-10
    penalty: float = 1.0
    over_relaxation: float = 1.6
    seed: int = 0
    init_noise: float = 0.0
    adapt_every: int = 25
    refine_fraction: float = 0.35
    refine_penalty: float = 1000.0
    rounding_passes: int = 500

    def __post_init__(self):
        if self.primal_tolerance <= 0 or self.objective_tolerance <= 0:
            raise ValueError("tolerances must be positive")
        if self.penalty <= 0 or self.refine_penalty <= 0:
            raise ValueError("penalty parameters must be positive")
        if not 0.0 <= self.refine_fraction < 1.0:
            raise ValueError("refine_fraction must lie in [0, 1)")


@dataclass
class SolveResult:
    p_opt: float
    povm: tuple[HermitianMatrix, ...]
    q: np.ndarray
    residuals: dict[str, float]
    converged: bool
    iterations: int
    trace: list[tuple[int, float, float]] = field(default_factory=list)
    resource: Optional[StateVector] = None
    protocol: Optional[PbtProtocol] = None


class _FaceProblem:
    """The splitting scheme in exact face coordinates.

    Variables: per-port face blocks Y_k (PSD), optionally the resource
    marginal sigma (PSD, unit trace), and the weights q (box [0, 1]).
    Consensus slots add the shared big-space slack, which must stay PSD:
    slack = base + embed(sigma) - sum_k lift_k(Y_k).
    """

    def __init__(self, blocks, rhs, faces, dim_big,
                 embed: Optional[np.ndarray] = None, base_identity: bool = True):
        self.N = len(blocks)
        self.rhs = rhs
        self.rows = rhs.size
        self.dim_big = dim_big
        self.face_dims = [v.shape[1] for v in faces]
        self.lifts = [_lift_matrix(v) for v in faces]
        self.red_blocks = [blocks[k] @ self.lifts[k] for k in range(self.N)]
        self.embed = embed
        self.dim_sigma = None if embed is None else int(np.sqrt(embed.shape[1]))
        self.base = (herm_to_vec(np.eye(dim_big, dtype=np.complex128))
                     if base_identity else np.zeros(dim_big * dim_big))
        self.y_sizes = [r * r for r in self.face_dims]
        self.y_offsets = np.cumsum([0] + self.y_sizes)
        n_y = int(self.y_offsets[-1])
        n_s = 0 if embed is None else embed.shape[1]
        self.n_y, self.n_s = n_y, n_s

        # H = I + W^T W with W = [-L_1 .. -L_N, embed]: small, materialized
        w_cols = np.hstack([-lift for lift in self.lifts]
                           + ([embed] if embed is not None else []))
        h = np.eye(n_y + n_s) + w_cols.T @ w_cols
        self.h_inv = np.linalg.inv(h)
        self.w_cols = w_cols

        # constraint rows: per port [B_k | -rhs on q_k], plus unit trace of sigma
        n_rows = self.N * self.rows + (0 if embed is None else 1)
        self.n_rows = n_rows
        a_mat = np.zeros((n_rows, n_y + n_s + self.N))
        for k in range(self.N):
            a_mat[k * self.rows : (k + 1) * self.rows,
                  self.y_offsets[k] : self.y_offsets[k + 1]] = self.red_blocks[k]
            a_mat[k * self.rows : (k + 1) * self.rows, n_y + n_s + k] = -rhs
        self.b_vec = np.zeros(n_rows)
        if embed is not None:
            trace_row = np.zeros(n_s)
            trace_row[: self.dim_sigma] = 1.0
            a_mat[-1, n_y : n_y + n_s] = trace_row
            self.b_vec[-1] = 1.0
        self.a_mat = a_mat
        h_inv_full = np.block([
            [self.h_inv, np.zeros((n_y + n_s, self.N))],
            [np.zeros((self.N, n_y + n_s)), np.eye(self.N)],
        ])
        self.h_inv_full = h_inv_full
        gram = a_mat @ h_inv_full @ a_mat.T
        self.gram_inv = np.linalg.inv(gram + 1e-13 * np.eye(n_rows))
        self.hia_t = h_inv_full @ a_mat.T

    def slack_of(self, y_all: np.ndarray, s: Optional[np.ndarray]) -> np.ndarray:
        out = self.base.copy()
        if self.embed is not None and s is not None:
            out += self.embed @ s
        for k in range(self.N):
            out -= self.lifts[k] @ y_all[self.y_offsets[k] : self.y_offsets[k + 1]]
        return out

    def affine_step(self, v_y, v_s, v_slack, v_q, rho):
        """Penalized minimization over the affine constraint set."""
        g_ys = np.concatenate([v_y, v_s]) if self.n_s else v_y
        g_ys = g_ys + self.w_cols.T @ (v_slack - self.base)
        g_q = v_q + 1.0 / rho
        x_ys = self.h_inv @ g_ys
        x = np.concatenate([x_ys, g_q])
        lam = self.gram_inv @ (self.a_mat @ x - self.b_vec)
        x = x - self.hia_t @ lam
        y = x[: self.n_y]
        s = x[self.n_y : self.n_y + self.n_s] if self.n_s else None
        return y, s, x[self.n_y + self.n_s :]


def _psd_clip_vec(vec: np.ndarray, d: int) -> np.ndarray:
    w, v = np.linalg.eigh(vec_to_herm(vec, d))
    w = np.clip(w, 0.0, None)
    return herm_to_vec((v * w) @ v.conj().T)


def _run_splitting(fp: _FaceProblem, cfg: SolverConfig, rng: np.random.Generator):
    """Iterate the consensus splitting; returns final cone-side variables."""
    n_y, n_s, n_big = fp.n_y, fp.n_s, fp.dim_big
    y = np.zeros(n_y)
    for k in range(fp.N):
        r = fp.face_dims[k]
        init = np.eye(r, dtype=np.complex128) / (fp.N + 1)
        if cfg.init_noise > 0:
            g = rng.standard_normal((r, r)) + 1j * rng.standard_normal((r, r))
            init = init + cfg.init_noise * (g + g.conj().T) / 2
        y[fp.y_offsets[k] : fp.y_offsets[k + 1]] = herm_to_vec(init)
    s = None
    if n_s:
        sigma0 = np.eye(fp.dim_sigma, dtype=np.complex128) / fp.dim_sigma
        s = herm_to_vec(sigma0)
    q = np.zeros(fp.N)
    for k in range(fp.N):
        yk = y[fp.y_offsets[k] : fp.y_offsets[k + 1]]
        q[k] = float((fp.red_blocks[k] @ yk) @ fp.rhs / (fp.rhs @ fp.rhs))

    z_y, z_s, z_q = y.copy(), (None if s is None else s.copy()), q.copy()
    z_slack = fp.slack_of(y, s)
    u_y = np.zeros_like(y)
    u_s = None if s is None else np.zeros_like(s)
    u_q = np.zeros_like(q)
    u_slack = np.zeros_like(z_slack)

    rho = cfg.penalty
    alpha = cfg.over_relaxation
    refine_start = int(cfg.max_iterations * (1.0 - cfg.refine_fraction))
    trace: list[tuple[int, float, float]] = []
    history: list[float] = []
    converged = False
    iteration = 0
    for iteration in range(1, cfg.max_iterations + 1):
        if iteration == refine_start:
            scale_u = rho / cfg.refine_penalty
            u_y *= scale_u
            u_slack *= scale_u
            u_q *= scale_u
            if u_s is not None:
                u_s *= scale_u
            rho = cfg.refine_penalty
            alpha = 1.0
        v_s = None if s is None else z_s - u_s
        y, s, q = fp.affine_step(z_y - u_y,
                                 v_s if v_s is not None else np.zeros(0),
                                 z_slack - u_slack, z_q - u_q, rho)
        e_slack = fp.slack_of(y, s)
        y_hat = alpha * y + (1 - alpha) * z_y
        slack_hat = alpha * e_slack + (1 - alpha) * z_slack
        q_hat = alpha * q + (1 - alpha) * z_q
        s_hat = None if s is None else alpha * s + (1 - alpha) * z_s
        z_prev = np.concatenate([z_y, z_slack])
        for k in range(fp.N):
            sl = slice(fp.y_offsets[k], fp.y_offsets[k + 1])
            z_y[sl] = _psd_clip_vec(y_hat[sl] + u_y[sl], fp.face_dims[k])
        z_slack = _psd_clip_vec(slack_hat + u_slack, n_big)
        if s is not None:
            z_s = _psd_clip_vec(s_hat + u_s, fp.dim_sigma)
            u_s += s_hat - z_s
        z_q = np.clip(q_hat + u_q, 0.0, 1.0)
        u_y += y_hat - z_y
        u_slack += slack_hat - z_slack
        u_q += q_hat - z_q

        primal = float(np.sqrt(np.linalg.norm(y - z_y) ** 2
                               + np.linalg.norm(e_slack - z_slack) ** 2))
        dual = float(rho * np.linalg.norm(np.concatenate([z_y, z_slack]) - z_prev))
        scale = max(1.0, float(np.linalg.norm(y)), float(np.linalg.norm(z_y)))
        obj = float(q.sum())
        history.append(obj)
        trace.append((iteration, obj, primal / scale))

        if iteration % cfg.adapt_every == 0 and iteration < refine_start:
            if primal > 10 * dual:
                rho *= 2.0
                u_y /= 2.0
                u_slack /= 2.0
                u_q /= 2.0
                if u_s is not None:
                    u_s /= 2.0
            elif dual > 10 * primal:
                rho /= 2.0
                u_y *= 2.0
                u_slack *= 2.0
                u_q *= 2.0
                if u_s is not None:
                    u_s *= 2.0

        if (primal / scale < cfg.primal_tolerance and len(history) > 50
                and abs(history[-1] - history[-51]) < cfg.objective_tolerance):
            converged = True
            break

    return z_y, z_s, z_q, converged, iteration, trace


def _round_on_face(fp: _FaceProblem, z_y: np.ndarray, z_q: np.ndarray,
                   passes: int) -> tuple[list[np.ndarray], np.ndarray, float]:
    """Alternate affine projection and PSD clipping per port, in face coords."""
    ys = []
    qs = np.zeros(fp.N)
    worst = 0.0
    for k in range(fp.N):
        r = fp.face_dims[k]
        bar = np.hstack([fp.red_blocks[k], -fp.rhs[:, None]])
        factor = np.linalg.inv(bar @ bar.T + 1e-14 * np.eye(bar.shape[0]))
        y_vec = z_y[fp.y_offsets[k] : fp.y_offsets[k + 1]].copy()
        q = float(z_q[k])
        residual = np.inf
        for _ in range(passes):
            x = np.append(y_vec, q)
            lam = factor @ (bar @ x)
            x = x - bar.T @ lam
            y_vec, q = x[:-1], float(x[-1])
            y_mat = vec_to_herm(y_vec, r)
            lam_y, v_y = np.linalg.eigh(y_mat)
            clip = float(max(0.0, -lam_y[0]))
            y_vec = herm_to_vec((v_y * np.clip(lam_y, 0.0, None)) @ v_y.conj().T)
            residual = float(np.max(np.abs(fp.red_blocks[k] @ y_vec - q * fp.rhs)))
            if residual < 1e-13 and clip < 1e-13:
                break
        worst = max(worst, residual)
        ys.append(vec_to_herm(y_vec, r))
        qs[k] = max(q, 0.0)
    return ys, qs, worst


def solve(sdp: PbtSdp, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Splitting solve of the fixed-resource problem."""
    cfg = cfg or SolverConfig()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    faces = sdp.faces()
    fp = _FaceProblem(sdp.blocks, sdp.rhs_pattern, faces, sdp.dim_povm,
                      embed=None, base_identity=True)
    z_y, _, z_q, converged, iterations, trace = _run_splitting(fp, cfg, rng)
    ys, qs, _ = _round_on_face(fp, z_y, z_q, cfg.rounding_passes)
    ms = [faces[k] @ ys[k] @ faces[k].conj().T for k in range(sdp.N)]
    ms = [0.5 * (m + m.conj().T) for m in ms]
    total = sum(ms)
    lam_max = float(np.linalg.eigvalsh(total)[-1])
    if lam_max > 1.0:
        factor = (1.0 - 1e-12) / lam_max
        ms = [m * factor for m in ms]
        qs = qs * factor
    layout = SystemLayout.of(("a", 2**sdp.n), ("A", sdp.resource.layout.dim("A")))
    slack = np.eye(sdp.dim_povm) - sum(ms)
    povm = (HermitianMatrix(layout, 0.5 * (slack + slack.conj().T)),) + tuple(
        HermitianMatrix(layout, m) for m in ms)
    residuals = {
        "teleportation": sdp.port_map_residual(ms, qs),
        "completeness": 0.0,  # the failure element is the exact leftover
        "psd": sdp.psd_violation(ms),
    }
    return SolveResult(
        p_opt=float(qs.sum()),
        povm=povm,
        q=qs,
        residuals=residuals,
        converged=converged,
        iterations=iterations,
        trace=trace,
        resource=sdp.resource,
    )


def solve_joint(sdp: JointPbtSdp, cfg: Optional[SolverConfig] = None) -> SolveResult:
    """Optimize measurement and resource together; extract a concrete protocol."""
    cfg = cfg or SolverConfig()
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    faces = sdp.faces()
    fp = _FaceProblem(sdp.blocks, sdp.rhs_pattern, faces, sdp.dim_choi,
                      embed=sdp.embed, base_identity=False)
    z_y, z_s, z_q, converged, iterations, trace = _run_splitting(fp, cfg, rng)
    ys, qs, _ = _round_on_face(fp, z_y, z_q, cfg.rounding_passes)
    js = [faces[k] @ ys[k] @ faces[k].conj().T for k in range(sdp.N)]
    js = [0.5 * (j + j.conj().T) for j in js]
    sigma = vec_to_herm(z_s, sdp.dim_sigma)
    protocol, qs = extract_protocol(sdp.n, sdp.N, js, sigma)
    residuals = {
        "teleportation": sdp.port_map_residual(
            js, [sdp.fit_q(j, k) for k, j in enumerate(js)]),
        "completeness": 0.0,
        "psd": 0.0,
    }
    return SolveResult(
        p_opt=float(qs.sum()),
        povm=protocol.povm,
        q=qs,
        residuals=residuals,
        converged=converged,
        iterations=iterations,
        trace=trace,
        resource=protocol.resource,
        protocol=protocol,
    )


def extract_protocol(n: int, N: int, js: Sequence[np.ndarray], sigma: np.ndarray,
                     pad: float = 1e-7) -> tuple[PbtProtocol, np.ndarray]:
    """Steering construction: turn Choi blocks and a port marginal into a
    concrete resource state and measurement.

    The resource is the canonical purification of the (slightly padded,
    hence full-rank) marginal with the purifying system as A; each
    measurement element is the corresponding Choi block conjugated by the
    inverse square root of the marginal and complex-conjugated.  The family
    is shrunk by the exact factor that keeps the failure element PSD; the
    teleportation constraints are homogeneous, so they survive with
    rescaled success weights.
    """
    d = 2**n
    ds = d**N
    sigma = 0.5 * (sigma + sigma.conj().T)
    sigma = (1.0 - pad) * sigma + pad * np.eye(ds) / ds
    sigma = sigma / np.trace(sigma).real
    w, v = np.linalg.eigh(sigma)
    w = np.clip(w, pad / (2 * ds), None)
    sqrt_sigma = (v * np.sqrt(w)) @ v.conj().T
    inv_sqrt = (v / np.sqrt(w)) @ v.conj().T

    lift = np.kron(np.eye(d), inv_sqrt)
    sandwich = lift @ sum(js) @ lift.conj().T
    lam_max = float(np.linalg.eigvalsh(sandwich)[-1])
    shrink = 1.0 if lam_max <= 1.0 else (1.0 - 1e-12) / lam_max

    layout = SystemLayout(
        (("A", ds),) + tuple((port_label(j), d) for j in range(1, N + 1)))
    amps = sqrt_sigma.T.reshape(-1)
    amps = amps / np.linalg.norm(amps)
    resource = StateVector(layout, amps)

    povm_layout = SystemLayout.of(("a", d), ("A", ds))
    ms = []
    for j_op in js:
        m = np.conj(lift @ (shrink * j_op) @ lift.conj().T)
        ms.append(0.5 * (m + m.conj().T))
    slack = np.eye(d * ds) - sum(ms)
    povm = [HermitianMatrix(povm_layout, 0.5 * (slack + slack.conj().T))]
    povm += [HermitianMatrix(povm_layout, m) for m in ms]
    proto = PbtProtocol(n=n, N=N, resource=resource, povm=tuple(povm))
    omega = _omega_vec(d)
    qs = np.array([
        float(np.vdot(omega, _port_choi(j_op * shrink, d, N, k + 1) @ omega).real)
        / (d * d)
        for k, j_op in enumerate(js)
    ])
    return proto, qs


def _port_choi(j_op: np.ndarray, d: int, N: int, k: int) -> np.ndarray:
    """Trace over all ports except k, keeping (input, port k)."""
    dims = (d,) + (d,) * N
    n_axes = len(dims)
    t = j_op.reshape(dims + dims)
    row_idx = list(range(n_axes))
    col_idx = [n_axes + i if i in (0, k) else i for i in range(n_axes)]
    out_idx = [0, k, n_axes, n_axes + k]
    return np.einsum(t, row_idx + col_idx, out_idx).reshape(d * d, d * d)


# ---------------------------------------------------------------------------
# certification


def certify(povm: Sequence[HermitianMatrix], resource: StateVector, n: int, N: int,
            samples: int = 20, seed: int = 0) -> AuditReport:
    """Re-simulate a measurement and check feasibility, perfection, and the bound."""
    rep = AuditReport(subject=f"optimizer certification, n={n}, N={N}", seed=seed)
    try:
        proto = PbtProtocol(n=n, N=N, resource=resource, povm=tuple(povm))
    except ProtocolError as exc:
        rep.add_flag("measurement satisfies the protocol invariants", "Eq.8", False,
                     error=str(exc))
        return rep
    rep.add_flag("measurement satisfies the protocol invariants", "Eq.8", True)
    worst_fid = 1.0
    p_values = []
    for psi in haar_states(2**n, samples, seed):
        branches = measure(proto, psi)
        p_values.append(success_probability(branches))
        for b in branches[1:]:
            if b.post_state is None:
                continue
            fid, _ = teleport_report(b, psi, proto)
            worst_fid = min(worst_fid, fid)
    p_mean = float(np.mean(p_values))
    rep.add("success branches teleport perfectly", "Eq.8", 1.0 - worst_fid, 1e-6,
            samples=samples)
    rep.add("success probability is input-independent", "Lemma",
            float(np.max(p_values) - np.min(p_values)), 1e-8)
    limit = float(bound(n, N))
    rep.add("success probability respects the bound", "Eq.2", p_mean - limit, 1e-8,
            p=p_mean, bound=limit, gap=limit - p_mean)
    return rep
