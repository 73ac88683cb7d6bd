"""Dense complex linear algebra over labeled tensor-product spaces.

Every state and operator carries a :class:`SystemLayout` naming its
subsystems; all addressing is by label, never by positional index, so that
reordered layouts cannot silently transpose anything.  All values are
immutable and all operations are pure functions, safe to share across
threads.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import KindMismatchError, LayoutError, UnitarityError

#: default absolute tolerance for equality checks
ATOL = 1e-10
#: normalization / hermiticity tolerance at construction time
STRICT_ATOL = 1e-12
#: largest total state dimension the toolkit agrees to allocate
MEMORY_CAP = 1 << 22


@dataclass(frozen=True)
class SystemLayout:
    """Ordered list of labeled subsystems with dimensions."""

    subsystems: tuple[tuple[str, int], ...]

    def __post_init__(self):
        subs = tuple((str(lbl), int(dim)) for lbl, dim in self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        labels = [lbl for lbl, _ in subs]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for lbl, dim in subs:
            if dim < 1:
                raise LayoutError(f"subsystem {lbl!r} has non-positive dimension {dim}")

    @classmethod
    def of(cls, *subsystems: tuple[str, int]) -> "SystemLayout":
        return cls(tuple(subsystems))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lbl for lbl, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.subsystems)

    @property
    def total_dim(self) -> int:
        out = 1
        for _, dim in self.subsystems:
            out *= dim
        return out

    def dim(self, label: str) -> int:
        return self.dims[self.axis(label)]

    def axis(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"label {label!r} not in layout {self.labels}") from None

    def restrict(self, labels: Iterable[str]) -> "SystemLayout":
        """Sub-layout containing the given labels, in this layout's order."""
        wanted = set(labels)
        for lbl in wanted:
            self.axis(lbl)
        return SystemLayout(tuple(s for s in self.subsystems if s[0] in wanted))

    def without(self, labels: Iterable[str]) -> "SystemLayout":
        dropped = set(labels)
        for lbl in dropped:
            self.axis(lbl)
        return SystemLayout(tuple(s for s in self.subsystems if s[0] not in dropped))

    def concat(self, other: "SystemLayout") -> "SystemLayout":
        return SystemLayout(self.subsystems + other.subsystems)

    def __len__(self) -> int:
        return len(self.subsystems)


def check_memory_cap(layout: SystemLayout, cap: int = MEMORY_CAP) -> None:
    if layout.total_dim > cap:
        raise LayoutError(
            f"layout {layout.labels} with total dimension {layout.total_dim} "
            f"exceeds the configured cap of {cap}"
        )


def _as_complex(arr, name: str) -> np.ndarray:
    out = np.asarray(arr, dtype=np.complex128)
    out = np.ascontiguousarray(out)
    out.setflags(write=False)
    if not np.all(np.isfinite(out.view(np.float64))):
        raise ValueError(f"{name} contains non-finite entries")
    return out


@dataclass(frozen=True)
class StateVector:
    """Complex amplitude vector over a layout.

    ``normalized=False`` marks explicitly unnormalized intermediate branches;
    everything else must have unit Euclidean norm within 1e-12.
    """

    layout: SystemLayout
    amplitudes: np.ndarray
    normalized: bool = True

    def __post_init__(self):
        amps = _as_complex(self.amplitudes, "amplitudes").reshape(-1)
        object.__setattr__(self, "amplitudes", amps)
        if amps.size != self.layout.total_dim:
            raise LayoutError(
                f"amplitude count {amps.size} != layout dimension {self.layout.total_dim}"
            )
        if self.normalized and abs(self.norm() - 1.0) > STRICT_ATOL:
            raise ValueError(f"state norm {self.norm()} deviates from 1 beyond 1e-12")

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    @property
    def dim(self) -> int:
        return self.amplitudes.size

    def tensorized(self) -> np.ndarray:
        """Amplitudes reshaped to one axis per subsystem (read-only view)."""
        return self.amplitudes.reshape(self.layout.dims)


@dataclass(frozen=True)
class HermitianMatrix:
    """Complex Hermitian operator over a layout, stored dense row-major."""

    layout: SystemLayout
    entries: np.ndarray

    def __post_init__(self):
        d = self.layout.total_dim
        raw = np.asarray(self.entries)
        if raw.size != d * d:
            raise LayoutError(
                f"entry count {raw.size} != {d}x{d} for layout {self.layout.labels}"
            )
        ent = _as_complex(raw, "entries").reshape(d, d)
        if np.max(np.abs(ent - ent.conj().T)) > STRICT_ATOL:
            raise ValueError("matrix deviates from its conjugate transpose beyond 1e-12")
        object.__setattr__(self, "entries", ent)

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    def trace(self) -> float:
        return float(np.trace(self.entries).real)

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(self.entries)[0])

    def is_density(self, psd_atol: float = 1e-10, trace_atol: float = ATOL) -> bool:
        return abs(self.trace() - 1.0) <= trace_atol and self.min_eigenvalue() >= -psd_atol


TensorValue = Union[StateVector, HermitianMatrix]


# ---------------------------------------------------------------------------
# construction helpers


def basis_state(layout: SystemLayout, index: Union[int, Sequence[int]]) -> StateVector:
    """Computational basis state, by flat index or per-subsystem indices."""
    if not isinstance(index, int):
        flat = 0
        for sub, dim in zip(index, layout.dims):
            flat = flat * dim + int(sub)
        index = flat
    amps = np.zeros(layout.total_dim, dtype=np.complex128)
    amps[index] = 1.0
    return StateVector(layout, amps)


def outer(state: StateVector) -> HermitianMatrix:
    """|psi><psi| as a HermitianMatrix; a density operator when psi is normalized."""
    return HermitianMatrix(state.layout, np.outer(state.amplitudes, state.amplitudes.conj()))


def identity_matrix(layout: SystemLayout) -> HermitianMatrix:
    return HermitianMatrix(layout, np.eye(layout.total_dim, dtype=np.complex128))


def maximally_mixed(layout: SystemLayout) -> HermitianMatrix:
    d = layout.total_dim
    return HermitianMatrix(layout, np.eye(d, dtype=np.complex128) / d)


def maximally_entangled(left: tuple[str, int], right: tuple[str, int]) -> StateVector:
    """Canonical maximally entangled state (1/sqrt(d)) sum_i |i>|i> of two d-dim systems."""
    if left[1] != right[1]:
        raise LayoutError(f"subsystem dimensions differ: {left} vs {right}")
    d = left[1]
    amps = np.eye(d, dtype=np.complex128).reshape(-1) / np.sqrt(d)
    return StateVector(SystemLayout.of(left, right), amps)


# ---------------------------------------------------------------------------
# operations


def tensor_product(factors: Sequence[TensorValue]) -> TensorValue:
    """Kronecker product of states or of operators, layouts concatenated in order."""
    factors = list(factors)
    if not factors:
        raise ValueError("tensor_product needs at least one factor")
    if all(isinstance(f, StateVector) for f in factors):
        layout = functools.reduce(SystemLayout.concat, (f.layout for f in factors))
        amps = functools.reduce(np.kron, (f.amplitudes for f in factors))
        return StateVector(layout, amps, normalized=all(f.normalized for f in factors))
    if all(isinstance(f, HermitianMatrix) for f in factors):
        layout = functools.reduce(SystemLayout.concat, (f.layout for f in factors))
        ent = functools.reduce(np.kron, (f.entries for f in factors))
        return HermitianMatrix(layout, ent)
    raise KindMismatchError("cannot mix StateVector and HermitianMatrix factors")


def partial_trace(op: HermitianMatrix, keep: Iterable[str]) -> HermitianMatrix:
    """Trace out every subsystem not in ``keep``; kept labels retain their order."""
    keep = set(keep)
    out_layout = op.layout.restrict(keep)
    dims = op.layout.dims
    n = len(dims)
    t = op.entries.reshape(dims + dims)
    row_idx = list(range(n))
    col_idx = [n + i if op.layout.labels[i] in keep else i for i in range(n)]
    out_idx = [i for i in range(n) if op.layout.labels[i] in keep]
    out_idx += [n + i for i in range(n) if op.layout.labels[i] in keep]
    d = out_layout.total_dim
    reduced = np.einsum(t, row_idx + col_idx, out_idx).reshape(d, d)
    reduced = 0.5 * (reduced + reduced.conj().T)
    return HermitianMatrix(out_layout, reduced)


def reduced_density(state: StateVector, keep: Iterable[str]) -> HermitianMatrix:
    """Marginal density operator of a pure state, without forming the full outer product."""
    keep = set(keep)
    out_layout = state.layout.restrict(keep)
    labels = state.layout.labels
    kept_axes = [i for i, lbl in enumerate(labels) if lbl in keep]
    other_axes = [i for i, lbl in enumerate(labels) if lbl not in keep]
    t = np.transpose(state.tensorized(), kept_axes + other_axes)
    mat = t.reshape(out_layout.total_dim, -1)
    rho = mat @ mat.conj().T
    rho = 0.5 * (rho + rho.conj().T)
    return HermitianMatrix(out_layout, rho)


def permute_subsystems(value: TensorValue, new_order: Sequence[str]) -> TensorValue:
    """Reorder subsystems to the given label order; amplitudes/entries follow."""
    layout = value.layout
    if sorted(new_order) != sorted(layout.labels):
        raise LayoutError(f"{tuple(new_order)} is not a permutation of {layout.labels}")
    perm = [layout.axis(lbl) for lbl in new_order]
    new_layout = SystemLayout(tuple(layout.subsystems[p] for p in perm))
    if isinstance(value, StateVector):
        amps = np.transpose(value.tensorized(), perm).reshape(-1)
        return StateVector(new_layout, amps, normalized=value.normalized)
    n = len(layout)
    t = value.entries.reshape(layout.dims + layout.dims)
    full_perm = perm + [n + p for p in perm]
    d = layout.total_dim
    return HermitianMatrix(new_layout, np.transpose(t, full_perm).reshape(d, d))


def merge_subsystems(value: TensorValue, labels: Sequence[str], new_label: str) -> TensorValue:
    """Fuse consecutive subsystems into one label; pure metadata, data unchanged."""
    layout = value.layout
    axes = [layout.axis(lbl) for lbl in labels]
    if axes != list(range(axes[0], axes[0] + len(axes))):
        raise LayoutError(f"labels {tuple(labels)} are not consecutive in {layout.labels}")
    merged_dim = 1
    for lbl in labels:
        merged_dim *= layout.dim(lbl)
    subs = (
        layout.subsystems[: axes[0]]
        + ((new_label, merged_dim),)
        + layout.subsystems[axes[-1] + 1 :]
    )
    new_layout = SystemLayout(subs)
    if isinstance(value, StateVector):
        return StateVector(new_layout, value.amplitudes, normalized=value.normalized)
    return HermitianMatrix(new_layout, value.entries)


def _apply_matrix(tensorized: np.ndarray, dims: Sequence[int], axes: Sequence[int],
                  matrix: np.ndarray) -> np.ndarray:
    """Apply ``matrix`` on the given axes of a tensorized pure state."""
    n = len(dims)
    rest = [i for i in range(n) if i not in axes]
    t = np.transpose(tensorized, list(axes) + rest)
    front = int(np.prod([dims[i] for i in axes])) if axes else 1
    mat = t.reshape(front, -1)
    mat = matrix @ mat
    t = mat.reshape([dims[i] for i in axes] + [dims[i] for i in rest])
    inv = np.argsort(list(axes) + rest)
    return np.transpose(t, inv)


def apply_on_subsystems(state: StateVector, u: np.ndarray,
                        targets: Sequence[str]) -> StateVector:
    """Apply a unitary to the target subsystems (in the given order), identity elsewhere."""
    u = np.asarray(u, dtype=np.complex128)
    target_dim = 1
    for lbl in targets:
        target_dim *= state.layout.dim(lbl)
    if u.shape != (target_dim, target_dim):
        raise LayoutError(f"matrix shape {u.shape} does not match target dimension {target_dim}")
    if np.max(np.abs(u.conj().T @ u - np.eye(target_dim))) > 1e-10:
        raise UnitarityError("matrix is not unitary within 1e-10")
    axes = [state.layout.axis(lbl) for lbl in targets]
    out = _apply_matrix(state.tensorized(), state.layout.dims, axes, u)
    return StateVector(state.layout, out.reshape(-1), normalized=state.normalized)


def _canonical_phase(u: np.ndarray, vh: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Rotate each Schmidt pair so the dominant left component is real positive."""
    u = u.copy()
    vh = vh.copy()
    for col in range(u.shape[1]):
        pivot = int(np.argmax(np.abs(u[:, col])))
        a = u[pivot, col]
        if abs(a) > 1e-14:
            phase = np.conj(a) / abs(a)
            u[:, col] *= phase
            vh[col, :] *= np.conj(phase)
    return u, vh


def _lex_key(vec: np.ndarray) -> tuple:
    return tuple(x for pair in ((round(c.real, 10), round(c.imag, 10)) for c in vec)
                 for x in pair)


def schmidt_decompose(state: StateVector, left_labels: Iterable[str]):
    """Schmidt decomposition across the bipartition (left_labels | rest).

    Returns ``(coefficients, left_basis, right_basis)`` with descending
    non-negative coefficients and orthonormal bases such that
    ``sum_l c_l |l>_L |l>_R`` reconstructs the state with subsystems permuted
    to left-then-right order.  Degenerate coefficients are ordered by the
    lexicographic key of the left-basis amplitudes, making the result
    deterministic.
    """
    left = set(left_labels)
    labels = state.layout.labels
    left_order = [lbl for lbl in labels if lbl in left]
    right_order = [lbl for lbl in labels if lbl not in left]
    if not left_order or not right_order:
        raise LayoutError("bipartition must leave at least one subsystem on each side")
    for lbl in left:
        state.layout.axis(lbl)
    left_layout = state.layout.restrict(left_order)
    right_layout = state.layout.restrict(right_order)
    perm = permute_subsystems(state, left_order + right_order)
    mat = perm.amplitudes.reshape(left_layout.total_dim, right_layout.total_dim)
    u, s, vh = np.linalg.svd(mat, full_matrices=False)
    u, vh = _canonical_phase(u, vh)
    # stable tie-break inside groups of (numerically) equal coefficients
    order = list(range(len(s)))
    start = 0
    while start < len(s):
        stop = start + 1
        while stop < len(s) and abs(s[stop] - s[start]) < 1e-12:
            stop += 1
        if stop - start > 1:
            order[start:stop] = sorted(order[start:stop], key=lambda i: _lex_key(u[:, i]))
        start = stop
    u, s, vh = u[:, order], s[order], vh[order, :]
    left_basis = [StateVector(left_layout, u[:, i]) for i in range(len(s))]
    right_basis = [StateVector(right_layout, vh[i, :]) for i in range(len(s))]
    return s.copy(), left_basis, right_basis


def project_psd(h: HermitianMatrix) -> HermitianMatrix:
    """Nearest positive semidefinite matrix in Frobenius norm (eigenvalue clipping)."""
    sym = 0.5 * (h.entries + h.entries.conj().T)
    w, v = np.linalg.eigh(sym)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    return HermitianMatrix(h.layout, 0.5 * (out + out.conj().T))


def overlap(a: StateVector, b: StateVector) -> complex:
    """Inner product <a|b> (phase-sensitive)."""
    if a.dim != b.dim:
        raise LayoutError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return complex(np.vdot(a.amplitudes, b.amplitudes))


def state_fidelity(a: StateVector, b: StateVector) -> float:
    """|<a|b>|^2; phase-free pure-state fidelity."""
    return float(abs(overlap(a, b)) ** 2)


def states_equal(a: StateVector, b: StateVector, atol: float = ATOL) -> bool:
    """Equality up to global phase: fidelity >= 1 - atol."""
    return state_fidelity(a, b) >= 1.0 - atol


def fidelity(pure: StateVector, rho: HermitianMatrix) -> float:
    """<pure|rho|pure>, real in [0, 1] for density operators."""
    if pure.dim != rho.dim:
        raise LayoutError(f"dimension mismatch: state {pure.dim} vs operator {rho.dim}")
    val = np.vdot(pure.amplitudes, rho.entries @ pure.amplitudes)
    return float(val.real)


def max_abs_diff(a: HermitianMatrix, b: HermitianMatrix) -> float:
    """Max-norm distance between two operators of equal dimension."""
    if a.dim != b.dim:
        raise LayoutError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.max(np.abs(a.entries - b.entries)))
