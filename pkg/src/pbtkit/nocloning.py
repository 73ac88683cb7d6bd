"""Empirical verifier for the information-extraction impossibility theorem.

Any candidate physical operation is given in unitary-plus-pointer form: a
unitary on (input a, auxiliary b, pointer pi) followed by reading the pointer
in a fixed orthonormal basis.  If, on a spanning set of inputs plus their
pairwise superpositions, every branch k >= 1 leaves the input system intact
and unentangled with b, then three conclusions are forced: branch
probabilities and residual b-states cannot depend on the input, and the
failure branch preserves inner products between inputs.  This module checks
the hypothesis honestly (it is never assumed) and then measures each
conclusion.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import BRANCH_PRUNE, PbtProtocol, complex_pairs, from_complex_pairs, sqrt_psd
from .errors import ProtocolError, UnitarityError
from .pauli import haar_states
from .report import AuditReport
from .tensor import (
    StateVector,
    SystemLayout,
    basis_state,
    outer,
    reduced_density,
    schmidt_decompose,
    state_fidelity,
    tensor_product,
)

POINTER_FORMAT_VERSION = "1"

#: tolerance for the theorem's hypothesis (input intact, branch factorizes)
HYPOTHESIS_ATOL = 1e-8


@dataclass(frozen=True)
class PointerOperation:
    """Unitary + pointer readout form of a physical operation.

    ``u`` acts on (a, b, pi) with the pointer as the last tensor factor;
    ``xi_b`` and ``chi_pi`` are the fixed starting states of the auxiliary
    system and the pointer; outcome k means projecting the pointer onto
    ``pointer_basis[k]``.
    """

    dim_a: int
    dim_b: int
    u: np.ndarray
    xi_b: StateVector
    chi_pi: StateVector
    pointer_basis: tuple[StateVector, ...]

    def __post_init__(self):
        u = np.ascontiguousarray(np.asarray(self.u, dtype=np.complex128))
        u.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "pointer_basis", tuple(self.pointer_basis))
        d = self.dim_a * self.dim_b * self.dim_pointer
        if u.shape != (d, d):
            raise ProtocolError(f"unitary shape {u.shape} != ({d}, {d})")
        if np.max(np.abs(u.conj().T @ u - np.eye(d))) > 1e-10:
            raise UnitarityError("pointer-form operation matrix is not unitary within 1e-10")
        if self.xi_b.dim != self.dim_b or self.chi_pi.dim != self.dim_pointer:
            raise ProtocolError("auxiliary/pointer start states do not match declared dims")
        gram = np.array([[complex(np.vdot(x.amplitudes, y.amplitudes))
                          for y in self.pointer_basis] for x in self.pointer_basis])
        if np.max(np.abs(gram - np.eye(len(self.pointer_basis)))) > 1e-12:
            raise ProtocolError("pointer basis is not orthonormal within 1e-12")

    @property
    def dim_pointer(self) -> int:
        return len(self.pointer_basis)

    @property
    def outcomes(self) -> int:
        """Number of success outcomes N (pointer dimension is N + 1)."""
        return self.dim_pointer - 1

    def layout(self) -> SystemLayout:
        return SystemLayout.of(("a", self.dim_a), ("b", self.dim_b),
                               ("pi", self.dim_pointer))


@dataclass(frozen=True)
class BranchRecord:
    """Pointer outcome k with its probability and the conditional (a, b) state."""

    k: int
    probability: float
    conditional_state: Optional[StateVector]


def computational_pointer_basis(dim: int) -> tuple[StateVector, ...]:
    lay = SystemLayout.of(("pi", dim))
    return tuple(basis_state(lay, k) for k in range(dim))


def decompose_by_pointer(op: PointerOperation, psi: StateVector) -> list[BranchRecord]:
    """Run the operation on psi and resolve it into pointer branches."""
    if psi.dim != op.dim_a:
        raise ProtocolError(f"input dimension {psi.dim} != declared a-dimension {op.dim_a}")
    psi_a = StateVector(SystemLayout.of(("a", op.dim_a)), psi.amplitudes,
                        normalized=psi.normalized)
    chi = StateVector(SystemLayout.of(("pi", op.dim_pointer)), op.chi_pi.amplitudes)
    xi = StateVector(SystemLayout.of(("b", op.dim_b)), op.xi_b.amplitudes)
    start = tensor_product([psi_a, xi, chi])
    evolved = op.u @ start.amplitudes
    mat = evolved.reshape(op.dim_a * op.dim_b, op.dim_pointer)
    ab_layout = SystemLayout.of(("a", op.dim_a), ("b", op.dim_b))
    out = []
    for k, kvec in enumerate(op.pointer_basis):
        vec = mat @ kvec.amplitudes.conj()
        prob = float(np.vdot(vec, vec).real)
        if prob < BRANCH_PRUNE:
            out.append(BranchRecord(k, 0.0, None))
        else:
            out.append(BranchRecord(k, prob, StateVector(ab_layout, vec / np.sqrt(prob))))
    return out


def _hypothesis_states(dim: int) -> list[StateVector]:
    """Computational basis plus all real and imaginary pairwise superpositions."""
    lay = SystemLayout.of(("a", dim))
    states = [basis_state(lay, i) for i in range(dim)]
    for l in range(dim):
        for m in range(l + 1, dim):
            for factor in (1.0, 1.0j):
                amps = np.zeros(dim, dtype=np.complex128)
                amps[l] = 1.0
                amps[m] = factor
                states.append(StateVector(lay, amps / np.sqrt(2)))
    return states


def _check_hypothesis(op: PointerOperation, psi: StateVector) -> tuple[bool, dict]:
    """Branches k >= 1 must keep the input intact and factorize from b."""
    for rec in decompose_by_pointer(op, psi):
        if rec.k == 0 or rec.conditional_state is None:
            continue
        rho_a = reduced_density(rec.conditional_state, {"a"})
        intact = float(np.max(np.abs(rho_a.entries - outer(psi).entries)))
        rho_b = reduced_density(rec.conditional_state, {"b"})
        purity_gap = 1.0 - float(np.trace(rho_b.entries @ rho_b.entries).real)
        if intact > HYPOTHESIS_ATOL or purity_gap > HYPOTHESIS_ATOL:
            return False, {"k": rec.k, "input_deviation": intact, "purity_gap": purity_gap}
    return True, {}


def _extract_residual(conditional: StateVector) -> StateVector:
    """The b-part of an (a, b) product branch (factorization already verified)."""
    _, _, right = schmidt_decompose(conditional, {"a"})
    return right[0]


def verify_theorem(op: PointerOperation, samples: int, seed: int,
                   q_tolerance: float = 1e-10,
                   residual_tolerance: float = 1e-10,
                   overlap_tolerance: float = 1e-8) -> AuditReport:
    """Check hypothesis on basis + superpositions, then the three conclusions on
    Haar-sampled inputs: constant branch probabilities, constant residual
    states, and inner-product preservation between failure states."""
    rep = AuditReport(subject="information-extraction impossibility", seed=seed)
    for psi in _hypothesis_states(op.dim_a):
        ok, info = _check_hypothesis(op, psi)
        if not ok:
            rep.preconditions_met = False
            rep.note = "hypothesis not satisfied; conclusion checks skipped"
            rep.add_flag("input intact and unentangled on every success branch",
                         "Thm", False, **info)
            return rep
    rep.add_flag("hypothesis holds on basis and pairwise superpositions", "Thm", True,
                 states_checked=len(_hypothesis_states(op.dim_a)))

    sampled = haar_states(op.dim_a, samples, seed)
    q_rows = []
    residuals: dict[int, list[StateVector]] = {k: [] for k in range(1, op.dim_pointer)}
    failures: list[tuple[StateVector, StateVector]] = []
    for psi in sampled:
        records = decompose_by_pointer(op, psi)
        q_rows.append(np.array([r.probability for r in records]))
        for rec in records[1:]:
            if rec.conditional_state is not None:
                residuals[rec.k].append(_extract_residual(rec.conditional_state))
        if records[0].conditional_state is not None:
            failures.append((psi, records[0].conditional_state))

    q_matrix = np.vstack(q_rows)
    q_spread = float(np.max(q_matrix.max(axis=0) - q_matrix.min(axis=0)))
    rep.add("branch probabilities constant across inputs", "Eq.a6", q_spread, q_tolerance,
            samples=samples)

    worst_res = 0.0
    for k, states in residuals.items():
        for idx in range(1, len(states)):
            worst_res = max(worst_res, 1.0 - state_fidelity(states[0], states[idx]))
    rep.add("residual auxiliary states constant across inputs", "Eq.a7", worst_res,
            residual_tolerance,
            outcomes_present=[k for k, v in residuals.items() if v])

    worst_overlap = 0.0
    for i in range(len(failures)):
        for j in range(i + 1, len(failures)):
            psi_i, f_i = failures[i]
            psi_j, f_j = failures[j]
            lhs = np.vdot(f_i.amplitudes, f_j.amplitudes)
            rhs = np.vdot(psi_i.amplitudes, psi_j.amplitudes)
            worst_overlap = max(worst_overlap, float(abs(lhs - rhs)))
    rep.add("failure states preserve input inner products", "Eq.a8", worst_overlap,
            overlap_tolerance, pairs=len(failures) * (len(failures) - 1) // 2)
    return rep


# ---------------------------------------------------------------------------
# converter from POVM protocols


def pointer_form(proto: PbtProtocol,
                 fine_grained: Optional[dict[int, Sequence[np.ndarray]]] = None
                 ) -> PointerOperation:
    """Dilate a protocol into unitary + pointer form.

    The auxiliary system b is (A, ports); outcome k >= 1 additionally swaps
    the input system with port B_k, so success branches carry the input on a
    as the theorem requires.  ``fine_grained`` may decompose outcome k into
    several update operators K with sum K^dag K = M_k; these are routed into
    an extra ancilla inside b, keeping every conditional branch pure.
    """
    proto.validate()
    da = proto.port_dim
    db_ports = da**proto.N
    d_ab = da * proto.alice_dim * db_ports
    npi = proto.N + 1

    kraus: list[list[np.ndarray]] = []
    for k, m in enumerate(proto.povm):
        if fine_grained and k in fine_grained:
            ops = [np.asarray(x, dtype=np.complex128) for x in fine_grained[k]]
            total = sum(x.conj().T @ x for x in ops)
            if np.max(np.abs(total - m.entries)) > 1e-10:
                raise ProtocolError(
                    f"fine-grained operators for outcome {k} do not resolve its POVM element"
                )
            kraus.append(ops)
        else:
            kraus.append([sqrt_psd(m.entries)])
    danc = max(len(ops) for ops in kraus)

    # isometry |v> -> sum_{k, kappa} (K_{k,kappa} x I_ports)|v> |kappa>_anc |k>_pi
    d_full = d_ab * danc * npi
    iso = np.zeros((d_full, d_ab), dtype=np.complex128)
    for k, ops in enumerate(kraus):
        for kap, kop in enumerate(ops):
            block = np.kron(kop, np.eye(db_ports))
            rows = (np.arange(d_ab) * danc + kap) * npi + k
            iso[rows, :] += block
    u0 = np.zeros((d_full, d_full), dtype=np.complex128)
    known_cols = (np.arange(d_ab) * danc + 0) * npi + 0
    u0[:, known_cols] = iso
    # iso has orthonormal columns, so the left singular vectors beyond column
    # d_ab are exactly an orthonormal basis of the orthogonal complement
    u_left, _, _ = np.linalg.svd(iso, full_matrices=True)
    complement = u_left[:, d_ab:]
    free_cols = sorted(set(range(d_full)) - set(known_cols.tolist()))
    u0[:, free_cols] = complement

    swap_total = np.zeros((d_full, d_full), dtype=np.complex128)
    dims_ab = (da, proto.alice_dim) + (da,) * proto.N
    for k in range(npi):
        if k == 0:
            perm_mat = np.eye(d_ab)
        else:
            axes = list(range(len(dims_ab)))
            axes[0], axes[1 + k] = axes[1 + k], axes[0]
            perm_flat = np.transpose(np.arange(d_ab).reshape(dims_ab), axes).reshape(-1)
            perm_mat = np.zeros((d_ab, d_ab))
            perm_mat[np.arange(d_ab), perm_flat] = 1.0
        pointer_proj = np.zeros((npi, npi))
        pointer_proj[k, k] = 1.0
        swap_total += np.kron(np.kron(perm_mat, np.eye(danc)), pointer_proj)

    u = swap_total @ u0
    db = proto.alice_dim * db_ports * danc
    xi_b = tensor_product([
        StateVector(SystemLayout.of(("b0", proto.alice_dim * db_ports)),
                    proto.resource.amplitudes),
        basis_state(SystemLayout.of(("anc", danc)), 0),
    ])
    xi_b = StateVector(SystemLayout.of(("b", db)), xi_b.amplitudes)
    chi = basis_state(SystemLayout.of(("pi", npi)), 0)
    return PointerOperation(
        dim_a=da,
        dim_b=db,
        u=u,
        xi_b=xi_b,
        chi_pi=chi,
        pointer_basis=computational_pointer_basis(npi),
    )


# ---------------------------------------------------------------------------
# serialization


def pointer_to_dict(op: PointerOperation) -> dict:
    return {
        "version": POINTER_FORMAT_VERSION,
        "kind": "pointer-operation",
        "dims": {"a": op.dim_a, "b": op.dim_b, "pi": op.dim_pointer},
        "unitary": complex_pairs(op.u),
        "xi": complex_pairs(op.xi_b.amplitudes),
        "chi": complex_pairs(op.chi_pi.amplitudes),
        "pointer_basis": [complex_pairs(v.amplitudes) for v in op.pointer_basis],
    }


def pointer_from_dict(doc: dict) -> PointerOperation:
    for field_name in ("dims", "unitary", "xi", "chi"):
        if field_name not in doc:
            raise ProtocolError(f"pointer document is missing field {field_name!r}")
    dims = doc["dims"]
    for field_name in ("a", "b", "pi"):
        if field_name not in dims:
            raise ProtocolError(f"pointer field 'dims' is missing entry {field_name!r}")
    da, db, npi = int(dims["a"]), int(dims["b"]), int(dims["pi"])
    d = da * db * npi
    u = from_complex_pairs(doc["unitary"], "unitary")
    if u.size != d * d:
        raise ProtocolError(f"field 'unitary': expected {d * d} entries, got {u.size}")
    if "pointer_basis" in doc:
        basis = tuple(
            StateVector(SystemLayout.of(("pi", npi)),
                        from_complex_pairs(vec, f"pointer_basis[{i}]"))
            for i, vec in enumerate(doc["pointer_basis"])
        )
    else:
        basis = computational_pointer_basis(npi)
    return PointerOperation(
        dim_a=da,
        dim_b=db,
        u=u.reshape(d, d),
        xi_b=StateVector(SystemLayout.of(("b", db)), from_complex_pairs(doc["xi"], "xi")),
        chi_pi=StateVector(SystemLayout.of(("pi", npi)), from_complex_pairs(doc["chi"], "chi")),
        pointer_basis=basis,
    )


def save_pointer(op: PointerOperation, path) -> None:
    with open(path, "w") as fh:
        json.dump(pointer_to_dict(op), fh, sort_keys=True)
        fh.write("\n")


def load_pointer(path) -> PointerOperation:
    with open(path) as fh:
        return pointer_from_dict(json.load(fh))
