"""Protocol engine tests: branch statistics, marginals, decomposition, Lemma-style checks."""

import numpy as np
import pytest

from pbtkit.errors import LayoutError, ProtocolError
from pbtkit.engine import (
    PbtProtocol,
    bell_pbt_protocol,
    branch_probabilities,
    build_global_state,
    measure,
    port_marginals,
    protocol_from_dict,
    protocol_to_dict,
    success_probability,
    teleport_report,
    verify_port_decomposition,
    verify_psi_independence,
)
from pbtkit.pauli import SIGMA, haar_states
from pbtkit.tensor import (
    HermitianMatrix,
    StateVector,
    SystemLayout,
    basis_state,
    fidelity,
    reduced_density,
    state_fidelity,
    states_equal,
)

BELL = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)


def ket(amps, label="a"):
    amps = np.asarray(amps, dtype=complex)
    return StateVector(SystemLayout.of((label, amps.size)), amps / np.linalg.norm(amps))


def bell_oracle_branches(psi_amps):
    """Brute-force oracle for the single-pair protocol: project (a, A) onto each
    Bell vector of the 3-qubit state psi_a x pair_{A,B1}, bookkeeping by hand."""
    state = np.kron(psi_amps, BELL)  # order (a, A, B1)
    bells = [
        np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2),
        np.array([0, 1, 1, 0], dtype=complex) / np.sqrt(2),
        np.array([0, 1, -1, 0], dtype=complex) / np.sqrt(2),
        np.array([1, 0, 0, -1], dtype=complex) / np.sqrt(2),
    ]
    outcomes = []
    for b in bells:
        proj = np.kron(np.outer(b, b.conj()), np.eye(2))
        vec = proj @ state
        prob = float(np.vdot(vec, vec).real)
        outcomes.append((prob, vec / np.sqrt(prob) if prob > 1e-12 else None))
    return outcomes


def test_build_global_state_trivial_product():
    proto = bell_pbt_protocol(1)
    zero = basis_state(SystemLayout.of(("a", 2)), 0)
    g = build_global_state(zero, proto)
    assert g.layout.labels == ("a", "A", "B1")
    assert abs(g.norm() - 1.0) < 1e-12
    # amplitudes match the independent Kronecker expansion
    np.testing.assert_allclose(g.amplitudes, np.kron(zero.amplitudes, BELL), atol=1e-15)


def test_measure_bell_protocol_matches_projection_oracle():
    proto = bell_pbt_protocol(1)
    zero = basis_state(SystemLayout.of(("a", 2)), 0)
    branches = measure(proto, zero)
    oracle = bell_oracle_branches(zero.amplitudes)
    assert branches[1].probability == pytest.approx(0.25, abs=1e-12)
    assert branches[0].probability == pytest.approx(0.75, abs=1e-12)
    # success branch: |0> at the port, maximally entangled residual on (a, A)
    rho_port = reduced_density(branches[1].post_state, {"B1"})
    assert fidelity(zero, rho_port) == pytest.approx(1.0, abs=1e-12)
    phi_plus = ket(BELL, label="pair")
    rho_rest = reduced_density(branches[1].post_state, {"a", "A"})
    assert fidelity(phi_plus, rho_rest) == pytest.approx(1.0, abs=1e-12)
    # oracle cross-check of the success amplitude vector
    assert abs(np.vdot(oracle[0][1], branches[1].post_state.amplitudes)) == pytest.approx(
        1.0, abs=1e-12)


def test_branch_probabilities_sum_to_one():
    proto = bell_pbt_protocol(2)
    for psi in haar_states(2, 10, seed=1):
        probs = branch_probabilities(proto, psi)
        assert probs.sum() == pytest.approx(1.0, abs=1e-10)
        assert success_probability(measure(proto, psi)) == pytest.approx(0.25, abs=1e-10)


def test_trivial_measurement_single_branch():
    proto = bell_pbt_protocol(1)
    d = 4
    lay = proto.povm[0].layout
    povm = (HermitianMatrix(lay, np.zeros((d, d), dtype=complex)),
            HermitianMatrix(lay, np.eye(d, dtype=complex)))
    trivial = PbtProtocol(n=1, N=1, resource=proto.resource, povm=povm)
    psi = ket([0.6, 0.8])
    branches = measure(trivial, psi)
    assert branches[1].probability == pytest.approx(1.0, abs=1e-12)
    assert branches[0].post_state is None and branches[0].probability == 0.0
    assert states_equal(branches[1].post_state, build_global_state(psi, trivial))


def test_measure_linearity_over_mixtures():
    # ensemble average of branch probabilities == density-path probabilities
    proto = bell_pbt_protocol(2)
    psi1, psi2 = haar_states(2, 2, seed=8)
    w1, w2 = 0.3, 0.7
    ensemble = w1 * branch_probabilities(proto, psi1) + w2 * branch_probabilities(proto, psi2)
    # independent density-path oracle: q_k = Tr[(M_k x I)(rho_a x xi xi)]
    rho_a = w1 * np.outer(psi1.amplitudes, psi1.amplitudes.conj()) \
        + w2 * np.outer(psi2.amplitudes, psi2.amplitudes.conj())
    xi = np.outer(proto.resource.amplitudes, proto.resource.amplitudes.conj())
    global_rho = np.kron(rho_a, xi)
    dim_b = 4
    for k, m in enumerate(proto.povm):
        mk_full = np.kron(m.entries, np.eye(dim_b))
        q = float(np.trace(mk_full @ global_rho).real)
        assert q == pytest.approx(ensemble[k], abs=1e-10)


def test_teleport_report_bell():
    proto = bell_pbt_protocol(1)
    psi = ket([1, 1j])
    branches = measure(proto, psi)
    fid, residual = teleport_report(branches[1], psi, proto)
    assert fid == pytest.approx(1.0, abs=1e-12)
    assert residual is not None
    assert residual.layout.labels == ("a", "A")
    assert state_fidelity(residual, ket(BELL, label="x")) == pytest.approx(1.0, abs=1e-10)
    with pytest.raises(ValueError):
        teleport_report(branches[0], psi, proto)


def test_teleport_report_orthogonal_flip():
    # a protocol teleporting sigma_x psi: fidelity 0 for psi = |0>
    base = bell_pbt_protocol(1)
    flip = np.kron(np.eye(2), SIGMA[1])  # sigma_x on A before the Bell projection
    povm = tuple(
        HermitianMatrix(m.layout, flip.conj().T @ m.entries @ flip) for m in base.povm
    )
    proto = PbtProtocol(n=1, N=1, resource=base.resource, povm=povm)
    zero = basis_state(SystemLayout.of(("a", 2)), 0)
    branches = measure(proto, zero)
    fid, _ = teleport_report(branches[1], zero, proto)
    assert fid == pytest.approx(0.0, abs=1e-12)


def test_port_marginals_bell():
    proto = bell_pbt_protocol(1)
    zero = basis_state(SystemLayout.of(("a", 2)), 0)
    marg = port_marginals(proto, zero, 1)
    np.testing.assert_allclose(marg.eta.entries, np.eye(2) / 2, atol=1e-12)
    assert marg.gamma == {}
    # failure marginal: (1/3) diag(1, 2), from enumerating the three failure branches
    np.testing.assert_allclose(marg.omega.entries, np.diag([1, 2]) / 3, atol=1e-12)
    with pytest.raises(LayoutError):
        port_marginals(proto, zero, 2)


def test_port_marginal_eta_is_input_independent():
    proto = bell_pbt_protocol(2)
    psi1, psi2 = haar_states(2, 2, seed=21)
    m1 = port_marginals(proto, psi1, 2)
    m2 = port_marginals(proto, psi2, 2)
    assert np.max(np.abs(m1.eta.entries - m2.eta.entries)) < 1e-12


def test_eta_equals_premeasurement_marginal():
    proto = bell_pbt_protocol(2)
    psi = haar_states(2, 1, seed=33)[0]
    g = build_global_state(psi, proto)
    for j in (1, 2):
        direct = reduced_density(g, {f"B{j}"})
        marg = port_marginals(proto, psi, j)
        np.testing.assert_allclose(direct.entries, marg.eta.entries, atol=1e-13)


def test_port_decomposition_bell_all_ports():
    for N in (1, 2, 3):
        proto = bell_pbt_protocol(N)
        for psi in haar_states(2, 5, seed=100 + N):
            for j in range(1, N + 1):
                rep = verify_port_decomposition(proto, psi, j)
                assert rep.passed, rep.to_dict()
                assert rep.max_deviation() < 1e-12


def test_port_decomposition_trivial_measurement():
    # measurement that never fails: decomposition degenerates to gamma terms only
    base = bell_pbt_protocol(2)
    d = base.povm[0].dim
    lay = base.povm[0].layout
    povm = (HermitianMatrix(lay, np.zeros((d, d), dtype=complex)),
            HermitianMatrix(lay, np.eye(d, dtype=complex)),
            HermitianMatrix(lay, np.zeros((d, d), dtype=complex)))
    proto = PbtProtocol(n=1, N=2, resource=base.resource, povm=povm)
    psi = ket([1, 2j])
    rep = verify_port_decomposition(proto, psi, 2)
    assert rep.passed


def test_port_decomposition_detects_corruption():
    proto = bell_pbt_protocol(2)
    psi = ket([0.6, 0.8])
    branches = measure(proto, psi)
    marg = port_marginals(proto, psi, 2)
    q1 = branches[1].probability
    corrupted = marg.gamma[1].entries + 1e-3 * np.diag([1.0, -1.0])
    mix = q1 * corrupted + branches[0].probability * marg.omega.entries
    residual = np.max(np.abs(marg.eta.entries - mix))
    assert residual == pytest.approx(q1 * 1e-3, rel=1e-6)


def test_psi_independence_bell():
    rep = verify_psi_independence(bell_pbt_protocol(1), sample_count=50, seed=5)
    assert rep.preconditions_met
    assert rep.passed, rep.to_dict()
    info = [c for c in rep.checks if "informational" in c.name]
    assert info and info[0].details["spread"] > 0.1  # failure marginal really varies


def test_psi_independence_precondition_rejects_non_perfect():
    # M_1 projects onto |0><0|_a x I: outcome statistics depend on the input
    base = bell_pbt_protocol(1)
    lay = base.povm[0].layout
    m1 = np.kron(np.diag([1.0, 0.0]).astype(complex), np.eye(2))
    povm = (HermitianMatrix(lay, np.eye(4) - m1), HermitianMatrix(lay, m1))
    proto = PbtProtocol(n=1, N=1, resource=base.resource, povm=povm)
    rep = verify_psi_independence(proto, sample_count=5, seed=2)
    assert not rep.preconditions_met
    assert "not applicable" in rep.note


def test_bell_protocol_values():
    for N in (1, 2, 3):
        proto = bell_pbt_protocol(N)
        psi = ket([1, -1])
        assert success_probability(measure(proto, psi)) == pytest.approx(0.25, abs=1e-12)
    # completeness is exact by construction
    total = sum(m.entries for m in bell_pbt_protocol(3).povm)
    np.testing.assert_array_equal(total, np.eye(16))


def test_protocol_invariant_violations_raise():
    proto = bell_pbt_protocol(1)
    bad = tuple(
        HermitianMatrix(m.layout, m.entries * 1.01) for m in proto.povm
    )
    with pytest.raises(ProtocolError, match="completeness"):
        PbtProtocol(n=1, N=1, resource=proto.resource, povm=bad)
    neg = (HermitianMatrix(proto.povm[0].layout, -0.01 * np.eye(4)),
           HermitianMatrix(proto.povm[0].layout, 1.01 * np.eye(4)))
    with pytest.raises(ProtocolError, match="PSD"):
        PbtProtocol(n=1, N=1, resource=proto.resource, povm=neg)


def test_protocol_json_roundtrip():
    proto = bell_pbt_protocol(2)
    doc = protocol_to_dict(proto)
    assert doc["dims"] == {"a": 2, "A": 4, "B": 2}
    back = protocol_from_dict(doc)
    np.testing.assert_allclose(back.resource.amplitudes, proto.resource.amplitudes)
    for m1, m2 in zip(back.povm, proto.povm):
        np.testing.assert_allclose(m1.entries, m2.entries)


def test_protocol_from_dict_names_missing_field():
    doc = protocol_to_dict(bell_pbt_protocol(1))
    del doc["povm"]
    with pytest.raises(ProtocolError, match="povm"):
        protocol_from_dict(doc)
