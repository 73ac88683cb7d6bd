"""No-signaling audit: the communication-free message chain and the bound.

The sender tries to push a 2n-bit message to the receiver without any
communication: she encodes it superdensely into a shared entangled pair, then
teleports her half through a twirled protocol in which she holds every port
except B_j.  On a hit (outcome j) the receiver's decoding succeeds; on a miss
she silently re-teleports the state from the port she received onto B_j
through the Schmidt basis of the residual, with no correction message; on a
failure the receiver decodes whatever is left.  No-signaling pins the
receiver's total success probability to exactly 4^-n, and summing the
resulting balance equation over ports yields the success-probability bound
N/(4^n + N - 1).

Everything here is computed twice: by exact branch summation (the verdict)
and by seeded Monte-Carlo rounds (an independent cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np

from .engine import BRANCH_PRUNE, port_label, povm_branches
from .errors import ChainPreconditionError
from .pauli import PauliIndex, haar_states, pauli_element
from .primed import PrimedProtocol, verify_eq5
from .report import AuditReport
from .tensor import (
    StateVector,
    apply_on_subsystems,
    maximally_entangled,
    permute_subsystems,
    reduced_density,
    schmidt_decompose,
    tensor_product,
)

#: tolerance for the exact no-signaling checks
EXACT_ATOL = 1e-10


def sdc_encode(message: int, n: int) -> StateVector:
    """Superdense encoding: V_message applied to one half of a maximally
    entangled pair of 2^n-dimensional systems.  The 4^n encodings are
    mutually orthonormal."""
    v = pauli_element(PauliIndex(message, n))  # validates the range
    phi = maximally_entangled(("a", 2**n), ("b", 2**n))
    return apply_on_subsystems(phi, v, ["a"])


def sdc_basis(n: int) -> list[StateVector]:
    return [sdc_encode(r, n) for r in range(1, 4**n + 1)]


def bound(n: int, N: int) -> Fraction:
    """The success-probability upper bound N/(4^n + N - 1), exactly."""
    if n < 1 or N < 1:
        raise ValueError(f"need n >= 1 and N >= 1, got n={n}, N={N}")
    return Fraction(N, 4**n + N - 1)


@dataclass(frozen=True)
class FValue:
    """One evaluation of the port-sum balance curve."""

    value: float
    exact: Optional[Fraction]
    feasible: bool
    boundary: bool


def f_of_R(n: int, N: int, R: float) -> FValue:
    """Evaluate (1 + (4^n - 1)/(N - 4^n R))^-1 with exact rational arithmetic.

    ``feasible`` flags 0 <= R <= 4^-n N (outside, no probability in [0, 1]
    solves the balance); at R = 4^-n N the expression degenerates and the
    continuous limit 0 is returned, flagged as the boundary case.
    """
    if n < 1 or N < 1:
        raise ValueError(f"need n >= 1 and N >= 1, got n={n}, N={N}")
    r_exact = Fraction(R)
    limit = Fraction(N, 4**n)
    feasible = 0 <= r_exact <= limit
    if r_exact == limit:
        return FValue(value=0.0, exact=Fraction(0), feasible=feasible, boundary=True)
    exact = 1 / (1 + Fraction(4**n - 1) / (N - 4**n * r_exact))
    return FValue(value=float(exact), exact=exact, feasible=feasible, boundary=False)


# ---------------------------------------------------------------------------
# chain protocol


@dataclass(frozen=True)
class ChainOutcome:
    """One sampled round of the message chain."""

    case: str  # "port_hit" | "port_miss" | "failure"
    alice_outcome: int
    bob_message: int
    correct: bool


@dataclass
class Case2Analysis:
    """Fallback teleportation from source port i onto the receiver's port."""

    source_port: int
    teleport_probs: np.ndarray        # per generalized-Bell outcome, conditional on k=i
    leak_prob: float                  # weight outside the Bell family (0 for valid chains)
    bob_probs: np.ndarray             # [outcome t, decoded message r]
    success: float                    # receiver success conditional on k=i
    schmidt_deviation: float          # max |coeff - 2^(-n/2)| of the residual


@dataclass
class ChainAnalysis:
    """Exact conditional distributions of one (protocol, message, port) chain."""

    j: int
    message: int
    q: np.ndarray
    case1_probs: Optional[np.ndarray]   # receiver decoding distribution given k=j
    case2: dict[int, Case2Analysis]
    case0_probs: Optional[np.ndarray]   # receiver decoding distribution given k=0
    r_j: float
    p: float
    p_prime_simulated: float
    p_prime_formula: float


def check_chain_preconditions(primed: PrimedProtocol, seed: int = 0) -> None:
    """The chain argument needs maximally mixed port marginals and a perfect base."""
    probes = haar_states(primed.base.port_dim, 2, seed)
    rep = verify_eq5(primed, probes)
    if not rep.passed:
        raise ChainPreconditionError(
            "chain protocol requires a twirled perfect protocol; marginal check failed: "
            + (rep.note or "see report")
        )


def _bob_marginal_probs(state: StateVector, j: int, basis: Sequence[StateVector]
                        ) -> np.ndarray:
    """Receiver decoding distribution from the (B_j, b) marginal of a branch."""
    rho = reduced_density(state, {port_label(j), "b"})
    rho = permute_subsystems(rho, [port_label(j), "b"])
    return np.array([
        float(np.vdot(v.amplitudes, rho.entries @ v.amplitudes).real) for v in basis
    ])


def _analyze_case2(post: StateVector, i: int, j: int, n: int,
                   basis: Sequence[StateVector], message: int) -> Case2Analysis:
    """Exactly resolve the fallback teleportation + decoding for source port i."""
    d = 2**n
    src = port_label(i)
    coeffs, _, right = schmidt_decompose(post, {src, "b"})
    if 1.0 - coeffs[0] ** 2 > 1e-8:
        raise ChainPreconditionError(
            f"branch {i} does not factorize from (B_{i}, b); cannot run the fallback"
        )
    residual = right[0]
    alice_labels = [lbl for lbl in residual.layout.labels if lbl != port_label(j)]
    coeffs2, alice_basis, _ = schmidt_decompose(residual, set(alice_labels))
    schmidt_dev = float(np.max(np.abs(coeffs2[:d] - 1.0 / np.sqrt(d))))
    dim_alice = alice_basis[0].dim
    omega = np.stack([alice_basis[l].amplitudes for l in range(d)], axis=0) / np.sqrt(d)

    ordered = permute_subsystems(post, [src] + alice_labels + [port_label(j), "b"])
    mat = ordered.amplitudes.reshape(d * dim_alice, d * d)
    rho_bob = reduced_density(post, {port_label(j), "b"})
    rho_bob = permute_subsystems(rho_bob, [port_label(j), "b"]).entries.copy()

    teleport_probs = np.zeros(4**n)
    bob_probs = np.zeros((4**n, 4**n))
    for t in range(1, 4**n + 1):
        beta = (pauli_element(PauliIndex(t, n)) @ omega).reshape(-1)
        bob_vec = beta.conj() @ mat
        p_t = float(np.vdot(bob_vec, bob_vec).real)
        teleport_probs[t - 1] = p_t
        if p_t < BRANCH_PRUNE:
            continue
        cond = bob_vec / np.sqrt(p_t)
        bob_probs[t - 1] = [abs(np.vdot(v.amplitudes, cond)) ** 2 for v in basis]
        rho_bob -= p_t * np.outer(cond, cond.conj())
    leak = float(max(0.0, 1.0 - teleport_probs.sum()))
    success = float(teleport_probs @ bob_probs[:, message - 1])
    if leak > BRANCH_PRUNE:
        rho_out = rho_bob / leak
        out_probs = np.array([
            float(np.vdot(v.amplitudes, rho_out @ v.amplitudes).real) for v in basis
        ])
        success += leak * out_probs[message - 1]
    return Case2Analysis(
        source_port=i,
        teleport_probs=teleport_probs,
        leak_prob=leak,
        bob_probs=bob_probs,
        success=success,
        schmidt_deviation=schmidt_dev,
    )


def analyze_chain(primed: PrimedProtocol, message: int, j: int,
                  check_preconditions: bool = True) -> ChainAnalysis:
    """Exact conditional distribution tree for one chain configuration."""
    base = primed.base
    n, big_n = base.n, base.N
    if not 1 <= j <= big_n:
        raise ValueError(f"receiver port {j} out of range [1, {big_n}]")
    if check_preconditions:
        check_chain_preconditions(primed)
    basis = sdc_basis(n)
    psi_ab = sdc_encode(message, n)
    state = tensor_product([psi_ab, primed.primed_resource])
    state = apply_on_subsystems(state, primed.w, ["a", "ap"])
    raw = povm_branches(state, [m.entries for m in base.povm], ("a", "A"))
    q = np.array([p for p, _ in raw])
    p_success = float(q[1:].sum())

    case1 = None
    if raw[j][1] is not None:
        case1 = _bob_marginal_probs(raw[j][1], j, basis)
    case2 = {}
    for i in range(1, big_n + 1):
        if i == j or raw[i][1] is None:
            continue
        case2[i] = _analyze_case2(raw[i][1], i, j, n, basis, message)
    case0 = None
    r_j = 0.0
    if raw[0][1] is not None:
        case0 = _bob_marginal_probs(raw[0][1], j, basis)
        r_j = float(case0[message - 1])

    p_prime = 0.0
    if case1 is not None:
        p_prime += q[j] * float(case1[message - 1])
    for i, c2 in case2.items():
        p_prime += q[i] * c2.success
    p_prime += q[0] * r_j
    formula = float(q[j] + 4.0**-n * (p_success - q[j]) + (1.0 - p_success) * r_j)
    return ChainAnalysis(
        j=j,
        message=message,
        q=q,
        case1_probs=case1,
        case2=case2,
        case0_probs=case0,
        r_j=r_j,
        p=p_success,
        p_prime_simulated=p_prime,
        p_prime_formula=formula,
    )


def run_chain(primed: PrimedProtocol, message: int, seed: int, j: int = 1,
              force_k: Optional[int] = None,
              analysis: Optional[ChainAnalysis] = None) -> ChainOutcome:
    """Sample one full chain round from the exact conditional distributions."""
    return run_chain_batch(primed, message, 1, seed, j=j, force_k=force_k,
                           analysis=analysis)[0]


def run_chain_batch(primed: PrimedProtocol, message: int, rounds: int, seed: int,
                    j: int = 1, force_k: Optional[int] = None,
                    analysis: Optional[ChainAnalysis] = None) -> list[ChainOutcome]:
    """Sample many chain rounds; the conditional tree is computed once."""
    if analysis is None:
        analysis = analyze_chain(primed, message, j)
    rng = np.random.Generator(np.random.PCG64(seed))
    big_n = primed.base.N
    q = analysis.q
    outcomes: list[ChainOutcome] = []
    for _ in range(rounds):
        if force_k is None:
            k = int(rng.choice(big_n + 1, p=q / q.sum()))
        else:
            if q[force_k] <= 0.0:
                raise ValueError(f"cannot force outcome {force_k}: probability 0")
            k = force_k
        if k == j:
            case = "port_hit"
            r = int(rng.choice(len(analysis.case1_probs),
                               p=analysis.case1_probs / analysis.case1_probs.sum())) + 1
        elif k == 0:
            case = "failure"
            r = int(rng.choice(len(analysis.case0_probs),
                               p=analysis.case0_probs / analysis.case0_probs.sum())) + 1
        else:
            case = "port_miss"
            c2 = analysis.case2[k]
            probs = np.append(c2.teleport_probs, c2.leak_prob)
            t = int(rng.choice(len(probs), p=probs / probs.sum()))
            if t == len(c2.teleport_probs):
                raise ChainPreconditionError("sampled the leak branch of an invalid chain")
            row = c2.bob_probs[t]
            r = int(rng.choice(len(row), p=row / row.sum())) + 1
        outcomes.append(ChainOutcome(case=case, alice_outcome=k, bob_message=r,
                                     correct=(r == message)))
    return outcomes


# ---------------------------------------------------------------------------
# full report


@dataclass
class PortSignaling:
    """Chain results for one receiver port."""

    j: int
    q_j: float
    r_j: float
    p_prime_simulated: float
    p_prime_formula: float
    case2_success: dict[int, float] = field(default_factory=dict)
    case2_teleport_probs: dict[int, list[float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "j": self.j,
            "q_j": self.q_j,
            "r_j": self.r_j,
            "p_prime_simulated": self.p_prime_simulated,
            "p_prime_formula": self.p_prime_formula,
            "case2_success": {str(i): v for i, v in self.case2_success.items()},
            "case2_teleport_probs": {
                str(i): v for i, v in self.case2_teleport_probs.items()
            },
        }


@dataclass
class SignalingReport:
    """Exact chain audit over every receiver port, for one message."""

    n: int
    N: int
    message: int
    q: list[float]
    p: float
    ports: list[PortSignaling]
    R: float
    p_implied: float
    bound: Fraction
    audit: AuditReport

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "N": self.N,
            "message": self.message,
            "q": self.q,
            "p": self.p,
            "ports": [port.to_dict() for port in self.ports],
            "R": self.R,
            "p_implied": self.p_implied,
            "bound": {"numerator": self.bound.numerator,
                      "denominator": self.bound.denominator,
                      "value": float(self.bound)},
            "audit": self.audit.to_dict(),
        }


def compute_chain_exact(primed: PrimedProtocol, message: int,
                        tolerance: float = EXACT_ATOL) -> SignalingReport:
    """Exact branch summation of the chain for every receiver port.

    Verifies: receiver success is exactly the random guess 4^-n for every
    port (and never below it), the three-case balance reproduces it, the
    miss case collectively contributes 4^-n (p - q_j), and the port sum
    lands back on the protocol's success probability.
    """
    check_chain_preconditions(primed)
    base = primed.base
    n, big_n = base.n, base.N
    guess = 4.0**-n
    audit = AuditReport(subject=f"no-signaling chain audit, message {message}")
    ports = []
    r_total = 0.0
    p_success = None
    q_list: list[float] = []
    for j in range(1, big_n + 1):
        ana = analyze_chain(primed, message, j, check_preconditions=False)
        p_success = ana.p
        q_list = [float(x) for x in ana.q]
        ports.append(PortSignaling(
            j=j,
            q_j=float(ana.q[j]),
            r_j=ana.r_j,
            p_prime_simulated=ana.p_prime_simulated,
            p_prime_formula=ana.p_prime_formula,
            case2_success={i: c.success for i, c in ana.case2.items()},
            case2_teleport_probs={
                i: [float(x) for x in c.teleport_probs] for i, c in ana.case2.items()
            },
        ))
        r_total += ana.r_j
        audit.add(f"port {j}: receiver success equals the random guess", "NS",
                  abs(ana.p_prime_simulated - guess), tolerance, port=j)
        audit.add(f"port {j}: receiver success never beats the guess from below", "NS",
                  guess - ana.p_prime_simulated, tolerance, port=j)
        audit.add(f"port {j}: three-case balance reproduces the simulation", "Eq.6",
                  abs(ana.p_prime_simulated - ana.p_prime_formula), tolerance, port=j)
        case2_total = sum(ana.q[i] * c.success for i, c in ana.case2.items())
        audit.add(f"port {j}: miss outcomes contribute 4^-n (p - q_j)", "Eq.6",
                  abs(case2_total - guess * (ana.p - ana.q[j])), tolerance, port=j)
        for i, c in ana.case2.items():
            audit.add(
                f"port {j}: residual from port {i} is maximally entangled with B_{j}",
                "Eq.5", c.schmidt_deviation, 1e-8, source_port=i)
            audit.add(f"port {j}: fallback outcomes stay in the Bell family", "Eq.5",
                      c.leak_prob, tolerance, source_port=i)
    implied = f_of_R(n, big_n, r_total)
    audit.add("port sum lands on p = f(R)", "Eq.6.5", abs(p_success - implied.value),
              tolerance, R=r_total)
    b = bound(n, big_n)
    audit.add("success probability respects the bound", "Eq.2",
              p_success - float(b), 1e-8)
    return SignalingReport(
        n=n,
        N=big_n,
        message=message,
        q=q_list,
        p=float(p_success),
        ports=ports,
        R=r_total,
        p_implied=implied.value,
        bound=b,
        audit=audit,
    )


def monte_carlo_check(primed: PrimedProtocol, message: int, j: int, rounds: int,
                      seed: int) -> AuditReport:
    """Sampled cross-check: empirical success within 3 sigma of 4^-n."""
    ana = analyze_chain(primed, message, j)
    outcomes = run_chain_batch(primed, message, rounds, seed, j=j, analysis=ana)
    hits = sum(1 for o in outcomes if o.correct)
    guess = 4.0**-primed.base.n
    sigma = np.sqrt(guess * (1 - guess) / rounds)
    rep = AuditReport(subject=f"sampled chain cross-check, message {message}, port {j}",
                      seed=seed)
    rep.add("empirical success within 3 sigma of the guess", "NS",
            abs(hits / rounds - guess), 3 * sigma, rounds=rounds, hits=hits)
    return rep
