"""The n-qubit Pauli operator set, the twirl identity, and Haar-random states.

The 4^n operators ``V_l`` are indexed by ``l = 1..4^n``: the base-4 digits of
``l - 1`` (most significant digit first) pick the single-qubit factor on each
qubit, so the Kronecker ordering matches :class:`~pbtkit.tensor.SystemLayout`
ordering.  Averaging any density operator over conjugation by the full set
yields the maximally mixed state exactly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import LayoutError
from .tensor import HermitianMatrix, StateVector, SystemLayout

#: name of the pseudorandom bit generator; recorded in every audit report so
#: sampled results are reproducible from (algorithm, seed) alone.
RNG_ALGORITHM = "PCG64"

SIGMA = (
    np.eye(2, dtype=np.complex128),
    np.array([[0, 1], [1, 0]], dtype=np.complex128),
    np.array([[0, -1j], [1j, 0]], dtype=np.complex128),
    np.array([[1, 0], [0, -1]], dtype=np.complex128),
)

# single-qubit products sigma_a sigma_b = phase * sigma_c, tabulated as (c, phase)
_PRODUCT = {}
for _a in range(4):
    for _b in range(4):
        prod = SIGMA[_a] @ SIGMA[_b]
        for _c in range(4):
            for _ph in (1, -1, 1j, -1j):
                if np.allclose(prod, _ph * SIGMA[_c]):
                    _PRODUCT[(_a, _b)] = (_c, _ph)
del _a, _b, _c, _ph, prod


@dataclass(frozen=True)
class PauliIndex:
    """Index l in [1, 4^n] into the n-qubit Pauli set."""

    l: int
    n: int

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"qubit count must be positive, got {self.n}")
        if not 1 <= self.l <= 4**self.n:
            raise ValueError(f"index {self.l} out of range [1, {4 ** self.n}]")

    def digits(self) -> tuple[int, ...]:
        """Base-4 digits of l-1, most significant digit = first qubit."""
        rem = self.l - 1
        out = []
        for _ in range(self.n):
            out.append(rem % 4)
            rem //= 4
        return tuple(reversed(out))


def pauli_element(idx: PauliIndex) -> np.ndarray:
    """The 2^n x 2^n unitary V_l as an explicit matrix."""
    out = np.array([[1.0 + 0j]])
    for d in idx.digits():
        out = np.kron(out, SIGMA[d])
    return out


def pauli_product(l: int, m: int, n: int) -> tuple[int, complex]:
    """Return (r, phase) with V_l V_m = phase * V_r; phase in {1, -1, i, -i}."""
    da = PauliIndex(l, n).digits()
    db = PauliIndex(m, n).digits()
    phase = 1 + 0j
    digits = []
    for a, b in zip(da, db):
        c, ph = _PRODUCT[(a, b)]
        digits.append(c)
        phase *= ph
    r = 0
    for c in digits:
        r = 4 * r + c
    return r + 1, complex(phase)


def twirl(rho: HermitianMatrix) -> HermitianMatrix:
    """(1/4^n) sum_l V_l rho V_l^dag; equals I/2^n for any density operator."""
    d = rho.dim
    n = d.bit_length() - 1
    if 2**n != d:
        raise LayoutError(f"twirl needs a 2^n-dimensional operator, got dimension {d}")
    if not rho.is_density():
        raise ValueError("twirl input must be a density operator")
    acc = np.zeros((d, d), dtype=np.complex128)
    for l in range(1, 4**n + 1):
        v = pauli_element(PauliIndex(l, n))
        acc += v @ rho.entries @ v.conj().T
    return HermitianMatrix(rho.layout, acc / 4**n)


def sample_haar_state(dim: int, seed: int, label: str = "a") -> StateVector:
    """Haar-random pure state: a normalized complex standard-normal vector.

    Deterministic given the seed; the generator is the seedable,
    platform-independent PCG64 algorithm.
    """
    if dim < 1:
        raise ValueError(f"dimension must be positive, got {dim}")
    rng = np.random.Generator(np.random.PCG64(seed))
    vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
    vec /= np.linalg.norm(vec)
    return StateVector(SystemLayout.of((label, dim)), vec)


def haar_states(dim: int, count: int, seed: int, label: str = "a") -> list[StateVector]:
    """A reproducible batch of independent Haar-random states."""
    rng = np.random.Generator(np.random.PCG64(seed))
    out = []
    for _ in range(count):
        vec = rng.standard_normal(dim) + 1j * rng.standard_normal(dim)
        vec /= np.linalg.norm(vec)
        out.append(StateVector(SystemLayout.of((label, dim)), vec))
    return out
