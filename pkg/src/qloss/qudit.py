"""Exact state-vector / density-operator engine over multi-level ions.

Each ion carries either 3 levels (|0>, |1>, |2>) or 5 levels (adding the
hiding targets |H0>, |H1>).  Level semantics:

* ``0``  - lower qubit state, S manifold (fluoresces, "bright")
* ``1``  - upper qubit state, D manifold ("dark")
* ``2``  - loss level, D manifold (dark)
* ``H0`` - hiding target of |0>, D manifold (dark)
* ``H1`` - hiding target of |1>, S manifold (bright)

Tensor index convention: ion 0 is the most significant factor, so the
amplitude of the basis ket ``|l0 l1 ... l_{n-1}>`` sits at flat index
``l0 * dims**(n-1) + l1 * dims**(n-2) + ...``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .tolerances import ATOL_ALGEBRA, ATOL_PSD, ATOL_TRACE


class Level(IntEnum):
    """Per-ion electronic level, ordered by its basis index."""

    L0 = 0
    L1 = 1
    L2 = 2
    H0 = 3
    H1 = 4


#: levels that fluoresce during readout (S manifold)
BRIGHT_LEVELS = frozenset({Level.L0, Level.H1})
#: levels that stay dark during readout (D manifold)
DARK_LEVELS = frozenset({Level.L1, Level.L2, Level.H0})
#: the computational subspace
COMPUTATIONAL_LEVELS = (Level.L0, Level.L1)


class DimensionError(ValueError):
    """A level or operator does not fit the per-ion dimension."""


class ContractViolation(ValueError):
    """An operator failed a contract check (unitarity, PSD, ...)."""


class UndefinedExpectationError(ZeroDivisionError):
    """Expectation value requested on a zero-trace operator."""


def _check_support(support: Sequence[int], n_ions: int) -> tuple[int, ...]:
    sup = tuple(int(i) for i in support)
    if len(set(sup)) != len(sup):
        raise ValueError(f"duplicate ion indices in support {sup}")
    for i in sup:
        if not 0 <= i < n_ions:
            raise IndexError(f"ion index {i} out of range for {n_ions} ions")
    return sup


def _embed_apply_vec(amps: np.ndarray, matrix: np.ndarray, support: tuple[int, ...],
                     n_ions: int, dims: int) -> np.ndarray:
    """Apply ``matrix`` (acting on the ions in ``support``) to a flat amplitude vector."""
    k = len(support)
    tens = amps.reshape([dims] * n_ions)
    rest = [i for i in range(n_ions) if i not in support]
    perm = list(support) + rest
    tens = np.transpose(tens, perm).reshape(dims**k, -1)
    tens = matrix @ tens
    tens = tens.reshape([dims] * n_ions)
    inv = np.argsort(perm)
    return np.transpose(tens, inv).reshape(-1)


@dataclass
class PureState:
    """Complex amplitude vector over ``n_ions`` ions with ``dims`` levels each."""

    n_ions: int
    dims: int
    amps: np.ndarray

    def __post_init__(self) -> None:
        if self.dims not in (3, 5):
            raise DimensionError(f"per-ion dimension must be 3 or 5, got {self.dims}")
        self.amps = np.asarray(self.amps, dtype=complex).reshape(-1)
        if self.amps.size != self.dims**self.n_ions:
            raise DimensionError("amplitude vector length does not match ion count")

    def copy(self) -> "PureState":
        return PureState(self.n_ions, self.dims, self.amps.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.amps))

    def level_populations(self, ion: int) -> np.ndarray:
        """Per-level population of one ion (marginal over the others)."""
        tens = np.abs(self.amps.reshape([self.dims] * self.n_ions)) ** 2
        axes = tuple(i for i in range(self.n_ions) if i != ion)
        return tens.sum(axis=axes)

    def to_density(self) -> "DensityOperator":
        return DensityOperator(self.n_ions, self.dims, np.outer(self.amps, self.amps.conj()))

    def overlap(self, other: "PureState") -> complex:
        return complex(np.vdot(self.amps, other.amps))

    def fidelity(self, other: "PureState") -> float:
        """Squared overlap; insensitive to global phase."""
        return abs(self.overlap(other)) ** 2


def make_state(n_ions: int, dims: int, initial_levels: Iterable[Level | int]) -> PureState:
    """Product basis state with the given per-ion levels."""
    levels = [Level(l) for l in initial_levels]
    if len(levels) != n_ions:
        raise ValueError(f"expected {n_ions} levels, got {len(levels)}")
    idx = 0
    for lvl in levels:
        if int(lvl) >= dims:
            raise DimensionError(f"level {lvl.name} not representable with dims={dims}")
        idx = idx * dims + int(lvl)
    amps = np.zeros(dims**n_ions, dtype=complex)
    amps[idx] = 1.0
    return PureState(n_ions, dims, amps)


def apply_unitary(state: PureState, matrix: np.ndarray, support: Sequence[int]) -> PureState:
    """Apply a unitary acting on ``support`` (validated to 1e-10) to a pure state."""
    sup = _check_support(support, state.n_ions)
    matrix = np.asarray(matrix, dtype=complex)
    side = state.dims ** len(sup)
    if matrix.shape != (side, side):
        raise DimensionError(f"matrix side {matrix.shape} does not match support size {side}")
    dev = np.max(np.abs(matrix.conj().T @ matrix - np.eye(side)))
    if dev > ATOL_ALGEBRA:
        raise ContractViolation(f"matrix is not unitary (max deviation {dev:.2e})")
    out = _embed_apply_vec(state.amps, matrix, sup, state.n_ions, state.dims)
    return PureState(state.n_ions, state.dims, out)


def measure_projective(state: PureState, ion: int, partition: Sequence[Iterable[Level | int]],
                       rng: np.random.Generator | None = None,
                       force_outcome: int | None = None
                       ) -> tuple[int, PureState, float]:
    """Projectively measure one ion against a partition of its levels.

    ``partition`` is a list of disjoint level sets covering all ``dims`` levels.
    Returns ``(outcome_index, collapsed_state, exact_probability)``; the
    probability is the Born value, not a sampled frequency.  Passing
    ``force_outcome`` deterministically selects a branch and raises if that
    branch has (numerically) zero probability.
    """
    sets = [frozenset(Level(l) for l in s) for s in partition]
    seen: set[Level] = set()
    for s in sets:
        if s & seen:
            raise ValueError("partition sets are not disjoint")
        seen |= s
    if seen != {Level(l) for l in range(state.dims)}:
        raise ValueError("partition does not cover all levels of the ion")

    pops = state.level_populations(ion)
    total = pops.sum()
    probs = np.array([sum(pops[int(l)] for l in s) for s in sets]) / total
    if abs(probs.sum() - 1.0) > ATOL_TRACE:
        raise ContractViolation("outcome probabilities do not sum to 1")

    if force_outcome is not None:
        outcome = int(force_outcome)
        if probs[outcome] <= ATOL_TRACE:
            raise ContractViolation(
                f"deterministic request of zero-probability branch {outcome}")
    else:
        if rng is None:
            raise ValueError("rng required unless force_outcome is given")
        outcome = int(rng.choice(len(sets), p=probs / probs.sum()))

    keep = np.zeros(state.dims)
    for l in sets[outcome]:
        keep[int(l)] = 1.0
    tens = state.amps.reshape([state.dims] * state.n_ions)
    shape = [1] * state.n_ions
    shape[ion] = state.dims
    tens = tens * keep.reshape(shape)
    amps = tens.reshape(-1)
    amps = amps / np.linalg.norm(amps)
    return outcome, PureState(state.n_ions, state.dims, amps), float(probs[outcome])


@dataclass
class DensityOperator:
    """Hermitian operator over the same tensor space as :class:`PureState`.

    Trace may be below 1 for post-selected (subnormalized) branches.
    """

    n_ions: int
    dims: int
    mat: np.ndarray

    def __post_init__(self) -> None:
        if self.dims not in (3, 5):
            raise DimensionError(f"per-ion dimension must be 3 or 5, got {self.dims}")
        self.mat = np.asarray(self.mat, dtype=complex)
        side = self.dims**self.n_ions
        if self.mat.shape != (side, side):
            raise DimensionError("matrix side does not match ion count")

    def copy(self) -> "DensityOperator":
        return DensityOperator(self.n_ions, self.dims, self.mat.copy())

    def trace(self) -> float:
        return float(np.real(np.trace(self.mat)))

    def validate(self) -> None:
        dev = np.max(np.abs(self.mat - self.mat.conj().T))
        if dev > ATOL_ALGEBRA:
            raise ContractViolation(f"not Hermitian (max deviation {dev:.2e})")
        evals = np.linalg.eigvalsh(self.mat)
        if evals.min() < -ATOL_PSD:
            raise ContractViolation(f"not PSD (min eigenvalue {evals.min():.2e})")
        tr = self.trace()
        if not 0.0 < tr <= 1.0 + ATOL_PSD:
            raise ContractViolation(f"trace {tr} outside (0, 1]")

    def normalized(self) -> "DensityOperator":
        tr = self.trace()
        if tr <= ATOL_TRACE:
            raise UndefinedExpectationError("cannot normalize zero-trace operator")
        return DensityOperator(self.n_ions, self.dims, self.mat / tr)

    def apply_unitary(self, matrix: np.ndarray, support: Sequence[int]) -> "DensityOperator":
        sup = _check_support(support, self.n_ions)
        matrix = np.asarray(matrix, dtype=complex)
        side = self.dims ** len(sup)
        dev = np.max(np.abs(matrix.conj().T @ matrix - np.eye(side)))
        if dev > ATOL_ALGEBRA:
            raise ContractViolation(f"matrix is not unitary (max deviation {dev:.2e})")
        return self.apply_operator(matrix, sup)

    def apply_operator(self, matrix: np.ndarray, support: Sequence[int]) -> "DensityOperator":
        """rho -> M rho M^dagger with M embedded on ``support`` (no unitarity check)."""
        sup = _check_support(support, self.n_ions)
        n, d = self.n_ions, self.dims
        k = len(sup)
        mk = np.asarray(matrix, dtype=complex).reshape([d] * (2 * k))
        in_axes = list(range(k, 2 * k))
        tens = self.mat.reshape([d] * (2 * n))
        # rows (ket side), then columns (bra side, conjugated)
        tens = np.moveaxis(np.tensordot(mk, tens, axes=(in_axes, list(sup))),
                           range(k), sup)
        col_axes = [n + i for i in sup]
        tens = np.moveaxis(np.tensordot(mk.conj(), tens, axes=(in_axes, col_axes)),
                           range(k), col_axes)
        side = d**n
        return DensityOperator(n, d, tens.reshape(side, side))

    def project_levels(self, ion: int, levels: Iterable[Level | int]) -> "DensityOperator":
        """Subnormalized branch after projecting ``ion`` onto a level set."""
        keep = np.zeros(self.dims)
        for l in levels:
            keep[int(Level(l))] = 1.0
        d = self.dims**self.n_ions
        tens = self.mat.reshape([self.dims] * (2 * self.n_ions))
        shape_row = [1] * (2 * self.n_ions)
        shape_row[ion] = self.dims
        shape_col = [1] * (2 * self.n_ions)
        shape_col[self.n_ions + ion] = self.dims
        tens = tens * keep.reshape(shape_row) * keep.reshape(shape_col)
        return DensityOperator(self.n_ions, self.dims, tens.reshape(d, d))


def partial_trace(rho: DensityOperator, keep: Sequence[int]) -> DensityOperator:
    """Reduced operator on the ``keep`` ions (in the order given)."""
    keep_t = _check_support(keep, rho.n_ions)
    if not keep_t:
        raise ValueError("keep set must be nonempty")
    n, d = rho.n_ions, rho.dims
    tens = rho.mat.reshape([d] * (2 * n))
    drop = [i for i in range(n) if i not in keep_t]
    for off, i in enumerate(sorted(drop, reverse=True)):
        tens = np.trace(tens, axis1=i, axis2=i + (n - off))
    # remaining axes follow the original ion order; permute to requested order
    order = sorted(keep_t)
    perm = [order.index(i) for i in keep_t]
    k = len(keep_t)
    tens = np.transpose(tens, perm + [p + k for p in perm])
    return DensityOperator(k, d, tens.reshape(d**k, d**k))


# ---------------------------------------------------------------------------
# Pauli strings


_PAULI_BLOCKS = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def truncated_pauli(letter: str, dims: int) -> np.ndarray:
    """Single-ion Pauli acting on {|0>,|1>} and annihilating all other levels.

    The letter ``I`` is the true identity on all levels.
    """
    if letter == "I":
        return np.eye(dims, dtype=complex)
    m = np.zeros((dims, dims), dtype=complex)
    m[:2, :2] = _PAULI_BLOCKS[letter]
    return m


@dataclass(frozen=True)
class PauliString:
    """Signed Pauli word over a register, embedded to annihilate leaked levels."""

    sign: int
    letters: tuple[str, ...]

    def __post_init__(self) -> None:
        if self.sign not in (1, -1):
            raise ValueError("sign must be +1 or -1")
        for l in self.letters:
            if l not in "IXYZ":
                raise ValueError(f"invalid Pauli letter {l!r}")

    @classmethod
    def from_map(cls, n_ions: int, mapping: dict[int, str], sign: int = 1) -> "PauliString":
        letters = ["I"] * n_ions
        for ion, letter in mapping.items():
            letters[ion] = letter
        return cls(sign, tuple(letters))

    @property
    def n_ions(self) -> int:
        return len(self.letters)

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.letters) if l != "I")

    def commutes(self, other: "PauliString") -> bool:
        """Site-count rule: commute iff the anticommuting sites are even."""
        if self.n_ions != other.n_ions:
            raise ValueError("length mismatch")
        odd = sum(1 for a, b in zip(self.letters, other.letters)
                  if a != "I" and b != "I" and a != b)
        return odd % 2 == 0

    def embedded(self, dims: int) -> np.ndarray:
        return _embedded_cached(self, dims)

    def restricted(self, ions: Sequence[int]) -> "PauliString":
        """The same word re-indexed onto a sub-register given by ``ions``."""
        for i in self.support:
            if i not in ions:
                raise ValueError("support not contained in the sub-register")
        return PauliString(self.sign, tuple(self.letters[i] for i in ions))

    def __str__(self) -> str:
        body = "".join(self.letters)
        return body if self.sign == 1 else "-" + body


@lru_cache(maxsize=4096)
def _embedded_cached(pauli: PauliString, dims: int) -> np.ndarray:
    mat = np.array([[complex(pauli.sign)]])
    for l in pauli.letters:
        mat = np.kron(mat, truncated_pauli(l, dims))
    mat.setflags(write=False)
    return mat


def expectation(rho: DensityOperator, obs: PauliString) -> float:
    """Branch-conditioned expectation Tr(rho P)/Tr(rho); leaked population counts 0."""
    if obs.n_ions != rho.n_ions:
        raise ValueError("observable length does not match register")
    tr = np.trace(rho.mat)
    if abs(tr) <= ATOL_TRACE:
        raise UndefinedExpectationError("expectation undefined for zero-trace operator")
    val = np.trace(rho.mat @ obs.embedded(rho.dims)) / tr
    if abs(val.imag) > ATOL_ALGEBRA:
        raise ContractViolation(f"expectation has imaginary part {val.imag:.2e}")
    return float(val.real)


def pure_expectation(state: PureState, obs: PauliString) -> float:
    """Expectation on a pure state (norm-conditioned)."""
    amps = state.amps
    val = np.vdot(amps, obs.embedded(state.dims) @ amps)
    nrm = np.vdot(amps, amps).real
    if nrm <= ATOL_TRACE:
        raise UndefinedExpectationError("expectation undefined for zero state")
    val = val / nrm
    if abs(val.imag) > ATOL_ALGEBRA:
        raise ContractViolation(f"expectation has imaginary part {val.imag:.2e}")
    return float(val.real)
