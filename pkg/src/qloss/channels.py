"""Completely-positive map machinery: Kraus application, detection branch
maps, Choi conversion, and the per-qubit depolarizing imperfection model.

Choi convention
---------------
For a qubit map E the Choi matrix is

    Choi(E) = (1/2) * sum_{i,j in {0,1}}  E(|i><j|)  (x)  |i><j|

written in the basis {|00>, |01>, |10>, |11>} with the *first* factor the
channel output and the second the input.  The identity channel then has
trace 1.  Channel outputs outside the computational subspace are folded
into the recorded qubit by readout indistinguishability: dark levels
(|2>, |H0>) record as |1>, |H1> records as |0>, and coherences to those
levels are dropped (see :func:`record_kraus`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .qudit import DensityOperator, Level, _check_support, _embed_apply_vec, truncated_pauli
from .tolerances import ATOL_ALGEBRA, ATOL_PSD, ATOL_TRACE

CHOI_BASIS_ORDER = "output,input;|00>,|01>,|10>,|11>"


class DegenerateRateError(ZeroDivisionError):
    """The false-positive mixing weight p = 0/0 is undefined."""


@dataclass(frozen=True)
class Channel:
    """A CP map given by Kraus operators; may be trace-decreasing."""

    kraus: tuple[np.ndarray, ...]
    input_dim: int
    output_dim: int

    @classmethod
    def from_kraus(cls, kraus: Sequence[np.ndarray]) -> "Channel":
        mats = tuple(np.asarray(k, dtype=complex) for k in kraus)
        out_d, in_d = mats[0].shape
        for k in mats:
            if k.shape != (out_d, in_d):
                raise ValueError("Kraus operators must share one shape")
        ch = cls(mats, in_d, out_d)
        ch.validate()
        return ch

    def ks_sum(self) -> np.ndarray:
        """sum_k K^dagger K."""
        acc = np.zeros((self.input_dim, self.input_dim), dtype=complex)
        for k in self.kraus:
            acc += k.conj().T @ k
        return acc

    def validate(self) -> None:
        evals = np.linalg.eigvalsh(self.ks_sum())
        if evals.max() > 1.0 + ATOL_PSD:
            raise ValueError(f"channel increases trace (max eigenvalue {evals.max():.6f})")

    def is_trace_preserving(self) -> bool:
        return bool(np.max(np.abs(self.ks_sum() - np.eye(self.input_dim))) < ATOL_ALGEBRA)

    def apply(self, rho: np.ndarray) -> np.ndarray:
        out = np.zeros((self.output_dim, self.output_dim), dtype=complex)
        for k in self.kraus:
            out += k @ rho @ k.conj().T
        return out


def identity_channel(dim: int = 2) -> Channel:
    return Channel.from_kraus([np.eye(dim)])


def zero_channel(dim: int = 2) -> Channel:
    return Channel((np.zeros((dim, dim), dtype=complex),), dim, dim)


def branch_maps(phi: float) -> tuple[Channel, Channel]:
    """The two single-ion maps selected by the loss-detection ancilla outcome.

    Outcome 0 (no loss) applies |1><1| + cos(phi/2)|0><0|; outcome 1 (loss)
    applies sin(phi/2)|2><0|.  Together they are trace-preserving on the
    computational subspace.
    """
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    e0 = np.zeros((3, 3), dtype=complex)
    e0[0, 0] = c
    e0[1, 1] = 1.0
    e1 = np.zeros((3, 3), dtype=complex)
    e1[2, 0] = s
    return Channel((e0,), 3, 3), Channel((e1,), 3, 3)


def record_kraus(dims: int) -> list[np.ndarray]:
    """Readout-boundary map onto the recorded qubit (dims -> 2).

    Bright levels record as |0>, dark levels as |1>; coherences between the
    computational subspace and other levels are unobservable and dropped.
    """
    keep = np.zeros((2, dims), dtype=complex)
    keep[0, Level.L0] = 1.0
    keep[1, Level.L1] = 1.0
    ks = [keep]
    dark = np.zeros((2, dims), dtype=complex)
    dark[1, Level.L2] = 1.0
    ks.append(dark)
    if dims == 5:
        h0 = np.zeros((2, dims), dtype=complex)
        h0[1, Level.H0] = 1.0
        h1 = np.zeros((2, dims), dtype=complex)
        h1[0, Level.H1] = 1.0
        ks.extend([h0, h1])
    return ks


def record_qubit(rho: np.ndarray) -> np.ndarray:
    """Apply the readout-boundary map to a single-ion operator (3x3 or 5x5 -> 2x2)."""
    dims = rho.shape[0]
    if dims == 2:
        return np.asarray(rho, dtype=complex)
    out = np.zeros((2, 2), dtype=complex)
    for k in record_kraus(dims):
        out += k @ rho @ k.conj().T
    return out


@dataclass
class ChoiMatrix:
    """d_in*d_out square PSD representation of a (possibly trace-decreasing) map."""

    matrix: np.ndarray
    basis_order: str = CHOI_BASIS_ORDER

    def __post_init__(self) -> None:
        self.matrix = np.asarray(self.matrix, dtype=complex)

    def validate(self) -> None:
        dev = np.max(np.abs(self.matrix - self.matrix.conj().T))
        if dev > ATOL_ALGEBRA:
            raise ValueError(f"Choi matrix not Hermitian (deviation {dev:.2e})")
        evals = np.linalg.eigvalsh(self.matrix)
        if evals.min() < -ATOL_PSD:
            raise ValueError(f"Choi matrix not PSD (min eigenvalue {evals.min():.2e})")

    def trace(self) -> float:
        return float(np.real(np.trace(self.matrix)))


def channel_to_choi(ch: Channel) -> ChoiMatrix:
    """Choi matrix of the qubit restriction of ``ch`` (output (x) input order).

    Inputs are restricted to the computational subspace; outputs are folded
    through the readout-boundary map, so e.g. an output on the loss level
    lands in the |1><1| (x) |0><0| cell.
    """
    if ch.input_dim not in (2, 3, 5):
        raise ValueError(f"unsupported input dimension {ch.input_dim}")
    inject = np.zeros((ch.input_dim, 2), dtype=complex)
    inject[Level.L0, 0] = 1.0
    inject[Level.L1, 1] = 1.0
    choi = np.zeros((4, 4), dtype=complex)
    basis = np.eye(2, dtype=complex)
    for i in range(2):
        for j in range(2):
            e_ij = np.outer(basis[i], basis[j])
            out = ch.apply(inject @ e_ij @ inject.conj().T)
            out2 = record_qubit(out) if ch.output_dim != 2 else out
            choi += 0.5 * np.kron(out2, e_ij)
    return ChoiMatrix(choi)


def choi_to_kraus(choi: ChoiMatrix, tol: float = 1e-12) -> Channel:
    """Extract Kraus operators from a qubit Choi matrix (inverse of the above)."""
    evals, evecs = np.linalg.eigh(choi.matrix)
    ks = []
    for lam, vec in zip(evals, evecs.T):
        if lam < -ATOL_PSD:
            raise ValueError(f"Choi matrix not PSD (eigenvalue {lam:.2e})")
        if lam > tol:
            # vec indexes (output, input) pairs row-major
            ks.append(math.sqrt(2.0 * lam) * vec.reshape(2, 2))
    if not ks:
        return zero_channel(2)
    return Channel(tuple(ks), 2, 2)


def apply_channel(rho: DensityOperator, ch: Channel, support: Sequence[int]) -> DensityOperator:
    """rho -> sum_k K rho K^dagger with the Kraus operators embedded on ``support``."""
    sup = _check_support(support, rho.n_ions)
    side = rho.dims ** len(sup)
    if ch.input_dim != side or ch.output_dim != side:
        raise ValueError(f"channel dimension {ch.input_dim} does not match support size {side}")
    d = rho.dims**rho.n_ions
    acc = np.zeros((d, d), dtype=complex)
    for k in ch.kraus:
        acc += rho.apply_operator(k, sup).mat
    return DensityOperator(rho.n_ions, rho.dims, acc)


# ---------------------------------------------------------------------------
# imperfection model


@dataclass(frozen=True)
class NoiseModel:
    """Depolarizing imperfection model for the loss-detection unit.

    ``p_qnd`` is the false-positive rate of the detection unit; the mixing
    weight applied to the reconstructed loss-branch state is
    p = p_qnd / (p_qnd + 0.5 sin^2(phi/2)).
    """

    p_qnd: float = 0.0
    mode: str = "off"  # "off" | "depolarizing_per_qubit"
    apply_to_no_loss: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.p_qnd <= 1.0:
            raise ValueError(f"p_qnd must be in [0, 1], got {self.p_qnd}")
        if self.mode not in ("off", "depolarizing_per_qubit"):
            raise ValueError(f"unknown noise mode {self.mode!r}")

    @property
    def enabled(self) -> bool:
        return self.mode != "off" and self.p_qnd > 0.0


def mixing_probability(phi: float, p_qnd: float) -> float:
    """False-positive weight p = p_qnd / (p_qnd + 0.5 sin^2(phi/2))."""
    loss = 0.5 * math.sin(phi / 2) ** 2
    denom = p_qnd + loss
    if denom <= 0.0:
        raise DegenerateRateError("p undefined: p_qnd = 0 and phi = 0")
    return p_qnd / denom


def depolarize_one(rho: DensityOperator, qubit: int) -> DensityOperator:
    """Fully depolarize one ion's computational marginal; other ions untouched.

    Equals the 1/4-weighted four-Pauli sum with each Pauli extended as the
    identity on non-computational levels, so leaked population is a fixed
    point of the map.
    """
    d = rho.dims
    acc = np.zeros_like(rho.mat)
    for letter in "IXYZ":
        m = truncated_pauli(letter, d)
        if letter != "I":
            # unitary extension: identity on the non-computational levels
            m = m + (np.eye(d) - truncated_pauli("X", d) @ truncated_pauli("X", d))
        acc += 0.25 * rho.apply_operator(m, (qubit,)).mat
    return DensityOperator(rho.n_ions, rho.dims, acc)


def qnd_noise_mixture(rho: DensityOperator, phi: float, model: NoiseModel,
                      qubits: Sequence[int] | None = None) -> DensityOperator:
    """rho -> (p/3) sum_k M_k(rho) + (1-p) rho over the surviving code qubits."""
    if model.mode == "off":
        return rho
    p = mixing_probability(phi, model.p_qnd)
    if p == 0.0:
        return rho
    qs = tuple(qubits) if qubits is not None else tuple(range(rho.n_ions))
    acc = (1.0 - p) * rho.mat
    for q in qs:
        acc = acc + (p / len(qs)) * depolarize_one(rho, q).mat
    out = DensityOperator(rho.n_ions, rho.dims, acc)
    if abs(out.trace() - rho.trace()) > ATOL_TRACE:  # pragma: no cover - safety net
        raise AssertionError("noise mixture changed the trace")
    return out
