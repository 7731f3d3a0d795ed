"""Ion-trap gate toolbox compiled to exact matrices on the level space.

All entangling and rotation generators use the truncated Pauli convention:
the generator acts on the computational subspace of each supported ion and
annihilates the loss and hiding levels, so population outside {|0>,|1>}
simply drops out of the dynamics while the compiled matrix stays unitary
(leakage sectors map to themselves).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .qudit import Level, PureState, apply_unitary, truncated_pauli
from .tolerances import ATOL_ALGEBRA


class GateKind(str, Enum):
    MS_X = "MS_X"
    COLLECTIVE_R = "COLLECTIVE_R"
    ADDRESSED_Z = "ADDRESSED_Z"
    LOSS_ROT = "LOSS_ROT"
    HIDE = "HIDE"
    UNHIDE = "UNHIDE"


_SINGLE_ION_KINDS = {GateKind.ADDRESSED_Z, GateKind.LOSS_ROT, GateKind.HIDE, GateKind.UNHIDE}


@dataclass(frozen=True)
class GateOp:
    """Symbolic gate description; compiled to a matrix on demand."""

    kind: GateKind
    angle: float
    support: tuple[int, ...]
    axis: str | None = None  # X or Y, COLLECTIVE_R only

    def __post_init__(self) -> None:
        if len(set(self.support)) != len(self.support):
            raise ValueError(f"duplicate ions in support {self.support}")
        if self.kind == GateKind.MS_X and len(self.support) < 2:
            raise ValueError("MS gate needs at least 2 ions")
        if self.kind in _SINGLE_ION_KINDS and len(self.support) != 1:
            raise ValueError(f"{self.kind.value} acts on exactly 1 ion")
        if self.kind == GateKind.COLLECTIVE_R:
            if self.axis not in ("X", "Y"):
                raise ValueError("collective rotation axis must be X or Y")
        elif self.axis is not None:
            raise ValueError("axis only applies to COLLECTIVE_R")


def loss_rotation(phi: float, ion: int) -> GateOp:
    """Coherent |0> <-> |2> transfer by angle phi."""
    return GateOp(GateKind.LOSS_ROT, float(phi), (ion,))


def ms_gate(theta: float, support: Sequence[int]) -> GateOp:
    """Collective XX entangler exp(-i theta/2 sum_{j<l} X_j X_l), truncated."""
    return GateOp(GateKind.MS_X, float(theta), tuple(support))


def collective_rotation(axis: str, theta: float, support: Sequence[int]) -> GateOp:
    return GateOp(GateKind.COLLECTIVE_R, float(theta), tuple(support), axis=axis)


def addressed_z(theta: float, ion: int) -> GateOp:
    return GateOp(GateKind.ADDRESSED_Z, float(theta), (ion,))


def hide(ion: int) -> GateOp:
    return GateOp(GateKind.HIDE, 0.0, (ion,))


def unhide(ion: int) -> GateOp:
    return GateOp(GateKind.UNHIDE, 0.0, (ion,))


# ---------------------------------------------------------------------------
# compilation

_COMPILE_CACHE: dict[tuple, np.ndarray] = {}


def _single_rotation(axis: str, theta: float, dims: int) -> np.ndarray:
    """exp(-i theta/2 sigma_bar): rotation on {|0>,|1>}, identity elsewhere."""
    sig = truncated_pauli(axis, dims)
    proj = sig @ sig  # computational projector
    return (np.eye(dims, dtype=complex)
            + (math.cos(theta / 2) - 1.0) * proj
            - 1j * math.sin(theta / 2) * sig)


def _loss_rotation_matrix(phi: float, dims: int) -> np.ndarray:
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    m = np.eye(dims, dtype=complex)
    m[0, 0] = c
    m[2, 2] = c
    m[0, 2] = s
    m[2, 0] = -s
    return m


def _hide_matrix(dims: int) -> np.ndarray:
    if dims == 3:
        # ideal mode: hiding is a support-mask toggle handled by the executor
        return np.eye(3, dtype=complex)
    m = np.zeros((5, 5), dtype=complex)
    m[Level.H0, Level.L0] = m[Level.L0, Level.H0] = 1.0
    m[Level.H1, Level.L1] = m[Level.L1, Level.H1] = 1.0
    m[Level.L2, Level.L2] = 1.0
    return m


def _ms_matrix(theta: float, k: int, dims: int) -> np.ndarray:
    """Product of commuting pair factors exp(-i theta/2 X_j X_l)."""
    d = dims**k
    eye_d = np.eye(dims, dtype=complex)
    x = truncated_pauli("X", dims)

    def embed_pair(j: int, l: int) -> np.ndarray:
        mat = np.array([[1.0 + 0j]])
        for i in range(k):
            mat = np.kron(mat, x if i in (j, l) else eye_d)
        return mat

    c, s = math.cos(theta / 2), math.sin(theta / 2)
    u = np.eye(d, dtype=complex)
    for j in range(k):
        for l in range(j + 1, k):
            m = embed_pair(j, l)
            factor = np.eye(d, dtype=complex) + (c - 1.0) * (m @ m) - 1j * s * m
            u = factor @ u
    return u


def compile_gate(op: GateOp, dims: int) -> np.ndarray:
    """Compile to a unitary on the support ions; deterministic and cached.

    The cache key uses only (kind, axis, angle, support size, dims): every
    gate family here is symmetric under permutations of its support.
    """
    key = (op.kind, op.axis, op.angle, len(op.support), dims)
    cached = _COMPILE_CACHE.get(key)
    if cached is not None:
        return cached

    if op.kind == GateKind.MS_X:
        mat = _ms_matrix(op.angle, len(op.support), dims)
    elif op.kind == GateKind.COLLECTIVE_R:
        single = _single_rotation(op.axis, op.angle, dims)
        mat = np.array([[1.0 + 0j]])
        for _ in op.support:
            mat = np.kron(mat, single)
    elif op.kind == GateKind.ADDRESSED_Z:
        mat = np.eye(dims, dtype=complex)
        mat[0, 0] = np.exp(-1j * op.angle / 2)
        mat[1, 1] = np.exp(+1j * op.angle / 2)
    elif op.kind == GateKind.LOSS_ROT:
        mat = _loss_rotation_matrix(op.angle, dims)
    elif op.kind in (GateKind.HIDE, GateKind.UNHIDE):
        mat = _hide_matrix(dims)
    else:  # pragma: no cover
        raise ValueError(f"unknown gate kind {op.kind}")

    dev = np.max(np.abs(mat.conj().T @ mat - np.eye(mat.shape[0])))
    if dev > ATOL_ALGEBRA:  # pragma: no cover - safety net
        raise AssertionError(f"compiled gate not unitary (deviation {dev:.2e})")
    mat.setflags(write=False)
    _COMPILE_CACHE[key] = mat
    return mat


class HiddenStateError(RuntimeError):
    """Hide/unhide called against the current hiding state machine."""


class Register:
    """A pure state plus the ideal-mode hiding mask.

    In dims=3 (ideal) mode, HIDE removes an ion from the support of all
    subsequent collective gates; in dims=5 (explicit) mode the hide pulses
    physically shelve the population and the mask stays empty.
    """

    def __init__(self, state: PureState):
        self.state = state
        self.hidden: set[int] = set()

    @property
    def dims(self) -> int:
        return self.state.dims

    def apply(self, op: GateOp) -> None:
        if op.kind == GateKind.HIDE and self.dims == 3:
            ion = op.support[0]
            if ion in self.hidden:
                raise HiddenStateError(f"ion {ion} is already hidden")
            self.hidden.add(ion)
            return
        if op.kind == GateKind.UNHIDE and self.dims == 3:
            ion = op.support[0]
            if ion not in self.hidden:
                raise HiddenStateError(f"ion {ion} is not hidden")
            self.hidden.discard(ion)
            return
        support = op.support
        if op.kind in (GateKind.MS_X, GateKind.COLLECTIVE_R):
            support = tuple(i for i in op.support if i not in self.hidden)
            if op.kind == GateKind.MS_X:
                # commuting pair factors: exact and cheap for wide supports
                pair = compile_gate(GateOp(GateKind.MS_X, op.angle, (0, 1)), self.dims)
                for a in range(len(support)):
                    for b in range(a + 1, len(support)):
                        self.state = apply_unitary(self.state, pair,
                                                   (support[a], support[b]))
                return
            single = _single_rotation(op.axis, op.angle, self.dims)
            for ion in support:
                self.state = apply_unitary(self.state, single, (ion,))
            return
        if set(support) & self.hidden:
            raise HiddenStateError(f"gate {op.kind.value} addresses a hidden ion")
        self.state = apply_unitary(self.state, compile_gate(op, self.dims), support)

    def run(self, ops: Iterable[GateOp]) -> None:
        for op in ops:
            self.apply(op)


# ---------------------------------------------------------------------------
# textual program format: one gate per line, "KIND angle ion[,ion...]",
# angle in units of pi with 12 significant digits.

_KIND_TOKENS = {
    GateKind.MS_X: "MS_X",
    GateKind.ADDRESSED_Z: "ADDRESSED_Z",
    GateKind.LOSS_ROT: "LOSS_ROT",
    GateKind.HIDE: "HIDE",
    GateKind.UNHIDE: "UNHIDE",
}


def format_program(ops: Sequence[GateOp]) -> str:
    lines = []
    for op in ops:
        if op.kind == GateKind.COLLECTIVE_R:
            token = f"R_{op.axis}"
        else:
            token = _KIND_TOKENS[op.kind]
        ions = ",".join(str(i) for i in op.support)
        lines.append(f"{token} {op.angle / math.pi:.12g} {ions}")
    return "\n".join(lines) + ("\n" if lines else "")


def parse_program(text: str) -> list[GateOp]:
    ops: list[GateOp] = []
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"line {ln}: expected 'KIND angle ions', got {raw!r}")
        token, angle_s, ions_s = parts
        angle = float(angle_s) * math.pi
        support = tuple(int(i) for i in ions_s.split(","))
        if token in ("R_X", "R_Y"):
            ops.append(GateOp(GateKind.COLLECTIVE_R, angle, support, axis=token[-1]))
        else:
            kind = {v: k for k, v in _KIND_TOKENS.items()}.get(token)
            if kind is None:
                raise ValueError(f"line {ln}: unknown gate kind {token!r}")
            ops.append(GateOp(kind, angle, support))
    return ops
