"""The 1+4-qubit loss detection and correction program.

Register layout: ions 0..3 are the code qubits (qubit 1 of the minimal
surface-code patch is ion 0, the only ion probed for loss), ion 4 is the
readout ancilla.  The pipeline is

    encode -> controlled loss on ion 0 -> QND detection (ancilla readout,
    feed-forward) -> either verify the 4-qubit code (no-loss branch) or
    measure the shrunk stabilizer and update the Pauli frame (loss branch).

Both a sampled trajectory mode and an exact density mode are provided; the
density mode is the oracle for the trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from typing import Iterable, Sequence

import numpy as np

from .channels import NoiseModel, qnd_noise_mixture
from .gates import (GateKind, GateOp, Register, addressed_z, collective_rotation,
                    compile_gate, hide, loss_rotation, ms_gate, unhide)
from .qudit import (DensityOperator, Level, PauliString, PureState, expectation,
                    make_state, measure_projective, partial_trace, pure_expectation)
from .tolerances import ATOL_ALGEBRA, ATOL_LEAK_GUARD, ATOL_TRACE

N_IONS = 5
ANCILLA = 4
CODE_QUBITS = (0, 1, 2, 3)
SURVIVING_QUBITS = (1, 2, 3)


class ProtocolError(RuntimeError):
    """The protocol was driven outside its state machine."""


# ---------------------------------------------------------------------------
# code definitions


@dataclass(frozen=True)
class CodeDefinition:
    """Stabilizer generators and logical operators of one encoding."""

    name: str
    qubits: tuple[int, ...]
    stabilizers: dict[str, PauliString]
    logicals: dict[str, PauliString]

    def validate(self) -> None:
        gens = list(self.stabilizers.values())
        for i, g in enumerate(gens):
            for h in gens[i + 1:]:
                if not g.commutes(h):
                    raise ValueError(f"generators {g} and {h} do not commute")
            for l in self.logicals.values():
                if not g.commutes(l):
                    raise ValueError(f"logical {l} does not commute with {g}")
        if self.logicals["TX"].commutes(self.logicals["TZ"]):
            raise ValueError("TX and TZ must anticommute")

    def all_observables(self) -> dict[str, PauliString]:
        return {**self.stabilizers, **self.logicals}


@lru_cache(maxsize=None)
def four_qubit_code(n_ions: int = N_IONS) -> CodeDefinition:
    """The one-plaquette patch: {Z1Z2, Z1Z3, X1X2X3X4} on ions 0..3."""
    p = lambda m: PauliString.from_map(n_ions, m)
    return CodeDefinition(
        name="four_qubit",
        qubits=(0, 1, 2, 3),
        stabilizers={
            "S1Z": p({0: "Z", 1: "Z"}),
            "S2Z": p({0: "Z", 2: "Z"}),
            "S1X": p({0: "X", 1: "X", 2: "X", 3: "X"}),
        },
        logicals={
            "TX": p({3: "X"}),
            "TZ": p({0: "Z", 3: "Z"}),
            # i TX TZ = Z on qubit 1, Y on qubit 4
            "TY": p({0: "Z", 3: "Y"}),
        },
    )


@lru_cache(maxsize=None)
def three_qubit_code(n_ions: int = N_IONS, qubits: tuple[int, ...] = SURVIVING_QUBITS
                     ) -> CodeDefinition:
    """The reconstructed code on the surviving qubits: {Z2Z3, X2X3X4}."""
    q1, q2, q3 = qubits
    p = lambda m: PauliString.from_map(n_ions, m)
    return CodeDefinition(
        name="three_qubit",
        qubits=qubits,
        stabilizers={
            "S1Z": p({q1: "Z", q2: "Z"}),
            "S1X": p({q1: "X", q2: "X", q3: "X"}),
        },
        logicals={
            "TX": p({q3: "X"}),
            "TZ": p({q1: "Z", q3: "Z"}),
            "TY": p({q1: "Z", q3: "Y"}),
        },
    )


# ---------------------------------------------------------------------------
# encoding


@dataclass(frozen=True)
class PrepSpec:
    """Logical superposition angle: cos(a/2)|0_L> + i sin(a/2)|1_L>."""

    alpha: float


def logical_target(alpha: float, n_ions: int = N_IONS, dims: int = 3) -> PureState:
    """Analytic 4-qubit logical state (ancilla in |0>)."""
    c, s = math.cos(alpha / 2), math.sin(alpha / 2)
    amps = np.zeros(dims**n_ions, dtype=complex)

    def at(levels):
        i = 0
        for l in levels:
            i = i * dims + l
        return i

    pad = [0] * (n_ions - 4)
    amps[at([0, 0, 0, 0] + pad)] = c / math.sqrt(2)
    amps[at([1, 1, 1, 1] + pad)] = c / math.sqrt(2)
    amps[at([0, 0, 0, 1] + pad)] = 1j * s / math.sqrt(2)
    amps[at([1, 1, 1, 0] + pad)] = 1j * s / math.sqrt(2)
    return PureState(n_ions, dims, amps)


def reconstructed_target(alpha: float, n_ions: int = 3, dims: int = 3,
                         qubits: tuple[int, ...] = (0, 1, 2)) -> PureState:
    """Analytic 3-qubit logical state after reconstruction."""
    c, s = math.cos(alpha / 2), math.sin(alpha / 2)
    amps = np.zeros(dims**n_ions, dtype=complex)
    q1, q2, q3 = qubits

    def at(mapping):
        levels = [0] * n_ions
        for ion, l in mapping.items():
            levels[ion] = l
        i = 0
        for l in levels:
            i = i * dims + l
        return i

    amps[at({})] = c / math.sqrt(2)
    amps[at({q1: 1, q2: 1, q3: 1})] = c / math.sqrt(2)
    amps[at({q3: 1})] = 1j * s / math.sqrt(2)
    amps[at({q1: 1, q2: 1})] = 1j * s / math.sqrt(2)
    return PureState(n_ions, dims, amps)


def encode_ops(alpha: float) -> list[GateOp]:
    """Toolbox realization of the encoding (MS + addressed Z + local X rotation)."""
    return [
        ms_gate(math.pi / 2, CODE_QUBITS),
        addressed_z(-math.pi / 2, 3),
        collective_rotation("X", -alpha, (3,)),
    ]


def encode(alpha: float, dims: int = 3) -> PureState:
    """Encode cos(a/2)|0_L> + i sin(a/2)|1_L> on ions 0-3; ancilla stays |0>."""
    reg = Register(make_state(N_IONS, dims, [0] * N_IONS))
    reg.run(encode_ops(alpha))
    return reg.state


def apply_loss(state: PureState, phi: float, ion: int = 0) -> PureState:
    op = loss_rotation(phi, ion)
    return _apply_op(state, op)


def _apply_op(state: PureState, op: GateOp) -> PureState:
    from .qudit import apply_unitary
    return apply_unitary(state, compile_gate(op, state.dims), op.support)


# ---------------------------------------------------------------------------
# QND detection


def detection_ops(probe: int = 0, ancilla: int = ANCILLA) -> list[GateOp]:
    """MS^X(pi) on (probe, ancilla) followed by the collective bit flip."""
    return [
        ms_gate(math.pi, (probe, ancilla)),
        collective_rotation("X", math.pi, (probe, ancilla)),
    ]


def _ancilla_guard(state: PureState, ancilla: int) -> None:
    pops = state.level_populations(ancilla)
    stray = pops[2:].sum()
    if stray > ATOL_LEAK_GUARD:
        raise ProtocolError(
            f"ancilla has population {stray:.2e} outside the computational subspace")


@dataclass
class DetectResult:
    branch: str               # "loss" | "no_loss"
    ancilla_outcome: int      # 1 -> loss
    state: PureState
    probability: float        # exact Born probability of this branch


def qnd_detect(state: PureState, rng: np.random.Generator | None = None,
               probe: int = 0, force_branch: str | None = None) -> DetectResult:
    """Run the detection unit and measure the ancilla.

    Ions other than the probed qubit and the ancilla must already be hidden
    (callers that use the plain 5-ion register can rely on the explicit
    two-ion gate supports instead, which is equivalent in the ideal engine).
    """
    reg = Register(state)
    reg.run(detection_ops(probe))
    _ancilla_guard(reg.state, ANCILLA)
    dark = set(range(state.dims)) - {0}
    force = None
    if force_branch is not None:
        force = 1 if force_branch == "loss" else 0
    outcome, post, prob = measure_projective(
        reg.state, ANCILLA, [{0}, dark], rng=rng, force_outcome=force)
    return DetectResult("loss" if outcome == 1 else "no_loss", outcome, post, prob)


def qnd_detect_density(rho: DensityOperator, probe: int = 0
                       ) -> tuple[float, DensityOperator, float, DensityOperator]:
    """Exact branch split: (p_loss, rho_loss, p_no_loss, rho_no_loss), renormalized."""
    for op in detection_ops(probe):
        rho = rho.apply_unitary(compile_gate(op, rho.dims), op.support)
    dark = set(range(rho.dims)) - {0}
    rho_nl = rho.project_levels(ANCILLA, {0})
    rho_l = rho.project_levels(ANCILLA, dark)
    p_nl, p_l = rho_nl.trace(), rho_l.trace()
    total = rho.trace()
    if abs(p_nl + p_l - total) > 1e-9:  # pragma: no cover - safety net
        raise ProtocolError("branch probabilities do not sum to the input trace")
    rho_l_n = rho_l.normalized() if p_l > ATOL_TRACE else rho_l
    rho_nl_n = rho_nl.normalized() if p_nl > ATOL_TRACE else rho_nl
    return p_l / total, rho_l_n, p_nl / total, rho_nl_n


# ---------------------------------------------------------------------------
# shrunk-stabilizer measurement and Pauli frame


def _cnot_ops(control: int, target: int) -> list[GateOp]:
    """CNOT compiled to the toolbox (verified against the exact matrix)."""
    ry = lambda th, ion: collective_rotation("Y", th, (ion,))
    rz = lambda th, ion: addressed_z(th, ion)
    return [
        ry(-math.pi / 2, target), rz(math.pi, target),
        ry(math.pi / 2, control), ry(math.pi / 2, target),
        ms_gate(math.pi / 2, (control, target)),
        ry(-math.pi / 2, control), ry(-math.pi / 2, target),
        rz(-math.pi / 2, control), rz(-math.pi / 2, target),
        ry(-math.pi / 2, target), rz(math.pi, target),
    ]


def shrunk_measurement_ops(qubits: tuple[int, ...] = SURVIVING_QUBITS,
                           ancilla: int = ANCILLA) -> list[GateOp]:
    """Gate list mapping the X2X3X4 syndrome onto the (reset) ancilla."""
    ops = [collective_rotation("Y", math.pi / 2, (ancilla,))]
    for q in qubits:
        ops.extend(_cnot_ops(ancilla, q))
    ops.append(collective_rotation("Y", -math.pi / 2, (ancilla,)))
    return ops


def shrunk_stabilizer(n_ions: int = N_IONS) -> PauliString:
    return PauliString.from_map(n_ions, {q: "X" for q in SURVIVING_QUBITS})


def measure_shrunk_stabilizer(state: PureState, mode: str = "exact",
                              rng: np.random.Generator | None = None,
                              force_outcome: int | None = None
                              ) -> tuple[int, PureState, float]:
    """Project onto an eigenspace of the shrunk stabilizer X2X3X4.

    The ancilla arrives in |1> (it flagged the loss) and leaves reset to |0>
    in both modes; exact and toolbox modes agree in outcome distribution and
    post states.  Returns (outcome +-1, post state, probability).
    """
    pops = state.level_populations(ANCILLA)
    if abs(pops[1] - 1.0) > 1e-9:
        raise ProtocolError("shrunk-stabilizer measurement requires the loss branch "
                            "(ancilla must be |1> after detection)")
    flip = collective_rotation("X", math.pi, (ANCILLA,))

    if mode == "exact":
        stab = shrunk_stabilizer().embedded(state.dims)
        plus = 0.5 * (state.amps + stab @ state.amps)
        minus = 0.5 * (state.amps - stab @ state.amps)
        p_plus = float(np.vdot(plus, plus).real / np.vdot(state.amps, state.amps).real)
        if force_outcome is not None:
            pick = 0 if force_outcome == +1 else 1
            if (p_plus if pick == 0 else 1 - p_plus) <= ATOL_TRACE:
                raise ProtocolError("deterministic request of zero-probability branch")
        else:
            if rng is None:
                raise ValueError("rng required unless force_outcome is given")
            pick = 0 if rng.random() < p_plus else 1
        amps = plus if pick == 0 else minus
        post = PureState(state.n_ions, state.dims, amps / np.linalg.norm(amps))
        post = _apply_op(post, flip)  # ancilla |1> -> |0| reset (feed-forward)
        return (+1 if pick == 0 else -1), post, (p_plus if pick == 0 else 1 - p_plus)

    if mode == "toolbox":
        reg = Register(_apply_op(state, flip))  # reset ancilla |1> -> |0>
        reg.run(shrunk_measurement_ops())
        dark = set(range(state.dims)) - {0}
        force = None if force_outcome is None else (0 if force_outcome == +1 else 1)
        bit, post, prob = measure_projective(reg.state, ANCILLA, [{0}, dark],
                                             rng=rng, force_outcome=force)
        if bit == 1:
            post = _apply_op(post, flip)  # feed-forward reset after a -1 readout
        return (+1 if bit == 0 else -1), post, prob

    raise ValueError(f"unknown mode {mode!r}")


@dataclass(frozen=True)
class PauliFrame:
    """Classical sign bookkeeping for the reconstructed code.

    A -1 outcome of the shrunk-stabilizer initialization is absorbed by
    redefining the Pauli basis; the equivalent active fix is a Z on the
    first surviving qubit, which flips only the shrunk X stabilizer.
    """

    sx_sign: int = 1

    def adjusted(self, name: str, value: float) -> float:
        return value * (self.sx_sign if name == "S1X" else 1)

    def correction(self, n_ions: int = N_IONS) -> PauliString | None:
        if self.sx_sign == 1:
            return None
        return PauliString.from_map(n_ions, {SURVIVING_QUBITS[0]: "Z"})


def frame_update(frame: PauliFrame, outcome: int) -> PauliFrame:
    if outcome not in (+1, -1):
        raise ValueError("outcome must be +1 or -1")
    return PauliFrame(frame.sx_sign * outcome)


def apply_frame_correction(state: PureState, frame: PauliFrame) -> PureState:
    corr = frame.correction(state.n_ions)
    if corr is None:
        return state
    z = compile_gate(addressed_z(math.pi, corr.support[0]), state.dims)
    # addressed_z(pi) = diag(e^{-i pi/2}, e^{+i pi/2}) = -i Z on the qubit block
    return PureState(state.n_ions, state.dims,
                     _apply_matrix(state, z, corr.support))


def _apply_matrix(state: PureState, mat: np.ndarray, support: tuple[int, ...]) -> np.ndarray:
    from .qudit import _embed_apply_vec
    return _embed_apply_vec(state.amps, mat, support, state.n_ions, state.dims)


# ---------------------------------------------------------------------------
# full protocol runs


def seed_for(master_seed: int, *key: int) -> np.random.Generator:
    """Deterministic per-task generator: SeedSequence((master, *key))."""
    return np.random.default_rng(np.random.SeedSequence((master_seed,) + key))


@dataclass
class RunRecord:
    """One trajectory shot of the full protocol."""

    shot: int
    alpha: float
    phi: float
    branch: str
    ancilla_outcome: int
    shrunk_outcome: int | None
    frame_sx: int
    observables: dict[str, float]
    seed_key: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)


@dataclass
class BranchSummary:
    probability: float
    observables: dict[str, float]
    fidelity: float


@dataclass
class ProtocolResult:
    alpha: float
    phi: float
    encoding: dict[str, float]
    no_loss: BranchSummary
    loss: BranchSummary
    records: list[RunRecord] = field(default_factory=list)
    rho_no_loss: DensityOperator | None = None
    rho_loss: DensityOperator | None = None

    def sampled_means(self, branch: str) -> dict[str, float]:
        recs = [r for r in self.records if r.branch == branch]
        if not recs:
            return {}
        keys = recs[0].observables.keys()
        return {k: float(np.mean([r.observables[k] for r in recs])) for k in keys}

    def branch_counts(self) -> dict[str, int]:
        out = {"loss": 0, "no_loss": 0}
        for r in self.records:
            out[r.branch] += 1
        return out


def _code_observables(rho: DensityOperator, code: CodeDefinition,
                      frame: PauliFrame | None = None) -> dict[str, float]:
    from .tomography import code_space_population
    out = {}
    for name, pauli in code.all_observables().items():
        val = expectation(rho, pauli)
        if frame is not None:
            val = frame.adjusted(name, val)
        out[name] = val
    out["P_CS"] = code_space_population(rho, code)
    return out


def _fidelity_with_pure(rho: DensityOperator, target: PureState) -> float:
    amps = target.amps
    return float(np.real(np.vdot(amps, rho.mat @ amps)) / rho.trace())


def analytic_run(alpha: float, phi: float, noise: NoiseModel | None = None
                 ) -> ProtocolResult:
    """Exact density-mode run; the oracle for trajectory mode."""
    noise = noise or NoiseModel()
    code4, code3 = four_qubit_code(), three_qubit_code()
    psi = encode(alpha)
    rho_enc = psi.to_density()
    encoding_obs = _code_observables(rho_enc, code4)
    encoding_obs["fidelity"] = _fidelity_with_pure(rho_enc, logical_target(alpha))

    lost = apply_loss(psi, phi).to_density()
    p_l, rho_l, p_nl, rho_nl = qnd_detect_density(lost)

    # no-loss branch
    if p_nl > ATOL_TRACE:
        if noise.enabled and noise.apply_to_no_loss:
            rho_nl = qnd_noise_mixture(rho_nl, phi, noise, CODE_QUBITS)
        nl_obs = _code_observables(rho_nl, code4)
        nl_fid = _fidelity_with_pure(rho_nl, logical_target(alpha))
    else:
        nl_obs, nl_fid = {}, float("nan")
    no_loss = BranchSummary(p_nl, nl_obs, nl_fid)

    # loss branch: shrunk-stabilizer measurement + frame correction, combined
    if p_l > ATOL_TRACE:
        stab = shrunk_stabilizer().embedded(rho_l.dims)
        d = rho_l.mat.shape[0]
        p_plus = 0.5 * (np.eye(d) + stab)
        p_minus = 0.5 * (np.eye(d) - stab)
        rho_plus = p_plus @ rho_l.mat @ p_plus
        rho_minus = p_minus @ rho_l.mat @ p_minus
        zfix = PauliString.from_map(N_IONS, {SURVIVING_QUBITS[0]: "Z"}).embedded(rho_l.dims)
        # frame update realized as the equivalent Z on the -1 branch
        combined = rho_plus + zfix @ rho_minus @ zfix.conj().T
        rho_rec = DensityOperator(N_IONS, rho_l.dims, combined).normalized()
        if noise.enabled:
            rho_rec = qnd_noise_mixture(rho_rec, phi, noise, SURVIVING_QUBITS)
        l_obs = _code_observables(rho_rec, code3)
        rec3 = partial_trace(rho_rec, SURVIVING_QUBITS)
        l_fid = _fidelity_with_pure(rec3, reconstructed_target(alpha))
    else:
        rho_rec = rho_l
        l_obs, l_fid = {}, float("nan")
    loss = BranchSummary(p_l, l_obs, l_fid)

    return ProtocolResult(alpha, phi, encoding_obs, no_loss, loss,
                          rho_no_loss=rho_nl if p_nl > ATOL_TRACE else None,
                          rho_loss=rho_rec if p_l > ATOL_TRACE else None)


def _sample_pm(state: PureState, pauli: PauliString, rng: np.random.Generator) -> int:
    val = pure_expectation(state, pauli)
    if val > 1 + ATOL_ALGEBRA or val < -1 - ATOL_ALGEBRA:  # pragma: no cover
        raise ProtocolError(f"invalid expectation {val}")
    return 1 if rng.random() < 0.5 * (1 + val) else -1


def _sample_projector(state: PureState, code: CodeDefinition,
                      rng: np.random.Generator) -> int:
    from .tomography import code_space_projector
    proj = code_space_projector(code, state.dims)
    p = float(np.real(np.vdot(state.amps, proj @ state.amps)))
    return 1 if rng.random() < p else 0


def _unravel_noise(state: PureState, phi: float, noise: NoiseModel,
                   qubits: tuple[int, ...], rng: np.random.Generator) -> PureState:
    """Trajectory unraveling of the depolarizing mixture."""
    from .channels import mixing_probability
    p = mixing_probability(phi, noise.p_qnd)
    if rng.random() >= p:
        return state
    qubit = qubits[rng.integers(len(qubits))]
    letter = "IXYZ"[rng.integers(4)]
    if letter == "I":
        return state
    pauli = PauliString.from_map(state.n_ions, {qubit: letter})
    d = state.dims
    from .qudit import truncated_pauli
    m = truncated_pauli(letter, d)
    m = m + (np.eye(d) - truncated_pauli("X", d) @ truncated_pauli("X", d))
    return PureState(state.n_ions, state.dims, _apply_matrix(state, m, (qubit,)))


def run_protocol(prep: PrepSpec | float, phi: float, shots: int = 0,
                 noise: NoiseModel | None = None, seed: int = 0,
                 shrunk_mode: str = "exact") -> ProtocolResult:
    """Analytic branch summaries plus (optionally) sampled trajectories.

    Every shot draws its generator from a pure function of (seed, shot), so
    results do not depend on execution order.
    """
    alpha = prep.alpha if isinstance(prep, PrepSpec) else float(prep)
    noise = noise or NoiseModel()
    result = analytic_run(alpha, phi, noise)
    if shots <= 0:
        return result

    code4, code3 = four_qubit_code(), three_qubit_code()
    psi0 = encode(alpha)
    target_nl = logical_target(alpha)
    for shot in range(shots):
        rng = seed_for(seed, shot)
        state = apply_loss(psi0.copy(), phi)
        det = qnd_detect(state, rng)
        frame = PauliFrame()
        shrunk: int | None = None
        if det.branch == "loss":
            shrunk, state, _ = measure_shrunk_stabilizer(det.state, shrunk_mode, rng)
            frame = frame_update(frame, shrunk)
            state = apply_frame_correction(state, frame)
            if noise.enabled:
                state = _unravel_noise(state, phi, noise, SURVIVING_QUBITS, rng)
            code = code3
        else:
            state = det.state
            if noise.enabled and noise.apply_to_no_loss:
                state = _unravel_noise(state, phi, noise, CODE_QUBITS, rng)
            code = code4
        obs: dict[str, float] = {}
        for name, pauli in code.all_observables().items():
            obs[name] = float(_sample_pm(state, pauli, rng))
        obs["P_CS"] = float(_sample_projector(state, code, rng))
        result.records.append(RunRecord(
            shot=shot, alpha=alpha, phi=phi, branch=det.branch,
            ancilla_outcome=det.ancilla_outcome, shrunk_outcome=shrunk,
            frame_sx=frame.sx_sign, observables=obs,
            seed_key=f"({seed},{shot})"))
    return result


def records_to_jsonl(records: Iterable[RunRecord]) -> str:
    return "".join(r.to_json() + "\n" for r in records)


# ---------------------------------------------------------------------------
# detection-efficiency sweep


#: default cycles per loss rate, following the experiment presets
SHOT_PRESETS = {0.1 * math.pi: 1000, 0.2 * math.pi: 600, 0.5 * math.pi: 200}


@dataclass
class SweepRow:
    phi: float
    direct_loss: float
    detected_loss: float
    false_positive_rate: float
    false_negative_rate: float
    shots: int


@dataclass
class SweepResult:
    rows: list[SweepRow]
    efficiency: float  # fraction of shots where detected == actually leaked


def _transfer_pulses(dims: int = 5) -> tuple[np.ndarray, np.ndarray]:
    """The two addressed hide pulses: |0> <-> |H0| and |1> <-> |H1| swaps."""
    p0 = np.eye(dims, dtype=complex)
    p0[Level.L0, Level.L0] = p0[Level.H0, Level.H0] = 0.0
    p0[Level.L0, Level.H0] = p0[Level.H0, Level.L0] = 1.0
    p1 = np.eye(dims, dtype=complex)
    p1[Level.L1, Level.L1] = p1[Level.H1, Level.H1] = 0.0
    p1[Level.L1, Level.H1] = p1[Level.H1, Level.L1] = 1.0
    return p0, p1


def _mask_shot(phi: float, n: int, spectators: Sequence[int], ancilla: int,
               addressing_error: float, rng: np.random.Generator) -> PureState:
    """Ideal-hiding shot: a hide whose either transfer pulse fails leaves the
    ion fully exposed to the collective detection gates."""
    state = make_state(n, 3, [0] * n)
    state = apply_loss(state, phi, ion=0)
    exposed = [i for i in spectators
               if addressing_error > 0
               and (rng.random() < addressing_error
                    or rng.random() < addressing_error)]
    visible = (0,) + tuple(exposed) + (ancilla,)
    reg = Register(state)
    reg.apply(ms_gate(math.pi, visible))
    reg.apply(collective_rotation("X", math.pi, visible))
    return reg.state


def _explicit_shot(phi: float, n: int, spectators: Sequence[int], ancilla: int,
                   addressing_error: float, rng: np.random.Generator) -> PureState:
    """Five-level shot: hide/unhide as two physical transfer pulses per ion,
    each skipped independently with the addressing-error probability."""
    from .qudit import apply_unitary
    state = make_state(n, 5, [0] * n)
    state = apply_loss(state, phi, ion=0)
    p0, p1 = _transfer_pulses()

    def pulse_pair(st: PureState) -> PureState:
        for ion in spectators:
            if not (addressing_error > 0 and rng.random() < addressing_error):
                st = apply_unitary(st, p0, (ion,))
            if not (addressing_error > 0 and rng.random() < addressing_error):
                st = apply_unitary(st, p1, (ion,))
        return st

    state = pulse_pair(state)
    reg = Register(state)
    reg.apply(ms_gate(math.pi, tuple(range(n))))
    reg.apply(collective_rotation("X", math.pi, tuple(range(n))))
    return pulse_pair(reg.state)  # unhide before the final readout


def detection_sweep(phi_grid: Sequence[float], shots: int, seed: int = 0,
                    register: int = 2, addressing_error: float = 0.0,
                    analytic: bool = False, hiding: str = "mask") -> SweepResult:
    """Reproduce the detection-efficiency comparison of the 2- and 5-ion setups.

    The probed qubit starts in |0>; "direct" loss is its dark (D-manifold)
    population read out after the detection unit, "detected" is the ancilla
    flag.  False positives/negatives are counted against the simulator's
    ground truth (the loss-level occupation of the probed qubit).  ``hiding``
    picks the ideal support-mask model or the explicit five-level pulses.
    """
    if register not in (2, 5):
        raise ValueError("register must be 2 or 5 ions")
    if shots <= 0 and not analytic:
        raise ValueError("shots must be positive in sampled mode")
    if hiding not in ("mask", "explicit"):
        raise ValueError(f"unknown hiding mode {hiding!r}")
    n = 2 if register == 2 else 5
    ancilla = n - 1
    spectators = tuple(range(1, n - 1))
    rows: list[SweepRow] = []
    agree = 0
    total = 0

    for pi_idx, phi in enumerate(phi_grid):
        if analytic:
            p_leak = math.sin(phi / 2) ** 2
            rows.append(SweepRow(phi, p_leak, p_leak, 0.0, 0.0, 0))
            continue
        n_direct = n_detect = n_fp = n_fn = n_true = 0
        for shot in range(shots):
            rng = seed_for(seed, pi_idx, shot)
            if hiding == "explicit" and n > 2:
                state = _explicit_shot(phi, n, spectators, ancilla,
                                       addressing_error, rng)
            else:
                state = _mask_shot(phi, n, spectators, ancilla,
                                   addressing_error, rng)
            dims = state.dims
            dark = {Level.L1, Level.L2} | ({Level.H0} if dims == 5 else set())
            bright = {Level.L0} | ({Level.H1} if dims == 5 else set())
            out_a, state, _ = measure_projective(state, ancilla,
                                                 [bright, dark], rng)
            lvl, state, _ = measure_projective(
                state, 0, [{l} for l in map(Level, range(dims))], rng)
            detected = out_a == 1
            direct_dark = Level(lvl) in dark
            true_leak = lvl == Level.L2
            n_detect += detected
            n_direct += direct_dark
            n_true += true_leak
            n_fp += detected and not true_leak
            n_fn += (not detected) and true_leak
            agree += detected == true_leak
            total += 1
        fp_rate = n_fp / max(shots - n_true, 1)
        fn_rate = n_fn / max(n_true, 1)
        rows.append(SweepRow(phi, n_direct / shots, n_detect / shots,
                             fp_rate, fn_rate, shots))
    efficiency = agree / total if total else 1.0
    return SweepResult(rows, efficiency)


# ---------------------------------------------------------------------------
# single-qubit detection process (for process tomography)

PROCESS_INPUTS: dict[str, np.ndarray] = {
    "0": np.array([1, 0], dtype=complex),
    "1": np.array([0, 1], dtype=complex),
    "+": np.array([1, 1], dtype=complex) / math.sqrt(2),
    "+i": np.array([1, 1j], dtype=complex) / math.sqrt(2),
}


def detection_process(phi: float, input_label: str, ancilla_outcome: int,
                      register: int = 2) -> tuple[float, DensityOperator]:
    """Exact branch probability and output state of the probed qubit.

    Prepares the given input on the probed qubit (spectators and ancilla in
    |0>, spectators hidden), runs loss + detection, post-selects the ancilla
    outcome and traces down to the probed qubit (3-level operator).
    """
    if register not in (2, 5):
        raise ValueError("register must be 2 or 5 ions")
    n = 2 if register == 2 else 5
    ancilla = n - 1
    vec = PROCESS_INPUTS[input_label]
    amps = np.zeros(3**n, dtype=complex)
    stride = 3 ** (n - 1)
    amps[0] = vec[0]
    amps[stride] = vec[1]
    state = PureState(n, 3, amps)
    state = apply_loss(state, phi, ion=0)
    reg = Register(state)
    for i in range(1, n - 1):
        reg.apply(hide(i))
    for op in detection_ops(probe=0, ancilla=ancilla):
        reg.apply(op)
    _ancilla_guard(reg.state, ancilla)
    rho = reg.state.to_density()
    branch = rho.project_levels(ancilla, {ancilla_outcome} if ancilla_outcome == 0
                                else {1, 2})
    prob = branch.trace()
    if prob <= ATOL_TRACE:
        return 0.0, DensityOperator(1, 3, np.zeros((3, 3), dtype=complex))
    reduced = partial_trace(DensityOperator(n, 3, branch.mat), (0,))
    return prob, reduced
