"""Simulated state and process tomography with linear inversion.

Measurement model: before any tomography setting is evaluated, each
tomographed ion is folded through the readout-boundary map (dark levels
record as |1>, bright as |0>, coherences to non-computational levels are
dropped).  The recorded register is then an ordinary qubit register; a
setting assigns one of {X, Y, Z} to every qubit and yields counts over the
2^n bright/dark outcome strings.  Linear inversion averages every Pauli
word over all compatible settings, so leaked population contaminates
Z-basis counts exactly as a dark readout would, while X/Y words see it as
an unpolarized coin.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .channels import ChoiMatrix, record_kraus
from .qudit import DensityOperator, PauliString, UndefinedExpectationError
from .tolerances import ATOL_ALGEBRA, ATOL_PSD, ATOL_TRACE

PAULI_2 = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

#: +1/-1 eigenprojectors per measurement basis, indexed [letter][bit]
_PROJECTORS = {
    "X": (0.5 * np.array([[1, 1], [1, 1]], dtype=complex),
          0.5 * np.array([[1, -1], [-1, 1]], dtype=complex)),
    "Y": (0.5 * np.array([[1, -1j], [1j, 1]], dtype=complex),
          0.5 * np.array([[1, 1j], [-1j, 1]], dtype=complex)),
    "Z": (np.diag([1.0 + 0j, 0.0]), np.diag([0.0, 1.0 + 0j])),
}

Setting = tuple[str, ...]
CountsTable = Mapping[Setting, np.ndarray]


class EmptyBranchError(RuntimeError):
    """Post-selected on a branch that never occurs."""


def settings(n_qubits: int) -> list[Setting]:
    """All 3^n per-qubit basis assignments, enumerated once."""
    return list(itertools.product("XYZ", repeat=n_qubits))


def record_density(rho: DensityOperator, qubits: Sequence[int]) -> np.ndarray:
    """Recorded qubit-register operator (2^k) for the given ions.

    Non-tomographed ions are traced out first; each remaining ion is folded
    through the readout-boundary map.
    """
    from .qudit import partial_trace
    reduced = partial_trace(rho, tuple(qubits))
    mat = reduced.mat
    dims, k = reduced.dims, reduced.n_ions
    for pos in range(k):
        new_side = 2 ** (pos + 1) * dims ** (k - pos - 1)
        acc = np.zeros((new_side, new_side), dtype=complex)
        left = 2**pos
        right = dims ** (k - pos - 1)
        for kr in record_kraus(dims):
            op = np.kron(np.kron(np.eye(left), kr), np.eye(right))
            acc += op @ mat @ op.conj().T
        mat = acc
    return mat


def setting_probabilities(rho2: np.ndarray, setting: Setting) -> np.ndarray:
    """Outcome probabilities over the 2^n bitstrings for one setting."""
    n = len(setting)
    probs = np.empty(2**n)
    for outcome in range(2**n):
        proj = np.array([[1.0 + 0j]])
        for q in range(n):
            bit = (outcome >> (n - 1 - q)) & 1
            proj = np.kron(proj, _PROJECTORS[setting[q]][bit])
        probs[outcome] = np.real(np.trace(rho2 @ proj))
    return np.clip(probs, 0.0, None)


def _word_estimate(word: Setting, counts: CountsTable,
                   attempted: Mapping[Setting, float] | None) -> float:
    """<W> averaged over every compatible setting."""
    n = len(word)
    fixed = [q for q in range(n) if word[q] != "I"]
    free = [q for q in range(n) if word[q] == "I"]
    total, n_compat = 0.0, 0
    for fill in itertools.product("XYZ", repeat=len(free)):
        setting = list(word)
        for q, letter in zip(free, fill):
            setting[q] = letter
        setting_t = tuple(setting)
        vec = counts[setting_t]
        norm = attempted[setting_t] if attempted is not None else vec.sum()
        if norm <= 0:
            raise ValueError(f"setting {setting_t} has no counts")
        acc = 0.0
        for outcome, c in enumerate(vec):
            if c == 0:
                continue
            sign = 1
            for q in fixed:
                if (outcome >> (n - 1 - q)) & 1:
                    sign = -sign
            acc += sign * c
        total += acc / norm
        n_compat += 1
    return total / n_compat


def invert_counts(counts: CountsTable,
                  attempted: Mapping[Setting, float] | None = None) -> np.ndarray:
    """Linear-inversion estimate rho_hat = 2^-n sum_W <W> W.

    With ``attempted`` given, counts may undercount (post-selection) and the
    estimate is trace-decreasing accordingly.  Estimates are returned raw
    and may be non-PSD at finite shots.
    """
    n = len(next(iter(counts)))
    rho = np.zeros((2**n, 2**n), dtype=complex)
    for word in itertools.product("IXYZ", repeat=n):
        est = _word_estimate(word, counts, attempted)
        mat = np.array([[1.0 + 0j]])
        for letter in word:
            mat = np.kron(mat, PAULI_2[letter])
        rho += est * mat
    return rho / 2**n


def sample_counts(rho2: np.ndarray, shots_per_setting: int,
                  seed: int = 0) -> dict[Setting, np.ndarray]:
    """Multinomial counts for every setting (seeded, per-setting substreams)."""
    from .protocol import seed_for
    n = int(round(math.log2(rho2.shape[0])))
    tr = float(np.real(np.trace(rho2)))
    out: dict[Setting, np.ndarray] = {}
    for idx, setting in enumerate(settings(n)):
        probs = setting_probabilities(rho2 / tr, setting)
        probs = probs / probs.sum()
        rng = seed_for(seed, idx)
        out[setting] = rng.multinomial(shots_per_setting, probs).astype(float)
    return out


def state_tomography(rho: DensityOperator, qubits: Sequence[int] | None = None,
                     shots_per_setting: int = 0, seed: int = 0
                     ) -> tuple[np.ndarray, dict[Setting, np.ndarray]]:
    """Reconstruct the recorded register state by linear inversion.

    ``shots_per_setting`` of 0 selects exact-probability mode, which
    reproduces the true computational-subspace density operator; finite
    shots sample each setting multinomially.  Returns (estimate, counts).
    """
    qs = tuple(qubits) if qubits is not None else tuple(range(rho.n_ions))
    rho2 = record_density(rho.normalized(), qs)
    if shots_per_setting < 0:
        raise ValueError("shots_per_setting must be >= 0")
    if shots_per_setting == 0:
        counts = {s: setting_probabilities(rho2, s) for s in settings(len(qs))}
    else:
        counts = sample_counts(rho2, shots_per_setting, seed)
    return invert_counts(counts), counts


def resample_errors(counts: CountsTable,
                    statistic: Callable[[CountsTable], Mapping[str, float]],
                    iterations: int = 100, seed: int = 0) -> dict[str, float]:
    """Multinomial-resampling standard deviations of derived observables.

    Each setting's counts are redrawn from a multinomial with its own total;
    ``statistic`` maps a counts table to named observables.  Deterministic
    for a fixed (counts, seed).
    """
    from .protocol import seed_for
    totals = {}
    for s, vec in counts.items():
        tot = float(np.asarray(vec).sum())
        if tot <= 0:
            raise ValueError(f"setting {s} has all-zero counts")
        totals[s] = tot
    samples: dict[str, list[float]] = {}
    keys = sorted(counts.keys())
    for it in range(iterations):
        rng = seed_for(seed, it)
        fake: dict[Setting, np.ndarray] = {}
        for s in keys:
            vec = np.asarray(counts[s], dtype=float)
            p = vec / totals[s]
            fake[s] = rng.multinomial(int(round(totals[s])), p).astype(float)
        stats = statistic(fake)
        for name, val in stats.items():
            samples.setdefault(name, []).append(float(val))
    return {name: float(np.std(vals)) for name, vals in samples.items()}


# ---------------------------------------------------------------------------
# fidelities and code-space population


def _sqrt_eigenvalues(evals: np.ndarray) -> np.ndarray:
    # kill float noise near zero: sqrt would amplify it to ~1e-8
    evals = np.clip(evals, 0.0, None)
    cutoff = evals.max() * 1e-14 if evals.size else 0.0
    evals[evals < cutoff] = 0.0
    return np.sqrt(evals)


def _psd_sqrt(mat: np.ndarray) -> np.ndarray:
    evals, evecs = np.linalg.eigh(mat)
    if evals.min() < -ATOL_PSD:
        raise ValueError(f"matrix not PSD (min eigenvalue {evals.min():.2e})")
    return (evecs * _sqrt_eigenvalues(evals)) @ evecs.conj().T


def clip_to_psd(mat: np.ndarray) -> np.ndarray:
    """Eigenvalue-clipped PSD projection (used before fidelity on raw estimates)."""
    herm = 0.5 * (mat + mat.conj().T)
    evals, evecs = np.linalg.eigh(herm)
    evals = np.clip(evals, 0.0, None)
    return (evecs * evals) @ evecs.conj().T


def fidelity(rho: np.ndarray | DensityOperator, sigma: np.ndarray | DensityOperator,
             clip: bool = False) -> float:
    """Uhlmann state fidelity (Tr sqrt(sqrt(rho) sigma sqrt(rho)))^2 on unit traces."""
    a = rho.mat if isinstance(rho, DensityOperator) else np.asarray(rho, dtype=complex)
    b = sigma.mat if isinstance(sigma, DensityOperator) else np.asarray(sigma, dtype=complex)
    if a.shape != b.shape:
        raise ValueError("dimension mismatch")
    if clip:
        a, b = clip_to_psd(a), clip_to_psd(b)
    a = a / np.real(np.trace(a))
    b = b / np.real(np.trace(b))
    ra = _psd_sqrt(a)
    inner = ra @ b @ ra
    return float(np.sum(_sqrt_eigenvalues(np.linalg.eigvalsh(inner))) ** 2)


def process_fidelity(choi_a: ChoiMatrix | np.ndarray,
                     choi_b: ChoiMatrix | np.ndarray) -> float:
    """Overlap Tr(AB)/(Tr A Tr B); exact fidelity for rank-1 ideal targets."""
    a = choi_a.matrix if isinstance(choi_a, ChoiMatrix) else np.asarray(choi_a)
    b = choi_b.matrix if isinstance(choi_b, ChoiMatrix) else np.asarray(choi_b)
    num = float(np.real(np.trace(a @ b)))
    den = float(np.real(np.trace(a)) * np.real(np.trace(b)))
    if den <= 0:
        raise ValueError("process fidelity undefined for zero-trace input")
    return num / den


_PROJECTOR_CACHE: dict[tuple, np.ndarray] = {}


def code_space_projector(code, dims: int) -> np.ndarray:
    """Product of (1+S)/2 over the code's generators (validated to commute)."""
    gens = tuple(code.stabilizers.values())
    key = (gens, dims)
    cached = _PROJECTOR_CACHE.get(key)
    if cached is not None:
        return cached
    for i, g in enumerate(gens):
        for h in gens[i + 1:]:
            if not g.commutes(h):
                raise ValueError("code generators do not commute")
    d = dims ** gens[0].n_ions
    proj = np.eye(d, dtype=complex)
    for g in gens:
        proj = proj @ (0.5 * (np.eye(d) + g.embedded(dims)))
    proj.setflags(write=False)
    _PROJECTOR_CACHE[key] = proj
    return proj


def code_space_population(rho: DensityOperator, code) -> float:
    """Tr(rho P_CS)/Tr(rho) with P_CS the product of (1+S)/2 projectors."""
    proj = code_space_projector(code, rho.dims)
    tr = rho.trace()
    if tr <= ATOL_TRACE:
        raise UndefinedExpectationError("P_CS undefined for zero-trace operator")
    val = float(np.real(np.trace(rho.mat @ proj))) / tr
    if not -ATOL_PSD <= val <= 1.0 + ATOL_PSD:
        raise ValueError(f"P_CS {val} outside [0, 1]")
    return min(max(val, 0.0), 1.0)


# ---------------------------------------------------------------------------
# generalized single-qubit process tomography


def qubit_code_space_population(rho2: np.ndarray, code) -> float:
    """P_CS from a recorded (qubit-space) tomography estimate."""
    gens = [g.restricted(code.qubits) for g in code.stabilizers.values()]
    d = rho2.shape[0]
    proj = np.eye(d, dtype=complex)
    for g in gens:
        mat = np.array([[complex(g.sign)]])
        for letter in g.letters:
            mat = np.kron(mat, PAULI_2[letter])
        proj = proj @ (0.5 * (np.eye(d) + mat))
    tr = float(np.real(np.trace(rho2)))
    return float(np.real(np.trace(rho2 @ proj))) / tr


_PROCESS_INPUT_ORDER = ("0", "1", "+", "+i")


def process_tomography(phi: float, post_select: int, shots: int = 0, seed: int = 0,
                       register: int = 2) -> tuple[ChoiMatrix, dict]:
    """Reconstruct the Choi matrix of the loss-detection process on qubit 1.

    Inputs {|0>, |1>, |+>, |+i>} are prepared, the detection unit runs, the
    ancilla outcome is post-selected, and the surviving fraction is tracked
    so the reconstruction is trace-non-increasing.  ``shots`` = 0 selects
    exact-probability mode, which reproduces the ideal branch Choi matrices.
    """
    from .protocol import detection_process, seed_for
    est: dict[str, np.ndarray] = {}
    details: dict = {"phi": phi, "post_select": post_select, "inputs": {}}
    total_weight = 0.0
    for idx, label in enumerate(_PROCESS_INPUT_ORDER):
        prob, rho_q = detection_process(phi, label, post_select, register)
        total_weight += prob
        details["inputs"][label] = {"branch_probability": prob}
        if prob <= ATOL_TRACE:
            est[label] = np.zeros((2, 2), dtype=complex)
            continue
        rec = record_density(rho_q, (0,))  # 2x2, trace = branch probability
        if shots == 0:
            est[label] = rec
        else:
            norm = rec / prob
            counts: dict[Setting, np.ndarray] = {}
            attempted: dict[Setting, float] = {}
            for s_idx, s in enumerate(settings(1)):
                rng = seed_for(seed, idx, s_idx)
                retained = int(rng.binomial(shots, prob))
                probs = setting_probabilities(norm, s)
                probs = np.clip(probs, 0, None)
                probs = probs / probs.sum()
                counts[s] = rng.multinomial(retained, probs).astype(float)
                attempted[s] = float(shots)
            est[label] = invert_counts(counts, attempted)
            details["inputs"][label]["counts"] = {"".join(k): v.tolist()
                                                  for k, v in counts.items()}
    if total_weight <= ATOL_TRACE:
        raise EmptyBranchError(
            f"post-selected branch {post_select} is empty for every input")

    e00, e11 = est["0"], est["1"]
    s = e00 + e11
    e01 = 0.5 * ((2 * est["+"] - s) + 1j * (2 * est["+i"] - s))
    e10 = e01.conj().T
    basis = np.eye(2, dtype=complex)
    choi = np.zeros((4, 4), dtype=complex)
    for (i, j), block in (((0, 0), e00), ((0, 1), e01), ((1, 0), e10), ((1, 1), e11)):
        choi += 0.5 * np.kron(block, np.outer(basis[i], basis[j]))
    return ChoiMatrix(choi), details


def ideal_branch_choi(phi: float, branch: int) -> ChoiMatrix:
    """Analytic Choi matrices of the two detection branch maps."""
    c, s = math.cos(phi / 2), math.sin(phi / 2)
    if branch == 0:
        m = 0.5 * np.array([
            [c**2, 0, 0, c],
            [0, 0, 0, 0],
            [0, 0, 0, 0],
            [c, 0, 0, 1],
        ], dtype=complex)
    elif branch == 1:
        m = np.zeros((4, 4), dtype=complex)
        m[2, 2] = 0.5 * s**2
    else:
        raise ValueError("branch must be 0 or 1")
    return ChoiMatrix(m)


# ---------------------------------------------------------------------------
# table report (encoding / no-loss / loss sections per logical input state)


TABLE_COLUMNS = ("P_CS", "S1X", "S1Z", "S2Z", "TX", "TY", "TZ")
ALPHA_LABELS = {0.0: "0L", math.pi: "1L", math.pi / 2: "+iL"}
DEFAULT_SHOT_PRESETS = ((0.1 * math.pi, 1000), (0.2 * math.pi, 600),
                        (0.5 * math.pi, 200))


@dataclass
class TableRow:
    section: str           # "encoding" | "no_loss" | "loss"
    alpha: float
    phi: float | None
    values: dict[str, float]
    errors: dict[str, float] | None = None


def _branch_row_values(obs: dict[str, float]) -> dict[str, float]:
    return {col: obs.get(col, float("nan")) for col in TABLE_COLUMNS}


def table_report(alphas: Sequence[float] = (0.0, math.pi, math.pi / 2),
                 phis: Sequence[float] | None = None,
                 noise=None, seed: int = 0, sampled: bool = False,
                 shots_per_setting: Mapping[float, int] | None = None
                 ) -> list[TableRow]:
    """Observable tables for each logical input state and loss rate.

    In analytic mode values are the exact engine predictions.  In sampled
    mode each branch state is reconstructed by finite-shot state tomography
    (cycle presets per loss rate) and errors come from 100 multinomial
    resampling iterations.
    """
    from .protocol import analytic_run, four_qubit_code, three_qubit_code

    presets = dict(DEFAULT_SHOT_PRESETS)
    if shots_per_setting:
        presets.update(shots_per_setting)
    if phis is None:
        phis = [p for p, _ in DEFAULT_SHOT_PRESETS]

    code4, code3 = four_qubit_code(), three_qubit_code()
    rows: list[TableRow] = []
    for a_idx, alpha in enumerate(alphas):
        base = analytic_run(alpha, phis[0], noise)
        rows.append(TableRow("encoding", alpha, None,
                             _branch_row_values(base.encoding)))
        for p_idx, phi in enumerate(phis):
            res = analytic_run(alpha, phi, noise)
            for section, summary, code, qubits in (
                    ("no_loss", res.no_loss, code4, code4.qubits),
                    ("loss", res.loss, code3, code3.qubits)):
                if not summary.observables:
                    continue
                if not sampled:
                    rows.append(TableRow(section, alpha, phi,
                                         _branch_row_values(summary.observables)))
                    continue
                shots = presets.get(phi, 200)
                rho = res.rho_no_loss if section == "no_loss" else res.rho_loss
                sub_seed = ((seed * 1000 + a_idx) * 100 + p_idx) * 10 + \
                    (0 if section == "no_loss" else 1)
                est, counts = state_tomography(
                    rho, qubits, shots_per_setting=shots, seed=sub_seed)
                vals = _tomography_row(est, code, qubits)
                stds = resample_errors(
                    counts, lambda c: _tomography_row(invert_counts(c), code, qubits),
                    iterations=100, seed=seed)
                rows.append(TableRow(section, alpha, phi, vals, stds))
    return rows


def _tomography_row(rho2: np.ndarray, code, qubits) -> dict[str, float]:
    vals: dict[str, float] = {}
    for name, pauli in code.all_observables().items():
        word = pauli.restricted(qubits)
        mat = np.array([[complex(word.sign)]])
        for letter in word.letters:
            mat = np.kron(mat, PAULI_2[letter])
        tr = float(np.real(np.trace(rho2)))
        vals[name] = float(np.real(np.trace(rho2 @ mat))) / tr
    vals["P_CS"] = qubit_code_space_population(rho2, code)
    return {col: vals.get(col, float("nan")) for col in TABLE_COLUMNS}
