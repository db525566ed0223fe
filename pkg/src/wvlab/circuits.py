"""Passive linear-optical circuits and their compilation to mode-amplitude matrices.

Conventions (used consistently by the compiler, DSL, and Fock evolution):

* beam splitter on ``(mode_a, mode_b)`` acts on amplitudes as the 2x2 block
  ``[[cos(theta), -exp(-i*phi)*sin(theta)], [exp(i*phi)*sin(theta), cos(theta)]]``
* a phase shifter multiplies one mode amplitude by ``exp(i*phi)``
* ``Loss(mode, eta)`` is realized as a beam splitter of angle ``arccos(sqrt(eta))``
  coupling the mode to a fresh vacuum ancilla appended at the end of the mode list

Mode indices are 0-based.  A ``Circuit`` is split by the probe marker into a
pre-probe stage and a post-probe stage; weak coupling to the probe happens
between the two.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np

from .errors import (
    DecompositionFailed,
    DimensionMismatch,
    InvalidModeIndex,
    LossNotExpanded,
)

UNITARITY_TOL = 1e-12


def _check_finite(name: str, value: float) -> None:
    if not math.isfinite(value):
        raise ValueError(f"{name} must be finite, got {value!r}")


@dataclass(frozen=True)
class BeamSplitter:
    """Two-mode coupler with mixing angle ``theta`` in [0, pi/2] and phase ``phi``."""

    mode_a: int
    mode_b: int
    theta: float
    phi: float

    def __post_init__(self):
        if self.mode_a < 0 or self.mode_b < 0:
            raise InvalidModeIndex(f"beam splitter modes must be >= 0, got {self.mode_a}, {self.mode_b}")
        if self.mode_a == self.mode_b:
            raise InvalidModeIndex(f"beam splitter modes must be distinct, got {self.mode_a} twice")
        _check_finite("theta", self.theta)
        _check_finite("phi", self.phi)
        if not 0.0 <= self.theta <= math.pi / 2:
            raise ValueError(f"theta must lie in [0, pi/2], got {self.theta}")


@dataclass(frozen=True)
class PhaseShifter:
    """Single-mode phase ``exp(i*phi)``."""

    mode: int
    phi: float

    def __post_init__(self):
        if self.mode < 0:
            raise InvalidModeIndex(f"phase shifter mode must be >= 0, got {self.mode}")
        _check_finite("phi", self.phi)


@dataclass(frozen=True)
class Loss:
    """Intensity transmission ``eta`` in [0, 1]; expanded to a beam splitter before use."""

    mode: int
    eta: float

    def __post_init__(self):
        if self.mode < 0:
            raise InvalidModeIndex(f"loss mode must be >= 0, got {self.mode}")
        _check_finite("eta", self.eta)
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError(f"eta must lie in [0, 1], got {self.eta}")


CircuitElement = Union[BeamSplitter, PhaseShifter, Loss]


def _element_modes(element: CircuitElement) -> tuple:
    if isinstance(element, BeamSplitter):
        return (element.mode_a, element.mode_b)
    return (element.mode,)


@dataclass(frozen=True)
class Circuit:
    """A staged circuit: elements before the probe marker, elements after, and
    the designated input, probed, and detected modes.

    ``probe_modes`` is the set of modes whose total photon number is the weakly
    measured observable.
    """

    n_modes: int
    pre_probe: tuple
    post_probe: tuple
    input_mode: int
    probe_modes: frozenset
    detect_mode: int

    def __post_init__(self):
        object.__setattr__(self, "pre_probe", tuple(self.pre_probe))
        object.__setattr__(self, "post_probe", tuple(self.post_probe))
        object.__setattr__(self, "probe_modes", frozenset(self.probe_modes))
        if self.n_modes < 1:
            raise ValueError(f"n_modes must be >= 1, got {self.n_modes}")
        for name, mode in (("input_mode", self.input_mode), ("detect_mode", self.detect_mode)):
            if not 0 <= mode < self.n_modes:
                raise InvalidModeIndex(f"{name}={mode} out of range for {self.n_modes} modes")
        if not self.probe_modes:
            raise InvalidModeIndex("probe_modes must be non-empty")
        for mode in self.probe_modes:
            if not 0 <= mode < self.n_modes:
                raise InvalidModeIndex(f"probe mode {mode} out of range for {self.n_modes} modes")
        for element in self.pre_probe + self.post_probe:
            for mode in _element_modes(element):
                if mode >= self.n_modes:
                    raise InvalidModeIndex(
                        f"element {element!r} references mode {mode}, but circuit has {self.n_modes} modes"
                    )

    @property
    def elements(self) -> tuple:
        return self.pre_probe + self.post_probe

    @property
    def is_loss_free(self) -> bool:
        return not any(isinstance(e, Loss) for e in self.elements)


def beam_splitter_block(theta: float, phi: float) -> np.ndarray:
    """The 2x2 beam-splitter matrix in the fixed convention."""
    c, s = math.cos(theta), math.sin(theta)
    return np.array(
        [[c, -np.exp(-1j * phi) * s], [np.exp(1j * phi) * s, c]],
        dtype=complex,
    )


def element_matrix(element: CircuitElement, n_modes: int) -> np.ndarray:
    """Embed one loss-free element into an ``n_modes`` x ``n_modes`` unitary."""
    if isinstance(element, Loss):
        raise LossNotExpanded(f"cannot compile {element!r}; call expand_loss first")
    for mode in _element_modes(element):
        if mode >= n_modes:
            raise InvalidModeIndex(f"{element!r} references mode {mode} in a {n_modes}-mode stage")
    m = np.eye(n_modes, dtype=complex)
    if isinstance(element, BeamSplitter):
        a, b = element.mode_a, element.mode_b
        block = beam_splitter_block(element.theta, element.phi)
        m[a, a], m[a, b] = block[0, 0], block[0, 1]
        m[b, a], m[b, b] = block[1, 0], block[1, 1]
    else:
        m[element.mode, element.mode] = np.exp(1j * element.phi)
    return m


def compile_stage(elements, n_modes: int) -> np.ndarray:
    """Ordered product of element matrices (first element applied first).

    The result is unitary to within :data:`UNITARITY_TOL` for any stage the
    package constructs; this is asserted before returning.
    """
    total = np.eye(n_modes, dtype=complex)
    for element in elements:
        total = element_matrix(element, n_modes) @ total
    defect = unitarity_defect(total)
    if defect > UNITARITY_TOL:
        raise ArithmeticError(f"compiled stage lost unitarity: defect {defect:.3e}")
    return total


def unitarity_defect(matrix: np.ndarray) -> float:
    """max |M^dag M - I|."""
    matrix = np.asarray(matrix)
    gram = matrix.conj().T @ matrix
    return float(np.max(np.abs(gram - np.eye(matrix.shape[0]))))


@lru_cache(maxsize=512)
def stage_matrices(circuit: Circuit) -> tuple:
    """(M1, M2): compiled pre-probe and post-probe stage matrices (read-only)."""
    m1 = compile_stage(circuit.pre_probe, circuit.n_modes)
    m2 = compile_stage(circuit.post_probe, circuit.n_modes)
    m1.flags.writeable = False
    m2.flags.writeable = False
    return m1, m2


def total_matrix(circuit: Circuit) -> np.ndarray:
    """Full input-to-output mode matrix M2 @ M1."""
    m1, m2 = stage_matrices(circuit)
    return m2 @ m1


def expand_loss(circuit: Circuit) -> Circuit:
    """Replace every ``Loss(mode, eta)`` by a beam splitter to a fresh vacuum
    ancilla with ``cos(theta)**2 == eta``; ancillas are appended after the
    declared modes in order of appearance (pre-probe stage first).

    Idempotent: a loss-free circuit is returned unchanged.
    """
    if circuit.is_loss_free:
        return circuit
    next_ancilla = circuit.n_modes

    def convert(elements):
        nonlocal next_ancilla
        out = []
        for element in elements:
            if isinstance(element, Loss):
                theta = math.acos(math.sqrt(element.eta))
                out.append(BeamSplitter(element.mode, next_ancilla, theta, 0.0))
                next_ancilla += 1
            else:
                out.append(element)
        return tuple(out)

    pre = convert(circuit.pre_probe)
    post = convert(circuit.post_probe)
    return Circuit(
        n_modes=next_ancilla,
        pre_probe=pre,
        post_probe=post,
        input_mode=circuit.input_mode,
        probe_modes=circuit.probe_modes,
        detect_mode=circuit.detect_mode,
    )


def apply_to_coherent(matrix: np.ndarray, amplitudes) -> np.ndarray:
    """Transform coherent amplitudes: a -> M a (preserves total mean photon number)."""
    matrix = np.asarray(matrix, dtype=complex)
    a = np.asarray(amplitudes, dtype=complex)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise DimensionMismatch(f"matrix must be square, got shape {matrix.shape}")
    if a.shape != (matrix.shape[1],):
        raise DimensionMismatch(f"amplitude vector shape {a.shape} does not match matrix {matrix.shape}")
    return matrix @ a


def transmittance(circuit: Circuit) -> float:
    """|(M2 M1)[detect, input]|^2: the input->detect intensity transmission."""
    if not circuit.is_loss_free:
        raise LossNotExpanded("transmittance requires a loss-expanded circuit")
    t = total_matrix(circuit)[circuit.detect_mode, circuit.input_mode]
    return float(abs(t) ** 2)


def inverse_elements(elements) -> tuple:
    """Element list realizing the inverse of the given stage.

    ``BeamSplitter(a, b, theta, phi)`` inverts to ``BeamSplitter(a, b, theta, phi + pi)``
    and a phase shifter to its negative; the order is reversed.
    """
    out = []
    for element in reversed(elements):
        if isinstance(element, BeamSplitter):
            phi = element.phi + math.pi
            phi = math.atan2(math.sin(phi), math.cos(phi))  # wrap to (-pi, pi]
            out.append(BeamSplitter(element.mode_a, element.mode_b, element.theta, phi))
        elif isinstance(element, PhaseShifter):
            out.append(PhaseShifter(element.mode, -element.phi))
        else:
            raise LossNotExpanded(f"cannot invert {element!r}")
    return tuple(out)


def decompose_unitary(matrix: np.ndarray, tol: float = 1e-10) -> tuple:
    """Decompose a unitary mode matrix into beam splitters and phase shifters.

    Uses adjacent-row Givens nulling: a sequence of beam splitters E_k..E_1
    reduces M to a diagonal of phases D, so M = E_1^dag .. E_k^dag D and the
    returned element list is [phases(D), E_k^dag, ..., E_1^dag].  The
    recomposed product is checked against the input to ``tol`` (max entry
    difference); failure raises :class:`DecompositionFailed`.
    """
    m = np.array(matrix, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DecompositionFailed(f"matrix must be square, got shape {m.shape}")
    n = m.shape[0]
    rotations = []
    for col in range(n - 1):
        for row in range(n - 1, col, -1):
            x = m[row - 1, col]
            y = m[row, col]
            if abs(y) == 0.0:
                continue
            theta = math.atan2(abs(y), abs(x))
            phi = float(np.angle(-y * np.conj(x))) if abs(x) > 0.0 else 0.0
            bs = BeamSplitter(row - 1, row, theta, phi)
            m = element_matrix(bs, n) @ m
            rotations.append(bs)
    elements = [
        PhaseShifter(k, float(np.angle(m[k, k])))
        for k in range(n)
        if abs(np.angle(m[k, k])) > 0.0
    ]
    elements.extend(inverse_elements(tuple(rotations)))
    elements = tuple(elements)
    recomposed = compile_stage(elements, n) if elements else np.eye(n, dtype=complex)
    defect = float(np.max(np.abs(recomposed - np.asarray(matrix))))
    if defect > tol:
        raise DecompositionFailed(
            f"round-trip defect {defect:.3e} exceeds {tol:.1e}; input may not be unitary"
        )
    return elements
