"""Brute-force oracle: truncated multimode Fock-space states, exact
number-conserving evolution, and post-selected weak values evaluated directly
as inner products.

The basis keeps every occupation with total photon number up to ``cutoff`` in
graded lexicographic order (grade = total photons, ascending occupation tuples
within a grade).  Beam splitters act exactly within each total-photon sector,
so the evolution itself introduces no truncation error; only coherent-state
preparation has a tail, which is tracked explicitly and never silently
renormalized.

The sector unitaries are obtained by lifting the 2x2 beam-splitter generator:
the sector-N generator is a Hermitian tridiagonal whose eigensystem depends on
N alone, so one real symmetric eigendecomposition per N is cached and reused
for every angle via phase gauging and eigenvalue scaling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np

from .circuits import (
    BeamSplitter,
    Circuit,
    Loss,
    PhaseShifter,
    decompose_unitary,
    inverse_elements,
    stage_matrices,
    total_matrix,
)
from .errors import (
    DimensionMismatch,
    LossNotExpanded,
    NotFactorizable,
    PostSelectionTooRare,
    SizeLimitExceeded,
    TailTooLarge,
)
from .weakvalues import (
    CLICK,
    DEFAULT_P_MIN,
    NO_CLICK,
    NONE,
    Coherent,
    Fock,
    SinglePhoton,
)

MAX_BASIS_SIZE = 2_000_000

DEFAULT_TAIL_TOL = 1e-12


# ---------------------------------------------------------------------------
# basis
# ---------------------------------------------------------------------------


class FockBasis:
    """All occupations of ``n_modes`` modes with total photons <= ``cutoff``.

    ``occupations`` is a ``(size, n_modes)`` integer array in graded
    lexicographic order; ``index_of`` maps an occupation tuple back to its row.
    """

    def __init__(self, n_modes: int, cutoff: int, occupations: np.ndarray):
        self.n_modes = n_modes
        self.cutoff = cutoff
        self.occupations = occupations
        self.size = occupations.shape[0]
        self._index = None
        self._pair_layouts = {}

    def index_of(self, occupation) -> int:
        if self._index is None:
            self._index = {tuple(row): i for i, row in enumerate(self.occupations.tolist())}
        return self._index[tuple(occupation)]

    def total_photons(self) -> np.ndarray:
        return self.occupations.sum(axis=1)

    def pair_layout(self, a: int, b: int):
        """Permutation and per-sector offsets grouping states that differ only
        in how ``N = n_a + n_b`` photons split between modes ``a`` and ``b``.

        After applying the permutation, block ``offsets[N]:offsets[N+1]``
        reshapes to ``(groups, N+1)`` with ``n_a`` ascending along each row.
        """
        key = (a, b)
        layout = self._pair_layouts.get(key)
        if layout is None:
            occ = self.occupations
            pair_total = occ[:, a] + occ[:, b]
            rest = np.delete(occ, [a, b], axis=1).astype(np.int64)
            radix = np.int64(self.cutoff + 1) ** np.arange(rest.shape[1], dtype=np.int64)
            rest_key = rest @ radix
            perm = np.lexsort((occ[:, a], rest_key, pair_total))
            counts = np.bincount(pair_total, minlength=self.cutoff + 1)
            offsets = np.concatenate(([0], np.cumsum(counts)))
            layout = (perm.astype(np.intp), offsets)
            self._pair_layouts[key] = layout
        return layout


def _occupation_rows(n_modes: int, cutoff: int):
    occ = [0] * n_modes

    def rec(mode, remaining):
        if mode == n_modes - 1:
            occ[mode] = remaining
            yield tuple(occ)
            return
        for k in range(remaining + 1):
            occ[mode] = k
            yield from rec(mode + 1, remaining - k)
        occ[mode] = 0

    for total in range(cutoff + 1):
        yield from rec(0, total)


@lru_cache(maxsize=64)
def _cached_basis(n_modes: int, cutoff: int) -> FockBasis:
    rows = np.array(list(_occupation_rows(n_modes, cutoff)), dtype=np.int64)
    rows = rows.reshape(-1, n_modes)  # keeps shape for n_modes=1
    return FockBasis(n_modes, cutoff, rows)


def enumerate_basis(n_modes: int, cutoff: int, max_size: int = MAX_BASIS_SIZE) -> FockBasis:
    """Complete, duplicate-free, graded-lex enumeration; size C(cutoff+n_modes, n_modes)."""
    if n_modes < 1 or cutoff < 0:
        raise ValueError(f"need n_modes >= 1 and cutoff >= 0, got {n_modes}, {cutoff}")
    size = math.comb(cutoff + n_modes, n_modes)
    if size > max_size:
        raise SizeLimitExceeded(
            f"basis of {n_modes} modes at cutoff {cutoff} has {size} states (limit {max_size})"
        )
    return _cached_basis(n_modes, cutoff)


def default_cutoff(mean_photons: float) -> int:
    """Cutoff rule for coherent inputs: ceil(nbar + 10 sqrt(nbar + 1)), at least 4.

    Keeps the Poisson tail far below 1e-12 for nbar <= 9.
    """
    return max(4, math.ceil(mean_photons + 10.0 * math.sqrt(mean_photons + 1.0)))


# ---------------------------------------------------------------------------
# states
# ---------------------------------------------------------------------------


@dataclass
class FockState:
    """Amplitudes over a :class:`FockBasis`, plus the discarded probability mass."""

    basis: FockBasis
    amplitudes: np.ndarray
    truncation_tail: float = 0.0

    def norm_sq(self) -> float:
        return float(np.real(np.vdot(self.amplitudes, self.amplitudes)))

    def inner(self, other: "FockState") -> complex:
        return complex(np.vdot(self.amplitudes, other.amplitudes))

    def copy(self) -> "FockState":
        return FockState(self.basis, self.amplitudes.copy(), self.truncation_tail)


def prepare_coherent(basis: FockBasis, amplitudes, tail_tol: float = DEFAULT_TAIL_TOL) -> FockState:
    """Multimode coherent state, un-normalized truncation kept explicit.

    The amplitude of occupation (n_1, ..., n_M) is
    ``exp(-|a|^2/2) * prod_j a_j^{n_j} / sqrt(n_j!)``; the reported
    ``truncation_tail`` is ``1 - ||amplitudes||^2``.  Raises
    :class:`TailTooLarge` if the tail exceeds ``tail_tol``.
    """
    a = np.asarray(amplitudes, dtype=complex)
    if a.shape != (basis.n_modes,):
        raise DimensionMismatch(f"expected {basis.n_modes} amplitudes, got shape {a.shape}")
    nbar = float(np.sum(np.abs(a) ** 2))
    table = np.zeros((basis.n_modes, basis.cutoff + 1), dtype=complex)
    table[:, 0] = 1.0
    for n in range(1, basis.cutoff + 1):
        table[:, n] = table[:, n - 1] * a / math.sqrt(n)
    amps = np.full(basis.size, math.exp(-nbar / 2.0), dtype=complex)
    for j in range(basis.n_modes):
        amps *= table[j, basis.occupations[:, j]]
    tail = max(0.0, 1.0 - float(np.real(np.vdot(amps, amps))))
    if tail > tail_tol:
        raise TailTooLarge(
            f"coherent tail {tail:.3e} exceeds {tail_tol:.1e}; "
            f"raise the cutoff (got {basis.cutoff} for nbar={nbar:.3g})"
        )
    return FockState(basis, amps, tail)


def prepare_single_photon(basis: FockBasis, mode: int) -> FockState:
    """One photon in ``mode``, vacuum elsewhere (exact at any cutoff >= 1)."""
    if basis.cutoff < 1:
        raise ValueError("cutoff must be >= 1 for a single-photon state")
    amps = np.zeros(basis.size, dtype=complex)
    occ = [0] * basis.n_modes
    occ[mode] = 1
    amps[basis.index_of(occ)] = 1.0
    return FockState(basis, amps, 0.0)


def fock_times_coherent(
    basis: FockBasis, mode: int, m: int, rest_amplitudes, tail_tol: float = 1e-9
) -> FockState:
    """Product state |m> at ``mode`` times a coherent state on the remaining modes."""
    rest = np.asarray(rest_amplitudes, dtype=complex)
    if rest.shape != (basis.n_modes - 1,):
        raise DimensionMismatch(f"expected {basis.n_modes - 1} rest amplitudes, got {rest.shape}")
    full = np.zeros(basis.n_modes, dtype=complex)
    others = [k for k in range(basis.n_modes) if k != mode]
    full[others] = rest
    nbar = float(np.sum(np.abs(rest) ** 2))
    table = np.zeros((basis.n_modes, basis.cutoff + 1), dtype=complex)
    table[:, 0] = 1.0
    for n in range(1, basis.cutoff + 1):
        table[:, n] = table[:, n - 1] * full / math.sqrt(n)
    amps = np.full(basis.size, math.exp(-nbar / 2.0), dtype=complex)
    for j in others:
        amps *= table[j, basis.occupations[:, j]]
    amps *= basis.occupations[:, mode] == m
    tail = max(0.0, 1.0 - float(np.real(np.vdot(amps, amps))))
    if tail > tail_tol:
        raise TailTooLarge(f"product-state tail {tail:.3e} exceeds {tail_tol:.1e}")
    return FockState(basis, amps, tail)


# ---------------------------------------------------------------------------
# evolution
# ---------------------------------------------------------------------------


@lru_cache(maxsize=128)
def _sector_eigensystem(n_total: int):
    """Eigensystem of the angle-free sector generator (real symmetric tridiagonal)."""
    off = np.sqrt(np.arange(1, n_total + 1, dtype=float) * np.arange(n_total, 0, -1, dtype=float))
    h = np.zeros((n_total + 1, n_total + 1))
    idx = np.arange(n_total)
    h[idx + 1, idx] = off
    h[idx, idx + 1] = off
    w, v = np.linalg.eigh(h)
    w.flags.writeable = False
    v.flags.writeable = False
    return w, v


def _bs_sector_unitaries(theta: float, phi: float, cutoff: int):
    """Sector-N matrices W_N[p', p] = <p', N-p'| U_bs |p, N-p> for N = 0..cutoff."""
    chi = math.pi / 2.0 - phi
    out = []
    for n_total in range(cutoff + 1):
        w, v = _sector_eigensystem(n_total)
        core = (v * np.exp(1j * theta * w)) @ v.T
        gauge = np.exp(1j * chi * np.arange(n_total + 1))
        out.append(gauge[:, None] * core * np.conj(gauge)[None, :])
    return out


def _apply_beam_splitter(amps: np.ndarray, basis: FockBasis, element: BeamSplitter) -> np.ndarray:
    perm, offsets = basis.pair_layout(element.mode_a, element.mode_b)
    sector_u = _bs_sector_unitaries(element.theta, element.phi, basis.cutoff)
    sorted_amps = amps[perm]
    out_sorted = np.empty_like(sorted_amps)
    for n_total in range(basis.cutoff + 1):
        lo, hi = offsets[n_total], offsets[n_total + 1]
        if hi == lo:
            continue
        block = sorted_amps[lo:hi].reshape(-1, n_total + 1)
        out_sorted[lo:hi] = (block @ sector_u[n_total].T).reshape(-1)
    out = np.empty_like(amps)
    out[perm] = out_sorted
    return out


def apply_elements(state: FockState, elements) -> FockState:
    """Evolve through a loss-free element list, exactly within each photon sector."""
    amps = state.amplitudes
    for element in elements:
        if isinstance(element, BeamSplitter):
            amps = _apply_beam_splitter(amps, state.basis, element)
        elif isinstance(element, PhaseShifter):
            amps = amps * np.exp(1j * element.phi * state.basis.occupations[:, element.mode])
        elif isinstance(element, Loss):
            raise LossNotExpanded(f"cannot evolve through {element!r}; call expand_loss first")
        else:
            raise TypeError(f"unknown element {element!r}")
    return FockState(state.basis, amps, state.truncation_tail)


def apply_matrix(state: FockState, matrix: np.ndarray, tol: float = 1e-10) -> FockState:
    """Evolve through a bare mode matrix by Givens decomposition.

    The decomposition is recomposed and checked against ``matrix`` to ``tol``
    before use (raises :class:`DecompositionFailed` otherwise).
    """
    matrix = np.asarray(matrix, dtype=complex)
    if matrix.shape != (state.basis.n_modes, state.basis.n_modes):
        raise DimensionMismatch(
            f"matrix shape {matrix.shape} does not match {state.basis.n_modes} modes"
        )
    return apply_elements(state, decompose_unitary(matrix, tol))


# ---------------------------------------------------------------------------
# observables and post-selection operators
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PhotonNumber:
    """Total photon number of a non-empty set of modes."""

    modes: frozenset

    def __post_init__(self):
        object.__setattr__(self, "modes", frozenset(self.modes))
        if not self.modes:
            raise ValueError("PhotonNumber needs at least one mode")


class _Identity:
    def __repr__(self):
        return "IDENTITY"


IDENTITY = _Identity()


def probe_observable(circuit: Circuit) -> PhotonNumber:
    return PhotonNumber(circuit.probe_modes)


def observable_eigenvalues(obs, basis: FockBasis) -> np.ndarray:
    """Diagonal of the observable in the occupation basis (integer array)."""
    if isinstance(obs, PhotonNumber):
        modes = sorted(obs.modes)
        if max(modes) >= basis.n_modes:
            raise DimensionMismatch(f"observable modes {modes} exceed basis with {basis.n_modes} modes")
        return basis.occupations[:, modes].sum(axis=1)
    if obs is IDENTITY or isinstance(obs, _Identity):
        return np.ones(basis.size, dtype=np.int64)
    raise TypeError(f"unknown observable {obs!r}")


@dataclass(frozen=True)
class FockProjector:
    """|m><m| on one mode, identity elsewhere."""

    mode: int
    m: int


@dataclass(frozen=True)
class ClickOperator:
    """I - |0><0| on one mode (binary detector fired)."""

    mode: int


@dataclass(frozen=True)
class FullProjector:
    """Rank-one projector onto an arbitrary basis-resident state."""

    state: FockState


class _NoneOp:
    def __repr__(self):
        return "NONE_OP"


NONE_OP = _NoneOp()


def post_selection_operator(ps, detect_mode: int):
    """Translate an engine-level post-selection into an operator on the detect mode."""
    if ps is NONE:
        return NONE_OP
    if ps is CLICK:
        return ClickOperator(detect_mode)
    if ps is NO_CLICK:
        return FockProjector(detect_mode, 0)
    if isinstance(ps, Fock):
        return FockProjector(detect_mode, ps.m)
    raise TypeError(f"unsupported post-selection {ps!r}")


def apply_post_selection(op, state: FockState) -> np.ndarray:
    """Return E|psi> as an amplitude array (E is positive semidefinite)."""
    occ = state.basis.occupations
    if op is NONE_OP or isinstance(op, _NoneOp):
        return state.amplitudes.copy()
    if isinstance(op, FockProjector):
        return np.where(occ[:, op.mode] == op.m, state.amplitudes, 0.0)
    if isinstance(op, ClickOperator):
        return np.where(occ[:, op.mode] >= 1, state.amplitudes, 0.0)
    if isinstance(op, FullProjector):
        phi = op.state.amplitudes
        return phi * np.vdot(phi, state.amplitudes)
    raise TypeError(f"unknown post-selection operator {op!r}")


# ---------------------------------------------------------------------------
# weak values
# ---------------------------------------------------------------------------


def oracle_input(circuit: Circuit, input_state, cutoff: Optional[int] = None) -> FockState:
    """Build the initial Fock-space state for an engine-level input description."""
    if isinstance(input_state, Coherent):
        nbar = abs(input_state.alpha) ** 2
        basis = enumerate_basis(circuit.n_modes, cutoff if cutoff is not None else default_cutoff(nbar))
        vec = np.zeros(circuit.n_modes, dtype=complex)
        vec[circuit.input_mode] = input_state.alpha
        return prepare_coherent(basis, vec)
    if isinstance(input_state, SinglePhoton):
        basis = enumerate_basis(circuit.n_modes, cutoff if cutoff is not None else 1)
        return prepare_single_photon(basis, circuit.input_mode)
    raise TypeError(f"unknown input state {input_state!r}")


def generalized_weak_values(
    circuit: Circuit,
    input_fock: FockState,
    obs,
    ps_ops,
    p_min: float = DEFAULT_P_MIN,
):
    """Weak values for several post-selection operators sharing the same passes.

    Three state-vector passes: evolve to the probe time, apply the observable
    diagonal, evolve both the plain and the observable-weighted state to the
    output; each operator then only needs two inner products,

        WV = <psi_f| E |psi_obs> / <psi_f| E |psi_f>.
    """
    if not circuit.is_loss_free:
        raise LossNotExpanded("oracle evolution requires a loss-expanded circuit")
    basis = input_fock.basis
    if basis.n_modes != circuit.n_modes:
        raise DimensionMismatch(
            f"state has {basis.n_modes} modes but circuit declares {circuit.n_modes}"
        )
    lam = observable_eigenvalues(obs, basis)
    psi_probe = apply_elements(input_fock, circuit.pre_probe)
    psi_weighted = FockState(basis, psi_probe.amplitudes * lam, psi_probe.truncation_tail)
    psi_out = apply_elements(psi_probe, circuit.post_probe)
    psi_obs = apply_elements(psi_weighted, circuit.post_probe)
    results = []
    for op in ps_ops:
        e_psi = apply_post_selection(op, psi_out)
        denominator = float(np.real(np.vdot(e_psi, psi_out.amplitudes)))
        if denominator < p_min:
            raise PostSelectionTooRare(
                f"post-selection probability {denominator:.3e} below p_min={p_min:.1e} for {op!r}"
            )
        numerator = complex(np.vdot(e_psi, psi_obs.amplitudes))
        results.append(numerator / denominator)
    return results


def generalized_weak_value(
    circuit: Circuit,
    input_fock: FockState,
    obs,
    ps_op,
    p_min: float = DEFAULT_P_MIN,
) -> complex:
    """Single-operator convenience wrapper around :func:`generalized_weak_values`."""
    return generalized_weak_values(circuit, input_fock, obs, [ps_op], p_min)[0]


def outcome_probability(circuit: Circuit, input_fock: FockState, ps_op) -> float:
    """Born probability <psi_f| E |psi_f> of the post-selection outcome."""
    psi_out = apply_elements(apply_elements(input_fock, circuit.pre_probe), circuit.post_probe)
    e_psi = apply_post_selection(ps_op, psi_out)
    return float(np.real(np.vdot(e_psi, psi_out.amplitudes)))


# ---------------------------------------------------------------------------
# marginal vs projected post-selection comparison
# ---------------------------------------------------------------------------


def _rest_state_values(basis: FockBasis, detect_mode: int, kind: str, rest_amps: np.ndarray) -> np.ndarray:
    """Amplitude of the designated rest-modes state at each basis row's rest occupation."""
    others = [k for k in range(basis.n_modes) if k != detect_mode]
    occ_rest = basis.occupations[:, others]
    if kind == "coherent":
        nbar = float(np.sum(np.abs(rest_amps) ** 2))
        vals = np.full(basis.size, math.exp(-nbar / 2.0), dtype=complex)
        table = np.zeros((len(others), basis.cutoff + 1), dtype=complex)
        table[:, 0] = 1.0
        for n in range(1, basis.cutoff + 1):
            table[:, n] = table[:, n - 1] * rest_amps / math.sqrt(n)
        for j in range(len(others)):
            vals *= table[j, occ_rest[:, j]]
        return vals
    if kind == "vacuum":
        return (occ_rest.sum(axis=1) == 0).astype(complex)
    if kind == "one-photon":
        one = occ_rest.sum(axis=1) == 1
        return np.where(one, occ_rest @ rest_amps, 0.0)
    raise ValueError(kind)


def lemma1_check(
    circuit: Circuit,
    input_state,
    obs,
    e_detect,
    cutoff: Optional[int] = None,
    p_min: float = DEFAULT_P_MIN,
):
    """Compare post-selecting only the detect mode against additionally
    projecting the remaining modes onto their actual final state.

    When the evolved input factorizes across detect/rest (always true for a
    coherent input; true for a single photon only at T = 0 or T = 1) the two
    weak values coincide.  Returns ``(wv_marginal, wv_projected, difference)``.
    Raises :class:`NotFactorizable` for a single-photon input at 0 < T < 1.
    """
    if not isinstance(e_detect, (FockProjector, ClickOperator)):
        raise TypeError(f"detect-mode operator must be FockProjector or ClickOperator, got {e_detect!r}")
    d = circuit.detect_mode
    state = oracle_input(circuit, input_state, cutoff)
    basis = state.basis

    t_total = total_matrix(circuit)
    if isinstance(input_state, Coherent):
        final = t_total[:, circuit.input_mode] * input_state.alpha
        rest = np.delete(final, d)
        rest_vals = _rest_state_values(basis, d, "coherent", rest)
    else:
        col = t_total[:, circuit.input_mode]
        t = abs(col[d]) ** 2
        if t < 1e-12:
            rest = np.delete(col, d)
            rest_vals = _rest_state_values(basis, d, "one-photon", rest / math.sqrt(1.0 - t))
        elif 1.0 - t < 1e-12:
            rest_vals = _rest_state_values(basis, d, "vacuum", np.zeros(basis.n_modes - 1))
        else:
            raise NotFactorizable(
                f"single-photon final state is detect/rest entangled at T={t:.4g}"
            )

    lam = observable_eigenvalues(obs, basis)
    psi_probe = apply_elements(state, circuit.pre_probe)
    psi_weighted = FockState(basis, psi_probe.amplitudes * lam, psi_probe.truncation_tail)
    psi_out = apply_elements(psi_probe, circuit.post_probe)
    psi_obs = apply_elements(psi_weighted, circuit.post_probe)

    # marginal: E_A on the detect mode, identity on the rest
    e_psi = apply_post_selection(e_detect, psi_out)
    den1 = float(np.real(np.vdot(e_psi, psi_out.amplitudes)))
    if den1 < p_min:
        raise PostSelectionTooRare(f"post-selection probability {den1:.3e} below p_min={p_min:.1e}")
    wv_marginal = complex(np.vdot(e_psi, psi_obs.amplitudes)) / den1

    # projected: E_A on the detect mode, |psi_B><psi_B| on the rest
    occ_d = basis.occupations[:, d]
    if isinstance(e_detect, FockProjector):
        keep = np.arange(basis.cutoff + 1) == e_detect.m
    else:
        keep = np.arange(basis.cutoff + 1) >= 1

    def project(amps: np.ndarray) -> np.ndarray:
        weights = np.conj(rest_vals) * amps
        w_re = np.bincount(occ_d, weights=weights.real, minlength=basis.cutoff + 1)
        w_im = np.bincount(occ_d, weights=weights.imag, minlength=basis.cutoff + 1)
        sector_sum = (w_re + 1j * w_im) * keep
        return rest_vals * sector_sum[occ_d]

    e2_psi = project(psi_out.amplitudes)
    den2 = float(np.real(np.vdot(e2_psi, psi_out.amplitudes)))
    if den2 < p_min:
        raise PostSelectionTooRare(f"projected post-selection probability {den2:.3e} below p_min")
    wv_projected = complex(np.vdot(e2_psi, psi_obs.amplitudes)) / den2
    return wv_marginal, wv_projected, abs(wv_marginal - wv_projected)
