"""Operational layer: Gaussian pointer statistics and Monte-Carlo shot
simulation of the subtract-and-rescale protocol.

The probe couples to the observable via the standard shift interaction, so the
joint state after post-selection decomposes over observable eigenvalues ``n``
into Gaussians displaced by ``g*n`` (position) or phase-modulated by
``exp(-i g p n)`` (momentum).  The pointer is handled analytically per
eigenvalue sector: densities are quadratic forms of a positive semidefinite
sector matrix ``S[n', n]``, means and masses have closed forms, and sampling
uses an inverse CDF built by cumulative Simpson integration on a fine grid.

For a rank-one post-selection the sector matrix is the outer product of the
:class:`SectorAmplitudes` vector ``A_n``; conditioning on a click/no-click
outcome uses the full Gram matrix of the masked, evolved sector states, which
is exact for the coupled joint state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from .circuits import Circuit, inverse_elements
from .errors import EmptyPopulation, PostSelectionTooRare
from .fock import (
    FockState,
    apply_elements,
    apply_post_selection,
    observable_eigenvalues,
    oracle_input,
    post_selection_operator,
    probe_observable,
)
from .weakvalues import DEFAULT_P_MIN, scaling_function, scaling_function_derivative

SHOT_CHUNK = 1 << 16

_GRID_PANELS = 1 << 17

_GRID_SIGMAS = 8.0


@dataclass(frozen=True)
class PointerConfig:
    """Gaussian pointer: position spread ``sigma_x`` and shift-per-photon ``g``."""

    sigma_x: float = 1.0
    g: float = 0.02

    def __post_init__(self):
        if not (math.isfinite(self.sigma_x) and self.sigma_x > 0.0):
            raise ValueError(f"sigma_x must be positive, got {self.sigma_x}")
        if not (math.isfinite(self.g) and self.g > 0.0):
            raise ValueError(f"g must be positive, got {self.g}")

    @property
    def sigma_p(self) -> float:
        """Momentum spread of the minimum-uncertainty pointer, 1/(2 sigma_x)."""
        return 0.5 / self.sigma_x

    def is_weak(self, n_max: int) -> bool:
        """True when g*n_max/sigma_x < 0.1 (the weak-coupling regime flag)."""
        return self.g * n_max / self.sigma_x < 0.1


@dataclass(frozen=True)
class SectorAmplitudes:
    """Post-selected transition amplitude through each observable eigenvalue sector.

    ``values[n] = <psi_f| E |psi_n>`` with ``psi_n`` the state evolved through
    the eigenvalue-n projector at the probe time; the sum over n is the
    post-selection probability and ``sum(n * A_n) / sum(A_n)`` is the weak value.
    """

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "values", v)
        if float(np.sum(np.abs(v) ** 2)) > 1.0 + 1e-9:
            raise ValueError("sector amplitudes exceed unit total weight")

    def weak_value(self) -> complex:
        n = np.arange(len(self.values))
        return complex((n * self.values).sum() / self.values.sum())


def sector_amplitudes(
    circuit: Circuit,
    input_state,
    ps,
    obs=None,
    cutoff: Optional[int] = None,
    p_min: float = DEFAULT_P_MIN,
) -> SectorAmplitudes:
    """A_n for the circuit's probe observable (or ``obs``) under post-selection ``ps``.

    Computed with a single backward pass: ``A_n = <U2^dag E psi_f | P_n psi_p>``.
    """
    state = oracle_input(circuit, input_state, cutoff)
    basis = state.basis
    obs = obs if obs is not None else probe_observable(circuit)
    lam = observable_eigenvalues(obs, basis)
    op = post_selection_operator(ps, circuit.detect_mode)
    psi_probe = apply_elements(state, circuit.pre_probe)
    psi_out = apply_elements(psi_probe, circuit.post_probe)
    e_psi = FockState(basis, apply_post_selection(op, psi_out))
    total = float(np.real(np.vdot(e_psi.amplitudes, psi_out.amplitudes)))
    if total < p_min:
        raise PostSelectionTooRare(f"post-selection probability {total:.3e} below p_min={p_min:.1e}")
    chi = apply_elements(e_psi, inverse_elements(circuit.post_probe))
    weights = np.conj(chi.amplitudes) * psi_probe.amplitudes
    a_re = np.bincount(lam, weights=weights.real, minlength=basis.cutoff + 1)
    a_im = np.bincount(lam, weights=weights.imag, minlength=basis.cutoff + 1)
    return SectorAmplitudes(a_re + 1j * a_im)


def _sector_gram(circuit: Circuit, input_fock: FockState, obs=None):
    """Evolved sector states and the detect-mode occupation, for Gram matrices.

    Returns ``(columns, occ_detect)`` where ``columns[:, n]`` is
    ``U2 P_n U1 |psi_i>``.
    """
    basis = input_fock.basis
    obs = obs if obs is not None else probe_observable(circuit)
    lam = observable_eigenvalues(obs, basis)
    psi_probe = apply_elements(input_fock, circuit.pre_probe)
    cols = np.zeros((basis.size, basis.cutoff + 1), dtype=complex)
    for n in range(basis.cutoff + 1):
        mask = lam == n
        if not mask.any():
            continue
        sector = FockState(basis, np.where(mask, psi_probe.amplitudes, 0.0))
        if float(np.sum(np.abs(sector.amplitudes) ** 2)) == 0.0:
            continue
        cols[:, n] = apply_elements(sector, circuit.post_probe).amplitudes
    return cols, basis.occupations[:, circuit.detect_mode]


class PointerDistribution:
    """Pointer distribution built from a PSD sector matrix ``S[n', n]``.

    Position density is proportional to ``sum_{n n'} S[n', n] phi_n(x) phi_n'(x)``
    with ``phi_n`` the Gaussian amplitude displaced by ``g*n``; momentum density
    replaces the displacement by the modulation ``exp(-i g p n)`` under the
    Gaussian envelope.  ``mean``/``mass``/``variance`` use closed forms; sampling
    interpolates an inverse CDF accurate to well below 1e-9.
    """

    def __init__(self, sector_matrix: np.ndarray, cfg: PointerConfig, variable: str = "position"):
        if variable not in ("position", "momentum"):
            raise ValueError(f"variable must be 'position' or 'momentum', got {variable!r}")
        s = np.asarray(sector_matrix, dtype=complex)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValueError(f"sector matrix must be square, got {s.shape}")
        self.sector_matrix = s
        self.cfg = cfg
        self.variable = variable
        self._n = np.arange(s.shape[0])
        delta = self._n[:, None] - self._n[None, :]
        # overlap of displaced Gaussians; identical for both variables
        self._overlap = np.exp(-(cfg.g ** 2) * delta ** 2 / (8.0 * cfg.sigma_x ** 2))
        self._delta = delta
        self.mass = float(np.real(np.sum(s * self._overlap)))

    def mean(self) -> float:
        g, s = self.cfg.g, self.sector_matrix
        if self.mass <= 0.0:
            raise EmptyPopulation("distribution carries no probability mass")
        if self.variable == "position":
            centers = 0.5 * g * (self._n[:, None] + self._n[None, :])
            return float(np.real(np.sum(s * self._overlap * centers)) / self.mass)
        sp2 = self.cfg.sigma_p ** 2
        first = -1j * g * self._delta.T * sp2  # moment of exp(-i g p (n - n'))
        return float(np.real(np.sum(s * self._overlap * first)) / self.mass)

    def variance(self) -> float:
        g, s = self.cfg.g, self.sector_matrix
        if self.variable == "position":
            centers = 0.5 * g * (self._n[:, None] + self._n[None, :])
            second = self._overlap * (self.cfg.sigma_x ** 2 + centers ** 2)
        else:
            sp2 = self.cfg.sigma_p ** 2
            second = self._overlap * (sp2 - (g * self._delta.T) ** 2 * sp2 * sp2)
        ex2 = float(np.real(np.sum(s * second)) / self.mass)
        return ex2 - self.mean() ** 2

    def pdf(self, points) -> np.ndarray:
        x = np.atleast_1d(np.asarray(points, dtype=float))
        g, s = self.cfg.g, self.sector_matrix
        if self.variable == "position":
            sx = self.cfg.sigma_x
            phi = np.exp(-((x[:, None] - g * self._n[None, :]) ** 2) / (4.0 * sx * sx))
            quad = np.einsum("xn,xn->x", phi @ s.T, phi).real
            dens = quad / math.sqrt(2.0 * math.pi * sx * sx)
        else:
            sp = self.cfg.sigma_p
            env = np.exp(-(x ** 2) / (2.0 * sp * sp)) / math.sqrt(2.0 * math.pi * sp * sp)
            modes = np.exp(-1j * g * x[:, None] * self._n[None, :])
            quad = np.einsum("xn,xn->x", modes @ s.T, np.conj(modes)).real
            dens = env * quad
        return np.clip(dens, 0.0, None) / self.mass

    @cached_property
    def _cdf_table(self):
        g = self.cfg.g
        if self.variable == "position":
            half = g * (len(self._n) - 1) + _GRID_SIGMAS * self.cfg.sigma_x
        else:
            half = _GRID_SIGMAS * self.cfg.sigma_p
        grid = np.linspace(-half, half, _GRID_PANELS + 1)
        dens = self.pdf(grid)
        h = grid[1] - grid[0]
        increments = (h / 3.0) * (dens[0:-2:2] + 4.0 * dens[1:-1:2] + dens[2::2])
        cdf = np.concatenate(([0.0], np.cumsum(increments)))
        cdf = np.maximum.accumulate(cdf)
        if cdf[-1] <= 0.0:
            raise EmptyPopulation("cannot sample a zero-mass distribution")
        return grid[::2], cdf / cdf[-1]

    def sample_from_uniform(self, uniforms: np.ndarray) -> np.ndarray:
        xs, cdf = self._cdf_table
        return np.interp(uniforms, cdf, xs)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.sample_from_uniform(rng.random(n))


def pointer_posterior(amplitudes: SectorAmplitudes, cfg: PointerConfig, variable: str = "position") -> PointerDistribution:
    """Pointer distribution for a rank-one post-selection, from its A_n vector."""
    a = amplitudes.values
    return PointerDistribution(np.outer(np.conj(a), a), cfg, variable)


# ---------------------------------------------------------------------------
# shots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ShotRecord:
    """One run: detector outcome plus the single pointer readout taken that run."""

    outcome: str  # "click" | "no_click"
    x_sample: Optional[float]
    p_sample: Optional[float]
    seed_stream: int


class ShotBatch:
    """Columnar container of shot records (behaves as a sequence of :class:`ShotRecord`).

    Shots are generated in fixed-size chunks, each from its own RNG stream
    derived from the master seed, so any chunk can be regenerated independently;
    ``seed_stream`` is the chunk index.
    """

    def __init__(self, variable: str, clicked: np.ndarray, values: np.ndarray, master_seed: int):
        self.variable = variable
        self.clicked = clicked
        self.values = values
        self.master_seed = master_seed

    def __len__(self):
        return len(self.clicked)

    def __getitem__(self, i) -> ShotRecord:
        if isinstance(i, slice):
            raise TypeError("slicing not supported; index individual shots")
        clicked = bool(self.clicked[i])
        value = float(self.values[i])
        is_x = self.variable == "position"
        return ShotRecord(
            outcome="click" if clicked else "no_click",
            x_sample=value if is_x else None,
            p_sample=None if is_x else value,
            seed_stream=int(i) // SHOT_CHUNK,
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def click_fraction(self) -> float:
        return float(np.mean(self.clicked))


def conditional_sector_matrices(circuit: Circuit, input_state, obs=None, cutoff: Optional[int] = None):
    """PSD sector matrices conditioned on click and on no-click at the detect mode."""
    fock_in = oracle_input(circuit, input_state, cutoff)
    cols, occ_d = _sector_gram(circuit, fock_in, obs)
    click_cols = cols * (occ_d >= 1)[:, None]
    dark_cols = cols * (occ_d == 0)[:, None]
    s_click = click_cols.conj().T @ click_cols
    s_dark = dark_cols.conj().T @ dark_cols
    return s_click, s_dark


def run_shots(
    circuit: Circuit,
    input_state,
    cfg: PointerConfig,
    n_shots: int,
    seed: int,
    variable: str = "position",
    cutoff: Optional[int] = None,
) -> ShotBatch:
    """Simulate ``n_shots`` runs: outcome from the exact coupled-state
    probabilities, then a pointer sample from the matching conditional posterior.

    Deterministic for a given ``seed`` regardless of how chunks are generated.
    """
    if n_shots < 1:
        raise ValueError(f"n_shots must be >= 1, got {n_shots}")
    s_click, s_dark = conditional_sector_matrices(circuit, input_state, cutoff=cutoff)
    d_click = PointerDistribution(s_click, cfg, variable)
    d_dark = PointerDistribution(s_dark, cfg, variable)
    total = d_click.mass + d_dark.mass
    p_click = d_click.mass / total
    clicked = np.empty(n_shots, dtype=bool)
    values = np.empty(n_shots, dtype=float)
    for chunk_start in range(0, n_shots, SHOT_CHUNK):
        chunk = slice(chunk_start, min(chunk_start + SHOT_CHUNK, n_shots))
        rng = np.random.default_rng(np.random.SeedSequence([int(seed), chunk_start // SHOT_CHUNK]))
        u_outcome = rng.random(chunk.stop - chunk.start)
        u_pointer = rng.random(chunk.stop - chunk.start)
        hits = u_outcome < p_click
        vals = np.empty_like(u_pointer)
        if hits.any():
            vals[hits] = d_click.sample_from_uniform(u_pointer[hits])
        if (~hits).any():
            vals[~hits] = d_dark.sample_from_uniform(u_pointer[~hits])
        clicked[chunk] = hits
        values[chunk] = vals
    return ShotBatch(variable, clicked, values, int(seed))


# ---------------------------------------------------------------------------
# protocol estimator
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Estimate:
    """Sample estimate of one weak-value component."""

    mean: float
    std_error: float
    n_samples: int


def _as_batch(records) -> ShotBatch:
    if isinstance(records, ShotBatch):
        return records
    records = list(records)
    if not records:
        raise EmptyPopulation("no shot records given")
    variables = {("position" if r.x_sample is not None else "momentum") for r in records}
    if len(variables) != 1:
        raise ValueError("records mix position and momentum settings; estimate them separately")
    variable = variables.pop()
    values = np.array(
        [r.x_sample if variable == "position" else r.p_sample for r in records], dtype=float
    )
    clicked = np.array([r.outcome == "click" for r in records], dtype=bool)
    return ShotBatch(variable, clicked, values, -1)


def estimate_protocol(records, cfg: PointerConfig, scaled: bool = True):
    """Estimate the reconstructed weak value from finite shot statistics.

    Conditional pointer means divided by the readout gain give the click and
    no-click weak-value components; the click fraction estimates the click
    probability; the reported value is ``(WV_click - WV_noclick) * f(-p_hat)``
    (or the bare difference when ``scaled`` is False, as appropriate for a
    single-photon input where no rescaling is needed).

    Returns ``(weak_value_estimate, Estimate)`` where the complex estimate
    carries the measured component (real for position runs, imaginary for
    momentum runs) and the diagnostics hold that component's value, propagated
    standard error, and the total number of shots used.
    """
    batch = _as_batch(records)
    n_total = len(batch)
    clicks = batch.values[batch.clicked]
    darks = batch.values[~batch.clicked]
    if len(clicks) == 0 or len(darks) == 0:
        raise EmptyPopulation(
            f"need both outcomes, got {len(clicks)} clicks / {len(darks)} no-clicks"
        )
    gain = cfg.g if batch.variable == "position" else 2.0 * cfg.sigma_p ** 2 * cfg.g
    m_click, m_dark = float(np.mean(clicks)), float(np.mean(darks))
    se_click = float(np.std(clicks, ddof=1)) / math.sqrt(len(clicks)) if len(clicks) > 1 else float("inf")
    se_dark = float(np.std(darks, ddof=1)) / math.sqrt(len(darks)) if len(darks) > 1 else float("inf")
    p_hat = len(clicks) / n_total
    se_p = math.sqrt(p_hat * (1.0 - p_hat) / n_total)
    diff = (m_click - m_dark) / gain
    se_diff = math.sqrt(se_click ** 2 + se_dark ** 2) / gain
    if scaled:
        factor = scaling_function(-p_hat)
        dfactor_dp = -scaling_function_derivative(-p_hat)
    else:
        factor, dfactor_dp = 1.0, 0.0
    value = diff * factor
    std_error = math.sqrt((factor * se_diff) ** 2 + (diff * dfactor_dp * se_p) ** 2)
    estimate = complex(value, 0.0) if batch.variable == "position" else complex(0.0, value)
    return estimate, Estimate(mean=value, std_error=std_error, n_samples=n_total)
