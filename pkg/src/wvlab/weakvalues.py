"""Closed-form weak values of mode photon number, and the exact coherent-state
reconstruction of the single-photon weak value.

All weak values are complex: the real part is what a position pointer reads in
the weak-coupling limit, the imaginary part is carried by the conjugate
variable.  Inputs are a coherent state or a single photon injected at the
circuit's ``input_mode``; post-selection is a photon-number condition at the
``detect_mode`` (exact count ``m``, a binary click, or no click).

The reconstruction identity implemented by
:func:`reconstruct_single_photon_wv` is

    WV_1(click) = [WV_alpha(click) - WV_alpha(no click)] * f(-p_star)

with ``f(x) = x / log(1 + x)`` and ``p_star = 1 - exp(-T |alpha|^2)`` the
click probability; it holds exactly for every finite ``|alpha|^2 > 0``.
"""

from __future__ import annotations

import cmath
import math
from dataclasses import dataclass

import numpy as np

from .circuits import Circuit, stage_matrices, transmittance
from .errors import DomainError, LossNotExpanded, PostSelectionTooRare

DEFAULT_P_MIN = 1e-12

_SERIES_SWITCH = 1e-4


class _Marker:
    """Named singleton used for parameterless post-selection variants."""

    __slots__ = ("_name",)

    def __init__(self, name: str):
        self._name = name

    def __repr__(self):
        return self._name


@dataclass(frozen=True)
class Fock:
    """Post-select on exactly ``m`` photons at the detect mode."""

    m: int

    def __post_init__(self):
        if self.m < 0:
            raise ValueError(f"photon count must be >= 0, got {self.m}")


NONE = _Marker("NONE")          # no post-selection
CLICK = _Marker("CLICK")        # detector fired (any m > 0)
NO_CLICK = _Marker("NO_CLICK")  # detector silent (m = 0)

PostSelection = object  # NONE | CLICK | NO_CLICK | Fock(m)


@dataclass(frozen=True)
class Coherent:
    """Coherent-state input with complex amplitude ``alpha`` (any finite mean photon number)."""

    alpha: complex

    def __post_init__(self):
        a = complex(self.alpha)
        if not (math.isfinite(a.real) and math.isfinite(a.imag)):
            raise ValueError(f"alpha must be finite, got {self.alpha!r}")
        object.__setattr__(self, "alpha", a)


@dataclass(frozen=True)
class SinglePhoton:
    """One photon injected at the input mode."""


InputState = object  # Coherent | SinglePhoton


def scaling_function(x: float) -> float:
    """``f(x) = x / log(1 + x)``, extended continuously through ``f(0) = 1``.

    For ``|x| < 1e-4`` the series ``1 + x/2 - x^2/12 + x^3/24`` is used; the
    switch is continuous to better than 1e-15 relative error.  Raises
    :class:`DomainError` for ``x <= -1``.
    """
    if not math.isfinite(x):
        raise DomainError(f"scaling function argument must be finite, got {x!r}")
    if x <= -1.0:
        raise DomainError(f"scaling function requires x > -1, got {x}")
    if abs(x) < _SERIES_SWITCH:
        return 1.0 + x / 2.0 - x * x / 12.0 + x * x * x / 24.0
    return x / math.log1p(x)


def scaling_function_derivative(x: float) -> float:
    """d/dx of :func:`scaling_function`, with the matching series near 0."""
    if not math.isfinite(x) or x <= -1.0:
        raise DomainError(f"scaling function derivative requires finite x > -1, got {x!r}")
    if abs(x) < _SERIES_SWITCH:
        return 0.5 - x / 6.0 + x * x / 8.0
    lg = math.log1p(x)
    return (lg - x / (1.0 + x)) / (lg * lg)


def _require_loss_free(circuit: Circuit) -> None:
    if not circuit.is_loss_free:
        raise LossNotExpanded("weak-value formulas require a loss-expanded circuit")


def click_probability(circuit: Circuit, alpha: complex) -> float:
    """``1 - exp(-T |alpha|^2)`` for a coherent input of amplitude ``alpha``."""
    _require_loss_free(circuit)
    t = transmittance(circuit)
    return -math.expm1(-t * abs(alpha) ** 2)


def _amplitudes(circuit: Circuit, alpha: complex):
    """(beta, gamma_vec): amplitudes at the probe time and at the output."""
    m1, m2 = stage_matrices(circuit)
    beta = m1[:, circuit.input_mode] * alpha
    gamma_vec = m2 @ beta
    return m2, beta, gamma_vec


def _poisson_weight(mean: float, m: int) -> float:
    if m == 0:
        return math.exp(-mean)
    return math.exp(-mean + m * math.log(mean) - math.lgamma(m + 1)) if mean > 0.0 else 0.0


def wv_coherent(circuit: Circuit, alpha: complex, ps, p_min: float = DEFAULT_P_MIN) -> complex:
    """Weak value of the probed photon number for a coherent input.

    Post-selection variants:

    * ``NONE``     -- sum_p |beta_p|^2, the mean photon number at the probe time
    * ``Fock(m)``  -- closed form built from the post-probe stage's transport
      coefficients (the coefficient attached to probe mode ``p`` and output
      mode ``k`` is ``M2[k, p]``; this indexing is pinned by oracle matching)
    * ``NO_CLICK`` -- identical to ``Fock(0)``
    * ``CLICK``    -- exact rearrangement of the click/no-click mixture:
      ``[WV(NONE) - (1 - p_star) WV(NO_CLICK)] / p_star``

    Raises :class:`PostSelectionTooRare` when the conditioning probability is
    below ``p_min``.
    """
    _require_loss_free(circuit)
    alpha = complex(alpha)
    if ps is CLICK:
        p_star = click_probability(circuit, alpha)
        if p_star < p_min:
            raise PostSelectionTooRare(
                f"click probability {p_star:.3e} below p_min={p_min:.1e} (dark port)"
            )
        wv_all = wv_coherent(circuit, alpha, NONE, p_min)
        wv_dark = wv_coherent(circuit, alpha, NO_CLICK, p_min)
        return (wv_all - (1.0 - p_star) * wv_dark) / p_star

    m2, beta, gamma_vec = _amplitudes(circuit, alpha)
    probes = sorted(circuit.probe_modes)
    if ps is NONE:
        return complex(np.sum(np.abs(beta[probes]) ** 2))

    if ps is NO_CLICK:
        m = 0
    elif isinstance(ps, Fock):
        m = ps.m
    else:
        raise TypeError(f"unsupported post-selection {ps!r}")

    d = circuit.detect_mode
    gamma = gamma_vec[d]
    prob = _poisson_weight(abs(gamma) ** 2, m)
    if prob < p_min:
        raise PostSelectionTooRare(
            f"P(m={m}) = {prob:.3e} below p_min={p_min:.1e} for |gamma|^2={abs(gamma)**2:.3e}"
        )
    others = np.arange(circuit.n_modes) != d
    # s_p = sum_{k != detect} M2[k, p] * conj(gamma_k)
    s = m2[others, :][:, probes].T @ np.conj(gamma_vec[others])
    total = complex(beta[probes] @ s)
    if m > 0:
        total += complex(beta[probes] @ m2[d, probes]) * m / gamma
    return total


def wv_single_photon(circuit: Circuit, ps, p_min: float = DEFAULT_P_MIN) -> complex:
    """Weak value for a single-photon input.

    Supported post-selections: ``NONE``, ``Fock(0)``, ``Fock(1)`` (for one
    photon a click means exactly one photon, so ``CLICK``/``NO_CLICK`` map to
    ``Fock(1)``/``Fock(0)``).
    """
    _require_loss_free(circuit)
    if ps is CLICK:
        ps = Fock(1)
    elif ps is NO_CLICK:
        ps = Fock(0)
    m1, m2 = stage_matrices(circuit)
    i, d = circuit.input_mode, circuit.detect_mode
    probes = sorted(circuit.probe_modes)
    if ps is NONE:
        return complex(np.sum(np.abs(m1[probes, i]) ** 2))
    if not isinstance(ps, Fock) or ps.m > 1:
        raise ValueError(f"single-photon post-selection must be NONE, Fock(0), or Fock(1); got {ps!r}")
    # path amplitude through the probed modes, per output mode k
    path = m2[:, probes] @ m1[probes, i]
    t_col = (m2 @ m1)[:, i]
    t = abs(t_col[d]) ** 2
    if ps.m == 1:
        if t < p_min:
            raise PostSelectionTooRare(f"T = {t:.3e} below p_min={p_min:.1e} (dark port)")
        return complex(path[d] / t_col[d])
    if 1.0 - t < p_min:
        raise PostSelectionTooRare(f"1 - T = {1.0 - t:.3e} below p_min={p_min:.1e}")
    others = np.arange(circuit.n_modes) != d
    return complex(np.conj(t_col[others]) @ path[others] / (1.0 - t))


def reconstruct_single_photon_wv(
    circuit: Circuit, alpha: complex, p_min: float = DEFAULT_P_MIN
) -> complex:
    """Single-photon click weak value reconstructed from coherent-state data.

    ``[WV_alpha(CLICK) - WV_alpha(NO_CLICK)] * f(-p_star)``; exact for any
    finite ``|alpha|^2 > 0``.
    """
    p_star = click_probability(circuit, alpha)
    if not p_min < p_star < 1.0:
        raise PostSelectionTooRare(
            f"click probability {p_star:.3e} outside ({p_min:.1e}, 1); cannot reconstruct"
        )
    diff = wv_coherent(circuit, alpha, CLICK, p_min) - wv_coherent(circuit, alpha, NO_CLICK, p_min)
    return diff * scaling_function(-p_star)


def proportionality_constants(circuit: Circuit) -> tuple:
    """(WV(NONE)/|alpha|^2, WV(NO_CLICK)/|alpha|^2), both independent of alpha.

    The first equals the single-photon non-post-selected weak value; the second
    equals ``(1 - T)`` times the single-photon no-click weak value.  Both are
    computed directly from the stage matrices and cross-checked against a
    coherent evaluation at ``alpha = 1`` (mismatch raises ``ArithmeticError``).
    """
    _require_loss_free(circuit)
    m1, m2 = stage_matrices(circuit)
    i, d = circuit.input_mode, circuit.detect_mode
    probes = sorted(circuit.probe_modes)
    c_mean = float(np.sum(np.abs(m1[probes, i]) ** 2))
    path = m2[:, probes] @ m1[probes, i]
    t_col = (m2 @ m1)[:, i]
    others = np.arange(circuit.n_modes) != d
    c_dark = complex(np.conj(t_col[others]) @ path[others])

    check_mean = wv_coherent(circuit, 1.0, NONE)
    check_dark = wv_coherent(circuit, 1.0, NO_CLICK)
    if abs(check_mean - c_mean) > 1e-10 or abs(check_dark - c_dark) > 1e-10:
        raise ArithmeticError(
            "proportionality cross-check failed: "
            f"|{check_mean} - {c_mean}|, |{check_dark} - {c_dark}|"
        )
    return c_mean, c_dark
