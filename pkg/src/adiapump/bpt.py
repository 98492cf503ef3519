"""Pumped charge from the frozen scattering matrix.

For an occupation function of bounded variation the charge leaving the pump
through lead ``j`` obeys

    dQ_j/ds = -(1/2pi) [ sum_i w_i B_j(E_i) + int rho'(E) B_j(E) dE ],
    B_j(E) = (i dS/ds S^*)_jj ,

where ``drho`` has point masses ``w_i`` at ``E_i`` and density ``rho'``. A
Fermi sea at ``mu`` is the single jump ``(mu, -1)``. Charge is positive when
it flows from the pump into the lead.

Winding sign convention: ``sum_j B_j = -d arg det S / ds``, so the total Fermi
sea charge over a closed loop equals ``-winding`` where ``winding`` counts the
turns of ``det S(s, mu)`` in the positive sense.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import quad, simpson

from .errors import (
    GridTooCoarse,
    NonUnitaryInput,
    PhaseUnwrapAmbiguous,
    QuadratureNotConverged,
)
from .scattering import BAND_MARGIN, ScatteringMatrix, scattering_matrix, smatrix_derivative

__all__ = [
    "SpectralDensity",
    "BptResult",
    "CycleCharge",
    "WindingResult",
    "bpt_integrand",
    "pumped_current",
    "epoch_integral",
    "cycle_charge",
    "unwrap_winding",
    "total_charge_winding",
]


def _fermi(x):
    """1 / (1 + e^x), evaluated without overflow."""
    return 0.5 * (1.0 - np.tanh(0.5 * np.asarray(x, dtype=float)))


@dataclass(frozen=True)
class SpectralDensity:
    """Stieltjes measure ``drho``: point masses plus an absolutely continuous part.

    Parameters
    ----------
    jumps : tuple of (E, w)
        Point mass ``w`` at energy ``E``.
    smooth : callable, optional
        Density ``rho'(E)``; vanishes outside ``support``.
    support : (float, float), optional
        Interval carrying ``smooth``, strictly inside the band.
    """

    jumps: tuple[tuple[float, float], ...] = ()
    smooth: Callable[[np.ndarray], np.ndarray] | None = None
    support: tuple[float, float] | None = None

    def __post_init__(self):
        lo, hi = BAND_MARGIN, 4.0 - BAND_MARGIN
        for E, _ in self.jumps:
            if not lo < E < hi:
                raise ValueError(f"jump at E={E} not strictly inside the band")
        if self.smooth is not None:
            if self.support is None:
                raise ValueError("smooth part needs a support interval")
            a, b = self.support
            if not lo < a < b < hi:
                raise ValueError(f"support {self.support} not strictly inside the band")

    @classmethod
    def fermi_sea(cls, mu: float) -> "SpectralDensity":
        return cls(jumps=((float(mu), -1.0),))

    @property
    def is_empty(self) -> bool:
        return not self.jumps and self.smooth is None

    def total_variation(self) -> float:
        tv = sum(abs(w) for _, w in self.jumps)
        if self.smooth is not None:
            tv += quad(lambda e: abs(self.smooth(e)), *self.support, limit=200)[0]
        return tv

    def occupation(self, lam, smearing: float = 0.0) -> np.ndarray:
        """Occupation ``rho(lam) = -drho((lam, inf))``.

        With ``smearing > 0`` every jump becomes a Fermi function of that
        width (the smooth part is unaffected).
        """
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.zeros_like(lam)
        for E, w in self.jumps:
            if smearing > 0:
                out -= w * _fermi((lam - E) / smearing)
            else:
                out -= w * (lam < E)
        if self.smooth is not None:
            a, b = self.support
            for i, x in enumerate(lam):
                if x < b:
                    out[i] -= quad(self.smooth, max(x, a), b, limit=200)[0]
        return out


@dataclass
class BptResult:
    s: float
    per_lead: np.ndarray
    integrand_samples: dict = field(default_factory=dict)
    imag_residue: float = 0.0


@dataclass
class CycleCharge:
    Q: np.ndarray
    error_estimate: float
    s_grid: np.ndarray
    rate: np.ndarray


@dataclass
class WindingResult:
    winding: int
    total_phase: float
    max_step: float
    total_charge: float | None = None
    residual: float | None = None


def bpt_integrand(S, dS_ds, return_residue: bool = False, unitarity_tol: float = 1e-6):
    """Diagonal of ``i dS/ds S^*`` as a real vector.

    Parameters
    ----------
    S : ScatteringMatrix or ndarray
    dS_ds : ndarray
    return_residue : bool
        Also return the largest discarded imaginary part.

    Raises
    ------
    NonUnitaryInput
        If ``max|S^* S - 1| > unitarity_tol``.
    """
    M = S.S if isinstance(S, ScatteringMatrix) else np.asarray(S)
    n = M.shape[0]
    res = float(np.max(np.abs(M.conj().T @ M - np.eye(n))))
    if res > unitarity_tol:
        raise NonUnitaryInput(f"unitarity residual {res:.3g}")
    d = np.einsum("jk,jk->j", 1j * np.asarray(dS_ds), M.conj())
    vals = d.real.copy()
    if return_residue:
        return vals, float(np.max(np.abs(d.imag)))
    return vals


def _integrand_at(model, s, E, method):
    S = scattering_matrix(model, s, E)
    dS = smatrix_derivative(model, s, E, method=method).dS
    return bpt_integrand(S, dS, return_residue=True)


def pumped_current(model, s: float, rho: SpectralDensity, order: int = 16,
                   max_order: int = 512, rtol: float = 1e-8,
                   method: str = "analytic") -> BptResult:
    """Instantaneous pumped current ``dQ_j/ds`` at epoch ``s``.

    The smooth part of ``drho`` is integrated by Gauss-Legendre quadrature;
    the order doubles until two successive orders agree to ``rtol``.

    Raises
    ------
    QuadratureNotConverged
        If ``max_order`` is reached without convergence.
    """
    n = model.n_leads
    total = np.zeros(n)
    samples = {}
    resid = 0.0
    for E, w in rho.jumps:
        B, r = _integrand_at(model, s, E, method)
        samples[float(E)] = B
        resid = max(resid, r)
        total += w * B
    if rho.smooth is not None:
        a, b = rho.support

        def gl(q):
            x, wq = np.polynomial.legendre.leggauss(q)
            E = 0.5 * (b - a) * x + 0.5 * (b + a)
            acc = np.zeros(n)
            nonlocal resid
            for Ei, wi in zip(E, wq):
                B, r = _integrand_at(model, s, Ei, method)
                resid = max(resid, r)
                acc += wi * float(rho.smooth(Ei)) * B
            return 0.5 * (b - a) * acc

        prev = gl(order)
        while True:
            order *= 2
            if order > max_order:
                raise QuadratureNotConverged(f"no convergence up to order {max_order}")
            cur = gl(order)
            if np.max(np.abs(cur - prev)) <= rtol * max(np.max(np.abs(cur)), 1e-300) or np.all(cur == prev):
                break
            prev = cur
        total += cur
    return BptResult(float(s), -total / (2.0 * np.pi), samples, resid)


def epoch_integral(model, rho: SpectralDensity, s_grid, method: str = "analytic"):
    """Composite Simpson integral of dQ/ds over ``s_grid``; returns (Q, rates)."""
    s_grid = np.asarray(s_grid, dtype=float)
    rates = np.array([pumped_current(model, s, rho, method=method).per_lead for s in s_grid])
    return simpson(rates, x=s_grid, axis=0), rates


def cycle_charge(model, rho: SpectralDensity, s_grid, tol: float = 1e-4,
                 method: str = "analytic") -> CycleCharge:
    """Charge per lead transported over a whole number of periods.

    The grid-halving estimate compares the result with Simpson on every other
    sample.

    Raises
    ------
    GridTooCoarse
        If halving the grid changes any ``Q_j`` by more than ``tol``.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if np.any(np.diff(s_grid) <= 0):
        raise ValueError("s_grid must be strictly increasing")
    span = s_grid[-1] - s_grid[0]
    ratio = span / model.path.period
    if ratio < 0.5 or abs(ratio - round(ratio)) > 1e-9:
        raise ValueError("s_grid must span a whole number of periods")
    if len(s_grid) < 5:
        raise GridTooCoarse("need at least 5 epochs")
    Q, rates = epoch_integral(model, rho, s_grid, method)
    Qh = simpson(rates[::2], x=s_grid[::2], axis=0)
    if len(s_grid) % 2 == 0:
        Qh = simpson(np.vstack([rates[::2], rates[-1:]]), x=np.append(s_grid[::2], s_grid[-1]), axis=0)
    err = float(np.max(np.abs(Q - Qh)))
    if err > tol:
        raise GridTooCoarse(f"grid halving changes Q by {err:.3g}")
    return CycleCharge(Q, err, s_grid, rates)


def unwrap_winding(values: Sequence[complex], max_step: float = 0.75 * np.pi) -> WindingResult:
    """Winding number of a closed sequence of nonzero complex values.

    Successive principal phase increments are accumulated. Steps larger than
    ``max_step`` cannot be told apart from their ``2 pi`` aliases and raise
    :class:`PhaseUnwrapAmbiguous`.
    """
    z = np.asarray(values, dtype=complex)
    steps = np.angle(z[1:] / z[:-1])
    big = float(np.max(np.abs(steps))) if len(steps) else 0.0
    if big >= max_step:
        raise PhaseUnwrapAmbiguous(f"phase step {big:.3f} rad too large to unwrap")
    total = float(np.sum(steps))
    return WindingResult(int(np.rint(total / (2.0 * np.pi))), total, big)


def total_charge_winding(model, mu: float, s_grid, method: str = "analytic") -> WindingResult:
    """Winding of ``det S(s, mu)`` over the loop and its charge residual.

    The residual is ``|sum_j Q_j + winding|`` with ``Q_j`` the Fermi sea cycle
    charges on the same grid.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    dets = [np.linalg.det(scattering_matrix(model, s, mu).S) for s in s_grid]
    res = unwrap_winding(dets)
    Q, _ = epoch_integral(model, SpectralDensity.fermi_sea(mu), s_grid, method)
    res.total_charge = float(np.sum(Q))
    res.residual = abs(res.total_charge + res.winding)
    return res
