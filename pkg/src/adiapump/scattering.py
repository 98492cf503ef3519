"""Frozen scattering matrix of the lattice pump and its epoch derivative.

Two independent routes are provided: mode matching of the plane-wave ansatz
``delta_ji e^{-ikx} + S_ji e^{ikx}`` on lead sites 1 and 2, and the retarded
Green's function of the pump block dressed by lead self-energies.

Reference phase
---------------
The raw matching solution is measured against plane waves anchored at lead
site 0. The frozen matrix is reported relative to decoupled leads with a
lattice Neumann termination (end site on-site 1), whose reflection amplitude
is ``e^{-ik}``; this only multiplies ``S`` by the constant ``e^{ik}`` and
leaves every diagonal entry of ``i dS/ds S^*`` unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BandEdge, DerivativeUnstable, SingularMatching
from .model import DrivenPumpModel

__all__ = [
    "BAND_MARGIN",
    "LeadMode",
    "ScatteringMatrix",
    "SDerivative",
    "lead_mode",
    "termination_reflection",
    "reference_phase",
    "scattering_matrix",
    "scattering_matrix_gf",
    "smatrix_derivative",
]

BAND_MARGIN = 1e-6
_COND_LIMIT = 1e12


@dataclass(frozen=True)
class LeadMode:
    """Propagating lead mode at energy ``E`` (``E = 2 - 2 cos k``, ``v = 2 sin k``)."""

    E: float
    k: float
    v: float


@dataclass(frozen=True)
class ScatteringMatrix:
    s: float
    E: float
    mode: LeadMode
    S: np.ndarray

    def unitarity_residual(self) -> float:
        n = self.S.shape[0]
        return float(np.max(np.abs(self.S.conj().T @ self.S - np.eye(n))))

    def symmetry_residual(self) -> float:
        return float(np.max(np.abs(self.S - self.S.T)))


@dataclass(frozen=True)
class SDerivative:
    """dS/ds with the difference between the two Richardson levels as error."""

    dS: np.ndarray
    error: float


def lead_mode(E: float, band_margin: float = BAND_MARGIN) -> LeadMode:
    """Wavenumber and group velocity of the lead mode at energy ``E``.

    Raises
    ------
    BandEdge
        If ``E`` lies within ``band_margin`` of 0 or 4, or outside the band.
    """
    E = float(E)
    if not (band_margin < E < 4.0 - band_margin):
        raise BandEdge(f"E={E} outside ({band_margin}, {4.0 - band_margin})")
    k = float(np.arccos(1.0 - E / 2.0))
    return LeadMode(E, k, 2.0 * np.sin(k))


def termination_reflection(E: float, end_onsite: float) -> complex:
    """Reflection amplitude of an isolated semi-infinite chain.

    The chain has on-site energy ``end_onsite`` on its first site and 2
    elsewhere. ``end_onsite=1`` is the lattice Neumann end (``e^{-ik}``),
    ``end_onsite=2`` the hard wall left by a decoupled lead (``-1``).
    """
    k = lead_mode(E).k
    a = E - end_onsite
    return complex(-(a * np.exp(-1j * k) + np.exp(-2j * k)) / (a * np.exp(1j * k) + np.exp(2j * k)))


def reference_phase(E: float, reference: str) -> complex:
    """Factor multiplying the raw matching solution for a given reference."""
    if reference == "raw":
        return 1.0 + 0j
    if reference == "neumann":
        return 1.0 / termination_reflection(E, 1.0)
    if reference == "dirichlet":
        return 1.0 / termination_reflection(E, 2.0)
    raise ValueError(f"unknown reference {reference!r}")


def _frozen_parts(model: DrivenPumpModel, s: float):
    th = model.path.evaluate(s)
    return model.pump_block(th), model.lead_coupling(th)


def _matching_solve(Hp, c, attach, mode: LeadMode) -> np.ndarray:
    m = Hp.shape[0]
    n = len(c)
    E, k = mode.E, mode.k
    M = np.zeros((m + n, m + n), dtype=complex)
    rhs = np.zeros((m + n, n), dtype=complex)
    M[:m, :m] = E * np.eye(m) - Hp
    for j, p in enumerate(attach):
        # pump row p: -c_j psi_j(1), psi_j(1) = delta e^{-ik} + S_j e^{ik}
        M[p, m + j] -= c[j] * np.exp(1j * k)
        rhs[p, j] += c[j] * np.exp(-1j * k)
        # lead row: (E-2) psi(1) + psi(2) - conj(c) phi_p = 0, both plane-wave
        # brackets reduce to -1 because E - 2 = -2 cos k
        M[m + j, m + j] = -1.0
        M[m + j, p] = -np.conj(c[j])
        rhs[m + j, j] = 1.0
    if np.linalg.cond(M) > _COND_LIMIT:
        raise SingularMatching(f"matching system singular at E={E} (bound state?)")
    return np.linalg.solve(M, rhs)[m:, :]


def scattering_matrix(model: DrivenPumpModel, s: float, E: float,
                      reference: str = "neumann") -> ScatteringMatrix:
    """Frozen S(s, E) by mode matching.

    Parameters
    ----------
    model : DrivenPumpModel
    s, E : float
        Epoch and energy (strictly inside the band).
    reference : {"neumann", "dirichlet", "raw"}
        Decoupled reference against which the phase of ``S`` is measured.
    """
    mode = lead_mode(E)
    Hp, c = _frozen_parts(model, s)
    S = _matching_solve(Hp, c, model.geometry.attach_map, mode)
    return ScatteringMatrix(float(s), float(E), mode, S * reference_phase(E, reference))


def _green(Hp, c, attach, mode):
    m = Hp.shape[0]
    sigma = np.zeros((m, m), dtype=complex)
    for j, p in enumerate(attach):
        sigma[p, p] -= abs(c[j]) ** 2 * np.exp(1j * mode.k)
    A = mode.E * np.eye(m) - Hp - sigma
    if np.linalg.cond(A) > _COND_LIMIT:
        raise SingularMatching(f"dressed pump block singular at E={mode.E}")
    return np.linalg.inv(A)


def _fisher_lee(G, c, attach, mode):
    n = len(c)
    idx = np.asarray(attach)
    return -np.eye(n) + 2j * np.sin(mode.k) * (np.conj(c)[:, None] * G[np.ix_(idx, idx)] * c[None, :])


def scattering_matrix_gf(model: DrivenPumpModel, s: float, E: float,
                         reference: str = "neumann") -> ScatteringMatrix:
    """Frozen S(s, E) from the dressed pump Green's function.

    ``S_ji = -delta_ji + 2i sin k conj(c_j) G_{p_j p_i} c_i`` with
    ``G = (E - H_p - Sigma)^{-1}`` and ``Sigma = -sum_j |c_j|^2 e^{ik} P_{p_j}``.
    """
    mode = lead_mode(E)
    Hp, c = _frozen_parts(model, s)
    attach = model.geometry.attach_map
    S = _fisher_lee(_green(Hp, c, attach, mode), c, attach, mode)
    return ScatteringMatrix(float(s), float(E), mode, S * reference_phase(E, reference))


def _analytic_derivative(model, s, E, reference):
    mode = lead_mode(E)
    path = model.path
    th, thd = path.evaluate(s), path.derivative(s)
    Hp, c = model.pump_block(th), model.lead_coupling(th)
    dHp, dc = model.pump_block_rate(thd), model.lead_coupling_rate(thd)
    attach = model.geometry.attach_map
    G = _green(Hp, c, attach, mode)
    dsig = np.zeros_like(G)
    for j, p in enumerate(attach):
        dsig[p, p] -= 2.0 * np.real(np.conj(c[j]) * dc[j]) * np.exp(1j * mode.k)
    dG = G @ (dHp + dsig) @ G
    idx = np.asarray(attach)
    Gpp, dGpp = G[np.ix_(idx, idx)], dG[np.ix_(idx, idx)]
    cc = np.conj(c)[:, None]
    dcc = np.conj(dc)[:, None]
    dS = 2j * np.sin(mode.k) * (dcc * Gpp * c[None, :] + cc * dGpp * c[None, :] + cc * Gpp * dc[None, :])
    return dS * reference_phase(E, reference)


def smatrix_derivative(model: DrivenPumpModel, s: float, E: float, step: float = 1e-4,
                       method: str = "richardson", reference: str = "neumann",
                       rtol: float = 1e-4) -> SDerivative:
    """Epoch derivative dS/ds.

    ``method="richardson"`` extrapolates central differences with steps
    ``step`` and ``step/2``; the reported error is their max-norm difference
    and :class:`DerivativeUnstable` is raised when it exceeds ``rtol`` relative
    to the result. ``method="analytic"`` differentiates the Green's-function
    formula through dH/ds (error reported as 0).
    """
    if method == "analytic":
        return SDerivative(_analytic_derivative(model, s, E, reference), 0.0)
    if method != "richardson":
        raise ValueError(f"unknown method {method!r}")

    def S(x):
        return scattering_matrix(model, x, E, reference).S

    def central(h):
        return (S(s + h) - S(s - h)) / (2.0 * h)

    d1, d2 = central(step), central(step / 2.0)
    dS = (4.0 * d2 - d1) / 3.0
    err = float(np.max(np.abs(d2 - d1)))
    scale = max(float(np.max(np.abs(dS))), 1.0)
    if err > rtol * scale:
        raise DerivativeUnstable(f"step estimates differ by {err:.3g} at s={s}, E={E}")
    return SDerivative(dS, err)
