"""Half-line lattice laboratory for dilation-operator identities.

Grid points ``x_n = (n - 1/2) h``, ``n = 1..N``. ``H0`` is the lattice
Laplacian ``(2 psi_n - psi_{n-1} - psi_{n+1}) / h^2`` with the ghost value
``psi_0 = psi_1`` (Neumann end). ``A0 = (XP + PX)/2`` uses the antisymmetric
central difference for ``P``; it is the tridiagonal matrix with
``A0[n, n+1] = -i (x_n + x_{n+1}) / (4h)``. In the gauge ``U = diag(i^n)``
both ``H0`` and ``U^* A0 U`` are real symmetric tridiagonal, so their spectral
data come from LAPACK's tridiagonal solvers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad
from scipy.linalg import eigh, eigh_tridiagonal

from .errors import EmptyWindow, UnsupportedFunction
from .model import DrivenPumpModel, frozen_hamiltonian, smoothstep

__all__ = [
    "HalfLineGrid",
    "CheckResult",
    "PullThroughResult",
    "MourreResult",
    "hs_norm_check",
    "trace_formula_check",
    "pull_through_check",
    "refinement_study",
    "lattice_commutator_symbol",
    "mourre_bound",
    "interior_weight",
    "grid_mourre",
    "pump_mourre",
]


@dataclass(frozen=True)
class HalfLineGrid:
    N: int
    h: float

    @property
    def x(self) -> np.ndarray:
        return (np.arange(1, self.N + 1) - 0.5) * self.h

    @property
    def length(self) -> float:
        return self.N * self.h

    @property
    def band_top(self) -> float:
        return 4.0 / self.h**2

    def h0_tridiagonal(self):
        d = np.full(self.N, 2.0)
        d[0] = 1.0
        return d / self.h**2, -np.ones(self.N - 1) / self.h**2

    def a0_offdiagonal(self) -> np.ndarray:
        """``c_n`` with ``A0[n, n+1] = -i c_n``."""
        x = self.x
        return (x[:-1] + x[1:]) / (4.0 * self.h)

    @property
    def gauge(self) -> np.ndarray:
        return 1j ** np.arange(self.N)

    @property
    def H0(self) -> sp.csr_matrix:
        d, e = self.h0_tridiagonal()
        return sp.diags([e, d, e], [-1, 0, 1], format="csr")

    @property
    def X(self) -> sp.csr_matrix:
        return sp.diags(self.x, format="csr")

    @property
    def P(self) -> sp.csr_matrix:
        o = np.full(self.N - 1, 0.5 / self.h)
        return sp.diags([1j * o, -1j * o], [-1, 1], format="csr")

    @property
    def A0(self) -> sp.csr_matrix:
        c = self.a0_offdiagonal()
        return sp.diags([1j * c, -1j * c], [-1, 1], format="csr")

    def exterior_generator(self, v_profile: Callable) -> sp.csr_matrix:
        """``(1/2i)(D v + v D)`` with ``D`` the central difference and profile ``v(x)``."""
        v = v_profile(self.x)
        c = (v[:-1] + v[1:]) / (4.0 * self.h)
        return sp.diags([1j * c, -1j * c], [-1, 1], format="csr")

    def hermiticity_residual(self) -> float:
        out = 0.0
        for M in (self.H0, self.X, self.P, self.A0):
            out = max(out, abs(M - M.conj().T).max())
        return float(out)

    def refined(self, length_factor: int = 2) -> "HalfLineGrid":
        """Grid with spacing ``h/2`` and the box length multiplied by ``length_factor``."""
        return HalfLineGrid(self.N * 2 * length_factor, self.h / 2.0)


@dataclass
class CheckResult:
    check: str
    lhs: float
    rhs: float
    error: float
    grid: HalfLineGrid | None = None

    @property
    def relative_error(self) -> float:
        return self.error


@dataclass
class PullThroughResult:
    residual: float
    relative: float
    operator_norm: float
    grid: HalfLineGrid | None = None


@dataclass
class MourreResult:
    theta: float
    dimension: int
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0))


def _support_edge(fun, lo, hi, rel=1e-13, n=20001):
    """Smallest ``t`` in ``[lo, hi]`` beyond which ``|fun| <= rel * max|fun|``."""
    t = np.linspace(lo, hi, n)
    vals = np.abs(fun(t))
    big = vals.max()
    if big == 0:
        return lo
    above = np.nonzero(vals > rel * big)[0]
    return t[min(above[-1] + 1, n - 1)]


def _check_low_energy(grid: HalfLineGrid, g, frac: float, rel: float = 1e-8):
    Ecut = frac * grid.band_top
    E = np.linspace(1e-9, grid.band_top, 200001)
    vals = np.abs(g(E))
    big = vals.max()
    if big == 0:
        return
    tail = vals[E >= Ecut].max(initial=0.0)
    if tail > rel * big:
        raise UnsupportedFunction(
            f"|g| reaches {tail / big:.2e} of its maximum above E={Ecut:.3g} (quadratic region ends near 1/h^2)")


def _overlap_data(grid: HalfLineGrid, g, f, e_frac=0.1):
    """Selected eigenvalues of ``H0`` and ``A0`` and the squared overlaps."""
    _check_low_energy(grid, g, e_frac)
    d, e = grid.h0_tridiagonal()
    Emax = _support_edge(g, 0.0, e_frac * grid.band_top)
    E, WH = eigh_tridiagonal(d, e, select="v", select_range=(-1.0, max(Emax, 1e-12)))
    amax = float(_support_edge(lambda a: np.maximum(np.abs(f(a)), np.abs(f(-a))), 0.0, 200.0))
    a, WA = eigh_tridiagonal(np.zeros(grid.N), grid.a0_offdiagonal(), select="v",
                             select_range=(-amax, amax))
    u = grid.gauge
    O2 = (WH.T @ (u.real[:, None] * WA)) ** 2 + (WH.T @ (u.imag[:, None] * WA)) ** 2
    return E, a, O2


def _energy_integral(fun):
    val, _ = quad(fun, 0.0, np.inf, limit=400, epsabs=0.0, epsrel=1e-11)
    return val


def _line_integral(fun):
    val, _ = quad(fun, -np.inf, np.inf, limit=400, epsabs=0.0, epsrel=1e-11)
    return val


def hs_norm_check(grid: HalfLineGrid, g, f, e_frac: float = 0.1) -> CheckResult:
    """Frobenius norm of ``g(H0) f(A0)`` against its continuum value.

    ``rhs = (2 pi)^{-1/2} (int_0^inf |g|^2 / 2E dE)^{1/2} (int |f|^2 da)^{1/2}``.

    Raises
    ------
    UnsupportedFunction
        If ``|g|`` is not negligible above ``e_frac * 4/h^2``.
    """
    if not np.any(g(np.linspace(1e-6, 50, 1001))):
        return CheckResult("hs_norm", 0.0, 0.0, 0.0, grid)
    E, a, O2 = _overlap_data(grid, g, f, e_frac)
    lhs = float(np.sqrt(np.abs(g(E)) ** 2 @ O2 @ np.abs(f(a)) ** 2))
    rhs = float(np.sqrt(_energy_integral(lambda t: abs(g(t)) ** 2 / (2.0 * t))
                        * _line_integral(lambda t: abs(f(t)) ** 2) / (2.0 * np.pi)))
    err = abs(lhs - rhs) / rhs if rhs else abs(lhs)
    return CheckResult("hs_norm", lhs, rhs, float(err), grid)


def trace_formula_check(grid: HalfLineGrid, g, f, e_frac: float = 0.1) -> CheckResult:
    """``tr g(H0) f(A0)`` against ``(2 pi)^{-1} int g/2E dE * int f da``.

    When the right side vanishes the returned error is the absolute value of
    the left side.
    """
    if not np.any(g(np.linspace(1e-6, 50, 1001))):
        return CheckResult("trace", 0.0, 0.0, 0.0, grid)
    E, a, O2 = _overlap_data(grid, g, f, e_frac)
    lhs = float(g(E) @ O2 @ f(a))
    rhs = float(_energy_integral(lambda t: g(t) / (2.0 * t))
                * _line_integral(f) / (2.0 * np.pi))
    err = abs(lhs - rhs) / abs(rhs) if rhs != 0 else abs(lhs)
    return CheckResult("trace", lhs, rhs, float(err), grid)


def pull_through_check(grid: HalfLineGrid, f, e_window: float = 4.0,
                       inner: tuple[float, float] = (1.0, 0.5)) -> PullThroughResult:
    """Residual of ``H0 f(A0) = f(A0 - 2i) H0`` on low-energy states.

    Both sides are compressed to the spectral subspace ``H0 <= e_window``:
    the lattice ``A0`` also moves states toward the top of the band, where
    ``H0`` is far from the continuum operator. The returned ``residual`` is the
    largest entry of the compressed residual (position basis) in rows with
    ``inner[0] <= x <= inner[1] * length``; ``relative`` divides it by
    ``||H0|| = 4/h^2``. ``operator_norm`` is the spectral norm of the
    compressed residual, reported for information. Eigenvectors of ``A0``
    where ``|f|`` and ``|f(. - 2i)|`` are below ``1e-13`` of their maximum
    are dropped.
    """
    dH, eH = grid.h0_tridiagonal()
    E, W = eigh_tridiagonal(dH, eH, select="v", select_range=(-1.0, e_window))
    probe = np.array([-7.3, -1.1, 0.0, 0.4, 2.9, 11.0])
    fp = f(probe.astype(complex))
    if np.all(fp == fp[0]) and np.all(f(probe - 2j) == fp[0]):
        R = np.zeros((len(E), len(E)))
    else:
        amax = float(_support_edge(
            lambda t: np.maximum.reduce([np.abs(f(t + 0j)), np.abs(f(-t + 0j)),
                                         np.abs(f(t - 2j)), np.abs(f(-t - 2j))]), 0.0, 200.0))
        a, V = eigh_tridiagonal(np.zeros(grid.N), grid.a0_offdiagonal(), select="v",
                                select_range=(-amax, amax))
        u = grid.gauge
        B = V.T @ (np.conj(u)[:, None] * W)  # eigenbasis of A0 -> H0 window
        M = (B.conj().T * f(a.astype(complex))) @ B
        Ms = (B.conj().T * f(a - 2j)) @ B
        R = E[:, None] * M - Ms * E[None, :]
    x = grid.x
    rows = np.flatnonzero((x >= inner[0]) & (x <= inner[1] * grid.length))
    RW = R @ W.T
    res = 0.0
    for start in range(0, len(rows), 2048):
        blk = W[rows[start:start + 2048]] @ RW
        res = max(res, float(np.max(np.abs(blk))) if blk.size else 0.0)
    op = float(np.linalg.norm(R, 2)) if len(E) else 0.0
    return PullThroughResult(res, res / grid.band_top, op, grid)


def refinement_study(check, grid: HalfLineGrid, levels: int = 3, length_factor: int = 2,
                     key=lambda r: r.error, **kw):
    """Run ``check`` on ``levels`` successively refined grids.

    Returns the results and a flag telling whether ``key`` strictly decreases.
    """
    out = []
    for _ in range(levels):
        out.append(check(grid, **kw))
        grid = grid.refined(length_factor)
    vals = [key(r) for r in out]
    return out, all(b < a for a, b in zip(vals, vals[1:]))


# ------------------------------------------------------------------- Mourre


def lattice_commutator_symbol(E, h: float = 1.0):
    """Symbol of ``i[H0, A0]`` on the lattice: ``2E (1 - E h^2 / 4)``.

    The continuum value is ``2E``; the factor is ``cos^2(ph/2)`` in terms of
    the lattice momentum, and it vanishes at the top of the band.
    """
    E = np.asarray(E, dtype=float)
    return 2.0 * E * (1.0 - E * h * h / 4.0)


def mourre_bound(H, A, window: tuple[float, float], weight: np.ndarray | None = None) -> MourreResult:
    """Smallest eigenvalue of ``i[H, A]`` compressed to ``E_window(H)``.

    On a finite box every eigenvector satisfies the virial identity
    ``<psi|i[H, A]|psi> = 0``: the outward flow is cancelled at the far wall.
    ``weight`` (a diagonal in the site basis, 1 in the interior and 0 at the
    wall) removes that region; ``theta`` then solves
    ``K v = theta M v`` with ``K = W^* w C w W`` and ``M = W^* w^2 W``.

    Raises
    ------
    EmptyWindow
        If no eigenvalue of ``H`` lies in the window.
    """
    Hd = H.toarray() if sp.issparse(H) else np.asarray(H)
    Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
    Cm = 1j * (Hd @ Ad - Ad @ Hd)
    E, V = np.linalg.eigh(Hd)
    sel = (E >= window[0]) & (E <= window[1])
    if not np.any(sel):
        raise EmptyWindow(f"no eigenvalue in {window}")
    W = V[:, sel]
    w = np.ones(Hd.shape[0]) if weight is None else np.asarray(weight, dtype=float)
    K = W.conj().T @ (w[:, None] * Cm * w[None, :]) @ W
    K = 0.5 * (K + K.conj().T)
    M = W.conj().T @ ((w**2)[:, None] * W)
    M = 0.5 * (M + M.conj().T)
    th = eigh(K, M, eigvals_only=True)
    return MourreResult(float(th[0]), int(sel.sum()), th)


def interior_weight(x, length: float, start: float = 0.5, ramp: float = 0.3) -> np.ndarray:
    """1 up to ``start * length``, smoothly 0 from ``(start + ramp) * length``."""
    return 1.0 - smoothstep((np.asarray(x, dtype=float) / length - start) / ramp)


def grid_mourre(grid: HalfLineGrid, window=(1.0, 1.2)) -> MourreResult:
    """Mourre constant of ``(H0, A0)`` away from the far wall."""
    return mourre_bound(grid.H0, grid.A0, window, interior_weight(grid.x, grid.length))


def pump_mourre(model: DrivenPumpModel, s_values, window=(1.8, 2.2), lead_length: int = 200,
                v_profile=None) -> list[MourreResult]:
    """Mourre constant of ``(H(s), A)`` with the exterior scaling generator ``A``."""
    from .dynamics import exterior_scaling_generator

    model = model.with_lead_length(lead_length)
    geom = model.geometry
    A = exterior_scaling_generator(geom, v_profile)
    x = geom.lead_position()
    w = interior_weight(x, geom.lead_length)
    w[: geom.pump_sites] = 1.0
    return [mourre_bound(frozen_hamiltonian(model, s), A, window, w) for s in s_values]
