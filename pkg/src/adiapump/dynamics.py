"""Adiabatic propagation of a Fermi sea and current measurements.

Lab time ``t = s / eps``. Orbitals of the truncated lattice are advanced with
the Crank-Nicolson (Cayley) midpoint step, which is exactly unitary.

Current operators are commutators ``I = i[H(s), F]`` with a counting
operator ``F``: a smooth switch in the lead coordinate (position kind) or in
the exterior scaling generator ``A`` (dilation kinds). Because ``F`` does not
depend on time, ``<F>(t) - <F>(0)`` equals the time integral of ``<I>``; this
is the charge that has passed the ammeter.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.polynomial import chebyshev as C
from scipy.integrate import simpson
from scipy.linalg import eigh_tridiagonal

from .bpt import SpectralDensity
from .errors import AmmeterOutOfRange, BudgetExceeded, LinearSolveFailure, PlanViolation
from .model import DrivenPumpModel, LatticeGeometry, frozen_hamiltonian, smoothstep
from .scattering import lead_mode

__all__ = [
    "SwitchFunction",
    "ramp_profile",
    "exterior_scaling_generator",
    "SpectralFilter",
    "CurrentOperator",
    "current_operator",
    "OrbitalEnsemble",
    "fermi_sea",
    "level_spacing_smearing",
    "PropagationPlan",
    "make_plan",
    "propagate",
    "current_expectation",
    "Ammeter",
    "MeasurementResult",
    "measure_pumped_charge",
]

V_MAX = 2.0  # largest group velocity of the lead band


# ----------------------------------------------------------------- switches


@dataclass(frozen=True)
class SwitchFunction:
    """Monotone C2 step: 0 for ``alpha <= -1``, 1 for ``alpha >= 1``.

    Applied as ``f((x - a) / width)``.
    """

    width: float = 4.0

    def __call__(self, alpha):
        return smoothstep(0.5 * (np.asarray(alpha, dtype=float) + 1.0))

    def at(self, x, a):
        return self((np.asarray(x, dtype=float) - a) / self.width)


def ramp_profile(x0: float = 2.0, x1: float = 10.0) -> Callable[[np.ndarray], np.ndarray]:
    """Profile ``v(x) = x * smoothstep((x - x0)/(x1 - x0))``: 0 near the pump, ``x`` far out."""
    def v(x):
        x = np.asarray(x, dtype=float)
        return x * smoothstep((x - x0) / (x1 - x0))
    return v


def _lead_generator_offdiag(L: int, v_profile) -> np.ndarray:
    """Real couplings ``c_x`` with ``A[x, x+1] = -i c_x`` on one lead."""
    v = v_profile(np.arange(1, L + 1))
    return 0.25 * (v[:-1] + v[1:])


def exterior_scaling_generator(geometry: LatticeGeometry, v_profile=None) -> sp.csr_matrix:
    """Discrete ``A = (1/2i)(D v + v D)`` on every lead, zero on the pump.

    ``D`` is the antisymmetric central difference, so ``A`` is Hermitian,
    purely imaginary and block diagonal over the leads.
    """
    v_profile = v_profile or ramp_profile()
    L, N = geometry.lead_length, geometry.n_sites
    c = _lead_generator_offdiag(L, v_profile)
    rows, cols, vals = [], [], []
    for j in range(geometry.n_leads):
        idx = np.arange(geometry.lead_slice(j).start, geometry.lead_slice(j).stop)
        rows += [idx[:-1], idx[1:]]
        cols += [idx[1:], idx[:-1]]
        vals += [-1j * c, 1j * c]
    A = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                      shape=(N, N)).tocsr()
    A.eliminate_zeros()
    return A


# ------------------------------------------------------------------- filter


def _bump_edge(t):
    """C-infinity transition: 1 for t <= 0, 0 for t >= 1."""
    t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
    with np.errstate(divide="ignore", over="ignore"):
        a = np.where(t < 1.0, np.exp(-1.0 / np.maximum(1.0 - t, 1e-300)), 0.0)
        b = np.where(t > 0.0, np.exp(-1.0 / np.maximum(t, 1e-300)), 0.0)
    return a / (a + b)


@dataclass(frozen=True)
class SpectralFilter:
    """Smooth energy window ``chi`` applied through a Chebyshev expansion.

    ``chi = 1`` on ``[center - plateau, center + plateau]`` and 0 outside
    ``[center - support, center + support]``. The expansion lives on
    ``bounds`` (which must contain the spectrum); its degree is doubled until
    the sup error on a dense grid is at most ``tol``.
    """

    center: float
    plateau: float
    support: float
    bounds: tuple[float, float] = (-0.5, 4.5)
    tol: float = 1e-8
    degree: int = field(init=False)
    coefficients: np.ndarray = field(init=False, repr=False)
    sup_error: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.plateau < self.support:
            raise ValueError("need 0 < plateau < support")
        lo, hi = self.center - self.support, self.center + self.support
        if not (0.0 < lo and hi < 4.0):
            raise ValueError("filter support must lie inside (0, 4)")
        a, b = self.bounds
        if not (a <= 0.0 and b >= 4.0):
            raise ValueError("bounds must cover the lead band [0, 4]")
        grid = np.linspace(-1.0, 1.0, 40001)
        target = self.chi(self._to_energy(grid))
        deg = 64
        while True:
            coef = C.chebinterpolate(lambda u: self.chi(self._to_energy(u)), deg)
            err = float(np.max(np.abs(C.chebval(grid, coef) - target)))
            if err <= self.tol or deg >= 16384:
                break
            deg *= 2
        object.__setattr__(self, "degree", deg)
        object.__setattr__(self, "coefficients", coef)
        object.__setattr__(self, "sup_error", err)

    def _to_energy(self, u):
        a, b = self.bounds
        return 0.5 * (b - a) * np.asarray(u) + 0.5 * (b + a)

    def chi(self, E):
        d = np.abs(np.asarray(E, dtype=float) - self.center)
        return _bump_edge((d - self.plateau) / (self.support - self.plateau))

    def apply(self, H: sp.spmatrix, V: np.ndarray) -> np.ndarray:
        """``chi(H) V`` by the three-term Chebyshev recurrence."""
        a, b = self.bounds
        alpha, beta = 2.0 / (b - a), -(b + a) / (b - a)
        Hs = alpha * H + beta * sp.identity(H.shape[0], format="csr")
        c = self.coefficients
        t0 = V
        t1 = Hs @ V
        out = c[0] * t0 + c[1] * t1
        for ck in c[2:]:
            t0, t1 = t1, 2.0 * (Hs @ t1) - t0
            out = out + ck * t1
        return out


def gershgorin_bounds(H: sp.spmatrix) -> tuple[float, float]:
    H = sp.csr_matrix(H)
    d = H.diagonal().real
    r = np.asarray(abs(H).sum(axis=1)).ravel() - np.abs(d)
    return float(np.min(d - r)), float(np.max(d + r))


# ------------------------------------------------------------------ current


@dataclass
class CurrentOperator:
    """``I = i[H, F]`` for a counting operator ``F`` on one lead.

    ``F`` is a sparse diagonal (position kind) or a dense block on the lead
    slice (dilation kinds). With a filter the measured operator is
    ``chi(H) I chi(H)``.
    """

    lead: int
    a: float
    kind: str
    H: sp.csr_matrix
    F: object
    block: slice | None
    filter: SpectralFilter | None = None

    def apply_F(self, V: np.ndarray) -> np.ndarray:
        if self.block is None:
            return self.F @ V
        out = np.zeros_like(V, dtype=np.result_type(V, self.F))
        out[self.block] = self.F @ V[self.block]
        return out

    def counting(self, V: np.ndarray, weights: np.ndarray) -> float:
        """``sum_m w_m <psi_m|F|psi_m>``."""
        if V.size == 0:
            return 0.0
        z = np.einsum("im,im->m", V.conj(), self.apply_F(V))
        return float(np.dot(weights, z.real))

    def expectation(self, V: np.ndarray, weights: np.ndarray, prefiltered: bool = False) -> complex:
        """``sum_m w_m <psi_m|I|psi_m>`` before discarding the imaginary part.

        With ``prefiltered=True`` the caller already replaced ``V`` by
        ``chi(H) V``.
        """
        if V.size == 0:
            return 0j
        if self.filter is not None and not prefiltered:
            V = self.filter.apply(self.H, V)
        HV = self.H @ V
        IV = 1j * (self.H @ self.apply_F(V) - self.apply_F(HV))
        z = np.einsum("im,im->m", V.conj(), IV)
        return complex(np.dot(weights, z))

    def matrix(self) -> sp.csr_matrix:
        """Explicit matrix of the (unfiltered) current operator."""
        N = self.H.shape[0]
        if self.block is None:
            F = sp.csr_matrix(self.F)
        else:
            Fd = np.zeros((N, N), dtype=complex)
            Fd[self.block, self.block] = self.F
            F = sp.csr_matrix(Fd)
        return sp.csr_matrix(1j * (self.H @ F - F @ self.H))

    def dense(self) -> np.ndarray:
        """Explicit dense matrix including the filter (small systems only)."""
        M = self.matrix().toarray()
        if self.filter is None:
            return M
        X = self.filter.apply(self.H, np.eye(self.H.shape[0]))
        return X @ M @ X


def _dilation_switch_blocks(L, v_profile, a, switch: SwitchFunction):
    """``f(A_j - a)`` and ``f(-A_j - a)`` on one lead block.

    In the gauge ``U = diag(i^x)`` the generator becomes the real symmetric
    tridiagonal ``T`` with off-diagonal ``c_x``. ``T`` anticommutes with the
    staggering ``(-1)^x``, so ``f(-T - a)`` is the staggered copy of
    ``f(T - a)``.
    """
    c = _lead_generator_offdiag(L, v_profile)
    lam, W = eigh_tridiagonal(np.zeros(L), c)
    G = (W * switch((lam - a) / switch.width)) @ W.T
    x = np.arange(L)
    gauge = 1j ** (x[:, None] - x[None, :])
    stag = (-1.0) ** (x[:, None] - x[None, :])
    out = gauge * G
    inc = gauge * stag * G
    even = (x[:, None] - x[None, :]) % 2 == 0
    # i^(x-y) = (-1)^((x-y)/2) on even offsets, which makes the sum exactly real
    both = np.where(even, 2.0 * G * np.where(((x[:, None] - x[None, :]) // 2) % 2 == 0, 1.0, -1.0), 0.0)
    return out, inc, both


def current_operator(geometry: LatticeGeometry, H: sp.spmatrix, lead: int, a: float,
                     kind: str = "position", switch: SwitchFunction | None = None,
                     filt: SpectralFilter | None = None, v_profile=None,
                     travel_margin: float = 0.0) -> CurrentOperator:
    """Current operator of lead ``lead`` with ammeter at ``a``.

    Parameters
    ----------
    geometry : LatticeGeometry
    H : sparse matrix
        Frozen Hamiltonian at the measurement epoch.
    lead : int
    a : float
        Switch offset (sites for ``position``, generator units otherwise).
    kind : {"position", "dilation_out", "dilation_in", "dilation"}
        ``dilation`` is the sum of the outgoing and incoming parts.
    switch : SwitchFunction
    filt : SpectralFilter, optional
    v_profile : callable, optional
        Exterior scaling profile (default :func:`ramp_profile`).
    travel_margin : float
        Extra sites that must remain between the switch and the far wall.

    Raises
    ------
    AmmeterOutOfRange
        If ``[a - width, a + width]`` does not fit inside the lead.
    """
    switch = switch or SwitchFunction()
    L = geometry.lead_length
    if not 0 <= lead < geometry.n_leads:
        raise AmmeterOutOfRange(f"no lead {lead}")
    if a - switch.width < 1 or a + switch.width + travel_margin > L:
        raise AmmeterOutOfRange(f"ammeter a={a} with width {switch.width} does not fit in L={L}")
    H = sp.csr_matrix(H, dtype=complex)
    sl = geometry.lead_slice(lead)
    if kind == "position":
        d = np.zeros(geometry.n_sites)
        d[sl] = switch.at(np.arange(1, L + 1), a)
        return CurrentOperator(lead, a, kind, H, sp.diags(d, format="csr"), None, filt)
    out, inc, both = _dilation_switch_blocks(L, v_profile or ramp_profile(), a, switch)
    F = {"dilation_out": out, "dilation_in": inc, "dilation": both}.get(kind)
    if F is None:
        raise ValueError(f"unknown current kind {kind!r}")
    return CurrentOperator(lead, a, kind, H, F, sl, filt)


# ---------------------------------------------------------------- ensembles


@dataclass
class OrbitalEnsemble:
    """Weighted orbitals (columns of ``orbitals``) representing ``rho(H)``."""

    orbitals: np.ndarray
    weights: np.ndarray
    energies: np.ndarray

    def __len__(self):
        return len(self.weights)

    def gram_residual(self) -> float:
        V = self.orbitals
        if V.shape[1] == 0:
            return 0.0
        return float(np.max(np.abs(V.conj().T @ V - np.eye(V.shape[1]))))

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.orbitals, axis=0)


def level_spacing_smearing(mu: float, L: int) -> float:
    """Width ``pi v(mu) / L``, about one level-pair spacing of the finite leads."""
    return math.pi * lead_mode(mu).v / L


def fermi_sea(H_minus, rho, smearing: float = 0.0, drop_tol: float = 1e-14) -> OrbitalEnsemble:
    """Eigen-orbitals of ``H_minus`` weighted by the occupation ``rho(E_m)``.

    Parameters
    ----------
    H_minus : matrix
        Hamiltonian before the pump starts. Real matrices give real orbitals.
    rho : SpectralDensity or callable
        Occupation as a function of energy (``SpectralDensity.occupation``).
    smearing : float
        Fermi width replacing each jump (only for ``SpectralDensity``).
    drop_tol : float
        Orbitals with ``|w| <= drop_tol`` are discarded.
    """
    H = H_minus.toarray() if sp.issparse(H_minus) else np.asarray(H_minus)
    if np.iscomplexobj(H) and not np.any(H.imag):
        H = H.real
    E, V = np.linalg.eigh(H)
    if isinstance(rho, SpectralDensity):
        w = rho.occupation(E, smearing=smearing)
    else:
        w = np.asarray(rho(E), dtype=float)
    keep = np.abs(w) > drop_tol
    return OrbitalEnsemble(V[:, keep], w[keep], E[keep])


# -------------------------------------------------------------------- plans


@dataclass(frozen=True)
class PropagationPlan:
    """Time grid and lattice size for one adiabatic run.

    ``n_steps`` lab-time steps of size ``dt`` cover ``s_span``; measurements
    happen every ``stride`` steps (and every ``filter_stride`` steps for
    filtered ammeters).
    """

    eps: float
    dt: float
    n_steps: int
    s_span: tuple[float, float]
    stride: int
    filter_stride: int
    lead_length: int
    ammeter: float
    margin: int = 50

    @property
    def measurement_epochs(self) -> np.ndarray:
        k = np.arange(0, self.n_steps + 1, self.stride)
        if k[-1] != self.n_steps:
            k = np.append(k, self.n_steps)
        return self.s_span[0] + k * self.dt * self.eps

    @property
    def required_length(self) -> int:
        return required_lead_length(self.ammeter, self.eps, self.s_span, self.margin)

    def validate(self):
        if self.lead_length < self.required_length:
            raise PlanViolation(
                f"lead_length {self.lead_length} < a + v_max T + margin = {self.required_length}")
        if self.margin < 50:
            raise PlanViolation("margin must be at least 50 sites")

    def as_dict(self):
        return {
            "eps": self.eps, "dt": self.dt, "n_steps": self.n_steps,
            "s_span": list(self.s_span), "stride": self.stride,
            "filter_stride": self.filter_stride, "lead_length": self.lead_length,
            "ammeter": self.ammeter, "margin": self.margin,
        }


def required_lead_length(a, eps, s_span, margin=50) -> int:
    T = (s_span[1] - s_span[0]) / eps
    return int(math.ceil(a + V_MAX * T + margin))


def make_plan(model: DrivenPumpModel, eps: float, ammeter: float, mu: float = 2.0,
              width: float = 4.0, dt: float = 0.05, lead_length: int | None = None,
              margin: int = 50, measure_dt: float = 0.1, filter_measure_dt: float = 1.0,
              tail_extra: float = 40.0) -> PropagationPlan:
    """Plan covering the pump cycles plus a tail.

    The tail lets charge emitted at the end of the cycle travel past the
    ammeter: it lasts ``(a + 2 width + tail_extra) / v(mu)`` lab time.
    With ``lead_length=None`` the smallest admissible ``L`` is used.
    """
    v = lead_mode(mu).v
    T_cycle = model.path.end / eps
    T = T_cycle + (ammeter + 2.0 * width + tail_extra) / v
    n_steps = int(math.ceil(T / dt))
    dt = T / n_steps
    s_span = (0.0, n_steps * dt * eps)
    stride = max(1, int(round(measure_dt / dt)))
    fstride = max(stride, int(round(filter_measure_dt / dt)))
    fstride -= fstride % stride
    L = required_lead_length(ammeter + width, eps, s_span, margin) if lead_length is None else int(lead_length)
    plan = PropagationPlan(eps, dt, n_steps, s_span, stride, fstride, L, float(ammeter + width), margin)
    plan.validate()
    return plan


# -------------------------------------------------------------- propagation


def propagate(ensemble: OrbitalEnsemble, model: DrivenPumpModel, plan: PropagationPlan,
              deadline: float | None = None) -> Iterator[tuple[int, float, OrbitalEnsemble]]:
    """Advance the orbitals and yield ``(step, s, ensemble)`` at every stride.

    Each step solves ``(1 + i dt/2 H_mid) psi' = (1 - i dt/2 H_mid) psi`` with
    ``H_mid = H(s_mid) - 2`` (shifting by the band center changes only a
    global phase). The factorization is reused while ``H`` is constant.

    Raises
    ------
    PlanViolation
        If the lattice is shorter than the plan requires.
    LinearSolveFailure
    BudgetExceeded
        If ``time.monotonic()`` passes ``deadline``.
    """
    plan.validate()
    if model.geometry.lead_length != plan.lead_length:
        raise PlanViolation("model lead_length differs from the plan")
    N = model.geometry.n_sites
    eye = sp.identity(N, format="csc", dtype=complex)
    V = np.array(ensemble.orbitals, dtype=complex)
    s0 = plan.s_span[0]
    yield 0, s0, OrbitalEnsemble(V, ensemble.weights, ensemble.energies)
    lu = None
    last_theta = None
    for n in range(plan.n_steps):
        s_mid = s0 + (n + 0.5) * plan.dt * plan.eps
        theta = model.path.evaluate(s_mid)
        if lu is None or not np.array_equal(theta, last_theta):
            Hm = (frozen_hamiltonian(model, s_mid) - 2.0 * eye).tocsc()
            try:
                lu = spla.splu((eye + 0.5j * plan.dt * Hm).tocsc())
            except RuntimeError as exc:
                raise LinearSolveFailure(str(exc)) from exc
            rhs_op = (eye - 0.5j * plan.dt * Hm).tocsr()
            last_theta = theta
        V = lu.solve(rhs_op @ V)
        if deadline is not None and time.monotonic() > deadline:
            raise BudgetExceeded(f"wall-time budget exhausted at step {n + 1}/{plan.n_steps}")
        step = n + 1
        if step % plan.stride == 0 or step == plan.n_steps:
            yield step, s0 + step * plan.dt * plan.eps, OrbitalEnsemble(V, ensemble.weights, ensemble.energies)


def current_expectation(ensemble: OrbitalEnsemble, op: CurrentOperator, tol: float = 1e-10,
                        filtered_orbitals: np.ndarray | None = None) -> float:
    """``tr(rho I) = sum_m w_m <psi_m|I|psi_m>``; the imaginary residue must stay below ``tol``.

    ``filtered_orbitals`` may supply ``chi(H) psi_m`` computed once for
    several operators sharing the same filter and Hamiltonian.
    """
    if filtered_orbitals is not None:
        z = op.expectation(filtered_orbitals, ensemble.weights, prefiltered=True)
    else:
        z = op.expectation(ensemble.orbitals, ensemble.weights)
    scale = max(1.0, float(np.sum(np.abs(ensemble.weights))))
    if abs(z.imag) > tol * scale:
        raise ArithmeticError(f"current expectation has imaginary part {z.imag:.3g}")
    return z.real


# -------------------------------------------------------------- measurement


@dataclass(frozen=True)
class Ammeter:
    """One measurement setting applied to every lead."""

    a: float
    kind: str = "position"
    filtered: bool = False

    @property
    def label(self) -> str:
        return f"{self.kind}{'+filter' if self.filtered else ''}@{self.a:g}"


@dataclass
class AmmeterTrace:
    ammeter: Ammeter
    epochs: np.ndarray
    current_raw: np.ndarray
    baseline: np.ndarray
    counting: np.ndarray | None
    charge_counting: np.ndarray | None
    charge_quadrature: np.ndarray

    @property
    def current(self) -> np.ndarray:
        return self.current_raw - self.baseline

    @property
    def charge(self) -> np.ndarray:
        """Cycle charge per lead (counting when available)."""
        return self.charge_counting if self.charge_counting is not None else self.charge_quadrature


@dataclass
class MeasurementResult:
    plan: PropagationPlan
    n_orbitals: int
    smearing: float
    traces: dict
    norm_drift: float
    wall_time: float = 0.0


def _default_filter(mu, H):
    lo, hi = gershgorin_bounds(H)
    half = min(0.6, 0.9 * mu, 0.9 * (4.0 - mu))
    return SpectralFilter(mu, 0.5 * half, half, bounds=(min(lo, 0.0) - 0.1, max(hi, 4.0) + 0.1))


def measure_pumped_charge(model: DrivenPumpModel, rho: SpectralDensity, plan: PropagationPlan,
                          ammeters: Sequence[Ammeter] = (Ammeter(30.0),),
                          width: float = 4.0, smearing: float | str = "auto",
                          v_profile=None, filt: SpectralFilter | None = None,
                          deadline: float | None = None) -> MeasurementResult:
    """Propagate ``rho(H_-)`` and record ``eps^-1 <I_j>`` for every lead and ammeter.

    The initial orbitals are eigenvectors of ``H_-``, so the frozen (baseline)
    evolution is stationary: the baseline current equals the initial
    expectation and the baseline counting charge is constant. Cycle charges
    come from the counting operator (unfiltered ammeters) and, as a
    cross-check, from Simpson quadrature of the sampled current.

    Parameters
    ----------
    smearing : float or "auto"
        Width of the Fermi function replacing each jump of ``rho``; ``"auto"``
        uses :func:`level_spacing_smearing` at the lowest jump.
    """
    t0 = time.perf_counter()
    if model.geometry.lead_length != plan.lead_length:
        model = model.with_lead_length(plan.lead_length)
    geom = model.geometry
    switch = SwitchFunction(width)
    if smearing == "auto":
        smearing = min((level_spacing_smearing(E, geom.lead_length) for E, _ in rho.jumps), default=0.0)
    H0 = frozen_hamiltonian(model, plan.s_span[0])
    ens = fermi_sea(H0, rho, smearing=float(smearing))
    if filt is None and any(am.filtered for am in ammeters):
        mu = rho.jumps[0][0] if rho.jumps else 2.0
        filt = _default_filter(mu, H0)

    def ops_at(H):
        return {
            am: [current_operator(geom, H, j, am.a, am.kind, switch,
                                  filt if am.filtered else None, v_profile)
                 for j in range(geom.n_leads)]
            for am in ammeters
        }

    n = geom.n_leads
    rec = {am: {"s": [], "I": [], "N": []} for am in ammeters}
    ops0 = ops_at(H0)
    N0 = {am: np.array([op.counting(ens.orbitals, ens.weights) for op in ops0[am]])
          for am in ammeters if not am.filtered}
    base = {am: np.array([current_expectation(ens, op) for op in ops0[am]]) / plan.eps
            for am in ammeters}
    for step, s, e in propagate(ens, model, plan, deadline):
        H = sp.csr_matrix(frozen_hamiltonian(model, s), dtype=complex)
        ops = {am: [replace(op, H=H) for op in ops0[am]] for am in ammeters}
        filtered_now = step % plan.filter_stride == 0 or step == plan.n_steps
        Vf = filt.apply(H, e.orbitals) if filt is not None and filtered_now else None
        for am in ammeters:
            if am.filtered and not filtered_now:
                continue
            r = rec[am]
            r["s"].append(s)
            fo = Vf if am.filtered else None
            r["I"].append([current_expectation(e, op, filtered_orbitals=fo) / plan.eps for op in ops[am]])
            if not am.filtered:
                r["N"].append([op.counting(e.orbitals, e.weights) for op in ops[am]])
        last = e
    drift = float(np.max(np.abs(last.norms() - 1.0))) if len(last) else 0.0

    traces = {}
    for am in ammeters:
        r = rec[am]
        s = np.array(r["s"])
        I = np.array(r["I"]).reshape(-1, n)
        q_quad = simpson(I - base[am], x=s, axis=0)
        if am.filtered:
            cnt, q_cnt = None, None
        else:
            cnt = np.array(r["N"]).reshape(-1, n) - N0[am]
            q_cnt = cnt[-1].copy()
        traces[am.label] = AmmeterTrace(am, s, I, base[am], cnt, q_cnt, q_quad)
    return MeasurementResult(plan, len(ens), float(smearing), traces, drift,
                             time.perf_counter() - t0)
