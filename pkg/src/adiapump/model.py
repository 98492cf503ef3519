"""Lattice pump model: geometry, smooth parameter paths and frozen Hamiltonians.

The scatterer is a block of ``m`` sites. Each of the ``n`` leads is a uniform
tight-binding chain (on-site 2, hopping -1, dispersion ``E = 2 - 2 cos k``)
whose first site couples to one pump site through a complex amplitude.

Global index layout of a truncated system: pump sites ``0..m-1`` followed by
lead ``j`` sites ``x = 1..L`` at ``m + j*L + (x-1)``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import ModelInvalid

__all__ = [
    "smoothstep",
    "smoothstep_derivative",
    "LatticeGeometry",
    "ParameterPath",
    "DrivenValue",
    "PumpHopping",
    "DrivenPumpModel",
    "AssumptionReport",
    "frozen_hamiltonian",
    "hamiltonian_derivative",
    "pump_adjacent_indices",
    "validate_assumptions",
    "model_from_dict",
    "model_to_dict",
    "load_model",
    "demo_model",
]


def smoothstep(u):
    """Quintic smoothstep, 0 for u <= 0 and 1 for u >= 1, C2 at both ends."""
    u = np.clip(u, 0.0, 1.0)
    return u**3 * (10.0 - 15.0 * u + 6.0 * u * u)


def smoothstep_derivative(u):
    u = np.asarray(u, dtype=float)
    inside = (u > 0.0) & (u < 1.0)
    return np.where(inside, 30.0 * u**2 * (1.0 - u) ** 2, 0.0)


# ---------------------------------------------------------------- geometry


@dataclass(frozen=True)
class LatticeGeometry:
    """Index bookkeeping for a pump block with ``n_leads`` attached chains.

    Parameters
    ----------
    n_leads : int
        Number of leads n.
    pump_sites : int
        Number of pump sites m.
    lead_length : int
        Sites per truncated lead L.
    attach_map : tuple of int
        ``attach_map[j]`` is the pump site that lead ``j`` couples to.
    """

    n_leads: int
    pump_sites: int
    lead_length: int
    attach_map: tuple[int, ...]

    def __post_init__(self):
        if self.n_leads < 1 or self.pump_sites < 1:
            raise ModelInvalid("n_leads and pump_sites must be positive")
        if self.lead_length < 0:
            raise ModelInvalid("lead_length must be non-negative")
        if len(self.attach_map) != self.n_leads:
            raise ModelInvalid("attach_map needs one entry per lead")
        for p in self.attach_map:
            if not 0 <= p < self.pump_sites:
                raise ModelInvalid(f"attach site {p} outside pump block")

    @property
    def n_sites(self) -> int:
        return self.pump_sites + self.n_leads * self.lead_length

    def pump_index(self, p: int) -> int:
        if not 0 <= p < self.pump_sites:
            raise IndexError(p)
        return p

    def lead_index(self, j: int, x) :
        """Global index of lead ``j`` site ``x`` (``x`` counted from 1)."""
        x = np.asarray(x)
        if np.any((x < 1) | (x > self.lead_length)) or not 0 <= j < self.n_leads:
            raise IndexError((j, x))
        return self.pump_sites + j * self.lead_length + (x - 1)

    def block_index(self, region, site):
        """Map ``("pump", p)`` or ``(j, x)`` to the global index."""
        if region == "pump":
            return self.pump_index(site)
        return self.lead_index(int(region), site)

    def lead_slice(self, j: int) -> slice:
        start = self.pump_sites + j * self.lead_length
        return slice(start, start + self.lead_length)

    def region_of(self, index: int):
        """Inverse of :meth:`block_index`."""
        if index < self.pump_sites:
            return ("pump", index)
        j, r = divmod(index - self.pump_sites, self.lead_length)
        return (j, r + 1)

    def lead_position(self) -> np.ndarray:
        """Site distance from the junction for every index (0 on the pump)."""
        x = np.zeros(self.n_sites)
        x[self.pump_sites:] = np.tile(np.arange(1, self.lead_length + 1), self.n_leads)
        return x

    def projector_diagonal(self, region) -> np.ndarray:
        """Diagonal of the block projection (pump block or lead ``j``)."""
        d = np.zeros(self.n_sites)
        if region == "pump":
            d[: self.pump_sites] = 1.0
        else:
            d[self.lead_slice(int(region))] = 1.0
        return d

    def with_lead_length(self, L: int) -> "LatticeGeometry":
        return replace(self, lead_length=int(L))


# ------------------------------------------------------------------- paths


@dataclass(frozen=True)
class ParameterPath:
    """Closed loop in parameter space, at rest for ``s <= 0``.

    ``theta(s) = center + sum_q cos_q cos(q phi) + sin_q sin(q phi)`` where
    ``phi = 2 pi direction c(s / period)``. The clock ``c`` is flat for
    ``u <= 0`` and ``u >= cycles``. With ``clock="smoothstep"`` each cycle is a
    quintic smoothstep, so the path is C2 everywhere; ``clock="linear"`` runs at
    uniform speed and has kinks at both ends.
    """

    center: tuple[float, ...]
    cos_amplitudes: tuple[tuple[float, ...], ...] = ()
    sin_amplitudes: tuple[tuple[float, ...], ...] = ()
    period: float = 1.0
    cycles: int = 1
    direction: int = 1
    clock: str = "smoothstep"

    def __post_init__(self):
        p = len(self.center)
        for amp in (*self.cos_amplitudes, *self.sin_amplitudes):
            if len(amp) != p:
                raise ModelInvalid("path amplitudes must match the center dimension")
        if len(self.cos_amplitudes) != len(self.sin_amplitudes):
            raise ModelInvalid("cos and sin amplitude lists need equal length")
        if not self.period > 0:
            raise ModelInvalid("period must be positive")
        if self.cycles < 1:
            raise ModelInvalid("cycles must be >= 1")
        if self.direction not in (1, -1):
            raise ModelInvalid("direction must be +1 or -1")
        if self.clock not in ("smoothstep", "linear"):
            raise ModelInvalid(f"unknown clock {self.clock!r}")

    @classmethod
    def circle(cls, center, radius, axes=(0, 1), **kw) -> "ParameterPath":
        """Circle of given radius in the plane spanned by two parameter axes."""
        p = len(center)
        c = np.zeros(p)
        s = np.zeros(p)
        c[axes[0]] = radius
        s[axes[1]] = radius
        return cls(tuple(map(float, center)), (tuple(c),), (tuple(s),), **kw)

    @classmethod
    def static(cls, center) -> "ParameterPath":
        return cls(tuple(map(float, center)))

    @property
    def dimension(self) -> int:
        return len(self.center)

    @property
    def flat_before_zero(self) -> bool:
        return True

    @property
    def is_static(self) -> bool:
        return not np.any(np.asarray(self.cos_amplitudes)) and not np.any(
            np.asarray(self.sin_amplitudes)
        )

    @property
    def end(self) -> float:
        """Epoch at which the last cycle completes."""
        return self.cycles * self.period

    def reversed(self) -> "ParameterPath":
        return replace(self, direction=-self.direction)

    def _clock(self, s: float):
        u = s / self.period
        if u <= 0.0:
            return 0.0, 0.0
        if u >= self.cycles:
            return float(self.cycles), 0.0
        if self.clock == "linear":
            return u, 1.0 / self.period
        n = np.floor(u)
        return n + float(smoothstep(u - n)), float(smoothstep_derivative(u - n)) / self.period

    def _harmonics(self, s: float):
        c, dc = self._clock(float(s))
        phi = 2.0 * np.pi * self.direction * c
        dphi = 2.0 * np.pi * self.direction * dc
        q = np.arange(1, len(self.cos_amplitudes) + 1)
        return q, phi, dphi

    def evaluate(self, s: float) -> np.ndarray:
        q, phi, _ = self._harmonics(s)
        th = np.array(self.center, dtype=float)
        if len(q):
            A = np.asarray(self.cos_amplitudes, dtype=float)
            B = np.asarray(self.sin_amplitudes, dtype=float)
            th = th + np.cos(q * phi) @ A + np.sin(q * phi) @ B
        return th

    def derivative(self, s: float) -> np.ndarray:
        q, phi, dphi = self._harmonics(s)
        if not len(q) or dphi == 0.0:
            return np.zeros(self.dimension)
        A = np.asarray(self.cos_amplitudes, dtype=float)
        B = np.asarray(self.sin_amplitudes, dtype=float)
        return ((-q * np.sin(q * phi)) @ A + (q * np.cos(q * phi)) @ B) * dphi


# ------------------------------------------------------------------- model


@dataclass(frozen=True)
class DrivenValue:
    """Complex amplitude affine in the path parameters: ``value + drive . theta``."""

    value: complex
    drive: tuple[complex, ...] = ()

    def evaluate(self, theta) -> complex:
        if not self.drive:
            return complex(self.value)
        return complex(self.value + np.dot(self.drive, theta))

    def rate(self, theta_dot) -> complex:
        if not self.drive:
            return 0j
        return complex(np.dot(self.drive, theta_dot))

    @property
    def is_real(self) -> bool:
        return np.imag(self.value) == 0 and all(np.imag(d) == 0 for d in self.drive)


@dataclass(frozen=True)
class PumpHopping:
    """Matrix element ``H[p, q] = t`` (and ``H[q, p] = conj(t)``)."""

    sites: tuple[int, int]
    amplitude: DrivenValue


@dataclass(frozen=True)
class DrivenPumpModel:
    """Family ``H(s)`` of a driven pump coupled to uniform leads.

    Parameters
    ----------
    geometry : LatticeGeometry
    path : ParameterPath
    onsite : tuple of DrivenValue
        Pump on-site energies (must stay real).
    hoppings : tuple of PumpHopping
        Internal pump matrix elements.
    couplings : tuple of DrivenValue
        ``H[attach_map[j], first site of lead j]``.
    """

    geometry: LatticeGeometry
    path: ParameterPath
    onsite: tuple[DrivenValue, ...]
    hoppings: tuple[PumpHopping, ...] = ()
    couplings: tuple[DrivenValue, ...] = ()
    lead_hopping: float = 1.0
    lead_onsite: float = 2.0

    def __post_init__(self):
        g = self.geometry
        if len(self.onsite) != g.pump_sites:
            raise ModelInvalid("need one on-site value per pump site")
        if len(self.couplings) != g.n_leads:
            raise ModelInvalid("need one coupling per lead")
        p = self.path.dimension
        for v in (*self.onsite, *self.couplings, *(h.amplitude for h in self.hoppings)):
            if v.drive and len(v.drive) != p:
                raise ModelInvalid("drive vectors must match the path dimension")
        for v in self.onsite:
            if not v.is_real:
                raise ModelInvalid("on-site energies must be real")
        for h in self.hoppings:
            a, b = h.sites
            if a == b or not (0 <= a < g.pump_sites and 0 <= b < g.pump_sites):
                raise ModelInvalid(f"bad hopping sites {h.sites}")

    @property
    def n_leads(self) -> int:
        return self.geometry.n_leads

    @property
    def is_real(self) -> bool:
        """True when every H(s) is real symmetric (time-reversal invariant)."""
        vals = (*self.onsite, *self.couplings, *(h.amplitude for h in self.hoppings))
        return all(v.is_real for v in vals)

    def with_lead_length(self, L: int) -> "DrivenPumpModel":
        return replace(self, geometry=self.geometry.with_lead_length(L))

    def with_path(self, path: ParameterPath) -> "DrivenPumpModel":
        return replace(self, path=path)

    def pump_block(self, theta) -> np.ndarray:
        m = self.geometry.pump_sites
        Hp = np.zeros((m, m), dtype=complex)
        Hp[np.diag_indices(m)] = [v.evaluate(theta).real for v in self.onsite]
        for h in self.hoppings:
            a, b = h.sites
            t = h.amplitude.evaluate(theta)
            Hp[a, b] += t
            Hp[b, a] += np.conj(t)
        return Hp

    def pump_block_rate(self, theta_dot) -> np.ndarray:
        m = self.geometry.pump_sites
        dH = np.zeros((m, m), dtype=complex)
        dH[np.diag_indices(m)] = [v.rate(theta_dot).real for v in self.onsite]
        for h in self.hoppings:
            a, b = h.sites
            t = h.amplitude.rate(theta_dot)
            dH[a, b] += t
            dH[b, a] += np.conj(t)
        return dH

    def lead_coupling(self, theta) -> np.ndarray:
        return np.array([c.evaluate(theta) for c in self.couplings])

    def lead_coupling_rate(self, theta_dot) -> np.ndarray:
        return np.array([c.rate(theta_dot) for c in self.couplings])

    def pump_block_at(self, s: float) -> np.ndarray:
        return self.pump_block(self.path.evaluate(s))

    def lead_coupling_at(self, s: float) -> np.ndarray:
        return self.lead_coupling(self.path.evaluate(s))


def _lead_template(model: DrivenPumpModel):
    """COO triplets of the s-independent lead part (chains with hard walls)."""
    g = model.geometry
    L = g.lead_length
    rows, cols, vals = [], [], []
    for j in range(g.n_leads):
        idx = g.pump_sites + j * L + np.arange(L)
        rows.append(idx)
        cols.append(idx)
        vals.append(np.full(L, model.lead_onsite, dtype=complex))
        if L > 1:
            off = np.full(L - 1, -model.lead_hopping, dtype=complex)
            rows += [idx[:-1], idx[1:]]
            cols += [idx[1:], idx[:-1]]
            vals += [off, off]
    if not rows:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, complex)
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def _pump_patch(model: DrivenPumpModel, Hp: np.ndarray, c: np.ndarray):
    """COO triplets of the pump block and the pump-lead couplings."""
    g = model.geometry
    m = g.pump_sites
    r, q = np.nonzero(Hp)
    rows, cols, vals = [r], [q], [Hp[r, q]]
    if g.lead_length >= 1:
        for j, p in enumerate(g.attach_map):
            x1 = g.lead_index(j, 1)
            rows.append(np.array([p, x1]))
            cols.append(np.array([x1, p]))
            vals.append(np.array([c[j], np.conj(c[j])]))
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals).astype(complex)


def _assemble(model, Hp, c, truncated, with_leads=True) -> sp.csr_matrix:
    g = model.geometry
    if not truncated:
        return sp.csr_matrix(Hp)
    if g.lead_length < 1:
        raise ModelInvalid("truncated Hamiltonian needs lead_length >= 1")
    r1, c1, v1 = _pump_patch(model, Hp, c)
    if with_leads:
        r0, c0, v0 = _lead_template(model)
        r1, c1, v1 = (np.concatenate([r0, r1]), np.concatenate([c0, c1]),
                      np.concatenate([v0, v1]))
    N = g.n_sites
    H = sp.coo_matrix((v1, (r1, c1)), shape=(N, N)).tocsr()
    H.sum_duplicates()
    return H


def frozen_hamiltonian(model: DrivenPumpModel, s: float, truncated: bool = True) -> sp.csr_matrix:
    """Frozen Hamiltonian H(s).

    With ``truncated=True`` the full lattice (pump plus ``L`` sites per lead,
    hard wall at the far end) is returned. With ``truncated=False`` only the
    ``m x m`` pump block is returned; semi-infinite leads then enter through
    self-energies (see :mod:`adiapump.scattering`).
    """
    th = model.path.evaluate(max(float(s), 0.0))
    return _assemble(model, model.pump_block(th), model.lead_coupling(th), truncated)


def hamiltonian_derivative(model: DrivenPumpModel, s: float, truncated: bool = True) -> sp.csr_matrix:
    """Exact dH/ds by the chain rule through the path."""
    th = model.path.evaluate(s)
    thd = model.path.derivative(s)
    dHp = model.pump_block_rate(thd)
    dc = model.lead_coupling_rate(thd)
    dH = _assemble(model, dHp, dc, truncated, with_leads=False)
    dH.eliminate_zeros()
    return dH


def pump_adjacent_indices(geometry: LatticeGeometry) -> np.ndarray:
    """Pump sites plus the first site of every lead."""
    idx = list(range(geometry.pump_sites))
    if geometry.lead_length >= 1:
        idx += [int(geometry.lead_index(j, 1)) for j in range(geometry.n_leads)]
    return np.array(idx)


# -------------------------------------------------------------- assumptions


@dataclass
class AssumptionReport:
    """Pass/fail/unchecked status per modelling assumption."""

    status: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def add(self, name, status, detail=""):
        self.status[name] = status
        self.details[name] = detail

    @property
    def structural_ok(self) -> bool:
        return all(v != "fail" for v in self.status.values())

    def as_dict(self):
        return {k: {"status": self.status[k], "detail": self.details[k]} for k in self.status}


def _bound_state_scan(model: DrivenPumpModel, s_samples, n_energy=400, tol=1e-3):
    """Heuristic search for in-band states that decouple from the leads.

    At each energy the pump block is dressed with the real part of the lead
    self-energy. A level crossing ``E`` whose eigenvector has almost no weight
    on the attachment sites (escape rate below ``tol``) is reported.
    """
    g = model.geometry
    E = np.linspace(0.0, 4.0, n_energy + 2)[1:-1]
    k = np.arccos(1.0 - E / 2.0)
    out = []
    for s in s_samples:
        Hp = model.pump_block_at(s)
        c2 = np.abs(model.lead_coupling_at(s)) ** 2
        prev = None
        for Ei, ki in zip(E, k):
            Heff = Hp.copy()
            gamma = np.zeros(g.pump_sites)
            for j, p in enumerate(g.attach_map):
                Heff[p, p] -= c2[j] * np.cos(ki)
                gamma[p] += c2[j] * np.sin(ki)
            lam, vec = np.linalg.eigh(Heff)
            d = lam - Ei
            if prev is not None:
                for n in np.nonzero(np.sign(d) != np.sign(prev))[0]:
                    rate = float(gamma @ np.abs(vec[:, n]) ** 2)
                    if rate < tol:
                        out.append({"s": float(s), "E": float(Ei), "escape_rate": rate})
            prev = d
    return out


def validate_assumptions(
    model: DrivenPumpModel,
    n_samples: int = 17,
    hamiltonian: Callable[[float], sp.spmatrix] | None = None,
) -> AssumptionReport:
    """Check the structural assumptions on a sampled epoch grid.

    Parameters
    ----------
    model : DrivenPumpModel
    n_samples : int
        Number of epochs sampled over one run of the path.
    hamiltonian : callable, optional
        Override for ``s -> H(s)``; lets callers audit a modified family.

    Returns
    -------
    AssumptionReport
        Entries ``A1``, ``A2``, ``A3``, ``A4``, ``A5`` and ``confinement``.
        A4 is always ``"unchecked"``; its detail lists heuristic bound-state
        candidates.
    """
    if model.geometry.lead_length < 2:
        model = model.with_lead_length(4)
    H = hamiltonian or (lambda s: frozen_hamiltonian(model, s))
    path = model.path
    rep = AssumptionReport()
    s_grid = np.linspace(-0.5 * path.period, path.end + 0.5 * path.period, n_samples)

    # A1: smooth clock plus a discrete Lipschitz bound
    mats = [H(s) for s in s_grid]
    ratios = [
        spla.norm(mats[i + 1] - mats[i]) / (s_grid[i + 1] - s_grid[i])
        for i in range(len(s_grid) - 1)
    ]
    dmax = max(
        spla.norm(hamiltonian_derivative(model, s)) for s in np.linspace(0, path.end, 4 * n_samples)
    )
    lip_ok = max(ratios) <= 1.5 * dmax + 1e-12
    if path.clock == "linear":
        rep.add("A1", "fail", "linear clock has kinks at s=0 and at the end of the last cycle")
    elif not lip_ok:
        rep.add("A1", "fail", f"Lipschitz ratio {max(ratios):.3g} exceeds bound {dmax:.3g}")
    else:
        rep.add("A1", "pass", f"C2 smoothstep clock; max |dH| ratio {max(ratios):.3g}")

    rep.add("A2", "pass", f"pump space has finite dimension {model.geometry.pump_sites}")

    # A3 and confinement: lead interior rows fixed, differences near the pump only
    allowed = set(pump_adjacent_indices(model.geometry).tolist())
    offenders = set()
    ref = mats[0]
    for Hs in mats[1:]:
        D = (Hs - ref).tocoo()
        for r, c, v in zip(D.row, D.col, D.data):
            if v != 0 and not (r in allowed and c in allowed):
                offenders.add((int(r), int(c)))
    if offenders:
        named = sorted(offenders)[:10]
        desc = ", ".join(f"{model.geometry.region_of(r)}-{model.geometry.region_of(c)}" for r, c in named)
        rep.add("confinement", "fail", f"H(s)-H(s') nonzero at {len(offenders)} entries: {desc}")
        rep.add("A3", "fail", "lead rows depend on s")
    else:
        rep.add("confinement", "pass", "changes confined to pump block and couplings")
        rep.add("A3", "pass", "lead rows match the free chain template")

    # A5: at rest for s <= 0
    neg = [s for s in s_grid if s <= 0]
    rest = all((H(s) - H(0.0)).count_nonzero() == 0 for s in neg)
    rep.add("A5", "pass" if rest else "fail", "H(s) == H(0) for sampled s <= 0")

    cands = _bound_state_scan(model, np.linspace(0, path.end, 9))
    detail = "no in-band bound-state candidates" if not cands else f"{len(cands)} candidates: {cands[:5]}"
    rep.add("A4", "unchecked", detail)
    rep.details["A4_candidates"] = cands
    return rep


# --------------------------------------------------------------------- JSON

_TOP_KEYS = {"n_leads", "pump_sites", "lead_length", "attach_map", "path", "pump_block", "couplings"}
_PATH_KEYS = {"kind", "center", "amplitudes", "period", "cycles", "direction", "clock"}
_VALUE_KEYS = {"value", "drive"}


def _reject_unknown(d: Mapping, allowed: set, where: str):
    if not isinstance(d, Mapping):
        raise ModelInvalid(f"{where}: expected an object")
    extra = set(d) - allowed
    if extra:
        raise ModelInvalid(f"{where}: unknown keys {sorted(extra)}")


def _complex(x, where):
    if isinstance(x, (int, float)) and not isinstance(x, bool):
        return complex(x)
    if isinstance(x, Sequence) and len(x) == 2 and all(isinstance(t, (int, float)) for t in x):
        return complex(x[0], x[1])
    raise ModelInvalid(f"{where}: expected a number or [re, im]")


def _complex_out(z: complex):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


def _driven(d, where, p) -> DrivenValue:
    _reject_unknown(d, _VALUE_KEYS, where)
    if "value" not in d:
        raise ModelInvalid(f"{where}: missing 'value'")
    drive = tuple(_complex(x, where) for x in d.get("drive", []))
    if drive and len(drive) != p:
        raise ModelInvalid(f"{where}: drive has length {len(drive)}, path dimension is {p}")
    if drive and not any(drive):
        drive = ()
    return DrivenValue(_complex(d["value"], where), drive)


def _driven_out(v: DrivenValue) -> dict:
    out = {"value": _complex_out(v.value)}
    if v.drive:
        out["drive"] = [_complex_out(z) for z in v.drive]
    return out


def model_from_dict(d: Mapping) -> DrivenPumpModel:
    """Build a model from its JSON description, rejecting unknown keys."""
    _reject_unknown(d, _TOP_KEYS, "model")
    missing = _TOP_KEYS - set(d)
    if missing:
        raise ModelInvalid(f"model: missing keys {sorted(missing)}")
    try:
        geom = LatticeGeometry(
            int(d["n_leads"]), int(d["pump_sites"]), int(d["lead_length"]),
            tuple(int(p) for p in d["attach_map"]),
        )
        pd = d["path"]
        _reject_unknown(pd, _PATH_KEYS, "path")
        center = tuple(float(x) for x in pd["center"])
        kind = pd.get("kind", "loop")
        if kind == "static":
            path = ParameterPath.static(center)
        elif kind == "loop":
            amps = pd.get("amplitudes", {})
            _reject_unknown(amps, {"cos", "sin"}, "path.amplitudes")
            cos = tuple(tuple(float(x) for x in a) for a in amps.get("cos", []))
            sin = tuple(tuple(float(x) for x in a) for a in amps.get("sin", []))
            n = max(len(cos), len(sin))
            zero = tuple(0.0 for _ in center)
            cos = cos + (zero,) * (n - len(cos))
            sin = sin + (zero,) * (n - len(sin))
            path = ParameterPath(
                center, cos, sin,
                period=float(pd.get("period", 1.0)),
                cycles=int(pd.get("cycles", 1)),
                direction=int(pd.get("direction", 1)),
                clock=str(pd.get("clock", "smoothstep")),
            )
        else:
            raise ModelInvalid(f"path: unknown kind {kind!r}")
        p = path.dimension
        pb = d["pump_block"]
        _reject_unknown(pb, {"onsite", "hoppings"}, "pump_block")
        onsite = tuple(_driven(v, f"pump_block.onsite[{i}]", p) for i, v in enumerate(pb["onsite"]))
        hops = []
        for i, h in enumerate(pb.get("hoppings", [])):
            _reject_unknown(h, {"sites"} | _VALUE_KEYS, f"pump_block.hoppings[{i}]")
            sites = tuple(int(x) for x in h["sites"])
            if len(sites) != 2:
                raise ModelInvalid(f"pump_block.hoppings[{i}]: sites needs two entries")
            hops.append(PumpHopping(sites, _driven({k: h[k] for k in h if k != "sites"},
                                                   f"pump_block.hoppings[{i}]", p)))
        couplings = tuple(_driven(v, f"couplings[{i}]", p) for i, v in enumerate(d["couplings"]))
        return DrivenPumpModel(geom, path, onsite, tuple(hops), couplings)
    except ModelInvalid:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelInvalid(f"model: {exc}") from exc


def model_to_dict(model: DrivenPumpModel) -> dict:
    g, path = model.geometry, model.path
    pd = {"kind": "static", "center": list(path.center)}
    if not path.is_static:
        pd = {
            "kind": "loop",
            "center": list(path.center),
            "amplitudes": {"cos": [list(a) for a in path.cos_amplitudes],
                           "sin": [list(a) for a in path.sin_amplitudes]},
            "period": path.period,
            "cycles": path.cycles,
            "direction": path.direction,
            "clock": path.clock,
        }
    return {
        "n_leads": g.n_leads,
        "pump_sites": g.pump_sites,
        "lead_length": g.lead_length,
        "attach_map": list(g.attach_map),
        "path": pd,
        "pump_block": {
            "onsite": [_driven_out(v) for v in model.onsite],
            "hoppings": [{"sites": list(h.sites), **_driven_out(h.amplitude)} for h in model.hoppings],
        },
        "couplings": [_driven_out(v) for v in model.couplings],
    }


def load_model(path) -> DrivenPumpModel:
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ModelInvalid(f"{path}: {exc}") from exc
    return model_from_dict(d)


DEMO_MODEL_FILE = Path(__file__).with_name("data") / "demo_pump.json"


def demo_model(lead_length: int | None = None) -> DrivenPumpModel:
    """Two-site peristaltic pump between two leads.

    On-site energies ``2 + theta_0`` and ``2 + theta_1``, internal hopping -1,
    couplings -0.8, loop of radius 1 around ``(1, 1)``.
    """
    m = load_model(DEMO_MODEL_FILE)
    return m if lead_length is None else m.with_lead_length(lead_length)
