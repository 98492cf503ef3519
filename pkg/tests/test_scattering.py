import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from adiapump.errors import BandEdge, SingularMatching
from adiapump.model import (
    DrivenPumpModel,
    DrivenValue,
    LatticeGeometry,
    ParameterPath,
    PumpHopping,
    frozen_hamiltonian,
)
from adiapump.scattering import (
    lead_mode,
    reference_phase,
    scattering_matrix,
    scattering_matrix_gf,
    smatrix_derivative,
    termination_reflection,
)

from conftest import make_chain_model


def plane_wave_oracle(model, s, E):
    """Raw S from the full lattice Hamiltonian with a plane-wave ansatz in every lead.

    Unknowns are the pump amplitudes and one column of outgoing amplitudes per
    incoming lead; the equations are the pump rows and the first lead rows of
    ``(E - H) psi = 0``. Rows deeper in the leads hold automatically.
    """
    m = model.with_lead_length(4)
    g = m.geometry
    H = frozen_hamiltonian(m, s).toarray()
    k = lead_mode(E).k
    n, P = g.n_leads, g.pump_sites
    rows = list(range(P)) + [g.lead_index(j, 1) for j in range(n)]
    S = np.zeros((n, n), dtype=complex)
    for i in range(n):
        A = np.zeros((len(rows), P + n), dtype=complex)
        b = np.zeros(len(rows), dtype=complex)
        R = (E * np.eye(H.shape[0]) - H)[rows]
        A[:, :P] = R[:, :P]
        for j in range(n):
            for x in range(1, 5):
                col = R[:, g.lead_index(j, x)]
                A[:, P + j] += col * np.exp(1j * k * x)
                if j == i:
                    b -= col * np.exp(-1j * k * x)
        sol = np.linalg.solve(A, b)
        S[:, i] = sol[P:]
    return S


def test_lead_mode_dispersion():
    mode = lead_mode(1.0)
    assert abs(2 - 2 * np.cos(mode.k) - 1.0) < 1e-15
    assert abs(mode.v - 2 * np.sin(mode.k)) < 1e-15
    with pytest.raises(BandEdge):
        lead_mode(0.0)
    with pytest.raises(BandEdge):
        lead_mode(4.0 - 1e-9)


def test_termination_reflection_limits():
    for E in (0.3, 1.7, 3.2):
        k = lead_mode(E).k
        assert abs(termination_reflection(E, 1.0) - np.exp(-1j * k)) < 1e-13
        assert abs(termination_reflection(E, 2.0) + 1.0) < 1e-13


@pytest.mark.parametrize("s,E", [(0.0, 2.0), (0.3, 0.7), (0.61, 3.1), (0.9, 1.5)])
def test_matching_agrees_with_plane_wave_oracle(demo, s, E):
    S = scattering_matrix(demo, s, E, reference="raw").S
    np.testing.assert_allclose(S, plane_wave_oracle(demo, s, E), atol=1e-11)


def test_complex_hopping_oracle():
    geom = LatticeGeometry(3, 3, 10, (0, 1, 2))
    path = ParameterPath.circle((0.0, 0.0), 0.5)
    m = DrivenPumpModel(
        geom, path,
        onsite=(DrivenValue(2.0, (1.0, 0.0)), DrivenValue(1.5), DrivenValue(2.3, (0.0, 1.0))),
        hoppings=(PumpHopping((0, 1), DrivenValue(-1.0 + 0.4j)), PumpHopping((1, 2), DrivenValue(-0.7j)),
                  PumpHopping((0, 2), DrivenValue(0.3))),
        couplings=(DrivenValue(-0.9), DrivenValue(-0.6 + 0.2j), DrivenValue(-1.1)),
    )
    for s, E in [(0.2, 1.1), (0.7, 2.6)]:
        np.testing.assert_allclose(scattering_matrix(m, s, E, "raw").S, plane_wave_oracle(m, s, E), atol=1e-11)
        S = scattering_matrix(m, s, E)
        assert S.unitarity_residual() < 1e-12
        np.testing.assert_allclose(S.S, scattering_matrix_gf(m, s, E).S, atol=1e-12)


def test_decoupled_pump_reflects_against_dirichlet_reference():
    m = make_chain_model(couplings=0.0)
    for E in (0.5, 2.0, 3.5):
        S = scattering_matrix(m, 0.0, E, reference="dirichlet").S
        np.testing.assert_allclose(S, np.eye(2), atol=1e-14)
        S = scattering_matrix(m, 0.0, E, reference="raw").S
        np.testing.assert_allclose(S, -np.eye(2), atol=1e-14)


def test_perfect_chain_transmits():
    # one pump site with the lead on-site energy and hopping: an unbroken chain
    m = make_chain_model(pump_sites=1, attach=(0, 0))
    for E in (0.4, 2.0, 3.3):
        S = scattering_matrix(m, 0.0, E).S
        assert abs(abs(S[1, 0]) - 1.0) < 1e-13
        assert abs(S[0, 0]) < 1e-13


def test_breit_wigner_transmission():
    # single resonant level: T = Gamma^2 |G|^2, Gamma = 2 t^2 sin k, G = 1/(E - e0 + 2 t^2 e^{ik})
    t, e0 = 0.4, 2.3
    m = make_chain_model(pump_sites=1, attach=(0, 0), couplings=-t, onsite=e0)
    for E in np.linspace(0.5, 3.5, 9):
        k = lead_mode(E).k
        G = 1.0 / (E - e0 + 2 * t**2 * np.exp(1j * k))
        T = (2 * t**2 * np.sin(k)) ** 2 * abs(G) ** 2
        S = scattering_matrix(m, 0.0, E).S
        assert abs(abs(S[1, 0]) ** 2 - T) < 1e-13


def test_time_reversal_symmetry(demo):
    for s in (0.1, 0.5):
        assert scattering_matrix(demo, s, 1.9).symmetry_residual() < 1e-14


def test_reference_phase_is_unimodular():
    for ref in ("raw", "neumann", "dirichlet"):
        assert abs(abs(reference_phase(1.3, ref)) - 1.0) < 1e-14
    with pytest.raises(ValueError):
        reference_phase(1.3, "robin")


def test_bound_state_in_continuum_is_singular():
    # a pump site decoupled from both leads while sitting in the band
    geom = LatticeGeometry(2, 3, 10, (0, 2))
    m = DrivenPumpModel(
        geom, ParameterPath.static((0.0,)),
        onsite=(DrivenValue(2.0), DrivenValue(1.0), DrivenValue(2.0)),
        hoppings=(PumpHopping((0, 2), DrivenValue(-1.0)),),
        couplings=(DrivenValue(-1.0), DrivenValue(-1.0)),
    )
    with pytest.raises(SingularMatching):
        scattering_matrix(m, 0.0, 1.0)
    with pytest.raises(SingularMatching):
        scattering_matrix_gf(m, 0.0, 1.0)


def test_derivative_routes_agree(demo):
    for s, E in [(0.2, 2.0), (0.55, 0.9), (0.8, 3.0)]:
        a = smatrix_derivative(demo, s, E, method="analytic").dS
        r = smatrix_derivative(demo, s, E, method="richardson")
        assert np.max(np.abs(a - r.dS)) < 1e-8
        assert r.error < 1e-4 * np.max(np.abs(r.dS))


def test_derivative_vanishes_at_rest(demo):
    d = smatrix_derivative(demo, -0.3, 2.0, method="analytic").dS
    assert np.max(np.abs(d)) == 0.0


@settings(max_examples=40, deadline=None)
@given(
    e0=st.floats(0.0, 4.0), e1=st.floats(0.0, 4.0),
    t=st.floats(-2.0, 2.0), phase=st.floats(0.0, 2 * np.pi),
    c0=st.floats(0.2, 1.5), c1=st.floats(0.2, 1.5),
    E=st.floats(0.05, 3.95),
)
def test_unitarity_property(e0, e1, t, phase, c0, c1, E):
    geom = LatticeGeometry(2, 2, 10, (0, 1))
    m = DrivenPumpModel(
        geom, ParameterPath.static((0.0,)),
        onsite=(DrivenValue(e0), DrivenValue(e1)),
        hoppings=(PumpHopping((0, 1), DrivenValue(t * np.exp(1j * phase))),),
        couplings=(DrivenValue(-c0), DrivenValue(-c1)),
    )
    S = scattering_matrix(m, 0.0, E)
    assert S.unitarity_residual() < 1e-10
    np.testing.assert_allclose(S.S, scattering_matrix_gf(m, 0.0, E).S, atol=1e-8)
