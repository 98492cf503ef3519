import numpy as np
import pytest
import scipy.sparse as sp
from scipy.integrate import simpson
from scipy.linalg import expm

from adiapump.bpt import SpectralDensity
from adiapump.dynamics import (
    Ammeter,
    OrbitalEnsemble,
    PropagationPlan,
    SpectralFilter,
    SwitchFunction,
    current_expectation,
    current_operator,
    exterior_scaling_generator,
    fermi_sea,
    gershgorin_bounds,
    level_spacing_smearing,
    make_plan,
    measure_pumped_charge,
    propagate,
)
from adiapump.errors import AmmeterOutOfRange, PlanViolation
from adiapump.model import frozen_hamiltonian

from conftest import make_chain_model


def wavepacket(geom, lead, x0, sigma, k):
    psi = np.zeros(geom.n_sites, dtype=complex)
    x = np.arange(1, geom.lead_length + 1)
    psi[geom.lead_slice(lead)] = np.exp(-((x - x0) ** 2) / (4 * sigma**2) + 1j * k * x)
    return psi / np.linalg.norm(psi)


def static_plan(L, T, dt=0.05, a=10.0, stride=1):
    n = int(round(T / dt))
    return PropagationPlan(1.0, dt, n, (0.0, n * dt), stride, stride, L, a, 50)


def test_switch_function_limits():
    f = SwitchFunction(4.0)
    np.testing.assert_allclose(f.at([0, 6, 10, 14, 20], 10), [0, 0, 0.5, 1, 1])
    x = np.linspace(-2, 2, 101)
    assert np.all(np.diff(f(x)) >= 0)


def test_generator_hermitian_and_block_diagonal():
    m = make_chain_model(n_leads=3, pump_sites=3, lead_length=50)
    A = exterior_scaling_generator(m.geometry)
    assert abs(A - A.conj().T).max() == 0.0
    for j in range(3):
        P = sp.diags(m.geometry.projector_diagonal(j))
        assert abs(A @ P - P @ A).max() == 0.0
    # vanishes near the pump
    g = m.geometry
    assert abs(A[:g.pump_sites]).max() == 0.0
    assert abs(A[g.lead_index(0, 1), g.lead_index(0, 2)]) == 0.0


@pytest.mark.parametrize("k", [np.pi / 4, np.pi / 2, 2.2])
def test_generator_plane_wave_expectation(k):
    # far from the pump A = (x p + p x)/2 with lattice momentum sin k
    m = make_chain_model(lead_length=400)
    g = m.geometry
    A = exterior_scaling_generator(g)
    psi = wavepacket(g, 0, 200.0, 20.0, k)
    val = np.vdot(psi, A @ psi)
    assert abs(val.imag) < 1e-12
    assert abs(val.real / (np.sin(k) * 200.0) - 1.0) < 1e-2
    # the conjugate (incoming) packet flips the sign
    assert abs(np.vdot(psi.conj(), A @ psi.conj()).real + val.real) < 1e-10


def test_filter_accuracy_and_action():
    filt = SpectralFilter(2.0, 0.3, 0.6, tol=1e-8)
    assert filt.sup_error <= 1e-8
    assert filt.chi(2.0) == 1.0 and filt.chi(2.3) == 1.0 and filt.chi(2.6) == 0.0
    m = make_chain_model(lead_length=60)
    H = frozen_hamiltonian(m, 0.0)
    E, V = np.linalg.eigh(H.toarray())
    out = filt.apply(sp.csr_matrix(H), V)
    np.testing.assert_allclose(out, V * filt.chi(E), atol=5e-8)


def test_filter_rejects_bad_window():
    with pytest.raises(ValueError):
        SpectralFilter(2.0, 0.5, 0.4)
    with pytest.raises(ValueError):
        SpectralFilter(0.2, 0.1, 0.3)


def test_ammeter_out_of_range():
    m = make_chain_model(lead_length=40)
    H = frozen_hamiltonian(m, 0.0)
    with pytest.raises(AmmeterOutOfRange):
        current_operator(m.geometry, H, 0, 38.0)
    with pytest.raises(AmmeterOutOfRange):
        current_operator(m.geometry, H, 0, 2.0)
    with pytest.raises(AmmeterOutOfRange):
        current_operator(m.geometry, H, 5, 20.0)


def test_position_current_is_local():
    m = make_chain_model(lead_length=120)
    g = m.geometry
    I = current_operator(g, frozen_hamiltonian(m, 0.0), 1, 60.0).matrix().toarray()
    x = g.lead_position()
    far = np.ones(g.n_sites, bool)
    far[g.lead_slice(1)] = np.abs(x[g.lead_slice(1)] - 60.0) > 8 * 4.0
    assert np.max(np.abs(I[far])) <= 1e-12
    assert np.max(np.abs(I[:, far])) <= 1e-12


@pytest.mark.parametrize("kind", ["position", "dilation", "dilation_out", "dilation_in"])
def test_real_hamiltonian_equilibrium_current_vanishes(demo, kind):
    m = demo.with_lead_length(120)
    H = frozen_hamiltonian(m, 0.37)
    ens = fermi_sea(H, SpectralDensity.fermi_sea(2.0), smearing=0.05)
    assert np.isrealobj(ens.orbitals)
    op = current_operator(m.geometry, H, 0, 40.0, kind)
    assert abs(current_expectation(ens, op)) <= 1e-14


def test_fermi_sea_weights():
    m = make_chain_model(lead_length=50)
    H = frozen_hamiltonian(m, 0.0)
    ens = fermi_sea(H, SpectralDensity.fermi_sea(2.0))
    assert np.all(ens.weights == 1.0)
    assert np.all(ens.energies < 2.0)
    assert ens.gram_residual() < 1e-12
    assert level_spacing_smearing(2.0, 100) == pytest.approx(np.pi * 2 / 100)


def test_eigenstate_evolves_by_phase():
    m = make_chain_model(lead_length=99)
    H = frozen_hamiltonian(m, 0.0).toarray()
    E, V = np.linalg.eigh(H)
    ens = OrbitalEnsemble(V[:, [40]], np.ones(1), E[[40]])
    plan = static_plan(99, 5.0, dt=0.1)
    *_, (_, _, last) = propagate(ens, m, plan)
    assert abs(abs(np.vdot(V[:, 40], last.orbitals[:, 0])) - 1.0) < 1e-10


def test_stepper_second_order(rng):
    m = make_chain_model(lead_length=99)
    H = frozen_hamiltonian(m, 0.0).toarray()
    assert H.shape == (200, 200)
    psi = rng.normal(size=200) + 1j * rng.normal(size=200)
    psi /= np.linalg.norm(psi)
    T = 4.0
    exact = expm(-1j * (H - 2.0 * np.eye(200)) * T) @ psi
    errs = []
    for dt in (0.1, 0.05, 0.025):
        ens = OrbitalEnsemble(psi[:, None], np.ones(1), np.zeros(1))
        *_, (_, _, last) = propagate(ens, m, static_plan(99, T, dt=dt, stride=1000))
        errs.append(np.max(np.abs(last.orbitals[:, 0] - exact)))
        assert abs(np.linalg.norm(last.orbitals[:, 0]) - 1.0) < 1e-12
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    np.testing.assert_allclose(orders, 2.0, atol=0.1)


def test_plan_violation():
    m = make_chain_model(lead_length=60)
    with pytest.raises(PlanViolation):
        static_plan(60, 20.0).validate()
    with pytest.raises(PlanViolation):
        make_plan(m, 0.1, 30.0, lead_length=60)


def test_plan_bookkeeping(demo):
    p1 = make_plan(demo, 0.08, 30.0)
    p2 = make_plan(demo, 0.04, 30.0)
    assert p2.n_steps * p2.dt > p1.n_steps * p1.dt
    assert p1.lead_length >= p1.required_length
    assert p1.measurement_epochs[0] == 0.0
    assert p1.measurement_epochs[-1] == pytest.approx(p1.s_span[1])


def _packet_run(filt=None, kind="position"):
    m = make_chain_model(lead_length=300)
    g = m.geometry
    psi = wavepacket(g, 0, 60.0, 8.0, np.pi / 2)
    ens = OrbitalEnsemble(psi[:, None], np.ones(1), np.array([2.0]))
    H = frozen_hamiltonian(m, 0.0)
    op = current_operator(g, H, 0, 110.0, kind, filt=filt)
    plan = static_plan(300, 60.0, dt=0.05, a=114.0, stride=4)
    t, cur = [], []
    for _, s, e in propagate(ens, m, plan):
        t.append(s)
        cur.append(current_expectation(e, op))
    return simpson(np.array(cur), x=np.array(t)), op


def test_wavepacket_transports_one_charge():
    q, _ = _packet_run()
    assert abs(q - 1.0) <= 1e-3


def test_wavepacket_filtered_matches_unfiltered():
    m = make_chain_model(lead_length=300)
    H = frozen_hamiltonian(m, 0.0)
    lo, hi = gershgorin_bounds(H)
    filt = SpectralFilter(2.0, 1.0, 1.6, bounds=(min(lo, 0.0), max(hi, 4.0)))
    q0, _ = _packet_run()
    q1, _ = _packet_run(filt)
    assert abs(q1 - q0) <= 1e-6


def test_static_path_measures_no_charge():
    m = make_chain_model(lead_length=100)
    plan = make_plan(m, 0.5, 20.0)
    res = measure_pumped_charge(m, SpectralDensity.fermi_sea(2.0), plan,
                                [Ammeter(20.0), Ammeter(20.0, "dilation")])
    for tr in res.traces.values():
        assert np.max(np.abs(tr.charge)) <= 1e-6
        assert np.max(np.abs(tr.charge_quadrature)) <= 1e-6
    assert res.norm_drift <= 1e-10
