import numpy as np
import pytest

from adiapump.errors import EmptyWindow, UnsupportedFunction
from adiapump.lab import (
    HalfLineGrid,
    grid_mourre,
    hs_norm_check,
    lattice_commutator_symbol,
    mourre_bound,
    pull_through_check,
    pump_mourre,
    refinement_study,
    trace_formula_check,
)

G = lambda E: E * np.exp(-E)
F = lambda a: np.exp(-a**2 / 2)
ODD = lambda a: a * np.exp(-a**2 / 2)


def dense_fn(M, fun):
    w, V = np.linalg.eigh(M)
    resid = np.max(np.abs(M @ V - V * w))
    assert resid <= 1e-10 * max(1.0, np.abs(w).max())
    return (V * fun(w.astype(complex))) @ V.conj().T


def test_grid_operators():
    grid = HalfLineGrid(200, 0.1)
    assert grid.hermiticity_residual() <= 1e-12
    E = np.linalg.eigvalsh(grid.H0.toarray())
    assert E.min() >= -1e-10 and E.max() <= grid.band_top + 1e-9
    # A0 = (XP + PX)/2 exactly
    X, P = grid.X.toarray(), grid.P.toarray()
    np.testing.assert_allclose(grid.A0.toarray(), 0.5 * (X @ P + P @ X), atol=1e-13)
    r = grid.refined()
    assert (r.N, r.h) == (800, 0.05)


def test_checks_match_dense_functional_calculus():
    grid = HalfLineGrid(300, 0.1)
    gH = dense_fn(grid.H0.toarray(), lambda E: G(E.real))
    fA = dense_fn(grid.A0.toarray(), lambda a: F(a.real))
    M = gH @ fA
    hs = hs_norm_check(grid, G, F)
    tr = trace_formula_check(grid, G, F)
    assert hs.lhs == pytest.approx(np.linalg.norm(M, "fro"), rel=1e-9)
    assert tr.lhs == pytest.approx(np.trace(M).real, rel=1e-9)


def test_zero_g():
    grid = HalfLineGrid(200, 0.1)
    r = hs_norm_check(grid, lambda E: 0.0 * E, F)
    assert r.lhs == r.rhs == 0.0


def test_rhs_quadrature_closed_form():
    # int_0^inf E^2 e^{-2E}/(2E) dE = 1/8 ; int e^{-a^2} da = sqrt(pi)
    r = hs_norm_check(HalfLineGrid(400, 0.1), G, F)
    assert r.rhs == pytest.approx(np.sqrt(0.125 * np.sqrt(np.pi) / (2 * np.pi)), rel=1e-10)
    # int_0^inf e^{-E}/2 dE = 1/2 ; int e^{-a^2/2} da = sqrt(2 pi)
    t = trace_formula_check(HalfLineGrid(400, 0.1), G, F)
    assert t.rhs == pytest.approx(0.5 * np.sqrt(2 * np.pi) / (2 * np.pi), rel=1e-10)


def test_hs_and_trace_accuracy_and_refinement():
    grid = HalfLineGrid(1000, 0.05)
    for check in (hs_norm_check, trace_formula_check):
        rs, trend = refinement_study(check, grid, levels=3, g=G, f=F)
        assert rs[0].error <= 0.03
        assert trend
        assert rs[0].error / rs[1].error >= 1.5


def test_trace_odd_f_vanishes():
    r = trace_formula_check(HalfLineGrid(1000, 0.05), G, ODD)
    assert r.rhs == 0.0
    assert abs(r.lhs) <= 1e-10


def test_trace_shift_invariance():
    grid = HalfLineGrid(1000, 0.05)
    a = trace_formula_check(grid, G, F)
    b = trace_formula_check(grid, G, lambda x: F(x - 0.7))
    assert b.rhs == pytest.approx(a.rhs, rel=1e-10)
    assert b.error <= 0.03


def test_unsupported_g():
    with pytest.raises(UnsupportedFunction):
        hs_norm_check(HalfLineGrid(200, 0.5), lambda E: np.exp(-E / 50.0), F)


def test_pull_through_constant_is_exact():
    r = pull_through_check(HalfLineGrid(400, 0.1), lambda z: 3.0 + 0.0 * z)
    assert r.residual == 0.0


@pytest.mark.parametrize("f", [lambda z: np.exp(-z**2 / 4), lambda z: z * np.exp(-z**2 / 4)],
                         ids=["gaussian", "odd"])
def test_pull_through_refinement(f):
    grid = HalfLineGrid(400, 0.1)
    rs, trend = refinement_study(pull_through_check, grid, levels=3, f=f, key=lambda r: r.residual)
    assert trend
    for a, b in zip(rs, rs[1:]):
        assert a.residual / b.residual >= 1.5
    at800 = pull_through_check(HalfLineGrid(800, 0.05), f)
    assert at800.residual <= 1e-2 * HalfLineGrid(800, 0.05).band_top


def test_commutator_symbol():
    assert lattice_commutator_symbol(1.0, h=0.0) == 2.0
    assert lattice_commutator_symbol(4.0, h=1.0) == 0.0


def test_mourre_continuum_relation():
    r = grid_mourre(HalfLineGrid(2000, 0.1), (1.0, 1.2))
    assert 1.9 <= r.theta <= 2.1
    assert r.dimension > 0


def test_mourre_band_edge_degenerates():
    r = grid_mourre(HalfLineGrid(2000, 0.1), (0.0, 0.05))
    assert 0.0 <= r.theta < 0.2


def test_mourre_empty_window():
    grid = HalfLineGrid(50, 0.1)
    with pytest.raises(EmptyWindow):
        mourre_bound(grid.H0, grid.A0, (1e4, 2e4))


def test_pump_mourre_positive(demo):
    rs = pump_mourre(demo, np.linspace(0, 1, 6), (1.8, 2.2), lead_length=150)
    assert min(r.theta for r in rs) > 0
