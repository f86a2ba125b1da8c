"""Ground-state solver against closed forms.

Frozen expected values (computed by hand from the sech formula):
  p=3:  Q(x) = sqrt(2) sech x;   ||Q||^2 = 4,  ||Q'||^2 = 4/3,  int Q^4 = 16/3
  p=5:  Q(x) = 3^{1/4} sech^{1/2}(2x); ||Q||^2 = sqrt(3) pi / 2,
        ||Q'||^2 = sqrt(3) pi / 4,  int Q^6 = 3 sqrt(3) pi / 4,  E(Q) = 0
  p=2:  Q(x) = (3/2) sech^2(x/2); ||Q||^2 = 6, ||Q'||^2 = 6/5, int Q^3 = 36/5
"""

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from snlslab.ground_state import (
    GroundStateError,
    closed_form_1d,
    fit_decay,
    pohozaev_residual,
    rescale,
    solve_ground_state,
)

SQ3PI = np.sqrt(3.0) * np.pi


def test_p3_frozen_norms(Q3):
    assert Q3.peak == pytest.approx(np.sqrt(2.0), abs=1e-9)
    assert Q3.mass == pytest.approx(4.0, abs=1e-8)
    assert Q3.grad_sq == pytest.approx(4.0 / 3.0, abs=1e-8)
    assert Q3.power_integral == pytest.approx(16.0 / 3.0, abs=1e-8)


def test_p5_frozen_norms(Q5):
    assert Q5.peak == pytest.approx(3.0**0.25, abs=1e-9)
    assert Q5.mass == pytest.approx(SQ3PI / 2.0, abs=1e-8)
    assert Q5.grad_sq == pytest.approx(SQ3PI / 4.0, abs=1e-8)
    assert Q5.power_integral == pytest.approx(3.0 * SQ3PI / 4.0, abs=1e-8)
    assert abs(Q5.energy()) < 1e-6 * Q5.mass


def test_p2_frozen_norms(Q2):
    assert Q2.peak == pytest.approx(1.5, abs=1e-9)
    assert Q2.mass == pytest.approx(6.0, abs=1e-8)
    assert Q2.grad_sq == pytest.approx(1.2, abs=1e-8)
    assert Q2.power_integral == pytest.approx(7.2, abs=1e-8)


def test_sech_agreement(Q3, Q5, Q2):
    for Q in (Q3, Q5, Q2):
        x = np.linspace(0.0, 20.0, 2001)
        gap = np.max(np.abs(Q.value(x) - closed_form_1d(Q.p, x)))
        assert gap < 1e-8


def test_pohozaev(Q3, Q5, Q2):
    for Q in (Q3, Q5, Q2):
        assert pohozaev_residual(Q) < 1e-6


def test_decay_rate_is_one(Q3, Q5, Q2):
    # linearization at infinity gives delta = 1 for every p
    for Q in (Q3, Q5, Q2):
        C, delta = fit_decay(Q)
        assert delta == pytest.approx(1.0, abs=5e-3)
        assert C > 0


def test_rescale_norm_laws(Q3):
    w = 1.7
    Qw = rescale(Q3, w)
    assert Qw.mass == pytest.approx(w ** (1 - 2) * 4.0, rel=1e-10)  # sigma = 1
    assert Qw.grad_sq == pytest.approx(w ** (1 - 4) * (4.0 / 3.0), rel=1e-10)
    # pointwise: Q_w(x) = w^{-1} Q(x/w) for p = 3
    x = np.linspace(0, 5, 50)
    assert np.allclose(Qw.value(x), Q3.value(x / w) / w, atol=1e-12)


def test_rescale_composes(Q3):
    a = rescale(rescale(Q3, 1.3), 0.8)
    b = rescale(Q3, 1.3 * 0.8)
    assert a.w == b.w
    x = np.linspace(0, 8, 100)
    assert np.array_equal(a.value(x), b.value(x))


def test_rescale_critical_mass_invariant(Q5):
    # p = 5, d = 1 is L2-critical: the mass does not move under rescaling
    for w in (0.5, 1.0, 2.0, 3.7):
        assert rescale(Q5, w).mass == pytest.approx(Q5.mass, rel=1e-12)


def test_lambda_direction(Q3, Q5):
    # <Q_w, Lambda Q_w> = (sigma - d/2) ||Q_w||^2; vanishes exactly at p = 5
    r = Q3.r
    h = r[1] - r[0]
    for Q, expect in ((Q3, (1.0 - 0.5) * 4.0), (Q5, 0.0)):
        lam = Q.lambda_value(r)
        qv = Q.value(r)
        ip = 2 * h * np.sum(lam * qv) - h * lam[0] * qv[0]
        assert ip == pytest.approx(expect, abs=1e-6)


def test_lambda_norm_scaling(Q3):
    base = Q3.lambda_norm_sq()
    assert base > 0
    w = 2.0
    # d - 2 sigma = -1 at p = 3, d = 1
    assert rescale(Q3, w).lambda_norm_sq() == pytest.approx(base / w, rel=1e-10)


def test_energy_formula(Q3):
    E = Q3.energy()
    assert E == pytest.approx(0.5 * 4.0 / 3.0 - 16.0 / 3.0 / 4.0, abs=1e-8)


def test_invalid_arguments(Q3):
    with pytest.raises(ValueError):
        solve_ground_state(1.0, 1)
    with pytest.raises(ValueError):
        solve_ground_state(6.0, 1)  # above 1 + 4/d
    with pytest.raises(ValueError):
        solve_ground_state(3.0, 3)
    with pytest.raises(ValueError):
        rescale(Q3, -2.0)


def test_d2_profile_basics():
    Q = solve_ground_state(3.0, 2, tol=1e-9)
    assert Q.d == 2
    assert Q.peak > 0
    assert pohozaev_residual(Q) < 1e-5
    # radial monotonicity on the resolved core
    r = np.linspace(0, 5, 200)
    v = Q.value(r)
    assert np.all(np.diff(v) < 1e-12)
    _, delta = fit_decay(Q)
    assert delta == pytest.approx(1.0, abs=5e-2)


def test_solver_error_carries_residual():
    err = GroundStateError("x", residual=0.5)
    assert err.residual == 0.5


@given(st.floats(min_value=0.3, max_value=3.0))
def test_rescale_pohozaev_property(Q3, w):
    # the balance tracks the scaled elliptic equation, so it certifies any w
    assert pohozaev_residual(rescale(Q3, w)) < 1e-6


def test_derivative_tails_share_rate(Q3):
    # spectral derivatives up to third order keep the e^{-r} tail; prefactor
    # stays within a factor 2 of the profile's own
    from snlslab.grid import SpatialGrid
    g = SpatialGrid(1, 8192, 32.0)
    u = Q3.value(np.abs(g.x1)).astype(complex)
    C0, d0 = Q3.decay
    spec = np.fft.fft(u)
    half = g.n // 2
    inner = g.x1[half:] <= 24.0  # keep clear of seam ringing at r -> L
    for order in (1, 2, 3):
        du = np.real(np.fft.ifft(((1j * g.kvecs_odd[0]) ** order) * spec))
        from snlslab.ground_state import _fit_exponential_tail
        C, delta = _fit_exponential_tail(g.x1[half:][inner], du[half:][inner],
                                         Q3.peak, 1, hi=1e-7)
        assert delta == pytest.approx(d0, abs=0.05)
        assert 0.5 * C0 < C < 2.0 * C0
