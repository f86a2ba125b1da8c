"""Solitary waves, modulated ansatz, pseudo-conformal profiles.

The double-application oracle below was worked out by hand on the exponents:
with x0 = 0 and tau = T - t,
    |C_T(C_T R)|(t,x) = Q_{w0 (T tau - 1)}(x - v tau),
because the two quadratic phases cancel and the dilations compose through
the mass-preserving critical scaling.
"""

import numpy as np
import pytest

from snlslab.grid import SpatialGrid, grad_norm_sq, l2_norm
from snlslab.solitons import (
    ModulationParams,
    SolitonSpec,
    ansatz_fields,
    modulated_wave,
    pseudo_conformal_blowup,
    pseudo_conformal_evaluator,
    pseudo_conformal_transform,
    solitary_wave,
    solitary_wave_evaluator,
    sum_of_solitons,
    validate_multi,
)

GRID = SpatialGrid(1, 4096, 128.0)
PCGRID = SpatialGrid(1, 4096, 16.0)


def test_rest_soliton_is_ground_state(Q3):
    spec = SolitonSpec(w0=1.0, v=(0.0,), x0=(0.0,))
    f = solitary_wave(Q3, spec, 0.0, GRID)
    assert np.max(np.abs(f.values - Q3.value(np.abs(GRID.x1)))) < 1e-12
    assert not f.meta["tail_warning"]


def test_mass_time_independent(Q3):
    spec = SolitonSpec(w0=1.3, v=(0.7,), x0=(-2.0,), theta0=0.4)
    norms = [l2_norm(solitary_wave(Q3, spec, t, GRID)) for t in (0.0, 1.5, 7.0)]
    assert max(norms) - min(norms) < 1e-12 * norms[0]


def test_phase_convention(Q3):
    # at x = v t + x0 (the peak) the phase is v.x/2 - |v|^2 t/4 + t/w0^2 + theta0
    spec = SolitonSpec(w0=2.0, v=(1.0,), x0=(0.0,), theta0=0.3)
    t = 2.0
    f = solitary_wave(Q3, spec, t, GRID)
    i = np.argmin(np.abs(GRID.x1 - 2.0))  # node at the center
    x = GRID.x1[i]
    expected = 0.5 * x - 0.25 * t + t / 4.0 + 0.3
    got = np.angle(f.values[i])
    assert np.cos(got - expected) == pytest.approx(1.0, abs=1e-12)


def test_galilean_translation(Q3):
    # |R(t)| is |Q_w| translated by v t + x0
    spec = SolitonSpec(w0=1.0, v=(2.0,), x0=(5.0,))
    t = 3.0
    f = solitary_wave(Q3, spec, t, GRID)
    assert np.max(np.abs(np.abs(f.values) - Q3.value(np.abs(GRID.x1 - 11.0)))) < 1e-12


def test_modulated_matches_solitary_at_anchor(Q3):
    spec = SolitonSpec(w0=1.2, v=(1.0,), x0=(3.0,), theta0=0.1)
    params = ModulationParams.at_rest(spec)
    for t in (0.0, 4.0):
        a = solitary_wave(Q3, spec, t, GRID)
        b = modulated_wave(Q3, spec, params, t, GRID)
        assert np.array_equal(a.values, b.values)


def test_modulated_phase_uses_fixed_frequency(Q3):
    # moving w must NOT move the t/w0^2 phase drift (critical mode)
    spec = SolitonSpec(w0=1.0, v=(0.0,), x0=(0.0,))
    pa = ModulationParams(alpha=(0.0,), theta=0.0, w=1.4, critical=True)
    t = 1.0
    f = modulated_wave(Q3, spec, pa, t, GRID)
    i = np.argmin(np.abs(GRID.x1))
    # phase at the peak: t / w0^2 = 1, independent of params.w
    assert np.angle(f.values[i]) == pytest.approx(1.0, abs=1e-12)


def test_subcritical_pinning(Q3):
    spec = SolitonSpec(w0=1.0, v=(0.0,), x0=(0.0,))
    bad = ModulationParams(alpha=(0.0,), theta=0.0, w=1.2, critical=False)
    with pytest.raises(ValueError):
        modulated_wave(Q3, spec, bad, 0.0, GRID)


def test_critical_mass_invariance(Q5):
    spec = SolitonSpec(w0=1.0, v=(1.0,), x0=(0.0,))
    base = l2_norm(solitary_wave(Q5, spec, 0.0, GRID))
    for w in (0.7, 1.5):
        pa = ModulationParams(alpha=(0.0,), theta=0.0, w=w, critical=True)
        f = modulated_wave(Q5, spec, pa, 0.0, GRID)
        assert l2_norm(f) == pytest.approx(base, rel=1e-10)


def test_lambda_orthogonal_to_gradient(Q3):
    # radial symmetry: <grad Q_w, Lambda Q_w> = 0
    spec = SolitonSpec(w0=1.0, v=(0.5,), x0=(0.0,))
    pa = ModulationParams(alpha=(0.0,), theta=0.2, w=1.3, critical=True)
    fields = ansatz_fields(Q3, spec, pa, 1.0, GRID)
    ip = GRID.cell * np.vdot(fields["lam"], fields["dalpha"][0])
    assert abs(ip) < 1e-10


def test_ansatz_derivatives_match_finite_differences(Q3):
    spec = SolitonSpec(w0=1.0, v=(1.0,), x0=(0.0,), theta0=0.0)
    pa = ModulationParams(alpha=(0.5,), theta=0.3, w=1.1, critical=True)
    t = 0.7
    fields = ansatz_fields(Q3, spec, pa, t, GRID)
    h = 1e-6

    def wave(alpha, theta, w):
        p2 = ModulationParams(alpha=(alpha,), theta=theta, w=w, critical=True)
        return modulated_wave(Q3, spec, p2, t, GRID).values

    fd_a = (wave(0.5 + h, 0.3, 1.1) - wave(0.5 - h, 0.3, 1.1)) / (2 * h)
    fd_t = (wave(0.5, 0.3 + h, 1.1) - wave(0.5, 0.3 - h, 1.1)) / (2 * h)
    fd_w = (wave(0.5, 0.3, 1.1 + h) - wave(0.5, 0.3, 1.1 - h)) / (2 * h)
    assert np.max(np.abs(fd_a - fields["dalpha"][0])) < 1e-7
    assert np.max(np.abs(fd_t - fields["dtheta"])) < 1e-7
    assert np.max(np.abs(fd_w - fields["dw"])) < 1e-6


def test_sum_of_solitons_decoupling(Q3):
    specs = [SolitonSpec(w0=1.0, v=(-1.0,), x0=(-3.0,)),
             SolitonSpec(w0=1.2, v=(1.0,), x0=(3.0,))]
    gaps = []
    for t in (2.0, 6.0, 10.0):
        f = sum_of_solitons(Q3, specs, t, GRID)
        total = l2_norm(f) ** 2
        parts = sum(l2_norm(solitary_wave(Q3, s, t, GRID)) ** 2 for s in specs)
        gaps.append(abs(total - parts))
    # cross term ~ exp(-separation / max w): strictly decaying, tiny by t = 10
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-6


def test_distinct_velocity_validation(Q3):
    with pytest.raises(ValueError):
        validate_multi([SolitonSpec(w0=1.0, v=(1.0,), x0=(0.0,)),
                        SolitonSpec(w0=2.0, v=(1.0,), x0=(5.0,))])


def test_blowup_mass_conservation(Q5):
    # keep w(T - t) >= 0.05: the sech spectrum then dies before the mesh
    # Nyquist and the quadrature is spectrally exact
    for t in (0.0, 0.5, 0.9, 0.95):
        f = pseudo_conformal_blowup(Q5, 1.0, 1.0, (0.0,), 0.0, t, PCGRID)
        assert l2_norm(f) ** 2 == pytest.approx(Q5.mass, rel=1e-8)


def test_blowup_rate(Q5):
    # (T - t) ||grad S_T|| constant within 5% across a decade
    T = 1.0
    vals = []
    for tau in (0.5, 0.25, 0.1, 0.05):
        f = pseudo_conformal_blowup(Q5, T, 1.0, (0.0,), 0.0, T - tau, PCGRID)
        vals.append(tau * np.sqrt(grad_norm_sq(f)))
    assert max(vals) / min(vals) < 1.05


def test_blowup_width_scaling(Q5):
    T, t = 1.0, 0.5
    a = pseudo_conformal_blowup(Q5, T, 1.0, (0.0,), 0.0, t, PCGRID)
    b = pseudo_conformal_blowup(Q5, T, 2.0, (0.0,), 0.0, t, PCGRID)
    # doubling w doubles the concentration scale: |S(2w)|(2x)*sqrt(2) = |S(w)|(x)
    ia = np.abs(a.values[2048])   # x = 0
    ib = np.abs(b.values[2048])
    assert ib == pytest.approx(ia / np.sqrt(2.0), rel=1e-10)


def test_blowup_guards(Q5, Q3):
    with pytest.raises(ValueError):
        pseudo_conformal_blowup(Q5, 1.0, 1.0, (0.0,), 0.0, 1.0, PCGRID)
    with pytest.raises(ValueError):
        pseudo_conformal_blowup(Q3, 1.0, 1.0, (0.0,), 0.0, 0.0, PCGRID)


def test_transform_of_soliton_is_blowup(Q5):
    # C_T(R)(t) with v, w0, x0=0  ==  S_T(t) with w=w0, x_star=v, theta=0
    T, t = 2.0, 1.2
    spec = SolitonSpec(w0=1.0, v=(0.5,), x0=(0.0,))
    ev = solitary_wave_evaluator(Q5, spec)
    got = pseudo_conformal_transform(ev, T, t, PCGRID)
    want = pseudo_conformal_blowup(Q5, T, 1.0, (0.5,), 0.0, t, PCGRID)
    diff = np.sqrt(PCGRID.cell * np.sum(np.abs(got.values - want.values) ** 2))
    assert diff < 1e-8


def test_transform_isometry(Q5):
    T, t = 2.0, 1.3
    spec = SolitonSpec(w0=1.1, v=(0.3,), x0=(0.0,))
    ev = solitary_wave_evaluator(Q5, spec)
    got = pseudo_conformal_transform(ev, T, t, PCGRID)
    # reference mass of the soliton itself
    ref = l2_norm(solitary_wave(Q5, spec, 0.0, GRID))
    assert l2_norm(got) == pytest.approx(ref, rel=1e-8)


def test_transform_double_application_modulus(Q5):
    # frozen oracle (see module docstring)
    T, t = 2.0, 0.5
    tau = T - t
    w0, v = 1.0, 0.4
    spec = SolitonSpec(w0=w0, v=(v,), x0=(0.0,))
    ev = solitary_wave_evaluator(Q5, spec)
    twice = pseudo_conformal_transform(
        pseudo_conformal_evaluator(ev, T, 1), T, t, PCGRID)
    weff = w0 * (T * tau - 1.0)
    want = Q5.rescale(weff).value(np.abs(PCGRID.x1 - v * tau))
    assert np.max(np.abs(np.abs(twice.values) - want)) < 1e-8


def test_transform_singular_time(Q5):
    ev = solitary_wave_evaluator(Q5, SolitonSpec(w0=1.0, v=(0.0,), x0=(0.0,)))
    with pytest.raises(ValueError):
        pseudo_conformal_transform(ev, 1.0, 1.0, PCGRID)


def test_tail_warning_fires(Q3):
    small = SpatialGrid(1, 256, 8.0)
    spec = SolitonSpec(w0=1.0, v=(0.0,), x0=(6.0,))
    f = solitary_wave(Q3, spec, 0.0, small)
    assert f.meta["tail_warning"]
