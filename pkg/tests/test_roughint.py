import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from snlslab.noise import (ControlledPath, brownian_as_controlled,
                           controlled_from_function, sample_drive)
from snlslab.roughint import (HolderReport, controlled_remainder_check,
                              holder_seminorm, ito_equivalence,
                              rough_integral, rough_integral_report)


def _drive(seed=11, horizon=1.0, h_f=2 ** -10, coarse=2 ** -4, n=2):
    return sample_drive(n, horizon, h_f, coarse, seed)


def _ones_path(drive):
    vals = np.ones_like(drive.values)
    return ControlledPath("test", drive.times, vals, None, 0.0, None, None)


def _deterministic_path(drive, fn):
    vals = np.tile(fn(drive.times), (drive.n_paths, 1))
    return ControlledPath("test", drive.times, vals, None, 0.0, None, None)


# -------------------------------------------------------------------
# rough_integral oracles
# -------------------------------------------------------------------

def test_constant_integrand_gives_increment():
    d = _drive()
    Y = _ones_path(d)
    for k in range(d.n_paths):
        val = rough_integral(Y, d, k, (0.0, 1.0))
        assert abs(val - (d.values[k, -1] - d.values[k, 0])) < 1e-13


def test_ito_formula_exact_for_brownian():
    # compensated sums telescope at every level: (B_T^2 - B_S^2 - (T-S))/2
    d = _drive(seed=3)
    Y = brownian_as_controlled(d)
    for (S, T) in [(0.0, 1.0), (0.25, 0.75)]:
        rep = rough_integral_report(Y, d, 0, (S, T))
        BT = d.values[0, d.index_of(T)]
        BS = d.values[0, d.index_of(S)]
        expect = 0.5 * (BT ** 2 - BS ** 2 - (T - S))
        assert rep.converged
        assert abs(rep.value - expect) < 1e-12


def test_smooth_deterministic_matches_fine_riemann_sum():
    d = _drive(seed=5)
    Y = _deterministic_path(d, lambda t: np.sin(t))
    rep = rough_integral_report(Y, d, 1, (0.0, 1.0))
    inc = np.diff(d.values[1])
    fine = float(np.sum(np.sin(d.times[:-1]) * inc))
    # the last partition is the fine mesh itself here
    assert rep.partition_points == d.index_of(1.0)
    assert abs(rep.value - fine) < 1e-12


def test_partition_cap_applies():
    d = sample_drive(1, 1.0, 2 ** -16, 2 ** -4, seed=9)
    Y = _deterministic_path(d, lambda t: np.cos(3 * t))
    rep = rough_integral_report(Y, d, 0, (0.0, 1.0))
    assert rep.partition_points <= 2 ** 14


def test_linearity_to_roundoff():
    d = _drive(seed=7, h_f=2 ** -8)
    Y1 = controlled_from_function(d, lambda b: b ** 2, lambda b: 2.0 * b)
    Y2 = controlled_from_function(d, np.sin, np.cos)
    a, c = 1.7, -0.3
    combo = ControlledPath("test", d.times, a * Y1.values + c * Y2.values,
                           a * Y1.deriv + c * Y2.deriv, 0.0, None, None)
    iv = (0.0, 1.0)
    lhs = rough_integral(combo, d, 0, iv, tol=0.0)
    rhs = a * rough_integral(Y1, d, 0, iv, tol=0.0) \
        + c * rough_integral(Y2, d, 0, iv, tol=0.0)
    assert abs(lhs - rhs) < 1e-10 * max(1.0, abs(lhs))


def test_interval_additivity():
    d = _drive(seed=13, h_f=2 ** -9)
    Y = controlled_from_function(d, lambda b: b ** 2, lambda b: 2.0 * b)
    whole = rough_integral(Y, d, 1, (0.0, 1.0), tol=0.0)
    left = rough_integral(Y, d, 1, (0.0, 0.5), tol=0.0)
    right = rough_integral(Y, d, 1, (0.5, 1.0), tol=0.0)
    assert abs(whole - (left + right)) < 1e-10 * max(1.0, abs(whole))


def test_rough_integral_guards():
    d = _drive()
    Y = _ones_path(d)
    with pytest.raises(ValueError):
        rough_integral(Y, d, 0, (0.5, 0.5))
    short = ControlledPath("test", d.times[:-1], np.ones((2, len(d.times) - 1)),
                           None, 0.0, None, None)
    with pytest.raises(ValueError):
        rough_integral(short, d, 0, (0.0, 1.0))


# -------------------------------------------------------------------
# Holder seminorms
# -------------------------------------------------------------------

def test_holder_identity_map():
    t = np.linspace(0.0, 1.0, 513)
    rep = holder_seminorm(t, t, 1.0)
    assert isinstance(rep, HolderReport)
    assert abs(rep.seminorm - 1.0) < 1e-12


def test_holder_constant_is_zero():
    t = np.linspace(0.0, 2.0, 257)
    rep = holder_seminorm(t, np.full_like(t, 3.7), 0.5)
    assert rep.seminorm == 0.0


def test_holder_monotone_under_inclusion():
    d = _drive(seed=21)
    full = holder_seminorm(d.times, d.values[0], 0.4).seminorm
    sub = holder_seminorm(d.times, d.values[0], 0.4,
                          interval=(0.25, 0.75)).seminorm
    assert sub <= full + 1e-15


def test_holder_brownian_regularity_split():
    # same path refined dyadically: alpha = 0.4 saturates, 0.6 diverges
    seed = 17
    lo, hi = [], []
    for h in (2 ** -8, 2 ** -10, 2 ** -12):
        d = sample_drive(1, 1.0, h, 2 ** -4, seed)
        lo.append(holder_seminorm(d.times, d.values[0], 0.4).seminorm)
        hi.append(holder_seminorm(d.times, d.values[0], 0.6).seminorm)
    assert all(np.isfinite(lo)) and lo[2] < 1.6 * lo[0]
    assert hi[2] > 1.2 * hi[0]


def test_holder_subsamples_large_meshes():
    t = np.linspace(0.0, 1.0, 10001)
    rep = holder_seminorm(t, np.sin(t), 0.5)
    assert rep.stride > 1 and rep.n_points <= 4096


# -------------------------------------------------------------------
# controlled remainder
# -------------------------------------------------------------------

def test_remainder_vanishes_for_the_drive_itself():
    d = _drive(seed=2)
    assert controlled_remainder_check(brownian_as_controlled(d), d, 0.4) == 0.0


def test_remainder_deterministic_interval_scaling():
    # zero-derivative C^1 path: seminorm = (interval length)^{1-2a}
    a = 0.4
    for T in (1.0, 0.25):
        d = sample_drive(2, T, T / 2 ** 9, T / 2 ** 4, seed=4)
        Y = _deterministic_path(d, lambda t: t)
        val = controlled_remainder_check(Y, d, a)
        assert abs(val - T ** (1 - 2 * a)) < 0.02 * T ** (1 - 2 * a)


def test_remainder_square_of_brownian_is_finite():
    d = _drive(seed=6)
    Y = controlled_from_function(d, lambda b: b ** 2, lambda b: 2.0 * b)
    val = controlled_remainder_check(Y, d, 0.4)
    assert 0.0 < val < 10.0


# -------------------------------------------------------------------
# Ito equivalence
# -------------------------------------------------------------------

def test_ito_equivalence_constant_gap_zero():
    d = _drive(seed=8)
    rough, ito, gap = ito_equivalence(_ones_path(d), d, 0, (0.0, 1.0))
    assert gap < 1e-13


def test_ito_equivalence_gap_rate_half():
    # gap for Y = B is |QV - (T-S)|/2: RMS sqrt(h_f (T-S)/2)
    levels = [2 ** -9, 2 ** -11, 2 ** -13]
    rms = []
    for h in levels:
        gaps = []
        for seed in range(20):
            d = sample_drive(1, 1.0, h, 2 ** -5, 100 + seed)
            _, _, gap = ito_equivalence(brownian_as_controlled(d), d, 0,
                                        (0.0, 1.0))
            gaps.append(gap)
        rms.append(np.sqrt(np.mean(np.square(gaps))))
    rate = np.polyfit(np.log(levels), np.log(rms), 1)[0]
    assert rate > 0.45
    for h, r in zip(levels, rms):
        assert r < 3.0 * np.sqrt(h / 2.0)


def test_ito_equivalence_requires_coarse_endpoints():
    d = _drive()
    with pytest.raises(ValueError):
        ito_equivalence(_ones_path(d), d, 0, (0.0, 1.0 - d.h_f))


# -------------------------------------------------------------------
# properties
# -------------------------------------------------------------------

@settings(max_examples=12, deadline=None)
@given(st.integers(0, 14), st.integers(1, 16))
def test_property_additive_and_exact_on_nodes(i0, span):
    d = _drive(seed=31, h_f=2 ** -8)
    Y = brownian_as_controlled(d)
    S = i0 / 16.0
    T = min(1.0, S + span / 16.0)
    if T <= S:
        return
    val = rough_integral(Y, d, 0, (S, T))
    BT = d.values[0, d.index_of(T)]
    BS = d.values[0, d.index_of(S)]
    assert abs(val - 0.5 * (BT ** 2 - BS ** 2 - (T - S))) < 1e-12
    mid = 0.5 * (S + T)
    if d.index_of(S) < d.index_of(mid) < d.index_of(T):
        parts = rough_integral(Y, d, 0, (S, mid)) \
            + rough_integral(Y, d, 0, (mid, T))
        assert abs(val - parts) < 1e-12
