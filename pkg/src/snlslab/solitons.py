"""Solitary waves, modulated ansatz fields, and pseudo-conformal profiles.

All evaluators take the base GroundStateProfile (w = 1) and apply scalings
analytically; nothing here re-solves the elliptic problem.

Conventions:
    R(t,x)      = Q_{w0}(x - v t - x0) exp(i(v.x/2 - |v|^2 t/4 + t/w0^2 + theta0))
    ansatz      = Q_{w}(x - v t - alpha) with the same phase but theta free and
                  the t/w0^2 term kept at the FIXED frequency w0
    S_T(t,x)    = Q_{w(T-t)}(x - xs) exp(i(-|x - xs|^2/(4(T-t)) + 1/(w^2(T-t)) + theta))
                  (critical exponent only, where Q_{w} is the mass-preserving
                  rescaling, so the L2 norm never moves)
    C_T(R)(t,x) = (T-t)^{-d/2} R(1/(T-t), x/(T-t)) exp(-i|x|^2/(4(T-t)))
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Field, SpatialGrid
from .ground_state import GroundStateProfile

TAIL_TOL = 1e-10


@dataclass(frozen=True)
class SolitonSpec:
    """One solitary wave: frequency, velocity, initial center and phase."""

    w0: float
    v: tuple
    x0: tuple
    theta0: float = 0.0

    def __post_init__(self):
        if not (self.w0 > 0):
            raise ValueError(f"frequency must be positive, got {self.w0}")
        object.__setattr__(self, "v", tuple(float(c) for c in np.atleast_1d(self.v)))
        object.__setattr__(self, "x0", tuple(float(c) for c in np.atleast_1d(self.x0)))
        if len(self.v) != len(self.x0):
            raise ValueError("velocity and center dimensions differ")

    @property
    def d(self):
        return len(self.v)


def validate_multi(specs):
    """Distinct velocities, a standing assumption for every multi-soliton run."""
    for i, a in enumerate(specs):
        for b in specs[i + 1:]:
            if a.d != b.d:
                raise ValueError("mixed dimensions in soliton collection")
            if np.allclose(a.v, b.v):
                raise ValueError(f"velocities must be pairwise distinct: {a.v}")
    return list(specs)


@dataclass
class ModulationParams:
    """Free parameters of one modulated soliton.

    critical=True lets the frequency move; otherwise w is pinned to the
    spec frequency and the scaling direction is dropped from the modulation
    system.
    """

    alpha: tuple
    theta: float
    w: float
    critical: bool = False

    def __post_init__(self):
        self.alpha = tuple(float(c) for c in np.atleast_1d(self.alpha))
        if not (self.w > 0):
            raise ValueError(f"frequency must be positive, got {self.w}")

    @classmethod
    def at_rest(cls, spec: SolitonSpec, critical=False):
        return cls(alpha=spec.x0, theta=spec.theta0, w=spec.w0, critical=critical)


def _offsets(grid: SpatialGrid, center):
    if grid.d == 1:
        return (grid.x1 - center[0],)
    X, Y = grid.coords
    return (X - center[0], Y - center[1])


def _radius(offs):
    if len(offs) == 1:
        return np.abs(offs[0])
    return np.sqrt(offs[0] ** 2 + offs[1] ** 2)


def _boundary_tail(grid: SpatialGrid, values):
    """Largest sample magnitude on the box seam (x_j = -L faces)."""
    if grid.d == 1:
        return float(np.abs(values[0]))
    return float(max(np.max(np.abs(values[0, :])), np.max(np.abs(values[:, 0]))))


def _require_base(Q: GroundStateProfile):
    if Q.w != 1.0:
        raise ValueError("evaluators take the base (w = 1) profile; "
                         "scalings come from specs and parameters")


def _phase(spec: SolitonSpec, theta, t, grid: SpatialGrid):
    v = np.asarray(spec.v)
    if grid.d == 1:
        vdotx = v[0] * grid.x1
    else:
        X, Y = grid.coords
        vdotx = v[0] * X + v[1] * Y
    vv = float(v @ v)
    return 0.5 * vdotx + (-0.25 * vv * t + spec.w0 ** -2.0 * t + theta)


def solitary_wave(Q: GroundStateProfile, spec: SolitonSpec, t: float,
                  grid: SpatialGrid) -> Field:
    """Exact traveling soliton R(t)."""
    _require_base(Q)
    if spec.d != grid.d:
        raise ValueError("spec dimension does not match grid")
    center = np.asarray(spec.v) * t + np.asarray(spec.x0)
    prof = Q.rescale(spec.w0).value(_radius(_offsets(grid, center)))
    vals = prof * np.exp(1j * _phase(spec, spec.theta0, t, grid))
    f = Field(grid, vals)
    tail = _boundary_tail(grid, vals)
    f.meta["boundary_tail"] = tail
    f.meta["tail_warning"] = tail > TAIL_TOL
    return f


def modulated_wave(Q: GroundStateProfile, spec: SolitonSpec,
                   params: ModulationParams, t: float,
                   grid: SpatialGrid) -> Field:
    """Ansatz soliton with modulated (alpha, theta, w) and fixed-w0 phase drift."""
    _require_base(Q)
    if not params.critical and params.w != spec.w0:
        raise ValueError("frequency is pinned to the spec value below the "
                         "critical exponent")
    center = np.asarray(spec.v) * t + np.asarray(params.alpha)
    prof = Q.rescale(params.w).value(_radius(_offsets(grid, center)))
    vals = prof * np.exp(1j * _phase(spec, params.theta, t, grid))
    f = Field(grid, vals)
    tail = _boundary_tail(grid, vals)
    f.meta["boundary_tail"] = tail
    f.meta["tail_warning"] = tail > TAIL_TOL
    return f


def ansatz_fields(Q: GroundStateProfile, spec: SolitonSpec,
                  params: ModulationParams, t: float, grid: SpatialGrid):
    """One-pass evaluation of the ansatz and its parameter derivatives.

    Returns a dict of raw complex arrays:
      R        the modulated soliton
      dalpha   list over axes j of  dR/dalpha_j = -exp(i Phi) dQ_w/dx_j
      dtheta   dR/dtheta = i R
      dw       dR/dw = -(1/w) exp(i Phi) (Lambda Q_w)  (None when pinned)
      lam      exp(i Phi) (Lambda Q_w), the scaling orthogonality direction
    """
    _require_base(Q)
    center = np.asarray(spec.v) * t + np.asarray(params.alpha)
    offs = _offsets(grid, center)
    r = _radius(offs)
    prof = Q.rescale(params.w)
    qv = prof.value(r)
    dq = prof.dvalue(r)
    phase = np.exp(1j * _phase(spec, params.theta, t, grid))
    R = qv * phase
    with np.errstate(invalid="ignore", divide="ignore"):
        unit = [np.where(r > 0, o / np.where(r > 0, r, 1.0), 0.0) for o in offs]
    dalpha = [-(dq * u) * phase for u in unit]
    lam = (prof.sigma * qv + r * dq) * phase
    dw = None if not params.critical else -(1.0 / params.w) * lam
    return {"R": R, "dalpha": dalpha, "dtheta": 1j * R, "dw": dw, "lam": lam,
            "profile": qv, "dprofile": dq, "radius": r, "phase": phase}


def sum_of_solitons(Q: GroundStateProfile, specs, t: float,
                    grid: SpatialGrid) -> Field:
    specs = validate_multi(specs)
    total = np.zeros(grid.shape, dtype=complex)
    tail = 0.0
    for s in specs:
        f = solitary_wave(Q, s, t, grid)
        total += f.values
        tail = max(tail, f.meta["boundary_tail"])
    out = Field(grid, total)
    out.meta["boundary_tail"] = tail
    out.meta["tail_warning"] = tail > TAIL_TOL
    return out


# --- pseudo-conformal family ------------------------------------------------

def _require_critical(Q: GroundStateProfile):
    if abs(Q.p - (1.0 + 4.0 / Q.d)) > 1e-12:
        raise ValueError("pseudo-conformal profiles need the critical exponent "
                         f"p = 1 + 4/d, got p={Q.p} at d={Q.d}")


def pseudo_conformal_blowup(Q: GroundStateProfile, T: float, w: float,
                            x_star, theta: float, t: float,
                            grid: SpatialGrid) -> Field:
    """Profile concentrating at x_star as t -> T with rate ||grad|| ~ 1/(T-t)."""
    _require_base(Q)
    _require_critical(Q)
    if t == T:
        raise ValueError("the blow-up profile is singular at t = T")
    if not (w > 0):
        raise ValueError("width parameter must be positive")
    tau = T - t
    x_star = tuple(float(c) for c in np.atleast_1d(x_star))
    offs = _offsets(grid, x_star)
    r = _radius(offs)
    # at the critical exponent the mass-preserving rescale IS the blow-up scaling
    prof = Q.rescale(abs(w * tau)).value(r)
    phase = -0.25 * r ** 2 / tau + 1.0 / (w * w * tau) + theta
    f = Field(grid, prof * np.exp(1j * phase))
    f.meta["concentration_scale"] = w * tau
    # flag when the quadratic phase oscillates beyond the mesh Nyquist rate
    f.meta["aliasing_warning"] = bool(
        (grid.L + max(abs(c) for c in x_star)) / (2.0 * abs(tau)) > np.pi / grid.h)
    return f


def pseudo_conformal_evaluator(r_eval, T: float, d: int):
    """C_T as an evaluator transformer, so it can be composed with itself."""

    def ev(s, coords):
        tau = T - s
        if tau == 0:
            raise ValueError("singular time")
        scaled = tuple(c / tau for c in coords)
        rr2 = sum(c * c for c in coords)
        amp = (tau + 0j) ** (-0.5 * d)
        return amp * r_eval(1.0 / tau, scaled) * np.exp(-0.25j * rr2 / tau)

    return ev


def solitary_wave_evaluator(Q: GroundStateProfile, spec: SolitonSpec):
    """Off-grid evaluator (t, coords) -> values for the exact soliton."""
    _require_base(Q)
    prof = Q.rescale(spec.w0)
    v = np.asarray(spec.v)
    x0 = np.asarray(spec.x0)
    vv = float(v @ v)

    def ev(s, coords):
        offs = [c - (v[j] * s + x0[j]) for j, c in enumerate(coords)]
        r = _radius(offs)
        vdotx = sum(v[j] * coords[j] for j in range(len(coords)))
        ph = 0.5 * vdotx - 0.25 * vv * s + spec.w0 ** -2.0 * s + spec.theta0
        return prof.value(r) * np.exp(1j * ph)

    return ev


def pseudo_conformal_transform(r_eval, T: float, t: float,
                               grid: SpatialGrid) -> Field:
    """Sample C_T(R)(t) on the grid; r_eval is an off-grid evaluator."""
    if t == T:
        raise ValueError("singular time")
    vals = pseudo_conformal_evaluator(r_eval, T, grid.d)(t, grid.coords)
    f = Field(grid, np.asarray(vals, dtype=complex))
    f.meta["boundary_tail"] = _boundary_tail(grid, f.values)
    return f
