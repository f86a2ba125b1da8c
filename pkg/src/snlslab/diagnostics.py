"""Scalar functionals of the flow and the decomposition.

Mass and energy, velocity-ordered localization functions with their local
mass/momentum, the Lyapunov combination G, the remainder quadratic form H,
the linearized operators around the ground state with dense coercivity
estimation, decoupling integrals of translated profile pairs, and the
record stream that packages all of it per trajectory snapshot.
"""

from __future__ import annotations

from dataclasses import dataclass

import csv
import numpy as np
import scipy.linalg

from .grid import Field, SpatialGrid, h1_norm, l2_norm
from .ground_state import GroundStateProfile
from .modulation import decompose, mod_quantity
from .solitons import ansatz_fields

# ---------------------------------------------------------------------------
# smooth step and localizers

# order-7 smoothstep on [0,1]: zero value/slope/curvature/jerk at both ends
_S7 = np.array([-20.0, 70.0, -84.0, 35.0, 0.0, 0.0, 0.0, 0.0])   # z^7 .. z^0
_S7_D1 = np.polyder(_S7, 1)
_S7_D2 = np.polyder(_S7, 2)
_S7_D3 = np.polyder(_S7, 3)
_S7_TABLE = (_S7, _S7_D1, _S7_D2, _S7_D3)


def smooth_step(z, deriv=0):
    """C^3 monotone step: 0 for z <= 0, 1 for z >= 1; derivatives up to 3."""
    z = np.asarray(z, dtype=float)
    inside = (z > 0.0) & (z < 1.0)
    out = np.polyval(_S7_TABLE[deriv], np.where(inside, z, 0.0))
    out = np.where(inside, out, 0.0)
    if deriv == 0:
        out = np.where(z >= 1.0, 1.0, out)
    return out


def step_constants(n_samples=20001):
    """Constructed constants in psi'^2 <= C1 psi and psi''^2 <= C2 psi'."""
    z = np.linspace(0.0, 1.0, n_samples)
    s0 = smooth_step(z)
    s1 = smooth_step(z, 1)
    s2 = smooth_step(z, 2)
    c1 = np.max(np.where(s0 > 0, s1 ** 2 / np.maximum(s0, 1e-300), 0.0))
    c2 = np.max(np.where(s1 > 0, s2 ** 2 / np.maximum(s1, 1e-300), 0.0))
    return float(c1), float(c2)


class LocalizerSet:
    """Partition of unity following the soliton train.

    The basis direction e1 separates the velocities; slabs between the
    velocity midpoints sigma_k carry one soliton each, with smooth-step
    transitions of half-width A0 = min gap / 4 in the similarity variable
    (x.e1 - sigma t)/t.  The last function is built as the remainder so the
    partition sums to one bitwise.  Functions are returned in the original
    spec order, not the velocity-sorted order.
    """

    def __init__(self, velocities, e1=None):
        v = np.atleast_2d(np.asarray(velocities, dtype=float))
        self.K, self.d = v.shape
        self.e1 = self._pick_direction(v) if e1 is None else \
            np.asarray(e1, dtype=float) / np.linalg.norm(e1)
        proj = v @ self.e1
        self.order = np.argsort(proj)            # sorted slot -> spec index
        p_sorted = proj[self.order]
        if self.K > 1:
            gaps = np.diff(p_sorted)
            if np.min(gaps) <= 0:
                raise ValueError("velocities collide along the ordering axis")
            self.A0 = 0.25 * float(np.min(gaps))
            self.sigma = 0.5 * (p_sorted[:-1] + p_sorted[1:])
        else:
            self.A0 = None
            self.sigma = np.zeros(0)

    @staticmethod
    def _pick_direction(v):
        K, d = v.shape
        if d == 1:
            return np.array([1.0])
        for ang in np.pi * (np.sqrt(5.0) - 1.0) * np.arange(64):
            e = np.array([np.cos(ang), np.sin(ang)])
            proj = np.sort(v @ e)
            if K == 1 or np.min(np.diff(proj)) > 1e-9 * (1 + np.max(np.abs(proj))):
                return e
        raise ValueError("no ordering direction separates the velocities")

    def _x1(self, grid: SpatialGrid):
        if grid.d == 1:
            return self.e1[0] * grid.x1
        X, Y = grid.coords
        return self.e1[0] * X + self.e1[1] * Y

    def _steps(self, t, grid, deriv=0):
        # psi((x1 - sigma t)/t) for each interior boundary, mapped onto [0,1]
        x1 = self._x1(grid)
        half = self.A0
        out = []
        for s in self.sigma:
            z = ((x1 - s * t) / t + half) / (2.0 * half)
            out.append(smooth_step(z, deriv) * (2.0 * half) ** -deriv)
        return out

    def values(self, t, grid: SpatialGrid):
        """The K localizer arrays at time t, original spec order."""
        if self.K == 1:
            return [np.ones(grid.shape)]
        if not t > 0:
            raise ValueError("localizers need t > 0")
        psi = self._steps(t, grid)
        sorted_phi = [1.0 - psi[0]]
        for m in range(1, self.K - 1):
            sorted_phi.append(psi[m - 1] - psi[m])
        rest = np.ones(grid.shape)
        for f in sorted_phi:
            rest = rest - f
        sorted_phi.append(rest)                  # bitwise partition of unity
        out = [None] * self.K
        for slot, k in enumerate(self.order):
            out[k] = sorted_phi[slot]
        return out

    def derivative_stats(self, t, grid: SpatialGrid):
        """Measured sup of t*(|phi'| + |phi'''| + |dt phi|) over the grid."""
        if self.K == 1:
            return 0.0
        if not t > 0:
            raise ValueError("localizers need t > 0")
        x1 = self._x1(grid)
        d1 = self._steps(t, grid, 1)
        d3 = self._steps(t, grid, 3)
        worst = 0.0
        for m in range(self.K):
            lo = None if m == 0 else m - 1       # boundary below slab m
            hi = None if m == self.K - 1 else m
            sx = np.zeros(grid.shape)
            s3 = np.zeros(grid.shape)
            st = np.zeros(grid.shape)
            for sign, b in ((1.0, lo), (-1.0, hi)):
                if b is None:
                    continue
                sx += sign * d1[b] / t
                s3 += sign * d3[b] / t ** 3
                st += sign * d1[b] * (-x1 / t ** 2)
            worst = max(worst, float(np.max(np.abs(sx) + np.abs(s3)
                                            + np.abs(st))) * t)
        return worst


# ---------------------------------------------------------------------------
# global and local functionals

def mass(u: Field) -> float:
    return float(u.grid.cell * np.sum(np.abs(u.values) ** 2))


def _dealiased(u: Field):
    spec = u.spectrum * u.grid.dealias_mask
    return np.fft.ifftn(spec)


def energy(u: Field, p) -> float:
    """E = 1/2 ||grad u||^2 - 1/(p+1) int |u|^{p+1}."""
    grid = u.grid
    grad_sq = float(np.sum(grid.k2 * np.abs(u.spectrum) ** 2)
                    * grid.cell / grid.size)
    w = _dealiased(u)
    power = float(grid.cell * np.sum(np.abs(w) ** (p + 1.0)))
    return 0.5 * grad_sq - power / (p + 1.0)


def _grad_arrays(u: Field):
    grid = u.grid
    return [np.fft.ifftn(1j * kj * u.spectrum) for kj in grid.kvecs_odd]


def local_quantities(u: Field, loc: LocalizerSet, t):
    """(I_k, M_k): localized mass and momentum, last slot by remainder.

    Summing the I_k reproduces the total mass bitwise; same for each
    momentum component.
    """
    grid = u.grid
    phi = loc.values(t, grid)
    grads = _grad_arrays(u)
    dens = np.abs(u.values) ** 2
    mom = [np.imag(g * np.conj(u.values)) for g in grads]
    I = np.zeros(loc.K)
    M = np.zeros((loc.K, grid.d))
    total_I = float(grid.cell * np.sum(dens))
    total_M = np.array([float(grid.cell * np.sum(m)) for m in mom])
    last = int(loc.order[-1]) if loc.K > 1 else 0
    for k in range(loc.K):
        if k == last:
            continue
        I[k] = float(grid.cell * np.sum(dens * phi[k]))
        for j in range(grid.d):
            M[k, j] = float(grid.cell * np.sum(mom[j] * phi[k]))
    if loc.K > 1:
        I[last] = total_I - float(np.sum(np.delete(I, last)))
        M[last] = total_M - np.sum(np.delete(M, last, axis=0), axis=0)
    else:
        I[0] = total_I
        M[0] = total_M
    return I, M


def lyapunov(u: Field, loc: LocalizerSet, specs, t, p) -> float:
    """G = 2E + sum_k ((w0_k^-2 + |v_k|^2/4) I_k - v_k . M_k)."""
    I, M = local_quantities(u, loc, t)
    G = 2.0 * energy(u, p)
    for k, s in enumerate(specs):
        v = np.asarray(s.v)
        G += (s.w0 ** -2.0 + 0.25 * float(v @ v)) * I[k] - float(v @ M[k])
    return float(G)


def unstable_direction(Q: GroundStateProfile, specs, state):
    """Per-soliton Re<R_k, eps> at the fitted parameters."""
    grid = state.eps.grid
    cell = grid.cell
    out = []
    for s, prm in zip(specs, state.params):
        R = ansatz_fields(Q, s, prm, state.t, grid)["R"]
        out.append(float((cell * np.vdot(state.eps.values, R)).real))
    return np.asarray(out)


def quadratic_form_H(eps: Field, Q: GroundStateProfile, specs, params,
                     loc: LocalizerSet, t, p) -> float:
    """Quadratic part of G around the soliton sum.

    H = int |grad eps|^2
        - sum_k int |R_k|^{p-1}|eps|^2 + (p-1)|R_k|^{p-3}(Re R_k eps-bar)^2
        + sum_k (w_k^-2 + |v_k|^2/4) int |eps|^2 phi_k
               - v_k . Im int grad eps eps-bar phi_k
    with the p-3 power evaluated in the combined bounded form.
    """
    grid = eps.grid
    cell = grid.cell
    e = eps.values
    H = float(np.sum(grid.k2 * np.abs(eps.spectrum) ** 2) * cell / grid.size)
    abs_e2 = np.abs(e) ** 2
    for s, prm in zip(specs, params):
        R = ansatz_fields(Q, s, prm, t, grid)["R"]
        amp = np.abs(R)
        cross = np.real(R * np.conj(e))
        with np.errstate(divide="ignore", invalid="ignore"):
            # |R|^{p-3} (Re R eps-bar)^2 <= |R|^{p-1} |eps|^2, so clamp at
            # profile zeros instead of dividing
            sing = np.where(amp > 1e-150,
                            amp ** (p - 3.0) * cross ** 2, 0.0)
        H -= float(cell * np.sum(amp ** (p - 1.0) * abs_e2
                                 + (p - 1.0) * sing))
    phi = loc.values(t, grid)
    grads = _grad_arrays(eps)
    for k, (s, prm) in enumerate(zip(specs, params)):
        v = np.asarray(s.v)
        H += (prm.w ** -2.0 + 0.25 * float(v @ v)) * float(
            cell * np.sum(abs_e2 * phi[k]))
        for j in range(grid.d):
            H -= v[j] * float(cell * np.sum(
                np.imag(grads[j] * np.conj(e)) * phi[k]))
    return float(H)


# ---------------------------------------------------------------------------
# linearized operators around the ground state (d = 1, dense)

def _profile_on_grid(Q: GroundStateProfile, grid: SpatialGrid):
    if grid.d != 1:
        raise ValueError("linearized operators are implemented on the line")
    return Q.value(np.abs(grid.x1))


def linearized_apply(f: Field, Q: GroundStateProfile):
    """(L_+ f1, L_- f2): -Delta + 1 - p Q^{p-1} and -Delta + 1 - Q^{p-1}."""
    grid = f.grid
    q = _profile_on_grid(Q, grid)
    pot = q ** (Q.p - 1.0)
    out = []
    for part, coef in ((np.real(f.values), Q.p), (np.imag(f.values), 1.0)):
        lap = np.real(np.fft.ifft(-grid.k2 * np.fft.fft(part)))
        out.append(Field(grid, (-lap + part - coef * pot * part)
                         .astype(complex)))
    return out[0], out[1]


def _laplacian_matrix(grid: SpatialGrid):
    F = np.fft.fft(np.eye(grid.n), axis=0)
    return np.real(np.fft.ifft(grid.k2[:, None] * F, axis=0))


def default_directions(Q: GroundStateProfile, grid: SpatialGrid):
    """Orthogonality sets for the coercivity bound.

    Real part: {Q, dQ/dx}, plus x dQ/dx at the critical exponent.
    Imaginary part: {Q}.
    """
    q = _profile_on_grid(Q, grid)
    dq = np.sign(grid.x1) * Q.dvalue(np.abs(grid.x1))
    plus = [q, dq]
    if abs(Q.p - (1.0 + 4.0 / Q.d)) < 1e-12:
        plus.append(grid.x1 * dq)
    return plus, [q]


def coercivity_estimate(Q: GroundStateProfile, grid: SpatialGrid,
                        dirs_plus=None, dirs_minus=None):
    """Smallest Rayleigh quotient (Lf, f)/||f||_H1^2 over the complement.

    Dense generalized eigensolve of both one-dimensional blocks; returns the
    smaller of the two minima.
    """
    if dirs_plus is None or dirs_minus is None:
        dp, dm = default_directions(Q, grid)
        dirs_plus = dp if dirs_plus is None else dirs_plus
        dirs_minus = dm if dirs_minus is None else dirs_minus
    q = _profile_on_grid(Q, grid)
    lap = _laplacian_matrix(grid)
    gram = np.eye(grid.n) + lap
    out = []
    for dirs, coef in ((dirs_plus, Q.p), (dirs_minus, 1.0)):
        A = lap + np.diag(1.0 - coef * q ** (Q.p - 1.0))
        V = np.column_stack([np.asarray(v, dtype=float) for v in dirs])
        U = scipy.linalg.null_space(V.T)
        vals = scipy.linalg.eigh(U.T @ A @ U, U.T @ gram @ U,
                                 eigvals_only=True, subset_by_index=[0, 0])
        if not np.all(np.isfinite(vals)):
            raise ArithmeticError("projected eigensolve returned non-finite "
                                  "values")
        out.append(float(vals[0]))
    return min(out)


def h_form_coercivity(Q: GroundStateProfile, spec, params, loc, t, p,
                      grid: SpatialGrid):
    """Minimum of H over the unit H1 sphere orthogonal to the soliton frame.

    Single soliton, d = 1.  The complement removes the real span of
    {grad R, iR, scaling direction, R}.
    """
    if grid.d != 1:
        raise ValueError("dense H minimization is implemented on the line")
    n = grid.n
    cell = grid.cell
    f = ansatz_fields(Q, spec, params, t, grid)
    R = f["R"]
    v = spec.v[0]
    lap = _laplacian_matrix(grid)
    phi = loc.values(t, grid)[0]

    amp = np.abs(R)
    pot = amp ** (p - 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        wgt = np.where(amp > 1e-150, amp ** (p - 3.0), 0.0)
    R1, R2 = np.real(R), np.imag(R)
    m_w = (params.w ** -2.0 + 0.25 * v * v) * phi

    A11 = lap + np.diag(-pot + m_w - (p - 1.0) * wgt * R1 ** 2)
    A22 = lap + np.diag(-pot + m_w - (p - 1.0) * wgt * R2 ** 2)
    A12 = np.diag(-(p - 1.0) * wgt * R1 * R2)
    # momentum term -v Im int grad e e-bar phi = -v int phi (f2' f1 - f1' f2),
    # symmetrized cross block (1/2)(-v Phi D + v D^T Phi)
    F = np.fft.fft(np.eye(n), axis=0)
    D = np.real(np.fft.ifft(1j * grid.kvecs_odd[0][:, None] * F, axis=0))
    Phi = np.diag(phi)
    A12 += 0.5 * v * (D.T @ Phi - Phi @ D)
    A = np.block([[A11, A12], [A12.T, A22]])
    A = 0.5 * (A + A.T)
    gram = np.block([[np.eye(n) + lap, np.zeros((n, n))],
                     [np.zeros((n, n)), np.eye(n) + lap]])

    dirs = []
    for g in (-f["dalpha"][0] + 0.5j * v * R, 1j * R, f["lam"], R):
        dirs.append(np.concatenate([np.real(g), np.imag(g)]))
    V = np.column_stack(dirs)
    U = scipy.linalg.null_space(V.T)
    vals = scipy.linalg.eigh(U.T @ (cell * A) @ U, U.T @ (cell * gram) @ U,
                             eigvals_only=True, subset_by_index=[0, 0])
    return float(vals[0])


# ---------------------------------------------------------------------------
# decoupling integrals

def decoupling_integral(grid: SpatialGrid, prof_j, prof_k, center_j, center_k,
                        p1, p2) -> float:
    """int prof_j(|x - c_j|)^{p1} prof_k(|x - c_k|)^{p2} on the grid."""
    cj = np.atleast_1d(np.asarray(center_j, dtype=float))
    ck = np.atleast_1d(np.asarray(center_k, dtype=float))
    if grid.d == 1:
        rj = np.abs(grid.x1 - cj[0])
        rk = np.abs(grid.x1 - ck[0])
    else:
        X, Y = grid.coords
        rj = np.hypot(X - cj[0], Y - cj[1])
        rk = np.hypot(X - ck[0], Y - ck[1])
    vals = np.asarray(prof_j(rj), dtype=float) ** p1 \
        * np.asarray(prof_k(rk), dtype=float) ** p2
    return float(grid.cell * np.sum(vals))


def decoupling_decay_fit(grid, prof_j, prof_k, v_j, v_k, a_j, a_k,
                         times, p1=1.0, p2=1.0):
    """Log-linear fit of the overlap integral along centers v t + a."""
    v_j = np.atleast_1d(np.asarray(v_j, dtype=float))
    v_k = np.atleast_1d(np.asarray(v_k, dtype=float))
    a_j = np.atleast_1d(np.asarray(a_j, dtype=float))
    a_k = np.atleast_1d(np.asarray(a_k, dtype=float))
    if np.allclose(v_j, v_k):
        raise ValueError("decoupling needs distinct velocities")
    ts = np.asarray(times, dtype=float)
    vals = np.array([decoupling_integral(grid, prof_j, prof_k,
                                         v_j * t + a_j, v_k * t + a_k, p1, p2)
                     for t in ts])
    fit = fit_log_linear(ts, vals)
    fit["values"] = vals
    return fit


# ---------------------------------------------------------------------------
# fits and envelopes

def _r_squared(y, yhat):
    ss = float(np.sum((y - np.mean(y)) ** 2))
    if ss == 0.0:
        return 1.0
    return 1.0 - float(np.sum((y - yhat) ** 2)) / ss


def fit_log_linear(t, y):
    """log y = slope * t + intercept on the positive entries."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    m = y > 0
    if np.sum(m) < 3:
        raise ValueError("need at least three positive samples")
    ly = np.log(y[m])
    slope, intercept = np.polyfit(t[m], ly, 1)
    r2 = _r_squared(ly, slope * t[m] + intercept)
    return {"slope": float(slope), "intercept": float(intercept),
            "r_squared": float(r2), "n": int(np.sum(m))}


def fit_log_power(t, y):
    """log y = exponent * log t + intercept on the positive entries."""
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    m = (y > 0) & (t > 0)
    if np.sum(m) < 3:
        raise ValueError("need at least three positive samples")
    lt, ly = np.log(t[m]), np.log(y[m])
    slope, intercept = np.polyfit(lt, ly, 1)
    r2 = _r_squared(ly, slope * lt + intercept)
    return {"exponent": float(slope), "intercept": float(intercept),
            "r_squared": float(r2), "n": int(np.sum(m))}


def almost_conservation_monitor(records, delta2=1.0, phi_vals=None):
    """Centered-difference |dI_k/dt|, |dM_k/dt| against their bound shapes.

    Mass shape: (1/t)(||eps||_H1^2 + e^{-delta2 t}).  Momentum shape adds
    B*(t)(||eps||_H1^2 + phi + e^{-delta2 t}); pass the noise decay envelope
    phi sampled on the record times (defaults to zero).
    """
    t = np.array([r.t for r in records])
    I = np.stack([r.I for r in records])
    M = np.stack([r.M for r in records])
    eps2 = np.array([r.eps_h1 for r in records]) ** 2
    bstar = np.array([r.b_star for r in records])
    phi = np.zeros_like(t) if phi_vals is None else np.asarray(phi_vals)
    dI = np.gradient(I, t, axis=0)
    dM = np.gradient(M, t, axis=0)
    decay = np.exp(-delta2 * t)
    shape_I = (eps2 + decay) / t
    shape_M = shape_I + bstar * (eps2 + phi + decay)
    cI, _ = envelope_constant(t, np.max(np.abs(dI), axis=1), shape_I)
    cM, _ = envelope_constant(
        t, np.max(np.abs(dM).reshape(len(t), -1), axis=1), shape_M)
    return {"t": t, "dI": dI, "dM": dM, "shape_mass": shape_I,
            "shape_momentum": shape_M, "c_mass": cI, "c_momentum": cM,
            "max_dI": float(np.max(np.abs(dI))),
            "max_dM": float(np.max(np.abs(dM)))}


def energy_drift_monitor(records, delta2=1.0, phi_vals=None):
    """|dE/dt| against C B*(t)(phi + ||eps||_H1^2 + e^{-delta2 t}).

    Returns the fitted constant (nan when the shape vanishes identically),
    the raw drift, and an unbounded-growth flag on the ratio series.
    """
    t = np.array([r.t for r in records])
    E = np.array([r.energy for r in records])
    eps2 = np.array([r.eps_h1 for r in records]) ** 2
    bstar = np.array([r.b_star for r in records])
    phi = np.zeros_like(t) if phi_vals is None else np.asarray(phi_vals)
    dE = np.gradient(E, t)
    shape = bstar * (phi + eps2 + np.exp(-delta2 * t))
    if np.any(shape > 0):
        c, ratio = envelope_constant(t, dE, shape)
        grows = bool(np.nanmax(ratio[-3:]) > 10.0 * np.nanmedian(
            ratio[np.isfinite(ratio)]))
    else:
        c, ratio, grows = float("nan"), np.full_like(t, np.nan), False
    return {"t": t, "dE": dE, "shape": shape, "c_energy": c, "ratio": ratio,
            "unbounded": grows, "max_dE": float(np.max(np.abs(dE))),
            "total_drift": float(abs(E[-1] - E[0]))}


def envelope_constant(t, observed, shape):
    """Smallest C with |observed| <= C * shape where the shape is positive."""
    t = np.asarray(t, dtype=float)
    obs = np.abs(np.asarray(observed, dtype=float))
    shp = np.asarray(shape, dtype=float)
    m = shp > 0
    if not np.any(m):
        raise ValueError("bound shape vanishes everywhere")
    ratio = np.full_like(obs, np.nan)
    ratio[m] = obs[m] / shp[m]
    return float(np.nanmax(ratio)), ratio


# ---------------------------------------------------------------------------
# record stream

RECORD_COLUMNS = ("t", "mass", "energy", "G", "H", "eps_l2", "eps_h1",
                  "mod", "b_star")


@dataclass
class DiagnosticsRecord:
    t: float
    mass: float
    energy: float
    I: np.ndarray
    M: np.ndarray
    unstable: np.ndarray
    G: float
    H: float
    eps_l2: float
    eps_h1: float
    mod: float
    b_star: float

    def finite(self):
        vals = [self.t, self.mass, self.energy, self.G, self.H,
                self.eps_l2, self.eps_h1, self.mod, self.b_star]
        return (all(np.isfinite(v) for v in vals)
                and np.all(np.isfinite(self.I))
                and np.all(np.isfinite(self.M))
                and np.all(np.isfinite(self.unstable)))


def record_stream(traj, Q: GroundStateProfile, specs, mode, p,
                  assembly=None, loc=None, guess=None):
    """Decompose every snapshot and package the functionals.

    Trajectory samples must sit on a uniform mesh (Mod uses centered
    differences).  Parameter fits are chained snapshot to snapshot.
    """
    if loc is None:
        loc = LocalizerSet([s.v for s in specs])
    states = []
    for t, u in zip(traj.times, traj.states):
        st = decompose(u, t, Q, specs, mode, guess=guess)
        guess = st.params
        states.append(st)
    if len(states) >= 3:
        dt = float(traj.times[1] - traj.times[0])
        mods = mod_quantity(states, dt)["mod"]
    else:
        mods = np.zeros(len(states))
    records = []
    for st, u, m in zip(states, traj.states, mods):
        I, M = local_quantities(u, loc, st.t)
        rec = DiagnosticsRecord(
            t=st.t, mass=mass(u), energy=energy(u, p), I=I, M=M,
            unstable=unstable_direction(Q, specs, st),
            G=lyapunov(u, loc, specs, st.t, p),
            H=quadratic_form_H(st.eps, Q, specs, st.params, loc, st.t, p),
            eps_l2=st.eps_l2, eps_h1=st.eps_h1, mod=float(m),
            b_star=float(assembly.b_star_stat(st.t)) if assembly else 0.0)
        if not rec.finite():
            raise ArithmeticError(f"non-finite diagnostics at t={st.t}")
        records.append(rec)
    for a, b in zip(records, records[1:]):
        if not b.t > a.t:
            raise ValueError("record times must increase strictly")
    return records, states


def records_to_csv(path, records):
    K = len(records[0].I)
    d = records[0].M.shape[1]
    cols = list(RECORD_COLUMNS)
    for k in range(K):
        cols += [f"I{k}"] + [f"M{k}_{j}" for j in range(d)] + [f"unstable{k}"]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for r in records:
            row = [r.t, r.mass, r.energy, r.G, r.H, r.eps_l2, r.eps_h1,
                   r.mod, r.b_star]
            for k in range(K):
                row.append(r.I[k])
                row.extend(r.M[k])
                row.append(r.unstable[k])
            wr.writerow([f"{x:.12g}" for x in row])
