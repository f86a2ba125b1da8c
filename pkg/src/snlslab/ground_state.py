"""Ground states of  Delta Q - Q + |Q|^{p-1} Q = 0  and their rescalings.

The positive radial profile is computed by spectral renormalization
(Petviashvili iteration) on a dedicated periodic grid, certified against the
elliptic residual and the Pohozaev balance, and exported as a radial cubic
spline so solitary-wave evaluation stays cheap.

Closed form used as a d=1 cross-check:
    Q(x) = ((p+1)/2)^{1/(p-1)} sech^{2/(p-1)}((p-1) x / 2)
Rescaling convention:
    Q_w(x) = w^{-2/(p-1)} Q(x/w),  solving  Delta Q_w - w^{-2} Q_w + Q_w^p = 0.
"""

from __future__ import annotations

import json

import numpy as np
from scipy.interpolate import CubicSpline

from .grid import SpatialGrid

_BASE_N_1D = 8192
_BASE_L_1D = 32.0
_BASE_N_2D = 512
_BASE_L_2D = 16.0
_FINE_N_2D = 8192  # upsampled axis resolution for the radial extraction
_MAX_ITERS = 800


class GroundStateError(RuntimeError):
    """Non-convergence diagnostic; carries the last residual."""

    def __init__(self, msg, residual=None):
        super().__init__(msg)
        self.residual = residual


def closed_form_1d(p: float, x):
    """Exact d=1 ground state."""
    a = ((p + 1.0) / 2.0) ** (1.0 / (p - 1.0))
    return a * np.cosh((p - 1.0) * np.asarray(x) / 2.0) ** (-2.0 / (p - 1.0))


def _power(q, p):
    # odd extension |q|^{p-1} q, safe for fractional p and stray negatives
    return np.abs(q) ** (p - 1.0) * q


class GroundStateProfile:
    """Radial profile of Q_w with certified norms.

    Base (w=1) samples are shared between rescalings, so
    rescale(rescale(Q, a), b) equals rescale(Q, a*b) to the bit.
    """

    def __init__(self, p, d, r, q, norms, decay, w=1.0, _spline=None):
        self.p = float(p)
        self.d = int(d)
        self.w = float(w)
        self.r = r          # base radial nodes (w = 1)
        self.q = q          # base radial samples (w = 1)
        self._spline = _spline if _spline is not None else CubicSpline(
            r, q, bc_type=((1, 0.0), (1, 0.0)))
        self._dspline = self._spline.derivative()
        # norms of the BASE profile: (mass, grad_sq, p_plus_1_integral)
        self.base_mass = norms[0]
        self.base_grad_sq = norms[1]
        self.base_power = norms[2]
        self.base_decay = decay  # (C, delta) for the w = 1 profile
        self.r_max = float(r[-1])

    # --- scaling laws -----------------------------------------------------
    @property
    def sigma(self):
        return 2.0 / (self.p - 1.0)

    @property
    def mass(self):
        """||Q_w||_{L2}^2 = w^{d - 4/(p-1)} ||Q||_{L2}^2."""
        return self.w ** (self.d - 2.0 * self.sigma) * self.base_mass

    @property
    def grad_sq(self):
        return self.w ** (self.d - 2.0 - 2.0 * self.sigma) * self.base_grad_sq

    @property
    def power_integral(self):
        """integral of Q_w^{p+1}."""
        return self.w ** (self.d - (self.p + 1.0) * self.sigma) * self.base_power

    @property
    def peak(self):
        return self.w ** (-self.sigma) * float(self.q[0])

    @property
    def decay(self):
        C, delta = self.base_decay
        return (self.w ** (-self.sigma) * C, delta / self.w)

    def energy(self):
        return 0.5 * self.grad_sq - self.power_integral / (self.p + 1.0)

    # --- evaluation -------------------------------------------------------
    def value(self, r):
        """Q_w at radius r (clamped to zero beyond the sampled tail)."""
        r = np.abs(np.asarray(r, dtype=float))
        s = r / self.w
        out = self.w ** (-self.sigma) * self._spline(np.minimum(s, self.r_max))
        return np.where(s <= self.r_max, out, 0.0)

    def dvalue(self, r):
        """dQ_w/dr at radius r."""
        r = np.abs(np.asarray(r, dtype=float))
        s = r / self.w
        out = self.w ** (-self.sigma - 1.0) * self._dspline(np.minimum(s, self.r_max))
        return np.where(s <= self.r_max, out, 0.0)

    def lambda_value(self, r):
        """(Lambda Q_w)(r) = (2/(p-1)) Q_w + r dQ_w/dr, the scaling direction."""
        r = np.abs(np.asarray(r, dtype=float))
        return self.sigma * self.value(r) + r * self.dvalue(r)

    def lambda_norm_sq(self):
        """||Lambda Q_w||_{L2}^2 by radial quadrature on the base nodes."""
        lam = self.sigma * self.q + self.r * self._dspline(self.r)
        h = float(self.r[1] - self.r[0])
        if self.d == 1:
            base = 2.0 * h * float(np.sum(lam ** 2)) - h * float(lam[0] ** 2)
        else:
            base = 2.0 * np.pi * h * float(np.sum(self.r * lam ** 2))
        # Lambda commutes with the rescaling: (Lambda Q_w)(x) = w^{-sigma} (Lambda Q)(x/w)
        return self.w ** (self.d - 2.0 * self.sigma) * base

    def rescale(self, w: float):
        if not (w > 0):
            raise ValueError(f"scaling parameter must be positive, got {w}")
        return GroundStateProfile(
            self.p, self.d, self.r, self.q,
            (self.base_mass, self.base_grad_sq, self.base_power),
            self.base_decay, w=self.w * w, _spline=self._spline)

    # --- certification ----------------------------------------------------
    def pohozaev_residual(self):
        # balance for Delta Q_w - w^{-2} Q_w + Q_w^p = 0; at w = 1 this is
        # |(d-2)||grad Q||^2 + d||Q||^2 - (2d/(p+1)) int Q^{p+1}| / ||Q||^2
        d, p = self.d, self.p
        lhs = (d - 2.0) * self.grad_sq + d * self.w ** -2.0 * self.mass
        rhs = (2.0 * d / (p + 1.0)) * self.power_integral
        return abs(lhs - rhs) / self.mass

    def certificate(self):
        C, delta = self.decay
        return {
            "p": self.p, "d": self.d, "w": self.w,
            "peak": self.peak,
            "mass": self.mass,
            "grad_sq": self.grad_sq,
            "power_integral": self.power_integral,
            "energy": self.energy(),
            "pohozaev_residual": self.pohozaev_residual(),
            "decay_C": C, "decay_delta": delta,
        }

    def save_csv(self, path):
        data = np.column_stack([self.r * self.w,
                                self.w ** (-self.sigma) * self.q])
        np.savetxt(path, data, delimiter=",", header="r,Q", comments="", fmt="%.17g")

    def save_certificate(self, path):
        with open(path, "w") as fh:
            json.dump(self.certificate(), fh, indent=2, sort_keys=True)


def _petviashvili(grid: SpatialGrid, p: float, tol: float):
    """Fixed point of (1 - Delta) Q = |Q|^{p-1} Q with norm-restoring factor."""
    q = np.exp(-grid.r2())  # Gaussian seed
    denom = 1.0 + grid.k2
    gamma = p / (p - 1.0)
    best = np.inf
    for it in range(_MAX_ITERS):
        qh = np.fft.fftn(q)
        nh = np.fft.fftn(_power(q, p))
        s = np.vdot(qh, denom * qh).real / np.vdot(qh, nh).real
        q = (s ** gamma) * np.real(np.fft.ifftn(nh / denom))
        res = _elliptic_residual(grid, q, p)
        rel = res / np.sqrt(grid.cell * float(np.sum(q ** 2)))
        if rel < tol:
            return q, rel
        if it > 30 and rel > 100.0 * best:
            raise GroundStateError("renormalization iteration diverged", rel)
        best = min(best, rel)
    raise GroundStateError("renormalization did not converge", best)


def _elliptic_residual(grid: SpatialGrid, q, p):
    """||Delta Q - Q + |Q|^{p-1} Q||_{L2} evaluated spectrally."""
    qh = np.fft.fftn(q)
    lap = np.real(np.fft.ifftn(-grid.k2 * qh))
    res = lap - q + _power(q, p)
    return float(np.sqrt(grid.cell * np.sum(res ** 2)))


def _radial_from_axis(x, row):
    """Even-symmetrized nonnegative-axis samples (r_j = j h, values)."""
    n = len(x)
    half = n // 2
    r = x[half:] - x[half]  # exact 0 at the origin node
    vals = row[half:].copy()
    vals[1:] = 0.5 * (row[half + 1:] + row[half - 1:0:-1])
    return r, vals


def _upsample_periodic(row, fine):
    """Trigonometric interpolation of a real periodic sample set onto a finer mesh."""
    n = len(row)
    spec = np.fft.fft(row)
    pad = np.zeros(fine, dtype=complex)
    hn = n // 2
    pad[:hn] = spec[:hn]
    pad[fine - hn + 1:] = spec[hn + 1:]
    pad[hn] = 0.5 * spec[hn]
    pad[fine - hn] = 0.5 * spec[hn]
    return np.real(np.fft.ifft(pad)) * (fine / n)


def _fit_exponential_tail(r, vals, peak, d, lo=1e-3, hi=1e-10):
    """Least squares on log samples in the window [hi, lo] * peak.

    Fits |Q(r)| ~ C r^{-(d-1)/2} e^{-delta r}; returns (C, delta).
    """
    mag = np.abs(vals)
    mask = (mag < lo * peak) & (mag > hi * peak) & (r > 0)
    if mask.sum() < 10:
        raise GroundStateError("insufficient tail dynamic range for a decay fit")
    rr = r[mask]
    y = np.log(mag[mask]) + 0.5 * (d - 1) * np.log(rr)
    A = np.column_stack([np.ones_like(rr), -rr])
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return float(np.exp(coef[0])), float(coef[1])


def solve_ground_state(p: float, d: int, tol: float = 1e-10) -> GroundStateProfile:
    """Positive radial ground state; d=1 cross-checked against the sech form."""
    if d not in (1, 2):
        raise ValueError(f"dimension must be 1 or 2, got {d}")
    if not (1.0 < p <= 1.0 + 4.0 / d):
        raise ValueError(f"exponent p={p} outside (1, 1+4/d] at d={d}")
    if not (tol > 0):
        raise ValueError("tol must be positive")
    if d == 1:
        grid = SpatialGrid(1, _BASE_N_1D, _BASE_L_1D)
        q, _ = _petviashvili(grid, p, tol)
        r, vals = _radial_from_axis(grid.x1, q)
    else:
        grid = SpatialGrid(2, _BASE_N_2D, _BASE_L_2D)
        q, _ = _petviashvili(grid, p, tol)
        row = q[:, grid.n // 2]  # restriction to the x-axis (y = 0)
        fine_row = _upsample_periodic(row, _FINE_N_2D)
        hf = 2.0 * grid.L / _FINE_N_2D
        xf = -grid.L + hf * np.arange(_FINE_N_2D)
        r, vals = _radial_from_axis(xf, fine_row)
    vals = np.maximum(vals, 0.0)
    # certified norms on the solve grid (spectral quadrature)
    massn = grid.cell * float(np.sum(q ** 2))
    qh = np.fft.fftn(q)
    gradn = float(np.sum(grid.k2 * np.abs(qh) ** 2)) * grid.cell / grid.size
    pown = grid.cell * float(np.sum(np.abs(q) ** (p + 1.0)))
    decay = _fit_exponential_tail(r, vals, vals[0], d)
    prof = GroundStateProfile(p, d, r, vals, (massn, gradn, pown), decay)
    if d == 1:
        ref = closed_form_1d(p, r)
        gap = float(np.max(np.abs(vals - ref)))
        if gap > 1e-7:
            raise GroundStateError(f"closed-form cross-check failed: {gap:.2e}")
    return prof


def rescale(Q: GroundStateProfile, w: float) -> GroundStateProfile:
    return Q.rescale(w)


def pohozaev_residual(Q: GroundStateProfile) -> float:
    return Q.pohozaev_residual()


def fit_decay(Q: GroundStateProfile):
    """(C, delta) for |Q_w| <= C r^{-(d-1)/2} exp(-delta r); refit on scaled samples."""
    return _fit_exponential_tail(Q.r * Q.w, Q.w ** (-Q.sigma) * Q.q, Q.peak, Q.d)
