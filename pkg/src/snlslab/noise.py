"""Brownian drives, noise geometry, and the gauge fields they generate.

The noise enters the flow as  sum_l X i phi_l(x) g_l(t) dB_l  with the
Stratonovich-compensating drift already folded in, so the two gauge fields

    W(t,x)  =  sum_l i phi_l(x) I_l(t),          I_l(t) = int_0^t g_l dB_l
    W*(t,x) = -sum_l i phi_l(x) (I_l(H) - I_l(t))   (H = truncation horizon)

are purely imaginary and W(t) - W(H) = W*(t) holds exactly.

Brownian paths are sampled on a dyadic bridge rooted at the solver mesh:
refining the fine mesh keeps the already-sampled nodes fixed, so every run is
reproducible from (seed, coarse_step, horizon) alone.  Iterated integrals use
the exact diagonal identity and left-point fine-mesh sums off the diagonal.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, SpatialGrid

_DRIVE_MAGIC = b"SNLD"
_DRIVE_VERSION = 1


class TemporalRejection(ValueError):
    """Temporal profile failing the integrability-rate gate."""

    def __init__(self, msg, first_violation=None):
        super().__init__(msg)
        self.first_violation = first_violation


class HorizonError(ValueError):
    """Truncation horizon leaves too much tail variance."""

    def __init__(self, msg, tail_variance=None):
        super().__init__(msg)
        self.tail_variance = tail_variance


# --------------------------------------------------------------------------
# spatial geometry
# --------------------------------------------------------------------------

class NoiseGeometry:
    """Envelope functions phi_l with closed-form radial derivative stacks.

    Everything is a function of s = 1 + |x/sigma|^2 through f(s); the chain
    rule then gives all tensor derivatives from the radial stack
    F_m = d^m f/ds^m (written below for sigma = 1, each further derivative
    picking up one factor 1/sigma^2):

        d_j  phi = a 2 x_j F1
        d_jk phi = a (4 x_j x_k F2 + 2 delta_jk F1)
        lap  phi = a (4 r^2 F2 + 2 d F1)
        lap^2 phi = a (16 r^4 F4 + 8 r^2 (2d+4) F3 + 4 d(d+2) F2)

    The range sigma_l stretches the profile without changing its decay
    class: case I stays exponential, case II stays polynomial of the same
    exponent, and asymptotic flatness is preserved.
    """

    def __init__(self, case, grid: SpatialGrid, amps, decays, scales=None):
        self.case = case
        self.grid = grid
        self.amps = np.asarray(amps, dtype=float)
        self.decays = np.asarray(decays, dtype=float)
        if scales is None:
            scales = np.ones_like(self.amps)
        self.scales = np.asarray(scales, dtype=float)
        if np.any(self.scales <= 0):
            raise ValueError("profile ranges must be positive")
        self.n_paths = len(self.amps)
        r2 = grid.r2()
        d = grid.d
        N = self.n_paths
        s = 1.0 + r2[None] / self.scales.reshape((N,) + (1,) * d) ** 2
        F = self._stack(s)
        coords = grid.coords
        self.phi = np.empty((N,) + grid.shape)
        self.grad = np.empty((N, d) + grid.shape)
        self.hess = np.empty((N, d, d) + grid.shape)
        self.lap = np.empty((N,) + grid.shape)
        self.bilap = np.empty((N,) + grid.shape)
        for l in range(N):
            a = self.amps[l]
            s2 = self.scales[l] ** 2
            F0, F1, F2, F3, F4 = (F[m][l] for m in range(5))
            self.phi[l] = a * F0
            for j in range(d):
                self.grad[l, j] = a * 2.0 * coords[j] * F1 / s2
                for k in range(d):
                    self.hess[l, j, k] = (a * 4.0 * coords[j] * coords[k]
                                          * F2 / s2 ** 2)
                self.hess[l, j, j] += a * 2.0 * F1 / s2
            self.lap[l] = a * (4.0 * r2 * F2 / s2 ** 2 + 2.0 * d * F1 / s2)
            self.bilap[l] = a * (16.0 * r2 ** 2 * F4 / s2 ** 4
                                 + 8.0 * r2 * (2.0 * d + 4.0) * F3 / s2 ** 3
                                 + 4.0 * d * (d + 2.0) * F2 / s2 ** 2)
        self._check_flatness()

    def _stack(self, s):
        """F[m][l] = d^m f_l / ds^m at every grid node; s has a path axis."""
        out = []
        if self.case == "I":
            for m in range(5):
                out.append(np.empty(s.shape))
            for l, c in enumerate(self.decays):
                u = np.sqrt(s[l])
                e = np.exp(-c * u)
                out[0][l] = e
                out[1][l] = -(c / 2.0) * e / u
                out[2][l] = (c / 4.0) * e * (c / u ** 2 + 1.0 / u ** 3)
                out[3][l] = -(c / 8.0) * e * (c ** 2 / u ** 3 + 3.0 * c / u ** 4
                                              + 3.0 / u ** 5)
                out[4][l] = (c / 16.0) * e * (c ** 3 / u ** 4 + 6.0 * c ** 2 / u ** 5
                                              + 15.0 * c / u ** 6 + 15.0 / u ** 7)
        else:
            for m in range(5):
                out.append(np.empty(s.shape))
            for l, q in enumerate(self.decays):
                coef = 1.0
                for m in range(5):
                    out[m][l] = coef * s[l] ** (-q / 2.0 - m)
                    coef *= (-q / 2.0 - m)
        return out

    def _check_flatness(self):
        """|x|^2 |d phi| must decay toward the boundary (asymptotic flatness)."""
        g = self.grid
        if g.d == 1:
            axis_idx = np.arange(g.n // 2, g.n)
            r = np.abs(g.x1[axis_idx])
            take = lambda arr: arr[axis_idx]
        else:
            axis_idx = np.arange(g.n // 2, g.n)
            r = np.abs(g.x1[axis_idx])
            take = lambda arr: arr[axis_idx, g.n // 2]
        outer = r >= max(1.0, 0.5 * g.L)
        for l in range(self.n_paths):
            for col in (self.grad[l, 0], self.lap[l]):
                y = (r ** 2 * np.abs(take(col)))[outer]
                if np.any(np.diff(y) > 1e-18 + 1e-9 * np.abs(y[:-1])):
                    raise ValueError("asymptotic flatness violated on the grid tail")

    def envelope_constants(self):
        """sup over |x| >= 1 of sum of |derivatives| against the decay weight."""
        g = self.grid
        r = np.sqrt(g.r2())
        mask = r >= 1.0
        out = []
        for l in range(self.n_paths):
            total = np.abs(self.phi[l]) + np.abs(self.lap[l]) + np.abs(self.bilap[l])
            for j in range(g.d):
                total += np.abs(self.grad[l, j])
                for k in range(g.d):
                    total += np.abs(self.hess[l, j, k])
            if self.case == "I":
                w = np.exp(-self.decays[l] * r)
            else:
                w = np.maximum(r, 1.0) ** (-self.decays[l])
            out.append(float(np.max((total / w)[mask])))
        return out


def make_geometry(case, params, n_paths, grid: SpatialGrid) -> NoiseGeometry:
    """case 'I': phi_l = a_l exp(-c_l sqrt(1+|x/s_l|^2));
    case 'II': a_l (1+|x/s_l|^2)^{-u/2}.  'scale' (default 1) sets s_l."""
    amps = np.broadcast_to(np.asarray(params.get("a", 1.0), dtype=float),
                           (n_paths,)).copy()
    scales = np.broadcast_to(np.asarray(params.get("scale", 1.0), dtype=float),
                             (n_paths,)).copy()
    if case == "I":
        decays = np.broadcast_to(np.asarray(params.get("c", 1.0), dtype=float),
                                 (n_paths,)).copy()
        if np.any(decays <= 0):
            raise ValueError("exponential decay rates must be positive")
    elif case == "II":
        decays = np.broadcast_to(np.asarray(params.get("upsilon", 3.0), dtype=float),
                                 (n_paths,)).copy()
        if np.any(decays < 3.0):
            raise ValueError("polynomial decay exponent must be >= 3")
    else:
        raise ValueError(f"unknown geometry case {case!r}")
    return NoiseGeometry(case, grid, amps, decays, scales)


# --------------------------------------------------------------------------
# temporal profiles
# --------------------------------------------------------------------------

@dataclass
class ControlledPath:
    """Integrand paths g_l on the drive mesh, with controlled-path metadata.

    Deterministic profiles carry a zero Gubinelli derivative (deriv=None) and
    a closed-form tail integral; the function handle evaluates g_l at
    arbitrary times (used for midpoint quadrature of int g dB).
    """

    case: str
    times: np.ndarray
    values: np.ndarray                 # (N, len(times))
    deriv: np.ndarray | None           # (N, N, len(times)) or None (zero)
    remainder_bound: float
    g_fn: object                       # g_fn(l, t) -> float/array
    tail_sq_integral: object           # I(t) = int_t^inf g_l^2, callable (l, t)
    threshold: float = 0.0             # first time the rate gate holds onward
    c_star: float = 1.0

    @property
    def n_paths(self):
        return self.values.shape[0]


def _rate_gate_scan(tailsq, n_paths, mesh, c_star):
    """Backward scan of I(t) log(1/I(t)) <= c_star/t^2 on positive mesh times.

    Returns the smallest threshold t* such that the bound holds for every
    mesh time >= t*; raises TemporalRejection when the violation set reaches
    the end of the mesh (asymptotic failure).
    """
    t = mesh[mesh > 0]
    ok = np.ones(len(t), dtype=bool)
    for l in range(n_paths):
        I = np.asarray(tailsq(l, t), dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            prod = np.where(I > 0, I * np.log(np.where(I > 0, 1.0 / I, 1.0)), 0.0)
        ok &= prod <= c_star / t ** 2
    if not ok[-1]:
        bad = np.where(~ok)[0]
        # trailing violation block: report its first time
        start = bad[-1]
        while start > 0 and not ok[start - 1]:
            start -= 1
        raise TemporalRejection(
            f"integrability-rate gate fails from t = {t[start]:.6g} to the horizon",
            first_violation=float(t[start]))
    bad = np.where(~ok)[0]
    return float(t[bad[-1] + 1]) if len(bad) else float(t[0])


def make_temporal(case, params, mesh, n_paths=2) -> ControlledPath:
    """Deterministic integrand profiles on the drive mesh.

    case 'I':    g_l(t) = exp(-lam_l t), lam_l > 0
    case 'II':   g_l(t) = (1+t)^{-rho} (default rho = 2), gated by the
                 integrability-rate scan with constant c_star
    case 'zero': g identically zero (noise off)
    """
    mesh = np.asarray(mesh, dtype=float)
    if case == "I":
        lam = np.broadcast_to(np.asarray(params.get("lam", 0.5), dtype=float),
                              (n_paths,)).copy()
        if np.any(lam <= 0):
            raise ValueError("decay rates must be positive")

        def g_fn(l, t):
            return np.exp(-lam[l] * np.asarray(t, dtype=float))

        def tailsq(l, t):
            return np.exp(-2.0 * lam[l] * np.asarray(t, dtype=float)) / (2.0 * lam[l])

        vals = np.stack([g_fn(l, mesh) for l in range(n_paths)])
        rb = float(np.max(lam))  # sup |dg/dt| <= lam
        return ControlledPath("I", mesh, vals, None, rb, g_fn, tailsq)
    if case == "II":
        rho = float(params.get("power", 2.0))
        c_star = float(params.get("c_star", 1.0))
        if rho <= 0.5:
            raise ValueError("profile must be square integrable")

        def g_fn(l, t):
            return (1.0 + np.asarray(t, dtype=float)) ** (-rho)

        def tailsq(l, t):
            return (1.0 + np.asarray(t, dtype=float)) ** (1.0 - 2.0 * rho) / (2.0 * rho - 1.0)

        threshold = _rate_gate_scan(tailsq, n_paths, mesh, c_star)
        vals = np.stack([g_fn(l, mesh) for l in range(n_paths)])
        return ControlledPath("II", mesh, vals, None, rho, g_fn, tailsq,
                              threshold=threshold, c_star=c_star)
    if case == "zero":
        zero = np.zeros((n_paths, len(mesh)))

        def g_fn(l, t):
            return np.zeros_like(np.asarray(t, dtype=float))

        def tailsq(l, t):
            return np.zeros_like(np.asarray(t, dtype=float))

        return ControlledPath("zero", mesh, zero, None, 0.0, g_fn, tailsq)
    raise ValueError(f"unknown temporal case {case!r}")


def controlled_from_function(drive, f, df):
    """Y_l = f(B_l) with Gubinelli derivative diag(df(B_l)); for rough tests."""
    N = drive.n_paths
    vals = f(drive.values)
    deriv = np.zeros((N, N, drive.values.shape[1]))
    for l in range(N):
        deriv[l, l] = df(drive.values[l])
    return ControlledPath("controlled", drive.times, vals, deriv,
                          float(np.max(np.abs(df(drive.values)))), None, None)


def brownian_as_controlled(drive):
    return controlled_from_function(drive, lambda b: b.copy(),
                                    lambda b: np.ones_like(b))


# --------------------------------------------------------------------------
# rough drives
# --------------------------------------------------------------------------

@dataclass
class RoughDrive:
    """N Brownian paths on a dyadic fine mesh plus per-interval enhancements.

    bb[m, j, k] holds the iterated integral over the m-th coarse interval:
    diagonal exactly ((dB)^2 - dt)/2, off-diagonal left-point fine sums.
    """

    n_paths: int
    horizon: float
    h_f: float
    coarse_step: float
    seed: int
    alpha: float
    times: np.ndarray
    values: np.ndarray       # (N, M+1)
    coarse_times: np.ndarray
    bb: np.ndarray           # (M0, N, N)

    def index_of(self, t):
        idx = int(round(t / self.h_f))
        if not (0 <= idx < len(self.times)) or abs(self.times[idx] - t) > 1e-9:
            raise ValueError(f"time {t} is not a fine-mesh node")
        return idx

    def increments(self):
        return np.diff(self.values, axis=1)

    def to_bytes(self):
        head = struct.pack("<4sIIQ dddd", _DRIVE_MAGIC, _DRIVE_VERSION,
                           self.n_paths, self.seed, self.horizon, self.h_f,
                           self.coarse_step, self.alpha)
        return head + np.ascontiguousarray(self.values).astype("<f8").tobytes()

    @classmethod
    def from_bytes(cls, buf):
        head_size = struct.calcsize("<4sIIQ dddd")
        magic, version, n, seed, horizon, h_f, coarse, alpha = struct.unpack(
            "<4sIIQ dddd", buf[:head_size])
        if magic != _DRIVE_MAGIC or version != _DRIVE_VERSION:
            raise ValueError("not a drive blob")
        vals = np.frombuffer(buf[head_size:], dtype="<f8").reshape(n, -1).copy()
        drive = sample_drive(n, horizon, h_f, coarse, seed, alpha=alpha)
        if not np.array_equal(drive.values, vals):
            # stored paths win (forward compatibility with other samplers)
            drive.values = vals
            drive.bb = _iterated_integrals(vals, drive.times, coarse, h_f)
        return drive


def _bridge_paths(n_paths, m0, levels, coarse_step, seed):
    """Dyadic midpoint refinement with level-keyed seeds (fixed-root bridge)."""
    root = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    inc = root.standard_normal((n_paths, m0)) * np.sqrt(coarse_step)
    dt = coarse_step
    for lev in range(1, levels + 1):
        rng = np.random.default_rng(np.random.SeedSequence([seed, lev]))
        xi = rng.standard_normal(inc.shape) * (0.5 * np.sqrt(dt))
        halves = np.empty((n_paths, inc.shape[1] * 2))
        halves[:, 0::2] = 0.5 * inc + xi
        halves[:, 1::2] = 0.5 * inc - xi
        inc = halves
        dt *= 0.5
    values = np.concatenate(
        [np.zeros((n_paths, 1)), np.cumsum(inc, axis=1)], axis=1)
    return values


def _iterated_integrals(values, times, coarse_step, h_f):
    n_paths, m_plus = values.shape
    ratio = int(round(coarse_step / h_f))
    m0 = (m_plus - 1) // ratio
    inc = np.diff(values, axis=1)
    bb = np.empty((m0, n_paths, n_paths))
    # cumulative left-point sums S_jk(m) = sum_{i<m} B_j(t_i) dB_k(i)
    for j in range(n_paths):
        for k in range(n_paths):
            if j == k:
                continue
            s = np.concatenate([[0.0], np.cumsum(values[j, :-1] * inc[k])])
            a = np.arange(m0) * ratio
            b = a + ratio
            bb[:, j, k] = (s[b] - s[a]
                           - values[j, a] * (values[k, b] - values[k, a]))
    for k in range(n_paths):
        a = np.arange(m0) * ratio
        b = a + ratio
        db = values[k, b] - values[k, a]
        bb[:, k, k] = 0.5 * (db ** 2 - coarse_step)
    return bb


def sample_drive(n_paths, horizon, h_f, coarse_step, seed,
                 alpha=0.4) -> RoughDrive:
    """Brownian drive on [0, horizon] with enhancements on the coarse mesh."""
    if not (0 < h_f <= coarse_step <= horizon):
        raise ValueError("need 0 < h_f <= coarse_step <= horizon")
    ratio = coarse_step / h_f
    levels = int(round(np.log2(ratio)))
    if abs(ratio - 2 ** levels) > 1e-9 or 2 ** levels < 16:
        raise ValueError("fine mesh must refine the coarse mesh dyadically, "
                         "factor >= 16")
    m0 = int(round(horizon / coarse_step))
    if abs(m0 * coarse_step - horizon) > 1e-9 * max(horizon, 1.0):
        raise ValueError("coarse_step must divide the horizon")
    if not (1.0 / 3.0 < alpha < 0.5):
        raise ValueError("Holder exponent must sit in (1/3, 1/2)")
    values = _bridge_paths(n_paths, m0, levels, coarse_step, seed)
    h_f_exact = coarse_step / 2 ** levels
    times = h_f_exact * np.arange(values.shape[1])
    bb = _iterated_integrals(values, times, coarse_step, h_f_exact)
    return RoughDrive(n_paths, float(horizon), h_f_exact, float(coarse_step),
                      int(seed), float(alpha), times, values,
                      coarse_step * np.arange(m0 + 1), bb)


# --------------------------------------------------------------------------
# assembly: W, W*, coefficients, tail statistic
# --------------------------------------------------------------------------

def ito_integrals(drive: RoughDrive, path: ControlledPath):
    """Cumulative I_l(t_m) = int_0^{t_m} g_l dB_l on the fine mesh.

    Deterministic integrands are evaluated at interval midpoints (second
    order for smooth g and identical to the Ito sum in expectation).
    """
    inc = drive.increments()
    mids = 0.5 * (drive.times[:-1] + drive.times[1:])
    out = np.empty_like(drive.values)
    out[:, 0] = 0.0
    for l in range(drive.n_paths):
        if path.g_fn is not None:
            gmid = np.asarray(path.g_fn(l, mids), dtype=float)
        else:
            gmid = 0.5 * (path.values[l, :-1] + path.values[l, 1:])
        out[l, 1:] = np.cumsum(gmid * inc[l])
    return out


class NoiseAssembly:
    """Precomputed gauge data shared by a whole run.

    Bundles one drive, one geometry, and one temporal profile; everything
    time-indexed is looked up on the drive's fine mesh, so per-step costs are
    O(grid) with no re-integration.
    """

    def __init__(self, drive: RoughDrive, geometry: NoiseGeometry,
                 path: ControlledPath, horizon=None, tail_tol=1e-20):
        if geometry.n_paths != drive.n_paths or path.n_paths != drive.n_paths:
            raise ValueError("drive, geometry, and profile path counts differ")
        self.drive = drive
        self.geometry = geometry
        self.path = path
        self.horizon = drive.horizon if horizon is None else float(horizon)
        hidx = drive.index_of(self.horizon)
        tails = [float(path.tail_sq_integral(l, self.horizon))
                 for l in range(drive.n_paths)] if path.tail_sq_integral else [0.0]
        self.tail_variance = max(tails)
        if self.tail_variance > tail_tol:
            raise HorizonError(
                f"truncated tail variance {self.tail_variance:.3e} exceeds "
                f"{tail_tol:.1e}; push the horizon out", self.tail_variance)
        self.I = ito_integrals(drive, path)          # (N, M+1)
        self.B_star = self.I[:, hidx:hidx + 1] - self.I  # int_t^H g dB
        self.B_star[:, hidx:] = 0.0
        # suffix sup of sum_l |B*_l|
        s = np.sum(np.abs(self.B_star), axis=0)
        self.B_star_sup = np.maximum.accumulate(s[::-1])[::-1]

    def _phi_weighted(self, weights):
        return np.tensordot(weights, self.geometry.phi, axes=(0, 0))

    def W(self, t) -> Field:
        idx = self.drive.index_of(t)
        f = Field(self.geometry.grid, 1j * self._phi_weighted(self.I[:, idx]))
        f.meta["tail_variance"] = self.tail_variance
        return f

    def W_star(self, t) -> Field:
        idx = self.drive.index_of(t)
        f = Field(self.geometry.grid,
                  -1j * self._phi_weighted(self.B_star[:, idx]))
        f.meta["tail_variance"] = self.tail_variance
        return f

    def _grad_phi_weighted(self, weights):
        # (d, shape) arrays: sum_l weights_l grad phi_l
        return np.tensordot(weights, self.geometry.grad, axes=(0, 0))

    def coefficients(self, t):
        """b = 2 grad W, c = sum_j (d_j W)^2 + lap W (advection and potential)."""
        idx = self.drive.index_of(t)
        wI = self.I[:, idx]
        gp = self._grad_phi_weighted(wI)
        b = [2j * gp[j] for j in range(self.geometry.grid.d)]
        c = -np.sum(gp ** 2, axis=0) + 1j * np.tensordot(
            wI, self.geometry.lap, axes=(0, 0))
        return b, c

    def coefficients_star(self, t):
        idx = self.drive.index_of(t)
        wB = self.B_star[:, idx]
        gp = self._grad_phi_weighted(wB)
        b = [-2j * gp[j] for j in range(self.geometry.grid.d)]
        c = -np.sum(gp ** 2, axis=0) - 1j * np.tensordot(
            wB, self.geometry.lap, axes=(0, 0))
        return b, c

    def b_star_values(self, t):
        """Per-path B*_l(t) = int_t^H g_l dB_l."""
        return self.B_star[:, self.drive.index_of(t)]

    def b_star_stat(self, t):
        return float(self.B_star_sup[self.drive.index_of(t)])

    def noise_increment(self, t0, t1):
        """Delta I_l over [t0, t1] for the exact multiplicative factor."""
        return (self.I[:, self.drive.index_of(t1)]
                - self.I[:, self.drive.index_of(t0)])

    def mu(self, t) -> Field:
        g2 = np.array([float(np.asarray(self.path.g_fn(l, t)))
                       for l in range(self.drive.n_paths)]) ** 2
        vals = 0.5 * np.tensordot(g2, self.geometry.phi ** 2, axes=(0, 0))
        return Field(self.geometry.grid, vals.astype(complex))


def assemble_W(drive, geometry, path, t, horizon=None, tail_tol=1e-20) -> Field:
    return NoiseAssembly(drive, geometry, path, horizon, tail_tol).W(t)


def assemble_Wstar(drive, geometry, path, t, horizon=None,
                   tail_tol=1e-20) -> Field:
    return NoiseAssembly(drive, geometry, path, horizon, tail_tol).W_star(t)


def coefficients(drive, geometry, path, t, horizon=None, tail_tol=1e-20):
    return NoiseAssembly(drive, geometry, path, horizon, tail_tol).coefficients(t)


def coefficients_star(drive, geometry, path, t, horizon=None, tail_tol=1e-20):
    return NoiseAssembly(drive, geometry, path, horizon,
                         tail_tol).coefficients_star(t)


def b_star_stat(drive, path, t, horizon=None, tail_tol=1e-20):
    """sup_{s >= t} sum_l |int_s^H g_l dB_l|; non-increasing, 0 at the horizon."""
    inc = drive.increments()
    mids = 0.5 * (drive.times[:-1] + drive.times[1:])
    H = drive.horizon if horizon is None else horizon
    hidx = drive.index_of(H)
    tails = [float(path.tail_sq_integral(l, H))
             for l in range(drive.n_paths)] if path.tail_sq_integral else [0.0]
    if max(tails) > tail_tol:
        raise HorizonError(f"tail variance {max(tails):.3e} above {tail_tol:.1e}",
                           max(tails))
    total = np.zeros(len(drive.times))
    for l in range(drive.n_paths):
        gmid = np.asarray(path.g_fn(l, mids), dtype=float)
        I = np.concatenate([[0.0], np.cumsum(gmid * inc[l])])
        total += np.abs(I[hidx] - I)
    total[hidx:] = 0.0
    sup = np.maximum.accumulate(total[::-1])[::-1]
    return float(sup[drive.index_of(t)])


def mu_field(geometry, path, t) -> Field:
    g2 = np.array([float(np.asarray(path.g_fn(l, t)))
                   for l in range(geometry.n_paths)]) ** 2
    vals = 0.5 * np.tensordot(g2, geometry.phi ** 2, axes=(0, 0))
    return Field(geometry.grid, vals.astype(complex))
