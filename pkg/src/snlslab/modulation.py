"""Geometrical decomposition u = sum_k R_k + eps by Newton on the constraints.

Critical mode fits (alpha_k, theta_k, w_k) per soliton and enforces, for
each k,

    Re<grad R_k, eps> = 0   (d conditions)
    Im<R_k, eps>      = 0
    Re<exp(i Phi_k) (Lambda Q_{w_k})(y_k), eps> = 0

where the third direction is Lambda_k R_k - (i/2) v_k . y_k R_k with the
phase contamination cancelled.  Subcritical mode drops the third condition
and pins w_k = w_k^0 bit-exact.  The Jacobian is assembled as the analytic
pairing block <D_i, -dR/dP_j> plus a finite-difference correction for the
parameter dependence of the directions, paired against the frozen remainder.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import csv
import numpy as np

from .grid import Field, SpatialGrid, h1_norm, l2_norm
from .ground_state import GroundStateProfile
from .solitons import ModulationParams, SolitonSpec, ansatz_fields, validate_multi

MAX_NEWTON = 50
MAX_HALVINGS = 8
FD_STEP = 1e-6


class DecompositionLossError(RuntimeError):
    """Newton left the tube where the decomposition is well posed."""

    def __init__(self, msg, residual=None, eps_norm=None):
        super().__init__(msg)
        self.residual = residual
        self.eps_norm = eps_norm


@dataclass
class DecompositionState:
    t: float
    mode: str
    params: list
    eps: Field
    residual: float
    iterations: int
    det_estimate: float
    jacobian: np.ndarray = field(repr=False, default=None)

    @property
    def eps_l2(self):
        return l2_norm(self.eps)

    @property
    def eps_h1(self):
        return h1_norm(self.eps)


def wrap_angle(x):
    """Reduce to (-pi, pi]."""
    y = np.mod(x + np.pi, 2.0 * np.pi) - np.pi
    return np.where(y == -np.pi, np.pi, y)


def _unknowns_per(mode, d):
    return d + 2 if mode == "critical" else d + 1


def _pack(params, mode, d):
    out = []
    for p in params:
        out.extend(p.alpha)
        out.append(p.theta)
        if mode == "critical":
            out.append(p.w)
    return np.asarray(out, dtype=float)


def _unpack(vec, specs, mode, d):
    m = _unknowns_per(mode, d)
    out = []
    for k, s in enumerate(specs):
        chunk = vec[k * m:(k + 1) * m]
        w = chunk[d + 1] if mode == "critical" else s.w0
        out.append(ModulationParams(tuple(chunk[:d]), float(chunk[d]),
                                    float(w), critical=(mode == "critical")))
    return out


def _directions(Q, specs, params, t, grid, mode):
    """Constraint directions and parameter derivatives per soliton."""
    blocks = []
    for s, p in zip(specs, params):
        f = ansatz_fields(Q, s, p, t, grid)
        grads = [-f["dalpha"][j] + 0.5j * s.v[j] * f["R"]
                 for j in range(grid.d)]
        dirs = grads + [f["R"]]
        projs = ["re"] * grid.d + ["im"]
        derivs = list(f["dalpha"]) + [f["dtheta"]]
        if mode == "critical":
            dirs.append(f["lam"])
            projs.append("re")
            derivs.append(f["dw"])
        blocks.append({"R": f["R"], "dirs": dirs, "projs": projs,
                       "derivs": derivs})
    return blocks


def _pair(cell, D, eps):
    return cell * np.vdot(eps, D)


def _project(tag, z):
    return z.real if tag == "re" else z.imag


def _constraints(blocks, eps, cell):
    out = []
    for b in blocks:
        for D, tag in zip(b["dirs"], b["projs"]):
            out.append(_project(tag, _pair(cell, D, eps)))
    return np.asarray(out)


def _residual_field(u_vals, blocks):
    eps = u_vals.copy()
    for b in blocks:
        eps -= b["R"]
    return eps


def decompose(u: Field, t, Q: GroundStateProfile, specs, mode,
              guess=None, tol_rel=1e-10, max_iter=MAX_NEWTON,
              fd_step=FD_STEP, max_distance=None) -> DecompositionState:
    """Fit modulation parameters so the remainder meets the orthogonality set.

    `guess` is a list of ModulationParams (continuation from the previous
    snapshot); omitted, the fit starts from the at-rest parameters of specs.
    Tolerance is relative to the mean squared profile norm.
    """
    if mode not in ("critical", "subcritical"):
        raise ValueError("mode must be critical or subcritical")
    specs = validate_multi(specs)
    grid = u.grid
    d = grid.d
    cell = grid.cell
    if guess is None:
        guess = [ModulationParams.at_rest(s, critical=(mode == "critical"))
                 for s in specs]
    else:
        guess = [ModulationParams(tuple(p.alpha), float(p.theta), float(p.w),
                                  critical=(mode == "critical"))
                 for p in guess]
    scale = float(np.mean([Q.rescale(s.w0).mass for s in specs]))
    tol = tol_rel * scale

    vec = _pack(guess, mode, d)
    blocks = _directions(Q, specs, _unpack(vec, specs, mode, d), t, grid, mode)
    eps = _residual_field(u.values, blocks)
    if max_distance is not None:
        dist = np.sqrt(cell) * np.linalg.norm(eps)
        if dist > max_distance:
            raise DecompositionLossError(
                f"initial distance {dist:.3e} outside the fitting tube",
                eps_norm=dist)
    F = _constraints(blocks, eps, cell)

    it = 0
    while np.max(np.abs(F)) >= tol:
        if it >= max_iter:
            raise DecompositionLossError(
                "constraint solve did not converge",
                residual=float(np.max(np.abs(F))),
                eps_norm=float(np.sqrt(cell) * np.linalg.norm(eps)))
        J = _jacobian(Q, specs, vec, blocks, eps, t, grid, mode, fd_step)
        try:
            delta = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError:
            raise DecompositionLossError(
                "singular constraint Jacobian",
                residual=float(np.max(np.abs(F))),
                eps_norm=float(np.sqrt(cell) * np.linalg.norm(eps)))

        best = None
        stepf = 1.0
        for _ in range(MAX_HALVINGS + 1):
            cand = vec + stepf * delta
            try:
                pb = _unpack(cand, specs, mode, d)
            except ValueError:
                # step left the admissible parameter region (w <= 0)
                stepf *= 0.5
                continue
            blk = _directions(Q, specs, pb, t, grid, mode)
            ec = _residual_field(u.values, blk)
            Fc = _constraints(blk, ec, cell)
            if best is None or np.max(np.abs(Fc)) < np.max(np.abs(best[3])):
                best = (cand, blk, ec, Fc)
            if np.max(np.abs(Fc)) < np.max(np.abs(F)):
                break
            stepf *= 0.5
        if best is None:
            raise DecompositionLossError(
                "no admissible Newton step",
                residual=float(np.max(np.abs(F))),
                eps_norm=float(np.sqrt(cell) * np.linalg.norm(eps)))
        vec, blocks, eps, F = best
        it += 1

    params = _unpack(vec, specs, mode, d)
    # report theta continuously relative to the guess
    params = [ModulationParams(p.alpha,
                               float(g.theta + wrap_angle(p.theta - g.theta)),
                               p.w, p.critical)
              for p, g in zip(params, guess)]
    J = _jacobian(Q, specs, _pack(params, mode, d),
                  _directions(Q, specs, params, t, grid, mode),
                  eps, t, grid, mode, fd_step)
    eps_f = Field(grid, eps)
    eps_f.freeze()
    return DecompositionState(t=float(t), mode=mode, params=params, eps=eps_f,
                              residual=float(np.max(np.abs(F))),
                              iterations=it,
                              det_estimate=float(abs(np.linalg.det(J))),
                              jacobian=J)


def _jacobian(Q, specs, vec, blocks, eps, t, grid, mode, fd_step):
    """Analytic pairing block plus frozen-remainder finite-difference term."""
    d = grid.d
    cell = grid.cell
    m = _unknowns_per(mode, d)
    n_unk = m * len(specs)
    J = np.zeros((n_unk, n_unk))
    row = 0
    for b in blocks:
        for D, tag in zip(b["dirs"], b["projs"]):
            col = 0
            for bj in blocks:
                for dP in bj["derivs"]:
                    J[row, col] = -_project(tag, _pair(cell, D, dP))
                    col += 1
            row += 1
    # direction dependence on the parameters, block diagonal per soliton
    for k in range(len(specs)):
        for jloc in range(m):
            col = k * m + jloc
            bumped = vec.copy()
            bumped[col] += fd_step
            pb = _unpack(bumped, specs, mode, d)
            fb = _directions(Q, [specs[k]], [pb[k]], t, grid, mode)[0]
            base = blocks[k]
            for iloc, (Dn, Do, tag) in enumerate(
                    zip(fb["dirs"], base["dirs"], base["projs"])):
                J[k * m + iloc, col] += (
                    _project(tag, _pair(cell, Dn - Do, eps)) / fd_step)
    return J


def jacobian_spectrum(state: DecompositionState):
    """(|det|, smallest singular value) of the converged constraint Jacobian."""
    if state.jacobian is None:
        raise ValueError("state carries no Jacobian")
    sv = np.linalg.svd(state.jacobian, compute_uv=False)
    return float(abs(np.linalg.det(state.jacobian))), float(sv[-1])


def jacobian_leading_product(Q: GroundStateProfile, params, d, mode):
    """Closed-form leading determinant: per-soliton products of Q-norms."""
    total = 1.0
    for p in params:
        prof = Q.rescale(p.w)
        block = prof.mass
        for _ in range(d):
            block *= prof.grad_sq / d
        if mode == "critical":
            block *= prof.lambda_norm_sq() / p.w
        total *= block
    return float(total)


def mod_quantity(states, dt_diag):
    """Aggregate parameter speed Mod(t) from a uniform series of states.

    Mod_k = |dw_k/dt| + |dalpha_k/dt| + |dtheta_k/dt - (w_k^-2 - (w_k^0)^-2)|
    with centered differences inside the window and one-sided at the ends.
    The w-offset in the theta rate uses each state's fitted w_k against the
    anchor w recorded in the first state.
    """
    if len(states) < 3:
        raise ValueError("need at least three states")
    t = np.asarray([s.t for s in states])
    gaps = np.diff(t)
    if np.max(np.abs(np.abs(gaps) - dt_diag)) > 1e-9:
        raise ValueError("states are not on the uniform diagnostics mesh")
    K = len(states[0].params)
    d = len(states[0].params[0].alpha)
    for s in states:
        if len(s.params) != K:
            raise ValueError("state series changes soliton count")
    w0 = np.asarray([p.w for p in states[0].params])
    alpha = np.asarray([[p.alpha for p in s.params] for s in states])
    theta = np.asarray([[p.theta for p in s.params] for s in states])
    w = np.asarray([[p.w for p in s.params] for s in states])

    a_dot = np.gradient(alpha, t, axis=0)
    t_dot = np.gradient(theta, t, axis=0)
    w_dot = np.gradient(w, t, axis=0)
    omega = w ** -2.0 - w0[None, :] ** -2.0
    per_k = (np.abs(w_dot) + np.sum(np.abs(a_dot), axis=2)
             + np.abs(t_dot - omega))
    return {"t": t, "mod": per_k.sum(axis=1), "per_soliton": per_k,
            "alpha_rate": a_dot, "theta_rate": t_dot, "w_rate": w_dot}


def write_parameter_csv(path, states, mod=None):
    K = len(states[0].params)
    d = len(states[0].params[0].alpha)
    cols = ["t"]
    for k in range(K):
        cols += [f"alpha{k}_{j}" for j in range(d)]
        cols += [f"theta{k}", f"w{k}"]
    cols += ["eps_l2", "eps_h1", "residual"]
    if mod is not None:
        cols.append("mod")
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for i, s in enumerate(states):
            row = [f"{s.t:.12g}"]
            for p in s.params:
                row += [f"{a:.12g}" for a in p.alpha]
                row += [f"{p.theta:.12g}", f"{p.w:.12g}"]
            row += [f"{s.eps_l2:.12g}", f"{s.eps_h1:.12g}",
                    f"{s.residual:.6g}"]
            if mod is not None:
                row.append(f"{mod['mod'][i]:.12g}")
            wr.writerow(row)
