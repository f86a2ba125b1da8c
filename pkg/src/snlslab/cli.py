"""Command-line interface.

Every subcommand is driven by a TOML config (see harness.RunConfig) plus
`--set section.key=value` overrides; results land under `--out`, the
config's `outdir`, or `$SNLSLAB_OUT/<label>` in that order.  Exit codes:
0 success, 2 configuration/validation error, 3 numerical failure
(blow-up, decomposition loss, non-finite diagnostics).
"""

import json
import os
import sys

import click
import numpy as np

from . import harness, plots
from .diagnostics import RECORD_COLUMNS
from .evolve import BlowupError
from .ground_state import solve_ground_state
from .modulation import DecompositionLossError, decompose
from .noise import HorizonError, TemporalRejection, ito_integrals, sample_drive
from .solitons import sum_of_solitons

_NUMERICAL = (BlowupError, DecompositionLossError, ArithmeticError,
              HorizonError, TemporalRejection)


def _fail(code, msg):
    click.echo(f"error: {msg}", err=True)
    sys.exit(code)


def _guarded(fn):
    """Map failures to the documented exit codes."""
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except harness.ConfigError as exc:
            _fail(2, exc)
        except _NUMERICAL as exc:
            _fail(3, f"{type(exc).__name__}: {exc}")
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


def _parse_sets(pairs):
    out = {}
    for item in pairs:
        if "=" not in item:
            raise harness.ConfigError(f"--set needs key=value, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _load(config, sets, seed=None):
    overrides = _parse_sets(sets)
    cfg = harness.load_config(path=config, overrides=overrides)
    if seed is not None:
        cfg = harness.apply_overrides(cfg, {"run.seeds": str(seed)})
        harness.validate_config(cfg)
    return cfg


def _echo_json(obj):
    click.echo(json.dumps(harness._json_safe(obj), sort_keys=True, indent=1))


_config_opt = click.option("--config", "-c", type=click.Path(exists=True,
                           dir_okay=False), required=True,
                           help="TOML run configuration.")
_set_opt = click.option("--set", "-s", "sets", multiple=True,
                        metavar="SECTION.KEY=VALUE",
                        help="Override one config entry.")
_seed_opt = click.option("--seed", type=int, default=None,
                         help="Replace the config's seed list.")
_out_opt = click.option("--out", "-o", type=click.Path(file_okay=False),
                        default=None, help="Output directory.")


@click.group()
def main():
    """Numerical laboratory for noise-driven multi-soliton dynamics."""


@main.command("ground-state")
@click.option("--p", type=float, default=3.0, show_default=True,
              help="Nonlinearity exponent.")
@click.option("--d", type=int, default=1, show_default=True,
              help="Spatial dimension (1 or 2).")
@_guarded
def ground_state_cmd(p, d):
    """Solve the ground-state profile and print its certificate."""
    try:
        Q = solve_ground_state(p, d)
    except ValueError as exc:
        raise harness.ConfigError(str(exc)) from None
    cert = Q.certificate()
    if d == 1:
        from .ground_state import closed_form_1d
        cert["closed_form_gap"] = float(
            np.max(np.abs(Q.q - closed_form_1d(p, Q.r))))
    _echo_json(cert)


@main.command("soliton")
@_config_opt
@_set_opt
@click.option("--t", type=float, default=0.0, show_default=True,
              help="Evaluation time.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              default=None, help="Write the profile samples to CSV.")
@_guarded
def soliton_cmd(config, sets, t, csv_path):
    """Evaluate the configured soliton sum at one time."""
    cfg = _load(config, sets)
    grid = harness.build_grid(cfg)
    Q = solve_ground_state(cfg.p, cfg.d)
    u = sum_of_solitons(Q, cfg.solitons, t, grid)
    if csv_path and cfg.d == 1:
        import csv as _csv
        with open(csv_path, "w", newline="") as fh:
            wr = _csv.writer(fh)
            wr.writerow(["x", "re", "im", "abs"])
            for x, z in zip(grid.x1, u.values):
                wr.writerow([f"{x:.12g}", f"{z.real:.12g}", f"{z.imag:.12g}",
                             f"{abs(z):.12g}"])
    _echo_json({"t": t, "waves": len(cfg.solitons),
                "mass": float(grid.cell * np.sum(np.abs(u.values) ** 2)),
                "max_abs": float(np.max(np.abs(u.values))),
                "boundary_tail": u.meta.get("boundary_tail"),
                "csv": csv_path})


@main.command("drive")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
@_guarded
def drive_cmd(config, sets, seed, out):
    """Sample the rough drive for one seed and summarize it."""
    cfg = _load(config, sets, seed)
    if cfg.noise_case == "zero":
        raise harness.ConfigError("the zero-noise case has no drive")
    s = cfg.seeds[0]
    H = harness.drive_horizon(cfg)
    drive = sample_drive(cfg.paths, H, cfg.h_f, cfg.coarse, int(s))
    path = None
    if out:
        os.makedirs(out, exist_ok=True)
        path = os.path.join(out, f"{cfg.label}-drive-s{s}.bin")
        with open(path, "wb") as fh:
            fh.write(drive.to_bytes())
    bb_diag = np.array([[drive.bb[m, l, l] for m in range(drive.bb.shape[0])]
                        for l in range(cfg.paths)])
    # Ito telescoping over the coarse mesh: sum B dB + sum BB = (B_H^2 - H)/2
    ratio = int(round(drive.coarse_step / drive.h_f))
    Bc = drive.values[:, ::ratio]
    left = np.sum(Bc[:, :-1] * np.diff(Bc, axis=1), axis=1)
    ident = left + bb_diag.sum(axis=1) - 0.5 * (drive.values[:, -1] ** 2 - H)
    assembly = harness.build_assembly(cfg, s)
    _echo_json({"seed": int(s), "paths": cfg.paths, "horizon": H,
                "h_f": cfg.h_f, "coarse": cfg.coarse,
                "terminal_values": list(drive.values[:, -1]),
                "quadratic_identity_gap": float(np.max(np.abs(ident))),
                "ito_terminal": list(ito_integrals(drive, assembly.path)[:, -1]),
                "tail_variance": assembly.tail_variance,
                "b_star_start": assembly.b_star_stat(0.0),
                "file": path})


@main.command("simulate")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
@click.option("--t-start", type=float, default=1.0, show_default=True)
@click.option("--t-end", type=float, default=None,
              help="Defaults to the first configured terminal time.")
@_guarded
def simulate_cmd(config, sets, seed, out, t_start, t_end):
    """Integrate forward from a soliton sum and stream diagnostics."""
    cfg = _load(config, sets, seed)
    rec = harness.run_forward_simulation(cfg, seed=cfg.seeds[0],
                                         t_start=t_start, t_end=t_end)
    outdir = harness.resolve_outdir(cfg, out)
    path = rec.save(os.path.join(outdir, harness.record_name(rec)))
    click.echo(f"{rec.status}  seed={rec.seed}  span=[{t_start:g}, "
               f"{rec.horizon:g}]  {path}")
    if rec.status != "ok":
        sys.exit(3)


@main.command("decompose")
@_config_opt
@_set_opt
@click.option("--record", type=click.Path(exists=True, dir_okay=False),
              default=None, help="Run record to read the state from.")
@click.option("--t", type=float, required=True, help="Snapshot time.")
@_guarded
def decompose_cmd(config, sets, record, t):
    """Fit modulation parameters at one stored (or exact) snapshot."""
    cfg = _load(config, sets)
    grid = harness.build_grid(cfg)
    Q = solve_ground_state(cfg.p, cfg.d)
    if record:
        rec = harness.RunRecord.load(record)
        times = rec.arrays["checkpoint_times"]
        i = int(np.argmin(np.abs(times - t)))
        if abs(times[i] - t) > 1e-9:
            raise harness.ConfigError(
                f"no checkpoint at t={t:g}; stored: {list(times)}")
        from .grid import Field
        u = Field(grid, rec.arrays["checkpoints"][i].copy())
    else:
        u = sum_of_solitons(Q, cfg.solitons, t, grid)
    st = decompose(u, t, Q, cfg.solitons, harness.config_mode(cfg),
                   max_distance=cfg.tube)
    _echo_json({"t": t, "source": record or "exact soliton sum",
                "iterations": st.iterations, "residual": st.residual,
                "eps_l2": st.eps_l2, "eps_h1": st.eps_h1,
                "params": [{"alpha": list(p.alpha), "theta": p.theta,
                            "w": p.w} for p in st.params]})


@main.command("construct")
@_config_opt
@_set_opt
@_seed_opt
@_out_opt
@click.option("--jobs", "-j", type=int, default=1, show_default=True,
              help="Worker processes (outputs are identical for any value).")
@_guarded
def construct_cmd(config, sets, seed, out, jobs):
    """Backward multi-soliton construction over all seeds and horizons."""
    cfg = _load(config, sets, seed)

    def progress(rec):
        w = rec.header.get("window")
        span = f"window=[{w[0]:g}, {w[1]:g}]" if w else "window=-"
        click.echo(f"T={rec.horizon:<6g} seed={rec.seed:<4d} "
                   f"{rec.status:<12s} {span}")

    result = harness.run_backward_construction(cfg, jobs=jobs, outdir=out,
                                               progress=progress)
    summary = result["summary"]
    decay = summary["decay"]
    if decay["pooled"]:
        pooled = decay["pooled"]
        click.echo(f"pooled fit: delta={pooled['delta']:.4f} "
                   f"(r2={pooled['r2_exp']:.4f})  s={pooled['s']:.4f} "
                   f"(r2={pooled['r2_power']:.4f})  -> {pooled['preferred']}")
    click.echo(f"wrote {len(result['paths'])} files under "
               f"{os.path.dirname(result['paths'][-1])}")
    if any(r.status != "ok" for r in result["records"]):
        sys.exit(3)


@main.command("decay-fit")
@click.option("--dir", "dirpath", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Directory holding .rec files.")
@click.option("--case", type=click.Choice(["I", "II", "zero"]), default=None,
              help="Defaults to the records' configured case.")
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False),
              default=None, help="Write per-record fit rows to CSV.")
@_guarded
def decay_fit_cmd(dirpath, case, csv_path):
    """Fit remainder decay across stored records and select the model."""
    try:
        records = harness.load_records(dirpath)
    except FileNotFoundError as exc:
        raise harness.ConfigError(str(exc)) from None
    if case is None:
        case = records[0].config["noise"]["case"]
    fit = harness.fit_decay(records, case)
    if csv_path and fit["rows"]:
        import csv as _csv
        cols = ["record", "seed", "horizon", "delta", "r2_exp", "s",
                "r2_power", "n_samples", "basis", "non_monotone", "preferred"]
        with open(csv_path, "w", newline="") as fh:
            wr = _csv.writer(fh)
            wr.writerow(cols)
            for row in fit["rows"]:
                wr.writerow([row[c] for c in cols])
    _echo_json(fit)


@main.command("equivalence")
@_config_opt
@_set_opt
@_seed_opt
@click.option("--horizon", type=float, default=1.0, show_default=True)
@_guarded
def equivalence_cmd(config, sets, seed, horizon):
    """Compare the direct and gauge-removed routes on one noise path."""
    cfg = _load(config, sets, seed)
    res = harness.run_equivalence_study(cfg, horizon=horizon)
    _echo_json(res)


@main.command("report")
@click.option("--dir", "dirpath", type=click.Path(exists=True,
              file_okay=False), required=True,
              help="Directory holding .rec files (plots land beside them).")
@_guarded
def report_cmd(dirpath):
    """Render SVG summaries of a stored record family."""
    try:
        records = harness.load_records(dirpath)
    except FileNotFoundError as exc:
        raise harness.ConfigError(str(exc)) from None
    ok = [r for r in records if r.status == "ok"]
    if not ok:
        raise harness.ConfigError("no completed records to report on")
    written = []

    decay_series = []
    shape_series = []
    param_series = []
    mod_series = []
    for rec in ok:
        tag = f"T{rec.horizon:g} s{rec.seed}"
        diag = rec.arrays["diag"]
        t = diag[:, 0]
        eps2 = diag[:, RECORD_COLUMNS.index("eps_h1")] ** 2
        decay_series.append((tag, t, eps2))
        if "decay_shape" in rec.arrays:
            shape_series.append((tag + " fit", t, rec.arrays["decay_shape"]))
        if "param_shape" in rec.arrays:
            param_series.append((tag, t, rec.arrays["param_dev"]))
            param_series.append((tag + " fit", t, rec.arrays["param_shape"]))
        mod_series.append((tag, t, diag[:, RECORD_COLUMNS.index("mod")]))

    label = ok[0].header.get("label", "run")
    path = os.path.join(dirpath, f"{label}-decay.svg")
    plots.write_line_plot(path, decay_series + shape_series,
                          title="remainder energy and fitted shapes",
                          xlabel="t", ylabel="|eps|_H1^2", logy=True)
    written.append(path)
    if param_series:
        path = os.path.join(dirpath, f"{label}-parameters.svg")
        plots.write_line_plot(path, param_series,
                              title="parameter deviation and tail shapes",
                              xlabel="t", ylabel="sum_k |p_k - p_k(end)|",
                              logy=True)
        written.append(path)
    path = os.path.join(dirpath, f"{label}-modulation.svg")
    plots.write_line_plot(path, mod_series, title="modulation rate",
                          xlabel="t", ylabel="Mod(t)", logy=True)
    written.append(path)

    spath = os.path.join(dirpath, "summary.json")
    if os.path.exists(spath):
        with open(spath, encoding="utf-8") as fh:
            summary = json.load(fh)
        pooled = (summary.get("decay") or {}).get("pooled")
        if pooled:
            click.echo(f"pooled: delta={pooled['delta']:.4f} "
                       f"r2_exp={pooled['r2_exp']:.4f}  s={pooled['s']:.4f} "
                       f"r2_power={pooled['r2_power']:.4f}  "
                       f"-> {pooled['preferred']}")
        cauchy = summary.get("cauchy") or {}
        if cauchy.get("median_gap_by_min_horizon"):
            click.echo(f"terminal-time gaps: "
                       f"{cauchy['median_gap_by_min_horizon']} "
                       f"(decreasing: {cauchy.get('trend_ok')})")
        stab = summary.get("stability") or {}
        if stab.get("spread"):
            click.echo(f"monitor spread: {stab['spread']} "
                       f"(all stable: {stab.get('all_stable')})")
    for p in written:
        click.echo(p)


if __name__ == "__main__":
    main()
