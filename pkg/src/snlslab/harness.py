"""Experiment harness: configuration, persistence, and the headline studies.

Three workflows sit on top of the physics layers:

* backward multi-soliton construction: integrate the auxiliary equation down
  from a pure soliton sum at a terminal time, decompose every snapshot,
  locate the earliest certifiable time by a downward Newton scan, and monitor
  the remainder and the fitted bound shapes;
* remainder decay-rate fitting with exponential/power model selection;
* the transform-equivalence study comparing the direct and gauge-removed
  evolution routes on a shared noise realization.

Runs are described by a declarative TOML config plus overrides.  Results are
persisted as run records: a canonical-JSON header followed by named binary
arrays, with no timestamps or environment data, so identical (config, seed)
inputs reproduce identical bytes.

Config schema (TOML sections and keys, with defaults):

    [model]   variant="rnls_star"  p=3.0  d=1
    [grid]    n=1024  box=50.265...
    [time]    dt=5e-4  order=2  horizons=[15,20,25]  t0_floor=2.0
              stride=0.1  checkpoint_stride=1.0
    [[solitons]]  w0=1.0  v=[-0.5]  x0=[-6.0]  theta0=0.0   (one per wave)
    [noise]   case="I"  paths=2  amp=0.1  decay=0.15  scale=1.0
              lam=0.25  power=2.0  c_star=1.0
              h_f=2.5e-4  coarse=0.128  pad=32.0  tail_tol=1e-12  tube=1.0
    [run]     seeds=[1,2,3,4,5]  label="run"  outdir=""

`decay` is the exponential rate (case I) or the polynomial exponent
(case II) of the spatial profiles; `scale` is their range; `lam`/`power`
drive the temporal profiles.  `outdir` is an execution detail and is
excluded from the config digest.
"""

import concurrent.futures
import hashlib
import json
import math
import os
import struct
from dataclasses import dataclass, field, replace

import numpy as np
import tomli

from .diagnostics import (DiagnosticsRecord, RECORD_COLUMNS,
                          almost_conservation_monitor, energy_drift_monitor,
                          envelope_constant, fit_log_linear, fit_log_power,
                          mass, record_stream, records_to_csv)
from .evolve import (VARIANTS, BlowupError, EvolutionConfig, Trajectory,
                     backward_solve, doss_sussman, equivalence_residual,
                     evolve)
from .grid import Field, SpatialGrid
from .ground_state import solve_ground_state
from .modulation import DecompositionLossError, decompose, wrap_angle
from .noise import (HorizonError, NoiseAssembly, TemporalRejection,
                    make_geometry, make_temporal, sample_drive)
from .solitons import SolitonSpec, sum_of_solitons, validate_multi

ENV_OUTPUT_ROOT = "SNLSLAB_OUT"
T0_MARGIN = 2.0               # certified window starts this far above a loss
WINDOW_MARGIN = 4.0           # fit window ends this far below the terminal
                              # time: the remainder is pinned to zero there
                              # and sits below its envelope
MIN_FIT_SAMPLES = 15
DELTA2 = 1.0                  # rate of the interaction/tail error shapes
ENV_RATIO_FLAG = 10.0         # dip depth that flags a non-monotone envelope

_REC_MAGIC = b"SNLR"
_REC_VERSION = 1
_CODES = {0: "<f8", 1: "<c16", 2: "<i8"}


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration (exit code 2 territory)."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    variant: str = "rnls_star"
    p: float = 3.0
    d: int = 1
    n: int = 1024
    box: float = 16.0 * math.pi
    dt: float = 5e-4
    order: int = 2
    horizons: tuple = (15.0, 20.0, 25.0)
    t0_floor: float = 2.0
    stride: float = 0.1
    checkpoint_stride: float = 1.0
    solitons: tuple = (SolitonSpec(1.0, (-0.5,), (-6.0,)),
                       SolitonSpec(1.2, (0.5,), (6.0,)))
    noise_case: str = "I"
    paths: int = 2
    amp: float = 0.1
    decay: float = 0.15
    scale: float = 1.0
    lam: float = 0.25
    power: float = 2.0
    c_star: float = 1.0
    h_f: float = 2.5e-4
    coarse: float = 0.128
    pad: float = 32.0
    tail_tol: float = 1e-12
    tube: float = 1.0
    seeds: tuple = (1,)
    label: str = "run"
    outdir: str = ""


_SCHEMA = {
    "model": {"variant": str, "p": float, "d": int},
    "grid": {"n": int, "box": float},
    "time": {"dt": float, "order": int, "horizons": tuple, "t0_floor": float,
             "stride": float, "checkpoint_stride": float},
    "noise": {"case": str, "paths": int, "amp": float, "decay": float,
              "scale": float, "lam": float, "power": float, "c_star": float,
              "h_f": float, "coarse": float, "pad": float, "tail_tol": float,
              "tube": float},
    "run": {"seeds": tuple, "label": str, "outdir": str},
}
_ATTR = {("noise", "case"): "noise_case"}


def _attr_name(section, key):
    return _ATTR.get((section, key), key)


def _coerce(section, key, value, target):
    name = f"{section}.{key}"
    if target is tuple:
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{name} must be a list")
        inner = int if key == "seeds" else float
        try:
            return tuple(inner(v) for v in value)
        except (TypeError, ValueError):
            raise ConfigError(f"{name} has a non-numeric entry") from None
    if target is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{name} must be a number")
        return float(value)
    if target is int:
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value == int(value):
                return int(value)
            raise ConfigError(f"{name} must be an integer")
        return int(value)
    if target is str:
        if not isinstance(value, str):
            raise ConfigError(f"{name} must be a string")
        return value
    raise ConfigError(f"unsupported schema type for {name}")


def _soliton_from_table(tb, index):
    if not isinstance(tb, dict):
        raise ConfigError("each [[solitons]] entry must be a table")
    known = {"w0", "v", "x0", "theta0"}
    extra = set(tb) - known
    if extra:
        raise ConfigError(f"solitons[{index}] has unknown keys {sorted(extra)}")
    try:
        w0 = float(tb.get("w0", 1.0))
        theta0 = float(tb.get("theta0", 0.0))
        v = tb.get("v", 0.0)
        x0 = tb.get("x0", 0.0)
        v = tuple(float(c) for c in (v if isinstance(v, (list, tuple)) else [v]))
        x0 = tuple(float(c) for c in (x0 if isinstance(x0, (list, tuple))
                                      else [x0]))
        return SolitonSpec(w0, v, x0, theta0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solitons[{index}]: {exc}") from None


def load_config(path=None, text=None, overrides=None) -> RunConfig:
    """Build a RunConfig from a TOML file/string plus dotted-key overrides."""
    if text is None and path is not None:
        with open(path, "rb") as fh:
            data = tomli.load(fh)
    elif text is not None:
        data = tomli.loads(text)
    else:
        data = {}
    kw = {}
    for section, keys in _SCHEMA.items():
        sub = data.pop(section, {})
        if not isinstance(sub, dict):
            raise ConfigError(f"[{section}] must be a table")
        for key, value in sub.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {section}.{key}")
            kw[_attr_name(section, key)] = _coerce(section, key, value,
                                                   keys[key])
    sol = data.pop("solitons", None)
    if sol is not None:
        if not isinstance(sol, list) or not sol:
            raise ConfigError("[[solitons]] must be a non-empty array of tables")
        kw["solitons"] = tuple(_soliton_from_table(tb, i)
                               for i, tb in enumerate(sol))
    if data:
        raise ConfigError(f"unknown config section(s) {sorted(data)}")
    cfg = RunConfig(**kw)
    if overrides:
        cfg = apply_overrides(cfg, overrides)
    validate_config(cfg)
    return cfg


def apply_overrides(cfg: RunConfig, overrides) -> RunConfig:
    """Apply {"section.key": value} pairs; strings are parsed per schema."""
    changes = {}
    for dotted, value in overrides.items():
        try:
            section, key = dotted.split(".", 1)
            target = _SCHEMA[section][key]
        except (ValueError, KeyError):
            raise ConfigError(f"unknown override key {dotted!r}") from None
        if isinstance(value, str) and target is not str:
            if target is tuple:
                value = [v for v in value.replace(",", " ").split() if v]
            else:
                try:
                    value = int(value) if target is int else float(value)
                except ValueError:
                    raise ConfigError(
                        f"override {dotted}={value!r} is not a number") from None
        changes[_attr_name(section, key)] = _coerce(section, key, value,
                                                    target)
    return replace(cfg, **changes)


def config_mode(cfg: RunConfig) -> str:
    return ("critical"
            if abs(cfg.p - (1.0 + 4.0 / cfg.d)) < 1e-12 else "subcritical")


def effective_variant(cfg: RunConfig) -> str:
    """Zero noise makes every gauge identical; run the bare dispersive flow."""
    return "nls" if cfg.noise_case == "zero" else cfg.variant


def _is_multiple(value, base, tol=1e-9):
    k = value / base
    return abs(k - round(k)) < tol


def validate_config(cfg: RunConfig):
    if cfg.variant not in VARIANTS:
        raise ConfigError(f"unknown variant {cfg.variant!r}")
    if cfg.d not in (1, 2):
        raise ConfigError("dimension must be 1 or 2")
    if not cfg.p > 1.0:
        raise ConfigError("nonlinearity exponent must exceed 1")
    if cfg.p > 1.0 + 4.0 / cfg.d + 1e-12:
        raise ConfigError("nonlinearity exponent is supercritical for this "
                          "dimension")
    if cfg.n < 4 or cfg.n & (cfg.n - 1):
        raise ConfigError("grid size must be a power of two >= 4")
    if not cfg.box > 0:
        raise ConfigError("box half-length must be positive")
    if not 0 < cfg.dt <= 1e-2:
        raise ConfigError("time step must sit in (0, 1e-2]")
    if cfg.order not in (2, 4):
        raise ConfigError("composition order must be 2 or 4")
    if cfg.order == 4 and effective_variant(cfg) != "nls":
        raise ConfigError("order 4 requires the bare flow (zero noise)")
    if not cfg.horizons:
        raise ConfigError("need at least one terminal time")
    if any(b <= a for a, b in zip(cfg.horizons, cfg.horizons[1:])):
        raise ConfigError("terminal times must increase strictly")
    if not cfg.t0_floor > 0:
        raise ConfigError("scan floor must be positive")
    if cfg.horizons[0] <= cfg.t0_floor:
        raise ConfigError("terminal times must exceed the scan floor")
    if not cfg.stride > 0 or not _is_multiple(cfg.stride, cfg.dt):
        raise ConfigError("sample stride must be a positive multiple of dt")
    if not _is_multiple(cfg.checkpoint_stride, cfg.stride):
        raise ConfigError("checkpoint stride must be a multiple of the "
                          "sample stride")
    for T in cfg.horizons:
        if not _is_multiple(T - cfg.t0_floor, cfg.stride):
            raise ConfigError("terminal times must sit on the sample mesh")
    if not cfg.solitons:
        raise ConfigError("need at least one soliton")
    for i, s in enumerate(cfg.solitons):
        if s.d != cfg.d:
            raise ConfigError(f"solitons[{i}] dimension differs from the grid")
    try:
        validate_multi(cfg.solitons)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.noise_case not in ("I", "II", "zero"):
        raise ConfigError("noise case must be 'I', 'II', or 'zero'")
    if not cfg.seeds:
        raise ConfigError("need at least one seed")
    if len(set(cfg.seeds)) != len(cfg.seeds):
        raise ConfigError("seeds must be distinct")
    if any(s < 0 for s in cfg.seeds):
        raise ConfigError("seeds must be non-negative")
    if not cfg.tube > 0:
        raise ConfigError("decomposition tube radius must be positive")
    if cfg.noise_case == "zero":
        return
    if cfg.paths < 1:
        raise ConfigError("need at least one noise path")
    if cfg.amp < 0:
        raise ConfigError("noise amplitude must be non-negative")
    if not cfg.scale > 0:
        raise ConfigError("profile range must be positive")
    if cfg.noise_case == "I":
        if not cfg.decay > 0:
            raise ConfigError("case I spatial rate must be positive")
        if not cfg.lam > 0:
            raise ConfigError("case I temporal rate must be positive")
    else:
        if cfg.decay < 3.0:
            raise ConfigError("case II spatial exponent must be >= 3")
        if not cfg.power > 0.5:
            raise ConfigError("case II temporal exponent must exceed 1/2")
        if not cfg.c_star > 0:
            raise ConfigError("integrability-rate constant must be positive")
    if not cfg.h_f > 0 or not _is_multiple(cfg.dt / 2.0, cfg.h_f):
        raise ConfigError("fine mesh must divide half the time step")
    ratio = cfg.coarse / cfg.h_f
    levels = round(math.log2(ratio)) if ratio > 0 else -1
    if levels < 4 or abs(ratio - 2.0 ** levels) > 1e-9:
        raise ConfigError("enhancement mesh must refine dyadically by >= 16")
    if cfg.pad < cfg.coarse:
        raise ConfigError("horizon pad must cover one enhancement interval")
    if not cfg.tail_tol > 0:
        raise ConfigError("tail tolerance must be positive")
    H = drive_horizon(cfg)
    if cfg.noise_case == "I":
        tail = math.exp(-2.0 * cfg.lam * H) / (2.0 * cfg.lam)
    else:
        tail = (1.0 + H) ** (1.0 - 2.0 * cfg.power) / (2.0 * cfg.power - 1.0)
    if tail > cfg.tail_tol:
        raise ConfigError(f"truncated tail variance {tail:.3e} exceeds "
                          f"{cfg.tail_tol:.1e}; increase the pad or the "
                          "tolerance")


def config_to_dict(cfg: RunConfig) -> dict:
    """Canonical nested form; `outdir` is execution detail and is excluded."""
    return {
        "model": {"variant": cfg.variant, "p": cfg.p, "d": cfg.d},
        "grid": {"n": cfg.n, "box": cfg.box},
        "time": {"dt": cfg.dt, "order": cfg.order,
                 "horizons": list(cfg.horizons), "t0_floor": cfg.t0_floor,
                 "stride": cfg.stride,
                 "checkpoint_stride": cfg.checkpoint_stride},
        "solitons": [{"w0": s.w0, "v": list(s.v), "x0": list(s.x0),
                      "theta0": s.theta0} for s in cfg.solitons],
        "noise": {"case": cfg.noise_case, "paths": cfg.paths, "amp": cfg.amp,
                  "decay": cfg.decay, "scale": cfg.scale, "lam": cfg.lam,
                  "power": cfg.power, "c_star": cfg.c_star, "h_f": cfg.h_f,
                  "coarse": cfg.coarse, "pad": cfg.pad,
                  "tail_tol": cfg.tail_tol, "tube": cfg.tube},
        "run": {"seeds": list(cfg.seeds), "label": cfg.label},
    }


def config_digest(cfg: RunConfig) -> str:
    blob = json.dumps(config_to_dict(cfg), sort_keys=True,
                      separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# run records


def _json_safe(obj):
    if isinstance(obj, dict):
        return {str(k): _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"header value of type {type(obj).__name__} is not "
                    "serializable")


def _array_code(arr):
    if arr.dtype == np.complex128:
        return 1
    if arr.dtype == np.int64:
        return 2
    return 0


@dataclass
class RunRecord:
    """One run's metadata plus named result arrays, byte-reproducible."""

    header: dict
    arrays: dict = field(default_factory=dict)

    @property
    def seed(self):
        return self.header["seed"]

    @property
    def horizon(self):
        return self.header["horizon"]

    @property
    def status(self):
        return self.header["status"]

    @property
    def t0(self):
        return self.header["t0"]

    @property
    def fits(self):
        return self.header.get("fits", {})

    @property
    def config(self):
        return self.header["config"]

    def to_bytes(self) -> bytes:
        head = json.dumps(_json_safe(self.header), sort_keys=True,
                          separators=(",", ":"), allow_nan=False).encode()
        parts = [_REC_MAGIC, struct.pack("<IQ", _REC_VERSION, len(head)),
                 head, struct.pack("<I", len(self.arrays))]
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name])
            if arr.dtype.kind == "c":
                arr = arr.astype(np.complex128)
            elif arr.dtype.kind in "iu":
                arr = arr.astype(np.int64)
            else:
                arr = arr.astype(np.float64)
            code = _array_code(arr)
            nb = name.encode()
            parts.append(struct.pack("<H", len(nb)))
            parts.append(nb)
            parts.append(struct.pack("<BB", code, arr.ndim))
            if arr.ndim:
                parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            parts.append(arr.astype(_CODES[code]).tobytes())
        return b"".join(parts)

    @classmethod
    def from_bytes(cls, buf: bytes) -> "RunRecord":
        if buf[:4] != _REC_MAGIC:
            raise ValueError("not a run record")
        version, hlen = struct.unpack_from("<IQ", buf, 4)
        if version != _REC_VERSION:
            raise ValueError(f"unsupported record version {version}")
        pos = 16
        header = json.loads(buf[pos:pos + hlen].decode())
        pos += hlen
        (count,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        arrays = {}
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", buf, pos)
            pos += 2
            name = buf[pos:pos + nlen].decode()
            pos += nlen
            code, ndim = struct.unpack_from("<BB", buf, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", buf, pos) if ndim else ()
            pos += 8 * ndim
            dtype = np.dtype(_CODES[code])
            nbytes = dtype.itemsize * int(np.prod(shape, dtype=np.int64))
            arr = np.frombuffer(buf[pos:pos + nbytes], dtype=dtype)
            arrays[name] = arr.reshape(shape).copy()
            pos += nbytes
        return cls(header, arrays)

    def save(self, path):
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())


def record_name(rec: RunRecord) -> str:
    label = rec.header.get("label", "run")
    return f"{label}-T{rec.horizon:g}-s{rec.seed}.rec"


def load_records(dirpath):
    names = sorted(f for f in os.listdir(dirpath) if f.endswith(".rec"))
    if not names:
        raise FileNotFoundError(f"no run records under {dirpath}")
    return [RunRecord.load(os.path.join(dirpath, f)) for f in names]


def resolve_outdir(cfg: RunConfig, explicit=None) -> str:
    out = explicit or cfg.outdir or os.path.join(
        os.environ.get(ENV_OUTPUT_ROOT, "runs"), cfg.label)
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# assembly of grids, drives, and sample meshes


def build_grid(cfg: RunConfig) -> SpatialGrid:
    return SpatialGrid(cfg.d, cfg.n, cfg.box)


def drive_horizon(cfg: RunConfig) -> float:
    need = max(cfg.horizons) + cfg.pad
    return math.ceil(need / cfg.coarse - 1e-9) * cfg.coarse


def build_assembly(cfg: RunConfig, seed) -> NoiseAssembly | None:
    """One drive + geometry + temporal profile per (config, seed).

    The fixed-root bridge makes the Brownian paths a function of
    (seed, coarse) alone on any shared initial segment, so every terminal
    time of a run family sees the same realization, as the backward
    construction requires.
    """
    if cfg.noise_case == "zero":
        return None
    H = drive_horizon(cfg)
    drive = sample_drive(cfg.paths, H, cfg.h_f, cfg.coarse, int(seed))
    grid = build_grid(cfg)
    try:
        if cfg.noise_case == "I":
            geo = make_geometry("I", {"a": cfg.amp, "c": cfg.decay,
                                      "scale": cfg.scale}, cfg.paths, grid)
            g = make_temporal("I", {"lam": cfg.lam}, drive.times, cfg.paths)
        else:
            geo = make_geometry("II", {"a": cfg.amp, "upsilon": cfg.decay,
                                       "scale": cfg.scale}, cfg.paths, grid)
            g = make_temporal("II", {"power": cfg.power, "c_star": cfg.c_star},
                              drive.times, cfg.paths)
        return NoiseAssembly(drive, geo, g, tail_tol=cfg.tail_tol)
    except (TemporalRejection, HorizonError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def sample_mesh(cfg: RunConfig, horizon, start=None):
    lo = cfg.t0_floor if start is None else start
    m = int(round((horizon - lo) / cfg.stride))
    return lo + cfg.stride * np.arange(m + 1)


# ---------------------------------------------------------------------------
# model fitting


def _monotone_envelope(y):
    return np.maximum.accumulate(y[::-1])[::-1]


def fit_models(t, y):
    """Both decay models on the monotone-envelope contacts of y > 0.

    Returns rates with the decaying sign convention (positive = decay) and
    flags series that dip more than ENV_RATIO_FLAG below a later maximum.
    """
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = np.isfinite(y) & (y > 0) & (t > 0)
    t, y = t[keep], y[keep]
    if len(y) < MIN_FIT_SAMPLES:
        raise ValueError(f"need at least {MIN_FIT_SAMPLES} positive samples, "
                         f"got {len(y)}")
    env = _monotone_envelope(y)
    contact = y >= env * (1.0 - 1e-12)
    basis = "contacts" if np.sum(contact) >= MIN_FIT_SAMPLES else "all"
    sel = contact if basis == "contacts" else np.ones_like(contact)
    env_ratio = float(np.max(env / y))
    exp_fit = fit_log_linear(t[sel], y[sel])
    pow_fit = fit_log_power(t[sel], y[sel])
    return {"delta": -exp_fit["slope"],
            "intercept_exp": exp_fit["intercept"],
            "r2_exp": exp_fit["r_squared"],
            "s": -pow_fit["exponent"],
            "intercept_power": pow_fit["intercept"],
            "r2_power": pow_fit["r_squared"],
            "n_samples": int(np.sum(sel)),
            "basis": basis,
            "non_monotone": bool(env_ratio > ENV_RATIO_FLAG),
            "env_ratio": env_ratio}


def _shape_curve(fit, model, t):
    """The fitted decay shape phi evaluated on t."""
    t = np.asarray(t, dtype=float)
    if model == "exp":
        return np.exp(fit["intercept_exp"] - fit["delta"] * t)
    return np.exp(fit["intercept_power"]) * t ** (-fit["s"])


def _tail_integral(shape, t):
    """I(t_i) = int_{t_i}^{t_end} s sqrt(phi(s)) ds by trapezoids."""
    integrand = t * np.sqrt(np.maximum(shape, 0.0))
    pieces = 0.5 * (integrand[1:] + integrand[:-1]) * np.diff(t)
    out = np.zeros_like(t)
    out[:-1] = np.cumsum(pieces[::-1])[::-1]
    return out


def decay_series(rec: RunRecord, window=None):
    """(t, ||eps||_H1^2) inside the certified window of a record."""
    diag = rec.arrays["diag"]
    t = diag[:, 0]
    y = diag[:, RECORD_COLUMNS.index("eps_h1")] ** 2
    lo, hi = window if window is not None else rec.header["window"]
    m = (t >= lo - 1e-9) & (t <= hi + 1e-9)
    return t[m], y[m]


def fit_decay(records, case, window=None):
    """Per-record and pooled decay fits with model selection.

    The pooled fit runs on the merged envelope over all certified records,
    which is the statistic the model dichotomy is judged on; per-record rows
    carry their own fits, window, and monotonicity flags.
    """
    expected = "power" if case == "II" else "exp"
    rows = []
    merged_t, merged_y = [], []
    skipped = []
    for rec in records:
        if rec.status != "ok":
            skipped.append({"record": record_name(rec), "status": rec.status})
            continue
        t, y = decay_series(rec, window)
        try:
            fit = fit_models(t, y)
        except ValueError as exc:
            skipped.append({"record": record_name(rec), "status": str(exc)})
            continue
        fit.update(record=record_name(rec), seed=rec.seed,
                   horizon=rec.horizon,
                   window=list(window) if window else rec.header["window"],
                   preferred="exp" if fit["r2_exp"] >= fit["r2_power"]
                   else "power")
        rows.append(fit)
        merged_t.append(t)
        merged_y.append(y)
    out = {"case": case, "model_expected": expected, "rows": rows,
           "skipped": skipped, "n_records": len(rows)}
    if not rows:
        out["pooled"] = None
        return out
    tm = np.concatenate(merged_t)
    ym = np.concatenate(merged_y)
    order = np.argsort(tm, kind="stable")
    pooled = fit_models(tm[order], ym[order])
    pooled["preferred"] = ("exp" if pooled["r2_exp"] >= pooled["r2_power"]
                           else "power")
    out["pooled"] = pooled
    out["delta_median"] = float(np.median([r["delta"] for r in rows]))
    out["s_median"] = float(np.median([r["s"] for r in rows]))
    out["delta_r2_mean"] = float(np.mean([r["r2_exp"] - r["r2_power"]
                                          for r in rows]))
    out["delta_r2_pooled"] = pooled["r2_exp"] - pooled["r2_power"]
    return out


# ---------------------------------------------------------------------------
# per-record packaging and analysis


def _stream_arrays(cfg, specs, records, states):
    m = len(records)
    K = len(specs)
    d = cfg.d
    diag = np.empty((m, len(RECORD_COLUMNS)))
    I = np.empty((m, K))
    M = np.empty((m, K, d))
    unstable = np.empty((m, K))
    alpha = np.empty((m, K, d))
    theta = np.empty((m, K))
    w = np.empty((m, K))
    for i, (rec, st) in enumerate(zip(records, states)):
        diag[i] = [rec.t, rec.mass, rec.energy, rec.G, rec.H,
                   rec.eps_l2, rec.eps_h1, rec.mod, rec.b_star]
        I[i] = rec.I
        M[i] = rec.M
        unstable[i] = rec.unstable
        for k, p in enumerate(st.params):
            alpha[i, k] = p.alpha
            theta[i, k] = p.theta
            w[i, k] = p.w
    dev = np.zeros(m)
    for k, spec in enumerate(specs):
        dev += np.abs(w[:, k] - spec.w0)
        dev += np.sum(np.abs(alpha[:, k] - np.asarray(spec.x0)), axis=1)
        dev += np.abs(wrap_angle(theta[:, k] - spec.theta0))
    return {"diag": diag, "local_mass": I, "local_momentum": M,
            "unstable": unstable, "alpha": alpha, "theta": theta, "w": w,
            "param_dev": dev}


def _diag_objects(arrays):
    diag = arrays["diag"]
    out = []
    for i in range(diag.shape[0]):
        out.append(DiagnosticsRecord(
            t=diag[i, 0], mass=diag[i, 1], energy=diag[i, 2],
            I=arrays["local_mass"][i], M=arrays["local_momentum"][i],
            unstable=arrays["unstable"][i], G=diag[i, 3], H=diag[i, 4],
            eps_l2=diag[i, 5], eps_h1=diag[i, 6], mod=diag[i, 7],
            b_star=diag[i, 8]))
    return out


def analyze_arrays(arrays, case, window):
    """Decay fit, bound-shape envelopes, and monitor constants.

    Works off the packaged arrays alone so a reloaded record reproduces the
    same numbers.  Adds the fitted shape curves to `arrays` for reports.
    """
    diag = arrays["diag"]
    t = diag[:, 0]
    eps2 = diag[:, RECORD_COLUMNS.index("eps_h1")] ** 2
    bstar = diag[:, RECORD_COLUMNS.index("b_star")]
    modv = diag[:, RECORD_COLUMNS.index("mod")]
    lo, hi = window
    win = (t >= lo - 1e-9) & (t <= hi + 1e-9)
    fits = {"window": [float(lo), float(hi)], "n_window": int(win.sum())}
    model = "power" if case == "II" else "exp"
    fits["model"] = model
    try:
        decay = fit_models(t[win], eps2[win])
    except ValueError as exc:
        fits["decay"] = None
        fits["decay_error"] = str(exc)
        decay = None
    if decay is not None:
        fits["decay"] = decay
        shape = _shape_curve(decay, model, t)
        arrays["decay_shape"] = shape
        fits["c_decay"], _ = envelope_constant(t[win], eps2[win], shape[win])
        pshape = _tail_integral(shape, t)
        arrays["param_shape"] = pshape
        pw = win & (pshape > 0)
        if np.any(pw):
            fits["c_param"], _ = envelope_constant(
                t[pw], arrays["param_dev"][pw], pshape[pw])
    if win.sum() >= 3:
        sub = [r for r, keep in zip(_diag_objects(arrays), win) if keep]
        phi_vals = (arrays["decay_shape"][win] if "decay_shape" in arrays
                    else None)
        am = almost_conservation_monitor(sub, delta2=DELTA2,
                                         phi_vals=phi_vals)
        ed = energy_drift_monitor(sub, delta2=DELTA2, phi_vals=phi_vals)
        decayv = np.exp(-DELTA2 * t[win])
        c_mod, _ = envelope_constant(
            t[win], modv[win],
            np.sqrt(eps2[win]) + bstar[win] + decayv)
        unst = np.max(np.abs(arrays["unstable"]), axis=1)
        c_unstable, _ = envelope_constant(
            t[win], unst[win], eps2[win] + bstar[win] + decayv)
        fits["monitors"] = {
            "c_mass": am["c_mass"], "c_momentum": am["c_momentum"],
            "max_dI": am["max_dI"], "max_dM": am["max_dM"],
            "c_energy": ed["c_energy"], "max_dE": ed["max_dE"],
            "total_energy_drift": ed["total_drift"],
            "energy_unbounded": ed["unbounded"],
            "c_mod": c_mod, "c_unstable": c_unstable,
        }
    return fits


def _checkpoint_indices(times, t0, cfg):
    keep = []
    for i, t in enumerate(times):
        on_mesh = _is_multiple(t, cfg.checkpoint_stride)
        if (on_mesh and t >= t0 - 1e-9) or abs(t - t0) < 1e-9 \
                or i == len(times) - 1:
            keep.append(i)
    return keep


def _base_header(cfg, seed, horizon, kind):
    return {"format": "snlslab-run-record", "version": _REC_VERSION,
            "kind": kind, "config": config_to_dict(cfg),
            "config_digest": config_digest(cfg), "label": cfg.label,
            "seed": int(seed), "horizon": float(horizon),
            "mode": config_mode(cfg)}


def _failure_record(cfg, seed, horizon, kind, status, fail_t):
    header = _base_header(cfg, seed, horizon, kind)
    header.update(status=status, fail_t=fail_t, t0=None,
                  window=None, fits={})
    return RunRecord(header, {"diag": np.zeros((0, len(RECORD_COLUMNS)))})


_UNSET = object()


def construct_single(cfg: RunConfig, seed, horizon, assembly=_UNSET,
                     Q=None) -> RunRecord:
    """Backward construction for one (seed, terminal time) pair.

    Integrates the soliton sum down from the terminal time, scans downward
    for the first decomposition loss to set the certified window start
    (loss time + T0_MARGIN, or the scan floor), then streams diagnostics
    and fits over the surviving snapshots.
    """
    grid = build_grid(cfg)
    if Q is None:
        Q = solve_ground_state(cfg.p, cfg.d)
    if assembly is _UNSET:
        assembly = build_assembly(cfg, seed)
    specs = list(cfg.solitons)
    mode = config_mode(cfg)
    mesh = sample_mesh(cfg, horizon)
    u_top = sum_of_solitons(Q, specs, horizon, grid)
    ecfg = EvolutionConfig(effective_variant(cfg), cfg.p, cfg.dt,
                           order=cfg.order)
    try:
        traj = backward_solve(u_top, ecfg, horizon, cfg.t0_floor,
                              assembly, mesh)
    except BlowupError as exc:
        return _failure_record(cfg, seed, horizon, "backward-construction",
                               "blowup", float(exc.t))

    guess = None
    fail_t = None
    first_ok = 0
    for i in reversed(range(len(traj.times))):
        try:
            st = decompose(traj.states[i], traj.times[i], Q, specs, mode,
                           guess=guess, max_distance=cfg.tube)
        except DecompositionLossError:
            fail_t = traj.times[i]
            first_ok = i + 1
            break
        guess = st.params
    if first_ok >= len(traj.times):
        return _failure_record(cfg, seed, horizon, "backward-construction",
                               "decomposition-lost", float(fail_t))
    t0 = cfg.t0_floor if fail_t is None else fail_t + T0_MARGIN

    sub = Trajectory(times=list(traj.times[first_ok:]),
                     states=list(traj.states[first_ok:]))
    try:
        records, states = record_stream(sub, Q, specs, mode, cfg.p,
                                        assembly=assembly, guess=guess)
    except (DecompositionLossError, ArithmeticError) as exc:
        rec = _failure_record(cfg, seed, horizon, "backward-construction",
                              "stream-failure", None)
        rec.header["detail"] = str(exc)
        return rec

    arrays = _stream_arrays(cfg, specs, records, states)
    window = (t0, horizon - WINDOW_MARGIN)
    fits = analyze_arrays(arrays, cfg.noise_case, window)
    status = "ok" if fits["n_window"] >= MIN_FIT_SAMPLES else "short-window"

    ck = _checkpoint_indices(sub.times, t0, cfg)
    arrays["checkpoint_times"] = np.array([sub.times[i] for i in ck])
    arrays["checkpoints"] = np.stack([sub.states[i].values for i in ck])

    header = _base_header(cfg, seed, horizon, "backward-construction")
    header.update(status=status, fail_t=fail_t, t0=float(t0),
                  window=[float(window[0]), float(window[1])], fits=fits)
    return RunRecord(header, arrays)


# ---------------------------------------------------------------------------
# aggregate studies over record families


def cauchy_gaps(records):
    """L2 gaps between runs of different terminal times at a shared early
    checkpoint, grouped by seed; the terminal-data dependence should fade
    as the smaller terminal time grows."""
    ok = [r for r in records if r.status == "ok"]
    by_seed = {}
    for r in ok:
        by_seed.setdefault(r.seed, []).append(r)
    rows = []
    for seed in sorted(by_seed):
        group = sorted(by_seed[seed], key=lambda r: r.horizon)
        if len(group) < 2:
            continue
        t_lo = max(r.t0 for r in group)
        common = None
        for r in group:
            ts = set(np.round(r.arrays["checkpoint_times"], 6))
            common = ts if common is None else common & ts
        common = sorted(t for t in common if t >= t_lo - 1e-9)
        if not common:
            continue
        t_ref = float(common[0])
        cdict = r.config["grid"]
        cell = (2.0 * cdict["box"] / cdict["n"]) ** r.config["model"]["d"]
        states = {}
        for r in group:
            idx = int(np.argmin(np.abs(r.arrays["checkpoint_times"] - t_ref)))
            states[r.horizon] = r.arrays["checkpoints"][idx]
        hs = sorted(states)
        for a_i in range(len(hs)):
            for b_i in range(a_i + 1, len(hs)):
                gap = math.sqrt(cell) * float(
                    np.linalg.norm(states[hs[a_i]] - states[hs[b_i]]))
                rows.append({"seed": seed, "t_ref": t_ref,
                             "horizon_lo": hs[a_i], "horizon_hi": hs[b_i],
                             "min_horizon": hs[a_i], "gap": gap})
    by_min = {}
    for row in rows:
        by_min.setdefault(row["min_horizon"], []).append(row["gap"])
    medians = {h: float(np.median(g)) for h, g in sorted(by_min.items())}
    hs = sorted(medians)
    trend_ok = all(medians[a] > medians[b] for a, b in zip(hs, hs[1:]))
    return {"rows": rows, "median_gap_by_min_horizon": medians,
            "trend_ok": bool(trend_ok and len(hs) >= 2)}


_MONITOR_KEYS = ("c_mass", "c_momentum", "c_energy", "c_mod", "c_unstable")


def monitor_stability(records, spread_tol=0.5):
    """Fitted envelope constants per seed (largest horizon) and their spread.

    A monitor is stable when every seed's constant sits within
    (1 +- spread_tol) of the cross-seed median.
    """
    best = {}
    for r in records:
        if r.status != "ok" or not r.fits.get("monitors"):
            continue
        cur = best.get(r.seed)
        if cur is None or r.horizon > cur.horizon:
            best[r.seed] = r
    constants = {k: [] for k in _MONITOR_KEYS}
    for seed in sorted(best):
        mons = best[seed].fits["monitors"]
        for k in _MONITOR_KEYS:
            v = mons.get(k)
            if v is not None and np.isfinite(v):
                constants[k].append(float(v))
    spread = {}
    stable = {}
    for k, vals in constants.items():
        if len(vals) < 2:
            spread[k] = None
            stable[k] = len(vals) > 0
            continue
        med = float(np.median(vals))
        if med <= 0:
            spread[k] = None
            stable[k] = all(v == 0 for v in vals)
            continue
        spread[k] = float(max(abs(v - med) for v in vals) / med)
        stable[k] = spread[k] <= spread_tol
    return {"constants": constants, "spread": spread, "stable": stable,
            "all_stable": bool(all(stable.values())), "seeds": sorted(best)}


def summarize_records(cfg, records):
    statuses = {}
    for r in records:
        statuses[r.status] = statuses.get(r.status, 0) + 1
    summary = {"config_digest": config_digest(cfg), "label": cfg.label,
               "case": cfg.noise_case,
               "records": [record_name(r) for r in records],
               "statuses": statuses}
    summary["decay"] = fit_decay(records, cfg.noise_case)
    summary["cauchy"] = cauchy_gaps(records)
    summary["stability"] = monitor_stability(records)
    return summary


def _construct_task(args):
    cfg, seed, horizon = args
    return construct_single(cfg, seed, horizon)


def run_backward_construction(cfg: RunConfig, jobs=1, outdir=None,
                              write=True, progress=None):
    """The full construction study: every (seed, terminal time) pair.

    Worker tasks are pure functions of (config, seed, horizon); the reduce
    stage is single-threaded, so the outputs are identical for any job
    count.  Returns the records, the aggregate summary, and written paths.
    """
    validate_config(cfg)
    tasks = [(cfg, seed, T) for seed in cfg.seeds for T in cfg.horizons]
    records = []
    if jobs and int(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(int(jobs)) as pool:
            for rec in pool.map(_construct_task, tasks):
                records.append(rec)
                if progress:
                    progress(rec)
    else:
        Q = solve_ground_state(cfg.p, cfg.d)
        for seed in cfg.seeds:
            assembly = build_assembly(cfg, seed)
            for T in cfg.horizons:
                rec = construct_single(cfg, seed, T, assembly=assembly, Q=Q)
                records.append(rec)
                if progress:
                    progress(rec)
    summary = summarize_records(cfg, records)
    paths = []
    if write:
        out = resolve_outdir(cfg, outdir)
        for rec in records:
            paths.append(rec.save(os.path.join(out, record_name(rec))))
        spath = os.path.join(out, "summary.json")
        with open(spath, "w", encoding="utf-8") as fh:
            json.dump(_json_safe(summary), fh, sort_keys=True, indent=1)
            fh.write("\n")
        paths.append(spath)
    return {"records": records, "summary": summary, "paths": paths}


def run_forward_simulation(cfg: RunConfig, seed=None, t_start=1.0,
                           t_end=None) -> RunRecord:
    """Forward run from a soliton sum under the configured noise."""
    validate_config(cfg)
    seed = cfg.seeds[0] if seed is None else int(seed)
    t_end = cfg.horizons[0] if t_end is None else float(t_end)
    if not 0 < t_start < t_end:
        raise ConfigError("need 0 < start < end")
    if not _is_multiple(t_end - t_start, cfg.stride):
        raise ConfigError("the simulation span must sit on the sample mesh")
    if t_end > drive_horizon(cfg) and cfg.noise_case != "zero":
        raise ConfigError("simulation end exceeds the drive horizon")
    grid = build_grid(cfg)
    Q = solve_ground_state(cfg.p, cfg.d)
    specs = list(cfg.solitons)
    mode = config_mode(cfg)
    assembly = build_assembly(cfg, seed)
    mesh = sample_mesh(cfg, t_end, start=t_start)
    u0 = sum_of_solitons(Q, specs, t_start, grid)
    ecfg = EvolutionConfig(effective_variant(cfg), cfg.p, cfg.dt,
                           order=cfg.order)
    try:
        traj = evolve(u0, ecfg, (t_start, t_end), assembly, mesh)
    except BlowupError as exc:
        return _failure_record(cfg, seed, t_end, "forward-simulation",
                               "blowup", float(exc.t))
    try:
        records, states = record_stream(traj, Q, specs, mode, cfg.p,
                                        assembly=assembly)
    except (DecompositionLossError, ArithmeticError) as exc:
        rec = _failure_record(cfg, seed, t_end, "forward-simulation",
                              "decomposition-lost", None)
        rec.header["detail"] = str(exc)
        return rec
    arrays = _stream_arrays(cfg, specs, records, states)
    window = (t_start, t_end)
    fits = analyze_arrays(arrays, cfg.noise_case, window)
    ck = _checkpoint_indices(traj.times, t_start, cfg)
    arrays["checkpoint_times"] = np.array([traj.times[i] for i in ck])
    arrays["checkpoints"] = np.stack([traj.states[i].values for i in ck])
    header = _base_header(cfg, seed, t_end, "forward-simulation")
    header.update(status="ok", fail_t=None, t0=float(t_start),
                  window=[float(t_start), float(t_end)], fits=fits)
    return RunRecord(header, arrays)


# ---------------------------------------------------------------------------
# transform equivalence


def run_equivalence_study(cfg: RunConfig, dts=None, horizon=1.0, seed=None):
    """Two-route residual sweep plus gauge-identity spot checks.

    One noise realization drives every time step in the sweep (coarsest
    first; defaults to three halvings ending at cfg.dt); the residual
    between the directly-integrated equation and the gauge-removed route
    must contract under dt halving.  The pointwise moduli of the state and
    both gauge transforms agree to rounding because the gauge exponents are
    purely imaginary, and the direct route conserves mass per path.
    """
    validate_config(cfg)
    if cfg.noise_case == "zero":
        raise ConfigError("the equivalence sweep needs live noise; the "
                          "zero-noise residual is reported alongside")
    if dts is None:
        dts = (4.0 * cfg.dt, 2.0 * cfg.dt, cfg.dt)
    seed = cfg.seeds[0] if seed is None else int(seed)
    for dt in dts:
        if not _is_multiple(dt / 2.0, cfg.h_f):
            raise ConfigError(f"dt={dt} does not sit on the fine mesh")
        if not _is_multiple(horizon, dt):
            raise ConfigError(f"horizon is not a multiple of dt={dt}")
    need = horizon + cfg.pad
    H = math.ceil(need / cfg.coarse - 1e-9) * cfg.coarse
    drive = sample_drive(cfg.paths, H, cfg.h_f, cfg.coarse, seed)
    grid = build_grid(cfg)
    try:
        if cfg.noise_case == "I":
            geo = make_geometry("I", {"a": cfg.amp, "c": cfg.decay,
                                      "scale": cfg.scale}, cfg.paths, grid)
            g = make_temporal("I", {"lam": cfg.lam}, drive.times, cfg.paths)
        else:
            geo = make_geometry("II", {"a": cfg.amp, "upsilon": cfg.decay,
                                       "scale": cfg.scale}, cfg.paths, grid)
            g = make_temporal("II", {"power": cfg.power, "c_star": cfg.c_star},
                              drive.times, cfg.paths)
        assembly = NoiseAssembly(drive, geo, g, tail_tol=cfg.tail_tol)
    except (TemporalRejection, HorizonError, ValueError) as exc:
        raise ConfigError(str(exc)) from None

    Q = solve_ground_state(cfg.p, cfg.d)
    X0 = sum_of_solitons(Q, cfg.solitons, 0.0, grid)

    residuals = [equivalence_residual(X0, assembly, cfg.p, dt, horizon)
                 for dt in dts]
    ratios = [residuals[i] / residuals[i + 1]
              for i in range(len(residuals) - 1)]

    zero = NoiseAssembly(drive, geo,
                         make_temporal("zero", {}, drive.times, cfg.paths),
                         tail_tol=max(cfg.tail_tol, 1.0))
    zero_res = equivalence_residual(X0, zero, cfg.p, dts[-1], horizon)

    dt = dts[-1]
    n_steps = int(round(horizon / dt))
    every = max(1, n_steps // 8)
    samples = [i * every * dt for i in range(n_steps // every + 1)]
    samples[-1] = min(samples[-1], horizon)
    ecfg = EvolutionConfig("snls_direct", cfg.p, dt)
    traj = evolve(X0, ecfg, (0.0, horizon), assembly, samples)
    m0 = mass(X0)
    modulus_gap = 0.0
    mass_drift = 0.0
    for t, Xt in zip(traj.times, traj.states):
        absX = np.abs(Xt.values)
        v = doss_sussman(Xt, assembly.W(t).values)
        u = doss_sussman(Xt, assembly.W_star(t).values)
        modulus_gap = max(modulus_gap,
                          float(np.max(np.abs(absX - np.abs(v.values)))),
                          float(np.max(np.abs(absX - np.abs(u.values)))))
        mass_drift = max(mass_drift, abs(mass(Xt) - m0))
    return {"seed": seed, "horizon": horizon, "dts": list(dts),
            "residuals": residuals, "ratios": ratios,
            "zero_noise_residual": zero_res,
            "modulus_gap": modulus_gap,
            "mass_drift_abs": mass_drift,
            "mass_drift_rel": mass_drift / m0}
