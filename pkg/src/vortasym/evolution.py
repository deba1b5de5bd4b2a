"""Time integration of the rescaled vorticity equation and of the physical one.

The rescaled equation dw/dtau = Lambda w + rot(v x w) is advanced by Strang
splitting: the linear flow exp(s Lambda) is applied exactly (separable
heat-plus-dilation matrices, see ``linear_semigroup``) and the quadratic term
by a dealiased Heun step in Fourier space.  The drift xi . grad is never
differenced.  The physical equation d omega/dt = Delta omega + rot(u x omega)
uses an integrating factor for the heat part and serves as an independent
oracle through ``change_variables``.
"""

from __future__ import annotations

import csv
import io
import json
import math
import re
import time as _time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import _backend
from . import biot_savart as bs
from . import eigenbasis as eb
from . import field_core as fc
from . import generators
from . import linear_semigroup as ls
from .diagnostics import Probe

SCHEMES = ("strang_exact_linear", "imex")
EQUATIONS = ("sv3", "v3")
FORMS = ("rotational", "advective")
TRAJECTORY_FORMAT = "vortasym-trajectory-v1"


class StepRejected(RuntimeError):
    """The stability monitor refused the requested step size."""


class NumericalAbort(RuntimeError):
    """The run was stopped; ``trajectory`` holds everything up to the failure."""

    def __init__(self, message: str, trajectory=None):
        super().__init__(message)
        self.trajectory = trajectory


# ------------------------------------------------------------------- config

@dataclass
class RunConfig:
    n: int = 64
    half_width: float = 12.0
    initial: str = "random"
    amplitude: float | None = 0.05
    dt: float = 1e-3
    t_end: float = 1.0
    m: float = 4.0
    equation: str = "sv3"
    scheme: str = "strang_exact_linear"
    form: str = "rotational"
    dealias: bool = True
    diagnostics_stride: int = 10
    snapshot_stride: int = 0
    seed: int = 0
    smallness: float = 0.05
    enforce_smallness: bool = True
    cfl_limit: float = 0.5
    blowup_factor: float = 10.0
    residual_weights: tuple = (4.0, 5.0)
    symmetry_probe: bool = False
    dt_tolerance: float = 1e-9

    def __post_init__(self):
        self.residual_weights = tuple(float(m) for m in self.residual_weights)
        self.validate()

    @property
    def grid(self) -> fc.Grid3:
        return fc.Grid3(int(self.n), float(self.half_width))

    @property
    def steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def validate(self):
        errs = []
        if self.equation not in EQUATIONS:
            errs.append(f"equation must be one of {EQUATIONS}")
        if self.scheme not in SCHEMES:
            errs.append(f"scheme must be one of {SCHEMES}")
        if self.form not in FORMS:
            errs.append(f"form must be one of {FORMS}")
        if not self.dt > 0:
            errs.append("dt must be positive")
        if self.t_end < 0:
            errs.append("t_end must be nonnegative")
        elif self.dt > 0 and abs(self.t_end / self.dt - round(self.t_end / self.dt)) > self.dt_tolerance * max(1.0, self.t_end / self.dt):
            errs.append("t_end/dt must be an integer")
        if self.diagnostics_stride < 1:
            errs.append("diagnostics_stride must be a positive integer")
        if self.snapshot_stride < 0:
            errs.append("snapshot_stride must be nonnegative")
        if self.m < 0:
            errs.append("weight m must be nonnegative")
        if errs:
            raise ValueError("; ".join(errs))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["residual_weights"] = list(self.residual_weights)
        return d


# ----------------------------------------------------------- initial fields

_BASIS_TERM = re.compile(r"^\s*(?:([-+]?[0-9.eE+-]+)\s*\*\s*)?([fgh][0-9]+)\s*$")


def _basis_expression(expr: str, grid: fc.Grid3) -> fc.VectorFieldR:
    """Parse 'f1', '0.5*g2 + h12', '-1e-3*h23' into a sampled eigenfield sum."""
    out = fc.VectorFieldR.zeros(grid)
    terms = re.split(r"(?<![eE*])\+|(?<![eE*])(?=-)", expr.replace(" ", ""))
    for term in filter(None, terms):
        mt = _BASIS_TERM.match(term)
        if not mt:
            raise ValueError(f"cannot parse basis term {term!r}")
        coef = float(mt.group(1)) if mt.group(1) else 1.0
        out = out + eb.sample_basis(mt.group(2), grid) * coef
    return out


def _options(spec: str) -> tuple[str, dict]:
    head, _, rest = spec.partition(":")
    opts = {}
    for item in filter(None, rest.split(",")):
        key, eq, val = item.partition("=")
        if not eq:
            raise ValueError(f"initial option {item!r} must look like key=value")
        opts[key.strip()] = val.strip()
    return head.strip(), opts


def make_initial(cfg: RunConfig) -> fc.VectorFieldR:
    """Initial vorticity from the ``initial`` string of a config.

    zero | basis:<expr> | random[:width=,smoothing=,laplacian=,split=] |
    symmetric[:width=,smoothing=] | snapshot:<path>.  Unless ``amplitude``
    is None the field is scaled to that norm in L^2(m).
    """
    grid = cfg.grid
    spec = cfg.initial.strip()
    if spec == "zero":
        return fc.VectorFieldR.zeros(grid)
    if spec.startswith("basis:"):
        w = _basis_expression(spec[len("basis:"):], grid)
    elif spec.startswith("snapshot:"):
        w, _ = fc.load_snapshot(spec[len("snapshot:"):])
        if w.grid != grid:
            raise ValueError(f"snapshot grid {w.grid} does not match the configured grid {grid}")
    else:
        head, opts = _options(spec)
        width = float(opts.pop("width", 1.5))
        smoothing = float(opts.pop("smoothing", 1.0))
        if head == "random":
            lap = int(opts.pop("laplacian", 0))
            split = int(opts.pop("split", -1))
            w = generators.random_solenoidal(grid, cfg.seed, width, smoothing, lap)
            if split >= 0:
                w = ls.spectral_split(w, split, max(cfg.m, split + 2.0)).remainder
        elif head == "symmetric":
            from .manifold import make_symmetric_field

            _, w = make_symmetric_field(cfg.seed, grid, width=width, smoothing=smoothing)
        else:
            raise ValueError(f"unknown initial field {spec!r}")
        if opts:
            raise ValueError(f"unknown initial options: {sorted(opts)}")
    if cfg.amplitude is not None:
        norm = fc.weighted_norm(w, cfg.m)
        if norm > 0:
            w = w * (cfg.amplitude / norm)
    return w


# --------------------------------------------------------------- nonlinearity

def _nonlinear_hat(w_hat: np.ndarray, grid: fc.Grid3, mask: np.ndarray, form: str = "rotational",
                   monitor=None) -> np.ndarray:
    """Fourier coefficients of rot(v x w) (or its advective form), masked.

    ``monitor``, if given, is called with the physical velocity before use.
    """
    wm = w_hat * mask
    v_hat = bs.velocity_hat(wm, grid)
    n = grid.n
    w = fc.inverse(wm, n)
    v = fc.inverse(v_hat, n)
    if monitor is not None:
        monitor(v)
    if form == "rotational":
        prod = np.empty_like(w)
        _backend.cross(v, w, prod)
        return bs.curl_hat(fc.forward(prod), grid, mask=mask)
    ks = bs._ks(grid)
    out = np.zeros_like(w_hat)
    # (w . grad) v - (v . grad) w
    for j, k in enumerate(ks):
        dv = fc.inverse(1j * k * v_hat, n)
        dw = fc.inverse(1j * k * wm, n)
        out += fc.forward(w[j] * dv - v[j] * dw)
    return out * mask


def nonlinear_term(w: fc.VectorFieldR, form: str = "rotational", dealias: bool = True) -> fc.VectorFieldR:
    """rot(v x w) with v the Biot-Savart velocity of w, dealiased."""
    grid = w.grid
    mask = grid.dealias_mask if dealias else grid.nyquist_free
    return fc.VectorFieldR(grid, fc.inverse(_nonlinear_hat(fc.forward(w.data), grid, mask, form), grid.n))


# ------------------------------------------------------------------- stepper

class StrangStepper:
    """Strang splitting for the rescaled equation on a fixed grid and step."""

    def __init__(self, grid: fc.Grid3, dt: float, dealias: bool = True, form: str = "rotational",
                 cfl_limit: float = 0.5):
        self.grid = grid
        self.dt = float(dt)
        self.form = form
        self.mask = grid.dealias_mask if dealias else grid.nyquist_free
        self.cfl_limit = cfl_limit
        self.half = ls.lambda_matrix(grid, 0.5 * dt)
        self.full = ls.lambda_matrix(grid, dt)
        self.half_gain = math.exp(0.5 * dt)
        self.full_gain = math.exp(dt)
        self.last_cfl = 0.0

    def linear(self, data: np.ndarray, full: bool) -> np.ndarray:
        mat, gain = (self.full, self.full_gain) if full else (self.half, self.half_gain)
        return ls.apply_separable(data, mat) * gain

    def nonlinear(self, data: np.ndarray) -> np.ndarray:
        """Heun step of length dt for dw/dtau = rot(v x w); returns physical samples."""
        grid, dt, mask = self.grid, self.dt, self.mask
        w_hat = fc.forward(data)
        w_hat[:, 0, 0, 0] = 0.0
        k1 = _nonlinear_hat(w_hat, grid, mask, self.form, monitor=self._check_cfl)
        k2 = _nonlinear_hat(w_hat + dt * k1, grid, mask, self.form)
        out = w_hat + (0.5 * dt) * (k1 + k2)
        out = bs.leray_hat(out, grid)
        out[:, 0, 0, 0] = 0.0
        return fc.inverse(out, grid.n)

    def _check_cfl(self, v):
        vmax = math.sqrt(float(np.max(np.sum(v * v, axis=0))))
        self.last_cfl = self.dt * vmax / self.grid.spacing
        if self.last_cfl > self.cfl_limit:
            raise StepRejected(f"CFL number {self.last_cfl:.3g} exceeds {self.cfl_limit:g}; reduce dt")

    def advance(self, data: np.ndarray, steps: int) -> np.ndarray:
        """``steps`` Strang steps with interior half-steps fused into full ones."""
        if steps <= 0:
            return data
        data = self.linear(data, full=False)
        for s in range(steps):
            data = self.nonlinear(data)
            data = self.linear(data, full=s < steps - 1)
        return data


def step_sv3(w: fc.VectorFieldR, dtau: float, dealias: bool = True, form: str = "rotational",
             cfl_limit: float = 0.5) -> fc.VectorFieldR:
    """One Strang step: exp(dtau/2 Lambda), Heun nonlinear, exp(dtau/2 Lambda)."""
    if not dtau > 0:
        raise ValueError("dtau must be positive")
    st = StrangStepper(w.grid, dtau, dealias, form, cfl_limit)
    return fc.VectorFieldR(w.grid, st.advance(w.data, 1))


class HeatStepper:
    """Integrating-factor Heun scheme for d omega/dt = Delta omega + rot(u x omega)."""

    def __init__(self, grid: fc.Grid3, dealias: bool = True, form: str = "rotational", cfl_limit: float = 0.5):
        self.grid = grid
        self.form = form
        self.mask = grid.dealias_mask if dealias else grid.nyquist_free
        self.cfl_limit = cfl_limit
        self._factor = {}

    def factor(self, dt: float) -> np.ndarray:
        key = float(dt)
        if key not in self._factor:
            self._factor[key] = np.exp(-key * self.grid.k2)
        return self._factor[key]

    def step_hat(self, w_hat: np.ndarray, dt: float) -> np.ndarray:
        grid, mask = self.grid, self.mask
        def cfl(v):
            vmax = math.sqrt(float(np.max(np.sum(v * v, axis=0))))
            if dt * vmax / grid.spacing > self.cfl_limit:
                raise StepRejected(f"CFL number {dt * vmax / grid.spacing:.3g} exceeds {self.cfl_limit:g}; reduce dt")

        E = self.factor(dt)
        k1 = _nonlinear_hat(w_hat, grid, mask, self.form, monitor=cfl)
        pred = E * (w_hat + dt * k1)
        k2 = _nonlinear_hat(pred, grid, mask, self.form)
        out = E * (w_hat + 0.5 * dt * k1) + 0.5 * dt * k2
        out = bs.leray_hat(out, grid)
        out[:, 0, 0, 0] = 0.0
        return out


# ----------------------------------------------------------------- trajectory

@dataclass
class Trajectory:
    grid: fc.Grid3
    equation: str = "sv3"
    times: list = field(default_factory=list)
    series: dict = field(default_factory=dict)
    snapshots: list = field(default_factory=list)
    grams: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    status: str = "completed"
    message: str = ""
    timings: dict = field(default_factory=dict)

    def record(self, t: float, row: dict):
        self.times.append(float(t))
        for key, val in row.items():
            self.series.setdefault(key, []).append(float(val))

    def column(self, name: str) -> np.ndarray:
        return np.asarray(self.series[name], dtype=float)

    @property
    def columns(self) -> list[str]:
        return list(self.series)

    def series_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        cols = self.columns
        wr.writerow(["time"] + cols)
        for k, t in enumerate(self.times):
            wr.writerow([f"{t:.17e}"] + [f"{self.series[c][k]:.17e}" for c in cols])
        return buf.getvalue()

    def save(self, directory) -> dict:
        """Write series CSV, snapshots and metadata; returns {relative path: sha256 input bytes}."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        written = {}
        written["series.csv"] = _atomic_write(directory / "series.csv", self.series_csv().encode())
        snap_names = []
        for k, (t, f) in enumerate(self.snapshots):
            name = f"snapshot_{k:04d}.npz"
            fc.save_snapshot(directory / name, f, time=t)
            snap_names.append({"file": name, "time": t})
            written[name] = None
        meta = {
            "format": TRAJECTORY_FORMAT,
            "equation": self.equation,
            "points_per_axis": self.grid.n,
            "half_width": self.grid.half_width,
            "status": self.status,
            "message": self.message,
            "snapshots": snap_names,
            "grams": self.grams,
            "config": self.config,
        }
        written["trajectory.json"] = _atomic_write(
            directory / "trajectory.json", json.dumps(meta, sort_keys=True, indent=1).encode())
        return written

    @classmethod
    def load(cls, directory) -> "Trajectory":
        directory = Path(directory)
        meta = json.loads((directory / "trajectory.json").read_text())
        if meta.get("format") != TRAJECTORY_FORMAT:
            raise ValueError(f"{directory}: not a {TRAJECTORY_FORMAT} directory")
        grid = fc.Grid3(int(meta["points_per_axis"]), float(meta["half_width"]))
        traj = cls(grid, meta["equation"], grams=meta["grams"], config=meta["config"],
                   status=meta["status"], message=meta.get("message", ""))
        with open(directory / "series.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        header = rows[0]
        data = np.array([[float(x) for x in r] for r in rows[1:]]) if len(rows) > 1 else np.zeros((0, len(header)))
        traj.times = data[:, 0].tolist()
        traj.series = {name: data[:, j + 1].tolist() for j, name in enumerate(header[1:])}
        for item in meta["snapshots"]:
            f, _ = fc.load_snapshot(directory / item["file"])
            traj.snapshots.append((float(item["time"]), f))
        return traj


def _atomic_write(path: Path, payload: bytes):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(payload)
    tmp.replace(path)


# ---------------------------------------------------------------------- runs

def _check_smallness(cfg: RunConfig, w0: fc.VectorFieldR):
    norm = fc.weighted_norm(w0, cfg.m)
    if cfg.enforce_smallness and norm > cfg.smallness * (1.0 + 1e-12):
        raise ValueError(
            f"initial norm {norm:.4g} in L^2(m={cfg.m:g}) exceeds the smallness threshold {cfg.smallness:g}")
    return norm


def _snapshot_due(cfg: RunConfig, step: int, total: int) -> bool:
    if step == 0 or step == total:
        return True
    return cfg.snapshot_stride > 0 and step % cfg.snapshot_stride == 0


def run_sv3(cfg: RunConfig, w0: fc.VectorFieldR | None = None, probe: Probe | None = None) -> Trajectory:
    """Integrate the rescaled equation; diagnostics every ``diagnostics_stride`` steps.

    Time stamps are exact multiples of dt.  If the norm grows by
    ``blowup_factor`` the run stops with ``NumericalAbort``; its trajectory
    ends with the offending state.
    """
    if cfg.equation != "sv3":
        raise ValueError("run_sv3 needs equation = 'sv3'")
    grid = cfg.grid
    w0 = make_initial(cfg) if w0 is None else w0
    if w0.grid != grid:
        raise ValueError("initial field grid does not match the configuration")
    norm0 = _check_smallness(cfg, w0)
    probe = probe or Probe(grid, weights=(0.0, cfg.m), residual_weights=cfg.residual_weights,
                           symmetry=cfg.symmetry_probe)
    traj = Trajectory(grid, "sv3", grams=probe.gram_payload(), config=cfg.to_dict())
    stepper = StrangStepper(grid, cfg.dt, cfg.dealias, cfg.form, cfg.cfl_limit)
    total = cfg.steps
    stride = cfg.diagnostics_stride
    t0 = _time.perf_counter()
    data = np.array(w0.data, copy=True)
    traj.record(0.0, probe.measure(data))
    traj.snapshots.append((0.0, fc.VectorFieldR(grid, data.copy())))
    step = 0
    limit = cfg.blowup_factor * max(norm0, 1e-300)
    probe_time = 0.0
    while step < total:
        chunk = min(stride, total - step)
        if cfg.snapshot_stride > 0:
            nxt = (step // cfg.snapshot_stride + 1) * cfg.snapshot_stride
            chunk = min(chunk, nxt - step)
        try:
            data = stepper.advance(data, chunk)
        except StepRejected as exc:
            traj.status = "aborted"
            traj.message = str(exc)
            traj.snapshots.append((step * cfg.dt, _raw(grid, data)))
            raise NumericalAbort(str(exc), traj) from exc
        step += chunk
        t = step * cfg.dt
        if not np.all(np.isfinite(data)):
            traj.status = "aborted"
            traj.message = f"non-finite values at tau={t:.6g}"
            raise NumericalAbort(traj.message, traj)
        if step % stride == 0 or step == total:
            p0 = _time.perf_counter()
            row = probe.measure(data)
            probe_time += _time.perf_counter() - p0
            traj.record(t, row)
            if norm0 > 0 and row[f"norm_m{cfg.m:g}"] > limit:
                traj.status = "aborted"
                traj.message = f"norm grew beyond {cfg.blowup_factor:g}x its initial value at tau={t:.6g}"
                traj.snapshots.append((t, fc.VectorFieldR(grid, data.copy())))
                raise NumericalAbort(traj.message, traj)
        if _snapshot_due(cfg, step, total):
            traj.snapshots.append((t, fc.VectorFieldR(grid, data.copy())))
    traj.timings = {"integrate": _time.perf_counter() - t0 - probe_time, "diagnostics": probe_time}
    return traj


def _raw(grid, data):
    return fc.VectorFieldR(grid, np.nan_to_num(data, nan=0.0, posinf=0.0, neginf=0.0))


def run_v3(cfg: RunConfig, w0: fc.VectorFieldR | None = None, output_times=None, probe: Probe | None = None) -> Trajectory:
    """Integrate the physical-variable equation with steps dt.

    ``output_times`` (optional, increasing) adds exact sampling instants:
    the step is shortened to land on each of them.  Snapshots are stored at
    every output time, diagnostics at the stride and at output times.
    """
    if cfg.equation != "v3":
        raise ValueError("run_v3 needs equation = 'v3'")
    grid = cfg.grid
    w0 = make_initial(cfg) if w0 is None else w0
    norm0 = _check_smallness(cfg, w0)
    probe = probe or Probe(grid, weights=(0.0, cfg.m), residual_weights=(), symmetry=cfg.symmetry_probe, pairings=False)
    traj = Trajectory(grid, "v3", grams={}, config=cfg.to_dict())
    stepper = HeatStepper(grid, cfg.dealias, cfg.form, cfg.cfl_limit)
    total = cfg.steps
    targets = sorted(float(t) for t in (output_times or []) if 0.0 < float(t) <= cfg.t_end + 1e-12)
    w_hat = fc.forward(w0.data)
    w_hat[:, 0, 0, 0] = 0.0
    traj.record(0.0, probe.measure(w0.data, w_hat))
    traj.snapshots.append((0.0, fc.VectorFieldR(grid, w0.data.copy())))
    limit = cfg.blowup_factor * max(norm0, 1e-300)
    t = 0.0
    t0 = _time.perf_counter()
    ti = 0
    for step in range(1, total + 1):
        t_next = step * cfg.dt
        while ti < len(targets) and targets[ti] <= t_next + 1e-14:
            tgt = targets[ti]
            if tgt - t > 1e-14:
                w_hat = _v3_step(stepper, w_hat, tgt - t, traj)
                t = tgt
            data = fc.inverse(w_hat, grid.n)
            traj.record(t, probe.measure(data, w_hat))
            traj.snapshots.append((t, fc.VectorFieldR(grid, data)))
            ti += 1
        if t_next - t > 1e-14:
            w_hat = _v3_step(stepper, w_hat, t_next - t, traj)
        t = t_next
        if step % cfg.diagnostics_stride == 0 or step == total:
            data = fc.inverse(w_hat, grid.n)
            row = probe.measure(data, w_hat)
            if not (traj.times and abs(traj.times[-1] - t) < 1e-14):
                traj.record(t, row)
            if norm0 > 0 and row[f"norm_m{cfg.m:g}"] > limit:
                traj.status = "aborted"
                traj.message = f"norm grew beyond {cfg.blowup_factor:g}x its initial value at t={t:.6g}"
                raise NumericalAbort(traj.message, traj)
            if step == total and abs(traj.snapshots[-1][0] - t) > 1e-14:
                traj.snapshots.append((t, fc.VectorFieldR(grid, data)))
    traj.timings = {"integrate": _time.perf_counter() - t0}
    return traj


def _v3_step(stepper: HeatStepper, w_hat, dt, traj):
    try:
        out = stepper.step_hat(w_hat, dt)
    except StepRejected as exc:
        traj.status = "aborted"
        traj.message = str(exc)
        raise NumericalAbort(str(exc), traj) from exc
    if not np.all(np.isfinite(out)):
        traj.status = "aborted"
        traj.message = "non-finite values"
        raise NumericalAbort(traj.message, traj)
    return out


# --------------------------------------------------------- change of variables

def change_variables(omega: fc.VectorFieldR, t: float, check: bool = True) -> fc.VectorFieldR:
    """w(xi) = (1 + t) omega(xi sqrt(1 + t)) at tau = log(1 + t)."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return fc.VectorFieldR(omega.grid, omega.data.copy())
    s = math.sqrt(1.0 + t)
    return ls.dilate(omega, s, check=check) * (1.0 + t)


def inverse_change_variables(w: fc.VectorFieldR, t: float, check: bool = True) -> fc.VectorFieldR:
    """omega(x) = (1 + t)^{-1} w(x / sqrt(1 + t))."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return fc.VectorFieldR(w.grid, w.data.copy())
    s = math.sqrt(1.0 + t)
    return ls.dilate(w, 1.0 / s, check=check) / (1.0 + t)


def physical_time(tau: float) -> float:
    return math.expm1(tau)


def rescaled_time(t: float) -> float:
    return math.log1p(t)
