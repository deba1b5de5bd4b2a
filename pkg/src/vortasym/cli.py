"""Command-line front end: runs, diagnostics, checks and reports.

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
``VORTASYM_THREADS`` caps the threads used by FFTs and BLAS (default 1).
"""

from __future__ import annotations

import os

_threads = os.environ.get("VORTASYM_THREADS", "1")
for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
    os.environ.setdefault(_var, _threads)

import argparse  # noqa: E402
import configparser  # noqa: E402
import csv  # noqa: E402
import hashlib  # noqa: E402
import io  # noqa: E402
import json  # noqa: E402
import math  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402
from pathlib import Path  # noqa: E402

import numpy as np  # noqa: E402

from . import __version__  # noqa: E402

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 2, 3
MANIFEST = "manifest.json"


class ConfigError(ValueError):
    pass


# ------------------------------------------------------------- config schema

def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(",", " ").split())


def _amplitude(text: str):
    return None if text.strip().lower() in ("none", "") else float(text)


# section -> key -> (RunConfig field, parser, default, description)
SCHEMA = {
    "grid": {
        "points_per_axis": ("n", int, 64, "samples per axis N (even)"),
        "half_width": ("half_width", float, 12.0, "box half-width L; the box is [-L, L)^3"),
    },
    "initial": {
        "field": ("initial", str, "random", "zero | basis:<expr> | random[:opts] | symmetric[:opts] | snapshot:<path>"),
        "amplitude": ("amplitude", _amplitude, 0.05, "target norm in L^2(m); 'none' keeps the raw field"),
        "seed": ("seed", int, 0, "seed of the random generators"),
    },
    "time": {
        "equation": ("equation", str, "sv3", "sv3 (rescaled variables) or v3 (physical variables)"),
        "scheme": ("scheme", str, "strang_exact_linear", "strang_exact_linear (sv3) or imex (v3)"),
        "dt": ("dt", float, 1e-3, "time step, in tau for sv3 and in t for v3"),
        "t_end": ("t_end", float, 1.0, "final time; t_end/dt must be an integer"),
    },
    "numerics": {
        "dealias": ("dealias", _bool, True, "2/3-rule truncation of the quadratic term"),
        "form": ("form", str, "rotational", "rotational or advective nonlinear term"),
        "cfl_limit": ("cfl_limit", float, 0.5, "largest accepted dt max|v| / h"),
        "blowup_factor": ("blowup_factor", float, 10.0, "abort when the weighted norm grows by this factor"),
    },
    "diagnostics": {
        "m": ("m", float, 4.0, "weight exponent of the monitored norm"),
        "diagnostics_stride": ("diagnostics_stride", int, 10, "steps between diagnostic samples"),
        "snapshot_stride": ("snapshot_stride", int, 0, "steps between stored fields (0: first and last only)"),
        "residual_weights": ("residual_weights", _floats, (4.0, 5.0), "weights m of the expansion residual pairings"),
        "symmetry_probe": ("symmetry_probe", _bool, False, "record symmetry residuals of v"),
    },
    "limits": {
        "smallness": ("smallness", float, 0.05, "largest accepted initial norm in L^2(m)"),
        "enforce_smallness": ("enforce_smallness", _bool, True, "reject data above the smallness threshold"),
    },
}


def documented_config() -> str:
    """Commented template listing every key with its default."""
    lines = []
    for section, keys in SCHEMA.items():
        lines.append(f"[{section}]")
        for key, (_, _, default, doc) in keys.items():
            if isinstance(default, tuple):
                default = " ".join(f"{x:g}" for x in default)
            lines.append(f"# {doc}")
            lines.append(f"{key} = {default}")
        lines.append("")
    return "\n".join(lines)


def parse_config(text: str):
    from .evolution import RunConfig

    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    unknown = []
    for section in parser.sections():
        if section not in SCHEMA:
            unknown.append(f"[{section}]")
            continue
        unknown.extend(f"{section}.{k}" for k in parser[section] if k not in SCHEMA[section])
    if unknown:
        raise ConfigError("unknown config keys: " + ", ".join(unknown))
    values = {}
    bad = []
    for section, keys in SCHEMA.items():
        for key, (attr, conv, default, _) in keys.items():
            if parser.has_option(section, key):
                try:
                    values[attr] = conv(parser[section][key])
                except ValueError as exc:
                    bad.append(f"{section}.{key}: {exc}")
            else:
                values[attr] = default
    if bad:
        raise ConfigError("invalid config values: " + "; ".join(bad))
    try:
        return RunConfig(**values)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def run_id_for(cfg) -> str:
    payload = json.dumps({"config": cfg.to_dict(), "version": __version__}, sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


# -------------------------------------------------------------- persistence

def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def atomic_write_text(path: Path, text: str):
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    tmp.replace(path)


def write_manifest(run_dir: Path, manifest: dict):
    atomic_write_text(run_dir / MANIFEST, json.dumps(manifest, sort_keys=True, indent=1) + "\n")


def load_manifest(run_dir: Path, verify: bool = True) -> dict:
    path = Path(run_dir) / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest in {run_dir}")
    manifest = json.loads(path.read_text())
    if verify:
        problems = verify_artifacts(Path(run_dir), manifest)
        if problems:
            raise ValueError("artifact check failed: " + "; ".join(problems))
    return manifest


def verify_artifacts(run_dir: Path, manifest: dict) -> list[str]:
    problems = []
    for art in manifest.get("artifacts", []):
        p = run_dir / art["path"]
        if not p.exists():
            problems.append(f"{art['path']}: missing")
        elif sha256_file(p) != art["sha256"]:
            problems.append(f"{art['path']}: checksum mismatch")
    return problems


def _artifact_list(run_dir: Path, names) -> list[dict]:
    return [{"path": n, "sha256": sha256_file(run_dir / n)} for n in sorted(names)]


def resolve_run(ref: str, registry: Path) -> Path:
    p = Path(ref)
    if (p / MANIFEST).exists():
        return p
    q = registry / ref
    if (q / MANIFEST).exists():
        return q
    raise FileNotFoundError(f"no run {ref!r} (looked in {p} and {q})")


# ---------------------------------------------------------------- commands

def cmd_simulate(args) -> int:
    from . import evolution as ev

    text = Path(args.config).read_text(encoding="utf-8")
    cfg = parse_config(text)
    run_id = run_id_for(cfg)
    run_dir = Path(args.registry) / run_id
    run_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"run_id": run_id, "version": __version__, "config": cfg.to_dict(), "status": "failed",
                "artifacts": [], "timings": {}, "message": ""}
    t0 = time.perf_counter()
    status = EXIT_OK
    try:
        traj = ev.run_sv3(cfg) if cfg.equation == "sv3" else ev.run_v3(cfg)
    except ev.NumericalAbort as exc:
        traj = exc.trajectory
        status = EXIT_ABORT
        manifest["message"] = str(exc)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    manifest["timings"]["run"] = time.perf_counter() - t0
    if traj is not None:
        names = traj.save(run_dir)
        manifest["artifacts"] = _artifact_list(run_dir, names)
        manifest["status"] = traj.status
        manifest["timings"].update(traj.timings)
    write_manifest(run_dir, manifest)
    print(json.dumps({"run_id": run_id, "status": manifest["status"], "directory": str(run_dir)}))
    return status


def _safe_fit(tau, values, window):
    from . import diagnostics as dg

    try:
        return dg.fit_decay_rate(tau, values, window)
    except ValueError:
        return float("nan"), float("nan")


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(header)
    for r in rows:
        wr.writerow([f"{x:.17e}" if isinstance(x, float) else x for x in r])
    return buf.getvalue()


def _num(x):
    if x is None:
        return None
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def diagnose_run(run_dir: Path, weights=(4.0, 5.0), window=(2.0, 5.0)) -> dict:
    """Write the diagnostic files of a run into run_dir/diagnostics; returns the report."""
    from . import diagnostics as dg
    from . import field_core as fc
    from .evolution import Trajectory

    manifest = load_manifest(run_dir)
    traj = Trajectory.load(run_dir)
    out_dir = run_dir / "diagnostics"
    out_dir.mkdir(exist_ok=True)
    partial = manifest["status"] != "completed"
    report = {"run_id": manifest["run_id"], "status": manifest["status"], "partial": partial,
              "equation": traj.equation, "samples": len(traj.times)}
    tau = np.asarray(traj.times)
    files = {}
    if traj.equation == "sv3" and len(tau) >= 3:
        cs = dg.coefficient_series(traj)
        report["ode_residuals"] = cs.max_residuals()
        report["ode_residuals_relative"] = cs.relative_max()
        cols = dg.MOMENT_COLUMNS + [f"src_zeta{p}" for p in dg.PAIR_NAMES]
        rows = [[float(tau[k])] + [float(x) for x in np.concatenate([cs.beta[k], cs.gamma[k], cs.zeta[k], cs.sources[k]])]
                for k in range(len(tau))]
        files["moments.csv"] = _csv_text(["tau"] + cols, rows)
        coeffs = dg.asymptotic_coefficients(traj)
        report["coefficients"] = coeffs.to_dict()
        fits = {}
        for m in weights:
            key = f"norm_m{m:g}"
            if key in traj.series:
                fits[key] = _safe_fit(tau, traj.column(key), window)
            for order in (1, 2):
                try:
                    res = dg.expansion_residual(traj, order, m, coeffs, window)
                except ValueError:
                    continue
                fits[f"residual_order{order}_m{m:g}"] = (res.w_slope, res.w_stderr)
                fits[f"velocity_residual_order{order}"] = (res.v_slope, res.v_stderr)
                files[f"residual_order{order}_m{m:g}.csv"] = _csv_text(
                    ["tau", "w_residual", "v_residual"],
                    [[float(t), float(a), float(b)] for t, a, b in zip(res.tau, res.w_residual, res.v_residual)])
        report["fits"] = {k: {"slope": v[0], "stderr": v[1]} for k, v in fits.items()}
        report["fit_window"] = list(window)
        report["identities_max"] = {k: float(np.max(traj.column(k))) for k in ("id_zeroth", "id_first", "id_second")}
    if traj.snapshots:
        t_last, f_last = traj.snapshots[-1]
        r, prof = fc.radial_profile(f_last)
        files["radial_profile_last.csv"] = _csv_text(["radius", "mean_magnitude"], [[float(a), float(b)] for a, b in zip(r, prof)])
        report["last_snapshot_time"] = t_last
    for name, text in files.items():
        atomic_write_text(out_dir / name, text)
    report["files"] = sorted(files) + ["report.json"]
    atomic_write_text(out_dir / "report.json", json.dumps(_clean(report), sort_keys=True, indent=1) + "\n")
    return report


def cmd_diagnose(args) -> int:
    registry = Path(args.registry)
    run_dir = resolve_run(args.run, registry)
    report = diagnose_run(run_dir, tuple(args.m), tuple(args.window))
    print(json.dumps({"run_id": report["run_id"], "partial": report["partial"], "files": report["files"]}))
    return EXIT_OK


def cmd_basis_check(args) -> int:
    from . import eigenbasis as eb
    from . import field_core as fc

    grid = fc.Grid3(args.n, args.half_width)
    rows = []
    duals = ({"f", "p"}, {"g", "q"}, {"h", "r"})
    for primal, dual in (("f", "p"), ("g", "q"), ("h", "r"), ("g", "r"), ("h", "q"), ("g", "p")):
        gm = eb.gram_matrix(primal, dual, grid)
        target = np.eye(gm.shape[0]) if {primal, dual} in duals else np.zeros_like(gm)
        rows.append(["gram_max_deviation", f"{dual}-{primal}", float(np.max(np.abs(gm - target)))])
        for a, da in enumerate(eb.family_labels(dual)):
            for b, pb in enumerate(eb.family_labels(primal)):
                rows.append(["gram_entry", f"{da}.{pb}", float(gm[a, b])])
    for fam in ("f", "g", "h"):
        for lb in eb.family_labels(fam):
            rows.append(["eigen_residual", str(lb), float(eb.eigen_residual(lb, grid))])
    for fam in ("p", "q", "r"):
        for lb in eb.family_labels(fam):
            rows.append(["adjoint_eigen_residual", str(lb), float(eb.adjoint_eigen_residual(lb, grid))])
    rows.append(["paired_gram_determinant", "qr-gh", float(np.linalg.det(eb.paired_gram(grid)))])
    _emit(_csv_text(["quantity", "label", "value"], rows), args.output)
    return EXIT_OK


def cmd_semigroup_check(args) -> int:
    from . import eigenbasis as eb
    from . import field_core as fc
    from . import generators
    from . import linear_semigroup as ls

    grid = fc.Grid3(args.n, args.half_width)
    rows = []
    for lb in ("f1", "g1", "h12"):
        f = eb.sample_basis(lb, grid)
        lam = eb.EIGENVALUES[lb[0]]
        for tau in args.taus:
            g = ls.apply_lambda_semigroup(f, tau, check=False)
            err = (g - f * math.exp(lam * tau)).max_abs() / f.max_abs()
            rows.append([lb, float(tau), float(fc.weighted_norm(g, args.m)), float(math.exp(lam * tau) * fc.weighted_norm(f, args.m)), float(err)])
    w = generators.random_solenoidal(grid, args.seed)
    rem = ls.spectral_split(w, 1, args.m).remainder
    for tau in args.taus:
        g = ls.apply_lambda_semigroup(rem, tau, check=False)
        rows.append(["W1-remainder", float(tau), float(fc.weighted_norm(g, args.m)), float("nan"), float("nan")])
    _emit(_csv_text(["field", "tau", "weighted_norm", "predicted_norm", "max_relative_error"], rows), args.output)
    return EXIT_OK


def cmd_manifold_test(args) -> int:
    from . import manifold as mf
    from .evolution import Trajectory

    run_dir = resolve_run(args.run, Path(args.registry))
    load_manifest(run_dir)
    traj = Trajectory.load(run_dir)
    verdict = mf.strong_stable_test(traj, args.m, args.tol, tuple(args.window), args.margin)
    ms = mf.miyakawa_schonbek_conditions(traj, args.tol)
    out = {"strong_stable": verdict.to_dict(), "miyakawa_schonbek": ms.to_dict()}
    if ms.applicable and ms.verdict is not None and verdict.verdict is not None:
        out["miyakawa_schonbek"]["agrees_with_strong_stable"] = ms.verdict == verdict.verdict
    _emit(json.dumps(_clean(out), sort_keys=True, indent=1) + "\n", args.output)
    return EXIT_OK


def cmd_hls_sample(args) -> int:
    from . import diagnostics as dg

    try:
        rep = dg.weighted_bs_sampler(args.m, args.regime, args.count, args.seed, args.n, args.half_width)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    _emit(json.dumps(_clean(rep.to_dict()), sort_keys=True, indent=1) + "\n", args.output)
    return EXIT_OK


THEORY_RATES = {"beta": -1.0, "gamma_zeta": -1.5}


def report_rows(run_dirs, window=(2.0, 5.0)):
    from .evolution import Trajectory

    rows = []
    for run_dir in run_dirs:
        manifest = load_manifest(run_dir)
        traj = Trajectory.load(run_dir)
        cfg = manifest["config"]
        m = float(cfg["m"])
        key = f"norm_m{m:g}"
        tau = np.asarray(traj.times)
        slope = float("nan")
        if key in traj.series:
            slope = _safe_fit(tau, traj.column(key), window)[0]
        rows.append({
            "run_id": manifest["run_id"],
            "status": manifest["status"],
            "initial": cfg["initial"],
            "m": m,
            "fitted_exponent": slope,
            "theory_first_order": THEORY_RATES["beta"],
            "theory_second_order": THEORY_RATES["gamma_zeta"],
            "continuous_spectrum_edge": 0.25 - m / 2.0,
        })
    return rows


def cmd_report(args) -> int:
    if not args.runs:
        raise ConfigError("report needs at least one run")
    registry = Path(args.registry)
    dirs = [resolve_run(r, registry) for r in args.runs]
    rows = report_rows(dirs, tuple(args.window))
    header = list(rows[0])
    table = _csv_text(header, [[r[h] for h in header] for r in rows])
    if args.output:
        atomic_write_text(Path(args.output), table)
    width = max(len(r["initial"]) for r in rows)
    print(f"{'run_id':16}  {'initial':{width}}  {'m':>4}  {'exponent':>9}  {'edge':>6}")
    for r in rows:
        print(f"{r['run_id']:16}  {r['initial']:{width}}  {r['m']:4g}  {r['fitted_exponent']:9.4f}  {r['continuous_spectrum_edge']:6.2f}")
    return EXIT_OK


def _emit(text: str, output):
    if output:
        atomic_write_text(Path(output), text)
    else:
        sys.stdout.write(text)


# ------------------------------------------------------------------ parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="vortasym", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--registry", default="runs", help="directory holding one subdirectory per run (default: runs)")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="run a configured simulation")
    s.add_argument("config", help="INI-style configuration file")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("config-template", help="print a documented configuration")
    s.set_defaults(func=lambda a: (sys.stdout.write(documented_config()), EXIT_OK)[1])

    s = sub.add_parser("diagnose", help="moments, coefficients and residual fits of a run")
    s.add_argument("run", help="run directory or run id")
    s.add_argument("--m", type=float, nargs="+", default=[4.0, 5.0])
    s.add_argument("--window", type=float, nargs=2, default=[2.0, 5.0])
    s.set_defaults(func=cmd_diagnose)

    s = sub.add_parser("basis-check", help="Gram matrices and eigen residuals of the slow eigenfields")
    s.add_argument("--n", type=int, default=96)
    s.add_argument("--half-width", type=float, default=12.0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_basis_check)

    s = sub.add_parser("semigroup-check", help="decay table of the linear semigroup (CSV)")
    s.add_argument("--n", type=int, default=64)
    s.add_argument("--half-width", type=float, default=12.0)
    s.add_argument("--m", type=float, default=4.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--taus", type=float, nargs="+", default=[0.5, 1.0, 2.0, 3.0, 4.0])
    s.add_argument("--output")
    s.set_defaults(func=cmd_semigroup_check)

    s = sub.add_parser("manifold-test", help="strong-stable verdicts of a run (JSON)")
    s.add_argument("run")
    s.add_argument("--m", type=float, default=5.0)
    s.add_argument("--tol", type=float, default=1e-2)
    s.add_argument("--margin", type=float, default=0.25)
    s.add_argument("--window", type=float, nargs=2, default=[2.0, 5.0])
    s.add_argument("--output")
    s.set_defaults(func=cmd_manifold_test)

    s = sub.add_parser("hls-sample", help="weighted Biot-Savart ratio under box doubling")
    s.add_argument("--m", type=float, required=True)
    s.add_argument("--regime", type=int, required=True, choices=[1, 2, 3, 4])
    s.add_argument("--count", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--n", type=int, default=32)
    s.add_argument("--half-width", type=float, default=8.0)
    s.add_argument("--output")
    s.set_defaults(func=cmd_hls_sample)

    s = sub.add_parser("report", help="cross-run table of fitted exponents")
    s.add_argument("runs", nargs="*")
    s.add_argument("--window", type=float, nargs=2, default=[2.0, 5.0])
    s.add_argument("--output")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return int(args.func(args))
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
