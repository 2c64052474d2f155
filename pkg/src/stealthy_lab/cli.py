"""Command-line entry point: ``stealthy-lab <command> [options]``.

Every command reads an optional JSON config (``--config``), lets flags
override its keys, runs a seeded experiment, writes ``<command>.json`` (and
CSV series with ``--format csv|both``) into ``--out``, and exits 0 if all of
its acceptance predicates pass, 1 if one fails (named on stderr) and 2 on a
usage error.
"""

import argparse
import csv
import datetime as _dt
import hashlib
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .errors import StealthyLabError
from .gaussian import (FieldRealization, GaussianSpec, sample_field_array, write_field_binary,
                       write_field_csv)
from .lattice import TorusGeometry
from .points import ball_gap, generate_stealthy, read_points_csv, write_points_csv
from .rigidity import (BallSplit, WindowSplit, ecf_on_torus, exact_ecf, invert_ecf_to_points,
                       multi_indices_up_to, plant_configuration, reconstruct_field_inside,
                       recover_inside_moments, torus_theta_grid)
from .statistics import (anticoncentration_audit, empirical_variance, find_largest_hole,
                         hole_bound, stationarity_check, variance_decay_fit,
                         variance_of_linear_statistic, verify_hole)
from .structure import FAMILIES, GapRegion, StructureFunction
from .testfunctions import anticonc_phi, build_bump_pair


class UsageError(Exception):
    pass


# defaults per command; config keys and flags use the same names
DEFAULTS = {
    "sample-field": dict(d=1, n=64, box_length=None, family="stealthy_flat",
                         parameters={"b": 0.5}, count=100, write_fields=0),
    "gen-points": dict(d=1, N=64, box_length=32.0, b=0.5, count=1),
    "verify-linstat": dict(target="field", d=1, n=64, box_length=None, family="stealthy_flat",
                           parameters={"b": 1.0}, count=2000, N=64, b=0.5,
                           window_b=None),
    "audit-anticonc": dict(d=1, N=64, box_length=32.0, b=0.5, count=5, points=None),
    "find-holes": dict(d=1, N=64, box_length=32.0, b=0.5, count=5, points=None,
                       resolution=None),
    "hole-bound": dict(d=1, b=1.0, rho=1.0),
    "reconstruct-field": dict(d=1, n=8, box_length=None, gap_indices=[0, 1, 7], gap_b=None,
                              inside=[0, 1, 2], tolerance=1e-8),
    "reconstruct-points": dict(N=128, box_length=64.0, b=3.0, radius=1.0,
                               inside=[-0.5, 0.2, 0.7], tolerance=1e-4),
    "variance-decay": dict(d=1, n=512, box_length=None, family="fast_decay",
                           parameters={"p": 1.0}, window_b=4.0, scales=[8, 16, 32, 64],
                           max_slope=-6.0),
    "recover-moments": dict(d=1, n=2048, box_length=None, family="fast_decay",
                            parameters={"p": 1.0}, domain_radius=8.0, order=2,
                            scales=[8, 16, 32], count=500, check=True),
}


def _geometry(cfg):
    return TorusGeometry(cfg["d"], cfg["n"], cfg.get("box_length"))


def _structure(cfg):
    family = cfg["family"]
    if family not in FAMILIES:
        raise UsageError(f"unknown family {family!r}; choose from {sorted(FAMILIES)}")
    try:
        return FAMILIES[family](_geometry(cfg), **cfg.get("parameters", {}))
    except TypeError as exc:
        raise UsageError(f"bad parameters for family {family!r}: {exc}") from exc


def _rng_seeds(seed, count):
    return [int(s.generate_state(1, np.uint64)[0])
            for s in np.random.SeedSequence(seed).spawn(count)]


def _configs(cfg, seed, threads):
    """Certified stealthy configurations, from a CSV list or generated per seed."""
    if cfg.get("points"):
        paths = cfg["points"] if isinstance(cfg["points"], list) else [cfg["points"]]
        return [read_points_csv(p) for p in paths]
    gap = ball_gap(cfg["d"], cfg["box_length"], cfg["b"])
    seeds = _rng_seeds(seed, cfg["count"])
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(
            lambda s: generate_stealthy(cfg["N"], cfg["d"], cfg["box_length"], gap, s), seeds))


def _constants(d):
    pair = build_bump_pair(d)
    return {"a": pair.a, "autocorr0": pair.autocorr0, "kappa": hole_bound(1.0, d, pair).kappa,
            "decay_constant": pair.decay_constant}


# ---------------------------------------------------------------- commands

def cmd_sample_field(cfg, seed, threads, out):
    S = _structure(cfg)
    g = S.geometry
    X = sample_field_array(GaussianSpec(S, seed), cfg["count"])
    modes = np.abs(np.fft.fftn(X, axes=tuple(range(1, g.d + 1)))) ** 2 / g.size
    power = modes.mean(axis=0)
    masked = float(power[S.gap.mask].max()) if S.gap.mask.any() else 0.0
    for i in range(int(cfg["write_fields"])):
        real = FieldRealization(g, X[i], seed, i)
        write_field_binary(out / f"field_{i:05d}.bin", real)
        write_field_csv(out / f"field_{i:05d}.csv", real)
    rows = [{"mode": int(m), "S": float(s), "empirical": float(p)}
            for m, (s, p) in enumerate(zip(S.values.ravel(), power.ravel()))]
    results = {"structure": S.to_dict(), "max_masked_power": masked}
    return results, {"masked_modes_zero": masked <= 1e-10}, rows


def cmd_gen_points(cfg, seed, threads, out):
    configs = _configs(cfg, seed, threads)
    for i, c in enumerate(configs):
        write_points_csv(out / f"points_{i:05d}.csv", c)
    rows = [{"index": i, "energy": c.energy, "N": c.N, **{k: v for k, v in c.metadata.items()}}
            for i, c in enumerate(configs)]
    return {"configurations": rows}, {"certified": all(c.certified for c in configs)}, rows


def cmd_verify_linstat(cfg, seed, threads, out):
    d = cfg["d"]
    pair = build_bump_pair(d)
    if cfg["target"] == "points":
        configs = _configs(cfg, seed, threads)
        phi = anticonc_phi(pair, cfg["b"])
        rows = []
        for i, c in enumerate(configs):
            chk = stationarity_check(phi, c)
            rows.append({"index": i, "value": chk.value.real, "expected": chk.expected.real,
                         "deviation": chk.deviation, "tolerance": chk.tolerance})
        ok = all(r["deviation"] <= r["tolerance"] for r in rows)
        return {"checks": rows}, {"mean_equals_rho_phi_hat0": ok}, rows
    if cfg["target"] != "field":
        raise UsageError("target must be 'field' or 'points'")
    S = _structure(cfg)
    g = S.geometry
    wb = cfg["window_b"]
    if wb is None:
        wb = S.parameters.get("b", g.nyquist_radius / 2)
    phi = anticonc_phi(pair, wb)
    analytic = variance_of_linear_statistic(phi, S)
    X = sample_field_array(GaussianSpec(S, seed), cfg["count"])
    emp = empirical_variance(phi, X, g)
    tol = 5 * analytic / np.sqrt(cfg["count"]) + 1e-12
    rows = [{"analytic": analytic, "empirical": emp, "tolerance": tol}]
    return rows[0], {"variance_agrees": abs(emp - analytic) <= tol}, rows


def cmd_audit_anticonc(cfg, seed, threads, out):
    pair = build_bump_pair(cfg["d"])
    configs = _configs(cfg, seed, threads)
    rows = []
    for i, c in enumerate(configs):
        r = anticoncentration_audit(c, cfg["b"], pair)
        rows.append({"index": i, "max_count": r.max_count, "bound": r.bound, "passed": r.passed,
                     "side": float(r.side), "pitch": float(r.pitch)})
    return {"audits": rows}, {"anticoncentration_bound": all(r["passed"] for r in rows)}, rows


def cmd_find_holes(cfg, seed, threads, out):
    pair = build_bump_pair(cfg["d"])
    configs = _configs(cfg, seed, threads)
    r0 = hole_bound(cfg["b"], cfg["d"], pair).r0
    rows = []
    for i, c in enumerate(configs):
        h = find_largest_hole(c, cfg.get("resolution"))
        rows.append({"index": i, "radius": h.radius, "center": list(h.center),
                     "norm_kind": h.norm_kind, "approximate": h.approximate,
                     "verified_empty": verify_hole(c, h)})
    preds = {"holes_empty": all(r["verified_empty"] for r in rows),
             "holes_below_r0": all(r["radius"] <= r0 for r in rows)}
    return {"r0": r0, "holes": rows}, preds, rows


def cmd_hole_bound(cfg, seed, threads, out):
    pair = build_bump_pair(cfg["d"])
    hb = hole_bound(cfg["b"], cfg["d"], pair, rho=cfg["rho"])
    return hb.to_dict(), {"r0_positive": hb.r0 > 0}, hb.chain


def cmd_reconstruct_field(cfg, seed, threads, out):
    g = TorusGeometry(cfg["d"], cfg["n"], cfg.get("box_length"))
    if cfg.get("gap_b") is not None:
        gap = GapRegion.ball(g, cfg["gap_b"])
    else:
        gap = GapRegion.explicit(g, np.asarray(cfg["gap_indices"], dtype=int))
    S = StructureFunction(g, np.where(gap.mask, 0.0, 1.0), gap)
    truth = sample_field_array(GaussianSpec(S, seed), 1)[0]
    split = WindowSplit(g, np.asarray(cfg["inside"], dtype=int))
    erased = truth.copy()
    erased[split.inside] = np.nan
    rec = reconstruct_field_inside(np.nan_to_num(erased), gap, split)
    err = float(np.max(np.abs(rec.values - truth))) if split.inside.any() else 0.0
    res = {**rec.to_dict(), "max_abs_error": err, "truth": truth[split.inside].tolist()}
    rows = [{"site": int(i), "truth": float(t), "reconstructed": float(v)}
            for i, t, v in zip(np.flatnonzero(split.inside), truth[split.inside], rec.inside_values)]
    return res, {"reconstruction_exact": err <= cfg["tolerance"]}, rows


def cmd_reconstruct_points(cfg, seed, threads, out):
    gap = ball_gap(1, cfg["box_length"], cfg["b"])
    inside = np.sort(np.asarray(cfg["inside"], dtype=float))
    c = plant_configuration(cfg["N"], cfg["box_length"], gap, inside, cfg["radius"], seed)
    split = BallSplit(cfg["radius"])
    thetas = torus_theta_grid(gap)
    thetas = thetas[thetas[:, 0] >= 0]
    ecf = ecf_on_torus(c, split, thetas)
    truth = exact_ecf(inside[:, None], thetas)
    dev = np.abs(ecf.values - truth)
    N_in = ecf.count_estimate
    rec = invert_ecf_to_points(ecf, N_in, 1)
    pos_err = float(np.max(np.abs(rec.positions[:, 0] - inside))) if N_in == inside.size else np.inf
    res = {"recovered": rec.to_dict(), "planted": inside.tolist(), "count": N_in,
           "position_error": pos_err, "ecf_max_deviation": float(dev.max()),
           "ecf_error_bar": float(ecf.error_bar.max()), "energy": c.energy}
    preds = {"count_recovered": N_in == inside.size,
             "positions_within_tolerance": pos_err <= cfg["tolerance"],
             "ecf_within_error_bar": bool(np.all(dev <= ecf.error_bar))}
    rows = [{"theta": float(t[0]), "re": v.real, "im": v.imag, "bar": b_, "deviation": dv}
            for t, v, b_, dv in zip(ecf.thetas, ecf.values, ecf.error_bar, dev)]
    return res, preds, rows


def cmd_variance_decay(cfg, seed, threads, out):
    S = _structure(cfg)
    pair = build_bump_pair(cfg["d"])
    fit = variance_decay_fit(S, anticonc_phi(pair, cfg["window_b"]), cfg["scales"])
    rows = [{"L": L, "variance": v} for L, v in zip(fit.scales, fit.variances)]
    preds = {"slope_below_max": fit.degenerate or fit.slope <= cfg["max_slope"]}
    return fit.to_dict(), preds, rows


def cmd_recover_moments(cfg, seed, threads, out):
    S = _structure(cfg)
    g = S.geometry
    X = sample_field_array(GaussianSpec(S, seed), cfg["count"])
    ks = multi_indices_up_to(cfg["d"], cfg["order"])
    rec = recover_inside_moments(X, g, cfg["domain_radius"], ks, cfg["scales"], S=S,
                                 check=cfg["check"])
    med = rec.median_errors
    rows = [{"k": list(k), "L": L, "median_error": float(med[a, c])}
            for a, k in enumerate(ks) for c, L in enumerate(rec.scales)]
    decreasing = bool(np.all(np.diff(med, axis=1) < 0))
    return rec.to_dict(), {"errors_decreasing": decreasing}, rows


COMMANDS = {
    "sample-field": cmd_sample_field,
    "gen-points": cmd_gen_points,
    "verify-linstat": cmd_verify_linstat,
    "audit-anticonc": cmd_audit_anticonc,
    "find-holes": cmd_find_holes,
    "hole-bound": cmd_hole_bound,
    "reconstruct-field": cmd_reconstruct_field,
    "reconstruct-points": cmd_reconstruct_points,
    "variance-decay": cmd_variance_decay,
    "recover-moments": cmd_recover_moments,
}


# ---------------------------------------------------------------- plumbing

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if np.isfinite(v) else str(v)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


def report_hash(report):
    body = {k: v for k, v in report.items() if k not in ("timestamp", "hash")}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


def _write_rows(path, rows):
    if not rows:
        return
    keys = list(rows[0].keys())
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys, extrasaction="ignore")
        w.writeheader()
        for r in rows:
            w.writerow({k: json.dumps(_jsonable(v)) if isinstance(v, (list, dict)) else v
                        for k, v in r.items()})


def _flag_value(text):
    """Flag values are JSON when they parse as JSON, plain strings otherwise."""
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _add_flags(p):
    p.add_argument("--config", type=Path, help="JSON file with command parameters")
    p.add_argument("--seed", type=int, default=None, help="64-bit seed (default 0)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default $STEALTHY_LAB_THREADS or 1)")
    p.add_argument("--out", type=Path, default=None, help="output directory (default .)")
    p.add_argument("--format", choices=("json", "csv", "both"), default="json")
    p.add_argument("--set", action="append", default=[], metavar="KEY=JSON",
                   help="override one parameter, value parsed as JSON")


def build_parser():
    parser = argparse.ArgumentParser(prog="stealthy-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, defaults in DEFAULTS.items():
        p = sub.add_parser(name)
        _add_flags(p)
        for key, val in defaults.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=_flag_value, default=None,
                           help=f"(JSON) default {json.dumps(val)}")
    return parser


def _resolve(args):
    cfg = dict(DEFAULTS[args.command])
    seed = 0
    if args.config:
        try:
            doc = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise UsageError("config must be a JSON object")
        seed = doc.pop("seed", seed)
        unknown = set(doc) - set(cfg)
        if unknown:
            raise UsageError(f"unknown config keys: {sorted(unknown)}")
        cfg.update(doc)
    for key in DEFAULTS[args.command]:
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    for item in args.set:
        key, _, val = item.partition("=")
        if key not in cfg:
            raise UsageError(f"unknown parameter {key!r}")
        try:
            cfg[key] = json.loads(val)
        except json.JSONDecodeError as exc:
            raise UsageError(f"--set {key}: value is not JSON") from exc
    if args.seed is not None:
        seed = args.seed
    if not 0 <= int(seed) < 2 ** 64:
        raise UsageError("seed must be an unsigned 64-bit integer")
    threads = args.threads or int(os.environ.get("STEALTHY_LAB_THREADS", "1") or 1)
    if threads < 1:
        raise UsageError("threads must be >= 1")
    return cfg, int(seed), threads


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, seed, threads = _resolve(args)
    except (UsageError, ValueError) as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    out = args.out or Path(".")
    out.mkdir(parents=True, exist_ok=True)
    try:
        results, predicates, rows = COMMANDS[args.command](cfg, seed, threads, out)
        error = None
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except StealthyLabError as exc:
        results, rows, error = {}, [], str(exc)
        predicates = {type(exc).__name__: False}
    report = {
        "command": args.command,
        "version": __version__,
        "seed": seed,
        "config": cfg,
        "constants": _constants(cfg.get("d", 1)),
        "results": results,
        "predicates": predicates,
        "passed": all(predicates.values()),
        "error": error,
    }
    report = _jsonable(report)
    report["hash"] = report_hash(report)
    report["timestamp"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
    text = json.dumps(report, indent=2, sort_keys=True)
    if args.format in ("json", "both"):
        (out / f"{args.command}.json").write_text(text + "\n")
    if args.format in ("csv", "both"):
        _write_rows(out / f"{args.command}.csv", rows)
    print(text)
    failed = [k for k, v in predicates.items() if not v]
    if failed:
        msg = f"predicate failed: {', '.join(failed)}"
        if error:
            msg += f" ({error})"
        print(msg, file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
