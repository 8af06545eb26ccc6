"""Command-line pipeline: pattern tools, recognition, spin, benchmarks.

Exit codes: 0 on success (including data-level failures recorded in
output rows), 2 for usage/validation/file errors, 1 for internal errors.
Every run writes a ``<output stem>.manifest.json`` next to its primary
output; ``dotspin rerun --manifest`` replays a manifest and reproduces
the primary outputs byte for byte.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from . import io as dio
from .errors import (
    DotspinError,
    FileFormatError,
    NoBasisAboveThreshold,
    NoConsensus,
    TooFewDots,
    TooFewSamples,
)
from .geometry import Rotation, geodesic_angle, random_rotation
from .hashing import RecognitionConfig, build_hash_table, recognize
from .kent import ScoringParams
from .pattern import EvalConfig, evaluate_pattern, optimize_pattern, random_pattern
from .spin import (
    OrientationSample,
    RansacConfig,
    dampening_fit,
    finite_difference_spin,
    linear_dampening_fit,
    ransac_spin,
)
from .synth import NoiseConfig, generate_observation, generate_sequence

CONFIG_ENV_VAR = "DOTSPIN_CONFIG"


class ValidationError(DotspinError):
    """CLI input failed validation; maps to exit code 2."""


# --- config -----------------------------------------------------------

def _load_overrides(args) -> dict:
    path = getattr(args, "config", None) or os.environ.get(CONFIG_ENV_VAR)
    if not path:
        return {}
    overrides = dio.read_json(path)
    if not isinstance(overrides, dict):
        raise ValidationError(f"{path}: config must be a JSON object")
    return overrides


def _scoring(overrides: dict) -> ScoringParams:
    return ScoringParams(
        kappa=float(overrides.get("kappa", 500.0)),
        beta=float(overrides.get("beta", 0.0)),
        alpha=float(overrides.get("alpha", 0.03)),
    )


def _recognition(overrides: dict) -> RecognitionConfig:
    return RecognitionConfig(
        k_nearest=int(overrides.get("k_nearest", 8)),
        score_ratio=float(overrides.get("score_ratio", 100.0)),
        min_voting_dots=int(overrides.get("min_voting_dots", 2)),
        match_gate=math.radians(float(overrides.get("match_gate_deg", 10.0))),
    )


def _visibility(overrides: dict) -> float:
    return float(overrides.get("visibility_threshold", 0.0))


# --- manifest -----------------------------------------------------------

def _write_manifest(args, primary_output, extra_outputs=(), inputs=(),
                    started: float = 0.0) -> None:
    manifest = {
        "tool": "dotspin",
        "version": __version__,
        "subcommand": args._subcommand,
        "argv": args._argv,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "outputs": [str(primary_output)] + [str(p) for p in extra_outputs],
        "duration_s": round(time.perf_counter() - started, 6),
    }
    dio.write_json(manifest, Path(primary_output).with_suffix(".manifest.json"))


# --- pattern -----------------------------------------------------------

def _cmd_pattern_gen(args) -> int:
    started = time.perf_counter()
    if args.n < 3:
        raise ValidationError("--n must be at least 3")
    if args.iters > 0 and args.n < 4:
        raise ValidationError("optimization needs --n >= 4 (use --iters 0)")
    rng = np.random.default_rng(args.seed)
    if args.iters > 0:
        pattern = optimize_pattern(args.n, iterations=args.iters, rng=rng,
                                   min_separation=args.min_sep)
    else:
        pattern = random_pattern(args.n, args.min_sep, rng)
    dio.write_pattern(pattern, args.output)
    _write_manifest(args, args.output, started=started)
    print(f"wrote {args.output}: {len(pattern)} dots, id={pattern.id}")
    return 0


def _cmd_pattern_eval(args) -> int:
    started = time.perf_counter()
    if args.trials < 1:
        raise ValidationError("--trials must be positive")
    overrides = _load_overrides(args)
    pattern = dio.read_pattern(args.pattern)
    cfg = EvalConfig(
        seed=args.seed,
        visibility_threshold=_visibility(overrides),
        scoring=_scoring(overrides),
        recognition=_recognition(overrides),
    )
    report = evaluate_pattern(pattern, args.trials, math.radians(args.sigma), cfg)
    payload = {
        "success_rate": report.success_rate,
        "trials": report.trials,
        "eligible": report.eligible,
        "noise_sigma_deg": report.noise_sigma,
        "mean_orientation_error_rad": report.mean_orientation_error,
        "failure_count_by_cause": report.failure_count_by_cause,
        "pattern_id": pattern.id,
    }
    dio.write_json(payload, args.report)
    _write_manifest(args, args.report, inputs=[args.pattern], started=started)
    print(f"success_rate={report.success_rate:.4f} over {report.eligible} eligible trials")
    return 0


# --- hash / orient ---------------------------------------------------------

def _cmd_hash_build(args) -> int:
    started = time.perf_counter()
    overrides = _load_overrides(args)
    pattern = dio.read_pattern(args.pattern)
    table = build_hash_table(pattern, _scoring(overrides))
    dio.write_table(table, args.output)
    _write_manifest(args, args.output, inputs=[args.pattern], started=started)
    print(f"{len(table)} entries ({table.n_skipped_bases} near-parallel bases skipped)")
    return 0


def _cmd_orient(args) -> int:
    started = time.perf_counter()
    overrides = _load_overrides(args)
    if args.table:
        table = dio.read_table(args.table)
        source = args.table
    elif args.pattern:
        table = build_hash_table(dio.read_pattern(args.pattern), _scoring(overrides))
        source = args.pattern
    else:
        raise ValidationError("orient needs --pattern or --table")
    frames = dio.read_observations(args.obs)
    cfg = _recognition(overrides)

    rows = []
    for frame_id, obs in frames:
        row = {"frame": frame_id, "t": obs.timestamp, "n_dots": len(obs)}
        try:
            result = recognize(table, obs, cfg)
        except TooFewDots:
            row["status"] = "too_few_dots"
        except NoBasisAboveThreshold:
            row["status"] = "no_consensus"
        else:
            q = result.orientation.q
            row.update(qw=q[0], qx=q[1], qy=q[2], qz=q[3], rmse=result.rmse,
                       n_matched=len(result.correspondences), status="ok")
        rows.append(row)
    dio.write_orientations(rows, args.output)
    _write_manifest(args, args.output, inputs=[source, args.obs], started=started)
    ok = sum(1 for r in rows if r["status"] == "ok")
    print(f"{ok}/{len(rows)} frames recognized -> {args.output}")
    return 0


# --- spin / dampen ----------------------------------------------------------

def _cmd_spin(args) -> int:
    started = time.perf_counter()
    samples = dio.read_orientation_sequence(args.orient)
    if len(samples) < 3:
        raise ValidationError(f"need >= 3 usable orientation rows, got {len(samples)}")
    cfg = RansacConfig(
        iterations=args.iterations,
        inlier_gate_rad=math.radians(args.gate_deg),
        min_inliers=args.min_inliers,
        seed=args.seed,
    )
    try:
        estimate = ransac_spin(samples, cfg)
    except NoConsensus:
        dio.write_spin(args.output, None, status="no_consensus")
        _write_manifest(args, args.output, inputs=[args.orient], started=started)
        print("no consensus; wrote status row")
        return 0
    dio.write_spin(args.output, estimate, status="ok")
    _write_manifest(args, args.output, inputs=[args.orient], started=started)
    rps = np.linalg.norm(estimate.omega) / (2 * math.pi)
    print(f"spin {rps:.3f} rps with {len(estimate.inliers)}/{len(samples)} inliers")
    return 0


def _cmd_dampen(args) -> int:
    started = time.perf_counter()
    if bool(args.orient) == bool(args.series):
        raise ValidationError("dampen needs exactly one of --orient / --series")
    if args.orient:
        samples = dio.read_orientation_sequence(args.orient)
        if len(samples) < 4:
            raise ValidationError("need >= 4 orientation rows for a norm series")
        series = []
        for a, b in zip(samples, samples[1:]):
            w = finite_difference_spin(a, b)
            series.append((0.5 * (a.t + b.t), float(np.linalg.norm(w))))
        source = args.orient
    else:
        series = dio.read_norm_series(args.series)
        source = args.series
    try:
        fit = dampening_fit(series)
    except (TooFewSamples, DotspinError) as exc:
        raise ValidationError(str(exc))
    payload = {
        "coefficient": fit.coefficient,
        "omega0_rps": fit.omega0 / (2 * math.pi),
        "r2": fit.r2,
        "n": fit.n,
    }
    if args.linear:
        lin = linear_dampening_fit(series)
        payload["linear_coefficient"] = lin.coefficient
        payload["linear_omega0_rps"] = lin.omega0 / (2 * math.pi)
    dio.write_json(payload, args.output)
    _write_manifest(args, args.output, inputs=[source], started=started)
    print(f"dampening coefficient {fit.coefficient:.5f} 1/s (r2={fit.r2:.4f})")
    return 0


# --- synth -------------------------------------------------------------------

def _noise_from_args(args, overrides) -> NoiseConfig:
    return NoiseConfig(
        sigma=math.radians(args.sigma),
        dropout_prob=args.dropout,
        spurious_rate=args.spurious,
        seed=args.seed,
        visibility_threshold=_visibility(overrides),
    )


def _cmd_synth_obs(args) -> int:
    started = time.perf_counter()
    overrides = _load_overrides(args)
    pattern = dio.read_pattern(args.pattern)
    noise = _noise_from_args(args, overrides)
    frames = []
    for i in range(args.frames):
        rng = np.random.default_rng([args.seed, i])
        q = random_rotation(rng)
        frames.append(generate_observation(pattern, q, noise, rng, t=float(i)))
    dio.write_observations(frames, args.output)
    extra = []
    if args.truth:
        dio.write_ground_truth(frames, args.truth)
        extra.append(args.truth)
    _write_manifest(args, args.output, extra_outputs=extra,
                    inputs=[args.pattern], started=started)
    print(f"wrote {args.frames} frames -> {args.output}")
    return 0


def _cmd_synth_seq(args) -> int:
    started = time.perf_counter()
    overrides = _load_overrides(args)
    pattern = dio.read_pattern(args.pattern)
    noise = _noise_from_args(args, overrides)
    try:
        axis = np.asarray([float(c) for c in args.axis.split(",")], dtype=float)
        axis = axis / np.linalg.norm(axis)
    except (ValueError, ZeroDivisionError):
        raise ValidationError(f"--axis must be three comma-separated numbers, got {args.axis!r}")
    if axis.shape != (3,) or not np.all(np.isfinite(axis)):
        raise ValidationError(f"--axis must be a finite 3-vector, got {args.axis!r}")
    omega = 2.0 * math.pi * args.rps * axis
    q0 = random_rotation(np.random.default_rng([args.seed, 0x9E3779B9]))
    frames = generate_sequence(pattern, q0, omega, args.fps, args.frames,
                               noise, dampening=args.dampening)
    dio.write_observations(frames, args.output)
    extra = []
    if args.truth:
        dio.write_ground_truth(frames, args.truth)
        extra.append(args.truth)
    _write_manifest(args, args.output, extra_outputs=extra,
                    inputs=[args.pattern], started=started)
    print(f"wrote {args.frames} frames at {args.fps} fps -> {args.output}")
    return 0


# --- bench ---------------------------------------------------------------------

def _bench_sensitivity(args, pattern, table, cfg: EvalConfig):
    sigmas = [float(s) for s in args.sigmas.split(",")]
    rows = [["suite", "sigma_deg", "trials", "eligible", "successes",
             "success_rate", "mean_error_deg"]]
    for sigma in sigmas:
        report = evaluate_pattern(pattern, args.trials, math.radians(sigma),
                                  cfg, table=table)
        successes = report.eligible - report.failure_count_by_cause["no_basis"] \
            - report.failure_count_by_cause["wrong_orientation"]
        mean_err = (math.degrees(report.mean_orientation_error)
                    if successes else float("nan"))
        rows.append(["sensitivity", sigma, report.trials, report.eligible,
                     successes, report.success_rate, mean_err])
        print(f"sigma={sigma:>5.2f} deg  success_rate={report.success_rate:.4f}")
    return rows


def _bench_orientation(args, pattern, table, cfg: EvalConfig):
    from .pattern import perturb_dot, visible_dots
    from .hashing import ObservedDotSet

    sigma = math.radians(float(args.sigmas.split(",")[0]))
    rows = [["suite", "trial", "sigma_deg", "status", "error_deg"]]
    errors = []
    for trial in range(args.trials):
        rng = np.random.default_rng([args.seed, trial])
        r_true = random_rotation(rng)
        _, vis = visible_dots(pattern, r_true, cfg.visibility_threshold)
        if len(vis) < 3:
            rows.append(["orientation", trial, math.degrees(sigma),
                         "insufficient_dots", ""])
            continue
        if sigma > 0:
            vis = np.array([perturb_dot(v, sigma, rng) for v in vis])
            vis[:, 2] = np.abs(vis[:, 2])
        try:
            result = recognize(table, ObservedDotSet(vis), cfg.recognition)
        except NoBasisAboveThreshold:
            rows.append(["orientation", trial, math.degrees(sigma), "no_basis", ""])
            continue
        err = math.degrees(geodesic_angle(result.orientation, r_true))
        errors.append(err)
        rows.append(["orientation", trial, math.degrees(sigma), "ok", err])
    if errors:
        print(f"mean orientation error {np.mean(errors):.3f} deg over {len(errors)} trials")
    return rows


def _bench_spin(args, pattern, table, cfg: EvalConfig):
    rows = [["suite", "trial", "true_rps", "est_rps", "rel_error",
             "n_inliers", "status"]]
    sigma = math.radians(float(args.sigmas.split(",")[0]))
    rels = []
    for trial in range(args.trials):
        rng = np.random.default_rng([args.seed, trial])
        rps = rng.uniform(args.min_rps, args.max_rps)
        axis = rng.normal(size=3)
        axis /= np.linalg.norm(axis)
        omega = 2 * math.pi * rps * axis
        q0 = random_rotation(rng)
        noise = NoiseConfig(sigma=sigma, seed=int(rng.integers(2 ** 31)),
                            visibility_threshold=cfg.visibility_threshold)
        frames = generate_sequence(pattern, q0, omega, args.fps, args.frames, noise)
        samples = []
        for frame in frames:
            try:
                rec = recognize(table, frame.observed, cfg.recognition)
            except (TooFewDots, NoBasisAboveThreshold):
                continue
            samples.append(OrientationSample(frame.t, rec.orientation, rec.rmse))
        if len(samples) < 3:
            rows.append(["spin", trial, rps, "", "", 0, "too_few_orientations"])
            continue
        try:
            est = ransac_spin(samples, RansacConfig(seed=trial))
        except NoConsensus:
            rows.append(["spin", trial, rps, "", "", 0, "no_consensus"])
            continue
        est_rps = np.linalg.norm(est.omega) / (2 * math.pi)
        rel = abs(est_rps - rps) / rps
        rels.append(rel)
        rows.append(["spin", trial, rps, est_rps, rel, len(est.inliers), "ok"])
    if rels:
        print(f"median spin relative error {np.median(rels):.2e} over {len(rels)} trials")
    return rows


def _cmd_bench(args) -> int:
    import csv

    started = time.perf_counter()
    overrides = _load_overrides(args)
    pattern = dio.read_pattern(args.pattern)
    cfg = EvalConfig(seed=args.seed, visibility_threshold=_visibility(overrides),
                     scoring=_scoring(overrides), recognition=_recognition(overrides))
    table = build_hash_table(pattern, cfg.scoring)
    suite = {"sensitivity": _bench_sensitivity,
             "orientation": _bench_orientation,
             "spin": _bench_spin}[args.suite]
    rows = suite(args, pattern, table, cfg)
    with open(args.output, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)
    _write_manifest(args, args.output, inputs=[args.pattern], started=started)
    return 0


# --- rerun ------------------------------------------------------------------

def _cmd_rerun(args) -> int:
    manifest = dio.read_json(args.manifest)
    argv = manifest.get("argv")
    if not isinstance(argv, list) or not argv:
        raise ValidationError(f"{args.manifest}: manifest has no argv record")
    print(f"replaying: dotspin {' '.join(argv)}")
    return main(argv)


# --- parser -------------------------------------------------------------------

def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dotspin",
        description="Dotted-sphere orientation estimation and spin regression.",
    )
    parser.add_argument("--version", action="version", version=f"dotspin {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=0, help="RNG seed")
    common.add_argument("--config", help=f"JSON config overrides (or ${CONFIG_ENV_VAR})")

    p = sub.add_parser("pattern", help="generate or evaluate dot patterns")
    psub = p.add_subparsers(dest="subcommand", required=True)

    g = psub.add_parser("gen", parents=[common], help="generate a dot pattern")
    g.add_argument("--n", type=int, required=True, help="number of dots")
    g.add_argument("--iters", type=int, default=150,
                   help="optimizer iterations (0 = plain random pattern)")
    g.add_argument("--min-sep", type=float, default=0.35,
                   help="minimum pairwise separation, radians")
    g.add_argument("-o", "--output", required=True)
    g.set_defaults(func=_cmd_pattern_gen, _subcommand="pattern gen")

    e = psub.add_parser("eval", parents=[common], help="Monte Carlo robustness benchmark")
    e.add_argument("--pattern", required=True)
    e.add_argument("--sigma", type=float, default=3.0, help="per-dot noise, degrees")
    e.add_argument("--trials", type=int, default=10_000)
    e.add_argument("--report", required=True, help="output report JSON")
    e.set_defaults(func=_cmd_pattern_eval, _subcommand="pattern eval")

    h = sub.add_parser("hash", help="hash table tools")
    hsub = h.add_subparsers(dest="subcommand", required=True)
    hb = hsub.add_parser("build", parents=[common], help="build and save a hash table")
    hb.add_argument("--pattern", required=True)
    hb.add_argument("-o", "--output", required=True, help="output table .npz")
    hb.set_defaults(func=_cmd_hash_build, _subcommand="hash build")

    o = sub.add_parser("orient", parents=[common],
                       help="recognize observation frames into orientations")
    o.add_argument("--pattern")
    o.add_argument("--table")
    o.add_argument("--obs", required=True, help="observation CSV")
    o.add_argument("-o", "--out", dest="output", required=True)
    o.set_defaults(func=_cmd_orient, _subcommand="orient")

    s = sub.add_parser("spin", parents=[common],
                       help="robust spin regression from an orientation CSV")
    s.add_argument("--orient", required=True)
    s.add_argument("--fps", type=float, default=None,
                   help="frame rate; informational (Shannon limit = fps/2 rps)")
    s.add_argument("--iterations", type=int, default=100)
    s.add_argument("--gate-deg", type=float, default=5.0)
    s.add_argument("--min-inliers", type=int, default=None)
    s.add_argument("-o", "--out", dest="output", required=True)
    s.set_defaults(func=_cmd_spin, _subcommand="spin")

    d = sub.add_parser("dampen", parents=[common],
                       help="fit the exponential spin decay coefficient")
    d.add_argument("--orient", help="orientation CSV (finite-difference norms)")
    d.add_argument("--series", help="norm series CSV with header t,omega")
    d.add_argument("--linear", action="store_true",
                   help="also report the first-order linear fit")
    d.add_argument("-o", "--out", dest="output", required=True)
    d.set_defaults(func=_cmd_dampen, _subcommand="dampen")

    sy = sub.add_parser("synth", help="synthetic observation generator")
    ssub = sy.add_subparsers(dest="subcommand", required=True)

    so = ssub.add_parser("obs", parents=[common],
                         help="independent random-orientation frames")
    so.add_argument("--pattern", required=True)
    so.add_argument("--frames", type=int, default=100)
    so.add_argument("--sigma", type=float, default=0.0, help="per-dot noise, degrees")
    so.add_argument("--dropout", type=float, default=0.0)
    so.add_argument("--spurious", type=float, default=0.0)
    so.add_argument("--truth", help="also write ground-truth CSV here")
    so.add_argument("-o", "--out", dest="output", required=True)
    so.set_defaults(func=_cmd_synth_obs, _subcommand="synth obs")

    sq = ssub.add_parser("seq", parents=[common], help="spinning-ball sequence")
    sq.add_argument("--pattern", required=True)
    sq.add_argument("--rps", type=float, required=True)
    sq.add_argument("--axis", default="0,0,1")
    sq.add_argument("--fps", type=float, default=350.0)
    sq.add_argument("--frames", type=int, default=10)
    sq.add_argument("--dampening", type=float, default=None, help="decay rate, 1/s")
    sq.add_argument("--sigma", type=float, default=0.0, help="per-dot noise, degrees")
    sq.add_argument("--dropout", type=float, default=0.0)
    sq.add_argument("--spurious", type=float, default=0.0)
    sq.add_argument("--truth", help="also write ground-truth CSV here")
    sq.add_argument("-o", "--out", dest="output", required=True)
    sq.set_defaults(func=_cmd_synth_seq, _subcommand="synth seq")

    b = sub.add_parser("bench", parents=[common], help="benchmark suites, tidy CSV out")
    b.add_argument("--suite", choices=["sensitivity", "orientation", "spin"],
                   required=True)
    b.add_argument("--pattern", required=True)
    b.add_argument("--trials", type=int, default=1000)
    b.add_argument("--sigmas", default="0,1,3,5,8",
                   help="degrees; list for sensitivity, first value otherwise")
    b.add_argument("--fps", type=float, default=350.0)
    b.add_argument("--frames", type=int, default=10)
    b.add_argument("--min-rps", type=float, default=5.0)
    b.add_argument("--max-rps", type=float, default=170.0)
    b.add_argument("-o", "--out", dest="output", required=True)
    b.set_defaults(func=_cmd_bench, _subcommand="bench")

    r = sub.add_parser("rerun", help="replay a run manifest")
    r.add_argument("--manifest", required=True)
    r.set_defaults(func=_cmd_rerun, _subcommand="rerun")

    return parser


def main(argv=None) -> int:
    if argv is None:
        argv = sys.argv[1:]
    parser = _build_parser()
    args = parser.parse_args(argv)
    args._argv = list(argv)
    try:
        return args.func(args)
    except (ValidationError, FileFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TooFewSamples as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DotspinError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
