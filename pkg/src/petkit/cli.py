"""``pet`` command line: one verb per pipeline stage.

Exit codes: 0 success, 1 runtime or data error, 2 usage error. Every run
prints its resolved configuration as one JSON line before doing any work.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .calib import (
    CalibrationParams,
    RegressorModel,
    apply_calibration,
    extract_features,
    fit_affine_calibration,
    fit_standin_regressor,
    predict_gaze,
)
from .demosaic import PolarizationChannels, demosaic_bilinear, gaussian_smooth, split_superpixels
from .errors import IoFailure, ParseError, PetError
from .experiment import CohortConfig, run_cohort
from .feature_match import StabilityParams, stability_report
from .gaze_eval import (
    DEFAULT_PERCENTILES,
    bootstrap_ci,
    errors_by_participant,
    participant_e95,
    percentile_difference_curve,
)
from .input_former import MODALITIES, form_input
from .mosaic_io import (
    DEFAULT_LAYOUT,
    RawMosaicFrame,
    load_gaze_dataset,
    read_raw_frame,
    read_tensor,
    save_gaze_dataset,
    write_raw_frame,
    write_tensor,
)
from .plot import emit_plot
from .stokes import (
    PAPER_LITERAL,
    PHYSICAL_X2,
    PRODUCT_NAMES,
    PolarizationProducts,
    ProductConfig,
    products_from_channels,
    render_composite,
)
from .synth import (
    NoiseModel,
    ProtocolConfig,
    SceneParams,
    generate_dataset,
    generate_scene,
    simulate_pfa_capture,
)

COMPOSITE_MODES = ("methods_hsv", "figure_hsv")


# --------------------------------------------------------------------------
# small I/O helpers


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    return out


def _write_json(path: Path, doc):
    try:
        path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _read_json(path):
    path = Path(path)
    try:
        return json.loads(path.read_text())
    except FileNotFoundError as exc:
        raise IoFailure(f"cannot read {path}") from exc
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from exc


def _write_csv(path: Path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _write_png(path: Path, rgb: np.ndarray):
    from PIL import Image

    try:
        Image.fromarray(rgb, mode="RGB").save(path, format="PNG")
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def _g(v) -> str:
    return repr(float(v))


def _channels(args, frame: RawMosaicFrame) -> PolarizationChannels:
    ch = split_superpixels(frame) if args.method == "superpixel" else demosaic_bilinear(frame)
    if args.sigma > 0:
        ch = gaussian_smooth(ch, args.sigma)
    return ch


def _product_config(args, frame: RawMosaicFrame) -> ProductConfig:
    return ProductConfig.for_bit_depth(frame.bit_depth, mask_threshold_rel=args.mask_rel,
                                       dolp_convention=args.convention)


def _crop(spec: str | None):
    if not spec:
        return slice(None), slice(None)
    try:
        ys, xs = spec.split(",")
        y0, y1 = (int(v) for v in ys.split(":"))
        x0, x1 = (int(v) for v in xs.split(":"))
    except ValueError as exc:
        raise ParseError(f"crop must look like y0:y1,x0:x1, got {spec!r}") from exc
    return slice(y0, y1), slice(x0, x1)


# --------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    out = _out_dir(args)
    scene = SceneParams(args.size, args.size, gaze=(args.yaw, args.pitch), subject_seed=args.subject_seed,
                        intensity_contrast=args.contrast, pupil_radius=args.pupil_radius,
                        eye_relief_scale=args.eye_relief)
    noise = NoiseModel(args.read_noise, args.shot_noise, args.extinction, args.seed)
    if args.pattern == "scene":
        truth = generate_scene(scene)
        write_raw_frame(simulate_pfa_capture(truth, noise=noise), out / "scene.pfaraw")
        write_tensor(np.stack([truth.s0_true, truth.dolp_true, truth.aolp_true, truth.region_map]),
                     out / "scene_truth.pft", ["s0_true", "dolp_true", "aolp_true", "region"],
                     {"gaze": list(truth.gaze), "scene": asdict(scene)})
        return 0
    protocol = ProtocolConfig(args.pattern, n_targets=args.n_targets, seed=args.seed)
    ds = generate_dataset(protocol, scene, out_dir=out, noise=noise, participant_id=args.participant,
                          eye=args.eye, threads=args.threads)
    print(f"wrote {len(ds.participants[0].records)} frames to {out}")
    return 0


def cmd_demosaic(args):
    out = _out_dir(args)
    ch = _channels(args, read_raw_frame(args.frame))
    write_tensor(ch.stack(), out / "channels.pft", ["i0", "i45", "i90", "i135"], {"provenance": ch.provenance})
    return 0


def cmd_stokes(args):
    out = _out_dir(args)
    frame = read_raw_frame(args.frame)
    prod = products_from_channels(_channels(args, frame), _product_config(args, frame))
    meta = {"convention": args.convention}
    for name in ("intensity", "dolp", "aolp"):
        write_tensor(getattr(prod, name), out / f"{name}.pft", [name], meta)
    write_tensor(prod.stack(), out / "products.pft", list(PRODUCT_NAMES), meta)
    for mode in COMPOSITE_MODES:
        _write_png(out / f"composite_{mode}.png", render_composite(prod, mode, args.gamma))
    return 0


def cmd_render(args):
    out = _out_dir(args)
    arr, _ = read_tensor(args.products)
    if arr.shape[0] != len(PRODUCT_NAMES):
        raise ParseError(f"{args.products} must hold the {len(PRODUCT_NAMES)} product planes")
    prod = PolarizationProducts.from_stack(arr.astype(np.float64))
    modes = COMPOSITE_MODES if args.mode == "both" else (args.mode,)
    for mode in modes:
        _write_png(out / f"composite_{mode}.png", render_composite(prod, mode, args.gamma))
    return 0


def cmd_form_input(args):
    out = _out_dir(args)
    ch = _channels(args, read_raw_frame(args.frame))
    mi = form_input(ch, args.modality, args.normalize, Path(args.frame).name)
    write_tensor(mi.planes, out / f"input_{args.modality}.pft", [f"plane{i}" for i in range(4)],
                 {"modality": mi.modality, "source_frame_id": mi.source_frame_id, "provenance": mi.provenance})
    return 0


def _product_image(args, path):
    frame = read_raw_frame(path)
    prod = products_from_channels(_channels(args, frame), _product_config(args, frame))
    ys, xs = _crop(args.crop)
    return getattr(prod, args.product)[ys, xs]


def cmd_match(args):
    out = _out_dir(args)
    params = StabilityParams(model=args.model, threshold_px=args.threshold, max_iters=args.max_iters,
                             seed=args.seed)
    base = _product_image(args, args.baseline)
    reports = stability_report(base, [_product_image(args, p) for p in args.sessions], params)
    doc = {
        "baseline": Path(args.baseline).name,
        "sessions": [dict(r.to_json(), frame=Path(p).name) for p, r in zip(args.sessions, reports)],
    }
    _write_json(out / "match_report.json", doc)
    for p, r in zip(args.sessions, reports):
        print(f"{Path(p).name}: {r.n_inliers}/{r.n_putative} inliers")
    return 0


def cmd_calibrate(args):
    out = _out_dir(args)
    doc = _read_json(args.points)
    try:
        preds, gts = doc["preds"], doc["gts"]
    except (KeyError, TypeError) as exc:
        raise ParseError(f"{args.points} needs 'preds' and 'gts' lists") from exc
    params = fit_affine_calibration(preds, gts)
    _write_json(out / "calibration.json", params.to_json())
    return 0


def _dataset_features(args, dataset, modality):
    feats, targets = [], []
    for part in dataset.participants:
        for rec in part.records:
            ch = _channels(args, read_raw_frame(dataset.resolve(rec)))
            feats.append(extract_features(form_input(ch, modality), args.grid))
            targets.append(rec.gaze_gt)
    return np.array(feats), np.array(targets, dtype=np.float64).reshape(-1, 2)


def cmd_train_standin(args):
    out = _out_dir(args)
    ds = load_gaze_dataset(args.manifest)
    X, Y = _dataset_features(args, ds, args.modality)
    model = fit_standin_regressor(X, Y, args.ridge_lambda, args.huber_delta, args.outlier_k,
                                  modality=args.modality, grid=args.grid)
    model.save(out / f"model_{args.modality}.json")
    print(f"trained on {len(X)} frames, {int(model.outlier_mask.sum())} outliers, "
          f"{model.n_rounds} rounds, converged={model.converged}")
    return 0


def cmd_predict(args):
    out = _out_dir(args)
    model = RegressorModel.load(args.model)
    ds = load_gaze_dataset(args.manifest)
    args.grid = model.grid
    X, _ = _dataset_features(args, ds, model.trained_modality)
    pred = predict_gaze(model, X) if len(X) else np.empty((0, 2))
    if args.calibration:
        pred = apply_calibration(CalibrationParams.from_json(_read_json(args.calibration)), pred)
    recs = [rec for part in ds.participants for rec in part.records]
    for rec, p in zip(recs, np.atleast_2d(pred)):
        rec.gaze_pred = (float(p[0]), float(p[1]))
    ds.metadata = dict(ds.metadata, model=Path(args.model).name, modality=model.trained_modality)
    # frame paths stay resolvable from the new manifest location
    for rec in recs:
        rec.frame_path = str(ds.resolve(rec).resolve())
    save_gaze_dataset(ds, out / f"predictions_{model.trained_modality}.json")
    return 0


def _arm(path):
    return errors_by_participant(load_gaze_dataset(path, check_frames=False))


def _curve_rows(curve):
    return [[_g(p), _g(d), _g(lo), _g(hi)] for p, d, lo, hi in curve.rows()]


CURVE_HEADER = ["percentile", "median_diff_deg", "envelope_low_deg", "envelope_high_deg"]


def cmd_evaluate(args):
    out = _out_dir(args)
    pet, ref = _arm(args.pet), _arm(args.intensity)
    curve = percentile_difference_curve(pet, ref, DEFAULT_PERCENTILES, args.bootstrap, args.seed, args.level)
    ref_by_id = {pe.participant_id: pe for pe in ref}
    rows = []
    for pe in pet:
        re = ref_by_id[pe.participant_id]
        rows.append([pe.participant_id, pe.errors.size, _g(participant_e95(pe)), _g(participant_e95(re)),
                     _g(np.median(pe.errors)), _g(np.median(re.errors))])
    _write_csv(out / "per_participant.csv",
               ["participant_id", "n_frames", "e95_pet", "e95_intensity", "median_pet", "median_intensity"], rows)
    summary = {
        "n_participants": len(pet),
        "u50e95_pet": bootstrap_ci(pet, "u50_e95", args.bootstrap, args.level, args.seed).to_json(),
        "u50e95_intensity": bootstrap_ci(ref, "u50_e95", args.bootstrap, args.level, args.seed).to_json(),
        "median_diff_p95": bootstrap_ci([(pe, ref_by_id[pe.participant_id]) for pe in pet], "median_diff",
                                        args.bootstrap, args.level, args.seed, p=95).to_json(),
    }
    _write_json(out / "summary.json", summary)
    _write_csv(out / "diff_curve.csv", CURVE_HEADER, _curve_rows(curve))
    print(f"U50E95 pet {summary['u50e95_pet']['point']:.4f} deg, "
          f"intensity {summary['u50e95_intensity']['point']:.4f} deg")
    return 0


def cmd_diff_curve(args):
    out = _out_dir(args)
    pet, ref = _arm(args.pet), _arm(args.intensity)
    curve = percentile_difference_curve(pet, ref, DEFAULT_PERCENTILES, args.bootstrap, args.seed, args.level)
    _write_csv(out / "diff_curve.csv", CURVE_HEADER, _curve_rows(curve))
    emit_plot(curve, out / "diff_curve.svg")
    return 0


def cmd_cohort(args):
    out = _out_dir(args)
    cfg = CohortConfig(n_train_subjects=args.train_subjects, n_test_subjects=args.test_subjects,
                       intensity_contrast=args.contrast, bootstrap_resamples=args.bootstrap, seed=args.seed,
                       threads=args.threads)
    res = run_cohort(cfg)
    _write_json(out / "cohort_summary.json", dict(res.summary(), config=asdict(cfg)))
    _write_csv(out / "diff_curve.csv", CURVE_HEADER, _curve_rows(res.curve))
    emit_plot(res.curve, out / "diff_curve.svg", "synthetic cohort")
    s = res.summary()
    print(f"U50E95 pet {s['u50e95_pet']:.3f} deg, pseudo-intensity {s['u50e95_pseudo_intensity']:.3f} deg, "
          f"p95 envelope [{s['envelope_p95'][0]:.3f}, {s['envelope_p95'][1]:.3f}]")
    return 0


def bench_frame(width: int = 2448, height: int = 2048, seed: int = 0) -> RawMosaicFrame:
    rng = np.random.default_rng(seed)
    return RawMosaicFrame(rng.integers(0, 4096, size=(height, width), dtype=np.uint16), DEFAULT_LAYOUT, 12)


def bench_once(frame: RawMosaicFrame) -> float:
    t0 = time.perf_counter()
    products_from_channels(demosaic_bilinear(frame), ProductConfig.for_bit_depth(frame.bit_depth))
    return time.perf_counter() - t0


def cmd_bench(args):
    frame = bench_frame(seed=args.seed)
    times = [bench_once(frame) for _ in range(args.repeats)]
    best = min(times)
    mpix = frame.width * frame.height / 1e6
    flag = "ok" if best < 0.1 else "SLOW (target 100 ms)"
    print(f"demosaic+stokes+products {frame.width}x{frame.height}: best {best * 1e3:.1f} ms, "
          f"{mpix / best:.1f} MPix/s [{flag}]")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def _globals_parser(suppress: bool) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="seed for all randomness (default 0)")
    p.add_argument("--threads", type=int, default=d(1), help="worker threads (default 1)")
    p.add_argument("--out", default=d("."), help="output directory (default .)")
    return p


def _pipeline_args(p):
    p.add_argument("--method", choices=("bilinear", "superpixel"), default="bilinear")
    p.add_argument("--sigma", type=float, default=0.0, help="Gaussian pre-smoothing sigma, 0 disables")


def _product_args(p):
    _pipeline_args(p)
    p.add_argument("--convention", choices=(PAPER_LITERAL, PHYSICAL_X2), default=PAPER_LITERAL)
    p.add_argument("--mask-rel", type=float, default=0.01)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pet", parents=[_globals_parser(False)],
                                     description="Polarization eye-tracking toolkit")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True
    common = _globals_parser(True)

    def add(name, func, help_):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "render a synthetic scene or protocol dataset")
    p.add_argument("--pattern", choices=("scene", "ring20", "fp18", "random_saccade"), default="scene")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--pitch", type=float, default=0.0)
    p.add_argument("--subject-seed", type=int, default=0)
    p.add_argument("--contrast", type=float, default=1.0, help="intensity contrast in [0, 1]")
    p.add_argument("--pupil-radius", type=float, default=14.0)
    p.add_argument("--eye-relief", type=float, default=1.0)
    p.add_argument("--read-noise", type=float, default=0.0)
    p.add_argument("--shot-noise", action="store_true")
    p.add_argument("--extinction", type=float, default=1.0)
    p.add_argument("--n-targets", type=int, default=None)
    p.add_argument("--participant", default="P000")
    p.add_argument("--eye", choices=("left", "right"), default="left")

    p = add("demosaic", cmd_demosaic, "demosaic a raw frame into four channels")
    p.add_argument("frame")
    _pipeline_args(p)

    p = add("stokes", cmd_stokes, "intensity/DoLP/AoLP tensors and composites")
    p.add_argument("frame")
    _product_args(p)
    p.add_argument("--gamma", type=float, default=2.2)

    p = add("render", cmd_render, "HSV composite from a products tensor")
    p.add_argument("products")
    p.add_argument("--mode", choices=COMPOSITE_MODES + ("both",), default="both")
    p.add_argument("--gamma", type=float, default=2.2)

    p = add("form-input", cmd_form_input, "PET or pseudo-intensity model input")
    p.add_argument("frame")
    _pipeline_args(p)
    p.add_argument("--modality", choices=MODALITIES, default="pet")
    p.add_argument("--normalize", choices=("per_channel_standardize", "none"), default="per_channel_standardize")

    p = add("match", cmd_match, "feature stability of session frames against a baseline")
    p.add_argument("baseline")
    p.add_argument("sessions", nargs="+")
    _product_args(p)
    p.add_argument("--product", choices=("dolp", "intensity", "aolp"), default="dolp")
    p.add_argument("--crop", default=None, help="y0:y1,x0:x1")
    p.add_argument("--model", choices=("similarity", "affine"), default="similarity")
    p.add_argument("--threshold", type=float, default=3.0)
    p.add_argument("--max-iters", type=int, default=2000)

    p = add("calibrate", cmd_calibrate, "per-axis affine calibration from a points JSON")
    p.add_argument("points", help='JSON with "preds" and "gts" lists of [yaw, pitch]')

    p = add("train-standin", cmd_train_standin, "fit the stand-in regressor on a manifest")
    p.add_argument("manifest")
    _pipeline_args(p)
    p.add_argument("--modality", choices=MODALITIES, default="pet")
    p.add_argument("--grid", type=int, default=8)
    p.add_argument("--ridge-lambda", type=float, default=1e-3)
    p.add_argument("--huber-delta", type=float, default=1.0)
    p.add_argument("--outlier-k", type=float, default=5.0)

    p = add("predict", cmd_predict, "write a manifest with gaze predictions")
    p.add_argument("manifest")
    p.add_argument("--model", required=True)
    p.add_argument("--calibration", default=None)
    _pipeline_args(p)

    for name, func, help_ in (("evaluate", cmd_evaluate, "per-participant and population error report"),
                              ("diff-curve", cmd_diff_curve, "paired difference curve CSV and SVG")):
        p = add(name, func, help_)
        p.add_argument("--pet", required=True, help="predictions manifest for the PET arm")
        p.add_argument("--intensity", required=True, help="predictions manifest for the intensity arm")
        p.add_argument("--bootstrap", type=int, default=1000)
        p.add_argument("--level", type=float, default=0.90)

    p = add("cohort", cmd_cohort, "synthetic PET vs pseudo-intensity cohort experiment")
    p.add_argument("--train-subjects", type=int, default=20)
    p.add_argument("--test-subjects", type=int, default=30)
    p.add_argument("--contrast", type=float, default=CohortConfig.intensity_contrast)
    p.add_argument("--bootstrap", type=int, default=1000)

    p = add("bench", cmd_bench, "time demosaic + Stokes on a 2448x2048 frame")
    p.add_argument("--repeats", type=int, default=5)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.threads < 1:
        print("pet: error: --threads must be >= 1", file=sys.stderr)
        return 2
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    print("config: " + json.dumps(config, sort_keys=True, default=str), flush=True)
    try:
        return args.func(args)
    except (PetError, OSError, ValueError) as exc:
        print(f"pet: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main(argv=None):
    sys.exit(run_cli(argv))


if __name__ == "__main__":
    main()
