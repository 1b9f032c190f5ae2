"""Command-line front end: synth, simulate, superres, eval, inspect.

Each subcommand accepts --config JSON files whose keys mirror the flag names;
explicit flags override config values and unknown config keys are rejected.
All failures exit nonzero with a machine-parseable ``error: <Code>: ...`` line
on stderr. Output layout is fixed (dtof/, pred/, report.txt) so runs compose.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dataset, fileio, metrics, superres, synth
from .errors import (
    BadConfigError,
    DtofError,
    FileMissingError,
    InvalidSpecError,
    MethodUnavailableError,
    MissingFlowError,
    MissingLayerError,
)
from .histogram import (
    Histogram,
    Pulse,
    TimeAxis,
    compress_grid,
    peak_detect,
    wasserstein_distance,
)
from .sensor import (
    RadianceMode,
    SensorConfig,
    SensorMode,
    ShotNoise,
    grayscale_radiance,
    radiance_map,
    simulate_frame,
)

DEFAULT_WORKERS = 4

SIMULATE_DEFAULTS = {
    "mode": "hist",
    "radiance": "gray",
    "k": 1024,
    "t0_ns": None,          # None: axis covers 40 m with k bins
    "s": 16,
    "pulse": "delta",
    "fwhm_ns": None,
    "photon_budget": None,  # None: noise-free
    "seed": 0,
    "workers": DEFAULT_WORKERS,
}

SUPERRES_DEFAULTS = {
    "method": "candidate",
    "m": 4,
    "noise_floor": 0.0,
    "sigma_d": 2.0,
    "spatial_sigma": 1.0,
    "range_sigma": 0.12,
    "window_radius": 2.0,
    "decay": 0.8,
    "workers": DEFAULT_WORKERS,
}

EVAL_DEFAULTS = {
    "tau": [1.25, 1.25 ** 2],
    "metrics": "auto",
}

SYNTH_DEFAULTS = {
    "seed": 0,
    "s": 16,
    "depth_unit": "float_meters",
}

INSPECT_DEFAULTS = {
    "pixel": [0, 0],
    "m": 4,
    "noise_floor": 0.0,
    "ref": None,
}

SUPERRES_METHODS = ("nearest", "bilinear", "bilateral", "candidate",
                    "candidate+temporal")


def _load_config(path, defaults: dict) -> dict:
    cfg = dict(defaults)
    if path is None:
        return cfg
    path = Path(path)
    if not path.is_file():
        raise FileMissingError(str(path))
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise BadConfigError(f"{path}: {exc}") from exc
    unknown = set(data) - set(defaults)
    if unknown:
        raise BadConfigError(f"unknown config keys: {sorted(unknown)}")
    cfg.update(data)
    return cfg


def _resolve(args, defaults: dict) -> dict:
    """Config file values override defaults; explicit flags override both."""
    cfg = _load_config(getattr(args, "config", None), defaults)
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            cfg[key] = value
    return cfg


def _axis_from(cfg) -> TimeAxis:
    k = int(cfg["k"])
    if cfg["t0_ns"] is not None:
        return TimeAxis(k, float(cfg["t0_ns"]) * 1e-9)
    return TimeAxis.for_depth_range(num_bins=k)


def _pulse_from(cfg) -> Pulse:
    if cfg["pulse"] == "delta":
        return Pulse.delta()
    if cfg["pulse"] == "gaussian":
        if cfg["fwhm_ns"] is None:
            raise BadConfigError("gaussian pulse requires --fwhm-ns")
        return Pulse.gaussian(float(cfg["fwhm_ns"]) * 1e-9)
    raise BadConfigError(f"unknown pulse {cfg['pulse']!r}")


def _map_indexed(fn, items, workers: int):
    """Apply fn over items with a bounded pool, preserving index order."""
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _write_run_summary(out_dir: Path, name: str, payload: dict) -> None:
    with open(out_dir / name, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ------------------------------------------------------------------- synth

def cmd_synth(args) -> int:
    cfg = _resolve(args, SYNTH_DEFAULTS)
    spec = synth.load_scene_spec(args.spec)
    s = int(cfg["s"])
    if spec.width % s or spec.height % s:
        raise InvalidSpecError(
            f"frame dims {spec.width}x{spec.height} not divisible by s={s}")
    frames = synth.synth_scene(spec, seed=int(cfg["seed"]))
    out_dir = Path(args.out_dir)
    manifest = dataset.write_sequence(frames, spec.intrinsics, out_dir,
                                      depth_unit=cfg["depth_unit"],
                                      clip_range=spec.clip_range)
    print(f"wrote {len(frames)} frames to {out_dir}")
    print(f"manifest: {manifest.root / dataset.MANIFEST_NAME}")
    return 0


# ---------------------------------------------------------------- simulate

def _view_dirs(intr, h, w):
    us, vs = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    d = np.stack([(us - intr.cx) / intr.fx, (vs - intr.cy) / intr.fy,
                  np.ones_like(us)], axis=-1)
    return -d / np.linalg.norm(d, axis=-1, keepdims=True)


def cmd_simulate(args) -> int:
    cfg = _resolve(args, SIMULATE_DEFAULTS)
    manifest = dataset.SequenceManifest.load(args.manifest)
    s = int(cfg["s"])
    frames = dataset.load_sequence(manifest, require_multiple_of=s)
    axis = _axis_from(cfg)
    pulse = _pulse_from(cfg)
    radiance_mode = (RadianceMode.GRAYSCALE_APPROX if cfg["radiance"] == "gray"
                     else RadianceMode.PHYSICAL_RENDERING)
    noise = None
    if cfg["photon_budget"] is not None:
        noise = ShotNoise(float(cfg["photon_budget"]), int(cfg["seed"]))
    config = SensorConfig(downsample_factor=s, axis=axis, pulse=pulse,
                          radiance_mode=radiance_mode, shot_noise=noise)
    mode = SensorMode.HISTOGRAM if cfg["mode"] == "hist" else SensorMode.PEAK

    if radiance_mode == RadianceMode.PHYSICAL_RENDERING:
        missing = [i for i, f in enumerate(frames)
                   if f.normal is None or f.albedo is None]
        if missing:
            raise MissingLayerError(
                "physical radiance requires normal and albedo layers "
                f"(missing for frames {missing})")

    out_dir = Path(args.out_dir)
    dtof_dir = out_dir / "dtof"
    dtof_dir.mkdir(parents=True, exist_ok=True)

    view = _view_dirs(manifest.intrinsics, *frames[0].depth.shape)

    def run(item):
        idx, frame = item
        if radiance_mode == RadianceMode.GRAYSCALE_APPROX:
            radiance = grayscale_radiance(frame.rgb)
        else:
            radiance = radiance_map(frame.albedo, frame.normal, view,
                                    frame.depth)
        return simulate_frame(frame.depth, radiance, config, mode,
                              frame_index=idx)

    results = _map_indexed(run, list(enumerate(frames)), int(cfg["workers"]))
    for idx, dtof in enumerate(results):
        if mode == SensorMode.HISTOGRAM:
            fileio.write_dtfh(dtof_dir / f"frame_{idx:04d}.dtfh", dtof.hist,
                              axis)
        else:
            depth = np.where(dtof.valid, dtof.peak_depth, 0.0)
            fileio.write_depth_png16(dtof_dir / f"frame_{idx:04d}_peak.png",
                                     depth)
    _write_run_summary(out_dir, "simulate_config.json", {
        "mode": cfg["mode"], "radiance": cfg["radiance"], "k": axis.num_bins,
        "t0_ns": axis.bin_width * 1e9, "s": s, "pulse": cfg["pulse"],
        "fwhm_ns": cfg["fwhm_ns"], "photon_budget": cfg["photon_budget"],
        "seed": cfg["seed"], "frames": len(frames)})
    print(f"wrote {len(frames)} dToF frames to {dtof_dir}")
    return 0


# ---------------------------------------------------------------- superres

def _dtof_paths(dtof_dir: Path, count: int):
    hist = [dtof_dir / f"frame_{i:04d}.dtfh" for i in range(count)]
    peak = [dtof_dir / f"frame_{i:04d}_peak.png" for i in range(count)]
    if all(p.is_file() for p in hist):
        return hist, True
    if all(p.is_file() for p in peak):
        return peak, False
    raise FileMissingError(
        f"{dtof_dir}: expected one dToF file per manifest frame")


def _lowres_depth(path: Path, is_hist: bool):
    if is_hist:
        volume, axis = fileio.read_dtfh(path)
        valid = volume.sum(axis=-1) > 0
        k = volume.argmax(axis=-1)
        return np.where(valid, axis.bin_center_depth(k), 0.0)
    return fileio.read_depth_png16(path)


def cmd_superres(args) -> int:
    cfg = _resolve(args, SUPERRES_DEFAULTS)
    method = cfg["method"]
    if method not in SUPERRES_METHODS:
        raise BadConfigError(f"unknown method {method!r}")
    manifest = dataset.SequenceManifest.load(args.manifest)
    frames = dataset.load_sequence(manifest)
    dtof_dir = Path(args.dtof_dir)
    if (dtof_dir / "dtof").is_dir():
        dtof_dir = dtof_dir / "dtof"
    paths, is_hist = _dtof_paths(dtof_dir, len(frames))
    if method.startswith("candidate") and not is_hist:
        raise MethodUnavailableError(
            f"method {method!r} requires histogram-mode input")

    params = superres.BilateralParams(
        spatial_sigma=float(cfg["spatial_sigma"]),
        range_sigma=float(cfg["range_sigma"]),
        window_radius=float(cfg["window_radius"]))
    h, w = frames[0].depth.shape

    temporal = method == "candidate+temporal"
    if temporal and any(f.flow is None for f in frames[:-1]):
        print("warning: flow layers missing, falling back to per-frame "
              "candidate prediction", file=sys.stderr)
        temporal = False

    def predict(item):
        idx, frame = item
        if method in ("nearest", "bilinear"):
            lowres = _lowres_depth(paths[idx], is_hist)
            s = h // lowres.shape[0]
            return superres.upsample_baseline(lowres, s, method), None
        if method == "bilateral":
            lowres = _lowres_depth(paths[idx], is_hist)
            s = h // lowres.shape[0]
            return superres.guided_bilateral_upsample(
                lowres, frame.rgb, params, s), None
        volume, axis = fileio.read_dtfh(paths[idx])
        grid = compress_grid(volume, axis, int(cfg["m"]),
                             float(cfg["noise_floor"]))
        return superres.candidate_select_upsample(grid, frame.rgb, params)

    results = _map_indexed(predict, list(enumerate(frames)),
                           int(cfg["workers"]))
    if temporal:
        fused = []
        prev = None
        for idx, (depth, conf) in enumerate(results):
            if prev is None:
                prev = (depth, conf)
            else:
                prev = superres.temporal_fuse(prev[0], prev[1],
                                              frames[idx - 1].flow, depth,
                                              conf, decay=float(cfg["decay"]))
            fused.append(prev)
        results = fused

    out_dir = Path(args.out_dir)
    pred_dir = out_dir / "pred"
    pred_dir.mkdir(parents=True, exist_ok=True)
    for idx, (depth, conf) in enumerate(results):
        fileio.write_pfm(pred_dir / f"frame_{idx:04d}.pfm", depth)
        if conf is not None:
            fileio.write_pfm(pred_dir / f"frame_{idx:04d}_conf.pfm", conf)
    _write_run_summary(out_dir, "superres_config.json", {
        "method": method, "m": cfg["m"], "noise_floor": cfg["noise_floor"],
        "sigma_d": cfg["sigma_d"], "spatial_sigma": cfg["spatial_sigma"],
        "range_sigma": cfg["range_sigma"],
        "window_radius": cfg["window_radius"], "decay": cfg["decay"],
        "temporal": temporal, "frames": len(frames)})
    print(f"wrote {len(results)} predictions to {pred_dir}")
    return 0


# --------------------------------------------------------------------- eval

def cmd_eval(args) -> int:
    cfg = _resolve(args, EVAL_DEFAULTS)
    manifest = dataset.SequenceManifest.load(args.manifest)
    frames = dataset.load_sequence(manifest)
    pred_dir = Path(args.pred_dir)
    if (pred_dir / "pred").is_dir():
        pred_dir = pred_dir / "pred"
    preds = []
    for idx in range(len(frames)):
        path = pred_dir / f"frame_{idx:04d}.pfm"
        if not path.is_file():
            raise FileMissingError(str(path))
        preds.append(fileio.read_pfm(path))

    wanted = cfg["metrics"]
    if wanted != "auto":
        wanted = [m.strip() for m in wanted.split(",")] if isinstance(
            wanted, str) else list(wanted)
        unknown = set(wanted) - {"ae", "delta", "tepe"}
        if unknown:
            raise BadConfigError(f"unknown metrics: {sorted(unknown)}")
    flow_ok = all(f.flow is not None for f in frames[:-1]) and len(frames) > 1
    if wanted == "auto":
        do_tepe = flow_ok
    else:
        do_tepe = "tepe" in wanted
        if do_tepe and not flow_ok:
            raise MissingFlowError("TEPE requested but flow is unavailable")

    taus = [float(t) for t in cfg["tau"]]
    report = metrics.MetricReport()
    for idx, (frame, pred) in enumerate(zip(frames, preds)):
        mask = (frame.depth > 0) & (pred > 0)
        ae = metrics.abs_error(frame.depth, pred, mask)
        delta = {t: metrics.delta_metric(frame.depth, pred, t, mask)
                 for t in taus}
        tepe_mm = None
        if do_tepe and idx + 1 < len(frames):
            tepe_mm = metrics.tepe(frame.depth, frames[idx + 1].depth, pred,
                                   preds[idx + 1], frame.flow)
        report.frames.append(metrics.FrameMetrics(
            idx, ae, delta, int(mask.sum()), tepe_mm))
    report.write(args.out_file)
    agg = report.aggregate()
    line = agg.format_line().split(" ", 1)[1]
    print(f"aggregate {line}")
    print(f"report: {args.out_file}")
    return 0


# ------------------------------------------------------------------ inspect

def cmd_inspect(args) -> int:
    cfg = _resolve(args, INSPECT_DEFAULTS)
    volume, axis = fileio.read_dtfh(args.dtof_file)
    i, j = (int(x) for x in cfg["pixel"])
    rows, cols = volume.shape[:2]
    if not (0 <= i < rows and 0 <= j < cols):
        raise BadConfigError(f"pixel ({i}, {j}) outside grid {rows}x{cols}")
    hist = Histogram(axis, volume[i, j])
    print(f"grid {rows}x{cols}, K={axis.num_bins}, "
          f"t0={axis.bin_width * 1e9:.6f} ns, "
          f"depth/bin={axis.depth_per_bin * 1000:.3f} mm")
    print(f"pixel ({i}, {j}): total mass {hist.total_mass:.6f}")
    nz = np.flatnonzero(hist.mass)
    for k in nz[:20]:
        print(f"  bin {int(k):5d}  depth {axis.bin_center_depth(k):8.4f} m  "
              f"mass {hist.mass[k]:.6f}")
    if len(nz) > 20:
        print(f"  ... {len(nz) - 20} more nonzero bins")
    if hist.total_mass > 0:
        k, depth, mass = peak_detect(hist)
        print(f"peak: bin {k}, depth {depth:.4f} m, mass {mass:.6f}")
        comp = compress_grid(volume[i:i + 1, j:j + 1], axis, int(cfg["m"]),
                             float(cfg["noise_floor"])).cell(0, 0)
        print(f"compressed (M={cfg['m']}): edges {comp.edges.tolist()}")
        print(f"  mass {[round(float(x), 6) for x in comp.mass]}")
        print(f"  peak depths {[round(float(x), 4) for x in comp.peak_depths]}")
    if cfg["ref"] is not None:
        ref_volume, ref_axis = fileio.read_dtfh(cfg["ref"])
        ref = Histogram(ref_axis, ref_volume[i, j])
        dist = wasserstein_distance(hist, ref)
        print(f"distance to reference: {dist:.6f} bins")
    return 0


# --------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dtofsr",
        description="dToF sensor simulation, histogram super-resolution "
                    "baselines and evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="render a synthetic RGB-D sequence")
    p.add_argument("spec", help="scene spec JSON")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.add_argument("--s", type=int, help="sensor downsampling factor to "
                   "validate frame dims against")
    p.add_argument("--depth-unit", dest="depth_unit",
                   choices=dataset.DEPTH_UNITS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("simulate", help="simulate low-resolution dToF frames")
    p.add_argument("manifest")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--mode", choices=("hist", "peak"))
    p.add_argument("--radiance", choices=("gray", "physical"))
    p.add_argument("--k", type=int)
    p.add_argument("--t0-ns", dest="t0_ns", type=float)
    p.add_argument("--s", type=int)
    p.add_argument("--pulse", choices=("delta", "gaussian"))
    p.add_argument("--fwhm-ns", dest="fwhm_ns", type=float)
    p.add_argument("--photon-budget", dest="photon_budget", type=float)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("superres", help="super-resolve dToF frames")
    p.add_argument("manifest")
    p.add_argument("dtof_dir")
    p.add_argument("out_dir")
    p.add_argument("--config")
    p.add_argument("--method", choices=SUPERRES_METHODS)
    p.add_argument("--m", type=int)
    p.add_argument("--noise-floor", dest="noise_floor", type=float)
    p.add_argument("--sigma-d", dest="sigma_d", type=float)
    p.add_argument("--spatial-sigma", dest="spatial_sigma", type=float)
    p.add_argument("--range-sigma", dest="range_sigma", type=float)
    p.add_argument("--window-radius", dest="window_radius", type=float)
    p.add_argument("--decay", type=float)
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_superres)

    p = sub.add_parser("eval", help="evaluate predictions against ground truth")
    p.add_argument("manifest")
    p.add_argument("pred_dir")
    p.add_argument("out_file")
    p.add_argument("--config")
    p.add_argument("--tau", type=float, nargs="+")
    p.add_argument("--metrics", help="comma list of ae,delta,tepe or 'auto'")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect", help="print a stored histogram")
    p.add_argument("dtof_file")
    p.add_argument("--config")
    p.add_argument("--pixel", type=int, nargs=2)
    p.add_argument("--m", type=int)
    p.add_argument("--noise-floor", dest="noise_floor", type=float)
    p.add_argument("--ref")
    p.set_defaults(func=cmd_inspect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except DtofError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: IoFailure: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
