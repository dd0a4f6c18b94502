"""Command-line entry point: explain | evaluate | sanity | selftest.

Exit codes: 0 success, 1 failed selftest check, 2 invalid input,
3 no-signal warning under --strict. All outputs are deterministic for fixed
flags and seed; timing fields are informational only.
"""

import argparse
import json
import os
import sys
import time

import numpy as np

from . import __version__, backend_name, metrics
from .capture_io import (
    CaptureError,
    HeatmapStyle,
    load_npy,
    read_capture,
    render_heatmap,
    save_npy,
    to_uint8_image,
    write_weights,
)
from .evaluation import evaluate_capture, evaluate_toy_suite, explain_capture_default
from .fixtures import make_fixture, parse_fixture_name
from .sanity import RandomizationPlan, sanity_report
from .saliency import explain_detection
from .selftest import run_selftest
from .toy_detector import build_blob_detector, iou_xyxy, layer_ids

EXIT_OK = 0
EXIT_CHECK_FAILED = 1
EXIT_INVALID = 2
EXIT_NO_SIGNAL = 3


class InputError(Exception):
    pass


def _atomic_write_bytes(path: str, payload: bytes) -> None:
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def _write_json(path: str, obj) -> None:
    _atomic_write_bytes(path, json.dumps(obj, indent=2, sort_keys=True).encode() + b"\n")


def _emit(args, obj, human_lines):
    if args.json:
        print(json.dumps(obj, indent=2, sort_keys=True))
    else:
        for line in human_lines:
            print(line)


def _parse_layers(spec: str | None):
    if not spec:
        return None
    return [s.strip() for s in spec.split(",") if s.strip()]


def _require_out(args) -> str:
    out = args.out or "gcame-out"
    os.makedirs(out, exist_ok=True)
    return out


# ------------------------------------------------------------------ explain

def cmd_explain(args) -> int:
    if bool(args.toy) == bool(args.capture):
        raise InputError("explain needs exactly one of --toy or --capture")
    layers = _parse_layers(args.layers)
    t0 = time.perf_counter()
    gt_boxes = []
    if args.toy:
        fx = make_fixture(args.toy, seed=args.seed)
        detector = build_blob_detector(fx.config)
        dets, cache = detector.forward(fx.image)
        if not dets:
            raise InputError(f"fixture {args.toy!r} yields no detections to explain")
        det = dets[0]
        result = explain_detection(detector, cache, det, target_layers=layers, mode=args.mode or "one_stage")
        image_u8 = to_uint8_image(fx.image)
        gt_boxes = [(g.box, g.class_id) for g in fx.ground_truth]
        source_desc = {"toy": args.toy}
    else:
        capture = read_capture(args.capture)
        result, det = explain_capture_default(capture, target_layers=layers, mode=args.mode)
        image_u8 = capture.image
        if capture.ground_truth:
            gt_boxes = list(capture.ground_truth)
        source_desc = {"capture": args.capture}
    elapsed_ms = (time.perf_counter() - t0) * 1000.0

    out = _require_out(args)
    save_npy(os.path.join(out, "saliency.npy"), result.values)
    _atomic_write_bytes(os.path.join(out, "heatmap.png"), render_heatmap(image_u8, result.values, HeatmapStyle()))
    summary = {
        "command": "explain",
        "source": source_desc,
        "backend": backend_name(),
        "mode": args.mode,
        "detection": {
            "box": [float(v) for v in det.box],
            "classId": det.class_id,
            "score": det.score,
        },
        "layersUsed": list(result.layers),
        "noSignal": result.empty,
        "version": __version__,
        "timingMs": elapsed_ms,
    }
    if gt_boxes:
        best_box, _ = max(gt_boxes, key=lambda g: iou_xyxy(det.box, g[0]))
        summary["pgHit"] = metrics.pointing_game(result.values, best_box)
        summary["ebpg"] = metrics.ebpg(result.values, best_box)
    _write_json(os.path.join(out, "summary.json"), summary)
    _emit(
        args,
        summary,
        [
            f"explained detection box={det.box} class={det.class_id} score={det.score:.4f}",
            f"layers used: {', '.join(result.layers) or '(none)'}",
            f"outputs in {out} ({elapsed_ms:.1f} ms, backend {backend_name()})",
        ]
        + (["WARNING: no gradient signal; saliency map is all zeros"] if result.empty else []),
    )
    if result.empty and args.strict:
        return EXIT_NO_SIGNAL
    return EXIT_OK


# ----------------------------------------------------------------- evaluate

def cmd_evaluate(args) -> int:
    if bool(args.toy) == bool(args.capture):
        raise InputError("evaluate needs exactly one of --toy or --capture")
    if args.toy:
        kind, n, size = parse_fixture_name(args.toy)
        if kind != "suite":
            raise InputError("evaluate --toy expects a suite fixture, e.g. suite:50 or suite:50:128")
        if n < 1:
            raise InputError("empty evaluation suite")
        report, _ = evaluate_toy_suite(
            n=n, seed=args.seed, size=size or 64, keep_fraction=args.keep_fraction, quality=args.quality
        )
    else:
        entries = []
        root = args.capture
        if not os.path.isdir(root):
            raise InputError(f"capture root {root!r} is not a directory")
        for name in sorted(os.listdir(root)):
            sub = os.path.join(root, name)
            if not os.path.isdir(sub) or not os.path.isfile(os.path.join(sub, "manifest.json")):
                continue
            sal_path = os.path.join(sub, "saliency.npy")
            if not os.path.isfile(sal_path):
                raise InputError(f"capture {sub} has no saliency.npy; run `gcame explain --capture` first")
            capture = read_capture(sub)
            entries.append(
                evaluate_capture(capture, load_npy(sal_path), keep_fraction=args.keep_fraction, quality=args.quality)
            )
        if not entries:
            raise InputError(f"no evaluable captures under {root!r}")
        report = metrics.build_report(entries)
    doc = report.to_json_dict()
    out = _require_out(args)
    _write_json(os.path.join(out, "report.json"), doc)
    _emit(
        args,
        doc,
        [
            f"n={doc['n']} (tiny: {doc['nTiny']})",
            f"PG:   {doc['pg']:.4f}" + (f"   tiny: {doc['pgTiny']:.4f}" if doc["pgTiny"] is not None else ""),
            f"EBPG: {doc['ebpg']:.4f}" + (f"   tiny: {doc['ebpgTiny']:.4f}" if doc["ebpgTiny"] is not None else ""),
            f"average drop %: {fmt_opt(doc['averageDropPercent'])}",
            f"information drop %: {fmt_opt(doc['informationDropPercent'])}",
            f"report written to {out}/report.json",
        ],
    )
    return EXIT_OK


def fmt_opt(v):
    return "n/a" if v is None else f"{v:.4f}"


# ------------------------------------------------------------------- sanity

def cmd_sanity(args) -> int:
    if args.capture:
        raise InputError("sanity needs a reweightable model; captures are not supported")
    fixture_name = args.toy or "one-square"
    fx = make_fixture(fixture_name, seed=args.seed)
    detector = build_blob_detector(fx.config)
    dets, cache = detector.forward(fx.image)
    if not dets:
        raise InputError(f"fixture {fixture_name!r} yields no detections")
    det = dets[0]
    plans = []
    for mode in ("cascading", "independent"):
        for i, lid in enumerate(layer_ids(fx.config)):
            plans.append(RandomizationPlan(mode=mode, target_layer=lid, seed=args.seed * 1000 + i))
    report = sanity_report(detector, fx.image, det, plans)

    out = _require_out(args)
    save_npy(os.path.join(out, "original.npy"), report.original.values)
    rows = {"cascading": [], "independent": []}
    entries_doc = []
    image_u8 = to_uint8_image(fx.image)
    style = HeatmapStyle()
    for entry in report.entries:
        tag = f"{entry.plan.mode}_{entry.plan.target_layer}"
        save_npy(os.path.join(out, f"{tag}.npy"), entry.saliency.values)
        rows[entry.plan.mode].append(entry.saliency.values)
        entries_doc.append(
            {
                "mode": entry.plan.mode,
                "layer": entry.plan.target_layer,
                "seed": entry.plan.seed,
                "pearson": entry.correlation,
            }
        )
    grid = _heatmap_grid(image_u8, report.original.values, rows, style)
    _atomic_write_bytes(os.path.join(out, "sanity.png"), grid)
    write_weights(detector, os.path.join(out, "weights"))
    doc = {
        "command": "sanity",
        "fixture": fixture_name,
        "seed": args.seed,
        "layers": layer_ids(fx.config),
        "entries": entries_doc,
    }
    _write_json(os.path.join(out, "sanity.json"), doc)
    lines = [f"{e['mode']:<12} {e['layer']:<10} pearson {e['pearson']: .4f}" for e in entries_doc]
    _emit(args, doc, lines + [f"grid and per-plan maps written to {out}"])
    return EXIT_OK


def _heatmap_grid(image_u8, original, rows, style) -> bytes:
    import io

    from PIL import Image

    def decode(sal):
        return np.asarray(Image.open(io.BytesIO(render_heatmap(image_u8, sal, style))).convert("RGB"))

    panel_rows = []
    for mode in ("cascading", "independent"):
        panels = [decode(original)] + [decode(s) for s in rows[mode]]
        panel_rows.append(np.concatenate(panels, axis=1))
    width = max(r.shape[1] for r in panel_rows)
    padded = [
        np.pad(r, ((0, 0), (0, width - r.shape[1]), (0, 0)), constant_values=255) for r in panel_rows
    ]
    grid = np.concatenate(padded, axis=0)
    buf = io.BytesIO()
    Image.fromarray(grid.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


# ----------------------------------------------------------------- selftest

def cmd_selftest(args) -> int:
    results = run_selftest(corrupt=args.corrupt)
    doc = {
        "command": "selftest",
        "backend": backend_name(),
        "checks": [{"name": r.name, "passed": r.passed, "detail": r.detail} for r in results],
        "passed": all(r.passed for r in results),
    }
    if args.out:
        _write_json(os.path.join(_require_out(args), "selftest.json"), doc)
    _emit(
        args,
        doc,
        [f"[{'PASS' if r.passed else 'FAIL'}] {r.name}: {r.detail}" for r in results]
        + [f"{sum(r.passed for r in results)}/{len(results)} checks passed"],
    )
    return EXIT_OK if doc["passed"] else EXIT_CHECK_FAILED


# -------------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcame", description=__doc__)
    p.add_argument("--version", action="version", version=f"gcame {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--capture", metavar="DIR", help="capture directory (or root, for evaluate)")
        sp.add_argument("--toy", metavar="FIXTURE", help="toy fixture name (one-square, two-squares, mosaic, suite:N[:SIZE])")
        sp.add_argument("--layers", metavar="A,B,C", help="comma-separated target layer ids")
        sp.add_argument(
            "--mode",
            choices=("one_stage", "two_stage"),
            default=None,
            help="center location mode; defaults to one_stage, or two_stage for captures without source cells",
        )
        sp.add_argument("--keep-fraction", type=float, default=0.2, dest="keep_fraction")
        sp.add_argument("--quality", type=int, default=75)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", metavar="DIR")
        sp.add_argument("--json", action="store_true")
        sp.add_argument("--strict", action="store_true")

    for name, fn in (("explain", cmd_explain), ("evaluate", cmd_evaluate), ("sanity", cmd_sanity), ("selftest", cmd_selftest)):
        sp = sub.add_parser(name)
        common(sp)
        if name == "selftest":
            sp.add_argument("--corrupt", action="store_true", help=argparse.SUPPRESS)
        sp.set_defaults(fn=fn)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except (InputError, CaptureError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
