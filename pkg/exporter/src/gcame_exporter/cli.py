"""Command-line wrapper around the capture exporter."""

import argparse
import sys

from .export import ExportSpec, export_capture


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gcame-export", description=__doc__)
    p.add_argument("--model", required=True, help="model name (mini-one-stage, mini-two-stage)")
    p.add_argument("--image", required=True, help="input image path")
    p.add_argument("--out", required=True, help="capture directory to write")
    p.add_argument("--checkpoint", help="state_dict checkpoint to load")
    p.add_argument("--detection", type=int, default=0, help="detection rank to explain (score-sorted)")
    p.add_argument("--detection-class", type=int, help="select by class + best IoU against --gt-box instead")
    p.add_argument("--gt-box", help="x1,y1,x2,y2 ground-truth box (pixels)")
    p.add_argument("--gt-class", type=int, help="ground-truth class id recorded in the manifest")
    p.add_argument("--layers", help="comma-separated module names to record (defaults per model)")
    p.add_argument("--num-classes", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tag", default="", help="free-text modelTag for the manifest")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    gt_box = None
    if args.gt_box:
        parts = [float(v) for v in args.gt_box.split(",")]
        if len(parts) != 4:
            print("error: --gt-box needs x1,y1,x2,y2", file=sys.stderr)
            return 2
        gt_box = tuple(parts)
    spec = ExportSpec(
        model=args.model,
        image=args.image,
        out_dir=args.out,
        checkpoint=args.checkpoint,
        detection_index=None if args.detection_class is not None else args.detection,
        detection_class=args.detection_class,
        gt_box=gt_box,
        gt_class=args.gt_class,
        target_layers=tuple(s.strip() for s in args.layers.split(",")) if args.layers else (),
        num_classes=args.num_classes,
        seed=args.seed,
        model_tag=args.tag,
    )
    try:
        result = export_capture(spec)
    except (ValueError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    print(
        f"exported {result.directory}: detection box={tuple(round(v, 1) for v in result.detection.box)} "
        f"class={result.detection.class_id} score={result.detection.score:.4f}; layers {result.layer_ids}"
    )
    return 0


if __name__ == "__main__":
    sys.exit(main())
