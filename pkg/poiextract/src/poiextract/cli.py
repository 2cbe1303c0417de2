"""Command line entry point.

Exit codes: 0 on success, 1 when extraction fails, 2 for usage errors.
"""

import argparse
import sys

from .extract import ExtractionError, ExtractionJob, METHODS, extract


def build_parser():
    parser = argparse.ArgumentParser(
        prog="extract",
        description="Convert an image directory to descriptor-interchange files.",
    )
    parser.add_argument("--method", required=True, choices=sorted(METHODS))
    parser.add_argument("--in", dest="in_dir", required=True, metavar="DIR")
    parser.add_argument("--out", required=True, metavar="DIR")
    parser.add_argument("--manifest", required=True, metavar="FILE")
    parser.add_argument("--coords", action="store_true",
                        help="also write per-image x,y keypoint files")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    job = ExtractionJob(
        in_dir=args.in_dir,
        method=args.method,
        out_dir=args.out,
        manifest_path=args.manifest,
        coords=args.coords,
    )
    try:
        report = extract(job)
    except (ExtractionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    total = sum(count for _, count in report.rows)
    print(
        f"wrote {len(report.rows)} descriptor files ({total} descriptors, "
        f"method={report.method}), skipped {len(report.skipped)}"
    )
    print(report.manifest_path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
