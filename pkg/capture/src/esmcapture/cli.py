"""capture: dump per-layer linear-input activations to a tensor container."""

from __future__ import annotations

import argparse
import sys

from .capture import CaptureError, CaptureSpec, DirectorySource, SyntheticSource, capture


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="capture",
        description="Record the inputs of a transformer checkpoint's linear layers "
        "over a proxy sample set.",
    )
    parser.add_argument("--model", required=True, help="checkpoint container path")
    source = parser.add_mutually_exclusive_group(required=True)
    source.add_argument("--proxy", help="directory of .npy token matrices or images")
    source.add_argument("--synthetic", type=int, metavar="N",
                        help="generate N Gaussian token samples instead")
    parser.add_argument("--seed", type=int, default=0, help="seed for synthetic samples")
    parser.add_argument("--out", required=True, help="output container path")
    parser.add_argument("--include", action="append", default=None,
                        help="regex selecting which linear weights to capture (repeatable)")
    parser.add_argument("--count", type=int, default=32,
                        help="max samples taken from a proxy directory")
    parser.add_argument("--tokens", type=int, default=16,
                        help="tokens per synthetic sample")
    parser.add_argument("--grid", type=int, default=4,
                        help="patch grid per side for image proxies")
    parser.add_argument("--heads", type=int, default=1, help="attention head count")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.synthetic is not None:
        source = SyntheticSource(count=args.synthetic, tokens=args.tokens, seed=args.seed)
    else:
        source = DirectorySource(path=args.proxy, count=args.count, grid=args.grid)
    spec = CaptureSpec(
        model_path=args.model,
        source=source,
        output_path=args.out,
        include=tuple(args.include) if args.include else (r"weight$",),
        heads=args.heads,
    )
    try:
        captured = capture(spec)
    except CaptureError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    for key in sorted(captured):
        rows, width = captured[key].shape
        print(f"{key}\t{rows}x{width}")
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
