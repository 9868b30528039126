"""Command-line entry point: embed-export."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .encoders import EncoderUnavailableError, UnknownEncoderError, DEFAULT_ENCODER
from .export import ExportJob, export
from .video import DecodeError

EXIT_OK = 0
EXIT_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="embed-export",
        description="encode video frames and a query string to embedding files",
    )
    p.add_argument("--video", type=Path, required=True)
    p.add_argument("--query", type=str, required=True)
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--fps", type=float, default=1.0)
    p.add_argument("--encoder", type=str, default=DEFAULT_ENCODER)
    p.add_argument("--video-id", type=str, default="", help="default: video stem")
    p.add_argument("--query-id", type=str, default="", help="default: video id")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        job = ExportJob(
            video=args.video,
            query=args.query,
            out_dir=args.out,
            fps=args.fps,
            encoder=args.encoder,
            video_id=args.video_id,
            query_id=args.query_id,
        )
        print("resolved config:")
        for key in ("video", "query", "out_dir", "fps", "encoder", "video_id", "query_id"):
            print(f"  {key} = {getattr(job, key)}")
        result = export(job)
    except (DecodeError, EncoderUnavailableError, UnknownEncoderError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(f"wrote {result.frames_path} ({result.n_frames} x {result.dim})")
    print(f"wrote {result.query_path} (1 x {result.dim})")
    print(f"wrote {result.stub_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
