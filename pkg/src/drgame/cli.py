"""Command-line entry point."""
from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, parse_config
from .runner import MANIFEST_NAME, run


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="drgame",
                                description="Solve and audit a mixed zero-sum stochastic game.")
    p.add_argument("--config", required=True, type=Path, help="YAML run configuration")
    p.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
    p.add_argument("--threads", type=int, default=1,
                   help="worker threads for path simulation; results do not depend on it")
    p.add_argument("--dump-paths", action="store_true", help="also write per-path CSVs")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.threads < 1:
        print("drgame: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(args.config.read_text())
    except (OSError, ConfigError) as exc:
        print(f"drgame: {exc}", file=sys.stderr)
        return 2
    manifest = run(cfg, args.out, threads=args.threads, dump_paths=args.dump_paths)
    for t in manifest.tasks:
        line = f"{t['task']:<18} {t['status']:<8} {t.get('seconds', 0.0):7.2f}s"
        if "error" in t:
            line += f"  {t['error']}"
        print(line)
    out = args.out or cfg.output_dir or "drgame-out"
    print(f"manifest: {Path(out) / MANIFEST_NAME}")
    return manifest.exit_code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
