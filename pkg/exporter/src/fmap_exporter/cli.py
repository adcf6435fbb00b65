"""CLI: `fmap-export export --spec spec.json`."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fmap-export",
        description="export backbone feature maps to an FMAP scenario tree",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_export = sub.add_parser("export", help="run an export spec")
    p_export.add_argument("--spec", required=True, help="ExportSpec JSON file")
    args = parser.parse_args(argv)

    from .datasets import DatasetError
    from .export import ExportSpec, export

    try:
        doc = json.loads(Path(args.spec).read_text(encoding="utf-8"))
        spec = ExportSpec.from_dict(doc)
        manifest = export(spec)
    except (ValueError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    except (DatasetError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 3
    sys.stdout.write(json.dumps({"manifest": str(manifest)}) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
