#!/usr/bin/env python3
"""Write the bundled scenario configs to configs/ as standalone JSON files."""

import json
import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from mcdesign.cli import BUNDLED  # noqa: E402


def main():
    outdir = os.path.join(os.path.dirname(__file__), "..", "configs")
    os.makedirs(outdir, exist_ok=True)
    for name, cfg in BUNDLED.items():
        path = os.path.join(outdir, f"{name}.json")
        with open(path, "w") as fh:
            json.dump(cfg, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
