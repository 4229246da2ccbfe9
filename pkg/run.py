#!/usr/bin/env python3
"""
Quick start script for Edge Market

Runs the command-line interface from a source checkout without installing.
"""

import sys
from pathlib import Path

# Add src to path if running directly
src_path = Path(__file__).parent / "src"
if src_path.exists():
    sys.path.insert(0, str(src_path))

from edge_market.main import start_app  # noqa: E402

if __name__ == "__main__":
    sys.exit(start_app())
