#!/usr/bin/env python3
"""
Debug launcher for the ShapeLinker engine

Runs any sub-command with verbose logging by setting the
SHAPELINKER_DEBUG environment variable before the loggers are configured.

Usage:
    python debug.py surface data/benzene.xyz --out out/surface

Alternative debug methods:
    python main.py <command> --debug          # Command line flag
    python main.py <command> -d               # Short flag
    SHAPELINKER_DEBUG=true python main.py <command>  # Environment variable

Debug mode enables:
- Per-sample scoring and filtering detail
- Surface sampling diagnostics
- Checkpoint and file I/O traces
"""

import os
import sys

# Set debug mode via environment variable
os.environ['SHAPELINKER_DEBUG'] = 'true'

if __name__ == "__main__":
    print("🐛 Debug mode enabled via debug.py launcher", file=sys.stderr)
    from cli.app import main
    sys.exit(main())
