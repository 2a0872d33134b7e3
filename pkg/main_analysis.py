"""
EIT Monotonicity Analysis - Main Script
Runs one pipeline stage from a JSON run config

Usage:
1. Write a run config (see configs/ and README.md)
2. python main_analysis.py reconstruct --config configs/ball_corollary.json
3. Read the artifacts listed in <output_dir>/manifest.json
"""

import sys

from eitmono.cli import main

if __name__ == "__main__":
    sys.exit(main())
