"""
services/__main__.py
====================
Usage:
    python -m services run --mock services/tests/fixtures/mini --out runs/mini
"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
