#!/usr/bin/env python3
"""
Launcher for the mobo-sr command line (`python run.py run mobo.toml`)
"""

import sys

from app.main import main

if __name__ == "__main__":
    sys.exit(main())
