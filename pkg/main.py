"""
rc-denoise - Main Entry Point
Truncated reservoir computing for denoising nonlinear dynamics
"""

import sys

from rc_denoise.cli import main

if __name__ == "__main__":
    sys.exit(main())
