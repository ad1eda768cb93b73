"""
Latent Space Element Method - Entry Point

Trains reusable element surrogates for 1D Burgers and KdV and assembles them
into larger domains. Run ``python backend/main.py --help`` for subcommands.
"""

import sys

from app.cli import main

if __name__ == "__main__":
    sys.exit(main())
