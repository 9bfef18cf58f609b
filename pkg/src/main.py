# filepath: peak-contribution-module/src/main.py
import sys

from peak_contribution.cli import main

if __name__ == "__main__":
    sys.exit(main())
