"""Compiled kernels vs the numpy fallback; see ``herdsim.bench``."""

import sys

from herdsim.bench import main

if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
