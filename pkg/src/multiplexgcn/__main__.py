"""``python -m multiplexgcn`` / console-script entry.

``--deterministic`` must pin the threading environment before numpy loads,
so the numerical imports happen lazily inside :func:`entry`.
"""

import os
import sys


def _pin_threads_if_deterministic(argv):
    if "--deterministic" in argv:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, "1")


def entry():
    _pin_threads_if_deterministic(sys.argv[1:])
    from multiplexgcn.cli import main

    sys.exit(main())


if __name__ == "__main__":
    entry()
