"""Speech-feature driven emotional facial motion toolkit.

Single-threaded BLAS is pinned before numpy loads so repeated runs with the
same seed produce byte-identical artifacts.
"""

import os as _os

for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
    _os.environ.setdefault(_var, "1")

__version__ = "0.1.0"
