"""Desk-scale RGB-D vision-language-action stack: simulator, policy, and training harness."""

import os as _os

# Every matrix in this stack is tiny; multithreaded BLAS only adds sync
# overhead (30x slowdowns observed on 2-core hosts). Env vars cover the
# not-yet-imported case, threadpoolctl the already-imported one.
_os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")
_os.environ.setdefault("MKL_NUM_THREADS", "1")
_os.environ.setdefault("OMP_NUM_THREADS", "1")

try:
    import threadpoolctl as _threadpoolctl

    _threadpoolctl.threadpool_limits(limits=1, user_api="blas")
except Exception:  # pragma: no cover - best effort; env vars already set
    pass

__version__ = "0.1.0"
