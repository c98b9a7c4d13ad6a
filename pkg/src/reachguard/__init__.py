"""Safe model-based reinforcement learning with distributional reachability certificates."""

import os as _os

__version__ = "0.1.0"

if _os.environ.get("REACHGUARD_DETERMINISTIC", "") not in ("", "0"):
    # single-threaded BLAS so reductions happen in a fixed order
    for _var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS",
                 "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
        _os.environ[_var] = "1"

from .errors import (CheckpointError, ConfigurationError, ConvergenceError,  # noqa: E402
                     DataError, EnvError, NumericalError, ReachGuardError, UsageError)

__all__ = ["CheckpointError", "ConfigurationError", "ConvergenceError", "DataError", "EnvError",
           "NumericalError", "ReachGuardError", "UsageError", "__version__"]
