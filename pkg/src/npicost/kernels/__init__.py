"""Hot numerical kernels with a compiled core and a pure-Python fallback.

The compiled extension is preferred when importable; set NPICOST_FORCE_PYTHON=1
to force the fallback (used by the parity tests and the benchmark).
"""

from __future__ import annotations

import os

from . import _ref

_impl = _ref
if not os.environ.get("NPICOST_FORCE_PYTHON"):
    try:
        from . import _speedups as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _ref

BACKEND: str = _impl.BACKEND

DynamicsError = _impl.DynamicsError
seird_step = _impl.seird_step
seird_simulate = _impl.seird_simulate
misreport_adjust = _impl.misreport_adjust
zinb_logpmf = _impl.zinb_logpmf
zinb_loglik = _impl.zinb_loglik
case_means = _impl.case_means
weekly_covariates = _impl.weekly_covariates
weekly_log_predictor = _impl.weekly_log_predictor
policy_simulate = _impl.policy_simulate
extract_shocks = _impl.extract_shocks
stage1_logpost_grad = _impl.stage1_logpost_grad

__all__ = [
    "BACKEND",
    "DynamicsError",
    "seird_step",
    "seird_simulate",
    "misreport_adjust",
    "zinb_logpmf",
    "zinb_loglik",
    "case_means",
    "weekly_covariates",
    "weekly_log_predictor",
    "policy_simulate",
    "extract_shocks",
    "stage1_logpost_grad",
]
