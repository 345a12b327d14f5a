"""
Streaming evaluation protocol
"""
from regime_tta.harness import metrics, runner

from .metrics import METRIC_NAMES, Metrics, compute_metrics
from .runner import (
    RunRecord,
    StreamAbortedError,
    initial_span,
    iter_batches,
    n_batches,
    pretrain,
    pretrain_or_abort,
    run_stream,
    truth_digest,
)
