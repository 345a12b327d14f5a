from regime_tta import (
    core,
    data_processing,
    datagen,
    forecast,
    harness,
    memory,
    policies,
    similarity,
    stats,
)

__version__ = "0.1.0"
