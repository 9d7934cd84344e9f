"""Kernel corrector LSTM: an LSTM forecaster that repairs its own training data.

Phase 1 trains an LSTM on the training part of a series. Its hidden states
are kernel-smoothed; positions whose state diverges (DTW) from the smoothed
estimate are flagged and their values nudged until the state agrees. Phase 3
retrains on the corrected series.
"""
__version__ = "0.1.0"

from .corrector import CorrectionConfig, CorrectionReport, kclstm_fit, run_correction
from .data_io import TimeSeries, load_m4_csv, synthesize, synthetic_corpus
from .errors import (
    DataFormatError,
    DimensionError,
    DivergenceError,
    KcLstmError,
    TraceStateError,
    UndefinedMaseError,
)
from .evaluation import EvalReport, benchmark, diebold_mariano, mase
from .lstm_core import LstmModel, TrainConfig, forecast, train
from .state_dynamics import HiddenTrace, SmoothingConfig, dtw_distance, smooth_trace

__all__ = [
    "CorrectionConfig", "CorrectionReport", "DataFormatError", "DimensionError",
    "DivergenceError", "EvalReport", "HiddenTrace", "KcLstmError", "LstmModel",
    "SmoothingConfig", "TimeSeries", "TrainConfig", "TraceStateError",
    "UndefinedMaseError", "benchmark", "diebold_mariano", "dtw_distance", "forecast",
    "kclstm_fit", "load_m4_csv", "mase", "run_correction", "smooth_trace",
    "synthesize", "synthetic_corpus", "train",
]
