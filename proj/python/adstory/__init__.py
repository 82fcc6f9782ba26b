"""Climax detection and evoked-sentiment modeling for video ads."""

from ._core import (
    AdstoryError,
    __version__,
    average_precision,
    checkpoint_info,
    climax_probabilities,
    climax_recall,
    dense_flow,
    extract_files,
    extract_signals,
    flow_magnitude,
    heuristic_baseline,
    histogram_distance,
    longest_run_centers,
    predict,
    read_signals,
    run_cli,
    sigmoid_ce,
    softmax_ce,
    synthesize,
    top_k_peaks,
)

__all__ = [
    "AdstoryError",
    "__version__",
    "average_precision",
    "checkpoint_info",
    "climax_probabilities",
    "climax_recall",
    "dense_flow",
    "extract_files",
    "extract_signals",
    "flow_magnitude",
    "heuristic_baseline",
    "histogram_distance",
    "longest_run_centers",
    "predict",
    "read_signals",
    "run_cli",
    "sigmoid_ce",
    "softmax_ce",
    "synthesize",
    "top_k_peaks",
]
