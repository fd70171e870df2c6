"""Technical trading rule backtests and SPA bootstrap tests."""

from ._core import (
    PriceSeries,
    RulespaError,
    calibrate,
    describe_rule,
    family_counts,
    format_pvalue,
    generate_positions,
    load_csv,
    long_run_variance,
    parse_csv,
    performance_matrix,
    rolling_windows,
    run_experiment,
    simple_returns,
    spa_pvalue,
    spa_sweep,
    synthetic_series,
    universe_labels,
    universe_size,
)

__all__ = [
    "PriceSeries",
    "RulespaError",
    "calibrate",
    "describe_rule",
    "family_counts",
    "format_pvalue",
    "generate_positions",
    "load_csv",
    "long_run_variance",
    "parse_csv",
    "performance_matrix",
    "rolling_windows",
    "run_experiment",
    "simple_returns",
    "spa_pvalue",
    "spa_sweep",
    "synthetic_series",
    "universe_labels",
    "universe_size",
]
