"""予測スキルスコアと、その pointwise / Bonferroni / sup-t 信頼バンド。"""
from __future__ import annotations

__version__ = "0.1.0"

from .asymptotics import (
    EquicorrSpec,
    asymptotic_coverage,
    asymptotic_table,
    bonferroni_asymptotic_coverage,
    equicoordinate_quantile,
    equicoordinate_quantile_independent,
    pointwise_asymptotic_coverage,
    width_ratio_bonf_vs_supt,
    width_ratio_supt_vs_pointwise,
)
from .bands import (
    BandConfig,
    BandResult,
    average_band_width,
    band_report,
    bootstrap_bands,
    bootstrap_replicates,
    default_block_length,
    moving_block_resample,
    normal_quantile,
)
from .errors import (
    CompletenessError,
    DegenerateBenchmarkError,
    DuplicateKeyError,
    InvalidInputError,
    PanelParseError,
    SkillBandsError,
    ZeroSigmaError,
)
from .panel import (
    ComparisonSelector,
    DimensionSpec,
    ScorePanel,
    average_scores,
    relative_accuracy_from_means,
    select_target,
    skill_from_means,
)
from .panel_io import load_forecasts, load_panel, score_forecasts, write_panel
from .scoring import (
    aggregate_scores,
    brier_score,
    crps_ensemble,
    energy_score_ensemble,
    multivariate_squared_error,
    quantile_score,
    score_ensemble,
    squared_error,
)
from .simulation import (
    CoverageCell,
    CoverageGrid,
    Var1Config,
    coverage_table,
    pivot_coverage_table,
    run_coverage_experiment,
    simulate_var1_scores,
)

__all__ = [
    "BandConfig",
    "BandResult",
    "ComparisonSelector",
    "CompletenessError",
    "CoverageCell",
    "CoverageGrid",
    "DegenerateBenchmarkError",
    "DimensionSpec",
    "DuplicateKeyError",
    "EquicorrSpec",
    "InvalidInputError",
    "PanelParseError",
    "ScorePanel",
    "SkillBandsError",
    "Var1Config",
    "ZeroSigmaError",
    "aggregate_scores",
    "asymptotic_coverage",
    "asymptotic_table",
    "average_band_width",
    "average_scores",
    "band_report",
    "bonferroni_asymptotic_coverage",
    "bootstrap_bands",
    "bootstrap_replicates",
    "brier_score",
    "coverage_table",
    "crps_ensemble",
    "default_block_length",
    "energy_score_ensemble",
    "equicoordinate_quantile",
    "equicoordinate_quantile_independent",
    "load_forecasts",
    "load_panel",
    "moving_block_resample",
    "multivariate_squared_error",
    "normal_quantile",
    "pivot_coverage_table",
    "pointwise_asymptotic_coverage",
    "quantile_score",
    "relative_accuracy_from_means",
    "run_coverage_experiment",
    "score_ensemble",
    "score_forecasts",
    "select_target",
    "simulate_var1_scores",
    "skill_from_means",
    "squared_error",
    "width_ratio_bonf_vs_supt",
    "width_ratio_supt_vs_pointwise",
    "write_panel",
]
