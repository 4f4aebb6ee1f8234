from .config import ConfigError, ExperimentConfig, defaults
from .sweep import (
    Curve,
    VarianceTable,
    curve_from_records,
    load_curves,
    manifest_hash,
    run_sweep,
    select_best_alpha,
    smooth,
    table_from_manifest,
    variance_table,
    write_aggregates,
)
