//! Configuration-driven sweeps: Monte Carlo grids, breakdown curves and the
//! calcium detection run, with seeded data and a content-addressed model cache.

mod breakdown;
mod calcium_run;
mod config;
mod montecarlo;

pub use breakdown::{breakdown_map, log_grid, write_breakdown_csv, BreakdownPoint};
pub use calcium_run::{
    calcium_datasets, calcium_models_cached, load_calcium_models, roc_is_monotone, run_calcium, save_calcium_models,
    CalciumExperimentConfig, CalciumSummary,
};
pub use config::{
    apply_override, hash_value, load_config, load_json, ExperimentConfig, FriedSettings, KernelSpec, Layout,
    PwgdSettings, UnfoldedSettings,
};
pub use montecarlo::{
    evaluate_cell, reconstruct, run_experiment, train_cell, train_models, write_results, Cell, CellResult, Problem,
    Realization, Summary, TrainedModel,
};
