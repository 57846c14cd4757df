//! The simulation harness: presets, sweeps over sample size, rate fits,
//! total variation checks and figures.

pub mod plot;
pub mod presets;
pub mod rate;
pub mod sweep;
pub mod tv;

pub use plot::{LogLogPlot, PlotPoint};
pub use presets::{preset, ModelId};
pub use rate::{fit_power_law, fit_rate, RateFit, RateReport};
pub use sweep::{
    log_spaced, run_sweep, run_sweep_with_threads, ExperimentConfig, Exclusion, LossChoice, ModelSpec, Profile, SummaryRow, SweepResult,
    SweepRow, CONFIG_SCHEMA,
};
pub use tv::{tv_distance, TvEstimate, TvMethod};
