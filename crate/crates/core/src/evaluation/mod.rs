//! Reference metrics, dataset reports and the throughput benchmark.

mod benchmark;
mod metrics;
mod report;

pub use benchmark::{
    benchmark, random_frame, time_forward, BenchmarkLadder, BenchmarkReport, LadderStep, StepReport, Timing,
};
pub use metrics::{gaussian_window, mse, psnr, ssim, PSNR_CAP_DB, SSIM_SIGMA, SSIM_WINDOW};
pub use report::{
    evaluate_dataset, median, Aggregates, ColumnStats, Environment, EvalSource, MetricsReport, MetricsRow,
};
