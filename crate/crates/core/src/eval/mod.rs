//! Metrics, fixture generation and evaluation reports.

pub mod fixtures;
pub mod metrics;
pub mod report;

pub use fixtures::{
    generate_fixtures, generate_samples, samples_to_fixture_set, FixtureSpec, Manifest,
};
pub use metrics::{perceptual_metric, psnr, ssim, PSNR_CAP_DB};
pub use report::{evaluate, EvalConfig, MetricReport, MetricRow};
