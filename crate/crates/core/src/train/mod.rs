//! Optimization loop, baselines, ablation variants, and diagnostics.

mod adam;
mod bench;
mod metrics;
mod model;
mod report;
mod run;
mod sweep;

pub use adam::{AdamConfig, OptimState};
pub use bench::{bench_scaling, scaling_ratios, BenchConfig, BenchRow};
pub use metrics::{evaluate, EvalMetrics};
pub use model::{
    argmax_rows, HeadKind, HopeModel, LinearBaselineHead, LossValues, Model, ModelPass, Predictor,
    Variant, AUX_LOSS_WEIGHT, ROUTER_TOP_K,
};
pub use report::{EpochRecord, ReportLine, SummaryRecord, TrainReport};
pub use run::{routing_diagnostics, train, RoutingDiagnostics, TrainOutcome, TrainSettings};
pub use sweep::{sweep, SweepEntry, SweepOutcome, SweepParam};
