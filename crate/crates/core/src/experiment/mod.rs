//! Scenario runner: wires traffic, simulator, bridge and controller together
//! and reduces a run to per-second metrics.

pub mod config;
pub mod run;
pub mod summary;

use thiserror::Error;

pub use config::{ChannelParams, ExperimentConfig, Scenario, TraceSource};
pub use run::{output_path, run_scenario, simulate, FrameRecord, MetricsRow, RunOutput, BULK_UE, VR_UE};
pub use summary::{
    compare_static_equivalent, gain_pct, load_sweep, nearest_rank, read_metrics, summarize, summarize_rows, Comparison,
    RunSummary, Stats,
};

use crate::bridge::BridgeError;
use crate::ran_sim::SimError;
use crate::traffic::TraceError;
use crate::xapp::{CalibrationError, DenialReason, XappError};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("slice request denied: {0:?}")]
    AdmissionDenied(DenialReason),
    #[error("no usable rows in {0}")]
    EmptyMetrics(String),
    #[error("offset calibration failed: {0}")]
    Calibration(#[from] CalibrationError),
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
    #[error(transparent)]
    Xapp(#[from] XappError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
