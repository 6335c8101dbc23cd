//! Sliced cellular downlink simulator and a latency-steering slice controller.
//!
//! The crate is split along the same lines as a real deployment:
//!
//! - [`ran_sim`]: a 1 ms TTI downlink MAC with 25 RBGs partitioned between slices.
//! - [`traffic`]: VR frame-trace playback and a full-buffer background flow.
//! - [`bridge`]: the RIC boundary. Per-millisecond MAC samples go out, slice
//!   control commands come in. [`wire`] holds the line-delimited JSON codec.
//! - [`xapp`]: frame detection from MAC samples, latency estimation, the
//!   slack-band control rule and the allocation controller.
//! - [`experiment`]: scenario runner, per-second telemetry and summaries.

pub mod bridge;
pub mod experiment;
pub mod ids;
pub mod ran_sim;
pub mod traffic;
pub mod wire;
pub mod xapp;

pub use ids::{SliceId, UeId};

/// Number of resource block groups on the 20 MHz carrier (100 RBs in groups of 4).
pub const NUM_RBGS: usize = 25;

/// RBs per RBG.
pub const RBS_PER_RBG: usize = 4;
