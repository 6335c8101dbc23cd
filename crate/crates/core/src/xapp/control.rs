//! Latency estimation, offset calibration and the slack-band control rule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::detect::FrameEstimate;
use crate::ids::{SliceId, UeId};

/// Minimum number of aligned frames for offset calibration.
pub const MIN_CALIBRATION_FRAMES: usize = 30;

#[derive(Debug, Error, PartialEq)]
pub enum CalibrationError {
    #[error("length mismatch: {estimated} estimates vs {truth} observations")]
    LengthMismatch { estimated: usize, truth: usize },
    #[error("need at least {MIN_CALIBRATION_FRAMES} frames, got {0}")]
    TooFewFrames(usize),
}

/// Mean estimated latency over the frames of one control interval.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Average { latency_ms: f64, frames: usize },
    NoObservation,
}

impl Observation {
    pub fn latency_ms(&self) -> Option<f64> {
        match self {
            Observation::Average { latency_ms, .. } => Some(*latency_ms),
            Observation::NoObservation => None,
        }
    }

    pub fn frames(&self) -> usize {
        match self {
            Observation::Average { frames, .. } => *frames,
            Observation::NoObservation => 0,
        }
    }
}

pub fn estimate_average_latency(frames: &[FrameEstimate], offset_ms: f64) -> Observation {
    if frames.is_empty() {
        return Observation::NoObservation;
    }
    let sum: f64 = frames.iter().map(|f| f.transmission_ms + offset_ms).sum();
    Observation::Average {
        latency_ms: sum / frames.len() as f64,
        frames: frames.len(),
    }
}

/// Mean difference between observed end-to-end latency and estimated
/// transmission time, over frames aligned by index.
pub fn calibrate_offset(estimated: &[f64], ground_truth: &[f64]) -> Result<f64, CalibrationError> {
    if estimated.len() != ground_truth.len() {
        return Err(CalibrationError::LengthMismatch {
            estimated: estimated.len(),
            truth: ground_truth.len(),
        });
    }
    if estimated.len() < MIN_CALIBRATION_FRAMES {
        return Err(CalibrationError::TooFewFrames(estimated.len()));
    }
    let sum: f64 = ground_truth.iter().zip(estimated).map(|(t, e)| t - e).sum();
    Ok(sum / estimated.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Decision {
    Increase,
    Decrease,
    Hold,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlDecision {
    pub value: Decision,
    pub average_latency_ms: Option<f64>,
    pub frames_observed: usize,
}

/// Increase above `target + slack`, decrease below `target - slack`, hold on
/// the band edges and inside it.
pub fn control_rule(average_ms: f64, target_ms: f64, slack_ms: f64) -> Decision {
    if average_ms > target_ms + slack_ms {
        Decision::Increase
    } else if average_ms < target_ms - slack_ms {
        Decision::Decrease
    } else {
        Decision::Hold
    }
}

/// Per-slice controller state.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HandlerState {
    pub slice_id: SliceId,
    pub ue_id: UeId,
    pub target_ms: f64,
    pub slack_ms: f64,
    pub offset_ms: f64,
    pub fps: u32,
    pub current_rbgs: usize,
    pub min_rbgs: usize,
    pub max_rbgs: usize,
}

impl HandlerState {
    pub fn check(&self) -> bool {
        self.min_rbgs <= self.current_rbgs && self.current_rbgs <= self.max_rbgs && self.slack_ms > 0.0
    }
}

pub fn control_decision(obs: &Observation, state: &HandlerState) -> ControlDecision {
    debug_assert!(state.check(), "handler state out of bounds: {state:?}");
    match *obs {
        Observation::NoObservation => ControlDecision {
            value: Decision::Hold,
            average_latency_ms: None,
            frames_observed: 0,
        },
        Observation::Average { latency_ms, frames } => ControlDecision {
            value: control_rule(latency_ms, state.target_ms, state.slack_ms),
            average_latency_ms: Some(latency_ms),
            frames_observed: frames,
        },
    }
}

/// A request for a latency-guaranteed slice for one video stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceRequest {
    pub bitrate_bps: f64,
    pub fps: u32,
    pub requested_latency_ms: f64,
    pub ue_id: UeId,
}

impl SliceRequest {
    pub fn is_valid(&self) -> bool {
        self.bitrate_bps.is_finite()
            && self.bitrate_bps > 0.0
            && self.fps > 0
            && self.requested_latency_ms.is_finite()
            && self.requested_latency_ms > 0.0
    }
}

/// The controller's view of the carrier for admission.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CapacityModel {
    pub rbg_count: usize,
    pub mean_bits_per_rbg_per_tti: f64,
}

impl CapacityModel {
    pub fn rate_bps_per_rbg(&self) -> f64 {
        self.mean_bits_per_rbg_per_tti * 1000.0
    }

    /// RBGs needed to carry `bitrate_bps` on average.
    pub fn rbgs_for(&self, bitrate_bps: f64) -> usize {
        (bitrate_bps / self.rate_bps_per_rbg()).ceil() as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialReason {
    OverCapacity,
    InvalidRequest,
}

/// RBG bounds for an admitted slice.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AdmissionPlan {
    pub min_rbgs: usize,
    pub initial_rbgs: usize,
    pub max_rbgs: usize,
}

/// Accepts iff the requested bitrate fits in `rbg_count - best_effort_floor` RBGs.
pub fn admit(
    req: &SliceRequest,
    capacity: &CapacityModel,
    headroom_rbgs: usize,
    best_effort_floor: usize,
) -> Result<AdmissionPlan, DenialReason> {
    if !req.is_valid() {
        return Err(DenialReason::InvalidRequest);
    }
    let max_rbgs = capacity.rbg_count.saturating_sub(best_effort_floor);
    if req.bitrate_bps > max_rbgs as f64 * capacity.rate_bps_per_rbg() {
        return Err(DenialReason::OverCapacity);
    }
    let min_rbgs = capacity.rbgs_for(req.bitrate_bps).min(max_rbgs);
    Ok(AdmissionPlan {
        min_rbgs,
        initial_rbgs: (min_rbgs + headroom_rbgs).min(max_rbgs),
        max_rbgs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(transmission_ms: f64) -> FrameEstimate {
        FrameEstimate {
            start_ms: 0,
            end_ms: 0,
            size_bits: 1,
            transmission_ms,
            est_latency_ms: transmission_ms,
        }
    }

    fn state() -> HandlerState {
        HandlerState {
            slice_id: "s".into(),
            ue_id: "vr".into(),
            target_ms: 10.0,
            slack_ms: 1.0,
            offset_ms: 0.0,
            fps: 60,
            current_rbgs: 10,
            min_rbgs: 8,
            max_rbgs: 24,
        }
    }

    #[test]
    fn average_of_one_frame() {
        let obs = estimate_average_latency(&[frame(4.0)], 5.0);
        assert_eq!(
            obs,
            Observation::Average {
                latency_ms: 9.0,
                frames: 1
            }
        );
    }

    #[test]
    fn average_of_three_frames() {
        let obs = estimate_average_latency(&[frame(2.0), frame(4.0), frame(6.0)], 5.0);
        assert_eq!(obs.latency_ms(), Some(9.0));
        assert_eq!(obs.frames(), 3);
    }

    #[test]
    fn no_frames_no_observation() {
        assert_eq!(estimate_average_latency(&[], 5.0), Observation::NoObservation);
    }

    #[test]
    fn calibration_constant_difference() {
        let est = vec![4.0; 40];
        let truth = vec![9.0; 40];
        assert_eq!(calibrate_offset(&est, &truth), Ok(5.0));
        assert_eq!(calibrate_offset(&est, &est), Ok(0.0));
    }

    #[test]
    fn calibration_errors() {
        assert_eq!(
            calibrate_offset(&[1.0; 30], &[1.0; 31]),
            Err(CalibrationError::LengthMismatch {
                estimated: 30,
                truth: 31
            })
        );
        assert_eq!(
            calibrate_offset(&[1.0; 29], &[1.0; 29]),
            Err(CalibrationError::TooFewFrames(29))
        );
    }

    #[test]
    fn decisions() {
        let s = state();
        let d = |v| {
            control_decision(
                &Observation::Average {
                    latency_ms: v,
                    frames: 60,
                },
                &s,
            )
            .value
        };
        assert_eq!(d(12.0), Decision::Increase);
        assert_eq!(d(9.3), Decision::Hold);
        assert_eq!(d(8.5), Decision::Decrease);
        let none = control_decision(&Observation::NoObservation, &s);
        assert_eq!(none.value, Decision::Hold);
        assert_eq!(none.frames_observed, 0);
    }

    fn capacity() -> CapacityModel {
        CapacityModel {
            rbg_count: 25,
            mean_bits_per_rbg_per_tti: 1360.0,
        }
    }

    fn request(bitrate_bps: f64) -> SliceRequest {
        SliceRequest {
            bitrate_bps,
            fps: 60,
            requested_latency_ms: 10.0,
            ue_id: "vr".into(),
        }
    }

    #[test]
    fn admission_of_ten_megabit_stream() {
        let plan = admit(&request(10e6), &capacity(), 2, 1).unwrap();
        assert_eq!(
            plan,
            AdmissionPlan {
                min_rbgs: 8,
                initial_rbgs: 10,
                max_rbgs: 24
            }
        );
    }

    #[test]
    fn admission_denials() {
        assert_eq!(
            admit(&request(50e6), &capacity(), 2, 1),
            Err(DenialReason::OverCapacity)
        );
        assert_eq!(
            admit(&request(0.0), &capacity(), 2, 1),
            Err(DenialReason::InvalidRequest)
        );
        let mut bad = request(10e6);
        bad.fps = 0;
        assert_eq!(admit(&bad, &capacity(), 2, 1), Err(DenialReason::InvalidRequest));
        bad = request(10e6);
        bad.requested_latency_ms = -1.0;
        assert_eq!(admit(&bad, &capacity(), 2, 1), Err(DenialReason::InvalidRequest));
    }

    #[test]
    fn headroom_clamped_at_max() {
        let plan = admit(&request(32e6), &capacity(), 2, 1).unwrap();
        assert_eq!(plan.initial_rbgs, 24);
        assert_eq!(plan.min_rbgs, 24);
    }
}
