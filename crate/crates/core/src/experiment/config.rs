use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::bridge::BridgeMode;
use crate::ran_sim::{DEFAULT_FRAGMENT_BITS, DEFAULT_MEAN_BITS_PER_RBG};
use crate::traffic::BurstProfile;
use crate::xapp::XappConfig;

use super::ExperimentError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scenario {
    NoSlicing,
    Static { rbgs: usize },
    DataDriven { target_ms: f64, slack_ms: f64 },
}

impl Scenario {
    /// File-name friendly label, e.g. `static-18` or `data-driven-10-1`.
    pub fn slug(&self) -> String {
        match self {
            Scenario::NoSlicing => "no-slicing".into(),
            Scenario::Static { rbgs } => format!("static-{rbgs}"),
            Scenario::DataDriven { target_ms, slack_ms } => format!("data-driven-{target_ms}-{slack_ms}"),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::NoSlicing => f.write_str("no-slicing"),
            Scenario::Static { rbgs } => write!(f, "static:{rbgs}"),
            Scenario::DataDriven { target_ms, slack_ms } => write!(f, "data-driven:{target_ms}:{slack_ms}"),
        }
    }
}

impl FromStr for Scenario {
    type Err = ExperimentError;

    /// `no-slicing`, `static:<rbgs>` or `data-driven:<target_ms>[:<slack_ms>]`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ExperimentError::InvalidConfig(format!("unrecognized scenario `{s}`"));
        let mut parts = s.split(':');
        match parts.next() {
            Some("no-slicing") if parts.next().is_none() => Ok(Scenario::NoSlicing),
            Some("static") => {
                let rbgs = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Scenario::Static { rbgs })
            }
            Some("data-driven") => {
                let target_ms = parts.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
                let slack_ms = match parts.next() {
                    Some(v) => v.parse().map_err(|_| bad())?,
                    None => 1.0,
                };
                if parts.next().is_some() {
                    return Err(bad());
                }
                Ok(Scenario::DataDriven { target_ms, slack_ms })
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum TraceSource {
    /// Generated for the run's duration; the seed is derived from the run seed.
    Synth {
        fps: u32,
        bitrate_bps: f64,
        profile: BurstProfile,
    },
    File {
        path: PathBuf,
        fps: u32,
    },
}

impl Default for TraceSource {
    fn default() -> Self {
        TraceSource::Synth {
            fps: 60,
            bitrate_bps: 10e6,
            profile: BurstProfile::Cyclic {
                amplitude: 0.35,
                period_s: 150.0,
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    pub mean_bits_per_rbg_per_tti: f64,
    pub variation: f64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            mean_bits_per_rbg_per_tti: DEFAULT_MEAN_BITS_PER_RBG,
            variation: 0.1,
        }
    }
}

fn default_transport_delay() -> u64 {
    2
}

fn default_true() -> bool {
    true
}

fn default_fragment_bits() -> u64 {
    DEFAULT_FRAGMENT_BITS
}

fn default_calibration_s() -> u32 {
    5
}

fn default_trim_s() -> u32 {
    10
}

/// Everything needed to reproduce one run. Serializes to the JSON config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub duration_s: u32,
    pub seed: u64,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub trace: TraceSource,
    pub out_dir: PathBuf,
    /// Fixed server-to-base-station delay added to every VR frame.
    #[serde(default = "default_transport_delay")]
    pub transport_delay_ms: u64,
    #[serde(default = "default_true")]
    pub strict_isolation: bool,
    #[serde(default = "default_fragment_bits")]
    pub fragment_bits: u64,
    #[serde(default)]
    pub bridge: BridgeMode,
    #[serde(default)]
    pub xapp: XappConfig,
    /// Uncontended warm-up over which the latency offset is calibrated.
    #[serde(default = "default_calibration_s")]
    pub calibration_s: u32,
    /// Seconds dropped from the start of a run in summaries.
    #[serde(default = "default_trim_s")]
    pub trim_s: u32,
}

impl ExperimentConfig {
    pub fn new(scenario: Scenario, duration_s: u32, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            scenario,
            duration_s,
            seed,
            channel: ChannelParams::default(),
            trace: TraceSource::default(),
            out_dir: out_dir.into(),
            transport_delay_ms: default_transport_delay(),
            strict_isolation: true,
            fragment_bits: DEFAULT_FRAGMENT_BITS,
            bridge: BridgeMode::Lockstep,
            xapp: XappConfig::default(),
            calibration_s: default_calibration_s(),
            trim_s: default_trim_s(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let invalid = |m: String| Err(ExperimentError::InvalidConfig(m));
        if self.duration_s < 60 {
            return invalid(format!("duration {} s is below 60 s", self.duration_s));
        }
        if let Scenario::Static { rbgs } = self.scenario {
            if !(1..=24).contains(&rbgs) {
                return invalid(format!("static allocation {rbgs} outside [1, 24]"));
            }
        }
        if let Scenario::DataDriven { target_ms, slack_ms } = self.scenario {
            if !(target_ms.is_finite() && slack_ms.is_finite() && target_ms > 0.0 && slack_ms > 0.0) {
                return invalid(format!("target {target_ms} ms / slack {slack_ms} ms must be positive"));
            }
        }
        if self.calibration_s == 0 || self.calibration_s >= self.duration_s {
            return invalid(format!("calibration window {} s", self.calibration_s));
        }
        if self.fragment_bits == 0 {
            return invalid("fragment size must be positive".into());
        }
        Ok(())
    }
}
