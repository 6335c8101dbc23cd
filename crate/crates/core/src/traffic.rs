//! Traffic sources: VR frame-trace playback and a full-buffer background flow.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::UeId;
use crate::ran_sim::Packet;

/// Header of the trace CSV format.
pub const TRACE_HEADER: &str = "timestamp_ms,frame_bytes";

/// Per-frame size noise of the cyclic profile (uniform, relative).
pub const FRAME_JITTER: f64 = 0.10;

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    Parse { line: u64, reason: String },
    #[error("trace is empty")]
    Empty,
    #[error("invalid trace parameter: {0}")]
    InvalidParameter(String),
    #[error("empirical bitrate {empirical:.0} bit/s is not within 10% of declared {declared:.0} bit/s")]
    BitrateMismatch { empirical: f64, declared: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VrFrame {
    pub timestamp_ms: u64,
    pub size_bits: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VrTrace {
    fps: u32,
    frames: Vec<VrFrame>,
    declared_mean_bitrate_bps: f64,
}

impl VrTrace {
    /// Builds a trace, checking timestamp monotonicity, positive sizes and that
    /// the empirical bitrate is within 10% of the declared one.
    pub fn new(fps: u32, frames: Vec<VrFrame>, declared_mean_bitrate_bps: f64) -> Result<Self, TraceError> {
        if fps == 0 {
            return Err(TraceError::InvalidParameter("fps must be positive".into()));
        }
        if frames.is_empty() {
            return Err(TraceError::Empty);
        }
        for (i, w) in frames.windows(2).enumerate() {
            if w[1].timestamp_ms <= w[0].timestamp_ms {
                return Err(TraceError::InvalidParameter(format!(
                    "frame {} timestamp {} not after {}",
                    i + 1,
                    w[1].timestamp_ms,
                    w[0].timestamp_ms
                )));
            }
        }
        if let Some(f) = frames.iter().find(|f| f.size_bits == 0) {
            return Err(TraceError::InvalidParameter(format!(
                "frame at {} ms has zero size",
                f.timestamp_ms
            )));
        }
        let trace = Self {
            fps,
            frames,
            declared_mean_bitrate_bps,
        };
        let empirical = trace.empirical_bitrate_bps();
        if declared_mean_bitrate_bps.is_nan()
            || declared_mean_bitrate_bps <= 0.0
            || (empirical - declared_mean_bitrate_bps).abs() > 0.1 * declared_mean_bitrate_bps
        {
            return Err(TraceError::BitrateMismatch {
                empirical,
                declared: declared_mean_bitrate_bps,
            });
        }
        Ok(trace)
    }

    pub fn fps(&self) -> u32 {
        self.fps
    }

    pub fn frames(&self) -> &[VrFrame] {
        &self.frames
    }

    pub fn declared_mean_bitrate_bps(&self) -> f64 {
        self.declared_mean_bitrate_bps
    }

    /// Nominal playback length: one frame period per frame.
    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / f64::from(self.fps)
    }

    pub fn total_bits(&self) -> u64 {
        self.frames.iter().map(|f| f.size_bits).sum()
    }

    pub fn empirical_bitrate_bps(&self) -> f64 {
        self.total_bits() as f64 / self.duration_s()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), TraceError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["timestamp_ms", "frame_bytes"])?;
        for f in &self.frames {
            w.write_record([f.timestamp_ms.to_string(), f.size_bits.div_ceil(8).to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Reads a `timestamp_ms,frame_bytes` CSV. The declared bitrate is taken to be
/// the empirical one.
pub fn load_trace(path: impl AsRef<Path>, fps: u32) -> Result<VrTrace, TraceError> {
    parse_trace(File::open(path)?, fps)
}

pub fn parse_trace<R: Read>(input: R, fps: u32) -> Result<VrTrace, TraceError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != ["timestamp_ms", "frame_bytes"] {
        return Err(TraceError::Parse {
            line: 1,
            reason: format!("expected header `{TRACE_HEADER}`"),
        });
    }
    let mut frames: Vec<VrFrame> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TraceError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let field = |i: usize, name: &str| -> Result<u64, TraceError> {
            record
                .get(i)
                .ok_or_else(|| TraceError::Parse {
                    line,
                    reason: format!("missing {name}"),
                })?
                .parse::<u64>()
                .map_err(|e| TraceError::Parse {
                    line,
                    reason: format!("bad {name}: {e}"),
                })
        };
        let timestamp_ms = field(0, "timestamp_ms")?;
        let bytes = field(1, "frame_bytes")?;
        if bytes == 0 {
            return Err(TraceError::Parse {
                line,
                reason: "frame_bytes must be positive".into(),
            });
        }
        if let Some(prev) = frames.last() {
            if timestamp_ms <= prev.timestamp_ms {
                return Err(TraceError::Parse {
                    line,
                    reason: format!("timestamp {timestamp_ms} not after {}", prev.timestamp_ms),
                });
            }
        }
        frames.push(VrFrame {
            timestamp_ms,
            size_bits: bytes * 8,
        });
    }
    if frames.is_empty() {
        return Err(TraceError::Empty);
    }
    let total: u64 = frames.iter().map(|f| f.size_bits).sum();
    let declared = total as f64 * f64::from(fps) / frames.len() as f64;
    VrTrace::new(fps, frames, declared)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BurstProfile {
    Constant,
    /// Frame sizes follow `1 - amplitude * cos(2*pi*t / period)` with per-frame
    /// jitter: load starts at its trough and peaks half a period later.
    Cyclic {
        amplitude: f64,
        period_s: f64,
    },
}

/// Frame timestamp of the `i`-th frame on an integer-millisecond clock.
pub fn frame_timestamp_ms(i: u64, fps: u32) -> u64 {
    ((i as f64) * 1000.0 / f64::from(fps)).round() as u64
}

pub fn synth_vr_trace(
    fps: u32,
    mean_bitrate_bps: f64,
    profile: BurstProfile,
    seed: u64,
    duration_s: u32,
) -> Result<VrTrace, TraceError> {
    if fps == 0 || mean_bitrate_bps.is_nan() || mean_bitrate_bps <= 0.0 || duration_s == 0 {
        return Err(TraceError::InvalidParameter(format!(
            "fps {fps}, bitrate {mean_bitrate_bps}, duration {duration_s} s"
        )));
    }
    let n = u64::from(duration_s) * u64::from(fps);
    let per_frame = mean_bitrate_bps / f64::from(fps);
    let frames = match profile {
        BurstProfile::Constant => {
            let size = per_frame.round().max(1.0) as u64;
            (0..n)
                .map(|i| VrFrame {
                    timestamp_ms: frame_timestamp_ms(i, fps),
                    size_bits: size,
                })
                .collect()
        }
        BurstProfile::Cyclic { amplitude, period_s } => {
            if !(0.0..1.0).contains(&amplitude) || period_s.is_nan() || period_s <= 0.0 {
                return Err(TraceError::InvalidParameter(format!(
                    "cyclic profile amplitude {amplitude} period {period_s}"
                )));
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n)
                .map(|i| {
                    let t_s = frame_timestamp_ms(i, fps) as f64 / 1000.0;
                    let load = 1.0 - amplitude * (2.0 * PI * t_s / period_s).cos();
                    let jitter = 1.0 + FRAME_JITTER * rng.random_range(-1.0..1.0);
                    load * jitter
                })
                .collect();
            // pin the empirical mean to the target
            let scale = per_frame * n as f64 / raw.iter().sum::<f64>();
            raw.iter()
                .enumerate()
                .map(|(i, r)| VrFrame {
                    timestamp_ms: frame_timestamp_ms(i as u64, fps),
                    size_bits: (r * scale).round().max(1.0) as u64,
                })
                .collect()
        }
    };
    VrTrace::new(fps, frames, mean_bitrate_bps)
}

/// Splits a frame into MTU-sized fragments; only the last one may be short.
pub fn fragment_sizes(frame_bits: u64, mtu_bits: u64) -> impl Iterator<Item = u64> {
    let full = frame_bits / mtu_bits;
    let tail = frame_bits % mtu_bits;
    std::iter::repeat_n(mtu_bits, full as usize).chain((tail > 0).then_some(tail))
}

/// Plays a trace back into the MAC queue of one UE.
///
/// `transport_delay_ms` models the fixed server-to-eNB path: a frame stamped
/// `t` reaches the queue at `t + transport_delay_ms`.
#[derive(Clone, Debug)]
pub struct VrSource {
    ue_id: UeId,
    trace: VrTrace,
    fragment_bits: u64,
    transport_delay_ms: u64,
    next: usize,
}

impl VrSource {
    pub fn new(ue_id: UeId, trace: VrTrace, fragment_bits: u64, transport_delay_ms: u64) -> Self {
        assert!(fragment_bits > 0);
        Self {
            ue_id,
            trace,
            fragment_bits,
            transport_delay_ms,
            next: 0,
        }
    }

    pub fn trace(&self) -> &VrTrace {
        &self.trace
    }

    pub fn is_exhausted(&self) -> bool {
        self.next >= self.trace.frames.len()
    }

    /// Fragments of every frame due at `now_ms`; the frame index is the `frame_seq`.
    pub fn next_arrivals(&mut self, now_ms: u64) -> Vec<Packet> {
        let mut out = Vec::new();
        while let Some(frame) = self.trace.frames.get(self.next) {
            if frame.timestamp_ms + self.transport_delay_ms > now_ms {
                break;
            }
            let seq = self.next as u64;
            out.extend(
                fragment_sizes(frame.size_bits, self.fragment_bits).map(|size_bits| Packet {
                    ue_id: self.ue_id.clone(),
                    size_bits,
                    created_at_ms: now_ms,
                    frame_seq: Some(seq),
                }),
            );
            self.next += 1;
        }
        out
    }
}

/// iperf-style full-buffer flow: keeps its MAC queue at or above `target_bits`.
#[derive(Clone, Debug)]
pub struct FullBufferSource {
    ue_id: UeId,
    fragment_bits: u64,
    target_bits: u64,
}

impl FullBufferSource {
    /// `target_bits` should be at least one TTI of maximum carrier capacity.
    pub fn new(ue_id: UeId, fragment_bits: u64, target_bits: u64) -> Self {
        assert!(fragment_bits > 0);
        Self {
            ue_id,
            fragment_bits,
            target_bits,
        }
    }

    pub fn target_bits(&self) -> u64 {
        self.target_bits
    }

    pub fn next_arrivals(&mut self, now_ms: u64, queue_bits: u64) -> Vec<Packet> {
        let deficit = self.target_bits.saturating_sub(queue_bits);
        let count = deficit.div_ceil(self.fragment_bits);
        (0..count)
            .map(|_| Packet {
                ue_id: self.ue_id.clone(),
                size_bits: self.fragment_bits,
                created_at_ms: now_ms,
                frame_seq: None,
            })
            .collect()
    }
}
