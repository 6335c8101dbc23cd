//! Line-delimited JSON codec for the RIC boundary.
//!
//! One object per line, discriminated by `"t"`:
//!
//! ```text
//! {"t":"mac","tti":12,"ue":"vr","bits":24480}
//! {"t":"ctl","kind":"realloc","slice":"s1","rbgs":16,"epoch":9}
//! {"t":"ack","epoch":9}
//! {"t":"nack","epoch":9,"reason":"insufficient RBGs"}
//! {"t":"req","bitrate":10000000.0,"fps":60,"latency_ms":10.0,"ue":"vr"}
//! {"t":"del","slice":"s1"}
//! ```

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{ControlKind, ControlReply, MacSample, SliceControlMsg};
use crate::ids::{SliceId, UeId};

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CtlKind {
    Create,
    Delete,
    Realloc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "t", rename_all = "lowercase")]
pub enum WireMsg {
    Mac {
        tti: u64,
        ue: UeId,
        bits: u64,
    },
    Ctl {
        kind: CtlKind,
        slice: SliceId,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rbgs: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ue: Option<UeId>,
        epoch: u64,
    },
    Ack {
        epoch: u64,
    },
    Nack {
        epoch: u64,
        reason: String,
    },
    Req {
        bitrate: f64,
        fps: u32,
        latency_ms: f64,
        ue: UeId,
    },
    Del {
        slice: SliceId,
    },
}

pub fn encode_line(msg: &WireMsg) -> String {
    serde_json::to_string(msg).expect("wire messages always serialize")
}

pub fn decode_line(line: &str) -> Result<WireMsg, WireError> {
    Ok(serde_json::from_str(line.trim_end())?)
}

impl From<&MacSample> for WireMsg {
    fn from(s: &MacSample) -> Self {
        WireMsg::Mac {
            tti: s.tti_ms,
            ue: s.ue_id.clone(),
            bits: s.bits_sent,
        }
    }
}

impl From<&SliceControlMsg> for WireMsg {
    fn from(m: &SliceControlMsg) -> Self {
        WireMsg::Ctl {
            kind: match m.kind {
                ControlKind::Create => CtlKind::Create,
                ControlKind::Delete => CtlKind::Delete,
                ControlKind::Reallocate => CtlKind::Realloc,
            },
            slice: m.slice_id.clone(),
            rbgs: m.rbg_count,
            ue: m.ue_id.clone(),
            epoch: m.epoch,
        }
    }
}

impl From<&ControlReply> for WireMsg {
    fn from(r: &ControlReply) -> Self {
        match r {
            ControlReply::Ack { epoch } => WireMsg::Ack { epoch: *epoch },
            ControlReply::Nack { epoch, reason } => WireMsg::Nack {
                epoch: *epoch,
                reason: reason.to_string(),
            },
        }
    }
}

impl TryFrom<WireMsg> for MacSample {
    type Error = WireError;

    fn try_from(msg: WireMsg) -> Result<Self, Self::Error> {
        match msg {
            WireMsg::Mac { tti, ue, bits } => Ok(MacSample {
                tti_ms: tti,
                ue_id: ue,
                bits_sent: bits,
            }),
            other => Err(WireError::Invalid(format!("expected mac sample, got {other:?}"))),
        }
    }
}

impl TryFrom<WireMsg> for SliceControlMsg {
    type Error = WireError;

    fn try_from(msg: WireMsg) -> Result<Self, Self::Error> {
        match msg {
            WireMsg::Ctl {
                kind,
                slice,
                rbgs,
                ue,
                epoch,
            } => Ok(SliceControlMsg {
                kind: match kind {
                    CtlKind::Create => ControlKind::Create,
                    CtlKind::Delete => ControlKind::Delete,
                    CtlKind::Realloc => ControlKind::Reallocate,
                },
                slice_id: slice,
                rbg_count: rbgs,
                ue_id: ue,
                epoch,
            }),
            other => Err(WireError::Invalid(format!("expected control message, got {other:?}"))),
        }
    }
}

/// A bidirectional message stream over any reader/writer pair, e.g. the two
/// halves of a `UnixStream` or `TcpStream`.
pub struct WireStream<R, W> {
    reader: R,
    writer: W,
    buf: String,
}

impl<R: BufRead, W: Write> WireStream<R, W> {
    pub fn new(reader: R, writer: W) -> Self {
        Self {
            reader,
            writer,
            buf: String::new(),
        }
    }

    pub fn send(&mut self, msg: &WireMsg) -> Result<(), WireError> {
        let mut line = encode_line(msg);
        line.push('\n');
        self.writer.write_all(line.as_bytes())?;
        self.writer.flush()?;
        Ok(())
    }

    /// Next message, or `None` at end of stream. Blank lines are skipped.
    pub fn recv(&mut self) -> Result<Option<WireMsg>, WireError> {
        loop {
            self.buf.clear();
            if self.reader.read_line(&mut self.buf)? == 0 {
                return Ok(None);
            }
            if !self.buf.trim().is_empty() {
                return decode_line(&self.buf).map(Some);
            }
        }
    }
}
