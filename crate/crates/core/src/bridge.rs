//! Emulated near-RT RIC boundary.
//!
//! The bridge owns the simulated base station. Controllers see it only through
//! monitoring subscriptions (one [`MacSample`] per UE per TTI) and slice control
//! messages. In lockstep mode samples are delivered in the same TTI and control
//! is applied immediately (staged for the next TTI boundary). In decoupled mode
//! both directions go through a fixed delay line.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{SliceId, UeId};
use crate::ran_sim::{ConfigOutcome, Packet, RanSim, SimError, SliceConfig, SliceKind, TtiReport};

/// Downlink bits sent to one UE in one TTI. This is all a controller ever
/// learns about a UE's traffic.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacSample {
    pub tti_ms: u64,
    pub ue_id: UeId,
    pub bits_sent: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SubId(pub u64);

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subscription {
    pub sub_id: SubId,
    pub ue_id: UeId,
    pub period_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Delivery {
    pub sub_id: SubId,
    pub sample: MacSample,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ControlKind {
    Create,
    Delete,
    Reallocate,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceControlMsg {
    pub kind: ControlKind,
    pub slice_id: SliceId,
    pub rbg_count: Option<usize>,
    pub ue_id: Option<UeId>,
    pub epoch: u64,
}

impl SliceControlMsg {
    pub fn create(slice_id: SliceId, rbg_count: usize, ue_id: UeId, epoch: u64) -> Self {
        Self {
            kind: ControlKind::Create,
            slice_id,
            rbg_count: Some(rbg_count),
            ue_id: Some(ue_id),
            epoch,
        }
    }

    pub fn reallocate(slice_id: SliceId, rbg_count: usize, epoch: u64) -> Self {
        Self {
            kind: ControlKind::Reallocate,
            slice_id,
            rbg_count: Some(rbg_count),
            ue_id: None,
            epoch,
        }
    }

    pub fn delete(slice_id: SliceId, epoch: u64) -> Self {
        Self {
            kind: ControlKind::Delete,
            slice_id,
            rbg_count: None,
            ue_id: None,
            epoch,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum NackReason {
    InsufficientRbgs,
    UnknownSlice,
    SliceExists,
    UnknownUe,
    UeAlreadySliced,
    StaleEpoch,
    Malformed(String),
}

impl fmt::Display for NackReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            NackReason::InsufficientRbgs => f.write_str("insufficient RBGs"),
            NackReason::UnknownSlice => f.write_str("unknown slice"),
            NackReason::SliceExists => f.write_str("slice exists"),
            NackReason::UnknownUe => f.write_str("unknown UE"),
            NackReason::UeAlreadySliced => f.write_str("UE already in a dedicated slice"),
            NackReason::StaleEpoch => f.write_str("stale epoch"),
            NackReason::Malformed(m) => write!(f, "malformed: {m}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ControlReply {
    Ack { epoch: u64 },
    Nack { epoch: u64, reason: NackReason },
}

impl ControlReply {
    pub fn epoch(&self) -> u64 {
        match self {
            ControlReply::Ack { epoch } | ControlReply::Nack { epoch, .. } => *epoch,
        }
    }

    pub fn is_ack(&self) -> bool {
        matches!(self, ControlReply::Ack { .. })
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum BridgeError {
    #[error("unknown UE {0}")]
    UnknownUe(UeId),
    #[error("UE {0} already has a monitoring subscription")]
    DuplicateSubscription(UeId),
    #[error("unsupported monitoring period {0} ms (only 1 ms)")]
    UnsupportedPeriod(u64),
    #[error("unknown subscription {0:?}")]
    UnknownSubscription(SubId),
    #[error("TTI {got} published out of order (expected {expected})")]
    OutOfOrder { expected: u64, got: u64 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum BridgeMode {
    #[default]
    Lockstep,
    /// One-way delay applied to both monitoring and control. The 5 ms default
    /// is a placeholder, not a measured testbed value.
    Decoupled { delay_ms: u64 },
}

impl BridgeMode {
    pub fn decoupled_default() -> Self {
        BridgeMode::Decoupled { delay_ms: 5 }
    }
}

/// What one bridge step hands back to the controller side.
#[derive(Clone, Debug)]
pub struct BridgeStep {
    pub report: TtiReport,
    pub deliveries: Vec<Delivery>,
    pub replies: Vec<ControlReply>,
}

#[derive(Clone, Debug)]
struct DedicatedSlice {
    rbg_count: usize,
    ue_id: UeId,
}

pub struct RicBridge {
    sim: RanSim,
    mode: BridgeMode,
    subs: BTreeMap<SubId, Subscription>,
    next_sub: u64,
    next_publish: u64,
    slices: BTreeMap<SliceId, DedicatedSlice>,
    last_epoch: Option<u64>,
    sample_line: VecDeque<(u64, Delivery)>,
    control_line: VecDeque<(u64, SliceControlMsg)>,
}

impl RicBridge {
    pub fn new(sim: RanSim, mode: BridgeMode) -> Self {
        let next_publish = sim.now();
        Self {
            sim,
            mode,
            subs: BTreeMap::new(),
            next_sub: 1,
            next_publish,
            slices: BTreeMap::new(),
            last_epoch: None,
            sample_line: VecDeque::new(),
            control_line: VecDeque::new(),
        }
    }

    pub fn sim(&self) -> &RanSim {
        &self.sim
    }

    pub fn mode(&self) -> BridgeMode {
        self.mode
    }

    pub fn enqueue(&mut self, p: Packet) -> Result<(), SimError> {
        self.sim.enqueue_packet(p)
    }

    pub fn subscriptions(&self) -> impl Iterator<Item = &Subscription> {
        self.subs.values()
    }

    pub fn subscribe_monitoring(&mut self, ue_id: &UeId, period_ms: u64) -> Result<Subscription, BridgeError> {
        if !self.sim.has_ue(ue_id) {
            return Err(BridgeError::UnknownUe(ue_id.clone()));
        }
        if period_ms != 1 {
            return Err(BridgeError::UnsupportedPeriod(period_ms));
        }
        if self.subs.values().any(|s| &s.ue_id == ue_id) {
            return Err(BridgeError::DuplicateSubscription(ue_id.clone()));
        }
        let sub = Subscription {
            sub_id: SubId(self.next_sub),
            ue_id: ue_id.clone(),
            period_ms,
        };
        self.next_sub += 1;
        self.subs.insert(sub.sub_id, sub.clone());
        Ok(sub)
    }

    pub fn unsubscribe(&mut self, sub_id: SubId) -> Result<(), BridgeError> {
        self.subs
            .remove(&sub_id)
            .map(|_| ())
            .ok_or(BridgeError::UnknownSubscription(sub_id))
    }

    /// Turns a TTI report into one delivery per active subscription, in
    /// subscription order. Reports must arrive once per TTI, in order.
    pub fn publish_tti(&mut self, report: &TtiReport) -> Result<Vec<Delivery>, BridgeError> {
        if report.tti_ms != self.next_publish {
            return Err(BridgeError::OutOfOrder {
                expected: self.next_publish,
                got: report.tti_ms,
            });
        }
        self.next_publish += 1;
        Ok(self
            .subs
            .values()
            .map(|s| Delivery {
                sub_id: s.sub_id,
                sample: MacSample {
                    tti_ms: report.tti_ms,
                    ue_id: s.ue_id.clone(),
                    bits_sent: report.per_ue_bits_sent.get(&s.ue_id).copied().unwrap_or(0),
                },
            })
            .collect())
    }

    /// Dedicated slices as the bridge will have them at the next TTI boundary.
    pub fn dedicated_slices(&self) -> impl Iterator<Item = (&SliceId, usize, &UeId)> {
        self.slices.iter().map(|(id, s)| (id, s.rbg_count, &s.ue_id))
    }

    pub fn slice_rbgs(&self, slice: &SliceId) -> Option<usize> {
        self.slices.get(slice).map(|s| s.rbg_count)
    }

    /// Applies a control message synchronously, regardless of mode.
    pub fn handle_control(&mut self, msg: &SliceControlMsg) -> ControlReply {
        let epoch = msg.epoch;
        let nack = |reason| ControlReply::Nack { epoch, reason };
        if self.last_epoch.is_some_and(|last| epoch <= last) {
            return nack(NackReason::StaleEpoch);
        }
        let mut next = self.slices.clone();
        match msg.kind {
            ControlKind::Create => {
                let (Some(rbgs), Some(ue)) = (msg.rbg_count, msg.ue_id.as_ref()) else {
                    return nack(NackReason::Malformed("create needs rbgs and ue".into()));
                };
                if next.contains_key(&msg.slice_id) || msg.slice_id == self.sim.config().best_effort_slice {
                    return nack(NackReason::SliceExists);
                }
                if !self.sim.has_ue(ue) {
                    return nack(NackReason::UnknownUe);
                }
                if next.values().any(|s| &s.ue_id == ue) {
                    return nack(NackReason::UeAlreadySliced);
                }
                next.insert(
                    msg.slice_id.clone(),
                    DedicatedSlice {
                        rbg_count: rbgs,
                        ue_id: ue.clone(),
                    },
                );
            }
            ControlKind::Reallocate => {
                let Some(rbgs) = msg.rbg_count else {
                    return nack(NackReason::Malformed("realloc needs rbgs".into()));
                };
                match next.get_mut(&msg.slice_id) {
                    Some(s) => s.rbg_count = rbgs,
                    None => return nack(NackReason::UnknownSlice),
                }
            }
            ControlKind::Delete => {
                if next.remove(&msg.slice_id).is_none() {
                    return nack(NackReason::UnknownSlice);
                }
            }
        }
        let configs = self.partition_for(&next);
        match self.sim.apply_slice_config(&configs, epoch) {
            Ok(ConfigOutcome::Staged { .. }) => {
                self.slices = next;
                self.last_epoch = Some(epoch);
                ControlReply::Ack { epoch }
            }
            Ok(ConfigOutcome::Stale { .. }) => nack(NackReason::StaleEpoch),
            Err(SimError::OverAllocation { .. }) => nack(NackReason::InsufficientRbgs),
            Err(e) => nack(NackReason::Malformed(e.to_string())),
        }
    }

    /// Submits a control message through the configured transport. Lockstep
    /// replies immediately; decoupled replies arrive in a later [`BridgeStep`].
    pub fn submit(&mut self, msg: SliceControlMsg) -> Option<ControlReply> {
        match self.mode {
            BridgeMode::Lockstep => Some(self.handle_control(&msg)),
            BridgeMode::Decoupled { delay_ms } => {
                self.control_line.push_back((self.sim.now() + delay_ms, msg));
                None
            }
        }
    }

    fn partition_for(&self, slices: &BTreeMap<SliceId, DedicatedSlice>) -> Vec<SliceConfig> {
        let mut configs: Vec<SliceConfig> = slices
            .iter()
            .map(|(id, s)| SliceConfig::dedicated(id.clone(), s.rbg_count, [s.ue_id.clone()]))
            .collect();
        let be_ues = self
            .sim
            .ue_ids()
            .filter(|ue| !slices.values().any(|s| &s.ue_id == *ue))
            .cloned();
        configs.push(SliceConfig {
            slice_id: self.sim.config().best_effort_slice.clone(),
            rbg_count: 0,
            ue_ids: be_ues.collect(),
            kind: SliceKind::BestEffort,
        });
        configs
    }

    /// Runs one TTI: due control first, then the MAC, then monitoring.
    pub fn step(&mut self) -> Result<BridgeStep, BridgeError> {
        let now = self.sim.now();
        let mut replies = Vec::new();
        while self.control_line.front().is_some_and(|(due, _)| *due <= now) {
            let (_, msg) = self.control_line.pop_front().expect("front checked");
            replies.push(self.handle_control(&msg));
        }
        let report = self.sim.step_tti();
        let fresh = self.publish_tti(&report)?;
        let deliveries = match self.mode {
            BridgeMode::Lockstep => fresh,
            BridgeMode::Decoupled { delay_ms } => {
                let due = report.tti_ms + delay_ms;
                self.sample_line.extend(fresh.into_iter().map(|d| (due, d)));
                let mut out = Vec::new();
                while self.sample_line.front().is_some_and(|(due, _)| *due <= report.tti_ms) {
                    out.push(self.sample_line.pop_front().expect("front checked").1);
                }
                out
            }
        };
        Ok(BridgeStep {
            report,
            deliveries,
            replies,
        })
    }
}
