//! Downlink MAC simulator.
//!
//! One call to [`RanSim::step_tti`] is one 1 ms TTI. The carrier has
//! [`NUM_RBGS`] resource block groups; each dedicated slice owns a contiguous
//! block of the lowest-index RBGs (slices ordered by id) and the best-effort
//! slice owns whatever is left. Inside a slice, RBGs are handed out round-robin
//! across the slice's backlogged UEs.
//!
//! Partition changes are staged and take effect at the next TTI boundary.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ids::{SliceId, UeId};
use crate::NUM_RBGS;

/// Default MAC fragment size (a 1500-byte MTU).
pub const DEFAULT_FRAGMENT_BITS: u64 = 12_000;

/// Mean per-RBG capacity that yields ~34 Mbit/s over 25 RBGs at 1000 TTI/s.
pub const DEFAULT_MEAN_BITS_PER_RBG: f64 = 1360.0;

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("unknown UE {0}")]
    UnknownUe(UeId),
    #[error("UE {0} is already registered")]
    DuplicateUe(UeId),
    #[error("packet created at {created_at_ms} ms is in the past (now {now_ms} ms)")]
    PacketInPast { created_at_ms: u64, now_ms: u64 },
    #[error("packet size {0} bits is outside (0, fragment size]")]
    BadPacketSize(u64),
    #[error("over-allocation: {requested} RBGs requested, {available} available")]
    OverAllocation { requested: usize, available: usize },
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
}

/// Index of a resource block group, `0..NUM_RBGS`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Rbg(u8);

impl Rbg {
    pub fn new(index: usize) -> Option<Self> {
        (index < NUM_RBGS).then_some(Self(index as u8))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn all() -> impl Iterator<Item = Rbg> {
        (0..NUM_RBGS).map(|i| Rbg(i as u8))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SliceKind {
    Dedicated,
    BestEffort,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SliceConfig {
    pub slice_id: SliceId,
    pub rbg_count: usize,
    pub ue_ids: BTreeSet<UeId>,
    pub kind: SliceKind,
}

impl SliceConfig {
    pub fn dedicated(slice_id: SliceId, rbg_count: usize, ues: impl IntoIterator<Item = UeId>) -> Self {
        Self {
            slice_id,
            rbg_count,
            ue_ids: ues.into_iter().collect(),
            kind: SliceKind::Dedicated,
        }
    }

    /// Best-effort slice. Its RBG count is recomputed when the partition is applied.
    pub fn best_effort(slice_id: SliceId, ues: impl IntoIterator<Item = UeId>) -> Self {
        Self {
            slice_id,
            rbg_count: 0,
            ue_ids: ues.into_iter().collect(),
            kind: SliceKind::BestEffort,
        }
    }
}

/// A MAC-queue packet. `frame_seq` tags VR fragments with their frame for
/// ground-truth metrics; it never leaves the simulator through the RIC bridge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Packet {
    pub ue_id: UeId,
    pub size_bits: u64,
    pub created_at_ms: u64,
    pub frame_seq: Option<u64>,
}

/// Randomly time-varying channel: uniform multiplicative noise around a
/// calibrated mean, drawn independently per (RBG, TTI).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub mean_bits_per_rbg_per_tti: f64,
    /// Relative amplitude in `[0, 1)`.
    pub variation: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        Self {
            mean_bits_per_rbg_per_tti: DEFAULT_MEAN_BITS_PER_RBG,
            variation: 0.1,
            seed: 0,
        }
    }
}

impl ChannelModel {
    /// Capacity of one RBG in one TTI. Deterministic in `(seed, rbg, tti_ms)`.
    pub fn capacity(&self, rbg: Rbg, tti_ms: u64) -> u64 {
        let mean = self.mean_bits_per_rbg_per_tti;
        if self.variation == 0.0 {
            return mean.floor().max(1.0) as u64;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(rbg.index() as u64);
        // two 32-bit words per draw
        rng.set_word_pos(u128::from(tti_ms) * 2);
        let u = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
        let factor = 1.0 + self.variation * (2.0 * u - 1.0);
        (mean * factor).floor().max(1.0) as u64
    }

    /// Upper bound on a single RBG draw.
    pub fn max_capacity_per_rbg(&self) -> u64 {
        (self.mean_bits_per_rbg_per_tti * (1.0 + self.variation)).ceil() as u64
    }

    /// Mean data rate of one RBG in bit/s.
    pub fn mean_rate_bps_per_rbg(&self) -> f64 {
        self.mean_bits_per_rbg_per_tti * 1000.0
    }

    pub fn validate(&self) -> Result<(), SimError> {
        if self.mean_bits_per_rbg_per_tti.is_nan()
            || self.mean_bits_per_rbg_per_tti < 1.0
            || !(0.0..1.0).contains(&self.variation)
        {
            return Err(SimError::InvalidPartition(format!(
                "channel model out of range: mean {} variation {}",
                self.mean_bits_per_rbg_per_tti, self.variation
            )));
        }
        Ok(())
    }
}

pub fn channel_capacity(model: &ChannelModel, rbg: Rbg, tti_ms: u64) -> u64 {
    model.capacity(rbg, tti_ms)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub channel: ChannelModel,
    /// When off, the best-effort slice may use dedicated RBGs left idle in a TTI.
    pub strict_isolation: bool,
    /// RBGs that always stay with the best-effort slice.
    pub best_effort_floor: usize,
    pub best_effort_slice: SliceId,
    pub fragment_bits: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            channel: ChannelModel::default(),
            strict_isolation: true,
            best_effort_floor: 1,
            best_effort_slice: SliceId::new("be"),
            fragment_bits: DEFAULT_FRAGMENT_BITS,
        }
    }
}

/// A packet whose last bit left the MAC queue in `tti_ms`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PacketDelivery {
    pub ue_id: UeId,
    pub frame_seq: Option<u64>,
    pub created_at_ms: u64,
    pub size_bits: u64,
    pub tti_ms: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TtiReport {
    pub tti_ms: u64,
    pub per_ue_bits_sent: BTreeMap<UeId, u64>,
    /// Queue depth after this TTI's transmissions.
    pub per_ue_queue_bits: BTreeMap<UeId, u64>,
    /// RBGs of each slice that carried at least one bit.
    pub per_slice_rbgs_used: BTreeMap<SliceId, usize>,
    /// Partition owner of every RBG this TTI.
    pub rbg_owner: Vec<SliceId>,
    /// Slice whose UEs actually transmitted on each RBG.
    pub rbg_user: Vec<Option<SliceId>>,
    pub rbg_capacity: Vec<u64>,
    pub rbg_bits: Vec<u64>,
    pub deliveries: Vec<PacketDelivery>,
}

impl TtiReport {
    pub fn total_bits_sent(&self) -> u64 {
        self.per_ue_bits_sent.values().sum()
    }

    pub fn total_capacity(&self) -> u64 {
        self.rbg_capacity.iter().sum()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigOutcome {
    /// Will take effect at the next TTI boundary.
    Staged { epoch: u64 },
    /// Epoch not newer than the last accepted one; nothing changed.
    Stale { epoch: u64, last: u64 },
}

#[derive(Debug)]
struct QueuedPacket {
    packet: Packet,
    remaining: u64,
}

#[derive(Debug)]
struct UeState {
    id: UeId,
    queue: VecDeque<QueuedPacket>,
    queue_bits: u64,
}

/// Installed partition: slices in scheduling order plus RBG ownership.
#[derive(Debug, Clone)]
struct Partition {
    slices: Vec<SliceConfig>,
    rbg_slice: Vec<usize>,
}

pub struct RanSim {
    cfg: SimConfig,
    now: u64,
    ues: Vec<UeState>,
    ue_index: BTreeMap<UeId, usize>,
    partition: Partition,
    rr: BTreeMap<SliceId, usize>,
    pending: Option<Vec<SliceConfig>>,
    last_epoch: Option<u64>,
}

impl RanSim {
    pub fn new(cfg: SimConfig) -> Result<Self, SimError> {
        cfg.channel.validate()?;
        if cfg.best_effort_floor >= NUM_RBGS {
            return Err(SimError::InvalidPartition("best-effort floor leaves no RBGs".into()));
        }
        let be = SliceConfig {
            slice_id: cfg.best_effort_slice.clone(),
            rbg_count: NUM_RBGS,
            ue_ids: BTreeSet::new(),
            kind: SliceKind::BestEffort,
        };
        Ok(Self {
            cfg,
            now: 0,
            ues: Vec::new(),
            ue_index: BTreeMap::new(),
            partition: Partition {
                slices: vec![be],
                rbg_slice: vec![0; NUM_RBGS],
            },
            rr: BTreeMap::new(),
            pending: None,
            last_epoch: None,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    /// The TTI that the next [`step_tti`](Self::step_tti) will simulate.
    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn has_ue(&self, ue: &UeId) -> bool {
        self.ue_index.contains_key(ue)
    }

    pub fn ue_ids(&self) -> impl Iterator<Item = &UeId> {
        self.ue_index.keys()
    }

    /// Registers a UE; it starts out in the best-effort slice.
    pub fn register_ue(&mut self, ue: UeId) -> Result<(), SimError> {
        if self.ue_index.contains_key(&ue) {
            return Err(SimError::DuplicateUe(ue));
        }
        self.ue_index.insert(ue.clone(), self.ues.len());
        self.ues.push(UeState {
            id: ue.clone(),
            queue: VecDeque::new(),
            queue_bits: 0,
        });
        let be = self.best_effort_index();
        self.partition.slices[be].ue_ids.insert(ue.clone());
        if let Some(pending) = self.pending.as_mut() {
            if let Some(s) = pending.iter_mut().find(|s| s.kind == SliceKind::BestEffort) {
                s.ue_ids.insert(ue);
            }
        }
        Ok(())
    }

    pub fn enqueue_packet(&mut self, p: Packet) -> Result<(), SimError> {
        let idx = *self
            .ue_index
            .get(&p.ue_id)
            .ok_or_else(|| SimError::UnknownUe(p.ue_id.clone()))?;
        if p.created_at_ms < self.now {
            return Err(SimError::PacketInPast {
                created_at_ms: p.created_at_ms,
                now_ms: self.now,
            });
        }
        if p.size_bits == 0 || p.size_bits > self.cfg.fragment_bits {
            return Err(SimError::BadPacketSize(p.size_bits));
        }
        let ue = &mut self.ues[idx];
        ue.queue_bits += p.size_bits;
        ue.queue.push_back(QueuedPacket {
            remaining: p.size_bits,
            packet: p,
        });
        Ok(())
    }

    pub fn queue_bits(&self, ue: &UeId) -> Option<u64> {
        self.ue_index.get(ue).map(|&i| self.ues[i].queue_bits)
    }

    /// The currently installed partition.
    pub fn partition(&self) -> &[SliceConfig] {
        &self.partition.slices
    }

    /// The partition that will be in force for the next TTI.
    pub fn effective_partition(&self) -> &[SliceConfig] {
        self.pending.as_deref().unwrap_or(&self.partition.slices)
    }

    pub fn slice_of(&self, ue: &UeId) -> Option<&SliceConfig> {
        self.partition.slices.iter().find(|s| s.ue_ids.contains(ue))
    }

    pub fn last_epoch(&self) -> Option<u64> {
        self.last_epoch
    }

    /// Stages a new partition for the next TTI boundary.
    pub fn apply_slice_config(&mut self, configs: &[SliceConfig], epoch: u64) -> Result<ConfigOutcome, SimError> {
        if let Some(last) = self.last_epoch {
            if epoch <= last {
                return Ok(ConfigOutcome::Stale { epoch, last });
            }
        }
        let normalized = self.validate_partition(configs)?;
        self.pending = Some(normalized);
        self.last_epoch = Some(epoch);
        Ok(ConfigOutcome::Staged { epoch })
    }

    fn validate_partition(&self, configs: &[SliceConfig]) -> Result<Vec<SliceConfig>, SimError> {
        let be_count = configs.iter().filter(|s| s.kind == SliceKind::BestEffort).count();
        if be_count != 1 {
            return Err(SimError::InvalidPartition(format!(
                "expected exactly one best-effort slice, found {be_count}"
            )));
        }
        let mut ids = BTreeSet::new();
        let mut seen_ues = BTreeSet::new();
        for s in configs {
            if !ids.insert(&s.slice_id) {
                return Err(SimError::InvalidPartition(format!("duplicate slice {}", s.slice_id)));
            }
            for ue in &s.ue_ids {
                if !self.ue_index.contains_key(ue) {
                    return Err(SimError::UnknownUe(ue.clone()));
                }
                if !seen_ues.insert(ue) {
                    return Err(SimError::InvalidPartition(format!("UE {ue} in more than one slice")));
                }
            }
        }
        if seen_ues.len() != self.ue_index.len() {
            return Err(SimError::InvalidPartition("every UE must belong to a slice".into()));
        }
        let requested: usize = configs
            .iter()
            .filter(|s| s.kind == SliceKind::Dedicated)
            .map(|s| s.rbg_count)
            .sum();
        let available = NUM_RBGS - self.cfg.best_effort_floor;
        if requested > available {
            return Err(SimError::OverAllocation { requested, available });
        }

        let mut dedicated: Vec<SliceConfig> = configs
            .iter()
            .filter(|s| s.kind == SliceKind::Dedicated)
            .cloned()
            .collect();
        dedicated.sort_by(|a, b| a.slice_id.cmp(&b.slice_id));
        let mut be = configs
            .iter()
            .find(|s| s.kind == SliceKind::BestEffort)
            .cloned()
            .expect("checked above");
        be.rbg_count = NUM_RBGS - requested;
        dedicated.push(be);
        Ok(dedicated)
    }

    fn install(&mut self, slices: Vec<SliceConfig>) {
        let mut rbg_slice = Vec::with_capacity(NUM_RBGS);
        for (i, s) in slices.iter().enumerate() {
            rbg_slice.extend(std::iter::repeat_n(i, s.rbg_count));
        }
        debug_assert_eq!(rbg_slice.len(), NUM_RBGS);
        self.rr.retain(|id, _| slices.iter().any(|s| &s.slice_id == id));
        self.partition = Partition { slices, rbg_slice };
    }

    fn best_effort_index(&self) -> usize {
        self.partition
            .slices
            .iter()
            .position(|s| s.kind == SliceKind::BestEffort)
            .expect("partition always has a best-effort slice")
    }

    /// Simulates one TTI.
    pub fn step_tti(&mut self) -> TtiReport {
        if let Some(next) = self.pending.take() {
            self.install(next);
        }
        let tti = self.now;
        let channel = &self.cfg.channel;
        let rbg_capacity: Vec<u64> = Rbg::all().map(|r| channel.capacity(r, tti)).collect();
        let mut rbg_bits = vec![0u64; NUM_RBGS];
        let mut rbg_user: Vec<Option<SliceId>> = vec![None; NUM_RBGS];
        let mut sent = vec![0u64; self.ues.len()];
        let mut deliveries = Vec::new();

        let members: Vec<Vec<usize>> = self
            .partition
            .slices
            .iter()
            .map(|s| s.ue_ids.iter().map(|u| self.ue_index[u]).collect())
            .collect();

        for r in 0..NUM_RBGS {
            let si = self.partition.rbg_slice[r];
            let slice_id = &self.partition.slices[si].slice_id;
            let rr = self.rr.entry(slice_id.clone()).or_insert(0);
            let used = serve_rbg(
                &mut self.ues,
                &members[si],
                rr,
                rbg_capacity[r],
                tti,
                &mut sent,
                &mut deliveries,
            );
            if used > 0 {
                rbg_bits[r] = used;
                rbg_user[r] = Some(slice_id.clone());
            }
        }

        if !self.cfg.strict_isolation {
            let be = self.best_effort_index();
            let be_id = self.partition.slices[be].slice_id.clone();
            for r in 0..NUM_RBGS {
                if self.partition.rbg_slice[r] == be || rbg_bits[r] > 0 {
                    continue;
                }
                let rr = self.rr.entry(be_id.clone()).or_insert(0);
                let used = serve_rbg(
                    &mut self.ues,
                    &members[be],
                    rr,
                    rbg_capacity[r],
                    tti,
                    &mut sent,
                    &mut deliveries,
                );
                if used > 0 {
                    rbg_bits[r] = used;
                    rbg_user[r] = Some(be_id.clone());
                }
            }
        }

        self.now += 1;

        let mut per_slice_rbgs_used: BTreeMap<SliceId, usize> =
            self.partition.slices.iter().map(|s| (s.slice_id.clone(), 0)).collect();
        for user in rbg_user.iter().flatten() {
            *per_slice_rbgs_used.get_mut(user).expect("user is a live slice") += 1;
        }

        TtiReport {
            tti_ms: tti,
            per_ue_bits_sent: self.ues.iter().zip(&sent).map(|(u, &b)| (u.id.clone(), b)).collect(),
            per_ue_queue_bits: self.ues.iter().map(|u| (u.id.clone(), u.queue_bits)).collect(),
            per_slice_rbgs_used,
            rbg_owner: self
                .partition
                .rbg_slice
                .iter()
                .map(|&i| self.partition.slices[i].slice_id.clone())
                .collect(),
            rbg_user,
            rbg_capacity,
            rbg_bits,
            deliveries,
        }
    }
}

/// Serves one RBG to the slice's UEs, starting at the round-robin pointer.
/// Leftover capacity passes on to the next backlogged UE. Returns bits used.
fn serve_rbg(
    ues: &mut [UeState],
    members: &[usize],
    rr: &mut usize,
    capacity: u64,
    tti: u64,
    sent: &mut [u64],
    deliveries: &mut Vec<PacketDelivery>,
) -> u64 {
    let n = members.len();
    if n == 0 {
        return 0;
    }
    let mut remaining = capacity;
    let mut first_served = None;
    for off in 0..n {
        let pos = (*rr + off) % n;
        let ue = &mut ues[members[pos]];
        if ue.queue_bits == 0 {
            continue;
        }
        first_served.get_or_insert(pos);
        let drained = drain(ue, remaining, tti, deliveries);
        sent[members[pos]] += drained;
        remaining -= drained;
        if remaining == 0 {
            break;
        }
    }
    if let Some(pos) = first_served {
        *rr = (pos + 1) % n;
    }
    capacity - remaining
}

fn drain(ue: &mut UeState, budget: u64, tti: u64, deliveries: &mut Vec<PacketDelivery>) -> u64 {
    let mut left = budget;
    while left > 0 {
        let Some(head) = ue.queue.front_mut() else { break };
        let take = head.remaining.min(left);
        head.remaining -= take;
        left -= take;
        if head.remaining == 0 {
            let done = ue.queue.pop_front().expect("front exists");
            deliveries.push(PacketDelivery {
                ue_id: done.packet.ue_id,
                frame_seq: done.packet.frame_seq,
                created_at_ms: done.packet.created_at_ms,
                size_bits: done.packet.size_bits,
                tti_ms: tti,
            });
        }
    }
    let drained = budget - left;
    ue.queue_bits -= drained;
    drained
}
