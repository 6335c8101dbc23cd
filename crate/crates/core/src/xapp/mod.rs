//! The slice controller.
//!
//! [`Xapp`] admits slice requests, runs one [`Handler`] per slice over the
//! monitoring stream and funnels every handler's decision through the
//! allocation controller, which is the only place reallocation messages are
//! created.

pub mod allocation;
pub mod control;
pub mod detect;
pub mod handler;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bridge::{BridgeError, ControlReply, Delivery, RicBridge, SliceControlMsg, SubId};
use crate::ids::SliceId;
use crate::wire::WireMsg;

pub use allocation::{allocation_controller, AllocationOutcome, EpochCounter, SliceAllocation};
pub use control::{
    admit, calibrate_offset, control_decision, control_rule, estimate_average_latency, AdmissionPlan, CalibrationError,
    CapacityModel, ControlDecision, Decision, DenialReason, HandlerState, Observation, SliceRequest,
};
pub use detect::{detect_frames, find_chunks, split_chunks, Chunk, FrameEstimate, MacSampleWindow};
pub use handler::{handler_tick, Handler, TickOutcome, WindowConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct XappConfig {
    pub slack_ms: f64,
    pub headroom_rbgs: usize,
    pub step_rbgs: usize,
    pub best_effort_floor: usize,
    pub windows: WindowConfig,
    /// Known offset; `None` means the slice waits for [`Xapp::set_offset`].
    pub offset_ms: Option<f64>,
}

impl Default for XappConfig {
    fn default() -> Self {
        Self {
            slack_ms: 1.0,
            headroom_rbgs: 2,
            step_rbgs: 1,
            best_effort_floor: 1,
            windows: WindowConfig::default(),
            offset_ms: None,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum XappError {
    #[error("unknown slice {0}")]
    UnknownSlice(SliceId),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Admission {
    Accepted { slice_id: SliceId, initial_rbgs: usize },
    Denied { reason: DenialReason },
}

/// One record per handler tick.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TelemetryRecord {
    pub tick_ms: u64,
    pub slice_id: SliceId,
    pub average_latency_ms: Option<f64>,
    pub frames_observed: usize,
    pub decision: Option<Decision>,
    pub target_ms: f64,
    pub slack_ms: f64,
    pub rbgs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub enum XappEvent {
    Starved { tick_ms: u64, slice_id: SliceId },
    Nacked { reply: ControlReply },
}

struct Slice {
    handler: Handler,
    sub_id: SubId,
}

pub struct Xapp {
    cfg: XappConfig,
    capacity: CapacityModel,
    slices: BTreeMap<SliceId, Slice>,
    by_sub: BTreeMap<SubId, SliceId>,
    epochs: EpochCounter,
    next_slice: u64,
    /// Emitted but not yet answered: epoch -> (slice, rbgs).
    in_flight: BTreeMap<u64, (SliceId, usize)>,
    emitted: Vec<SliceControlMsg>,
    telemetry: Vec<TelemetryRecord>,
    events: Vec<XappEvent>,
}

impl Xapp {
    pub fn new(cfg: XappConfig, capacity: CapacityModel) -> Self {
        Self {
            cfg,
            capacity,
            slices: BTreeMap::new(),
            by_sub: BTreeMap::new(),
            epochs: EpochCounter::default(),
            next_slice: 1,
            in_flight: BTreeMap::new(),
            emitted: Vec::new(),
            telemetry: Vec::new(),
            events: Vec::new(),
        }
    }

    pub fn config(&self) -> &XappConfig {
        &self.cfg
    }

    pub fn slice_ids(&self) -> impl Iterator<Item = &SliceId> {
        self.slices.keys()
    }

    pub fn handler(&self, slice: &SliceId) -> Option<&Handler> {
        self.slices.get(slice).map(|s| &s.handler)
    }

    pub fn telemetry(&self) -> &[TelemetryRecord] {
        &self.telemetry
    }

    pub fn events(&self) -> &[XappEvent] {
        &self.events
    }

    /// Every control message this controller has emitted, in order.
    pub fn emitted(&self) -> &[SliceControlMsg] {
        &self.emitted
    }

    /// Admission, handler creation, monitoring subscription and the create command.
    pub fn request_slice(&mut self, req: &SliceRequest, bridge: &mut RicBridge) -> Result<Admission, XappError> {
        let plan = match admit(req, &self.capacity, self.cfg.headroom_rbgs, self.cfg.best_effort_floor) {
            Ok(plan) => plan,
            Err(reason) => return Ok(Admission::Denied { reason }),
        };
        let slice_id = SliceId::new(format!("slice-{}", self.next_slice));
        let sub = bridge.subscribe_monitoring(&req.ue_id, 1)?;
        let msg = SliceControlMsg::create(
            slice_id.clone(),
            plan.initial_rbgs,
            req.ue_id.clone(),
            self.epochs.next_epoch(),
        );
        if let Some(reply) = bridge.submit(msg.clone()) {
            if !reply.is_ack() {
                bridge.unsubscribe(sub.sub_id)?;
                self.events.push(XappEvent::Nacked { reply });
                return Ok(Admission::Denied {
                    reason: DenialReason::OverCapacity,
                });
            }
        }
        self.emitted.push(msg);
        self.next_slice += 1;

        let state = HandlerState {
            slice_id: slice_id.clone(),
            ue_id: req.ue_id.clone(),
            target_ms: req.requested_latency_ms,
            slack_ms: self.cfg.slack_ms,
            offset_ms: self.cfg.offset_ms.unwrap_or(0.0),
            fps: req.fps,
            current_rbgs: plan.initial_rbgs,
            min_rbgs: plan.min_rbgs,
            max_rbgs: plan.max_rbgs,
        };
        let handler = match self.cfg.offset_ms {
            Some(_) => Handler::new(state, self.cfg.windows),
            None => Handler::uncalibrated(state, self.cfg.windows),
        };
        self.by_sub.insert(sub.sub_id, slice_id.clone());
        self.slices.insert(
            slice_id.clone(),
            Slice {
                handler,
                sub_id: sub.sub_id,
            },
        );
        Ok(Admission::Accepted {
            slice_id,
            initial_rbgs: plan.initial_rbgs,
        })
    }

    pub fn set_offset(&mut self, slice: &SliceId, offset_ms: f64) -> Result<(), XappError> {
        let s = self
            .slices
            .get_mut(slice)
            .ok_or_else(|| XappError::UnknownSlice(slice.clone()))?;
        s.handler.set_offset(offset_ms);
        Ok(())
    }

    /// Destroys the handler, drops the subscription and sends the delete.
    pub fn delete_slice(&mut self, slice: &SliceId, bridge: &mut RicBridge) -> Result<Option<ControlReply>, XappError> {
        let s = self
            .slices
            .remove(slice)
            .ok_or_else(|| XappError::UnknownSlice(slice.clone()))?;
        self.by_sub.remove(&s.sub_id);
        bridge.unsubscribe(s.sub_id)?;
        self.in_flight.retain(|_, (id, _)| id != slice);
        let msg = SliceControlMsg::delete(slice.clone(), self.epochs.next_epoch());
        self.emitted.push(msg.clone());
        Ok(bridge.submit(msg))
    }

    /// Routes deliveries to handlers. When any handler closes a control
    /// interval its decision goes to the allocation controller; the resulting
    /// commands are submitted to the bridge.
    pub fn on_deliveries(&mut self, deliveries: &[Delivery], bridge: &mut RicBridge) {
        let mut decisions = BTreeMap::new();
        let mut tick_ms = None;
        for d in deliveries {
            let Some(id) = self.by_sub.get(&d.sub_id) else { continue };
            let slice = self.slices.get_mut(id).expect("subscription maps to a live slice");
            let Some(out) = slice.handler.on_sample(d.sample.tti_ms, d.sample.bits_sent) else {
                continue;
            };
            let st = slice.handler.state();
            self.telemetry.push(TelemetryRecord {
                tick_ms: out.tick_ms,
                slice_id: id.clone(),
                average_latency_ms: out.observation.latency_ms(),
                frames_observed: out.observation.frames(),
                decision: out.decision.map(|d| d.value),
                target_ms: st.target_ms,
                slack_ms: st.slack_ms,
                rbgs: st.current_rbgs,
            });
            tick_ms = Some(out.tick_ms);
            if let Some(decision) = out.decision {
                decisions.insert(id.clone(), decision);
            }
        }
        if decisions.is_empty() {
            return;
        }
        let allocations: Vec<SliceAllocation> = self
            .slices
            .iter()
            .map(|(id, s)| {
                let st = s.handler.state();
                SliceAllocation {
                    slice_id: id.clone(),
                    current_rbgs: st.current_rbgs,
                    min_rbgs: st.min_rbgs,
                    max_rbgs: st.max_rbgs,
                }
            })
            .collect();
        let outcome = allocation_controller(
            &decisions,
            &allocations,
            self.capacity.rbg_count,
            self.cfg.best_effort_floor,
            self.cfg.step_rbgs,
            &mut self.epochs,
        );
        for slice_id in outcome.starved {
            self.events.push(XappEvent::Starved {
                tick_ms: tick_ms.unwrap_or_default(),
                slice_id,
            });
        }
        for msg in outcome.messages {
            self.in_flight.insert(
                msg.epoch,
                (msg.slice_id.clone(), msg.rbg_count.expect("reallocate carries a count")),
            );
            self.emitted.push(msg.clone());
            if let Some(reply) = bridge.submit(msg) {
                self.on_reply(reply);
            }
        }
    }

    /// Commits an acknowledged reallocation to the handler's state.
    pub fn on_reply(&mut self, reply: ControlReply) {
        let pending = self.in_flight.remove(&reply.epoch());
        match (&reply, pending) {
            (ControlReply::Ack { .. }, Some((slice, rbgs))) => {
                if let Some(s) = self.slices.get_mut(&slice) {
                    s.handler.state_mut().current_rbgs = rbgs;
                }
            }
            (ControlReply::Nack { .. }, _) => self.events.push(XappEvent::Nacked { reply }),
            _ => {}
        }
    }

    /// Handles a control-plane line (`req` or `del`); returns the reply line, if any.
    pub fn handle_wire(&mut self, msg: WireMsg, bridge: &mut RicBridge) -> Result<Option<WireMsg>, XappError> {
        match msg {
            WireMsg::Req {
                bitrate,
                fps,
                latency_ms,
                ue,
            } => {
                let req = SliceRequest {
                    bitrate_bps: bitrate,
                    fps,
                    requested_latency_ms: latency_ms,
                    ue_id: ue,
                };
                let epoch = self.epochs.last() + 1;
                Ok(Some(match self.request_slice(&req, bridge)? {
                    Admission::Accepted { .. } => WireMsg::Ack { epoch },
                    Admission::Denied { reason } => WireMsg::Nack {
                        epoch,
                        reason: serde_json::to_value(reason)
                            .ok()
                            .and_then(|v| v.as_str().map(str::to_owned))
                            .unwrap_or_default(),
                    },
                }))
            }
            WireMsg::Del { slice } => {
                let reply = self.delete_slice(&slice, bridge)?;
                Ok(reply.as_ref().map(WireMsg::from))
            }
            _ => Ok(None),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::BridgeMode;
    use crate::ran_sim::{ChannelModel, RanSim, SimConfig, SliceKind};
    use crate::NUM_RBGS;

    fn setup() -> (Xapp, RicBridge) {
        let sim_cfg = SimConfig {
            channel: ChannelModel {
                variation: 0.0,
                ..ChannelModel::default()
            },
            ..SimConfig::default()
        };
        let mut sim = RanSim::new(sim_cfg).unwrap();
        sim.register_ue("vr".into()).unwrap();
        sim.register_ue("bulk".into()).unwrap();
        let bridge = RicBridge::new(sim, BridgeMode::Lockstep);
        let capacity = CapacityModel {
            rbg_count: NUM_RBGS,
            mean_bits_per_rbg_per_tti: 1360.0,
        };
        let xapp = Xapp::new(
            XappConfig {
                offset_ms: Some(2.0),
                ..XappConfig::default()
            },
            capacity,
        );
        (xapp, bridge)
    }

    fn request() -> SliceRequest {
        SliceRequest {
            bitrate_bps: 10e6,
            fps: 60,
            requested_latency_ms: 10.0,
            ue_id: "vr".into(),
        }
    }

    fn be_rbgs(b: &RicBridge) -> usize {
        b.sim()
            .effective_partition()
            .iter()
            .find(|s| s.kind == SliceKind::BestEffort)
            .unwrap()
            .rbg_count
    }

    #[test]
    fn request_creates_slice_and_subscription() {
        let (mut x, mut b) = setup();
        let adm = x.request_slice(&request(), &mut b).unwrap();
        assert_eq!(
            adm,
            Admission::Accepted {
                slice_id: "slice-1".into(),
                initial_rbgs: 10
            }
        );
        assert_eq!(be_rbgs(&b), 15);
        assert_eq!(b.subscriptions().count(), 1);
    }

    #[test]
    fn denied_request_leaves_no_trace() {
        let (mut x, mut b) = setup();
        let mut req = request();
        req.bitrate_bps = 50e6;
        assert_eq!(
            x.request_slice(&req, &mut b).unwrap(),
            Admission::Denied {
                reason: DenialReason::OverCapacity
            }
        );
        assert_eq!(b.subscriptions().count(), 0);
        assert_eq!(x.slice_ids().count(), 0);
    }

    #[test]
    fn delete_twice_errors() {
        let (mut x, mut b) = setup();
        x.request_slice(&request(), &mut b).unwrap();
        let id = SliceId::from("slice-1");
        assert!(x.delete_slice(&id, &mut b).unwrap().unwrap().is_ack());
        b.step().unwrap();
        assert_eq!(be_rbgs(&b), NUM_RBGS);
        assert_eq!(b.subscriptions().count(), 0);
        assert_eq!(x.delete_slice(&id, &mut b), Err(XappError::UnknownSlice(id)));
    }

    #[test]
    fn overloaded_slice_gets_more_rbgs() {
        let (mut x, mut b) = setup();
        x.request_slice(&request(), &mut b).unwrap();
        // keep the VR queue permanently backlogged: every sample is non-zero,
        // so each second is one long chunk and the estimate is far above target
        for t in 0..3000u64 {
            if b.sim().queue_bits(&"vr".into()).unwrap() < 50_000 {
                for _ in 0..5 {
                    b.enqueue(crate::ran_sim::Packet {
                        ue_id: "vr".into(),
                        size_bits: 12_000,
                        created_at_ms: t,
                        frame_seq: None,
                    })
                    .unwrap();
                }
            }
            let step = b.step().unwrap();
            x.on_deliveries(&step.deliveries, &mut b);
        }
        let rbgs = x.handler(&"slice-1".into()).unwrap().state().current_rbgs;
        // one step per control interval: ticks at 1 s, 2 s and 3 s
        assert_eq!(rbgs, 13);
        assert_eq!(b.slice_rbgs(&"slice-1".into()), Some(13));
        assert!(x.telemetry().iter().all(|r| r.decision == Some(Decision::Increase)));
    }

    #[test]
    fn wire_request_and_delete() {
        let (mut x, mut b) = setup();
        let reply = x
            .handle_wire(
                crate::wire::decode_line(r#"{"t":"req","bitrate":10000000,"fps":60,"latency_ms":10,"ue":"vr"}"#)
                    .unwrap(),
                &mut b,
            )
            .unwrap();
        assert_eq!(reply, Some(WireMsg::Ack { epoch: 1 }));
        let reply = x
            .handle_wire(
                WireMsg::Del {
                    slice: "slice-1".into(),
                },
                &mut b,
            )
            .unwrap();
        assert_eq!(reply, Some(WireMsg::Ack { epoch: 2 }));
        let denied = x
            .handle_wire(
                WireMsg::Req {
                    bitrate: 0.0,
                    fps: 60,
                    latency_ms: 10.0,
                    ue: "vr".into(),
                },
                &mut b,
            )
            .unwrap();
        assert!(matches!(denied, Some(WireMsg::Nack { reason, .. }) if reason == "invalid_request"));
    }
}
