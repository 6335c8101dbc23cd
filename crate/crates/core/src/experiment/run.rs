use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::bridge::{ControlReply, RicBridge, SliceControlMsg, SubId};
use crate::ids::{SliceId, UeId};
use crate::ran_sim::{ChannelModel, RanSim, SimConfig, TtiReport};
use crate::traffic::{load_trace, synth_vr_trace, FullBufferSource, VrSource, VrTrace};
use crate::xapp::{
    calibrate_offset, Admission, CapacityModel, FrameEstimate, Handler, HandlerState, SliceRequest, TickOutcome, Xapp,
    XappEvent,
};
use crate::NUM_RBGS;

use super::config::{ExperimentConfig, Scenario, TraceSource};
use super::ExperimentError;

pub const VR_UE: &str = "vr";
pub const BULK_UE: &str = "bulk";

/// Mixed into the run seed for trace synthesis so the trace and the channel
/// never share a random stream.
const TRACE_SEED_SALT: u64 = 0x7ace_5eed_0000_0001;

/// One per-second row of the metrics CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub second: u64,
    /// Mean client-side latency of frames completed in this second.
    pub vr_mean_latency_ms: Option<f64>,
    /// Controller's estimate for the window covering this second.
    pub vr_est_latency_ms: Option<f64>,
    pub vr_bits: u64,
    pub be_bits: u64,
    pub vr_rbgs: usize,
}

/// A frame as the client saw it.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FrameRecord {
    pub seq: u64,
    pub timestamp_ms: u64,
    /// TTI in which the last fragment left the MAC queue.
    pub completed_tti: u64,
    pub latency_ms: f64,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub rows: Vec<MetricsRow>,
    pub frames: Vec<FrameRecord>,
    /// Every handler tick after calibration, with frames already offset.
    pub ticks: Vec<TickOutcome>,
    pub offset_ms: f64,
    pub emitted: Vec<SliceControlMsg>,
    pub replies: Vec<ControlReply>,
    pub events: Vec<XappEvent>,
}

impl RunOutput {
    pub fn write_csv(&self, path: impl AsRef<std::path::Path>) -> Result<(), ExperimentError> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn output_path(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .join(format!("{}_seed{}.csv", cfg.scenario.slug(), cfg.seed))
}

/// Runs a scenario and writes its metrics CSV; returns the CSV path.
pub fn run_scenario(cfg: &ExperimentConfig) -> Result<PathBuf, ExperimentError> {
    let out = simulate(cfg)?;
    fs::create_dir_all(&cfg.out_dir)?;
    let path = output_path(cfg);
    out.write_csv(&path)?;
    log::info!("{} rows written to {}", out.rows.len(), path.display());
    Ok(path)
}

fn build_trace(cfg: &ExperimentConfig) -> Result<VrTrace, ExperimentError> {
    Ok(match &cfg.trace {
        TraceSource::Synth {
            fps,
            bitrate_bps,
            profile,
        } => synth_vr_trace(*fps, *bitrate_bps, *profile, cfg.seed ^ TRACE_SEED_SALT, cfg.duration_s)?,
        TraceSource::File { path, fps } => load_trace(path, *fps)?,
    })
}

/// Where the VR monitoring stream goes.
enum Monitor {
    Controller { xapp: Box<Xapp>, slice: SliceId },
    Passive { handler: Box<Handler>, sub: SubId },
}

impl Monitor {
    fn is_calibrated(&self) -> bool {
        match self {
            Monitor::Controller { xapp, slice } => xapp.handler(slice).is_some_and(Handler::is_calibrated),
            Monitor::Passive { handler, .. } => handler.is_calibrated(),
        }
    }

    fn set_offset(&mut self, offset_ms: f64) -> Result<(), ExperimentError> {
        match self {
            Monitor::Controller { xapp, slice } => xapp.set_offset(slice, offset_ms)?,
            Monitor::Passive { handler, .. } => handler.set_offset(offset_ms),
        }
        Ok(())
    }
}

#[derive(Default)]
struct SecondAcc {
    latency_sum: f64,
    frames: u64,
    vr_bits: u64,
    be_bits: u64,
    vr_rbgs: usize,
}

/// Runs a scenario in memory.
pub fn simulate(cfg: &ExperimentConfig) -> Result<RunOutput, ExperimentError> {
    cfg.validate()?;
    let trace = build_trace(cfg)?;
    let fps = trace.fps();
    let bitrate = trace.declared_mean_bitrate_bps();
    let frame_ts: Vec<u64> = trace.frames().iter().map(|f| f.timestamp_ms).collect();

    let channel = ChannelModel {
        mean_bits_per_rbg_per_tti: cfg.channel.mean_bits_per_rbg_per_tti,
        variation: cfg.channel.variation,
        seed: cfg.seed,
    };
    let sim_cfg = SimConfig {
        channel: channel.clone(),
        strict_isolation: cfg.strict_isolation,
        best_effort_floor: cfg.xapp.best_effort_floor,
        fragment_bits: cfg.fragment_bits,
        ..SimConfig::default()
    };
    let vr = UeId::new(VR_UE);
    let bulk = UeId::new(BULK_UE);
    let mut sim = RanSim::new(sim_cfg)?;
    sim.register_ue(vr.clone())?;
    sim.register_ue(bulk.clone())?;
    let mut bridge = RicBridge::new(sim, cfg.bridge);

    let mut vr_source = VrSource::new(vr.clone(), trace, cfg.fragment_bits, cfg.transport_delay_ms);
    let mut bulk_source = FullBufferSource::new(
        bulk.clone(),
        cfg.fragment_bits,
        NUM_RBGS as u64 * channel.max_capacity_per_rbg(),
    );
    let capacity = CapacityModel {
        rbg_count: NUM_RBGS,
        mean_bits_per_rbg_per_tti: channel.mean_bits_per_rbg_per_tti,
    };

    let passive_state = || HandlerState {
        slice_id: SliceId::new(VR_UE),
        ue_id: vr.clone(),
        target_ms: 0.0,
        slack_ms: cfg.xapp.slack_ms,
        offset_ms: 0.0,
        fps,
        current_rbgs: 0,
        min_rbgs: 0,
        max_rbgs: NUM_RBGS,
    };
    let mut replies = Vec::new();
    let (mut monitor, vr_slice) = match cfg.scenario {
        Scenario::DataDriven { target_ms, slack_ms } => {
            let mut xcfg = cfg.xapp.clone();
            xcfg.slack_ms = slack_ms;
            xcfg.offset_ms = None;
            let mut xapp = Xapp::new(xcfg, capacity);
            let req = SliceRequest {
                bitrate_bps: bitrate,
                fps,
                requested_latency_ms: target_ms,
                ue_id: vr.clone(),
            };
            match xapp.request_slice(&req, &mut bridge)? {
                Admission::Accepted { slice_id, .. } => (
                    Monitor::Controller {
                        xapp: Box::new(xapp),
                        slice: slice_id.clone(),
                    },
                    Some(slice_id),
                ),
                Admission::Denied { reason } => return Err(ExperimentError::AdmissionDenied(reason)),
            }
        }
        Scenario::Static { rbgs } => {
            let slice = SliceId::new(VR_UE);
            let reply = bridge.handle_control(&SliceControlMsg::create(slice.clone(), rbgs, vr.clone(), 1));
            if !reply.is_ack() {
                return Err(ExperimentError::InvalidConfig(format!(
                    "static slice rejected: {reply:?}"
                )));
            }
            replies.push(reply);
            let sub = bridge.subscribe_monitoring(&vr, 1)?.sub_id;
            let handler = Handler::uncalibrated(passive_state(), cfg.xapp.windows);
            (
                Monitor::Passive {
                    handler: Box::new(handler),
                    sub,
                },
                Some(slice),
            )
        }
        Scenario::NoSlicing => {
            let sub = bridge.subscribe_monitoring(&vr, 1)?.sub_id;
            let handler = Handler::uncalibrated(passive_state(), cfg.xapp.windows);
            (
                Monitor::Passive {
                    handler: Box::new(handler),
                    sub,
                },
                None,
            )
        }
    };

    let total_ms = u64::from(cfg.duration_s) * 1000;
    let calibration_ms = u64::from(cfg.calibration_s) * 1000;
    let mut seconds: Vec<SecondAcc> = (0..cfg.duration_s).map(|_| SecondAcc::default()).collect();
    let mut estimates: BTreeMap<u64, f64> = BTreeMap::new();
    let mut remaining: HashMap<u64, u64> = HashMap::new();
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut warmup_frames: Vec<FrameEstimate> = Vec::new();
    let mut ticks = Vec::new();
    let mut offset_ms = 0.0;

    for _ in 0..total_ms {
        let now = bridge.sim().now();
        for p in vr_source.next_arrivals(now) {
            if let Some(seq) = p.frame_seq {
                *remaining.entry(seq).or_default() += p.size_bits;
            }
            bridge.enqueue(p)?;
        }
        let queued = bridge.sim().queue_bits(&bulk).unwrap_or(0);
        for p in bulk_source.next_arrivals(now, queued) {
            bridge.enqueue(p)?;
        }

        let step = bridge.step()?;
        record_report(&step.report, &vr, &bulk, vr_slice.as_ref(), &mut seconds);
        for d in &step.report.deliveries {
            let Some(seq) = d.frame_seq else { continue };
            let left = remaining.get_mut(&seq).expect("delivered frame was enqueued");
            *left -= d.size_bits;
            if *left == 0 {
                remaining.remove(&seq);
                let ts = frame_ts[seq as usize];
                let latency_ms = (d.tti_ms + 1 - ts) as f64;
                frames.push(FrameRecord {
                    seq,
                    timestamp_ms: ts,
                    completed_tti: d.tti_ms,
                    latency_ms,
                });
                if let Some(acc) = seconds.get_mut(((d.tti_ms + 1) / 1000) as usize) {
                    acc.latency_sum += latency_ms;
                    acc.frames += 1;
                }
            }
        }

        let mut tick = None;
        match &mut monitor {
            Monitor::Controller { xapp, .. } => {
                for r in step.replies {
                    replies.push(r.clone());
                    xapp.on_reply(r);
                }
                let before = xapp
                    .handler(vr_slice.as_ref().expect("controller owns a slice"))
                    .and_then(|h| h.last_tick().map(|t| t.tick_ms));
                xapp.on_deliveries(&step.deliveries, &mut bridge);
                let after = xapp
                    .handler(vr_slice.as_ref().expect("controller owns a slice"))
                    .and_then(|h| h.last_tick().cloned());
                if after.as_ref().map(|t| t.tick_ms) != before {
                    tick = after;
                }
            }
            Monitor::Passive { handler, sub } => {
                replies.extend(step.replies);
                for d in step.deliveries.iter().filter(|d| d.sub_id == *sub) {
                    if let Some(out) = handler.on_sample(d.sample.tti_ms, d.sample.bits_sent) {
                        tick = Some(out);
                    }
                }
            }
        }

        if let Some(t) = tick {
            if monitor.is_calibrated() {
                if let Some(est) = t.observation.latency_ms() {
                    estimates.insert(t.tick_ms / 1000 - 1, est);
                }
                ticks.push(t);
            } else {
                warmup_frames.extend(t.frames.iter().copied());
                if t.tick_ms >= calibration_ms {
                    offset_ms = calibrate(&warmup_frames, &frames)?;
                    log::info!("calibrated latency offset {offset_ms:.3} ms at {} ms", t.tick_ms);
                    monitor.set_offset(offset_ms)?;
                }
            }
        }
    }

    let rows = seconds
        .into_iter()
        .enumerate()
        .map(|(s, acc)| MetricsRow {
            second: s as u64,
            vr_mean_latency_ms: (acc.frames > 0).then(|| round4(acc.latency_sum / acc.frames as f64)),
            vr_est_latency_ms: estimates.get(&(s as u64)).map(|&v| round4(v)),
            vr_bits: acc.vr_bits,
            be_bits: acc.be_bits,
            vr_rbgs: acc.vr_rbgs,
        })
        .collect();
    let (emitted, events) = match monitor {
        Monitor::Controller { xapp, .. } => (xapp.emitted().to_vec(), xapp.events().to_vec()),
        Monitor::Passive { .. } => (Vec::new(), Vec::new()),
    };
    Ok(RunOutput {
        rows,
        frames,
        ticks,
        offset_ms,
        emitted,
        replies,
        events,
    })
}

fn record_report(report: &TtiReport, vr: &UeId, bulk: &UeId, vr_slice: Option<&SliceId>, seconds: &mut [SecondAcc]) {
    let Some(acc) = seconds.get_mut((report.tti_ms / 1000) as usize) else {
        return;
    };
    acc.vr_bits += report.per_ue_bits_sent.get(vr).copied().unwrap_or(0);
    acc.be_bits += report.per_ue_bits_sent.get(bulk).copied().unwrap_or(0);
    acc.vr_rbgs = vr_slice.map_or(0, |id| report.rbg_owner.iter().filter(|o| *o == id).count());
}

/// Pairs detected frames with delivered frames that completed in the same
/// TTI and fits the offset between them.
fn calibrate(detected: &[FrameEstimate], delivered: &[FrameRecord]) -> Result<f64, ExperimentError> {
    let by_end: HashMap<u64, f64> = delivered.iter().map(|f| (f.completed_tti, f.latency_ms)).collect();
    let (est, truth): (Vec<f64>, Vec<f64>) = detected
        .iter()
        .filter_map(|f| by_end.get(&f.end_ms).map(|&t| (f.transmission_ms, t)))
        .unzip();
    Ok(calibrate_offset(&est, &truth)?)
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}
