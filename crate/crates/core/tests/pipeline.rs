use std::collections::HashMap;
use std::process::Command;

use vrslice::bridge::BridgeMode;
use vrslice::experiment::{
    simulate, summarize_rows, ExperimentConfig, ExperimentError, RunOutput, Scenario, TraceSource,
};
use vrslice::ran_sim::{ChannelModel, RanSim, SimConfig, SliceConfig};
use vrslice::traffic::{synth_vr_trace, BurstProfile, FullBufferSource, VrSource};
use vrslice::xapp::detect_frames;
use vrslice::xapp::MacSampleWindow;
use vrslice::{UeId, NUM_RBGS};

fn constant_trace() -> TraceSource {
    TraceSource::Synth {
        fps: 60,
        bitrate_bps: 10e6,
        profile: BurstProfile::Constant,
    }
}

fn run(scenario: Scenario, duration_s: u32, trace: TraceSource) -> RunOutput {
    let mut cfg = ExperimentConfig::new(scenario, duration_s, 4, std::env::temp_dir());
    cfg.trace = trace;
    simulate(&cfg).unwrap()
}

fn dd(target_ms: f64) -> Scenario {
    Scenario::DataDriven {
        target_ms,
        slack_ms: 1.0,
    }
}

fn full_buffer_mbps(seconds: u64, seed: u64) -> f64 {
    let mut sim = RanSim::new(SimConfig {
        channel: ChannelModel {
            seed,
            ..ChannelModel::default()
        },
        ..SimConfig::default()
    })
    .unwrap();
    let ue = UeId::new("bulk");
    sim.register_ue(ue.clone()).unwrap();
    let target = NUM_RBGS as u64 * sim.config().channel.max_capacity_per_rbg();
    let mut src = FullBufferSource::new(ue.clone(), 12_000, target);
    let mut bits = 0;
    for _ in 0..seconds * 1000 {
        let q = sim.queue_bits(&ue).unwrap();
        for p in src.next_arrivals(sim.now(), q) {
            sim.enqueue_packet(p).unwrap();
        }
        assert!(sim.queue_bits(&ue).unwrap() >= target);
        bits += sim.step_tti().total_bits_sent();
    }
    bits as f64 / seconds as f64 / 1e6
}

#[test]
fn full_buffer_throughput_matches_calibrated_carrier() {
    let long = full_buffer_mbps(300, 1);
    assert!((long - 34.0).abs() <= 0.05 * 34.0, "{long}");
    let short = full_buffer_mbps(60, 2);
    assert!((32.0..=36.0).contains(&short), "{short}");
}

#[test]
fn detector_matches_simulated_frames() {
    let mut sim = RanSim::new(SimConfig::default()).unwrap();
    let vr = UeId::new("vr");
    sim.register_ue(vr.clone()).unwrap();
    sim.apply_slice_config(
        &[
            SliceConfig::dedicated("vr".into(), 18, [vr.clone()]),
            SliceConfig::best_effort("be".into(), []),
        ],
        1,
    )
    .unwrap();
    let trace = synth_vr_trace(
        60,
        10e6,
        BurstProfile::Cyclic {
            amplitude: 0.35,
            period_s: 10.0,
        },
        2,
        10,
    )
    .unwrap();
    let arrivals: Vec<u64> = trace.frames().iter().map(|f| f.timestamp_ms + 2).collect();
    let mut src = VrSource::new(vr.clone(), trace, 12_000, 2);
    let mut bits = Vec::new();
    for _ in 0..10_000 {
        for p in src.next_arrivals(sim.now()) {
            sim.enqueue_packet(p).unwrap();
        }
        bits.push(sim.step_tti().per_ue_bits_sent[&vr]);
    }
    // a frame starts transmitting at the first busy TTI after it arrives
    let starts: Vec<u64> = arrivals
        .iter()
        .filter_map(|&a| (a..10_000).find(|&t| bits[t as usize] > 0))
        .collect();

    for w in 0..10u64 {
        let from = (w * 1000) as usize;
        let window = MacSampleWindow::new(w * 1000, bits[from..from + 1000].to_vec()).unwrap();
        let frames = detect_frames(&window, 60);
        assert!((58..=62).contains(&frames.len()), "window {w}: {} frames", frames.len());
        for f in frames.iter().filter(|f| f.start_ms > w * 1000) {
            let nearest = starts.iter().map(|&s| s.abs_diff(f.start_ms)).min().unwrap();
            assert!(
                nearest <= 1,
                "window {w}: detected start {} is {nearest} ms off",
                f.start_ms
            );
        }
    }
}

#[test]
fn calibrated_estimates_track_frame_latency() {
    let out = run(dd(10.0), 60, TraceSource::default());
    let truth: HashMap<u64, f64> = out.frames.iter().map(|f| (f.completed_tti, f.latency_ms)).collect();
    let errs: Vec<f64> = out
        .ticks
        .iter()
        .flat_map(|t| &t.frames)
        .filter_map(|f| truth.get(&f.end_ms).map(|t| f.est_latency_ms - t))
        .collect();
    assert!(errs.len() > 3000, "{} matched frames", errs.len());
    let rms = (errs.iter().map(|e| e * e).sum::<f64>() / errs.len() as f64).sqrt();
    assert!(rms <= 1.0, "{rms}");
    assert!((out.offset_ms - 2.0).abs() < 0.5, "offset {}", out.offset_ms);
}

#[test]
fn steady_load_settles_in_band() {
    let out = run(dd(10.0), 120, constant_trace());
    let late: Vec<_> = out.rows.iter().filter(|r| r.second >= 60).collect();
    let est = late.iter().filter_map(|r| r.vr_est_latency_ms).sum::<f64>() / late.len() as f64;
    let truth = late.iter().filter_map(|r| r.vr_mean_latency_ms).sum::<f64>() / late.len() as f64;
    assert!((9.0..=11.0).contains(&est), "{est}");
    assert!((9.0..=11.0).contains(&truth), "{truth}");
}

#[test]
fn looser_target_uses_fewer_rbgs() {
    let mean_rbgs = |target| {
        let out = run(dd(target), 90, constant_trace());
        summarize_rows("dd", &out.rows, 30).unwrap().mean_vr_rbgs
    };
    let (tight, mid, loose) = (mean_rbgs(7.0), mean_rbgs(10.0), mean_rbgs(14.0));
    assert!(tight > mid && mid > loose, "{tight} {mid} {loose}");
}

#[test]
fn allocations_move_one_step_within_bounds() {
    let out = run(dd(10.0), 200, TraceSource::default());
    for pair in out.rows.windows(2) {
        assert!(pair[0].vr_rbgs.abs_diff(pair[1].vr_rbgs) <= 1);
    }
    assert!(out.rows.iter().all(|r| (8..=24).contains(&r.vr_rbgs)));
    assert!(out.replies.iter().all(|r| r.is_ack()));
}

#[test]
fn static_allocation_is_constant() {
    let out = run(Scenario::Static { rbgs: 18 }, 60, constant_trace());
    assert!(out.rows.iter().all(|r| r.vr_rbgs == 18));
    assert!(out.emitted.is_empty());
}

#[test]
fn shared_carrier_latency_rises_with_load() {
    let out = run(Scenario::NoSlicing, 420, TraceSource::default());
    let early: Vec<f64> = out.rows[10..40].iter().filter_map(|r| r.vr_mean_latency_ms).collect();
    let baseline = early.iter().sum::<f64>() / early.len() as f64;
    let raised = out
        .rows
        .iter()
        .filter(|r| r.vr_mean_latency_ms.is_some_and(|l| l >= baseline + 3.0))
        .count();
    assert!(raised > 0, "baseline {baseline}");
    assert!(out.rows.iter().all(|r| r.vr_rbgs == 0));
}

#[test]
fn oversized_request_is_denied() {
    let mut cfg = ExperimentConfig::new(dd(10.0), 60, 1, std::env::temp_dir());
    cfg.trace = TraceSource::Synth {
        fps: 60,
        bitrate_bps: 40e6,
        profile: BurstProfile::Constant,
    };
    assert!(matches!(simulate(&cfg), Err(ExperimentError::AdmissionDenied(_))));
}

#[test]
fn decoupled_controller_still_steers() {
    let mut cfg = ExperimentConfig::new(dd(10.0), 120, 4, std::env::temp_dir());
    cfg.bridge = BridgeMode::decoupled_default();
    let out = simulate(&cfg).unwrap();
    let s = summarize_rows("decoupled", &out.rows, 10).unwrap();
    assert!((8.5..=11.5).contains(&s.latency_ms.mean), "{}", s.latency_ms.mean);
    assert!(out.replies.iter().all(|r| r.is_ack()));
}

#[test]
fn cli_end_to_end() {
    let bin = env!("CARGO_BIN_EXE_vrslice");
    let dir = tempfile::tempdir().unwrap();
    let trace_path = dir.path().join("trace.csv");
    let trace = synth_vr_trace(60, 10e6, BurstProfile::Constant, 7, 70).unwrap();
    trace.write_csv(std::fs::File::create(&trace_path).unwrap()).unwrap();
    let sweep = dir.path().join("sweep");

    for n in [10, 14, 18, 22] {
        let status = Command::new(bin)
            .args([
                "run",
                "--scenario",
                &format!("static:{n}"),
                "--duration",
                "60",
                "--seed",
                "3",
            ])
            .arg("--trace")
            .arg(&trace_path)
            .arg("--out")
            .arg(&sweep)
            .output()
            .unwrap();
        assert!(status.status.success(), "{}", String::from_utf8_lossy(&status.stderr));
    }
    let dd_out = Command::new(bin)
        .args(["run", "--scenario", "data-driven:10", "--duration", "60", "--seed", "3"])
        .arg("--trace")
        .arg(&trace_path)
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(dd_out.status.success(), "{}", String::from_utf8_lossy(&dd_out.stderr));
    let dd_csv = dir.path().join("data-driven-10-1_seed3.csv");
    let header = std::fs::read_to_string(&dd_csv).unwrap();
    assert!(header.starts_with("second,vr_mean_latency_ms,vr_est_latency_ms,vr_bits,be_bits,vr_rbgs\n"));

    let summary = Command::new(bin).arg("summarize").arg(&dd_csv).output().unwrap();
    assert!(summary.status.success());
    assert!(String::from_utf8_lossy(&summary.stdout).contains("median"));

    let compare = Command::new(bin)
        .arg("compare")
        .arg(&dd_csv)
        .arg(&sweep)
        .output()
        .unwrap();
    assert!(compare.status.success());
    let text = String::from_utf8_lossy(&compare.stdout);
    assert!(
        text.contains("best-effort gain") || text.contains("not comparable"),
        "{text}"
    );

    let config = dir.path().join("deny.json");
    std::fs::write(
        &config,
        r#"{"scenario":{"kind":"data_driven","target_ms":10,"slack_ms":1},"duration_s":60,"seed":1,"out_dir":"unused",
            "trace":{"source":"synth","fps":60,"bitrate_bps":4e7,"profile":{"kind":"constant"}}}"#,
    )
    .unwrap();
    let denied = Command::new(bin)
        .arg("run")
        .arg("--config")
        .arg(&config)
        .output()
        .unwrap();
    assert!(!denied.status.success());
    assert!(String::from_utf8_lossy(&denied.stderr).contains("denied"));

    let bad = Command::new(bin)
        .args(["run", "--scenario", "static:25"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}
