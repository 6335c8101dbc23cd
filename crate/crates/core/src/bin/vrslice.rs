use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use vrslice::bridge::BridgeMode;
use vrslice::experiment::{
    compare_static_equivalent, load_sweep, read_metrics, run_scenario, summarize, summarize_rows, ExperimentConfig,
    RunSummary, Scenario, TraceSource,
};
use vrslice::traffic::BurstProfile;

#[derive(Parser)]
#[command(
    name = "vrslice",
    about = "Sliced downlink simulator with a latency-steering slice controller"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its per-second metrics CSV.
    Run {
        /// `no-slicing`, `static:<rbgs>` or `data-driven:<target_ms>[:<slack_ms>]`
        #[arg(long)]
        scenario: Option<Scenario>,
        /// Trace CSV (`timestamp_ms,frame_bytes`), or `synth` for the built-in cyclic trace.
        #[arg(long, default_value = "synth")]
        trace: String,
        #[arg(long)]
        duration: Option<u32>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 60)]
        fps: u32,
        /// Run decoupled from the controller with this one-way delay.
        #[arg(long)]
        delay_ms: Option<u64>,
        /// Let best-effort traffic use idle dedicated RBGs.
        #[arg(long)]
        relaxed: bool,
        /// JSON experiment config; command-line flags override it.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print summary statistics for metrics CSVs.
    Summarize {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value_t = 10)]
        trim: u64,
    },
    /// Compare a data-driven run against a directory of static runs.
    Compare {
        data_driven: PathBuf,
        sweep_dir: PathBuf,
        #[arg(long, default_value_t = 10)]
        trim: u64,
    },
}

fn print_summary(s: &RunSummary) {
    let l = &s.latency_ms;
    let b = &s.best_effort_mbps;
    println!("{}", s.name);
    println!(
        "  latency ms     mean {:.2}  median {:.2}  p5 {:.2}  p25 {:.2}  p75 {:.2}  p95 {:.2}",
        l.mean, l.median, l.p5, l.p25, l.p75, l.p95
    );
    println!(
        "  best-effort    mean {:.2}  median {:.2}  p5 {:.2}  p25 {:.2}  p75 {:.2}  p95 {:.2} Mbit/s",
        b.mean, b.median, b.p5, b.p25, b.p75, b.p95
    );
    match s.mean_est_latency_ms {
        Some(e) => println!("  estimated ms   mean {e:.2}"),
        None => println!("  estimated ms   -"),
    }
    println!("  vr RBGs        mean {:.2} over {} s", s.mean_vr_rbgs, s.seconds);
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run {
            scenario,
            trace,
            duration,
            seed,
            out,
            fps,
            delay_ms,
            relaxed,
            config,
        } => {
            let mut cfg = match &config {
                Some(path) => {
                    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str::<ExperimentConfig>(&text)
                        .with_context(|| format!("parsing {}", path.display()))?
                }
                None => {
                    let Some(scenario) = scenario else {
                        bail!("--scenario is required without --config");
                    };
                    ExperimentConfig::new(scenario, 420, 1, "runs")
                }
            };
            if let Some(s) = scenario {
                cfg.scenario = s;
            }
            if let Some(d) = duration {
                cfg.duration_s = d;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(o) = out {
                cfg.out_dir = o;
            }
            if let Some(d) = delay_ms {
                cfg.bridge = BridgeMode::Decoupled { delay_ms: d };
            }
            if relaxed {
                cfg.strict_isolation = false;
            }
            if trace != "synth" {
                cfg.trace = TraceSource::File {
                    path: trace.into(),
                    fps,
                };
            } else if config.is_none() {
                cfg.trace = TraceSource::Synth {
                    fps,
                    bitrate_bps: 10e6,
                    profile: BurstProfile::Cyclic {
                        amplitude: 0.35,
                        period_s: 150.0,
                    },
                };
            }
            let started = Instant::now();
            let path = run_scenario(&cfg)?;
            let rows = read_metrics(&path)?;
            print_summary(&summarize_rows(
                &cfg.scenario.to_string(),
                &rows,
                u64::from(cfg.trim_s),
            )?);
            println!("wrote {} in {:.1} s", path.display(), started.elapsed().as_secs_f64());
        }
        Command::Summarize { csv, trim } => {
            for s in summarize(&csv, trim)? {
                print_summary(&s);
            }
        }
        Command::Compare {
            data_driven,
            sweep_dir,
            trim,
        } => {
            let dd = summarize(&[data_driven], trim)?.remove(0);
            let sweep = load_sweep(&sweep_dir, trim)?;
            for (n, s) in &sweep {
                println!(
                    "static {n:>2}: latency {:.2} ms, best-effort {:.2} Mbit/s",
                    s.latency_ms.mean, s.best_effort_mbps.mean
                );
            }
            println!("{}", compare_static_equivalent(&dd, &sweep));
        }
    }
    Ok(())
}
