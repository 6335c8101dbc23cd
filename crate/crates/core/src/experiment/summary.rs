use std::fmt;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::run::MetricsRow;
use super::ExperimentError;

/// Nearest-rank percentile of an ascending slice: the value at rank
/// `ceil(p/100 * n)`, 1-based.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "percentile of an empty sample");
    let n = sorted.len();
    let rank = ((p / 100.0) * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub p5: f64,
    pub p25: f64,
    pub p75: f64,
    pub p95: f64,
}

impl Stats {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            n: v.len(),
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: nearest_rank(&v, 50.0),
            p5: nearest_rank(&v, 5.0),
            p25: nearest_rank(&v, 25.0),
            p75: nearest_rank(&v, 75.0),
            p95: nearest_rank(&v, 95.0),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunSummary {
    pub name: String,
    /// Per-second mean client latency, ms.
    pub latency_ms: Stats,
    /// Per-second best-effort throughput, Mbit/s.
    pub best_effort_mbps: Stats,
    pub mean_est_latency_ms: Option<f64>,
    pub mean_vr_rbgs: f64,
    pub seconds: usize,
}

pub fn summarize_rows(name: &str, rows: &[MetricsRow], trim_s: u64) -> Result<RunSummary, ExperimentError> {
    let kept: Vec<&MetricsRow> = rows.iter().filter(|r| r.second >= trim_s).collect();
    let empty = || ExperimentError::EmptyMetrics(name.to_owned());
    let latency: Vec<f64> = kept.iter().filter_map(|r| r.vr_mean_latency_ms).collect();
    let be: Vec<f64> = kept.iter().map(|r| r.be_bits as f64 / 1e6).collect();
    let est: Vec<f64> = kept.iter().filter_map(|r| r.vr_est_latency_ms).collect();
    Ok(RunSummary {
        name: name.to_owned(),
        latency_ms: Stats::of(&latency).ok_or_else(empty)?,
        best_effort_mbps: Stats::of(&be).ok_or_else(empty)?,
        mean_est_latency_ms: (!est.is_empty()).then(|| est.iter().sum::<f64>() / est.len() as f64),
        mean_vr_rbgs: kept.iter().map(|r| r.vr_rbgs as f64).sum::<f64>() / kept.len() as f64,
        seconds: kept.len(),
    })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>, ExperimentError> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

pub fn summarize(paths: &[PathBuf], trim_s: u64) -> Result<Vec<RunSummary>, ExperimentError> {
    paths
        .iter()
        .map(|p| {
            let name = p
                .file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned());
            summarize_rows(&name, &read_metrics(p)?, trim_s)
        })
        .collect()
}

/// Static allocation needed to match a data-driven run, and what it costs
/// the best-effort flow.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum Comparison {
    Comparable {
        static_rbgs: usize,
        static_latency_ms: f64,
        static_best_effort_mbps: f64,
        data_driven_latency_ms: f64,
        data_driven_best_effort_mbps: f64,
        gain_pct: f64,
    },
    NotComparable {
        reason: String,
    },
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Comparison::Comparable {
                static_rbgs,
                static_latency_ms,
                static_best_effort_mbps,
                data_driven_latency_ms,
                data_driven_best_effort_mbps,
                gain_pct,
            } => write!(
                f,
                "data-driven {data_driven_latency_ms:.2} ms / {data_driven_best_effort_mbps:.2} Mbit/s vs \
                 static {static_rbgs} RBGs {static_latency_ms:.2} ms / {static_best_effort_mbps:.2} Mbit/s: \
                 best-effort gain {gain_pct:+.1}%"
            ),
            Comparison::NotComparable { reason } => write!(f, "not comparable: {reason}"),
        }
    }
}

/// Best-effort gain in percent of `data_driven` over `static_`.
pub fn gain_pct(data_driven_mbps: f64, static_mbps: f64) -> f64 {
    (data_driven_mbps / static_mbps - 1.0) * 100.0
}

/// Picks the smallest static allocation whose mean latency is no worse than
/// the data-driven run's. The sweep must hold at least four allocations that
/// bracket the data-driven latency.
pub fn compare_static_equivalent(data_driven: &RunSummary, sweep: &[(usize, RunSummary)]) -> Comparison {
    let target = data_driven.latency_ms.mean;
    if sweep.len() < 4 {
        return Comparison::NotComparable {
            reason: format!("sweep has {} allocations, need at least 4", sweep.len()),
        };
    }
    let lo = sweep
        .iter()
        .map(|(_, s)| s.latency_ms.mean)
        .fold(f64::INFINITY, f64::min);
    let hi = sweep
        .iter()
        .map(|(_, s)| s.latency_ms.mean)
        .fold(f64::NEG_INFINITY, f64::max);
    if !(lo <= target && target <= hi) {
        return Comparison::NotComparable {
            reason: format!("sweep latencies [{lo:.2}, {hi:.2}] ms do not bracket {target:.2} ms"),
        };
    }
    let (rbgs, s) = sweep
        .iter()
        .filter(|(_, s)| s.latency_ms.mean <= target)
        .min_by_key(|(n, _)| *n)
        .expect("bracketing guarantees a candidate");
    Comparison::Comparable {
        static_rbgs: *rbgs,
        static_latency_ms: s.latency_ms.mean,
        static_best_effort_mbps: s.best_effort_mbps.mean,
        data_driven_latency_ms: target,
        data_driven_best_effort_mbps: data_driven.best_effort_mbps.mean,
        gain_pct: gain_pct(data_driven.best_effort_mbps.mean, s.best_effort_mbps.mean),
    }
}

/// Reads every CSV in `sweep_dir` whose rows carry a constant non-zero
/// allocation, i.e. the static runs.
pub fn load_sweep(sweep_dir: impl AsRef<Path>, trim_s: u64) -> Result<Vec<(usize, RunSummary)>, ExperimentError> {
    let mut paths: Vec<PathBuf> = std::fs::read_dir(sweep_dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let rows = read_metrics(&p)?;
        let Some(first) = rows.first().map(|r| r.vr_rbgs) else {
            continue;
        };
        if first == 0 || rows.iter().any(|r| r.vr_rbgs != first) {
            continue;
        }
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        out.push((first, summarize_rows(&name, &rows, trim_s)?));
    }
    out.sort_by_key(|(n, _)| *n);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(second: u64, lat: Option<f64>, be_bits: u64, rbgs: usize) -> MetricsRow {
        MetricsRow {
            second,
            vr_mean_latency_ms: lat,
            vr_est_latency_ms: None,
            vr_bits: 0,
            be_bits,
            vr_rbgs: rbgs,
        }
    }

    #[test]
    fn stats_of_one_to_five() {
        let s = Stats::of(&[5.0, 3.0, 1.0, 4.0, 2.0]).unwrap();
        assert_eq!(
            (s.mean, s.median, s.p5, s.p25, s.p75, s.p95),
            (3.0, 3.0, 1.0, 2.0, 4.0, 5.0)
        );
        assert!(Stats::of(&[]).is_none());
    }

    #[test]
    fn nearest_rank_edges() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert_eq!(nearest_rank(&v, 5.0), 5.0);
        assert_eq!(nearest_rank(&v, 95.0), 95.0);
        assert_eq!(nearest_rank(&v, 0.0), 1.0);
        assert_eq!(nearest_rank(&v, 100.0), 100.0);
    }

    #[test]
    fn trims_warmup_and_skips_frameless_seconds() {
        let mut rows: Vec<_> = (0..10).map(|s| row(s, Some(100.0), 0, 0)).collect();
        rows.push(row(10, Some(8.0), 20_000_000, 0));
        rows.push(row(11, None, 22_000_000, 0));
        let s = summarize_rows("x", &rows, 10).unwrap();
        assert_eq!(s.latency_ms.n, 1);
        assert_eq!(s.latency_ms.mean, 8.0);
        assert_eq!(s.best_effort_mbps.mean, 21.0);
        assert_eq!(s.seconds, 2);
    }

    #[test]
    fn empty_metrics_rejected() {
        assert!(summarize_rows("x", &[], 10).is_err());
        assert!(summarize_rows("x", &[row(3, Some(1.0), 1, 0)], 10).is_err());
    }

    #[test]
    fn gain_from_best_effort_ratio() {
        // 9.5 vs 8.2 Mbit/s
        assert!((gain_pct(9.5, 8.2) - 15.85).abs() < 0.01);
    }

    fn summary(lat: f64, be: f64) -> RunSummary {
        summarize_rows("s", &[row(0, Some(lat), (be * 1e6) as u64, 1)], 0).unwrap()
    }

    #[test]
    fn picks_smallest_static_meeting_latency() {
        let sweep = vec![
            (12, summary(14.0, 16.0)),
            (15, summary(11.0, 12.0)),
            (17, summary(9.8, 10.0)),
            (18, summary(9.3, 9.0)),
            (20, summary(8.5, 7.0)),
        ];
        match compare_static_equivalent(&summary(9.9, 10.5), &sweep) {
            Comparison::Comparable {
                static_rbgs, gain_pct, ..
            } => {
                assert_eq!(static_rbgs, 17);
                assert!((gain_pct - 5.0).abs() < 1e-9);
            }
            c => panic!("{c}"),
        }
    }

    #[test]
    fn unbracketed_or_short_sweep_not_comparable() {
        let sweep = vec![
            (12, summary(14.0, 16.0)),
            (15, summary(11.0, 12.0)),
            (17, summary(9.8, 10.0)),
            (18, summary(9.3, 9.0)),
        ];
        assert!(matches!(
            compare_static_equivalent(&summary(5.0, 20.0), &sweep),
            Comparison::NotComparable { .. }
        ));
        assert!(matches!(
            compare_static_equivalent(&summary(10.0, 20.0), &sweep[..3]),
            Comparison::NotComparable { .. }
        ));
    }
}
