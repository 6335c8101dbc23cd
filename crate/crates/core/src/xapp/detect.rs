//! Video frame detection from per-millisecond MAC byte counts.
//!
//! Two passes. First, every maximal run of non-empty milliseconds becomes a
//! chunk holding one or more frames. Second, chunks are split according to the
//! frame rate: a chunk spanning `k` frame periods is taken to hold `k`
//! back-to-back frames, and if the window still holds too few frames for the
//! frame rate, the chunks with the longest per-frame duration are split further.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Length of a monitoring window.
pub const WINDOW_MS: u64 = 1000;

/// How far below the expected frame count a window may fall before chunks are re-split.
pub const DEFAULT_COUNT_TOLERANCE: u32 = 2;

#[derive(Debug, Error, PartialEq)]
pub enum WindowError {
    #[error("window must contain at least one sample")]
    Empty,
}

/// Consecutive per-millisecond bit counts for one UE.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MacSampleWindow {
    window_start_ms: u64,
    samples: Vec<u64>,
}

impl MacSampleWindow {
    pub fn new(window_start_ms: u64, samples: Vec<u64>) -> Result<Self, WindowError> {
        if samples.is_empty() {
            return Err(WindowError::Empty);
        }
        Ok(Self {
            window_start_ms,
            samples,
        })
    }

    pub fn window_start_ms(&self) -> u64 {
        self.window_start_ms
    }

    pub fn samples(&self) -> &[u64] {
        &self.samples
    }

    pub fn duration_ms(&self) -> u64 {
        self.samples.len() as u64
    }
}

/// A maximal run of non-empty milliseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Chunk {
    pub start_ms: u64,
    pub end_ms: u64,
    pub size_bits: u64,
}

impl Chunk {
    pub fn duration_ms(&self) -> u64 {
        self.end_ms - self.start_ms + 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameEstimate {
    pub start_ms: u64,
    pub end_ms: u64,
    pub size_bits: u64,
    /// Share of the chunk's duration attributed to this frame.
    pub transmission_ms: f64,
    pub est_latency_ms: f64,
}

impl FrameEstimate {
    pub fn with_offset(mut self, offset_ms: f64) -> Self {
        self.est_latency_ms = self.transmission_ms + offset_ms;
        self
    }
}

pub fn find_chunks(start_ms: u64, samples: &[u64]) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut open: Option<Chunk> = None;
    for (i, &bits) in samples.iter().enumerate() {
        let t = start_ms + i as u64;
        if bits == 0 {
            chunks.extend(open.take());
            continue;
        }
        match open.as_mut() {
            Some(c) => {
                c.end_ms = t;
                c.size_bits += bits;
            }
            None => {
                open = Some(Chunk {
                    start_ms: t,
                    end_ms: t,
                    size_bits: bits,
                })
            }
        }
    }
    chunks.extend(open);
    chunks
}

/// Splits chunks into frames given the frame rate and the observed span.
pub fn split_chunks(chunks: &[Chunk], fps: u32, window_ms: u64, tolerance: u32) -> Vec<FrameEstimate> {
    assert!(fps > 0, "fps must be positive");
    let period = 1000.0 / f64::from(fps);
    let mut counts: Vec<u64> = chunks
        .iter()
        .map(|c| ((c.duration_ms() as f64 / period).round() as u64).max(1))
        .collect();

    let expected = (window_ms as f64 * f64::from(fps) / 1000.0).round() as i64;
    let floor = expected - i64::from(tolerance);
    // on an integer-ms clock a single frame may legitimately take ceil(period)
    let split_above = period.ceil();
    let mut total: i64 = counts.iter().sum::<u64>() as i64;
    while total < floor {
        // longest per-frame duration that can still be split into >= 1 ms frames
        let candidate = chunks
            .iter()
            .zip(&counts)
            .enumerate()
            .filter(|(_, (c, &k))| k < c.duration_ms())
            .map(|(i, (c, &k))| (i, c.duration_ms() as f64 / k as f64))
            .filter(|&(_, per_frame)| per_frame > split_above)
            .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
        let Some((i, _)) = candidate else { break };
        counts[i] += 1;
        total += 1;
    }

    let mut frames = Vec::with_capacity(total.max(0) as usize);
    for (c, &k) in chunks.iter().zip(&counts) {
        let dur = c.duration_ms();
        let per_frame_ms = dur as f64 / k as f64;
        let per_frame_bits = c.size_bits / k;
        for j in 0..k {
            let start = c.start_ms + j * dur / k;
            let end = c.start_ms + (j + 1) * dur / k - 1;
            let size = if j + 1 == k {
                c.size_bits - per_frame_bits * (k - 1)
            } else {
                per_frame_bits
            };
            frames.push(FrameEstimate {
                start_ms: start,
                end_ms: end.max(start),
                size_bits: size,
                transmission_ms: per_frame_ms,
                est_latency_ms: per_frame_ms,
            });
        }
    }
    frames.sort_by_key(|f| f.start_ms);
    frames
}

/// Frames in a window, without any latency offset applied.
pub fn detect_frames(window: &MacSampleWindow, fps: u32) -> Vec<FrameEstimate> {
    let chunks = find_chunks(window.window_start_ms, &window.samples);
    split_chunks(&chunks, fps, window.duration_ms(), DEFAULT_COUNT_TOLERANCE)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn window(samples: Vec<u64>) -> MacSampleWindow {
        MacSampleWindow::new(0, samples).unwrap()
    }

    #[test]
    fn all_zero_window_has_no_frames() {
        assert!(detect_frames(&window(vec![0; 1000]), 60).is_empty());
    }

    #[test]
    fn single_isolated_chunk() {
        let mut s = vec![0; 1000];
        for x in &mut s[5..=8] {
            *x = 1000;
        }
        let frames = detect_frames(&window(s), 60);
        assert_eq!(frames.len(), 1);
        assert_eq!((frames[0].start_ms, frames[0].end_ms), (5, 8));
        assert_eq!(frames[0].transmission_ms, 4.0);
        assert_eq!(frames[0].size_bits, 4000);
    }

    #[test]
    fn abutting_pair_splits_in_two() {
        let mut s = vec![0; 1000];
        for x in &mut s[100..134] {
            *x = 500;
        }
        let frames = detect_frames(&window(s), 60);
        assert_eq!(frames.len(), 2);
        assert_eq!(frames[0].transmission_ms, 17.0);
        assert_eq!(frames[1].transmission_ms, 17.0);
        assert_eq!((frames[0].start_ms, frames[0].end_ms), (100, 116));
        assert_eq!((frames[1].start_ms, frames[1].end_ms), (117, 133));
        assert_eq!(frames[0].size_bits + frames[1].size_bits, 34 * 500);
    }

    #[test]
    fn count_pass_resplits_longest_chunk() {
        // 40 chunks of 24 ms: each rounds to one frame, 40 < 60 - 2, so the
        // earliest 18 chunks are split in two
        let mut s = vec![0; 1000];
        for c in 0..40 {
            for x in &mut s[c * 25..c * 25 + 24] {
                *x = 100;
            }
        }
        let frames = detect_frames(&window(s), 60);
        assert_eq!(frames.len(), 58);
        assert_eq!(frames[0].transmission_ms, 12.0);
        assert_eq!(frames.last().unwrap().transmission_ms, 24.0);

        // one long chunk is split only while its frames exceed the period:
        // round(940 / 16.7) = 56 frames of 16.8 ms
        let frames = detect_frames(&window([vec![100; 940], vec![0; 60]].concat()), 60);
        assert_eq!(frames.len(), 56);
    }

    #[test]
    fn count_pass_never_splits_short_chunks() {
        // ten isolated 5 ms frames in a 60 fps window: far below the expected
        // count, but no chunk is longer than a frame period
        let mut s = vec![0; 1000];
        for f in 0..10 {
            for x in &mut s[f * 100..f * 100 + 5] {
                *x = 1;
            }
        }
        assert_eq!(detect_frames(&window(s), 60).len(), 10);
    }

    #[test]
    fn chunk_at_window_edges() {
        let mut s = vec![0; 20];
        s[0] = 1;
        s[19] = 2;
        let chunks = find_chunks(1000, &s);
        assert_eq!(
            chunks,
            vec![
                Chunk {
                    start_ms: 1000,
                    end_ms: 1000,
                    size_bits: 1
                },
                Chunk {
                    start_ms: 1019,
                    end_ms: 1019,
                    size_bits: 2
                }
            ]
        );
    }

    #[test]
    fn output_ordered_by_start() {
        let mut s = vec![0; 1000];
        for x in &mut s[10..60] {
            *x = 1;
        }
        for x in &mut s[200..205] {
            *x = 1;
        }
        let frames = detect_frames(&window(s), 60);
        assert!(frames.windows(2).all(|w| w[0].start_ms <= w[1].start_ms));
        assert_eq!(frames.len(), 4);
    }

    #[test]
    fn empty_window_rejected() {
        assert_eq!(MacSampleWindow::new(0, vec![]), Err(WindowError::Empty));
    }
}
