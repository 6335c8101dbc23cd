//! Per-slice handler: buffers the monitoring stream and, once per control
//! interval, runs detection, averaging and the control rule.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::control::{control_decision, estimate_average_latency, ControlDecision, HandlerState, Observation};
use super::detect::{detect_frames, find_chunks, split_chunks, FrameEstimate, MacSampleWindow};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub window_ms: u64,
    /// Equal to `window_ms` for hopping windows; smaller values overlap.
    pub hop_ms: u64,
    pub count_tolerance: u32,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_ms: super::detect::WINDOW_MS,
            hop_ms: super::detect::WINDOW_MS,
            count_tolerance: super::detect::DEFAULT_COUNT_TOLERANCE,
        }
    }
}

/// Result of one control interval.
#[derive(Clone, Debug, PartialEq)]
pub struct TickOutcome {
    /// Exclusive end of the window, in ms.
    pub tick_ms: u64,
    pub frames: Vec<FrameEstimate>,
    pub observation: Observation,
    /// `None` while the handler has no calibrated offset.
    pub decision: Option<ControlDecision>,
}

/// Stateless form: detection, averaging and the control rule over one window.
pub fn handler_tick(state: &HandlerState, window: &MacSampleWindow) -> (Observation, ControlDecision) {
    let frames = detect_frames(window, state.fps);
    let obs = estimate_average_latency(&frames, state.offset_ms);
    (obs, control_decision(&obs, state))
}

#[derive(Clone, Debug)]
pub struct Handler {
    state: HandlerState,
    windows: WindowConfig,
    calibrated: bool,
    history: VecDeque<u64>,
    history_start_ms: u64,
    next_tick_ms: Option<u64>,
    consumed_ms: u64,
    last: Option<TickOutcome>,
}

impl Handler {
    /// A handler with `state.offset_ms` already known.
    pub fn new(state: HandlerState, windows: WindowConfig) -> Self {
        Self::build(state, windows, true)
    }

    /// A handler that measures but does not decide until [`set_offset`](Self::set_offset).
    pub fn uncalibrated(state: HandlerState, windows: WindowConfig) -> Self {
        Self::build(state, windows, false)
    }

    fn build(state: HandlerState, windows: WindowConfig, calibrated: bool) -> Self {
        assert!(windows.window_ms > 0 && windows.hop_ms > 0 && windows.hop_ms <= windows.window_ms);
        Self {
            state,
            windows,
            calibrated,
            history: VecDeque::new(),
            history_start_ms: 0,
            next_tick_ms: None,
            consumed_ms: 0,
            last: None,
        }
    }

    pub fn state(&self) -> &HandlerState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut HandlerState {
        &mut self.state
    }

    pub fn is_calibrated(&self) -> bool {
        self.calibrated
    }

    pub fn set_offset(&mut self, offset_ms: f64) {
        self.state.offset_ms = offset_ms;
        self.calibrated = true;
    }

    pub fn last_tick(&self) -> Option<&TickOutcome> {
        self.last.as_ref()
    }

    /// Feeds the sample for `tti_ms`. Samples must be consecutive. Returns an
    /// outcome when a control interval closes.
    pub fn on_sample(&mut self, tti_ms: u64, bits: u64) -> Option<TickOutcome> {
        if self.history.is_empty() {
            self.history_start_ms = tti_ms;
        }
        debug_assert_eq!(
            tti_ms,
            self.history_start_ms + self.history.len() as u64,
            "gap in sample stream"
        );
        self.history.push_back(bits);
        let hop = self.windows.hop_ms;
        let next = *self.next_tick_ms.get_or_insert((tti_ms / hop + 1) * hop);

        let keep = 2 * self.windows.window_ms as usize;
        while self.history.len() > keep {
            self.history.pop_front();
            self.history_start_ms += 1;
        }

        if tti_ms + 1 < next {
            return None;
        }
        self.next_tick_ms = Some(next + hop);
        let outcome = self.tick(next);
        self.last = Some(outcome.clone());
        Some(outcome)
    }

    /// A transmission still running when the window closes is deferred to
    /// the next window and counted there in full, unless it already spans the
    /// whole window, in which case the part seen so far is counted now.
    fn tick(&mut self, tick_ms: u64) -> TickOutcome {
        let window_start = tick_ms
            .saturating_sub(self.windows.window_ms)
            .max(self.history_start_ms);
        let region_start = if self.windows.hop_ms == self.windows.window_ms {
            self.consumed_ms.max(self.history_start_ms)
        } else {
            // extend back over a transmission that straddles the window start
            let mut t = window_start;
            while t > self.history_start_ms && self.sample_at(t) > 0 && self.sample_at(t - 1) > 0 {
                t -= 1;
            }
            t
        };
        let from = (region_start - self.history_start_ms) as usize;
        let to = (tick_ms - self.history_start_ms) as usize;
        let samples: Vec<u64> = self.history.range(from..to).copied().collect();
        let mut chunks = find_chunks(region_start, &samples);
        let mut region_end = tick_ms;
        if let Some(last) = chunks.last() {
            if last.end_ms + 1 == tick_ms && last.start_ms >= window_start && last.start_ms > region_start {
                region_end = last.start_ms;
                chunks.pop();
            }
        }
        self.consumed_ms = region_end;

        let span = region_end - region_start;
        let frames: Vec<FrameEstimate> = split_chunks(&chunks, self.state.fps, span, self.windows.count_tolerance)
            .into_iter()
            .map(|f| f.with_offset(self.state.offset_ms))
            .collect();
        let observation = estimate_average_latency(&frames, self.state.offset_ms);
        let decision = self.calibrated.then(|| control_decision(&observation, &self.state));
        TickOutcome {
            tick_ms,
            frames,
            observation,
            decision,
        }
    }

    fn sample_at(&self, t: u64) -> u64 {
        self.history[(t - self.history_start_ms) as usize]
    }
}
