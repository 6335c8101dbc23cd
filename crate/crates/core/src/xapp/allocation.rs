//! Allocation controller: turns per-slice decisions into reallocation commands.

use std::collections::BTreeMap;

use crate::bridge::SliceControlMsg;
use crate::ids::SliceId;

use super::control::{ControlDecision, Decision};

/// Monotonic epoch source shared by every message the controller emits.
#[derive(Clone, Debug, Default)]
pub struct EpochCounter {
    last: u64,
}

impl EpochCounter {
    pub fn next_epoch(&mut self) -> u64 {
        self.last += 1;
        self.last
    }

    pub fn last(&self) -> u64 {
        self.last
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SliceAllocation {
    pub slice_id: SliceId,
    pub current_rbgs: usize,
    pub min_rbgs: usize,
    pub max_rbgs: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AllocationOutcome {
    pub messages: Vec<SliceControlMsg>,
    /// Slices whose increase could not be granted.
    pub starved: Vec<SliceId>,
}

/// Applies decisions with a fixed step. Decreases are applied first and free
/// RBGs for this round; increases are then granted in ascending slice id
/// order from whatever the best-effort slice holds above `total - floor`.
pub fn allocation_controller(
    decisions: &BTreeMap<SliceId, ControlDecision>,
    slices: &[SliceAllocation],
    total_rbgs: usize,
    best_effort_floor: usize,
    step: usize,
    epochs: &mut EpochCounter,
) -> AllocationOutcome {
    let mut target: BTreeMap<&SliceId, usize> = slices.iter().map(|s| (&s.slice_id, s.current_rbgs)).collect();
    let by_id: BTreeMap<&SliceId, &SliceAllocation> = slices.iter().map(|s| (&s.slice_id, s)).collect();
    let mut out = AllocationOutcome::default();

    for (id, d) in decisions {
        let Some(s) = by_id.get(id) else { continue };
        if d.value == Decision::Decrease {
            let next = s.current_rbgs.saturating_sub(step).max(s.min_rbgs);
            target.insert(&s.slice_id, next);
        }
    }

    let assigned: usize = target.values().sum();
    let mut pool = total_rbgs.saturating_sub(best_effort_floor).saturating_sub(assigned);
    for (id, d) in decisions {
        let Some(s) = by_id.get(id) else { continue };
        if d.value != Decision::Increase {
            continue;
        }
        let want = (s.current_rbgs + step).min(s.max_rbgs).saturating_sub(s.current_rbgs);
        let grant = want.min(pool);
        if grant == 0 {
            log::info!("slice {id} starved: increase requested at {} RBGs", s.current_rbgs);
            out.starved.push(s.slice_id.clone());
            continue;
        }
        pool -= grant;
        target.insert(&s.slice_id, s.current_rbgs + grant);
    }

    for s in slices {
        let next = target[&s.slice_id];
        if next != s.current_rbgs {
            out.messages.push(SliceControlMsg::reallocate(
                s.slice_id.clone(),
                next,
                epochs.next_epoch(),
            ));
        }
    }
    out
}
