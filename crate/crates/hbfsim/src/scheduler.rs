//! Per-slot allocation planning on the (symbol, layer) grid under the three
//! round-robin schedulers, MMSE applicability grouping, and HARQ feedback
//! handling.
//!
//! TMRS is the single-layer baseline. PMRS packs users into SDMA bundles
//! with a common start symbol (TDMA first, SDMA second; trailing symbols in
//! a bundle are wasted as padding). AMRS splits users into per-layer groups
//! and time-multiplexes each layer independently with no padding, at the
//! price of asynchronous starts.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::beamforming::BfMode;
use crate::phy::Direction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchedulerKind {
    Tmrs,
    Pmrs,
    Amrs,
}

impl SchedulerKind {
    pub fn label(self) -> &'static str {
        match self {
            SchedulerKind::Tmrs => "tmrs",
            SchedulerKind::Pmrs => "pmrs",
            SchedulerKind::Amrs => "amrs",
        }
    }
}

/// Contiguous span of data symbols handed to one direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymbolRegion {
    pub start: usize,
    pub len: usize,
}

impl SymbolRegion {
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }
}

/// Pending HARQ retransmission visible to the scheduler.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetxDemand {
    pub tb_id: u64,
    pub symbols: usize,
}

/// Per-user demand in one direction for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDemand {
    pub user: usize,
    pub mcs: usize,
    /// Fresh queue expressed in symbols at the current MCS (>= 1 when the
    /// queue is non-empty).
    pub fresh_symbols: usize,
    pub fresh_bits: u64,
    pub retx: Vec<RetxDemand>,
}

impl UserDemand {
    pub fn total_symbols(&self) -> usize {
        self.fresh_symbols + self.retx.iter().map(|r| r.symbols).sum::<usize>()
    }
}

/// One scheduled transmission: a user holding all subcarriers of a span of
/// symbols on one layer. Exactly one transport block per allocation.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    pub user: usize,
    pub layer: usize,
    pub start: usize,
    pub len: usize,
    pub direction: Direction,
    pub mcs: usize,
    pub is_retx: bool,
    pub retx_tb: Option<u64>,
    /// Trailing wasted symbols on this layer of a PMRS bundle.
    pub padding: usize,
    /// Filled in at plan finalization, before SINR realization.
    pub bf_mode: Option<BfMode>,
}

impl Allocation {
    pub fn end(&self) -> usize {
        self.start + self.len - 1
    }

    pub fn overlaps(&self, other: &Allocation) -> bool {
        self.start <= other.end() && other.start <= self.end()
    }
}

/// PMRS bundle bookkeeping for the structural audit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BundleInfo {
    pub direction: Direction,
    pub start: usize,
    pub len: usize,
}

/// Scheduler output for one slot.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SlotPlan {
    pub slot: u64,
    pub allocations: Vec<Allocation>,
    pub bundles: Vec<BundleInfo>,
    /// Retransmissions that can never fit the current grid and are abandoned.
    pub dropped_retx: Vec<u64>,
}

/// Round-robin rotation over all users. Users that received an allocation
/// move to the back in service order, so the head of the queue is always the
/// first user not served in the previous slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RrQueue {
    order: Vec<usize>,
}

impl RrQueue {
    pub fn new(n_users: usize) -> Self {
        Self {
            order: (0..n_users).collect(),
        }
    }

    /// Users with demand, in current rotation order.
    pub fn ordered_active(&self, has_demand: impl Fn(usize) -> bool) -> Vec<usize> {
        self.order.iter().copied().filter(|&u| has_demand(u)).collect()
    }

    /// Move the served users (in service order) to the back of the rotation.
    pub fn mark_served(&mut self, served: &[usize]) {
        self.order.retain(|u| !served.contains(u));
        self.order.extend_from_slice(served);
    }
}

fn demand_of<'a>(demands: &'a [UserDemand], user: usize) -> Option<&'a UserDemand> {
    demands.iter().find(|d| d.user == user && d.total_symbols() > 0)
}

/// Single-layer round robin: users served in rotation order, each getting
/// min(requested, remaining) symbols, concatenated with no gaps.
pub fn tmrs_schedule(
    demands: &[UserDemand],
    rr: &mut RrQueue,
    region: SymbolRegion,
    direction: Direction,
    slot: u64,
) -> SlotPlan {
    let mut plan = SlotPlan {
        slot,
        ..SlotPlan::default()
    };
    if region.len == 0 {
        return plan;
    }
    let mut cursor = region.start;
    let mut served = Vec::new();
    for user in rr.ordered_active(|u| demand_of(demands, u).is_some()) {
        if cursor > region.end() {
            break;
        }
        let d = demand_of(demands, user).expect("active user has demand");
        let mut got_any = false;
        let mut blocked = false;
        for rt in &d.retx {
            let remaining = region.end() + 1 - cursor;
            if rt.symbols <= remaining {
                plan.allocations.push(Allocation {
                    user,
                    layer: 0,
                    start: cursor,
                    len: rt.symbols,
                    direction,
                    mcs: d.mcs,
                    is_retx: true,
                    retx_tb: Some(rt.tb_id),
                    padding: 0,
                    bf_mode: None,
                });
                cursor += rt.symbols;
                got_any = true;
            } else {
                // Retransmissions are atomic and take priority; the user
                // waits rather than leapfrogging fresh data past them.
                blocked = true;
                break;
            }
        }
        let remaining = region.end() + 1 - cursor;
        if !blocked && d.fresh_symbols > 0 && remaining > 0 {
            let len = d.fresh_symbols.min(remaining);
            plan.allocations.push(Allocation {
                user,
                layer: 0,
                start: cursor,
                len,
                direction,
                mcs: d.mcs,
                is_retx: false,
                retx_tb: None,
                padding: 0,
                bf_mode: None,
            });
            cursor += len;
            got_any = true;
        }
        if got_any {
            served.push(user);
        }
    }
    rr.mark_served(&served);
    plan
}

/// Padded multi-layer round robin: ceil(active/n_layers) SDMA bundles of
/// floor(len/n_bundles) symbols each; every transmission in a bundle starts
/// at the bundle's first symbol, shorter ones leave trailing padding.
pub fn pmrs_schedule(
    demands: &[UserDemand],
    rr: &mut RrQueue,
    region: SymbolRegion,
    n_layers: usize,
    direction: Direction,
    slot: u64,
) -> SlotPlan {
    let mut plan = SlotPlan {
        slot,
        ..SlotPlan::default()
    };
    if region.len == 0 {
        return plan;
    }
    let active = rr.ordered_active(|u| demand_of(demands, u).is_some());
    if active.is_empty() {
        return plan;
    }
    let n_bundles = active.len().div_ceil(n_layers).min(region.len);
    let bundle_len = region.len / n_bundles;
    let mut served = Vec::new();
    for (b, chunk) in active.chunks(n_layers).take(n_bundles).enumerate() {
        let start = region.start + b * bundle_len;
        plan.bundles.push(BundleInfo {
            direction,
            start,
            len: bundle_len,
        });
        for (layer, &user) in chunk.iter().enumerate() {
            let d = demand_of(demands, user).expect("active user has demand");
            // One transmission per bundle layer: the first pending
            // retransmission if it fits, otherwise fresh data. A
            // retransmission longer than the bundle can never be placed and
            // is abandoned to the RLC.
            let (len, is_retx, retx_tb) = if let Some(rt) = d.retx.first() {
                if rt.symbols <= bundle_len {
                    (rt.symbols, true, Some(rt.tb_id))
                } else {
                    plan.dropped_retx.push(rt.tb_id);
                    (d.fresh_symbols.min(bundle_len), false, None)
                }
            } else {
                (d.fresh_symbols.min(bundle_len), false, None)
            };
            if len == 0 {
                served.push(user);
                continue;
            }
            plan.allocations.push(Allocation {
                user,
                layer,
                start,
                len,
                direction,
                mcs: d.mcs,
                is_retx,
                retx_tb,
                padding: bundle_len - len,
                bf_mode: None,
            });
            served.push(user);
        }
    }
    rr.mark_served(&served);
    plan
}

/// Asynchronous multi-layer round robin: users split into n_layers groups in
/// rotation order (sizes differing by at most one), each group
/// time-multiplexed on its own layer with no gaps. Saturated users are
/// capped at floor(len * n_layers / active).
pub fn amrs_schedule(
    demands: &[UserDemand],
    rr: &mut RrQueue,
    region: SymbolRegion,
    n_layers: usize,
    direction: Direction,
    slot: u64,
) -> SlotPlan {
    let mut plan = SlotPlan {
        slot,
        ..SlotPlan::default()
    };
    if region.len == 0 {
        return plan;
    }
    let active = rr.ordered_active(|u| demand_of(demands, u).is_some());
    if active.is_empty() {
        return plan;
    }
    let cap = (region.len * n_layers / active.len()).max(1);
    let base = active.len() / n_layers;
    let extra = active.len() % n_layers;
    let mut served = Vec::new();
    let mut offset = 0;
    for layer in 0..n_layers {
        let size = base + usize::from(layer < extra);
        let group = &active[offset..offset + size];
        offset += size;
        let mut cursor = region.start;
        for &user in group {
            if cursor > region.end() {
                break;
            }
            let d = demand_of(demands, user).expect("active user has demand");
            let mut budget = cap;
            let mut got_any = false;
            let mut blocked = false;
            for rt in &d.retx {
                if rt.symbols > cap {
                    // Never fits under the fairness cap; abandon to RLC.
                    plan.dropped_retx.push(rt.tb_id);
                    continue;
                }
                let remaining = region.end() + 1 - cursor;
                if rt.symbols <= budget && rt.symbols <= remaining {
                    plan.allocations.push(Allocation {
                        user,
                        layer,
                        start: cursor,
                        len: rt.symbols,
                        direction,
                        mcs: d.mcs,
                        is_retx: true,
                        retx_tb: Some(rt.tb_id),
                        padding: 0,
                        bf_mode: None,
                    });
                    cursor += rt.symbols;
                    budget -= rt.symbols;
                    got_any = true;
                } else {
                    blocked = true;
                    break;
                }
            }
            let remaining = region.end() + 1 - cursor;
            if !blocked && d.fresh_symbols > 0 && budget > 0 && remaining > 0 {
                let len = d.fresh_symbols.min(budget).min(remaining);
                plan.allocations.push(Allocation {
                    user,
                    layer,
                    start: cursor,
                    len,
                    direction,
                    mcs: d.mcs,
                    is_retx: false,
                    retx_tb: None,
                    padding: 0,
                    bf_mode: None,
                });
                cursor += len;
                got_any = true;
            }
            if got_any {
                served.push(user);
            }
        }
    }
    rr.mark_served(&served);
    plan
}

/// Partition of a plan's allocations into MMSE-capable synchronous groups
/// and the CBF-fallback set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MmseGrouping {
    /// Indices into the plan's allocation vector; one entry per group.
    pub groups: Vec<Vec<usize>>,
    pub fallback: Vec<usize>,
}

/// Group co-scheduled allocations by MMSE applicability.
///
/// Allocations that overlap in time form connected components. A component
/// whose members all share one start symbol can estimate the joint
/// equivalent channel at that instant and is MMSE capable; any asynchronous
/// overlap poisons the entire component to CBF fallback (an allocation that
/// already started cannot change its configuration, and the newcomer never
/// observed its reference signals).
pub fn mmse_groups(plan: &SlotPlan) -> MmseGrouping {
    let n = plan.allocations.len();
    let mut component = vec![usize::MAX; n];
    let mut n_components = 0;
    for i in 0..n {
        if component[i] != usize::MAX {
            continue;
        }
        let id = n_components;
        n_components += 1;
        let mut stack = vec![i];
        component[i] = id;
        while let Some(a) = stack.pop() {
            for b in 0..n {
                if component[b] != usize::MAX {
                    continue;
                }
                let (x, y) = (&plan.allocations[a], &plan.allocations[b]);
                if x.direction == y.direction && x.layer != y.layer && x.overlaps(y) {
                    component[b] = id;
                    stack.push(b);
                }
            }
        }
    }
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); n_components];
    for (i, &c) in component.iter().enumerate() {
        members[c].push(i);
    }
    let mut grouping = MmseGrouping {
        groups: Vec::new(),
        fallback: Vec::new(),
    };
    for group in members {
        let start0 = plan.allocations[group[0]].start;
        if group.iter().all(|&i| plan.allocations[i].start == start0) {
            grouping.groups.push(group);
        } else {
            grouping.fallback.extend(group);
        }
    }
    grouping.fallback.sort_unstable();
    grouping
}

// ---------------------------------------------------------------------------
// HARQ

#[derive(Debug, Error, PartialEq, Eq)]
pub enum HarqError {
    #[error("feedback for idle HARQ process {0}")]
    IdleProcess(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HarqState {
    Idle,
    AwaitingFeedback,
}

/// One stop-and-wait HARQ process holding a transport block id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HarqProcess {
    pub id: usize,
    pub tb: Option<u64>,
    pub attempts: u32,
    pub max_attempts: u32,
    pub state: HarqState,
}

impl HarqProcess {
    pub fn new(id: usize, max_attempts: u32) -> Self {
        Self {
            id,
            tb: None,
            attempts: 0,
            max_attempts,
            state: HarqState::Idle,
        }
    }

    pub fn load(&mut self, tb: u64) {
        debug_assert_eq!(self.state, HarqState::Idle);
        self.tb = Some(tb);
        self.attempts = 1;
        self.state = HarqState::AwaitingFeedback;
    }

    /// Mark one additional transmission attempt of the held block.
    pub fn retransmitted(&mut self) {
        debug_assert!(self.tb.is_some());
        self.attempts += 1;
        self.state = HarqState::AwaitingFeedback;
    }
}

/// Outcome of processing HARQ feedback at the end of a slot.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HarqAction {
    /// ACK: block delivered, process freed.
    Release { tb: u64 },
    /// NACK below the attempt cap: demand a retransmission next slot.
    Retransmit { tb: u64 },
    /// NACK at the attempt cap: drop the block and notify RLC.
    Drop { tb: u64 },
}

/// Apply ACK/NACK feedback to a process awaiting it.
pub fn harq_on_feedback(process: &mut HarqProcess, ack: bool) -> Result<HarqAction, HarqError> {
    if process.state != HarqState::AwaitingFeedback {
        return Err(HarqError::IdleProcess(process.id));
    }
    let tb = process.tb.expect("awaiting process holds a block");
    if ack {
        process.tb = None;
        process.attempts = 0;
        process.state = HarqState::Idle;
        Ok(HarqAction::Release { tb })
    } else if process.attempts < process.max_attempts {
        // The block stays loaded; the caller schedules it next slot.
        Ok(HarqAction::Retransmit { tb })
    } else {
        process.tb = None;
        process.attempts = 0;
        process.state = HarqState::Idle;
        Ok(HarqAction::Drop { tb })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const REGION: SymbolRegion = SymbolRegion { start: 1, len: 12 };

    fn fresh(user: usize, symbols: usize) -> UserDemand {
        UserDemand {
            user,
            mcs: 9,
            fresh_symbols: symbols,
            fresh_bits: symbols as u64 * 12012,
            retx: Vec::new(),
        }
    }

    fn spans(plan: &SlotPlan) -> Vec<(usize, usize, usize, usize)> {
        plan.allocations
            .iter()
            .map(|a| (a.user, a.layer, a.start, a.len))
            .collect()
    }

    #[test]
    fn tmrs_exact_fit() {
        let demands: Vec<_> = (0..3).map(|u| fresh(u, 4)).collect();
        let mut rr = RrQueue::new(3);
        let plan = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, 0);
        assert_eq!(
            spans(&plan),
            vec![(0, 0, 1, 4), (1, 0, 5, 4), (2, 0, 9, 4)]
        );
    }

    #[test]
    fn tmrs_rollover() {
        let demands: Vec<_> = (0..7).map(|u| fresh(u, 2)).collect();
        let mut rr = RrQueue::new(7);
        let plan = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, 0);
        assert_eq!(plan.allocations.len(), 6);
        // User 6 heads the next slot.
        let plan2 = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, 1);
        assert_eq!(plan2.allocations[0].user, 6);
    }

    #[test]
    fn tmrs_single_greedy_user() {
        let demands = vec![fresh(0, 1000)];
        let mut rr = RrQueue::new(1);
        let plan = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, 0);
        assert_eq!(spans(&plan), vec![(0, 0, 1, 12)]);
    }

    #[test]
    fn pmrs_seven_users_four_layers() {
        let demands: Vec<_> = (0..7).map(|u| fresh(u, 100)).collect();
        let mut rr = RrQueue::new(7);
        let plan = pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        assert_eq!(plan.bundles.len(), 2);
        assert_eq!(plan.bundles[0].len, 6);
        let b1: Vec<_> = plan.allocations.iter().filter(|a| a.start == 1).collect();
        let b2: Vec<_> = plan.allocations.iter().filter(|a| a.start == 7).collect();
        assert_eq!(b1.len(), 4);
        assert_eq!(b2.len(), 3);
        for a in &plan.allocations {
            assert_eq!(a.len, 6);
            assert_eq!(a.padding, 0);
        }
    }

    #[test]
    fn pmrs_single_bundle_when_users_fit() {
        let demands: Vec<_> = (0..4).map(|u| fresh(u, 100)).collect();
        let mut rr = RrQueue::new(4);
        let plan = pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        assert_eq!(plan.bundles.len(), 1);
        assert_eq!(plan.bundles[0].len, 12);
        assert!(plan.allocations.iter().all(|a| a.start == 1 && a.len == 12));
    }

    #[test]
    fn pmrs_padding_marked() {
        let mut demands: Vec<_> = (0..7).map(|u| fresh(u, 100)).collect();
        demands[2].fresh_symbols = 2;
        let mut rr = RrQueue::new(7);
        let plan = pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        let a = plan.allocations.iter().find(|a| a.user == 2).unwrap();
        assert_eq!(a.len, 2);
        assert_eq!(a.padding, 4);
    }

    #[test]
    fn amrs_group_sizes_and_cap() {
        let demands: Vec<_> = (0..7).map(|u| fresh(u, 100)).collect();
        let mut rr = RrQueue::new(7);
        let plan = amrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        let mut group_sizes = [0usize; 4];
        for a in &plan.allocations {
            group_sizes[a.layer] += 1;
            assert_eq!(a.len, 6, "cap = floor(48/7) = 6");
            assert_eq!(a.padding, 0);
        }
        let mut sorted = group_sizes;
        sorted.sort_unstable();
        assert_eq!(sorted, [1, 2, 2, 2]);
    }

    #[test]
    fn amrs_no_gaps_per_layer() {
        let mut demands: Vec<_> = (0..7).map(|u| fresh(u, 100)).collect();
        demands[0].fresh_symbols = 2;
        demands[1].fresh_symbols = 3;
        let mut rr = RrQueue::new(7);
        let plan = amrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        for layer in 0..4 {
            let mut allocs: Vec<_> = plan
                .allocations
                .iter()
                .filter(|a| a.layer == layer)
                .collect();
            allocs.sort_by_key(|a| a.start);
            let mut expected = REGION.start;
            for a in allocs {
                assert_eq!(a.start, expected, "gap on layer {layer}");
                expected = a.end() + 1;
            }
        }
    }

    #[test]
    fn amrs_single_layer_matches_tmrs_below_cap() {
        let demands: Vec<_> = (0..3).map(|u| fresh(u, 3)).collect();
        let mut rr_a = RrQueue::new(3);
        let mut rr_t = RrQueue::new(3);
        let a = amrs_schedule(&demands, &mut rr_a, REGION, 1, Direction::Ul, 0);
        let t = tmrs_schedule(&demands, &mut rr_t, REGION, Direction::Ul, 0);
        assert_eq!(a.allocations, t.allocations);
        assert_eq!(rr_a, rr_t);
    }

    #[test]
    fn mmse_groups_synchronous_pair() {
        let mk = |layer, start, len| Allocation {
            user: layer,
            layer,
            start,
            len,
            direction: Direction::Dl,
            mcs: 0,
            is_retx: false,
            retx_tb: None,
            padding: 0,
            bf_mode: None,
        };
        let plan = SlotPlan {
            slot: 0,
            allocations: vec![mk(0, 1, 6), mk(1, 1, 4)],
            bundles: Vec::new(),
            dropped_retx: Vec::new(),
        };
        let g = mmse_groups(&plan);
        assert_eq!(g.groups.len(), 1);
        assert_eq!(g.groups[0], vec![0, 1]);
        assert!(g.fallback.is_empty());
    }

    #[test]
    fn mmse_groups_async_overlap_poisons_both() {
        let mk = |layer, start, len| Allocation {
            user: layer,
            layer,
            start,
            len,
            direction: Direction::Dl,
            mcs: 0,
            is_retx: false,
            retx_tb: None,
            padding: 0,
            bf_mode: None,
        };
        let plan = SlotPlan {
            slot: 0,
            allocations: vec![mk(0, 1, 6), mk(1, 3, 6)],
            bundles: Vec::new(),
            dropped_retx: Vec::new(),
        };
        let g = mmse_groups(&plan);
        assert!(g.groups.is_empty());
        assert_eq!(g.fallback, vec![0, 1]);
    }

    #[test]
    fn mmse_groups_transitive_poisoning() {
        // B shares A's start but C overlaps A asynchronously: all fall back.
        let mk = |layer, start, len| Allocation {
            user: layer,
            layer,
            start,
            len,
            direction: Direction::Dl,
            mcs: 0,
            is_retx: false,
            retx_tb: None,
            padding: 0,
            bf_mode: None,
        };
        let plan = SlotPlan {
            slot: 0,
            allocations: vec![mk(0, 1, 6), mk(1, 1, 4), mk(2, 5, 4)],
            bundles: Vec::new(),
            dropped_retx: Vec::new(),
        };
        let g = mmse_groups(&plan);
        assert!(g.groups.is_empty());
        assert_eq!(g.fallback, vec![0, 1, 2]);
    }

    #[test]
    fn mmse_groups_disjoint_singletons() {
        let mk = |layer, start, len| Allocation {
            user: layer,
            layer,
            start,
            len,
            direction: Direction::Dl,
            mcs: 0,
            is_retx: false,
            retx_tb: None,
            padding: 0,
            bf_mode: None,
        };
        let plan = SlotPlan {
            slot: 0,
            allocations: vec![mk(0, 1, 3), mk(1, 5, 3)],
            bundles: Vec::new(),
            dropped_retx: Vec::new(),
        };
        let g = mmse_groups(&plan);
        assert_eq!(g.groups.len(), 2);
        assert!(g.fallback.is_empty());
    }

    #[test]
    fn pmrs_plans_have_empty_fallback() {
        let demands: Vec<_> = (0..7).map(|u| fresh(u, u % 5 + 1)).collect();
        let mut rr = RrQueue::new(7);
        for slot in 0..20 {
            let plan = pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, slot);
            let g = mmse_groups(&plan);
            assert!(g.fallback.is_empty(), "slot {slot}");
        }
    }

    #[test]
    fn retx_takes_priority_and_next_slot() {
        let mut demands: Vec<_> = (0..2).map(|u| fresh(u, 4)).collect();
        demands[0].retx.push(RetxDemand {
            tb_id: 99,
            symbols: 3,
        });
        let mut rr = RrQueue::new(2);
        let plan = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, 5);
        assert_eq!(plan.allocations[0].retx_tb, Some(99));
        assert_eq!(plan.allocations[0].start, 1);
        assert!(plan.allocations[0].is_retx);
    }

    #[test]
    fn pmrs_drops_oversized_retx() {
        let mut demands: Vec<_> = (0..7).map(|u| fresh(u, 100)).collect();
        // Bundle length will be 6; an 8-symbol retransmission can never fit.
        demands[0].retx.push(RetxDemand {
            tb_id: 7,
            symbols: 8,
        });
        let mut rr = RrQueue::new(7);
        let plan = pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, 0);
        assert_eq!(plan.dropped_retx, vec![7]);
    }

    #[test]
    fn rr_fairness_window() {
        // Saturated TMRS: over any 20-slot window, per-user symbol totals
        // differ by at most one allocation quantum.
        let demands: Vec<_> = (0..7).map(|u| fresh(u, 1000)).collect();
        let mut rr = RrQueue::new(7);
        let mut totals = vec![0usize; 7];
        let mut quantum = 0;
        for slot in 0..20 {
            let plan = tmrs_schedule(&demands, &mut rr, REGION, Direction::Dl, slot);
            for a in &plan.allocations {
                totals[a.user] += a.len;
                quantum = quantum.max(a.len);
            }
        }
        let max = *totals.iter().max().unwrap();
        let min = *totals.iter().min().unwrap();
        assert!(max - min <= quantum, "totals {totals:?} quantum {quantum}");
    }

    #[test]
    fn no_layer_overlap_property() {
        let demands: Vec<_> = (0..7).map(|u| fresh(u, (u * 3) % 7 + 1)).collect();
        let mut rr = RrQueue::new(7);
        for slot in 0..30 {
            for plan in [
                amrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, slot),
                pmrs_schedule(&demands, &mut rr, REGION, 4, Direction::Dl, slot),
            ] {
                for (i, a) in plan.allocations.iter().enumerate() {
                    assert!(a.start >= 1 && a.end() <= 12);
                    for b in plan.allocations.iter().skip(i + 1) {
                        if a.layer == b.layer && a.direction == b.direction {
                            assert!(!a.overlaps(b), "slot {slot}: {a:?} vs {b:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn harq_feedback_actions() {
        let mut p = HarqProcess::new(0, 3);
        p.load(42);
        assert_eq!(harq_on_feedback(&mut p, true), Ok(HarqAction::Release { tb: 42 }));
        assert_eq!(p.state, HarqState::Idle);
        // Feedback for an idle process is a protocol error.
        assert_eq!(harq_on_feedback(&mut p, true), Err(HarqError::IdleProcess(0)));

        p.load(43);
        assert_eq!(
            harq_on_feedback(&mut p, false),
            Ok(HarqAction::Retransmit { tb: 43 })
        );
        p.retransmitted();
        assert_eq!(
            harq_on_feedback(&mut p, false),
            Ok(HarqAction::Retransmit { tb: 43 })
        );
        p.retransmitted();
        assert_eq!(p.attempts, 3);
        // Third consecutive NACK at the cap drops the block.
        assert_eq!(harq_on_feedback(&mut p, false), Ok(HarqAction::Drop { tb: 43 }));
        assert_eq!(p.state, HarqState::Idle);
    }
}
