//! Slot-synchronous discrete-event core: scenario construction, the per-slot
//! loop (traffic, scheduling, beamforming, SINR realization, transport block
//! outcomes, HARQ/RLC processing), seeded reproducibility, and campaign
//! aggregation.
//!
//! Effective channel gains are evaluated in the cluster domain: per link the
//! per-cluster array responses are dotted once against every candidate beam,
//! so a gain at one subcarrier costs one multiply-add per cluster instead of
//! a full matrix product.

use std::collections::{HashMap, VecDeque};

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;

use crate::array::{array_response, build_codebook, build_codebook_sector, BeamVector, Codebook, Position};
use crate::beamforming::{
    gbf_pair, mmse_precoder, BfKind, BfMode, EquivalentChannel, PrecodingMatrix,
};
use crate::channel::{drop_link, evolve, LinkGeometry, MultipathChannel, Pathloss};
use crate::events::{Event, EventQueue};
use crate::metrics::{aggregate, CampaignSummary, RunReport};
use crate::phy::{
    bler, lin_to_db, select_mcs, sinr_dl, sinr_ul, transport_block_bits, Direction, McsTable,
    PhyConfig, SlotStructure,
};
use crate::rlc::{RlcEntity, TimerOutcome};
use crate::rng::{substream, substream_seed};
use crate::scenario::Scenario;
use crate::scheduler::{
    amrs_schedule, mmse_groups, pmrs_schedule, tmrs_schedule, Allocation, HarqAction,
    HarqProcess, HarqState, RetxDemand, RrQueue, SchedulerKind, SlotPlan, SymbolRegion,
    UserDemand,
};
use crate::traffic::{AdaptiveSource, CbrSource, PacketRecord, TrafficKind};
use crate::C64;

/// UE positions uniform over the drop disc (area-uniform radius, uniform
/// angle), re-drawn when closer to the BS than the minimum distance.
pub fn drop_ues(
    seed: u64,
    count: usize,
    radius_m: f64,
    min_distance_m: f64,
    height_m: f64,
) -> Vec<Position> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let r = loop {
                let u: f64 = rng.gen_range(0.0..1.0);
                let r = radius_m * u.sqrt();
                if r >= min_distance_m {
                    break r;
                }
            };
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            Position::new(r * angle.cos(), r * angle.sin(), height_m)
        })
        .collect()
}

const HARQ_PROCESSES: usize = 16;

/// Which analog beam a transmission rides on.
#[derive(Debug, Clone, Copy)]
enum BeamRef {
    /// Geometric beam of the given user.
    Gbf(usize),
    /// BS codebook index.
    Cbf(usize),
}

#[derive(Debug)]
enum Flow {
    Cbr(CbrSource),
    Adaptive(AdaptiveSource),
}

#[derive(Debug, Clone)]
struct TbRecord {
    user: usize,
    dir: Direction,
    packets: Vec<u64>,
    used_bits: u64,
    symbols: usize,
    mcs: usize,
    nack_slot: Option<u64>,
}

struct LinkState {
    geometry: LinkGeometry,
    pathloss: Pathloss,
    channel: MultipathChannel,
    /// Delay phase per (cluster, evaluation subcarrier).
    ftab: Vec<Vec<C64>>,
    /// a_tx(dep_c)^T v_b for every BS codebook beam b.
    bs_dots: Vec<Vec<C64>>,
    /// w_b^T a_rx(arr_c) for every UE codebook beam b.
    ue_dots: Vec<Vec<C64>>,
    /// a_tx(dep_c)^T v_gbf(p) for every user's geometric beam p.
    gbf_tx_dots: Vec<Vec<C64>>,
    /// Own geometric receive beam against own clusters.
    gbf_rx_dots: Vec<C64>,
    /// Current codebook pair (BS index, UE index) and selection time.
    sel: (usize, usize),
    sel_time: f64,
    has_sel: bool,
}

impl LinkState {
    fn rx_dots(&self, scheme: BfKind) -> &[C64] {
        match scheme {
            BfKind::Gbf => &self.gbf_rx_dots,
            _ => &self.ue_dots[self.sel.1],
        }
    }

    fn tx_dots(&self, beam: BeamRef) -> &[C64] {
        match beam {
            BeamRef::Gbf(p) => &self.gbf_tx_dots[p],
            BeamRef::Cbf(b) => &self.bs_dots[b],
        }
    }
}

#[derive(Debug, Clone)]
struct FairnessSlot {
    saturated: bool,
    grants: Vec<u64>,
    quantum: usize,
}

#[derive(Debug)]
enum UnitKind {
    /// Joint MMSE evaluation of a synchronous group (plan indices).
    Group(Vec<usize>),
    /// One allocation with its overlapping interferers.
    Single {
        target: usize,
        interferers: Vec<usize>,
    },
}

struct EvalUnit {
    start: usize,
    dir: Direction,
    order: usize,
    kind: UnitKind,
}

pub struct Engine<'a> {
    sc: &'a Scenario,
    phy: PhyConfig,
    table: McsTable,
    eval_ks: Vec<usize>,
    kref_idx: usize,
    sym_dur: f64,
    slot_dur: f64,
    n_slots: u64,
    scale: f64,
    bs_codebook: Codebook,
    /// Hermitian products v_p^H v_q of the BS codebook beams (row-major).
    bs_gram: Vec<C64>,
    gbf_beams: Vec<(BeamVector, BeamVector)>,
    links: Vec<LinkState>,
    flows: Vec<[Option<Flow>; 2]>,
    rlc: Vec<[RlcEntity; 2]>,
    cqi: Vec<[f64; 2]>,
    harq: Vec<[Vec<HarqProcess>; 2]>,
    proc_of_tb: HashMap<u64, usize>,
    pending_retx: Vec<[Vec<u64>; 2]>,
    tbs: HashMap<u64, TbRecord>,
    next_tb_id: u64,
    packets: Vec<PacketRecord>,
    created_packets: Vec<[u64; 2]>,
    events: EventQueue,
    rr: [RrQueue; 2],
    rng_tb: ChaCha12Rng,
    fairness: [VecDeque<FairnessSlot>; 2],
    report: RunReport,
}

/// Execute one simulation run. The report is a pure function of
/// (scenario, seed).
pub fn run(scenario: &Scenario, seed: u64) -> RunReport {
    Engine::new(scenario, seed).execute()
}

/// Multi-run campaign: independent drops with per-run seeds derived from the
/// scenario seed, executed in parallel, aggregated in run order.
pub struct Campaign;

impl Campaign {
    pub fn run_seed(scenario_seed: u64, run_index: usize) -> u64 {
        substream_seed(scenario_seed, "run", run_index as u64)
    }

    pub fn execute(scenario: &Scenario) -> CampaignSummary {
        let reports: Vec<RunReport> = (0..scenario.runs)
            .into_par_iter()
            .map(|i| run(scenario, Self::run_seed(scenario.seed, i)))
            .collect();
        aggregate(reports)
    }
}

impl<'a> Engine<'a> {
    pub fn new(sc: &'a Scenario, seed: u64) -> Self {
        debug_assert!(sc.validate().is_ok(), "scenario must be validated");
        let phy = sc.phy();
        let eval_ks = phy.eval_subcarriers();
        let kref = phy.subcarriers() / 2;
        let kref_idx = eval_ks
            .iter()
            .position(|&k| k >= kref)
            .unwrap_or(eval_ks.len() - 1)
            .min(eval_ks.len() - 1);
        let slots = SlotStructure::new(phy.numerology);
        let slot_dur = slots.slot_duration();
        let n_slots = (sc.duration_s / slot_dur).round() as u64;
        let bs_array = sc.bs_array();
        let ue_array = sc.ue_array();
        let scale = ((bs_array.elements() * ue_array.elements()) as f64).sqrt();
        let params = sc.channel_params();

        let positions = drop_ues(
            substream_seed(seed, "drop", 0),
            sc.ue_count,
            sc.drop_radius_m,
            sc.min_bs_distance_m,
            sc.ue_height_m,
        );
        let bs_pos = Position::new(0.0, 0.0, sc.bs_height_m);

        let bs_codebook = build_codebook(&bs_array, sc.beams.bs_azimuth_count, sc.beams.bs_elevation_count);
        let gbf_beams: Vec<(BeamVector, BeamVector)> = positions
            .iter()
            .map(|ue| gbf_pair(&bs_pos, ue, &bs_array, &ue_array).expect("distinct positions"))
            .collect();

        let n_beams = bs_codebook.len();
        let mut bs_gram = vec![C64::new(0.0, 0.0); n_beams * n_beams];
        if sc.bf_scheme.is_mmse() {
            for p in 0..n_beams {
                for q in 0..n_beams {
                    bs_gram[p * n_beams + q] =
                        bs_codebook.vectors[p].dot_h(&bs_codebook.vectors[q]);
                }
            }
        }

        let links: Vec<LinkState> = positions
            .iter()
            .enumerate()
            .map(|(u, ue)| {
                let (geometry, pathloss, channel) =
                    drop_link(substream_seed(seed, "channel", u as u64), bs_pos, *ue, &params);
                Self::build_link(
                    sc, &phy, &eval_ks, &bs_array, &ue_array, &bs_codebook, &gbf_beams, geometry,
                    pathloss, channel,
                )
            })
            .collect();

        let flows = (0..sc.ue_count)
            .map(|_| {
                let mk = |d: Direction| {
                    sc.traffic.direction.includes(d).then(|| match sc.traffic.kind {
                        TrafficKind::Cbr => Flow::Cbr(CbrSource::new(
                            sc.traffic.packet_bytes,
                            sc.traffic.interval_us * 1e-6,
                        )),
                        TrafficKind::Adaptive => {
                            Flow::Adaptive(AdaptiveSource::new(sc.traffic.packet_bytes))
                        }
                    })
                };
                [mk(Direction::Dl), mk(Direction::Ul)]
            })
            .collect();

        let rlc = (0..sc.ue_count)
            .map(|u| {
                [
                    RlcEntity::new(u, Direction::Dl, sc.rlc_config()),
                    RlcEntity::new(u, Direction::Ul, sc.rlc_config()),
                ]
            })
            .collect();

        let harq = (0..sc.ue_count)
            .map(|_| {
                let pool = |_: Direction| -> Vec<HarqProcess> {
                    (0..HARQ_PROCESSES)
                        .map(|i| HarqProcess::new(i, sc.mac.harq_max_attempts))
                        .collect()
                };
                [pool(Direction::Dl), pool(Direction::Ul)]
            })
            .collect();

        let mut engine = Self {
            sc,
            table: McsTable::default(),
            sym_dur: slots.slot_duration() / SlotStructure::SYMBOLS_PER_SLOT as f64,
            slot_dur,
            n_slots,
            scale,
            bs_codebook,
            bs_gram,
            gbf_beams,
            links,
            flows,
            rlc,
            cqi: vec![[0.0; 2]; sc.ue_count],
            harq,
            proc_of_tb: HashMap::new(),
            pending_retx: vec![[Vec::new(), Vec::new()]; sc.ue_count],
            tbs: HashMap::new(),
            next_tb_id: 0,
            packets: Vec::new(),
            created_packets: vec![[0; 2]; sc.ue_count],
            events: EventQueue::new(),
            rr: [RrQueue::new(sc.ue_count), RrQueue::new(sc.ue_count)],
            rng_tb: substream(seed, "tb", 0),
            fairness: [VecDeque::new(), VecDeque::new()],
            report: RunReport::empty(seed, sc.duration_s, sc.warmup_s),
            eval_ks,
            kref_idx,
            phy,
        };
        engine.attach_cqi();
        engine
    }

    #[allow(clippy::too_many_arguments)]
    fn build_link(
        sc: &Scenario,
        phy: &PhyConfig,
        eval_ks: &[usize],
        bs_array: &crate::array::ArrayConfig,
        ue_array: &crate::array::ArrayConfig,
        bs_codebook: &Codebook,
        gbf_beams: &[(BeamVector, BeamVector)],
        geometry: LinkGeometry,
        pathloss: Pathloss,
        channel: MultipathChannel,
    ) -> LinkState {
        // UE codebook faces the BS: azimuth sector of width pi around the
        // arrival azimuth.
        let ue_codebook = build_codebook_sector(
            ue_array,
            sc.beams.ue_azimuth_count,
            sc.beams.ue_elevation_count,
            geometry.arrival.azimuth,
            std::f64::consts::PI,
        );
        let n_c = channel.clusters.len();
        let mut ftab = vec![vec![C64::new(0.0, 0.0); eval_ks.len()]; n_c];
        for (c, cl) in channel.clusters.iter().enumerate() {
            for (i, &k) in eval_ks.iter().enumerate() {
                let phase = -std::f64::consts::TAU * phy.baseband_frequency(k) * cl.delay_s;
                ftab[c][i] = C64::from_polar(1.0, phase);
            }
        }
        let tx_responses: Vec<BeamVector> = channel
            .clusters
            .iter()
            .map(|cl| array_response(bs_array, &cl.departure))
            .collect();
        let rx_responses: Vec<BeamVector> = channel
            .clusters
            .iter()
            .map(|cl| array_response(ue_array, &cl.arrival))
            .collect();
        let bs_dots = bs_codebook
            .vectors
            .iter()
            .map(|v| tx_responses.iter().map(|a| a.dot_t(v)).collect())
            .collect();
        let ue_dots = ue_codebook
            .vectors
            .iter()
            .map(|w| rx_responses.iter().map(|a| w.dot_t(a)).collect())
            .collect();
        let gbf_tx_dots = gbf_beams
            .iter()
            .map(|(v, _)| tx_responses.iter().map(|a| a.dot_t(v)).collect())
            .collect();
        LinkState {
            ftab,
            bs_dots,
            ue_dots,
            gbf_tx_dots,
            gbf_rx_dots: Vec::new(),
            sel: (0, 0),
            sel_time: 0.0,
            has_sel: false,
            geometry,
            pathloss,
            channel,
        }
    }

    fn execute(mut self) -> RunReport {
        for slot in 0..self.n_slots {
            self.step(slot);
        }
        self.finish_conservation_audit();
        self.report
    }

    // -- setup ------------------------------------------------------------

    fn attach_cqi(&mut self) {
        // Geometric receive dots need each user's own beam, then the attach
        // SNR seeds the CQI state.
        for u in 0..self.sc.ue_count {
            let w = self.gbf_beams[u].1.clone();
            let link = &mut self.links[u];
            link.gbf_rx_dots = link
                .channel
                .clusters
                .iter()
                .map(|cl| w.dot_t(&array_response(&self.sc.ue_array(), &cl.arrival)))
                .collect();
        }
        let noise = self.phy.noise_per_subcarrier_mw();
        for u in 0..self.sc.ue_count {
            self.ensure_beam(u, 0.0);
            let link = &self.links[u];
            let gains = link.channel.gains_now();
            let beam = self.own_beam(u);
            let own = self.pair_gain(u, &gains, beam);
            let l = link.pathloss.linear_gain;
            for dir in Direction::BOTH {
                let p = match dir {
                    Direction::Dl => self.phy.dl_power_per_subcarrier_mw(),
                    Direction::Ul => self.phy.ue_power_mw(),
                };
                let mean = own
                    .iter()
                    .map(|h| l * h.norm_sqr() * p / noise)
                    .sum::<f64>()
                    / own.len() as f64;
                self.cqi[u][dir.index()] = lin_to_db(mean);
            }
        }
    }

    // -- per-slot pipeline --------------------------------------------------

    fn step(&mut self, slot: u64) {
        let t0 = slot as f64 * self.slot_dur;
        let t_end = t0 + self.slot_dur;

        self.tick_traffic(t0);

        let (plan, saturation) = self.schedule(slot);
        let tb_of_alloc = self.form_tbs(&plan, slot, t0);
        self.audit_plan(&plan, saturation);

        let grouping = mmse_groups(&plan);
        let mut plan = plan;
        self.assign_bf_modes(&mut plan, &grouping);

        let sinr_db = self.realize_sinr(&plan, &grouping, t0);
        self.resolve_outcomes(&plan, &tb_of_alloc, &sinr_db, slot, t0, t_end);
        self.process_timers(t_end);
        self.check_rtos(t_end);
    }

    fn tick_traffic(&mut self, now: f64) {
        for u in 0..self.sc.ue_count {
            for dir in Direction::BOTH {
                let d = dir.index();
                let mut to_enqueue: Vec<(f64, u32)> = Vec::new();
                match &mut self.flows[u][d] {
                    None => {}
                    Some(Flow::Cbr(src)) => {
                        let bytes = src.packet_bytes;
                        for stamp in src.tick(now) {
                            to_enqueue.push((stamp, bytes));
                        }
                    }
                    Some(Flow::Adaptive(src)) => {
                        let bytes = src.packet_bytes;
                        let n = src.releasable();
                        for _ in 0..n {
                            to_enqueue.push((now, bytes));
                        }
                    }
                }
                for (stamp, bytes) in to_enqueue {
                    let id = self.create_packet(u, dir, bytes, stamp);
                    if let Some(Flow::Adaptive(src)) = &mut self.flows[u][d] {
                        src.on_release(id);
                    }
                    self.rlc[u][d].enqueue(id, u64::from(bytes) * 8);
                }
            }
        }
    }

    fn create_packet(&mut self, user: usize, dir: Direction, bytes: u32, created: f64) -> u64 {
        let id = self.packets.len() as u64;
        self.packets.push(PacketRecord {
            id,
            user,
            direction: dir,
            size_bytes: bytes,
            created,
            first_tx: None,
            delivered: None,
            harq_attempts: 0,
            am_retx_count: 0,
        });
        self.created_packets[user][dir.index()] += 1;
        if created >= self.sc.warmup_s {
            self.report.generated_packets[dir.index()] += 1;
            self.report.offered_bits[dir.index()] += u64::from(bytes) * 8;
        }
        id
    }

    /// Demand snapshot, DL/UL region split, and per-direction scheduling.
    fn schedule(&mut self, slot: u64) -> (SlotPlan, [Option<FairnessSlot>; 2]) {
        let k = self.phy.subcarriers();
        let mut demands: [Vec<UserDemand>; 2] = [Vec::new(), Vec::new()];
        let mut demand_bits = [0u64; 2];
        for dir in Direction::BOTH {
            let d = dir.index();
            for u in 0..self.sc.ue_count {
                let queued = self.rlc[u][d].queued_bits();
                let mcs = select_mcs(self.cqi[u][d], &self.table);
                let per_symbol = transport_block_bits(mcs, 1, k, &self.table);
                let fresh_symbols = if queued == 0 {
                    0
                } else {
                    (queued.div_ceil(per_symbol) as usize).max(1)
                };
                let retx: Vec<RetxDemand> = self.pending_retx[u][d]
                    .iter()
                    .map(|&tb_id| RetxDemand {
                        tb_id,
                        symbols: self.tbs[&tb_id].symbols,
                    })
                    .collect();
                demand_bits[d] += queued
                    + retx
                        .iter()
                        .map(|r| self.tbs[&r.tb_id].used_bits)
                        .sum::<u64>();
                if fresh_symbols > 0 || !retx.is_empty() {
                    demands[d].push(UserDemand {
                        user: u,
                        mcs,
                        fresh_symbols,
                        fresh_bits: queued,
                        retx,
                    });
                }
            }
        }

        // Flexible-symbol split: DL first, UL second, proportional to
        // outstanding demand with at least one symbol per loaded direction.
        let n_data = SlotStructure::DATA_SYMBOLS;
        let first = SlotStructure::FIRST_DATA_SYMBOL;
        let (dl_bits, ul_bits) = (demand_bits[0], demand_bits[1]);
        let (dl_len, ul_len) = if dl_bits == 0 && ul_bits == 0 {
            (0, 0)
        } else if ul_bits == 0 {
            (n_data, 0)
        } else if dl_bits == 0 {
            (0, n_data)
        } else {
            let frac = dl_bits as f64 / (dl_bits + ul_bits) as f64;
            let dl = ((n_data as f64 * frac).round() as usize).clamp(1, n_data - 1);
            (dl, n_data - dl)
        };
        let regions = [
            SymbolRegion {
                start: first,
                len: dl_len,
            },
            SymbolRegion {
                start: first + dl_len,
                len: ul_len,
            },
        ];

        let mut plan = SlotPlan {
            slot,
            ..SlotPlan::default()
        };
        let mut saturation: [Option<FairnessSlot>; 2] = [None, None];
        for dir in Direction::BOTH {
            let d = dir.index();
            let region = regions[d];
            let sub = match self.sc.scheduler {
                SchedulerKind::Tmrs => {
                    tmrs_schedule(&demands[d], &mut self.rr[d], region, dir, slot)
                }
                SchedulerKind::Pmrs => pmrs_schedule(
                    &demands[d],
                    &mut self.rr[d],
                    region,
                    self.sc.n_layers,
                    dir,
                    slot,
                ),
                SchedulerKind::Amrs => amrs_schedule(
                    &demands[d],
                    &mut self.rr[d],
                    region,
                    self.sc.n_layers,
                    dir,
                    slot,
                ),
            };
            // Fairness bookkeeping: a saturated slot has every user asking
            // for at least the direction's full capacity share.
            let capacity = region.len * self.sc.n_layers;
            let all_active = demands[d].len() == self.sc.ue_count;
            let total_requested: usize = demands[d].iter().map(UserDemand::total_symbols).sum();
            let mut grants = vec![0u64; self.sc.ue_count];
            let mut quantum = 0usize;
            for a in &sub.allocations {
                grants[a.user] += a.len as u64;
                quantum = quantum.max(a.len);
            }
            saturation[d] = Some(FairnessSlot {
                saturated: region.len > 0 && all_active && total_requested >= capacity,
                grants,
                quantum,
            });
            plan.allocations.extend(sub.allocations);
            plan.bundles.extend(sub.bundles);
            plan.dropped_retx.extend(sub.dropped_retx);
        }
        (plan, saturation)
    }

    /// Bind transport blocks to allocations: fresh allocations drain the RLC
    /// queue (whole packets, FIFO), retransmissions re-send their original
    /// block at its original MCS.
    fn form_tbs(&mut self, plan: &SlotPlan, slot: u64, t0: f64) -> Vec<u64> {
        let k = self.phy.subcarriers();
        let mut tb_of_alloc = Vec::with_capacity(plan.allocations.len());
        for a in &plan.allocations {
            let d = a.direction.index();
            if let Some(tb_id) = a.retx_tb {
                self.pending_retx[a.user][d].retain(|&t| t != tb_id);
                let tb = self.tbs.get_mut(&tb_id).expect("retx block exists");
                if let Some(nack_slot) = tb.nack_slot {
                    if slot != nack_slot + 1 {
                        self.report.violations.retx_latency += 1;
                    }
                }
                self.report.harq_retransmissions += 1;
                let proc = self.proc_of_tb[&tb_id];
                self.harq[a.user][d][proc].retransmitted();
                tb_of_alloc.push(tb_id);
                continue;
            }
            let capacity = transport_block_bits(a.mcs, a.len, k, &self.table);
            let packet_ids = self.rlc[a.user][d].drain_into_tb(capacity);
            let mut used = 0;
            let tx_time = t0 + a.start as f64 * self.sym_dur;
            for &pid in &packet_ids {
                let p = &mut self.packets[pid as usize];
                used += p.bits();
                p.first_tx.get_or_insert(tx_time);
            }
            let tb_id = self.next_tb_id;
            self.next_tb_id += 1;
            self.tbs.insert(
                tb_id,
                TbRecord {
                    user: a.user,
                    dir: a.direction,
                    packets: packet_ids,
                    used_bits: used,
                    symbols: a.len,
                    mcs: a.mcs,
                    nack_slot: None,
                },
            );
            let proc = self.harq[a.user][d]
                .iter()
                .position(|p| p.state == HarqState::Idle)
                .expect("HARQ pool exhausted");
            self.harq[a.user][d][proc].load(tb_id);
            self.proc_of_tb.insert(tb_id, proc);
            tb_of_alloc.push(tb_id);
        }
        // Retransmissions the scheduler could never place are MAC losses.
        for &tb_id in &plan.dropped_retx {
            let tb = self.tbs[&tb_id].clone();
            let d = tb.dir.index();
            self.pending_retx[tb.user][d].retain(|&t| t != tb_id);
            let proc = self.proc_of_tb.remove(&tb_id).expect("process bound");
            self.harq[tb.user][d][proc].tb = None;
            self.harq[tb.user][d][proc].attempts = 0;
            self.harq[tb.user][d][proc].state = HarqState::Idle;
            self.hard_loss(&tb, tb_id);
            self.tbs.remove(&tb_id);
        }
        tb_of_alloc
    }

    fn assign_bf_modes(&self, plan: &mut SlotPlan, grouping: &crate::scheduler::MmseGrouping) {
        let scheme = self.sc.bf_scheme;
        match scheme {
            BfKind::Gbf => {
                for a in &mut plan.allocations {
                    a.bf_mode = Some(BfMode::Gbf);
                }
            }
            BfKind::Cbf => {
                for a in &mut plan.allocations {
                    a.bf_mode = Some(BfMode::Cbf);
                }
            }
            BfKind::Fmbf | BfKind::Smbf => {
                for g in &grouping.groups {
                    for &i in g {
                        plan.allocations[i].bf_mode = Some(BfMode::Mmse);
                    }
                }
                for &i in &grouping.fallback {
                    plan.allocations[i].bf_mode = Some(BfMode::CbfFallback);
                }
            }
        }
    }

    // -- beams and gains ----------------------------------------------------

    /// Refresh the codebook pair of a link if the sweep period elapsed.
    fn ensure_beam(&mut self, user: usize, now: f64) {
        if self.sc.bf_scheme == BfKind::Gbf {
            return;
        }
        let period = self.sc.beams.update_period_ms * 1e-3;
        let link = &self.links[user];
        if link.has_sel && now - link.sel_time < period {
            return;
        }
        let gains = self.links[user].channel.gains_now();
        let link = &self.links[user];
        let n_c = gains.len();
        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        // Max-SNR pair search at the reference subcarrier; ties break to the
        // lowest (BS index, UE index).
        let e: Vec<C64> = (0..n_c)
            .map(|c| gains[c] * link.ftab[c][self.kref_idx])
            .collect();
        for (vi, tx) in link.bs_dots.iter().enumerate() {
            let q: Vec<C64> = (0..n_c).map(|c| e[c] * tx[c]).collect();
            for (wi, rx) in link.ue_dots.iter().enumerate() {
                let g: C64 = (0..n_c).map(|c| q[c] * rx[c]).sum();
                let p = g.norm_sqr();
                if p > best.2 {
                    best = (vi, wi, p);
                }
            }
        }
        let link = &mut self.links[user];
        link.sel = (best.0, best.1);
        link.sel_time = now;
        link.has_sel = true;
    }

    fn own_beam(&self, user: usize) -> BeamRef {
        match self.sc.bf_scheme {
            BfKind::Gbf => BeamRef::Gbf(user),
            _ => BeamRef::Cbf(self.links[user].sel.0),
        }
    }

    /// Effective gain of (own receive beam, own channel, `beam`) per
    /// evaluation subcarrier.
    fn pair_gain(&self, user: usize, gains: &[C64], beam: BeamRef) -> Vec<C64> {
        let link = &self.links[user];
        let rx = link.rx_dots(self.sc.bf_scheme);
        let tx = link.tx_dots(beam);
        let n_c = gains.len();
        let weights: Vec<C64> = (0..n_c).map(|c| gains[c] * rx[c] * tx[c]).collect();
        let mut out = vec![C64::new(0.0, 0.0); self.eval_ks.len()];
        for (c, w) in weights.iter().enumerate() {
            for (o, f) in out.iter_mut().zip(&link.ftab[c]) {
                *o += w * f;
            }
        }
        for o in &mut out {
            *o *= self.scale;
        }
        out
    }

    /// SINR realization for every allocation, in deterministic unit order.
    fn realize_sinr(
        &mut self,
        plan: &SlotPlan,
        grouping: &crate::scheduler::MmseGrouping,
        t0: f64,
    ) -> Vec<f64> {
        let mut units: Vec<EvalUnit> = Vec::new();
        if self.sc.bf_scheme.is_mmse() {
            for g in &grouping.groups {
                let mut members = g.clone();
                members.sort_by_key(|&i| plan.allocations[i].layer);
                units.push(EvalUnit {
                    start: plan.allocations[members[0]].start,
                    dir: plan.allocations[members[0]].direction,
                    order: members[0],
                    kind: UnitKind::Group(members),
                });
            }
            for &i in &grouping.fallback {
                units.push(self.single_unit(plan, i));
            }
        } else {
            for i in 0..plan.allocations.len() {
                units.push(self.single_unit(plan, i));
            }
        }
        units.sort_by_key(|u| (u.start, u.dir.index(), u.order));

        let mut sinr = vec![0.0f64; plan.allocations.len()];
        for unit in &units {
            let t = t0 + unit.start as f64 * self.sym_dur;
            match &unit.kind {
                UnitKind::Group(members) => self.eval_group(plan, members, t, &mut sinr),
                UnitKind::Single { target, interferers } => {
                    self.eval_single(plan, *target, interferers, t, &mut sinr)
                }
            }
        }
        sinr
    }

    fn single_unit(&self, plan: &SlotPlan, target: usize) -> EvalUnit {
        let a = &plan.allocations[target];
        let interferers: Vec<usize> = plan
            .allocations
            .iter()
            .enumerate()
            .filter(|(j, b)| {
                *j != target && b.direction == a.direction && b.layer != a.layer && b.overlaps(a)
            })
            .map(|(j, _)| j)
            .collect();
        EvalUnit {
            start: a.start,
            dir: a.direction,
            order: target,
            kind: UnitKind::Single { target, interferers },
        }
    }

    /// Analog-only evaluation: the target allocation against the beams of
    /// its overlapping co-channel transmissions.
    fn eval_single(
        &mut self,
        plan: &SlotPlan,
        target: usize,
        interferers: &[usize],
        t: f64,
        sinr_out: &mut [f64],
    ) {
        let a = &plan.allocations[target];
        let dir = a.direction;
        let mut users: Vec<usize> = Vec::with_capacity(1 + interferers.len());
        users.push(a.user);
        users.extend(interferers.iter().map(|&i| plan.allocations[i].user));
        for &u in &users {
            let link_t = self.links[u].channel.time;
            evolve(&mut self.links[u].channel, (t - link_t).max(0.0));
            self.ensure_beam(u, t);
        }
        let noise = self.phy.noise_per_subcarrier_mw();
        let n_eval = self.eval_ks.len();
        let per_k: Vec<f64> = match dir {
            Direction::Dl => {
                // Target's channel with every active transmit beam.
                let gains_now = self.links[a.user].channel.gains_now();
                let rows: Vec<Vec<C64>> = users
                    .iter()
                    .map(|&p| self.pair_gain(a.user, &gains_now, self.own_beam(p)))
                    .collect();
                let l = self.links[a.user].pathloss.linear_gain;
                let p_sc = self.phy.dl_power_per_subcarrier_mw();
                (0..n_eval)
                    .map(|ki| {
                        let g: Vec<C64> = rows.iter().map(|r| r[ki]).collect();
                        sinr_dl(&g, 0, l, p_sc, noise)
                    })
                    .collect()
            }
            Direction::Ul => {
                // Each transmitter's channel through the target's combiner.
                let combiner = self.own_beam(a.user);
                let rows: Vec<(f64, Vec<C64>)> = users
                    .iter()
                    .map(|&u| {
                        let gains_now = self.links[u].channel.gains_now();
                        (
                            self.links[u].pathloss.linear_gain,
                            self.pair_gain(u, &gains_now, combiner),
                        )
                    })
                    .collect();
                let p = self.phy.ue_power_mw();
                (0..n_eval)
                    .map(|ki| {
                        let others: Vec<(f64, C64)> =
                            rows[1..].iter().map(|(l, r)| (*l, r[ki])).collect();
                        sinr_ul(rows[0].1[ki], rows[0].0, &others, p, noise)
                    })
                    .collect()
            }
        };
        let wideband = per_k.iter().sum::<f64>() / per_k.len().max(1) as f64;
        sinr_out[target] = wideband;
        self.cqi[a.user][dir.index()] = lin_to_db(wideband.max(1e-30));
    }

    /// Joint MMSE evaluation of a synchronous group: equivalent channel from
    /// the codebook beams, digital precoding (downlink) or combining
    /// (uplink, the transposed construction), per-layer normalization, then
    /// the SINR of every member.
    fn eval_group(&mut self, plan: &SlotPlan, members: &[usize], t: f64, sinr_out: &mut [f64]) {
        let dir = plan.allocations[members[0]].direction;
        let users: Vec<usize> = members.iter().map(|&i| plan.allocations[i].user).collect();
        let g = users.len();
        for &u in &users {
            let link_t = self.links[u].channel.time;
            evolve(&mut self.links[u].channel, (t - link_t).max(0.0));
            self.ensure_beam(u, t);
        }
        let n_eval = self.eval_ks.len();
        let noise = self.phy.noise_per_subcarrier_mw();
        // Unscaled measurement tensor meas[u][p][k] between user u's receive
        // chain and the codebook beam of member p.
        let meas: Vec<Vec<Vec<C64>>> = users
            .iter()
            .map(|&u| {
                let gains_now = self.links[u].channel.gains_now();
                users
                    .iter()
                    .map(|&p| self.pair_gain(u, &gains_now, BeamRef::Cbf(self.links[p].sel.0)))
                    .collect()
            })
            .collect();
        let pathloss: Vec<f64> = users
            .iter()
            .map(|&u| self.links[u].pathloss.linear_gain)
            .collect();
        let sqrt_l: Vec<f64> = pathloss.iter().map(|l| l.sqrt()).collect();
        let ratio = self.phy.noise_over_power(dir);

        let h_eq_at = |ki: usize| -> DMatrix<C64> {
            DMatrix::from_fn(g, g, |u, p| meas[u][p][ki] * sqrt_l[u])
        };
        let beam_idx: Vec<usize> = users.iter().map(|&u| self.links[u].sel.0).collect();
        let n_beams = self.bs_codebook.len();
        let gram = |p: usize, q: usize| self.bs_gram[beam_idx[p] * n_beams + beam_idx[q]];
        // Norm of the effective antenna-domain vector of column j of V.
        let col_norms = |v: &DMatrix<C64>| -> Vec<f64> {
            (0..g)
                .map(|j| {
                    let mut acc = C64::new(0.0, 0.0);
                    for p in 0..g {
                        for q in 0..g {
                            acc += v[(p, j)].conj() * gram(p, q) * v[(q, j)];
                        }
                    }
                    acc.re.max(0.0).sqrt()
                })
                .collect()
        };

        // Digital matrix per evaluation subcarrier: SMBF designs one per
        // subcarrier, FMBF reuses the reference-subcarrier design.
        let matrix_at = |ki: usize| -> (DMatrix<C64>, Vec<f64>) {
            let base = match dir {
                Direction::Dl => h_eq_at(ki),
                Direction::Ul => h_eq_at(ki).transpose(),
            };
            let eq = EquivalentChannel::from_matrix(base, users.clone());
            let pre: PrecodingMatrix =
                mmse_precoder(&eq, ratio).expect("regularized MMSE is solvable");
            let norms = col_norms(&pre.matrix);
            (pre.matrix, norms)
        };
        let flat = if self.sc.bf_scheme == BfKind::Fmbf {
            Some(matrix_at(self.kref_idx))
        } else {
            None
        };

        let p_dl_sc = self.phy.dl_power_per_subcarrier_mw();
        let p_ul = self.phy.ue_power_mw();
        let mut acc = vec![0.0f64; g];
        for ki in 0..n_eval {
            match &flat {
                Some((v, norms)) => {
                    per_k_eval(dir, g, &meas, &pathloss, v, norms, ki, p_dl_sc, p_ul, noise, &mut acc)
                }
                None => {
                    let (v, norms) = matrix_at(ki);
                    per_k_eval(dir, g, &meas, &pathloss, &v, &norms, ki, p_dl_sc, p_ul, noise, &mut acc)
                }
            }
        }
        for (i, &m) in members.iter().enumerate() {
            let wideband = acc[i] / n_eval as f64;
            sinr_out[m] = wideband;
            let u = plan.allocations[m].user;
            self.cqi[u][dir.index()] = lin_to_db(wideband.max(1e-30));
        }
    }

    // -- outcomes, HARQ, RLC ------------------------------------------------

    #[allow(clippy::too_many_arguments)]
    fn resolve_outcomes(
        &mut self,
        plan: &SlotPlan,
        tb_of_alloc: &[u64],
        sinr: &[f64],
        slot: u64,
        t0: f64,
        t_end: f64,
    ) {
        for (i, a) in plan.allocations.iter().enumerate() {
            let d = a.direction.index();
            let tb_id = tb_of_alloc[i];
            let tb_mcs = self.tbs[&tb_id].mcs;
            let wideband_db = lin_to_db(sinr[i].max(1e-30));
            let p_fail = bler(wideband_db, tb_mcs, &self.table);
            let draw: f64 = self.rng_tb.gen_range(0.0..1.0);
            let failed = draw < p_fail;
            let tx_time = t0 + a.start as f64 * self.sym_dur;
            if tx_time >= self.sc.warmup_s {
                self.report.sinr_db[d].push(wideband_db as f32);
                self.report.bler[d].push(p_fail as f32);
                self.report.tb_count[d] += 1;
                if failed {
                    self.report.tb_failed[d] += 1;
                }
                self.report.total_allocations += 1;
                if a.bf_mode == Some(BfMode::CbfFallback) {
                    self.report.fallback_allocations += 1;
                }
                self.report.granted_symbols += a.len as u64;
                self.report.padding_symbols += a.padding as u64;
            }
            self.apply_feedback(tb_id, a, !failed, slot, t_end);
        }
    }

    fn apply_feedback(&mut self, tb_id: u64, a: &Allocation, ack: bool, slot: u64, t_end: f64) {
        let d = a.direction.index();
        let user = a.user;
        let tb = self.tbs[&tb_id].clone();
        let proc_idx = self.proc_of_tb[&tb_id];
        if tb.packets.is_empty() {
            // Padding-only probe: nothing to retransmit or deliver.
            let p = &mut self.harq[user][d][proc_idx];
            p.tb = None;
            p.attempts = 0;
            p.state = HarqState::Idle;
            self.proc_of_tb.remove(&tb_id);
            self.tbs.remove(&tb_id);
            return;
        }
        let attempts = self.harq[user][d][proc_idx].attempts.max(1);
        let action = if self.sc.harq {
            crate::scheduler::harq_on_feedback(&mut self.harq[user][d][proc_idx], ack)
                .expect("process awaits feedback")
        } else {
            // Without HARQ the block lives exactly one attempt.
            let p = &mut self.harq[user][d][proc_idx];
            p.tb = None;
            p.attempts = 0;
            p.state = HarqState::Idle;
            if ack {
                HarqAction::Release { tb: tb_id }
            } else {
                HarqAction::Drop { tb: tb_id }
            }
        };
        match action {
            HarqAction::Release { .. } => {
                let delivered = self.rlc[user][d].on_tb_delivered(&tb.packets);
                for pid in delivered {
                    self.deliver_packet(pid, t_end, attempts);
                }
                self.proc_of_tb.remove(&tb_id);
                self.tbs.remove(&tb_id);
            }
            HarqAction::Retransmit { .. } => {
                let arms = self.rlc[user][d].on_tb_attempt_failed(&tb.packets, t_end);
                for arm in arms {
                    self.events.push(
                        arm.expiry,
                        Event::AmReorderingTimer {
                            user,
                            dir_index: d,
                            packet: arm.packet,
                            incarnation: arm.incarnation,
                        },
                    );
                }
                self.tbs.get_mut(&tb_id).expect("tb exists").nack_slot = Some(slot);
                self.pending_retx[user][d].push(tb_id);
            }
            HarqAction::Drop { .. } => {
                let arms = self.rlc[user][d].on_tb_attempt_failed(&tb.packets, t_end);
                for arm in arms {
                    self.events.push(
                        arm.expiry,
                        Event::AmReorderingTimer {
                            user,
                            dir_index: d,
                            packet: arm.packet,
                            incarnation: arm.incarnation,
                        },
                    );
                }
                self.hard_loss(&tb, tb_id);
                self.proc_of_tb.remove(&tb_id);
                self.tbs.remove(&tb_id);
            }
        }
    }

    /// Definitive MAC loss of a block: UM packets vanish, AM packets wait
    /// for their reordering timer.
    fn hard_loss(&mut self, tb: &TbRecord, _tb_id: u64) {
        let d = tb.dir.index();
        let dropped = self.rlc[tb.user][d].on_tb_lost(&tb.packets);
        for pid in dropped {
            self.drop_packet(pid);
        }
    }

    fn deliver_packet(&mut self, pid: u64, t_end: f64, harq_attempts: u32) {
        let (user, d, created, bits, am_retx);
        {
            let p = &mut self.packets[pid as usize];
            debug_assert!(p.delivered.is_none(), "delivered once");
            p.delivered = Some(t_end);
            p.harq_attempts = p.harq_attempts.max(harq_attempts);
            user = p.user;
            d = p.direction.index();
            created = p.created;
            bits = p.bits();
            am_retx = p.am_retx_count;
        }
        let _ = am_retx;
        if created >= self.sc.warmup_s {
            self.report.delivered_packets[d] += 1;
            self.report.delivered_bits[d] += bits;
            self.report.delay_s[d].push((t_end - created) as f32);
        }
        if let Some(Flow::Adaptive(src)) = &mut self.flows[user][d] {
            src.on_ack(pid, t_end - created, t_end);
        }
    }

    fn drop_packet(&mut self, pid: u64) {
        let p = &self.packets[pid as usize];
        let (user, d, created) = (p.user, p.direction.index(), p.created);
        if created >= self.sc.warmup_s {
            self.report.dropped_packets[d] += 1;
        }
        if let Some(Flow::Adaptive(src)) = &mut self.flows[user][d] {
            src.on_loss(pid);
        }
    }

    fn process_timers(&mut self, t_end: f64) {
        while let Some((_, event)) = self.events.pop_due(t_end) {
            let Event::AmReorderingTimer {
                user,
                dir_index,
                packet,
                incarnation,
            } = event;
            match self.rlc[user][dir_index].on_timer_expiry(packet, incarnation, t_end) {
                TimerOutcome::Ignore => {}
                TimerOutcome::Requeued => {
                    self.packets[packet as usize].am_retx_count += 1;
                }
                TimerOutcome::Rearmed(arm) => {
                    self.events.push(
                        arm.expiry,
                        Event::AmReorderingTimer {
                            user,
                            dir_index,
                            packet: arm.packet,
                            incarnation: arm.incarnation,
                        },
                    );
                }
                TimerOutcome::Dropped { packet, flushed } => {
                    self.drop_packet(packet);
                    for pid in flushed {
                        self.deliver_packet(pid, t_end, 0);
                    }
                }
            }
        }
    }

    fn check_rtos(&mut self, t_end: f64) {
        for u in 0..self.sc.ue_count {
            for d in 0..2 {
                if let Some(Flow::Adaptive(src)) = &mut self.flows[u][d] {
                    src.check_rto(t_end);
                }
            }
        }
    }

    // -- audits ---------------------------------------------------------------

    fn audit_plan(&mut self, plan: &SlotPlan, saturation: [Option<FairnessSlot>; 2]) {
        let v = &mut self.report.violations;
        // Layer overlap and region direction homogeneity.
        for (i, a) in plan.allocations.iter().enumerate() {
            if a.start < SlotStructure::FIRST_DATA_SYMBOL
                || a.end() > SlotStructure::LAST_DATA_SYMBOL
            {
                v.region_bounds += 1;
            }
            for b in plan.allocations.iter().skip(i + 1) {
                if a.layer == b.layer && a.direction == b.direction && a.overlaps(b) {
                    v.layer_overlap += 1;
                }
                if a.direction != b.direction && a.overlaps(b) {
                    v.region_bounds += 1;
                }
            }
        }
        match self.sc.scheduler {
            SchedulerKind::Pmrs => {
                for b in &plan.bundles {
                    for a in &plan.allocations {
                        if a.direction == b.direction
                            && a.start >= b.start
                            && a.start < b.start + b.len
                            && a.start != b.start
                        {
                            v.pmrs_bundle_async += 1;
                        }
                    }
                }
                let grouping = mmse_groups(plan);
                if !grouping.fallback.is_empty() {
                    v.pmrs_fallback += 1;
                }
            }
            SchedulerKind::Amrs | SchedulerKind::Tmrs => {
                for a in &plan.allocations {
                    if a.padding != 0 {
                        v.stray_padding += 1;
                    }
                }
                // Per layer and direction, allocations must be contiguous.
                let n_layers = self.sc.n_layers;
                for dir in Direction::BOTH {
                    for layer in 0..n_layers {
                        let mut starts: Vec<(usize, usize)> = plan
                            .allocations
                            .iter()
                            .filter(|a| a.direction == dir && a.layer == layer)
                            .map(|a| (a.start, a.len))
                            .collect();
                        starts.sort_unstable();
                        for w in starts.windows(2) {
                            if w[0].0 + w[0].1 != w[1].0 {
                                v.amrs_gap += 1;
                            }
                        }
                    }
                }
            }
        }
        // Round-robin fairness over 20-slot saturated windows.
        for d in 0..2 {
            if let Some(slot_info) = &saturation[d] {
                self.fairness[d].push_back(slot_info.clone());
                if self.fairness[d].len() > 20 {
                    self.fairness[d].pop_front();
                }
                if self.fairness[d].len() == 20 && self.fairness[d].iter().all(|s| s.saturated) {
                    let mut totals = vec![0u64; self.sc.ue_count];
                    let mut quantum = 0usize;
                    for s in &self.fairness[d] {
                        for (u, g) in s.grants.iter().enumerate() {
                            totals[u] += g;
                        }
                        quantum = quantum.max(s.quantum);
                    }
                    let max = *totals.iter().max().unwrap_or(&0);
                    let min = *totals.iter().min().unwrap_or(&0);
                    if max - min > quantum as u64 {
                        self.report.violations.rr_fairness += 1;
                    }
                }
            }
        }
    }

    fn finish_conservation_audit(&mut self) {
        for u in 0..self.sc.ue_count {
            for d in 0..2 {
                let e = &self.rlc[u][d];
                let accounted = e.delivered_packets
                    + e.dropped_packets
                    + e.queue_len() as u64
                    + e.in_flight_len() as u64
                    + e.rx_buffered_len() as u64;
                if accounted != self.created_packets[u][d] {
                    self.report.violations.conservation += 1;
                }
            }
        }
    }
}

/// One evaluation subcarrier of a group: assemble the normalized effective
/// gains and accumulate each member's SINR.
#[allow(clippy::too_many_arguments)]
fn per_k_eval(
    dir: Direction,
    g: usize,
    meas: &[Vec<Vec<C64>>],
    pathloss: &[f64],
    v: &DMatrix<C64>,
    norms: &[f64],
    ki: usize,
    p_dl_sc: f64,
    p_ul: f64,
    noise: f64,
    acc: &mut [f64],
) {
    match dir {
        Direction::Dl => {
            for (i, acc_i) in acc.iter_mut().enumerate().take(g) {
                // gains[j] = effective gain from layer j into user i.
                let gains: Vec<C64> = (0..g)
                    .map(|j| {
                        let mut s = C64::new(0.0, 0.0);
                        for p in 0..g {
                            s += v[(p, j)] * meas[i][p][ki];
                        }
                        s / norms[j]
                    })
                    .collect();
                *acc_i += sinr_dl(&gains, i, pathloss[i], p_dl_sc, noise);
            }
        }
        Direction::Ul => {
            // gain_into[j][i]: transmitter j through the combiner of layer i.
            for (i, acc_i) in acc.iter_mut().enumerate().take(g) {
                let mut own = C64::new(0.0, 0.0);
                let mut others: Vec<(f64, C64)> = Vec::with_capacity(g - 1);
                for j in 0..g {
                    let mut s = C64::new(0.0, 0.0);
                    for p in 0..g {
                        s += v[(p, i)] * meas[j][p][ki];
                    }
                    let gain = s / norms[i];
                    if j == i {
                        own = gain;
                    } else {
                        others.push((pathloss[j], gain));
                    }
                }
                *acc_i += sinr_ul(own, pathloss[i], &others, p_ul, noise);
            }
        }
    }
}
