//! Sequential placement simulation and baselines.
//!
//! An episode walks placement slots left to right: the policy picks a column
//! for the upcoming slot (multi-slot planners solve the full horizon but
//! deploy only column 0), realized revenue is settled against the ground
//! truth, and the deployed column becomes the next slot's previous state.
//! The first `episode_start` mini-slots of the trace are history: predictors
//! read them, none of the measured slots overlap them.
//!
//! Baselines: the one-slot knapsack (future fixed by global popularity),
//! static global-popularity placement, LRU at mini-slot recency, and uniform
//! random placement.

use std::io::Write;

use rand::seq::index::sample as index_sample;

use crate::error::{Error, Result};
use crate::estimator::{estimate_demand, simp_estimate, AggregatedDemand, LocalPopularity};
use crate::model::{
    average_revenue, cache_hit_ratio, realized_slot_revenue, RequestTrace, RevenueParams,
    SlotOutcome,
};
use crate::optimizer::{linearize, solve_bnb, solve_one_slot_greedy, SolveResult};
use crate::predictor::{AccuracyProfile, Predictor};
use crate::rng::{self, tag};

/// Cache placement methods under comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum MethodKind {
    /// Multi-slot planner fed with true future requests.
    GroundTruthMulti,
    /// One-slot knapsack fed with true requests for the next slot.
    GroundTruthOneSlot,
    /// Federated predictor, accuracy-weighted mixture, multi-slot planner.
    Proposed,
    /// Same pipeline with a centrally trained predictor.
    CSgd,
    /// One-slot knapsack on the mixture estimate.
    OneSlot,
    /// Multi-slot planner on prediction-only estimates.
    SimpEst,
    /// Static top global popularity.
    Statistics,
    /// Least-recently-used replacement at slot boundaries.
    Lru,
    /// Uniform random subset each slot.
    Random,
}

impl MethodKind {
    pub const ALL: [MethodKind; 9] = [
        MethodKind::GroundTruthMulti,
        MethodKind::GroundTruthOneSlot,
        MethodKind::Proposed,
        MethodKind::CSgd,
        MethodKind::OneSlot,
        MethodKind::SimpEst,
        MethodKind::Statistics,
        MethodKind::Lru,
        MethodKind::Random,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MethodKind::GroundTruthMulti => "GroundTruth-Multi",
            MethodKind::GroundTruthOneSlot => "GroundTruth-OneSlot",
            MethodKind::Proposed => "Proposed",
            MethodKind::CSgd => "C-SGD",
            MethodKind::OneSlot => "OneSlot",
            MethodKind::SimpEst => "SimpEst",
            MethodKind::Statistics => "Statistics",
            MethodKind::Lru => "LRU",
            MethodKind::Random => "Random",
        }
    }

    pub fn parse(name: &str) -> Option<MethodKind> {
        MethodKind::ALL.iter().copied().find(|m| m.name() == name)
    }

    /// Does the method consume predictions (and an accuracy profile)?
    pub fn needs_predictor(self) -> bool {
        matches!(
            self,
            MethodKind::Proposed | MethodKind::CSgd | MethodKind::OneSlot | MethodKind::SimpEst
        )
    }
}

/// Everything fixed for one episode run.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeSetup<'a> {
    pub trace: &'a RequestTrace,
    pub params: &'a RevenueParams,
    /// First measured mini-slot; everything before is history.
    pub episode_start: usize,
    /// Number of measured placement slots (T).
    pub num_slots: usize,
    /// Branch-and-bound node budget per solve.
    pub node_budget: u64,
}

/// Realized accounting of one method over one episode.
#[derive(Debug, Clone)]
pub struct EpisodeResult {
    pub method: String,
    pub outcomes: Vec<SlotOutcome>,
    pub average_revenue: f64,
    pub cache_hit_ratio: f64,
    /// Hash of the episode configuration; stable across reruns.
    pub fingerprint: String,
    /// False when any solve returned an uncertified incumbent.
    pub certified: bool,
}

/// One column decision for the upcoming slot.
pub struct PolicyDecision {
    pub deployed: Vec<bool>,
    pub certified: bool,
}

/// A cache placement policy driven slot by slot.
pub trait CachePolicy {
    fn decide(
        &mut self,
        trace: &RequestTrace,
        slot_start: usize,
        previous: &[bool],
    ) -> Result<PolicyDecision>;
}

/// FNV-1a of the formatted episode configuration.
pub fn fingerprint(text: &str) -> String {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in text.as_bytes() {
        hash ^= u64::from(*byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    format!("{hash:016x}")
}

fn episode_fingerprint(setup: &EpisodeSetup, method: &str) -> String {
    let p = setup.params;
    fingerprint(&format!(
        "method={method};users={};files={};start={};slots={};n={};K={};Ktilde={};S={};B={};\
         beta={};c_plc={};c_bs_ue={};c_cl_bs={};gamma={};budget={}",
        setup.trace.num_users(),
        setup.trace.num_files(),
        setup.episode_start,
        setup.num_slots,
        p.minislots_per_slot,
        p.horizon_slots,
        p.frozen_tail_slots,
        p.cache_bytes,
        p.file_bytes,
        p.delivery_benefit,
        p.placement_cost,
        p.delivery_cost,
        p.backhaul_cost,
        p.decay,
        setup.node_budget,
    ))
}

/// Runs one policy over the episode: decide, deploy column 0, settle against
/// the ground truth, advance. The initial cache is empty, so first
/// placements pay full cost.
pub fn run_policy_episode(
    setup: &EpisodeSetup,
    method_name: &str,
    policy: &mut dyn CachePolicy,
) -> Result<EpisodeResult> {
    let n = setup.params.minislots_per_slot;
    if setup.num_slots == 0 {
        return Err(Error::EmptyInput("episode with zero placement slots"));
    }
    let needed = setup.episode_start + setup.num_slots * n;
    if needed > setup.trace.total_minislots() {
        return Err(Error::TraceIncomplete {
            mini_slot: needed - 1,
            detail: format!(
                "episode needs {needed} mini-slots, trace has {}",
                setup.trace.total_minislots()
            ),
        });
    }

    let mut previous = vec![false; setup.trace.num_files()];
    let mut outcomes = Vec::with_capacity(setup.num_slots);
    let mut certified = true;
    for slot in 0..setup.num_slots {
        let slot_start = setup.episode_start + slot * n;
        let decision = policy
            .decide(setup.trace, slot_start, &previous)
            .map_err(|e| Error::EpisodeAborted { slot, source: Box::new(e) })?;
        let outcome = realized_slot_revenue(
            setup.trace,
            slot_start,
            &decision.deployed,
            &previous,
            setup.params,
        )
        .map_err(|e| Error::EpisodeAborted { slot, source: Box::new(e) })?;
        certified &= decision.certified;
        outcomes.push(outcome);
        previous = decision.deployed;
    }
    Ok(EpisodeResult {
        method: method_name.to_string(),
        average_revenue: average_revenue(&outcomes)?,
        cache_hit_ratio: cache_hit_ratio(&outcomes)?,
        fingerprint: episode_fingerprint(setup, method_name),
        certified,
        outcomes,
    })
}

/// True per-(offset, file) request counts over the planning horizon.
fn truth_demand(
    trace: &RequestTrace,
    start: usize,
    offsets: usize,
) -> Result<AggregatedDemand> {
    if start + offsets > trace.total_minislots() {
        return Err(Error::TraceIncomplete {
            mini_slot: start + offsets - 1,
            detail: "planning horizon extends past the trace".into(),
        });
    }
    let mut rows = vec![vec![0.0; trace.num_files()]; offsets];
    for (h, row) in rows.iter_mut().enumerate() {
        for u in 0..trace.num_users() {
            row[trace.request(u, start + h) as usize] += 1.0;
        }
    }
    Ok(AggregatedDemand { rows })
}

/// Solves the multi-slot plan under perfect future knowledge (expected
/// demand replaced by true indicators).
pub fn plan_ground_truth(
    trace: &RequestTrace,
    params: &RevenueParams,
    slot_start: usize,
    previous: &[bool],
    node_budget: u64,
) -> Result<SolveResult> {
    let demand = truth_demand(trace, slot_start, params.planning_minislots())?;
    let inst = linearize(&demand, previous, params)?;
    Ok(solve_bnb(&inst, node_budget))
}

/// How a planning policy obtains per-user demand over the horizon.
pub enum DemandSource<'a> {
    /// Perfect future knowledge.
    Truth,
    /// Predictions blended with local popularity by measured accuracy.
    Mixture { predictor: &'a dyn Predictor, profile: &'a AccuracyProfile },
    /// Predictions only: argmax scaled by its accuracy.
    PredictionOnly { predictor: &'a dyn Predictor, profile: &'a AccuracyProfile },
}

/// Per-user popularity counters advanced alongside the episode.
struct PopularityTracker {
    counters: Vec<LocalPopularity>,
    seen: usize,
}

impl PopularityTracker {
    fn new(trace: &RequestTrace, history_end: usize) -> Result<Self> {
        let counters = (0..trace.num_users())
            .map(|u| LocalPopularity::from_trace(trace, u, history_end))
            .collect::<Result<_>>()?;
        Ok(Self { counters, seen: history_end })
    }

    fn advance(&mut self, trace: &RequestTrace, up_to: usize) {
        while self.seen < up_to {
            for (u, counter) in self.counters.iter_mut().enumerate() {
                counter.observe(trace.request(u, self.seen));
            }
            self.seen += 1;
        }
    }
}

/// Multi-slot planning policy: estimate demand over the horizon, solve the
/// linearized program, deploy column 0.
pub struct PlannerPolicy<'a> {
    params: &'a RevenueParams,
    source: DemandSource<'a>,
    popularity: Option<PopularityTracker>,
    node_budget: u64,
}

impl<'a> PlannerPolicy<'a> {
    pub fn new(
        trace: &RequestTrace,
        params: &'a RevenueParams,
        source: DemandSource<'a>,
        history_end: usize,
        node_budget: u64,
    ) -> Result<Self> {
        let popularity = match &source {
            DemandSource::Mixture { .. } => Some(PopularityTracker::new(trace, history_end)?),
            _ => None,
        };
        Ok(Self { params, source, popularity, node_budget })
    }

    fn demand(&mut self, trace: &RequestTrace, slot_start: usize) -> Result<AggregatedDemand> {
        let offsets = self.params.planning_minislots();
        match &self.source {
            DemandSource::Truth => truth_demand(trace, slot_start, offsets),
            DemandSource::Mixture { predictor, profile } => {
                let tracker = self.popularity.as_mut().expect("mixture tracks popularity");
                tracker.advance(trace, slot_start);
                let per_user: Vec<Vec<Vec<f64>>> = (0..trace.num_users())
                    .map(|u| {
                        let rows = predictor.predict(trace, u, slot_start, offsets)?;
                        let g = tracker.counters[u].vector()?;
                        estimate_demand(&rows, profile, &g, u)
                    })
                    .collect::<Result<_>>()?;
                AggregatedDemand::from_users(per_user.iter())
            }
            DemandSource::PredictionOnly { predictor, profile } => {
                let per_user: Vec<Vec<Vec<f64>>> = (0..trace.num_users())
                    .map(|u| {
                        let rows = predictor.predict(trace, u, slot_start, offsets)?;
                        Ok(simp_estimate(&rows, profile, u))
                    })
                    .collect::<Result<_>>()?;
                AggregatedDemand::from_users(per_user.iter())
            }
        }
    }
}

impl CachePolicy for PlannerPolicy<'_> {
    fn decide(
        &mut self,
        trace: &RequestTrace,
        slot_start: usize,
        previous: &[bool],
    ) -> Result<PolicyDecision> {
        let demand = self.demand(trace, slot_start)?;
        let inst = linearize(&demand, previous, self.params)?;
        let solved = solve_bnb(&inst, self.node_budget);
        Ok(PolicyDecision {
            deployed: solved.plan.decisions[0].clone(),
            certified: solved.certified,
        })
    }
}

/// One-slot knapsack policy: next slot's demand only, later slots pinned to
/// the global-popularity plan.
pub struct OneSlotPolicy<'a> {
    params: &'a RevenueParams,
    source: DemandSource<'a>,
    popularity: Option<PopularityTracker>,
    next_plan: Vec<bool>,
}

impl<'a> OneSlotPolicy<'a> {
    pub fn new(
        trace: &RequestTrace,
        params: &'a RevenueParams,
        source: DemandSource<'a>,
        history_end: usize,
        global_popularity: &[f64],
    ) -> Result<Self> {
        let popularity = match &source {
            DemandSource::Mixture { .. } => Some(PopularityTracker::new(trace, history_end)?),
            _ => None,
        };
        let next_plan = baseline_statistics(global_popularity, params.capacity_files());
        Ok(Self { params, source, popularity, next_plan })
    }
}

impl CachePolicy for OneSlotPolicy<'_> {
    fn decide(
        &mut self,
        trace: &RequestTrace,
        slot_start: usize,
        previous: &[bool],
    ) -> Result<PolicyDecision> {
        let n = self.params.minislots_per_slot;
        let demand = match &self.source {
            DemandSource::Truth => truth_demand(trace, slot_start, n)?,
            DemandSource::Mixture { predictor, profile } => {
                let tracker = self.popularity.as_mut().expect("mixture tracks popularity");
                tracker.advance(trace, slot_start);
                let per_user: Vec<Vec<Vec<f64>>> = (0..trace.num_users())
                    .map(|u| {
                        let rows = predictor.predict(trace, u, slot_start, n)?;
                        let g = tracker.counters[u].vector()?;
                        estimate_demand(&rows, profile, &g, u)
                    })
                    .collect::<Result<_>>()?;
                AggregatedDemand::from_users(per_user.iter())?
            }
            DemandSource::PredictionOnly { .. } => {
                return Err(Error::InvalidConfig(
                    "one-slot policy uses the mixture estimate".into(),
                ))
            }
        };
        let deployed =
            solve_one_slot_greedy(&demand.rows, &self.next_plan, previous, self.params);
        Ok(PolicyDecision { deployed, certified: true })
    }
}

/// Top-capacity files by global popularity; ties to the lowest id.
pub fn baseline_statistics(global_popularity: &[f64], capacity: usize) -> Vec<bool> {
    let mut order: Vec<usize> = (0..global_popularity.len()).collect();
    order.sort_by(|&a, &b| {
        global_popularity[b]
            .partial_cmp(&global_popularity[a])
            .expect("finite popularity")
            .then(a.cmp(&b))
    });
    let mut plan = vec![false; global_popularity.len()];
    for &f in order.iter().take(capacity) {
        plan[f] = true;
    }
    plan
}

/// Static-plan policy (placement cost is only paid in the first slot).
pub struct StaticPolicy {
    pub plan: Vec<bool>,
}

impl CachePolicy for StaticPolicy {
    fn decide(
        &mut self,
        _trace: &RequestTrace,
        _slot_start: usize,
        _previous: &[bool],
    ) -> Result<PolicyDecision> {
        Ok(PolicyDecision { deployed: self.plan.clone(), certified: true })
    }
}

/// LRU bookkeeping: recency ticks per processed request, insertions evict
/// the stalest cached file.
#[derive(Debug, Clone)]
pub struct LruState {
    capacity: usize,
    cached: Vec<bool>,
    recency: Vec<u64>,
    cached_count: usize,
    tick: u64,
}

impl LruState {
    pub fn new(num_files: usize, capacity: usize) -> Self {
        Self {
            capacity,
            cached: vec![false; num_files],
            recency: vec![0; num_files],
            cached_count: 0,
            tick: 0,
        }
    }

    /// Applies one request: hits refresh recency, misses insert and evict
    /// the least recently used entry when full.
    pub fn process_request(&mut self, file: u32) {
        self.tick += 1;
        let f = file as usize;
        if self.cached[f] {
            self.recency[f] = self.tick;
            return;
        }
        if self.capacity == 0 {
            return;
        }
        if self.cached_count == self.capacity {
            let victim = (0..self.cached.len())
                .filter(|&i| self.cached[i])
                .min_by_key(|&i| self.recency[i])
                .expect("cache is non-empty when full");
            self.cached[victim] = false;
            self.cached_count -= 1;
        }
        self.cached[f] = true;
        self.recency[f] = self.tick;
        self.cached_count += 1;
    }

    /// Processes all requests in `range` in (mini-slot, user) order.
    pub fn process_window(&mut self, trace: &RequestTrace, range: std::ops::Range<usize>) {
        for t in range {
            for u in 0..trace.num_users() {
                self.process_request(trace.request(u, t));
            }
        }
    }

    pub fn plan(&self) -> Vec<bool> {
        self.cached.clone()
    }
}

/// LRU policy: folds the previous slot's requests into the cache state at
/// each boundary; warmed over the whole history prefix.
pub struct LruPolicy {
    state: LruState,
    processed_to: usize,
}

impl LruPolicy {
    pub fn new(trace: &RequestTrace, capacity: usize, history_end: usize) -> Self {
        let mut state = LruState::new(trace.num_files(), capacity);
        state.process_window(trace, 0..history_end);
        Self { state, processed_to: history_end }
    }
}

impl CachePolicy for LruPolicy {
    fn decide(
        &mut self,
        trace: &RequestTrace,
        slot_start: usize,
        _previous: &[bool],
    ) -> Result<PolicyDecision> {
        self.state.process_window(trace, self.processed_to..slot_start);
        self.processed_to = self.processed_to.max(slot_start);
        Ok(PolicyDecision { deployed: self.state.plan(), certified: true })
    }
}

/// Uniform random subset of `capacity` files, fresh each slot, deterministic
/// per (seed, slot_start).
pub fn baseline_random(seed: u64, slot_start: usize, capacity: usize, files: usize) -> Vec<bool> {
    let mut rng = rng::stream(seed, &[tag::RANDOM_PLAN, slot_start as u64]);
    let amount = capacity.min(files);
    let mut plan = vec![false; files];
    for idx in index_sample(&mut rng, files, amount) {
        plan[idx] = true;
    }
    plan
}

/// Random-placement policy.
pub struct RandomPolicy {
    pub seed: u64,
    pub capacity: usize,
}

impl CachePolicy for RandomPolicy {
    fn decide(
        &mut self,
        trace: &RequestTrace,
        slot_start: usize,
        _previous: &[bool],
    ) -> Result<PolicyDecision> {
        Ok(PolicyDecision {
            deployed: baseline_random(self.seed, slot_start, self.capacity, trace.num_files()),
            certified: true,
        })
    }
}

/// Prediction sources available to prediction-based methods.
pub struct CompareInputs<'a> {
    pub setup: EpisodeSetup<'a>,
    pub global_popularity: &'a [f64],
    /// Predictor + profile for Proposed / OneSlot / SimpEst.
    pub federated: Option<(&'a dyn Predictor, &'a AccuracyProfile)>,
    /// Predictor + profile for C-SGD.
    pub central: Option<(&'a dyn Predictor, &'a AccuracyProfile)>,
    /// Seed of the random baseline.
    pub random_seed: u64,
}

/// Runs each method over the same episode and returns results in method
/// order.
pub fn compare_methods(
    inputs: &CompareInputs,
    methods: &[MethodKind],
) -> Result<Vec<EpisodeResult>> {
    let setup = &inputs.setup;
    let trace = setup.trace;
    let params = setup.params;
    let capacity = params.capacity_files();
    fn need<'a>(
        source: &Option<(&'a dyn Predictor, &'a AccuracyProfile)>,
        method: MethodKind,
    ) -> Result<(&'a dyn Predictor, &'a AccuracyProfile)> {
        source.ok_or_else(|| {
            Error::InvalidConfig(format!("method {} needs a predictor", method.name()))
        })
    }
    let mut results = Vec::with_capacity(methods.len());
    for &method in methods {
        let result = match method {
            MethodKind::GroundTruthMulti => {
                let mut policy = PlannerPolicy::new(
                    trace,
                    params,
                    DemandSource::Truth,
                    setup.episode_start,
                    setup.node_budget,
                )?;
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::GroundTruthOneSlot => {
                let mut policy = OneSlotPolicy::new(
                    trace,
                    params,
                    DemandSource::Truth,
                    setup.episode_start,
                    inputs.global_popularity,
                )?;
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::Proposed | MethodKind::CSgd => {
                let (predictor, profile) = if method == MethodKind::Proposed {
                    need(&inputs.federated, method)?
                } else {
                    need(&inputs.central, method)?
                };
                let mut policy = PlannerPolicy::new(
                    trace,
                    params,
                    DemandSource::Mixture { predictor, profile },
                    setup.episode_start,
                    setup.node_budget,
                )?;
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::OneSlot => {
                let (predictor, profile) = need(&inputs.federated, method)?;
                let mut policy = OneSlotPolicy::new(
                    trace,
                    params,
                    DemandSource::Mixture { predictor, profile },
                    setup.episode_start,
                    inputs.global_popularity,
                )?;
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::SimpEst => {
                let (predictor, profile) = need(&inputs.federated, method)?;
                let mut policy = PlannerPolicy::new(
                    trace,
                    params,
                    DemandSource::PredictionOnly { predictor, profile },
                    setup.episode_start,
                    setup.node_budget,
                )?;
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::Statistics => {
                let mut policy = StaticPolicy {
                    plan: baseline_statistics(inputs.global_popularity, capacity),
                };
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::Lru => {
                let mut policy = LruPolicy::new(trace, capacity, setup.episode_start);
                run_policy_episode(setup, method.name(), &mut policy)?
            }
            MethodKind::Random => {
                let mut policy = RandomPolicy { seed: inputs.random_seed, capacity };
                run_policy_episode(setup, method.name(), &mut policy)?
            }
        };
        results.push(result);
    }
    Ok(results)
}

/// One per-slot row of the runs CSV.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    pub cache_bytes: u64,
    pub horizon_slots: usize,
    pub decay: f64,
    pub placement_cost: f64,
    pub tau: usize,
    pub revenue: f64,
    pub hits: u64,
    pub misses: u64,
    pub placements: u64,
    pub certified: bool,
}

impl RunRecord {
    /// Expands an episode into per-slot records.
    pub fn from_episode(
        result: &EpisodeResult,
        seed: u64,
        params: &RevenueParams,
    ) -> Vec<RunRecord> {
        result
            .outcomes
            .iter()
            .enumerate()
            .map(|(tau, o)| RunRecord {
                method: result.method.clone(),
                seed,
                cache_bytes: params.cache_bytes,
                horizon_slots: params.horizon_slots,
                decay: params.decay,
                placement_cost: params.placement_cost,
                tau,
                revenue: o.realized_revenue,
                hits: o.hits,
                misses: o.misses,
                placements: o.placements,
                certified: result.certified,
            })
            .collect()
    }
}

/// Formats a float with 9 significant digits; the fixed width keeps output
/// byte-reproducible.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.8e}")
}

/// Writes the per-slot runs CSV
/// (`method,seed,cache_size,K,gamma,c_plc,tau,revenue,...`).
pub fn write_runs_csv<W: Write>(
    records: &[RunRecord],
    header_fingerprint: &str,
    mut w: W,
) -> Result<()> {
    writeln!(w, "# config {header_fingerprint}")?;
    writeln!(w, "method,seed,cache_size,K,gamma,c_plc,tau,revenue,hits,misses,placements,certified")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.method,
            r.seed,
            r.cache_bytes,
            r.horizon_slots,
            fmt_float(r.decay),
            fmt_float(r.placement_cost),
            r.tau,
            fmt_float(r.revenue),
            r.hits,
            r.misses,
            r.placements,
            r.certified
        )?;
    }
    Ok(())
}

/// Aggregated row of the summary CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub cache_bytes: u64,
    pub horizon_slots: usize,
    pub decay: f64,
    pub placement_cost: f64,
    pub mean_revenue: f64,
    pub std_revenue: f64,
    pub mean_chr: f64,
}

/// Groups per-slot records by (method, sweep point), averages within each
/// (seed) episode, then reports mean and sample standard deviation across
/// seeds plus the mean cache-hit ratio.
pub fn summarize(records: &[RunRecord]) -> Vec<SummaryRow> {
    use std::collections::BTreeMap;
    // (method, cache, K, gamma-bits, c_plc-bits) -> seed -> accumulators.
    type Key = (String, u64, usize, u64, u64);
    let mut groups: BTreeMap<Key, BTreeMap<u64, (f64, u64, u64, u64)>> = BTreeMap::new();
    for r in records {
        let key = (
            r.method.clone(),
            r.cache_bytes,
            r.horizon_slots,
            r.decay.to_bits(),
            r.placement_cost.to_bits(),
        );
        let seat = groups.entry(key).or_default().entry(r.seed).or_insert((0.0, 0, 0, 0));
        seat.0 += r.revenue;
        seat.1 += r.hits;
        seat.2 += r.misses;
        seat.3 += 1;
    }
    let mut rows = Vec::with_capacity(groups.len());
    for ((method, cache, k, decay_bits, plc_bits), seeds) in groups {
        let episode_revenues: Vec<f64> =
            seeds.values().map(|&(rev, _, _, slots)| rev / slots as f64).collect();
        let chrs: Vec<f64> = seeds
            .values()
            .map(|&(_, hits, misses, _)| hits as f64 / (hits + misses) as f64)
            .collect();
        let n = episode_revenues.len() as f64;
        let mean = episode_revenues.iter().sum::<f64>() / n;
        let std = if episode_revenues.len() > 1 {
            (episode_revenues.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>()
                / (n - 1.0))
                .sqrt()
        } else {
            0.0
        };
        rows.push(SummaryRow {
            method,
            cache_bytes: cache,
            horizon_slots: k,
            decay: f64::from_bits(decay_bits),
            placement_cost: f64::from_bits(plc_bits),
            mean_revenue: mean,
            std_revenue: std,
            mean_chr: chrs.iter().sum::<f64>() / n,
        });
    }
    rows
}

/// Writes the summary CSV (`method,cache_size,mean_revenue,std_revenue,mean_chr`).
pub fn write_summary_csv<W: Write>(
    rows: &[SummaryRow],
    header_fingerprint: &str,
    mut w: W,
) -> Result<()> {
    writeln!(w, "# config {header_fingerprint}")?;
    writeln!(w, "method,cache_size,mean_revenue,std_revenue,mean_chr")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.method,
            r.cache_bytes,
            fmt_float(r.mean_revenue),
            fmt_float(r.std_revenue),
            fmt_float(r.mean_chr)
        )?;
    }
    Ok(())
}
