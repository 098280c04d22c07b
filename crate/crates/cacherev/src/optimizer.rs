//! Exact revenue maximization over multi-slot cache plans.
//!
//! The expected-revenue objective contains products of adjacent slot
//! decisions (a persisted file saves its placement cost). Introducing the
//! persistence variable `z[k][f] = d[k][f] * d[k-1][f]` makes the objective
//! linear: each decision carries a per-(slot, file) coefficient and each
//! persistence a positive credit. The `k = 0` persistence couples to the
//! fixed previous deployment, so it folds into the slot-0 decision
//! coefficients. Solvers never branch on `z`; it is implied by `d`, keeping
//! the search space at `2^(K*F)`.
//!
//! Both solvers share one tie rule: objectives within [`TIE_EPS`] are equal
//! and the lexicographically smallest flattened decision matrix wins, so the
//! branch-and-bound result is comparable to the brute-force oracle plan for
//! plan.

use crate::error::{Error, Result};
use crate::estimator::AggregatedDemand;
use crate::model::{CachePlan, RevenueParams};

/// Objectives closer than this are treated as tied.
pub const TIE_EPS: f64 = 1e-9;

/// Exhaustive-solver guard: at most this many binary decision variables.
pub const BRUTE_FORCE_LIMIT: usize = 24;

/// Coefficient view of the linearized objective.
#[derive(Debug, Clone, PartialEq)]
pub struct IlpInstance {
    /// Per-(slot, file) coefficient of the decision variable.
    pub d_coeff: Vec<Vec<f64>>,
    /// Per-(slot, file) credit of the persistence variable; row 0 is zero
    /// (folded into `d_coeff`).
    pub z_coeff: Vec<Vec<f64>>,
    /// Per-slot capacity in files.
    pub capacity: usize,
    /// Deployment before the horizon (drives the slot-0 fold).
    pub previous: Vec<bool>,
    /// Objective terms independent of the decisions.
    pub constant: f64,
}

impl IlpInstance {
    pub fn horizon(&self) -> usize {
        self.d_coeff.len()
    }

    pub fn num_files(&self) -> usize {
        self.previous.len()
    }

    /// Objective value of a binary plan, persistence implied by adjacency.
    pub fn objective(&self, decisions: &[Vec<bool>]) -> f64 {
        let mut value = self.constant;
        for (k, row) in decisions.iter().enumerate() {
            for (f, &d) in row.iter().enumerate() {
                if d {
                    value += self.d_coeff[k][f];
                    if k > 0 && decisions[k - 1][f] {
                        value += self.z_coeff[k][f];
                    }
                }
            }
        }
        value
    }

    /// Debug dump: one `k,f,d_coeff,z_coeff` line per pair.
    pub fn dump<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "capacity={} constant={} previous={}",
            self.capacity,
            self.constant,
            self.previous.iter().map(|&b| if b { '1' } else { '0' }).collect::<String>()
        )?;
        writeln!(w, "k,f,d_coeff,z_coeff")?;
        for k in 0..self.horizon() {
            for f in 0..self.num_files() {
                writeln!(w, "{},{},{},{}", k, f, self.d_coeff[k][f], self.z_coeff[k][f])?;
            }
        }
        Ok(())
    }
}

/// Restates the expected-revenue objective in coefficient form.
///
/// The decision coefficient at (k, f) is `decay^k * (backhaul * demand -
/// placement)`; slot 0 additionally credits `placement` for files already
/// deployed. The persistence credit is `decay^k * placement`. Frozen-tail
/// slots (`k >= horizon_slots`) contribute their demand terms to the final
/// decision column and no placement.
pub fn linearize(
    demand: &AggregatedDemand,
    previous: &[bool],
    params: &RevenueParams,
) -> Result<IlpInstance> {
    let n = params.minislots_per_slot;
    let k_slots = params.horizon_slots;
    let total_slots = k_slots + params.frozen_tail_slots;
    let files = demand.num_files();
    if previous.len() != files {
        return Err(Error::Shape(format!(
            "previous vector has {} files, demand has {files}",
            previous.len()
        )));
    }
    if demand.horizon() < n * total_slots {
        return Err(Error::Shape(format!(
            "demand covers {} offsets, horizon needs {}",
            demand.horizon(),
            n * total_slots
        )));
    }

    // Per-slot demand totals.
    let mut slot_demand = vec![vec![0.0; files]; total_slots];
    for k in 0..total_slots {
        for t in n * k..n * (k + 1) {
            for (f, &v) in demand.rows[t].iter().enumerate() {
                slot_demand[k][f] += v;
            }
        }
    }

    let margin = params.delivery_benefit - params.delivery_cost - params.backhaul_cost;
    let mut constant = 0.0;
    let mut d_coeff = vec![vec![0.0; files]; k_slots];
    let mut z_coeff = vec![vec![0.0; files]; k_slots];
    let mut weight = 1.0;
    for k in 0..total_slots {
        let column = k.min(k_slots - 1);
        for f in 0..files {
            constant += weight * margin * slot_demand[k][f];
            d_coeff[column][f] += weight * params.backhaul_cost * slot_demand[k][f];
        }
        if k < k_slots {
            for f in 0..files {
                d_coeff[k][f] -= weight * params.placement_cost;
            }
            if k == 0 {
                for (f, &prev) in previous.iter().enumerate() {
                    if prev {
                        d_coeff[0][f] += weight * params.placement_cost;
                    }
                }
            } else {
                for f in 0..files {
                    z_coeff[k][f] = weight * params.placement_cost;
                }
            }
        }
        weight *= params.decay;
    }

    Ok(IlpInstance {
        d_coeff,
        z_coeff,
        capacity: params.capacity_files(),
        previous: previous.to_vec(),
        constant,
    })
}

/// Solver output; `certified` is false when the node budget ran out and the
/// plan is only the best incumbent found.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub plan: CachePlan,
    pub objective: f64,
    pub certified: bool,
    pub nodes: u64,
}

/// Exact value of the best completion over trailing slots, via min-cost flow.
///
/// With uniform file sizes the per-slot constraint is a cardinality bound, so
/// a plan decomposes into at most `capacity` unit "cache slots" flowing
/// through time: a unit occupies one file per slot (collecting its decision
/// coefficient, plus the persistence credit while it stays), or idles in a
/// zero-profit pool. Maximum-profit flow of `capacity` units is therefore the
/// exact optimum of the trailing subproblem; it both certifies the branch and
/// bound quickly and stays admissible (it never under-estimates, it equals).
mod completion_flow {
    use super::IlpInstance;

    const INF: f64 = f64::INFINITY;

    struct Net {
        // Paired-arc adjacency: arc i and i^1 are a residual pair.
        first: Vec<i32>,
        next: Vec<i32>,
        to: Vec<u32>,
        cap: Vec<u32>,
        cost: Vec<f64>,
    }

    impl Net {
        fn new(nodes: usize) -> Self {
            Net {
                first: vec![-1; nodes],
                next: Vec::new(),
                to: Vec::new(),
                cap: Vec::new(),
                cost: Vec::new(),
            }
        }

        fn arc(&mut self, from: usize, to: usize, cap: u32, cost: f64) {
            for (a, b, c, w) in [(from, to, cap, cost), (to, from, 0, -cost)] {
                let id = self.to.len() as i32;
                self.to.push(b as u32);
                self.cap.push(c);
                self.cost.push(w);
                self.next.push(self.first[a]);
                self.first[a] = id;
            }
        }
    }

    /// Assignment state of a first-slot variable during the search.
    #[derive(Clone, Copy, PartialEq, Eq)]
    pub(super) enum VarState {
        Undecided,
        Zero,
        One,
    }

    /// Exact best completion over slots `from_slot..K`.
    ///
    /// `previous` is the fully decided column before `from_slot` (drives the
    /// first slot's persistence credits). `states`, when present, describes a
    /// partially decided first slot: `Zero` files are excluded, `One` files
    /// consume `used` capacity, contribute their gains elsewhere (in the
    /// caller's partial value), and grant the persistence credit to their
    /// next-slot entry. Undecided files remain free.
    pub(super) fn completion_value(
        inst: &IlpInstance,
        from_slot: usize,
        previous: Option<&[bool]>,
        states: Option<&[VarState]>,
        used: usize,
    ) -> f64 {
        let k_slots = inst.horizon();
        let files = inst.num_files();
        if from_slot >= k_slots || inst.capacity == 0 {
            return 0.0;
        }
        let span = k_slots - from_slot;
        // Node layout (topological): source, pool(from_slot), then per slot
        // the file in/out pairs and the next pool, finally the sink.
        let pool = |k: usize| 1 + (k - from_slot) * (2 * files + 1);
        let file_in = |k: usize, f: usize| pool(k) + 1 + 2 * f;
        let node_count = 1 + span * (2 * files + 1) + 2;
        let sink = node_count - 1;
        let source = 0;
        let cap = inst.capacity as u32;
        let first_cap = (inst.capacity - used.min(inst.capacity)) as u32;

        let state_of = |f: usize| states.map_or(VarState::Undecided, |s| s[f]);
        let mut net = Net::new(node_count);
        net.arc(source, pool(from_slot), first_cap, 0.0);
        // Capacity held by decided-One files in the first slot frees up
        // afterwards: inject it straight into the second slot's pool.
        if first_cap < cap && span > 1 {
            net.arc(source, pool(from_slot + 1), cap - first_cap, 0.0);
        }
        for k in from_slot..k_slots {
            for f in 0..files {
                if k == from_slot && state_of(f) != VarState::Undecided {
                    // Decided first-slot files are accounted in the caller's
                    // partial value; a decided One still hands its
                    // persistence credit to the next slot below.
                    if state_of(f) == VarState::One && k + 1 < k_slots {
                        net.arc(
                            pool(k + 1),
                            file_in(k + 1, f),
                            1,
                            -(inst.d_coeff[k + 1][f] + inst.z_coeff[k + 1][f]),
                        );
                    }
                    continue;
                }
                let enter_credit = if k == from_slot && k > 0 {
                    if previous.map_or(false, |p| p[f]) { inst.z_coeff[k][f] } else { 0.0 }
                } else {
                    0.0
                };
                // Profits become negative costs for the shortest-path search.
                net.arc(pool(k), file_in(k, f), 1, -(inst.d_coeff[k][f] + enter_credit));
                net.arc(file_in(k, f), file_in(k, f) + 1, 1, 0.0);
                if k + 1 < k_slots {
                    net.arc(
                        file_in(k, f) + 1,
                        file_in(k + 1, f),
                        1,
                        -(inst.d_coeff[k + 1][f] + inst.z_coeff[k + 1][f]),
                    );
                    net.arc(file_in(k, f) + 1, pool(k + 1), 1, 0.0);
                } else {
                    net.arc(file_in(k, f) + 1, sink, 1, 0.0);
                }
            }
            let next_pool = if k + 1 < k_slots { pool(k + 1) } else { sink };
            net.arc(pool(k), next_pool, cap, 0.0);
        }

        // Successive shortest paths; augmenting along an exact shortest path
        // each round keeps the flow optimal for its value, and stopping at
        // the first non-profitable path makes the final value the maximum
        // profit. Residual arcs carry negative costs, so the shortest-path
        // search is label-correcting (SPFA) rather than Dijkstra.
        let mut total_profit = 0.0;
        let mut dist = vec![INF; node_count];
        let mut prev_arc = vec![-1i32; node_count];
        let mut in_queue = vec![false; node_count];
        let mut queue = std::collections::VecDeque::new();
        for _ in 0..cap {
            dist.fill(INF);
            prev_arc.fill(-1);
            in_queue.fill(false);
            dist[source] = 0.0;
            queue.clear();
            queue.push_back(source);
            in_queue[source] = true;
            while let Some(u) = queue.pop_front() {
                in_queue[u] = false;
                let du = dist[u];
                let mut a = net.first[u];
                while a >= 0 {
                    let i = a as usize;
                    if net.cap[i] > 0 {
                        let v = net.to[i] as usize;
                        let nd = du + net.cost[i];
                        if nd + 1e-15 < dist[v] {
                            dist[v] = nd;
                            prev_arc[v] = i as i32;
                            if !in_queue[v] {
                                in_queue[v] = true;
                                queue.push_back(v);
                            }
                        }
                    }
                    a = net.next[i];
                }
            }
            if dist[sink] >= -1e-15 {
                break; // no profitable unit remains
            }
            let mut v = sink;
            while v != source {
                let i = prev_arc[v] as usize;
                net.cap[i] -= 1;
                net.cap[i ^ 1] += 1;
                v = net.to[i ^ 1] as usize;
            }
            total_profit -= dist[sink];
        }
        total_profit
    }
}

fn lex_less(a: &[Vec<bool>], b: &[Vec<bool>]) -> bool {
    for (ra, rb) in a.iter().zip(b) {
        for (&x, &y) in ra.iter().zip(rb) {
            if x != y {
                return !x; // false < true
            }
        }
    }
    false
}

/// Exhaustive scan of every capacity-feasible plan, in lexicographic order of
/// the flattened decision matrix; the first strictly-better maximizer wins,
/// so ties resolve to the lexicographically smallest plan.
pub fn solve_bruteforce(inst: &IlpInstance) -> Result<SolveResult> {
    let k_slots = inst.horizon();
    let files = inst.num_files();
    let vars = k_slots * files;
    if vars > BRUTE_FORCE_LIMIT {
        return Err(Error::SizeGuard { variables: vars, limit: BRUTE_FORCE_LIMIT });
    }

    // Feasible rows in lexicographic order (file 0 = most significant bit).
    let mut rows: Vec<Vec<bool>> = Vec::new();
    for mask in 0..(1u32 << files) {
        if mask.count_ones() as usize <= inst.capacity {
            rows.push((0..files).map(|f| mask >> (files - 1 - f) & 1 == 1).collect());
        }
    }

    let mut best: Option<(f64, Vec<Vec<bool>>)> = None;
    let mut plan = vec![vec![false; files]; k_slots];
    let mut nodes = 0u64;
    fn recurse(
        slot: usize,
        rows: &[Vec<bool>],
        inst: &IlpInstance,
        plan: &mut Vec<Vec<bool>>,
        best: &mut Option<(f64, Vec<Vec<bool>>)>,
        nodes: &mut u64,
    ) {
        if slot == inst.horizon() {
            *nodes += 1;
            let value = inst.objective(plan);
            match best {
                Some((incumbent, _)) if value <= *incumbent + TIE_EPS => {}
                _ => *best = Some((value, plan.clone())),
            }
            return;
        }
        for row in rows {
            plan[slot].copy_from_slice(row);
            recurse(slot + 1, rows, inst, plan, best, nodes);
        }
    }
    recurse(0, &rows, inst, &mut plan, &mut best, &mut nodes);

    let (objective, decisions) = best.expect("at least the all-zero plan is feasible");
    let plan = CachePlan::new(decisions, inst.previous.clone()).with_aux();
    Ok(SolveResult { plan, objective, certified: true, nodes })
}

struct SlotFrame {
    /// File ids in branching order (descending persistence-aware gain).
    order: Vec<u32>,
    /// Gain of assigning 1 to `order[i]`, exact given the previous column.
    gains: Vec<f64>,
    /// Prefix sums of the positive gains; `bound(i, r)` is O(1).
    pos_prefix: Vec<f64>,
}

impl SlotFrame {
    fn build(inst: &IlpInstance, slot: usize, prev_row: Option<&[bool]>) -> SlotFrame {
        let files = inst.num_files();
        let mut idx: Vec<u32> = (0..files as u32).collect();
        let gains_of = |f: usize| {
            let mut g = inst.d_coeff[slot][f];
            if let Some(prev) = prev_row {
                if prev[f] {
                    g += inst.z_coeff[slot][f];
                }
            }
            g
        };
        idx.sort_by(|&a, &b| {
            gains_of(b as usize)
                .partial_cmp(&gains_of(a as usize))
                .expect("finite coefficients")
                .then(a.cmp(&b))
        });
        let gains: Vec<f64> = idx.iter().map(|&f| gains_of(f as usize)).collect();
        let mut pos_prefix = Vec::with_capacity(files + 1);
        pos_prefix.push(0.0);
        for &g in &gains {
            pos_prefix.push(pos_prefix.last().unwrap() + g.max(0.0));
        }
        SlotFrame { order: idx, gains, pos_prefix }
    }

    /// Best-case completion of this slot from branching position `i` with
    /// `room` capacity left: the top positive gains still available.
    fn bound(&self, i: usize, room: usize) -> f64 {
        let end = (i + room).min(self.gains.len());
        self.pos_prefix[end] - self.pos_prefix[i]
    }
}

struct BnbSearch<'a> {
    inst: &'a IlpInstance,
    /// `future_bound[k]`: optimistic value of all slots `>= k` — the smaller
    /// of the per-slot top-gain sum (persistence granted unconditionally) and
    /// the granted-entry flow completion. Both are admissible.
    future_bound: Vec<f64>,
    decisions: Vec<Vec<bool>>,
    incumbent: Vec<Vec<bool>>,
    incumbent_obj: f64,
    nodes: u64,
    budget: u64,
    exhausted: bool,
}

impl<'a> BnbSearch<'a> {
    fn new(inst: &'a IlpInstance, budget: u64) -> Self {
        let k_slots = inst.horizon();
        let files = inst.num_files();
        let mut future_bound = vec![0.0; k_slots + 1];
        for k in (0..k_slots).rev() {
            let mut gains: Vec<f64> = (0..files)
                .map(|f| inst.d_coeff[k][f] + inst.z_coeff[k][f])
                .filter(|&g| g > 0.0)
                .collect();
            gains.sort_by(|a, b| b.partial_cmp(a).expect("finite coefficients"));
            let slot_best: f64 = gains.iter().take(inst.capacity).sum();
            future_bound[k] = future_bound[k + 1] + slot_best;
        }
        let zero = vec![vec![false; files]; k_slots];
        let incumbent_obj = inst.objective(&zero);
        BnbSearch {
            inst,
            future_bound,
            decisions: zero.clone(),
            incumbent: zero,
            incumbent_obj,
            nodes: 0,
            budget,
            exhausted: false,
        }
    }

    fn offer(&mut self, value: f64) {
        if value > self.incumbent_obj + TIE_EPS
            || (value > self.incumbent_obj - TIE_EPS && lex_less(&self.decisions, &self.incumbent))
        {
            self.incumbent_obj = value;
            self.incumbent = self.decisions.clone();
        }
    }

    fn enter_slot(&mut self, slot: usize, partial: f64) {
        if slot == self.inst.horizon() {
            self.offer(partial);
            return;
        }
        let prev_row: Option<Vec<bool>> =
            if slot == 0 { None } else { Some(self.decisions[slot - 1].clone()) };
        let frame = SlotFrame::build(self.inst, slot, prev_row.as_deref());
        self.branch(&frame, slot, 0, 0, partial);
    }

    /// Exact upper bound at a search node: the caller's accumulated value
    /// plus the flow optimum over everything still undecided.
    fn flow_bound(&self, frame: &SlotFrame, slot: usize, i: usize, used: usize) -> f64 {
        use completion_flow::VarState;
        let files = self.inst.num_files();
        let mut states = vec![VarState::Undecided; files];
        for j in 0..i {
            let f = frame.order[j] as usize;
            states[f] =
                if self.decisions[slot][f] { VarState::One } else { VarState::Zero };
        }
        let prev_row: Option<&[bool]> =
            if slot == 0 { None } else { Some(&self.decisions[slot - 1]) };
        completion_flow::completion_value(self.inst, slot, prev_row, Some(&states), used)
    }

    fn branch(&mut self, frame: &SlotFrame, slot: usize, i: usize, used: usize, partial: f64) {
        if self.exhausted {
            return;
        }
        self.nodes += 1;
        if self.nodes > self.budget {
            self.exhausted = true;
            return;
        }
        if i == frame.order.len() {
            self.enter_slot(slot + 1, partial);
            return;
        }
        let room = self.inst.capacity - used;
        // Cheap filter first (per-slot optimistic sums), then the exact flow
        // completion; both are admissible.
        let cheap = partial + frame.bound(i, room) + self.future_bound[slot + 1];
        if cheap < self.incumbent_obj - TIE_EPS {
            return;
        }
        let exact = partial + self.flow_bound(frame, slot, i, used);
        if exact < self.incumbent_obj - TIE_EPS {
            return;
        }
        let f = frame.order[i] as usize;
        let gain = frame.gains[i];
        let take_first = gain > 0.0 && room > 0;
        if take_first {
            self.decisions[slot][f] = true;
            self.branch(frame, slot, i + 1, used + 1, partial + gain);
            self.decisions[slot][f] = false;
            self.branch(frame, slot, i + 1, used, partial);
        } else {
            self.decisions[slot][f] = false;
            self.branch(frame, slot, i + 1, used, partial);
            if room > 0 {
                self.decisions[slot][f] = true;
                self.branch(frame, slot, i + 1, used + 1, partial + gain);
                self.decisions[slot][f] = false;
            }
        }
    }
}

/// Depth-first branch and bound over the decision variables, slot-major.
///
/// The upper bound combines the exact persistence-aware top gains of the
/// current slot with precomputed optimistic per-slot sums for later slots.
/// Agrees with [`solve_bruteforce`] (objective and plan) wherever both run;
/// if `node_budget` is exceeded the best incumbent is returned with
/// `certified = false`.
pub fn solve_bnb(inst: &IlpInstance, node_budget: u64) -> SolveResult {
    let mut search = BnbSearch::new(inst, node_budget);
    search.enter_slot(0, inst.constant);
    let plan = CachePlan::new(search.incumbent.clone(), inst.previous.clone()).with_aux();
    SolveResult {
        plan,
        objective: search.incumbent_obj,
        certified: !search.exhausted,
        nodes: search.nodes,
    }
}

/// Greedy 0-1 knapsack for the one-slot objective: marginal value
/// `backhaul * slot demand - placement * (1 - previous) + decay * placement *
/// next_plan`, keep the largest strictly positive values up to capacity
/// (unit weights make greedy exact). Ties go to the lowest file id.
pub fn solve_one_slot_greedy(
    slot_demand: &[Vec<f64>],
    next_plan: &[bool],
    previous: &[bool],
    params: &RevenueParams,
) -> Vec<bool> {
    let files = previous.len();
    let mut value = vec![0.0; files];
    for row in slot_demand {
        for (f, &v) in row.iter().enumerate() {
            value[f] += params.backhaul_cost * v;
        }
    }
    for f in 0..files {
        if !previous[f] {
            value[f] -= params.placement_cost;
        }
        if next_plan[f] {
            value[f] += params.decay * params.placement_cost;
        }
    }
    let mut order: Vec<usize> = (0..files).collect();
    order.sort_by(|&a, &b| {
        value[b].partial_cmp(&value[a]).expect("finite values").then(a.cmp(&b))
    });
    let mut plan = vec![false; files];
    for &f in order.iter().take(params.capacity_files()) {
        if value[f] > 0.0 {
            plan[f] = true;
        }
    }
    plan
}
