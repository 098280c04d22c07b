//! Core domain types and revenue arithmetic.
//!
//! The economic model: delivering a requested file earns `delivery_benefit`
//! and always pays `delivery_cost`; a request for a file absent from the edge
//! cache additionally pays `backhaul_cost` to fetch it from the cloud.
//! Rewriting the cache at a placement-slot boundary pays `placement_cost` per
//! newly written file. Time is split into placement slots of
//! `minislots_per_slot` mini-slots; each user issues exactly one request per
//! mini-slot.

use std::io::{BufRead, BufReader, Read, Write};

use crate::error::{Error, Result};

/// Economic and horizon constants shared by the planner and the evaluator.
#[derive(Debug, Clone, PartialEq)]
pub struct RevenueParams {
    /// Benefit of a successful delivery (per request).
    pub delivery_benefit: f64,
    /// Cost of writing one file into the edge cache.
    pub placement_cost: f64,
    /// Cost of delivering a file from the base station to the user.
    pub delivery_cost: f64,
    /// Cost of fetching a file from the cloud on a cache miss.
    pub backhaul_cost: f64,
    /// Discount applied to each further lookahead slot, in (0, 1].
    pub decay: f64,
    /// Number of future placement slots jointly optimized.
    pub horizon_slots: usize,
    /// Additional lookahead slots during which the plan is frozen.
    pub frozen_tail_slots: usize,
    /// Mini-slots per placement slot.
    pub minislots_per_slot: usize,
    /// Cache capacity in bytes.
    pub cache_bytes: u64,
    /// Uniform file size in bytes.
    pub file_bytes: u64,
}

impl RevenueParams {
    /// Checks the structural invariants; call at configuration boundaries.
    pub fn validate(&self) -> Result<()> {
        if !(self.backhaul_cost > self.placement_cost) {
            return Err(Error::InvalidConfig(format!(
                "backhaul cost ({}) must exceed placement cost ({})",
                self.backhaul_cost, self.placement_cost
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if self.minislots_per_slot < 1 {
            return Err(Error::InvalidConfig("minislots_per_slot must be >= 1".into()));
        }
        if self.horizon_slots < 1 {
            return Err(Error::InvalidConfig("horizon_slots must be >= 1".into()));
        }
        if self.file_bytes == 0 {
            return Err(Error::InvalidConfig("file_bytes must be > 0".into()));
        }
        for (name, v) in [
            ("delivery_benefit", self.delivery_benefit),
            ("placement_cost", self.placement_cost),
            ("delivery_cost", self.delivery_cost),
            ("backhaul_cost", self.backhaul_cost),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be finite")));
            }
        }
        Ok(())
    }

    /// Cache capacity expressed in whole files.
    pub fn capacity_files(&self) -> usize {
        (self.cache_bytes / self.file_bytes) as usize
    }

    /// Mini-slot offsets covered by the planning objective:
    /// `minislots_per_slot * (horizon_slots + frozen_tail_slots)`.
    pub fn planning_minislots(&self) -> usize {
        self.minislots_per_slot * (self.horizon_slots + self.frozen_tail_slots)
    }
}

/// Ground-truth request history: one file per (user, mini-slot).
#[derive(Debug, Clone, PartialEq)]
pub struct RequestTrace {
    num_files: usize,
    /// `per_user[u][t]` is the file requested by user `u` at mini-slot `t`.
    per_user: Vec<Vec<u32>>,
}

impl RequestTrace {
    /// Builds a trace from per-user request streams of equal length.
    pub fn new(num_files: usize, per_user: Vec<Vec<u32>>) -> Result<Self> {
        if per_user.is_empty() {
            return Err(Error::EmptyInput("trace needs at least one user"));
        }
        let len = per_user[0].len();
        for (u, stream) in per_user.iter().enumerate() {
            if stream.len() != len {
                return Err(Error::Shape(format!(
                    "user {u} has {} mini-slots, expected {len}",
                    stream.len()
                )));
            }
            if let Some(&f) = stream.iter().find(|&&f| f as usize >= num_files) {
                return Err(Error::Shape(format!(
                    "user {u} requests file {f}, catalog has {num_files}"
                )));
            }
        }
        Ok(Self { num_files, per_user })
    }

    pub fn num_users(&self) -> usize {
        self.per_user.len()
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    pub fn total_minislots(&self) -> usize {
        self.per_user[0].len()
    }

    /// File requested by `user` at mini-slot `t`.
    pub fn request(&self, user: usize, t: usize) -> u32 {
        self.per_user[user][t]
    }

    /// Full request stream of one user.
    pub fn user_stream(&self, user: usize) -> &[u32] {
        &self.per_user[user]
    }

    fn check_minislot(&self, t: usize) -> Result<()> {
        if t >= self.total_minislots() {
            return Err(Error::TraceIncomplete {
                mini_slot: t,
                detail: format!("trace ends at mini-slot {}", self.total_minislots()),
            });
        }
        Ok(())
    }

    /// Serializes to the text interchange format:
    /// a `users=<U> files=<F> minislots=<T>` header, then `t,u,f` lines
    /// sorted by mini-slot then user. Round-trips bit-exactly.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "users={} files={} minislots={}",
            self.num_users(),
            self.num_files,
            self.total_minislots()
        )?;
        for t in 0..self.total_minislots() {
            for (u, stream) in self.per_user.iter().enumerate() {
                writeln!(w, "{},{},{}", t, u, stream[t])?;
            }
        }
        Ok(())
    }

    /// Parses the text interchange format, enforcing exactly one request per
    /// (user, mini-slot) in sorted order.
    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or(Error::Parse { line: 1, message: "missing header".into() })?;
        let header = header?;
        let mut users = None;
        let mut files = None;
        let mut minislots = None;
        for field in header.split_whitespace() {
            let (key, value) = field.split_once('=').ok_or_else(|| Error::Parse {
                line: 1,
                message: format!("malformed header field `{field}`"),
            })?;
            let value: usize = value.parse().map_err(|_| Error::Parse {
                line: 1,
                message: format!("malformed header value `{field}`"),
            })?;
            match key {
                "users" => users = Some(value),
                "files" => files = Some(value),
                "minislots" => minislots = Some(value),
                _ => {
                    return Err(Error::Parse {
                        line: 1,
                        message: format!("unknown header key `{key}`"),
                    })
                }
            }
        }
        let (users, files, minislots) = match (users, files, minislots) {
            (Some(u), Some(f), Some(t)) if u > 0 => (u, f, t),
            _ => {
                return Err(Error::Parse {
                    line: 1,
                    message: "header must declare users, files, minislots".into(),
                })
            }
        };
        let mut per_user = vec![Vec::with_capacity(minislots); users];
        let mut expected = 0usize; // flattened index t * users + u
        for (idx, line) in lines {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split(',');
            let mut next = |what: &str| -> Result<usize> {
                parts
                    .next()
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| Error::Parse {
                        line: idx + 1,
                        message: format!("malformed {what} in `{line}`"),
                    })
            };
            let t = next("mini-slot")?;
            let u = next("user")?;
            let f = next("file")?;
            if (t, u) != (expected / users, expected % users) {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!(
                        "expected request ({},{}), found ({t},{u})",
                        expected / users,
                        expected % users
                    ),
                });
            }
            if f >= files {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("file id {f} out of range ({files} files)"),
                });
            }
            per_user[u].push(f as u32);
            expected += 1;
        }
        if expected != users * minislots {
            return Err(Error::TraceIncomplete {
                mini_slot: expected / users,
                detail: format!(
                    "{expected} requests read, header declares {}",
                    users * minislots
                ),
            });
        }
        RequestTrace::new(files, per_user)
    }
}

/// A lookahead cache plan: one binary row per optimized slot, plus the column
/// deployed before the horizon began.
#[derive(Debug, Clone, PartialEq)]
pub struct CachePlan {
    /// `decisions[k][f]`: cache file `f` during lookahead slot `k`.
    pub decisions: Vec<Vec<bool>>,
    /// Deployment state of the slot preceding the horizon.
    pub previous: Vec<bool>,
    /// Persistence indicators: `aux[k][f] = decisions[k][f] && prev_row[f]`
    /// where `prev_row` is `previous` for `k = 0` and `decisions[k-1]` after.
    pub aux: Option<Vec<Vec<bool>>>,
}

impl CachePlan {
    pub fn new(decisions: Vec<Vec<bool>>, previous: Vec<bool>) -> Self {
        Self { decisions, previous, aux: None }
    }

    pub fn horizon(&self) -> usize {
        self.decisions.len()
    }

    pub fn num_files(&self) -> usize {
        self.previous.len()
    }

    /// Checks row widths and the per-slot capacity bound.
    pub fn validate(&self, capacity_files: usize) -> Result<()> {
        for (k, row) in self.decisions.iter().enumerate() {
            if row.len() != self.previous.len() {
                return Err(Error::InvalidPlan(format!(
                    "slot {k} has {} files, previous vector has {}",
                    row.len(),
                    self.previous.len()
                )));
            }
            let used = row.iter().filter(|&&d| d).count();
            if used > capacity_files {
                return Err(Error::InvalidPlan(format!(
                    "slot {k} caches {used} files, capacity is {capacity_files}"
                )));
            }
        }
        Ok(())
    }

    /// Computes the persistence matrix from the decisions.
    pub fn persistence(&self) -> Vec<Vec<bool>> {
        let mut z = Vec::with_capacity(self.horizon());
        for k in 0..self.horizon() {
            let prev_row: &[bool] =
                if k == 0 { &self.previous } else { &self.decisions[k - 1] };
            z.push(
                self.decisions[k]
                    .iter()
                    .zip(prev_row)
                    .map(|(&d, &p)| d && p)
                    .collect(),
            );
        }
        z
    }

    /// Stores the persistence matrix in `aux`.
    pub fn with_aux(mut self) -> Self {
        self.aux = Some(self.persistence());
        self
    }
}

/// Expected per-user demand over a prediction horizon.
///
/// `values[u][h][f]` estimates the probability that user `u` requests file
/// `f` at horizon offset `h`. Entries always lie in [0, 1]; row sums are only
/// 1 when the accuracy entering the mixture is constant across files, so no
/// row-sum invariant is enforced here.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandEstimate {
    num_files: usize,
    values: Vec<Vec<Vec<f64>>>,
}

impl DemandEstimate {
    pub fn new(num_files: usize, values: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyInput("demand estimate needs at least one user"));
        }
        let horizon = values[0].len();
        for (u, rows) in values.iter().enumerate() {
            if rows.len() != horizon {
                return Err(Error::Shape(format!(
                    "user {u} has {} offsets, expected {horizon}",
                    rows.len()
                )));
            }
            for (h, row) in rows.iter().enumerate() {
                if row.len() != num_files {
                    return Err(Error::Shape(format!(
                        "user {u} offset {h}: row width {} != {num_files}",
                        row.len()
                    )));
                }
                if let Some(&v) = row.iter().find(|v| !(0.0..=1.0 + 1e-9).contains(*v)) {
                    return Err(Error::Shape(format!(
                        "user {u} offset {h}: entry {v} outside [0, 1]"
                    )));
                }
            }
        }
        Ok(Self { num_files, values })
    }

    pub fn num_users(&self) -> usize {
        self.values.len()
    }

    pub fn num_files(&self) -> usize {
        self.num_files
    }

    /// Number of mini-slot offsets covered.
    pub fn horizon_minislots(&self) -> usize {
        self.values[0].len()
    }

    pub fn row(&self, user: usize, offset: usize) -> &[f64] {
        &self.values[user][offset]
    }

    /// Sums estimates across users into per-(offset, file) expected counts.
    pub fn sum_over_users(&self) -> Vec<Vec<f64>> {
        let horizon = self.horizon_minislots();
        let mut out = vec![vec![0.0; self.num_files]; horizon];
        for rows in &self.values {
            for (h, row) in rows.iter().enumerate() {
                for (f, v) in row.iter().enumerate() {
                    out[h][f] += v;
                }
            }
        }
        out
    }
}

/// Realized accounting for one executed placement slot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlotOutcome {
    pub realized_revenue: f64,
    pub hits: u64,
    pub misses: u64,
    /// Files newly written into the cache this slot.
    pub placements: u64,
}

/// Evaluates one placement slot against the ground truth.
///
/// Revenue is `benefit - delivery costs - placement costs` for the `n`
/// mini-slots starting at `slot_start`; a request is a hit when the deployed
/// column holds its file.
pub fn realized_slot_revenue(
    trace: &RequestTrace,
    slot_start: usize,
    deployed: &[bool],
    previous: &[bool],
    params: &RevenueParams,
) -> Result<SlotOutcome> {
    let n = params.minislots_per_slot;
    if deployed.len() != trace.num_files() || previous.len() != trace.num_files() {
        return Err(Error::Shape(format!(
            "deployment vectors must have {} entries",
            trace.num_files()
        )));
    }
    if n > 0 {
        trace.check_minislot(slot_start + n - 1)?;
    }
    let used = deployed.iter().filter(|&&d| d).count();
    if used > params.capacity_files() {
        return Err(Error::InvalidPlan(format!(
            "deployed column holds {used} files, capacity is {}",
            params.capacity_files()
        )));
    }

    let mut revenue = 0.0;
    let mut hits = 0u64;
    let mut misses = 0u64;
    for t in slot_start..slot_start + n {
        for u in 0..trace.num_users() {
            let f = trace.request(u, t) as usize;
            revenue += params.delivery_benefit - params.delivery_cost;
            if deployed[f] {
                hits += 1;
            } else {
                misses += 1;
                revenue -= params.backhaul_cost;
            }
        }
    }
    let placements = deployed
        .iter()
        .zip(previous)
        .filter(|&(&d, &p)| d && !p)
        .count() as u64;
    revenue -= params.placement_cost * placements as f64;
    Ok(SlotOutcome { realized_revenue: revenue, hits, misses, placements })
}

/// Arithmetic mean of realized revenues.
pub fn average_revenue(outcomes: &[SlotOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptyInput("average_revenue over zero slots"));
    }
    Ok(outcomes.iter().map(|o| o.realized_revenue).sum::<f64>() / outcomes.len() as f64)
}

/// Fraction of requests served from the edge cache.
pub fn cache_hit_ratio(outcomes: &[SlotOutcome]) -> Result<f64> {
    let hits: u64 = outcomes.iter().map(|o| o.hits).sum();
    let total: u64 = outcomes.iter().map(|o| o.hits + o.misses).sum();
    if total == 0 {
        return Err(Error::UndefinedMetric("cache hit ratio with zero requests"));
    }
    Ok(hits as f64 / total as f64)
}

/// Discounted expected revenue of a plan under a demand estimate.
///
/// Slots `k >= horizon_slots` reuse the final decision column (the plan is
/// frozen there); a frozen slot re-caches nothing, so it contributes demand
/// terms but no placement cost. The `k = 0` persistence row couples to
/// `plan.previous`.
pub fn expected_total_revenue(
    estimates: &DemandEstimate,
    plan: &CachePlan,
    params: &RevenueParams,
) -> Result<f64> {
    let n = params.minislots_per_slot;
    let total_slots = params.horizon_slots + params.frozen_tail_slots;
    if plan.horizon() != params.horizon_slots {
        return Err(Error::Shape(format!(
            "plan has {} slots, params optimize {}",
            plan.horizon(),
            params.horizon_slots
        )));
    }
    if estimates.num_files() != plan.num_files() {
        return Err(Error::Shape(format!(
            "estimate has {} files, plan has {}",
            estimates.num_files(),
            plan.num_files()
        )));
    }
    if estimates.horizon_minislots() < n * total_slots {
        return Err(Error::Shape(format!(
            "estimate covers {} mini-slots, horizon needs {}",
            estimates.horizon_minislots(),
            n * total_slots
        )));
    }

    let counts = estimates.sum_over_users();
    let mut revenue = 0.0;
    let mut weight = 1.0;
    for k in 0..total_slots {
        let col = &plan.decisions[k.min(params.horizon_slots - 1)];
        for t in n * k..n * (k + 1) {
            for (f, &cached) in col.iter().enumerate() {
                let miss_cost = if cached { 0.0 } else { params.backhaul_cost };
                revenue += weight
                    * counts[t][f]
                    * (params.delivery_benefit - params.delivery_cost - miss_cost);
            }
        }
        // Placement cost: only the first `horizon_slots` columns can change
        // the cache; the frozen tail writes nothing.
        if k < params.horizon_slots {
            let prev_row: &[bool] =
                if k == 0 { &plan.previous } else { &plan.decisions[k - 1] };
            let new_files = plan.decisions[k]
                .iter()
                .zip(prev_row)
                .filter(|&(&d, &p)| d && !p)
                .count();
            revenue -= weight * params.placement_cost * new_files as f64;
        }
        weight *= params.decay;
    }
    Ok(revenue)
}

#[cfg(test)]
pub(crate) fn test_params() -> RevenueParams {
    RevenueParams {
        delivery_benefit: 3.0,
        placement_cost: 1.5,
        delivery_cost: 0.5,
        backhaul_cost: 2.0,
        decay: 0.8,
        horizon_slots: 1,
        frozen_tail_slots: 0,
        minislots_per_slot: 1,
        cache_bytes: 1,
        file_bytes: 1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_user_trace(requests: Vec<u32>, num_files: usize) -> RequestTrace {
        RequestTrace::new(num_files, vec![requests]).unwrap()
    }

    #[test]
    fn params_validation() {
        let mut p = test_params();
        p.validate().unwrap();
        p.decay = 1.5;
        assert!(p.validate().is_err());
        p.decay = 0.8;
        p.placement_cost = 2.5; // exceeds backhaul cost
        assert!(p.validate().is_err());
    }

    #[test]
    fn realized_revenue_hand_cases() {
        let trace = one_user_trace(vec![0], 2);
        let params = test_params();

        // Cached: (3 - 0.5) minus one placement at 1.5.
        let hit = realized_slot_revenue(&trace, 0, &[true, false], &[false, false], &params)
            .unwrap();
        assert!((hit.realized_revenue - 1.0).abs() < 1e-9);
        assert_eq!((hit.hits, hit.misses, hit.placements), (1, 0, 1));

        // Not cached: 3 - 0.5 - 2.
        let miss = realized_slot_revenue(&trace, 0, &[false, false], &[false, false], &params)
            .unwrap();
        assert!((miss.realized_revenue - 0.5).abs() < 1e-9);
        assert_eq!((miss.hits, miss.misses, miss.placements), (0, 1, 0));
    }

    #[test]
    fn keeping_the_cache_is_free() {
        let trace = one_user_trace(vec![1, 1], 2);
        let mut params = test_params();
        params.minislots_per_slot = 2;
        let deployed = [true, false];
        let out = realized_slot_revenue(&trace, 0, &deployed, &deployed, &params).unwrap();
        assert_eq!(out.placements, 0);
    }

    #[test]
    fn missing_minislot_and_capacity_errors() {
        let trace = one_user_trace(vec![0], 2);
        let params = test_params();
        assert!(matches!(
            realized_slot_revenue(&trace, 1, &[false, false], &[false, false], &params),
            Err(Error::TraceIncomplete { .. })
        ));
        assert!(matches!(
            realized_slot_revenue(&trace, 0, &[true, true], &[false, false], &params),
            Err(Error::InvalidPlan(_))
        ));
    }

    #[test]
    fn average_and_chr() {
        let mk = |r: f64, h: u64, m: u64| SlotOutcome {
            realized_revenue: r,
            hits: h,
            misses: m,
            placements: 0,
        };
        assert_eq!(average_revenue(&[mk(0.0, 1, 0)]).unwrap(), 0.0);
        assert!((average_revenue(&[mk(1.0, 1, 0), mk(0.5, 0, 1)]).unwrap() - 0.75).abs() < 1e-9);
        assert!(average_revenue(&[]).is_err());

        assert_eq!(cache_hit_ratio(&[mk(0.0, 4, 0)]).unwrap(), 1.0);
        assert!((cache_hit_ratio(&[mk(0.0, 3, 1)]).unwrap() - 0.75).abs() < 1e-9);
        assert!(cache_hit_ratio(&[mk(0.0, 0, 0)]).is_err());
    }

    #[test]
    fn chr_ignores_currency_scale() {
        let trace = one_user_trace(vec![0, 1, 0], 3);
        let mut params = test_params();
        params.minislots_per_slot = 3;
        params.cache_bytes = 1;
        let evaluate = |p: &RevenueParams| {
            let out =
                realized_slot_revenue(&trace, 0, &[true, false, false], &[false; 3], p).unwrap();
            cache_hit_ratio(&[out]).unwrap()
        };
        let base = evaluate(&params);
        params.delivery_benefit *= 10.0;
        params.delivery_cost *= 10.0;
        params.backhaul_cost *= 10.0;
        params.placement_cost *= 10.0;
        assert_eq!(base, evaluate(&params));
    }

    #[test]
    fn expected_revenue_hand_cases() {
        let params = test_params();

        // All-zero demand, plan equals previous: exactly zero.
        let est = DemandEstimate::new(2, vec![vec![vec![0.0, 0.0]]]).unwrap();
        let plan = CachePlan::new(vec![vec![false, false]], vec![false, false]);
        assert_eq!(expected_total_revenue(&est, &plan, &params).unwrap(), 0.0);

        // K=1, demand 1 on file 0, cached, previous empty: (3-0.5) - 1.5.
        let est = DemandEstimate::new(2, vec![vec![vec![1.0, 0.0]]]).unwrap();
        let plan = CachePlan::new(vec![vec![true, false]], vec![false, false]);
        let r = expected_total_revenue(&est, &plan, &params).unwrap();
        assert!((r - 1.0).abs() < 1e-9);

        // K=2 with persistence: second slot pays no placement.
        let mut params2 = params.clone();
        params2.horizon_slots = 2;
        let est = DemandEstimate::new(
            2,
            vec![vec![vec![1.0, 0.0], vec![1.0, 0.0]]],
        )
        .unwrap();
        let plan = CachePlan::new(
            vec![vec![true, false], vec![true, false]],
            vec![false, false],
        );
        let r = expected_total_revenue(&est, &plan, &params2).unwrap();
        assert!((r - (1.0 + 0.8 * 2.5)).abs() < 1e-9);
    }

    #[test]
    fn frozen_tail_adds_demand_but_no_placement() {
        let mut params = test_params();
        params.horizon_slots = 1;
        params.frozen_tail_slots = 1;
        params.decay = 1.0;
        // Demand 1 in both slots; single optimized column caches the file.
        let est =
            DemandEstimate::new(1, vec![vec![vec![1.0], vec![1.0]]]).unwrap();
        let plan = CachePlan::new(vec![vec![true]], vec![false]);
        let r = expected_total_revenue(&est, &plan, &params).unwrap();
        // Slot 0: 2.5 - 1.5; slot 1 (frozen): 2.5, no new placement.
        assert!((r - (1.0 + 2.5)).abs() < 1e-9);
    }

    #[test]
    fn degenerate_estimate_matches_sequential_execution() {
        // One-hot ground-truth estimates with decay 1 must reproduce the sum
        // of realized slot revenues when the plan is executed sequentially.
        use rand::Rng;
        let mut rng = crate::rng::stream(11, &[crate::rng::tag::TRACE]);
        for _ in 0..20 {
            let users = rng.random_range(1..3usize);
            let files = rng.random_range(2..5usize);
            let k = rng.random_range(1..4usize);
            let n = rng.random_range(1..3usize);
            let mut params = test_params();
            params.horizon_slots = k;
            params.minislots_per_slot = n;
            params.decay = 1.0;
            params.cache_bytes = rng.random_range(0..=files as u64);

            let per_user: Vec<Vec<u32>> = (0..users)
                .map(|_| (0..n * k).map(|_| rng.random_range(0..files as u32)).collect())
                .collect();
            let trace = RequestTrace::new(files, per_user).unwrap();

            let values: Vec<Vec<Vec<f64>>> = (0..users)
                .map(|u| {
                    (0..n * k)
                        .map(|t| {
                            let mut row = vec![0.0; files];
                            row[trace.request(u, t) as usize] = 1.0;
                            row
                        })
                        .collect()
                })
                .collect();
            let est = DemandEstimate::new(files, values).unwrap();

            let capacity = params.capacity_files();
            let decisions: Vec<Vec<bool>> = (0..k)
                .map(|_| {
                    let mut row = vec![false; files];
                    let mut left = capacity;
                    for b in &mut row {
                        if left > 0 && rng.random_range(0..2) == 1 {
                            *b = true;
                            left -= 1;
                        }
                    }
                    row
                })
                .collect();
            let plan = CachePlan::new(decisions, vec![false; files]);

            let expected = expected_total_revenue(&est, &plan, &params).unwrap();
            let mut sequential = 0.0;
            let mut prev = plan.previous.clone();
            for slot in 0..k {
                let out =
                    realized_slot_revenue(&trace, slot * n, &plan.decisions[slot], &prev, &params)
                        .unwrap();
                sequential += out.realized_revenue;
                prev = plan.decisions[slot].clone();
            }
            assert!(
                (expected - sequential).abs() < 1e-9,
                "expected {expected}, sequential {sequential}"
            );
        }
    }

    #[test]
    fn each_flip_to_miss_costs_backhaul() {
        let trace = one_user_trace(vec![0, 1], 2);
        let mut params = test_params();
        params.minislots_per_slot = 2;
        params.cache_bytes = 2;
        let both = realized_slot_revenue(&trace, 0, &[true, true], &[true, true], &params)
            .unwrap();
        let one = realized_slot_revenue(&trace, 0, &[true, false], &[true, false], &params)
            .unwrap();
        assert!(
            (both.realized_revenue - one.realized_revenue - params.backhaul_cost).abs() < 1e-9
        );
    }

    #[test]
    fn trace_round_trip_is_bit_exact() {
        let trace = RequestTrace::new(3, vec![vec![0, 2, 1], vec![1, 1, 0]]).unwrap();
        let mut buf = Vec::new();
        trace.write_to(&mut buf).unwrap();
        let parsed = RequestTrace::read_from(&buf[..]).unwrap();
        assert_eq!(parsed, trace);
        let mut buf2 = Vec::new();
        parsed.write_to(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn trace_parse_rejects_gaps() {
        let text = "users=2 files=2 minislots=1\n0,0,1\n";
        assert!(RequestTrace::read_from(text.as_bytes()).is_err());
        let bad_order = "users=2 files=2 minislots=1\n0,1,1\n0,0,0\n";
        assert!(RequestTrace::read_from(bad_order.as_bytes()).is_err());
    }

    #[test]
    fn plan_persistence_matrix() {
        let plan = CachePlan::new(
            vec![vec![true, false], vec![true, true]],
            vec![true, false],
        );
        let z = plan.persistence();
        assert_eq!(z[0], vec![true, false]); // couples to previous
        assert_eq!(z[1], vec![true, false]); // couples to slot 0
    }
}
