//! Quick timing probe for desk-scale planning instances.

use std::time::Instant;

use cacherev::estimator::AggregatedDemand;
use cacherev::model::RevenueParams;
use cacherev::optimizer::{linearize, solve_bnb};
use cacherev::workload::{self, Catalog, WorkloadConfig};

fn main() {
    let users = 10;
    let files = 40;
    let config = WorkloadConfig {
        init_requests: 7,
        block_size: 5,
        forgetting: 0.5,
        score_weight: 0.5,
        requests_per_day: 47,
        days: 8,
        zipf_exponent: 1.2,
        dirichlet_alpha: 0.3,
    };
    let mut catalog = Catalog::generate(files, 3, 8, 1.2, 1).unwrap();
    let profiles = workload::sample_profiles(users, 3, &config, 1).unwrap();
    catalog.compute_global_popularity(&profiles).unwrap();
    let trace = workload::generate_trace(users, &catalog, &config, 1).unwrap();
    eprintln!("trace: {} minislots", trace.total_minislots());

    for k in [1usize, 2, 3, 5, 7] {
        let params = RevenueParams {
            delivery_benefit: 3.0,
            placement_cost: 1.5,
            delivery_cost: 0.5,
            backhaul_cost: 2.0,
            decay: 0.8,
            horizon_slots: k,
            frozen_tail_slots: 0,
            minislots_per_slot: 2,
            cache_bytes: 10,
            file_bytes: 1,
        };
        // Ground-truth demand instances along an episode.
        let mut total_nodes = 0u64;
        let mut worst_nodes = 0u64;
        let mut uncertified = 0u32;
        let start = Instant::now();
        let slots = 20;
        let mut previous = vec![false; files];
        for tau in 0..slots {
            let s = 200 + tau * 2;
            let mut rows = vec![vec![0.0; files]; 2 * k];
            for (h, row) in rows.iter_mut().enumerate() {
                for u in 0..users {
                    row[trace.request(u, s + h) as usize] += 1.0;
                }
            }
            let inst = linearize(&AggregatedDemand { rows }, &previous, &params).unwrap();
            let solved = solve_bnb(&inst, 3_000_000);
            total_nodes += solved.nodes;
            worst_nodes = worst_nodes.max(solved.nodes);
            uncertified += u32::from(!solved.certified);
            previous = solved.plan.decisions[0].clone();
        }
        eprintln!(
            "K={k}: {:?} for {slots} solves; nodes total {total_nodes}, worst {worst_nodes}, uncertified {uncertified}",
            start.elapsed()
        );
    }
}
