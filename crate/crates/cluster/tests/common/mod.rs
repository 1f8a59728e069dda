#![allow(dead_code)]

use ddi_cluster::{Cluster, ClusterConfig, ClusterMode, Schedule, TickReport};
use ddi_core::baselines::NaiveEngine;
use ddi_core::config::TransportKind;
use ddi_core::workload::{Distribution2d, Simulation, TickBatch, WorkloadSpec};
use ddi_core::{ObjectId, QueryId, SplitConfig};
use std::collections::{BTreeMap, BTreeSet};

pub fn spec(seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        distribution: Distribution2d::Zipf,
        n_objects: 600,
        n_queries: 25,
        radius: 0.08,
        object_speed: 0.01,
        query_speed: 0.02,
        ticks: 8,
        seed,
        query_lifetime: Some(3),
        ..Default::default()
    }
}

pub fn batches(spec: WorkloadSpec) -> Vec<TickBatch> {
    let mut sim = Simulation::new(spec).unwrap();
    let mut out = vec![sim.initial()];
    out.extend(std::iter::from_fn(|| sim.next_tick()));
    out
}

pub fn config(mode: ClusterMode) -> ClusterConfig {
    ClusterConfig {
        mode,
        grid_n: 8,
        split: SplitConfig::new(6, 4).unwrap(),
        index_workers: 3,
        query_workers: 2,
        transport: TransportKind::Loopback,
        schedule: Schedule::Fifo,
        ..Default::default()
    }
}

/// Brute-force results after each tick, with the same expiry rule as the
/// cluster.
pub fn oracle(batches: &[TickBatch]) -> Vec<BTreeMap<QueryId, BTreeSet<ObjectId>>> {
    let mut ns = NaiveEngine::new();
    let mut out = Vec::new();
    for b in batches {
        ns.expire_queries(b.tick);
        let report = ns.on_objects_moved(&b.objects);
        assert!(report.errors.is_empty(), "{:?}", report.errors);
        for q in &b.new_queries {
            if q.t_end > b.tick {
                ns.register_query(q.id, q.circle, q.t_end).unwrap();
            }
        }
        for (q, c) in &b.moved_queries {
            if ns.circle(*q).is_some() {
                ns.on_query_moved(*q, *c).unwrap();
            }
        }
        let ids: Vec<QueryId> = ns.query_ids().collect();
        out.push(ids.into_iter().map(|q| (q, ns.result(q).unwrap().clone())).collect());
    }
    out
}

/// Runs every batch and returns the per-tick reports and results.
pub fn run(cfg: ClusterConfig, batches: &[TickBatch]) -> (Vec<TickReport>, Vec<BTreeMap<QueryId, BTreeSet<ObjectId>>>) {
    let mut cluster = Cluster::new(cfg).unwrap();
    let mut reports = Vec::new();
    let mut results = Vec::new();
    for b in batches {
        let r = cluster.run_tick(b).unwrap();
        assert!(r.errors.is_empty(), "tick {}: {:?}", b.tick, r.errors);
        reports.push(r);
        results.push(cluster.results());
    }
    (reports, results)
}

pub fn assert_same(got: &[BTreeMap<QueryId, BTreeSet<ObjectId>>], want: &[BTreeMap<QueryId, BTreeSet<ObjectId>>]) {
    assert_eq!(got.len(), want.len());
    for (tick, (g, w)) in got.iter().zip(want).enumerate() {
        assert_eq!(g.keys().collect::<Vec<_>>(), w.keys().collect::<Vec<_>>(), "live queries at tick {tick}");
        for (q, objs) in w {
            assert_eq!(&g[q], objs, "result of {q} at tick {tick}");
        }
    }
}
