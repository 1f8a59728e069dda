//! One interface over the engines under test, local or clustered.

use crate::experiment::{Backend, EngineKind};
use crate::BenchError;
use ddi_cluster::{Cluster, ClusterConfig};
use ddi_core::baselines::NaiveEngine;
use ddi_core::config::Config;
use ddi_core::workload::{QuerySpec, TickBatch};
use ddi_core::{Circle, Engine, EngineConfig, IndexMode, ObjectId, ObjectUpdate, QueryId, Rect, SplitConfig, Tick};
use std::collections::{BTreeMap, BTreeSet};

/// A continuous query engine driven tick by tick. Each tick calls
/// [`System::objects`] and then [`System::queries`].
pub trait System {
    /// Expires queries whose lifetime ended by `tick`, then applies the
    /// object updates.
    fn objects(&mut self, tick: Tick, updates: &[ObjectUpdate]) -> Result<(), BenchError>;
    /// Registers new queries and moves existing ones.
    fn queries(&mut self, tick: Tick, new: &[QuerySpec], moved: &[(QueryId, Circle)]) -> Result<(), BenchError>;
    fn results(&self) -> BTreeMap<QueryId, BTreeSet<ObjectId>>;
    /// Distance tests done by query searches so far.
    fn objects_examined(&self) -> u64;
    fn messages_sent(&self) -> u64;
}

/// Builds the engine for `kind` on `backend` with the given tree shape.
pub fn make_system(
    kind: EngineKind,
    backend: Backend,
    config: &Config,
    split: SplitConfig,
    domain: Rect,
) -> Result<Box<dyn System>, BenchError> {
    Ok(match (backend, kind) {
        (Backend::Local, EngineKind::Ns) => Box::new(NaiveEngine::new()),
        (Backend::Local, _) => Box::new(Engine::new(EngineConfig {
            grid_n: config.grid_n,
            domain,
            split,
            mode: if kind == EngineKind::Drqa {
                IndexMode::Drqa
            } else {
                IndexMode::GridOnly
            },
        })?),
        (Backend::Cluster, _) => {
            let cfg = ClusterConfig {
                split,
                domain,
                ..ClusterConfig::from_config(config, kind.cluster_mode())
            };
            Box::new(ClusterSystem {
                cluster: Cluster::new(cfg)?,
                messages: 0,
            })
        }
    })
}

fn check_batch(report: ddi_core::engine::BatchReport) -> Result<(), BenchError> {
    match report.errors.into_iter().next() {
        Some((i, e)) => Err(BenchError::Engine(format!("update {i}: {e}"))),
        None => Ok(()),
    }
}

impl System for Engine {
    fn objects(&mut self, tick: Tick, updates: &[ObjectUpdate]) -> Result<(), BenchError> {
        self.expire_queries(tick);
        check_batch(self.on_objects_moved(updates))
    }

    fn queries(&mut self, tick: Tick, new: &[QuerySpec], moved: &[(QueryId, Circle)]) -> Result<(), BenchError> {
        for q in new.iter().filter(|q| q.t_end > tick) {
            self.register_query(q.id, q.circle, tick, q.t_end)?;
        }
        for (q, c) in moved {
            if self.query(*q).is_some() {
                self.on_query_moved(*q, *c)?;
            }
        }
        Ok(())
    }

    fn results(&self) -> BTreeMap<QueryId, BTreeSet<ObjectId>> {
        self.queries().map(|q| (q.id, q.result())).collect()
    }

    fn objects_examined(&self) -> u64 {
        self.search_stats().objects_examined
    }

    fn messages_sent(&self) -> u64 {
        0
    }
}

impl System for NaiveEngine {
    fn objects(&mut self, tick: Tick, updates: &[ObjectUpdate]) -> Result<(), BenchError> {
        self.expire_queries(tick);
        check_batch(self.on_objects_moved(updates))
    }

    fn queries(&mut self, tick: Tick, new: &[QuerySpec], moved: &[(QueryId, Circle)]) -> Result<(), BenchError> {
        for q in new.iter().filter(|q| q.t_end > tick) {
            self.register_query(q.id, q.circle, q.t_end)?;
        }
        for (q, c) in moved {
            if self.circle(*q).is_some() {
                self.on_query_moved(*q, *c)?;
            }
        }
        Ok(())
    }

    fn results(&self) -> BTreeMap<QueryId, BTreeSet<ObjectId>> {
        self.query_ids().map(|q| (q, self.result(q).cloned().unwrap_or_default())).collect()
    }

    fn objects_examined(&self) -> u64 {
        self.search_stats().objects_examined
    }

    fn messages_sent(&self) -> u64 {
        0
    }
}

/// The cluster runs each half of a tick as its own barrier round so the
/// two halves can be timed separately.
pub struct ClusterSystem {
    cluster: Cluster,
    messages: u64,
}

impl ClusterSystem {
    fn run(&mut self, batch: &TickBatch) -> Result<(), BenchError> {
        let report = self.cluster.run_tick(batch)?;
        if let Some((w, e)) = report.errors.into_iter().next() {
            return Err(BenchError::Engine(format!("{w}: {e}")));
        }
        self.messages += report.messages.total();
        Ok(())
    }
}

impl System for ClusterSystem {
    fn objects(&mut self, tick: Tick, updates: &[ObjectUpdate]) -> Result<(), BenchError> {
        self.run(&TickBatch {
            tick,
            objects: updates.to_vec(),
            ..TickBatch::default()
        })
    }

    fn queries(&mut self, tick: Tick, new: &[QuerySpec], moved: &[(QueryId, Circle)]) -> Result<(), BenchError> {
        self.run(&TickBatch {
            tick,
            new_queries: new.to_vec(),
            moved_queries: moved.to_vec(),
            ..TickBatch::default()
        })
    }

    fn results(&self) -> BTreeMap<QueryId, BTreeSet<ObjectId>> {
        self.cluster.results()
    }

    fn objects_examined(&self) -> u64 {
        self.cluster.search_stats().objects_examined
    }

    fn messages_sent(&self) -> u64 {
        self.messages
    }
}
