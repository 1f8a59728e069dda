//! Driver side: builds the nodes, feeds tick batches and reads results.

use crate::layout::{ClusterMode, Layout};
use crate::message::{Message, ENTRANCE};
use crate::node::{Entrance, IndexWorker, Node, NodeError, QueryWorker};
use crate::routing::DEFAULT_RECENT_WINDOW;
use crate::socket::SocketNet;
use crate::transport::{Loopback, MessageCounts, Schedule, TransportError};
use ddi_core::config::{Config, TransportKind};
use ddi_core::grid::GridError;
use ddi_core::workload::TickBatch;
use ddi_core::{CellConfig, GlobalGridIndex, Grid, ObjectId, QueryId, Rect, SearchStats, SplitConfig, Tick, WorkerId};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, BTreeSet};
use std::time::Duration;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("invalid cluster configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("transport failure: {0}")]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub mode: ClusterMode,
    pub grid_n: u32,
    pub domain: Rect,
    pub split: SplitConfig,
    pub index_workers: u32,
    pub query_workers: u32,
    pub jaccard_threshold: f64,
    pub recent_window: usize,
    pub transport: TransportKind,
    pub schedule: Schedule,
    /// How long the socket transport waits for a tick to complete.
    pub timeout: Duration,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self::from_config(&Config::default(), ClusterMode::Drqa)
    }
}

impl ClusterConfig {
    pub fn from_config(cfg: &Config, mode: ClusterMode) -> Self {
        ClusterConfig {
            mode,
            grid_n: cfg.grid_n,
            domain: Rect::unit(),
            split: cfg.split,
            index_workers: cfg.index_workers,
            query_workers: cfg.query_workers,
            jaccard_threshold: cfg.jaccard_threshold,
            recent_window: DEFAULT_RECENT_WINDOW,
            transport: cfg.transport,
            schedule: Schedule::Fifo,
            timeout: Duration::from_secs(60),
        }
    }

    pub fn index_worker_ids(&self) -> Vec<WorkerId> {
        (0..self.index_workers).map(|k| WorkerId(2 + k)).collect()
    }

    pub fn query_worker_ids(&self) -> Vec<WorkerId> {
        (0..self.query_workers)
            .map(|k| WorkerId(2 + self.index_workers + k))
            .collect()
    }
}

/// What one tick cost and produced.
#[derive(Debug)]
pub struct TickReport {
    pub tick: Tick,
    /// Messages sent during the tick, barriers included.
    pub messages: MessageCounts,
    pub objects_processed: u64,
    pub queries_ready: usize,
    pub active_queries: usize,
    /// Digest of every query's result after the tick.
    pub result_hash: [u8; 32],
    /// Digest of the delivery order; loopback transport only.
    pub trace_hash: Option<[u8; 32]>,
    /// Errors raised by nodes while handling the tick's messages.
    pub errors: Vec<(WorkerId, NodeError)>,
}

enum Net {
    Loopback(Box<Loopback>),
    Socket(SocketNet),
}

impl Net {
    fn send(&mut self, to: WorkerId, m: Message) -> Result<(), TransportError> {
        match self {
            Net::Loopback(n) => n.send(crate::message::DRIVER, to, m),
            Net::Socket(n) => n.send(to, m),
        }
    }

    fn run_until_acked(&mut self, tick: Tick, want: usize) -> Result<(), TransportError> {
        match self {
            Net::Loopback(n) => n.run_until_acked(tick, want),
            Net::Socket(n) => n.run_until_acked(tick, want),
        }
    }

    fn with_node<R>(&self, id: WorkerId, f: impl FnOnce(&Node) -> R) -> Option<R> {
        match self {
            Net::Loopback(n) => n.node(id).map(f),
            Net::Socket(n) => n.with_node(id, f),
        }
    }

    fn counts(&self) -> MessageCounts {
        match self {
            Net::Loopback(n) => n.counts(),
            Net::Socket(n) => n.counts(),
        }
    }

    fn take_errors(&mut self) -> Vec<(WorkerId, NodeError)> {
        match self {
            Net::Loopback(n) => n.take_errors(),
            Net::Socket(n) => n.take_errors(),
        }
    }
}

/// A running cluster of one entrance, `index_workers` index workers and
/// `query_workers` query workers.
pub struct Cluster {
    cfg: ClusterConfig,
    net: Net,
    live: BTreeMap<QueryId, Tick>,
    processed: u64,
}

impl Cluster {
    pub fn new(cfg: ClusterConfig) -> Result<Self, ClusterError> {
        if cfg.index_workers == 0 || cfg.query_workers == 0 {
            return Err(ClusterError::Config("need at least one index and one query worker".into()));
        }
        if !(0.0..=1.0).contains(&cfg.jaccard_threshold) {
            return Err(ClusterError::Config(format!(
                "similarity threshold {} is outside [0, 1]",
                cfg.jaccard_threshold
            )));
        }
        let iws = cfg.index_worker_ids();
        let qws = cfg.query_worker_ids();
        let layout = match cfg.mode {
            ClusterMode::Drqa | ClusterMode::GridOnly => {
                Layout::Grid(GlobalGridIndex::new(Grid::new(cfg.grid_n, cfg.domain)?, &iws)?)
            }
            ClusterMode::Naive => Layout::Replica {
                domain: cfg.domain,
                workers: iws.clone(),
            },
        };
        let cell_cfg = CellConfig {
            split: cfg.split,
            trees: cfg.mode == ClusterMode::Drqa,
        };
        let mut nodes = BTreeMap::new();
        for w in &iws {
            let iw = IndexWorker::new(*w, layout.local(*w), cell_cfg, qws.clone());
            nodes.insert(*w, Node::Index(iw));
        }
        for w in &qws {
            nodes.insert(*w, Node::Query(QueryWorker::new(*w, iws.len())));
        }
        let entrance = Entrance::new(ENTRANCE, layout, iws, qws, cfg.jaccard_threshold, cfg.recent_window);
        nodes.insert(ENTRANCE, Node::Entrance(entrance));
        let net = match cfg.transport {
            TransportKind::Loopback => Net::Loopback(Box::new(Loopback::new(nodes, cfg.schedule))),
            TransportKind::Socket => Net::Socket(SocketNet::start(nodes, cfg.timeout)?),
        };
        Ok(Cluster {
            cfg,
            net,
            live: BTreeMap::new(),
            processed: 0,
        })
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.cfg
    }

    /// Runs one tick: expires queries whose lifetime ended, sends the
    /// batch, and waits until every query worker acknowledged the barrier.
    pub fn run_tick(&mut self, batch: &TickBatch) -> Result<TickReport, ClusterError> {
        let tick = batch.tick;
        let before = self.net.counts();
        let ended: Vec<QueryId> = self.live.iter().filter(|(_, e)| **e <= tick).map(|(q, _)| *q).collect();
        for q in ended {
            self.live.remove(&q);
            self.net.send(ENTRANCE, Message::QueryExpire { query: q })?;
        }
        for u in &batch.objects {
            self.net.send(
                ENTRANCE,
                Message::ObjectUpdate {
                    object: u.id,
                    old: u.old,
                    new: u.new,
                },
            )?;
        }
        for q in &batch.new_queries {
            if q.t_end <= tick {
                continue;
            }
            self.live.insert(q.id, q.t_end);
            self.net.send(
                ENTRANCE,
                Message::QueryRegister {
                    query: q.id,
                    circle: q.circle,
                    t_end: q.t_end,
                    epoch: 0,
                    gr: Default::default(),
                },
            )?;
        }
        for (q, circle) in &batch.moved_queries {
            if !self.live.contains_key(q) {
                continue;
            }
            self.net.send(
                ENTRANCE,
                Message::QueryMove {
                    query: *q,
                    circle: *circle,
                    epoch: 0,
                    gr: Default::default(),
                },
            )?;
        }
        self.net.send(ENTRANCE, Message::TickBarrier { tick })?;
        self.net.run_until_acked(tick, self.cfg.query_workers as usize)?;

        let processed = self.objects_processed();
        let results = self.results();
        let queries_ready = self.ready_queries();
        let report = TickReport {
            tick,
            messages: self.net.counts().since(&before),
            objects_processed: processed - self.processed,
            queries_ready,
            active_queries: results.len(),
            result_hash: hash_results(&results),
            trace_hash: match &self.net {
                Net::Loopback(n) => Some(n.trace_hash()),
                Net::Socket(_) => None,
            },
            errors: self.net.take_errors(),
        };
        self.processed = processed;
        Ok(report)
    }

    /// Object updates applied by all index workers since start.
    pub fn objects_processed(&self) -> u64 {
        self.cfg
            .index_worker_ids()
            .into_iter()
            .filter_map(|w| {
                self.net.with_node(w, |n| match n {
                    Node::Index(iw) => iw.objects_processed(),
                    _ => 0,
                })
            })
            .sum()
    }

    /// Query search work of all index workers since start.
    pub fn search_stats(&self) -> SearchStats {
        let mut total = SearchStats::default();
        for w in self.cfg.index_worker_ids() {
            self.net.with_node(w, |n| {
                if let Node::Index(iw) = n {
                    total.add(iw.stats());
                }
            });
        }
        total
    }

    /// Objects held by each index worker.
    pub fn objects_per_worker(&self) -> Vec<usize> {
        self.cfg
            .index_worker_ids()
            .into_iter()
            .filter_map(|w| {
                self.net.with_node(w, |n| match n {
                    Node::Index(iw) => iw.object_count(),
                    _ => 0,
                })
            })
            .collect()
    }

    /// Live queries per query worker.
    pub fn queries_per_worker(&self) -> Vec<usize> {
        self.each_query_worker(|qw| qw.queries().count())
    }

    fn each_query_worker<R>(&self, mut f: impl FnMut(&QueryWorker) -> R) -> Vec<R> {
        self.cfg
            .query_worker_ids()
            .into_iter()
            .filter_map(|w| {
                self.net.with_node(w, |n| match n {
                    Node::Query(qw) => Some(f(qw)),
                    _ => None,
                })?
            })
            .collect()
    }

    fn ready_queries(&self) -> usize {
        self.each_query_worker(|qw| qw.queries().filter(|q| q.is_ready()).count())
            .into_iter()
            .sum()
    }

    pub fn query_worker_of(&self, q: QueryId) -> Option<WorkerId> {
        self.net
            .with_node(ENTRANCE, |n| match n {
                Node::Entrance(e) => e.query_worker_of(q),
                _ => None,
            })
            .flatten()
    }

    pub fn result(&self, q: QueryId) -> Option<BTreeSet<ObjectId>> {
        self.each_query_worker(|qw| qw.query(q).map(|r| r.result()))
            .into_iter()
            .flatten()
            .next()
    }

    /// Every live query's result.
    pub fn results(&self) -> BTreeMap<QueryId, BTreeSet<ObjectId>> {
        let mut out = BTreeMap::new();
        for part in self.each_query_worker(|qw| qw.queries().map(|q| (q.id, q.result())).collect::<Vec<_>>()) {
            out.extend(part);
        }
        out
    }
}

/// SHA-256 over `(query, sorted objects)` in query order.
pub fn hash_results(results: &BTreeMap<QueryId, BTreeSet<ObjectId>>) -> [u8; 32] {
    let mut h = Sha256::new();
    for (q, objs) in results {
        h.update(q.0.to_le_bytes());
        h.update((objs.len() as u64).to_le_bytes());
        for o in objs {
            h.update(o.0.to_le_bytes());
        }
    }
    h.finalize().into()
}
