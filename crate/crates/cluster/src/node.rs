//! The three worker roles. Each is a plain state machine: a message in, a
//! list of addressed messages out. Transports decide how those travel.

use crate::layout::{Layout, LocalLayout};
use crate::message::{DeltaItem, Epoch, Message, MessageKind, DRIVER};
use crate::routing::{RoutingError, RoutingTable};
use ddi_core::cell::DetMap;
use ddi_core::grid::GridError;
use ddi_core::{
    CandidateSet, Cell, CellConfig, CellError, CellId, Change, Circle, Coverage, ObjectId, PartitionedResult,
    Point, QueryError, QueryId, Region, SearchStats, Tick, WorkerId,
};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NodeError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Routing(#[from] RoutingError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("{node} does not accept {kind:?} messages")]
    UnexpectedKind { node: WorkerId, kind: MessageKind },
    #[error("{node} does not hold part {part}")]
    NotOwned { node: WorkerId, part: CellId },
    #[error("{0} is already registered")]
    DuplicateQuery(QueryId),
    #[error("{0} is not registered")]
    UnknownQuery(QueryId),
    #[error("invalid circle for {0}")]
    InvalidCircle(QueryId),
}

/// Messages produced while handling one input, with their destinations.
pub type Outbox = Vec<(WorkerId, Message)>;

/// What the entrance remembers about a live query.
#[derive(Debug, Clone)]
struct Registration {
    circle: Circle,
    query_worker: WorkerId,
    epoch: Epoch,
    gr: CandidateSet,
}

/// Receives the driver's stream, partitions it over the index workers and
/// places queries on query workers.
#[derive(Debug)]
pub struct Entrance {
    id: WorkerId,
    layout: Layout,
    routing: RoutingTable,
    threshold: f64,
    index_workers: Vec<WorkerId>,
    query_workers: Vec<WorkerId>,
    queries: DetMap<QueryId, Registration>,
}

impl Entrance {
    pub fn new(
        id: WorkerId,
        layout: Layout,
        index_workers: Vec<WorkerId>,
        query_workers: Vec<WorkerId>,
        threshold: f64,
        window: usize,
    ) -> Self {
        Entrance {
            id,
            layout,
            routing: RoutingTable::new(query_workers.clone(), window),
            threshold,
            index_workers,
            query_workers,
            queries: DetMap::default(),
        }
    }

    pub fn query_worker_of(&self, q: QueryId) -> Option<WorkerId> {
        self.queries.get(&q).map(|r| r.query_worker)
    }

    pub fn live_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn handle(&mut self, _from: WorkerId, msg: Message, out: &mut Outbox) -> Result<(), NodeError> {
        match msg {
            Message::ObjectUpdate { object, old, new } => {
                for (w, old, new) in self.layout.route_object(old, new)? {
                    out.push((w, Message::ObjectUpdate { object, old, new }));
                }
            }
            Message::QueryRegister { query, circle, t_end, .. } => {
                if self.queries.contains_key(&query) {
                    return Err(NodeError::DuplicateQuery(query));
                }
                check_circle(query, &circle)?;
                let gr = self.layout.parts(&circle);
                let qw = self.routing.route(query, &gr, self.threshold)?;
                let epoch = 1;
                out.push((
                    qw,
                    Message::QueryRegister {
                        query,
                        circle,
                        t_end,
                        epoch,
                        gr: gr.clone(),
                    },
                ));
                self.fan_out_searches(query, qw, epoch, &circle, &CandidateSet::default(), &gr, out);
                self.queries.insert(
                    query,
                    Registration {
                        circle,
                        query_worker: qw,
                        epoch,
                        gr,
                    },
                );
            }
            Message::QueryMove { query, circle, .. } => {
                check_circle(query, &circle)?;
                let mut reg = self.queries.remove(&query).ok_or(NodeError::UnknownQuery(query))?;
                let gr = self.layout.parts(&circle);
                reg.epoch += 1;
                out.push((
                    reg.query_worker,
                    Message::QueryMove {
                        query,
                        circle,
                        epoch: reg.epoch,
                        gr: gr.clone(),
                    },
                ));
                self.fan_out_searches(query, reg.query_worker, reg.epoch, &circle, &reg.gr, &gr, out);
                reg.circle = circle;
                reg.gr = gr;
                self.queries.insert(query, reg);
            }
            Message::QueryExpire { query } => {
                // Expiring an unknown query is a no-op so the driver may
                // expire eagerly.
                let Some(reg) = self.queries.remove(&query) else {
                    return Ok(());
                };
                self.routing.remove(query);
                let owners: BTreeSet<WorkerId> = reg.gr.cells().into_iter().map(|p| self.layout.owner(p)).collect();
                for w in owners {
                    out.push((w, Message::QueryExpire { query }));
                }
                out.push((reg.query_worker, Message::QueryExpire { query }));
            }
            Message::TickBarrier { tick } => {
                for w in self.index_workers.iter().chain(&self.query_workers) {
                    out.push((*w, Message::TickBarrier { tick }));
                }
            }
            other => {
                return Err(NodeError::UnexpectedKind {
                    node: self.id,
                    kind: other.kind(),
                })
            }
        }
        Ok(())
    }

    /// One cell search per part in `before ∪ after`, including parts fully
    /// covered both times, so the query worker hears from every part once.
    #[allow(clippy::too_many_arguments)]
    fn fan_out_searches(
        &self,
        query: QueryId,
        qw: WorkerId,
        epoch: Epoch,
        circle: &Circle,
        before: &CandidateSet,
        after: &CandidateSet,
        out: &mut Outbox,
    ) {
        let mut parts = before.cells();
        parts.extend(after.cells());
        for part in parts {
            out.push((
                self.layout.owner(part),
                Message::CellSearch {
                    query,
                    query_worker: qw,
                    part,
                    epoch,
                    circle: *circle,
                    old_class: before.class_of(&part),
                    new_class: after.class_of(&part),
                },
            ));
        }
    }
}

fn check_circle(q: QueryId, c: &Circle) -> Result<(), NodeError> {
    Circle::try_new(c.center, c.radius)
        .map(|_| ())
        .ok_or(NodeError::InvalidCircle(q))
}

#[derive(Debug, Clone)]
struct LocalQuery {
    query_worker: WorkerId,
    epoch: Epoch,
    parts: BTreeSet<CellId>,
}

/// Holds a set of parts with their objects and query lists.
#[derive(Debug)]
pub struct IndexWorker {
    id: WorkerId,
    layout: LocalLayout,
    cells: BTreeMap<CellId, Cell>,
    queries: DetMap<QueryId, LocalQuery>,
    query_workers: Vec<WorkerId>,
    objects_processed: u64,
    stats: SearchStats,
}

impl IndexWorker {
    pub fn new(id: WorkerId, layout: LocalLayout, cfg: CellConfig, query_workers: Vec<WorkerId>) -> Self {
        let cells = match &layout {
            LocalLayout::Grid { grid, cells } => cells
                .iter()
                .map(|c| (*c, Cell::new(*c, grid.cell_bounds(*c), *grid.domain(), cfg)))
                .collect(),
            LocalLayout::Replica { domain, part } => [(*part, Cell::new(*part, *domain, *domain, cfg))].into(),
        };
        IndexWorker {
            id,
            layout,
            cells,
            queries: DetMap::default(),
            query_workers,
            objects_processed: 0,
            stats: SearchStats::default(),
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn cells(&self) -> impl Iterator<Item = &Cell> {
        self.cells.values()
    }

    pub fn object_count(&self) -> usize {
        self.cells.values().map(Cell::len).sum()
    }

    /// Object updates applied since creation.
    pub fn objects_processed(&self) -> u64 {
        self.objects_processed
    }

    /// Work done by query searches since creation.
    pub fn stats(&self) -> &SearchStats {
        &self.stats
    }

    fn part_of(&self, p: &Point) -> Result<CellId, NodeError> {
        let part = match &self.layout {
            LocalLayout::Grid { grid, .. } => grid.locate_cell(p)?,
            LocalLayout::Replica { domain, part } => {
                if !domain.contains_closed(p) {
                    return Err(GridError::OutOfDomain(*p).into());
                }
                *part
            }
        };
        if !self.cells.contains_key(&part) {
            return Err(NodeError::NotOwned { node: self.id, part });
        }
        Ok(part)
    }

    fn cell_mut(&mut self, part: CellId) -> Result<&mut Cell, NodeError> {
        let id = self.id;
        self.cells.get_mut(&part).ok_or(NodeError::NotOwned { node: id, part })
    }

    pub fn handle(&mut self, _from: WorkerId, msg: Message, out: &mut Outbox) -> Result<(), NodeError> {
        match msg {
            Message::ObjectUpdate { object, old, new } => self.on_object(object, old, new, out),
            Message::CellSearch {
                query,
                query_worker,
                part,
                epoch,
                circle,
                old_class,
                new_class,
            } => self.on_search(query, query_worker, part, epoch, &circle, old_class, new_class, out),
            Message::QueryExpire { query } => {
                if let Some(local) = self.queries.remove(&query) {
                    for part in local.parts {
                        if let Some(cell) = self.cells.get_mut(&part) {
                            cell.remove_query(query);
                        }
                    }
                }
                Ok(())
            }
            Message::TickBarrier { tick } => {
                for w in &self.query_workers {
                    out.push((*w, Message::TickBarrier { tick }));
                }
                Ok(())
            }
            other => Err(NodeError::UnexpectedKind {
                node: self.id,
                kind: other.kind(),
            }),
        }
    }

    fn on_object(
        &mut self,
        object: ObjectId,
        old: Option<Point>,
        new: Option<Point>,
        out: &mut Outbox,
    ) -> Result<(), NodeError> {
        let from = old.map(|p| self.part_of(&p)).transpose()?;
        let to = new.map(|p| self.part_of(&p)).transpose()?;
        let mut deltas = Vec::with_capacity(2);
        match (from, to) {
            (Some(a), Some(b)) if a == b => deltas.push(self.cell_mut(a)?.apply_object_update(object, old, new)?),
            _ => {
                if let Some(a) = from {
                    deltas.push(self.cell_mut(a)?.apply_object_update(object, old, None)?);
                }
                if let Some(b) = to {
                    deltas.push(self.cell_mut(b)?.apply_object_update(object, None, new)?);
                }
            }
        }
        self.objects_processed += 1;
        for d in deltas {
            let mut by_worker: BTreeMap<WorkerId, Vec<DeltaItem>> = BTreeMap::new();
            for (query, object, change) in d.items {
                let local = self.queries.get(&query).expect("listed queries are registered");
                by_worker.entry(local.query_worker).or_default().push(DeltaItem {
                    query,
                    epoch: local.epoch,
                    object,
                    change,
                });
            }
            for (w, items) in by_worker {
                out.push((w, Message::ResultDelta { part: d.cell, items }));
            }
        }
        Ok(())
    }

    #[allow(clippy::too_many_arguments)]
    fn on_search(
        &mut self,
        query: QueryId,
        query_worker: WorkerId,
        part: CellId,
        epoch: Epoch,
        circle: &Circle,
        old_class: Coverage,
        new_class: Coverage,
        out: &mut Outbox,
    ) -> Result<(), NodeError> {
        let mut stats = SearchStats::default();
        let cell = self.cell_mut(part)?;
        let (clear, removed, added) = if old_class == Coverage::Disjoint {
            cell.apply_query_transition(query, old_class, new_class, circle)?;
            let found = match new_class {
                Coverage::Full => cell.search_full(),
                Coverage::Partial => cell.search_partial(query, circle, &mut stats),
                Coverage::Disjoint => Vec::new(),
            };
            (true, Vec::new(), found)
        } else if new_class == Coverage::Disjoint {
            cell.apply_query_transition(query, old_class, new_class, circle)?;
            (true, Vec::new(), Vec::new())
        } else {
            let old_circle = *cell.circle_of(query).ok_or(CellError::StateMismatch {
                query,
                cell: part,
                expected: old_class,
            })?;
            let region = |class, c| match class {
                Coverage::Full => Region::Everything,
                _ => Region::Circle(c),
            };
            let (removed, added) = if old_class == Coverage::Full && new_class == Coverage::Full {
                (Vec::new(), Vec::new())
            } else {
                cell.search_difference(region(old_class, &old_circle), region(new_class, circle), &mut stats)
            };
            cell.apply_query_transition(query, old_class, new_class, circle)?;
            (false, removed, added)
        };
        self.stats.add(&stats);

        let local = self.queries.entry(query).or_insert(LocalQuery {
            query_worker,
            epoch,
            parts: BTreeSet::new(),
        });
        local.query_worker = query_worker;
        local.epoch = local.epoch.max(epoch);
        if new_class == Coverage::Disjoint {
            local.parts.remove(&part);
            if local.parts.is_empty() {
                self.queries.remove(&query);
            }
        } else {
            local.parts.insert(part);
        }
        out.push((
            query_worker,
            Message::PartialResult {
                query,
                part,
                epoch,
                clear,
                removed,
                added,
            },
        ));
        Ok(())
    }
}

/// A query as seen by its query worker.
#[derive(Debug, Clone)]
pub struct RemoteQuery {
    pub id: QueryId,
    pub circle: Circle,
    pub t_end: Tick,
    pub gr: CandidateSet,
    pub epoch: Epoch,
    result: PartitionedResult,
    pending: BTreeSet<(Epoch, CellId)>,
}

impl RemoteQuery {
    fn new(id: QueryId, circle: Circle, t_end: Tick, epoch: Epoch, gr: CandidateSet) -> Self {
        let pending = gr.cells().into_iter().map(|p| (epoch, p)).collect();
        RemoteQuery {
            id,
            circle,
            t_end,
            gr,
            epoch,
            result: PartitionedResult::default(),
            pending,
        }
    }

    fn moved(&mut self, circle: Circle, epoch: Epoch, gr: CandidateSet) {
        let mut parts = self.gr.cells();
        parts.extend(gr.cells());
        self.pending.extend(parts.into_iter().map(|p| (epoch, p)));
        self.circle = circle;
        self.epoch = epoch;
        self.gr = gr;
    }

    /// True once every search issued for the query has reported.
    pub fn is_ready(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn result(&self) -> BTreeSet<ObjectId> {
        self.result.to_set()
    }

    pub fn result_len(&self) -> usize {
        self.result.len()
    }

    /// Merges one partial result. Returns true when that completed the
    /// query.
    fn collect(
        &mut self,
        part: CellId,
        epoch: Epoch,
        clear: bool,
        removed: Vec<ObjectId>,
        added: Vec<ObjectId>,
    ) -> Result<bool, QueryError> {
        if !self.pending.remove(&(epoch, part)) {
            return Err(if self.gr.contains(&part) {
                QueryError::DuplicatePartial {
                    query: self.id,
                    cell: part,
                }
            } else {
                QueryError::UnexpectedCell {
                    query: self.id,
                    cell: part,
                }
            });
        }
        if clear {
            self.result.clear_part(part);
        }
        for o in removed {
            self.result.apply(part, o, Change::Leave);
        }
        for o in added {
            self.result.apply(part, o, Change::Enter);
        }
        Ok(self.pending.is_empty())
    }
}

/// A message that arrived before the control message it depends on.
#[derive(Debug, Clone)]
enum Held {
    Partial {
        part: CellId,
        epoch: Epoch,
        clear: bool,
        removed: Vec<ObjectId>,
        added: Vec<ObjectId>,
    },
    Delta {
        part: CellId,
        epoch: Epoch,
        object: ObjectId,
        change: Change,
    },
}

impl Held {
    fn epoch(&self) -> Epoch {
        match self {
            Held::Partial { epoch, .. } | Held::Delta { epoch, .. } => *epoch,
        }
    }
}

/// Keeps query results and merges what index workers report.
#[derive(Debug)]
pub struct QueryWorker {
    id: WorkerId,
    index_workers: usize,
    queries: BTreeMap<QueryId, RemoteQuery>,
    held: DetMap<QueryId, Vec<Held>>,
    expired: HashSet<QueryId>,
    barriers: BTreeMap<Tick, usize>,
    completed: u64,
}

impl QueryWorker {
    pub fn new(id: WorkerId, index_workers: usize) -> Self {
        QueryWorker {
            id,
            index_workers,
            queries: BTreeMap::new(),
            held: DetMap::default(),
            expired: HashSet::new(),
            barriers: BTreeMap::new(),
            completed: 0,
        }
    }

    pub fn id(&self) -> WorkerId {
        self.id
    }

    pub fn query(&self, q: QueryId) -> Option<&RemoteQuery> {
        self.queries.get(&q)
    }

    pub fn queries(&self) -> impl Iterator<Item = &RemoteQuery> {
        self.queries.values()
    }

    /// Messages waiting for their query's register or move.
    pub fn held_messages(&self) -> usize {
        self.held.values().map(Vec::len).sum()
    }

    /// Registrations and moves that became complete since creation.
    pub fn completed(&self) -> u64 {
        self.completed
    }

    pub fn handle(&mut self, _from: WorkerId, msg: Message, out: &mut Outbox) -> Result<(), NodeError> {
        match msg {
            Message::QueryRegister {
                query,
                circle,
                t_end,
                epoch,
                gr,
            } => {
                if self.queries.contains_key(&query) {
                    return Err(NodeError::DuplicateQuery(query));
                }
                self.expired.remove(&query);
                let q = RemoteQuery::new(query, circle, t_end, epoch, gr);
                if q.is_ready() {
                    self.completed += 1;
                }
                self.queries.insert(query, q);
                self.release(query)
            }
            Message::QueryMove {
                query,
                circle,
                epoch,
                gr,
            } => {
                let q = self.queries.get_mut(&query).ok_or(NodeError::UnknownQuery(query))?;
                q.moved(circle, epoch, gr);
                if q.is_ready() {
                    self.completed += 1;
                }
                self.release(query)
            }
            Message::PartialResult {
                query,
                part,
                epoch,
                clear,
                removed,
                added,
            } => self.accept(
                query,
                Held::Partial {
                    part,
                    epoch,
                    clear,
                    removed,
                    added,
                },
            ),
            Message::ResultDelta { part, items } => {
                for it in items {
                    self.accept(
                        it.query,
                        Held::Delta {
                            part,
                            epoch: it.epoch,
                            object: it.object,
                            change: it.change,
                        },
                    )?;
                }
                Ok(())
            }
            Message::QueryExpire { query } => {
                self.queries.remove(&query);
                self.held.remove(&query);
                self.expired.insert(query);
                Ok(())
            }
            Message::TickBarrier { tick } => {
                // One barrier from the entrance and one from every index
                // worker; per-edge FIFO then guarantees everything sent
                // before them has been handled.
                let seen = self.barriers.entry(tick).or_insert(0);
                *seen += 1;
                if *seen == 1 + self.index_workers {
                    self.barriers.remove(&tick);
                    out.push((DRIVER, Message::TickBarrier { tick }));
                }
                Ok(())
            }
            other => Err(NodeError::UnexpectedKind {
                node: self.id,
                kind: other.kind(),
            }),
        }
    }

    fn accept(&mut self, query: QueryId, msg: Held) -> Result<(), NodeError> {
        if self.expired.contains(&query) {
            return Ok(());
        }
        match self.queries.get_mut(&query) {
            Some(q) if msg.epoch() <= q.epoch => {
                if Self::apply(q, msg)? {
                    self.completed += 1;
                }
                Ok(())
            }
            _ => {
                self.held.entry(query).or_default().push(msg);
                Ok(())
            }
        }
    }

    fn apply(q: &mut RemoteQuery, msg: Held) -> Result<bool, NodeError> {
        Ok(match msg {
            Held::Partial {
                part,
                epoch,
                clear,
                removed,
                added,
            } => q.collect(part, epoch, clear, removed, added)?,
            Held::Delta {
                part, object, change, ..
            } => {
                q.result.apply(part, object, change);
                false
            }
        })
    }

    /// Replays held messages that the query's current epoch now covers, in
    /// arrival order.
    fn release(&mut self, query: QueryId) -> Result<(), NodeError> {
        let Some(held) = self.held.remove(&query) else {
            return Ok(());
        };
        let q = self.queries.get_mut(&query).expect("released after insert");
        let (ready, later): (Vec<Held>, Vec<Held>) = held.into_iter().partition(|m| m.epoch() <= q.epoch);
        if !later.is_empty() {
            self.held.insert(query, later);
        }
        for m in ready {
            if Self::apply(q, m)? {
                self.completed += 1;
            }
        }
        Ok(())
    }
}

/// Any of the three roles.
#[derive(Debug)]
pub enum Node {
    Entrance(Entrance),
    Index(IndexWorker),
    Query(QueryWorker),
}

impl Node {
    pub fn handle(&mut self, from: WorkerId, msg: Message, out: &mut Outbox) -> Result<(), NodeError> {
        match self {
            Node::Entrance(n) => n.handle(from, msg, out),
            Node::Index(n) => n.handle(from, msg, out),
            Node::Query(n) => n.handle(from, msg, out),
        }
    }
}
