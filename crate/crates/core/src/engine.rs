//! Single-process range query engine: a grid of cells plus the states of
//! the registered queries. Queries are decomposed into per-cell searches and
//! their results are then patched as objects and queries move.

use crate::cell::{Cell, CellConfig, CellError, Change, ObjectDelta};
use crate::geometry::{classify, Circle, Coverage, Point, Rect};
use crate::grid::{Grid, GridError, DEFAULT_GRID_N};
use crate::ids::{CellId, ObjectId, QueryId, Tick};
use crate::mtree::{Region, SearchStats, SplitConfig};
use crate::query::{QueryError, QueryMoveDelta, QueryState};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum EngineError {
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Cell(#[from] CellError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("query {0} is already registered")]
    DuplicateQuery(QueryId),
    #[error("query {0} is not registered")]
    UnknownQuery(QueryId),
    #[error("object {0} is not known")]
    UnknownObject(ObjectId),
    #[error("object {0} is already known")]
    DuplicateObject(ObjectId),
    #[error("query {0} has a non-finite or non-positive circle")]
    InvalidCircle(QueryId),
}

/// One object report: `old` is absent for a new object, `new` for one that
/// leaves the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectUpdate {
    pub id: ObjectId,
    pub old: Option<Point>,
    pub new: Option<Point>,
}

impl ObjectUpdate {
    pub fn insert(id: ObjectId, at: Point) -> Self {
        ObjectUpdate { id, old: None, new: Some(at) }
    }

    pub fn moved(id: ObjectId, from: Point, to: Point) -> Self {
        ObjectUpdate {
            id,
            old: Some(from),
            new: Some(to),
        }
    }

    pub fn remove(id: ObjectId, from: Point) -> Self {
        ObjectUpdate {
            id,
            old: Some(from),
            new: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IndexMode {
    /// Grid plus per-cell trees.
    Drqa,
    /// Grid only: partially covered cells are scanned object by object.
    GridOnly,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineConfig {
    pub grid_n: u32,
    pub domain: Rect,
    pub split: SplitConfig,
    pub mode: IndexMode,
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig {
            grid_n: DEFAULT_GRID_N,
            domain: Rect::unit(),
            split: SplitConfig::default(),
            mode: IndexMode::Drqa,
        }
    }
}

/// Outcome of a batch of object updates. Failed items are skipped; the rest
/// of the batch is still applied.
#[derive(Debug, Default)]
pub struct BatchReport {
    pub applied: usize,
    pub changes: usize,
    pub errors: Vec<(usize, EngineError)>,
}

#[derive(Debug, Clone)]
pub struct Engine {
    grid: Grid,
    cells: Vec<Cell>,
    queries: BTreeMap<QueryId, QueryState>,
    stats: SearchStats,
}

impl Engine {
    pub fn new(cfg: EngineConfig) -> Result<Self, EngineError> {
        let grid = Grid::new(cfg.grid_n, cfg.domain)?;
        let cell_cfg = CellConfig {
            split: cfg.split,
            trees: cfg.mode == IndexMode::Drqa,
        };
        let cells = grid
            .cells()
            .map(|id| Cell::new(id, grid.cell_bounds(id), cfg.domain, cell_cfg))
            .collect();
        Ok(Engine {
            grid,
            cells,
            queries: BTreeMap::new(),
            stats: SearchStats::default(),
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cell(&self, id: CellId) -> &Cell {
        &self.cells[id.linear(self.grid.n())]
    }

    fn cell_mut(&mut self, id: CellId) -> &mut Cell {
        let n = self.grid.n();
        &mut self.cells[id.linear(n)]
    }

    pub fn cells(&self) -> &[Cell] {
        &self.cells
    }

    pub fn object_count(&self) -> usize {
        self.cells.iter().map(Cell::len).sum()
    }

    pub fn query(&self, q: QueryId) -> Option<&QueryState> {
        self.queries.get(&q)
    }

    pub fn queries(&self) -> impl Iterator<Item = &QueryState> {
        self.queries.values()
    }

    pub fn result(&self, q: QueryId) -> Option<BTreeSet<ObjectId>> {
        self.queries.get(&q).map(QueryState::result)
    }

    /// Work done by every search and maintenance step so far.
    pub fn stats(&self) -> SearchStats {
        let mut s = SearchStats::default();
        for c in &self.cells {
            s.add(c.stats());
        }
        s
    }

    /// Work done by query searches only: initial searches and the
    /// difference searches of moved queries.
    pub fn search_stats(&self) -> SearchStats {
        self.stats
    }

    /// Registers a query and runs its initial search. Returns the work done
    /// by that search.
    pub fn register_query(
        &mut self,
        id: QueryId,
        circle: Circle,
        t_start: Tick,
        t_end: Tick,
    ) -> Result<SearchStats, EngineError> {
        if self.queries.contains_key(&id) {
            return Err(EngineError::DuplicateQuery(id));
        }
        if Circle::try_new(circle.center, circle.radius).is_none() {
            return Err(EngineError::InvalidCircle(id));
        }
        let gr = self.grid.candidate_cells(&circle);
        let mut state = QueryState::new(id, circle, t_start, t_end, gr.clone());
        let mut stats = SearchStats::default();
        for (cells, class) in [(&gr.full, Coverage::Full), (&gr.partial, Coverage::Partial)] {
            for &cell_id in cells {
                let cell = self.cell_mut(cell_id);
                cell.apply_query_transition(id, Coverage::Disjoint, class, &circle)?;
                let found = search_cell(cell, id, &circle, class, &mut stats);
                state.accept_partial(cell_id, found)?;
            }
        }
        debug_assert!(state.is_ready());
        self.queries.insert(id, state);
        self.stats.add(&stats);
        Ok(stats)
    }

    /// Applies a batch of object updates and patches every affected result.
    pub fn on_objects_moved(&mut self, updates: &[ObjectUpdate]) -> BatchReport {
        let mut report = BatchReport::default();
        for (i, u) in updates.iter().enumerate() {
            match self.apply_object_update(u) {
                Ok(deltas) => {
                    report.applied += 1;
                    for d in deltas {
                        report.changes += self.apply_delta(&d);
                    }
                }
                Err(e) => report.errors.push((i, e)),
            }
        }
        report
    }

    fn apply_object_update(&mut self, u: &ObjectUpdate) -> Result<Vec<ObjectDelta>, EngineError> {
        let from = u.old.map(|p| self.grid.locate_cell(&p)).transpose()?;
        let to = u.new.map(|p| self.grid.locate_cell(&p)).transpose()?;
        if let Some(c) = from {
            if self.cell(c).position_of(u.id).is_none() {
                return Err(CellError::InconsistentUpdate { obj: u.id, cell: c }.into());
            }
        }
        if let Some(c) = to.filter(|c| Some(*c) != from) {
            if self.cell(c).position_of(u.id).is_some() {
                return Err(CellError::DuplicateObject { obj: u.id, cell: c }.into());
            }
        }
        let mut deltas = Vec::with_capacity(2);
        match (from, to) {
            (Some(a), Some(b)) if a == b => {
                deltas.push(self.cell_mut(a).apply_object_update(u.id, u.old, u.new)?);
            }
            _ => {
                if let Some(a) = from {
                    deltas.push(self.cell_mut(a).apply_object_update(u.id, u.old, None)?);
                }
                if let Some(b) = to {
                    deltas.push(self.cell_mut(b).apply_object_update(u.id, None, u.new)?);
                }
            }
        }
        Ok(deltas)
    }

    fn apply_delta(&mut self, d: &ObjectDelta) -> usize {
        let mut n = 0;
        for (q, o, ch) in &d.items {
            if let Some(state) = self.queries.get_mut(q) {
                n += usize::from(state.apply(d.cell, *o, *ch));
            }
        }
        n
    }

    /// Moves query `id` to `new_circle` and patches its result. Only cells
    /// the query enters are searched from scratch; cells it keeps touching
    /// are searched for the difference between the two circles.
    pub fn on_query_moved(&mut self, id: QueryId, new_circle: Circle) -> Result<QueryMoveDelta, EngineError> {
        if Circle::try_new(new_circle.center, new_circle.radius).is_none() {
            return Err(EngineError::InvalidCircle(id));
        }
        let mut state = self.queries.remove(&id).ok_or(EngineError::UnknownQuery(id))?;
        let old_circle = state.circle;
        let gr_l = state.gr.clone();
        let gr_c = self.grid.candidate_cells(&new_circle);
        let mut delta = QueryMoveDelta::default();
        let mut stats = SearchStats::default();

        for cell_id in gr_l.cells() {
            if !gr_c.contains(&cell_id) {
                delta.removals.extend(state.clear_cell(cell_id));
                let old_class = gr_l.class_of(&cell_id);
                self.cell_mut(cell_id)
                    .apply_query_transition(id, old_class, Coverage::Disjoint, &new_circle)?;
            }
        }
        state.gr = gr_c.clone();
        state.circle = new_circle;
        for cell_id in gr_c.cells() {
            let new_class = gr_c.class_of(&cell_id);
            let old_class = gr_l.class_of(&cell_id);
            let cell = self.cell_mut(cell_id);
            if old_class == Coverage::Disjoint {
                cell.apply_query_transition(id, Coverage::Disjoint, new_class, &new_circle)?;
                state.expect(cell_id);
                let found = search_cell(cell, id, &new_circle, new_class, &mut stats);
                for o in &found {
                    if !state.contains(*o) {
                        delta.additions.insert(*o);
                    }
                }
                state.accept_partial(cell_id, found)?;
                continue;
            }
            let (rem, add) = match (old_class, new_class) {
                (Coverage::Full, Coverage::Full) => (Vec::new(), Vec::new()),
                (Coverage::Partial, Coverage::Full) => {
                    cell.search_difference(Region::Circle(&old_circle), Region::Everything, &mut stats)
                }
                (Coverage::Full, Coverage::Partial) => {
                    cell.search_difference(Region::Everything, Region::Circle(&new_circle), &mut stats)
                }
                _ => cell.search_difference(
                    Region::Circle(&old_circle),
                    Region::Circle(&new_circle),
                    &mut stats,
                ),
            };
            cell.apply_query_transition(id, old_class, new_class, &new_circle)?;
            for o in rem {
                state.apply(cell_id, o, Change::Leave);
                if !state.contains(o) {
                    delta.removals.insert(o);
                }
            }
            for o in add {
                let fresh = !state.contains(o);
                state.apply(cell_id, o, Change::Enter);
                if fresh {
                    delta.additions.insert(o);
                }
            }
        }
        // An object can only sit in one cell, so nothing is both removed
        // and added; keep the sets disjoint regardless.
        let both: Vec<ObjectId> = delta.removals.intersection(&delta.additions).copied().collect();
        for o in both {
            delta.removals.remove(&o);
            delta.additions.remove(&o);
        }
        self.stats.add(&stats);
        self.queries.insert(id, state);
        Ok(delta)
    }

    /// Unregisters `id` from every cell. Unknown ids are ignored.
    pub fn remove_query(&mut self, id: QueryId) -> bool {
        let Some(state) = self.queries.remove(&id) else {
            return false;
        };
        for cell_id in state.gr.cells() {
            self.cell_mut(cell_id).remove_query(id);
        }
        true
    }

    /// Removes every query with `t_end <= now`; returns their ids.
    pub fn expire_queries(&mut self, now: Tick) -> Vec<QueryId> {
        let expired: Vec<QueryId> = self
            .queries
            .values()
            .filter(|q| q.t_end <= now)
            .map(|q| q.id)
            .collect();
        // grouped by cell so each cell drops its expired queries in one go
        let mut by_cell: BTreeMap<CellId, Vec<QueryId>> = BTreeMap::new();
        for q in &expired {
            if let Some(state) = self.queries.remove(q) {
                for cell in state.gr.cells() {
                    by_cell.entry(cell).or_default().push(*q);
                }
            }
        }
        for (cell, qs) in by_cell {
            self.cell_mut(cell).remove_queries(&qs);
        }
        expired
    }

    /// Audits every cell and the agreement between query states and cell
    /// lists. Scans all cells per query; meant for tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        for c in &self.cells {
            c.check_invariants()?;
        }
        for q in self.queries.values() {
            for c in &self.cells {
                let want = classify(&q.circle, c.bounds());
                if c.class_of(q.id) != want || q.gr.class_of(&c.id()) != want {
                    return Err(format!("{} classifies {want:?} against {} but lists disagree", q.id, c.id()));
                }
            }
        }
        Ok(())
    }
}

fn search_cell(cell: &mut Cell, q: QueryId, c: &Circle, class: Coverage, stats: &mut SearchStats) -> Vec<ObjectId> {
    match class {
        Coverage::Full => cell.search_full(),
        Coverage::Partial => cell.search_partial(q, c, stats),
        Coverage::Disjoint => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn engine(n: u32, alpha: usize, m: usize) -> Engine {
        Engine::new(EngineConfig {
            grid_n: n,
            split: SplitConfig::new(alpha, m).unwrap(),
            ..EngineConfig::default()
        })
        .unwrap()
    }

    fn brute(objects: &BTreeMap<ObjectId, Point>, c: &Circle) -> BTreeSet<ObjectId> {
        objects.iter().filter(|(_, p)| c.contains(p)).map(|(o, _)| *o).collect()
    }

    fn random_point(rng: &mut ChaCha8Rng) -> Point {
        Point::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0))
    }

    #[test]
    fn empty_query_and_zero_objects() {
        let mut e = engine(10, 4, 4);
        e.register_query(QueryId(1), Circle::new(Point::new(0.5, 0.5), 0.2), 0, 10).unwrap();
        assert_eq!(e.result(QueryId(1)).unwrap(), BTreeSet::new());
        assert!(e.query(QueryId(1)).unwrap().is_ready());
        assert_eq!(
            e.register_query(QueryId(1), Circle::new(Point::new(0.5, 0.5), 0.2), 0, 10),
            Err(EngineError::DuplicateQuery(QueryId(1)))
        );
    }

    #[test]
    fn circle_inside_one_cell_matches_that_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut e = engine(4, 5, 4);
        let mut objects = BTreeMap::new();
        let mut batch = Vec::new();
        for i in 0..400 {
            let p = random_point(&mut rng);
            objects.insert(ObjectId(i), p);
            batch.push(ObjectUpdate::insert(ObjectId(i), p));
        }
        assert!(e.on_objects_moved(&batch).errors.is_empty());
        let c = Circle::new(Point::new(0.125, 0.125), 0.1);
        e.register_query(QueryId(3), c, 0, 5).unwrap();
        let gr = &e.query(QueryId(3)).unwrap().gr;
        assert_eq!(gr.len(), 1);
        let tree = e.cell(CellId::new(0, 0)).tree().unwrap();
        let want: BTreeSet<_> = tree.search_range(&c, &mut SearchStats::default()).into_iter().collect();
        assert_eq!(e.result(QueryId(3)).unwrap(), want);
        assert_eq!(want, brute(&objects, &c));
    }

    #[test]
    fn object_crossing_into_circle_is_added() {
        let mut e = engine(10, 4, 4);
        e.on_objects_moved(&[ObjectUpdate::insert(ObjectId(1), Point::new(0.05, 0.05))]);
        e.register_query(QueryId(1), Circle::new(Point::new(0.5, 0.5), 0.1), 0, 10).unwrap();
        let r = e.on_objects_moved(&[ObjectUpdate::moved(ObjectId(1), Point::new(0.05, 0.05), Point::new(0.52, 0.5))]);
        assert_eq!(r.changes, 1);
        assert_eq!(e.result(QueryId(1)).unwrap(), [ObjectId(1)].into());
    }

    #[test]
    fn batch_errors_do_not_abort() {
        let mut e = engine(10, 4, 4);
        let r = e.on_objects_moved(&[
            ObjectUpdate::moved(ObjectId(1), Point::new(0.1, 0.1), Point::new(0.2, 0.2)),
            ObjectUpdate::insert(ObjectId(2), Point::new(0.3, 0.3)),
            ObjectUpdate::insert(ObjectId(3), Point::new(1.5, 0.3)),
        ]);
        assert_eq!(r.applied, 1);
        assert_eq!(r.errors.len(), 2);
        assert!(matches!(
            r.errors[0].1,
            EngineError::Cell(CellError::InconsistentUpdate { .. })
        ));
        assert!(matches!(r.errors[1].1, EngineError::Grid(GridError::OutOfDomain(_))));
        assert_eq!(e.object_count(), 1);
    }

    #[test]
    fn identity_move_is_empty_and_far_move_swaps_results() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut e = engine(10, 5, 4);
        let mut objects = BTreeMap::new();
        let batch: Vec<_> = (0..2000)
            .map(|i| {
                let p = random_point(&mut rng);
                objects.insert(ObjectId(i), p);
                ObjectUpdate::insert(ObjectId(i), p)
            })
            .collect();
        e.on_objects_moved(&batch);
        let c = Circle::new(Point::new(0.2, 0.2), 0.12);
        e.register_query(QueryId(1), c, 0, 10).unwrap();
        assert!(e.on_query_moved(QueryId(1), c).unwrap().is_empty());

        let far = Circle::new(Point::new(0.8, 0.75), 0.12);
        let d = e.on_query_moved(QueryId(1), far).unwrap();
        assert_eq!(d.removals, brute(&objects, &c));
        assert_eq!(d.additions, brute(&objects, &far));
        assert_eq!(e.result(QueryId(1)).unwrap(), brute(&objects, &far));
        e.check_invariants().unwrap();
    }

    #[test]
    fn small_translation_inside_a_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut e = engine(2, 5, 4);
        let mut objects = BTreeMap::new();
        let batch: Vec<_> = (0..1500)
            .map(|i| {
                let p = random_point(&mut rng);
                objects.insert(ObjectId(i), p);
                ObjectUpdate::insert(ObjectId(i), p)
            })
            .collect();
        e.on_objects_moved(&batch);
        let mut c = Circle::new(Point::new(0.2, 0.25), 0.1);
        e.register_query(QueryId(1), c, 0, 10).unwrap();
        for _ in 0..20 {
            let before = e.result(QueryId(1)).unwrap();
            c = Circle::new(Point::new(c.center.x + 0.003, c.center.y + 0.002), 0.1);
            let d = e.on_query_moved(QueryId(1), c).unwrap();
            assert!(d.removals.is_subset(&before));
            assert!(d.additions.is_disjoint(&before));
            assert_eq!(e.result(QueryId(1)).unwrap(), brute(&objects, &c));
        }
    }

    #[test]
    fn expiry_is_complete_and_idempotent() {
        let mut e = engine(10, 4, 4);
        assert!(e.expire_queries(5).is_empty());
        e.register_query(QueryId(1), Circle::new(Point::new(0.5, 0.5), 0.3), 0, 3).unwrap();
        e.register_query(QueryId(2), Circle::new(Point::new(0.5, 0.5), 0.3), 0, 9).unwrap();
        assert_eq!(e.expire_queries(3), vec![QueryId(1)]);
        assert!(e.expire_queries(3).is_empty());
        for c in e.cells() {
            assert_eq!(c.class_of(QueryId(1)), Coverage::Disjoint);
            assert!(c.tree().is_none_or(|t| t.query_circle(QueryId(1)).is_none()));
        }
        e.check_invariants().unwrap();
    }

    #[test]
    fn incremental_matches_recompute_under_random_mix() {
        for mode in [IndexMode::Drqa, IndexMode::GridOnly] {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut e = Engine::new(EngineConfig {
                grid_n: 8,
                split: SplitConfig::new(6, 4).unwrap(),
                mode,
                ..EngineConfig::default()
            })
            .unwrap();
            let mut objects = BTreeMap::new();
            let mut next_q = 0u64;
            for tick in 0..60u64 {
                let mut batch = Vec::new();
                for _ in 0..60 {
                    let id = ObjectId(rng.gen_range(0..600));
                    let u = match objects.get(&id).copied() {
                        None => ObjectUpdate::insert(id, random_point(&mut rng)),
                        Some(p) if rng.gen_bool(0.05) => ObjectUpdate::remove(id, p),
                        Some(p) => {
                            let q = Point::new(
                                (p.x + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0),
                                (p.y + rng.gen_range(-0.05..0.05)).clamp(0.0, 1.0),
                            );
                            ObjectUpdate::moved(id, p, q)
                        }
                    };
                    if batch.iter().any(|b: &ObjectUpdate| b.id == id) {
                        continue;
                    }
                    match u.new {
                        Some(p) => objects.insert(id, p),
                        None => objects.remove(&id),
                    };
                    batch.push(u);
                }
                assert!(e.on_objects_moved(&batch).errors.is_empty());
                for _ in 0..2 {
                    let c = Circle::new(random_point(&mut rng), rng.gen_range(0.01..0.3));
                    e.register_query(QueryId(next_q), c, tick, tick + rng.gen_range(1..20)).unwrap();
                    next_q += 1;
                }
                let ids: Vec<QueryId> = e.queries().map(|q| q.id).collect();
                for q in ids {
                    if rng.gen_bool(0.5) {
                        let old = e.query(q).unwrap().circle;
                        let c = Circle::new(
                            Point::new(old.center.x + rng.gen_range(-0.08..0.08), old.center.y + rng.gen_range(-0.08..0.08)),
                            (old.radius * rng.gen_range(0.8..1.25)).min(0.4),
                        );
                        let before = e.result(q).unwrap();
                        let d = e.on_query_moved(q, c).unwrap();
                        assert!(d.removals.is_subset(&before));
                        assert!(d.additions.is_disjoint(&before));
                    }
                }
                e.expire_queries(tick + 1);
                for q in e.queries() {
                    assert_eq!(q.result(), brute(&objects, &q.circle), "{mode:?} tick {tick} {}", q.id);
                }
                if tick % 10 == 0 {
                    e.check_invariants().unwrap();
                }
            }
        }
    }
}
