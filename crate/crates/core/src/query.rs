//! Result-side state of one continuous range query.

use crate::cell::{Change, DetMap, DetSet};
use crate::geometry::Circle;
use crate::grid::CandidateSet;
use crate::ids::{CellId, ObjectId, QueryId, Tick};
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueryError {
    #[error("partial result for {query} from cell {cell}, which is not a candidate cell")]
    UnexpectedCell { query: QueryId, cell: CellId },
    #[error("second partial result for {query} from cell {cell}")]
    DuplicatePartial { query: QueryId, cell: CellId },
}

/// Objects to drop from and add to a result after the query moved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryMoveDelta {
    pub removals: BTreeSet<ObjectId>,
    pub additions: BTreeSet<ObjectId>,
}

impl QueryMoveDelta {
    pub fn is_empty(&self) -> bool {
        self.removals.is_empty() && self.additions.is_empty()
    }
}

/// A result kept per reporting part (a cell, or a worker's replica). An
/// object is counted once per part that reports it, which keeps the union
/// right while an object's leave and enter from two parts arrive in either
/// order, and lets a part be dropped exactly.
#[derive(Debug, Clone, Default)]
pub struct PartitionedResult {
    parts: BTreeMap<CellId, DetSet<ObjectId>>,
    counts: DetMap<ObjectId, u32>,
}

impl PartitionedResult {
    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn contains(&self, obj: ObjectId) -> bool {
        self.counts.contains_key(&obj)
    }

    pub fn to_set(&self) -> BTreeSet<ObjectId> {
        self.counts.keys().copied().collect()
    }

    pub fn part(&self, part: CellId) -> Option<&DetSet<ObjectId>> {
        self.parts.get(&part)
    }

    /// Applies one membership change reported by `part`. Returns false when
    /// the change was a no-op (already present / already absent).
    pub fn apply(&mut self, part: CellId, obj: ObjectId, change: Change) -> bool {
        match change {
            Change::Enter => {
                if !self.parts.entry(part).or_default().insert(obj) {
                    return false;
                }
                *self.counts.entry(obj).or_insert(0) += 1;
                true
            }
            Change::Leave => {
                let Some(set) = self.parts.get_mut(&part) else {
                    return false;
                };
                if !set.remove(&obj) {
                    return false;
                }
                if set.is_empty() {
                    self.parts.remove(&part);
                }
                self.release(obj);
                true
            }
        }
    }

    /// Adds every object of `objs` to `part`, looking the part up once.
    fn enter_all(&mut self, part: CellId, objs: impl Iterator<Item = ObjectId>) {
        let set = self.parts.entry(part).or_default();
        let additional = objs.size_hint().0;
        set.reserve(additional);
        self.counts.reserve(additional);
        for o in objs {
            if set.insert(o) {
                *self.counts.entry(o).or_insert(0) += 1;
            }
        }
        if set.is_empty() {
            self.parts.remove(&part);
        }
    }

    fn release(&mut self, obj: ObjectId) {
        if let Some(n) = self.counts.get_mut(&obj) {
            *n -= 1;
            if *n == 0 {
                self.counts.remove(&obj);
            }
        }
    }

    /// Drops everything `part` contributed and returns the ids that left the
    /// result entirely.
    pub fn clear_part(&mut self, part: CellId) -> Vec<ObjectId> {
        let Some(set) = self.parts.remove(&part) else {
            return Vec::new();
        };
        let mut gone = Vec::new();
        for o in set {
            self.release(o);
            if !self.counts.contains_key(&o) {
                gone.push(o);
            }
        }
        gone
    }
}

/// A query's circle, lifetime, candidate cells and result.
#[derive(Debug, Clone)]
pub struct QueryState {
    pub id: QueryId,
    pub circle: Circle,
    pub t_start: Tick,
    pub t_end: Tick,
    pub gr: CandidateSet,
    result: PartitionedResult,
    pending: BTreeSet<CellId>,
}

impl QueryState {
    pub fn new(id: QueryId, circle: Circle, t_start: Tick, t_end: Tick, gr: CandidateSet) -> Self {
        let pending = gr.cells();
        QueryState {
            id,
            circle,
            t_start,
            t_end,
            gr,
            result: PartitionedResult::default(),
            pending,
        }
    }

    /// Active during `[t_start, t_end)`.
    pub fn is_active(&self, now: Tick) -> bool {
        self.t_start <= now && now < self.t_end
    }

    pub fn is_ready(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn pending(&self) -> &BTreeSet<CellId> {
        &self.pending
    }

    pub fn result_len(&self) -> usize {
        self.result.len()
    }

    pub fn contains(&self, obj: ObjectId) -> bool {
        self.result.contains(obj)
    }

    pub fn result(&self) -> BTreeSet<ObjectId> {
        self.result.to_set()
    }

    pub fn part(&self, cell: CellId) -> Option<&DetSet<ObjectId>> {
        self.result.part(cell)
    }

    /// Merges the initial result of one candidate cell. Returns true once
    /// every candidate cell has reported.
    pub fn accept_partial(
        &mut self,
        cell: CellId,
        objects: impl IntoIterator<Item = ObjectId>,
    ) -> Result<bool, QueryError> {
        if !self.gr.contains(&cell) {
            return Err(QueryError::UnexpectedCell { query: self.id, cell });
        }
        if !self.pending.remove(&cell) {
            return Err(QueryError::DuplicatePartial { query: self.id, cell });
        }
        self.result.enter_all(cell, objects.into_iter());
        Ok(self.pending.is_empty())
    }

    /// Marks `cell` as awaiting a fresh partial result.
    pub fn expect(&mut self, cell: CellId) {
        self.pending.insert(cell);
    }

    pub fn apply(&mut self, cell: CellId, obj: ObjectId, change: Change) -> bool {
        self.result.apply(cell, obj, change)
    }

    pub fn clear_cell(&mut self, cell: CellId) -> Vec<ObjectId> {
        self.result.clear_part(cell)
    }
}
