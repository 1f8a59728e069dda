//! Per-cell state: the object list, the fully/partially covering query lists
//! and the lazily built M-ary tree with its search cache.

use crate::geometry::{Circle, Coverage, Point, Rect};
use crate::ids::{CellId, ObjectId, QueryId};
use crate::mtree::{Bgi, MTree, Region, SearchStats, SplitConfig, TreeError};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

/// Hash map with a fixed hasher so that iteration order only depends on the
/// operation sequence. Runs with the same input produce the same output.
pub type DetMap<K, V> = rustc_hash::FxHashMap<K, V>;
pub type DetSet<T> = rustc_hash::FxHashSet<T>;

#[derive(Debug, Error, PartialEq)]
pub enum CellError {
    #[error("object {obj} has no recorded position in cell {cell}")]
    InconsistentUpdate { obj: ObjectId, cell: CellId },
    #[error("object {obj} is already recorded in cell {cell}")]
    DuplicateObject { obj: ObjectId, cell: CellId },
    #[error("update of object {obj} does not touch cell {cell}")]
    NotInCell { obj: ObjectId, cell: CellId },
    #[error("query {query} is not in the list for {expected:?} in cell {cell}")]
    StateMismatch {
        query: QueryId,
        cell: CellId,
        expected: Coverage,
    },
    #[error(transparent)]
    Tree(#[from] TreeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Change {
    Enter,
    Leave,
}

/// Membership changes caused by one object update in one cell.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObjectDelta {
    pub cell: CellId,
    pub items: Vec<(QueryId, ObjectId, Change)>,
}

impl ObjectDelta {
    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// How a cell indexes its objects.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellConfig {
    pub split: SplitConfig,
    /// Build a tree once the cell holds `alpha` objects. Off for the
    /// grid-only baseline.
    pub trees: bool,
}

impl Default for CellConfig {
    fn default() -> Self {
        CellConfig {
            split: SplitConfig::default(),
            trees: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Cell {
    id: CellId,
    bounds: Rect,
    domain: Rect,
    cfg: CellConfig,
    mol: DetMap<ObjectId, Point>,
    fcl: BTreeSet<QueryId>,
    pcl: BTreeSet<QueryId>,
    circles: DetMap<QueryId, Circle>,
    tree: Option<MTree>,
    bgi: Option<Bgi>,
    stats: SearchStats,
}

impl Cell {
    /// `domain` decides which of the cell's max edges are closed.
    pub fn new(id: CellId, bounds: Rect, domain: Rect, cfg: CellConfig) -> Self {
        Cell {
            id,
            bounds,
            domain,
            cfg,
            mol: DetMap::default(),
            fcl: BTreeSet::new(),
            pcl: BTreeSet::new(),
            circles: DetMap::default(),
            tree: None,
            bgi: None,
            stats: SearchStats::default(),
        }
    }

    pub fn id(&self) -> CellId {
        self.id
    }

    pub fn bounds(&self) -> &Rect {
        &self.bounds
    }

    pub fn admits(&self, p: &Point) -> bool {
        self.bounds.admits(p, &self.domain)
    }

    pub fn len(&self) -> usize {
        self.mol.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mol.is_empty()
    }

    pub fn position_of(&self, obj: ObjectId) -> Option<Point> {
        self.mol.get(&obj).copied()
    }

    pub fn objects(&self) -> impl Iterator<Item = (ObjectId, Point)> + '_ {
        self.mol.iter().map(|(o, p)| (*o, *p))
    }

    pub fn fcl(&self) -> &BTreeSet<QueryId> {
        &self.fcl
    }

    pub fn pcl(&self) -> &BTreeSet<QueryId> {
        &self.pcl
    }

    pub fn class_of(&self, q: QueryId) -> Coverage {
        if self.fcl.contains(&q) {
            Coverage::Full
        } else if self.pcl.contains(&q) {
            Coverage::Partial
        } else {
            Coverage::Disjoint
        }
    }

    pub fn circle_of(&self, q: QueryId) -> Option<&Circle> {
        self.circles.get(&q)
    }

    pub fn tree(&self) -> Option<&MTree> {
        self.tree.as_ref()
    }

    pub fn bgi(&self) -> Option<&Bgi> {
        self.bgi.as_ref()
    }

    /// Work counters accumulated by this cell since creation.
    pub fn stats(&self) -> &SearchStats {
        &self.stats
    }

    /// Applies one object update and reports which queries' results change.
    /// `old` and `new` may lie in other cells; those ends are ignored.
    pub fn apply_object_update(
        &mut self,
        obj: ObjectId,
        old: Option<Point>,
        new: Option<Point>,
    ) -> Result<ObjectDelta, CellError> {
        let old = old.filter(|p| self.admits(p));
        let new = new.filter(|p| self.admits(p));
        if old.is_none() && new.is_none() {
            return Err(CellError::NotInCell { obj, cell: self.id });
        }
        let recorded = match old {
            Some(_) => Some(
                self.position_of(obj)
                    .ok_or(CellError::InconsistentUpdate { obj, cell: self.id })?,
            ),
            None if self.mol.contains_key(&obj) => {
                return Err(CellError::DuplicateObject { obj, cell: self.id })
            }
            None => None,
        };

        let mut stats = SearchStats::default();
        let before = recorded.map(|p| self.partial_queries_at(&p, &mut stats));
        match (recorded, new) {
            (Some(from), Some(to)) => {
                self.mol.insert(obj, to);
                if let Some(t) = &mut self.tree {
                    t.move_object(obj, from, to)?;
                }
            }
            (Some(from), None) => {
                self.mol.remove(&obj);
                if let Some(t) = &mut self.tree {
                    t.remove_object(obj, from)?;
                }
                if self.mol.is_empty() {
                    self.tree = None;
                    self.bgi = None;
                }
            }
            (None, Some(to)) => {
                self.mol.insert(obj, to);
                match &mut self.tree {
                    Some(t) => t.insert_object(obj, to)?,
                    None => self.maybe_build_tree()?,
                }
            }
            (None, None) => unreachable!("checked above"),
        }
        let after = new.map(|p| self.partial_queries_at(&p, &mut stats));
        self.stats.add(&stats);

        let mut items = Vec::new();
        match (before.is_some(), after.is_some()) {
            (true, false) => items.extend(self.fcl.iter().map(|q| (*q, obj, Change::Leave))),
            (false, true) => items.extend(self.fcl.iter().map(|q| (*q, obj, Change::Enter))),
            _ => {}
        }
        let before = before.unwrap_or_default();
        let after = after.unwrap_or_default();
        items.extend(before.difference(&after).map(|q| (*q, obj, Change::Leave)));
        items.extend(after.difference(&before).map(|q| (*q, obj, Change::Enter)));
        Ok(ObjectDelta { cell: self.id, items })
    }

    /// Partially covering queries whose circle holds `p`.
    fn partial_queries_at(&self, p: &Point, stats: &mut SearchStats) -> BTreeSet<QueryId> {
        match &self.tree {
            Some(t) => t.queries_at(p, stats).into_iter().collect(),
            None => {
                stats.objects_examined += self.pcl.len() as u64;
                self.pcl
                    .iter()
                    .filter(|q| self.circles[*q].contains(p))
                    .copied()
                    .collect()
            }
        }
    }

    fn maybe_build_tree(&mut self) -> Result<(), CellError> {
        if !self.cfg.trees || self.tree.is_some() || self.mol.len() < self.cfg.split.alpha() {
            return Ok(());
        }
        let mut t = MTree::new(self.bounds, self.cfg.split);
        for (o, p) in &self.mol {
            t.insert_object(*o, *p)?;
        }
        for q in &self.pcl {
            t.insert_query(*q, self.circles[q])?;
        }
        self.tree = Some(t);
        self.bgi = Some(Bgi::new());
        Ok(())
    }

    /// Moves `q` between the cell's query lists. `old_class` must match the
    /// list `q` is in now; `circle` is the query's new circle.
    pub fn apply_query_transition(
        &mut self,
        q: QueryId,
        old_class: Coverage,
        new_class: Coverage,
        circle: &Circle,
    ) -> Result<(), CellError> {
        let present = self.class_of(q);
        if present != old_class {
            return Err(CellError::StateMismatch {
                query: q,
                cell: self.id,
                expected: old_class,
            });
        }
        match old_class {
            Coverage::Full => {
                self.fcl.remove(&q);
            }
            Coverage::Partial => {
                self.pcl.remove(&q);
                if let Some(t) = &mut self.tree {
                    t.remove_query(q);
                }
                if let Some(b) = &mut self.bgi {
                    b.forget(q);
                }
            }
            Coverage::Disjoint => {}
        }
        match new_class {
            Coverage::Full => {
                self.fcl.insert(q);
                self.circles.insert(q, *circle);
            }
            Coverage::Partial => {
                self.pcl.insert(q);
                self.circles.insert(q, *circle);
                if let Some(t) = &mut self.tree {
                    t.insert_query(q, *circle)?;
                }
            }
            Coverage::Disjoint => {
                self.circles.remove(&q);
            }
        }
        Ok(())
    }

    /// Drops `q` from every list of this cell; unknown ids are ignored.
    pub fn remove_query(&mut self, q: QueryId) {
        self.fcl.remove(&q);
        if self.pcl.remove(&q) {
            if let Some(t) = &mut self.tree {
                t.remove_query(q);
            }
            if let Some(b) = &mut self.bgi {
                b.forget(q);
            }
        }
        self.circles.remove(&q);
    }

    /// Drops every query of `qs` from this cell's lists.
    pub fn remove_queries(&mut self, qs: &[QueryId]) {
        let mut partial = DetSet::default();
        for q in qs {
            self.fcl.remove(q);
            self.circles.remove(q);
            if self.pcl.remove(q) {
                partial.insert(*q);
            }
        }
        if let Some(b) = &mut self.bgi {
            for q in &partial {
                b.forget(*q);
            }
        }
        if let Some(t) = &mut self.tree {
            // a walk touches the nodes around one circle, a sweep every node once
            if partial.len() * 64 >= t.node_count() {
                t.remove_queries(&partial);
            } else {
                for q in &partial {
                    t.remove_query(*q);
                }
            }
        }
    }

    /// Every object of the cell, for a fully covering query.
    pub fn search_full(&self) -> Vec<ObjectId> {
        // the object list already holds every member; no tree walk needed
        self.mol.keys().copied().collect()
    }

    /// Objects inside `c`. With a tree, fully covered nodes go through the
    /// cell's search cache on behalf of `q`; without one, every object is
    /// tested.
    pub fn search_partial(&mut self, q: QueryId, c: &Circle, stats: &mut SearchStats) -> Vec<ObjectId> {
        let mut local = SearchStats::default();
        let out = match (&self.tree, &mut self.bgi) {
            (Some(t), Some(b)) => t.search_range_shared(q, c, b, &mut local),
            (Some(t), None) => t.search_range(c, &mut local),
            _ => {
                local.objects_examined += self.mol.len() as u64;
                self.mol
                    .iter()
                    .filter(|(_, p)| c.contains(p))
                    .map(|(o, _)| *o)
                    .collect()
            }
        };
        self.stats.add(&local);
        stats.add(&local);
        out
    }

    /// Objects inside `old` but not `new`, and inside `new` but not `old`.
    pub fn search_difference(
        &mut self,
        old: Region<'_>,
        new: Region<'_>,
        stats: &mut SearchStats,
    ) -> (Vec<ObjectId>, Vec<ObjectId>) {
        let mut local = SearchStats::default();
        let out = match &self.tree {
            Some(t) => t.search_difference(old, new, &mut local),
            None => {
                let mut removals = Vec::new();
                let mut additions = Vec::new();
                for (o, p) in &self.mol {
                    local.objects_examined += 1;
                    match (old.contains(p), new.contains(p)) {
                        (true, false) => removals.push(*o),
                        (false, true) => additions.push(*o),
                        _ => {}
                    }
                }
                (removals, additions)
            }
        };
        self.stats.add(&local);
        stats.add(&local);
        out
    }

    /// Checks the cell's own invariants against the supplied live circles.
    pub fn check_invariants(&self) -> Result<(), String> {
        if let Some(q) = self.fcl.intersection(&self.pcl).next() {
            return Err(format!("{q} is in both query lists of cell {}", self.id));
        }
        for (list, want) in [(&self.fcl, Coverage::Full), (&self.pcl, Coverage::Partial)] {
            for q in list {
                let c = self.circles.get(q).ok_or(format!("{q} has no circle in {}", self.id))?;
                let got = crate::geometry::classify(c, &self.bounds);
                if got != want {
                    return Err(format!("{q} listed as {want:?} in {} but classifies {got:?}", self.id));
                }
            }
        }
        if self.circles.len() != self.fcl.len() + self.pcl.len() {
            return Err(format!("stale circles in cell {}", self.id));
        }
        for (o, p) in &self.mol {
            if !self.admits(p) {
                return Err(format!("{o} at {p} lies outside cell {}", self.id));
            }
        }
        if let Some(t) = &self.tree {
            if t.len() != self.mol.len() || self.mol.keys().any(|o| !t.contains_object(*o)) {
                return Err(format!("tree objects differ from the object list in {}", self.id));
            }
            let tree_queries: BTreeSet<QueryId> = t.queries().map(|(q, _)| q).collect();
            if tree_queries != self.pcl {
                return Err(format!("tree queries differ from the partial list in {}", self.id));
            }
            t.check_invariants()?;
        } else if self.cfg.trees && self.mol.len() >= self.cfg.split.alpha() {
            return Err(format!("cell {} holds {} objects but has no tree", self.id, self.mol.len()));
        }
        if let Some(b) = &self.bgi {
            b.check_references()?;
        }
        Ok(())
    }
}
