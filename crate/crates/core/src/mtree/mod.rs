//! Dynamic M-ary tree over one grid cell.
//!
//! A leaf splits into `m` children once it holds `alpha` objects, and an
//! all-leaf sibling group is folded back into its parent once the group holds
//! fewer than `beta = alpha / m` objects (compared as `sum * m < alpha`).
//! Children tile the parent as an `r`×`c` grid with `r * c = m`, `r` being the
//! largest divisor of `m` not above `sqrt(m)`; the longer factor runs along
//! the parent's longer side so nodes stay close to square.
//!
//! Every node carries a query list. A non-leaf node lists the queries whose
//! circle fully covers it; a leaf lists the queries that fully cover or
//! partially intersect it. Placement is exactly what a top-down insertion
//! that stops at fully covered nodes produces, and splits and merges keep it
//! that way.

mod bgi;

pub use bgi::{Bgi, NodeKey};

use crate::geometry::{classify, Circle, Coverage, Point, Rect};
use crate::cell::{DetMap, DetSet};
use crate::ids::{ObjectId, QueryId};
use std::collections::HashSet;
use std::ops::Range;
use thiserror::Error;

pub type NodeId = u32;

pub const DEFAULT_ALPHA: usize = 20;
pub const DEFAULT_M: usize = 6;
/// Leaves at this depth never split, so co-located objects cannot recurse forever.
pub const MAX_DEPTH: u8 = 12;

#[derive(Debug, Error, PartialEq)]
pub enum TreeError {
    #[error("point {0} lies outside the tree bounds")]
    OutOfBounds(Point),
    #[error("object {0} is already in the tree")]
    DuplicateObject(ObjectId),
    #[error("object {0} is not in the leaf holding the given position")]
    NotFound(ObjectId),
    #[error("query {0} does not intersect the tree bounds")]
    NoIntersection(QueryId),
    #[error("invalid split config: alpha={alpha}, m={m} (need alpha >= 2, m >= 2)")]
    InvalidConfig { alpha: usize, m: usize },
}

/// Split/merge thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitConfig {
    alpha: usize,
    m: usize,
    max_depth: u8,
}

impl SplitConfig {
    pub fn new(alpha: usize, m: usize) -> Result<Self, TreeError> {
        if alpha < 2 || m < 2 || m > u16::MAX as usize {
            return Err(TreeError::InvalidConfig { alpha, m });
        }
        Ok(SplitConfig { alpha, m, max_depth: MAX_DEPTH })
    }

    pub fn with_max_depth(mut self, max_depth: u8) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn alpha(&self) -> usize {
        self.alpha
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn max_depth(&self) -> u8 {
        self.max_depth
    }

    pub fn beta(&self) -> f64 {
        self.alpha as f64 / self.m as f64
    }

    /// `sum < alpha / m` without fractions.
    pub fn below_beta(&self, sum: usize) -> bool {
        sum * self.m < self.alpha
    }

    /// `(r, c)` with `r` the largest divisor of `m` such that `r * r <= m`.
    pub fn factors(&self) -> (usize, usize) {
        let r = (1..=self.m).take_while(|r| r * r <= self.m).filter(|r| self.m % r == 0).last().unwrap_or(1);
        (r, self.m / r)
    }
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig::new(DEFAULT_ALPHA, DEFAULT_M).expect("default split config is valid")
    }
}

/// Work counters for searches and maintenance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SearchStats {
    /// Per-object distance tests.
    pub objects_examined: u64,
    /// Tree nodes classified against a circle.
    pub nodes_visited: u64,
    /// Leaves walked to materialize fully covered subtrees.
    pub leaf_descents: u64,
    /// Fully covered nodes answered from the BGI.
    pub cache_hits: u64,
}

impl SearchStats {
    pub fn add(&mut self, other: &SearchStats) {
        self.objects_examined += other.objects_examined;
        self.nodes_visited += other.nodes_visited;
        self.leaf_descents += other.leaf_descents;
        self.cache_hits += other.cache_hits;
    }
}

/// A region used by the two-circle difference search.
#[derive(Debug, Clone, Copy)]
pub enum Region<'a> {
    Nothing,
    Everything,
    Circle(&'a Circle),
}

impl Region<'_> {
    pub fn class(&self, r: &Rect) -> Coverage {
        match self {
            Region::Nothing => Coverage::Disjoint,
            Region::Everything => Coverage::Full,
            Region::Circle(c) => classify(c, r),
        }
    }

    pub fn contains(&self, p: &Point) -> bool {
        match self {
            Region::Nothing => false,
            Region::Everything => true,
            Region::Circle(c) => c.contains(p),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Node {
    bounds: Rect,
    parent: Option<NodeId>,
    depth: u8,
    rows: u16,
    cols: u16,
    // children occupy `first_child..first_child + rows * cols` in the arena
    first_child: NodeId,
    objects: Vec<(ObjectId, Point)>,
    count: usize,
    ql: Vec<QueryId>,
    version: u64,
    live: bool,
}

impl Node {
    fn new(bounds: Rect, parent: Option<NodeId>, depth: u8, version: u64) -> Self {
        Node {
            bounds,
            parent,
            depth,
            rows: 0,
            cols: 0,
            first_child: 0,
            objects: Vec::new(),
            count: 0,
            ql: Vec::new(),
            version,
            live: true,
        }
    }

    pub fn bounds(&self) -> &Rect {
        &self.bounds
    }

    pub fn parent(&self) -> Option<NodeId> {
        self.parent
    }

    pub fn depth(&self) -> u8 {
        self.depth
    }

    pub fn is_leaf(&self) -> bool {
        self.rows == 0
    }

    pub fn children(&self) -> Range<NodeId> {
        let k = self.rows as NodeId * self.cols as NodeId;
        self.first_child..self.first_child + k
    }

    /// Objects held by a leaf (empty for inner nodes).
    pub fn objects(&self) -> &[(ObjectId, Point)] {
        &self.objects
    }

    /// Objects in the whole subtree.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn query_list(&self) -> &[QueryId] {
        &self.ql
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// `(rows, cols)` of the child layout; `(0, 0)` for leaves.
    pub fn layout(&self) -> (u16, u16) {
        (self.rows, self.cols)
    }
}

#[derive(Debug, Clone)]
pub struct MTree {
    cfg: SplitConfig,
    nodes: Vec<Node>,
    free: Vec<NodeId>,
    root: NodeId,
    clock: u64,
    members: DetSet<ObjectId>,
    queries: DetMap<QueryId, Circle>,
}

impl MTree {
    pub fn new(bounds: Rect, cfg: SplitConfig) -> Self {
        MTree {
            cfg,
            nodes: vec![Node::new(bounds, None, 0, 1)],
            free: Vec::new(),
            root: 0,
            clock: 1,
            members: DetSet::default(),
            queries: DetMap::default(),
        }
    }

    pub fn config(&self) -> &SplitConfig {
        &self.cfg
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn bounds(&self) -> &Rect {
        &self.nodes[self.root as usize].bounds
    }

    pub fn node(&self, id: NodeId) -> &Node {
        &self.nodes[id as usize]
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains_object(&self, id: ObjectId) -> bool {
        self.members.contains(&id)
    }

    pub fn query_circle(&self, q: QueryId) -> Option<&Circle> {
        self.queries.get(&q)
    }

    /// Ids of all live nodes.
    pub fn node_ids(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| n.live)
            .map(|(i, _)| i as NodeId)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() - self.free.len() * self.cfg.m
    }

    pub fn leaf_count(&self) -> usize {
        self.node_ids().filter(|id| self.node(*id).is_leaf()).count()
    }

    pub fn height(&self) -> u8 {
        self.node_ids().map(|id| self.node(id).depth).max().unwrap_or(0)
    }

    fn tick(&mut self) -> u64 {
        self.clock += 1;
        self.clock
    }

    /// Places `block` in consecutive slots, reusing a released block when
    /// there is one. Every block holds exactly `m` nodes.
    fn alloc_block(&mut self, block: Vec<Node>) -> NodeId {
        debug_assert_eq!(block.len(), self.cfg.m);
        match self.free.pop() {
            Some(first) => {
                for (slot, node) in self.nodes[first as usize..].iter_mut().zip(block) {
                    *slot = node;
                }
                first
            }
            None => {
                let first = self.nodes.len() as NodeId;
                self.nodes.extend(block);
                first
            }
        }
    }

    fn release_block(&mut self, first: NodeId) {
        for n in &mut self.nodes[first as usize..first as usize + self.cfg.m] {
            n.live = false;
            n.objects = Vec::new();
            n.ql = Vec::new();
        }
        self.free.push(first);
    }

    fn admits_root(&self, p: &Point) -> bool {
        self.bounds().contains_closed(p)
    }

    /// Child of inner node `id` whose bounds hold `p`.
    fn child_for(&self, id: NodeId, p: &Point) -> NodeId {
        let n = &self.nodes[id as usize];
        let (rows, cols) = (n.rows as usize, n.cols as usize);
        let b = &n.bounds;
        let guess = |v: f64, lo: f64, span: f64, k: usize| -> usize {
            let g = ((v - lo) / span * k as f64).floor();
            if g.is_nan() || g < 0.0 {
                0
            } else {
                (g as usize).min(k - 1)
            }
        };
        let mut c = guess(p.x, b.x_lo, b.width(), cols);
        let mut r = guess(p.y, b.y_lo, b.height(), rows);
        let at = |r: usize, c: usize| &self.nodes[n.first_child as usize + r * cols + c].bounds;
        while c > 0 && p.x < at(r, c).x_lo {
            c -= 1;
        }
        while c + 1 < cols && p.x >= at(r, c + 1).x_lo {
            c += 1;
        }
        while r > 0 && p.y < at(r, c).y_lo {
            r -= 1;
        }
        while r + 1 < rows && p.y >= at(r + 1, c).y_lo {
            r += 1;
        }
        n.first_child + (r * cols + c) as NodeId
    }

    /// Leaf whose bounds hold `p`; `p` must be admitted by the root.
    pub fn leaf_for(&self, p: &Point) -> NodeId {
        let mut id = self.root;
        while !self.nodes[id as usize].is_leaf() {
            id = self.child_for(id, p);
        }
        id
    }

    fn path_to(&self, p: &Point) -> Vec<NodeId> {
        let mut path = vec![self.root];
        let mut id = self.root;
        while !self.nodes[id as usize].is_leaf() {
            id = self.child_for(id, p);
            path.push(id);
        }
        path
    }

    pub fn insert_object(&mut self, id: ObjectId, p: Point) -> Result<(), TreeError> {
        if !self.admits_root(&p) {
            return Err(TreeError::OutOfBounds(p));
        }
        if !self.members.insert(id) {
            return Err(TreeError::DuplicateObject(id));
        }
        let path = self.path_to(&p);
        for &n in &path {
            let v = self.tick();
            let node = &mut self.nodes[n as usize];
            node.count += 1;
            node.version = v;
        }
        let leaf = *path.last().expect("path is never empty");
        self.nodes[leaf as usize].objects.push((id, p));
        self.split_if_full(leaf);
        Ok(())
    }

    pub fn remove_object(&mut self, id: ObjectId, p: Point) -> Result<(), TreeError> {
        if !self.members.contains(&id) || !self.admits_root(&p) {
            return Err(TreeError::NotFound(id));
        }
        let path = self.path_to(&p);
        let leaf = *path.last().expect("path is never empty");
        let pos = self.nodes[leaf as usize]
            .objects
            .iter()
            .position(|(o, _)| *o == id)
            .ok_or(TreeError::NotFound(id))?;
        self.nodes[leaf as usize].objects.swap_remove(pos);
        self.members.remove(&id);
        for &n in &path {
            let v = self.tick();
            let node = &mut self.nodes[n as usize];
            node.count -= 1;
            node.version = v;
        }
        self.merge_upwards(self.nodes[leaf as usize].parent);
        Ok(())
    }

    /// Moves an object inside the tree; equivalent to remove + insert.
    pub fn move_object(&mut self, id: ObjectId, from: Point, to: Point) -> Result<(), TreeError> {
        if !self.admits_root(&to) {
            return Err(TreeError::OutOfBounds(to));
        }
        self.remove_object(id, from)?;
        self.insert_object(id, to)
    }

    fn layout_for(&self, bounds: &Rect) -> (usize, usize) {
        let (small, large) = self.cfg.factors();
        if bounds.width() >= bounds.height() {
            (small, large)
        } else {
            (large, small)
        }
    }

    fn split_if_full(&mut self, leaf: NodeId) {
        let n = &self.nodes[leaf as usize];
        if !n.is_leaf() || n.objects.len() < self.cfg.alpha || n.depth >= self.cfg.max_depth {
            return;
        }
        let bounds = n.bounds;
        let depth = n.depth;
        let (rows, cols) = self.layout_for(&bounds);
        let xs: Vec<f64> = (0..=cols)
            .map(|i| if i == cols { bounds.x_hi } else { bounds.x_lo + bounds.width() * (i as f64 / cols as f64) })
            .collect();
        let ys: Vec<f64> = (0..=rows)
            .map(|i| if i == rows { bounds.y_hi } else { bounds.y_lo + bounds.height() * (i as f64 / rows as f64) })
            .collect();

        let mut block = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                let v = self.tick();
                block.push(Node::new(Rect::new(xs[c], ys[r], xs[c + 1], ys[r + 1]), Some(leaf), depth + 1, v));
            }
        }
        let first = self.alloc_block(block);

        let v = self.tick();
        let node = &mut self.nodes[leaf as usize];
        node.rows = rows as u16;
        node.cols = cols as u16;
        node.first_child = first;
        node.version = v;
        let children = node.children();
        let objects = std::mem::take(&mut node.objects);
        let ql = std::mem::take(&mut node.ql);

        for (id, p) in objects {
            let child = self.child_for(leaf, &p);
            let cn = &mut self.nodes[child as usize];
            cn.objects.push((id, p));
            cn.count += 1;
        }

        // Queries that only partially intersect the old leaf move down.
        let mut kept = Vec::new();
        for q in ql {
            let circle = self.queries[&q];
            if classify(&circle, &bounds) == Coverage::Full {
                kept.push(q);
                continue;
            }
            for child in children.clone() {
                if classify(&circle, &self.nodes[child as usize].bounds).intersects() {
                    self.nodes[child as usize].ql.push(q);
                }
            }
        }
        self.nodes[leaf as usize].ql = kept;

        for child in children {
            self.split_if_full(child);
        }
    }

    fn merge_upwards(&mut self, mut at: Option<NodeId>) {
        while let Some(id) = at {
            let n = &self.nodes[id as usize];
            let children = n.children();
            let all_leaves = children.clone().all(|c| self.nodes[c as usize].is_leaf());
            if !all_leaves || !self.cfg.below_beta(n.count) {
                break;
            }
            let mut objects = Vec::new();
            let mut ql = std::mem::take(&mut self.nodes[id as usize].ql);
            for c in children.clone() {
                let cn = &mut self.nodes[c as usize];
                objects.append(&mut cn.objects);
                for q in cn.ql.drain(..) {
                    if !ql.contains(&q) {
                        ql.push(q);
                    }
                }
            }
            self.release_block(children.start);
            let v = self.tick();
            let node = &mut self.nodes[id as usize];
            node.objects = objects;
            node.ql = ql;
            node.rows = 0;
            node.cols = 0;
            node.version = v;
            at = node.parent;
        }
    }

    /// Records `q` on the nodes it covers. Re-inserting a known query moves it.
    pub fn insert_query(&mut self, q: QueryId, c: Circle) -> Result<(), TreeError> {
        if !classify(&c, self.bounds()).intersects() {
            return Err(TreeError::NoIntersection(q));
        }
        self.remove_query(q);
        self.queries.insert(q, c);
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &mut self.nodes[id as usize];
            match classify(&c, &n.bounds) {
                Coverage::Disjoint => {}
                Coverage::Full => n.ql.push(q),
                Coverage::Partial if n.is_leaf() => n.ql.push(q),
                Coverage::Partial => stack.extend(n.children()),
            }
        }
        Ok(())
    }

    /// Removes `q` from every query list; unknown ids are ignored.
    pub fn remove_query(&mut self, q: QueryId) {
        let Some(c) = self.queries.remove(&q) else {
            return;
        };
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &mut self.nodes[id as usize];
            match classify(&c, &n.bounds) {
                Coverage::Disjoint => {}
                Coverage::Partial if !n.is_leaf() => stack.extend(n.children()),
                _ => {
                    if let Some(pos) = n.ql.iter().position(|x| *x == q) {
                        n.ql.swap_remove(pos);
                    }
                }
            }
        }
    }

    /// Removes all of `qs` with one pass over the node arena. When many
    /// queries leave a tree together this beats one walk per query.
    pub fn remove_queries(&mut self, qs: &DetSet<QueryId>) {
        let before = self.queries.len();
        self.queries.retain(|q, _| !qs.contains(q));
        if self.queries.len() == before {
            return;
        }
        for n in &mut self.nodes {
            if !n.ql.is_empty() {
                n.ql.retain(|q| !qs.contains(q));
            }
        }
    }

    pub fn queries(&self) -> impl Iterator<Item = (QueryId, &Circle)> {
        self.queries.iter().map(|(q, c)| (*q, c))
    }

    fn collect_into(&self, id: NodeId, out: &mut Vec<ObjectId>, stats: &mut SearchStats) {
        let mut stack = vec![id];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            if n.is_leaf() {
                stats.leaf_descents += 1;
                out.extend(n.objects.iter().map(|(o, _)| *o));
            } else {
                stack.extend(n.children());
            }
        }
    }

    /// Every object in the tree.
    pub fn collect_all(&self) -> Vec<ObjectId> {
        let mut out = Vec::with_capacity(self.len());
        self.collect_into(self.root, &mut out, &mut SearchStats::default());
        out
    }

    /// Objects inside `c`. Fully covered nodes contribute their subtree
    /// without distance tests.
    pub fn search_range(&self, c: &Circle, stats: &mut SearchStats) -> Vec<ObjectId> {
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            stats.nodes_visited += 1;
            match classify(c, &n.bounds) {
                Coverage::Disjoint => {}
                Coverage::Full => self.collect_into(id, &mut out, stats),
                Coverage::Partial if n.is_leaf() => {
                    stats.objects_examined += n.objects.len() as u64;
                    out.extend(n.objects.iter().filter(|(_, p)| c.contains(p)).map(|(o, _)| *o));
                }
                Coverage::Partial => stack.extend(n.children()),
            }
        }
        out
    }

    /// Same result as [`MTree::search_range`]; fully covered nodes are served
    /// from (and stored into) `bgi`, and recorded under `q`.
    pub fn search_range_shared(
        &self,
        q: QueryId,
        c: &Circle,
        bgi: &mut Bgi,
        stats: &mut SearchStats,
    ) -> Vec<ObjectId> {
        let mut keys = Vec::new();
        let mut out = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            stats.nodes_visited += 1;
            match classify(c, &n.bounds) {
                Coverage::Disjoint => {}
                Coverage::Full => {
                    if let Some(cached) = bgi.lookup(id, n.version) {
                        stats.cache_hits += 1;
                        out.extend_from_slice(cached);
                    } else {
                        let start = out.len();
                        out.reserve(n.count);
                        self.collect_into(id, &mut out, stats);
                        bgi.store(id, n.version, out[start..].to_vec());
                    }
                    keys.push((id, n.version));
                }
                Coverage::Partial if n.is_leaf() => {
                    stats.objects_examined += n.objects.len() as u64;
                    out.extend(n.objects.iter().filter(|(_, p)| c.contains(p)).map(|(o, _)| *o));
                }
                Coverage::Partial => stack.extend(n.children()),
            }
        }
        bgi.set_nodes(q, keys);
        out
    }

    /// Objects inside `old` but not `new` (removals) and inside `new` but not
    /// `old` (additions). Subtrees that both regions fully cover, or both
    /// miss, are skipped.
    pub fn search_difference(
        &self,
        old: Region<'_>,
        new: Region<'_>,
        stats: &mut SearchStats,
    ) -> (Vec<ObjectId>, Vec<ObjectId>) {
        let mut removals = Vec::new();
        let mut additions = Vec::new();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            let n = &self.nodes[id as usize];
            stats.nodes_visited += 1;
            let (co, cn) = (old.class(&n.bounds), new.class(&n.bounds));
            match (co, cn) {
                (Coverage::Full, Coverage::Full) | (Coverage::Disjoint, Coverage::Disjoint) => {}
                (Coverage::Full, Coverage::Disjoint) => self.collect_into(id, &mut removals, stats),
                (Coverage::Disjoint, Coverage::Full) => self.collect_into(id, &mut additions, stats),
                _ if n.is_leaf() => {
                    stats.objects_examined += n.objects.len() as u64;
                    for (o, p) in &n.objects {
                        match (old.contains(p), new.contains(p)) {
                            (true, false) => removals.push(*o),
                            (false, true) => additions.push(*o),
                            _ => {}
                        }
                    }
                }
                _ => stack.extend(n.children()),
            }
        }
        (removals, additions)
    }

    /// Tree queries whose circle holds `p`, read off the query lists along
    /// the path to `p`'s leaf: inner-node entries are full covers and need no
    /// test, leaf entries are tested.
    pub fn queries_at(&self, p: &Point, stats: &mut SearchStats) -> Vec<QueryId> {
        let mut out = Vec::new();
        let mut id = self.root;
        loop {
            let n = &self.nodes[id as usize];
            if n.is_leaf() {
                for q in &n.ql {
                    stats.objects_examined += 1;
                    if self.queries[q].contains(p) {
                        out.push(*q);
                    }
                }
                return out;
            }
            out.extend_from_slice(&n.ql);
            id = self.child_for(id, p);
        }
    }

    /// Full structural audit. Returns a description of the first violation.
    pub fn check_invariants(&self) -> Result<(), String> {
        let m = self.cfg.m;
        let mut seen = HashSet::new();
        let root_bounds = *self.bounds();
        let mut stack = vec![self.root];
        let mut visited = 0usize;
        while let Some(id) = stack.pop() {
            visited += 1;
            let n = &self.nodes[id as usize];
            if !n.live {
                return Err(format!("node {id} reachable but released"));
            }
            let mut dup = HashSet::new();
            for q in &n.ql {
                if !dup.insert(q) {
                    return Err(format!("node {id} lists {q} twice"));
                }
                let c = self.queries.get(q).ok_or_else(|| format!("node {id} lists unknown {q}"))?;
                let class = classify(c, &n.bounds);
                let ok = if n.is_leaf() { class.intersects() } else { class == Coverage::Full };
                if !ok {
                    return Err(format!("node {id} lists {q} with class {class:?}"));
                }
            }
            if n.is_leaf() {
                if n.objects.len() != n.count {
                    return Err(format!("leaf {id} count {} != {}", n.count, n.objects.len()));
                }
                if n.count >= self.cfg.alpha && n.depth < self.cfg.max_depth {
                    return Err(format!("leaf {id} holds {} >= alpha objects", n.count));
                }
                for (o, p) in &n.objects {
                    if !n.bounds.admits(p, &root_bounds) {
                        return Err(format!("{o} at {p} outside leaf {id} {}", n.bounds));
                    }
                    if !seen.insert(*o) {
                        return Err(format!("{o} appears in more than one leaf"));
                    }
                }
                continue;
            }
            if n.children().len() != m {
                return Err(format!("node {id} has {} children", n.children().len()));
            }
            if !n.objects.is_empty() {
                return Err(format!("inner node {id} holds objects"));
            }
            let (rows, cols) = (n.rows as usize, n.cols as usize);
            let child = |r: usize, c: usize| &self.nodes[n.first_child as usize + r * cols + c];
            let mut sum = 0;
            for r in 0..rows {
                for c in 0..cols {
                    let ch = child(r, c);
                    let b = &ch.bounds;
                    let x_lo = if c == 0 { n.bounds.x_lo } else { child(r, c - 1).bounds.x_hi };
                    let y_lo = if r == 0 { n.bounds.y_lo } else { child(r - 1, c).bounds.y_hi };
                    let x_hi_ok = c + 1 < cols || b.x_hi == n.bounds.x_hi;
                    let y_hi_ok = r + 1 < rows || b.y_hi == n.bounds.y_hi;
                    if b.x_lo != x_lo || b.y_lo != y_lo || !x_hi_ok || !y_hi_ok {
                        return Err(format!("children of {id} do not tile it"));
                    }
                    if ch.parent != Some(id) || ch.depth != n.depth + 1 {
                        return Err(format!("child of {id} has wrong parent/depth"));
                    }
                    sum += ch.count;
                }
            }
            if sum != n.count {
                return Err(format!("node {id} count {} != children sum {sum}", n.count));
            }
            if n.children().all(|c| self.nodes[c as usize].is_leaf()) && self.cfg.below_beta(sum) {
                return Err(format!("all-leaf children of {id} hold {sum} < beta objects"));
            }
            stack.extend(n.children());
        }
        if visited != self.node_count() {
            return Err(format!("{} live nodes but {visited} reachable", self.node_count()));
        }
        if seen.len() != self.members.len() || !seen.iter().all(|o| self.members.contains(o)) {
            return Err("leaf objects differ from the member set".into());
        }
        // Placement must be exactly what a fresh top-down insertion produces.
        for (q, c) in &self.queries {
            let mut expected = HashSet::new();
            let mut st = vec![self.root];
            while let Some(id) = st.pop() {
                let n = &self.nodes[id as usize];
                match classify(c, &n.bounds) {
                    Coverage::Disjoint => {}
                    Coverage::Partial if !n.is_leaf() => st.extend(n.children()),
                    _ => {
                        expected.insert(id);
                    }
                }
            }
            let actual: HashSet<NodeId> = self.node_ids().filter(|id| self.node(*id).ql.contains(q)).collect();
            if actual != expected {
                return Err(format!("{q} placed on {actual:?}, expected {expected:?}"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
