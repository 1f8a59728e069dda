//! Query placement: queries whose candidate cells overlap go to the same
//! query worker so that they can share cached search work.

use ddi_core::{CandidateSet, CellId, QueryId, WorkerId};
use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};
use thiserror::Error;

pub const DEFAULT_RECENT_WINDOW: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("no query workers to route to")]
    NoQueryWorkers,
}

/// |A ∩ B| / |A ∪ B| over the candidate cells of both sets, 0 when both are
/// empty.
pub fn jaccard(a: &CandidateSet, b: &CandidateSet) -> f64 {
    jaccard_cells(&a.cells(), &b.cells())
}

fn jaccard_cells(a: &BTreeSet<CellId>, b: &BTreeSet<CellId>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

#[derive(Debug, Clone)]
pub struct RoutingTable {
    workers: Vec<WorkerId>,
    assignment: HashMap<QueryId, WorkerId>,
    load: BTreeMap<WorkerId, usize>,
    recent: VecDeque<(QueryId, BTreeSet<CellId>)>,
    window: usize,
}

impl RoutingTable {
    pub fn new(workers: Vec<WorkerId>, window: usize) -> Self {
        let load = workers.iter().map(|w| (*w, 0)).collect();
        RoutingTable {
            workers,
            assignment: HashMap::new(),
            load,
            recent: VecDeque::new(),
            window: window.max(1),
        }
    }

    pub fn worker_of(&self, q: QueryId) -> Option<WorkerId> {
        self.assignment.get(&q).copied()
    }

    pub fn load(&self, w: WorkerId) -> usize {
        self.load.get(&w).copied().unwrap_or(0)
    }

    /// Picks a worker for `q`: the worker of the most similar recent query
    /// if that similarity reaches `threshold` (ties: higher similarity, then
    /// lower worker id), otherwise the least loaded worker (ties: lower id).
    pub fn route(&mut self, q: QueryId, gr: &CandidateSet, threshold: f64) -> Result<WorkerId, RoutingError> {
        if self.workers.is_empty() {
            return Err(RoutingError::NoQueryWorkers);
        }
        let cells = gr.cells();
        let mut best: Option<(f64, WorkerId)> = None;
        for (other, other_cells) in &self.recent {
            let Some(w) = self.assignment.get(other) else {
                continue;
            };
            let s = jaccard_cells(&cells, other_cells);
            if s < threshold {
                continue;
            }
            best = match best {
                Some((bs, bw)) if bs > s || (bs == s && bw <= *w) => Some((bs, bw)),
                _ => Some((s, *w)),
            };
        }
        let worker = match best {
            Some((_, w)) => w,
            None => *self
                .workers
                .iter()
                .min_by_key(|w| (self.load(**w), **w))
                .expect("checked non-empty"),
        };
        if let Some(prev) = self.assignment.insert(q, worker) {
            *self.load.get_mut(&prev).expect("known worker") -= 1;
        }
        *self.load.get_mut(&worker).expect("known worker") += 1;
        self.recent.retain(|(other, _)| *other != q);
        self.recent.push_back((q, cells));
        while self.recent.len() > self.window {
            self.recent.pop_front();
        }
        Ok(worker)
    }

    /// Forgets `q`; its worker's load drops by one.
    pub fn remove(&mut self, q: QueryId) {
        if let Some(w) = self.assignment.remove(&q) {
            *self.load.get_mut(&w).expect("known worker") -= 1;
        }
        self.recent.retain(|(other, _)| *other != q);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(cells: &[(u32, u32)]) -> CandidateSet {
        let mut s = CandidateSet::default();
        s.partial.extend(cells.iter().map(|(r, c)| CellId::new(*r, *c)));
        s
    }

    #[test]
    fn jaccard_examples() {
        let (a, b, c) = ((0, 0), (0, 1), (0, 2));
        assert!((jaccard(&set(&[a, b]), &set(&[b, c])) - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(jaccard(&set(&[a, b]), &set(&[a, b])), 1.0);
        assert_eq!(jaccard(&set(&[a]), &set(&[c])), 0.0);
        assert_eq!(jaccard(&set(&[]), &set(&[])), 0.0);
        let mut full = CandidateSet::default();
        full.full.insert(CellId::new(0, 0));
        assert_eq!(jaccard(&full, &set(&[a])), 1.0);
    }

    #[test]
    fn routing_examples() {
        let mut rt = RoutingTable::new(vec![WorkerId(5), WorkerId(6)], 16);
        assert_eq!(rt.route(QueryId(1), &set(&[(0, 0), (0, 1)]), 0.5), Ok(WorkerId(5)));
        assert_eq!(rt.route(QueryId(2), &set(&[(0, 0), (0, 1)]), 0.5), Ok(WorkerId(5)));
        assert_eq!(rt.route(QueryId(3), &set(&[(9, 9)]), 0.5), Ok(WorkerId(6)));
        assert_eq!(rt.load(WorkerId(5)), 2);
        rt.remove(QueryId(1));
        rt.remove(QueryId(2));
        assert_eq!(rt.load(WorkerId(5)), 0);
        assert_eq!(rt.route(QueryId(4), &set(&[(0, 0), (0, 1)]), 0.5), Ok(WorkerId(5)));
        assert_eq!(
            RoutingTable::new(vec![], 4).route(QueryId(1), &set(&[]), 0.5),
            Err(RoutingError::NoQueryWorkers)
        );
    }

    #[test]
    fn ties_prefer_higher_similarity_then_lower_worker() {
        let mut rt = RoutingTable::new(vec![WorkerId(1), WorkerId(2), WorkerId(3)], 16);
        rt.route(QueryId(1), &set(&[(0, 0)]), 1.0).unwrap(); // w1
        rt.route(QueryId(2), &set(&[(5, 5)]), 1.0).unwrap(); // w2
        rt.route(QueryId(3), &set(&[(7, 7)]), 1.0).unwrap(); // w3
        // similar to q1 and q2 equally (1/2 each): lower worker id wins
        assert_eq!(rt.route(QueryId(4), &set(&[(0, 0), (5, 5)]), 0.4), Ok(WorkerId(1)));
        // half similar to both q1 (w1) and q3 (w3)
        assert_eq!(rt.route(QueryId(5), &set(&[(7, 7), (0, 0)]), 0.4), Ok(WorkerId(1)));
        // identical to q3: the higher similarity beats w1's lower id
        assert_eq!(rt.route(QueryId(6), &set(&[(7, 7)]), 0.4), Ok(WorkerId(3)));
    }

    #[test]
    fn window_is_bounded() {
        let mut rt = RoutingTable::new(vec![WorkerId(1), WorkerId(2)], 2);
        rt.route(QueryId(1), &set(&[(0, 0)]), 0.5).unwrap();
        rt.route(QueryId(2), &set(&[(1, 1)]), 0.5).unwrap();
        rt.route(QueryId(3), &set(&[(2, 2)]), 0.5).unwrap();
        assert_eq!(rt.recent.len(), 2);
        // q1 fell out of the window, so its twin is load balanced instead
        assert_eq!(rt.route(QueryId(4), &set(&[(0, 0)]), 0.5), Ok(WorkerId(2)));
    }
}
