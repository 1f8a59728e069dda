//! How objects and queries are spread over the index workers.

use ddi_core::grid::GridError;
use ddi_core::{classify, CandidateSet, CellId, Circle, Coverage, GlobalGridIndex, Grid, Point, Rect, WorkerId};

/// Which index the workers run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClusterMode {
    /// Grid cells with per-cell trees.
    Drqa,
    /// Grid cells without trees.
    GridOnly,
    /// Every index worker holds a replica of all objects and answers every
    /// query by a full scan; the query worker takes the union.
    Naive,
}

/// Placement of index parts on index workers. A part is a grid cell, or in
/// replica mode the full object replica held by one worker (part `(0, k)`
/// for the k-th index worker).
#[derive(Debug, Clone)]
pub enum Layout {
    Grid(GlobalGridIndex),
    Replica { domain: Rect, workers: Vec<WorkerId> },
}

impl Layout {
    pub fn domain(&self) -> &Rect {
        match self {
            Layout::Grid(g) => g.grid.domain(),
            Layout::Replica { domain, .. } => domain,
        }
    }

    /// Parts a circle touches, by coverage.
    pub fn parts(&self, c: &Circle) -> CandidateSet {
        match self {
            Layout::Grid(g) => g.candidate_cells(c),
            Layout::Replica { domain, workers } => {
                let mut out = CandidateSet::default();
                let set = match classify(c, domain) {
                    Coverage::Disjoint => return out,
                    Coverage::Partial => &mut out.partial,
                    Coverage::Full => &mut out.full,
                };
                set.extend((0..workers.len() as u32).map(|k| CellId::new(0, k)));
                out
            }
        }
    }

    pub fn owner(&self, part: CellId) -> WorkerId {
        match self {
            Layout::Grid(g) => g.worker_of(part),
            Layout::Replica { workers, .. } => workers[part.col as usize],
        }
    }

    /// Splits an object update into per-worker messages: one per worker
    /// whose parts hold either end.
    pub fn route_object(
        &self,
        old: Option<Point>,
        new: Option<Point>,
    ) -> Result<Vec<(WorkerId, Option<Point>, Option<Point>)>, GridError> {
        match self {
            Layout::Grid(g) => {
                let from = old.map(|p| g.locate_cell(&p)).transpose()?.map(|c| g.worker_of(c));
                let to = new.map(|p| g.locate_cell(&p)).transpose()?.map(|c| g.worker_of(c));
                Ok(match (from, to) {
                    (Some(a), Some(b)) if a == b => vec![(a, old, new)],
                    _ => from
                        .map(|a| (a, old, None))
                        .into_iter()
                        .chain(to.map(|b| (b, None, new)))
                        .collect(),
                })
            }
            Layout::Replica { domain, workers } => {
                for p in old.iter().chain(new.iter()) {
                    if !domain.contains_closed(p) {
                        return Err(GridError::OutOfDomain(*p));
                    }
                }
                Ok(workers.iter().map(|w| (*w, old, new)).collect())
            }
        }
    }

    /// What one index worker needs to know to hold its parts.
    pub fn local(&self, worker: WorkerId) -> LocalLayout {
        match self {
            Layout::Grid(g) => LocalLayout::Grid {
                grid: g.grid.clone(),
                cells: g.assignment.cells_of(worker),
            },
            Layout::Replica { domain, workers } => {
                let k = workers.iter().position(|w| *w == worker).expect("worker is part of the layout");
                LocalLayout::Replica {
                    domain: *domain,
                    part: CellId::new(0, k as u32),
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub enum LocalLayout {
    Grid { grid: Grid, cells: Vec<CellId> },
    Replica { domain: Rect, part: CellId },
}
