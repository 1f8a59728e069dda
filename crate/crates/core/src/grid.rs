//! The global grid: `n`×`n` equal cells over the domain, point location,
//! candidate-cell computation for circles and the static cell → worker map.

use crate::geometry::{classify, Circle, Coverage, Point, Rect};
use crate::ids::{CellId, WorkerId};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use thiserror::Error;

pub const DEFAULT_GRID_N: u32 = 100;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("point {0} lies outside the domain")]
    OutOfDomain(Point),
    #[error("grid dimension must be at least 1")]
    EmptyGrid,
    #[error("cannot assign cells to an empty worker list")]
    EmptyWorkerList,
}

/// Cell geometry. Edges are precomputed so that adjacent cells share the
/// exact same boundary value and the last edge equals the domain maximum.
#[derive(Debug, Clone)]
pub struct Grid {
    n: u32,
    domain: Rect,
    xs: Vec<f64>,
    ys: Vec<f64>,
}

fn edges(lo: f64, hi: f64, n: u32) -> Vec<f64> {
    let span = hi - lo;
    let mut e: Vec<f64> = (0..=n).map(|i| lo + span * (i as f64 / n as f64)).collect();
    e[0] = lo;
    e[n as usize] = hi;
    e
}

/// Index of the half-open interval of `edges` holding `v`; the last interval
/// is closed on the right. `v` must lie within `[edges[0], edges[n]]`.
pub(crate) fn interval_of(edges: &[f64], v: f64) -> usize {
    let n = edges.len() - 1;
    let lo = edges[0];
    let span = edges[n] - lo;
    let guess = ((v - lo) / span * n as f64).floor();
    let mut i = if guess.is_nan() || guess < 0.0 {
        0
    } else {
        (guess as usize).min(n - 1)
    };
    while i > 0 && v < edges[i] {
        i -= 1;
    }
    while i + 1 < n && v >= edges[i + 1] {
        i += 1;
    }
    i
}

impl Grid {
    pub fn new(n: u32, domain: Rect) -> Result<Self, GridError> {
        if n == 0 {
            return Err(GridError::EmptyGrid);
        }
        Ok(Grid {
            n,
            domain,
            xs: edges(domain.x_lo, domain.x_hi, n),
            ys: edges(domain.y_lo, domain.y_hi, n),
        })
    }

    /// `n`×`n` grid over the unit square.
    pub fn unit(n: u32) -> Result<Self, GridError> {
        Grid::new(n, Rect::unit())
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn domain(&self) -> &Rect {
        &self.domain
    }

    pub fn cell_count(&self) -> usize {
        self.n as usize * self.n as usize
    }

    pub fn cell_width(&self) -> f64 {
        self.domain.width() / self.n as f64
    }

    pub fn cell_bounds(&self, cell: CellId) -> Rect {
        let (r, c) = (cell.row as usize, cell.col as usize);
        Rect::new(self.xs[c], self.ys[r], self.xs[c + 1], self.ys[r + 1])
    }

    pub fn cells(&self) -> impl Iterator<Item = CellId> + '_ {
        (0..self.cell_count()).map(move |i| CellId::from_linear(i, self.n))
    }

    pub fn in_domain(&self, p: &Point) -> bool {
        self.domain.contains_closed(p)
    }

    /// The unique cell whose half-open bounds hold `p`; points on the domain's
    /// max edges belong to the last row/column.
    pub fn locate_cell(&self, p: &Point) -> Result<CellId, GridError> {
        if !self.in_domain(p) {
            return Err(GridError::OutOfDomain(*p));
        }
        Ok(CellId::new(
            interval_of(&self.ys, p.y) as u32,
            interval_of(&self.xs, p.x) as u32,
        ))
    }

    /// Cells fully or partially covered by `q`. Only the cells overlapping the
    /// circle's bounding box are classified.
    pub fn candidate_cells(&self, q: &Circle) -> CandidateSet {
        let mut out = CandidateSet::default();
        let Some((c0, c1)) = self.span(&self.xs, q.center.x - q.radius, q.center.x + q.radius) else {
            return out;
        };
        let Some((r0, r1)) = self.span(&self.ys, q.center.y - q.radius, q.center.y + q.radius) else {
            return out;
        };
        for row in r0..=r1 {
            for col in c0..=c1 {
                let cell = CellId::new(row as u32, col as u32);
                match classify(q, &self.cell_bounds(cell)) {
                    Coverage::Full => {
                        out.full.insert(cell);
                    }
                    Coverage::Partial => {
                        out.partial.insert(cell);
                    }
                    Coverage::Disjoint => {}
                }
            }
        }
        out
    }

    /// Range of interval indices touched by the closed interval `[lo, hi]`.
    fn span(&self, edges: &[f64], lo: f64, hi: f64) -> Option<(usize, usize)> {
        let n = edges.len() - 1;
        let (dlo, dhi) = (edges[0], edges[n]);
        if hi < dlo || lo > dhi {
            return None;
        }
        let lo = lo.max(dlo);
        let hi = hi.min(dhi);
        // Widened by one cell on each side: `center ± radius` is rounded, so a
        // cell that classify reports as touched can sit just outside it.
        let first = interval_of(edges, lo).saturating_sub(1);
        let last = (interval_of(edges, hi) + 1).min(n - 1);
        Some((first, last))
    }
}

/// Candidate cells of one query, split by coverage class.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub full: BTreeSet<CellId>,
    pub partial: BTreeSet<CellId>,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.full.len() + self.partial.len()
    }

    pub fn is_empty(&self) -> bool {
        self.full.is_empty() && self.partial.is_empty()
    }

    pub fn contains(&self, cell: &CellId) -> bool {
        self.full.contains(cell) || self.partial.contains(cell)
    }

    pub fn class_of(&self, cell: &CellId) -> Coverage {
        if self.full.contains(cell) {
            Coverage::Full
        } else if self.partial.contains(cell) {
            Coverage::Partial
        } else {
            Coverage::Disjoint
        }
    }

    /// All candidate cells in ascending order.
    pub fn cells(&self) -> BTreeSet<CellId> {
        self.full.union(&self.partial).copied().collect()
    }
}

/// Static cell → worker map: contiguous row-major blocks whose sizes differ
/// by at most one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellAssignment {
    n: u32,
    owners: Vec<WorkerId>,
}

impl CellAssignment {
    pub fn worker_of(&self, cell: CellId) -> WorkerId {
        self.owners[cell.linear(self.n)]
    }

    pub fn cells_of(&self, worker: WorkerId) -> Vec<CellId> {
        self.owners
            .iter()
            .enumerate()
            .filter(|(_, w)| **w == worker)
            .map(|(i, _)| CellId::from_linear(i, self.n))
            .collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = (CellId, WorkerId)> + '_ {
        self.owners
            .iter()
            .enumerate()
            .map(|(i, w)| (CellId::from_linear(i, self.n), *w))
    }
}

pub fn assign_cells(grid: &Grid, workers: &[WorkerId]) -> Result<CellAssignment, GridError> {
    if workers.is_empty() {
        return Err(GridError::EmptyWorkerList);
    }
    let total = grid.cell_count();
    let base = total / workers.len();
    let extra = total % workers.len();
    let mut owners = Vec::with_capacity(total);
    for (k, w) in workers.iter().enumerate() {
        let size = base + usize::from(k < extra);
        owners.extend(std::iter::repeat_n(*w, size));
    }
    debug_assert_eq!(owners.len(), total);
    Ok(CellAssignment { n: grid.n(), owners })
}

/// Grid geometry together with the worker assignment; immutable once built.
#[derive(Debug, Clone)]
pub struct GlobalGridIndex {
    pub grid: Grid,
    pub assignment: CellAssignment,
}

impl GlobalGridIndex {
    pub fn new(grid: Grid, workers: &[WorkerId]) -> Result<Self, GridError> {
        let assignment = assign_cells(&grid, workers)?;
        Ok(GlobalGridIndex { grid, assignment })
    }

    pub fn locate_cell(&self, p: &Point) -> Result<CellId, GridError> {
        self.grid.locate_cell(p)
    }

    pub fn candidate_cells(&self, q: &Circle) -> CandidateSet {
        self.grid.candidate_cells(q)
    }

    pub fn worker_of(&self, cell: CellId) -> WorkerId {
        self.assignment.worker_of(cell)
    }
}
