//! Synthetic moving-object workloads: uniform, Gaussian and Zipf object
//! placement, reflective random-waypoint movement, query streams, and the
//! JSONL event format used to store them.

use crate::engine::ObjectUpdate;
use crate::geometry::{Circle, Point, Rect};
use crate::grid::{Grid, DEFAULT_GRID_N};
use crate::ids::{ObjectId, QueryId, Tick};
use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::io::{BufRead, Write};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum WorkloadError {
    #[error("invalid workload: {0}")]
    InvalidSpec(String),
    #[error("line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Distribution2d {
    Ud,
    Gd,
    Zipf,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gaussian {
    pub mean_x: f64,
    pub mean_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
}

impl Default for Gaussian {
    fn default() -> Self {
        Gaussian {
            mean_x: 0.5,
            mean_y: 0.5,
            sigma_x: 0.15,
            sigma_y: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WorkloadSpec {
    pub distribution: Distribution2d,
    pub n_objects: usize,
    pub n_queries: usize,
    pub radius: f64,
    /// Domain units per tick.
    pub object_speed: f64,
    pub query_speed: f64,
    pub ticks: u64,
    pub seed: u64,
    pub zipf_s: f64,
    /// Zipf cells are ranked by distance from this point.
    pub hotspot: Point,
    pub gaussian: Gaussian,
    /// Cells used to apportion objects per density.
    pub grid_n: u32,
    pub domain: Rect,
    /// Ticks each query lives; a replacement is registered when one
    /// expires. `None` keeps every query for the whole run.
    pub query_lifetime: Option<u64>,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            distribution: Distribution2d::Ud,
            n_objects: 10_000,
            n_queries: 100,
            radius: 0.02,
            object_speed: 0.001,
            query_speed: 0.001,
            ticks: 10,
            seed: 1,
            zipf_s: 1.0,
            hotspot: Point::new(0.5, 0.5),
            gaussian: Gaussian::default(),
            grid_n: DEFAULT_GRID_N,
            domain: Rect::unit(),
            query_lifetime: None,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), WorkloadError> {
        let bad = |m: &str| Err(WorkloadError::InvalidSpec(m.to_string()));
        if !(self.radius.is_finite() && self.radius > 0.0) {
            return bad("radius must be finite and positive");
        }
        if !(self.object_speed.is_finite() && self.object_speed >= 0.0) {
            return bad("object speed must be finite and non-negative");
        }
        if !(self.query_speed.is_finite() && self.query_speed >= 0.0) {
            return bad("query speed must be finite and non-negative");
        }
        if !(self.zipf_s.is_finite() && self.zipf_s >= 0.0) {
            return bad("zipf exponent must be finite and non-negative");
        }
        let g = &self.gaussian;
        if !(g.sigma_x >= 0.0 && g.sigma_y >= 0.0 && g.mean_x.is_finite() && g.mean_y.is_finite()) {
            return bad("gaussian sigma must be non-negative and mean finite");
        }
        if self.grid_n == 0 {
            return bad("grid_n must be at least 1");
        }
        if !(self.domain.width() > 0.0 && self.domain.height() > 0.0) {
            return bad("domain must have positive area");
        }
        if self.query_lifetime == Some(0) {
            return bad("query lifetime must be at least one tick");
        }
        Ok(())
    }
}

/// Probability of each grid cell under the spec's distribution.
#[derive(Debug, Clone)]
pub struct CellDensity {
    grid: Grid,
    weights: Vec<f64>,
}

impl CellDensity {
    pub fn new(spec: &WorkloadSpec) -> Result<Self, WorkloadError> {
        spec.validate()?;
        let grid = Grid::new(spec.grid_n, spec.domain).map_err(|e| WorkloadError::InvalidSpec(e.to_string()))?;
        let mut weights = match spec.distribution {
            Distribution2d::Ud => grid
                .cells()
                .map(|c| {
                    let b = grid.cell_bounds(c);
                    b.width() * b.height()
                })
                .collect(),
            Distribution2d::Gd => gaussian_weights(&grid, &spec.gaussian),
            Distribution2d::Zipf => zipf_weights(&grid, &spec.hotspot, spec.zipf_s),
        };
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(WorkloadError::InvalidSpec("distribution has no mass in the domain".into()));
        }
        for w in &mut weights {
            *w /= total;
        }
        Ok(CellDensity { grid, weights })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Per-cell probabilities in row-major order; they sum to 1.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Integer per-cell counts summing to `n`, by largest remainder of
    /// `weight * n`.
    pub fn counts(&self, n: usize) -> Vec<usize> {
        let exact: Vec<f64> = self.weights.iter().map(|w| w * n as f64).collect();
        let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
        let assigned: usize = counts.iter().sum();
        let mut order: Vec<usize> = (0..exact.len()).collect();
        order.sort_by(|a, b| {
            let (ra, rb) = (exact[*a] - exact[*a].floor(), exact[*b] - exact[*b].floor());
            rb.total_cmp(&ra).then(a.cmp(b))
        });
        for &i in order.iter().take(n.saturating_sub(assigned)) {
            counts[i] += 1;
        }
        counts
    }

    /// A point drawn from the density: a cell by weight, then uniform in it.
    pub fn sample(&self, rng: &mut impl Rng) -> Point {
        let pick = WeightedIndex::new(&self.weights).expect("weights are normalized");
        let cell = crate::ids::CellId::from_linear(pick.sample(rng), self.grid.n());
        uniform_in(&self.grid.cell_bounds(cell), rng)
    }
}

fn uniform_in(r: &Rect, rng: &mut impl Rng) -> Point {
    Point::new(rng.gen_range(r.x_lo..r.x_hi), rng.gen_range(r.y_lo..r.y_hi))
}

/// Mass of a 1-d normal over each grid interval; a zero sigma puts all of
/// it on the interval holding the mean.
fn axis_mass(edges: &[f64], mean: f64, sigma: f64) -> Vec<f64> {
    let n = edges.len() - 1;
    if sigma == 0.0 {
        let mut m = vec![0.0; n];
        let clamped = mean.clamp(edges[0], edges[n]);
        m[crate::grid::interval_of(edges, clamped)] = 1.0;
        return m;
    }
    let dist = Normal::new(mean, sigma).expect("sigma checked positive");
    edges.windows(2).map(|w| dist.cdf(w[1]) - dist.cdf(w[0])).collect()
}

fn gaussian_weights(grid: &Grid, g: &Gaussian) -> Vec<f64> {
    let n = grid.n() as usize;
    let d = grid.domain();
    let xs: Vec<f64> = (0..=n).map(|i| grid_edge(d.x_lo, d.x_hi, i, n)).collect();
    let ys: Vec<f64> = (0..=n).map(|i| grid_edge(d.y_lo, d.y_hi, i, n)).collect();
    let mx = axis_mass(&xs, g.mean_x, g.sigma_x);
    let my = axis_mass(&ys, g.mean_y, g.sigma_y);
    grid.cells().map(|c| my[c.row as usize] * mx[c.col as usize]).collect()
}

fn grid_edge(lo: f64, hi: f64, i: usize, n: usize) -> f64 {
    if i == n {
        hi
    } else {
        lo + (hi - lo) * (i as f64 / n as f64)
    }
}

/// Cells ranked by distance of their center from `hotspot` (ties by
/// row-major index); the cell of rank `k` (from 1) gets weight `k^-s`.
fn zipf_weights(grid: &Grid, hotspot: &Point, s: f64) -> Vec<f64> {
    let mut order: Vec<(f64, usize)> = grid
        .cells()
        .enumerate()
        .map(|(i, c)| (grid.cell_bounds(c).center().dist2(hotspot), i))
        .collect();
    order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut w = vec![0.0; order.len()];
    for (rank, (_, i)) in order.iter().enumerate() {
        w[*i] = ((rank + 1) as f64).powf(-s);
    }
    w
}

/// Initial object placement. Uniform placement draws every object over the
/// whole domain; the other distributions fix per-cell counts from the
/// density first.
pub fn generate_objects(spec: &WorkloadSpec) -> Result<Vec<(ObjectId, Point)>, WorkloadError> {
    let density = CellDensity::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    Ok(place_objects(spec, &density, &mut rng))
}

fn place_objects(spec: &WorkloadSpec, density: &CellDensity, rng: &mut ChaCha8Rng) -> Vec<(ObjectId, Point)> {
    let mut out = Vec::with_capacity(spec.n_objects);
    match spec.distribution {
        Distribution2d::Ud => {
            for i in 0..spec.n_objects {
                out.push((ObjectId(i as u64), uniform_in(&spec.domain, rng)));
            }
        }
        _ => {
            let grid = density.grid();
            for (i, k) in density.counts(spec.n_objects).into_iter().enumerate() {
                let b = grid.cell_bounds(crate::ids::CellId::from_linear(i, grid.n()));
                for _ in 0..k {
                    out.push((ObjectId(out.len() as u64), uniform_in(&b, rng)));
                }
            }
        }
    }
    out
}

/// A query as generated: its circle and lifetime `[t_start, t_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuerySpec {
    pub id: QueryId,
    pub circle: Circle,
    pub t_start: Tick,
    pub t_end: Tick,
}

/// The initial queries of a run; centers follow the object distribution.
pub fn generate_queries(spec: &WorkloadSpec) -> Result<Vec<QuerySpec>, WorkloadError> {
    let mut sim = Simulation::new(spec.clone())?;
    Ok(sim.initial().new_queries)
}

/// Points that move at a fixed speed along per-point headings, reflecting
/// off the domain edges. A reflection draws a new heading.
#[derive(Debug, Clone)]
struct Movers {
    pos: Vec<Point>,
    heading: Vec<f64>,
}

impl Movers {
    fn push(&mut self, p: Point, rng: &mut impl Rng) {
        self.pos.push(p);
        self.heading.push(rng.gen_range(0.0..TAU));
    }

    /// Advances point `i`; returns the old and new position.
    fn step(&mut self, i: usize, speed: f64, domain: &Rect, rng: &mut impl Rng) -> (Point, Point) {
        let old = self.pos[i];
        if speed == 0.0 {
            return (old, old);
        }
        let h = self.heading[i];
        let (x, fx) = fold(old.x + speed * h.cos(), domain.x_lo, domain.x_hi);
        let (y, fy) = fold(old.y + speed * h.sin(), domain.y_lo, domain.y_hi);
        if fx || fy {
            self.heading[i] = rng.gen_range(0.0..TAU);
        }
        let new = Point::new(x, y);
        self.pos[i] = new;
        (old, new)
    }
}

/// Reflects `v` into `[lo, hi]`; the flag tells whether it had to.
fn fold(v: f64, lo: f64, hi: f64) -> (f64, bool) {
    if (lo..=hi).contains(&v) {
        return (v, false);
    }
    let len = hi - lo;
    let t = (v - lo).rem_euclid(2.0 * len);
    let r = if t > len { 2.0 * len - t } else { t };
    ((lo + r).clamp(lo, hi), true)
}

/// Everything that happens in one tick, in application order: object
/// updates, expiry of queries with `t_end <= tick`, new queries, then
/// moves of the remaining queries.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TickBatch {
    pub tick: Tick,
    pub objects: Vec<ObjectUpdate>,
    pub new_queries: Vec<QuerySpec>,
    pub moved_queries: Vec<(QueryId, Circle)>,
}

/// Deterministic generator of a run's tick batches.
#[derive(Debug, Clone)]
pub struct Simulation {
    spec: WorkloadSpec,
    density: CellDensity,
    obj_rng: ChaCha8Rng,
    query_rng: ChaCha8Rng,
    objects: Movers,
    queries: Movers,
    // slot -> (id, t_end)
    slots: Vec<(QueryId, Tick)>,
    next_query: u64,
    tick: Tick,
}

impl Simulation {
    pub fn new(spec: WorkloadSpec) -> Result<Self, WorkloadError> {
        let density = CellDensity::new(&spec)?;
        let obj_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut query_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        query_rng.set_stream(1);
        Ok(Simulation {
            spec,
            density,
            obj_rng,
            query_rng,
            objects: Movers { pos: Vec::new(), heading: Vec::new() },
            queries: Movers { pos: Vec::new(), heading: Vec::new() },
            slots: Vec::new(),
            next_query: 0,
            tick: 0,
        })
    }

    pub fn spec(&self) -> &WorkloadSpec {
        &self.spec
    }

    pub fn density(&self) -> &CellDensity {
        &self.density
    }

    /// Current object positions, indexed by object id.
    pub fn object_positions(&self) -> &[Point] {
        &self.objects.pos
    }

    /// Tick 0: all objects and queries are inserted.
    pub fn initial(&mut self) -> TickBatch {
        assert_eq!(self.tick, 0, "initial batch already produced");
        let placed = place_objects(&self.spec, &self.density, &mut self.obj_rng);
        let mut objects = Vec::with_capacity(placed.len());
        for (id, p) in placed {
            self.objects.push(p, &mut self.obj_rng);
            objects.push(ObjectUpdate::insert(id, p));
        }
        let mut new_queries = Vec::with_capacity(self.spec.n_queries);
        for _ in 0..self.spec.n_queries {
            let t_end = match self.spec.query_lifetime {
                None => self.spec.ticks + 1,
                // stagger the first generation so expiries spread out
                Some(l) => self.query_rng.gen_range(1..=l),
            };
            new_queries.push(self.new_query(None, t_end));
        }
        TickBatch {
            tick: 0,
            objects,
            new_queries,
            moved_queries: Vec::new(),
        }
    }

    fn new_query(&mut self, slot: Option<usize>, t_end: Tick) -> QuerySpec {
        let center = self.density.sample(&mut self.query_rng);
        let id = QueryId(self.next_query);
        self.next_query += 1;
        match slot {
            None => {
                self.queries.push(center, &mut self.query_rng);
                self.slots.push((id, t_end));
            }
            Some(s) => {
                self.queries.pos[s] = center;
                self.queries.heading[s] = self.query_rng.gen_range(0.0..TAU);
                self.slots[s] = (id, t_end);
            }
        }
        QuerySpec {
            id,
            circle: Circle::new(center, self.spec.radius),
            t_start: self.tick,
            t_end,
        }
    }

    /// The next tick's batch, or `None` after the configured tick count.
    pub fn next_tick(&mut self) -> Option<TickBatch> {
        if self.tick >= self.spec.ticks {
            return None;
        }
        self.tick += 1;
        let tick = self.tick;
        let mut batch = TickBatch {
            tick,
            ..TickBatch::default()
        };
        if self.spec.object_speed > 0.0 {
            for i in 0..self.objects.pos.len() {
                let (old, new) = self.objects.step(i, self.spec.object_speed, &self.spec.domain, &mut self.obj_rng);
                batch.objects.push(ObjectUpdate::moved(ObjectId(i as u64), old, new));
            }
        }
        for s in 0..self.slots.len() {
            let (id, t_end) = self.slots[s];
            if t_end <= tick {
                let lifetime = self.spec.query_lifetime.unwrap_or(u64::MAX - tick);
                let q = self.new_query(Some(s), tick + lifetime);
                batch.new_queries.push(q);
            } else if self.spec.query_speed > 0.0 {
                let (_, new) = self.queries.step(s, self.spec.query_speed, &self.spec.domain, &mut self.query_rng);
                batch.moved_queries.push((id, Circle::new(new, self.spec.radius)));
            }
        }
        Some(batch)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    ObjectInsert,
    ObjectMove,
    ObjectRemove,
    QueryInsert,
    QueryMove,
}

/// One JSONL record. Moves carry the new position; the old one is implied
/// by the stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub tick: Tick,
    pub kind: EventKind,
    pub id: u64,
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<Tick>,
}

impl TickBatch {
    pub fn events(&self) -> Vec<Event> {
        let mut out = Vec::new();
        for u in &self.objects {
            let (kind, p) = match (u.old, u.new) {
                (None, Some(p)) => (EventKind::ObjectInsert, p),
                (Some(_), Some(p)) => (EventKind::ObjectMove, p),
                (Some(p), None) => (EventKind::ObjectRemove, p),
                (None, None) => continue,
            };
            out.push(Event {
                tick: self.tick,
                kind,
                id: u.id.0,
                x: p.x,
                y: p.y,
                r: None,
                t_end: None,
            });
        }
        for q in &self.new_queries {
            out.push(Event {
                tick: self.tick,
                kind: EventKind::QueryInsert,
                id: q.id.0,
                x: q.circle.center.x,
                y: q.circle.center.y,
                r: Some(q.circle.radius),
                t_end: Some(q.t_end),
            });
        }
        for (id, c) in &self.moved_queries {
            out.push(Event {
                tick: self.tick,
                kind: EventKind::QueryMove,
                id: id.0,
                x: c.center.x,
                y: c.center.y,
                r: Some(c.radius),
                t_end: None,
            });
        }
        out
    }
}

/// Rebuilds tick batches from events, tracking object positions to fill in
/// the old end of each move.
pub fn batches_from_events(events: &[Event]) -> Result<Vec<TickBatch>, WorkloadError> {
    let mut batches: Vec<TickBatch> = Vec::new();
    let mut positions: BTreeMap<u64, Point> = BTreeMap::new();
    let mut radii: BTreeMap<u64, f64> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        let bad = |m: String| WorkloadError::InvalidSpec(format!("event {}: {m}", i + 1));
        if batches.last().is_none_or(|b| b.tick < e.tick) {
            batches.push(TickBatch {
                tick: e.tick,
                ..TickBatch::default()
            });
        } else if batches.last().is_some_and(|b| b.tick > e.tick) {
            return Err(bad("ticks must not decrease".into()));
        }
        let batch = batches.last_mut().expect("pushed above");
        let p = Point::new(e.x, e.y);
        if !p.is_finite() {
            return Err(bad("non-finite coordinates".into()));
        }
        let id = ObjectId(e.id);
        match e.kind {
            EventKind::ObjectInsert => {
                if positions.insert(e.id, p).is_some() {
                    return Err(bad(format!("object {} inserted twice", e.id)));
                }
                batch.objects.push(ObjectUpdate::insert(id, p));
            }
            EventKind::ObjectMove => {
                let old = positions
                    .insert(e.id, p)
                    .ok_or_else(|| bad(format!("object {} moved before insertion", e.id)))?;
                batch.objects.push(ObjectUpdate::moved(id, old, p));
            }
            EventKind::ObjectRemove => {
                let old = positions
                    .remove(&e.id)
                    .ok_or_else(|| bad(format!("object {} removed before insertion", e.id)))?;
                batch.objects.push(ObjectUpdate::remove(id, old));
            }
            EventKind::QueryInsert => {
                let r = e.r.ok_or_else(|| bad("query insert without r".into()))?;
                let circle = Circle::try_new(p, r).ok_or_else(|| bad(format!("invalid radius {r}")))?;
                radii.insert(e.id, r);
                batch.new_queries.push(QuerySpec {
                    id: QueryId(e.id),
                    circle,
                    t_start: e.tick,
                    t_end: e.t_end.unwrap_or(Tick::MAX),
                });
            }
            EventKind::QueryMove => {
                let r = match e.r {
                    Some(r) => r,
                    None => *radii
                        .get(&e.id)
                        .ok_or_else(|| bad(format!("query {} moved before insertion", e.id)))?,
                };
                let circle = Circle::try_new(p, r).ok_or_else(|| bad(format!("invalid radius {r}")))?;
                batch.moved_queries.push((QueryId(e.id), circle));
            }
        }
    }
    Ok(batches)
}

pub fn write_jsonl<'a>(mut w: impl Write, events: impl IntoIterator<Item = &'a Event>) -> Result<(), WorkloadError> {
    for e in events {
        serde_json::to_writer(&mut w, e).map_err(|source| WorkloadError::Parse { line: 0, source })?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_jsonl(r: impl BufRead) -> Result<Vec<Event>, WorkloadError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| WorkloadError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(distribution: Distribution2d, n_objects: usize) -> WorkloadSpec {
        WorkloadSpec {
            distribution,
            n_objects,
            ..WorkloadSpec::default()
        }
    }

    #[test]
    fn ud_counts_are_multinomial() {
        let s = spec(Distribution2d::Ud, 10_000);
        let objs = generate_objects(&s).unwrap();
        let grid = Grid::unit(100).unwrap();
        let mut counts = vec![0usize; grid.cell_count()];
        for (_, p) in &objs {
            counts[grid.locate_cell(p).unwrap().linear(100)] += 1;
        }
        // Expected 1 per cell with variance ~1: every count within 4 sigma
        // would be too strict over 10^4 cells, so check the chi-square sum.
        let chi2: f64 = counts.iter().map(|c| (*c as f64 - 1.0).powi(2)).sum();
        let dof = 9999.0_f64;
        assert!((chi2 - dof).abs() < 4.0 * (2.0 * dof).sqrt(), "chi2 {chi2}");
        assert!(counts.iter().all(|c| *c <= 9));
    }

    #[test]
    fn gd_zero_sigma_puts_everything_in_mean_cell() {
        let mut s = spec(Distribution2d::Gd, 500);
        s.gaussian = Gaussian {
            mean_x: 0.305,
            mean_y: 0.715,
            sigma_x: 0.0,
            sigma_y: 0.0,
        };
        let grid = Grid::unit(100).unwrap();
        let want = grid.locate_cell(&Point::new(0.305, 0.715)).unwrap();
        for (_, p) in generate_objects(&s).unwrap() {
            assert_eq!(grid.locate_cell(&p).unwrap(), want);
        }
    }

    #[test]
    fn empty_specs() {
        assert!(generate_objects(&spec(Distribution2d::Zipf, 0)).unwrap().is_empty());
        let s = WorkloadSpec {
            n_queries: 0,
            ..WorkloadSpec::default()
        };
        assert!(generate_queries(&s).unwrap().is_empty());
        let bad = WorkloadSpec {
            radius: -1.0,
            ..WorkloadSpec::default()
        };
        assert!(matches!(generate_objects(&bad), Err(WorkloadError::InvalidSpec(_))));
    }

    #[test]
    fn counts_follow_weights_exactly() {
        for d in [Distribution2d::Gd, Distribution2d::Zipf] {
            let s = WorkloadSpec {
                grid_n: 20,
                ..spec(d, 12_345)
            };
            let density = CellDensity::new(&s).unwrap();
            let counts = density.counts(12_345);
            assert_eq!(counts.iter().sum::<usize>(), 12_345);
            for (c, w) in counts.iter().zip(density.weights()) {
                assert!((*c as f64 - w * 12_345.0).abs() < 1.0);
            }
        }
    }

    #[test]
    fn zipf_rank_one_is_the_hotspot_cell() {
        let s = WorkloadSpec {
            grid_n: 10,
            hotspot: Point::new(0.22, 0.81),
            ..spec(Distribution2d::Zipf, 1000)
        };
        let d = CellDensity::new(&s).unwrap();
        let top = (0..d.weights().len()).max_by(|a, b| d.weights()[*a].total_cmp(&d.weights()[*b])).unwrap();
        assert_eq!(crate::ids::CellId::from_linear(top, 10), crate::ids::CellId::new(8, 2));
        let total: f64 = (1..=100).map(|k| 1.0 / k as f64).sum();
        assert!((d.weights()[top] - 1.0 / total).abs() < 1e-12);
    }

    #[test]
    fn gd_histogram_correlates_with_density() {
        let s = WorkloadSpec {
            grid_n: 50,
            ..spec(Distribution2d::Gd, 100_000)
        };
        let d = CellDensity::new(&s).unwrap();
        let grid = d.grid().clone();
        let mut hist = vec![0.0; grid.cell_count()];
        for (_, p) in generate_objects(&s).unwrap() {
            hist[grid.locate_cell(&p).unwrap().linear(50)] += 1.0;
        }
        let w = d.weights();
        let n = w.len() as f64;
        let (mh, mw) = (hist.iter().sum::<f64>() / n, w.iter().sum::<f64>() / n);
        let cov: f64 = hist.iter().zip(w).map(|(h, w)| (h - mh) * (w - mw)).sum();
        let vh: f64 = hist.iter().map(|h| (h - mh).powi(2)).sum();
        let vw: f64 = w.iter().map(|w| (w - mw).powi(2)).sum();
        assert!(cov / (vh * vw).sqrt() > 0.9);
    }

    #[test]
    fn zero_speed_keeps_positions() {
        let s = WorkloadSpec {
            n_objects: 100,
            n_queries: 5,
            object_speed: 0.0,
            query_speed: 0.0,
            ..WorkloadSpec::default()
        };
        let mut sim = Simulation::new(s).unwrap();
        sim.initial();
        let b = sim.next_tick().unwrap();
        assert!(b.objects.is_empty() && b.moved_queries.is_empty());
    }

    #[test]
    fn steps_have_the_configured_length_and_stay_inside() {
        let s = WorkloadSpec {
            n_objects: 500,
            n_queries: 10,
            object_speed: 0.01,
            ticks: 1000,
            ..spec(Distribution2d::Zipf, 500)
        };
        let mut sim = Simulation::new(s).unwrap();
        sim.initial();
        let mut reflected = 0;
        while let Some(b) = sim.next_tick() {
            for u in &b.objects {
                let (a, c) = (u.old.unwrap(), u.new.unwrap());
                assert!(Rect::unit().contains_closed(&c));
                let len = a.dist2(&c).sqrt();
                if (len - 0.01).abs() > 1e-12 {
                    reflected += 1;
                    assert!(len < 0.01 + 1e-12);
                }
            }
            for (_, c) in &b.moved_queries {
                assert!(Rect::unit().contains_closed(&c.center));
            }
        }
        assert!(reflected < 500 * 1000 / 20);
    }

    #[test]
    fn fold_reflects() {
        assert_eq!(fold(0.5, 0.0, 1.0), (0.5, false));
        assert_eq!(fold(-0.25, 0.0, 1.0), (0.25, true));
        assert_eq!(fold(1.25, 0.0, 1.0), (0.75, true));
        assert_eq!(fold(2.5, 0.0, 1.0), (0.5, true));
    }

    #[test]
    fn lifetimes_churn_and_keep_query_count() {
        let s = WorkloadSpec {
            n_objects: 50,
            n_queries: 20,
            ticks: 40,
            query_lifetime: Some(5),
            ..WorkloadSpec::default()
        };
        let mut sim = Simulation::new(s).unwrap();
        let first = sim.initial();
        let mut live: BTreeMap<QueryId, Tick> = first.new_queries.iter().map(|q| (q.id, q.t_end)).collect();
        let mut inserted = first.new_queries.len();
        while let Some(b) = sim.next_tick() {
            live.retain(|_, t_end| *t_end > b.tick);
            for q in &b.new_queries {
                assert_eq!(q.t_start, b.tick);
                live.insert(q.id, q.t_end);
            }
            inserted += b.new_queries.len();
            assert_eq!(live.len(), 20);
            for (id, _) in &b.moved_queries {
                assert!(live.contains_key(id));
            }
        }
        assert!(inserted > 100);
    }

    #[test]
    fn stream_round_trips_through_jsonl() {
        let s = WorkloadSpec {
            distribution: Distribution2d::Gd,
            n_objects: 200,
            n_queries: 8,
            ticks: 5,
            query_lifetime: Some(2),
            ..WorkloadSpec::default()
        };
        let run = |s: WorkloadSpec| {
            let mut sim = Simulation::new(s).unwrap();
            let mut batches = vec![sim.initial()];
            while let Some(b) = sim.next_tick() {
                batches.push(b);
            }
            batches
        };
        let batches = run(s.clone());
        let events: Vec<Event> = batches.iter().flat_map(TickBatch::events).collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &events).unwrap();
        let mut again = Vec::new();
        write_jsonl(&mut again, &run(s).iter().flat_map(TickBatch::events).collect::<Vec<_>>()).unwrap();
        assert_eq!(buf, again);
        let parsed = read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(parsed, events);
        let rebuilt = batches_from_events(&parsed).unwrap();
        assert_eq!(rebuilt.len(), batches.len());
        for (a, b) in rebuilt.iter().zip(&batches) {
            assert_eq!(a.objects, b.objects);
            assert_eq!(a.moved_queries, b.moved_queries);
            assert_eq!(a.new_queries, b.new_queries);
        }
    }

    #[test]
    fn query_circles_intersect_domain() {
        for d in [Distribution2d::Ud, Distribution2d::Gd, Distribution2d::Zipf] {
            let s = WorkloadSpec {
                n_queries: 300,
                ..spec(d, 10)
            };
            for q in generate_queries(&s).unwrap() {
                assert!(crate::geometry::classify(&q.circle, &Rect::unit()).intersects());
            }
        }
    }
}
