//! Comparison engines: a full scan with no index (NS) and a grid whose
//! partially covered cells are scanned object by object (GI).

use crate::cell::DetMap;
use crate::engine::{BatchReport, EngineError, ObjectUpdate};
use crate::geometry::{Circle, Point};
use crate::grid::{Grid, GridError};
use crate::ids::{ObjectId, QueryId, Tick};
use crate::mtree::SearchStats;
use crate::query::QueryMoveDelta;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ns,
    Gi,
}

/// Objects inside `c`, by testing every object.
pub fn ns_search<'a>(
    objects: impl IntoIterator<Item = (&'a ObjectId, &'a Point)>,
    c: &Circle,
    stats: &mut SearchStats,
) -> BTreeSet<ObjectId> {
    let mut out = BTreeSet::new();
    for (o, p) in objects {
        stats.objects_examined += 1;
        if c.contains(p) {
            out.insert(*o);
        }
    }
    out
}

/// Static grid of object lists.
#[derive(Debug, Clone)]
pub struct GridLists {
    grid: Grid,
    cells: Vec<Vec<(ObjectId, Point)>>,
}

impl GridLists {
    pub fn build<'a>(
        grid: Grid,
        objects: impl IntoIterator<Item = (&'a ObjectId, &'a Point)>,
    ) -> Result<Self, GridError> {
        let mut cells = vec![Vec::new(); grid.cell_count()];
        for (o, p) in objects {
            let cell = grid.locate_cell(p)?;
            cells[cell.linear(grid.n())].push((*o, *p));
        }
        Ok(GridLists { grid, cells })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// Objects inside `c`: fully covered cells contribute their whole list,
/// partially covered cells are scanned.
pub fn gi_search(lists: &GridLists, c: &Circle, stats: &mut SearchStats) -> BTreeSet<ObjectId> {
    let n = lists.grid.n();
    let gr = lists.grid.candidate_cells(c);
    let mut out = BTreeSet::new();
    for cell in &gr.full {
        out.extend(lists.cells[cell.linear(n)].iter().map(|(o, _)| *o));
    }
    for cell in &gr.partial {
        let objs = &lists.cells[cell.linear(n)];
        stats.objects_examined += objs.len() as u64;
        out.extend(objs.iter().filter(|(_, p)| c.contains(p)).map(|(o, _)| *o));
    }
    out
}

#[derive(Debug, Clone)]
struct NaiveQuery {
    circle: Circle,
    t_end: Tick,
    result: BTreeSet<ObjectId>,
}

/// Continuous queries without any index: every object update is tested
/// against every query and a moved query rescans all objects.
#[derive(Debug, Clone, Default)]
pub struct NaiveEngine {
    objects: DetMap<ObjectId, Point>,
    queries: BTreeMap<QueryId, NaiveQuery>,
    stats: SearchStats,
    search: SearchStats,
}

impl NaiveEngine {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn object_count(&self) -> usize {
        self.objects.len()
    }

    pub fn objects(&self) -> impl Iterator<Item = (&ObjectId, &Point)> {
        self.objects.iter()
    }

    /// Work done by searches and result maintenance so far.
    pub fn stats(&self) -> SearchStats {
        let mut s = self.stats;
        s.add(&self.search);
        s
    }

    /// Work done by query searches only.
    pub fn search_stats(&self) -> SearchStats {
        self.search
    }

    pub fn result(&self, q: QueryId) -> Option<&BTreeSet<ObjectId>> {
        self.queries.get(&q).map(|s| &s.result)
    }

    pub fn query_ids(&self) -> impl Iterator<Item = QueryId> + '_ {
        self.queries.keys().copied()
    }

    pub fn circle(&self, q: QueryId) -> Option<&Circle> {
        self.queries.get(&q).map(|s| &s.circle)
    }

    pub fn register_query(&mut self, id: QueryId, circle: Circle, t_end: Tick) -> Result<SearchStats, EngineError> {
        if self.queries.contains_key(&id) {
            return Err(EngineError::DuplicateQuery(id));
        }
        let mut stats = SearchStats::default();
        let result = ns_search(&self.objects, &circle, &mut stats);
        self.search.add(&stats);
        self.queries.insert(id, NaiveQuery { circle, t_end, result });
        Ok(stats)
    }

    pub fn on_objects_moved(&mut self, updates: &[ObjectUpdate]) -> BatchReport {
        let mut report = BatchReport::default();
        for (i, u) in updates.iter().enumerate() {
            match (u.old, self.objects.get(&u.id)) {
                (Some(_), None) => {
                    report.errors.push((i, EngineError::UnknownObject(u.id)));
                    continue;
                }
                (None, Some(_)) => {
                    report.errors.push((i, EngineError::DuplicateObject(u.id)));
                    continue;
                }
                _ => {}
            }
            match u.new {
                Some(p) => self.objects.insert(u.id, p),
                None => self.objects.remove(&u.id),
            };
            report.applied += 1;
            for q in self.queries.values_mut() {
                self.stats.objects_examined += 1;
                let inside = u.new.is_some_and(|p| q.circle.contains(&p));
                let changed = if inside {
                    q.result.insert(u.id)
                } else {
                    q.result.remove(&u.id)
                };
                report.changes += usize::from(changed);
            }
        }
        report
    }

    pub fn on_query_moved(&mut self, id: QueryId, circle: Circle) -> Result<QueryMoveDelta, EngineError> {
        let q = self.queries.get_mut(&id).ok_or(EngineError::UnknownQuery(id))?;
        let fresh = ns_search(&self.objects, &circle, &mut self.search);
        let delta = QueryMoveDelta {
            removals: q.result.difference(&fresh).copied().collect(),
            additions: fresh.difference(&q.result).copied().collect(),
        };
        q.circle = circle;
        q.result = fresh;
        Ok(delta)
    }

    pub fn expire_queries(&mut self, now: Tick) -> Vec<QueryId> {
        let expired: Vec<QueryId> = self
            .queries
            .iter()
            .filter(|(_, q)| q.t_end <= now)
            .map(|(id, _)| *id)
            .collect();
        for q in &expired {
            self.queries.remove(q);
        }
        expired
    }
}

/// Number of distance tests a grid-only search performs for `c`.
pub fn gi_examined(lists: &GridLists, c: &Circle) -> u64 {
    let gr = lists.grid.candidate_cells(c);
    gr.partial
        .iter()
        .map(|cell| lists.cells[cell.linear(lists.grid.n())].len() as u64)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{Engine, EngineConfig};
    use crate::mtree::SplitConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_objects(rng: &mut ChaCha8Rng, n: u64) -> BTreeMap<ObjectId, Point> {
        (0..n)
            .map(|i| (ObjectId(i), Point::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0))))
            .collect()
    }

    #[test]
    fn ns_examples() {
        let empty: BTreeMap<ObjectId, Point> = BTreeMap::new();
        let c = Circle::new(Point::new(0.5, 0.5), 0.3);
        assert!(ns_search(&empty, &c, &mut SearchStats::default()).is_empty());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let objs = random_objects(&mut rng, 300);
        let all = Circle::new(Point::new(0.5, 0.5), 0.75);
        assert_eq!(ns_search(&objs, &all, &mut SearchStats::default()).len(), 300);
    }

    #[test]
    fn gi_query_inside_one_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let objs = random_objects(&mut rng, 1000);
        let lists = GridLists::build(Grid::unit(4).unwrap(), &objs).unwrap();
        let c = Circle::new(Point::new(0.6, 0.6), 0.05);
        let mut stats = SearchStats::default();
        let got = gi_search(&lists, &c, &mut stats);
        let cell = lists.grid().locate_cell(&c.center).unwrap();
        let want: BTreeSet<ObjectId> = lists.cells[cell.linear(4)]
            .iter()
            .filter(|(_, p)| c.contains(p))
            .map(|(o, _)| *o)
            .collect();
        assert_eq!(got, want);
        assert_eq!(stats.objects_examined, lists.cells[cell.linear(4)].len() as u64);
        assert_eq!(gi_examined(&lists, &c), stats.objects_examined);
    }

    #[test]
    fn three_engines_agree_and_work_is_ordered() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..200 {
            let n = rng.gen_range(0..3000);
            let objs = random_objects(&mut rng, n);
            let grid_n = rng.gen_range(1..30);
            let lists = GridLists::build(Grid::unit(grid_n).unwrap(), &objs).unwrap();
            let mut e = Engine::new(EngineConfig {
                grid_n,
                split: SplitConfig::new(rng.gen_range(2..30), rng.gen_range(2..12)).unwrap(),
                ..EngineConfig::default()
            })
            .unwrap();
            let batch: Vec<_> = objs.iter().map(|(o, p)| ObjectUpdate::insert(*o, *p)).collect();
            assert!(e.on_objects_moved(&batch).errors.is_empty());
            let c = Circle::new(
                Point::new(rng.gen_range(-0.2..1.2), rng.gen_range(-0.2..1.2)),
                rng.gen_range(0.001..0.5),
            );
            let (mut s_ns, mut s_gi) = (SearchStats::default(), SearchStats::default());
            let ns = ns_search(&objs, &c, &mut s_ns);
            let gi = gi_search(&lists, &c, &mut s_gi);
            let s_drqa = e.register_query(QueryId(0), c, 0, 1).unwrap();
            assert_eq!(ns, gi, "trial {trial}");
            assert_eq!(e.result(QueryId(0)).unwrap(), ns, "trial {trial}");
            assert!(s_drqa.objects_examined <= s_gi.objects_examined, "trial {trial}");
            assert!(s_gi.objects_examined <= s_ns.objects_examined, "trial {trial}");
        }
    }

    #[test]
    fn naive_engine_tracks_moves() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut objs = random_objects(&mut rng, 500);
        let mut e = NaiveEngine::new();
        let batch: Vec<_> = objs.iter().map(|(o, p)| ObjectUpdate::insert(*o, *p)).collect();
        e.on_objects_moved(&batch);
        let mut c = Circle::new(Point::new(0.3, 0.3), 0.2);
        e.register_query(QueryId(1), c, 10).unwrap();
        for _ in 0..20 {
            let batch: Vec<_> = objs
                .iter_mut()
                .take(50)
                .map(|(o, p)| {
                    let old = *p;
                    *p = Point::new(rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0));
                    ObjectUpdate::moved(*o, old, *p)
                })
                .collect();
            assert!(e.on_objects_moved(&batch).errors.is_empty());
            c = Circle::new(Point::new(c.center.x + 0.01, c.center.y), 0.2);
            let before = e.result(QueryId(1)).unwrap().clone();
            let d = e.on_query_moved(QueryId(1), c).unwrap();
            assert!(d.removals.is_subset(&before) && d.additions.is_disjoint(&before));
            assert_eq!(e.result(QueryId(1)).unwrap(), &ns_search(&objs, &c, &mut SearchStats::default()));
        }
        assert_eq!(e.expire_queries(10), vec![QueryId(1)]);
        assert!(e.expire_queries(10).is_empty());
    }
}
