//! Experiment files: which engine, which workload, which parameters to
//! sweep. Same key-value format as the cluster config.

use ddi_cluster::ClusterMode;
use ddi_core::config::{Config, ConfigError, KeyValues};
use ddi_core::workload::{Distribution2d, WorkloadSpec};
use ddi_core::Point;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    Drqa,
    Gi,
    Ns,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [EngineKind::Drqa, EngineKind::Gi, EngineKind::Ns];

    pub fn cluster_mode(self) -> ClusterMode {
        match self {
            EngineKind::Drqa => ClusterMode::Drqa,
            EngineKind::Gi => ClusterMode::GridOnly,
            EngineKind::Ns => ClusterMode::Naive,
        }
    }
}

impl FromStr for EngineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "drqa" => Ok(EngineKind::Drqa),
            "gi" => Ok(EngineKind::Gi),
            "ns" => Ok(EngineKind::Ns),
            other => Err(format!("unknown engine {other:?} (expected drqa, gi or ns)")),
        }
    }
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::Drqa => "drqa",
            EngineKind::Gi => "gi",
            EngineKind::Ns => "ns",
        })
    }
}

/// Where an engine runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// The master-worker cluster over the configured transport.
    Cluster,
    /// The single-process engine, no messages.
    Local,
}

impl FromStr for Backend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cluster" => Ok(Backend::Cluster),
            "local" => Ok(Backend::Local),
            other => Err(format!("unknown backend {other:?} (expected cluster or local)")),
        }
    }
}

/// What each sweep point records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Measure {
    /// Build, maintenance and query timings plus work counters.
    Metrics,
    /// The above plus the saturation rate from the queue simulation.
    Throughput,
}

impl FromStr for Measure {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "metrics" => Ok(Measure::Metrics),
            "throughput" => Ok(Measure::Throughput),
            other => Err(format!("unknown measure {other:?} (expected metrics or throughput)")),
        }
    }
}

fn parse_distribution(s: &str) -> Result<Distribution2d, String> {
    match s.to_ascii_lowercase().as_str() {
        "ud" | "uniform" => Ok(Distribution2d::Ud),
        "gd" | "gaussian" => Ok(Distribution2d::Gd),
        "zipf" => Ok(Distribution2d::Zipf),
        other => Err(format!("unknown distribution {other:?} (expected ud, gd or zipf)")),
    }
}

/// Queue capacities for the throughput measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QueueCaps {
    pub objects: usize,
    pub queries: usize,
}

impl Default for QueueCaps {
    fn default() -> Self {
        QueueCaps {
            objects: 50_000,
            queries: 10_000,
        }
    }
}

/// Parameter lists; an empty list keeps the base value.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Sweeps {
    pub m: Vec<usize>,
    pub alpha: Vec<usize>,
    pub radius: Vec<f64>,
    pub objects: Vec<usize>,
    pub queries: Vec<usize>,
    pub object_speed: Vec<f64>,
    pub query_speed: Vec<f64>,
}

impl Sweeps {
    fn varies_workload(&self) -> bool {
        !(self.radius.is_empty()
            && self.objects.is_empty()
            && self.queries.is_empty()
            && self.object_speed.is_empty()
            && self.query_speed.is_empty())
    }
}

/// One combination of swept values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub m: usize,
    pub alpha: usize,
    pub radius: f64,
    pub objects: usize,
    pub queries: usize,
    pub object_speed: f64,
    pub query_speed: f64,
}

impl SweepPoint {
    pub fn apply(&self, base: &WorkloadSpec) -> WorkloadSpec {
        WorkloadSpec {
            radius: self.radius,
            n_objects: self.objects,
            n_queries: self.queries,
            object_speed: self.object_speed,
            query_speed: self.query_speed,
            ..base.clone()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub name: String,
    pub engine: EngineKind,
    pub backend: Backend,
    pub measure: Measure,
    pub workload: WorkloadSpec,
    /// Replaces the generated workload when set.
    pub workload_file: Option<PathBuf>,
    pub sweeps: Sweeps,
    pub queue: QueueCaps,
    pub repetitions: u32,
    pub output: Option<PathBuf>,
    /// Grid, tree, routing and cluster settings.
    pub config: Config,
}

pub const EXPERIMENT_KEYS: &[&str] = &[
    "experiment.name",
    "experiment.engine",
    "experiment.backend",
    "experiment.measure",
    "experiment.repetitions",
    "experiment.output",
    "workload.distribution",
    "workload.objects",
    "workload.queries",
    "workload.radius",
    "workload.object_speed",
    "workload.query_speed",
    "workload.ticks",
    "workload.seed",
    "workload.zipf_s",
    "workload.hotspot",
    "workload.gaussian_mean",
    "workload.gaussian_sigma",
    "workload.query_lifetime",
    "workload.file",
    "sweep.m",
    "sweep.alpha",
    "sweep.radius",
    "sweep.objects",
    "sweep.queries",
    "sweep.object_speed",
    "sweep.query_speed",
    "queue.objects_cap",
    "queue.queries_cap",
];

fn pair(kv: &KeyValues, key: &str) -> Result<Option<(f64, f64)>, ConfigError> {
    match kv.f64_list(key)? {
        None => Ok(None),
        Some(v) if v.len() == 2 => Ok(Some((v[0], v[1]))),
        Some(_) => Err(ConfigError::invalid(key, "expected [x, y]")),
    }
}

fn usize_list(kv: &KeyValues, key: &str) -> Result<Vec<usize>, ConfigError> {
    let v = kv.u64_list(key)?.unwrap_or_default();
    if v.contains(&0) {
        return Err(ConfigError::invalid(key, "sweep values must be positive"));
    }
    Ok(v.into_iter().map(|x| x as usize).collect())
}

fn f64_list(kv: &KeyValues, key: &str) -> Result<Vec<f64>, ConfigError> {
    let v = kv.f64_list(key)?.unwrap_or_default();
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(ConfigError::invalid(key, "sweep values must be positive"));
    }
    Ok(v)
}

fn parsed<T: FromStr<Err = String>>(kv: &KeyValues, key: &str) -> Result<Option<T>, ConfigError> {
    kv.string(key)?
        .map(|s| s.parse::<T>().map_err(|e| ConfigError::invalid(key, e)))
        .transpose()
}

impl Experiment {
    pub fn from_kv(kv: &KeyValues) -> Result<Self, ConfigError> {
        kv.reject_unknown(&["experiment", "workload", "sweep", "queue"], EXPERIMENT_KEYS)?;
        let config = Config::from_kv(kv)?;

        let mut w = WorkloadSpec {
            seed: config.seed,
            grid_n: config.grid_n,
            ..WorkloadSpec::default()
        };
        if let Some(d) = kv.string("workload.distribution")? {
            w.distribution = parse_distribution(d).map_err(|e| ConfigError::invalid("workload.distribution", e))?;
        }
        if let Some(n) = kv.u64("workload.objects")? {
            w.n_objects = n as usize;
        }
        if let Some(n) = kv.u64("workload.queries")? {
            w.n_queries = n as usize;
        }
        if let Some(r) = kv.f64("workload.radius")? {
            w.radius = r;
        }
        if let Some(v) = kv.f64("workload.object_speed")? {
            w.object_speed = v;
        }
        if let Some(v) = kv.f64("workload.query_speed")? {
            w.query_speed = v;
        }
        if let Some(t) = kv.u64("workload.ticks")? {
            w.ticks = t;
        }
        if let Some(s) = kv.u64("workload.seed")? {
            w.seed = s;
        }
        if let Some(s) = kv.f64("workload.zipf_s")? {
            w.zipf_s = s;
        }
        if let Some((x, y)) = pair(kv, "workload.hotspot")? {
            w.hotspot = Point::new(x, y);
        }
        if let Some((x, y)) = pair(kv, "workload.gaussian_mean")? {
            w.gaussian.mean_x = x;
            w.gaussian.mean_y = y;
        }
        if let Some((x, y)) = pair(kv, "workload.gaussian_sigma")? {
            w.gaussian.sigma_x = x;
            w.gaussian.sigma_y = y;
        }
        if let Some(l) = kv.u64("workload.query_lifetime")? {
            w.query_lifetime = Some(l);
        }
        w.validate().map_err(|e| ConfigError::invalid("workload", e.to_string()))?;

        let sweeps = Sweeps {
            m: usize_list(kv, "sweep.m")?,
            alpha: usize_list(kv, "sweep.alpha")?,
            radius: f64_list(kv, "sweep.radius")?,
            objects: usize_list(kv, "sweep.objects")?,
            queries: usize_list(kv, "sweep.queries")?,
            object_speed: f64_list(kv, "sweep.object_speed")?,
            query_speed: f64_list(kv, "sweep.query_speed")?,
        };
        let workload_file = kv.string("workload.file")?.map(PathBuf::from);
        if workload_file.is_some() && sweeps.varies_workload() {
            return Err(ConfigError::invalid(
                "workload.file",
                "a workload file cannot be combined with workload sweeps",
            ));
        }
        let mut queue = QueueCaps::default();
        if let Some(c) = kv.u64("queue.objects_cap")? {
            queue.objects = c as usize;
        }
        if let Some(c) = kv.u64("queue.queries_cap")? {
            queue.queries = c as usize;
        }
        if queue.objects == 0 || queue.queries == 0 {
            return Err(ConfigError::invalid("queue", "capacities must be positive"));
        }
        let repetitions = kv.u64("experiment.repetitions")?.unwrap_or(1);
        if repetitions == 0 || repetitions > u64::from(u32::MAX) {
            return Err(ConfigError::invalid("experiment.repetitions", "must be at least 1"));
        }
        Ok(Experiment {
            name: kv.string("experiment.name")?.unwrap_or("experiment").to_string(),
            engine: parsed(kv, "experiment.engine")?.unwrap_or(EngineKind::Drqa),
            backend: parsed(kv, "experiment.backend")?.unwrap_or(Backend::Cluster),
            measure: parsed(kv, "experiment.measure")?.unwrap_or(Measure::Metrics),
            workload: w,
            workload_file,
            sweeps,
            queue,
            repetitions: repetitions as u32,
            output: kv.string("experiment.output")?.map(PathBuf::from),
            config,
        })
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_kv(&KeyValues::parse(text)?)
    }

    /// Every combination of the sweep lists, in a fixed order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let or = |v: &[usize], d: usize| if v.is_empty() { vec![d] } else { v.to_vec() };
        let orf = |v: &[f64], d: f64| if v.is_empty() { vec![d] } else { v.to_vec() };
        let s = &self.sweeps;
        let w = &self.workload;
        let mut out = Vec::new();
        for &m in &or(&s.m, self.config.split.m()) {
            for &alpha in &or(&s.alpha, self.config.split.alpha()) {
                for &radius in &orf(&s.radius, w.radius) {
                    for &objects in &or(&s.objects, w.n_objects) {
                        for &queries in &or(&s.queries, w.n_queries) {
                            for &object_speed in &orf(&s.object_speed, w.object_speed) {
                                for &query_speed in &orf(&s.query_speed, w.query_speed) {
                                    out.push(SweepPoint {
                                        m,
                                        alpha,
                                        radius,
                                        objects,
                                        queries,
                                        object_speed,
                                        query_speed,
                                    });
                                }
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_a_full_experiment() {
        let e = Experiment::parse(
            r#"
            [experiment]
            name = "alpha"
            engine = "gi"
            backend = "local"
            repetitions = 3

            [workload]
            distribution = "gd"
            objects = 500
            queries = 20
            gaussian_mean = [0.3, 0.6]
            gaussian_sigma = [0.1, 0.2]

            [sweep]
            alpha = [5, 10, 20, 40]

            [grid]
            n = 16
            "#,
        )
        .unwrap();
        assert_eq!(e.engine, EngineKind::Gi);
        assert_eq!(e.backend, Backend::Local);
        assert_eq!(e.workload.distribution, Distribution2d::Gd);
        assert_eq!(e.workload.gaussian.mean_y, 0.6);
        assert_eq!(e.config.grid_n, 16);
        assert_eq!(e.workload.grid_n, 16);
        let pts = e.points();
        assert_eq!(pts.len(), 4);
        assert_eq!(pts[2].alpha, 20);
        assert_eq!(pts[0].objects, 500);
        assert_eq!(e.queue, QueueCaps::default());
    }

    #[test]
    fn sweeps_form_a_product() {
        let e = Experiment::parse("sweep.m = [4, 6]\nsweep.radius = [0.01, 0.02, 0.03]").unwrap();
        assert_eq!(e.points().len(), 6);
    }

    #[test]
    fn rejects_bad_values() {
        for text in [
            "sweep.alpha = [0, 5]",
            "sweep.radius = [-0.1]",
            "experiment.repetitions = 0",
            "experiment.engine = \"dhi\"",
            "workload.distribution = \"poisson\"",
            "workload.radius = 0.0",
            "queue.objects_cap = 0",
            "experiment.colour = 1",
            "workload.file = \"w.jsonl\"\nsweep.objects = [10]",
        ] {
            assert!(Experiment::parse(text).is_err(), "{text}");
        }
    }

    #[test]
    fn engine_names_round_trip() {
        for e in EngineKind::ALL {
            assert_eq!(e.to_string().parse::<EngineKind>(), Ok(e));
        }
    }
}
