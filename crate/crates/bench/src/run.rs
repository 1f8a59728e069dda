//! Runs sweep points and writes CSV rows.

use crate::experiment::{Experiment, Measure, SweepPoint};
use crate::system::{make_system, System};
use crate::throughput::{QueueModel, ServiceProfile, TickCost};
use crate::BenchError;
use ddi_cluster::hash_results;
use ddi_core::config::TransportKind;
use ddi_core::workload::{batches_from_events, read_jsonl, Simulation, TickBatch};
use ddi_core::SplitConfig;
use serde::Serialize;
use std::io::Write;
use std::time::Instant;

/// One CSV row: a sweep point run once. Times are in seconds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsRow {
    pub experiment: String,
    pub engine: String,
    pub backend: String,
    pub transport: String,
    pub repetition: u32,
    pub seed: u64,
    pub distribution: String,
    pub objects: usize,
    pub queries: usize,
    pub radius: f64,
    pub object_speed: f64,
    pub query_speed: f64,
    pub m: usize,
    pub alpha: usize,
    pub grid_n: u32,
    pub ticks: u64,
    /// Inserting every object at tick 0.
    pub build_time: f64,
    /// Applying object moves over ticks 1..=T.
    pub maintenance_time: f64,
    /// Registering the tick-0 queries.
    pub query_time_initial: f64,
    /// Query moves and registrations over ticks 1..=T.
    pub query_time_incremental: f64,
    /// Events per second. Metrics runs report the back-to-back service
    /// rate; throughput runs the saturation rate of the queue model.
    pub throughput: f64,
    pub objects_examined: u64,
    pub messages_sent: u64,
    /// SHA-256 of every live query's final result.
    pub result_hash: String,
}

/// Timings and counters of one run over a list of batches.
#[derive(Debug, Clone)]
pub struct RunMeasurement {
    pub build_time: f64,
    pub maintenance_time: f64,
    pub query_time_initial: f64,
    pub query_time_incremental: f64,
    /// One entry per tick after the first.
    pub ticks: Vec<TickCost>,
    pub objects_examined: u64,
    pub messages_sent: u64,
    pub result_hash: [u8; 32],
}

/// Feeds `batches` to `system`, timing the object and query halves of each
/// tick separately.
pub fn run_batches(system: &mut dyn System, batches: &[TickBatch]) -> Result<RunMeasurement, BenchError> {
    let mut m = RunMeasurement {
        build_time: 0.0,
        maintenance_time: 0.0,
        query_time_initial: 0.0,
        query_time_incremental: 0.0,
        ticks: Vec::new(),
        objects_examined: 0,
        messages_sent: 0,
        result_hash: [0; 32],
    };
    for (i, b) in batches.iter().enumerate() {
        let t = Instant::now();
        system.objects(b.tick, &b.objects)?;
        let object_secs = t.elapsed().as_secs_f64();
        let t = Instant::now();
        system.queries(b.tick, &b.new_queries, &b.moved_queries)?;
        let query_secs = t.elapsed().as_secs_f64();
        if i == 0 {
            m.build_time = object_secs;
            m.query_time_initial = query_secs;
        } else {
            m.maintenance_time += object_secs;
            m.query_time_incremental += query_secs;
            m.ticks.push(TickCost {
                object_events: b.objects.len() as u64,
                object_secs,
                query_events: (b.new_queries.len() + b.moved_queries.len()) as u64,
                query_secs,
            });
        }
    }
    m.objects_examined = system.objects_examined();
    m.messages_sent = system.messages_sent();
    m.result_hash = hash_results(&system.results());
    Ok(m)
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Loads or generates the batches for one sweep point.
pub fn workload_batches(e: &Experiment, p: &SweepPoint) -> Result<Vec<TickBatch>, BenchError> {
    if let Some(path) = &e.workload_file {
        let file = std::fs::File::open(path).map_err(|source| BenchError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let events = read_jsonl(std::io::BufReader::new(file))?;
        return Ok(batches_from_events(&events)?);
    }
    let mut sim = Simulation::new(p.apply(&e.workload))?;
    let mut out = vec![sim.initial()];
    out.extend(std::iter::from_fn(|| sim.next_tick()));
    Ok(out)
}

/// Runs one sweep point once.
pub fn run_point(e: &Experiment, p: &SweepPoint, repetition: u32, batches: &[TickBatch]) -> Result<MetricsRow, BenchError> {
    let split = SplitConfig::new(p.alpha, p.m).map_err(|err| BenchError::Invalid(err.to_string()))?;
    let mut system = make_system(e.engine, e.backend, &e.config, split, e.workload.domain)?;
    let m = run_batches(system.as_mut(), batches)?;
    let throughput = match e.measure {
        Measure::Metrics => {
            let events: u64 = m.ticks.iter().map(|t| t.object_events + t.query_events).sum();
            let secs = m.maintenance_time + m.query_time_incremental;
            if secs > 0.0 {
                events as f64 / secs
            } else {
                0.0
            }
        }
        Measure::Throughput => ServiceProfile::new(m.ticks.clone())
            .map(|prof| prof.saturation(&QueueModel::new(e.queue)))
            .unwrap_or(0.0),
    };
    let spec = p.apply(&e.workload);
    Ok(MetricsRow {
        experiment: e.name.clone(),
        engine: e.engine.to_string(),
        backend: format!("{:?}", e.backend).to_lowercase(),
        transport: match e.config.transport {
            TransportKind::Loopback => "loopback".into(),
            TransportKind::Socket => "socket".into(),
        },
        repetition,
        seed: spec.seed,
        distribution: if e.workload_file.is_some() {
            "replay".into()
        } else {
            format!("{:?}", spec.distribution).to_lowercase()
        },
        // counted from the tick-0 batch so replayed logs report what they hold
        objects: batches.first().map_or(0, |b| b.objects.len()),
        queries: batches.first().map_or(0, |b| b.new_queries.len()),
        radius: spec.radius,
        object_speed: spec.object_speed,
        query_speed: spec.query_speed,
        m: p.m,
        alpha: p.alpha,
        grid_n: e.config.grid_n,
        ticks: batches.len().saturating_sub(1) as u64,
        build_time: m.build_time,
        maintenance_time: m.maintenance_time,
        query_time_initial: m.query_time_initial,
        query_time_incremental: m.query_time_incremental,
        throughput,
        objects_examined: m.objects_examined,
        messages_sent: m.messages_sent,
        result_hash: hex(&m.result_hash),
    })
}

pub fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Runs every sweep point `repetitions` times, writing one CSV row per run
/// to `out`. A per-point median summary goes to `log`. Returns the rows.
pub fn run_experiment(e: &Experiment, out: impl Write, mut log: impl Write) -> Result<Vec<MetricsRow>, BenchError> {
    let mut csv = csv::Writer::from_writer(out);
    let mut rows = Vec::new();
    for p in e.points() {
        let batches = workload_batches(e, &p)?;
        let mut point_rows = Vec::new();
        for rep in 0..e.repetitions {
            let row = run_point(e, &p, rep, &batches)?;
            csv.serialize(&row)?;
            csv.flush().map_err(|source| BenchError::Io {
                path: "<output>".into(),
                source,
            })?;
            point_rows.push(row);
        }
        let med = |f: fn(&MetricsRow) -> f64| median(point_rows.iter().map(f).collect());
        writeln!(
            log,
            "{} {} m={} alpha={} r={} objects={} queries={}: median build {:.6}s maintenance {:.6}s query {:.6}s/{:.6}s throughput {:.1}/s",
            e.name,
            e.engine,
            p.m,
            p.alpha,
            p.radius,
            point_rows[0].objects,
            point_rows[0].queries,
            med(|r| r.build_time),
            med(|r| r.maintenance_time),
            med(|r| r.query_time_initial),
            med(|r| r.query_time_incremental),
            med(|r| r.throughput),
        )
        .map_err(|source| BenchError::Io {
            path: "<log>".into(),
            source,
        })?;
        rows.extend(point_rows);
    }
    Ok(rows)
}
