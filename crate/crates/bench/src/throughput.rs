//! Saturation throughput from measured service costs.
//!
//! The system is first run on the workload to record how long each tick's
//! object and query work took. A fluid queue model is then fed at an
//! offered rate: every window adds `rate * window` events split in the
//! workload's object/query mix, and drains what the measured costs allow.
//! The saturation rate is the highest offered rate at which both queues
//! stay bounded, found by bisection on a log scale.

use crate::experiment::QueueCaps;

/// Work recorded for one tick.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct TickCost {
    pub object_events: u64,
    pub object_secs: f64,
    pub query_events: u64,
    pub query_secs: f64,
}

/// Parameters of the queue model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueueModel {
    pub caps: QueueCaps,
    /// Windows ignored before depth is judged.
    pub warmup: usize,
    /// Consecutive windows that must stay under half capacity.
    pub stable_windows: usize,
    /// Windows simulated per offered rate.
    pub horizon: usize,
}

impl QueueModel {
    pub fn new(caps: QueueCaps) -> Self {
        QueueModel {
            caps,
            warmup: 20,
            stable_windows: 10,
            horizon: 4000,
        }
    }
}

/// Depths of both queues after every window of one simulation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct QueueTrace {
    pub depths: Vec<(f64, f64)>,
    /// Window at which a queue reached capacity, if any.
    pub overflow: Option<usize>,
}

impl QueueTrace {
    /// No overflow, and the last `stable` windows after warm-up all under
    /// half capacity.
    pub fn is_bounded(&self, model: &QueueModel) -> bool {
        if self.overflow.is_some() || self.depths.len() < model.warmup + model.stable_windows {
            return false;
        }
        let (ho, hq) = (model.caps.objects as f64 / 2.0, model.caps.queries as f64 / 2.0);
        self.depths[self.depths.len() - model.stable_windows..]
            .iter()
            .all(|(o, q)| *o < ho && *q < hq)
    }

    /// Total depth never decreases after warm-up and ends higher than it
    /// started.
    pub fn grows_monotonically(&self, warmup: usize) -> bool {
        let tail: Vec<f64> = self.depths.iter().skip(warmup).map(|(o, q)| o + q).collect();
        tail.len() >= 2 && tail.windows(2).all(|w| w[1] >= w[0]) && tail.last() > tail.first()
    }
}

/// Measured costs of a system on a workload.
#[derive(Debug, Clone, PartialEq)]
pub struct ServiceProfile {
    samples: Vec<TickCost>,
    object_share: f64,
    mean_rate: f64,
}

impl ServiceProfile {
    /// Ticks without any events are dropped. Returns `None` when nothing
    /// was measured.
    pub fn new(samples: Vec<TickCost>) -> Option<Self> {
        let samples: Vec<TickCost> = samples
            .into_iter()
            .filter(|s| s.object_events + s.query_events > 0)
            .collect();
        let events: u64 = samples.iter().map(|s| s.object_events + s.query_events).sum();
        let secs: f64 = samples.iter().map(|s| s.object_secs + s.query_secs).sum();
        if events == 0 {
            return None;
        }
        let objects: u64 = samples.iter().map(|s| s.object_events).sum();
        Some(ServiceProfile {
            samples,
            object_share: objects as f64 / events as f64,
            // guard against a clock too coarse to see the work
            mean_rate: events as f64 / secs.max(1e-9),
        })
    }

    /// Events per second over the whole run, as if fed back to back.
    pub fn mean_rate(&self) -> f64 {
        self.mean_rate
    }

    /// Window length: a queue fed at twice the mean rate fills in about 20
    /// windows, which keeps the model independent of the system's speed.
    fn window(&self, caps: &QueueCaps) -> f64 {
        let cap = (caps.objects as f64 / self.object_share.max(1e-9))
            .min(caps.queries as f64 / (1.0 - self.object_share).max(1e-9));
        cap / self.mean_rate / 20.0
    }

    /// Runs the queue model at `rate` events per second.
    pub fn simulate(&self, rate: f64, model: &QueueModel) -> QueueTrace {
        let w = self.window(&model.caps);
        let (cap_o, cap_q) = (model.caps.objects as f64, model.caps.queries as f64);
        let mut trace = QueueTrace::default();
        let (mut d_o, mut d_q) = (0.0f64, 0.0f64);
        for k in 0..model.horizon {
            let s = &self.samples[k % self.samples.len()];
            d_o += rate * w * self.object_share;
            d_q += rate * w * (1.0 - self.object_share);
            let (c_o, c_q) = per_event(s, self.mean_rate);
            // processor sharing: both queues drain in proportion
            let needed = d_o * c_o + d_q * c_q;
            if needed <= w {
                d_o = 0.0;
                d_q = 0.0;
            } else {
                let left = 1.0 - w / needed;
                d_o *= left;
                d_q *= left;
            }
            trace.depths.push((d_o, d_q));
            if d_o >= cap_o || d_q >= cap_q {
                trace.overflow = Some(k);
                break;
            }
        }
        trace
    }

    /// Highest offered rate with bounded queues.
    pub fn saturation(&self, model: &QueueModel) -> f64 {
        let mut lo = self.mean_rate * 1e-3;
        let mut hi = self.mean_rate * 1e3;
        if !self.simulate(lo, model).is_bounded(model) {
            return 0.0;
        }
        for _ in 0..60 {
            let mid = (lo * hi).sqrt();
            if self.simulate(mid, model).is_bounded(model) {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi / lo < 1.0005 {
                break;
            }
        }
        lo
    }
}

/// Seconds per object and per query event of one tick. Time spent in a
/// half with no events (expiring queries, say) is charged to the other half.
fn per_event(s: &TickCost, mean_rate: f64) -> (f64, f64) {
    match (s.object_events, s.query_events) {
        (0, 0) => (1.0 / mean_rate, 1.0 / mean_rate),
        (0, q) => (1.0 / mean_rate, (s.object_secs + s.query_secs) / q as f64),
        (o, 0) => ((s.object_secs + s.query_secs) / o as f64, 1.0 / mean_rate),
        (o, q) => (s.object_secs / o as f64, s.query_secs / q as f64),
    }
}
