//! Deterministic discrete-event core: virtual clock, `(time, sequence)`
//! ordered queue, seeded random streams and the task execution/failure model.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::model::{NodeSpec, Task};

#[derive(Debug, Clone, PartialEq)]
pub struct Event<K> {
    pub fire_at_s: f64,
    pub sequence: u64,
    pub kind: K,
}

struct Entry<K>(Event<K>);

impl<K> PartialEq for Entry<K> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl<K> Eq for Entry<K> {}
impl<K> PartialOrd for Entry<K> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl<K> Ord for Entry<K> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0
            .fire_at_s
            .total_cmp(&other.0.fire_at_s)
            .then(self.0.sequence.cmp(&other.0.sequence))
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EngineError {
    #[error("cannot schedule at t={at} while clock is at t={now}")]
    InThePast { at: f64, now: f64 },
    #[error("event time {0} is not finite")]
    NotFinite(f64),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("grid MIPS must be positive, got {0}")]
    NonPositiveMips(f64),
}

#[derive(Debug, Error)]
#[error("handler failed on event seq={sequence} at t={fire_at_s} ({kind}): {source}")]
pub struct RunError<E: std::error::Error + 'static> {
    pub fire_at_s: f64,
    pub sequence: u64,
    pub kind: String,
    #[source]
    pub source: E,
}

/// One line of the optional event trace.
#[derive(Debug, Serialize)]
struct TraceRecord<'a, K: Serialize> {
    t: f64,
    seq: u64,
    #[serde(flatten)]
    event: &'a K,
}

pub struct Engine<K> {
    now: f64,
    next_seq: u64,
    queue: BinaryHeap<Reverse<Entry<K>>>,
    processed: usize,
    trace: Option<Vec<String>>,
}

impl<K> Default for Engine<K> {
    fn default() -> Self {
        Self::new()
    }
}

impl<K> Engine<K> {
    pub fn new() -> Self {
        Self { now: 0.0, next_seq: 0, queue: BinaryHeap::new(), processed: 0, trace: None }
    }

    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn processed(&self) -> usize {
        self.processed
    }

    pub fn enable_trace(&mut self) {
        self.trace.get_or_insert_with(Vec::new);
    }

    /// Newline-delimited JSON trace lines of processed events, if enabled.
    pub fn trace(&self) -> Option<&[String]> {
        self.trace.as_deref()
    }

    pub fn schedule(&mut self, fire_at_s: f64, kind: K) -> Result<u64, EngineError> {
        if !fire_at_s.is_finite() {
            return Err(EngineError::NotFinite(fire_at_s));
        }
        if fire_at_s < self.now {
            return Err(EngineError::InThePast { at: fire_at_s, now: self.now });
        }
        let sequence = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Entry(Event { fire_at_s, sequence, kind })));
        Ok(sequence)
    }

    pub fn schedule_in(&mut self, delay_s: f64, kind: K) -> Result<u64, EngineError> {
        self.schedule(self.now + delay_s, kind)
    }

    /// Pops the next event due at or before `t_end`, advancing the clock to it.
    pub fn pop_until(&mut self, t_end: f64) -> Option<Event<K>>
    where
        K: Serialize,
    {
        let due = matches!(self.queue.peek(), Some(Reverse(Entry(e))) if e.fire_at_s <= t_end);
        if !due {
            return None;
        }
        let Reverse(Entry(ev)) = self.queue.pop()?;
        debug_assert!(ev.fire_at_s >= self.now);
        self.now = ev.fire_at_s;
        self.processed += 1;
        if let Some(trace) = self.trace.as_mut() {
            let line = serde_json::to_string(&TraceRecord { t: ev.fire_at_s, seq: ev.sequence, event: &ev.kind })
                .expect("event kinds serialize");
            trace.push(line);
        }
        Some(ev)
    }

    /// Moves the clock forward to `t` once the due events are drained.
    pub fn advance_to(&mut self, t: f64) {
        if t > self.now {
            self.now = t;
        }
    }

    /// Processes every event with `fire_at_s <= t_end` in `(time, sequence)`
    /// order and leaves the clock at `t_end`.
    pub fn run_until<F, E>(&mut self, t_end: f64, mut handler: F) -> Result<usize, RunError<E>>
    where
        K: Serialize + std::fmt::Debug,
        E: std::error::Error + 'static,
        F: FnMut(&mut Self, &Event<K>) -> Result<(), E>,
    {
        assert!(t_end >= self.now, "run_until({t_end}) behind clock {}", self.now);
        let mut count = 0;
        while let Some(ev) = self.pop_until(t_end) {
            handler(self, &ev).map_err(|source| RunError {
                fire_at_s: ev.fire_at_s,
                sequence: ev.sequence,
                kind: format!("{:?}", ev.kind),
                source,
            })?;
            count += 1;
        }
        self.advance_to(t_end);
        Ok(count)
    }
}

/// Independent, reproducible random stream: `(seed, stream_id)` always yields
/// the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        Self { rng }
    }

    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if hi <= lo {
            lo
        } else {
            self.rng.random_range(lo..hi)
        }
    }

    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

/// Stream namespaces, so that per-node and per-generator draws never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum StreamKind {
    NodeBuild = 1,
    NodeRuntime = 2,
    LocalLoad = 3,
    Warmup = 4,
    Baseline = 5,
    Backlog = 6,
}

pub fn stream_id(kind: StreamKind, index: u64) -> u64 {
    ((kind as u64) << 48) | (index & 0xFFFF_FFFF_FFFF)
}

/// SplitMix64 finalizer; derives per-replication seeds from a base seed.
pub fn mix_seed(seed: u64, replication: u64) -> u64 {
    let mut z = seed ^ replication.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seconds needed to run `task` at the node's grid MIPS (MI / MIPS).
pub fn execution_time(task: &Task, node: &NodeSpec) -> Result<f64, EngineError> {
    if task.length_mi.is_nan() || task.length_mi <= 0.0 {
        return Err(EngineError::InvalidTask(format!("length_mi must be > 0, got {}", task.length_mi)));
    }
    if node.grid_mips.is_nan() || node.grid_mips <= 0.0 {
        return Err(EngineError::NonPositiveMips(node.grid_mips));
    }
    Ok(task.length_mi / node.grid_mips)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Outcome {
    WillSucceed,
    /// Fails after this fraction of the task's work is done.
    WillFail { at_fraction: f64 },
}

/// Bernoulli failure draw with `p_fail = 1 − dependability`; a failing task
/// fails at a uniform fraction of its work.
pub fn sample_task_outcome(node: &NodeSpec, rng: &mut RngStream) -> Outcome {
    let p_fail = (1.0 - node.dependability).clamp(0.0, 1.0);
    let u = rng.uniform();
    if u < p_fail {
        Outcome::WillFail { at_fraction: rng.uniform() }
    } else {
        Outcome::WillSucceed
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JobId, NodeId, TaskId};

    fn node(mips: f64, dependability: f64) -> NodeSpec {
        NodeSpec {
            node_id: NodeId(0),
            grid_mips: mips,
            total_ram_mb: 1024.0,
            dtr_base: 10.0,
            dependability,
            standard_price_alpha: 10.0,
            price_tolerance_p: 0.2,
            local_scheduler_id: "LS1".into(),
        }
    }

    #[test]
    fn schedule_and_fifo_ties() {
        let mut e: Engine<&'static str> = Engine::new();
        e.schedule(5.0, "A").unwrap();
        assert_eq!(e.len(), 1);
        e.schedule(5.0, "B").unwrap();
        let a = e.pop_until(10.0).unwrap();
        let b = e.pop_until(10.0).unwrap();
        assert_eq!((a.kind, b.kind), ("A", "B"));
        assert!(a.sequence < b.sequence);
    }

    #[test]
    fn past_scheduling_rejected() {
        let mut e: Engine<u8> = Engine::new();
        assert!(matches!(e.schedule(-1.0, 0), Err(EngineError::InThePast { .. })));
        assert!(matches!(e.schedule(f64::NAN, 0), Err(EngineError::NotFinite(_))));
    }

    #[test]
    fn run_until_counts_and_sets_clock() {
        let mut e: Engine<u8> = Engine::new();
        let n = e.run_until(100.0, |_, _| Ok::<_, std::io::Error>(())).unwrap();
        assert_eq!(n, 0);
        assert_eq!(e.now(), 100.0);

        let mut e: Engine<u8> = Engine::new();
        for t in [1.0, 2.0, 3.0] {
            e.schedule(t, 0).unwrap();
        }
        let n = e.run_until(2.0, |_, _| Ok::<_, std::io::Error>(())).unwrap();
        assert_eq!(n, 2);
        assert_eq!(e.now(), 2.0);
        assert_eq!(e.len(), 1);
    }

    #[test]
    fn handler_error_names_event() {
        let mut e: Engine<u8> = Engine::new();
        e.schedule(1.0, 7).unwrap();
        let err = e
            .run_until(5.0, |_, ev| {
                if ev.kind == 7 {
                    Err(std::io::Error::other("boom"))
                } else {
                    Ok(())
                }
            })
            .unwrap_err();
        assert_eq!(err.sequence, 0);
        assert_eq!(err.kind, "7");
    }

    #[test]
    fn execution_time_is_mi_over_mips() {
        let t = Task::new(TaskId(0), JobId(0), 45500.0, 1.93, 1200.0);
        assert_eq!(execution_time(&t, &node(65.0, 1.0)).unwrap(), 700.0);
        assert_eq!(execution_time(&t, &node(140.0, 1.0)).unwrap(), 325.0);
        let zero = Task::new(TaskId(0), JobId(0), 0.0, 1.93, 1200.0);
        assert!(execution_time(&zero, &node(65.0, 1.0)).is_err());
    }

    #[test]
    fn degenerate_dependability() {
        let mut rng = RngStream::new(1, 1);
        for _ in 0..1000 {
            assert_eq!(sample_task_outcome(&node(1.0, 1.0), &mut rng), Outcome::WillSucceed);
            assert!(matches!(sample_task_outcome(&node(1.0, 0.0), &mut rng), Outcome::WillFail { .. }));
        }
    }

    #[test]
    fn failure_fraction_monte_carlo() {
        let mut rng = RngStream::new(42, stream_id(StreamKind::NodeRuntime, 0));
        let n = node(1.0, 0.72);
        let fails = (0..10_000)
            .filter(|_| matches!(sample_task_outcome(&n, &mut rng), Outcome::WillFail { .. }))
            .count();
        let frac = fails as f64 / 10_000.0;
        assert!((frac - 0.28).abs() <= 0.02, "failure fraction {frac}");
    }

    #[test]
    fn streams_reproduce_and_differ() {
        let draw = |seed, id| {
            let mut r = RngStream::new(seed, id);
            (0..8).map(|_| r.uniform()).collect::<Vec<_>>()
        };
        assert_eq!(draw(3, 9), draw(3, 9));
        assert_ne!(draw(3, 9), draw(3, 10));
        assert_ne!(draw(3, 9), draw(4, 9));
    }
}
