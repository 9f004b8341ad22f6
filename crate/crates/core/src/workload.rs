//! Scenario instantiation: node populations, jobs, background local load,
//! initial backlog and synthetic warm-up history.

use rand_distr::{Distribution, Exp, Triangular};

use crate::engine::{sample_task_outcome, Outcome, RngStream};
use crate::gnm::NodeState;
use crate::model::{ConsumerId, Job, JobGroupSpec, JobId, LocalSchedulerSpec, NodeId, NodeSpec, Task, TaskId, TaskRecord, TaskState};
use crate::scenario::ModelParams;

/// Builds `spec.node_count` nodes with ids starting at `first_id`.
/// Dependability is triangular around the scheduler's median,
/// `±dependability_spread` wide and clamped to `[0, 1]`.
pub fn build_nodes(spec: &LocalSchedulerSpec, params: &ModelParams, first_id: u32, rng: &mut RngStream) -> Vec<NodeSpec> {
    let m = spec.medium_dependability;
    let w = params.dependability_spread;
    let tri = (w > 0.0).then(|| Triangular::new(m - w, m + w, m).expect("mode inside a non-empty interval"));
    (0..spec.node_count)
        .map(|i| {
            let dependability = match &tri {
                Some(t) => t.sample(rng.rng()).clamp(0.0, 1.0),
                None => m,
            };
            NodeSpec {
                node_id: NodeId(first_id + i),
                grid_mips: spec.gmips,
                total_ram_mb: params.total_ram_mb,
                dtr_base: params.dtr_base,
                dependability,
                standard_price_alpha: rng.uniform_in(params.alpha_min, params.alpha_max),
                price_tolerance_p: params.price_tolerance_p,
                local_scheduler_id: spec.ls_id.clone(),
            }
        })
        .collect()
}

/// Expands a job group into jobs of identical tasks. Task and job ids are
/// drawn from the counters, which are advanced.
pub fn build_jobs(spec: &JobGroupSpec, consumer: ConsumerId, next_job: &mut u32, next_task: &mut u64) -> Vec<Job> {
    spec.tasks_per_job()
        .into_iter()
        .map(|count| {
            let job_id = JobId(*next_job);
            *next_job += 1;
            let tasks = (0..count)
                .map(|_| {
                    let id = TaskId(*next_task);
                    *next_task += 1;
                    Task::new(id, job_id, spec.length_mi, spec.memory_mb, spec.deadline_s)
                })
                .collect();
            Job {
                job_id,
                consumer_id: consumer,
                tasks,
                reliability_weight: spec.reliability_weight,
                completion_weight: spec.completion_weight,
            }
        })
        .collect()
}

/// Poisson bursts of local load over `[0, horizon_s)`, as sorted,
/// non-overlapping `(start, end)` intervals.
pub fn local_load_trace(params: &ModelParams, horizon_s: f64, rng: &mut RngStream) -> Vec<(f64, f64)> {
    let rate_per_s = params.burst_rate_per_hour / 3600.0;
    if rate_per_s <= 0.0 || horizon_s <= 0.0 {
        return Vec::new();
    }
    let gap = Exp::new(rate_per_s).expect("positive rate");
    let mut out: Vec<(f64, f64)> = Vec::new();
    let mut t = gap.sample(rng.rng());
    while t < horizon_s {
        let end = t + rng.uniform_in(params.burst_min_s, params.burst_max_s);
        match out.last_mut() {
            Some(last) if t <= last.1 => last.1 = last.1.max(end),
            _ => out.push((t, end)),
        }
        t += gap.sample(rng.rng());
    }
    out
}

/// Pre-existing queued work at t = 0, exponential with the scheduler's
/// queue-status mean.
pub fn initial_backlog_s(spec: &LocalSchedulerSpec, rng: &mut RngStream) -> f64 {
    if spec.queue_deadline_status_s <= 0.0 {
        return 0.0;
    }
    Exp::new(1.0 / spec.queue_deadline_status_s).expect("positive mean").sample(rng.rng())
}

/// Task shape used to synthesize history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskShape {
    pub length_mi: f64,
    pub memory_mb: f64,
    pub deadline_s: f64,
}

impl From<&JobGroupSpec> for TaskShape {
    fn from(g: &JobGroupSpec) -> Self {
        Self { length_mi: g.length_mi, memory_mb: g.memory_mb, deadline_s: g.deadline_s }
    }
}

/// Spacing between synthetic past submissions.
const WARMUP_SPACING_S: f64 = 3000.0;

/// Fills the node's record table with `depth` past tasks run through the
/// execution and failure model, then runs the analyzer at t = 0.
pub fn warmup_history(
    node: &mut NodeState,
    shapes: &[TaskShape],
    params: &ModelParams,
    depth: usize,
    rng: &mut RngStream,
) -> Result<(), crate::gnm::GnmError> {
    if shapes.is_empty() || depth == 0 {
        return Ok(());
    }
    let spec = node.spec.clone();
    for i in 0..depth {
        let shape = shapes[rng.index(shapes.len())];
        let u = rng.uniform();
        let waiting: u32 = if u < 0.6 {
            0
        } else if u < 0.9 {
            1
        } else {
            2
        };
        let local = rng.uniform() < 0.1;
        let cpu_load = if waiting > 0 { 0.5 } else { 0.0 } + if local { 1.0 - params.local_load_factor } else { 0.0 };
        let dtr = spec.dtr_base * rng.uniform_in(1.0 - params.dtr_jitter, 1.0 + params.dtr_jitter);
        let exec = shape.length_mi / spec.grid_mips;
        let transfer = shape.memory_mb / dtr;
        let slack = (shape.deadline_s - exec - transfer).max(0.0);
        let wait = (f64::from(waiting) * rng.uniform() * exec).min(slack);
        let submitted = -((depth - i) as f64) * WARMUP_SPACING_S;
        let start = submitted + transfer + wait;

        let aborted = rng.uniform() < params.warmup_abort_fraction;
        let (state, spent) = if aborted {
            (TaskState::Aborted, None)
        } else {
            match sample_task_outcome(&spec, rng) {
                Outcome::WillSucceed => (TaskState::Success, Some(exec)),
                Outcome::WillFail { at_fraction } => (TaskState::Fail, Some(exec * at_fraction)),
            }
        };
        let finished = start + spent.unwrap_or(0.0);
        let success = state == TaskState::Success;
        let price = crate::gnm::offered_price(
            spec.standard_price_alpha,
            spec.price_tolerance_p,
            waiting,
            params.queue_capacity,
            spec.dependability,
        );
        let record = TaskRecord {
            task_id: TaskId(u64::MAX - i as u64),
            cpu_load_at_submit: cpu_load.clamp(0.0, 1.0),
            free_ram_at_submit_mb: (spec.total_ram_mb - f64::from(waiting) * shape.memory_mb).max(0.0),
            task_size_mi: shape.length_mi,
            memory_mb: shape.memory_mb,
            deadline_s: shape.deadline_s,
            priority: crate::model::Priority::Normal,
            waiting_grid_tasks: waiting,
            dtr_at_submit: dtr,
            submitted_at_s: submitted,
            start_time_s: spent.map(|_| start),
            spent_time_s: spent,
            completion_time_s: success.then_some(finished - submitted),
            finished_at_s: Some(finished),
            final_state: state,
            cost_price: success.then(|| price * exec / 60.0),
        };
        node.records.retain(record)?;
    }
    node.run_rsa(0.0)
}
