//! Shared domain types: nodes, jobs, tasks, task records, announcements and
//! the scheduler and job-group descriptions a scenario is built from.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

macro_rules! id_type {
    ($name:ident, $inner:ty, $prefix:literal) => {
        #[derive(
            Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
        )]
        #[serde(transparent)]
        pub struct $name(pub $inner);

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, concat!($prefix, "{}"), self.0)
            }
        }
    };
}

id_type!(NodeId, u32, "N");
id_type!(TaskId, u64, "T");
id_type!(JobId, u32, "J");
id_type!(ConsumerId, u32, "C");

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Priority {
    Low,
    Normal,
    High,
}

impl Priority {
    pub const ALL: [Priority; 3] = [Priority::Low, Priority::Normal, Priority::High];

    pub fn code(self) -> u16 {
        match self {
            Priority::Low => 0,
            Priority::Normal => 1,
            Priority::High => 2,
        }
    }
}

/// Lifecycle of a grid task on a node.
///
/// `Aborted` is the neutral outcome: the scheduler cancelled the task and the
/// node is not to blame, so it never counts toward the success ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TaskState {
    Wait,
    Running,
    Success,
    Fail,
    Aborted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("illegal task transition {from:?} -> {to:?}")]
pub struct IllegalTransition {
    pub from: TaskState,
    pub to: TaskState,
}

impl TaskState {
    pub const ALL: [TaskState; 5] = [
        TaskState::Wait,
        TaskState::Running,
        TaskState::Success,
        TaskState::Fail,
        TaskState::Aborted,
    ];

    pub fn is_terminal(self) -> bool {
        matches!(self, TaskState::Success | TaskState::Fail | TaskState::Aborted)
    }

    pub fn can_transition(self, to: TaskState) -> bool {
        use TaskState::*;
        matches!(
            (self, to),
            (Wait, Running) | (Running, Success) | (Running, Fail) | (Wait, Aborted) | (Running, Aborted)
        )
    }

    pub fn transition(self, to: TaskState) -> Result<TaskState, IllegalTransition> {
        if self.can_transition(to) {
            Ok(to)
        } else {
            Err(IllegalTransition { from: self, to })
        }
    }

    /// Code used in discretized decision tables.
    pub fn code(self) -> u16 {
        match self {
            TaskState::Success => 0,
            TaskState::Fail => 1,
            TaskState::Aborted => 2,
            TaskState::Wait => 3,
            TaskState::Running => 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub node_id: NodeId,
    /// MIPS allocated to grid tasks.
    pub grid_mips: f64,
    pub total_ram_mb: f64,
    /// Data transmission rate, data units per second.
    pub dtr_base: f64,
    pub dependability: f64,
    /// Standard price per minute (alpha).
    pub standard_price_alpha: f64,
    /// Allowed relative price variation (p), within [0, 0.5].
    pub price_tolerance_p: f64,
    pub local_scheduler_id: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{field}: {message}")]
pub struct InvalidValue {
    pub field: &'static str,
    pub message: String,
}

fn check(ok: bool, field: &'static str, message: impl Into<String>) -> Result<(), InvalidValue> {
    if ok {
        Ok(())
    } else {
        Err(InvalidValue { field, message: message.into() })
    }
}

impl NodeSpec {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        check(self.grid_mips > 0.0, "grid_mips", "must be > 0")?;
        check(self.total_ram_mb > 0.0, "total_ram_mb", "must be > 0")?;
        check(self.dtr_base > 0.0, "dtr_base", "must be > 0")?;
        check(
            (0.0..=1.0).contains(&self.dependability),
            "dependability",
            "dependability ∉ [0,1]",
        )?;
        check(self.standard_price_alpha > 0.0, "standard_price_alpha", "must be > 0")?;
        check(
            (0.0..=0.5).contains(&self.price_tolerance_p),
            "price_tolerance_p",
            "price tolerance ∉ [0,0.5]",
        )
    }

    /// Open price interval `(α(1−p), α(1+p))`.
    pub fn price_bounds(&self) -> (f64, f64) {
        let a = self.standard_price_alpha;
        let p = self.price_tolerance_p;
        (a * (1.0 - p), a * (1.0 + p))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Task {
    pub task_id: TaskId,
    pub job_id: JobId,
    pub length_mi: f64,
    pub memory_mb: f64,
    /// Relative to submission.
    pub deadline_s: f64,
    pub priority: Priority,
    /// Transfer size in data units.
    pub size_units: f64,
}

impl Task {
    /// Builds a task whose transfer size equals its memory footprint.
    pub fn new(task_id: TaskId, job_id: JobId, length_mi: f64, memory_mb: f64, deadline_s: f64) -> Self {
        Self {
            task_id,
            job_id,
            length_mi,
            memory_mb,
            deadline_s,
            priority: Priority::Normal,
            size_units: memory_mb,
        }
    }

    pub fn validate(&self) -> Result<(), InvalidValue> {
        check(self.length_mi > 0.0, "length_mi", "must be > 0")?;
        check(self.memory_mb > 0.0, "memory_mb", "must be > 0")?;
        check(self.deadline_s > 0.0, "deadline_s", "must be > 0")?;
        check(self.size_units >= 0.0, "size_units", "must be >= 0")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Job {
    pub job_id: JobId,
    pub consumer_id: ConsumerId,
    pub tasks: Vec<Task>,
    pub reliability_weight: f64,
    pub completion_weight: f64,
}

impl Job {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        check(!self.tasks.is_empty(), "tasks", "a job needs at least one task")?;
        check(
            weights_sum_to_one(self.reliability_weight, self.completion_weight),
            "reliability_weight",
            "reliability + completion weights must sum to 1",
        )?;
        for t in &self.tasks {
            t.validate()?;
        }
        Ok(())
    }
}

pub(crate) fn weights_sum_to_one(r: f64, c: f64) -> bool {
    (0.0..=1.0).contains(&r) && (0.0..=1.0).contains(&c) && (r + c - 1.0).abs() <= 1e-9
}

/// One row of a node's local history table.
///
/// Besides the fields the node records at submission and on completion, the
/// record keeps the task's memory demand, relative deadline and a few
/// timestamps; case similarity and the price window need them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub cpu_load_at_submit: f64,
    pub free_ram_at_submit_mb: f64,
    pub task_size_mi: f64,
    pub memory_mb: f64,
    pub deadline_s: f64,
    pub priority: Priority,
    pub waiting_grid_tasks: u32,
    pub dtr_at_submit: f64,
    pub submitted_at_s: f64,
    pub start_time_s: Option<f64>,
    pub spent_time_s: Option<f64>,
    /// Submission to successful finish. Present iff `final_state` is `Success`.
    pub completion_time_s: Option<f64>,
    pub finished_at_s: Option<f64>,
    pub final_state: TaskState,
    pub cost_price: Option<f64>,
}

impl TaskRecord {
    pub fn validate(&self) -> Result<(), InvalidValue> {
        check(
            self.completion_time_s.is_some() == (self.final_state == TaskState::Success),
            "completion_time_s",
            "completion time must be present iff the task succeeded",
        )?;
        if let (Some(spent), Some(done)) = (self.spent_time_s, self.completion_time_s) {
            check(spent <= done + 1e-9, "spent_time_s", "spent time exceeds completion time")?;
        }
        check(
            (0.0..=1.0).contains(&self.cpu_load_at_submit),
            "cpu_load_at_submit",
            "cpu load ∉ [0,1]",
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeAnnouncement {
    pub node_id: NodeId,
    pub accepting: bool,
    pub non_accept_until_s: f64,
    pub success_ratio: f64,
    pub act_s: f64,
    pub avg_cpu_idle: f64,
    pub avg_free_ram_mb: f64,
    pub offered_price: f64,
    pub issued_at_s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `Success` or `Fail`.
    pub predicted_state: TaskState,
    pub predicted_completion_s: f64,
    pub predicted_cost: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocalSchedulerSpec {
    pub ls_id: String,
    pub node_count: u32,
    pub gmips: f64,
    pub queue_deadline_status_s: f64,
    pub medium_dependability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobGroupSpec {
    pub name: String,
    pub job_count: u32,
    pub total_tasks: u32,
    pub deadline_s: f64,
    pub memory_mb: f64,
    pub length_mi: f64,
    pub reliability_weight: f64,
    pub completion_weight: f64,
}

impl JobGroupSpec {
    /// Task count of each job: an even split with the remainder dealt
    /// round-robin to the first jobs.
    pub fn tasks_per_job(&self) -> Vec<u32> {
        if self.job_count == 0 {
            return Vec::new();
        }
        let base = self.total_tasks / self.job_count;
        let extra = self.total_tasks % self.job_count;
        (0..self.job_count).map(|j| base + u32::from(j < extra)).collect()
    }
}
