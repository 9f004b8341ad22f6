//! Grid Node's Module: per-node admission control, grid task queue and
//! record table, status announcements, urgent changes and price adjustment.

use std::collections::{BTreeMap, VecDeque};

use serde::Serialize;
use thiserror::Error;

use crate::cbr::{self, CaseBase, CaseFeatures, CbrError, QueryCase};
use crate::engine::{sample_task_outcome, Outcome, RngStream};
use crate::model::{
    IllegalTransition, NodeAnnouncement, NodeSpec, Prediction, Task, TaskId, TaskRecord, TaskState,
};
use crate::rough::{self, should_run_rsa, DecisionAttr, Knowledge, RoughError};
use crate::scenario::{Discretization, ModelParams};

/// CPU share a running grid task takes on its node.
const GRID_CPU_SHARE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GnmConfig {
    pub bins: usize,
    pub discretization: Discretization,
    pub k: usize,
    pub retrieval_attr: DecisionAttr,
    pub predicted_fail_threshold: f64,
    pub optimistic_prior: bool,
    pub local_load_factor: f64,
    pub queue_capacity: u32,
    pub price_window_s: f64,
    pub stats_window_s: f64,
    pub dtr_jitter: f64,
}

impl Default for GnmConfig {
    fn default() -> Self {
        Self::from(&ModelParams::default())
    }
}

impl From<&ModelParams> for GnmConfig {
    fn from(p: &ModelParams) -> Self {
        Self {
            bins: p.bins as usize,
            discretization: p.discretization,
            k: p.k as usize,
            retrieval_attr: p.retrieval_attr,
            predicted_fail_threshold: p.predicted_fail_threshold,
            optimistic_prior: p.optimistic_prior,
            local_load_factor: p.local_load_factor,
            queue_capacity: p.queue_capacity,
            price_window_s: p.price_window_s,
            stats_window_s: p.stats_window_s,
            dtr_jitter: p.dtr_jitter,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RejectReason {
    DeadlineInfeasible,
    InsufficientMemory,
    NotAccepting,
    PredictedFail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Admission {
    Accept { prediction: Prediction, offered_price: f64 },
    /// The CBR knowledge is attached to rejections as well.
    Reject { reason: RejectReason, prediction: Prediction },
}

impl Admission {
    pub fn is_accept(&self) -> bool {
        matches!(self, Admission::Accept { .. })
    }

    pub fn prediction(&self) -> &Prediction {
        match self {
            Admission::Accept { prediction, .. } | Admission::Reject { prediction, .. } => prediction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GnmError {
    #[error("task {0} is not on this node")]
    UnknownTask(TaskId),
    #[error(transparent)]
    Transition(#[from] IllegalTransition),
    #[error(transparent)]
    Cbr(#[from] CbrError),
    #[error(transparent)]
    Rough(#[from] RoughError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueuedTask {
    pub task: Task,
    pub deadline_at_s: f64,
    /// Arrival after transfer.
    pub ready_at_s: f64,
    pub exec_s: f64,
    pub offered_price: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningTask {
    pub task: Task,
    pub deadline_at_s: f64,
    pub started_at_s: f64,
    pub offered_price: f64,
    remaining_mi: f64,
    rate_mips: f64,
    rate_since_s: f64,
    /// Remaining work at which the task fails, if it is going to.
    fail_at_remaining_mi: Option<f64>,
    epoch: u64,
}

impl RunningTask {
    fn remaining_at(&self, now_s: f64) -> f64 {
        (self.remaining_mi - (now_s - self.rate_since_s) * self.rate_mips).max(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailReason {
    NodeFault,
    DeadlineMiss,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum TerminalKind {
    Finish,
    Fail(FailReason),
}

/// When and how the running task will end, valid while `epoch` matches.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TerminalEvent {
    pub task_id: TaskId,
    pub at_s: f64,
    pub kind: TerminalKind,
    pub epoch: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Snapshot {
    pub cpu_load: f64,
    pub free_ram_mb: f64,
    pub waiting: u32,
    pub dtr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub record: TaskRecord,
    /// The analyzer should rerun.
    pub rsa_due: bool,
    pub announcement: NodeAnnouncement,
}

/// Effect of a local-load change: a fresh announcement and, if a grid task
/// is running, its recomputed end.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadChange {
    pub announcement: NodeAnnouncement,
    pub reschedule: Option<TerminalEvent>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct QueueCounters {
    pub admitted: usize,
    pub succeeded: usize,
    pub failed: usize,
    pub aborted: usize,
}

#[derive(Debug, Clone)]
pub struct NodeState {
    pub spec: NodeSpec,
    pub config: GnmConfig,
    pub dtr_current: f64,
    pub queue: VecDeque<QueuedTask>,
    pub running: Option<RunningTask>,
    pub records: CaseBase,
    open: BTreeMap<TaskId, TaskRecord>,
    pub knowledge: Option<Knowledge>,
    /// Cleared while local processes occupy the node.
    pub accepting: bool,
    pub local_load_until_s: Option<f64>,
    /// Pre-existing queued work, not tracked as grid records.
    pub busy_until_s: f64,
    pub counters: QueueCounters,
    epoch: u64,
}

impl NodeState {
    pub fn new(spec: NodeSpec, config: GnmConfig) -> Self {
        let node = spec.node_id;
        Self {
            dtr_current: spec.dtr_base,
            spec,
            config,
            queue: VecDeque::new(),
            running: None,
            records: CaseBase::new(node),
            open: BTreeMap::new(),
            knowledge: None,
            accepting: true,
            local_load_until_s: None,
            busy_until_s: 0.0,
            counters: QueueCounters::default(),
            epoch: 0,
        }
    }

    pub fn under_local_load(&self, now_s: f64) -> bool {
        self.local_load_until_s.is_some_and(|t| t > now_s)
    }

    fn current_rate(&self, now_s: f64) -> f64 {
        if self.under_local_load(now_s) {
            self.spec.grid_mips * self.config.local_load_factor
        } else {
            self.spec.grid_mips
        }
    }

    pub fn cpu_load(&self, now_s: f64) -> f64 {
        let grid = if self.running.is_some() { GRID_CPU_SHARE } else { 0.0 };
        let local = if self.under_local_load(now_s) { 1.0 - self.config.local_load_factor } else { 0.0 };
        (grid + local).clamp(0.0, 1.0)
    }

    pub fn free_ram_mb(&self) -> f64 {
        let used: f64 = self.queue.iter().map(|q| q.task.memory_mb).sum::<f64>()
            + self.running.as_ref().map_or(0.0, |r| r.task.memory_mb);
        (self.spec.total_ram_mb - used).max(0.0)
    }

    pub fn waiting(&self) -> u32 {
        self.queue.len() as u32
    }

    pub fn snapshot(&self, now_s: f64) -> Snapshot {
        Snapshot {
            cpu_load: self.cpu_load(now_s),
            free_ram_mb: self.free_ram_mb(),
            waiting: self.waiting(),
            dtr: self.dtr_current,
        }
    }

    /// Seconds of grid work ahead of a newly queued task.
    pub fn backlog_s(&self, now_s: f64) -> f64 {
        let pre = (self.busy_until_s - now_s).max(0.0);
        let running = self
            .running
            .as_ref()
            .map_or(0.0, |r| r.remaining_at(now_s) / self.current_rate(now_s));
        let queued: f64 = self.queue.iter().map(|q| q.exec_s).sum();
        pre + running + queued
    }

    pub fn exec_s(&self, task: &Task) -> f64 {
        task.length_mi / self.spec.grid_mips
    }

    pub fn transfer_s(&self, task: &Task) -> f64 {
        task.size_units / self.dtr_current
    }

    /// Earliest finish assuming no failures: now + transfer + backlog + run time.
    pub fn static_finish_s(&self, task: &Task, now_s: f64) -> f64 {
        now_s + self.transfer_s(task) + self.backlog_s(now_s) + self.exec_s(task)
    }

    pub fn query_for(&self, task: &Task, now_s: f64) -> QueryCase {
        let snap = self.snapshot(now_s);
        let static_completion_s = self.static_finish_s(task, now_s) - now_s;
        QueryCase {
            features: CaseFeatures {
                size_mi: task.length_mi,
                memory_mb: task.memory_mb,
                priority: task.priority,
                deadline_s: task.deadline_s,
                cpu_load: snap.cpu_load,
                free_ram_mb: snap.free_ram_mb,
                waiting: snap.waiting,
                dtr: snap.dtr,
            },
            static_completion_s,
            static_cost: self.adjust_price(now_s) * self.exec_s(task) / 60.0,
        }
    }

    /// CBR prediction for `task`, retrieving through the rule matrices when
    /// the analyzer has run.
    pub fn predict(&self, task: &Task, now_s: f64) -> Prediction {
        let query = self.query_for(task, now_s);
        let cases = self.records.cases();
        let training: Vec<&TaskRecord> = match &self.knowledge {
            Some(k) => cbr::retrieve(&self.records, k, self.config.retrieval_attr, &query)
                .cases
                .into_iter()
                .map(|i| &cases[i])
                .collect(),
            None => cases.iter().filter(|r| r.final_state != TaskState::Aborted).collect(),
        };
        cbr::predict(&training, &query, self.config.k)
    }

    /// Admission decision without side effects. Cheap capacity checks run
    /// first; the prediction is computed for every reply.
    pub fn evaluate(&self, task: &Task, deadline_at_s: f64, now_s: f64) -> Admission {
        let prediction = self.predict(task, now_s);
        let reject = |reason| Admission::Reject { reason, prediction };
        if !self.accepting {
            return reject(RejectReason::NotAccepting);
        }
        if task.memory_mb > self.free_ram_mb() {
            return reject(RejectReason::InsufficientMemory);
        }
        if self.static_finish_s(task, now_s) > deadline_at_s {
            return reject(RejectReason::DeadlineInfeasible);
        }
        if prediction.predicted_state == TaskState::Fail
            && prediction.confidence >= self.config.predicted_fail_threshold
        {
            return reject(RejectReason::PredictedFail);
        }
        Admission::Accept { prediction, offered_price: self.adjust_price(now_s) }
    }

    /// Queues an accepted task in `Wait` and writes its submission record.
    /// Returns the time the task reaches the node.
    pub fn commit(
        &mut self,
        task: Task,
        deadline_at_s: f64,
        offered_price: f64,
        now_s: f64,
        rng: &mut RngStream,
    ) -> f64 {
        let j = self.config.dtr_jitter;
        self.dtr_current = self.spec.dtr_base * rng.uniform_in(1.0 - j, 1.0 + j);
        let snap = self.snapshot(now_s);
        let ready_at_s = now_s + self.transfer_s(&task);
        let record = TaskRecord {
            task_id: task.task_id,
            cpu_load_at_submit: snap.cpu_load,
            free_ram_at_submit_mb: snap.free_ram_mb,
            task_size_mi: task.length_mi,
            memory_mb: task.memory_mb,
            deadline_s: task.deadline_s,
            priority: task.priority,
            waiting_grid_tasks: snap.waiting,
            dtr_at_submit: snap.dtr,
            submitted_at_s: now_s,
            start_time_s: None,
            spent_time_s: None,
            completion_time_s: None,
            finished_at_s: None,
            final_state: TaskState::Wait,
            cost_price: None,
        };
        self.open.insert(task.task_id, record);
        let exec_s = self.exec_s(&task);
        self.queue.push_back(QueuedTask { task, deadline_at_s, ready_at_s, exec_s, offered_price });
        self.counters.admitted += 1;
        ready_at_s
    }

    /// Evaluates and, on acceptance, queues the task.
    pub fn admit_task(&mut self, task: &Task, deadline_at_s: f64, now_s: f64, rng: &mut RngStream) -> Admission {
        let decision = self.evaluate(task, deadline_at_s, now_s);
        if let Admission::Accept { offered_price, .. } = decision {
            self.commit(task.clone(), deadline_at_s, offered_price, now_s, rng);
        }
        decision
    }

    /// Queues a task with no admission checks (used by the naive baseline).
    pub fn force_enqueue(&mut self, task: Task, deadline_at_s: f64, now_s: f64, rng: &mut RngStream) -> f64 {
        let price = self.adjust_price(now_s);
        self.commit(task, deadline_at_s, price, now_s, rng)
    }

    fn terminal_event(&self, now_s: f64) -> Option<TerminalEvent> {
        let r = self.running.as_ref()?;
        let rate = r.rate_mips;
        let finish = r.rate_since_s + r.remaining_mi / rate;
        let mut best = (finish, TerminalKind::Finish);
        if let Some(fail_rem) = r.fail_at_remaining_mi {
            let fail_at = r.rate_since_s + (r.remaining_mi - fail_rem).max(0.0) / rate;
            if fail_at < best.0 {
                best = (fail_at, TerminalKind::Fail(FailReason::NodeFault));
            }
        }
        if finish > r.deadline_at_s && r.deadline_at_s < best.0 {
            best = (r.deadline_at_s, TerminalKind::Fail(FailReason::DeadlineMiss));
        }
        Some(TerminalEvent { task_id: r.task.task_id, at_s: best.0.max(now_s), kind: best.1, epoch: r.epoch })
    }

    /// Starts the head of the queue if the node is free and the task has
    /// arrived. A task that can no longer meet its deadline fails at once.
    pub fn try_start(&mut self, now_s: f64, rng: &mut RngStream) -> Option<TerminalEvent> {
        if self.running.is_some() || now_s < self.busy_until_s {
            return None;
        }
        if self.queue.front()?.ready_at_s > now_s {
            return None;
        }
        let q = self.queue.pop_front()?;
        let rec = self.open.get_mut(&q.task.task_id).expect("queued task has an open record");
        rec.final_state = rec.final_state.transition(TaskState::Running).expect("queued tasks wait");
        rec.start_time_s = Some(now_s);

        let rate = self.current_rate(now_s);
        let fail_at_remaining_mi = match sample_task_outcome(&self.spec, rng) {
            Outcome::WillSucceed => None,
            Outcome::WillFail { at_fraction } => Some(q.task.length_mi * (1.0 - at_fraction)),
        };
        self.epoch += 1;
        let hopeless = now_s + q.task.length_mi / rate > q.deadline_at_s;
        self.running = Some(RunningTask {
            remaining_mi: q.task.length_mi,
            task: q.task,
            deadline_at_s: q.deadline_at_s,
            started_at_s: now_s,
            offered_price: q.offered_price,
            rate_mips: rate,
            rate_since_s: now_s,
            fail_at_remaining_mi,
            epoch: self.epoch,
        });
        if hopeless {
            let r = self.running.as_ref().expect("just set");
            return Some(TerminalEvent {
                task_id: r.task.task_id,
                at_s: now_s,
                kind: TerminalKind::Fail(FailReason::DeadlineMiss),
                epoch: r.epoch,
            });
        }
        self.terminal_event(now_s)
    }

    /// Whether a terminal event is still current.
    pub fn is_current(&self, ev: &TerminalEvent) -> bool {
        self.running.as_ref().is_some_and(|r| r.task.task_id == ev.task_id && r.epoch == ev.epoch)
    }

    fn rerate(&mut self, now_s: f64) -> Option<TerminalEvent> {
        let rate = self.current_rate(now_s);
        let r = self.running.as_mut()?;
        r.remaining_mi = r.remaining_at(now_s);
        r.rate_since_s = now_s;
        r.rate_mips = rate;
        self.epoch += 1;
        r.epoch = self.epoch;
        self.terminal_event(now_s)
    }

    /// Local processes occupy the node until `until_s`: stop accepting,
    /// slow the running task and announce out of band. Overlapping bursts
    /// merge to the later horizon.
    pub fn urgent_change(&mut self, now_s: f64, until_s: f64) -> LoadChange {
        let was_loaded = self.under_local_load(now_s);
        // settle the running task's progress at the old rate first
        if let Some(r) = self.running.as_mut() {
            r.remaining_mi = r.remaining_at(now_s);
            r.rate_since_s = now_s;
        }
        let until = self.local_load_until_s.filter(|_| was_loaded).map_or(until_s, |t| t.max(until_s));
        self.local_load_until_s = Some(until);
        self.accepting = false;
        let reschedule = if was_loaded { None } else { self.rerate(now_s) };
        LoadChange { announcement: self.announce(now_s), reschedule }
    }

    /// End of a local burst. Ignored (returns `None`) if a merged burst
    /// still holds the node.
    pub fn release_local_load(&mut self, now_s: f64) -> Option<LoadChange> {
        match self.local_load_until_s {
            Some(t) if t <= now_s => {}
            _ => return None,
        }
        if let Some(r) = self.running.as_mut() {
            r.remaining_mi = r.remaining_at(now_s);
            r.rate_since_s = now_s;
        }
        self.local_load_until_s = None;
        self.accepting = true;
        let reschedule = self.rerate(now_s);
        Some(LoadChange { announcement: self.announce(now_s), reschedule })
    }

    /// Finalizes a task, retains its record and announces. Only `Wait` and
    /// `Running` tasks can be aborted; success and failure need a running
    /// task.
    pub fn complete_task(&mut self, task_id: TaskId, outcome: TaskState, now_s: f64) -> Result<Completion, GnmError> {
        let running_here = self.running.as_ref().is_some_and(|r| r.task.task_id == task_id);
        let mut record = self.open.remove(&task_id).ok_or(GnmError::UnknownTask(task_id))?;
        let transition = record.final_state.transition(outcome);
        if let Err(e) = transition {
            self.open.insert(task_id, record);
            return Err(e.into());
        }
        record.final_state = outcome;
        record.finished_at_s = Some(now_s);
        if running_here {
            let r = self.running.take().expect("checked");
            let spent = now_s - r.started_at_s;
            record.spent_time_s = Some(spent);
            if outcome == TaskState::Success {
                record.completion_time_s = Some(now_s - record.submitted_at_s);
                record.cost_price = Some(r.offered_price * spent / 60.0);
            }
        } else {
            self.queue.retain(|q| q.task.task_id != task_id);
        }
        match outcome {
            TaskState::Success => self.counters.succeeded += 1,
            TaskState::Fail => self.counters.failed += 1,
            _ => self.counters.aborted += 1,
        }
        self.records.retain(record.clone())?;
        let rsa_due = should_run_rsa(&self.records.rsa, now_s);
        Ok(Completion { record, rsa_due, announcement: self.announce(now_s) })
    }

    /// Rebuilds the three rule matrices from the record table.
    pub fn run_rsa(&mut self, now_s: f64) -> Result<(), GnmError> {
        let k = rough::run_rsa(self.records.cases(), self.config.bins, self.config.discretization, now_s)?;
        self.knowledge = Some(k);
        let total = self.records.len();
        self.records.rsa.mark_run(now_s, total);
        Ok(())
    }

    /// Tasks in the queue or running.
    pub fn in_flight(&self) -> usize {
        self.queue.len() + usize::from(self.running.is_some())
    }

    fn prior(&self) -> f64 {
        if self.config.optimistic_prior {
            1.0
        } else {
            0.0
        }
    }

    fn window<'a>(&'a self, now_s: f64, window_s: f64) -> impl Iterator<Item = &'a TaskRecord> + 'a {
        self.records
            .cases()
            .iter()
            .filter(move |r| window_s <= 0.0 || r.finished_at_s.is_some_and(|t| t >= now_s - window_s))
    }

    /// Offered price from queue fill and recent success ratio.
    pub fn adjust_price(&self, now_s: f64) -> f64 {
        let sr = success_ratio_with_prior(self.window(now_s, self.config.price_window_s), self.prior());
        offered_price(
            self.spec.standard_price_alpha,
            self.spec.price_tolerance_p,
            self.waiting(),
            self.config.queue_capacity,
            sr,
        )
    }

    /// Time at which a nominal task (median historical size and deadline)
    /// would again be deadline-feasible.
    pub fn availability_horizon(&self, now_s: f64) -> f64 {
        let cases = self.records.cases();
        let slack = if cases.is_empty() {
            0.0
        } else {
            let size = median(cases.iter().map(|r| r.task_size_mi));
            let deadline = median(cases.iter().map(|r| r.deadline_s));
            (deadline - size / self.spec.grid_mips).max(0.0)
        };
        let drained = now_s + (self.backlog_s(now_s) - slack).max(0.0);
        match self.local_load_until_s {
            Some(t) if t > now_s => drained.max(t),
            _ => drained,
        }
    }

    pub fn announce(&self, now_s: f64) -> NodeAnnouncement {
        let window: Vec<&TaskRecord> = self.window(now_s, self.config.stats_window_s).collect();
        let horizon = self.availability_horizon(now_s);
        let accepting = self.accepting && horizon <= now_s;
        let non_accept_until_s = if accepting {
            now_s
        } else if horizon > now_s {
            horizon
        } else {
            now_s + 1.0
        };
        let (avg_cpu_idle, avg_free_ram_mb) = if window.is_empty() {
            (1.0 - self.cpu_load(now_s), self.free_ram_mb())
        } else {
            let n = window.len() as f64;
            (
                window.iter().map(|r| 1.0 - r.cpu_load_at_submit).sum::<f64>() / n,
                window.iter().map(|r| r.free_ram_at_submit_mb).sum::<f64>() / n,
            )
        };
        NodeAnnouncement {
            node_id: self.spec.node_id,
            accepting,
            non_accept_until_s,
            success_ratio: success_ratio_with_prior(window.iter().copied(), self.prior()),
            act_s: compute_act(window.iter().copied()).mean_s,
            avg_cpu_idle,
            avg_free_ram_mb,
            offered_price: self.adjust_price(now_s),
            issued_at_s: now_s,
        }
    }
}

fn median(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// `N_s / (N_s + N_fail)`; aborted tasks are neutral. `empty` is returned
/// when no task has been decided.
pub fn success_ratio_with_prior<'a>(records: impl IntoIterator<Item = &'a TaskRecord>, empty: f64) -> f64 {
    let (s, f) = records.into_iter().fold((0usize, 0usize), |(s, f), r| match r.final_state {
        TaskState::Success => (s + 1, f),
        TaskState::Fail => (s, f + 1),
        _ => (s, f),
    });
    if s + f == 0 {
        empty
    } else {
        s as f64 / (s + f) as f64
    }
}

/// Success ratio with the optimistic empty-history convention (1.0).
pub fn compute_success_ratio(records: &CaseBase) -> f64 {
    success_ratio_with_prior(records.cases(), 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Act {
    pub mean_s: f64,
    /// No successful task to average over.
    pub no_data: bool,
}

/// Average completion time over successful tasks.
pub fn compute_act<'a>(records: impl IntoIterator<Item = &'a TaskRecord>) -> Act {
    let (sum, n) = records
        .into_iter()
        .filter(|r| r.final_state == TaskState::Success)
        .filter_map(|r| r.completion_time_s)
        .fold((0.0, 0usize), |(s, n), c| (s + c, n + 1));
    if n == 0 {
        Act { mean_s: 0.0, no_data: true }
    } else {
        Act { mean_s: sum / n as f64, no_data: false }
    }
}

/// `α·(1 + p·pressure)` with pressure the mean of queue fill (0 empty,
/// 1 full) and `2·success_ratio − 1`, kept strictly inside
/// `(α(1−p), α(1+p))` by `1e-9·α`.
pub fn offered_price(alpha: f64, p: f64, waiting: u32, queue_capacity: u32, success_ratio: f64) -> f64 {
    if p <= 0.0 {
        return alpha;
    }
    let fill = (f64::from(waiting) / f64::from(queue_capacity.max(1))).min(1.0);
    let pressure = ((fill + (2.0 * success_ratio.clamp(0.0, 1.0) - 1.0)) / 2.0).clamp(-1.0, 1.0);
    let price = alpha * (1.0 + p * pressure);
    let eps = 1e-9 * alpha;
    let (lo, hi) = (alpha * (1.0 - p) + eps, alpha * (1.0 + p) - eps);
    if lo >= hi {
        alpha
    } else {
        price.clamp(lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{JobId, NodeId, Priority};

    pub(crate) fn spec(mips: f64, dependability: f64) -> NodeSpec {
        NodeSpec {
            node_id: NodeId(1),
            grid_mips: mips,
            total_ram_mb: 2048.0,
            dtr_base: 10.0,
            dependability,
            standard_price_alpha: 10.0,
            price_tolerance_p: 0.2,
            local_scheduler_id: "LS1".into(),
        }
    }

    fn group1_task(id: u64) -> Task {
        Task::new(TaskId(id), JobId(0), 45500.0, 1.93, 1200.0)
    }

    fn rec(state: TaskState, completion: Option<f64>) -> TaskRecord {
        TaskRecord {
            task_id: TaskId(0),
            cpu_load_at_submit: 0.0,
            free_ram_at_submit_mb: 1.0,
            task_size_mi: 1.0,
            memory_mb: 1.0,
            deadline_s: 1.0,
            priority: Priority::Normal,
            waiting_grid_tasks: 0,
            dtr_at_submit: 1.0,
            submitted_at_s: 0.0,
            start_time_s: None,
            spent_time_s: None,
            completion_time_s: completion,
            finished_at_s: Some(0.0),
            final_state: state,
            cost_price: None,
        }
    }

    #[test]
    fn admission_examples() {
        let mut rng = RngStream::new(0, 0);
        let node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        let t = group1_task(1);
        assert!(node.evaluate(&t, 1200.0, 0.0).is_accept());

        let mut busy = node.clone();
        busy.busy_until_s = 600.0;
        assert!(matches!(
            busy.evaluate(&t, 1200.0, 0.0),
            Admission::Reject { reason: RejectReason::DeadlineInfeasible, .. }
        ));

        let mut closed = node.clone();
        closed.accepting = false;
        assert!(matches!(
            closed.evaluate(&t, 1e9, 0.0),
            Admission::Reject { reason: RejectReason::NotAccepting, .. }
        ));

        let mut n = node;
        let mut big = group1_task(2);
        big.memory_mb = 4096.0;
        assert!(matches!(
            n.admit_task(&big, 1e9, 0.0, &mut rng),
            Admission::Reject { reason: RejectReason::InsufficientMemory, .. }
        ));
        assert!(n.queue.is_empty());
        assert!(n.admit_task(&t, 1200.0, 0.0, &mut rng).is_accept());
        assert_eq!(n.queue.len(), 1);
    }

    #[test]
    fn success_ratio_examples() {
        let mut cb = CaseBase::new(NodeId(0));
        for _ in 0..3 {
            cb.retain(rec(TaskState::Success, Some(1.0))).unwrap();
        }
        cb.retain(rec(TaskState::Fail, None)).unwrap();
        for _ in 0..2 {
            cb.retain(rec(TaskState::Aborted, None)).unwrap();
        }
        assert_eq!(compute_success_ratio(&cb), 0.75);
        assert_eq!(compute_success_ratio(&CaseBase::new(NodeId(0))), 1.0);
        let fails: Vec<_> = (0..4).map(|_| rec(TaskState::Fail, None)).collect();
        assert_eq!(success_ratio_with_prior(&fails, 1.0), 0.0);
    }

    #[test]
    fn act_examples() {
        let rs: Vec<_> = [700.0, 325.0, 475.0].iter().map(|&c| rec(TaskState::Success, Some(c))).collect();
        assert_eq!(compute_act(&rs), Act { mean_s: 500.0, no_data: false });
        assert_eq!(compute_act(&[rec(TaskState::Fail, None)]), Act { mean_s: 0.0, no_data: true });
    }

    #[test]
    fn price_examples() {
        assert_eq!(offered_price(10.0, 0.2, 0, 10, 0.5), 10.0);
        let full = offered_price(10.0, 0.2, 10, 10, 1.0);
        assert!(full < 12.0 && full > 12.0 - 1e-6);
        for sr in [0.0, 0.3, 1.0] {
            assert_eq!(offered_price(10.0, 0.0, 7, 10, sr), 10.0);
        }
    }

    #[test]
    fn idle_node_announces_now() {
        let node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        let a = node.announce(50.0);
        assert!(a.accepting);
        assert_eq!(a.non_accept_until_s, 50.0);
        let (lo, hi) = node.spec.price_bounds();
        assert!(a.offered_price > lo && a.offered_price < hi);
    }

    #[test]
    fn two_hours_of_work_closes_the_node() {
        let mut node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        node.busy_until_s = 7200.0;
        let a = node.announce(0.0);
        assert!(!a.accepting);
        assert!((a.non_accept_until_s - 7200.0).abs() < 1e-9);
    }

    #[test]
    fn run_to_success_records_completion() {
        let mut rng = RngStream::new(0, 0);
        let mut node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        let t = group1_task(1);
        assert!(node.admit_task(&t, 1200.0, 0.0, &mut rng).is_accept());
        let ready = node.queue[0].ready_at_s;
        assert!(node.try_start(0.0, &mut rng).is_none(), "not arrived yet");
        let ev = node.try_start(ready, &mut rng).unwrap();
        assert_eq!(ev.kind, TerminalKind::Finish);
        assert!((ev.at_s - (ready + 700.0)).abs() < 1e-9);
        let done = node.complete_task(t.task_id, TaskState::Success, ev.at_s).unwrap();
        assert!((done.record.completion_time_s.unwrap() - (ready + 700.0)).abs() < 1e-9);
        assert!((done.record.spent_time_s.unwrap() - 700.0).abs() < 1e-9);
        assert_eq!(done.record.final_state, TaskState::Success);
        assert!(done.rsa_due, "first record on a fresh node triggers the analyzer");
        assert_eq!(node.in_flight(), 0);
    }

    #[test]
    fn failure_and_abort_records() {
        let mut rng = RngStream::new(0, 0);
        let mut node = NodeState::new(spec(65.0, 0.0), GnmConfig::default());
        let t = group1_task(1);
        node.admit_task(&t, 1200.0, 0.0, &mut rng);
        node.admit_task(&group1_task(2), 1e6, 0.0, &mut rng);
        let ev = node.try_start(1.0, &mut rng).unwrap();
        assert_eq!(ev.kind, TerminalKind::Fail(FailReason::NodeFault));
        let done = node.complete_task(t.task_id, TaskState::Fail, ev.at_s).unwrap();
        assert_eq!(done.record.completion_time_s, None);
        assert!(done.record.spent_time_s.is_some());

        let ab = node.complete_task(TaskId(2), TaskState::Aborted, ev.at_s).unwrap();
        assert_eq!(ab.record.final_state, TaskState::Aborted);
        assert_eq!(node.records.tally().aborted, 1);
        assert_eq!(compute_success_ratio(&node.records), 0.0);
        assert!(matches!(
            node.complete_task(TaskId(77), TaskState::Aborted, 0.0),
            Err(GnmError::UnknownTask(_))
        ));
    }

    #[test]
    fn burst_slows_running_task() {
        let mut rng = RngStream::new(0, 0);
        let mut node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        let t = group1_task(1);
        node.admit_task(&t, 1e6, 0.0, &mut rng);
        let ready = node.queue[0].ready_at_s;
        let first = node.try_start(ready, &mut rng).unwrap();
        // burst from ready+100 for 300 s at half speed
        let b0 = ready + 100.0;
        let change = node.urgent_change(b0, b0 + 300.0);
        assert!(!change.announcement.accepting);
        let slowed = change.reschedule.unwrap();
        assert!(!node.is_current(&first));
        // 100 s done at full rate, 600 s of work left at half speed would need 1200 s
        assert!((slowed.at_s - (b0 + 1200.0)).abs() < 1e-6);
        let back = node.release_local_load(b0 + 300.0).unwrap();
        let end = back.reschedule.unwrap();
        // 150 s of full-rate work done during the burst, 450 s remain
        assert!((end.at_s - (b0 + 300.0 + 450.0)).abs() < 1e-6);
        assert!(node.accepting);
    }

    #[test]
    fn merged_bursts_keep_later_horizon() {
        let mut node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        node.urgent_change(100.0, 400.0);
        let again = node.urgent_change(200.0, 300.0);
        assert_eq!(node.local_load_until_s, Some(400.0));
        assert!(again.announcement.non_accept_until_s >= 400.0);
        assert!(node.release_local_load(300.0).is_none());
        assert!(node.release_local_load(400.0).is_some());
    }

    #[test]
    fn late_start_fails_immediately() {
        let mut rng = RngStream::new(0, 0);
        let mut node = NodeState::new(spec(65.0, 1.0), GnmConfig::default());
        let t = group1_task(1);
        node.force_enqueue(t, 500.0, 0.0, &mut rng);
        let ev = node.try_start(1.0, &mut rng).unwrap();
        assert_eq!(ev.kind, TerminalKind::Fail(FailReason::DeadlineMiss));
        assert_eq!(ev.at_s, 1.0);
    }
}
