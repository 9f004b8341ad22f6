//! One replication: all local schedulers, their nodes and the submitted job
//! groups driven by a single event loop.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{stream_id, Engine, EngineError, Event, RngStream, StreamKind};
use crate::gnm::{GnmConfig, GnmError, NodeState, TerminalEvent, TerminalKind};
use crate::model::{ConsumerId, Job, JobId, NodeAnnouncement, NodeId, NodeSpec, Prediction, Task, TaskId, TaskRecord, TaskState};
use crate::rough::should_run_rsa;
use crate::scenario::Scenario;
use crate::scheduling::{rank_candidates, retry_decision, AllocationRecord, Bid, Retry, Weights};
use crate::workload::{build_jobs, build_nodes, initial_backlog_s, local_load_trace, warmup_history, TaskShape};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Policy {
    /// Auction over GNM admission and CBR predictions.
    Gnm,
    /// Random node per task, no admission control, blind retries.
    RandomBaseline,
}

impl Policy {
    pub fn name(self) -> &'static str {
        match self {
            Policy::Gnm => "gnm",
            Policy::RandomBaseline => "baseline",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", content = "payload")]
pub enum EventKind {
    JobSubmitted { submission: usize },
    ScheduleRound { ls: usize },
    TaskArrival { node: NodeId },
    NodeWake { node: NodeId },
    TaskEnd { node: NodeId, end: TerminalEvent },
    DeadlineCheck { task: TaskId },
    LocalLoadChange { node: NodeId, active: bool, until_s: f64 },
    RsaTick { node: NodeId },
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Gnm(#[from] GnmError),
    #[error("event loop failed: {0}")]
    Run(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Fate {
    Pending,
    Dispatched,
    Success,
    /// Failed and not re-iterated.
    GivenUp,
    /// Deadline passed before the task could run.
    Expired,
}

impl Fate {
    pub fn is_final(self) -> bool {
        matches!(self, Fate::Success | Fate::GivenUp | Fate::Expired)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskOutcome {
    pub task_id: TaskId,
    pub job_id: JobId,
    pub submission: usize,
    pub submitted_at_s: f64,
    pub deadline_at_s: f64,
    pub fate: Fate,
    pub finished_at_s: Option<f64>,
    pub attempts: u32,
    pub first_dispatch_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationEvent {
    pub task_id: TaskId,
    pub at_s: f64,
    pub failed_node: NodeId,
    pub decision: Retry,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AnnounceCause {
    Admission,
    Completion,
    UrgentChange,
    Release,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnnouncementEntry {
    pub cause: AnnounceCause,
    #[serde(flatten)]
    pub announcement: NodeAnnouncement,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubmissionInfo {
    pub group: String,
    pub ls: String,
    pub at_s: f64,
    pub task_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeRecords {
    pub node_id: NodeId,
    pub ls: String,
    pub records: Vec<TaskRecord>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub trace: bool,
    pub keep_records: bool,
}

/// Everything a replication produced; metrics are computed from this alone.
#[derive(Debug, Clone)]
pub struct RunLog {
    pub policy: Policy,
    pub seed: u64,
    pub submissions: Vec<SubmissionInfo>,
    pub tasks: Vec<TaskOutcome>,
    pub allocations: Vec<AllocationRecord>,
    pub iterations: Vec<IterationEvent>,
    pub announcements: Vec<AnnouncementEntry>,
    /// Streaming count of in-deadline successes per submission.
    pub completed_in_deadline: Vec<usize>,
    pub trace: Vec<String>,
    pub records: Vec<NodeRecords>,
    pub events_processed: usize,
}

struct Slot {
    task: Task,
    ls: usize,
    weights: Weights,
    excluded: BTreeSet<NodeId>,
    current: Option<usize>,
}

struct World {
    policy: Policy,
    round_period_s: f64,
    nodes: Vec<NodeState>,
    node_rng: Vec<RngStream>,
    ls_nodes: Vec<Vec<usize>>,
    ls_gmips: Vec<f64>,
    pending: Vec<BTreeSet<TaskId>>,
    round_scheduled: Vec<bool>,
    baseline_rng: Vec<RngStream>,
    submission_tasks: Vec<Vec<TaskId>>,
    slots: Vec<Slot>,
    log: RunLog,
}

type Eng = Engine<EventKind>;

fn at(eng: &mut Eng, t: f64, kind: EventKind) -> Result<(), SimError> {
    eng.schedule(t, kind)?;
    Ok(())
}

impl World {
    fn idx(node: NodeId) -> usize {
        node.0 as usize
    }

    fn announce(&mut self, node: usize, now: f64, cause: AnnounceCause) {
        let announcement = self.nodes[node].announce(now);
        self.log.announcements.push(AnnouncementEntry { cause, announcement });
    }

    fn ensure_round(&mut self, eng: &mut Eng, ls: usize, t: f64) -> Result<(), SimError> {
        if !self.round_scheduled[ls] {
            self.round_scheduled[ls] = true;
            at(eng, t, EventKind::ScheduleRound { ls })?;
        }
        Ok(())
    }

    fn handle(&mut self, eng: &mut Eng, ev: &Event<EventKind>) -> Result<(), SimError> {
        let now = ev.fire_at_s;
        match &ev.kind {
            EventKind::JobSubmitted { submission } => {
                for &id in &self.submission_tasks[*submission] {
                    let slot = &self.slots[id.0 as usize];
                    let (ls, rel) = (slot.ls, slot.task.deadline_s);
                    let out = &mut self.log.tasks[id.0 as usize];
                    out.submitted_at_s = now;
                    out.deadline_at_s = now + rel;
                    self.pending[ls].insert(id);
                    at(eng, now + rel, EventKind::DeadlineCheck { task: id })?;
                }
                let ls = self.slots[self.submission_tasks[*submission][0].0 as usize].ls;
                self.ensure_round(eng, ls, now)?;
            }
            EventKind::ScheduleRound { ls } => {
                self.round_scheduled[*ls] = false;
                match self.policy {
                    Policy::Gnm => self.round_gnm(eng, *ls, now)?,
                    Policy::RandomBaseline => self.round_baseline(eng, *ls, now)?,
                }
                if !self.pending[*ls].is_empty() {
                    self.ensure_round(eng, *ls, now + self.round_period_s)?;
                }
            }
            EventKind::TaskArrival { node } | EventKind::NodeWake { node } => self.start(eng, Self::idx(*node), now)?,
            EventKind::TaskEnd { node, end } => self.task_end(eng, Self::idx(*node), end, now)?,
            EventKind::DeadlineCheck { task } => self.deadline_check(*task, now)?,
            EventKind::LocalLoadChange { node, active, until_s } => {
                let i = Self::idx(*node);
                let change = if *active {
                    let c = self.nodes[i].urgent_change(now, *until_s);
                    Some((c, AnnounceCause::UrgentChange))
                } else {
                    self.nodes[i].release_local_load(now).map(|c| (c, AnnounceCause::Release))
                };
                if let Some((c, cause)) = change {
                    self.log.announcements.push(AnnouncementEntry { cause, announcement: c.announcement });
                    if let Some(end) = c.reschedule {
                        at(eng, end.at_s, EventKind::TaskEnd { node: *node, end })?;
                    }
                }
            }
            EventKind::RsaTick { node } => {
                let n = &mut self.nodes[Self::idx(*node)];
                if should_run_rsa(&n.records.rsa, now) {
                    n.run_rsa(now)?;
                }
            }
        }
        Ok(())
    }

    /// Drops pending tasks that can no longer finish on this scheduler's
    /// nodes before their deadline.
    fn expire_hopeless(&mut self, ls: usize, now: f64) {
        let ids: Vec<TaskId> = self.pending[ls].iter().copied().collect();
        for id in ids {
            let exec = self.slots[id.0 as usize].task.length_mi / self.ls_gmips[ls];
            let out = &mut self.log.tasks[id.0 as usize];
            if now + exec > out.deadline_at_s {
                out.fate = Fate::Expired;
                self.pending[ls].remove(&id);
            }
        }
    }

    fn bids(&self, ls: usize, id: TaskId, now: f64, skip: &BTreeSet<usize>) -> Vec<Bid> {
        let slot = &self.slots[id.0 as usize];
        let deadline_at = self.log.tasks[id.0 as usize].deadline_at_s;
        self.ls_nodes[ls]
            .iter()
            .filter(|&&i| !skip.contains(&i) && !slot.excluded.contains(&self.nodes[i].spec.node_id))
            .map(|&i| Bid::request(&self.nodes[i], &slot.task, deadline_at, now))
            .collect()
    }

    fn round_gnm(&mut self, eng: &mut Eng, ls: usize, now: f64) -> Result<(), SimError> {
        self.expire_hopeless(ls, now);
        let ids: Vec<TaskId> = self.pending[ls].iter().copied().collect();
        // one task per node per round
        let mut used: BTreeSet<usize> = BTreeSet::new();
        for id in ids {
            if used.len() == self.ls_nodes[ls].len() {
                break;
            }
            let bids = self.bids(ls, id, now, &used);
            let slot = &self.slots[id.0 as usize];
            if let Ok(ranked) = rank_candidates(&bids, slot.weights, slot.task.deadline_s) {
                let winner = bids.iter().find(|b| b.node_id == ranked[0]).expect("ranked from bids").clone();
                let node = Self::idx(winner.node_id);
                used.insert(node);
                self.pending[ls].remove(&id);
                self.dispatch(eng, node, id, now, Some(&winner))?;
            }
        }
        Ok(())
    }

    fn round_baseline(&mut self, eng: &mut Eng, ls: usize, now: f64) -> Result<(), SimError> {
        let ids: Vec<TaskId> = std::mem::take(&mut self.pending[ls]).into_iter().collect();
        for id in ids {
            let k = self.baseline_rng[ls].index(self.ls_nodes[ls].len());
            let node = self.ls_nodes[ls][k];
            self.dispatch(eng, node, id, now, None)?;
        }
        Ok(())
    }

    fn dispatch(&mut self, eng: &mut Eng, node: usize, id: TaskId, now: f64, bid: Option<&Bid>) -> Result<(), SimError> {
        let ti = id.0 as usize;
        let task = self.slots[ti].task.clone();
        let deadline_at = self.log.tasks[ti].deadline_at_s;
        let rng = &mut self.node_rng[node];
        let ready = match bid {
            Some(b) => self.nodes[node].commit(task.clone(), deadline_at, b.announcement.offered_price, now, rng),
            None => self.nodes[node].force_enqueue(task.clone(), deadline_at, now, rng),
        };
        let out = &mut self.log.tasks[ti];
        out.attempts += 1;
        out.fate = Fate::Dispatched;
        out.first_dispatch_s.get_or_insert(now);
        let attempt = out.attempts;
        let prediction: Option<Prediction> = bid.and_then(|b| b.prediction);
        self.slots[ti].current = Some(self.log.allocations.len());
        self.log.allocations.push(AllocationRecord {
            task_id: id,
            job_id: task.job_id,
            attempt,
            node_id: self.nodes[node].spec.node_id,
            dispatched_at_s: now,
            ready_at_s: ready,
            started_at_s: None,
            outcome: None,
            finished_at_s: None,
            prediction,
        });
        self.announce(node, now, AnnounceCause::Admission);
        at(eng, ready, EventKind::TaskArrival { node: self.nodes[node].spec.node_id })
    }

    fn start(&mut self, eng: &mut Eng, node: usize, now: f64) -> Result<(), SimError> {
        if let Some(end) = self.nodes[node].try_start(now, &mut self.node_rng[node]) {
            if let Some(a) = self.slots[end.task_id.0 as usize].current {
                self.log.allocations[a].started_at_s = Some(now);
            }
            at(eng, end.at_s, EventKind::TaskEnd { node: self.nodes[node].spec.node_id, end })?;
        }
        Ok(())
    }

    fn task_end(&mut self, eng: &mut Eng, node: usize, end: &TerminalEvent, now: f64) -> Result<(), SimError> {
        if !self.nodes[node].is_current(end) {
            return Ok(());
        }
        let outcome = match end.kind {
            TerminalKind::Finish => TaskState::Success,
            TerminalKind::Fail(_) => TaskState::Fail,
        };
        let done = self.nodes[node].complete_task(end.task_id, outcome, now)?;
        let node_id = self.nodes[node].spec.node_id;
        self.log.announcements.push(AnnouncementEntry { cause: AnnounceCause::Completion, announcement: done.announcement });
        if done.rsa_due {
            at(eng, now, EventKind::RsaTick { node: node_id })?;
        }
        let ti = end.task_id.0 as usize;
        if let Some(a) = self.slots[ti].current.take() {
            let alloc = &mut self.log.allocations[a];
            alloc.outcome = Some(outcome);
            alloc.finished_at_s = Some(now);
        }
        if outcome == TaskState::Success {
            let out = &mut self.log.tasks[ti];
            out.fate = Fate::Success;
            out.finished_at_s = Some(now);
            if now <= out.deadline_at_s {
                self.log.completed_in_deadline[out.submission] += 1;
            }
        } else {
            self.failure(eng, node, end.task_id, now)?;
        }
        self.start(eng, node, now)
    }

    fn failure(&mut self, eng: &mut Eng, node: usize, id: TaskId, now: f64) -> Result<(), SimError> {
        let ti = id.0 as usize;
        let failed_node = self.nodes[node].spec.node_id;
        let ls = self.slots[ti].ls;
        let deadline_at = self.log.tasks[ti].deadline_at_s;
        let decision = match self.policy {
            Policy::Gnm => {
                self.slots[ti].excluded.insert(failed_node);
                let bids = self.bids(ls, id, now, &BTreeSet::new());
                let decision = retry_decision(now, deadline_at, &bids);
                if decision == Retry::ReIterated {
                    let slot = &self.slots[ti];
                    let ranked = rank_candidates(&bids, slot.weights, slot.task.deadline_s).expect("an admitted bid exists");
                    let winner = bids.iter().find(|b| b.node_id == ranked[0]).expect("ranked from bids").clone();
                    self.dispatch(eng, Self::idx(winner.node_id), id, now, Some(&winner))?;
                }
                decision
            }
            Policy::RandomBaseline => {
                if now < deadline_at {
                    let k = self.baseline_rng[ls].index(self.ls_nodes[ls].len());
                    let target = self.ls_nodes[ls][k];
                    self.dispatch(eng, target, id, now, None)?;
                    Retry::ReIterated
                } else {
                    Retry::GivenUp
                }
            }
        };
        if decision == Retry::GivenUp {
            let out = &mut self.log.tasks[ti];
            out.fate = Fate::GivenUp;
            out.finished_at_s = Some(now);
        }
        self.log.iterations.push(IterationEvent { task_id: id, at_s: now, failed_node, decision });
        Ok(())
    }

    /// At a task's absolute deadline the scheduler drops it if it is still
    /// pending, or aborts it if it is still waiting in a node queue.
    fn deadline_check(&mut self, id: TaskId, now: f64) -> Result<(), SimError> {
        let ti = id.0 as usize;
        match self.log.tasks[ti].fate {
            Fate::Pending => {
                let ls = self.slots[ti].ls;
                self.pending[ls].remove(&id);
                self.log.tasks[ti].fate = Fate::Expired;
            }
            Fate::Dispatched => {
                let Some(a) = self.slots[ti].current else { return Ok(()) };
                if self.log.allocations[a].started_at_s.is_some() {
                    return Ok(());
                }
                let node = Self::idx(self.log.allocations[a].node_id);
                let done = self.nodes[node].complete_task(id, TaskState::Aborted, now)?;
                self.log.announcements.push(AnnouncementEntry { cause: AnnounceCause::Completion, announcement: done.announcement });
                let alloc = &mut self.log.allocations[a];
                alloc.outcome = Some(TaskState::Aborted);
                alloc.finished_at_s = Some(now);
                self.slots[ti].current = None;
                let out = &mut self.log.tasks[ti];
                out.fate = Fate::Expired;
                out.finished_at_s = Some(now);
            }
            _ => {}
        }
        Ok(())
    }
}

/// The node specs of every local scheduler, numbered consecutively in
/// scheduler order.
pub fn node_population(scenario: &Scenario, seed: u64) -> Vec<Vec<NodeSpec>> {
    let mut first = 0u32;
    scenario
        .local_schedulers
        .iter()
        .enumerate()
        .map(|(l, ls)| {
            let mut rng = RngStream::new(seed, stream_id(StreamKind::NodeBuild, l as u64));
            let specs = build_nodes(ls, &scenario.params, first, &mut rng);
            first += ls.node_count;
            specs
        })
        .collect()
}

/// Runs one replication of `scenario` with the given seed.
pub fn run_replication(scenario: &Scenario, policy: Policy, seed: u64, opts: &RunOptions) -> Result<RunLog, SimError> {
    let violations = scenario.validate();
    if !violations.is_empty() {
        let msg: Vec<String> = violations.iter().map(|v| v.to_string()).collect();
        return Err(SimError::Invalid(msg.join("; ")));
    }
    let params = &scenario.params;
    let config = GnmConfig::from(params);
    let shapes: Vec<TaskShape> = scenario.job_groups.iter().map(TaskShape::from).collect();

    let horizon = scenario
        .submissions
        .iter()
        .map(|s| s.at_s + scenario.job_groups[scenario.group_index(&s.group).expect("validated")].deadline_s)
        .fold(0.0, f64::max)
        + params.round_period_s;

    let mut eng: Eng = Engine::new();
    if opts.trace {
        eng.enable_trace();
    }

    let mut nodes = Vec::new();
    let mut node_rng = Vec::new();
    let mut ls_nodes = Vec::new();
    for (ls, specs) in scenario.local_schedulers.iter().zip(node_population(scenario, seed)) {
        let mut members = Vec::new();
        for spec in specs {
            let i = spec.node_id.0 as u64;
            let node_id = spec.node_id;
            let mut state = NodeState::new(spec, config.clone());
            state.busy_until_s = initial_backlog_s(ls, &mut RngStream::new(seed, stream_id(StreamKind::Backlog, i)));
            let mut warm = RngStream::new(seed, stream_id(StreamKind::Warmup, i));
            warmup_history(&mut state, &shapes, params, params.warmup_depth as usize, &mut warm)?;
            let mut load = RngStream::new(seed, stream_id(StreamKind::LocalLoad, i));
            for (s, e) in local_load_trace(params, horizon, &mut load) {
                at(&mut eng, s, EventKind::LocalLoadChange { node: node_id, active: true, until_s: e })?;
                at(&mut eng, e, EventKind::LocalLoadChange { node: node_id, active: false, until_s: e })?;
            }
            if state.busy_until_s > 0.0 {
                at(&mut eng, state.busy_until_s, EventKind::NodeWake { node: node_id })?;
            }
            members.push(nodes.len());
            nodes.push(state);
            node_rng.push(RngStream::new(seed, stream_id(StreamKind::NodeRuntime, i)));
        }
        ls_nodes.push(members);
    }

    let mut slots = Vec::new();
    let mut tasks = Vec::new();
    let mut submissions = Vec::new();
    let mut submission_tasks = Vec::new();
    let (mut next_job, mut next_task) = (0u32, 0u64);
    for (s, sub) in scenario.submissions.iter().enumerate() {
        let g = &scenario.job_groups[scenario.group_index(&sub.group).expect("validated")];
        let ls = scenario.ls_index(&sub.ls).expect("validated");
        let jobs: Vec<Job> = build_jobs(g, ConsumerId(s as u32), &mut next_job, &mut next_task);
        let mut ids = Vec::new();
        for job in jobs {
            let weights = Weights { reliability: job.reliability_weight, completion: job.completion_weight };
            for task in job.tasks {
                ids.push(task.task_id);
                tasks.push(TaskOutcome {
                    task_id: task.task_id,
                    job_id: task.job_id,
                    submission: s,
                    submitted_at_s: sub.at_s,
                    deadline_at_s: sub.at_s + task.deadline_s,
                    fate: Fate::Pending,
                    finished_at_s: None,
                    attempts: 0,
                    first_dispatch_s: None,
                });
                slots.push(Slot { task, ls, weights, excluded: BTreeSet::new(), current: None });
            }
        }
        submissions.push(SubmissionInfo {
            group: sub.group.clone(),
            ls: sub.ls.clone(),
            at_s: sub.at_s,
            task_count: ids.len(),
        });
        submission_tasks.push(ids);
        if !submission_tasks[s].is_empty() {
            at(&mut eng, sub.at_s, EventKind::JobSubmitted { submission: s })?;
        }
    }

    let n_ls = scenario.local_schedulers.len();
    let mut world = World {
        policy,
        round_period_s: params.round_period_s,
        nodes,
        node_rng,
        ls_nodes,
        ls_gmips: scenario.local_schedulers.iter().map(|l| l.gmips).collect(),
        pending: vec![BTreeSet::new(); n_ls],
        round_scheduled: vec![false; n_ls],
        baseline_rng: (0..n_ls).map(|l| RngStream::new(seed, stream_id(StreamKind::Baseline, l as u64))).collect(),
        submission_tasks,
        slots,
        log: RunLog {
            policy,
            seed,
            completed_in_deadline: vec![0; submissions.len()],
            submissions,
            tasks,
            allocations: Vec::new(),
            iterations: Vec::new(),
            announcements: Vec::new(),
            trace: Vec::new(),
            records: Vec::new(),
            events_processed: 0,
        },
    };

    let processed = eng
        .run_until(horizon, |eng, ev| world.handle(eng, ev))
        .map_err(|e| SimError::Run(e.to_string()))?;
    log::debug!("seed {seed} {}: {processed} events up to t={horizon}", policy.name());

    let mut log = world.log;
    log.events_processed = processed;
    if let Some(t) = eng.trace() {
        log.trace = t.to_vec();
    }
    if opts.keep_records {
        log.records = world
            .nodes
            .iter()
            .map(|n| NodeRecords {
                node_id: n.spec.node_id,
                ls: n.spec.local_scheduler_id.clone(),
                records: n.records.cases().to_vec(),
            })
            .collect();
    }
    Ok(log)
}
