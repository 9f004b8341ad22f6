//! Evaluation measures over a finished run log, plus CSV/JSON emission.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::model::{TaskId, TaskState};
use crate::scheduling::Retry;
use crate::sim::{Fate, RunLog};

/// In-deadline successes over all tasks of one submission.
pub fn completion_ratio(log: &RunLog, submission: usize) -> f64 {
    let (mut total, mut ok) = (0usize, 0usize);
    for t in log.tasks.iter().filter(|t| t.submission == submission) {
        total += 1;
        if t.fate == Fate::Success && t.finished_at_s.is_some_and(|f| f <= t.deadline_at_s) {
            ok += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        ok as f64 / total as f64
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    /// `[predicted][actual]`, index 0 = Success, 1 = Fail.
    pub counts: [[usize; 2]; 2],
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        self.counts[0][0] + self.counts[1][1]
    }

    /// `None` when nothing was predicted.
    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| self.correct() as f64 / n as f64)
    }
}

fn outcome_index(s: TaskState) -> Option<usize> {
    match s {
        TaskState::Success => Some(0),
        TaskState::Fail => Some(1),
        _ => None,
    }
}

/// Predicted vs actual state of every dispatched attempt that carried a
/// prediction and ended in success or failure, optionally for one submission.
pub fn prediction_confusion(log: &RunLog, submission: Option<usize>) -> Confusion {
    let sub_of: BTreeMap<TaskId, usize> = log.tasks.iter().map(|t| (t.task_id, t.submission)).collect();
    let mut c = Confusion::default();
    for a in &log.allocations {
        if submission.is_some_and(|s| sub_of.get(&a.task_id) != Some(&s)) {
            continue;
        }
        let (Some(p), Some(actual)) = (a.prediction, a.outcome) else { continue };
        if let (Some(i), Some(j)) = (outcome_index(p.predicted_state), outcome_index(actual)) {
            c.counts[i][j] += 1;
        }
    }
    c
}

pub fn prediction_accuracy(log: &RunLog, submission: Option<usize>) -> Option<f64> {
    prediction_confusion(log, submission).accuracy()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct IterationStats {
    pub reiterations: usize,
    pub given_up: usize,
    pub max_attempts: u32,
}

pub fn iteration_stats(log: &RunLog, submission: Option<usize>) -> IterationStats {
    let sub_of: BTreeMap<TaskId, usize> = log.tasks.iter().map(|t| (t.task_id, t.submission)).collect();
    let keep = |id: &TaskId| submission.is_none_or(|s| sub_of.get(id) == Some(&s));
    let mut st = IterationStats::default();
    for e in log.iterations.iter().filter(|e| keep(&e.task_id)) {
        match e.decision {
            Retry::ReIterated => st.reiterations += 1,
            Retry::GivenUp => st.given_up += 1,
        }
    }
    st.max_attempts = log.tasks.iter().filter(|t| keep(&t.task_id)).map(|t| t.attempts).max().unwrap_or(0);
    st
}

/// Timeline of a successful task, `submit → finish`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Overhead {
    pub task_id: TaskId,
    /// Pending in the scheduler before the first dispatch.
    pub selection_s: f64,
    /// Lost on failed attempts, first dispatch to the last one.
    pub retry_s: f64,
    pub transfer_s: f64,
    /// Queued on the node after arrival.
    pub waiting_s: f64,
    pub execution_s: f64,
    /// Deadline minus total.
    pub slack_s: f64,
}

impl Overhead {
    pub fn total_s(&self) -> f64 {
        self.selection_s + self.retry_s + self.transfer_s + self.waiting_s + self.execution_s
    }
}

pub fn overhead_accounting(log: &RunLog) -> Vec<Overhead> {
    let mut last: BTreeMap<TaskId, usize> = BTreeMap::new();
    for (i, a) in log.allocations.iter().enumerate() {
        last.insert(a.task_id, i);
    }
    log.tasks
        .iter()
        .filter(|t| t.fate == Fate::Success)
        .filter_map(|t| {
            let a = &log.allocations[*last.get(&t.task_id)?];
            let first = t.first_dispatch_s?;
            let start = a.started_at_s?;
            let finish = t.finished_at_s?;
            Some(Overhead {
                task_id: t.task_id,
                selection_s: first - t.submitted_at_s,
                retry_s: a.dispatched_at_s - first,
                transfer_s: a.ready_at_s - a.dispatched_at_s,
                waiting_s: start - a.ready_at_s,
                execution_s: finish - start,
                slack_s: t.deadline_at_s - finish,
            })
        })
        .collect()
}

/// Tasks counted as successful that finished after their absolute deadline.
pub fn deadline_violations(log: &RunLog) -> usize {
    log.tasks
        .iter()
        .filter(|t| t.fate == Fate::Success && t.finished_at_s.is_none_or(|f| f > t.deadline_at_s))
        .count()
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (mean, var.sqrt())
}

/// One results row: a submission (group × LS) of one replication.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub group: String,
    pub ls: String,
    pub policy: String,
    pub replication: u32,
    pub seed: u64,
    pub tasks: usize,
    pub completed: usize,
    pub completion_ratio: f64,
    /// Empty when no prediction was made.
    pub prediction_accuracy: Option<f64>,
    pub predictions: usize,
    pub reiterations: usize,
    pub given_up: usize,
    pub max_attempts: u32,
    pub mean_selection_s: f64,
    pub mean_slack_s: f64,
}

pub fn result_rows(log: &RunLog, replication: u32) -> Vec<ResultRow> {
    let overhead = overhead_accounting(log);
    let sub_of: BTreeMap<TaskId, usize> = log.tasks.iter().map(|t| (t.task_id, t.submission)).collect();
    log.submissions
        .iter()
        .enumerate()
        .map(|(s, info)| {
            let conf = prediction_confusion(log, Some(s));
            let it = iteration_stats(log, Some(s));
            let oh: Vec<&Overhead> = overhead.iter().filter(|o| sub_of.get(&o.task_id) == Some(&s)).collect();
            let sel: Vec<f64> = oh.iter().map(|o| o.selection_s).collect();
            let slack: Vec<f64> = oh.iter().map(|o| o.slack_s).collect();
            ResultRow {
                group: info.group.clone(),
                ls: info.ls.clone(),
                policy: log.policy.name().to_string(),
                replication,
                seed: log.seed,
                tasks: info.task_count,
                completed: log.completed_in_deadline[s],
                completion_ratio: completion_ratio(log, s),
                prediction_accuracy: conf.accuracy(),
                predictions: conf.total(),
                reiterations: it.reiterations,
                given_up: it.given_up,
                max_attempts: it.max_attempts,
                mean_selection_s: mean_sd(&sel).0,
                mean_slack_s: mean_sd(&slack).0,
            }
        })
        .collect()
}

pub fn write_results_csv<W: Write>(rows: &[ResultRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

/// One `(key columns, metric, value)` line per numeric metric.
pub fn write_long_csv<W: Write>(rows: &[ResultRow], w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["group", "ls", "policy", "replication", "metric", "value"])?;
    for r in rows {
        let metrics: [(&str, Option<f64>); 7] = [
            ("completion_ratio", Some(r.completion_ratio)),
            ("prediction_accuracy", r.prediction_accuracy),
            ("reiterations", Some(r.reiterations as f64)),
            ("given_up", Some(r.given_up as f64)),
            ("max_attempts", Some(f64::from(r.max_attempts))),
            ("mean_selection_s", Some(r.mean_selection_s)),
            ("mean_slack_s", Some(r.mean_slack_s)),
        ];
        for (name, v) in metrics {
            let Some(v) = v else { continue };
            out.write_record([
                r.group.as_str(),
                r.ls.as_str(),
                r.policy.as_str(),
                &r.replication.to_string(),
                name,
                &v.to_string(),
            ])?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn write_allocations_csv<W: Write>(log: &RunLog, w: W) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["task_id", "job_id", "attempt", "node_id", "dispatched_at", "outcome", "finished_at"])?;
    for a in &log.allocations {
        let outcome = a.outcome.map_or("pending".to_string(), |s| format!("{s:?}"));
        let finished = a.finished_at_s.map_or(String::new(), |f| f.to_string());
        out.write_record([
            a.task_id.0.to_string(),
            a.job_id.0.to_string(),
            a.attempt.to_string(),
            a.node_id.0.to_string(),
            a.dispatched_at_s.to_string(),
            outcome,
            finished,
        ])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Stat {
    fn of(values: &[f64]) -> Self {
        let (mean, sd) = mean_sd(values);
        Self { mean, sd, n: values.len() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryEntry {
    pub group: String,
    pub ls: String,
    pub policy: String,
    pub completion_ratio: Stat,
    /// Over replications that made at least one prediction.
    pub prediction_accuracy: Option<Stat>,
    pub reiterations: Stat,
    pub given_up: Stat,
}

/// Aggregates rows over replications, keyed by (group, ls, policy) in
/// first-seen order.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryEntry> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    for r in rows {
        let k = (r.group.clone(), r.ls.clone(), r.policy.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(group, ls, policy)| {
            let sel: Vec<&ResultRow> =
                rows.iter().filter(|r| r.group == group && r.ls == ls && r.policy == policy).collect();
            let pick = |f: &dyn Fn(&ResultRow) -> f64| sel.iter().map(|r| f(r)).collect::<Vec<f64>>();
            let acc: Vec<f64> = sel.iter().filter_map(|r| r.prediction_accuracy).collect();
            SummaryEntry {
                completion_ratio: Stat::of(&pick(&|r| r.completion_ratio)),
                prediction_accuracy: (!acc.is_empty()).then(|| Stat::of(&acc)),
                reiterations: Stat::of(&pick(&|r| r.reiterations as f64)),
                given_up: Stat::of(&pick(&|r| r.given_up as f64)),
                group,
                ls,
                policy,
            }
        })
        .collect()
}
