//! Rule-filtered case-based reasoning over a node's task history.
//!
//! Retrieval keeps the cases covered by the rules a query satisfies, k-NN
//! inside that training set produces the prediction, and finished tasks are
//! retained as new cases.

use serde::Serialize;
use thiserror::Error;

use crate::model::{NodeId, Priority, TaskRecord, TaskState};
use crate::rough::{DecisionAttr, Knowledge, Observables, RsaTrigger, Value, OBSERVABLE_ATTRS};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CbrError {
    #[error("cannot retain task {0} in non-terminal state {1:?}")]
    NotTerminal(crate::model::TaskId, TaskState),
}

/// Running totals over the retained cases.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct Tally {
    pub success: usize,
    pub fail: usize,
    pub aborted: usize,
    pub completion_sum_s: f64,
}

#[derive(Debug, Clone)]
pub struct CaseBase {
    pub owner_node: NodeId,
    cases: Vec<TaskRecord>,
    tally: Tally,
    pub rsa: RsaTrigger,
}

impl CaseBase {
    pub fn new(owner_node: NodeId) -> Self {
        Self { owner_node, cases: Vec::new(), tally: Tally::default(), rsa: RsaTrigger::default() }
    }

    pub fn cases(&self) -> &[TaskRecord] {
        &self.cases
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn tally(&self) -> Tally {
        self.tally
    }

    /// Appends a finished task and bumps the analyzer's new-record counter.
    pub fn retain(&mut self, finished: TaskRecord) -> Result<(), CbrError> {
        match finished.final_state {
            TaskState::Success => {
                self.tally.success += 1;
                self.tally.completion_sum_s += finished.completion_time_s.unwrap_or(0.0);
            }
            TaskState::Fail => self.tally.fail += 1,
            TaskState::Aborted => self.tally.aborted += 1,
            s => return Err(CbrError::NotTerminal(finished.task_id, s)),
        }
        self.cases.push(finished);
        self.rsa.record_added();
        Ok(())
    }
}

/// The eight attributes compared by case similarity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CaseFeatures {
    pub size_mi: f64,
    pub memory_mb: f64,
    pub priority: Priority,
    pub deadline_s: f64,
    pub cpu_load: f64,
    pub free_ram_mb: f64,
    pub waiting: u32,
    pub dtr: f64,
}

impl CaseFeatures {
    pub const ATTRIBUTE_COUNT: usize = 8;

    fn continuous(&self) -> [f64; 7] {
        [
            self.size_mi,
            self.memory_mb,
            self.deadline_s,
            self.cpu_load,
            self.free_ram_mb,
            f64::from(self.waiting),
            self.dtr,
        ]
    }

    pub fn observables(&self) -> Observables {
        Observables {
            cpu_load: self.cpu_load,
            free_ram_mb: self.free_ram_mb,
            task_size_mi: self.size_mi,
            priority: self.priority,
            waiting_tasks: self.waiting,
            dtr: self.dtr,
        }
    }
}

impl From<&TaskRecord> for CaseFeatures {
    fn from(r: &TaskRecord) -> Self {
        Self {
            size_mi: r.task_size_mi,
            memory_mb: r.memory_mb,
            priority: r.priority,
            deadline_s: r.deadline_s,
            cpu_load: r.cpu_load_at_submit,
            free_ram_mb: r.free_ram_at_submit_mb,
            waiting: r.waiting_grid_tasks,
            dtr: r.dtr_at_submit,
        }
    }
}

/// An incoming task as seen from one node, plus the node's static estimate
/// used when no neighbor can supply a completion time or cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QueryCase {
    pub features: CaseFeatures,
    pub static_completion_s: f64,
    pub static_cost: f64,
}

/// Per-attribute value ranges used to normalize continuous distances.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityScale {
    ranges: [f64; 7],
}

impl SimilarityScale {
    pub fn fit<'a>(cases: impl IntoIterator<Item = &'a CaseFeatures>) -> Self {
        let mut lo = [f64::INFINITY; 7];
        let mut hi = [f64::NEG_INFINITY; 7];
        for c in cases {
            for (i, v) in c.continuous().into_iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        let mut ranges = [0.0; 7];
        for i in 0..7 {
            ranges[i] = if hi[i] > lo[i] { hi[i] - lo[i] } else { 0.0 };
        }
        Self { ranges }
    }
}

/// `1 − mean` of per-attribute distances: range-normalized absolute
/// difference for continuous attributes, 0/1 mismatch for priority.
pub fn similarity(a: &CaseFeatures, b: &CaseFeatures, scale: &SimilarityScale) -> f64 {
    let (ca, cb) = (a.continuous(), b.continuous());
    let mut total = 0.0;
    for i in 0..7 {
        let r = scale.ranges[i];
        if r > 0.0 {
            total += ((ca[i] - cb[i]).abs() / r).min(1.0);
        }
    }
    if a.priority != b.priority {
        total += 1.0;
    }
    1.0 - total / CaseFeatures::ATTRIBUTE_COUNT as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct Retrieval {
    /// Case-base indices in ascending (oldest first) order.
    pub cases: Vec<usize>,
    /// Indices of the rules that fired.
    pub fired_rules: Vec<usize>,
    /// No rule fired and the whole case base was returned.
    pub fallback: bool,
}

/// A rule fires for a query only if it conditions solely on attributes the
/// query can supply and the query's codes satisfy all of them.
fn fires(rule: &crate::rough::Rule, query_codes: &[Value; 6]) -> bool {
    rule.conditions
        .iter()
        .all(|c| c.attr < OBSERVABLE_ATTRS.len() && query_codes[c.attr] == c.value)
}

/// Selects the training set: decided (success/fail) cases covered by the
/// fired rules of the `attr` matrix, or all decided cases if none fire.
pub fn retrieve(case_base: &CaseBase, knowledge: &Knowledge, attr: DecisionAttr, query: &QueryCase) -> Retrieval {
    let decided = |r: &TaskRecord| r.final_state != TaskState::Aborted;
    let disc = &knowledge.discretizer;
    let qcodes = disc.observable_codes(&query.features.observables());
    let matrix = knowledge.matrix(attr);
    let fired_rules: Vec<usize> =
        matrix.rules.iter().enumerate().filter(|(_, r)| fires(r, &qcodes)).map(|(i, _)| i).collect();

    if fired_rules.is_empty() {
        let cases = case_base.cases().iter().enumerate().filter(|(_, r)| decided(r)).map(|(i, _)| i).collect();
        return Retrieval { cases, fired_rules, fallback: true };
    }
    let cases = case_base
        .cases()
        .iter()
        .enumerate()
        .filter(|(_, r)| decided(r))
        .filter(|(_, r)| {
            let codes = disc.observable_codes(&Observables::from(*r));
            fired_rules.iter().any(|&ri| matrix.rules[ri].matches(&codes))
        })
        .map(|(i, _)| i)
        .collect();
    Retrieval { cases, fired_rules, fallback: false }
}

/// The `k` training cases most similar to the query, as
/// `(position in training, similarity)`. Equal similarity goes to the later
/// (newer) case.
pub fn nearest(training: &[&TaskRecord], query: &QueryCase, k: usize) -> Vec<(usize, f64)> {
    let feats: Vec<CaseFeatures> = training.iter().map(|r| CaseFeatures::from(*r)).collect();
    let scale = SimilarityScale::fit(feats.iter().chain(std::iter::once(&query.features)));
    let mut scored: Vec<(usize, f64)> =
        feats.iter().enumerate().map(|(i, f)| (i, similarity(f, &query.features, &scale))).collect();
    let k = k.min(scored.len());
    let by_rank = |a: &(usize, f64), b: &(usize, f64)| b.1.total_cmp(&a.1).then(b.0.cmp(&a.0));
    if k < scored.len() && k > 0 {
        scored.select_nth_unstable_by(k - 1, by_rank);
    }
    scored.truncate(k);
    scored.sort_by(by_rank);
    scored
}

fn weighted_mean(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.is_empty() {
        return None;
    }
    let w: f64 = pairs.iter().map(|p| p.1).sum();
    if w > 0.0 {
        Some(pairs.iter().map(|(v, s)| v * s).sum::<f64>() / w)
    } else {
        Some(pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64)
    }
}

/// k-NN prediction over the training set. Success wins a tied vote.
pub fn predict(training: &[&TaskRecord], query: &QueryCase, k: usize) -> crate::model::Prediction {
    use crate::model::Prediction;
    let neighbors = nearest(training, query, k.max(1));
    if neighbors.is_empty() {
        return Prediction {
            predicted_state: TaskState::Success,
            predicted_completion_s: query.static_completion_s,
            predicted_cost: query.static_cost,
            confidence: 0.0,
        };
    }
    let n = neighbors.len();
    let successes: Vec<(&TaskRecord, f64)> = neighbors
        .iter()
        .map(|&(i, s)| (training[i], s))
        .filter(|(r, _)| r.final_state == TaskState::Success)
        .collect();
    let fails = neighbors.iter().filter(|&&(i, _)| training[i].final_state == TaskState::Fail).count();
    let (state, votes) = if successes.len() >= fails {
        (TaskState::Success, successes.len())
    } else {
        (TaskState::Fail, fails)
    };
    let completions: Vec<(f64, f64)> =
        successes.iter().filter_map(|(r, s)| r.completion_time_s.map(|c| (c, *s))).collect();
    let costs: Vec<(f64, f64)> = successes.iter().filter_map(|(r, s)| r.cost_price.map(|c| (c, *s))).collect();
    let mean_sim = neighbors.iter().map(|p| p.1).sum::<f64>() / n as f64;
    Prediction {
        predicted_state: state,
        predicted_completion_s: weighted_mean(&completions).unwrap_or(query.static_completion_s),
        predicted_cost: weighted_mean(&costs).unwrap_or(query.static_cost),
        // any evidence at all yields a non-zero confidence
        confidence: (votes as f64 / n as f64 * mean_sim).clamp(f64::EPSILON, 1.0),
    }
}
