//! Rough Set Analyzer: discretizes a node's record table, builds the
//! indiscernibility partition and approximations, and induces one rule matrix
//! per decision attribute.
//!
//! Each of the three decision attributes (final status, completion-time
//! class, cost class) gets its own table in which the other two act as extra
//! condition attributes.

mod discretize;
mod rules;
mod table;

pub use discretize::{bin_of, equal_frequency_cuts, equal_width_cuts, ContinuousAttr, Discretizer};
pub use rules::{induce_rules, Condition, Rule, RuleMatrix};
pub use table::{
    indiscernibility, lower_approximation, lower_approximation_on, upper_approximation,
    upper_approximation_on, DecisionTable, Row, TableError, Value, ABSENT,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Priority, TaskRecord};
use crate::scenario::Discretization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionAttr {
    FinalStatus,
    CompletionTimeClass,
    CostPriceClass,
}

impl DecisionAttr {
    pub const ALL: [DecisionAttr; 3] =
        [DecisionAttr::FinalStatus, DecisionAttr::CompletionTimeClass, DecisionAttr::CostPriceClass];

    pub fn name(self) -> &'static str {
        match self {
            DecisionAttr::FinalStatus => "final_status",
            DecisionAttr::CompletionTimeClass => "completion_time_class",
            DecisionAttr::CostPriceClass => "cost_price_class",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    fn code(self, d: &Discretizer, r: &TaskRecord) -> Value {
        match self {
            DecisionAttr::FinalStatus => Discretizer::status_code(r.final_state),
            DecisionAttr::CompletionTimeClass => d.code(ContinuousAttr::CompletionTime, r.completion_time_s),
            DecisionAttr::CostPriceClass => d.code(ContinuousAttr::CostPrice, r.cost_price),
        }
    }
}

/// Condition attributes a query task can supply before it runs.
pub const OBSERVABLE_ATTRS: [&str; 6] = ["cpu_load", "free_ram", "task_size", "priority", "waiting_tasks", "dtr"];

/// Condition attribute names of the table for `decision`: the observable
/// attributes followed by the other two decision attributes.
pub fn condition_attrs(decision: DecisionAttr) -> Vec<String> {
    OBSERVABLE_ATTRS
        .iter()
        .map(|s| (*s).to_owned())
        .chain(DecisionAttr::ALL.iter().filter(|&&d| d != decision).map(|d| d.name().to_owned()))
        .collect()
}

/// Raw, not yet discretized, observable attributes of a task on a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observables {
    pub cpu_load: f64,
    pub free_ram_mb: f64,
    pub task_size_mi: f64,
    pub priority: Priority,
    pub waiting_tasks: u32,
    pub dtr: f64,
}

impl From<&TaskRecord> for Observables {
    fn from(r: &TaskRecord) -> Self {
        Self {
            cpu_load: r.cpu_load_at_submit,
            free_ram_mb: r.free_ram_at_submit_mb,
            task_size_mi: r.task_size_mi,
            priority: r.priority,
            waiting_tasks: r.waiting_grid_tasks,
            dtr: r.dtr_at_submit,
        }
    }
}

impl Discretizer {
    pub fn observable_codes(&self, o: &Observables) -> [Value; 6] {
        [
            self.code(ContinuousAttr::CpuLoad, Some(o.cpu_load)),
            self.code(ContinuousAttr::FreeRam, Some(o.free_ram_mb)),
            self.code(ContinuousAttr::TaskSize, Some(o.task_size_mi)),
            Some(o.priority.code()),
            self.code(ContinuousAttr::WaitingTasks, Some(f64::from(o.waiting_tasks))),
            self.code(ContinuousAttr::Dtr, Some(o.dtr)),
        ]
    }

    /// Decision-table row of `record` for the given decision attribute.
    pub fn row(&self, record: &TaskRecord, decision: DecisionAttr) -> Row {
        let mut conditions: Vec<Value> = self.observable_codes(&Observables::from(record)).to_vec();
        conditions.extend(
            DecisionAttr::ALL.iter().filter(|&&d| d != decision).map(|d| d.code(self, record)),
        );
        Row { conditions, decision: decision.code(self, record) }
    }

    pub fn table(&self, records: &[TaskRecord], decision: DecisionAttr) -> DecisionTable {
        DecisionTable {
            condition_attrs: condition_attrs(decision),
            decision_attr: decision.name().to_owned(),
            rows: records.iter().map(|r| self.row(r, decision)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RoughError {
    #[error("cannot discretize an empty record table")]
    NoRecords,
    #[error("need at least 2 bins, got {0}")]
    TooFewBins(usize),
}

#[derive(Debug, Clone)]
pub struct Discretized {
    pub discretizer: Discretizer,
    /// Indexed by `DecisionAttr::index`.
    pub tables: [DecisionTable; 3],
}

pub fn discretize(records: &[TaskRecord], bins: usize) -> Result<Discretized, RoughError> {
    discretize_with(records, bins, Discretization::EqualFrequency)
}

pub fn discretize_with(
    records: &[TaskRecord],
    bins: usize,
    method: Discretization,
) -> Result<Discretized, RoughError> {
    if records.is_empty() {
        return Err(RoughError::NoRecords);
    }
    if bins < 2 {
        return Err(RoughError::TooFewBins(bins));
    }
    let discretizer = Discretizer::fit(records, bins, method);
    let tables = DecisionAttr::ALL.map(|d| discretizer.table(records, d));
    Ok(Discretized { discretizer, tables })
}

/// Output of one RSA run: the cut points used and the three rule matrices.
#[derive(Debug, Clone)]
pub struct Knowledge {
    pub discretizer: Discretizer,
    pub matrices: [RuleMatrix; 3],
    pub built_at_s: f64,
}

impl Knowledge {
    pub fn matrix(&self, d: DecisionAttr) -> &RuleMatrix {
        &self.matrices[d.index()]
    }
}

pub fn run_rsa(
    records: &[TaskRecord],
    bins: usize,
    method: Discretization,
    now_s: f64,
) -> Result<Knowledge, RoughError> {
    let Discretized { discretizer, tables } = discretize_with(records, bins, method)?;
    let matrices = tables.map(|t| {
        let mut m = induce_rules(&t);
        m.built_at_s = now_s;
        m
    });
    Ok(Knowledge { discretizer, matrices, built_at_s: now_s })
}

pub const RSA_MIN_INTERVAL_S: f64 = 86_400.0;
pub const RSA_NEW_RECORD_FRACTION: f64 = 0.01;

/// Bookkeeping for deciding when the analyzer reruns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RsaTrigger {
    /// `None` until the first run (treated as −∞).
    pub last_rsa_s: Option<f64>,
    pub records_at_last_rsa: usize,
    pub new_records: usize,
}

impl RsaTrigger {
    pub fn record_added(&mut self) {
        self.new_records += 1;
    }

    pub fn mark_run(&mut self, now_s: f64, total_records: usize) {
        self.last_rsa_s = Some(now_s);
        self.records_at_last_rsa = total_records;
        self.new_records = 0;
    }
}

/// True iff more than 1% new records arrived since the last run and that run
/// is at least 24 h old.
pub fn should_run_rsa(trigger: &RsaTrigger, now_s: f64) -> bool {
    let enough_new = trigger.new_records as f64 > RSA_NEW_RECORD_FRACTION * trigger.records_at_last_rsa as f64;
    let stale = trigger.last_rsa_s.is_none_or(|t| now_s - t >= RSA_MIN_INTERVAL_S);
    enough_new && stale
}
