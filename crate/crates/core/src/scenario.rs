//! Scenario files: local schedulers, job groups, submission schedule and model
//! parameters, stored as TOML.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{weights_sum_to_one, JobGroupSpec, LocalSchedulerSpec};
use crate::rough::DecisionAttr;

/// The scenario encoding both experiment tables, shipped with the crate.
pub const BUNDLED_SCENARIO: &str = include_str!("../scenarios/paper-tables.cfg");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discretization {
    EqualFrequency,
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelParams {
    pub replications: u32,
    /// Half-width of the triangular spread of node dependability around the
    /// scheduler's median.
    pub dependability_spread: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub price_tolerance_p: f64,
    pub total_ram_mb: f64,
    pub dtr_base: f64,
    /// Relative DTR perturbation drawn at every dispatch.
    pub dtr_jitter: f64,
    pub discretization: Discretization,
    pub bins: u32,
    pub k: u32,
    pub retrieval_attr: DecisionAttr,
    pub predicted_fail_threshold: f64,
    /// Success ratio reported by a node without any decided task.
    pub optimistic_prior: bool,
    /// Fraction of grid MIPS left to a running task during a local burst.
    pub local_load_factor: f64,
    /// Waiting-queue length treated as "full" by the price adjuster.
    pub queue_capacity: u32,
    pub price_window_s: f64,
    /// Statistics window for announcements; 0 means the whole table.
    pub stats_window_s: f64,
    pub burst_rate_per_hour: f64,
    pub burst_min_s: f64,
    pub burst_max_s: f64,
    pub round_period_s: f64,
    pub warmup_depth: u32,
    pub warmup_abort_fraction: f64,
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            replications: 15,
            dependability_spread: 0.1,
            alpha_min: 5.0,
            alpha_max: 15.0,
            price_tolerance_p: 0.2,
            total_ram_mb: 2048.0,
            dtr_base: 10.0,
            dtr_jitter: 0.2,
            discretization: Discretization::EqualFrequency,
            bins: 3,
            k: 5,
            retrieval_attr: DecisionAttr::FinalStatus,
            predicted_fail_threshold: 0.7,
            optimistic_prior: true,
            local_load_factor: 0.5,
            queue_capacity: 10,
            price_window_s: 7.0 * 86_400.0,
            stats_window_s: 0.0,
            burst_rate_per_hour: 0.25,
            burst_min_s: 300.0,
            burst_max_s: 1800.0,
            round_period_s: 30.0,
            warmup_depth: 200,
            warmup_abort_fraction: 0.02,
        }
    }
}

/// Binds a job group to a local scheduler at a submission time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Submission {
    pub group: String,
    pub ls: String,
    pub at_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    #[serde(default)]
    pub params: ModelParams,
    pub local_schedulers: Vec<LocalSchedulerSpec>,
    pub job_groups: Vec<JobGroupSpec>,
    #[serde(default)]
    pub submissions: Vec<Submission>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("serialize error: {0}")]
    Serialize(#[from] toml::ser::Error),
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self, ScenarioError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml_string(&self) -> Result<String, ScenarioError> {
        Ok(toml::to_string(self)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), ScenarioError> {
        let path = path.as_ref();
        std::fs::write(path, self.to_toml_string()?).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn bundled() -> Self {
        Self::from_toml_str(BUNDLED_SCENARIO).expect("bundled scenario parses")
    }

    /// Shrinks node and task counts proportionally. Job counts are kept
    /// unless a group ends up with fewer tasks than jobs.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        let scale = |n: u32| -> u32 { ((f64::from(n) * factor).round() as u32).max(1) };
        for ls in &mut out.local_schedulers {
            ls.node_count = scale(ls.node_count);
        }
        for g in &mut out.job_groups {
            g.total_tasks = scale(g.total_tasks);
            g.job_count = g.job_count.min(g.total_tasks);
        }
        out
    }

    pub fn ls_index(&self, ls_id: &str) -> Option<usize> {
        self.local_schedulers.iter().position(|l| l.ls_id == ls_id)
    }

    pub fn group_index(&self, name: &str) -> Option<usize> {
        self.job_groups.iter().position(|g| g.name == name)
    }

    pub fn validate(&self) -> Vec<Violation> {
        validate_scenario(&self.local_schedulers, &self.job_groups)
            .into_iter()
            .chain(self.validate_submissions())
            .chain(validate_params(&self.params))
            .collect()
    }

    fn validate_submissions(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        for (i, s) in self.submissions.iter().enumerate() {
            let path = format!("submissions[{i}]");
            if self.group_index(&s.group).is_none() {
                out.push(v(format!("{path}.group"), format!("unknown job group {:?}", s.group)));
            }
            if self.ls_index(&s.ls).is_none() {
                out.push(v(format!("{path}.ls"), format!("unknown local scheduler {:?}", s.ls)));
            }
            if !(s.at_s.is_finite() && s.at_s >= 0.0) {
                out.push(v(format!("{path}.at_s"), "submission time must be finite and >= 0"));
            }
        }
        out
    }
}

fn v(path: impl Into<String>, message: impl Into<String>) -> Violation {
    Violation { path: path.into(), message: message.into() }
}

fn valid_identifier(s: &str) -> bool {
    !s.is_empty() && s.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
}

/// Checks every scheduler and job-group invariant, returning all violations
/// with their field paths. An empty list means the tables are valid.
pub fn validate_scenario(ls_specs: &[LocalSchedulerSpec], jg_specs: &[JobGroupSpec]) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, ls) in ls_specs.iter().enumerate() {
        let p = format!("local_schedulers[{i}]");
        if !valid_identifier(&ls.ls_id) {
            out.push(v(format!("{p}.ls_id"), format!("malformed identifier {:?}", ls.ls_id)));
        } else if !seen.insert(ls.ls_id.clone()) {
            out.push(v(format!("{p}.ls_id"), format!("duplicate identifier {:?}", ls.ls_id)));
        }
        if ls.node_count == 0 {
            out.push(v(format!("{p}.node_count"), "node_count must be > 0"));
        }
        if !(ls.gmips.is_finite() && ls.gmips > 0.0) {
            out.push(v(format!("{p}.gmips"), "gmips must be > 0"));
        }
        if !(ls.queue_deadline_status_s.is_finite() && ls.queue_deadline_status_s >= 0.0) {
            out.push(v(format!("{p}.queue_deadline_status_s"), "queue status must be >= 0"));
        }
        if !(0.0..=1.0).contains(&ls.medium_dependability) {
            out.push(v(format!("{p}.medium_dependability"), "dependability ∉ [0,1]"));
        }
    }
    let mut seen = BTreeSet::new();
    for (i, g) in jg_specs.iter().enumerate() {
        let p = format!("job_groups[{i}]");
        if !valid_identifier(&g.name) {
            out.push(v(format!("{p}.name"), format!("malformed identifier {:?}", g.name)));
        } else if !seen.insert(g.name.clone()) {
            out.push(v(format!("{p}.name"), format!("duplicate identifier {:?}", g.name)));
        }
        if g.job_count == 0 {
            out.push(v(format!("{p}.job_count"), "job_count must be > 0"));
        }
        if g.total_tasks < g.job_count {
            out.push(v(format!("{p}.total_tasks"), "every job needs at least one task"));
        }
        for (field, value) in [
            ("deadline_s", g.deadline_s),
            ("memory_mb", g.memory_mb),
            ("length_mi", g.length_mi),
        ] {
            if !(value.is_finite() && value > 0.0) {
                out.push(v(format!("{p}.{field}"), format!("{field} must be > 0")));
            }
        }
        if !weights_sum_to_one(g.reliability_weight, g.completion_weight) {
            out.push(v(
                format!("{p}.reliability_weight"),
                "reliability and completion weights must lie in [0,1] and sum to 1",
            ));
        }
    }
    out
}

fn validate_params(p: &ModelParams) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut need = |ok: bool, field: &str, msg: &str| {
        if !ok {
            out.push(v(format!("params.{field}"), msg));
        }
    };
    need(p.replications >= 1, "replications", "must be >= 1");
    need((0.0..=1.0).contains(&p.dependability_spread), "dependability_spread", "must lie in [0,1]");
    need(p.alpha_min > 0.0, "alpha_min", "must be > 0");
    need(p.alpha_max >= p.alpha_min, "alpha_max", "must be >= alpha_min");
    need((0.0..=0.5).contains(&p.price_tolerance_p), "price_tolerance_p", "price tolerance ∉ [0,0.5]");
    need(p.total_ram_mb > 0.0, "total_ram_mb", "must be > 0");
    need(p.dtr_base > 0.0, "dtr_base", "must be > 0");
    need((0.0..1.0).contains(&p.dtr_jitter), "dtr_jitter", "must lie in [0,1)");
    need(p.bins >= 2, "bins", "must be >= 2");
    need(p.k >= 1, "k", "must be >= 1");
    need((0.0..=1.0).contains(&p.predicted_fail_threshold), "predicted_fail_threshold", "must lie in [0,1]");
    need(p.local_load_factor > 0.0 && p.local_load_factor <= 1.0, "local_load_factor", "must lie in (0,1]");
    need(p.queue_capacity >= 1, "queue_capacity", "must be >= 1");
    need(p.price_window_s > 0.0, "price_window_s", "must be > 0");
    need(p.stats_window_s >= 0.0, "stats_window_s", "must be >= 0");
    need(p.burst_rate_per_hour >= 0.0, "burst_rate_per_hour", "must be >= 0");
    need(
        p.burst_min_s > 0.0 && p.burst_max_s >= p.burst_min_s,
        "burst_min_s",
        "burst durations must satisfy 0 < min <= max",
    );
    need(p.round_period_s > 0.0, "round_period_s", "must be > 0");
    need((0.0..=1.0).contains(&p.warmup_abort_fraction), "warmup_abort_fraction", "must lie in [0,1]");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table_one() -> Vec<LocalSchedulerSpec> {
        [("LS1", 400, 65.0, 460.0, 0.72), ("LS2", 320, 140.0, 350.0, 0.93), ("LS3", 750, 80.0, 400.0, 0.85)]
            .into_iter()
            .map(|(id, n, g, q, d)| LocalSchedulerSpec {
                ls_id: id.into(),
                node_count: n,
                gmips: g,
                queue_deadline_status_s: q,
                medium_dependability: d,
            })
            .collect()
    }

    #[test]
    fn table_one_rows_are_valid() {
        assert!(validate_scenario(&table_one(), &[]).is_empty());
    }

    #[test]
    fn dependability_out_of_range_is_reported() {
        let mut ls = table_one();
        ls[1].medium_dependability = 1.2;
        let errs = validate_scenario(&ls, &[]);
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "local_schedulers[1].medium_dependability");
        assert!(errs[0].message.contains("dependability ∉ [0,1]"));
    }

    #[test]
    fn malformed_identifiers_reported_individually() {
        let mut ls = table_one();
        ls[0].ls_id = "".into();
        ls[2].ls_id = "LS 3".into();
        let errs = validate_scenario(&ls, &[]);
        assert_eq!(errs.len(), 2);
    }

    #[test]
    fn group_one_splits_into_fifty_per_job() {
        let g = JobGroupSpec {
            name: "Job_Group1".into(),
            job_count: 5,
            total_tasks: 250,
            deadline_s: 1200.0,
            memory_mb: 1.93,
            length_mi: 45500.0,
            reliability_weight: 0.8,
            completion_weight: 0.2,
        };
        assert!(validate_scenario(&[], std::slice::from_ref(&g)).is_empty());
        assert_eq!(g.tasks_per_job(), vec![50; 5]);
    }

    #[test]
    fn bundled_tables_are_valid_and_scale() {
        let s = Scenario::bundled();
        assert!(s.validate().is_empty(), "{:?}", s.validate());
        let small = s.scaled(0.1);
        let nodes: Vec<u32> = small.local_schedulers.iter().map(|l| l.node_count).collect();
        let tasks: Vec<u32> = small.job_groups.iter().map(|g| g.total_tasks).collect();
        assert_eq!(nodes, vec![40, 32, 75]);
        assert_eq!(tasks, vec![25, 21, 10]);
        assert!(small.validate().is_empty());
    }
}
