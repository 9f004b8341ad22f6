use serde::{Deserialize, Serialize};

use crate::model::{TaskRecord, TaskState};
use crate::scenario::Discretization;

use super::table::Value;

/// Continuous columns of the record table that get binned.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ContinuousAttr {
    CpuLoad,
    FreeRam,
    TaskSize,
    WaitingTasks,
    Dtr,
    CompletionTime,
    CostPrice,
}

impl ContinuousAttr {
    pub const ALL: [ContinuousAttr; 7] = [
        ContinuousAttr::CpuLoad,
        ContinuousAttr::FreeRam,
        ContinuousAttr::TaskSize,
        ContinuousAttr::WaitingTasks,
        ContinuousAttr::Dtr,
        ContinuousAttr::CompletionTime,
        ContinuousAttr::CostPrice,
    ];

    pub fn of(self, r: &TaskRecord) -> Option<f64> {
        match self {
            ContinuousAttr::CpuLoad => Some(r.cpu_load_at_submit),
            ContinuousAttr::FreeRam => Some(r.free_ram_at_submit_mb),
            ContinuousAttr::TaskSize => Some(r.task_size_mi),
            ContinuousAttr::WaitingTasks => Some(f64::from(r.waiting_grid_tasks)),
            ContinuousAttr::Dtr => Some(r.dtr_at_submit),
            ContinuousAttr::CompletionTime => r.completion_time_s,
            ContinuousAttr::CostPrice => r.cost_price,
        }
    }
}

/// Equal-frequency cut points: bin `j` ends at the value in sorted position
/// `ceil(j·n/bins) − 1`. Duplicate cuts collapse, so a constant column ends
/// up in a single bin.
pub fn equal_frequency_cuts(values: &[f64], bins: usize) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    if n == 0 || bins < 2 {
        return Vec::new();
    }
    let mut cuts: Vec<f64> = (1..bins).map(|j| sorted[(j * n).div_ceil(bins) - 1]).collect();
    cuts.dedup();
    cuts
}

/// Equal-width cut points over `[min, max]`.
pub fn equal_width_cuts(values: &[f64], bins: usize) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if values.is_empty() || bins < 2 || hi <= lo {
        return Vec::new();
    }
    let width = (hi - lo) / bins as f64;
    (1..bins).map(|j| lo + width * j as f64).collect()
}

/// Bin index: the number of cut points strictly below `x`.
pub fn bin_of(cuts: &[f64], x: f64) -> u16 {
    cuts.partition_point(|&c| x > c) as u16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discretizer {
    pub method: Discretization,
    pub bins: usize,
    /// Cut points per `ContinuousAttr::ALL` entry.
    pub cuts: Vec<Vec<f64>>,
}

impl Discretizer {
    pub fn fit(records: &[TaskRecord], bins: usize, method: Discretization) -> Self {
        let cuts = ContinuousAttr::ALL
            .iter()
            .map(|attr| {
                let values: Vec<f64> = records.iter().filter_map(|r| attr.of(r)).collect();
                match method {
                    Discretization::EqualFrequency => equal_frequency_cuts(&values, bins),
                    Discretization::EqualWidth => equal_width_cuts(&values, bins),
                }
            })
            .collect();
        Self { method, bins, cuts }
    }

    pub fn code(&self, attr: ContinuousAttr, x: Option<f64>) -> Value {
        let idx = ContinuousAttr::ALL.iter().position(|&a| a == attr).expect("listed");
        x.map(|v| bin_of(&self.cuts[idx], v))
    }

    pub fn status_code(state: TaskState) -> Value {
        Some(state.code())
    }
}
