//! Local-scheduler auction: bids, ranking, and the failure re-iteration rule.

use serde::Serialize;
use thiserror::Error;

use crate::gnm::NodeState;
use crate::model::{JobId, NodeAnnouncement, NodeId, Prediction, Task, TaskId, TaskState};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bid {
    pub node_id: NodeId,
    pub announcement: NodeAnnouncement,
    pub prediction: Option<Prediction>,
    pub admitted: bool,
}

impl Bid {
    /// Asks `node` whether it would take `task`. The node is not modified.
    pub fn request(node: &NodeState, task: &Task, deadline_at_s: f64, now_s: f64) -> Self {
        let admission = node.evaluate(task, deadline_at_s, now_s);
        Self {
            node_id: node.spec.node_id,
            announcement: node.announce(now_s),
            prediction: Some(*admission.prediction()),
            admitted: admission.is_accept(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Weights {
    pub reliability: f64,
    pub completion: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SchedError {
    #[error("no node admitted the task")]
    NoAdmittedBid,
    #[error("unknown local scheduler {0:?}")]
    UnknownLocalScheduler(String),
}

/// `reliability · success_ratio + completion · (1 − predicted/deadline)`.
pub fn score(bid: &Bid, w: Weights, deadline_s: f64) -> f64 {
    let predicted = bid.prediction.map_or(deadline_s, |p| p.predicted_completion_s);
    w.reliability * bid.announcement.success_ratio + w.completion * (1.0 - predicted / deadline_s)
}

/// Admitted bidders, best first. Equal scores go to the lower price, then
/// the lower node id.
pub fn rank_candidates(bids: &[Bid], w: Weights, deadline_s: f64) -> Result<Vec<NodeId>, SchedError> {
    let mut scored: Vec<(f64, f64, NodeId)> = bids
        .iter()
        .filter(|b| b.admitted)
        .map(|b| (score(b, w, deadline_s), b.announcement.offered_price, b.node_id))
        .collect();
    if scored.is_empty() {
        return Err(SchedError::NoAdmittedBid);
    }
    scored.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.total_cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    Ok(scored.into_iter().map(|s| s.2).collect())
}

/// One dispatch attempt of a task.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AllocationRecord {
    pub task_id: TaskId,
    pub job_id: JobId,
    /// Starts at 1 and grows only through re-iteration.
    pub attempt: u32,
    pub node_id: NodeId,
    pub dispatched_at_s: f64,
    pub ready_at_s: f64,
    pub started_at_s: Option<f64>,
    /// `None` while pending.
    pub outcome: Option<TaskState>,
    pub finished_at_s: Option<f64>,
    pub prediction: Option<Prediction>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Retry {
    ReIterated,
    GivenUp,
}

/// After a failure at `now_s`: retry only if the best prediction among the
/// admitting nodes still fits before the absolute deadline.
pub fn retry_decision(now_s: f64, deadline_at_s: f64, bids: &[Bid]) -> Retry {
    let best = bids
        .iter()
        .filter(|b| b.admitted)
        .filter_map(|b| b.prediction.map(|p| p.predicted_completion_s))
        .min_by(|a, b| a.total_cmp(b));
    match best {
        Some(c) if now_s + c <= deadline_at_s => Retry::ReIterated,
        _ => Retry::GivenUp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bid(node: u32, sr: f64, predicted: f64, price: f64, admitted: bool) -> Bid {
        Bid {
            node_id: NodeId(node),
            announcement: NodeAnnouncement {
                node_id: NodeId(node),
                accepting: true,
                non_accept_until_s: 0.0,
                success_ratio: sr,
                act_s: 0.0,
                avg_cpu_idle: 1.0,
                avg_free_ram_mb: 1.0,
                offered_price: price,
                issued_at_s: 0.0,
            },
            prediction: Some(Prediction {
                predicted_state: TaskState::Success,
                predicted_completion_s: predicted,
                predicted_cost: 0.0,
                confidence: 1.0,
            }),
            admitted,
        }
    }

    #[test]
    fn reliability_weight_prefers_dependable_node() {
        let w = Weights { reliability: 1.0, completion: 0.0 };
        let r = rank_candidates(&[bid(1, 0.72, 325.0, 8.0, true), bid(2, 0.93, 700.0, 9.0, true)], w, 1200.0).unwrap();
        assert_eq!(r, vec![NodeId(2), NodeId(1)]);
    }

    #[test]
    fn completion_weight_prefers_faster_node() {
        let w = Weights { reliability: 0.0, completion: 1.0 };
        let r = rank_candidates(&[bid(1, 0.9, 700.0, 8.0, true), bid(2, 0.5, 325.0, 9.0, true)], w, 1200.0).unwrap();
        assert_eq!(r[0], NodeId(2));
    }

    #[test]
    fn ties_go_to_cheaper_then_lower_id() {
        let w = Weights { reliability: 0.5, completion: 0.5 };
        let r = rank_candidates(&[bid(1, 0.9, 700.0, 9.0, true), bid(2, 0.9, 700.0, 8.0, true)], w, 1200.0).unwrap();
        assert_eq!(r[0], NodeId(2));
        let r = rank_candidates(&[bid(5, 0.9, 700.0, 8.0, true), bid(3, 0.9, 700.0, 8.0, true)], w, 1200.0).unwrap();
        assert_eq!(r, vec![NodeId(3), NodeId(5)]);
    }

    #[test]
    fn rejected_bids_never_rank() {
        let w = Weights { reliability: 1.0, completion: 0.0 };
        assert_eq!(rank_candidates(&[bid(1, 1.0, 1.0, 1.0, false)], w, 10.0), Err(SchedError::NoAdmittedBid));
    }

    #[test]
    fn retry_examples() {
        assert_eq!(retry_decision(200.0, 1200.0, &[bid(2, 0.9, 700.0, 1.0, true)]), Retry::ReIterated);
        assert_eq!(retry_decision(800.0, 1200.0, &[bid(2, 0.9, 700.0, 1.0, true)]), Retry::GivenUp);
        assert_eq!(retry_decision(0.0, 1200.0, &[bid(2, 0.9, 1.0, 1.0, false)]), Retry::GivenUp);
    }
}
