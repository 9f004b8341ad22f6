//! Grid scheduling simulator with per-node rough-set rule induction and
//! case-based prediction.

pub mod cbr;
pub mod engine;
pub mod gnm;
pub mod model;
pub mod rough;
pub mod scenario;
pub mod metrics;
pub mod scheduling;
pub mod sim;
pub mod workload;
