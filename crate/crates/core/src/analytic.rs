//! Closed-form iteration times for single-GPU SGD and synchronous SGD under
//! each overlap strategy, plus the weak-scaling speedup.
//!
//! The overlap formulas leave out the model update time; the simulator
//! schedules the update explicitly, so simulated times exceed these by
//! exactly `update_time` whenever the compute side dominates.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterSpec, IterationProfile, Micros, SpeedupReport};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("speedup is undefined: scaled iteration time is zero")]
    DivisionDegenerate,
}

/// Relative slack for comparing quantities that went through different
/// summation orders.
const SUM_SLACK: f64 = 1e-9;

fn within_upper(value: f64, bound: f64) -> bool {
    value <= bound + SUM_SLACK * bound.abs().max(1.0)
}

/// Single-GPU mini-batch SGD: every step runs back to back.
pub fn sgd_iteration_time(profile: &IterationProfile) -> Micros {
    profile.io_time + profile.h2d_time + profile.forward_total() + profile.backward_total() + profile.update_time
}

/// Synchronous SGD with no overlap: gradients are aggregated layer after
/// layer once back propagation is complete.
pub fn ssgd_naive_time(profile: &IterationProfile) -> Micros {
    profile.io_time
        + profile.h2d_time
        + profile.forward_total()
        + profile.backward_total()
        + profile.comm_total()
        + profile.update_time
}

/// Average iteration time when the next batch is read and copied while the
/// current one is being computed.
pub fn io_overlap_time(profile: &IterationProfile) -> Micros {
    let io_side = profile.io_time + profile.h2d_time;
    let compute_side = profile.forward_total() + profile.backward_total() + profile.comm_total();
    io_side.max(compute_side)
}

/// Inputs of the detailed wait-free back-propagation formula.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WfbpTerms {
    pub io_time: Micros,
    pub h2d_time: Micros,
    pub forward_total: Micros,
    /// Backward time until the topmost gradients are ready.
    pub backward_last: Micros,
    /// Start of the bottom layer's all-reduce.
    pub comm_start_first: Micros,
    /// Start of the top layer's all-reduce.
    pub comm_start_last: Micros,
    /// Duration of the bottom layer's all-reduce.
    pub comm_first: Micros,
}

/// Iteration time with layer-wise communication pipelined under back
/// propagation, expressed through the communication start times.
pub fn wfbp_time_detailed(terms: &WfbpTerms) -> Result<Micros, AnalyticError> {
    if terms.comm_start_first < terms.comm_start_last {
        return Err(AnalyticError::PreconditionViolated(format!(
            "bottom-layer communication starts at {} before top-layer communication at {}",
            terms.comm_start_first, terms.comm_start_last
        )));
    }
    let io_side = terms.io_time + terms.h2d_time;
    let compute_side = terms.forward_total + terms.backward_last + terms.comm_start_first - terms.comm_start_last
        + terms.comm_first;
    Ok(io_side.max(compute_side))
}

/// Iteration time given the communication time left exposed after
/// overlapping (`nonoverlapped_comm`).
pub fn overlap_time(profile: &IterationProfile, nonoverlapped_comm: Micros) -> Result<Micros, AnalyticError> {
    let total = profile.comm_total();
    if !(nonoverlapped_comm >= 0.0) || !within_upper(nonoverlapped_comm, total) {
        return Err(AnalyticError::PreconditionViolated(format!(
            "non-overlapped communication {nonoverlapped_comm} outside [0, {total}]"
        )));
    }
    let io_side = profile.io_time + profile.h2d_time;
    let compute_side = profile.forward_total() + profile.backward_total() + nonoverlapped_comm;
    Ok(io_side.max(compute_side))
}

/// Weak-scaling speedup of `n_gpus` GPUs over one GPU.
///
/// `baseline` carries the single-GPU I/O time, `scaled` the I/O time seen by
/// each GPU when its machine's disk is shared.
pub fn speedup(
    baseline: &IterationProfile,
    scaled: &IterationProfile,
    nonoverlapped_comm: Micros,
    n_gpus: usize,
) -> Result<SpeedupReport, AnalyticError> {
    if n_gpus == 0 {
        return Err(AnalyticError::PreconditionViolated("GPU count must be at least 1".into()));
    }
    if !(nonoverlapped_comm >= 0.0) {
        return Err(AnalyticError::PreconditionViolated(format!(
            "non-overlapped communication {nonoverlapped_comm} is negative"
        )));
    }
    let baseline_iter =
        (baseline.io_time + baseline.h2d_time).max(baseline.forward_total() + baseline.backward_total());
    let scaled_iter = (scaled.io_time + scaled.h2d_time)
        .max(scaled.forward_total() + scaled.backward_total() + nonoverlapped_comm);
    if scaled_iter <= 0.0 {
        return Err(AnalyticError::DivisionDegenerate);
    }
    Ok(SpeedupReport {
        baseline_gpus: 1,
        scaled_gpus: n_gpus,
        baseline_iter_time: baseline_iter,
        scaled_iter_time: scaled_iter,
        io_time_baseline: baseline.io_time,
        io_time_scaled: scaled.io_time,
        speedup: n_gpus as f64 * baseline_iter / scaled_iter,
    })
}

/// Per-GPU I/O time when every GPU of a machine reads from the same disk.
pub fn shared_disk_io_time(profile: &IterationProfile, cluster: &ClusterSpec) -> Micros {
    profile.io_time * cluster.gpus_per_machine as f64
}

/// `profile` with its I/O time replaced by the shared-disk time of `cluster`.
pub fn with_shared_disk(profile: &IterationProfile, cluster: &ClusterSpec) -> IterationProfile {
    IterationProfile { io_time: shared_disk_io_time(profile, cluster), ..profile.clone() }
}

/// Ring all-reduce time of `bytes` across `gpus` workers on a link of
/// `bandwidth` bytes/second: each worker sends and receives
/// 2·bytes·(n−1)/n. Zero for a single worker.
pub fn ring_allreduce_time(bytes: u64, gpus: usize, bandwidth: f64) -> Micros {
    if gpus < 2 || bytes == 0 {
        return 0.0;
    }
    let volume = 2.0 * bytes as f64 * (gpus - 1) as f64 / gpus as f64;
    volume / bandwidth * 1e6
}
