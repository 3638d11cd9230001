//! End-to-end runs shared by the command-line tool and the browser demo:
//! profile assembly from a trace, prediction reports and speedup sweeps.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{self, AnalyticError};
use crate::dag::BuildOptions;
use crate::model::{ClusterSpec, IterationProfile, Micros, ModelError, Strategy, WorkloadSpec};
use crate::sim::{self, SimError, SimResult};
use crate::trace::{self, TraceError, TraceSet};

/// Relative tolerance of the simulated-vs-closed-form wiring check.
pub const WIRING_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Trace(#[from] TraceError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl PipelineError {
    /// Whether the failure is an internal inconsistency rather than bad input.
    pub fn is_invariant(&self) -> bool {
        matches!(self, PipelineError::Invariant(_) | PipelineError::Analytic(AnalyticError::PreconditionViolated(_)))
    }
}

/// Where the per-GPU I/O time comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum IoSource {
    /// The trace's data-layer row, when present.
    #[default]
    Trace,
    /// Mini-batch size over the disk bandwidth.
    Bandwidth,
}

/// An averaged profile together with the provenance of its transfer times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileBuild {
    pub profile: IterationProfile,
    /// The source actually used: a trace without a data layer falls back to
    /// bandwidth.
    pub io_source: IoSource,
}

/// Averages `traces` after `warmup` iterations and fills in the transfer and
/// update times the trace does not carry.
pub fn profile_from_trace(
    traces: &TraceSet,
    warmup: usize,
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    io_source: IoSource,
) -> Result<ProfileBuild, PipelineError> {
    let averaged = trace::average_profile(traces, warmup)?;
    if averaged.layers() != workload.layers {
        return Err(PipelineError::Input(format!(
            "workload declares {} layers but the trace has {} compute layers",
            workload.layers,
            averaged.layers()
        )));
    }
    let (derived_io, h2d_time) = trace::derive_transfer_times(workload, cluster);
    let used = if io_source == IoSource::Trace && trace::has_data_layer(traces) {
        IoSource::Trace
    } else {
        IoSource::Bandwidth
    };
    let io_time = match used {
        IoSource::Trace => averaged.io_time,
        IoSource::Bandwidth => derived_io,
    };
    let profile = IterationProfile { io_time, h2d_time, update_time: workload.update_time, ..averaged }.validate()?;
    Ok(ProfileBuild { profile, io_source: used })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileSummary {
    pub layers: usize,
    pub learnable_layers: usize,
    pub io_time_us: Micros,
    /// I/O time per GPU once the machine's disk is shared.
    pub effective_io_time_us: Micros,
    pub h2d_time_us: Micros,
    pub forward_total_us: Micros,
    pub backward_total_us: Micros,
    pub comm_total_us: Micros,
    pub update_time_us: Micros,
    pub gradient_bytes: u64,
}

impl ProfileSummary {
    pub fn new(profile: &IterationProfile, cluster: &ClusterSpec) -> Self {
        ProfileSummary {
            layers: profile.layers(),
            learnable_layers: profile.learnable_layers(),
            io_time_us: profile.io_time,
            effective_io_time_us: analytic::shared_disk_io_time(profile, cluster),
            h2d_time_us: profile.h2d_time,
            forward_total_us: profile.forward_total(),
            backward_total_us: profile.backward_total(),
            comm_total_us: profile.comm_total(),
            update_time_us: profile.update_time,
            gradient_bytes: profile.gradient_bytes_total(),
        }
    }
}

/// Closed-form iteration times, evaluated with the shared-disk I/O time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticTimes {
    /// Single-GPU SGD.
    pub sgd_us: Micros,
    /// No overlap at all.
    pub naive_us: Micros,
    /// I/O overlapped with computation, communication not overlapped.
    pub io_overlap_us: Micros,
    /// I/O and communication overlapped, using the simulated exposed
    /// communication time.
    pub overlap_us: Micros,
    /// The overlap formulas leave out the update time; the simulator does not.
    pub update_time_excluded_us: Micros,
}

impl AnalyticTimes {
    pub fn new(effective: &IterationProfile, nonoverlapped_comm: Micros) -> Result<Self, PipelineError> {
        Ok(AnalyticTimes {
            sgd_us: analytic::sgd_iteration_time(effective),
            naive_us: analytic::ssgd_naive_time(effective),
            io_overlap_us: analytic::io_overlap_time(effective),
            overlap_us: analytic::overlap_time(effective, nonoverlapped_comm)?,
            update_time_excluded_us: effective.update_time,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulatedTimes {
    pub naive_iteration_us: Micros,
    pub iteration_us: Micros,
    pub nonoverlapped_comm_us: Micros,
    pub makespan_us: Micros,
    pub comm_efficiency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub iter_time_us: Micros,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictReport {
    pub gpus: usize,
    pub machines: usize,
    pub strategy: Strategy,
    pub iterations: usize,
    /// Set by callers that assembled the profile from a trace.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub io_source: Option<IoSource>,
    pub profile: ProfileSummary,
    pub analytic: AnalyticTimes,
    pub simulated: SimulatedTimes,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub measured: Option<Measured>,
}

/// Simulates `k` iterations of `strategy` on `cluster`.
pub fn simulate_strategy(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    strategy: Strategy,
    k: usize,
) -> Result<SimResult, PipelineError> {
    if k == 0 {
        return Err(PipelineError::Input("at least one iteration is required".into()));
    }
    Ok(sim::run(workload, cluster, profile, &BuildOptions::for_strategy(strategy, k))?)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

/// Analytic and simulated iteration times for one configuration. The
/// simulated naive period must match the naive closed form.
pub fn predict(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    strategy: Strategy,
    k: usize,
    measured: Option<Micros>,
) -> Result<PredictReport, PipelineError> {
    if k < 2 {
        return Err(PipelineError::Input(format!("steady-state averaging needs at least 2 iterations, got {k}")));
    }
    let effective = analytic::with_shared_disk(profile, cluster);
    let naive = simulate_strategy(workload, cluster, profile, Strategy::naive(), k)?;
    let expected_naive = analytic::ssgd_naive_time(&effective);
    if relative_gap(naive.avg_iteration_time, expected_naive) > WIRING_TOLERANCE {
        return Err(PipelineError::Invariant(format!(
            "simulated naive iteration time {} differs from the closed form {}",
            naive.avg_iteration_time, expected_naive
        )));
    }
    let result = simulate_strategy(workload, cluster, profile, strategy, k)?;
    let exposed = sim::nonoverlapped_comm(&result, profile)?;
    let measured = match measured {
        Some(t) if t > 0.0 => Some(Measured {
            iter_time_us: t,
            relative_error: (result.avg_iteration_time - t).abs() / t,
        }),
        Some(t) => return Err(PipelineError::Input(format!("measured iteration time must be positive, got {t}"))),
        None => None,
    };
    Ok(PredictReport {
        gpus: cluster.total_gpus,
        machines: cluster.machines,
        strategy,
        iterations: k,
        io_source: None,
        profile: ProfileSummary::new(profile, cluster),
        analytic: AnalyticTimes::new(&effective, exposed)?,
        simulated: SimulatedTimes {
            naive_iteration_us: naive.avg_iteration_time,
            iteration_us: result.avg_iteration_time,
            nonoverlapped_comm_us: exposed,
            makespan_us: result.makespan,
            comm_efficiency: result.comm_efficiency,
        },
        measured,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedupRow {
    pub gpus: usize,
    /// Simulated steady-state iteration time.
    pub iter_time_us: Micros,
    /// Weak-scaling speedup over one GPU from the closed form, fed with the
    /// simulated exposed communication time.
    pub speedup: f64,
    pub efficiency: f64,
    pub nonoverlapped_comm_us: Micros,
    /// `gpus` times the simulated one-GPU iteration time over `iter_time_us`.
    pub simulated_speedup: f64,
}

pub const SPEEDUP_CSV_HEADER: &str = "gpus,iter_time_us,speedup,efficiency,nonoverlapped_comm_us,simulated_speedup";

/// Weak-scaling sweep: the per-GPU batch stays fixed, the cluster is laid
/// out with `cluster`'s GPUs per machine, and one GPU needs no all-reduce.
pub fn speedup_curve(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    strategy: Strategy,
    counts: &[usize],
    k: usize,
) -> Result<Vec<SpeedupRow>, PipelineError> {
    if counts.is_empty() {
        return Err(PipelineError::Input("at least one GPU count is required".into()));
    }
    if counts.windows(2).any(|w| w[0] >= w[1]) || counts[0] == 0 {
        return Err(PipelineError::Input(format!("GPU counts must be positive and ascending, got {counts:?}")));
    }
    if k < 2 {
        return Err(PipelineError::Input(format!("steady-state averaging needs at least 2 iterations, got {k}")));
    }
    let single = cluster.with_total_gpus(1)?;
    let baseline = profile.without_comm();
    let baseline_time = simulate_strategy(workload, &single, &baseline, strategy, k)?.avg_iteration_time;
    counts
        .iter()
        .map(|&n| {
            let scaled_cluster = cluster.with_total_gpus(n)?;
            let scaled = if n == 1 { baseline.clone() } else { profile.clone() };
            let result = simulate_strategy(workload, &scaled_cluster, &scaled, strategy, k)?;
            let exposed = sim::nonoverlapped_comm(&result, &scaled)?;
            let effective = analytic::with_shared_disk(&scaled, &scaled_cluster);
            let report = analytic::speedup(&baseline, &effective, exposed, n)?;
            let simulated_speedup =
                if result.avg_iteration_time > 0.0 { n as f64 * baseline_time / result.avg_iteration_time } else { n as f64 };
            Ok(SpeedupRow {
                gpus: n,
                iter_time_us: result.avg_iteration_time,
                speedup: report.speedup,
                efficiency: report.efficiency(),
                nonoverlapped_comm_us: exposed,
                simulated_speedup,
            })
        })
        .collect()
}

pub fn speedup_csv(rows: &[SpeedupRow]) -> String {
    use crate::gantt::format_us;
    let mut out = String::from(SPEEDUP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.gpus,
            format_us(r.iter_time_us),
            format_us(r.speedup),
            format_us(r.efficiency),
            format_us(r.nonoverlapped_comm_us),
            format_us(r.simulated_speedup)
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LayerProfile;

    fn cluster(machines: usize, per_machine: usize) -> ClusterSpec {
        ClusterSpec::new(machines, per_machine, 1e9, 1e10, 1e9, 1e10).unwrap()
    }

    fn profile() -> IterationProfile {
        IterationProfile::new(
            100.0,
            10.0,
            vec![
                LayerProfile::new(1, "conv", 300.0, 600.0, 200.0, 1000),
                LayerProfile::new(2, "relu", 50.0, 50.0, 0.0, 0),
                LayerProfile::new(3, "fc", 200.0, 400.0, 300.0, 2000),
            ],
            0.0,
        )
    }

    fn workload() -> WorkloadSpec {
        WorkloadSpec::new(3, 32, 1000).unwrap()
    }

    #[test]
    fn predict_naive_matches_closed_form() {
        let report = predict(&workload(), &cluster(2, 2), &profile(), Strategy::wfbp(), 5, Some(2000.0)).unwrap();
        assert_eq!(report.simulated.naive_iteration_us, report.analytic.naive_us);
        assert!(report.simulated.iteration_us <= report.simulated.naive_iteration_us);
        assert!(report.measured.unwrap().relative_error >= 0.0);
        assert_eq!(report.profile.effective_io_time_us, 200.0);
    }

    #[test]
    fn predict_rejects_single_iteration() {
        assert!(matches!(
            predict(&workload(), &cluster(1, 1), &profile(), Strategy::naive(), 1, None),
            Err(PipelineError::Input(_))
        ));
    }

    #[test]
    fn speedup_of_one_gpu_is_one() {
        let rows = speedup_curve(&workload(), &cluster(1, 4), &profile(), Strategy::io_and_wfbp(), &[1], 5).unwrap();
        assert_eq!(rows[0].speedup, 1.0);
        assert_eq!(rows[0].simulated_speedup, 1.0);
    }

    #[test]
    fn speedup_without_exposed_comm_is_linear() {
        let p = profile().without_comm();
        let rows = speedup_curve(&workload(), &cluster(1, 1), &p, Strategy::io_and_wfbp(), &[1, 2, 4, 8], 5).unwrap();
        for row in rows {
            assert!((row.speedup - row.gpus as f64).abs() < 1e-9, "{row:?}");
        }
    }

    #[test]
    fn speedup_rejects_unsorted_counts() {
        assert!(speedup_curve(&workload(), &cluster(1, 1), &profile(), Strategy::naive(), &[4, 2], 5).is_err());
        assert!(speedup_curve(&workload(), &cluster(1, 1), &profile(), Strategy::naive(), &[], 5).is_err());
    }

    #[test]
    fn trace_profile_sources() {
        let text = "0 data 500 0 0 0\n1 conv 300 600 200 1000\n2 relu 50 50 0 0\n3 fc 200 400 300 2000\n";
        let traces = trace::parse_trace(text).unwrap();
        let w = workload();
        let c = cluster(1, 1);
        let from_trace = profile_from_trace(&traces, 0, &w, &c, IoSource::Trace).unwrap();
        assert_eq!(from_trace.profile.io_time, 500.0);
        assert_eq!(from_trace.io_source, IoSource::Trace);
        let from_bw = profile_from_trace(&traces, 0, &w, &c, IoSource::Bandwidth).unwrap();
        assert_eq!(from_bw.profile.io_time, w.transfer_time(c.disk_bandwidth));
        assert_eq!(from_bw.profile.h2d_time, w.transfer_time(c.h2d_bandwidth));

        let no_data = trace::parse_trace("1 conv 300 600 200 1000\n2 relu 50 50 0 0\n3 fc 200 400 300 2000\n").unwrap();
        let fallback = profile_from_trace(&no_data, 0, &w, &c, IoSource::Trace).unwrap();
        assert_eq!(fallback.io_source, IoSource::Bandwidth);

        let wrong = WorkloadSpec::new(4, 32, 1000).unwrap();
        assert!(matches!(profile_from_trace(&traces, 0, &wrong, &c, IoSource::Trace), Err(PipelineError::Input(_))));
    }
}
