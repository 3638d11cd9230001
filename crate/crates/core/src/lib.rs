//! Performance model of synchronous SGD on GPU clusters.
//!
//! A training iteration is a DAG of computing tasks (forward, backward,
//! update) and communication tasks (disk reads, host-to-device copies,
//! gradient all-reduce). [`dag`] builds it, [`sim`] schedules it on the
//! cluster's resources, [`analytic`] gives the closed-form iteration times the
//! schedule is checked against, and [`trace`] reads layer-wise profiles.

pub mod analytic;
pub mod dag;
pub mod gantt;
pub mod model;
pub mod pipeline;
pub mod sim;
pub mod trace;

pub use dag::{build_iteration_dag, critical_path, topological_order, BuildOptions, CriticalPath, DagError};
pub use model::{
    ClusterSpec, CommTrigger, IterationProfile, LayerProfile, Micros, ModelError, OverlapMode, ResourceId,
    SpeedupReport, Strategy, TaskDag, TaskKind, TaskNode, Timeline, WorkloadSpec,
};
pub use sim::{average_iteration_time, nonoverlapped_comm, simulate, ResourceMap, SimError, SimResult};
pub use trace::{average_profile, derive_transfer_times, parse_trace, write_trace, TraceError, TraceSet};
