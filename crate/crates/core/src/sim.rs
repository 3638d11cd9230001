//! Resource-constrained list scheduling of a [`TaskDag`].
//!
//! A task starts at the earliest instant when all its predecessors have
//! finished and every resource it needs is free. Competing ready tasks are
//! ordered by iteration, then by descending layer for all-reduces, then by
//! ascending node id.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dag::{build_iteration_dag, topological_order, BuildOptions, DagError};
use crate::model::{
    ClusterSpec, IterationProfile, Micros, ModelError, ResourceId, Strategy, TaskDag, TaskKind, TaskNode,
    Timeline, TimelineEntry, WorkloadSpec,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum SimError {
    #[error("cycle detected involving task {0}")]
    CycleDetected(usize),
    #[error("task {task} ({kind}) has no resource: {reason}")]
    UnmappedResource { task: usize, kind: TaskKind, reason: String },
    #[error("timeline covers {timeline} layers but the profile has {profile}")]
    MismatchedProvenance { timeline: usize, profile: usize },
    #[error("steady-state averaging needs at least 2 iterations, got {0}")]
    TooFewIterations(usize),
    #[error(transparent)]
    Dag(#[from] DagError),
    #[error(transparent)]
    Model(ModelError),
}

impl From<ModelError> for SimError {
    fn from(err: ModelError) -> Self {
        match err {
            ModelError::CycleDetected(id) => SimError::CycleDetected(id),
            other => SimError::Model(other),
        }
    }
}

/// How all-reduce tasks share the interconnect.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CommChannels {
    /// One global channel; all-reduces run one at a time.
    Shared,
    /// Every layer gets its own channel, so all-reduces may overlap.
    PerLayer,
}

/// Byte volumes used to report achieved all-reduce bandwidth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommVolume {
    /// Gradient bytes of layer `l` at index `l - 1`.
    pub layer_bytes: Vec<u64>,
    /// Nominal bandwidth of the bottleneck link, bytes/second.
    pub link_bandwidth: f64,
}

/// Maps every task to the resources it occupies: one compute unit and one
/// host-to-device link per GPU, one disk per machine, and the all-reduce
/// channel(s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceMap {
    pub gpus: usize,
    pub gpus_per_machine: usize,
    pub machines: usize,
    pub comm: CommChannels,
    pub volume: Option<CommVolume>,
}

impl ResourceMap {
    pub fn from_cluster(cluster: &ClusterSpec) -> Self {
        ResourceMap {
            gpus: cluster.machines * cluster.gpus_per_machine,
            gpus_per_machine: cluster.gpus_per_machine,
            machines: cluster.machines,
            comm: CommChannels::Shared,
            volume: None,
        }
    }

    /// Like [`ResourceMap::from_cluster`], also recording gradient sizes so the
    /// simulation can report communication efficiency.
    pub fn for_profile(cluster: &ClusterSpec, profile: &IterationProfile) -> Self {
        let mut map = Self::from_cluster(cluster);
        map.volume = Some(CommVolume {
            layer_bytes: profile.layer_profiles.iter().map(|l| l.gradient_bytes).collect(),
            link_bandwidth: cluster.allreduce_bandwidth(),
        });
        map
    }

    pub fn with_comm(mut self, comm: CommChannels) -> Self {
        self.comm = comm;
        self
    }

    pub fn resources_for(&self, node: &TaskNode) -> Result<Vec<ResourceId>, SimError> {
        let unmapped = |reason: String| SimError::UnmappedResource { task: node.id, kind: node.kind, reason };
        let gpu = || -> Result<usize, SimError> {
            let g = node.gpu.ok_or_else(|| unmapped("no gpu index".into()))?;
            if g >= self.gpus {
                return Err(unmapped(format!("gpu {g} outside a {}-GPU cluster", self.gpus)));
            }
            Ok(g)
        };
        Ok(match node.kind {
            TaskKind::Io => vec![ResourceId::Disk(gpu()? / self.gpus_per_machine)],
            TaskKind::H2d => vec![ResourceId::H2d(gpu()?)],
            TaskKind::Forward | TaskKind::Backward => vec![ResourceId::Compute(gpu()?)],
            TaskKind::Update => (0..self.gpus).map(ResourceId::Compute).collect(),
            TaskKind::AllReduce => match self.comm {
                CommChannels::Shared => vec![ResourceId::Comm(0)],
                CommChannels::PerLayer => {
                    vec![ResourceId::Comm(node.layer.ok_or_else(|| unmapped("no layer".into()))?)]
                }
            },
        })
    }

    /// Every resource of the cluster, in lane order: compute, disk, h2d, comm.
    pub fn lanes(&self, dag: &TaskDag) -> Vec<ResourceId> {
        let mut lanes: Vec<ResourceId> = (0..self.gpus).map(ResourceId::Compute).collect();
        lanes.extend((0..self.machines).map(ResourceId::Disk));
        lanes.extend((0..self.gpus).map(ResourceId::H2d));
        match self.comm {
            CommChannels::Shared => lanes.push(ResourceId::Comm(0)),
            CommChannels::PerLayer => {
                let layers: BTreeSet<usize> = dag
                    .nodes
                    .iter()
                    .filter(|n| n.kind == TaskKind::AllReduce)
                    .filter_map(|n| n.layer)
                    .collect();
                lanes.extend(layers.into_iter().map(ResourceId::Comm));
            }
        }
        lanes
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub timeline: Timeline,
    pub makespan: Micros,
    /// End of each iteration's update.
    pub iteration_finish: Vec<Micros>,
    /// Steady-state period; the first iteration's finish for one iteration.
    pub avg_iteration_time: Micros,
    pub per_resource_busy: BTreeMap<ResourceId, Micros>,
    /// Achieved all-reduce bandwidth over the nominal link bandwidth.
    pub comm_efficiency: f64,
    pub lanes: Vec<ResourceId>,
}

impl SimResult {
    fn empty() -> Self {
        SimResult {
            timeline: Timeline::default(),
            makespan: 0.0,
            iteration_finish: Vec::new(),
            avg_iteration_time: 0.0,
            per_resource_busy: BTreeMap::new(),
            comm_efficiency: 0.0,
            lanes: Vec::new(),
        }
    }
}

/// Total order on finish times for the running-task heap.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Finish(Micros, usize);

impl Eq for Finish {}

impl Ord for Finish {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl PartialOrd for Finish {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

fn priority(node: &TaskNode) -> (usize, usize, usize) {
    let layer_rank = match node.kind {
        TaskKind::AllReduce => usize::MAX - node.layer.unwrap_or(0),
        _ => 0,
    };
    (node.iteration, layer_rank, node.id)
}

pub fn simulate(dag: &TaskDag, resources: &ResourceMap) -> Result<SimResult, SimError> {
    topological_order(dag)?;
    if dag.is_empty() {
        return Ok(SimResult::empty());
    }
    let needs = dag
        .nodes
        .iter()
        .map(|node| resources.resources_for(node))
        .collect::<Result<Vec<_>, _>>()?;
    let succs = dag.successors();
    let mut waiting_on: Vec<usize> = vec![0; dag.len()];
    for &(_, to) in &dag.edges {
        waiting_on[to] += 1;
    }

    let mut ready: BTreeSet<((usize, usize, usize), usize)> = dag
        .nodes
        .iter()
        .filter(|n| waiting_on[n.id] == 0)
        .map(|n| (priority(n), n.id))
        .collect();
    let mut busy: BTreeSet<ResourceId> = BTreeSet::new();
    let mut running: BinaryHeap<Reverse<Finish>> = BinaryHeap::new();
    let mut start: Vec<Option<Micros>> = vec![None; dag.len()];
    let mut now: Micros = 0.0;
    let mut finished = 0usize;

    loop {
        let mut launched = Vec::new();
        for &(key, id) in &ready {
            if needs[id].iter().all(|r| !busy.contains(r)) {
                busy.extend(needs[id].iter().copied());
                start[id] = Some(now);
                running.push(Reverse(Finish(now + dag.nodes[id].duration, id)));
                launched.push((key, id));
            }
        }
        for item in launched {
            ready.remove(&item);
        }

        let Some(Reverse(Finish(end, _))) = running.peek().copied() else { break };
        now = end;
        while let Some(Reverse(Finish(end, id))) = running.peek().copied() {
            if end != now {
                break;
            }
            running.pop();
            finished += 1;
            for r in &needs[id] {
                busy.remove(r);
            }
            for &s in &succs[id] {
                waiting_on[s] -= 1;
                if waiting_on[s] == 0 {
                    ready.insert((priority(&dag.nodes[s]), s));
                }
            }
        }
    }
    if finished != dag.len() {
        let stuck = (0..dag.len()).find(|&id| start[id].is_none()).unwrap_or(0);
        return Err(SimError::CycleDetected(stuck));
    }

    let entries: Vec<TimelineEntry> = dag
        .nodes
        .iter()
        .zip(needs)
        .map(|(node, resources)| {
            let s = start[node.id].unwrap_or(0.0);
            TimelineEntry {
                task: node.id,
                kind: node.kind,
                layer: node.layer,
                gpu: node.gpu,
                iteration: node.iteration,
                start: s,
                end: s + node.duration,
                resources,
            }
        })
        .collect();
    let mut timeline = Timeline::from_entries(entries);
    timeline.nonoverlapped_comm = exposed_comm_per_iteration(&timeline);

    let mut per_resource_busy: BTreeMap<ResourceId, Micros> = resources.lanes(dag).into_iter().map(|r| (r, 0.0)).collect();
    for entry in &timeline.entries {
        for r in &entry.resources {
            *per_resource_busy.entry(*r).or_insert(0.0) += entry.end - entry.start;
        }
    }

    let mut iteration_finish = vec![0.0; dag.iterations()];
    for entry in timeline.entries.iter().filter(|e| e.kind == TaskKind::Update) {
        iteration_finish[entry.iteration] = entry.end;
    }
    let avg_iteration_time = match iteration_finish.len() {
        0 => timeline.makespan,
        1 => iteration_finish[0],
        k => (iteration_finish[k - 1] - iteration_finish[0]) / (k - 1) as f64,
    };

    let comm_efficiency = comm_efficiency(&timeline, resources, &per_resource_busy);
    Ok(SimResult {
        makespan: timeline.makespan,
        timeline,
        iteration_finish,
        avg_iteration_time,
        per_resource_busy,
        comm_efficiency,
        lanes: resources.lanes(dag),
    })
}

/// Ring all-reduce moves `2 (n - 1) / n` times the gradient size per GPU.
fn comm_efficiency(timeline: &Timeline, resources: &ResourceMap, busy: &BTreeMap<ResourceId, Micros>) -> f64 {
    let Some(volume) = &resources.volume else { return 0.0 };
    if resources.gpus < 2 {
        return 0.0;
    }
    let n = resources.gpus as f64;
    let bytes: f64 = timeline
        .comm_windows
        .iter()
        .filter_map(|w| volume.layer_bytes.get(w.layer.wrapping_sub(1)))
        .map(|&b| 2.0 * b as f64 * (n - 1.0) / n)
        .sum();
    let comm_busy: Micros = busy.iter().filter(|(r, _)| matches!(r, ResourceId::Comm(_))).map(|(_, t)| *t).sum();
    if comm_busy <= 0.0 || volume.link_bandwidth <= 0.0 {
        return 0.0;
    }
    let achieved = bytes / (comm_busy / 1e6);
    (achieved / volume.link_bandwidth).clamp(0.0, 1.0)
}

fn union(mut spans: Vec<(Micros, Micros)>) -> Vec<(Micros, Micros)> {
    spans.retain(|s| s.1 > s.0);
    spans.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut merged: Vec<(Micros, Micros)> = Vec::new();
    for (s, e) in spans {
        match merged.last_mut() {
            Some(last) if s <= last.1 => last.1 = last.1.max(e),
            _ => merged.push((s, e)),
        }
    }
    merged
}

/// Length of `busy` not covered by `cover`; both must be sorted and disjoint.
fn uncovered(busy: &[(Micros, Micros)], cover: &[(Micros, Micros)]) -> Micros {
    let mut total = 0.0;
    let mut j = 0;
    for &(s, e) in busy {
        let mut cursor = s;
        while j < cover.len() && cover[j].1 <= cursor {
            j += 1;
        }
        let mut k = j;
        while k < cover.len() && cover[k].0 < e {
            if cover[k].0 > cursor {
                total += cover[k].0 - cursor;
            }
            cursor = cursor.max(cover[k].1);
            if cursor >= e {
                break;
            }
            k += 1;
        }
        if cursor < e {
            total += e - cursor;
        }
    }
    total
}

/// Per iteration: time the comm channel is busy while no GPU runs backward work.
fn exposed_comm_per_iteration(timeline: &Timeline) -> Vec<Micros> {
    let backward = union(
        timeline
            .entries
            .iter()
            .filter(|e| e.kind == TaskKind::Backward)
            .map(|e| (e.start, e.end))
            .collect(),
    );
    let iterations = timeline.entries.iter().filter(|e| e.kind == TaskKind::Update).count();
    (0..iterations)
        .map(|i| {
            let comm = union(
                timeline
                    .comm_windows
                    .iter()
                    .filter(|w| w.iteration == i)
                    .map(|w| (w.start, w.end))
                    .collect(),
            );
            uncovered(&comm, &backward)
        })
        .collect()
}

/// Steady-state non-overlapped communication time: the mean over iterations
/// after the first (the first iteration alone for single-iteration runs).
pub fn nonoverlapped_comm(result: &SimResult, profile: &IterationProfile) -> Result<Micros, SimError> {
    let timeline_layers = result.timeline.entries.iter().filter_map(|e| e.layer).max().unwrap_or(0);
    if !result.timeline.entries.is_empty() && timeline_layers != profile.layers() {
        return Err(SimError::MismatchedProvenance { timeline: timeline_layers, profile: profile.layers() });
    }
    let per_iteration = &result.timeline.nonoverlapped_comm;
    Ok(match per_iteration.len() {
        0 => 0.0,
        1 => per_iteration[0],
        k => per_iteration[1..].iter().sum::<f64>() / (k - 1) as f64,
    })
}

/// Builds a `k`-iteration DAG for `strategy`, simulates it and returns the
/// steady-state iteration period.
pub fn average_iteration_time(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    strategy: Strategy,
    k: usize,
) -> Result<Micros, SimError> {
    if k < 2 {
        return Err(SimError::TooFewIterations(k));
    }
    Ok(run(workload, cluster, profile, &BuildOptions::for_strategy(strategy, k))?.avg_iteration_time)
}

/// Build and simulate in one step, with the default resource map.
pub fn run(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    options: &BuildOptions,
) -> Result<SimResult, SimError> {
    let dag = build_iteration_dag(workload, cluster, profile, options)?;
    simulate(&dag, &ResourceMap::for_profile(cluster, profile))
}
