//! Construction and analysis of the per-iteration task DAG.
//!
//! Node ids follow the order of the classic 3-layer/4-GPU picture: all I/O
//! tasks of an iteration, then host-to-device copies, forward tasks layer by
//! layer, backward tasks from the top layer down, one all-reduce per learnable
//! layer (top layer first) and finally the update.

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    ClusterSpec, CommTrigger, IterationProfile, Micros, ModelError, Strategy, TaskDag, TaskKind, TaskNode,
    WorkloadSpec,
};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum DagError {
    #[error("workload declares {workload} layers but the profile has {profile}")]
    MismatchedLayerCount { workload: usize, profile: usize },
    #[error("invalid build options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildOptions {
    pub iterations: usize,
    pub strategy: Strategy,
    /// Emit next-iteration I/O that runs alongside the current iteration.
    pub prefetch_io: bool,
    /// Let prefetched batches be copied to the GPU before the previous update
    /// finishes (GPU-side buffering). The read-and-copy loader of each GPU then
    /// finishes one copy before it reads the next batch.
    pub early_h2d: bool,
}

impl BuildOptions {
    pub fn new(strategy: Strategy, iterations: usize) -> Self {
        BuildOptions { iterations, strategy, prefetch_io: false, early_h2d: false }
    }

    /// Options implied by the strategy: the I/O-overlapping modes prefetch
    /// and buffer the next batch on the GPU.
    pub fn for_strategy(strategy: Strategy, iterations: usize) -> Self {
        let overlap = strategy.mode.overlaps_io();
        BuildOptions { iterations, strategy, prefetch_io: overlap, early_h2d: overlap }
    }

    pub fn with_prefetch(mut self, prefetch_io: bool) -> Self {
        self.prefetch_io = prefetch_io;
        self
    }

    pub fn with_early_h2d(mut self, early_h2d: bool) -> Self {
        self.early_h2d = early_h2d;
        self
    }
}

struct Builder {
    nodes: Vec<TaskNode>,
    edges: Vec<(usize, usize)>,
}

impl Builder {
    fn push(&mut self, kind: TaskKind, iteration: usize, layer: Option<usize>, gpu: Option<usize>, duration: Micros) -> usize {
        let id = self.nodes.len();
        self.nodes.push(TaskNode { id, kind, layer, gpu, iteration, duration });
        id
    }

    fn edge(&mut self, from: usize, to: usize) {
        self.edges.push((from, to));
    }
}

/// Ids of the tasks of one built iteration.
struct IterationIds {
    io: Vec<usize>,
    h2d: Vec<usize>,
    update: usize,
}

/// Builds `options.iterations` chained training iterations.
pub fn build_iteration_dag(
    workload: &WorkloadSpec,
    cluster: &ClusterSpec,
    profile: &IterationProfile,
    options: &BuildOptions,
) -> Result<TaskDag, DagError> {
    if profile.layers() != workload.layers {
        return Err(DagError::MismatchedLayerCount { workload: workload.layers, profile: profile.layers() });
    }
    if options.iterations == 0 {
        return Err(DagError::InvalidOptions("at least one iteration is required".into()));
    }
    let gpus = cluster.machines * cluster.gpus_per_machine;
    if gpus == 0 {
        return Err(ModelError::InvalidSpec("cluster has no GPUs".into()).into());
    }
    let layers = profile.layers();
    let mut b = Builder { nodes: Vec::new(), edges: Vec::new() };
    let mut previous: Option<IterationIds> = None;

    for iteration in 0..options.iterations {
        let io = emit_io(&mut b, iteration, gpus, profile, options, previous.as_ref());

        let h2d: Vec<usize> = (0..gpus)
            .map(|g| b.push(TaskKind::H2d, iteration, None, Some(g), profile.h2d_time))
            .collect();
        for g in 0..gpus {
            b.edge(io[g], h2d[g]);
            if let Some(prev) = &previous {
                if options.prefetch_io && !options.early_h2d {
                    b.edge(prev.update, h2d[g]);
                }
            }
        }

        let mut forward = vec![vec![0usize; gpus]; layers + 1];
        for layer in 1..=layers {
            let duration = profile.layer(layer).forward_time;
            for g in 0..gpus {
                let id = b.push(TaskKind::Forward, iteration, Some(layer), Some(g), duration);
                forward[layer][g] = id;
                if layer == 1 {
                    b.edge(h2d[g], id);
                    if let Some(prev) = &previous {
                        b.edge(prev.update, id);
                    }
                } else {
                    b.edge(forward[layer - 1][g], id);
                }
            }
        }

        let mut backward = vec![vec![0usize; gpus]; layers + 1];
        for layer in (1..=layers).rev() {
            let duration = profile.layer(layer).backward_time;
            for g in 0..gpus {
                let id = b.push(TaskKind::Backward, iteration, Some(layer), Some(g), duration);
                backward[layer][g] = id;
                let pred = if layer == layers { forward[layers][g] } else { backward[layer + 1][g] };
                b.edge(pred, id);
            }
        }

        let mut allreduce = Vec::new();
        let mut bottom_feeds_comm = false;
        for layer in (1..=layers).rev() {
            let lp = profile.layer(layer);
            if !lp.learnable() {
                continue;
            }
            let id = b.push(TaskKind::AllReduce, iteration, Some(layer), None, lp.comm_time);
            let source = match options.strategy.comm_trigger {
                CommTrigger::AfterLayerBackward => layer,
                CommTrigger::AfterAllBackward => 1,
            };
            bottom_feeds_comm |= source == 1;
            for g in 0..gpus {
                b.edge(backward[source][g], id);
            }
            allreduce.push(id);
        }

        let update = b.push(TaskKind::Update, iteration, None, None, profile.update_time);
        for &id in &allreduce {
            b.edge(id, update);
        }
        // The update still waits for the whole backward pass when no
        // all-reduce covers the bottom layer.
        if !bottom_feeds_comm {
            for g in 0..gpus {
                b.edge(backward[1][g], update);
            }
        }

        previous = Some(IterationIds { io, h2d, update });
    }

    if options.prefetch_io {
        emit_io(&mut b, options.iterations, gpus, profile, options, previous.as_ref());
    }

    Ok(TaskDag::new(b.nodes, b.edges)?)
}

fn emit_io(
    b: &mut Builder,
    iteration: usize,
    gpus: usize,
    profile: &IterationProfile,
    options: &BuildOptions,
    previous: Option<&IterationIds>,
) -> Vec<usize> {
    let io: Vec<usize> = (0..gpus)
        .map(|g| b.push(TaskKind::Io, iteration, None, Some(g), profile.io_time))
        .collect();
    if let Some(prev) = previous {
        for g in 0..gpus {
            let pred = match (options.prefetch_io, options.early_h2d) {
                (true, false) => prev.io[g],
                (true, true) => prev.h2d[g],
                (false, _) => prev.update,
            };
            b.edge(pred, io[g]);
        }
    }
    io
}

/// Kahn's algorithm; among ready tasks the smallest id goes first.
pub fn topological_order(dag: &TaskDag) -> Result<Vec<usize>, ModelError> {
    let n = dag.nodes.len();
    let mut indegree = vec![0usize; n];
    let mut succs = vec![Vec::new(); n];
    for &(from, to) in &dag.edges {
        if from >= n || to >= n {
            return Err(ModelError::InvalidDag(format!("edge ({from}, {to}) references a missing node")));
        }
        indegree[to] += 1;
        succs[from].push(to);
    }
    let mut ready: BinaryHeap<Reverse<usize>> = (0..n).filter(|&v| indegree[v] == 0).map(Reverse).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(Reverse(v)) = ready.pop() {
        order.push(v);
        for &s in &succs[v] {
            indegree[s] -= 1;
            if indegree[s] == 0 {
                ready.push(Reverse(s));
            }
        }
    }
    if order.len() < n {
        let stuck = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
        return Err(ModelError::CycleDetected(stuck));
    }
    Ok(order)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriticalPath {
    pub path: Vec<usize>,
    pub length: Micros,
}

/// Longest duration-weighted path. Among equally long paths the
/// lexicographically smallest id sequence wins.
pub fn critical_path(dag: &TaskDag) -> Result<CriticalPath, ModelError> {
    let order = topological_order(dag)?;
    if order.is_empty() {
        return Ok(CriticalPath { path: Vec::new(), length: 0.0 });
    }
    let succs = dag.successors();
    let n = dag.nodes.len();
    // best[v]: longest path starting at v; next[v]: where it continues.
    let mut best = vec![0.0f64; n];
    let mut next: Vec<Option<usize>> = vec![None; n];
    for &v in order.iter().rev() {
        let own = dag.nodes[v].duration;
        let mut tail = 0.0;
        let mut choice = None;
        // Successors are sorted, so the first strict improvement is the
        // smallest id reaching the maximum. Stopping early (a prefix) wins ties.
        for &s in &succs[v] {
            if best[s] > tail {
                tail = best[s];
                choice = Some(s);
            }
        }
        best[v] = own + tail;
        next[v] = choice;
    }
    let length = best.iter().copied().fold(0.0, f64::max);
    let start = (0..n).find(|&v| best[v] == length).unwrap_or(0);
    let mut path = vec![start];
    let mut cursor = start;
    while let Some(s) = next[cursor] {
        path.push(s);
        cursor = s;
    }
    Ok(CriticalPath { path, length })
}

/// JSON export: `{"nodes": [{id, kind, layer, gpu, iteration, duration}], "edges": [[from, to]]}`.
pub fn to_json(dag: &TaskDag) -> String {
    serde_json::to_string_pretty(dag).expect("task dag serializes")
}

pub fn from_json(text: &str) -> Result<TaskDag, DagError> {
    let dag: TaskDag = serde_json::from_str(text).map_err(|e| DagError::InvalidOptions(format!("dag json: {e}")))?;
    dag.validate()?;
    Ok(dag)
}

/// Graphviz rendering: circles for computing tasks, boxes for communication.
pub fn to_dot(dag: &TaskDag) -> String {
    let mut out = String::from("digraph ssgd {\n  rankdir=LR;\n");
    for node in &dag.nodes {
        let shape = if node.kind.is_computing() { "circle" } else { "box" };
        let mut label = format!("T{}\\n{}", node.id, node.kind);
        if let Some(layer) = node.layer {
            let _ = write!(label, " L{layer}");
        }
        if let Some(gpu) = node.gpu {
            let _ = write!(label, " G{gpu}");
        }
        let _ = writeln!(out, "  t{} [shape={shape}, label=\"{label}\"];", node.id);
    }
    for &(from, to) in &dag.edges {
        let _ = writeln!(out, "  t{from} -> t{to};");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LayerProfile, OverlapMode};

    fn uniform_profile(layers: usize, duration: f64) -> IterationProfile {
        let layer_profiles = (1..=layers)
            .map(|l| LayerProfile::new(l, format!("l{l}"), duration, duration, duration, 4))
            .collect();
        IterationProfile::new(duration, duration, layer_profiles, duration)
    }

    fn setup(layers: usize, machines: usize, per_machine: usize) -> (WorkloadSpec, ClusterSpec, IterationProfile) {
        (
            WorkloadSpec::new(layers, 1, 1).unwrap(),
            ClusterSpec::new(machines, per_machine, 1.0, 1.0, 1.0, 1.0).unwrap(),
            uniform_profile(layers, 1.0),
        )
    }

    fn preds_of(dag: &TaskDag, id: usize) -> Vec<usize> {
        dag.predecessors()[id].clone()
    }

    #[test]
    fn minimal_chain() {
        let (w, c, p) = setup(1, 1, 1);
        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::new(Strategy::naive(), 1)).unwrap();
        let kinds: Vec<_> = dag.nodes.iter().map(|n| n.kind).collect();
        assert_eq!(
            kinds,
            vec![TaskKind::Io, TaskKind::H2d, TaskKind::Forward, TaskKind::Backward, TaskKind::AllReduce, TaskKind::Update]
        );
        assert_eq!(dag.edges, vec![(0, 1), (1, 2), (2, 3), (3, 4), (4, 5)]);
        assert_eq!(topological_order(&dag).unwrap(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn reference_dag_numbering() {
        let (w, c, p) = setup(3, 1, 4);
        let options = BuildOptions::new(Strategy::wfbp(), 1).with_prefetch(true);
        let dag = build_iteration_dag(&w, &c, &p, &options).unwrap();
        assert_eq!(dag.len(), 40);
        assert!((0..4).all(|i| dag.nodes[i].kind == TaskKind::Io));
        assert!((4..8).all(|i| dag.nodes[i].kind == TaskKind::H2d));
        assert!((20..24).all(|i| dag.nodes[i].kind == TaskKind::Backward && dag.nodes[i].layer == Some(3)));
        assert_eq!(dag.nodes[32].layer, Some(3));
        assert_eq!(dag.nodes[34].layer, Some(1));
        assert_eq!(dag.nodes[35].kind, TaskKind::Update);
        assert_eq!(preds_of(&dag, 32), vec![20, 21, 22, 23]);
        assert_eq!(preds_of(&dag, 35), vec![32, 33, 34]);
        for next_io in 36..40 {
            assert_eq!(preds_of(&dag, next_io), vec![next_io - 36]);
        }
    }

    #[test]
    fn after_all_trigger_moves_comm_predecessors() {
        let (w, c, p) = setup(3, 1, 4);
        let strategy = Strategy::new(OverlapMode::WfbpOverlap, CommTrigger::AfterAllBackward).unwrap();
        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::new(strategy, 1).with_prefetch(true)).unwrap();
        assert_eq!(preds_of(&dag, 32), vec![28, 29, 30, 31]);
    }

    #[test]
    fn non_learnable_layers_have_no_allreduce() {
        let (w, c, mut p) = setup(3, 1, 2);
        p.layer_profiles[0].gradient_bytes = 0;
        p.layer_profiles[0].comm_time = 0.0;
        p.layer_profiles[1].gradient_bytes = 0;
        p.layer_profiles[1].comm_time = 0.0;
        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::new(Strategy::wfbp(), 1)).unwrap();
        let comms: Vec<_> = dag.nodes.iter().filter(|n| n.kind == TaskKind::AllReduce).collect();
        assert_eq!(comms.len(), 1);
        let update = dag.find(TaskKind::Update, 0, None, None).unwrap();
        let b1: Vec<_> = (0..2).map(|g| dag.find(TaskKind::Backward, 0, Some(1), Some(g)).unwrap()).collect();
        let preds = preds_of(&dag, update);
        assert!(b1.iter().all(|id| preds.contains(id)));
    }

    #[test]
    fn chained_iterations() {
        let (w, c, p) = setup(2, 1, 2);
        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::new(Strategy::naive(), 3)).unwrap();
        assert_eq!(dag.iterations(), 3);
        let update0 = dag.find(TaskKind::Update, 0, None, None).unwrap();
        let io1 = dag.find(TaskKind::Io, 1, None, Some(1)).unwrap();
        let f1 = dag.find(TaskKind::Forward, 1, Some(1), Some(0)).unwrap();
        assert_eq!(preds_of(&dag, io1), vec![update0]);
        assert!(preds_of(&dag, f1).contains(&update0));

        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::for_strategy(Strategy::io_overlap(), 2)).unwrap();
        let h2d0 = dag.find(TaskKind::H2d, 0, None, Some(1)).unwrap();
        let io1 = dag.find(TaskKind::Io, 1, None, Some(1)).unwrap();
        assert_eq!(preds_of(&dag, io1), vec![h2d0]);
        let h2d1 = dag.find(TaskKind::H2d, 1, None, Some(1)).unwrap();
        assert_eq!(preds_of(&dag, h2d1), vec![io1]);
        assert!(dag.find(TaskKind::Io, 2, None, Some(0)).is_some());
    }

    #[test]
    fn h2d_waits_for_update_without_gpu_buffer() {
        let (w, c, p) = setup(2, 1, 1);
        let options = BuildOptions::new(Strategy::io_overlap(), 2).with_prefetch(true);
        let dag = build_iteration_dag(&w, &c, &p, &options).unwrap();
        let update0 = dag.find(TaskKind::Update, 0, None, None).unwrap();
        let h2d1 = dag.find(TaskKind::H2d, 1, None, Some(0)).unwrap();
        let io1 = dag.find(TaskKind::Io, 1, None, Some(0)).unwrap();
        let mut expected = vec![io1, update0];
        expected.sort_unstable();
        assert_eq!(preds_of(&dag, h2d1), expected);
    }

    #[test]
    fn mismatched_layers() {
        let (_, c, p) = setup(3, 1, 1);
        let w = WorkloadSpec::new(4, 1, 1).unwrap();
        assert!(matches!(
            build_iteration_dag(&w, &c, &p, &BuildOptions::new(Strategy::naive(), 1)),
            Err(DagError::MismatchedLayerCount { workload: 4, profile: 3 })
        ));
    }

    fn chain(durations: &[f64]) -> TaskDag {
        let nodes = durations
            .iter()
            .enumerate()
            .map(|(id, &d)| TaskNode { id, kind: TaskKind::Update, layer: None, gpu: None, iteration: 0, duration: d })
            .collect::<Vec<_>>();
        let edges = (1..nodes.len()).map(|i| (i - 1, i)).collect();
        TaskDag::new(nodes, edges).unwrap()
    }

    #[test]
    fn critical_path_of_chain() {
        let cp = critical_path(&chain(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(cp.length, 6.0);
        assert_eq!(cp.path, vec![0, 1, 2]);
        assert_eq!(critical_path(&TaskDag::default()).unwrap().length, 0.0);
    }

    #[test]
    fn critical_path_of_join() {
        // Branches 5 (node 0) and 3+4 (nodes 1, 2) join at sink 3 of length 1.
        let node = |id, d| TaskNode { id, kind: TaskKind::Update, layer: None, gpu: None, iteration: 0, duration: d };
        let dag = TaskDag::new(
            vec![node(0, 5.0), node(1, 3.0), node(2, 4.0), node(3, 1.0)],
            vec![(0, 3), (1, 2), (2, 3)],
        )
        .unwrap();
        let cp = critical_path(&dag).unwrap();
        assert_eq!(cp.length, 8.0);
        assert_eq!(cp.path, vec![1, 2, 3]);
    }

    #[test]
    fn cycle_is_reported() {
        let mut dag = chain(&[1.0, 1.0, 1.0]);
        dag.edges.push((2, 0));
        assert!(matches!(topological_order(&dag), Err(ModelError::CycleDetected(_))));
        assert!(matches!(critical_path(&dag), Err(ModelError::CycleDetected(_))));
    }

    #[test]
    fn exports() {
        let (w, c, p) = setup(1, 1, 1);
        let dag = build_iteration_dag(&w, &c, &p, &BuildOptions::new(Strategy::naive(), 1)).unwrap();
        let back = from_json(&to_json(&dag)).unwrap();
        assert_eq!(back, dag);
        let dot = to_dot(&dag);
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("t4 -> t5;"));
        assert!(dot.contains("shape=box, label=\"T0\\nio G0\""));
    }
}
