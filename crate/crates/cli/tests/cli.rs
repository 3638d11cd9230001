//! End-to-end runs of the `sgd-dag` binary.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use serde_json::Value;
use sgd_dag::analytic;
use sgd_dag::pipeline::{profile_from_trace, IoSource};
use sgd_dag::{parse_trace, ClusterSpec, WorkloadSpec};

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn sgd_dag(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sgd-dag")).args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).unwrap()
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).unwrap()
}

fn json(output: &Output) -> Value {
    assert!(output.status.success(), "stderr: {}", stderr(output));
    serde_json::from_slice(&output.stdout).expect("valid JSON")
}

struct Inputs {
    trace: PathBuf,
    cluster: PathBuf,
    workload: PathBuf,
}

impl Inputs {
    fn alexnet() -> Self {
        Inputs { trace: data("alexnet_k80.trace"), cluster: data("k80.json"), workload: data("alexnet.json") }
    }

    fn args<'a>(&'a self, command: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
        let mut args = vec![
            command,
            "--trace",
            self.trace.to_str().unwrap(),
            "--cluster",
            self.cluster.to_str().unwrap(),
            "--workload",
            self.workload.to_str().unwrap(),
        ];
        args.extend_from_slice(extra);
        args
    }
}

/// Three unit-time learnable layers on one machine with four GPUs.
fn reference_dag(dir: &Path) -> Inputs {
    let trace = dir.join("reference.trace");
    std::fs::write(&trace, "0 data 1 0 0 0\n1 l1 1 1 1 4\n2 l2 1 1 1 4\n3 l3 1 1 1 4\n").unwrap();
    let cluster = dir.join("cluster.json");
    std::fs::write(
        &cluster,
        r#"{"machines": 1, "gpus_per_machine": 4, "disk_bandwidth": 1e9, "h2d_bandwidth": 1e9, "network_bandwidth": 1e9, "intra_bandwidth": 1e9}"#,
    )
    .unwrap();
    let workload = dir.join("workload.json");
    std::fs::write(&workload, r#"{"layers": 3, "batch_per_gpu": 1, "bytes_per_sample": 1000}"#).unwrap();
    Inputs { trace, cluster, workload }
}

#[test]
fn predict_naive_matches_the_closed_form() {
    let inputs = Inputs::alexnet();
    let report = json(&sgd_dag(&inputs.args("predict", &["--strategy", "naive"])));

    let traces = parse_trace(&std::fs::read_to_string(&inputs.trace).unwrap()).unwrap();
    let workload: WorkloadSpec = serde_json::from_str(&std::fs::read_to_string(&inputs.workload).unwrap()).unwrap();
    let cluster: ClusterSpec = serde_json::from_str(&std::fs::read_to_string(&inputs.cluster).unwrap()).unwrap();
    let cluster = cluster.validate().unwrap();
    let workload = workload.validate().unwrap();
    let profile = profile_from_trace(&traces, 0, &workload, &cluster, IoSource::Trace).unwrap().profile;
    let eq2 = analytic::ssgd_naive_time(&analytic::with_shared_disk(&profile, &cluster));

    assert_eq!(report["analytic"]["naive_us"].as_f64().unwrap(), eq2);
    assert_eq!(report["simulated"]["naive_iteration_us"].as_f64().unwrap(), eq2);
    assert_eq!(report["simulated"]["iteration_us"].as_f64().unwrap(), eq2);
    assert_eq!(report["io_source"], "trace");
    assert_eq!(report["profile"]["gradient_bytes"], 243_860_896);
}

#[test]
fn wfbp_is_no_slower_than_naive() {
    let inputs = Inputs::alexnet();
    let report = json(&sgd_dag(&inputs.args("predict", &["--strategy", "wfbp"])));
    let simulated = &report["simulated"];
    assert!(simulated["iteration_us"].as_f64().unwrap() <= simulated["naive_iteration_us"].as_f64().unwrap());
    assert_eq!(report["strategy"]["comm_trigger"], "after-layer-backward");
}

#[test]
fn measured_sidecar_reports_relative_error() {
    let dir = tempfile::tempdir().unwrap();
    let measured = dir.path().join("measured.json");
    std::fs::write(&measured, r#"[{"gpus": 16, "iter_time_us": 2.0e7}, {"gpus": 4, "iter_time_us": 1.8e7}]"#).unwrap();
    let inputs = Inputs::alexnet();
    let report = json(&sgd_dag(&inputs.args("predict", &["--measured", measured.to_str().unwrap()])));
    let predicted = report["simulated"]["iteration_us"].as_f64().unwrap();
    let error = report["measured"]["relative_error"].as_f64().unwrap();
    assert!((error - (predicted - 2.0e7).abs() / 2.0e7).abs() < 1e-12);

    let output = sgd_dag(&inputs.args("speedup", &["--counts", "1,4", "--measured", measured.to_str().unwrap()]));
    let curve = json(&output);
    assert!(curve["rows"][0].get("relative_error").is_none());
    assert!(curve["rows"][1]["relative_error"].as_f64().is_some());
}

#[test]
fn update_time_is_disclosed() {
    let dir = tempfile::tempdir().unwrap();
    let workload = dir.path().join("workload.json");
    std::fs::write(&workload, r#"{"layers": 21, "batch_per_gpu": 1024, "bytes_per_sample": 150528, "update_time": 500}"#)
        .unwrap();
    let inputs = Inputs { workload, ..Inputs::alexnet() };
    let report = json(&sgd_dag(&inputs.args("predict", &[])));
    assert_eq!(report["analytic"]["update_time_excluded_us"], 500.0);
    assert!(report["notes"][0].as_str().unwrap().contains("update time"));
}

#[test]
fn missing_trace_names_the_path() {
    let inputs = Inputs { trace: PathBuf::from("/nonexistent/run.trace"), ..Inputs::alexnet() };
    let output = sgd_dag(&inputs.args("predict", &[]));
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("/nonexistent/run.trace"));
}

#[test]
fn bad_cluster_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cluster = dir.path().join("cluster.json");
    std::fs::write(&cluster, r#"{"machines": 0, "gpus_per_machine": 4, "disk_bandwidth": 1, "h2d_bandwidth": 1, "network_bandwidth": 1, "intra_bandwidth": 1}"#).unwrap();
    let inputs = Inputs { cluster: cluster.clone(), ..Inputs::alexnet() };
    let output = sgd_dag(&inputs.args("simulate", &[]));
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains(cluster.to_str().unwrap()));
}

#[test]
fn speedup_of_one_gpu_is_one() {
    let curve = json(&sgd_dag(&Inputs::alexnet().args("speedup", &["--counts", "1"])));
    assert_eq!(curve["rows"][0]["speedup"], 1.0);
    assert_eq!(curve["rows"][0]["efficiency"], 1.0);
}

#[test]
fn speedup_rejects_descending_counts() {
    let output = sgd_dag(&Inputs::alexnet().args("speedup", &["--counts", "4,2"]));
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn speedup_csv_has_one_row_per_count() {
    let output = sgd_dag(&Inputs::alexnet().args("speedup", &["--format", "csv"]));
    assert!(output.status.success());
    let text = stdout(&output);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "gpus,iter_time_us,speedup,efficiency,nonoverlapped_comm_us,simulated_speedup");
    let gpus: Vec<&str> = lines[1..].iter().map(|l| l.split(',').next().unwrap()).collect();
    assert_eq!(gpus, ["1", "2", "4", "8", "16"]);
}

#[test]
fn reference_dag_gantt_has_forty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = reference_dag(dir.path());
    let output = sgd_dag(&inputs.args("gantt", &["--strategy", "io-wfbp", "--iterations", "1"]));
    assert!(output.status.success(), "{}", stderr(&output));
    let text = stdout(&output);
    assert_eq!(text.lines().next().unwrap(), "task_id,kind,layer,gpu,resource,start_us,end_us");
    assert_eq!(text.lines().count(), 41);
}

#[test]
fn svg_has_one_lane_per_resource() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = reference_dag(dir.path());
    let output = sgd_dag(&inputs.args("gantt", &["--format", "svg", "--iterations", "2"]));
    assert!(output.status.success());
    let svg = stdout(&output);
    assert!(svg.starts_with("<svg"));
    // Four compute lanes, one disk, four host-to-device links, one channel.
    assert_eq!(svg.matches("class=\"lane\"").count(), 10);
}

#[test]
fn gantt_rejects_json() {
    let output = sgd_dag(&Inputs::alexnet().args("gantt", &["--format", "json"]));
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("does not support"));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let inputs = Inputs::alexnet();
    for args in [
        inputs.args("predict", &[]),
        inputs.args("simulate", &["--format", "csv", "--gpus", "8"]),
        inputs.args("speedup", &[]),
        inputs.args("dag", &["--format", "dot", "--iterations", "1"]),
    ] {
        let first = sgd_dag(&args);
        let second = sgd_dag(&args);
        assert!(first.status.success(), "{}", stderr(&first));
        assert_eq!(first.stdout, second.stdout);
    }
}

#[test]
fn out_flag_writes_a_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("timeline.csv");
    let inputs = Inputs::alexnet();
    let output = sgd_dag(&inputs.args("simulate", &["--format", "csv", "--out", out.to_str().unwrap()]));
    assert!(output.status.success());
    assert!(output.stdout.is_empty());
    assert!(std::fs::read_to_string(out).unwrap().starts_with("task_id,"));
}

#[test]
fn gpus_override_and_bandwidth_io() {
    let inputs = Inputs::alexnet();
    let report = json(&sgd_dag(&inputs.args("simulate", &["--gpus", "2", "--io-source", "bandwidth"])));
    assert_eq!(report["gpus"], 2);
    assert_eq!(report["machines"], 1);
    assert_eq!(report["io_source"], "bandwidth");
    let output = sgd_dag(&inputs.args("simulate", &["--gpus", "6"]));
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn naive_rejects_per_layer_trigger() {
    let output = sgd_dag(&Inputs::alexnet().args("predict", &["--strategy", "naive", "--comm-trigger", "per-layer"]));
    assert_eq!(output.status.code(), Some(1));
}

#[test]
fn validate_summarizes_alexnet_trace() {
    let trace = data("alexnet_k80.trace");
    let report = json(&sgd_dag(&["validate", "--trace", trace.to_str().unwrap()]));
    assert_eq!(report["ok"], true);
    assert_eq!(report["layers"], 22);
    assert_eq!(report["compute_layers"], 21);
    assert_eq!(report["parameter_bytes"], 243_860_896);
    assert_eq!(report["warnings"].as_array().unwrap().len(), 0);
}

#[test]
fn validate_reads_standard_input() {
    let mut child = Command::new(env!("CARGO_BIN_EXE_sgd-dag"))
        .args(["validate", "--trace", "-"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"1 conv 10 20 5 64\n2 relu 1 1 0 0\n").unwrap();
    let output = child.wait_with_output().unwrap();
    let report = json(&output);
    assert_eq!(report["layers"], 2);
    assert_eq!(report["parameter_bytes"], 64);
}

#[test]
fn validate_flags_malformed_rows() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("bad.trace");
    std::fs::write(&trace, "1 conv 10 20 5 64\n2 relu 1 1\n").unwrap();
    let output = sgd_dag(&["validate", "--trace", trace.to_str().unwrap()]);
    assert_eq!(output.status.code(), Some(1));
    let report: Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(report["ok"], false);
    assert_eq!(report["line"], 2);
    assert!(stderr(&output).contains("line 2"));
}

#[test]
fn validate_lists_comm_without_gradients() {
    let dir = tempfile::tempdir().unwrap();
    let trace = dir.path().join("warn.trace");
    std::fs::write(&trace, "1 conv 10 20 5 64\n2 relu 1 1 3 0\n").unwrap();
    let report = json(&sgd_dag(&["validate", "--trace", trace.to_str().unwrap()]));
    let warnings = report["warnings"].as_array().unwrap();
    assert_eq!(warnings.len(), 1);
    assert_eq!(warnings[0]["line"], 2);
}

#[test]
fn dag_json_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let inputs = reference_dag(dir.path());
    let output = sgd_dag(&inputs.args("dag", &["--strategy", "wfbp", "--iterations", "1"]));
    assert!(output.status.success());
    let dag = sgd_dag::dag::from_json(&stdout(&output)).unwrap();
    assert_eq!(dag.len(), 36);
}
