//! Layer-wise trace files.
//!
//! One row per layer: `id name forward backward comm size`, separated by
//! whitespace or commas. Times are microseconds, size is gradient bytes.
//! A row whose id does not exceed the previous row's id opens a new
//! iteration block. Layer 0 is the data layer; its forward time is the
//! measured I/O time.

use std::fmt::Write as _;
use std::io::BufRead;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ClusterSpec, IterationProfile, LayerProfile, Micros, ModelError, WorkloadSpec};

#[derive(Error, Debug, Clone, PartialEq)]
pub enum TraceError {
    #[error("line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("iteration {iteration} (line {line}): {reason}")]
    InconsistentBlocks { iteration: usize, line: usize, reason: String },
    #[error("no iterations left after dropping {warmup} warm-up iterations of {available}")]
    EmptyAfterWarmup { warmup: usize, available: usize },
    #[error("read error: {0}")]
    Io(String),
    #[error(transparent)]
    Profile(#[from] ModelError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub layer_id: usize,
    pub name: String,
    pub forward_us: Micros,
    pub backward_us: Micros,
    pub comm_us: Micros,
    pub size_bytes: u64,
}

impl TraceRecord {
    pub fn is_data_layer(&self) -> bool {
        self.layer_id == 0
    }
}

/// A non-fatal oddity found while parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceWarning {
    pub line: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceSet {
    pub iterations: Vec<Vec<TraceRecord>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<TraceWarning>,
}

impl TraceSet {
    pub fn is_empty(&self) -> bool {
        self.iterations.is_empty()
    }

    /// Rows of one iteration, data layer included.
    pub fn layers(&self) -> usize {
        self.iterations.first().map_or(0, Vec::len)
    }

    /// Gradient bytes summed over the first iteration.
    pub fn parameter_bytes(&self) -> u64 {
        self.iterations.first().map_or(0, |block| block.iter().map(|r| r.size_bytes).sum())
    }
}

fn parse_time(field: &str, column: &str, line: usize) -> Result<f64, TraceError> {
    let value: f64 = field.parse().map_err(|_| TraceError::MalformedRow {
        line,
        reason: format!("{column} {field:?} is not a number"),
    })?;
    if !value.is_finite() || value < 0.0 {
        return Err(TraceError::MalformedRow { line, reason: format!("{column} {field:?} must be finite and >= 0") });
    }
    Ok(value)
}

fn parse_size(field: &str, line: usize) -> Result<u64, TraceError> {
    if let Ok(bytes) = field.parse::<u64>() {
        return Ok(bytes);
    }
    let value = parse_time(field, "size", line)?;
    if value.fract() != 0.0 || value > u64::MAX as f64 {
        return Err(TraceError::MalformedRow { line, reason: format!("size {field:?} is not a whole byte count") });
    }
    Ok(value as u64)
}

fn parse_row(text: &str, line: usize) -> Result<TraceRecord, TraceError> {
    let fields: Vec<&str> = text.split(|c: char| c == ',' || c.is_whitespace()).filter(|f| !f.is_empty()).collect();
    if fields.len() != 6 {
        return Err(TraceError::MalformedRow { line, reason: format!("expected 6 columns, found {}", fields.len()) });
    }
    let layer_id = fields[0].parse::<usize>().map_err(|_| TraceError::MalformedRow {
        line,
        reason: format!("layer id {:?} is not a non-negative integer", fields[0]),
    })?;
    Ok(TraceRecord {
        layer_id,
        name: fields[1].to_string(),
        forward_us: parse_time(fields[2], "forward", line)?,
        backward_us: parse_time(fields[3], "backward", line)?,
        comm_us: parse_time(fields[4], "comm", line)?,
        size_bytes: parse_size(fields[5], line)?,
    })
}

pub fn parse_trace(text: &str) -> Result<TraceSet, TraceError> {
    parse_trace_reader(text.as_bytes())
}

/// Single-pass parser over any buffered reader.
pub fn parse_trace_reader<R: BufRead>(reader: R) -> Result<TraceSet, TraceError> {
    let mut set = TraceSet::default();
    let mut block_start_line = 0;
    for (index, line) in reader.lines().enumerate() {
        let number = index + 1;
        let line = line.map_err(|e| TraceError::Io(e.to_string()))?;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let record = parse_row(content, number)?;
        if record.comm_us > 0.0 && record.size_bytes == 0 {
            set.warnings.push(TraceWarning {
                line: number,
                message: format!("layer {} ({}) has comm time {} but no gradient bytes", record.layer_id, record.name, record.comm_us),
            });
        }
        if record.is_data_layer() && (record.backward_us > 0.0 || record.comm_us > 0.0 || record.size_bytes > 0) {
            set.warnings.push(TraceWarning {
                line: number,
                message: format!("data layer {} has backward/comm/size values; only its forward time is used", record.name),
            });
        }
        let opens_block = match set.iterations.last().and_then(|b| b.last()) {
            Some(previous) => record.layer_id <= previous.layer_id,
            None => true,
        };
        if opens_block {
            check_block(&set, block_start_line)?;
            set.iterations.push(Vec::new());
            block_start_line = number;
        }
        set.iterations.last_mut().expect("block opened").push(record);
    }
    check_block(&set, block_start_line.max(1))?;
    Ok(set)
}

/// The most recent block must repeat the first block's layer sequence.
fn check_block(set: &TraceSet, line: usize) -> Result<(), TraceError> {
    let (Some(first), Some(last)) = (set.iterations.first(), set.iterations.last()) else { return Ok(()) };
    if set.iterations.len() < 2 {
        return Ok(());
    }
    let iteration = set.iterations.len() - 1;
    if first.len() != last.len() {
        return Err(TraceError::InconsistentBlocks {
            iteration,
            line,
            reason: format!("{} rows where the first iteration has {}", last.len(), first.len()),
        });
    }
    for (a, b) in first.iter().zip(last) {
        if a.layer_id != b.layer_id || a.name != b.name {
            return Err(TraceError::InconsistentBlocks {
                iteration,
                line,
                reason: format!("layer {} {} where the first iteration has {} {}", b.layer_id, b.name, a.layer_id, a.name),
            });
        }
        if a.size_bytes != b.size_bytes {
            return Err(TraceError::InconsistentBlocks {
                iteration,
                line,
                reason: format!("layer {} gradient size changed from {} to {}", a.name, a.size_bytes, b.size_bytes),
            });
        }
    }
    Ok(())
}

/// Order-independent mean: samples are summed in sorted order.
fn mean(mut samples: Vec<f64>) -> f64 {
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    samples.into_iter().sum::<f64>() / n
}

/// Per-layer mean over the iterations left after dropping `warmup`, before
/// any profile validation. The data layer's mean forward time becomes the
/// I/O time; host-to-device and update times are left at zero.
pub fn average_unchecked(traces: &TraceSet, warmup: usize) -> Result<IterationProfile, TraceError> {
    let available = traces.iterations.len();
    if warmup >= available {
        return Err(TraceError::EmptyAfterWarmup { warmup, available });
    }
    let kept = &traces.iterations[warmup..];
    let first = &traces.iterations[0];
    let column = |row: usize, pick: fn(&TraceRecord) -> f64| mean(kept.iter().map(|block| pick(&block[row])).collect());

    let mut io_time = 0.0;
    let mut layer_profiles = Vec::with_capacity(first.len());
    for (row, record) in first.iter().enumerate() {
        if record.is_data_layer() {
            io_time += column(row, |r| r.forward_us);
            continue;
        }
        layer_profiles.push(LayerProfile {
            layer_id: record.layer_id,
            name: record.name.clone(),
            forward_time: column(row, |r| r.forward_us),
            backward_time: column(row, |r| r.backward_us),
            comm_time: column(row, |r| r.comm_us),
            gradient_bytes: record.size_bytes,
        });
    }
    Ok(IterationProfile::new(io_time, 0.0, layer_profiles, 0.0))
}

/// [`average_unchecked`] followed by profile validation.
pub fn average_profile(traces: &TraceSet, warmup: usize) -> Result<IterationProfile, TraceError> {
    Ok(average_unchecked(traces, warmup)?.validate()?)
}

/// Whether the trace carries a measured I/O time.
pub fn has_data_layer(traces: &TraceSet) -> bool {
    traces.iterations.first().is_some_and(|block| block.iter().any(TraceRecord::is_data_layer))
}

/// I/O and host-to-device times of one per-GPU mini-batch, from bandwidths.
pub fn derive_transfer_times(workload: &WorkloadSpec, cluster: &ClusterSpec) -> (Micros, Micros) {
    (workload.transfer_time(cluster.disk_bandwidth), workload.transfer_time(cluster.h2d_bandwidth))
}

/// `%g`-style rendering with 6 significant digits, as the published traces use.
pub fn format_g(value: f64) -> String {
    if value == 0.0 {
        return "0".into();
    }
    let exponent = value.abs().log10().floor() as i32;
    // Rounding to 6 digits can carry into the next decade.
    let sci = format!("{:.5e}", value);
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().unwrap_or(exponent);
    if !(-4..6).contains(&exp) {
        let mantissa = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        strip_zeros(&format!("{value:.decimals$}"))
    }
}

fn strip_zeros(text: &str) -> String {
    if text.contains('.') {
        text.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        text.to_string()
    }
}

/// Writes the trace in the format [`parse_trace`] reads.
pub fn write_trace(traces: &TraceSet) -> String {
    let mut out = String::new();
    for block in &traces.iterations {
        for r in block {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                r.layer_id,
                r.name,
                format_g(r.forward_us),
                format_g(r.backward_us),
                format_g(r.comm_us),
                r.size_bytes
            );
        }
    }
    out
}
