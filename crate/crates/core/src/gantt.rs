//! Timeline exports: the Gantt CSV and an SVG rendering with one lane per
//! resource.

use std::fmt::Write as _;

use crate::model::{Micros, ResourceId, TaskKind, TimelineEntry};
use crate::sim::SimResult;

pub const CSV_HEADER: &str = "task_id,kind,layer,gpu,resource,start_us,end_us";

/// Fixed notation with at most 6 decimals and no trailing zeros.
pub fn format_us(value: Micros) -> String {
    let text = format!("{value:.6}");
    let text = text.trim_end_matches('0').trim_end_matches('.');
    if text == "-0" {
        "0".into()
    } else {
        text.to_string()
    }
}

fn resource_label(resources: &[ResourceId]) -> String {
    resources.iter().map(ResourceId::to_string).collect::<Vec<_>>().join("+")
}

fn sorted_entries(result: &SimResult) -> Vec<&TimelineEntry> {
    let mut rows: Vec<&TimelineEntry> = result.timeline.entries.iter().collect();
    rows.sort_by(|a, b| a.start.total_cmp(&b.start).then(a.task.cmp(&b.task)));
    rows
}

/// One row per task sorted by start time, then id. Tasks spanning several
/// resources (the update) list them joined by `+`.
pub fn gantt_export(result: &SimResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for e in sorted_entries(result) {
        let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.task,
            e.kind,
            opt(e.layer),
            opt(e.gpu),
            resource_label(&e.resources),
            format_us(e.start),
            format_us(e.end)
        );
    }
    out
}

fn color(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Io => "#8c6d31",
        TaskKind::H2d => "#e6550d",
        TaskKind::Forward => "#3182bd",
        TaskKind::Backward => "#6baed6",
        TaskKind::AllReduce => "#d62728",
        TaskKind::Update => "#31a354",
    }
}

const LANE_HEIGHT: f64 = 22.0;
const LABEL_WIDTH: f64 = 70.0;
const PLOT_WIDTH: f64 = 1000.0;
const AXIS_HEIGHT: f64 = 30.0;

/// SVG Gantt chart: compute lanes, then disks, h2d links and comm channels.
pub fn gantt_svg(result: &SimResult) -> String {
    let lanes = &result.lanes;
    let height = lanes.len() as f64 * LANE_HEIGHT + AXIS_HEIGHT;
    let width = LABEL_WIDTH + PLOT_WIDTH + 10.0;
    let span = if result.makespan > 0.0 { result.makespan } else { 1.0 };
    let x = |t: Micros| LABEL_WIDTH + t / span * PLOT_WIDTH;

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="monospace" font-size="11">"#
    );
    for (row, lane) in lanes.iter().enumerate() {
        let y = row as f64 * LANE_HEIGHT;
        let shade = if row % 2 == 0 { "#f7f7f7" } else { "#ffffff" };
        let _ = writeln!(
            out,
            r##"<g class="lane" data-resource="{lane}"><rect x="0" y="{y}" width="{width}" height="{LANE_HEIGHT}" fill="{shade}"/><text x="4" y="{:.1}">{lane}</text></g>"##,
            y + LANE_HEIGHT * 0.7
        );
    }
    for entry in &result.timeline.entries {
        if entry.end <= entry.start {
            continue;
        }
        for resource in &entry.resources {
            let Some(row) = lanes.iter().position(|l| l == resource) else { continue };
            let y = row as f64 * LANE_HEIGHT + 3.0;
            let w = (x(entry.end) - x(entry.start)).max(0.5);
            let mut title = format!("T{} {}", entry.task, entry.kind);
            if let Some(layer) = entry.layer {
                let _ = write!(title, " layer {layer}");
            }
            let _ = write!(title, " iter {} [{} us, {} us]", entry.iteration, format_us(entry.start), format_us(entry.end));
            let _ = writeln!(
                out,
                r##"<rect x="{:.3}" y="{y}" width="{w:.3}" height="{:.1}" fill="{}" stroke="#333" stroke-width="0.3"><title>{title}</title></rect>"##,
                x(entry.start),
                LANE_HEIGHT - 6.0,
                color(entry.kind)
            );
        }
    }
    let axis_y = lanes.len() as f64 * LANE_HEIGHT;
    let _ = writeln!(
        out,
        r##"<line x1="{LABEL_WIDTH}" y1="{axis_y}" x2="{}" y2="{axis_y}" stroke="#000"/>"##,
        LABEL_WIDTH + PLOT_WIDTH
    );
    for tick in 0..=5 {
        let t = span * tick as f64 / 5.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} us</text>"#,
            x(t),
            axis_y + 18.0,
            format_us((t * 1000.0).round() / 1000.0)
        );
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn number_format() {
        assert_eq!(format_us(0.0), "0");
        assert_eq!(format_us(1.5), "1.5");
        assert_eq!(format_us(140127.883636), "140127.883636");
        assert_eq!(format_us(1e12), "1000000000000");
        assert_eq!(format_us(1.0 / 3.0), "0.333333");
    }
}
