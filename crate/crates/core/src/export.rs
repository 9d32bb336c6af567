//! CSV and JSON writers for timelines and reports.
//!
//! Times are written as exact rationals ("7" or "7/2"). Column names are
//! fixed; see the README for the full list.

use serde::Serialize;

use crate::analysis::{MemoryReport, WindowReport};
use crate::delay::{OptRunTrace, ScalingFit};
use crate::model::{MismatchReport, Timeline};
use crate::time::ratio_string;

pub const TIMELINE_COLUMNS: [&str; 7] = ["device", "kind", "stage", "minibatch", "pipeline", "start", "duration"];
pub const MISMATCH_COLUMNS: [&str; 3] = ["stage", "minibatch", "updates"];
pub const WINDOW_COLUMNS: [&str; 5] = ["window", "size", "first_minibatch", "update_count", "mismatched"];
pub const MEMORY_COLUMNS: [&str; 8] = [
    "device",
    "replicas",
    "weight",
    "peak_live_minibatches",
    "peak_activation",
    "gradient",
    "optimizer_state",
    "optimizer_state_naive",
];
pub const TRACE_COLUMNS: [&str; 4] = ["t", "F", "grad_norm_sq", "discrepancy_norm"];

fn write_rows<I, R>(header: &[&str], rows: I) -> String
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("ascii output")
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("serializable value");
    s.push('\n');
    s
}

/// One row per event, in (device, start) order.
pub fn timeline_csv(t: &Timeline) -> String {
    write_rows(
        &TIMELINE_COLUMNS,
        t.events.iter().map(|e| {
            vec![
                e.device.to_string(),
                e.kind.name().to_string(),
                e.stage.to_string(),
                e.minibatch.to_string(),
                e.pipeline.to_string(),
                e.start.to_string(),
                e.duration.to_string(),
            ]
        }),
    )
}

pub fn mismatch_csv(r: &MismatchReport) -> String {
    write_rows(
        &MISMATCH_COLUMNS,
        r.entries
            .iter()
            .map(|e| vec![e.stage.to_string(), e.minibatch.to_string(), e.updates.to_string()]),
    )
}

/// `mismatched` is a space-separated minibatch list.
pub fn window_csv(r: &WindowReport) -> String {
    write_rows(
        &WINDOW_COLUMNS,
        r.windows.iter().map(|w| {
            vec![
                w.window.to_string(),
                w.size.to_string(),
                w.first_minibatch.to_string(),
                w.update_count.to_string(),
                w.mismatched.iter().map(u32::to_string).collect::<Vec<_>>().join(" "),
            ]
        }),
    )
}

pub fn memory_csv(r: &MemoryReport) -> String {
    write_rows(
        &MEMORY_COLUMNS,
        r.devices.iter().map(|d| {
            vec![
                d.device.to_string(),
                d.replicas.to_string(),
                ratio_string(&d.weight),
                d.peak_live_minibatches.to_string(),
                ratio_string(&d.peak_activation),
                ratio_string(&d.gradient),
                ratio_string(&d.optimizer_state),
                ratio_string(&d.optimizer_state_naive),
            ]
        }),
    )
}

/// `discrepancy_norm` is empty for unpaired runs.
pub fn trace_csv(tr: &OptRunTrace) -> String {
    let disc = tr.discrepancy_norm.as_deref();
    write_rows(
        &TRACE_COLUMNS,
        (0..tr.iterates.len()).map(|t| {
            vec![
                t.to_string(),
                format!("{:e}", tr.objective[t]),
                format!("{:e}", tr.grad_norm_sq[t]),
                disc.map(|d| format!("{:e}", d[t])).unwrap_or_default(),
            ]
        }),
    )
}

#[derive(Serialize)]
struct ScalingSummary<'a> {
    slope: Option<f64>,
    intercept: Option<f64>,
    residual: Option<f64>,
    exact_zero: bool,
    points: &'a [crate::delay::ScalingPoint],
    excluded: &'a [crate::delay::ExcludedRun],
}

pub fn scaling_json(fit: &ScalingFit) -> String {
    to_json(&ScalingSummary {
        slope: fit.slope,
        intercept: fit.intercept,
        residual: fit.residual,
        exact_zero: fit.exact_zero,
        points: &fit.points,
        excluded: &fit.excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builder::build;
    use crate::engine::simulate;
    use crate::model::{ClusterSpec, Policy, PolicyConfig};
    use crate::time::Time;

    #[test]
    fn timeline_csv_shape() {
        let c = ClusterSpec::uniform(2, Time::int(1), Time::new(3, 2));
        let t = simulate(&build(&PolicyConfig::new(Policy::Dapple, 1, 1), &c).unwrap(), &c).unwrap();
        let csv = timeline_csv(&t);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("device,kind,stage,minibatch,pipeline,start,duration"));
        assert_eq!(csv.lines().count(), t.events.len() + 1);
        assert!(csv.contains(",3/2"));
    }

    #[test]
    fn timeline_json_round_trips() {
        let c = ClusterSpec::uniform(4, Time::int(1), Time::int(2));
        let t = simulate(&build(&PolicyConfig::new(Policy::Amdp, 8, 16), &c).unwrap(), &c).unwrap();
        let back: Timeline = serde_json::from_str(&to_json(&t)).unwrap();
        assert_eq!(back, t);
    }
}
