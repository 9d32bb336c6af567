//! Monochrome Gantt charts: one row per device, hatching per event kind.

use std::fmt::Write;

use pipesched_core::{TaskEvent, TaskKind, Time, Timeline};

const UNIT: f64 = 24.0;
const ROW: f64 = 30.0;
const BAR: f64 = 22.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 34.0;

fn x(t: Time) -> f64 {
    LEFT + t.to_f64() * UNIT
}

fn fill(kind: TaskKind) -> &'static str {
    match kind {
        TaskKind::Forward => "url(#fwd)",
        TaskKind::Backward => "url(#bwd)",
        TaskKind::Reduce => "url(#red)",
        TaskKind::Broadcast => "url(#bc)",
        TaskKind::Update => "#222",
    }
}

fn label(e: &TaskEvent, pipelines: bool) -> String {
    match e.kind {
        TaskKind::Forward | TaskKind::Backward if pipelines => format!("{} p{}", e.minibatch, e.pipeline),
        TaskKind::Forward | TaskKind::Backward => e.minibatch.to_string(),
        TaskKind::Update => "U".into(),
        TaskKind::Reduce => "R".into(),
        TaskKind::Broadcast => "Bc".into(),
    }
}

pub fn render(t: &Timeline, title: &str) -> String {
    let span = t.makespan.to_f64().max(1.0);
    let width = LEFT + span * UNIT + 20.0;
    let height = TOP + t.devices as f64 * ROW + 60.0;
    let pipelines = t.events.iter().any(|e| e.pipeline > 0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.1}" height="{height:.1}" viewBox="0 0 {width:.1} {height:.1}" font-family="monospace" font-size="10">"#
    );
    s.push_str(concat!(
        "<defs>\n",
        r#"<pattern id="fwd" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="6" height="6" fill="white"/><line x1="0" y1="0" x2="0" y2="6" stroke="black" stroke-width="1.2"/></pattern>"#,
        "\n",
        r#"<pattern id="bwd" width="6" height="6" patternUnits="userSpaceOnUse" patternTransform="rotate(45)"><rect width="6" height="6" fill="white"/><line x1="0" y1="0" x2="0" y2="6" stroke="black" stroke-width="1.2"/><line x1="0" y1="3" x2="6" y2="3" stroke="black" stroke-width="1.2"/></pattern>"#,
        "\n",
        r#"<pattern id="red" width="4" height="4" patternUnits="userSpaceOnUse"><rect width="4" height="4" fill="white"/><circle cx="2" cy="2" r="1" fill="black"/></pattern>"#,
        "\n",
        r#"<pattern id="bc" width="4" height="4" patternUnits="userSpaceOnUse"><rect width="4" height="4" fill="white"/><line x1="0" y1="2" x2="4" y2="2" stroke="black" stroke-width="1"/></pattern>"#,
        "\n</defs>\n",
    ));
    let _ = writeln!(s, r#"<text x="{LEFT}" y="16" font-size="12">{}</text>"#, escape(title));

    for d in 0..t.devices {
        let y = TOP + d as f64 * ROW;
        let _ = writeln!(s, r#"<text x="8" y="{:.1}">dev {d}</text>"#, y + BAR * 0.7);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#bbb" stroke-width="0.5"/>"##,
            y + ROW - 2.0,
            width - 20.0,
            y + ROW - 2.0
        );
    }

    for e in &t.events {
        let y = TOP + e.device as f64 * ROW;
        let x0 = x(e.start);
        let w = (e.duration.to_f64() * UNIT).max(2.0);
        let dash = if e.preloaded { r#" stroke-dasharray="3,2""# } else { "" };
        let _ = writeln!(
            s,
            r#"<rect x="{x0:.2}" y="{y:.2}" width="{w:.2}" height="{BAR}" fill="{}" stroke="black" stroke-width="1"{dash}><title>{} stage {} minibatch {} pipeline {} [{}, {}]</title></rect>"#,
            fill(e.kind),
            e.kind.name(),
            e.stage,
            e.minibatch,
            e.pipeline,
            e.start,
            e.finish()
        );
        if e.duration.is_positive() {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" stroke="white" stroke-width="3" paint-order="stroke">{}</text>"#,
                x0 + w / 2.0,
                y + BAR * 0.68,
                label(e, pipelines)
            );
        }
    }

    let axis_y = TOP + t.devices as f64 * ROW + 6.0;
    let step = ((span / 30.0).ceil() as i64).max(1);
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{axis_y:.1}" x2="{:.1}" y2="{axis_y:.1}" stroke="black"/>"#,
        x(t.makespan)
    );
    let mut k = 0i64;
    while (k as f64) <= span {
        let xx = x(Time::int(k));
        let _ = writeln!(
            s,
            r#"<line x1="{xx:.1}" y1="{axis_y:.1}" x2="{xx:.1}" y2="{:.1}" stroke="black"/><text x="{xx:.1}" y="{:.1}" text-anchor="middle">{k}</text>"#,
            axis_y + 4.0,
            axis_y + 15.0
        );
        k += step;
    }

    let ly = axis_y + 26.0;
    let mut lx = LEFT;
    for (kind, name) in [
        (TaskKind::Forward, "forward"),
        (TaskKind::Backward, "backward"),
        (TaskKind::Update, "update"),
        (TaskKind::Reduce, "reduce"),
        (TaskKind::Broadcast, "broadcast"),
    ] {
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="14" height="10" fill="{}" stroke="black"/><text x="{:.1}" y="{:.1}">{name}</text>"#,
            fill(kind),
            lx + 18.0,
            ly + 9.0
        );
        lx += 90.0;
    }
    let _ = writeln!(
        s,
        r#"<text x="{lx:.1}" y="{:.1}">dashed = preloaded</text>"#,
        ly + 9.0
    );
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
