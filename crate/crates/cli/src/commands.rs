use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use pipesched_core::analysis::{memory_report, mismatch_report, table1_view, window_mismatch};
use pipesched_core::export::{memory_csv, mismatch_csv, timeline_csv, to_json, window_csv};
use pipesched_core::suite::{run_check, CheckOutcome, CHECKS};
use pipesched_core::time::ratio_string;
use pipesched_core::{bubble_ratio, build, simulate, MemoryModel, Policy, PolicyConfig, Ratio, Time, Timeline};
use rayon::prelude::*;
use serde::Serialize;

use crate::gantt;
use crate::manifest::{Cell, CliError, Format, Resolved};

/// File name → contents.
pub type Artifacts = BTreeMap<String, Vec<u8>>;

#[derive(Clone, Debug, Serialize)]
pub struct SummaryRow {
    pub policy: Policy,
    pub depth: u32,
    pub threshold: u32,
    pub minibatches: u32,
    pub makespan: Time,
    #[serde(with = "pipesched_core::time::ratio_serde")]
    pub bubble_ratio: Ratio,
    pub bubble_warmup_windows: u32,
    pub max_mismatch: u32,
    /// Weight, gradient, optimizer state and peak activations, per device.
    pub peak_memory: Vec<String>,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::config("jobs", "thread_pool", e.to_string()))
}

fn policy_config(cell: &Cell) -> PolicyConfig {
    PolicyConfig::new(cell.policy, cell.threshold, cell.threshold * cell.windows).with_zero(cell.zero_enabled)
}

fn build_error(cell: &Cell, e: impl std::fmt::Display) -> CliError {
    CliError::config("policies", "buildable", format!("{}: {e}", cell.slug()))
}

fn run_cell(cell: &Cell, cfg: &PolicyConfig) -> Result<Timeline, CliError> {
    let g = build(cfg, &cell.cluster).map_err(|e| build_error(cell, e))?;
    simulate(&g, &cell.cluster).map_err(|e| build_error(cell, e))
}

/// Asynchronous policies with three or more windows are measured in the
/// steady state (first and last window excluded).
fn warmup_for(policy: Policy, windows: u32) -> u32 {
    u32::from(!policy.is_synchronous() && windows >= 3)
}

fn render_cell(cell: &Cell, formats: &[Format], mem: &MemoryModel) -> Result<(SummaryRow, Artifacts), CliError> {
    let cfg = policy_config(cell);
    let t = run_cell(cell, &cfg)?;
    let warmup = warmup_for(cell.policy, cell.windows);
    let bubble = bubble_ratio(&t, warmup).map_err(|e| build_error(cell, e))?;
    let mism = mismatch_report(&t);
    let mem_rep = memory_report(&t, &cfg, mem);
    let windows = window_mismatch(&t, cell.depth);
    let row = SummaryRow {
        policy: cell.policy,
        depth: cell.depth,
        threshold: cell.threshold,
        minibatches: cfg.num_minibatches,
        makespan: t.makespan,
        bubble_ratio: bubble,
        bubble_warmup_windows: warmup,
        max_mismatch: mism.max(),
        peak_memory: mem_rep
            .devices
            .iter()
            .map(|d| ratio_string(&(d.weight + d.gradient + d.optimizer_state + d.peak_activation)))
            .collect(),
    };
    let dir = cell.slug();
    let mut a = Artifacts::new();
    let mut put = |name: &str, body: String| {
        a.insert(format!("{dir}/{name}"), body.into_bytes());
    };
    for f in formats {
        match f {
            Format::Csv => {
                put("timeline.csv", timeline_csv(&t));
                put("mismatch.csv", mismatch_csv(&mism));
                put("windows.csv", window_csv(&windows));
                put("memory.csv", memory_csv(&mem_rep));
            }
            Format::Json => {
                put("timeline.json", to_json(&t));
                put("mismatch.json", to_json(&mism));
                put("windows.json", to_json(&windows));
                put("memory.json", to_json(&mem_rep));
            }
            Format::Svg => put(
                "gantt.svg",
                gantt::render(&t, &format!("{} d={} T={}", cell.policy.name(), cell.depth, cell.threshold)),
            ),
        }
    }
    Ok((row, a))
}

fn csv_text(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("write to memory");
    for r in rows {
        w.write_record(r).expect("write to memory");
    }
    String::from_utf8(w.into_inner().expect("flush to memory")).expect("utf-8 fields")
}

fn summary_csv(rows: &[SummaryRow]) -> String {
    let header = [
        "policy",
        "depth",
        "threshold",
        "minibatches",
        "makespan",
        "bubble_ratio",
        "bubble_warmup_windows",
        "max_mismatch",
        "peak_memory",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.policy.name().to_string(),
                r.depth.to_string(),
                r.threshold.to_string(),
                r.minibatches.to_string(),
                r.makespan.to_string(),
                ratio_string(&r.bubble_ratio),
                r.bubble_warmup_windows.to_string(),
                r.max_mismatch.to_string(),
                r.peak_memory.join(" "),
            ]
        })
        .collect();
    csv_text(&header, &body)
}

fn text_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut w: Vec<usize> = header.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (k, c) in r.iter().enumerate() {
            w[k] = w[k].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(k, c)| format!("{c:<width$}", width = w[k]))
            .collect::<Vec<_>>()
            .join("  ")
            .trim_end()
            .to_string()
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
        out.push('\n');
    }
    out
}

/// Every artifact `simulate` writes, plus the stdout table.
pub fn simulate_artifacts(r: &Resolved, formats: &[Format], jobs: usize) -> Result<(Artifacts, String), CliError> {
    let cells = r.cells()?;
    let results: Vec<Result<(SummaryRow, Artifacts), CliError>> =
        pool(jobs)?.install(|| cells.par_iter().map(|c| render_cell(c, formats, &r.memory)).collect());
    let mut all = Artifacts::new();
    let mut rows = Vec::new();
    for res in results {
        let (row, a) = res?;
        rows.push(row);
        all.extend(a);
    }
    if formats.contains(&Format::Csv) {
        all.insert("summary.csv".into(), summary_csv(&rows).into_bytes());
    }
    if formats.contains(&Format::Json) {
        all.insert("summary.json".into(), to_json(&rows).into_bytes());
    }
    let table = text_table(
        &["policy", "d", "T", "makespan", "bubble", "max_mismatch", "peak_memory"],
        &rows
            .iter()
            .map(|r| {
                vec![
                    r.policy.name().to_string(),
                    r.depth.to_string(),
                    r.threshold.to_string(),
                    r.makespan.to_string(),
                    ratio_string(&r.bubble_ratio),
                    r.max_mismatch.to_string(),
                    r.peak_memory.join(" "),
                ]
            })
            .collect::<Vec<_>>(),
    );
    Ok((all, table))
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareRow {
    pub policy: Policy,
    pub depth: u32,
    pub n: u32,
    #[serde(with = "pipesched_core::time::ratio_serde")]
    pub bubble_ratio_simulated: Ratio,
    pub bubble_ratio_analytic: String,
    #[serde(with = "pipesched_core::time::ratio_serde")]
    pub weight_memory: Ratio,
    pub weight_memory_table: String,
    #[serde(with = "pipesched_core::time::ratio_serde")]
    pub peak_activation_memory: Ratio,
    pub peak_activation_table: String,
    pub max_mismatch: u32,
}

/// How each policy is run for the comparison table at (d, n).
///
/// Synchronous policies run one window of n, measured end to end.
/// PipeDreamAsync updates after every minibatch and runs 4n minibatches with
/// the first and last d excluded. AMDP runs at least 4 windows of n with the
/// first and last window excluded.
pub fn compare_setup(policy: Policy, d: u32, n: u32, windows: u32, zero: bool) -> (PolicyConfig, u32) {
    match policy {
        Policy::PipeDreamAsync => (PolicyConfig::new(policy, 1, 4 * n.max(d)), d),
        Policy::Amdp => (PolicyConfig::new(policy, n, n * windows.max(4)).with_zero(zero), 1),
        _ => (PolicyConfig::new(policy, n, n), 0),
    }
}

fn compare_row(cell: &Cell, mem: &MemoryModel) -> Result<CompareRow, CliError> {
    let (cfg, warmup) = compare_setup(cell.policy, cell.depth, cell.threshold, cell.windows, cell.zero_enabled);
    let t = run_cell(cell, &cfg)?;
    let bubble = bubble_ratio(&t, warmup).map_err(|e| build_error(cell, e))?;
    let rep = memory_report(&t, &cfg, mem);
    let view = table1_view(cell.policy, cell.depth, cell.threshold, mem);
    let zero = Ratio::from_integer(0);
    Ok(CompareRow {
        policy: cell.policy,
        depth: cell.depth,
        n: cell.threshold,
        bubble_ratio_simulated: bubble,
        bubble_ratio_analytic: view.bubble_ratio.to_string(),
        weight_memory: rep.devices.iter().map(|d| d.weight).max().unwrap_or(zero),
        weight_memory_table: view.weight_memory,
        peak_activation_memory: rep.devices.iter().map(|d| d.peak_activation).max().unwrap_or(zero),
        peak_activation_table: view.peak_activation,
        max_mismatch: mismatch_report(&t).max(),
    })
}

pub fn compare_artifacts(r: &Resolved, formats: &[Format], jobs: usize) -> Result<(Artifacts, String), CliError> {
    if r.manifest.policies.len() < 2 {
        return Err(CliError::config("policies", "at_least_two", "compare needs at least two policies"));
    }
    let cells = r.cells()?;
    let results: Vec<Result<CompareRow, CliError>> =
        pool(jobs)?.install(|| cells.par_iter().map(|c| compare_row(c, &r.memory)).collect());
    let rows = results.into_iter().collect::<Result<Vec<_>, _>>()?;
    let mut groups: BTreeMap<(u32, u32), Vec<&CompareRow>> = BTreeMap::new();
    for row in &rows {
        groups.entry((row.depth, row.n)).or_default().push(row);
    }
    let header = [
        "policy",
        "bubble_ratio_simulated",
        "bubble_ratio_analytic",
        "weight_memory",
        "weight_memory_table",
        "peak_activation_memory",
        "peak_activation_table",
        "max_mismatch",
    ];
    let mut all = Artifacts::new();
    let mut stdout = String::new();
    for ((d, n), group) in &groups {
        let cells: Vec<Vec<String>> = group
            .iter()
            .map(|r| {
                vec![
                    r.policy.name().to_string(),
                    ratio_string(&r.bubble_ratio_simulated),
                    r.bubble_ratio_analytic.clone(),
                    ratio_string(&r.weight_memory),
                    r.weight_memory_table.clone(),
                    ratio_string(&r.peak_activation_memory),
                    r.peak_activation_table.clone(),
                    r.max_mismatch.to_string(),
                ]
            })
            .collect();
        let stem = format!("compare_d{d}_n{n}");
        if formats.contains(&Format::Csv) {
            all.insert(format!("{stem}.csv"), csv_text(&header, &cells).into_bytes());
        }
        if formats.contains(&Format::Json) {
            all.insert(format!("{stem}.json"), to_json(group).into_bytes());
        }
        stdout.push_str(&format!("d={d} n={n}\n"));
        stdout.push_str(&text_table(&header, &cells));
    }
    Ok((all, stdout))
}

/// Cells used by the determinism check when the manifest names none.
fn determinism_cells(r: &Resolved) -> Result<Vec<Cell>, CliError> {
    if !r.manifest.policies.is_empty() && !r.manifest.thresholds.is_empty() {
        return r.cells();
    }
    let mut fallback = r.clone();
    fallback.manifest.policies = vec![Policy::Amdp, Policy::Dapple, Policy::Chimera, Policy::Interleaved1F1B];
    fallback.manifest.depths = vec![4];
    fallback.manifest.thresholds = vec![8];
    fallback.base_cluster = None;
    fallback.cells()
}

/// Renders the simulate artifacts serially, in parallel and again, and
/// compares bytes.
fn determinism_check(r: &Resolved, jobs: usize) -> CheckOutcome {
    let all = [Format::Csv, Format::Json, Format::Svg];
    let outcome = |passed, detail: String| CheckOutcome {
        id: 10,
        name: "determinism".into(),
        passed,
        detail,
        witness: None,
    };
    let cells = match determinism_cells(r) {
        Ok(c) => c,
        Err(e) => return outcome(false, e.machine_line()),
    };
    let mut probe = r.clone();
    probe.manifest.policies = cells.iter().map(|c| c.policy).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    probe.manifest.depths = cells.iter().map(|c| c.depth).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    probe.manifest.thresholds = cells.iter().map(|c| c.threshold).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
    let runs: Vec<Result<(Artifacts, String), CliError>> = [1, jobs.max(2), 1]
        .iter()
        .map(|&j| simulate_artifacts(&probe, &all, j))
        .collect();
    let mut base: Option<Artifacts> = None;
    for run in runs {
        match run {
            Err(e) => return outcome(false, e.machine_line()),
            Ok((a, _)) => match &base {
                None => base = Some(a),
                Some(b) if *b != a => {
                    let diff = b.keys().chain(a.keys()).find(|k| b.get(*k) != a.get(*k)).cloned();
                    return outcome(false, format!("artifact differs between runs: {}", diff.unwrap_or_default()));
                }
                Some(_) => {}
            },
        }
    }
    let n = base.map_or(0, |b| b.len());
    outcome(true, format!("{n} artifacts byte-identical across serial and parallel renders"))
}

pub fn verify_outcomes(r: &Resolved, jobs: usize) -> Result<Vec<CheckOutcome>, CliError> {
    r.check_depth_rules().or_else(|e| match e {
        CliError::Config { ref rule, .. } if rule == "non_empty" => Ok(()),
        e => Err(e),
    })?;
    let cfg = r.suite_config();
    let wanted: Vec<u32> = if r.manifest.checks.is_empty() {
        CHECKS.iter().map(|c| c.0).chain([10]).collect()
    } else {
        r.manifest.checks.clone()
    };
    if let Some(bad) = wanted.iter().find(|&&id| !(1..=10).contains(&id)) {
        return Err(CliError::config("checks", "known_check", format!("no check numbered {bad}")));
    }
    let outcomes = pool(jobs)?.install(|| {
        wanted
            .par_iter()
            .map(|&id| {
                let start = std::time::Instant::now();
                let o = if id == 10 { determinism_check(r, jobs) } else { run_check(id, &cfg) };
                log::info!("check {id} finished in {:.2?}", start.elapsed());
                o
            })
            .collect()
    });
    Ok(outcomes)
}

pub fn outcome_lines(outcomes: &[CheckOutcome]) -> String {
    let mut s = String::new();
    for o in outcomes {
        let tag = if o.passed { "PASS" } else { "FAIL" };
        s.push_str(&format!("{tag} {:>2} {}: {}\n", o.id, o.name, o.detail));
        if let Some(w) = &o.witness {
            s.push_str(&format!("     witness: {w}\n"));
        }
    }
    s
}

pub fn write_artifacts(out: &Path, a: &Artifacts) -> Result<(), CliError> {
    for (name, body) in a {
        let path: PathBuf = out.join(name);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        std::fs::write(&path, body).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::{resolve, RunManifest};

    fn resolved(json: &str) -> Resolved {
        let m: RunManifest = serde_json::from_str(json).unwrap();
        resolve(m, Path::new(".")).unwrap()
    }

    #[test]
    fn compare_table_matches_closed_forms() {
        let r = resolved(r#"{"policies":["DAPPLE","Chimera","PipeDreamAsync","AMDP"],"depths":[4],"thresholds":[16],"fwd_cost":1,"bwd_cost":1}"#);
        let (a, out) = compare_artifacts(&r, &[Format::Csv], 1).unwrap();
        let rows: Vec<csv::StringRecord> = csv::Reader::from_reader(a["compare_d4_n16.csv"].as_slice())
            .records()
            .collect::<Result<_, _>>()
            .unwrap();
        let analytic: Vec<&str> = rows.iter().map(|r| &r[2]).collect();
        assert_eq!(analytic, ["3/19", "2/34", "0", "≈0"]);
        assert_eq!(&rows[0][1], "3/19");
        assert_eq!(&rows[1][1], "1/17");
        assert_eq!(&rows[2][1], "0");
        assert_eq!(&rows[2][4], "[M_θ, d·M_θ]");
        assert_eq!(&rows[2][7], "3");
        assert_eq!(&rows[3][7], "1");
        assert!(out.contains("DAPPLE"));
    }

    #[test]
    fn compare_needs_two_policies() {
        let r = resolved(r#"{"policies":["DAPPLE"],"depths":[4],"thresholds":[4]}"#);
        assert!(matches!(
            compare_artifacts(&r, &[Format::Csv], 1),
            Err(CliError::Config { ref rule, .. }) if rule == "at_least_two"
        ));
    }

    #[test]
    fn simulate_is_thread_count_independent() {
        let r = resolved(r#"{"policies":["AMDP","DAPPLE","GPipe"],"depths":[4,8],"thresholds":[8,16],"windows":3}"#);
        let all = [Format::Csv, Format::Json, Format::Svg];
        let (a, ta) = simulate_artifacts(&r, &all, 1).unwrap();
        let (b, tb) = simulate_artifacts(&r, &all, 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(a.contains_key("AMDP_d8_T16/gantt.svg"));
    }

    #[test]
    fn summary_reports_each_cell() {
        let r = resolved(r#"{"policies":["DAPPLE"],"depths":[4],"thresholds":[4],"windows":1}"#);
        let (a, _) = simulate_artifacts(&r, &[Format::Csv], 1).unwrap();
        let s = String::from_utf8(a["summary.csv"].clone()).unwrap();
        assert_eq!(s.lines().nth(1).unwrap().split(',').take(8).collect::<Vec<_>>(), ["DAPPLE", "4", "4", "4", "21", "3/7", "0", "0"]);
    }
}
