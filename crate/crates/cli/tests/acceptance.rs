//! Runs every acceptance criterion at its stated tolerance and prints one
//! PASS/FAIL line each. Criteria 1–9 call the suite directly; 10 drives the
//! binary.

use std::collections::BTreeMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use pipesched_core::suite::{run_check, SuiteConfig, CHECKS};

fn limit(id: u32) -> Option<Duration> {
    match id {
        1..=3 => Some(Duration::from_secs(60)),
        5 | 9 => Some(Duration::from_secs(120)),
        8 => Some(Duration::from_secs(300)),
        _ => None,
    }
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn invoke(cmd: &str, manifest: &Path, out: &Path, jobs: u32) -> (Option<i32>, BTreeMap<String, Vec<u8>>) {
    let o = Command::new(env!("CARGO_BIN_EXE_pipesched"))
        .arg(cmd)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .arg("--jobs")
        .arg(jobs.to_string())
        .output()
        .unwrap();
    (o.status.code(), read_tree(out))
}

/// Two invocations with one thread, one with four; all must match byte for byte.
fn determinism(dir: &Path) -> Result<String, String> {
    let sim = dir.join("simulate.json");
    std::fs::write(
        &sim,
        r#"{"policies":["AMDP","DAPPLE","GPipe","Chimera","Interleaved1F1B","PipeDreamAsync"],
            "depths":[4,8],"thresholds":[8,16],"windows":3,"zero_enabled":true}"#,
    )
    .unwrap();
    let ver = dir.join("verify.json");
    std::fs::write(&ver, r#"{"policies":["AMDP","DAPPLE"],"depths":[4],"thresholds":[8],"checks":[1,4,6,7,10],"fuzz_cases":500}"#)
        .unwrap();

    let mut files = 0;
    for (cmd, manifest) in [("simulate", &sim), ("verify", &ver)] {
        let runs: Vec<_> = [(1, "a"), (1, "b"), (4, "c")]
            .iter()
            .map(|&(jobs, tag)| invoke(cmd, manifest, &dir.join(format!("{cmd}_{tag}")), jobs))
            .collect();
        let (code, base) = &runs[0];
        if *code != Some(0) {
            return Err(format!("{cmd} exited with {code:?}"));
        }
        for (i, (c, tree)) in runs.iter().enumerate().skip(1) {
            if c != code {
                return Err(format!("{cmd} run {i} exited with {c:?}"));
            }
            if let Some(k) = base.keys().chain(tree.keys()).find(|k| base.get(*k) != tree.get(*k)) {
                return Err(format!("{cmd} run {i}: {k} differs"));
            }
        }
        files += base.len();
    }
    Ok(format!("{files} files identical across 3 invocations (jobs 1, 1, 4)"))
}

#[test]
fn acceptance() {
    let cfg = SuiteConfig::default();
    let mut failed = Vec::new();

    for &(id, name) in CHECKS.iter() {
        let start = Instant::now();
        let o = run_check(id, &cfg);
        let took = start.elapsed();
        let mut ok = o.passed;
        let mut detail = o.detail.clone();
        if let Some(max) = limit(id) {
            if took > max {
                ok = false;
                detail = format!("{detail}; took {took:.1?}, limit {max:?}");
            }
        }
        println!("{} {id:>2} {name} ({took:.1?}): {detail}", if ok { "PASS" } else { "FAIL" });
        if let Some(w) = &o.witness {
            println!("     witness: {w}");
        }
        if !ok {
            failed.push(id);
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let start = Instant::now();
    match determinism(dir.path()) {
        Ok(d) => println!("PASS 10 determinism ({:.1?}): {d}", start.elapsed()),
        Err(e) => {
            println!("FAIL 10 determinism ({:.1?}): {e}", start.elapsed());
            failed.push(10);
        }
    }

    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
