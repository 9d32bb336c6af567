use std::path::Path;
use std::process::{Command, Output};

fn write_manifest(dir: &Path, body: &str) -> std::path::PathBuf {
    let p = dir.join("manifest.json");
    std::fs::write(&p, body).unwrap();
    p
}

fn run(args: &[&str], manifest: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pipesched"))
        .args(args)
        .arg("--manifest")
        .arg(manifest)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn config_error(o: &Output) -> serde_json::Value {
    assert_eq!(o.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    let err = String::from_utf8(o.stderr.clone()).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(v["error"], "config");
    v
}

#[test]
fn empty_policy_list_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"policies":[],"depths":[4],"thresholds":[4]}"#);
    let v = config_error(&run(&["simulate"], &m, &dir.path().join("out")));
    assert_eq!(v["field"], "policies");
    assert_eq!(v["rule"], "non_empty");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn odd_amdp_depth_names_even_depth_rule() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"policies":["AMDP"],"depths":[5],"thresholds":[8]}"#);
    let v = config_error(&run(&["simulate"], &m, &dir.path().join("out")));
    assert_eq!(v["rule"], "even_depth");
    assert!(v["message"].as_str().unwrap().contains("d=5"));
}

#[test]
fn compare_needs_two_policies() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"policies":["AMDP"],"depths":[4],"thresholds":[8]}"#);
    let v = config_error(&run(&["compare"], &m, &dir.path().join("out")));
    assert_eq!(v["rule"], "at_least_two");
}

#[test]
fn unknown_manifest_field_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"policies":["AMDP"],"depth":[4]}"#);
    let v = config_error(&run(&["simulate"], &m, &dir.path().join("out")));
    assert_eq!(v["rule"], "json_schema");
}

#[test]
fn unknown_check_id_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"checks":[11]}"#);
    let v = config_error(&run(&["verify"], &m, &dir.path().join("out")));
    assert_eq!(v["rule"], "known_check");
}

#[test]
fn dropped_edge_fault_fails_verify_with_witness() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        r#"{"checks":[6],"fuzz_cases":100,"fault_injection":"drop_forward_backward_edge"}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["verify"], &m, &out);
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("FAIL  6 causality_fuzz"), "{stdout}");
    let witness = stdout.lines().find_map(|l| l.trim().strip_prefix("witness: ")).unwrap();
    let w: serde_json::Value = serde_json::from_str(witness).unwrap();
    assert!(w["policy"].is_object() && w["cluster"].is_object());

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("verify.json")).unwrap()).unwrap();
    assert_eq!(report[0]["passed"], false);
}

#[test]
fn amdp_d4_simulate_writes_gantt_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        r#"{"policies":["AMDP"],"depths":[4],"thresholds":[4],"windows":3,"fwd_cost":1,"bwd_cost":2}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["simulate"], &m, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let cell = out.join("AMDP_d4_T4");
    let svg = std::fs::read_to_string(cell.join("gantt.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    for dev in 0..4 {
        assert!(svg.contains(&format!(">dev {dev}<")));
    }
    assert!(svg.contains("stroke-dasharray"), "preloaded forwards are drawn dashed");

    let mut rdr = csv::Reader::from_path(cell.join("mismatch.csv")).unwrap();
    let max = rdr
        .records()
        .map(|r| r.unwrap()[2].parse::<u32>().unwrap())
        .max()
        .unwrap();
    assert_eq!(max, 1);

    let mut rdr = csv::Reader::from_path(cell.join("timeline.csv")).unwrap();
    let headers: Vec<String> = rdr.headers().unwrap().iter().map(String::from).collect();
    assert_eq!(headers, ["device", "kind", "stage", "minibatch", "pipeline", "start", "duration"]);
}

#[test]
fn compare_d4_n16_reports_analytic_columns() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        r#"{"policies":["DAPPLE","Chimera","PipeDreamAsync","AMDP"],"depths":[4],"thresholds":[16],"fwd_cost":1,"bwd_cost":1,"formats":["csv"]}"#,
    );
    let out = dir.path().join("out");
    let o = run(&["compare"], &m, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let mut rdr = csv::Reader::from_path(out.join("compare_d4_n16.csv")).unwrap();
    let h = rdr.headers().unwrap().clone();
    let col = |name: &str| h.iter().position(|c| c == name).unwrap();
    let (p, sim, ana, mm) = (
        col("policy"),
        col("bubble_ratio_simulated"),
        col("bubble_ratio_analytic"),
        col("max_mismatch"),
    );
    let rows: Vec<(String, String, String, String)> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            (r[p].into(), r[sim].into(), r[ana].into(), r[mm].into())
        })
        .collect();
    let get = |name: &str| rows.iter().find(|r| r.0 == name).unwrap().clone();

    let dapple = get("DAPPLE");
    assert_eq!((dapple.1.as_str(), dapple.2.as_str()), ("3/19", "3/19"));
    let chimera = get("Chimera");
    assert_eq!(chimera.2, "2/34");
    assert_eq!(chimera.1, "1/17");
    let pd = get("PipeDreamAsync");
    assert_eq!((pd.1.as_str(), pd.2.as_str()), ("0", "0"));
    let amdp = get("AMDP");
    assert_eq!(amdp.2, "≈0");
    assert_eq!(amdp.3, "1");
}

#[test]
fn seed_flag_overrides_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), r#"{"checks":[4],"seed":3}"#);
    let out = dir.path().join("out");
    let o = Command::new(env!("CARGO_BIN_EXE_pipesched"))
        .args(["verify", "--seed", "9", "--manifest"])
        .arg(&m)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success());
    assert!(String::from_utf8(o.stdout).unwrap().contains("1 of 1 checks passed"));
}
