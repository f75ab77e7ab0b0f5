use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_noisy-cluster"))
}

fn demo() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs/demo.json")
}

fn run(args: &[&str], config: &Path, out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn demo_value() -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(demo()).unwrap()).unwrap()
}

fn write_config(dir: &Path, v: &serde_json::Value) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

#[test]
fn select_writes_selection_and_trace() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["select"], &demo(), tmp.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let sel: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("lambda_hat.json")).unwrap()).unwrap();
    let net: Vec<f64> = serde_json::from_value(sel["net"].clone()).unwrap();
    assert!(net.contains(&sel["lambda_hat"].as_f64().unwrap()));
    let trace = fs::read_to_string(tmp.path().join("trace.csv")).unwrap();
    assert!(trace.starts_with("lambda,lambda_prime,risk_diff,threshold,pass"));
    assert!(tmp.path().join("manifest.json").exists());
}

#[test]
fn malformed_json_exits_2_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.json");
    fs::write(&bad, "{\n  \"schema\": 1,\n  \"scenario\": {\n}").unwrap();
    let out = run(&["select"], &bad, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line") && err.contains("column"), "{err}");
}

#[test]
fn rates_with_two_sizes_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = demo_value();
    v["scenario"]["n_list"] = serde_json::json!([1000, 20000]);
    let cfg = write_config(tmp.path(), &v);
    let out = run(&["rates"], &cfg, &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("need ≥ 3 sizes"));
}

#[test]
fn unknown_key_and_wrong_schema_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let mut v = demo_value();
    v["colour"] = serde_json::json!("blue");
    let cfg = write_config(tmp.path(), &v);
    assert_eq!(run(&["cluster"], &cfg, &tmp.path().join("o")).status.code(), Some(2));
    let mut v = demo_value();
    v["schema"] = serde_json::json!(2);
    let cfg = write_config(tmp.path(), &v);
    assert_eq!(run(&["cluster"], &cfg, &tmp.path().join("o")).status.code(), Some(2));
}

#[test]
fn manifest_reruns_to_identical_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let first = tmp.path().join("a");
    let out = run(&["cluster", "--seed", "11"], &demo(), &first);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let second = tmp.path().join("b");
    let out = run(&["cluster"], &first.join("manifest.json"), &second);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(
        fs::read(first.join("codebook.json")).unwrap(),
        fs::read(second.join("codebook.json")).unwrap()
    );
    let m: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(first.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["config"]["scenario"]["seed"], 11);
    assert!(m["outputs"]["codebook.json"].is_string());
}

#[test]
fn estimate_density_and_sample_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&["estimate-density"], &demo(), &tmp.path().join("o"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = fs::read_to_string(tmp.path().join("o/density.csv")).unwrap();
    assert!(text.starts_with("x1,value"));
    assert_eq!(text.lines().count(), 257);

    let data = tmp.path().join("z.csv");
    let rows: String = (0..400)
        .map(|i| format!("{}\n", if i % 2 == 0 { -0.5 } else { 0.5 } + 0.001 * (i % 7) as f64))
        .collect();
    fs::write(&data, format!("x1\n{rows}")).unwrap();
    let mut v = demo_value();
    v["sample_csv"] = serde_json::json!(data);
    v["lambda"] = serde_json::json!(0.5);
    let cfg = write_config(tmp.path(), &v);
    let out = run(&["cluster"], &cfg, &tmp.path().join("c"));
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let cb: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("c/codebook.json")).unwrap()).unwrap();
    assert!(cb["excess_risk"].is_null());
}
