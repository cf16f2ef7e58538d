use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const BASE: &str = r#"
seed = 3

[grid]
n_per_axis = 16
box_length = 3.141592653589793

[solver]
dt = 0.01
t_end = 0.4

[initial]
kind = "INITIAL"

[sampling]
points = [[1.5, 1.6, 1.4], [1.7, 1.4, 1.6]]
t_stride = 5
t_min = 0.3
radii = [0.5, 0.45, 0.4]
prop1_radius = 0.4

[sampling.mollifier]
first_radius = 0.6
ratio = 0.6
count = 3
"#;

fn config(initial: &str) -> String {
    BASE.replace("kind = \"INITIAL\"", initial)
}

const ZERO: &str = "kind = \"zero\"";
const TG: &str = "kind = \"taylor_green\"\namplitude = 0.1";

fn ckn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ckn"))
        .args(args)
        .env_remove("CKN_OUT_DIR")
        .env_remove("CKN_THREADS")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

fn run(dir: &Path, text: &str) -> PathBuf {
    let cfg = write_config(dir, "run.toml", text);
    let out = dir.join("run");
    let o = ckn(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn samples(map: &Value) -> &Vec<Value> {
    map["samples"].as_array().unwrap()
}

#[test]
fn malformed_config_names_the_key() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("out");
    let unknown = write_config(dir.path(), "a.toml", &config(ZERO).replace("seed = 3", "seed = 3\nsede = 4"));
    let o = ckn(&["run", "--config", s(&unknown), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("sede"));

    let bad = write_config(
        dir.path(),
        "b.toml",
        &format!("{}\n[constants]\nc0 = -1.0\n", config(ZERO)),
    );
    let o = ckn(&["run", "--config", s(&bad), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("constants.c0"));
}

#[test]
fn zero_run_is_trivial_and_deterministic() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &config(ZERO));
    let manifest = read_json(&out.join("manifest.json"));
    let ledger = manifest["trajectory"]["ledger"].as_array().unwrap();
    assert!(!ledger.is_empty());
    assert!(ledger.iter().all(|e| e["energy"].as_f64() == Some(0.0)));

    let again = dir.path().join("again");
    let cfg = dir.path().join("run.toml");
    assert!(ckn(&["run", "--config", s(&cfg), "--out", s(&again)]).status.success());
    for name in manifest["trajectory"]["files"].as_array().unwrap() {
        let name = name.as_str().unwrap();
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap());
    }

    let o = ckn(&["analyze", "--run", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let map = read_json(&out.join("regularity_map.json"));
    assert!(!samples(&map).is_empty());
    assert!(samples(&map).iter().all(|x| x["status"] == "regular" && x["prop1_pass"] == true));
    assert_eq!(map["covering"]["sum_r"].as_f64(), Some(0.0));
}

#[test]
fn analysis_exports_and_determinism() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &config(TG));

    let one = dir.path().join("one");
    let two = dir.path().join("two");
    for (threads, target) in [("1", &one), ("2", &two)] {
        let o = ckn(&["--threads", threads, "--format", "csv", "analyze", "--run", s(&out), "--out", s(target)]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    let map_path = one.join("regularity_map.json");
    assert_eq!(fs::read(&map_path).unwrap(), fs::read(two.join("regularity_map.json")).unwrap());
    assert_eq!(fs::read(one.join("samples.csv")).unwrap(), fs::read(two.join("samples.csv")).unwrap());

    let map = read_json(&map_path);
    let n = samples(&map).len();
    assert!(n > 0);
    assert!(samples(&map).iter().all(|x| x["prop1_pass"] == true));

    let plots = dir.path().join("plots");
    assert!(ckn(&["plotdata", "--map", s(&map_path), "--out", s(&plots)]).status.success());
    let first: Vec<(String, Vec<u8>)> = ["m_vs_r.csv", "psi_decay.csv", "t_star_map.csv"]
        .iter()
        .map(|name| (name.to_string(), fs::read(plots.join(name)).unwrap()))
        .collect();
    for (name, bytes) in &first {
        let rows = csv::Reader::from_reader(bytes.as_slice()).records().count();
        assert_eq!(rows, n, "{name}");
    }
    assert!(ckn(&["plotdata", "--map", s(&map_path), "--out", s(&plots)]).status.success());
    for (name, bytes) in &first {
        assert_eq!(&fs::read(plots.join(name)).unwrap(), bytes, "{name} changed on re-export");
    }

    let mut empty = map.clone();
    empty["samples"] = Value::Array(Vec::new());
    let empty_path = dir.path().join("empty.json");
    fs::write(&empty_path, serde_json::to_string(&empty).unwrap()).unwrap();
    let empty_out = dir.path().join("empty_plots");
    assert!(ckn(&["plotdata", "--map", s(&empty_path), "--out", s(&empty_out)]).status.success());
    for (name, _) in &first {
        let text = fs::read_to_string(empty_out.join(name)).unwrap();
        assert_eq!(text.lines().count(), 1, "{name} should hold only its header");
    }

    let mut wrong = map.clone();
    wrong["schema_version"] = Value::from(99);
    let wrong_path = dir.path().join("wrong.json");
    fs::write(&wrong_path, serde_json::to_string(&wrong).unwrap()).unwrap();
    let o = ckn(&["plotdata", "--map", s(&wrong_path), "--out", s(&plots)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema version"));

    let strict = write_config(
        dir.path(),
        "strict.toml",
        &format!("{}\n[constants]\nepsilon1 = 0.0\n", config(TG)),
    );
    let strict_out = dir.path().join("strict");
    let o = ckn(&["analyze", "--run", s(&out), "--config", s(&strict), "--out", s(&strict_out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let strict_map = read_json(&strict_out.join("regularity_map.json"));
    assert!(samples(&strict_map).iter().all(|x| x["prop1_pass"] == false));

    let o = ckn(&["calibrate", "--run", s(&out), "--out", s(&one)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cal = read_json(&one.join("calibration.json"));
    assert!(cal["required_epsilon1"].as_f64().unwrap() <= cal["epsilon1"].as_f64().unwrap());
}

#[test]
fn missing_snapshot_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let out = run(dir.path(), &config(ZERO));
    fs::remove_file(out.join("trajectory/snap_00003.ckn")).unwrap();
    let o = ckn(&["analyze", "--run", s(&out)]);
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).contains("snap_00003"));
}

#[test]
fn output_directory_from_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), "run.toml", &config(ZERO));
    let target = dir.path().join("from_env");
    let o = Command::new(env!("CARGO_BIN_EXE_ckn"))
        .args(["run", "--config", s(&cfg)])
        .env("CKN_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(target.join("manifest.json").exists());
}
