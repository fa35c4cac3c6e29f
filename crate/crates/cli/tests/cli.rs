use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use relu_landscape::probability::{optimal_locations, two_weight_config};
use relu_landscape::GaussianClassModel;
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_relu-landscape"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn write(dir: &TempDir, name: &str, body: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, body).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stderr)))
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const TWO_SAMPLE: &str = "f1,f2,y\n1,0,1\n0,1,1\n";
const FLIPPED: &str = "f1,f2,y\n1,0,1\n0,1,-1\n";
const SADDLE: &str = "t,y\n-2,1\n-1,1\n1,1\n2,-1\n3,1\n";

#[test]
fn minima_on_the_two_sample_example() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", TWO_SAMPLE);
    let pat = write(&dir, "r4.json", r#"{"I": [[1], [1]]}"#);
    let o = run(&["minima", "--dataset", s(&data), "--no-bias", "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["kind"], "unique");
    assert!(v["loss"].as_f64().unwrap().abs() < 1e-12);
    assert_eq!(v["any_genuine"], true);

    // same cell read off weights
    let w = write(&dir, "w.json", r#"{"w": [[0.5, 2.0]]}"#);
    let o2 = run(&["minima", "--dataset", s(&data), "--no-bias", "--weights", s(&w)]);
    assert_eq!(o2.stdout, o.stdout);
}

#[test]
fn flipped_labels_report_no_genuine_minimum() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", FLIPPED);
    let pat = write(&dir, "r4.json", r#"{"I": [[1], [1]]}"#);
    let out = dir.path().join("rep.json");
    let o = run(&["minima", "--dataset", s(&data), "--no-bias", "--pattern", s(&pat), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(1));
    let v: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(v["any_genuine"], false);
    let p = v["particular"].as_array().unwrap();
    assert!((p[0].as_f64().unwrap() - 1.0).abs() < 1e-12 && (p[1].as_f64().unwrap() + 1.0).abs() < 1e-12);
}

#[test]
fn input_errors_exit_2() {
    let dir = TempDir::new().unwrap();
    let pat = write(&dir, "p.json", r#"{"I": [[1]]}"#);
    let empty = write(&dir, "e.csv", "f1,y\n");
    let o = run(&["minima", "--dataset", s(&empty), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(2));

    let bad = write(&dir, "b.csv", "f1,y\n1,1\nx,-1\n");
    let o = run(&["minima", "--dataset", s(&bad), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));

    let data = write(&dir, "d.csv", TWO_SAMPLE);
    let o = run(&["minima", "--dataset", s(&data), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(2), "row count mismatch");

    let o = run(&["minima", "--dataset", s(&data), "--pattern", s(&pat), "--rank-tol", "-1"]);
    assert_eq!(o.status.code(), Some(2));

    let o = bin().env("RELU_LANDSCAPE_THREADS", "zero").arg("reproduce-appendix-b").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn saddle_sweep_reports() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", SADDLE);
    let pat = write(&dir, "p.json", r#"{"I": [[1,0],[1,0],[1,1],[1,1],[1,1]]}"#);
    let o = run(&["saddles", "--dataset", s(&data), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let subsets: Vec<Value> = v["subsets"].as_array().unwrap().iter().map(|r| r["subset"].clone()).collect();
    assert_eq!(subsets, vec![serde_json::json!([]), serde_json::json!([0]), serde_json::json!([1])]);
    let genuine: Vec<&Value> = v["subsets"].as_array().unwrap().iter().filter(|r| r["genuine"] == true).collect();
    assert!(!genuine.is_empty());
    for g in genuine {
        for c in g["certificates"].as_array().unwrap() {
            let f = |k: &str| c[k].as_f64().unwrap();
            assert!(f("delta_descent") < 0.0 && f("delta_ascent") > 0.0, "{c}");
            assert!(f("exact_descent") < 0.0 && f("exact_ascent") > 0.0, "{c}");
        }
    }
    let seq = bin().args(["saddles", "--dataset", s(&data), "--pattern", s(&pat), "--sequential"]).output().unwrap();
    assert_eq!(seq.stdout, o.stdout);
}

#[test]
fn wide_saddle_sweep_needs_a_cap() {
    let dir = TempDir::new().unwrap();
    let data = write(&dir, "d.csv", "t,y\n1,1\n2,-1\n");
    let row = format!("[{}]", vec!["1"; 13].join(","));
    let pat = write(&dir, "p.json", &format!(r#"{{"I": [{row},{row}]}}"#));
    let o = run(&["saddles", "--dataset", s(&data), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("cap"));
    let o = run(&["saddles", "--dataset", s(&data), "--pattern", s(&pat), "--max-subsets", "5"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    assert_eq!(v["examined"], 5);
    assert_eq!(v["truncated"], true);
}

#[test]
fn nondiff_sweeps() {
    let dir = TempDir::new().unwrap();
    // neuron on the hyperplane of t = 1, active on t < 1
    let data = write(&dir, "d.csv", "t,y\n-2,1\n-1,1\n0,1\n1,-1\n2,1\n");
    let pat = write(&dir, "p.json", r#"{"I": [[1],[1],[1],[0],[0]]}"#);
    let o = run(&["nondiff", "--dataset", s(&data), "--pattern", s(&pat)]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let found: Vec<(u64, u64)> = v["minima"].as_array().unwrap().iter().map(|m| (m["m"].as_u64().unwrap(), m["n"].as_u64().unwrap())).collect();
    assert!(found.contains(&(0, 3)), "{found:?}");

    // a single inactive neuron has no boundary to sit on
    let empty = write(&dir, "e.json", r#"{"I": [[0],[0],[0],[0],[0]]}"#);
    let o = run(&["nondiff", "--dataset", s(&data), "--pattern", s(&empty)]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(stdout_json(&o)["minima"].as_array().unwrap().len(), 0);
}

fn csv_rows(o: &Output) -> Vec<Vec<f64>> {
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout)
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|f| f.parse().unwrap()).collect())
        .collect()
}

#[test]
fn probability_sweep_is_deterministic_and_reaches_one() {
    let cfg = configs().join("moving_weight.json");
    let args = ["prob", "--config", s(&cfg), "--trials", "400", "--seed", "5"];
    let a = run(&args);
    let rows = csv_rows(&a);
    assert_eq!(rows.len(), 21);
    assert!(rows[20][1] >= 0.95 && rows[1][1] <= 0.05);
    for r in &rows {
        assert!(r[3] <= r[2] && r[2] <= r[4]);
    }
    let b = bin().args(args).arg("--sequential").env("RELU_LANDSCAPE_THREADS", "3").output().unwrap();
    assert_eq!(a.stdout, b.stdout);

    let emp = run(&["prob", "--config", s(&cfg), "--trials", "50", "--mc-hstar", "empirical"]);
    assert_eq!(csv_rows(&emp).len(), 21);
    let a4 = run(&["prob", "--config", s(&configs().join("four_weights.json")), "--trials", "50"]);
    assert_eq!(csv_rows(&a4).len(), 21);
}

#[test]
fn sweeping_onto_the_fixed_point_traps_surely() {
    let model = GaussianClassModel::default();
    let g = |t: f64| optimal_locations(&two_weight_config(t, 0.0), &model, 1e-10).unwrap().h_star[0].unwrap() - t;
    let (mut lo, mut hi) = (0.1, 2.0);
    assert!(g(lo) > 0.0 && g(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) > 0.0 { lo = mid } else { hi = mid }
    }
    let dir = TempDir::new().unwrap();
    let cfg = write(
        &dir,
        "c.json",
        &format!(r#"{{"normals":[1,-1],"offsets":[0,0],"sweep":{{"lo":{lo},"hi":{lo},"steps":1}},"trials":200,"loss_replicates":2}}"#),
    );
    let rows = csv_rows(&run(&["prob", "--config", s(&cfg)]));
    assert_eq!(rows.len(), 1);
    assert!((rows[0][1] - 1.0).abs() < 1e-9, "{:?}", rows[0]);
    assert_eq!(rows[0][2], 1.0);
}

#[test]
fn grid_slices() {
    let cfg = configs().join("two_sample_grid.json");
    let rows = csv_rows(&run(&["grid", "--config", s(&cfg)]));
    assert_eq!(rows.len(), 81 * 81);
    let min = rows.iter().min_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    assert_eq!((min[0], min[1]), (1.0, 1.0));
    assert!(min[2].abs() < 1e-15);
    assert!(rows.iter().filter(|r| r[0] <= 0.0 && r[1] <= 0.0).all(|r| r[2] == 1.0));

    let dir = TempDir::new().unwrap();
    let one = write(&dir, "one.json", r#"{"axes":[{"lo":0.5,"hi":0.5,"steps":1},{"lo":2,"hi":3,"steps":1}]}"#);
    assert_eq!(csv_rows(&run(&["grid", "--config", s(&one)])).len(), 1);
    let zero = write(&dir, "zero.json", r#"{"axes":[{"lo":0,"hi":1,"steps":0},{"lo":0,"hi":1,"steps":3}]}"#);
    assert_eq!(run(&["grid", "--config", s(&zero)]).status.code(), Some(2));

    // flipped labels: the best first-quadrant point hugs the w2 = 0 edge
    let flipped = write(&dir, "f.json", r#"{"flipped":true,"axes":[{"lo":-2,"hi":2,"steps":41},{"lo":-2,"hi":2,"steps":41}]}"#);
    let rows = csv_rows(&run(&["grid", "--config", s(&flipped)]));
    let best = rows.iter().filter(|r| r[0] > 0.0 && r[1] > 0.0).min_by(|a, b| a[2].total_cmp(&b[2])).unwrap();
    assert!((best[1] - 0.1).abs() < 1e-12, "{best:?}");

    // a dataset from disk gives the same surface
    let data = write(&dir, "d.csv", TWO_SAMPLE);
    let from_disk = run(&["grid", "--dataset", s(&data), "--no-bias", "--config", s(&cfg)]);
    assert_eq!(from_disk.stdout, run(&["grid", "--config", s(&cfg)]).stdout);
}

#[test]
fn reproduce_appendix_b() {
    let o = run(&["reproduce-appendix-b"]);
    assert_eq!(o.status.code(), Some(0));
    let v = stdout_json(&o);
    let orig = v["original"].as_array().unwrap();
    let names: Vec<&str> = orig.iter().map(|c| c["cell"].as_str().unwrap()).collect();
    assert_eq!(names, ["r1", "r2", "r3", "r4"]);
    let losses: Vec<f64> = orig.iter().map(|c| c["loss"].as_f64().unwrap()).collect();
    for (l, want) in losses.iter().zip([1.0, 0.5, 0.5, 0.0]) {
        assert!((l - want).abs() < 1e-12, "{losses:?}");
    }
    assert_eq!(orig[3]["any_genuine"], true);
    assert_eq!(v["flipped"][3]["any_genuine"], false);
    assert_eq!(run(&["reproduce-appendix-b"]).stdout, o.stdout);
}
