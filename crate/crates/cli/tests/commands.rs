use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn basset(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basset")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

const TG: &str = r#"
[field]
kind = "taylor_green"

[params]
R = 0.6666666666666666
St = 0.1
Re = 100

[[initial]]
y = [1.0, 1.0]
w = [0.0, 0.0]

[[initial]]
y = [0.2, -0.4]
w = [0.1, 0.3]

[[initial]]
y = [-1.0, 0.5]
w = [0.0, -0.2]

[time]
T = 1.0
N = 64
"#;

#[test]
fn simulate_rest_state() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[params]\nR = 1\nSt = 1\nRe = 1\n[initial]\ny = [0.5, -0.25]\nw = [0.0, 0.0]\n[time]\nN = 4\n",
    );
    let out = tmp.path().join("out");
    let o = basset(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("trajectory_000.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,y1,y2,w1,w2");
    assert_eq!(lines.len(), 6);
    let states: Vec<&str> = lines[1..].iter().map(|l| l.split_once(',').unwrap().1).collect();
    assert!(states.iter().all(|s| *s == "0.5,-0.25,0,0"), "{states:?}");
}

#[test]
fn batch_output_is_independent_of_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TG);
    let mut runs = Vec::new();
    for threads in ["1", "4"] {
        let out = tmp.path().join(format!("out{threads}"));
        let o = basset(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap(), "--threads", threads]);
        assert_eq!(o.status.code(), Some(0));
        runs.push((0..3).map(|i| fs::read(out.join(format!("trajectory_{i:03}.csv"))).unwrap()).collect::<Vec<_>>());
    }
    assert_eq!(runs[0], runs[1]);
}

#[test]
fn full_precision_values_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TG);
    let out = tmp.path().join("out");
    assert_eq!(basset(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]).status.code(), Some(0));
    let csv = fs::read_to_string(out.join("trajectory_001.csv")).unwrap();
    for field in csv.lines().nth(10).unwrap().split(',') {
        let v: f64 = field.parse().unwrap();
        assert_eq!(v.to_string(), field);
    }
}

#[test]
fn sensitivity_writes_blocks_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TG}\n[sensitivity]\ninverse = true\n"));
    let out = tmp.path().join("out");
    let o = basset(&["sensitivity", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let dphi = fs::read_to_string(out.join("dphi_000.csv")).unwrap();
    assert_eq!(dphi.lines().next().unwrap(), "t,row,c1,c2,c3,c4");
    assert_eq!(dphi.lines().count(), 1 + 65 * 4);
    // identity at t0
    assert_eq!(dphi.lines().nth(1).unwrap(), "0,0,1,0,0,0");
    assert!(out.join("dphi_inv_002.csv").exists());
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let particles = summary["particles"].as_array().unwrap();
    assert_eq!(particles.len(), 3);
    for p in particles {
        assert!(p["M"].as_f64().unwrap() >= 1.0);
        assert!(p["M_tilde"].as_f64().unwrap() >= 1.0);
    }
}

#[test]
fn bound_without_drag_or_memory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[params]\nmu = 0\nkappa = 0\ngamma = 0\n[initial]\ny = [3.0, 4.0]\nw = [0.0, 1.0]\n",
    );
    let o = basset(&["bound", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    // zero field: L_b = A0 = B0 = 0, so a = |y0| + |w0| and the unit-order kernel gives e^T
    assert!(text.contains("particle 0: a = 6,"), "{text}");
    let c: f64 = text.split("C_Y = ").nth(1).unwrap().split(',').next().unwrap().parse().unwrap();
    assert!((c - 6.0 * 1f64.exp()).abs() < 1e-12, "{c}");
}

#[test]
fn reverse_prints_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), TG);
    let o = basset(&["reverse", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(text.contains("method = Shooting"));
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[params]\nR = 1\nSt = 1\nRe = 1\nmu = 2\n");
    let o = basset(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ambiguous"));
    assert_eq!(basset(&["simulate"]).status.code(), Some(2));
    let cfg = write_config(tmp.path(), "[params]\nR = 1\nSt = 1\nRe = 1\n[time]\nN = 4\nbogus = 1\n");
    let o = basset(&["simulate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 7"));
}

#[test]
fn solver_failure_exits_3_and_leaves_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"
[field]
kind = "linear"
matrix = [[30.0]]

[params]
R = 2
St = 1
Re = 1

[[initial]]
y = [0.0]
w = [0.0]

[[initial]]
y = [1.0]
w = [0.0]

[time]
T = 30.0
N = 3000
"#,
    );
    let out = tmp.path().join("out");
    let o = basset(&["simulate", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists());
}

#[test]
fn picard_contraction_failure_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{TG}\n[solver]\nscheme = \"picard\"\npicard_window = 64\n"));
    let o = basset(&["simulate", "--config", &cfg, "--out", tmp.path().join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
}
