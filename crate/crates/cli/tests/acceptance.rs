//! Criterion 11: the `verify` exit contract and the configuration round trip.
//! Criteria 1-10 are in the core crate's `acceptance` target.

use std::fs;
use std::process::Command;

use basset::flowfield::FieldSpec;
use basset::solver::Scheme;
use basset_cli::config::{
    BoundConfig, Initial, OutputConfig, ParamsConfig, SensitivityConfig, SolverConfig, StateConfig, TimeConfig, VerifyConfig,
};
use basset_cli::{parse_config, render, RunConfig};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

fn field() -> impl Strategy<Value = FieldSpec> {
    prop_oneof![
        (1usize..4).prop_map(|dim| FieldSpec::Zero { dim }),
        (
            prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 2),
            prop::collection::vec(-1.0f64..1.0, 0..=2).prop_filter("empty or full", |v| v.len() != 1),
        )
            .prop_map(|(matrix, offset)| FieldSpec::Linear {
                matrix,
                offset,
                drift: vec![],
            }),
        (0.1f64..3.0, 0.1f64..3.0).prop_map(|(amplitude, wavenumber)| FieldSpec::TaylorGreen { amplitude, wavenumber }),
    ]
}

fn params(dim: usize) -> impl Strategy<Value = ParamsConfig> {
    let g = prop_oneof![Just(vec![]), prop::collection::vec(-10.0f64..10.0, dim)];
    let nondim = (1e-3f64..=2.0, 1e-3f64..100.0, 1e-2f64..1e4, g.clone()).prop_map(|(r, st, re, g)| ParamsConfig {
        r: Some(r),
        st: Some(st),
        re: Some(re),
        g,
        ..Default::default()
    });
    let direct = (1e-3f64..50.0, 0.0f64..1.6, 0.0f64..5.0, g).prop_map(|(mu, kappa, gamma, g)| ParamsConfig {
        mu: Some(mu),
        kappa: Some(kappa),
        gamma: Some(gamma),
        g,
        ..Default::default()
    });
    prop_oneof![nondim, direct]
}

fn state(dim: usize) -> impl Strategy<Value = StateConfig> {
    (prop::collection::vec(-10.0f64..10.0, dim), prop::collection::vec(-10.0f64..10.0, dim)).prop_map(|(y, w)| StateConfig { y, w })
}

fn run_config() -> impl Strategy<Value = RunConfig> {
    field().prop_flat_map(|f| {
        let dim = f.dim();
        let initial = prop_oneof![
            Just(None),
            state(dim).prop_map(|s| Some(Initial::One(s))),
            prop::collection::vec(state(dim), 1..4).prop_map(|v| Some(Initial::Many(v))),
        ];
        let time = (-5.0f64..5.0, 0.1f64..10.0, 2usize..5000).prop_map(|(t0, len, steps)| TimeConfig {
            t0,
            t_end: t0 + len,
            steps,
        });
        let solver = (
            prop_oneof![Just(Scheme::Marching), Just(Scheme::Picard)],
            1e-15f64..1e-6,
            1usize..200,
            prop::collection::vec(0.01f64..0.99, 0..3),
            1usize..16,
        );
        let rest = ("[a-z][a-z0-9_]{0,8}", any::<bool>(), 1e-16f64..1e-2, any::<u64>(), 1usize..64);
        (Just(f), params(dim), initial, time, solver, rest).prop_map(|(field, params, initial, time, s, r)| {
            let span = time.t_end - time.t0;
            RunConfig {
                field,
                params,
                initial,
                solver: SolverConfig {
                    scheme: s.0,
                    tol: s.1,
                    max_iter: s.2,
                    restarts: s.3.iter().map(|x| time.t0 + x * span).collect(),
                    picard_window: s.4,
                },
                time,
                output: OutputConfig { dir: r.0.into() },
                sensitivity: SensitivityConfig { inverse: r.1 },
                bound: BoundConfig { tol: r.2 },
                verify: VerifyConfig {
                    seed: r.3,
                    random_cases: r.4,
                },
            }
        })
    })
}

fn round_trip_failures(cases: u32) -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases,
        ..Config::default()
    });
    runner
        .run(&run_config(), |c| {
            prop_assert!(c.validate().is_ok(), "generated config invalid: {:?}", c.validate());
            let text = render(&c);
            let back = parse_config(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
            prop_assert_eq!(back, c);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

#[test]
fn criterion_11_cli_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let o = Command::new(env!("CARGO_BIN_EXE_basset"))
        .args(["verify", "--out", out.to_str().unwrap()])
        .output()
        .expect("binary runs");
    let report = fs::read_to_string(out.join("verify.jsonl")).unwrap_or_default();
    let lines: Vec<serde_json::Value> = report.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let all_pass = !lines.is_empty() && lines.iter().all(|l| l["pass"] == true);
    let verify_ok = o.status.code() == Some(0) && all_pass;

    let round_trip = round_trip_failures(100);
    let pass = verify_ok && round_trip.is_ok();
    println!(
        "criterion 11 {} cli_contract verify_exit={:?} report_lines={} all_pass={} round_trip_cases=100 round_trip_ok={}",
        if pass { "PASS" } else { "FAIL" },
        o.status.code(),
        lines.len(),
        all_pass,
        round_trip.is_ok()
    );
    assert!(verify_ok, "{}", String::from_utf8_lossy(&o.stdout));
    if let Err(e) = round_trip {
        panic!("{e}");
    }
}

#[test]
fn verify_exit_status_tracks_failures() {
    // an absurd solver tolerance makes checks fail; exit status must follow
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("verify");
    let o = Command::new(env!("CARGO_BIN_EXE_basset"))
        .args(["verify", "--out", out.to_str().unwrap(), "--tol", "0.5"])
        .output()
        .expect("binary runs");
    let report = fs::read_to_string(out.join("verify.jsonl")).unwrap();
    let failed = report.lines().filter(|l| l.contains("\"pass\":false")).count();
    assert!(failed > 0);
    assert_eq!(o.status.code(), Some(1));
}
