//! Criteria 1-10 at their pinned tolerances; criterion 11 lives with the CLI.
//!
//! Run with `cargo test -p basset --test acceptance -- --nocapture`.

use basset::diagnostics::suite::{checks, run_check, CheckReport, SuiteOptions};

fn line(r: &CheckReport) -> String {
    let label = r.criterion.map_or("-".to_string(), |c| c.to_string());
    let verdict = if r.pass { "PASS" } else { "FAIL" };
    let detail = match &r.error {
        Some(e) => format!("error: {e}"),
        None => r
            .metrics
            .iter()
            .map(|(k, v)| format!("{k}={v:.3e}"))
            .collect::<Vec<_>>()
            .join(" "),
    };
    format!("criterion {label:>2} {verdict} {} {detail}", r.name)
}

#[test]
fn acceptance_criteria_1_to_10() {
    let o = SuiteOptions::default();
    let reports: Vec<CheckReport> = checks()
        .into_iter()
        .map(|(name, f)| {
            let start = std::time::Instant::now();
            let r = run_check(name, f, &o);
            println!("{}  ({:.1}s)", line(&r), start.elapsed().as_secs_f64());
            r
        })
        .collect();
    let criteria: Vec<u8> = reports.iter().filter_map(|r| r.criterion).collect();
    assert_eq!(criteria, (1..=10).collect::<Vec<_>>());
    let failed: Vec<&str> = reports.iter().filter(|r| !r.pass).map(|r| r.name.as_str()).collect();
    assert!(failed.is_empty(), "failed: {failed:?}");
}
