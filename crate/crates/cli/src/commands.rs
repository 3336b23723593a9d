//! The five subcommands.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use basset::bounds::{apriori_problem, gronwall_bound};
use basset::diagnostics::reverse_roundtrip;
use basset::diagnostics::suite::{run_suite, to_json_lines, SuiteOptions};
use basset::flowfield::drift_coefficients;
use basset::sensitivity::{separation_bounds, solve_variational};
use basset::solver::{solve, Trajectory};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde_json::json;

use crate::config::{ConfigError, Run, RunConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Sensitivity,
    Verify,
    Bound,
    Reverse,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(#[from] ConfigError),
    #[error("solver failed: {0}")]
    Solver(basset::Error),
    #[error("analysis failed: {0}")]
    Analysis(basset::Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Solver(_) => 3,
            CliError::Analysis(_) => 4,
            CliError::Io { .. } => 5,
        }
    }
}

/// Failing verification checks exit with this code.
pub const EXIT_CHECKS_FAILED: i32 = 1;

fn solver_err(e: basset::Error) -> CliError {
    use basset::Error::*;
    match e {
        NoConvergence { .. } | Divergence { .. } | ContractionViolated { .. } | Evaluation { .. } => CliError::Solver(e),
        other => CliError::Analysis(other),
    }
}

#[derive(Debug, Default)]
pub struct Outcome {
    pub stdout: String,
    pub files: Vec<PathBuf>,
    pub failed_checks: usize,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        if self.failed_checks > 0 {
            EXIT_CHECKS_FAILED
        } else {
            0
        }
    }
}

/// Collects output files and removes them if the run fails.
struct Output {
    dir: PathBuf,
    created_dir: bool,
    written: Vec<PathBuf>,
}

impl Output {
    fn open(dir: &Path) -> Result<Self, CliError> {
        let created_dir = !dir.exists();
        fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.into(),
            source,
        })?;
        Ok(Output {
            dir: dir.into(),
            created_dir,
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let path = self.dir.join(name);
        self.written.push(path.clone());
        fs::write(&path, contents).map_err(|source| CliError::Io { path, source })
    }

    fn discard(self) {
        for p in &self.written {
            let _ = fs::remove_file(p);
        }
        if self.created_dir {
            let _ = fs::remove_dir(&self.dir);
        }
    }
}

fn row(values: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in values.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        write!(s, "{v}").expect("string write");
    }
    s.push('\n');
    s
}

pub fn trajectory_csv(tr: &Trajectory) -> String {
    let n = tr.dim();
    let mut out = String::from("t");
    for k in 1..=n {
        write!(out, ",y{k}").expect("string write");
    }
    for k in 1..=n {
        write!(out, ",w{k}").expect("string write");
    }
    out.push('\n');
    for (t, s) in tr.grid.points().iter().zip(&tr.states) {
        out += &row(std::iter::once(*t).chain(s.y.iter().copied()).chain(s.w.iter().copied()));
    }
    out
}

/// One row per matrix row and time: `t,row,c1..c2n`.
pub fn matrices_csv(times: &[f64], mats: &[DMatrix<f64>]) -> String {
    let cols = mats.first().map_or(0, |m| m.ncols());
    let mut out = String::from("t,row");
    for k in 1..=cols {
        write!(out, ",c{k}").expect("string write");
    }
    out.push('\n');
    for (t, m) in times.iter().zip(mats) {
        for (i, r) in m.row_iter().enumerate() {
            out += &row([*t, i as f64].into_iter().chain(r.iter().copied()));
        }
    }
    out
}

fn solve_all(run: &Run) -> Result<Vec<Trajectory>, CliError> {
    run.initial
        .par_iter()
        .map(|ic| solve(run.field.as_ref(), &run.params, ic, run.t0, run.t_end, run.steps, &run.solver).map_err(solver_err))
        .collect()
}

fn simulate(run: &Run, out: &mut Output, o: &mut Outcome) -> Result<(), CliError> {
    for (i, tr) in solve_all(run)?.iter().enumerate() {
        out.write(&format!("trajectory_{i:03}.csv"), &trajectory_csv(tr))?;
        writeln!(o.stdout, "particle {i}: y(T) = {:?}, w(T) = {:?}", tr.last().y.as_slice(), tr.last().w.as_slice()).expect("string write");
    }
    Ok(())
}

fn sensitivity(run: &Run, cfg: &RunConfig, out: &mut Output, o: &mut Outcome) -> Result<(), CliError> {
    let trajectories = solve_all(run)?;
    let results = trajectories
        .par_iter()
        .map(|tr| {
            let mut sens = solve_variational(tr, run.field.as_ref(), &run.params)?;
            sens.attach_inverse()?;
            let (m, mt) = separation_bounds(&sens)?;
            let err = sens.inverse_identity_error()?;
            Ok((sens, m, mt, err))
        })
        .collect::<Result<Vec<_>, basset::Error>>()
        .map_err(solver_err)?;
    let mut summary = Vec::new();
    for (i, (sens, m, mt, err)) in results.iter().enumerate() {
        let times = sens.grid.points();
        out.write(&format!("dphi_{i:03}.csv"), &matrices_csv(times, &sens.dphi))?;
        if cfg.sensitivity.inverse {
            let inv = sens.dphi_inv.as_ref().expect("inverse attached");
            out.write(&format!("dphi_inv_{i:03}.csv"), &matrices_csv(times, inv))?;
        }
        summary.push(json!({"particle": i, "M": m, "M_tilde": mt, "inverse_identity_error": err}));
        writeln!(o.stdout, "particle {i}: M = {m}, M_tilde = {mt}").expect("string write");
    }
    let text = serde_json::to_string_pretty(&json!({ "particles": summary })).expect("json") + "\n";
    out.write("summary.json", &text)
}

fn verify(cfg: &RunConfig, out: &mut Output, o: &mut Outcome) -> Result<(), CliError> {
    let opts = SuiteOptions {
        seed: cfg.verify.seed,
        random_cases: cfg.verify.random_cases,
        tol: cfg.solver.tol,
    };
    let reports = run_suite(&opts);
    out.write("verify.jsonl", &to_json_lines(&reports))?;
    for r in &reports {
        writeln!(o.stdout, "{} {}", if r.pass { "PASS" } else { "FAIL" }, r.name).expect("string write");
    }
    o.failed_checks = reports.iter().filter(|r| !r.pass).count();
    writeln!(o.stdout, "{} of {} checks passed", reports.len() - o.failed_checks, reports.len()).expect("string write");
    Ok(())
}

fn bound(run: &Run, cfg: &RunConfig, o: &mut Outcome) -> Result<(), CliError> {
    let b = run
        .field
        .bounds(&run.params)
        .ok_or_else(|| CliError::Analysis(basset::Error::Missing("field provides no coefficient bounds".into())))?;
    let zero = DVector::zeros(run.field.dim());
    let (a0, b0, _) = drift_coefficients(run.field.as_ref(), &run.params, &zero, run.t0).map_err(CliError::Analysis)?;
    writeln!(o.stdout, "L_b = {}, A0 = {}, B0 = {}", b.l_b, a0.norm(), b0.norm()).expect("string write");
    for (i, ic) in run.initial.iter().enumerate() {
        let prob = apriori_problem(&run.params, b.l_b, a0.norm(), b0.norm(), ic, run.t0, run.t_end).map_err(CliError::Analysis)?;
        let g = gronwall_bound(&prob, prob.horizon, cfg.bound.tol).map_err(CliError::Analysis)?;
        writeln!(o.stdout, "particle {i}: C_Y = {}, C_W = {}", g.value, g.value).expect("string write");
        let trace: Vec<String> = g.trace.iter().map(|t| t.to_string()).collect();
        writeln!(o.stdout, "particle {i}: a = {}, trace = [{}]", prob.a, trace.join(", ")).expect("string write");
    }
    Ok(())
}

fn reverse(run: &Run, o: &mut Outcome) -> Result<(), CliError> {
    let results = run
        .initial
        .par_iter()
        .map(|ic| reverse_roundtrip(run.field.as_ref(), &run.params, ic, run.t0, run.t_end, run.steps, &run.solver))
        .collect::<Result<Vec<_>, _>>()
        .map_err(solver_err)?;
    for (i, r) in results.iter().enumerate() {
        writeln!(
            o.stdout,
            "particle {i}: position_error = {}, velocity_error = {}, method = {:?}, newton_iterations = {}",
            r.position_error, r.velocity_error, r.method, r.newton_iterations
        )
        .expect("string write");
    }
    Ok(())
}

/// Runs `command`; files go to `cfg.output.dir` and are removed again on failure.
pub fn run(cfg: &RunConfig, command: Command) -> Result<Outcome, CliError> {
    let run = cfg.build()?;
    let mut o = Outcome::default();
    match command {
        Command::Bound => bound(&run, cfg, &mut o)?,
        Command::Reverse => reverse(&run, &mut o)?,
        _ => {
            let mut out = Output::open(&cfg.output.dir)?;
            let result = match command {
                Command::Simulate => simulate(&run, &mut out, &mut o),
                Command::Sensitivity => sensitivity(&run, cfg, &mut out, &mut o),
                _ => verify(cfg, &mut out, &mut o),
            };
            if let Err(e) = result {
                out.discard();
                return Err(e);
            }
            o.files = out.written;
        }
    }
    Ok(o)
}
