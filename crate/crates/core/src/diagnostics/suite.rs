//! The verification suite: one self-contained check per property, each
//! reported as a JSON object with its inputs digest, metrics and tolerances.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use statrs::function::gamma::ln_gamma;

use super::*;
use crate::bounds::{apriori_solution_bound, gronwall_bound, GronwallProblem};
use crate::flowfield::{drift_coefficients, make_field, verify_field_derivatives, FieldSpec};
use crate::fractional::{basset_integral_path, caputo_half_derivative, rl_half_derivative, wallis};
use crate::sensitivity::{fd_jacobian, separation_bounds, solve_variational};
use crate::solver::Scheme;

/// `e^pi (1 + erf sqrt(pi))`: the half-order series with `a = b = t = 1`.
const HALF_ORDER_ORACLE: f64 = 45.99932608938285536627405318270019755287;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<u8>,
    /// sha256 of the canonical JSON of the check inputs.
    pub inputs_digest: String,
    pub metrics: BTreeMap<String, f64>,
    /// `<metric>_max` / `<metric>_min` limits.
    pub tolerances: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Randomized cases for the regularity dichotomy.
    pub random_cases: usize,
    /// Solver fixed-point tolerance.
    pub tol: f64,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            seed: 20240917,
            random_cases: 24,
            tol: 1e-12,
        }
    }
}

pub fn digest(inputs: &Value) -> String {
    // serde_json maps are sorted, so this is canonical
    let bytes = serde_json::to_vec(inputs).expect("json values serialize");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

struct Check {
    report: CheckReport,
}

impl Check {
    fn new(name: &str, criterion: Option<u8>, inputs: Value) -> Self {
        Check {
            report: CheckReport {
                name: name.into(),
                criterion,
                inputs_digest: digest(&inputs),
                metrics: BTreeMap::new(),
                tolerances: BTreeMap::new(),
                pass: true,
                error: None,
            },
        }
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.report.metrics.insert(key.into(), value);
    }

    fn at_most(&mut self, key: &str, value: f64, limit: f64) {
        self.metric(key, value);
        self.report.tolerances.insert(format!("{key}_max"), limit);
        self.report.pass &= value <= limit;
    }

    fn at_least(&mut self, key: &str, value: f64, limit: f64) {
        self.metric(key, value);
        self.report.tolerances.insert(format!("{key}_min"), limit);
        self.report.pass &= value >= limit;
    }

    fn finish(self) -> CheckReport {
        self.report
    }
}

fn opts_with(o: &SuiteOptions, scheme: Scheme) -> SolverOptions {
    SolverOptions {
        scheme,
        tol: o.tol,
        ..Default::default()
    }
}

fn taylor_green() -> Box<dyn FlowField> {
    make_field(&FieldSpec::TaylorGreen {
        amplitude: 1.0,
        wavenumber: 1.0,
    })
    .expect("valid field")
}

fn benchmark() -> (Box<dyn FlowField>, Params, State) {
    let p = Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::zeros(2)).expect("valid parameters");
    let ic = State::from_slices(&[1.0, 1.0], &[0.0, 0.0]).expect("valid state");
    (taylor_green(), p, ic)
}

fn linear_spec() -> FieldSpec {
    FieldSpec::Linear {
        matrix: vec![vec![0.1, 1.0], vec![-1.0, 0.2]],
        offset: vec![0.3, -0.1],
        drift: vec![0.05, 0.0],
    }
}

pub fn quadrature(_: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("quadrature", Some(1), json!({"exact": [4, 4096], "sqrt": [1024, 4096]}));
    let exact = |n| -> Result<f64> {
        let path = SampledPath::scalar(TimeGrid::uniform(0.0, 1.0, n)?, |s| s)?;
        Ok((basset_integral(&path, n)?[0] - 4.0 / 3.0).abs())
    };
    let sqrt = |n| -> Result<f64> {
        let path = SampledPath::scalar(TimeGrid::uniform(0.0, 1.0, n)?, f64::sqrt)?;
        Ok((basset_integral(&path, n)?[0] - PI / 2.0).abs())
    };
    c.at_most("linear_error_n4", exact(4)?, 1e-13);
    c.at_most("linear_error_n4096", exact(4096)?, 1e-13);
    let (coarse, fine) = (sqrt(1024)?, sqrt(4096)?);
    c.at_most("sqrt_error_n4096", fine, 1e-6);
    c.at_least("sqrt_order", (coarse / fine).log2() / 2.0, 1.0);
    Ok(c.finish())
}

pub fn fractional_identities(_: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("fractional_identities", Some(2), json!({"boundary_n": 256, "rl_n": 4096}));
    let grid = TimeGrid::uniform(0.0, 1.0, 256)?;
    let f = SampledPath::scalar(grid.clone(), |t| 1.5 + t * t - t.sin())?;
    let mut worst: f64 = 0.0;
    for n in 1..=256 {
        let gap = rl_half_derivative(&f, n)?[0] - caputo_half_derivative(&f, n)?[0];
        let term = 1.5 / (PI * grid.points()[n]).sqrt();
        worst = worst.max((gap - term).abs() / term);
    }
    c.at_most("boundary_term_rel_error", worst, 1e-13);
    let root = SampledPath::scalar(TimeGrid::uniform(0.0, 1.0, 4096)?, f64::sqrt)?;
    let rl = rl_half_derivative(&root, 4096)?[0];
    c.at_most("rl_sqrt_error", (rl - PI.sqrt() / 2.0).abs(), 1e-6);
    Ok(c.finish())
}

pub fn uniqueness(o: &SuiteOptions) -> Result<CheckReport> {
    let (f, p, ic) = benchmark();
    let mut c = Check::new("uniqueness", Some(3), json!({"field": "taylor_green", "n": 1024, "restart": 0.5, "tol": o.tol}));
    let run = |n, opts: &SolverOptions| solve(f.as_ref(), &p, &ic, 0.0, 1.0, n, opts);
    let march = run(1024, &opts_with(o, Scheme::Marching))?;
    let picard = run(1024, &opts_with(o, Scheme::Picard))?;
    c.at_most("marching_vs_picard", scheme_agreement(&march, &picard)?, 1e-6);
    let restarted = run(
        1024,
        &SolverOptions {
            restarts: vec![0.5],
            ..opts_with(o, Scheme::Marching)
        },
    )?;
    c.at_most("restart_distance", scheme_agreement(&march, &restarted)?, 5e-6);
    let d1 = refinement_distance(&run(256, &opts_with(o, Scheme::Marching))?, &run(512, &opts_with(o, Scheme::Marching))?)?;
    let d2 = refinement_distance(&run(512, &opts_with(o, Scheme::Marching))?, &march)?;
    c.metric("refinement_256_512", d1);
    c.at_most("refinement_ratio", d2 / d1, 1.0);
    Ok(c.finish())
}

pub fn apriori(o: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("apriori_bound", Some(4), json!({"cases": 4, "t_end": 1.0, "n": 256, "tol": o.tol}));
    let g = DVector::from_vec(vec![0.0, -1.0]);
    let cases: Vec<(FieldSpec, Params, State)> = vec![
        (
            FieldSpec::TaylorGreen {
                amplitude: 1.0,
                wavenumber: 1.0,
            },
            Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::zeros(2))?,
            State::from_slices(&[1.0, 1.0], &[0.0, 0.0])?,
        ),
        (
            FieldSpec::TaylorGreen {
                amplitude: 1.0,
                wavenumber: 1.0,
            },
            Params::derive(1.2, 1.0, 30.0, g.clone())?,
            State::from_slices(&[0.2, -0.5], &[0.5, 0.1])?,
        ),
        (linear_spec(), Params::derive(0.5, 0.5, 20.0, g.clone())?, State::from_slices(&[1.0, 0.0], &[0.0, 0.3])?),
        (FieldSpec::Zero { dim: 2 }, Params::derive(1.5, 2.0, 10.0, g)?, State::from_slices(&[0.0, 0.0], &[1.0, 0.0])?),
    ];
    let mut worst: f64 = 0.0;
    for (spec, p, ic) in &cases {
        let f = make_field(spec)?;
        let b = f
            .bounds(p)
            .ok_or_else(|| Error::Missing("built-in field without coefficient bounds".into()))?;
        let zero = DVector::zeros(2);
        let (a0, b0, _) = drift_coefficients(f.as_ref(), p, &zero, 0.0)?;
        let (cy, cw) = apriori_solution_bound(p, b.l_b, a0.norm(), b0.norm(), ic, 0.0, 1.0)?;
        let tr = solve(f.as_ref(), p, ic, 0.0, 1.0, 256, &opts_with(o, Scheme::Marching))?;
        worst = worst.max(tr.sup_y() / cy).max(tr.sup_w() / cw);
    }
    c.at_most("sup_over_bound", worst, 1.0);
    let exp_case = GronwallProblem {
        a: 1.0,
        terms: vec![(2.0, 1.0)],
        horizon: 1.0,
    };
    let v = gronwall_bound(&exp_case, 1.0, 1e-16)?.value;
    c.at_most("exponential_error", (v - 2f64.exp()).abs(), 1e-8);
    let half = GronwallProblem {
        a: 1.0,
        terms: vec![(1.0, 0.5)],
        horizon: 1.0,
    };
    let v = gronwall_bound(&half, 1.0, 1e-17)?.value;
    c.at_most("half_order_rel_error", (v - HALF_ORDER_ORACLE).abs() / HALF_ORDER_ORACLE, 1e-10);
    Ok(c.finish())
}

#[derive(Debug, Clone, Serialize)]
struct DichotomyCase {
    field: FieldSpec,
    r: f64,
    st: f64,
    re: f64,
    g: Vec<f64>,
    y0: Vec<f64>,
    w0: Vec<f64>,
}

fn sample_cases(o: &SuiteOptions) -> Result<Vec<DichotomyCase>> {
    let mut rng = ChaCha8Rng::seed_from_u64(o.seed);
    let mut cases = Vec::with_capacity(o.random_cases);
    while cases.len() < o.random_cases {
        let strong = cases.len() % 2 == 0;
        let field = match rng.gen_range(0..3) {
            0 => FieldSpec::TaylorGreen {
                amplitude: rng.gen_range(0.5..1.5),
                wavenumber: rng.gen_range(0.5..1.5),
            },
            1 => FieldSpec::Linear {
                matrix: (0..2).map(|_| (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                offset: (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect(),
                drift: vec![],
            },
            _ => FieldSpec::Zero { dim: 2 },
        };
        // keep away from R = 2/3, where the buoyancy and inertia terms cancel
        let r = if rng.gen_bool(0.5) {
            rng.gen_range(0.2..0.5)
        } else {
            rng.gen_range(0.9..1.8)
        };
        let case = DichotomyCase {
            field,
            r,
            st: rng.gen_range(0.5..2.0),
            re: rng.gen_range(10.0..200.0),
            g: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            y0: (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            w0: if strong {
                vec![0.0, 0.0]
            } else {
                let (m, a) = (rng.gen_range(0.5..1.5), rng.gen_range(0.0..2.0 * PI));
                vec![m * a.cos(), m * a.sin()]
            },
        };
        if strong {
            // a strong start needs a visible acceleration to fit
            let f = make_field(&case.field)?;
            let p = Params::derive(case.r, case.st, case.re, DVector::from_vec(case.g.clone()))?;
            let (_, b, _) = drift_coefficients(f.as_ref(), &p, &DVector::from_vec(case.y0.clone()), 0.0)?;
            if b.norm() < 0.2 {
                continue;
            }
        }
        cases.push(case);
    }
    Ok(cases)
}

pub fn dichotomy(o: &SuiteOptions) -> Result<CheckReport> {
    let cases = sample_cases(o)?;
    let mut c = Check::new("strong_solution_dichotomy", Some(5), json!({"cases": cases, "tol": o.tol}));
    let dts = default_offsets();
    let reports: Vec<(bool, f64, RegularityReport)> = cases
        .par_iter()
        .map(|k| {
            let f = make_field(&k.field)?;
            let p = Params::derive(k.r, k.st, k.re, DVector::from_vec(k.g.clone()))?;
            let ic = State::from_slices(&k.y0, &k.w0)?;
            let w0 = ic.w.norm();
            let r = differentiability_test(f.as_ref(), &p, &ic, 0.0, &dts, &opts_with(o, Scheme::Marching))?;
            Ok((w0 == 0.0, w0, r))
        })
        .collect::<Result<_>>()?;
    let (mut strong_dev, mut singular_dev, mut prefactor_err, mut correct): (f64, f64, f64, usize) = (0.0, 0.0, 0.0, 0);
    for (strong, w0, r) in &reports {
        let expected = if *strong {
            Classification::DifferentiableAtT0
        } else {
            Classification::SingularAtT0
        };
        if r.classification == expected && !r.inconclusive {
            correct += 1;
        }
        if *strong {
            strong_dev = strong_dev.max(r.fitted_exponent.abs());
        } else {
            singular_dev = singular_dev.max((r.fitted_exponent + 0.5).abs());
            prefactor_err = prefactor_err.max((r.prefactor - 2.0 * w0).abs() / (2.0 * w0));
        }
    }
    c.at_least("cases", reports.len() as f64, 20.0);
    c.at_least("accuracy", correct as f64 / reports.len() as f64, 1.0);
    c.at_most("strong_exponent_deviation", strong_dev, 0.05);
    c.at_most("singular_exponent_deviation", singular_dev, 0.05);
    c.at_most("prefactor_rel_error", prefactor_err, 0.1);
    Ok(c.finish())
}

pub fn holder(o: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("holder_regularity", Some(6), json!({"n": 4096, "away_from": 0.25, "tol": o.tol}));
    let n = 1 << 12;
    let zero = make_field(&FieldSpec::Zero { dim: 1 })?;
    let p = Params::from_coefficients(1.0, 1.0, 0.0, DVector::zeros(1))?;
    let ic = State::from_slices(&[0.0], &[1.0])?;
    let tr = solve(zero.as_ref(), &p, &ic, 0.0, 1.0, n, &opts_with(o, Scheme::Marching))?;
    let integral = basset_integral_path(&tr.w_path());
    let e = holder_test(&integral)?.exponent().unwrap_or(f64::NAN);
    c.at_least("integral_exponent", e, 0.4);
    c.at_most("integral_exponent_deviation", (e - 0.5).abs(), 0.1);
    let away = subpath(&tr.w_path(), n / 4, n)?;
    let e = holder_test(&away)?.exponent().unwrap_or(f64::NAN);
    c.at_most("w_exponent_deviation", (e - 1.0).abs(), 0.1);
    let (f, p, ic) = benchmark();
    let tr = solve(f.as_ref(), &p, &ic, 0.0, 1.0, n, &opts_with(o, Scheme::Marching))?;
    let samples = zero_limit_test(&tr)?;
    c.at_most("zero_limit_final", samples.last().map_or(f64::NAN, |s| s.1), 1e-3);
    Ok(c.finish())
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

pub fn sensitivity(o: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("sensitivity_vs_fd", Some(7), json!({"h": 1e-6, "n": 1024, "t_end": 1.0, "tol": o.tol}));
    let cases = [
        ("linear", linear_spec(), Params::derive(0.5, 0.5, 20.0, DVector::zeros(2))?, State::from_slices(&[1.0, 0.0], &[0.0, 0.3])?),
        (
            "taylor_green",
            FieldSpec::TaylorGreen {
                amplitude: 1.0,
                wavenumber: 1.0,
            },
            Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::zeros(2))?,
            State::from_slices(&[1.0, 1.0], &[0.1, -0.2])?,
        ),
    ];
    for (name, spec, p, ic) in cases {
        let f = make_field(&spec)?;
        let opts = opts_with(o, Scheme::Marching);
        let tr = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 1024, &opts)?;
        let sens = solve_variational(&tr, f.as_ref(), &p)?;
        let fd = fd_jacobian(f.as_ref(), &p, &ic, 0.0, 1.0, 1024, 1e-6, &opts)?;
        let rel = max_abs(&(&sens.dphi[1024] - &fd.central)) / max_abs(&fd.central);
        c.at_most(&format!("{name}_rel_error"), rel, 1e-4);
    }
    Ok(c.finish())
}

pub fn inverse(o: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("inverse_and_separation", Some(8), json!({"n": 1024, "delta0": 1e-3, "tol": o.tol}));
    let opts = opts_with(o, Scheme::Marching);
    let specs = [
        FieldSpec::Zero { dim: 2 },
        linear_spec(),
        FieldSpec::TaylorGreen {
            amplitude: 1.0,
            wavenumber: 1.0,
        },
    ];
    let p = Params::derive(2.0 / 3.0, 0.1, 100.0, DVector::from_vec(vec![0.0, -1.0]))?;
    let ic = State::from_slices(&[1.0, 1.0], &[0.1, -0.2])?;
    let mut worst: f64 = 0.0;
    for spec in &specs {
        let f = make_field(spec)?;
        let tr = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 1024, &opts)?;
        let mut sens = solve_variational(&tr, f.as_ref(), &p)?;
        sens.attach_inverse()?;
        worst = worst.max(sens.inverse_identity_error()?);
    }
    c.at_most("inverse_identity_error", worst, 1e-6);

    // particle pair on the benchmark; M and M~ taken over the segment joining them
    let (f, p, x1) = benchmark();
    let dx = DVector::from_vec(vec![1.0, 1.0, 1.0, 1.0]) * (1e-3 / 2.0);
    let x2 = State::from_stacked(&(x1.stacked() + &dx));
    let mid = State::from_stacked(&(x1.stacked() + &dx * 0.5));
    let mut runs = Vec::new();
    let (mut m, mut mt): (f64, f64) = (0.0, 0.0);
    for x in [&x1, &mid, &x2] {
        let tr = solve(f.as_ref(), &p, x, 0.0, 1.0, 1024, &opts)?;
        let mut sens = solve_variational(&tr, f.as_ref(), &p)?;
        sens.attach_inverse()?;
        let (a, b) = separation_bounds(&sens)?;
        m = m.max(a);
        mt = mt.max(b);
        runs.push(tr);
    }
    let d0 = dx.norm();
    let (mut ceiling, mut floor): (f64, f64) = (0.0, f64::INFINITY);
    for (a, b) in runs[0].states.iter().zip(&runs[2].states) {
        let d = (b.stacked() - a.stacked()).norm();
        ceiling = ceiling.max(d / (m * d0));
        floor = floor.min(d * mt / d0);
    }
    c.metric("m", m);
    c.metric("m_tilde", mt);
    c.at_most("separation_over_ceiling", ceiling, 1.0);
    c.at_least("separation_over_floor", floor, 1.0);
    Ok(c.finish())
}

pub fn reversal(o: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("time_reversal", Some(9), json!({"memory_n": [1024, 2048], "memoryless_n": 1024, "tol": o.tol}));
    let opts = opts_with(o, Scheme::Marching);
    let (f, p, _) = benchmark();
    let ic = State::from_slices(&[1.0, 1.0], &[0.1, -0.2])?;
    let err = |n| -> Result<f64> {
        let r = reverse_roundtrip(f.as_ref(), &p, &ic, 0.0, 1.0, n, &opts)?;
        Ok(r.position_error.max(r.velocity_error))
    };
    let (e1, e2) = (err(1024)?, err(2048)?);
    c.at_most("memory_error_n1024", e1, 1e-4);
    c.at_most("memory_error_n2048", e2, (e1 / 2.0).max(1e-10));
    let lin = make_field(&linear_spec())?;
    let p0 = Params::from_coefficients(2.0, 0.0, 0.0, DVector::from_vec(vec![0.0, -1.0]))?;
    let r = reverse_roundtrip(lin.as_ref(), &p0, &ic, 0.0, 1.0, 1024, &opts)?;
    c.at_most("memoryless_error", r.position_error.max(r.velocity_error), 1e-8);
    Ok(c.finish())
}

pub fn wallis_check(_: &SuiteOptions) -> Result<CheckReport> {
    const K: u64 = 10_000;
    let mut c = Check::new("wallis", Some(10), json!({"k_max": K}));
    c.at_most("a0_error", (wallis(0) - 2.0).abs(), 0.0);
    c.at_most("a1_error", (wallis(1) - PI / 2.0).abs(), 0.0);
    let a: Vec<f64> = (0..=K).map(wallis).collect();
    let (mut rec, mut oracle, mut scaled): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for k in 0..=K as usize {
        let kf = k as f64;
        if k >= 2 {
            rec = rec.max((a[k] - kf / (kf + 1.0) * a[k - 2]).abs() / a[k]);
        }
        // a_k = B(k/2 + 1, 1/2)
        let beta = (ln_gamma(kf / 2.0 + 1.0) + ln_gamma(0.5) - ln_gamma(kf / 2.0 + 1.5)).exp();
        oracle = oracle.max((a[k] - beta).abs() / beta);
        scaled = scaled.max(kf.sqrt() * a[k]);
    }
    c.at_most("recurrence_rel_error", rec, 4.0 * f64::EPSILON);
    c.at_most("beta_oracle_rel_error", oracle, 1e-10);
    c.at_most("sqrt_k_a_k", scaled, 2.6);
    Ok(c.finish())
}

pub fn field_derivatives(_: &SuiteOptions) -> Result<CheckReport> {
    let mut c = Check::new("field_derivatives", None, json!({"h": 1e-4, "tolerance": 1e-6}));
    let samples: Vec<(DVector<f64>, f64)> = vec![
        (DVector::from_vec(vec![0.3, -0.7]), 0.0),
        (DVector::from_vec(vec![1.1, 0.4]), 0.5),
        (DVector::from_vec(vec![-2.0, 2.5]), 1.0),
    ];
    for (name, spec) in [
        ("zero", FieldSpec::Zero { dim: 2 }),
        ("linear", linear_spec()),
        (
            "taylor_green",
            FieldSpec::TaylorGreen {
                amplitude: 1.0,
                wavenumber: 1.0,
            },
        ),
    ] {
        let f = make_field(&spec)?;
        let r = verify_field_derivatives(f.as_ref(), &samples, 1e-4, 1e-6);
        c.at_most(&format!("{name}_max_discrepancy"), r.max_discrepancy, 1e-6);
    }
    Ok(c.finish())
}

type CheckFn = fn(&SuiteOptions) -> Result<CheckReport>;

pub fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("quadrature", quadrature),
        ("fractional_identities", fractional_identities),
        ("uniqueness", uniqueness),
        ("apriori_bound", apriori),
        ("strong_solution_dichotomy", dichotomy),
        ("holder_regularity", holder),
        ("sensitivity_vs_fd", sensitivity),
        ("inverse_and_separation", inverse),
        ("time_reversal", reversal),
        ("wallis", wallis_check),
        ("field_derivatives", field_derivatives),
    ]
}

/// Runs a check; an error becomes a failing report.
pub fn run_check(name: &str, check: CheckFn, o: &SuiteOptions) -> CheckReport {
    check(o).unwrap_or_else(|e| CheckReport {
        name: name.into(),
        criterion: None,
        inputs_digest: digest(&json!({"name": name})),
        metrics: BTreeMap::new(),
        tolerances: BTreeMap::new(),
        pass: false,
        error: Some(e.to_string()),
    })
}

/// All checks, in parallel; reports come back in the order of [`checks`].
pub fn run_suite(o: &SuiteOptions) -> Vec<CheckReport> {
    checks().par_iter().map(|(name, f)| run_check(name, *f, o)).collect()
}

pub fn to_json_lines(reports: &[CheckReport]) -> String {
    reports
        .iter()
        .map(|r| serde_json::to_string(r).expect("reports serialize") + "\n")
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn digest_is_canonical() {
        let a = digest(&json!({"x": 1, "y": [1.5, 2]}));
        let b = digest(&json!({"y": [1.5, 2], "x": 1}));
        assert_eq!(a, b);
        assert_eq!(a.len(), 64);
        assert_ne!(a, digest(&json!({"x": 2, "y": [1.5, 2]})));
    }

    #[test]
    fn failing_metric_fails_check() {
        let mut c = Check::new("t", None, json!({}));
        c.at_most("small", 0.5, 1.0);
        assert!(c.report.pass);
        c.at_least("big", 0.5, 1.0);
        c.at_most("nan", f64::NAN, 1.0);
        let r = c.finish();
        assert!(!r.pass);
        assert_eq!(r.tolerances["big_min"], 1.0);
    }

    #[test]
    fn errors_become_failing_reports() {
        let r = run_check("boom", |_| Err(Error::Missing("nothing".into())), &SuiteOptions::default());
        assert!(!r.pass && r.error.is_some());
        let line = to_json_lines(std::slice::from_ref(&r));
        let back: CheckReport = serde_json::from_str(line.trim()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn sampled_cases_are_reproducible_and_balanced() {
        let o = SuiteOptions::default();
        let a = sample_cases(&o).unwrap();
        let b = sample_cases(&o).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let strong = a.iter().filter(|c| c.w0 == [0.0, 0.0]).count();
        assert_eq!(strong * 2, a.len());
    }
}
