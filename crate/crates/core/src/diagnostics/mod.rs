//! Numerical checks of regularity, reversibility and uniqueness on computed
//! trajectories.

pub mod suite;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, Params};
use crate::fractional::{basset_integral, SampledPath, TimeGrid};
use crate::sensitivity::solve_variational_dynamics;
use crate::solver::{solve, solve_dynamics, Dynamics, MaxeyRiley, SolverOptions, State, TimeReversed, Trajectory};

/// Exponent separating the two regimes `0` and `-1/2`.
pub const SINGULAR_THRESHOLD: f64 = -0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    DifferentiableAtT0,
    SingularAtT0,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularityReport {
    pub classification: Classification,
    /// Slope of `log |w(t0+dt) - w0| / dt` against `log dt`.
    pub fitted_exponent: f64,
    /// `|I(t0+dt)| / sqrt(dt)` at the smallest offset, `I` the Abel integral of `w`.
    pub prefactor: f64,
    pub quotient_samples: Vec<(f64, f64)>,
    pub r_squared: f64,
    /// Poor fit with a large residual.
    pub inconclusive: bool,
}

/// Least-squares line through `(x, y)`: `(slope, intercept, r², rms residual)`.
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy <= 1e-24 { 1.0 } else { 1.0 - ss_res / syy };
    (slope, intercept, r2, (ss_res / n).sqrt())
}

/// Steps used for each short run of [`differentiability_test`].
pub const QUOTIENT_STEPS: usize = 64;

/// Offsets `2^-6 ... 2^-16`.
pub fn default_offsets() -> Vec<f64> {
    (6..=16).map(|k| 0.5f64.powi(k)).collect()
}

/// Classifies the start of the solution as differentiable or singular.
///
/// Each offset `dt` gets its own run on `[t0, t0 + dt]` with a fixed number of
/// steps. The fit uses the five smallest offsets.
pub fn differentiability_test(
    field: &dyn FlowField,
    params: &Params,
    ic: &State,
    t0: f64,
    dts: &[f64],
    opts: &SolverOptions,
) -> Result<RegularityReport> {
    if dts.len() < 8 {
        return Err(Error::Precondition(format!("need at least 8 offsets, got {}", dts.len())));
    }
    if dts.iter().any(|d| !(*d > 0.0)) || dts.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Precondition("offsets must be positive and decreasing".into()));
    }
    let mut samples = Vec::with_capacity(dts.len());
    let mut last_integral = 0.0;
    for &dt in dts {
        let tr = solve(field, params, ic, t0, t0 + dt, QUOTIENT_STEPS, opts)?;
        let q = (&tr.last().w - &ic.w).norm() / dt;
        samples.push((dt, q));
        last_integral = basset_integral(&tr.w_path(), QUOTIENT_STEPS)?.norm();
    }
    let dt_min = dts[dts.len() - 1];
    let prefactor = last_integral / dt_min.sqrt();

    let tail = &samples[samples.len() - 5..];
    let scale = samples.iter().map(|s| s.1).fold(0.0, f64::max);
    let (fitted_exponent, r_squared, rms) = if tail.iter().all(|s| s.1 <= 1e-300) || scale == 0.0 {
        // w stays at rest: the quotient is identically zero
        (0.0, 1.0, 0.0)
    } else if tail.iter().any(|s| s.1 <= 1e-300) {
        (f64::NAN, 0.0, f64::INFINITY)
    } else {
        let x: Vec<f64> = tail.iter().map(|s| s.0.ln()).collect();
        let y: Vec<f64> = tail.iter().map(|s| s.1.ln()).collect();
        let (slope, _, r2, rms) = fit_line(&x, &y);
        (slope, r2, rms)
    };
    let classification = if fitted_exponent < SINGULAR_THRESHOLD {
        Classification::SingularAtT0
    } else {
        Classification::DifferentiableAtT0
    };
    Ok(RegularityReport {
        classification,
        fitted_exponent,
        prefactor,
        quotient_samples: samples,
        r_squared,
        inconclusive: !fitted_exponent.is_finite() || (r_squared < 0.9 && rms > 0.05),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "snake_case")]
pub enum HolderFit {
    Fitted {
        exponent: f64,
        r_squared: f64,
        /// `(delta, max |f(t + delta) - f(t)|)`.
        samples: Vec<(f64, f64)>,
    },
    /// Constant path; no exponent.
    FlatPath,
}

impl HolderFit {
    pub fn exponent(&self) -> Option<f64> {
        match self {
            HolderFit::Fitted { exponent, .. } => Some(*exponent),
            HolderFit::FlatPath => None,
        }
    }
}

/// Modulus-of-continuity exponent from the five smallest dyadic lags.
pub fn holder_test(path: &SampledPath) -> Result<HolderFit> {
    let len = path.grid().len();
    if len < 64 {
        return Err(Error::Precondition(format!("need at least 64 samples, got {len}")));
    }
    let h = path
        .grid()
        .step()
        .ok_or_else(|| Error::Grid("Holder fit needs a uniform grid".into()))?;
    let vals = path.values();
    let mut samples = Vec::new();
    let mut lag = 1;
    while samples.len() < 5 && lag < len {
        let modulus = (0..len - lag)
            .map(|i| (&vals[i + lag] - &vals[i]).norm())
            .fold(0.0, f64::max);
        samples.push((lag as f64 * h, modulus));
        lag *= 2;
    }
    if samples.iter().all(|s| s.1 == 0.0) {
        return Ok(HolderFit::FlatPath);
    }
    if samples.iter().any(|s| s.1 == 0.0) {
        return Err(Error::Precondition("modulus vanishes at some lags only".into()));
    }
    let x: Vec<f64> = samples.iter().map(|s| s.0.ln()).collect();
    let y: Vec<f64> = samples.iter().map(|s| s.1.ln()).collect();
    let (exponent, _, r_squared, _) = fit_line(&x, &y);
    Ok(HolderFit::Fitted {
        exponent,
        r_squared,
        samples,
    })
}

/// Sub-path on grid indices `[from, to]` (inclusive).
pub fn subpath(path: &SampledPath, from: usize, to: usize) -> Result<SampledPath> {
    let pts = path.grid().points();
    if from >= to || to >= pts.len() {
        return Err(Error::IndexOutOfRange { index: to, len: pts.len() });
    }
    let grid = match path.grid().step() {
        Some(_) => TimeGrid::uniform(pts[from], pts[to], to - from)?,
        None => TimeGrid::from_points(pts[from..=to].to_vec())?,
    };
    SampledPath::new(grid, path.values()[from..=to].to_vec())
}

/// `|w(t0 + dt)| / sqrt(dt)` for `dt = 2^j h`, largest first.
pub fn zero_limit_test(base: &Trajectory) -> Result<Vec<(f64, f64)>> {
    if base.initial().w.iter().any(|x| *x != 0.0) {
        return Err(Error::Precondition("zero-limit test needs w(t0) = 0".into()));
    }
    let pts = base.grid.points();
    let mut idx = Vec::new();
    let mut i = 1;
    while i < pts.len() {
        idx.push(i);
        i *= 2;
    }
    Ok(idx
        .into_iter()
        .rev()
        .map(|i| {
            let dt = pts[i] - pts[0];
            (dt, base.states[i].w.norm() / dt.sqrt())
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReversalMethod {
    /// Causal march of the reversed system (no history term).
    Marching,
    /// Newton iteration on the initial state; solves the reversed problem
    /// whose history term is right-sided.
    Shooting,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTrip {
    pub position_error: f64,
    pub velocity_error: f64,
    pub method: ReversalMethod,
    pub newton_iterations: usize,
}

/// Solves forward on `[t0, t_end]`, then recovers the initial state from the
/// terminal one by solving backward in time.
///
/// Reversing time turns the left-sided history integral into a right-sided
/// one: the backward problem needs the memory of the whole future of each
/// instant, i.e. of the trajectory being sought. Without memory the reversed
/// system is marched causally from the terminal state; with memory the
/// backward problem is solved as a whole by Newton iteration on the unknown
/// initial state.
#[allow(clippy::too_many_arguments)]
pub fn reverse_roundtrip(
    field: &dyn FlowField,
    params: &Params,
    ic: &State,
    t0: f64,
    t_end: f64,
    steps: usize,
    opts: &SolverOptions,
) -> Result<RoundTrip> {
    let grid = TimeGrid::uniform(t0, t_end, steps)?;
    let mr = MaxeyRiley::new(field, params)?;
    let fwd = solve_dynamics(&mr, ic, &grid, opts)?;
    let end = fwd.last().clone();

    if mr.memory() == 0.0 {
        let rev = TimeReversed { inner: &mr };
        let rgrid = TimeGrid::uniform(-t_end, -t0, steps)?;
        let start = State {
            y: end.y.clone(),
            w: -&end.w,
        };
        let back = solve_dynamics(&rev, &start, &rgrid, opts)?;
        let b = back.last();
        return Ok(RoundTrip {
            position_error: (&b.y - &ic.y).norm(),
            velocity_error: (-&b.w - &ic.w).norm(),
            method: ReversalMethod::Marching,
            newton_iterations: 0,
        });
    }

    let target = end.stacked();
    let residual = |x: &DVector<f64>| -> Result<(DVector<f64>, Trajectory)> {
        let tr = solve_dynamics(&mr, &State::from_stacked(x), &grid, opts)?;
        Ok((tr.last().stacked() - &target, tr))
    };
    // the terminal state is the only information used to start
    let mut x = target.clone();
    let (mut r, mut tr) = residual(&x)?;
    let scale = target.amax().max(1.0);
    let mut iterations = 0;
    while r.amax() > 1e-13 * scale {
        iterations += 1;
        if iterations > 50 {
            return Err(Error::NoConvergence {
                step: iterations,
                time: t0,
                residual: r.amax(),
            });
        }
        let sens = solve_variational_dynamics(&tr, &mr)?;
        let jac = &sens.dphi[steps];
        let dx = jac
            .clone()
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Singular("terminal Jacobian".into()))?;
        // backtrack until the residual decreases
        let mut lambda = 1.0;
        loop {
            let trial = &x - &dx * lambda;
            match residual(&trial) {
                Ok((rt, trt)) if rt.norm() < r.norm() => {
                    x = trial;
                    r = rt;
                    tr = trt;
                    break;
                }
                _ if lambda > 1e-6 => lambda *= 0.5,
                Ok(_) => {
                    return Err(Error::NoConvergence {
                        step: iterations,
                        time: t0,
                        residual: r.amax(),
                    })
                }
                Err(e) => return Err(e),
            }
        }
    }
    let found = State::from_stacked(&x);
    Ok(RoundTrip {
        position_error: (&found.y - &ic.y).norm(),
        velocity_error: (&found.w - &ic.w).norm(),
        method: ReversalMethod::Shooting,
        newton_iterations: iterations,
    })
}

fn state_distance(a: &State, b: &State) -> f64 {
    (&a.y - &b.y).amax().max((&a.w - &b.w).amax())
}

/// Largest state distance over a common grid.
pub fn scheme_agreement(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.grid.points() != b.grid.points() {
        return Err(Error::Grid("trajectories live on different grids".into()));
    }
    Ok(a.states
        .iter()
        .zip(&b.states)
        .map(|(s, t)| state_distance(s, t))
        .fold(0.0, f64::max))
}

/// Distance between a run and one on a grid refined by an integer factor,
/// over the coarse grid points.
pub fn refinement_distance(coarse: &Trajectory, fine: &Trajectory) -> Result<f64> {
    let (nc, nf) = (coarse.grid.steps(), fine.grid.steps());
    if nf % nc != 0 || coarse.grid.t0() != fine.grid.t0() || coarse.grid.end() != fine.grid.end() {
        return Err(Error::Grid("fine grid must refine the coarse grid".into()));
    }
    let ratio = nf / nc;
    Ok(coarse
        .states
        .iter()
        .enumerate()
        .map(|(i, s)| state_distance(s, &fine.states[i * ratio]))
        .fold(0.0, f64::max))
}
