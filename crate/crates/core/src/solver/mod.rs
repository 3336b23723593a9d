//! Time integration of the integrated (weak) form
//!
//! ```text
//! y(t) = y0 + ∫ w + A(y,s) ds
//! w(t) = w0 + ∫ -mu w - M(y,s) w + B(y,s) ds - kappa sqrt(mu) ∫ w(s)/sqrt(t-s) ds
//! ```
//!
//! Regular integrals use the trapezoidal rule and the memory integral the
//! product trapezoidal rule, so every term integrates the same piecewise-linear
//! interpolant.

mod picard;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bounds::apriori_solution_bound;
use crate::error::{Error, Result};
use crate::flowfield::{drift_coefficients, grad_b, derived_coefficients, FlowField, Params};
use crate::fractional::{SampledPath, TimeGrid, UniformAbel};

pub use picard::{picard_local, picard_radius, PicardBox, PicardReport};

#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub y: DVector<f64>,
    pub w: DVector<f64>,
}

impl State {
    pub fn new(y: DVector<f64>, w: DVector<f64>) -> Result<Self> {
        if y.len() != w.len() || y.is_empty() {
            return Err(Error::Dimension(format!("y has {} entries, w has {}", y.len(), w.len())));
        }
        if y.iter().chain(w.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Precondition("state must be finite".into()));
        }
        Ok(State { y, w })
    }

    pub fn from_slices(y: &[f64], w: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(y), DVector::from_column_slice(w))
    }

    pub fn dim(&self) -> usize {
        self.y.len()
    }

    /// `(y, w)` stacked.
    pub fn stacked(&self) -> DVector<f64> {
        let n = self.dim();
        DVector::from_fn(2 * n, |i, _| if i < n { self.y[i] } else { self.w[i - n] })
    }

    pub fn from_stacked(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        State {
            y: x.rows(0, n).into_owned(),
            w: x.rows(n, n).into_owned(),
        }
    }

    /// Euclidean norm of the stacked state.
    pub fn norm(&self) -> f64 {
        (self.y.norm_squared() + self.w.norm_squared()).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    Marching,
    Picard,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<State>,
    pub scheme: Scheme,
    /// Times at which the integration was re-based, history carried over.
    pub restarts: Vec<f64>,
    /// Fixed-point iterations used at each grid point (0 at the initial point).
    pub iterations: Vec<usize>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.states[0].dim()
    }

    pub fn initial(&self) -> &State {
        &self.states[0]
    }

    pub fn last(&self) -> &State {
        &self.states[self.states.len() - 1]
    }

    pub fn y_path(&self) -> SampledPath {
        SampledPath::new(self.grid.clone(), self.states.iter().map(|s| s.y.clone()).collect())
            .expect("trajectory samples are finite")
    }

    pub fn w_path(&self) -> SampledPath {
        SampledPath::new(self.grid.clone(), self.states.iter().map(|s| s.w.clone()).collect())
            .expect("trajectory samples are finite")
    }

    pub fn sup_y(&self) -> f64 {
        self.states.iter().map(|s| s.y.norm()).fold(0.0, f64::max)
    }

    pub fn sup_w(&self) -> f64 {
        self.states.iter().map(|s| s.w.norm()).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub scheme: Scheme,
    pub tol: f64,
    pub max_iter: usize,
    /// Forced restart times; each is moved to the nearest grid point.
    pub restarts: Vec<f64>,
    /// Steps per fixed-point window for the Picard scheme.
    pub picard_window: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            scheme: Scheme::Marching,
            tol: 1e-12,
            max_iter: 50,
            restarts: Vec::new(),
            picard_window: 4,
        }
    }
}

impl SolverOptions {
    pub fn picard() -> Self {
        SolverOptions {
            scheme: Scheme::Picard,
            ..Default::default()
        }
    }
}

/// Spatial derivatives of the coefficient fields.
#[derive(Debug, Clone, PartialEq)]
pub struct Linearization {
    pub grad_a: DMatrix<f64>,
    pub grad_b: DMatrix<f64>,
    /// `L_ij = Σ_k ∂M_ik/∂y_j w_k`.
    pub l: DMatrix<f64>,
}

/// Right-hand side data of the first-order system, independent of how it
/// was obtained from a flow.
pub trait Dynamics: Send + Sync {
    fn dim(&self) -> usize;
    /// Linear drag coefficient `mu`.
    fn drag(&self) -> f64;
    /// History coefficient `kappa sqrt(mu)`.
    fn memory(&self) -> f64;
    /// `(A, B, M)` at `(y, t)`.
    fn drift(&self, y: &DVector<f64>, t: f64) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)>;
    fn linearization(&self, y: &DVector<f64>, w: &DVector<f64>, t: f64) -> Result<Linearization>;
}

/// The particle equations for a flow and parameter set.
pub struct MaxeyRiley<'a> {
    pub field: &'a dyn FlowField,
    pub params: &'a Params,
}

impl<'a> MaxeyRiley<'a> {
    pub fn new(field: &'a dyn FlowField, params: &'a Params) -> Result<Self> {
        if field.dim() != params.dim() {
            return Err(Error::Dimension(format!(
                "field dimension {} but gravity has {} entries",
                field.dim(),
                params.dim()
            )));
        }
        Ok(MaxeyRiley { field, params })
    }
}

impl Dynamics for MaxeyRiley<'_> {
    fn dim(&self) -> usize {
        self.field.dim()
    }
    fn drag(&self) -> f64 {
        self.params.mu
    }
    fn memory(&self) -> f64 {
        self.params.memory()
    }
    fn drift(&self, y: &DVector<f64>, t: f64) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        drift_coefficients(self.field, self.params, y, t)
    }
    fn linearization(&self, y: &DVector<f64>, w: &DVector<f64>, t: f64) -> Result<Linearization> {
        let c = derived_coefficients(self.field, self.params, y, w, t)?;
        Ok(Linearization {
            grad_a: c.m,
            grad_b: grad_b(self.field, self.params, y, t)?,
            l: c.l,
        })
    }
}

/// The system seen in reversed time `tau = -t` with `w~ = -w`:
/// `A~(y,tau) = -A(y,-tau)`, `M~ = -M`, `B~ = B`, drag `-mu`.
///
/// The history coefficient is passed through unchanged; with memory the
/// reversed problem is anticipating, and a causal march of it is only
/// meaningful when `memory() == 0`.
pub struct TimeReversed<'a> {
    pub inner: &'a dyn Dynamics,
}

impl Dynamics for TimeReversed<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn drag(&self) -> f64 {
        -self.inner.drag()
    }
    fn memory(&self) -> f64 {
        self.inner.memory()
    }
    fn drift(&self, y: &DVector<f64>, tau: f64) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        let (a, b, m) = self.inner.drift(y, -tau)?;
        Ok((-a, b, -m))
    }
    fn linearization(&self, y: &DVector<f64>, w: &DVector<f64>, tau: f64) -> Result<Linearization> {
        let lin = self.inner.linearization(y, w, -tau)?;
        Ok(Linearization {
            grad_a: -lin.grad_a,
            grad_b: lin.grad_b,
            l: -lin.l,
        })
    }
}

/// `Σ_{j<=k} ω_{n,j} w_j` for `k < n`: the part of the Abel sum to `t_n`
/// carried by nodes up to `k`.
pub(crate) fn abel_prefix(table: &UniformAbel, ws: &[DVector<f64>], n: usize, k: usize) -> DVector<f64> {
    debug_assert!(k < n);
    let mut acc = DVector::zeros(ws[0].len());
    for (j, w) in ws.iter().enumerate().take(k + 1) {
        let (left, _) = table.cell(n - j);
        let mut weight = left;
        if j > 0 {
            weight += table.cell(n - j + 1).1;
        }
        acc.axpy(weight, w, 1.0);
    }
    acc
}

/// Full Abel sum to `t_n`.
pub(crate) fn abel_full(table: &UniformAbel, ws: &[DVector<f64>], n: usize) -> DVector<f64> {
    if n == 0 {
        return DVector::zeros(ws[0].len());
    }
    let mut acc = abel_prefix(table, ws, n, n - 1);
    acc.axpy(table.diagonal(), &ws[n], 1.0);
    acc
}

fn restart_indices(grid: &TimeGrid, times: &[f64]) -> Result<Vec<usize>> {
    let h = grid.step().ok_or_else(|| Error::Grid("solver needs a uniform grid".into()))?;
    let mut out = Vec::new();
    for &t in times {
        if !(t > grid.t0() && t < grid.end()) {
            return Err(Error::Precondition(format!(
                "restart time {t} outside the open interval ({}, {})",
                grid.t0(),
                grid.end()
            )));
        }
        let i = ((t - grid.t0()) / h).round() as usize;
        if i > 0 && i < grid.steps() {
            out.push(i);
        }
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn divergence(time: f64, last: &State) -> Error {
    Error::Divergence {
        time,
        last_norm: last.norm(),
        bound: f64::NAN,
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Integration state shared by both schemes.
struct March<'a> {
    dynamics: &'a dyn Dynamics,
    grid: &'a TimeGrid,
    h: f64,
    table: UniformAbel,
    tol: f64,
    max_iter: usize,
    ys: Vec<DVector<f64>>,
    ws: Vec<DVector<f64>>,
    /// `w + A` at each node.
    fy: Vec<DVector<f64>>,
    /// `-mu w - M w + B` at each node.
    fw: Vec<DVector<f64>>,
    iterations: Vec<usize>,
    base: usize,
    /// Abel sum to the base node.
    abel_base: DVector<f64>,
    /// Trapezoidal integral of `fw` from the base node to the last node.
    acc_w: DVector<f64>,
}

impl<'a> March<'a> {
    fn new(dynamics: &'a dyn Dynamics, ic: &State, grid: &'a TimeGrid, opts: &SolverOptions) -> Result<Self> {
        let h = grid.step().ok_or_else(|| Error::Grid("solver needs a uniform grid".into()))?;
        let (a, b, m) = dynamics.drift(&ic.y, grid.t0())?;
        let n = ic.dim();
        Ok(March {
            dynamics,
            grid,
            h,
            table: UniformAbel::new(h, grid.steps()),
            tol: opts.tol,
            max_iter: opts.max_iter,
            fy: vec![&ic.w + a],
            fw: vec![-&ic.w * dynamics.drag() - m * &ic.w + b],
            ys: vec![ic.y.clone()],
            ws: vec![ic.w.clone()],
            iterations: vec![0],
            base: 0,
            abel_base: DVector::zeros(n),
            acc_w: DVector::zeros(n),
        })
    }

    /// Coefficients at `(y, t)`; overflow at a huge but finite position is reported as divergence.
    fn drift_at(&self, y: &DVector<f64>, t: f64) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
        self.dynamics.drift(y, t).map_err(|e| match e {
            Error::Evaluation { .. } if y.amax() > 1e150 => divergence(t, &self.last_state()),
            other => other,
        })
    }

    fn last_state(&self) -> State {
        State {
            y: self.ys[self.ys.len() - 1].clone(),
            w: self.ws[self.ws.len() - 1].clone(),
        }
    }

    fn rebase(&mut self) {
        let r = self.ys.len() - 1;
        self.base = r;
        self.abel_base = abel_full(&self.table, &self.ws, r);
        self.acc_w = DVector::zeros(self.ws[0].len());
    }

    fn push(&mut self, y: DVector<f64>, w: DVector<f64>, iters: usize) -> Result<()> {
        let t = self.grid.points()[self.ys.len()];
        let (a, b, m) = self.drift_at(&y, t)?;
        let fw = -&w * self.dynamics.drag() - m * &w + b;
        let fy = &w + a;
        if !(all_finite(&fw) && all_finite(&fy)) {
            return Err(divergence(t, &self.last_state()));
        }
        self.acc_w += (&self.fw[self.fw.len() - 1] + &fw) * (0.5 * self.h);
        self.ys.push(y);
        self.ws.push(w);
        self.fy.push(fy);
        self.fw.push(fw);
        self.iterations.push(iters);
        Ok(())
    }

    /// One implicit step: the drag and the newest Abel weight act on `w_n`
    /// directly; the remaining dependence is resolved by fixed-point iteration.
    fn step(&mut self) -> Result<()> {
        let n = self.ys.len();
        let t = self.grid.points()[n];
        let h = self.h;
        let mem = self.dynamics.memory();
        let last = n - 1;

        let hist = abel_prefix(&self.table, &self.ws, n, n - 1);
        let cw = &self.ws[self.base] + &self.acc_w + &self.fw[last] * (0.5 * h) - (hist - &self.abel_base) * mem;
        let cy = &self.ys[last] + &self.fy[last] * (0.5 * h);
        let denom = 1.0 + 0.5 * h * self.dynamics.drag() + mem * self.table.diagonal();

        let (mut y, mut w) = if n >= 2 {
            (
                &self.ys[last] * 2.0 - &self.ys[last - 1],
                &self.ws[last] * 2.0 - &self.ws[last - 1],
            )
        } else {
            (self.ys[0].clone(), self.ws[0].clone())
        };
        let mut prev = f64::INFINITY;
        let mut iters = 0;
        loop {
            iters += 1;
            let (a, b, m) = self.drift_at(&y, t)?;
            let w_new = (&cw + (b - m * &w) * (0.5 * h)) / denom;
            let y_new = &cy + (&w_new + a) * (0.5 * h);
            if !(all_finite(&w_new) && all_finite(&y_new)) {
                return Err(divergence(t, &self.last_state()));
            }
            let delta = (&y_new - &y).amax().max((&w_new - &w).amax());
            let scale = 1f64.max(y_new.amax()).max(w_new.amax());
            y = y_new;
            w = w_new;
            if delta <= self.tol * scale || (iters > 1 && delta >= prev && delta <= 1e-10 * scale) {
                break;
            }
            if iters >= self.max_iter {
                return Err(Error::NoConvergence {
                    step: n,
                    time: t,
                    residual: delta,
                });
            }
            prev = delta;
        }
        self.push(y, w, iters)
    }

    /// Picard iteration of the map `P` on the window `(r, e]`, starting from
    /// the constant path at `t_r`.
    fn window(&mut self, e: usize) -> Result<()> {
        let r = self.ys.len() - 1;
        debug_assert_eq!(r, self.base);
        let h = self.h;
        let drag = self.dynamics.drag();
        let mem = self.dynamics.memory();
        let pts = self.grid.points();
        let dim = self.ys[0].len();

        // memory carried by nodes up to t_r, per target
        let fixed: Vec<DVector<f64>> = (r + 1..=e).map(|n| abel_prefix(&self.table, &self.ws, n, r)).collect();
        let mut ys: Vec<DVector<f64>> = vec![self.ys[r].clone(); e - r];
        let mut ws: Vec<DVector<f64>> = vec![self.ws[r].clone(); e - r];
        let mut prev = f64::INFINITY;
        let mut iters = 0;
        let cap = self.max_iter.max(200);
        loop {
            iters += 1;
            let mut fy = Vec::with_capacity(e - r);
            let mut fw = Vec::with_capacity(e - r);
            for (k, (y, w)) in ys.iter().zip(&ws).enumerate() {
                let (a, b, m) = self.drift_at(y, pts[r + 1 + k])?;
                fy.push(w + a);
                fw.push(-w * drag - m * w + b);
            }
            let mut new_y = Vec::with_capacity(e - r);
            let mut new_w = Vec::with_capacity(e - r);
            let mut int_y = DVector::zeros(dim);
            let mut int_w = DVector::zeros(dim);
            for k in 0..e - r {
                let n = r + 1 + k;
                let (py, pw) = if k == 0 {
                    (&self.fy[r], &self.fw[r])
                } else {
                    (&fy[k - 1], &fw[k - 1])
                };
                int_y += (py + &fy[k]) * (0.5 * h);
                int_w += (pw + &fw[k]) * (0.5 * h);
                let mut abel = fixed[k].clone();
                for (i, wi) in ws.iter().enumerate().take(k + 1) {
                    abel.axpy(self.table.node_weight(0, n, r + 1 + i), wi, 1.0);
                }
                new_y.push(&self.ys[r] + &int_y);
                new_w.push(&self.ws[r] + &int_w - (abel - &self.abel_base) * mem);
            }
            let mut delta: f64 = 0.0;
            let mut scale: f64 = 1.0;
            for k in 0..e - r {
                if !(all_finite(&new_y[k]) && all_finite(&new_w[k])) {
                    return Err(divergence(pts[r + 1 + k], &self.last_state()));
                }
                delta = delta.max((&new_y[k] - &ys[k]).norm() + (&new_w[k] - &ws[k]).norm());
                scale = scale.max(new_y[k].amax()).max(new_w[k].amax());
            }
            ys = new_y;
            ws = new_w;
            if delta <= self.tol * scale || (iters > 1 && delta <= 1e-10 * scale && delta >= prev) {
                break;
            }
            if iters > 1 && prev > 1e-10 * scale && delta > 0.5 * prev {
                return Err(Error::ContractionViolated {
                    rate: delta / prev,
                    time: pts[r],
                });
            }
            if iters >= cap {
                return Err(Error::NoConvergence {
                    step: r + 1,
                    time: pts[r],
                    residual: delta,
                });
            }
            prev = delta;
        }
        for (y, w) in ys.into_iter().zip(ws) {
            self.push(y, w, iters)?;
        }
        Ok(())
    }

    fn finish(self, scheme: Scheme, restarts: Vec<f64>) -> Trajectory {
        Trajectory {
            grid: self.grid.clone(),
            states: self.ys.into_iter().zip(self.ws).map(|(y, w)| State { y, w }).collect(),
            scheme,
            restarts,
            iterations: self.iterations,
        }
    }
}

/// Integrates `dynamics` on a uniform grid.
pub fn solve_dynamics(dynamics: &dyn Dynamics, ic: &State, grid: &TimeGrid, opts: &SolverOptions) -> Result<Trajectory> {
    if ic.dim() != dynamics.dim() {
        return Err(Error::Dimension(format!(
            "initial state has dimension {}, system {}",
            ic.dim(),
            dynamics.dim()
        )));
    }
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::Precondition("tol must be positive and max_iter >= 1".into()));
    }
    if opts.scheme == Scheme::Picard && opts.picard_window == 0 {
        return Err(Error::Precondition("picard_window must be >= 1".into()));
    }
    let restarts = restart_indices(grid, &opts.restarts)?;
    let mut march = March::new(dynamics, ic, grid, opts)?;
    let steps = grid.steps();
    let mut next_restart = restarts.iter().copied().peekable();
    let mut n = 0;
    while n < steps {
        if next_restart.peek() == Some(&n) {
            next_restart.next();
            march.rebase();
        }
        match opts.scheme {
            Scheme::Marching => {
                march.step()?;
                n += 1;
            }
            Scheme::Picard => {
                march.rebase();
                let mut e = (n + opts.picard_window).min(steps);
                if let Some(&r) = next_restart.peek() {
                    e = e.min(r);
                }
                march.window(e)?;
                n = e;
            }
        }
    }
    let times = restarts.iter().map(|&i| grid.points()[i]).collect();
    Ok(march.finish(opts.scheme, times))
}

/// Solves the particle equations on `[t0, t_end]` with `steps` uniform steps.
///
/// A divergence error carries the a-priori bound for the run when the field
/// provides coefficient bounds.
pub fn solve(
    field: &dyn FlowField,
    params: &Params,
    ic: &State,
    t0: f64,
    t_end: f64,
    steps: usize,
    opts: &SolverOptions,
) -> Result<Trajectory> {
    if steps < 2 {
        return Err(Error::Precondition(format!("need at least 2 steps, got {steps}")));
    }
    let grid = TimeGrid::uniform(t0, t_end, steps)?;
    let dynamics = MaxeyRiley::new(field, params)?;
    solve_dynamics(&dynamics, ic, &grid, opts).map_err(|e| match e {
        Error::Divergence { time, last_norm, .. } => {
            let bound = field
                .bounds(params)
                .and_then(|b| {
                    let zero = DVector::zeros(ic.dim());
                    let (a0, b0, _) = drift_coefficients(field, params, &zero, t0).ok()?;
                    apriori_solution_bound(params, b.l_b, a0.norm(), b0.norm(), ic, t0, t_end).ok()
                })
                .map_or(f64::NAN, |(cy, _)| cy);
            Error::Divergence { time, last_norm, bound }
        }
        other => other,
    })
}

#[cfg(test)]
mod tests;
