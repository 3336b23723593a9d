//! Local fixed-point construction on a window of length `delta`.

use nalgebra::DVector;

use super::{Dynamics, Scheme, State, Trajectory};
use crate::error::{Error, Result};
use crate::flowfield::Params;
use crate::fractional::{abel_weights_to, SampledPath, TimeGrid, UniformAbel};

/// Radius and window length under which the map `P` is a contraction with
/// factor 1/2 on the ball of radius `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PicardBox {
    pub k: f64,
    pub delta: f64,
    pub l_b: f64,
    pub l_c: f64,
    pub a0: f64,
    pub b0: f64,
    /// Radius of the ball holding the admissible starting states.
    pub r_bound: f64,
    pub horizon: f64,
    pub mu: f64,
    pub memory: f64,
}

impl PicardBox {
    fn growth(&self, l_b_factor: f64) -> f64 {
        let d = self.delta;
        d + self.mu * d + 2.0 * self.memory * d.sqrt() + l_b_factor * self.l_b * d
    }

    /// Conditions violated by this box, empty when it is admissible.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        let d = self.delta;
        if !(d > 0.0 && d.is_finite()) {
            out.push(format!("delta = {d} is not positive"));
            return out;
        }
        let k_min = 4.0 * self.r_bound.max(2.0 * self.r_bound * self.horizon.sqrt());
        if self.k < k_min * (1.0 - 1e-15) {
            out.push(format!("K = {} below 4 max(R, 2R sqrt(T - t0)) = {k_min}", self.k));
        }
        let g3 = self.growth(3.0);
        if g3 >= 0.2 {
            out.push(format!("growth condition {g3} >= 1/5"));
        }
        let g1 = self.growth(1.0);
        if g1 >= 0.25 {
            out.push(format!("contraction condition {g1} >= 1/4"));
        }
        let lip = (2.0 + self.k) * self.l_c * d;
        if lip >= 0.25 {
            out.push(format!("Lipschitz condition {lip} >= 1/4"));
        }
        let drift = (2.0 * self.l_b * d + self.a0 + self.b0) * d;
        if drift >= self.k / 4.0 {
            out.push(format!("drift condition {drift} >= K/4"));
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidBox(v.join("; ")))
        }
    }
}

/// Largest dyadic `delta = 2^-j` meeting the local existence conditions for
/// starting states in the ball of radius `r_bound`.
#[allow(clippy::too_many_arguments)]
pub fn picard_radius(
    r_bound: f64,
    t0: f64,
    t_end: f64,
    params: &Params,
    l_b: f64,
    l_c: f64,
    a0: f64,
    b0: f64,
) -> Result<PicardBox> {
    if !(r_bound > 0.0 && r_bound.is_finite()) {
        return Err(Error::Precondition(format!("R must be positive, got {r_bound}")));
    }
    if !(t_end > t0) {
        return Err(Error::Precondition("need T > t0".into()));
    }
    for (name, v) in [("L_b", l_b), ("L_c", l_c), ("A0", a0), ("B0", b0)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Precondition(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let horizon = t_end - t0;
    let mut pbox = PicardBox {
        k: 4.0 * r_bound.max(2.0 * r_bound * horizon.sqrt()),
        delta: 1.0,
        l_b,
        l_c,
        a0,
        b0,
        r_bound,
        horizon,
        mu: params.mu,
        memory: params.memory(),
    };
    for j in 0..1075 {
        pbox.delta = 0.5f64.powi(j);
        if pbox.delta == 0.0 {
            break;
        }
        if pbox.violations().is_empty() {
            return Ok(pbox);
        }
    }
    Err(Error::NoDelta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardReport {
    pub trajectory: Trajectory,
    pub iterations: usize,
    /// Distance between the first iterate and the constant initial guess.
    pub initial_residual: f64,
    /// Ratios of successive iterate distances above roundoff level.
    pub rates: Vec<f64>,
}

impl PicardReport {
    pub fn max_rate(&self) -> f64 {
        self.rates.iter().copied().fold(0.0, f64::max)
    }
}

/// Iterates the map `P` on `[t1, t1 + delta]` with `m` uniform steps.
///
/// `history` holds `w` on `[t0, t1]` and supplies the memory correction
/// `∫_{t0}^{t1} w(s) (1/sqrt(t1-s) - 1/sqrt(t-s)) ds`; `None` means `t1 == t0`.
pub fn picard_local(
    dynamics: &dyn Dynamics,
    start: &State,
    t1: f64,
    history: Option<&SampledPath>,
    pbox: &PicardBox,
    m: usize,
    tol: f64,
) -> Result<PicardReport> {
    pbox.validate()?;
    if m == 0 || !(tol > 0.0) {
        return Err(Error::Precondition("need m >= 1 and tol > 0".into()));
    }
    if start.dim() != dynamics.dim() {
        return Err(Error::Dimension("start state does not match the system".into()));
    }
    if dynamics.drag() > pbox.mu * (1.0 + 1e-12) || dynamics.memory() > pbox.memory * (1.0 + 1e-12) {
        return Err(Error::InvalidBox("box built for weaker drag or memory than the system".into()));
    }
    if start.norm() > pbox.r_bound {
        return Err(Error::InvalidBox(format!(
            "starting state norm {} exceeds R = {}",
            start.norm(),
            pbox.r_bound
        )));
    }
    let dim = start.dim();
    let grid = TimeGrid::uniform(t1, t1 + pbox.delta, m)?;
    let pts = grid.points().to_vec();

    // memory correction per local node
    let correction: Vec<DVector<f64>> = match history {
        None => vec![DVector::zeros(dim); m + 1],
        Some(path) => {
            if path.dim() != dim {
                return Err(Error::Dimension("history dimension".into()));
            }
            if (path.grid().end() - t1).abs() > 1e-12 * t1.abs().max(1.0) {
                return Err(Error::Precondition(format!(
                    "history ends at {} but the window starts at {t1}",
                    path.grid().end()
                )));
            }
            let sup = path.values().iter().map(|v| v.norm()).fold(0.0, f64::max);
            if sup > pbox.r_bound {
                return Err(Error::InvalidBox(format!("history sup |w| = {sup} exceeds R")));
            }
            let hp = path.grid().points();
            let apply = |target: f64| -> DVector<f64> {
                let wts = abel_weights_to(hp, target);
                let mut acc = DVector::zeros(dim);
                for (wt, v) in wts.iter().zip(path.values()) {
                    acc.axpy(*wt, v, 1.0);
                }
                acc
            };
            let at_t1 = apply(t1);
            pts.iter().map(|&t| &at_t1 - apply(t)).collect()
        }
    };

    let h = pbox.delta / m as f64;
    let table = UniformAbel::new(h, m);
    let drag = dynamics.drag();
    let mem = dynamics.memory();
    let (a, b, mm) = dynamics.drift(&start.y, t1)?;
    let fy0 = &start.w + a;
    let fw0 = -&start.w * drag - mm * &start.w + b;

    let mut ys = vec![start.y.clone(); m];
    let mut ws = vec![start.w.clone(); m];
    let mut prev = f64::INFINITY;
    let mut rates = Vec::new();
    let mut initial_residual = 0.0;
    let mut iters = 0;
    loop {
        iters += 1;
        let mut fy = Vec::with_capacity(m);
        let mut fw = Vec::with_capacity(m);
        for (k, (y, w)) in ys.iter().zip(&ws).enumerate() {
            let (a, b, mm) = dynamics.drift(y, pts[k + 1])?;
            fy.push(w + a);
            fw.push(-w * drag - mm * w + b);
        }
        let mut int_y = DVector::zeros(dim);
        let mut int_w = DVector::zeros(dim);
        let mut new_y = Vec::with_capacity(m);
        let mut new_w = Vec::with_capacity(m);
        for k in 0..m {
            let n = k + 1;
            let (py, pw) = if k == 0 { (&fy0, &fw0) } else { (&fy[k - 1], &fw[k - 1]) };
            int_y += (py + &fy[k]) * (0.5 * h);
            int_w += (pw + &fw[k]) * (0.5 * h);
            let mut abel = &start.w * table.node_weight(0, n, 0);
            for (i, wi) in ws.iter().enumerate().take(n) {
                abel.axpy(table.node_weight(0, n, i + 1), wi, 1.0);
            }
            new_y.push(&start.y + &int_y);
            new_w.push(&start.w + &int_w - abel * mem + &correction[n] * mem);
        }
        let mut delta: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for k in 0..m {
            if new_y[k].iter().chain(new_w[k].iter()).any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    time: pts[k + 1],
                    last_norm: start.norm(),
                    bound: pbox.k,
                });
            }
            delta = delta.max((&new_y[k] - &ys[k]).norm() + (&new_w[k] - &ws[k]).norm());
            scale = scale.max(new_y[k].amax()).max(new_w[k].amax());
        }
        ys = new_y;
        ws = new_w;
        if iters == 1 {
            initial_residual = delta;
        }
        if delta <= tol * scale || (iters > 1 && delta >= prev && delta <= 1e-10 * scale) {
            break;
        }
        if iters > 1 && prev > 1e-10 * scale {
            let rate = delta / prev;
            rates.push(rate);
            if rate > 0.5 {
                return Err(Error::ContractionViolated { rate, time: t1 });
            }
        }
        if iters >= 10_000 {
            return Err(Error::NoConvergence {
                step: 1,
                time: t1,
                residual: delta,
            });
        }
        prev = delta;
    }
    let mut states = vec![start.clone()];
    states.extend(ys.into_iter().zip(ws).map(|(y, w)| State { y, w }));
    let mut iterations = vec![iters; m + 1];
    iterations[0] = 0;
    Ok(PicardReport {
        trajectory: Trajectory {
            grid,
            states,
            scheme: Scheme::Picard,
            restarts: Vec::new(),
            iterations,
        },
        iterations: iters,
        initial_residual,
        rates,
    })
}
