//! Fractional Gronwall series and the a-priori bound on solutions.

use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::flowfield::Params;
use crate::solver::State;

/// Data of `u(t) <= a + Σ_i b_i ∫_0^t (t-s)^{beta_i - 1} u(s) ds` on `[0, horizon]`.
///
/// Sampled `a(t)` or `b_i(t)` are reduced to their suprema by the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct GronwallProblem {
    pub a: f64,
    /// `(b_i, beta_i)` pairs.
    pub terms: Vec<(f64, f64)>,
    pub horizon: f64,
}

impl GronwallProblem {
    fn validate(&self) -> Result<()> {
        if !(self.a >= 0.0 && self.a.is_finite()) {
            return Err(Error::Precondition(format!("a must be finite and >= 0, got {}", self.a)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Precondition(format!("horizon must be positive, got {}", self.horizon)));
        }
        if self.terms.is_empty() {
            return Err(Error::Precondition("need at least one kernel term".into()));
        }
        for &(b, beta) in &self.terms {
            if !(b >= 0.0 && b.is_finite()) || !(beta > 0.0 && beta.is_finite()) {
                return Err(Error::Precondition(format!("invalid term (b = {b}, beta = {beta})")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GronwallBound {
    pub value: f64,
    /// Level sums `term_k` for `k = 1, 2, ...` up to truncation.
    pub trace: Vec<f64>,
}

/// Calls `f` with every count vector of length `m` summing to `k`.
fn for_each_composition(m: usize, k: usize, f: &mut impl FnMut(&[usize])) {
    fn rec(slot: usize, left: usize, counts: &mut Vec<usize>, f: &mut impl FnMut(&[usize])) {
        if slot + 1 == counts.len() {
            counts[slot] = left;
            f(counts);
            return;
        }
        for c in 0..=left {
            counts[slot] = c;
            rec(slot + 1, left - c, counts, f);
        }
    }
    let mut counts = vec![0; m];
    rec(0, k, &mut counts, f);
}

fn ln_factorial(k: usize) -> f64 {
    ln_gamma(k as f64 + 1.0)
}

/// Evaluates `a + Σ_k term_k` at time `t`, where level `k` collects all
/// ordered index tuples of length `k` by their multiplicities:
///
/// ```text
/// term_k = Σ_{|c| = k} k!/Π c_i! · Π (b_i Γ(beta_i))^{c_i} / Γ(S) · a t^S / S,  S = Σ c_i beta_i
/// ```
///
/// Truncates once `k > 2/min beta`, levels are decreasing and the newest
/// level is below `tol` times the partial sum.
pub fn gronwall_bound(prob: &GronwallProblem, t: f64, tol: f64) -> Result<GronwallBound> {
    prob.validate()?;
    if !(t >= 0.0 && t <= prob.horizon) {
        return Err(Error::Precondition(format!("t = {t} outside [0, {}]", prob.horizon)));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition("tol must be positive".into()));
    }
    if prob.a == 0.0 || t == 0.0 {
        return Ok(GronwallBound {
            value: prob.a,
            trace: Vec::new(),
        });
    }
    const CAP: usize = 100_000;
    let ln_bg: Vec<f64> = prob
        .terms
        .iter()
        .map(|&(b, beta)| if b == 0.0 { f64::NEG_INFINITY } else { b.ln() + ln_gamma(beta) })
        .collect();
    let betas: Vec<f64> = prob.terms.iter().map(|p| p.1).collect();
    let min_beta = betas.iter().copied().fold(f64::INFINITY, f64::min);
    let (ln_a, ln_t) = (prob.a.ln(), t.ln());

    let mut partial = prob.a;
    let mut trace = Vec::new();
    let mut logs = Vec::new();
    for k in 1..=CAP {
        logs.clear();
        let lk = ln_factorial(k);
        for_each_composition(betas.len(), k, &mut |c| {
            let mut s = 0.0;
            let mut l = lk;
            for (i, &ci) in c.iter().enumerate() {
                if ci > 0 {
                    l += ci as f64 * ln_bg[i] - ln_factorial(ci);
                    s += ci as f64 * betas[i];
                }
            }
            if l > f64::NEG_INFINITY {
                logs.push(l - ln_gamma(s) + ln_a + s * ln_t - s.ln());
            }
        });
        let term = if logs.is_empty() {
            0.0
        } else {
            let top = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            top.exp() * logs.iter().map(|l| (l - top).exp()).sum::<f64>()
        };
        if !term.is_finite() {
            return Err(Error::SeriesNotConverged {
                iterations: k,
                partial,
                last: term,
            });
        }
        partial += term;
        let decreasing = trace.last().is_none_or(|&p: &f64| term <= p);
        trace.push(term);
        if k as f64 > 2.0 / min_beta && decreasing && term <= tol * partial {
            return Ok(GronwallBound { value: partial, trace });
        }
    }
    Err(Error::SeriesNotConverged {
        iterations: CAP,
        partial,
        last: trace.last().copied().unwrap_or(0.0),
    })
}

/// The two-kernel problem bounding `|y(t)| + |w(t)|` on `[t0, t_end]`.
///
/// `a = |y0| + |w0| + L_b (T - t0)² + (A0 + B0)(T - t0)`, kernel coefficients
/// `max(1 + mu + L_b, 2 L_b)` with exponent 1 and `kappa sqrt(mu)` with exponent 1/2.
pub fn apriori_problem(params: &Params, l_b: f64, a0: f64, b0: f64, ic: &State, t0: f64, t_end: f64) -> Result<GronwallProblem> {
    if !(t_end > t0) {
        return Err(Error::Precondition("need T > t0".into()));
    }
    for (name, v) in [("L_b", l_b), ("A0", a0), ("B0", b0)] {
        if !(v >= 0.0 && v.is_finite()) {
            return Err(Error::Precondition(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    let span = t_end - t0;
    Ok(GronwallProblem {
        a: ic.y.norm() + ic.w.norm() + l_b * span * span + (a0 + b0) * span,
        terms: vec![
            ((1.0 + params.mu + l_b).max(2.0 * l_b), 1.0),
            (params.memory(), 0.5),
        ],
        horizon: span,
    })
}

/// `(C_Y, C_W)` with `sup |y| <= C_Y` and `sup |w| <= C_W` on `[t0, t_end]`.
/// Both come from the same bound on `|y| + |w|`.
pub fn apriori_solution_bound(
    params: &Params,
    l_b: f64,
    a0: f64,
    b0: f64,
    ic: &State,
    t0: f64,
    t_end: f64,
) -> Result<(f64, f64)> {
    let prob = apriori_problem(params, l_b, a0, b0, ic, t0, t_end)?;
    let c = gronwall_bound(&prob, prob.horizon, 1e-14)?.value;
    Ok((c, c))
}
