//! Carrier flows, physical parameters and the coefficient fields of the
//! first-order system
//!
//! ```text
//! y' = w + A(y,t)
//! w' = -mu w - M(y,t) w + B(y,t) - kappa sqrt(mu) d/dt ∫ w(s)/sqrt(t-s) ds
//! ```

mod builtin;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use builtin::{make_field, FieldSpec, LinearField, TaylorGreen, ZeroField};

/// Third-order tensor stored as one matrix per output component:
/// `t[i][(j, k)] = ∂²u_i / ∂x_j ∂x_k`.
pub type Tensor3 = Vec<DMatrix<f64>>;

/// Physical constants and the derived coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    /// Density ratio `2 rho_f / (rho_f + 2 rho_p)`.
    pub r: f64,
    pub st: f64,
    pub re: f64,
    pub mu: f64,
    pub kappa: f64,
    pub gamma: f64,
    pub g: DVector<f64>,
}

impl Params {
    pub fn derive(r: f64, st: f64, re: f64, g: DVector<f64>) -> Result<Self> {
        if !(r.is_finite() && r > 0.0 && r <= 2.0) {
            return Err(Error::Params(format!("R must lie in (0, 2], got {r}")));
        }
        if !(st.is_finite() && st > 0.0) {
            return Err(Error::Params(format!("St must be positive, got {st}")));
        }
        if !(re.is_finite() && re > 0.0) {
            return Err(Error::Params(format!("Re must be positive, got {re}")));
        }
        check_gravity(&g)?;
        Ok(Params {
            r,
            st,
            re,
            mu: r / st,
            kappa: (9.0 * r / (2.0 * PI)).sqrt(),
            gamma: 9.0 * r / (2.0 * re),
            g,
        })
    }

    /// Parameters given directly by `mu`, `kappa`, `gamma`.
    ///
    /// `R` is recovered from `kappa`; zero values are allowed so that memory,
    /// drag or the Faxen correction can be switched off.
    pub fn from_coefficients(mu: f64, kappa: f64, gamma: f64, g: DVector<f64>) -> Result<Self> {
        for (name, v) in [("mu", mu), ("kappa", kappa), ("gamma", gamma)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Params(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if gamma > 0.0 && mu == 0.0 {
            return Err(Error::Params("gamma > 0 needs mu > 0 (Faxen factor gamma/mu)".into()));
        }
        check_gravity(&g)?;
        let r = 2.0 * PI * kappa * kappa / 9.0;
        if r > 2.0 {
            return Err(Error::Params(format!(
                "kappa = {kappa} implies R = {r} > 2"
            )));
        }
        let st = if mu > 0.0 { r / mu } else { f64::INFINITY };
        let re = if gamma > 0.0 { 9.0 * r / (2.0 * gamma) } else { f64::INFINITY };
        Ok(Params {
            r,
            st,
            re,
            mu,
            kappa,
            gamma,
            g,
        })
    }

    pub fn dim(&self) -> usize {
        self.g.len()
    }

    /// `gamma / mu`, zero when both vanish.
    pub fn gamma_over_mu(&self) -> f64 {
        if self.gamma == 0.0 {
            0.0
        } else {
            self.gamma / self.mu
        }
    }

    /// Faxen factor `gamma / (6 mu)`.
    pub fn faxen(&self) -> f64 {
        self.gamma_over_mu() / 6.0
    }

    /// Strength `kappa sqrt(mu)` of the history term.
    pub fn memory(&self) -> f64 {
        self.kappa * self.mu.sqrt()
    }
}

fn check_gravity(g: &DVector<f64>) -> Result<()> {
    if g.is_empty() || g.iter().any(|x| !x.is_finite()) {
        return Err(Error::Params("gravity must be a finite nonempty vector".into()));
    }
    Ok(())
}

/// Sup-norm bounds over space and time used by the local existence box:
/// `l_b` bounds the space and time derivatives of `A` and `B`, `l_c` their
/// spatial Lipschitz constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoefficientBounds {
    pub l_b: f64,
    pub l_c: f64,
}

/// A carrier flow with closed-form derivatives.
pub trait FlowField: Send + Sync {
    fn dim(&self) -> usize;
    fn velocity(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    /// `(∇u)_{ij} = ∂u_i/∂x_j`.
    fn grad(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn laplacian(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn grad_laplacian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn time_derivative(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn laplacian_time_derivative(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    /// `Du/Dt = ∂u/∂t + (∇u) u`.
    fn material(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn material_laplacian(&self, x: &DVector<f64>, t: f64) -> DVector<f64>;
    fn grad_material(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn grad_material_laplacian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64>;
    fn second_grad(&self, x: &DVector<f64>, t: f64) -> Tensor3;
    fn second_grad_laplacian(&self, x: &DVector<f64>, t: f64) -> Tensor3;
    /// Global bounds on the coefficient fields, when known in closed form.
    fn bounds(&self, _p: &Params) -> Option<CoefficientBounds> {
        None
    }
}

/// `A`, `B`, `M` and `L` at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: DVector<f64>,
    pub b: DVector<f64>,
    pub m: DMatrix<f64>,
    pub l: DMatrix<f64>,
}

fn finite_vec(v: &DVector<f64>, what: &str, y: &DVector<f64>, t: f64) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what: what.into(),
            position: y.iter().copied().collect(),
            time: t,
        })
    }
}

fn finite_mat(m: &DMatrix<f64>, what: &str, y: &DVector<f64>, t: f64) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Evaluation {
            what: what.into(),
            position: y.iter().copied().collect(),
            time: t,
        })
    }
}

fn check_dims(field: &dyn FlowField, p: &Params, y: &DVector<f64>) -> Result<()> {
    if field.dim() != y.len() || p.dim() != y.len() {
        return Err(Error::Dimension(format!(
            "field dim {}, gravity dim {}, state dim {}",
            field.dim(),
            p.dim(),
            y.len()
        )));
    }
    Ok(())
}

/// `A`, `B` and `M` only; what the marching solver needs per evaluation.
pub fn drift_coefficients(
    field: &dyn FlowField,
    p: &Params,
    y: &DVector<f64>,
    t: f64,
) -> Result<(DVector<f64>, DVector<f64>, DMatrix<f64>)> {
    check_dims(field, p, y)?;
    let c = p.faxen();
    let lap = field.laplacian(y, t);
    let a = field.velocity(y, t) + &lap * c;
    let m = field.grad(y, t) + field.grad_laplacian(y, t) * c;
    let b = (field.material(y, t) - &p.g) * (1.5 * p.r - 1.0)
        + field.material_laplacian(y, t) * ((p.r / 20.0 - 1.0 / 6.0) * p.gamma_over_mu())
        - &m * &lap * c;
    finite_vec(&a, "A", y, t)?;
    finite_vec(&b, "B", y, t)?;
    finite_mat(&m, "M", y, t)?;
    Ok((a, b, m))
}

/// `∂M_{ik}/∂y_j` contracted with `v` over `k`.
fn contract_dm(field: &dyn FlowField, c: f64, y: &DVector<f64>, t: f64, v: &DVector<f64>) -> DMatrix<f64> {
    let s = field.second_grad(y, t);
    let sl = field.second_grad_laplacian(y, t);
    let n = v.len();
    let mut out = DMatrix::zeros(n, n);
    for i in 0..n {
        let row = (&s[i] + &sl[i] * c) * v;
        for j in 0..n {
            out[(i, j)] = row[j];
        }
    }
    out
}

pub fn derived_coefficients(
    field: &dyn FlowField,
    p: &Params,
    y: &DVector<f64>,
    w: &DVector<f64>,
    t: f64,
) -> Result<Coefficients> {
    let (a, b, m) = drift_coefficients(field, p, y, t)?;
    let l = contract_dm(field, p.faxen(), y, t, w);
    finite_mat(&l, "L", y, t)?;
    Ok(Coefficients { a, b, m, l })
}

/// Spatial Jacobian of `B`. (That of `A` is `M`.)
pub fn grad_b(field: &dyn FlowField, p: &Params, y: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
    check_dims(field, p, y)?;
    let c = p.faxen();
    let lap = field.laplacian(y, t);
    let m = field.grad(y, t) + field.grad_laplacian(y, t) * c;
    let gb = field.grad_material(y, t) * (1.5 * p.r - 1.0)
        + field.grad_material_laplacian(y, t) * ((p.r / 20.0 - 1.0 / 6.0) * p.gamma_over_mu())
        - (contract_dm(field, c, y, t, &lap) + m * field.grad_laplacian(y, t)) * c;
    finite_mat(&gb, "grad B", y, t)?;
    Ok(gb)
}

/// One analytic-vs-finite-difference comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DerivativeCheck {
    pub name: String,
    pub discrepancy: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldReport {
    pub checks: Vec<DerivativeCheck>,
    pub max_discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl FieldReport {
    pub fn failures(&self) -> impl Iterator<Item = &DerivativeCheck> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

fn rel(analytic: &[f64], fd: &[f64]) -> f64 {
    let scale = analytic.iter().fold(1.0f64, |m, x| m.max(x.abs()));
    let diff = analytic
        .iter()
        .zip(fd)
        .fold(0.0f64, |m, (a, f)| m.max((a - f).abs()));
    diff / scale
}

/// Central difference of a vector evaluator: column `j` is `∂f/∂x_j`.
fn fd_jacobian(f: impl Fn(&DVector<f64>) -> DVector<f64>, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = x.len();
    let m = f(x).len();
    let mut out = DMatrix::zeros(m, n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[j] += h;
        xm[j] -= h;
        out.set_column(j, &((f(&xp) - f(&xm)) / (2.0 * h)));
    }
    out
}

fn fd_tensor(f: impl Fn(&DVector<f64>) -> DMatrix<f64>, x: &DVector<f64>, h: f64) -> Vec<f64> {
    // flattened as [i][j][k] with k the differentiation direction
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        cols.push((f(&xp) - f(&xm)) / (2.0 * h));
    }
    let mut out = Vec::with_capacity(n * n * n);
    for i in 0..n {
        for j in 0..n {
            for col in cols.iter() {
                out.push(col[(i, j)]);
            }
        }
    }
    out
}

fn flat_tensor(t: &Tensor3) -> Vec<f64> {
    let n = t.len();
    let mut out = Vec::with_capacity(n * n * n);
    for m in t {
        for j in 0..n {
            for k in 0..n {
                out.push(m[(j, k)]);
            }
        }
    }
    out
}

/// Compares every derivative evaluator against central differences of the
/// evaluator one order below. Discrepancies are `max|analytic - fd| / max(1, max|analytic|)`.
pub fn verify_field_derivatives(
    field: &dyn FlowField,
    samples: &[(DVector<f64>, f64)],
    h: f64,
    tolerance: f64,
) -> FieldReport {
    let mut worst: Vec<(&str, f64)> = vec![
        ("grad", 0.0),
        ("laplacian", 0.0),
        ("grad_laplacian", 0.0),
        ("second_grad", 0.0),
        ("second_grad_laplacian", 0.0),
        ("time_derivative", 0.0),
        ("laplacian_time_derivative", 0.0),
        ("material", 0.0),
        ("material_laplacian", 0.0),
        ("grad_material", 0.0),
        ("grad_material_laplacian", 0.0),
    ];
    for (x, t) in samples {
        let t = *t;
        let mut d = Vec::with_capacity(worst.len());

        let g = field.grad(x, t);
        d.push(rel(g.as_slice(), fd_jacobian(|z| field.velocity(z, t), x, h).as_slice()));

        let lap = field.laplacian(x, t);
        // Δu_i = Σ_j ∂/∂x_j (∇u)_{ij}
        let n = x.len();
        let lap_fd: Vec<f64> = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut xp = x.clone();
                        let mut xm = x.clone();
                        xp[j] += h;
                        xm[j] -= h;
                        (field.grad(&xp, t)[(i, j)] - field.grad(&xm, t)[(i, j)]) / (2.0 * h)
                    })
                    .sum()
            })
            .collect();
        d.push(rel(lap.as_slice(), &lap_fd));

        let gl = field.grad_laplacian(x, t);
        d.push(rel(gl.as_slice(), fd_jacobian(|z| field.laplacian(z, t), x, h).as_slice()));

        d.push(rel(
            &flat_tensor(&field.second_grad(x, t)),
            &fd_tensor(|z| field.grad(z, t), x, h),
        ));
        d.push(rel(
            &flat_tensor(&field.second_grad_laplacian(x, t)),
            &fd_tensor(|z| field.grad_laplacian(z, t), x, h),
        ));

        let dt_fd = (field.velocity(x, t + h) - field.velocity(x, t - h)) / (2.0 * h);
        let ut = field.time_derivative(x, t);
        d.push(rel(ut.as_slice(), dt_fd.as_slice()));
        let dlt_fd = (field.laplacian(x, t + h) - field.laplacian(x, t - h)) / (2.0 * h);
        let lt = field.laplacian_time_derivative(x, t);
        d.push(rel(lt.as_slice(), dlt_fd.as_slice()));

        let u = field.velocity(x, t);
        let mat_ref = &ut + &g * &u;
        d.push(rel(field.material(x, t).as_slice(), mat_ref.as_slice()));
        let matl_ref = &lt + &gl * &u;
        d.push(rel(field.material_laplacian(x, t).as_slice(), matl_ref.as_slice()));

        d.push(rel(
            field.grad_material(x, t).as_slice(),
            fd_jacobian(|z| field.material(z, t), x, h).as_slice(),
        ));
        d.push(rel(
            field.grad_material_laplacian(x, t).as_slice(),
            fd_jacobian(|z| field.material_laplacian(z, t), x, h).as_slice(),
        ));

        for (slot, v) in worst.iter_mut().zip(d) {
            // NaN must surface as a failure
            slot.1 = if v.is_nan() || slot.1.is_nan() { f64::NAN } else { slot.1.max(v) };
        }
    }
    let checks: Vec<DerivativeCheck> = worst
        .into_iter()
        .map(|(name, v)| DerivativeCheck {
            name: name.into(),
            discrepancy: v,
            pass: v <= tolerance,
        })
        .collect();
    let max_discrepancy = checks
        .iter()
        .fold(0.0f64, |m, c| if c.discrepancy.is_nan() { f64::NAN } else { m.max(c.discrepancy) });
    FieldReport {
        pass: checks.iter().all(|c| c.pass),
        checks,
        max_discrepancy,
        tolerance,
    }
}
