//! Derivatives of the solution with respect to the initial state.
//!
//! The variational system is the exact derivative of the discrete marching
//! scheme, so it agrees with finite differences of [`solve`] up to the
//! differencing error alone.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flowfield::{FlowField, Params};
use crate::fractional::{abel_weights_to, UniformAbel};
use crate::solver::{abel_full, abel_prefix, solve, Dynamics, MaxeyRiley, SolverOptions, State, Trajectory};
use crate::fractional::TimeGrid;

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTrajectory {
    pub grid: TimeGrid,
    /// `Dφ = (Dy; Dw)`, `2n × 2n`, one per grid point.
    pub dphi: Vec<DMatrix<f64>>,
    pub dphi_inv: Option<Vec<DMatrix<f64>>>,
    pub base: Trajectory,
    /// `Dφ_{k+1} - Dφ_k` assembled from the coefficient terms of the scheme.
    increments: Vec<DMatrix<f64>>,
    /// Regular-integral generator `[[∇A, I], [∇B - L, -(mu + M)]]` per node.
    generators: Vec<DMatrix<f64>>,
    memory: f64,
}

fn flat(m: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(m.as_slice())
}

fn unflat(v: &DVector<f64>, rows: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(rows, v.len() / rows, v.as_slice())
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, c) = top.shape();
    let mut out = DMatrix::zeros(2 * n, c);
    out.view_mut((0, 0), (n, c)).copy_from(top);
    out.view_mut((n, 0), (n, c)).copy_from(bottom);
    out
}

/// Integrates the variational equations along `base`.
pub fn solve_variational_dynamics(base: &Trajectory, dynamics: &dyn Dynamics) -> Result<SensitivityTrajectory> {
    let grid = &base.grid;
    let h = grid.step().ok_or_else(|| Error::Grid("variational solve needs a uniform grid".into()))?;
    let n = base.dim();
    let two = 2 * n;
    let steps = grid.steps();
    let table = UniformAbel::new(h, steps);
    let drag = dynamics.drag();
    let mem = dynamics.memory();
    let denom = 1.0 + 0.5 * h * drag + mem * table.diagonal();
    let pts = grid.points();

    let generator = |k: usize| -> Result<(DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let s = &base.states[k];
        let (_, _, m) = dynamics.drift(&s.y, pts[k])?;
        let lin = dynamics.linearization(&s.y, &s.w, pts[k])?;
        let mut c = DMatrix::zeros(two, two);
        c.view_mut((0, 0), (n, n)).copy_from(&lin.grad_a);
        c.view_mut((0, n), (n, n)).fill_with_identity();
        c.view_mut((n, 0), (n, n)).copy_from(&(&lin.grad_b - &lin.l));
        c.view_mut((n, n), (n, n)).copy_from(&(-&m - DMatrix::identity(n, n) * drag));
        Ok((c, lin.grad_a, lin.grad_b - lin.l))
    };

    let ident = DMatrix::<f64>::identity(two, two);
    let mut dphi = vec![ident.clone()];
    let mut dws = vec![flat(&ident.rows(n, n).into_owned())];
    let (c0, _, _) = generator(0)?;
    let mut rates = vec![&c0 * &ident];
    let mut generators = vec![c0];
    let mut acc_w = DMatrix::zeros(n, two);
    let mut abel_prev = DMatrix::zeros(n, two);
    let mut increments = Vec::with_capacity(steps);

    for k in 1..=steps {
        let (c, grad_a, coupling) = generator(k)?;
        let m = -(c.view((n, n), (n, n)).into_owned() + DMatrix::identity(n, n) * drag);
        let last = &dphi[k - 1];
        let rate_prev = &rates[k - 1];
        let hist = unflat(&abel_prefix(&table, &dws, k, k - 1), n);
        let cw = dphi[0].rows(n, n) + &acc_w + rate_prev.rows(n, n) * (0.5 * h) - &hist * mem;
        let cy = last.rows(0, n) + rate_prev.rows(0, n) * (0.5 * h);

        let mut sys = DMatrix::zeros(two, two);
        sys.view_mut((0, 0), (n, n))
            .copy_from(&(DMatrix::identity(n, n) - &grad_a * (0.5 * h)));
        sys.view_mut((0, n), (n, n))
            .copy_from(&(DMatrix::identity(n, n) * (-0.5 * h)));
        sys.view_mut((n, 0), (n, n)).copy_from(&(&coupling * (-0.5 * h)));
        sys.view_mut((n, n), (n, n))
            .copy_from(&(DMatrix::identity(n, n) * denom + &m * (0.5 * h)));
        let rhs = stack(&cy.into_owned(), &cw.into_owned());
        let x = sys
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Singular(format!("variational step matrix at t = {}", pts[k])))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                time: pts[k],
                last_norm: last.norm(),
                bound: f64::NAN,
            });
        }
        let rate = &c * &x;
        dws.push(flat(&x.rows(n, n).into_owned()));
        let abel = unflat(&abel_full(&table, &dws, k), n);
        let trap = (rate_prev + &rate) * (0.5 * h);
        acc_w += trap.rows(n, n);
        let mut inc = trap;
        let mem_inc = (&abel - &abel_prev) * mem;
        let mut lower = inc.rows_mut(n, n);
        lower -= &mem_inc;
        increments.push(inc);
        abel_prev = abel;
        rates.push(rate);
        generators.push(c);
        dphi.push(x);
    }
    Ok(SensitivityTrajectory {
        grid: grid.clone(),
        dphi,
        dphi_inv: None,
        base: base.clone(),
        increments,
        generators,
        memory: mem,
    })
}

pub fn solve_variational(base: &Trajectory, field: &dyn FlowField, params: &Params) -> Result<SensitivityTrajectory> {
    solve_variational_dynamics(base, &MaxeyRiley::new(field, params)?)
}

impl SensitivityTrajectory {
    /// Fills `dphi_inv` by the product rule `N_{k+1} = (I + N_k Δ_k)^{-1} N_k`,
    /// with `Δ_k` the scheme increment of `Dφ`, starting from `N_0 = I`.
    pub fn attach_inverse(&mut self) -> Result<()> {
        let two = self.dphi[0].nrows();
        let ident = DMatrix::<f64>::identity(two, two);
        let mut inv = vec![ident.clone()];
        for (k, inc) in self.increments.iter().enumerate() {
            let nk = &inv[k];
            let step = &ident + nk * inc;
            let next = step.lu().solve(nk).ok_or_else(|| {
                Error::Singular(format!("inverse update at t = {}", self.grid.points()[k + 1]))
            })?;
            inv.push(next);
        }
        self.dphi_inv = Some(inv);
        Ok(())
    }

    /// `max_k |N_k Dφ_k - I|_F`.
    pub fn inverse_identity_error(&self) -> Result<f64> {
        let inv = self.dphi_inv.as_ref().ok_or_else(|| Error::Missing("inverse not computed".into()))?;
        let two = self.dphi[0].nrows();
        let ident = DMatrix::<f64>::identity(two, two);
        Ok(inv
            .iter()
            .zip(&self.dphi)
            .map(|(n, m)| (n * m - &ident).norm())
            .fold(0.0, f64::max))
    }

    /// Residual of the backward integral equation
    ///
    /// ```text
    /// N(s) = I - ∫_{t0}^s N(r) C(r) dr + kappa sqrt(mu) ∫_s^t N(r) P / sqrt(r - s) dr
    /// ```
    ///
    /// (`P` projects on the `w` rows, `C` is the regular generator) evaluated
    /// on the computed inverse, with `t` the last grid time. Only a constant
    /// generator without memory makes this vanish in general; the value is
    /// reported, not asserted.
    pub fn backward_equation_residual(&self) -> Result<f64> {
        let inv = self.dphi_inv.as_ref().ok_or_else(|| Error::Missing("inverse not computed".into()))?;
        let pts = self.grid.points();
        let len = pts.len();
        let two = inv[0].nrows();
        let n = two / 2;
        let ident = DMatrix::<f64>::identity(two, two);
        let nc: Vec<DMatrix<f64>> = inv.iter().zip(&self.generators).map(|(a, c)| a * c).collect();
        let mut proj = DMatrix::zeros(two, two);
        proj.view_mut((n, n), (n, n)).fill_with_identity();
        let np: Vec<DMatrix<f64>> = inv.iter().map(|a| a * &proj).collect();
        // mirrored times for the right-sided kernel
        let mirrored: Vec<f64> = pts.iter().rev().map(|t| -t).collect();

        let mut regular = DMatrix::zeros(two, two);
        let mut worst: f64 = 0.0;
        for k in 0..len {
            if k > 0 {
                regular += (&nc[k - 1] + &nc[k]) * (0.5 * (pts[k] - pts[k - 1]));
            }
            let mut right = DMatrix::zeros(two, two);
            if k + 1 < len {
                let seg = &mirrored[..len - k];
                let wts = abel_weights_to(seg, -pts[k]);
                for (i, wt) in wts.iter().enumerate() {
                    right += &np[len - 1 - i] * *wt;
                }
            }
            let res = &inv[k] - &ident + &regular - right * self.memory;
            worst = worst.max(res.norm());
        }
        Ok(worst)
    }
}

/// Inverse of `Dφ` on the grid points up to `t`.
pub fn solve_inverse(base: &Trajectory, field: &dyn FlowField, params: &Params, t: f64) -> Result<Vec<DMatrix<f64>>> {
    let idx = base
        .grid
        .index_of(t)
        .ok_or_else(|| Error::Precondition(format!("t = {t} is not a grid time")))?;
    let mut sens = solve_variational(base, field, params)?;
    sens.attach_inverse()?;
    let mut inv = sens.dphi_inv.take().expect("just attached");
    inv.truncate(idx + 1);
    Ok(inv)
}

/// Spectral norm by power iteration on `MᵀM`.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    let gram = m.transpose() * m;
    let c = gram.ncols();
    if c == 0 || gram.amax() == 0.0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(c, |i, _| 1.0 / (i as f64 + 1.0));
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..100_000 {
        let next = &gram * &v;
        let nn = next.norm();
        if nn == 0.0 {
            return 0.0;
        }
        let est = v.dot(&next);
        v = next / nn;
        if (est - lambda).abs() <= 1e-10 * est.abs() {
            lambda = est;
            break;
        }
        lambda = est;
    }
    lambda.max(0.0).sqrt()
}

/// `(M, M̃)`: suprema over the grid of `|Dφ|` and `|Dφ^{-1}|`. For initial
/// states `x1, x2` the terminal distance lies in `[|x2-x1|/M̃, M |x2-x1|]`.
pub fn separation_bounds(sens: &SensitivityTrajectory) -> Result<(f64, f64)> {
    let inv = sens
        .dphi_inv
        .as_ref()
        .ok_or_else(|| Error::Missing("separation floor needs the inverse of Dφ".into()))?;
    let m = sens.dphi.par_iter().map(spectral_norm).reduce(|| 0.0, f64::max);
    let mt = inv.par_iter().map(spectral_norm).reduce(|| 0.0, f64::max);
    Ok((m, mt))
}

#[derive(Debug, Clone, PartialEq)]
pub struct FdJacobian {
    pub central: DMatrix<f64>,
    pub forward: DMatrix<f64>,
    pub backward: DMatrix<f64>,
}

/// Difference quotients of the terminal state over each initial coordinate.
#[allow(clippy::too_many_arguments)]
pub fn fd_jacobian(
    field: &dyn FlowField,
    params: &Params,
    ic: &State,
    t0: f64,
    t_end: f64,
    steps: usize,
    h: f64,
    opts: &SolverOptions,
) -> Result<FdJacobian> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Precondition(format!("perturbation must be positive, got {h}")));
    }
    let x0 = ic.stacked();
    let two = x0.len();
    let run = |x: DVector<f64>| -> Result<DVector<f64>> {
        let tr = solve(field, params, &State::from_stacked(&x), t0, t_end, steps, opts)?;
        Ok(tr.last().stacked())
    };
    let centre = run(x0.clone())?;
    let cols: Vec<(DVector<f64>, DVector<f64>)> = (0..two)
        .into_par_iter()
        .map(|j| {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[j] += h;
            xm[j] -= h;
            Ok((run(xp)?, run(xm)?))
        })
        .collect::<Result<_>>()?;
    let mut out = FdJacobian {
        central: DMatrix::zeros(two, two),
        forward: DMatrix::zeros(two, two),
        backward: DMatrix::zeros(two, two),
    };
    for (j, (p, m)) in cols.iter().enumerate() {
        out.central.set_column(j, &((p - m) / (2.0 * h)));
        out.forward.set_column(j, &((p - &centre) / h));
        out.backward.set_column(j, &((&centre - m) / h));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowfield::{make_field, FieldSpec};
    use crate::solver::TimeReversed;
    use approx::assert_relative_eq;

    fn tg_setup() -> (Box<dyn FlowField>, Params, State) {
        let f = make_field(&FieldSpec::TaylorGreen {
            amplitude: 1.0,
            wavenumber: 1.0,
        })
        .unwrap();
        let p = Params::derive(2.0 / 3.0, 0.5, 100.0, DVector::zeros(2)).unwrap();
        (f, p, State::from_slices(&[1.0, 0.4], &[0.2, -0.1]).unwrap())
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm()
    }

    #[test]
    fn zero_field_blocks() {
        let f = make_field(&FieldSpec::Zero { dim: 2 }).unwrap();
        let p = Params::derive(1.0, 1.0, 10.0, DVector::zeros(2)).unwrap();
        let ic = State::from_slices(&[0.0, 1.0], &[0.0, 0.0]).unwrap();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 64, &SolverOptions::default()).unwrap();
        let s = solve_variational(&base, f.as_ref(), &p).unwrap();
        assert_eq!(s.dphi[0], DMatrix::identity(4, 4));
        for d in &s.dphi {
            assert_relative_eq!((d.view((0, 0), (2, 2)) - DMatrix::identity(2, 2)).norm(), 0.0, epsilon = 1e-15);
            assert_eq!(d.view((2, 0), (2, 2)).norm(), 0.0);
        }
        // the w-block is the scalar relaxation solution times I
        let scalar = s.dphi[64][(2, 2)];
        assert!(scalar > 0.0 && scalar < 1.0);
        assert_relative_eq!(s.dphi[64][(3, 3)], scalar);
    }

    #[test]
    fn double_integrator_closed_form() {
        // no drag, no memory: Dy/dw0 = (t - t0) I
        let f = make_field(&FieldSpec::Zero { dim: 2 }).unwrap();
        let p = Params::from_coefficients(0.0, 0.0, 0.0, DVector::zeros(2)).unwrap();
        let ic = State::from_slices(&[0.0, 0.0], &[1.0, 0.0]).unwrap();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 16, &SolverOptions::default()).unwrap();
        let mut s = solve_variational(&base, f.as_ref(), &p).unwrap();
        assert_relative_eq!(s.dphi[16][(0, 2)], 1.0, epsilon = 1e-14);
        s.attach_inverse().unwrap();
        let (m, mt) = separation_bounds(&s).unwrap();
        // [[I, I], [0, I]] has norm (1 + sqrt 5)/2
        assert_relative_eq!(m, (1.0 + 5f64.sqrt()) / 2.0, epsilon = 1e-9);
        assert_relative_eq!(mt, m, epsilon = 1e-9);
        assert!(m >= 2f64.sqrt());
    }

    #[test]
    fn identity_at_start() {
        let (f, p, ic) = tg_setup();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 0.5, 8, &SolverOptions::default()).unwrap();
        let mut s = solve_variational(&base, f.as_ref(), &p).unwrap();
        s.attach_inverse().unwrap();
        assert_eq!(spectral_norm(&s.dphi[0]), 1.0);
        assert!(separation_bounds(&SensitivityTrajectory { dphi_inv: None, ..s.clone() }).is_err());
    }

    #[test]
    fn matches_finite_differences() {
        let (f, p, ic) = tg_setup();
        let opts = SolverOptions::default();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 128, &opts).unwrap();
        let s = solve_variational(&base, f.as_ref(), &p).unwrap();
        let fd = fd_jacobian(f.as_ref(), &p, &ic, 0.0, 1.0, 128, 1e-6, &opts).unwrap();
        assert!(rel_err(&s.dphi[128], &fd.central) < 1e-7);
        // one-sided estimates bracket the central one up to O(h)
        let spread = (&fd.forward - &fd.backward).amax();
        assert!((&fd.central - (&fd.forward + &fd.backward) * 0.5).amax() <= 1e-12 + spread);
    }

    #[test]
    fn fd_error_shrinks_quadratically() {
        let (f, p, ic) = tg_setup();
        let opts = SolverOptions::default();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 64, &opts).unwrap();
        let s = solve_variational(&base, f.as_ref(), &p).unwrap();
        let e = |h: f64| rel_err(&fd_jacobian(f.as_ref(), &p, &ic, 0.0, 1.0, 64, h, &opts).unwrap().central, &s.dphi[64]);
        let (e3, e4) = (e(1e-3), e(1e-4));
        assert!(e4 < e3 / 50.0, "{e3} {e4}");
    }

    #[test]
    fn inverse_product_is_identity() {
        let (f, p, ic) = tg_setup();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 128, &SolverOptions::default()).unwrap();
        let mut s = solve_variational(&base, f.as_ref(), &p).unwrap();
        s.attach_inverse().unwrap();
        assert!(s.inverse_identity_error().unwrap() < 1e-10);
        let inv = solve_inverse(&base, f.as_ref(), &p, 0.5).unwrap();
        assert_eq!(inv.len(), 65);
    }

    #[test]
    fn backward_equation_holds_without_memory() {
        let f = make_field(&FieldSpec::Zero { dim: 1 }).unwrap();
        let p = Params::from_coefficients(1.0, 0.0, 0.0, DVector::zeros(1)).unwrap();
        let ic = State::from_slices(&[0.0], &[1.0]).unwrap();
        let base = solve(f.as_ref(), &p, &ic, 0.0, 1.0, 256, &SolverOptions::default()).unwrap();
        let mut s = solve_variational(&base, f.as_ref(), &p).unwrap();
        s.attach_inverse().unwrap();
        assert!(s.backward_equation_residual().unwrap() < 1e-4);
        assert!(s.inverse_identity_error().unwrap() < 1e-12);

        // with memory the backward form is not the inverse
        let pm = Params::from_coefficients(1.0, 1.0, 0.0, DVector::zeros(1)).unwrap();
        let base = solve(f.as_ref(), &pm, &ic, 0.0, 1.0, 256, &SolverOptions::default()).unwrap();
        let mut s = solve_variational(&base, f.as_ref(), &pm).unwrap();
        s.attach_inverse().unwrap();
        assert!(s.inverse_identity_error().unwrap() < 1e-12);
        assert!(s.backward_equation_residual().unwrap() > 1e-2);
    }

    #[test]
    fn reversed_linearization_signs() {
        let (f, p, _) = tg_setup();
        let mr = MaxeyRiley::new(f.as_ref(), &p).unwrap();
        let rev = TimeReversed { inner: &mr };
        let y = DVector::from_vec(vec![0.3, 0.2]);
        let w = DVector::from_vec(vec![0.1, 0.5]);
        let a = mr.linearization(&y, &w, 0.4).unwrap();
        let b = rev.linearization(&y, &(-&w), -0.4).unwrap();
        assert_relative_eq!((a.grad_a + b.grad_a).norm(), 0.0);
        assert_relative_eq!((a.l - b.l).norm(), 0.0, epsilon = 1e-15);
    }
}
