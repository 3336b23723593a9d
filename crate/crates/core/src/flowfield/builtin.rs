use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{CoefficientBounds, FlowField, Params, Tensor3};
use crate::error::{Error, Result};

/// Field selection as written in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero {
        #[serde(default = "default_dim")]
        dim: usize,
    },
    /// `u(x, t) = matrix x + offset + drift t`.
    Linear {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        offset: Vec<f64>,
        #[serde(default)]
        drift: Vec<f64>,
    },
    /// Steady 2D cellular flow `U (sin kx cos ky, -cos kx sin ky)`.
    TaylorGreen {
        #[serde(default = "unit")]
        amplitude: f64,
        #[serde(default = "unit")]
        wavenumber: f64,
    },
}

fn default_dim() -> usize {
    2
}

fn unit() -> f64 {
    1.0
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec::Zero { dim: 2 }
    }
}

impl FieldSpec {
    pub fn dim(&self) -> usize {
        match self {
            FieldSpec::Zero { dim } => *dim,
            FieldSpec::Linear { matrix, .. } => matrix.len(),
            FieldSpec::TaylorGreen { .. } => 2,
        }
    }
}

pub fn make_field(spec: &FieldSpec) -> Result<Box<dyn FlowField>> {
    match spec {
        FieldSpec::Zero { dim } => {
            if *dim == 0 {
                return Err(Error::Field("zero field needs dim >= 1".into()));
            }
            Ok(Box::new(ZeroField { dim: *dim }))
        }
        FieldSpec::Linear {
            matrix,
            offset,
            drift,
        } => {
            let n = matrix.len();
            if n == 0 || matrix.iter().any(|r| r.len() != n) {
                return Err(Error::Field("linear field matrix must be square and nonempty".into()));
            }
            let flat: Vec<f64> = matrix.iter().flatten().copied().collect();
            let a = DMatrix::from_row_slice(n, n, &flat);
            let vec_or_zero = |v: &Vec<f64>, name: &str| -> Result<DVector<f64>> {
                match v.len() {
                    0 => Ok(DVector::zeros(n)),
                    k if k == n => Ok(DVector::from_column_slice(v)),
                    k => Err(Error::Field(format!("linear field {name} has length {k}, expected {n}"))),
                }
            };
            let field = LinearField::new(a, vec_or_zero(offset, "offset")?, vec_or_zero(drift, "drift")?)?;
            Ok(Box::new(field))
        }
        FieldSpec::TaylorGreen {
            amplitude,
            wavenumber,
        } => Ok(Box::new(TaylorGreen::new(*amplitude, *wavenumber)?)),
    }
}

fn zero_tensor(n: usize) -> Tensor3 {
    vec![DMatrix::zeros(n, n); n]
}

#[derive(Debug, Clone)]
pub struct ZeroField {
    pub dim: usize,
}

impl FlowField for ZeroField {
    fn dim(&self) -> usize {
        self.dim
    }
    fn velocity(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn grad(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
    fn laplacian(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn grad_laplacian(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
    fn time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn laplacian_time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn material(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn material_laplacian(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.dim)
    }
    fn grad_material(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
    fn grad_material_laplacian(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.dim, self.dim)
    }
    fn second_grad(&self, _: &DVector<f64>, _: f64) -> Tensor3 {
        zero_tensor(self.dim)
    }
    fn second_grad_laplacian(&self, _: &DVector<f64>, _: f64) -> Tensor3 {
        zero_tensor(self.dim)
    }
    fn bounds(&self, _: &Params) -> Option<CoefficientBounds> {
        Some(CoefficientBounds { l_b: 0.0, l_c: 0.0 })
    }
}

/// Affine flow `u = A x + offset + drift t`.
#[derive(Debug, Clone)]
pub struct LinearField {
    a: DMatrix<f64>,
    offset: DVector<f64>,
    drift: DVector<f64>,
}

impl LinearField {
    pub fn new(a: DMatrix<f64>, offset: DVector<f64>, drift: DVector<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || offset.len() != n || drift.len() != n {
            return Err(Error::Field("inconsistent linear field dimensions".into()));
        }
        if a.iter().chain(offset.iter()).chain(drift.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Field("linear field coefficients must be finite".into()));
        }
        Ok(LinearField { a, offset, drift })
    }

    pub fn homogeneous(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        Self::new(a, DVector::zeros(n), DVector::zeros(n))
    }

    fn n(&self) -> usize {
        self.a.nrows()
    }
}

impl FlowField for LinearField {
    fn dim(&self) -> usize {
        self.n()
    }
    fn velocity(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        &self.a * x + &self.offset + &self.drift * t
    }
    fn grad(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        self.a.clone()
    }
    fn laplacian(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.n())
    }
    fn grad_laplacian(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.n(), self.n())
    }
    fn time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        self.drift.clone()
    }
    fn laplacian_time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.n())
    }
    fn material(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        &self.drift + &self.a * self.velocity(x, t)
    }
    fn material_laplacian(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(self.n())
    }
    fn grad_material(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        &self.a * &self.a
    }
    fn grad_material_laplacian(&self, _: &DVector<f64>, _: f64) -> DMatrix<f64> {
        DMatrix::zeros(self.n(), self.n())
    }
    fn second_grad(&self, _: &DVector<f64>, _: f64) -> Tensor3 {
        zero_tensor(self.n())
    }
    fn second_grad_laplacian(&self, _: &DVector<f64>, _: f64) -> Tensor3 {
        zero_tensor(self.n())
    }
    fn bounds(&self, p: &Params) -> Option<CoefficientBounds> {
        // ∇A = A, ∂tA = drift, ∇B = s A², ∂tB = s A drift
        let s = (1.5 * p.r - 1.0).abs();
        let grad = self.a.norm().max(s * (&self.a * &self.a).norm());
        let time = self.drift.norm().max(s * (&self.a * &self.drift).norm());
        Some(CoefficientBounds {
            l_b: grad.max(time),
            l_c: grad,
        })
    }
}

/// Steady Taylor-Green vortex cell in two dimensions.
#[derive(Debug, Clone, Copy)]
pub struct TaylorGreen {
    pub amplitude: f64,
    pub wavenumber: f64,
}

impl TaylorGreen {
    pub fn new(amplitude: f64, wavenumber: f64) -> Result<Self> {
        if !(amplitude.is_finite() && wavenumber.is_finite()) {
            return Err(Error::Field("taylor_green parameters must be finite".into()));
        }
        if wavenumber <= 0.0 {
            return Err(Error::Field(format!("taylor_green wavenumber must be positive, got {wavenumber}")));
        }
        Ok(TaylorGreen {
            amplitude,
            wavenumber,
        })
    }

    fn trig(&self, x: &DVector<f64>) -> (f64, f64, f64, f64) {
        let k = self.wavenumber;
        let (sx, cx) = (k * x[0]).sin_cos();
        let (sy, cy) = (k * x[1]).sin_cos();
        (sx, cx, sy, cy)
    }

    /// Ratio `-Δu / u = 2 k²`.
    fn lap_factor(&self) -> f64 {
        -2.0 * self.wavenumber * self.wavenumber
    }
}

impl FlowField for TaylorGreen {
    fn dim(&self) -> usize {
        2
    }
    fn velocity(&self, x: &DVector<f64>, _: f64) -> DVector<f64> {
        let (sx, cx, sy, cy) = self.trig(x);
        let u = self.amplitude;
        DVector::from_vec(vec![u * sx * cy, -u * cx * sy])
    }
    fn grad(&self, x: &DVector<f64>, _: f64) -> DMatrix<f64> {
        let (sx, cx, sy, cy) = self.trig(x);
        let uk = self.amplitude * self.wavenumber;
        DMatrix::from_row_slice(2, 2, &[uk * cx * cy, -uk * sx * sy, uk * sx * sy, -uk * cx * cy])
    }
    fn laplacian(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.velocity(x, t) * self.lap_factor()
    }
    fn grad_laplacian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.grad(x, t) * self.lap_factor()
    }
    fn time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn laplacian_time_derivative(&self, _: &DVector<f64>, _: f64) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn material(&self, x: &DVector<f64>, _: f64) -> DVector<f64> {
        let k = self.wavenumber;
        let c = 0.5 * self.amplitude * self.amplitude * k;
        DVector::from_vec(vec![c * (2.0 * k * x[0]).sin(), c * (2.0 * k * x[1]).sin()])
    }
    fn material_laplacian(&self, x: &DVector<f64>, t: f64) -> DVector<f64> {
        self.material(x, t) * self.lap_factor()
    }
    fn grad_material(&self, x: &DVector<f64>, _: f64) -> DMatrix<f64> {
        let k = self.wavenumber;
        let c = self.amplitude * self.amplitude * k * k;
        DMatrix::from_diagonal(&DVector::from_vec(vec![
            c * (2.0 * k * x[0]).cos(),
            c * (2.0 * k * x[1]).cos(),
        ]))
    }
    fn grad_material_laplacian(&self, x: &DVector<f64>, t: f64) -> DMatrix<f64> {
        self.grad_material(x, t) * self.lap_factor()
    }
    fn second_grad(&self, x: &DVector<f64>, _: f64) -> Tensor3 {
        let (sx, cx, sy, cy) = self.trig(x);
        let c = self.amplitude * self.wavenumber * self.wavenumber;
        vec![
            DMatrix::from_row_slice(2, 2, &[-c * sx * cy, -c * cx * sy, -c * cx * sy, -c * sx * cy]),
            DMatrix::from_row_slice(2, 2, &[c * cx * sy, c * sx * cy, c * sx * cy, c * cx * sy]),
        ]
    }
    fn second_grad_laplacian(&self, x: &DVector<f64>, t: f64) -> Tensor3 {
        let f = self.lap_factor();
        self.second_grad(x, t).into_iter().map(|m| m * f).collect()
    }
    fn bounds(&self, p: &Params) -> Option<CoefficientBounds> {
        let (u, k) = (self.amplitude.abs(), self.wavenumber);
        let ck2 = p.faxen() * k * k;
        let beta = (1.5 * p.r - 1.0) - 2.0 * k * k * (p.r / 20.0 - 1.0 / 6.0) * p.gamma_over_mu()
            + 2.0 * ck2 * (1.0 - 2.0 * ck2);
        // Frobenius norms: |∇u|_F <= sqrt(2) U k, |∇(Du/Dt)|_F <= sqrt(2) U² k²
        let l = 2f64.sqrt() * ((1.0 - 2.0 * ck2).abs() * u * k).max(beta.abs() * u * u * k * k);
        Some(CoefficientBounds { l_b: l, l_c: l })
    }
}
