//! Abel-kernel quadrature and order-1/2 fractional operators on sampled paths.
//!
//! All operators integrate the piecewise-linear interpolant of the samples
//! exactly against the kernel `(t - s)^{-1/2}` (product trapezoidal rule).

use std::f64::consts::PI;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Strictly increasing sample times starting at `t0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
    step: Option<f64>,
}

impl TimeGrid {
    /// `steps` equal intervals on `[t0, t_end]`.
    pub fn uniform(t0: f64, t_end: f64, steps: usize) -> Result<Self> {
        if !(t0.is_finite() && t_end.is_finite()) || t_end <= t0 {
            return Err(Error::Grid(format!("need t0 < T, got [{t0}, {t_end}]")));
        }
        if steps < 1 {
            return Err(Error::Grid("need at least one step".into()));
        }
        let h = (t_end - t0) / steps as f64;
        let mut points: Vec<f64> = (0..=steps).map(|i| t0 + i as f64 * h).collect();
        points[steps] = t_end;
        Ok(TimeGrid {
            points,
            step: Some(h),
        })
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::Grid("need at least two points".into()));
        }
        if points.iter().any(|t| !t.is_finite()) {
            return Err(Error::Grid("non-finite time".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Grid("times must be strictly increasing".into()));
        }
        Ok(TimeGrid { points, step: None })
    }

    pub fn t0(&self) -> f64 {
        self.points[0]
    }

    pub fn end(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    /// Uniform spacing, if the grid was built with [`TimeGrid::uniform`].
    pub fn step(&self) -> Option<f64> {
        self.step
    }

    pub fn steps(&self) -> usize {
        self.points.len() - 1
    }

    /// Index of the grid point equal to `t` up to a small fraction of the local spacing.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let i = self.points.partition_point(|&p| p < t);
        let tol = 1e-9 * (self.end() - self.t0()).max(1.0) / self.steps() as f64;
        [i.checked_sub(1), Some(i)]
            .into_iter()
            .flatten()
            .filter(|&k| k < self.points.len())
            .find(|&k| (self.points[k] - t).abs() <= tol)
    }
}

/// Vector-valued samples on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampledPath {
    grid: TimeGrid,
    values: Vec<DVector<f64>>,
}

impl SampledPath {
    pub fn new(grid: TimeGrid, values: Vec<DVector<f64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::Dimension(format!(
                "{} values for {} grid points",
                values.len(),
                grid.len()
            )));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::Dimension("values of differing dimension".into()));
        }
        if values.iter().any(|v| v.iter().any(|x| !x.is_finite())) {
            return Err(Error::Precondition("path values must be finite".into()));
        }
        Ok(SampledPath { grid, values })
    }

    pub fn from_fn(grid: TimeGrid, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let values = grid.points().iter().map(|&t| f(t)).collect();
        Self::new(grid, values)
    }

    pub fn scalar(grid: TimeGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::from_fn(grid, |t| DVector::from_element(1, f(t)))
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    /// Component `c` of every sample.
    pub fn component(&self, c: usize) -> Vec<f64> {
        self.values.iter().map(|v| v[c]).collect()
    }

    /// The same samples on the mirrored axis `s -> -s`, in increasing time order.
    pub fn reversed(&self) -> SampledPath {
        let points = self.grid.points().iter().rev().map(|t| -t).collect();
        let grid = TimeGrid {
            points,
            step: self.grid.step,
        };
        let values = self.values.iter().rev().cloned().collect();
        SampledPath { grid, values }
    }
}

/// Node weights of the product trapezoidal rule for `∫_{t0}^{t_n} f(s) (t_n - s)^{-1/2} ds`.
#[derive(Debug, Clone, PartialEq)]
pub struct AbelWeights {
    pub target_index: usize,
    pub weights: Vec<f64>,
}

impl AbelWeights {
    pub fn apply(&self, values: &[DVector<f64>]) -> DVector<f64> {
        let mut acc = DVector::zeros(values[0].len());
        for (w, v) in self.weights.iter().zip(values) {
            acc.axpy(*w, v, 1.0);
        }
        acc
    }
}

/// Exact weights of the linear interpolant on `[left, right]` against
/// `(target - s)^{-1/2}`, for `target >= right`. Returns `(left weight, right weight)`.
///
/// Written in terms of `d = sqrt(target-left) - sqrt(target-right)` to avoid
/// cancellation on cells far from the target.
pub fn cell_weights(left: f64, right: f64, target: f64) -> (f64, f64) {
    let sa = (target - left).max(0.0).sqrt();
    let sb = (target - right).max(0.0).sqrt();
    let sum = sa + sb;
    let d = (right - left) / sum;
    let c = 2.0 * d / (3.0 * sum);
    (c * (sa + 2.0 * sb), c * (2.0 * sa + sb))
}

/// Node weights for the Abel integral over `points` up to an arbitrary `target >= last point`.
pub fn abel_weights_to(points: &[f64], target: f64) -> Vec<f64> {
    let mut weights = vec![0.0; points.len()];
    for j in 0..points.len().saturating_sub(1) {
        let (a, b) = cell_weights(points[j], points[j + 1], target);
        weights[j] += a;
        weights[j + 1] += b;
    }
    weights
}

pub fn basset_weights(grid: &TimeGrid, n: usize) -> Result<AbelWeights> {
    if n == 0 || n >= grid.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: grid.len(),
        });
    }
    let pts = &grid.points()[..=n];
    Ok(AbelWeights {
        target_index: n,
        weights: abel_weights_to(pts, pts[n]),
    })
}

/// Discrete `∫_{t0}^{t_n} w(s) / sqrt(t_n - s) ds`, componentwise.
pub fn basset_integral(path: &SampledPath, n: usize) -> Result<DVector<f64>> {
    if n == 0 {
        if n >= path.grid.len() {
            return Err(Error::IndexOutOfRange {
                index: n,
                len: path.grid.len(),
            });
        }
        return Ok(DVector::zeros(path.dim()));
    }
    let weights = basset_weights(&path.grid, n)?;
    Ok(weights.apply(&path.values[..=n]))
}

/// Abel integral at every grid point, index 0 included (where it vanishes).
pub fn basset_integral_path(path: &SampledPath) -> SampledPath {
    let values = (0..path.grid.len())
        .map(|n| basset_integral(path, n).expect("index in range"))
        .collect();
    SampledPath {
        grid: path.grid.clone(),
        values,
    }
}

/// Caputo derivative of order 1/2 at `t_n`, from per-interval slopes.
pub fn caputo_half_derivative(path: &SampledPath, n: usize) -> Result<DVector<f64>> {
    if path.grid.len() < 2 {
        return Err(Error::Grid("need at least two samples".into()));
    }
    if n >= path.grid.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: path.grid.len(),
        });
    }
    let pts = path.grid.points();
    let tn = pts[n];
    let mut acc = DVector::zeros(path.dim());
    for j in 0..n {
        // slope * 2 (sqrt(tn - t_j) - sqrt(tn - t_{j+1}))
        let scale = 2.0 / ((tn - pts[j]).sqrt() + (tn - pts[j + 1]).sqrt());
        acc.axpy(scale, &path.values[j + 1], 1.0);
        acc.axpy(-scale, &path.values[j], 1.0);
    }
    Ok(acc / PI.sqrt())
}

/// Left Riemann-Liouville derivative of order 1/2 at `t_n`.
///
/// Evaluated as the Caputo value plus the boundary term
/// `f(t0) / sqrt(pi (t_n - t0))`; it diverges as `t_n -> t0` unless `f(t0) = 0`.
pub fn rl_half_derivative(path: &SampledPath, n: usize) -> Result<DVector<f64>> {
    let caputo = caputo_half_derivative(path, n)?;
    let f0 = &path.values[0];
    if n == 0 {
        if f0.iter().any(|x| *x != 0.0) {
            return Err(Error::SingularAtInitialTime);
        }
        return Ok(caputo);
    }
    let elapsed = path.grid.points()[n] - path.grid.t0();
    Ok(caputo + f0 / (PI * elapsed).sqrt())
}

/// Right Riemann-Liouville derivative of order 1/2 at `t_n` with upper terminal `b`.
///
/// Mirrors the segment `[t_n, b]` through `s -> -s` and evaluates the left
/// derivative there. A `b` between grid points is appended by linear interpolation.
pub fn right_rl_half_derivative(path: &SampledPath, n: usize, b: f64) -> Result<DVector<f64>> {
    let pts = path.grid.points();
    if n >= pts.len() {
        return Err(Error::IndexOutOfRange {
            index: n,
            len: pts.len(),
        });
    }
    let tn = pts[n];
    if b <= tn {
        return Err(Error::Precondition(format!(
            "right terminal b = {b} must exceed t = {tn}"
        )));
    }
    if b > path.grid.end() * (1.0 + 1e-14) + 1e-300 && b > path.grid.end() {
        return Err(Error::Precondition(format!(
            "right terminal b = {b} beyond grid end {}",
            path.grid.end()
        )));
    }
    let last = pts.partition_point(|&p| p <= b) - 1;
    let mut times: Vec<f64> = pts[n..=last].to_vec();
    let mut values: Vec<DVector<f64>> = path.values[n..=last].to_vec();
    if b > pts[last] {
        let (t_a, t_b) = (pts[last], pts[last + 1]);
        let theta = (b - t_a) / (t_b - t_a);
        let v = &path.values[last] * (1.0 - theta) + &path.values[last + 1] * theta;
        times.push(b);
        values.push(v);
    }
    let segment = SampledPath::new(TimeGrid::from_points(times)?, values)?;
    let mirrored = segment.reversed();
    let idx = mirrored.grid.len() - 1;
    rl_half_derivative(&mirrored, idx)
}

/// `a_k = ∫_0^1 sqrt(x^k / (1 - x)) dx` via `a_k = k/(k+1) a_{k-2}`, `a_0 = 2`, `a_1 = pi/2`.
pub fn wallis(k: u64) -> f64 {
    let mut a = if k.is_multiple_of(2) { 2.0 } else { PI / 2.0 };
    let mut j = if k.is_multiple_of(2) { 2 } else { 3 };
    while j <= k {
        a *= j as f64 / (j as f64 + 1.0);
        j += 2;
    }
    a
}

/// Cached Abel cell weights for a uniform grid.
///
/// For step `h` the weights of a cell whose right end lies `m - 1` steps
/// before the target depend only on `m`, so one table serves every target.
#[derive(Debug, Clone)]
pub struct UniformAbel {
    sqrt_h: f64,
    left: Vec<f64>,
    right: Vec<f64>,
}

impl UniformAbel {
    /// Table for step `h` covering targets up to `max_steps` cells away.
    pub fn new(h: f64, max_steps: usize) -> Self {
        let mut left = vec![0.0; max_steps + 1];
        let mut right = vec![0.0; max_steps + 1];
        for m in 1..=max_steps {
            let (a, b) = cell_weights(0.0, 1.0, m as f64);
            left[m] = a;
            right[m] = b;
        }
        UniformAbel {
            sqrt_h: h.sqrt(),
            left,
            right,
        }
    }

    pub fn capacity(&self) -> usize {
        self.left.len() - 1
    }

    /// `(left, right)` node weights of the cell `[t_{n-m}, t_{n-m+1}]` for target `t_n`.
    #[inline]
    pub fn cell(&self, m: usize) -> (f64, f64) {
        (self.sqrt_h * self.left[m], self.sqrt_h * self.right[m])
    }

    /// Weight of node `j` in the Abel integral to `t_n` over `[t_start, t_n]`.
    #[inline]
    pub fn node_weight(&self, start: usize, n: usize, j: usize) -> f64 {
        debug_assert!(start <= j && j <= n && start < n);
        let mut w = 0.0;
        if j > start {
            w += self.right[n - j + 1];
        }
        if j < n {
            w += self.left[n - j];
        }
        self.sqrt_h * w
    }

    /// Weight of the newest node `t_n` in any target-`t_n` sum.
    pub fn diagonal(&self) -> f64 {
        self.sqrt_h * self.right[1]
    }
}
