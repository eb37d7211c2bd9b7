//! Normalized Toeplitz quadratic functionals `Q̃_{h,T} = (Q_{h,T} - E Q_{h,T})/√T`
//! of a stationary Gaussian process with spectral density `f`, through
//! midpoint discretizations of the truncated Toeplitz operators `B_T(ψ)`.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::{FRAC_PI_2, PI};

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::multi_index::{factorial, MultiIndex};
use crate::quadrature::integrate_adaptive;
use crate::tensor::for_each_arrangement;

const MAX_ORDER: usize = 4;
const MAX_NODES: usize = 4096;
const GRID_TOLERANCE: f64 = 0.05;

/// An even integrable function with Fourier transform
/// `f̂(t) = ∫ e^{ixt} f(x) dx`.
pub trait EvenFunction: Send + Sync {
    fn value(&self, x: f64) -> f64;

    /// Numerical transform `2 ∫_0^∞ cos(xt) f(x) dx` on a compactified axis.
    /// Adequate for fast-decaying `f`; NaN if quadrature fails.
    fn fourier(&self, t: f64) -> f64 {
        integrate_adaptive(
            |y| {
                let x = y / (1.0 - y);
                2.0 * libm::cos(x * t) * self.value(x) / ((1.0 - y) * (1.0 - y))
            },
            0.0,
            1.0,
            1e-13,
            1e-10,
        )
        .unwrap_or(f64::NAN)
    }
}

/// `A exp(-x²/(2s²))`, transform `A s √(2π) exp(-s²t²/2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GaussianBump {
    pub scale: f64,
    pub amplitude: f64,
}

impl EvenFunction for GaussianBump {
    fn value(&self, x: f64) -> f64 {
        let z = x / self.scale;
        self.amplitude * libm::exp(-0.5 * z * z)
    }

    fn fourier(&self, t: f64) -> f64 {
        let z = self.scale * t;
        self.amplitude * self.scale * libm::sqrt(2.0 * PI) * libm::exp(-0.5 * z * z)
    }
}

/// `A / (1 + (x/s)²)`, transform `A π s exp(-s|t|)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CauchyBump {
    pub scale: f64,
    pub amplitude: f64,
}

impl EvenFunction for CauchyBump {
    fn value(&self, x: f64) -> f64 {
        let z = x / self.scale;
        self.amplitude / (1.0 + z * z)
    }

    fn fourier(&self, t: f64) -> f64 {
        self.amplitude * PI * self.scale * libm::exp(-self.scale * libm::fabs(t))
    }
}

/// Spectral density `f`, test functions `h_1..h_d`, horizon `T` and grid step.
pub struct ToeplitzSpec {
    density: Box<dyn EvenFunction>,
    tests: Vec<Box<dyn EvenFunction>>,
    horizon: f64,
    step: f64,
}

fn check_even(name: &str, f: &dyn EvenFunction, nonnegative: bool) -> Result<()> {
    for j in 0..64 {
        let x = 0.01 * libm::pow(1.2, j as f64);
        let (a, b) = (f.value(x), f.value(-x));
        if !(a.is_finite() && b.is_finite()) {
            return Err(invalid(format!("{name} is not finite at ±{x}")));
        }
        if libm::fabs(a - b) > 1e-12 * libm::fabs(a).max(libm::fabs(b)).max(1e-300) {
            return Err(invalid(format!("{name} is not even at ±{x}: {a} vs {b}")));
        }
        if nonnegative && a < 0.0 {
            return Err(invalid(format!("{name} is negative at {x}")));
        }
    }
    Ok(())
}

impl ToeplitzSpec {
    pub fn new(
        density: Box<dyn EvenFunction>,
        tests: Vec<Box<dyn EvenFunction>>,
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        if tests.is_empty() {
            return Err(invalid("at least one test function is required"));
        }
        if !(horizon > 0.0 && step > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon and step must be positive"));
        }
        let nodes = libm::round(horizon / step);
        if !(2.0..=(MAX_NODES / 2) as f64).contains(&nodes) {
            return Err(invalid(format!(
                "grid has {nodes} nodes, allowed 2..={}",
                MAX_NODES / 2
            )));
        }
        check_even("spectral density", density.as_ref(), true)?;
        for (i, h) in tests.iter().enumerate() {
            check_even(&format!("test function {i}"), h.as_ref(), false)?;
        }
        Ok(ToeplitzSpec {
            density,
            tests,
            horizon,
            step,
        })
    }

    pub fn len(&self) -> usize {
        self.tests.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tests.is_empty()
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn grid(&self, step: f64) -> Result<ToeplitzGrid> {
        ToeplitzGrid::new(self.density.as_ref(), &self.tests, self.horizon, step)
    }

    /// As-written cumulant, rejected when halving the step moves it by more
    /// than 5%.
    pub fn cumulant(&self, alpha: &MultiIndex) -> Result<f64> {
        let idx = self.indices(alpha)?;
        let coarse = self.grid(self.step)?.cumulant_as_written(&idx)?;
        let fine = self.grid(0.5 * self.step)?.cumulant_as_written(&idx)?;
        let scale = libm::fabs(coarse).max(libm::fabs(fine));
        if libm::fabs(coarse - fine) > GRID_TOLERANCE * scale {
            return Err(Error::Numerical(format!(
                "grid too coarse: step {} gives {coarse:e}, step {} gives {fine:e}",
                self.step,
                0.5 * self.step
            )));
        }
        Ok(coarse)
    }

    /// Cumulant summed over orderings of the test-function factors.
    pub fn cumulant_exact(&self, alpha: &MultiIndex) -> Result<f64> {
        let idx = self.indices(alpha)?;
        self.grid(self.step)?.cumulant_exact(&idx)
    }

    pub fn ordering_spread(&self, alpha: &MultiIndex) -> Result<f64> {
        let idx = self.indices(alpha)?;
        self.grid(self.step)?.ordering_spread(&idx)
    }

    /// `lim T^{|α|/2-1} κ_α = 2^{m-1} (m-1)! (2π)^{2m-1} ∫ f^m ∏ h_{l_i}`.
    pub fn limit(&self, alpha: &MultiIndex) -> Result<f64> {
        let idx = self.indices(alpha)?;
        let m = idx.len();
        let integral = integrate_adaptive(
            |theta| {
                let x = libm::tan(theta);
                let c = libm::cos(theta);
                let mut v = libm::pow(self.density.value(x), m as f64);
                for &i in &idx {
                    v *= self.tests[i].value(x);
                }
                2.0 * v / (c * c)
            },
            0.0,
            FRAC_PI_2,
            1e-15,
            1e-11,
        )?;
        let pre = libm::pow(2.0, (m - 1) as f64)
            * factorial(m - 1)
            * libm::pow(2.0 * PI, (2 * m - 1) as f64);
        Ok(pre * integral)
    }

    pub fn limit_covariance(&self) -> Result<Matrix> {
        let d = self.len();
        let mut c = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.limit(&MultiIndex::from_indices(d, &[i, j])?)?;
                c.set(i, j, v);
                c.set(j, i, v);
            }
        }
        Ok(c)
    }

    fn indices(&self, alpha: &MultiIndex) -> Result<Vec<usize>> {
        if alpha.dim() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: alpha.dim(),
            });
        }
        let m = alpha.order();
        if m < 2 {
            return Err(invalid("Toeplitz cumulants need |α| >= 2"));
        }
        if m > MAX_ORDER {
            return Err(Error::UnsupportedOrder {
                order: m,
                max: MAX_ORDER,
            });
        }
        Ok(alpha.coordinates())
    }
}

/// Discretized operators `R = [f̂(t_a - t_b) δ]` and `R H_i` on the midpoint
/// grid `t_a = (a + 1/2) δ` of `[0, T]`.
#[derive(Clone, Debug)]
pub struct ToeplitzGrid {
    horizon: f64,
    r: Matrix,
    h: Vec<Matrix>,
    rh: Vec<Matrix>,
}

fn toeplitz_matrix(f: &dyn EvenFunction, n: usize, delta: f64) -> Result<Matrix> {
    let lags: Vec<f64> = (0..n)
        .map(|k| f.fourier(k as f64 * delta) * delta)
        .collect();
    if let Some(k) = lags.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "Fourier transform failed at lag {}",
            k as f64 * delta
        )));
    }
    Ok(Matrix::from_fn(n, n, |a, b| lags[a.abs_diff(b)]))
}

impl ToeplitzGrid {
    fn new(
        density: &dyn EvenFunction,
        tests: &[Box<dyn EvenFunction>],
        horizon: f64,
        step: f64,
    ) -> Result<Self> {
        let n = libm::round(horizon / step) as usize;
        if !(2..=MAX_NODES).contains(&n) {
            return Err(invalid(format!(
                "grid has {n} nodes, allowed 2..={MAX_NODES}"
            )));
        }
        let delta = horizon / n as f64;
        let r = toeplitz_matrix(density, n, delta)?;
        let h = tests
            .iter()
            .map(|h| toeplitz_matrix(h.as_ref(), n, delta))
            .collect::<Result<Vec<_>>>()?;
        let rh = h.iter().map(|h| r.matmul(h)).collect::<Result<Vec<_>>>()?;
        Ok(ToeplitzGrid { horizon, r, h, rh })
    }

    pub fn nodes(&self) -> usize {
        self.r.rows()
    }

    pub fn covariance_operator(&self) -> &Matrix {
        &self.r
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// `H_i = [ĥ_i(t_a - t_b) δ]`, the matrix of the quadratic form `Q_i = Xᵀ H_i X`.
    pub fn test_operator(&self, i: usize) -> Result<&Matrix> {
        self.h
            .get(i)
            .ok_or_else(|| invalid(format!("test function {i} out of range")))
    }

    /// `E Q_i = tr(R H_i)`.
    pub fn raw_mean(&self, i: usize) -> Result<f64> {
        Ok(self.test_operator(i).map(|_| self.rh[i].trace())?)
    }

    /// `Var Γ_ij = 4 (tr(R H_i R H_j R H_j R H_i) + tr(R H_i R H_j R H_i R H_j)) / T²`.
    pub fn var_gamma(&self, i: usize, j: usize) -> Result<f64> {
        self.test_operator(i)?;
        self.test_operator(j)?;
        let a = self.trace_product(&[i, j, j, i])?;
        let b = self.trace_product(&[i, j, i, j])?;
        Ok(4.0 * (a + b) / (self.horizon * self.horizon))
    }

    /// `tr(R H_{l_1} R H_{l_2} ⋯ R H_{l_m})`.
    pub fn trace_product(&self, indices: &[usize]) -> Result<f64> {
        let (first, rest) = indices
            .split_first()
            .ok_or_else(|| invalid("empty index list"))?;
        let (last, middle) = match rest.split_last() {
            Some(x) => x,
            None => return Ok(self.rh[*first].trace()),
        };
        let mut acc = self.rh[*first].clone();
        for &i in middle {
            acc = acc.matmul(&self.rh[i])?;
        }
        Ok(acc.frobenius_dot(&self.rh[*last].transpose()))
    }

    fn prefactor(&self, m: usize) -> f64 {
        libm::pow(self.horizon, -0.5 * m as f64) * libm::pow(2.0, (m - 1) as f64)
    }

    /// `T^{-m/2} 2^{m-1} (m-1)! tr(∏ R H_{l_i})` in the listed order.
    pub fn cumulant_as_written(&self, indices: &[usize]) -> Result<f64> {
        let m = indices.len();
        Ok(self.prefactor(m) * factorial(m - 1) * self.trace_product(indices)?)
    }

    fn orderings(&self, indices: &[usize]) -> Result<Vec<f64>> {
        let mut rest = indices[1..].to_vec();
        rest.sort_unstable();
        let mut chain = indices.to_vec();
        let mut out = Vec::new();
        let mut err = None;
        for_each_arrangement(&rest, |p| {
            chain[1..].copy_from_slice(p);
            match self.trace_product(&chain) {
                Ok(v) => out.push(v),
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        });
        match err {
            Some(e) => Err(e),
            None => Ok(out),
        }
    }

    /// `T^{-m/2} 2^{m-1} Σ_σ tr(R H_{l_1} R H_{l_σ(2)} ⋯)`.
    pub fn cumulant_exact(&self, indices: &[usize]) -> Result<f64> {
        let m = indices.len();
        let traces = self.orderings(indices)?;
        // Distinct arrangements of a multiset; each stands for several permutations.
        let perms = factorial(m - 1) / traces.len() as f64;
        Ok(self.prefactor(m) * perms * traces.iter().sum::<f64>())
    }

    /// Largest minus smallest as-written cumulant over orderings.
    pub fn ordering_spread(&self, indices: &[usize]) -> Result<f64> {
        let m = indices.len();
        let traces = self.orderings(indices)?;
        let hi = traces.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = traces.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(self.prefactor(m) * factorial(m - 1) * (hi - lo))
    }
}
