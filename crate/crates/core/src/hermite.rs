//! Multivariate Hermite polynomials, Gaussian expectations by tensor
//! Gauss-Hermite quadrature, test functions and the Stein transform `U_{g,C}`.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, spd_inverse, symmetric_eigen, Matrix};
use crate::multi_index::MultiIndex;
use crate::quadrature::{gauss_hermite, gauss_legendre, Rule};

/// Probabilists' Hermite polynomials `He_0(x), ..., He_n(x)`.
pub fn he_values(x: f64, out: &mut [f64]) {
    if out.is_empty() {
        return;
    }
    out[0] = 1.0;
    if out.len() > 1 {
        out[1] = x;
    }
    for k in 2..out.len() {
        out[k] = x * out[k - 1] - (k - 1) as f64 * out[k - 2];
    }
}

/// Covariance `C` of a centered normal `Z`, possibly singular.
#[derive(Clone, Debug)]
pub struct GaussianSpec {
    cov: Matrix,
    whitener: Matrix,
    chol: Option<Matrix>,
    precision: Option<Matrix>,
}

impl GaussianSpec {
    pub fn new(cov: Matrix) -> Result<Self> {
        if !cov.is_square() || cov.rows() == 0 {
            return Err(invalid("covariance must be a nonempty square matrix"));
        }
        let scale = cov.max_abs().max(1.0);
        let deviation = cov.max_asymmetry();
        if deviation > 1e-12 * scale {
            return Err(Error::NotSymmetric { deviation });
        }
        let cov = cov.symmetric_part();
        let eig = symmetric_eigen(&cov)?;
        let top = eig.values.last().copied().unwrap_or(0.0).max(0.0);
        if eig.values[0] < -1e-12 * top.max(1.0) {
            return Err(Error::NotPositiveDefinite {
                min_eigenvalue: eig.values[0],
            });
        }
        let d = cov.rows();
        let kept: Vec<usize> = (0..d).filter(|&k| eig.values[k] > 1e-12 * top).collect();
        let whitener = Matrix::from_fn(d, kept.len(), |i, c| {
            eig.vectors.get(i, kept[c]) * libm::sqrt(eig.values[kept[c]])
        });
        let (chol, precision) = if kept.len() == d {
            (cholesky(&cov).ok(), spd_inverse(&cov).ok())
        } else {
            (None, None)
        };
        Ok(GaussianSpec {
            cov,
            whitener,
            chol,
            precision,
        })
    }

    pub fn standard(d: usize) -> Self {
        GaussianSpec::new(Matrix::identity(d)).expect("identity covariance")
    }

    pub fn dim(&self) -> usize {
        self.cov.rows()
    }

    pub fn cov(&self) -> &Matrix {
        &self.cov
    }

    pub fn rank(&self) -> usize {
        self.whitener.cols()
    }

    pub fn is_singular(&self) -> bool {
        self.precision.is_none()
    }

    /// `W` with `C = W W^T`, one column per retained eigen-direction.
    pub fn whitener(&self) -> &Matrix {
        &self.whitener
    }

    pub fn chol(&self) -> Option<&Matrix> {
        self.chol.as_ref()
    }

    /// Entries `c_ij` of `C^{-1}`.
    pub fn precision(&self) -> Result<&Matrix> {
        self.precision.as_ref().ok_or(Error::NotPositiveDefinite {
            min_eigenvalue: 0.0,
        })
    }
}

fn hermite_rec(alpha: &mut [u32], y: &[f64], c: &Matrix) -> f64 {
    let Some(i) = alpha.iter().position(|&a| a > 0) else {
        return 1.0;
    };
    alpha[i] -= 1;
    let mut v = y[i] * hermite_rec(alpha, y, c);
    for j in 0..alpha.len() {
        let k = alpha[j];
        if k > 0 {
            alpha[j] -= 1;
            v -= k as f64 * c.get(i, j) * hermite_rec(alpha, y, c);
            alpha[j] += 1;
        }
    }
    alpha[i] += 1;
    v
}

/// `H_α(x, μ, C) = (-1)^{|α|} ∂_α φ / φ` for the `N(μ, C)` density `φ`,
/// through `H_{α+e_i} = y_i H_α - Σ_j α_j c_ij H_{α-e_j}` with `y = C^{-1}(x-μ)`.
pub fn hermite(alpha: &MultiIndex, x: &[f64], mu: &[f64], spec: &GaussianSpec) -> Result<f64> {
    let d = spec.dim();
    check_len(d, alpha.dim())?;
    check_len(d, x.len())?;
    check_len(d, mu.len())?;
    let c = spec.precision()?;
    let diff: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let y = c.mul_vec(&diff)?;
    let mut a = alpha.counts().to_vec();
    Ok(hermite_rec(&mut a, &y, c))
}

/// The dual family with `C` and `C^{-1}` exchanged; `E[H_α(Z) G_β(Z)] = α! δ_αβ`.
pub fn hermite_dual(alpha: &MultiIndex, x: &[f64], mu: &[f64], spec: &GaussianSpec) -> Result<f64> {
    let d = spec.dim();
    check_len(d, alpha.dim())?;
    check_len(d, x.len())?;
    let y: Vec<f64> = x.iter().zip(mu).map(|(a, b)| a - b).collect();
    let mut a = alpha.counts().to_vec();
    Ok(hermite_rec(&mut a, &y, spec.cov()))
}

fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// A `C^3` function with analytic partial derivatives.
pub trait TestFunction: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    /// `∂_α g(x)`; `α = 0` is the value.
    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64;
    /// Upper bound for `sup |∂_α g|`.
    fn sup_partial(&self, alpha: &MultiIndex) -> f64;
    /// Closed form of `E[∂_α g(s x + √(1-s²) Z)]` when one is known.
    fn smoothed_partial(
        &self,
        _alpha: &MultiIndex,
        _x: &[f64],
        _s: f64,
        _z: &GaussianSpec,
    ) -> Option<f64> {
        None
    }
}

/// `g(x) = cos(⟨a, x⟩ + phase)`.
#[derive(Clone, Debug)]
pub struct Trig {
    pub a: Vec<f64>,
    pub phase: f64,
}

impl Trig {
    pub fn new(a: Vec<f64>, phase: f64) -> Self {
        Trig { a, phase }
    }

    fn theta(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.phase
    }

    fn coef(&self, alpha: &MultiIndex) -> f64 {
        alpha.monomial(&self.a)
    }
}

fn cos_derivative(theta: f64, n: usize) -> f64 {
    match n % 4 {
        0 => libm::cos(theta),
        1 => -libm::sin(theta),
        2 => -libm::cos(theta),
        _ => libm::sin(theta),
    }
}

impl TestFunction for Trig {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        libm::cos(self.theta(x))
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        self.coef(alpha) * cos_derivative(self.theta(x), alpha.order())
    }

    fn sup_partial(&self, alpha: &MultiIndex) -> f64 {
        self.coef(alpha).abs()
    }

    fn smoothed_partial(
        &self,
        alpha: &MultiIndex,
        x: &[f64],
        s: f64,
        z: &GaussianSpec,
    ) -> Option<f64> {
        let c = z.cov();
        let mut var = 0.0;
        for i in 0..self.a.len() {
            for j in 0..self.a.len() {
                var += self.a[i] * c.get(i, j) * self.a[j];
            }
        }
        let theta = s * self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.phase;
        let damp = libm::exp(-0.5 * (1.0 - s * s) * var);
        Some(self.coef(alpha) * cos_derivative(theta, alpha.order()) * damp)
    }
}

/// `g(x) = ⟨a, x⟩ + b`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub a: Vec<f64>,
    pub b: f64,
}

impl TestFunction for Linear {
    fn dim(&self) -> usize {
        self.a.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        match alpha.order() {
            0 => self.value(x),
            1 => self.a[alpha.coordinates()[0]],
            _ => 0.0,
        }
    }

    fn sup_partial(&self, alpha: &MultiIndex) -> f64 {
        match alpha.order() {
            0 => f64::INFINITY,
            1 => self.a[alpha.coordinates()[0]].abs(),
            _ => 0.0,
        }
    }

    fn smoothed_partial(
        &self,
        alpha: &MultiIndex,
        x: &[f64],
        s: f64,
        _z: &GaussianSpec,
    ) -> Option<f64> {
        Some(match alpha.order() {
            0 => s * self.a.iter().zip(x).map(|(a, x)| a * x).sum::<f64>() + self.b,
            1 => self.a[alpha.coordinates()[0]],
            _ => 0.0,
        })
    }
}

type Poly = BTreeMap<Vec<u32>, f64>;

fn terms_eval(p: &[(Vec<u32>, f64)], x: &[f64]) -> f64 {
    p.iter()
        .map(|(e, c)| {
            e.iter()
                .zip(x)
                .fold(*c, |acc, (&k, &xi)| (0..k).fold(acc, |a, _| a * xi))
        })
        .sum()
}

fn poly_add(p: &mut Poly, e: Vec<u32>, c: f64) {
    *p.entry(e).or_insert(0.0) += c;
}

/// `∂_i` of `p(x) exp(-|x|²/(2τ²))`, returned as the new polynomial factor.
fn poly_partial(p: &Poly, i: usize, tau: Option<f64>) -> Poly {
    let mut out = Poly::new();
    for (e, &c) in p {
        if e[i] > 0 {
            let mut f = e.clone();
            f[i] -= 1;
            poly_add(&mut out, f, c * e[i] as f64);
        }
        if let Some(t) = tau {
            let mut f = e.clone();
            f[i] += 1;
            poly_add(&mut out, f, -c / (t * t));
        }
    }
    out.retain(|_, c| *c != 0.0);
    out
}

/// `p(x)·exp(-|x|²/(2τ²))`, or a bare polynomial when `τ` is absent.
#[derive(Clone, Debug)]
pub struct DampedPolynomial {
    d: usize,
    tau: Option<f64>,
    /// Partial polynomials as flat term lists, sorted by [`partial_key`].
    partials: Vec<(u64, Vec<(Vec<u32>, f64)>)>,
}

/// Base-5 code of a multi-index of order at most [`MAX_PARTIAL_ORDER`].
fn partial_key(alpha: &MultiIndex) -> Option<u64> {
    if alpha.order() > MAX_PARTIAL_ORDER {
        return None;
    }
    Some(alpha.counts().iter().rev().fold(0u64, |k, &c| k * 5 + c as u64))
}

/// Partials are tabulated up to this order.
pub const MAX_PARTIAL_ORDER: usize = 4;

impl DampedPolynomial {
    pub fn new(d: usize, terms: &[(Vec<u32>, f64)], tau: Option<f64>) -> Result<Self> {
        if let Some(t) = tau {
            if !(t > 0.0) {
                return Err(invalid("damping width must be positive"));
            }
        }
        let mut p = Poly::new();
        for (e, c) in terms {
            if e.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    found: e.len(),
                });
            }
            poly_add(&mut p, e.clone(), *c);
        }
        let mut partials = BTreeMap::new();
        partials.insert(MultiIndex::zero(d), p);
        for k in 1..=MAX_PARTIAL_ORDER {
            for alpha in MultiIndex::of_order(d, k) {
                let coords = alpha.coordinates();
                let last = *coords.last().expect("order >= 1");
                let parent = alpha.minus_unit(last).expect("positive entry");
                let q = poly_partial(&partials[&parent], last, tau);
                partials.insert(alpha, q);
            }
        }
        let mut partials: Vec<(u64, Vec<(Vec<u32>, f64)>)> = partials
            .into_iter()
            .map(|(a, p)| (partial_key(&a).expect("tabulated order"), p.into_iter().collect()))
            .collect();
        partials.sort_by_key(|(k, _)| *k);
        Ok(DampedPolynomial { d, tau, partials })
    }

    /// `x_{i_1} ... x_{i_k}` times the Gaussian damping.
    pub fn monomial(d: usize, coords: &[usize], tau: Option<f64>) -> Result<Self> {
        let e = MultiIndex::from_indices(d, coords)?;
        DampedPolynomial::new(d, &[(e.counts().to_vec(), 1.0)], tau)
    }

    fn terms(&self, alpha: &MultiIndex) -> &[(Vec<u32>, f64)] {
        partial_key(alpha)
            .and_then(|k| self.partials.binary_search_by_key(&k, |(c, _)| *c).ok())
            .map(|i| self.partials[i].1.as_slice())
            .unwrap_or_else(|| panic!("partials tabulated to order {MAX_PARTIAL_ORDER}"))
    }

    fn damping(&self, x: &[f64]) -> f64 {
        match self.tau {
            Some(t) => libm::exp(-0.5 * x.iter().map(|v| v * v).sum::<f64>() / (t * t)),
            None => 1.0,
        }
    }
}

impl TestFunction for DampedPolynomial {
    fn dim(&self) -> usize {
        self.d
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.partial(&MultiIndex::zero(self.d), x)
    }

    fn partial(&self, alpha: &MultiIndex, x: &[f64]) -> f64 {
        terms_eval(self.terms(alpha), x) * self.damping(x)
    }

    fn sup_partial(&self, alpha: &MultiIndex) -> f64 {
        let p = self.terms(alpha);
        if p.is_empty() {
            return 0.0;
        }
        let Some(tau) = self.tau else {
            return if p.iter().all(|(e, _)| e.iter().all(|&k| k == 0)) {
                p.iter().map(|(_, c)| c.abs()).sum()
            } else {
                f64::INFINITY
            };
        };
        // Grid search on the box where the damping is not negligible, then a
        // small relative margin for the grid spacing.
        let radius = 8.0 * tau;
        let per_axis = match self.d {
            1 => 4001,
            2 => 401,
            _ => 61,
        };
        let step = 2.0 * radius / (per_axis - 1) as f64;
        let mut best = 0.0f64;
        let mut idx = vec![0usize; self.d];
        let mut x = vec![0.0; self.d];
        loop {
            for (xi, &k) in x.iter_mut().zip(&idx) {
                *xi = -radius + k as f64 * step;
            }
            best = best.max((terms_eval(p, &x) * self.damping(&x)).abs());
            let mut k = 0;
            loop {
                if k == self.d {
                    return best * 1.02;
                }
                idx[k] += 1;
                if idx[k] < per_axis {
                    break;
                }
                idx[k] = 0;
                k += 1;
            }
        }
    }
}

/// Tensor Gauss-Hermite rule for `E[f(Y)]`, `Y ~ N(μ, C)`, over the
/// retained eigen-directions of `C`.
#[derive(Clone, Debug)]
pub struct GaussianQuadrature {
    d: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianQuadrature {
    pub fn new(spec: &GaussianSpec, mean: Option<&[f64]>, nodes: usize) -> Result<Self> {
        let d = spec.dim();
        let r = spec.rank();
        if r > 3 {
            return Err(invalid(format!("quadrature needs rank <= 3, got {r}")));
        }
        if let Some(m) = mean {
            check_len(d, m.len())?;
        }
        let rule = gauss_hermite(nodes);
        let w = spec.whitener();
        let count = nodes.pow(r as u32);
        let mut points = Vec::with_capacity(count * d);
        let mut weights = Vec::with_capacity(count);
        let mut idx = vec![0usize; r];
        for _ in 0..count {
            let mut weight = 1.0;
            for &k in &idx {
                weight *= rule.weights[k];
            }
            for i in 0..d {
                let mut v = mean.map_or(0.0, |m| m[i]);
                for (c, &k) in idx.iter().enumerate() {
                    v += w.get(i, c) * rule.nodes[k];
                }
                points.push(v);
            }
            weights.push(weight);
            for k in idx.iter_mut() {
                *k += 1;
                if *k < nodes {
                    break;
                }
                *k = 0;
            }
        }
        Ok(GaussianQuadrature { d, points, weights })
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn expect(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.points
            .chunks_exact(self.d)
            .zip(&self.weights)
            .map(|(x, w)| w * f(x))
            .sum()
    }
}

pub const DEFAULT_HERMITE_NODES: usize = 40;
pub const DEFAULT_S_NODES: usize = 64;

/// `E[∂_α f(Z)]` by quadrature at the default node count.
pub fn gaussian_expectation(
    f: &dyn TestFunction,
    alpha: &MultiIndex,
    z: &GaussianSpec,
) -> Result<f64> {
    check_len(z.dim(), f.dim())?;
    let quad = GaussianQuadrature::new(z, None, DEFAULT_HERMITE_NODES)?;
    Ok(quad.expect(|x| f.partial(alpha, x)))
}

/// Both sides of `E[∂_i f(Z) H_α(Z)] = E[f(Z) H_{α+e_i}(Z)]` for centered `Z`.
pub fn hermite_ibp(
    f: &dyn TestFunction,
    alpha: &MultiIndex,
    i: usize,
    z: &GaussianSpec,
) -> Result<(f64, f64)> {
    let quad = GaussianQuadrature::new(z, None, DEFAULT_HERMITE_NODES)?;
    let mu = vec![0.0; z.dim()];
    let ei = MultiIndex::unit(z.dim(), i);
    let up = alpha.plus_unit(i);
    let mut err = None;
    let mut h = |a: &MultiIndex, x: &[f64]| {
        hermite(a, x, &mu, z).unwrap_or_else(|e| {
            err = Some(e);
            0.0
        })
    };
    let lhs = quad.expect(|x| f.partial(&ei, x) * h(alpha, x));
    let rhs = quad.expect(|x| f.value(x) * h(&up, x));
    match err {
        Some(e) => Err(e),
        None => Ok((lhs, rhs)),
    }
}

/// Both sides of `E[f(Z) Z_i] = Σ_j C_ij E[∂_j f(Z)]`; valid for singular `C`.
pub fn gaussian_ibp(f: &dyn TestFunction, i: usize, z: &GaussianSpec) -> Result<(f64, f64)> {
    let quad = GaussianQuadrature::new(z, None, DEFAULT_HERMITE_NODES)?;
    let d = z.dim();
    let lhs = quad.expect(|x| f.value(x) * x[i]);
    let mut rhs = 0.0;
    for j in 0..d {
        let ej = MultiIndex::unit(d, j);
        rhs += z.cov().get(i, j) * quad.expect(|x| f.partial(&ej, x));
    }
    Ok((lhs, rhs))
}

/// Sign `σ` in `⟨C, Hess U⟩ - ⟨x, ∇U⟩ = σ (g - E[g(Z)])` for
/// `U = ∫_0^∞ (P_t g - E[g(Z)]) dt`. See [`calibrate_stein_sign`].
pub const STEIN_SIGN: f64 = -1.0;

/// `U_{g,C}` and its partial derivatives
/// `∂_α U(x) = ∫_0^1 s^{|α|-1} E[∂_α g(s x + √(1-s²) Z)] ds`.
#[derive(Clone, Debug)]
pub struct UTransform {
    spec: GaussianSpec,
    s_rule: Rule,
    quad: GaussianQuadrature,
}

impl UTransform {
    pub fn new(spec: GaussianSpec) -> Result<Self> {
        UTransform::with_nodes(spec, DEFAULT_S_NODES, DEFAULT_HERMITE_NODES)
    }

    pub fn with_nodes(spec: GaussianSpec, s_nodes: usize, hermite_nodes: usize) -> Result<Self> {
        let quad = GaussianQuadrature::new(&spec, None, hermite_nodes)?;
        Ok(UTransform {
            spec,
            s_rule: gauss_legendre(s_nodes, 0.0, 1.0),
            quad,
        })
    }

    pub fn spec(&self) -> &GaussianSpec {
        &self.spec
    }

    /// `E[∂_α g(s x + √(1-s²) Z)]`.
    pub fn smoothed(&self, g: &dyn TestFunction, alpha: &MultiIndex, x: &[f64], s: f64) -> f64 {
        if let Some(v) = g.smoothed_partial(alpha, x, s, &self.spec) {
            return v;
        }
        let c = libm::sqrt((1.0 - s * s).max(0.0));
        let mut y = vec![0.0; x.len()];
        self.quad.expect(|z| {
            for i in 0..x.len() {
                y[i] = s * x[i] + c * z[i];
            }
            g.partial(alpha, &y)
        })
    }

    /// `E[g(Z)]`.
    pub fn mean(&self, g: &dyn TestFunction) -> f64 {
        let zero = vec![0.0; self.spec.dim()];
        self.smoothed(g, &MultiIndex::zero(self.spec.dim()), &zero, 0.0)
    }

    fn integrand(
        &self,
        g: &dyn TestFunction,
        alpha: &MultiIndex,
        x: &[f64],
        s: f64,
        mean: f64,
    ) -> f64 {
        let k = alpha.order();
        if k == 0 {
            (self.smoothed(g, alpha, x, s) - mean) / s
        } else {
            libm::pow(s, (k - 1) as f64) * self.smoothed(g, alpha, x, s)
        }
    }

    fn eval_with(&self, rule: &Rule, g: &dyn TestFunction, alpha: &MultiIndex, x: &[f64]) -> f64 {
        let mean = if alpha.order() == 0 {
            self.mean(g)
        } else {
            0.0
        };
        rule.integrate(|s| self.integrand(g, alpha, x, s, mean))
    }

    /// `∂_α U(x)`; `α = 0` gives `U(x)`.
    pub fn eval(&self, g: &dyn TestFunction, alpha: &MultiIndex, x: &[f64]) -> f64 {
        self.eval_with(&self.s_rule, g, alpha, x)
    }

    /// [`UTransform::eval`], rejecting results that move by more than 1e-6
    /// when the s-nodes are doubled.
    pub fn eval_checked(&self, g: &dyn TestFunction, alpha: &MultiIndex, x: &[f64]) -> Result<f64> {
        let v = self.eval(g, alpha, x);
        let fine = gauss_legendre(2 * self.s_rule.len(), 0.0, 1.0);
        let w = self.eval_with(&fine, g, alpha, x);
        if (v - w).abs() > 1e-6 * (1.0 + w.abs()) {
            return Err(Error::Numerical(format!(
                "U-transform quadrature unstable: {v:e} vs {w:e}"
            )));
        }
        Ok(v)
    }

    /// Same quantity through `υ(t) = e^{-t}`: `∫_0^∞ e^{-|α|t} E[∂_α g(e^{-t}x + √(1-e^{-2t}) Z)] dt`,
    /// on composite Gauss-Legendre panels over `[0, 48]`.
    pub fn eval_time_grid(&self, g: &dyn TestFunction, alpha: &MultiIndex, x: &[f64]) -> f64 {
        const PANELS: [f64; 9] = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 48.0];
        let k = alpha.order() as f64;
        let mean = if alpha.order() == 0 {
            self.mean(g)
        } else {
            0.0
        };
        let mut total = 0.0;
        for w in PANELS.windows(2) {
            let rule = gauss_legendre(24, w[0], w[1]);
            total += rule.integrate(|t| {
                let s = libm::exp(-t);
                let v = self.smoothed(g, alpha, x, s);
                if alpha.order() == 0 {
                    v - mean
                } else {
                    libm::exp(-k * t) * v
                }
            });
        }
        total
    }

    pub fn gradient(&self, g: &dyn TestFunction, x: &[f64]) -> Vec<f64> {
        let d = self.spec.dim();
        (0..d)
            .map(|i| self.eval(g, &MultiIndex::unit(d, i), x))
            .collect()
    }

    pub fn hessian(&self, g: &dyn TestFunction, x: &[f64]) -> Matrix {
        let d = self.spec.dim();
        let mut h = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let a = MultiIndex::unit(d, i).plus_unit(j);
                let v = self.eval(g, &a, x);
                h.set(i, j, v);
                h.set(j, i, v);
            }
        }
        h
    }

    /// `⟨C, Hess U⟩ - ⟨x, ∇U⟩ - σ (g(x) - E[g(Z)])`.
    pub fn stein_residual(&self, g: &dyn TestFunction, x: &[f64]) -> f64 {
        let h = self.hessian(g, x);
        let grad = self.gradient(g, x);
        let lhs =
            self.spec.cov().frobenius_dot(&h) - grad.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
        lhs - STEIN_SIGN * (g.value(x) - self.mean(g))
    }
}

/// Recover the Stein sign from a linear test function, where every term is
/// available in closed form.
pub fn calibrate_stein_sign(spec: &GaussianSpec) -> Result<f64> {
    let d = spec.dim();
    let g = Linear {
        a: (0..d).map(|i| 1.0 - 0.3 * i as f64).collect(),
        b: 0.25,
    };
    let x: Vec<f64> = (0..d).map(|i| 0.7 - 0.45 * i as f64).collect();
    let u = UTransform::with_nodes(spec.clone(), 16, 4)?;
    let h = u.hessian(&g, &x);
    let grad = u.gradient(&g, &x);
    let lhs = spec.cov().frobenius_dot(&h) - grad.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>();
    let rhs = g.value(&x) - u.mean(&g);
    if rhs.abs() < 1e-12 {
        return Err(Error::Numerical(format!(
            "degenerate calibration point: {rhs:e}"
        )));
    }
    Ok((lhs / rhs).signum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::boxed::Box;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn spec2(rho: f64) -> GaussianSpec {
        GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, rho, rho, 1.5]).unwrap()).unwrap()
    }

    fn mi(v: &[u32]) -> MultiIndex {
        MultiIndex::new(v.to_vec())
    }

    #[test]
    fn he_recurrence_low_orders() {
        let mut h = [0.0; 5];
        he_values(1.5, &mut h);
        assert_relative_eq!(h[2], 1.25);
        assert_relative_eq!(h[3], 1.5f64.powi(3) - 3.0 * 1.5);
        assert_relative_eq!(h[4], 1.5f64.powi(4) - 6.0 * 1.5 * 1.5 + 3.0);
    }

    #[test]
    fn hermite_closed_forms() {
        let z = spec2(0.4);
        let c = z.precision().unwrap().clone();
        let x = [0.3, -1.1];
        let mu = [0.1, 0.2];
        assert_eq!(hermite(&mi(&[0, 0]), &x, &mu, &z).unwrap(), 1.0);
        let y0 = c.get(0, 0) * (x[0] - mu[0]) + c.get(0, 1) * (x[1] - mu[1]);
        let y1 = c.get(1, 0) * (x[0] - mu[0]) + c.get(1, 1) * (x[1] - mu[1]);
        assert_relative_eq!(
            hermite(&mi(&[1, 0]), &x, &mu, &z).unwrap(),
            y0,
            epsilon = 1e-14
        );
        assert_relative_eq!(
            hermite(&mi(&[1, 1]), &x, &mu, &z).unwrap(),
            y0 * y1 - c.get(0, 1),
            epsilon = 1e-12
        );
        let one = GaussianSpec::standard(1);
        assert_relative_eq!(
            hermite(&mi(&[2]), &[1.7], &[0.0], &one).unwrap(),
            1.7 * 1.7 - 1.0,
            epsilon = 1e-14
        );
    }

    #[test]
    fn hermite_orthogonality_diagonal_cov() {
        let z = GaussianSpec::new(Matrix::diagonal(&[1.0, 2.0])).unwrap();
        let quad = GaussianQuadrature::new(&z, None, 20).unwrap();
        let mu = [0.0, 0.0];
        let all = MultiIndex::up_to(2, 0, 3);
        for a in &all {
            for b in &all {
                let v = quad
                    .expect(|x| hermite(a, x, &mu, &z).unwrap() * hermite(b, x, &mu, &z).unwrap());
                if a != b {
                    assert!(v.abs() < 1e-8, "{a:?} {b:?} {v}");
                }
            }
        }
    }

    #[test]
    fn hermite_biorthogonal_for_correlated_cov() {
        let z = spec2(0.6);
        let quad = GaussianQuadrature::new(&z, None, 20).unwrap();
        let mu = [0.0, 0.0];
        let all = MultiIndex::up_to(2, 0, 3);
        for a in &all {
            for b in &all {
                let v = quad.expect(|x| {
                    hermite(a, x, &mu, &z).unwrap() * hermite_dual(b, x, &mu, &z).unwrap()
                });
                let expect = if a == b { a.factorial() } else { 0.0 };
                assert!((v - expect).abs() < 1e-8, "{a:?} {b:?} {v}");
                if a.order() != b.order() {
                    let w = quad.expect(|x| {
                        hermite(a, x, &mu, &z).unwrap() * hermite(b, x, &mu, &z).unwrap()
                    });
                    assert!(w.abs() < 1e-8);
                }
            }
        }
        // Same order, distinct indices: not orthogonal when C is correlated.
        let v = quad.expect(|x| {
            hermite(&mi(&[1, 0]), x, &mu, &z).unwrap() * hermite(&mi(&[0, 1]), x, &mu, &z).unwrap()
        });
        assert_relative_eq!(v, z.precision().unwrap().get(0, 1), epsilon = 1e-10);
    }

    #[test]
    fn gaussian_expectation_of_linear_gradient() {
        let z = spec2(0.2);
        let g = Linear {
            a: vec![0.5, -2.0],
            b: 1.0,
        };
        assert_relative_eq!(
            gaussian_expectation(&g, &mi(&[0, 1]), &z).unwrap(),
            -2.0,
            epsilon = 1e-12
        );
    }

    #[test]
    fn gaussian_ibp_square() {
        // f = x_2^2: E[f Z_i] = 0 = Σ_j C_ij E[∂_j f] = 2 C_i2 E[Z_2] = 0, and
        // f = x_1 x_2^2: E[f Z_1] = C11 C22 + 2 C12² = Σ_j C_1j E[∂_j f].
        let z = spec2(0.4);
        let f = DampedPolynomial::monomial(2, &[0, 1, 1], None).unwrap();
        let (l, r) = gaussian_ibp(&f, 0, &z).unwrap();
        assert_relative_eq!(l, 1.5 + 2.0 * 0.16, epsilon = 1e-10);
        assert_relative_eq!(l, r, epsilon = 1e-10);
    }

    #[test]
    fn singular_covariance_uses_reduced_rank() {
        let z =
            GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap()).unwrap();
        assert_eq!(z.rank(), 1);
        assert!(z.is_singular());
        let f = DampedPolynomial::monomial(2, &[0, 1], None).unwrap();
        assert_relative_eq!(
            gaussian_expectation(&f, &mi(&[0, 0]), &z).unwrap(),
            1.0,
            epsilon = 1e-12
        );
        let (l, r) = gaussian_ibp(&f, 1, &z).unwrap();
        assert_relative_eq!(l, r, epsilon = 1e-12);
    }

    #[test]
    fn analytic_partials_match_finite_differences() {
        let fns: Vec<Box<dyn TestFunction>> = vec![
            Box::new(Trig::new(vec![0.7, -1.2], 0.3)),
            Box::new(DampedPolynomial::monomial(2, &[0, 1, 1], Some(2.0)).unwrap()),
            Box::new(DampedPolynomial::monomial(2, &[1], Some(1.5)).unwrap()),
        ];
        let h = 1e-5;
        let pts = [[0.3, -0.4], [1.2, 0.8], [-0.9, 1.7]];
        for g in &fns {
            for x in &pts {
                for alpha in MultiIndex::up_to(2, 0, 2) {
                    for i in 0..2 {
                        let mut xp = *x;
                        let mut xm = *x;
                        xp[i] += h;
                        xm[i] -= h;
                        let fd = (g.partial(&alpha, &xp) - g.partial(&alpha, &xm)) / (2.0 * h);
                        let an = g.partial(&alpha.plus_unit(i), x);
                        assert!(
                            (fd - an).abs() <= 1e-6 * (1.0 + an.abs()),
                            "{alpha:?} {i} {fd} {an}"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn u_of_linear_is_linear() {
        let z = spec2(0.3);
        let u = UTransform::new(z).unwrap();
        let g = Linear {
            a: vec![1.0, -0.5],
            b: 2.0,
        };
        let x = [0.4, 1.3];
        assert_relative_eq!(
            u.eval(&g, &mi(&[0, 0]), &x),
            g.value(&x) - 2.0,
            epsilon = 1e-12
        );
        assert_relative_eq!(u.eval(&g, &mi(&[0, 1]), &x), -0.5, epsilon = 1e-12);
        assert_relative_eq!(u.eval(&g, &mi(&[1, 1]), &x), 0.0);
    }

    #[test]
    fn u_of_constant_vanishes() {
        let u = UTransform::new(spec2(0.1)).unwrap();
        let g = Linear {
            a: vec![0.0, 0.0],
            b: 3.0,
        };
        for alpha in MultiIndex::up_to(2, 0, 3) {
            assert_eq!(u.eval(&g, &alpha, &[0.2, 0.1]), 0.0);
        }
    }

    #[test]
    fn stein_sign_calibration() {
        assert_eq!(calibrate_stein_sign(&spec2(0.3)).unwrap(), STEIN_SIGN);
        assert_eq!(
            calibrate_stein_sign(&GaussianSpec::standard(1)).unwrap(),
            STEIN_SIGN
        );
    }

    #[test]
    fn stein_residual_linear_and_quadratic() {
        let z = spec2(0.3);
        let u = UTransform::new(z).unwrap();
        let lin = Linear {
            a: vec![0.8, 0.1],
            b: 0.0,
        };
        assert!(u.stein_residual(&lin, &[0.5, -0.2]).abs() < 1e-8);
        let quad = DampedPolynomial::monomial(2, &[0, 1], None).unwrap();
        for x in [[0.5, -0.2], [1.1, 0.7], [-2.0, 0.4]] {
            assert!(u.stein_residual(&quad, &x).abs() < 1e-6);
        }
    }

    #[test]
    fn stein_residual_damped_cubic_grid() {
        let z =
            GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, 0.25, 0.25, 0.8]).unwrap()).unwrap();
        let u = UTransform::with_nodes(z, DEFAULT_S_NODES, 24).unwrap();
        let g = DampedPolynomial::monomial(2, &[0, 0, 1], Some(2.5)).unwrap();
        for k in 0..10 {
            let x = [-1.8 + 0.4 * k as f64, 0.9 - 0.2 * k as f64];
            let r = u.stein_residual(&g, &x);
            assert!(r.abs() < 1e-5, "x = {x:?}, residual {r:e}");
        }
    }

    #[test]
    fn parameterizations_agree() {
        let u = UTransform::new(spec2(-0.2)).unwrap();
        let g = Trig::new(vec![0.9, 0.4], 0.2);
        let x = [0.3, -0.8];
        for alpha in MultiIndex::up_to(2, 0, 3) {
            let a = u.eval(&g, &alpha, &x);
            let b = u.eval_time_grid(&g, &alpha, &x);
            assert!((a - b).abs() < 1e-8, "{alpha:?}: {a} vs {b}");
        }
    }

    proptest! {
        #[test]
        fn second_order_hermite_product_rule(x0 in -3.0f64..3.0, x1 in -3.0f64..3.0, rho in -0.6f64..0.6) {
            let z = spec2(rho);
            let c = z.precision().unwrap().clone();
            let mu = [0.0, 0.0];
            let x = [x0, x1];
            for (i, j) in [(0, 0), (0, 1), (1, 1)] {
                let a = MultiIndex::unit(2, i).plus_unit(j);
                let hi = hermite(&MultiIndex::unit(2, i), &x, &mu, &z).unwrap();
                let hj = hermite(&MultiIndex::unit(2, j), &x, &mu, &z).unwrap();
                let hij = hermite(&a, &x, &mu, &z).unwrap();
                prop_assert!((hij - (hi * hj - c.get(i, j))).abs() < 1e-12 * (1.0 + hij.abs()));
            }
        }
    }
}
