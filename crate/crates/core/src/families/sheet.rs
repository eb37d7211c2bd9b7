//! Exploding integrals `F_ε = ∫ W(t)² / (t_1⋯t_l)^{2-ε} dt` of a Brownian
//! sheet on `[0,1]^l`, normalized to `F̃_ε = I_2(f_ε) / √(2 C_2(ε)^l)`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::chaos::{ChaosVector, FourthMomentRow};
use crate::edgeworth::CumulantSet;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::multi_index::{factorial, MultiIndex};
use crate::quadrature::integrate_adaptive;
use crate::tensor::{for_each_arrangement, SymKernel, Tensor};

/// Largest `k` accepted by the closed form (subset recursion over `2^k` sets).
const MAX_CLOSED_ARGS: usize = 16;
const MAX_QUADRATURE_ARGS: usize = 4;
const QUADRATURE_REL_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SheetMode {
    Closed,
    Quadrature,
}

fn check_eps(eps: &[f64]) -> Result<()> {
    if eps.is_empty() {
        return Err(invalid("at least one ε is required"));
    }
    if eps.iter().any(|&e| !(e > 0.0 && e.is_finite())) {
        return Err(invalid("every ε must be positive and finite"));
    }
    Ok(())
}

/// Number of edges of the cycle `0-1-…-(k-1)-0` with exactly one end in `set`.
fn cycle_cut(set: usize, k: usize) -> u32 {
    if k == 1 {
        return 0;
    }
    (0..k)
        .filter(|&i| ((set >> i) & 1) != ((set >> ((i + 1) % k)) & 1))
        .count() as u32
}

/// `Σ` over orderings of `∏_{j<k} 1/w(S_j)`, where `S_j` is the set of the
/// first `j` elements.
fn ordered_product_sum(k: usize, mut w: impl FnMut(usize) -> f64) -> f64 {
    let full = (1usize << k) - 1;
    let mut d = vec![0.0; full + 1];
    d[0] = 1.0;
    for set in 1..=full {
        let mut s = 0.0;
        for i in 0..k {
            if set & (1 << i) != 0 {
                s += d[set & !(1 << i)];
            }
        }
        d[set] = if set == full { s } else { s / w(set) };
    }
    d[full]
}

fn eps_sum(eps: &[f64], set: usize) -> f64 {
    eps.iter()
        .enumerate()
        .filter(|(i, _)| set & (1 << i) != 0)
        .map(|(_, e)| e)
        .sum()
}

/// `C(ε_1,…,ε_k) = ∫_{[0,1]^k} ∏ (s_i ∧ s_{i+1}) / ∏ s_i^{2-ε_i} ds`, indices mod `k`.
///
/// The closed form orders the variables increasingly: the `j` smallest form a
/// set `S` and contribute `1/(ε(S) + cut(S)/2)`, where `cut` counts cycle edges
/// leaving `S`.
pub fn sheet_constant(eps: &[f64], mode: SheetMode) -> Result<f64> {
    check_eps(eps)?;
    let k = eps.len();
    match mode {
        SheetMode::Closed => {
            if k > MAX_CLOSED_ARGS {
                return Err(Error::UnsupportedOrder {
                    order: k,
                    max: MAX_CLOSED_ARGS,
                });
            }
            let total: f64 = eps.iter().sum();
            Ok(ordered_product_sum(k, |s| eps_sum(eps, s) + 0.5 * cycle_cut(s, k) as f64) / total)
        }
        SheetMode::Quadrature => sheet_constant_quadrature(eps, QUADRATURE_REL_TOL),
    }
}

/// Nested adaptive quadrature of `C(ε)` in `u = -log s`, split at the kinks
/// `u_i = u_j`, with relative tolerance `rel_tol` at every level.
pub fn sheet_constant_quadrature(eps: &[f64], rel_tol: f64) -> Result<f64> {
    check_eps(eps)?;
    if eps.len() > MAX_QUADRATURE_ARGS {
        return Err(Error::UnsupportedOrder {
            order: eps.len(),
            max: MAX_QUADRATURE_ARGS,
        });
    }
    let mut u = Vec::with_capacity(eps.len());
    nested(eps, &mut u, rel_tol)
}

/// The product form `c̃ k!/Σε` with `c̃` the symmetrization of
/// `((1+ε_1)(1+ε_1+ε_2)⋯)^{-1}`. Equal to [`sheet_constant`] for `k <= 3`.
pub fn sheet_constant_symmetric(eps: &[f64]) -> Result<f64> {
    check_eps(eps)?;
    let k = eps.len();
    if k > MAX_CLOSED_ARGS {
        return Err(Error::UnsupportedOrder {
            order: k,
            max: MAX_CLOSED_ARGS,
        });
    }
    let total: f64 = eps.iter().sum();
    Ok(ordered_product_sum(k, |s| 1.0 + eps_sum(eps, s)) / total)
}

/// `c̃ = C(ε) Σε / k!`.
pub fn sheet_c_tilde(eps: &[f64]) -> Result<f64> {
    let c = sheet_constant(eps, SheetMode::Closed)?;
    Ok(c * eps.iter().sum::<f64>() / factorial(eps.len()))
}

// In u = -log s the integrand is exp(Σ (1-ε_i) u_i - Σ_edges max(u_i, u_{i+1})).
fn log_integrand(eps: &[f64], u: &[f64]) -> f64 {
    let k = eps.len();
    let mut e = 0.0;
    for i in 0..k {
        e += (1.0 - eps[i]) * u[i] - u[i].max(u[(i + 1) % k]);
    }
    e
}

fn nested(eps: &[f64], u: &mut Vec<f64>, rel_tol: f64) -> Result<f64> {
    let level = u.len();
    if level == eps.len() {
        return Ok(libm::exp(log_integrand(eps, u)));
    }
    let mut breaks: Vec<f64> = u.clone();
    breaks.push(0.0);
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let mut err = None;
    let mut total = 0.0;
    for w in breaks.windows(2) {
        total += integrate_adaptive(
            |x| {
                u.push(x);
                let v = nested(eps, u, rel_tol).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    0.0
                });
                u.pop();
                v
            },
            w[0],
            w[1],
            0.0,
            rel_tol,
        )?;
    }
    let last = *breaks.last().expect("nonempty");
    total += integrate_adaptive(
        |t| {
            let x = last + t / (1.0 - t);
            u.push(x);
            let v = nested(eps, u, rel_tol).unwrap_or_else(|e| {
                err.get_or_insert(e);
                0.0
            });
            u.pop();
            v / ((1.0 - t) * (1.0 - t))
        },
        0.0,
        1.0,
        0.0,
        rel_tol,
    )?;
    match err {
        Some(e) => Err(e),
        None => Ok(total),
    }
}

/// Indices after the first, sorted, and the number of permutations behind
/// each of their distinct arrangements.
fn sorted_rest(indices: &[usize]) -> (Vec<usize>, f64) {
    let mut rest = indices[1..].to_vec();
    rest.sort_unstable();
    let mut multiplicity = 1.0;
    let mut run = 0;
    for (j, &i) in rest.iter().enumerate() {
        run = if j > 0 && rest[j - 1] == i {
            run + 1
        } else {
            1
        };
        multiplicity *= run as f64;
    }
    (rest, multiplicity)
}

/// Sheet dimension `l` and one `ε` per component of `F̃`.
#[derive(Clone, Debug, PartialEq)]
pub struct SheetSpec {
    l: u32,
    epsilons: Vec<f64>,
}

/// `κ_4`, `‖f̃ ⊗_1 f̃‖²` and `Var Γ_11` of a single normalized functional.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SheetFourthMoment {
    pub epsilon: f64,
    pub kappa4: f64,
    pub contraction_norm_sq: f64,
    pub var_gamma: f64,
}

impl SheetSpec {
    pub fn new(l: u32, epsilons: Vec<f64>) -> Result<Self> {
        if l == 0 {
            return Err(invalid("sheet dimension must be at least 1"));
        }
        check_eps(&epsilons)?;
        Ok(SheetSpec { l, epsilons })
    }

    pub fn l(&self) -> u32 {
        self.l
    }

    pub fn epsilons(&self) -> &[f64] {
        &self.epsilons
    }

    pub fn len(&self) -> usize {
        self.epsilons.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epsilons.is_empty()
    }

    /// `E[F_ε] = C(ε)^l`.
    pub fn raw_mean(&self, i: usize) -> f64 {
        libm::pow(1.0 / self.epsilons[i], self.l as f64)
    }

    /// `Var F_ε = 2 C_2(ε)^l`.
    pub fn raw_variance(&self, i: usize) -> Result<f64> {
        let e = self.epsilons[i];
        Ok(2.0 * libm::pow(sheet_constant(&[e, e], SheetMode::Closed)?, self.l as f64))
    }

    /// Joint cumulant of `F̃` over the listed components.
    pub fn cumulant_of(&self, indices: &[usize]) -> Result<f64> {
        let m = indices.len();
        if m == 0 {
            return Err(invalid("cumulant of an empty index list"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid(format!("component {i} out of range")));
        }
        if m == 1 {
            return Ok(0.0);
        }
        if m > MAX_CLOSED_ARGS {
            return Err(Error::UnsupportedOrder {
                order: m,
                max: MAX_CLOSED_ARGS,
            });
        }
        let l = self.l as f64;
        let (rest, multiplicity) = sorted_rest(indices);
        let mut eps = vec![0.0; m];
        eps[0] = self.epsilons[indices[0]];
        let mut sum = 0.0;
        let mut err = None;
        for_each_arrangement(&rest, |p| {
            for (slot, &i) in eps[1..].iter_mut().zip(p) {
                *slot = self.epsilons[i];
            }
            match sheet_constant(&eps, SheetMode::Closed) {
                Ok(c) => sum += libm::pow(c, l),
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let mut norm = 1.0;
        for &i in indices {
            norm *= libm::sqrt(self.raw_variance(i)?);
        }
        Ok(libm::pow(2.0, (m - 1) as f64) * multiplicity * sum / norm)
    }

    pub fn cumulant(&self, alpha: &MultiIndex) -> Result<f64> {
        if alpha.dim() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: alpha.dim(),
            });
        }
        self.cumulant_of(&alpha.coordinates())
    }

    pub fn cumulants(&self, max_order: usize) -> Result<CumulantSet> {
        CumulantSet::from_fn(self.len(), max_order, |a| self.cumulant(a))
    }

    pub fn covariance(&self) -> Result<Matrix> {
        let d = self.len();
        let mut c = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.cumulant_of(&[i, j])?;
                c.set(i, j, v);
                c.set(j, i, v);
            }
        }
        Ok(c)
    }

    /// `(2 / (√(ε_i/ε_j) + √(ε_j/ε_i)))^l`, the covariance as all `ε → 0`
    /// with fixed ratios.
    pub fn limit_covariance(&self) -> Matrix {
        let d = self.len();
        Matrix::from_fn(d, d, |i, j| {
            let r = libm::sqrt(self.epsilons[i] / self.epsilons[j]);
            libm::pow(2.0 / (r + 1.0 / r), self.l as f64)
        })
    }

    pub fn fourth_moment(&self, i: usize) -> Result<SheetFourthMoment> {
        let e = self.epsilons[i];
        let l = self.l as f64;
        let c2 = libm::pow(sheet_constant(&[e; 2], SheetMode::Closed)?, l);
        let c4 = libm::pow(sheet_constant(&[e; 4], SheetMode::Closed)?, l);
        let contraction_norm_sq = c4 / (4.0 * c2 * c2);
        Ok(SheetFourthMoment {
            epsilon: e,
            kappa4: 48.0 * contraction_norm_sq,
            contraction_norm_sq,
            var_gamma: 8.0 * contraction_norm_sq,
        })
    }

    /// Same quantities in the layout of the generic chaos diagnostics.
    pub fn fourth_moment_row(&self, i: usize) -> Result<FourthMomentRow> {
        let r = self.fourth_moment(i)?;
        Ok(FourthMomentRow {
            component: i,
            kappa4: r.kappa4,
            contraction_norms: vec![libm::sqrt(r.contraction_norm_sq)],
            var_gamma: r.var_gamma,
        })
    }

    /// Projection of `f_ε` onto cell indicators of a geometric grid of `n`
    /// cells per axis with smallest breakpoint `x_min`, normalized to unit
    /// variance. Dimension `n^l`; `l <= 2`.
    pub fn kernels(&self, n: usize, x_min: f64) -> Result<ChaosVector> {
        if self.l > 2 {
            return Err(invalid("grid kernels support l = 1 or 2"));
        }
        if n < 2 || !(x_min > 0.0 && x_min < 1.0) {
            return Err(invalid("grid needs n >= 2 cells and 0 < x_min < 1"));
        }
        let mut breaks = vec![0.0];
        for j in 0..n {
            breaks.push(libm::pow(x_min, (n - 1 - j) as f64 / (n - 1) as f64));
        }
        let mut kernels = Vec::with_capacity(self.len());
        for &e in &self.epsilons {
            let a = cell_matrix(e, &breaks);
            let t = if self.l == 1 {
                Tensor::from_matrix(&a)?
            } else {
                kron_kernel(&a)?
            };
            let k = SymKernel::with_tolerance(t, 1e-12)?;
            let var = 2.0 * k.norm_sq();
            kernels.push(k.scaled(1.0 / libm::sqrt(var)));
        }
        ChaosVector::pure(kernels)
    }
}

/// `∫_y^1 t^{ε-2} dt` integrated against `1` and `y` over `[a, b]`.
fn tail_moments(e: f64, a: f64, b: f64) -> (f64, f64) {
    if libm::fabs(1.0 - e) < 1e-9 {
        let p0 = |y: f64| if y > 0.0 { y - y * libm::log(y) } else { 0.0 };
        let p1 = |y: f64| {
            if y > 0.0 {
                0.25 * y * y - 0.5 * y * y * libm::log(y)
            } else {
                0.0
            }
        };
        return (p0(b) - p0(a), p1(b) - p1(a));
    }
    let p0 = |y: f64| (libm::pow(y, e) / e - y) / (1.0 - e);
    let p1 = |y: f64| (libm::pow(y, e + 1.0) / (e + 1.0) - 0.5 * y * y) / (1.0 - e);
    (p0(b) - p0(a), p1(b) - p1(a))
}

fn cell_matrix(e: f64, breaks: &[f64]) -> Matrix {
    let n = breaks.len() - 1;
    let width: Vec<f64> = breaks.windows(2).map(|w| w[1] - w[0]).collect();
    let moments: Vec<(f64, f64)> = breaks
        .windows(2)
        .map(|w| tail_moments(e, w[0], w[1]))
        .collect();
    Matrix::from_fn(n, n, |a, b| {
        let (lo, hi) = (a.min(b), a.max(b));
        let integral = if lo == hi {
            let (m0, m1) = moments[lo];
            2.0 * (m1 - breaks[lo] * m0)
        } else {
            width[lo] * moments[hi].0
        };
        integral / libm::sqrt(width[a] * width[b])
    })
}

fn kron_kernel(a: &Matrix) -> Result<Tensor> {
    let n = a.rows();
    let m = n * n;
    let mut data = vec![0.0; m * m];
    for x1 in 0..n {
        for x2 in 0..n {
            let row = (x1 * n + x2) * m;
            for y1 in 0..n {
                let a1 = a.get(x1, y1);
                for y2 in 0..n {
                    data[row + y1 * n + y2] = a1 * a.get(x2, y2);
                }
            }
        }
    }
    Tensor::from_vec(m, 2, data)
}

/// `F_ε` for `l = 1` through `s = -log t`: `F_ε = ∫_0^∞ U(s)² e^{-εs} ds` for a
/// stationary OU process with covariance `e^{-|s-s'|/2}`. The integral is a
/// midpoint sum on `K` nodes of step `h` up to a horizon `S`, and `U` on the
/// grid is an AR(1) chain with coefficient `φ = e^{-h/2}`.
///
/// Cumulants are those of the discretized quadratic form, so they match the
/// law of simulated values exactly.
#[derive(Clone, Debug)]
pub struct SheetDiscretization {
    step: f64,
    phi: f64,
    weights: Vec<Vec<f64>>,
    means: Vec<f64>,
    scales: Vec<f64>,
}

impl SheetDiscretization {
    pub fn new(spec: &SheetSpec, step: f64, horizon: f64) -> Result<Self> {
        if spec.l() != 1 {
            return Err(invalid("the OU discretization covers l = 1 only"));
        }
        if !(step > 0.0 && horizon > step) {
            return Err(invalid("need 0 < step < horizon"));
        }
        let k = libm::ceil(horizon / step) as usize;
        let weights: Vec<Vec<f64>> = spec
            .epsilons()
            .iter()
            .map(|&e| {
                (0..k)
                    .map(|j| step * libm::exp(-e * (j as f64 + 0.5) * step))
                    .collect()
            })
            .collect();
        let means = weights.iter().map(|w| w.iter().sum()).collect();
        let mut out = SheetDiscretization {
            step,
            phi: libm::exp(-0.5 * step),
            weights,
            means,
            scales: Vec::new(),
        };
        out.scales = (0..spec.len())
            .map(|i| libm::sqrt(2.0 * out.trace_chain(&[i, i])))
            .collect();
        Ok(out)
    }

    /// Step `0.25` and horizon `25 / min ε`.
    pub fn with_defaults(spec: &SheetSpec) -> Result<Self> {
        let e_min = spec
            .epsilons()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        SheetDiscretization::new(spec, 0.25, 25.0 / e_min)
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn nodes(&self) -> usize {
        self.weights[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn raw_mean(&self, i: usize) -> f64 {
        self.means[i]
    }

    pub fn raw_std(&self, i: usize) -> f64 {
        self.scales[i]
    }

    fn apply_cov(&self, v: &mut [f64], fwd: &mut [f64]) {
        let phi = self.phi;
        let mut acc = 0.0;
        for (f, &x) in fwd.iter_mut().zip(v.iter()) {
            acc = x + phi * acc;
            *f = acc;
        }
        acc = 0.0;
        for (x, &f) in v.iter_mut().zip(fwd.iter()).rev() {
            let b = *x + phi * acc;
            acc = b;
            *x = f + b - *x;
        }
    }

    /// `tr(R W_{i_1} R W_{i_2} ⋯ R W_{i_m})` with `R` the AR(1) covariance and
    /// `W_i` the diagonal weights, one column at a time.
    fn trace_chain(&self, indices: &[usize]) -> f64 {
        let k = self.nodes();
        let mut v = vec![0.0; k];
        let mut scratch = vec![0.0; k];
        let mut total = 0.0;
        for col in 0..k {
            v.iter_mut().for_each(|x| *x = 0.0);
            v[col] = 1.0;
            for &i in indices.iter().rev() {
                for (x, w) in v.iter_mut().zip(&self.weights[i]) {
                    *x *= w;
                }
                self.apply_cov(&mut v, &mut scratch);
            }
            total += v[col];
        }
        total
    }

    /// Joint cumulant of the normalized discretized functionals.
    pub fn cumulant_of(&self, indices: &[usize]) -> Result<f64> {
        let m = indices.len();
        if m == 0 {
            return Err(invalid("cumulant of an empty index list"));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.components()) {
            return Err(invalid(format!("component {i} out of range")));
        }
        if m == 1 {
            return Ok(0.0);
        }
        let (rest, multiplicity) = sorted_rest(indices);
        let mut chain = vec![indices[0]; m];
        let mut sum = 0.0;
        for_each_arrangement(&rest, |p| {
            chain[1..].copy_from_slice(p);
            sum += self.trace_chain(&chain);
        });
        let norm: f64 = indices.iter().map(|&i| self.scales[i]).product();
        Ok(libm::pow(2.0, (m - 1) as f64) * multiplicity * sum / norm)
    }

    pub fn cumulants(&self, max_order: usize) -> Result<CumulantSet> {
        CumulantSet::from_fn(self.components(), max_order, |a| {
            self.cumulant_of(&a.coordinates())
        })
    }

    /// `Var Γ_ij` of the normalized discretized functionals.
    pub fn var_gamma(&self, i: usize, j: usize) -> Result<f64> {
        if i.max(j) >= self.components() {
            return Err(invalid(format!("component {} out of range", i.max(j))));
        }
        let a = self.trace_chain(&[i, j, j, i]);
        let b = self.trace_chain(&[i, j, i, j]);
        let (si, sj) = (self.scales[i], self.scales[j]);
        Ok(4.0 * (a + b) / (si * si * sj * sj))
    }

    pub fn covariance(&self) -> Result<Matrix> {
        let d = self.components();
        let mut c = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.cumulant_of(&[i, j])?;
                c.set(i, j, v);
                c.set(j, i, v);
            }
        }
        Ok(c)
    }

    /// Normalized values `(Σ_k w_ik u_k² - E F_i) / sd_i` for one path `u`.
    pub fn evaluate(&self, path: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let s: f64 = self.weights[i]
                .iter()
                .zip(path)
                .map(|(w, u)| w * u * u)
                .sum();
            *o = (s - self.means[i]) / self.scales[i];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn one_and_two_argument_constants() {
        for e in [0.05, 0.5, 2.0] {
            assert_relative_eq!(
                sheet_constant(&[e], SheetMode::Closed).unwrap(),
                1.0 / e,
                max_relative = 1e-14
            );
            assert_relative_eq!(
                sheet_constant(&[e, e], SheetMode::Closed).unwrap(),
                1.0 / (e * (1.0 + e)),
                max_relative = 1e-14
            );
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        for eps in [
            &[0.5, 0.3, 0.2][..],
            &[0.1, 0.5][..],
            &[0.5, 0.1, 0.1][..],
            &[0.7][..],
        ] {
            let c = sheet_constant(eps, SheetMode::Closed).unwrap();
            let q = sheet_constant(eps, SheetMode::Quadrature).unwrap();
            assert_relative_eq!(c, q, max_relative = 1e-7);
        }
    }

    #[test]
    fn symmetric_form_agrees_up_to_three_arguments() {
        for eps in [&[0.4][..], &[0.4, 0.1][..], &[0.5, 0.3, 0.2][..]] {
            assert_relative_eq!(
                sheet_constant(eps, SheetMode::Closed).unwrap(),
                sheet_constant_symmetric(eps).unwrap(),
                max_relative = 1e-13
            );
        }
    }

    #[test]
    fn symmetric_form_differs_at_four_arguments() {
        let exact = sheet_constant(&[1.0; 4], SheetMode::Closed).unwrap();
        let quad = sheet_constant_quadrature(&[1.0; 4], 1e-7).unwrap();
        assert_relative_eq!(exact, quad, max_relative = 1e-5);
        assert_relative_eq!(exact, 0.229_166_666_666_666_7, max_relative = 1e-12);
        assert_relative_eq!(
            sheet_constant_symmetric(&[1.0; 4]).unwrap(),
            0.25,
            max_relative = 1e-12
        );
        let a = sheet_constant(&[0.5, 0.3, 0.5, 0.3], SheetMode::Closed).unwrap();
        let b = sheet_constant(&[0.5, 0.5, 0.3, 0.3], SheetMode::Closed).unwrap();
        assert!((a - b).abs() > 1e-4);
    }

    #[test]
    fn c_tilde_bounds_and_limit() {
        for eps in [&[0.5, 0.3][..], &[0.5, 0.3, 0.2][..], &[2.0, 1.0, 3.0][..]] {
            let c = sheet_c_tilde(eps).unwrap();
            assert!(c > 0.0 && c < 1.0);
        }
        let small = sheet_c_tilde(&[1e-6, 2e-6, 3e-6]).unwrap();
        assert_relative_eq!(small, 1.0, max_relative = 1e-5);
    }

    #[test]
    fn normalization_and_limit_covariance() {
        let s = SheetSpec::new(1, vec![0.3, 0.1]).unwrap();
        assert_relative_eq!(s.cumulant_of(&[0, 0]).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(s.cumulant_of(&[1, 1]).unwrap(), 1.0, max_relative = 1e-14);
        assert_eq!(s.cumulant_of(&[1]).unwrap(), 0.0);
        let (xi, zeta) = (1.0, 0.25);
        let rho = 2.0 / ((xi / zeta as f64).sqrt() + (zeta / xi as f64).sqrt());
        for l in [1, 2] {
            let lim = SheetSpec::new(l, vec![xi * 1e-7, zeta * 1e-7]).unwrap();
            assert_relative_eq!(
                lim.limit_covariance().get(0, 1),
                rho.powi(l as i32),
                max_relative = 1e-14
            );
            assert_relative_eq!(
                lim.cumulant_of(&[0, 1]).unwrap(),
                rho.powi(l as i32),
                max_relative = 1e-6
            );
        }
    }

    #[test]
    fn cumulants_match_grid_kernels() {
        let s = SheetSpec::new(1, vec![0.8, 1.3]).unwrap();
        let v = s.kernels(48, 1e-9).unwrap();
        for idx in [
            &[0, 1][..],
            &[0, 0, 1][..],
            &[0, 1, 1][..],
            &[0, 0, 0, 0][..],
            &[0, 1, 0, 1][..],
        ] {
            let alpha = MultiIndex::from_indices(2, idx).unwrap();
            let exact = s.cumulant(&alpha).unwrap();
            let grid = v.joint_cumulant(&alpha).unwrap();
            assert_relative_eq!(exact, grid, max_relative = 2e-2);
        }
    }

    #[test]
    fn two_dimensional_sheet_kernels() {
        let s = SheetSpec::new(2, vec![1.0]).unwrap();
        let v = s.kernels(8, 1e-6).unwrap();
        assert_eq!(v.dim(), 64);
        let exact = s.cumulant_of(&[0, 0, 0]).unwrap();
        let grid = v.joint_cumulant(&MultiIndex::new(vec![3])).unwrap();
        assert_relative_eq!(exact, grid, max_relative = 5e-2);
    }

    #[test]
    fn fourth_moment_structured_formulas_match_kernels() {
        let s = SheetSpec::new(1, vec![1.0]).unwrap();
        let exact = s.fourth_moment(0).unwrap();
        let v = s.kernels(48, 1e-9).unwrap();
        let rows = crate::chaos::fourth_moment_diagnostics(&[v]).unwrap();
        let r = &rows[0][0];
        assert_relative_eq!(exact.kappa4, r.kappa4, max_relative = 2e-2);
        assert_relative_eq!(exact.var_gamma, r.var_gamma, max_relative = 2e-2);
        assert_relative_eq!(
            exact.contraction_norm_sq,
            r.contraction_norms[0].powi(2),
            max_relative = 2e-2
        );
    }

    #[test]
    fn fourth_moment_vanishes_linearly() {
        let a = SheetSpec::new(1, vec![1e-3])
            .unwrap()
            .fourth_moment(0)
            .unwrap();
        let b = SheetSpec::new(1, vec![1e-4])
            .unwrap()
            .fourth_moment(0)
            .unwrap();
        assert_relative_eq!(a.kappa4 / b.kappa4, 10.0, max_relative = 1e-2);
    }

    #[test]
    fn cumulant_scaling_with_epsilon() {
        // κ_α ((∏ε)^{1/2} / Σε)^{-l} tends to a constant as ε -> 0 at fixed ratios.
        for l in [1u32, 2] {
            let scaled = |t: f64| {
                let eps = [t, 0.5 * t, 2.0 * t];
                let s = SheetSpec::new(l, eps.to_vec()).unwrap();
                let k = s.cumulant_of(&[0, 1, 2]).unwrap();
                let rate =
                    (eps.iter().product::<f64>().sqrt() / eps.iter().sum::<f64>()).powi(l as i32);
                k / rate
            };
            assert_relative_eq!(scaled(1e-5), scaled(1e-6), max_relative = 1e-4);
        }
    }

    #[test]
    fn discretization_matches_continuum() {
        let s = SheetSpec::new(1, vec![0.5, 0.25]).unwrap();
        let fine = SheetDiscretization::new(&s, 0.05, 25.0 / 0.25).unwrap();
        assert_relative_eq!(
            fine.cumulant_of(&[0, 0]).unwrap(),
            1.0,
            max_relative = 1e-12
        );
        for idx in [&[0, 1][..], &[0, 0, 1][..], &[1, 1, 1][..]] {
            assert_relative_eq!(
                fine.cumulant_of(idx).unwrap(),
                s.cumulant_of(idx).unwrap(),
                max_relative = 2e-3
            );
        }
        assert_relative_eq!(fine.raw_mean(0), s.raw_mean(0), max_relative = 1e-3);
    }

    #[test]
    fn discretization_trace_matches_dense() {
        let s = SheetSpec::new(1, vec![1.0, 2.0]).unwrap();
        let disc = SheetDiscretization::new(&s, 0.5, 6.0).unwrap();
        let k = disc.nodes();
        let r = Matrix::from_fn(k, k, |a, b| disc.phi().powi((a as i32 - b as i32).abs()));
        let w = |i: usize| Matrix::diagonal(&disc.weights[i]);
        let dense = r
            .matmul(&w(0))
            .unwrap()
            .matmul(&r)
            .unwrap()
            .matmul(&w(1))
            .unwrap();
        let dense = dense.matmul(&r).unwrap().matmul(&w(1)).unwrap().trace();
        assert_relative_eq!(disc.trace_chain(&[0, 1, 1]), dense, max_relative = 1e-12);
    }

    #[test]
    fn discretization_var_gamma_matches_dense_kernels() {
        use crate::linalg::cholesky;
        let s = SheetSpec::new(1, vec![1.0, 0.4]).unwrap();
        let disc = SheetDiscretization::new(&s, 0.5, 8.0).unwrap();
        let k = disc.nodes();
        let r = Matrix::from_fn(k, k, |a, b| disc.phi().powi((a as i32 - b as i32).abs()));
        let l = cholesky(&r).unwrap();
        let kernels = (0..2)
            .map(|i| {
                let m = l
                    .transpose()
                    .matmul(&Matrix::diagonal(&disc.weights[i]))
                    .unwrap()
                    .matmul(&l)
                    .unwrap()
                    .scaled(1.0 / disc.raw_std(i));
                SymKernel::from_symmetric_matrix(&m.symmetric_part(), 0.0).unwrap()
            })
            .collect();
        let v = ChaosVector::pure(kernels).unwrap();
        for (i, j) in [(0, 0), (0, 1), (1, 0), (1, 1)] {
            assert_relative_eq!(
                disc.var_gamma(i, j).unwrap(),
                v.var_gamma(i, j).unwrap(),
                max_relative = 1e-9
            );
        }
        let k4 = disc.cumulant_of(&[1, 1, 1, 1]).unwrap();
        assert_relative_eq!(
            disc.var_gamma(1, 1).unwrap(),
            k4 / 6.0,
            max_relative = 1e-12
        );
    }

    #[test]
    fn discretization_moments_by_simulation() {
        let s = SheetSpec::new(1, vec![1.0]).unwrap();
        let disc = SheetDiscretization::with_defaults(&s).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40_000;
        let phi = disc.phi();
        let innov = (1.0 - phi * phi).sqrt();
        let mut path = vec![0.0; disc.nodes()];
        let mut out = [0.0];
        let (mut m2, mut m3) = (0.0, 0.0);
        for _ in 0..n {
            let mut u: f64 = rng.sample(StandardNormal);
            for p in path.iter_mut() {
                *p = u;
                u = phi * u + innov * rng.sample::<f64, _>(StandardNormal);
            }
            disc.evaluate(&path, &mut out);
            m2 += out[0] * out[0];
            m3 += out[0].powi(3);
        }
        let (m2, m3) = (m2 / n as f64, m3 / n as f64);
        assert!((m2 - 1.0).abs() < 0.05, "{m2}");
        let k3 = disc.cumulant_of(&[0, 0, 0]).unwrap();
        assert!((m3 - k3).abs() < 0.25, "{m3} vs {k3}");
    }

    proptest! {
        #[test]
        fn constants_are_cyclic_and_reversal_invariant(eps in proptest::collection::vec(0.05f64..3.0, 1..6), shift in 0usize..6) {
            let c = sheet_constant(&eps, SheetMode::Closed).unwrap();
            let k = eps.len();
            let rotated: Vec<f64> = (0..k).map(|i| eps[(i + shift) % k]).collect();
            let reversed: Vec<f64> = eps.iter().rev().copied().collect();
            prop_assert!((sheet_constant(&rotated, SheetMode::Closed).unwrap() - c).abs() <= 1e-12 * c);
            prop_assert!((sheet_constant(&reversed, SheetMode::Closed).unwrap() - c).abs() <= 1e-12 * c);
        }

        #[test]
        fn exact_constant_never_exceeds_symmetric_form(eps in proptest::collection::vec(0.05f64..3.0, 1..7)) {
            let c = sheet_constant(&eps, SheetMode::Closed).unwrap();
            let p = sheet_constant_symmetric(&eps).unwrap();
            prop_assert!(c <= p * (1.0 + 1e-12));
        }
    }
}
