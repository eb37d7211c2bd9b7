//! Breuer-Major vectors `F_{i,T} = T^{-1/2} Σ_{u<T} H_{q_i}(B_{u+1} - B_u)` for
//! fractional Brownian motion `B` with Hurst index `H < 1/2`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::chaos::ChaosVector;
use crate::error::{invalid, Result};
use crate::hermite::he_values;
use crate::linalg::Matrix;
use crate::multi_index::factorial;
use crate::tensor::{GramBasis, SymKernel, Tensor};

/// Lags beyond this use the binomial series of the second difference, which
/// avoids cancellation.
const SERIES_LAG: f64 = 64.0;
const SERIES_TERMS: usize = 10;
const LIMIT_TERMS: usize = 1 << 10;

/// `ρ(t) = (|t+1|^{2H} + |t-1|^{2H} - 2|t|^{2H}) / 2`.
pub fn fgn_covariance(hurst: f64, t: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let a = libm::fabs(t);
    if a < SERIES_LAG {
        return 0.5
            * (libm::pow(a + 1.0, h2) + libm::pow(libm::fabs(a - 1.0), h2)
                - 2.0 * libm::pow(a, h2));
    }
    // ρ(t) = t^{2H} Σ_{j>=1} C(2H, 2j) t^{-2j}
    let inv2 = 1.0 / (a * a);
    let mut binom = 1.0;
    let mut power = 1.0;
    let mut sum = 0.0;
    for j in 1..=SERIES_TERMS {
        let n = (2 * j) as f64;
        binom *= (h2 - n + 2.0) * (h2 - n + 1.0) / ((n - 1.0) * n);
        power *= inv2;
        sum += binom * power;
    }
    libm::pow(a, h2) * sum
}

fn powi(x: f64, q: usize) -> f64 {
    (0..q).fold(1.0, |acc, _| acc * x)
}

/// `q! Σ_{k∈ℤ} ρ(k)^q`: exact terms to `LIMIT_TERMS`, then the tail from
/// three terms of the binomial series of `ρ`, summed with Hurwitz zeta values.
pub fn breuer_limit_constant(hurst: f64, q: usize) -> f64 {
    let mut head = 0.0;
    for k in (1..=LIMIT_TERMS).rev() {
        head += powi(fgn_covariance(hurst, k as f64), q);
    }
    factorial(q) * (1.0 + 2.0 * (head + limit_tail(hurst, q, LIMIT_TERMS + 1)))
}

/// `Σ_{k>=n} ρ(k)^q` with `ρ(k) = b_1 k^{2H-2} (1 + t_1 k^{-2} + t_2 k^{-4} + O(k^{-6}))`.
fn limit_tail(hurst: f64, q: usize, n: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let mut b = [0.0; 3];
    let mut binom = 1.0;
    for (j, bj) in b.iter_mut().enumerate() {
        let m = (2 * j + 2) as f64;
        binom *= (h2 - m + 2.0) * (h2 - m + 1.0) / ((m - 1.0) * m);
        *bj = binom;
    }
    let (t1, t2) = (b[1] / b[0], b[2] / b[0]);
    let qf = q as f64;
    let p = qf * (2.0 - h2);
    powi(b[0], q)
        * (hurwitz_zeta(p, n as f64)
            + qf * t1 * hurwitz_zeta(p + 2.0, n as f64)
            + (qf * t2 + 0.5 * qf * (qf - 1.0) * t1 * t1) * hurwitz_zeta(p + 4.0, n as f64))
}

/// `Σ_{k>=0} (n + k)^{-p}` for `p > 1` and large `n`, by Euler-Maclaurin.
fn hurwitz_zeta(p: f64, n: f64) -> f64 {
    let np = libm::pow(n, -p);
    np * (n / (p - 1.0) + 0.5 + p / (12.0 * n) - p * (p + 1.0) * (p + 2.0) / (720.0 * n * n * n)
        + p * (p + 1.0) * (p + 2.0) * (p + 3.0) * (p + 4.0) / (30240.0 * libm::pow(n, 5.0)))
}

/// Hurst index, chaos orders and integer horizon `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct BreuerSpec {
    hurst: f64,
    orders: Vec<usize>,
    horizon: usize,
}

impl BreuerSpec {
    pub fn new(hurst: f64, orders: Vec<usize>, horizon: usize) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 0.5) {
            return Err(invalid(format!(
                "Hurst index must lie in (0, 1/2), got {hurst}"
            )));
        }
        if orders.is_empty() || orders.iter().any(|&q| q < 2) {
            return Err(invalid("orders must be nonempty and at least 2"));
        }
        if horizon < 2 {
            return Err(invalid("horizon must be at least 2"));
        }
        Ok(BreuerSpec {
            hurst,
            orders,
            horizon,
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn len(&self) -> usize {
        self.orders.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orders.is_empty()
    }

    /// `[ρ(u - v)]` over `0 <= u, v < T`.
    pub fn gram(&self) -> Matrix {
        let lags: Vec<f64> = (0..self.horizon)
            .map(|k| fgn_covariance(self.hurst, k as f64))
            .collect();
        Matrix::from_fn(self.horizon, self.horizon, |u, v| lags[u.abs_diff(v)])
    }

    /// Kernels `T^{-1/2} Σ_u 1_{[u,u+1]}^{⊗q_i}` in the orthonormal basis of
    /// the increment span.
    pub fn build(&self) -> Result<(ChaosVector, GramBasis)> {
        let t = self.horizon;
        let basis = GramBasis::new(self.gram())?;
        let scale = 1.0 / libm::sqrt(t as f64);
        let mut kernels = Vec::with_capacity(self.len());
        for &q in &self.orders {
            let mut raw = Tensor::zeros(t, q)?;
            let mut idx = vec![0usize; q];
            for u in 0..t {
                idx.iter_mut().for_each(|i| *i = u);
                raw.set(&idx, scale);
            }
            kernels.push(basis.to_orthonormal(&SymKernel::new(raw)?)?);
        }
        Ok((ChaosVector::pure(kernels)?, basis))
    }

    /// `E[F_i F_j] = δ_{q_i q_j} q_i! Σ_{|k|<T} (1 - |k|/T) ρ(k)^{q_i}`.
    pub fn covariance(&self) -> Matrix {
        let t = self.horizon;
        let lags: Vec<f64> = (0..t)
            .map(|k| fgn_covariance(self.hurst, k as f64))
            .collect();
        let d = self.len();
        Matrix::from_fn(d, d, |i, j| {
            let q = self.orders[i];
            if q != self.orders[j] {
                return 0.0;
            }
            let mut s = 1.0;
            for (k, &r) in lags.iter().enumerate().skip(1) {
                s += 2.0 * (1.0 - k as f64 / t as f64) * powi(r, q);
            }
            factorial(q) * s
        })
    }

    pub fn limit_covariance(&self) -> Matrix {
        let d = self.len();
        let consts: Vec<f64> = self
            .orders
            .iter()
            .map(|&q| breuer_limit_constant(self.hurst, q))
            .collect();
        Matrix::from_fn(d, d, |i, j| {
            if self.orders[i] == self.orders[j] {
                consts[i]
            } else {
                0.0
            }
        })
    }
}

/// Closed trace forms for a single second-chaos component, with
/// `G = [ρ(u - v)]`: `E F² = 2 tr(G²)/T`, `κ_3 = 8 tr(G³)/T^{3/2}`,
/// `κ_4 = 48 tr(G⁴)/T²` and `Var Γ = 8 tr(G⁴)/T²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BreuerSecondChaos {
    pub horizon: usize,
    pub variance: f64,
    pub limit: f64,
    pub kappa3: f64,
    pub kappa4: f64,
    pub var_gamma: f64,
}

impl BreuerSecondChaos {
    pub fn new(hurst: f64, horizon: usize) -> Result<Self> {
        let spec = BreuerSpec::new(hurst, vec![2], horizon)?;
        let g = spec.gram();
        let g2 = g.matmul(&g)?;
        let t = horizon as f64;
        let tr4 = g2.frobenius_sq();
        Ok(BreuerSecondChaos {
            horizon,
            variance: 2.0 * g.frobenius_sq() / t,
            limit: breuer_limit_constant(hurst, 2),
            kappa3: 8.0 * g2.frobenius_dot(&g) / (t * libm::sqrt(t)),
            kappa4: 48.0 * tr4 / (t * t),
            var_gamma: 8.0 * tr4 / (t * t),
        })
    }
}

/// `F_i = T^{-1/2} Σ_u He_{q_i}(x_u)` for one path of increments `x`.
pub fn breuer_evaluate(orders: &[usize], increments: &[f64], out: &mut [f64]) {
    let qmax = orders.iter().copied().max().unwrap_or(0);
    let mut he = vec![0.0; qmax + 1];
    out.iter_mut().for_each(|o| *o = 0.0);
    for &x in increments {
        he_values(x, &mut he);
        for (o, &q) in out.iter_mut().zip(orders) {
            *o += he[q];
        }
    }
    let scale = 1.0 / libm::sqrt(increments.len() as f64);
    out.iter_mut().for_each(|o| *o *= scale);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::cholesky;
    use crate::multi_index::MultiIndex;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn direct(h: f64, t: f64) -> f64 {
        0.5 * ((t + 1.0).abs().powf(2.0 * h) + (t - 1.0).abs().powf(2.0 * h)
            - 2.0 * t.abs().powf(2.0 * h))
    }

    #[test]
    fn covariance_function() {
        assert_eq!(fgn_covariance(0.3, 0.0), 1.0);
        for t in [1.0, 2.0, 7.5, 63.0] {
            assert_relative_eq!(fgn_covariance(0.3, t), direct(0.3, t), max_relative = 1e-13);
            assert_eq!(fgn_covariance(0.3, -t), fgn_covariance(0.3, t));
        }
        for t in [64.0, 80.0, 200.0] {
            assert_relative_eq!(fgn_covariance(0.3, t), direct(0.3, t), max_relative = 1e-9);
        }
    }

    #[test]
    fn covariance_tail_exponent() {
        for h in [0.1, 0.3, 0.45] {
            let (lo, hi) = (10.0f64, 1000.0f64);
            let slope = (fgn_covariance(h, hi).abs().ln() - fgn_covariance(h, lo).abs().ln())
                / (hi.ln() - lo.ln());
            assert!((slope - 2.0 * (h - 1.0)).abs() < 0.05, "H = {h}: {slope}");
        }
    }

    #[test]
    fn increments_gram_through_whitener() {
        let spec = BreuerSpec::new(0.3, vec![2], 10).unwrap();
        let basis = GramBasis::new(spec.gram()).unwrap();
        let e0 = basis
            .to_orthonormal(&SymKernel::basis(10, &[0]).unwrap())
            .unwrap();
        for t in 0..10 {
            let et = basis
                .to_orthonormal(&SymKernel::basis(10, &[t]).unwrap())
                .unwrap();
            assert_relative_eq!(
                e0.inner(&et).unwrap(),
                fgn_covariance(0.3, t as f64),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn covariance_matches_kernels() {
        let spec = BreuerSpec::new(0.25, vec![2, 3, 2], 12).unwrap();
        let (v, _) = spec.build().unwrap();
        let from_kernels = v.covariance().unwrap();
        let direct = spec.covariance();
        for i in 0..3 {
            for j in 0..3 {
                assert_relative_eq!(from_kernels.get(i, j), direct.get(i, j), epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn second_chaos_traces_match_kernels() {
        let spec = BreuerSpec::new(0.3, vec![2], 16).unwrap();
        let (v, _) = spec.build().unwrap();
        let exact = BreuerSecondChaos::new(0.3, 16).unwrap();
        assert_relative_eq!(
            v.var_gamma(0, 0).unwrap(),
            exact.var_gamma,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            v.joint_cumulant(&MultiIndex::new(vec![3])).unwrap(),
            exact.kappa3,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            v.joint_cumulant(&MultiIndex::new(vec![4])).unwrap(),
            exact.kappa4,
            max_relative = 1e-10
        );
        assert_relative_eq!(
            spec.covariance().get(0, 0),
            exact.variance,
            max_relative = 1e-12
        );
    }

    #[test]
    fn pathwise_hermite_sum_matches_tensor_evaluation() {
        let spec = BreuerSpec::new(0.35, vec![2, 3], 8).unwrap();
        let (v, basis) = spec.build().unwrap();
        let l = cholesky(basis.gram()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut out = [0.0; 2];
        for _ in 0..20 {
            let xi: Vec<f64> = (0..8).map(|_| rng.sample(StandardNormal)).collect();
            let x = l.mul_vec(&xi).unwrap();
            breuer_evaluate(spec.orders(), &x, &mut out);
            let tensor = v.evaluate(&xi).unwrap();
            assert_relative_eq!(out[0], tensor[0], max_relative = 1e-10, epsilon = 1e-12);
            assert_relative_eq!(out[1], tensor[1], max_relative = 1e-10, epsilon = 1e-12);
        }
    }

    #[test]
    fn odd_orders_have_no_third_cumulants() {
        let spec = BreuerSpec::new(0.3, vec![3, 3], 5).unwrap();
        let (v, _) = spec.build().unwrap();
        for idx in [&[0, 0, 0][..], &[0, 0, 1][..], &[0, 1, 1][..]] {
            let k = v
                .joint_cumulant(&MultiIndex::from_indices(2, idx).unwrap())
                .unwrap();
            assert!(k.abs() < 1e-12);
        }
    }

    #[test]
    fn hurwitz_zeta_matches_known_values() {
        let z2 = core::f64::consts::PI * core::f64::consts::PI / 6.0;
        let head: f64 = (1..50).map(|k| 1.0 / (k * k) as f64).sum();
        assert_relative_eq!(hurwitz_zeta(2.0, 50.0), z2 - head, max_relative = 1e-13);
        // Direct sum; the remainder past 10^6 is below 1e-18.
        let tail: f64 = (40..1_000_000).rev().map(|k| libm::pow(k as f64, -4.0)).sum();
        assert_relative_eq!(hurwitz_zeta(4.0, 40.0), tail, max_relative = 1e-12);
    }

    #[test]
    fn limit_constant_matches_long_direct_sum() {
        for (h, q) in [(0.3, 2), (0.1, 2), (0.45, 2), (0.3, 3), (0.2, 4)] {
            let n = 1usize << 21;
            let mut direct = 0.0;
            for k in (1..=n).rev() {
                direct += powi(fgn_covariance(h, k as f64), q);
            }
            // Leading-order tail beyond n; its error is far below the tolerance.
            let p = q as f64 * (2.0 - 2.0 * h);
            let c = h * (2.0 * h - 1.0);
            direct += powi(c, q) * libm::pow(n as f64 + 0.5, 1.0 - p) / (p - 1.0);
            let direct = factorial(q) * (1.0 + 2.0 * direct);
            assert_relative_eq!(breuer_limit_constant(h, q), direct, max_relative = 1e-11);
        }
    }

    #[test]
    fn finite_horizon_covariance_approaches_limit() {
        let lim = breuer_limit_constant(0.3, 2);
        let near = BreuerSpec::new(0.3, vec![2], 1 << 16)
            .unwrap()
            .covariance()
            .get(0, 0);
        assert!((near - lim).abs() < 1e-4 * lim, "{near} vs {lim}");
        let far = BreuerSpec::new(0.3, vec![2], 1 << 12)
            .unwrap()
            .covariance()
            .get(0, 0);
        assert!((far - lim).abs() > (near - lim).abs());
    }

    #[test]
    fn spec_validation() {
        assert!(BreuerSpec::new(0.5, vec![2], 10).is_err());
        assert!(BreuerSpec::new(0.3, vec![1], 10).is_err());
        assert!(BreuerSpec::new(0.3, vec![2], 1).is_err());
    }
}
