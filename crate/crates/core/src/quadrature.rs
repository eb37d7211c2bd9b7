//! Gauss rules from Jacobi matrices (Golub-Welsch) and an adaptive
//! Gauss-Kronrod integrator.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};

#[derive(Clone, Debug)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

fn golub_welsch(diag: &[f64], off: &[f64], mu0: f64) -> Rule {
    let n = diag.len();
    let j = Matrix::from_fn(n, n, |a, b| {
        if a == b {
            diag[a]
        } else if a + 1 == b {
            off[a]
        } else if b + 1 == a {
            off[b]
        } else {
            0.0
        }
    });
    let e = symmetric_eigen(&j).expect("square Jacobi matrix");
    let weights = (0..n)
        .map(|k| mu0 * e.vectors.get(0, k) * e.vectors.get(0, k))
        .collect();
    Rule {
        nodes: e.values,
        weights,
    }
}

/// Nodes and weights for `E[f(N)]`, `N ~ N(0,1)`; weights sum to one.
pub fn gauss_hermite(n: usize) -> Rule {
    let diag = alloc::vec![0.0; n];
    let off: Vec<f64> = (1..n).map(|k| libm::sqrt(k as f64)).collect();
    let mut rule = golub_welsch(&diag, &off, 1.0);
    // Symmetrize against eigensolver rounding.
    for k in 0..n / 2 {
        let x = 0.5 * (rule.nodes[n - 1 - k] - rule.nodes[k]);
        let w = 0.5 * (rule.weights[k] + rule.weights[n - 1 - k]);
        rule.nodes[k] = -x;
        rule.nodes[n - 1 - k] = x;
        rule.weights[k] = w;
        rule.weights[n - 1 - k] = w;
    }
    if n % 2 == 1 {
        rule.nodes[n / 2] = 0.0;
    }
    rule
}

/// Gauss-Legendre rule on `(a, b)`.
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> Rule {
    let diag = alloc::vec![0.0; n];
    let off: Vec<f64> = (1..n)
        .map(|k| k as f64 / libm::sqrt(4.0 * (k * k) as f64 - 1.0))
        .collect();
    let rule = golub_welsch(&diag, &off, 2.0);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    Rule {
        nodes: rule.nodes.iter().map(|x| mid + half * x).collect(),
        weights: rule.weights.iter().map(|w| w * half).collect(),
    }
}

const GK_NODES: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const K15_WEIGHTS: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const G7_WEIGHTS: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15(f: &mut impl FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = K15_WEIGHTS[7] * fc;
    let mut g = G7_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * GK_NODES[i];
        let s = f(c - dx) + f(c + dx);
        k += K15_WEIGHTS[i] * s;
        if i % 2 == 1 {
            g += G7_WEIGHTS[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive G7-K15 on `[a, b]` to `max(abs_tol, rel_tol * |I|)`.
pub fn integrate_adaptive(
    mut f: impl FnMut(f64) -> f64,
    a: f64,
    b: f64,
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    const MAX_INTERVALS: usize = 2000;
    if a == b {
        return Ok(0.0);
    }
    let (v0, e0) = gk15(&mut f, a, b);
    let mut intervals: Vec<(f64, f64, f64, f64)> = alloc::vec![(a, b, v0, e0)];
    loop {
        let total: f64 = intervals.iter().map(|iv| iv.2).sum();
        let err: f64 = intervals.iter().map(|iv| iv.3).sum();
        if err <= abs_tol.max(rel_tol * total.abs()) {
            return Ok(total);
        }
        if intervals.len() >= MAX_INTERVALS {
            return Err(Error::Numerical(format!(
                "adaptive quadrature did not converge on [{a}, {b}]: estimate {total:e}, error {err:e}"
            )));
        }
        let (worst, _) = intervals
            .iter()
            .enumerate()
            .max_by(|x, y| x.1 .3.total_cmp(&y.1 .3))
            .expect("nonempty");
        let (lo, hi, _, _) = intervals.swap_remove(worst);
        let mid = 0.5 * (lo + hi);
        let (v1, e1) = gk15(&mut f, lo, mid);
        let (v2, e2) = gk15(&mut f, mid, hi);
        intervals.push((lo, mid, v1, e1));
        intervals.push((mid, hi, v2, e2));
    }
}

/// [`integrate_adaptive`] over consecutive pieces split at `breaks`.
pub fn integrate_piecewise(
    mut f: impl FnMut(f64) -> f64,
    breaks: &[f64],
    abs_tol: f64,
    rel_tol: f64,
) -> Result<f64> {
    let pieces = breaks.len().saturating_sub(1).max(1) as f64;
    let mut total = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            total += integrate_adaptive(&mut f, w[0], w[1], abs_tol / pieces, rel_tol)?;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn hermite_rule_reproduces_gaussian_moments() {
        let rule = gauss_hermite(20);
        assert_relative_eq!(rule.integrate(|_| 1.0), 1.0, epsilon = 1e-13);
        assert_relative_eq!(rule.integrate(|x| x * x), 1.0, epsilon = 1e-12);
        assert_relative_eq!(rule.integrate(|x| x.powi(4)), 3.0, epsilon = 1e-11);
        assert_relative_eq!(rule.integrate(|x| x.powi(6)), 15.0, epsilon = 1e-10);
        assert_relative_eq!(rule.integrate(|x| x.powi(3)), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn legendre_rule_is_exact_for_polynomials() {
        let rule = gauss_legendre(10, 0.0, 1.0);
        assert_relative_eq!(rule.integrate(|x| x.powi(19)), 0.05, epsilon = 1e-13);
        let rule = gauss_legendre(64, 0.0, 1.0);
        assert_relative_eq!(
            rule.integrate(|x| libm::exp(x)),
            core::f64::consts::E - 1.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn adaptive_handles_kinks() {
        let v = integrate_adaptive(|x| (x - 0.3).abs(), 0.0, 1.0, 1e-13, 1e-12).unwrap();
        assert_relative_eq!(v, 0.5 * (0.09 + 0.49), epsilon = 1e-12);
        let v = integrate_piecewise(|x| libm::exp(-x), &[0.0, 1.0, 50.0], 1e-14, 1e-13).unwrap();
        assert_relative_eq!(v, 1.0 - libm::exp(-50.0), epsilon = 1e-12);
    }
}
