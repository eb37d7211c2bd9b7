//! Exact identities checked without sampling.

use chaoslab_core::chaos::{ChaosVector, CumulantPath};
use chaoslab_core::edgeworth::{edgeworth3, CumulantSet};
use chaoslab_core::families::{sheet_constant, BreuerSpec, SheetMode};
use chaoslab_core::hermite::{
    calibrate_stein_sign, gaussian_ibp, hermite, hermite_ibp, DampedPolynomial, GaussianQuadrature,
    GaussianSpec, Linear, Trig, UTransform, STEIN_SIGN,
};
use chaoslab_core::linalg::Matrix;
use chaoslab_core::majorizing::majorizing_profile;
use chaoslab_core::second_chaos::{eigen_cumulant, m_contract, step_norm_sq, trace_cumulant, StepKernelMatrix};
use chaoslab_core::tensor::contract_sym;
use chaoslab_core::{MultiIndex, SymKernel, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, err: f64, tol: f64) -> Check {
    Check {
        name,
        passed: err <= tol,
        detail: format!("max error {err:.3e} (tolerance {tol:.0e})"),
    }
}

fn failed(name: &'static str, e: impl std::fmt::Display) -> Check {
    Check {
        name,
        passed: false,
        detail: e.to_string(),
    }
}

type Outcome = Result<Check, Box<dyn std::error::Error>>;

pub fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut m = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = rng.gen_range(-1.0..1.0);
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    m
}

pub fn random_kernel(rng: &mut ChaCha8Rng, dim: usize, q: usize) -> SymKernel {
    let n = dim.pow(q as u32);
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_vec(dim, q, data).expect("sizes").symmetrize()
}

fn contraction_pair() -> Outcome {
    let a = StepKernelMatrix::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0])?)?;
    let b = StepKernelMatrix::new(Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0])?)?;
    let (c, s) = m_contract(&a, &b)?;
    let ka = a.to_kernel()?;
    let kb = b.to_kernel()?;
    let plain = chaoslab_core::tensor::contract(ka.tensor(), kb.tensor(), 1)?.norm_sq();
    let sym = contract_sym(&ka, &kb, 1)?.norm_sq();
    let err = [step_norm_sq(&s), sym, (step_norm_sq(&c) - 0.125).abs(), (plain - 0.125).abs()]
        .into_iter()
        .fold(0.0, f64::max);
    Ok(check("contraction of the 2x2 pair", err, 1e-12))
}

fn cumulant_paths() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut err: f64 = 0.0;
    for _ in 0..10 {
        let m = rng.gen_range(2..=6);
        let v = ChaosVector::pure(vec![random_kernel(&mut rng, m, 2), random_kernel(&mut rng, m, 2)])?;
        for a in MultiIndex::up_to(2, 3, 4) {
            let x = v.joint_cumulant_with(&a, CumulantPath::GammaFold)?;
            let y = v.joint_cumulant_with(&a, CumulantPath::SecondChaos)?;
            err = err.max((x - y).abs() / (1.0 + x.abs()));
        }
        // Relabeling: the fixed first element of the fold.
        let e = v.components();
        let x = chaoslab_core::chaos::joint_cumulant_of(&[&e[0], &e[0], &e[1]], CumulantPath::GammaFold)?;
        let y = chaoslab_core::chaos::joint_cumulant_of(&[&e[1], &e[0], &e[0]], CumulantPath::GammaFold)?;
        err = err.max((x - y).abs() / (1.0 + x.abs()));
    }
    Ok(check("cumulant paths and relabeling", err, 1e-9))
}

fn trace_vs_eigen() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut err: f64 = 0.0;
    for n in 2..=8 {
        let a = StepKernelMatrix::new(random_symmetric(&mut rng, n))?;
        for m in 2..=6 {
            let x = trace_cumulant(&a, m)?;
            let y = eigen_cumulant(&a, m)?;
            err = err.max((x - y).abs() / (1.0 + x.abs()));
        }
    }
    Ok(check("trace and eigenvalue cumulants", err, 1e-10))
}

fn sheet_constants() -> Outcome {
    let mut err: f64 = 0.0;
    for eps in [vec![0.5], vec![0.5, 0.1], vec![0.1, 0.5, 0.5], vec![0.5, 0.3, 0.2]] {
        let c = sheet_constant(&eps, SheetMode::Closed)?;
        let q = sheet_constant(&eps, SheetMode::Quadrature)?;
        err = err.max((c - q).abs() / c.abs());
    }
    Ok(check("sheet constants closed vs quadrature", err, 1e-6))
}

fn hermite_identities() -> Outcome {
    let z = GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, 0.3, 0.3, 0.7])?)?;
    let quad = GaussianQuadrature::new(&z, None, 20)?;
    let mu = [0.0, 0.0];
    let mut err: f64 = 0.0;
    let all = MultiIndex::up_to(2, 0, 3);
    for a in &all {
        for b in &all {
            if a.order() != b.order() {
                let v = quad.expect(|x| {
                    hermite(a, x, &mu, &z).unwrap_or(f64::NAN) * hermite(b, x, &mu, &z).unwrap_or(f64::NAN)
                });
                err = err.max(v.abs());
            }
        }
    }
    let f = Trig::new(vec![0.6, -0.4], 0.2);
    for a in MultiIndex::up_to(2, 0, 2) {
        for i in 0..2 {
            let (l, r) = hermite_ibp(&f, &a, i, &z)?;
            err = err.max((l - r).abs());
        }
    }
    let p = DampedPolynomial::monomial(2, &[0, 1, 1], None)?;
    for i in 0..2 {
        let (l, r) = gaussian_ibp(&p, i, &z)?;
        err = err.max((l - r).abs());
    }
    Ok(check("Hermite orthogonality and integration by parts", err, 1e-7))
}

fn stein() -> Outcome {
    let z = GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, 0.25, 0.25, 0.8])?)?;
    let sign = calibrate_stein_sign(&z)?;
    if sign != STEIN_SIGN {
        return Ok(failed("Stein sign and residual", format!("calibrated sign {sign}")));
    }
    let u = UTransform::new(z)?;
    let g = Linear {
        a: vec![0.8, -0.3],
        b: 0.1,
    };
    let t = Trig::new(vec![0.7, 0.5], 0.4);
    let mut err: f64 = 0.0;
    for x in [[0.5, -0.2], [1.1, 0.7], [-1.5, 0.4]] {
        err = err.max(u.stein_residual(&g, &x).abs());
        err = err.max(u.stein_residual(&t, &x).abs());
    }
    Ok(check("Stein sign and residual", err, 1e-6))
}

fn edgeworth_gaussian() -> Outcome {
    // E_3 is exact for Gaussian F with another covariance and quadratic g.
    let z = GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.0, 0.2, 0.2, 1.0])?)?;
    let f = GaussianSpec::new(Matrix::from_vec(2, 2, vec![1.3, -0.1, -0.1, 0.8])?)?;
    let k = CumulantSet::gaussian(&f, Some(&[0.2, -0.1]), 3);
    let g = DampedPolynomial::new(2, &[(vec![2, 0], 1.0), (vec![1, 1], 0.5), (vec![0, 1], 1.0)], None)?;
    let e3 = edgeworth3(&k, &z, &g)?;
    let exact = 1.3 + 0.04 + 0.5 * (-0.1 - 0.02) - 0.1;
    Ok(check("Edgeworth exact on Gaussian input", (e3 - exact).abs(), 1e-10))
}

fn majorizing_endpoints() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut err: f64 = 0.0;
    for q in 2..=3 {
        let f = random_kernel(&mut rng, 4, q);
        for r in 1..q {
            let c = chaoslab_core::tensor::contract(f.tensor(), f.tensor(), r)?.norm_sq();
            let p = majorizing_profile(&f, r)?;
            let target = c * c;
            err = err.max((p[0] - target).abs() / target);
            err = err.max((p[q - r] - target).abs() / target);
            for v in &p {
                err = err.max(((v - target) / target).max(0.0));
            }
        }
    }
    Ok(check("majorizing integrals at the endpoints", err, 1e-10))
}

fn breuer_covariance() -> Outcome {
    let spec = BreuerSpec::new(0.3, vec![2, 3], 12)?;
    let (v, _) = spec.build()?;
    let a = v.covariance()?;
    let b = spec.covariance();
    let err = a
        .data()
        .iter()
        .zip(b.data())
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    Ok(check("Breuer covariance from kernels", err, 1e-10))
}

/// Runs every check; errors are reported as failed checks.
pub fn run() -> Vec<Check> {
    let cases: [(&'static str, fn() -> Outcome); 9] = [
        ("contraction of the 2x2 pair", contraction_pair),
        ("cumulant paths and relabeling", cumulant_paths),
        ("trace and eigenvalue cumulants", trace_vs_eigen),
        ("sheet constants closed vs quadrature", sheet_constants),
        ("Hermite orthogonality and integration by parts", hermite_identities),
        ("Stein sign and residual", stein),
        ("Edgeworth exact on Gaussian input", edgeworth_gaussian),
        ("majorizing integrals at the endpoints", majorizing_endpoints),
        ("Breuer covariance from kernels", breuer_covariance),
    ];
    cases
        .iter()
        .map(|(name, f)| f().unwrap_or_else(|e| failed(name, e)))
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_checks_pass() {
        for c in super::run() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
