//! Second-chaos step kernels: a kernel constant on the cells of an `N × N`
//! grid of `[0,1]²` is the symmetric matrix of its cell values.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{symmetric_eigen, Matrix};
use crate::multi_index::factorial;
use crate::tensor::SymKernel;

#[derive(Clone, Debug, PartialEq)]
pub struct StepKernelMatrix {
    a: Matrix,
}

impl StepKernelMatrix {
    pub fn new(a: Matrix) -> Result<Self> {
        if !a.is_square() || a.rows() == 0 {
            return Err(invalid("step kernel matrix must be square and nonempty"));
        }
        let deviation = a.max_asymmetry();
        if deviation > 1e-12 {
            return Err(Error::NotSymmetric { deviation });
        }
        Ok(StepKernelMatrix { a })
    }

    pub fn identity(n: usize) -> Self {
        StepKernelMatrix {
            a: Matrix::identity(n),
        }
    }

    pub fn n(&self) -> usize {
        self.a.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.a
    }

    /// Coefficients `A/N` in the orthonormal basis `√N 1_{cell k}`.
    pub fn to_kernel(&self) -> Result<SymKernel> {
        SymKernel::from_symmetric_matrix(&self.a.scaled(1.0 / self.n() as f64), 1e-12)
    }
}

fn check_sizes(a: &StepKernelMatrix, b: &StepKernelMatrix) -> Result<()> {
    if a.n() != b.n() {
        return Err(Error::DimensionMismatch {
            expected: a.n(),
            found: b.n(),
        });
    }
    Ok(())
}

/// `f ⊗_1 g ↔ AB/N` and its symmetrization `(C + Cᵀ)/2`.
pub fn m_contract(a: &StepKernelMatrix, b: &StepKernelMatrix) -> Result<(Matrix, Matrix)> {
    check_sizes(a, b)?;
    let c = a.a.matmul(&b.a)?.scaled(1.0 / a.n() as f64);
    let s = c.symmetric_part();
    Ok((c, s))
}

/// `⟨f, g⟩ = tr(ABᵀ)/N²`.
pub fn step_inner(a: &StepKernelMatrix, b: &StepKernelMatrix) -> Result<f64> {
    check_sizes(a, b)?;
    let n = a.n() as f64;
    Ok(a.a.frobenius_dot(&b.a) / (n * n))
}

/// `‖h‖²` of the step kernel with cell values `c` on an `n × n` grid.
pub fn step_norm_sq(c: &Matrix) -> f64 {
    let n = c.rows() as f64;
    c.frobenius_sq() / (n * n)
}

/// Largest cumulant order for [`trace_cumulant`].
pub const MAX_TRACE_ORDER: usize = 12;

/// `κ_m(I_2(f)) = 2^{m-1} (m-1)! tr(A^m) / N^m`, traces by repeated products.
pub fn trace_cumulant(a: &StepKernelMatrix, m: usize) -> Result<f64> {
    if !(2..=MAX_TRACE_ORDER).contains(&m) {
        return Err(Error::UnsupportedOrder {
            order: m,
            max: MAX_TRACE_ORDER,
        });
    }
    let n = a.n() as f64;
    let tr = a.a.pow(m as u32)?.trace();
    Ok(libm::pow(2.0, (m - 1) as f64) * factorial(m - 1) * tr / libm::pow(n, m as f64))
}

/// Eigenvalues of `A/N`, each checked by `‖A v - λ v‖ <= 1e-10 ‖A‖`.
pub fn scaled_eigenvalues(a: &StepKernelMatrix) -> Result<Vec<f64>> {
    let n = a.n();
    let e = symmetric_eigen(&a.a)?;
    let norm = libm::sqrt(a.a.frobenius_sq());
    for k in 0..n {
        let v: Vec<f64> = (0..n).map(|i| e.vectors.get(i, k)).collect();
        let av = a.a.mul_vec(&v)?;
        let res: f64 = av
            .iter()
            .zip(&v)
            .map(|(x, y)| (x - e.values[k] * y) * (x - e.values[k] * y))
            .sum();
        if libm::sqrt(res) > 1e-10 * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::Numerical(
                "eigenvector residual above tolerance".into(),
            ));
        }
    }
    Ok(e.values.iter().map(|l| l / n as f64).collect())
}

/// `κ_m = 2^{m-1} (m-1)! Σ λ_k^m` over the eigenvalues of `A/N`.
pub fn eigen_cumulant(a: &StepKernelMatrix, m: usize) -> Result<f64> {
    let s: f64 = scaled_eigenvalues(a)?
        .iter()
        .map(|l| libm::pow(*l, m as f64))
        .sum();
    Ok(libm::pow(2.0, (m - 1) as f64) * factorial(m - 1) * s)
}

/// `tr(A⁸)/tr(A⁴)²`, which equals `(3!²/(2·7!)) κ_8/κ_4²`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RatioBound {
    pub ratio: f64,
    /// `1/rank(A)`, the sharp lower bound.
    pub rank_bound: f64,
    /// Whether `ratio >= 1/2`.
    pub meets_half: bool,
}

pub fn ratio_bound(a: &StepKernelMatrix) -> Result<RatioBound> {
    let a2 = a.a.matmul(&a.a)?;
    let a4 = a2.matmul(&a2)?;
    let t4 = a4.trace();
    if !(t4 > 0.0) {
        return Err(invalid("ratio undefined for the zero matrix"));
    }
    let ratio = a4.frobenius_sq() / (t4 * t4);
    let eig = symmetric_eigen(&a.a)?;
    let top = eig.values.iter().fold(0.0f64, |m, l| m.max(l.abs()));
    let rank = eig.values.iter().filter(|l| l.abs() > 1e-10 * top).count();
    Ok(RatioBound {
        ratio,
        rank_bound: 1.0 / rank as f64,
        meets_half: ratio >= 0.5,
    })
}

/// One size of an obstruction family.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstructionRow {
    pub n: usize,
    pub kappa4: f64,
    pub ratio: RatioBound,
}

/// Evaluate `κ_4` and the `κ_8/κ_4²` ratio along a matrix family `make(N)`.
pub fn obstruction_family(
    sizes: &[usize],
    mut make: impl FnMut(usize) -> Matrix,
) -> Result<Vec<ObstructionRow>> {
    sizes
        .iter()
        .map(|&n| {
            if n < 2 {
                return Err(invalid("obstruction family needs N >= 2"));
            }
            let a = StepKernelMatrix::new(make(n))?;
            Ok(ObstructionRow {
                n,
                kappa4: trace_cumulant(&a, 4)?,
                ratio: ratio_bound(&a)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chaos::ChaosVector;
    use crate::multi_index::MultiIndex;
    use crate::tensor::contract;
    use alloc::vec;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn annihilating_pair() -> (StepKernelMatrix, StepKernelMatrix) {
        (
            StepKernelMatrix::new(Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, -1.0]).unwrap())
                .unwrap(),
            StepKernelMatrix::new(Matrix::from_vec(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap())
                .unwrap(),
        )
    }

    fn random_sym(rng: &mut ChaCha8Rng, n: usize) -> StepKernelMatrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = rng.gen_range(-1.0..1.0);
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        StepKernelMatrix::new(m).unwrap()
    }

    #[test]
    fn identity_contraction() {
        let i = StepKernelMatrix::identity(5);
        let (c, s) = m_contract(&i, &i).unwrap();
        assert_eq!(c, Matrix::identity(5).scaled(0.2));
        assert_eq!(s, c);
        assert_relative_eq!(step_inner(&i, &i).unwrap(), 0.2);
    }

    #[test]
    fn symmetrization_can_annihilate() {
        let (a, b) = annihilating_pair();
        let (c, s) = m_contract(&a, &b).unwrap();
        assert_eq!(step_norm_sq(&s), 0.0);
        assert_relative_eq!(step_norm_sq(&c), 0.125, epsilon = 1e-15);
    }

    #[test]
    fn matrix_calculus_matches_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 2..=8 {
            let a = random_sym(&mut rng, n);
            let b = random_sym(&mut rng, n);
            let (c, _) = m_contract(&a, &b).unwrap();
            let t = contract(
                a.to_kernel().unwrap().tensor(),
                b.to_kernel().unwrap().tensor(),
                1,
            )
            .unwrap();
            // The tensor holds cell values / N.
            for i in 0..n {
                for j in 0..n {
                    assert!((t.get(&[i, j]) - c.get(i, j) / n as f64).abs() < 1e-12);
                }
            }
            assert_relative_eq!(t.norm_sq(), step_norm_sq(&c), epsilon = 1e-12);
            let inner = a
                .to_kernel()
                .unwrap()
                .inner(&b.to_kernel().unwrap())
                .unwrap();
            assert_relative_eq!(inner, step_inner(&a, &b).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn identity_cumulants() {
        for n in [2usize, 3, 7] {
            let i = StepKernelMatrix::identity(n);
            assert_relative_eq!(
                trace_cumulant(&i, 2).unwrap(),
                2.0 / n as f64,
                epsilon = 1e-15
            );
            assert_relative_eq!(
                trace_cumulant(&i, 4).unwrap(),
                48.0 / (n as f64).powi(3),
                epsilon = 1e-15
            );
        }
        assert!(trace_cumulant(&StepKernelMatrix::identity(2), 13).is_err());
    }

    #[test]
    fn trace_cumulants_match_chaos_and_eigenvalues() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for n in [2usize, 4, 6] {
            let a = random_sym(&mut rng, n);
            let v = ChaosVector::pure(vec![a.to_kernel().unwrap()]).unwrap();
            for m in 2..=4 {
                let t = trace_cumulant(&a, m).unwrap();
                let k = v.joint_cumulant(&MultiIndex::new(vec![m as u32])).unwrap();
                assert!((t - k).abs() < 1e-10 * (1.0 + t.abs()));
            }
            for m in 2..=12 {
                let t = trace_cumulant(&a, m).unwrap();
                let e = eigen_cumulant(&a, m).unwrap();
                assert!((t - e).abs() < 1e-9 * (1.0 + t.abs()));
            }
        }
    }

    #[test]
    fn contraction_forms_of_kappa4_and_kappa8() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_sym(&mut rng, 5);
        let (ff, _) = m_contract(&a, &a).unwrap();
        let k4 = 8.0 * 6.0 * step_norm_sq(&ff);
        assert_relative_eq!(k4, trace_cumulant(&a, 4).unwrap(), epsilon = 1e-12);
        let ffm = StepKernelMatrix::new(ff).unwrap();
        let (f4, _) = m_contract(&ffm, &ffm).unwrap();
        let k8 = 128.0 * 5040.0 * step_norm_sq(&f4);
        let t8 = trace_cumulant(&a, 8).unwrap();
        assert!((k8 - t8).abs() < 1e-9 * t8);
    }

    #[test]
    fn ratio_examples() {
        let r = ratio_bound(&StepKernelMatrix::identity(2)).unwrap();
        assert_relative_eq!(r.ratio, 0.5);
        assert!(r.meets_half);
        let r = ratio_bound(&StepKernelMatrix::identity(4)).unwrap();
        assert_relative_eq!(r.ratio, 0.25);
        assert_relative_eq!(r.rank_bound, 0.25);
        assert!(!r.meets_half);
        let v = [1.0, -2.0, 0.5];
        let rank_one = Matrix::from_fn(3, 3, |i, j| v[i] * v[j]);
        assert_relative_eq!(
            ratio_bound(&StepKernelMatrix::new(rank_one).unwrap())
                .unwrap()
                .ratio,
            1.0,
            epsilon = 1e-12
        );
        assert!(ratio_bound(&StepKernelMatrix::new(Matrix::zeros(3, 3)).unwrap()).is_err());
    }

    #[test]
    fn obstruction_identity_family() {
        let rows = obstruction_family(&[2, 4, 8, 16], Matrix::identity).unwrap();
        for w in rows.windows(2) {
            assert!(w[1].kappa4 < w[0].kappa4);
            assert!(w[1].ratio.ratio < w[0].ratio.ratio);
        }
        assert_relative_eq!(rows[3].kappa4, 48.0 / 4096.0);
        assert!(obstruction_family(&[1], Matrix::identity).is_err());
    }

    proptest! {
        #[test]
        fn ratio_at_least_inverse_rank(seed in 0u64..300, n in 2usize..=10) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let r = ratio_bound(&random_sym(&mut rng, n)).unwrap();
            prop_assert!(r.ratio >= r.rank_bound - 1e-12);
            prop_assert!(r.ratio <= 1.0 + 1e-12);
        }
    }
}
