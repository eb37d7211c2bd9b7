//! Dense order-q tensors over a basis of size M, symmetric kernels,
//! contractions `f ⊗_r g` and the map from a Gram basis to an orthonormal one.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::{cholesky, gemm, Matrix};

/// Largest number of coefficients a single tensor may hold.
pub const MAX_ENTRIES: usize = 100_000_000;

fn checked_len(dim: usize, order: usize) -> Result<usize> {
    let entries = (dim as u128).checked_pow(order as u32).unwrap_or(u128::MAX);
    if entries > MAX_ENTRIES as u128 {
        return Err(Error::TooLarge {
            what: "tensor",
            entries,
            limit: MAX_ENTRIES,
        });
    }
    Ok(entries as usize)
}

/// Row-major coefficients `c[i_1, ..., i_q]`, last index fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dim: usize,
    order: usize,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(dim: usize, order: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("basis dimension must be positive"));
        }
        Ok(Tensor {
            dim,
            order,
            data: vec![0.0; checked_len(dim, order)?],
        })
    }

    pub fn from_vec(dim: usize, order: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("basis dimension must be positive"));
        }
        let len = checked_len(dim, order)?;
        if data.len() != len {
            return Err(Error::DimensionMismatch {
                expected: len,
                found: data.len(),
            });
        }
        Ok(Tensor { dim, order, data })
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        Tensor {
            dim,
            order: 0,
            data: vec![value],
        }
    }

    pub fn from_matrix(m: &Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(invalid("order-2 tensor needs a square matrix"));
        }
        Tensor::from_vec(m.rows(), 2, m.data().to_vec())
    }

    /// `v_1 ⊗ ... ⊗ v_q`.
    pub fn outer(vectors: &[&[f64]]) -> Result<Self> {
        let dim = vectors
            .first()
            .map(|v| v.len())
            .ok_or_else(|| invalid("outer product of no vectors"))?;
        let mut t = Tensor::scalar(dim, 1.0);
        for v in vectors {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: v.len(),
                });
            }
            let vt = Tensor {
                dim,
                order: 1,
                data: v.to_vec(),
            };
            t = contract(&t, &vt, 0)?;
        }
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.dim + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        debug_assert_eq!(idx.len(), self.order);
        self.data[self.flat_index(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let k = self.flat_index(idx);
        self.data[k] = v;
    }

    /// Order-2 tensor as an `M x M` matrix.
    pub fn as_matrix(&self) -> Result<Matrix> {
        if self.order != 2 {
            return Err(invalid("only order-2 tensors are matrices"));
        }
        Matrix::from_vec(self.dim, self.dim, self.data.clone())
    }

    fn check_same_shape(&self, other: &Tensor) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        if self.order != other.order {
            return Err(Error::DimensionMismatch {
                expected: self.order,
                found: other.order,
            });
        }
        Ok(())
    }

    pub fn inner(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(crate::linalg::dot(&self.data, &other.data))
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|x| *x *= c);
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Tensor, c: f64) -> Result<()> {
        self.check_same_shape(other)?;
        self.data
            .iter_mut()
            .zip(&other.data)
            .for_each(|(x, y)| *x += c * y);
        Ok(())
    }

    /// Largest `|c[i] - c[π(i)]|` over index tuples and permutations.
    pub fn max_asymmetry(&self) -> f64 {
        let mut dev = 0.0f64;
        for_each_sorted_tuple(self.dim, self.order, |t| {
            let base = self.get(t);
            for_each_arrangement(t, |p| {
                dev = dev.max((self.get(p) - base).abs());
            });
        });
        dev
    }

    /// Average over all slot permutations.
    pub fn symmetrize(&self) -> SymKernel {
        if self.order <= 1 {
            return SymKernel(self.clone());
        }
        let mut out = self.clone();
        for_each_sorted_tuple(self.dim, self.order, |t| {
            let mut sum = 0.0;
            let mut count = 0usize;
            for_each_arrangement(t, |p| {
                sum += self.get(p);
                count += 1;
            });
            let mean = sum / count as f64;
            for_each_arrangement(t, |p| out.set(p, mean));
        });
        SymKernel(out)
    }

    /// Apply `B` to every slot: `out[j..] = Σ_k c[k..] B[k_1, j_1] ... B[k_q, j_q]`.
    pub fn transform_slots(&self, b: &Matrix) -> Result<Tensor> {
        let m = self.dim;
        if b.rows() != m || b.cols() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                found: b.rows(),
            });
        }
        let mut cur = self.data.clone();
        let mut next = vec![0.0; cur.len()];
        for p in 0..self.order {
            let outer = m.pow(p as u32);
            let inner = m.pow((self.order - p - 1) as u32);
            let block = m * inner;
            for a in 0..outer {
                let src = &cur[a * block..(a + 1) * block];
                let dst = &mut next[a * block..(a + 1) * block];
                gemm(
                    m,
                    m,
                    inner,
                    b.data(),
                    1,
                    m as isize,
                    src,
                    inner as isize,
                    1,
                    dst,
                    inner as isize,
                    1,
                );
            }
            core::mem::swap(&mut cur, &mut next);
        }
        Tensor::from_vec(m, self.order, cur)
    }
}

/// `f ⊗_r g`: contract the last `r` slots of `f` with the last `r` slots of
/// `g`. The result has the free slots of `f` followed by those of `g`.
pub fn contract(f: &Tensor, g: &Tensor, r: usize) -> Result<Tensor> {
    if f.dim != g.dim {
        return Err(Error::DimensionMismatch {
            expected: f.dim,
            found: g.dim,
        });
    }
    if r > f.order || r > g.order {
        return Err(Error::InvalidOrder {
            r,
            q1: f.order,
            q2: g.order,
        });
    }
    let m = f.dim;
    let out_order = f.order + g.order - 2 * r;
    let len = checked_len(m, out_order)?;
    let k = m.pow(r as u32);
    let rows_f = m.pow((f.order - r) as u32);
    let rows_g = m.pow((g.order - r) as u32);
    let mut data = vec![0.0; len];
    gemm(
        rows_f,
        k,
        rows_g,
        &f.data,
        k as isize,
        1,
        &g.data,
        1,
        k as isize,
        &mut data,
        rows_g as isize,
        1,
    );
    Ok(Tensor {
        dim: m,
        order: out_order,
        data,
    })
}

/// Symmetric tensor. Constructors check symmetry; constructed kernels are
/// symmetric up to rounding only through [`SymKernel::with_tolerance`].
#[derive(Clone, Debug, PartialEq)]
pub struct SymKernel(Tensor);

impl SymKernel {
    pub fn new(t: Tensor) -> Result<Self> {
        SymKernel::with_tolerance(t, 0.0)
    }

    pub fn with_tolerance(t: Tensor, tol: f64) -> Result<Self> {
        let deviation = t.max_asymmetry();
        if deviation > tol {
            return Err(Error::NotSymmetric { deviation });
        }
        Ok(SymKernel(t))
    }

    pub fn zeros(dim: usize, order: usize) -> Result<Self> {
        Ok(SymKernel(Tensor::zeros(dim, order)?))
    }

    pub fn scalar(dim: usize, value: f64) -> Self {
        SymKernel(Tensor::scalar(dim, value))
    }

    /// `e_{i_1} ⊙ ... ⊙ e_{i_q}`, the symmetrization of the basis product.
    pub fn basis(dim: usize, idx: &[usize]) -> Result<Self> {
        if idx.iter().any(|&i| i >= dim) {
            return Err(invalid("basis index out of range"));
        }
        let mut t = Tensor::zeros(dim, idx.len())?;
        t.set(idx, 1.0);
        Ok(t.symmetrize())
    }

    /// `v^{⊗q}`.
    pub fn power(v: &[f64], q: usize) -> Result<Self> {
        if v.is_empty() {
            return Err(invalid("empty vector"));
        }
        if q == 0 {
            return Ok(SymKernel::scalar(v.len(), 1.0));
        }
        let vs: Vec<&[f64]> = (0..q).map(|_| v).collect();
        Tensor::outer(&vs).map(|t| t.symmetrize())
    }

    pub fn from_symmetric_matrix(m: &Matrix, tol: f64) -> Result<Self> {
        SymKernel::with_tolerance(Tensor::from_matrix(m)?, tol)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim
    }

    pub fn order(&self) -> usize {
        self.0.order
    }

    pub fn inner(&self, other: &SymKernel) -> Result<f64> {
        self.0.inner(&other.0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.norm_sq()
    }

    pub fn scaled(&self, c: f64) -> SymKernel {
        let mut t = self.0.clone();
        t.scale(c);
        SymKernel(t)
    }

    /// `self += c * other`; sums of symmetric tensors stay symmetric.
    pub fn add_scaled(&mut self, other: &SymKernel, c: f64) -> Result<()> {
        self.0.add_scaled(&other.0, c)
    }
}

/// `f ⊗̃_r g`.
pub fn contract_sym(f: &SymKernel, g: &SymKernel, r: usize) -> Result<SymKernel> {
    Ok(contract(&f.0, &g.0, r)?.symmetrize())
}

/// Generating vectors `g_1..g_M` given through their Gram matrix. Kernels in
/// the generator basis map to an orthonormal basis through the Cholesky factor.
#[derive(Clone, Debug)]
pub struct GramBasis {
    gram: Matrix,
    factor: Matrix,
}

impl GramBasis {
    pub fn new(gram: Matrix) -> Result<Self> {
        if !gram.is_square() {
            return Err(invalid("Gram matrix must be square"));
        }
        let scale = gram.max_abs().max(1.0);
        let deviation = gram.max_asymmetry();
        if deviation > 1e-12 * scale {
            return Err(Error::NotSymmetric { deviation });
        }
        let factor = cholesky(&gram)?;
        Ok(GramBasis { gram, factor })
    }

    pub fn dim(&self) -> usize {
        self.gram.rows()
    }

    pub fn gram(&self) -> &Matrix {
        &self.gram
    }

    /// Lower-triangular `L` with `G = L L^T`.
    pub fn factor(&self) -> &Matrix {
        &self.factor
    }

    /// Coefficients of `Σ c[k..] g_{k_1} ⊗ ... ⊗ g_{k_q}` in the orthonormal
    /// basis `e_j` defined by `g_k = Σ_j L[k, j] e_j`.
    pub fn to_orthonormal(&self, k: &SymKernel) -> Result<SymKernel> {
        if k.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: k.dim(),
            });
        }
        Ok(k.0.transform_slots(&self.factor)?.symmetrize())
    }
}

/// Visit every non-decreasing index tuple of length `q` over `0..dim`.
pub(crate) fn for_each_sorted_tuple(dim: usize, q: usize, mut f: impl FnMut(&[usize])) {
    let mut t = vec![0usize; q];
    loop {
        f(&t);
        let mut k = q;
        loop {
            if k == 0 {
                return;
            }
            k -= 1;
            if t[k] + 1 < dim {
                let v = t[k] + 1;
                for x in &mut t[k..] {
                    *x = v;
                }
                break;
            }
        }
    }
}

/// Visit every distinct arrangement of a sorted tuple.
pub(crate) fn for_each_arrangement(sorted: &[usize], mut f: impl FnMut(&[usize])) {
    let mut p = sorted.to_vec();
    loop {
        f(&p);
        if !next_permutation(&mut p) {
            return;
        }
    }
}

pub(crate) fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let mut i = n - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = n - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn tensor_strategy(dim: usize, order: usize) -> impl Strategy<Value = Tensor> {
        prop::collection::vec(-1.0f64..1.0, dim.pow(order as u32))
            .prop_map(move |v| Tensor::from_vec(dim, order, v).unwrap())
    }

    fn all_tuples(dim: usize, q: usize) -> Vec<Vec<usize>> {
        let mut out = vec![vec![]];
        for _ in 0..q {
            out = out
                .into_iter()
                .flat_map(|t| {
                    (0..dim).map(move |i| {
                        let mut u = t.clone();
                        u.push(i);
                        u
                    })
                })
                .collect();
        }
        out
    }

    fn contract_loops(f: &Tensor, g: &Tensor, r: usize) -> Tensor {
        let m = f.dim();
        let mut out = Tensor::zeros(m, f.order() + g.order() - 2 * r).unwrap();
        for a in all_tuples(m, f.order() - r) {
            for b in all_tuples(m, g.order() - r) {
                let mut s = 0.0;
                for x in all_tuples(m, r) {
                    let fi: Vec<usize> = a.iter().chain(&x).copied().collect();
                    let gi: Vec<usize> = b.iter().chain(&x).copied().collect();
                    s += f.get(&fi) * g.get(&gi);
                }
                let oi: Vec<usize> = a.iter().chain(&b).copied().collect();
                out.set(&oi, s);
            }
        }
        out
    }

    #[test]
    fn basis_contraction_example() {
        let m = 3;
        let mut e11 = Tensor::zeros(m, 2).unwrap();
        e11.set(&[0, 0], 1.0);
        // e2⊗e1: its last slot meets the last slot of e1⊗e1.
        let mut e21 = Tensor::zeros(m, 2).unwrap();
        e21.set(&[1, 0], 1.0);
        let c = contract(&e11, &e21, 1).unwrap();
        let mut expect = Tensor::zeros(m, 2).unwrap();
        expect.set(&[0, 1], 1.0);
        assert_eq!(c, expect);
    }

    #[test]
    fn symmetrized_contraction_can_vanish() {
        // f = e1⊗e1 - e2⊗e2, g = e1⊙e2 (scaled): f ⊗_1 g is antisymmetric.
        let f = Tensor::from_vec(2, 2, vec![0.5, 0.0, 0.0, -0.5]).unwrap();
        let g = Tensor::from_vec(2, 2, vec![0.0, 0.5, 0.5, 0.0]).unwrap();
        let c = contract(&f, &g, 1).unwrap();
        assert_relative_eq!(c.norm_sq(), 0.125, epsilon = 1e-15);
        assert_relative_eq!(c.symmetrize().norm_sq(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn sorted_tuple_count() {
        let mut n = 0;
        for_each_sorted_tuple(4, 3, |_| n += 1);
        assert_eq!(n, 20);
        let mut k = 0;
        for_each_arrangement(&[0, 0, 1, 2], |_| k += 1);
        assert_eq!(k, 12);
    }

    #[test]
    fn full_contraction_is_inner_product() {
        let f = Tensor::from_vec(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let g = Tensor::from_vec(2, 2, vec![0.5, -1.0, 2.0, 1.0]).unwrap();
        let c = contract(&f, &g, 2).unwrap();
        assert_eq!(c.order(), 0);
        assert_relative_eq!(c.data()[0], f.inner(&g).unwrap());
    }

    #[test]
    fn size_limit_is_enforced() {
        assert!(matches!(Tensor::zeros(200, 4), Err(Error::TooLarge { .. })));
    }

    #[test]
    fn identity_gram_is_identity_map() {
        let basis = GramBasis::new(Matrix::identity(3)).unwrap();
        let k = SymKernel::basis(3, &[0, 1, 1]).unwrap();
        assert_eq!(basis.to_orthonormal(&k).unwrap(), k);
    }

    #[test]
    fn gram_rejects_singular() {
        let g = Matrix::from_vec(2, 2, vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!(matches!(
            GramBasis::new(g),
            Err(Error::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn rejects_asymmetric_kernel() {
        let t = Tensor::from_vec(2, 2, vec![1.0, 2.0, 0.0, 1.0]).unwrap();
        assert!(matches!(SymKernel::new(t), Err(Error::NotSymmetric { .. })));
    }

    proptest! {
        #[test]
        fn gemm_contraction_matches_loops(
            f in tensor_strategy(3, 3), g in tensor_strategy(3, 2), r in 0usize..3
        ) {
            let fast = contract(&f, &g, r).unwrap();
            let slow = contract_loops(&f, &g, r);
            for (a, b) in fast.data().iter().zip(slow.data()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn symmetrize_is_idempotent_projection(t in tensor_strategy(3, 3), s in tensor_strategy(3, 3)) {
            let p = t.symmetrize();
            prop_assert_eq!(p.tensor().max_asymmetry(), 0.0);
            let pp = p.tensor().symmetrize();
            for (a, b) in p.tensor().data().iter().zip(pp.tensor().data()) {
                prop_assert!((a - b).abs() < 1e-14);
            }
            // self-adjoint: <Pt, s> = <t, Ps>
            let lhs = p.tensor().inner(&s).unwrap();
            let rhs = t.inner(s.symmetrize().tensor()).unwrap();
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }

        #[test]
        fn contraction_swap_and_cauchy_schwarz(
            f in tensor_strategy(3, 2), g in tensor_strategy(3, 2)
        ) {
            let f = f.symmetrize();
            let g = g.symmetrize();
            let fg = contract(f.tensor(), g.tensor(), 1).unwrap();
            let gf = contract(g.tensor(), f.tensor(), 1).unwrap();
            prop_assert!((fg.get(&[0, 2]) - gf.get(&[2, 0])).abs() < 1e-14);
            prop_assert!(fg.norm_sq() <= f.norm_sq() * g.norm_sq() + 1e-12);
            let a = contract_sym(&f, &g, 1).unwrap();
            let b = contract_sym(&g, &f, 1).unwrap();
            for (x, y) in a.tensor().data().iter().zip(b.tensor().data()) {
                prop_assert!((x - y).abs() < 1e-14);
            }
        }

        #[test]
        fn orthonormal_map_preserves_inner_products(
            raw in prop::collection::vec(-1.0f64..1.0, 9),
            f in tensor_strategy(3, 2), g in tensor_strategy(3, 2)
        ) {
            let b = Matrix::from_vec(3, 3, raw).unwrap();
            let gram = b.matmul(&b.transpose()).unwrap().add(&Matrix::identity(3).scaled(0.5)).unwrap();
            let basis = GramBasis::new(gram.clone()).unwrap();
            let f = f.symmetrize();
            let g = g.symmetrize();
            let lhs = basis.to_orthonormal(&f).unwrap().inner(&basis.to_orthonormal(&g).unwrap()).unwrap();
            // Σ f[k1 k2] g[j1 j2] G[k1 j1] G[k2 j2]
            let mut rhs = 0.0;
            for k in all_tuples(3, 2) {
                for j in all_tuples(3, 2) {
                    rhs += f.tensor().get(&k) * g.tensor().get(&j) * gram.get(k[0], j[0]) * gram.get(k[1], j[1]);
                }
            }
            prop_assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()));
        }
    }
}
