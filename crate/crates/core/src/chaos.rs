//! Finite chaos expansions `F = c + Σ_q I_q(f_q)` over an orthonormal basis
//! `e_1..e_M` realized by independent standard normals `ξ_1..ξ_M`.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::hermite::{he_values, GaussianSpec};
use crate::linalg::Matrix;
use crate::multi_index::{binomial, factorial, MultiIndex};
use crate::tensor::{contract, contract_sym, for_each_sorted_tuple, SymKernel};

/// Largest chaos order produced by [`multiply`].
pub const MAX_PRODUCT_ORDER: usize = 4;
/// Cumulant order cap for general chaos orders.
pub const MAX_CUMULANT_ORDER: usize = 4;
/// Cumulant order cap when every kernel has order at most two.
pub const MAX_CUMULANT_ORDER_LOW: usize = 8;

/// `β_{a,b}(r) = r! C(a,r) C(b,r)`.
pub fn beta(a: usize, b: usize, r: usize) -> f64 {
    factorial(r) * binomial(a, r) * binomial(b, r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosElement {
    dim: usize,
    constant: f64,
    terms: BTreeMap<usize, SymKernel>,
}

impl ChaosElement {
    /// Order-zero kernels are folded into the constant; repeated orders are an error.
    pub fn new(dim: usize, constant: f64, kernels: Vec<SymKernel>) -> Result<Self> {
        let mut out = ChaosElement::constant(dim, constant);
        for k in kernels {
            if k.dim() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: k.dim(),
                });
            }
            if k.order() == 0 {
                out.constant += k.tensor().data()[0];
            } else if out.terms.insert(k.order(), k).is_some() {
                return Err(invalid("repeated chaos order"));
            }
        }
        Ok(out)
    }

    pub fn constant(dim: usize, c: f64) -> Self {
        ChaosElement {
            dim,
            constant: c,
            terms: BTreeMap::new(),
        }
    }

    /// `I_q(f)`.
    pub fn integral(f: SymKernel) -> Self {
        let dim = f.dim();
        if f.order() == 0 {
            return ChaosElement::constant(dim, f.tensor().data()[0]);
        }
        let mut terms = BTreeMap::new();
        terms.insert(f.order(), f);
        ChaosElement {
            dim,
            constant: 0.0,
            terms,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mean(&self) -> f64 {
        self.constant
    }

    pub fn terms(&self) -> impl Iterator<Item = (usize, &SymKernel)> {
        self.terms.iter().map(|(&q, k)| (q, k))
    }

    pub fn kernel(&self, q: usize) -> Option<&SymKernel> {
        self.terms.get(&q)
    }

    pub fn orders(&self) -> Vec<usize> {
        self.terms.keys().copied().collect()
    }

    pub fn max_order(&self) -> usize {
        self.terms.keys().next_back().copied().unwrap_or(0)
    }

    /// Order of a single centered integral.
    pub fn pure_order(&self) -> Option<usize> {
        if self.constant == 0.0 && self.terms.len() == 1 {
            self.terms.keys().next().copied()
        } else {
            None
        }
    }

    pub fn centered(&self) -> ChaosElement {
        ChaosElement {
            dim: self.dim,
            constant: 0.0,
            terms: self.terms.clone(),
        }
    }

    /// `Σ_q q! ‖f_q‖²`.
    pub fn variance(&self) -> f64 {
        self.terms
            .iter()
            .map(|(&q, k)| factorial(q) * k.norm_sq())
            .sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.constant * self.constant + self.variance()
    }

    /// `E[F G] - E[F] E[G]`.
    pub fn covariance(&self, other: &ChaosElement) -> Result<f64> {
        self.check_dim(other)?;
        let mut s = 0.0;
        for (&q, f) in &self.terms {
            if let Some(g) = other.terms.get(&q) {
                s += factorial(q) * f.inner(g)?;
            }
        }
        Ok(s)
    }

    pub fn scaled(&self, c: f64) -> ChaosElement {
        ChaosElement {
            dim: self.dim,
            constant: c * self.constant,
            terms: self.terms.iter().map(|(&q, k)| (q, k.scaled(c))).collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &ChaosElement, c: f64) -> Result<()> {
        self.check_dim(other)?;
        self.constant += c * other.constant;
        for (&q, k) in &other.terms {
            self.add_kernel(k, c)?;
            debug_assert_eq!(k.order(), q);
        }
        Ok(())
    }

    fn add_kernel(&mut self, k: &SymKernel, c: f64) -> Result<()> {
        if k.order() == 0 {
            self.constant += c * k.tensor().data()[0];
            return Ok(());
        }
        match self.terms.get_mut(&k.order()) {
            Some(t) => t.add_scaled(k, c),
            None => {
                self.terms.insert(k.order(), k.scaled(c));
                Ok(())
            }
        }
    }

    fn check_dim(&self, other: &ChaosElement) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        Ok(())
    }

    /// Value at the Gaussian sample `ξ`.
    pub fn evaluate(&self, xi: &[f64]) -> Result<f64> {
        if xi.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: xi.len(),
            });
        }
        Ok(Evaluator::new(self).eval(xi))
    }
}

/// Flattened evaluation plan: one entry per nonzero sorted index tuple.
#[derive(Clone, Debug)]
pub struct Evaluator {
    dim: usize,
    constant: f64,
    width: usize,
    coefs: Vec<f64>,
    offsets: Vec<u32>,
    factors: Vec<(u32, u32)>,
}

impl Evaluator {
    pub fn new(f: &ChaosElement) -> Self {
        let width = f.max_order() + 1;
        let mut coefs = Vec::new();
        let mut offsets = vec![0u32];
        let mut factors = Vec::new();
        for (&q, k) in &f.terms {
            let t = k.tensor();
            let qf = factorial(q);
            for_each_sorted_tuple(f.dim, q, |idx| {
                let c = t.get(idx);
                if c == 0.0 {
                    return;
                }
                let mut weight = qf;
                let mut s = 0;
                while s < idx.len() {
                    let mut e = s;
                    while e < idx.len() && idx[e] == idx[s] {
                        e += 1;
                    }
                    weight /= factorial(e - s);
                    factors.push((idx[s] as u32, (e - s) as u32));
                    s = e;
                }
                coefs.push(c * weight);
                offsets.push(factors.len() as u32);
            });
        }
        Evaluator {
            dim: f.dim,
            constant: f.constant,
            width,
            coefs,
            offsets,
            factors,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `he` is scratch space, resized as needed.
    pub fn eval_with(&self, xi: &[f64], he: &mut Vec<f64>) -> f64 {
        he.resize(self.dim * self.width, 0.0);
        for (i, &x) in xi.iter().enumerate() {
            he_values(x, &mut he[i * self.width..(i + 1) * self.width]);
        }
        let mut total = self.constant;
        for (n, &c) in self.coefs.iter().enumerate() {
            let mut p = c;
            for &(i, m) in &self.factors[self.offsets[n] as usize..self.offsets[n + 1] as usize] {
                p *= he[i as usize * self.width + m as usize];
            }
            total += p;
        }
        total
    }

    pub fn eval(&self, xi: &[f64]) -> f64 {
        let mut he = Vec::new();
        self.eval_with(xi, &mut he)
    }
}

/// Chaos expansion of the product `F G`.
pub fn multiply(f: &ChaosElement, g: &ChaosElement) -> Result<ChaosElement> {
    f.check_dim(g)?;
    let top = f.max_order() + g.max_order();
    if top > MAX_PRODUCT_ORDER {
        return Err(Error::UnsupportedOrder {
            order: top,
            max: MAX_PRODUCT_ORDER,
        });
    }
    let mut out = ChaosElement::constant(f.dim, f.constant * g.constant);
    out.add_scaled(&g.centered(), f.constant)?;
    out.add_scaled(&f.centered(), g.constant)?;
    for (&p, u) in &f.terms {
        for (&q, v) in &g.terms {
            for r in 0..=p.min(q) {
                out.add_kernel(&contract_sym(u, v, r)?, beta(p, q, r))?;
            }
        }
    }
    Ok(out)
}

/// `⟨D F_new, -D L^{-1} G_prev⟩` for a centered single integral `F_new = I_a(u)`.
pub fn gamma_step(prev: &ChaosElement, new: &ChaosElement) -> Result<ChaosElement> {
    if new.pure_order().is_none() {
        return Err(Error::NonPure);
    }
    gamma_step_linear(prev, new, None)
}

/// [`gamma_step`] extended linearly over the terms of `new`. When `keep` is
/// set, only output orders in it are formed (the constant is always kept).
fn gamma_step_linear(
    prev: &ChaosElement,
    new: &ChaosElement,
    keep: Option<&[usize]>,
) -> Result<ChaosElement> {
    prev.check_dim(new)?;
    let mut out = ChaosElement::constant(prev.dim, 0.0);
    for (&a, u) in &new.terms {
        for (&b, v) in &prev.terms {
            for r in 1..=a.min(b) {
                let n = a + b - 2 * r;
                if n > 0 && keep.is_some_and(|k| !k.contains(&n)) {
                    continue;
                }
                let c = a as f64 * beta(a - 1, b - 1, r - 1);
                out.add_kernel(&contract_sym(u, v, r)?, c)?;
            }
        }
    }
    Ok(out)
}

/// Constant term of `gamma_step(prev, new)`: `Σ_a a! ⟨u_a, v_a⟩`.
fn gamma_step_constant(prev: &ChaosElement, new: &ChaosElement) -> Result<f64> {
    let mut s = 0.0;
    for (&a, u) in &new.terms {
        if let Some(v) = prev.terms.get(&a) {
            s += factorial(a) * u.inner(v)?;
        }
    }
    Ok(s)
}

/// Ways to evaluate a joint cumulant; all agree where they apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CumulantPath {
    Auto,
    /// Sum of Gamma-fold expectations over orderings of all but the first index.
    GammaFold,
    /// Matrix chain products; second-chaos components only.
    SecondChaos,
    /// Triangle pairing of three single integrals.
    Triangle,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChaosVector {
    components: Vec<ChaosElement>,
}

impl ChaosVector {
    pub fn new(components: Vec<ChaosElement>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(invalid("empty chaos vector"));
        };
        for c in &components {
            first.check_dim(c)?;
        }
        Ok(ChaosVector { components })
    }

    /// `(I_{q_1}(f_1), ..., I_{q_d}(f_d))`.
    pub fn pure(kernels: Vec<SymKernel>) -> Result<Self> {
        if kernels.iter().any(|k| k.order() == 0) {
            return Err(invalid("pure components need order >= 1"));
        }
        ChaosVector::new(kernels.into_iter().map(ChaosElement::integral).collect())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim
    }

    pub fn components(&self) -> &[ChaosElement] {
        &self.components
    }

    pub fn component(&self, i: usize) -> Result<&ChaosElement> {
        self.components
            .get(i)
            .ok_or_else(|| invalid("component index out of range"))
    }

    pub fn is_pure(&self) -> bool {
        self.components.iter().all(|c| c.pure_order().is_some())
    }

    /// `(q_1, ..., q_d)` of a pure vector.
    pub fn orders(&self) -> Result<Vec<usize>> {
        self.components
            .iter()
            .map(|c| c.pure_order().ok_or(Error::NonPure))
            .collect()
    }

    /// Pure kernel `f_i`.
    pub fn kernel(&self, i: usize) -> Result<&SymKernel> {
        let c = self.component(i)?;
        let q = c.pure_order().ok_or(Error::NonPure)?;
        Ok(&c.terms[&q])
    }

    pub fn covariance(&self) -> Result<Matrix> {
        let d = self.len();
        let mut m = Matrix::zeros(d, d);
        for i in 0..d {
            for j in i..d {
                let v = self.components[i].covariance(&self.components[j])?;
                m.set(i, j, v);
                m.set(j, i, v);
            }
        }
        Ok(m)
    }

    pub fn evaluate(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.components.iter().map(|c| c.evaluate(xi)).collect()
    }

    pub fn evaluators(&self) -> Vec<Evaluator> {
        self.components.iter().map(Evaluator::new).collect()
    }

    /// `Γ_{l_1, ..., l_k}(F)`: start from `F_{l_1}` and fold [`gamma_step`]
    /// with each following component entering the derivative slot.
    pub fn gamma(&self, indices: &[usize]) -> Result<ChaosElement> {
        let (&first, rest) = indices
            .split_first()
            .ok_or_else(|| invalid("empty index list"))?;
        let mut acc = self.component(first)?.clone();
        for &l in rest {
            acc = gamma_step_linear(&acc, self.component(l)?, None)?;
        }
        Ok(acc)
    }

    /// `Γ_ij = ⟨D F_i, -D L^{-1} F_j⟩`.
    pub fn gamma_ij(&self, i: usize, j: usize) -> Result<ChaosElement> {
        self.gamma(&[j, i])
    }

    /// `Var Γ_ij`, read off the chaos expansion of `Γ_ij`.
    pub fn var_gamma(&self, i: usize, j: usize) -> Result<f64> {
        Ok(self.gamma_ij(i, j)?.variance())
    }

    pub fn discrepancy(&self, c: &GaussianSpec) -> Result<DiscrepancyReport> {
        let d = self.len();
        if c.dim() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                found: c.dim(),
            });
        }
        let covariance = self.covariance()?;
        let mut var_gamma = Matrix::zeros(d, d);
        for i in 0..d {
            for j in 0..d {
                var_gamma.set(i, j, self.var_gamma(i, j)?);
            }
        }
        let delta_gamma = libm::sqrt(var_gamma.data().iter().sum::<f64>());
        let delta_c = libm::sqrt(
            covariance
                .data()
                .iter()
                .zip(c.cov().data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>(),
        );
        Ok(DiscrepancyReport {
            var_gamma,
            delta_gamma,
            delta_c,
            phi: delta_gamma + delta_c,
            covariance,
        })
    }

    /// `κ_α(F)`.
    pub fn joint_cumulant(&self, alpha: &MultiIndex) -> Result<f64> {
        self.joint_cumulant_with(alpha, CumulantPath::Auto)
    }

    pub fn joint_cumulant_with(&self, alpha: &MultiIndex, path: CumulantPath) -> Result<f64> {
        if alpha.dim() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                found: alpha.dim(),
            });
        }
        let elems: Vec<&ChaosElement> = alpha
            .coordinates()
            .iter()
            .map(|&l| &self.components[l])
            .collect();
        joint_cumulant_of(&elems, path)
    }

    /// `ρ_ijk = E[Γ_{ijk}(F)] / sqrt(Var Γ_ij)`.
    pub fn rho(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        let v = self.var_gamma(i, j)?;
        if !(v > 0.0) {
            return Err(Error::Numerical(
                "Var Γ_ij vanishes; ρ is set to zero by convention".into(),
            ));
        }
        Ok(self.gamma(&[i, j, k])?.mean() / libm::sqrt(v))
    }

    /// Both sides of `ρ_ijk + ρ_jik = κ_{e_i+e_j+e_k} / sqrt(Var Γ_ij)`.
    /// The identity holds when the three orders agree.
    pub fn rho_identity(&self, i: usize, j: usize, k: usize) -> Result<(f64, f64)> {
        let lhs = self.rho(i, j, k)? + self.rho(j, i, k)?;
        let alpha = MultiIndex::from_indices(self.len(), &[i, j, k])?;
        Ok((
            lhs,
            self.joint_cumulant(&alpha)? / libm::sqrt(self.var_gamma(i, j)?),
        ))
    }
}

/// Joint cumulant `κ(F_{l_1}, ..., F_{l_m})`. The fold paths keep `F_{l_1}`
/// first, so rotating the arguments exercises a different expansion.
pub fn joint_cumulant_of(elems: &[&ChaosElement], path: CumulantPath) -> Result<f64> {
    let m = elems.len();
    if m == 0 {
        return Err(invalid("cumulant of order zero"));
    }
    for e in elems {
        elems[0].check_dim(e)?;
    }
    let low = elems.iter().all(|e| e.max_order() <= 2);
    let cap = if low {
        MAX_CUMULANT_ORDER_LOW
    } else {
        MAX_CUMULANT_ORDER
    };
    if m > cap {
        return Err(Error::UnsupportedOrder { order: m, max: cap });
    }
    if m == 1 {
        return Ok(elems[0].mean());
    }
    let path = match path {
        CumulantPath::Auto if m >= 3 && elems.iter().all(|e| e.pure_order() == Some(2)) => {
            CumulantPath::SecondChaos
        }
        CumulantPath::Auto => CumulantPath::GammaFold,
        p => p,
    };
    match path {
        CumulantPath::GammaFold | CumulantPath::Auto => fold_cumulant(elems),
        CumulantPath::SecondChaos => second_chaos_cumulant(elems),
        CumulantPath::Triangle => triangle_cumulant(elems),
    }
}

/// Distinct labels among `elems[1..]` with multiplicities.
fn label_counts(elems: &[&ChaosElement]) -> (Vec<usize>, Vec<usize>) {
    let mut reps: Vec<usize> = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    'outer: for (n, e) in elems.iter().enumerate().skip(1) {
        for (k, &r) in reps.iter().enumerate() {
            if core::ptr::eq(*e, elems[r]) || **e == *elems[r] {
                counts[k] += 1;
                continue 'outer;
            }
        }
        reps.push(n);
        counts.push(1);
    }
    (reps, counts)
}

fn fold_cumulant(elems: &[&ChaosElement]) -> Result<f64> {
    let (reps, mut counts) = label_counts(elems);
    fold_dfs(
        elems,
        &reps,
        &mut counts,
        elems.len() - 1,
        &elems[0].centered(),
    )
}

fn fold_dfs(
    elems: &[&ChaosElement],
    reps: &[usize],
    counts: &mut [usize],
    left: usize,
    acc: &ChaosElement,
) -> Result<f64> {
    if left == 1 {
        let k = counts.iter().position(|&c| c == 1).expect("one label left");
        return gamma_step_constant(acc, elems[reps[k]]);
    }
    let mut total = 0.0;
    for k in 0..reps.len() {
        let c = counts[k];
        if c == 0 {
            continue;
        }
        counts[k] -= 1;
        let keep = if left == 2 {
            let last = counts.iter().position(|&c| c == 1).expect("one label left");
            Some(elems[reps[last]].orders())
        } else {
            None
        };
        let next = gamma_step_linear(acc, elems[reps[k]], keep.as_deref())?;
        total += c as f64 * fold_dfs(elems, reps, counts, left - 1, &next)?;
        counts[k] += 1;
    }
    Ok(total)
}

fn second_chaos_cumulant(elems: &[&ChaosElement]) -> Result<f64> {
    let mut mats = Vec::with_capacity(elems.len());
    for e in elems {
        if e.pure_order() != Some(2) {
            return Err(invalid(
                "second-chaos path needs single order-two integrals",
            ));
        }
        mats.push(e.terms[&2].tensor().as_matrix()?);
    }
    let (reps, mut counts) = label_counts(elems);
    let m = elems.len();
    let chain = chain_dfs(&mats, &reps, &mut counts, m - 1, &mats[0])?;
    Ok(libm::pow(2.0, (m - 1) as f64) * chain)
}

/// Sum over orderings of `⟨A_last, sym(A_k sym(... sym(A_2 A_1)))⟩`.
fn chain_dfs(
    mats: &[Matrix],
    reps: &[usize],
    counts: &mut [usize],
    left: usize,
    acc: &Matrix,
) -> Result<f64> {
    if left == 1 {
        let k = counts.iter().position(|&c| c == 1).expect("one label left");
        return Ok(mats[reps[k]].frobenius_dot(acc));
    }
    let mut total = 0.0;
    for k in 0..reps.len() {
        let c = counts[k];
        if c == 0 {
            continue;
        }
        counts[k] -= 1;
        let next = mats[reps[k]].matmul(acc)?.symmetric_part();
        total += c as f64 * chain_dfs(mats, reps, counts, left - 1, &next)?;
        counts[k] += 1;
    }
    Ok(total)
}

/// Third cumulant of single integrals from the triangle pairing
/// `⟨f_i ⊗_r f_j, f_k⟩`, where `r` is the number of variables shared by the
/// first two kernels.
fn triangle_cumulant(elems: &[&ChaosElement]) -> Result<f64> {
    if elems.len() != 3 {
        return Err(invalid("triangle path needs exactly three components"));
    }
    let mut q = [0usize; 3];
    for (n, e) in elems.iter().enumerate() {
        q[n] = e.pure_order().ok_or(Error::NonPure)?;
    }
    let f: Vec<&SymKernel> = elems
        .iter()
        .enumerate()
        .map(|(n, e)| &e.terms[&q[n]])
        .collect();
    let mut total = 0.0;
    for (b, c) in [(1, 2), (2, 1)] {
        let (qi, qb, qc) = (q[0], q[b], q[c]);
        if (qi + qb + qc) % 2 == 1 || qi + qb < qc {
            continue;
        }
        let r = (qi + qb - qc) / 2;
        if r < 1 || r > qi.min(qb) {
            continue;
        }
        let coef = qb as f64 * beta(qb - 1, qi - 1, r - 1) * factorial(qc);
        total += coef * contract(f[0].tensor(), f[b].tensor(), r)?.inner(f[c].tensor())?;
    }
    Ok(total)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscrepancyReport {
    pub var_gamma: Matrix,
    pub delta_gamma: f64,
    pub delta_c: f64,
    pub phi: f64,
    pub covariance: Matrix,
}

/// Coefficients `(r, (q_i+q_j-2r)! q_i² β²_{q_i-1,q_j-1}(r-1))` of the
/// contraction norms in `Var Γ_ij`.
pub fn var_gamma_coefficients(qi: usize, qj: usize) -> Vec<(usize, f64)> {
    let top = qi.min(qj) - usize::from(qi == qj);
    (1..=top)
        .map(|r| {
            let b = beta(qi - 1, qj - 1, r - 1);
            (r, factorial(qi + qj - 2 * r) * (qi * qi) as f64 * b * b)
        })
        .collect()
}

/// `Var Γ_ij` from the closed contraction-norm sum.
pub fn var_gamma_formula(fi: &SymKernel, fj: &SymKernel) -> Result<f64> {
    let mut s = 0.0;
    for (r, c) in var_gamma_coefficients(fi.order(), fj.order()) {
        s += c * contract_sym(fi, fj, r)?.norm_sq();
    }
    Ok(s)
}

/// Per component and scale: `κ_4`, `‖f ⊗_r f‖` for `1 <= r <= q-1`, and `Var Γ_ii`.
#[derive(Clone, Debug, PartialEq)]
pub struct FourthMomentRow {
    pub component: usize,
    pub kappa4: f64,
    pub contraction_norms: Vec<f64>,
    pub var_gamma: f64,
}

pub fn fourth_moment_diagnostics(seq: &[ChaosVector]) -> Result<Vec<Vec<FourthMomentRow>>> {
    let mut out = Vec::with_capacity(seq.len());
    for v in seq {
        let orders = v.orders()?;
        let mut rows = Vec::with_capacity(v.len());
        for (i, &q) in orders.iter().enumerate() {
            let f = v.kernel(i)?;
            let contraction_norms = (1..q)
                .map(|r| contract(f.tensor(), f.tensor(), r).map(|t| libm::sqrt(t.norm_sq())))
                .collect::<Result<Vec<_>>>()?;
            let kappa4 = if q == 1 {
                0.0
            } else {
                v.joint_cumulant(
                    &MultiIndex::unit(v.len(), i)
                        .plus_unit(i)
                        .plus_unit(i)
                        .plus_unit(i),
                )?
            };
            rows.push(FourthMomentRow {
                component: i,
                kappa4,
                contraction_norms,
                var_gamma: v.var_gamma(i, i)?,
            });
        }
        out.push(rows);
    }
    Ok(out)
}
