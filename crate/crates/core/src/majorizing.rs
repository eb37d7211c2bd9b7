//! Majorizing integrals `M_r(f, m)`: the eight-copy contraction network that
//! dominates mixed contraction norms of symmetrized contractions.
//!
//! Split the slots of `f` into `r` contracted slots `c`, `m` slots `a` and
//! `p = q - r - m` slots `s`. With `A = f ⊗_r f` as a matrix over `(a, s)` and
//! `B[(a, a'), (s, s')] = A[(a, s), (a', s')]`, the network is `‖B Bᵀ‖²`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::chaos::ChaosVector;
use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::tensor::{contract, contract_sym, SymKernel, Tensor, MAX_ENTRIES};

/// Which side of `B` is contracted first.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elimination {
    /// `‖B Bᵀ‖²`, eliminating the `s` slots first.
    Outer,
    /// `‖Bᵀ B‖²`, eliminating the `a` slots first.
    Inner,
}

#[derive(Clone, Debug)]
pub struct MajorizingSpec<'a> {
    pub kernel: &'a SymKernel,
    pub r: usize,
    pub m: usize,
}

impl<'a> MajorizingSpec<'a> {
    /// `1 <= r <= q` and `m <= q - r`. `r = q` forces `m = 0` and gives `‖f‖⁸`.
    pub fn new(kernel: &'a SymKernel, r: usize, m: usize) -> Result<Self> {
        let q = kernel.order();
        if r == 0 || r > q {
            return Err(Error::InvalidOrder { r, q1: q, q2: q });
        }
        if m > q - r {
            return Err(invalid(format!("m = {m} exceeds q - r = {}", q - r)));
        }
        Ok(MajorizingSpec { kernel, r, m })
    }
}

fn cap(entries: u128, what: &'static str) -> Result<()> {
    if entries > MAX_ENTRIES as u128 {
        return Err(Error::TooLarge {
            what,
            entries,
            limit: MAX_ENTRIES,
        });
    }
    Ok(())
}

/// The matrix `B` for `spec`, with rows `(a, a')` and columns `(s, s')`.
fn b_matrix(spec: &MajorizingSpec) -> Result<Matrix> {
    let f = spec.kernel.tensor();
    let dim = f.dim() as u128;
    let q = f.order();
    let (m, p) = (spec.m, q - spec.r - spec.m);
    cap(dim.pow(2 * (q - spec.r) as u32), "f ⊗_r f")?;
    let a = contract(f, f, spec.r)?;
    // `contract` keeps the free slots of each factor in order: (a, s, a', s').
    let ma = f.dim().pow(m as u32);
    let ms = f.dim().pow(p as u32);
    let data = a.data();
    let mut b = Matrix::zeros(ma * ma, ms * ms);
    for a1 in 0..ma {
        for s1 in 0..ms {
            for a2 in 0..ma {
                for s2 in 0..ms {
                    let v = data[((a1 * ms + s1) * ma + a2) * ms + s2];
                    b.set(a1 * ma + a2, s1 * ms + s2, v);
                }
            }
        }
    }
    Ok(b)
}

/// `M_r(f, m)`.
pub fn majorizing_integral(spec: &MajorizingSpec) -> Result<f64> {
    majorizing_integral_with(spec, Elimination::Outer)
}

pub fn majorizing_integral_with(spec: &MajorizingSpec, order: Elimination) -> Result<f64> {
    let b = b_matrix(spec)?;
    let bt = b.transpose();
    let g = match order {
        Elimination::Outer => {
            cap((b.rows() as u128).pow(2), "B Bᵀ")?;
            b.matmul(&bt)?
        }
        Elimination::Inner => {
            cap((b.cols() as u128).pow(2), "Bᵀ B")?;
            bt.matmul(&b)?
        }
    };
    Ok(g.frobenius_sq())
}

/// `M_r(f, m)` for every admissible `m = 0..=q-r`.
pub fn majorizing_profile(f: &SymKernel, r: usize) -> Result<Vec<f64>> {
    let q = f.order();
    if r == 0 || r > q {
        return Err(Error::InvalidOrder { r, q1: q, q2: q });
    }
    (0..=q - r)
        .map(|m| majorizing_integral(&MajorizingSpec::new(f, r, m)?))
        .collect()
}

/// Outcome of the Majorizing Lemma search for one `(r, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaReport {
    pub r: usize,
    pub s: usize,
    /// `‖(f_i ⊗̃_r f_j) ⊗_s (f_i ⊗̃_r f_j)‖²`.
    pub contraction_norm_sq: f64,
    /// Same quantity without the symmetrization.
    pub plain_norm_sq: f64,
    /// Splitting `(m_k)` with `n_k = s - m_k` maximizing the product, and that product.
    pub best: ([usize; 4], f64),
    /// Smallest product that still dominates the eighth power, if any.
    pub tightest: Option<([usize; 4], f64)>,
    pub holds: bool,
    pub holds_plain: bool,
}

/// Search all splittings `m_k + n_k = s`, `m_k <= q_i - r`, `n_k <= q_j - r`,
/// for `G⁸ <= Π_k M_r(f_i, m_k) M_r(f_j, n_k)`.
pub fn majorizing_bound_check(
    fi: &SymKernel,
    fj: &SymKernel,
    r: usize,
    s: usize,
) -> Result<LemmaReport> {
    let (qi, qj) = (fi.order(), fj.order());
    let top_r = qi.min(qj) - usize::from(qi == qj);
    if r == 0 || r > top_r {
        return Err(Error::InvalidOrder { r, q1: qi, q2: qj });
    }
    let n = qi + qj - 2 * r;
    if s == 0 || s >= n {
        return Err(invalid(format!(
            "s = {s} outside 1..={}",
            n.saturating_sub(1)
        )));
    }
    let h = contract_sym(fi, fj, r)?;
    let contraction_norm_sq = contract(h.tensor(), h.tensor(), s)?.norm_sq();
    let hp: Tensor = contract(fi.tensor(), fj.tensor(), r)?;
    let plain_norm_sq = contract(&hp, &hp, s)?.norm_sq();
    let pi = majorizing_profile(fi, r)?;
    let pj = majorizing_profile(fj, r)?;
    let lo = s.saturating_sub(qj - r);
    let hi = s.min(qi - r);
    if lo > hi {
        return Err(invalid("no admissible splitting"));
    }
    let factor = |m: usize| pi[m] * pj[s - m];
    let lhs = libm::pow(contraction_norm_sq, 8.0);
    let lhs_plain = libm::pow(plain_norm_sq, 8.0);
    let mut best = ([lo; 4], f64::NEG_INFINITY);
    let mut tightest: Option<([usize; 4], f64)> = None;
    let width = hi - lo + 1;
    for code in 0..width.pow(4) {
        let mut t = [0usize; 4];
        let mut c = code;
        for slot in &mut t {
            *slot = lo + c % width;
            c /= width;
        }
        let prod: f64 = t.iter().map(|&m| factor(m)).product();
        if prod > best.1 {
            best = (t, prod);
        }
        if prod >= lhs && tightest.map_or(true, |(_, p)| prod < p) {
            tightest = Some((t, prod));
        }
    }
    let tol = |x: f64| x * (1.0 + 1e-9);
    Ok(LemmaReport {
        r,
        s,
        contraction_norm_sq,
        plain_norm_sq,
        holds: lhs <= tol(best.1),
        holds_plain: lhs_plain <= tol(best.1),
        best,
        tightest,
    })
}

/// Per-scale quantities behind the multiple-integral rate theorem.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionReport {
    /// `Σ_i Σ_{r=1}^{q_i-1} ‖f_i ⊗_r f_i‖`.
    pub contraction_sum: f64,
    /// Per component: `Σ_r ‖f_i ⊗̃_r f_i‖² / Σ_r ‖f_i ⊗_r f_i‖²`; `None` for `q_i = 1`.
    pub symmetrization_ratio: Vec<Option<f64>>,
    /// Per component: `Σ_r Σ_{0<m<q_i-r} M_r(f_i, m) / Σ_r ‖f_i ⊗_r f_i‖⁴`; `None` for `q_i = 1`.
    pub majorizing_ratio: Vec<Option<f64>>,
    /// Components whose symmetrization ratio is at least the requested floor.
    pub compliant: Vec<bool>,
}

pub fn rate_conditions(seq: &[ChaosVector], ratio_floor: f64) -> Result<Vec<ConditionReport>> {
    seq.iter()
        .map(|v| rate_conditions_one(v, ratio_floor))
        .collect()
}

fn rate_conditions_one(v: &ChaosVector, ratio_floor: f64) -> Result<ConditionReport> {
    let orders = v.orders()?;
    let mut contraction_sum = 0.0;
    let mut sym = vec![None; orders.len()];
    let mut maj = vec![None; orders.len()];
    let mut compliant = vec![true; orders.len()];
    for (i, &q) in orders.iter().enumerate() {
        if q == 1 {
            continue;
        }
        let f = v.kernel(i)?;
        let (mut plain2, mut sym2, mut plain4, mut inner) = (0.0, 0.0, 0.0, 0.0);
        for r in 1..q {
            let c = contract(f.tensor(), f.tensor(), r)?;
            let n2 = c.norm_sq();
            contraction_sum += libm::sqrt(n2);
            plain2 += n2;
            plain4 += n2 * n2;
            sym2 += c.symmetrize().norm_sq();
            for m in 1..q - r {
                inner += majorizing_integral(&MajorizingSpec::new(f, r, m)?)?;
            }
        }
        let ratio = if plain2 > 0.0 { sym2 / plain2 } else { 1.0 };
        sym[i] = Some(ratio);
        maj[i] = Some(if plain4 > 0.0 { inner / plain4 } else { 0.0 });
        compliant[i] = ratio >= ratio_floor;
    }
    Ok(ConditionReport {
        contraction_sum,
        symmetrization_ratio: sym,
        majorizing_ratio: maj,
        compliant,
    })
}
