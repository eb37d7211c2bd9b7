//! Moment-cumulant conversion over set partitions, formal cumulants and the
//! third-order Edgeworth correction around a Gaussian base.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::hermite::{GaussianQuadrature, GaussianSpec, TestFunction, DEFAULT_HERMITE_NODES};
use crate::linalg::Matrix;
use crate::multi_index::{factorial, MultiIndex};

/// Partition enumeration is limited to this many elements (Bell(8) = 4140).
pub const MAX_PARTITION_SIZE: usize = 8;

/// Joint cumulants (or formal cumulant differences) indexed by multi-index.
#[derive(Clone, Debug, PartialEq)]
pub struct CumulantSet {
    dim: usize,
    max_order: usize,
    formal: bool,
    values: BTreeMap<MultiIndex, f64>,
}

impl CumulantSet {
    pub fn new(dim: usize, max_order: usize) -> Self {
        CumulantSet {
            dim,
            max_order,
            formal: false,
            values: BTreeMap::new(),
        }
    }

    /// Every `1 <= |α| <= max_order` filled from `f`.
    pub fn from_fn(
        dim: usize,
        max_order: usize,
        mut f: impl FnMut(&MultiIndex) -> Result<f64>,
    ) -> Result<Self> {
        let mut out = CumulantSet::new(dim, max_order);
        for a in MultiIndex::up_to(dim, 1, max_order) {
            let v = f(&a)?;
            out.values.insert(a, v);
        }
        Ok(out)
    }

    /// Cumulants of `N(mean, C)`.
    pub fn gaussian(z: &GaussianSpec, mean: Option<&[f64]>, max_order: usize) -> Self {
        let d = z.dim();
        CumulantSet::from_fn(d, max_order, |a| {
            let c = a.coordinates();
            Ok(match c.len() {
                1 => mean.map_or(0.0, |m| m[c[0]]),
                2 => z.cov().get(c[0], c[1]),
                _ => 0.0,
            })
        })
        .expect("infallible")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn is_formal(&self) -> bool {
        self.formal
    }

    pub fn get(&self, alpha: &MultiIndex) -> Result<f64> {
        self.values
            .get(alpha)
            .copied()
            .ok_or_else(|| invalid(format!("missing cumulant for {:?}", alpha.counts())))
    }

    pub fn insert(&mut self, alpha: MultiIndex, value: f64) {
        self.max_order = self.max_order.max(alpha.order());
        self.values.insert(alpha, value);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&MultiIndex, f64)> {
        self.values.iter().map(|(a, &v)| (a, v))
    }

    /// `κ̃ = κ(F) - κ(Z)`, flagged formal.
    pub fn difference(&self, other: &CumulantSet) -> Result<CumulantSet> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: other.dim,
            });
        }
        let max_order = self.max_order.min(other.max_order);
        let mut out =
            CumulantSet::from_fn(self.dim, max_order, |a| Ok(self.get(a)? - other.get(a)?))?;
        out.formal = true;
        Ok(out)
    }
}

/// All set partitions of `0..n`, each block in increasing order.
pub fn set_partitions(n: usize) -> Result<Vec<Vec<Vec<usize>>>> {
    if n > MAX_PARTITION_SIZE {
        return Err(Error::UnsupportedOrder {
            order: n,
            max: MAX_PARTITION_SIZE,
        });
    }
    let mut out = Vec::new();
    let mut cur: Vec<Vec<usize>> = Vec::new();
    grow(0, n, &mut cur, &mut out);
    Ok(out)
}

fn grow(k: usize, n: usize, cur: &mut Vec<Vec<usize>>, out: &mut Vec<Vec<Vec<usize>>>) {
    if k == n {
        out.push(cur.clone());
        return;
    }
    for b in 0..cur.len() {
        cur[b].push(k);
        grow(k + 1, n, cur, out);
        cur[b].pop();
    }
    cur.push(vec![k]);
    grow(k + 1, n, cur, out);
    cur.pop();
}

fn block_index(d: usize, coords: &[usize], block: &[usize]) -> MultiIndex {
    let mut v = vec![0u32; d];
    for &p in block {
        v[coords[p]] += 1;
    }
    MultiIndex::new(v)
}

/// `μ_α = Σ_π Π_{B ∈ π} κ_{α_B}` over partitions of the elementary decomposition.
pub fn moments_from_cumulants(k: &CumulantSet, alpha: &MultiIndex) -> Result<f64> {
    if alpha.dim() != k.dim {
        return Err(Error::DimensionMismatch {
            expected: k.dim,
            found: alpha.dim(),
        });
    }
    let coords = alpha.coordinates();
    if coords.is_empty() {
        return Ok(1.0);
    }
    let mut total = 0.0;
    for p in set_partitions(coords.len())? {
        let mut prod = 1.0;
        for b in &p {
            prod *= k.get(&block_index(k.dim, &coords, b))?;
        }
        total += prod;
    }
    Ok(total)
}

/// Inverse conversion: `κ_α = Σ_π (-1)^{|π|-1} (|π|-1)! Π_B μ_{α_B}`.
pub fn cumulant_from_moments(
    moment: &mut impl FnMut(&MultiIndex) -> Result<f64>,
    alpha: &MultiIndex,
) -> Result<f64> {
    let coords = alpha.coordinates();
    if coords.is_empty() {
        return Err(invalid("cumulant of order zero"));
    }
    let d = alpha.dim();
    let mut total = 0.0;
    for p in set_partitions(coords.len())? {
        let n = p.len();
        let mut prod = if n % 2 == 1 { 1.0 } else { -1.0 } * factorial(n - 1);
        for b in &p {
            prod *= moment(&block_index(d, &coords, b))?;
        }
        total += prod;
    }
    Ok(total)
}

/// `μ̃_α(F, Z)` for all `1 <= |α| <= max_order` of a formal set.
pub fn formal_moments(k: &CumulantSet) -> Result<BTreeMap<MultiIndex, f64>> {
    MultiIndex::up_to(k.dim, 1, k.max_order)
        .into_iter()
        .map(|a| moments_from_cumulants(k, &a).map(|v| (a, v)))
        .collect()
}

/// `E_3(F, Z, g) = E g(Z) + Σ_{1<=|α|<=3} μ̃_α / α! E[∂_α g(Z)]`.
pub fn edgeworth3(f: &CumulantSet, z: &GaussianSpec, g: &dyn TestFunction) -> Result<f64> {
    let quad = GaussianQuadrature::new(z, None, DEFAULT_HERMITE_NODES)?;
    Ok(edgeworth3_terms(f, z, g, &quad)?.iter().sum())
}

/// Contributions of orders 0..=3 to [`edgeworth3`], with a caller-supplied rule.
pub fn edgeworth3_terms(
    f: &CumulantSet,
    z: &GaussianSpec,
    g: &dyn TestFunction,
    quad: &GaussianQuadrature,
) -> Result<[f64; 4]> {
    let d = z.dim();
    if f.dim != d || g.dim() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: if f.dim != d { f.dim } else { g.dim() },
        });
    }
    if f.max_order < 3 {
        return Err(invalid("edgeworth3 needs cumulants through order 3"));
    }
    let kz = CumulantSet::gaussian(z, None, 3);
    let tilde = f.difference(&kz)?;
    let mut out = [0.0; 4];
    out[0] = quad.expect(|x| g.value(x));
    for a in MultiIndex::up_to(d, 1, 3) {
        let mu = moments_from_cumulants(&tilde, &a)?;
        if mu != 0.0 {
            out[a.order()] += mu / a.factorial() * quad.expect(|x| g.partial(&a, x));
        }
    }
    Ok(out)
}

/// Sample cumulants with delete-a-group jackknife standard errors.
#[derive(Clone, Debug)]
pub struct SampleCumulants {
    pub values: CumulantSet,
    pub se: BTreeMap<MultiIndex, f64>,
    pub n: usize,
}

/// Jackknife group count for [`sample_cumulants`].
pub const JACKKNIFE_GROUPS: usize = 50;

/// Joint sample cumulants to `max_order <= 4` of the rows of a row-major
/// `n × d` sample matrix.
pub fn sample_cumulants(samples: &[f64], d: usize, max_order: usize) -> Result<SampleCumulants> {
    if d == 0 || samples.len() % d != 0 {
        return Err(invalid("sample buffer is not n × d"));
    }
    if max_order == 0 || max_order > 4 {
        return Err(Error::UnsupportedOrder {
            order: max_order,
            max: 4,
        });
    }
    let n = samples.len() / d;
    if n < 10 {
        return Err(invalid(format!("need at least 10 samples, got {n}")));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite sample".into()));
    }
    let mut shift = vec![0.0; d];
    for row in samples.chunks_exact(d) {
        for (s, x) in shift.iter_mut().zip(row) {
            *s += x;
        }
    }
    for s in &mut shift {
        *s /= n as f64;
    }
    let alphas = MultiIndex::up_to(d, 1, max_order);
    let groups = JACKKNIFE_GROUPS.min(n);
    // Power sums about the overall mean, per jackknife group.
    let mut sums = vec![vec![0.0; alphas.len()]; groups];
    let mut sizes = vec![0usize; groups];
    let mut y = vec![0.0; d];
    for (r, row) in samples.chunks_exact(d).enumerate() {
        let g = r * groups / n;
        sizes[g] += 1;
        for i in 0..d {
            y[i] = row[i] - shift[i];
        }
        for (k, a) in alphas.iter().enumerate() {
            let mut p = 1.0;
            for (i, &e) in a.counts().iter().enumerate() {
                for _ in 0..e {
                    p *= y[i];
                }
            }
            sums[g][k] += p;
        }
    }
    let total: Vec<f64> = (0..alphas.len())
        .map(|k| sums.iter().map(|s| s[k]).sum())
        .collect();
    let estimate = |power: &[f64], count: usize| -> Result<Vec<f64>> {
        let lookup: BTreeMap<&MultiIndex, f64> = alphas
            .iter()
            .zip(power)
            .map(|(a, &s)| (a, s / count as f64))
            .collect();
        let mut moment = |b: &MultiIndex| Ok(lookup[b]);
        alphas
            .iter()
            .map(|a| {
                let k = cumulant_from_moments(&mut moment, a)?;
                let c = a.coordinates();
                Ok(if c.len() == 1 { k + shift[c[0]] } else { k })
            })
            .collect()
    };
    let full = estimate(&total, n)?;
    let mut leave: Vec<Vec<f64>> = Vec::with_capacity(groups);
    for g in 0..groups {
        let rest: Vec<f64> = total.iter().zip(&sums[g]).map(|(t, s)| t - s).collect();
        leave.push(estimate(&rest, n - sizes[g])?);
    }
    let mut values = CumulantSet::new(d, max_order);
    let mut se = BTreeMap::new();
    for (k, a) in alphas.iter().enumerate() {
        let mean = leave.iter().map(|l| l[k]).sum::<f64>() / groups as f64;
        let ss: f64 = leave.iter().map(|l| (l[k] - mean) * (l[k] - mean)).sum();
        values.insert(a.clone(), full[k]);
        se.insert(
            a.clone(),
            libm::sqrt(ss * (groups - 1) as f64 / groups as f64),
        );
    }
    Ok(SampleCumulants { values, se, n })
}

/// `E[Z^α]` for centered `Z` with covariance `cov`, by pair partitions.
pub fn isserlis_moment(alpha: &MultiIndex, cov: &Matrix) -> Result<f64> {
    if alpha.dim() != cov.rows() {
        return Err(Error::DimensionMismatch {
            expected: cov.rows(),
            found: alpha.dim(),
        });
    }
    let coords = alpha.coordinates();
    if coords.len() > MAX_PARTITION_SIZE {
        return Err(Error::UnsupportedOrder {
            order: coords.len(),
            max: MAX_PARTITION_SIZE,
        });
    }
    if coords.len() % 2 == 1 {
        return Ok(0.0);
    }
    let mut used = vec![false; coords.len()];
    Ok(pairings(&coords, &mut used, cov))
}

fn pairings(coords: &[usize], used: &mut [bool], cov: &Matrix) -> f64 {
    let Some(first) = used.iter().position(|u| !u) else {
        return 1.0;
    };
    used[first] = true;
    let mut total = 0.0;
    for j in first + 1..coords.len() {
        if !used[j] {
            used[j] = true;
            total += cov.get(coords[first], coords[j]) * pairings(coords, used, cov);
            used[j] = false;
        }
    }
    used[first] = false;
    total
}
