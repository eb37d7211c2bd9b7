use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Result};

/// `α = (α_1, ..., α_d)` with nonnegative entries.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(counts: Vec<u32>) -> Self {
        MultiIndex(counts)
    }

    pub fn zero(d: usize) -> Self {
        MultiIndex(vec![0; d])
    }

    pub fn unit(d: usize, i: usize) -> Self {
        let mut v = vec![0; d];
        v[i] = 1;
        MultiIndex(v)
    }

    /// Count occurrences of each coordinate in `indices`.
    pub fn from_indices(d: usize, indices: &[usize]) -> Result<Self> {
        let mut v = vec![0u32; d];
        for &i in indices {
            if i >= d {
                return Err(invalid("coordinate out of range"));
            }
            v[i] += 1;
        }
        Ok(MultiIndex(v))
    }

    pub fn counts(&self) -> &[u32] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn order(&self) -> usize {
        self.0.iter().map(|&a| a as usize).sum()
    }

    /// `α! = Π α_i!`.
    pub fn factorial(&self) -> f64 {
        self.0.iter().map(|&a| factorial(a as usize)).product()
    }

    /// Elementary decomposition as the sorted coordinate list
    /// `(1, .., 1, 2, .., 2, ...)` with coordinate `i` repeated `α_i` times.
    pub fn coordinates(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.order());
        for (i, &a) in self.0.iter().enumerate() {
            out.extend(core::iter::repeat_n(i, a as usize));
        }
        out
    }

    pub fn plus_unit(&self, i: usize) -> Self {
        let mut v = self.0.clone();
        v[i] += 1;
        MultiIndex(v)
    }

    pub fn minus_unit(&self, i: usize) -> Option<Self> {
        if self.0[i] == 0 {
            return None;
        }
        let mut v = self.0.clone();
        v[i] -= 1;
        Some(MultiIndex(v))
    }

    /// `x^α`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&a, &xi)| libm::pow(xi, a as f64))
            .product()
    }

    /// All multi-indices of dimension `d` with `|α| = k`, in lexicographic order.
    pub fn of_order(d: usize, k: usize) -> Vec<MultiIndex> {
        let mut out = Vec::new();
        let mut cur = vec![0u32; d];
        fill(&mut cur, 0, k as u32, &mut out);
        out
    }

    /// All multi-indices of dimension `d` with `lo <= |α| <= hi`.
    pub fn up_to(d: usize, lo: usize, hi: usize) -> Vec<MultiIndex> {
        (lo..=hi).flat_map(|k| MultiIndex::of_order(d, k)).collect()
    }
}

fn fill(cur: &mut Vec<u32>, pos: usize, left: u32, out: &mut Vec<MultiIndex>) {
    if pos + 1 == cur.len() {
        cur[pos] = left;
        out.push(MultiIndex(cur.clone()));
        return;
    }
    if cur.is_empty() {
        return;
    }
    for a in (0..=left).rev() {
        cur[pos] = a;
        fill(cur, pos + 1, left - a, out);
    }
    cur[pos] = 0;
}

pub fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_round_trip() {
        let a = MultiIndex::new(vec![2, 0, 1]);
        assert_eq!(a.coordinates(), vec![0, 0, 2]);
        assert_eq!(MultiIndex::from_indices(3, &[2, 0, 0]).unwrap(), a);
        assert_eq!(a.order(), 3);
        assert_eq!(a.factorial(), 2.0);
    }

    #[test]
    fn counts_by_order() {
        assert_eq!(MultiIndex::of_order(2, 3).len(), 4);
        assert_eq!(MultiIndex::of_order(3, 2).len(), 6);
        assert_eq!(MultiIndex::up_to(2, 1, 3).len(), 9);
        assert_eq!(binomial(6, 2), 15.0);
    }
}
