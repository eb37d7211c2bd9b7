//! Deterministic chunked Monte Carlo.
//!
//! Chunk `c` draws from ChaCha8 seeded with the run seed on stream `c`, so a
//! chunk's samples do not depend on which thread runs it. Per-chunk
//! accumulators are merged in chunk order, which makes results bit-identical
//! across thread counts.

use chaoslab_core::chaos::ChaosVector;
use chaoslab_core::hermite::TestFunction;
use chaoslab_core::linalg::{symmetric_eigen, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const THREADS_ENV: &str = "CHAOSLAB_THREADS";
pub const MIN_ACCEPTANCE_SAMPLES: usize = 1000;
/// Control directions with correlation eigenvalue below this fraction of the
/// largest are dropped from the regression.
pub const CONTROL_RANK_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct McConfig {
    pub samples: usize,
    pub seed: u64,
    #[serde(default = "default_chunk")]
    pub chunk: usize,
    #[serde(default = "default_ci")]
    pub ci_level: f64,
}

fn default_chunk() -> usize {
    4096
}

fn default_ci() -> f64 {
    0.99
}

impl McConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        McConfig {
            samples,
            seed,
            chunk: default_chunk(),
            ci_level: default_ci(),
        }
    }

    pub fn with_chunk(mut self, chunk: usize) -> Self {
        self.chunk = chunk;
        self
    }

    pub fn validate(&self) -> LabResult<()> {
        if self.samples < 2 {
            return Err(LabError::config("samples", "need at least 2 samples"));
        }
        if self.chunk == 0 {
            return Err(LabError::config("chunk", "chunk size must be positive"));
        }
        if !(self.ci_level > 0.0 && self.ci_level < 1.0) {
            return Err(LabError::config("ci_level", "must lie in (0, 1)"));
        }
        Ok(())
    }

    pub fn chunks(&self) -> usize {
        self.samples.div_ceil(self.chunk)
    }

    /// Sample count of chunk `c`.
    pub fn chunk_len(&self, c: usize) -> usize {
        self.chunk.min(self.samples - c * self.chunk)
    }

    /// Two-sided normal quantile for `ci_level`.
    pub fn z_value(&self) -> f64 {
        normal_quantile(0.5 + 0.5 * self.ci_level)
    }
}

pub fn chunk_rng(seed: u64, chunk: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(chunk as u64);
    rng
}

pub fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for x in out {
        *x = StandardNormal.sample(rng);
    }
}

/// `--threads`, else `CHAOSLAB_THREADS`, else rayon's default.
pub fn resolve_threads(flag: Option<usize>) -> LabResult<Option<usize>> {
    if let Some(n) = flag {
        return Ok(Some(n));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| LabError::config(THREADS_ENV, format!("not a thread count: {v:?}"))),
        Err(_) => Ok(None),
    }
}

/// Runs `f` inside a pool of `threads` workers (rayon's default when `None`).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> LabResult<R> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        b = b.num_threads(n.max(1));
    }
    let pool = b
        .build()
        .map_err(|e| LabError::Numerical(format!("thread pool: {e}")))?;
    Ok(pool.install(f))
}

/// Running mean and co-moment matrix of fixed-width sample vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct CoMoments {
    n: usize,
    mean: Vec<f64>,
    /// Row-major `Σ (x - x̄)(x - x̄)ᵀ`.
    comoment: Vec<f64>,
    delta: Vec<f64>,
}

impl CoMoments {
    pub fn new(width: usize) -> Self {
        CoMoments {
            n: 0,
            mean: vec![0.0; width],
            comoment: vec![0.0; width * width],
            delta: vec![0.0; width],
        }
    }

    pub fn width(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn push(&mut self, x: &[f64]) {
        let w = self.width();
        self.n += 1;
        let inv = 1.0 / self.n as f64;
        for i in 0..w {
            self.delta[i] = x[i] - self.mean[i];
            self.mean[i] += self.delta[i] * inv;
        }
        for i in 0..w {
            let after = x[i] - self.mean[i];
            for j in 0..w {
                self.comoment[i * w + j] += after * self.delta[j];
            }
        }
    }

    /// Pairwise merge; deterministic for a fixed merge order.
    pub fn merge(&mut self, other: &CoMoments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let w = self.width();
        let (na, nb) = (self.n as f64, other.n as f64);
        let n = na + nb;
        for i in 0..w {
            self.delta[i] = other.mean[i] - self.mean[i];
        }
        for i in 0..w {
            for j in 0..w {
                self.comoment[i * w + j] +=
                    other.comoment[i * w + j] + self.delta[i] * self.delta[j] * na * nb / n;
            }
        }
        for i in 0..w {
            self.mean[i] += self.delta[i] * nb / n;
        }
        self.n += other.n;
    }

    /// Unbiased covariance of columns `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        self.comoment[i * self.width() + j] / (self.n as f64 - 1.0)
    }

    /// Mean of column 0 with its standard error.
    pub fn estimate(&self) -> Estimate {
        Estimate {
            mean: self.mean[0],
            se: (self.covariance(0, 0) / self.n as f64).sqrt(),
            n: self.n,
        }
    }

    /// Regression control-variate estimate of `E[x_0]` given the exact means
    /// of columns `1..`.
    pub fn controlled(&self, control_means: &[f64]) -> LabResult<Estimate> {
        let p = self.width() - 1;
        if control_means.len() != p {
            return Err(LabError::Numerical(format!(
                "{p} controls but {} known means",
                control_means.len()
            )));
        }
        if p == 0 {
            return Ok(self.estimate());
        }
        if self.n <= p + 1 {
            return Err(LabError::Numerical("too few samples for controls".into()));
        }
        // Pseudo-inverse on the correlation scale, so collinear or constant
        // controls drop out instead of failing the solve.
        let sd: Vec<f64> = (0..p).map(|a| self.covariance(a + 1, a + 1).max(0.0).sqrt()).collect();
        let inv_sd: Vec<f64> = sd.iter().map(|&s| if s > 0.0 { 1.0 / s } else { 0.0 }).collect();
        let corr = Matrix::from_fn(p, p, |a, b| self.covariance(a + 1, b + 1) * inv_sd[a] * inv_sd[b]);
        let scy: Vec<f64> = (0..p).map(|a| self.covariance(a + 1, 0) * inv_sd[a]).collect();
        let eig = symmetric_eigen(&corr)?;
        let top = eig.values.iter().fold(0.0f64, |m, &v| m.max(v));
        let mut w = vec![0.0; p];
        let mut rank = 0;
        for (k, &lam) in eig.values.iter().enumerate() {
            if lam <= CONTROL_RANK_TOL * top {
                continue;
            }
            rank += 1;
            let proj: f64 = (0..p).map(|a| eig.vectors.get(a, k) * scy[a]).sum::<f64>() / lam;
            for (a, wa) in w.iter_mut().enumerate() {
                *wa += proj * eig.vectors.get(a, k);
            }
        }
        let beta: Vec<f64> = w.iter().zip(&inv_sd).map(|(w, s)| w * s).collect();
        let scy: Vec<f64> = (0..p).map(|a| self.covariance(a + 1, 0)).collect();
        let p = rank;
        let shift: f64 = beta
            .iter()
            .zip(&self.mean[1..])
            .zip(control_means)
            .map(|((b, m), mu)| b * (m - mu))
            .sum();
        let explained: f64 = beta.iter().zip(&scy).map(|(b, c)| b * c).sum();
        let n = self.n as f64;
        let resid = (self.covariance(0, 0) - explained).max(0.0) * (n - 1.0) / (n - 1.0 - p as f64);
        Ok(Estimate {
            mean: self.mean[0] - shift,
            se: (resid / n).sqrt(),
            n: self.n,
        })
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Estimate {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Estimate {
    /// `|self - x| / se`, infinite when `se` is zero and the values differ.
    pub fn z_score(&self, x: f64) -> f64 {
        let d = (self.mean - x).abs();
        if d == 0.0 {
            0.0
        } else {
            d / self.se
        }
    }
}

/// Runs `sample(rng, row)` once per draw and accumulates the rows. `row` has
/// `width` entries.
pub fn simulate<S>(mc: &McConfig, width: usize, make: impl Fn() -> S + Sync, sample: impl Fn(&mut S, &mut ChaCha8Rng, &mut [f64]) + Sync) -> LabResult<CoMoments> {
    mc.validate()?;
    let parts: Vec<CoMoments> = (0..mc.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(mc.seed, c);
            let mut state = make();
            let mut acc = CoMoments::new(width);
            let mut row = vec![0.0; width];
            for _ in 0..mc.chunk_len(c) {
                sample(&mut state, &mut rng, &mut row);
                acc.push(&row);
            }
            acc
        })
        .collect();
    let mut total = CoMoments::new(width);
    for p in &parts {
        total.merge(p);
    }
    check_finite(&total)?;
    Ok(total)
}

/// Like [`simulate`] but keeps every row, concatenated in chunk order.
pub fn collect<S>(mc: &McConfig, width: usize, make: impl Fn() -> S + Sync, sample: impl Fn(&mut S, &mut ChaCha8Rng, &mut [f64]) + Sync) -> LabResult<Vec<f64>> {
    mc.validate()?;
    let parts: Vec<Vec<f64>> = (0..mc.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(mc.seed, c);
            let mut state = make();
            let len = mc.chunk_len(c);
            let mut out = vec![0.0; len * width];
            for row in out.chunks_exact_mut(width) {
                sample(&mut state, &mut rng, row);
            }
            out
        })
        .collect();
    let out: Vec<f64> = parts.concat();
    if out.iter().any(|x| !x.is_finite()) {
        return Err(LabError::Numerical("non-finite sample".into()));
    }
    Ok(out)
}

/// Like [`simulate`] for samplers that produce a whole chunk at once.
/// `sample(rng, rows, out)` fills `out` with `rows × width` values.
pub fn simulate_batched(mc: &McConfig, width: usize, sample: impl Fn(&mut ChaCha8Rng, usize, &mut [f64]) -> LabResult<()> + Sync) -> LabResult<CoMoments> {
    mc.validate()?;
    let parts: Vec<LabResult<CoMoments>> = (0..mc.chunks())
        .into_par_iter()
        .map(|c| {
            let mut rng = chunk_rng(mc.seed, c);
            let rows = mc.chunk_len(c);
            let mut out = vec![0.0; rows * width];
            sample(&mut rng, rows, &mut out)?;
            let mut acc = CoMoments::new(width);
            for row in out.chunks_exact(width) {
                acc.push(row);
            }
            Ok(acc)
        })
        .collect();
    let mut total = CoMoments::new(width);
    for p in parts {
        total.merge(&p?);
    }
    check_finite(&total)?;
    Ok(total)
}

fn check_finite(m: &CoMoments) -> LabResult<()> {
    if m.mean.iter().chain(&m.comoment).all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Numerical("non-finite Monte Carlo sums".into()))
    }
}

/// `E g(F)` for a chaos vector driven by standard Gaussian coordinates.
pub fn estimate_expectation(f: &ChaosVector, g: &dyn TestFunction, mc: &McConfig) -> LabResult<Estimate> {
    if g.dim() != f.len() {
        return Err(LabError::config(
            "g",
            format!("test function has arity {}, vector has {} components", g.dim(), f.len()),
        ));
    }
    let evals = f.evaluators();
    let dim = f.dim();
    let acc = simulate(
        mc,
        1,
        || (vec![0.0; dim], vec![0.0; evals.len()], Vec::new()),
        |(xi, x, he), rng, row| {
            fill_normal(rng, xi);
            for (v, e) in x.iter_mut().zip(&evals) {
                *v = e.eval_with(xi, he);
            }
            row[0] = g.value(x);
        },
    )?;
    Ok(acc.estimate())
}

/// Draws of `F` itself, row-major `samples × len(F)`.
pub fn sample_vector(f: &ChaosVector, mc: &McConfig) -> LabResult<Vec<f64>> {
    let evals = f.evaluators();
    let dim = f.dim();
    collect(
        mc,
        f.len(),
        || (vec![0.0; dim], Vec::new()),
        |(xi, he), rng, row| {
            fill_normal(rng, xi);
            for (v, e) in row.iter_mut().zip(&evals) {
                *v = e.eval_with(xi, he);
            }
        },
    )
}

/// Inverse standard normal CDF.
pub fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::standard().inverse_cdf(p)
}
