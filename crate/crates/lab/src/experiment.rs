//! Rate experiments on the example families and on user-supplied kernels.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chaoslab_core::chaos::ChaosVector;
use chaoslab_core::edgeworth::{edgeworth3_terms, moments_from_cumulants, CumulantSet};
use chaoslab_core::families::{
    breuer_evaluate, BreuerSecondChaos, BreuerSpec, SheetDiscretization, SheetSpec, ToeplitzSpec,
};
use chaoslab_core::hermite::{GaussianQuadrature, GaussianSpec, TestFunction, DEFAULT_HERMITE_NODES};
use chaoslab_core::linalg::{cholesky, symmetric_eigen, Matrix};
use chaoslab_core::MultiIndex;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{
    BreuerParams, CustomParams, ExperimentConfig, Family, SheetParams, ToeplitzParams,
};
use crate::error::{LabError, LabResult};
use crate::io::{load_chaos_vector, load_matrix, write_json};
use crate::mc::{fill_normal, simulate_batched, Estimate, McConfig};
use crate::rates::{RateRow, RateSlopes, RateTable};

/// Exact quantities at one scale.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ScaleReport {
    pub scale: f64,
    /// Family parameters at this scale (`ε`, `T`, ...).
    pub parameters: BTreeMap<String, Vec<f64>>,
    pub covariance: Vec<Vec<f64>>,
    pub target_covariance: Vec<Vec<f64>>,
    pub var_gamma: Vec<Vec<f64>>,
    pub delta_gamma: f64,
    pub delta_c: f64,
    pub phi: f64,
    /// Joint cumulants up to order 3, keyed by the multi-index counts.
    pub cumulants: BTreeMap<String, f64>,
    /// `E g(Z)` and the order 1, 2, 3 Edgeworth contributions.
    pub edgeworth_terms: [f64; 4],
    pub edgeworth3: f64,
    /// Confidence interval for `corrected_gap` at `mc.ci_level`.
    pub corrected_gap_ci: [f64; 2],
    pub estimate: Estimate,
    pub controls: usize,
    /// Family-specific reference values.
    pub extra: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Report {
    pub version: String,
    pub config: ExperimentConfig,
    pub scales: Vec<ScaleReport>,
    pub slopes: RateSlopes,
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub table: RateTable,
    pub report: Report,
}

impl RunOutput {
    /// Writes `rates.csv` and `report.json` into `dir`.
    pub fn write(&self, dir: &Path) -> LabResult<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| LabError::io(dir, e))?;
        let csv = dir.join("rates.csv");
        let json = dir.join("report.json");
        self.table.write_csv(&csv)?;
        write_json(&json, &self.report)?;
        Ok((csv, json))
    }
}

fn rows(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn alpha_key(a: &MultiIndex) -> String {
    let c: Vec<String> = a.counts().iter().map(u32::to_string).collect();
    c.join(",")
}

/// Exact second-order and cumulant data shared by all families.
struct Exact {
    covariance: Matrix,
    target: Matrix,
    var_gamma: Matrix,
    cumulants: CumulantSet,
}

impl Exact {
    fn deltas(&self) -> (f64, f64) {
        let dg = self.var_gamma.data().iter().sum::<f64>().max(0.0).sqrt();
        let dc = self
            .covariance
            .data()
            .iter()
            .zip(self.target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        (dg, dc)
    }
}

/// Monomials of degree 1 to 3 in `d` variables.
pub fn control_monomials(d: usize) -> Vec<MultiIndex> {
    MultiIndex::up_to(d, 1, 3)
}

/// Estimates `E g(F)` from batches of draws of `F`. `draw(rng, rows, out)`
/// fills `out` with `rows × d` values.
fn estimate_gap(
    mc: &McConfig,
    g: &dyn TestFunction,
    cumulants: &CumulantSet,
    use_controls: bool,
    draw: impl Fn(&mut ChaCha8Rng, usize, &mut [f64]) -> LabResult<()> + Sync,
) -> LabResult<(Estimate, usize)> {
    let d = cumulants.dim();
    let controls = if use_controls {
        control_monomials(d)
    } else {
        Vec::new()
    };
    let means = controls
        .iter()
        .map(|a| moments_from_cumulants(cumulants, a))
        .collect::<Result<Vec<_>, _>>()?;
    let width = 1 + controls.len();
    let acc = simulate_batched(mc, width, |rng, n, out| {
        let mut f = vec![0.0; n * d];
        draw(rng, n, &mut f)?;
        for (x, row) in f.chunks_exact(d).zip(out.chunks_exact_mut(width)) {
            row[0] = g.value(x);
            for (r, a) in row[1..].iter_mut().zip(&controls) {
                *r = a.monomial(x);
            }
        }
        Ok(())
    })?;
    Ok((acc.controlled(&means)?, controls.len()))
}

fn scale_report(
    scale: f64,
    parameters: BTreeMap<String, Vec<f64>>,
    exact: &Exact,
    g: &dyn TestFunction,
    estimate: (Estimate, usize),
    extra: BTreeMap<String, f64>,
    z_ci: f64,
) -> LabResult<(RateRow, ScaleReport)> {
    let z = GaussianSpec::new(exact.target.clone())?;
    let quad = GaussianQuadrature::new(&z, None, DEFAULT_HERMITE_NODES)?;
    let terms = edgeworth3_terms(&exact.cumulants, &z, g, &quad)?;
    let e3: f64 = terms.iter().sum();
    let (delta_gamma, delta_c) = exact.deltas();
    let (est, controls) = estimate;
    let row = RateRow {
        scale,
        delta_gamma,
        delta_c,
        phi: delta_gamma + delta_c,
        raw_gap: est.mean - terms[0],
        raw_gap_se: est.se,
        corrected_gap: est.mean - e3,
        corrected_gap_se: est.se,
    };
    let report = ScaleReport {
        scale,
        parameters,
        covariance: rows(&exact.covariance),
        target_covariance: rows(&exact.target),
        var_gamma: rows(&exact.var_gamma),
        delta_gamma,
        delta_c,
        phi: row.phi,
        cumulants: exact
            .cumulants
            .iter()
            .map(|(a, v)| (alpha_key(a), v))
            .collect(),
        edgeworth_terms: terms,
        edgeworth3: e3,
        corrected_gap_ci: [row.corrected_gap - z_ci * est.se, row.corrected_gap + z_ci * est.se],
        estimate: est,
        controls,
        extra,
    };
    Ok((row, report))
}

fn symmetric_from(d: usize, mut f: impl FnMut(usize, usize) -> LabResult<f64>) -> LabResult<Matrix> {
    let mut m = Matrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            m.set(i, j, f(i, j)?);
        }
    }
    Ok(m)
}

/// Dispatches on the family and runs every scale.
pub fn run_experiment(cfg: &ExperimentConfig, base_dir: &Path) -> LabResult<RunOutput> {
    cfg.validate()?;
    let g = cfg.g.build()?;
    let g = g.as_ref();
    let mut out = Vec::new();
    match &cfg.family {
        Family::Sheet(p) => {
            for &a in &p.scales {
                out.push(sheet_scale(p, a, g, cfg)?);
            }
        }
        Family::Breuer(p) => {
            for &t in &p.horizons {
                out.push(breuer_scale(p, t, g, cfg)?);
            }
        }
        Family::Toeplitz(p) => {
            for &t in &p.horizons {
                out.push(toeplitz_scale(p, t, g, cfg)?);
            }
        }
        Family::Custom(p) => {
            let target = match &p.target {
                Some(path) => Some(load_matrix(&base_dir.join(path))?),
                None => None,
            };
            for s in &p.vectors {
                let v = load_chaos_vector(&base_dir.join(&s.path))?;
                out.push(custom_scale(p, s.scale, &v, target.as_ref(), g, cfg)?);
            }
        }
    }
    out.sort_by(|a, b| a.0.scale.total_cmp(&b.0.scale));
    let (rows, scales): (Vec<_>, Vec<_>) = out.into_iter().unzip();
    let table = RateTable::new(rows)?;
    let report = Report {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        scales,
        slopes: table.slopes(),
    };
    Ok(RunOutput { table, report })
}

fn sheet_scale(
    p: &SheetParams,
    a: f64,
    g: &dyn TestFunction,
    cfg: &ExperimentConfig,
) -> LabResult<(RateRow, ScaleReport)> {
    let eps: Vec<f64> = p.xi.iter().map(|x| x * a).collect();
    let spec = SheetSpec::new(p.l, eps.clone())?;
    let e_min = eps.iter().copied().fold(f64::INFINITY, f64::min);
    let disc = SheetDiscretization::new(&spec, p.step, p.horizon_factor / e_min)?;
    let d = eps.len();
    let exact = Exact {
        covariance: disc.covariance()?,
        target: spec.limit_covariance(),
        var_gamma: symmetric_from(d, |i, j| Ok(disc.var_gamma(i, j)?))?,
        cumulants: disc.cumulants(3)?,
    };
    let k = disc.nodes();
    let phi = disc.phi();
    let innov = (1.0 - phi * phi).sqrt();
    let est = estimate_gap(&cfg.mc, g, &exact.cumulants, cfg.control_variates, |rng, n, out| {
        let mut path = vec![0.0; k];
        let mut noise = vec![0.0; k];
        for row in out.chunks_exact_mut(d).take(n) {
            fill_normal(rng, &mut noise);
            let mut u = noise[0];
            path[0] = u;
            for j in 1..k {
                u = phi * u + innov * noise[j];
                path[j] = u;
            }
            disc.evaluate(&path, row);
        }
        Ok(())
    })?;
    let norm = eps.iter().map(|e| e.powi(p.l as i32)).sum::<f64>().sqrt();
    let mut extra = BTreeMap::new();
    extra.insert("gap_normalizer".into(), norm);
    extra.insert("nodes".into(), k as f64);
    for i in 0..d {
        let fm = spec.fourth_moment(i)?;
        extra.insert(format!("continuum_kappa4_{i}"), fm.kappa4);
        extra.insert(
            format!("continuum_kappa3_{i}"),
            spec.cumulant_of(&[i, i, i])?,
        );
    }
    let mut params = BTreeMap::new();
    params.insert("epsilon".into(), eps);
    scale_report(a, params, &exact, g, est, extra, cfg.mc.z_value())
}

fn breuer_scale(
    p: &BreuerParams,
    t: usize,
    g: &dyn TestFunction,
    cfg: &ExperimentConfig,
) -> LabResult<(RateRow, ScaleReport)> {
    let spec = BreuerSpec::new(p.hurst, p.orders.clone(), t)?;
    let d = spec.len();
    let covariance = spec.covariance();
    let target = spec.limit_covariance();
    let exact = if p.orders.iter().all(|&q| q == 2) {
        // Every component is the same functional; closed trace forms.
        let sc = BreuerSecondChaos::new(p.hurst, t)?;
        let cumulants = CumulantSet::from_fn(d, 3, |a| {
            Ok(match a.order() {
                1 => 0.0,
                2 => sc.variance,
                _ => sc.kappa3,
            })
        })?;
        Exact {
            covariance,
            target,
            var_gamma: Matrix::from_fn(d, d, |_, _| sc.var_gamma),
            cumulants,
        }
    } else {
        let (v, _) = spec.build()?;
        Exact {
            covariance,
            target,
            var_gamma: symmetric_from(d, |i, j| Ok(v.var_gamma(i, j)?))?,
            cumulants: CumulantSet::from_fn(d, 3, |a| v.joint_cumulant(a))?,
        }
    };
    let gram = spec.gram();
    let lt = cholesky(&gram)?.transpose();
    let orders = p.orders.clone();
    let est = estimate_gap(&cfg.mc, g, &exact.cumulants, cfg.control_variates, |rng, n, out| {
        let mut xi = Matrix::zeros(n, t);
        fill_normal(rng, xi.data_mut());
        let x = xi.matmul(&lt)?;
        for (r, row) in out.chunks_exact_mut(d).enumerate() {
            breuer_evaluate(&orders, x.row(r), row);
        }
        Ok(())
    })?;
    let mut params = BTreeMap::new();
    params.insert("horizon".into(), vec![t as f64]);
    params.insert("hurst".into(), vec![p.hurst]);
    let mut extra = BTreeMap::new();
    extra.insert(
        "delta_c_exponent".into(),
        1.0 + 2.0 * (p.hurst - 1.0) * *p.orders.iter().min().expect("nonempty") as f64,
    );
    scale_report(t as f64, params, &exact, g, est, extra, cfg.mc.z_value())
}

fn toeplitz_scale(
    p: &ToeplitzParams,
    horizon: f64,
    g: &dyn TestFunction,
    cfg: &ExperimentConfig,
) -> LabResult<(RateRow, ScaleReport)> {
    let spec = ToeplitzSpec::new(
        p.density.build()?,
        p.tests.iter().map(|b| b.build()).collect::<LabResult<_>>()?,
        horizon,
        p.step,
    )?;
    let d = spec.len();
    // Resolution check: second-order cumulants on step and step / 2.
    for i in 0..d {
        spec.cumulant(&MultiIndex::from_indices(d, &[i, i])?)?;
    }
    let grid = spec.grid(p.step)?;
    let exact = Exact {
        covariance: symmetric_from(d, |i, j| Ok(grid.cumulant_exact(&[i, j])?))?,
        target: spec.limit_covariance()?,
        var_gamma: symmetric_from(d, |i, j| Ok(grid.var_gamma(i, j)?))?,
        cumulants: CumulantSet::from_fn(d, 3, |a| {
            let idx = a.coordinates();
            if idx.len() == 1 {
                Ok(0.0)
            } else {
                grid.cumulant_exact(&idx)
            }
        })?,
    };
    // R is often numerically singular, so factor it through its spectrum.
    let n = grid.nodes();
    let e = symmetric_eigen(grid.covariance_operator())?;
    let lt = Matrix::from_fn(n, n, |b, a| e.vectors.get(a, b) * e.values[b].max(0.0).sqrt());
    let h: Vec<Matrix> = (0..d)
        .map(|i| grid.test_operator(i).cloned())
        .collect::<Result<_, _>>()?;
    let means: Vec<f64> = (0..d).map(|i| grid.raw_mean(i)).collect::<Result<_, _>>()?;
    let scale = 1.0 / horizon.sqrt();
    let est = estimate_gap(&cfg.mc, g, &exact.cumulants, cfg.control_variates, |rng, m, out| {
        let mut xi = Matrix::zeros(m, n);
        fill_normal(rng, xi.data_mut());
        let x = xi.matmul(&lt)?;
        for (i, hi) in h.iter().enumerate() {
            let y = x.matmul(hi)?;
            for r in 0..m {
                let q: f64 = x.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                out[r * d + i] = (q - means[i]) * scale;
            }
        }
        Ok(())
    })?;
    let mut params = BTreeMap::new();
    params.insert("horizon".into(), vec![horizon]);
    params.insert("step".into(), vec![p.step]);
    let mut extra = BTreeMap::new();
    extra.insert("nodes".into(), n as f64);
    if d >= 1 && d <= 4 {
        let a = MultiIndex::from_indices(d, &vec![0; 3])?;
        extra.insert("limit_kappa3_scaled_0".into(), spec.limit(&a)?);
    }
    scale_report(horizon, params, &exact, g, est, extra, cfg.mc.z_value())
}

fn custom_scale(
    _p: &CustomParams,
    scale: f64,
    v: &ChaosVector,
    target: Option<&Matrix>,
    g: &dyn TestFunction,
    cfg: &ExperimentConfig,
) -> LabResult<(RateRow, ScaleReport)> {
    let d = v.len();
    if g.dim() != d {
        return Err(LabError::config(
            "family.custom.dim",
            format!("vector at scale {scale} has {d} components"),
        ));
    }
    let covariance = v.covariance()?;
    let target = target.cloned().unwrap_or_else(|| covariance.clone());
    if target.rows() != d {
        return Err(LabError::config("family.custom.target", "dimension mismatch"));
    }
    let means: Vec<f64> = v.components().iter().map(|c| c.mean()).collect();
    let exact = Exact {
        covariance,
        target,
        var_gamma: symmetric_from(d, |i, j| Ok(v.var_gamma(i, j)?))?,
        cumulants: CumulantSet::from_fn(d, 3, |a| {
            let c = a.coordinates();
            if c.len() == 1 {
                Ok(means[c[0]])
            } else {
                v.joint_cumulant(a)
            }
        })?,
    };
    let evals = v.evaluators();
    let dim = v.dim();
    let est = estimate_gap(&cfg.mc, g, &exact.cumulants, cfg.control_variates, |rng, n, out| {
        let mut xi = vec![0.0; dim];
        let mut he = Vec::new();
        for row in out.chunks_exact_mut(d).take(n) {
            fill_normal(rng, &mut xi);
            for (x, e) in row.iter_mut().zip(&evals) {
                *x = e.eval_with(&xi, &mut he);
            }
        }
        Ok(())
    })?;
    let mut params = BTreeMap::new();
    params.insert("dim".into(), vec![dim as f64]);
    scale_report(scale, params, &exact, g, est, BTreeMap::new(), cfg.mc.z_value())
}
