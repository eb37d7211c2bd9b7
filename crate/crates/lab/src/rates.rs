//! Rate tables and log-log slope fits.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

/// One scale of an experiment. Column order is the CSV schema.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct RateRow {
    pub scale: f64,
    pub delta_gamma: f64,
    pub delta_c: f64,
    pub phi: f64,
    pub raw_gap: f64,
    pub raw_gap_se: f64,
    pub corrected_gap: f64,
    pub corrected_gap_se: f64,
}

pub const CSV_HEADER: &str =
    "scale,delta_gamma,delta_c,phi,raw_gap,raw_gap_se,corrected_gap,corrected_gap_se";

impl RateRow {
    /// `|corrected| <= |raw| + k·SE`, with SE the two gap errors combined.
    pub fn improvement_holds(&self, k: f64) -> bool {
        let se = self.raw_gap_se.hypot(self.corrected_gap_se);
        self.corrected_gap.abs() <= self.raw_gap.abs() + k * se
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct Slope {
    pub slope: f64,
    pub se: f64,
    pub intercept: f64,
}

impl Slope {
    pub fn within(&self, target: f64, tol: f64) -> bool {
        (self.slope - target).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct RateSlopes {
    pub delta_gamma: Option<Slope>,
    pub delta_c: Option<Slope>,
    pub phi: Option<Slope>,
    pub raw_gap: Option<Slope>,
    pub corrected_gap: Option<Slope>,
}

impl RateTable {
    /// Sorts by scale and checks the table invariants.
    pub fn new(mut rows: Vec<RateRow>) -> LabResult<Self> {
        rows.sort_by(|a, b| a.scale.total_cmp(&b.scale));
        for r in &rows {
            if !(r.scale > 0.0) {
                return Err(LabError::Numerical(format!("nonpositive scale {}", r.scale)));
            }
            if r.raw_gap_se < 0.0 || r.corrected_gap_se < 0.0 {
                return Err(LabError::Numerical(format!("negative SE at scale {}", r.scale)));
            }
        }
        Ok(RateTable { rows })
    }

    pub fn write_csv(&self, path: &Path) -> LabResult<()> {
        let file = std::fs::File::create(path).map_err(|e| LabError::io(path, e))?;
        self.write_to(file)
    }

    pub fn write_to(&self, w: impl std::io::Write) -> LabResult<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| LabError::io("<csv>", e))?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> LabResult<Self> {
        let file = std::fs::File::open(path).map_err(|e| LabError::io(path, e))?;
        let mut rd = csv::Reader::from_reader(file);
        let header: Vec<String> = rd.headers()?.iter().map(str::to_string).collect();
        if header.join(",") != CSV_HEADER {
            return Err(LabError::config(
                path.display().to_string(),
                format!("header must be {CSV_HEADER}"),
            ));
        }
        let rows = rd.deserialize().collect::<Result<Vec<RateRow>, _>>()?;
        RateTable::new(rows)
    }

    fn column(&self, f: impl Fn(&RateRow) -> f64) -> (Vec<f64>, Vec<f64>) {
        self.rows.iter().map(|r| (r.scale, f(r))).unzip()
    }

    /// Fits every column that is positive throughout (gaps by magnitude).
    pub fn slopes(&self) -> RateSlopes {
        let fit = |f: &dyn Fn(&RateRow) -> f64| {
            let (x, y) = self.column(f);
            rate_fit(&x, &y).ok()
        };
        RateSlopes {
            delta_gamma: fit(&|r| r.delta_gamma),
            delta_c: fit(&|r| r.delta_c),
            phi: fit(&|r| r.phi),
            raw_gap: fit(&|r| r.raw_gap.abs()),
            corrected_gap: fit(&|r| r.corrected_gap.abs()),
        }
    }

    pub fn improvement_holds(&self, k: f64) -> bool {
        self.rows.iter().all(|r| r.improvement_holds(k))
    }
}

/// Least-squares slope of `log y` against `log x`, with its standard error.
pub fn rate_fit(x: &[f64], y: &[f64]) -> LabResult<Slope> {
    if x.len() != y.len() {
        return Err(LabError::Numerical("scale and value columns differ in length".into()));
    }
    if x.len() < 4 {
        return Err(LabError::Numerical(format!(
            "need at least 4 rows for a rate fit, got {}",
            x.len()
        )));
    }
    if let Some(v) = x.iter().chain(y).find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(LabError::Numerical(format!(
            "rate fit needs positive finite values, got {v}"
        )));
    }
    let n = x.len() as f64;
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    if sxx == 0.0 {
        return Err(LabError::Numerical("all scales equal".into()));
    }
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = lx
        .iter()
        .zip(&ly)
        .map(|(a, b)| {
            let r = b - intercept - slope * a;
            r * r
        })
        .sum();
    Ok(Slope {
        slope,
        se: (rss / (n - 2.0) / sxx).sqrt(),
        intercept,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn exact_power_law() {
        let x: Vec<f64> = (0..6).map(|k| 64.0 * 2f64.powi(k)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(-0.5)).collect();
        let s = rate_fit(&x, &y).unwrap();
        assert!((s.slope + 0.5).abs() < 1e-12);
        assert!(s.se < 1e-12);
        assert!((s.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn noisy_power_law_within_two_se() {
        let mut hits = 0;
        for seed in 0..200 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..8).map(|k| 2f64.powi(k)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|v| v.powf(-1.3) * (0.1 * rng.sample::<f64, _>(StandardNormal)).exp())
                .collect();
            let s = rate_fit(&x, &y).unwrap();
            hits += usize::from((s.slope + 1.3).abs() <= 2.0 * s.se);
        }
        // t with 6 dof: P(|t| <= 2) ≈ 0.908.
        assert!((170..=195).contains(&hits), "{hits}");
    }

    #[test]
    fn rejects_short_or_nonpositive() {
        assert!(rate_fit(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(rate_fit(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, 3.0, 4.0]).is_err());
    }

    #[test]
    fn csv_round_trip_sorted() {
        let row = |s: f64| RateRow {
            scale: s,
            delta_gamma: 1.0 / s,
            delta_c: 0.5,
            phi: 0.5 + 1.0 / s,
            raw_gap: -0.1,
            raw_gap_se: 0.01,
            corrected_gap: 0.02,
            corrected_gap_se: 0.01,
        };
        let t = RateTable::new(vec![row(4.0), row(1.0), row(2.0)]).unwrap();
        assert_eq!(t.rows[0].scale, 1.0);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        t.write_csv(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next().unwrap(), CSV_HEADER);
        assert_eq!(RateTable::read_csv(&p).unwrap(), t);
        assert!(t.improvement_holds(2.0));
    }
}
