//! Experiment configuration files. See `docs/config.md` for the schema.

use std::path::{Path, PathBuf};

use chaoslab_core::families::{CauchyBump, EvenFunction, GaussianBump};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::io::read_json;
use crate::mc::{McConfig, MIN_ACCEPTANCE_SAMPLES};
use crate::testfn::GSpec;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    pub g: GSpec,
    pub mc: McConfig,
    /// Regress on the monomials of `F` of degree 1 to 3, whose means are known
    /// exactly from the cumulants.
    #[serde(default = "yes")]
    pub control_variates: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Family {
    Sheet(SheetParams),
    Breuer(BreuerParams),
    Toeplitz(ToeplitzParams),
    Custom(CustomParams),
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::Sheet(_) => "sheet",
            Family::Breuer(_) => "breuer",
            Family::Toeplitz(_) => "toeplitz",
            Family::Custom(_) => "custom",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Family::Sheet(p) => p.xi.len(),
            Family::Breuer(p) => p.orders.len(),
            Family::Toeplitz(p) => p.tests.len(),
            Family::Custom(p) => p.dim,
        }
    }
}

/// `ε_i = xi_i · a` for each `a` in `scales`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SheetParams {
    #[serde(default = "one")]
    pub l: u32,
    pub xi: Vec<f64>,
    pub scales: Vec<f64>,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Horizon of the time-changed integral in units of `1 / min ε`.
    #[serde(default = "default_horizon_factor")]
    pub horizon_factor: f64,
}

fn one() -> u32 {
    1
}

fn default_step() -> f64 {
    0.25
}

fn default_horizon_factor() -> f64 {
    25.0
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BreuerParams {
    pub hurst: f64,
    pub orders: Vec<usize>,
    pub horizons: Vec<usize>,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bump {
    Gaussian {
        scale: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
    Cauchy {
        scale: f64,
        #[serde(default = "unit")]
        amplitude: f64,
    },
}

fn unit() -> f64 {
    1.0
}

impl Bump {
    pub fn build(&self) -> LabResult<Box<dyn EvenFunction>> {
        let (scale, amplitude) = match *self {
            Bump::Gaussian { scale, amplitude } | Bump::Cauchy { scale, amplitude } => {
                (scale, amplitude)
            }
        };
        if !(scale > 0.0 && amplitude.is_finite()) {
            return Err(LabError::config("bump", "need scale > 0 and finite amplitude"));
        }
        Ok(match *self {
            Bump::Gaussian { .. } => Box::new(GaussianBump { scale, amplitude }),
            Bump::Cauchy { .. } => Box::new(CauchyBump { scale, amplitude }),
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ToeplitzParams {
    pub density: Bump,
    pub tests: Vec<Bump>,
    pub horizons: Vec<f64>,
    pub step: f64,
}

/// Chaos-vector files, one per scale. Relative paths resolve against the
/// config file's directory.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CustomParams {
    pub dim: usize,
    pub vectors: Vec<CustomScale>,
    /// Matrix file for the target covariance; defaults to each vector's own.
    #[serde(default)]
    pub target: Option<PathBuf>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CustomScale {
    pub scale: f64,
    pub path: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> LabResult<Self> {
        let cfg: ExperimentConfig = read_json(path)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks that serde cannot express.
    pub fn validate(&self) -> LabResult<()> {
        self.mc.validate()?;
        if self.mc.samples < MIN_ACCEPTANCE_SAMPLES {
            return Err(LabError::config(
                "mc.samples",
                format!("rate runs need at least {MIN_ACCEPTANCE_SAMPLES} samples"),
            ));
        }
        let d = self.family.dim();
        if d == 0 {
            return Err(LabError::config("family", "no components"));
        }
        self.g.check_dim(d)?;
        let positive = |name: &str, v: &[f64]| -> LabResult<()> {
            if v.is_empty() {
                return Err(LabError::config(name, "empty list"));
            }
            match v.iter().position(|x| !(*x > 0.0 && x.is_finite())) {
                Some(i) => Err(LabError::config(format!("{name}[{i}]"), "must be positive")),
                None => Ok(()),
            }
        };
        match &self.family {
            Family::Sheet(p) => {
                positive("family.sheet.xi", &p.xi)?;
                positive("family.sheet.scales", &p.scales)?;
                positive("family.sheet.step", &[p.step])?;
                positive("family.sheet.horizon_factor", &[p.horizon_factor])?;
                if p.l != 1 {
                    return Err(LabError::config(
                        "family.sheet.l",
                        "simulation is implemented for l = 1",
                    ));
                }
            }
            Family::Breuer(p) => {
                if !(p.hurst > 0.0 && p.hurst < 0.5) {
                    return Err(LabError::config("family.breuer.hurst", "must lie in (0, 1/2)"));
                }
                if let Some(i) = p.orders.iter().position(|&q| q < 2) {
                    return Err(LabError::config(format!("family.breuer.orders[{i}]"), "must be >= 2"));
                }
                if p.horizons.is_empty() {
                    return Err(LabError::config("family.breuer.horizons", "empty list"));
                }
                if let Some(i) = p.horizons.iter().position(|&t| !(2..=2048).contains(&t)) {
                    return Err(LabError::config(
                        format!("family.breuer.horizons[{i}]"),
                        "must lie in 2..=2048",
                    ));
                }
            }
            Family::Toeplitz(p) => {
                positive("family.toeplitz.horizons", &p.horizons)?;
                positive("family.toeplitz.step", &[p.step])?;
            }
            Family::Custom(p) => {
                if p.vectors.is_empty() {
                    return Err(LabError::config("family.custom.vectors", "empty list"));
                }
                let s: Vec<f64> = p.vectors.iter().map(|v| v.scale).collect();
                positive("family.custom.vectors.scale", &s)?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::from_json_str;

    const SHEET: &str = r#"{
        "family": {"sheet": {"xi": [1.0, 0.5], "scales": [0.4, 0.2]}},
        "g": {"kind": "sin", "a": [0.5, 0.5]},
        "mc": {"samples": 1000, "seed": 7}
    }"#;

    #[test]
    fn defaults_filled() {
        let c: ExperimentConfig = from_json_str(SHEET, "c").unwrap();
        c.validate().unwrap();
        match &c.family {
            Family::Sheet(p) => {
                assert_eq!(p.l, 1);
                assert_eq!(p.step, 0.25);
            }
            _ => unreachable!(),
        }
        assert!(c.control_variates);
        assert_eq!(c.mc.chunk, 4096);
    }

    #[test]
    fn field_level_errors() {
        let bad = SHEET.replace("\"scales\"", "\"scale\"");
        let e = from_json_str::<ExperimentConfig>(&bad, "c").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("family.sheet"), "{e}");
        let bad = SHEET.replace("[0.5, 0.5]", "[0.5]");
        let c: ExperimentConfig = from_json_str(&bad, "c").unwrap();
        assert!(c.validate().unwrap_err().to_string().contains("arity"));
        let bad = SHEET.replace("0.2]", "-0.2]");
        let c: ExperimentConfig = from_json_str(&bad, "c").unwrap();
        let e = c.validate().unwrap_err();
        assert!(e.to_string().contains("family.sheet.scales[1]"), "{e}");
    }
}
