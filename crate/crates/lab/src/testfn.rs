//! Test-function selectors for configs and the CLI.

use std::f64::consts::FRAC_PI_2;

use chaoslab_core::hermite::{DampedPolynomial, Linear, TestFunction, Trig};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};
use crate::io::from_json_str;

/// JSON selector, e.g. `{"kind": "sin", "a": [0.25, 0.25]}`.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GSpec {
    /// `cos(⟨a, x⟩ + phase)`.
    Trig {
        a: Vec<f64>,
        #[serde(default)]
        phase: f64,
    },
    /// `sin(⟨a, x⟩)`.
    Sin { a: Vec<f64> },
    /// `⟨a, x⟩ + b`.
    Linear {
        a: Vec<f64>,
        #[serde(default)]
        b: f64,
    },
    /// `x_{i_1} ⋯ x_{i_k}`, Gaussian-damped at width `tau` when given.
    Monomial {
        dim: usize,
        coords: Vec<usize>,
        #[serde(default)]
        tau: Option<f64>,
    },
    /// `Σ c x^α`, terms as `[exponents, coefficient]`.
    Polynomial {
        dim: usize,
        terms: Vec<(Vec<u32>, f64)>,
        #[serde(default)]
        tau: Option<f64>,
    },
}

impl GSpec {
    pub fn parse(text: &str) -> LabResult<Self> {
        from_json_str(text, "g")
    }

    pub fn dim(&self) -> usize {
        match self {
            GSpec::Trig { a, .. } | GSpec::Sin { a } | GSpec::Linear { a, .. } => a.len(),
            GSpec::Monomial { dim, .. } | GSpec::Polynomial { dim, .. } => *dim,
        }
    }

    pub fn build(&self) -> LabResult<Box<dyn TestFunction>> {
        let bad = |m: String| LabError::config("g", m);
        if self.dim() == 0 {
            return Err(bad("test function of arity zero".into()));
        }
        Ok(match self {
            GSpec::Trig { a, phase } => Box::new(Trig::new(a.clone(), *phase)),
            GSpec::Sin { a } => Box::new(Trig::new(a.clone(), -FRAC_PI_2)),
            GSpec::Linear { a, b } => Box::new(Linear {
                a: a.clone(),
                b: *b,
            }),
            GSpec::Monomial { dim, coords, tau } => Box::new(
                DampedPolynomial::monomial(*dim, coords, *tau).map_err(|e| bad(e.to_string()))?,
            ),
            GSpec::Polynomial { dim, terms, tau } => Box::new(
                DampedPolynomial::new(*dim, terms, *tau).map_err(|e| bad(e.to_string()))?,
            ),
        })
    }

    pub fn check_dim(&self, d: usize) -> LabResult<()> {
        if self.dim() == d {
            Ok(())
        } else {
            Err(LabError::config(
                "g",
                format!("test function has arity {}, expected {d}", self.dim()),
            ))
        }
    }
}
