//! JSON formats for kernels, chaos vectors and matrices.
//!
//! Kernel: `{"dim": M, "order": q, "coeffs": [...]}` with `M^q` row-major
//! coefficients. Chaos vector: `{"dim": M, "components": [{"constant": c,
//! "terms": [{"order": q, "kernel": <kernel>}]}]}`. Matrix: `{"n": N,
//! "rows": [[...], ...]}`.
//!
//! Loaded kernels and matrices must be symmetric. A deviation up to
//! `1e-12 (1 + max|coeff|)` is accepted silently, up to `1e-8` it is
//! symmetrized with a warning, beyond that the file is rejected.

use std::fs;
use std::path::Path;

use chaoslab_core::chaos::{ChaosElement, ChaosVector};
use chaoslab_core::linalg::Matrix;
use chaoslab_core::{SymKernel, Tensor};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, LabResult};

pub const SILENT_TOLERANCE: f64 = 1e-12;
pub const REPAIR_TOLERANCE: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct KernelFile {
    pub dim: usize,
    pub order: usize,
    pub coeffs: Vec<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TermFile {
    pub order: usize,
    pub kernel: KernelFile,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ComponentFile {
    #[serde(default)]
    pub constant: f64,
    pub terms: Vec<TermFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ChaosVectorFile {
    pub dim: usize,
    pub components: Vec<ComponentFile>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MatrixFile {
    pub n: usize,
    pub rows: Vec<Vec<f64>>,
}

/// Parses JSON text, reporting the path of the offending field.
pub fn from_json_str<T: DeserializeOwned>(text: &str, origin: &str) -> LabResult<T> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let at = if field == "." {
            origin.to_string()
        } else {
            format!("{origin}: {field}")
        };
        LabError::config(at, e.into_inner().to_string())
    })
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> LabResult<T> {
    let text = fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
    from_json_str(&text, &path.display().to_string())
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> LabResult<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable value");
    fs::write(path, text + "\n").map_err(|e| LabError::io(path, e))
}

/// Accepts, repairs or rejects a tensor by its largest asymmetry.
fn symmetric(t: Tensor, what: &str) -> LabResult<SymKernel> {
    let dev = t.max_asymmetry();
    let scale = 1.0 + t.data().iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if dev <= SILENT_TOLERANCE * scale {
        return Ok(t.symmetrize());
    }
    if dev <= REPAIR_TOLERANCE {
        log::warn!("{what}: asymmetry {dev:e} symmetrized");
        return Ok(t.symmetrize());
    }
    Err(LabError::config(
        what,
        format!("not symmetric: max deviation {dev:e} exceeds {REPAIR_TOLERANCE:e}"),
    ))
}

impl KernelFile {
    pub fn to_kernel(&self, what: &str) -> LabResult<SymKernel> {
        let want = (self.dim as u128).checked_pow(self.order as u32);
        if want != Some(self.coeffs.len() as u128) {
            return Err(LabError::config(
                format!("{what}.coeffs"),
                format!(
                    "expected dim^order = {}^{} entries, found {}",
                    self.dim,
                    self.order,
                    self.coeffs.len()
                ),
            ));
        }
        if self.coeffs.iter().any(|x| !x.is_finite()) {
            return Err(LabError::config(
                format!("{what}.coeffs"),
                "non-finite coefficient",
            ));
        }
        let t = Tensor::from_vec(self.dim, self.order, self.coeffs.clone())?;
        symmetric(t, what)
    }

    pub fn from_kernel(k: &SymKernel) -> Self {
        KernelFile {
            dim: k.dim(),
            order: k.order(),
            coeffs: k.tensor().data().to_vec(),
        }
    }
}

impl ChaosVectorFile {
    pub fn to_vector(&self) -> LabResult<ChaosVector> {
        let mut comps = Vec::with_capacity(self.components.len());
        for (i, c) in self.components.iter().enumerate() {
            let mut kernels = Vec::with_capacity(c.terms.len());
            for (t, term) in c.terms.iter().enumerate() {
                let at = format!("components[{i}].terms[{t}].kernel");
                if term.kernel.order != term.order {
                    return Err(LabError::config(
                        format!("components[{i}].terms[{t}].order"),
                        format!(
                            "term order {} differs from kernel order {}",
                            term.order, term.kernel.order
                        ),
                    ));
                }
                if term.kernel.dim != self.dim {
                    return Err(LabError::config(
                        format!("{at}.dim"),
                        format!("kernel dim {} differs from {}", term.kernel.dim, self.dim),
                    ));
                }
                kernels.push(term.kernel.to_kernel(&at)?);
            }
            comps.push(ChaosElement::new(self.dim, c.constant, kernels)?);
        }
        if comps.is_empty() {
            return Err(LabError::config("components", "empty chaos vector"));
        }
        Ok(ChaosVector::new(comps)?)
    }

    pub fn from_vector(v: &ChaosVector) -> Self {
        ChaosVectorFile {
            dim: v.dim(),
            components: v
                .components()
                .iter()
                .map(|c| ComponentFile {
                    constant: c.mean(),
                    terms: c
                        .terms()
                        .map(|(q, k)| TermFile {
                            order: q,
                            kernel: KernelFile::from_kernel(k),
                        })
                        .collect(),
                })
                .collect(),
        }
    }
}

impl MatrixFile {
    /// A symmetric matrix under the same tolerance rule as kernels.
    pub fn to_symmetric(&self, what: &str) -> LabResult<Matrix> {
        let n = self.n;
        if self.rows.len() != n || self.rows.iter().any(|r| r.len() != n) {
            return Err(LabError::config(
                format!("{what}.rows"),
                format!("expected {n} rows of length {n}"),
            ));
        }
        let data: Vec<f64> = self.rows.iter().flatten().copied().collect();
        if data.iter().any(|x| !x.is_finite()) {
            return Err(LabError::config(format!("{what}.rows"), "non-finite entry"));
        }
        let m = Matrix::from_vec(n, n, data)?;
        let k = symmetric(Tensor::from_matrix(&m)?, what)?;
        Ok(k.tensor().as_matrix()?)
    }

    pub fn from_matrix(m: &Matrix) -> Self {
        MatrixFile {
            n: m.rows(),
            rows: (0..m.rows()).map(|i| m.row(i).to_vec()).collect(),
        }
    }
}

pub fn load_kernel(path: &Path) -> LabResult<SymKernel> {
    read_json::<KernelFile>(path)?.to_kernel(&path.display().to_string())
}

pub fn load_chaos_vector(path: &Path) -> LabResult<ChaosVector> {
    read_json::<ChaosVectorFile>(path)?.to_vector()
}

pub fn load_matrix(path: &Path) -> LabResult<Matrix> {
    read_json::<MatrixFile>(path)?.to_symmetric(&path.display().to_string())
}
