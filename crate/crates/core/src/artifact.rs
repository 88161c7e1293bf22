//! Versioned JSON model artifacts and the save/load round-trip check.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::exact_gp::{ExactModel, ExactParams};
use crate::io::write_atomic;
use crate::kernels::KernelParams;
use crate::latent_map::{LatentMap, LatentStructure, MixedPoint, MixedSchema, NormalizedData, Normalization};
use crate::lmc::LmcModel;
use crate::prediction::PointPredictions;
use crate::svgp::{InducingSet, SVModel, VariationalGaussian};
use crate::training::{FitSpec, FittedModel, ModelFamily, TrainingTrace};

pub const FORMAT_VERSION: u32 = 1;
pub const PROBE_COUNT: usize = 16;

fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>], ncols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvariantViolation(format!("{what}: ragged rows")));
    }
    Ok(DMatrix::from_row_iterator(rows.len(), ncols, rows.iter().flatten().copied()))
}

fn square(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    from_rows(rows, rows.len(), what)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariationalState {
    pub mu: Vec<f64>,
    /// Lower Cholesky factor of `Σ`, row-major.
    pub sigma_lower: Vec<Vec<f64>>,
}

impl VariationalState {
    fn from_model(v: &VariationalGaussian) -> Self {
        VariationalState {
            mu: v.mu.iter().copied().collect(),
            sigma_lower: to_rows(&v.sigma_lower),
        }
    }

    fn to_model(&self) -> Result<VariationalGaussian> {
        let l = square(&self.sigma_lower, "sigma_lower")?;
        VariationalGaussian::new(DVector::from_vec(self.mu.clone()), l)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExactState {
    pub params: ExactParams,
    /// Training inputs in training units.
    pub train_points: Vec<MixedPoint>,
    /// Training responses in training units.
    pub train_y: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvState {
    pub kernel: KernelParams,
    pub log_noise: f64,
    pub map: LatentMap,
    /// Inducing locations in the transformed space, one row per point.
    pub inducing: Vec<Vec<f64>>,
    pub variational: VariationalState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmcState {
    pub structure: LatentStructure,
    /// `N_op x L` mixing matrix, row-major.
    pub w: Vec<Vec<f64>>,
    pub beta: Vec<f64>,
    pub log_noise: Vec<f64>,
    pub kernels: Vec<KernelParams>,
    pub map: LatentMap,
    pub inducing: Vec<Vec<Vec<f64>>>,
    pub variational: Vec<VariationalState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelState {
    Exact(ExactState),
    Sv(SvState),
    Lmc(LmcState),
}

/// Everything needed to predict without the training data (the dense
/// family carries its training snapshot).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelArtifact {
    pub format_version: u32,
    pub family: ModelFamily,
    pub schema: MixedSchema,
    pub normalization: Normalization,
    pub state: ModelState,
    pub config: FitSpec,
    pub seed: u64,
    pub trace: TrainingTrace,
}

impl ModelArtifact {
    pub fn new(model: &FittedModel, config: &FitSpec, trace: &TrainingTrace) -> Self {
        let (schema, normalization, state) = match model {
            FittedModel::Exact(m) => (
                m.schema.clone(),
                m.normalization.clone(),
                ModelState::Exact(ExactState {
                    params: m.params.clone(),
                    train_points: m.train.points.clone(),
                    train_y: m.train.y.column(0).iter().copied().collect(),
                }),
            ),
            FittedModel::Sv(m) => (
                m.schema.clone(),
                m.normalization.clone(),
                ModelState::Sv(SvState {
                    kernel: m.kernel.clone(),
                    log_noise: m.log_noise,
                    map: m.map.clone(),
                    inducing: to_rows(&m.inducing.points),
                    variational: VariationalState::from_model(&m.var),
                }),
            ),
            FittedModel::Lmc(m) => (
                m.schema.clone(),
                m.normalization.clone(),
                ModelState::Lmc(LmcState {
                    structure: m.structure,
                    w: to_rows(&m.w),
                    beta: m.beta.iter().copied().collect(),
                    log_noise: m.log_noise.iter().copied().collect(),
                    kernels: m.kernels.clone(),
                    map: m.map.clone(),
                    inducing: m.inducing.iter().map(|s| to_rows(&s.points)).collect(),
                    variational: m.var.iter().map(VariationalState::from_model).collect(),
                }),
            ),
        };
        ModelArtifact {
            format_version: FORMAT_VERSION,
            family: model.family(),
            schema,
            normalization,
            state,
            config: config.clone(),
            seed: config.train.seed,
            trace: trace.clone(),
        }
    }

    /// Rebuilds and validates the model.
    pub fn model(&self) -> Result<FittedModel> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                supported: FORMAT_VERSION,
            });
        }
        self.schema.validate()?;
        let width = self.schema.p;
        let model = match &self.state {
            ModelState::Exact(s) => {
                if self.family != ModelFamily::Exact {
                    return Err(family_mismatch(self.family, "exact"));
                }
                let train = NormalizedData {
                    schema: self.schema.clone(),
                    points: s.train_points.clone(),
                    y: DMatrix::from_vec(s.train_y.len(), 1, s.train_y.clone()),
                };
                if train.points.len() != s.train_y.len() {
                    return Err(Error::InvariantViolation("exact training snapshot lengths".into()));
                }
                for pt in &train.points {
                    self.schema.check_point(pt)?;
                }
                s.params.map.validate()?;
                FittedModel::Exact(ExactModel::new(
                    self.schema.clone(),
                    self.normalization.clone(),
                    s.params.clone(),
                    train,
                )?)
            }
            ModelState::Sv(s) => {
                if self.family != ModelFamily::Sv {
                    return Err(family_mismatch(self.family, "sv"));
                }
                let m = SVModel {
                    schema: self.schema.clone(),
                    normalization: self.normalization.clone(),
                    kernel: s.kernel.clone(),
                    log_noise: s.log_noise,
                    map: s.map.clone(),
                    inducing: InducingSet {
                        points: from_rows(&s.inducing, width + s.map.width(), "inducing")?,
                    },
                    var: s.variational.to_model()?,
                };
                m.validate()?;
                FittedModel::Sv(m)
            }
            ModelState::Lmc(s) => {
                let expected = match s.structure {
                    LatentStructure::Shared => ModelFamily::LmcShared,
                    LatentStructure::Independent => ModelFamily::LmcIndependent,
                };
                if self.family != expected {
                    return Err(family_mismatch(self.family, expected.tag()));
                }
                let l = s.kernels.len();
                let m = LmcModel {
                    schema: self.schema.clone(),
                    normalization: self.normalization.clone(),
                    structure: s.structure,
                    w: from_rows(&s.w, l, "w")?,
                    beta: DVector::from_vec(s.beta.clone()),
                    log_noise: DVector::from_vec(s.log_noise.clone()),
                    kernels: s.kernels.clone(),
                    map: s.map.clone(),
                    inducing: s
                        .inducing
                        .iter()
                        .map(|rows| {
                            Ok(InducingSet {
                                points: from_rows(rows, width + s.map.width(), "inducing")?,
                            })
                        })
                        .collect::<Result<_>>()?,
                    var: s
                        .variational
                        .iter()
                        .map(VariationalState::to_model)
                        .collect::<Result<_>>()?,
                };
                m.validate()?;
                FittedModel::Lmc(m)
            }
        };
        Ok(model)
    }
}

fn family_mismatch(family: ModelFamily, state: &str) -> Error {
    Error::InvariantViolation(format!("family tag {} with {state} model state", family.tag()))
}

/// Canonical serialized form: pretty JSON with a trailing newline.
pub fn to_json(artifact: &ModelArtifact) -> Result<String> {
    let mut s = serde_json::to_string_pretty(artifact)?;
    s.push('\n');
    Ok(s)
}

/// Parses an artifact, rejecting other format versions before field checks.
pub fn from_json(text: &str) -> Result<ModelArtifact> {
    let value: Value = serde_json::from_str(text)?;
    let found = value
        .get("format_version")
        .and_then(Value::as_u64)
        .ok_or_else(|| Error::InvalidSchema("artifact has no format_version".into()))?;
    if found != u64::from(FORMAT_VERSION) {
        return Err(Error::UnsupportedVersion {
            found: u32::try_from(found).unwrap_or(u32::MAX),
            supported: FORMAT_VERSION,
        });
    }
    Ok(serde_json::from_value(value)?)
}

pub fn save(artifact: &ModelArtifact, path: &Path) -> Result<()> {
    let text = to_json(artifact)?;
    write_atomic(path, |w| Ok(w.write_all(text.as_bytes())?))
}

/// Loads and validates; returns the artifact and the rebuilt model.
pub fn load(path: &Path) -> Result<(ModelArtifact, FittedModel)> {
    let text = std::fs::read_to_string(path)?;
    let artifact = from_json(&text)?;
    let model = artifact.model()?;
    Ok((artifact, model))
}

/// Fixed query points spread over the normalized input box and all levels.
pub fn probe_points(schema: &MixedSchema, normalization: &Normalization) -> Vec<MixedPoint> {
    (0..PROBE_COUNT)
        .map(|k| {
            let x = (0..schema.p)
                .map(|d| {
                    let u = ((k * (2 * d + 3) + d) % PROBE_COUNT) as f64 / (PROBE_COUNT - 1) as f64;
                    normalization.x_offset[d] + normalization.x_scale[d] * (1.1 * u - 0.05)
                })
                .collect();
            let t = schema
                .levels
                .iter()
                .enumerate()
                .map(|(j, &l)| 1 + (k * (j + 1) + j) % l)
                .collect();
            MixedPoint::new(x, t)
        })
        .collect()
}

/// First path at which two JSON values differ.
fn first_difference(a: &Value, b: &Value, path: &str) -> Option<String> {
    match (a, b) {
        (Value::Object(x), Value::Object(y)) => {
            for (k, v) in x {
                let p = format!("{path}.{k}");
                match y.get(k) {
                    Some(w) => {
                        if let Some(d) = first_difference(v, w, &p) {
                            return Some(d);
                        }
                    }
                    None => return Some(p),
                }
            }
            y.keys().find(|k| !x.contains_key(*k)).map(|k| format!("{path}.{k}"))
        }
        (Value::Array(x), Value::Array(y)) => {
            for (i, (v, w)) in x.iter().zip(y).enumerate() {
                if let Some(d) = first_difference(v, w, &format!("{path}[{i}]")) {
                    return Some(d);
                }
            }
            (x.len() != y.len()).then(|| format!("{path}.length"))
        }
        _ => (a != b).then(|| path.to_string()),
    }
}

fn bits_equal(a: &PointPredictions, b: &PointPredictions) -> bool {
    let same = |x: &DMatrix<f64>, y: &DMatrix<f64>| {
        x.shape() == y.shape() && x.iter().zip(y.iter()).all(|(u, v)| u.to_bits() == v.to_bits())
    };
    same(&a.mean, &b.mean) && same(&a.variance, &b.variance)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundTripReport {
    pub family: ModelFamily,
    pub bytes: usize,
    pub probes: usize,
}

/// Load, re-serialize and compare canonical forms, then compare probe
/// predictions of the loaded and reloaded models bit for bit.
pub fn roundtrip(path: &Path) -> Result<RoundTripReport> {
    let text = std::fs::read_to_string(path)?;
    let artifact = from_json(&text)?;
    let model = artifact.model()?;
    let again = to_json(&artifact)?;
    let original: Value = serde_json::from_str(&text)?;
    let reserialized: Value = serde_json::from_str(&again)?;
    if let Some(field) = first_difference(&original, &reserialized, "$") {
        return Err(Error::RoundTripMismatch(field));
    }
    let reloaded = from_json(&again)?;
    if reloaded != artifact {
        return Err(Error::RoundTripMismatch("$ (decoded artifact)".into()));
    }
    let probes = probe_points(&artifact.schema, &artifact.normalization);
    let before = model.predict_marginal(&probes)?;
    let after = reloaded.model()?.predict_marginal(&probes)?;
    if !bits_equal(&before, &after) {
        return Err(Error::RoundTripMismatch("probe predictions".into()));
    }
    Ok(RoundTripReport {
        family: artifact.family,
        bytes: text.len(),
        probes: probes.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probes_cover_levels() {
        let schema = MixedSchema::new(2, vec![5, 3]).unwrap();
        let probes = probe_points(&schema, &Normalization::identity(2, 1));
        assert_eq!(probes.len(), PROBE_COUNT);
        for j in 0..2 {
            for level in 1..=schema.levels[j] {
                assert!(probes.iter().any(|p| p.t[j] == level));
            }
        }
        for p in &probes {
            schema.check_point(p).unwrap();
        }
    }

    #[test]
    fn future_version_rejected() {
        let err = from_json(r#"{"format_version": 2, "something_new": 1}"#).unwrap_err();
        assert!(matches!(err, Error::UnsupportedVersion { found: 2, supported: 1 }));
    }

    #[test]
    fn difference_paths() {
        let a: Value = serde_json::json!({"a": [1, 2, {"b": 3}]});
        let b: Value = serde_json::json!({"a": [1, 2, {"b": 4}]});
        assert_eq!(first_difference(&a, &b, "$").as_deref(), Some("$.a[2].b"));
        assert_eq!(first_difference(&a, &a, "$"), None);
    }
}
