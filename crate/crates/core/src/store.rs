//! JSON persistence of model chains.
//!
//! One document per chain. Matrices are nested arrays of rows and every float
//! is written with 17 significant digits, so `load(save(a)) == a` exactly and
//! re-saving a loaded archive reproduces the file byte for byte. The layout
//! is described in `docs/archive-format.md`.

use std::fs::OpenOptions;
use std::io::{self, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::ser::{Formatter, PrettyFormatter};

use crate::config::PipelineConfig;
use crate::continual::ModeModel;
use crate::error::{Error, Result};
use crate::monitor::Scaler;
use crate::solver::{ColumnReport, ImportanceMatrix, ProjectionMatrix};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Data-generation or solver seeds involved in building the chain.
    pub seeds: Vec<u64>,
    /// Seconds since the Unix epoch when the chain was first created.
    pub created_unix: u64,
    pub tool_version: String,
    /// Free-form description of each mode's training data.
    pub data_sources: Vec<String>,
}

impl Provenance {
    pub fn now(seeds: Vec<u64>) -> Self {
        let created_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Provenance {
            seeds,
            created_unix,
            tool_version: env!("CARGO_PKG_VERSION").to_owned(),
            data_sources: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArchive {
    pub format_version: u32,
    pub models: Vec<ModeModel>,
    pub config: PipelineConfig,
    pub provenance: Provenance,
}

impl ModelArchive {
    pub fn new(first: ModeModel, config: PipelineConfig, provenance: Provenance) -> Self {
        ModelArchive {
            format_version: FORMAT_VERSION,
            models: vec![first],
            config,
            provenance,
        }
    }

    pub fn latest(&self) -> &ModeModel {
        self.models.last().expect("archives hold at least one model")
    }

    pub fn model_for_mode(&self, mode: usize) -> Option<&ModeModel> {
        self.models.iter().find(|m| m.mode_index == mode)
    }

    pub fn push(&mut self, model: ModeModel) -> Result<()> {
        let expected = self.latest().mode_index + 1;
        if model.mode_index != expected {
            return Err(Error::InvariantViolation(format!(
                "appending mode {} to a chain ending at mode {}",
                model.mode_index,
                expected - 1
            )));
        }
        self.models.push(model);
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        if self.models.is_empty() {
            return Err(Error::InvariantViolation("chain holds no models".into()));
        }
        let m = self.models[0].projection.n_vars();
        let l = self.models[0].n_components;
        for (pos, model) in self.models.iter().enumerate() {
            let violation = |msg: String| Err(Error::InvariantViolation(format!("mode {}: {msg}", model.mode_index)));
            if model.mode_index != pos + 1 {
                return Err(Error::InvariantViolation(format!(
                    "model {} carries mode index {}; indices must run 1, 2, 3, ...",
                    pos + 1,
                    model.mode_index
                )));
            }
            if model.projection.n_vars() != m || model.projection.n_components() != l || model.n_components != l {
                return violation(format!("projection shape differs from the chain's {m}x{l}"));
            }
            if model.importance.shape() != (m, l) || model.accumulated_importance.shape() != (m, l) {
                return violation("importance shape differs from the projection".into());
            }
            if model.xi.shape() != (l, l) || model.xi != model.xi.transpose() {
                return violation("score covariance must be a symmetric l x l matrix".into());
            }
            if model.scaler.n_vars() != m {
                return violation("scaler length differs from the variable count".into());
            }
            if !(model.t2_threshold.is_finite() && model.spe_threshold.is_finite()) {
                return violation("thresholds must be finite".into());
            }
            if !(0.0..=1.0).contains(&model.eta) || !(model.gamma >= 0.0) {
                return violation("eta must lie in [0, 1] and gamma be >= 0".into());
            }
            if pos == 0 && model.eta != 1.0 {
                return violation("the first mode must have eta = 1".into());
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        self.validate()?;
        let doc = ArchiveDoc::from(self);
        let mut out = Vec::new();
        let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision::default());
        doc.serialize(&mut ser)
            .map_err(|e| Error::MalformedArchive(format!("serialisation failed: {e}")))?;
        out.push(b'\n');
        Ok(String::from_utf8(out).expect("JSON output is UTF-8"))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::MalformedArchive(e.to_string()))?;
        let version = value
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::MalformedArchive("missing format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::VersionMismatch {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let doc: ArchiveDoc =
            serde_json::from_value(value).map_err(|e| Error::MalformedArchive(e.to_string()))?;
        let archive = doc.into_archive()?;
        archive.validate()?;
        Ok(archive)
    }
}

/// Writes `archive` to `path`. Fails if the file exists unless `overwrite`.
pub fn save_chain(archive: &ModelArchive, path: &Path, overwrite: bool) -> Result<()> {
    let text = archive.to_json()?;
    let mut opts = OpenOptions::new();
    opts.write(true);
    if overwrite {
        opts.create(true).truncate(true);
    } else {
        opts.create_new(true);
    }
    let mut file = opts.open(path).map_err(|e| {
        if e.kind() == io::ErrorKind::AlreadyExists {
            Error::AlreadyExists(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    file.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))?;
    file.sync_all().map_err(|e| Error::io(path, e))
}

pub fn load_chain(path: &Path) -> Result<ModelArchive> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ModelArchive::from_json(&text)
}

/// Pretty printer that writes floats with 17 significant digits.
#[derive(Default)]
struct FullPrecision(PrettyFormatter<'static>);

impl Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        if !value.is_finite() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "non-finite float"));
        }
        write!(writer, "{value:.16e}")
    }

    fn begin_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_array(w)
    }
    fn end_array<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array(w)
    }
    fn begin_array_value<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_array_value(w, first)
    }
    fn end_array_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_array_value(w)
    }
    fn begin_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object(w)
    }
    fn end_object<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object(w)
    }
    fn begin_object_key<W: ?Sized + Write>(&mut self, w: &mut W, first: bool) -> io::Result<()> {
        self.0.begin_object_key(w, first)
    }
    fn begin_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.begin_object_value(w)
    }
    fn end_object_value<W: ?Sized + Write>(&mut self, w: &mut W) -> io::Result<()> {
        self.0.end_object_value(w)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArchiveDoc {
    format_version: u32,
    config: PipelineConfig,
    provenance: Provenance,
    models: Vec<ModelDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelDoc {
    mode_index: usize,
    n_components: usize,
    eta: f64,
    gamma: f64,
    projection: Vec<Vec<f64>>,
    importance: Vec<Vec<f64>>,
    accumulated_importance: Vec<Vec<f64>>,
    xi: Vec<Vec<f64>>,
    scaler_mean: Vec<f64>,
    scaler_std: Vec<f64>,
    t2_threshold: f64,
    spe_threshold: f64,
    solver_report: Vec<ColumnReport>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::MalformedArchive(format!("{what} is not a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}

impl From<&ModelArchive> for ArchiveDoc {
    fn from(a: &ModelArchive) -> Self {
        ArchiveDoc {
            format_version: a.format_version,
            config: a.config.clone(),
            provenance: a.provenance.clone(),
            models: a
                .models
                .iter()
                .map(|m| ModelDoc {
                    mode_index: m.mode_index,
                    n_components: m.n_components,
                    eta: m.eta,
                    gamma: m.gamma,
                    projection: rows_of(m.projection.as_matrix()),
                    importance: rows_of(m.importance.as_matrix()),
                    accumulated_importance: rows_of(m.accumulated_importance.as_matrix()),
                    xi: rows_of(&m.xi),
                    scaler_mean: m.scaler.mean.iter().copied().collect(),
                    scaler_std: m.scaler.std.iter().copied().collect(),
                    t2_threshold: m.t2_threshold,
                    spe_threshold: m.spe_threshold,
                    solver_report: m.solver_report.clone(),
                })
                .collect(),
        }
    }
}

impl ArchiveDoc {
    fn into_archive(self) -> Result<ModelArchive> {
        let models = self
            .models
            .into_iter()
            .map(|d| {
                let invalid = |e: Error| Error::InvariantViolation(format!("mode {}: {e}", d.mode_index));
                Ok(ModeModel {
                    mode_index: d.mode_index,
                    projection: ProjectionMatrix::new(matrix_from_rows(&d.projection, "projection")?)
                        .map_err(invalid)?,
                    importance: ImportanceMatrix::new(matrix_from_rows(&d.importance, "importance")?)
                        .map_err(invalid)?,
                    accumulated_importance: ImportanceMatrix::new(matrix_from_rows(
                        &d.accumulated_importance,
                        "accumulated_importance",
                    )?)
                    .map_err(invalid)?,
                    xi: matrix_from_rows(&d.xi, "xi")?,
                    scaler: Scaler::new(
                        DVector::from_vec(d.scaler_mean.clone()),
                        DVector::from_vec(d.scaler_std.clone()),
                    )
                    .map_err(invalid)?,
                    t2_threshold: d.t2_threshold,
                    spe_threshold: d.spe_threshold,
                    n_components: d.n_components,
                    eta: d.eta,
                    gamma: d.gamma,
                    solver_report: d.solver_report,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelArchive {
            format_version: self.format_version,
            models,
            config: self.config,
            provenance: self.provenance,
        })
    }
}
