//! Sequential training across operating modes.
//!
//! The first mode is fitted from scratch. Every later mode is fitted from its
//! own data plus the previous [`ModeModel`] only: each loading vector is pulled
//! towards its predecessor with a strength proportional to the importance
//! accumulated over all earlier modes.

use nalgebra::DMatrix;

use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::monitor::{
    apply_scaler, compute_statistics, compute_xi, fit_scaler, kde_threshold,
    select_num_components, Scaler, DEFAULT_CONFIDENCE,
};
use crate::solver::{
    fit_projection, ColumnReport, ImportanceMatrix, PriorTerm, ProjectionMatrix, SolverConfig,
};

#[derive(Debug, Clone, PartialEq)]
pub struct ModeModel {
    pub mode_index: usize,
    pub projection: ProjectionMatrix,
    pub importance: ImportanceMatrix,
    /// Sum of the importances of modes `1..=mode_index`.
    pub accumulated_importance: ImportanceMatrix,
    /// Score covariance used by T^2.
    pub xi: DMatrix<f64>,
    pub scaler: Scaler,
    pub t2_threshold: f64,
    pub spe_threshold: f64,
    pub n_components: usize,
    pub eta: f64,
    pub gamma: f64,
    pub solver_report: Vec<ColumnReport>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeData {
    pub samples: DataMatrix,
    pub mode_index: usize,
}

impl ModeData {
    pub fn new(samples: DataMatrix, mode_index: usize) -> Self {
        ModeData {
            samples,
            mode_index,
        }
    }

    fn check_size(&self) -> Result<()> {
        let (n, m) = (self.samples.n_samples(), self.samples.n_vars());
        if n <= m {
            return Err(Error::InsufficientData {
                samples: n,
                variables: m,
            });
        }
        Ok(())
    }
}

/// How the first mode chooses its number of components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ComponentRule {
    /// Cumulative percent variance threshold in `(0, 1]`.
    Cpv(f64),
    Fixed(usize),
}

pub fn train_first_mode(data: &ModeData, config: &SolverConfig, cpv_threshold: f64) -> Result<ModeModel> {
    train_first_mode_with(data, config, ComponentRule::Cpv(cpv_threshold), DEFAULT_CONFIDENCE)
}

pub fn train_first_mode_with(
    data: &ModeData,
    config: &SolverConfig,
    rule: ComponentRule,
    confidence: f64,
) -> Result<ModeModel> {
    config.validate()?;
    if data.mode_index != 1 {
        return Err(Error::InvalidArgument(format!(
            "first-mode training needs mode index 1, got {}",
            data.mode_index
        )));
    }
    data.check_size()?;
    let scaler = fit_scaler(&data.samples)?;
    let scaled = apply_scaler(&data.samples, &scaler)?;
    let l = match rule {
        ComponentRule::Cpv(threshold) => select_num_components(&scaled, threshold)?,
        ComponentRule::Fixed(l) => l,
    };
    let fit = fit_projection(&scaled, l, config, None)?;
    let xi = compute_xi(&fit.projection, &scaled, 1.0, None, None)?;
    let (t2_threshold, spe_threshold) = thresholds(&scaled, &fit.projection, &xi, confidence)?;
    Ok(ModeModel {
        mode_index: 1,
        accumulated_importance: fit.importance.clone(),
        importance: fit.importance,
        projection: fit.projection,
        xi,
        scaler,
        t2_threshold,
        spe_threshold,
        n_components: l,
        eta: 1.0,
        gamma: 0.0,
        solver_report: fit.columns,
    })
}

pub fn update_model(
    previous: &ModeModel,
    data: &ModeData,
    config: &SolverConfig,
    gamma: f64,
    eta: f64,
) -> Result<ModeModel> {
    update_model_with(previous, data, config, gamma, eta, DEFAULT_CONFIDENCE)
}

pub fn update_model_with(
    previous: &ModeModel,
    data: &ModeData,
    config: &SolverConfig,
    gamma: f64,
    eta: f64,
    confidence: f64,
) -> Result<ModeModel> {
    config.validate()?;
    if data.mode_index != previous.mode_index + 1 {
        return Err(Error::InvalidArgument(format!(
            "mode {} cannot follow mode {}",
            data.mode_index, previous.mode_index
        )));
    }
    if !(gamma.is_finite() && gamma >= 0.0) {
        return Err(Error::InvalidArgument(format!("gamma must be >= 0, got {gamma}")));
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1], got {eta}")));
    }
    let l = previous.n_components;
    if previous.projection.n_components() != l || previous.accumulated_importance.shape().1 != l {
        return Err(Error::DimensionMismatch(format!(
            "previous model declares {l} components but stores {}",
            previous.projection.n_components()
        )));
    }
    if data.samples.n_vars() != previous.projection.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "mode {} data has {} variables, model {}",
            data.mode_index,
            data.samples.n_vars(),
            previous.projection.n_vars()
        )));
    }
    data.check_size()?;

    let scaler = fit_scaler(&data.samples)?;
    let scaled = apply_scaler(&data.samples, &scaler)?;
    let priors = (0..l)
        .map(|j| {
            PriorTerm::new(
                previous.projection.column(j),
                previous.accumulated_importance.column(j) * gamma,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let fit = fit_projection(&scaled, l, config, Some(&priors))?;
    let accumulated = accumulate_importance(&previous.accumulated_importance, &fit.importance)?;
    let xi = compute_xi(
        &fit.projection,
        &scaled,
        eta,
        Some(&previous.projection),
        Some(&previous.xi),
    )?;
    let (t2_threshold, spe_threshold) = thresholds(&scaled, &fit.projection, &xi, confidence)?;
    Ok(ModeModel {
        mode_index: data.mode_index,
        projection: fit.projection,
        importance: fit.importance,
        accumulated_importance: accumulated,
        xi,
        scaler,
        t2_threshold,
        spe_threshold,
        n_components: l,
        eta,
        gamma,
        solver_report: fit.columns,
    })
}

pub fn accumulate_importance(
    prev_acc: &ImportanceMatrix,
    new: &ImportanceMatrix,
) -> Result<ImportanceMatrix> {
    if prev_acc.shape() != new.shape() {
        return Err(Error::DimensionMismatch(format!(
            "importance shapes {:?} and {:?} differ",
            prev_acc.shape(),
            new.shape()
        )));
    }
    ImportanceMatrix::new(prev_acc.as_matrix() + new.as_matrix())
}

fn thresholds(
    scaled: &DataMatrix,
    projection: &ProjectionMatrix,
    xi: &DMatrix<f64>,
    confidence: f64,
) -> Result<(f64, f64)> {
    let (t2, spe) = compute_statistics(scaled, projection, xi)?;
    Ok((kde_threshold(&t2, confidence)?, kde_threshold(&spe, confidence)?))
}
