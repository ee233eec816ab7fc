//! Monitoring statistics, control limits and detection scoring.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::continual::ModeModel;
use crate::data::DataMatrix;
use crate::error::{Error, Result};
use crate::solver::ProjectionMatrix;

/// Confidence level of the control limits.
pub const DEFAULT_CONFIDENCE: f64 = 0.99;
pub const DEFAULT_CPV_THRESHOLD: f64 = 0.999;
/// Minimum sample count for a kernel density control limit.
pub const MIN_KDE_SAMPLES: usize = 30;

const CONDITION_LIMIT: f64 = 1e12;
const RIDGE_SCALE: f64 = 1e-8;

/// Per-variable standardisation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scaler {
    pub mean: DVector<f64>,
    /// Sample standard deviations; strictly positive.
    pub std: DVector<f64>,
}

impl Scaler {
    pub fn new(mean: DVector<f64>, std: DVector<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(Error::DimensionMismatch(format!(
                "scaler mean has {} entries, std {}",
                mean.len(),
                std.len()
            )));
        }
        if let Some(column) = std.iter().position(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::DegenerateData { column });
        }
        Ok(Scaler { mean, std })
    }

    pub fn n_vars(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DataMatrix) -> Result<DataMatrix> {
        apply_scaler(x, self)
    }
}

pub fn fit_scaler(x: &DataMatrix) -> Result<Scaler> {
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    let n = x.n_samples();
    if n < 2 {
        return Err(Error::InsufficientData {
            samples: n,
            variables: x.n_vars(),
        });
    }
    let xm = x.as_matrix();
    let mean = xm.row_mean().transpose();
    let std = DVector::from_iterator(
        x.n_vars(),
        xm.column_iter().zip(mean.iter()).map(|(col, mu)| {
            let ss: f64 = col.iter().map(|v| (v - mu) * (v - mu)).sum();
            (ss / (n as f64 - 1.0)).sqrt()
        }),
    );
    // Rounding in the mean leaves a constant column with a tiny nonzero spread.
    if let Some(column) = std
        .iter()
        .zip(mean.iter())
        .position(|(s, mu)| *s <= 1e-12 * (1.0 + mu.abs()))
    {
        return Err(Error::DegenerateData { column });
    }
    Scaler::new(mean, std)
}

pub fn apply_scaler(x: &DataMatrix, scaler: &Scaler) -> Result<DataMatrix> {
    if x.n_vars() != scaler.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} variables, scaler {}",
            x.n_vars(),
            scaler.n_vars()
        )));
    }
    let xm = x.as_matrix();
    let out = DMatrix::from_fn(xm.nrows(), xm.ncols(), |i, j| {
        (xm[(i, j)] - scaler.mean[j]) / scaler.std[j]
    });
    Ok(DataMatrix::new(out))
}

/// Sample covariance `X^T X / (N - 1)` of already-centred data.
pub fn sample_covariance(x: &DataMatrix) -> Result<DMatrix<f64>> {
    let n = x.n_samples();
    if n < 2 {
        return Err(Error::InsufficientData {
            samples: n,
            variables: x.n_vars(),
        });
    }
    let xm = x.as_matrix();
    Ok(xm.tr_mul(xm) / (n as f64 - 1.0))
}

fn descending_eigenvalues(sym: DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

/// Smallest `l` whose leading eigenvalues reach `cpv_threshold` of the total variance.
pub fn select_num_components(x: &DataMatrix, cpv_threshold: f64) -> Result<usize> {
    if !(cpv_threshold > 0.0 && cpv_threshold <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "cumulative percent variance threshold must lie in (0, 1], got {cpv_threshold}"
        )));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite);
    }
    let values: Vec<f64> = descending_eigenvalues(sample_covariance(x)?)
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateData { column: 0 });
    }
    // Round-off in the eigensolver must not push an exact ratio below the threshold.
    let slack = 1e-12;
    let mut cumulative = 0.0;
    for (idx, v) in values.iter().enumerate() {
        cumulative += v;
        if cumulative / total >= cpv_threshold - slack {
            return Ok(idx + 1);
        }
    }
    Ok(values.len())
}

/// Score covariance `P^T (eta X^T X / (N-1) + (1-eta) P' Xi' P'^T) P`.
pub fn compute_xi(
    projection: &ProjectionMatrix,
    x: &DataMatrix,
    eta: f64,
    prev_projection: Option<&ProjectionMatrix>,
    prev_xi: Option<&DMatrix<f64>>,
) -> Result<DMatrix<f64>> {
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidArgument(format!("eta must lie in [0, 1], got {eta}")));
    }
    if x.n_vars() != projection.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} variables, projection {}",
            x.n_vars(),
            projection.n_vars()
        )));
    }
    let m = projection.n_vars();
    let mut inner = sample_covariance(x)? * eta;
    if eta < 1.0 {
        let (prev_p, prev_xi) = match (prev_projection, prev_xi) {
            (Some(p), Some(xi)) => (p, xi),
            _ => {
                return Err(Error::InvalidArgument(
                    "eta < 1 requires the previous projection and score covariance".into(),
                ))
            }
        };
        let pm = prev_p.as_matrix();
        if pm.nrows() != m || prev_xi.nrows() != pm.ncols() || prev_xi.ncols() != pm.ncols() {
            return Err(Error::DimensionMismatch(
                "previous projection and score covariance shapes disagree".into(),
            ));
        }
        inner += pm * prev_xi * pm.transpose() * (1.0 - eta);
    }
    let p = projection.as_matrix();
    let xi = p.tr_mul(&(inner * p));
    Ok((&xi + xi.transpose()) * 0.5)
}

/// Inverse of the score covariance, ridge-regularised when ill-conditioned.
#[derive(Debug, Clone)]
pub struct T2Metric {
    inverse: DMatrix<f64>,
    pub ridge: f64,
}

impl T2Metric {
    pub fn new(xi: &DMatrix<f64>) -> Result<Self> {
        let l = xi.nrows();
        if l == 0 || xi.ncols() != l {
            return Err(Error::DimensionMismatch(format!(
                "score covariance must be square and non-empty, got {}x{}",
                xi.nrows(),
                xi.ncols()
            )));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        let values = descending_eigenvalues(xi.clone());
        let (largest, smallest) = (values[0], values[l - 1]);
        let ill = smallest <= 0.0 || largest / smallest > CONDITION_LIMIT;
        let ridge = if ill { RIDGE_SCALE * xi.trace() / l as f64 } else { 0.0 };
        let regularised = xi + DMatrix::identity(l, l) * ridge;
        let inverse = regularised
            .cholesky()
            .ok_or_else(|| Error::Singular("score covariance is not positive definite".into()))?
            .inverse();
        Ok(T2Metric { inverse, ridge })
    }

    pub fn evaluate(&self, scores: &DVector<f64>) -> f64 {
        scores.dot(&(&self.inverse * scores)).max(0.0)
    }
}

/// `x^T P Xi^{-1} P^T x` for one sample.
pub fn t2_statistic(
    x: &DVector<f64>,
    projection: &ProjectionMatrix,
    xi: &DMatrix<f64>,
) -> Result<f64> {
    check_sample(x, projection)?;
    let metric = T2Metric::new(xi)?;
    Ok(metric.evaluate(&projection.as_matrix().tr_mul(x)))
}

/// `x^T (I - P P^T) x`, floored at zero for non-orthonormal `P`.
pub fn spe_statistic(x: &DVector<f64>, projection: &ProjectionMatrix) -> Result<f64> {
    check_sample(x, projection)?;
    let scores = projection.as_matrix().tr_mul(x);
    Ok(spe_from_scores(x, &scores))
}

fn spe_from_scores(x: &DVector<f64>, scores: &DVector<f64>) -> f64 {
    (x.norm_squared() - scores.norm_squared()).max(0.0)
}

fn check_sample(x: &DVector<f64>, projection: &ProjectionMatrix) -> Result<()> {
    if x.len() != projection.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "sample has {} entries, projection {} variables",
            x.len(),
            projection.n_vars()
        )));
    }
    Ok(())
}

/// T^2 and SPE for every row of standardised data.
pub fn compute_statistics(
    x: &DataMatrix,
    projection: &ProjectionMatrix,
    xi: &DMatrix<f64>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if x.n_vars() != projection.n_vars() {
        return Err(Error::DimensionMismatch(format!(
            "data has {} variables, model {}",
            x.n_vars(),
            projection.n_vars()
        )));
    }
    let metric = T2Metric::new(xi)?;
    let scores_all = x.as_matrix() * projection.as_matrix();
    let mut t2 = Vec::with_capacity(x.n_samples());
    let mut spe = Vec::with_capacity(x.n_samples());
    for (row, scores) in x.as_matrix().row_iter().zip(scores_all.row_iter()) {
        let sample = row.transpose();
        let scores = scores.transpose();
        t2.push(metric.evaluate(&scores));
        spe.push(spe_from_scores(&sample, &scores));
    }
    Ok((t2, spe))
}

/// Silverman's rule-of-thumb bandwidth `1.06 sigma n^(-1/5)`.
pub fn silverman_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

fn kde_cdf(values: &[f64], h: f64, at: f64) -> f64 {
    let sum: f64 = values
        .iter()
        .map(|v| 0.5 * erfc(-(at - v) / (h * std::f64::consts::SQRT_2)))
        .sum();
    sum / values.len() as f64
}

/// Control limit at which the Gaussian-kernel density estimate of the
/// training statistic reaches `confidence` cumulative probability.
pub fn kde_threshold(values: &[f64], confidence: f64) -> Result<f64> {
    if values.len() < MIN_KDE_SAMPLES {
        return Err(Error::InsufficientData {
            samples: values.len(),
            variables: MIN_KDE_SAMPLES,
        });
    }
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "confidence must lie in (0, 1), got {confidence}"
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite);
    }
    let lo_value = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi_value = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let h = silverman_bandwidth(values);
    if !(h > 0.0) {
        // Point mass: every quantile sits on the common value.
        return Ok(hi_value);
    }
    let mut lo = lo_value - 10.0 * h;
    let mut hi = hi_value + 10.0 * h;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if kde_cdf(values, h, mid) < confidence {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.max(lo_value))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonitoringResult {
    pub t2: Vec<f64>,
    pub spe: Vec<f64>,
    pub t2_threshold: f64,
    pub spe_threshold: f64,
    pub alarms: Vec<bool>,
}

impl MonitoringResult {
    pub fn from_statistics(t2: Vec<f64>, spe: Vec<f64>, t2_threshold: f64, spe_threshold: f64) -> Self {
        let alarms = t2
            .iter()
            .zip(&spe)
            .map(|(t, s)| *t > t2_threshold || *s > spe_threshold)
            .collect();
        MonitoringResult {
            t2,
            spe,
            t2_threshold,
            spe_threshold,
            alarms,
        }
    }

    pub fn len(&self) -> usize {
        self.alarms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alarms.is_empty()
    }

    pub fn alarm_rate(&self) -> f64 {
        if self.alarms.is_empty() {
            return 0.0;
        }
        self.alarms.iter().filter(|a| **a).count() as f64 / self.alarms.len() as f64
    }
}

/// Monitors raw test data with the model's own scaler.
pub fn run_monitoring(x_test: &DataMatrix, model: &ModeModel) -> Result<MonitoringResult> {
    run_monitoring_with_scaler(x_test, model, &model.scaler)
}

/// Monitors raw test data, standardising with `scaler` (the scaler of the
/// mode the samples come from).
pub fn run_monitoring_with_scaler(
    x_test: &DataMatrix,
    model: &ModeModel,
    scaler: &Scaler,
) -> Result<MonitoringResult> {
    let scaled = apply_scaler(x_test, scaler)?;
    let (t2, spe) = compute_statistics(&scaled, &model.projection, &model.xi)?;
    Ok(MonitoringResult::from_statistics(
        t2,
        spe,
        model.t2_threshold,
        model.spe_threshold,
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    /// Alarmed fraction of the samples after the fault start.
    pub fdr: f64,
    /// Alarmed fraction of the samples up to the fault start.
    pub far: f64,
    pub fault_start_index: usize,
}

/// Samples `1..=fault_start` are normal, the remainder faulty. An empty
/// block scores zero.
pub fn score_detection(result: &MonitoringResult, fault_start: usize) -> Result<DetectionScore> {
    let n = result.alarms.len();
    if fault_start > n {
        return Err(Error::InvalidArgument(format!(
            "fault start {fault_start} beyond {n} samples"
        )));
    }
    let fraction = |block: &[bool]| {
        if block.is_empty() {
            0.0
        } else {
            block.iter().filter(|a| **a).count() as f64 / block.len() as f64
        }
    };
    let (normal, faulty) = result.alarms.split_at(fault_start);
    Ok(DetectionScore {
        fdr: fraction(faulty),
        far: fraction(normal),
        fault_start_index: fault_start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_matrix(n: usize, m: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(n, m, |_, j| rng.random_range(-1.0..1.0) * (j + 1) as f64 + j as f64)
    }

    #[test]
    fn scaler_moments_two_pass() {
        let x = DataMatrix::new(random_matrix(200, 4, 1));
        let s = fit_scaler(&x).unwrap();
        let z = apply_scaler(&x, &s).unwrap();
        for col in z.as_matrix().column_iter() {
            let n = col.len() as f64;
            let mean = col.iter().sum::<f64>() / n;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
        // Already standardised data is left (almost) untouched.
        let again = apply_scaler(&z, &fit_scaler(&z).unwrap()).unwrap();
        assert!((again.as_matrix() - z.as_matrix()).amax() < 1e-12);
    }

    #[test]
    fn constant_column_is_degenerate() {
        let mut m = random_matrix(20, 3, 2);
        m.column_mut(1).fill(4.2);
        assert!(matches!(
            fit_scaler(&DataMatrix::new(m)),
            Err(Error::DegenerateData { column: 1 })
        ));
    }

    #[test]
    fn cpv_isotropic_and_two_level() {
        // Rows +-e_j give an exactly isotropic covariance.
        let m = 8;
        let mut rows = Vec::new();
        for j in 0..m {
            for sign in [1.0, -1.0] {
                let mut r = vec![0.0; m];
                r[j] = sign;
                rows.push(r);
            }
        }
        let x = DataMatrix::from_rows(&rows).unwrap();
        assert_eq!(select_num_components(&x, 0.5).unwrap(), 4);
        assert_eq!(select_num_components(&x, 1.0).unwrap(), 8);

        // Eigenvalues 9 and 1.
        let rows = vec![vec![3.0, 0.0], vec![-3.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let x = DataMatrix::from_rows(&rows).unwrap();
        let cov = sample_covariance(&x).unwrap();
        assert!((cov[(0, 0)] / cov[(1, 1)] - 9.0).abs() < 1e-12);
        assert_eq!(select_num_components(&x, 0.9).unwrap(), 1);
        assert_eq!(select_num_components(&x, 0.91).unwrap(), 2);
        assert!(select_num_components(&x, 0.0).is_err());
    }

    fn orthonormal_projection(m: usize, l: usize, seed: u64) -> ProjectionMatrix {
        let q = random_matrix(m, m, seed).qr().q();
        ProjectionMatrix::new(q.columns(0, l).into_owned()).unwrap()
    }

    #[test]
    fn xi_reductions_and_dense_oracle() {
        let x = DataMatrix::new(random_matrix(50, 5, 3));
        let p = orthonormal_projection(5, 2, 4);
        let cov = {
            let xm = x.as_matrix();
            xm.transpose() * xm / 49.0
        };
        let pm = p.as_matrix();
        let xi1 = compute_xi(&p, &x, 1.0, None, None).unwrap();
        assert!((&xi1 - pm.transpose() * &cov * pm).amax() < 1e-12);

        let prev_p = orthonormal_projection(5, 2, 5);
        let prev_xi = dmatrix_spd(2, 6);
        let ppm = prev_p.as_matrix();
        let history = ppm * &prev_xi * ppm.transpose();
        let xi0 = compute_xi(&p, &x, 0.0, Some(&prev_p), Some(&prev_xi)).unwrap();
        assert!((&xi0 - pm.transpose() * &history * pm).amax() < 1e-12);

        let xi3 = compute_xi(&p, &x, 0.3, Some(&prev_p), Some(&prev_xi)).unwrap();
        let dense = pm.transpose() * (&cov * 0.3 + &history * 0.7) * pm;
        assert!((&xi3 - dense).amax() < 1e-12);
        assert_eq!(xi3, xi3.transpose());

        assert!(compute_xi(&p, &x, 0.5, None, None).is_err());
        assert!(compute_xi(&p, &x, 1.5, None, None).is_err());
    }

    fn dmatrix_spd(l: usize, seed: u64) -> DMatrix<f64> {
        let a = random_matrix(l + 3, l, seed);
        a.transpose() * a
    }

    #[test]
    fn t2_cases() {
        let p = ProjectionMatrix::new(DMatrix::identity(3, 3)).unwrap();
        let xi = DMatrix::identity(3, 3);
        let x = dvector![1.0, -2.0, 0.5];
        assert!((t2_statistic(&x, &p, &xi).unwrap() - x.norm_squared()).abs() < 1e-12);
        assert_eq!(t2_statistic(&DVector::zeros(3), &p, &xi).unwrap(), 0.0);

        let p = orthonormal_projection(6, 3, 7);
        let xi = dmatrix_spd(3, 8);
        let x = DVector::from_iterator(6, random_matrix(6, 1, 9).iter().copied());
        let scores = p.as_matrix().transpose() * &x;
        let oracle = scores.dot(&(xi.clone().try_inverse().unwrap() * &scores));
        let got = t2_statistic(&x, &p, &xi).unwrap();
        assert!((got - oracle).abs() < 1e-10 * oracle.abs().max(1.0));
    }

    #[test]
    fn singular_xi_is_ridged() {
        let xi = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let metric = T2Metric::new(&xi).unwrap();
        assert!(metric.ridge > 0.0);
        assert!(T2Metric::new(&DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn spe_cases() {
        let full = orthonormal_projection(4, 4, 10);
        let x = dvector![0.3, -1.0, 2.0, 0.1];
        assert!(spe_statistic(&x, &full).unwrap() < 1e-12);

        let p = ProjectionMatrix::new(DMatrix::from_column_slice(4, 1, &[1.0, 0.0, 0.0, 0.0])).unwrap();
        let orth = dvector![0.0, 1.0, -2.0, 3.0];
        assert!((spe_statistic(&orth, &p).unwrap() - 14.0).abs() < 1e-12);

        let p = orthonormal_projection(6, 2, 11);
        let x = DVector::from_iterator(6, random_matrix(6, 1, 12).iter().copied());
        let pm = p.as_matrix();
        let residual = &x - pm * (pm.transpose() * &x);
        assert!((spe_statistic(&x, &p).unwrap() - residual.norm_squared()).abs() < 1e-12);
    }

    #[test]
    fn kde_normal_quantile() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let draws: Vec<f64> = (0..10_000).map(|_| rng.sample(StandardNormal)).collect();
        let c = kde_threshold(&draws, 0.99).unwrap();
        assert!((c - 2.326).abs() < 0.15, "{c}");
    }

    #[test]
    fn kde_point_mass_and_median() {
        let same = vec![3.5; 50];
        let c = kde_threshold(&same, 0.99).unwrap();
        assert!((c - 3.5).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let mut draws: Vec<f64> = (0..2001).map(|_| rng.random_range(-1.0..1.0)).collect();
        let h = silverman_bandwidth(&draws);
        let c = kde_threshold(&draws, 0.5).unwrap();
        draws.sort_by(f64::total_cmp);
        assert!((c - draws[1000]).abs() < h);
    }

    #[test]
    fn kde_needs_samples() {
        assert!(matches!(
            kde_threshold(&[1.0; 29], 0.99),
            Err(Error::InsufficientData { .. })
        ));
    }

    #[test]
    fn detection_scores() {
        let r = MonitoringResult::from_statistics(vec![5.0; 4], vec![0.0; 4], 1.0, 1.0);
        let s = score_detection(&r, 2).unwrap();
        assert_eq!((s.fdr, s.far), (1.0, 1.0));
        let r = MonitoringResult::from_statistics(vec![0.0; 4], vec![0.0; 4], 1.0, 1.0);
        let s = score_detection(&r, 2).unwrap();
        assert_eq!((s.fdr, s.far), (0.0, 0.0));
        // Alternate alarms on the faulty half only.
        let r = MonitoringResult::from_statistics(
            vec![0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 2.0, 0.0],
            vec![0.0; 8],
            1.0,
            1.0,
        );
        let s = score_detection(&r, 4).unwrap();
        assert_eq!((s.fdr, s.far), (0.5, 0.0));
        assert!(score_detection(&r, 9).is_err());
    }

    #[test]
    fn alarm_rule_is_or() {
        let r = MonitoringResult::from_statistics(
            vec![0.5, 2.0, 0.5, 2.0],
            vec![0.5, 0.5, 2.0, 2.0],
            1.0,
            1.0,
        );
        assert_eq!(r.alarms, vec![false, true, true, true]);
    }
}
