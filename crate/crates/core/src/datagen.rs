//! Synthetic multimode process: eight measured variables driven by three
//! latent sources through a fixed mixing matrix, plus fault injection.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), seeded with
//! `seed_from_u64(seed)`. Independent draws for different modes and purposes
//! use separate ChaCha streams (see [`stream_id`]), so a scenario is fully
//! replayable from its single seed. Each sample draws its three sources in
//! order and then the eight noise terms.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::data::DataMatrix;
use crate::error::{Error, Result};

pub const N_VARS: usize = 8;
pub const N_SOURCES: usize = 3;

/// Mixing matrix, one row per measured variable.
pub const MIXING: [[f64; N_SOURCES]; N_VARS] = [
    [0.55, 0.82, 0.94],
    [0.23, 0.45, 0.62],
    [-0.61, 0.62, 0.41],
    [0.49, 0.79, 0.89],
    [0.89, -0.92, 0.06],
    [0.76, 0.74, 0.35],
    [0.46, 0.28, 0.81],
    [-0.02, 0.41, 0.01],
];

/// Standard deviation of the additive measurement noise.
pub const NOISE_STD: f64 = 0.001;

pub const TRAIN_SAMPLES: usize = 1000;
pub const TEST_SAMPLES: usize = 1000;
/// Last normal sample of every test set (1-based).
pub const FAULT_ONSET: usize = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SourceDist {
    Uniform { lo: f64, hi: f64 },
    Normal { mean: f64, variance: f64 },
}

impl SourceDist {
    fn validate(&self) -> Result<()> {
        match *self {
            SourceDist::Uniform { lo, hi } if !(lo < hi) => Err(Error::InvalidArgument(format!(
                "uniform source needs lo < hi, got [{lo}, {hi}]"
            ))),
            SourceDist::Normal { variance, .. } if !(variance > 0.0) => Err(
                Error::InvalidArgument(format!("normal source needs variance > 0, got {variance}")),
            ),
            _ => Ok(()),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            SourceDist::Uniform { lo, hi } => 0.5 * (lo + hi),
            SourceDist::Normal { mean, .. } => mean,
        }
    }

    pub fn variance(&self) -> f64 {
        match *self {
            SourceDist::Uniform { lo, hi } => (hi - lo) * (hi - lo) / 12.0,
            SourceDist::Normal { variance, .. } => variance,
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match *self {
            SourceDist::Uniform { lo, hi } => Uniform::new(lo, hi)
                .expect("validated bounds")
                .sample(rng),
            SourceDist::Normal { mean, variance } => Normal::new(mean, variance.sqrt())
                .expect("validated variance")
                .sample(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeSpec {
    pub label: String,
    pub sources: [SourceDist; N_SOURCES],
    pub noise_std: f64,
}

impl ModeSpec {
    pub fn validate(&self) -> Result<()> {
        for s in &self.sources {
            s.validate()?;
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "noise standard deviation must be >= 0, got {}",
                self.noise_std
            )));
        }
        Ok(())
    }

    /// Operating modes 1 and 2 of the numerical case.
    pub fn numerical_mode(mode: usize) -> Result<ModeSpec> {
        let sources = match mode {
            1 => [
                SourceDist::Uniform { lo: -10.0, hi: -9.7 },
                SourceDist::Normal { mean: -5.0, variance: 1.0 },
                SourceDist::Uniform { lo: 2.0, hi: 3.0 },
            ],
            2 => [
                SourceDist::Uniform { lo: -6.0, hi: -5.7 },
                SourceDist::Normal { mean: -1.0, variance: 1.0 },
                SourceDist::Uniform { lo: 3.0, hi: 4.2 },
            ],
            other => {
                return Err(Error::InvalidArgument(format!(
                    "the numerical case defines modes 1 and 2, not {other}"
                )))
            }
        };
        Ok(ModeSpec {
            label: format!("mode{mode}"),
            sources,
            noise_std: NOISE_STD,
        })
    }
}

/// What a generated block of samples is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Purpose {
    Train = 0,
    Test = 1,
}

/// ChaCha stream for a (mode, purpose) pair: `mode << 8 | purpose`.
pub fn stream_id(mode: usize, purpose: Purpose) -> u64 {
    ((mode as u64) << 8) | purpose as u64
}

pub fn generate_mode(spec: &ModeSpec, n: usize, seed: u64) -> Result<DataMatrix> {
    generate_mode_on_stream(spec, n, seed, 0)
}

/// `x = A s + e` for `n` samples drawn from ChaCha20 stream `stream` of `seed`.
pub fn generate_mode_on_stream(spec: &ModeSpec, n: usize, seed: u64, stream: u64) -> Result<DataMatrix> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be >= 1".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut out = DMatrix::zeros(n, N_VARS);
    for i in 0..n {
        let s: [f64; N_SOURCES] = std::array::from_fn(|k| spec.sources[k].sample(&mut rng));
        for (j, row) in MIXING.iter().enumerate() {
            let clean: f64 = row.iter().zip(&s).map(|(a, sk)| a * sk).sum();
            out[(i, j)] = clean + noise.sample(&mut rng);
        }
    }
    Ok(DataMatrix::new(out))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FaultKind {
    /// Constant offset.
    Step { magnitude: f64 },
    /// Offset growing by `slope` per sample after onset.
    Drift { slope: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub kind: FaultKind,
    /// 1-based variable number.
    pub variable: usize,
    /// Samples `k > onset` (1-based) are faulty.
    pub onset: usize,
}

impl FaultSpec {
    /// Faults 1-3 of the numerical case, with onset after sample 500.
    pub fn numerical_fault(fault: u8) -> Result<FaultSpec> {
        let (kind, variable) = match fault {
            1 => (FaultKind::Step { magnitude: 0.08 }, 3),
            2 => (FaultKind::Step { magnitude: 0.08 }, 6),
            3 => (FaultKind::Drift { slope: 0.001 }, 1),
            other => {
                return Err(Error::InvalidArgument(format!(
                    "fault must be 1, 2 or 3, got {other}"
                )))
            }
        };
        Ok(FaultSpec {
            kind,
            variable,
            onset: FAULT_ONSET,
        })
    }
}

pub fn inject_fault(x: &DataMatrix, spec: &FaultSpec) -> Result<DataMatrix> {
    if spec.variable == 0 || spec.variable > x.n_vars() {
        return Err(Error::InvalidArgument(format!(
            "fault variable x{} outside 1..={}",
            spec.variable,
            x.n_vars()
        )));
    }
    if spec.onset > x.n_samples() {
        return Err(Error::InvalidArgument(format!(
            "fault onset {} beyond {} samples",
            spec.onset,
            x.n_samples()
        )));
    }
    let mut out = x.clone();
    let col = spec.variable - 1;
    let m = out.as_matrix_mut();
    for row in spec.onset..m.nrows() {
        let k = row + 1;
        m[(row, col)] += match spec.kind {
            FaultKind::Step { magnitude } => magnitude,
            FaultKind::Drift { slope } => slope * (k - spec.onset) as f64,
        };
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Sparse PCA trained from scratch.
    Spca,
    /// Sparse PCA updated with importance-weighted consolidation.
    SpcaSi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TrainingSource {
    Mode(usize),
    /// Previous model plus the data of a new mode.
    ModelAndMode(char, usize),
    /// Reuse an already trained model.
    Reuse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanRow {
    pub situation: usize,
    pub method: Method,
    pub training: TrainingSource,
    pub model: char,
    pub test_mode: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioPlan {
    pub rows: Vec<PlanRow>,
}

impl ScenarioPlan {
    /// Situations 1-5: A from mode 1, B = A updated on mode 2, C from mode 2 alone.
    pub fn numerical() -> ScenarioPlan {
        use Method::*;
        use TrainingSource::*;
        let row = |situation, method, training, model, test_mode| PlanRow {
            situation,
            method,
            training,
            model,
            test_mode,
        };
        ScenarioPlan {
            rows: vec![
                row(1, Spca, Mode(1), 'A', 1),
                row(2, SpcaSi, ModelAndMode('A', 2), 'B', 2),
                row(3, SpcaSi, Reuse, 'B', 1),
                row(4, Spca, Mode(2), 'C', 2),
                row(5, Spca, Reuse, 'C', 1),
            ],
        }
    }
}

/// Training and test sets for one fault of the numerical case.
#[derive(Debug, Clone)]
pub struct ScenarioBundle {
    pub fault_id: u8,
    pub fault: FaultSpec,
    pub seed: u64,
    pub mode1_train: DataMatrix,
    pub mode2_train: DataMatrix,
    pub mode1_test: DataMatrix,
    pub mode2_test: DataMatrix,
    pub plan: ScenarioPlan,
}

impl ScenarioBundle {
    pub fn train(&self, mode: usize) -> &DataMatrix {
        if mode == 1 {
            &self.mode1_train
        } else {
            &self.mode2_train
        }
    }

    pub fn test(&self, mode: usize) -> &DataMatrix {
        if mode == 1 {
            &self.mode1_test
        } else {
            &self.mode2_test
        }
    }
}

pub fn build_numerical_scenario(fault_id: u8, seed: u64) -> Result<ScenarioBundle> {
    let fault = FaultSpec::numerical_fault(fault_id)?;
    let draw = |mode: usize, purpose: Purpose, n: usize| {
        generate_mode_on_stream(&ModeSpec::numerical_mode(mode)?, n, seed, stream_id(mode, purpose))
    };
    Ok(ScenarioBundle {
        fault_id,
        fault,
        seed,
        mode1_train: draw(1, Purpose::Train, TRAIN_SAMPLES)?,
        mode2_train: draw(2, Purpose::Train, TRAIN_SAMPLES)?,
        mode1_test: inject_fault(&draw(1, Purpose::Test, TEST_SAMPLES)?, &fault)?,
        mode2_test: inject_fault(&draw(2, Purpose::Test, TEST_SAMPLES)?, &fault)?,
        plan: ScenarioPlan::numerical(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn noiseless_unit_sources_give_row_sums() {
        let spec = ModeSpec {
            label: "fixed".into(),
            sources: [SourceDist::Uniform { lo: 1.0, hi: 1.0 + 1e-12 }; 3],
            noise_std: 0.0,
        };
        let x = generate_mode(&spec, 3, 0).unwrap();
        let expected = [2.31, 1.30, 0.42, 2.17, 0.03, 1.85, 1.55, 0.40];
        for row in x.as_matrix().row_iter() {
            for (got, want) in row.iter().zip(expected) {
                assert!((got - want).abs() < 1e-10, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn mode1_mean_of_x5() {
        let spec = ModeSpec::numerical_mode(1).unwrap();
        let x = generate_mode(&spec, 100_000, 42).unwrap();
        let mean = x.as_matrix().column(4).mean();
        let analytic = 0.89 * -9.85 - 0.92 * -5.0 + 0.06 * 2.5;
        assert!((analytic - -4.0165_f64).abs() < 1e-12);
        assert!((mean - analytic).abs() < 0.1, "{mean}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = ModeSpec::numerical_mode(2).unwrap();
        assert_eq!(
            generate_mode(&spec, 50, 7).unwrap(),
            generate_mode(&spec, 50, 7).unwrap()
        );
        assert_ne!(
            generate_mode_on_stream(&spec, 50, 7, 1).unwrap(),
            generate_mode_on_stream(&spec, 50, 7, 2).unwrap()
        );
    }

    #[test]
    fn invalid_specs() {
        assert!(ModeSpec::numerical_mode(3).is_err());
        let mut spec = ModeSpec::numerical_mode(1).unwrap();
        spec.sources[0] = SourceDist::Uniform { lo: 1.0, hi: 1.0 };
        assert!(generate_mode(&spec, 5, 0).is_err());
        spec.sources[0] = SourceDist::Normal { mean: 0.0, variance: 0.0 };
        assert!(generate_mode(&spec, 5, 0).is_err());
    }

    #[test]
    fn fault_offsets() {
        let spec = ModeSpec::numerical_mode(1).unwrap();
        let x = generate_mode(&spec, 1000, 3).unwrap();

        let f1 = inject_fault(&x, &FaultSpec::numerical_fault(1).unwrap()).unwrap();
        let d = f1.as_matrix() - x.as_matrix();
        assert_eq!(d[(499, 2)], 0.0);
        assert!((d[(749, 2)] - 0.08).abs() < 1e-12);
        assert!((d[(500, 2)] - 0.08).abs() < 1e-12);

        let f3 = inject_fault(&x, &FaultSpec::numerical_fault(3).unwrap()).unwrap();
        let d = f3.as_matrix() - x.as_matrix();
        assert!((d[(999, 0)] - 0.5).abs() < 1e-12);
        assert!((d[(500, 0)] - 0.001).abs() < 1e-12);
        assert_eq!(d[(499, 0)], 0.0);

        for (f, col) in [(&f1, 2), (&f3, 0)] {
            for j in (0..N_VARS).filter(|j| *j != col) {
                assert_eq!(f.as_matrix().column(j), x.as_matrix().column(j));
            }
        }

        let none = FaultSpec {
            onset: 1000,
            ..FaultSpec::numerical_fault(2).unwrap()
        };
        assert_eq!(inject_fault(&x, &none).unwrap(), x);
        let bad = FaultSpec {
            variable: 9,
            ..FaultSpec::numerical_fault(2).unwrap()
        };
        assert!(inject_fault(&x, &bad).is_err());
        assert!(FaultSpec::numerical_fault(4).is_err());
    }

    #[test]
    fn scenario_bundle_layout() {
        let b = build_numerical_scenario(1, 11).unwrap();
        for x in [&b.mode1_train, &b.mode2_train, &b.mode1_test, &b.mode2_test] {
            assert_eq!((x.n_samples(), x.n_vars()), (1000, 8));
        }
        let clean = generate_mode_on_stream(
            &ModeSpec::numerical_mode(1).unwrap(),
            1000,
            11,
            stream_id(1, Purpose::Test),
        )
        .unwrap();
        assert_eq!(b.mode1_test.rows_range(0, 500), clean.rows_range(0, 500));
        let s5 = b.plan.rows[4];
        assert_eq!((s5.situation, s5.method, s5.model, s5.test_mode), (5, Method::Spca, 'C', 1));
        assert_eq!(b.plan.rows.len(), 5);
    }
}
