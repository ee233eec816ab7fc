//! End-to-end run of the numerical case: five situations times three faults.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::continual::{train_first_mode_with, update_model_with, ComponentRule, ModeData, ModeModel};
use crate::datagen::{build_numerical_scenario, Method, ScenarioBundle, ScenarioPlan, FAULT_ONSET};
use crate::error::{Error, Result};
use crate::monitor::{run_monitoring_with_scaler, score_detection, MonitoringResult, Scaler};

pub const FAULTS: [u8; 3] = [1, 2, 3];

/// Acceptance band for one report cell, in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub fdr_min: Option<f64>,
    pub far_max: Option<f64>,
    pub far_min: Option<f64>,
}

impl Band {
    pub fn for_cell(situation: usize, fault: u8) -> Band {
        match situation {
            1 | 2 | 4 => Band {
                fdr_min: Some(if fault == 3 { 85.0 } else { 95.0 }),
                far_max: Some(15.0),
                far_min: None,
            },
            3 => Band {
                fdr_min: Some(90.0),
                far_max: Some(15.0),
                far_min: None,
            },
            _ => Band {
                fdr_min: None,
                far_max: None,
                far_min: Some(50.0),
            },
        }
    }

    pub fn contains(&self, fdr: f64, far: f64) -> bool {
        self.fdr_min.is_none_or(|b| fdr >= b)
            && self.far_max.is_none_or(|b| far <= b)
            && self.far_min.is_none_or(|b| far >= b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub seed: u64,
    pub situation: usize,
    pub fault: u8,
    pub method: Method,
    pub model: char,
    pub test_mode: usize,
    pub fdr_percent: f64,
    pub far_percent: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub seeds: Vec<u64>,
    pub config: PipelineConfig,
    pub rows: Vec<ReportRow>,
}

impl RunReport {
    pub fn all_pass(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn row(&self, seed: u64, situation: usize, fault: u8) -> Option<&ReportRow> {
        self.rows
            .iter()
            .find(|r| r.seed == seed && r.situation == situation && r.fault == fault)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,situation,fault,method,model,test_mode,fdr_percent,far_percent,pass\n");
        for r in &self.rows {
            let method = match r.method {
                Method::Spca => "SPCA",
                Method::SpcaSi => "SPCA-SI",
            };
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{:.1},{:.1},{}",
                r.seed, r.situation, r.fault, method, r.model, r.test_mode, r.fdr_percent, r.far_percent, r.pass
            );
        }
        out
    }
}

/// Models of one seed: A from mode 1, B = A updated on mode 2, C from mode 2.
#[derive(Debug, Clone)]
pub struct TrainedModels {
    pub a: ModeModel,
    pub b: ModeModel,
    pub c: ModeModel,
}

impl TrainedModels {
    pub fn model(&self, name: char) -> &ModeModel {
        match name {
            'A' => &self.a,
            'B' => &self.b,
            _ => &self.c,
        }
    }

    /// Scaler for samples of process mode `test_mode` under model `name`.
    /// A chain standardises with the statistics of the mode the samples come
    /// from when it has seen that mode, and with its own otherwise.
    pub fn scaler(&self, name: char, test_mode: usize) -> &Scaler {
        match (name, test_mode) {
            ('B', 1) => &self.a.scaler,
            _ => &self.model(name).scaler,
        }
    }
}

/// Training sets do not depend on the fault, so one bundle serves all three.
pub fn train_models(bundle: &ScenarioBundle, config: &PipelineConfig) -> Result<TrainedModels> {
    let rule = ComponentRule::Cpv(config.cpv_threshold);
    let a = train_first_mode_with(
        &ModeData::new(bundle.train(1).clone(), 1),
        &config.solver,
        rule,
        config.confidence,
    )
    .map_err(|e| stage("train A", e))?;
    let b = update_model_with(
        &a,
        &ModeData::new(bundle.train(2).clone(), 2),
        &config.solver,
        config.gamma,
        config.eta,
        config.confidence,
    )
    .map_err(|e| stage("update B", e))?;
    let c = train_first_mode_with(
        &ModeData::new(bundle.train(2).clone(), 1),
        &config.solver,
        rule,
        config.confidence,
    )
    .map_err(|e| stage("train C", e))?;
    Ok(TrainedModels { a, b, c })
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub row: ReportRow,
    pub monitoring: MonitoringResult,
}

pub fn run_seed(seed: u64, config: &PipelineConfig) -> Result<Vec<CellResult>> {
    config.validate()?;
    let plan = ScenarioPlan::numerical();
    let bundles = FAULTS
        .iter()
        .map(|&f| build_numerical_scenario(f, seed).map_err(|e| stage("simulate", e)))
        .collect::<Result<Vec<_>>>()?;
    let models = train_models(&bundles[0], config)?;

    let per_fault: Vec<Result<Vec<CellResult>>> = std::thread::scope(|s| {
        let handles: Vec<_> = bundles
            .iter()
            .map(|bundle| {
                let (plan, models) = (&plan, &models);
                s.spawn(move || {
                    plan.rows
                        .iter()
                        .map(|r| {
                            let test = bundle.test(r.test_mode);
                            let monitoring = run_monitoring_with_scaler(
                                test,
                                models.model(r.model),
                                models.scaler(r.model, r.test_mode),
                            )
                            .map_err(|e| stage("monitor", e))?;
                            let score = score_detection(&monitoring, FAULT_ONSET)?;
                            let (fdr, far) = (100.0 * score.fdr, 100.0 * score.far);
                            Ok(CellResult {
                                row: ReportRow {
                                    seed,
                                    situation: r.situation,
                                    fault: bundle.fault_id,
                                    method: r.method,
                                    model: r.model,
                                    test_mode: r.test_mode,
                                    fdr_percent: fdr,
                                    far_percent: far,
                                    pass: Band::for_cell(r.situation, bundle.fault_id).contains(fdr, far),
                                },
                                monitoring,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("monitoring thread panicked")).collect()
    });

    let mut cells = per_fault.into_iter().collect::<Result<Vec<_>>>()?.concat();
    cells.sort_by_key(|c| (c.row.situation, c.row.fault));
    Ok(cells)
}

pub fn reproduce(seeds: &[u64], config: &PipelineConfig) -> Result<(RunReport, Vec<CellResult>)> {
    let mut cells = Vec::new();
    for &seed in seeds {
        cells.extend(run_seed(seed, config)?);
    }
    let report = RunReport {
        seeds: seeds.to_vec(),
        config: config.clone(),
        rows: cells.iter().map(|c| c.row.clone()).collect(),
    };
    Ok((report, cells))
}

/// Writes `report.csv`, `config.toml` and one statistics trace per cell.
pub fn write_outputs(dir: &Path, report: &RunReport, cells: &[CellResult]) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let put = |name: &str, text: &str| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| Error::io(path, e))
    };
    put("report.csv", &report.to_csv())?;
    let seeds = report.seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(", ");
    put("config.toml", &format!("# seeds = [{seeds}]\n{}", report.config.to_toml()))?;
    for cell in cells {
        let r = &cell.row;
        put(
            &format!("trace_seed{}_s{}_f{}.csv", r.seed, r.situation, r.fault),
            &monitoring_csv(&cell.monitoring),
        )?;
    }
    Ok(())
}

/// Per-sample CSV: `index,t2,spe,t2_threshold,spe_threshold,alarm`, 1-based index.
pub fn monitoring_csv(result: &MonitoringResult) -> String {
    let mut out = String::from("index,t2,spe,t2_threshold,spe_threshold,alarm\n");
    for i in 0..result.len() {
        let _ = writeln!(
            out,
            "{},{:e},{:e},{:e},{:e},{}",
            i + 1,
            result.t2[i],
            result.spe[i],
            result.t2_threshold,
            result.spe_threshold,
            u8::from(result.alarms[i])
        );
    }
    out
}

pub(crate) fn stage(name: &str, err: Error) -> Error {
    match err {
        Error::InvalidArgument(m) => Error::InvalidArgument(format!("{name}: {m}")),
        Error::DimensionMismatch(m) => Error::DimensionMismatch(format!("{name}: {m}")),
        Error::Singular(m) => Error::Singular(format!("{name}: {m}")),
        other => other,
    }
}
