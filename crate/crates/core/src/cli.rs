use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use crate::config::PipelineConfig;
use crate::continual::{train_first_mode_with, update_model_with, ComponentRule, ModeData};
use crate::data::DataMatrix;
use crate::datagen::{build_numerical_scenario, stream_id, Purpose, NOISE_STD};
use crate::error::{Error, Result};
use crate::monitor::{run_monitoring_with_scaler, score_detection};
use crate::scenario::{monitoring_csv, reproduce, write_outputs};
use crate::store::{load_chain, save_chain, ModelArchive, Provenance};

pub const EXIT_USAGE: u8 = 2;
pub const EXIT_VALIDATION: u8 = 3;
pub const EXIT_DATA: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;
pub const EXIT_IO: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "spca-si", version, about = "Continual sparse-PCA process monitoring")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate training and faulty test sets for the two-mode numerical case.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
        fault: u8,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the first mode of a new model chain.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        overwrite: bool,
    },
    /// Append a model for the next mode to an existing chain.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        overwrite: bool,
    },
    /// Compute per-sample T2 and SPE for a test set.
    Monitor {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Mode the test samples come from (selects the standardisation).
        #[arg(long)]
        mode: usize,
        #[arg(long)]
        out: PathBuf,
        /// Number of leading normal samples; prints FDR and FAR when given.
        #[arg(long)]
        fault_start: Option<usize>,
    },
    /// Run all five situations for the three faults and write a report.
    Reproduce {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        replicates: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct Overrides {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    cpv: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long)]
    confidence: Option<f64>,
}

pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::InvalidArgument(_)
        | Error::DimensionMismatch(_)
        | Error::MalformedArchive(_)
        | Error::VersionMismatch { .. }
        | Error::InvariantViolation(_) => EXIT_VALIDATION,
        Error::Parse { .. }
        | Error::InsufficientData { .. }
        | Error::DegenerateData { .. }
        | Error::NonFinite => EXIT_DATA,
        Error::Divergence { .. } | Error::Singular(_) => EXIT_NUMERICAL,
        Error::AlreadyExists(_) | Error::Io { .. } => EXIT_IO,
    }
}

pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate { fault, seed, out } => simulate(fault, seed, &out),
        Command::Train {
            data,
            config,
            out,
            overrides,
            overwrite,
        } => train(&data, config.as_deref(), &overrides, &out, overwrite),
        Command::Update {
            model,
            data,
            gamma,
            eta,
            out,
            overwrite,
        } => update(&model, &data, gamma, eta, &out, overwrite),
        Command::Monitor {
            model,
            data,
            mode,
            out,
            fault_start,
        } => monitor(&model, &data, mode, &out, fault_start),
        Command::Reproduce {
            seed,
            replicates,
            out,
            config,
        } => {
            let config = load_config(config.as_deref())?;
            let seeds: Vec<u64> = (0..replicates.max(1)).map(|i| seed + i).collect();
            let (report, cells) = reproduce(&seeds, &config)?;
            write_outputs(&out, &report, &cells)?;
            print!("{}", report.to_csv());
            let failed = report.rows.iter().filter(|r| !r.pass).count();
            println!("{} of {} cells inside their bands", report.rows.len() - failed, report.rows.len());
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        Some(p) => PipelineConfig::load(p),
        None => Ok(PipelineConfig::default()),
    }
}

fn simulate(fault: u8, seed: u64, out: &Path) -> Result<()> {
    let bundle = build_numerical_scenario(fault, seed)?;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let files = [
        ("mode1_train.csv", &bundle.mode1_train, 1, Purpose::Train),
        ("mode2_train.csv", &bundle.mode2_train, 2, Purpose::Train),
        ("mode1_test.csv", &bundle.mode1_test, 1, Purpose::Test),
        ("mode2_test.csv", &bundle.mode2_test, 2, Purpose::Test),
    ];
    let mut entries = Vec::new();
    for (name, data, mode, purpose) in files {
        data.save_csv(&out.join(name))?;
        entries.push(json!({
            "file": name,
            "mode": mode,
            "purpose": purpose,
            "stream": stream_id(mode, purpose),
            "samples": data.n_samples(),
            "variables": data.n_vars(),
        }));
    }
    let manifest = json!({
        "seed": seed,
        "fault_id": fault,
        "fault": bundle.fault,
        "noise_std": NOISE_STD,
        "files": entries,
    });
    let path = out.join("manifest.json");
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n";
    fs::write(&path, text).map_err(|e| Error::io(path, e))
}

fn train(data: &Path, config: Option<&Path>, ov: &Overrides, out: &Path, overwrite: bool) -> Result<()> {
    let mut config = load_config(config)?;
    if let Some(v) = ov.lambda {
        config.solver.lambda = v;
    }
    if let Some(v) = ov.cpv {
        config.cpv_threshold = v;
    }
    if let Some(v) = ov.confidence {
        config.confidence = v;
    }
    config.validate()?;
    let rule = match ov.components {
        Some(l) => ComponentRule::Fixed(l),
        None => ComponentRule::Cpv(config.cpv_threshold),
    };
    let samples = DataMatrix::load_csv(data)?;
    let model = train_first_mode_with(&ModeData::new(samples, 1), &config.solver, rule, config.confidence)?;
    eprintln!(
        "mode 1: {} components, T2 limit {:.4}, SPE limit {:.4}",
        model.n_components, model.t2_threshold, model.spe_threshold
    );
    let mut provenance = Provenance::now(vec![config.solver.seed]);
    provenance.data_sources.push(data.display().to_string());
    save_chain(&ModelArchive::new(model, config, provenance), out, overwrite)
}

fn update(
    model: &Path,
    data: &Path,
    gamma: Option<f64>,
    eta: Option<f64>,
    out: &Path,
    overwrite: bool,
) -> Result<()> {
    let mut archive = load_chain(model)?;
    let gamma = gamma.unwrap_or(archive.config.gamma);
    let eta = eta.unwrap_or(archive.config.eta);
    if gamma == 0.0 && eta == 1.0 {
        eprintln!("warning: gamma = 0 and eta = 1 discard everything learned on earlier modes");
    }
    let samples = DataMatrix::load_csv(data)?;
    let next = archive.latest().mode_index + 1;
    let updated = update_model_with(
        archive.latest(),
        &ModeData::new(samples, next),
        &archive.config.solver,
        gamma,
        eta,
        archive.config.confidence,
    )?;
    eprintln!(
        "mode {next}: T2 limit {:.4}, SPE limit {:.4}",
        updated.t2_threshold, updated.spe_threshold
    );
    archive.push(updated)?;
    archive.provenance.data_sources.push(data.display().to_string());
    let overwrite = overwrite || same_file(model, out);
    save_chain(&archive, out, overwrite)
}

fn same_file(a: &Path, b: &Path) -> bool {
    matches!((a.canonicalize(), b.canonicalize()), (Ok(x), Ok(y)) if x == y)
}

fn monitor(model: &Path, data: &Path, mode: usize, out: &Path, fault_start: Option<usize>) -> Result<()> {
    let archive = load_chain(model)?;
    let scaler = &archive
        .model_for_mode(mode)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "mode {mode} is not part of the chain (modes 1..={})",
                archive.models.len()
            ))
        })?
        .scaler;
    let samples = DataMatrix::load_csv(data)?;
    let result = run_monitoring_with_scaler(&samples, archive.latest(), scaler)?;
    fs::write(out, monitoring_csv(&result)).map_err(|e| Error::io(out, e))?;
    if let Some(start) = fault_start {
        let score = score_detection(&result, start)?;
        println!("FDR {:.1}% FAR {:.1}%", 100.0 * score.fdr, 100.0 * score.far);
    } else {
        println!("alarm rate {:.1}%", 100.0 * result.alarm_rate());
    }
    Ok(())
}
