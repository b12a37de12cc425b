use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use cvqkd_eq::classifier::write_label_csv;
use cvqkd_eq::experiment::simulate::{dataset_rows, save_dataset_file};
use cvqkd_eq::experiment::{
    calibrate, classify_report, reproduce_table1, run_experiment, simulate_link, sweep_keyrate, CalibrationTargets,
    Check, ClassifyConfig, ExperimentConfig, RunRecord, Scenario, SweepConfig,
};
use cvqkd_eq::{Error, Result};

#[derive(Parser)]
#[command(name = "cvqkd-eq", version, about = "Seeded CV-QKD equalization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config for the subcommand; a built-in preset is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline on one scenario and write its run record.
    Simulate {
        /// Preset used when no --config is given.
        #[arg(long, value_enum, default_value_t = Preset::Fiber10km)]
        preset: Preset,
        /// Also write the per-pulse dataset as CSV.
        #[arg(long)]
        dataset: bool,
    },
    /// Raw, equalized and theory columns of the 10 km fiber comparison.
    ReproduceTable1,
    /// Key rate against distance for every preset.
    SweepKeyrate,
    /// Quality classifier and per-class equalizers on the turbulence mix.
    ClassifyReport,
    /// Derive the fiber preset's fading constants from the raw targets.
    Calibrate,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Fiber10km,
    FreeSpaceWeak,
    FreeSpaceMedium,
    FreeSpaceStrong,
}

impl From<Preset> for Scenario {
    fn from(p: Preset) -> Self {
        match p {
            Preset::Fiber10km => Scenario::Fiber10km,
            Preset::FreeSpaceWeak => Scenario::FreeSpaceWeak,
            Preset::FreeSpaceMedium => Scenario::FreeSpaceMedium,
            Preset::FreeSpaceStrong => Scenario::FreeSpaceStrong,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

fn read_json<C: serde::de::DeserializeOwned>(path: &Path) -> Result<C> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn write_csv<S: Serialize>(path: &Path, rows: &[S]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `name.json`, or `name.csv` from `rows` in CSV mode.
fn emit<S: Serialize, R: Serialize>(out: &Path, format: Format, name: &str, value: &S, rows: &[R]) -> Result<()> {
    match format {
        Format::Json => write_json(&out.join(format!("{name}.json")), value),
        Format::Csv => write_csv(&out.join(format!("{name}.csv")), rows),
    }
}

fn print_checks(checks: &[Check]) {
    for c in checks {
        let status = if c.pass { "PASS" } else { "FAIL" };
        println!("{status} {}: {} (required {})", c.name, c.value, c.requirement);
    }
}

#[derive(Serialize)]
struct Field {
    key: &'static str,
    value: f64,
}

fn run_fields(r: &RunRecord<f64>) -> Vec<Field> {
    let f = |key, value| Field { key, value };
    vec![
        f("raw_T", r.raw.transmittance_hat),
        f("raw_eps", r.raw.eps_hat),
        f("equalized_T", r.equalized.transmittance_hat),
        f("equalized_eps", r.equalized.eps_hat),
        f("theory_T", r.theory.transmittance),
        f("theory_eps", r.theory.excess_noise),
        f("suppression_ratio", r.suppression_ratio),
        f("k_raw", r.key_rates.raw.k_rate),
        f("k_equalized", r.key_rates.equalized.k_rate),
        f("k_theory", r.key_rates.theory.k_rate),
    ]
}

fn experiment_config(cli: &Cli, scenario: Scenario) -> Result<ExperimentConfig<f64>> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_json(&fs::read_to_string(p)?)?,
        None => ExperimentConfig::preset(scenario)?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

/// Returns whether every acceptance check passed.
fn execute(cli: &Cli) -> Result<bool> {
    fs::create_dir_all(&cli.out)?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Simulate { preset, dataset } => {
            let cfg = experiment_config(cli, preset.into())?;
            let record = run_experiment(&cfg)?;
            emit(out, cli.format, "run_record", &record, &run_fields(&record))?;
            if dataset {
                let link = simulate_link(&cfg, "")?;
                save_dataset_file(&dataset_rows(&link), &out.join("dataset.csv"))?;
            }
            Ok(true)
        }
        Command::ReproduceTable1 => {
            let cfg = experiment_config(cli, Scenario::Fiber10km)?;
            let report = reproduce_table1(&cfg)?;
            emit(out, cli.format, "table1", &report, &report.rows)?;
            if matches!(cli.format, Format::Csv) {
                write_csv(&out.join("table1_checks.csv"), &report.checks)?;
            }
            print_checks(&report.checks);
            Ok(report.pass)
        }
        Command::SweepKeyrate => {
            let mut cfg: SweepConfig<f64> = match &cli.config {
                Some(p) => read_json(p)?,
                None => SweepConfig::from_presets()?,
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let result = sweep_keyrate(&cfg)?;
            emit(out, cli.format, "keyrate", &result, &result.rows)?;
            if matches!(cli.format, Format::Csv) {
                write_csv(&out.join("keyrate_checks.csv"), &result.checks)?;
            }
            print_checks(&result.checks);
            Ok(result.pass)
        }
        Command::ClassifyReport => {
            let mut cfg: ClassifyConfig<f64> = match &cli.config {
                Some(p) => read_json(p)?,
                None => ClassifyConfig::from_presets()?,
            };
            if let Some(s) = cli.seed {
                cfg.seed = s;
            }
            let output = classify_report(&cfg)?;
            let record = &output.record;
            emit(out, cli.format, "classify_report", record, &record.checks)?;
            write_json(&out.join("zones.json"), &record.zones)?;
            write_json(&out.join("knn_model.json"), &output.knn)?;
            let labels = BufWriter::new(File::create(out.join("labels.csv"))?);
            write_label_csv(&record.zones, &output.reference_pairs, labels)?;
            print_checks(&record.checks);
            Ok(record.pass)
        }
        Command::Calibrate => {
            let mut targets: CalibrationTargets<f64> = match &cli.config {
                Some(p) => read_json(p)?,
                None => CalibrationTargets::default(),
            };
            if let Some(s) = cli.seed {
                targets.seed = s;
            }
            let result = calibrate(&targets, &ExperimentConfig::preset(Scenario::Fiber10km)?)?;
            emit(out, cli.format, "calibration", &result, &result.checks)?;
            write_json(&out.join("fiber10km.json"), &result.preset)?;
            print_checks(&result.checks);
            Ok(result.pass)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
