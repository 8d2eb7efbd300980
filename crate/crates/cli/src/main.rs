use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cgf_core::error::ErrorClass;
use cgf_core::mapping::MappingMethod;
use cgf_core::pipeline::{self, DataSource, PipelineConfig, SyntheticPreset};
use cgf_core::selftest;
use cgf_core::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cgf", version, about = "Consistent-group time-series classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse or generate windows and write the canonical train/test files.
    Ingest(Overrides),
    /// Fit the autoencoder, form consistent groups and train group models.
    Train(Overrides),
    /// Group the test set, map groups to train models, predict and score.
    Infer(Overrides),
    /// Composition tables, PCA coordinates and Hubert bar data for a run.
    Report {
        /// Run directory (defaults to the configured output directory).
        run_dir: Option<PathBuf>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Ingest, train, infer and report in sequence.
    Run(Overrides),
    /// Finite-difference check of the autoencoder gradients.
    Gradcheck {
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Brute-force oracle suites for clustering, distances and statistics.
    Selftest {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the default configuration as TOML.
    Config {
        /// Print the synthetic quick-run preset instead.
        #[arg(long)]
        synthetic: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Uah,
    Synthetic,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Xor,
    ThreeArchetypes,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    CrCr,
    Avg,
}

/// Command-line values that override the configuration file.
#[derive(Args, Default)]
struct Overrides {
    /// TOML configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Start from the synthetic quick-run preset instead of the defaults.
    #[arg(long)]
    synthetic: bool,
    #[arg(short, long)]
    out: Option<PathBuf>,
    #[arg(long)]
    dataset_root: Option<PathBuf>,
    #[arg(long)]
    dataset_file: Option<PathBuf>,
    #[arg(long, value_enum)]
    source: Option<SourceArg>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Seed applied to ingest, autoencoder and classifier.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_enum)]
    mapping: Option<MethodArg>,
    #[arg(long)]
    baseline_only: bool,
    #[arg(long)]
    single_group: bool,
    #[arg(long)]
    reselect_measure_per_k: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match (&self.config, self.synthetic) {
            (Some(path), _) => PipelineConfig::load(path)?,
            (None, true) => PipelineConfig::synthetic("run", 0),
            (None, false) => PipelineConfig::default(),
        };
        if let Some(out) = &self.out {
            cfg.paths.output_dir = out.clone();
        }
        if let Some(root) = &self.dataset_root {
            cfg.paths.dataset_root = Some(root.clone());
        }
        if let Some(file) = &self.dataset_file {
            cfg.paths.dataset_file = Some(file.clone());
            cfg.ingest.source = DataSource::File;
        }
        if let Some(source) = self.source {
            cfg.ingest.source = match source {
                SourceArg::Uah => DataSource::Uah,
                SourceArg::Synthetic => DataSource::Synthetic,
                SourceArg::File => DataSource::File,
            };
        }
        if let Some(preset) = self.preset {
            cfg.ingest.synthetic = match preset {
                PresetArg::Xor => SyntheticPreset::Xor,
                PresetArg::ThreeArchetypes => SyntheticPreset::ThreeArchetypes,
            };
        }
        if let Some(seed) = self.seed {
            cfg.ingest.seed = seed;
            cfg.autoencoder.seed = seed;
            cfg.classifier.seed = seed;
        }
        if let Some(epochs) = self.epochs {
            cfg.autoencoder.epochs = epochs;
        }
        if let Some(tau) = self.tau {
            cfg.cgf.tau = tau;
        }
        if let Some(method) = self.mapping {
            cfg.mapping.method = match method {
                MethodArg::CrCr => MappingMethod::CrCr,
                MethodArg::Avg => MappingMethod::Avg,
            };
        }
        cfg.train.baseline_only |= self.baseline_only;
        cfg.train.single_group |= self.single_group;
        cfg.cgf.reselect_measure_per_k |= self.reselect_measure_per_k;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn print_suites(suites: &[selftest::SuiteOutcome]) -> bool {
    let mut all = true;
    for s in suites {
        let status = if s.passed() { "PASS" } else { "FAIL" };
        println!("{status} {:<28} cases={:<5} failures={:<3} max_error={:.3e}", s.name, s.cases, s.failures, s.max_error);
        if let Some(first) = &s.first_failure {
            println!("     first failure: {first}");
        }
        all &= s.passed();
    }
    all
}

fn report(dir: &Path) -> Result<()> {
    let summary = pipeline::cmd_report(dir)?;
    for note in &summary.skipped {
        eprintln!("note: {note}");
    }
    print_json(&summary)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Ingest(o) => print_json(&pipeline::cmd_ingest(&o.resolve()?)?)?,
        Command::Train(o) => print_json(&pipeline::cmd_train(&o.resolve()?)?)?,
        Command::Infer(o) => print_json(&pipeline::cmd_infer(&o.resolve()?)?)?,
        Command::Report { run_dir, overrides } => {
            let dir = match run_dir {
                Some(dir) => dir,
                None => overrides.resolve()?.paths.output_dir,
            };
            report(&dir)?;
        }
        Command::Run(o) => {
            let cfg = o.resolve()?;
            print_json(&pipeline::cmd_ingest(&cfg)?)?;
            print_json(&pipeline::cmd_train(&cfg)?)?;
            print_json(&pipeline::cmd_infer(&cfg)?)?;
            report(&cfg.paths.output_dir)?;
        }
        Command::Gradcheck { seeds } => {
            let seeds: Vec<u64> = (0..seeds).collect();
            return Ok(print_suites(&[selftest::gradcheck_suite(&seeds)?]));
        }
        Command::Selftest { seed } => return Ok(print_suites(&selftest::run_all(seed)?)),
        Command::Config { synthetic } => {
            let cfg = if synthetic { PipelineConfig::synthetic("run", 0) } else { PipelineConfig::default() };
            print!("{}", cfg.to_toml()?);
        }
    }
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Io => 3,
        ErrorClass::Numeric => 4,
        ErrorClass::Data => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
