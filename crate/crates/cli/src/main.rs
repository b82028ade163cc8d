use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fluctuant_cli::oracle::{self, OracleKind};
use fluctuant_cli::{execute, presets, write_artifacts, ConfigError, ExperimentConfig};

#[derive(Parser)]
#[command(name = "fluctuant", version, about = "Fluctuation experiments for conservative lattice gases")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML or JSON file.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run built-in configurations and report their verdicts.
    Verify {
        #[arg(long, conflicts_with = "experiment", required_unless_present = "experiment")]
        all: bool,
        #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(presets::NAMES))]
        experiment: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Print a closed-form variance curve as `t,value` CSV.
    Oracle {
        #[arg(long, value_enum)]
        kind: OracleKind,
        #[arg(long, default_value_t = 0.5)]
        d: f64,
        #[arg(long, default_value_t = 0.25)]
        chi: f64,
        #[arg(long, default_value_t = 0.0)]
        drift: f64,
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.5,1,2,4")]
        times: Vec<f64>,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Worker threads; FLUCTUANT_WORKERS is used when absent.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

impl Overrides {
    fn apply(&self, cfg: &mut ExperimentConfig, nested: bool) {
        if let Some(dir) = &self.output_dir {
            cfg.output_dir = if nested { dir.join(cfg.experiment.name()) } else { dir.clone() };
        }
        if self.workers.is_some() {
            cfg.budget.workers = self.workers;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
    }
}

enum Outcome {
    Pass,
    Fail,
}

fn run_one(cfg: &ExperimentConfig) -> Result<Outcome, ExitCode> {
    if let Err(e) = cfg.validate() {
        return Err(config_error(&e));
    }
    let start = Instant::now();
    let report = match execute(cfg) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {}: {e:#}", cfg.experiment.name());
            return Err(ExitCode::from(2));
        }
    };
    let wall = start.elapsed().as_secs_f64();
    if let Err(e) = write_artifacts(&cfg.output_dir, cfg, &report, wall) {
        eprintln!("error: {e:#}");
        return Err(ExitCode::from(2));
    }
    for v in report.verdicts.iter().filter(|v| !v.pass) {
        eprintln!("  FAIL {} {}", v.experiment, v.grid_point);
    }
    for n in &report.notes {
        eprintln!("  note: {n}");
    }
    let pass = report.pass();
    println!(
        "{} {} ({:.1}s) -> {}",
        if pass { "PASS" } else { "FAIL" },
        report.experiment,
        wall,
        cfg.output_dir.display()
    );
    Ok(if pass { Outcome::Pass } else { Outcome::Fail })
}

fn config_error(e: &ConfigError) -> ExitCode {
    eprintln!("error: invalid configuration: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, overrides } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return config_error(&e),
            };
            overrides.apply(&mut cfg, false);
            match run_one(&cfg) {
                Ok(Outcome::Pass) => ExitCode::SUCCESS,
                Ok(Outcome::Fail) => ExitCode::from(1),
                Err(code) => code,
            }
        }
        Command::Verify {
            all,
            experiment,
            overrides,
        } => {
            let names: Vec<&str> = if all {
                presets::NAMES.to_vec()
            } else {
                vec![experiment.as_deref().expect("clap requires one of the two")]
            };
            let mut failed = false;
            for name in names {
                let mut cfg = presets::preset(name).expect("name validated by clap");
                overrides.apply(&mut cfg, true);
                match run_one(&cfg) {
                    Ok(Outcome::Pass) => {}
                    Ok(Outcome::Fail) => failed = true,
                    Err(code) => return code,
                }
            }
            if failed {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            }
        }
        Command::Oracle {
            kind,
            d,
            chi,
            drift,
            times,
        } => {
            print!("{}", oracle::table(kind, d, chi, drift, &times));
            ExitCode::SUCCESS
        }
    }
}
