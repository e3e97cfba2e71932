// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use cntfpga::config::{has_errors, validate, Severity};
use cntfpga::experiment::scheme_table_rows;
use cntfpga::{Experiment, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

/// Test and repair simulations for carbon-nanotube FPGAs.
#[derive(Parser)]
#[command(name = "cntfpga", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment and write its artifacts.
    Run(ConfigArgs),
    /// Check a configuration and print diagnostics.
    Validate(ConfigArgs),
    /// Print the spare-row sharing scheme table.
    Schemes,
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides master_seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the Monte Carlo sample count.
    #[arg(long)]
    samples: Option<usize>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides (or, without --config, selects) the experiment.
    #[arg(long)]
    experiment: Option<String>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> anyhow::Result<RunConfig> {
        let experiment = self.experiment.as_deref().map(Experiment::parse).transpose()?;
        let mut c = match (&self.config, experiment) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, Some(e)) => RunConfig::new(e),
            (None, None) => return Err(anyhow!("either --config or --experiment is required")),
        };
        if let Some(e) = experiment {
            c.experiment = e;
        }
        if let Some(s) = self.seed {
            c.master_seed = s;
        }
        if let Some(n) = self.samples {
            c.samples = n;
        }
        if let Some(o) = &self.out {
            c.output_dir = o.clone();
        }
        if let Some(w) = self.workers {
            c.workers = Some(w);
        }
        Ok(c)
    }
}

/// Prints diagnostics; returns whether any is an error.
fn report(c: &RunConfig) -> bool {
    let d = validate(c);
    for x in &d {
        eprintln!("{x}");
    }
    has_errors(&d)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::Schemes => {
            println!("scheme,tiles_per_group,spare_rows_per_group,rows_per_tile,normalized_overhead_pct");
            for r in scheme_table_rows() {
                println!("{}", r.join(","));
            }
            ExitCode::SUCCESS
        }
        Command::Validate(a) => match a.resolve() {
            Ok(c) => {
                if report(&c) {
                    ExitCode::from(EXIT_CONFIG)
                } else {
                    let warnings = validate(&c).iter().filter(|d| d.severity == Severity::Warning).count();
                    println!("ok: {} ({warnings} warning(s))", c.experiment);
                    ExitCode::SUCCESS
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::from(EXIT_CONFIG)
            }
        },
        Command::Run(a) => {
            let c = match a.resolve() {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e:#}");
                    return ExitCode::from(EXIT_CONFIG);
                }
            };
            if report(&c) {
                return ExitCode::from(EXIT_CONFIG);
            }
            match cntfpga::run(&c).with_context(|| format!("{} failed", c.experiment)) {
                Ok(out) => {
                    for f in &out.manifest.artifacts {
                        println!("{}", out.output_dir.join(&f.file).display());
                    }
                    println!("{}", out.output_dir.join("manifest.json").display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e:#}");
                    ExitCode::from(EXIT_RUNTIME)
                }
            }
        }
    }
}
