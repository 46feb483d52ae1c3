use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use switchid::harness::{self, Criteria, ScenarioConfig};

/// Online identification of switched linear systems.
#[derive(Parser)]
#[command(name = "switchid", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file and write trace.csv and report.txt.
    Run {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Validate a scenario file without running it.
    Check {
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run the bundled two-subsystem scenario.
    Demo {
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    /// Output directory (default: the scenario's run.out_dir, else ./out).
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Only report errors.
    #[arg(long)]
    quiet: bool,
}

impl Overrides {
    fn apply(&self, cfg: &mut ScenarioConfig) {
        if let Some(seed) = self.seed {
            cfg.run.seed = seed;
        }
        if let Some(t_end) = self.t_end {
            cfg.run.t_end = t_end;
        }
        if let Some(dt) = self.dt {
            cfg.run.dt = dt;
        }
        if let Some(dir) = &self.out_dir {
            cfg.run.out_dir = Some(dir.clone());
        }
    }
}

fn read_config(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(ScenarioConfig::from_toml(&text)?)
}

fn execute(mut cfg: ScenarioConfig, overrides: &Overrides) -> Result<bool> {
    overrides.apply(&mut cfg);
    let scenario = cfg.build()?;
    let dir = scenario.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    let (report, checks) = harness::run_to_dir(&scenario, &dir, &Criteria::default())
        .with_context(|| format!("run of {} failed", scenario.name))?;
    if !overrides.quiet {
        println!(
            "{}: {} steps in {:.2} s, output in {}",
            report.scenario,
            report.steps,
            report.wall_time,
            dir.display()
        );
        for s in &report.subsystems {
            let detected = s.detected_at.map_or("not detected".to_string(), |t| format!("detected at t = {t}"));
            println!("  subsystem {}: {detected}, final error {:.3e}", s.label, s.final_error);
        }
        for w in &report.warnings {
            println!("  warning: {w}");
        }
        for r in &checks.results {
            println!("  {:<18} {}  {}", r.name, if r.passed { "pass" } else { "FAIL" }, r.detail);
        }
    }
    Ok(checks.all_passed())
}

fn main_inner(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Run { config, overrides } => execute(read_config(&config)?, &overrides),
        Command::Demo { overrides } => execute(harness::flagship(), &overrides),
        Command::Check { config, overrides } => {
            let mut cfg = read_config(&config)?;
            overrides.apply(&mut cfg);
            match cfg.build() {
                Ok(s) => {
                    if !overrides.quiet {
                        let dims = s.plant.dims();
                        println!(
                            "{}: ok (n = {}, m = {}, {} subsystems, {} switches, dt = {}, t_end = {})",
                            s.name,
                            dims.states(),
                            dims.inputs(),
                            dims.subsystems(),
                            s.schedule.events().len(),
                            s.dt,
                            s.t_end
                        );
                    }
                    Ok(true)
                }
                Err(e) => {
                    eprintln!("{e}");
                    Ok(false)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match main_inner(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

