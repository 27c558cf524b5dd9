use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use consensus_marl::error::Result;
use consensus_marl::harness::{
    apply_overrides, consensus_check, emit_plot_data, output_path, run_scenario, verify_fixed_point, write_file, RunOverrides,
    ScenarioConfig, DEFAULT_TOLERANCE, OUTPUT_DIR_ENV,
};

#[derive(Parser)]
#[command(name = "cmarl", version, about = "Consensus actor-critic experiments under a single-adversary attack")]
struct Cli {
    /// Directory for relative output paths.
    #[arg(long, global = true, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a scenario and write its metrics CSV.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "metrics.csv")]
        out: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
        #[arg(long)]
        freeze_policy: bool,
    },
    /// Frozen-policy training compared against the analytic fixed point.
    VerifyFixedPoint {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value_t = DEFAULT_TOLERANCE)]
        tolerance: f64,
        /// Also write the per-agent report as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a consensus matrix or schedule file.
    ConsensusCheck {
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge metrics files into long-format, optionally smoothed, returns.
    PlotData {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, default_value_t = 1)]
        window: usize,
        /// One team-average row per episode instead of one per agent.
        #[arg(long)]
        team: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn write_or_print(out: Option<PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(path) => write_file(&output_path(&path), text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn execute(command: Command) -> Result<bool> {
    match command {
        Command::Run { config, seed, out, episodes, freeze_policy } => {
            let summary = run_scenario(&config, &out, &RunOverrides { seed, episodes, freeze_policy })?;
            println!(
                "wrote {} ({} episodes, {} steps, max ||z|| {:.4e}, final disagreement {:.4e})",
                summary.metrics_path.display(),
                summary.episodes,
                summary.total_steps,
                summary.max_z_norm,
                summary.final_disagreement
            );
            Ok(true)
        }
        Command::VerifyFixedPoint { config, seed, tolerance, out } => {
            let mut scenario = ScenarioConfig::load(&config)?;
            apply_overrides(&mut scenario, &RunOverrides { seed, ..Default::default() });
            let check = verify_fixed_point(&scenario, tolerance)?;
            print!("{}", check.to_text());
            if out.is_some() {
                write_or_print(out, &check.report.to_csv())?;
            }
            Ok(check.passed())
        }
        Command::ConsensusCheck { config } => {
            let check = consensus_check(&config)?;
            print!("{}", check.text);
            Ok(check.passed())
        }
        Command::PlotData { inputs, window, team, out } => {
            let rows = emit_plot_data(&inputs, window, team)?;
            write_or_print(out, &rows)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(dir) = &cli.output_dir {
        std::env::set_var(OUTPUT_DIR_ENV, dir);
    }
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
