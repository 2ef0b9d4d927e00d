use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use regatta::harness::{
    cmd_bench, cmd_evolve, cmd_gen_scenarios, cmd_holdout_eval, cmd_solve_exact, cmd_train_offline, Experiment,
};

#[derive(Parser)]
#[command(name = "regatta", version, about = "Robust sailing-route search over simulated wind scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the number of evaluation shards.
    #[arg(long, global = true)]
    shards: Option<usize>,
    #[arg(long, global = true, value_enum, default_value_t = Switch::Off)]
    surrogate: Switch,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate and store training and holdout scenarios.
    GenScenarios,
    /// Solve the static problem on the initial field.
    SolveExact,
    /// Run the evolutionary search.
    Evolve,
    /// Compare the top solutions with the static optimum on holdout scenarios.
    HoldoutEval,
    /// Time ungated against gated evolution.
    Bench,
    /// Fit the surrogate models on a cache dump.
    TrainOffline,
}

fn run(cli: Cli) -> Result<()> {
    let Some(path) = cli.config else { bail!("--config is required") };
    let mut exp = Experiment::load(&path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(seed) = cli.seed {
        exp.config.seed = seed;
    }
    if let Some(out) = cli.out {
        exp.config.output_dir = out;
    }
    let shards = cli.shards.unwrap_or(exp.config.shards);
    if shards == 0 {
        bail!("--shards must be >= 1");
    }
    let out = exp.config.output_dir.clone();
    let gated = cli.surrogate == Switch::On;
    match cli.command {
        Command::GenScenarios => {
            let entries = cmd_gen_scenarios(&exp, &out)?;
            println!("wrote {} scenarios to {}", entries.len(), out.join("scenarios").display());
        }
        Command::SolveExact => {
            let (route, cost) = cmd_solve_exact(&exp, &out)?;
            println!("s_w0: {} edges, cost {cost:.3} s", route.edges.len());
        }
        Command::Evolve => {
            let o = cmd_evolve(&exp, &out, shards, gated)?;
            println!(
                "best aggregate cost {:.3}; {} true evaluations, {} cache hits, {} forecasts",
                o.best_true_cost(),
                o.stats.true_evaluations,
                o.stats.cache_hits,
                o.stats.forecasts
            );
        }
        Command::HoldoutEval => {
            let r = cmd_holdout_eval(&exp, &out, gated)?;
            let base = r.rows.iter().filter(|(n, _, _)| n == "s_w0").map(|(_, _, c)| c).sum::<f64>()
                / exp.config.scenarios.holdout as f64;
            let better = r.summary.iter().filter(|s| s.mean_cost < base).count();
            println!("{better} of {} solutions beat s_w0 on mean holdout cost ({base:.3})", r.summary.len());
        }
        Command::Bench => {
            let b = cmd_bench(&exp, &out, shards)?;
            println!(
                "ungated {:.2} s, gated {:.2} s, speedup {:.2}x, cost delta {:+.3}%",
                b.ungated_wall_s, b.gated_wall_s, b.speedup, b.cost_delta_pct
            );
        }
        Command::TrainOffline => {
            let r = cmd_train_offline(&exp, &out)?;
            println!(
                "{} rows; holdout accuracy {:.4}, rmse {:.3}, {:.1}% within 1%",
                r.rows,
                r.classification.accuracy.unwrap_or(f64::NAN),
                r.regression.rmse,
                100.0 * r.within_one_percent
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
