use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use coopshap::game::{
    core_violations, efficiency_check, is_convex, marginal_vector, parse_game, shapley_exact,
    shapley_permutation_mc, CharacteristicTable, Convexity, Outcome, PayoffVector,
    PermutationSampling, SUM_TOL,
};
use coopshap::harness::{
    evaluate_run, load_checkpoint, mixed_traffic_experiment, parse_config, run_experiment,
    run_verification, RunConfig,
};
use coopshap::env::MPS_TO_MPH;

#[derive(Parser)]
#[command(name = "coopshap", version, about = "Shapley credit assignment for cooperative lane changing")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed and write metrics, a summary and checkpoints.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `out_dir` from the configuration.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and evaluate at several CAV ratios.
    Mixed {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated ratios, e.g. `0,0.5,1`.
        #[arg(long, value_delimiter = ',', required = true)]
        ratios: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Greedy evaluation of a saved run.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
    },
    /// Solution concepts for a game file.
    Game {
        #[command(subcommand)]
        query: GameQuery,
    },
    /// Run the randomized property suite.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Subcommand)]
enum GameQuery {
    Shapley {
        file: PathBuf,
        /// Estimate from this many sampled permutations instead.
        #[arg(long)]
        mc: Option<usize>,
        #[arg(long, default_value_t = 0, requires = "mc")]
        seed: u64,
    },
    Convex {
        file: PathBuf,
    },
    Core {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        payoff: Vec<f64>,
    },
    /// Marginal vector for an order of 1-based agents.
    Marginal {
        file: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        order: Vec<usize>,
    },
    /// Checks a payoff (default: the Shapley value) against the grand coalition.
    Efficiency {
        file: PathBuf,
        #[arg(long, value_delimiter = ',')]
        payoff: Option<Vec<f64>>,
    },
}

fn read_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_config(&text).with_context(|| format!("in {}", path.display()))
}

fn read_game(path: &Path) -> Result<CharacteristicTable> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_game(&text).with_context(|| format!("in {}", path.display()))
}

fn payoff_for(game: &CharacteristicTable, x: Vec<f64>) -> Result<PayoffVector> {
    if x.len() != game.n() {
        bail!("payoff has {} entries for a {}-agent game", x.len(), game.n());
    }
    if let Some(v) = x.iter().find(|v| !v.is_finite()) {
        bail!("payoff entry {v} is not finite");
    }
    Ok(PayoffVector::new(x))
}

fn print_payoff(x: &PayoffVector) {
    for (i, v) in x.iter().enumerate() {
        println!("agent {}: {v}", i + 1);
    }
    println!("total: {}", x.total());
}

fn game(query: GameQuery) -> Result<()> {
    match query {
        GameQuery::Shapley { file, mc, seed } => {
            let g = read_game(&file)?;
            let x = match mc {
                Some(0) => bail!("--mc needs at least one permutation"),
                Some(samples) => shapley_permutation_mc(&g, PermutationSampling::Random { samples, seed })?,
                None => shapley_exact(&g)?,
            };
            print_payoff(&x);
            println!("v(N): {}", g.grand_value());
        }
        GameQuery::Convex { file } => {
            let g = read_game(&file)?;
            match is_convex(&g)? {
                Convexity::Convex => println!("convex"),
                Convexity::Violated { c, d } => {
                    println!("not convex");
                    println!(
                        "witness: C={c} D={d} v(C|D)+v(C&D)={} < v(C)+v(D)={}",
                        g.value(c.union(d)) + g.value(c.intersection(d)),
                        g.value(c) + g.value(d)
                    );
                }
            }
        }
        GameQuery::Core { file, payoff } => {
            let g = read_game(&file)?;
            let x = payoff_for(&g, payoff)?;
            let report = core_violations(&g, &x)?;
            println!("{}", if report.in_core() { "in core" } else { "not in core" });
            if !report.grand_feasible {
                println!("infeasible: x(N)={} > v(N)={}", x.total(), g.grand_value());
            }
            for c in &report.violations {
                println!("blocking: {c} x(C)={} < v(C)={}", x.coalition_sum(*c), g.value(*c));
            }
        }
        GameQuery::Marginal { file, order } => {
            let g = read_game(&file)?;
            if order.contains(&0) {
                bail!("agents in --order are numbered from 1");
            }
            let zero_based: Vec<usize> = order.iter().map(|i| i - 1).collect();
            print_payoff(&marginal_vector(&g, &zero_based)?);
        }
        GameQuery::Efficiency { file, payoff } => {
            let g = read_game(&file)?;
            let x = match payoff {
                Some(p) => payoff_for(&g, p)?,
                None => shapley_exact(&g)?,
            };
            let efficient = efficiency_check(&g, &Outcome::grand(x.clone())?);
            print_payoff(&x);
            println!("v(N): {}", g.grand_value());
            println!(
                "{} (tolerance {SUM_TOL})",
                if efficient { "efficient" } else { "not efficient" }
            );
        }
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train { config, out } => {
            let cfg = read_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let result = run_experiment(&cfg, Some(&dir))?;
            for (s, tail) in result.per_seed.iter().zip(&result.summary.final_tenth) {
                match tail {
                    Some(v) => println!("seed {}: final windowed system reward {v:.4}", s.seed),
                    None => println!("seed {}: no episodes", s.seed),
                }
            }
            println!("results in {}", dir.display());
        }
        Command::Mixed { config, ratios, out } => {
            let cfg = read_config(&config)?;
            let dir = out.unwrap_or_else(|| cfg.out_dir.clone());
            let table = mixed_traffic_experiment(&cfg, &ratios, Some(&dir))?;
            println!("ratio  mean_velocity_mph  mean_comfort");
            for (r, v, c) in &table.averages {
                println!("{r:<6} {v:<18.4} {c:.4}");
            }
            println!("results in {}", dir.display());
        }
        Command::Eval { checkpoint, episodes } => {
            if episodes == 0 {
                bail!("--episodes must be at least 1");
            }
            let state = load_checkpoint(&checkpoint)?;
            let r = evaluate_run(&state, episodes)?;
            println!("algorithm: {}", state.config.algorithm);
            println!("trained episodes: {}", state.episodes_done());
            println!("evaluation episodes: {}", r.episodes);
            println!("mean system reward: {:.4}", r.mean_system_reward);
            println!(
                "mean velocity: {:.4} m/s ({:.4} mph)",
                r.mean_velocity_mps,
                r.mean_velocity_mps * MPS_TO_MPH
            );
            println!("mean comfort: {:.4}", r.mean_comfort);
        }
        Command::Game { query } => game(query)?,
        Command::Verify { seed } => {
            let results = run_verification(seed);
            let mut ok = true;
            for r in &results {
                match &r.failure {
                    None => println!("PASS {} ({} cases)", r.name, r.cases),
                    Some(f) => {
                        ok = false;
                        println!("FAIL {}: {f}", r.name);
                    }
                }
            }
            return Ok(ok);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
