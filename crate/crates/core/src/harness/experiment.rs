use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::checkpoint::{save_checkpoint, RunState};
use super::config::RunConfig;
use super::metrics::{format_sig6, window_mean, write_metrics, MetricsRecord};
use crate::env::{trace_header, trace_rows, EnvConfig, MPS_TO_MPH};
use crate::error::{Error, Result};
use crate::marl::{rollout, EpisodeMetrics, StepRecord, Trainer};

const EVAL_SALT: u64 = 0x6576_616c_7561_7465;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce5_e4b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Environment seed of a training episode. It depends only on the run seed
/// and the episode, so different algorithms see the same initial states.
pub fn episode_seed(run_seed: u64, episode: u64) -> u64 {
    splitmix64(run_seed ^ splitmix64(episode))
}

/// Environment seed of greedy evaluation rollouts for a run seed.
pub fn eval_seed(run_seed: u64, episode: u64) -> u64 {
    episode_seed(run_seed ^ EVAL_SALT, episode)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

impl RunState {
    pub fn new(config: &RunConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let env = config.env_config()?;
        let trainer = Trainer::new(config.algorithm, &env, config.trainer_config(), seed)?;
        Ok(RunState {
            config: config.clone(),
            seed,
            trainer,
            metrics: Vec::new(),
        })
    }

    pub fn episodes_done(&self) -> u64 {
        self.trainer.episodes_done
    }

    /// Trains up to `count` more episodes without exceeding the configured
    /// total, appending one record per episode. Trace rows go to `trace`.
    pub fn run_episodes(&mut self, count: u64, mut trace: Option<&mut dyn Write>) -> Result<()> {
        let env = self.config.env_config()?;
        let target = (self.episodes_done() + count).min(self.config.episodes);
        while self.episodes_done() < target {
            let ep = self.episodes_done();
            let mut trace_err = None;
            let mut write_rows = |r: &StepRecord<'_>| {
                if let Some(w) = trace.as_deref_mut() {
                    for row in trace_rows(r.state, r.actions, r.rewards) {
                        if let Err(e) = writeln!(w, "{row}") {
                            trace_err.get_or_insert(e);
                        }
                    }
                }
            };
            let m = self.trainer.train_episode(
                &env,
                self.config.steps,
                episode_seed(self.seed, ep),
                Some(&mut write_rows),
            )?;
            if let Some(e) = trace_err {
                return Err(Error::Io {
                    path: PathBuf::from("<trace>"),
                    source: e,
                });
            }
            self.metrics.push(MetricsRecord::from_episode(ep, &m));
        }
        Ok(())
    }

    pub fn run_to_end(&mut self, trace: Option<&mut dyn Write>) -> Result<()> {
        let rest = self.config.episodes - self.episodes_done().min(self.config.episodes);
        self.run_episodes(rest, trace)
    }

    pub fn system_rewards(&self) -> Vec<f64> {
        self.metrics.iter().map(|m| m.system_reward).collect()
    }
}

#[derive(Clone, Debug)]
pub struct SeedSeries {
    pub seed: u64,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct WindowSummary {
    pub first_episode: u64,
    pub len: usize,
    pub partial: bool,
    /// Window mean of the system reward for each seed, in seed order.
    pub per_seed: Vec<f64>,
    pub mean: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub windows: Vec<WindowSummary>,
    /// Per seed, the windowed system reward averaged over the final tenth
    /// of the episodes; `None` for empty runs.
    pub final_tenth: Vec<Option<f64>>,
}

#[derive(Clone, Debug)]
pub struct ExperimentResult {
    pub per_seed: Vec<SeedSeries>,
    pub summary: Summary,
}

/// Mean of the window means covering the last `fraction` of the series,
/// weighted by window length.
pub fn final_fraction_mean(series: &[f64], window: usize, fraction: f64) -> Result<Option<f64>> {
    let windows = window_mean(series, window)?;
    if windows.is_empty() {
        return Ok(None);
    }
    let tail = ((fraction * series.len() as f64) / window as f64).ceil().max(1.0) as usize;
    let tail = &windows[windows.len() - tail.min(windows.len())..];
    let total: f64 = tail.iter().map(|w| w.mean * w.len as f64).sum();
    let len: usize = tail.iter().map(|w| w.len).sum();
    Ok(Some(total / len as f64))
}

pub fn summarize(per_seed: &[SeedSeries], window: usize) -> Result<Summary> {
    let rewards: Vec<Vec<f64>> = per_seed
        .iter()
        .map(|s| s.metrics.iter().map(|m| m.system_reward).collect())
        .collect();
    let per_window: Vec<_> = rewards
        .iter()
        .map(|r| window_mean(r, window))
        .collect::<Result<_>>()?;
    let n_windows = per_window.iter().map(|w| w.len()).max().unwrap_or(0);
    let windows = (0..n_windows)
        .map(|k| {
            let cells: Vec<_> = per_window.iter().filter_map(|w| w.get(k)).collect();
            let per_seed: Vec<f64> = cells.iter().map(|c| c.mean).collect();
            WindowSummary {
                first_episode: (k * window) as u64,
                len: cells.iter().map(|c| c.len).max().unwrap_or(0),
                partial: cells.iter().any(|c| c.partial),
                mean: per_seed.iter().sum::<f64>() / per_seed.len() as f64,
                per_seed,
            }
        })
        .collect();
    let final_tenth = rewards
        .iter()
        .map(|r| final_fraction_mean(r, window, 0.1))
        .collect::<Result<_>>()?;
    Ok(Summary {
        windows,
        final_tenth,
    })
}

pub fn summary_csv(seeds: &[u64], summary: &Summary) -> String {
    let mut out = String::from("first_episode,episodes,partial,mean_system_reward");
    for s in seeds {
        out.push_str(&format!(",seed_{s}"));
    }
    out.push('\n');
    for w in &summary.windows {
        out.push_str(&format!(
            "{},{},{},{}",
            w.first_episode,
            w.len,
            w.partial,
            format_sig6(w.mean)
        ));
        for v in &w.per_seed {
            out.push(',');
            out.push_str(&format_sig6(*v));
        }
        out.push('\n');
    }
    out
}

/// Trains every seed in order. With an output directory, each seed's
/// metrics are written as soon as that seed stops, including when it fails.
pub fn run_experiment(config: &RunConfig, out: Option<&Path>) -> Result<ExperimentResult> {
    config.validate()?;
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("config.txt");
        fs::write(&path, config.to_text()).map_err(io_err(&path))?;
    }
    let mut per_seed = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut state = RunState::new(config, seed)?;
        let outcome = match (out, config.trace) {
            (Some(dir), true) => {
                let path = dir.join(format!("trace_seed{seed}.csv"));
                let file = fs::File::create(&path).map_err(io_err(&path))?;
                let mut w = BufWriter::new(file);
                writeln!(w, "{}", trace_header()).map_err(io_err(&path))?;
                let r = state.run_to_end(Some(&mut w));
                w.flush().map_err(io_err(&path))?;
                r
            }
            _ => state.run_to_end(None),
        };
        if let Some(dir) = out {
            write_metrics(&state.metrics, &dir.join(format!("metrics_seed{seed}.csv")))?;
            outcome?;
            save_checkpoint(&dir.join(format!("seed{seed}.ckpt")), &state)?;
        } else {
            outcome?;
        }
        per_seed.push(SeedSeries {
            seed,
            metrics: state.metrics,
        });
    }
    let summary = summarize(&per_seed, config.window)?;
    if let Some(dir) = out {
        let path = dir.join("summary.csv");
        fs::write(&path, summary_csv(&config.seeds, &summary)).map_err(io_err(&path))?;
    }
    Ok(ExperimentResult { per_seed, summary })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedRow {
    pub seed: u64,
    pub ratio: f64,
    pub n_cavs: usize,
    pub mean_velocity_mph: f64,
    pub mean_comfort: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MixedTable {
    /// One row per (seed, ratio), seeds outermost.
    pub rows: Vec<MixedRow>,
    /// Per ratio, `(ratio, velocity mph, comfort)` averaged over seeds.
    pub averages: Vec<(f64, f64, f64)>,
}

/// Trains the CAV share of each ratio from scratch and evaluates the frozen
/// policies over one continuous `eval_steps` rollout. Ratio 0 is evaluated
/// with scripted drivers only.
pub fn mixed_traffic_experiment(base: &RunConfig, ratios: &[f64], out: Option<&Path>) -> Result<MixedTable> {
    base.validate()?;
    let envs: Vec<EnvConfig> = ratios
        .iter()
        .map(|r| base.env_for_ratio(*r))
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for &seed in &base.seeds {
        for (ratio, env) in ratios.iter().zip(&envs) {
            let m = mixed_point(base, env, seed)?;
            rows.push(MixedRow {
                seed,
                ratio: *ratio,
                n_cavs: env.n_cavs,
                mean_velocity_mph: m.mean_velocity * MPS_TO_MPH,
                mean_comfort: m.mean_comfort,
            });
        }
    }
    let averages = ratios
        .iter()
        .enumerate()
        .map(|(k, r)| {
            let cells: Vec<&MixedRow> = rows.iter().skip(k).step_by(ratios.len()).collect();
            let n = cells.len() as f64;
            (
                *r,
                cells.iter().map(|c| c.mean_velocity_mph).sum::<f64>() / n,
                cells.iter().map(|c| c.mean_comfort).sum::<f64>() / n,
            )
        })
        .collect();
    let table = MixedTable { rows, averages };
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        let path = dir.join("mixed.csv");
        fs::write(&path, mixed_csv(&table)).map_err(io_err(&path))?;
    }
    Ok(table)
}

fn mixed_point(base: &RunConfig, env: &EnvConfig, seed: u64) -> Result<EpisodeMetrics> {
    let eval = eval_seed(seed, 0);
    if env.n_cavs == 0 {
        return rollout(None, env, base.eval_steps, eval, None);
    }
    let mut trainer = Trainer::new(base.algorithm, env, base.trainer_config(), seed)?;
    for ep in 0..base.episodes {
        trainer.train_episode(env, base.steps, episode_seed(seed, ep), None)?;
    }
    trainer.evaluate(env, base.eval_steps, eval, None)
}

pub fn mixed_csv(table: &MixedTable) -> String {
    let mut out = String::from("seed,cav_ratio,cavs,mean_velocity_mph,mean_comfort\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            r.seed,
            format_sig6(r.ratio),
            r.n_cavs,
            format_sig6(r.mean_velocity_mph),
            format_sig6(r.mean_comfort)
        ));
    }
    for (ratio, v, c) in &table.averages {
        out.push_str(&format!(
            "mean,{},,{},{}\n",
            format_sig6(*ratio),
            format_sig6(*v),
            format_sig6(*c)
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub episodes: usize,
    pub mean_system_reward: f64,
    pub mean_velocity_mps: f64,
    pub mean_comfort: f64,
}

/// Greedy episodes of the stored policies on evaluation seeds.
pub fn evaluate_run(state: &RunState, episodes: usize) -> Result<EvalReport> {
    let env = state.config.env_config()?;
    let mut reward = 0.0;
    let mut velocity = 0.0;
    let mut comfort = 0.0;
    for e in 0..episodes {
        let m = state
            .trainer
            .evaluate(&env, state.config.steps, eval_seed(state.seed, e as u64), None)?;
        reward += m.system_reward;
        velocity += m.mean_velocity;
        comfort += m.mean_comfort;
    }
    let k = episodes.max(1) as f64;
    Ok(EvalReport {
        episodes,
        mean_system_reward: reward / k,
        mean_velocity_mps: velocity / k,
        mean_comfort: comfort / k,
    })
}
