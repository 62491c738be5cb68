//! Line-oriented `key = value` run configuration.

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::env::EnvConfig;
use crate::error::{Error, Result};
use crate::marl::{Algorithm, TrainerConfig};

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    /// Vehicle-level parameters; `n_cavs` is derived from `cav_ratio`.
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    /// Unset means half of `episodes`.
    pub noise_decay_episodes: Option<u64>,
    pub episodes: u64,
    pub steps: usize,
    pub seeds: Vec<u64>,
    pub algorithm: Algorithm,
    pub cav_ratio: f64,
    pub window: usize,
    pub out_dir: PathBuf,
    /// Greedy steps per policy in the mixed-traffic evaluation.
    pub eval_steps: usize,
    /// Write a per-step CSV trace next to the metrics.
    pub trace: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            env: EnvConfig::default(),
            trainer: TrainerConfig::default(),
            noise_decay_episodes: None,
            episodes: 2000,
            steps: 40,
            seeds: vec![1, 2, 3, 4, 5],
            algorithm: Algorithm::Shapley,
            cav_ratio: 1.0,
            window: 100,
            out_dir: PathBuf::from("runs"),
            eval_steps: 4000,
            trace: false,
        }
    }
}

/// Number of CAVs for `ratio` of `n` vehicles, if it is a whole number.
pub fn cav_count(n: usize, ratio: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&ratio) {
        return Err(Error::Config(format!("CAV ratio must lie in [0, 1], got {ratio}")));
    }
    let exact = n as f64 * ratio;
    let rounded = exact.round();
    if (exact - rounded).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "CAV ratio {ratio} of {n} vehicles gives {exact} CAVs, not a whole number"
        )));
    }
    Ok(rounded as usize)
}

impl RunConfig {
    /// Environment with the CAV count resolved from the ratio.
    pub fn env_config(&self) -> Result<EnvConfig> {
        self.env_for_ratio(self.cav_ratio)
    }

    pub fn env_for_ratio(&self, ratio: f64) -> Result<EnvConfig> {
        let mut env = self.env.clone();
        env.n_cavs = cav_count(env.n_vehicles, ratio)?;
        env.validate()?;
        Ok(env)
    }

    /// Trainer settings with the noise schedule resolved.
    pub fn trainer_config(&self) -> TrainerConfig {
        let mut t = self.trainer.clone();
        t.noise_decay_episodes = self.noise_decay_episodes.unwrap_or(self.episodes / 2);
        t
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list must not be empty".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be at least 1".into()));
        }
        self.env_config()?;
        self.trainer_config().validate()
    }

    /// Fully resolved configuration in the same format [`parse_config`] reads.
    pub fn to_text(&self) -> String {
        let e = &self.env;
        let t = self.trainer_config();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        let list = |xs: &[usize]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        kv("algorithm", self.algorithm.to_string());
        kv("episodes", self.episodes.to_string());
        kv("steps", self.steps.to_string());
        kv(
            "seed",
            self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("window", self.window.to_string());
        kv("out_dir", self.out_dir.display().to_string());
        kv("eval_steps", self.eval_steps.to_string());
        kv("trace", self.trace.to_string());
        kv("n_vehicles", e.n_vehicles.to_string());
        kv("cav_ratio", format!("{:?}", self.cav_ratio));
        kv("loop_length", format!("{:?}", e.loop_length));
        kv("dt", format!("{:?}", e.dt));
        kv("v_max", format!("{:?}", e.v_max));
        kv("a_max", format!("{:?}", e.a_max));
        kv("comfort_threshold", format!("{:?}", e.comfort_threshold));
        kv("reward_weight", format!("{:?}", e.reward_weight));
        kv("d_safe", format!("{:?}", e.d_safe));
        kv("d_lc", format!("{:?}", e.d_lc));
        kv("k_v", format!("{:?}", e.k_v));
        kv("v_des_min", format!("{:?}", e.v_des_min));
        kv("v_des_max", format!("{:?}", e.v_des_max));
        kv("vehicle_length", format!("{:?}", e.vehicle_length));
        kv("min_gap", format!("{:?}", e.min_gap));
        kv("gamma", format!("{:?}", t.gamma));
        kv("tau", format!("{:?}", t.tau));
        kv("batch_size", t.batch_size.to_string());
        kv("buffer_capacity", t.buffer_capacity.to_string());
        kv("warmup_batches", t.warmup_batches.to_string());
        kv("update_every", t.update_every.to_string());
        kv("noise_scale", format!("{:?}", t.noise_scale));
        kv("noise_floor", format!("{:?}", t.noise_floor));
        kv("noise_decay_episodes", t.noise_decay_episodes.to_string());
        kv("sampler", t.sampler.to_string());
        kv("shapley_mode", t.shapley_mode.to_string());
        kv("n_exact", t.n_exact.to_string());
        kv("critic_lr", format!("{:?}", t.critic_lr));
        kv("actor_lr", format!("{:?}", t.actor_lr));
        kv("hidden", list(&t.hidden));
        kv("grad_clip", format!("{:?}", t.grad_clip));
        kv("reward_scale", format!("{:?}", t.reward_scale));
        kv("restrict_actor_updates", t.restrict_actor_updates.to_string());
        s
    }
}

fn parse_value<T: std::str::FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("cannot parse `{v}`: {e}"))
}

fn real(v: &str) -> std::result::Result<f64, String> {
    let x: f64 = parse_value(v)?;
    if x.is_finite() {
        Ok(x)
    } else {
        Err(format!("`{v}` is not a finite number"))
    }
}

fn positive(v: &str) -> std::result::Result<f64, String> {
    let x = real(v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(format!("must be positive, got {x}"))
    }
}

fn list<T: std::str::FromStr>(v: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',').map(|x| parse_value(x.trim())).collect()
}

fn set(cfg: &mut RunConfig, key: &str, v: &str) -> std::result::Result<(), String> {
    let e = &mut cfg.env;
    let t = &mut cfg.trainer;
    match key {
        "algorithm" => cfg.algorithm = v.parse().map_err(|e: Error| e.to_string())?,
        "episodes" => cfg.episodes = parse_value(v)?,
        "steps" => cfg.steps = parse_value(v)?,
        "seed" => {
            cfg.seeds = list(v)?;
            if cfg.seeds.is_empty() {
                return Err("seed list must not be empty".into());
            }
        }
        "window" => {
            cfg.window = parse_value(v)?;
            if cfg.window == 0 {
                return Err("window must be at least 1".into());
            }
        }
        "out_dir" => cfg.out_dir = PathBuf::from(v),
        "eval_steps" => cfg.eval_steps = parse_value(v)?,
        "trace" => cfg.trace = parse_value(v)?,
        "n_vehicles" => e.n_vehicles = parse_value(v)?,
        "cav_ratio" => {
            let r = real(v)?;
            if !(0.0..=1.0).contains(&r) {
                return Err(format!("cav_ratio must lie in [0, 1], got {r}"));
            }
            cfg.cav_ratio = r;
        }
        "loop_length" => e.loop_length = positive(v)?,
        "dt" => e.dt = positive(v)?,
        "v_max" => e.v_max = positive(v)?,
        "a_max" => e.a_max = positive(v)?,
        "comfort_threshold" => e.comfort_threshold = positive(v)?,
        "reward_weight" => {
            e.reward_weight = real(v)?;
            if e.reward_weight < 0.0 {
                return Err(format!("reward_weight must be nonnegative, got {}", e.reward_weight));
            }
        }
        "d_safe" => e.d_safe = positive(v)?,
        "d_lc" => e.d_lc = positive(v)?,
        "k_v" => e.k_v = positive(v)?,
        "v_des_min" => e.v_des_min = positive(v)?,
        "v_des_max" => e.v_des_max = positive(v)?,
        "vehicle_length" => e.vehicle_length = positive(v)?,
        "min_gap" => e.min_gap = positive(v)?,
        "gamma" => {
            t.gamma = real(v)?;
            if !(0.0..1.0).contains(&t.gamma) {
                return Err(format!("gamma must lie in [0, 1), got {}", t.gamma));
            }
        }
        "tau" => {
            t.tau = real(v)?;
            if !(t.tau > 0.0 && t.tau <= 1.0) {
                return Err(format!("tau must lie in (0, 1], got {}", t.tau));
            }
        }
        "batch_size" => t.batch_size = parse_value(v)?,
        "buffer_capacity" => t.buffer_capacity = parse_value(v)?,
        "warmup_batches" => t.warmup_batches = parse_value(v)?,
        "update_every" => t.update_every = parse_value(v)?,
        "noise_scale" => t.noise_scale = real(v)?,
        "noise_floor" => t.noise_floor = real(v)?,
        "noise_decay_episodes" => cfg.noise_decay_episodes = Some(parse_value(v)?),
        "sampler" => t.sampler = v.parse().map_err(|e: Error| e.to_string())?,
        "shapley_mode" => t.shapley_mode = v.parse().map_err(|e: Error| e.to_string())?,
        "n_exact" => t.n_exact = parse_value(v)?,
        "critic_lr" => t.critic_lr = positive(v)?,
        "actor_lr" => t.actor_lr = positive(v)?,
        "hidden" => t.hidden = list(v)?,
        "grad_clip" => t.grad_clip = positive(v)?,
        "reward_scale" => t.reward_scale = positive(v)?,
        "restrict_actor_updates" => t.restrict_actor_updates = parse_value(v)?,
        _ => return Err(format!("unknown key `{key}`")),
    }
    Ok(())
}

/// Parses a run configuration; keys not present keep their defaults.
///
/// Errors carry the offending line. Constraints spanning several keys are
/// reported against the last line of the file.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut seen = std::collections::HashSet::new();
    let mut last = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last = line;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (key, value) = body.split_once('=').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected `key = value`, got `{body}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line,
                msg: format!("key `{key}` set twice"),
            });
        }
        set(&mut cfg, key, value).map_err(|msg| Error::Parse {
            line,
            msg: format!("{key}: {msg}"),
        })?;
    }
    cfg.validate().map_err(|e| Error::Parse {
        line: last.max(1),
        msg: e.to_string(),
    })?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::marl::ShapleyMode;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse_config("").unwrap(), RunConfig::default());
        assert_eq!(parse_config("# nothing\n\n").unwrap(), RunConfig::default());
    }

    #[test]
    fn direct_mapping() {
        let c = parse_config("episodes = 2000\nseed = 1,2,3").unwrap();
        assert_eq!(c.episodes, 2000);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        let c = parse_config("shapley_mode = mc:16  # sampled\nhidden = 8, 8\nalgorithm = maddpg").unwrap();
        assert_eq!(c.trainer.shapley_mode, ShapleyMode::MonteCarlo { permutations: 16 });
        assert_eq!(c.trainer.hidden, vec![8, 8]);
        assert_eq!(c.algorithm, Algorithm::Maddpg);
    }

    #[test]
    fn gamma_bound_is_cited() {
        let err = parse_config("episodes = 3\ngamma = 1.5").unwrap_err();
        match err {
            Error::Parse { line, msg } => {
                assert_eq!(line, 2);
                assert!(msg.contains("[0, 1)"), "{msg}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_and_malformed_lines() {
        assert!(matches!(parse_config("colour = red"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_config("\nepisodes"), Err(Error::Parse { line: 2, .. })));
        assert!(matches!(parse_config("steps = many"), Err(Error::Parse { line: 1, .. })));
        assert!(parse_config("steps = 4\nsteps = 5").is_err());
        assert!(parse_config("seed = ").is_err());
        assert!(parse_config("window = 0").is_err());
    }

    #[test]
    fn cross_key_invariants() {
        // 4 vehicles at ratio 1/3 is not a whole number of CAVs.
        assert!(parse_config("cav_ratio = 0.3333").is_err());
        assert!(parse_config("n_vehicles = 6\ncav_ratio = 0.5").is_ok());
        assert!(parse_config("batch_size = 64\nbuffer_capacity = 10").is_err());
    }

    #[test]
    fn echo_round_trips() {
        let c = parse_config("episodes = 10\nseed = 4,5\nnoise_scale = 0.3\nn_vehicles = 6\ncav_ratio = 0.5").unwrap();
        let again = parse_config(&c.to_text()).unwrap();
        assert_eq!(again.to_text(), c.to_text());
        assert_eq!(again.trainer_config(), c.trainer_config());
        assert_eq!(again.env_config().unwrap(), c.env_config().unwrap());
    }

    #[test]
    fn cav_counts() {
        assert_eq!(cav_count(6, 0.5).unwrap(), 3);
        assert_eq!(cav_count(30, 1.0 / 6.0).unwrap(), 5);
        assert_eq!(cav_count(4, 0.0).unwrap(), 0);
        assert!(cav_count(4, 0.3).is_err());
        assert!(cav_count(4, 1.5).is_err());
    }
}
