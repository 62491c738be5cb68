use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Algorithm {
    Shapley,
    Maddpg,
    Independent,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Shapley => "shapley",
            Algorithm::Maddpg => "maddpg",
            Algorithm::Independent => "independent",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "shapley" => Ok(Algorithm::Shapley),
            "maddpg" => Ok(Algorithm::Maddpg),
            "independent" => Ok(Algorithm::Independent),
            _ => Err(Error::Config(format!(
                "unknown algorithm `{s}` (expected shapley, maddpg or independent)"
            ))),
        }
    }
}

/// How the per-agent Shapley credit is evaluated on the characteristic network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapleyMode {
    /// Sum over every coalition; falls back to `MonteCarlo` above `n_exact`.
    Exact,
    MonteCarlo { permutations: usize },
}

impl fmt::Display for ShapleyMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapleyMode::Exact => f.write_str("exact"),
            ShapleyMode::MonteCarlo { permutations } => write!(f, "mc:{permutations}"),
        }
    }
}

impl FromStr for ShapleyMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "exact" {
            return Ok(ShapleyMode::Exact);
        }
        let m = s
            .strip_prefix("mc:")
            .and_then(|m| m.parse::<usize>().ok())
            .filter(|m| *m > 0)
            .ok_or_else(|| {
                Error::Config(format!("unknown shapley mode `{s}` (expected exact or mc:<m>)"))
            })?;
        Ok(ShapleyMode::MonteCarlo { permutations: m })
    }
}

/// Which coalition is drawn each environment step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoalitionSampler {
    /// Uniform over the non-empty subsets of the agents.
    Uniform,
    /// Always the grand coalition.
    Grand,
}

impl fmt::Display for CoalitionSampler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CoalitionSampler::Uniform => "uniform",
            CoalitionSampler::Grand => "grand",
        })
    }
}

impl FromStr for CoalitionSampler {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(CoalitionSampler::Uniform),
            "grand" => Ok(CoalitionSampler::Grand),
            _ => Err(Error::Config(format!(
                "unknown coalition sampler `{s}` (expected uniform or grand)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainerConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Updates start once the buffer holds `warmup_batches * batch_size` samples.
    pub warmup_batches: usize,
    /// Environment steps between update rounds.
    pub update_every: usize,
    /// Initial standard deviation of the Gaussian logit noise.
    pub noise_scale: f64,
    /// Fraction of `noise_scale` kept after decay.
    pub noise_floor: f64,
    /// Episodes over which the noise decays linearly to its floor.
    pub noise_decay_episodes: u64,
    pub sampler: CoalitionSampler,
    pub shapley_mode: ShapleyMode,
    pub n_exact: usize,
    pub critic_lr: f64,
    pub actor_lr: f64,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    /// Multiplies rewards before they enter temporal-difference targets.
    pub reward_scale: f64,
    /// Only update actors on samples whose coalition contains them.
    pub restrict_actor_updates: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            gamma: 0.95,
            tau: 0.01,
            batch_size: 32,
            buffer_capacity: 100_000,
            warmup_batches: 10,
            update_every: 1,
            noise_scale: 1.0,
            noise_floor: 0.05,
            noise_decay_episodes: 1000,
            sampler: CoalitionSampler::Uniform,
            shapley_mode: ShapleyMode::Exact,
            n_exact: 8,
            critic_lr: 1e-3,
            actor_lr: 1e-4,
            hidden: vec![64, 64],
            grad_clip: 1.0,
            reward_scale: 1.0,
            restrict_actor_updates: false,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma must lie in [0, 1), got {}", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad(format!("tau must lie in (0, 1], got {}", self.tau));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.batch_size > self.buffer_capacity {
            return bad(format!(
                "batch_size ({}) exceeds buffer_capacity ({})",
                self.batch_size, self.buffer_capacity
            ));
        }
        if self.update_every == 0 {
            return bad("update_every must be at least 1".into());
        }
        if !(self.noise_scale.is_finite() && self.noise_scale >= 0.0) {
            return bad(format!("noise_scale must be nonnegative, got {}", self.noise_scale));
        }
        if !(0.0..=1.0).contains(&self.noise_floor) {
            return bad(format!("noise_floor must lie in [0, 1], got {}", self.noise_floor));
        }
        if self.n_exact > crate::game::MAX_AGENTS {
            return bad(format!(
                "n_exact ({}) exceeds the agent limit of {}",
                self.n_exact,
                crate::game::MAX_AGENTS
            ));
        }
        for (name, lr) in [("critic_lr", self.critic_lr), ("actor_lr", self.actor_lr)] {
            if !(lr.is_finite() && lr > 0.0) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        if !(self.reward_scale.is_finite() && self.reward_scale > 0.0) {
            return bad(format!("reward_scale must be positive, got {}", self.reward_scale));
        }
        Ok(())
    }

    pub fn warmup(&self) -> usize {
        self.warmup_batches * self.batch_size
    }

    /// Noise standard deviation for the given episode index.
    pub fn noise_at(&self, episode: u64) -> f64 {
        let floor = self.noise_floor;
        if self.noise_decay_episodes == 0 {
            return self.noise_scale * floor;
        }
        let frac = (episode as f64 / self.noise_decay_episodes as f64).min(1.0);
        self.noise_scale * (1.0 - (1.0 - floor) * frac)
    }
}
