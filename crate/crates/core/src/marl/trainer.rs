use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::agents::{actor_update, baseline_update, critic_update, AgentSet};
use super::buffer::{ReplayBuffer, Transition};
use super::config::{Algorithm, CoalitionSampler, TrainerConfig};
use super::policy::{sample_coalition, select_action};
use crate::env::{
    comfort_score, observe, reset, scripted_driver_action, step, EnvConfig, VehicleAction,
    WorldState, OBS_DIM,
};
use crate::error::{invalid, Result};
use crate::game::CoalitionMask;

/// What one environment step looked like, handed to episode observers.
#[derive(Clone, Copy, Debug)]
pub struct StepRecord<'a> {
    pub coalition: CoalitionMask,
    pub state: &'a WorldState,
    pub actions: &'a [VehicleAction],
    pub rewards: &'a [f64],
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeMetrics {
    pub steps: usize,
    /// Sum over steps and all vehicles of the individual rewards.
    pub system_reward: f64,
    /// Per learning agent, summed over steps.
    pub agent_rewards: Vec<f64>,
    pub mean_velocity: f64,
    pub mean_comfort: f64,
    pub updates: usize,
    /// Mean over the episode's update rounds, `None` without updates.
    pub critic_loss: Option<f64>,
    pub actor_objective: Option<f64>,
}

/// Result of a request to run one update round.
#[derive(Clone, Debug, PartialEq)]
pub enum UpdateOutcome {
    /// Not enough stored transitions yet; nothing changed.
    NotReady,
    Updated {
        critic_loss: f64,
        actor_objective: Option<f64>,
    },
}

/// Owns everything a training run mutates: networks, optimizers, replay and
/// the random stream.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainerConfig,
    pub agents: AgentSet,
    pub buffer: ReplayBuffer,
    pub rng: ChaCha8Rng,
    pub episodes_done: u64,
    pub total_steps: u64,
}

impl Trainer {
    /// Learning agents are the CAVs of `env`.
    pub fn new(algorithm: Algorithm, env: &EnvConfig, config: TrainerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        env.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let agents = AgentSet::new(algorithm, env.n_cavs, OBS_DIM, &config, &mut rng)?;
        if algorithm == Algorithm::Shapley {
            // Reject an exact estimator that cannot run before any training happens.
            if config.shapley_mode == super::ShapleyMode::Exact && env.n_cavs > config.n_exact {
                return Err(crate::Error::Capacity {
                    what: "agent count for exact Shapley credit (n_exact)",
                    got: env.n_cavs,
                    limit: config.n_exact,
                });
            }
        }
        let buffer = ReplayBuffer::new(config.buffer_capacity)?;
        Ok(Trainer {
            config,
            agents,
            buffer,
            rng,
            episodes_done: 0,
            total_steps: 0,
        })
    }

    pub fn algorithm(&self) -> Algorithm {
        self.agents.algorithm
    }

    fn check_env(&self, env: &EnvConfig) -> Result<()> {
        if env.n_cavs != self.agents.n_agents {
            return Err(invalid(format!(
                "trainer has {} agents but the environment has {} CAVs",
                self.agents.n_agents, env.n_cavs
            )));
        }
        Ok(())
    }

    /// Runs one update round if the buffer is warm.
    pub fn update(&mut self) -> Result<UpdateOutcome> {
        if self.buffer.len() < self.config.warmup().max(self.config.batch_size) {
            return Ok(UpdateOutcome::NotReady);
        }
        let idx = self.buffer.sample_indices(self.config.batch_size, &mut self.rng)?;
        let batch: Vec<&Transition> = idx.iter().map(|i| &self.buffer.slots()[*i]).collect();
        let outcome = match self.agents.algorithm {
            Algorithm::Shapley => {
                let critic_loss = critic_update(&mut self.agents, &batch, &self.config)?;
                let mut sum = 0.0;
                let mut count = 0;
                for i in 0..self.agents.n_agents {
                    if let Some(obj) =
                        actor_update(&mut self.agents, &batch, i, &self.config, &mut self.rng)?
                    {
                        sum += obj;
                        count += 1;
                    }
                }
                UpdateOutcome::Updated {
                    critic_loss,
                    actor_objective: (count > 0).then(|| sum / count as f64),
                }
            }
            _ => {
                let l = baseline_update(&mut self.agents, &batch, &self.config)?;
                let n = l.critic_loss.len() as f64;
                UpdateOutcome::Updated {
                    critic_loss: l.critic_loss.iter().sum::<f64>() / n,
                    actor_objective: Some(l.actor_objective.iter().sum::<f64>() / n),
                }
            }
        };
        self.agents.soft_update_targets(self.config.tau)?;
        Ok(outcome)
    }

    /// One training episode from `reset(env, env_seed)` lasting `steps` steps.
    pub fn train_episode(
        &mut self,
        env: &EnvConfig,
        steps: usize,
        env_seed: u64,
        mut observer: Option<&mut dyn FnMut(&StepRecord<'_>)>,
    ) -> Result<EpisodeMetrics> {
        self.check_env(env)?;
        let noise = self.config.noise_at(self.episodes_done);
        let n = self.agents.n_agents;
        let mut state = reset(env, env_seed)?;
        let mut acc = Accumulator::new(n);
        let mut critic_sum = 0.0;
        let mut actor_sum = 0.0;
        let mut actor_rounds = 0usize;
        let mut updates = 0usize;
        let mut view = Vec::new();
        for _ in 0..steps {
            let joint_obs: Vec<Vec<f64>> = (0..n).map(|i| observe(&state, i, env)).collect();
            let coalition = match (self.agents.algorithm, self.config.sampler) {
                (Algorithm::Shapley, CoalitionSampler::Uniform) => sample_coalition(n, &mut self.rng)?,
                _ => CoalitionMask::grand(n),
            };
            let mut actions = Vec::with_capacity(env.n_vehicles);
            for i in 0..n {
                let view_c = if coalition.contains(i) {
                    coalition
                } else {
                    CoalitionMask::singleton(i)
                };
                view.clear();
                view.extend(self.agents.actor_view(i, &joint_obs, view_c)?);
                actions.push(select_action(&self.agents.actors[i].net, &view, noise, &mut self.rng)?);
            }
            for i in n..env.n_vehicles {
                actions.push(scripted_driver_action(&state, i, env)?);
            }
            let out = step(&state, &actions, env)?;
            acc.record(&out.state, &actions, &out.rewards, env);
            if let Some(obs) = observer.as_deref_mut() {
                obs(&StepRecord {
                    coalition,
                    state: &out.state,
                    actions: &actions,
                    rewards: &out.rewards,
                });
            }
            let next_joint_obs = (0..n).map(|i| observe(&out.state, i, env)).collect();
            self.buffer.push(Transition {
                joint_obs,
                joint_action: actions[..n].iter().map(|a| a.relaxed).collect(),
                coalition,
                rewards: out.rewards[..n].to_vec(),
                next_joint_obs,
            });
            self.total_steps += 1;
            state = out.state;
            if self.total_steps.is_multiple_of(self.config.update_every as u64) {
                if let UpdateOutcome::Updated {
                    critic_loss,
                    actor_objective,
                } = self.update()?
                {
                    updates += 1;
                    critic_sum += critic_loss;
                    if let Some(a) = actor_objective {
                        actor_sum += a;
                        actor_rounds += 1;
                    }
                }
            }
        }
        self.episodes_done += 1;
        Ok(acc.finish(
            updates,
            (updates > 0).then(|| critic_sum / updates as f64),
            (actor_rounds > 0).then(|| actor_sum / actor_rounds as f64),
        ))
    }

    /// Greedy rollout of the frozen policies on the grand coalition.
    pub fn evaluate(
        &self,
        env: &EnvConfig,
        steps: usize,
        env_seed: u64,
        observer: Option<&mut dyn FnMut(&StepRecord<'_>)>,
    ) -> Result<EpisodeMetrics> {
        self.check_env(env)?;
        rollout(Some(&self.agents), env, steps, env_seed, observer)
    }
}

/// Greedy rollout where CAVs follow `agents` (when given) and every other
/// vehicle is scripted. Without agents all vehicles must be scripted.
pub fn rollout(
    agents: Option<&AgentSet>,
    env: &EnvConfig,
    steps: usize,
    env_seed: u64,
    mut observer: Option<&mut dyn FnMut(&StepRecord<'_>)>,
) -> Result<EpisodeMetrics> {
    let n = agents.map_or(0, |a| a.n_agents);
    if n != env.n_cavs {
        return Err(invalid(format!(
            "{n} policies for {} CAVs",
            env.n_cavs
        )));
    }
    // Zero noise never touches the stream.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let grand = CoalitionMask::grand(n);
    let mut state = reset(env, env_seed)?;
    let mut acc = Accumulator::new(n);
    for _ in 0..steps {
        let mut actions = Vec::with_capacity(env.n_vehicles);
        if let Some(agents) = agents {
            let joint_obs: Vec<Vec<f64>> = (0..n).map(|i| observe(&state, i, env)).collect();
            for i in 0..n {
                let view = agents.actor_view(i, &joint_obs, grand)?;
                actions.push(select_action(&agents.actors[i].net, &view, 0.0, &mut rng)?);
            }
        }
        for i in n..env.n_vehicles {
            actions.push(scripted_driver_action(&state, i, env)?);
        }
        let out = step(&state, &actions, env)?;
        acc.record(&out.state, &actions, &out.rewards, env);
        if let Some(obs) = observer.as_deref_mut() {
            obs(&StepRecord {
                coalition: grand,
                state: &out.state,
                actions: &actions,
                rewards: &out.rewards,
            });
        }
        state = out.state;
    }
    Ok(acc.finish(0, None, None))
}

struct Accumulator {
    steps: usize,
    system_reward: f64,
    agent_rewards: Vec<f64>,
    velocity: f64,
    comfort: f64,
    samples: usize,
}

impl Accumulator {
    fn new(n_agents: usize) -> Self {
        Accumulator {
            steps: 0,
            system_reward: 0.0,
            agent_rewards: vec![0.0; n_agents],
            velocity: 0.0,
            comfort: 0.0,
            samples: 0,
        }
    }

    fn record(&mut self, state: &WorldState, actions: &[VehicleAction], rewards: &[f64], env: &EnvConfig) {
        self.steps += 1;
        self.system_reward += rewards.iter().sum::<f64>();
        for (a, r) in self.agent_rewards.iter_mut().zip(rewards) {
            *a += r;
        }
        for (v, a) in state.vehicles.iter().zip(actions) {
            self.velocity += v.velocity;
            self.comfort += f64::from(comfort_score(v.acceleration, a.discrete, env));
            self.samples += 1;
        }
    }

    fn finish(self, updates: usize, critic_loss: Option<f64>, actor_objective: Option<f64>) -> EpisodeMetrics {
        let per = |x: f64| if self.samples == 0 { 0.0 } else { x / self.samples as f64 };
        EpisodeMetrics {
            steps: self.steps,
            system_reward: self.system_reward,
            agent_rewards: self.agent_rewards,
            mean_velocity: per(self.velocity),
            mean_comfort: per(self.comfort),
            updates,
            critic_loss,
            actor_objective,
        }
    }
}
