use rand::seq::SliceRandom;
use rand::Rng;

use super::buffer::Transition;
use super::config::{Algorithm, ShapleyMode, TrainerConfig};
use super::policy::{softmax, softmax_backward, write_joint_input, write_view};
use crate::env::ACTION_DIM;
use crate::error::{invalid, Error, Result};
use crate::game::{shapley_weights, CoalitionMask, MAX_AGENTS};
use crate::nn::{clip_grad_norm, soft_update_in_place, Adam, AdamConfig, NetSpec, Network, Tape};

/// An online network with its target copy and optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct Learner {
    pub net: Network,
    pub target: Network,
    pub opt: Adam,
}

impl Learner {
    fn new<R: Rng + ?Sized>(spec: NetSpec, lr: f64, rng: &mut R) -> Self {
        let net = Network::new(spec, rng);
        let opt = Adam::new(net.params.len(), AdamConfig::with_lr(lr));
        Learner {
            target: net.clone(),
            net,
            opt,
        }
    }

    fn descend(&mut self, grad: &mut [f64], clip: f64) -> Result<()> {
        clip_grad_norm(grad, clip);
        self.opt.step(&mut self.net.params, grad)
    }
}

/// Actors and critics of one training run.
///
/// The Shapley learner keeps one characteristic network shared by every
/// agent and coalition-aware actors; the baselines keep one critic per agent
/// and actors on local observations.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentSet {
    pub algorithm: Algorithm,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub actors: Vec<Learner>,
    pub critics: Vec<Learner>,
}

impl AgentSet {
    pub fn new<R: Rng + ?Sized>(
        algorithm: Algorithm,
        n_agents: usize,
        obs_dim: usize,
        cfg: &TrainerConfig,
        rng: &mut R,
    ) -> Result<Self> {
        if n_agents == 0 || n_agents > MAX_AGENTS {
            return Err(invalid(format!(
                "agent count must lie in 1..={MAX_AGENTS}, got {n_agents}"
            )));
        }
        if obs_dim == 0 {
            return Err(invalid("observation dimension must be positive"));
        }
        let (actor_in, critic_in, n_critics) = dims(algorithm, n_agents, obs_dim);
        let actor_spec = NetSpec::mlp(actor_in, &cfg.hidden, ACTION_DIM)?;
        let critic_spec = NetSpec::mlp(critic_in, &cfg.hidden, 1)?;
        let actors = (0..n_agents)
            .map(|_| Learner::new(actor_spec.clone(), cfg.actor_lr, rng))
            .collect();
        let critics = (0..n_critics)
            .map(|_| Learner::new(critic_spec.clone(), cfg.critic_lr, rng))
            .collect();
        Ok(AgentSet {
            algorithm,
            n_agents,
            obs_dim,
            actors,
            critics,
        })
    }

    pub fn actor_input_dim(&self) -> usize {
        dims(self.algorithm, self.n_agents, self.obs_dim).0
    }

    pub fn critic_input_dim(&self) -> usize {
        dims(self.algorithm, self.n_agents, self.obs_dim).1
    }

    fn check_joint(&self, joint_obs: &[Vec<f64>], joint_action: Option<&[[f64; ACTION_DIM]]>) -> Result<()> {
        if joint_obs.len() != self.n_agents || joint_obs.iter().any(|o| o.len() != self.obs_dim) {
            return Err(invalid(format!(
                "expected {} observations of length {}",
                self.n_agents, self.obs_dim
            )));
        }
        if joint_action.is_some_and(|a| a.len() != self.n_agents) {
            return Err(invalid(format!("expected {} actions", self.n_agents)));
        }
        Ok(())
    }

    /// Input of `agent`'s actor. Coalition-aware actors see the joint
    /// observation masked to `coalition`; baseline actors see their own.
    pub fn actor_view(
        &self,
        agent: usize,
        joint_obs: &[Vec<f64>],
        coalition: CoalitionMask,
    ) -> Result<Vec<f64>> {
        self.check_joint(joint_obs, None)?;
        if agent >= self.n_agents {
            return Err(invalid(format!("agent {agent} out of range")));
        }
        let mut out = Vec::new();
        self.write_actor_view(&mut out, agent, joint_obs, coalition);
        Ok(out)
    }

    fn write_actor_view(
        &self,
        out: &mut Vec<f64>,
        agent: usize,
        joint_obs: &[Vec<f64>],
        coalition: CoalitionMask,
    ) {
        match self.algorithm {
            Algorithm::Shapley => write_view(out, joint_obs, coalition),
            _ => {
                out.clear();
                out.extend_from_slice(&joint_obs[agent]);
            }
        }
    }

    /// Baseline critic input for `agent`.
    fn write_q_input(
        &self,
        out: &mut Vec<f64>,
        agent: usize,
        joint_obs: &[Vec<f64>],
        joint_action: &[[f64; ACTION_DIM]],
    ) {
        match self.algorithm {
            Algorithm::Independent => {
                out.clear();
                out.extend_from_slice(&joint_obs[agent]);
                out.extend_from_slice(&joint_action[agent]);
            }
            _ => write_joint_input(
                out,
                joint_obs,
                joint_action,
                CoalitionMask::grand(self.n_agents),
                false,
            ),
        }
    }

    fn action_offset(&self, agent: usize) -> usize {
        match self.algorithm {
            Algorithm::Independent => self.obs_dim,
            _ => agent * (self.obs_dim + ACTION_DIM) + self.obs_dim,
        }
    }

    /// Worth `v(s, a, C)` predicted by the characteristic network; the empty
    /// coalition is worth zero without querying the network.
    pub fn characteristic_value(
        &self,
        joint_obs: &[Vec<f64>],
        joint_action: &[[f64; ACTION_DIM]],
        coalition: CoalitionMask,
    ) -> Result<f64> {
        self.require(Algorithm::Shapley)?;
        self.check_joint(joint_obs, Some(joint_action))?;
        if !coalition.is_subset_of(CoalitionMask::grand(self.n_agents)) {
            return Err(invalid(format!("coalition {coalition} out of range")));
        }
        Ok(CoalitionEval::new(self, joint_obs, joint_action).value(coalition))
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        for l in self.actors.iter_mut().chain(self.critics.iter_mut()) {
            soft_update_in_place(&mut l.target.params, &l.net.params, tau)?;
        }
        Ok(())
    }

    fn require(&self, algorithm: Algorithm) -> Result<()> {
        let ok = match algorithm {
            Algorithm::Shapley => self.algorithm == Algorithm::Shapley,
            _ => self.algorithm != Algorithm::Shapley,
        };
        if ok {
            Ok(())
        } else {
            Err(invalid(format!(
                "operation is not available for the {} learner",
                self.algorithm
            )))
        }
    }
}

fn dims(algorithm: Algorithm, n: usize, obs: usize) -> (usize, usize, usize) {
    match algorithm {
        Algorithm::Shapley => (n * obs + n, n * (obs + ACTION_DIM) + n, 1),
        Algorithm::Maddpg => (obs, n * (obs + ACTION_DIM), n),
        Algorithm::Independent => (obs, obs + ACTION_DIM, n),
    }
}

/// Evaluates the characteristic network on coalitions at a fixed `(s, a)`.
struct CoalitionEval<'a> {
    critic: &'a Network,
    joint_obs: &'a [Vec<f64>],
    joint_action: &'a [[f64; ACTION_DIM]],
    obs_dim: usize,
    input: Vec<f64>,
    grad_input: Vec<f64>,
    tape: Tape,
}

impl<'a> CoalitionEval<'a> {
    fn new(
        agents: &'a AgentSet,
        joint_obs: &'a [Vec<f64>],
        joint_action: &'a [[f64; ACTION_DIM]],
    ) -> Self {
        CoalitionEval {
            critic: &agents.critics[0].net,
            joint_obs,
            joint_action,
            obs_dim: agents.obs_dim,
            input: Vec::new(),
            grad_input: Vec::new(),
            tape: Tape::new(),
        }
    }

    fn value(&mut self, c: CoalitionMask) -> f64 {
        if c.is_empty() {
            return 0.0;
        }
        write_joint_input(&mut self.input, self.joint_obs, self.joint_action, c, true);
        self.critic.run(&self.input, &mut self.tape)[0]
    }

    /// `v(c)`, adding `weight * dv/da^agent` into `grad`.
    fn value_with_grad(
        &mut self,
        c: CoalitionMask,
        agent: usize,
        weight: f64,
        grad: &mut [f64; ACTION_DIM],
    ) -> f64 {
        let v = self.value(c);
        self.grad_input.clear();
        self.grad_input.resize(self.input.len(), 0.0);
        self.critic
            .backprop(&mut self.tape, &[1.0], None, Some(&mut self.grad_input));
        let off = agent * (self.obs_dim + ACTION_DIM) + self.obs_dim;
        for (g, d) in grad.iter_mut().zip(&self.grad_input[off..off + ACTION_DIM]) {
            *g += weight * d;
        }
        v
    }
}

fn check_estimator(n: usize, cfg: &TrainerConfig) -> Result<()> {
    if cfg.shapley_mode == ShapleyMode::Exact && n > cfg.n_exact {
        return Err(Error::Capacity {
            what: "agent count for exact Shapley credit (n_exact)",
            got: n,
            limit: cfg.n_exact,
        });
    }
    Ok(())
}

/// Shapley credit of `agent` and, when `grad` is given, its gradient with
/// respect to that agent's relaxed action.
///
/// Only terms whose coalition contains `agent` depend on its action, since
/// every other term sees that slot zeroed.
fn shapley_terms<R: Rng + ?Sized>(
    eval: &mut CoalitionEval<'_>,
    n: usize,
    agent: usize,
    mode: ShapleyMode,
    rng: &mut R,
    mut grad: Option<&mut [f64; ACTION_DIM]>,
) -> f64 {
    match mode {
        ShapleyMode::Exact => {
            let w = shapley_weights(n);
            let mut phi = 0.0;
            for d in CoalitionMask::all(n).filter(|d| !d.contains(agent)) {
                let wd = w[d.len()];
                let with = match grad.as_deref_mut() {
                    Some(g) => eval.value_with_grad(d.with(agent), agent, wd, g),
                    None => eval.value(d.with(agent)),
                };
                phi += wd * (with - eval.value(d));
            }
            phi
        }
        ShapleyMode::MonteCarlo { permutations } => {
            let scale = 1.0 / permutations as f64;
            let mut order: Vec<usize> = (0..n).collect();
            let mut phi = 0.0;
            for _ in 0..permutations {
                order.shuffle(rng);
                let pred = CoalitionMask::from_members(order.iter().copied().take_while(|j| *j != agent));
                let with = match grad.as_deref_mut() {
                    Some(g) => eval.value_with_grad(pred.with(agent), agent, scale, g),
                    None => eval.value(pred.with(agent)),
                };
                phi += scale * (with - eval.value(pred));
            }
            phi
        }
    }
}

/// Shapley credit `phi^agent` of the characteristic game induced by the
/// network at `(s, a)`. Sampled modes draw permutations from `rng`.
pub fn shapley_estimate<R: Rng + ?Sized>(
    agents: &AgentSet,
    joint_obs: &[Vec<f64>],
    joint_action: &[[f64; ACTION_DIM]],
    agent: usize,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<f64> {
    agents.require(Algorithm::Shapley)?;
    agents.check_joint(joint_obs, Some(joint_action))?;
    if agent >= agents.n_agents {
        return Err(invalid(format!("agent {agent} out of range")));
    }
    check_estimator(agents.n_agents, cfg)?;
    let mut eval = CoalitionEval::new(agents, joint_obs, joint_action);
    Ok(shapley_terms(
        &mut eval,
        agents.n_agents,
        agent,
        cfg.shapley_mode,
        rng,
        None,
    ))
}

fn check_batch(agents: &AgentSet, batch: &[&Transition]) -> Result<()> {
    if batch.is_empty() {
        return Err(invalid("empty batch"));
    }
    for t in batch {
        agents.check_joint(&t.joint_obs, Some(&t.joint_action))?;
        agents.check_joint(&t.next_joint_obs, None)?;
    }
    Ok(())
}

/// One descent step of the characteristic network on the temporal-difference
/// loss; returns the loss before the step.
pub fn critic_update(agents: &mut AgentSet, batch: &[&Transition], cfg: &TrainerConfig) -> Result<f64> {
    agents.require(Algorithm::Shapley)?;
    check_batch(agents, batch)?;
    let k = batch.len() as f64;
    let mut grad = vec![0.0; agents.critics[0].net.params.len()];
    let mut loss = 0.0;
    let mut input = Vec::new();
    let mut tape = Tape::new();
    let mut next_action = vec![[0.0; ACTION_DIM]; agents.n_agents];
    for t in batch {
        let c = t.coalition;
        if c.is_empty() {
            return Err(invalid("stored transition has an empty coalition"));
        }
        let r_c: f64 = c.members().map(|i| t.rewards[i]).sum();
        for (j, a) in next_action.iter_mut().enumerate() {
            *a = if c.contains(j) {
                agents.write_actor_view(&mut input, j, &t.next_joint_obs, c);
                softmax(agents.actors[j].target.run(&input, &mut tape))
            } else {
                [0.0; ACTION_DIM]
            };
        }
        write_joint_input(&mut input, &t.next_joint_obs, &next_action, c, true);
        let bootstrap = agents.critics[0].target.run(&input, &mut tape)[0];
        let y = cfg.reward_scale * r_c + cfg.gamma * bootstrap;
        write_joint_input(&mut input, &t.joint_obs, &t.joint_action, c, true);
        let critic = &agents.critics[0].net;
        let v = critic.run(&input, &mut tape)[0];
        loss += (y - v) * (y - v) / k;
        critic.backprop(&mut tape, &[2.0 * (v - y) / k], Some(&mut grad), None);
    }
    agents.critics[0].descend(&mut grad, cfg.grad_clip)?;
    Ok(loss)
}

/// Mean Shapley credit of `agent` over the batch with its action recomputed
/// by the current actor, and the gradient of that mean with respect to the
/// actor parameters. `None` when no sample qualifies.
pub fn actor_gradient<R: Rng + ?Sized>(
    agents: &AgentSet,
    batch: &[&Transition],
    agent: usize,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<Option<(f64, Vec<f64>)>> {
    agents.require(Algorithm::Shapley)?;
    check_batch(agents, batch)?;
    if agent >= agents.n_agents {
        return Err(invalid(format!("agent {agent} out of range")));
    }
    check_estimator(agents.n_agents, cfg)?;
    let actor = &agents.actors[agent].net;
    let mut grad = vec![0.0; actor.params.len()];
    let mut view = Vec::new();
    let mut tape = Tape::new();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut action_grads = Vec::with_capacity(batch.len());
    for t in batch {
        let member = t.coalition.contains(agent);
        if cfg.restrict_actor_updates && !member {
            continue;
        }
        let view_c = if member {
            t.coalition
        } else {
            CoalitionMask::singleton(agent)
        };
        agents.write_actor_view(&mut view, agent, &t.joint_obs, view_c);
        let p = softmax(actor.run(&view, &mut tape));
        let mut joint_action = t.joint_action.clone();
        joint_action[agent] = p;
        let mut eval = CoalitionEval::new(agents, &t.joint_obs, &joint_action);
        let mut g_a = [0.0; ACTION_DIM];
        total += shapley_terms(
            &mut eval,
            agents.n_agents,
            agent,
            cfg.shapley_mode,
            rng,
            Some(&mut g_a),
        );
        count += 1;
        action_grads.push((view_c, softmax_backward(&p, &g_a), t));
    }
    if count == 0 {
        return Ok(None);
    }
    let scale = 1.0 / count as f64;
    for (view_c, dz, t) in action_grads {
        agents.write_actor_view(&mut view, agent, &t.joint_obs, view_c);
        actor.run(&view, &mut tape);
        let up: Vec<f64> = dz.iter().map(|d| d * scale).collect();
        actor.backprop(&mut tape, &up, Some(&mut grad), None);
    }
    Ok(Some((total * scale, grad)))
}

/// One ascent step of `agent`'s actor on its mean Shapley credit; returns
/// the objective before the step, or `None` if no sample qualified.
pub fn actor_update<R: Rng + ?Sized>(
    agents: &mut AgentSet,
    batch: &[&Transition],
    agent: usize,
    cfg: &TrainerConfig,
    rng: &mut R,
) -> Result<Option<f64>> {
    let Some((objective, mut grad)) = actor_gradient(agents, batch, agent, cfg, rng)? else {
        return Ok(None);
    };
    for g in &mut grad {
        *g = -*g;
    }
    agents.actors[agent].descend(&mut grad, cfg.grad_clip)?;
    Ok(Some(objective))
}

/// Per-agent losses from one baseline update round.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineLosses {
    pub critic_loss: Vec<f64>,
    pub actor_objective: Vec<f64>,
}

/// Temporal-difference step of a baseline critic `Q^agent`; next actions
/// come from the online actors on their own next observations.
pub fn baseline_critic_update(
    agents: &mut AgentSet,
    batch: &[&Transition],
    agent: usize,
    cfg: &TrainerConfig,
) -> Result<f64> {
    agents.require(Algorithm::Maddpg)?;
    check_batch(agents, batch)?;
    let k = batch.len() as f64;
    let mut grad = vec![0.0; agents.critics[agent].net.params.len()];
    let mut loss = 0.0;
    let mut input = Vec::new();
    let mut tape = Tape::new();
    let mut next_action = vec![[0.0; ACTION_DIM]; agents.n_agents];
    let needs_all = agents.algorithm == Algorithm::Maddpg;
    for t in batch {
        for (j, a) in next_action.iter_mut().enumerate() {
            if needs_all || j == agent {
                *a = softmax(agents.actors[j].net.run(&t.next_joint_obs[j], &mut tape));
            }
        }
        agents.write_q_input(&mut input, agent, &t.next_joint_obs, &next_action);
        let bootstrap = agents.critics[agent].target.run(&input, &mut tape)[0];
        let y = cfg.reward_scale * t.rewards[agent] + cfg.gamma * bootstrap;
        agents.write_q_input(&mut input, agent, &t.joint_obs, &t.joint_action);
        let q_net = &agents.critics[agent].net;
        let q = q_net.run(&input, &mut tape)[0];
        loss += (y - q) * (y - q) / k;
        q_net.backprop(&mut tape, &[2.0 * (q - y) / k], Some(&mut grad), None);
    }
    agents.critics[agent].descend(&mut grad, cfg.grad_clip)?;
    Ok(loss)
}

/// Mean `Q^agent` with the agent's action recomputed by its actor, and the
/// gradient of that mean with respect to the actor parameters.
pub fn baseline_actor_gradient(
    agents: &AgentSet,
    batch: &[&Transition],
    agent: usize,
) -> Result<(f64, Vec<f64>)> {
    agents.require(Algorithm::Maddpg)?;
    check_batch(agents, batch)?;
    let actor = &agents.actors[agent].net;
    let q_net = &agents.critics[agent].net;
    let k = batch.len() as f64;
    let mut grad = vec![0.0; actor.params.len()];
    let mut input = Vec::new();
    let mut grad_input = Vec::new();
    let mut actor_tape = Tape::new();
    let mut q_tape = Tape::new();
    let off = agents.action_offset(agent);
    let mut total = 0.0;
    for t in batch {
        let p = softmax(actor.run(&t.joint_obs[agent], &mut actor_tape));
        let mut joint_action = t.joint_action.clone();
        joint_action[agent] = p;
        agents.write_q_input(&mut input, agent, &t.joint_obs, &joint_action);
        total += q_net.run(&input, &mut q_tape)[0];
        grad_input.clear();
        grad_input.resize(input.len(), 0.0);
        q_net.backprop(&mut q_tape, &[1.0], None, Some(&mut grad_input));
        let dz = softmax_backward(&p, &grad_input[off..off + ACTION_DIM]);
        let up: Vec<f64> = dz.iter().map(|d| d / k).collect();
        actor.backprop(&mut actor_tape, &up, Some(&mut grad), None);
    }
    Ok((total / k, grad))
}

/// Critic then actor step for every baseline agent in index order.
pub fn baseline_update(
    agents: &mut AgentSet,
    batch: &[&Transition],
    cfg: &TrainerConfig,
) -> Result<BaselineLosses> {
    agents.require(Algorithm::Maddpg)?;
    let mut critic_loss = Vec::with_capacity(agents.n_agents);
    let mut actor_objective = Vec::with_capacity(agents.n_agents);
    for i in 0..agents.n_agents {
        critic_loss.push(baseline_critic_update(agents, batch, i, cfg)?);
        let (objective, mut grad) = baseline_actor_gradient(agents, batch, i)?;
        for g in &mut grad {
            *g = -*g;
        }
        agents.actors[i].descend(&mut grad, cfg.grad_clip)?;
        actor_objective.push(objective);
    }
    Ok(BaselineLosses {
        critic_loss,
        actor_objective,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::game::{shapley_exact, CharacteristicTable};
    use crate::marl::ShapleyMode;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const OBS: usize = 3;

    fn cfg() -> TrainerConfig {
        TrainerConfig {
            hidden: vec![6, 5],
            ..Default::default()
        }
    }

    fn random_joint(n: usize, rng: &mut ChaCha8Rng) -> (Vec<Vec<f64>>, Vec<[f64; ACTION_DIM]>) {
        let obs = (0..n)
            .map(|_| (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let act = (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..ACTION_DIM).map(|_| rng.random_range(-2.0..2.0)).collect();
                softmax(&z)
            })
            .collect();
        (obs, act)
    }

    fn transition(n: usize, coalition: CoalitionMask, rng: &mut ChaCha8Rng) -> Transition {
        let (joint_obs, joint_action) = random_joint(n, rng);
        let (next_joint_obs, _) = random_joint(n, rng);
        Transition {
            joint_obs,
            joint_action,
            coalition,
            rewards: (0..n).map(|_| rng.random_range(0.0..5.0)).collect(),
            next_joint_obs,
        }
    }

    fn induced_table(agents: &AgentSet, obs: &[Vec<f64>], act: &[[f64; ACTION_DIM]]) -> CharacteristicTable {
        let values = CoalitionMask::all(agents.n_agents)
            .map(|c| agents.characteristic_value(obs, act, c).unwrap())
            .collect();
        CharacteristicTable::signed(agents.n_agents, values).unwrap()
    }

    #[test]
    fn constant_network_splits_evenly() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let n = 4;
        let mut agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
        let critic = &mut agents.critics[0].net;
        critic.params.fill(0.0);
        let last = critic.params.len() - 1;
        critic.params[last] = 2.5;
        let (obs, act) = random_joint(n, &mut rng);
        for i in 0..n {
            let phi = shapley_estimate(&agents, &obs, &act, i, &cfg(), &mut rng).unwrap();
            assert!((phi - 2.5 / n as f64).abs() < 1e-12);
        }
        let table = induced_table(&agents, &obs, &act);
        let oracle = shapley_exact(&table).unwrap();
        assert!(oracle.iter().all(|p| (p - 2.5 / n as f64).abs() < 1e-12));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn matches_game_solver_on_induced_table(n in 1usize..6, seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
            let (obs, act) = random_joint(n, &mut rng);
            let oracle = shapley_exact(&induced_table(&agents, &obs, &act)).unwrap();
            let mut sum = 0.0;
            for i in 0..n {
                let phi = shapley_estimate(&agents, &obs, &act, i, &cfg(), &mut rng).unwrap();
                prop_assert!((phi - oracle[i]).abs() <= 1e-9);
                sum += phi;
            }
            let grand = agents.characteristic_value(&obs, &act, CoalitionMask::grand(n)).unwrap();
            prop_assert!((sum - grand).abs() <= 1e-9);
        }

        #[test]
        fn dummy_agent_gets_nothing(n in 2usize..6, j in 0usize..6, seed in any::<u64>()) {
            let j = j % n;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
            let critic = &mut agents.critics[0].net;
            let spec = critic.spec.clone();
            let fan_in = spec.input_dim();
            let mut off = 0;
            for w in spec.layer_sizes().windows(2) {
                let (fi, fo) = (w[0], w[1]);
                // Zero biases so an all-masked input maps to 0.
                critic.params[off + fi * fo..off + fi * fo + fo].fill(0.0);
                off += fi * fo + fo;
            }
            let slot = j * (OBS + ACTION_DIM);
            let dummy_cols: Vec<usize> = (slot..slot + OBS + ACTION_DIM)
                .chain([n * (OBS + ACTION_DIM) + j])
                .collect();
            for o in 0..spec.layer_sizes()[1] {
                for c in &dummy_cols {
                    critic.params[o * fan_in + c] = 0.0;
                }
            }
            let (obs, act) = random_joint(n, &mut rng);
            let phi = shapley_estimate(&agents, &obs, &act, j, &cfg(), &mut rng).unwrap();
            prop_assert!(phi.abs() <= 1e-9, "phi = {}", phi);
        }
    }

    #[test]
    fn sampled_credit_approaches_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 5;
        let agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
        let (obs, act) = random_joint(n, &mut rng);
        let mc = TrainerConfig {
            shapley_mode: ShapleyMode::MonteCarlo { permutations: 20_000 },
            ..cfg()
        };
        let scale = agents
            .characteristic_value(&obs, &act, CoalitionMask::grand(n))
            .unwrap()
            .abs()
            .max(1.0);
        for i in 0..n {
            let exact = shapley_estimate(&agents, &obs, &act, i, &cfg(), &mut rng).unwrap();
            let approx = shapley_estimate(&agents, &obs, &act, i, &mc, &mut rng).unwrap();
            assert!((exact - approx).abs() <= 0.02 * scale, "{exact} vs {approx}");
        }
    }

    #[test]
    fn exact_mode_respects_capacity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let agents = AgentSet::new(Algorithm::Shapley, 3, OBS, &cfg(), &mut rng).unwrap();
        let (obs, act) = random_joint(3, &mut rng);
        let small = TrainerConfig { n_exact: 2, ..cfg() };
        assert!(matches!(
            shapley_estimate(&agents, &obs, &act, 0, &small, &mut rng),
            Err(Error::Capacity { limit: 2, .. })
        ));
    }

    /// Mean credit with the agent's action recomputed from perturbed actor parameters.
    fn mean_credit(agents: &AgentSet, batch: &[&Transition], agent: usize) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let total: f64 = batch
            .iter()
            .map(|t| {
                let view_c = if t.coalition.contains(agent) {
                    t.coalition
                } else {
                    CoalitionMask::singleton(agent)
                };
                let view = agents.actor_view(agent, &t.joint_obs, view_c).unwrap();
                let logits = crate::nn::forward(
                    &agents.actors[agent].net.spec,
                    &agents.actors[agent].net.params,
                    &view,
                )
                .unwrap();
                let mut act = t.joint_action.clone();
                act[agent] = softmax(&logits);
                shapley_estimate(agents, &t.joint_obs, &act, agent, &cfg(), &mut rng).unwrap()
            })
            .sum();
        total / batch.len() as f64
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let n = 2;
        let agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
        let owned: Vec<Transition> = [0b01, 0b11, 0b10, 0b11]
            .iter()
            .map(|c| transition(n, CoalitionMask::from_bits(*c), &mut rng))
            .collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        for agent in 0..n {
            let (obj, grad) = actor_gradient(&agents, &batch, agent, &cfg(), &mut rng)
                .unwrap()
                .unwrap();
            assert!((obj - mean_credit(&agents, &batch, agent)).abs() < 1e-12);
            let h = 1e-5;
            let mut worst: f64 = 0.0;
            for k in 0..grad.len() {
                let mut plus = agents.clone();
                plus.actors[agent].net.params[k] += h;
                let mut minus = agents.clone();
                minus.actors[agent].net.params[k] -= h;
                let fd = (mean_credit(&plus, &batch, agent) - mean_credit(&minus, &batch, agent))
                    / (2.0 * h);
                let err = (fd - grad[k]).abs();
                let rel = err / fd.abs().max(grad[k].abs());
                if err > 1e-9 {
                    worst = worst.max(rel);
                }
            }
            assert!(worst <= 1e-3, "agent {agent}: worst relative error {worst}");
        }
    }

    #[test]
    fn action_blind_critic_leaves_actor_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 3;
        let mut agents = AgentSet::new(Algorithm::Shapley, n, OBS, &cfg(), &mut rng).unwrap();
        let fan_in = agents.critic_input_dim();
        let width = cfg().hidden[0];
        for o in 0..width {
            for j in 0..n {
                let off = j * (OBS + ACTION_DIM) + OBS;
                agents.critics[0].net.params[o * fan_in + off..o * fan_in + off + ACTION_DIM]
                    .fill(0.0);
            }
        }
        let owned: Vec<Transition> = (0..4)
            .map(|_| transition(n, CoalitionMask::grand(n), &mut rng))
            .collect();
        let batch: Vec<&Transition> = owned.iter().collect();
        let before = agents.actors[1].net.params.clone();
        let (_, grad) = actor_gradient(&agents, &batch, 1, &cfg(), &mut rng).unwrap().unwrap();
        assert!(grad.iter().all(|g| *g == 0.0));
        actor_update(&mut agents, &batch, 1, &cfg(), &mut rng).unwrap();
        assert_eq!(agents.actors[1].net.params, before);
    }

    #[test]
    fn repeated_samples_give_the_same_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let agents = AgentSet::new(Algorithm::Shapley, 3, OBS, &cfg(), &mut rng).unwrap();
        let t = transition(3, CoalitionMask::from_bits(0b101), &mut rng);
        let one = actor_gradient(&agents, &[&t], 0, &cfg(), &mut rng).unwrap().unwrap();
        let four = actor_gradient(&agents, &[&t; 4], 0, &cfg(), &mut rng).unwrap().unwrap();
        assert!((one.0 - four.0).abs() < 1e-12);
        for (a, b) in one.1.iter().zip(&four.1) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn restricted_updates_skip_outsiders() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let agents = AgentSet::new(Algorithm::Shapley, 3, OBS, &cfg(), &mut rng).unwrap();
        let t = transition(3, CoalitionMask::from_bits(0b101), &mut rng);
        let restricted = TrainerConfig {
            restrict_actor_updates: true,
            ..cfg()
        };
        assert!(actor_gradient(&agents, &[&t], 1, &restricted, &mut rng).unwrap().is_none());
        assert!(actor_gradient(&agents, &[&t], 1, &cfg(), &mut rng).unwrap().is_some());
    }

    #[test]
    fn zero_networks_fit_zero_rewards_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut agents = AgentSet::new(Algorithm::Shapley, 2, OBS, &cfg(), &mut rng).unwrap();
        for c in &mut agents.critics {
            c.net.params.fill(0.0);
            c.target.params.fill(0.0);
        }
        let mut t = transition(2, CoalitionMask::grand(2), &mut rng);
        t.rewards = vec![0.0, 0.0];
        let loss = critic_update(&mut agents, &[&t], &cfg()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(agents.critics[0].net.params.iter().all(|p| *p == 0.0));
    }

    #[test]
    fn single_sample_loss_matches_hand_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tiny = TrainerConfig {
            hidden: vec![2],
            gamma: 0.5,
            reward_scale: 1.0,
            ..Default::default()
        };
        let mut agents = AgentSet::new(Algorithm::Shapley, 1, 1, &tiny, &mut rng).unwrap();
        // Critic input is [obs, 4 action entries, mask bit]; hidden width 2.
        let critic: Vec<f64> = vec![
            0.1, 0.2, 0.0, 0.0, 0.0, 0.3, // hidden unit 0
            -0.2, 0.0, 0.1, 0.0, 0.0, 0.1, // hidden unit 1
            0.05, -0.05, // hidden biases
            0.7, -0.4, // output weights
            0.2, // output bias
        ];
        agents.critics[0].net.params.copy_from_slice(&critic);
        agents.critics[0].target.params.copy_from_slice(&critic);
        let t = Transition {
            joint_obs: vec![vec![1.0]],
            joint_action: vec![[0.5, 0.5, 0.0, 0.0]],
            coalition: CoalitionMask::grand(1),
            rewards: vec![2.0],
            next_joint_obs: vec![vec![0.0]],
        };
        let p_next = softmax(agents.actors[0].target.run(&[0.0, 1.0], &mut Tape::new()));
        let v = |x: [f64; 6]| {
            let h0 = (0.1 * x[0] + 0.2 * x[1] + 0.3 * x[5] + 0.05).tanh();
            let h1 = (-0.2 * x[0] + 0.1 * x[2] + 0.1 * x[5] - 0.05).tanh();
            0.7 * h0 - 0.4 * h1 + 0.2
        };
        let y = 2.0 + 0.5 * v([0.0, p_next[0], p_next[1], p_next[2], p_next[3], 1.0]);
        let pred = v([1.0, 0.5, 0.5, 0.0, 0.0, 1.0]);
        let loss = critic_update(&mut agents, &[&t], &tiny).unwrap();
        assert!((loss - (y - pred).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn no_discount_targets_the_coalition_reward() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let myopic = TrainerConfig { gamma: 0.0, ..cfg() };
        let mut agents = AgentSet::new(Algorithm::Shapley, 3, OBS, &myopic, &mut rng).unwrap();
        let t = transition(3, CoalitionMask::from_bits(0b011), &mut rng);
        let v = agents
            .characteristic_value(&t.joint_obs, &t.joint_action, t.coalition)
            .unwrap();
        let r_c = t.rewards[0] + t.rewards[1];
        let loss = critic_update(&mut agents, &[&t], &myopic).unwrap();
        assert!((loss - (r_c - v).powi(2)).abs() < 1e-12);
    }

    #[test]
    fn baseline_targets_and_zero_losses() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let myopic = TrainerConfig { gamma: 0.0, ..cfg() };
        for alg in [Algorithm::Maddpg, Algorithm::Independent] {
            let mut agents = AgentSet::new(alg, 2, OBS, &myopic, &mut rng).unwrap();
            let t = transition(2, CoalitionMask::grand(2), &mut rng);
            let mut input = Vec::new();
            agents.write_q_input(&mut input, 1, &t.joint_obs, &t.joint_action);
            let q = crate::nn::forward(&agents.critics[1].net.spec, &agents.critics[1].net.params, &input)
                .unwrap()[0];
            let loss = baseline_critic_update(&mut agents, &[&t], 1, &myopic).unwrap();
            assert!((loss - (t.rewards[1] - q).powi(2)).abs() < 1e-12);

            let mut zero = AgentSet::new(alg, 2, OBS, &cfg(), &mut rng).unwrap();
            for c in &mut zero.critics {
                c.net.params.fill(0.0);
                c.target.params.fill(0.0);
            }
            let mut t = transition(2, CoalitionMask::grand(2), &mut rng);
            t.rewards = vec![0.0; 2];
            let l = baseline_update(&mut zero, &[&t], &cfg()).unwrap();
            assert_eq!(l.critic_loss, vec![0.0, 0.0]);
            assert_eq!(l.actor_objective, vec![0.0, 0.0]);
        }
    }

    #[test]
    fn baseline_actor_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for alg in [Algorithm::Maddpg, Algorithm::Independent] {
            let agents = AgentSet::new(alg, 2, OBS, &cfg(), &mut rng).unwrap();
            let owned: Vec<Transition> = (0..3)
                .map(|_| transition(2, CoalitionMask::grand(2), &mut rng))
                .collect();
            let batch: Vec<&Transition> = owned.iter().collect();
            let (_, grad) = baseline_actor_gradient(&agents, &batch, 0).unwrap();
            let h = 1e-5;
            for k in (0..grad.len()).step_by(3) {
                let mut plus = agents.clone();
                plus.actors[0].net.params[k] += h;
                let mut minus = agents.clone();
                minus.actors[0].net.params[k] -= h;
                let fd = (baseline_actor_gradient(&plus, &batch, 0).unwrap().0
                    - baseline_actor_gradient(&minus, &batch, 0).unwrap().0)
                    / (2.0 * h);
                assert!((fd - grad[k]).abs() <= 1e-6 + 1e-4 * fd.abs(), "{alg}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn learner_kinds_are_checked() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut b = AgentSet::new(Algorithm::Maddpg, 2, OBS, &cfg(), &mut rng).unwrap();
        let t = transition(2, CoalitionMask::grand(2), &mut rng);
        assert!(critic_update(&mut b, &[&t], &cfg()).is_err());
        let mut s = AgentSet::new(Algorithm::Shapley, 2, OBS, &cfg(), &mut rng).unwrap();
        assert!(baseline_update(&mut s, &[&t], &cfg()).is_err());
        assert!(critic_update(&mut s, &[], &cfg()).is_err());
    }
}
