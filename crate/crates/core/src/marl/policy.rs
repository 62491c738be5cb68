use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{VehicleAction, ACTION_DIM};
use crate::error::{invalid, Result};
use crate::game::{CoalitionMask, MAX_AGENTS};
use crate::nn::{Network, Tape};

/// Uniform draw over the `2^n - 1` non-empty coalitions of `n` agents.
pub fn sample_coalition<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<CoalitionMask> {
    if n == 0 || n > MAX_AGENTS {
        return Err(invalid(format!(
            "coalitions need between 1 and {MAX_AGENTS} agents, got {n}"
        )));
    }
    Ok(CoalitionMask::from_bits(rng.random_range(1..(1u32 << n))))
}

fn check_layout(joint_obs: &[Vec<f64>], coalition: CoalitionMask) -> Result<usize> {
    let n = joint_obs.len();
    if n == 0 || n > MAX_AGENTS {
        return Err(invalid(format!("joint observation covers {n} agents")));
    }
    let dim = joint_obs[0].len();
    if joint_obs.iter().any(|o| o.len() != dim) {
        return Err(invalid("agent observations differ in length"));
    }
    if !coalition.is_subset_of(CoalitionMask::grand(n)) {
        return Err(invalid(format!(
            "coalition {coalition} is not a subset of the {n} agents"
        )));
    }
    Ok(dim)
}

/// Per-agent `[obs, action]` slots in index order, zeroed outside the
/// coalition, followed by the coalition as `n` indicator bits.
pub fn masked_joint_input(
    joint_obs: &[Vec<f64>],
    joint_action: &[[f64; ACTION_DIM]],
    coalition: CoalitionMask,
) -> Result<Vec<f64>> {
    check_layout(joint_obs, coalition)?;
    if joint_action.len() != joint_obs.len() {
        return Err(invalid(format!(
            "{} actions for {} observations",
            joint_action.len(),
            joint_obs.len()
        )));
    }
    let mut out = Vec::new();
    write_joint_input(&mut out, joint_obs, joint_action, coalition, true);
    Ok(out)
}

/// Per-agent observation slots zeroed outside the coalition, followed by
/// the coalition bits: the input of a coalition-aware actor.
pub fn masked_view(joint_obs: &[Vec<f64>], coalition: CoalitionMask) -> Result<Vec<f64>> {
    check_layout(joint_obs, coalition)?;
    let mut out = Vec::new();
    write_view(&mut out, joint_obs, coalition);
    Ok(out)
}

pub(crate) fn write_joint_input(
    out: &mut Vec<f64>,
    joint_obs: &[Vec<f64>],
    joint_action: &[[f64; ACTION_DIM]],
    coalition: CoalitionMask,
    with_mask: bool,
) {
    out.clear();
    let n = joint_obs.len();
    for (j, (o, a)) in joint_obs.iter().zip(joint_action).enumerate() {
        if coalition.contains(j) {
            out.extend_from_slice(o);
            out.extend_from_slice(a);
        } else {
            out.resize(out.len() + o.len() + ACTION_DIM, 0.0);
        }
    }
    if with_mask {
        out.extend((0..n).map(|j| if coalition.contains(j) { 1.0 } else { 0.0 }));
    }
}

pub(crate) fn write_view(out: &mut Vec<f64>, joint_obs: &[Vec<f64>], coalition: CoalitionMask) {
    out.clear();
    let n = joint_obs.len();
    for (j, o) in joint_obs.iter().enumerate() {
        if coalition.contains(j) {
            out.extend_from_slice(o);
        } else {
            out.resize(out.len() + o.len(), 0.0);
        }
    }
    out.extend((0..n).map(|j| if coalition.contains(j) { 1.0 } else { 0.0 }));
}

pub fn softmax(z: &[f64]) -> [f64; ACTION_DIM] {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; ACTION_DIM];
    let mut sum = 0.0;
    for (pk, zk) in p.iter_mut().zip(z) {
        *pk = (zk - max).exp();
        sum += *pk;
    }
    for pk in &mut p {
        *pk /= sum;
    }
    p
}

/// Pulls a gradient on softmax probabilities back onto the logits.
pub(crate) fn softmax_backward(p: &[f64; ACTION_DIM], grad_p: &[f64]) -> [f64; ACTION_DIM] {
    let dot: f64 = p.iter().zip(grad_p).map(|(a, b)| a * b).sum();
    let mut out = [0.0; ACTION_DIM];
    for k in 0..ACTION_DIM {
        out[k] = p[k] * (grad_p[k] - dot);
    }
    out
}

/// Actor forward pass plus Gaussian logit noise, relaxed through a softmax.
///
/// No random numbers are drawn when `noise_scale` is zero.
pub fn select_action<R: Rng + ?Sized>(
    actor: &Network,
    view: &[f64],
    noise_scale: f64,
    rng: &mut R,
) -> Result<VehicleAction> {
    if view.len() != actor.spec.input_dim() || actor.spec.output_dim() != ACTION_DIM {
        return Err(invalid(format!(
            "actor {:?} cannot map a view of length {} to {ACTION_DIM} logits",
            actor.spec.layer_sizes(),
            view.len()
        )));
    }
    let mut tape = Tape::new();
    let mut logits = actor.run(view, &mut tape).to_vec();
    if noise_scale > 0.0 {
        for z in &mut logits {
            let eps: f64 = rng.sample(StandardNormal);
            *z += noise_scale * eps;
        }
    }
    let relaxed = softmax(&logits);
    VehicleAction::from_relaxed(relaxed)
}
