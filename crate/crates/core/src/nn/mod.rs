//! Fully-connected tanh networks with hand-written reverse-mode gradients.
//!
//! Parameters live in one flat [`ParamVector`], laid out layer by layer as the
//! row-major weight matrix (`out x in`) followed by the bias vector. Hidden
//! layers use `tanh`, the output layer is linear.

mod adam;

use std::ops::{Deref, DerefMut};

use rand::Rng;

pub use adam::{clip_grad_norm, Adam, AdamConfig};

use crate::error::{invalid, Result};

/// Layer widths from input to output.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetSpec {
    layer_sizes: Vec<usize>,
}

impl NetSpec {
    pub fn new(layer_sizes: Vec<usize>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(invalid(format!(
                "network needs at least input and output layers, got {layer_sizes:?}"
            )));
        }
        if layer_sizes.contains(&0) {
            return Err(invalid(format!("zero-width layer in {layer_sizes:?}")));
        }
        Ok(NetSpec { layer_sizes })
    }

    /// `input -> hidden... -> output`.
    pub fn mlp(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.layer_sizes[self.layer_sizes.len() - 1]
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes
            .windows(2)
            .map(|w| w[0] * w[1] + w[1])
            .sum()
    }

    /// `(fan_in, fan_out, weight_offset, bias_offset)` for each layer.
    fn layers(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let mut off = 0;
        self.layer_sizes.windows(2).map(move |w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let w_off = off;
            let b_off = off + fan_in * fan_out;
            off = b_off + fan_out;
            (fan_in, fan_out, w_off, b_off)
        })
    }
}

/// Flat parameter vector for a [`NetSpec`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(spec: &NetSpec) -> Self {
        ParamVector(vec![0.0; spec.param_count()])
    }

    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn init<R: Rng + ?Sized>(spec: &NetSpec, rng: &mut R) -> Self {
        let mut p = Vec::with_capacity(spec.param_count());
        for (fan_in, fan_out, _, _) in spec.layers() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            for _ in 0..(fan_in * fan_out + fan_out) {
                p.push(rng.random_range(-bound..bound));
            }
        }
        ParamVector(p)
    }

    pub fn from_vec(spec: &NetSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.param_count() {
            return Err(invalid(format!(
                "parameter vector has {} entries, spec {:?} needs {}",
                values.len(),
                spec.layer_sizes(),
                spec.param_count()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("parameter {i} is not finite")));
        }
        Ok(ParamVector(values))
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ParamVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Per-layer activations recorded by a forward pass, reused by backward.
#[derive(Clone, Debug, Default)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn output(&self) -> &[f64] {
        self.acts.last().map(|v| v.as_slice()).unwrap_or(&[])
    }
}

/// Unchecked forward pass; records activations in `tape`.
pub(crate) fn forward_tape<'t>(
    spec: &NetSpec,
    params: &[f64],
    input: &[f64],
    tape: &'t mut Tape,
) -> &'t [f64] {
    let n_layers = spec.num_layers();
    tape.acts.resize_with(n_layers + 1, Vec::new);
    tape.acts[0].clear();
    tape.acts[0].extend_from_slice(input);
    for (l, (fan_in, fan_out, w_off, b_off)) in spec.layers().enumerate() {
        let (prev, rest) = tape.acts.split_at_mut(l + 1);
        let x = &prev[l];
        let out = &mut rest[0];
        out.clear();
        out.extend_from_slice(&params[b_off..b_off + fan_out]);
        let w = &params[w_off..b_off];
        if l == 0 {
            // Masked inputs are mostly zero; skip their columns.
            for (i, xi) in x.iter().enumerate() {
                if *xi != 0.0 {
                    for (o, z) in out.iter_mut().enumerate() {
                        *z += w[o * fan_in + i] * xi;
                    }
                }
            }
        } else {
            for (z, row) in out.iter_mut().zip(w.chunks_exact(fan_in)) {
                *z += dot(row, x);
            }
        }
        if l + 1 < n_layers {
            for z in out.iter_mut() {
                *z = z.tanh();
            }
        }
    }
    &tape.acts[n_layers]
}

/// Unchecked reverse pass over a recorded tape. Gradients are *added* into
/// `grad_params` / `grad_input` when provided.
pub(crate) fn backward_tape(
    spec: &NetSpec,
    params: &[f64],
    tape: &mut Tape,
    upstream: &[f64],
    mut grad_params: Option<&mut [f64]>,
    grad_input: Option<&mut [f64]>,
) {
    let n_layers = spec.num_layers();
    let layers: Vec<_> = spec.layers().collect();
    let Tape {
        acts,
        delta,
        delta_prev,
    } = tape;
    delta.clear();
    delta.extend_from_slice(upstream);
    let mut grad_input = grad_input;
    for l in (0..n_layers).rev() {
        let (fan_in, fan_out, w_off, b_off) = layers[l];
        let x = &acts[l];
        let w = &params[w_off..b_off];
        if let Some(g) = grad_params.as_deref_mut() {
            let (gw, gb) = g[w_off..b_off + fan_out].split_at_mut(fan_in * fan_out);
            for (o, d) in delta.iter().enumerate() {
                gb[o] += d;
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[o * fan_in..(o + 1) * fan_in];
                for (gwi, xi) in row.iter_mut().zip(x) {
                    *gwi += d * xi;
                }
            }
        }
        if l == 0 && grad_input.is_none() {
            break;
        }
        delta_prev.clear();
        delta_prev.resize(fan_in, 0.0);
        for (o, d) in delta.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &w[o * fan_in..(o + 1) * fan_in];
            for (dp, wi) in delta_prev.iter_mut().zip(row) {
                *dp += wi * d;
            }
        }
        if l > 0 {
            // Through the tanh of the previous hidden layer.
            for (dp, a) in delta_prev.iter_mut().zip(x) {
                *dp *= 1.0 - a * a;
            }
            std::mem::swap(delta, delta_prev);
        } else if let Some(gi) = grad_input.as_deref_mut() {
            for (g, d) in gi.iter_mut().zip(delta_prev.iter()) {
                *g += d;
            }
        }
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn check_params(spec: &NetSpec, params: &[f64]) -> Result<()> {
    if params.len() != spec.param_count() {
        return Err(invalid(format!(
            "parameter vector has {} entries, spec {:?} needs {}",
            params.len(),
            spec.layer_sizes(),
            spec.param_count()
        )));
    }
    Ok(())
}

fn check_len(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(invalid(format!("{what} has length {got}, expected {want}")));
    }
    Ok(())
}

pub fn forward(spec: &NetSpec, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
    check_params(spec, params)?;
    check_len("input", input.len(), spec.input_dim())?;
    let mut tape = Tape::new();
    Ok(forward_tape(spec, params, input, &mut tape).to_vec())
}

/// Gradients of `upstream · output` with respect to parameters and input.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub params: ParamVector,
    pub input: Vec<f64>,
}

pub fn backward(
    spec: &NetSpec,
    params: &ParamVector,
    input: &[f64],
    upstream: &[f64],
) -> Result<Gradients> {
    check_params(spec, params)?;
    check_len("input", input.len(), spec.input_dim())?;
    check_len("upstream gradient", upstream.len(), spec.output_dim())?;
    let mut tape = Tape::new();
    forward_tape(spec, params, input, &mut tape);
    let mut gp = vec![0.0; params.len()];
    let mut gi = vec![0.0; input.len()];
    backward_tape(spec, params, &mut tape, upstream, Some(&mut gp), Some(&mut gi));
    Ok(Gradients {
        params: ParamVector(gp),
        input: gi,
    })
}

/// `tau * online + (1 - tau) * target`, computed as `target + tau * (online - target)`
/// so that equal inputs are a fixpoint.
pub fn soft_update(target: &ParamVector, online: &ParamVector, tau: f64) -> Result<ParamVector> {
    let mut out = target.clone();
    soft_update_in_place(&mut out, online, tau)?;
    Ok(out)
}

pub fn soft_update_in_place(target: &mut ParamVector, online: &ParamVector, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(invalid(format!("tau must lie in [0, 1], got {tau}")));
    }
    check_len("online parameters", online.len(), target.len())?;
    if tau == 1.0 {
        target.copy_from_slice(online);
    } else if tau > 0.0 {
        for (t, o) in target.iter_mut().zip(online.iter()) {
            *t += tau * (o - *t);
        }
    }
    Ok(())
}

/// A network specification bundled with its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub spec: NetSpec,
    pub params: ParamVector,
}

impl Network {
    pub fn new<R: Rng + ?Sized>(spec: NetSpec, rng: &mut R) -> Self {
        let params = ParamVector::init(&spec, rng);
        Network { spec, params }
    }

    pub fn zeros(spec: NetSpec) -> Self {
        let params = ParamVector::zeros(&spec);
        Network { spec, params }
    }

    /// Forward pass without length checks; callers own the layout.
    pub fn run<'t>(&self, input: &[f64], tape: &'t mut Tape) -> &'t [f64] {
        debug_assert_eq!(input.len(), self.spec.input_dim());
        forward_tape(&self.spec, &self.params, input, tape)
    }

    /// Reverse pass for the last [`Network::run`] recorded in `tape`.
    pub fn backprop(
        &self,
        tape: &mut Tape,
        upstream: &[f64],
        grad_params: Option<&mut [f64]>,
        grad_input: Option<&mut [f64]>,
    ) {
        backward_tape(
            &self.spec,
            &self.params,
            tape,
            upstream,
            grad_params,
            grad_input,
        )
    }
}
