//! Versioned binary checkpoints: a UTF-8 manifest listing each segment's
//! length and SHA-256, then the little-endian segments back to back.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::config::{parse_config, RunConfig};
use super::metrics::MetricsRecord;
use crate::env::ACTION_DIM;
use crate::error::{Error, Result};
use crate::game::CoalitionMask;
use crate::marl::{Learner, ReplayBuffer, Trainer, Transition};
use crate::nn::{Adam, AdamConfig, NetSpec, Network, ParamVector};

pub const CHECKPOINT_MAGIC: &str = "coopshap-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

const SEGMENTS: [&str; 6] = ["config", "run", "rng", "networks", "buffer", "metrics"];

/// A single-seed training run paused between episodes.
#[derive(Clone, Debug)]
pub struct RunState {
    pub config: RunConfig,
    pub seed: u64,
    pub trainer: Trainer,
    pub metrics: Vec<MetricsRecord>,
}

#[derive(Default)]
struct Enc(Vec<u8>);

impl Enc {
    fn u64(&mut self, x: u64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64(&mut self, x: f64) {
        self.0.extend_from_slice(&x.to_le_bytes());
    }
    fn f64s(&mut self, xs: &[f64]) {
        self.u64(xs.len() as u64);
        for x in xs {
            self.f64(*x);
        }
    }
    fn bytes(&mut self, b: &[u8]) {
        self.u64(b.len() as u64);
        self.0.extend_from_slice(b);
    }
}

struct Dec<'a> {
    segment: &'static str,
    data: &'a [u8],
    pos: usize,
}

impl<'a> Dec<'a> {
    fn new(segment: &'static str, data: &'a [u8]) -> Self {
        Dec {
            segment,
            data,
            pos: 0,
        }
    }
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Checkpoint {
            segment: self.segment.into(),
            msg: msg.into(),
        }
    }
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|e| *e <= self.data.len());
        let end = end.ok_or_else(|| self.err(format!("truncated at byte {}", self.pos)))?;
        let out = &self.data[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn usize(&mut self) -> Result<usize> {
        let x = self.u64()?;
        usize::try_from(x).map_err(|_| self.err(format!("count {x} does not fit in memory")))
    }
    fn len(&mut self, elem: usize) -> Result<usize> {
        let n = self.usize()?;
        if n.saturating_mul(elem) > self.data.len() - self.pos {
            return Err(self.err(format!("declared length {n} exceeds the segment")));
        }
        Ok(n)
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len(8)?;
        (0..n).map(|_| self.f64()).collect()
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.len(1)?;
        self.take(n)
    }
    fn finish(&self) -> Result<()> {
        if self.pos != self.data.len() {
            return Err(self.err(format!("{} trailing bytes", self.data.len() - self.pos)));
        }
        Ok(())
    }
}

fn encode_learner(e: &mut Enc, l: &Learner) {
    let sizes: Vec<f64> = l.net.spec.layer_sizes().iter().map(|s| *s as f64).collect();
    e.f64s(&sizes);
    e.f64s(&l.net.params);
    e.f64s(&l.target.params);
    let c = l.opt.config;
    for x in [c.lr, c.beta1, c.beta2, c.eps] {
        e.f64(x);
    }
    e.u64(l.opt.step);
    e.f64s(&l.opt.m);
    e.f64s(&l.opt.v);
}

fn decode_learner(d: &mut Dec<'_>, expected: &NetSpec) -> Result<Learner> {
    let sizes: Vec<usize> = d.f64s()?.into_iter().map(|s| s as usize).collect();
    if sizes != expected.layer_sizes() {
        return Err(d.err(format!(
            "network shape {sizes:?} does not match the configured {:?}",
            expected.layer_sizes()
        )));
    }
    let spec = expected.clone();
    let params = |d: &mut Dec<'_>| -> Result<ParamVector> {
        let v = d.f64s()?;
        ParamVector::from_vec(&spec, v).map_err(|e| d.err(e.to_string()))
    };
    let net = params(d)?;
    let target = params(d)?;
    let config = AdamConfig {
        lr: d.f64()?,
        beta1: d.f64()?,
        beta2: d.f64()?,
        eps: d.f64()?,
    };
    let step = d.u64()?;
    let m = d.f64s()?;
    let v = d.f64s()?;
    if m.len() != net.len() || v.len() != net.len() {
        return Err(d.err("optimizer moments do not match the parameter count"));
    }
    Ok(Learner {
        net: Network {
            spec: spec.clone(),
            params: net,
        },
        target: Network { spec, params: target },
        opt: Adam { config, m, v, step },
    })
}

fn encode_transition(e: &mut Enc, t: &Transition) {
    e.u64(t.joint_obs.len() as u64);
    for o in t.joint_obs.iter().chain(&t.next_joint_obs) {
        e.f64s(o);
    }
    for a in &t.joint_action {
        for x in a {
            e.f64(*x);
        }
    }
    e.u64(u64::from(t.coalition.bits()));
    e.f64s(&t.rewards);
}

fn decode_transition(d: &mut Dec<'_>) -> Result<Transition> {
    let n = d.len(8)?;
    let mut obs = Vec::with_capacity(2 * n);
    for _ in 0..2 * n {
        obs.push(d.f64s()?);
    }
    let next_joint_obs = obs.split_off(n);
    let mut joint_action = Vec::with_capacity(n);
    for _ in 0..n {
        let mut a = [0.0; ACTION_DIM];
        for x in &mut a {
            *x = d.f64()?;
        }
        joint_action.push(a);
    }
    let bits = d.u64()?;
    let bits = u32::try_from(bits).map_err(|_| d.err(format!("bad coalition {bits}")))?;
    let t = Transition {
        joint_obs: obs,
        joint_action,
        coalition: CoalitionMask::from_bits(bits),
        rewards: d.f64s()?,
        next_joint_obs,
    };
    t.validate().map_err(|e| d.err(e.to_string()))?;
    Ok(t)
}

fn encode(state: &RunState) -> Vec<(&'static str, Vec<u8>)> {
    let t = &state.trainer;
    let config = state.config.to_text().into_bytes();

    let mut run = Enc::default();
    run.u64(state.seed);
    run.bytes(t.algorithm().name().as_bytes());
    run.u64(t.episodes_done);
    run.u64(t.total_steps);

    let mut rng = Enc::default();
    rng.0.extend_from_slice(&t.rng.get_seed());
    rng.u64(t.rng.get_stream());
    rng.0.extend_from_slice(&t.rng.get_word_pos().to_le_bytes());

    let mut nets = Enc::default();
    nets.u64((t.agents.actors.len() + t.agents.critics.len()) as u64);
    for l in t.agents.actors.iter().chain(&t.agents.critics) {
        encode_learner(&mut nets, l);
    }

    let mut buf = Enc::default();
    buf.u64(t.buffer.capacity() as u64);
    buf.u64(t.buffer.cursor() as u64);
    buf.u64(t.buffer.len() as u64);
    for tr in t.buffer.slots() {
        encode_transition(&mut buf, tr);
    }

    let mut met = Enc::default();
    met.u64(state.metrics.len() as u64);
    for r in &state.metrics {
        met.u64(r.episode);
        for x in [r.system_reward, r.mean_velocity, r.mean_comfort, r.critic_loss, r.actor_objective] {
            met.f64(x);
        }
    }

    vec![
        ("config", config),
        ("run", run.0),
        ("rng", rng.0),
        ("networks", nets.0),
        ("buffer", buf.0),
        ("metrics", met.0),
    ]
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Serializes a run to bytes.
pub fn checkpoint_bytes(state: &RunState) -> Vec<u8> {
    let segments = encode(state);
    let mut out = format!("{CHECKPOINT_MAGIC} v{CHECKPOINT_VERSION}\n");
    for (name, data) in &segments {
        out.push_str(&format!("{name} {} {}\n", data.len(), hex(&Sha256::digest(data))));
    }
    out.push_str("end\n");
    let mut bytes = out.into_bytes();
    for (_, data) in segments {
        bytes.extend_from_slice(&data);
    }
    bytes
}

pub fn save_checkpoint(path: &Path, state: &RunState) -> Result<()> {
    let io = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let tmp = path.with_extension("partial");
    fs::write(&tmp, checkpoint_bytes(state)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<RunState> {
    let bytes = fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    checkpoint_from_bytes(&bytes)
}

fn manifest_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint {
        segment: "manifest".into(),
        msg: msg.into(),
    }
}

/// Parses and verifies a checkpoint; nothing is returned unless every
/// segment checks out.
pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<RunState> {
    let end = bytes
        .windows(5)
        .position(|w| w == b"\nend\n")
        .ok_or_else(|| manifest_err("no manifest terminator"))?;
    let manifest = std::str::from_utf8(&bytes[..end])
        .map_err(|_| manifest_err("manifest is not UTF-8"))?;
    let mut lines = manifest.lines();
    let header = lines.next().unwrap_or("");
    let version = header
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|v| v.trim().strip_prefix('v'))
        .and_then(|v| v.parse::<u32>().ok())
        .ok_or_else(|| manifest_err(format!("unrecognized header `{header}`")))?;
    if version != CHECKPOINT_VERSION {
        return Err(manifest_err(format!(
            "version {version} is not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let mut offset = end + 5;
    let mut payloads: Vec<&[u8]> = Vec::new();
    for name in SEGMENTS {
        let seg_err = |msg: String| Error::Checkpoint {
            segment: name.into(),
            msg,
        };
        let line = lines
            .next()
            .ok_or_else(|| seg_err("missing from manifest".into()))?;
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 3 || f[0] != name {
            return Err(seg_err(format!("unexpected manifest entry `{line}`")));
        }
        let len: usize = f[1]
            .parse()
            .map_err(|_| seg_err(format!("bad length `{}`", f[1])))?;
        let data = offset
            .checked_add(len)
            .and_then(|e| bytes.get(offset..e))
            .ok_or_else(|| seg_err("truncated".into()))?;
        if hex(&Sha256::digest(data)) != f[2] {
            return Err(seg_err("checksum mismatch".into()));
        }
        payloads.push(data);
        offset += len;
    }
    if let Some(extra) = lines.next() {
        return Err(manifest_err(format!("unexpected entry `{extra}`")));
    }
    if offset != bytes.len() {
        return Err(manifest_err(format!("{} bytes after the last segment", bytes.len() - offset)));
    }
    decode(&payloads)
}

fn decode(p: &[&[u8]]) -> Result<RunState> {
    let text = std::str::from_utf8(p[0]).map_err(|_| Error::Checkpoint {
        segment: "config".into(),
        msg: "not UTF-8".into(),
    })?;
    let config = parse_config(text).map_err(|e| Error::Checkpoint {
        segment: "config".into(),
        msg: e.to_string(),
    })?;

    let mut d = Dec::new("run", p[1]);
    let seed = d.u64()?;
    let alg = std::str::from_utf8(d.bytes()?).map_err(|_| d.err("algorithm is not UTF-8"))?;
    if alg != config.algorithm.name() {
        return Err(d.err(format!(
            "algorithm `{alg}` disagrees with the configured `{}`",
            config.algorithm
        )));
    }
    let episodes_done = d.u64()?;
    let total_steps = d.u64()?;
    d.finish()?;

    let env = config.env_config().map_err(|e| Error::Checkpoint {
        segment: "config".into(),
        msg: e.to_string(),
    })?;
    // A fresh trainer supplies the expected shapes; its contents are replaced below.
    let mut trainer = Trainer::new(config.algorithm, &env, config.trainer_config(), seed)
        .map_err(|e| Error::Checkpoint {
            segment: "config".into(),
            msg: e.to_string(),
        })?;

    let mut d = Dec::new("rng", p[2]);
    let seed_bytes: [u8; 32] = d.take(32)?.try_into().expect("32 bytes");
    let stream = d.u64()?;
    let word_pos = u128::from_le_bytes(d.take(16)?.try_into().expect("16 bytes"));
    d.finish()?;
    let mut rng = ChaCha8Rng::from_seed(seed_bytes);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut d = Dec::new("networks", p[3]);
    let count = d.usize()?;
    let agents = &mut trainer.agents;
    if count != agents.actors.len() + agents.critics.len() {
        return Err(d.err(format!(
            "{count} networks stored, configuration needs {}",
            agents.actors.len() + agents.critics.len()
        )));
    }
    for l in agents.actors.iter_mut().chain(agents.critics.iter_mut()) {
        let spec = l.net.spec.clone();
        *l = decode_learner(&mut d, &spec)?;
    }
    d.finish()?;

    let mut d = Dec::new("buffer", p[4]);
    let capacity = d.usize()?;
    let cursor = d.usize()?;
    let len = d.len(8)?;
    let mut items = Vec::with_capacity(len);
    for _ in 0..len {
        let t = decode_transition(&mut d)?;
        if t.n_agents() != agents.n_agents || t.joint_obs.iter().any(|o| o.len() != agents.obs_dim) {
            return Err(d.err("transition shape does not match the agents"));
        }
        items.push(t);
    }
    d.finish()?;
    trainer.buffer = ReplayBuffer::from_parts(capacity, items, cursor).map_err(|e| d.err(e.to_string()))?;

    let mut d = Dec::new("metrics", p[5]);
    let n = d.len(48)?;
    let mut metrics = Vec::with_capacity(n);
    for _ in 0..n {
        metrics.push(MetricsRecord {
            episode: d.u64()?,
            system_reward: d.f64()?,
            mean_velocity: d.f64()?,
            mean_comfort: d.f64()?,
            critic_loss: d.f64()?,
            actor_objective: d.f64()?,
        });
    }
    d.finish()?;

    trainer.rng = rng;
    trainer.episodes_done = episodes_done;
    trainer.total_steps = total_steps;
    Ok(RunState {
        config,
        seed,
        trainer,
        metrics,
    })
}
