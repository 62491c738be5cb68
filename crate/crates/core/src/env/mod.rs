//! Three-lane circular freeway with discrete lane-change decisions.
//!
//! Lane 0 is the leftmost lane. Positions are the vehicle centre in metres
//! along the loop; the bumper gap between a follower and its lead is the
//! centre distance minus one vehicle length.

mod driver;
mod observe;
mod sim;
mod trace;

pub use driver::scripted_driver_action;
pub use observe::{observe, OBS_DIM};
pub use sim::{reset, step, StepInfo, StepOutcome};
pub use trace::{trace_header, trace_rows};

use std::fmt;
use std::str::FromStr;

use crate::error::{invalid, Error, Result};
use crate::game::CoalitionMask;

pub const LANES: usize = 3;

/// m/s to mph, applied only when reporting.
pub const MPS_TO_MPH: f64 = 2.23694;

/// The four lane-level decisions available to every vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Maneuver {
    KeepLane = 0,
    ChangeLeft = 1,
    ChangeRight = 2,
    EmergencyStop = 3,
}

impl Maneuver {
    pub const ALL: [Maneuver; 4] = [
        Maneuver::KeepLane,
        Maneuver::ChangeLeft,
        Maneuver::ChangeRight,
        Maneuver::EmergencyStop,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn code(self) -> &'static str {
        match self {
            Maneuver::KeepLane => "KL",
            Maneuver::ChangeLeft => "CL",
            Maneuver::ChangeRight => "CR",
            Maneuver::EmergencyStop => "ES",
        }
    }
}

impl fmt::Display for Maneuver {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for Maneuver {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.code() == s)
            .ok_or_else(|| invalid(format!("unknown maneuver `{s}`")))
    }
}

pub const ACTION_DIM: usize = 4;

/// A decision plus its continuous relaxation on the probability simplex.
///
/// `discrete` is always the argmax of `relaxed`, ties going to the lowest index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleAction {
    pub discrete: Maneuver,
    pub relaxed: [f64; ACTION_DIM],
}

impl VehicleAction {
    pub fn from_relaxed(relaxed: [f64; ACTION_DIM]) -> Result<Self> {
        if relaxed.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid(format!("relaxed action {relaxed:?} has a negative entry")));
        }
        let sum: f64 = relaxed.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(invalid(format!("relaxed action {relaxed:?} sums to {sum}")));
        }
        Ok(VehicleAction {
            discrete: argmax_maneuver(&relaxed),
            relaxed,
        })
    }

    /// One-hot relaxation of a discrete decision.
    pub fn one_hot(m: Maneuver) -> Self {
        let mut relaxed = [0.0; ACTION_DIM];
        relaxed[m.index()] = 1.0;
        VehicleAction {
            discrete: m,
            relaxed,
        }
    }
}

pub(crate) fn argmax_maneuver(x: &[f64]) -> Maneuver {
    let mut best = 0;
    for (i, v) in x.iter().enumerate().skip(1) {
        if *v > x[best] {
            best = i;
        }
    }
    Maneuver::ALL[best]
}

/// Physical and reward parameters of the freeway.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvConfig {
    pub n_vehicles: usize,
    /// Vehicles `0..n_cavs` are learning-controlled; the rest are scripted.
    pub n_cavs: usize,
    pub loop_length: f64,
    pub dt: f64,
    pub v_max: f64,
    pub a_max: f64,
    /// Acceleration magnitude separating comfort 3 from comfort 2.
    pub comfort_threshold: f64,
    /// Weight on velocity in the per-vehicle reward.
    pub reward_weight: f64,
    pub d_safe: f64,
    pub d_lc: f64,
    /// Proportional gain of the speed controller (1/s).
    pub k_v: f64,
    pub v_des_min: f64,
    pub v_des_max: f64,
    pub vehicle_length: f64,
    /// Smallest bumper gap the collision guard ever admits.
    pub min_gap: f64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        EnvConfig {
            n_vehicles: 4,
            n_cavs: 4,
            loop_length: 400.0,
            dt: 0.5,
            v_max: 33.0,
            a_max: 4.0,
            comfort_threshold: 2.0,
            reward_weight: 0.1,
            d_safe: 20.0,
            d_lc: 15.0,
            k_v: 0.5,
            v_des_min: 25.0,
            v_des_max: 33.0,
            vehicle_length: 5.0,
            min_gap: 1.0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("loop_length", self.loop_length),
            ("dt", self.dt),
            ("v_max", self.v_max),
            ("a_max", self.a_max),
            ("comfort_threshold", self.comfort_threshold),
            ("d_safe", self.d_safe),
            ("d_lc", self.d_lc),
            ("k_v", self.k_v),
            ("v_des_min", self.v_des_min),
            ("v_des_max", self.v_des_max),
            ("vehicle_length", self.vehicle_length),
            ("min_gap", self.min_gap),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.reward_weight.is_finite() && self.reward_weight >= 0.0) {
            return Err(Error::Config(format!(
                "reward_weight must be nonnegative, got {}",
                self.reward_weight
            )));
        }
        if self.comfort_threshold >= self.a_max {
            return Err(Error::Config(format!(
                "comfort_threshold ({}) must be below a_max ({})",
                self.comfort_threshold, self.a_max
            )));
        }
        if self.v_des_min > self.v_des_max || self.v_des_max > self.v_max {
            return Err(Error::Config(format!(
                "desired speed range [{}, {}] must lie within [0, v_max = {}]",
                self.v_des_min, self.v_des_max, self.v_max
            )));
        }
        if self.min_gap > self.d_safe {
            return Err(Error::Config("min_gap must not exceed d_safe".into()));
        }
        if self.n_vehicles == 0 {
            return Err(Error::Config("n_vehicles must be at least 1".into()));
        }
        if self.n_cavs > self.n_vehicles {
            return Err(Error::Config(format!(
                "n_cavs ({}) exceeds n_vehicles ({})",
                self.n_cavs, self.n_vehicles
            )));
        }
        Ok(())
    }
}

/// Kinematic state of one vehicle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VehicleState {
    pub lane: usize,
    pub position: f64,
    pub velocity: f64,
    /// Realized acceleration over the last step.
    pub acceleration: f64,
    pub desired_velocity: f64,
    pub is_cav: bool,
    pub in_emergency_stop: bool,
}

/// Joint state of every vehicle on the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct WorldState {
    pub vehicles: Vec<VehicleState>,
    pub step: u64,
}

impl WorldState {
    pub fn n(&self) -> usize {
        self.vehicles.len()
    }

    /// Smallest bumper gap between consecutive same-lane vehicles, if any
    /// lane holds two or more vehicles.
    pub fn min_same_lane_gap(&self, cfg: &EnvConfig) -> Option<f64> {
        (0..self.n())
            .filter_map(|i| sim::lead_of(self, i, cfg).map(|(_, gap)| gap))
            .min_by(|a, b| a.total_cmp(b))
    }
}

/// Integer comfort score in `{0, 1, 2, 3}` for the commanded decision.
pub fn comfort_score(acceleration: f64, action: Maneuver, cfg: &EnvConfig) -> u8 {
    match action {
        Maneuver::KeepLane if acceleration.abs() < cfg.comfort_threshold => 3,
        Maneuver::KeepLane => 2,
        Maneuver::ChangeLeft | Maneuver::ChangeRight => 1,
        Maneuver::EmergencyStop => 0,
    }
}

/// `w * velocity + comfort`, evaluated on the post-step vehicle state.
pub fn individual_reward(vehicle: &VehicleState, action: Maneuver, cfg: &EnvConfig) -> f64 {
    cfg.reward_weight * vehicle.velocity
        + f64::from(comfort_score(vehicle.acceleration, action, cfg))
}

/// Sum of member rewards; the empty coalition earns nothing.
pub fn coalition_reward(rewards: &[f64], coalition: CoalitionMask) -> Result<f64> {
    let mut total = 0.0;
    for i in coalition.members() {
        total += rewards.get(i).ok_or_else(|| {
            invalid(format!(
                "coalition {coalition} names agent {} of {}",
                i + 1,
                rewards.len()
            ))
        })?;
    }
    Ok(total)
}
