use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    comfort_score, individual_reward, EnvConfig, Maneuver, VehicleAction, VehicleState,
    WorldState, LANES,
};
use crate::error::{invalid, Error, Result};

/// Centre distance travelling forward from `from` to `to` on the loop.
pub(crate) fn ahead_distance(from: f64, to: f64, cfg: &EnvConfig) -> f64 {
    (to - from).rem_euclid(cfg.loop_length)
}

/// Nearest vehicles ahead and behind `i` in `lane` as `(index, centre distance)`.
pub(crate) fn neighbors_in_lane(
    state: &WorldState,
    i: usize,
    lane: usize,
    cfg: &EnvConfig,
) -> (Option<(usize, f64)>, Option<(usize, f64)>) {
    let p = state.vehicles[i].position;
    let mut lead: Option<(usize, f64)> = None;
    let mut lag: Option<(usize, f64)> = None;
    for (j, v) in state.vehicles.iter().enumerate() {
        if j == i || v.lane != lane {
            continue;
        }
        let ahead = ahead_distance(p, v.position, cfg);
        if lead.is_none_or(|(_, d)| ahead < d) {
            lead = Some((j, ahead));
        }
        let behind = ahead_distance(v.position, p, cfg);
        if lag.is_none_or(|(_, d)| behind < d) {
            lag = Some((j, behind));
        }
    }
    (lead, lag)
}

/// Same-lane lead of `i` and the bumper gap to it.
pub(crate) fn lead_of(state: &WorldState, i: usize, cfg: &EnvConfig) -> Option<(usize, f64)> {
    let lane = state.vehicles[i].lane;
    neighbors_in_lane(state, i, lane, cfg)
        .0
        .map(|(j, d)| (j, d - cfg.vehicle_length))
}

/// Distance covered when braking at `a_max` from speed `v` starting next step,
/// under the integrator `v <- max(0, v - a dt); x <- x + v dt`.
fn stopping_distance(v: f64, cfg: &EnvConfig) -> f64 {
    let s = cfg.a_max * cfg.dt;
    let m = (v / s).floor();
    (cfg.dt * (m * v - s * m * (m + 1.0) / 2.0)).max(0.0)
}

/// Largest speed in `[0, v_max]` with `f(v) <= budget`, for increasing `f`.
fn max_speed_within(budget: f64, cfg: &EnvConfig, f: impl Fn(f64) -> f64) -> f64 {
    if f(0.0) > budget {
        return 0.0;
    }
    if f(cfg.v_max) <= budget {
        return cfg.v_max;
    }
    let (mut lo, mut hi) = (0.0, cfg.v_max);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if f(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Whether a follower at bumper gap `gap` behind a lead can still stop with
/// at least `margin` to spare if both brake at `a_max` from now on.
fn braking_safe(gap: f64, v_follow: f64, v_lead: f64, margin: f64, cfg: &EnvConfig) -> bool {
    gap >= margin
        && gap + stopping_distance(v_lead, cfg) - stopping_distance(v_follow, cfg) >= margin
}

/// Highest next-step speed that keeps `margin` to the lead both after this
/// step and after a subsequent full stop, assuming the lead brakes at `a_max`.
fn guarded_speed(gap: f64, v_lead: f64, margin: f64, cfg: &EnvConfig) -> f64 {
    let lead_step = (v_lead - cfg.a_max * cfg.dt).max(0.0) * cfg.dt;
    let step_bound = ((gap + lead_step - margin) / cfg.dt).max(0.0);
    let stop_budget = gap + stopping_distance(v_lead, cfg) - margin;
    let stop_bound = max_speed_within(stop_budget, cfg, |v| v * cfg.dt + stopping_distance(v, cfg));
    step_bound.min(stop_bound)
}

/// Places vehicles round-robin across lanes with jittered spacing.
///
/// Vehicle `k` drives in lane `k % 3`; vehicles `0..n_cavs` are CAVs. Initial
/// speeds are lowered where needed so every follower can stop behind its lead.
pub fn reset(cfg: &EnvConfig, seed: u64) -> Result<WorldState> {
    cfg.validate()?;
    let n = cfg.n_vehicles;
    let per_lane_max = n.div_ceil(LANES);
    let min_spacing = cfg.d_safe + cfg.vehicle_length;
    if cfg.loop_length / (per_lane_max as f64) < min_spacing {
        return Err(Error::Config(format!(
            "{n} vehicles do not fit on a {} m loop: {} per lane need {} m spacing each",
            cfg.loop_length, per_lane_max, min_spacing
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vehicles = Vec::with_capacity(n);
    let offsets: Vec<f64> = (0..LANES)
        .map(|_| rng.random_range(0.0..cfg.loop_length))
        .collect();
    for k in 0..n {
        let lane = k % LANES;
        let slot = k / LANES;
        let in_lane = (n - lane).div_ceil(LANES);
        let spacing = cfg.loop_length / in_lane as f64;
        let slack = spacing - min_spacing;
        let jitter = if slack > 0.0 {
            rng.random_range(0.0..slack)
        } else {
            0.0
        };
        let position = (offsets[lane] + slot as f64 * spacing + jitter).rem_euclid(cfg.loop_length);
        let desired_velocity = rng.random_range(cfg.v_des_min..=cfg.v_des_max);
        let velocity = rng.random_range(cfg.v_des_min..=cfg.v_des_max);
        vehicles.push(VehicleState {
            lane,
            position,
            velocity,
            acceleration: 0.0,
            desired_velocity,
            is_cav: k < cfg.n_cavs,
            in_emergency_stop: false,
        });
    }
    let mut state = WorldState { vehicles, step: 0 };

    // Slow followers until every same-lane pair can brake safely; speeds only
    // decrease, so this settles within a few passes.
    for _ in 0..(4 * n + 4) {
        let mut changed = false;
        for i in 0..n {
            if let Some((j, gap)) = lead_of(&state, i, cfg) {
                let v_lead = state.vehicles[j].velocity;
                let v = state.vehicles[i].velocity;
                if !braking_safe(gap, v, v_lead, cfg.min_gap, cfg) {
                    let budget = gap + stopping_distance(v_lead, cfg) - cfg.min_gap;
                    let capped = max_speed_within(budget, cfg, |v| stopping_distance(v, cfg));
                    state.vehicles[i].velocity = capped.min(v);
                    changed = true;
                }
            }
        }
        if !changed {
            break;
        }
    }
    Ok(state)
}

/// Per-step diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct StepInfo {
    pub comfort: Vec<u8>,
    /// Whether a requested lane change was executed.
    pub lane_changed: Vec<bool>,
    /// Whether the longitudinal guard overrode the speed controller.
    pub guarded: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: WorldState,
    pub rewards: Vec<f64>,
    pub info: StepInfo,
}

fn lane_change_feasible(state: &WorldState, i: usize, target: usize, cfg: &EnvConfig) -> bool {
    let me = &state.vehicles[i];
    let (lead, lag) = neighbors_in_lane(state, i, target, cfg);
    let lead_ok = lead.is_none_or(|(j, d)| {
        let gap = d - cfg.vehicle_length;
        gap >= cfg.d_lc
            && braking_safe(gap, me.velocity, state.vehicles[j].velocity, cfg.min_gap, cfg)
    });
    let lag_ok = lag.is_none_or(|(j, d)| {
        let gap = d - cfg.vehicle_length;
        gap >= cfg.d_lc
            && braking_safe(gap, state.vehicles[j].velocity, me.velocity, cfg.min_gap, cfg)
    });
    lead_ok && lag_ok
}

/// Advances the world by one `dt`.
///
/// Lane changes are resolved first in ascending vehicle order (so the lower
/// index wins a contested slot), then every vehicle's speed is set by the
/// proportional controller, forced braking (`ES`, or lead gap below `d_safe`)
/// and the stopping-distance guard, and finally positions are integrated.
pub fn step(state: &WorldState, actions: &[VehicleAction], cfg: &EnvConfig) -> Result<StepOutcome> {
    let n = state.n();
    if actions.len() != n {
        return Err(invalid(format!(
            "got {} actions for {n} vehicles",
            actions.len()
        )));
    }
    let mut next = state.clone();
    let mut lane_changed = vec![false; n];
    for (i, action) in actions.iter().enumerate() {
        let lane = next.vehicles[i].lane;
        let target = match action.discrete {
            Maneuver::ChangeLeft => lane.checked_sub(1),
            Maneuver::ChangeRight => Some(lane + 1).filter(|l| *l < LANES),
            _ => None,
        };
        if let Some(target) = target {
            if lane_change_feasible(&next, i, target, cfg) {
                next.vehicles[i].lane = target;
                lane_changed[i] = true;
            }
        }
    }

    let s = cfg.a_max * cfg.dt;
    let mut guarded = vec![false; n];
    let next_speed: Vec<f64> = (0..n)
        .map(|i| {
            let veh = &next.vehicles[i];
            let v = veh.velocity;
            let braking = (v - s).max(0.0);
            let lead = lead_of(&next, i, cfg);
            if actions[i].discrete == Maneuver::EmergencyStop {
                return braking;
            }
            if lead.is_some_and(|(_, gap)| gap < cfg.d_safe) {
                guarded[i] = true;
                return braking;
            }
            let a = (cfg.k_v * (veh.desired_velocity - v)).clamp(-cfg.a_max, cfg.a_max);
            let planned = (v + a * cfg.dt).clamp(0.0, cfg.v_max);
            match lead {
                Some((j, gap)) => {
                    let bound = guarded_speed(gap, next.vehicles[j].velocity, cfg.d_safe, cfg);
                    if planned <= bound {
                        planned
                    } else {
                        guarded[i] = true;
                        bound.max(braking)
                    }
                }
                None => planned,
            }
        })
        .collect();

    for (veh, v_next) in next.vehicles.iter_mut().zip(&next_speed) {
        let accel = ((v_next - veh.velocity) / cfg.dt).clamp(-cfg.a_max, cfg.a_max);
        veh.velocity = *v_next;
        veh.acceleration = accel;
        veh.position = (veh.position + v_next * cfg.dt).rem_euclid(cfg.loop_length);
    }
    for (veh, action) in next.vehicles.iter_mut().zip(actions) {
        veh.in_emergency_stop = action.discrete == Maneuver::EmergencyStop;
    }
    next.step += 1;

    let rewards = next
        .vehicles
        .iter()
        .zip(actions)
        .map(|(veh, a)| individual_reward(veh, a.discrete, cfg))
        .collect();
    let comfort = next
        .vehicles
        .iter()
        .zip(actions)
        .map(|(veh, a)| comfort_score(veh.acceleration, a.discrete, cfg))
        .collect();
    Ok(StepOutcome {
        state: next,
        rewards,
        info: StepInfo {
            comfort,
            lane_changed,
            guarded,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn keep(n: usize) -> Vec<VehicleAction> {
        vec![VehicleAction::one_hot(Maneuver::KeepLane); n]
    }

    fn vehicle(lane: usize, position: f64, velocity: f64) -> VehicleState {
        VehicleState {
            lane,
            position,
            velocity,
            acceleration: 0.0,
            desired_velocity: velocity,
            is_cav: true,
            in_emergency_stop: false,
        }
    }

    #[test]
    fn stopping_distance_matches_simulation() {
        let cfg = EnvConfig::default();
        for v0 in [0.0, 1.0, 2.0, 7.3, 16.0, 33.0] {
            let mut v: f64 = v0;
            let mut x = 0.0;
            while v > 0.0 {
                v = (v - cfg.a_max * cfg.dt).max(0.0);
                x += v * cfg.dt;
            }
            assert!((stopping_distance(v0, &cfg) - x).abs() < 1e-9, "v0 = {v0}");
        }
    }

    #[test]
    fn single_vehicle_reset() {
        let cfg = EnvConfig {
            n_vehicles: 1,
            n_cavs: 1,
            ..Default::default()
        };
        let s = reset(&cfg, 3).unwrap();
        assert_eq!(s.n(), 1);
        assert!(s.min_same_lane_gap(&cfg).is_none());
    }

    #[test]
    fn reset_is_deterministic() {
        let cfg = EnvConfig {
            n_vehicles: 12,
            n_cavs: 6,
            ..Default::default()
        };
        assert_eq!(reset(&cfg, 17).unwrap(), reset(&cfg, 17).unwrap());
        assert_ne!(reset(&cfg, 17).unwrap(), reset(&cfg, 18).unwrap());
        let s = reset(&cfg, 17).unwrap();
        assert_eq!(s.vehicles.iter().filter(|v| v.is_cav).count(), 6);
    }

    #[test]
    fn dense_reset_keeps_safe_gaps() {
        let cfg = EnvConfig {
            n_vehicles: 30,
            n_cavs: 30,
            loop_length: 400.0,
            ..Default::default()
        };
        for seed in 0..20 {
            let s = reset(&cfg, seed).unwrap();
            let gap = s.min_same_lane_gap(&cfg).unwrap();
            assert!(gap >= cfg.d_safe, "seed {seed}: gap {gap}");
            for v in &s.vehicles {
                assert!((0.0..=cfg.v_max).contains(&v.velocity));
                assert!((0.0..cfg.loop_length).contains(&v.position));
            }
        }
    }

    #[test]
    fn infeasible_density_is_a_config_error() {
        let cfg = EnvConfig {
            n_vehicles: 60,
            n_cavs: 0,
            loop_length: 400.0,
            ..Default::default()
        };
        assert!(matches!(reset(&cfg, 0), Err(Error::Config(_))));
    }

    #[test]
    fn free_road_at_desired_speed_is_comfortable() {
        let cfg = EnvConfig::default();
        let state = WorldState {
            vehicles: vec![vehicle(0, 0.0, 30.0), vehicle(1, 100.0, 28.0), vehicle(2, 200.0, 26.0)],
            step: 0,
        };
        let out = step(&state, &keep(3), &cfg).unwrap();
        for (veh, c) in out.state.vehicles.iter().zip(&out.info.comfort) {
            assert!(veh.acceleration.abs() < cfg.comfort_threshold);
            assert_eq!(*c, 3);
        }
        assert!((out.rewards[0] - (0.1 * 30.0 + 3.0)).abs() < 1e-12);
        assert!((out.state.vehicles[0].position - 15.0).abs() < 1e-12);
    }

    #[test]
    fn emergency_stop_brakes_at_a_max() {
        let cfg = EnvConfig::default();
        let state = WorldState {
            vehicles: vec![vehicle(0, 0.0, 30.0), vehicle(1, 0.0, 1.0)],
            step: 0,
        };
        let es = vec![VehicleAction::one_hot(Maneuver::EmergencyStop); 2];
        let out = step(&state, &es, &cfg).unwrap();
        assert_eq!(out.state.vehicles[0].velocity, 28.0);
        assert_eq!(out.state.vehicles[1].velocity, 0.0);
        assert_eq!(out.info.comfort, vec![0, 0]);
        assert!(out.state.vehicles[0].in_emergency_stop);
    }

    #[test]
    fn blocked_lane_change_is_a_no_op() {
        let cfg = EnvConfig::default();
        // Vehicle 1 sits beside vehicle 0 in the left lane.
        let state = WorldState {
            vehicles: vec![vehicle(1, 50.0, 30.0), vehicle(0, 55.0, 30.0)],
            step: 0,
        };
        let mut actions = keep(2);
        actions[0] = VehicleAction::one_hot(Maneuver::ChangeLeft);
        let out = step(&state, &actions, &cfg).unwrap();
        assert_eq!(out.state.vehicles[0].lane, 1);
        assert!(!out.info.lane_changed[0]);
        // Comfort follows the commanded action even when the change no-ops.
        assert_eq!(out.info.comfort[0], 1);
    }

    #[test]
    fn edge_lanes_cannot_change_outward() {
        let cfg = EnvConfig::default();
        let state = WorldState {
            vehicles: vec![vehicle(0, 0.0, 30.0), vehicle(2, 200.0, 30.0)],
            step: 0,
        };
        let actions = vec![
            VehicleAction::one_hot(Maneuver::ChangeLeft),
            VehicleAction::one_hot(Maneuver::ChangeRight),
        ];
        let out = step(&state, &actions, &cfg).unwrap();
        assert_eq!(out.state.vehicles[0].lane, 0);
        assert_eq!(out.state.vehicles[1].lane, 2);
    }

    #[test]
    fn free_lane_change_executes() {
        let cfg = EnvConfig::default();
        let state = WorldState {
            vehicles: vec![vehicle(1, 0.0, 30.0), vehicle(1, 200.0, 30.0)],
            step: 0,
        };
        let mut actions = keep(2);
        actions[0] = VehicleAction::one_hot(Maneuver::ChangeRight);
        let out = step(&state, &actions, &cfg).unwrap();
        assert_eq!(out.state.vehicles[0].lane, 2);
        assert!(out.info.lane_changed[0]);
    }

    #[test]
    fn contested_slot_goes_to_lower_index() {
        let cfg = EnvConfig::default();
        // Vehicles 0 (lane 0) and 1 (lane 2) both try to enter lane 1 side by side.
        let state = WorldState {
            vehicles: vec![vehicle(0, 100.0, 30.0), vehicle(2, 102.0, 30.0)],
            step: 0,
        };
        let actions = vec![
            VehicleAction::one_hot(Maneuver::ChangeRight),
            VehicleAction::one_hot(Maneuver::ChangeLeft),
        ];
        let out = step(&state, &actions, &cfg).unwrap();
        assert_eq!(out.info.lane_changed, vec![true, false]);
        assert_eq!(out.state.vehicles[0].lane, 1);
        assert_eq!(out.state.vehicles[1].lane, 2);
    }

    #[test]
    fn close_lead_forces_braking() {
        let cfg = EnvConfig::default();
        let state = WorldState {
            vehicles: vec![vehicle(0, 0.0, 20.0), vehicle(0, 20.0, 20.0)],
            step: 0,
        };
        let out = step(&state, &keep(2), &cfg).unwrap();
        assert_eq!(out.state.vehicles[0].velocity, 18.0);
        assert_eq!(out.state.vehicles[0].acceleration, -4.0);
        assert_eq!(out.info.comfort[0], 2);
        assert!(out.info.guarded[0]);
    }

    #[test]
    fn action_count_mismatch() {
        let cfg = EnvConfig::default();
        let s = reset(&cfg, 1).unwrap();
        assert!(step(&s, &keep(3), &cfg).is_err());
    }

    #[test]
    fn stopped_obstacle_is_never_hit() {
        let cfg = EnvConfig::default();
        // Fast follower approaching a vehicle that stops dead.
        let mut state = WorldState {
            vehicles: vec![vehicle(0, 0.0, 33.0), vehicle(0, 200.0, 10.0)],
            step: 0,
        };
        state.vehicles[0].desired_velocity = 33.0;
        let actions = vec![
            VehicleAction::one_hot(Maneuver::KeepLane),
            VehicleAction::one_hot(Maneuver::EmergencyStop),
        ];
        for _ in 0..60 {
            state = step(&state, &actions, &cfg).unwrap().state;
            let gap = state.min_same_lane_gap(&cfg).unwrap();
            assert!(gap >= cfg.min_gap, "gap {gap}");
        }
        assert_eq!(state.vehicles[0].velocity, 0.0);
    }
}
