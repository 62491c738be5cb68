use super::sim::{lead_of, neighbors_in_lane};
use super::{EnvConfig, Maneuver, VehicleAction, WorldState, LANES};
use crate::error::{invalid, Result};

/// Rule-based stand-in for a human driver.
///
/// Brakes hard when the lead is closer than `d_safe`, tries to overtake when
/// the lead is within `2 d_lc` and an adjacent lane is clear by `2 d_lc` both
/// ways (left first), and otherwise keeps its lane.
pub fn scripted_driver_action(
    state: &WorldState,
    vehicle: usize,
    cfg: &EnvConfig,
) -> Result<VehicleAction> {
    let me = state
        .vehicles
        .get(vehicle)
        .ok_or_else(|| invalid(format!("vehicle {vehicle} out of range")))?;
    if me.is_cav {
        return Err(invalid(format!(
            "vehicle {vehicle} is a CAV and has no scripted driver"
        )));
    }
    let gap = lead_of(state, vehicle, cfg).map(|(_, g)| g);
    if gap.is_some_and(|g| g < cfg.d_safe) {
        return Ok(VehicleAction::one_hot(Maneuver::EmergencyStop));
    }
    if gap.is_some_and(|g| g < 2.0 * cfg.d_lc) {
        let clear = |lane: usize| {
            let (lead, lag) = neighbors_in_lane(state, vehicle, lane, cfg);
            let open = |n: Option<(usize, f64)>| {
                n.is_none_or(|(_, d)| d - cfg.vehicle_length >= 2.0 * cfg.d_lc)
            };
            open(lead) && open(lag)
        };
        if me.lane > 0 && clear(me.lane - 1) {
            return Ok(VehicleAction::one_hot(Maneuver::ChangeLeft));
        }
        if me.lane + 1 < LANES && clear(me.lane + 1) {
            return Ok(VehicleAction::one_hot(Maneuver::ChangeRight));
        }
    }
    Ok(VehicleAction::one_hot(Maneuver::KeepLane))
}
