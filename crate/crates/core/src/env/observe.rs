use super::sim::neighbors_in_lane;
use super::{EnvConfig, WorldState, LANES};

/// Lane one-hot, scaled speed and acceleration, then `(gap, relative speed)`
/// for the lead and lag in each lane.
pub const OBS_DIM: usize = LANES + 2 + 2 * 2 * LANES;

const ABSENT: [f64; 2] = [1.0, 0.0];

/// Fixed-size local view of `vehicle`.
///
/// Neighbour slots are ordered by absolute lane, lead before lag. A neighbour
/// is sensed up to half a loop away, so on a sparse lane the same vehicle is
/// never reported as both lead and lag. Gaps are centre distances over the
/// loop length.
pub fn observe(state: &WorldState, vehicle: usize, cfg: &EnvConfig) -> Vec<f64> {
    let me = &state.vehicles[vehicle];
    let mut obs = Vec::with_capacity(OBS_DIM);
    for lane in 0..LANES {
        obs.push(if me.lane == lane { 1.0 } else { 0.0 });
    }
    obs.push(me.velocity / cfg.v_max);
    obs.push(me.acceleration / cfg.a_max);

    let horizon = cfg.loop_length / 2.0;
    for lane in 0..LANES {
        let (lead, lag) = neighbors_in_lane(state, vehicle, lane, cfg);
        let lead = lead.filter(|(_, d)| *d <= horizon);
        // A lag at exactly half a loop is already reported as the lead.
        let lag = lag.filter(|(j, d)| {
            *d < horizon && lead.is_none_or(|(l, _)| l != *j)
        });
        for slot in [lead, lag] {
            match slot {
                Some((j, d)) => {
                    obs.push(d / cfg.loop_length);
                    obs.push((state.vehicles[j].velocity - me.velocity) / cfg.v_max);
                }
                None => obs.extend_from_slice(&ABSENT),
            }
        }
    }
    debug_assert_eq!(obs.len(), OBS_DIM);
    obs
}

/// Index of the observation entry holding the lead (`lag = false`) or lag
/// gap in `lane`.
#[cfg(test)]
fn slot(lane: usize, lag: bool) -> usize {
    LANES + 2 + 4 * lane + if lag { 2 } else { 0 }
}
