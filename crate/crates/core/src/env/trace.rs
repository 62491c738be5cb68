use super::{VehicleAction, WorldState};

pub fn trace_header() -> &'static str {
    "step,vehicle,lane,position,velocity,acceleration,action,reward"
}

/// One CSV row per vehicle for the state reached after a step.
///
/// Reals use the shortest round-trip representation so rewards can be summed
/// back exactly.
pub fn trace_rows(state: &WorldState, actions: &[VehicleAction], rewards: &[f64]) -> Vec<String> {
    state
        .vehicles
        .iter()
        .zip(actions)
        .zip(rewards)
        .enumerate()
        .map(|(i, ((v, a), r))| {
            format!(
                "{},{},{},{:?},{:?},{:?},{},{:?}",
                state.step, i, v.lane, v.position, v.velocity, v.acceleration, a.discrete, r
            )
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{reset, step, EnvConfig, Maneuver};

    #[test]
    fn rows_parse_back() {
        let cfg = EnvConfig::default();
        let s = reset(&cfg, 4).unwrap();
        let actions = vec![VehicleAction::one_hot(Maneuver::KeepLane); cfg.n_vehicles];
        let out = step(&s, &actions, &cfg).unwrap();
        let rows = trace_rows(&out.state, &actions, &out.rewards);
        assert_eq!(rows.len(), cfg.n_vehicles);
        let cols = trace_header().split(',').count();
        for (row, r) in rows.iter().zip(&out.rewards) {
            let fields: Vec<&str> = row.split(',').collect();
            assert_eq!(fields.len(), cols);
            assert_eq!(fields[0], "1");
            assert_eq!(fields[6], "KL");
            assert_eq!(fields[7].parse::<f64>().unwrap(), *r);
        }
    }
}
