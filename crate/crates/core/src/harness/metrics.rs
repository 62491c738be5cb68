use std::fs;
use std::path::Path;

use crate::env::MPS_TO_MPH;
use crate::error::{Error, Result};
use crate::marl::EpisodeMetrics;

pub const METRICS_HEADER: &str =
    "episode,system_reward,mean_velocity_mps,mean_velocity_mph,mean_comfort,critic_loss,actor_objective";

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub episode: u64,
    pub system_reward: f64,
    pub mean_velocity: f64,
    pub mean_comfort: f64,
    /// NaN when the episode ran no update.
    pub critic_loss: f64,
    pub actor_objective: f64,
}

impl MetricsRecord {
    pub fn from_episode(episode: u64, m: &EpisodeMetrics) -> Self {
        MetricsRecord {
            episode,
            system_reward: m.system_reward,
            mean_velocity: m.mean_velocity,
            mean_comfort: m.mean_comfort,
            critic_loss: m.critic_loss.unwrap_or(f64::NAN),
            actor_objective: m.actor_objective.unwrap_or(f64::NAN),
        }
    }

    pub fn mean_velocity_mph(&self) -> f64 {
        self.mean_velocity * MPS_TO_MPH
    }

    /// Field-wise equality that treats two NaNs as equal.
    pub fn same_as(&self, other: &Self) -> bool {
        let eq = |a: f64, b: f64| a == b || (a.is_nan() && b.is_nan());
        self.episode == other.episode
            && eq(self.system_reward, other.system_reward)
            && eq(self.mean_velocity, other.mean_velocity)
            && eq(self.mean_comfort, other.mean_comfort)
            && eq(self.critic_loss, other.critic_loss)
            && eq(self.actor_objective, other.actor_objective)
    }
}

/// Six significant digits in the style of C's `%g`, trailing zeros removed.
pub fn format_sig6(x: f64) -> String {
    if x.is_nan() {
        return "nan".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if x == 0.0 {
        return "0".into();
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{sign}{:02}", trim_zeros(mantissa), exp.abs())
    } else {
        trim_zeros(&format!("{:.*}", (5 - exp) as usize, x)).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub fn metrics_csv(series: &[MetricsRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in series {
        let fields = [
            r.episode.to_string(),
            format_sig6(r.system_reward),
            format_sig6(r.mean_velocity),
            format_sig6(r.mean_velocity_mph()),
            format_sig6(r.mean_comfort),
            format_sig6(r.critic_loss),
            format_sig6(r.actor_objective),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

pub fn write_metrics(series: &[MetricsRecord], path: &Path) -> Result<()> {
    fs::write(path, metrics_csv(series)).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses a metrics CSV back; the mph column is checked for consistency only.
pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == METRICS_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                msg: "missing metrics header".into(),
            })
        }
    }
    lines
        .map(|(i, l)| {
            let bad = |msg: String| Error::Parse { line: i + 1, msg };
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("expected 7 fields, got {}", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("bad number `{s}`: {e}")));
            Ok(MetricsRecord {
                episode: f[0].parse().map_err(|e| bad(format!("bad episode `{}`: {e}", f[0])))?,
                system_reward: num(f[1])?,
                mean_velocity: num(f[2])?,
                mean_comfort: num(f[4])?,
                critic_loss: num(f[5])?,
                actor_objective: num(f[6])?,
            })
        })
        .collect()
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_metrics(&text)
}

/// Mean of one block of consecutive episodes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowMean {
    pub mean: f64,
    pub len: usize,
    /// The trailing block was shorter than the window.
    pub partial: bool,
}

/// Means over non-overlapping consecutive windows.
pub fn window_mean(series: &[f64], window: usize) -> Result<Vec<WindowMean>> {
    if window == 0 {
        return Err(crate::error::invalid("window must be at least 1"));
    }
    Ok(series
        .chunks(window)
        .map(|c| WindowMean {
            mean: c.iter().sum::<f64>() / c.len() as f64,
            len: c.len(),
            partial: c.len() < window,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn sig6_formatting() {
        assert_eq!(format_sig6(20.0 * MPS_TO_MPH), "44.7388");
        assert_eq!(format_sig6(0.0), "0");
        assert_eq!(format_sig6(1.0), "1");
        assert_eq!(format_sig6(-2.5), "-2.5");
        assert_eq!(format_sig6(1234567.0), "1.23457e+06");
        assert_eq!(format_sig6(999999.7), "1e+06");
        assert_eq!(format_sig6(0.0001234567), "0.000123457");
        assert_eq!(format_sig6(0.00001234567), "1.23457e-05");
        assert_eq!(format_sig6(f64::NAN), "nan");
        assert_eq!(format_sig6(2.0 / 3.0), "0.666667");
    }

    #[test]
    fn window_examples() {
        let w = window_mean(&[1.0, 2.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(w.iter().map(|x| x.mean).collect::<Vec<_>>(), vec![1.5, 3.5]);
        assert!(w.iter().all(|x| !x.partial));
        let w = window_mean(&[1.0, 2.0, 3.0, 4.0, 5.0], 2).unwrap();
        assert_eq!(w[2], WindowMean { mean: 5.0, len: 1, partial: true });
        let id = window_mean(&[3.0, 1.0], 1).unwrap();
        assert_eq!(id.iter().map(|x| x.mean).collect::<Vec<_>>(), vec![3.0, 1.0]);
        assert!(window_mean(&[], 3).unwrap().is_empty());
        assert!(window_mean(&[1.0], 0).is_err());
    }

    #[test]
    fn empty_series_writes_header_only() {
        assert_eq!(metrics_csv(&[]), format!("{METRICS_HEADER}\n"));
    }

    #[test]
    fn bad_csv_is_rejected() {
        assert!(parse_metrics("").is_err());
        assert!(parse_metrics(&format!("{METRICS_HEADER}\n1,2,3")).is_err());
    }

    proptest! {
        #[test]
        fn window_totals_are_preserved(series in proptest::collection::vec(0.0f64..1e4, 0..50), w in 1usize..12) {
            let total: f64 = series.iter().sum();
            let back: f64 = window_mean(&series, w).unwrap().iter().map(|x| x.mean * x.len as f64).sum();
            prop_assert!((total - back).abs() <= 1e-9 * (1.0 + total));
        }

        #[test]
        fn csv_round_trips_to_six_digits(
            reward in 0.0f64..1e5, v in 0.0f64..33.0, c in 0.0f64..3.0, loss in proptest::option::of(0.0f64..1e3),
        ) {
            let r = MetricsRecord {
                episode: 7,
                system_reward: reward,
                mean_velocity: v,
                mean_comfort: c,
                critic_loss: loss.unwrap_or(f64::NAN),
                actor_objective: -1.5,
            };
            let back = &parse_metrics(&metrics_csv(std::slice::from_ref(&r))).unwrap()[0];
            let close = |a: f64, b: f64| (a.is_nan() && b.is_nan()) || (a - b).abs() <= 5e-6 * a.abs().max(1e-300);
            prop_assert!(close(r.system_reward, back.system_reward));
            prop_assert!(close(r.mean_velocity, back.mean_velocity));
            prop_assert!(close(r.mean_comfort, back.mean_comfort));
            prop_assert!(close(r.critic_loss, back.critic_loss));
            prop_assert_eq!(back.actor_objective, -1.5);
        }
    }
}
