//! Text format for characteristic tables.
//!
//! ```text
//! n=3
//! mask=3 v=1
//! mask=5 v=1
//! mask=7 v=1
//! ```
//!
//! Masks not listed are worth 0. Blank lines and `#` comments are ignored.

use std::fmt::Write as _;

use super::coalition::{CoalitionMask, MAX_AGENTS};
use super::table::CharacteristicTable;
use crate::error::{Error, Result};

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

pub fn parse_game(text: &str) -> Result<CharacteristicTable> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());

    let (first, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "missing `n=<count>` header"))?;
    let n: usize = header
        .strip_prefix("n=")
        .ok_or_else(|| parse_err(first, "expected `n=<count>` header"))?
        .trim()
        .parse()
        .map_err(|e| parse_err(first, format!("bad agent count: {e}")))?;
    if n > MAX_AGENTS {
        return Err(parse_err(
            first,
            format!("agent count {n} exceeds the limit of {MAX_AGENTS}"),
        ));
    }

    let mut values = vec![0.0; 1 << n];
    let mut seen = vec![false; 1 << n];
    for (line, body) in lines {
        let mut mask = None;
        let mut value = None;
        for field in body.split_whitespace() {
            if let Some(m) = field.strip_prefix("mask=") {
                mask = Some(
                    m.parse::<u64>()
                        .map_err(|e| parse_err(line, format!("bad mask `{m}`: {e}")))?,
                );
            } else if let Some(v) = field.strip_prefix("v=") {
                value = Some(
                    v.parse::<f64>()
                        .map_err(|e| parse_err(line, format!("bad value `{v}`: {e}")))?,
                );
            } else {
                return Err(parse_err(line, format!("unexpected field `{field}`")));
            }
        }
        let mask = mask.ok_or_else(|| parse_err(line, "missing `mask=`"))?;
        let value = value.ok_or_else(|| parse_err(line, "missing `v=`"))?;
        if mask >= 1 << n {
            return Err(parse_err(
                line,
                format!("mask {mask} is outside the {n}-agent game"),
            ));
        }
        let m = mask as usize;
        if seen[m] {
            return Err(parse_err(line, format!("mask {mask} listed twice")));
        }
        if m == 0 && value != 0.0 {
            return Err(parse_err(line, "the empty coalition (mask 0) must be worth 0"));
        }
        if !value.is_finite() || value < 0.0 {
            return Err(parse_err(
                line,
                format!("coalition worth {value} must be finite and nonnegative"),
            ));
        }
        seen[m] = true;
        values[m] = value;
    }
    CharacteristicTable::new(n, values)
}

/// Writes every non-empty coalition, so the output round-trips exactly.
pub fn format_game(game: &CharacteristicTable) -> String {
    let mut out = format!("n={}\n", game.n());
    for c in CoalitionMask::all(game.n()).skip(1) {
        // `{:?}` on f64 prints the shortest representation that parses back exactly.
        let _ = writeln!(out, "mask={} v={:?}", c.bits(), game.value(c));
    }
    out
}
