//! Millisecond durations written with a unit suffix (`250ms`, `5s`, `30m`, `1h`).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DurationError {
    #[error("empty duration")]
    Empty,
    #[error("invalid duration `{0}`: expected digits followed by ms, s, m or h")]
    Syntax(String),
    #[error("unknown duration unit `{0}`")]
    UnknownUnit(String),
    #[error("duration `{0}` overflows")]
    Overflow(String),
}

/// Multiplier from a unit suffix to milliseconds. Units are case-sensitive:
/// `m` is minutes, `ms` milliseconds.
pub fn unit_millis(unit: &str) -> Option<u64> {
    match unit {
        "ms" => Some(1),
        "s" => Some(1_000),
        "m" => Some(60_000),
        "h" => Some(3_600_000),
        _ => None,
    }
}

/// Parses `<digits><unit>`. A bare integer is taken as milliseconds.
pub fn parse_millis(text: &str) -> Result<u64, DurationError> {
    let text = text.trim();
    if text.is_empty() {
        return Err(DurationError::Empty);
    }
    let split = text
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(text.len());
    let (digits, unit) = text.split_at(split);
    if digits.is_empty() {
        return Err(DurationError::Syntax(text.to_string()));
    }
    let value: u64 = digits
        .parse()
        .map_err(|_| DurationError::Overflow(text.to_string()))?;
    let factor = if unit.is_empty() {
        1
    } else {
        unit_millis(unit).ok_or_else(|| DurationError::UnknownUnit(unit.to_string()))?
    };
    value
        .checked_mul(factor)
        .ok_or_else(|| DurationError::Overflow(text.to_string()))
}

/// Canonical text: the largest unit that divides the value exactly.
pub fn format_millis(ms: u64) -> String {
    if ms == 0 {
        return "0s".to_string();
    }
    for (unit, factor) in [("h", 3_600_000), ("m", 60_000), ("s", 1_000)] {
        if ms % factor == 0 {
            return format!("{}{}", ms / factor, unit);
        }
    }
    format!("{ms}ms")
}

/// A duration in milliseconds that (de)serializes as `"30m"` or a bare integer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Millis(pub u64);

impl Millis {
    pub fn get(self) -> u64 {
        self.0
    }
}

impl fmt::Display for Millis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&format_millis(self.0))
    }
}

impl FromStr for Millis {
    type Err = DurationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        parse_millis(s).map(Millis)
    }
}

impl Serialize for Millis {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&format_millis(self.0))
    }
}

impl<'de> Deserialize<'de> for Millis {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(u64),
            Text(String),
        }
        match Raw::deserialize(deserializer)? {
            Raw::Int(ms) => Ok(Millis(ms)),
            Raw::Text(text) => parse_millis(&text)
                .map(Millis)
                .map_err(serde::de::Error::custom),
        }
    }
}
