//! Integer nanosecond timestamps measured from midnight.
//!
//! LOBSTER files carry decimal seconds with up to nine fractional digits.
//! Parsing goes straight to integer nanoseconds so ordering and interval
//! arithmetic never touch floating point.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Nanoseconds after midnight.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nanos(pub u64);

impl Nanos {
    pub const fn from_secs(secs: u64) -> Self {
        Nanos(secs * NANOS_PER_SEC)
    }

    /// Rounds toward zero at nanosecond resolution.
    pub fn from_secs_f64(secs: f64) -> Self {
        Nanos((secs * NANOS_PER_SEC as f64) as u64)
    }

    pub fn as_secs_f64(self) -> f64 {
        self.0 as f64 / NANOS_PER_SEC as f64
    }

    pub fn saturating_sub(self, other: Nanos) -> u64 {
        self.0.saturating_sub(other.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid decimal time {0:?}")]
pub struct ParseTimeError(pub String);

impl FromStr for Nanos {
    type Err = ParseTimeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseTimeError(s.to_string());
        let (whole, frac) = match s.split_once('.') {
            Some((w, f)) => (w, f),
            None => (s, ""),
        };
        if whole.is_empty() || frac.len() > 9 || !whole.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if !frac.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        let secs: u64 = whole.parse().map_err(|_| err())?;
        let mut frac_ns = 0u64;
        for (i, b) in frac.bytes().enumerate() {
            frac_ns += u64::from(b - b'0') * 10u64.pow(8 - i as u32);
        }
        secs.checked_mul(NANOS_PER_SEC)
            .and_then(|ns| ns.checked_add(frac_ns))
            .map(Nanos)
            .ok_or_else(err)
    }
}

/// Always nine fractional digits, e.g. `34200.189608000`.
impl fmt::Display for Nanos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{:09}", self.0 / NANOS_PER_SEC, self.0 % NANOS_PER_SEC)
    }
}
