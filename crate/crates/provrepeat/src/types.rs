//! Small domain types shared by the simulator, the engine and the stores.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Monotonic logical instant. All timestamps in this crate are logical
/// counters, never wall clock, so that two runs of the same scenario
/// produce byte-identical records.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct LogicalTime(pub u64);

impl LogicalTime {
    pub fn value(self) -> u64 {
        self.0
    }
}

impl fmt::Display for LogicalTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t{}", self.0)
    }
}

/// Monotonic counter handing out [`LogicalTime`] values.
#[derive(Debug, Clone, Default)]
pub struct LogicalClock {
    next: u64,
}

impl LogicalClock {
    pub fn new() -> Self {
        Self::default()
    }

    /// Consume and return the next instant.
    pub fn tick(&mut self) -> LogicalTime {
        let t = LogicalTime(self.next);
        self.next += 1;
        t
    }

    /// The instant the next `tick` would return, without consuming it.
    pub fn now(&self) -> LogicalTime {
        LogicalTime(self.next)
    }
}

/// Principal that owns cloud resources. Plain string identity; the
/// middleware scopes VM listings and nodename uniqueness by owner.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Owner(pub String);

impl Owner {
    pub fn new(name: impl Into<String>) -> Self {
        Owner(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl From<&str> for Owner {
    fn from(s: &str) -> Self {
        Owner(s.to_string())
    }
}

impl fmt::Display for Owner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// SHA-256 digest of produced content, stored as lowercase hex.
///
/// Output repeatability is judged by digest equality, so the algorithm is
/// fixed once here and used for every stdout/stderr/output digest.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContentDigest(String);

impl ContentDigest {
    pub fn of(bytes: &[u8]) -> Self {
        ContentDigest(hex::encode(Sha256::digest(bytes)))
    }

    pub fn as_hex(&self) -> &str {
        &self.0
    }

    /// Shortened form for table rendering.
    pub fn short(&self) -> &str {
        &self.0[..12.min(self.0.len())]
    }
}

impl fmt::Display for ContentDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}
