use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

/// Exact operation counts for a piece of work.
///
/// `attention_pairs` counts query-key score computations summed over heads;
/// `macs` counts multiply-accumulates in the dense projections and
/// feed-forward layers (attention score and mixing products are reported
/// through `attention_pairs` only).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OpCounters {
    pub attention_pairs: u64,
    pub macs: u64,
}

impl OpCounters {
    pub fn new(attention_pairs: u64, macs: u64) -> Self {
        Self {
            attention_pairs,
            macs,
        }
    }
}

impl AddAssign for OpCounters {
    fn add_assign(&mut self, rhs: Self) {
        self.attention_pairs += rhs.attention_pairs;
        self.macs += rhs.macs;
    }
}

impl Add for OpCounters {
    type Output = OpCounters;

    fn add(mut self, rhs: Self) -> Self {
        self += rhs;
        self
    }
}

impl std::iter::Sum for OpCounters {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), Add::add)
    }
}
