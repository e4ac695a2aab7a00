//! Operation tallies for the attention kernels.
//!
//! Counting rules, applied uniformly:
//! - an accumulation of one element into a running sum is one `ac`;
//! - a product that is added to a running sum (or stored) is one `mac`;
//! - a threshold test is one `cmp`;
//! - masking by a spike (select) is free.

use std::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounter {
    pub ac: u64,
    pub mac: u64,
    pub cmp: u64,
}

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_ac(&mut self, n: usize) {
        self.ac += n as u64;
    }

    pub fn add_mac(&mut self, n: usize) {
        self.mac += n as u64;
    }

    pub fn add_cmp(&mut self, n: usize) {
        self.cmp += n as u64;
    }

    pub fn total(&self) -> u64 {
        self.ac + self.mac + self.cmp
    }

    pub fn merge(&mut self, other: &OpCounter) {
        *self += *other;
    }
}

impl Add for OpCounter {
    type Output = OpCounter;

    fn add(self, rhs: OpCounter) -> OpCounter {
        OpCounter {
            ac: self.ac + rhs.ac,
            mac: self.mac + rhs.mac,
            cmp: self.cmp + rhs.cmp,
        }
    }
}

impl AddAssign for OpCounter {
    fn add_assign(&mut self, rhs: OpCounter) {
        *self = *self + rhs;
    }
}
