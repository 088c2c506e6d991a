//! Fixed-point gradient sums.
//!
//! Every per-instance `g` and `h` is rounded once onto a 2^-40 grid and summed as
//! integers. Integer addition is associative and commutative, so histograms merged
//! across any number of workers, in any arrival order, are bit-identical to a
//! single-worker accumulation. That in turn makes trained models independent of how
//! rows are sharded.
//!
//! Sums wrap on overflow; the final value is exact as long as the true sum of
//! `|g| * 2^40` fits in an `i64`, i.e. for fewer than 2^23 instances per node.

use core::ops::{Add, AddAssign, Sub};

use serde::{Deserialize, Serialize};

use crate::loss::GradPair;

pub const FIXED_BITS: i32 = 40;
const FIXED_ONE: f64 = (1u64 << FIXED_BITS) as f64;

#[inline]
pub fn to_fixed(x: f64) -> i64 {
    libm::round(x * FIXED_ONE) as i64
}

#[inline]
pub fn from_fixed(q: i64) -> f64 {
    q as f64 / FIXED_ONE
}

/// Sum of (g, h, count) over a group of instances.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct GradStats {
    pub g: i64,
    pub h: i64,
    pub count: u64,
}

impl GradStats {
    pub const ZERO: Self = Self { g: 0, h: 0, count: 0 };

    pub fn from_pair(pair: GradPair) -> Self {
        Self { g: to_fixed(pair.g), h: to_fixed(pair.h), count: 1 }
    }

    pub fn grad(&self) -> f64 {
        from_fixed(self.g)
    }

    pub fn hess(&self) -> f64 {
        from_fixed(self.h)
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }
}

impl Add for GradStats {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self {
            g: self.g.wrapping_add(o.g),
            h: self.h.wrapping_add(o.h),
            count: self.count.wrapping_add(o.count),
        }
    }
}

impl AddAssign for GradStats {
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl Sub for GradStats {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self {
            g: self.g.wrapping_sub(o.g),
            h: self.h.wrapping_sub(o.h),
            count: self.count.wrapping_sub(o.count),
        }
    }
}

/// Exact, order-independent sum of per-instance losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct LossSum {
    pub fixed: i128,
    pub count: u64,
}

impl LossSum {
    pub fn push(&mut self, loss: f64) {
        self.fixed += libm::round(loss * FIXED_ONE) as i128;
        self.count += 1;
    }

    pub fn merge(&mut self, other: LossSum) {
        self.fixed += other.fixed;
        self.count += other.count;
    }

    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.fixed as f64 / FIXED_ONE) / self.count as f64
        }
    }
}
