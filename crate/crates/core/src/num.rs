// Copyright 2026 The stv-audit Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Scalar types used for vote weights.
//!
//! The counting engine, margin search and Bayesian trials are generic over
//! [`Weight`]. Exact rationals are the default; the floating point impls exist
//! for large exploratory runs where exact arithmetic is too slow.

use num_bigint::BigInt;
use num_rational::{BigRational, Ratio};
use num_traits::{FromPrimitive, Num, Signed, ToPrimitive, Zero};
use std::fmt::Debug;

/// A nonnegative vote weight or tally.
pub trait Weight: Num + Clone + PartialOrd + Debug + Send + Sync + 'static {
    /// Whether arithmetic on this type is exact.
    const EXACT: bool;

    fn from_count(n: u64) -> Self;

    /// Smallest integer not below `self`, saturating at zero.
    fn ceil_count(&self) -> u64;

    fn to_f64(&self) -> f64;

    /// Exact numerator and denominator as decimal strings.
    fn fraction_parts(&self) -> (String, String);

    fn mul_count(&self, n: u64) -> Self {
        self.clone() * Self::from_count(n)
    }
}

macro_rules! impl_float_weight {
    ($t:ty) => {
        impl Weight for $t {
            const EXACT: bool = false;

            fn from_count(n: u64) -> Self {
                n as $t
            }

            fn ceil_count(&self) -> u64 {
                if *self <= 0.0 {
                    0
                } else {
                    self.ceil() as u64
                }
            }

            fn to_f64(&self) -> f64 {
                *self as f64
            }

            fn fraction_parts(&self) -> (String, String) {
                let exact = BigRational::from_float(*self).unwrap_or_else(BigRational::zero);
                (exact.numer().to_string(), exact.denom().to_string())
            }
        }
    };
}

impl_float_weight!(f32);
impl_float_weight!(f64);

macro_rules! impl_ratio_weight {
    ($int:ty) => {
        impl Weight for Ratio<$int> {
            const EXACT: bool = true;

            fn from_count(n: u64) -> Self {
                Ratio::from_integer(<$int>::from_u64(n).expect("count fits the integer type"))
            }

            fn ceil_count(&self) -> u64 {
                if !self.is_positive() {
                    0
                } else {
                    self.ceil().to_integer().to_u64().unwrap_or(u64::MAX)
                }
            }

            fn to_f64(&self) -> f64 {
                ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
            }

            fn fraction_parts(&self) -> (String, String) {
                (self.numer().to_string(), self.denom().to_string())
            }
        }
    };
}

impl_ratio_weight!(i64);
impl_ratio_weight!(i128);
impl_ratio_weight!(BigInt);

/// `num / den` in the weight type.
pub fn ratio<W: Weight>(num: W, den: u64) -> W {
    if den == 0 {
        W::zero()
    } else {
        num / W::from_count(den)
    }
}
