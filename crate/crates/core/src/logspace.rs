//! Signed log-magnitude numbers for quantities that under- or overflow `f64`.

use serde::{Deserialize, Serialize};
use std::ops::{Add, Mul, Neg};

/// A real number stored as `sign * exp(log_abs)`.
///
/// Zero is represented by `sign == 0` and `log_abs == -inf`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignedLog {
    pub sign: i8,
    pub log_abs: f64,
}

impl SignedLog {
    pub const ZERO: SignedLog = SignedLog {
        sign: 0,
        log_abs: f64::NEG_INFINITY,
    };

    pub fn new(sign: i8, log_abs: f64) -> Self {
        if sign == 0 || log_abs == f64::NEG_INFINITY {
            Self::ZERO
        } else {
            SignedLog {
                sign: sign.signum(),
                log_abs,
            }
        }
    }

    /// Builds `sign(x) * exp(log_abs)` from the sign of `x`.
    pub fn with_sign_of(x: f64, log_abs: f64) -> Self {
        if x > 0.0 {
            Self::new(1, log_abs)
        } else if x < 0.0 {
            Self::new(-1, log_abs)
        } else {
            Self::ZERO
        }
    }

    pub fn from_f64(x: f64) -> Self {
        Self::with_sign_of(x, x.abs().ln())
    }

    /// Converts back to `f64`; underflows to zero and overflows to infinity.
    pub fn to_f64(self) -> f64 {
        if self.sign == 0 {
            0.0
        } else {
            f64::from(self.sign) * self.log_abs.exp()
        }
    }

    pub fn is_zero(self) -> bool {
        self.sign == 0
    }

    pub fn abs(self) -> Self {
        if self.sign == 0 {
            self
        } else {
            SignedLog {
                sign: 1,
                log_abs: self.log_abs,
            }
        }
    }

    /// Multiplies by `exp(shift)`.
    pub fn scale_exp(self, shift: f64) -> Self {
        if self.sign == 0 {
            self
        } else {
            SignedLog {
                sign: self.sign,
                log_abs: self.log_abs + shift,
            }
        }
    }

    /// Natural log of the magnitude ratio `|self| / |other|`.
    pub fn log_ratio(self, other: SignedLog) -> f64 {
        self.log_abs - other.log_abs
    }

    pub fn sum<I: IntoIterator<Item = SignedLog>>(items: I) -> SignedLog {
        // Two-pass log-sum-exp so that large batches stay accurate.
        let items: Vec<SignedLog> = items.into_iter().filter(|v| v.sign != 0).collect();
        let max = items
            .iter()
            .map(|v| v.log_abs)
            .fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return SignedLog::ZERO;
        }
        let acc: f64 = items
            .iter()
            .map(|v| f64::from(v.sign) * (v.log_abs - max).exp())
            .sum();
        SignedLog::with_sign_of(acc, acc.abs().ln() + max)
    }
}

impl Add for SignedLog {
    type Output = SignedLog;
    fn add(self, rhs: SignedLog) -> SignedLog {
        SignedLog::sum([self, rhs])
    }
}

impl Mul for SignedLog {
    type Output = SignedLog;
    fn mul(self, rhs: SignedLog) -> SignedLog {
        SignedLog::new(self.sign * rhs.sign, self.log_abs + rhs.log_abs)
    }
}

impl Neg for SignedLog {
    type Output = SignedLog;
    fn neg(self) -> SignedLog {
        SignedLog {
            sign: -self.sign,
            log_abs: self.log_abs,
        }
    }
}
