//! Double-double arithmetic (about 32 significant digits) and a small real-number
//! trait so the finite-difference losses can be evaluated beyond f64 precision.

use std::cmp::Ordering;
use std::ops::{Add, Div, Mul, Neg, Sub};

pub trait Real:
    Copy
    + PartialOrd
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn tanh(self) -> Self;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn to_f64(self) -> f64 {
        self
    }
    fn exp(self) -> Self {
        f64::exp(self)
    }
    fn tanh(self) -> Self {
        f64::tanh(self)
    }
}

/// An unevaluated sum `hi + lo` with `|lo| <= ulp(hi) / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

const LN2: DoubleDouble = DoubleDouble {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

impl DoubleDouble {
    pub fn new(x: f64) -> Self {
        DoubleDouble { hi: x, lo: 0.0 }
    }

    fn from_parts(hi: f64, lo: f64) -> Self {
        let (hi, lo) = quick_two_sum(hi, lo);
        DoubleDouble { hi, lo }
    }

    fn scale_pow2(self, k: i32) -> Self {
        let f = 2f64.powi(k);
        DoubleDouble {
            hi: self.hi * f,
            lo: self.lo * f,
        }
    }

    /// `exp(x) - 1` by Taylor series, for small `|x|`.
    fn expm1_small(self) -> Self {
        let mut term = self;
        let mut sum = self;
        for n in 2..30 {
            term = term * self / DoubleDouble::new(n as f64);
            sum = sum + term;
            if term.hi.abs() < 1e-36 * sum.hi.abs().max(1e-300) {
                break;
            }
        }
        sum
    }

    fn expm1(self) -> Self {
        if self.hi.abs() < 0.5 {
            self.expm1_small()
        } else {
            self.exp() - DoubleDouble::new(1.0)
        }
    }
}

impl Add for DoubleDouble {
    type Output = Self;
    fn add(self, b: Self) -> Self {
        let (s, e) = two_sum(self.hi, b.hi);
        let (t, f) = two_sum(self.lo, b.lo);
        let (s, e) = quick_two_sum(s, e + t);
        DoubleDouble::from_parts(s, e + f)
    }
}

impl Neg for DoubleDouble {
    type Output = Self;
    fn neg(self) -> Self {
        DoubleDouble {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleDouble {
    type Output = Self;
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleDouble {
    type Output = Self;
    fn mul(self, b: Self) -> Self {
        let (p, e) = two_prod(self.hi, b.hi);
        DoubleDouble::from_parts(p, e + (self.hi * b.lo + self.lo * b.hi))
    }
}

impl Div for DoubleDouble {
    type Output = Self;
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        let r = self - b * DoubleDouble::new(q1);
        let q2 = r.hi / b.hi;
        let r = r - b * DoubleDouble::new(q2);
        let q3 = r.hi / b.hi;
        DoubleDouble::from_parts(q1, q2) + DoubleDouble::new(q3)
    }
}

impl PartialOrd for DoubleDouble {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match self.hi.partial_cmp(&other.hi)? {
            Ordering::Equal => self.lo.partial_cmp(&other.lo),
            o => Some(o),
        }
    }
}

impl Real for DoubleDouble {
    fn from_f64(x: f64) -> Self {
        DoubleDouble::new(x)
    }

    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn exp(self) -> Self {
        if self.hi > 709.0 {
            return DoubleDouble::new(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return DoubleDouble::new(0.0);
        }
        // x = k ln2 + r, then exp(r) = (1 + expm1(r / 1024))^1024
        let k = (self.hi / LN2.hi).round();
        let r = (self - LN2 * DoubleDouble::new(k)).scale_pow2(-10);
        let mut m = r.expm1_small();
        for _ in 0..10 {
            // expm1(2y) = 2 expm1(y) + expm1(y)^2
            m = m.scale_pow2(1) + m * m;
        }
        (m + DoubleDouble::new(1.0)).scale_pow2(k as i32)
    }

    fn tanh(self) -> Self {
        if self.hi.abs() > 40.0 {
            return DoubleDouble::new(self.hi.signum());
        }
        let neg = self.hi < 0.0;
        let x = if neg { -self } else { self };
        // tanh(x) = -expm1(-2x) / (2 + expm1(-2x))
        let m = (-(x.scale_pow2(1))).expm1();
        let t = -m / (DoubleDouble::new(2.0) + m);
        if neg {
            -t
        } else {
            t
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DoubleDouble {
        DoubleDouble::new(x)
    }

    #[test]
    fn recovers_bits_lost_in_f64() {
        let third = dd(1.0) / dd(3.0);
        let back = third * dd(3.0) - dd(1.0);
        assert!(back.to_f64().abs() < 1e-31);
        let tiny = (dd(1.0) + dd(1e-20)) - dd(1.0);
        assert!((tiny.to_f64() - 1e-20).abs() < 1e-35);
    }

    #[test]
    fn exp_and_tanh_agree_with_f64() {
        for x in [-20.0, -3.3, -0.7, -1e-3, 0.0, 1e-8, 0.25, 1.0, 2.5, 17.0] {
            let e = Real::exp(dd(x)).to_f64();
            assert!((e - x.exp()).abs() <= 4.0 * f64::EPSILON * x.exp(), "exp {x}");
            let t = Real::tanh(dd(x)).to_f64();
            assert!((t - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs().max(1e-300), "tanh {x}");
        }
    }

    #[test]
    fn exp_is_beyond_double_precision() {
        // exp(1) = 2.718281828459045235360287471352662497757...
        let e = Real::exp(dd(1.0));
        let reference = DoubleDouble::from_parts(2.718_281_828_459_045, 1.445_646_891_729_250_2e-16);
        assert!((e - reference).to_f64().abs() < 1e-30);
        // exp(a) exp(-a) = 1
        let a = dd(0.377);
        let one = Real::exp(a) * Real::exp(-a);
        assert!((one - dd(1.0)).to_f64().abs() < 1e-30);
    }
}
