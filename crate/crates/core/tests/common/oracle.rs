//! Binary fixed-point arithmetic on big integers, used as an independent
//! reference for the loss functions. Values carry `FRAC_BITS` fractional
//! bits; exp and ln are evaluated by plain series, with no max-shift tricks.

use std::ops::{Add, Div, Mul, Neg, Sub};
use std::sync::OnceLock;

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};

pub const FRAC_BITS: u64 = 256;

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Fx(BigInt);

impl Fx {
    pub fn zero() -> Fx {
        Fx(BigInt::zero())
    }

    pub fn one() -> Fx {
        Fx(BigInt::from(1) << FRAC_BITS)
    }

    pub fn int(i: i64) -> Fx {
        Fx(BigInt::from(i) << FRAC_BITS)
    }

    /// Exact for every finite `f64` whose lowest set bit is at or above
    /// `2^-FRAC_BITS`.
    pub fn from_f64(x: f64) -> Fx {
        assert!(x.is_finite(), "oracle input must be finite");
        let bits = x.to_bits();
        let negative = bits >> 63 == 1;
        let exp = ((bits >> 52) & 0x7ff) as i64;
        let frac = bits & ((1u64 << 52) - 1);
        let (mantissa, e) = if exp == 0 {
            (frac, -1074)
        } else {
            (frac | (1u64 << 52), exp - 1075)
        };
        let shift = e + FRAC_BITS as i64;
        let mut v = BigInt::from(mantissa);
        v = if shift >= 0 { v << shift as u64 } else { v >> (-shift) as u64 };
        Fx(if negative { -v } else { v })
    }

    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().expect("finite") * 2f64.powi(-(FRAC_BITS as i32))
    }

    fn shift(&self, k: i64) -> Fx {
        if k >= 0 {
            Fx(&self.0 << k as u64)
        } else {
            Fx(&self.0 >> (-k) as u64)
        }
    }

    pub fn is_positive(&self) -> bool {
        self.0.is_positive()
    }
}

impl Add for &Fx {
    type Output = Fx;
    fn add(self, o: &Fx) -> Fx {
        Fx(&self.0 + &o.0)
    }
}

impl Sub for &Fx {
    type Output = Fx;
    fn sub(self, o: &Fx) -> Fx {
        Fx(&self.0 - &o.0)
    }
}

impl Mul for &Fx {
    type Output = Fx;
    fn mul(self, o: &Fx) -> Fx {
        Fx((&self.0 * &o.0) >> FRAC_BITS)
    }
}

impl Div for &Fx {
    type Output = Fx;
    fn div(self, o: &Fx) -> Fx {
        assert!(!o.0.is_zero(), "division by zero");
        Fx((&self.0 << FRAC_BITS) / &o.0)
    }
}

impl Neg for &Fx {
    type Output = Fx;
    fn neg(self) -> Fx {
        Fx(-&self.0)
    }
}

/// `Σ z^(2n+1) / (2n+1)`, i.e. `atanh(z)` for `|z| < 1`.
fn atanh_series(z: &Fx) -> Fx {
    let z2 = z * z;
    let mut power = z.clone();
    let mut sum = Fx::zero();
    let mut n = 1i64;
    while !power.0.is_zero() {
        let term = Fx(&power.0 / n);
        if term.0.is_zero() {
            break;
        }
        sum = &sum + &term;
        power = &power * &z2;
        n += 2;
    }
    sum
}

pub fn ln2() -> &'static Fx {
    static LN2: OnceLock<Fx> = OnceLock::new();
    // ln 2 = 2 atanh(1/3)
    LN2.get_or_init(|| {
        let third = &Fx::one() / &Fx::int(3);
        let a = atanh_series(&third);
        &a + &a
    })
}

pub fn exp(x: &Fx) -> Fx {
    let k = (x / ln2()).to_f64().round() as i64;
    let r = x - &(&Fx::int(k) * ln2());
    let mut term = Fx::one();
    let mut sum = Fx::one();
    let mut n = 1i64;
    loop {
        term = Fx(&(&term * &r).0 / n);
        if term.0.is_zero() {
            break;
        }
        sum = &sum + &term;
        n += 1;
    }
    sum.shift(k)
}

pub fn ln(y: &Fx) -> Fx {
    assert!(y.is_positive(), "ln of non-positive value");
    let k = y.0.bits() as i64 - 1 - FRAC_BITS as i64;
    let m = y.shift(-k);
    let one = Fx::one();
    let z = &(&m - &one) / &(&m + &one);
    let a = atanh_series(&z);
    &(&Fx::int(k) * ln2()) + &(&a + &a)
}

/// Contrastive matching loss by its defining formula:
/// `Σ_{p ∈ P} (ln Σ_{t ∈ P ∪ N} e^{s_t/τ} − s_p/τ)`.
pub fn matching_loss(positive: &[f64], negative: &[f64], tau: f64) -> f64 {
    if positive.is_empty() {
        return 0.0;
    }
    let tau = Fx::from_f64(tau);
    let scaled: Vec<Fx> = positive.iter().chain(negative).map(|&s| &Fx::from_f64(s) / &tau).collect();
    let mut denom = Fx::zero();
    for z in &scaled {
        denom = &denom + &exp(z);
    }
    let log_denom = ln(&denom);
    let mut total = Fx::zero();
    for z in &scaled[..positive.len()] {
        total = &total + &(&log_denom - z);
    }
    total.to_f64()
}

/// `ln(1 + Σ_P e^{a·p}) + ln(1 + Σ_N e^{−a·p})` with `a = 1` for the
/// verbatim convention and `a = −1` for the standard one.
pub fn classification_loss(positive: &[f64], negative: &[f64], standard: bool) -> f64 {
    let a = if standard { -1 } else { 1 };
    let term = |vals: &[f64], sign: i64| {
        let mut s = Fx::one();
        for &p in vals {
            s = &s + &exp(&(&Fx::int(sign) * &Fx::from_f64(p)));
        }
        ln(&s)
    };
    (&term(positive, a) + &term(negative, -a)).to_f64()
}

pub fn generation_loss(logprobs: &[f64]) -> f64 {
    let mut s = Fx::zero();
    for &v in logprobs {
        s = &s - &Fx::from_f64(v);
    }
    s.to_f64()
}
