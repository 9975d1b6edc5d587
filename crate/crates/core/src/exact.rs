//! Exact arithmetic helpers: big rationals, powers of a fixed integer base in
//! logarithmic form, and integer root extraction.
//!
//! Every inequality in the parameter ledger is decided here without floating
//! point. Quantities of the form `coeff * a^exp` (coeff, exp rational, `a` the
//! schedule base) are compared by reducing to a big-integer comparison
//! `a^p <=> c^s`, falling back to refinable log2 bounds when the integer
//! comparison would be astronomically large.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use std::cmp::Ordering;

pub type Rat = BigRational;

/// Parse "p/q", "p" or a decimal like "0.25" into an exact rational.
pub fn parse_rat(s: &str) -> Option<Rat> {
    let s = s.trim();
    if let Some((num, den)) = s.split_once('/') {
        let n: BigInt = num.trim().parse().ok()?;
        let d: BigInt = den.trim().parse().ok()?;
        if d.is_zero() {
            return None;
        }
        return Some(Rat::new(n, d));
    }
    if let Some((int, frac)) = s.split_once('.') {
        let digits = frac.len() as u32;
        let int_part: BigInt = if int.is_empty() || int == "-" {
            BigInt::zero()
        } else {
            int.parse().ok()?
        };
        let frac_part: BigInt = frac.parse().ok()?;
        let den = BigInt::from(10u32).pow(digits);
        let neg = int.starts_with('-');
        let num = &int_part * &den + if neg { -&frac_part } else { frac_part.clone() };
        return Some(Rat::new(num, den));
    }
    let n: BigInt = s.parse().ok()?;
    Some(Rat::from_integer(n))
}

pub fn rat_i64(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

pub fn rat_frac(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_to_f64(r: &Rat) -> f64 {
    r.to_f64().unwrap_or(f64::NAN)
}

/// Floor of the n-th root of a non-negative big integer (Newton iteration).
pub fn nth_root_floor(x: &BigUint, n: u32) -> BigUint {
    if n == 0 {
        panic!("0th root");
    }
    if n == 1 || x.is_zero() || x.is_one() {
        return x.clone();
    }
    let bits = x.bits();
    let mut guess = BigUint::one() << (bits / u64::from(n) + 1);
    let n_big = BigUint::from(n);
    let nm1 = BigUint::from(n - 1);
    loop {
        // next = ((n-1)*guess + x / guess^(n-1)) / n
        let gp = guess.pow(n - 1);
        let next = (&nm1 * &guess + x / gp) / &n_big;
        if next >= guess {
            return guess;
        }
        guess = next;
    }
}

/// True iff `x` is an exact n-th power.
pub fn is_perfect_power(x: &BigUint, n: u32) -> bool {
    let r = nth_root_floor(x, n);
    r.pow(n) == *x
}

/// The integer base `a` of the schedule, with a fast path when it is a power
/// of two (the paper takes `a` from 2^(36 b^2 N)).
#[derive(Clone, Debug)]
pub struct ExactBase {
    value: BigUint,
    log2_exact: Option<u64>,
}

/// Bit budget beyond which we refuse to materialise a^p and use log bounds.
const MAX_EXACT_BITS: u64 = 40_000_000;

impl ExactBase {
    pub fn new(value: BigUint) -> Option<Self> {
        if value < BigUint::from(2u32) {
            return None;
        }
        let log2_exact = if (&value & (&value - 1u32)).is_zero() {
            Some(value.bits() - 1)
        } else {
            None
        };
        Some(ExactBase { value, log2_exact })
    }

    pub fn two_pow(k: u64) -> Self {
        ExactBase {
            value: BigUint::one() << k,
            log2_exact: Some(k),
        }
    }

    pub fn from_u64(v: u64) -> Option<Self> {
        Self::new(BigUint::from(v))
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn bits(&self) -> u64 {
        self.value.bits()
    }

    pub fn log2_f64(&self) -> f64 {
        if let Some(k) = self.log2_exact {
            return k as f64;
        }
        // bits-based mantissa extraction, good to ~1e-15 relative
        let bits = self.value.bits();
        if bits <= 53 {
            return self.value.to_f64().unwrap().log2();
        }
        let shift = bits - 53;
        let top: BigUint = &self.value >> shift;
        top.to_f64().unwrap().log2() + shift as f64
    }

    /// Exact rational bounds (lo, hi) with log2(a) in [lo, hi], width 1/m.
    fn log2_bounds(&self, m: u32) -> (Rat, Rat) {
        if let Some(k) = self.log2_exact {
            let e = Rat::from_integer(BigInt::from(k));
            return (e.clone(), e);
        }
        let pow = self.value.pow(m);
        let c = pow.bits() - 1; // 2^c <= a^m < 2^(c+1)
        let lo = Rat::new(BigInt::from(c), BigInt::from(m));
        let hi = Rat::new(BigInt::from(c + 1), BigInt::from(m));
        (lo, hi)
    }

    /// a^e as f64 (may overflow to inf for proof-scale exponents).
    pub fn pow_f64(&self, e: &Rat) -> f64 {
        (rat_to_f64(e) * self.log2_f64()).exp2()
    }

    /// log2(a^e) = e*log2(a) as f64, always finite for finite e.
    pub fn log2_pow_f64(&self, e: &Rat) -> f64 {
        rat_to_f64(e) * self.log2_f64()
    }

    /// Exact a^e as a big integer when e is a non-negative integer small
    /// enough to materialise.
    pub fn pow_exact_int(&self, e: &Rat) -> Option<BigUint> {
        if !e.is_integer() || e.is_negative() {
            return None;
        }
        let p = e.to_integer().to_u64()?;
        if p.checked_mul(self.bits())? > MAX_EXACT_BITS {
            return None;
        }
        Some(self.value.pow(u32::try_from(p).ok()?))
    }

    /// Is a^e an integer? Exact: write e = p/s (reduced, e >= 0); a^e ∈ ℕ iff
    /// a^p is a perfect s-th power.
    pub fn pow_is_integer(&self, e: &Rat) -> Option<bool> {
        if e.is_negative() {
            return Some(false);
        }
        if e.is_integer() {
            return Some(true);
        }
        let p = e.numer().to_u64()?;
        let s = e.denom().to_u64()?;
        if let Some(k) = self.log2_exact {
            // 2^(k p / s) integer iff s | k p
            return Some((k as u128 * p as u128) % (s as u128) == 0);
        }
        if p.checked_mul(self.bits())? > MAX_EXACT_BITS {
            return None;
        }
        let big = self.value.pow(u32::try_from(p).ok()?);
        Some(is_perfect_power(&big, u32::try_from(s).ok()?))
    }

    /// Compare a^e with a positive rational c, exactly.
    ///
    /// Strategy: a^(p/s) <=> c  iff  a^p <=> c^s. When that comparison is too
    /// large to materialise we bracket e*log2(a) against log2(c) with
    /// refinable rational bounds; equality then implies the integer case is
    /// reachable, so `None` is returned only for genuinely inaccessible sizes.
    pub fn pow_cmp_rat(&self, e: &Rat, c: &Rat) -> Option<Ordering> {
        assert!(c.is_positive(), "pow_cmp_rat needs c > 0");
        if e.is_zero() {
            return Some(Rat::one().cmp(c));
        }
        if e.is_negative() {
            // a^e <=> c  iff  1/c <=> a^(-e)
            let inv = Rat::one() / c;
            return self.pow_cmp_rat(&(-e), &inv).map(Ordering::reverse);
        }
        let p = e.numer().to_u64()?;
        let s = e.denom().to_u64()?;
        // exact path: a^p vs (cn/cd)^s  ==  a^p * cd^s vs cn^s
        let cn = c.numer().magnitude();
        let cd = c.denom().magnitude();
        let exact_bits = p
            .checked_mul(self.bits())
            .and_then(|x| x.checked_add(s.checked_mul(cn.bits().max(cd.bits()))?));
        if let Some(bits) = exact_bits {
            if bits <= MAX_EXACT_BITS {
                let lhs = self.value.pow(u32::try_from(p).ok()?) * cd.pow(u32::try_from(s).ok()?);
                let rhs = cn.pow(u32::try_from(s).ok()?);
                return Some(lhs.cmp(&rhs));
            }
        }
        // log-bound path with geometric refinement
        let target = rat_log2_bounds(c, 1 << 20);
        let mut m = 64u32;
        while m <= 1 << 14 {
            let (zlo, zhi) = self.log2_bounds(m);
            let lhs_lo = e * &zlo;
            let lhs_hi = e * &zhi;
            if lhs_lo > target.1 {
                return Some(Ordering::Greater);
            }
            if lhs_hi < target.0 {
                return Some(Ordering::Less);
            }
            m *= 4;
        }
        None
    }

    /// Decide a^e1 - a^e2 >= 1 exactly (the chi_q transition-band check).
    pub fn gap_at_least_one(&self, e1: &Rat, e2: &Rat) -> Option<bool> {
        if e1 <= e2 {
            return Some(false); // non-positive gap
        }
        let d = e1 - e2;
        if !e2.is_negative() {
            // a^e2 >= 1, so a^d >= 2 implies gap >= a^e2 * (2-1) >= 1
            match self.pow_cmp_rat(&d, &rat_i64(2))? {
                Ordering::Greater | Ordering::Equal => return Some(true),
                Ordering::Less => {}
            }
        }
        // narrow band: try the exact integer route
        if let (Some(x1), Some(x2)) = (self.pow_exact_int(e1), self.pow_exact_int(e2)) {
            return Some(x1 >= x2 + BigUint::one());
        }
        // float view with a generous margin; values here are desk scale
        let v1 = self.pow_f64(e1);
        let v2 = self.pow_f64(e2);
        let gap = v1 - v2;
        if (gap - 1.0).abs() < 1e-9 * v1.max(1.0) {
            return None; // too close to call without exact values
        }
        Some(gap >= 1.0)
    }
}

/// Rational bounds on log2 of a positive rational, width ~1/prec.
fn rat_log2_bounds(c: &Rat, prec: u64) -> (Rat, Rat) {
    // log2(c) = log2(num) - log2(den); bound each integer by squaring trick
    fn int_log2_bounds(x: &BigUint, prec: u64) -> (Rat, Rat) {
        if x.is_one() {
            return (Rat::zero(), Rat::zero());
        }
        // find m with x^m having enough bits for the precision
        let mut m = 1u32;
        while u64::from(m) * (x.bits() - 1).max(1) < prec && m < 1 << 16 {
            m *= 2;
        }
        let pow = x.pow(m);
        let cbits = pow.bits() - 1;
        (
            Rat::new(BigInt::from(cbits), BigInt::from(m)),
            Rat::new(BigInt::from(cbits + 1), BigInt::from(m)),
        )
    }
    let (nlo, nhi) = int_log2_bounds(c.numer().magnitude(), prec);
    let (dlo, dhi) = int_log2_bounds(c.denom().magnitude(), prec);
    (nlo - dhi, nhi - dlo)
}

/// A positive quantity `coeff * a^exp` stored exactly in log_a form.
#[derive(Clone, Debug)]
pub struct LogVal {
    pub coeff: Rat,
    pub exp: Rat,
}

impl LogVal {
    pub fn new(coeff: Rat, exp: Rat) -> Self {
        assert!(coeff.is_positive(), "LogVal coefficient must be positive");
        LogVal { coeff, exp }
    }

    pub fn pure_power(exp: Rat) -> Self {
        LogVal {
            coeff: Rat::one(),
            exp,
        }
    }

    pub fn mul(&self, other: &LogVal) -> LogVal {
        LogVal {
            coeff: &self.coeff * &other.coeff,
            exp: &self.exp + &other.exp,
        }
    }

    pub fn f64(&self, base: &ExactBase) -> f64 {
        rat_to_f64(&self.coeff) * base.pow_f64(&self.exp)
    }

    /// log2 of the value; robust when the f64 view over/underflows.
    pub fn log2_f64(&self, base: &ExactBase) -> f64 {
        rat_to_f64(&self.coeff).log2() + base.log2_pow_f64(&self.exp)
    }

    /// Exact comparison: c1 a^e1 <=> c2 a^e2  iff  a^(e1-e2) <=> c2/c1.
    pub fn cmp(&self, other: &LogVal, base: &ExactBase) -> Option<Ordering> {
        let e = &self.exp - &other.exp;
        let c = &other.coeff / &self.coeff;
        base.pow_cmp_rat(&e, &c)
    }

    pub fn to_string_exact(&self) -> String {
        if self.coeff.is_one() {
            format!("a^({})", self.exp)
        } else {
            format!("{} * a^({})", self.coeff, self.exp)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_forms() {
        assert_eq!(parse_rat("2/3087").unwrap(), rat_frac(2, 3087));
        assert_eq!(parse_rat("0.25").unwrap(), rat_frac(1, 4));
        assert_eq!(parse_rat("-3").unwrap(), rat_i64(-3));
        assert_eq!(parse_rat("1e"), None);
    }

    #[test]
    fn roots() {
        let x = BigUint::from(59049u32); // 3^10
        assert_eq!(nth_root_floor(&x, 10), BigUint::from(3u32));
        assert!(is_perfect_power(&x, 5));
        assert!(!is_perfect_power(&BigUint::from(59050u32), 5));
    }

    #[test]
    fn pow_cmp_small_base() {
        let a = ExactBase::from_u64(2).unwrap();
        // 2^(1/18) vs 1.04: 2 vs 1.04^18 = 2.025... -> less
        let c = parse_rat("1.04").unwrap();
        assert_eq!(
            a.pow_cmp_rat(&rat_frac(1, 18), &c),
            Some(Ordering::Less)
        );
        assert_eq!(
            a.pow_cmp_rat(&rat_frac(1, 18), &parse_rat("1.03").unwrap()),
            Some(Ordering::Greater)
        );
    }

    #[test]
    fn pow_cmp_proof_base() {
        // a = 2^1764, check 2 < a^(1/42) = 2^42
        let a = ExactBase::two_pow(1764);
        assert_eq!(
            a.pow_cmp_rat(&rat_frac(1, 42), &rat_i64(2)),
            Some(Ordering::Greater)
        );
        // integrality of a^(1/1764) = 2
        assert_eq!(a.pow_is_integer(&rat_frac(1, 1764)), Some(true));
        assert_eq!(a.pow_is_integer(&rat_frac(1, 1765)), Some(false));
    }

    #[test]
    fn pow_is_integer_general_base() {
        let a = ExactBase::from_u64(8).unwrap(); // 2^3 detected as power of two
        assert_eq!(a.pow_is_integer(&rat_frac(1, 3)), Some(true));
        let a = ExactBase::from_u64(6).unwrap();
        assert_eq!(a.pow_is_integer(&rat_frac(1, 2)), Some(false));
        assert_eq!(a.pow_is_integer(&rat_i64(3)), Some(true));
    }

    #[test]
    fn gap_check_examples() {
        // proof scale: a = 2^(36*49), gamma = 2/3087, q=0:
        // hi = a^(b^3 g/4) = 2^98, lo = a^(b^2 g) = 2^56, gap huge
        let a = ExactBase::two_pow(1764);
        let e_hi = rat_frac(343 * 2, 3087 * 4);
        let e_lo = rat_frac(49 * 2, 3087);
        assert_eq!(a.gap_at_least_one(&e_hi, &e_lo), Some(true));
        // desk scale: a = 2 -> gap = 2^(1/18) - 2^(2/63) ~ 0.017 < 1
        let a2 = ExactBase::from_u64(2).unwrap();
        assert_eq!(a2.gap_at_least_one(&e_hi, &e_lo), Some(false));
        // degenerate band
        assert_eq!(a2.gap_at_least_one(&e_lo, &e_lo), Some(false));
    }

    #[test]
    fn logval_compare() {
        let a = ExactBase::from_u64(2).unwrap();
        // delta_2 = 1/2 vs delta_3 = (1/2) a^(2*beta*(49-343)) with beta=1/4: exponent -147
        let d2 = LogVal::new(rat_frac(1, 2), Rat::zero());
        let d3 = LogVal::new(rat_frac(1, 2), rat_i64(-147));
        assert_eq!(d2.cmp(&d3, &a), Some(Ordering::Greater));
        assert!((d2.f64(&a) - 0.5).abs() < 1e-15);
    }
}
