//! Parameter schedule of the convex-integration construction: the scalars
//! (a, b, beta, gamma, sigma, r, L, m, alpha), the derived sequences
//! lambda_q, delta_q, ell(q), f(q) and the cutoff thresholds, plus the exact
//! inequality ledger that the construction relies on.

pub mod ledger;

use crate::error::{Error, Result};
use crate::exact::{rat_i64, ExactBase, LogVal, Rat};
use num_bigint::BigUint;
use num_traits::{One, Signed, Zero};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;

pub use ledger::{LedgerEntryKind, LedgerReport, LedgerRow, Verdict};

/// Proof mode keeps ledger-grade exactness and forbids field allocation;
/// desk mode computes fields with small `a` and waives the ledger items that
/// only hold for astronomically large bases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunMode {
    Proof,
    Desk,
}

/// Bounds on the prescribed energy profile e(t).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnergyBounds {
    /// lower bound e_ ("underline e")
    pub e_lo: f64,
    /// upper bound e-bar
    pub e_hi: f64,
    /// bound on |e'(t)|
    pub e_prime_max: f64,
}

/// Raw inputs to `build_schedule`, serde-friendly (rationals as strings).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScheduleInputs {
    /// base `a`: either a small integer or a power of two
    pub a: BaseSpec,
    pub b: u32,
    pub beta: String,
    pub gamma: String,
    pub sigma: String,
    pub r: String,
    #[serde(rename = "L")]
    pub l_noise: f64,
    pub m: u32,
    pub alpha: String,
    /// c_R; if absent, defaults to c_star/2
    #[serde(default)]
    pub c_r: Option<f64>,
    /// admissibility radius of the geometric coefficients; if absent the
    /// compiled-in direction sets supply their computed radius
    #[serde(default)]
    pub c_star: Option<f64>,
    pub energy: EnergyBounds,
    /// universal constant M-bar of the velocity-increment bound
    #[serde(default)]
    pub m_bar: Option<f64>,
    /// universal constant M bounding the gamma_xi norms
    #[serde(default)]
    pub m_geo: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BaseSpec {
    Small(u64),
    TwoPow { two_pow: u64 },
}

impl BaseSpec {
    fn to_exact(&self) -> Result<ExactBase> {
        match self {
            BaseSpec::Small(v) => {
                ExactBase::from_u64(*v).ok_or_else(|| Error::schedule("base a must be >= 2"))
            }
            BaseSpec::TwoPow { two_pow } => Ok(ExactBase::two_pow(*two_pow)),
        }
    }
}

/// All scalar parameters and derived sequences. Immutable after construction
/// and safe to share across threads.
#[derive(Clone, Debug)]
pub struct ParameterSchedule {
    pub(crate) base: ExactBase,
    pub b: u32,
    pub beta: Rat,
    pub gamma: Rat,
    pub sigma: Rat,
    pub r: Rat,
    pub l_noise: f64,
    pub m: u32,
    pub alpha: Rat,
    pub c_r: f64,
    pub c_star: f64,
    pub energy: EnergyBounds,
    pub m_bar: f64,
    pub m_geo: f64,
    pub mode: RunMode,
    /// desk-mode deviations recorded at build time
    pub waivers: Vec<String>,
}

fn parse(name: &str, s: &str) -> Result<Rat> {
    crate::exact::parse_rat(s)
        .ok_or_else(|| Error::schedule(format!("cannot parse rational `{s}` for {name}")))
}

/// gamma = 2/(9 b^3), the choice the exponent bookkeeping is built around.
pub fn gamma_default(b: u32) -> Rat {
    Rat::new(2.into(), (9 * b.pow(3) as i64).into())
}

/// beta upper bound min(sigma/(78 b^5), 2/(27 b^4)).
pub fn beta_cap(b: u32, sigma: &Rat) -> Rat {
    let c1 = sigma / rat_i64(78 * (b as i64).pow(5));
    let c2 = Rat::new(2.into(), (27 * (b as i64).pow(4)).into());
    if c1 < c2 {
        c1
    } else {
        c2
    }
}

/// Build and validate a schedule.
pub fn build_schedule(inputs: &ScheduleInputs, mode: RunMode) -> Result<ParameterSchedule> {
    let base = inputs.a.to_exact()?;
    if inputs.b < 7 {
        return Err(Error::schedule(format!("b = {} < 7 rejected", inputs.b)));
    }
    let beta = parse("beta", &inputs.beta)?;
    let gamma = parse("gamma", &inputs.gamma)?;
    let sigma = parse("sigma", &inputs.sigma)?;
    let r = parse("r", &inputs.r)?;
    let alpha = parse("alpha", &inputs.alpha)?;
    let unit = |x: &Rat| x.is_positive() && *x < Rat::one();
    if !unit(&beta) || !unit(&gamma) || !unit(&alpha) {
        return Err(Error::schedule("beta, gamma, alpha must lie in (0,1)"));
    }
    if r <= Rat::one() {
        return Err(Error::schedule("moment index r must exceed 1"));
    }
    if !sigma.is_positive() {
        return Err(Error::schedule("sigma must be positive"));
    }
    let c_star = inputs
        .c_star
        .unwrap_or_else(|| crate::beltrami::direction_sets().c_star_computed);
    let c_r = inputs.c_r.unwrap_or(c_star / 2.0);
    if !(c_r > 0.0 && c_r < c_star) {
        return Err(Error::schedule(format!(
            "need 0 < c_R < c_* (got c_R = {c_r}, c_* = {c_star})"
        )));
    }
    let mut waivers = Vec::new();

    // f(q) integrality: a^(b gamma / 8) must be a natural number
    let e_f = Rat::from_integer(inputs.b.into()) * &gamma / rat_i64(8);
    match base.pow_is_integer(&e_f) {
        Some(true) => {}
        Some(false) => {
            if mode == RunMode::Proof {
                return Err(Error::schedule(
                    "a^(b*gamma/8) is not an integer, so f(q) is not a natural number",
                ));
            }
            waivers.push("f(q) non-integer at desk scale; truncation uses the real value".into());
        }
        None => {
            return Err(Error::schedule(
                "a^(b*gamma/8) integrality undecidable at configured precision",
            ))
        }
    }

    // energy floor from the R_0 moment bound: e_ >= 6*48*(2pi)^3 L^2 / c_R
    let floor = 6.0 * 48.0 * (2.0 * std::f64::consts::PI).powi(3) * inputs.l_noise.powi(2) / c_r;
    if inputs.energy.e_lo < floor {
        return Err(Error::schedule(format!(
            "energy lower bound {} below required floor {floor:.6e}",
            inputs.energy.e_lo
        )));
    }
    if inputs.energy.e_hi < inputs.energy.e_lo {
        return Err(Error::schedule("energy bounds must satisfy e_hi >= e_lo"));
    }

    Ok(ParameterSchedule {
        base,
        b: inputs.b,
        beta,
        gamma,
        sigma,
        r,
        l_noise: inputs.l_noise,
        m: inputs.m,
        alpha,
        c_r,
        c_star,
        energy: inputs.energy.clone(),
        m_bar: inputs.m_bar.unwrap_or(100.0),
        m_geo: inputs
            .m_geo
            .unwrap_or_else(|| crate::beltrami::measure_universal_m(0).unwrap_or(6.0)),
        mode,
        waivers,
    })
}

impl ParameterSchedule {
    pub fn base(&self) -> &ExactBase {
        &self.base
    }

    fn b_pow(&self, q: u32) -> Rat {
        Rat::from_integer(num_bigint::BigInt::from(self.b).pow(q))
    }

    /// lambda_q = a^(b^q), exact in log_a form.
    pub fn lambda(&self, q: u32) -> LogVal {
        LogVal::pure_power(self.b_pow(q))
    }

    pub fn lambda_f64(&self, q: u32) -> f64 {
        self.lambda(q).f64(&self.base)
    }

    /// lambda_q as an exact big integer (only for materialisable sizes).
    pub fn lambda_int(&self, q: u32) -> Option<BigUint> {
        self.base.pow_exact_int(&self.b_pow(q))
    }

    /// delta_1 = 3 r L^2, delta_q = (1/2) lambda_2^(2 beta) lambda_q^(-2 beta).
    pub fn delta(&self, q: u32) -> LogVal {
        assert!(q >= 1, "delta_q defined for q >= 1");
        if q == 1 {
            let l2 = Rat::from_float(self.l_noise * self.l_noise)
                .unwrap_or_else(|| rat_i64(1));
            LogVal::new(rat_i64(3) * &self.r * l2, Rat::zero())
        } else {
            let e = rat_i64(2) * &self.beta * (self.b_pow(2) - self.b_pow(q));
            LogVal::new(crate::exact::rat_frac(1, 2), e)
        }
    }

    pub fn delta_f64(&self, q: u32) -> f64 {
        self.delta(q).f64(&self.base)
    }

    /// Mollification scale ell = lambda_q^(-2).
    pub fn ell(&self, q: u32) -> LogVal {
        LogVal::pure_power(rat_i64(-2) * self.b_pow(q))
    }

    pub fn ell_f64(&self, q: u32) -> f64 {
        self.ell(q).f64(&self.base)
    }

    /// Frequency-truncation level f(q) = lambda_{q+1}^(gamma/8).
    pub fn f_cut(&self, q: u32) -> LogVal {
        LogVal::pure_power(self.b_pow(q + 1) * &self.gamma / rat_i64(8))
    }

    pub fn f_cut_f64(&self, q: u32) -> f64 {
        self.f_cut(q).f64(&self.base)
    }

    /// Is f(q) a natural number (exact)?
    pub fn f_cut_is_integer(&self, q: u32) -> Option<bool> {
        self.base
            .pow_is_integer(&(self.b_pow(q + 1) * &self.gamma / rat_i64(8)))
    }

    /// chi_q plateau end: lambda_{q+2}^gamma.
    pub fn cutoff_lo(&self, q: u32) -> LogVal {
        LogVal::pure_power(self.b_pow(q + 2) * &self.gamma)
    }

    /// chi_q support end: lambda_{q+3}^(gamma/4).
    pub fn cutoff_hi(&self, q: u32) -> LogVal {
        LogVal::pure_power(self.b_pow(q + 3) * &self.gamma / rat_i64(4))
    }

    pub fn cutoff_lo_f64(&self, q: u32) -> f64 {
        self.cutoff_lo(q).f64(&self.base)
    }

    pub fn cutoff_hi_f64(&self, q: u32) -> f64 {
        self.cutoff_hi(q).f64(&self.base)
    }

    /// Exact check that a slope-1 ramp fits in the chi_q transition band:
    /// lambda_{q+3}^(gamma/4) - lambda_{q+2}^gamma >= 1.
    pub fn cutoff_gap_check(&self, q: u32) -> Result<bool> {
        let e_hi = self.b_pow(q + 3) * &self.gamma / rat_i64(4);
        let e_lo = self.b_pow(q + 2) * &self.gamma;
        self.base
            .gap_at_least_one(&e_hi, &e_lo)
            .ok_or_else(|| Error::schedule("cutoff gap undecidable at configured precision"))
    }

    /// Exact comparison helpers used by the invariants.
    pub fn lambda_cmp(&self, q1: u32, q2: u32) -> Ordering {
        self.lambda(q1)
            .cmp(&self.lambda(q2), &self.base)
            .expect("lambda comparison is always decidable")
    }

    pub fn delta_cmp(&self, q1: u32, q2: u32) -> Option<Ordering> {
        self.delta(q1).cmp(&self.delta(q2), &self.base)
    }

    /// Default Hoelder exponent used by convergence reports: half the cap
    /// min(sigma/(120 b^5), 1/(21 b^4)).
    pub fn theta_default(&self) -> Rat {
        let c1 = &self.sigma / rat_i64(120 * (self.b as i64).pow(5));
        let c2 = Rat::new(1.into(), (21 * (self.b as i64).pow(4)).into());
        let cap = if c1 < c2 { c1 } else { c2 };
        cap / rat_i64(2)
    }

    pub fn verify_ledger(&self) -> LedgerReport {
        ledger::verify_ledger(self)
    }
}

/// Convenience: the proof-grade configuration used throughout the tests:
/// b = 7, gamma = 2/(9 b^3), beta = beta_cap/2, sigma = 1, m = 10,
/// a = 2^(36 b^2) and an energy window just above the floor.
pub fn reference_inputs() -> ScheduleInputs {
    let b = 7u32;
    let sigma = Rat::one();
    let cap = beta_cap(b, &sigma);
    let beta = &cap / rat_i64(2);
    ScheduleInputs {
        a: BaseSpec::TwoPow {
            two_pow: 36 * (b as u64) * (b as u64),
        },
        b,
        beta: beta.to_string(),
        gamma: gamma_default(b).to_string(),
        sigma: "1".into(),
        r: "3/2".into(),
        l_noise: 1.0,
        m: 10,
        alpha: "1/10000".into(),
        c_r: None,
        c_star: None,
        energy: EnergyBounds {
            e_lo: 1.1e6,
            e_hi: 1.1e6,
            e_prime_max: 0.0,
        },
        m_bar: None,
        m_geo: None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exact::rat_frac;

    fn desk_inputs() -> ScheduleInputs {
        let mut inp = reference_inputs();
        inp.a = BaseSpec::Small(2);
        inp
    }

    #[test]
    fn lambda_direct() {
        let sched = build_schedule(&desk_inputs(), RunMode::Desk).unwrap();
        assert_eq!(sched.lambda_int(1).unwrap(), 128u32.into());
        assert_eq!(sched.lambda_f64(1), 128.0);
        assert_eq!(sched.lambda_int(0).unwrap(), 2u32.into());
    }

    #[test]
    fn delta_two_is_half() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        let d2 = sched.delta(2);
        assert!(d2.coeff == rat_frac(1, 2) && d2.exp.numer().bits() == 0);
        assert_eq!(sched.delta_f64(2), 0.5);
    }

    #[test]
    fn gamma_choice() {
        assert_eq!(gamma_default(7), rat_frac(2, 3087));
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut inp = reference_inputs();
        inp.b = 6;
        assert!(build_schedule(&inp, RunMode::Proof).is_err());

        let mut inp = reference_inputs();
        inp.energy.e_lo = 1.0;
        inp.energy.e_hi = 1.0;
        assert!(build_schedule(&inp, RunMode::Proof).is_err());

        // a = 3 is not in 2^N, so a^(b gamma/8) = 3^(1/1764) is not natural
        let mut inp = reference_inputs();
        inp.a = BaseSpec::Small(3);
        assert!(build_schedule(&inp, RunMode::Proof).is_err());
        // but desk mode waives it
        let sched = build_schedule(&inp, RunMode::Desk).unwrap();
        assert!(!sched.waivers.is_empty());
    }

    #[test]
    fn monotone_sequences_exact() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        for q in 0..6 {
            assert_eq!(sched.lambda_cmp(q + 1, q), Ordering::Greater);
        }
        for q in 1..6 {
            assert_eq!(sched.delta_cmp(q, q + 1), Some(Ordering::Greater));
        }
    }

    #[test]
    fn f_cut_integrality_through_q6() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        for q in 0..=6 {
            assert_eq!(sched.f_cut_is_integer(q), Some(true));
        }
    }

    #[test]
    fn cutoff_gap_modes() {
        let proof = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        assert!(proof.cutoff_gap_check(0).unwrap());
        let desk = build_schedule(&desk_inputs(), RunMode::Desk).unwrap();
        assert!(!desk.cutoff_gap_check(0).unwrap());
    }
}
