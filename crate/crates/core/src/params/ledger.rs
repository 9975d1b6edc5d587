//! The inequality ledger: every exponent relation among (a, b, beta, gamma,
//! sigma, m, alpha) that the iteration invokes, evaluated exactly and
//! reported row by row.
//!
//! Rows are data, not control flow: a failed row never aborts evaluation.
//! Desk mode turns the rows that only hold for astronomically large `a`
//! into `Waived` instead of `Fail`.

use super::{ParameterSchedule, RunMode};
use crate::exact::{rat_i64, Rat};
use num_traits::One;
use serde::Serialize;
use std::cmp::Ordering;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Pass,
    Fail,
    Waived,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum LedgerEntryKind {
    /// structural feasibility of the schedule itself
    Structural,
    /// the named small-parameter relations of the parameter choice
    Core,
    /// exponent relations invoked inside the stress and energy estimates
    Aux,
    /// recorded for information, never gating
    Optional,
}

#[derive(Clone, Debug, Serialize)]
pub struct LedgerRow {
    pub id: &'static str,
    pub kind: LedgerEntryKind,
    pub location: &'static str,
    pub lhs: String,
    pub rhs: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct LedgerReport {
    pub rows: Vec<LedgerRow>,
    pub mode: RunMode,
}

impl LedgerReport {
    /// Overall verdict: no gating row failed (waived rows are allowed,
    /// optional rows never gate).
    pub fn all_pass(&self) -> bool {
        self.rows
            .iter()
            .all(|r| r.kind == LedgerEntryKind::Optional || r.verdict != Verdict::Fail)
    }

    pub fn failed_ids(&self) -> Vec<&'static str> {
        self.rows
            .iter()
            .filter(|r| r.verdict == Verdict::Fail)
            .map(|r| r.id)
            .collect()
    }

    pub fn row(&self, id: &str) -> Option<&LedgerRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("id,kind,location,lhs,rhs,verdict\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:?},{},\"{}\",\"{}\",{:?}\n",
                r.id, r.kind, r.location, r.lhs, r.rhs, r.verdict
            ));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "{:<28} {:<10} {:<22} {:>8}\n",
            "inequality", "kind", "location", "verdict"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<28} {:<10} {:<22} {:>8}\n",
                r.id,
                format!("{:?}", r.kind),
                r.location,
                format!("{:?}", r.verdict)
            ));
        }
        out
    }
}

struct Ctx {
    b: Rat,
    beta: Rat,
    gamma: Rat,
    sigma: Rat,
    alpha: Rat,
    m: Rat,
}

impl Ctx {
    fn from(s: &ParameterSchedule) -> Self {
        Ctx {
            b: rat_i64(s.b as i64),
            beta: s.beta.clone(),
            gamma: s.gamma.clone(),
            sigma: s.sigma.clone(),
            alpha: s.alpha.clone(),
            m: rat_i64(s.m as i64),
        }
    }
    fn b_pow(&self, n: u32) -> Rat {
        let mut r = Rat::one();
        for _ in 0..n {
            r *= &self.b;
        }
        r
    }
}

fn verdict_strict(lhs: &Rat, rhs: &Rat) -> Verdict {
    if lhs < rhs {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

fn verdict_le(lhs: &Rat, rhs: &Rat) -> Verdict {
    if lhs <= rhs {
        Verdict::Pass
    } else {
        Verdict::Fail
    }
}

type EvalFn = fn(&Ctx, &ParameterSchedule) -> (String, String, Verdict);

struct Entry {
    id: &'static str,
    kind: LedgerEntryKind,
    location: &'static str,
    eval: EvalFn,
}

macro_rules! rat_entry {
    ($id:literal, $kind:ident, $loc:literal, strict, $lhs:expr, $rhs:expr) => {
        Entry {
            id: $id,
            kind: LedgerEntryKind::$kind,
            location: $loc,
            eval: |c: &Ctx, _s: &ParameterSchedule| {
                let lhs: Rat = $lhs(c);
                let rhs: Rat = $rhs(c);
                let v = verdict_strict(&lhs, &rhs);
                (lhs.to_string(), rhs.to_string(), v)
            },
        }
    };
    ($id:literal, $kind:ident, $loc:literal, le, $lhs:expr, $rhs:expr) => {
        Entry {
            id: $id,
            kind: LedgerEntryKind::$kind,
            location: $loc,
            eval: |c: &Ctx, _s: &ParameterSchedule| {
                let lhs: Rat = $lhs(c);
                let rhs: Rat = $rhs(c);
                let v = verdict_le(&lhs, &rhs);
                (lhs.to_string(), rhs.to_string(), v)
            },
        }
    };
}

fn entries() -> Vec<Entry> {
    vec![
        // ---- structural ----
        Entry {
            id: "b>=7",
            kind: LedgerEntryKind::Structural,
            location: "parameter choice",
            eval: |c, _| {
                let v = if c.b >= rat_i64(7) {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                (c.b.to_string(), "7".into(), v)
            },
        },
        Entry {
            id: "r>1",
            kind: LedgerEntryKind::Structural,
            location: "moment index",
            eval: |_, s| {
                let v = if s.r > Rat::one() {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                (s.r.to_string(), "1".into(), v)
            },
        },
        Entry {
            id: "cR<c*",
            kind: LedgerEntryKind::Structural,
            location: "stress constant",
            eval: |_, s| {
                let v = if s.c_r < s.c_star {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                };
                (format!("{}", s.c_r), format!("{}", s.c_star), v)
            },
        },
        Entry {
            id: "a^(bg/8)-integer",
            kind: LedgerEntryKind::Structural,
            location: "f(q) integrality",
            eval: |c, s| {
                let e = &c.b * &c.gamma / rat_i64(8);
                let ok = s.base.pow_is_integer(&e);
                let v = match ok {
                    Some(true) => Verdict::Pass,
                    _ if s.mode == RunMode::Desk => Verdict::Waived,
                    _ => Verdict::Fail,
                };
                (format!("a^({e})"), "integer".into(), v)
            },
        },
        // ---- core parameter relations ----
        rat_entry!(
            "4b3g+4b3b<1",
            Core,
            "parameter choice",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(3) * (&c.gamma + &c.beta),
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "3bb<g",
            Core,
            "parameter choice",
            strict,
            |c: &Ctx| rat_i64(3) * &c.b * &c.beta,
            |c: &Ctx| c.gamma.clone()
        ),
        rat_entry!(
            "2b2b+b<gs/8",
            Core,
            "parameter choice",
            strict,
            |c: &Ctx| rat_i64(2) * c.b_pow(2) * &c.beta + &c.beta,
            |c: &Ctx| &c.gamma * &c.sigma / rat_i64(8)
        ),
        rat_entry!(
            "beta<min(s/78b5,2/27b4)",
            Core,
            "parameter choice",
            strict,
            |c: &Ctx| c.beta.clone(),
            |c: &Ctx| {
                let c1 = &c.sigma / (rat_i64(78) * c.b_pow(5));
                let c2 = rat_i64(2) / (rat_i64(27) * c.b_pow(4));
                if c1 < c2 {
                    c1
                } else {
                    c2
                }
            }
        ),
        Entry {
            id: "2<a^((b/4-1)b2g)",
            kind: LedgerEntryKind::Core,
            location: "parameter choice",
            eval: |c, s| {
                let e = (&c.b / rat_i64(4) - Rat::one()) * c.b_pow(2) * &c.gamma;
                let v = match s.base.pow_cmp_rat(&e, &rat_i64(2)) {
                    Some(Ordering::Greater) => Verdict::Pass,
                    None => Verdict::Fail,
                    _ if s.mode == RunMode::Desk => Verdict::Waived,
                    _ => Verdict::Fail,
                };
                ("2".into(), format!("a^({e})"), v)
            },
        },
        rat_entry!(
            "4b3g+4b3b+2ba<1",
            Core,
            "stress estimates",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(3) * (&c.gamma + &c.beta) + rat_i64(2) * &c.b * &c.alpha,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "m>(2b+5)/(b-5)",
            Core,
            "stationary phase order",
            strict,
            |c: &Ctx| (rat_i64(2) * &c.b + rat_i64(5)) / (&c.b - rat_i64(5)),
            |c: &Ctx| c.m.clone()
        ),
        rat_entry!(
            "5m+2b+5<bm",
            Core,
            "oscillation estimate",
            strict,
            |c: &Ctx| rat_i64(5) * &c.m + rat_i64(2) * &c.b + rat_i64(5),
            |c: &Ctx| &c.b * &c.m
        ),
        // ---- auxiliary relations used inside the section-5 estimates ----
        rat_entry!(
            "2b3g+bb<1",
            Aux,
            "principal C1 bound",
            strict,
            |c: &Ctx| rat_i64(2) * c.b_pow(3) * &c.gamma + &c.b * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "2b3g+2bb<1",
            Aux,
            "corrector C0 bound",
            strict,
            |c: &Ctx| rat_i64(2) * c.b_pow(3) * &c.gamma + rat_i64(2) * &c.b * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "bb<1",
            Aux,
            "mollification bound",
            strict,
            |c: &Ctx| &c.b * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "9bg<=8b2g+g",
            Aux,
            "noise increment",
            le,
            |c: &Ctx| rat_i64(9) * &c.b * &c.gamma,
            |c: &Ctx| rat_i64(8) * c.b_pow(2) * &c.gamma + &c.gamma
        ),
        rat_entry!(
            "4b3b+2bg<1",
            Aux,
            "commutator-1 bound",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(3) * &c.beta + rat_i64(2) * &c.b * &c.gamma,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "3b3g+2b3b+ba<1",
            Aux,
            "transport bound",
            strict,
            |c: &Ctx| {
                rat_i64(3) * c.b_pow(3) * &c.gamma
                    + rat_i64(2) * c.b_pow(3) * &c.beta
                    + &c.b * &c.alpha
            },
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "5m+b+5<bm",
            Aux,
            "transport/Nash order",
            strict,
            |c: &Ctx| rat_i64(5) * &c.m + &c.b + rat_i64(5),
            |c: &Ctx| &c.b * &c.m
        ),
        rat_entry!(
            "3b3g+3b3b+ba<1",
            Aux,
            "Nash bound",
            strict,
            |c: &Ctx| rat_i64(3) * c.b_pow(3) * (&c.gamma + &c.beta) + &c.b * &c.alpha,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "4b3g+2b3b+ba<1",
            Aux,
            "corrector bound",
            strict,
            |c: &Ctx| {
                rat_i64(4) * c.b_pow(3) * &c.gamma
                    + rat_i64(2) * c.b_pow(3) * &c.beta
                    + &c.b * &c.alpha
            },
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "bg+4b3b<1",
            Aux,
            "commutator bound",
            strict,
            |c: &Ctx| &c.b * &c.gamma + rat_i64(4) * c.b_pow(3) * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "b2b<1",
            Aux,
            "energy: rho floor",
            strict,
            |c: &Ctx| c.b_pow(2) * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "4b2b+2b<1",
            Aux,
            "energy: zeta mollify",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(2) * &c.beta + rat_i64(2) * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "b3g+2b2b<1",
            Aux,
            "energy: phase sum",
            strict,
            |c: &Ctx| c.b_pow(3) * &c.gamma + rat_i64(2) * c.b_pow(2) * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "5m+5<bm",
            Aux,
            "energy: phase order",
            strict,
            |c: &Ctx| rat_i64(5) * &c.m + rat_i64(5),
            |c: &Ctx| &c.b * &c.m
        ),
        rat_entry!(
            "4b3g+4b2b<1",
            Aux,
            "energy: corrector",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(3) * &c.gamma + rat_i64(4) * c.b_pow(2) * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "2bb+b<gs/8",
            Aux,
            "energy: increments",
            strict,
            |c: &Ctx| rat_i64(2) * &c.b * &c.beta + &c.beta,
            |c: &Ctx| &c.gamma * &c.sigma / rat_i64(8)
        ),
        rat_entry!(
            "4b2b+2bb<1",
            Aux,
            "energy: increments",
            strict,
            |c: &Ctx| rat_i64(4) * c.b_pow(2) * &c.beta + rat_i64(2) * &c.b * &c.beta,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "2b2b+b3g<1",
            Aux,
            "energy: curl term",
            strict,
            |c: &Ctx| rat_i64(2) * c.b_pow(2) * &c.beta + c.b_pow(3) * &c.gamma,
            |_c: &Ctx| Rat::one()
        ),
        rat_entry!(
            "b3g<1",
            Aux,
            "flow-map window",
            strict,
            |c: &Ctx| c.b_pow(3) * &c.gamma,
            |_c: &Ctx| Rat::one()
        ),
        // ---- optional theta caps (recorded, never gating) ----
        Entry {
            id: "theta<min(s/(120*7^5),1/(3*7^5))",
            kind: LedgerEntryKind::Optional,
            location: "Hoelder cap (strict)",
            eval: |c, s| {
                let c1 = &c.sigma / rat_i64(120 * 16807);
                let c2 = Rat::new(1.into(), (3i64 * 16807).into());
                let cap = if c1 < c2 { c1 } else { c2 };
                let theta = s.theta_default();
                let v = verdict_strict(&theta, &cap);
                (theta.to_string(), cap.to_string(), v)
            },
        },
        Entry {
            id: "theta<min(s/(73*62^3),1/(7*62^3))",
            kind: LedgerEntryKind::Optional,
            location: "Hoelder cap (relaxed)",
            eval: |c, s| {
                let d = 62i64 * 62 * 62;
                let c1 = &c.sigma / rat_i64(73 * d);
                let c2 = Rat::new(1.into(), (7 * d).into());
                let cap = if c1 < c2 { c1 } else { c2 };
                let theta = s.theta_default();
                let v = verdict_strict(&theta, &cap);
                (theta.to_string(), cap.to_string(), v)
            },
        },
    ]
}

/// All gating inequality ids, in registry order.
pub fn gating_ids() -> Vec<&'static str> {
    entries()
        .iter()
        .filter(|e| e.kind != LedgerEntryKind::Optional)
        .map(|e| e.id)
        .collect()
}

pub fn verify_ledger(schedule: &ParameterSchedule) -> LedgerReport {
    let ctx = Ctx::from(schedule);
    let mut rows: Vec<LedgerRow> = entries()
        .into_iter()
        .map(|e| {
            let (lhs, rhs, verdict) = (e.eval)(&ctx, schedule);
            LedgerRow {
                id: e.id,
                kind: e.kind,
                location: e.location,
                lhs,
                rhs,
                verdict,
            }
        })
        .collect();
    // deterministic order regardless of registry construction order
    rows.sort_by(|a, b| a.id.cmp(b.id));
    LedgerReport {
        rows,
        mode: schedule.mode,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_schedule, reference_inputs, RunMode};

    #[test]
    fn reference_config_passes() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        let report = sched.verify_ledger();
        assert!(report.all_pass(), "failed: {:?}", report.failed_ids());
    }

    #[test]
    fn m_threshold() {
        // b = 7: (2b+5)/(b-5) = 19/2, smallest admissible m is 10
        let mut inp = reference_inputs();
        inp.m = 10;
        let sched = build_schedule(&inp, RunMode::Proof).unwrap();
        assert_eq!(sched.verify_ledger().row("m>(2b+5)/(b-5)").unwrap().verdict, Verdict::Pass);
        inp.m = 9;
        let sched = build_schedule(&inp, RunMode::Proof).unwrap();
        let rep = sched.verify_ledger();
        assert_eq!(rep.row("m>(2b+5)/(b-5)").unwrap().verdict, Verdict::Fail);
        // 5m+2b+5<bm is the same relation, so it must fail together
        assert_eq!(rep.row("5m+2b+5<bm").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn beta_equal_gamma_fails_only_its_relation() {
        // beta = gamma makes 3 b beta < gamma fail (3 b gamma >= gamma)
        let mut inp = reference_inputs();
        inp.beta = inp.gamma.clone();
        let sched = build_schedule(&inp, RunMode::Proof).unwrap();
        let rep = sched.verify_ledger();
        assert_eq!(rep.row("3bb<g").unwrap().verdict, Verdict::Fail);
    }

    #[test]
    fn exact_sum_example() {
        // b=7, gamma=2/3087, beta=1e-7: 4b^3(gamma+beta) = 2744/3087 + 4*343*1e-7 < 1
        let mut inp = reference_inputs();
        inp.beta = "1/10000000".into();
        let sched = build_schedule(&inp, RunMode::Proof).unwrap();
        let rep = sched.verify_ledger();
        assert_eq!(rep.row("4b3g+4b3b<1").unwrap().verdict, Verdict::Pass);
    }

    #[test]
    fn desk_waives_a_checks() {
        let mut inp = reference_inputs();
        inp.a = crate::params::BaseSpec::Small(2);
        let sched = build_schedule(&inp, RunMode::Desk).unwrap();
        let rep = sched.verify_ledger();
        assert_eq!(rep.row("2<a^((b/4-1)b2g)").unwrap().verdict, Verdict::Waived);
        assert_eq!(rep.row("a^(bg/8)-integer").unwrap().verdict, Verdict::Waived);
        assert!(rep.all_pass());
    }

    #[test]
    fn report_is_deterministic() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        let r1 = sched.verify_ledger();
        let r2 = sched.verify_ledger();
        let ids1: Vec<_> = r1.rows.iter().map(|r| (r.id, r.verdict)).collect();
        let ids2: Vec<_> = r2.rows.iter().map(|r| (r.id, r.verdict)).collect();
        assert_eq!(ids1, ids2);
    }
}
