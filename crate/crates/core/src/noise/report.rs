//! Monte Carlo moment diagnostics for the stochastic convolution and its
//! truncated increments.

use super::{truncate_and_cutoff, NoisePath};
use crate::error::{Error, Result};
use crate::exact::rat_to_f64;
use crate::params::ParameterSchedule;
use crate::spectral::norms::{c0_norm, holder_seminorm};
use serde::Serialize;

/// sup_t E[ sup_{[t,t+1]} g^p ]^(1/p) over the sliding windows of the grid.
fn bracket_norm(series: &[Vec<f64>], window: usize, p: f64) -> f64 {
    let len = series[0].len();
    let members = series.len() as f64;
    let mut worst = 0.0f64;
    let mut start = 0;
    while start + window < len + 1 {
        let mut acc = 0.0;
        for member in series {
            let sup = member[start..start + window]
                .iter()
                .fold(0.0f64, |m, v| m.max(*v));
            acc += sup.powf(p);
        }
        worst = worst.max((acc / members).powf(1.0 / p));
        start += 1;
    }
    worst
}

#[derive(Clone, Debug, Serialize)]
pub struct MomentReport {
    pub p_values: Vec<f64>,
    /// bracket norms of |z|_{H^{3/2+sigma}} per p
    pub h_norm: Vec<f64>,
    /// bracket norms of the spatial Hoelder norm C^kappa per p (subsampled)
    pub c_kappa: Vec<f64>,
    /// bracket norms of the time-Hoelder quotient in H^{3/2+sigma} per p
    pub time_holder: Vec<f64>,
    /// fitted exponent eta of m_p ~ (p-1)^eta (Gaussian prediction: 1/2)
    pub growth_exponent: f64,
    /// measured bracket C0/C1 norms of z_q against the lambda_{q+1}^(gamma/8)
    /// reference factor, when a schedule and q are supplied
    pub zq_c0: Option<f64>,
    pub zq_c1: Option<f64>,
    pub zq_c1_reference_factor: Option<f64>,
}

/// Ensemble moment report. `sigma` is read from the path spectrum implicitly
/// through the supplied Sobolev order.
pub fn moment_report(
    paths: &[NoisePath],
    p_list: &[f64],
    delta: f64,
    kappa: f64,
    sobolev_order: f64,
    schedule_q: Option<(&ParameterSchedule, u32)>,
) -> Result<MomentReport> {
    if paths.len() < 100 {
        return Err(Error::noise(format!(
            "moment report needs an ensemble of at least 100 paths, got {}",
            paths.len()
        )));
    }
    if !(delta > 0.0 && delta < 0.5) {
        return Err(Error::noise("delta must lie in (0, 1/2)"));
    }
    let tg = paths[0].tgrid;
    let window = (1.0 / tg.dt).round() as usize;
    if window + 1 > tg.len() {
        return Err(Error::noise("time grid shorter than one unit window"));
    }

    // modal H-norm series for every member
    let h_series: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            (0..tg.len())
                .map(|t| p.hs_norm_at(t, sobolev_order, None))
                .collect()
        })
        .collect();

    // time-Hoelder quotient per member: max over pairs inside each window is
    // expensive; precompute the per-window quotient series as a step series
    let th_series: Vec<Vec<f64>> = paths
        .iter()
        .map(|p| {
            let mut out = vec![0.0; tg.len()];
            // quotient against a fixed lag ladder, a lower-bound estimator
            let lags = [1usize, 2, 4, window / 2, window];
            for t in 0..tg.len() {
                let mut worst = 0.0f64;
                for &lag in &lags {
                    if lag == 0 || t + lag >= tg.len() {
                        continue;
                    }
                    let d = diff_h_norm(p, t, t + lag, sobolev_order);
                    worst = worst.max(d / (tg.dt * lag as f64).powf(0.5 - delta));
                }
                out[t] = worst;
            }
            out
        })
        .collect();

    // spatial Hoelder series on a member/time subsample
    let sub_members = paths.len().min(64);
    let stride = (window / 4).max(1);
    let ck_series: Vec<Vec<f64>> = paths[..sub_members]
        .iter()
        .map(|p| {
            let grid = p.eval_grid();
            (0..tg.len())
                .map(|t| {
                    if t % stride == 0 {
                        let f = p.field_at(grid, t, None);
                        holder_seminorm(&f, kappa).unwrap_or(0.0) + c0_norm(&f)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    let mut h_norm = Vec::new();
    let mut c_kappa = Vec::new();
    let mut time_holder = Vec::new();
    for &p in p_list {
        h_norm.push(bracket_norm(&h_series, window, p));
        c_kappa.push(bracket_norm(&ck_series, window, p));
        time_holder.push(bracket_norm(&th_series, window, p));
    }

    // Growth fit against the (p-1)^(1/2) Gaussian prediction. The H-norm of
    // the full field concentrates (many independent modes), so the fit is
    // made on a per-mode amplitude, where the Gaussian tail is visible.
    let t_mid = tg.len() / 2;
    let growth_exponent = {
        let samples: Vec<f64> = paths.iter().map(|p| p.states[t_mid][0][0].re.abs()).collect();
        let moments: Vec<f64> = p_list
            .iter()
            .map(|&p| {
                (samples.iter().map(|x| x.powf(p)).sum::<f64>() / samples.len() as f64)
                    .powf(1.0 / p)
            })
            .collect();
        fit_exponent(
            &p_list.iter().map(|p| (p - 1.0).ln()).collect::<Vec<_>>(),
            &moments.iter().map(|m| m.max(1e-300).ln()).collect::<Vec<_>>(),
        )
    };

    let (zq_c0, zq_c1, zq_ref) = if let Some((schedule, q)) = schedule_q {
        let f_cut = schedule.f_cut_f64(q);
        let c0s: Vec<Vec<f64>> = paths
            .iter()
            .take(sub_members)
            .map(|p| {
                let cut = truncate_and_cutoff(p, q, schedule, f64::INFINITY).unwrap();
                (0..tg.len())
                    .map(|t| cut.chi[t] * p.c0_norm_at(t, Some(f_cut)))
                    .collect()
            })
            .collect();
        let c1s: Vec<Vec<f64>> = paths
            .iter()
            .take(sub_members)
            .map(|p| {
                let cut = truncate_and_cutoff(p, q, schedule, f64::INFINITY).unwrap();
                (0..tg.len()).map(|t| cut.chi[t] * cut.c1_norms[t]).collect()
            })
            .collect();
        let pa = p_list.first().copied().unwrap_or(2.0);
        let lam_factor = schedule.f_cut_f64(q);
        (
            Some(bracket_norm(&c0s, window, pa)),
            Some(bracket_norm(&c1s, window, pa)),
            Some(lam_factor),
        )
    } else {
        (None, None, None)
    };

    Ok(MomentReport {
        p_values: p_list.to_vec(),
        h_norm,
        c_kappa,
        time_holder,
        growth_exponent,
        zq_c0,
        zq_c1,
        zq_c1_reference_factor: zq_ref,
    })
}

fn diff_h_norm(p: &NoisePath, t1: usize, t2: usize, s: f64) -> f64 {
    let mut acc = 0.0;
    for (m, (z1, z2)) in p
        .modes
        .iter()
        .zip(p.states[t1].iter().zip(p.states[t2].iter()))
    {
        let k2 = (m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64;
        let w = (1.0 + k2).powf(s);
        acc += 2.0 * w * ((z1[0] - z2[0]).norm_sqr() + (z1[1] - z2[1]).norm_sqr());
    }
    acc.sqrt()
}

fn fit_exponent(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut num = 0.0;
    let mut den = 0.0;
    for (a, b) in x.iter().zip(y.iter()) {
        num += (a - mx) * (b - my);
        den += (a - mx) * (a - mx);
    }
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// The noise-increment diagnostic: Monte Carlo estimate of the bracket norm
/// of z_{q+1} - z_q in C^0, with the spectral-tail and cutoff-disagreement
/// contributions reported separately (they mirror the two terms the
/// increment bound splits into).
#[derive(Clone, Debug, Serialize)]
pub struct IncrementReport {
    pub q: u32,
    pub p: f64,
    pub total: f64,
    /// spectral tail: |ztilde_{q+1} - ztilde_q|_C0 * chi_{q+1}
    pub term_tail: f64,
    /// cutoff disagreement: |ztilde_q|_C0 * |chi_{q+1} - chi_q|
    pub term_cutoff: f64,
    /// reference lambda_{q+1}^(-gamma sigma / 8) + lambda_{q+2}^(-gamma) lambda_{q+1}^(gamma/8)
    pub reference: f64,
}

pub fn increment_report(
    paths: &[NoisePath],
    q: u32,
    schedule: &ParameterSchedule,
    p: f64,
) -> Result<IncrementReport> {
    if paths.is_empty() {
        return Err(Error::noise("empty ensemble"));
    }
    let tg = paths[0].tgrid;
    let window = (1.0 / tg.dt).round() as usize;
    let f_lo = schedule.f_cut_f64(q);
    let f_hi = schedule.f_cut_f64(q + 1);
    let mut tails = Vec::new();
    let mut cuts = Vec::new();
    let mut totals = Vec::new();
    for path in paths {
        let grid = path.eval_grid();
        let cut_q = truncate_and_cutoff(path, q, schedule, f64::INFINITY)?;
        let cut_q1 = truncate_and_cutoff(path, q + 1, schedule, f64::INFINITY)?;
        let mut tail = Vec::with_capacity(tg.len());
        let mut cutoff = Vec::with_capacity(tg.len());
        let mut total = Vec::with_capacity(tg.len());
        for t in 0..tg.len() {
            let zt_lo = path.field_at(grid, t, Some(f_lo));
            let zt_hi = path.field_at(grid, t, Some(f_hi));
            let dc0 = c0_norm(&zt_hi.sub(&zt_lo));
            tail.push(dc0 * cut_q1.chi[t]);
            cutoff.push(c0_norm(&zt_lo) * (cut_q1.chi[t] - cut_q.chi[t]).abs());
            let mut zq1 = zt_hi;
            zq1.scale(cut_q1.chi[t]);
            let mut zq = zt_lo;
            zq.scale(cut_q.chi[t]);
            total.push(c0_norm(&zq1.sub(&zq)));
        }
        tails.push(tail);
        cuts.push(cutoff);
        totals.push(total);
    }
    let gamma = rat_to_f64(&schedule.gamma);
    let sigma = rat_to_f64(&schedule.sigma);
    let lq1 = schedule.lambda(q + 1).log2_f64(schedule.base());
    let lq2 = schedule.lambda(q + 2).log2_f64(schedule.base());
    let reference =
        (2.0f64).powf(-lq1 * gamma * sigma / 8.0) + (2.0f64).powf(-lq2 * gamma + lq1 * gamma / 8.0);
    Ok(IncrementReport {
        q,
        p,
        total: bracket_norm(&totals, window, p),
        term_tail: bracket_norm(&tails, window, p),
        term_cutoff: bracket_norm(&cuts, window, p),
        reference,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_ou_path, NoiseSpectrum, TimeGrid};
    use crate::params::{build_schedule, reference_inputs, BaseSpec, RunMode};

    fn spectrum() -> NoiseSpectrum {
        NoiseSpectrum {
            s: "6".into(),
            c0: 0.02,
            sigma: "1".into(),
            mode_budget: 2.2,
        }
    }

    fn paths(n: u64, steps: usize) -> Vec<crate::noise::NoisePath> {
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps,
        };
        (0..n)
            .map(|m| sample_ou_path(&spectrum(), tg, 77, m).unwrap())
            .collect()
    }

    #[test]
    fn needs_hundred_members() {
        let ps = paths(10, 20);
        assert!(moment_report(&ps, &[2.0], 0.1, 0.5, 2.5, None).is_err());
    }

    #[test]
    fn zero_noise_means_zero_norms() {
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps: 15,
        };
        let spec = NoiseSpectrum {
            c0: 0.0,
            ..spectrum()
        };
        let ps: Vec<_> = (0..100)
            .map(|m| sample_ou_path(&spec, tg, 3, m).unwrap())
            .collect();
        let rep = moment_report(&ps, &[2.0, 4.0], 0.1, 0.5, 2.5, None).unwrap();
        assert!(rep.h_norm.iter().all(|v| *v == 0.0));
        assert!(rep.c_kappa.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn growth_exponent_near_gaussian() {
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps: 12,
        };
        let spec = NoiseSpectrum {
            s: "5".into(),
            c0: 0.05,
            sigma: "1".into(),
            mode_budget: 1.0,
        };
        let ps: Vec<_> = (0..2000)
            .map(|m| sample_ou_path(&spec, tg, 21, m).unwrap())
            .collect();
        let rep = moment_report(&ps, &[2.0, 4.0, 8.0], 0.1, 0.5, 2.5, None).unwrap();
        // within factor 2 of the sqrt(p-1) prediction
        assert!(
            rep.growth_exponent > 0.5 / 2.0 && rep.growth_exponent < 0.5 * 2.0,
            "exponent {}",
            rep.growth_exponent
        );
    }

    #[test]
    fn single_mode_matches_closed_form() {
        // one |k|=1 shell only: H^s norm of z is sqrt(2 (1+1)^s sum |z|^2)
        let spec = NoiseSpectrum {
            s: "5".into(),
            c0: 0.05,
            sigma: "1".into(),
            mode_budget: 1.0,
        };
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps: 5,
        };
        let p = sample_ou_path(&spec, tg, 1, 0).unwrap();
        let s_ord = 2.5;
        let direct = p.hs_norm_at(0, s_ord, None);
        let mut acc = 0.0;
        for (m, z) in p.modes.iter().zip(p.states[0].iter()) {
            let k2 = (m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64;
            acc += 2.0 * (1.0 + k2).powf(s_ord) * (z[0].norm_sqr() + z[1].norm_sqr());
        }
        assert!((direct - acc.sqrt()).abs() < 1e-14);
    }

    fn desk_schedule(gamma: &str) -> crate::params::ParameterSchedule {
        let mut inputs = reference_inputs();
        inputs.a = BaseSpec::Small(2);
        inputs.gamma = gamma.into();
        build_schedule(&inputs, RunMode::Desk).unwrap()
    }

    #[test]
    fn increment_split_degenerate_cases() {
        let sched = desk_schedule("1/8");
        let ps = paths(20, 15);
        let rep = increment_report(&ps, 0, &sched, 2.0).unwrap();
        // chi factors are all 1 at this noise size, so the cutoff term vanishes
        assert_eq!(rep.term_cutoff, 0.0);
        assert!(rep.term_tail >= 0.0);
        // identical truncation: choose q where both cutoffs exceed the budget
        let rep2 = increment_report(&ps, 2, &sched, 2.0).unwrap();
        assert_eq!(rep2.term_tail, 0.0);
    }

    #[test]
    fn tail_decreases_across_q() {
        // f(0) = 2^(7/64) ~ 1.08, f(1) ~ 1.70, f(2) ~ 41: bands (1.08,1.70],
        // (1.70, budget]; beyond the budget the increment is empty.
        let sched = desk_schedule("1/8");
        let ps = paths(60, 15);
        let r0 = increment_report(&ps, 0, &sched, 2.0).unwrap();
        let r1 = increment_report(&ps, 1, &sched, 2.0).unwrap();
        let r2 = increment_report(&ps, 2, &sched, 2.0).unwrap();
        assert!(
            r0.term_tail > r1.term_tail && r1.term_tail > r2.term_tail,
            "tails {} {} {}",
            r0.term_tail,
            r1.term_tail,
            r2.term_tail
        );
        assert_eq!(r2.term_tail, 0.0);
    }
}
