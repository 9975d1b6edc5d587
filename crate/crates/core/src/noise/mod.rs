//! The driving noise: a divergence-free, mean-zero, trace-class Wiener
//! process; the stationary stochastic convolution z solving dz + z dt = dB;
//! its frequency truncation; and the pathwise cutoff.
//!
//! Everything is modal: a path stores per-mode complex OU states on the time
//! grid, and fields are synthesised on demand. Draws are keyed by
//! (seed, member, mode, polarization, component, step), so generation order
//! and thread schedule never change a path.

pub mod report;

use crate::error::{Error, Result};
use crate::exact::{rat_i64, rat_to_f64, Rat};
use crate::params::ParameterSchedule;
use crate::rng;
use crate::spectral::{PeriodicGrid, SpectralField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Diagonal spectrum c_k = c0 |k|^(-2s) on a finite mode set, acting on two
/// divergence-free polarizations per wave vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NoiseSpectrum {
    /// decay exponent s (rational string for the exact trace check)
    pub s: String,
    pub c0: f64,
    /// smoothness target sigma (rational string)
    pub sigma: String,
    /// retain modes with 0 < |k| <= mode_budget
    pub mode_budget: f64,
}

#[derive(Clone, Debug)]
pub struct Mode {
    pub k: [i64; 3],
    pub c: f64,
    /// two orthonormal polarization vectors perpendicular to k
    pub pol: [[f64; 3]; 2],
}

impl NoiseSpectrum {
    pub fn s_rat(&self) -> Result<Rat> {
        crate::exact::parse_rat(&self.s).ok_or_else(|| Error::noise("bad rational for s"))
    }

    pub fn sigma_rat(&self) -> Result<Rat> {
        crate::exact::parse_rat(&self.sigma).ok_or_else(|| Error::noise("bad rational for sigma"))
    }

    /// Trace condition 2s > 6 + 2 sigma (3-D mode counting), exact; returns
    /// the rational margin 2s - (6 + 2 sigma).
    pub fn validate(&self) -> Result<Rat> {
        let s = self.s_rat()?;
        let sigma = self.sigma_rat()?;
        let margin = rat_i64(2) * s - (rat_i64(6) + rat_i64(2) * sigma);
        if margin <= Rat::from_integer(0.into()) {
            return Err(Error::noise(format!(
                "trace condition fails: 2s - (6 + 2 sigma) = {margin} <= 0"
            )));
        }
        log::info!(
            "noise trace condition margin 2s-(6+2sigma) = {} ({:.4})",
            margin,
            rat_to_f64(&margin)
        );
        Ok(margin)
    }

    /// Finite trace sum Sum c_k |k|^(3+2sigma) over the retained modes
    /// (both polarizations).
    pub fn trace_sum(&self) -> Result<f64> {
        let sigma = rat_to_f64(&self.sigma_rat()?);
        let s = rat_to_f64(&self.s_rat()?);
        let mut acc = 0.0;
        for m in enumerate_half_modes(self.mode_budget) {
            let k2 = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) as f64;
            let c = self.c0 * k2.powf(-s);
            // both k and -k, two polarizations each
            acc += 4.0 * c * k2.powf(1.5 + sigma);
        }
        Ok(acc)
    }

    /// Representative modes (half space; the -k partner is implied).
    pub fn modes(&self) -> Result<Vec<Mode>> {
        self.validate()?;
        let s = rat_to_f64(&self.s_rat()?);
        let out = enumerate_half_modes(self.mode_budget)
            .into_iter()
            .map(|k| {
                let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
                Mode {
                    k,
                    c: self.c0 * k2.powf(-s),
                    pol: polarizations(k),
                }
            })
            .collect();
        Ok(out)
    }
}

/// Half-space representatives: first nonzero coordinate positive.
fn enumerate_half_modes(budget: f64) -> Vec<[i64; 3]> {
    let b = budget.floor() as i64;
    let mut out = Vec::new();
    for kx in -b..=b {
        for ky in -b..=b {
            for kz in -b..=b {
                let k = [kx, ky, kz];
                if k == [0, 0, 0] {
                    continue;
                }
                let norm2 = (kx * kx + ky * ky + kz * kz) as f64;
                if norm2.sqrt() > budget {
                    continue;
                }
                let lead = k.iter().find(|&&c| c != 0).copied().unwrap();
                if lead > 0 {
                    out.push(k);
                }
            }
        }
    }
    // deterministic order independent of enumeration strategy
    out.sort();
    out
}

/// Two orthonormal vectors perpendicular to k (deterministic choice).
fn polarizations(k: [i64; 3]) -> [[f64; 3]; 2] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let norm = (kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]).sqrt();
    let khat = [kf[0] / norm, kf[1] / norm, kf[2] / norm];
    // pick the axis least aligned with k
    let dots = [khat[0].abs(), khat[1].abs(), khat[2].abs()];
    let axis = if dots[0] <= dots[1] && dots[0] <= dots[2] {
        [1.0, 0.0, 0.0]
    } else if dots[1] <= dots[2] {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let e1 = cross(khat, axis);
    let n1 = (e1[0] * e1[0] + e1[1] * e1[1] + e1[2] * e1[2]).sqrt();
    let e1 = [e1[0] / n1, e1[1] / n1, e1[2] / n1];
    let e2 = cross(khat, e1);
    [e1, e2]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Uniform time grid t_i = t0 + i dt, i = 0..=steps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + self.dt * i as f64
    }

    /// Index of a time on the grid, requiring near-exact alignment.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let x = (t - self.t0) / self.dt;
        let i = x.round();
        if (x - i).abs() < 1e-9 && i >= 0.0 && (i as usize) < self.len() {
            Some(i as usize)
        } else {
            None
        }
    }
}

/// One sampled path of the stochastic convolution: per-mode complex OU
/// states for every time-grid point, plus seed provenance.
#[derive(Clone, Debug)]
pub struct NoisePath {
    pub tgrid: TimeGrid,
    pub modes: Vec<Mode>,
    /// states[time][mode][polarization]
    pub states: Vec<Vec<[Complex64; 2]>>,
    pub seed: u64,
    pub member: u64,
}

/// Exact OU transition over one step for a single real component:
/// z <- e^(-dt) z + sqrt(c (1 - e^(-2 dt)) / 2) xi.
#[inline]
pub fn ou_step(z: f64, c: f64, dt: f64, xi: f64) -> f64 {
    let decay = (-dt).exp();
    z * decay + (c * (1.0 - decay * decay) / 2.0).sqrt() * xi
}

/// Sample a path with exact stationary initialisation at the first grid
/// point (the two-sided process needs no burn-in).
pub fn sample_ou_path(
    spectrum: &NoiseSpectrum,
    tgrid: TimeGrid,
    seed: u64,
    member: u64,
) -> Result<NoisePath> {
    let modes = spectrum.modes()?;
    let mut states = Vec::with_capacity(tgrid.len());
    let mut current: Vec<[Complex64; 2]> = modes
        .iter()
        .enumerate()
        .map(|(mi, m)| {
            std::array::from_fn(|p| {
                let std0 = (m.c / 2.0).sqrt();
                let (g_re, g_im) =
                    rng::gaussian_pair(rng::key(&[seed, member, mi as u64, p as u64, 0]));
                Complex64::new(std0 * g_re, std0 * g_im)
            })
        })
        .collect();
    states.push(current.clone());
    for step in 1..tgrid.len() {
        for (mi, m) in modes.iter().enumerate() {
            for p in 0..2 {
                let (g_re, g_im) = rng::gaussian_pair(rng::key(&[
                    seed,
                    member,
                    mi as u64,
                    p as u64,
                    step as u64,
                ]));
                let z = current[mi][p];
                current[mi][p] = Complex64::new(
                    ou_step(z.re, m.c, tgrid.dt, g_re),
                    ou_step(z.im, m.c, tgrid.dt, g_im),
                );
            }
        }
        states.push(current.clone());
    }
    Ok(NoisePath {
        tgrid,
        modes,
        states,
        seed,
        member,
    })
}

impl NoisePath {
    /// Synthesise z(t_i) (optionally truncated to |k| <= cut) on a grid.
    pub fn field_at(&self, grid: PeriodicGrid, t_idx: usize, cut: Option<f64>) -> SpectralField {
        let mut f = SpectralField::zeros(grid);
        let state = &self.states[t_idx];
        for (m, zs) in self.modes.iter().zip(state.iter()) {
            let kn = ((m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64).sqrt();
            if let Some(c) = cut {
                if kn > c {
                    continue;
                }
            }
            if m.k.iter().any(|&c| c.abs() > grid.max_wave()) {
                continue;
            }
            let idx_p = crate::beltrami::mode_index(&grid, m.k);
            let idx_m = crate::beltrami::mode_index(&grid, [-m.k[0], -m.k[1], -m.k[2]]);
            for p in 0..2 {
                let amp = zs[p];
                for c in 0..3 {
                    let v = amp * m.pol[p][c];
                    f.hat[c][idx_p] += v;
                    f.hat[c][idx_m] += v.conj();
                }
            }
        }
        f.divergence_free = true;
        f.mean_zero = true;
        f
    }

    /// L^2 norm (full measure) of z(t_i) truncated at `cut`, via Parseval on
    /// the modal representation (no grid needed).
    pub fn l2_norm_at(&self, t_idx: usize, cut: Option<f64>) -> f64 {
        let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
        let mut acc = 0.0;
        for (m, zs) in self.modes.iter().zip(self.states[t_idx].iter()) {
            let kn = ((m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64).sqrt();
            if let Some(c) = cut {
                if kn > c {
                    continue;
                }
            }
            // polarizations are orthonormal; +-k both contribute
            acc += 2.0 * (zs[0].norm_sqr() + zs[1].norm_sqr());
        }
        (two_pi_cubed * acc).sqrt()
    }

    /// Sobolev H^s norm (normalized measure) of the truncated field, modal.
    pub fn hs_norm_at(&self, t_idx: usize, s: f64, cut: Option<f64>) -> f64 {
        let mut acc = 0.0;
        for (m, zs) in self.modes.iter().zip(self.states[t_idx].iter()) {
            let k2 = (m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64;
            if let Some(c) = cut {
                if k2.sqrt() > c {
                    continue;
                }
            }
            acc += 2.0 * (1.0 + k2).powf(s) * (zs[0].norm_sqr() + zs[1].norm_sqr());
        }
        acc.sqrt()
    }

    /// C^1_x norm (sup of |z| plus sup of |grad z|) of the truncated field,
    /// evaluated on a synthesis grid that resolves the mode budget.
    pub fn c1_norm_at(&self, t_idx: usize, cut: Option<f64>) -> f64 {
        let grid = self.eval_grid();
        let f = self.field_at(grid, t_idx, cut);
        crate::spectral::norms::c1_x_norm(&f)
    }

    pub fn c0_norm_at(&self, t_idx: usize, cut: Option<f64>) -> f64 {
        let grid = self.eval_grid();
        let f = self.field_at(grid, t_idx, cut);
        crate::spectral::norms::c0_norm(&f)
    }

    /// Small synthesis grid: 4x the largest retained |k| rounded to a power
    /// of two, floored at 16.
    pub fn eval_grid(&self) -> PeriodicGrid {
        let kmax = self
            .modes
            .iter()
            .map(|m| m.k.iter().map(|c| c.abs()).max().unwrap())
            .max()
            .unwrap_or(1) as usize;
        let mut n = 16usize;
        while n < 4 * kmax {
            n *= 2;
        }
        PeriodicGrid::new(n).expect("eval grid")
    }
}

/// The cutoff profile chi_q: 1 on [0, lo], smooth ramp 1 - w(u) with
/// w = 3u^2 - 2u^3 on (lo, hi), 0 beyond. Slope is 1.5/(hi-lo); desk mode
/// widens the band when that exceeds 1 and records the deviation.
#[derive(Clone, Debug)]
pub struct CutoffProfile {
    pub lo: f64,
    pub hi: f64,
    pub rescaled: bool,
}

impl CutoffProfile {
    pub fn from_schedule(schedule: &ParameterSchedule, q: u32) -> Self {
        let lo = schedule.cutoff_lo_f64(q);
        let hi = schedule.cutoff_hi_f64(q);
        let mut out = CutoffProfile {
            lo,
            hi,
            rescaled: false,
        };
        let gap = hi - lo;
        if !(gap > 0.0) || 1.5 / gap > 1.0 {
            match schedule.mode {
                crate::params::RunMode::Desk => {
                    out.hi = lo + 1.5;
                    out.rescaled = true;
                    log::warn!(
                        "chi_{q} band rescaled at desk scale: [{lo:.3e}, {hi:.3e}] -> [{lo:.3e}, {:.3e}]",
                        out.hi
                    );
                }
                crate::params::RunMode::Proof => {
                    // proof configurations pass the exact gap check; keep the
                    // band and let the ledger report the violation
                }
            }
        }
        out
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= self.lo {
            return 1.0;
        }
        if x >= self.hi {
            return 0.0;
        }
        let u = (x - self.lo) / (self.hi - self.lo);
        1.0 - (3.0 * u * u - 2.0 * u * u * u)
    }

    pub fn max_slope(&self) -> f64 {
        1.5 / (self.hi - self.lo)
    }
}

/// z_q time series data: the cutoff factor and the C^1 norms it was built
/// from. The truncated field itself is synthesised on demand from the path.
#[derive(Clone, Debug)]
pub struct CutoffSeries {
    pub q: u32,
    pub f_cut: f64,
    pub chi: Vec<f64>,
    pub c1_norms: Vec<f64>,
    pub profile: CutoffProfile,
}

/// Build z_q = chi_q(|ztilde_q|_C1x) ztilde_q data for one path.
pub fn truncate_and_cutoff(
    path: &NoisePath,
    q: u32,
    schedule: &ParameterSchedule,
    nyquist: f64,
) -> Result<CutoffSeries> {
    let f_cut = schedule.f_cut_f64(q);
    let budget = path
        .modes
        .iter()
        .map(|m| ((m.k[0] * m.k[0] + m.k[1] * m.k[1] + m.k[2] * m.k[2]) as f64).sqrt())
        .fold(0.0, f64::max);
    if f_cut < budget && f_cut > nyquist {
        return Err(Error::noise(format!(
            "f(q) = {f_cut:.3e} exceeds the grid Nyquist {nyquist}"
        )));
    }
    let profile = CutoffProfile::from_schedule(schedule, q);
    let mut chi = Vec::with_capacity(path.tgrid.len());
    let mut c1 = Vec::with_capacity(path.tgrid.len());
    for t in 0..path.tgrid.len() {
        let norm = path.c1_norm_at(t, Some(f_cut));
        chi.push(profile.eval(norm));
        c1.push(norm);
    }
    Ok(CutoffSeries {
        q,
        f_cut,
        chi,
        c1_norms: c1,
        profile,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_schedule, reference_inputs, BaseSpec, RunMode};

    fn spectrum() -> NoiseSpectrum {
        NoiseSpectrum {
            s: "5".into(),
            c0: 0.01,
            sigma: "1".into(),
            mode_budget: 2.2,
        }
    }

    fn tgrid() -> TimeGrid {
        TimeGrid {
            t0: -1.0,
            dt: 0.05,
            steps: 60,
        }
    }

    #[test]
    fn trace_condition() {
        assert!(spectrum().validate().is_ok());
        let bad = NoiseSpectrum {
            s: "3".into(),
            ..spectrum()
        };
        assert!(bad.validate().is_err());
        // boundary 2s = 6 + 2 sigma rejected exactly
        let edge = NoiseSpectrum {
            s: "4".into(),
            sigma: "1".into(),
            ..spectrum()
        };
        assert!(edge.validate().is_err());
    }

    #[test]
    fn ou_transition_example() {
        // c = 2, dt = ln 2: z -> z/2 + (sqrt(3)/2) xi
        let z = ou_step(1.0, 2.0, 2.0f64.ln(), 1.0);
        assert!((z - (0.5 + 3.0f64.sqrt() / 2.0)).abs() < 1e-14);
    }

    #[test]
    fn zero_spectrum_gives_zero_path() {
        let spec = NoiseSpectrum {
            c0: 0.0,
            ..spectrum()
        };
        let path = sample_ou_path(&spec, tgrid(), 7, 0).unwrap();
        for st in &path.states {
            for m in st {
                assert_eq!(m[0], Complex64::new(0.0, 0.0));
                assert_eq!(m[1], Complex64::new(0.0, 0.0));
            }
        }
    }

    #[test]
    fn determinism_bitwise() {
        let a = sample_ou_path(&spectrum(), tgrid(), 42, 3).unwrap();
        let b = sample_ou_path(&spectrum(), tgrid(), 42, 3).unwrap();
        for (sa, sb) in a.states.iter().zip(b.states.iter()) {
            for (ma, mb) in sa.iter().zip(sb.iter()) {
                assert!(ma[0] == mb[0] && ma[1] == mb[1]);
            }
        }
        let c = sample_ou_path(&spectrum(), tgrid(), 43, 3).unwrap();
        assert!(a.states[1][0][0] != c.states[1][0][0]);
    }

    #[test]
    fn stationary_variance_and_lag_covariance() {
        let spec = spectrum();
        let grid = tgrid();
        let members = 4000;
        let mode_idx = 0;
        let c = spec.modes().unwrap()[mode_idx].c;
        let mut sum_var = 0.0;
        let mut sum_cov = 0.0;
        let lag_steps = 10; // tau = 0.5
        let t_idx = 20;
        for m in 0..members {
            let p = sample_ou_path(&spec, grid, 11, m).unwrap();
            let z0 = p.states[t_idx][mode_idx][0].re;
            let z1 = p.states[t_idx + lag_steps][mode_idx][0].re;
            sum_var += z0 * z0;
            sum_cov += z0 * z1;
        }
        let var = sum_var / members as f64;
        let cov = sum_cov / members as f64;
        let tau = grid.dt * lag_steps as f64;
        let se_var = (c / 2.0) * (2.0 / members as f64).sqrt();
        assert!(
            (var - c / 2.0).abs() < 3.0 * se_var,
            "variance {var} vs {}",
            c / 2.0
        );
        let target = (c / 2.0) * (-tau).exp();
        assert!((cov - target).abs() < 4.0 * se_var, "cov {cov} vs {target}");
    }

    #[test]
    fn field_is_divergence_free_and_mean_zero() {
        let path = sample_ou_path(&spectrum(), tgrid(), 5, 0).unwrap();
        let grid = PeriodicGrid::new(16).unwrap();
        let f = path.field_at(grid, 10, None);
        assert!(f.divergence_defect() < 1e-12);
        let mean = f.mean_vector();
        assert!(mean.iter().all(|v| v.abs() < 1e-15));
        assert!(f.reality_defect() < 1e-12);
        // modal Parseval agrees with the grid norm
        let modal = path.l2_norm_at(10, None);
        let gridn = f.l2_norm_full();
        assert!((modal - gridn).abs() < 1e-10 * modal.max(1e-10));
    }

    #[test]
    fn cutoff_contract() {
        let mut inputs = reference_inputs();
        inputs.a = BaseSpec::Small(2);
        let sched = build_schedule(&inputs, RunMode::Desk).unwrap();
        let profile = CutoffProfile::from_schedule(&sched, 0);
        // desk band is degenerate, so it must be rescaled to slope 1
        assert!(profile.rescaled);
        assert!(profile.max_slope() <= 1.0 + 1e-12);
        assert_eq!(profile.eval(0.0), 1.0);
        assert_eq!(profile.eval(profile.lo), 1.0);
        assert_eq!(profile.eval(profile.hi + 1.0), 0.0);
        let mid = profile.eval((profile.lo + profile.hi) / 2.0);
        assert!(mid > 0.0 && mid < 1.0);
        // monotone non-increasing on an increasing sequence
        let mut last = f64::INFINITY;
        let mut x = 0.0;
        while x < profile.hi * 1.2 {
            let v = profile.eval(x);
            assert!(v <= last + 1e-15);
            last = v;
            x += profile.hi / 50.0;
        }
    }

    #[test]
    fn proof_scale_cutoff_not_rescaled() {
        let sched = build_schedule(&reference_inputs(), RunMode::Proof).unwrap();
        let profile = CutoffProfile::from_schedule(&sched, 0);
        assert!(!profile.rescaled);
        assert!(profile.max_slope() <= 1.0);
    }

    #[test]
    fn truncation_examples() {
        let mut inputs = reference_inputs();
        inputs.a = BaseSpec::Small(2);
        // gamma = 1/8 keeps f(0), f(1) tiny and representable
        inputs.gamma = "1/8".into();
        let sched = build_schedule(&inputs, RunMode::Desk).unwrap();
        let path = sample_ou_path(&spectrum(), tgrid(), 9, 0).unwrap();
        let cut = truncate_and_cutoff(&path, 0, &sched, 8.0).unwrap();
        // pathwise bound from the cutoff: chi * C0 <= hi threshold
        for t in 0..path.tgrid.len() {
            let c0 = path.c0_norm_at(t, Some(cut.f_cut));
            assert!(cut.chi[t] * c0 <= cut.profile.hi * (1.0 + 1e-12));
        }
    }
}
