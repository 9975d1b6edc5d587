//! One convex-integration step: mollification, energy gap, amplitude fields,
//! Beltrami perturbation, and the Reynolds stress reassembly.
//!
//! The step is a streaming pipeline over time slices: base fields are
//! produced with one slice of lookahead, the stress terms are assembled at
//! the middle of a three-slice ring, and everything downstream (residual
//! checks, norm series, dumps) consumes slices as they retire.

pub mod step;

use crate::error::{Error, Result};
use crate::exact::rat_to_f64;
use crate::noise::{CutoffSeries, NoisePath, TimeGrid};
use crate::params::ParameterSchedule;
use crate::spectral::{PeriodicGrid, SpectralField, SpectralScalar, SpectralTensorField};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

pub use step::{step, ReynoldsTerms, StepOptions, StepOutput};

// ---------------------------------------------------------------------------
// band-compressed storage
// ---------------------------------------------------------------------------

/// Dense cube of Fourier coefficients with |k_i| <= band, component-major.
/// Time series of fields are stored this way; a slice at desk scale is a few
/// hundred kilobytes instead of tens of megabytes.
#[derive(Clone, Debug)]
pub struct Compact<const C: usize> {
    pub band: i64,
    pub data: Vec<Complex64>,
}

fn side(band: i64) -> usize {
    (2 * band + 1) as usize
}

impl<const C: usize> Compact<C> {
    pub fn cube_len(band: i64) -> usize {
        side(band).pow(3)
    }

    pub fn zeros(band: i64) -> Self {
        Compact {
            band,
            data: vec![Complex64::default(); C * Self::cube_len(band)],
        }
    }

    #[inline]
    fn cidx(band: i64, k: [i64; 3]) -> usize {
        let s = side(band);
        (((k[0] + band) as usize * s) + (k[1] + band) as usize) * s + (k[2] + band) as usize
    }

    pub fn pack_hats(grid: &PeriodicGrid, hats: [&[Complex64]; C], band: i64) -> Self {
        let mut out = Self::zeros(band);
        let cube = Self::cube_len(band);
        grid.for_each_mode(|idx, k| {
            if k.iter().any(|c| c.abs() > band) {
                return;
            }
            let ci = Self::cidx(band, k);
            for c in 0..C {
                out.data[c * cube + ci] = hats[c][idx];
            }
        });
        out
    }

    pub fn unpack_into(&self, grid: &PeriodicGrid, hats: [&mut Vec<Complex64>; C]) {
        let cube = Self::cube_len(self.band);
        for h in &hats {
            debug_assert_eq!(h.len(), grid.len());
        }
        let band = self.band.min(grid.max_wave());
        let mut hats = hats;
        for k0 in -band..=band {
            for k1 in -band..=band {
                for k2 in -band..=band {
                    let k = [k0, k1, k2];
                    let ci = Self::cidx(self.band, k);
                    let gi = crate::beltrami::mode_index(grid, k);
                    for (c, h) in hats.iter_mut().enumerate() {
                        h[gi] = self.data[c * cube + ci];
                    }
                }
            }
        }
    }

    /// Linear accumulation: self += w * other (bands must agree).
    pub fn axpy(&mut self, w: f64, other: &Compact<C>) {
        assert_eq!(self.band, other.band);
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += w * b;
        }
    }
}

pub type CompactScalar = Compact<1>;
pub type CompactVector = Compact<3>;
pub type CompactTensor = Compact<6>;

pub fn pack_vector(f: &SpectralField, band: i64) -> CompactVector {
    Compact::pack_hats(
        &f.grid,
        [&f.hat[0], &f.hat[1], &f.hat[2]],
        band,
    )
}

pub fn unpack_vector(c: &CompactVector, grid: PeriodicGrid) -> SpectralField {
    let mut f = SpectralField::zeros(grid);
    let [a, b, d] = &mut f.hat;
    c.unpack_into(&grid, [a, b, d]);
    f.divergence_free = false;
    f.mean_zero = false;
    f
}

pub fn pack_tensor(f: &SpectralTensorField, band: i64) -> CompactTensor {
    Compact::pack_hats(
        &f.grid,
        [
            &f.hat[0], &f.hat[1], &f.hat[2], &f.hat[3], &f.hat[4], &f.hat[5],
        ],
        band,
    )
}

pub fn unpack_tensor(c: &CompactTensor, grid: PeriodicGrid) -> SpectralTensorField {
    let mut f = SpectralTensorField::zeros(grid);
    let [h0, h1, h2, h3, h4, h5] = &mut f.hat;
    c.unpack_into(&grid, [h0, h1, h2, h3, h4, h5]);
    f.traceless = false;
    f
}

pub fn pack_scalar(f: &SpectralScalar, band: i64) -> CompactScalar {
    Compact::pack_hats(&f.grid, [&f.hat], band)
}

pub fn unpack_scalar(c: &CompactScalar, grid: PeriodicGrid) -> SpectralScalar {
    let mut f = SpectralScalar::zeros(grid);
    c.unpack_into(&grid, [&mut f.hat]);
    f
}

/// Time series of compact fields aligned to a global slice grid.
#[derive(Clone, Debug)]
pub struct Series<const C: usize> {
    pub start_idx: usize,
    pub slices: Vec<Compact<C>>,
}

impl<const C: usize> Series<C> {
    pub fn get(&self, idx: usize) -> Option<&Compact<C>> {
        idx.checked_sub(self.start_idx)
            .and_then(|i| self.slices.get(i))
    }
}

// ---------------------------------------------------------------------------
// iteration state
// ---------------------------------------------------------------------------

/// The object advanced by one convex-integration step.
#[derive(Clone, Debug)]
pub struct IterationState {
    pub q: u32,
    pub grid_n: usize,
    pub tgrid: TimeGrid,
    pub member: u64,
    /// velocity series; `None` is the identically-zero cold start
    pub v: Option<Series<3>>,
    /// Reynolds stress series
    pub r: Series<6>,
    /// pressure series
    pub p: Series<1>,
    /// per-slice |v_q + z_q|_{L^2}^2 (full measure), for the energy gap
    pub vz_l2sq: Vec<f64>,
    /// worst weak-form residual recorded by the step that produced this state
    pub residual: f64,
}

impl IterationState {
    pub fn v_field(&self, grid: PeriodicGrid, idx: usize) -> Result<SpectralField> {
        match &self.v {
            None => Ok(SpectralField::zeros(grid)),
            Some(series) => series
                .get(idx)
                .map(|c| {
                    let mut f = unpack_vector(c, grid);
                    f.divergence_free = true;
                    f.mean_zero = true;
                    f
                })
                .ok_or_else(|| Error::iterate("velocity history missing for this slice")),
        }
    }

    pub fn r_field(&self, grid: PeriodicGrid, idx: usize) -> Result<SpectralTensorField> {
        self.r
            .get(idx)
            .map(|c| {
                let mut f = unpack_tensor(c, grid);
                f.traceless = true;
                f
            })
            .ok_or_else(|| Error::iterate("stress history missing for this slice"))
    }

    pub fn p_field(&self, grid: PeriodicGrid, idx: usize) -> Result<SpectralScalar> {
        self.p
            .get(idx)
            .map(|c| unpack_scalar(c, grid))
            .ok_or_else(|| Error::iterate("pressure history missing for this slice"))
    }
}

/// Cold start: v_0 = 0, R_0 = z_0 (x)o z_0 - R z_0, p_0 from the Leray split
/// of the defining identity. Everything is evaluated on a small synthesis
/// grid adapted to the noise band and stored compactly.
pub fn initial_state(
    schedule: &ParameterSchedule,
    path: &NoisePath,
    cutoff0: &CutoffSeries,
    grid_n: usize,
) -> Result<IterationState> {
    let tgrid = path.tgrid;
    let zband = path
        .modes
        .iter()
        .map(|m| m.k.iter().map(|c| c.abs()).max().unwrap())
        .max()
        .unwrap_or(1);
    let f_cut = schedule.f_cut_f64(0);
    // synthesis grid: products of band-b fields need 3b+1 points
    let mut n_small = 16usize;
    while ((n_small - 1) / 3) < (2 * zband) as usize {
        n_small *= 2;
    }
    let sgrid = PeriodicGrid::new(n_small)?;
    let mut r_slices = Vec::with_capacity(tgrid.len());
    let mut p_slices = Vec::with_capacity(tgrid.len());
    let mut vz = Vec::with_capacity(tgrid.len());
    for t in 0..tgrid.len() {
        let mut z0 = path.field_at(sgrid, t, Some(f_cut));
        z0.scale(cutoff0.chi[t]);
        let prod = crate::spectral::ops::outer_sym(&z0, &z0);
        let mut r0 = prod.clone();
        r0.make_traceless();
        let rz = crate::spectral::ops::inverse_divergence(&z0)?;
        let r0 = r0.sub(&rz);
        // pressure: grad p = div R + z - div((v+z)(x)(v+z)) with v = 0
        let mut g = crate::spectral::ops::divergence_tensor(&r0);
        g.add_assign(&z0);
        let dp = crate::spectral::ops::divergence_tensor(&prod);
        let g = g.sub(&dp);
        let p0 = pressure_from_gradient_source(&g)?;
        r_slices.push(pack_tensor(&r0, 2 * zband));
        p_slices.push(pack_scalar(&p0, 2 * zband));
        vz.push(path.l2_norm_at(t, Some(f_cut)).powi(2) * cutoff0.chi[t].powi(2));
    }
    Ok(IterationState {
        q: 0,
        grid_n,
        tgrid,
        member: path.member,
        v: None,
        r: Series {
            start_idx: 0,
            slices: r_slices,
        },
        p: Series {
            start_idx: 0,
            slices: p_slices,
        },
        vz_l2sq: vz,
        residual: 0.0,
    })
}

/// Solve Lap p = div G for the scalar whose gradient is the closed part of G.
pub fn pressure_from_gradient_source(g: &SpectralField) -> Result<SpectralScalar> {
    let div = crate::spectral::ops::divergence(g);
    let grid = g.grid;
    let mut p = SpectralScalar::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 > 0.0 {
            p.hat[idx] = -div.hat[idx] / k2;
        }
    });
    Ok(p)
}

// ---------------------------------------------------------------------------
// one-sided mollifier
// ---------------------------------------------------------------------------

/// Discrete one-sided mollifier: time taps supported strictly in the past,
/// a separable compact space bump applied as a spectral multiplier.
#[derive(Clone, Debug)]
pub struct Mollifier {
    pub ell: f64,
    pub ell_requested: f64,
    pub floored: bool,
    /// weight of the tap at s = (i+1) dt
    pub taps: Vec<f64>,
    /// per-axis multiplier indexed by |k|
    space_axis: Vec<f64>,
}

impl Mollifier {
    pub fn new(ell_requested: f64, dt: f64, max_axis_k: usize, floor_dts: f64) -> Self {
        let floor = floor_dts * dt;
        let ell = ell_requested.max(floor);
        let floored = ell > ell_requested;
        if floored {
            log::warn!(
                "mollification scale floored at desk resolution: {ell_requested:.3e} -> {ell:.3e}"
            );
        }
        // time kernel phi(u) ~ (u(1-u))^3 on (0,1), sampled at tap centres
        let n_taps = ((ell / dt).round() as usize).max(1);
        let mut taps: Vec<f64> = (0..n_taps)
            .map(|i| {
                let u = (i as f64 + 0.5) / n_taps as f64;
                (u * (1.0 - u)).powi(3)
            })
            .collect();
        let total: f64 = taps.iter().sum();
        for w in taps.iter_mut() {
            *w /= total;
        }
        // space kernel psi(u) ~ (1-u^2)^3 on (-1,1): multiplier via Simpson
        let mut space_axis = Vec::with_capacity(max_axis_k + 1);
        for k in 0..=max_axis_k {
            space_axis.push(bump_multiplier(k as f64 * ell));
        }
        Mollifier {
            ell,
            ell_requested,
            floored,
            taps,
            space_axis,
        }
    }

    #[inline]
    pub fn space_mult(&self, k: [i64; 3]) -> f64 {
        let mut m = 1.0;
        for d in 0..3 {
            let a = k[d].unsigned_abs() as usize;
            m *= self.space_axis.get(a).copied().unwrap_or(0.0);
        }
        m
    }

    pub fn n_taps(&self) -> usize {
        self.taps.len()
    }
}

/// Fourier transform of the normalized bump (1-u^2)^3 at frequency theta.
fn bump_multiplier(theta: f64) -> f64 {
    // Simpson quadrature on [-1, 1]
    let n = 128usize;
    let h = 2.0 / n as f64;
    let psi = |u: f64| (1.0 - u * u).max(0.0).powi(3);
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..=n {
        let u = -1.0 + i as f64 * h;
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        num += w * psi(u) * (theta * u).cos();
        den += w * psi(u);
    }
    num / den
}

// ---------------------------------------------------------------------------
// energy profile and the energy gap
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnergyProfile {
    Constant { value: f64 },
    Table { times: Vec<f64>, values: Vec<f64> },
}

impl EnergyProfile {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            EnergyProfile::Constant { value } => *value,
            EnergyProfile::Table { times, values } => {
                if times.is_empty() {
                    return 0.0;
                }
                if t <= times[0] {
                    return values[0];
                }
                if t >= *times.last().unwrap() {
                    return *values.last().unwrap();
                }
                let i = times.partition_point(|x| *x <= t) - 1;
                let w = (t - times[i]) / (times[i + 1] - times[i]);
                values[i] * (1.0 - w) + values[i + 1] * w
            }
        }
    }
}

/// zeta_q(t) = [e(t)(1 - delta_{q+2}) - E|v_q + z_q|_{L2}^2] / (3 (2 pi)^3),
/// with the expectation estimated over the supplied ensemble series.
///
/// For q >= 1 a non-positive gap aborts (the iteration is not well defined);
/// for q = 0 the start condition E|v_0+z_0|^2 <= e/2 is enforced instead.
pub fn energy_gap(
    e: &EnergyProfile,
    q: u32,
    schedule: &ParameterSchedule,
    tgrid: &TimeGrid,
    ensemble_vz_l2sq: &[Vec<f64>],
) -> Result<Vec<f64>> {
    if ensemble_vz_l2sq.len() < 2 {
        return Err(Error::iterate("energy gap needs an ensemble of at least 2"));
    }
    let m = ensemble_vz_l2sq.len() as f64;
    let delta_q2 = schedule.delta_f64(q + 2);
    let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
    let mut out = Vec::with_capacity(tgrid.len());
    for n in 0..tgrid.len() {
        let t = tgrid.time(n);
        let mean: f64 = ensemble_vz_l2sq.iter().map(|s| s[n]).sum::<f64>() / m;
        let et = e.eval(t);
        if et < schedule.energy.e_lo * (1.0 - 1e-12) {
            return Err(Error::iterate(format!(
                "energy profile dips below the floor at t = {t}"
            )));
        }
        if q == 0 && mean > et / 2.0 {
            return Err(Error::iterate(format!(
                "q=0 start condition violated: E|v0+z0|^2 = {mean:.4e} > e/2 = {:.4e}",
                et / 2.0
            )));
        }
        let zeta = (et * (1.0 - delta_q2) - mean) / (3.0 * two_pi_cubed);
        if q >= 1 && zeta <= 0.0 {
            return Err(Error::iterate(format!(
                "energy gap non-positive at t = {t}: zeta_q = {zeta:.4e}"
            )));
        }
        out.push(zeta);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// amplitudes
// ---------------------------------------------------------------------------

/// Pointwise amplitude data of one time slice: for every active window j and
/// direction pair, the field a_(xi) (eta factor included), plus rho and the
/// diagnostics the estimates ask for.
pub struct AmplitudeSlice {
    /// (window j, eta weight)
    pub active: Vec<(i64, f64)>,
    /// a[win][pair][grid point], shared between +-xi
    pub a: Vec<Vec<Vec<f64>>>,
    pub rho: Vec<f64>,
    pub sup_a: f64,
    pub min_coeff: f64,
    /// worst Frobenius distance of Id - c* R/rho from Id (admissibility)
    pub max_arg_dist: f64,
}

/// Build the amplitude fields at one slice.
///
/// rho = sqrt(ell^2 + |R_ell|_F^2) + c* zeta_ell; the gamma argument
/// Id - c* R_ell / rho then lies in the admissibility ball pointwise.
pub fn amplitudes(
    grid: PeriodicGrid,
    r_ell_phys: &[Vec<f64>; 6],
    zeta_ell: f64,
    ell: f64,
    eta_weights: &[(i64, f64)],
    schedule: &ParameterSchedule,
) -> Result<AmplitudeSlice> {
    let set = crate::beltrami::direction_sets();
    let c_star = schedule.c_star;
    if zeta_ell < 0.0 {
        return Err(Error::iterate("negative mollified energy gap"));
    }
    let len = grid.len();
    let mut rho = vec![0.0f64; len];
    let mut max_arg = 0.0f64;
    for idx in 0..len {
        let mut fro2 = 0.0;
        for (slot, (i, j)) in crate::spectral::SYM_INDEX.iter().enumerate() {
            let v = r_ell_phys[slot][idx];
            fro2 += if i == j { v * v } else { 2.0 * v * v };
        }
        let r = (ell * ell + fro2).sqrt() + c_star * zeta_ell;
        rho[idx] = r;
        max_arg = max_arg.max(c_star * fro2.sqrt() / r);
    }
    if max_arg > c_star * (1.0 + 1e-12) {
        return Err(Error::iterate(
            "amplitude admissibility violated: |c* R/rho| exceeds c*",
        ));
    }
    let c_star_inv_sqrt = 1.0 / c_star.sqrt();
    let mut a_all = Vec::with_capacity(eta_weights.len());
    let mut sup_a = 0.0f64;
    let mut min_coeff = f64::INFINITY;
    for &(j, eta) in eta_weights {
        let family = set.family(j);
        let mut per_pair = Vec::with_capacity(family.pairs.len());
        for pair in &family.pairs {
            let mut field = vec![0.0f64; len];
            let m = &pair.m_matrix;
            for idx in 0..len {
                // <M, R>_F with symmetric 6-component storage
                let mut inner = 0.0;
                for (slot, (i, jj)) in crate::spectral::SYM_INDEX.iter().enumerate() {
                    let w = if i == jj { 1.0 } else { 2.0 };
                    inner += w * m[*i][*jj] * r_ell_phys[slot][idx];
                }
                let c = 0.25 - c_star * inner / rho[idx];
                min_coeff = min_coeff.min(c);
                if c < -1e-12 {
                    return Err(Error::iterate(
                        "amplitude admissibility violated: negative coefficient",
                    ));
                }
                let gamma = c.max(0.0).sqrt();
                let a = c_star_inv_sqrt * rho[idx].sqrt() * eta * gamma;
                sup_a = sup_a.max(a);
                field[idx] = a;
            }
            per_pair.push(field);
        }
        a_all.push(per_pair);
    }
    Ok(AmplitudeSlice {
        active: eta_weights.to_vec(),
        a: a_all,
        rho,
        sup_a,
        min_coeff,
        max_arg_dist: max_arg,
    })
}

/// Pointwise check of the decomposition c*^{-1} rho Id - R_ell =
/// 1/2 sum_j sum_xi a^2 (Id - xi xi^T) on a subsample of grid points.
/// Returns the worst absolute residual relative to rho.
pub fn amplitude_identity_residual(
    grid: PeriodicGrid,
    amp: &AmplitudeSlice,
    r_ell_phys: &[Vec<f64>; 6],
    schedule: &ParameterSchedule,
    sample_stride: usize,
) -> f64 {
    let set = crate::beltrami::direction_sets();
    let c_star = schedule.c_star;
    let mut worst: f64 = 0.0;
    let len = grid.len();
    let mut idx = 0;
    while idx < len {
        let mut acc = [[0.0f64; 3]; 3];
        for (w, &(j, _)) in amp.active.iter().enumerate() {
            let family = set.family(j);
            for (pi, pair) in family.pairs.iter().enumerate() {
                let a = amp.a[w][pi][idx];
                let xi = pair.xi.f64();
                // the +- pair contributes twice: 2 * (1/2) a^2 (Id - xi xi)
                for r in 0..3 {
                    for c in 0..3 {
                        let t = if r == c { 1.0 } else { 0.0 };
                        acc[r][c] += a * a * (t - xi[r] * xi[c]);
                    }
                }
            }
        }
        let mut err = 0.0f64;
        for (slot, (r, c)) in crate::spectral::SYM_INDEX.iter().enumerate() {
            let target = if r == c {
                amp.rho[idx] / c_star - r_ell_phys[slot][idx]
            } else {
                -r_ell_phys[slot][idx]
            };
            let w = if r == c { 1.0 } else { 2.0 };
            err += w * (acc[*r][*c] - target) * (acc[*r][*c] - target);
        }
        worst = worst.max(err.sqrt() / amp.rho[idx].max(1e-300));
        idx += sample_stride.max(1);
    }
    worst
}

// ---------------------------------------------------------------------------
// perturbation
// ---------------------------------------------------------------------------

/// Per-slice principal part, corrector and total perturbation.
pub struct PerturbationSlice {
    pub w_p: SpectralField,
    pub w_c: SpectralField,
    pub w: SpectralField,
    /// analytic corrector formula, for cross-checking w_c = w - w_p
    pub wc_formula_c0: f64,
}

/// Assemble w_p = P_K sum a B e^(i lambda xi.Phi) and w = curl(w_p)/lambda;
/// the corrector is the exact difference w - w_p, keeping div w = 0 to
/// machine precision.
///
/// psi_phys[win] are the displacement components of the active windows on
/// the assembly grid.
pub fn perturbation(
    grid: PeriodicGrid,
    amp: &AmplitudeSlice,
    psi_phys: &[[Vec<f64>; 3]],
    lambda: i64,
) -> Result<PerturbationSlice> {
    let set = crate::beltrami::direction_sets();
    if lambda % set.n_star != 0 || lambda <= 0 {
        return Err(Error::iterate(format!(
            "wave frequency {lambda} is not a positive multiple of n* = {}",
            set.n_star
        )));
    }
    if lambda > grid.dealias_band() {
        return Err(Error::iterate(format!(
            "wave frequency {lambda} exceeds the dealias band {}",
            grid.dealias_band()
        )));
    }
    let n = grid.n;
    let len = grid.len();
    let mut sum: [Vec<Complex64>; 3] = std::array::from_fn(|_| vec![Complex64::default(); len]);
    for (w, &(j, _)) in amp.active.iter().enumerate() {
        let family = set.family(j);
        let psi = &psi_phys[w];
        // per-point power tables U_d^m = e^(i m Psi_d), m = 0..=lambda
        // (built per axis value on the fly below)
        for (pi, pair) in family.pairs.iter().enumerate() {
            let k = crate::beltrami::wave_vector(&pair.xi, lambda)?;
            if k.iter().any(|c| c.abs() > grid.max_wave()) {
                return Err(Error::iterate("wave vector outside the grid band"));
            }
            // axis tables for e^(i k . x)
            let tables: [Vec<Complex64>; 3] = std::array::from_fn(|d| {
                (0..n)
                    .map(|m| {
                        let th = k[d] as f64 * grid.coord(m);
                        Complex64::new(th.cos(), th.sin())
                    })
                    .collect()
            });
            let b = pair.b_vec;
            let afield = &amp.a[w][pi];
            for ix in 0..n {
                let ex = tables[0][ix];
                for iy in 0..n {
                    let exy = ex * tables[1][iy];
                    let base = (ix * n + iy) * n;
                    for iz in 0..n {
                        let idx = base + iz;
                        let a = afield[idx];
                        if a == 0.0 {
                            continue;
                        }
                        // phase k . Psi
                        let th = k[0] as f64 * psi[0][idx]
                            + k[1] as f64 * psi[1][idx]
                            + k[2] as f64 * psi[2][idx];
                        let e_psi = Complex64::new(th.cos(), th.sin());
                        let phase = exy * tables[2][iz] * e_psi * a;
                        // +- pair sums to twice the real part
                        for c in 0..3 {
                            let v = phase * b[c];
                            sum[c][idx] += Complex64::new(2.0 * v.re, 0.0);
                        }
                    }
                }
            }
        }
    }
    // forward transform the (real) sum and truncate
    let mut w_p = SpectralField::zeros(grid);
    for c in 0..3 {
        let mut hat = std::mem::take(&mut sum[c]);
        grid.fft().forward(&mut hat);
        crate::spectral::ops::truncate_dealias_hat(&grid, &mut hat);
        w_p.hat[c] = hat;
    }
    w_p.divergence_free = false;
    w_p.mean_zero = false;
    let mut w = crate::spectral::ops::curl(&w_p);
    w.scale(1.0 / lambda as f64);
    let w_c = w.sub(&w_p);
    Ok(PerturbationSlice {
        wc_formula_c0: crate::spectral::norms::c0_norm(&w_c),
        w_p,
        w_c,
        w,
    })
}

// ---------------------------------------------------------------------------
// helpers shared with the driver
// ---------------------------------------------------------------------------

/// Largest multiple of n* at or below one third of the grid Nyquist.
pub fn desk_lambda(grid: &PeriodicGrid, n_star: i64) -> Result<i64> {
    let third = (grid.n as i64 / 2) / 3;
    let lam = (third / n_star) * n_star;
    if lam < n_star {
        return Err(Error::iterate(format!(
            "grid {} too small for a wave frequency divisible by {n_star}",
            grid.n
        )));
    }
    Ok(lam)
}

pub fn schedule_f64(schedule: &ParameterSchedule) -> (f64, f64) {
    (
        rat_to_f64(&schedule.gamma),
        rat_to_f64(&schedule.sigma),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{build_schedule, reference_inputs, BaseSpec, RunMode};

    fn desk_schedule() -> ParameterSchedule {
        let mut inputs = reference_inputs();
        inputs.a = BaseSpec::Small(2);
        inputs.gamma = "1/2".into();
        build_schedule(&inputs, RunMode::Desk).unwrap()
    }

    #[test]
    fn compact_roundtrip() {
        let grid = PeriodicGrid::new(16).unwrap();
        let mut f = SpectralField::zeros(grid);
        let idx = crate::beltrami::mode_index(&grid, [1, -2, 0]);
        f.hat[0][idx] = Complex64::new(0.5, -0.25);
        let idxc = crate::beltrami::mode_index(&grid, [-1, 2, 0]);
        f.hat[0][idxc] = Complex64::new(0.5, 0.25);
        let c = pack_vector(&f, 3);
        let g = unpack_vector(&c, grid);
        for d in 0..3 {
            let err = f.hat[d]
                .iter()
                .zip(g.hat[d].iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err == 0.0);
        }
    }

    #[test]
    fn mollifier_is_causal_and_normalized() {
        let m = Mollifier::new(0.25, 1.0 / 128.0, 21, 8.0);
        assert!(!m.floored);
        assert_eq!(m.n_taps(), 32);
        let s: f64 = m.taps.iter().sum();
        assert!((s - 1.0).abs() < 1e-14);
        // all taps strictly in the past
        assert!(m.taps.iter().all(|w| *w >= 0.0));
        // space multiplier: 1 at k = 0, decays, symmetric bump transform
        assert!((m.space_mult([0, 0, 0]) - 1.0).abs() < 1e-12);
        assert!(m.space_mult([5, 0, 0]) < 1.0);
    }

    #[test]
    fn mollifier_floors_tiny_scales() {
        let m = Mollifier::new(1e-6, 1.0 / 128.0, 10, 8.0);
        assert!(m.floored);
        assert!((m.ell - 8.0 / 128.0).abs() < 1e-15);
    }

    #[test]
    fn energy_gap_cold_start_value() {
        // v0 = 0, noise off, e = K: zeta_0 = K (1 - 1/2) / (3 (2pi)^3)
        let sched = desk_schedule();
        let k_energy = sched.energy.e_lo;
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps: 4,
        };
        let zeros = vec![vec![0.0; tg.len()]; 2];
        let e = EnergyProfile::Constant { value: k_energy };
        let zeta = energy_gap(&e, 0, &sched, &tg, &zeros).unwrap();
        let expect = k_energy / (6.0 * (2.0 * std::f64::consts::PI).powi(3));
        for z in zeta {
            assert!((z - expect).abs() < 1e-9 * expect);
        }
    }

    #[test]
    fn energy_gap_errors() {
        let sched = desk_schedule();
        let k_energy = sched.energy.e_lo;
        let tg = TimeGrid {
            t0: 0.0,
            dt: 0.1,
            steps: 2,
        };
        let e = EnergyProfile::Constant { value: k_energy };
        // q = 0: start condition violated when E exceeds e/2
        let big = vec![vec![k_energy; tg.len()]; 2];
        assert!(energy_gap(&e, 0, &sched, &tg, &big).is_err());
        // q >= 1: zeta <= 0 aborts: boundary case E = e (1 - delta_3)
        let d3 = sched.delta_f64(3);
        let edge = vec![vec![k_energy * (1.0 - d3); tg.len()]; 2];
        assert!(energy_gap(&e, 1, &sched, &tg, &edge).is_err());
    }

    fn zero_tensor_phys(grid: PeriodicGrid) -> [Vec<f64>; 6] {
        std::array::from_fn(|_| vec![0.0; grid.len()])
    }

    #[test]
    fn amplitude_degenerate_rho_is_ell() {
        // R_ell = 0, zeta = 0 -> rho = ell everywhere
        let grid = PeriodicGrid::new(16).unwrap();
        let sched = desk_schedule();
        let r0 = zero_tensor_phys(grid);
        let amp = amplitudes(grid, &r0, 0.0, 0.25, &[(0, 1.0)], &sched).unwrap();
        for v in &amp.rho {
            assert!((v - 0.25).abs() < 1e-15);
        }
        // gamma(Id) = 1/2: a = c*^{-1/2} sqrt(ell) * 1/2
        let expect = 0.25f64.sqrt() * 0.5 / sched.c_star.sqrt();
        assert!((amp.sup_a - expect).abs() < 1e-7);
    }

    #[test]
    fn amplitude_identity_pointwise() {
        let grid = PeriodicGrid::new(16).unwrap();
        let sched = desk_schedule();
        // small random stress field
        let mut rng = crate::rng::DetRng::new(5);
        let mut comps: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for slot in 0..6 {
            let amp = if slot < 3 { 0.01 } else { 0.005 };
            for v in comps[slot].iter_mut() {
                *v = amp * (rng.uniform() - 0.5);
            }
        }
        // make it traceless pointwise
        for idx in 0..grid.len() {
            let tr = (comps[0][idx] + comps[1][idx] + comps[2][idx]) / 3.0;
            for slot in 0..3 {
                comps[slot][idx] -= tr;
            }
        }
        let ws = crate::transport::partition_weights(0.625, 0, 0.25).unwrap();
        let amp = amplitudes(grid, &comps, 0.5, 0.25, &ws, &sched).unwrap();
        let res = amplitude_identity_residual(grid, &amp, &comps, &sched, 7);
        assert!(res < 1e-10, "identity residual {res}");
    }

    #[test]
    fn perturbation_identity_flow_is_beltrami() {
        // Phi = id, a constant -> w_c = 0 and w_p is an exact Beltrami field
        let grid = PeriodicGrid::new(32).unwrap();
        let sched = desk_schedule();
        let r0 = zero_tensor_phys(grid);
        let amp = amplitudes(grid, &r0, 1.0, 0.25, &[(0, 1.0)], &sched).unwrap();
        let psi: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        let lam = desk_lambda(&grid, 5).unwrap();
        let pert = perturbation(grid, &amp, std::slice::from_ref(&psi), lam).unwrap();
        let wc_mag = crate::spectral::norms::c0_norm(&pert.w_c);
        let wp_mag = crate::spectral::norms::c0_norm(&pert.w_p);
        assert!(wp_mag > 0.0);
        assert!(wc_mag < 1e-11 * wp_mag, "corrector {wc_mag} vs {wp_mag}");
        // divergence-free to machine precision
        assert!(pert.w.divergence_defect() < 1e-12);
        // mean zero
        let mean = pert.w.mean_vector();
        assert!(mean.iter().all(|m| m.abs() < 1e-13));
        // real valued
        assert!(pert.w.reality_defect() < 1e-11);
    }

    #[test]
    fn perturbation_rejects_bad_lambda() {
        let grid = PeriodicGrid::new(32).unwrap();
        let sched = desk_schedule();
        let r0 = zero_tensor_phys(grid);
        let amp = amplitudes(grid, &r0, 1.0, 0.25, &[(0, 1.0)], &sched).unwrap();
        let psi: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        assert!(perturbation(grid, &amp, std::slice::from_ref(&psi), 7).is_err());
        assert!(perturbation(grid, &amp, std::slice::from_ref(&psi), 1000).is_err());
    }

    #[test]
    fn desk_lambda_rule() {
        let g64 = PeriodicGrid::new(64).unwrap();
        assert_eq!(desk_lambda(&g64, 5).unwrap(), 10);
        let g32 = PeriodicGrid::new(32).unwrap();
        assert_eq!(desk_lambda(&g32, 5).unwrap(), 5);
        let g16 = PeriodicGrid::new(16).unwrap();
        assert!(desk_lambda(&g16, 5).is_err());
    }
}
