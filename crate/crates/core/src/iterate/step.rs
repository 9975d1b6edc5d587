//! The step driver: walks the time grid once, producing base fields with one
//! slice of lookahead and assembling the new velocity, stress and pressure
//! at the middle of a three-slice ring.

use super::*;
use crate::noise::truncate_and_cutoff;
use crate::spectral::norms::{c0_norm, c1_x_norm};
use crate::spectral::ops::{
    self, advect, divergence_tensor, dot_product, gradient, inverse_divergence, outer_sym,
    truncate_dealias_hat,
};
use crate::transport::{
    field_band, flow_report, partition_weights, AdvectStages, FlowMarcher, FlowReport,
    FlowSolveParams, SpaceInterp, TimeSlabInterp,
};
use std::collections::HashMap;

#[derive(Clone, Debug)]
pub struct StepOptions {
    pub grid_n: usize,
    /// wave frequency override; default is the largest n*-multiple at or
    /// below a third of the Nyquist
    pub lambda_override: Option<i64>,
    /// false disables the energy-pumping term (rho loses c* zeta)
    pub include_energy: bool,
    /// mollification scale floor in time-step units
    pub ell_floor_dts: f64,
    /// marching grid hint; widened automatically for wide advecting bands
    pub march_n: usize,
    /// verify the weak-form residual every this many assembled slices (0 = off)
    pub residual_stride: usize,
    /// integer windows [k, k+1] to construct on (inclusive range)
    pub k_range: (i64, i64),
    /// collect the next-level state series (costs memory)
    pub collect_state: bool,
    pub cfl_fraction: f64,
    /// how the time derivative in the stress assembly is evaluated
    pub dt_method: &'static str,
}

impl Default for StepOptions {
    fn default() -> Self {
        StepOptions {
            grid_n: 64,
            lambda_override: None,
            include_energy: true,
            ell_floor_dts: 8.0,
            march_n: 16,
            residual_stride: 16,
            k_range: (0, 0),
            collect_state: true,
            cfl_fraction: 0.5,
            dt_method: "centered",
        }
    }
}

/// The six stress contributions of one slice, kept separately.
pub struct ReynoldsTerms {
    pub transport: SpectralTensorField,
    pub oscillation: SpectralTensorField,
    pub nash: SpectralTensorField,
    pub corrector: SpectralTensorField,
    pub commutator: SpectralTensorField,
    pub commutator1: SpectralTensorField,
}

impl ReynoldsTerms {
    pub fn total(&self) -> SpectralTensorField {
        let mut out = self.transport.clone();
        out.add_assign(&self.oscillation);
        out.add_assign(&self.nash);
        out.add_assign(&self.corrector);
        out.add_assign(&self.commutator);
        out.add_assign(&self.commutator1);
        out
    }

    pub fn sup_norms(&self) -> [f64; 6] {
        [
            tensor_c0(&self.transport),
            tensor_c0(&self.oscillation),
            tensor_c0(&self.nash),
            tensor_c0(&self.corrector),
            tensor_c0(&self.commutator),
            tensor_c0(&self.commutator1),
        ]
    }
}

pub fn tensor_c0(t: &SpectralTensorField) -> f64 {
    t.frobenius_physical().iter().fold(0.0f64, |m, v| m.max(*v))
}

pub fn tensor_l1(t: &SpectralTensorField) -> f64 {
    let vol = t.grid.cell_volume();
    t.frobenius_physical().iter().map(|v| v * vol).sum()
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct ResidualSample {
    pub t_idx: usize,
    pub t: f64,
    pub abs_hminus1: f64,
    pub denom_hminus1: f64,
    pub rel: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct SliceNorms {
    pub t: f64,
    pub v_c0: f64,
    pub v_c1x: f64,
    pub wp_c0: f64,
    pub wc_c0: f64,
    pub r_c0: f64,
    pub r_l1: f64,
    pub div_defect: f64,
    pub trace_defect: f64,
    pub w_mean: f64,
    pub term_sum_defect: f64,
}

/// Per-slice scalars feeding the energy estimate decomposition.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct EnergySample {
    pub t: f64,
    /// integral |w_p|^2 - 3 (2pi)^3 zeta_q
    pub wp_energy_defect: f64,
    /// integral (|w_c|^2 + 2 w_p . w_c)
    pub corrector_energy: f64,
    /// |integral (v_ell + z_{q+1}) . w|
    pub curl_term: f64,
    /// integral |v_ell - v_q + z_{q+1} - z_q|^2
    pub increment_sq: f64,
    /// |integral (v_ell - v_q + z_{q+1} - z_q) . (v_q + z_q)|
    pub increment_cross: f64,
    pub zeta_q: f64,
    /// |v_{q+1} + z_{q+1}|_{L2}^2
    pub vz_l2sq: f64,
}

#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct AmpDiag {
    pub sup_a: f64,
    pub identity_residual: f64,
    pub min_coeff: f64,
    pub max_arg_dist: f64,
    /// reference shapes of the amplitude estimates (lambda powers)
    pub ref_c0_log2: f64,
}

pub struct StepOutput {
    pub q_next: u32,
    pub lambda: i64,
    pub ell: f64,
    pub ell_requested: f64,
    pub state: Option<IterationState>,
    pub residuals: Vec<ResidualSample>,
    pub worst_residual: f64,
    pub norms: Vec<SliceNorms>,
    pub energy: Vec<EnergySample>,
    pub flow_reports: Vec<FlowReport>,
    pub amp: AmpDiag,
    pub term_sup: [f64; 6],
    pub waivers: Vec<String>,
    /// the assembled slices' index range in the global grid
    pub assembled: (usize, usize),
}

struct Ring<T> {
    cap: usize,
    entries: std::collections::VecDeque<(usize, T)>,
}

impl<T> Ring<T> {
    fn new(cap: usize) -> Self {
        Ring {
            cap,
            entries: std::collections::VecDeque::new(),
        }
    }
    fn push(&mut self, idx: usize, v: T) {
        if self.entries.len() == self.cap {
            self.entries.pop_front();
        }
        self.entries.push_back((idx, v));
    }
    fn get(&self, idx: usize) -> Option<&T> {
        self.entries
            .iter()
            .find(|(i, _)| *i == idx)
            .map(|(_, v)| v)
    }
}

pub struct StepInputs<'a> {
    pub schedule: &'a ParameterSchedule,
    pub state: &'a IterationState,
    pub path: &'a NoisePath,
    /// per-member |v_q + z_q|_{L2}^2 series for the energy expectation
    pub ensemble_vz: &'a [Vec<f64>],
    pub energy: &'a EnergyProfile,
}

/// physical synthesis of a vector field
fn phys3(f: &SpectralField) -> [Vec<f64>; 3] {
    f.to_physical()
}

fn add_fields(a: &SpectralField, b: &SpectralField) -> SpectralField {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

/// forward-transform three physical arrays into a dealiased vector field
fn field_of_phys(grid: PeriodicGrid, comps: [Vec<f64>; 3]) -> SpectralField {
    let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
    let mut f = SpectralField::from_physical(grid, refs);
    ops::truncate_dealias_field(&mut f);
    f
}

/// mean-zero projection then inverse divergence
fn r_of(mut g: SpectralField) -> Result<SpectralTensorField> {
    for c in 0..3 {
        g.hat[c][0] = num_complex::Complex64::default();
    }
    inverse_divergence(&g)
}

/// H^{-1} norm of a vector field (normalized measure)
fn hminus1(f: &SpectralField) -> f64 {
    let mut acc = 0.0;
    f.grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        let w = 1.0 / (1.0 + k2);
        for c in 0..3 {
            acc += w * f.hat[c][idx].norm_sqr();
        }
    });
    acc.sqrt()
}

/// L2 inner product of two (real) fields via Parseval, full measure.
fn inner(a: &SpectralField, b: &SpectralField) -> f64 {
    ops::inner_l2(a, b)
}

pub fn step(inputs: &StepInputs, options: &StepOptions) -> Result<StepOutput> {
    let schedule = inputs.schedule;
    let state = inputs.state;
    let path = inputs.path;
    let q = state.q;
    let grid = PeriodicGrid::new(options.grid_n)?;
    let tg = state.tgrid;
    if path.tgrid.len() != tg.len() || (path.tgrid.t0 - tg.t0).abs() > 1e-12 {
        return Err(Error::iterate("state and noise time grids disagree"));
    }
    let set = crate::beltrami::direction_sets();
    let lambda = match options.lambda_override {
        Some(l) => l,
        None => desk_lambda(&grid, set.n_star)?,
    };
    let mut waivers = Vec::new();
    let lambda_exact_log2 = schedule.lambda(q + 1).log2_f64(schedule.base());
    if (lambda as f64).log2() < lambda_exact_log2 {
        waivers.push(format!(
            "wave frequency overridden to {lambda} (exact lambda_(q+1) has log2 = {lambda_exact_log2:.1})"
        ));
    }

    // mollifier (with desk floor)
    let ell_requested = schedule.ell_f64(q);
    let moll = Mollifier::new(
        ell_requested,
        tg.dt,
        grid.n / 2,
        options.ell_floor_dts,
    );
    if moll.floored {
        waivers.push(format!(
            "mollification scale floored: {ell_requested:.3e} -> {:.3e}",
            moll.ell
        ));
    }
    let ell = moll.ell;
    let n_taps = moll.n_taps();

    // noise cutoffs
    let nyq = grid.max_wave() as f64;
    let cut_q = truncate_and_cutoff(path, q, schedule, nyq)?;
    let cut_q1 = truncate_and_cutoff(path, q + 1, schedule, nyq)?;
    let f_q = cut_q.f_cut;
    let f_q1 = cut_q1.f_cut;

    // energy gap series
    let zeta_q: Vec<f64> = if options.include_energy {
        energy_gap(inputs.energy, q, schedule, &tg, inputs.ensemble_vz)?
    } else {
        vec![0.0; tg.len()]
    };
    let zeta_ell = |n: usize| -> Option<f64> {
        if n < n_taps {
            return None;
        }
        let mut acc = 0.0;
        for (i, w) in moll.taps.iter().enumerate() {
            acc += w * zeta_q[n - 1 - i];
        }
        Some(acc)
    };

    // assembly region
    let (k_lo, k_hi) = options.k_range;
    let assembly_start = tg
        .index_of(k_lo as f64)
        .ok_or_else(|| Error::iterate("k range start not on the time grid"))?;
    let assembly_end = tg
        .index_of(k_hi as f64 + 1.0)
        .ok_or_else(|| Error::iterate("k range end not on the time grid"))?;

    // windows: dedup by start index so adjacent k share their boundary maps
    let j_max = (1.0 / ell).ceil() as i64;
    let mut window_plan: HashMap<usize, (i64, i64, usize)> = HashMap::new();
    for k in k_lo..=k_hi {
        for j in 0..=j_max {
            let t_start = k as f64 + (j - 1) as f64 * ell;
            let t_end = (k as f64 + (j + 1) as f64 * ell).min(tg.time(tg.len() - 1));
            let s_idx = snap(&tg, t_start)?;
            let e_idx = snap(&tg, t_end)?;
            window_plan.entry(s_idx).or_insert((k, j, e_idx));
        }
    }
    let min_window_start = window_plan.keys().copied().min().unwrap_or(assembly_start);
    if min_window_start < n_taps + 1 {
        return Err(Error::iterate(format!(
            "insufficient history: first flow window starts at slice {min_window_start}, \
             mollification needs {}",
            n_taps + 1
        )));
    }

    // history guard for the dissipative convolutions of the state series
    let hist_from = min_window_start - n_taps - 1;
    if state.r.start_idx > hist_from {
        return Err(Error::iterate("state stress history too short"));
    }

    // marching grid sized for the advecting band
    let g_band_guess = {
        let v_band = state
            .v
            .as_ref()
            .map(|s| s.slices.first().map(|c| c.band).unwrap_or(0))
            .unwrap_or(0);
        let z_band = path
            .modes
            .iter()
            .map(|m| m.k.iter().map(|c| c.abs()).max().unwrap())
            .max()
            .unwrap_or(1);
        (v_band.max(z_band)).max(1)
    };
    let mut march_n = options.march_n.max(16);
    while ((march_n / 2) as i64) < 2 * g_band_guess && march_n < grid.n {
        march_n *= 2;
    }
    let mut fine_g = 16usize;
    while (fine_g as i64) < 4 * g_band_guess && fine_g < 2 * grid.n {
        fine_g *= 2;
    }
    let flow_params = FlowSolveParams {
        march_n,
        psi_fine_factor: 2,
        cfl_fraction: options.cfl_fraction,
        diagnostics_stride: 8,
    };

    // rings
    let mut ring_g_interp: Ring<SpaceInterp> = Ring::new(3);
    let mut ring_g_c01: Ring<(f64, f64)> = Ring::new(3);
    let mut ring_prod_q: Ring<CompactTensor> = Ring::new(n_taps + 1);
    let mut ring_vzsq_q: Ring<CompactScalar> = Ring::new(n_taps + 1);
    let mut ring_a: Ring<AmplitudeSlice> = Ring::new(3);
    let mut ring_wc: Ring<SpectralField> = Ring::new(3);
    let mut ring_wp: Ring<SpectralField> = Ring::new(3);
    let mut ring_w: Ring<SpectralField> = Ring::new(3);
    let mut ring_v1: Ring<SpectralField> = Ring::new(3);
    let mut ring_vl: Ring<SpectralField> = Ring::new(3);
    let mut ring_zl: Ring<SpectralField> = Ring::new(3);
    let mut ring_rl: Ring<SpectralTensorField> = Ring::new(3);
    let mut ring_rl_phys: Ring<[Vec<f64>; 6]> = Ring::new(3);
    let mut ring_pl: Ring<SpectralScalar> = Ring::new(3);
    let mut ring_rcomm: Ring<SpectralTensorField> = Ring::new(3);
    let mut ring_psi: Ring<Vec<(i64, [Vec<f64>; 3], SpectralField)>> = Ring::new(3);
    let mut ring_eta: Ring<Vec<(i64, f64)>> = Ring::new(3);

    let mut marchers: Vec<FlowMarcher> = Vec::new();
    let mut flow_reports: Vec<FlowReport> = Vec::new();

    // outputs
    let mut residuals = Vec::new();
    let mut norms = Vec::new();
    let mut energy_series = Vec::new();
    let mut amp_diag = AmpDiag {
        min_coeff: f64::INFINITY,
        ..Default::default()
    };
    let mut term_sup = [0.0f64; 6];
    let out_band = grid.dealias_band();
    let mut state_v: Vec<CompactVector> = Vec::new();
    let mut state_r: Vec<CompactTensor> = Vec::new();
    let mut state_p: Vec<CompactScalar> = Vec::new();
    let mut state_vz: Vec<f64> = vec![f64::NAN; tg.len()];
    let mut state_start = None;
    let mut worst_residual = 0.0f64;

    let dt = tg.dt;
    let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
    let c_star = schedule.c_star;

    for n in 0..tg.len() {
        // ---------------- produce(n) ----------------
        // z_q, z_{q+1} and their mollification are modal
        let z_q_n = {
            let mut f = path.field_at(grid, n, Some(f_q));
            f.scale(cut_q.chi[n]);
            f
        };
        // products of the level-q pair feeding the mollification commutator
        let v_q_n = state.v_field(grid, n)?;
        let vz_q_n = add_fields(&v_q_n, &z_q_n);
        let prod_q = {
            let mut t = outer_sym(&vz_q_n, &vz_q_n);
            t.make_traceless();
            pack_tensor(&t, out_band)
        };
        let vzsq_q = {
            let s = dot_product(&vz_q_n, &vz_q_n);
            pack_scalar(&s, out_band)
        };
        ring_prod_q.push(n, prod_q);
        ring_vzsq_q.push(n, vzsq_q);

        let have_history = n >= n_taps;
        if have_history {
            // z_ell: modal time-convolution with the space multiplier
            let mut z_ell = SpectralField::zeros(grid);
            for (i, w) in moll.taps.iter().enumerate() {
                let m = n - 1 - i;
                let mut f = path.field_at(grid, m, Some(f_q));
                f.scale(cut_q.chi[m] * w);
                z_ell.add_assign(&f);
            }
            apply_space_mollifier(&mut z_ell, &moll);

            // v_ell
            let mut v_ell = SpectralField::zeros(grid);
            if state.v.is_some() {
                for (i, w) in moll.taps.iter().enumerate() {
                    let m = n - 1 - i;
                    let mut f = state.v_field(grid, m)?;
                    f.scale(*w);
                    v_ell.add_assign(&f);
                }
                apply_space_mollifier(&mut v_ell, &moll);
            }
            v_ell.divergence_free = true;
            v_ell.mean_zero = true;

            // R_ell
            let mut r_ell = SpectralTensorField::zeros(grid);
            for (i, w) in moll.taps.iter().enumerate() {
                let m = n - 1 - i;
                let mut f = state.r_field(grid, m)?;
                f.scale(*w);
                r_ell.add_assign(&f);
            }
            apply_space_mollifier_tensor(&mut r_ell, &moll);
            r_ell.traceless = true;

            // commutator stress and mollified pressure
            let g_n = add_fields(&v_ell, &z_ell);
            let mut prod_ell = outer_sym(&g_n, &g_n);
            prod_ell.make_traceless();
            let mut moll_prod = SpectralTensorField::zeros(grid);
            let mut moll_vzsq = SpectralScalar::zeros(grid);
            let mut moll_p = SpectralScalar::zeros(grid);
            for (i, w) in moll.taps.iter().enumerate() {
                let m = n - 1 - i;
                let c = ring_prod_q
                    .get(m)
                    .ok_or_else(|| Error::iterate("product ring underrun"))?;
                let mut f = unpack_tensor(c, grid);
                f.scale(*w);
                moll_prod.add_assign(&f);
                let cs = ring_vzsq_q
                    .get(m)
                    .ok_or_else(|| Error::iterate("scalar ring underrun"))?;
                let mut fs = unpack_scalar(cs, grid);
                fs.scale(*w);
                moll_vzsq.add_assign(&fs);
                let mut fp = state.p_field(grid, m)?;
                fp.scale(*w);
                moll_p.add_assign(&fp);
            }
            apply_space_mollifier_tensor_inplace(&mut moll_prod, &moll);
            apply_space_mollifier_scalar(&mut moll_vzsq, &moll);
            apply_space_mollifier_scalar(&mut moll_p, &moll);
            let r_comm = prod_ell.sub(&moll_prod);
            // p_ell = moll(p_q) - (|v_ell+z_ell|^2 - moll(|v_q+z_q|^2)) / 3
            let vzsq_ell = dot_product(&g_n, &g_n);
            let mut p_ell = moll_p.clone();
            for idx in 0..grid.len() {
                p_ell.hat[idx] -= (vzsq_ell.hat[idx] - moll_vzsq.hat[idx]) / 3.0;
            }

            // flow marchers: create windows starting here, then advance all
            let g_interp = SpaceInterp::from_field(&g_n, fine_g.max(2 * field_band(&g_n).max(4) as usize).next_power_of_two().min(2 * grid.n));
            let g_c0 = c0_norm(&g_n);
            let g_c1 = c1_x_norm(&g_n);
            ring_g_interp.push(n, g_interp);
            ring_g_c01.push(n, (g_c0, g_c1));
            if let Some(&(k, j, e_idx)) = window_plan.get(&n) {
                marchers.push(FlowMarcher::new(k, j, tg, n, e_idx, flow_params)?);
            }
            let needs_advance = n >= 1
                && marchers
                    .iter()
                    .any(|m| m.cur_idx == n - 1 && m.t_end_idx >= n);
            if needs_advance {
                let (i0, i1, i2) = stencil_3(n, &ring_g_interp);
                let times = [tg.time(i0), tg.time(i1), tg.time(i2)];
                let slab = TimeSlabInterp {
                    times,
                    slices: [
                        ring_g_interp.get(i0).unwrap(),
                        ring_g_interp.get(i1).unwrap(),
                        ring_g_interp.get(i2).unwrap(),
                    ],
                };
                let stages = AdvectStages::from_slab(&slab, tg.time(n - 1), tg.time(n));
                let (c0g, c1g) = ring_g_c01
                    .get(n - 1)
                    .copied()
                    .unwrap_or((g_c0, g_c1));
                for m in marchers.iter_mut() {
                    if m.cur_idx == n - 1 && m.t_end_idx >= n {
                        m.advance(&stages, c0g, c1g)?;
                    }
                }
            }
            // retire windows that ended
            let ell_here = ell;
            marchers.retain(|m| {
                if m.t_end_idx <= n {
                    flow_reports.push(flow_report(&m.diagnostics, m.k, m.j, ell_here));
                    false
                } else {
                    true
                }
            });

            ring_zl.push(n, z_ell);
            ring_vl.push(n, v_ell);
            let rl_phys = r_ell.to_physical();
            ring_rl_phys.push(n, rl_phys);
            ring_rl.push(n, r_ell);
            ring_pl.push(n, p_ell);
            ring_rcomm.push(n, r_comm);

            // amplitudes and perturbation inside the assembly region
            if n >= assembly_start && n <= assembly_end {
                let t = tg.time(n);
                let k_here = (t.floor() as i64).clamp(k_lo, k_hi);
                let etas = partition_weights(t, k_here, ell)?;
                let zl_val = zeta_ell(n)
                    .ok_or_else(|| Error::iterate("energy gap history missing"))?;
                let rl_phys_ref = ring_rl_phys.get(n).unwrap();
                let amp = amplitudes(grid, rl_phys_ref, zl_val, ell, &etas, schedule)?;
                amp_diag.sup_a = amp_diag.sup_a.max(amp.sup_a);
                amp_diag.min_coeff = amp_diag.min_coeff.min(amp.min_coeff);
                amp_diag.max_arg_dist = amp_diag.max_arg_dist.max(amp.max_arg_dist);
                if n % 8 == 0 {
                    let idres =
                        amplitude_identity_residual(grid, &amp, rl_phys_ref, schedule, 11);
                    amp_diag.identity_residual = amp_diag.identity_residual.max(idres);
                }
                // displacement of the active windows on the assembly grid
                let mut psis = Vec::new();
                for &(j, _) in &amp.active {
                    let t0 = k_here as f64 + (j - 1) as f64 * ell;
                    let s_idx = snap(&tg, t0)?;
                    let marcher = marchers
                        .iter()
                        .find(|m| m.t0_idx == s_idx)
                        .ok_or_else(|| {
                            Error::iterate(format!(
                                "flow window not materialised: n={n} t={t:.4} k={k_here} j={j} s_idx={s_idx} active={:?}",
                                marchers.iter().map(|m| (m.t0_idx, m.cur_idx, m.t_end_idx)).collect::<Vec<_>>()
                            ))
                        })?;
                    marcher.sample(n)?;
                    let psi_f = marcher.psi_spectral_on(grid);
                    psis.push((j, phys3(&psi_f), psi_f));
                }
                let psi_phys: Vec<[Vec<f64>; 3]> =
                    psis.iter().map(|(_, p, _)| p.clone()).collect();
                let pert = perturbation(grid, &amp, &psi_phys, lambda)?;
                let v1 = add_fields(ring_vl.get(n).unwrap(), &pert.w);
                ring_a.push(n, amp);
                ring_eta.push(n, etas);
                ring_psi.push(n, psis);
                ring_wp.push(n, pert.w_p);
                ring_wc.push(n, pert.w_c);
                ring_w.push(n, pert.w);
                ring_v1.push(n, v1);
            }
        }

        // ---------------- assemble(n - 1) ----------------
        let m = match n.checked_sub(1) {
            Some(m) => m,
            None => continue,
        };
        if m <= assembly_start || m >= assembly_end {
            continue;
        }
        if ring_v1.get(m + 1).is_none() || ring_v1.get(m.wrapping_sub(1)).is_none() {
            continue;
        }

        let v1_m = ring_v1.get(m).unwrap();
        let w_m = ring_w.get(m).unwrap();
        let wp_m = ring_wp.get(m).unwrap();
        let wc_m = ring_wc.get(m).unwrap();
        let vl_m = ring_vl.get(m).unwrap();
        let zl_m = ring_zl.get(m).unwrap();
        let zq1_m = ring_zq1_get(path, grid, &cut_q1, m, f_q1);
        let g_m = add_fields(vl_m, zl_m);
        let amp_m = ring_a.get(m).unwrap();
        let psis_m = ring_psi.get(m).unwrap();
        let rl_m = ring_rl.get(m).unwrap();

        // --- transport stress, cancellation form ---
        let g_phys = phys3(&g_m);
        let mut gt_pt: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        // (g . grad) w_p contribution
        {
            for c in 0..3 {
                let gw = gradient(&wp_m.component(c)).to_physical();
                for idx in 0..grid.len() {
                    gt_pt[c][idx] = g_phys[0][idx] * gw[0][idx]
                        + g_phys[1][idx] * gw[1][idx]
                        + g_phys[2][idx] * gw[2][idx];
                }
            }
        }
        // per-pair terms: (d_t a) E and lambda a (xi . (g.grad Phi)) Im E
        {
            let n_grid = grid.n;
            for (wi, &(j, _)) in amp_m.active.iter().enumerate() {
                let family = set.family(j);
                let (_, psi_pt, psi_f) = &psis_m[ring_psi_index(psis_m, j)?];
                // g . grad Phi = g + (g . grad) Psi, pointwise
                let mut v_adv: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
                for c in 0..3 {
                    let gpsi = gradient(&psi_f.component(c)).to_physical();
                    for idx in 0..grid.len() {
                        v_adv[c][idx] = g_phys[c][idx]
                            + g_phys[0][idx] * gpsi[0][idx]
                            + g_phys[1][idx] * gpsi[1][idx]
                            + g_phys[2][idx] * gpsi[2][idx];
                    }
                }
                for (pi, pair) in family.pairs.iter().enumerate() {
                    let k_vec = crate::beltrami::wave_vector(&pair.xi, lambda)?;
                    let tables: [Vec<num_complex::Complex64>; 3] = std::array::from_fn(|d| {
                        (0..n_grid)
                            .map(|mm| {
                                let th = k_vec[d] as f64 * grid.coord(mm);
                                num_complex::Complex64::new(th.cos(), th.sin())
                            })
                            .collect()
                    });
                    let a_mid = &amp_m.a[wi][pi];
                    let a_plus = amp_lookup(&ring_a, m + 1, j, pi);
                    let a_minus = amp_lookup(&ring_a, m - 1, j, pi);
                    let b = pair.b_vec;
                    let xi = pair.xi.f64();
                    for ix in 0..n_grid {
                        let ex = tables[0][ix];
                        for iy in 0..n_grid {
                            let exy = ex * tables[1][iy];
                            let base = (ix * n_grid + iy) * n_grid;
                            for iz in 0..n_grid {
                                let idx = base + iz;
                                let ap = a_plus.map(|v| v[idx]).unwrap_or(0.0);
                                let am = a_minus.map(|v| v[idx]).unwrap_or(0.0);
                                let dta = (ap - am) / (2.0 * dt);
                                let a0 = a_mid[idx];
                                let th = k_vec[0] as f64 * psi_pt[0][idx]
                                    + k_vec[1] as f64 * psi_pt[1][idx]
                                    + k_vec[2] as f64 * psi_pt[2][idx];
                                let e = exy
                                    * tables[2][iz]
                                    * num_complex::Complex64::new(th.cos(), th.sin());
                                let xv = xi[0] * v_adv[0][idx]
                                    + xi[1] * v_adv[1][idx]
                                    + xi[2] * v_adv[2][idx];
                                for c in 0..3 {
                                    let bc = b[c];
                                    // 2 Re[(d_t a) E B] + 2 lambda a (xi.V) Im(E B)
                                    let eb = e * bc;
                                    gt_pt[c][idx] +=
                                        2.0 * dta * eb.re + 2.0 * lambda as f64 * a0 * xv * eb.im;
                                }
                            }
                        }
                    }
                }
            }
        }
        let g_t = field_of_phys(grid, gt_pt);
        let r_transport = r_of(g_t)?;

        // --- oscillation stress ---
        let wp_phys = phys3(wp_m);
        let prod_wp = outer_sym(wp_m, wp_m);
        let mut posc_pt = vec![0.0f64; grid.len()];
        {
            // sum over all xi of a^2 (each pair counts twice)
            for idx in 0..grid.len() {
                let wp2 = wp_phys[0][idx] * wp_phys[0][idx]
                    + wp_phys[1][idx] * wp_phys[1][idx]
                    + wp_phys[2][idx] * wp_phys[2][idx];
                let mut asq = 0.0;
                for wfields in amp_m.a.iter() {
                    for f in wfields.iter() {
                        let a = f[idx];
                        asq += 2.0 * a * a;
                    }
                }
                posc_pt[idx] = 0.5 * (wp2 - asq) + amp_m.rho[idx] / c_star;
            }
        }
        let mut p_osc = SpectralScalar::from_physical(grid, &posc_pt);
        truncate_dealias_hat(&grid, &mut p_osc.hat);
        let mut sum_t = prod_wp.clone();
        sum_t.add_assign(rl_m);
        let mut g_o = divergence_tensor(&sum_t);
        let grad_posc = gradient(&p_osc);
        for c in 0..3 {
            for idx in 0..grid.len() {
                g_o.hat[c][idx] -= grad_posc.hat[c][idx];
            }
        }
        let r_oscillation = r_of(g_o)?;

        // --- Nash stress ---
        let g_nash = advect(w_m, &g_m);
        let r_nash = r_of(g_nash)?;

        // --- corrector stress ---
        let mut g_c = advect(&g_m, wc_m);
        {
            let wc_plus = ring_wc.get(m + 1).unwrap();
            let wc_minus = ring_wc.get(m - 1).unwrap();
            let mut dt_wc = wc_plus.sub(wc_minus);
            dt_wc.scale(0.5 / dt);
            g_c.add_assign(&dt_wc);
        }
        let mut r_corrector = r_of(g_c)?;
        {
            let mut t_c = outer_sym(wp_m, wc_m);
            t_c.scale(2.0);
            t_c.add_assign(&outer_sym(wc_m, wc_m));
            t_c.make_traceless();
            r_corrector.add_assign(&t_c);
        }
        let p_corr = {
            let mut d = dot_product(wp_m, wc_m);
            d.scale(2.0);
            let wc2 = dot_product(wc_m, wc_m);
            d.add_assign(&wc2);
            d.scale(1.0 / 3.0);
            d
        };

        // --- mollification commutator (already produced) ---
        let r_commutator = ring_rcomm.get(m).unwrap().clone();

        // --- noise commutator ---
        let dz = zq1_m.sub(zl_m);
        let mut r_comm1 = outer_sym(v1_m, &dz);
        r_comm1.scale(2.0);
        let zsum = add_fields(&zq1_m, zl_m);
        r_comm1.add_assign(&outer_sym(&zsum, &dz));
        r_comm1.make_traceless();
        let r_dz = {
            let mut d = dz.clone();
            for c in 0..3 {
                d.hat[c][0] = num_complex::Complex64::default();
            }
            inverse_divergence(&d)?
        };
        let r_commutator1 = r_comm1.sub(&r_dz);
        let p_comm1 = {
            let mut d = dot_product(v1_m, &dz);
            d.scale(2.0);
            let zz = dot_product(&zsum, &dz);
            d.add_assign(&zz);
            d.scale(1.0 / 3.0);
            d
        };

        let terms = ReynoldsTerms {
            transport: r_transport,
            oscillation: r_oscillation,
            nash: r_nash,
            corrector: r_corrector,
            commutator: r_commutator,
            commutator1: r_commutator1,
        };
        let r_next = terms.total();
        let p_next = {
            let mut p = ring_pl.get(m).unwrap().clone();
            for idx in 0..grid.len() {
                p.hat[idx] -= p_osc.hat[idx] + p_corr.hat[idx] + p_comm1.hat[idx];
            }
            p
        };

        let sups = terms.sup_norms();
        for (slot, s) in sups.iter().enumerate() {
            term_sup[slot] = term_sup[slot].max(*s);
        }
        // bookkeeping invariant: the six stored terms re-sum to the total
        let sum_defect = {
            let again = terms.total();
            let mut worst = 0.0f64;
            for slot in 0..6 {
                for (a, b) in again.hat[slot].iter().zip(r_next.hat[slot].iter()) {
                    worst = worst.max((a - b).norm());
                }
            }
            worst
        };

        // --- residual (strided) ---
        if options.residual_stride > 0
            && (m - assembly_start) % options.residual_stride == 0
        {
            let u = add_fields(v1_m, &zq1_m);
            let prod_u = outer_sym(&u, &u);
            let nl = divergence_tensor(&prod_u);
            let dt_v = {
                let mut d = ring_v1.get(m + 1).unwrap().sub(ring_v1.get(m - 1).unwrap());
                d.scale(0.5 / dt);
                d
            };
            let grad_p = gradient(&p_next);
            let div_r = divergence_tensor(&r_next);
            let mut resid = dt_v.clone();
            resid.add_assign(&nl);
            resid.add_assign(&grad_p);
            let mut denom: f64 = hminus1(&nl).max(hminus1(&dt_v)).max(hminus1(&grad_p));
            for c in 0..3 {
                for idx in 0..grid.len() {
                    resid.hat[c][idx] -= zq1_m.hat[c][idx] + div_r.hat[c][idx];
                }
            }
            denom = denom.max(hminus1(&div_r)).max(hminus1(&zq1_m));
            let abs = hminus1(&resid);
            let rel = abs / denom.max(1e-300);
            worst_residual = worst_residual.max(rel);
            residuals.push(ResidualSample {
                t_idx: m,
                t: tg.time(m),
                abs_hminus1: abs,
                denom_hminus1: denom,
                rel,
            });
        }

        // --- norms and energy samples ---
        let zeta_here = zeta_q[m];
        let wp_l2sq = two_pi_cubed
            * wp_m
                .hat
                .iter()
                .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>())
                .sum::<f64>();
        let wc_l2sq = two_pi_cubed
            * wc_m
                .hat
                .iter()
                .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>())
                .sum::<f64>();
        let cross_wpwc = inner(wp_m, wc_m);
        let vl_zq1 = add_fields(vl_m, &zq1_m);
        let curl_term = inner(&vl_zq1, w_m).abs();
        let v_q_m = state.v_field(grid, m)?;
        let z_q_m = {
            let mut f = path.field_at(grid, m, Some(f_q));
            f.scale(cut_q.chi[m]);
            f
        };
        let incr = {
            let mut d = vl_m.sub(&v_q_m);
            let dz2 = zq1_m.sub(&z_q_m);
            d.add_assign(&dz2);
            d
        };
        let vzq = add_fields(&v_q_m, &z_q_m);
        let vz1 = add_fields(v1_m, &zq1_m);
        let vz1_l2sq = two_pi_cubed
            * vz1
                .hat
                .iter()
                .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>())
                .sum::<f64>();
        energy_series.push(EnergySample {
            t: tg.time(m),
            wp_energy_defect: wp_l2sq - 3.0 * two_pi_cubed * zeta_here,
            corrector_energy: wc_l2sq + 2.0 * cross_wpwc,
            curl_term,
            increment_sq: inner(&incr, &incr),
            increment_cross: inner(&incr, &vzq).abs(),
            zeta_q: zeta_here,
            vz_l2sq: vz1_l2sq,
        });
        state_vz[m] = vz1_l2sq;

        let w_mean = {
            let mv = w_m.mean_vector();
            (mv[0] * mv[0] + mv[1] * mv[1] + mv[2] * mv[2]).sqrt()
        };
        norms.push(SliceNorms {
            t: tg.time(m),
            v_c0: c0_norm(v1_m),
            v_c1x: c1_x_norm(v1_m),
            wp_c0: c0_norm(wp_m),
            wc_c0: c0_norm(wc_m),
            r_c0: tensor_c0(&r_next),
            r_l1: tensor_l1(&r_next),
            div_defect: v1_m.divergence_defect(),
            trace_defect: r_next.trace_defect(),
            w_mean,
            term_sum_defect: sum_defect,
        });

        if options.collect_state {
            if state_start.is_none() {
                state_start = Some(m);
            }
            state_v.push(pack_vector(v1_m, out_band));
            state_r.push(pack_tensor(&r_next, out_band));
            state_p.push(pack_scalar(&p_next, out_band));
        }
    }

    amp_diag.ref_c0_log2 =
        crate::exact::rat_to_f64(&schedule.gamma) * schedule.lambda(q + 3).log2_f64(schedule.base());

    let state_out = if options.collect_state {
        let start_idx = state_start.unwrap_or(assembly_start + 1);
        Some(IterationState {
            q: q + 1,
            grid_n: grid.n,
            tgrid: tg,
            member: path.member,
            v: Some(Series {
                start_idx,
                slices: state_v,
            }),
            r: Series {
                start_idx,
                slices: state_r,
            },
            p: Series {
                start_idx,
                slices: state_p,
            },
            vz_l2sq: state_vz,
            residual: worst_residual,
        })
    } else {
        None
    };

    Ok(StepOutput {
        q_next: q + 1,
        lambda,
        ell,
        ell_requested,
        state: state_out,
        residuals,
        worst_residual,
        norms,
        energy: energy_series,
        flow_reports,
        amp: amp_diag,
        term_sup,
        waivers,
        assembled: (assembly_start + 1, assembly_end - 1),
    })
}

fn snap(tg: &TimeGrid, t: f64) -> Result<usize> {
    let x = (t - tg.t0) / tg.dt;
    let i = x.round();
    if i < 0.0 || (i as usize) >= tg.len() {
        return Err(Error::iterate(format!(
            "time {t} falls outside the grid [{}, {}]",
            tg.t0,
            tg.time(tg.len() - 1)
        )));
    }
    Ok(i as usize)
}

fn stencil_3(n: usize, ring: &Ring<SpaceInterp>) -> (usize, usize, usize) {
    // prefer (n-2, n-1, n); degrade to whatever the ring holds early on
    let have = |i: usize| ring.get(i).is_some();
    if n >= 2 && have(n - 2) {
        (n - 2, n - 1, n)
    } else {
        (n - 1, n - 1, n)
    }
}

fn ring_zq1_get(
    path: &NoisePath,
    grid: PeriodicGrid,
    cut: &crate::noise::CutoffSeries,
    m: usize,
    f_cut: f64,
) -> SpectralField {
    let mut f = path.field_at(grid, m, Some(f_cut));
    f.scale(cut.chi[m]);
    f
}

fn ring_psi_index(
    psis: &[(i64, [Vec<f64>; 3], SpectralField)],
    j: i64,
) -> Result<usize> {
    psis.iter()
        .position(|(jj, _, _)| *jj == j)
        .ok_or_else(|| Error::iterate("window displacement missing"))
}

fn amp_lookup<'r>(
    ring: &'r Ring<AmplitudeSlice>,
    idx: usize,
    j: i64,
    pair: usize,
) -> Option<&'r Vec<f64>> {
    let amp = ring.get(idx)?;
    let wi = amp.active.iter().position(|(jj, _)| *jj == j)?;
    Some(&amp.a[wi][pair])
}

fn apply_space_mollifier(f: &mut SpectralField, moll: &Mollifier) {
    let grid = f.grid;
    grid.for_each_mode(|idx, k| {
        let m = moll.space_mult(k);
        for c in 0..3 {
            f.hat[c][idx] *= m;
        }
    });
}

fn apply_space_mollifier_tensor(f: &mut SpectralTensorField, moll: &Mollifier) {
    let grid = f.grid;
    grid.for_each_mode(|idx, k| {
        let m = moll.space_mult(k);
        for c in 0..6 {
            f.hat[c][idx] *= m;
        }
    });
}

fn apply_space_mollifier_tensor_inplace(f: &mut SpectralTensorField, moll: &Mollifier) {
    apply_space_mollifier_tensor(f, moll);
}

fn apply_space_mollifier_scalar(f: &mut SpectralScalar, moll: &Mollifier) {
    let grid = f.grid;
    grid.for_each_mode(|idx, k| {
        f.hat[idx] *= moll.space_mult(k);
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{sample_ou_path, NoiseSpectrum, TimeGrid};
    use crate::params::{build_schedule, reference_inputs, BaseSpec, RunMode};

    fn desk_schedule() -> ParameterSchedule {
        let mut inputs = reference_inputs();
        inputs.a = BaseSpec::Small(2);
        inputs.gamma = "1/2".into();
        build_schedule(&inputs, RunMode::Desk).unwrap()
    }

    fn small_tgrid() -> TimeGrid {
        TimeGrid {
            t0: -0.75,
            dt: 1.0 / 64.0,
            steps: 112, // covers [-0.75, 1.0]
        }
    }

    fn quiet_spectrum() -> NoiseSpectrum {
        NoiseSpectrum {
            s: "5".into(),
            c0: 2e-4,
            sigma: "1".into(),
            mode_budget: 2.2,
        }
    }

    #[test]
    fn zero_noise_step_is_structurally_clean() {
        let sched = desk_schedule();
        let tg = small_tgrid();
        let spec = NoiseSpectrum {
            c0: 0.0,
            ..quiet_spectrum()
        };
        let path = sample_ou_path(&spec, tg, 3, 0).unwrap();
        let cut0 = crate::noise::truncate_and_cutoff(&path, 0, &sched, 15.0).unwrap();
        let state = initial_state(&sched, &path, &cut0, 32).unwrap();
        // R_0 must vanish without noise
        for s in &state.r.slices {
            assert!(s.data.iter().all(|c| c.norm() < 1e-15));
        }
        let vz: Vec<Vec<f64>> = vec![state.vz_l2sq.clone(), state.vz_l2sq.clone()];
        let energy = EnergyProfile::Constant {
            value: sched.energy.e_lo,
        };
        let inputs = StepInputs {
            schedule: &sched,
            state: &state,
            path: &path,
            ensemble_vz: &vz,
            energy: &energy,
        };
        let options = StepOptions {
            grid_n: 32,
            include_energy: false,
            residual_stride: 8,
            ..Default::default()
        };
        let out = step(&inputs, &options).unwrap();
        // with the energy term off, rho = ell and the perturbation is tiny
        let max_wp = out.norms.iter().fold(0.0f64, |m, n| m.max(n.wp_c0));
        assert!(max_wp > 0.0 && max_wp < 10.0 * out.ell.sqrt());
        // noise commutator vanishes identically (z_{q+1} = z_ell = 0)
        assert_eq!(out.term_sup[5], 0.0);
        // structure
        for n in &out.norms {
            assert!(n.div_defect < 1e-10, "div defect {}", n.div_defect);
            assert!(n.trace_defect < 1e-12);
            assert!(n.w_mean < 1e-12);
            assert!(n.term_sum_defect < 1e-13);
        }
        assert!(
            out.worst_residual < 1e-3,
            "residual {}",
            out.worst_residual
        );
    }

    #[test]
    fn desk_step_with_noise_meets_residual_tolerance() {
        let sched = desk_schedule();
        let tg = small_tgrid();
        let spec = quiet_spectrum();
        let members = 4u64;
        let paths: Vec<_> = (0..members)
            .map(|m| sample_ou_path(&spec, tg, 11, m).unwrap())
            .collect();
        let cut0: Vec<_> = paths
            .iter()
            .map(|p| crate::noise::truncate_and_cutoff(p, 0, &sched, 15.0).unwrap())
            .collect();
        let states: Vec<_> = paths
            .iter()
            .zip(cut0.iter())
            .map(|(p, c)| initial_state(&sched, p, c, 32).unwrap())
            .collect();
        let vz: Vec<Vec<f64>> = states.iter().map(|s| s.vz_l2sq.clone()).collect();
        let energy = EnergyProfile::Constant {
            value: sched.energy.e_lo,
        };
        let inputs = StepInputs {
            schedule: &sched,
            state: &states[0],
            path: &paths[0],
            ensemble_vz: &vz,
            energy: &energy,
        };
        let options = StepOptions {
            grid_n: 32,
            residual_stride: 12,
            ..Default::default()
        };
        let out = step(&inputs, &options).unwrap();
        assert!(!out.residuals.is_empty());
        assert!(
            out.worst_residual < 1e-3,
            "residual {}",
            out.worst_residual
        );
        for n in &out.norms {
            assert!(n.div_defect < 1e-10);
            assert!(n.trace_defect < 1e-12);
            assert!(n.term_sum_defect < 1e-13);
        }
        // state chaining: the output state has usable history
        let st = out.state.as_ref().unwrap();
        assert_eq!(st.q, 1);
        assert!(st.v.is_some());
        // the energy defect of w_p should track 3 (2pi)^3 zeta within a
        // factor: with small stress, int |w_p|^2 ~ 3 (2pi)^3 zeta_ell
        let mid = &out.energy[out.energy.len() / 2];
        assert!(
            mid.wp_energy_defect.abs()
                < 0.5 * (3.0 * (2.0 * std::f64::consts::PI).powi(3) * mid.zeta_q),
            "wp defect {} vs 3(2pi)^3 zeta {}",
            mid.wp_energy_defect,
            3.0 * (2.0 * std::f64::consts::PI).powi(3) * mid.zeta_q
        );
    }
}
