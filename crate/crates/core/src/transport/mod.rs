//! Flow maps transported by the mollified velocity on overlapping time
//! windows, plus the square partition of unity that glues them.
//!
//! The transport solve is backward semi-Lagrangian: each grid point follows
//! its characteristic over one time step (RK4, field values interpolated
//! tri-quintically on a spectrally upsampled grid) and picks up the
//! displacement of the foot point. Phi itself stays smooth, so the marcher
//! can run on a coarser grid than the assembly fields.

use crate::error::{Error, Result};
use crate::noise::TimeGrid;
use crate::spectral::ops::gradient;
use crate::spectral::{PeriodicGrid, SpectralField};
use num_complex::Complex64;
use serde::Serialize;

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;

// ---------------------------------------------------------------------------
// partition of unity
// ---------------------------------------------------------------------------

/// Quintic smoothstep, C^2 at both ends.
fn smoothstep(s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if s >= 1.0 {
        1.0
    } else {
        s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

/// Base bump: 1 on [-1/4, 1/4], falls to 0 at |u| = 3/4.
fn eta_base(u: f64) -> f64 {
    let a = u.abs();
    if a <= 0.25 {
        1.0
    } else if a >= 0.75 {
        0.0
    } else {
        1.0 - smoothstep((a - 0.25) * 2.0)
    }
}

/// Normalized profile: eta(u) = base(u) / sqrt(sum_j base^2(u - j)).
/// By construction the squares of the integer shifts sum to one.
pub fn eta(u: f64) -> f64 {
    let b = eta_base(u);
    if b == 0.0 {
        return 0.0;
    }
    let s = eta_base(u - 1.0).powi(2) + b * b + eta_base(u + 1.0).powi(2);
    b / s.sqrt()
}

/// eta_{k,j}(t) = eta((t - k)/ell - j); at most two are nonzero and their
/// squares sum to one for t in [k, k+1].
pub fn partition_weights(t: f64, k: i64, ell: f64) -> Result<Vec<(i64, f64)>> {
    let kf = k as f64;
    if !(t >= kf - 1e-12 && t <= kf + 1.0 + 1e-12) {
        return Err(Error::transport(format!(
            "time {t} outside the window [{k}, {}]",
            k + 1
        )));
    }
    let u = (t - kf) / ell;
    let j_max = (1.0 / ell).ceil() as i64;
    let mut out = Vec::with_capacity(2);
    let lo = ((u - 0.75).floor() as i64).max(0);
    let hi = ((u + 0.75).ceil() as i64).min(j_max);
    for j in lo..=hi {
        let w = eta(u - j as f64);
        if w != 0.0 {
            out.push((j, w));
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// spectral upsampling + quintic interpolation
// ---------------------------------------------------------------------------

/// Point evaluator for a band-limited vector field: synthesised once on a
/// finer grid, then interpolated with 6-point Lagrange stencils per axis.
pub struct SpaceInterp {
    fine_n: usize,
    data: [Vec<f64>; 3],
}

impl SpaceInterp {
    /// Synthesise on a fine grid (power of two, at least twice the band).
    pub fn from_field(f: &SpectralField, fine_n: usize) -> Self {
        let fine = PeriodicGrid::new(fine_n).expect("fine grid");
        let data = std::array::from_fn(|c| upsample_component(&f.grid, &f.hat[c], &fine));
        SpaceInterp { fine_n, data }
    }

    pub fn eval(&self, x: [f64; 3]) -> [f64; 3] {
        let n = self.fine_n;
        let h = TWO_PI / n as f64;
        let mut idxs = [[0usize; 6]; 3];
        let mut w = [[0.0f64; 6]; 3];
        for d in 0..3 {
            let u = x[d] / h;
            let i0 = u.floor();
            let f = u - i0;
            let base = (i0 as i64 - 2).rem_euclid(n as i64) as usize;
            for (q, slot) in idxs[d].iter_mut().enumerate() {
                let v = base + q;
                *slot = if v >= n { v - n } else { v };
            }
            w[d] = lagrange6(f);
        }
        // scale the second axis by the row stride once
        let mut rows = [0usize; 6];
        for (q, slot) in rows.iter_mut().enumerate() {
            *slot = idxs[1][q] * n;
        }
        let mut planes = [0usize; 6];
        for (q, slot) in planes.iter_mut().enumerate() {
            *slot = idxs[0][q] * n * n;
        }
        let mut out = [0.0f64; 3];
        for (c, comp) in self.data.iter().enumerate() {
            let mut acc = 0.0;
            for a in 0..6 {
                let wa = w[0][a];
                let plane = planes[a];
                let mut acc_b = 0.0;
                for b in 0..6 {
                    let row = plane + rows[b];
                    let mut inner = 0.0;
                    for g in 0..6 {
                        inner += w[2][g] * comp[row + idxs[2][g]];
                    }
                    acc_b += w[1][b] * inner;
                }
                acc += wa * acc_b;
            }
            out[c] = acc;
        }
        out
    }

    /// Pointwise linear combination of interpolants on the same fine grid.
    pub fn linear_combination(terms: &[(f64, &SpaceInterp)]) -> SpaceInterp {
        let fine_n = terms[0].1.fine_n;
        assert!(terms.iter().all(|(_, s)| s.fine_n == fine_n));
        let len = terms[0].1.data[0].len();
        let data = std::array::from_fn(|c| {
            let mut out = vec![0.0f64; len];
            for (wgt, src) in terms {
                for (o, v) in out.iter_mut().zip(src.data[c].iter()) {
                    *o += wgt * v;
                }
            }
            out
        });
        SpaceInterp { fine_n, data }
    }
}

/// 6-point Lagrange weights at offset f in [0,1) for nodes (-2,-1,0,1,2,3).
fn lagrange6(f: f64) -> [f64; 6] {
    let nodes = [-2.0f64, -1.0, 0.0, 1.0, 2.0, 3.0];
    let mut w = [0.0f64; 6];
    for i in 0..6 {
        let mut v = 1.0;
        for j in 0..6 {
            if i != j {
                v *= (f - nodes[j]) / (nodes[i] - nodes[j]);
            }
        }
        w[i] = v;
    }
    w
}

fn upsample_component(grid: &PeriodicGrid, hat: &[Complex64], fine: &PeriodicGrid) -> Vec<f64> {
    let mut out = vec![Complex64::default(); fine.len()];
    // keep only modes representable on both grids; a coarser target grid
    // truncates rather than aliasing
    let max = grid.max_wave().min(fine.max_wave());
    grid.for_each_mode(|idx, k| {
        if k.iter().any(|c| c.abs() > max) {
            return;
        }
        let c = hat[idx];
        if c.norm_sqr() == 0.0 {
            return;
        }
        let fidx = crate::beltrami::mode_index(fine, k);
        out[fidx] = c;
    });
    fine.fft().inverse(&mut out);
    out.iter().map(|c| c.re).collect()
}

/// Quadratic-in-time evaluator over three consecutive slices.
pub struct TimeSlabInterp<'a> {
    pub times: [f64; 3],
    pub slices: [&'a SpaceInterp; 3],
}

impl<'a> TimeSlabInterp<'a> {
    fn weights(&self, t: f64) -> [f64; 3] {
        let [t0, t1, t2] = self.times;
        [
            (t - t1) * (t - t2) / ((t0 - t1) * (t0 - t2)),
            (t - t0) * (t - t2) / ((t1 - t0) * (t1 - t2)),
            (t - t0) * (t - t1) / ((t2 - t0) * (t2 - t1)),
        ]
    }

    pub fn eval(&self, t: f64, x: [f64; 3]) -> [f64; 3] {
        let l = self.weights(t);
        let v0 = self.slices[0].eval(x);
        let v1 = self.slices[1].eval(x);
        let v2 = self.slices[2].eval(x);
        std::array::from_fn(|c| l[0] * v0[c] + l[1] * v1[c] + l[2] * v2[c])
    }

    /// Freeze the quadratic combination at a stage time into one interpolant.
    pub fn at_time(&self, t: f64) -> SpaceInterp {
        let l = self.weights(t);
        SpaceInterp::linear_combination(&[
            (l[0], self.slices[0]),
            (l[1], self.slices[1]),
            (l[2], self.slices[2]),
        ])
    }
}

/// The three Runge-Kutta stage fields of one marching interval, precombined
/// on the fine grid so each stage needs a single interpolation per point.
pub struct AdvectStages {
    pub t_old: f64,
    pub t_new: f64,
    pub old: SpaceInterp,
    pub mid: SpaceInterp,
    pub new: SpaceInterp,
}

impl AdvectStages {
    pub fn from_slab(slab: &TimeSlabInterp, t_old: f64, t_new: f64) -> Self {
        let t_mid = 0.5 * (t_old + t_new);
        AdvectStages {
            t_old,
            t_new,
            old: slab.at_time(t_old),
            mid: slab.at_time(t_mid),
            new: slab.at_time(t_new),
        }
    }
}

// ---------------------------------------------------------------------------
// flow marcher
// ---------------------------------------------------------------------------

/// Solver knobs for one window.
#[derive(Clone, Copy, Debug)]
pub struct FlowSolveParams {
    /// marching grid size (power of two)
    pub march_n: usize,
    /// fine grid factor for interpolating the displacement (usually 2)
    pub psi_fine_factor: usize,
    /// reject a step when |g|_C0 * dt exceeds this fraction of the grid cell
    pub cfl_fraction: f64,
    /// evaluate the expensive sup-diagnostics every this many steps
    /// (the final window slice is always included)
    pub diagnostics_stride: usize,
}

impl Default for FlowSolveParams {
    fn default() -> Self {
        FlowSolveParams {
            march_n: 32,
            psi_fine_factor: 2,
            cfl_fraction: 0.5,
            diagnostics_stride: 4,
        }
    }
}

/// Running sup-diagnostics for one window.
#[derive(Clone, Debug, Default, Serialize)]
pub struct WindowDiagnostics {
    /// sup over time and space of |grad Phi - Id| (Frobenius)
    pub grad_dist: f64,
    /// sup_t of the advecting field C^1 norm seen by this window
    pub advect_c1: f64,
    /// sup_t |grad Phi|_{C^n} for n = 1..3 (spectral derivatives of Psi)
    pub grad_cn: [f64; 3],
    /// sup |dPhi/dt| (finite differences on the stored slices)
    pub dt_phi: f64,
    /// sup |d grad Phi / dt|
    pub dt_grad_phi: f64,
    /// worst deviation of det(grad Phi) from 1
    pub jacobian_defect: f64,
    /// worst centered-difference transport residual |d_t Phi + g.grad Phi|
    pub residual: f64,
    /// accumulated window length so far
    pub elapsed: f64,
}

/// Semi-Lagrangian marcher for one window (k, j), holding only a short ring
/// of displacement slices.
pub struct FlowMarcher {
    pub k: i64,
    pub j: i64,
    pub grid: PeriodicGrid,
    pub t0_idx: usize,
    pub t_end_idx: usize,
    pub cur_idx: usize,
    pub params: FlowSolveParams,
    /// displacement Psi = Phi - x, physical on the marching grid
    psi: [Vec<f64>; 3],
    psi_prev: Option<[Vec<f64>; 3]>,
    psi_prev2: Option<[Vec<f64>; 3]>,
    pub diagnostics: WindowDiagnostics,
    tgrid: TimeGrid,
}

impl FlowMarcher {
    pub fn new(
        k: i64,
        j: i64,
        tgrid: TimeGrid,
        t0_idx: usize,
        t_end_idx: usize,
        params: FlowSolveParams,
    ) -> Result<Self> {
        let grid = PeriodicGrid::new(params.march_n)?;
        let len = grid.len();
        Ok(FlowMarcher {
            k,
            j,
            grid,
            t0_idx,
            t_end_idx,
            cur_idx: t0_idx,
            params,
            psi: std::array::from_fn(|_| vec![0.0; len]),
            psi_prev: None,
            psi_prev2: None,
            diagnostics: WindowDiagnostics::default(),
            tgrid,
        })
    }

    /// Native window of validity in slice indices.
    pub fn covers(&self, idx: usize) -> bool {
        idx >= self.t0_idx && idx <= self.t_end_idx
    }

    /// Advance one step: the stage fields must span
    /// [t(cur_idx), t(cur_idx+1)] and satisfy the CFL guard.
    pub fn advance(&mut self, stages: &AdvectStages, g_c0: f64, g_c1: f64) -> Result<()> {
        if self.cur_idx + 1 > self.t_end_idx {
            return Err(Error::transport("advancing past the native window"));
        }
        let dt = self.tgrid.dt;
        let h = TWO_PI / self.grid.n as f64;
        if g_c0 * dt > self.params.cfl_fraction * h {
            return Err(Error::transport(format!(
                "CFL rejection: |g| dt = {:.3e} exceeds {:.3e}",
                g_c0 * dt,
                self.params.cfl_fraction * h
            )));
        }

        // interpolant of the current displacement
        let psi_field = self.psi_spectral_on(self.grid);
        let psi_interp =
            SpaceInterp::from_field(&psi_field, self.grid.n * self.params.psi_fine_factor);

        let n = self.grid.n;
        let grid = self.grid;
        let mut new_psi: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for ix in 0..n {
            let x0 = grid.coord(ix);
            for iy in 0..n {
                let x1 = grid.coord(iy);
                let base = (ix * n + iy) * n;
                for iz in 0..n {
                    let x2 = grid.coord(iz);
                    let x = [x0, x1, x2];
                    // RK4 backward from t_new to t_old
                    let k1 = stages.new.eval(x);
                    let xm1 = step_point(x, &k1, -0.5 * dt);
                    let k2 = stages.mid.eval(xm1);
                    let xm2 = step_point(x, &k2, -0.5 * dt);
                    let k3 = stages.mid.eval(xm2);
                    let xm3 = step_point(x, &k3, -dt);
                    let k4 = stages.old.eval(xm3);
                    let mut foot = x;
                    let mut disp = [0.0f64; 3];
                    for c in 0..3 {
                        let v = (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]) / 6.0;
                        disp[c] = -dt * v;
                        foot[c] = wrap(x[c] + disp[c]);
                    }
                    let carried = psi_interp.eval(foot);
                    let idx = base + iz;
                    for c in 0..3 {
                        new_psi[c][idx] = carried[c] + disp[c];
                    }
                }
            }
        }
        self.psi_prev2 = self.psi_prev.take();
        self.psi_prev = Some(std::mem::replace(&mut self.psi, new_psi));
        self.cur_idx += 1;
        self.diagnostics.elapsed = self.tgrid.time(self.cur_idx) - self.tgrid.time(self.t0_idx);
        self.diagnostics.advect_c1 = self.diagnostics.advect_c1.max(g_c1);
        let due = (self.cur_idx - self.t0_idx) % self.params.diagnostics_stride.max(1) == 0
            || self.cur_idx == self.t_end_idx;
        if due {
            self.update_diagnostics(stages);
        }
        Ok(())
    }

    fn update_diagnostics(&mut self, stages: &AdvectStages) {
        let grid = self.grid;
        let psi_field = self.psi_spectral_on(grid);
        // spatial gradient of Psi: 9 physical arrays
        let mut grads: Vec<[Vec<f64>; 3]> = Vec::with_capacity(3);
        for c in 0..3 {
            grads.push(gradient(&psi_field.component(c)).to_physical());
        }
        let mut worst = 0.0f64;
        let mut worst_jac = 0.0f64;
        for idx in 0..grid.len() {
            let mut fro = 0.0;
            let mut m = [[0.0f64; 3]; 3];
            for c in 0..3 {
                for d in 0..3 {
                    let v = grads[c][d][idx];
                    fro += v * v;
                    m[c][d] = v + if c == d { 1.0 } else { 0.0 };
                }
            }
            worst = worst.max(fro);
            let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
            worst_jac = worst_jac.max((det - 1.0).abs());
        }
        self.diagnostics.grad_dist = self.diagnostics.grad_dist.max(worst.sqrt());
        self.diagnostics.jacobian_defect = self.diagnostics.jacobian_defect.max(worst_jac);
        // C^n norms of grad Phi, n = 1..3: derivatives of grad Psi
        for norder in 1..=3usize {
            let mut acc = 0.0f64;
            for c in 0..3 {
                let comp = psi_field.component(c);
                // representative n-th derivative magnitude: d^n/dx_d^n
                let mut worst_d = 0.0f64;
                for dir in 0..3 {
                    let mut f = comp.clone();
                    for _ in 0..=norder {
                        f = gradient(&f).component(dir);
                    }
                    worst_d = worst_d
                        .max(f.to_physical().iter().fold(0.0f64, |m, v| m.max(v.abs())));
                }
                acc = acc.max(worst_d);
            }
            self.diagnostics.grad_cn[norder - 1] = self.diagnostics.grad_cn[norder - 1].max(acc);
        }
        // time derivatives and the transport residual via centered FD
        if let (Some(prev2), Some(prev)) = (&self.psi_prev2, &self.psi_prev) {
            let dt = self.tgrid.dt;
            // centered derivative of Phi at cur_idx - 1 (= stages.t_old)
            let mut worst_dt = 0.0f64;
            for c in 0..3 {
                for idx in 0..grid.len() {
                    let d = (self.psi[c][idx] - prev2[c][idx]) / (2.0 * dt);
                    worst_dt = worst_dt.max(d.abs());
                }
            }
            self.diagnostics.dt_phi = self.diagnostics.dt_phi.max(worst_dt);
            // residual d_t Phi + g . grad Phi at the middle slice
            let mid_field = field_from_physical(grid, prev);
            let mut gradmid: Vec<[Vec<f64>; 3]> = Vec::with_capacity(3);
            for c in 0..3 {
                gradmid.push(gradient(&mid_field.component(c)).to_physical());
            }
            let mut worst_res = 0.0f64;
            let mut worst_dtg = 0.0f64;
            let n = grid.n;
            for ix in 0..n {
                for iy in 0..n {
                    for iz in 0..n {
                        let idx = grid.idx(ix, iy, iz);
                        let x = [grid.coord(ix), grid.coord(iy), grid.coord(iz)];
                        let g = stages.old.eval(x);
                        for c in 0..3 {
                            let dtphi = (self.psi[c][idx] - prev2[c][idx]) / (2.0 * dt);
                            let mut adv = g[0] * gradmid[c][0][idx]
                                + g[1] * gradmid[c][1][idx]
                                + g[2] * gradmid[c][2][idx];
                            // grad Phi = grad Psi + Id
                            adv += g[c];
                            worst_res = worst_res.max((dtphi + adv).abs());
                        }
                    }
                }
            }
            // d_t grad Phi by centered differences of grad Psi
            let new_field = field_from_physical(grid, &self.psi);
            let old_field = field_from_physical(grid, prev2);
            for c in 0..3 {
                let gn = gradient(&new_field.component(c)).to_physical();
                let go = gradient(&old_field.component(c)).to_physical();
                for d in 0..3 {
                    for idx in 0..grid.len() {
                        let v = (gn[d][idx] - go[d][idx]) / (2.0 * dt);
                        worst_dtg = worst_dtg.max(v.abs());
                    }
                }
            }
            self.diagnostics.residual = self.diagnostics.residual.max(worst_res);
            self.diagnostics.dt_grad_phi = self.diagnostics.dt_grad_phi.max(worst_dtg);
        }
    }

    /// Displacement as a spectral field on an arbitrary (finer or equal)
    /// grid; exact re-synthesis of the marching-band content.
    pub fn psi_spectral_on(&self, out: PeriodicGrid) -> SpectralField {
        let src = field_from_physical(self.grid, &self.psi);
        if out.n == self.grid.n {
            return src;
        }
        let mut dst = SpectralField::zeros(out);
        let max = self.grid.max_wave();
        self.grid.for_each_mode(|idx, k| {
            if k.iter().any(|c| c.abs() > max) {
                return;
            }
            let didx = crate::beltrami::mode_index(&out, k);
            for c in 0..3 {
                dst.hat[c][didx] = src.hat[c][idx];
            }
        });
        dst.divergence_free = false;
        dst.mean_zero = false;
        dst
    }

    /// Guarded access used by the perturbation assembly: only the native
    /// window may ever be read, and only at the slice the marcher is at.
    pub fn sample(&self, idx: usize) -> Result<()> {
        if !self.covers(idx) {
            return Err(Error::transport(format!(
                "flow map ({}, {}) sampled outside its native window",
                self.k, self.j
            )));
        }
        if idx != self.cur_idx {
            return Err(Error::transport(
                "flow map sampled at a slice it has not reached",
            ));
        }
        Ok(())
    }
}

fn wrap(x: f64) -> f64 {
    x.rem_euclid(TWO_PI)
}

fn step_point(x: [f64; 3], v: &[f64; 3], dt: f64) -> [f64; 3] {
    std::array::from_fn(|c| wrap(x[c] + dt * v[c]))
}

fn field_from_physical(grid: PeriodicGrid, comps: &[Vec<f64>; 3]) -> SpectralField {
    let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
    SpectralField::from_physical(grid, refs)
}

// ---------------------------------------------------------------------------
// standalone window solve (small cases, tests, diagnostics)
// ---------------------------------------------------------------------------

/// Solve one window given the advecting slices over [t0_idx, t1_idx].
/// Returns the displacement on every slice of the window.
pub fn solve_flow(
    g_slices: &[SpectralField],
    tgrid: TimeGrid,
    t0_idx: usize,
    t1_idx: usize,
    params: FlowSolveParams,
) -> Result<(Vec<SpectralField>, WindowDiagnostics)> {
    if t1_idx >= g_slices.len() || t0_idx >= t1_idx {
        return Err(Error::transport("bad window bounds"));
    }
    let fine_for = |f: &SpectralField| {
        let band = field_band(f).max(4) as usize;
        let mut n = 16usize;
        while n < 4 * band {
            n *= 2;
        }
        n
    };
    let mut marcher = FlowMarcher::new(0, 0, tgrid, t0_idx, t1_idx, params)?;
    let mut out = Vec::with_capacity(t1_idx - t0_idx + 1);
    out.push(marcher.psi_spectral_on(g_slices[t0_idx].grid));
    let interps: Vec<SpaceInterp> = g_slices
        .iter()
        .map(|g| SpaceInterp::from_field(g, fine_for(g)))
        .collect();
    for idx in t0_idx..t1_idx {
        let stencil = time_stencil(idx, g_slices.len());
        let slab = TimeSlabInterp {
            times: [
                tgrid.time(stencil[0]),
                tgrid.time(stencil[1]),
                tgrid.time(stencil[2]),
            ],
            slices: [
                &interps[stencil[0]],
                &interps[stencil[1]],
                &interps[stencil[2]],
            ],
        };
        let stages = AdvectStages::from_slab(&slab, tgrid.time(idx), tgrid.time(idx + 1));
        let g_c0 = crate::spectral::norms::c0_norm(&g_slices[idx]);
        let g_c1 = crate::spectral::norms::c1_x_norm(&g_slices[idx]);
        marcher.advance(&stages, g_c0, g_c1)?;
        out.push(marcher.psi_spectral_on(g_slices[t0_idx].grid));
    }
    Ok((out, marcher.diagnostics))
}

/// Stencil of three slice indices bracketing the interval [idx, idx+1].
pub fn time_stencil(idx: usize, len: usize) -> [usize; 3] {
    if idx == 0 {
        [0, 1, 2.min(len - 1)]
    } else if idx + 1 >= len {
        [len.saturating_sub(3), len - 2, len - 1]
    } else {
        [idx - 1, idx, idx + 1]
    }
}

pub fn field_band(f: &SpectralField) -> i64 {
    let mut band = 0i64;
    f.grid.for_each_mode(|idx, k| {
        let mag: f64 = (0..3).map(|c| f.hat[c][idx].norm_sqr()).sum();
        if mag > 1e-28 {
            band = band.max(k.iter().map(|c| c.abs()).max().unwrap());
        }
    });
    band
}

/// Per-window report of the flow diagnostics against their references.
#[derive(Clone, Debug, Serialize)]
pub struct FlowReport {
    pub k: i64,
    pub j: i64,
    pub grad_dist: f64,
    /// Gronwall reference e^(elapsed * |g|_{C0 C1}) - 1
    pub gronwall_bound: f64,
    pub within_gronwall: bool,
    /// two-sided bounds on |grad Phi| implied by grad_dist
    pub grad_norm_lo: f64,
    pub grad_norm_hi: f64,
    pub grad_cn: [f64; 3],
    /// reference shape ell^(-n + 1/4)
    pub grad_cn_reference: [f64; 3],
    pub dt_phi: f64,
    pub dt_grad_phi: f64,
    pub jacobian_defect: f64,
    pub residual: f64,
}

pub fn flow_report(diag: &WindowDiagnostics, k: i64, j: i64, ell: f64) -> FlowReport {
    let bound = (diag.elapsed * diag.advect_c1).exp() - 1.0;
    FlowReport {
        k,
        j,
        grad_dist: diag.grad_dist,
        gronwall_bound: bound,
        within_gronwall: diag.grad_dist <= bound * 1.1 + 1e-12,
        grad_norm_lo: 1.0 - diag.grad_dist,
        grad_norm_hi: 1.0 + diag.grad_dist,
        grad_cn: diag.grad_cn,
        grad_cn_reference: std::array::from_fn(|i| ell.powf(-((i + 1) as f64) + 0.25)),
        dt_phi: diag.dt_phi,
        dt_grad_phi: diag.dt_grad_phi,
        jacobian_defect: diag.jacobian_defect,
        residual: diag.residual,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn eta_profile_contract() {
        assert_eq!(eta(0.0), 1.0);
        assert_eq!(eta(0.2), 1.0);
        assert_eq!(eta(0.80), 0.0);
        assert!(eta(0.5) > 0.0 && eta(0.5) < 1.0);
        // support strictly inside (-1, 1)
        assert_eq!(eta(0.75), 0.0);
    }

    #[test]
    fn partition_identity_dense_sweep() {
        let ell = 0.25;
        let k = 3i64;
        let mut worst = 0.0f64;
        for i in 0..1000 {
            let t = k as f64 + (i as f64 + 0.5) / 1000.0;
            let ws = partition_weights(t, k, ell).unwrap();
            assert!(ws.len() <= 2, "more than two weights at t = {t}");
            let s: f64 = ws.iter().map(|(_, w)| w * w).sum();
            worst = worst.max((s - 1.0).abs());
        }
        assert!(worst <= 1e-12, "partition defect {worst}");
    }

    #[test]
    fn partition_examples() {
        let ell = 0.25;
        // window centre: single weight 1
        let ws = partition_weights(0.5, 0, ell).unwrap();
        assert_eq!(ws.len(), 1);
        assert_eq!(ws[0], (2, 1.0));
        // half-way between centres: two weights, squares summing to one
        let ws = partition_weights(0.625, 0, ell).unwrap();
        assert_eq!(ws.len(), 2);
        let s: f64 = ws.iter().map(|(_, w)| w * w).sum();
        assert!((s - 1.0).abs() < 1e-14);
        for (_, w) in ws {
            assert!(w > 0.0 && w < 1.0);
        }
        assert!(partition_weights(2.5, 0, ell).is_err());
    }

    fn tg(steps: usize) -> TimeGrid {
        TimeGrid {
            t0: 0.0,
            dt: 1.0 / 64.0,
            steps,
        }
    }

    fn const_field(grid: PeriodicGrid, v: [f64; 3]) -> SpectralField {
        let mut f = SpectralField::zeros(grid);
        for c in 0..3 {
            f.hat[c][0] = Complex64::new(v[c], 0.0);
        }
        f
    }

    #[test]
    fn zero_field_gives_identity() {
        let grid = PeriodicGrid::new(16).unwrap();
        let slices: Vec<_> = (0..17).map(|_| SpectralField::zeros(grid)).collect();
        let (psi, diag) = solve_flow(&slices, tg(16), 0, 16, FlowSolveParams::default()).unwrap();
        for p in &psi {
            let mag: f64 = p.hat.iter().flat_map(|h| h.iter()).map(|c| c.norm()).sum();
            assert!(mag < 1e-13);
        }
        assert!(diag.grad_dist < 1e-13);
        assert!(diag.residual < 1e-12);
    }

    #[test]
    fn constant_field_exact_translation() {
        let grid = PeriodicGrid::new(16).unwrap();
        let u = [0.3, -0.1, 0.2];
        let slices: Vec<_> = (0..17).map(|_| const_field(grid, u)).collect();
        let t = tg(16);
        let (psi, diag) = solve_flow(&slices, t, 0, 16, FlowSolveParams::default()).unwrap();
        // Psi(t) = -U (t - t0): constant in space
        let elapsed = t.dt * 16.0;
        let last = psi.last().unwrap();
        for c in 0..3 {
            let got = last.hat[c][0].re;
            assert!(
                (got + u[c] * elapsed).abs() < 1e-12,
                "component {c}: {got} vs {}",
                -u[c] * elapsed
            );
            // no spatial structure
            let rest: f64 = last.hat[c].iter().skip(1).map(|v| v.norm()).sum();
            assert!(rest < 1e-12);
        }
        assert!(diag.grad_dist < 1e-12);
    }

    fn shear_field(grid: PeriodicGrid, eps: f64) -> SpectralField {
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for ix in 0..grid.n {
            for iy in 0..grid.n {
                for iz in 0..grid.n {
                    comps[0][grid.idx(ix, iy, iz)] = eps * grid.coord(iy).sin();
                }
            }
        }
        let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
        SpectralField::from_physical(grid, refs)
    }

    #[test]
    fn single_mode_shear_matches_characteristics() {
        // v = eps (sin x2, 0, 0): Phi_1 = x1 - eps (t - t0) sin x2 exactly
        let grid = PeriodicGrid::new(32).unwrap();
        let eps = 0.05;
        let steps = 32usize;
        let slices: Vec<_> = (0..=steps).map(|_| shear_field(grid, eps)).collect();
        let t = tg(steps);
        let (psi, diag) = solve_flow(&slices, t, 0, steps, FlowSolveParams::default()).unwrap();
        let elapsed = t.dt * steps as f64;
        let last = psi.last().unwrap().to_physical();
        let mut worst = 0.0f64;
        for iy in 0..grid.n {
            let expect = -eps * elapsed * grid.coord(iy).sin();
            let idx = grid.idx(0, iy, 0);
            worst = worst.max((last[0][idx] - expect).abs());
        }
        assert!(worst < 1e-6, "characteristic error {worst}");
        // perturbative bound |grad Phi - Id| <= ~ eps * elapsed at leading order
        assert!(diag.grad_dist <= 2.0 * eps * elapsed);
        // transport residual small
        assert!(diag.residual < 1e-4, "residual {}", diag.residual);
    }

    #[test]
    fn gronwall_bound_holds_at_calibrated_size() {
        // ell |v|_{C0C1} = 0.1 with window length 2 ell: bound e^0.2 - 1
        let grid = PeriodicGrid::new(32).unwrap();
        let ell = 0.25f64;
        // |v|_{C0 C1} = 2 eps for the shear: pick eps so ell * 2 eps = 0.1
        let eps = 0.1 / (2.0 * ell);
        let steps = 32usize; // dt = 1/64: elapsed = 0.5 = 2 ell
        let slices: Vec<_> = (0..=steps).map(|_| shear_field(grid, eps)).collect();
        let (_, diag) =
            solve_flow(&slices, tg(steps), 0, steps, FlowSolveParams::default()).unwrap();
        let report = flow_report(&diag, 0, 0, ell);
        let bound = (0.2f64).exp() - 1.0;
        assert!(
            diag.grad_dist <= bound * 1.1,
            "measured {} vs bound {bound}",
            diag.grad_dist
        );
        assert!(report.within_gronwall);
        assert!(report.grad_norm_lo >= 0.5 && report.grad_norm_hi <= 2.0);
        // volume preservation at solver accuracy
        assert!(diag.jacobian_defect < 1e-4);
    }

    #[test]
    fn window_guard_rejects_outside_reads() {
        let t = tg(8);
        let marcher = FlowMarcher::new(0, 1, t, 2, 6, FlowSolveParams::default()).unwrap();
        assert!(marcher.sample(2).is_ok());
        assert!(marcher.sample(1).is_err());
        assert!(marcher.sample(7).is_err());
    }

    #[test]
    fn cfl_rejection() {
        let grid = PeriodicGrid::new(16).unwrap();
        let slices: Vec<_> = (0..4)
            .map(|_| const_field(grid, [40.0, 0.0, 0.0]))
            .collect();
        let t = TimeGrid {
            t0: 0.0,
            dt: 0.05,
            steps: 3,
        };
        assert!(solve_flow(&slices, t, 0, 3, FlowSolveParams::default()).is_err());
    }

    #[test]
    fn doubling_window_doubles_log_bound() {
        let grid = PeriodicGrid::new(16).unwrap();
        let eps = 0.1;
        let slices: Vec<_> = (0..=64).map(|_| shear_field(grid, eps)).collect();
        let (_, d1) = solve_flow(&slices, tg(64), 0, 32, FlowSolveParams::default()).unwrap();
        let (_, d2) = solve_flow(&slices, tg(64), 0, 64, FlowSolveParams::default()).unwrap();
        let b1 = (d1.elapsed * d1.advect_c1).exp() - 1.0;
        let b2 = (d2.elapsed * d2.advect_c1).exp() - 1.0;
        assert!(d2.elapsed > 1.9 * d1.elapsed);
        assert!(b2 > b1 && d2.grad_dist >= d1.grad_dist * 0.99);
    }
}
