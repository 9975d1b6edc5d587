//! Periodic 3-D fields on [0,2pi)^3 stored as complex Fourier coefficients
//! with reality symmetry, plus the calculus operators and norm estimators the
//! iteration uses.

pub mod fft;
pub mod io;
pub mod norms;
pub mod ops;

use crate::error::{Error, Result};
use fft::Fft3;
use num_complex::Complex64;
use std::sync::Arc;

pub use norms::{norm, norm_registry, NormKind};

/// Cubic grid: N points per axis on [0,2pi)^3, modes |k_i| <= N/2 - 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PeriodicGrid {
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(n: usize) -> Result<Self> {
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::spectral(format!(
                "grid size {n} must be a power of two >= 8"
            )));
        }
        Ok(PeriodicGrid { n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn idx(&self, ix: usize, iy: usize, iz: usize) -> usize {
        (ix * self.n + iy) * self.n + iz
    }

    /// Signed wavenumber for a storage index along one axis.
    #[inline]
    pub fn wave(&self, m: usize) -> i64 {
        let half = self.n / 2;
        if m < half {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    /// Physical coordinate of a grid index along one axis.
    #[inline]
    pub fn coord(&self, m: usize) -> f64 {
        2.0 * std::f64::consts::PI * m as f64 / self.n as f64
    }

    /// Per-axis dealias band of the 2/3 rule: products of fields supported in
    /// |k_i| <= band alias only outside the band on this grid.
    #[inline]
    pub fn dealias_band(&self) -> i64 {
        ((self.n - 1) / 3) as i64
    }

    /// Largest representable |k_i| (the Nyquist plane is always dropped).
    #[inline]
    pub fn max_wave(&self) -> i64 {
        (self.n / 2 - 1) as i64
    }

    pub fn fft(&self) -> Arc<Fft3> {
        Fft3::get(self.n)
    }

    /// Visit every mode: callback receives (flat index, [k1,k2,k3]).
    pub fn for_each_mode(&self, mut f: impl FnMut(usize, [i64; 3])) {
        let n = self.n;
        for ix in 0..n {
            let k1 = self.wave(ix);
            for iy in 0..n {
                let k2 = self.wave(iy);
                let base = (ix * n + iy) * n;
                for iz in 0..n {
                    f(base + iz, [k1, k2, self.wave(iz)]);
                }
            }
        }
    }

    /// Volume element of the full-measure quadrature.
    pub fn cell_volume(&self) -> f64 {
        let two_pi = 2.0 * std::f64::consts::PI;
        (two_pi / self.n as f64).powi(3)
    }
}

/// Drop the unmatched Nyquist planes so every retained mode has its conjugate.
fn zero_nyquist(grid: &PeriodicGrid, hat: &mut [Complex64]) {
    let half = grid.n / 2;
    let n = grid.n;
    for ix in 0..n {
        for iy in 0..n {
            for iz in 0..n {
                if ix == half || iy == half || iz == half {
                    hat[(ix * n + iy) * n + iz] = Complex64::default();
                }
            }
        }
    }
}

/// Scalar periodic field in spectral representation.
#[derive(Clone, Debug)]
pub struct SpectralScalar {
    pub grid: PeriodicGrid,
    pub hat: Vec<Complex64>,
}

impl SpectralScalar {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        SpectralScalar {
            grid,
            hat: vec![Complex64::default(); grid.len()],
        }
    }

    pub fn from_physical(grid: PeriodicGrid, phys: &[f64]) -> Self {
        assert_eq!(phys.len(), grid.len());
        let mut hat: Vec<Complex64> = phys.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        grid.fft().forward(&mut hat);
        zero_nyquist(&grid, &mut hat);
        SpectralScalar { grid, hat }
    }

    pub fn to_physical(&self) -> Vec<f64> {
        let mut buf = self.hat.clone();
        self.grid.fft().inverse(&mut buf);
        buf.iter().map(|c| c.re).collect()
    }

    pub fn to_physical_complex(&self) -> Vec<Complex64> {
        let mut buf = self.hat.clone();
        self.grid.fft().inverse(&mut buf);
        buf
    }

    pub fn mean(&self) -> f64 {
        self.hat[0].re
    }

    pub fn scale(&mut self, s: f64) {
        for c in self.hat.iter_mut() {
            *c *= s;
        }
    }

    pub fn add_assign(&mut self, other: &SpectralScalar) {
        for (a, b) in self.hat.iter_mut().zip(other.hat.iter()) {
            *a += b;
        }
    }

    /// Largest reality-symmetry violation max |c(-k) - conj(c(k))|.
    pub fn reality_defect(&self) -> f64 {
        reality_defect(&self.grid, &self.hat)
    }
}

/// 3-component periodic vector field in spectral representation.
#[derive(Clone, Debug)]
pub struct SpectralField {
    pub grid: PeriodicGrid,
    pub hat: [Vec<Complex64>; 3],
    pub divergence_free: bool,
    pub mean_zero: bool,
}

impl SpectralField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        SpectralField {
            grid,
            hat: std::array::from_fn(|_| vec![Complex64::default(); grid.len()]),
            divergence_free: true,
            mean_zero: true,
        }
    }

    pub fn from_physical(grid: PeriodicGrid, comps: [&[f64]; 3]) -> Self {
        let hat = std::array::from_fn(|c| {
            let mut h: Vec<Complex64> = comps[c].iter().map(|&v| Complex64::new(v, 0.0)).collect();
            grid.fft().forward(&mut h);
            zero_nyquist(&grid, &mut h);
            h
        });
        SpectralField {
            grid,
            hat,
            divergence_free: false,
            mean_zero: false,
        }
    }

    pub fn to_physical(&self) -> [Vec<f64>; 3] {
        std::array::from_fn(|c| {
            let mut buf = self.hat[c].clone();
            self.grid.fft().inverse(&mut buf);
            buf.iter().map(|v| v.re).collect()
        })
    }

    /// Complex point values of all components (for complex-valued waves).
    pub fn to_physical_complex_all(&self) -> [Vec<Complex64>; 3] {
        std::array::from_fn(|c| {
            let mut buf = self.hat[c].clone();
            self.grid.fft().inverse(&mut buf);
            buf
        })
    }

    pub fn component(&self, c: usize) -> SpectralScalar {
        SpectralScalar {
            grid: self.grid,
            hat: self.hat[c].clone(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        for comp in self.hat.iter_mut() {
            for c in comp.iter_mut() {
                *c *= s;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SpectralField) {
        for (mine, theirs) in self.hat.iter_mut().zip(other.hat.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += b;
            }
        }
        self.divergence_free &= other.divergence_free;
        self.mean_zero &= other.mean_zero;
    }

    pub fn sub(&self, other: &SpectralField) -> SpectralField {
        let mut out = self.clone();
        for (mine, theirs) in out.hat.iter_mut().zip(other.hat.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a -= b;
            }
        }
        out.divergence_free = self.divergence_free && other.divergence_free;
        out.mean_zero = self.mean_zero && other.mean_zero;
        out
    }

    pub fn mean_vector(&self) -> [f64; 3] {
        [self.hat[0][0].re, self.hat[1][0].re, self.hat[2][0].re]
    }

    /// Relative divergence defect: max_k |k . c(k)| / max_k |c(k)|.
    pub fn divergence_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        self.grid.for_each_mode(|idx, k| {
            let c = [self.hat[0][idx], self.hat[1][idx], self.hat[2][idx]];
            let dot = c[0] * k[0] as f64 + c[1] * k[1] as f64 + c[2] * k[2] as f64;
            let mag = (c[0].norm_sqr() + c[1].norm_sqr() + c[2].norm_sqr()).sqrt();
            let kmag = ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt();
            worst = worst.max(dot.norm());
            scale = scale.max(mag * kmag.max(1.0));
        });
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    pub fn reality_defect(&self) -> f64 {
        self.hat
            .iter()
            .map(|h| reality_defect(&self.grid, h))
            .fold(0.0, f64::max)
    }

    pub fn l2_norm_full(&self) -> f64 {
        // Parseval with the full measure: ||f||_{L^2}^2 = (2pi)^3 sum |c_k|^2
        let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
        let s: f64 = self
            .hat
            .iter()
            .map(|h| h.iter().map(|c| c.norm_sqr()).sum::<f64>())
            .sum();
        (two_pi_cubed * s).sqrt()
    }
}

/// Symmetric-by-storage index order (11, 22, 33, 12, 13, 23).
pub const SYM_INDEX: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// Component slot of the symmetric pair (i, j).
#[inline]
pub fn sym_slot(i: usize, j: usize) -> usize {
    match (i.min(j), i.max(j)) {
        (0, 0) => 0,
        (1, 1) => 1,
        (2, 2) => 2,
        (0, 1) => 3,
        (0, 2) => 4,
        (1, 2) => 5,
        _ => unreachable!(),
    }
}

/// Symmetric 3x3 periodic tensor field (6 stored components).
#[derive(Clone, Debug)]
pub struct SpectralTensorField {
    pub grid: PeriodicGrid,
    pub hat: [Vec<Complex64>; 6],
    pub traceless: bool,
}

impl SpectralTensorField {
    pub fn zeros(grid: PeriodicGrid) -> Self {
        SpectralTensorField {
            grid,
            hat: std::array::from_fn(|_| vec![Complex64::default(); grid.len()]),
            traceless: true,
        }
    }

    pub fn from_physical(grid: PeriodicGrid, comps: [&[f64]; 6]) -> Self {
        let hat = std::array::from_fn(|c| {
            let mut h: Vec<Complex64> = comps[c].iter().map(|&v| Complex64::new(v, 0.0)).collect();
            grid.fft().forward(&mut h);
            zero_nyquist(&grid, &mut h);
            h
        });
        SpectralTensorField {
            grid,
            hat,
            traceless: false,
        }
    }

    pub fn to_physical(&self) -> [Vec<f64>; 6] {
        std::array::from_fn(|c| {
            let mut buf = self.hat[c].clone();
            self.grid.fft().inverse(&mut buf);
            buf.iter().map(|v| v.re).collect()
        })
    }

    pub fn scale(&mut self, s: f64) {
        for comp in self.hat.iter_mut() {
            for c in comp.iter_mut() {
                *c *= s;
            }
        }
    }

    pub fn add_assign(&mut self, other: &SpectralTensorField) {
        for (mine, theirs) in self.hat.iter_mut().zip(other.hat.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a += b;
            }
        }
        self.traceless &= other.traceless;
    }

    pub fn sub(&self, other: &SpectralTensorField) -> SpectralTensorField {
        let mut out = self.clone();
        for (mine, theirs) in out.hat.iter_mut().zip(other.hat.iter()) {
            for (a, b) in mine.iter_mut().zip(theirs.iter()) {
                *a -= b;
            }
        }
        out.traceless = self.traceless && other.traceless;
        out
    }

    /// Remove the pointwise trace (divide equally over the diagonal).
    pub fn make_traceless(&mut self) {
        let len = self.grid.len();
        for idx in 0..len {
            let tr = (self.hat[0][idx] + self.hat[1][idx] + self.hat[2][idx]) / 3.0;
            self.hat[0][idx] -= tr;
            self.hat[1][idx] -= tr;
            self.hat[2][idx] -= tr;
        }
        self.traceless = true;
    }

    /// Relative trace defect: max |tr T| / max |T| over modes.
    pub fn trace_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        let mut scale = 0.0f64;
        for idx in 0..self.grid.len() {
            let tr = self.hat[0][idx] + self.hat[1][idx] + self.hat[2][idx];
            worst = worst.max(tr.norm());
            let mag: f64 = self.hat.iter().map(|h| h[idx].norm_sqr()).sum();
            scale = scale.max(mag.sqrt());
        }
        if scale == 0.0 {
            0.0
        } else {
            worst / scale
        }
    }

    /// Pointwise Frobenius norm on the grid (physical space).
    pub fn frobenius_physical(&self) -> Vec<f64> {
        let phys = self.to_physical();
        let len = self.grid.len();
        let mut out = vec![0.0; len];
        for idx in 0..len {
            let mut s = 0.0;
            for (slot, (i, j)) in SYM_INDEX.iter().enumerate() {
                let v = phys[slot][idx];
                s += if i == j { v * v } else { 2.0 * v * v };
            }
            out[idx] = s.sqrt();
        }
        out
    }
}

fn reality_defect(grid: &PeriodicGrid, hat: &[Complex64]) -> f64 {
    let n = grid.n;
    let mut worst = 0.0f64;
    for ix in 0..n {
        let jx = (n - ix) % n;
        for iy in 0..n {
            let jy = (n - iy) % n;
            for iz in 0..n {
                let jz = (n - iz) % n;
                let a = hat[(ix * n + iy) * n + iz];
                let b = hat[(jx * n + jy) * n + jz];
                worst = worst.max((a - b.conj()).norm());
            }
        }
    }
    worst
}
