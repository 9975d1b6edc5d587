//! Cached 3-D complex FFTs on cubic grids, built from 1-D rustfft plans.
//!
//! Convention: `forward` maps physical samples to trigonometric-polynomial
//! coefficients (it divides by N^3), `inverse` synthesises point values, so
//! `f(x) = sum_k c_k e^(i k.x)` holds with the stored coefficients.

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use std::sync::{Arc, Mutex};

pub struct Fft3 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

static PLAN_CACHE: Mutex<Vec<(usize, Arc<Fft3>)>> = Mutex::new(Vec::new());

impl Fft3 {
    pub fn get(n: usize) -> Arc<Fft3> {
        let mut cache = PLAN_CACHE.lock().unwrap();
        if let Some((_, f)) = cache.iter().find(|(m, _)| *m == n) {
            return f.clone();
        }
        let mut planner = FftPlanner::new();
        let f = Arc::new(Fft3 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        });
        cache.push((n, f.clone()));
        f
    }

    pub fn n(&self) -> usize {
        self.n
    }

    fn transform_axes(&self, data: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        let mut line = vec![Complex64::default(); n];
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        // axis 2 (contiguous)
        for chunk in data.chunks_exact_mut(n) {
            plan.process_with_scratch(chunk, &mut scratch);
        }
        // axis 1 (stride n)
        for ix in 0..n {
            for iz in 0..n {
                let base = ix * n * n + iz;
                for iy in 0..n {
                    line[iy] = data[base + iy * n];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for iy in 0..n {
                    data[base + iy * n] = line[iy];
                }
            }
        }
        // axis 0 (stride n^2)
        for iy in 0..n {
            for iz in 0..n {
                let base = iy * n + iz;
                for ix in 0..n {
                    line[ix] = data[base + ix * n * n];
                }
                plan.process_with_scratch(&mut line, &mut scratch);
                for ix in 0..n {
                    data[base + ix * n * n] = line[ix];
                }
            }
        }
    }

    /// Physical samples -> coefficients (includes the 1/N^3 factor).
    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.fwd);
        let scale = 1.0 / (self.n * self.n * self.n) as f64;
        for v in data.iter_mut() {
            *v *= scale;
        }
    }

    /// Coefficients -> physical samples.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.transform_axes(data, &self.inv);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_and_single_mode() {
        let n = 16;
        let fft = Fft3::get(n);
        // f(x) = e^{i x_1} => coefficient 1 at k=(1,0,0)
        let mut data = vec![Complex64::default(); n * n * n];
        for ix in 0..n {
            let x = 2.0 * std::f64::consts::PI * ix as f64 / n as f64;
            for iy in 0..n {
                for iz in 0..n {
                    data[(ix * n + iy) * n + iz] = Complex64::new(x.cos(), x.sin());
                }
            }
        }
        let orig = data.clone();
        fft.forward(&mut data);
        let idx = (1 * n + 0) * n + 0;
        assert!((data[idx] - Complex64::new(1.0, 0.0)).norm() < 1e-12);
        let total: f64 = data.iter().map(|c| c.norm()).sum();
        assert!((total - 1.0).abs() < 1e-10);
        fft.inverse(&mut data);
        let err: f64 = data
            .iter()
            .zip(orig.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }
}
