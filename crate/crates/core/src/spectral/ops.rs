//! Calculus operators on spectral fields: exact per-mode multipliers for the
//! derivatives, Leray projection, frequency truncation, the inverse
//! divergence, and the dealiased pointwise products.

use super::{sym_slot, PeriodicGrid, SpectralField, SpectralScalar, SpectralTensorField};
use crate::error::{Error, Result};
use num_complex::Complex64;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiffOp {
    Grad,
    Div,
    Curl,
    LaplaceInverse,
}

#[derive(Clone, Debug)]
pub enum FieldVariant {
    Scalar(SpectralScalar),
    Vector(SpectralField),
    Tensor(SpectralTensorField),
}

/// Dispatcher for the operator family; typed entry points below.
pub fn differentiate(field: &FieldVariant, op: DiffOp) -> Result<FieldVariant> {
    match (field, op) {
        (FieldVariant::Scalar(f), DiffOp::Grad) => Ok(FieldVariant::Vector(gradient(f))),
        (FieldVariant::Vector(v), DiffOp::Div) => Ok(FieldVariant::Scalar(divergence(v))),
        (FieldVariant::Vector(v), DiffOp::Curl) => Ok(FieldVariant::Vector(curl(v))),
        (FieldVariant::Scalar(f), DiffOp::LaplaceInverse) => {
            Ok(FieldVariant::Scalar(laplace_inverse_scalar(f)?))
        }
        (FieldVariant::Vector(v), DiffOp::LaplaceInverse) => {
            Ok(FieldVariant::Vector(laplace_inverse(v)?))
        }
        _ => Err(Error::spectral("operator not defined for this field rank")),
    }
}

pub fn gradient(f: &SpectralScalar) -> SpectralField {
    let grid = f.grid;
    let mut out = SpectralField::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let c = f.hat[idx];
        for d in 0..3 {
            out.hat[d][idx] = I * k[d] as f64 * c;
        }
    });
    out.divergence_free = false;
    out.mean_zero = true;
    out
}

pub fn divergence(v: &SpectralField) -> SpectralScalar {
    let grid = v.grid;
    let mut out = SpectralScalar::zeros(grid);
    grid.for_each_mode(|idx, k| {
        out.hat[idx] = I
            * (k[0] as f64 * v.hat[0][idx]
                + k[1] as f64 * v.hat[1][idx]
                + k[2] as f64 * v.hat[2][idx]);
    });
    out
}

pub fn curl(v: &SpectralField) -> SpectralField {
    let grid = v.grid;
    let mut out = SpectralField::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let (a, b, c) = (v.hat[0][idx], v.hat[1][idx], v.hat[2][idx]);
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        out.hat[0][idx] = I * (kf[1] * c - kf[2] * b);
        out.hat[1][idx] = I * (kf[2] * a - kf[0] * c);
        out.hat[2][idx] = I * (kf[0] * b - kf[1] * a);
    });
    out.divergence_free = true;
    out.mean_zero = true;
    out
}

fn require_mean_zero(mean_mag: f64, scale: f64) -> Result<()> {
    if mean_mag > 1e-12 * scale.max(1e-300) {
        return Err(Error::spectral(format!(
            "laplace_inverse requires mean-zero input (mean magnitude {mean_mag:.3e})"
        )));
    }
    Ok(())
}

pub fn laplace_inverse_scalar(f: &SpectralScalar) -> Result<SpectralScalar> {
    let scale = f.hat.iter().map(|c| c.norm()).fold(0.0, f64::max);
    require_mean_zero(f.hat[0].norm(), scale)?;
    let grid = f.grid;
    let mut out = SpectralScalar::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 > 0.0 {
            out.hat[idx] = -f.hat[idx] / k2;
        }
    });
    Ok(out)
}

pub fn laplace_inverse(v: &SpectralField) -> Result<SpectralField> {
    let scale = v
        .hat
        .iter()
        .flat_map(|h| h.iter())
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let mean = (v.hat[0][0].norm_sqr() + v.hat[1][0].norm_sqr() + v.hat[2][0].norm_sqr()).sqrt();
    require_mean_zero(mean, scale)?;
    let grid = v.grid;
    let mut out = v.clone();
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        for d in 0..3 {
            out.hat[d][idx] = if k2 > 0.0 { -v.hat[d][idx] / k2 } else { Complex64::default() };
        }
    });
    out.mean_zero = true;
    Ok(out)
}

/// Projection onto divergence-free fields: v - k (k.v)/|k|^2 per mode.
pub fn leray_project(v: &SpectralField) -> SpectralField {
    let grid = v.grid;
    let mut out = v.clone();
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 > 0.0 {
            let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
            let dot = kf[0] * v.hat[0][idx] + kf[1] * v.hat[1][idx] + kf[2] * v.hat[2][idx];
            for d in 0..3 {
                out.hat[d][idx] -= kf[d] * dot / k2;
            }
        }
    });
    out.divergence_free = true;
    out
}

/// Zero all modes with Euclidean |k| > cut.
pub fn low_pass(v: &SpectralField, cut: f64) -> SpectralField {
    let grid = v.grid;
    let mut out = v.clone();
    let c2 = cut * cut;
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 > c2 {
            for d in 0..3 {
                out.hat[d][idx] = Complex64::default();
            }
        }
    });
    out
}

pub fn low_pass_scalar(f: &SpectralScalar, cut: f64) -> SpectralScalar {
    let grid = f.grid;
    let mut out = f.clone();
    let c2 = cut * cut;
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 > c2 {
            out.hat[idx] = Complex64::default();
        }
    });
    out
}

/// Right inverse of the divergence: mean-zero vector fields to symmetric
/// traceless tensors, per mode
/// (Rv)_ab = d_a Lap^-1 v_b + d_b Lap^-1 v_a - 1/2 (delta_ab + d_a d_b Lap^-1) div Lap^-1 v.
pub fn inverse_divergence(v: &SpectralField) -> Result<SpectralTensorField> {
    let scale = v
        .hat
        .iter()
        .flat_map(|h| h.iter())
        .map(|c| c.norm())
        .fold(0.0, f64::max);
    let mean = (v.hat[0][0].norm_sqr() + v.hat[1][0].norm_sqr() + v.hat[2][0].norm_sqr()).sqrt();
    require_mean_zero(mean, scale)?;
    let grid = v.grid;
    let mut out = SpectralTensorField::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        if k2 == 0.0 {
            return;
        }
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        let vh = [v.hat[0][idx], v.hat[1][idx], v.hat[2][idx]];
        let kdotv = kf[0] * vh[0] + kf[1] * vh[1] + kf[2] * vh[2];
        let s = -I * kdotv / k2; // div Lap^-1 v
        for (slot, (a, b)) in super::SYM_INDEX.iter().enumerate() {
            let symm = -I * (kf[*a] * vh[*b] + kf[*b] * vh[*a]) / k2;
            let delta = if a == b { 1.0 } else { 0.0 };
            out.hat[slot][idx] = symm - 0.5 * s * (delta + kf[*a] * kf[*b] / k2);
        }
    });
    out.traceless = true;
    Ok(out)
}

/// (div T)_a = d_b T_ab for a symmetric tensor.
pub fn divergence_tensor(t: &SpectralTensorField) -> SpectralField {
    let grid = t.grid;
    let mut out = SpectralField::zeros(grid);
    grid.for_each_mode(|idx, k| {
        let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
        for a in 0..3 {
            let mut acc = Complex64::default();
            for b in 0..3 {
                acc += kf[b] * t.hat[sym_slot(a, b)][idx];
            }
            out.hat[a][idx] = I * acc;
        }
    });
    out.divergence_free = false;
    out.mean_zero = true;
    out
}

/// Truncate to the per-axis 2/3-rule band (in place).
pub fn truncate_dealias_hat(grid: &PeriodicGrid, hat: &mut [Complex64]) {
    let band = grid.dealias_band();
    grid.for_each_mode(|idx, k| {
        if k[0].abs() > band || k[1].abs() > band || k[2].abs() > band {
            hat[idx] = Complex64::default();
        }
    });
}

pub fn truncate_dealias_field(v: &mut SpectralField) {
    for d in 0..3 {
        let mut hat = std::mem::take(&mut v.hat[d]);
        truncate_dealias_hat(&v.grid, &mut hat);
        v.hat[d] = hat;
    }
}

/// Dealiased scalar product: pointwise multiply then cut to the 2/3 band.
pub fn scalar_product(a: &SpectralScalar, b: &SpectralScalar) -> SpectralScalar {
    let pa = a.to_physical();
    let pb = b.to_physical();
    let prod: Vec<f64> = pa.iter().zip(pb.iter()).map(|(x, y)| x * y).collect();
    let mut out = SpectralScalar::from_physical(a.grid, &prod);
    truncate_dealias_hat(&a.grid, &mut out.hat);
    out
}

/// Dealiased symmetric outer product (u_i v_j + u_j v_i)/2.
pub fn outer_sym(u: &SpectralField, v: &SpectralField) -> SpectralTensorField {
    let grid = u.grid;
    let pu = u.to_physical();
    let pv = v.to_physical();
    let len = grid.len();
    let mut comps: [Vec<f64>; 6] = std::array::from_fn(|_| vec![0.0; len]);
    for (slot, (i, j)) in super::SYM_INDEX.iter().enumerate() {
        for idx in 0..len {
            comps[slot][idx] = 0.5 * (pu[*i][idx] * pv[*j][idx] + pu[*j][idx] * pv[*i][idx]);
        }
    }
    let refs: [&[f64]; 6] = std::array::from_fn(|s| comps[s].as_slice());
    let mut out = SpectralTensorField::from_physical(grid, refs);
    for slot in 0..6 {
        let mut hat = std::mem::take(&mut out.hat[slot]);
        truncate_dealias_hat(&grid, &mut hat);
        out.hat[slot] = hat;
    }
    out
}

/// Dealiased dot product u . v as a scalar field.
pub fn dot_product(u: &SpectralField, v: &SpectralField) -> SpectralScalar {
    let grid = u.grid;
    let pu = u.to_physical();
    let pv = v.to_physical();
    let len = grid.len();
    let mut prod = vec![0.0; len];
    for idx in 0..len {
        prod[idx] = pu[0][idx] * pv[0][idx] + pu[1][idx] * pv[1][idx] + pu[2][idx] * pv[2][idx];
    }
    let mut out = SpectralScalar::from_physical(grid, &prod);
    truncate_dealias_hat(&grid, &mut out.hat);
    out
}

/// Dealiased advection (vel . grad) g, computed from spectral gradients and a
/// pointwise product.
pub fn advect(vel: &SpectralField, g: &SpectralField) -> SpectralField {
    let grid = g.grid;
    let pvel = vel.to_physical();
    let len = grid.len();
    let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; len]);
    for c in 0..3 {
        let grads = gradient(&g.component(c)).to_physical();
        for idx in 0..len {
            comps[c][idx] = pvel[0][idx] * grads[0][idx]
                + pvel[1][idx] * grads[1][idx]
                + pvel[2][idx] * grads[2][idx];
        }
    }
    let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
    let mut out = SpectralField::from_physical(grid, refs);
    truncate_dealias_field(&mut out);
    out
}

/// L^2 inner product with the full measure, via Parseval.
pub fn inner_l2(u: &SpectralField, v: &SpectralField) -> f64 {
    let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
    let mut s = 0.0;
    for d in 0..3 {
        for (a, b) in u.hat[d].iter().zip(v.hat[d].iter()) {
            s += (a.conj() * b).re;
        }
    }
    two_pi_cubed * s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn grid() -> PeriodicGrid {
        PeriodicGrid::new(16).unwrap()
    }

    fn scalar_from(grid: PeriodicGrid, f: impl Fn(f64, f64, f64) -> f64) -> SpectralScalar {
        let mut phys = vec![0.0; grid.len()];
        for ix in 0..grid.n {
            for iy in 0..grid.n {
                for iz in 0..grid.n {
                    phys[grid.idx(ix, iy, iz)] =
                        f(grid.coord(ix), grid.coord(iy), grid.coord(iz));
                }
            }
        }
        SpectralScalar::from_physical(grid, &phys)
    }

    fn vector_from(
        grid: PeriodicGrid,
        f: impl Fn(f64, f64, f64) -> [f64; 3],
    ) -> SpectralField {
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| vec![0.0; grid.len()]);
        for ix in 0..grid.n {
            for iy in 0..grid.n {
                for iz in 0..grid.n {
                    let v = f(grid.coord(ix), grid.coord(iy), grid.coord(iz));
                    for c in 0..3 {
                        comps[c][grid.idx(ix, iy, iz)] = v[c];
                    }
                }
            }
        }
        let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
        SpectralField::from_physical(grid, refs)
    }

    fn random_mean_zero(grid: PeriodicGrid, seed: u64) -> SpectralField {
        let mut rng = DetRng::new(seed);
        let mut comps: [Vec<f64>; 3] = std::array::from_fn(|_| {
            (0..grid.len()).map(|_| rng.normal()).collect()
        });
        for c in comps.iter_mut() {
            let mean: f64 = c.iter().sum::<f64>() / c.len() as f64;
            for v in c.iter_mut() {
                *v -= mean;
            }
        }
        let refs: [&[f64]; 3] = std::array::from_fn(|c| comps[c].as_slice());
        let mut f = SpectralField::from_physical(grid, refs);
        // make it exactly mean-free in spectral space
        for d in 0..3 {
            f.hat[d][0] = Complex64::default();
        }
        f
    }

    #[test]
    fn div_grad_is_laplacian_on_single_mode() {
        let g = grid();
        let f = scalar_from(g, |x, _, _| x.cos());
        let lap = divergence(&gradient(&f));
        let expect = scalar_from(g, |x, _, _| -x.cos());
        let err = lap
            .hat
            .iter()
            .zip(expect.hat.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12);
    }

    #[test]
    fn laplace_inverse_single_mode() {
        let g = grid();
        let v = vector_from(g, |_, y, _| [y.sin(), 0.0, 0.0]);
        let li = laplace_inverse(&v).unwrap();
        let expect = vector_from(g, |_, y, _| [-y.sin(), 0.0, 0.0]);
        for d in 0..3 {
            let err = li.hat[d]
                .iter()
                .zip(expect.hat[d].iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
    }

    #[test]
    fn laplace_inverse_rejects_nonzero_mean() {
        let g = grid();
        let v = vector_from(g, |_, y, _| [1.0 + y.sin(), 0.0, 0.0]);
        assert!(laplace_inverse(&v).is_err());
    }

    #[test]
    fn leray_kills_gradients_and_fixes_nothing_else() {
        let g = grid();
        let gradf = gradient(&scalar_from(g, |x, _, _| x.cos()));
        let p = leray_project(&gradf);
        let mag: f64 = p.hat.iter().flat_map(|h| h.iter()).map(|c| c.norm()).sum();
        assert!(mag < 1e-12);

        let df = vector_from(g, |x, y, _| [y.sin(), x.sin(), 0.0]);
        let p = leray_project(&df);
        for d in 0..3 {
            let err = p.hat[d]
                .iter()
                .zip(df.hat[d].iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-14);
        }
    }

    #[test]
    fn leray_idempotent_and_self_adjoint() {
        let g = grid();
        let u = random_mean_zero(g, 3);
        let v = random_mean_zero(g, 4);
        let pu = leray_project(&u);
        let ppu = leray_project(&pu);
        for d in 0..3 {
            let err = pu.hat[d]
                .iter()
                .zip(ppu.hat[d].iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            assert!(err < 1e-12);
        }
        let lhs = inner_l2(&pu, &v);
        let rhs = inner_l2(&u, &leray_project(&v));
        assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1.0));
    }

    #[test]
    fn low_pass_examples() {
        let g = grid();
        // two modes |k|=1 and |k|=3
        let v = vector_from(g, |x, y, z| {
            [(x).cos() + (2.0 * x + 2.0 * y + z).cos(), 0.0, 0.0]
        });
        let cut = low_pass(&v, 2.0);
        // only the |k|=1 part remains
        let expect = vector_from(g, |x, _, _| [x.cos(), 0.0, 0.0]);
        let err = cut.hat[0]
            .iter()
            .zip(expect.hat[0].iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-13);
        // K = 0 on a mean-zero field kills everything
        let z = low_pass(&v, 0.0);
        let mag: f64 = z.hat[0].iter().map(|c| c.norm()).sum::<f64>() - z.hat[0][0].norm();
        assert!(mag < 1e-13);
        // K beyond Nyquist is the identity
        let idf = low_pass(&v, g.n as f64);
        let err = idf.hat[0]
            .iter()
            .zip(v.hat[0].iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err == 0.0);
    }

    #[test]
    fn low_pass_composition() {
        let g = grid();
        let v = random_mean_zero(g, 9);
        let a = low_pass(&low_pass(&v, 5.0), 3.0);
        let b = low_pass(&v, 3.0);
        for d in 0..3 {
            let err = a.hat[d]
                .iter()
                .zip(b.hat[d].iter())
                .map(|(x, y)| (x - y).norm())
                .fold(0.0, f64::max);
            assert!(err == 0.0);
        }
    }

    #[test]
    fn inverse_divergence_closed_form() {
        let g = grid();
        let v = vector_from(g, |_, y, _| [y.sin(), 0.0, 0.0]);
        let t = inverse_divergence(&v).unwrap();
        // expected: T_12 = T_21 = -cos(x2), all other entries 0
        let phys = t.to_physical();
        for ix in 0..g.n {
            for iy in 0..g.n {
                let idx = g.idx(ix, iy, 0);
                let expect = -g.coord(iy).cos();
                assert!((phys[3][idx] - expect).abs() < 1e-13);
                for slot in [0usize, 1, 2, 4, 5] {
                    assert!(phys[slot][idx].abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn inverse_divergence_right_inverse_property() {
        let g = grid();
        for seed in 0..3 {
            let v = random_mean_zero(g, 100 + seed);
            let t = inverse_divergence(&v).unwrap();
            assert!(t.trace_defect() < 1e-12);
            let back = divergence_tensor(&t);
            let mut num = 0.0f64;
            let mut den = 0.0f64;
            for d in 0..3 {
                for (a, b) in back.hat[d].iter().zip(v.hat[d].iter()) {
                    num = num.max((a - b).norm());
                    den = den.max(b.norm());
                }
            }
            assert!(num <= 1e-12 * den.max(1e-30));
        }
    }

    #[test]
    fn inverse_divergence_l2_bound() {
        let g = grid();
        for seed in 0..4 {
            let v = random_mean_zero(g, 55 + seed);
            let t = inverse_divergence(&v).unwrap();
            let vn = v.l2_norm_full();
            let tn: f64 = {
                let two_pi_cubed = (2.0 * std::f64::consts::PI).powi(3);
                let mut s = 0.0;
                for (slot, (i, j)) in super::super::SYM_INDEX.iter().enumerate() {
                    let w = if i == j { 1.0 } else { 2.0 };
                    s += w * t.hat[slot].iter().map(|c| c.norm_sqr()).sum::<f64>();
                }
                (two_pi_cubed * s).sqrt()
            };
            assert!(tn <= 4.0 * vn, "measured operator norm {} too large", tn / vn);
        }
    }

    #[test]
    fn zero_maps_to_zero() {
        let g = grid();
        let v = SpectralField::zeros(g);
        let t = inverse_divergence(&v).unwrap();
        let mag: f64 = t.hat.iter().flat_map(|h| h.iter()).map(|c| c.norm()).sum();
        assert_eq!(mag, 0.0);
    }
}
