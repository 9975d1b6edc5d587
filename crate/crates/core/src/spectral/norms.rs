//! Norm estimators, selectable by name at runtime.
//!
//! Each estimator lives behind the `NormEstimator` trait and is registered in
//! `norm_registry`; CSV reports and the CLI refer to them by their kind
//! string ("c0", "cn:2", "holder:1/2", "lp:2", "hs:3/2").

use super::{ops::gradient, SpectralField, SpectralScalar};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum NormKind {
    C0,
    /// sum of sup norms of all derivatives up to order n
    CN(u32),
    /// Hoelder seminorm plus sup norm, exponent in (0,1)
    Holder(f64),
    Lp(f64),
    /// Sobolev norm with the normalized measure
    Hs(f64),
}

impl NormKind {
    pub fn parse(s: &str) -> Result<NormKind> {
        let s = s.trim().to_ascii_lowercase();
        if s == "c0" {
            return Ok(NormKind::C0);
        }
        if let Some(rest) = s.strip_prefix("cn:") {
            let n: u32 = rest
                .parse()
                .map_err(|_| Error::spectral(format!("bad cn order `{rest}`")))?;
            return Ok(NormKind::CN(n));
        }
        let parse_f = |rest: &str| -> Result<f64> {
            crate::exact::parse_rat(rest)
                .map(|r| crate::exact::rat_to_f64(&r))
                .ok_or_else(|| Error::spectral(format!("bad norm parameter `{rest}`")))
        };
        if let Some(rest) = s.strip_prefix("holder:") {
            return Ok(NormKind::Holder(parse_f(rest)?));
        }
        if let Some(rest) = s.strip_prefix("lp:") {
            return Ok(NormKind::Lp(parse_f(rest)?));
        }
        if let Some(rest) = s.strip_prefix("hs:") {
            return Ok(NormKind::Hs(parse_f(rest)?));
        }
        Err(Error::spectral(format!("unknown norm kind `{s}`")))
    }

    pub fn name(&self) -> String {
        match self {
            NormKind::C0 => "c0".into(),
            NormKind::CN(n) => format!("cn:{n}"),
            NormKind::Holder(a) => format!("holder:{a}"),
            NormKind::Lp(p) => format!("lp:{p}"),
            NormKind::Hs(s) => format!("hs:{s}"),
        }
    }
}

/// A named norm estimator over vector fields.
pub trait NormEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn eval(&self, field: &SpectralField, parameter: f64) -> Result<f64>;
}

struct C0Est;
struct CnEst;
struct HolderEst;
struct LpEst;
struct HsEst;

impl NormEstimator for C0Est {
    fn name(&self) -> &'static str {
        "c0"
    }
    fn eval(&self, field: &SpectralField, _p: f64) -> Result<f64> {
        Ok(c0_norm(field))
    }
}

impl NormEstimator for CnEst {
    fn name(&self) -> &'static str {
        "cn"
    }
    fn eval(&self, field: &SpectralField, p: f64) -> Result<f64> {
        cn_norm(field, p as u32)
    }
}

impl NormEstimator for HolderEst {
    fn name(&self) -> &'static str {
        "holder"
    }
    fn eval(&self, field: &SpectralField, p: f64) -> Result<f64> {
        Ok(holder_seminorm(field, p)? + c0_norm(field))
    }
}

impl NormEstimator for LpEst {
    fn name(&self) -> &'static str {
        "lp"
    }
    fn eval(&self, field: &SpectralField, p: f64) -> Result<f64> {
        Ok(lp_norm(field, p))
    }
}

impl NormEstimator for HsEst {
    fn name(&self) -> &'static str {
        "hs"
    }
    fn eval(&self, field: &SpectralField, p: f64) -> Result<f64> {
        Ok(hs_norm(field, p))
    }
}

/// The strategy table: estimators by name.
pub fn norm_registry() -> Vec<Box<dyn NormEstimator>> {
    vec![
        Box::new(C0Est),
        Box::new(CnEst),
        Box::new(HolderEst),
        Box::new(LpEst),
        Box::new(HsEst),
    ]
}

/// Evaluate a norm by kind.
pub fn norm(field: &SpectralField, kind: &NormKind) -> Result<f64> {
    match kind {
        NormKind::C0 => Ok(c0_norm(field)),
        NormKind::CN(n) => cn_norm(field, *n),
        NormKind::Holder(a) => Ok(holder_seminorm(field, *a)? + c0_norm(field)),
        NormKind::Lp(p) => Ok(lp_norm(field, *p)),
        NormKind::Hs(s) => Ok(hs_norm(field, *s)),
    }
}

/// sup over grid points of the Euclidean magnitude.
pub fn c0_norm(field: &SpectralField) -> f64 {
    let phys = field.to_physical();
    let mut worst = 0.0f64;
    for idx in 0..field.grid.len() {
        let m = phys[0][idx] * phys[0][idx]
            + phys[1][idx] * phys[1][idx]
            + phys[2][idx] * phys[2][idx];
        worst = worst.max(m);
    }
    worst.sqrt()
}

pub fn c0_norm_scalar(f: &SpectralScalar) -> f64 {
    f.to_physical().iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Sum over all spatial multi-indices |alpha| <= n of sup |D^alpha f|.
pub fn cn_norm(field: &SpectralField, n: u32) -> Result<f64> {
    if n > 8 {
        return Err(Error::spectral("derivative order beyond resolution budget"));
    }
    let mut total = c0_norm(field);
    for order in 1..=n {
        for alpha in multi_indices(order) {
            let mut comps: Vec<SpectralScalar> = Vec::with_capacity(3);
            for c in 0..3 {
                let mut f = field.component(c);
                for (dir, &cnt) in alpha.iter().enumerate() {
                    for _ in 0..cnt {
                        f = derive_dir(&f, dir);
                    }
                }
                comps.push(f);
            }
            let phys: Vec<Vec<f64>> = comps.iter().map(|f| f.to_physical()).collect();
            let mut worst = 0.0f64;
            for idx in 0..field.grid.len() {
                let m: f64 = (0..3).map(|c| phys[c][idx] * phys[c][idx]).sum();
                worst = worst.max(m);
            }
            total += worst.sqrt();
        }
    }
    Ok(total)
}

fn multi_indices(order: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::new();
    for a in 0..=order {
        for b in 0..=(order - a) {
            out.push([a, b, order - a - b]);
        }
    }
    out
}

fn derive_dir(f: &SpectralScalar, dir: usize) -> SpectralScalar {
    let g = gradient(f);
    g.component(dir)
}

/// Hoelder seminorm estimated over grid-aligned offsets: axis and diagonal
/// displacements at dyadic-with-midpoint multiples up to the half period.
/// This is a lower-bound estimator; the sampling density is what the offsets
/// list says, nothing finer.
pub fn holder_seminorm(field: &SpectralField, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::spectral("Hoelder exponent must lie in (0,1)"));
    }
    let grid = field.grid;
    let n = grid.n;
    let phys = field.to_physical();
    let h_unit = 2.0 * std::f64::consts::PI / n as f64;
    let mut steps: Vec<usize> = Vec::new();
    let mut m = 1usize;
    while m <= n / 2 {
        steps.push(m);
        // midpoint 1.5*m keeps the dyadic ladder dense enough for the
        // maximization to land within ~1% of continuum offsets
        let mid = m + m / 2;
        if m / 2 > 0 && mid <= n / 2 {
            steps.push(mid);
        }
        m *= 2;
    }
    steps.dedup();
    let dirs: [[usize; 3]; 7] = [
        [1, 0, 0],
        [0, 1, 0],
        [0, 0, 1],
        [1, 1, 0],
        [0, 1, 1],
        [1, 0, 1],
        [1, 1, 1],
    ];
    let mut worst = 0.0f64;
    for &s in &steps {
        for d in &dirs {
            let dist = h_unit
                * s as f64
                * ((d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) as f64).sqrt();
            if dist > std::f64::consts::PI * 3.0f64.sqrt() {
                continue;
            }
            let denom = dist.powf(alpha);
            for ix in 0..n {
                let jx = (ix + s * d[0]) % n;
                for iy in 0..n {
                    let jy = (iy + s * d[1]) % n;
                    for iz in 0..n {
                        let jz = (iz + s * d[2]) % n;
                        let a = grid.idx(ix, iy, iz);
                        let b = grid.idx(jx, jy, jz);
                        let mut diff = 0.0;
                        for c in 0..3 {
                            let dv = phys[c][a] - phys[c][b];
                            diff += dv * dv;
                        }
                        worst = worst.max(diff.sqrt() / denom);
                    }
                }
            }
        }
    }
    Ok(worst)
}

/// L^p norm with the full measure (2pi)^3.
pub fn lp_norm(field: &SpectralField, p: f64) -> f64 {
    let phys = field.to_physical();
    let vol = field.grid.cell_volume();
    let mut acc = 0.0;
    for idx in 0..field.grid.len() {
        let m = (phys[0][idx] * phys[0][idx]
            + phys[1][idx] * phys[1][idx]
            + phys[2][idx] * phys[2][idx])
            .sqrt();
        acc += m.powf(p) * vol;
    }
    acc.powf(1.0 / p)
}

pub fn l1_norm_scalar(f: &SpectralScalar) -> f64 {
    let vol = f.grid.cell_volume();
    f.to_physical().iter().map(|v| v.abs() * vol).sum()
}

/// Sobolev H^s with the normalized measure: (sum (1+|k|^2)^s |c_k|^2)^(1/2).
pub fn hs_norm(field: &SpectralField, s: f64) -> f64 {
    let mut acc = 0.0;
    field.grid.for_each_mode(|idx, k| {
        let k2 = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64;
        let w = (1.0 + k2).powf(s);
        for d in 0..3 {
            acc += w * field.hat[d][idx].norm_sqr();
        }
    });
    acc.sqrt()
}

/// Composite C^1 norm over a short time series: sup_t (|f| + |df/dt| + |grad f|),
/// the time derivative by centered differences on the series.
pub fn c1_tx_series(series: &[&SpectralField], dt: f64) -> Result<f64> {
    if series.len() < 3 {
        return Err(Error::spectral("c1_tx needs at least three time slices"));
    }
    let mut worst = 0.0f64;
    for (i, f) in series.iter().enumerate() {
        let mut v = c0_norm(f);
        for c in 0..3 {
            v += c0_norm(&gradient(&f.component(c)));
        }
        if i > 0 && i + 1 < series.len() {
            let mut dfdt = series[i + 1].sub(series[i - 1]);
            dfdt.scale(0.5 / dt);
            v += c0_norm(&dfdt);
        }
        worst = worst.max(v);
    }
    Ok(worst)
}

/// C^1_x norm on a single slice: sup |f| + sup |grad f| (spectral gradient).
pub fn c1_x_norm(field: &SpectralField) -> f64 {
    let mut v = c0_norm(field);
    let mut gsum = vec![0.0f64; field.grid.len()];
    for c in 0..3 {
        let g = gradient(&field.component(c)).to_physical();
        for idx in 0..field.grid.len() {
            gsum[idx] += g[0][idx] * g[0][idx] + g[1][idx] * g[1][idx] + g[2][idx] * g[2][idx];
        }
    }
    v += gsum.iter().fold(0.0f64, |m, x| m.max(*x)).sqrt();
    v
}
