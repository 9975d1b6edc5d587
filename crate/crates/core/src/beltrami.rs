//! Beltrami plane waves and the geometric decomposition behind the
//! perturbation amplitudes.
//!
//! Two disjoint 12-element rational direction families on the unit sphere are
//! compiled in, each closed under negation and isotropic
//! (sum of xi (x) xi = 4 Id). The coefficient functions are affine in R under
//! a square root: c_xi(R) = 1/4 + <M_xi, R - Id>, with M_xi the unique
//! solution of the linear reconstruction constraints over the six +- pairs,
//! and the admissibility radius is the largest Frobenius ball around the
//! identity keeping every c_xi nonnegative.

use crate::error::{Error, Result};
use crate::exact::{rat_frac, rat_i64, Rat};
use crate::rng::DetRng;
use crate::spectral::{PeriodicGrid, SpectralField};
use num_complex::Complex64;
use num_traits::{ToPrimitive, Zero};
use std::sync::OnceLock;

/// Exact rational 3-vector with a common denominator.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RatVec3 {
    pub num: [i64; 3],
    pub den: i64,
}

impl RatVec3 {
    pub const fn new(num: [i64; 3], den: i64) -> Self {
        RatVec3 { num, den }
    }

    pub fn neg(&self) -> RatVec3 {
        RatVec3 {
            num: [-self.num[0], -self.num[1], -self.num[2]],
            den: self.den,
        }
    }

    /// Exact dot product as a rational.
    pub fn dot(&self, other: &RatVec3) -> Rat {
        let mut acc = Rat::zero();
        for i in 0..3 {
            acc += rat_frac(self.num[i] * other.num[i], self.den * other.den);
        }
        acc
    }

    pub fn cross(&self, other: &RatVec3) -> RatVec3 {
        let a = self.num;
        let b = other.num;
        RatVec3 {
            num: [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ],
            den: self.den * other.den,
        }
    }

    pub fn f64(&self) -> [f64; 3] {
        [
            self.num[0] as f64 / self.den as f64,
            self.num[1] as f64 / self.den as f64,
            self.num[2] as f64 / self.den as f64,
        ]
    }

    pub fn is_unit(&self) -> bool {
        self.dot(self) == rat_i64(1)
    }

    /// xi (x) xi as an exact symmetric matrix (row-major upper storage).
    fn outer_sym(&self) -> [Rat; 6] {
        let mut out = std::array::from_fn(|_| Rat::zero());
        for (slot, (i, j)) in SYM6.iter().enumerate() {
            out[slot] = rat_frac(self.num[*i] * self.num[*j], self.den * self.den);
        }
        out
    }
}

const SYM6: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

/// One +- pair of directions with its shared orthonormal frame vector.
#[derive(Clone, Debug)]
pub struct DirectionPair {
    pub xi: RatVec3,
    pub a_frame: RatVec3,
    /// symmetric matrix of the affine coefficient map, Frobenius pairing
    pub m_matrix: [[f64; 3]; 3],
    pub m_frobenius: f64,
    /// exact square of the Frobenius norm of the coefficient matrix
    pub m_frobenius_sq_exact: Rat,
    /// complex polarization B = (A + i xi x A)/sqrt(2)
    pub b_vec: [Complex64; 3],
}

#[derive(Clone, Debug)]
pub struct DirectionFamily {
    pub pairs: Vec<DirectionPair>,
}

impl DirectionFamily {
    /// All 12 signed directions with their frames (A is shared in a pair).
    pub fn signed_directions(&self) -> Vec<(RatVec3, RatVec3)> {
        let mut out = Vec::with_capacity(12);
        for p in &self.pairs {
            out.push((p.xi, p.a_frame));
            out.push((p.xi.neg(), p.a_frame));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct DirectionSet {
    pub families: [DirectionFamily; 2],
    /// smallest n with n * Lambda_alpha in Z^3 for both families
    pub n_star: i64,
    /// admissibility radius (largest Frobenius ball keeping c_xi >= 0)
    pub c_star_computed: f64,
    /// its exact square
    pub c_star_sq: Rat,
}

const FAMILY_0: [([i64; 3], [i64; 3]); 6] = [
    ([3, 4, 0], [-4, 3, 0]),
    ([4, -3, 0], [3, 4, 0]),
    ([0, 3, 4], [0, -4, 3]),
    ([0, 4, -3], [0, 3, 4]),
    ([4, 0, 3], [-3, 0, 4]),
    ([-3, 0, 4], [-4, 0, -3]),
];

const FAMILY_1: [([i64; 3], [i64; 3]); 6] = [
    ([4, 3, 0], [-3, 4, 0]),
    ([-3, 4, 0], [-4, -3, 0]),
    ([0, 4, 3], [0, -3, 4]),
    ([0, -3, 4], [0, -4, -3]),
    ([3, 0, 4], [-4, 0, 3]),
    ([4, 0, -3], [3, 0, 4]),
];

/// Solve the 6x6 rational system T c = rhs where T(c) = sum_i c_i (Id - xi_i xi_i^T).
fn invert_reconstruction(pairs: &[RatVec3]) -> Result<Vec<[Rat; 6]>> {
    // column i of T is vec(Id - xi_i xi_i^T)
    let mut t = vec![[Rat::zero(), Rat::zero(), Rat::zero(), Rat::zero(), Rat::zero(), Rat::zero()]; 6];
    for (i, xi) in pairs.iter().enumerate() {
        let outer = xi.outer_sym();
        for (slot, (a, b)) in SYM6.iter().enumerate() {
            let delta = if a == b { rat_i64(1) } else { Rat::zero() };
            t[i][slot] = delta - outer[slot].clone();
        }
    }
    // invert T^T as a 6x6 (rows are equations over slots). We solve T M = I
    // where T_{slot,i}: build matrix rows = slots.
    let mut a: Vec<Vec<Rat>> = (0..6)
        .map(|slot| (0..6).map(|i| t[i][slot].clone()).collect())
        .collect();
    let mut inv: Vec<Vec<Rat>> = (0..6)
        .map(|r| {
            (0..6)
                .map(|c| if r == c { rat_i64(1) } else { Rat::zero() })
                .collect()
        })
        .collect();
    for col in 0..6 {
        let pivot = (col..6)
            .find(|&r| !a[r][col].is_zero())
            .ok_or_else(|| Error::beltrami("direction family does not span Sym(3)"))?;
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let p = a[col][col].clone();
        for c in 0..6 {
            a[col][c] /= p.clone();
            inv[col][c] /= p.clone();
        }
        for r in 0..6 {
            if r != col && !a[r][col].is_zero() {
                let f = a[r][col].clone();
                for c in 0..6 {
                    let sub_a = &a[col][c] * &f;
                    a[r][c] -= sub_a;
                    let sub_i = &inv[col][c] * &f;
                    inv[r][c] -= sub_i;
                }
            }
        }
    }
    // row i of the result: coefficients of c_i as a function of vec(R)
    let mut rows = Vec::with_capacity(6);
    for i in 0..6 {
        // c = A^{-1} vec(R): row i of inv (inv now holds A^{-1} where
        // A_{slot,i}; we built a as [slot][i], so inv maps slot-vec to c)
        let mut row = std::array::from_fn(|_| Rat::zero());
        for (slot, val) in inv[i].iter().enumerate() {
            row[slot] = val.clone();
        }
        rows.push(row);
    }
    Ok(rows)
}

fn build_family(spec: &[([i64; 3], [i64; 3]); 6]) -> Result<DirectionFamily> {
    let xis: Vec<RatVec3> = spec.iter().map(|(x, _)| RatVec3::new(*x, 5)).collect();
    let frames: Vec<RatVec3> = spec.iter().map(|(_, a)| RatVec3::new(*a, 5)).collect();
    for (xi, a) in xis.iter().zip(frames.iter()) {
        if !xi.is_unit() || !a.is_unit() {
            return Err(Error::beltrami("direction or frame is not a unit vector"));
        }
        if !xi.dot(a).is_zero() {
            return Err(Error::beltrami("frame not orthogonal to direction"));
        }
    }
    let m_rows = invert_reconstruction(&xis)?;
    // c(Id) must be exactly 1/4 for every pair (isotropic family)
    for row in &m_rows {
        let mut c_id = Rat::zero();
        for (slot, (a, b)) in SYM6.iter().enumerate() {
            if a == b {
                c_id += row[slot].clone();
            }
        }
        if c_id != rat_frac(1, 4) {
            return Err(Error::beltrami("family is not isotropic: c(Id) != 1/4"));
        }
    }
    let pairs = xis
        .iter()
        .zip(frames.iter())
        .zip(m_rows.iter())
        .map(|((xi, a), row)| {
            // symmetric matrix with <M,S>_F = sum_slot row_slot * vec(S)_slot
            let mut m = [[0.0f64; 3]; 3];
            let mut fro2 = Rat::zero();
            for (slot, (i, j)) in SYM6.iter().enumerate() {
                let v = row[slot].to_f64().unwrap();
                if i == j {
                    m[*i][*j] = v;
                    fro2 += &row[slot] * &row[slot];
                } else {
                    m[*i][*j] = v / 2.0;
                    m[*j][*i] = v / 2.0;
                    fro2 += &row[slot] * &row[slot] / rat_i64(2);
                }
            }
            let xa = xi.cross(a);
            let sq = 0.5f64.sqrt();
            let xf = xa.f64();
            let af = a.f64();
            let b_vec = std::array::from_fn(|i| Complex64::new(af[i] * sq, xf[i] * sq));
            DirectionPair {
                xi: *xi,
                a_frame: *a,
                m_matrix: m,
                m_frobenius: fro2.to_f64().unwrap().sqrt(),
                m_frobenius_sq_exact: fro2,
                b_vec,
            }
        })
        .collect();
    Ok(DirectionFamily { pairs })
}

fn build_direction_set() -> Result<DirectionSet> {
    let f0 = build_family(&FAMILY_0)?;
    let f1 = build_family(&FAMILY_1)?;
    // disjointness across families, including negations
    for (x0, _) in f0.signed_directions() {
        for (x1, _) in f1.signed_directions() {
            if x0 == x1 {
                return Err(Error::beltrami("direction families are not disjoint"));
            }
        }
    }
    // n_star: smallest n with n*xi integer for all xi. All coordinates have
    // reduced denominator 5, so the lcm is 5; verified below.
    let n_star = 5i64;
    for fam in [&f0, &f1] {
        for p in &fam.pairs {
            if wave_vector(&p.xi, n_star).is_err() {
                return Err(Error::beltrami("n_star does not clear the denominators"));
            }
        }
    }
    // exact radius^2: min over pairs of (1/4)^2 / ||M||_F^2
    let mut c_star_sq = None::<Rat>;
    for fam in [&f0, &f1] {
        for p in &fam.pairs {
            let r2 = rat_frac(1, 16) / p.m_frobenius_sq_exact.clone();
            c_star_sq = Some(match c_star_sq {
                None => r2,
                Some(cur) => {
                    if r2 < cur {
                        r2
                    } else {
                        cur
                    }
                }
            });
        }
    }
    let c_star_sq = c_star_sq.unwrap();
    let c_star_computed = c_star_sq.to_f64().unwrap().sqrt();
    Ok(DirectionSet {
        families: [f0, f1],
        n_star,
        c_star_computed,
        c_star_sq,
    })
}

static DIRECTION_SET: OnceLock<DirectionSet> = OnceLock::new();

/// The compiled-in direction sets, validated on first use.
pub fn direction_sets() -> &'static DirectionSet {
    DIRECTION_SET.get_or_init(|| build_direction_set().expect("builtin direction sets invalid"))
}

impl DirectionSet {
    pub fn family(&self, j: i64) -> &DirectionFamily {
        &self.families[(j.rem_euclid(2)) as usize]
    }

    /// Exact spanning check: the six Id - xi xi^T of each family have rank 6.
    pub fn spans_sym3(&self) -> bool {
        self.families
            .iter()
            .all(|f| invert_reconstruction(&f.pairs.iter().map(|p| p.xi).collect::<Vec<_>>()).is_ok())
    }
}

/// Evaluate all twelve gamma_xi(R) = sqrt(c_xi(R)) for one family.
/// R must be symmetric with ||R - Id||_F <= c_star.
pub fn gamma_coeffs(set: &DirectionSet, family: i64, r: &[[f64; 3]; 3]) -> Result<Vec<f64>> {
    let dist = frobenius_dist_to_id(r);
    if dist > set.c_star_computed * (1.0 + 1e-12) {
        return Err(Error::beltrami(format!(
            "matrix outside admissibility ball: |R-Id| = {dist:.6} > c* = {:.6}",
            set.c_star_computed
        )));
    }
    let fam = set.family(family);
    let mut out = Vec::with_capacity(6);
    for p in &fam.pairs {
        let mut c = 0.25;
        for i in 0..3 {
            for j in 0..3 {
                let s = r[i][j] - if i == j { 1.0 } else { 0.0 };
                c += p.m_matrix[i][j] * s;
            }
        }
        if c < -1e-13 {
            return Err(Error::beltrami("negative coefficient inside the ball"));
        }
        out.push(c.max(0.0).sqrt());
    }
    Ok(out)
}

pub fn frobenius_dist_to_id(r: &[[f64; 3]; 3]) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let v = r[i][j] - if i == j { 1.0 } else { 0.0 };
            s += v * v;
        }
    }
    s.sqrt()
}

/// Reconstruction residual || 1/2 sum gamma^2 (Id - xi xi^T) - R ||_F.
pub fn reconstruction_error(set: &DirectionSet, family: i64, r: &[[f64; 3]; 3]) -> Result<f64> {
    let gammas = gamma_coeffs(set, family, r)?;
    let fam = set.family(family);
    let mut acc = [[0.0f64; 3]; 3];
    for (p, g) in fam.pairs.iter().zip(gammas.iter()) {
        let xi = p.xi.f64();
        // +-xi contribute identically, hence the pair factor 2 * 1/2 = 1
        for i in 0..3 {
            for j in 0..3 {
                let t = if i == j { 1.0 } else { 0.0 };
                acc[i][j] += g * g * (t - xi[i] * xi[j]);
            }
        }
    }
    let mut err = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            let d = acc[i][j] - r[i][j];
            err += d * d;
        }
    }
    Ok(err.sqrt())
}

/// Complex Beltrami plane wave W = B_xi e^(i lambda xi . x) as a single-mode
/// spectral field. Requires lambda xi in Z^3 and within the grid band.
pub fn wave(grid: PeriodicGrid, xi: &RatVec3, a_frame: &RatVec3, lambda: i64) -> Result<SpectralField> {
    let k = wave_vector(xi, lambda)?;
    let max = grid.max_wave();
    if k.iter().any(|c| c.abs() > max) {
        return Err(Error::beltrami(format!(
            "wave vector {k:?} outside grid band {max}"
        )));
    }
    let b = b_vector(xi, a_frame);
    let mut f = SpectralField::zeros(grid);
    let idx = mode_index(&grid, k);
    for c in 0..3 {
        f.hat[c][idx] = b[c];
    }
    f.divergence_free = true;
    f.mean_zero = true;
    Ok(f)
}

/// lambda * xi as an exact integer vector; errors when n_star does not
/// divide lambda.
pub fn wave_vector(xi: &RatVec3, lambda: i64) -> Result<[i64; 3]> {
    let mut k = [0i64; 3];
    for i in 0..3 {
        let num = lambda * xi.num[i];
        if num % xi.den != 0 {
            return Err(Error::beltrami(format!(
                "lambda {lambda} times xi is not an integer vector"
            )));
        }
        k[i] = num / xi.den;
    }
    Ok(k)
}

/// B_xi = (A + i xi x A) / sqrt(2).
pub fn b_vector(xi: &RatVec3, a_frame: &RatVec3) -> [Complex64; 3] {
    let xa = xi.cross(a_frame).f64();
    let af = a_frame.f64();
    let sq = 0.5f64.sqrt();
    std::array::from_fn(|i| Complex64::new(af[i] * sq, xa[i] * sq))
}

pub fn mode_index(grid: &PeriodicGrid, k: [i64; 3]) -> usize {
    let n = grid.n as i64;
    let m: [usize; 3] = std::array::from_fn(|i| k[i].rem_euclid(n) as usize);
    grid.idx(m[0], m[1], m[2])
}

/// Real linear combination sum_xi a_xi B_xi e^(i lambda xi.x) over the +-
/// pairs of a family (the coefficient of -xi is the conjugate).
pub fn real_combination(
    grid: PeriodicGrid,
    family: &DirectionFamily,
    coeffs: &[Complex64],
    lambda: i64,
) -> Result<SpectralField> {
    let mut f = SpectralField::zeros(grid);
    for (p, a) in family.pairs.iter().zip(coeffs.iter()) {
        let k = wave_vector(&p.xi, lambda)?;
        let max = grid.max_wave();
        if k.iter().any(|c| c.abs() > max) {
            return Err(Error::beltrami("wave vector outside grid band"));
        }
        let idx_p = mode_index(&grid, k);
        let idx_m = mode_index(&grid, [-k[0], -k[1], -k[2]]);
        let b = p.b_vec;
        for c in 0..3 {
            f.hat[c][idx_p] += a * b[c];
            f.hat[c][idx_m] += (a * b[c]).conj();
        }
    }
    f.divergence_free = true;
    f.mean_zero = true;
    Ok(f)
}

/// Numeric bound on max over families of sum_xi ||gamma_xi||_{C^n} over a
/// sampled Frobenius ball. For n >= 1 the ball is shrunk slightly because the
/// computed radius touches the zero set of the coefficients.
pub fn measure_universal_m(n: u32) -> Result<f64> {
    measure_universal_m_radius(n, None)
}

pub fn measure_universal_m_radius(n: u32, radius: Option<f64>) -> Result<f64> {
    if n > 4 {
        return Err(Error::beltrami("derivative order capped at 4"));
    }
    let set = direction_sets();
    let r_ball = radius.unwrap_or(if n == 0 {
        set.c_star_computed
    } else {
        set.c_star_computed * (1.0 - 1.0 / 16.0)
    });
    let mut rng = DetRng::new(0xB17A);
    let mut worst_family = 0.0f64;
    for fam_idx in 0..2 {
        let fam = &set.families[fam_idx];
        let mut sum = 0.0;
        for p in &fam.pairs {
            // per-pair sup over sampled ball of sum_{j<=n} |d^j gamma|
            let mut sup = 0.0f64;
            for s in 0..512 {
                let r = if s == 0 {
                    identity()
                } else {
                    random_ball_matrix(&mut rng, r_ball)
                };
                let mut c = 0.25;
                for i in 0..3 {
                    for j in 0..3 {
                        c += p.m_matrix[i][j] * (r[i][j] - if i == j { 1.0 } else { 0.0 });
                    }
                }
                if c <= 0.0 {
                    continue;
                }
                let mut val = c.sqrt();
                let mut binom: f64 = 0.5; // d/dt sqrt(c + t m): first coefficient
                let mf = p.m_frobenius;
                for j in 1..=n {
                    val += binom.abs() * mf.powi(j as i32) * c.powf(0.5 - j as f64);
                    binom *= 0.5 - j as f64;
                }
                sup = sup.max(val);
            }
            // both signs of the pair carry the same gamma
            sum += 2.0 * sup;
        }
        worst_family = worst_family.max(sum);
    }
    Ok(worst_family)
}

fn identity() -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    for i in 0..3 {
        m[i][i] = 1.0;
    }
    m
}

/// Uniform random symmetric matrix in the Frobenius ball around Id.
pub fn random_ball_matrix(rng: &mut DetRng, radius: f64) -> [[f64; 3]; 3] {
    // direction uniform on the 6-dim sphere, radius by u^(1/6)
    let mut v = [0.0f64; 6];
    let mut norm2 = 0.0;
    for x in v.iter_mut() {
        *x = rng.normal();
        norm2 += *x * *x;
    }
    let scale = radius * rng.uniform().powf(1.0 / 6.0) / norm2.sqrt().max(1e-300);
    let mut m = identity();
    for (slot, (i, j)) in SYM6.iter().enumerate() {
        // off-diagonal slots carry weight 2 in the Frobenius norm
        let w = if i == j { 1.0 } else { 0.5f64.sqrt() };
        let val = v[slot] * scale * w;
        if i == j {
            m[*i][*j] += val;
        } else {
            m[*i][*j] += val;
            m[*j][*i] += val;
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::ops::curl;

    #[test]
    fn families_validate() {
        let set = direction_sets();
        assert_eq!(set.n_star, 5);
        assert!(set.c_star_computed > 0.0);
        assert!(set.spans_sym3());
        for fam in &set.families {
            assert_eq!(fam.signed_directions().len(), 12);
            for (xi, a) in fam.signed_directions() {
                assert!(xi.is_unit());
                assert!(xi.dot(&a).is_zero());
            }
        }
    }

    #[test]
    fn closure_under_negation() {
        let set = direction_sets();
        for fam in &set.families {
            let dirs: Vec<RatVec3> = fam.signed_directions().iter().map(|(x, _)| *x).collect();
            for d in &dirs {
                assert!(dirs.contains(&d.neg()));
            }
        }
    }

    #[test]
    fn frame_example() {
        // xi = (3/5, 4/5, 0), A = (-4/5, 3/5, 0): exact orthogonality
        let xi = RatVec3::new([3, 4, 0], 5);
        let a = RatVec3::new([-4, 3, 0], 5);
        assert!(xi.dot(&a).is_zero());
        assert!(xi.is_unit() && a.is_unit());
    }

    #[test]
    fn b_vector_axis_example() {
        // xi = (1,0,0), A = (0,1,0): B = (0, 1, i)/sqrt(2) and i xi x B = B
        let xi = RatVec3::new([1, 0, 0], 1);
        let a = RatVec3::new([0, 1, 0], 1);
        let b = b_vector(&xi, &a);
        let s = 0.5f64.sqrt();
        assert!((b[0] - Complex64::new(0.0, 0.0)).norm() < 1e-15);
        assert!((b[1] - Complex64::new(s, 0.0)).norm() < 1e-15);
        assert!((b[2] - Complex64::new(0.0, s)).norm() < 1e-15);
        // e1 x B = (0, -B3, B2), so i e1 x B = (0, -i B3, i B2) must equal B
        let i = Complex64::new(0.0, 1.0);
        assert!((-i * b[2] - b[1]).norm() < 1e-15);
        assert!((i * b[1] - b[2]).norm() < 1e-15);
        // B . xi = 0 and |B| = 1
        assert!(b[0].norm() < 1e-15);
        let norm2: f64 = b.iter().map(|c| c.norm_sqr()).sum();
        assert!((norm2 - 1.0).abs() < 1e-15);
    }

    #[test]
    fn wave_is_curl_eigenfunction() {
        let grid = PeriodicGrid::new(32).unwrap();
        let set = direction_sets();
        let lambda = 2 * set.n_star;
        for p in &set.families[0].pairs {
            let w = wave(grid, &p.xi, &p.a_frame, lambda).unwrap();
            let cw = curl(&w);
            let mut err = 0.0f64;
            for c in 0..3 {
                for (a, b) in cw.hat[c].iter().zip(w.hat[c].iter()) {
                    err = err.max((a - b * lambda as f64).norm());
                }
            }
            assert!(err < 1e-13, "curl defect {err}");
        }
    }

    #[test]
    fn wave_negation_conjugates() {
        let grid = PeriodicGrid::new(32).unwrap();
        let set = direction_sets();
        let p = &set.families[0].pairs[0];
        let wp = wave(grid, &p.xi, &p.a_frame, 5).unwrap();
        let wm = wave(grid, &p.xi.neg(), &p.a_frame, 5).unwrap();
        // field of -xi is the pointwise conjugate of the field of xi
        let pp = wp.to_physical_complex_all();
        let pm = wm.to_physical_complex_all();
        for c in 0..3 {
            for (a, b) in pp[c].iter().zip(pm[c].iter()) {
                assert!((a.conj() - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn gamma_at_identity_is_half() {
        let set = direction_sets();
        let id = identity();
        for fam in 0..2 {
            let g = gamma_coeffs(set, fam, &id).unwrap();
            for v in g {
                assert!((v - 0.5).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn reconstruction_on_random_ball() {
        let set = direction_sets();
        let mut rng = DetRng::new(42);
        for _ in 0..200 {
            let r = random_ball_matrix(&mut rng, set.c_star_computed);
            for fam in 0..2 {
                let err = reconstruction_error(set, fam, &r).unwrap();
                assert!(err < 1e-12, "reconstruction error {err}");
            }
        }
    }

    #[test]
    fn boundary_touches_zero_only_at_radius() {
        let set = direction_sets();
        // walk towards the worst direction of the first pair
        let p = &set.families[0].pairs[0];
        let mut worst = identity();
        for i in 0..3 {
            for j in 0..3 {
                worst[i][j] -= p.m_matrix[i][j] / p.m_frobenius * set.c_star_computed;
            }
        }
        let g = gamma_coeffs(set, 0, &worst).unwrap();
        assert!(g.iter().all(|v| *v >= 0.0));
        // outside the ball must error
        let mut outside = identity();
        for i in 0..3 {
            for j in 0..3 {
                outside[i][j] -= p.m_matrix[i][j] / p.m_frobenius * (set.c_star_computed * 1.5);
            }
        }
        assert!(gamma_coeffs(set, 0, &outside).is_err());
    }

    #[test]
    fn universal_m_bounds() {
        let m0 = measure_universal_m(0).unwrap();
        assert!(m0 >= 6.0 - 1e-12, "Sigma gamma at Id already gives 6, got {m0}");
        let small = measure_universal_m_radius(0, Some(direction_sets().c_star_computed / 2.0)).unwrap();
        assert!(small <= m0 + 1e-12);
        let m1 = measure_universal_m(1).unwrap();
        assert!(m1.is_finite() && m1 > m0);
    }

    #[test]
    fn n_star_divides_wave_frequencies() {
        let xi = RatVec3::new([3, 4, 0], 5);
        assert!(wave_vector(&xi, 5).is_ok());
        assert!(wave_vector(&xi, 10).is_ok());
        assert!(wave_vector(&xi, 7).is_err());
    }
}
