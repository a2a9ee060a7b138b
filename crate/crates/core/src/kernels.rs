//! Dense matrix utilities shared by the manifold, connection and solver code.
//!
//! Everything here works on small dense `f64` matrices (`n` up to a few hundred)
//! and is a pure function of its inputs.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Dense real matrix used for every ambient-space object.
pub type Mat = DMatrix<f64>;

/// Eigendecomposition `S = Q diag(λ) Qᵀ` of a symmetric matrix with
/// eigenvalues sorted ascending.
#[derive(Debug, Clone)]
pub struct SymEigResult {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: Mat,
}

impl SymEigResult {
    /// `Q diag(f(λ)) Qᵀ`.
    pub fn map_spectrum(&self, f: impl Fn(f64) -> f64) -> Mat {
        let q = &self.eigenvectors;
        let mut scaled = q.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= f(self.eigenvalues[j]);
        }
        scaled * q.transpose()
    }
}

pub(crate) fn ensure_square(s: &Mat) -> Result<()> {
    if s.nrows() != s.ncols() {
        return Err(Error::NonSquare {
            rows: s.nrows(),
            cols: s.ncols(),
        });
    }
    Ok(())
}

pub(crate) fn ensure_finite(s: &Mat) -> Result<()> {
    if s.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

pub(crate) fn ensure_shape(s: &Mat, rows: usize, cols: usize) -> Result<()> {
    if s.shape() != (rows, cols) {
        return Err(Error::ShapeMismatch {
            expected: (rows, cols),
            found: s.shape(),
        });
    }
    Ok(())
}

/// Rejects matrices whose asymmetry exceeds `1e-12` relative to their norm.
pub(crate) fn ensure_symmetric(s: &Mat) -> Result<()> {
    ensure_square(s)?;
    let defect = (s - s.transpose()).norm();
    if defect > 1e-12 * s.norm().max(1.0) {
        return Err(Error::NotSymmetric { defect });
    }
    Ok(())
}

pub(crate) fn sym_part(s: &Mat) -> Mat {
    (s + s.transpose()) * 0.5
}

pub(crate) fn skew_part(s: &Mat) -> Mat {
    (s - s.transpose()) * 0.5
}

/// Symmetric part `(S + Sᵀ)/2`.
pub fn sym(s: &Mat) -> Result<Mat> {
    ensure_square(s)?;
    ensure_finite(s)?;
    Ok(sym_part(s))
}

/// Skew-symmetric part `(S − Sᵀ)/2`.
pub fn skew(s: &Mat) -> Result<Mat> {
    ensure_square(s)?;
    ensure_finite(s)?;
    Ok(skew_part(s))
}

/// Eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eig(s: &Mat) -> Result<SymEigResult> {
    ensure_finite(s)?;
    ensure_symmetric(s)?;
    let eig = nalgebra::SymmetricEigen::new(sym_part(s));
    let n = s.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let eigenvalues = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut eigenvectors = Mat::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        eigenvectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok(SymEigResult {
        eigenvalues,
        eigenvectors,
    })
}

const PADE13: [f64; 14] = [
    64_764_752_532_480_000.0,
    32_382_376_266_240_000.0,
    7_771_770_303_897_600.0,
    1_187_353_796_428_800.0,
    129_060_195_264_000.0,
    10_559_470_521_600.0,
    670_442_572_800.0,
    33_522_128_640.0,
    1_323_241_920.0,
    40_840_800.0,
    960_960.0,
    16_380.0,
    182.0,
    1.0,
];

// Largest 1-norm for which the unscaled [13/13] approximant is accurate to unit roundoff.
const THETA13: f64 = 5.371_920_351_148_152;

fn one_norm(s: &Mat) -> f64 {
    s.column_iter()
        .map(|c| c.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Matrix exponential by scaling and squaring with the degree-13 Padé approximant.
pub fn mat_exp(s: &Mat) -> Result<Mat> {
    ensure_square(s)?;
    ensure_finite(s)?;
    let n = s.nrows();
    if n == 0 {
        return Ok(Mat::zeros(0, 0));
    }

    let norm = one_norm(s);
    let squarings = if norm > THETA13 {
        (norm / THETA13).log2().ceil().max(0.0) as i32
    } else {
        0
    };
    let a = s * 2f64.powi(-squarings);

    let b = &PADE13;
    let ident = Mat::identity(n, n);
    let a2 = &a * &a;
    let a4 = &a2 * &a2;
    let a6 = &a4 * &a2;

    let u_inner = &a6 * (&a6 * b[13] + &a4 * b[11] + &a2 * b[9])
        + &a6 * b[7]
        + &a4 * b[5]
        + &a2 * b[3]
        + &ident * b[1];
    let u = &a * u_inner;
    let v = &a6 * (&a6 * b[12] + &a4 * b[10] + &a2 * b[8])
        + &a6 * b[6]
        + &a4 * b[4]
        + &a2 * b[2]
        + &ident * b[0];

    let numer = &v + &u;
    let denom = &v - &u;
    let mut r = denom
        .lu()
        .solve(&numer)
        .ok_or(Error::Singular("Pade denominator"))?;
    for _ in 0..squarings {
        r = &r * &r;
    }
    ensure_finite(&r)?;
    Ok(r)
}

/// Solves `S U + U S = R` for symmetric `U`, with `S` symmetric positive definite
/// and `R` symmetric.
///
/// `S` is diagonalized as `Q Λ Qᵀ`; in that basis the equation decouples into
/// `Ũ_ij = R̃_ij / (λ_i + λ_j)`.
pub fn solve_lyapunov(s: &Mat, r: &Mat) -> Result<Mat> {
    ensure_finite(r)?;
    ensure_symmetric(r)?;
    let eig = sym_eig(s)?;
    ensure_shape(r, s.nrows(), s.ncols())?;
    let lambda_min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if s.nrows() > 0 && lambda_min <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            eigenvalue: lambda_min,
        });
    }
    let q = &eig.eigenvectors;
    let mut rt = q.transpose() * r * q;
    let lam = &eig.eigenvalues;
    for j in 0..rt.ncols() {
        for i in 0..rt.nrows() {
            rt[(i, j)] /= lam[i] + lam[j];
        }
    }
    Ok(sym_part(&(q * rt * q.transpose())))
}

pub(crate) fn rng_from_seed(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Matrix with independent standard normal entries drawn from `rng`.
pub fn random_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Mat {
    // Column-major fill so the draw order matches the storage order.
    Mat::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample(StandardNormal)))
}

/// Orthogonal matrix from the QR factorization of a seeded Gaussian matrix, with
/// the signs fixed so that `R` has a positive diagonal.
pub fn random_orthogonal(n: usize, seed: u64) -> Mat {
    let mut rng = rng_from_seed(seed);
    let g = random_normal(n, n, &mut rng);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < 0.0 {
            let mut col = q.column_mut(j);
            col.neg_mut();
        }
    }
    q
}

/// Well-conditioned symmetric positive definite matrix: `BᵀB + n I` for seeded
/// Gaussian `B`, divided by its largest eigenvalue.
pub fn random_spd(n: usize, seed: u64) -> Mat {
    let mut rng = rng_from_seed(seed);
    let b = random_normal(n, n, &mut rng);
    let m = b.transpose() * &b + Mat::identity(n, n) * n as f64;
    let m = sym_part(&m);
    let top = nalgebra::SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(0.0, f64::max);
    m / top
}
