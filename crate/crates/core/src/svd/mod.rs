//! Thin SVD of snapshot matrices, rank truncation, and singular spectra.
//!
//! Two independent routes produce [`SvdFactors`]: [`svd_thin`] runs one-sided Jacobi
//! rotations directly on the matrix, [`svd_gram`] eigen-decomposes the small `K x K` Gram
//! matrix (the method of snapshots) and only ever stores `J x K` and `K x K` arrays.

mod io;
mod symeig;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    decode_factors, encode_factors, read_factors, spectrum_csv, write_factors, write_spectrum_csv,
    FACTORS_MAGIC, FACTORS_VERSION,
};
pub use symeig::symmetric_eigen;

/// Singular values at or below `sigma_1 * GRAM_RANK_CUTOFF` are dropped by [`svd_gram`].
pub const GRAM_RANK_CUTOFF: f64 = 1e-12;

/// Singular values at or below `sigma_1 * NUMERICAL_ZERO` never count toward the
/// Gavish-Donoho rank, so round-off in noise-free input is not mistaken for signal.
pub const NUMERICAL_ZERO: f64 = 1e-6;

const JACOBI_TOLERANCE: f64 = 1e-15;
const JACOBI_MAX_SWEEPS: usize = 80;

/// `V = W diag(sigma) T^T` with column-orthonormal `W` (J x r) and `T` (K x r).
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    left: DMatrix<f64>,
    sigma: Vec<f64>,
    right: DMatrix<f64>,
    source_shape: (usize, usize),
}

impl SvdFactors {
    /// Checks shapes and that the singular values are finite, nonnegative and nonincreasing.
    pub fn new(
        left: DMatrix<f64>,
        sigma: Vec<f64>,
        right: DMatrix<f64>,
        source_shape: (usize, usize),
    ) -> Result<Self> {
        let r = sigma.len();
        let (j, k) = source_shape;
        if left.shape() != (j, r) || right.shape() != (k, r) {
            return Err(Error::Format(format!(
                "factor shapes W {:?} / T {:?} do not fit source {j}x{k} with rank {r}",
                left.shape(),
                right.shape()
            )));
        }
        if let Some(s) = sigma.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Format(format!("invalid singular value {s}")));
        }
        if let Some(w) = sigma.windows(2).position(|w| w[0] < w[1]) {
            return Err(Error::Format(format!(
                "singular values not sorted: sigma[{}] = {} < sigma[{}] = {}",
                w,
                sigma[w],
                w + 1,
                sigma[w + 1]
            )));
        }
        Ok(SvdFactors {
            left,
            sigma,
            right,
            source_shape,
        })
    }

    pub fn left_vectors(&self) -> &DMatrix<f64> {
        &self.left
    }

    pub fn right_vectors(&self) -> &DMatrix<f64> {
        &self.right
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.sigma
    }

    pub fn source_shape(&self) -> (usize, usize) {
        self.source_shape
    }

    pub fn rank(&self) -> usize {
        self.sigma.len()
    }

    pub fn into_parts(self) -> (DMatrix<f64>, Vec<f64>, DMatrix<f64>) {
        (self.left, self.sigma, self.right)
    }

    /// `W diag(sigma) T^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut scaled = self.left.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(&self.sigma) {
            col *= *s;
        }
        scaled * self.right.transpose()
    }

    /// Largest deviation of `W^T W` and `T^T T` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let r = self.rank();
        let eye = DMatrix::<f64>::identity(r, r);
        let w = (self.left.tr_mul(&self.left) - &eye).amax();
        let t = (self.right.tr_mul(&self.right) - &eye).amax();
        w.max(t)
    }

    /// Keeps the leading `rank` triplets.
    fn leading(&self, rank: usize) -> SvdFactors {
        SvdFactors {
            left: self.left.columns(0, rank).into_owned(),
            sigma: self.sigma[..rank].to_vec(),
            right: self.right.columns(0, rank).into_owned(),
            source_shape: self.source_shape,
        }
    }
}

fn check_input(matrix: &DMatrix<f64>) -> Result<()> {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return Err(Error::Format(format!(
            "cannot decompose an empty {}x{} matrix",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    if matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("matrix has non-finite entries".into()));
    }
    Ok(())
}

/// Flips each pair so the largest-magnitude entry of `w_j` is nonnegative (first index on ties).
fn fix_signs(left: &mut DMatrix<f64>, right: &mut DMatrix<f64>) {
    for j in 0..left.ncols() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in left.column(j).iter() {
            if x.abs() > best {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            left.column_mut(j).neg_mut();
            right.column_mut(j).neg_mut();
        }
    }
}

/// Extends the zero columns of `basis` (those at `missing`) to an orthonormal set by
/// Gram-Schmidt against the canonical directions.
fn complete_orthonormal(basis: &mut DMatrix<f64>, missing: &[usize]) {
    let n = basis.nrows();
    let mut canonical = 0;
    for &j in missing {
        while canonical < n {
            let mut v = DVector::<f64>::zeros(n);
            v[canonical] = 1.0;
            canonical += 1;
            for _ in 0..2 {
                for c in 0..basis.ncols() {
                    if c != j {
                        let col = basis.column(c);
                        let d = col.dot(&v);
                        v.axpy(-d, &col, 1.0);
                    }
                }
            }
            let norm = v.norm();
            if norm > 1e-8 {
                basis.set_column(j, &(v / norm));
                break;
            }
        }
    }
}

/// Thin SVD by one-sided Jacobi rotations; `r = min(J, K)` triplets.
pub fn svd_thin(matrix: &DMatrix<f64>) -> Result<SvdFactors> {
    check_input(matrix)?;
    let (j, k) = matrix.shape();
    if j < k {
        let t = svd_thin(&matrix.transpose())?;
        let (w, s, v) = t.into_parts();
        let (mut left, mut right) = (v, w);
        fix_signs(&mut left, &mut right);
        return SvdFactors::new(left, s, right, (j, k));
    }

    let mut u = matrix.clone();
    let mut v = DMatrix::<f64>::identity(k, k);
    jacobi_orthogonalize(&mut u, &mut v)?;

    let norms: Vec<f64> = u.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut left = DMatrix::<f64>::zeros(j, k);
    let mut right = DMatrix::<f64>::zeros(k, k);
    let mut sigma = Vec::with_capacity(k);
    let mut missing = Vec::new();
    for (dst, &src) in order.iter().enumerate() {
        let s = norms[src];
        if s > 0.0 && s.is_normal() {
            left.set_column(dst, &(u.column(src) / s));
            sigma.push(s);
        } else {
            missing.push(dst);
            sigma.push(0.0);
        }
        right.set_column(dst, &v.column(src));
    }
    complete_orthonormal(&mut left, &missing);
    fix_signs(&mut left, &mut right);
    SvdFactors::new(left, sigma, right, (j, k))
}

/// Rotates column pairs of `u` until they are mutually orthogonal, applying the same
/// rotations to `v`.
///
/// A pair counts as orthogonal once `|u_p . u_q| <= tol * |u_p| |u_q|` with
/// `tol = max(JACOBI_TOLERANCE, J * eps)`, the rounding level of a length-`J` dot product.
/// Squared column norms are refreshed every sweep and updated in closed form after each
/// rotation.
fn jacobi_orthogonalize(u: &mut DMatrix<f64>, v: &mut DMatrix<f64>) -> Result<()> {
    let k = u.ncols();
    if k < 2 {
        return Ok(());
    }
    let tol = JACOBI_TOLERANCE.max(u.nrows() as f64 * f64::EPSILON);
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut norms: Vec<f64> = u.column_iter().map(|c| c.norm_squared()).collect();
        let mut rotated = false;
        for p in 0..k - 1 {
            for q in p + 1..k {
                let (alpha, beta) = (norms[p], norms[q]);
                let gamma = u.column(p).dot(&u.column(q));
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_columns(u, p, q, c, s);
                rotate_columns(v, p, q, c, s);
                norms[p] = (alpha - t * gamma).max(0.0);
                norms[q] = beta + t * gamma;
            }
        }
        if !rotated {
            return Ok(());
        }
    }
    Err(Error::Decomposition(format!(
        "one-sided Jacobi did not converge in {JACOBI_MAX_SWEEPS} sweeps"
    )))
}

#[inline]
fn rotate_columns(m: &mut DMatrix<f64>, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.nrows();
    let data = m.as_mut_slice();
    let (head, tail) = data.split_at_mut(q * rows);
    let cp = &mut head[p * rows..(p + 1) * rows];
    let cq = &mut tail[..rows];
    for (a, b) in cp.iter_mut().zip(cq.iter_mut()) {
        let (x, y) = (*a, *b);
        *a = c * x - s * y;
        *b = s * x + c * y;
    }
}

/// Method of snapshots: eigen-decomposes `V^T V` and lifts the eigenvectors back through `V`.
///
/// The lifted columns `V T` are already nearly orthogonal; a few Jacobi sweeps over them
/// restore full orthonormality and relative accuracy of the small singular values, which
/// squaring into the Gram matrix would otherwise lose. Triplets with
/// `sigma_j <= sigma_1 * GRAM_RANK_CUTOFF` are dropped, so the returned rank may be below `K`
/// for rank-deficient input.
pub fn svd_gram(matrix: &DMatrix<f64>) -> Result<SvdFactors> {
    check_input(matrix)?;
    let (j, k) = matrix.shape();
    if j < k {
        return Err(Error::Bounds(format!(
            "method of snapshots needs J >= K, got {j}x{k}"
        )));
    }
    let gram = matrix.tr_mul(matrix);
    let (_, mut vectors) = symmetric_eigen(&gram)?;
    let mut lifted = matrix * &vectors;
    jacobi_orthogonalize(&mut lifted, &mut vectors)?;

    let norms: Vec<f64> = lifted.column_iter().map(|c| c.norm()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let cutoff = norms[order[0]] * GRAM_RANK_CUTOFF;
    let rank = order
        .iter()
        .take_while(|&&c| norms[c] > cutoff && norms[c].is_normal())
        .count();

    let mut left = DMatrix::<f64>::zeros(j, rank);
    let mut right = DMatrix::<f64>::zeros(k, rank);
    let mut sigma = Vec::with_capacity(rank);
    for (dst, &src) in order[..rank].iter().enumerate() {
        left.set_column(dst, &(lifted.column(src) / norms[src]));
        right.set_column(dst, &vectors.column(src));
        sigma.push(norms[src]);
    }
    fix_signs(&mut left, &mut right);
    SvdFactors::new(left, sigma, right, (j, k))
}

/// Picks [`svd_gram`] for tall matrices (`J > 4K`) and [`svd_thin`] otherwise.
pub fn svd_auto(matrix: &DMatrix<f64>) -> Result<SvdFactors> {
    if matrix.nrows() > 4 * matrix.ncols() {
        svd_gram(matrix)
    } else {
        svd_thin(matrix)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TruncationRule {
    FixedRank(usize),
    EnergyTolerance(f64),
    GavishDonoho,
}

impl TruncationRule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TruncationRule::FixedRank(0) => Err(Error::Bounds("fixed rank must be >= 1".into())),
            TruncationRule::EnergyTolerance(eps) if !(eps > 0.0 && eps < 1.0) => Err(
                Error::Config(format!("energy tolerance must be in (0, 1), got {eps}")),
            ),
            _ => Ok(()),
        }
    }

    /// Short tag used in arm names and file suffixes.
    pub fn tag(&self) -> String {
        match self {
            TruncationRule::FixedRank(r) => format!("r{r}"),
            TruncationRule::EnergyTolerance(eps) => format!("tol{eps}"),
            TruncationRule::GavishDonoho => "gavish".into(),
        }
    }
}

impl std::fmt::Display for TruncationRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TruncationRule::FixedRank(r) => write!(f, "fixed_rank({r})"),
            TruncationRule::EnergyTolerance(eps) => write!(f, "energy_tolerance({eps})"),
            TruncationRule::GavishDonoho => f.write_str("gavish_donoho"),
        }
    }
}

/// Smallest `r'` whose relative Frobenius residual `sqrt(sum_{j>r'} sigma_j^2 / sum sigma_j^2)`
/// is at most `tolerance`.
pub fn energy_rank(sigma: &[f64], tolerance: f64) -> usize {
    let total: f64 = sigma.iter().map(|s| s * s).sum();
    if total == 0.0 {
        return 1.min(sigma.len());
    }
    // tail[i] = sum of sigma_j^2 for j >= i, accumulated from the small end
    let mut tail = vec![0.0; sigma.len() + 1];
    for i in (0..sigma.len()).rev() {
        tail[i] = tail[i + 1] + sigma[i] * sigma[i];
    }
    (1..=sigma.len())
        .find(|&r| (tail[r] / total).sqrt() <= tolerance)
        .unwrap_or(sigma.len())
}

pub fn truncate(factors: &SvdFactors, rule: TruncationRule) -> Result<SvdFactors> {
    rule.validate()?;
    let available = factors.rank();
    let rank = match rule {
        TruncationRule::FixedRank(r) => {
            if r > available {
                return Err(Error::Bounds(format!(
                    "rank {r} exceeds the {available} available factors"
                )));
            }
            r
        }
        TruncationRule::EnergyTolerance(eps) => energy_rank(&factors.sigma, eps),
        TruncationRule::GavishDonoho => gavish_donoho_rank(factors),
    };
    Ok(factors.leading(rank))
}

/// Cubic approximation of the unknown-noise optimal hard-threshold coefficient.
pub fn gavish_donoho_omega(beta: f64) -> f64 {
    0.56 * beta.powi(3) - 0.95 * beta.powi(2) + 1.82 * beta + 1.43
}

/// Median of the `min(J, K)` singular values, counting factors dropped as zero.
fn median_singular_value(factors: &SvdFactors) -> f64 {
    let (j, k) = factors.source_shape;
    let n = j.min(k).max(factors.rank());
    let mut values = factors.sigma.clone();
    values.resize(n, 0.0);
    values.sort_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Number of singular values above `omega(beta) * sigma_med`, at least 1.
///
/// `beta = min(J, K) / max(J, K)` of the source matrix. Values at the numerical noise floor
/// (`sigma_1 * NUMERICAL_ZERO`) are not counted, which matters only for noise-free input.
pub fn gavish_donoho_rank(factors: &SvdFactors) -> usize {
    if factors.rank() == 0 {
        return 1;
    }
    let (j, k) = factors.source_shape;
    let beta = j.min(k) as f64 / j.max(k) as f64;
    let tau = gavish_donoho_omega(beta) * median_singular_value(factors);
    let floor = factors.sigma[0] * NUMERICAL_ZERO;
    let threshold = tau.max(floor);
    factors
        .sigma
        .iter()
        .filter(|&&s| s > threshold)
        .count()
        .clamp(1, factors.rank())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectrumPoint {
    /// 1-based index.
    pub index: usize,
    pub sigma: f64,
    pub cumulative_energy: f64,
}

pub fn singular_spectrum(factors: &SvdFactors) -> Vec<SpectrumPoint> {
    let n = factors.rank();
    let mut prefix = Vec::with_capacity(n);
    let mut acc = 0.0;
    for s in &factors.sigma {
        acc += s * s;
        prefix.push(acc);
    }
    let total = acc;
    factors
        .sigma
        .iter()
        .zip(prefix)
        .enumerate()
        .map(|(i, (&sigma, p))| SpectrumPoint {
            index: i + 1,
            sigma,
            cumulative_energy: if total > 0.0 {
                p / total
            } else {
                (i + 1) as f64 / n as f64
            },
        })
        .collect()
}
