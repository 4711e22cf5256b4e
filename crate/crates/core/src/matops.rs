//! Rank-revealing orthogonal kernels.
//!
//! Every condensed form in this crate is assembled from the handful of
//! operations here: SVD-based row and column compressions, orthonormal
//! nullspace bases, a real Schur form with standardized 2x2 blocks, and a
//! QR based evaluation of `B^-1 A C^-1` that never forms an explicit inverse.
//!
//! Rank decisions go through a single [`RankTolerance`] so that all stages of
//! a multi-stage reduction agree on block sizes.

use std::ops::Range;

use nalgebra::{DMatrix, Schur, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Numerical rank policy.
///
/// A singular value `s` of `M` counts toward the rank when
/// `s > max(absolute, relative * s_max(M) * max(rows, cols))`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankTolerance {
    pub relative: f64,
    pub absolute: f64,
}

impl Default for RankTolerance {
    fn default() -> Self {
        Self {
            relative: 1e-10,
            absolute: 1e-14,
        }
    }
}

impl RankTolerance {
    pub fn new(relative: f64, absolute: f64) -> Result<Self> {
        if !(relative >= 0.0 && absolute >= 0.0) || !relative.is_finite() || !absolute.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "rank tolerance must be finite and nonnegative (relative {relative}, absolute {absolute})"
            )));
        }
        Ok(Self { relative, absolute })
    }

    pub fn threshold_for(&self, sigma_max: f64, rows: usize, cols: usize) -> f64 {
        let dim = rows.max(cols) as f64;
        self.absolute.max(self.relative * sigma_max * dim)
    }

    /// Effective threshold for `m`.
    pub fn threshold(&self, m: &Matrix) -> f64 {
        let smax = singular_values(m).first().copied().unwrap_or(0.0);
        self.threshold_for(smax, m.nrows(), m.ncols())
    }
}

/// A square matrix with orthonormal rows and columns.
#[derive(Clone, Debug, PartialEq)]
pub struct OrthogonalFactor(Matrix);

impl OrthogonalFactor {
    pub fn identity(n: usize) -> Self {
        Self(Matrix::identity(n, n))
    }

    /// Wraps `m` without checking. Callers construct `m` from orthogonal
    /// building blocks; [`OrthogonalFactor::defect`] reports the deviation.
    pub(crate) fn from_matrix_unchecked(m: Matrix) -> Self {
        debug_assert!(m.is_square());
        Self(m)
    }

    /// Checked constructor: `||Q^T Q - I||_F <= 1e-12 * dim`.
    pub fn new(m: Matrix) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::Dimension(format!(
                "orthogonal factor must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        let f = Self(m);
        let bound = 1e-12 * (f.dim().max(1) as f64);
        if f.defect() > bound {
            return Err(Error::InvalidArgument(format!(
                "matrix is not orthogonal (defect {:.3e} > {:.3e})",
                f.defect(),
                bound
            )));
        }
        Ok(f)
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `||Q^T Q - I||_F`.
    pub fn defect(&self) -> f64 {
        let n = self.dim();
        (self.0.transpose() * &self.0 - Matrix::identity(n, n)).norm()
    }

    /// `diag(self, I_k)`.
    pub fn embed_leading(&self, total: usize) -> Self {
        Self(block_diag(&[
            &self.0,
            &Matrix::identity(total - self.dim(), total - self.dim()),
        ]))
    }

    /// `diag(I_k, self)`.
    pub fn embed_trailing(&self, total: usize) -> Self {
        Self(block_diag(&[
            &Matrix::identity(total - self.dim(), total - self.dim()),
            &self.0,
        ]))
    }
}

/// Where the nonzero (full-rank) part of a compressed matrix ends up.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Placement {
    /// Top rows for a row compression, left columns for a column compression.
    Leading,
    /// Bottom rows for a row compression, right columns for a column compression.
    Trailing,
}

/// Full singular value decomposition `M = U diag(sigma) V^T` with square `U`,
/// `V` and singular values sorted in decreasing order.
#[derive(Clone, Debug)]
pub struct FullSvd {
    pub u: Matrix,
    pub sigma: Vec<f64>,
    pub v: Matrix,
}

impl FullSvd {
    pub fn rank(&self, tol: &RankTolerance) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        let thr = tol.threshold_for(smax, self.u.nrows(), self.v.nrows());
        self.sigma.iter().filter(|&&s| s > thr).count()
    }

    /// Rank of a block cut from a larger matrix of spectral norm `scale`.
    pub fn rank_at(&self, scale: f64, tol: &RankTolerance) -> usize {
        let smax = self.sigma.first().copied().unwrap_or(0.0);
        let thr = tol.threshold_for(scale.max(smax), self.u.nrows(), self.v.nrows());
        self.sigma.iter().filter(|&&s| s > thr).count()
    }
}

/// One-sided Jacobi SVD of a matrix with `rows >= cols`: returns `A V` with
/// mutually orthogonal columns and the accumulated rotations `V`.
fn jacobi_sweeps(a: &Matrix) -> (Matrix, Matrix) {
    let n = a.ncols();
    let mut w = a.clone();
    let mut v = Matrix::identity(n, n);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma == 0.0 || gamma.abs() <= f64::EPSILON * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (x, y) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * x - s * y;
                        mat[(i, q)] = s * x + c * y;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    (w, v)
}

/// Thin SVD `(U, sigma, V)` with decreasing `sigma`; columns of `U` whose
/// singular value is exactly zero are omitted.
fn jacobi_svd(m: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
    let wide = m.nrows() < m.ncols();
    let work = if wide { m.transpose() } else { m.clone() };
    let (w, v) = jacobi_sweeps(&work);
    let k = w.ncols();
    let mut order: Vec<usize> = (0..k).collect();
    let norms: Vec<f64> = (0..k).map(|j| w.column(j).norm()).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j]).collect();
    let nz = sigma.iter().filter(|&&s| s > 0.0).count();
    let left = Matrix::from_fn(work.nrows(), nz, |r, c| w[(r, order[c])] / norms[order[c]]);
    let right = Matrix::from_fn(v.nrows(), k, |r, c| v[(r, order[c])]);
    if wide {
        // m^T = left diag right^T, so m = right diag left^T
        (right, sigma, left)
    } else {
        (left, sigma, right)
    }
}

/// Singular values in decreasing order. Empty matrices have none.
pub fn singular_values(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    jacobi_svd(m).1
}

pub fn svd_full(m: &Matrix) -> FullSvd {
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return FullSvd {
            u: Matrix::identity(rows, rows),
            sigma: Vec::new(),
            v: Matrix::identity(cols, cols),
        };
    }
    let (u, sigma, v) = jacobi_svd(m);
    FullSvd {
        u: complete_orthonormal(&u),
        sigma,
        v: complete_orthonormal(&v),
    }
}

pub fn rank(m: &Matrix, tol: &RankTolerance) -> usize {
    let s = singular_values(m);
    let smax = s.first().copied().unwrap_or(0.0);
    let thr = tol.threshold_for(smax, m.nrows(), m.ncols());
    s.iter().filter(|&&x| x > thr).count()
}

/// Householder QR with the full orthogonal factor: `a = q * r`, `q` square.
pub fn householder_qr_full(a: &Matrix) -> (Matrix, Matrix) {
    let (m, n) = a.shape();
    let mut r = a.clone();
    let mut q = Matrix::identity(m, m);
    for k in 0..n.min(m) {
        let len = m - k;
        let mut v: Vec<f64> = (0..len).map(|i| r[(k + i, k)]).collect();
        let alpha = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if alpha == 0.0 {
            continue;
        }
        v[0] += if v[0] >= 0.0 { alpha } else { -alpha };
        let vnorm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if vnorm == 0.0 {
            continue;
        }
        v.iter_mut().for_each(|x| *x /= vnorm);

        for j in k..n {
            let dot: f64 = (0..len).map(|i| v[i] * r[(k + i, j)]).sum();
            for i in 0..len {
                r[(k + i, j)] -= 2.0 * v[i] * dot;
            }
        }
        for i in 0..m {
            let dot: f64 = (0..len).map(|l| q[(i, k + l)] * v[l]).sum();
            for l in 0..len {
                q[(i, k + l)] -= 2.0 * dot * v[l];
            }
        }
        for i in (k + 1)..m {
            r[(i, k)] = 0.0;
        }
    }
    (q, r)
}

/// Extends `basis` (orthonormal columns) to a square orthogonal matrix whose
/// leading columns span the same space as `basis`.
pub fn complete_orthonormal(basis: &Matrix) -> Matrix {
    let (n, k) = basis.shape();
    if k == 0 {
        return Matrix::identity(n, n);
    }
    let (q, _) = householder_qr_full(basis);
    let mut out = q;
    // keep the given leading columns exactly (they agree with q up to sign)
    out.view_mut((0, 0), (n, k)).copy_from(basis);
    out
}

/// Orthogonal `U` with `U * M = [M1; 0]` (or `[0; M1]` for
/// [`Placement::Trailing`]) where `M1` has `r = rank(M)` rows of full row rank.
pub fn row_compress(
    m: &Matrix,
    tol: &RankTolerance,
    place: Placement,
) -> (OrthogonalFactor, usize) {
    let svd = svd_full(m);
    let r = svd.rank(tol);
    (row_factor(&svd, r, place), r)
}

/// [`row_compress`] for a block of a larger matrix with spectral norm
/// `scale`; singular values are judged against `scale`, not against the
/// block's own largest one.
pub fn row_compress_at(
    m: &Matrix,
    scale: f64,
    tol: &RankTolerance,
    place: Placement,
) -> (OrthogonalFactor, usize) {
    let svd = svd_full(m);
    let r = svd.rank_at(scale, tol);
    (row_factor(&svd, r, place), r)
}

/// [`row_compress`] with the rank fixed by the caller. Used when an earlier
/// stage already decided the rank so it is not estimated twice.
pub fn row_compress_to(m: &Matrix, r: usize, place: Placement) -> OrthogonalFactor {
    row_factor(&svd_full(m), r.min(m.nrows()), place)
}

fn row_factor(svd: &FullSvd, r: usize, place: Placement) -> OrthogonalFactor {
    let rows = svd.u.nrows();
    let ut = svd.u.transpose();
    let u = match place {
        Placement::Leading => ut,
        Placement::Trailing => {
            let mut out = Matrix::zeros(rows, rows);
            out.view_mut((rows - r, 0), (r, rows))
                .copy_from(&ut.rows(0, r));
            out.view_mut((0, 0), (rows - r, rows))
                .copy_from(&ut.rows(r, rows - r));
            out
        }
    };
    OrthogonalFactor::from_matrix_unchecked(u)
}

/// Orthogonal `V` with `M * V = [M2 0]` (or `[0 M2]` for
/// [`Placement::Trailing`]) where `M2` has `r = rank(M)` columns of full
/// column rank.
pub fn col_compress(
    m: &Matrix,
    tol: &RankTolerance,
    place: Placement,
) -> (OrthogonalFactor, usize) {
    let svd = svd_full(m);
    let r = svd.rank(tol);
    (col_factor(&svd, r, place), r)
}

/// Column version of [`row_compress_at`].
pub fn col_compress_at(
    m: &Matrix,
    scale: f64,
    tol: &RankTolerance,
    place: Placement,
) -> (OrthogonalFactor, usize) {
    let svd = svd_full(m);
    let r = svd.rank_at(scale, tol);
    (col_factor(&svd, r, place), r)
}

/// [`col_compress`] with the rank fixed by the caller.
pub fn col_compress_to(m: &Matrix, r: usize, place: Placement) -> OrthogonalFactor {
    col_factor(&svd_full(m), r.min(m.ncols()), place)
}

fn col_factor(svd: &FullSvd, r: usize, place: Placement) -> OrthogonalFactor {
    let cols = svd.v.nrows();
    let v = match place {
        Placement::Leading => svd.v.clone(),
        Placement::Trailing => {
            let mut out = Matrix::zeros(cols, cols);
            out.view_mut((0, cols - r), (cols, r))
                .copy_from(&svd.v.columns(0, r));
            out.view_mut((0, 0), (cols, cols - r))
                .copy_from(&svd.v.columns(r, cols - r));
            out
        }
    };
    OrthogonalFactor::from_matrix_unchecked(v)
}

/// Orthonormal basis of the right nullspace at an explicit singular value
/// threshold.
pub fn right_nullspace_at(m: &Matrix, threshold: f64) -> Matrix {
    let svd = svd_full(m);
    let r = svd.sigma.iter().filter(|&&s| s > threshold).count();
    svd.v.columns(r, m.ncols() - r).into_owned()
}

/// Orthonormal basis of the right nullspace; `cols(M) - rank(M)` columns.
pub fn right_nullspace_basis(m: &Matrix, tol: &RankTolerance) -> Matrix {
    let svd = svd_full(m);
    let r = svd.rank(tol);
    let n = m.ncols();
    svd.v.columns(r, n - r).into_owned()
}

/// Rank of a block cut from a larger matrix of spectral norm `scale`.
pub fn rank_at(m: &Matrix, scale: f64, tol: &RankTolerance) -> usize {
    svd_full(m).rank_at(scale, tol)
}

/// Right nullspace of a block cut from a matrix of spectral norm `scale`.
pub fn right_nullspace_scaled(m: &Matrix, scale: f64, tol: &RankTolerance) -> Matrix {
    let svd = svd_full(m);
    let r = svd.rank_at(scale, tol);
    svd.v.columns(r, m.ncols() - r).into_owned()
}

/// Left nullspace of a block cut from a matrix of spectral norm `scale`.
pub fn left_nullspace_scaled(m: &Matrix, scale: f64, tol: &RankTolerance) -> Matrix {
    right_nullspace_scaled(&m.transpose(), scale, tol)
}

/// Range of a block cut from a matrix of spectral norm `scale`.
pub fn range_basis_scaled(m: &Matrix, scale: f64, tol: &RankTolerance) -> Matrix {
    let svd = svd_full(m);
    let r = svd.rank_at(scale, tol);
    svd.u.columns(0, r).into_owned()
}

/// Orthonormal basis of the left nullspace; `rows(M) - rank(M)` columns.
pub fn left_nullspace_basis(m: &Matrix, tol: &RankTolerance) -> Matrix {
    right_nullspace_basis(&m.transpose(), tol)
}

/// Orthonormal basis of the range of `m`.
pub fn range_basis(m: &Matrix, tol: &RankTolerance) -> Matrix {
    let svd = svd_full(m);
    let r = svd.rank(tol);
    svd.u.columns(0, r).into_owned()
}

/// Real Schur form `P * M * P^T = T`.
///
/// `T` is quasi upper triangular. Every 2x2 diagonal block carries a pair of
/// complex conjugate eigenvalues and is standardized to equal diagonal
/// entries, so both of its diagonal entries equal the real part of the pair.
pub fn real_schur(m: &Matrix) -> Result<(OrthogonalFactor, Matrix)> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "real Schur form needs a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    let n = m.nrows();
    if n == 0 {
        return Ok((OrthogonalFactor::identity(0), Matrix::zeros(0, 0)));
    }
    let schur = Schur::try_new(m.clone(), f64::EPSILON, 10_000).ok_or(Error::SchurFailed)?;
    let (q, mut t) = schur.unpack();
    let mut p = q.transpose();

    let scale = m.norm().max(f64::MIN_POSITIVE);
    for j in 0..n {
        for i in (j + 2)..n {
            t[(i, j)] = 0.0;
        }
    }
    let mut i = 0;
    while i + 1 < n {
        let sub = t[(i + 1, i)];
        if sub.abs() <= f64::EPSILON * scale {
            t[(i + 1, i)] = 0.0;
            i += 1;
            continue;
        }
        let (a, b, c, d) = (t[(i, i)], t[(i, i + 1)], t[(i + 1, i)], t[(i + 1, i + 1)]);
        let half = 0.5 * (a - d);
        let disc = half * half + b * c;
        if disc >= 0.0 {
            // real pair: rotate an eigenvector into the leading position
            let lambda = if half >= 0.0 {
                d + half + disc.sqrt()
            } else {
                d + half - disc.sqrt()
            };
            let (x, y) = (lambda - d, c);
            let h = x.hypot(y);
            rotate_pair(&mut t, &mut p, i, x / h, y / h);
            t[(i + 1, i)] = 0.0;
            i += 1;
        } else {
            let theta = 0.5 * (-(a - d)).atan2(b + c);
            rotate_pair(&mut t, &mut p, i, theta.cos(), theta.sin());
            i += 2;
        }
    }
    Ok((OrthogonalFactor::from_matrix_unchecked(p), t))
}

/// `T <- G^T T G`, `P <- G^T P` with `G = [[cs, -sn], [sn, cs]]` acting on
/// indices `i, i+1`.
fn rotate_pair(t: &mut Matrix, p: &mut Matrix, i: usize, cs: f64, sn: f64) {
    let n = t.nrows();
    for j in 0..n {
        let (x, y) = (t[(i, j)], t[(i + 1, j)]);
        t[(i, j)] = cs * x + sn * y;
        t[(i + 1, j)] = -sn * x + cs * y;
    }
    for r in 0..n {
        let (x, y) = (t[(r, i)], t[(r, i + 1)]);
        t[(r, i)] = cs * x + sn * y;
        t[(r, i + 1)] = -sn * x + cs * y;
    }
    for j in 0..p.ncols() {
        let (x, y) = (p[(i, j)], p[(i + 1, j)]);
        p[(i, j)] = cs * x + sn * y;
        p[(i + 1, j)] = -sn * x + cs * y;
    }
}

/// Diagonal block boundaries of a quasi upper triangular matrix: each entry
/// is `(start, size)` with `size` 1 or 2.
pub fn schur_blocks(t: &Matrix) -> Vec<(usize, usize)> {
    let n = t.nrows();
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        if i + 1 < n && t[(i + 1, i)] != 0.0 {
            out.push((i, 2));
            i += 2;
        } else {
            out.push((i, 1));
            i += 1;
        }
    }
    out
}

/// `X = B^-1 A C^-1` without forming an inverse.
///
/// 1. Full QR of `[C; A] = L [R; 0]`; then `A C^-1 = -L22^-T L12^T`.
/// 2. Full QR of `[-L22^T B, L12^T]^T`, i.e. `[-L22^T B, L12^T] = [R' 0] M`
///    with `M` orthogonal; then `X = M11^-1 M12`.
/// 3. `M11^-1 M12` is evaluated through the cosine-sine structure of the
///    orthonormal row block `[M11 M12]`: with `M11 = U diag(c) V1^T`, the
///    rows of `U^T M12` have norms `s_i = sqrt(1 - c_i^2)` and
///    `X = V1 diag(1/c) U^T M12`.
pub fn stable_triple_product(
    b: &Matrix,
    a: &Matrix,
    c: &Matrix,
    tol: &RankTolerance,
) -> Result<Matrix> {
    if !b.is_square() || !c.is_square() {
        return Err(Error::Dimension(
            "triple product factors must be square".into(),
        ));
    }
    let (p, q) = (b.nrows(), c.nrows());
    if a.shape() != (p, q) {
        return Err(Error::Dimension(format!(
            "middle factor is {}x{}, expected {p}x{q}",
            a.nrows(),
            a.ncols()
        )));
    }
    if p == 0 || q == 0 {
        return Ok(Matrix::zeros(p, q));
    }
    let rb = rank(b, tol);
    if rb < p {
        return Err(Error::SingularBlock {
            factor: "left (B)".into(),
            rank: rb,
            dim: p,
        });
    }
    let rc = rank(c, tol);
    if rc < q {
        return Err(Error::SingularBlock {
            factor: "right (C)".into(),
            rank: rc,
            dim: q,
        });
    }

    let stacked = vstack(&[c, a]);
    let (l, _) = householder_qr_full(&stacked);
    let l12 = l.view((0, q), (q, p)).into_owned();
    let l22 = l.view((q, q), (p, p)).into_owned();

    let second = hstack(&[&(-(l22.transpose() * b)), &l12.transpose()]);
    let (qt, _) = householder_qr_full(&second.transpose());
    let m = qt.transpose();
    let m11 = m.view((0, 0), (p, p)).into_owned();
    let m12 = m.view((0, p), (p, q)).into_owned();

    let svd = svd_full(&m11);
    let cos = &svd.sigma;
    let smax = cos.first().copied().unwrap_or(0.0);
    let thr = tol.threshold_for(smax, p, p);
    if cos.iter().any(|&x| x <= thr) {
        return Err(Error::SingularBlock {
            factor: "cosine block".into(),
            rank: cos.iter().filter(|&&x| x > thr).count(),
            dim: p,
        });
    }
    let mut rows = svd.u.transpose() * m12;
    for (i, &ci) in cos.iter().enumerate() {
        rows.row_mut(i).scale_mut(1.0 / ci);
    }
    Ok(svd.v * rows)
}

pub fn block(m: &Matrix, rows: Range<usize>, cols: Range<usize>) -> Matrix {
    m.view((rows.start, cols.start), (rows.len(), cols.len()))
        .into_owned()
}

pub fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.iter().map(|p| p.ncols()).max().unwrap_or(0);
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r = 0;
    for p in parts {
        debug_assert!(p.nrows() == 0 || p.ncols() == cols);
        if p.nrows() > 0 && p.ncols() > 0 {
            out.view_mut((r, 0), p.shape()).copy_from(*p);
        }
        r += p.nrows();
    }
    out
}

pub fn hstack(parts: &[&Matrix]) -> Matrix {
    let rows = parts.iter().map(|p| p.nrows()).max().unwrap_or(0);
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c = 0;
    for p in parts {
        debug_assert!(p.ncols() == 0 || p.nrows() == rows);
        if p.nrows() > 0 && p.ncols() > 0 {
            out.view_mut((0, c), p.shape()).copy_from(*p);
        }
        c += p.ncols();
    }
    out
}

pub fn block_diag(parts: &[&Matrix]) -> Matrix {
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let cols = parts.iter().map(|p| p.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for p in parts {
        if p.nrows() > 0 && p.ncols() > 0 {
            out.view_mut((r, c), p.shape()).copy_from(*p);
        }
        r += p.nrows();
        c += p.ncols();
    }
    out
}

/// Builds a matrix from a grid of blocks given row and column block sizes.
/// `None` entries are zero.
pub fn assemble(row_sizes: &[usize], col_sizes: &[usize], blocks: &[&[Option<&Matrix>]]) -> Matrix {
    let rows = row_sizes.iter().sum();
    let cols = col_sizes.iter().sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for (bi, &rs) in row_sizes.iter().enumerate() {
        let mut c0 = 0;
        for (bj, &cs) in col_sizes.iter().enumerate() {
            if let Some(Some(b)) = blocks.get(bi).and_then(|row| row.get(bj)) {
                debug_assert_eq!(b.shape(), (rs, cs));
                if rs > 0 && cs > 0 {
                    out.view_mut((r0, c0), (rs, cs)).copy_from(*b);
                }
            }
            c0 += cs;
        }
        r0 += rs;
    }
    out
}

pub fn sym_part(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

pub fn spectral_norm(m: &Matrix) -> f64 {
    singular_values(m).first().copied().unwrap_or(0.0)
}

/// Eigenvalues of the symmetric part of `m`, ascending.
pub fn sym_eigenvalues(m: &Matrix) -> Vec<f64> {
    if m.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(sym_part(m))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Relative violation of positive semidefiniteness of `sym(m)`:
/// `max(0, -lambda_min) / ||sym(m)||_2`; zero for the zero matrix.
pub fn psd_violation(m: &Matrix) -> f64 {
    let ev = sym_eigenvalues(m);
    let norm = ev.iter().fold(0.0f64, |acc, x| acc.max(x.abs()));
    if norm == 0.0 {
        return 0.0;
    }
    (-ev[0]).max(0.0) / norm
}

/// Relative asymmetry `||m - m^T||_F / max(||m||_F, tiny)`.
pub fn asymmetry(m: &Matrix) -> f64 {
    let n = m.norm();
    if n == 0.0 {
        return 0.0;
    }
    (m - m.transpose()).norm() / n
}

/// Solves `m x = rhs` for square nonsingular `m`.
pub fn solve(m: &Matrix, rhs: &Matrix, label: &str) -> Result<Matrix> {
    if m.nrows() == 0 {
        return Ok(Matrix::zeros(0, rhs.ncols()));
    }
    m.clone()
        .lu()
        .solve(rhs)
        .ok_or_else(|| Error::SingularBlock {
            factor: label.to_string(),
            rank: 0,
            dim: m.nrows(),
        })
}

pub fn inverse(m: &Matrix, label: &str) -> Result<Matrix> {
    solve(m, &Matrix::identity(m.nrows(), m.nrows()), label)
}

/// 2-norm condition number; infinite for singular input, 1 for empty.
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.first(), s.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn ensure_finite(m: &Matrix, name: &str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(name.to_string()))
    }
}


#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn nullspace_is_annihilated(rows in 1usize..7, cols in 1usize..7, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let k = rng.gen_range(0..=rows.min(cols));
            let m = Matrix::from_fn(rows, k, |_, _| rng.gen_range(-1.0..1.0))
                * Matrix::from_fn(k, cols, |_, _| rng.gen_range(-1.0..1.0));
            let tol = RankTolerance::default();
            let s = right_nullspace_basis(&m, &tol);
            prop_assert_eq!(s.ncols(), cols - k);
            prop_assert!((&m * &s).norm() <= tol.threshold(&m) * 10.0);
            let id = Matrix::identity(s.ncols(), s.ncols());
            prop_assert!((s.transpose() * &s - id).norm() <= 1e-12 * cols as f64);
        }
    }
}
