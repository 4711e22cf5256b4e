//! Regularity, index and finite-eigenvalue counts of matrix pencils, and the
//! solvability conditions for output-feedback regularization.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::matops::{
    self, block, hstack, left_nullspace_basis, rank, right_nullspace_basis, row_compress, vstack,
    Matrix, Placement, RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// Relative tolerance for deciding that the core product of the rank
/// feasibility condition is skew-symmetric.
pub const SKEW_TOL: f64 = 1e-8;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AnalysisReport {
    pub regular: bool,
    /// `None` for a singular pencil.
    pub index: Option<usize>,
    pub rank_e: usize,
    pub finite_eig_count: Option<usize>,
    pub samples_used: usize,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    /// Regularizability by proportional output feedback.
    Proportional,
    /// Regularizability by derivative output feedback to maximal rank.
    Derivative,
    /// Attainability of a prescribed rank by derivative feedback.
    RankFeasibility,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SolvabilityVerdict {
    pub condition: ConditionId,
    pub holds: bool,
    pub computed_ranks: Vec<(String, usize)>,
    pub feasible_rank_range: Option<(usize, usize)>,
    /// Present only when the skew-symmetric subcase is detected; then
    /// `n - r` must be even.
    pub parity_constraint: Option<bool>,
    /// Which inverse convention the core product used (rank feasibility only).
    pub core_convention: Option<String>,
}

impl SolvabilityVerdict {
    fn plain(condition: ConditionId, holds: bool, computed_ranks: Vec<(String, usize)>) -> Self {
        Self {
            condition,
            holds,
            computed_ranks,
            feasible_rank_range: None,
            parity_constraint: None,
            core_convention: None,
        }
    }

    /// Every rank in the feasible range that also satisfies the parity
    /// constraint, given the state dimension `n`.
    pub fn feasible_ranks(&self, n: usize) -> Vec<usize> {
        let Some((lo, hi)) = self.feasible_rank_range else {
            return Vec::new();
        };
        let parity = self.parity_constraint.unwrap_or(false);
        (lo..=hi)
            .filter(|r| !parity || (n - r).is_multiple_of(2))
            .collect()
    }

    pub fn rank(&self, label: &str) -> Option<usize> {
        self.computed_ranks
            .iter()
            .find(|(l, _)| l == label)
            .map(|&(_, v)| v)
    }
}

fn check_pencil(e: &Matrix, a: &Matrix) -> Result<()> {
    if !e.is_square() || e.shape() != a.shape() {
        return Err(Error::Dimension(format!(
            "pencil needs square matrices of equal size, got {}x{} and {}x{}",
            e.nrows(),
            e.ncols(),
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Real embedding of the complex matrix `X + iY`.
fn complex_embedding(x: &Matrix, y: &Matrix) -> Matrix {
    let neg_y = -y;
    matops::assemble(
        &[x.nrows(), x.nrows()],
        &[x.ncols(), x.ncols()],
        &[&[Some(x), Some(&neg_y)], &[Some(y), Some(x)]],
    )
}

/// Sample points `rho * exp(i theta_k)`, `k = 0..count`, at distinct angles
/// with a fixed irrational offset so they avoid the real axis.
fn circle_points(count: usize) -> impl Iterator<Item = (f64, f64)> {
    let offset = 0.381_966_011_250_105_1; // 2 - golden ratio
    (0..count).map(move |k| {
        let theta = 2.0 * PI * (k as f64 + offset) / count as f64;
        (theta.cos(), theta.sin())
    })
}

/// Regularity test on `n + 1` points of a circle of radius `|A| / |E|`.
///
/// `det(sE - A)` has degree at most `n`, so if it is not identically zero it
/// cannot vanish at all `n + 1` distinct points. Returns `(regular, samples)`.
pub fn pencil_regular_sampled(
    e: &Matrix,
    a: &Matrix,
    tol: &RankTolerance,
) -> Result<(bool, usize)> {
    check_pencil(e, a)?;
    let n = e.nrows();
    if n == 0 {
        return Ok((true, 0));
    }
    let (en, an) = (e.norm(), a.norm());
    if en == 0.0 {
        return Ok((rank(a, tol) == n, 1));
    }
    if an == 0.0 {
        return Ok((rank(e, tol) == n, 1));
    }
    // s E - A scaled by 1/|A| with |s| = |A|/|E|
    let (es, as_) = (e / en, a / an);
    let mut used = 0;
    for (c, s) in circle_points(n + 1) {
        used += 1;
        let re = &es * c - &as_;
        let im = &es * s;
        if rank(&complex_embedding(&re, &im), tol) == 2 * n {
            return Ok((true, used));
        }
    }
    Ok((false, used))
}

/// True when the (possibly rectangular) `s E - A` has full row rank at the
/// circle sample points used by the regularity test and at `s = 0`.
pub fn full_row_rank_sampled(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> bool {
    let rows = e.nrows();
    if rows == 0 {
        return true;
    }
    if rank(a, tol) < rows {
        return false;
    }
    let (en, an) = (e.norm(), a.norm());
    if en == 0.0 || an == 0.0 {
        return true;
    }
    let (es, as_) = (e / en, a / an);
    circle_points(e.ncols().max(rows) + 1).all(|(c, s)| {
        let re = &es * c - &as_;
        let im = &es * s;
        rank(&complex_embedding(&re, &im), tol) == 2 * rows
    })
}

pub fn pencil_regular(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> Result<bool> {
    Ok(pencil_regular_sampled(e, a, tol)?.0)
}

/// Result of deflating the infinite structure of a regular pencil.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Deflation {
    pub index: usize,
    pub finite_block: usize,
}

/// Splits off the infinite part of a regular pencil one level at a time:
/// row-compress `E`, column-compress the rows of `A` that `E` does not reach,
/// and continue on the leading block. The number of levels is the index and
/// the remaining block carries the finite eigenvalues.
pub fn deflate(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> Result<Deflation> {
    check_pencil(e, a)?;
    let (e_scale, a_scale) = (matops::spectral_norm(e), matops::spectral_norm(a));
    let mut e = e.clone();
    let mut a = a.clone();
    let mut index = 0;
    loop {
        let n = e.nrows();
        if n == 0 {
            return Ok(Deflation {
                index,
                finite_block: 0,
            });
        }
        let (u, r) = matops::row_compress_at(&e, e_scale, tol, Placement::Leading);
        if r == n {
            return Ok(Deflation {
                index,
                finite_block: n,
            });
        }
        let ue = u.matrix() * &e;
        let ua = u.matrix() * &a;
        let a2 = block(&ua, r..n, 0..n);
        let (v, ra2) = matops::col_compress_at(&a2, a_scale, tol, Placement::Trailing);
        if ra2 < n - r {
            return Err(Error::SingularPencil);
        }
        let ev = ue * v.matrix();
        let av = ua * v.matrix();
        e = block(&ev, 0..r, 0..r);
        a = block(&av, 0..r, 0..r);
        index += 1;
    }
}

/// Nilpotency index of the infinite part of a regular pencil.
pub fn pencil_index(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> Result<usize> {
    if !pencil_regular(e, a, tol)? {
        return Err(Error::SingularPencil);
    }
    Ok(deflate(e, a, tol)?.index)
}

/// Number of finite eigenvalues, i.e. the degree of `det(sE - A)`.
pub fn finite_eig_count(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> Result<usize> {
    if !pencil_regular(e, a, tol)? {
        return Err(Error::SingularPencil);
    }
    Ok(deflate(e, a, tol)?.finite_block)
}

pub fn analyze_pencil(e: &Matrix, a: &Matrix, tol: &RankTolerance) -> Result<AnalysisReport> {
    let (regular, samples_used) = pencil_regular_sampled(e, a, tol)?;
    let rank_e = rank(e, tol);
    let (index, finite_eig_count) = if regular {
        match deflate(e, a, tol) {
            Ok(d) => (Some(d.index), Some(d.finite_block)),
            // sampling and deflation disagree only at the tolerance edge
            Err(Error::SingularPencil) => (None, None),
            Err(err) => return Err(err),
        }
    } else {
        (None, None)
    };
    Ok(AnalysisReport {
        regular: regular && index.is_some(),
        index,
        rank_e,
        finite_eig_count,
        samples_used,
    })
}

/// `rank [E, A S; 0, C S] = n` with `S` spanning the kernel of `E`.
pub fn check_proportional_condition(
    sys: &DescriptorSystem,
    tol: &RankTolerance,
) -> SolvabilityVerdict {
    let n = sys.n();
    let s = right_nullspace_basis(&sys.e, tol);
    let top = hstack(&[&sys.e, &(&sys.a * &s)]);
    let bottom = hstack(&[&Matrix::zeros(sys.c.nrows(), n), &(&sys.c * &s)]);
    let r = rank(&vstack(&[&top, &bottom]), tol);
    SolvabilityVerdict::plain(
        ConditionId::Proportional,
        r == n,
        vec![("rank[E, AS; 0, CS]".into(), r)],
    )
}

/// Companion condition `rank [E, A S, B] = n`, `S` spanning the kernel of `E`.
/// It is implied by the proportional condition for port-Hamiltonian systems.
pub fn check_proportional_companion(
    sys: &DescriptorSystem,
    tol: &RankTolerance,
) -> SolvabilityVerdict {
    let n = sys.n();
    let s = right_nullspace_basis(&sys.e, tol);
    let r = rank(&hstack(&[&sys.e, &(&sys.a * &s), &sys.b]), tol);
    SolvabilityVerdict::plain(
        ConditionId::Proportional,
        r == n,
        vec![("rank[E, AS, B]".into(), r)],
    )
}

/// `rank [E, A S; C, 0] = rank [E, A S, B] = n` with `S` spanning the kernel
/// of `[E; C]`.
pub fn check_derivative_condition(
    sys: &DescriptorSystem,
    tol: &RankTolerance,
) -> SolvabilityVerdict {
    let n = sys.n();
    let s = right_nullspace_basis(&vstack(&[&sys.e, &sys.c]), tol);
    let as_ = &sys.a * &s;
    let top = hstack(&[&sys.e, &as_]);
    let bottom = hstack(&[&sys.c, &Matrix::zeros(sys.c.nrows(), s.ncols())]);
    let first = rank(&vstack(&[&top, &bottom]), tol);
    let second = rank(&hstack(&[&sys.e, &as_, &sys.b]), tol);
    SolvabilityVerdict::plain(
        ConditionId::Derivative,
        first == n && second == n,
        vec![
            ("rank[E, AS; C, 0]".into(), first),
            ("rank[E, AS, B]".into(), second),
        ],
    )
}

/// Largest rank of `E + B K C` over all `K`: `rank [E; C]`.
pub fn max_derivative_rank(sys: &DescriptorSystem, tol: &RankTolerance) -> usize {
    rank(&vstack(&[&sys.e, &sys.c]), tol)
}

/// Exact test of `rank [sE - A; C] = n` for every `s`, including infinity.
///
/// The infinite point is `rank [E; C] = n`. For finite `s`, the largest
/// subspace `V` with `C V = 0` and `A V` contained in `E V` is computed by a
/// decreasing subspace iteration; it is trivial iff no finite `s` loses rank.
pub fn completely_observable(sys: &DescriptorSystem, tol: &RankTolerance) -> bool {
    let n = sys.n();
    if rank(&vstack(&[&sys.e, &sys.c]), tol) < n {
        return false;
    }
    unobservable_subspace(sys, tol).ncols() == 0
}

/// Orthonormal basis of the largest `V` with `C V = 0` and `A V` in `E V`.
pub fn unobservable_subspace(sys: &DescriptorSystem, tol: &RankTolerance) -> Matrix {
    let n = sys.n();
    let en = matops::spectral_norm(&sys.e);
    let ca = matops::spectral_norm(&sys.c).max(matops::spectral_norm(&sys.a));
    let mut basis = Matrix::identity(n, n);
    loop {
        let dim = basis.ncols();
        if dim == 0 {
            return basis;
        }
        let ev = &sys.e * &basis;
        let y = matops::left_nullspace_scaled(&ev, en, tol);
        let constraint = vstack(&[&(&sys.c * &basis), &(y.transpose() * &sys.a * &basis)]);
        let z = matops::right_nullspace_scaled(&constraint, ca, tol);
        if z.ncols() == dim {
            return basis;
        }
        basis = &basis * z;
    }
}

/// Restriction of `B` and `C` to the row space of `C`, so the output side
/// has full row rank. Returns `(B W1, W1^T C)`.
fn output_restricted(sys: &DescriptorSystem, tol: &RankTolerance) -> (Matrix, Matrix) {
    let (w, rc) = row_compress(&sys.c, tol, Placement::Leading);
    let w1 = block(&w.matrix().transpose(), 0..sys.m(), 0..rc);
    (&sys.b * &w1, w1.transpose() * &sys.c)
}

/// Rank-feasibility condition for derivative feedback with target rank `r`.
///
/// With `T1` spanning the left kernel of `E S_C` (`S_C` the kernel of `C`)
/// and `S2` the kernel of `T_B^T E` (`T_B` the left kernel of `B`), the rank
/// `mu = rank(T1^T A S2)` gives the feasible range `n - mu <= r <= n`. When
/// `mu > 0` and `(T1^T B)^-1 T1^T A S2 (C S2)^-1` is skew-symmetric, `n - r`
/// must also be even.
pub fn check_rank_feasibility(
    sys: &DescriptorSystem,
    r: usize,
    tol: &RankTolerance,
) -> Result<SolvabilityVerdict> {
    if !completely_observable(sys, tol) {
        return Err(Error::NotObservable(
            "rank [sE - A; C] < n for some s".into(),
        ));
    }
    let n = sys.n();
    let (b, c) = output_restricted(sys, tol);
    let (en, an) = (matops::spectral_norm(&sys.e), matops::spectral_norm(&sys.a));
    let s_c = right_nullspace_basis(&c, tol);
    let t1 = matops::left_nullspace_scaled(&(&sys.e * &s_c), en, tol);
    let t_b = left_nullspace_basis(&b, tol);
    let s2 = matops::right_nullspace_scaled(&(t_b.transpose() * &sys.e), en, tol);
    let core_mid = t1.transpose() * &sys.a * &s2;
    let mu = matops::rank_at(&core_mid, an, tol);

    let mut parity = None;
    let mut convention = None;
    if mu > 0 {
        let left = t1.transpose() * &b;
        let right = &c * &s2;
        let core =
            matops::stable_triple_product(&left, &core_mid, &right, tol).map_err(|e| match e {
                Error::SingularBlock { factor, rank, dim } => Error::SingularBlock {
                    factor: format!("rank feasibility core, {factor}"),
                    rank,
                    dim,
                },
                other => other,
            })?;
        convention = Some("inverse".to_string());
        let scale = core.norm();
        if scale > 0.0 && (&core + core.transpose()).norm() <= SKEW_TOL * scale {
            parity = Some(true);
        }
    }
    let lo = n - mu;
    let in_range = lo <= r && r <= n;
    let parity_ok = parity != Some(true) || (n >= r && (n - r).is_multiple_of(2));
    Ok(SolvabilityVerdict {
        condition: ConditionId::RankFeasibility,
        holds: in_range && parity_ok,
        computed_ranks: vec![("mu".into(), mu), ("rank(C)".into(), c.nrows())],
        feasible_rank_range: Some((lo, n)),
        parity_constraint: parity,
        core_convention: convention,
    })
}
