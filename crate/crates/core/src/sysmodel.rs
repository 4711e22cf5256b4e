//! Descriptor systems, port-Hamiltonian realizations and their validation.

use std::collections::BTreeMap;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::matops::{
    self, asymmetry, ensure_finite, psd_violation, sym_part, Matrix, RankTolerance,
};

/// `E x' = A x + B u`, `y = C x` with `E, A` n x n, `B` n x m, `C` m x n.
#[derive(Clone, Debug, PartialEq)]
pub struct DescriptorSystem {
    pub e: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl DescriptorSystem {
    pub fn new(e: Matrix, a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let n = e.nrows();
        let m = b.ncols();
        if n == 0 || m == 0 {
            return Err(Error::Dimension(format!(
                "need n >= 1 and m >= 1, got n = {n}, m = {m}"
            )));
        }
        let sys = Self { e, a, b, c };
        sys.check_shapes()?;
        for (name, mat) in [("E", &sys.e), ("A", &sys.a), ("B", &sys.b), ("C", &sys.c)] {
            ensure_finite(mat, name)?;
        }
        Ok(sys)
    }

    /// Output-reduced systems may legitimately have no outputs left.
    pub(crate) fn new_unchecked(e: Matrix, a: Matrix, b: Matrix, c: Matrix) -> Self {
        Self { e, a, b, c }
    }

    fn check_shapes(&self) -> Result<()> {
        let (n, m) = (self.n(), self.m());
        let expect = [
            ("E", &self.e, (n, n)),
            ("A", &self.a, (n, n)),
            ("B", &self.b, (n, m)),
            ("C", &self.c, (m, n)),
        ];
        for (name, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.e.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    /// `(E + B K C, A + B F C)`; absent feedback counts as zero.
    pub fn closed_loop(&self, k: Option<&Matrix>, f: Option<&Matrix>) -> DescriptorSystem {
        let mut e = self.e.clone();
        let mut a = self.a.clone();
        if let Some(k) = k {
            e += &self.b * k * &self.c;
        }
        if let Some(f) = f {
            a += &self.b * f * &self.c;
        }
        DescriptorSystem::new_unchecked(e, a, self.b.clone(), self.c.clone())
    }

    /// Orthogonal equivalence `(U E V, U A V, U B Wo, Wo^T C V)`.
    pub fn transformed(&self, u: &Matrix, v: &Matrix, wo: &Matrix) -> DescriptorSystem {
        DescriptorSystem::new_unchecked(
            u * &self.e * v,
            u * &self.a * v,
            u * &self.b * wo,
            wo.transpose() * &self.c * v,
        )
    }

    /// Frobenius norm of the stacked data, used as the reference scale for
    /// relative residuals.
    pub fn scale(&self) -> f64 {
        (self.e.norm_squared()
            + self.a.norm_squared()
            + self.b.norm_squared()
            + self.c.norm_squared())
        .sqrt()
    }
}

/// Structure matrices certifying `A = (J - R) Q`, `B = G - P`, `C = (G + P)^T Q`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhRealization {
    pub j: Matrix,
    pub r: Matrix,
    pub q: Matrix,
    pub g: Matrix,
    pub p: Matrix,
}

impl PhRealization {
    pub fn new(j: Matrix, r: Matrix, q: Matrix, g: Matrix, p: Matrix) -> Result<Self> {
        let real = Self { j, r, q, g, p };
        for (name, mat) in [
            ("J", &real.j),
            ("R", &real.r),
            ("Q", &real.q),
            ("G", &real.g),
            ("P", &real.p),
        ] {
            ensure_finite(mat, name)?;
        }
        Ok(real)
    }

    fn check_shapes(&self, n: usize, m: usize) -> Result<()> {
        let expect = [
            ("J", &self.j, (n, n)),
            ("R", &self.r, (n, n)),
            ("Q", &self.q, (n, n)),
            ("G", &self.g, (n, m)),
            ("P", &self.p, (n, m)),
        ];
        for (name, mat, shape) in expect {
            if mat.shape() != shape {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    shape.0,
                    shape.1
                )));
            }
        }
        Ok(())
    }

    /// Realization of the closed loop under proportional feedback `F`:
    /// `R` becomes `R - B F B^T`, everything else is unchanged.
    pub fn with_proportional_feedback(&self, b: &Matrix, f: &Matrix) -> PhRealization {
        PhRealization {
            r: &self.r - b * f * b.transpose(),
            ..self.clone()
        }
    }
}

pub const RESIDUAL_NAMES: [&str; 9] = [
    "skew_J",
    "QtE_sym_psd",
    "QtRQ_sym_psd",
    "QtP",
    "A_eq_JmR_Q",
    "B_eq_GmP",
    "C_eq_GpP_t_Q",
    "C_eq_Bt_Q",
    "dissipation_psd",
];

#[derive(Clone, Debug, Serialize)]
pub struct PhValidationReport {
    pub residuals: BTreeMap<String, f64>,
    pub verdict: bool,
    pub tolerance: f64,
    pub rank_b: usize,
    pub rank_c: usize,
}

impl PhValidationReport {
    pub fn failing(&self) -> Vec<&str> {
        self.residuals
            .iter()
            .filter(|(_, &v)| v > self.tolerance)
            .map(|(k, _)| k.as_str())
            .collect()
    }

    pub fn max_residual(&self) -> f64 {
        self.residuals.values().fold(0.0, |a, &b| a.max(b))
    }
}

fn relative(diff: f64, scale: f64) -> f64 {
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

/// Symmetric positive semidefinite residual of `m`, where `natural` is the
/// product of the norms of the factors `m` was formed from.
fn sym_psd_residual(m: &Matrix, natural: f64) -> f64 {
    let own = matops::spectral_norm(&sym_part(m));
    let scale = own.max(natural);
    if scale == 0.0 {
        return 0.0;
    }
    let asym = asymmetry(m) * m.norm() / scale;
    let psd = psd_violation(m) * own / scale;
    asym.max(psd)
}

fn psd_residual(m: &Matrix, natural: f64) -> f64 {
    let own = matops::spectral_norm(&sym_part(m));
    let scale = own.max(natural);
    if scale == 0.0 {
        return 0.0;
    }
    psd_violation(m) * own / scale
}

/// Checks every port-Hamiltonian identity and the derived dissipation and
/// output conditions. Each residual is relative to the scale of the matrices
/// it involves; the verdict holds iff every residual is at most `tol`.
pub fn validate_ph(
    sys: &DescriptorSystem,
    real: &PhRealization,
    tol: f64,
) -> Result<PhValidationReport> {
    sys.check_shapes()?;
    real.check_shapes(sys.n(), sys.m())?;
    let (e, a, b, c) = (&sys.e, &sys.a, &sys.b, &sys.c);
    let (j, r, q, g, p) = (&real.j, &real.r, &real.q, &real.g, &real.p);
    let qn = q.norm();

    let mut res = BTreeMap::new();
    res.insert(
        "skew_J".to_string(),
        relative((j + j.transpose()).norm(), 2.0 * j.norm()),
    );
    res.insert(
        "QtE_sym_psd".to_string(),
        sym_psd_residual(&(q.transpose() * e), qn * e.norm()),
    );
    let qrq = q.transpose() * r * q;
    res.insert(
        "QtRQ_sym_psd".to_string(),
        sym_psd_residual(&qrq, qn * qn * r.norm()),
    );
    res.insert(
        "QtP".to_string(),
        relative((q.transpose() * p).norm(), qn * p.norm()),
    );

    let jrq = (j - r) * q;
    res.insert(
        "A_eq_JmR_Q".to_string(),
        relative((a - &jrq).norm(), a.norm().max(jrq.norm())),
    );
    let gmp = g - p;
    res.insert(
        "B_eq_GmP".to_string(),
        relative((b - &gmp).norm(), b.norm().max(gmp.norm())),
    );
    let gpq = (g + p).transpose() * q;
    res.insert(
        "C_eq_GpP_t_Q".to_string(),
        relative((c - &gpq).norm(), c.norm().max(gpq.norm())),
    );
    let btq = b.transpose() * q;
    res.insert(
        "C_eq_Bt_Q".to_string(),
        relative((c - &btq).norm(), c.norm().max(btq.norm())),
    );
    let diss = -(a.transpose() * q) - q.transpose() * a;
    res.insert(
        "dissipation_psd".to_string(),
        psd_residual(&diss, 2.0 * a.norm() * qn),
    );

    let verdict = res.values().all(|&v| v <= tol);
    let rtol = RankTolerance::default();
    Ok(PhValidationReport {
        residuals: res,
        verdict,
        tolerance: tol,
        rank_b: matops::rank(b, &rtol),
        rank_c: matops::rank(c, &rtol),
    })
}

/// Quadratic energy `H(x) = x^T gram x / 2` with `gram = sym(Q^T E)`.
#[derive(Clone, Debug)]
pub struct Hamiltonian {
    pub gram: Matrix,
}

impl Hamiltonian {
    pub fn energy(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.gram * x)[(0, 0)]
    }
}

pub fn hamiltonian_of(
    sys: &DescriptorSystem,
    real: &PhRealization,
    tol: f64,
) -> Result<Hamiltonian> {
    let report = validate_ph(sys, real, tol)?;
    if !report.verdict {
        return Err(Error::ValidationFailed(report.failing().join(", ")));
    }
    Ok(Hamiltonian {
        gram: sym_part(&(real.q.transpose() * &sys.e)),
    })
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let (q, _) = matops::householder_qr_full(&uniform(rng, n, n));
    q
}

/// Orthogonal * diag in [1, 2] * orthogonal: condition number at most 2.
fn well_conditioned(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let d = DVector::from_fn(n, |_, _| rng.gen_range(1.0..2.0));
    random_orthogonal(rng, n) * Matrix::from_diagonal(&d) * random_orthogonal(rng, n)
}

fn psd_of_rank(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Matrix {
    let l = uniform(rng, n, k);
    &l * l.transpose()
}

fn skew(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let k = uniform(rng, n, n);
    &k - k.transpose()
}

/// Deterministic random port-Hamiltonian descriptor system with
/// `rank(E) = rank_e` and `rank(R) = rank_r` (generically).
///
/// With `singular_q` the realization has `rank(Q) = n - 1` and a nonzero `P`
/// with `Q^T P = 0`; otherwise `Q` is nonsingular (condition <= 2) and `P = 0`.
pub fn random_ph_system(
    n: usize,
    m: usize,
    rank_e: usize,
    rank_r: usize,
    seed: u64,
    singular_q: bool,
) -> Result<(DescriptorSystem, PhRealization)> {
    if n == 0 || m == 0 {
        return Err(Error::InvalidArgument(format!(
            "need n >= 1 and m >= 1, got n = {n}, m = {m}"
        )));
    }
    if rank_e > n || rank_r > n {
        return Err(Error::InvalidArgument(format!(
            "rank request infeasible: rank_e = {rank_e}, rank_r = {rank_r}, n = {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if singular_q {
        return singular_q_system(&mut rng, n, m, rank_e, rank_r);
    }

    let q = well_conditioned(&mut rng, n);
    let mgram = psd_of_rank(&mut rng, n, rank_e);
    let q_inv_t = matops::inverse(&q, "Q")?.transpose();
    let e = &q_inv_t * &mgram;
    let j = skew(&mut rng, n);
    let r = psd_of_rank(&mut rng, n, rank_r);
    let g = uniform(&mut rng, n, m);
    let p = Matrix::zeros(n, m);
    let a = (&j - &r) * &q;
    let b = g.clone();
    let c = g.transpose() * &q;
    Ok((
        DescriptorSystem::new(e, a, b, c)?,
        PhRealization::new(j, r, q, g, p)?,
    ))
}

fn singular_q_system(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    rank_e: usize,
    rank_r: usize,
) -> Result<(DescriptorSystem, PhRealization)> {
    let qr = n - 1;
    let (e1, e2) = (rank_e.min(qr), rank_e - rank_e.min(qr));

    let mut q0 = Matrix::zeros(n, n);
    for i in 0..qr {
        q0[(i, i)] = 1.0;
    }
    let e11 = psd_of_rank(rng, qr, e1);
    let e21 = uniform(rng, n - qr, qr) * &e11;
    let e22 = uniform(rng, n - qr, e2) * uniform(rng, e2, n - qr);
    let e0 = matops::assemble(
        &[qr, n - qr],
        &[qr, n - qr],
        &[&[Some(&e11), None], &[Some(&e21), Some(&e22)]],
    );
    let j0 = skew(rng, n);
    let r0 = psd_of_rank(rng, n, rank_r);
    let g0 = uniform(rng, n, m);
    let p_low = uniform(rng, n - qr, m);
    let p0 = matops::vstack(&[&Matrix::zeros(qr, m), &p_low]);

    let s = well_conditioned(rng, n);
    let t = well_conditioned(rng, n);
    let s_inv_t = matops::inverse(&s, "S")?.transpose();

    let e = &s * &e0 * &t;
    let q = &s_inv_t * &q0 * &t;
    let j = &s * &j0 * s.transpose();
    let r = &s * &r0 * s.transpose();
    let g = &s * &g0;
    let p = &s * &p0;
    let a = &s * ((&j0 - &r0) * &q0) * &t;
    let b = &s * (&g0 - &p0);
    let c = (&g0 + &p0).transpose() * &q0 * &t;
    Ok((
        DescriptorSystem::new(e, a, b, c)?,
        PhRealization::new(j, r, q, g, p)?,
    ))
}
