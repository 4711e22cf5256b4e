use super::{norm2, FormReport, RefinedForm};
use crate::error::{Error, Result};
use crate::matops::{
    block, block_diag, complete_orthonormal, hstack, real_schur, right_nullspace_at, schur_blocks,
    solve, stable_triple_product, sym_eigenvalues, vstack, Matrix, OrthogonalFactor, RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// Relative slack for `M + M^T <= 0` and for the kernel of `M + M^T`.
const NSD_TOL: f64 = 1e-8;

/// Final stage of the combined-feedback chain.
///
/// With the core product `M = Bb21^-1 A22 Cc12^-1` (`mu x mu`),
/// `Ph M Ph^T = Ah` is in real Schur form
///
/// ```text
/// Ah = diag(T_1, ..., T_k, D),   T_i = [0 t_i; -t_i 0]
/// ```
///
/// where the `T_i` span the largest `M`-invariant subspace on which `M` is
/// skew and `D + D^T != 0` (or `D` is empty). The transformations
/// `Xh = diag(I, P Bb^-1 Z) X`, `Yh = Y diag(I, Zc Cc^-1 P^T)` with
/// `P = diag(Ph, I)` and input change `Wh = W Wc P^T` give
///
/// ```text
/// Xh B Wh = [0; I],   Wh^T C Yh = [0 I],   Xh A Yh (trailing m x m) = diag(Ah, 0)
/// ```
#[derive(Clone, Debug)]
pub struct SchurStageForm {
    pub mu: usize,
    /// Number of 2x2 skew blocks.
    pub k: usize,
    pub t: Vec<f64>,
    pub core: Matrix,
    pub p_hat: OrthogonalFactor,
    pub a_hat: Matrix,
    pub x_hat: Matrix,
    pub y_hat: Matrix,
    pub w_hat: OrthogonalFactor,
    pub report: FormReport,
}

impl SchurStageForm {
    /// The trailing non-skew block `D`.
    pub fn d_block(&self) -> Matrix {
        let s = 2 * self.k;
        block(&self.a_hat, s..self.mu, s..self.mu)
    }
}

/// Orthonormal basis of the largest `M`-invariant subspace inside
/// `ker(M + M^T)`.
fn skew_subspace(core: &Matrix, threshold: f64) -> Matrix {
    let mu = core.nrows();
    let mut s = right_nullspace_at(&(core + core.transpose()), threshold);
    for _ in 0..=mu {
        if s.ncols() == 0 {
            break;
        }
        let ms = core * &s;
        let outside = &ms - &s * (s.transpose() * &ms);
        let ker = right_nullspace_at(&outside, threshold);
        if ker.ncols() == s.ncols() {
            break;
        }
        s = &s * ker;
    }
    s
}

pub fn schur_stage(
    form: &RefinedForm,
    sys: &DescriptorSystem,
    q: Option<&Matrix>,
    tol: &RankTolerance,
) -> Result<SchurStageForm> {
    let (p1, mu, m) = (form.p1, form.mu, form.m());
    let n = p1 + m;
    let core = stable_triple_product(&form.bb21(), &form.a22, &form.cc12(), tol)?;
    let scale = norm2(&core);
    let top = sym_eigenvalues(&core).last().copied().unwrap_or(0.0);
    if top > NSD_TOL * scale {
        return Err(Error::Structure(format!(
            "core product has a positive symmetric part (largest eigenvalue {top:.3e}, |M| = {scale:.3e})"
        )));
    }

    let s = skew_subspace(&core, tol.threshold_for(scale, mu, mu).max(NSD_TOL * scale));
    if s.ncols() % 2 == 1 {
        return Err(Error::Structure(format!(
            "skew-invariant subspace has odd dimension {}",
            s.ncols()
        )));
    }
    let full = complete_orthonormal(&s);
    let s_perp = block(&full, 0..mu, s.ncols()..mu);
    let (ps, ts) = real_schur(&(s.transpose() * &core * &s))?;
    let (pd, td) = real_schur(&(s_perp.transpose() * &core * &s_perp))?;
    let p_hat = OrthogonalFactor::from_matrix_unchecked(vstack(&[
        &(ps.matrix() * s.transpose()),
        &(pd.matrix() * s_perp.transpose()),
    ]));
    let rotated = p_hat.matrix() * &core * p_hat.matrix().transpose();
    let a_hat = block_diag(&[&ts, &td]);
    let k = s.ncols() / 2;
    let blocks = schur_blocks(&ts);
    if blocks.iter().any(|&(_, size)| size != 2) {
        return Err(Error::Structure(
            "skew part of the core has a real eigenvalue".into(),
        ));
    }
    let t: Vec<f64> = (0..k).map(|i| a_hat[(2 * i, 2 * i + 1)]).collect();

    let p = p_hat.embed_leading(m);
    let z_left = solve(&form.bb, form.z.matrix(), "Bb")?;
    let zc_right = solve(&form.cc.transpose(), &form.zc.matrix().transpose(), "Cc")?.transpose();
    let i1 = Matrix::identity(p1, p1);
    let x_hat = block_diag(&[&i1, &(p.matrix() * z_left)]) * &form.x;
    let y_hat = &form.y * block_diag(&[&i1, &(zc_right * p.matrix().transpose())]);
    let w_hat = OrthogonalFactor::from_matrix_unchecked(
        form.w.matrix() * form.wc.matrix() * p.matrix().transpose(),
    );

    let mut report = FormReport::new("schur_stage");
    report.size("mu", mu);
    report.size("k", k);
    report.size("dim D", mu - 2 * k);
    report.conditioning("Xh", &x_hat);
    report.conditioning("Yh", &y_hat);
    report.orthogonal("Ph", &p_hat);
    let (nx, ny) = (norm2(&x_hat), norm2(&y_hat));
    let xa = &x_hat * &sys.a * &y_hat;
    let xb = &x_hat * &sys.b * w_hat.matrix();
    let wc = w_hat.matrix().transpose() * &sys.c * &y_hat;
    let b_model = vstack(&[&Matrix::zeros(p1, m), &Matrix::identity(m, m)]);
    let c_model = hstack(&[&Matrix::zeros(m, p1), &Matrix::identity(m, m)]);
    report.zero(
        "Xh B Wh - [0; I]",
        &(&xb - &b_model),
        nx * norm2(&sys.b),
        tol,
    );
    report.zero(
        "Wh^T C Yh - [0 I]",
        &(&wc - &c_model),
        norm2(&sys.c) * ny,
        tol,
    );
    let a_model = block_diag(&[&a_hat, &Matrix::zeros(m - mu, m - mu)]);
    report.zero(
        "trailing Xh A Yh - diag(Ah, 0)",
        &(block(&xa, p1..n, p1..n) - a_model),
        nx * norm2(&sys.a) * ny,
        tol,
    );
    report.zero("Ph M Ph^T - Ah", &(&rotated - &a_hat), scale, tol);
    report.zero(
        "skew blocks symmetric part",
        &block(&(&a_hat + a_hat.transpose()), 0..2 * k, 0..2 * k),
        scale,
        tol,
    );
    if mu > 2 * k {
        let d = block(&a_hat, 2 * k..mu, 2 * k..mu);
        let hd = &d + d.transpose();
        let thr = tol.threshold_for(scale, mu, mu);
        if hd.norm() <= thr {
            report
                .warnings
                .push("D + D^T vanishes at the tolerance".into());
        }
    }
    report.reconstruction_residual = if scale == 0.0 {
        0.0
    } else {
        (&rotated - &a_hat).norm() / core.norm()
    };
    if let Some(q) = q {
        // with C = B^T Q the last m rows of Xh^-T Q Yh are [0 I]
        let xi = solve(&x_hat.transpose(), &(q * &y_hat), "Xh^T")?;
        let rows = block(&xi, p1..n, 0..n);
        let dev = (&rows - &c_model).norm() / rows.norm().max(1.0);
        report.q_pattern_residual = Some(dev);
    }

    Ok(SchurStageForm {
        mu,
        k,
        t,
        core,
        p_hat,
        a_hat,
        x_hat,
        y_hat,
        w_hat,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condense::{reduce_io_condensed, refine};
    use crate::matops::Matrix;
    use crate::sysmodel::random_ph_system;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tol() -> RankTolerance {
        RankTolerance::default()
    }

    #[test]
    fn skew_and_dissipative_cores() {
        let skew = Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        assert_eq!(skew_subspace(&skew, 1e-12).ncols(), 2);
        let neg = -Matrix::identity(2, 2);
        assert_eq!(skew_subspace(&neg, 1e-12).ncols(), 0);
    }

    #[test]
    fn random_cores_match_eigenvalue_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            // block diagonal skew part plus a strictly dissipative part, rotated
            let ks = rng.gen_range(0..3usize);
            let dd = rng.gen_range(0..3usize);
            let mu = 2 * ks + dd;
            if mu == 0 {
                continue;
            }
            let mut core = Matrix::zeros(mu, mu);
            for i in 0..ks {
                let t: f64 = rng.gen_range(0.5..2.0);
                core[(2 * i, 2 * i + 1)] = t;
                core[(2 * i + 1, 2 * i)] = -t;
            }
            for i in 2 * ks..mu {
                core[(i, i)] = -rng.gen_range(0.5..2.0);
                for j in i + 1..mu {
                    let x: f64 = rng.gen_range(-0.3..0.3);
                    core[(i, j)] = x;
                    core[(j, i)] = -x;
                }
            }
            let g = Matrix::from_fn(mu, mu, |_, _| rng.gen_range(-1.0..1.0));
            let (q, _) = crate::matops::householder_qr_full(&g);
            let rotated = &q * core * q.transpose();
            let s = skew_subspace(&rotated, 1e-9);
            // oracle: eigenvalues on the imaginary axis come from the skew blocks
            let eig = rotated.complex_eigenvalues();
            let imag = eig.iter().filter(|z| z.re.abs() < 1e-8).count();
            assert_eq!(s.ncols(), imag);
            assert_eq!(s.ncols(), 2 * ks);
            assert!(sym_eigenvalues(&rotated).last().unwrap() <= &1e-12);
        }
    }

    #[test]
    fn generated_chain() {
        let mut with_mu = 0;
        for seed in 0..200 {
            let n = 3 + seed as usize % 6;
            let m = 1 + seed as usize % 3;
            let re = n - 1 - (seed as usize / 7) % 3.min(n - 1);
            let (s, real) = random_ph_system(n, m, re, seed as usize % 4, seed, false).unwrap();
            let Ok(io) = reduce_io_condensed(&s, Some(&real.q), &tol()) else {
                continue;
            };
            let f = refine(&io, &s, Some(&real.q), &tol()).unwrap();
            let st = schur_stage(&f, &s, Some(&real.q), &tol())
                .unwrap_or_else(|e| panic!("seed {seed}: {e}"));
            assert!(st.report.holds(), "seed {seed}: {:?}", st.report.failures());
            assert!(
                st.report.q_pattern_residual.unwrap() <= 1e-8,
                "seed {seed}: {:?}",
                st.report.q_pattern_residual
            );
            assert!(st.t.iter().all(|t| t.abs() > 0.0));
            with_mu += (st.mu > 0) as usize;
        }
        assert!(with_mu >= 20, "{with_mu}");
    }
}
