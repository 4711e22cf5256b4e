use super::{clear, norm2, pattern_residual, reconstruction, FormReport};
use crate::matops::{
    block, col_compress_to, row_compress, row_compress_at, Matrix, OrthogonalFactor, Placement,
    RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// `U E V = diag(E11, 0, 0)` and
///
/// ```text
/// U A V = [A11 A12 A13]      W^T C V = [C11 C12  0 ]
///         [A21 A22  0 ]                [C21 C22 C23]
///         [A31  0   0 ]
/// ```
///
/// with `E11` (n1 x n1) and `A22` (n2 x n2) nonsingular. `C23` is n3 x n3
/// and nonsingular exactly when the proportional feedback condition holds.
#[derive(Clone, Debug)]
pub struct KernelSplitForm {
    pub u: OrthogonalFactor,
    pub v: OrthogonalFactor,
    pub w: OrthogonalFactor,
    pub n1: usize,
    pub n2: usize,
    pub n3: usize,
    /// Rank of the last column block of `C V`.
    pub c3_rank: usize,
    pub e: Matrix,
    pub a: Matrix,
    /// `U B W`.
    pub b: Matrix,
    /// `W^T C V`.
    pub c: Matrix,
    pub report: FormReport,
}

impl KernelSplitForm {
    pub fn c23(&self) -> Matrix {
        let m = self.c.nrows();
        let n = self.e.nrows();
        block(&self.c, m - self.n3.min(m)..m, n - self.n3..n)
    }
}

pub fn reduce_kernel_split(
    sys: &DescriptorSystem,
    q: Option<&Matrix>,
    tol: &RankTolerance,
) -> KernelSplitForm {
    let n = sys.n();
    let m = sys.m();
    let (u1, n1) = row_compress(&sys.e, tol, Placement::Leading);
    let ue = u1.matrix() * &sys.e;
    let v1 = col_compress_to(&block(&ue, 0..n1, 0..n), n1, Placement::Leading);
    let a1 = u1.matrix() * &sys.a * v1.matrix();

    let trailing = block(&a1, n1..n, n1..n);
    let (p, n2) = row_compress_at(&trailing, norm2(&sys.a), tol, Placement::Leading);
    let pt = p.matrix() * &trailing;
    let qm = col_compress_to(&block(&pt, 0..n2, 0..n - n1), n2, Placement::Leading);
    let n3 = n - n1 - n2;

    let u = OrthogonalFactor::from_matrix_unchecked(p.embed_trailing(n).matrix() * u1.matrix());
    let v = OrthogonalFactor::from_matrix_unchecked(v1.matrix() * qm.embed_trailing(n).matrix());

    let cv = &sys.c * v.matrix();
    let c3 = block(&cv, 0..m, n1 + n2..n);
    let (wt, c3_rank) = row_compress_at(&c3, norm2(&sys.c), tol, Placement::Trailing);
    let w = wt.transpose();

    let mut e = u.matrix() * &sys.e * v.matrix();
    let mut a = u.matrix() * &sys.a * v.matrix();
    let b = u.matrix() * &sys.b * w.matrix();
    let mut c = w.matrix().transpose() * &cv;

    let mut report = FormReport::new("kernel_split");
    report.size("n1", n1);
    report.size("n2", n2);
    report.size("n3", n3);
    report.size("rank(C3)", c3_rank);
    let (se, sa, sc) = (norm2(&sys.e), norm2(&sys.a), norm2(&sys.c));
    report.zero("E outside E11 (rows)", &block(&e, n1..n, 0..n), se, tol);
    report.zero("E outside E11 (cols)", &block(&e, 0..n1, n1..n), se, tol);
    report.zero("A23", &block(&a, n1..n1 + n2, n1 + n2..n), sa, tol);
    report.zero("A32", &block(&a, n1 + n2..n, n1..n1 + n2), sa, tol);
    report.zero("A33", &block(&a, n1 + n2..n, n1 + n2..n), sa, tol);
    report.zero("C13", &block(&c, 0..m - c3_rank, n1 + n2..n), sc, tol);
    report.nonsingular("E11", &block(&e, 0..n1, 0..n1), tol);
    report.nonsingular("A22", &block(&a, n1..n1 + n2, n1..n1 + n2), tol);
    if c3_rank == n3 && n3 <= m {
        report.nonsingular("C23", &block(&c, m - n3..m, n1 + n2..n), tol);
    }
    report.orthogonal("U", &u);
    report.orthogonal("V", &v);
    report.orthogonal("W", &w);

    clear(&mut e, n1..n, 0..n);
    clear(&mut e, 0..n1, n1..n);
    clear(&mut a, n1..n1 + n2, n1 + n2..n);
    clear(&mut a, n1 + n2..n, n1..n);
    clear(&mut c, 0..m - c3_rank, n1 + n2..n);

    let (ut, vt) = (u.matrix().transpose(), v.matrix().transpose());
    report.reconstruction_residual = reconstruction(&[
        (&ut * &e * &vt, &sys.e),
        (&ut * &a * &vt, &sys.a),
        (&ut * &b * w.matrix().transpose(), &sys.b),
        (w.matrix() * &c * &vt, &sys.c),
    ]);

    if let Some(q) = q {
        let tq = u.matrix() * q * v.matrix();
        report.q_pattern_residual = Some(pattern_residual(
            &tq,
            &[n1, n2, n3],
            &[
                &[true, false, false],
                &[true, true, false],
                &[true, true, true],
            ],
        ));
    }

    KernelSplitForm {
        u,
        v,
        w,
        n1,
        n2,
        n3,
        c3_rank,
        e,
        a,
        b,
        c,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::random_ph_system;

    fn tol() -> RankTolerance {
        RankTolerance::default()
    }

    fn sys(e: &[f64], a: &[f64]) -> DescriptorSystem {
        DescriptorSystem::new(
            Matrix::from_row_slice(2, 2, e),
            Matrix::from_row_slice(2, 2, a),
            Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
            Matrix::from_row_slice(1, 2, &[0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn identity_e() {
        let s = DescriptorSystem::new(
            Matrix::identity(3, 3),
            Matrix::from_fn(3, 3, |r, c| (r + 2 * c) as f64),
            Matrix::from_fn(3, 1, |r, _| r as f64),
            Matrix::from_fn(1, 3, |_, c| c as f64),
        )
        .unwrap();
        let f = reduce_kernel_split(&s, None, &tol());
        assert_eq!((f.n1, f.n2, f.n3), (3, 0, 0));
        assert!(f.report.holds());
    }

    #[test]
    fn worked_examples() {
        // det(sE - A) = 1: the trailing A block after compressing E is zero
        let f = reduce_kernel_split(
            &sys(&[1.0, 0.0, 0.0, 0.0], &[0.0, 1.0, -1.0, 0.0]),
            None,
            &tol(),
        );
        assert_eq!((f.n1, f.n2, f.n3), (1, 0, 1));
        assert_eq!(f.c3_rank, 1);
        assert!(f.report.holds(), "{:?}", f.report.failures());

        let f = reduce_kernel_split(
            &sys(&[1.0, 0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0, 0.0]),
            None,
            &tol(),
        );
        assert_eq!((f.n1, f.n2, f.n3), (1, 0, 1));

        let f = reduce_kernel_split(
            &sys(&[1.0, 0.0, 0.0, 0.0], &[-1.0, 0.0, 0.0, -2.0]),
            None,
            &tol(),
        );
        assert_eq!((f.n1, f.n2, f.n3), (1, 1, 0));
    }

    #[test]
    fn generated_systems() {
        for seed in 0..60 {
            let n = 3 + seed as usize % 6;
            let (s, real) = random_ph_system(
                n,
                1 + seed as usize % 3,
                seed as usize % n,
                1 + seed as usize % 3,
                seed,
                seed % 2 == 1,
            )
            .unwrap();
            let f = reduce_kernel_split(&s, Some(&real.q), &tol());
            assert_eq!(f.n1, crate::matops::rank(&s.e, &tol()));
            assert!(f.report.holds(), "seed {seed}: {:?}", f.report.failures());
            assert!(f.report.reconstruction_residual <= 1e-12);
            assert!(f.report.max_orthogonality_defect() <= 1e-12 * n as f64);
            assert!(f.report.q_pattern_residual.unwrap() <= 1e-9, "seed {seed}");
        }
    }
}
