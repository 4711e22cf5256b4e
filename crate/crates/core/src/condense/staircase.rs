use serde::Serialize;

use super::{clear, norm2, reconstruction, FormReport};
use crate::analysis::full_row_rank_sampled;
use crate::matops::{
    block, complete_orthonormal, hstack, left_nullspace_scaled, range_basis_scaled, rank_at,
    right_nullspace_scaled, vstack, Matrix, OrthogonalFactor, RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// Block conditions that together are equivalent to the derivative
/// feedback condition.
#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
pub struct DerivativeBlockConditions {
    pub sizes_match: bool,
    pub e22_zero: bool,
    pub a22_full_rank: bool,
    pub e11_b1_full_rank: bool,
}

impl DerivativeBlockConditions {
    pub fn holds(&self) -> bool {
        self.sizes_match && self.e22_zero && self.a22_full_rank && self.e11_b1_full_rank
    }
}

/// ```text
/// U E V = [E11  0 ]   U A V = [A11  0 ]   C V = [C1 0]
///         [E21 E22]           [A21 A22]
/// ```
///
/// with `E11`, `A11` of size `nh1 x n1` and `E22`, `A22` of size
/// `nh2 x n2`. The trailing columns of `V` span the largest subspace `S` of
/// `ker C` with `E S` contained in `A S`; the trailing rows of `U` span
/// `A S`. Consequently `[E11; C1]` has full column rank and `s E22 - A22`
/// has full row rank for every `s`.
#[derive(Clone, Debug)]
pub struct OutputStaircaseForm {
    pub u: OrthogonalFactor,
    pub v: OrthogonalFactor,
    pub n1: usize,
    pub n2: usize,
    pub nh1: usize,
    pub nh2: usize,
    pub e: Matrix,
    pub a: Matrix,
    /// `U B`.
    pub b: Matrix,
    /// `C V`.
    pub c: Matrix,
    pub conditions: DerivativeBlockConditions,
    pub report: FormReport,
}

impl OutputStaircaseForm {
    pub fn e11(&self) -> Matrix {
        block(&self.e, 0..self.nh1, 0..self.n1)
    }

    pub fn b1(&self) -> Matrix {
        block(&self.b, 0..self.nh1, 0..self.b.ncols())
    }

    pub fn c1(&self) -> Matrix {
        block(&self.c, 0..self.c.nrows(), 0..self.n1)
    }
}

/// Largest subspace `S` of `ker C` with `E S` inside `A S`, as an
/// orthonormal basis.
fn output_nulling_subspace(sys: &DescriptorSystem, tol: &RankTolerance) -> Matrix {
    let n = sys.n();
    let an = norm2(&sys.a);
    let ce = norm2(&sys.c).max(norm2(&sys.e));
    let mut w = Matrix::zeros(n, 0);
    for _ in 0..=n {
        let nb = left_nullspace_scaled(&(&sys.a * &w), an, tol);
        let constraint = vstack(&[&sys.c, &(nb.transpose() * &sys.e)]);
        let next = right_nullspace_scaled(&constraint, ce, tol);
        if next.ncols() <= w.ncols() {
            break;
        }
        w = next;
    }
    w
}

pub fn reduce_output_staircase(sys: &DescriptorSystem, tol: &RankTolerance) -> OutputStaircaseForm {
    let n = sys.n();
    let w = output_nulling_subspace(sys, tol);
    let n2 = w.ncols();
    let n1 = n - n2;
    let y = range_basis_scaled(&(&sys.a * &w), norm2(&sys.a), tol);
    let nh2 = y.ncols();
    let nh1 = n - nh2;

    let full_w = complete_orthonormal(&w);
    let v = OrthogonalFactor::from_matrix_unchecked(hstack(&[&block(&full_w, 0..n, n2..n), &w]));
    let full_y = complete_orthonormal(&y);
    let u = OrthogonalFactor::from_matrix_unchecked(vstack(&[
        &block(&full_y, 0..n, nh2..n).transpose(),
        &y.transpose(),
    ]));

    let mut e = u.matrix() * &sys.e * v.matrix();
    let mut a = u.matrix() * &sys.a * v.matrix();
    let b = u.matrix() * &sys.b;
    let mut c = &sys.c * v.matrix();
    let m = c.nrows();

    let mut report = FormReport::new("output_staircase");
    report.size("n1", n1);
    report.size("n2", n2);
    report.size("nh1", nh1);
    report.size("nh2", nh2);
    let (se, sa, sc) = (norm2(&sys.e), norm2(&sys.a), norm2(&sys.c));
    report.zero("E12", &block(&e, 0..nh1, n1..n), se, tol);
    report.zero("A12", &block(&a, 0..nh1, n1..n), sa, tol);
    report.zero("C2", &block(&c, 0..m, n1..n), sc, tol);
    let e11 = block(&e, 0..nh1, 0..n1);
    let c1 = block(&c, 0..m, 0..n1);
    report.rank_equals("[E11; C1]", &vstack(&[&e11, &c1]), n1, tol);
    report.orthogonal("U", &u);
    report.orthogonal("V", &v);

    let e22 = block(&e, nh1..n, n1..n);
    let a22 = block(&a, nh1..n, n1..n);
    if !full_row_rank_sampled(&e22, &a22, tol) {
        report
            .warnings
            .push("s E22 - A22 loses row rank at a sample point".into());
    }
    let e22_scale = tol.threshold_for(se, nh2.max(1), n2.max(1)) * 10.0;
    let conditions = DerivativeBlockConditions {
        sizes_match: n2 == nh2,
        e22_zero: e22.is_empty() || e22.norm() <= e22_scale,
        a22_full_rank: rank_at(&a22, sa, tol) == n2,
        e11_b1_full_rank: rank_at(
            &hstack(&[&e11, &block(&b, 0..nh1, 0..b.ncols())]),
            se.max(norm2(&sys.b)),
            tol,
        ) == n1,
    };

    clear(&mut e, 0..nh1, n1..n);
    clear(&mut a, 0..nh1, n1..n);
    clear(&mut c, 0..m, n1..n);

    let (ut, vt) = (u.matrix().transpose(), v.matrix().transpose());
    report.reconstruction_residual = reconstruction(&[
        (&ut * &e * &vt, &sys.e),
        (&ut * &a * &vt, &sys.a),
        (&ut * &b, &sys.b),
        (&c * &vt, &sys.c),
    ]);

    OutputStaircaseForm {
        u,
        v,
        n1,
        n2,
        nh1,
        nh2,
        e,
        a,
        b,
        c,
        conditions,
        report,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::check_derivative_condition;
    use crate::matops::block_diag;
    use crate::sysmodel::random_ph_system;

    fn tol() -> RankTolerance {
        RankTolerance::default()
    }

    #[test]
    fn identity_e_is_trivial() {
        let s = DescriptorSystem::new(
            Matrix::identity(3, 3),
            Matrix::from_fn(3, 3, |r, c| (r * c) as f64 - 1.0),
            Matrix::from_fn(3, 1, |r, _| r as f64),
            Matrix::from_fn(1, 3, |_, c| c as f64),
        )
        .unwrap();
        let f = reduce_output_staircase(&s, &tol());
        assert_eq!((f.n1, f.n2), (3, 0));
        assert!(f.conditions.holds());
        assert!(f.report.holds());
    }

    #[test]
    fn scalar_algebraic_equation() {
        let s = DescriptorSystem::new(
            Matrix::zeros(1, 1),
            Matrix::from_element(1, 1, -1.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let f = reduce_output_staircase(&s, &tol());
        assert_eq!((f.n1, f.n2), (1, 0));
    }

    #[test]
    fn block_system_sizes() {
        // regular part (2 states, measured) plus an unmeasured algebraic part
        let e = block_diag(&[&Matrix::identity(2, 2), &Matrix::zeros(2, 2)]);
        let a = block_diag(&[
            &Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -1.0]),
            &Matrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
        ]);
        let b = Matrix::from_row_slice(4, 1, &[1.0, 0.0, 0.0, 0.0]);
        let c = b.transpose();
        let s = DescriptorSystem::new(e, a, b, c).unwrap();
        let f = reduce_output_staircase(&s, &tol());
        assert_eq!((f.n1, f.n2, f.nh1, f.nh2), (2, 2, 2, 2));
        assert!(f.conditions.holds());
        assert!(f.report.holds(), "{:?}", f.report.failures());
    }

    #[test]
    fn agrees_with_rank_test() {
        let mut seen = [0usize; 2];
        for seed in 0..80 {
            let n = 3 + seed as usize % 5;
            let (s, _) = random_ph_system(
                n,
                1 + seed as usize % 2,
                seed as usize % n,
                1 + seed as usize % 3,
                seed,
                seed % 3 == 0,
            )
            .unwrap();
            let f = reduce_output_staircase(&s, &tol());
            assert!(f.report.holds(), "seed {seed}: {:?}", f.report.failures());
            assert!(f.report.reconstruction_residual <= 1e-12);
            let verdict = check_derivative_condition(&s, &tol());
            assert_eq!(
                f.conditions.holds(),
                verdict.holds,
                "seed {seed}: {:?}",
                f.conditions
            );
            seen[verdict.holds as usize] += 1;
        }
        assert!(seen[0] > 0 && seen[1] > 0, "{seen:?}");
    }
}
