use super::{clear, norm2, pattern_residual, reconstruction, FormReport};
use crate::error::{Error, Result};
use crate::matops::{
    block, col_compress_to, rank, row_compress, row_compress_to, vstack, Matrix, OrthogonalFactor,
    Placement, RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// Input/output condensed form with state blocks of sizes
/// `(p1, p2, p3) = (n - r_b, r_e + r_b - n, n - r_e)` and input/output
/// blocks `(p2, p3)`:
///
/// ```text
/// U E V = [E11 E12 0]   U B W = [ 0  B12]   W^T C V = [ 0  C12  0 ]
///         [E21 E22 0]           [B21 B22]             [C21 C22 C23]
///         [ 0   0  0]           [ 0  B32]
/// ```
///
/// with `E11`, `B21`, `B32`, `C12`, `C23` nonsingular.
#[derive(Clone, Debug)]
pub struct IoCondensedForm {
    pub u: OrthogonalFactor,
    pub v: OrthogonalFactor,
    pub w: OrthogonalFactor,
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub e: Matrix,
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub report: FormReport,
}

impl IoCondensedForm {
    fn state(&self, i: usize) -> std::ops::Range<usize> {
        let (p1, p2) = (self.p1, self.p2);
        [0..p1, p1..p1 + p2, p1 + p2..p1 + p2 + self.p3][i].clone()
    }

    fn port(&self, i: usize) -> std::ops::Range<usize> {
        [0..self.p2, self.p2..self.p2 + self.p3][i].clone()
    }

    /// Block `(i, j)` of `U E V` (zero based, state partition both sides).
    pub fn e_blk(&self, i: usize, j: usize) -> Matrix {
        block(&self.e, self.state(i), self.state(j))
    }

    pub fn a_blk(&self, i: usize, j: usize) -> Matrix {
        block(&self.a, self.state(i), self.state(j))
    }

    /// Block `(i, j)` of `U B W` (state rows, port columns).
    pub fn b_blk(&self, i: usize, j: usize) -> Matrix {
        block(&self.b, self.state(i), self.port(j))
    }

    /// Block `(i, j)` of `W^T C V` (port rows, state columns).
    pub fn c_blk(&self, i: usize, j: usize) -> Matrix {
        block(&self.c, self.port(i), self.state(j))
    }
}

pub fn reduce_io_condensed(
    sys: &DescriptorSystem,
    q: Option<&Matrix>,
    tol: &RankTolerance,
) -> Result<IoCondensedForm> {
    let (n, m) = (sys.n(), sys.m());
    let rec = rank(&vstack(&[&sys.e, &sys.c]), tol);
    if rec < n {
        return Err(Error::Precondition(format!(
            "rank [E; C] = {rec} < n = {n}"
        )));
    }
    let rc = rank(&sys.c, tol);
    if rc < m {
        return Err(Error::Precondition(format!(
            "rank C = {rc} < m = {m}; compress the outputs first"
        )));
    }
    let rb = rank(&sys.b, tol);
    if rb < m {
        return Err(Error::Precondition(format!("rank B = {rb} < m = {m}")));
    }

    let (u1, re) = row_compress(&sys.e, tol, Placement::Leading);
    if re + rb < n {
        return Err(Error::Structure(format!(
            "rank E + rank B = {} < n = {n}",
            re + rb
        )));
    }
    let (p1, p2, p3) = (n - rb, re + rb - n, n - re);
    let ue = u1.matrix() * &sys.e;
    let v1 = col_compress_to(&block(&ue, 0..re, 0..n), re, Placement::Leading);

    let b1 = u1.matrix() * &sys.b;
    let w = col_compress_to(&block(&b1, re..n, 0..m), p3, Placement::Trailing);
    let b2 = &b1 * w.matrix();
    let c2 = w.matrix().transpose() * &sys.c * v1.matrix();

    let u2 = row_compress_to(&block(&b2, 0..re, 0..p2), p2, Placement::Trailing);
    let v2 = col_compress_to(&block(&c2, 0..p2, 0..re), p2, Placement::Trailing);
    let u = OrthogonalFactor::from_matrix_unchecked(u2.embed_leading(n).matrix() * u1.matrix());
    let v = OrthogonalFactor::from_matrix_unchecked(v1.matrix() * v2.embed_leading(n).matrix());

    let mut e = u.matrix() * &sys.e * v.matrix();
    let a = u.matrix() * &sys.a * v.matrix();
    let mut b = u.matrix() * &sys.b * w.matrix();
    let mut c = w.matrix().transpose() * &sys.c * v.matrix();

    let mut report = FormReport::new("io_condensed");
    report.size("p1", p1);
    report.size("p2", p2);
    report.size("p3", p3);
    let (se, sb, sc) = (norm2(&sys.e), norm2(&sys.b), norm2(&sys.c));
    let (s1, s2, s3) = (0..p1, p1..p1 + p2, p1 + p2..n);
    let (o1, o2) = (0..p2, p2..m);
    report.zero("E rows 3", &block(&e, s3.clone(), 0..n), se, tol);
    report.zero("E cols 3", &block(&e, 0..n, s3.clone()), se, tol);
    report.zero("B11", &block(&b, s1.clone(), o1.clone()), sb, tol);
    report.zero("B31", &block(&b, s3.clone(), o1.clone()), sb, tol);
    report.zero("C11", &block(&c, o1.clone(), s1.clone()), sc, tol);
    report.zero("C13", &block(&c, o1.clone(), s3.clone()), sc, tol);
    report.nonsingular("E11", &block(&e, s1.clone(), s1.clone()), tol);
    report.nonsingular("B21", &block(&b, s2.clone(), o1.clone()), tol);
    report.nonsingular("B32", &block(&b, s3.clone(), o2.clone()), tol);
    report.nonsingular("C12", &block(&c, o1.clone(), s2.clone()), tol);
    report.nonsingular("C23", &block(&c, o2.clone(), s3.clone()), tol);
    report.orthogonal("U", &u);
    report.orthogonal("V", &v);
    report.orthogonal("W", &w);

    clear(&mut e, s3.clone(), 0..n);
    clear(&mut e, 0..n, s3.clone());
    clear(&mut b, s1.clone(), o1.clone());
    clear(&mut b, s3.clone(), o1.clone());
    clear(&mut c, o1.clone(), s1);
    clear(&mut c, o1, s3);

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
            &[p1, p2, p3],
            &[
                &[true, true, false],
                &[false, true, false],
                &[true, true, true],
            ],
        ));
    }

    Ok(IoCondensedForm {
        u,
        v,
        w,
        p1,
        p2,
        p3,
        e,
        a,
        b,
        c,
        report,
    })
}
