use super::{norm2, pattern_residual, reconstruction, FormReport, IoCondensedForm};
use crate::error::{Error, Result};
use crate::matops::{
    assemble, block, block_diag, col_compress_to, hstack, inverse, row_compress_to, solve,
    svd_full, vstack, Matrix, OrthogonalFactor, Placement, RankTolerance,
};
use crate::sysmodel::DescriptorSystem;

/// Refinement of an [`IoCondensedForm`] by block-elementary transformations
/// `X`, `Y` (not orthogonal) and orthogonal `Z`, `Zc`, `Wc` acting on the
/// `m = p2 + p3` trailing coordinates.
///
/// ```text
/// X E Y = diag(E11, Eh22, 0)
/// X B W = [  0     0  ]   W^T C Y = [0 Ch12  0 ]
///         [Bh21  Bh22 ]             [0 Ch22 C23]
///         [  0    B32 ]
/// ```
///
/// The trailing `m x m` block `G` of `X A Y` satisfies
/// `Z G Zc = diag(A22, 0)` with `A22` diagonal positive of size `mu`, and
///
/// ```text
/// Z [Bh21 Bh22; 0 B32] Wc = [Bb21 Bb22; 0 Bb32]
/// Wc^T [Ch12 0; Ch22 C23] Zc = [Cc12 0; Cc22 Cc23]
/// ```
///
/// with `Bb21`, `Cc12` (`mu x mu`) and `Bb32`, `Cc23` nonsingular.
#[derive(Clone, Debug)]
pub struct RefinedForm {
    pub p1: usize,
    pub p2: usize,
    pub p3: usize,
    pub mu: usize,
    /// Output-side factor of the underlying condensed form.
    pub w: OrthogonalFactor,
    pub x: Matrix,
    pub y: Matrix,
    pub z: OrthogonalFactor,
    pub zc: OrthogonalFactor,
    pub wc: OrthogonalFactor,
    pub e11: Matrix,
    pub e_hat22: Matrix,
    pub b_hat21: Matrix,
    pub c_hat12: Matrix,
    /// `X A Y`.
    pub a: Matrix,
    /// Diagonal `mu x mu` block.
    pub a22: Matrix,
    /// `Z [Bh21 Bh22; 0 B32] Wc`, `m x m`.
    pub bb: Matrix,
    /// `Wc^T [Ch12 0; Ch22 C23] Zc`, `m x m`.
    pub cc: Matrix,
    pub cond_x: f64,
    pub cond_y: f64,
    pub report: FormReport,
}

impl RefinedForm {
    pub fn m(&self) -> usize {
        self.p2 + self.p3
    }

    pub fn bb21(&self) -> Matrix {
        block(&self.bb, 0..self.mu, 0..self.mu)
    }

    pub fn cc12(&self) -> Matrix {
        block(&self.cc, 0..self.mu, 0..self.mu)
    }
}

pub fn refine(
    form: &IoCondensedForm,
    sys: &DescriptorSystem,
    q: Option<&Matrix>,
    tol: &RankTolerance,
) -> Result<RefinedForm> {
    let (p1, p2, p3) = (form.p1, form.p2, form.p3);
    let n = p1 + p2 + p3;
    let m = p2 + p3;
    let e11 = form.e_blk(0, 0);
    let (e12, e21, e22) = (form.e_blk(0, 1), form.e_blk(1, 0), form.e_blk(1, 1));
    let (b12, b21, b22, b32) = (
        form.b_blk(0, 1),
        form.b_blk(1, 0),
        form.b_blk(1, 1),
        form.b_blk(2, 1),
    );
    let (c12, c21, c22, c23) = (
        form.c_blk(0, 1),
        form.c_blk(1, 0),
        form.c_blk(1, 1),
        form.c_blk(1, 2),
    );

    let cu = row_compress_to(&vstack(&[&e11, &e21]), p1, Placement::Leading);
    let cv = col_compress_to(&hstack(&[&e11, &e12]), p1, Placement::Leading);
    let (u21, u22) = (
        block(cu.matrix(), p1..p1 + p2, 0..p1),
        block(cu.matrix(), p1..p1 + p2, p1..p1 + p2),
    );
    let (v12, v22) = (
        block(cv.matrix(), 0..p1, p1..p1 + p2),
        block(cv.matrix(), p1..p1 + p2, p1..p1 + p2),
    );

    let e_hat22 = (&u21 * &e12 + &u22 * &e22) * &v22;
    let b_hat21 = &u22 * &b21;
    let b_hat22 = &u21 * &b12 + &u22 * &b22;
    let c_hat12 = &c12 * &v22;
    let c_hat22 = &c21 * &v12 + &c22 * &v22;

    let sizes = [p1, p2, p3];
    let (i1, i2, i3) = (
        Matrix::identity(p1, p1),
        Matrix::identity(p2, p2),
        Matrix::identity(p3, p3),
    );
    let l = assemble(
        &sizes,
        &sizes,
        &[
            &[Some(&i1), None, None],
            &[Some(&u21), Some(&u22), None],
            &[None, None, Some(&i3)],
        ],
    );
    let r = assemble(
        &sizes,
        &sizes,
        &[
            &[Some(&i1), Some(&v12), None],
            &[None, Some(&v22), None],
            &[None, None, Some(&i3)],
        ],
    );
    // B32 and C23 are checked nonsingular by the condensed form
    let kill_b = -solve(&b32.transpose(), &b12.transpose(), "B32")?.transpose();
    let kill_c = -solve(&c23, &c21, "C23")?;
    let left = assemble(
        &sizes,
        &sizes,
        &[
            &[Some(&i1), None, Some(&kill_b)],
            &[None, Some(&i2), None],
            &[None, None, Some(&i3)],
        ],
    );
    let right = assemble(
        &sizes,
        &sizes,
        &[
            &[Some(&i1), None, None],
            &[None, Some(&i2), None],
            &[Some(&kill_c), None, Some(&i3)],
        ],
    );
    let x = left * l * form.u.matrix();
    let y = form.v.matrix() * r * right;

    let a = &x * &sys.a * &y;
    let g = block(&a, p1..n, p1..n);
    let svd = svd_full(&g);
    let mu = svd.rank_at(norm2(&a), tol);
    let z = OrthogonalFactor::from_matrix_unchecked(svd.u.transpose());
    let zc = OrthogonalFactor::from_matrix_unchecked(svd.v.clone());
    let a22 = Matrix::from_diagonal(&nalgebra::DVector::from_iterator(
        mu,
        svd.sigma.iter().take(mu).copied(),
    ));

    let bfrak = assemble(
        &[p2, p3],
        &[p2, p3],
        &[&[Some(&b_hat21), Some(&b_hat22)], &[None, Some(&b32)]],
    );
    let cfrak = assemble(
        &[p2, p3],
        &[p2, p3],
        &[&[Some(&c_hat12), None], &[Some(&c_hat22), Some(&c23)]],
    );
    let zb = z.matrix() * &bfrak;
    let wc = col_compress_to(&block(&zb, mu..m, 0..m), m - mu, Placement::Trailing);
    let bb = &zb * wc.matrix();
    let cc = wc.matrix().transpose() * &cfrak * zc.matrix();

    let cond_x = crate::matops::condition_number(&x);
    let cond_y = crate::matops::condition_number(&y);
    let mut report = FormReport::new("refined");
    report.size("p1", p1);
    report.size("p2", p2);
    report.size("p3", p3);
    report.size("mu", mu);
    report.conditioning("X", &x);
    report.conditioning("Y", &y);
    let (nx, ny) = (norm2(&x), norm2(&y));
    let w = form.w.matrix();
    let xey = &x * &sys.e * &y;
    let xbw = &x * &sys.b * w;
    let wcy = w.transpose() * &sys.c * &y;
    let se = nx * norm2(&sys.e) * ny;
    let sb = nx * norm2(&sys.b);
    let sc = norm2(&sys.c) * ny;
    let (s1, s2, s3) = (0..p1, p1..p1 + p2, p1 + p2..n);
    report.zero("XEY (1,2)", &block(&xey, s1.clone(), s2.clone()), se, tol);
    report.zero("XEY (2,1)", &block(&xey, s2.clone(), s1.clone()), se, tol);
    report.zero("XEY row 3", &block(&xey, s3.clone(), 0..n), se, tol);
    report.zero("XEY col 3", &block(&xey, 0..n, s3.clone()), se, tol);
    report.zero("XBW row 1", &block(&xbw, s1.clone(), 0..m), sb, tol);
    report.zero("XBW (3,1)", &block(&xbw, s3.clone(), 0..p2), sb, tol);
    report.zero("W^T C Y col 1", &block(&wcy, 0..m, s1), sc, tol);
    report.zero("W^T C Y (1,3)", &block(&wcy, 0..p2, s3), sc, tol);
    report.zero(
        "Wc^T C (1,2)",
        &block(&cc, 0..mu, mu..m),
        norm2(&cfrak),
        tol,
    );
    report.zero(
        "Z B Wc (2,1)",
        &block(&bb, mu..m, 0..mu),
        norm2(&bfrak),
        tol,
    );
    report.nonsingular("E11", &e11, tol);
    report.nonsingular("Bb21", &block(&bb, 0..mu, 0..mu), tol);
    report.nonsingular("Bb32", &block(&bb, mu..m, mu..m), tol);
    report.nonsingular("Cc12", &block(&cc, 0..mu, 0..mu), tol);
    report.nonsingular("Cc23", &block(&cc, mu..m, mu..m), tol);
    report.orthogonal("Z", &z);
    report.orthogonal("Zc", &zc);
    report.orthogonal("Wc", &wc);

    let xi = inverse(&x, "X")?;
    let yi = inverse(&y, "Y")?;
    let (zero_p1, zero_p3) = (Matrix::zeros(p1, m), Matrix::zeros(p3, p2));
    let e_model = block_diag(&[&e11, &e_hat22, &Matrix::zeros(p3, p3)]);
    let b_model = vstack(&[
        &zero_p1,
        &hstack(&[&b_hat21, &b_hat22]),
        &hstack(&[&zero_p3, &b32]),
    ]);
    let c_model = hstack(&[&Matrix::zeros(m, p1), &cfrak]);
    report.reconstruction_residual = reconstruction(&[
        (&xi * e_model * &yi, &sys.e),
        (&xi * b_model * w.transpose(), &sys.b),
        (w * c_model * &yi, &sys.c),
    ]);

    if let Some(q) = q {
        let tq = xi.transpose() * q * &y;
        report.q_pattern_residual = Some(pattern_residual(
            &tq,
            &sizes,
            &[
                &[true, false, false],
                &[false, true, false],
                &[false, true, true],
            ],
        ));
    }

    let singular: Vec<String> = report
        .nonsingular_blocks
        .iter()
        .filter(|c| !c.ok)
        .map(|c| c.label.clone())
        .collect();
    if !singular.is_empty() {
        return Err(Error::Structure(format!(
            "blocks expected nonsingular are singular: {}",
            singular.join(", ")
        )));
    }

    Ok(RefinedForm {
        p1,
        p2,
        p3,
        mu,
        w: form.w.clone(),
        x,
        y,
        z,
        zc,
        wc,
        e11,
        e_hat22,
        b_hat21,
        c_hat12,
        a,
        a22,
        bb,
        cc,
        cond_x,
        cond_y,
        report,
    })
}
