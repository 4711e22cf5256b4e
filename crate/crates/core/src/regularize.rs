//! Feedback synthesis with mandatory verification.
//!
//! Four modes:
//!
//! * proportional: `u = F y`, makes `(E, A + B F C)` regular of index at
//!   most one;
//! * derivative: `u = -K y'` with `K = K^T >= 0`, makes `(E + B K C, A)`
//!   regular of index at most one with `rank(E + B K C) = rank [E; C]`;
//! * derivative with prescribed rank `r`;
//! * combined: both, with `rank(E + B K C) = r` for any `r` in
//!   `[n - rank B, n]`.
//!
//! Every result is re-checked from scratch before it is returned. The
//! realization (`Q` in particular) is never used to construct feedback; it
//! only enables the structure-preservation part of the verification.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::analysis::{
    check_derivative_condition, check_proportional_condition, check_rank_feasibility,
    completely_observable, finite_eig_count, max_derivative_rank, pencil_index, pencil_regular,
};
use crate::condense::{
    reduce_io_condensed, reduce_kernel_split, reduce_output_staircase, refine, schur_stage,
    FormReport, RefinedForm, SchurStageForm,
};
use crate::error::{Error, Result};
use crate::matops::{
    self, block, block_diag, row_compress, solve, svd_full, Matrix, OrthogonalFactor, Placement,
    RankTolerance,
};
use crate::sysmodel::{validate_ph, DescriptorSystem, PhRealization};

/// Draws of the random factor in the derivative construction.
pub const DERIVATIVE_DRAWS: usize = 32;
/// Geometric scaling steps per draw (factor 10 each).
pub const DERIVATIVE_STEPS: usize = 16;

#[derive(Clone, Copy, Debug, Serialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Proportional,
    Derivative,
    DerivativeRank,
    Combined,
}

#[derive(Clone, Copy, Debug, Serialize, PartialEq)]
pub struct SynthesisOptions {
    pub tol: RankTolerance,
    /// Seed for the randomized factor of the derivative construction.
    pub seed: u64,
    /// Scale of the positive definite block of the proportional feedback.
    pub f22_scale: f64,
    /// Relative tolerance of the structure-preservation checks.
    pub ph_tol: f64,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            tol: RankTolerance::default(),
            seed: 0,
            f22_scale: 1.0,
            ph_tol: 1e-8,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct VerificationReport {
    pub regular: bool,
    pub index: Option<usize>,
    pub rank_closed_e: usize,
    pub finite_eig_count: Option<usize>,
    pub target_rank: Option<usize>,
    /// `None` without a realization.
    pub ph_preserved: Option<bool>,
    pub residuals: BTreeMap<String, f64>,
    pub failures: Vec<String>,
}

impl VerificationReport {
    pub fn success(&self) -> bool {
        self.failures.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct FeedbackSynthesis {
    pub mode: Mode,
    pub f: Option<Matrix>,
    pub k: Option<Matrix>,
    pub target_rank: Option<usize>,
    pub achieved_rank: usize,
    pub verification: VerificationReport,
    /// Reports of the condensed forms the construction went through.
    pub forms: Vec<FormReport>,
    pub notes: Vec<String>,
}

/// Output compression `Wc^T C = [C'; 0]` with `C'` of full row rank.
#[derive(Clone, Debug)]
pub struct OutputCompression {
    pub wc: OrthogonalFactor,
    pub m_reduced: usize,
}

impl OutputCompression {
    /// Lifts an `m' x m'` feedback of the compressed system to `m x m`:
    /// `Wc diag(X, 0) Wc^T`.
    pub fn lift(&self, x: &Matrix) -> Matrix {
        let m = self.wc.dim();
        let padded = block_diag(&[x, &Matrix::zeros(m - self.m_reduced, m - self.m_reduced)]);
        self.wc.matrix() * padded * self.wc.matrix().transpose()
    }

    pub fn is_identity(&self) -> bool {
        self.m_reduced == self.wc.dim()
            && self.wc.matrix() == &Matrix::identity(self.m_reduced, self.m_reduced)
    }
}

/// Removes redundant outputs: returns `(E, A, B Wc1, Wc1^T C)` where the
/// columns of `Wc1` span the range of `C`. `B K' C'` for the reduced system
/// equals `B K C` for `K = lift(K')`.
pub fn precompress_outputs(
    sys: &DescriptorSystem,
    tol: &RankTolerance,
) -> (DescriptorSystem, OutputCompression) {
    let m = sys.m();
    let (u, r) = row_compress(&sys.c, tol, Placement::Leading);
    if r == m {
        let id = OrthogonalFactor::identity(m);
        return (
            sys.clone(),
            OutputCompression {
                wc: id,
                m_reduced: m,
            },
        );
    }
    let wc = u.transpose();
    let wc1 = wc.matrix().columns(0, r).into_owned();
    let reduced = DescriptorSystem::new_unchecked(
        sys.e.clone(),
        sys.a.clone(),
        &sys.b * &wc1,
        wc1.transpose() * &sys.c,
    );
    (reduced, OutputCompression { wc, m_reduced: r })
}

/// Re-checks a closed loop from scratch.
///
/// `require_psd_k` adds `K >= 0` to the success criteria; otherwise the
/// violation is only recorded.
pub fn verify(
    sys: &DescriptorSystem,
    k: Option<&Matrix>,
    f: Option<&Matrix>,
    target_rank: Option<usize>,
    real: Option<&PhRealization>,
    opts: &SynthesisOptions,
    require_psd_k: bool,
) -> Result<VerificationReport> {
    let tol = &opts.tol;
    let raw = sys.closed_loop(k, f);
    let (bn, cn) = (matops::spectral_norm(&sys.b), matops::spectral_norm(&sys.c));
    let e_scale = matops::spectral_norm(&sys.e).max(bn * k.map_or(0.0, matops::spectral_norm) * cn);
    let a_scale = matops::spectral_norm(&sys.a).max(bn * f.map_or(0.0, matops::spectral_norm) * cn);
    let cl = DescriptorSystem::new_unchecked(
        truncate_at_scale(&raw.e, e_scale, tol),
        truncate_at_scale(&raw.a, a_scale, tol),
        raw.b.clone(),
        raw.c.clone(),
    );
    let regular = pencil_regular(&cl.e, &cl.a, tol)?;
    let (index, finite) = if regular {
        (
            pencil_index(&cl.e, &cl.a, tol).ok(),
            finite_eig_count(&cl.e, &cl.a, tol).ok(),
        )
    } else {
        (None, None)
    };
    let rank_closed_e = matops::rank(&cl.e, tol);
    let mut failures = Vec::new();
    if !regular {
        failures.push("closed-loop pencil is singular".to_string());
    }
    match index {
        Some(i) if i <= 1 => {}
        Some(i) => failures.push(format!("closed-loop index {i} > 1")),
        None if regular => failures.push("closed-loop index could not be determined".to_string()),
        None => {}
    }
    if regular && finite != Some(rank_closed_e) {
        failures.push(format!(
            "finite eigenvalue count {finite:?} differs from rank of closed-loop E {rank_closed_e}"
        ));
    }
    if let Some(r) = target_rank {
        if r != rank_closed_e {
            failures.push(format!(
                "rank of closed-loop E is {rank_closed_e}, target {r}"
            ));
        }
    }

    let mut residuals = BTreeMap::new();
    if let Some(k) = k {
        residuals.insert("K_asymmetry".to_string(), matops::asymmetry(k));
        let viol = psd_violation_abs(k);
        residuals.insert("K_psd_violation".to_string(), viol);
        if matops::asymmetry(k) > opts.ph_tol {
            failures.push("K is not symmetric".to_string());
        }
        if require_psd_k && viol > opts.ph_tol {
            failures.push(format!(
                "K is not positive semidefinite (violation {viol:.3e})"
            ));
        }
    }
    if let Some(f) = f {
        residuals.insert("F_asymmetry".to_string(), matops::asymmetry(f));
    }

    let mut ph_preserved = None;
    if let Some(real) = real {
        let cl_real = match f {
            Some(f) => real.with_proportional_feedback(&sys.b, f),
            None => real.clone(),
        };
        let report = validate_ph(&cl, &cl_real, opts.ph_tol)?;
        for (name, v) in &report.residuals {
            residuals.insert(format!("closed_{name}"), *v);
        }
        if !report.verdict {
            failures.push(format!(
                "closed loop is not port-Hamiltonian: {}",
                report.failing().join(", ")
            ));
        }
        ph_preserved = Some(report.verdict);
    }

    Ok(VerificationReport {
        regular,
        index,
        rank_closed_e,
        finite_eig_count: finite,
        target_rank,
        ph_preserved,
        residuals,
        failures,
    })
}

/// Drops singular values of `m` that are negligible relative to `scale`,
/// the size of the terms `m` was summed from. Cancellation in `E + B K C`
/// otherwise leaves rounding noise that a relative rank test would count.
fn truncate_at_scale(m: &Matrix, scale: f64, tol: &RankTolerance) -> Matrix {
    let svd = svd_full(m);
    let thr = tol.threshold_for(scale, m.nrows(), m.ncols());
    if svd.sigma.iter().all(|&s| s > thr) {
        return m.clone();
    }
    let mut out = Matrix::zeros(m.nrows(), m.ncols());
    for (i, &s) in svd.sigma.iter().enumerate() {
        if s > thr {
            out += svd.u.column(i) * svd.v.column(i).transpose() * s;
        }
    }
    out
}

/// `max(0, -lambda_min(sym K)) / max(|K|, tiny)`.
fn psd_violation_abs(k: &Matrix) -> f64 {
    let ev = matops::sym_eigenvalues(k);
    let Some(&lo) = ev.first() else { return 0.0 };
    let scale = matops::spectral_norm(k);
    if scale == 0.0 {
        0.0
    } else {
        (-lo).max(0.0) / scale
    }
}

#[allow(clippy::too_many_arguments)]
fn finish(
    mode: Mode,
    sys: &DescriptorSystem,
    k: Option<Matrix>,
    f: Option<Matrix>,
    target_rank: Option<usize>,
    real: Option<&PhRealization>,
    opts: &SynthesisOptions,
    forms: Vec<FormReport>,
    notes: Vec<String>,
) -> Result<FeedbackSynthesis> {
    let verification = verify(
        sys,
        k.as_ref(),
        f.as_ref(),
        target_rank,
        real,
        opts,
        mode == Mode::Derivative,
    )?;
    if !verification.success() {
        let dump = serde_json::to_string(&verification).unwrap_or_default();
        return Err(Error::VerificationFailed(format!(
            "{}; report: {dump}",
            verification.failures.join("; ")
        )));
    }
    Ok(FeedbackSynthesis {
        mode,
        achieved_rank: verification.rank_closed_e,
        f,
        k,
        target_rank,
        verification,
        forms,
        notes,
    })
}

/// Proportional feedback `F = -W diag(0, f22 I) W^T` that turns the
/// unobserved algebraic part into an observed and damped one.
pub fn regularize_proportional(
    sys: &DescriptorSystem,
    real: Option<&PhRealization>,
    opts: &SynthesisOptions,
) -> Result<FeedbackSynthesis> {
    if !(opts.f22_scale > 0.0 && opts.f22_scale.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "f22 scale must be positive, got {}",
            opts.f22_scale
        )));
    }
    let verdict = check_proportional_condition(sys, &opts.tol);
    if !verdict.holds {
        return Err(Error::ProportionalConditionFailed {
            rank: verdict.rank("rank[E, AS; 0, CS]").unwrap_or(0),
            n: sys.n(),
        });
    }
    let form = reduce_kernel_split(sys, real.map(|r| &r.q), &opts.tol);
    if form.c3_rank != form.n3 {
        return Err(Error::Structure(format!(
            "trailing output block has rank {} but {} columns",
            form.c3_rank, form.n3
        )));
    }
    let m = sys.m();
    let mut d = Matrix::zeros(m, m);
    for i in m - form.n3..m {
        d[(i, i)] = opts.f22_scale;
    }
    let f = -(form.w.matrix() * d * form.w.matrix().transpose());
    let f = matops::sym_part(&f);
    let forms = vec![form.report];
    finish(
        Mode::Proportional,
        sys,
        None,
        Some(f),
        None,
        real,
        opts,
        forms,
        Vec::new(),
    )
}

/// Derivative feedback of maximal rank `rank [E; C]`.
pub fn regularize_derivative(
    sys: &DescriptorSystem,
    real: Option<&PhRealization>,
    opts: &SynthesisOptions,
) -> Result<FeedbackSynthesis> {
    let tol = &opts.tol;
    let verdict = check_derivative_condition(sys, tol);
    if !verdict.holds {
        return Err(Error::DerivativeConditionFailed {
            first: verdict.rank("rank[E, AS; C, 0]").unwrap_or(0),
            second: verdict.rank("rank[E, AS, B]").unwrap_or(0),
            n: sys.n(),
        });
    }
    let form = reduce_output_staircase(sys, tol);
    if !form.conditions.holds() {
        return Err(Error::Structure(format!(
            "staircase block conditions disagree with the rank test: {:?}",
            form.conditions
        )));
    }
    let target = max_derivative_rank(sys, tol);
    let (e11, b1, c1) = (form.e11(), form.b1(), form.c1());
    let n1 = form.n1;
    let m = sys.m();
    let forms = vec![form.report.clone()];

    if matops::rank(&e11, tol) == n1 {
        return finish(
            Mode::Derivative,
            sys,
            Some(Matrix::zeros(m, m)),
            None,
            Some(target),
            real,
            opts,
            forms,
            Vec::new(),
        );
    }

    // E11 = P^T diag(S, 0) Qe^T; the gain must make the trailing
    // (n1 - e) x (n1 - e) block of P (B1 K C1) Qe nonsingular.
    let svd = svd_full(&e11);
    let e = svd.rank(tol);
    let pb = svd.u.transpose() * &b1;
    let cq = &c1 * &svd.v;
    let bb = block(&pb, e..n1, 0..m);
    let cb = block(&cq, 0..m, e..n1);
    let scale0 = {
        let d = matops::spectral_norm(&b1) * matops::spectral_norm(&c1);
        let en = matops::spectral_norm(&e11);
        if d > 0.0 && en > 0.0 {
            en / d
        } else {
            1.0
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut last_failure = None;
    for draw in 0..DERIVATIVE_DRAWS {
        let x = Matrix::from_fn(m, m, |_, _| rng.gen_range(-1.0..1.0));
        let g = &x * x.transpose();
        let g = &g / matops::spectral_norm(&g);
        if matops::rank(&(&bb * &g * &cb), tol) < n1 - e {
            continue;
        }
        let mut eps = scale0;
        for _ in 0..DERIVATIVE_STEPS {
            let k = &g * eps;
            if matops::rank(&(&e11 + &b1 * &k * &c1), tol) == n1 {
                let notes = vec![format!("draw {draw}, scale {eps:.3e}")];
                match finish(
                    Mode::Derivative,
                    sys,
                    Some(k),
                    None,
                    Some(target),
                    real,
                    opts,
                    forms.clone(),
                    notes,
                ) {
                    Ok(s) => return Ok(s),
                    Err(err) => last_failure = Some(err),
                }
            }
            eps /= 10.0;
        }
    }
    if let Some(Error::VerificationFailed(msg)) = last_failure {
        return Err(Error::VerificationFailed(msg));
    }
    Err(Error::SynthesisExhausted {
        draws: DERIVATIVE_DRAWS,
        steps: DERIVATIVE_STEPS,
    })
}

/// The complete combined-feedback chain on an output-compressed system.
struct Chain {
    refined: RefinedForm,
    schur: SchurStageForm,
    /// `-Bh21^-1 Eh22 Ch12^-1`, cancels the middle block of `E`.
    cancel: Matrix,
    forms: Vec<FormReport>,
}

fn build_chain(sys: &DescriptorSystem, q: Option<&Matrix>, tol: &RankTolerance) -> Result<Chain> {
    let io = reduce_io_condensed(sys, q, tol)?;
    let refined = refine(&io, sys, q, tol)?;
    let schur = schur_stage(&refined, sys, q, tol)?;
    let rhs = solve(&refined.b_hat21, &refined.e_hat22, "Bh21")?;
    let cancel = -solve(&refined.c_hat12.transpose(), &rhs.transpose(), "Ch12")?.transpose();
    let forms = vec![
        io.report.clone(),
        refined.report.clone(),
        schur.report.clone(),
    ];
    Ok(Chain {
        refined,
        schur,
        cancel,
        forms,
    })
}

impl Chain {
    /// `K = W (diag(cancel, 0) + Wc P^T KK P Wc^T) W^T` for the normalized
    /// gain `KK` (`m x m`, acting after the full transformation chain).
    fn gain(&self, kk: &Matrix) -> Matrix {
        let f = &self.refined;
        let m = f.m();
        let p = self.schur.p_hat.embed_leading(m);
        let t = f.wc.matrix() * p.matrix().transpose();
        let inner =
            block_diag(&[&self.cancel, &Matrix::zeros(f.p3, f.p3)]) + &t * kk * t.transpose();
        let k = f.w.matrix() * inner * f.w.matrix().transpose();
        matops::sym_part(&k)
    }
}

/// Normalized derivative gain `diag(K11, I)` for closed-loop rank
/// `n - mu + j` without proportional feedback.
fn rank_pattern(
    mu: usize,
    k: usize,
    m: usize,
    j: usize,
    feasible: impl Fn() -> Vec<usize>,
    r: usize,
) -> Result<Matrix> {
    let mut kk = Matrix::zeros(m, m);
    for i in mu..m {
        kk[(i, i)] = 1.0;
    }
    let skew_only = mu == 2 * k;
    if j % 2 == 1 && j <= 2 * k {
        if skew_only {
            return Err(Error::ParityViolated {
                r,
                feasible: feasible(),
            });
        }
        // leave the last skew pair incomplete and use one direction of D
        for i in 0..j - 1 {
            kk[(i, i)] = 1.0;
        }
        kk[(mu - 1, mu - 1)] = 1.0;
    } else {
        for i in 0..j {
            kk[(i, i)] = 1.0;
        }
    }
    Ok(kk)
}

/// Zero gains when the open loop already is regular of index at most one
/// with `rank E = r`.
fn open_loop_meets(
    mode: Mode,
    sys: &DescriptorSystem,
    r: usize,
    real: Option<&PhRealization>,
    opts: &SynthesisOptions,
) -> Option<FeedbackSynthesis> {
    let m = sys.m();
    let z = Matrix::zeros(m, m);
    let f = (mode == Mode::Combined).then(|| z.clone());
    let notes = vec!["open loop already meets the target; zero feedback".to_string()];
    finish(
        mode,
        sys,
        Some(z),
        f,
        Some(r),
        real,
        opts,
        Vec::new(),
        notes,
    )
    .ok()
}

/// Derivative feedback with prescribed rank `r` of `E + B K C`.
pub fn regularize_derivative_with_rank(
    sys: &DescriptorSystem,
    real: Option<&PhRealization>,
    r: usize,
    opts: &SynthesisOptions,
) -> Result<FeedbackSynthesis> {
    let tol = &opts.tol;
    let n = sys.n();
    let verdict = check_rank_feasibility(sys, r, tol)?;
    let feasible = || verdict.feasible_ranks(n);
    if !verdict.holds {
        let (lo, hi) = verdict.feasible_rank_range.unwrap_or((n, n));
        if verdict.parity_constraint == Some(true) && lo <= r && r <= hi {
            return Err(Error::ParityViolated {
                r,
                feasible: feasible(),
            });
        }
        return Err(Error::RankInfeasible {
            r,
            feasible: feasible(),
        });
    }
    if let Some(done) = open_loop_meets(Mode::DerivativeRank, sys, r, real, opts) {
        return Ok(done);
    }
    let (reduced, comp) = precompress_outputs(sys, tol);
    let m = sys.m();
    if comp.m_reduced == 0 {
        return finish(
            Mode::DerivativeRank,
            sys,
            Some(Matrix::zeros(m, m)),
            None,
            Some(r),
            real,
            opts,
            Vec::new(),
            Vec::new(),
        );
    }
    let chain = build_chain(&reduced, real.map(|x| &x.q), tol)?;
    let (mu, k) = (chain.schur.mu, chain.schur.k);
    if mu != verdict.rank("mu").unwrap_or(mu) {
        return Err(Error::Structure(format!(
            "condensed form gives mu = {mu}, rank test gives {:?}",
            verdict.rank("mu")
        )));
    }
    let j = r + mu - n;
    let kk = rank_pattern(mu, k, comp.m_reduced, j, feasible, r)?;
    let kfull = comp.lift(&chain.gain(&kk));
    let notes = vec![format!("mu = {mu}, skew pairs = {k}, j = {j}")];
    finish(
        Mode::DerivativeRank,
        sys,
        Some(kfull),
        None,
        Some(r),
        real,
        opts,
        chain.forms,
        notes,
    )
}

/// Combined derivative and proportional feedback with
/// `rank(E + B K C) = r` for `n - rank B <= r <= n`.
pub fn regularize_combined(
    sys: &DescriptorSystem,
    real: Option<&PhRealization>,
    r: usize,
    opts: &SynthesisOptions,
) -> Result<FeedbackSynthesis> {
    let tol = &opts.tol;
    let n = sys.n();
    if !completely_observable(sys, tol) {
        return Err(Error::NotObservable(
            "rank [sE - A; C] < n for some s".into(),
        ));
    }
    let (reduced, comp) = precompress_outputs(sys, tol);
    let rb = comp.m_reduced;
    if r > n || r + rb < n {
        return Err(Error::RankInfeasible {
            r,
            feasible: (n - rb..=n).collect(),
        });
    }
    if let Some(done) = open_loop_meets(Mode::Combined, sys, r, real, opts) {
        return Ok(done);
    }
    let m = sys.m();
    if rb == 0 {
        let z = Matrix::zeros(m, m);
        return finish(
            Mode::Combined,
            sys,
            Some(z.clone()),
            Some(z),
            Some(r),
            real,
            opts,
            Vec::new(),
            Vec::new(),
        );
    }
    let chain = build_chain(&reduced, real.map(|x| &x.q), tol)?;
    let mu = chain.schur.mu;
    let mut kk = Matrix::zeros(rb, rb);
    if r + mu >= n {
        // K11 = diag(I_j, 0), K22 = I
        let j = r + mu - n;
        for i in (0..j).chain(mu..rb) {
            kk[(i, i)] = 1.0;
        }
    } else {
        for i in mu..mu + r + rb - n {
            kk[(i, i)] = 1.0;
        }
    }
    let kfull = comp.lift(&chain.gain(&kk));
    let ffull = comp.lift(&-Matrix::identity(rb, rb));
    let notes = vec![format!("mu = {mu}, skew pairs = {}", chain.schur.k)];
    finish(
        Mode::Combined,
        sys,
        Some(kfull),
        Some(ffull),
        Some(r),
        real,
        opts,
        chain.forms,
        notes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysmodel::random_ph_system;

    fn mat(rows: usize, cols: usize, v: &[f64]) -> Matrix {
        Matrix::from_row_slice(rows, cols, v)
    }

    fn worked() -> (DescriptorSystem, PhRealization) {
        let e = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let j = mat(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let b = mat(2, 1, &[0.0, 1.0]);
        let s = DescriptorSystem::new(e, j.clone(), b.clone(), b.transpose()).unwrap();
        let real = PhRealization::new(
            j,
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            b,
            Matrix::zeros(2, 1),
        )
        .unwrap();
        (s, real)
    }

    fn opts() -> SynthesisOptions {
        SynthesisOptions::default()
    }

    #[test]
    fn worked_proportional() {
        let (s, real) = worked();
        let out = regularize_proportional(&s, Some(&real), &opts()).unwrap();
        let f = out.f.unwrap();
        assert!((f[(0, 0)] + 1.0).abs() < 1e-14);
        assert_eq!(out.verification.index, Some(1));
        assert_eq!(out.verification.ph_preserved, Some(true));
    }

    #[test]
    fn worked_derivative() {
        let (s, real) = worked();
        let out = regularize_derivative(&s, Some(&real), &opts()).unwrap();
        assert!(out.k.unwrap()[(0, 0)] > 0.0);
        assert_eq!(out.verification.index, Some(0));
        assert_eq!(out.achieved_rank, 2);

        let out = regularize_derivative_with_rank(&s, Some(&real), 2, &opts()).unwrap();
        assert_eq!(out.verification.index, Some(0));
        let err = regularize_derivative_with_rank(&s, Some(&real), 1, &opts()).unwrap_err();
        assert!(
            matches!(err, Error::RankInfeasible { r: 1, ref feasible } if feasible == &vec![2]),
            "{err}"
        );
    }

    #[test]
    fn scalar_algebraic_derivative() {
        let one = Matrix::from_element(1, 1, 1.0);
        let s =
            DescriptorSystem::new(Matrix::zeros(1, 1), -&one, one.clone(), one.clone()).unwrap();
        let out = regularize_derivative(&s, None, &opts()).unwrap();
        assert_eq!(out.achieved_rank, 1);
        assert_eq!(out.verification.index, Some(0));
    }

    #[test]
    fn failing_conditions() {
        let d = mat(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let z = Matrix::zeros(2, 1);
        let s = DescriptorSystem::new(d.clone(), -d.clone(), z.clone(), z.transpose()).unwrap();
        assert!(matches!(
            regularize_proportional(&s, None, &opts()),
            Err(Error::ProportionalConditionFailed { .. })
        ));
        assert!(matches!(
            regularize_derivative(&s, None, &opts()),
            Err(Error::DerivativeConditionFailed { .. })
        ));
    }

    #[test]
    fn skew_case_parity() {
        let j = mat(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let i = Matrix::identity(2, 2);
        let s =
            DescriptorSystem::new(Matrix::zeros(2, 2), j.clone(), i.clone(), i.clone()).unwrap();
        let real = PhRealization::new(
            j,
            Matrix::zeros(2, 2),
            i.clone(),
            i.clone(),
            Matrix::zeros(2, 2),
        )
        .unwrap();
        let err = regularize_derivative_with_rank(&s, Some(&real), 1, &opts()).unwrap_err();
        assert!(matches!(err, Error::ParityViolated { r: 1, .. }), "{err}");
        let out = regularize_derivative_with_rank(&s, Some(&real), 2, &opts()).unwrap();
        assert_eq!(out.verification.index, Some(0));
        let out = regularize_derivative_with_rank(&s, Some(&real), 0, &opts()).unwrap();
        assert_eq!(out.verification.index, Some(1));
        // with proportional feedback every rank is reachable
        for r in 0..=2 {
            regularize_combined(&s, Some(&real), r, &opts())
                .unwrap_or_else(|e| panic!("r = {r}: {e}"));
        }
    }

    #[test]
    fn identity_e() {
        let q = mat(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let b = mat(2, 1, &[1.0, 0.5]);
        let s = DescriptorSystem::new(Matrix::identity(2, 2), -&q, b.clone(), b.transpose() * &q)
            .unwrap();
        let out = regularize_proportional(&s, None, &opts()).unwrap();
        assert_eq!(out.f.unwrap().norm(), 0.0);
        let out = regularize_combined(&s, None, 2, &opts()).unwrap();
        assert_eq!(out.achieved_rank, 2);
        assert!(matches!(
            regularize_combined(&s, None, 0, &opts()),
            Err(Error::RankInfeasible { .. })
        ));
    }

    #[test]
    fn duplicated_output_lifts() {
        let (s, _) = worked();
        let c = mat(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        let b = mat(2, 2, &[0.0, 0.0, 0.5, 0.5]);
        let dup = DescriptorSystem::new(s.e.clone(), s.a.clone(), b, c).unwrap();
        let (red, comp) = precompress_outputs(&dup, &RankTolerance::default());
        assert_eq!(comp.m_reduced, 1);
        let k1 = Matrix::from_element(1, 1, 0.7);
        let lifted = comp.lift(&k1);
        let a = dup.closed_loop(Some(&lifted), None);
        let b = red.closed_loop(Some(&k1), None);
        assert!((a.e - b.e).norm() < 1e-14);
    }

    #[test]
    fn generated_modes() {
        let o = opts();
        let mut counts = [0usize; 4];
        for seed in 0..60 {
            let n = 3 + seed as usize % 5;
            let m = 1 + seed as usize % 3;
            let re = n - 1 - (seed as usize / 5) % 2;
            let (s, real) =
                random_ph_system(n, m, re, seed as usize % 3, seed, seed % 4 == 3).unwrap();
            if check_proportional_condition(&s, &o.tol).holds {
                regularize_proportional(&s, Some(&real), &o)
                    .unwrap_or_else(|e| panic!("p seed {seed}: {e}"));
                counts[0] += 1;
            }
            if check_derivative_condition(&s, &o.tol).holds {
                regularize_derivative(&s, Some(&real), &o)
                    .unwrap_or_else(|e| panic!("d seed {seed}: {e}"));
                counts[1] += 1;
            }
            if completely_observable(&s, &o.tol) {
                let v = check_rank_feasibility(&s, n, &o.tol).unwrap();
                for r in 0..=n {
                    let res = regularize_derivative_with_rank(&s, Some(&real), r, &o);
                    if v.feasible_ranks(n).contains(&r) {
                        res.unwrap_or_else(|e| panic!("d-rank seed {seed} r {r}: {e}"));
                        counts[2] += 1;
                    } else {
                        assert!(matches!(
                            res,
                            Err(Error::RankInfeasible { .. } | Error::ParityViolated { .. })
                        ));
                    }
                }
                let rb = matops::rank(&s.c, &o.tol);
                for r in n - rb..=n {
                    regularize_combined(&s, Some(&real), r, &o)
                        .unwrap_or_else(|e| panic!("pd seed {seed} r {r}: {e}"));
                    counts[3] += 1;
                }
            }
        }
        assert!(counts.iter().all(|&c| c > 5), "{counts:?}");
    }
}
