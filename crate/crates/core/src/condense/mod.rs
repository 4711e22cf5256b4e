//! Orthogonal (and, in the later stages, block-elementary) condensed forms
//! of a descriptor system that expose the ranks and nonsingular blocks the
//! feedback constructions rely on.
//!
//! Every form carries a [`FormReport`] with its claimed-zero residuals,
//! nonsingularity margins, orthogonality defects and condition numbers. The
//! report serializes to JSON for debugging dumps.

mod io_form;
mod kernel_split;
mod refined;
mod schur_stage;
mod staircase;

use std::ops::Range;

use serde::Serialize;

use crate::matops::{self, Matrix, OrthogonalFactor, RankTolerance};

pub use io_form::{reduce_io_condensed, IoCondensedForm};
pub use kernel_split::{reduce_kernel_split, KernelSplitForm};
pub use refined::{refine, RefinedForm};
pub use schur_stage::{schur_stage, SchurStageForm};

pub use staircase::{reduce_output_staircase, DerivativeBlockConditions, OutputStaircaseForm};

/// Condition numbers above this attach a warning to the form.
pub const COND_WARN: f64 = 1e12;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BlockCheck {
    pub label: String,
    /// Norm of a claimed-zero block, or smallest singular value of a claimed
    /// nonsingular block.
    pub value: f64,
    pub threshold: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize, Default, PartialEq)]
pub struct FormReport {
    pub form: String,
    pub sizes: Vec<(String, usize)>,
    pub zero_blocks: Vec<BlockCheck>,
    pub nonsingular_blocks: Vec<BlockCheck>,
    /// `|Q^T Q - I|_F / dim` per orthogonal factor.
    pub orthogonality_defects: Vec<(String, f64)>,
    pub condition_numbers: Vec<(String, f64)>,
    /// `|reconstructed input - input|_F / |input|_F`.
    pub reconstruction_residual: f64,
    /// Largest relative deviation of the transformed `Q` from the block
    /// pattern the form implies, when `Q` was supplied.
    pub q_pattern_residual: Option<f64>,
    pub warnings: Vec<String>,
}

impl FormReport {
    pub(crate) fn new(form: &str) -> Self {
        Self {
            form: form.to_string(),
            ..Default::default()
        }
    }

    pub(crate) fn size(&mut self, label: &str, value: usize) {
        self.sizes.push((label.to_string(), value));
    }

    /// Records a claimed-zero block; `scale` is the spectral norm scale of
    /// the product the block was cut from.
    pub(crate) fn zero(&mut self, label: &str, blk: &Matrix, scale: f64, tol: &RankTolerance) {
        // slack for rounding accumulated over the stages that produced the block
        let threshold = tol.threshold_for(scale, blk.nrows().max(1), blk.ncols().max(1)) * 10.0;
        let value = if blk.is_empty() { 0.0 } else { blk.norm() };
        self.zero_blocks.push(BlockCheck {
            label: label.to_string(),
            value,
            threshold,
            ok: value <= threshold,
        });
    }

    pub(crate) fn nonsingular(&mut self, label: &str, blk: &Matrix, tol: &RankTolerance) {
        if !blk.is_square() {
            self.nonsingular_blocks.push(BlockCheck {
                label: format!("{label} ({}x{}, not square)", blk.nrows(), blk.ncols()),
                value: 0.0,
                threshold: 0.0,
                ok: false,
            });
            return;
        }
        let sv = matops::singular_values(blk);
        let (value, threshold) = match (sv.first(), sv.last()) {
            (Some(&hi), Some(&lo)) => (lo, tol.threshold_for(hi, blk.nrows(), blk.ncols())),
            _ => (0.0, 0.0),
        };
        self.nonsingular_blocks.push(BlockCheck {
            label: label.to_string(),
            value,
            threshold,
            ok: blk.is_empty() || value > threshold,
        });
    }

    /// Records that `blk` has rank `want`; the value is the `want`-th
    /// singular value.
    pub(crate) fn rank_equals(
        &mut self,
        label: &str,
        blk: &Matrix,
        want: usize,
        tol: &RankTolerance,
    ) {
        let sv = matops::singular_values(blk);
        let got = matops::rank(blk, tol);
        let value = if want == 0 {
            0.0
        } else {
            sv.get(want - 1).copied().unwrap_or(0.0)
        };
        let threshold =
            tol.threshold_for(sv.first().copied().unwrap_or(0.0), blk.nrows(), blk.ncols());
        self.nonsingular_blocks.push(BlockCheck {
            label: format!("rank {label} = {want}"),
            value,
            threshold,
            ok: got == want,
        });
    }

    pub(crate) fn orthogonal(&mut self, label: &str, f: &OrthogonalFactor) {
        self.orthogonality_defects
            .push((label.to_string(), f.defect() / f.dim().max(1) as f64));
    }

    pub(crate) fn conditioning(&mut self, label: &str, m: &Matrix) {
        let c = matops::condition_number(m);
        if c > COND_WARN {
            self.warnings
                .push(format!("condition number of {label} is {c:.3e}"));
        }
        self.condition_numbers.push((label.to_string(), c));
    }

    /// True when every claimed zero and nonsingular block checks out.
    pub fn holds(&self) -> bool {
        self.zero_blocks.iter().all(|c| c.ok) && self.nonsingular_blocks.iter().all(|c| c.ok)
    }

    pub fn failures(&self) -> Vec<String> {
        let zero = self.zero_blocks.iter().filter(|c| !c.ok).map(|c| {
            format!(
                "{} not zero ({:.3e} > {:.3e})",
                c.label, c.value, c.threshold
            )
        });
        let nonsing = self.nonsingular_blocks.iter().filter(|c| !c.ok).map(|c| {
            format!(
                "{} singular (sigma_min {:.3e} <= {:.3e})",
                c.label, c.value, c.threshold
            )
        });
        zero.chain(nonsing).collect()
    }

    pub fn max_orthogonality_defect(&self) -> f64 {
        self.orthogonality_defects
            .iter()
            .fold(0.0, |a, &(_, d)| a.max(d))
    }
}

pub(crate) fn clear(m: &mut Matrix, rows: Range<usize>, cols: Range<usize>) {
    if !rows.is_empty() && !cols.is_empty() {
        m.view_mut((rows.start, cols.start), (rows.len(), cols.len()))
            .fill(0.0);
    }
}

pub(crate) fn norm2(m: &Matrix) -> f64 {
    matops::spectral_norm(m)
}

/// Relative reconstruction error of a list of `(rebuilt, original)` pairs.
pub(crate) fn reconstruction(pairs: &[(Matrix, &Matrix)]) -> f64 {
    let num: f64 = pairs.iter().map(|(r, o)| (r - *o).norm_squared()).sum();
    let den: f64 = pairs.iter().map(|(_, o)| o.norm_squared()).sum();
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

/// Largest block of `m` outside the allowed pattern, relative to `|m|`.
/// `allowed[i][j]` says whether block `(i, j)` may be nonzero.
pub(crate) fn pattern_residual(m: &Matrix, sizes: &[usize], allowed: &[&[bool]]) -> f64 {
    let scale = m.norm();
    if scale == 0.0 {
        return 0.0;
    }
    let offsets: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let o = *acc;
            *acc += s;
            Some(o)
        })
        .collect();
    let mut worst: f64 = 0.0;
    for (i, row) in allowed.iter().enumerate() {
        for (j, &ok) in row.iter().enumerate() {
            if ok {
                continue;
            }
            let blk = matops::block(
                m,
                offsets[i]..offsets[i] + sizes[i],
                offsets[j]..offsets[j] + sizes[j],
            );
            if !blk.is_empty() {
                worst = worst.max(blk.norm() / scale);
            }
        }
    }
    worst
}
