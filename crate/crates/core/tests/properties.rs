//! Property tests of the cross-module invariants.

use phreg::analysis::{
    check_derivative_condition, check_proportional_condition, check_rank_feasibility,
    completely_observable, finite_eig_count, pencil_index, pencil_regular,
};
use phreg::cli::format_f64;
use phreg::condense::{reduce_io_condensed, refine};
use phreg::matops::{
    asymmetry, block_diag, householder_qr_full, rank, spectral_norm, sym_eigenvalues, Matrix,
};
use phreg::regularize::{
    regularize_derivative, regularize_proportional, FeedbackSynthesis, SynthesisOptions,
};
use phreg::sysmodel::{random_ph_system, validate_ph};
use phreg::{DescriptorSystem, PhRealization, RankTolerance};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tol() -> RankTolerance {
    RankTolerance::default()
}

fn orthogonal(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let g = Matrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    householder_qr_full(&g).0
}

/// Generator parameters: `(n, m, rank_e, rank_r, seed, singular_q)`.
fn system_params() -> impl Strategy<Value = (usize, usize, usize, usize, u64, bool)> {
    (2usize..9, 1usize..4, any::<u64>(), any::<bool>()).prop_flat_map(|(n, m, seed, sq)| {
        (Just(n), Just(m.min(n)), 0..=n, 0..=n, Just(seed), Just(sq))
    })
}

fn system(p: (usize, usize, usize, usize, u64, bool)) -> (DescriptorSystem, PhRealization) {
    random_ph_system(p.0, p.1, p.2, p.3, p.4, p.5).unwrap()
}

/// Applies `(U, V, W)` to a system and its realization.
fn transform(
    s: &DescriptorSystem,
    real: &PhRealization,
    u: &Matrix,
    v: &Matrix,
    w: &Matrix,
) -> (DescriptorSystem, PhRealization) {
    let t = s.transformed(u, v, w);
    let t = DescriptorSystem::new(t.e, t.a, t.b, t.c).unwrap();
    let r = PhRealization::new(
        u * &real.j * u.transpose(),
        u * &real.r * u.transpose(),
        u * &real.q * v,
        u * &real.g * w,
        u * &real.p * w,
    )
    .unwrap();
    (t, r)
}

/// Re-derives the closed-loop verdict from scratch.
fn recheck(
    s: &DescriptorSystem,
    syn: &FeedbackSynthesis,
) -> (bool, Option<usize>, Option<usize>, usize) {
    let t = tol();
    let cl = s.closed_loop(syn.k.as_ref(), syn.f.as_ref());
    let regular = pencil_regular(&cl.e, &cl.a, &t).unwrap();
    (
        regular,
        pencil_index(&cl.e, &cl.a, &t).ok(),
        finite_eig_count(&cl.e, &cl.a, &t).ok(),
        syn.achieved_rank,
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn generated_systems_validate(p in system_params()) {
        let (s, real) = system(p);
        let rep = validate_ph(&s, &real, 1e-10).unwrap();
        prop_assert!(rep.verdict, "{:?}", rep.residuals);
        prop_assert!(rep.rank_c <= rep.rank_b);
        // power balance: Q^T A + A^T Q = -2 Q^T R Q
        let qa = real.q.transpose() * &s.a;
        let lhs = &qa + qa.transpose();
        let rhs = real.q.transpose() * &real.r * &real.q * -2.0;
        let scale = spectral_norm(&real.q) * spectral_norm(&s.a);
        prop_assert!((lhs - rhs).norm() <= 1e-10 * scale.max(1.0));
    }

    #[test]
    fn index_at_most_one_iff_finite_count_is_rank(
        finite in 0usize..5,
        blocks in proptest::collection::vec(1usize..4, 0..3),
        seed in any::<u64>(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut e_parts = vec![Matrix::identity(finite, finite)];
        let mut a_parts = vec![Matrix::from_fn(finite, finite, |_, _| rng.gen_range(-1.0..1.0))];
        for &k in &blocks {
            e_parts.push(Matrix::from_fn(k, k, |r, c| if c == r + 1 { 1.0 } else { 0.0 }));
            a_parts.push(Matrix::identity(k, k));
        }
        let n = finite + blocks.iter().sum::<usize>();
        prop_assume!(n > 0);
        let (u, v) = (orthogonal(&mut rng, n), orthogonal(&mut rng, n));
        let e = &u * block_diag(&e_parts.iter().collect::<Vec<_>>()) * &v;
        let a = &u * block_diag(&a_parts.iter().collect::<Vec<_>>()) * &v;
        let index = pencil_index(&e, &a, &tol()).unwrap();
        let count = finite_eig_count(&e, &a, &tol()).unwrap();
        prop_assert_eq!(index <= 1, count == rank(&e, &tol()));
        prop_assert_eq!(index, blocks.iter().copied().max().unwrap_or(0));
    }

    #[test]
    fn verdicts_are_orthogonally_invariant(p in system_params(), seed in any::<u64>()) {
        let (s, real) = system(p);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (s.n(), s.m());
        let (u, v, w) = (orthogonal(&mut rng, n), orthogonal(&mut rng, n), orthogonal(&mut rng, m));
        let (t, _) = transform(&s, &real, &u, &v, &w);
        let tl = tol();
        prop_assert_eq!(check_proportional_condition(&s, &tl).holds, check_proportional_condition(&t, &tl).holds);
        prop_assert_eq!(check_derivative_condition(&s, &tl).holds, check_derivative_condition(&t, &tl).holds);
        let obs = completely_observable(&s, &tl);
        prop_assert_eq!(obs, completely_observable(&t, &tl));
        if obs {
            let a = check_rank_feasibility(&s, n, &tl).unwrap();
            let b = check_rank_feasibility(&t, n, &tl).unwrap();
            prop_assert_eq!(a.feasible_ranks(n), b.feasible_ranks(n));
        }
    }

    #[test]
    fn io_form_sizes_follow_ranks(p in system_params()) {
        let (s, real) = system(p);
        let tl = tol();
        if let Ok(f) = reduce_io_condensed(&s, Some(&real.q), &tl) {
            let (n, re, rb) = (s.n(), rank(&s.e, &tl), rank(&s.b, &tl));
            prop_assert_eq!((f.p1, f.p2, f.p3), (n - rb, re + rb - n, n - re));
            prop_assert!(f.report.reconstruction_residual <= 1e-12);
            prop_assert!(f.report.holds(), "{:?}", f.report.failures());
            let refined = refine(&f, &s, Some(&real.q), &tl).unwrap();
            let mu = check_rank_feasibility(&s, n, &tl).ok().and_then(|v| v.rank("mu"));
            if let Some(mu) = mu {
                prop_assert_eq!(refined.mu, mu);
            }
        }
    }

    #[test]
    fn proportional_feedback_is_sound(p in system_params(), seed in any::<u64>()) {
        let (s, real) = system(p);
        let tl = tol();
        prop_assume!(check_proportional_condition(&s, &tl).holds);
        let opts = SynthesisOptions { seed, ..SynthesisOptions::default() };
        let syn = regularize_proportional(&s, Some(&real), &opts).unwrap();
        let (regular, index, count, achieved) = recheck(&s, &syn);
        prop_assert!(regular && index.is_some_and(|i| i <= 1));
        prop_assert_eq!(count, Some(achieved));
        let f = syn.f.as_ref().unwrap();
        prop_assert!(asymmetry(f) <= 1e-12);
        let top = sym_eigenvalues(f).last().copied().unwrap_or(0.0);
        prop_assert!(top <= 1e-12 * spectral_norm(f).max(1.0));

        // the same verdict in rotated coordinates
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (s.n(), s.m());
        let (u, v, w) = (orthogonal(&mut rng, n), orthogonal(&mut rng, n), orthogonal(&mut rng, m));
        let (t, treal) = transform(&s, &real, &u, &v, &w);
        let tsyn = regularize_proportional(&t, Some(&treal), &opts).unwrap();
        prop_assert_eq!(recheck(&t, &tsyn), (regular, index, count, achieved));
    }

    #[test]
    fn derivative_feedback_is_sound(p in system_params(), seed in any::<u64>()) {
        let (s, real) = system(p);
        let tl = tol();
        prop_assume!(check_derivative_condition(&s, &tl).holds);
        let opts = SynthesisOptions { seed, ..SynthesisOptions::default() };
        let syn = regularize_derivative(&s, Some(&real), &opts).unwrap();
        let (regular, index, count, achieved) = recheck(&s, &syn);
        prop_assert!(regular && index.is_some_and(|i| i <= 1));
        prop_assert_eq!(count, Some(achieved));
        prop_assert_eq!(syn.verification.ph_preserved, Some(true));

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, m) = (s.n(), s.m());
        let (u, v, w) = (orthogonal(&mut rng, n), orthogonal(&mut rng, n), orthogonal(&mut rng, m));
        let (t, treal) = transform(&s, &real, &u, &v, &w);
        let tsyn = regularize_derivative(&t, Some(&treal), &opts).unwrap();
        prop_assert_eq!(recheck(&t, &tsyn), (regular, index, count, achieved));
    }

    #[test]
    fn numbers_round_trip(bits in any::<u64>()) {
        let x = f64::from_bits(bits);
        prop_assume!(x.is_finite());
        prop_assert_eq!(format_f64(x).parse::<f64>().unwrap(), x);
    }
}
