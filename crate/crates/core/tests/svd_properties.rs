use eigenhearts::svd::energy_rank;
use eigenhearts::{svd_gram, svd_thin, truncate, SvdFactors, TruncationRule};
use nalgebra::{DMatrix, SymmetricEigen};
use proptest::prelude::*;

fn matrix(max: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (1..=max, 1..=max).prop_flat_map(|(j, k)| {
        prop::collection::vec(-10.0..10.0f64, j * k).prop_map(move |v| DMatrix::from_vec(j, k, v))
    })
}

/// Singular values from the eigenvalues of the smaller Gram matrix.
fn oracle(a: &DMatrix<f64>) -> Vec<f64> {
    let g = if a.nrows() >= a.ncols() {
        a.transpose() * a
    } else {
        a * a.transpose()
    };
    let mut s: Vec<f64> = SymmetricEigen::new(g)
        .eigenvalues
        .iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    s.sort_by(|x, y| y.total_cmp(x));
    s
}

fn agrees(f: &SvdFactors, want: &[f64]) -> Result<(), TestCaseError> {
    let scale = want[0].max(f64::MIN_POSITIVE);
    for (i, w) in want.iter().enumerate() {
        let got = f.singular_values().get(i).copied().unwrap_or(0.0);
        prop_assert!(
            (got - w).abs() <= 1e-9 * scale,
            "sigma[{}] {} vs {}",
            i,
            got,
            w
        );
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thin_matches_the_gram_eigen_oracle(a in matrix(24)) {
        let f = svd_thin(&a).unwrap();
        agrees(&f, &oracle(&a))?;
        prop_assert!(f.orthonormality_error() < 1e-10);
        prop_assert!((&a - f.reconstruct()).norm() <= 1e-10 * a.norm().max(1.0));
        let s = f.singular_values();
        prop_assert!(s.windows(2).all(|w| w[0] >= w[1]) && s.iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn gram_matches_the_oracle_on_tall_input(a in matrix(24)) {
        let a = if a.nrows() >= a.ncols() { a } else { a.transpose() };
        let f = svd_gram(&a).unwrap();
        agrees(&f, &oracle(&a))?;
        prop_assert!(f.orthonormality_error() < 1e-10);
        prop_assert!((&a - f.reconstruct()).norm() <= 1e-10 * a.norm().max(1.0));
    }

    #[test]
    fn truncation_error_is_the_singular_tail(a in matrix(20), pick in 0.0..1.0f64) {
        let f = svd_thin(&a).unwrap();
        let r = 1 + ((f.rank() - 1) as f64 * pick) as usize;
        let err = (&a - truncate(&f, TruncationRule::FixedRank(r)).unwrap().reconstruct()).norm();
        let tail = f.singular_values()[r..].iter().map(|s| s * s).sum::<f64>().sqrt();
        // an exactly zero tail leaves only round-off in the reconstruction
        prop_assert!((err - tail).abs() <= 1e-9 * tail + 1e-13 * a.norm());
    }

    #[test]
    fn energy_rank_is_the_smallest_within_tolerance(a in matrix(20), eps in 0.01..0.99f64) {
        let f = svd_thin(&a).unwrap();
        let s = f.singular_values();
        let total: f64 = s.iter().map(|x| x * x).sum();
        prop_assume!(total > 0.0);
        let r = energy_rank(s, eps);
        let rel = |r: usize| (s[r..].iter().map(|x| x * x).sum::<f64>() / total).sqrt();
        prop_assert!(rel(r) <= eps);
        prop_assert!(r == 1 || rel(r - 1) > eps);
    }

    #[test]
    fn truncated_factors_are_leading_columns(a in matrix(16)) {
        let f = svd_thin(&a).unwrap();
        let t = truncate(&f, TruncationRule::FixedRank(1)).unwrap();
        prop_assert_eq!(t.singular_values(), &f.singular_values()[..1]);
        prop_assert_eq!(t.left_vectors().column(0), f.left_vectors().column(0));
    }
}

#[test]
fn fixed_rank_beyond_the_factors_is_a_bounds_error() {
    let f = svd_thin(&DMatrix::identity(3, 3)).unwrap();
    assert!(matches!(
        truncate(&f, TruncationRule::FixedRank(4)),
        Err(eigenhearts::Error::Bounds(_))
    ));
}
