use driftguard::features::{Orientation, ScoreSet};
use driftguard::gmm::{score_gmm, Component, CovFactor, CovarianceStructure, GmmModel};
use driftguard::io::{decode_features, encode_features};
use driftguard::linalg::Cholesky;
use driftguard::metrics::{aupr, auroc, fpr_at_tpr};
use driftguard::monitor::{filter, FilterLevel};
use driftguard::similarity::cosine;
use driftguard::synth::{oracle_auroc, oracle_gmm_density};
use driftguard::{l2_normalize, FeatureMatrix};
use proptest::prelude::*;

fn matrix(max_n: usize, max_d: usize) -> impl Strategy<Value = FeatureMatrix> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-100.0f64..100.0, n * d).prop_map(move |v| FeatureMatrix::new(n, d, v).unwrap())
    })
}

/// Rows bounded away from zero norm.
fn nonzero_matrix(max_n: usize, max_d: usize) -> impl Strategy<Value = FeatureMatrix> {
    matrix(max_n, max_d).prop_filter("zero-norm row", |m| {
        m.rows().all(|r| r.iter().map(|v| v * v).sum::<f64>() > 1e-6)
    })
}

/// Labelled scores with frequent ties.
fn labelled() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let score = prop_oneof![(-5i32..5).prop_map(f64::from), -5.0f64..5.0];
    (
        prop::collection::vec(score.clone(), 1..25),
        prop::collection::vec(score, 1..25),
    )
}

fn set(id: &[f64], ood: &[f64]) -> ScoreSet {
    ScoreSet::from_id_ood(id, ood, Orientation::HigherIsId).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn l2_normalize_is_idempotent(m in nonzero_matrix(8, 8)) {
        let once = l2_normalize(&m).unwrap();
        let twice = l2_normalize(&once).unwrap();
        for (a, b) in once.as_slice().iter().zip(twice.as_slice()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
        for r in once.rows() {
            prop_assert!((r.iter().map(|v| v * v).sum::<f64>().sqrt() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn l2_normalize_preserves_cosine(m in nonzero_matrix(6, 6)) {
        let u = l2_normalize(&m).unwrap();
        for i in 0..m.n() {
            for j in 0..m.n() {
                let before = cosine(m.row(i), m.row(j)).unwrap();
                let after = cosine(u.row(i), u.row(j)).unwrap();
                prop_assert!((before - after).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn auroc_matches_pairwise_oracle((id, ood) in labelled()) {
        let a = auroc(&set(&id, &ood)).unwrap();
        prop_assert!((a - oracle_auroc(&id, &ood)).abs() <= 1e-12);
    }

    #[test]
    fn metrics_are_invariant_to_increasing_maps((id, ood) in labelled()) {
        let f = |v: &[f64]| v.iter().map(|x| (x / 3.0).exp() * 2.0 + 7.0).collect::<Vec<_>>();
        let s = set(&id, &ood);
        let t = set(&f(&id), &f(&ood));
        prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
        prop_assert_eq!(aupr(&s).unwrap(), aupr(&t).unwrap());
        prop_assert_eq!(fpr_at_tpr(&s, 0.95).unwrap().0, fpr_at_tpr(&t, 0.95).unwrap().0);
    }

    #[test]
    fn flipping_orientation_and_sign_is_neutral((id, ood) in labelled()) {
        let neg = |v: &[f64]| v.iter().map(|x| -x).collect::<Vec<_>>();
        let s = set(&id, &ood);
        let flipped = ScoreSet::from_id_ood(&neg(&id), &neg(&ood), Orientation::HigherIsOod).unwrap();
        prop_assert!((auroc(&s).unwrap() - auroc(&flipped).unwrap()).abs() <= 1e-12);
        prop_assert!((aupr(&s).unwrap() - aupr(&flipped).unwrap()).abs() <= 1e-12);
    }

    #[test]
    fn swapping_labels_complements_auroc((id, ood) in labelled()) {
        let a = auroc(&set(&id, &ood)).unwrap();
        let b = auroc(&set(&ood, &id)).unwrap();
        prop_assert!((a + b - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn fpr_is_monotone_in_target((id, ood) in labelled(), t in 0.05f64..0.95) {
        let s = set(&id, &ood);
        let lo = fpr_at_tpr(&s, t).unwrap().0;
        let hi = fpr_at_tpr(&s, (t + 0.05).min(1.0)).unwrap().0;
        prop_assert!(lo <= hi);
    }

    #[test]
    fn filter_levels_nest(v in prop::collection::vec((-4i32..4).prop_map(f64::from), 1..200)) {
        let s = ScoreSet::new(v.clone(), Orientation::HigherIsId).unwrap();
        let sets: Vec<Vec<usize>> = FilterLevel::ALL.iter().map(|&l| filter(&s, l)).collect();
        for (level, idx) in FilterLevel::ALL.iter().zip(&sets) {
            prop_assert_eq!(idx.len(), (level.retention() * v.len() as f64).ceil() as usize);
            prop_assert!(idx.windows(2).all(|w| w[0] < w[1]));
        }
        for w in sets.windows(2) {
            prop_assert!(w[1].iter().all(|i| w[0].binary_search(i).is_ok()));
        }
    }

    #[test]
    fn vfmf_round_trips_f32_values(m in matrix(20, 20)) {
        let m = FeatureMatrix::new(m.n(), m.d(), m.as_slice().iter().map(|v| *v as f32 as f64).collect()).unwrap();
        prop_assert_eq!(decode_features(&encode_features(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn gmm_score_matches_naive_density(
        seed in prop::collection::vec(-1.0f64..1.0, 3 * (3 + 9) + 3),
        x in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        // Three components in d = 3 with covariance A·Aᵀ + 0.5·I.
        let d = 3;
        let mut components = Vec::new();
        let raw_w: Vec<f64> = seed[..3].iter().map(|v| v.abs() + 0.1).collect();
        let total: f64 = raw_w.iter().sum();
        for k in 0..3 {
            let base = 3 + k * 12;
            let mean = seed[base..base + 3].iter().map(|v| 2.0 * v).collect();
            let a = &seed[base + 3..base + 12];
            let mut cov = vec![0.0; 9];
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] = (0..d).map(|l| a[i * d + l] * a[j * d + l]).sum::<f64>()
                        + if i == j { 0.5 } else { 0.0 };
                }
            }
            components.push(Component::new(raw_w[k] / total, mean, CovFactor::Full(Cholesky::new(&cov, d).unwrap())));
        }
        let model = GmmModel::new(CovarianceStructure::Full, components).unwrap();
        let q = FeatureMatrix::new(1, d, x.clone()).unwrap();
        let log_p = score_gmm(&model, &q).unwrap().scores()[0];
        let naive = oracle_gmm_density(&model, &x);
        prop_assert!(!naive.underflow);
        prop_assert!((log_p.exp() - naive.value).abs() <= 1e-8 * naive.value);
    }
}
