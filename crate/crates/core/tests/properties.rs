use std::collections::HashSet;

use earlir_core::dataset::{make_protocol, synth_dataset, SynthParams};
use earlir_core::evaluation::{cmc, eer, perfect_rank};
use earlir_core::features::{hog_descriptor, lpq_histogram, ulbp_histogram};
use earlir_core::fusion::{min_max_normalize, normalize_with, weighted_fuse};
use earlir_core::matching::{chi_square, euclidean};
use earlir_core::subspace::{fit_dcva, fit_lda, fit_pca};
use earlir_core::{
    Dimension, EarSide, GrayImage, GridSpec, LabeledTrainingSet, NormalizationScope, ScoreMatrix,
};
use proptest::prelude::*;

fn histogram() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..100.0, n),
            prop::collection::vec(0.0f64..100.0, n),
        )
    })
}

fn score_matrix() -> impl Strategy<Value = ScoreMatrix> {
    (1usize..8, 1usize..12).prop_flat_map(|(g, p)| {
        (
            prop::collection::vec(0..g, p),
            prop::collection::vec(0u32..500, p * g),
        )
            .prop_map(move |(labels, raw)| {
                ScoreMatrix::new(
                    "prop",
                    (0..p).map(|i| format!("p{i}")).collect(),
                    labels.iter().map(|l| format!("s{l}")).collect(),
                    (0..g).map(|i| format!("g{i}")).collect(),
                    (0..g).map(|i| format!("s{i}")).collect(),
                    raw.into_iter().map(|v| v as f64 / 100.0).collect(),
                )
                .unwrap()
            })
    })
}

fn image(w: usize, h: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..=1.0, w * h).prop_map(move |px| GrayImage::new(w, h, px).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn metrics_are_symmetric_with_zero_self_distance((a, b) in histogram()) {
        for f in [euclidean, chi_square] {
            let ab = f(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, f(&b, &a).unwrap());
            prop_assert_eq!(f(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn euclidean_triangle_inequality((a, b) in histogram(), shift in 0.0f64..5.0) {
        let c: Vec<f64> = a.iter().map(|v| v + shift).collect();
        let lhs = euclidean(&a, &b).unwrap();
        let rhs = euclidean(&a, &c).unwrap() + euclidean(&c, &b).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn cmc_is_monotone_and_saturates(s in score_matrix()) {
        let c = cmc(&s).unwrap();
        prop_assert!(c.rates.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*c.rates.last().unwrap(), 1.0);
        let pr = perfect_rank(&c).unwrap();
        prop_assert!(c.rates[pr - 1] == 1.0 && (pr == 1 || c.rates[pr - 2] < 1.0));
    }

    #[test]
    fn eer_is_a_percentage(
        g in prop::collection::vec(0.0f64..1.0, 1..30),
        i in prop::collection::vec(0.0f64..1.0, 1..30),
    ) {
        let e = eer(&g, &i).unwrap();
        prop_assert!((0.0..=100.0).contains(&e));
    }

    #[test]
    fn normalisation_keeps_row_order(s in score_matrix(), per_row in any::<bool>()) {
        let scope = if per_row { NormalizationScope::PerRow } else { NormalizationScope::Global };
        let n = normalize_with(&s, scope);
        prop_assert!(n.scores().iter().all(|v| (0.0..=1.0).contains(v)));
        for r in 0..s.n_probes() {
            let (a, b) = (s.row(r), n.row(r));
            for x in 0..a.len() {
                for y in 0..a.len() {
                    if a[x] < a[y] {
                        prop_assert!(b[x] < b[y] || scope == NormalizationScope::PerRow && b[x] <= b[y]);
                    }
                }
            }
        }
    }

    #[test]
    fn self_fusion_is_exact(s in score_matrix(), w in 0.01f64..0.99) {
        let n = min_max_normalize(&s);
        let f = weighted_fuse(&[(&n, w), (&n, 1.0 - w)]).unwrap();
        prop_assert_eq!(f.scores(), n.scores());
    }

    #[test]
    fn fused_scores_stay_between_inputs(a in score_matrix(), w in 0.01f64..0.99) {
        let a = min_max_normalize(&a);
        let b = a.with_scores("other", a.scores().iter().map(|v| 1.0 - v).collect()).unwrap();
        let f = weighted_fuse(&[(&a, w), (&b, 1.0 - w)]).unwrap();
        for ((x, y), z) in a.scores().iter().zip(b.scores()).zip(f.scores()) {
            prop_assert!(x.min(*y) <= *z && *z <= x.max(*y));
        }
    }

    #[test]
    fn descriptor_totals_count_valid_pixels(img in image(24, 28)) {
        let grid = GridSpec::new(2, 2).unwrap();
        for p in [8, 16] {
            let total: f64 = ulbp_histogram(&img, p, 2.0, grid).unwrap().values.iter().sum();
            prop_assert_eq!(total, (20 * 24) as f64);
        }
        let total: f64 = lpq_histogram(&img, 7, grid).unwrap().values.iter().sum();
        prop_assert_eq!(total, (18 * 22) as f64);
    }

    #[test]
    fn hog_blocks_are_bounded(img in image(30, 40)) {
        let v = hog_descriptor(&img, 10, 2, 9).unwrap().values;
        prop_assert_eq!(v.len(), 2 * 3 * 4 * 9);
        for block in v.chunks(4 * 9) {
            let norm: f64 = block.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(norm <= 1.0 + 1e-12);
            prop_assert!(block.iter().all(|&x| x >= 0.0));
        }
    }
}

fn diagonal_gaussian_like(n: usize, scales: &[f64], seed: u64) -> LabeledTrainingSet {
    // deterministic low-discrepancy points, spread per axis
    let d = scales.len();
    let vectors = (0..n)
        .map(|i| {
            (0..d)
                .map(|j| {
                    let t = ((i * 7919 + j * 104729 + seed as usize) % 997) as f64 / 997.0;
                    scales[j] * (2.0 * t - 1.0)
                })
                .collect()
        })
        .collect();
    LabeledTrainingSet::new(vectors, (0..n).map(|i| format!("s{}", i % 3)).collect()).unwrap()
}

#[test]
fn pca_recovers_dominant_axis() {
    let scales = [10.0, 1.0, 0.5, 0.1];
    let train = diagonal_gaussian_like(200, &scales, 3);
    let model = fit_pca(&train, Dimension::Count(1)).unwrap();
    assert!(model.basis[(0, 0)].abs() > 0.99, "{}", model.basis);
    assert!(model.orthonormality_error() < 1e-12);
}

#[test]
fn pca_spectrum_is_descending_and_orthonormal() {
    let train = diagonal_gaussian_like(12, &[3.0; 40], 11);
    let model = fit_pca(&train, Dimension::Max).unwrap();
    assert_eq!(model.output_dim(), 11);
    assert!(model.spectrum.windows(2).all(|w| w[0] >= w[1]));
    assert!(model.orthonormality_error() < 1e-10);
}

#[test]
fn lda_and_dcva_bases_are_orthonormal() {
    let train = diagonal_gaussian_like(30, &[1.0; 50], 5);
    let lda = fit_lda(&train, Dimension::Max).unwrap();
    assert_eq!(lda.output_dim(), 2);
    assert!(lda.orthonormality_error() < 1e-10);
    let dcva = fit_dcva(&train).unwrap();
    assert_eq!(dcva.output_dim(), 2);
    assert!(dcva.orthonormality_error() < 1e-10);
}

#[test]
fn protocol_invariants_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let params = SynthParams {
        n_subjects: 12,
        n_samples: 10,
        width: 20,
        height: 24,
        ..SynthParams::default()
    };
    let manifest = synth_dataset(dir.path(), &params).unwrap();
    for seed in 0..10 {
        let p = make_protocol(&manifest, EarSide::Left, 6, 4, 5, seed).unwrap();
        p.validate().unwrap();
        assert_eq!(p.gallery.len(), 12);
        assert_eq!(p.probes.len(), 60);
        assert_eq!(p.training.len(), 24);
        assert_eq!(p.training_subjects().len(), 6);
        let held: HashSet<_> = p.gallery.iter().chain(&p.probes).map(|r| r.id()).collect();
        // 10 samples: 1 gallery + 5 probes leaves 4 held out, so training
        // never needs to reuse gallery or probe images
        assert!(p.training.iter().all(|r| !held.contains(&r.id())));
        for g in &p.gallery {
            let min = manifest
                .samples()
                .iter()
                .filter(|s| s.subject_id == g.subject_id)
                .map(|s| s.sample_index)
                .min()
                .unwrap();
            assert_eq!(g.sample_index, min);
        }
    }
}
