use edgekg_core::pdqa::{self, assess_scores, fit_distribution, FitMode, FlagReason, ScoreDistribution};
use edgekg_core::{EmbeddingModel, Error, ModelKind, Triple};
use proptest::prelude::*;

fn batch(n: usize) -> Vec<Triple> {
    (0..n as u32).map(|i| Triple::new(i % 7, i % 3, (i + 1) % 7)).collect()
}

fn non_constant() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e3f64..1e3, 2..300).prop_filter("needs spread", |v| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        hi - lo > 1e-3
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn self_fit_z_scores_are_standardized(scores in non_constant()) {
        let b = batch(scores.len());
        let opt: Vec<Option<f64>> = scores.iter().copied().map(Some).collect();
        let r = assess_scores(&b, &opt, None, -1.0, FitMode::Global).unwrap();
        let z: Vec<f64> = r.records.iter().map(|x| x.z.unwrap()).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        prop_assert!((sd - 1.0).abs() < 1e-9);
    }

    #[test]
    fn fit_matches_two_pass_oracle(scores in non_constant()) {
        let n = scores.len() as f64;
        let mean = scores.iter().sum::<f64>() / n;
        let sd = (scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n).sqrt();
        let d = fit_distribution(&scores).unwrap();
        prop_assert!((d.mean - mean).abs() <= 1e-9 * mean.abs().max(1.0));
        prop_assert!((d.stddev - sd).abs() <= 1e-9 * sd.max(1.0));
        prop_assert_eq!(d.n, scores.len());
    }

    #[test]
    fn flags_are_invariant_to_positive_affine_maps(scores in non_constant(), a in 0.01f64..100.0, b in -1e3f64..1e3) {
        let bt = batch(scores.len());
        let base: Vec<Option<f64>> = scores.iter().copied().map(Some).collect();
        let moved: Vec<Option<f64>> = scores.iter().map(|s| Some(a * s + b)).collect();
        let r1 = assess_scores(&bt, &base, None, -1.0, FitMode::Global).unwrap();
        let r2 = assess_scores(&bt, &moved, None, -1.0, FitMode::Global).unwrap();
        for (x, y) in r1.records.iter().zip(&r2.records) {
            let (zx, zy) = (x.z.unwrap(), y.z.unwrap());
            prop_assert!((zx - zy).abs() < 1e-6);
            // a z within rounding of the threshold may legitimately flip
            if (zx + 1.0).abs() > 1e-6 {
                prop_assert_eq!(x.flagged, y.flagged);
            }
        }
    }
}

#[test]
fn streaming_reference_matches_self_fit() {
    let model = EmbeddingModel::<f32>::init(ModelKind::RotatE, 8, 7, 3, 1).unwrap();
    let b = batch(200);
    let scores: Vec<f64> = pdqa::score_batch(&model, &b).into_iter().flatten().collect();
    let reference = fit_distribution(&scores).unwrap();
    let text = reference.to_key_value();
    let parsed = ScoreDistribution::parse(&text).unwrap();
    let own = pdqa::assess(&model, &b, -1.0, FitMode::Global).unwrap();
    let streamed = pdqa::assess_streaming(&model, &parsed, &b, -1.0).unwrap();
    for (x, y) in own.records.iter().zip(&streamed.records) {
        assert_eq!(x.index, y.index);
        assert!((x.z.unwrap() - y.z.unwrap()).abs() <= 1e-6);
        assert_eq!(x.flagged, y.flagged);
    }
}

#[test]
fn records_sort_by_z_with_oov_first() {
    let b = batch(6);
    let scores = [Some(3.0), None, Some(-5.0), Some(1.0), None, Some(1.0)];
    let r = assess_scores(&b, &scores, None, -1.0, FitMode::Global).unwrap();
    let order: Vec<usize> = r.records.iter().map(|x| x.index).collect();
    assert_eq!(order, vec![1, 4, 2, 3, 5, 0]);
    assert_eq!(r.records[0].reason, Some(FlagReason::OutOfVocabulary));
    assert_eq!(r.records[2].reason, Some(FlagReason::LowZ));
    assert_eq!(r.num_flagged(), 3);
    assert_eq!(r.distribution.unwrap().n, 4);
}

#[test]
fn out_of_vocabulary_triples_are_flagged_not_scored() {
    let model = EmbeddingModel::<f32>::init(ModelKind::TransE, 4, 5, 2, 0).unwrap();
    let b = vec![Triple::new(0, 0, 1), Triple::new(1, 1, 2), Triple::new(9, 0, 1), Triple::new(2, 0, 3)];
    let r = pdqa::assess(&model, &b, -1.0, FitMode::Global).unwrap();
    assert_eq!(r.records[0].index, 2);
    assert_eq!(r.records[0].score, None);
    assert!(r.records[0].flagged);
    assert_eq!(r.recall(&[2]), Some(1.0));
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(matches!(fit_distribution(&[1.0]), Err(Error::Shape(_))));
    assert!(matches!(fit_distribution(&[2.0, 2.0, 2.0]), Err(Error::DegenerateDistribution)));
    assert!(matches!(ScoreDistribution::parse("mean = 0\nstddev = 0\nn = 3\n"), Err(Error::DegenerateDistribution)));
    assert!(ScoreDistribution::parse("mean = 0\nn = 3\n").is_err());
    assert!(ScoreDistribution::parse("mean = nan\nstddev = 1\nn = 3\n").is_err());
    let b = batch(3);
    assert!(assess_scores(&b, &[Some(1.0), Some(2.0)], None, -1.0, FitMode::Global).is_err());
    assert!(assess_scores(&b, &[Some(1.0), Some(2.0), Some(0.0)], None, f64::NAN, FitMode::Global).is_err());
}

#[test]
fn per_relation_fit_separates_relation_scales() {
    // relation 0 scores near 0, relation 1 near -100; one outlier in each
    let mut b = Vec::new();
    let mut s = Vec::new();
    for i in 0..40u32 {
        b.push(Triple::new(i, i % 2, i));
        let base = if i % 2 == 0 { 0.0 } else { -100.0 };
        s.push(Some(base + (i % 5) as f64 * 0.1));
    }
    s[10] = Some(-5.0);
    s[11] = Some(-105.0);
    let per = assess_scores(&b, &s, None, -2.0, FitMode::PerRelation).unwrap();
    let flagged: Vec<usize> = per.flagged().map(|r| r.index).collect();
    assert_eq!(flagged, vec![10, 11]);
    // a global fit only sees the bimodal mixture and flags neither cleanly
    let global = assess_scores(&b, &s, None, -2.0, FitMode::Global).unwrap();
    assert!(global.flagged().all(|r| r.index != 10));
}
