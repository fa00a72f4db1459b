use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::Rng;
use sscgan::data::PatchSet;
use sscgan::metrics::{
    argmax_rows, confusion_from_predictions, evaluate_model, metrics_from_confusion, predict,
    ConfusionMatrix, Evaluation,
};
use sscgan::nn::seeded_rng;
use sscgan::{Discriminator, Error, ModelConfig, Tensor};

fn cm(tp: u64, fp: u64, fn_: u64, tn: u64) -> ConfusionMatrix {
    ConfusionMatrix { tp, fp, fn_, tn }
}

#[test]
fn confusion_examples() {
    assert_eq!(
        confusion_from_predictions(&[1, 0], &[1, 0]).unwrap(),
        cm(1, 0, 0, 1)
    );
    assert_eq!(
        confusion_from_predictions(&[1; 4], &[0; 4]).unwrap(),
        cm(0, 4, 0, 0)
    );
    assert!(confusion_from_predictions(&[1], &[1, 0]).is_err());
    assert!(matches!(
        confusion_from_predictions(&[2], &[1]),
        Err(Error::Label { .. })
    ));
}

#[test]
fn confusion_matches_counting_oracle() {
    let mut rng = seeded_rng(42);
    let pred: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let truth: Vec<usize> = (0..1000).map(|_| rng.random_range(0..2)).collect();
    let mut counts = [[0u64; 2]; 2];
    for (&p, &t) in pred.iter().zip(&truth) {
        counts[p][t] += 1;
    }
    let got = confusion_from_predictions(&pred, &truth).unwrap();
    assert_eq!(
        got,
        cm(counts[1][1], counts[1][0], counts[0][1], counts[0][0])
    );
    assert_eq!(got.total(), 1000);
}

#[test]
fn hand_computed_metrics() {
    let m = metrics_from_confusion(&cm(5, 1, 2, 12));
    assert_abs_diff_eq!(m.precision.unwrap(), 5.0 / 6.0, epsilon = 1e-15);
    assert_abs_diff_eq!(m.recall.unwrap(), 5.0 / 7.0, epsilon = 1e-15);
    assert_abs_diff_eq!(m.specificity.unwrap(), 12.0 / 13.0, epsilon = 1e-15);
    assert_abs_diff_eq!(m.accuracy.unwrap(), 0.85, epsilon = 1e-15);
    assert_abs_diff_eq!(m.bac.unwrap(), 0.8187, epsilon = 1e-4);
    assert_abs_diff_eq!(m.f1.unwrap(), 0.7692, epsilon = 1e-4);
}

#[test]
fn undefined_metrics_are_absent() {
    let m = metrics_from_confusion(&cm(0, 0, 3, 5));
    assert_eq!(m.precision, None);
    assert_eq!(m.f1, None);
    assert_eq!(m.recall, Some(0.0));
    assert_eq!(m.specificity, Some(1.0));
    let record = Evaluation::from_confusion(cm(0, 0, 3, 5)).record();
    assert!(
        record.contains("precision=NA") && record.contains("f1=NA"),
        "{record}"
    );
    assert!(metrics_from_confusion(&cm(0, 0, 0, 0)).accuracy.is_none());
}

#[test]
fn record_keys_are_fixed() {
    let record = Evaluation::from_confusion(cm(5, 1, 2, 12)).record();
    let keys: Vec<&str> = record
        .split(' ')
        .map(|kv| kv.split('=').next().unwrap())
        .collect();
    assert_eq!(
        keys,
        [
            "n",
            "tp",
            "fp",
            "fn",
            "tn",
            "accuracy",
            "bac",
            "precision",
            "recall",
            "specificity",
            "f1"
        ]
    );
}

#[test]
fn argmax_ties_go_to_healthy() {
    let logits = Tensor::<f32>::from_vec(vec![0.0, 0.0, 1.0, 2.0, 3.0, -1.0], &[3, 2]).unwrap();
    assert_eq!(argmax_rows(&logits).unwrap(), vec![0, 1, 0]);
}

#[test]
fn zero_head_discriminator_predicts_healthy() {
    let n = 6;
    let mut rng = seeded_rng(1);
    let pixels: Vec<u8> = (0..n * 3 * 2500).map(|_| rng.random()).collect();
    let labels = vec![0, 1, 1, 0, 1, 1];
    let set = PatchSet::from_pixels(50, 50, pixels, labels.clone()).unwrap();
    let mut d = Discriminator::<f32>::build(&ModelConfig::default(), 0).unwrap();
    let ev = evaluate_model(&mut d, &set, 4).unwrap();
    assert_eq!(ev.confusion, cm(0, 0, 4, 2));
    assert_eq!(ev.metrics.recall, Some(0.0));
    assert_eq!(ev.metrics.specificity, Some(1.0));
    // Same result composed by hand.
    let preds = predict(&mut d, &set, 5).unwrap();
    let manual = metrics_from_confusion(&confusion_from_predictions(&preds, &labels).unwrap());
    assert_eq!(manual, ev.metrics);
}

proptest! {
    #[test]
    fn metric_identities(tp in 1u64..10_000, fp in 1u64..10_000, fn_ in 1u64..10_000, tn in 1u64..10_000) {
        let m = metrics_from_confusion(&cm(tp, fp, fn_, tn));
        let (p, r, s) = (m.precision.unwrap(), m.recall.unwrap(), m.specificity.unwrap());
        prop_assert!((m.bac.unwrap() - (r + s) / 2.0).abs() < 1e-15);
        prop_assert!((m.f1.unwrap() - 2.0 * p * r / (p + r)).abs() < 1e-15);
        let prevalence = (tp + fn_) as f64 / (tp + fp + fn_ + tn) as f64;
        prop_assert!((m.accuracy.unwrap() - (prevalence * r + (1.0 - prevalence) * s)).abs() < 1e-12);
    }

    #[test]
    fn argmax_ignores_common_shift(seed in 0u64..1000, shift in -100.0f64..100.0) {
        let v = sscgan::nn::normal_vec::<f64>(20, &mut seeded_rng(seed));
        let logits = Tensor::from_vec(v, &[10, 2]).unwrap();
        prop_assert_eq!(argmax_rows(&logits).unwrap(), argmax_rows(&logits.add_scalar(shift)).unwrap());
    }

    #[test]
    fn merge_is_order_independent(a in proptest::collection::vec(0u64..100, 4), b in proptest::collection::vec(0u64..100, 4)) {
        let x = cm(a[0], a[1], a[2], a[3]);
        let y = cm(b[0], b[1], b[2], b[3]);
        prop_assert_eq!(x.merge(&y), y.merge(&x));
        prop_assert_eq!(x.merge(&y).total(), x.total() + y.total());
    }
}
