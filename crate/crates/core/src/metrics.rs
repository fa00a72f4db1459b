//! Binary classification metrics with IDC (label 1) as the positive class.

use std::fmt;

use crate::data::{load_batch, PatchSource};
use crate::error::{Error, Result};
use crate::models::Discriminator;
use crate::nn::seeded_rng;
use crate::tensor::{no_grad, Mode, Scalar, Tensor};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn merge(&self, other: &ConfusionMatrix) -> ConfusionMatrix {
        ConfusionMatrix {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
            tn: self.tn + other.tn,
        }
    }
}

pub fn confusion_from_predictions(pred: &[usize], truth: &[usize]) -> Result<ConfusionMatrix> {
    if pred.len() != truth.len() {
        return Err(Error::shape("confusion", &[pred.len()], &[truth.len()]));
    }
    let mut cm = ConfusionMatrix::default();
    for (&p, &t) in pred.iter().zip(truth) {
        match (p, t) {
            (1, 1) => cm.tp += 1,
            (1, 0) => cm.fp += 1,
            (0, 1) => cm.fn_ += 1,
            (0, 0) => cm.tn += 1,
            _ => {
                return Err(Error::Label {
                    label: p.max(t),
                    classes: 2,
                })
            }
        }
    }
    Ok(cm)
}

/// Each metric is `None` when its denominator is zero.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub bac: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub specificity: Option<f64>,
    pub f1: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn f1_score(precision: f64, recall: f64) -> Option<f64> {
    let s = precision + recall;
    (s > 0.0).then(|| 2.0 * precision * recall / s)
}

pub fn balanced_accuracy(recall: f64, specificity: f64) -> f64 {
    (recall + specificity) / 2.0
}

/// Accuracy implied by recall and specificity at a positive-class `prevalence`.
pub fn accuracy_at_prevalence(prevalence: f64, recall: f64, specificity: f64) -> f64 {
    prevalence * recall + (1.0 - prevalence) * specificity
}

pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Metrics {
    let precision = ratio(cm.tp, cm.tp + cm.fp);
    let recall = ratio(cm.tp, cm.tp + cm.fn_);
    let specificity = ratio(cm.tn, cm.tn + cm.fp);
    Metrics {
        accuracy: ratio(cm.tp + cm.tn, cm.total()),
        bac: recall
            .zip(specificity)
            .map(|(r, s)| balanced_accuracy(r, s)),
        precision,
        recall,
        specificity,
        f1: precision.zip(recall).and_then(|(p, r)| f1_score(p, r)),
    }
}

impl Metrics {
    /// `(name, value)` in report order.
    pub fn entries(&self) -> [(&'static str, Option<f64>); 6] {
        [
            ("accuracy", self.accuracy),
            ("bac", self.bac),
            ("precision", self.precision),
            ("recall", self.recall),
            ("specificity", self.specificity),
            ("f1", self.f1),
        ]
    }
}

/// Argmax per row; ties go to the lowest label.
pub fn argmax_rows<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2("argmax")?;
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if *v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub metrics: Metrics,
}

impl Evaluation {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        Evaluation {
            confusion,
            metrics: metrics_from_confusion(&confusion),
        }
    }

    /// Single `key=value` line: `n tp fp fn tn accuracy bac precision recall
    /// specificity f1`, undefined metrics as `NA`.
    pub fn record(&self) -> String {
        let cm = &self.confusion;
        let mut parts = vec![
            format!("n={}", cm.total()),
            format!("tp={}", cm.tp),
            format!("fp={}", cm.fp),
            format!("fn={}", cm.fn_),
            format!("tn={}", cm.tn),
        ];
        for (name, v) in self.metrics.entries() {
            parts.push(format!(
                "{name}={}",
                v.map_or("NA".to_string(), |v| format!("{v:.6}"))
            ));
        }
        parts.join(" ")
    }
}

impl fmt::Display for Evaluation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, v) in self.metrics.entries() {
            match v {
                Some(v) => writeln!(f, "{name:<12} {:>7.2}%", v * 100.0)?,
                None => writeln!(f, "{name:<12} {:>8}", "NA")?,
            }
        }
        let cm = &self.confusion;
        write!(
            f,
            "confusion    tp={} fp={} fn={} tn={}",
            cm.tp, cm.fp, cm.fn_, cm.tn
        )
    }
}

/// Class-head predictions over the whole source in eval mode, no augmentation.
pub fn predict<T: Scalar>(
    d: &mut Discriminator<T>,
    source: &dyn PatchSource,
    batch: usize,
) -> Result<Vec<usize>> {
    if batch == 0 {
        return Err(Error::Config("evaluation batch must be positive".into()));
    }
    let (h, w) = source.extent();
    let cfg = d.config();
    if (h, w) != (cfg.height, cfg.width) {
        return Err(Error::geometry(
            "evaluate",
            format!(
                "data is {h}x{w} but the model expects {}x{}",
                cfg.height, cfg.width
            ),
        ));
    }
    let _guard = no_grad();
    let mut rng = seeded_rng(0);
    let all: Vec<usize> = (0..source.len()).collect();
    let mut preds = Vec::with_capacity(all.len());
    for chunk in all.chunks(batch) {
        let (x, _) = load_batch::<T>(source, chunk, false, &mut rng)?;
        preds.extend(argmax_rows(&d.class_logits(&x, Mode::Eval)?)?);
    }
    Ok(preds)
}

pub fn evaluate_model<T: Scalar>(
    d: &mut Discriminator<T>,
    source: &dyn PatchSource,
    batch: usize,
) -> Result<Evaluation> {
    if source.is_empty() {
        return Err(Error::Data("cannot evaluate on an empty set".into()));
    }
    let preds = predict(d, source, batch)?;
    Ok(Evaluation::from_confusion(confusion_from_predictions(
        &preds,
        &source.labels(),
    )?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: Option<f64>, b: f64) {
        assert!((a.unwrap() - b).abs() < 5e-5, "{a:?} vs {b}");
    }

    #[test]
    fn counts() {
        let cm = confusion_from_predictions(&[1, 0], &[1, 0]).unwrap();
        assert_eq!((cm.tp, cm.tn, cm.fp, cm.fn_), (1, 1, 0, 0));
        let cm = confusion_from_predictions(&[1; 4], &[0; 4]).unwrap();
        assert_eq!(cm.fp, 4);
        assert!(confusion_from_predictions(&[1], &[]).is_err());
        assert!(matches!(
            confusion_from_predictions(&[2], &[0]),
            Err(Error::Label { .. })
        ));
    }

    #[test]
    fn worked_example() {
        let m = metrics_from_confusion(&ConfusionMatrix {
            tp: 5,
            fp: 1,
            fn_: 2,
            tn: 12,
        });
        close(m.precision, 0.8333);
        close(m.recall, 0.7143);
        close(m.specificity, 0.9231);
        close(m.accuracy, 0.85);
        close(m.bac, 0.8187);
        close(m.f1, 0.7692);
    }

    #[test]
    fn undefined_is_not_zero() {
        let m = metrics_from_confusion(&ConfusionMatrix {
            tp: 0,
            fp: 0,
            fn_: 0,
            tn: 3,
        });
        assert_eq!(m.precision, None);
        assert_eq!(m.recall, None);
        assert_eq!(m.f1, None);
        assert_eq!(m.specificity, Some(1.0));
        assert!(Evaluation::from_confusion(ConfusionMatrix {
            tn: 3,
            ..Default::default()
        })
        .record()
        .contains("precision=NA"));
    }

    #[test]
    fn ties_go_to_healthy() {
        let logits: Tensor<f32> =
            Tensor::from_vec(vec![0.0, 0.0, 1.0, 2.0, 3.0, -1.0], &[3, 2]).unwrap();
        assert_eq!(argmax_rows(&logits).unwrap(), vec![0, 1, 0]);
    }
}
