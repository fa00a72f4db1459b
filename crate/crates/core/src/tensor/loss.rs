use super::{Op, Scalar, Tensor};
use crate::error::{Error, Result};

/// Mean of `max(l, 0) − l·t + log(1 + e^{−|l|})`, the numerically stable form of
/// `−[t·log σ(l) + (1 − t)·log(1 − σ(l))]`.
pub fn bce_with_logits<T: Scalar>(logit: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    if logit.shape() != target.shape() {
        return Err(Error::shape(
            "bce_with_logits",
            logit.shape(),
            target.shape(),
        ));
    }
    let data = logit
        .data()
        .iter()
        .zip(target.data())
        .map(|(&l, &t)| l.max(T::zero()) - l * t + (-l.abs()).exp().ln_1p())
        .collect();
    let per_elem = Tensor::from_op(
        data,
        logit.shape().to_vec(),
        Op::BceLogits,
        &[logit, target],
    );
    Ok(per_elem.mean())
}

/// Mean over the batch of `−log softmax(logits)[label]`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (batch, classes) = logits.dims2("softmax_cross_entropy")?;
    if labels.len() != batch {
        return Err(Error::shape(
            "softmax_cross_entropy",
            logits.shape(),
            &[labels.len()],
        ));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Label { label, classes });
    }
    let row_max: Vec<T> = logits
        .data()
        .chunks(classes)
        .map(|row| row.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    let shift = Tensor::from_vec(row_max, &[batch])?.broadcast_axis(0, logits.shape())?;
    let shifted = logits.sub(&shift)?;
    let mut onehot = vec![T::zero(); batch * classes];
    for (i, &l) in labels.iter().enumerate() {
        onehot[i * classes + l] = T::one();
    }
    let onehot = Tensor::from_vec(onehot, logits.shape())?;
    let log_norm = shifted.exp().sum_keep_axis(0)?.ln();
    let picked = shifted.mul(&onehot)?.sum_keep_axis(0)?;
    Ok(log_norm.sub(&picked)?.mean())
}
