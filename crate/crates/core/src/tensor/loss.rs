use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Row-wise softmax of `(N, C)` logits, computed in f64.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Vec<Vec<f64>>> {
    let (_, c) = logits.dims2()?;
    Ok(logits
        .data()
        .chunks(c.max(1))
        .map(|row| {
            let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = row.iter().map(|v| (v.f64() - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            exps.into_iter().map(|e| e / z).collect()
        })
        .collect())
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, c) = logits.dims2()?;
    if labels.len() != n {
        return Err(Error::shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::shape(format!("label {bad} out of range for {c} classes")));
    }
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n * c);
    let inv_n = 1.0 / n as f64;
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().map(|v| v.f64()).fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v.f64() - max).exp()).sum();
        let log_z = z.ln() + max;
        loss += log_z - row[label].f64();
        for (j, v) in row.iter().enumerate() {
            let p = (v.f64() - log_z).exp();
            let target = if j == label { 1.0 } else { 0.0 };
            grad.push(T::of((p - target) * inv_n));
        }
    }
    Ok((loss * inv_n, Tensor::new(&[n, c], grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::<f64>::zeros(&[4, 18]);
        let (loss, _) = softmax_cross_entropy(&logits, &[0, 5, 17, 3]).unwrap();
        assert!((loss - 18f64.ln()).abs() < 1e-12);
        assert!((loss - 2.8904).abs() < 1e-4);
    }

    #[test]
    fn confident_correct_logit_has_tiny_loss() {
        let mut logits = Tensor::<f64>::zeros(&[1, 18]);
        logits.data_mut()[7] = 50.0;
        let (loss, _) = softmax_cross_entropy(&logits, &[7]).unwrap();
        assert!((0.0..1e-9).contains(&loss));
    }

    #[test]
    fn gradient_is_softmax_minus_onehot() {
        let logits = Tensor::<f64>::new(&[2, 3], vec![0.3, -1.0, 2.0, 1.0, 1.0, 0.0]).unwrap();
        let (_, g) = softmax_cross_entropy(&logits, &[2, 0]).unwrap();
        let p = softmax(&logits).unwrap();
        for (i, row) in p.iter().enumerate() {
            for (j, &pj) in row.iter().enumerate() {
                let t = if [2, 0][i] == j { 1.0 } else { 0.0 };
                assert!((g.data()[i * 3 + j] - (pj - t) / 2.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn bad_labels_rejected() {
        let logits = Tensor::<f64>::zeros(&[1, 3]);
        assert!(softmax_cross_entropy(&logits, &[3]).is_err());
        assert!(softmax_cross_entropy(&logits, &[0, 1]).is_err());
    }
}
