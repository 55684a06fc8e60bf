use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Classification targets: class indices or a one-hot `N×K` matrix.
#[derive(Clone, Copy, Debug)]
pub enum Targets<'a, T> {
    Indices(&'a [usize]),
    OneHot(&'a Tensor<T>),
}

fn target_rows<T: Scalar>(targets: Targets<'_, T>, n: usize, k: usize) -> Result<Vec<usize>> {
    match targets {
        Targets::Indices(idx) => {
            if idx.len() != n {
                bail!(Data, "{} labels for {} logit rows", idx.len(), n);
            }
            if let Some(&bad) = idx.iter().find(|&&i| i >= k) {
                bail!(Data, "label {} out of range for {} classes", bad, k);
            }
            Ok(idx.to_vec())
        }
        Targets::OneHot(t) => {
            if t.shape() != [n, k] {
                bail!(Data, "one-hot targets {:?}, expected [{n}, {k}]", t.shape());
            }
            t.data()
                .chunks_exact(k)
                .map(|row| {
                    let hot: Vec<usize> = (0..k).filter(|&j| row[j] == T::one()).collect();
                    match hot.as_slice() {
                        [j] if row.iter().all(|&v| v == T::zero() || v == T::one()) => Ok(*j),
                        _ => Err(crate::Error::Data("one-hot row is not a unit vector".into())),
                    }
                })
                .collect()
        }
    }
}

fn logits_shape<T: Scalar>(logits: &Tensor<T>) -> Result<(usize, usize)> {
    match logits.shape() {
        &[n, k] if k >= 2 => Ok((n, k)),
        s => bail!(Dimension, "logits must be N×K with K ≥ 2, got {:?}", s),
    }
}

/// Row-wise softmax, stabilized by subtracting each row's maximum.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, k) = logits_shape(logits)?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            z += *v;
        }
        row.iter_mut().for_each(|v| *v /= z);
    }
    Ok(out)
}

/// `−log softmax(logits)[label]` for every row.
pub fn per_sample_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: Targets<'_, T>) -> Result<Vec<T>> {
    let (n, k) = logits_shape(logits)?;
    let labels = target_rows(targets, n, k)?;
    Ok(logits
        .data()
        .chunks_exact(k)
        .zip(&labels)
        .map(|(row, &y)| {
            let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
            let lse = m + row.iter().map(|&v| (v - m).exp()).sum::<T>().ln();
            lse - row[y]
        })
        .collect())
}

/// Mean cross-entropy over the batch and its gradient `(softmax − onehot)/N`.
pub fn softmax_cross_entropy<T: Scalar>(logits: &Tensor<T>, targets: Targets<'_, T>) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits_shape(logits)?;
    let labels = target_rows(targets, n, k)?;
    let losses = per_sample_cross_entropy(logits, Targets::Indices(&labels))?;
    let inv_n = T::one() / T::of(n as f64);
    let mut grad = softmax(logits)?;
    for (row, &y) in grad.data_mut().chunks_exact_mut(k).zip(&labels) {
        row[y] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_n);
    }
    let loss = losses.iter().copied().sum::<T>() * inv_n;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_k() {
        let logits = Tensor::<f64>::zeros([3, 7]);
        let (loss, _) = softmax_cross_entropy(&logits, Targets::Indices(&[0, 3, 6])).unwrap();
        assert!((loss - 7f64.ln()).abs() < 1e-12);
        assert!((loss - 1.9459).abs() < 1e-4);
        assert!(loss < -(0.14f64.ln()));
    }

    #[test]
    fn saturated_correct_class() {
        let logits = Tensor::<f64>::from_rows(&[&[1000.0, 0.0, 0.0]]);
        let (loss, g) = softmax_cross_entropy(&logits, Targets::Indices(&[0])).unwrap();
        assert!(loss.abs() < 1e-12);
        assert!(g.is_finite());
    }

    #[test]
    fn two_class_hand_value() {
        let logits = Tensor::<f64>::from_rows(&[&[1.0, 0.0]]);
        let (loss, _) = softmax_cross_entropy(&logits, Targets::Indices(&[0])).unwrap();
        let e = 1f64.exp();
        assert!((loss + (e / (e + 1.0)).ln()).abs() < 1e-12);
        assert!((loss - 0.31326).abs() < 1e-5);
    }

    #[test]
    fn one_hot_matches_indices() {
        let logits = Tensor::<f64>::from_rows(&[&[0.3, -1.0, 2.0], &[1.0, 1.0, 0.0]]);
        let onehot = Tensor::<f64>::from_rows(&[&[0.0, 0.0, 1.0], &[1.0, 0.0, 0.0]]);
        let a = softmax_cross_entropy(&logits, Targets::Indices(&[2, 0])).unwrap();
        let b = softmax_cross_entropy(&logits, Targets::OneHot(&onehot)).unwrap();
        assert_eq!(a.0, b.0);
        assert_eq!(a.1, b.1);
    }

    #[test]
    fn label_out_of_range_is_data_error() {
        let logits = Tensor::<f64>::zeros([1, 3]);
        assert!(matches!(
            softmax_cross_entropy(&logits, Targets::Indices(&[3])),
            Err(crate::Error::Data(_))
        ));
    }

    #[test]
    fn softmax_rows_are_a_simplex() {
        let logits = Tensor::<f64>::from_rows(&[&[800.0, -3.0, 1.0], &[-2.0, -2.5, 0.1]]);
        let p = softmax(&logits).unwrap();
        for row in p.data().chunks(3) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }
}
