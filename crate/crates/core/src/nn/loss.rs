use serde::{Deserialize, Serialize};

use super::error::NnError;
use super::scalar::Scalar;
use super::tensor::Tensor;

/// Guards `ln(0)` in the cross-entropy.
pub const LOG_EPSILON: f64 = 1e-7;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

/// Per-class loss multipliers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self, NnError> {
        if weights.is_empty() || weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(NnError::InvalidArgument(format!(
                "class weights must be positive and finite, got {weights:?}"
            )));
        }
        Ok(Self(weights))
    }

    pub fn uniform(classes: usize) -> Self {
        Self(vec![1.0; classes])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, class: usize) -> f64 {
        self.0[class]
    }
}

/// Argmax class counts of each response row.
pub fn argmax_counts<T: Scalar>(responses: &Tensor<T>) -> Vec<u64> {
    let k = responses.dim(1);
    let mut counts = vec![0u64; k];
    for row in responses.data().chunks_exact(k) {
        counts[argmax(row)] += 1;
    }
    counts
}

/// "Balanced" weights from the argmax of each response:
/// `w_k = N / (K * max(count_k, 1))`.
pub fn compute_class_weights<T: Scalar>(responses: &Tensor<T>) -> Result<ClassWeights, NnError> {
    if responses.rank() != 2 || responses.dim(0) == 0 {
        return Err(NnError::InvalidArgument(format!(
            "class weights need a non-empty [N,K] response tensor, got {:?}",
            responses.shape()
        )));
    }
    let n = responses.dim(0) as f64;
    let counts = argmax_counts(responses);
    let k = counts.len() as f64;
    ClassWeights::new(counts.iter().map(|&c| n / (k * c.max(1) as f64)).collect())
}

fn check_loss_shapes<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>, weights: &ClassWeights) -> Result<(), NnError> {
    if pred.rank() != 2 || pred.shape() != target.shape() {
        return Err(NnError::shape("cross_entropy", format!("pred {:?} vs target {:?}", pred.shape(), target.shape())));
    }
    if weights.len() != pred.dim(1) {
        return Err(NnError::shape(
            "cross_entropy",
            format!("{} class weights for {} classes", weights.len(), pred.dim(1)),
        ));
    }
    Ok(())
}

/// `(1/N) sum_n w(argmax t_n) * (-sum_k t_nk ln(p_nk + eps))`.
pub fn weighted_cross_entropy<T: Scalar>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    weights: &ClassWeights,
) -> Result<T, NnError> {
    check_loss_shapes(pred, target, weights)?;
    let k = pred.dim(1);
    let n = pred.dim(0);
    Ok(sum_weighted_ce(pred.data(), target.data(), weights, k) / T::lit(n as f64))
}

pub(crate) fn sum_weighted_ce<T: Scalar>(pred: &[T], target: &[T], weights: &ClassWeights, k: usize) -> T {
    let eps = T::lit(LOG_EPSILON);
    let mut total = T::zero();
    for (p, t) in pred.chunks_exact(k).zip(target.chunks_exact(k)) {
        let mut ce = T::zero();
        for (pk, tk) in p.iter().zip(t) {
            ce = ce - *tk * (*pk + eps).ln();
        }
        total = total + T::lit(weights.get(argmax(t))) * ce;
    }
    total
}

/// Gradient of the weighted cross-entropy with respect to the softmax
/// logits, scaled by `1 / batch_total`.
///
/// With `r_k = t_k p_k / (p_k + eps)` the per-sample gradient is
/// `w * (p_j * sum_k r_k - r_j)`, exact for the guarded loss.
pub(crate) fn ce_logit_grad<T: Scalar>(
    probs: &[T],
    target: &[T],
    weights: &ClassWeights,
    k: usize,
    batch_total: usize,
) -> Vec<T> {
    let eps = T::lit(LOG_EPSILON);
    let scale = T::one() / T::lit(batch_total as f64);
    let mut grad = Vec::with_capacity(probs.len());
    let mut r = vec![T::zero(); k];
    for (p, t) in probs.chunks_exact(k).zip(target.chunks_exact(k)) {
        let w = T::lit(weights.get(argmax(t))) * scale;
        let mut rsum = T::zero();
        for j in 0..k {
            r[j] = t[j] * p[j] / (p[j] + eps);
            rsum = rsum + r[j];
        }
        for j in 0..k {
            grad.push(w * (p[j] * rsum - r[j]));
        }
    }
    grad
}

/// One-hot rows for integer labels.
pub fn one_hot<T: Scalar>(labels: &[u8], classes: usize) -> Tensor<T> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &l) in labels.iter().enumerate() {
        data[i * classes + l as usize] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data).expect("one-hot shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_has_near_zero_loss() {
        let y = one_hot::<f32>(&[3, 7], 10);
        let loss = weighted_cross_entropy(&y, &y, &ClassWeights::uniform(10)).unwrap();
        assert!(loss.abs() < 1e-6, "{loss}");
    }

    #[test]
    fn uniform_prediction_costs_ln_ten() {
        let pred = Tensor::<f64>::filled(vec![4, 10], 0.1);
        let loss = weighted_cross_entropy(&pred, &one_hot(&[0, 1, 2, 9], 10), &ClassWeights::uniform(10)).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-5, "{loss}");
    }

    #[test]
    fn doubling_a_class_weight_doubles_its_share() {
        // Two samples: class 0 with p=0.5, class 1 with p=0.25.
        let mut pred = vec![0.0f64; 20];
        pred[0] = 0.5;
        pred[1] = 0.5;
        pred[10] = 0.75;
        pred[11] = 0.25;
        let pred = Tensor::new(vec![2, 10], pred).unwrap();
        let target = one_hot(&[0, 1], 10);
        let base = weighted_cross_entropy(&pred, &target, &ClassWeights::uniform(10)).unwrap();
        let mut w = vec![1.0; 10];
        w[1] = 2.0;
        let doubled = weighted_cross_entropy(&pred, &target, &ClassWeights::new(w).unwrap()).unwrap();
        let share0 = -(0.5f64 + 1e-7).ln() / 2.0;
        let share1 = -(0.25f64 + 1e-7).ln() / 2.0;
        assert!((base - (share0 + share1)).abs() < 1e-12);
        assert!((doubled - (share0 + 2.0 * share1)).abs() < 1e-12);
    }

    #[test]
    fn class_weight_examples() {
        let uniform = one_hot::<f32>(&(0..10).collect::<Vec<u8>>(), 10);
        assert!(compute_class_weights(&uniform).unwrap().as_slice().iter().all(|&w| w == 1.0));

        let labels: Vec<u8> = std::iter::repeat_n(0, 10).chain(std::iter::repeat_n(1, 90)).collect();
        let w = compute_class_weights(&one_hot::<f32>(&labels, 10)).unwrap();
        assert_eq!(w.get(0), 1.0);
        assert!((w.get(1) - 1.0 / 9.0).abs() < 1e-15);
        assert!((2..10).all(|k| w.get(k) == 10.0));
    }

    #[test]
    fn class_weight_for_rare_class_at_full_scale() {
        // 600000 responses where class 6 wins 198 times.
        let mut labels = Vec::with_capacity(600_000);
        labels.extend(std::iter::repeat_n(6u8, 198));
        labels.extend((0..600_000 - 198).map(|i| [0u8, 1, 2, 3, 4, 5, 7, 8, 9][i % 9]));
        let w = compute_class_weights(&one_hot::<f32>(&labels, 10)).unwrap();
        assert!((w.get(6) - 303.03).abs() < 0.01, "{}", w.get(6));
        let counts = argmax_counts(&one_hot::<f32>(&labels, 10));
        let identity: f64 = counts.iter().zip(w.as_slice()).map(|(&c, &w)| c as f64 * w).sum();
        assert!((identity - 600_000.0).abs() < 1e-6);
    }

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[0.1f32; 10]), 0);
        assert_eq!(argmax(&[0.0f32, 0.5, 0.5]), 1);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(ClassWeights::new(vec![1.0, 0.0]).is_err());
        assert!(ClassWeights::new(vec![f64::INFINITY]).is_err());
    }
}
