use crate::error::{shape_err, Result};
use crate::matrix::Matrix;

/// Mean softmax cross-entropy over a batch and its gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub loss: f32,
    /// `(softmax − onehot) / B`.
    pub dl_dscores: Matrix,
    /// Rows whose arg-max score equals the label.
    pub correct: usize,
}

/// Row-wise softmax, computed in `f64` and rounded back.
pub fn softmax(scores: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(scores.rows(), scores.cols());
    for b in 0..scores.rows() {
        let row = scores.row(b);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (o, e) in out.row_mut(b).iter_mut().zip(&exps) {
            *o = (e / z) as f32;
        }
    }
    out
}

/// First index of the largest score; ties go to the lower class.
pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (k, &x) in row.iter().enumerate() {
        if x > row[best] {
            best = k;
        }
    }
    best
}

pub fn softmax_cross_entropy(scores: &Matrix, labels: &[usize]) -> Result<LossOutput> {
    let (batch, classes) = scores.shape();
    if labels.len() != batch {
        return Err(shape_err("softmax_cross_entropy", batch, labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(shape_err("softmax_cross_entropy label", format!("< {classes}"), bad));
    }
    let mut grad = Matrix::zeros(batch, classes);
    let mut loss = 0.0f64;
    let mut correct = 0;
    for b in 0..batch {
        let row = scores.row(b);
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x as f64));
        let exps: Vec<f64> = row.iter().map(|&x| (x as f64 - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        loss += z.ln() + max - row[labels[b]] as f64;
        for (k, g) in grad.row_mut(b).iter_mut().enumerate() {
            let target = if k == labels[b] { 1.0 } else { 0.0 };
            *g = ((exps[k] / z - target) / batch as f64) as f32;
        }
        if argmax(row) == labels[b] {
            correct += 1;
        }
    }
    Ok(LossOutput {
        loss: (loss / batch as f64) as f32,
        dl_dscores: grad,
        correct,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probabilities_sum_to_one() {
        let s = Matrix::from_rows(&[[1.0, 2.0, 3.0], [-50.0, 0.0, 80.0]]);
        let p = softmax(&s);
        for b in 0..2 {
            let sum: f32 = p.row(b).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn uniform_scores_give_log_classes() {
        let s = Matrix::zeros(2, 4);
        let out = softmax_cross_entropy(&s, &[0, 3]).unwrap();
        assert!((out.loss - 4f32.ln()).abs() < 1e-6);
        // Ties resolve to class 0.
        assert_eq!(out.correct, 1);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = Matrix::from_rows(&[[0.3, -1.2, 2.0], [0.0, 0.5, -0.5]]);
        let labels = [2, 1];
        let out = softmax_cross_entropy(&s, &labels).unwrap();
        let eps = 1e-2f32;
        for b in 0..2 {
            for k in 0..3 {
                let mut plus = s.clone();
                plus.set(b, k, s.get(b, k) + eps);
                let mut minus = s.clone();
                minus.set(b, k, s.get(b, k) - eps);
                let fd = (softmax_cross_entropy(&plus, &labels).unwrap().loss
                    - softmax_cross_entropy(&minus, &labels).unwrap().loss)
                    / (2.0 * eps);
                assert!((fd - out.dl_dscores.get(b, k)).abs() < 1e-3);
            }
        }
    }

    #[test]
    fn bad_labels_are_rejected() {
        let s = Matrix::zeros(1, 2);
        assert!(softmax_cross_entropy(&s, &[2]).is_err());
        assert!(softmax_cross_entropy(&s, &[0, 1]).is_err());
    }
}
