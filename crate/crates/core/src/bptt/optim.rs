use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::linalg::GradientSet;
use crate::matrix::Matrix;
use crate::model::Network;

/// `w ← w − lr · g`.
pub fn sgd_update(w: &mut Matrix, g: &Matrix, lr: f32) -> Result<()> {
    w.check_same(g, "sgd_update")?;
    for (w, g) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
        *w -= lr * g;
    }
    Ok(())
}

/// One Adam update of a single tensor. `step` is the 1-based step count
/// after incrementing.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    w: &mut Matrix,
    g: &Matrix,
    m: &mut Matrix,
    v: &mut Matrix,
    step: u64,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
) -> Result<()> {
    w.check_same(g, "adam_update")?;
    w.check_same(m, "adam_update")?;
    w.check_same(v, "adam_update")?;
    let bc1 = 1.0 - (beta1 as f64).powi(step as i32);
    let bc2 = 1.0 - (beta2 as f64).powi(step as i32);
    let (bc1, bc2) = (bc1 as f32, bc2 as f32);
    let it = w
        .as_mut_slice()
        .iter_mut()
        .zip(g.as_slice())
        .zip(m.as_mut_slice().iter_mut().zip(v.as_mut_slice()));
    for ((w, &g), (m, v)) in it {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *w -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum OptimizerState {
    Sgd {
        lr: f32,
    },
    Adam {
        lr: f32,
        beta1: f32,
        beta2: f32,
        eps: f32,
        step: u64,
        m: Vec<Matrix>,
        v: Vec<Matrix>,
    },
}

impl OptimizerState {
    pub fn sgd(lr: f32) -> Self {
        Self::Sgd { lr }
    }

    /// Adam with the usual defaults (β₁ = 0.9, β₂ = 0.999, ε = 1e-8) and
    /// zeroed moments shaped like `net`'s weights.
    pub fn adam(net: &Network, lr: f32) -> Self {
        let zeros: Vec<Matrix> = net
            .layers
            .iter()
            .map(|l| Matrix::zeros(l.weights.layer_size(), l.weights.fan_in()))
            .collect();
        Self::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn learning_rate(&self) -> f32 {
        match self {
            Self::Sgd { lr } | Self::Adam { lr, .. } => *lr,
        }
    }

    /// Applies one update to every layer of `net`.
    pub fn step(&mut self, net: &mut Network, grads: &[GradientSet]) -> Result<()> {
        if grads.len() != net.layers.len() {
            return Err(shape_err("OptimizerState::step", net.layers.len(), grads.len()));
        }
        match self {
            Self::Sgd { lr } => {
                for (layer, g) in net.layers.iter_mut().zip(grads) {
                    sgd_update(&mut layer.weights.w, &g.dl_dw, *lr)?;
                }
            }
            Self::Adam {
                lr,
                beta1,
                beta2,
                eps,
                step,
                m,
                v,
            } => {
                *step += 1;
                for (k, (layer, g)) in net.layers.iter_mut().zip(grads).enumerate() {
                    adam_update(
                        &mut layer.weights.w,
                        &g.dl_dw,
                        &mut m[k],
                        &mut v[k],
                        *step,
                        *lr,
                        *beta1,
                        *beta2,
                        *eps,
                    )?;
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(x: f32) -> Matrix {
        Matrix::from_rows(&[[x]])
    }

    #[test]
    fn sgd_examples() {
        let mut w = scalar(1.0);
        sgd_update(&mut w, &scalar(0.5), 0.1).unwrap();
        assert!((w.get(0, 0) - 0.95).abs() < 1e-7);

        let mut w = scalar(1.0);
        sgd_update(&mut w, &scalar(0.0), 0.1).unwrap();
        assert_eq!(w.get(0, 0), 1.0);

        let (mut two, mut one) = (scalar(1.0), scalar(1.0));
        sgd_update(&mut two, &scalar(0.25), 0.1).unwrap();
        sgd_update(&mut two, &scalar(0.25), 0.1).unwrap();
        sgd_update(&mut one, &scalar(0.5), 0.1).unwrap();
        assert!((two.get(0, 0) - one.get(0, 0)).abs() < 1e-7);
    }

    fn adam(w: &mut Matrix, g: &Matrix, m: &mut Matrix, v: &mut Matrix, step: u64) {
        adam_update(w, g, m, v, step, 1e-3, 0.9, 0.999, 1e-8).unwrap();
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let (mut w, mut m, mut v) = (scalar(0.7), scalar(0.0), scalar(0.0));
        for step in 1..=5 {
            adam(&mut w, &scalar(0.0), &mut m, &mut v, step);
        }
        assert_eq!(w.get(0, 0), 0.7);
    }

    #[test]
    fn adam_first_step_moves_by_learning_rate() {
        // At t = 1: m̂ = g, v̂ = g², so the step is lr·g/(|g| + ε) ≈ lr·sign(g).
        for g in [1e-3f32, 0.5, 40.0, -7.0] {
            let (mut w, mut m, mut v) = (scalar(0.0), scalar(0.0), scalar(0.0));
            adam(&mut w, &scalar(g), &mut m, &mut v, 1);
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((w.get(0, 0) - expected).abs() < 1e-8, "g={g}");
        }
    }

    #[test]
    fn adam_moments_decay_after_gradients_stop() {
        let (mut w, mut m, mut v) = (scalar(0.0), scalar(0.0), scalar(0.0));
        adam(&mut w, &scalar(1.0), &mut m, &mut v, 1);
        let (m1, v1) = (m.get(0, 0), v.get(0, 0));
        assert!((m1 - 0.1).abs() < 1e-6 && (v1 / 0.001 - 1.0).abs() < 1e-4);
        for step in 2..=20 {
            adam(&mut w, &scalar(0.0), &mut m, &mut v, step);
        }
        let expect_m = 0.1 * 0.9f32.powi(19);
        let expect_v = 0.001 * 0.999f32.powi(19);
        assert!((m.get(0, 0) - expect_m).abs() < 1e-7);
        assert!((v.get(0, 0) / expect_v - 1.0).abs() < 1e-4);
    }
}
