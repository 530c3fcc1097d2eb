//! Leaky integrate-and-fire dynamics, the SuperSpike surrogate, and the
//! parameter types shared by every other module.
//!
//! One step of a layer, with zero initial state, is
//!
//! ```text
//! S[t]   = Θ(u[t] − ϑ)
//! u[t+1] = α·u[t]·(1 − S[t]) + (1 − α)/C · I[t]
//! I[t+1] = W · S_in[t]
//! ```
//!
//! so a spike arriving at step `t` first moves the membrane at `t + 2`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::matrix::Matrix;
use crate::rng::seeded;

/// Per-layer neuron constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifParams {
    /// Membrane decay per step, in `[0, 1)`.
    pub alpha: f32,
    pub capacitance: f32,
    /// Firing threshold per neuron.
    pub threshold: Vec<f32>,
    /// Secondary threshold per neuron; neurons between this and
    /// `threshold` carry gradient information but do not spike.
    pub grad_threshold: Vec<f32>,
    /// Surrogate steepness.
    pub beta: f32,
}

impl LifParams {
    pub fn uniform(
        n: usize,
        alpha: f32,
        capacitance: f32,
        threshold: f32,
        grad_threshold: f32,
        beta: f32,
    ) -> Result<Self> {
        let p = Self {
            alpha,
            capacitance,
            threshold: vec![threshold; n],
            grad_threshold: vec![grad_threshold; n],
            beta,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn len(&self) -> usize {
        self.threshold.len()
    }

    pub fn is_empty(&self) -> bool {
        self.threshold.is_empty()
    }

    /// Gain applied to the stored current, `(1 − α) / C`.
    #[inline]
    pub fn current_gain(&self) -> f32 {
        (1.0 - self.alpha) / self.capacitance
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha must be in [0,1), got {}", self.alpha)));
        }
        if !(self.capacitance > 0.0) {
            return Err(Error::Config(format!(
                "capacitance must be positive, got {}",
                self.capacitance
            )));
        }
        if !(self.beta > 0.0) {
            return Err(Error::Config(format!("beta must be positive, got {}", self.beta)));
        }
        if self.threshold.len() != self.grad_threshold.len() {
            return Err(shape_err(
                "LifParams",
                self.threshold.len(),
                self.grad_threshold.len(),
            ));
        }
        if let Some(i) = self
            .threshold
            .iter()
            .zip(&self.grad_threshold)
            .position(|(t, g)| g > t)
        {
            return Err(Error::Config(format!(
                "grad_threshold[{i}] exceeds threshold[{i}]"
            )));
        }
        Ok(())
    }
}

/// Synaptic weights of one layer: rows are post-synaptic neurons, columns
/// pre-synaptic neurons.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    pub w: Matrix,
}

impl LayerWeights {
    pub fn new(w: Matrix) -> Result<Self> {
        if !w.is_finite() {
            return Err(Error::Contract("weights must be finite".into()));
        }
        Ok(Self { w })
    }

    #[inline]
    pub fn layer_size(&self) -> usize {
        self.w.rows()
    }

    #[inline]
    pub fn fan_in(&self) -> usize {
        self.w.cols()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OutputMode {
    /// Class score is the time-summed membrane of a non-spiking,
    /// non-resetting output layer.
    #[default]
    MembraneSum,
    /// Class score is the output layer's spike count.
    SpikeCount,
}

/// Network shape and sparse capacities.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Neuron counts, input first, output last.
    pub layer_sizes: Vec<usize>,
    /// Spike-tensor capacity for every population, aligned with
    /// `layer_sizes`. The last entry is only read under spike-count readout.
    pub sparse_sizes: Vec<usize>,
    pub batch_size: usize,
    pub num_timesteps: usize,
    pub output_mode: OutputMode,
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::Config("a network needs at least an input and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if self.sparse_sizes.len() != self.layer_sizes.len() {
            return Err(Error::Config(format!(
                "expected {} sparse sizes, got {}",
                self.layer_sizes.len(),
                self.sparse_sizes.len()
            )));
        }
        for (k, (&cap, &n)) in self.sparse_sizes.iter().zip(&self.layer_sizes).enumerate() {
            if cap < 2 || cap % 2 != 0 {
                return Err(Error::Config(format!(
                    "sparse size {cap} of population {k} must be even and at least 2"
                )));
            }
            // Odd-sized layers cannot be represented at full capacity with
            // an even tensor; one extra slot is never filled.
            if cap > n + (n % 2) {
                return Err(Error::Config(format!(
                    "sparse size {cap} exceeds layer size {n} of population {k}"
                )));
            }
        }
        if self.batch_size == 0 || self.num_timesteps == 0 {
            return Err(Error::Config("batch size and timesteps must be positive".into()));
        }
        Ok(())
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_size(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Capacities equal to the layer sizes (rounded up to even), so nothing
    /// is ever dropped.
    pub fn full_capacity(layer_sizes: &[usize]) -> Vec<usize> {
        layer_sizes.iter().map(|&n| (n + n % 2).max(2)).collect()
    }
}

/// Membrane potentials and stored input currents of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayerState {
    pub u: Matrix,
    pub i_syn: Matrix,
}

impl DenseLayerState {
    pub fn zeros(batch: usize, n: usize) -> Self {
        Self {
            u: Matrix::zeros(batch, n),
            i_syn: Matrix::zeros(batch, n),
        }
    }
}

/// SuperSpike surrogate `1 / (β|x| + 1)²`.
#[inline]
pub fn surrogate(x: f32, beta: f32) -> f32 {
    let d = beta * x.abs() + 1.0;
    1.0 / (d * d)
}

/// Membrane recurrence for a single neuron. `spike` is 0 or 1 on the hard
/// path and a soft value in `(0, 1)` on the relaxed path.
#[inline(always)]
pub fn membrane_update(u: f32, spike: f32, current: f32, alpha: f32, gain: f32) -> f32 {
    alpha * u * (1.0 - spike) + gain * current
}

/// How spikes are produced from `u − ϑ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum SpikeFn {
    /// Heaviside forward (`u ≥ ϑ` fires), SuperSpike backward.
    #[default]
    Heaviside,
    /// Smooth fast-sigmoid `½ + ½·βx/(β|x| + 1)`, used for finite
    /// difference checks. Its derivative is `(β/2)·h(x)`.
    Relaxed,
}

impl SpikeFn {
    #[inline]
    pub fn value(self, x: f32, beta: f32) -> f32 {
        match self {
            SpikeFn::Heaviside => {
                if x >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            SpikeFn::Relaxed => 0.5 + 0.5 * beta * x / (beta * x.abs() + 1.0),
        }
    }

    #[inline]
    pub fn derivative(self, x: f32, beta: f32) -> f32 {
        match self {
            SpikeFn::Heaviside => surrogate(x, beta),
            SpikeFn::Relaxed => 0.5 * beta * surrogate(x, beta),
        }
    }
}

/// `out[b][i] = 1` iff `u[b][i] ≥ threshold[i]`.
pub fn threshold_spikes_dense(u: &Matrix, threshold: &[f32]) -> Result<Matrix> {
    if u.cols() != threshold.len() {
        return Err(shape_err("threshold_spikes_dense", threshold.len(), u.cols()));
    }
    Ok(Matrix::from_fn(u.rows(), u.cols(), |b, i| {
        if u.get(b, i) >= threshold[i] {
            1.0
        } else {
            0.0
        }
    }))
}

/// One dense LIF step. Spikes are read off the incoming membrane, the
/// membrane integrates the *stored* current, and `new_current` is stored
/// for the next step.
pub fn lif_step_dense(
    state: &DenseLayerState,
    params: &LifParams,
    new_current: &Matrix,
) -> Result<(DenseLayerState, Matrix)> {
    let (b, n) = state.u.shape();
    state.i_syn.check_shape(b, n, "lif_step_dense")?;
    new_current.check_shape(b, n, "lif_step_dense")?;
    if params.len() != n {
        return Err(shape_err("lif_step_dense", n, params.len()));
    }
    let spikes = threshold_spikes_dense(&state.u, &params.threshold)?;
    let gain = params.current_gain();
    let mut u = Matrix::zeros(b, n);
    for r in 0..b {
        let (ur, sr, ir) = (state.u.row(r), spikes.row(r), state.i_syn.row(r));
        for (i, out) in u.row_mut(r).iter_mut().enumerate() {
            *out = membrane_update(ur[i], sr[i], ir[i], params.alpha, gain);
        }
    }
    Ok((
        DenseLayerState {
            u,
            i_syn: new_current.clone(),
        },
        spikes,
    ))
}

/// A spiking layer: its incoming weights and its neuron constants.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: LayerWeights,
    pub params: LifParams,
}

/// Parameters of a full network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub spec: NetworkSpec,
    pub layers: Vec<Layer>,
}

/// Neuron constants and weight scale used when initialising a network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitConfig {
    pub alpha: f32,
    pub capacitance: f32,
    pub threshold: f32,
    pub grad_threshold: f32,
    pub beta: f32,
    /// Weights are drawn uniformly with standard deviation
    /// `weight_scale / sqrt(fan_in)`.
    pub weight_scale: f32,
    /// Added to every weight; zero gives zero-mean init.
    pub weight_mean: f32,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            capacitance: 1.0,
            threshold: 1.0,
            grad_threshold: 0.5,
            beta: 10.0,
            weight_scale: 8.0,
            weight_mean: 0.0,
        }
    }
}

impl Network {
    pub fn new(spec: NetworkSpec, layers: Vec<Layer>) -> Result<Self> {
        spec.validate()?;
        if layers.len() != spec.num_layers() {
            return Err(shape_err("Network::new", spec.num_layers(), layers.len()));
        }
        for (k, layer) in layers.iter().enumerate() {
            let (n, fan_in) = (spec.layer_sizes[k + 1], spec.layer_sizes[k]);
            layer.weights.w.check_shape(n, fan_in, "Network::new")?;
            if layer.params.len() != n {
                return Err(shape_err("Network::new", n, layer.params.len()));
            }
            layer.params.validate()?;
        }
        Ok(Self { spec, layers })
    }

    /// Random weights, identical neuron constants in every layer.
    pub fn random(spec: NetworkSpec, init: &InitConfig, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = seeded(seed, 0x1417);
        let mut layers = Vec::with_capacity(spec.num_layers());
        for k in 0..spec.num_layers() {
            let (n, fan_in) = (spec.layer_sizes[k + 1], spec.layer_sizes[k]);
            // Uniform on [-a, a] has standard deviation a/√3.
            let a = init.weight_scale * (3.0 / fan_in as f32).sqrt();
            let w = Matrix::from_fn(n, fan_in, |_, _| {
                init.weight_mean + rng.gen_range(-a..=a)
            });
            let params = LifParams::uniform(
                n,
                init.alpha,
                init.capacitance,
                init.threshold,
                init.grad_threshold,
                init.beta,
            )?;
            layers.push(Layer {
                weights: LayerWeights::new(w)?,
                params,
            });
        }
        Ok(Self { spec, layers })
    }

    pub fn set_grad_threshold(&mut self, value: f32) {
        for layer in &mut self.layers {
            layer.params.grad_threshold.iter_mut().for_each(|g| *g = value);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(alpha: f32, thr: f32, u: f32, i: f32) -> (f32, f32) {
        let params = LifParams::uniform(1, alpha, 1.0, thr, thr, 10.0).unwrap();
        let state = DenseLayerState {
            u: Matrix::from_rows(&[[u]]),
            i_syn: Matrix::from_rows(&[[i]]),
        };
        let (next, s) = lif_step_dense(&state, &params, &Matrix::zeros(1, 1)).unwrap();
        (s.get(0, 0), next.u.get(0, 0))
    }

    #[test]
    fn lif_step_examples() {
        let (s, u) = single(0.8, 1.0, 0.5, 1.0);
        assert_eq!(s, 0.0);
        assert!((u - 0.6).abs() < 1e-6);

        let (s, u) = single(0.8, 1.0, 1.2, 0.0);
        assert_eq!(s, 1.0);
        assert_eq!(u, 0.0);

        for alpha in [0.0, 0.3, 0.99] {
            assert_eq!(single(alpha, 1.0, 0.0, 0.0), (0.0, 0.0));
        }
    }

    #[test]
    fn lif_step_stores_new_current() {
        let params = LifParams::uniform(2, 0.5, 1.0, 1.0, 0.5, 10.0).unwrap();
        let state = DenseLayerState::zeros(1, 2);
        let fresh = Matrix::from_rows(&[[0.25, -1.0]]);
        let (next, _) = lif_step_dense(&state, &params, &fresh).unwrap();
        assert_eq!(next.i_syn, fresh);
        // The fresh current has not reached the membrane yet.
        assert_eq!(next.u, Matrix::zeros(1, 2));
    }

    #[test]
    fn lif_step_shape_mismatch() {
        let params = LifParams::uniform(2, 0.5, 1.0, 1.0, 0.5, 10.0).unwrap();
        let state = DenseLayerState::zeros(1, 2);
        assert!(matches!(
            lif_step_dense(&state, &params, &Matrix::zeros(1, 3)),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn surrogate_examples() {
        assert_eq!(surrogate(0.0, 10.0), 1.0);
        assert_eq!(surrogate(0.0, 0.1), 1.0);
        assert!((surrogate(0.1, 10.0) - 0.25).abs() < 1e-6);
        assert!((surrogate(-0.1, 10.0) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn heaviside_ties_fire() {
        let u = Matrix::from_rows(&[[0.9, 1.0, 1.1]]);
        let s = threshold_spikes_dense(&u, &[1.0; 3]).unwrap();
        assert_eq!(s.row(0), &[0.0, 1.0, 1.0]);

        let low = Matrix::from_rows(&[[0.1, -3.0, 0.99]]);
        assert_eq!(threshold_spikes_dense(&low, &[1.0; 3]).unwrap().row(0), &[0.0; 3]);
        assert_eq!(
            threshold_spikes_dense(&low, &[f32::MIN; 3]).unwrap().row(0),
            &[1.0; 3]
        );
    }

    #[test]
    fn params_validation() {
        assert!(LifParams::uniform(1, 1.0, 1.0, 1.0, 0.5, 1.0).is_err());
        assert!(LifParams::uniform(1, 0.5, 0.0, 1.0, 0.5, 1.0).is_err());
        assert!(LifParams::uniform(1, 0.5, 1.0, 1.0, 0.5, 0.0).is_err());
        assert!(LifParams::uniform(1, 0.5, 1.0, 1.0, 1.5, 1.0).is_err());
        assert!(LifParams::uniform(1, 0.0, 1.0, 1.0, 1.0, 1.0).is_ok());
    }

    #[test]
    fn spec_validation() {
        let mut spec = NetworkSpec {
            layer_sizes: vec![4, 6, 2],
            sparse_sizes: vec![4, 4, 2],
            batch_size: 2,
            num_timesteps: 3,
            output_mode: OutputMode::MembraneSum,
        };
        spec.validate().unwrap();
        spec.sparse_sizes[1] = 3;
        assert!(spec.validate().is_err());
        spec.sparse_sizes[1] = 8;
        assert!(spec.validate().is_err());
        spec.sparse_sizes[1] = 0;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn relaxed_spike_derivative_matches_difference_quotient() {
        let beta = 5.0f32;
        for &x in &[-0.7f32, -0.05, 0.02, 0.3, 1.5] {
            let h = 1e-3f64;
            let f = |x: f64| 0.5 + 0.5 * beta as f64 * x / (beta as f64 * x.abs() + 1.0);
            let fd = (f(x as f64 + h) - f(x as f64 - h)) / (2.0 * h);
            let d = SpikeFn::Relaxed.derivative(x, beta) as f64;
            assert!((fd - d).abs() < 1e-4 * d.abs().max(1.0), "x={x} fd={fd} d={d}");
        }
    }
}
