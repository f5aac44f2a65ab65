//! Minimal dense networks with exact reverse-mode gradients and an
//! adaptive-moment optimizer. Everything is f64, single-threaded and
//! bit-reproducible for a fixed initialization seed.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("input width {got} does not match network input dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("gradient shapes do not match network parameters")]
    ShapeMismatch,
    #[error("non-finite gradient; optimizer step skipped")]
    NonFiniteGradient,
    #[error("flat parameter array has length {got}, network needs {expected}")]
    BadFlatLength { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
    Softmax,
}

/// Shape and activation of one layer, the serializable architecture record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub inputs: usize,
    pub outputs: usize,
    pub activation: Activation,
}

#[derive(Debug, Clone)]
struct Layer {
    w: Array2<f64>, // inputs x outputs
    b: Array1<f64>,
    activation: Activation,
}

/// Fully connected network.
#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<Layer>,
}

/// Cached intermediates from a forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// Input to each layer (activations of the previous layer).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation values of each layer.
    preacts: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

/// Per-layer parameter gradients.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w: Vec<Array2<f64>>,
    pub b: Vec<Array1<f64>>,
}

impl Gradients {
    pub fn is_finite(&self) -> bool {
        self.w.iter().all(|g| g.iter().all(|v| v.is_finite()))
            && self.b.iter().all(|g| g.iter().all(|v| v.is_finite()))
    }
}

impl DenseNet {
    /// Builds a net from layer sizes: `dims = [in, h1, ..., out]`. Hidden
    /// layers use `hidden`, the last layer uses `output`. Weights are
    /// fan-in-scaled uniform, biases start at zero; `seed` pins every draw.
    pub fn new(dims: &[usize], hidden: Activation, output: Activation, seed: u64) -> Self {
        assert!(dims.len() >= 2, "need at least input and output dims");
        let specs: Vec<LayerSpec> = (0..dims.len() - 1)
            .map(|i| LayerSpec {
                inputs: dims[i],
                outputs: dims[i + 1],
                activation: if i + 2 == dims.len() { output } else { hidden },
            })
            .collect();
        Self::from_spec(&specs, seed)
    }

    pub fn from_spec(specs: &[LayerSpec], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = specs
            .iter()
            .map(|s| {
                let bound = 1.0 / (s.inputs as f64).sqrt();
                let w = Array2::from_shape_fn((s.inputs, s.outputs), |_| {
                    rng.gen_range(-bound..bound)
                });
                Layer {
                    w,
                    b: Array1::zeros(s.outputs),
                    activation: s.activation,
                }
            })
            .collect();
        DenseNet { layers }
    }

    pub fn spec(&self) -> Vec<LayerSpec> {
        self.layers
            .iter()
            .map(|l| LayerSpec {
                inputs: l.w.nrows(),
                outputs: l.w.ncols(),
                activation: l.activation,
            })
            .collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().w.ncols()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Forward pass caching per-layer inputs and pre-activations.
    pub fn forward(&self, input: &Array2<f64>) -> Result<ForwardCache, NnError> {
        if input.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                got: input.ncols(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.clone();
        for layer in &self.layers {
            let z = x.dot(&layer.w) + &layer.b;
            inputs.push(x);
            x = activate(&z, layer.activation);
            preacts.push(z);
        }
        Ok(ForwardCache {
            inputs,
            preacts,
            output: x,
        })
    }

    /// Forward pass without keeping intermediates.
    pub fn infer(&self, input: &Array2<f64>) -> Result<Array2<f64>, NnError> {
        Ok(self.forward(input)?.output)
    }

    /// Single-sample convenience wrapper around [`infer`](Self::infer).
    pub fn infer1(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = Array2::from_shape_vec((1, input.len()), input.to_vec()).unwrap();
        Ok(self.infer(&x)?.row(0).to_vec())
    }

    /// Exact reverse-mode gradients. `out_grad` is dL/d(output activations);
    /// returns parameter gradients and dL/d(input).
    pub fn backward(
        &self,
        cache: &ForwardCache,
        out_grad: &Array2<f64>,
    ) -> Result<(Gradients, Array2<f64>), NnError> {
        if out_grad.dim() != cache.output.dim() {
            return Err(NnError::ShapeMismatch);
        }
        let mut grads = Gradients {
            w: Vec::with_capacity(self.layers.len()),
            b: Vec::with_capacity(self.layers.len()),
        };
        let mut g = out_grad.clone();
        for (layer, (input, preact)) in self
            .layers
            .iter()
            .zip(cache.inputs.iter().zip(&cache.preacts))
            .rev()
        {
            if input.nrows() != g.nrows() || preact.ncols() != g.ncols() {
                return Err(NnError::ShapeMismatch);
            }
            let dz = activation_backward(preact, &g, layer.activation);
            grads.w.push(input.t().dot(&dz));
            grads.b.push(dz.sum_axis(Axis(0)));
            g = dz.dot(&layer.w.t());
        }
        grads.w.reverse();
        grads.b.reverse();
        Ok((grads, g))
    }

    /// Parameters flattened layer by layer, weights (row-major) then biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend(layer.w.iter());
            out.extend(layer.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<(), NnError> {
        if params.len() != self.param_count() {
            return Err(NnError::BadFlatLength {
                expected: self.param_count(),
                got: params.len(),
            });
        }
        let mut at = 0;
        for layer in &mut self.layers {
            for v in layer.w.iter_mut() {
                *v = params[at];
                at += 1;
            }
            for v in layer.b.iter_mut() {
                *v = params[at];
                at += 1;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> NetCheckpoint {
        NetCheckpoint {
            spec: self.spec(),
            params: self.flat_params(),
        }
    }

    pub fn from_checkpoint(ckpt: &NetCheckpoint) -> Result<DenseNet, NnError> {
        let mut net = DenseNet::from_spec(&ckpt.spec, 0);
        net.set_flat_params(&ckpt.params)?;
        Ok(net)
    }
}

/// Architecture plus flat parameters; the serialized form of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetCheckpoint {
    pub spec: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

fn activate(z: &Array2<f64>, activation: Activation) -> Array2<f64> {
    match activation {
        Activation::Identity => z.clone(),
        Activation::Relu => z.mapv(|v| if v > 0.0 { v } else { 0.0 }),
        Activation::Tanh => z.mapv(f64::tanh),
        Activation::Softmax => {
            let mut out = z.clone();
            for mut row in out.rows_mut() {
                let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                row.mapv_inplace(|v| (v - max).exp());
                let sum: f64 = row.sum();
                row.mapv_inplace(|v| v / sum);
            }
            out
        }
    }
}

fn activation_backward(preact: &Array2<f64>, g: &Array2<f64>, activation: Activation) -> Array2<f64> {
    match activation {
        Activation::Identity => g.clone(),
        Activation::Relu => {
            let mut dz = g.clone();
            dz.zip_mut_with(preact, |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            dz
        }
        Activation::Tanh => {
            let mut dz = g.clone();
            dz.zip_mut_with(preact, |d, &z| {
                let t = z.tanh();
                *d *= 1.0 - t * t;
            });
            dz
        }
        Activation::Softmax => {
            let y = activate(preact, Activation::Softmax);
            let mut dz = Array2::zeros(g.raw_dim());
            for ((mut dz_row, y_row), g_row) in
                dz.rows_mut().into_iter().zip(y.rows()).zip(g.rows())
            {
                let dot: f64 = y_row.iter().zip(g_row.iter()).map(|(a, b)| a * b).sum();
                for ((d, &yi), &gi) in dz_row.iter_mut().zip(y_row).zip(g_row) {
                    *d = yi * (gi - dot);
                }
            }
            dz
        }
    }
}

/// Numerically safe log-softmax of one logits row (max-subtraction trick).
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max
        + logits
            .iter()
            .map(|&v| (v - max).exp())
            .sum::<f64>()
            .ln();
    logits.iter().map(|&v| v - lse).collect()
}

/// Index of the maximum value; ties break toward the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
}

impl Adam {
    pub fn new(net: &DenseNet, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m_w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            v_w: net.layers.iter().map(|l| Array2::zeros(l.w.raw_dim())).collect(),
            m_b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
            v_b: net.layers.iter().map(|l| Array1::zeros(l.b.raw_dim())).collect(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. A non-finite gradient leaves the network
    /// and the optimizer untouched and reports an error.
    pub fn step(&mut self, net: &mut DenseNet, grads: &Gradients) -> Result<(), NnError> {
        if grads.w.len() != net.layers.len() || grads.b.len() != net.layers.len() {
            return Err(NnError::ShapeMismatch);
        }
        for (layer, (gw, gb)) in net.layers.iter().zip(grads.w.iter().zip(&grads.b)) {
            if layer.w.raw_dim() != gw.raw_dim() || layer.b.raw_dim() != gb.raw_dim() {
                return Err(NnError::ShapeMismatch);
            }
        }
        if !grads.is_finite() {
            return Err(NnError::NonFiniteGradient);
        }

        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (i, layer) in net.layers.iter_mut().enumerate() {
            update_tensor(
                &mut layer.w,
                &grads.w[i],
                &mut self.m_w[i],
                &mut self.v_w[i],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update_tensor(
                &mut layer.b,
                &grads.b[i],
                &mut self.m_b[i],
                &mut self.v_b[i],
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }
        Ok(())
    }

    /// Serializable snapshot, moments flattened in parameter order.
    pub fn to_state(&self) -> AdamState {
        let mut m = Vec::new();
        let mut v = Vec::new();
        for i in 0..self.m_w.len() {
            m.extend(self.m_w[i].iter());
            m.extend(self.m_b[i].iter());
            v.extend(self.v_w[i].iter());
            v.extend(self.v_b[i].iter());
        }
        AdamState {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            step: self.step,
            m,
            v,
        }
    }

    pub fn from_state(net: &DenseNet, state: &AdamState) -> Result<Adam, NnError> {
        let mut adam = Adam::new(net, state.lr);
        adam.beta1 = state.beta1;
        adam.beta2 = state.beta2;
        adam.eps = state.eps;
        adam.step = state.step;
        if state.m.len() != net.param_count() || state.v.len() != net.param_count() {
            return Err(NnError::BadFlatLength {
                expected: net.param_count(),
                got: state.m.len(),
            });
        }
        let mut at = 0;
        for i in 0..adam.m_w.len() {
            for val in adam.m_w[i].iter_mut() {
                *val = state.m[at];
                at += 1;
            }
            for val in adam.m_b[i].iter_mut() {
                *val = state.m[at];
                at += 1;
            }
        }
        let mut at = 0;
        for i in 0..adam.v_w.len() {
            for val in adam.v_w[i].iter_mut() {
                *val = state.v[at];
                at += 1;
            }
            for val in adam.v_b[i].iter_mut() {
                *val = state.v[at];
                at += 1;
            }
        }
        Ok(adam)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[allow(clippy::too_many_arguments)]
fn update_tensor<D: ndarray::Dimension>(
    param: &mut ndarray::Array<f64, D>,
    grad: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(param)
        .and(grad)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn zero_net_identity_activation_outputs_zero() {
        let mut net = DenseNet::new(&[3, 2], Activation::Identity, Activation::Identity, 0);
        net.set_flat_params(&vec![0.0; net.param_count()]).unwrap();
        let x = arr2(&[[1.0, -2.0, 3.0]]);
        let y = net.infer(&x).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_weights_pass_input_through() {
        let mut net = DenseNet::new(&[3, 3], Activation::Identity, Activation::Identity, 0);
        let mut params = vec![0.0; net.param_count()];
        for i in 0..3 {
            params[i * 3 + i] = 1.0;
        }
        net.set_flat_params(&params).unwrap();
        let x = arr2(&[[0.5, -1.5, 2.0]]);
        let y = net.infer(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn softmax_rows_normalize() {
        let net = DenseNet::new(&[4, 8, 3], Activation::Relu, Activation::Softmax, 7);
        let x = arr2(&[[0.1, -0.2, 0.3, 1000.0], [0.0, 0.0, 0.0, 0.0]]);
        let y = net.infer(&x).unwrap();
        for row in y.rows() {
            let sum: f64 = row.sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(row.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn scalar_product_rule() {
        // f(x) = w * x with w = 2, x = 3; dL/dw = x, dL/dx = w for seed 1.
        let mut net = DenseNet::new(&[1, 1], Activation::Identity, Activation::Identity, 0);
        net.set_flat_params(&[2.0, 0.0]).unwrap();
        let x = arr2(&[[3.0]]);
        let cache = net.forward(&x).unwrap();
        let (grads, input_grad) = net.backward(&cache, &arr2(&[[1.0]])).unwrap();
        assert_eq!(grads.w[0][[0, 0]], 3.0);
        assert_eq!(grads.b[0][0], 1.0);
        assert_eq!(input_grad[[0, 0]], 2.0);
    }

    #[test]
    fn relu_blocks_gradient_below_zero() {
        let mut net = DenseNet::new(&[1, 1], Activation::Relu, Activation::Relu, 0);
        net.set_flat_params(&[1.0, -5.0]).unwrap(); // preact = x - 5
        let x = arr2(&[[1.0]]);
        let cache = net.forward(&x).unwrap();
        let (grads, input_grad) = net.backward(&cache, &arr2(&[[1.0]])).unwrap();
        assert_eq!(grads.w[0][[0, 0]], 0.0);
        assert_eq!(input_grad[[0, 0]], 0.0);
    }

    #[test]
    fn dimension_mismatch_detected() {
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, 0);
        let x = arr2(&[[1.0, 2.0]]);
        assert!(matches!(
            net.infer(&x),
            Err(NnError::DimensionMismatch { expected: 3, got: 2 })
        ));
    }

    #[test]
    fn stale_cache_rejected() {
        let net = DenseNet::new(&[3, 2], Activation::Tanh, Activation::Identity, 0);
        let cache = net.forward(&arr2(&[[1.0, 2.0, 3.0]])).unwrap();
        let bad = arr2(&[[1.0, 1.0], [1.0, 1.0]]);
        assert!(net.backward(&cache, &bad).is_err());
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut net = DenseNet::new(&[2, 4, 1], Activation::Tanh, Activation::Identity, 3);
        let before = net.flat_params();
        let mut adam = Adam::new(&net, 0.1);
        let grads = Gradients {
            w: net.spec().iter().map(|s| Array2::zeros((s.inputs, s.outputs))).collect(),
            b: net.spec().iter().map(|s| Array1::zeros(s.outputs)).collect(),
        };
        adam.step(&mut net, &grads).unwrap();
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn adam_first_step_is_about_lr() {
        // Single scalar parameter, constant unit gradient: the bias-corrected
        // first step moves the parameter by lr / (1 + eps).
        let mut net = DenseNet::new(&[1, 1], Activation::Identity, Activation::Identity, 0);
        net.set_flat_params(&[1.0, 0.0]).unwrap();
        let mut adam = Adam::new(&net, 0.1);
        let grads = Gradients {
            w: vec![arr2(&[[1.0]])],
            b: vec![Array1::zeros(1)],
        };
        adam.step(&mut net, &grads).unwrap();
        let w = net.flat_params()[0];
        assert!((w - 0.9).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn adam_converges_on_scalar_quadratic() {
        // minimize (w - 3)^2 by feeding its gradient directly
        let mut net = DenseNet::new(&[1, 1], Activation::Identity, Activation::Identity, 0);
        net.set_flat_params(&[0.0, 0.0]).unwrap();
        let mut adam = Adam::new(&net, 0.05);
        for _ in 0..500 {
            let w = net.flat_params()[0];
            let grads = Gradients {
                w: vec![arr2(&[[2.0 * (w - 3.0)]])],
                b: vec![Array1::zeros(1)],
            };
            adam.step(&mut net, &grads).unwrap();
        }
        let w = net.flat_params()[0];
        assert!((w - 3.0).abs() < 1e-2, "w = {w}");
    }

    #[test]
    fn adam_rejects_non_finite_gradients() {
        let mut net = DenseNet::new(&[1, 1], Activation::Identity, Activation::Identity, 0);
        let before = net.flat_params();
        let mut adam = Adam::new(&net, 0.1);
        let grads = Gradients {
            w: vec![arr2(&[[f64::NAN]])],
            b: vec![Array1::zeros(1)],
        };
        assert!(matches!(
            adam.step(&mut net, &grads),
            Err(NnError::NonFiniteGradient)
        ));
        assert_eq!(net.flat_params(), before);
        assert_eq!(adam.step_count(), 0);
    }

    #[test]
    fn log_softmax_never_minus_infinity() {
        let lp = log_softmax(&[1000.0, -1000.0, 0.0]);
        assert!(lp.iter().all(|v| v.is_finite() && *v <= 0.0));
        let lp = log_softmax(&[0.0; 5]);
        for v in lp {
            assert!((v - (0.2f64).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[1.0, 1.0, 1.0]), 0);
        assert_eq!(argmax(&[0.0, 5.0, 1.0, 1.0, 1.0]), 1);
    }

    #[test]
    fn net_checkpoint_round_trip_is_exact() {
        let net = DenseNet::new(&[7, 16, 5], Activation::Tanh, Activation::Identity, 99);
        let ckpt = net.to_checkpoint();
        let json = serde_json::to_string(&ckpt).unwrap();
        let back: NetCheckpoint = serde_json::from_str(&json).unwrap();
        let restored = DenseNet::from_checkpoint(&back).unwrap();
        assert_eq!(net.flat_params(), restored.flat_params());
        assert_eq!(net.spec(), restored.spec());
    }

    #[test]
    fn identical_seeds_give_bit_identical_training() {
        let make = || {
            let mut net = DenseNet::new(&[4, 8, 2], Activation::Relu, Activation::Identity, 5);
            let mut adam = Adam::new(&net, 1e-3);
            let x = arr2(&[[0.3, -0.7, 1.1, 0.0], [1.0, 2.0, -1.0, 0.5]]);
            let target = arr2(&[[1.0, 0.0], [0.0, 1.0]]);
            for _ in 0..10 {
                let cache = net.forward(&x).unwrap();
                let gout = (&cache.output - &target) * (2.0 / 2.0);
                let (grads, _) = net.backward(&cache, &gout).unwrap();
                adam.step(&mut net, &grads).unwrap();
            }
            net.flat_params()
        };
        assert_eq!(make(), make());
    }
}
