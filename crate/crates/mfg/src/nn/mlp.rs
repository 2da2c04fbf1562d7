//! Multilayer perceptron with explicit reverse-mode gradients.
//!
//! Weights are stored row-major as `(fan_out, fan_in)` matrices so a batch
//! forward pass is `x . w^T + b` over a `(batch, features)` input. The
//! backward pass accumulates parameter gradients of the scalar
//! `sum(upstream * output)` and returns the gradient with respect to the
//! input batch, which is how pathwise derivatives flow through the state
//! transition into the control network.

use crate::error::{MfgError, Result};
use crate::nn::{matmul, RmsProp};
use crate::rng::{CounterRng, StreamId};
use crate::scalar::Real;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

/// Hidden-layer nonlinearity. The output layer is always linear.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sine,
}

/// Fully connected network parameters.
#[derive(Debug, Clone)]
pub struct Mlp<R: Real> {
    sizes: Vec<usize>,
    weights: Vec<Array2<R>>,
    biases: Vec<Array1<R>>,
    activation: Activation,
}

/// Intermediate values of one batch forward pass, kept for the backward pass.
#[derive(Debug)]
pub struct ForwardTrace<R: Real> {
    /// Input to each affine layer: `inputs[0]` is the batch itself,
    /// `inputs[k]` the activated output of layer `k - 1`.
    layer_inputs: Vec<Array2<R>>,
    /// Pre-activation values of hidden layers; only stored for activations
    /// whose derivative cannot be recovered from the activated value.
    pre_activations: Vec<Array2<R>>,
    output: Array2<R>,
}

impl<R: Real> ForwardTrace<R> {
    pub fn output(&self) -> &Array2<R> {
        &self.output
    }

    pub fn batch_len(&self) -> usize {
        self.output.nrows()
    }
}

/// Parameter gradients, shape-congruent with an [`Mlp`].
#[derive(Debug, Clone)]
pub struct GradBuffer<R: Real> {
    weights: Vec<Array2<R>>,
    biases: Vec<Array1<R>>,
}

impl<R: Real> GradBuffer<R> {
    pub fn zeros_like(net: &Mlp<R>) -> Self {
        GradBuffer {
            weights: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
            biases: net.biases.iter().map(|b| Array1::zeros(b.len())).collect(),
        }
    }

    pub fn zero(&mut self) {
        for w in &mut self.weights {
            w.fill(R::zero());
        }
        for b in &mut self.biases {
            b.fill(R::zero());
        }
    }

    /// Adds another buffer of identical shape, used by fixed-order reductions.
    pub fn accumulate(&mut self, other: &GradBuffer<R>) {
        for (w, o) in self.weights.iter_mut().zip(&other.weights) {
            *w += o;
        }
        for (b, o) in self.biases.iter_mut().zip(&other.biases) {
            *b += o;
        }
    }

    pub fn param_count(&self) -> usize {
        flat_len(&self.weights, &self.biases)
    }

    pub fn flat_get(&self, index: usize) -> R {
        flat_get(&self.weights, &self.biases, index)
    }
}

fn flat_len<R: Real>(weights: &[Array2<R>], biases: &[Array1<R>]) -> usize {
    weights.iter().map(|w| w.len()).sum::<usize>() + biases.iter().map(|b| b.len()).sum::<usize>()
}

/// Flat parameter order: per layer, the row-major weight block then the bias
/// block. Shared by [`Mlp`] and [`GradBuffer`] so finite-difference probes can
/// pair parameters with gradients by index.
fn flat_get<R: Real>(weights: &[Array2<R>], biases: &[Array1<R>], mut index: usize) -> R {
    for (w, b) in weights.iter().zip(biases) {
        if index < w.len() {
            return w.as_slice().expect("standard layout")[index];
        }
        index -= w.len();
        if index < b.len() {
            return b[index];
        }
        index -= b.len();
    }
    panic!("flat parameter index out of range");
}

fn flat_set<R: Real>(weights: &mut [Array2<R>], biases: &mut [Array1<R>], mut index: usize, value: R) {
    for (w, b) in weights.iter_mut().zip(biases) {
        if index < w.len() {
            w.as_slice_mut().expect("standard layout")[index] = value;
            return;
        }
        index -= w.len();
        if index < b.len() {
            b[index] = value;
            return;
        }
        index -= b.len();
    }
    panic!("flat parameter index out of range");
}

impl<R: Real> Mlp<R> {
    /// Builds a zero-initialized network; mostly useful in tests.
    pub fn zeros(sizes: &[usize], activation: Activation) -> Result<Self> {
        validate_sizes(sizes)?;
        let weights = sizes
            .windows(2)
            .map(|pair| Array2::zeros((pair[1], pair[0])))
            .collect();
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights (`+-sqrt(6 / (fan_in + fan_out))`), zero biases.
    ///
    /// Draws come from the weight stream keyed by `(seed, net_tag, layer)`, so
    /// two networks in the same run never share initialization draws.
    pub fn glorot(sizes: &[usize], activation: Activation, seed: u64, net_tag: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut weights = Vec::with_capacity(sizes.len() - 1);
        for (layer, pair) in sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let mut rng = CounterRng::new(seed, StreamId::Weights, net_tag, layer as u64);
            let values: Vec<R> = (0..fan_in * fan_out)
                .map(|_| rng.uniform_in(R::from_f64(-bound), R::from_f64(bound)))
                .collect();
            let w = Array2::from_shape_vec((fan_out, fan_in), values).expect("full-length vec");
            weights.push(w);
        }
        let biases = sizes[1..].iter().map(|&n| Array1::zeros(n)).collect();
        Ok(Mlp {
            sizes: sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Reassembles a network from raw layer matrices (checkpoint restore).
    pub fn from_parts(
        weights: Vec<Array2<R>>,
        biases: Vec<Array1<R>>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.is_empty() || weights.len() != biases.len() {
            return Err(MfgError::shape(
                "mlp assembly",
                "equal, nonzero weight and bias layer counts",
                format!("{} weight, {} bias", weights.len(), biases.len()),
            ));
        }
        let mut sizes = vec![weights[0].ncols()];
        for (w, b) in weights.iter().zip(&biases) {
            if w.nrows() != b.len() || w.ncols() != *sizes.last().expect("nonempty") {
                return Err(MfgError::shape(
                    "mlp assembly",
                    format!("({}, {})-compatible layer", b.len(), sizes.last().expect("nonempty")),
                    format!("weight {:?}, bias {}", w.dim(), b.len()),
                ));
            }
            sizes.push(w.nrows());
        }
        validate_sizes(&sizes)?;
        Ok(Mlp {
            sizes,
            weights,
            biases,
            activation,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("validated")
    }

    pub fn layer_count(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[Array2<R>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<R>] {
        &self.biases
    }

    pub fn param_count(&self) -> usize {
        flat_len(&self.weights, &self.biases)
    }

    pub fn flat_get(&self, index: usize) -> R {
        flat_get(&self.weights, &self.biases, index)
    }

    pub fn flat_set(&mut self, index: usize, value: R) {
        flat_set(&mut self.weights, &mut self.biases, index, value);
    }

    /// Batch forward pass keeping the intermediates needed by [`Self::backward`].
    pub fn forward_traced(&self, x: ArrayView2<'_, R>) -> Result<ForwardTrace<R>> {
        if x.ncols() != self.input_dim() {
            return Err(MfgError::shape("mlp forward", self.input_dim(), x.ncols()));
        }
        let layers = self.layer_count();
        let mut layer_inputs = Vec::with_capacity(layers);
        let mut pre_activations = Vec::new();
        let mut current = x.to_owned();
        let mut output = None;
        for k in 0..layers {
            let mut z = matmul(current.view(), self.weights[k].t());
            z += &self.biases[k];
            layer_inputs.push(current);
            if k + 1 == layers {
                output = Some(z);
                break;
            }
            current = match self.activation {
                Activation::Relu => z.mapv(|v| v.max(R::zero())),
                Activation::Sine => {
                    let activated = z.mapv(Float::sin);
                    pre_activations.push(z);
                    activated
                }
            };
        }
        Ok(ForwardTrace {
            layer_inputs,
            pre_activations,
            output: output.expect("at least one layer"),
        })
    }

    /// Batch forward pass returning only the output.
    pub fn forward(&self, x: ArrayView2<'_, R>) -> Result<Array2<R>> {
        Ok(self.forward_traced(x)?.output)
    }

    /// Single-sample convenience wrapper around the batch pass.
    pub fn forward_one(&self, x: ArrayView1<'_, R>) -> Result<Array1<R>> {
        let row = x.insert_axis(Axis(0));
        Ok(self.forward(row)?.index_axis_move(Axis(0), 0))
    }

    /// Reverse accumulation of `sum(upstream * output)`.
    ///
    /// Adds parameter gradients into `grads` when provided (callers that only
    /// need pathwise input gradients skip that half of the work) and returns
    /// the gradient with respect to the input batch. The ReLU subgradient at
    /// zero is zero.
    pub fn backward(
        &self,
        trace: &ForwardTrace<R>,
        upstream: ArrayView2<'_, R>,
        mut grads: Option<&mut GradBuffer<R>>,
    ) -> Result<Array2<R>> {
        let batch = trace.batch_len();
        if upstream.dim() != (batch, self.output_dim()) {
            return Err(MfgError::shape(
                "mlp backward",
                format!("({batch}, {})", self.output_dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        if let Some(g) = grads.as_deref_mut() {
            if g.param_count() != self.param_count() {
                return Err(MfgError::shape(
                    "mlp backward",
                    self.param_count(),
                    g.param_count(),
                ));
            }
        }
        let mut delta = upstream.to_owned();
        for k in (0..self.layer_count()).rev() {
            if let Some(g) = grads.as_deref_mut() {
                g.weights[k] += &matmul(delta.t(), trace.layer_inputs[k].view());
                g.biases[k] += &delta.sum_axis(Axis(0));
            }
            let mut down = matmul(delta.view(), self.weights[k].view());
            if k == 0 {
                return Ok(down);
            }
            match self.activation {
                Activation::Relu => {
                    down.zip_mut_with(&trace.layer_inputs[k], |d, &a| {
                        if a <= R::zero() {
                            *d = R::zero();
                        }
                    });
                }
                Activation::Sine => {
                    down.zip_mut_with(&trace.pre_activations[k - 1], |d, &z| {
                        *d *= z.cos();
                    });
                }
            }
            delta = down;
        }
        unreachable!("layer 0 returns from the loop");
    }

    /// One RMSProp update of every parameter from an accumulated gradient.
    pub fn apply_update(
        &mut self,
        state: &mut RmsProp<R>,
        grads: &GradBuffer<R>,
        lr: R,
        ascend: bool,
    ) -> Result<()> {
        if grads.param_count() != self.param_count() || state.param_count() != self.param_count() {
            return Err(MfgError::shape(
                "rmsprop update",
                self.param_count(),
                format!(
                    "grads {}, state {}",
                    grads.param_count(),
                    state.param_count()
                ),
            ));
        }
        state.check_lr(lr)?;
        let mut offset = 0;
        for k in 0..self.layer_count() {
            let params = self.weights[k].as_slice_mut().expect("standard layout");
            let g = grads.weights[k].as_slice().expect("standard layout");
            state.step_slice(offset, params, g, lr, ascend);
            offset += g.len();
            let params = self.biases[k].as_slice_mut().expect("standard layout");
            let g = grads.biases[k].as_slice().expect("standard layout");
            state.step_slice(offset, params, g, lr, ascend);
            offset += g.len();
        }
        Ok(())
    }
}

use num_traits::Float;

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 {
        return Err(MfgError::shape("mlp sizes", "at least input and output", sizes.len()));
    }
    if sizes.contains(&0) {
        return Err(MfgError::shape("mlp sizes", "positive layer widths", format!("{sizes:?}")));
    }
    Ok(())
}
