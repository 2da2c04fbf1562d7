//! The three task networks wrapped around the raw MLP: a box-clamped control,
//! a value function with a hard terminal branch, and a fixed-scale sine
//! feature bank used as the adversarial test class.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{MfgError, Result};
use crate::nn::{Activation, ForwardTrace, GradBuffer, Mlp, RmsProp};
use crate::problem::{BucketStats, MfgProblem};
use crate::rng::{CounterRng, StreamId};
use crate::scalar::Real;

const CONTROL_TAG: u64 = 0;
const VALUE_TAG: u64 = 1;
const TEST_TAG: u64 = 2;

fn hidden_sizes(input: usize, width: usize, depth: usize, output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(depth + 2);
    sizes.push(input);
    sizes.extend(std::iter::repeat(width).take(depth));
    sizes.push(output);
    sizes
}

/// Control `u(x)`: an MLP output clamped componentwise into the control box.
#[derive(Debug, Clone)]
pub struct ControlNet<R: Real> {
    inner: Mlp<R>,
    lower: Vec<R>,
    upper: Vec<R>,
}

/// Forward intermediates of the control: the raw MLP trace, the clamped
/// output, and the clamp mask (one where the raw output is strictly inside
/// the box, zero where the projection is active).
#[derive(Debug)]
pub struct ControlTrace<R: Real> {
    trace: ForwardTrace<R>,
    output: Array2<R>,
    mask: Array2<R>,
}

impl<R: Real> ControlTrace<R> {
    pub fn output(&self) -> &Array2<R> {
        &self.output
    }
}

impl<R: Real> ControlNet<R> {
    /// Fresh Glorot-initialized control for a problem.
    pub fn for_problem(
        problem: &MfgProblem<R>,
        width: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self> {
        let sizes = hidden_sizes(1 + problem.dim(), width, depth, problem.control_dim());
        let inner = Mlp::glorot(&sizes, Activation::Relu, seed, CONTROL_TAG)?;
        let (lower, upper) = problem.control_box();
        Self::from_mlp(inner, lower, upper)
    }

    /// Wraps an existing MLP with a scalar box broadcast over components.
    pub fn from_mlp(inner: Mlp<R>, lower: R, upper: R) -> Result<Self> {
        if !(lower <= upper) {
            return Err(MfgError::Config(format!(
                "control box requires lower <= upper, got [{lower}, {upper}]"
            )));
        }
        let m = inner.output_dim();
        Ok(ControlNet {
            inner,
            lower: vec![lower; m],
            upper: vec![upper; m],
        })
    }

    pub fn inner(&self) -> &Mlp<R> {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut Mlp<R> {
        &mut self.inner
    }

    pub fn bounds(&self) -> (&[R], &[R]) {
        (&self.lower, &self.upper)
    }

    pub fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Batch evaluation with the intermediates needed for [`Self::backward`].
    pub fn forward_traced(&self, x: ArrayView2<'_, R>) -> Result<ControlTrace<R>> {
        let trace = self.inner.forward_traced(x)?;
        let raw = trace.output();
        let mut output = raw.clone();
        let mut mask = Array2::zeros(raw.dim());
        for j in 0..raw.ncols() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            for i in 0..raw.nrows() {
                let v = raw[[i, j]];
                if v <= lo {
                    output[[i, j]] = lo;
                } else if v >= hi {
                    output[[i, j]] = hi;
                } else {
                    mask[[i, j]] = R::one();
                }
            }
        }
        Ok(ControlTrace {
            trace,
            output,
            mask,
        })
    }

    /// Batch evaluation returning only the clamped control.
    pub fn forward(&self, x: ArrayView2<'_, R>) -> Result<Array2<R>> {
        Ok(self.forward_traced(x)?.output)
    }

    /// Single-state convenience evaluation.
    pub fn eval_one(&self, x: ArrayView1<'_, R>) -> Result<Array1<R>> {
        let batch = self.forward(x.insert_axis(Axis(0)))?;
        Ok(batch.index_axis_move(Axis(0), 0))
    }

    /// Reverse pass of `sum(upstream * control)`.
    ///
    /// The clamp projects the upstream gradient to zero wherever the raw
    /// output sits outside the box; parameter gradients accumulate into
    /// `grads` when given, and the input-batch gradient is returned.
    pub fn backward(
        &self,
        trace: &ControlTrace<R>,
        upstream: ArrayView2<'_, R>,
        grads: Option<&mut GradBuffer<R>>,
    ) -> Result<Array2<R>> {
        if upstream.dim() != trace.mask.dim() {
            return Err(MfgError::shape(
                "control backward",
                format!("{:?}", trace.mask.dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        let masked = &upstream * &trace.mask;
        self.inner.backward(&trace.trace, masked.view(), grads)
    }

    pub fn apply_update(
        &mut self,
        state: &mut RmsProp<R>,
        grads: &GradBuffer<R>,
        lr: R,
        ascend: bool,
    ) -> Result<()> {
        self.inner.apply_update(state, grads, lr, ascend)
    }
}

/// Value `v(x)`: an MLP on the grid interior, the exact terminal cost at the
/// final time index. The terminal branch carries no parameter gradient.
#[derive(Debug, Clone)]
pub struct ValueNet<R: Real> {
    inner: Mlp<R>,
}

/// Forward intermediates of a mixed interior/terminal value batch.
#[derive(Debug)]
pub struct ValueBatch<R: Real> {
    trace: ForwardTrace<R>,
    values: Array1<R>,
    interior: Vec<bool>,
}

impl<R: Real> ValueBatch<R> {
    pub fn values(&self) -> &Array1<R> {
        &self.values
    }

    pub fn interior(&self) -> &[bool] {
        &self.interior
    }
}

impl<R: Real> ValueNet<R> {
    /// Fresh Glorot-initialized scalar value network for a problem.
    pub fn for_problem(
        problem: &MfgProblem<R>,
        width: usize,
        depth: usize,
        seed: u64,
    ) -> Result<Self> {
        let sizes = hidden_sizes(1 + problem.dim(), width, depth, 1);
        Ok(ValueNet {
            inner: Mlp::glorot(&sizes, Activation::Relu, seed, VALUE_TAG)?,
        })
    }

    pub fn from_mlp(inner: Mlp<R>) -> Result<Self> {
        if inner.output_dim() != 1 {
            return Err(MfgError::shape("value net output", 1, inner.output_dim()));
        }
        Ok(ValueNet { inner })
    }

    pub fn inner(&self) -> &Mlp<R> {
        &self.inner
    }

    pub fn inner_mut(&mut self) -> &mut Mlp<R> {
        &mut self.inner
    }

    pub fn param_count(&self) -> usize {
        self.inner.param_count()
    }

    /// Batch evaluation over states `x = (t, z)` whose time indices are given
    /// separately. Rows at the final index read the terminal cost from the
    /// problem and current bucket statistics instead of the network.
    pub fn forward_batch(
        &self,
        x: ArrayView2<'_, R>,
        time_idx: &[u32],
        problem: &MfgProblem<R>,
        stats: &BucketStats<R>,
    ) -> Result<ValueBatch<R>> {
        if time_idx.len() != x.nrows() {
            return Err(MfgError::shape("value batch rows", x.nrows(), time_idx.len()));
        }
        let trace = self.inner.forward_traced(x)?;
        let terminal = problem.n_steps() as u32;
        let mut values = trace.output().index_axis(Axis(1), 0).to_owned();
        let mut interior = vec![true; time_idx.len()];
        let mut z = vec![R::zero(); problem.dim()];
        for (row, &idx) in time_idx.iter().enumerate() {
            if idx == terminal {
                for (slot, &v) in z.iter_mut().zip(x.row(row).iter().skip(1)) {
                    *slot = v;
                }
                values[row] = problem.term_cost(&z, stats);
                interior[row] = false;
            }
        }
        Ok(ValueBatch {
            trace,
            values,
            interior,
        })
    }

    /// Single-state evaluation.
    pub fn eval_one(
        &self,
        time_idx: u32,
        z: &[R],
        problem: &MfgProblem<R>,
        stats: &BucketStats<R>,
    ) -> Result<R> {
        if time_idx as usize == problem.n_steps() {
            return Ok(problem.term_cost(z, stats));
        }
        let mut x = Array1::zeros(1 + z.len());
        x[0] = problem.time(time_idx as usize);
        for (slot, &v) in x.iter_mut().skip(1).zip(z) {
            *slot = v;
        }
        Ok(self.inner.forward_one(x.view())?[0])
    }

    /// Reverse pass of `sum(row_weights * values)`.
    ///
    /// Terminal rows contribute nothing: their weight is zeroed before the
    /// MLP backward pass, so neither the parameter gradients nor the returned
    /// input gradients see the terminal branch.
    pub fn backward_batch(
        &self,
        batch: &ValueBatch<R>,
        row_weights: &[R],
        grads: Option<&mut GradBuffer<R>>,
    ) -> Result<Array2<R>> {
        if row_weights.len() != batch.interior.len() {
            return Err(MfgError::shape(
                "value backward rows",
                batch.interior.len(),
                row_weights.len(),
            ));
        }
        let upstream = Array2::from_shape_fn((row_weights.len(), 1), |(i, _)| {
            if batch.interior[i] {
                row_weights[i]
            } else {
                R::zero()
            }
        });
        self.inner.backward(&batch.trace, upstream.view(), grads)
    }

    pub fn apply_update(
        &mut self,
        state: &mut RmsProp<R>,
        grads: &GradBuffer<R>,
        lr: R,
        ascend: bool,
    ) -> Result<()> {
        self.inner.apply_update(state, grads, lr, ascend)
    }
}

/// Adversarial test features `sin(scale ∘ (Wx + b))` with fixed per-feature
/// scales `1, 1 + c, 1 + 2c, ...` and trainable `(W, b)`.
#[derive(Debug, Clone)]
pub struct TestNet<R: Real> {
    weight: Array2<R>,
    bias: Array1<R>,
    scale_c: R,
    scales: Array1<R>,
}

/// Forward intermediates of a test-feature batch.
#[derive(Debug)]
pub struct TestTrace<R: Real> {
    args: Array2<R>,
    output: Array2<R>,
}

impl<R: Real> TestTrace<R> {
    pub fn output(&self) -> &Array2<R> {
        &self.output
    }
}

/// Parameter gradients for [`TestNet`], flat order: weight row-major, bias.
#[derive(Debug, Clone)]
pub struct TestGrads<R: Real> {
    pub weight: Array2<R>,
    pub bias: Array1<R>,
}

impl<R: Real> TestGrads<R> {
    pub fn zeros_like(net: &TestNet<R>) -> Self {
        TestGrads {
            weight: Array2::zeros(net.weight.dim()),
            bias: Array1::zeros(net.bias.len()),
        }
    }

    pub fn zero(&mut self) {
        self.weight.fill(R::zero());
        self.bias.fill(R::zero());
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn flat_get(&self, index: usize) -> R {
        if index < self.weight.len() {
            self.weight.as_slice().expect("standard layout")[index]
        } else {
            self.bias[index - self.weight.len()]
        }
    }
}

fn scale_vector<R: Real>(r: usize, scale_c: R) -> Array1<R> {
    Array1::from_shape_fn(r, |j| R::one() + R::from_usize(j) * scale_c)
}

impl<R: Real> TestNet<R> {
    /// Fresh test features for a problem: Gaussian rows with standard
    /// deviation `1/sqrt(1 + d)` and phases uniform over one period.
    pub fn for_problem(problem: &MfgProblem<R>, r: usize, scale_c: R, seed: u64) -> Result<Self> {
        Self::init(1 + problem.dim(), r, scale_c, seed)
    }

    pub fn init(input_dim: usize, r: usize, scale_c: R, seed: u64) -> Result<Self> {
        if r == 0 || input_dim == 0 {
            return Err(MfgError::Config(
                "test net needs positive feature count and input dimension".into(),
            ));
        }
        if scale_c < R::zero() {
            return Err(MfgError::Config("test net scale step must be nonnegative".into()));
        }
        let mut rng = CounterRng::new(seed, StreamId::Weights, TEST_TAG, 0);
        let sd = R::one() / R::from_usize(input_dim).sqrt();
        let weight = Array2::from_shape_fn((r, input_dim), |_| rng.normal::<R>() * sd);
        let tau = R::from_f64(std::f64::consts::TAU);
        let bias = Array1::from_shape_fn(r, |_| rng.uniform_in(R::zero(), tau));
        Ok(TestNet {
            weight,
            bias,
            scale_c,
            scales: scale_vector(r, scale_c),
        })
    }

    pub fn from_parts(weight: Array2<R>, bias: Array1<R>, scale_c: R) -> Result<Self> {
        if weight.nrows() != bias.len() || weight.nrows() == 0 {
            return Err(MfgError::shape(
                "test net assembly",
                format!("bias of length {}", weight.nrows()),
                bias.len(),
            ));
        }
        let scales = scale_vector(weight.nrows(), scale_c);
        Ok(TestNet {
            weight,
            bias,
            scale_c,
            scales,
        })
    }

    pub fn r(&self) -> usize {
        self.weight.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn scale_c(&self) -> R {
        self.scale_c
    }

    pub fn scales(&self) -> &Array1<R> {
        &self.scales
    }

    pub fn weight(&self) -> &Array2<R> {
        &self.weight
    }

    pub fn bias(&self) -> &Array1<R> {
        &self.bias
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn flat_get(&self, index: usize) -> R {
        if index < self.weight.len() {
            self.weight.as_slice().expect("standard layout")[index]
        } else {
            self.bias[index - self.weight.len()]
        }
    }

    pub fn flat_set(&mut self, index: usize, value: R) {
        if index < self.weight.len() {
            self.weight.as_slice_mut().expect("standard layout")[index] = value;
        } else {
            let i = index - self.weight.len();
            self.bias[i] = value;
        }
    }

    /// Batch evaluation keeping the scaled pre-sine arguments.
    pub fn forward_traced(&self, x: ArrayView2<'_, R>) -> Result<TestTrace<R>> {
        if x.ncols() != self.input_dim() {
            return Err(MfgError::shape("test forward", self.input_dim(), x.ncols()));
        }
        let mut args = crate::nn::matmul(x, self.weight.t());
        args += &self.bias;
        args *= &self.scales;
        let output = args.mapv(|a| a.sin());
        Ok(TestTrace { args, output })
    }

    pub fn forward(&self, x: ArrayView2<'_, R>) -> Result<Array2<R>> {
        Ok(self.forward_traced(x)?.output)
    }

    /// Reverse pass of `sum(upstream * output)` into `(W, b)` gradients.
    ///
    /// The scale factors are structural, not parameters, so nothing is
    /// accumulated for them.
    pub fn backward(
        &self,
        trace: &TestTrace<R>,
        x: ArrayView2<'_, R>,
        upstream: ArrayView2<'_, R>,
        grads: &mut TestGrads<R>,
    ) -> Result<()> {
        if upstream.dim() != trace.args.dim() {
            return Err(MfgError::shape(
                "test backward",
                format!("{:?}", trace.args.dim()),
                format!("{:?}", upstream.dim()),
            ));
        }
        let mut dpre = trace.args.mapv(|a| a.cos());
        dpre *= &upstream;
        dpre *= &self.scales;
        grads.weight += &crate::nn::matmul(dpre.t(), x);
        grads.bias += &dpre.sum_axis(Axis(0));
        Ok(())
    }

    /// One RMSProp update of `(W, b)`; `ascend` selects gradient ascent.
    pub fn apply_update(
        &mut self,
        state: &mut RmsProp<R>,
        grads: &TestGrads<R>,
        lr: R,
        ascend: bool,
    ) -> Result<()> {
        if grads.param_count() != self.param_count() || state.param_count() != self.param_count()
        {
            return Err(MfgError::shape(
                "test net update",
                self.param_count(),
                format!("grads {}, state {}", grads.param_count(), state.param_count()),
            ));
        }
        state.check_lr(lr)?;
        let params = self.weight.as_slice_mut().expect("standard layout");
        let g = grads.weight.as_slice().expect("standard layout");
        state.step_slice(0, params, g, lr, ascend);
        let offset = g.len();
        state.step_slice(
            offset,
            self.bias.as_slice_mut().expect("standard layout"),
            grads.bias.as_slice().expect("standard layout"),
            lr,
            ascend,
        );
        Ok(())
    }
}
