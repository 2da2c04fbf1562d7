//! Weak-form policy evaluation and improvement with an adversarial test
//! class: the martingale-increment losses, their exact gradients, and the
//! outer iteration that advances the particle measure.

use ndarray::{s, Array1, Array2, ArrayView2};

use crate::error::{MfgError, Result};
use crate::measure::{init_ensemble, ParticleEnsemble, StateSample, TransitionDraws};
use crate::net::{ControlNet, ControlTrace, TestGrads, TestNet, ValueBatch, ValueNet};
use crate::nn::{GradBuffer, RmsProp};
use crate::problem::{BucketStats, MfgProblem};
use crate::scalar::Real;

/// One evaluated martingale increment: the running-cost term, the values at
/// the destination and the source, and the activity indicator that is false
/// exactly at the terminal time index.
#[derive(Debug, Clone, Copy)]
pub struct MartingaleTerm<R: Real> {
    pub running: R,
    pub v_next: R,
    pub v_here: R,
    pub active: bool,
}

impl<R: Real> MartingaleTerm<R> {
    pub fn value(&self) -> R {
        if self.active {
            self.running + self.v_next - self.v_here
        } else {
            R::zero()
        }
    }
}

/// Evaluates the martingale increment for a single source/destination pair
/// under the current networks and bucket statistics.
pub fn martingale_increment<R: Real>(
    problem: &MfgProblem<R>,
    stats: &BucketStats<R>,
    control: &ControlNet<R>,
    value: &ValueNet<R>,
    x: &StateSample<R>,
    destination: &StateSample<R>,
) -> Result<MartingaleTerm<R>> {
    let d = problem.dim();
    if x.z.len() != d || destination.z.len() != d {
        return Err(MfgError::shape(
            "martingale increment state",
            d,
            x.z.len().max(destination.z.len()),
        ));
    }
    let n = x.time_index as usize;
    let active = n < problem.n_steps();
    let mut input = vec![R::zero(); 1 + d];
    input[0] = problem.time(n.min(problem.n_steps()));
    input[1..].copy_from_slice(&x.z);
    let u = control.eval_one(ndarray::aview1(&input))?;
    let f = problem.run_cost(n, &x.z, stats, u.as_slice().expect("owned row"));
    let v_here = value.eval_one(x.time_index, &x.z, problem, stats)?;
    let v_next = value.eval_one(destination.time_index, &destination.z, problem, stats)?;
    Ok(MartingaleTerm {
        running: problem.step() * f,
        v_next,
        v_here,
        active,
    })
}

/// Sizes, loop counts, and optimizer settings for one training run.
#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub outer_iterations: u64,
    pub inner_steps: usize,
    pub adversarial_steps: usize,
    pub particles: usize,
    pub batch_size: usize,
    pub lr_base: Option<f64>,
    pub rms_smoothing: f64,
    pub rms_epsilon: f64,
    pub test_features: usize,
    pub test_scale_step: f64,
    pub width: usize,
    pub depth: usize,
    pub fresh_noise: bool,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            outer_iterations: 3_000,
            inner_steps: 2,
            adversarial_steps: 1,
            particles: 50_000,
            batch_size: 2_500,
            lr_base: None,
            rms_smoothing: 0.99,
            rms_epsilon: 1e-8,
            test_features: 1_200,
            test_scale_step: 10.0,
            width: 104,
            depth: 6,
            fresh_noise: false,
            seed: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.particles == 0 {
            return Err(MfgError::Config("particles must be positive".into()));
        }
        if self.batch_size == 0 || 2 * self.batch_size > self.particles {
            return Err(MfgError::Config(format!(
                "need 0 < 2 * batch_size <= particles, got batch_size {} with {} particles",
                self.batch_size, self.particles
            )));
        }
        if self.inner_steps == 0 {
            return Err(MfgError::Config("inner_steps must be at least 1".into()));
        }
        if self.test_features == 0 || self.width == 0 || self.depth == 0 {
            return Err(MfgError::Config(
                "network sizes (width, depth, test_features) must be positive".into(),
            ));
        }
        if !(self.rms_smoothing > 0.0 && self.rms_smoothing < 1.0) || !(self.rms_epsilon > 0.0) {
            return Err(MfgError::Config(format!(
                "optimizer settings out of range: smoothing {}, epsilon {}",
                self.rms_smoothing, self.rms_epsilon
            )));
        }
        if let Some(base) = self.lr_base {
            if !(base > 0.0) {
                return Err(MfgError::Config(format!(
                    "lr_base must be positive, got {base}"
                )));
            }
        }
        Ok(())
    }
}

/// Losses observed at the start of one outer iteration, before its updates.
#[derive(Debug, Clone, Copy)]
pub struct StepLosses {
    pub pe_raw: f64,
    pub pe_loss: f64,
    pub pi_objective: f64,
}

/// A frozen mini-batch pair: the bucket statistics, gathered sources, and
/// fixed transition randomness for one outer iteration. Objectives and
/// gradients evaluated against it are deterministic functions of the
/// network parameters.
#[derive(Debug)]
pub struct FrozenBatch<R: Real> {
    stats: BucketStats<R>,
    draws: TransitionDraws<R>,
    batch_size: usize,
    src_inputs: Array2<R>,
    active: Vec<bool>,
}

impl<R: Real> FrozenBatch<R> {
    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    pub fn stats(&self) -> &BucketStats<R> {
        &self.stats
    }
}

struct EvalCore<R: Real> {
    ctrace: ControlTrace<R>,
    dest_time: Vec<u32>,
    dest_z: Array2<R>,
    dst_inputs: Array2<R>,
    src_values: ValueBatch<R>,
    dst_values: ValueBatch<R>,
    mart: Vec<R>,
}

fn batch_products<R: Real>(
    test_out: ArrayView2<'_, R>,
    mart: &[R],
    batch_size: usize,
) -> (Array1<R>, Array1<R>, R) {
    let inv_b = R::one() / R::from_usize(batch_size);
    let m1 = ndarray::aview1(&mart[..batch_size]);
    let m2 = ndarray::aview1(&mart[batch_size..]);
    let mut l1 = test_out.slice(s![..batch_size, ..]).t().dot(&m1);
    let mut l2 = test_out.slice(s![batch_size.., ..]).t().dot(&m2);
    l1 *= inv_b;
    l2 *= inv_b;
    let objective = l1.dot(&l2);
    (l1, l2, objective)
}

/// All state of one training run: the problem, the three networks with
/// their optimizer accumulators, and the particle ensemble.
#[derive(Debug)]
pub struct TrainingSession<R: Real> {
    problem: MfgProblem<R>,
    config: TrainerConfig,
    control: ControlNet<R>,
    value: ValueNet<R>,
    test: TestNet<R>,
    rms_control: RmsProp<R>,
    rms_value: RmsProp<R>,
    rms_test: RmsProp<R>,
    ensemble: ParticleEnsemble<R>,
}

impl<R: Real> TrainingSession<R> {
    /// Initializes networks and the particle ensemble from the config seed.
    pub fn new(problem: MfgProblem<R>, config: TrainerConfig) -> Result<Self> {
        config.validate()?;
        let control = ControlNet::for_problem(&problem, config.width, config.depth, config.seed)?;
        let value = ValueNet::for_problem(&problem, config.width, config.depth, config.seed)?;
        let test = TestNet::for_problem(
            &problem,
            config.test_features,
            R::from_f64(config.test_scale_step),
            config.seed,
        )?;
        let ensemble = init_ensemble(&problem, config.particles, config.seed)?;
        Self::from_parts(problem, config, control, value, test, ensemble)
    }

    /// Assembles a session from existing parts, with fresh optimizer state.
    pub fn from_parts(
        problem: MfgProblem<R>,
        config: TrainerConfig,
        control: ControlNet<R>,
        value: ValueNet<R>,
        test: TestNet<R>,
        ensemble: ParticleEnsemble<R>,
    ) -> Result<Self> {
        config.validate()?;
        let expect_in = 1 + problem.dim();
        if control.inner().input_dim() != expect_in
            || control.inner().output_dim() != problem.control_dim()
        {
            return Err(MfgError::shape(
                "control net dimensions",
                format!("{expect_in} -> {}", problem.control_dim()),
                format!(
                    "{} -> {}",
                    control.inner().input_dim(),
                    control.inner().output_dim()
                ),
            ));
        }
        if value.inner().input_dim() != expect_in {
            return Err(MfgError::shape(
                "value net input",
                expect_in,
                value.inner().input_dim(),
            ));
        }
        if test.input_dim() != expect_in {
            return Err(MfgError::shape("test net input", expect_in, test.input_dim()));
        }
        if ensemble.dim() != problem.dim()
            || ensemble.n_steps() != problem.n_steps()
            || ensemble.len() != config.particles
        {
            return Err(MfgError::Config(format!(
                "ensemble shape (M = {}, d = {}, N = {}) does not match the run \
                 (M = {}, d = {}, N = {})",
                ensemble.len(),
                ensemble.dim(),
                ensemble.n_steps(),
                config.particles,
                problem.dim(),
                problem.n_steps()
            )));
        }
        let rms_control = RmsProp::new(
            control.param_count(),
            R::from_f64(config.rms_smoothing),
            R::from_f64(config.rms_epsilon),
        )?;
        let rms_value = RmsProp::new(
            value.param_count(),
            R::from_f64(config.rms_smoothing),
            R::from_f64(config.rms_epsilon),
        )?;
        let rms_test = RmsProp::new(
            test.param_count(),
            R::from_f64(config.rms_smoothing),
            R::from_f64(config.rms_epsilon),
        )?;
        Ok(TrainingSession {
            problem,
            config,
            control,
            value,
            test,
            rms_control,
            rms_value,
            rms_test,
            ensemble,
        })
    }

    pub fn problem(&self) -> &MfgProblem<R> {
        &self.problem
    }

    pub fn config(&self) -> &TrainerConfig {
        &self.config
    }

    pub fn control(&self) -> &ControlNet<R> {
        &self.control
    }

    pub fn control_mut(&mut self) -> &mut ControlNet<R> {
        &mut self.control
    }

    pub fn value(&self) -> &ValueNet<R> {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut ValueNet<R> {
        &mut self.value
    }

    pub fn test_net(&self) -> &TestNet<R> {
        &self.test
    }

    pub fn test_net_mut(&mut self) -> &mut TestNet<R> {
        &mut self.test
    }

    pub fn ensemble(&self) -> &ParticleEnsemble<R> {
        &self.ensemble
    }

    pub fn iteration(&self) -> u64 {
        self.ensemble.iteration()
    }

    /// The decayed learning-rate triple (value, control, test) at iteration
    /// `i` of the configured run length.
    pub fn learning_rates(&self, i: u64) -> (R, R, R) {
        let d = self.problem.dim() as f64;
        let base = self.config.lr_base.unwrap_or(3.0 / d.sqrt());
        let ratio = if self.config.outer_iterations == 0 {
            0.0
        } else {
            i as f64 / self.config.outer_iterations as f64
        };
        let decay = 0.01f64.powf(ratio);
        (
            R::from_f64(base * 1e-3 * decay),
            R::from_f64(base * 1e-3 * decay),
            R::from_f64(base * 1e-2 * decay),
        )
    }

    /// Freezes a mini-batch pair at the current iteration: bucket statistics
    /// plus fixed transition draws for the union of the two index sets.
    pub fn freeze_batch(&self, a1: &[u32], a2: &[u32], round: u16) -> Result<FrozenBatch<R>> {
        if a1.is_empty() || a1.len() != a2.len() {
            return Err(MfgError::Config(format!(
                "batches must be nonempty and equal-sized, got {} and {}",
                a1.len(),
                a2.len()
            )));
        }
        let mut seen: Vec<u32> = a1.iter().chain(a2).copied().collect();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(MfgError::Config(
                "batches must be disjoint within and across".into(),
            ));
        }
        let stats = self.ensemble.bucket_stats(&self.problem)?;
        let union: Vec<u32> = a1.iter().chain(a2).copied().collect();
        let draws = self.ensemble.draw_transitions(&self.problem, &union, round)?;
        let src_inputs = draws.source_inputs(&self.problem);
        let terminal = self.problem.n_steps() as u32;
        let active = draws.src_time().iter().map(|&n| n < terminal).collect();
        Ok(FrozenBatch {
            stats,
            draws,
            batch_size: a1.len(),
            src_inputs,
            active,
        })
    }

    fn redraw(&self, fb: &mut FrozenBatch<R>, round: u16) -> Result<()> {
        fb.draws = self
            .ensemble
            .draw_transitions(&self.problem, fb.draws.indices(), round)?;
        Ok(())
    }

    fn eval_core(&self, fb: &FrozenBatch<R>) -> Result<EvalCore<R>> {
        let d = self.problem.dim();
        let rows = fb.draws.len();
        let ctrace = self.control.forward_traced(fb.src_inputs.view())?;
        let (dest_time, dest_z) =
            fb.draws
                .destinations(&self.problem, &fb.stats, ctrace.output().view())?;
        let mut dst_inputs = Array2::zeros((rows, 1 + d));
        for row in 0..rows {
            dst_inputs[[row, 0]] = self.problem.time(dest_time[row] as usize);
            for j in 0..d {
                dst_inputs[[row, 1 + j]] = dest_z[[row, j]];
            }
        }
        let src_values =
            self.value
                .forward_batch(fb.src_inputs.view(), fb.draws.src_time(), &self.problem, &fb.stats)?;
        let dst_values =
            self.value
                .forward_batch(dst_inputs.view(), &dest_time, &self.problem, &fb.stats)?;
        let mut core = EvalCore {
            ctrace,
            dest_time,
            dest_z,
            dst_inputs,
            src_values,
            dst_values,
            mart: vec![R::zero(); rows],
        };
        self.refresh_mart(fb, &mut core);
        Ok(core)
    }

    fn refresh_mart(&self, fb: &FrozenBatch<R>, core: &mut EvalCore<R>) {
        let h = self.problem.step();
        let u = core.ctrace.output();
        for row in 0..fb.draws.len() {
            if !fb.active[row] {
                core.mart[row] = R::zero();
                continue;
            }
            let n = fb.draws.src_time()[row] as usize;
            let z = fb.draws.src_z();
            let z_row = z.row(row);
            let f = self.problem.run_cost(
                n,
                z_row.to_slice().expect("standard layout"),
                &fb.stats,
                u.row(row).to_slice().expect("standard layout"),
            );
            core.mart[row] =
                h * f + core.dst_values.values()[row] - core.src_values.values()[row];
        }
    }

    fn refresh_values(&self, fb: &FrozenBatch<R>, core: &mut EvalCore<R>) -> Result<()> {
        core.src_values = self.value.forward_batch(
            fb.src_inputs.view(),
            fb.draws.src_time(),
            &self.problem,
            &fb.stats,
        )?;
        core.dst_values = self.value.forward_batch(
            core.dst_inputs.view(),
            &core.dest_time,
            &self.problem,
            &fb.stats,
        )?;
        self.refresh_mart(fb, core);
        Ok(())
    }

    /// The two-batch inner-product objective under the current parameters.
    pub fn pe_objective(&self, fb: &FrozenBatch<R>) -> Result<R> {
        let core = self.eval_core(fb)?;
        let t_out = self.test.forward(fb.src_inputs.view())?;
        let (_, _, objective) = batch_products(t_out.view(), &core.mart, fb.batch_size);
        Ok(objective)
    }

    /// Value-parameter gradient of the two-batch inner product. The terminal
    /// branch of the value is constant, so only interior evaluations at the
    /// sources and destinations carry gradient.
    pub fn pe_gradient(&self, fb: &FrozenBatch<R>) -> Result<GradBuffer<R>> {
        let core = self.eval_core(fb)?;
        let t_out = self.test.forward(fb.src_inputs.view())?;
        let mut grads = GradBuffer::zeros_like(self.value.inner());
        self.pe_gradient_into(fb, &core, t_out.view(), &mut grads)?;
        Ok(grads)
    }

    fn pe_gradient_into(
        &self,
        fb: &FrozenBatch<R>,
        core: &EvalCore<R>,
        t_out: ArrayView2<'_, R>,
        grads: &mut GradBuffer<R>,
    ) -> Result<R> {
        let b = fb.batch_size;
        let (l1, l2, objective) = batch_products(t_out, &core.mart, b);
        let inv_b = R::one() / R::from_usize(b);
        let w1 = t_out.slice(s![..b, ..]).dot(&l2);
        let w2 = t_out.slice(s![b.., ..]).dot(&l1);
        let mut w = vec![R::zero(); 2 * b];
        for row in 0..2 * b {
            if fb.active[row] {
                let raw = if row < b { w1[row] } else { w2[row - b] };
                w[row] = raw * inv_b;
            }
        }
        let w_neg: Vec<R> = w.iter().map(|&v| -v).collect();
        self.value.backward_batch(&core.dst_values, &w, Some(grads))?;
        self.value.backward_batch(&core.src_values, &w_neg, Some(grads))?;
        Ok(objective)
    }

    /// The constant-one-test objective: the plain average of the martingale
    /// increments over the union batch, inactive terms included in the
    /// normalization.
    pub fn pi_objective(&self, fb: &FrozenBatch<R>) -> Result<R> {
        let core = self.eval_core(fb)?;
        Ok(mean_increment(&core.mart))
    }

    /// Control-parameter gradient of the constant-one-test objective:
    /// the running-cost channel plus the pathwise channel through the fixed
    /// transition noise into interior destination values. Terminal
    /// destinations contribute through the running cost only.
    pub fn pi_gradient(&self, fb: &FrozenBatch<R>) -> Result<GradBuffer<R>> {
        let core = self.eval_core(fb)?;
        let mut grads = GradBuffer::zeros_like(self.control.inner());
        self.pi_gradient_into(fb, &core, &mut grads)?;
        Ok(grads)
    }

    fn pi_gradient_into(
        &self,
        fb: &FrozenBatch<R>,
        core: &EvalCore<R>,
        grads: &mut GradBuffer<R>,
    ) -> Result<R> {
        let rows = fb.draws.len();
        let d = self.problem.dim();
        let du = self.problem.control_dim();
        let h = self.problem.step();
        let inv = R::one() / R::from_usize(rows);
        let ones = vec![R::one(); rows];
        let dst_input_grads = self
            .value
            .backward_batch(&core.dst_values, &ones, None)?;
        let mut upstream = Array2::zeros((rows, du));
        let mut fu = vec![R::zero(); du];
        let mut vjp = vec![R::zero(); du];
        let mut zgrad = vec![R::zero(); d];
        let u = core.ctrace.output();
        for row in 0..rows {
            if !fb.active[row] {
                continue;
            }
            let n = fb.draws.src_time()[row] as usize;
            let z = fb.draws.src_z();
            self.problem.run_cost_grad_u_into(
                n,
                z.row(row).to_slice().expect("standard layout"),
                &fb.stats,
                u.row(row).to_slice().expect("standard layout"),
                &mut fu,
            );
            for j in 0..d {
                zgrad[j] = dst_input_grads[[row, 1 + j]];
            }
            self.problem.drift_u_vjp_into(&zgrad, &mut vjp);
            for j in 0..du {
                upstream[[row, j]] = (fu[j] + vjp[j]) * h * inv;
            }
        }
        self.control
            .backward(&core.ctrace, upstream.view(), Some(grads))?;
        Ok(mean_increment(&core.mart))
    }

    /// Test-parameter gradient of the two-batch inner product; the ascent
    /// direction for the adversarial step. Scale factors stay fixed.
    pub fn adversarial_gradient(&self, fb: &FrozenBatch<R>) -> Result<TestGrads<R>> {
        let core = self.eval_core(fb)?;
        let mut grads = TestGrads::zeros_like(&self.test);
        self.adversarial_gradient_into(fb, &core, &mut grads)?;
        Ok(grads)
    }

    fn adversarial_gradient_into(
        &self,
        fb: &FrozenBatch<R>,
        core: &EvalCore<R>,
        grads: &mut TestGrads<R>,
    ) -> Result<R> {
        let b = fb.batch_size;
        let ttrace = self.test.forward_traced(fb.src_inputs.view())?;
        let (l1, l2, objective) = batch_products(ttrace.output().view(), &core.mart, b);
        let inv_b = R::one() / R::from_usize(b);
        let r = self.test.r();
        let mut upstream = Array2::zeros((2 * b, r));
        for row in 0..2 * b {
            let scale = core.mart[row] * inv_b;
            if scale == R::zero() {
                continue;
            }
            let partner = if row < b { &l2 } else { &l1 };
            for j in 0..r {
                upstream[[row, j]] = scale * partner[j];
            }
        }
        self.test
            .backward(&ttrace, fb.src_inputs.view(), upstream.view(), grads)?;
        Ok(objective)
    }

    fn check_finite(&self, what: &str, value: R) -> Result<()> {
        if value.is_finite() {
            return Ok(());
        }
        Err(MfgError::Divergence {
            iteration: self.ensemble.iteration() as usize,
            checkpoint: format!("{what} became non-finite"),
        })
    }

    /// The losses the next outer step would observe, without touching any
    /// state. Lets callers log a row before the first update.
    pub fn current_losses(&self) -> Result<StepLosses> {
        let (a1, a2) = self.ensemble.select_minibatches(self.config.batch_size)?;
        let fb = self.freeze_batch(&a1, &a2, 0)?;
        let pe_raw = self.pe_objective(&fb)?.to_f64();
        Ok(StepLosses {
            pe_raw,
            pe_loss: pe_raw.abs(),
            pi_objective: self.pi_objective(&fb)?.to_f64(),
        })
    }

    /// Runs one outer iteration: rebuild bucket statistics, select disjoint
    /// batches, fix the transition noise, take the inner evaluation and
    /// improvement steps, take the adversarial steps, then commit the
    /// transitions under the final control. Returns the losses observed at
    /// the start of the iteration.
    pub fn outer_step(&mut self) -> Result<StepLosses> {
        let i = self.ensemble.iteration();
        let (lr_value, lr_control, lr_test) = self.learning_rates(i);
        let (a1, a2) = self.ensemble.select_minibatches(self.config.batch_size)?;
        let mut fb = self.freeze_batch(&a1, &a2, 0)?;
        let t_fixed = self.test.forward(fb.src_inputs.view())?;

        let mut round = 0u16;
        let mut first: Option<(R, R)> = None;
        let mut value_grads = GradBuffer::zeros_like(self.value.inner());
        let mut control_grads = GradBuffer::zeros_like(self.control.inner());
        for j in 0..self.config.inner_steps {
            if self.config.fresh_noise && j > 0 {
                round += 1;
                self.redraw(&mut fb, round)?;
            }
            let mut core = self.eval_core(&fb)?;
            value_grads.zero();
            let pe_raw = self.pe_gradient_into(&fb, &core, t_fixed.view(), &mut value_grads)?;
            self.check_finite("policy evaluation loss", pe_raw)?;
            if first.is_none() {
                first = Some((pe_raw, mean_increment(&core.mart)));
            }
            self.value
                .apply_update(&mut self.rms_value, &value_grads, lr_value, false)?;

            self.refresh_values(&fb, &mut core)?;
            control_grads.zero();
            let pi_obj = self.pi_gradient_into(&fb, &core, &mut control_grads)?;
            self.check_finite("policy improvement objective", pi_obj)?;
            self.control
                .apply_update(&mut self.rms_control, &control_grads, lr_control, false)?;
        }

        let final_core = self.eval_core(&fb)?;
        let mut test_grads = TestGrads::zeros_like(&self.test);
        for _ in 0..self.config.adversarial_steps {
            test_grads.zero();
            let obj = self.adversarial_gradient_into(&fb, &final_core, &mut test_grads)?;
            self.check_finite("adversarial objective", obj)?;
            self.test
                .apply_update(&mut self.rms_test, &test_grads, lr_test, true)?;
        }

        self.ensemble
            .apply_transitions(&fb.draws, &final_core.dest_time, final_core.dest_z.view())?;

        let (pe_raw, pi_obj) = first.expect("at least one inner step");
        let pe_raw = pe_raw.to_f64();
        Ok(StepLosses {
            pe_raw,
            pe_loss: pe_raw.abs(),
            pi_objective: pi_obj.to_f64(),
        })
    }
}

fn mean_increment<R: Real>(mart: &[R]) -> R {
    let sum = mart.iter().fold(R::zero(), |acc, &m| acc + m);
    sum / R::from_usize(mart.len())
}

/// Drives [`TrainingSession::outer_step`] until the configured iteration
/// count, invoking the callback after each completed iteration.
pub fn run_policy_iteration<R: Real, F>(
    session: &mut TrainingSession<R>,
    mut after_step: F,
) -> Result<()>
where
    F: FnMut(&TrainingSession<R>, &StepLosses) -> Result<()>,
{
    while session.iteration() < session.config().outer_iterations {
        let losses = session.outer_step()?;
        after_step(session, &losses)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::problem::{make_problem, Variant};
    use crate::rng::{CounterRng, StreamId};
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

    fn small_config(particles: usize, batch: usize) -> TrainerConfig {
        TrainerConfig {
            outer_iterations: 10,
            inner_steps: 2,
            adversarial_steps: 1,
            particles,
            batch_size: batch,
            lr_base: None,
            rms_smoothing: 0.99,
            rms_epsilon: 1e-8,
            test_features: 6,
            test_scale_step: 10.0,
            width: 8,
            depth: 2,
            fresh_noise: false,
            seed: 7,
        }
    }

    fn small_session(seed: u64) -> TrainingSession<f64> {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let mut config = small_config(64, 8);
        config.seed = seed;
        TrainingSession::new(problem, config).unwrap()
    }

    fn constant_bias_control(d: usize, bias: &[f64]) -> ControlNet<f64> {
        let inner = Mlp::from_parts(
            vec![Array2::zeros((bias.len(), 1 + d))],
            vec![arr1(bias)],
            Activation::Relu,
        )
        .unwrap();
        ControlNet::from_mlp(inner, f64::NEG_INFINITY, f64::INFINITY).unwrap()
    }

    #[test]
    fn terminal_sources_have_zero_increment() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let stats = BucketStats::from_means(vec![0.0; 101], 1).unwrap();
        let control = constant_bias_control(1, &[3.0]);
        let value = ValueNet::for_problem(&problem, 8, 2, 11).unwrap();
        let x = StateSample {
            time_index: 100,
            z: vec![0.4],
        };
        let dst = StateSample {
            time_index: 0,
            z: vec![-1.0],
        };
        let term = martingale_increment(&problem, &stats, &control, &value, &x, &dst).unwrap();
        assert!(!term.active);
        assert_eq!(term.value(), 0.0);
    }

    #[test]
    fn constant_value_and_zero_cost_telescope_to_zero() {
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        for name in ["c2", "c3", "c5"] {
            problem.set_constant(name, 0.0).unwrap();
        }
        let stats = BucketStats::from_means(vec![0.0; 101], 1).unwrap();
        let control = constant_bias_control(1, &[0.7]);
        let mut inner = Mlp::zeros(&[2, 4, 1], Activation::Relu).unwrap();
        inner.flat_set(inner.param_count() - 1, 0.5);
        let value = ValueNet::from_mlp(inner).unwrap();
        let x = StateSample {
            time_index: 10,
            z: vec![0.2],
        };
        let dst = StateSample {
            time_index: 11,
            z: vec![0.3],
        };
        let term = martingale_increment(&problem, &stats, &control, &value, &x, &dst).unwrap();
        assert_eq!(term.value(), 0.0);
    }

    #[test]
    fn pure_running_cost_yields_one_step_of_cost() {
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        problem.set_constant("c2", 2.0).unwrap();
        problem.set_constant("c3", 0.0).unwrap();
        let stats = BucketStats::from_means(vec![0.0; 101], 1).unwrap();
        let control = constant_bias_control(1, &[1.0]);
        let value = ValueNet::from_mlp(Mlp::zeros(&[2, 4, 1], Activation::Relu).unwrap()).unwrap();
        let x = StateSample {
            time_index: 5,
            z: vec![0.0],
        };
        let dst = StateSample {
            time_index: 6,
            z: vec![0.01],
        };
        let term = martingale_increment(&problem, &stats, &control, &value, &x, &dst).unwrap();
        assert!((term.value() - 0.01).abs() < 1e-15);
    }

    #[test]
    fn two_by_two_weighted_products_match_hand_computation() {
        let t_out = arr2(&[[2.0f64, -1.0], [0.5, 3.0]]);
        let mart = [0.4f64, -0.2];
        let (l1, l2, obj) = batch_products(t_out.view(), &mart, 1);
        for (got, want) in l1.iter().chain(l2.iter()).zip([0.8, -0.4, -0.1, -0.6]) {
            assert!((got - want).abs() < 1e-15);
        }
        assert!((obj - (0.8 * -0.1 + -0.4 * -0.6)).abs() < 1e-15);
    }

    fn dp_toy_session() -> TrainingSession<f64> {
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        for name in ["c2", "c3", "c5", "c_sigma"] {
            problem.set_constant(name, 0.0).unwrap();
        }
        problem.set_steps(2).unwrap();
        let mut config = small_config(16, 4);
        config.width = 4;
        config.depth = 1;
        let control =
            ControlNet::from_mlp(Mlp::zeros(&[2, 4, 1], Activation::Relu).unwrap(), -1.0, 1.0)
                .unwrap();
        let mut vmlp = Mlp::zeros(&[2, 4, 1], Activation::Relu).unwrap();
        vmlp.flat_set(vmlp.param_count() - 1, 0.5);
        let value = ValueNet::from_mlp(vmlp).unwrap();
        let test = TestNet::for_problem(&problem, config.test_features, 10.0, 3).unwrap();
        let ensemble = init_ensemble(&problem, config.particles, 3).unwrap();
        TrainingSession::from_parts(problem, config, control, value, test, ensemble).unwrap()
    }

    #[test]
    fn exact_dynamic_programming_solution_zeroes_the_objective() {
        let session = dp_toy_session();
        let fb = session.freeze_batch(&[0, 1, 2, 3], &[4, 5, 6, 7], 0).unwrap();
        assert_eq!(session.pe_objective(&fb).unwrap(), 0.0);
        assert_eq!(session.pi_objective(&fb).unwrap(), 0.0);
    }

    #[test]
    fn all_terminal_batches_contribute_nothing() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let config = small_config(16, 4);
        let mut rng = CounterRng::new(5, StreamId::TestPoints, 0, 0);
        let z = Array2::from_shape_fn((16, 1), |_| rng.uniform_in(-1.0, 1.0));
        let ensemble =
            ParticleEnsemble::from_parts(100, 5, 0, vec![100; 16], z).unwrap();
        let control = ControlNet::for_problem(&problem, 8, 2, 5).unwrap();
        let value = ValueNet::for_problem(&problem, 8, 2, 5).unwrap();
        let test = TestNet::for_problem(&problem, 6, 10.0, 5).unwrap();
        let session =
            TrainingSession::from_parts(problem, config, control, value, test, ensemble).unwrap();
        let fb = session.freeze_batch(&[0, 1, 2, 3], &[8, 9, 10, 11], 0).unwrap();
        assert_eq!(session.pe_objective(&fb).unwrap(), 0.0);
        assert_eq!(session.pi_objective(&fb).unwrap(), 0.0);
        let vg = session.pe_gradient(&fb).unwrap();
        for i in 0..vg.param_count() {
            assert_eq!(vg.flat_get(i), 0.0);
        }
        let cg = session.pi_gradient(&fb).unwrap();
        for i in 0..cg.param_count() {
            assert_eq!(cg.flat_get(i), 0.0);
        }
        let tg = session.adversarial_gradient(&fb).unwrap();
        for i in 0..tg.param_count() {
            assert_eq!(tg.flat_get(i), 0.0);
        }
    }

    #[test]
    fn vectorized_objective_agrees_with_scalar_increments() {
        let session = small_session(21);
        let fb = session
            .freeze_batch(&[0, 3, 5, 9], &[12, 17, 30, 44], 0)
            .unwrap();
        let core = session.eval_core(&fb).unwrap();
        let mut total = 0.0;
        for row in 0..8 {
            let x = StateSample {
                time_index: fb.draws.src_time()[row],
                z: fb.draws.src_z().row(row).to_vec(),
            };
            let dst = StateSample {
                time_index: core.dest_time[row],
                z: core.dest_z.row(row).to_vec(),
            };
            let term = martingale_increment(
                session.problem(),
                &fb.stats,
                session.control(),
                session.value(),
                &x,
                &dst,
            )
            .unwrap();
            assert!((term.value() - core.mart[row]).abs() <= 1e-12);
            total += term.value();
        }
        let pi = session.pi_objective(&fb).unwrap();
        assert!((pi - total / 8.0).abs() <= 1e-12);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn swapping_the_batches_keeps_the_objective_bitwise(seed in 0u64..500) {
            let session = small_session(seed);
            let a1 = [0u32, 2, 4, 6, 8, 10, 12, 14];
            let a2 = [1u32, 3, 5, 7, 9, 11, 13, 15];
            let fb = session.freeze_batch(&a1, &a2, 0).unwrap();
            let fb_swapped = session.freeze_batch(&a2, &a1, 0).unwrap();
            let lhs = session.pe_objective(&fb).unwrap();
            let rhs = session.pe_objective(&fb_swapped).unwrap();
            prop_assert_eq!(lhs.to_bits(), rhs.to_bits());
        }
    }

    #[test]
    fn value_gradient_matches_finite_differences() {
        let mut session = small_session(31);
        let fb = session
            .freeze_batch(&[0, 1, 2, 3, 4, 5], &[6, 7, 8, 9, 10, 11], 0)
            .unwrap();
        let grads = session.pe_gradient(&fb).unwrap();
        let eps = 1e-6;
        let mut checked = 0;
        let count = session.value().param_count();
        for index in (0..count).step_by(count / 40 + 1) {
            let saved = session.value().inner().flat_get(index);
            session.value_mut().inner_mut().flat_set(index, saved + eps);
            let high = session.pe_objective(&fb).unwrap();
            session.value_mut().inner_mut().flat_set(index, saved - eps);
            let low = session.pe_objective(&fb).unwrap();
            session.value_mut().inner_mut().flat_set(index, saved);
            let fd = (high - low) / (2.0 * eps);
            let analytic = grads.flat_get(index);
            assert!(
                (fd - analytic).abs() <= 1e-6 * fd.abs().max(1e-3),
                "param {index}: fd {fd} vs {analytic}"
            );
            checked += 1;
        }
        assert!(checked >= 30);
    }

    fn interior_session(seed: u64) -> TrainingSession<f64> {
        // Sources at most N-2 keep every destination on the grid interior,
        // plus a few inactive terminal sources.
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let config = small_config(32, 6);
        let mut rng = CounterRng::new(seed, StreamId::TestPoints, 0, 0);
        let z = Array2::from_shape_fn((32, 1), |_| rng.uniform_in(-1.0, 1.0));
        let mut times = vec![0u32; 32];
        for (m, slot) in times.iter_mut().enumerate() {
            *slot = if m % 8 == 7 { 100 } else { (m as u32 * 13) % 99 };
        }
        let ensemble = ParticleEnsemble::from_parts(100, seed, 0, times, z).unwrap();
        let control = ControlNet::for_problem(&problem, 8, 2, seed).unwrap();
        let value = ValueNet::for_problem(&problem, 8, 2, seed).unwrap();
        let test = TestNet::for_problem(&problem, 6, 10.0, seed).unwrap();
        TrainingSession::from_parts(problem, config, control, value, test, ensemble).unwrap()
    }

    #[test]
    fn control_gradient_matches_finite_differences_on_interior_batches() {
        let mut session = interior_session(41);
        let fb = session
            .freeze_batch(&[0, 1, 2, 3, 4, 7], &[8, 9, 10, 11, 12, 15], 0)
            .unwrap();
        let grads = session.pi_gradient(&fb).unwrap();
        let eps = 1e-6;
        let count = session.control().param_count();
        for index in (0..count).step_by(count / 40 + 1) {
            let saved = session.control().inner().flat_get(index);
            session.control_mut().inner_mut().flat_set(index, saved + eps);
            let high = session.pi_objective(&fb).unwrap();
            session.control_mut().inner_mut().flat_set(index, saved - eps);
            let low = session.pi_objective(&fb).unwrap();
            session.control_mut().inner_mut().flat_set(index, saved);
            let fd = (high - low) / (2.0 * eps);
            let analytic = grads.flat_get(index);
            assert!(
                (fd - analytic).abs() <= 1e-5 * fd.abs().max(1e-3),
                "param {index}: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn test_gradient_matches_finite_differences() {
        let mut session = interior_session(43);
        let fb = session
            .freeze_batch(&[0, 1, 2, 3, 4, 7], &[8, 9, 10, 11, 12, 15], 0)
            .unwrap();
        let grads = session.adversarial_gradient(&fb).unwrap();
        let eps = 1e-6;
        for index in 0..session.test_net().param_count() {
            let saved = session.test_net().flat_get(index);
            session.test_net_mut().flat_set(index, saved + eps);
            let high = session.pe_objective(&fb).unwrap();
            session.test_net_mut().flat_set(index, saved - eps);
            let low = session.pe_objective(&fb).unwrap();
            session.test_net_mut().flat_set(index, saved);
            let fd = (high - low) / (2.0 * eps);
            let analytic = grads.flat_get(index);
            assert!(
                (fd - analytic).abs() <= 1e-6 * fd.abs().max(1e-4),
                "param {index}: fd {fd} vs {analytic}"
            );
        }
    }

    #[test]
    fn control_gradient_dies_without_control_dependence() {
        // With a zero control-cost weight and every destination terminal,
        // both gradient channels vanish identically.
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        problem.set_constant("c2", 0.0).unwrap();
        let config = small_config(16, 4);
        let mut rng = CounterRng::new(47, StreamId::TestPoints, 0, 0);
        let z = Array2::from_shape_fn((16, 1), |_| rng.uniform_in(-1.0, 1.0));
        let ensemble = ParticleEnsemble::from_parts(100, 47, 0, vec![99; 16], z).unwrap();
        let control = ControlNet::for_problem(&problem, 8, 2, 47).unwrap();
        let value = ValueNet::for_problem(&problem, 8, 2, 47).unwrap();
        let test = TestNet::for_problem(&problem, 6, 10.0, 47).unwrap();
        let session =
            TrainingSession::from_parts(problem, config, control, value, test, ensemble).unwrap();
        let fb = session.freeze_batch(&[0, 1, 2, 3], &[4, 5, 6, 7], 0).unwrap();
        let grads = session.pi_gradient(&fb).unwrap();
        for i in 0..grads.param_count() {
            assert_eq!(grads.flat_get(i), 0.0);
        }
    }

    #[test]
    fn terminal_destinations_use_only_the_running_cost_channel() {
        // Sources at N-1: destinations are terminal, so the control gradient
        // must equal the hand-computed running-cost channel alone.
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let config = small_config(8, 2);
        let mut rng = CounterRng::new(53, StreamId::TestPoints, 0, 0);
        let z = Array2::from_shape_fn((8, 1), |_| rng.uniform_in(-1.0, 1.0));
        let ensemble = ParticleEnsemble::from_parts(100, 53, 0, vec![99; 8], z.clone()).unwrap();
        let control = constant_bias_control(1, &[0.4]);
        let value = ValueNet::for_problem(&problem, 8, 2, 53).unwrap();
        let test = TestNet::for_problem(&problem, 6, 10.0, 53).unwrap();
        let session =
            TrainingSession::from_parts(problem, config, control, value, test, ensemble).unwrap();
        let fb = session.freeze_batch(&[0, 1], &[2, 3], 0).unwrap();
        let grads = session.pi_gradient(&fb).unwrap();
        // f_u = c2 u = 0.4; rows all active; objective averages over 4 rows.
        let h = 0.01;
        let per_row = h * 0.4 / 4.0;
        let mut expect_w = [0.0; 2];
        let mut expect_b = 0.0;
        for row in 0..4 {
            let t = 0.99;
            let zv = z[[row, 0]];
            expect_w[0] += per_row * t;
            expect_w[1] += per_row * zv;
            expect_b += per_row;
        }
        assert!((grads.flat_get(0) - expect_w[0]).abs() <= 1e-14);
        assert!((grads.flat_get(1) - expect_w[1]).abs() <= 1e-14);
        assert!((grads.flat_get(2) - expect_b).abs() <= 1e-14);
    }

    #[test]
    fn repeated_descent_on_a_frozen_batch_does_not_increase_the_objective() {
        let mut successes = 0;
        for seed in 0..10 {
            let mut session = small_session(100 + seed);
            let fb = session
                .freeze_batch(&[0, 1, 2, 3, 4, 5, 6, 7], &[8, 9, 10, 11, 12, 13, 14, 15], 0)
                .unwrap();
            let mut last = session.pe_objective(&fb).unwrap();
            let mut monotone = true;
            for _ in 0..10 {
                let grads = session.pe_gradient(&fb).unwrap();
                session
                    .value
                    .apply_update(&mut session.rms_value, &grads, 1e-7, false)
                    .unwrap();
                let now = session.pe_objective(&fb).unwrap();
                if now > last + 1e-15 {
                    monotone = false;
                }
                last = now;
            }
            if monotone {
                successes += 1;
            }
        }
        assert!(successes >= 9, "only {successes}/10 trials descended");
    }

    #[test]
    fn repeated_ascent_on_a_frozen_batch_increases_the_objective() {
        let mut successes = 0;
        for seed in 0..10 {
            let mut session = small_session(200 + seed);
            let fb = session
                .freeze_batch(&[0, 1, 2, 3, 4, 5, 6, 7], &[8, 9, 10, 11, 12, 13, 14, 15], 0)
                .unwrap();
            let mut last = session.pe_objective(&fb).unwrap();
            let mut monotone = true;
            for _ in 0..10 {
                let grads = session.adversarial_gradient(&fb).unwrap();
                session
                    .test
                    .apply_update(&mut session.rms_test, &grads, 1e-7, true)
                    .unwrap();
                let now = session.pe_objective(&fb).unwrap();
                if now < last - 1e-15 {
                    monotone = false;
                }
                last = now;
            }
            if monotone {
                successes += 1;
            }
        }
        assert!(successes >= 9, "only {successes}/10 trials ascended");
    }

    #[test]
    fn zero_iterations_touch_nothing() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let mut config = small_config(32, 4);
        config.outer_iterations = 0;
        let mut session = TrainingSession::new(problem, config).unwrap();
        let before: Vec<f64> = (0..session.value().param_count())
            .map(|i| session.value().inner().flat_get(i))
            .collect();
        run_policy_iteration(&mut session, |_, _| Ok(())).unwrap();
        assert_eq!(session.iteration(), 0);
        for (i, &b) in before.iter().enumerate() {
            assert_eq!(session.value().inner().flat_get(i), b);
        }
    }

    #[test]
    fn outer_steps_advance_and_stay_finite() {
        let mut session = small_session(61);
        let mut seen = 0;
        run_policy_iteration(&mut session, |s, losses| {
            assert!(losses.pe_loss.is_finite());
            assert!(losses.pi_objective.is_finite());
            assert_eq!(s.iteration(), seen + 1);
            seen += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(session.iteration(), 10);
    }

    #[test]
    fn pre_step_losses_match_what_the_step_reports() {
        let mut session = small_session(62);
        let before = session.current_losses().unwrap();
        let stepped = session.outer_step().unwrap();
        assert_eq!(before.pe_raw.to_bits(), stepped.pe_raw.to_bits());
        assert_eq!(before.pe_loss.to_bits(), stepped.pe_loss.to_bits());
        assert_eq!(
            before.pi_objective.to_bits(),
            stepped.pi_objective.to_bits()
        );
    }

    #[test]
    fn fresh_noise_changes_the_inner_trajectory() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let mut config = small_config(64, 8);
        config.outer_iterations = 3;
        let mut fixed = TrainingSession::new(problem.clone(), config.clone()).unwrap();
        config.fresh_noise = true;
        let mut fresh = TrainingSession::new(problem, config).unwrap();
        for _ in 0..3 {
            fixed.outer_step().unwrap();
            fresh.outer_step().unwrap();
        }
        let a = fixed.value().inner().flat_get(0);
        let b = fresh.value().inner().flat_get(0);
        assert_ne!(a, b);
    }

    #[test]
    fn learning_rates_follow_the_schedule() {
        let session = small_session(71);
        let (v0, c0, t0) = session.learning_rates(0);
        let base = 3.0;
        assert!((v0 - base * 1e-3).abs() < 1e-12);
        assert_eq!(v0, c0);
        assert!((t0 - base * 1e-2).abs() < 1e-12);
        let (v_end, _, t_end) = session.learning_rates(10);
        assert!((v_end - base * 1e-5).abs() < 1e-12);
        assert!((t_end - base * 1e-4).abs() < 1e-12);
    }

    #[test]
    fn overlapping_batches_are_rejected() {
        let session = small_session(81);
        assert!(session.freeze_batch(&[0, 1], &[1, 2], 0).is_err());
        assert!(session.freeze_batch(&[], &[], 0).is_err());
        assert!(session.freeze_batch(&[0, 0], &[1, 2], 0).is_err());
    }
}
