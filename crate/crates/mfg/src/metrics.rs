//! Run-quality metrics: frozen evaluation point sets, the empirical path
//! cost under the learned control, and relative errors against a
//! closed-form reference.

use ndarray::{Array2, ArrayView2};

use crate::error::{MfgError, Result};
use crate::net::{ControlNet, ValueNet};
use crate::problem::{BucketStats, MfgProblem};
use crate::reference::ReferenceEvaluator;
use crate::rng::{CounterRng, StreamId};
use crate::scalar::Real;

/// Column order of the metrics history file.
pub const METRICS_HEADER: &str = "iteration,pe_loss,pi_objective,RE1,REinf,RC,J_hat,wall_s";

/// Default number of simulated cost paths.
pub const COST_PATHS: usize = 256;

/// One row of the metrics history.
#[derive(Debug, Clone, Copy)]
pub struct MetricsRecord {
    pub iteration: u64,
    pub pe_loss: f64,
    pub pi_objective: f64,
    pub re1: f64,
    pub re_inf: f64,
    pub rc: f64,
    pub j_hat: f64,
    pub wall_s: f64,
}

impl MetricsRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.iteration,
            self.pe_loss,
            self.pi_objective,
            self.re1,
            self.re_inf,
            self.rc,
            self.j_hat,
            self.wall_s
        )
    }
}

/// Evaluation points drawn once from the diagonal segment of the state
/// space and frozen for the rest of the run: 256 points for the cost
/// comparison and 1000 for the value-error comparison.
#[derive(Debug, Clone)]
pub struct TestPointSet<R: Real> {
    cost_points: Array2<R>,
    error_points: Array2<R>,
}

impl<R: Real> TestPointSet<R> {
    pub const COST_POINTS: usize = 256;
    pub const ERROR_POINTS: usize = 1000;

    pub fn for_problem(problem: &MfgProblem<R>, seed: u64) -> Self {
        let d = problem.dim();
        let c = problem.diagonal_half_width();
        let mut rng = CounterRng::new(seed, StreamId::TestPoints, 0, 0);
        let mut draw = |count: usize| {
            let mut points = Array2::zeros((count, d));
            for p in 0..count {
                let s = rng.uniform_in(-c, c);
                points.row_mut(p).fill(s);
            }
            points
        };
        TestPointSet {
            cost_points: draw(Self::COST_POINTS),
            error_points: draw(Self::ERROR_POINTS),
        }
    }

    pub fn cost_points(&self) -> ArrayView2<'_, R> {
        self.cost_points.view()
    }

    pub fn error_points(&self) -> ArrayView2<'_, R> {
        self.error_points.view()
    }
}

/// The empirical path cost next to the reference optimum it is compared
/// against.
#[derive(Debug, Clone, Copy)]
pub struct CostEstimate {
    pub j_hat: f64,
    pub j_star: f64,
    pub paths: usize,
    pub step: f64,
}

impl CostEstimate {
    pub fn relative_cost(&self) -> Result<f64> {
        relative_cost(self.j_hat, self.j_star)
    }
}

/// The relative cost gap (Ĵ - J*) / J*.
pub fn relative_cost(j_hat: f64, j_star: f64) -> Result<f64> {
    if j_star == 0.0 {
        return Err(MfgError::Metric(
            "relative cost is undefined for a zero reference cost".into(),
        ));
    }
    Ok((j_hat - j_star) / j_star)
}

/// Per-path costs of Euler-Maruyama trajectories started from the initial
/// law, with the control supplied per time step for the whole path batch.
/// Costs accumulate in 64-bit arithmetic regardless of the state scalar.
pub fn simulate_path_costs<R, F>(
    problem: &MfgProblem<R>,
    stats: &BucketStats<R>,
    paths: usize,
    seed: u64,
    mut control_at: F,
) -> Result<Vec<f64>>
where
    R: Real,
    F: FnMut(usize, ArrayView2<'_, R>) -> Result<Array2<R>>,
{
    if paths == 0 {
        return Err(MfgError::Metric("path count must be positive".into()));
    }
    let d = problem.dim();
    let n_steps = problem.n_steps();
    let h = problem.step();
    let sqrt_h = h.sqrt();
    let mut rngs: Vec<CounterRng> = (0..paths)
        .map(|p| CounterRng::new(seed, StreamId::CostPaths, p as u64, 0))
        .collect();
    let mut states = Array2::zeros((paths, d));
    for (p, rng) in rngs.iter_mut().enumerate() {
        problem.init_sample_into(rng, states.row_mut(p).into_slice().expect("owned rows"));
    }
    let mut costs = vec![0.0f64; paths];
    let mut inputs = Array2::zeros((paths, 1 + d));
    let mut drift = vec![R::zero(); d];
    for n in 0..n_steps {
        let t = problem.time(n);
        for p in 0..paths {
            inputs[[p, 0]] = t;
            for j in 0..d {
                inputs[[p, 1 + j]] = states[[p, j]];
            }
        }
        let u = control_at(n, inputs.view())?;
        if u.nrows() != paths || u.ncols() != problem.control_dim() {
            return Err(MfgError::shape(
                "path control batch",
                format!("{paths} x {}", problem.control_dim()),
                format!("{} x {}", u.nrows(), u.ncols()),
            ));
        }
        for p in 0..paths {
            let z = states.row(p);
            let z = z.to_slice().expect("owned rows");
            let u_row = u.row(p);
            let u_row = u_row.to_slice().expect("owned rows");
            let f = problem.run_cost(n, z, stats, u_row);
            costs[p] += h.to_f64() * f.to_f64();
            if !costs[p].is_finite() {
                return Err(MfgError::Metric(format!(
                    "cost path {p} became non-finite at step {n}"
                )));
            }
            problem.drift_z_into(n, z, stats, u_row, &mut drift);
            let scale = problem.diffusion_scale(z) * sqrt_h;
            let mut row = states.row_mut(p);
            for j in 0..d {
                row[j] += h * drift[j] + scale * rngs[p].normal::<R>();
            }
        }
    }
    for (p, cost) in costs.iter_mut().enumerate() {
        let z = states.row(p);
        *cost += problem
            .term_cost(z.to_slice().expect("owned rows"), stats)
            .to_f64();
        if !cost.is_finite() {
            return Err(MfgError::Metric(format!(
                "cost path {p} ended non-finite"
            )));
        }
    }
    Ok(costs)
}

/// The empirical cost Ĵ: the path-cost average under the learned control,
/// with left-rectangle quadrature of the running cost and the terminal
/// cost charged at the final pre-reset state.
pub fn simulate_cost<R: Real>(
    problem: &MfgProblem<R>,
    control: &ControlNet<R>,
    stats: &BucketStats<R>,
    paths: usize,
    seed: u64,
) -> Result<f64> {
    let costs = simulate_path_costs(problem, stats, paths, seed, |_, inputs| {
        control.forward(inputs)
    })?;
    Ok(costs.iter().sum::<f64>() / costs.len() as f64)
}

/// Bucket statistics whose means are the reference mean path sampled on
/// the time grid, for simulating against the exact mean field instead of
/// the empirical one.
pub fn reference_bucket_means<R: Real>(
    problem: &MfgProblem<R>,
    reference: &ReferenceEvaluator,
) -> Result<BucketStats<R>> {
    let d = problem.dim();
    if reference.dim() != d {
        return Err(MfgError::shape("reference mean dim", d, reference.dim()));
    }
    let mut means = vec![R::zero(); (problem.n_steps() + 1) * d];
    let mut buf = vec![0.0f64; d];
    for n in 0..=problem.n_steps() {
        reference.mean_into(problem.time(n).to_f64(), &mut buf)?;
        for j in 0..d {
            means[n * d + j] = R::from_f64(buf[j]);
        }
    }
    BucketStats::from_means(means, d)
}

/// The reference optimum J*: the exact value at time zero averaged over
/// the cost point set.
pub fn reference_cost<R: Real>(
    reference: &ReferenceEvaluator,
    points: ArrayView2<'_, R>,
) -> Result<f64> {
    if points.nrows() == 0 {
        return Err(MfgError::Metric("need at least one cost point".into()));
    }
    let mut z = vec![0.0f64; points.ncols()];
    let mut sum = 0.0;
    for row in points.rows() {
        for (slot, &v) in z.iter_mut().zip(row) {
            *slot = v.to_f64();
        }
        sum += reference.value(0.0, &z)?;
    }
    Ok(sum / points.nrows() as f64)
}

/// Relative errors of predicted values against exact ones: the
/// sum-normalized error and the max-normalized error.
pub fn relative_errors_from(predicted: &[f64], exact: &[f64]) -> Result<(f64, f64)> {
    if predicted.len() != exact.len() || predicted.is_empty() {
        return Err(MfgError::shape(
            "relative error inputs",
            exact.len().max(1),
            predicted.len(),
        ));
    }
    let mut abs_sum = 0.0;
    let mut abs_max = 0.0f64;
    let mut err_sum = 0.0;
    let mut err_max = 0.0f64;
    for (&p, &e) in predicted.iter().zip(exact) {
        err_sum += (p - e).abs();
        err_max = err_max.max((p - e).abs());
        abs_sum += e.abs();
        abs_max = abs_max.max(e.abs());
    }
    if abs_sum == 0.0 || abs_max == 0.0 {
        return Err(MfgError::Metric(
            "relative errors are undefined against an identically zero reference".into(),
        ));
    }
    Ok((err_sum / abs_sum, err_max / abs_max))
}

/// Relative errors of the learned value function at time zero over the
/// frozen error point set.
pub fn relative_errors<R: Real>(
    value: &ValueNet<R>,
    problem: &MfgProblem<R>,
    stats: &BucketStats<R>,
    reference: &ReferenceEvaluator,
    points: ArrayView2<'_, R>,
) -> Result<(f64, f64)> {
    let d = problem.dim();
    let rows = points.nrows();
    let mut inputs = Array2::zeros((rows, 1 + d));
    for p in 0..rows {
        for j in 0..d {
            inputs[[p, 1 + j]] = points[[p, j]];
        }
    }
    let batch = value.forward_batch(inputs.view(), &vec![0u32; rows], problem, stats)?;
    let mut z = vec![0.0f64; d];
    let mut predicted = Vec::with_capacity(rows);
    let mut exact = Vec::with_capacity(rows);
    for p in 0..rows {
        for j in 0..d {
            z[j] = points[[p, j]].to_f64();
        }
        predicted.push(batch.values()[p].to_f64());
        exact.push(reference.value(0.0, &z)?);
    }
    relative_errors_from(&predicted, &exact)
}

/// Everything needed to turn a training state into one metrics row: the
/// frozen point sets, the optional closed-form reference with its J*, and
/// the path-simulation settings.
#[derive(Debug)]
pub struct MetricsEvaluator<R: Real> {
    problem: MfgProblem<R>,
    points: TestPointSet<R>,
    reference: Option<ReferenceEvaluator>,
    j_star: f64,
    paths: usize,
    seed: u64,
    cost_stats: Option<BucketStats<R>>,
}

impl<R: Real> MetricsEvaluator<R> {
    pub fn new(
        problem: MfgProblem<R>,
        reference: Option<ReferenceEvaluator>,
        seed: u64,
        paths: usize,
    ) -> Result<Self> {
        let points = TestPointSet::for_problem(&problem, seed);
        let j_star = match &reference {
            Some(r) => reference_cost(r, points.cost_points())?,
            None => f64::NAN,
        };
        Ok(MetricsEvaluator {
            problem,
            points,
            reference,
            j_star,
            paths,
            seed,
            cost_stats: None,
        })
    }

    /// Switches the cost simulation from the trained ensemble's bucket
    /// means to the reference mean path. Needs the closed-form reference.
    pub fn against_reference_mean(mut self) -> Result<Self> {
        let reference = self.reference.as_ref().ok_or_else(|| {
            MfgError::Config(
                "simulating against the reference mean needs a closed-form reference".into(),
            )
        })?;
        self.cost_stats = Some(reference_bucket_means(&self.problem, reference)?);
        Ok(self)
    }

    pub fn points(&self) -> &TestPointSet<R> {
        &self.points
    }

    pub fn reference(&self) -> Option<&ReferenceEvaluator> {
        self.reference.as_ref()
    }

    pub fn j_star(&self) -> f64 {
        self.j_star
    }

    /// Computes one metrics row at the given iteration. Without a
    /// reference, the reference-bound columns are NaN.
    #[allow(clippy::too_many_arguments)]
    pub fn evaluate(
        &self,
        control: &ControlNet<R>,
        value: &ValueNet<R>,
        stats: &BucketStats<R>,
        iteration: u64,
        pe_loss: f64,
        pi_objective: f64,
        wall_s: f64,
    ) -> Result<MetricsRecord> {
        let cost_stats = self.cost_stats.as_ref().unwrap_or(stats);
        let j_hat = simulate_cost(&self.problem, control, cost_stats, self.paths, self.seed)?;
        let (re1, re_inf, rc) = match &self.reference {
            Some(reference) => {
                let (re1, re_inf) = relative_errors(
                    value,
                    &self.problem,
                    stats,
                    reference,
                    self.points.error_points(),
                )?;
                (re1, re_inf, relative_cost(j_hat, self.j_star)?)
            }
            None => (f64::NAN, f64::NAN, f64::NAN),
        };
        Ok(MetricsRecord {
            iteration,
            pe_loss,
            pi_objective,
            re1,
            re_inf,
            rc,
            j_hat,
            wall_s,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Mlp};
    use crate::problem::{make_problem, Variant};
    use ndarray::arr1;
    use proptest::prelude::*;

    fn flat_stats(problem: &MfgProblem<f64>) -> BucketStats<f64> {
        BucketStats::from_means(vec![0.0; (problem.n_steps() + 1) * problem.dim()], problem.dim())
            .unwrap()
    }

    fn constant_control(d: usize, bias: f64) -> ControlNet<f64> {
        let inner = Mlp::from_parts(
            vec![Array2::zeros((1, 1 + d))],
            vec![arr1(&[bias])],
            Activation::Relu,
        )
        .unwrap();
        ControlNet::from_mlp(inner, f64::NEG_INFINITY, f64::INFINITY).unwrap()
    }

    #[test]
    fn point_sets_sit_on_the_diagonal_and_freeze() {
        let problem = make_problem::<f64>(Variant::Lq2, 3).unwrap();
        let a = TestPointSet::for_problem(&problem, 9);
        let b = TestPointSet::for_problem(&problem, 9);
        assert_eq!(a.cost_points().nrows(), 256);
        assert_eq!(a.error_points().nrows(), 1000);
        for row in a.cost_points().rows() {
            assert!(row[0].abs() <= 1.0);
            assert_eq!(row[0], row[1]);
            assert_eq!(row[0], row[2]);
        }
        assert_eq!(a.cost_points(), b.cost_points());
        assert_eq!(a.error_points(), b.error_points());
        let other = TestPointSet::for_problem(&problem, 10);
        assert_ne!(a.cost_points(), other.cost_points());
    }

    #[test]
    fn risk_pool_points_use_the_wider_segment() {
        let problem = make_problem::<f64>(Variant::SystemicRisk, 1).unwrap();
        let points = TestPointSet::for_problem(&problem, 4);
        let mut widest = 0.0f64;
        for row in points.error_points().rows() {
            widest = widest.max(row[0].abs());
            assert!(row[0].abs() <= 3.0);
        }
        assert!(widest > 1.0);
    }

    #[test]
    fn constant_terminal_cost_is_recovered_exactly() {
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        for name in ["c2", "c3", "c5"] {
            problem.set_constant(name, 0.0).unwrap();
        }
        let stats = flat_stats(&problem);
        let control = constant_control(1, 0.3);
        let j = simulate_cost(&problem, &control, &stats, 64, 5).unwrap();
        assert_eq!(j, 0.5);
    }

    #[test]
    fn constant_running_cost_integrates_to_one() {
        let mut problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        problem.set_constant("c2", 2.0).unwrap();
        problem.set_constant("c3", 0.0).unwrap();
        problem.set_constant("c5", 0.0).unwrap();
        let stats = flat_stats(&problem);
        let control = constant_control(1, 1.0);
        let j = simulate_cost(&problem, &control, &stats, 32, 6).unwrap();
        assert!((j - 1.5).abs() < 1e-12, "quadrature drifted: {j}");
    }

    #[test]
    fn exact_control_lands_within_monte_carlo_error_of_the_optimum() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let reference = ReferenceEvaluator::for_problem(&problem).unwrap();
        let stats = reference_bucket_means(&problem, &reference).unwrap();
        let points = TestPointSet::for_problem(&problem, 11);
        let j_star = reference_cost(&reference, points.cost_points()).unwrap();
        let costs = simulate_path_costs(&problem, &stats, 256, 11, |n, inputs| {
            let t = problem.time(n);
            let mut u = Array2::zeros((inputs.nrows(), 1));
            let mut out = [0.0f64];
            for (p, row) in inputs.rows().into_iter().enumerate() {
                reference.optimal_control_into(t, &[row[1]], &mut out)?;
                u[[p, 0]] = out[0];
            }
            Ok(u)
        })
        .unwrap();
        let mean = costs.iter().sum::<f64>() / 256.0;
        let var = costs.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / 255.0;
        let band = 3.0 * var.sqrt() / 16.0;
        assert!(
            (mean - j_star).abs() <= band,
            "mean {mean} vs optimum {j_star} outside {band}"
        );
    }

    #[test]
    fn diverging_paths_are_reported() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let stats = flat_stats(&problem);
        let control = constant_control(1, 1e200);
        let err = simulate_cost(&problem, &control, &stats, 8, 7).unwrap_err();
        assert!(matches!(err, MfgError::Metric(_)));
    }

    #[test]
    fn path_costs_are_deterministic_in_the_seed() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let stats = flat_stats(&problem);
        let control = constant_control(1, 0.1);
        let a = simulate_cost(&problem, &control, &stats, 32, 13).unwrap();
        let b = simulate_cost(&problem, &control, &stats, 32, 13).unwrap();
        let c = simulate_cost(&problem, &control, &stats, 32, 14).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
        assert_ne!(a.to_bits(), c.to_bits());
    }

    #[test]
    fn relative_cost_handles_the_edge_cases() {
        assert_eq!(relative_cost(1.0, 1.0).unwrap(), 0.0);
        assert!((relative_cost(1.01, 1.0).unwrap() - 0.01).abs() < 1e-15);
        assert!(relative_cost(1.0, 0.0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn relative_cost_ignores_common_binary_rescaling(
            j_hat in -10.0f64..10.0,
            j_star in 0.1f64..10.0,
            exponent in -20i32..20,
        ) {
            let lambda = 2.0f64.powi(exponent);
            let base = relative_cost(j_hat, j_star).unwrap();
            let scaled = relative_cost(lambda * j_hat, lambda * j_star).unwrap();
            prop_assert_eq!(base.to_bits(), scaled.to_bits());
        }
    }

    #[test]
    fn matching_values_give_zero_errors_and_mismatches_do_not() {
        let exact = [1.0, -2.0, 0.5];
        let (re1, re_inf) = relative_errors_from(&exact, &exact).unwrap();
        assert_eq!((re1, re_inf), (0.0, 0.0));
        let shifted: Vec<f64> = exact.iter().map(|v| v + 0.25).collect();
        let (re1, re_inf) = relative_errors_from(&shifted, &exact).unwrap();
        assert!(re1 > 0.0 && re_inf > 0.0);
        assert!((re_inf - 0.25 / 2.0).abs() < 1e-15);
        assert!((re1 - 0.75 / 3.5).abs() < 1e-15);
    }

    #[test]
    fn zero_reference_values_are_rejected() {
        assert!(relative_errors_from(&[1.0, 2.0], &[0.0, 0.0]).is_err());
        assert!(relative_errors_from(&[1.0], &[1.0, 2.0]).is_err());
        assert!(relative_errors_from(&[], &[]).is_err());
    }

    #[test]
    fn reference_means_fill_every_bucket() {
        let problem = make_problem::<f64>(Variant::Lq2, 1).unwrap();
        let reference = ReferenceEvaluator::for_problem(&problem).unwrap();
        let stats = reference_bucket_means(&problem, &reference).unwrap();
        let mut buf = [0.0f64];
        reference.mean_into(0.5, &mut buf).unwrap();
        assert_eq!(stats.mean(50)[0], buf[0]);
        reference.mean_into(0.0, &mut buf).unwrap();
        assert!(buf[0].abs() < 1e-9);
    }

    #[test]
    fn evaluator_produces_a_full_row_for_referenced_problems() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let reference = ReferenceEvaluator::for_problem(&problem).unwrap();
        let evaluator = MetricsEvaluator::new(problem.clone(), Some(reference), 3, 32).unwrap();
        assert!(evaluator.j_star() > 0.0);
        let control = ControlNet::for_problem(&problem, 8, 2, 3).unwrap();
        let value = ValueNet::for_problem(&problem, 8, 2, 3).unwrap();
        let stats = flat_stats(&problem);
        let record = evaluator
            .evaluate(&control, &value, &stats, 7, 0.25, 1.5, 2.0)
            .unwrap();
        assert_eq!(record.iteration, 7);
        assert!(record.re1.is_finite() && record.re1 > 0.0);
        assert!(record.re_inf.is_finite());
        assert!(record.rc.is_finite());
        assert!(record.j_hat.is_finite());
        assert_eq!(record.csv_line().split(',').count(), 8);
        assert_eq!(METRICS_HEADER.split(',').count(), 8);
    }

    #[test]
    fn reference_mean_field_overrides_the_ensemble_statistics() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let reference = ReferenceEvaluator::for_problem(&problem).unwrap();
        let control = constant_control(1, 0.2);
        let value = ValueNet::for_problem(&problem, 8, 2, 3).unwrap();
        let skewed = BucketStats::from_means(
            vec![4.0; (problem.n_steps() + 1) * problem.dim()],
            problem.dim(),
        )
        .unwrap();
        let empirical = MetricsEvaluator::new(problem.clone(), Some(reference), 3, 16).unwrap();
        let pinned = MetricsEvaluator::new(
            problem.clone(),
            Some(ReferenceEvaluator::for_problem(&problem).unwrap()),
            3,
            16,
        )
        .unwrap()
        .against_reference_mean()
        .unwrap();
        let from_skew = empirical
            .evaluate(&control, &value, &skewed, 0, 0.0, 0.0, 0.0)
            .unwrap();
        let from_reference = pinned
            .evaluate(&control, &value, &skewed, 0, 0.0, 0.0, 0.0)
            .unwrap();
        assert_ne!(from_skew.j_hat, from_reference.j_hat);
        let exact_means = reference_bucket_means(
            &problem,
            &ReferenceEvaluator::for_problem(&problem).unwrap(),
        )
        .unwrap();
        let direct = empirical
            .evaluate(&control, &value, &exact_means, 0, 0.0, 0.0, 0.0)
            .unwrap();
        assert_eq!(direct.j_hat.to_bits(), from_reference.j_hat.to_bits());
    }

    #[test]
    fn reference_mean_field_needs_a_reference() {
        let problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        let evaluator = MetricsEvaluator::new(problem, None, 3, 16).unwrap();
        assert!(evaluator.against_reference_mean().is_err());
    }

    #[test]
    fn evaluator_leaves_reference_columns_empty_without_a_reference() {
        let problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        let evaluator = MetricsEvaluator::new(problem.clone(), None, 3, 16).unwrap();
        let control = ControlNet::for_problem(&problem, 8, 2, 3).unwrap();
        let value = ValueNet::for_problem(&problem, 8, 2, 3).unwrap();
        let ensemble = crate::measure::init_ensemble(&problem, 512, 3).unwrap();
        let stats = ensemble.bucket_stats(&problem).unwrap();
        let record = evaluator
            .evaluate(&control, &value, &stats, 0, 0.0, 0.0, 0.0)
            .unwrap();
        assert!(record.re1.is_nan() && record.re_inf.is_nan() && record.rc.is_nan());
        assert!(record.j_hat.is_finite());
    }
}
