//! Concrete game definitions: drift, diffusion, costs, initial laws, and the
//! measure statistics they consume.
//!
//! A problem couples a single agent's controlled dynamics on the time grid
//! `t = nh, n = 0..=N` with cost coefficients that read the population only
//! through [`BucketStats`]: the per-time mean and, for the interacting
//! variants, a kernel subsample. All coefficient callbacks are pure given
//! `(state, stats, control)`.

mod bucket;
mod target;

pub use bucket::{BucketStats, KernelData, KernelParts};
pub use target::{TargetKind, TargetTrajectory};

use std::str::FromStr;

use crate::error::{MfgError, Result};
use crate::rng::CounterRng;
use crate::scalar::Real;

/// Default number of time steps, giving `h = T/100`.
pub const DEFAULT_STEPS: usize = 100;

/// Default cap on the per-bucket kernel subsample.
pub const DEFAULT_KERNEL_CAP: usize = 1024;

/// The built-in game variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    /// Linear-quadratic game with no mean-field coupling in the drift.
    Lq1,
    /// Linear-quadratic game pulled toward the population mean, tracking a
    /// unit circle.
    Lq2,
    /// Linear-quadratic game pushed away from the target, tracking a helix.
    Lq3,
    /// Interbank reserve model: mean-reverting drift, cross cost in the
    /// control, one-dimensional.
    SystemicRisk,
    /// Target tracking with a pairwise repulsion kernel.
    TargetTracking,
    /// Obstacle avoidance with state-dependent noise and pairwise repulsion.
    Barrier,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Lq1 => "lq1",
            Variant::Lq2 => "lq2",
            Variant::Lq3 => "lq3",
            Variant::SystemicRisk => "systemic_risk",
            Variant::TargetTracking => "target_tracking",
            Variant::Barrier => "barrier",
        }
    }

    pub const ALL: [Variant; 6] = [
        Variant::Lq1,
        Variant::Lq2,
        Variant::Lq3,
        Variant::SystemicRisk,
        Variant::TargetTracking,
        Variant::Barrier,
    ];

    /// Dimension used when a config does not specify one.
    pub fn default_dim(self) -> usize {
        match self {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 | Variant::SystemicRisk => 1,
            Variant::TargetTracking | Variant::Barrier => 2,
        }
    }

    pub fn is_linear_quadratic(self) -> bool {
        matches!(self, Variant::Lq1 | Variant::Lq2 | Variant::Lq3)
    }

    /// Variants whose equilibrium admits a closed-form reference solution.
    pub fn is_reference_solvable(self) -> bool {
        !self.uses_kernel()
    }

    fn uses_kernel(self) -> bool {
        matches!(self, Variant::TargetTracking | Variant::Barrier)
    }

    fn target_kind(self) -> TargetKind {
        match self {
            Variant::Lq1 | Variant::SystemicRisk => TargetKind::Zero,
            Variant::Lq2 | Variant::TargetTracking | Variant::Barrier => TargetKind::Circle,
            Variant::Lq3 => TargetKind::Helix,
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                MfgError::Config(format!(
                    "unknown problem variant {s:?}; expected one of {}",
                    names.join(", ")
                ))
            })
    }
}

/// Resolved coefficient values, cached from the named constant list.
#[derive(Debug, Clone, Copy)]
struct Coeffs<R> {
    c: [R; 6],
    c_sigma: R,
    c_f: R,
}

/// A fully wired game on the grid `t = nh`.
#[derive(Debug, Clone)]
pub struct MfgProblem<R: Real> {
    variant: Variant,
    dim: usize,
    n_steps: usize,
    horizon: R,
    step: R,
    constants: Vec<(&'static str, R)>,
    co: Coeffs<R>,
    target: TargetTrajectory<R>,
    target_grid: Vec<R>,
    control_lower: R,
    control_upper: R,
    kernel_cap: usize,
}

/// Builds a variant with its standard coefficients and `N = 100` steps over
/// horizon `T = 1`.
pub fn make_problem<R: Real>(variant: Variant, dim: usize) -> Result<MfgProblem<R>> {
    if dim == 0 {
        return Err(MfgError::Config("state dimension must be positive".into()));
    }
    if variant == Variant::SystemicRisk && dim != 1 {
        return Err(MfgError::Config(format!(
            "the systemic_risk variant is one-dimensional, got d = {dim}"
        )));
    }
    let df = dim as f64;
    let constants: Vec<(&'static str, f64)> = match variant {
        Variant::Lq1 => vec![
            ("c0", 0.0),
            ("c1", 0.0),
            ("c2", 1.0),
            ("c3", 1.0 / df),
            ("c4", 0.0),
            ("c5", 1.0 / df),
            ("c_sigma", 0.5 / df.sqrt()),
        ],
        Variant::Lq2 | Variant::Lq3 => vec![
            ("c0", 1.0),
            ("c1", if variant == Variant::Lq2 { 0.0 } else { -0.5 }),
            ("c2", 1.0 / df),
            ("c3", 1.0 / df),
            ("c4", 1.0 / df),
            ("c5", 1.0 / df),
            ("c_sigma", 0.5 / df.sqrt()),
        ],
        Variant::SystemicRisk => vec![
            ("c1", 1.0),
            ("c2", 0.5),
            ("c3", 1.0),
            ("c4", 2.0),
            ("c5", 1.0),
        ],
        Variant::TargetTracking => {
            vec![("c1", 1.0), ("c2", 0.1), ("c4", 10.0), ("c_f", 1.0)]
        }
        Variant::Barrier => vec![
            ("c0", 5.0),
            ("c1", 0.1),
            ("c2", 1.0),
            ("c3", 0.1),
            ("c4", 1.0),
            ("c_f", 1.0),
        ],
    };
    let constants: Vec<(&'static str, R)> = constants
        .into_iter()
        .map(|(name, value)| (name, R::from_f64(value)))
        .collect();
    let mut problem = MfgProblem {
        variant,
        dim,
        n_steps: DEFAULT_STEPS,
        horizon: R::one(),
        step: R::zero(),
        constants,
        co: Coeffs {
            c: [R::zero(); 6],
            c_sigma: R::zero(),
            c_f: R::zero(),
        },
        target: TargetTrajectory::new(variant.target_kind(), dim),
        target_grid: Vec::new(),
        control_lower: R::neg_infinity(),
        control_upper: R::infinity(),
        kernel_cap: DEFAULT_KERNEL_CAP,
    };
    problem.refresh_coeffs();
    problem.set_steps(DEFAULT_STEPS)?;
    Ok(problem)
}

impl<R: Real> MfgProblem<R> {
    fn refresh_coeffs(&mut self) {
        let get = |name: &str| {
            self.constants
                .iter()
                .find(|(n, _)| *n == name)
                .map(|&(_, v)| v)
                .unwrap_or_else(R::zero)
        };
        self.co = Coeffs {
            c: [get("c0"), get("c1"), get("c2"), get("c3"), get("c4"), get("c5")],
            c_sigma: get("c_sigma"),
            c_f: get("c_f"),
        };
    }

    /// Changes the number of time steps (`h = T/N`).
    pub fn set_steps(&mut self, n_steps: usize) -> Result<()> {
        if n_steps == 0 {
            return Err(MfgError::Config("step count must be positive".into()));
        }
        self.n_steps = n_steps;
        self.step = self.horizon / R::from_usize(n_steps);
        self.target_grid = vec![R::zero(); (n_steps + 1) * self.dim];
        for n in 0..=n_steps {
            let t = self.time(n);
            let row = &mut self.target_grid[n * self.dim..(n + 1) * self.dim];
            self.target.eval_into(t, row);
        }
        Ok(())
    }

    /// Overrides one named coefficient and rewires the cached values.
    pub fn set_constant(&mut self, name: &str, value: R) -> Result<()> {
        match self.constants.iter_mut().find(|(n, _)| *n == name) {
            Some(slot) => {
                slot.1 = value;
                self.refresh_coeffs();
                Ok(())
            }
            None => {
                let names: Vec<&str> = self.constants.iter().map(|&(n, _)| n).collect();
                Err(MfgError::Config(format!(
                    "variant {} has no constant {name:?}; available: {}",
                    self.variant,
                    names.join(", ")
                )))
            }
        }
    }

    /// Restricts the control box (componentwise clamp interval).
    pub fn set_control_box(&mut self, lower: R, upper: R) -> Result<()> {
        if !(lower <= upper) {
            return Err(MfgError::Config(format!(
                "control box requires lower <= upper, got [{lower}, {upper}]"
            )));
        }
        self.control_lower = lower;
        self.control_upper = upper;
        Ok(())
    }

    pub fn set_kernel_cap(&mut self, cap: usize) -> Result<()> {
        if cap == 0 {
            return Err(MfgError::Config("kernel cap must be positive".into()));
        }
        self.kernel_cap = cap;
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Noise dimension of the spatial state (isotropic, so it equals `dim`).
    pub fn noise_dim(&self) -> usize {
        self.dim
    }

    pub fn control_dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn horizon(&self) -> R {
        self.horizon
    }

    pub fn step(&self) -> R {
        self.step
    }

    /// Grid time `t = nh`.
    pub fn time(&self, n: usize) -> R {
        self.step * R::from_usize(n)
    }

    pub fn control_box(&self) -> (R, R) {
        (self.control_lower, self.control_upper)
    }

    pub fn constants(&self) -> &[(&'static str, R)] {
        &self.constants
    }

    pub fn constant(&self, name: &str) -> Option<R> {
        self.constants
            .iter()
            .find(|(n, _)| *n == name)
            .map(|&(_, v)| v)
    }

    pub fn target(&self) -> &TargetTrajectory<R> {
        &self.target
    }

    /// Target value at grid index `n`, precomputed.
    pub fn target_at(&self, n: usize) -> &[R] {
        &self.target_grid[n * self.dim..(n + 1) * self.dim]
    }

    /// Subsample cap to request when building [`BucketStats`], or `None` for
    /// variants without a kernel interaction.
    pub fn kernel_cap(&self) -> Option<usize> {
        self.variant.uses_kernel().then_some(self.kernel_cap)
    }

    /// Spatial drift `b_z(x, stats, u)` at grid index `n`.
    pub fn drift_z_into(
        &self,
        n: usize,
        z: &[R],
        stats: &BucketStats<R>,
        u: &[R],
        out: &mut [R],
    ) {
        debug_assert_eq!(z.len(), self.dim);
        assert_eq!(out.len(), z.len(), "drift output length");
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                let [c0, c1, ..] = self.co.c;
                let mean = stats.mean(n);
                let ts = self.target_at(n);
                for i in 0..self.dim {
                    out[i] = u[i] + c0 * (mean[i] - z[i]) + c1 * (ts[i] - mean[i]);
                }
            }
            Variant::SystemicRisk => {
                let c1 = self.co.c[1];
                let mean = stats.mean(n);
                for i in 0..self.dim {
                    out[i] = c1 * (mean[i] - z[i]) + u[i];
                }
            }
            Variant::TargetTracking | Variant::Barrier => out.copy_from_slice(u),
        }
    }

    /// Product of a row vector with the control Jacobian of the drift.
    ///
    /// Every built-in variant enters the drift additively through `u`, so the
    /// Jacobian is the identity.
    pub fn drift_u_vjp_into(&self, w: &[R], out: &mut [R]) {
        out.copy_from_slice(w);
    }

    /// Isotropic diffusion magnitude: `sigma_z = scale · I`.
    pub fn diffusion_scale(&self, z: &[R]) -> R {
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => self.co.c_sigma,
            Variant::SystemicRisk => self.co.c[2],
            Variant::TargetTracking => R::from_f64(0.5),
            Variant::Barrier => {
                let mut sum = R::zero();
                for (i, &zi) in z.iter().enumerate() {
                    sum += (R::from_usize(i + 1) + zi).sin();
                }
                self.co.c[1] / R::from_usize(self.dim).sqrt() * sum
            }
        }
    }

    /// Running cost `f(x, stats, u)` at grid index `n`.
    pub fn run_cost(&self, n: usize, z: &[R], stats: &BucketStats<R>, u: &[R]) -> R {
        let half = R::from_f64(0.5);
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                let [_, _, c2, c3, c4, _] = self.co.c;
                let mean = stats.mean(n);
                let ts = self.target_at(n);
                let mut control_sq = R::zero();
                let mut mean_sq = R::zero();
                let mut target_sq = R::zero();
                for i in 0..self.dim {
                    control_sq += u[i] * u[i];
                    let dm = z[i] - mean[i];
                    mean_sq += dm * dm;
                    let dt = z[i] - ts[i];
                    target_sq += dt * dt;
                }
                half * (c2 * control_sq + c3 * mean_sq + c4 * target_sq)
            }
            Variant::SystemicRisk => {
                let [_, _, _, c3, c4, _] = self.co.c;
                let mean = stats.mean(n);
                let mut total = R::zero();
                for i in 0..self.dim {
                    let gap = mean[i] - z[i];
                    total += half * u[i] * u[i] - c3 * u[i] * gap + half * c4 * gap * gap;
                }
                total
            }
            Variant::TargetTracking => {
                let [_, c1, c2, ..] = self.co.c;
                let ts = self.target_at(n);
                let mut target_sq = R::zero();
                let mut control_sq = R::zero();
                for i in 0..self.dim {
                    let dt = z[i] - ts[i];
                    target_sq += dt * dt;
                    control_sq += u[i] * u[i];
                }
                c1 * target_sq
                    + c2 * control_sq
                    + self
                        .kernel_interaction(n, z, stats)
                        .expect("kernel statistics missing for an interaction cost")
            }
            Variant::Barrier => {
                let [c0, _, c2, c3, ..] = self.co.c;
                let mut barrier_sq = R::zero();
                let mut control_sq = R::zero();
                for i in 0..self.dim {
                    let db = z[i] - half;
                    barrier_sq += db * db;
                    control_sq += u[i] * u[i];
                }
                c0 / (R::one() + c2 * barrier_sq)
                    + c3 * control_sq
                    + self
                        .kernel_interaction(n, z, stats)
                        .expect("kernel statistics missing for an interaction cost")
            }
        }
    }

    /// Gradient of the running cost in the control argument.
    pub fn run_cost_grad_u_into(
        &self,
        n: usize,
        z: &[R],
        stats: &BucketStats<R>,
        u: &[R],
        out: &mut [R],
    ) {
        assert_eq!(out.len(), u.len(), "control gradient length");
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                let c2 = self.co.c[2];
                for i in 0..self.dim {
                    out[i] = c2 * u[i];
                }
            }
            Variant::SystemicRisk => {
                let c3 = self.co.c[3];
                let mean = stats.mean(n);
                for i in 0..self.dim {
                    out[i] = u[i] - c3 * (mean[i] - z[i]);
                }
            }
            Variant::TargetTracking => {
                let two_c2 = self.co.c[2] + self.co.c[2];
                for i in 0..self.dim {
                    out[i] = two_c2 * u[i];
                }
            }
            Variant::Barrier => {
                let two_c3 = self.co.c[3] + self.co.c[3];
                for i in 0..self.dim {
                    out[i] = two_c3 * u[i];
                }
            }
        }
    }

    /// Terminal cost `g(z, stats)`.
    pub fn term_cost(&self, z: &[R], stats: &BucketStats<R>) -> R {
        let half = R::from_f64(0.5);
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                let c5 = self.co.c[5];
                let ts = self.target_at(self.n_steps);
                let mut target_sq = R::zero();
                for i in 0..self.dim {
                    let dt = z[i] - ts[i];
                    target_sq += dt * dt;
                }
                half * c5 * target_sq + half
            }
            Variant::SystemicRisk => {
                let c5 = self.co.c[5];
                let mean = stats.mean(self.n_steps);
                let mut gap_sq = R::zero();
                for i in 0..self.dim {
                    let gap = mean[i] - z[i];
                    gap_sq += gap * gap;
                }
                half * c5 * gap_sq
            }
            Variant::TargetTracking | Variant::Barrier => {
                let c4 = self.co.c[4];
                let ts = self.target_at(self.n_steps);
                let mut target_sq = R::zero();
                for i in 0..self.dim {
                    let dt = z[i] - ts[i];
                    target_sq += dt * dt;
                }
                half * c4 * target_sq
            }
        }
    }

    /// Average of `exp(-c_f |z - y|^2)` over bucket `n`'s kernel subsample.
    pub fn kernel_interaction(&self, n: usize, z: &[R], stats: &BucketStats<R>) -> Result<R> {
        let points = stats.kernel_points(n)?;
        let rows = points.len() / self.dim;
        let mut total = R::zero();
        for y in points.chunks_exact(self.dim) {
            let mut dist_sq = R::zero();
            for i in 0..self.dim {
                let diff = z[i] - y[i];
                dist_sq += diff * diff;
            }
            total += (-self.co.c_f * dist_sq).exp();
        }
        Ok(total / R::from_usize(rows))
    }

    /// Draws one sample of the initial spatial state.
    pub fn init_sample_into(&self, rng: &mut CounterRng, out: &mut [R]) {
        match self.variant {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                let s = rng.uniform_in(-R::one(), R::one());
                out.fill(s);
            }
            Variant::SystemicRisk => {
                let spread = R::from_f64(3.0);
                let s = rng.uniform_in(-spread, spread);
                out.fill(s);
            }
            Variant::TargetTracking => {
                out.fill(R::zero());
                out[0] = rng.uniform_in(-R::one(), R::one());
            }
            Variant::Barrier => rng.fill_normal(out),
        }
    }

    /// Draws from the initial-guess law at grid index `n`: the initial law
    /// for most variants, and for the linear-quadratic family the initial law
    /// shifted by `5t` and blurred by Brownian noise of scale `c_sigma`.
    pub fn guess_sample_into(&self, rng: &mut CounterRng, n: usize, out: &mut [R]) {
        self.init_sample_into(rng, out);
        if self.variant.is_linear_quadratic() {
            let t = self.time(n);
            let shift = R::from_f64(5.0) * t;
            let blur = self.co.c_sigma * t.sqrt();
            for slot in out.iter_mut() {
                *slot += shift + blur * rng.normal();
            }
        }
    }

    /// Mean of the initial law (zero for every built-in variant).
    pub fn initial_mean(&self) -> Vec<R> {
        vec![R::zero(); self.dim]
    }

    /// Half-width of the diagonal segment used for evaluation points,
    /// matching the spread of the diagonal initial laws.
    pub fn diagonal_half_width(&self) -> R {
        match self.variant {
            Variant::SystemicRisk => R::from_f64(3.0),
            _ => R::one(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamId;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn flat_stats(mean: &[R64], buckets: usize) -> BucketStats<R64> {
        let mut means = Vec::with_capacity(mean.len() * buckets);
        for _ in 0..buckets {
            means.extend_from_slice(mean);
        }
        BucketStats::from_means(means, mean.len()).unwrap()
    }

    type R64 = f64;

    #[test]
    fn variant_names_round_trip() {
        for variant in Variant::ALL {
            assert_eq!(variant.name().parse::<Variant>().unwrap(), variant);
        }
        assert!("lq9".parse::<Variant>().is_err());
    }

    #[test]
    fn lq1_scalar_coefficients() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        assert_eq!(problem.constant("c2"), Some(1.0));
        assert_eq!(problem.constant("c3"), Some(1.0));
        assert_eq!(problem.constant("c5"), Some(1.0));
        assert_eq!(problem.constant("c_sigma"), Some(0.5));
        assert_eq!(problem.step(), 0.01);
    }

    #[test]
    fn lq1_coefficients_shrink_with_dimension() {
        let problem = make_problem::<f64>(Variant::Lq1, 4).unwrap();
        assert_eq!(problem.constant("c3"), Some(0.25));
        assert_eq!(problem.constant("c_sigma"), Some(0.25));
    }

    #[test]
    fn systemic_risk_requires_one_dimension() {
        assert!(make_problem::<f64>(Variant::SystemicRisk, 2).is_err());
        assert!(make_problem::<f64>(Variant::SystemicRisk, 1).is_ok());
    }

    #[test]
    fn systemic_risk_running_cost_vanishes_at_rest_on_the_mean() {
        let problem = make_problem::<f64>(Variant::SystemicRisk, 1).unwrap();
        let stats = flat_stats(&[0.7], 101);
        assert_eq!(problem.run_cost(3, &[0.7], &stats, &[0.0]), 0.0);
    }

    #[test]
    fn barrier_cost_peaks_at_the_obstacle() {
        let problem = make_problem::<f64>(Variant::Barrier, 2).unwrap();
        let z = [0.5, 0.5];
        // A subsample far from z underflows the kernel term to exactly zero.
        let far = vec![40.0; 2];
        let stats = BucketStats::from_parts(
            2,
            vec![1; 101],
            vec![0.0; 202],
            Some((far, vec![(0, 1); 101])),
        )
        .unwrap();
        assert_eq!(problem.run_cost(0, &z, &stats, &[0.0, 0.0]), 5.0);
    }

    #[test]
    fn kernel_average_of_self_is_one() {
        let problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        let z = [0.3, -0.4];
        let stats = BucketStats::from_parts(
            2,
            vec![1],
            vec![0.0; 2],
            Some((z.to_vec(), vec![(0, 1)])),
        )
        .unwrap();
        assert_eq!(problem.kernel_interaction(0, &z, &stats).unwrap(), 1.0);
    }

    #[test]
    fn kernel_two_point_average_halves_at_log_two_distance() {
        let problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        let z = [1.0, 2.0];
        let v = (2.0f64.ln() / 2.0).sqrt();
        let points = vec![z[0] + v, z[1] + v, z[0] - v, z[1] - v];
        let stats = BucketStats::from_parts(
            2,
            vec![2],
            vec![0.0; 2],
            Some((points, vec![(0, 2)])),
        )
        .unwrap();
        assert_abs_diff_eq!(
            problem.kernel_interaction(0, &z, &stats).unwrap(),
            0.5,
            epsilon = 1e-15
        );
    }

    #[test]
    fn kernel_decays_with_sharpness() {
        let mut problem = make_problem::<f64>(Variant::TargetTracking, 1).unwrap();
        let stats = BucketStats::from_parts(
            1,
            vec![1],
            vec![0.0],
            Some((vec![1.0], vec![(0, 1)])),
        )
        .unwrap();
        let loose = problem.kernel_interaction(0, &[0.0], &stats).unwrap();
        problem.set_constant("c_f", 50.0).unwrap();
        let sharp = problem.kernel_interaction(0, &[0.0], &stats).unwrap();
        assert!(sharp < loose);
        assert!(sharp < 1e-20);
    }

    #[test]
    fn lq_terminal_cost_at_the_target_is_one_half() {
        let problem = make_problem::<f64>(Variant::Lq2, 3).unwrap();
        let stats = flat_stats(&[0.0, 0.0, 0.0], 101);
        let ts = problem.target_at(problem.n_steps()).to_vec();
        assert_eq!(problem.term_cost(&ts, &stats), 0.5);
    }

    #[test]
    fn drift_matches_each_variant_form() {
        let stats = flat_stats(&[2.0], 101);
        let z = [0.5];
        let u = [3.0];
        let mut out = [0.0];

        let lq = make_problem::<f64>(Variant::Lq2, 1).unwrap();
        lq.drift_z_into(0, &z, &stats, &u, &mut out);
        // c0 = 1, c1 = 0: u + (mean - z).
        assert_abs_diff_eq!(out[0], 3.0 + 1.5, epsilon = 1e-15);

        let sr = make_problem::<f64>(Variant::SystemicRisk, 1).unwrap();
        sr.drift_z_into(0, &z, &stats, &u, &mut out);
        assert_abs_diff_eq!(out[0], 1.5 + 3.0, epsilon = 1e-15);

        let tt = make_problem::<f64>(Variant::TargetTracking, 1).unwrap();
        tt.drift_z_into(0, &z, &stats, &u, &mut out);
        assert_eq!(out[0], 3.0);
    }

    #[test]
    fn diffusion_scales_match_each_variant() {
        let lq = make_problem::<f64>(Variant::Lq1, 4).unwrap();
        assert_eq!(lq.diffusion_scale(&[9.0; 4]), 0.25);

        let sr = make_problem::<f64>(Variant::SystemicRisk, 1).unwrap();
        assert_eq!(sr.diffusion_scale(&[9.0]), 0.5);

        let barrier = make_problem::<f64>(Variant::Barrier, 2).unwrap();
        let z = [0.2, -0.7];
        let expected = 0.1 / 2.0f64.sqrt() * ((1.0 + 0.2f64).sin() + (2.0 - 0.7f64).sin());
        assert_abs_diff_eq!(barrier.diffusion_scale(&z), expected, epsilon = 1e-15);
    }

    #[test]
    fn control_gradient_matches_central_differences() {
        let kernel_pts = vec![0.1, -0.2, 0.4, 0.3];
        let stats2 = BucketStats::from_parts(
            2,
            vec![2; 101],
            vec![0.25; 202],
            Some((kernel_pts, vec![(0, 2); 101])),
        )
        .unwrap();
        let stats1 = flat_stats(&[0.25], 101);
        let z2 = [0.6, -0.3];
        let u2 = [0.8, -1.1];
        type Case<'a> = (MfgProblem<f64>, &'a [f64], &'a [f64], &'a BucketStats<f64>);
        let cases: Vec<Case<'_>> = vec![
            (make_problem(Variant::Lq3, 2).unwrap(), &z2, &u2, &stats2),
            (
                make_problem(Variant::SystemicRisk, 1).unwrap(),
                &z2[..1],
                &u2[..1],
                &stats1,
            ),
            (
                make_problem(Variant::TargetTracking, 2).unwrap(),
                &z2,
                &u2,
                &stats2,
            ),
            (make_problem(Variant::Barrier, 2).unwrap(), &z2, &u2, &stats2),
        ];
        let eps = 1e-6;
        for (problem, z, u, stats) in cases {
            let mut grad = vec![0.0; u.len()];
            problem.run_cost_grad_u_into(5, z, stats, u, &mut grad);
            for i in 0..u.len() {
                let mut up = u.to_vec();
                let mut down = u.to_vec();
                up[i] += eps;
                down[i] -= eps;
                let fd = (problem.run_cost(5, z, stats, &up)
                    - problem.run_cost(5, z, stats, &down))
                    / (2.0 * eps);
                assert_abs_diff_eq!(grad[i], fd, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn drift_control_jacobian_is_identity() {
        let problem = make_problem::<f64>(Variant::Lq1, 3).unwrap();
        let w = [1.0, -2.0, 0.5];
        let mut out = [0.0; 3];
        problem.drift_u_vjp_into(&w, &mut out);
        assert_eq!(out, w);
    }

    #[test]
    fn lq_initial_samples_sit_on_the_diagonal() {
        let problem = make_problem::<f64>(Variant::Lq2, 3).unwrap();
        let mut rng = CounterRng::new(21, StreamId::InitEnsemble, 0, 0);
        let mut z = [0.0; 3];
        for _ in 0..100 {
            problem.init_sample_into(&mut rng, &mut z);
            assert!(z[0].abs() <= 1.0);
            assert_eq!(z[0], z[1]);
            assert_eq!(z[0], z[2]);
        }
    }

    #[test]
    fn systemic_risk_initial_mean_is_zero() {
        let problem = make_problem::<f64>(Variant::SystemicRisk, 1).unwrap();
        let mut rng = CounterRng::new(22, StreamId::InitEnsemble, 0, 0);
        let draws = 100_000;
        let mut sum = 0.0;
        let mut z = [0.0];
        for _ in 0..draws {
            problem.init_sample_into(&mut rng, &mut z);
            assert!(z[0].abs() <= 3.0);
            sum += z[0];
        }
        let mean = sum / draws as f64;
        // SD of Uniform[-3,3] is sqrt(3); allow a 3-sigma band.
        let band = 3.0 * 3.0f64.sqrt() / (draws as f64).sqrt();
        assert!(mean.abs() <= band, "mean {mean} outside {band}");
    }

    #[test]
    fn tracking_initial_samples_live_on_a_segment() {
        let problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        let mut rng = CounterRng::new(23, StreamId::InitEnsemble, 0, 0);
        let mut z = [0.0; 2];
        for _ in 0..100 {
            problem.init_sample_into(&mut rng, &mut z);
            assert!(z[0].abs() <= 1.0);
            assert_eq!(z[1], 0.0);
        }
    }

    #[test]
    fn barrier_initial_samples_have_identity_covariance() {
        let problem = make_problem::<f64>(Variant::Barrier, 2).unwrap();
        let mut rng = CounterRng::new(24, StreamId::InitEnsemble, 0, 0);
        let draws = 100_000;
        let mut z = [0.0; 2];
        let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
        for _ in 0..draws {
            problem.init_sample_into(&mut rng, &mut z);
            sxx += z[0] * z[0];
            syy += z[1] * z[1];
            sxy += z[0] * z[1];
        }
        let nf = draws as f64;
        let band = 3.0 * (2.0 / nf).sqrt();
        assert!((sxx / nf - 1.0).abs() <= band);
        assert!((syy / nf - 1.0).abs() <= band);
        assert!((sxy / nf).abs() <= 3.0 / nf.sqrt());
    }

    #[test]
    fn lq_guess_law_shifts_linearly_in_time() {
        let problem = make_problem::<f64>(Variant::Lq1, 1).unwrap();
        let mut rng = CounterRng::new(25, StreamId::InitEnsemble, 0, 0);
        let draws = 100_000;
        let n = 40;
        let mut sum = 0.0;
        let mut z = [0.0];
        for _ in 0..draws {
            problem.guess_sample_into(&mut rng, n, &mut z);
            sum += z[0];
        }
        let mean = sum / draws as f64;
        let t = 0.4f64;
        // Variance of Uniform[-1,1] plus the Brownian blur.
        let sd = (1.0 / 3.0 + 0.25 * t).sqrt();
        let band = 3.0 * sd / (draws as f64).sqrt();
        assert!(
            (mean - 5.0 * t).abs() <= band,
            "mean {mean} not near {}",
            5.0 * t
        );
    }

    #[test]
    fn non_lq_guess_law_ignores_time() {
        let problem = make_problem::<f64>(Variant::Barrier, 2).unwrap();
        let mut a = CounterRng::new(26, StreamId::InitEnsemble, 0, 0);
        let mut b = CounterRng::new(26, StreamId::InitEnsemble, 0, 0);
        let mut z_early = [0.0; 2];
        let mut z_late = [0.0; 2];
        problem.guess_sample_into(&mut a, 0, &mut z_early);
        problem.guess_sample_into(&mut b, 99, &mut z_late);
        assert_eq!(z_early, z_late);
    }

    #[test]
    fn unknown_constant_is_rejected() {
        let mut problem = make_problem::<f64>(Variant::TargetTracking, 2).unwrap();
        assert!(problem.set_constant("c_sigma", 1.0).is_err());
        assert!(problem.set_constant("c1", 2.0).is_ok());
        assert_eq!(problem.constant("c1"), Some(2.0));
    }

    proptest! {
        #[test]
        fn lq_running_cost_is_quadratic_in_the_control(
            z in prop::collection::vec(-5.0f64..5.0, 3),
            u in prop::collection::vec(-5.0f64..5.0, 3),
            lambda in 0.1f64..10.0,
        ) {
            let problem = make_problem::<f64>(Variant::Lq2, 3).unwrap();
            let stats = flat_stats(&[0.3, -0.1, 0.2], 101);
            let scaled: Vec<f64> = u.iter().map(|&x| lambda * x).collect();
            let base = problem.run_cost(7, &z, &stats, &[0.0; 3]);
            let grown = problem.run_cost(7, &z, &stats, &scaled) - base;
            let unit = problem.run_cost(7, &z, &stats, &u) - base;
            prop_assert!((grown - lambda * lambda * unit).abs() <= 1e-10 * (1.0 + grown.abs()));
        }
    }
}
