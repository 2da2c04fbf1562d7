//! Run configuration: sectioned `key = value` text files, ready-made
//! profiles, and the translation into problem and trainer settings.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{MfgError, Result};
use crate::problem::{make_problem, MfgProblem, Variant};
use crate::scalar::Real;
use crate::trainer::TrainerConfig;

/// Which mean field the cost simulation runs against.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeanFieldMode {
    /// Bucket statistics of the trained particle ensemble.
    Empirical,
    /// The closed-form reference mean path.
    Reference,
}

impl std::fmt::Display for MeanFieldMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            MeanFieldMode::Empirical => "empirical",
            MeanFieldMode::Reference => "reference",
        })
    }
}

impl FromStr for MeanFieldMode {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical" => Ok(MeanFieldMode::Empirical),
            "reference" => Ok(MeanFieldMode::Reference),
            other => Err(MfgError::Config(format!(
                "unknown mean-field mode {other:?}; expected empirical or reference"
            ))),
        }
    }
}

/// One full run described as data. Parsing and serialization round-trip.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub dim: usize,
    pub steps: usize,
    pub control_lower: f64,
    pub control_upper: f64,
    pub kernel_cap: Option<usize>,

    pub iterations: u64,
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

    pub metrics_cadence: u64,
    pub cost_paths: usize,
    pub mean_field: MeanFieldMode,
    pub metric_seed: Option<u64>,

    pub output_dir: PathBuf,
    pub checkpoint_cadence: u64,
    pub snapshot_cadence: u64,
}

impl RunConfig {
    /// Workstation-sized profile: small enough for a CPU, large enough to
    /// reach the documented tolerances. The base step size is pinned below
    /// the large-batch default because the smaller batches here carry too
    /// much gradient noise for it.
    pub fn desk(variant: Variant, dim: usize) -> Self {
        RunConfig {
            variant,
            dim,
            steps: 100,
            control_lower: f64::NEG_INFINITY,
            control_upper: f64::INFINITY,
            kernel_cap: None,
            iterations: 3_000,
            inner_steps: 2,
            adversarial_steps: 1,
            particles: 50_000,
            batch_size: 2_500,
            lr_base: Some(0.6),
            rms_smoothing: 0.99,
            rms_epsilon: 1e-8,
            test_features: 1_200,
            test_scale_step: 10.0,
            width: 104,
            depth: 6,
            fresh_noise: false,
            seed: 1,
            metrics_cadence: 50,
            cost_paths: 256,
            mean_field: MeanFieldMode::Empirical,
            metric_seed: None,
            output_dir: PathBuf::from(format!("runs/{}_d{}", variant.name(), dim)),
            checkpoint_cadence: 500,
            snapshot_cadence: 0,
        }
    }

    /// Publication-sized profile; expect hours of CPU time.
    pub fn paper(variant: Variant, dim: usize) -> Self {
        let mut config = Self::desk(variant, dim);
        config.iterations = 9_000;
        config.particles = 1_024_000;
        config.batch_size = 51_200;
        config.lr_base = None;
        config
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            outer_iterations: self.iterations,
            inner_steps: self.inner_steps,
            adversarial_steps: self.adversarial_steps,
            particles: self.particles,
            batch_size: self.batch_size,
            lr_base: self.lr_base,
            rms_smoothing: self.rms_smoothing,
            rms_epsilon: self.rms_epsilon,
            test_features: self.test_features,
            test_scale_step: self.test_scale_step,
            width: self.width,
            depth: self.depth,
            fresh_noise: self.fresh_noise,
            seed: self.seed,
        }
    }

    pub fn build_problem<R: Real>(&self) -> Result<MfgProblem<R>> {
        let mut problem = make_problem::<R>(self.variant, self.dim)?;
        problem.set_steps(self.steps)?;
        if self.control_lower.is_finite() || self.control_upper.is_finite() {
            problem.set_control_box(
                R::from_f64(self.control_lower),
                R::from_f64(self.control_upper),
            )?;
        }
        if let Some(cap) = self.kernel_cap {
            problem.set_kernel_cap(cap)?;
        }
        Ok(problem)
    }

    pub fn metric_seed(&self) -> u64 {
        self.metric_seed.unwrap_or(self.seed)
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(MfgError::Config("dim must be positive".into()));
        }
        if self.steps == 0 {
            return Err(MfgError::Config("steps must be positive".into()));
        }
        if !(self.control_lower < self.control_upper) {
            return Err(MfgError::Config(format!(
                "control bounds must satisfy lower < upper, got [{}, {}]",
                self.control_lower, self.control_upper
            )));
        }
        if self.metrics_cadence == 0 {
            return Err(MfgError::Config("metrics_cadence must be positive".into()));
        }
        if self.cost_paths == 0 {
            return Err(MfgError::Config("cost_paths must be positive".into()));
        }
        if self.mean_field == MeanFieldMode::Reference && !self.variant.is_reference_solvable() {
            return Err(MfgError::Config(format!(
                "mean_field = reference needs a closed-form reference, which {} lacks",
                self.variant
            )));
        }
        self.trainer_config().validate()
    }

    /// Serializes to the same sectioned text format `parse` reads.
    pub fn serialize(&self) -> String {
        let mut out = String::new();
        out.push_str("[problem]\n");
        out.push_str(&format!("variant = {}\n", self.variant));
        out.push_str(&format!("dim = {}\n", self.dim));
        out.push_str(&format!("steps = {}\n", self.steps));
        out.push_str(&format!("control_lower = {}\n", self.control_lower));
        out.push_str(&format!("control_upper = {}\n", self.control_upper));
        if let Some(cap) = self.kernel_cap {
            out.push_str(&format!("kernel_cap = {cap}\n"));
        }
        out.push_str("\n[trainer]\n");
        out.push_str(&format!("iterations = {}\n", self.iterations));
        out.push_str(&format!("inner_steps = {}\n", self.inner_steps));
        out.push_str(&format!("adversarial_steps = {}\n", self.adversarial_steps));
        out.push_str(&format!("particles = {}\n", self.particles));
        out.push_str(&format!("batch_size = {}\n", self.batch_size));
        if let Some(base) = self.lr_base {
            out.push_str(&format!("lr_base = {base}\n"));
        }
        out.push_str(&format!("rms_smoothing = {}\n", self.rms_smoothing));
        out.push_str(&format!("rms_epsilon = {}\n", self.rms_epsilon));
        out.push_str(&format!("test_features = {}\n", self.test_features));
        out.push_str(&format!("test_scale_step = {}\n", self.test_scale_step));
        out.push_str(&format!("width = {}\n", self.width));
        out.push_str(&format!("depth = {}\n", self.depth));
        out.push_str(&format!("fresh_noise = {}\n", self.fresh_noise));
        out.push_str(&format!("seed = {}\n", self.seed));
        out.push_str("\n[metrics]\n");
        out.push_str(&format!("cadence = {}\n", self.metrics_cadence));
        out.push_str(&format!("cost_paths = {}\n", self.cost_paths));
        out.push_str(&format!("mean_field = {}\n", self.mean_field));
        if let Some(seed) = self.metric_seed {
            out.push_str(&format!("metric_seed = {seed}\n"));
        }
        out.push_str("\n[output]\n");
        out.push_str(&format!("dir = {}\n", self.output_dir.display()));
        out.push_str(&format!("checkpoint_cadence = {}\n", self.checkpoint_cadence));
        out.push_str(&format!("snapshot_cadence = {}\n", self.snapshot_cadence));
        out
    }

    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses the sectioned text format. Unknown sections or keys and
    /// malformed values are reported with their line number.
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig> {
        let mut variant: Option<Variant> = None;
        let mut dim: Option<usize> = None;
        let mut config = RunConfig::desk(Variant::Lq1, 1);
        config.output_dir = PathBuf::new();
        let mut output_dir: Option<PathBuf> = None;

        let fail = |line: usize, message: String| MfgError::ConfigParse {
            path: origin.to_string(),
            line,
            message,
        };

        let mut section = String::new();
        for (idx, raw) in text.lines().enumerate() {
            let no = idx + 1;
            let line = match raw.split_once('#') {
                Some((head, _)) => head.trim(),
                None => raw.trim(),
            };
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| fail(no, "unterminated section header".into()))?;
                if !matches!(name, "problem" | "trainer" | "metrics" | "output") {
                    return Err(fail(no, format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| fail(no, "expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim();
            if section.is_empty() {
                return Err(fail(no, format!("key `{key}` appears before any section")));
            }

            macro_rules! set {
                ($slot:expr, $ty:ty) => {
                    $slot = value.parse::<$ty>().map_err(|_| {
                        fail(no, format!("could not read `{value}` for `{key}`"))
                    })?
                };
            }

            match (section.as_str(), key) {
                ("problem", "variant") => {
                    variant =
                        Some(value.parse::<Variant>().map_err(|e| fail(no, e.to_string()))?)
                }
                ("problem", "dim") => {
                    dim = Some(
                        value
                            .parse::<usize>()
                            .map_err(|_| fail(no, format!("could not read `{value}` for `dim`")))?,
                    )
                }
                ("problem", "steps") => set!(config.steps, usize),
                ("problem", "control_lower") => set!(config.control_lower, f64),
                ("problem", "control_upper") => set!(config.control_upper, f64),
                ("problem", "kernel_cap") => {
                    let cap = value.parse::<usize>().map_err(|_| {
                        fail(no, format!("could not read `{value}` for `kernel_cap`"))
                    })?;
                    config.kernel_cap = Some(cap);
                }
                ("trainer", "iterations") => set!(config.iterations, u64),
                ("trainer", "inner_steps") => set!(config.inner_steps, usize),
                ("trainer", "adversarial_steps") => set!(config.adversarial_steps, usize),
                ("trainer", "particles") => set!(config.particles, usize),
                ("trainer", "batch_size") => set!(config.batch_size, usize),
                ("trainer", "lr_base") => {
                    let base = value.parse::<f64>().map_err(|_| {
                        fail(no, format!("could not read `{value}` for `lr_base`"))
                    })?;
                    config.lr_base = Some(base);
                }
                ("trainer", "rms_smoothing") => set!(config.rms_smoothing, f64),
                ("trainer", "rms_epsilon") => set!(config.rms_epsilon, f64),
                ("trainer", "test_features") => set!(config.test_features, usize),
                ("trainer", "test_scale_step") => set!(config.test_scale_step, f64),
                ("trainer", "width") => set!(config.width, usize),
                ("trainer", "depth") => set!(config.depth, usize),
                ("trainer", "fresh_noise") => set!(config.fresh_noise, bool),
                ("trainer", "seed") => set!(config.seed, u64),
                ("metrics", "cadence") => set!(config.metrics_cadence, u64),
                ("metrics", "cost_paths") => set!(config.cost_paths, usize),
                ("metrics", "mean_field") => {
                    config.mean_field = value
                        .parse::<MeanFieldMode>()
                        .map_err(|e| fail(no, e.to_string()))?
                }
                ("metrics", "metric_seed") => {
                    let seed = value.parse::<u64>().map_err(|_| {
                        fail(no, format!("could not read `{value}` for `metric_seed`"))
                    })?;
                    config.metric_seed = Some(seed);
                }
                ("output", "dir") => output_dir = Some(PathBuf::from(value)),
                ("output", "checkpoint_cadence") => set!(config.checkpoint_cadence, u64),
                ("output", "snapshot_cadence") => set!(config.snapshot_cadence, u64),
                (section, key) => {
                    return Err(fail(no, format!("unknown key `{key}` in section [{section}]")))
                }
            }
        }

        config.variant = variant.ok_or_else(|| {
            MfgError::Config(format!("{origin}: missing required field problem.variant"))
        })?;
        config.dim = dim.ok_or_else(|| {
            MfgError::Config(format!("{origin}: missing required field problem.dim"))
        })?;
        config.output_dir = output_dir
            .unwrap_or_else(|| PathBuf::from(format!("runs/{}_d{}", config.variant, config.dim)));
        Ok(config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn profiles_validate() {
        for variant in Variant::ALL {
            let dim = variant.default_dim();
            RunConfig::desk(variant, dim).validate().unwrap();
            RunConfig::paper(variant, dim).validate().unwrap();
        }
    }

    #[test]
    fn serialized_profiles_parse_back_identically() {
        let config = RunConfig::desk(Variant::SystemicRisk, 1);
        let parsed = RunConfig::parse(&config.serialize(), "inline").unwrap();
        assert_eq!(config, parsed);
    }

    #[test]
    fn optional_fields_survive_the_round_trip() {
        let mut config = RunConfig::desk(Variant::Barrier, 2);
        config.kernel_cap = Some(77);
        config.lr_base = Some(0.125);
        config.metric_seed = Some(9);
        config.control_lower = -2.5;
        config.control_upper = 2.5;
        config.fresh_noise = true;
        let parsed = RunConfig::parse(&config.serialize(), "inline").unwrap();
        assert_eq!(config, parsed);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn arbitrary_settings_round_trip(
            seed in 0u64..u64::MAX / 2,
            particles in 10usize..100_000,
            smoothing in 0.5f64..0.999,
            cadence in 1u64..500,
            fresh in any::<bool>(),
        ) {
            let mut config = RunConfig::desk(Variant::Lq3, 2);
            config.seed = seed;
            config.particles = particles;
            config.batch_size = (particles / 2).max(1);
            config.rms_smoothing = smoothing;
            config.metrics_cadence = cadence;
            config.fresh_noise = fresh;
            let parsed = RunConfig::parse(&config.serialize(), "inline").unwrap();
            prop_assert_eq!(config, parsed);
        }
    }

    #[test]
    fn unknown_keys_are_reported_with_their_line() {
        let text = "[problem]\nvariant = lq1\ndim = 1\nwobble = 3\n";
        let err = RunConfig::parse(text, "test.cfg").unwrap_err();
        match err {
            MfgError::ConfigParse { line, message, .. } => {
                assert_eq!(line, 4);
                assert!(message.contains("wobble"));
            }
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn malformed_values_are_reported_with_their_line() {
        let text = "[problem]\nvariant = lq1\ndim = one\n";
        let err = RunConfig::parse(text, "test.cfg").unwrap_err();
        match err {
            MfgError::ConfigParse { line, .. } => assert_eq!(line, 3),
            other => panic!("wrong error: {other}"),
        }
    }

    #[test]
    fn missing_required_fields_are_named() {
        let err = RunConfig::parse("[problem]\ndim = 1\n", "test.cfg").unwrap_err();
        assert!(err.to_string().contains("problem.variant"));
        let err = RunConfig::parse("[problem]\nvariant = lq1\n", "test.cfg").unwrap_err();
        assert!(err.to_string().contains("problem.dim"));
    }

    #[test]
    fn comments_and_blank_lines_are_ignored() {
        let text = "# run setup\n[problem]\nvariant = lq2 # the circle variant\n\ndim = 1\n";
        let config = RunConfig::parse(text, "inline").unwrap();
        assert_eq!(config.variant, Variant::Lq2);
        assert_eq!(config.dim, 1);
    }

    #[test]
    fn reference_mean_field_requires_a_solvable_variant() {
        let mut config = RunConfig::desk(Variant::TargetTracking, 2);
        config.mean_field = MeanFieldMode::Reference;
        assert!(config.validate().is_err());
        let mut config = RunConfig::desk(Variant::Lq1, 1);
        config.mean_field = MeanFieldMode::Reference;
        config.validate().unwrap();
    }

    #[test]
    fn problems_inherit_the_config_shape() {
        let mut config = RunConfig::desk(Variant::Lq1, 3);
        config.steps = 50;
        config.control_lower = -1.0;
        config.control_upper = 1.0;
        let problem = config.build_problem::<f64>().unwrap();
        assert_eq!(problem.n_steps(), 50);
        assert_eq!(problem.dim(), 3);
        let (lower, upper) = problem.control_box();
        assert_eq!(lower, -1.0);
        assert_eq!(upper, 1.0);
    }
}
