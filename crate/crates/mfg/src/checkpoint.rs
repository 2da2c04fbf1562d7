//! Bit-stable text checkpoints: the three networks plus the bucket
//! statistics they were trained against, written as sectioned key-value
//! text whose floats round-trip exactly.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{MfgError, Result};
use crate::net::{ControlNet, TestNet, ValueNet};
use crate::nn::{Activation, Mlp};
use crate::problem::{BucketStats, MfgProblem, Variant};
use crate::scalar::Real;

const FORMAT_VERSION: u32 = 1;

/// Everything restored from a checkpoint file.
#[derive(Debug)]
pub struct Checkpoint<R: Real> {
    pub variant: Variant,
    pub dim: usize,
    pub n_steps: usize,
    pub iteration: u64,
    pub control: ControlNet<R>,
    pub value: ValueNet<R>,
    pub test: TestNet<R>,
    pub stats: BucketStats<R>,
}

impl<R: Real> Checkpoint<R> {
    /// Confirms the checkpoint belongs to the given problem setup.
    pub fn check_compatible(&self, problem: &MfgProblem<R>) -> Result<()> {
        if self.variant != problem.variant()
            || self.dim != problem.dim()
            || self.n_steps != problem.n_steps()
        {
            return Err(MfgError::Checkpoint(format!(
                "checkpoint was written for {} (d = {}, N = {}) but the run is {} (d = {}, N = {})",
                self.variant,
                self.dim,
                self.n_steps,
                problem.variant(),
                problem.dim(),
                problem.n_steps()
            )));
        }
        Ok(())
    }
}

fn push_floats<'a, R: Real + 'a>(out: &mut String, values: impl Iterator<Item = &'a R>) {
    for (i, v) in values.enumerate() {
        if i > 0 {
            out.push(' ');
        }
        write!(out, "{v}").expect("string write");
    }
    out.push('\n');
}

fn push_mlp<R: Real>(out: &mut String, net: &Mlp<R>) {
    let activation = match net.activation() {
        Activation::Relu => "relu",
        Activation::Sine => "sine",
    };
    writeln!(out, "activation = {activation}").expect("string write");
    write!(out, "sizes =").expect("string write");
    for s in net.sizes() {
        write!(out, " {s}").expect("string write");
    }
    out.push('\n');
    for (layer, (w, b)) in net.weights().iter().zip(net.biases()).enumerate() {
        write!(out, "weights{layer} = ").expect("string write");
        push_floats(out, w.iter());
        write!(out, "biases{layer} = ").expect("string write");
        push_floats(out, b.iter());
    }
}

/// Writes one checkpoint file, creating parent directories as needed.
pub fn save_checkpoint<R: Real>(
    path: &Path,
    problem: &MfgProblem<R>,
    iteration: u64,
    control: &ControlNet<R>,
    value: &ValueNet<R>,
    test: &TestNet<R>,
    stats: &BucketStats<R>,
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "[meta]").expect("string write");
    writeln!(out, "format = {FORMAT_VERSION}").expect("string write");
    writeln!(out, "scalar = {}", R::NAME).expect("string write");
    writeln!(out, "variant = {}", problem.variant()).expect("string write");
    writeln!(out, "dim = {}", problem.dim()).expect("string write");
    writeln!(out, "n_steps = {}", problem.n_steps()).expect("string write");
    writeln!(out, "iteration = {iteration}").expect("string write");

    writeln!(out, "[control]").expect("string write");
    let (lower, upper) = control.bounds();
    writeln!(out, "lower = {}", lower[0]).expect("string write");
    writeln!(out, "upper = {}", upper[0]).expect("string write");
    push_mlp(&mut out, control.inner());

    writeln!(out, "[value]").expect("string write");
    push_mlp(&mut out, value.inner());

    writeln!(out, "[test]").expect("string write");
    writeln!(out, "features = {}", test.r()).expect("string write");
    writeln!(out, "scale_c = {}", test.scale_c()).expect("string write");
    out.push_str("weight = ");
    push_floats(&mut out, test.weight().iter());
    out.push_str("bias = ");
    push_floats(&mut out, test.bias().iter());

    writeln!(out, "[buckets]").expect("string write");
    writeln!(out, "dim = {}", stats.dim()).expect("string write");
    write!(out, "counts =").expect("string write");
    for c in stats.counts() {
        write!(out, " {c}").expect("string write");
    }
    out.push('\n');
    out.push_str("means = ");
    push_floats(&mut out, stats.means_flat().iter());
    if let Some((points, spans)) = stats.kernel_parts() {
        write!(out, "kernel_spans =").expect("string write");
        for (start, len) in spans {
            write!(out, " {start} {len}").expect("string write");
        }
        out.push('\n');
        out.push_str("kernel_points = ");
        push_floats(&mut out, points.iter());
    }

    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

struct Entries {
    rows: Vec<(String, String, String)>,
}

impl Entries {
    fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut section = String::new();
        let mut rows = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    MfgError::Checkpoint(format!(
                        "{}:{}: unterminated section header",
                        path.display(),
                        idx + 1
                    ))
                })?;
                section = name.to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                MfgError::Checkpoint(format!(
                    "{}:{}: expected `key = value`",
                    path.display(),
                    idx + 1
                ))
            })?;
            rows.push((
                section.clone(),
                key.trim().to_string(),
                value.trim().to_string(),
            ));
        }
        Ok(Entries { rows })
    }

    fn get(&self, section: &str, key: &str) -> Result<&str> {
        self.rows
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
            .ok_or_else(|| {
                MfgError::Checkpoint(format!("missing `{key}` in section [{section}]"))
            })
    }

    fn maybe(&self, section: &str, key: &str) -> Option<&str> {
        self.rows
            .iter()
            .find(|(s, k, _)| s == section && k == key)
            .map(|(_, _, v)| v.as_str())
    }
}

fn parse_real<R: Real>(section: &str, key: &str, value: &str) -> Result<R> {
    R::parse_text(value).ok_or_else(|| {
        MfgError::Checkpoint(format!("[{section}] {key}: unreadable number `{value}`"))
    })
}

fn parse_real_list<R: Real>(section: &str, key: &str, value: &str) -> Result<Vec<R>> {
    value
        .split_whitespace()
        .map(|tok| parse_real(section, key, tok))
        .collect()
}

fn parse_usize_list(section: &str, key: &str, value: &str) -> Result<Vec<usize>> {
    value
        .split_whitespace()
        .map(|tok| {
            tok.parse::<usize>().map_err(|_| {
                MfgError::Checkpoint(format!("[{section}] {key}: unreadable count `{tok}`"))
            })
        })
        .collect()
}

fn load_mlp<R: Real>(entries: &Entries, section: &str) -> Result<Mlp<R>> {
    let activation = match entries.get(section, "activation")? {
        "relu" => Activation::Relu,
        "sine" => Activation::Sine,
        other => {
            return Err(MfgError::Checkpoint(format!(
                "[{section}] unknown activation `{other}`"
            )))
        }
    };
    let sizes = parse_usize_list(section, "sizes", entries.get(section, "sizes")?)?;
    if sizes.len() < 2 {
        return Err(MfgError::Checkpoint(format!(
            "[{section}] needs at least two layer sizes"
        )));
    }
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for layer in 0..sizes.len() - 1 {
        let wkey = format!("weights{layer}");
        let w = parse_real_list::<R>(section, &wkey, entries.get(section, &wkey)?)?;
        if w.len() != sizes[layer] * sizes[layer + 1] {
            return Err(MfgError::Checkpoint(format!(
                "[{section}] {wkey}: expected {} numbers, found {}",
                sizes[layer] * sizes[layer + 1],
                w.len()
            )));
        }
        weights.push(
            Array2::from_shape_vec((sizes[layer + 1], sizes[layer]), w).expect("checked length"),
        );
        let bkey = format!("biases{layer}");
        let b = parse_real_list::<R>(section, &bkey, entries.get(section, &bkey)?)?;
        if b.len() != sizes[layer + 1] {
            return Err(MfgError::Checkpoint(format!(
                "[{section}] {bkey}: expected {} numbers, found {}",
                sizes[layer + 1],
                b.len()
            )));
        }
        biases.push(Array1::from(b));
    }
    Mlp::from_parts(weights, biases, activation)
}

/// Reads a checkpoint back at the same precision it was written with.
pub fn load_checkpoint<R: Real>(path: &Path) -> Result<Checkpoint<R>> {
    let text = std::fs::read_to_string(path)?;
    let entries = Entries::parse(&text, path)?;

    let format = entries.get("meta", "format")?;
    if format != FORMAT_VERSION.to_string() {
        return Err(MfgError::Checkpoint(format!(
            "unsupported checkpoint format `{format}`"
        )));
    }
    let scalar = entries.get("meta", "scalar")?;
    if scalar != R::NAME {
        return Err(MfgError::Checkpoint(format!(
            "checkpoint stores {scalar} parameters but {} was requested",
            R::NAME
        )));
    }
    let variant: Variant = entries
        .get("meta", "variant")?
        .parse()
        .map_err(|_| MfgError::Checkpoint("unknown problem variant in checkpoint".into()))?;
    let dim = parse_usize_list("meta", "dim", entries.get("meta", "dim")?)?[0];
    let n_steps = parse_usize_list("meta", "n_steps", entries.get("meta", "n_steps")?)?[0];
    let iteration = entries
        .get("meta", "iteration")?
        .parse::<u64>()
        .map_err(|_| MfgError::Checkpoint("unreadable iteration".into()))?;

    let lower: R = parse_real("control", "lower", entries.get("control", "lower")?)?;
    let upper: R = parse_real("control", "upper", entries.get("control", "upper")?)?;
    let control = ControlNet::from_mlp(load_mlp(&entries, "control")?, lower, upper)?;
    let value = ValueNet::from_mlp(load_mlp(&entries, "value")?)?;

    let features = parse_usize_list("test", "features", entries.get("test", "features")?)?[0];
    let scale_c: R = parse_real("test", "scale_c", entries.get("test", "scale_c")?)?;
    let weight = parse_real_list::<R>("test", "weight", entries.get("test", "weight")?)?;
    if features == 0 || weight.len() % features != 0 {
        return Err(MfgError::Checkpoint(format!(
            "[test] weight: {} numbers do not fill {features} rows",
            weight.len()
        )));
    }
    let input_dim = weight.len() / features;
    let weight = Array2::from_shape_vec((features, input_dim), weight).expect("checked length");
    let bias = Array1::from(parse_real_list::<R>(
        "test",
        "bias",
        entries.get("test", "bias")?,
    )?);
    let test = TestNet::from_parts(weight, bias, scale_c)?;

    let bdim = parse_usize_list("buckets", "dim", entries.get("buckets", "dim")?)?[0];
    let counts = parse_usize_list("buckets", "counts", entries.get("buckets", "counts")?)?;
    let means = parse_real_list::<R>("buckets", "means", entries.get("buckets", "means")?)?;
    let kernel = match entries.maybe("buckets", "kernel_spans") {
        Some(raw) => {
            let flat = parse_usize_list("buckets", "kernel_spans", raw)?;
            if flat.len() % 2 != 0 {
                return Err(MfgError::Checkpoint(
                    "[buckets] kernel_spans: expected start/length pairs".into(),
                ));
            }
            let spans: Vec<(usize, usize)> =
                flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
            let points = parse_real_list::<R>(
                "buckets",
                "kernel_points",
                entries.get("buckets", "kernel_points")?,
            )?;
            Some((points, spans))
        }
        None => None,
    };
    let stats = BucketStats::from_parts(bdim, counts, means, kernel)?;

    Ok(Checkpoint {
        variant,
        dim,
        n_steps,
        iteration,
        control,
        value,
        test,
        stats,
    })
}
