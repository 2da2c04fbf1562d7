//! Ground-truth solutions for the variants that admit one: an adaptive
//! Runge-Kutta integrator and the coefficient ODE systems behind the
//! quadratic value ansatz, wrapped in a single evaluator for benchmarking.

mod lq;
mod rk;
mod sr;

use std::io::Write;

use crate::error::{MfgError, Result};
use crate::problem::{MfgProblem, Variant};

pub use lq::{solve_lq_reference, LqReference};
pub use rk::{rk_integrate, rk_integrate_piecewise, OdeSolution};
pub use sr::{solve_sr_reference, SrReference};

/// Exact `v` and `u*` for whichever reference family fits the problem.
#[derive(Debug, Clone)]
pub enum ReferenceEvaluator {
    Lq(LqReference),
    Sr(SrReference),
}

impl ReferenceEvaluator {
    /// Solves the reference system for the problem's variant, taking the
    /// initial population mean from the variant's initial law.
    pub fn for_problem(problem: &MfgProblem<f64>) -> Result<Self> {
        let mean = problem.initial_mean();
        match problem.variant() {
            Variant::Lq1 | Variant::Lq2 | Variant::Lq3 => {
                Ok(ReferenceEvaluator::Lq(solve_lq_reference(problem, &mean)?))
            }
            Variant::SystemicRisk => Ok(ReferenceEvaluator::Sr(solve_sr_reference(
                problem, mean[0],
            )?)),
            other => Err(MfgError::Reference(format!(
                "variant {other} has no closed-form reference"
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ReferenceEvaluator::Lq(r) => r.dim(),
            ReferenceEvaluator::Sr(_) => 1,
        }
    }

    pub fn horizon(&self) -> f64 {
        match self {
            ReferenceEvaluator::Lq(r) => r.horizon(),
            ReferenceEvaluator::Sr(r) => r.horizon(),
        }
    }

    /// Exact value `v(t, z)`.
    pub fn value(&self, t: f64, z: &[f64]) -> Result<f64> {
        match self {
            ReferenceEvaluator::Lq(r) => r.value(t, z),
            ReferenceEvaluator::Sr(r) => {
                if z.len() != 1 {
                    return Err(MfgError::shape("reference value input", 1, z.len()));
                }
                r.value(t, z[0])
            }
        }
    }

    /// Exact optimizing control `u*(t, z)`.
    pub fn optimal_control_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        match self {
            ReferenceEvaluator::Lq(r) => r.optimal_control_into(t, z, out),
            ReferenceEvaluator::Sr(r) => {
                if z.len() != 1 || out.len() != 1 {
                    return Err(MfgError::shape(
                        "reference control input",
                        1,
                        z.len().max(out.len()),
                    ));
                }
                out[0] = r.optimal_control(t, z[0])?;
                Ok(())
            }
        }
    }

    /// Population mean of the reference flow at `t`.
    pub fn mean_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        match self {
            ReferenceEvaluator::Lq(r) => r.mean_into(t, out),
            ReferenceEvaluator::Sr(r) => {
                if out.len() != 1 {
                    return Err(MfgError::shape("reference mean", 1, out.len()));
                }
                out[0] = r.mean();
                Ok(())
            }
        }
    }

    /// Writes the coefficient table sampled on a uniform grid of `rows`
    /// times spanning `[0, T]`.
    pub fn write_table<W: Write>(&self, rows: usize, out: &mut W) -> Result<()> {
        if rows < 2 {
            return Err(MfgError::Reference(
                "a coefficient table needs at least two rows".into(),
            ));
        }
        let horizon = self.horizon();
        match self {
            ReferenceEvaluator::Lq(r) => {
                let d = r.dim();
                write!(out, "t,a")?;
                for j in 1..=d {
                    write!(out, ",b_{j}")?;
                }
                for j in 1..=d {
                    write!(out, ",mbar_{j}")?;
                }
                writeln!(out, ",gamma")?;
                let mut mean = vec![0.0; d];
                for i in 0..rows {
                    let t = horizon * i as f64 / (rows - 1) as f64;
                    let (a, _) = r.curvature(t)?;
                    let b = r.affine_into_vec(t)?;
                    r.mean_into(t, &mut mean)?;
                    let gamma = r.offset(t)?;
                    write!(out, "{t},{a}")?;
                    for v in &b {
                        write!(out, ",{v}")?;
                    }
                    for v in &mean {
                        write!(out, ",{v}")?;
                    }
                    writeln!(out, ",{gamma}")?;
                }
            }
            ReferenceEvaluator::Sr(r) => {
                writeln!(out, "t,eta,mbar,gamma")?;
                for i in 0..rows {
                    let t = horizon * i as f64 / (rows - 1) as f64;
                    let (eta, _) = r.curvature(t)?;
                    writeln!(out, "{t},{eta},{},{}", r.mean(), r.offset(t)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Maximum absolute residual of the reduced dynamic-programming PDE over the
/// given `(t, z)` samples. Only defined for the linear-quadratic family.
pub fn hjb_residual_check(evaluator: &ReferenceEvaluator, samples: &[(f64, Vec<f64>)]) -> Result<f64> {
    let lq = match evaluator {
        ReferenceEvaluator::Lq(r) => r,
        ReferenceEvaluator::Sr(_) => {
            return Err(MfgError::Reference(
                "the residual check applies to the linear-quadratic family".into(),
            ))
        }
    };
    let mut worst = 0.0f64;
    for (t, z) in samples {
        worst = worst.max(lq.hjb_residual_at(*t, z)?.abs());
    }
    Ok(worst)
}
