//! Closed-form reference for the systemic-risk variant: the scalar Riccati
//! equation for the curvature and the quadrature for the offset.

use crate::error::{MfgError, Result};
use crate::problem::{MfgProblem, Variant};
use crate::reference::lq::{ABS_TOL, H_MAX, REL_TOL};
use crate::reference::rk::{rk_integrate, OdeSolution};

/// Exact value and control for the systemic-risk problem.
///
/// The ansatz is `v(t, z) = eta (z - mbar)^2 / 2 + gamma` with
/// `u*(t, z) = (c3 + eta)(mbar - z)`; the equilibrium mean is constant.
#[derive(Debug, Clone)]
pub struct SrReference {
    horizon: f64,
    c: [f64; 6],
    mean: f64,
    eta: OdeSolution,
    gamma: OdeSolution,
}

/// Solves the curvature Riccati equation backward from `eta(T) = c5` and the
/// offset quadrature backward from `gamma(T) = 0`, in 64-bit.
pub fn solve_sr_reference(problem: &MfgProblem<f64>, initial_mean: f64) -> Result<SrReference> {
    if problem.variant() != Variant::SystemicRisk {
        return Err(MfgError::Reference(format!(
            "variant {} has no systemic-risk reference",
            problem.variant()
        )));
    }
    let mut c = [0.0; 6];
    for (i, slot) in c.iter_mut().enumerate().skip(1) {
        *slot = problem
            .constant(&format!("c{i}"))
            .ok_or_else(|| MfgError::Reference(format!("missing constant c{i}")))?;
    }
    let horizon = problem.horizon();

    let eta = rk_integrate(
        |_t, y, dy| dy[0] = 2.0 * (c[1] + c[3]) * y[0] + y[0] * y[0] - (c[4] - c[3] * c[3]),
        &[c[5]],
        (horizon, 0.0),
        REL_TOL,
        ABS_TOL,
        Some(H_MAX),
    )?;
    let mut eta_buf = [0.0];
    let gamma = rk_integrate(
        |t, _y, dy| {
            eta.eval_into(t, &mut eta_buf).expect("t within the solved span");
            dy[0] = -0.5 * c[2] * c[2] * eta_buf[0];
        },
        &[0.0],
        (horizon, 0.0),
        REL_TOL,
        ABS_TOL,
        Some(H_MAX),
    )?;

    Ok(SrReference {
        horizon,
        c,
        mean: initial_mean,
        eta,
        gamma,
    })
}

impl SrReference {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Curvature coefficient and its time derivative.
    pub fn curvature(&self, t: f64) -> Result<(f64, f64)> {
        let mut y = [0.0];
        let mut dy = [0.0];
        self.eta.eval_with_derivative_into(t, &mut y, &mut dy)?;
        Ok((y[0], dy[0]))
    }

    pub fn offset(&self, t: f64) -> Result<f64> {
        let mut y = [0.0];
        self.gamma.eval_into(t, &mut y)?;
        Ok(y[0])
    }

    /// Exact value `v(t, z)`.
    pub fn value(&self, t: f64, z: f64) -> Result<f64> {
        let (eta, _) = self.curvature(t)?;
        let w = z - self.mean;
        Ok(0.5 * eta * w * w + self.offset(t)?)
    }

    /// Exact optimizing control `u*(t, z)`.
    pub fn optimal_control(&self, t: f64, z: f64) -> Result<f64> {
        let (eta, _) = self.curvature(t)?;
        Ok((self.c[3] + eta) * (self.mean - z))
    }
}
