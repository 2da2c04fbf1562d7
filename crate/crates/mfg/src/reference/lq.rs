//! Closed-form reference for the linear-quadratic family: the coefficient
//! ODE system behind the quadratic value ansatz, solved to high accuracy.

use crate::error::{MfgError, Result};
use crate::problem::{MfgProblem, TargetTrajectory};
use crate::reference::rk::{rk_integrate, rk_integrate_piecewise, OdeSolution};

pub(crate) const REL_TOL: f64 = 1e-8;
pub(crate) const ABS_TOL: f64 = 1e-12;
// The cubic Hermite derivative carries an O(h^3) error; this cap keeps the
// interpolated coefficient equations accurate to ~1e-8.
pub(crate) const H_MAX: f64 = 0.001;
const SHOOTING_DAMPING: f64 = 0.5;
const SHOOTING_TOL: f64 = 1e-10;
const SHOOTING_SWEEPS: usize = 100;

/// Exact value and control for a linear-quadratic variant, built from the
/// curvature `a`, the affine pair `(b, mbar)`, and the offset `gamma`.
///
/// The ansatz is `v(t, z) = a|z - mbar|^2 / 2 + b . (z - mbar) + gamma + 1/2`
/// with `u*(t, z) = -(a (z - mbar) + b) / c2`.
#[derive(Debug, Clone)]
pub struct LqReference {
    dim: usize,
    horizon: f64,
    c: [f64; 6],
    c_sigma: f64,
    target: TargetTrajectory<f64>,
    a: OdeSolution,
    bm: OdeSolution,
    gamma: OdeSolution,
    terminal_mean: Vec<f64>,
}

struct CurvePoint {
    a: f64,
    da: f64,
    b: Vec<f64>,
    db: Vec<f64>,
    mean: Vec<f64>,
    dmean: Vec<f64>,
    dgamma: f64,
    gamma: f64,
}

/// Solves the coupled coefficient system for an LQ variant in 64-bit.
///
/// `a` decouples and integrates backward from `a(T) = c5`. The `(b, mbar)`
/// pair is forward-backward coupled through `b(T) = c5 (mbar_T - z*(T))`, so
/// the terminal mean is found by damped fixed-point shooting against the
/// known initial mean; `gamma` integrates backward along the result.
pub fn solve_lq_reference(
    problem: &MfgProblem<f64>,
    initial_mean: &[f64],
) -> Result<LqReference> {
    if !problem.variant().is_linear_quadratic() {
        return Err(MfgError::Reference(format!(
            "variant {} has no linear-quadratic reference",
            problem.variant()
        )));
    }
    let dim = problem.dim();
    if initial_mean.len() != dim {
        return Err(MfgError::shape("initial mean", dim, initial_mean.len()));
    }
    let c = fetch_constants(problem)?;
    let c_sigma = problem
        .constant("c_sigma")
        .ok_or_else(|| MfgError::Reference("missing diffusion constant".into()))?;
    let horizon = problem.horizon();
    let target = TargetTrajectory::new(problem.target().kind(), dim);
    let breaks = target.discontinuities(horizon);

    let a = rk_integrate(
        |_t, y, dy| dy[0] = y[0] * y[0] / c[2] + 2.0 * c[0] * y[0] - c[3] - c[4],
        &[c[5]],
        (horizon, 0.0),
        REL_TOL,
        ABS_TOL,
        Some(H_MAX),
    )?;

    let mut zstar_t = vec![0.0; dim];
    target.eval_into(horizon, &mut zstar_t);
    let mut guess = initial_mean.to_vec();
    let mut bm = None;
    for _ in 0..SHOOTING_SWEEPS {
        let sol = integrate_bm(&c, &target, horizon, &zstar_t, &guess, &breaks)?;
        let mut state = vec![0.0; 2 * dim];
        sol.eval_into(0.0, &mut state)?;
        let mismatch: Vec<f64> = initial_mean
            .iter()
            .zip(&state[dim..])
            .map(|(&want, &got)| want - got)
            .collect();
        let worst = mismatch.iter().fold(0.0f64, |m, &d| m.max(d.abs()));
        if worst <= SHOOTING_TOL {
            bm = Some(sol);
            break;
        }
        for (g, d) in guess.iter_mut().zip(&mismatch) {
            *g += SHOOTING_DAMPING * d;
        }
    }
    let bm = bm.ok_or_else(|| {
        MfgError::Reference(format!(
            "terminal-mean shooting did not converge in {SHOOTING_SWEEPS} sweeps"
        ))
    })?;

    let gamma_t = {
        let diff_sq: f64 = zstar_t
            .iter()
            .zip(&guess)
            .map(|(&z, &m)| (z - m) * (z - m))
            .sum();
        0.5 * c[5] * diff_sq
    };
    let mut zbuf = vec![0.0; dim];
    let mut abuf = [0.0];
    let mut bmbuf = vec![0.0; 2 * dim];
    let gamma = rk_integrate_piecewise(
        |t, _y, dy| {
            target.eval_into(t, &mut zbuf);
            a.eval_into(t, &mut abuf).expect("t within the solved span");
            bm.eval_into(t, &mut bmbuf).expect("t within the solved span");
            let (b, mean) = bmbuf.split_at(dim);
            let b_sq: f64 = b.iter().map(|&v| v * v).sum();
            let track_sq: f64 = mean
                .iter()
                .zip(&zbuf)
                .map(|(&m, &z)| (m - z) * (m - z))
                .sum();
            dy[0] = -0.5 * (b_sq / c[2] + c_sigma * c_sigma * dim as f64 * abuf[0] + c[4] * track_sq);
        },
        &[gamma_t],
        (horizon, 0.0),
        REL_TOL,
        ABS_TOL,
        Some(H_MAX),
        &breaks,
    )?;

    Ok(LqReference {
        dim,
        horizon,
        c,
        c_sigma,
        target,
        a,
        bm,
        gamma,
        terminal_mean: guess,
    })
}

fn fetch_constants(problem: &MfgProblem<f64>) -> Result<[f64; 6]> {
    let mut c = [0.0; 6];
    for (i, slot) in c.iter_mut().enumerate() {
        let name = format!("c{i}");
        *slot = problem
            .constant(&name)
            .ok_or_else(|| MfgError::Reference(format!("missing constant {name}")))?;
    }
    if c[2] <= 0.0 {
        return Err(MfgError::Reference(format!(
            "control cost weight must be positive, got {}",
            c[2]
        )));
    }
    Ok(c)
}

fn integrate_bm(
    c: &[f64; 6],
    target: &TargetTrajectory<f64>,
    horizon: f64,
    zstar_t: &[f64],
    terminal_mean: &[f64],
    breaks: &[f64],
) -> Result<OdeSolution> {
    let dim = terminal_mean.len();
    let mut y0 = vec![0.0; 2 * dim];
    for j in 0..dim {
        y0[j] = c[5] * (terminal_mean[j] - zstar_t[j]);
        y0[dim + j] = terminal_mean[j];
    }
    let mut zbuf = vec![0.0; dim];
    rk_integrate_piecewise(
        |t, y, dy| {
            target.eval_into(t, &mut zbuf);
            let (b, mean) = y.split_at(dim);
            let (db, dmean) = dy.split_at_mut(dim);
            for j in 0..dim {
                db[j] = c[0] * b[j] - c[4] * (mean[j] - zbuf[j]);
                dmean[j] = -b[j] / c[2] + c[1] * (zbuf[j] - mean[j]);
            }
        },
        &y0,
        (horizon, 0.0),
        REL_TOL,
        ABS_TOL,
        Some(H_MAX),
        breaks,
    )
}

impl LqReference {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn terminal_mean(&self) -> &[f64] {
        &self.terminal_mean
    }

    /// Curvature coefficient and its time derivative.
    pub fn curvature(&self, t: f64) -> Result<(f64, f64)> {
        let mut a = [0.0];
        let mut da = [0.0];
        self.a.eval_with_derivative_into(t, &mut a, &mut da)?;
        Ok((a[0], da[0]))
    }

    /// Affine coefficient `b(t)`.
    pub fn affine_into_vec(&self, t: f64) -> Result<Vec<f64>> {
        let mut buf = vec![0.0; 2 * self.dim];
        self.bm.eval_into(t, &mut buf)?;
        buf.truncate(self.dim);
        Ok(buf)
    }

    /// Offset coefficient `gamma(t)`.
    pub fn offset(&self, t: f64) -> Result<f64> {
        let mut g = [0.0];
        self.gamma.eval_into(t, &mut g)?;
        Ok(g[0])
    }

    /// Population mean along the reference flow.
    pub fn mean_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.dim {
            return Err(MfgError::shape("reference mean", self.dim, out.len()));
        }
        let mut buf = vec![0.0; 2 * self.dim];
        self.bm.eval_into(t, &mut buf)?;
        out.copy_from_slice(&buf[self.dim..]);
        Ok(())
    }

    fn point(&self, t: f64) -> Result<CurvePoint> {
        let mut a = [0.0];
        let mut da = [0.0];
        self.a.eval_with_derivative_into(t, &mut a, &mut da)?;
        let mut bm = vec![0.0; 2 * self.dim];
        let mut dbm = vec![0.0; 2 * self.dim];
        self.bm.eval_with_derivative_into(t, &mut bm, &mut dbm)?;
        let mut g = [0.0];
        let mut dg = [0.0];
        self.gamma.eval_with_derivative_into(t, &mut g, &mut dg)?;
        let mean = bm.split_off(self.dim);
        let dmean = dbm.split_off(self.dim);
        Ok(CurvePoint {
            a: a[0],
            da: da[0],
            b: bm,
            db: dbm,
            mean,
            dmean,
            dgamma: dg[0],
            gamma: g[0],
        })
    }

    /// Exact value `v(t, z)`.
    pub fn value(&self, t: f64, z: &[f64]) -> Result<f64> {
        if z.len() != self.dim {
            return Err(MfgError::shape("reference value input", self.dim, z.len()));
        }
        let p = self.point(t)?;
        let mut quad = 0.0;
        let mut lin = 0.0;
        for ((&zj, &mj), &bj) in z.iter().zip(&p.mean).zip(&p.b) {
            let w = zj - mj;
            quad += w * w;
            lin += bj * w;
        }
        Ok(0.5 * p.a * quad + lin + p.gamma + 0.5)
    }

    /// Exact optimizing control `u*(t, z)`.
    pub fn optimal_control_into(&self, t: f64, z: &[f64], out: &mut [f64]) -> Result<()> {
        if z.len() != self.dim || out.len() != self.dim {
            return Err(MfgError::shape(
                "reference control input",
                self.dim,
                z.len().max(out.len()),
            ));
        }
        let p = self.point(t)?;
        for j in 0..self.dim {
            out[j] = -(p.a * (z[j] - p.mean[j]) + p.b[j]) / self.c[2];
        }
        Ok(())
    }

    /// Residual of the reduced dynamic-programming PDE at `(t, z)`, using the
    /// interpolants' own time derivatives. Near zero everywhere when the
    /// coefficient system is solved correctly.
    pub fn hjb_residual_at(&self, t: f64, z: &[f64]) -> Result<f64> {
        let p = self.point(t)?;
        Ok(self.residual_from_point(&p, t, z))
    }

    fn residual_from_point(&self, p: &CurvePoint, t: f64, z: &[f64]) -> f64 {
        let mut zstar = vec![0.0; self.dim];
        self.target.eval_into(t, &mut zstar);
        let mut quad = 0.0;
        let mut grad_sq = 0.0;
        let mut drift_dot = 0.0;
        let mut track_sq = 0.0;
        let mut dt_quad = 0.0;
        for j in 0..self.dim {
            let w = z[j] - p.mean[j];
            let grad = p.a * w + p.b[j];
            quad += w * w;
            grad_sq += grad * grad;
            drift_dot += (self.c[0] * (p.mean[j] - z[j]) + self.c[1] * (zstar[j] - p.mean[j])) * grad;
            let track = z[j] - zstar[j];
            track_sq += track * track;
            dt_quad += -p.a * w * p.dmean[j] + p.db[j] * w - p.b[j] * p.dmean[j];
        }
        let dt_v = 0.5 * p.da * quad + dt_quad + p.dgamma;
        dt_v - grad_sq / (2.0 * self.c[2])
            + drift_dot
            + 0.5 * self.c[3] * quad
            + 0.5 * self.c[4] * track_sq
            + 0.5 * self.c_sigma * self.c_sigma * self.dim as f64 * p.a
    }
}
