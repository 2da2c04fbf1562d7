//! Adaptive embedded Runge-Kutta integration (order 5 with an order-4 error
//! estimate) with cubic Hermite dense output over the accepted steps.

use crate::error::{MfgError, Result};

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;
const ERROR_EXPONENT: f64 = -0.2;
const MAX_STEPS: usize = 1_000_000;

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A2: [f64; 1] = [0.2];
const A3: [f64; 2] = [3.0 / 40.0, 9.0 / 40.0];
const A4: [f64; 3] = [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0];
const A5: [f64; 4] = [
    19372.0 / 6561.0,
    -25360.0 / 2187.0,
    64448.0 / 6561.0,
    -212.0 / 729.0,
];
const A6: [f64; 5] = [
    9017.0 / 3168.0,
    -355.0 / 33.0,
    46732.0 / 5247.0,
    49.0 / 176.0,
    -5103.0 / 18656.0,
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// A dense solution: accepted nodes with their derivatives, interpolated by
/// a cubic Hermite polynomial on each interval. Nodes are stored with `t`
/// ascending regardless of integration direction.
#[derive(Debug, Clone)]
pub struct OdeSolution {
    dim: usize,
    ts: Vec<f64>,
    ys: Vec<f64>,
    fs: Vec<f64>,
}

impl OdeSolution {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn t_start(&self) -> f64 {
        self.ts[0]
    }

    pub fn t_end(&self) -> f64 {
        *self.ts.last().expect("solution has nodes")
    }

    pub fn node_times(&self) -> &[f64] {
        &self.ts
    }

    fn row(&self, i: usize) -> (&[f64], &[f64]) {
        let lo = i * self.dim;
        let hi = lo + self.dim;
        (&self.ys[lo..hi], &self.fs[lo..hi])
    }

    fn locate(&self, t: f64) -> Result<usize> {
        let n = self.ts.len();
        let span = self.t_end() - self.t_start();
        let slack = 1e-9 * span.abs().max(1.0);
        if t < self.t_start() - slack || t > self.t_end() + slack {
            return Err(MfgError::Reference(format!(
                "evaluation time {t} outside the solution span [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let p = self.ts.partition_point(|&s| s <= t);
        let mut i = p.saturating_sub(1).min(n - 2);
        while self.ts[i + 1] <= self.ts[i] && i + 2 < n {
            i += 1;
        }
        Ok(i)
    }

    /// Interpolated value at `t`.
    pub fn eval_into(&self, t: f64, out: &mut [f64]) -> Result<()> {
        self.hermite(t, out, None)
    }

    /// Interpolated value and time derivative at `t`.
    pub fn eval_with_derivative_into(
        &self,
        t: f64,
        out: &mut [f64],
        dout: &mut [f64],
    ) -> Result<()> {
        self.hermite(t, out, Some(dout))
    }

    fn hermite(&self, t: f64, out: &mut [f64], dout: Option<&mut [f64]>) -> Result<()> {
        if out.len() != self.dim {
            return Err(MfgError::shape("solution evaluation", self.dim, out.len()));
        }
        let i = self.locate(t)?;
        let (y0, f0) = self.row(i);
        let (y1, f1) = self.row(i + 1);
        let dt = self.ts[i + 1] - self.ts[i];
        let s = ((t - self.ts[i]) / dt).clamp(0.0, 1.0);
        let s2 = s * s;
        let s3 = s2 * s;
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        for j in 0..self.dim {
            out[j] = h00 * y0[j] + h01 * y1[j] + dt * (h10 * f0[j] + h11 * f1[j]);
        }
        if let Some(dout) = dout {
            if dout.len() != self.dim {
                return Err(MfgError::shape("solution derivative", self.dim, dout.len()));
            }
            let d00 = 6.0 * s2 - 6.0 * s;
            let d10 = 3.0 * s2 - 4.0 * s + 1.0;
            let d01 = -d00;
            let d11 = 3.0 * s2 - 2.0 * s;
            for j in 0..self.dim {
                dout[j] = (d00 * y0[j] + d01 * y1[j]) / dt + d10 * f0[j] + d11 * f1[j];
            }
        }
        Ok(())
    }
}

struct NodeList {
    dim: usize,
    ts: Vec<f64>,
    ys: Vec<f64>,
    fs: Vec<f64>,
}

impl NodeList {
    fn new(dim: usize) -> Self {
        NodeList {
            dim,
            ts: Vec::new(),
            ys: Vec::new(),
            fs: Vec::new(),
        }
    }

    fn push(&mut self, t: f64, y: &[f64], f: &[f64]) {
        self.ts.push(t);
        self.ys.extend_from_slice(y);
        self.fs.extend_from_slice(f);
    }

    fn into_solution(mut self, ascending: bool) -> OdeSolution {
        if !ascending {
            self.ts.reverse();
            reverse_rows(&mut self.ys, self.dim);
            reverse_rows(&mut self.fs, self.dim);
        }
        OdeSolution {
            dim: self.dim,
            ts: self.ts,
            ys: self.ys,
            fs: self.fs,
        }
    }
}

fn reverse_rows(flat: &mut [f64], dim: usize) {
    let rows = flat.len() / dim;
    for i in 0..rows / 2 {
        let j = rows - 1 - i;
        for k in 0..dim {
            flat.swap(i * dim + k, j * dim + k);
        }
    }
}

/// Integrates `dy/dt = rhs(t, y)` over `span` (backward when `t1 < t0`) with
/// local error per step at most `rel_tol * |y| + abs_tol` in the RMS sense.
/// `h_max` caps the step length, keeping the dense output correspondingly
/// fine.
pub fn rk_integrate<F>(
    rhs: F,
    y0: &[f64],
    span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
    h_max: Option<f64>,
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    rk_integrate_piecewise(rhs, y0, span, rel_tol, abs_tol, h_max, &[])
}

/// As [`rk_integrate`], restarting the integration at each interior
/// breakpoint so that jump discontinuities of the right-hand side never sit
/// inside an accepted step.
pub fn rk_integrate_piecewise<F>(
    mut rhs: F,
    y0: &[f64],
    span: (f64, f64),
    rel_tol: f64,
    abs_tol: f64,
    h_max: Option<f64>,
    breakpoints: &[f64],
) -> Result<OdeSolution>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let (t0, t1) = span;
    if !(t0.is_finite() && t1.is_finite()) || t0 == t1 {
        return Err(MfgError::Reference(format!(
            "integration span [{t0}, {t1}] must be finite with distinct endpoints"
        )));
    }
    if y0.is_empty() || y0.iter().any(|v| !v.is_finite()) {
        return Err(MfgError::Reference(
            "initial state must be nonempty and finite".into(),
        ));
    }
    if !(rel_tol > 0.0) || !(abs_tol >= 0.0) {
        return Err(MfgError::Reference(format!(
            "tolerances must satisfy rel_tol > 0 and abs_tol >= 0, got {rel_tol}, {abs_tol}"
        )));
    }
    if let Some(h) = h_max {
        if !(h > 0.0) {
            return Err(MfgError::Reference(format!("h_max must be positive, got {h}")));
        }
    }

    let forward = t1 > t0;
    let lo = t0.min(t1);
    let hi = t0.max(t1);
    let mut cuts: Vec<f64> = breakpoints
        .iter()
        .copied()
        .filter(|&b| b > lo && b < hi)
        .collect();
    cuts.sort_by(|x, y| x.partial_cmp(y).expect("finite breakpoints"));
    cuts.dedup();
    if !forward {
        cuts.reverse();
    }

    let mut nodes = NodeList::new(y0.len());
    let mut y = y0.to_vec();
    let mut t = t0;
    for stop in cuts.into_iter().chain(std::iter::once(t1)) {
        integrate_span(&mut rhs, &mut y, t, stop, rel_tol, abs_tol, h_max, &mut nodes)?;
        t = stop;
    }
    Ok(nodes.into_solution(forward))
}

#[allow(clippy::too_many_arguments)]
fn integrate_span<F>(
    rhs: &mut F,
    y: &mut [f64],
    t0: f64,
    t1: f64,
    rel_tol: f64,
    abs_tol: f64,
    h_max: Option<f64>,
    nodes: &mut NodeList,
) -> Result<()>
where
    F: FnMut(f64, &[f64], &mut [f64]),
{
    let dim = y.len();
    let span = (t1 - t0).abs();
    let direction = if t1 > t0 { 1.0 } else { -1.0 };
    let h_cap = h_max.unwrap_or(f64::INFINITY).min(span);
    let h_floor = span * 1e-14;

    let mut k: Vec<Vec<f64>> = (0..7).map(|_| vec![0.0; dim]).collect();
    let mut stage = vec![0.0; dim];
    let mut y_new = vec![0.0; dim];

    let mut t = t0;
    let mut k1 = vec![0.0; dim];
    rhs(t, y, &mut k1);
    nodes.push(t, y, &k1);

    let mut h = direction * (span * 0.01).min(h_cap);
    let mut steps = 0usize;
    while direction * (t1 - t) > 0.0 {
        steps += 1;
        if steps > MAX_STEPS {
            return Err(MfgError::Reference(format!(
                "integration exceeded {MAX_STEPS} steps at t = {t}"
            )));
        }
        if direction * (t + h) > direction * t1 {
            h = t1 - t;
        }
        if h.abs() < h_floor {
            return Err(MfgError::Reference(format!(
                "step size underflow at t = {t} (right-hand side too stiff or divergent)"
            )));
        }

        k[0].copy_from_slice(&k1);
        let tableau: [&[f64]; 6] = [&A2, &A3, &A4, &A5, &A6, &B5[..6]];
        for (s, row) in tableau.iter().enumerate() {
            for j in 0..dim {
                let mut acc = 0.0;
                for (i, &a) in row.iter().enumerate() {
                    acc += a * k[i][j];
                }
                stage[j] = y[j] + h * acc;
            }
            rhs(t + C[s + 1] * h, &stage, &mut k[s + 1]);
        }
        y_new.copy_from_slice(&stage);

        let mut err_sq = 0.0;
        let mut finite = y_new.iter().all(|v| v.is_finite());
        if finite {
            for j in 0..dim {
                let mut e = 0.0;
                for i in 0..7 {
                    e += (B5[i] - B4[i]) * k[i][j];
                }
                e *= h;
                let scale = abs_tol + rel_tol * y[j].abs().max(y_new[j].abs());
                let r = e / scale;
                err_sq += r * r;
            }
            finite = err_sq.is_finite();
        }
        let err = if finite {
            (err_sq / dim as f64).sqrt()
        } else {
            f64::INFINITY
        };

        if err <= 1.0 {
            t += h;
            y.copy_from_slice(&y_new);
            k1.copy_from_slice(&k[6]);
            nodes.push(t, y, &k1);
        }
        let factor = if err == 0.0 {
            MAX_FACTOR
        } else if err.is_infinite() {
            MIN_FACTOR
        } else {
            (SAFETY * err.powf(ERROR_EXPONENT)).clamp(MIN_FACTOR, MAX_FACTOR)
        };
        h *= factor;
        if h.abs() > h_cap {
            h = direction * h_cap;
        }
    }
    Ok(())
}
