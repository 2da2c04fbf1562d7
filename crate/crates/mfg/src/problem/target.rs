//! Reference trajectories tracked by the running and terminal costs.

use crate::scalar::Real;

/// Shape of the tracked trajectory `z*(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TargetKind {
    /// `z*(t) = 0`.
    Zero,
    /// Unit-normalized sine wave: `z*(t) = y(t)/|y(t)|` with
    /// `y_i(t) = sin(2πt + iπ/2)`.
    Circle,
    /// The circle scaled by `2t`, so `|z*(t)| = 2t`.
    Helix,
}

/// Time-dependent target `z*: [0, T] → R^d`.
#[derive(Debug, Clone)]
pub struct TargetTrajectory<R> {
    kind: TargetKind,
    phases: Vec<R>,
}

impl<R: Real> TargetTrajectory<R> {
    pub fn new(kind: TargetKind, d: usize) -> Self {
        let phases = (1..=d)
            .map(|i| R::from_f64(i as f64 * std::f64::consts::FRAC_PI_2))
            .collect();
        TargetTrajectory { kind, phases }
    }

    pub fn kind(&self) -> TargetKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.phases.len()
    }

    /// Writes `z*(t)` into `out`.
    ///
    /// At `d = 1` the normalized sine degenerates to a `±1` square wave; at
    /// its switching instants the unnormalized vector vanishes and the value
    /// is defined as zero.
    pub fn eval_into(&self, t: R, out: &mut [R]) {
        assert_eq!(out.len(), self.phases.len(), "target output length");
        match self.kind {
            TargetKind::Zero => out.fill(R::zero()),
            TargetKind::Circle => self.unit_wave_into(t, R::one(), out),
            TargetKind::Helix => {
                let two_t = R::from_f64(2.0) * t;
                self.unit_wave_into(t, two_t, out);
            }
        }
    }

    fn unit_wave_into(&self, t: R, radius: R, out: &mut [R]) {
        let angle = R::from_f64(std::f64::consts::TAU) * t;
        let mut norm_sq = R::zero();
        for (slot, &phase) in out.iter_mut().zip(&self.phases) {
            let y = (angle + phase).sin();
            *slot = y;
            norm_sq += y * y;
        }
        if norm_sq > R::zero() {
            let scale = radius / norm_sq.sqrt();
            for slot in out.iter_mut() {
                *slot *= scale;
            }
        }
    }

    /// Times in `(0, horizon)` where the trajectory jumps.
    ///
    /// Only the one-dimensional normalized wave is discontinuous (it changes
    /// sign where the underlying sine crosses zero). ODE solves over a window
    /// containing these points must restart at them.
    pub fn discontinuities(&self, horizon: R) -> Vec<R> {
        if self.phases.len() != 1 || self.kind == TargetKind::Zero {
            return Vec::new();
        }
        let mut times = Vec::new();
        let mut k = 0u32;
        loop {
            let t = R::from_f64(0.25 + 0.5 * f64::from(k));
            if t >= horizon {
                return times;
            }
            times.push(t);
            k += 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{CounterRng, StreamId};
    use approx::assert_abs_diff_eq;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn zero_target_vanishes_everywhere() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Zero, 3);
        let mut out = [1.0; 3];
        target.eval_into(0.37, &mut out);
        assert_eq!(out, [0.0; 3]);
    }

    #[test]
    fn circle_has_unit_norm_at_random_times() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Circle, 3);
        let mut rng = CounterRng::new(5, StreamId::TestPoints, 0, 0);
        let mut out = [0.0; 3];
        for _ in 0..100 {
            let t = rng.uniform_f64();
            target.eval_into(t, &mut out);
            assert_abs_diff_eq!(norm(&out), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn helix_norm_grows_linearly() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Helix, 4);
        let mut rng = CounterRng::new(6, StreamId::TestPoints, 0, 0);
        let mut out = [0.0; 4];
        for _ in 0..100 {
            let t = rng.uniform_f64();
            target.eval_into(t, &mut out);
            assert_abs_diff_eq!(norm(&out), 2.0 * t, epsilon = 1e-12);
        }
    }

    #[test]
    fn one_dimensional_circle_is_a_square_wave() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Circle, 1);
        let mut out = [0.0];
        target.eval_into(0.1, &mut out);
        assert_abs_diff_eq!(out[0], 1.0, epsilon = 1e-12);
        target.eval_into(0.5, &mut out);
        assert_abs_diff_eq!(out[0], -1.0, epsilon = 1e-12);
        assert_eq!(target.discontinuities(1.0), vec![0.25, 0.75]);
    }

    #[test]
    fn multidimensional_wave_is_continuous() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Circle, 2);
        assert!(target.discontinuities(1.0).is_empty());
    }

    #[test]
    fn circle_at_two_dimensions_matches_raw_sines() {
        let target = TargetTrajectory::<f64>::new(TargetKind::Circle, 2);
        let mut rng = CounterRng::new(7, StreamId::TestPoints, 0, 0);
        let mut out = [0.0; 2];
        for _ in 0..50 {
            let t = rng.uniform_f64();
            target.eval_into(t, &mut out);
            let angle = std::f64::consts::TAU * t;
            assert_abs_diff_eq!(
                out[0],
                (angle + std::f64::consts::FRAC_PI_2).sin(),
                epsilon = 1e-12
            );
            assert_abs_diff_eq!(out[1], (angle + std::f64::consts::PI).sin(), epsilon = 1e-12);
        }
    }
}
