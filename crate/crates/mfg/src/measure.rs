//! The particle representation of the occupation measure and its evolution:
//! a one-step random mapping that advances interior particles by an
//! Euler-Maruyama step and resets terminal particles to a fresh initial draw.

use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::error::{MfgError, Result};
use crate::net::ControlNet;
use crate::problem::{BucketStats, MfgProblem};
use crate::rng::{CounterRng, StreamId};
use crate::scalar::Real;

/// A single particle: a grid time index and a spatial position. Time is
/// stored as the index `n`, never as an accumulated float, so `t = n h`
/// holds exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSample<R: Real> {
    pub time_index: u32,
    pub z: Vec<R>,
}

/// The randomness consumed by one application of the random mapping: a
/// standard Gaussian step noise on the grid interior, a fresh initial draw
/// at the terminal index.
#[derive(Debug, Clone, Copy)]
pub enum MapNoise<'a, R: Real> {
    Step(&'a [R]),
    Reset(&'a [R]),
}

/// Applies the one-step random mapping to a single state.
pub fn random_map<R: Real>(
    problem: &MfgProblem<R>,
    stats: &BucketStats<R>,
    control: &ControlNet<R>,
    x: &StateSample<R>,
    noise: MapNoise<'_, R>,
) -> Result<StateSample<R>> {
    let d = problem.dim();
    let n_steps = problem.n_steps() as u32;
    if x.z.len() != d {
        return Err(MfgError::shape("random mapping state", d, x.z.len()));
    }
    match noise {
        MapNoise::Reset(fresh) => {
            if x.time_index != n_steps {
                return Err(MfgError::Measure(format!(
                    "reset draw supplied at interior index {}",
                    x.time_index
                )));
            }
            if fresh.len() != d {
                return Err(MfgError::shape("reset draw", d, fresh.len()));
            }
            Ok(StateSample {
                time_index: 0,
                z: fresh.to_vec(),
            })
        }
        MapNoise::Step(zeta) => {
            if x.time_index >= n_steps {
                return Err(MfgError::Measure(format!(
                    "step noise supplied at terminal index {}",
                    x.time_index
                )));
            }
            if zeta.len() != d {
                return Err(MfgError::shape("step noise", d, zeta.len()));
            }
            let n = x.time_index as usize;
            let mut input = vec![R::zero(); 1 + d];
            input[0] = problem.time(n);
            input[1..].copy_from_slice(&x.z);
            let u = control.eval_one(ndarray::aview1(&input))?;
            let mut drift = vec![R::zero(); d];
            problem.drift_z_into(n, &x.z, stats, u.as_slice().expect("owned row"), &mut drift);
            let h = problem.step();
            let root_h = h.sqrt();
            let scale = problem.diffusion_scale(&x.z);
            let z = x
                .z
                .iter()
                .zip(&drift)
                .zip(zeta)
                .map(|((&z, &b), &n)| z + b * h + scale * root_h * n)
                .collect();
            Ok(StateSample {
                time_index: x.time_index + 1,
                z,
            })
        }
    }
}

/// The fixed randomness for one outer iteration's selected particles:
/// gathered sources, Gaussian step noise for interior rows, and fresh
/// initial draws for terminal rows. Destinations are recomputed from these
/// draws whenever the control changes.
#[derive(Debug)]
pub struct TransitionDraws<R: Real> {
    n_steps: u32,
    indices: Vec<u32>,
    src_time: Vec<u32>,
    src_z: Array2<R>,
    noise: Array2<R>,
    reset_z: Array2<R>,
}

impl<R: Real> TransitionDraws<R> {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn src_time(&self) -> &[u32] {
        &self.src_time
    }

    pub fn src_z(&self) -> ArrayView2<'_, R> {
        self.src_z.view()
    }

    pub fn noise(&self) -> ArrayView2<'_, R> {
        self.noise.view()
    }

    pub fn is_reset(&self, row: usize) -> bool {
        self.src_time[row] == self.n_steps
    }

    /// Network inputs `(t, z)` for the source states, one row per draw.
    pub fn source_inputs(&self, problem: &MfgProblem<R>) -> Array2<R> {
        let d = self.src_z.ncols();
        let mut x = Array2::zeros((self.len(), 1 + d));
        for (row, &n) in self.src_time.iter().enumerate() {
            x[[row, 0]] = problem.time(n as usize);
            for j in 0..d {
                x[[row, 1 + j]] = self.src_z[[row, j]];
            }
        }
        x
    }

    /// Destination states under the given per-row controls: the
    /// Euler-Maruyama step with this draw's fixed noise on interior rows,
    /// the fixed fresh initial draw on terminal rows.
    pub fn destinations(
        &self,
        problem: &MfgProblem<R>,
        stats: &BucketStats<R>,
        u: ArrayView2<'_, R>,
    ) -> Result<(Vec<u32>, Array2<R>)> {
        let d = problem.dim();
        if u.nrows() != self.len() || u.ncols() != problem.control_dim() {
            return Err(MfgError::shape(
                "destination controls",
                format!("({}, {})", self.len(), problem.control_dim()),
                format!("({}, {})", u.nrows(), u.ncols()),
            ));
        }
        let h = problem.step();
        let root_h = h.sqrt();
        let mut dest_time = vec![0u32; self.len()];
        let mut dest_z = Array2::zeros((self.len(), d));
        let mut zbuf = vec![R::zero(); d];
        let mut drift = vec![R::zero(); d];
        let mut ubuf = vec![R::zero(); problem.control_dim()];
        for row in 0..self.len() {
            if self.is_reset(row) {
                for j in 0..d {
                    dest_z[[row, j]] = self.reset_z[[row, j]];
                }
                continue;
            }
            let n = self.src_time[row] as usize;
            for (slot, &v) in zbuf.iter_mut().zip(self.src_z.row(row)) {
                *slot = v;
            }
            for (slot, &v) in ubuf.iter_mut().zip(u.row(row)) {
                *slot = v;
            }
            problem.drift_z_into(n, &zbuf, stats, &ubuf, &mut drift);
            let scale = problem.diffusion_scale(&zbuf);
            for j in 0..d {
                dest_z[[row, j]] =
                    zbuf[j] + drift[j] * h + scale * root_h * self.noise[[row, j]];
            }
            dest_time[row] = self.src_time[row] + 1;
        }
        Ok((dest_time, dest_z))
    }
}

/// The particle ensemble carrying the empirical occupation measure
/// `(1/M) sum of point masses`. Randomness is keyed by (seed, particle,
/// iteration) through counter-based streams, so evolution is reproducible
/// independent of execution order.
#[derive(Debug, Clone)]
pub struct ParticleEnsemble<R: Real> {
    dim: usize,
    n_steps: usize,
    seed: u64,
    iteration: u64,
    time_idx: Vec<u32>,
    z: Array2<R>,
}

/// Draws the initial ensemble: each particle takes a uniform time index in
/// `{0, ..., N-1}` and a position from the variant's initial-guess law at
/// that time.
pub fn init_ensemble<R: Real>(
    problem: &MfgProblem<R>,
    particles: usize,
    seed: u64,
) -> Result<ParticleEnsemble<R>> {
    if particles == 0 {
        return Err(MfgError::Config("ensemble size must be positive".into()));
    }
    let d = problem.dim();
    let n_steps = problem.n_steps();
    let mut time_idx = vec![0u32; particles];
    let mut z = Array2::zeros((particles, d));
    let mut row = vec![R::zero(); d];
    for m in 0..particles {
        let mut rng = CounterRng::new(seed, StreamId::InitEnsemble, m as u64, 0);
        let n = rng.uniform_usize(n_steps);
        problem.guess_sample_into(&mut rng, n, &mut row);
        time_idx[m] = n as u32;
        for j in 0..d {
            z[[m, j]] = row[j];
        }
    }
    Ok(ParticleEnsemble {
        dim: d,
        n_steps,
        seed,
        iteration: 0,
        time_idx,
        z,
    })
}

impl<R: Real> ParticleEnsemble<R> {
    pub fn len(&self) -> usize {
        self.time_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time_idx.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn time_indices(&self) -> &[u32] {
        &self.time_idx
    }

    pub fn positions(&self) -> ArrayView2<'_, R> {
        self.z.view()
    }

    /// Restores an ensemble from checkpointed parts.
    pub fn from_parts(
        n_steps: usize,
        seed: u64,
        iteration: u64,
        time_idx: Vec<u32>,
        z: Array2<R>,
    ) -> Result<Self> {
        if time_idx.len() != z.nrows() || z.nrows() == 0 {
            return Err(MfgError::Measure(format!(
                "ensemble parts disagree: {} indices, {} rows",
                time_idx.len(),
                z.nrows()
            )));
        }
        if let Some(&bad) = time_idx.iter().find(|&&n| n as usize > n_steps) {
            return Err(MfgError::Measure(format!(
                "time index {bad} beyond the terminal index {n_steps}"
            )));
        }
        Ok(ParticleEnsemble {
            dim: z.ncols(),
            n_steps,
            seed,
            iteration,
            time_idx,
            z,
        })
    }

    /// Recomputes per-bucket statistics from scratch for the current
    /// iteration.
    pub fn bucket_stats(&self, problem: &MfgProblem<R>) -> Result<BucketStats<R>> {
        BucketStats::build(
            self.n_steps,
            &self.time_idx,
            self.z.view(),
            problem.kernel_cap(),
            self.seed,
            self.iteration,
        )
    }

    /// Samples two disjoint index sets of size `batch_size` uniformly
    /// without replacement.
    pub fn select_minibatches(&self, batch_size: usize) -> Result<(Vec<u32>, Vec<u32>)> {
        let m = self.len();
        if batch_size == 0 || 2 * batch_size > m {
            return Err(MfgError::Config(format!(
                "need 0 < 2 * batch_size <= M, got batch_size {batch_size} with M = {m}"
            )));
        }
        let mut rng = CounterRng::new(self.seed, StreamId::BatchSelect, self.iteration, 0);
        let mut pool: Vec<u32> = (0..m as u32).collect();
        for k in 0..2 * batch_size {
            let j = k + rng.uniform_usize(m - k);
            pool.swap(k, j);
        }
        let second = pool[batch_size..2 * batch_size].to_vec();
        pool.truncate(batch_size);
        Ok((pool, second))
    }

    /// Draws and fixes the randomness for one outer iteration's transitions
    /// at the given particle indices. `round` is zero for the shared-draw
    /// default and increments when a fresh redraw per inner step is
    /// requested.
    pub fn draw_transitions(
        &self,
        problem: &MfgProblem<R>,
        indices: &[u32],
        round: u16,
    ) -> Result<TransitionDraws<R>> {
        let d = self.dim;
        let count = indices.len();
        let mut src_time = vec![0u32; count];
        let mut src_z = Array2::zeros((count, d));
        let mut noise = Array2::zeros((count, d));
        let mut reset_z = Array2::zeros((count, d));
        let mut fresh = vec![R::zero(); d];
        let sub_key = (u64::from(round) << 48) | self.iteration;
        for (row, &m) in indices.iter().enumerate() {
            let m = m as usize;
            if m >= self.len() {
                return Err(MfgError::Measure(format!(
                    "particle index {m} out of range for M = {}",
                    self.len()
                )));
            }
            src_time[row] = self.time_idx[m];
            for j in 0..d {
                src_z[[row, j]] = self.z[[m, j]];
            }
            let mut rng = CounterRng::new(self.seed, StreamId::Transition, m as u64, sub_key);
            if self.time_idx[m] as usize == self.n_steps {
                problem.init_sample_into(&mut rng, &mut fresh);
                for j in 0..d {
                    reset_z[[row, j]] = fresh[j];
                }
            } else {
                for j in 0..d {
                    noise[[row, j]] = rng.normal();
                }
            }
        }
        Ok(TransitionDraws {
            n_steps: self.n_steps as u32,
            indices: indices.to_vec(),
            src_time,
            src_z,
            noise,
            reset_z,
        })
    }

    /// Commits destinations for the drawn particles and advances the
    /// iteration counter. Untouched particles keep their state.
    pub fn apply_transitions(
        &mut self,
        draws: &TransitionDraws<R>,
        dest_time: &[u32],
        dest_z: ArrayView2<'_, R>,
    ) -> Result<()> {
        if dest_time.len() != draws.len() || dest_z.nrows() != draws.len() {
            return Err(MfgError::shape(
                "transition commit",
                draws.len(),
                dest_time.len().max(dest_z.nrows()),
            ));
        }
        let mut seen = draws.indices.clone();
        seen.sort_unstable();
        if seen.windows(2).any(|w| w[0] == w[1]) {
            return Err(MfgError::Measure(
                "duplicate particle index in one transition commit".into(),
            ));
        }
        for (row, &m) in draws.indices.iter().enumerate() {
            let m = m as usize;
            self.time_idx[m] = dest_time[row];
            for j in 0..self.dim {
                self.z[[m, j]] = dest_z[[row, j]];
            }
        }
        self.iteration += 1;
        Ok(())
    }

    /// Writes one row per particle: the current iteration, the time index,
    /// and the position components.
    pub fn write_snapshot<W: Write>(&self, out: &mut W) -> Result<()> {
        write!(out, "iteration,time_index")?;
        for j in 1..=self.dim {
            write!(out, ",z_{j}")?;
        }
        writeln!(out)?;
        for m in 0..self.len() {
            write!(out, "{},{}", self.iteration, self.time_idx[m])?;
            for j in 0..self.dim {
                write!(out, ",{}", self.z[[m, j]])?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}
