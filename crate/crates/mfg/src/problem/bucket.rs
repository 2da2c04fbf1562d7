//! Per-time-bucket statistics of the particle ensemble.
//!
//! The empirical measure enters the problem coefficients only through two
//! summaries per grid time: the bucket mean (the population average at that
//! time) and a capped subsample of bucket members used by the pairwise kernel
//! interaction. Both are rebuilt once per outer iteration and then read-only.

use ndarray::ArrayView2;

use crate::error::{MfgError, Result};
use crate::rng::{CounterRng, StreamId};
use crate::scalar::Real;

/// Subsample storage shared by all buckets: one flat buffer plus per-bucket
/// `(start row, row count)` spans. Empty buckets borrow the span of the
/// nearest populated one, so resolution copies no data.
#[derive(Debug, Clone)]
struct KernelStore<R> {
    points: Vec<R>,
    spans: Vec<(usize, usize)>,
}

/// Owned kernel subsample parts: the flat point buffer with its per-bucket
/// `(start row, row count)` spans.
pub type KernelData<R> = (Vec<R>, Vec<(usize, usize)>);

/// Borrowed view of the same parts.
pub type KernelParts<'a, R> = (&'a [R], &'a [(usize, usize)]);

/// Immutable snapshot of the ensemble grouped by time index `0..=N`.
#[derive(Debug, Clone)]
pub struct BucketStats<R> {
    dim: usize,
    counts: Vec<usize>,
    means: Vec<R>,
    kernel: Option<KernelStore<R>>,
}

/// Nearest bucket with `occupied[n] = true`, preferring earlier times on ties.
fn nearest_occupied(occupied: &[bool], n: usize) -> Option<usize> {
    if occupied[n] {
        return Some(n);
    }
    for offset in 1..occupied.len() {
        if n >= offset && occupied[n - offset] {
            return Some(n - offset);
        }
        if n + offset < occupied.len() && occupied[n + offset] {
            return Some(n + offset);
        }
    }
    None
}

impl<R: Real> BucketStats<R> {
    /// Builds statistics over buckets `0..=n_steps` from particle time
    /// indices and positions (one row per particle).
    ///
    /// `kernel_cap` enables subsample collection for problems with a kernel
    /// interaction; buckets larger than the cap are thinned by a uniform
    /// draw keyed on `(seed, iteration, bucket)`, so rebuilds re-sample.
    pub fn build(
        n_steps: usize,
        time_idx: &[u32],
        z: ArrayView2<R>,
        kernel_cap: Option<usize>,
        seed: u64,
        iteration: u64,
    ) -> Result<Self> {
        let particles = time_idx.len();
        if z.nrows() != particles {
            return Err(MfgError::shape("bucket build rows", particles, z.nrows()));
        }
        if particles == 0 {
            return Err(MfgError::Measure(
                "cannot build bucket statistics from an empty ensemble".into(),
            ));
        }
        let dim = z.ncols();
        let buckets = n_steps + 1;

        let mut counts = vec![0usize; buckets];
        let mut means = vec![R::zero(); buckets * dim];
        for (row, &idx) in time_idx.iter().enumerate() {
            let n = idx as usize;
            if n >= buckets {
                return Err(MfgError::shape("particle time index", n_steps, n));
            }
            counts[n] += 1;
            let sum = &mut means[n * dim..(n + 1) * dim];
            for (slot, &value) in sum.iter_mut().zip(z.row(row)) {
                *slot += value;
            }
        }

        let occupied: Vec<bool> = counts.iter().map(|&c| c > 0).collect();
        for n in 0..buckets {
            if counts[n] > 0 {
                let inv = R::one() / R::from_usize(counts[n]);
                for slot in &mut means[n * dim..(n + 1) * dim] {
                    *slot *= inv;
                }
            }
        }
        for n in 0..buckets {
            if counts[n] == 0 {
                let donor = nearest_occupied(&occupied, n)
                    .expect("a nonempty ensemble has at least one occupied bucket");
                let (head, tail) = means.split_at_mut(n.max(donor) * dim);
                let (dst, src) = if donor < n {
                    (&mut tail[..dim], &head[donor * dim..donor * dim + dim])
                } else {
                    (&mut head[n * dim..n * dim + dim], &tail[..dim])
                };
                dst.copy_from_slice(src);
            }
        }

        let kernel = kernel_cap
            .map(|cap| {
                if cap == 0 {
                    return Err(MfgError::Config("kernel cap must be positive".into()));
                }
                let mut members: Vec<Vec<u32>> = vec![Vec::new(); buckets];
                for (row, &idx) in time_idx.iter().enumerate() {
                    members[idx as usize].push(row as u32);
                }
                let mut points = Vec::new();
                let mut spans = vec![(0usize, 0usize); buckets];
                for (n, rows) in members.iter_mut().enumerate() {
                    if rows.is_empty() {
                        continue;
                    }
                    if rows.len() > cap {
                        let mut rng =
                            CounterRng::new(seed, StreamId::Kernel, iteration, n as u64);
                        for i in 0..cap {
                            let j = i + rng.uniform_usize(rows.len() - i);
                            rows.swap(i, j);
                        }
                        rows.truncate(cap);
                    }
                    let start = points.len() / dim;
                    for &row in rows.iter() {
                        points.extend(z.row(row as usize).iter().copied());
                    }
                    spans[n] = (start, rows.len());
                }
                for n in 0..buckets {
                    if counts[n] == 0 {
                        let donor = nearest_occupied(&occupied, n)
                            .expect("a nonempty ensemble has at least one occupied bucket");
                        spans[n] = spans[donor];
                    }
                }
                Ok(KernelStore { points, spans })
            })
            .transpose()?;

        Ok(BucketStats {
            dim,
            counts,
            means,
            kernel,
        })
    }

    /// Statistics whose means are prescribed directly (one row per bucket),
    /// used when coefficients should read an exact mean curve instead of an
    /// empirical one.
    pub fn from_means(means: Vec<R>, dim: usize) -> Result<Self> {
        if dim == 0 || means.len() % dim != 0 || means.is_empty() {
            return Err(MfgError::shape(
                "prescribed bucket means",
                format!("a positive multiple of {dim}"),
                means.len(),
            ));
        }
        let buckets = means.len() / dim;
        Ok(BucketStats {
            dim,
            counts: vec![1; buckets],
            means,
            kernel: None,
        })
    }

    /// Reassembles statistics from stored raw parts.
    pub fn from_parts(
        dim: usize,
        counts: Vec<usize>,
        means: Vec<R>,
        kernel: Option<KernelData<R>>,
    ) -> Result<Self> {
        if dim == 0 || means.len() != counts.len() * dim || counts.is_empty() {
            return Err(MfgError::shape(
                "bucket statistics parts",
                format!("{} means for {} buckets", counts.len() * dim, counts.len()),
                means.len(),
            ));
        }
        let kernel = kernel
            .map(|(points, spans)| {
                if points.len() % dim != 0 || spans.len() != counts.len() {
                    return Err(MfgError::shape(
                        "kernel subsample parts",
                        format!("{} spans", counts.len()),
                        spans.len(),
                    ));
                }
                let rows = points.len() / dim;
                for &(start, len) in &spans {
                    if start + len > rows {
                        return Err(MfgError::shape("kernel span", rows, start + len));
                    }
                }
                Ok(KernelStore { points, spans })
            })
            .transpose()?;
        Ok(BucketStats {
            dim,
            counts,
            means,
            kernel,
        })
    }

    pub fn n_buckets(&self) -> usize {
        self.counts.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Raw particle count of bucket `n` (zero for buckets that fell back).
    pub fn count(&self, n: usize) -> usize {
        self.counts[n]
    }

    /// Population mean at bucket `n`, falling back to the nearest populated
    /// bucket when `n` itself was empty at build time.
    pub fn mean(&self, n: usize) -> &[R] {
        &self.means[n * self.dim..(n + 1) * self.dim]
    }

    /// Flat subsample rows for bucket `n` (`len / dim` points).
    pub fn kernel_points(&self, n: usize) -> Result<&[R]> {
        let store = self.kernel.as_ref().ok_or_else(|| {
            MfgError::Measure("bucket statistics were built without a kernel subsample".into())
        })?;
        let (start, len) = store.spans[n];
        if len == 0 {
            return Err(MfgError::Measure(format!(
                "no kernel subsample available for bucket {n}"
            )));
        }
        Ok(&store.points[start * self.dim..(start + len) * self.dim])
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn means_flat(&self) -> &[R] {
        &self.means
    }

    pub fn kernel_parts(&self) -> Option<KernelParts<'_, R>> {
        self.kernel
            .as_ref()
            .map(|store| (store.points.as_slice(), store.spans.as_slice()))
    }
}
