//! Dense-network evaluation, reverse-mode gradients, and the RMSProp update.
//!
//! Everything here is fixed-topology: the solver needs exactly one network
//! shape per role, so a general computation graph would be dead weight. The
//! batch is the unit of work; forward and backward passes are expressed as
//! matrix products over whole mini-batches.

mod mlp;
mod rmsprop;

pub use mlp::{Activation, ForwardTrace, GradBuffer, Mlp};
pub use rmsprop::RmsProp;

use crate::scalar::Real;
use ndarray::{Array2, ArrayView2, Axis};

/// Row-block size for batch-parallel matrix products.
///
/// Fixed independently of the thread count, so the set of partial products
/// (and therefore every floating-point result) is identical no matter how
/// many workers the pool has.
pub(crate) const ROW_CHUNK: usize = 1024;

/// `a.dot(&b)` computed in fixed row blocks, in parallel when there are
/// several blocks.
pub(crate) fn matmul<R: Real>(a: ArrayView2<'_, R>, b: ArrayView2<'_, R>) -> Array2<R> {
    use rayon::prelude::*;

    if a.nrows() <= ROW_CHUNK {
        return a.dot(&b);
    }
    let blocks: Vec<ArrayView2<'_, R>> = a.axis_chunks_iter(Axis(0), ROW_CHUNK).collect();
    let products: Vec<Array2<R>> = blocks.par_iter().map(|block| block.dot(&b)).collect();
    let mut out = Array2::zeros((a.nrows(), b.ncols()));
    let mut row = 0;
    for product in products {
        let rows = product.nrows();
        out.slice_mut(ndarray::s![row..row + rows, ..]).assign(&product);
        row += rows;
    }
    out
}
