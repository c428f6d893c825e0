//! Order-fixed parallel reductions.
//!
//! Work is split into fixed-size chunks independent of the thread count and
//! the per-chunk partial sums are combined left to right, so results are
//! bit-identical however rayon schedules the chunks.

use rayon::prelude::*;

use crate::error::Result;

pub const CHUNK: usize = 16;

/// Loss value and its parameter gradient, accumulated in double precision.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl LossGrad {
    pub fn zeros(num_params: usize) -> Self {
        Self {
            loss: 0.0,
            grad: vec![0.0; num_params],
        }
    }

    pub fn add_scaled(&mut self, other: &LossGrad, scale: f64) {
        self.loss += scale * other.loss;
        for (g, o) in self.grad.iter_mut().zip(&other.grad) {
            *g += scale * o;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.loss *= s;
        self.grad.iter_mut().for_each(|g| *g *= s);
    }
}

/// Sums `f(item, &mut acc)` over `items` with a deterministic reduction order.
pub fn par_accumulate<T, F>(items: &[T], num_params: usize, f: F) -> Result<LossGrad>
where
    T: Sync,
    F: Fn(&T, &mut LossGrad) -> Result<()> + Sync,
{
    let partials: Vec<LossGrad> = items
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut acc = LossGrad::zeros(num_params);
            for item in chunk {
                f(item, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total = LossGrad::zeros(num_params);
    for p in &partials {
        total.add_scaled(p, 1.0);
    }
    Ok(total)
}
