use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::tensor::shape_err;
use super::{check_finite, glorot, Activation, NnError, Param};

/// Width-3 convolution along the participant (row) axis of each block.
///
/// Output row `i` mixes rows `i-1, i, i+1` of the same block; the block is
/// edge-padded so constant inputs produce constant outputs. The result
/// depends on row order, unlike the graph layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParticipants {
    /// Kernel taps stacked vertically: rows `[0,a)` hit the previous
    /// participant, `[a,2a)` the participant itself, `[2a,3a)` the next one.
    pub w: Param,
    pub b: Param,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct ConvCache {
    unfolded: Array2<f64>,
    out: Array2<f64>,
    block: usize,
}

pub const KERNEL: usize = 3;

fn neighbour(i: usize, tap: usize, n: usize) -> usize {
    (i + tap).saturating_sub(1).min(n - 1)
}

impl ConvParticipants {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            w: Param::new(glorot(KERNEL * inputs, outputs, KERNEL * inputs, outputs, rng)),
            b: Param::zeros(1, outputs),
            act,
        }
    }

    pub fn from_weights(w: Array2<f64>, b: Array2<f64>, act: Activation) -> Self {
        Self {
            w: Param::new(w),
            b: Param::new(b),
            act,
        }
    }

    pub fn forward(&self, x: &Array2<f64>, block: usize) -> Result<(Array2<f64>, ConvCache), NnError> {
        let a = x.ncols();
        if block == 0 || x.nrows() % block != 0 || self.w.value.nrows() != KERNEL * a {
            return Err(shape_err(
                "conv",
                format!("input {:?}, block {block}, kernel {:?}", x.dim(), self.w.value.dim()),
            ));
        }
        let mut unfolded = Array2::zeros((x.nrows(), KERNEL * a));
        for start in (0..x.nrows()).step_by(block) {
            for i in 0..block {
                for tap in 0..KERNEL {
                    let src = start + neighbour(i, tap, block);
                    unfolded
                        .slice_mut(s![start + i, tap * a..(tap + 1) * a])
                        .assign(&x.row(src));
                }
            }
        }
        let mut out = unfolded.dot(&self.w.value) + &self.b.value;
        self.act.apply_inplace(&mut out);
        check_finite(&out, "conv")?;
        Ok((
            out.clone(),
            ConvCache {
                unfolded,
                out,
                block,
            },
        ))
    }

    pub fn backward(&mut self, cache: &ConvCache, dout: &Array2<f64>) -> Array2<f64> {
        let dz = self.act.backprop(&cache.out, dout);
        self.w.grad += &cache.unfolded.t().dot(&dz);
        self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        let du = dz.dot(&self.w.value.t());
        let a = du.ncols() / KERNEL;
        let block = cache.block;
        let mut dx = Array2::zeros((du.nrows(), a));
        for start in (0..du.nrows()).step_by(block) {
            for i in 0..block {
                for tap in 0..KERNEL {
                    let src = start + neighbour(i, tap, block);
                    let g = du.slice(s![start + i, tap * a..(tap + 1) * a]);
                    dx.row_mut(src).scaled_add(1.0, &g);
                }
            }
        }
        dx
    }
}
