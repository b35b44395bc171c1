use ndarray::{s, Array2};
use rand::Rng;

use super::tensor::shape_err;
use super::{check_finite, glorot, Activation, NnError, Param};

/// Renormalized propagation matrix `D̃^{-1/2}(A + I)D̃^{-1/2}`, where `D̃` is
/// the weighted degree matrix of `A + I`.
pub fn normalize_adjacency(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    let mut at = a.clone();
    for i in 0..n {
        at[[i, i]] += 1.0;
    }
    let inv_sqrt: Vec<f64> = at.rows().into_iter().map(|r| 1.0 / r.sum().sqrt()).collect();
    Array2::from_shape_fn((n, n), |(i, j)| inv_sqrt[i] * at[[i, j]] * inv_sqrt[j])
}

/// `act(Â·X·W)`, applied block-wise: `x` stacks `adjs.len()` graphs of equal
/// size along the row axis and `adjs[b]` is the normalized adjacency of block `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct GcnLayer {
    pub w: Param,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct GcnCache {
    ax: Array2<f64>,
    out: Array2<f64>,
}

fn block_size(rows: usize, blocks: usize, op: &'static str) -> Result<usize, NnError> {
    if blocks == 0 || rows % blocks != 0 {
        return Err(shape_err(op, format!("{rows} rows cannot form {blocks} equal blocks")));
    }
    Ok(rows / blocks)
}

pub(crate) fn check_blocks(
    x: &Array2<f64>,
    adjs: &[Array2<f64>],
    op: &'static str,
) -> Result<usize, NnError> {
    let n = block_size(x.nrows(), adjs.len(), op)?;
    if let Some(a) = adjs.iter().find(|a| a.dim() != (n, n)) {
        return Err(shape_err(op, format!("adjacency {:?} does not match block size {n}", a.dim())));
    }
    Ok(n)
}

impl GcnLayer {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            w: Param::new(glorot(inputs, outputs, inputs, outputs, rng)),
            act,
        }
    }

    pub fn from_weights(w: Array2<f64>, act: Activation) -> Self {
        Self {
            w: Param::new(w),
            act,
        }
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        a_hat: &[Array2<f64>],
    ) -> Result<(Array2<f64>, GcnCache), NnError> {
        let n = check_blocks(x, a_hat, "gcn")?;
        if x.ncols() != self.w.value.nrows() {
            return Err(shape_err("gcn", format!("{} features vs weight {:?}", x.ncols(), self.w.value.dim())));
        }
        let mut ax = Array2::zeros(x.raw_dim());
        for (b, a) in a_hat.iter().enumerate() {
            let rows = s![b * n..(b + 1) * n, ..];
            ax.slice_mut(rows).assign(&a.dot(&x.slice(rows)));
        }
        let mut out = ax.dot(&self.w.value);
        self.act.apply_inplace(&mut out);
        check_finite(&out, "gcn")?;
        Ok((out.clone(), GcnCache { ax, out }))
    }

    pub fn backward(
        &mut self,
        cache: &GcnCache,
        a_hat: &[Array2<f64>],
        dout: &Array2<f64>,
    ) -> Array2<f64> {
        let dz = self.act.backprop(&cache.out, dout);
        self.w.grad += &cache.ax.t().dot(&dz);
        let dax = dz.dot(&self.w.value.t());
        let n = dax.nrows() / a_hat.len();
        let mut dx = Array2::zeros(dax.raw_dim());
        for (b, a) in a_hat.iter().enumerate() {
            let rows = s![b * n..(b + 1) * n, ..];
            dx.slice_mut(rows).assign(&a.t().dot(&dax.slice(rows)));
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalization_fixtures() {
        assert_eq!(normalize_adjacency(&array![[0.0]]), array![[1.0]]);
        let two = normalize_adjacency(&array![[0.0, 1.0], [1.0, 0.0]]);
        for v in two.iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
        assert_eq!(normalize_adjacency(&Array2::zeros((3, 3))), Array2::<f64>::eye(3));
    }

    #[test]
    fn identity_adjacency_is_dense_without_bias() {
        let x = array![[1.0, 2.0], [3.0, -1.0], [0.5, 0.0]];
        let w = array![[0.3, -0.2], [0.1, 0.7]];
        let layer = GcnLayer::from_weights(w.clone(), Activation::Tanh);
        let (out, _) = layer.forward(&x, &[Array2::eye(3)]).unwrap();
        let expect = x.dot(&w).mapv(f64::tanh);
        assert_eq!(out, expect);
    }
}
