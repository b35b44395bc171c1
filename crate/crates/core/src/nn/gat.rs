use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::gcn::check_blocks;
use super::tensor::shape_err;
use super::{check_finite, glorot, Activation, NnError, Param};

/// Negative slope of the leaky-relu applied to attention logits.
pub const LEAKY_SLOPE: f64 = 0.2;

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

/// Single-head graph attention.
///
/// With `x̃ = X·W`, every node `i` scores each `j` in its closed
/// neighbourhood (`A_ij > 0` or `j = i`) by
/// `e_ij = leaky_relu(g · [x̃_i ‖ x̃_j])`, normalizes the scores with a
/// softmax over that neighbourhood, and emits `act(Σ_j α_ij x̃_j)`.
/// Non-neighbours get exactly zero attention.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayer {
    pub w: Param,
    /// Attention kernel, stored as a `1 × 2b` row: source half then target half.
    pub g: Param,
    pub act: Activation,
}

#[derive(Debug, Clone)]
pub struct GatCache {
    x: Array2<f64>,
    xt: Array2<f64>,
    alpha: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    out: Array2<f64>,
}

impl GatCache {
    pub fn attention(&self) -> &[Array2<f64>] {
        &self.alpha
    }
}

impl GatLayer {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, act: Activation, rng: &mut R) -> Self {
        Self {
            w: Param::new(glorot(inputs, outputs, inputs, outputs, rng)),
            g: Param::new(glorot(1, 2 * outputs, 2 * outputs, 1, rng)),
            act,
        }
    }

    pub fn from_weights(w: Array2<f64>, g: Array2<f64>, act: Activation) -> Self {
        Self {
            w: Param::new(w),
            g: Param::new(g),
            act,
        }
    }

    fn kernel_halves(&self) -> (Array1<f64>, Array1<f64>) {
        let b = self.w.value.ncols();
        let g = self.g.value.row(0);
        (g.slice(s![..b]).to_owned(), g.slice(s![b..]).to_owned())
    }

    pub fn forward(
        &self,
        x: &Array2<f64>,
        adjs: &[Array2<f64>],
    ) -> Result<(Array2<f64>, GatCache), NnError> {
        let n = check_blocks(x, adjs, "gat")?;
        let b = self.w.value.ncols();
        if x.ncols() != self.w.value.nrows() || self.g.value.dim() != (1, 2 * b) {
            return Err(shape_err(
                "gat",
                format!(
                    "input {:?}, weight {:?}, kernel {:?}",
                    x.dim(),
                    self.w.value.dim(),
                    self.g.value.dim()
                ),
            ));
        }
        let xt = x.dot(&self.w.value);
        let (g_src, g_dst) = self.kernel_halves();
        let s_src = xt.dot(&g_src);
        let s_dst = xt.dot(&g_dst);
        let mut h = Array2::zeros(xt.raw_dim());
        let mut alphas = Vec::with_capacity(adjs.len());
        let mut pres = Vec::with_capacity(adjs.len());
        for (blk, a) in adjs.iter().enumerate() {
            let off = blk * n;
            let mut pre = Array2::zeros((n, n));
            let mut alpha = Array2::zeros((n, n));
            for i in 0..n {
                let mut max = f64::NEG_INFINITY;
                for j in 0..n {
                    if i == j || a[[i, j]] > 0.0 {
                        let p = s_src[off + i] + s_dst[off + j];
                        pre[[i, j]] = p;
                        max = max.max(leaky(p));
                    }
                }
                let mut total = 0.0;
                for j in 0..n {
                    if i == j || a[[i, j]] > 0.0 {
                        let e = (leaky(pre[[i, j]]) - max).exp();
                        alpha[[i, j]] = e;
                        total += e;
                    }
                }
                alpha.row_mut(i).mapv_inplace(|v| v / total);
            }
            let rows = s![off..off + n, ..];
            h.slice_mut(rows).assign(&alpha.dot(&xt.slice(rows)));
            alphas.push(alpha);
            pres.push(pre);
        }
        self.act.apply_inplace(&mut h);
        check_finite(&h, "gat")?;
        Ok((
            h.clone(),
            GatCache {
                x: x.clone(),
                xt,
                alpha: alphas,
                pre: pres,
                out: h,
            },
        ))
    }

    pub fn backward(
        &mut self,
        cache: &GatCache,
        adjs: &[Array2<f64>],
        dout: &Array2<f64>,
    ) -> Array2<f64> {
        let n = cache.x.nrows() / adjs.len();
        let (g_src, g_dst) = self.kernel_halves();
        let dh = self.act.backprop(&cache.out, dout);
        let mut dxt = Array2::zeros(cache.xt.raw_dim());
        let mut ds_src = Array1::zeros(cache.xt.nrows());
        let mut ds_dst = Array1::zeros(cache.xt.nrows());
        for (blk, a) in adjs.iter().enumerate() {
            let off = blk * n;
            let rows = s![off..off + n, ..];
            let alpha = &cache.alpha[blk];
            let pre = &cache.pre[blk];
            let dh_b = dh.slice(rows);
            let xt_b = cache.xt.slice(rows);
            // aggregation
            dxt.slice_mut(rows).scaled_add(1.0, &alpha.t().dot(&dh_b));
            let dalpha = dh_b.dot(&xt_b.t());
            for i in 0..n {
                let mut inner = 0.0;
                for j in 0..n {
                    inner += alpha[[i, j]] * dalpha[[i, j]];
                }
                for j in 0..n {
                    if i == j || a[[i, j]] > 0.0 {
                        let de = alpha[[i, j]] * (dalpha[[i, j]] - inner);
                        let dp = if pre[[i, j]] > 0.0 { de } else { LEAKY_SLOPE * de };
                        ds_src[off + i] += dp;
                        ds_dst[off + j] += dp;
                    }
                }
            }
        }
        let b = g_src.len();
        let dg_src = cache.xt.t().dot(&ds_src);
        let dg_dst = cache.xt.t().dot(&ds_dst);
        {
            let mut g = self.g.grad.row_mut(0);
            g.slice_mut(s![..b]).scaled_add(1.0, &dg_src);
            g.slice_mut(s![b..]).scaled_add(1.0, &dg_dst);
        }
        dxt += &ds_src.view().insert_axis(Axis(1)).dot(&g_src.view().insert_axis(Axis(0)));
        dxt += &ds_dst.view().insert_axis(Axis(1)).dot(&g_dst.view().insert_axis(Axis(0)));
        self.w.grad += &cache.x.t().dot(&dxt);
        dxt.dot(&self.w.value.t())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn equal_logits_split_evenly() {
        let x = array![[1.0, 2.0], [1.0, 2.0]];
        let a = array![[0.0, 1.0], [1.0, 0.0]];
        let layer = GatLayer::from_weights(
            array![[0.5, -0.1], [0.2, 0.3]],
            array![[0.4, -0.7, 0.9, 0.1]],
            Activation::Identity,
        );
        let (_, cache) = layer.forward(&x, &[a]).unwrap();
        for v in cache.attention()[0].iter() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn isolated_node_attends_to_itself() {
        let x = array![[1.0, 2.0], [-3.0, 0.5], [0.2, 0.2]];
        let a = array![[0.0, 2.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 0.0]];
        let layer = GatLayer::from_weights(Array2::eye(2), array![[1.0, 1.0, 1.0, 1.0]], Activation::Identity);
        let (out, cache) = layer.forward(&x, &[a]).unwrap();
        let alpha = &cache.attention()[0];
        assert_eq!(alpha[[2, 2]], 1.0);
        assert_eq!(alpha[[2, 0]], 0.0);
        assert_eq!(alpha[[0, 2]], 0.0);
        assert_eq!(out.row(2), x.row(2));
    }
}
