use ndarray::{s, Array2, Axis, Zip};
use rand::Rng;

use super::tensor::shape_err;
use super::{check_finite, glorot, sigmoid, NnError, Param};

/// Single-layer LSTM over a batch of sequences, returning the final hidden
/// state. Gate columns are laid out `[input | forget | candidate | output]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub wx: Param,
    pub wh: Param,
    pub b: Param,
    pub hidden: usize,
}

#[derive(Debug, Clone)]
struct Step {
    x: Array2<f64>,
    h_prev: Array2<f64>,
    c_prev: Array2<f64>,
    /// Activated gates `[i | f | g | o]`.
    gates: Array2<f64>,
    tanh_c: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    steps: Vec<Step>,
}

impl Lstm {
    pub fn new<R: Rng>(inputs: usize, hidden: usize, rng: &mut R) -> Self {
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(1.0);
        Self {
            wx: Param::new(glorot(inputs, 4 * hidden, inputs, hidden, rng)),
            wh: Param::new(glorot(hidden, 4 * hidden, hidden, hidden, rng)),
            b: Param::new(b),
            hidden,
        }
    }

    pub fn from_weights(wx: Array2<f64>, wh: Array2<f64>, b: Array2<f64>) -> Self {
        let hidden = wh.nrows();
        Self {
            wx: Param::new(wx),
            wh: Param::new(wh),
            b: Param::new(b),
            hidden,
        }
    }

    /// `seq[t]` holds the step-`t` inputs of every sequence in the batch.
    pub fn forward(&self, seq: &[Array2<f64>]) -> Result<(Array2<f64>, LstmCache), NnError> {
        let hd = self.hidden;
        let Some(first) = seq.first() else {
            return Err(shape_err("lstm", "sequence length must be at least 1"));
        };
        let rows = first.nrows();
        if seq.iter().any(|x| x.dim() != (rows, self.wx.value.nrows())) {
            return Err(shape_err(
                "lstm",
                format!("steps must all be {rows}x{}", self.wx.value.nrows()),
            ));
        }
        let mut h = Array2::zeros((rows, hd));
        let mut c = Array2::zeros((rows, hd));
        let mut steps = Vec::with_capacity(seq.len());
        for x in seq {
            let mut z = x.dot(&self.wx.value) + h.dot(&self.wh.value) + &self.b.value;
            z.slice_mut(s![.., ..2 * hd]).mapv_inplace(sigmoid);
            z.slice_mut(s![.., 2 * hd..3 * hd]).mapv_inplace(f64::tanh);
            z.slice_mut(s![.., 3 * hd..]).mapv_inplace(sigmoid);
            let i = z.slice(s![.., ..hd]);
            let f = z.slice(s![.., hd..2 * hd]);
            let g = z.slice(s![.., 2 * hd..3 * hd]);
            let o = z.slice(s![.., 3 * hd..]);
            let c_new = &f * &c + &i * &g;
            let tanh_c = c_new.mapv(f64::tanh);
            let h_new = &o * &tanh_c;
            steps.push(Step {
                x: x.clone(),
                h_prev: std::mem::replace(&mut h, h_new),
                c_prev: std::mem::replace(&mut c, c_new),
                gates: z,
                tanh_c,
            });
        }
        check_finite(&h, "lstm")?;
        check_finite(&c, "lstm")?;
        Ok((h, LstmCache { steps }))
    }

    /// Full backpropagation through time. Returns input gradients per step.
    pub fn backward(&mut self, cache: &LstmCache, dh_final: &Array2<f64>) -> Vec<Array2<f64>> {
        let hd = self.hidden;
        let mut dh = dh_final.clone();
        let mut dc = Array2::<f64>::zeros(dh.raw_dim());
        let mut dxs = vec![Array2::zeros((0, 0)); cache.steps.len()];
        for (t, st) in cache.steps.iter().enumerate().rev() {
            let i = st.gates.slice(s![.., ..hd]);
            let f = st.gates.slice(s![.., hd..2 * hd]);
            let g = st.gates.slice(s![.., 2 * hd..3 * hd]);
            let o = st.gates.slice(s![.., 3 * hd..]);
            // dc += dh * o * (1 - tanh(c)^2)
            Zip::from(&mut dc)
                .and(&dh)
                .and(o)
                .and(&st.tanh_c)
                .for_each(|dc, &dh, &o, &tc| *dc += dh * o * (1.0 - tc * tc));
            let mut dz = Array2::zeros(st.gates.raw_dim());
            Zip::from(dz.slice_mut(s![.., ..hd]))
                .and(&dc)
                .and(g)
                .and(i)
                .for_each(|d, &dc, &g, &i| *d = dc * g * i * (1.0 - i));
            Zip::from(dz.slice_mut(s![.., hd..2 * hd]))
                .and(&dc)
                .and(&st.c_prev)
                .and(f)
                .for_each(|d, &dc, &cp, &f| *d = dc * cp * f * (1.0 - f));
            Zip::from(dz.slice_mut(s![.., 2 * hd..3 * hd]))
                .and(&dc)
                .and(i)
                .and(g)
                .for_each(|d, &dc, &i, &g| *d = dc * i * (1.0 - g * g));
            Zip::from(dz.slice_mut(s![.., 3 * hd..]))
                .and(&dh)
                .and(&st.tanh_c)
                .and(o)
                .for_each(|d, &dh, &tc, &o| *d = dh * tc * o * (1.0 - o));
            self.wx.grad += &st.x.t().dot(&dz);
            self.wh.grad += &st.h_prev.t().dot(&dz);
            self.b.grad += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            dxs[t] = dz.dot(&self.wx.value.t());
            dh = dz.dot(&self.wh.value.t());
            dc = &dc * &f;
        }
        dxs
    }

    pub fn params_mut(&mut self) -> [&mut Param; 3] {
        [&mut self.wx, &mut self.wh, &mut self.b]
    }

    pub fn params(&self) -> [&Param; 3] {
        [&self.wx, &self.wh, &self.b]
    }
}
