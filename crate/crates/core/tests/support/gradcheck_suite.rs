//! Finite-difference checks shared by the gradient tests and the acceptance
//! suite. Layer checks return the worst relative error over all seeds.

use ndarray::{Array1, Array2, Array3, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use sleepnet::models::{ModelConfig, ModelKind, NodeRef, SleepModel};
use sleepnet::nn::gradcheck::{
    max_relative_error, max_relative_error_masked, numeric_gradient, numeric_gradient_smooth,
};
use sleepnet::nn::{
    bce_loss, dropout, normalize_adjacency, sigmoid, Activation, ConvParticipants, Dense, DropoutMode, GatLayer,
    GcnLayer, LossKind, Lstm,
};
use sleepnet::seed;
use sleepnet::Bundle;

pub const SEEDS: u64 = 20;
pub const LAYER_TOL: f64 = 1e-6;
pub const MODEL_TOL: f64 = 1e-4;

fn randn(rows: usize, cols: usize, rng: &mut seed::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn random_adj(n: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            if rng.gen::<f64>() < 0.4 {
                let w = rng.gen_range(0.5..2.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

/// Scalar probe `Σ c ⊙ out` with fixed random coefficients.
fn probe(out: &Array2<f64>, c: &Array2<f64>) -> f64 {
    (out * c).sum()
}

/// dx, dW and db of a dense layer under every activation.
pub fn dense_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "dense");
        for act in [Activation::Tanh, Activation::Sigmoid, Activation::Relu, Activation::Identity] {
            let mut layer = Dense::new(4, 3, act, &mut rng);
            layer.b.value = randn(1, 3, &mut rng);
            let x = randn(5, 4, &mut rng);
            let c = randn(5, 3, &mut rng);
            let (_, cache) = layer.forward(&x).unwrap();
            let dx = layer.backward(&cache, &c);
            let num_x = numeric_gradient(&mut x.clone(), |x| probe(&layer.forward(x).unwrap().0, &c));
            worst = worst.max(max_relative_error(&dx, &num_x));
            let mut p = layer.clone();
            let num_w = numeric_gradient(&mut layer.w.value.clone(), |w| {
                p.w.value = w.clone();
                probe(&p.forward(&x).unwrap().0, &c)
            });
            worst = worst.max(max_relative_error(&layer.w.grad, &num_w));
            let mut p = layer.clone();
            let num_b = numeric_gradient(&mut layer.b.value.clone(), |b| {
                p.b.value = b.clone();
                probe(&p.forward(&x).unwrap().0, &c)
            });
            worst = worst.max(max_relative_error(&layer.b.grad, &num_b));
        }
    }
    worst
}

pub fn gcn_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "gcn");
        let adjs: Vec<_> = (0..2).map(|_| normalize_adjacency(&random_adj(5, &mut rng))).collect();
        let mut layer = GcnLayer::new(4, 3, Activation::Tanh, &mut rng);
        let x = randn(10, 4, &mut rng);
        let c = randn(10, 3, &mut rng);
        let (_, cache) = layer.forward(&x, &adjs).unwrap();
        let dx = layer.backward(&cache, &adjs, &c);
        let num_x = numeric_gradient(&mut x.clone(), |x| probe(&layer.forward(x, &adjs).unwrap().0, &c));
        worst = worst.max(max_relative_error(&dx, &num_x));
        let mut p = layer.clone();
        let num_w = numeric_gradient(&mut layer.w.value.clone(), |w| {
            p.w.value = w.clone();
            probe(&p.forward(&x, &adjs).unwrap().0, &c)
        });
        worst = worst.max(max_relative_error(&layer.w.grad, &num_w));
    }
    worst
}

pub fn gat_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "gat");
        let adjs: Vec<_> = (0..2).map(|_| random_adj(5, &mut rng)).collect();
        let mut layer = GatLayer::new(4, 3, Activation::Tanh, &mut rng);
        let x = randn(10, 4, &mut rng);
        let c = randn(10, 3, &mut rng);
        let (_, cache) = layer.forward(&x, &adjs).unwrap();
        let dx = layer.backward(&cache, &adjs, &c);
        let num_x = numeric_gradient(&mut x.clone(), |x| probe(&layer.forward(x, &adjs).unwrap().0, &c));
        worst = worst.max(max_relative_error(&dx, &num_x));
        let mut p = layer.clone();
        let num_w = numeric_gradient(&mut layer.w.value.clone(), |w| {
            p.w.value = w.clone();
            probe(&p.forward(&x, &adjs).unwrap().0, &c)
        });
        worst = worst.max(max_relative_error(&layer.w.grad, &num_w));
        let mut p = layer.clone();
        let num_g = numeric_gradient(&mut layer.g.value.clone(), |g| {
            p.g.value = g.clone();
            probe(&p.forward(&x, &adjs).unwrap().0, &c)
        });
        worst = worst.max(max_relative_error(&layer.g.grad, &num_g));
    }
    worst
}

/// Input and parameter gradients through `len` unrolled steps.
pub fn lstm_error(len: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "lstm");
        let mut lstm = Lstm::new(3, 4, &mut rng);
        lstm.b.value = randn(1, 16, &mut rng) * 0.5;
        let seq: Vec<Array2<f64>> = (0..len).map(|_| randn(2, 3, &mut rng)).collect();
        let c = randn(2, 4, &mut rng);
        let (_, cache) = lstm.forward(&seq).unwrap();
        let dxs = lstm.backward(&cache, &c);
        for t in 0..len {
            let num = numeric_gradient(&mut seq[t].clone(), |xt| {
                let mut sq = seq.clone();
                sq[t] = xt.clone();
                probe(&lstm.forward(&sq).unwrap().0, &c)
            });
            worst = worst.max(max_relative_error(&dxs[t], &num));
        }
        for k in 0..3 {
            let analytic = lstm.params()[k].grad.clone();
            let mut p = lstm.clone();
            let num = numeric_gradient(&mut lstm.params()[k].value.clone(), |v| {
                p.params_mut()[k].value = v.clone();
                probe(&p.forward(&seq).unwrap().0, &c)
            });
            worst = worst.max(max_relative_error(&analytic, &num));
        }
    }
    worst
}

pub fn conv_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "conv");
        let mut conv = ConvParticipants::new(3, 2, Activation::Tanh, &mut rng);
        conv.b.value = randn(1, 2, &mut rng);
        let x = randn(10, 3, &mut rng);
        let c = randn(10, 2, &mut rng);
        let (_, cache) = conv.forward(&x, 5).unwrap();
        let dx = conv.backward(&cache, &c);
        let num_x = numeric_gradient(&mut x.clone(), |x| probe(&conv.forward(x, 5).unwrap().0, &c));
        worst = worst.max(max_relative_error(&dx, &num_x));
        let mut p = conv.clone();
        let num_w = numeric_gradient(&mut conv.w.value.clone(), |w| {
            p.w.value = w.clone();
            probe(&p.forward(&x, 5).unwrap().0, &c)
        });
        worst = worst.max(max_relative_error(&conv.w.grad, &num_w));
    }
    worst
}

/// Dropout with a frozen mask: eval mode must be the identity and the
/// backward multiplier must match finite differences.
pub fn dropout_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "dropout");
        let x = randn(6, 4, &mut rng);
        let c = randn(6, 4, &mut rng);
        let (off, none) = dropout(&x, 0.2, DropoutMode::Eval, &mut rng);
        if off != x || none.is_some() {
            return f64::INFINITY;
        }
        let (_, mask) = dropout(&x, 0.2, DropoutMode::Train, &mut rng);
        let mask = mask.expect("train mode draws a mask");
        let num = numeric_gradient(&mut x.clone(), |x| probe(&(x * &mask), &c));
        worst = worst.max(max_relative_error(&(&c * &mask), &num));
    }
    worst
}

/// Gradient of the mean BCE with respect to the logits.
pub fn bce_error() -> f64 {
    let mut worst: f64 = 0.0;
    for s in 0..SEEDS {
        let mut rng = seed::stream(s, "bce");
        let z = randn(1, 8, &mut rng);
        let y = Array1::from_shape_simple_fn(8, || f64::from(rng.gen::<bool>()));
        let mask = vec![true; 8];
        let (_, g) = bce_loss(&z.row(0).mapv(sigmoid), &y, &mask);
        let num = numeric_gradient(&mut z.clone(), |z| bce_loss(&z.row(0).mapv(sigmoid), &y, &mask).0);
        worst = worst.max(max_relative_error(&g.insert_axis(Axis(0)), &num));
    }
    worst
}

/// Worst relative error of one model variant over smooth coordinates, and
/// the number of coordinates skipped because a ReLU kink lies within one
/// step, out of the total.
pub fn model_error(kind: ModelKind, s: u64) -> (f64, usize, usize) {
    let (eta, m, l) = (5, 8, 3);
    let mut cfg = ModelConfig::new(m, eta, l);
    cfg.graph_hidden = 6;
    cfg.lstm_hidden = 5;
    cfg.head_hidden = 4;
    let mut rng = seed::stream(s, "model");
    let model = SleepModel::new(kind, cfg, s);
    let b = random_bundle(eta, m, l, &mut rng);
    let loss = |model: &SleepModel, b: &Bundle| model.loss(std::slice::from_ref(b), LossKind::Bce).unwrap();

    let mut worst: f64 = 0.0;
    let (mut skipped, mut total) = (0, 0);
    let mut tally = |a: &Array2<f64>, n: &Array2<f64>, keep: &Array2<bool>| {
        worst = worst.max(max_relative_error_masked(a, n, keep));
        skipped += keep.iter().filter(|k| !**k).count();
        total += keep.len();
    };

    let mut trained = model.clone();
    trained.zero_grad();
    trained.accumulate_gradients(&[&b], LossKind::Bce, None).unwrap();
    let analytic: Vec<Array2<f64>> = trained.params_mut().into_iter().map(|p| p.grad.clone()).collect();
    for (k, a) in analytic.iter().enumerate() {
        let mut probe_model = model.clone();
        let mut value = probe_model.params_mut()[k].value.clone();
        let (num, keep) = numeric_gradient_smooth(&mut value, |v| {
            probe_model.params_mut()[k].value = v.clone();
            loss(&probe_model, &b)
        });
        tally(a, &num, &keep);
    }

    let (dx, dseq) = model.input_gradients_of_loss(&b, LossKind::Bce).unwrap();
    let mut xb = b.clone();
    let (num, keep) = numeric_gradient_smooth(&mut b.x_day.clone(), |x| {
        xb.x_day = x.clone();
        loss(&model, &xb)
    });
    tally(&dx, &num, &keep);
    for (t, d) in dseq.iter().enumerate() {
        let mut sb = b.clone();
        let (num, keep) = numeric_gradient_smooth(&mut b.s_seq.index_axis(Axis(0), t).to_owned(), |x| {
            sb.s_seq.index_axis_mut(Axis(0), t).assign(x);
            loss(&model, &sb)
        });
        tally(d, &num, &keep);
    }
    (worst, skipped, total)
}

fn random_bundle(eta: usize, m: usize, l: usize, rng: &mut seed::Rng) -> Bundle {
    let adj = random_adj(eta, rng);
    let x_day = randn(eta, m, rng);
    let s_seq = Array3::from_shape_simple_fn((l, eta, m), || rng.sample(StandardNormal));
    let y = Array1::from_shape_simple_fn(eta, || f64::from(rng.gen::<bool>()));
    let nodes = (0..eta)
        .map(|i| NodeRef {
            cohort: "c".into(),
            participant: format!("p{i}"),
            duplicated: false,
        })
        .collect();
    Bundle::new("c".into(), 0, x_day, s_seq, adj, y, vec![true; eta], nodes)
}
