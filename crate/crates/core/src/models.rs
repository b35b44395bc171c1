//! The four model variants over `(X_day, S_seq, A)` bundles.
//!
//! Every variant shares the same LSTM branch and dense head:
//!
//! ```text
//!   X_day ──► graph branch (GAT | GCN | conv | none) ──► L2-norm ─┐
//!                                                                  ├─ concat ─► dense(relu) ─► dropout ─► dense ─► sigmoid
//!   S_seq ──► LSTM (final hidden state) ────────────────► L2-norm ─┘
//! ```
//!
//! `lstm_only` feeds zeros in place of the graph embedding so that the head
//! has the same shape in all variants.

use std::fmt;
use std::str::FromStr;

use ndarray::{concatenate, s, Array1, Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::commgraph::ParticipantId;
use crate::nn::{
    dropout, l2_normalize_rows, l2_normalize_rows_backward, normalize_adjacency, sigmoid,
    Activation, Adam, ConvCache, ConvParticipants, Dense, DenseCache, DropoutMode, EarlyStopper,
    GatCache, GatLayer, GcnCache, GcnLayer, Lstm, LstmCache, NnError, Param, ParamSet,
    TrainConfig,
};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    GanLstm,
    GcnLstm,
    ConvLstm,
    LstmOnly,
}

impl ModelKind {
    pub const ALL: [ModelKind; 4] = [
        ModelKind::GanLstm,
        ModelKind::GcnLstm,
        ModelKind::ConvLstm,
        ModelKind::LstmOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::GanLstm => "gan_lstm",
            ModelKind::GcnLstm => "gcn_lstm",
            ModelKind::ConvLstm => "conv_lstm",
            ModelKind::LstmOnly => "lstm_only",
        }
    }

    pub fn has_graph_branch(self) -> bool {
        self != ModelKind::LstmOnly
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown model kind {s:?}"))
    }
}

/// Provenance of one bundle row.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeRef {
    pub cohort: String,
    pub participant: ParticipantId,
    pub duplicated: bool,
}

/// One training sample: day-`k` features for `eta` nodes, their past-`L`-day
/// sequences, the `eta × eta` adjacency, and next-day labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub cohort: String,
    pub day: usize,
    pub x_day: Array2<f64>,
    /// Time-major sequence tensor `[L, eta, m]`; the last step is day `k`.
    pub s_seq: Array3<f64>,
    /// Symmetric raw-weight adjacency.
    pub adj: Array2<f64>,
    pub a_hat: Array2<f64>,
    pub y_next: Array1<f64>,
    /// Rows that count towards loss and accuracy: not a repetition copy and
    /// with a known next-day label.
    pub mask: Vec<bool>,
    pub nodes: Vec<NodeRef>,
}

impl Bundle {
    pub fn new(
        cohort: String,
        day: usize,
        x_day: Array2<f64>,
        s_seq: Array3<f64>,
        adj: Array2<f64>,
        y_next: Array1<f64>,
        mask: Vec<bool>,
        nodes: Vec<NodeRef>,
    ) -> Self {
        let a_hat = normalize_adjacency(&adj);
        Self {
            cohort,
            day,
            x_day,
            s_seq,
            adj,
            a_hat,
            y_next,
            mask,
            nodes,
        }
    }

    pub fn eta(&self) -> usize {
        self.x_day.nrows()
    }

    pub fn features(&self) -> usize {
        self.x_day.ncols()
    }

    pub fn seq_len(&self) -> usize {
        self.s_seq.len_of(Axis(0))
    }

    pub fn scored(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Stable content digest over every numeric field and the provenance.
    pub fn digest(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        h.update(self.cohort.as_bytes());
        h.update((self.day as u64).to_le_bytes());
        let values = self
            .x_day
            .iter()
            .chain(self.adj.iter())
            .chain(self.y_next.iter())
            .chain(self.s_seq.iter());
        for v in values {
            h.update(v.to_bits().to_le_bytes());
        }
        for (m, n) in self.mask.iter().zip(&self.nodes) {
            h.update([*m as u8, n.duplicated as u8]);
            h.update(n.participant.as_bytes());
        }
        h.finalize().into()
    }

    /// Reorder nodes: new row `r` is old row `perm[r]`.
    pub fn permuted(&self, perm: &[usize]) -> Bundle {
        let n = self.eta();
        let x_day = Array2::from_shape_fn(self.x_day.dim(), |(r, c)| self.x_day[[perm[r], c]]);
        let s_seq = Array3::from_shape_fn(self.s_seq.dim(), |(t, r, c)| self.s_seq[[t, perm[r], c]]);
        let adj = Array2::from_shape_fn((n, n), |(a, b)| self.adj[[perm[a], perm[b]]]);
        Bundle::new(
            self.cohort.clone(),
            self.day,
            x_day,
            s_seq,
            adj,
            Array1::from_shape_fn(n, |r| self.y_next[perm[r]]),
            perm.iter().map(|&p| self.mask[p]).collect(),
            perm.iter().map(|&p| self.nodes[p].clone()).collect(),
        )
    }
}

/// Layer widths and structural choices shared by all variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub features: usize,
    pub eta: usize,
    pub seq_len: usize,
    pub graph_hidden: usize,
    pub graph_layers: usize,
    pub lstm_hidden: usize,
    pub head_hidden: usize,
    pub dropout: f64,
}

impl ModelConfig {
    pub fn new(features: usize, eta: usize, seq_len: usize) -> Self {
        Self {
            features,
            eta,
            seq_len,
            graph_hidden: 32,
            graph_layers: 2,
            lstm_hidden: 32,
            head_hidden: 16,
            dropout: 0.2,
        }
    }
}

/// Which branch, if any, is switched off.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    None,
    /// Graph embedding replaced by zeros.
    NoGraph,
    /// LSTM embedding replaced by zeros.
    NoTemporal,
}

#[derive(Debug, Clone, PartialEq)]
enum GraphBranch {
    None,
    Gat(Vec<GatLayer>),
    Gcn(Vec<GcnLayer>),
    Conv(Vec<ConvParticipants>),
}

enum GraphCache {
    Gat(Vec<GatCache>),
    Gcn(Vec<GcnCache>),
    Conv(Vec<ConvCache>),
}

struct ForwardCache {
    graph: Option<(GraphCache, Array2<f64>, Array1<f64>)>,
    lstm: Option<(LstmCache, Array2<f64>, Array1<f64>)>,
    head1: DenseCache,
    drop_mask: Option<Array2<f64>>,
    head2: DenseCache,
    probs: Array1<f64>,
}

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("bundle has eta={found}, model expects {expected}")]
    EtaMismatch { expected: usize, found: usize },
    #[error("bundle has {found} features, model expects {expected}")]
    FeatureMismatch { expected: usize, found: usize },
    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("model manifest: {0}")]
    Manifest(String),
}

/// A trainable variant.
#[derive(Debug, Clone, PartialEq)]
pub struct SleepModel {
    pub kind: ModelKind,
    pub cfg: ModelConfig,
    pub ablation: Ablation,
    graph: GraphBranch,
    lstm: Lstm,
    head1: Dense,
    head2: Dense,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    kind: ModelKind,
    config: ModelConfig,
    ablation: Ablation,
}

/// Per-epoch losses and the epoch whose parameters were kept.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl History {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }
}

const EVAL_CHUNK: usize = 64;

impl SleepModel {
    /// Initialise a variant. Each component draws from its own named seed
    /// stream, so the LSTM branch and head are identical across variants
    /// built with the same seed.
    pub fn new(kind: ModelKind, cfg: ModelConfig, seed: u64) -> Self {
        let mut g_rng = seed::stream(seed, "init.graph");
        let mut l_rng = seed::stream(seed, "init.lstm");
        let mut h_rng = seed::stream(seed, "init.head");
        let (m, gh) = (cfg.features, cfg.graph_hidden);
        let dims = |k: usize| if k == 0 { m } else { gh };
        let graph = match kind {
            ModelKind::GanLstm => GraphBranch::Gat(
                (0..cfg.graph_layers)
                    .map(|k| GatLayer::new(dims(k), gh, Activation::Relu, &mut g_rng))
                    .collect(),
            ),
            ModelKind::GcnLstm => GraphBranch::Gcn(
                (0..cfg.graph_layers)
                    .map(|k| GcnLayer::new(dims(k), gh, Activation::Relu, &mut g_rng))
                    .collect(),
            ),
            ModelKind::ConvLstm => GraphBranch::Conv(
                (0..cfg.graph_layers)
                    .map(|k| ConvParticipants::new(dims(k), gh, Activation::Relu, &mut g_rng))
                    .collect(),
            ),
            ModelKind::LstmOnly => GraphBranch::None,
        };
        let lstm = Lstm::new(m, cfg.lstm_hidden, &mut l_rng);
        let head1 = Dense::new(gh + cfg.lstm_hidden, cfg.head_hidden, Activation::Relu, &mut h_rng);
        let head2 = Dense::new(cfg.head_hidden, 1, Activation::Identity, &mut h_rng);
        Self {
            kind,
            cfg,
            ablation: Ablation::None,
            graph,
            lstm,
            head1,
            head2,
        }
    }

    pub fn with_ablation(mut self, ablation: Ablation) -> Self {
        self.ablation = ablation;
        self
    }

    fn uses_graph(&self) -> bool {
        !matches!(self.graph, GraphBranch::None) && self.ablation != Ablation::NoGraph
    }

    fn uses_lstm(&self) -> bool {
        self.ablation != Ablation::NoTemporal
    }

    fn check(&self, b: &Bundle) -> Result<(), ModelError> {
        if b.eta() != self.cfg.eta {
            return Err(ModelError::EtaMismatch {
                expected: self.cfg.eta,
                found: b.eta(),
            });
        }
        if b.features() != self.cfg.features {
            return Err(ModelError::FeatureMismatch {
                expected: self.cfg.features,
                found: b.features(),
            });
        }
        Ok(())
    }

    fn forward_batch(
        &self,
        bundles: &[&Bundle],
        mode: DropoutMode,
        rng: &mut Rng,
    ) -> Result<ForwardCache, ModelError> {
        for b in bundles {
            self.check(b)?;
        }
        let rows = bundles.len() * self.cfg.eta;
        let x = concatenate(Axis(0), &bundles.iter().map(|b| b.x_day.view()).collect::<Vec<_>>())
            .map_err(|e| NnError::Shape {
                op: "stack",
                detail: e.to_string(),
            })?;

        let graph = if self.uses_graph() {
            let mut h = x.clone();
            let cache = match &self.graph {
                GraphBranch::Gat(layers) => {
                    let adjs: Vec<Array2<f64>> = bundles.iter().map(|b| b.adj.clone()).collect();
                    let mut caches = Vec::new();
                    for l in layers {
                        let (o, c) = l.forward(&h, &adjs)?;
                        h = o;
                        caches.push(c);
                    }
                    GraphCache::Gat(caches)
                }
                GraphBranch::Gcn(layers) => {
                    let adjs: Vec<Array2<f64>> = bundles.iter().map(|b| b.a_hat.clone()).collect();
                    let mut caches = Vec::new();
                    for l in layers {
                        let (o, c) = l.forward(&h, &adjs)?;
                        h = o;
                        caches.push(c);
                    }
                    GraphCache::Gcn(caches)
                }
                GraphBranch::Conv(layers) => {
                    let mut caches = Vec::new();
                    for l in layers {
                        let (o, c) = l.forward(&h, self.cfg.eta)?;
                        h = o;
                        caches.push(c);
                    }
                    GraphCache::Conv(caches)
                }
                GraphBranch::None => unreachable!("uses_graph checked"),
            };
            let (g, norms) = l2_normalize_rows(&h);
            Some((cache, g, norms))
        } else {
            None
        };

        let lstm = if self.uses_lstm() {
            let steps: Vec<Array2<f64>> = (0..self.cfg.seq_len)
                .map(|t| {
                    concatenate(
                        Axis(0),
                        &bundles
                            .iter()
                            .map(|b| b.s_seq.index_axis(Axis(0), t))
                            .collect::<Vec<_>>(),
                    )
                })
                .collect::<Result<_, _>>()
                .map_err(|e| NnError::Shape {
                    op: "stack",
                    detail: e.to_string(),
                })?;
            let (h, cache) = self.lstm.forward(&steps)?;
            let (e, norms) = l2_normalize_rows(&h);
            Some((cache, e, norms))
        } else {
            None
        };

        let g_emb = match &graph {
            Some((_, g, _)) => g.clone(),
            None => Array2::zeros((rows, self.cfg.graph_hidden)),
        };
        let t_emb = match &lstm {
            Some((_, e, _)) => e.clone(),
            None => Array2::zeros((rows, self.cfg.lstm_hidden)),
        };
        let joint = concatenate![Axis(1), g_emb, t_emb];
        let (h1, head1) = self.head1.forward(&joint)?;
        let (h1d, drop_mask) = dropout(&h1, self.cfg.dropout, mode, rng);
        let (logits, head2) = self.head2.forward(&h1d)?;
        let probs = logits.column(0).mapv(sigmoid);
        Ok(ForwardCache {
            graph,
            lstm,
            head1,
            drop_mask,
            head2,
            probs,
        })
    }

    /// Backward pass from logit gradients. Returns the gradients with respect
    /// to the stacked day features and to each sequence step.
    fn backward_batch(
        &mut self,
        bundles: &[&Bundle],
        cache: &ForwardCache,
        dlogits: &Array1<f64>,
    ) -> (Array2<f64>, Vec<Array2<f64>>) {
        let gh = self.cfg.graph_hidden;
        let rows = dlogits.len();
        let d2 = dlogits.view().insert_axis(Axis(1)).to_owned();
        let mut dh1 = self.head2.backward(&cache.head2, &d2);
        if let Some(mask) = &cache.drop_mask {
            dh1 *= mask;
        }
        let djoint = self.head1.backward(&cache.head1, &dh1);
        let mut dx = Array2::zeros((rows, self.cfg.features));
        let mut dseq = vec![Array2::zeros((rows, self.cfg.features)); self.cfg.seq_len];

        if let Some((gcache, g, norms)) = &cache.graph {
            let dg = djoint.slice(s![.., ..gh]).to_owned();
            let mut d = l2_normalize_rows_backward(g, norms, &dg);
            match (&mut self.graph, gcache) {
                (GraphBranch::Gat(layers), GraphCache::Gat(caches)) => {
                    let adjs: Vec<Array2<f64>> = bundles.iter().map(|b| b.adj.clone()).collect();
                    for (l, c) in layers.iter_mut().zip(caches).rev() {
                        d = l.backward(c, &adjs, &d);
                    }
                }
                (GraphBranch::Gcn(layers), GraphCache::Gcn(caches)) => {
                    let adjs: Vec<Array2<f64>> = bundles.iter().map(|b| b.a_hat.clone()).collect();
                    for (l, c) in layers.iter_mut().zip(caches).rev() {
                        d = l.backward(c, &adjs, &d);
                    }
                }
                (GraphBranch::Conv(layers), GraphCache::Conv(caches)) => {
                    for (l, c) in layers.iter_mut().zip(caches).rev() {
                        d = l.backward(c, &d);
                    }
                }
                _ => unreachable!("cache matches branch"),
            }
            dx = d;
        }
        if let Some((lcache, e, norms)) = &cache.lstm {
            let de = djoint.slice(s![.., gh..]).to_owned();
            let dh = l2_normalize_rows_backward(e, norms, &de);
            dseq = self.lstm.backward(lcache, &dh);
        }
        (dx, dseq)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = Vec::new();
        match &mut self.graph {
            GraphBranch::Gat(layers) => {
                for l in layers {
                    out.push(&mut l.w);
                    out.push(&mut l.g);
                }
            }
            GraphBranch::Gcn(layers) => out.extend(layers.iter_mut().map(|l| &mut l.w)),
            GraphBranch::Conv(layers) => {
                for l in layers {
                    out.push(&mut l.w);
                    out.push(&mut l.b);
                }
            }
            GraphBranch::None => {}
        }
        out.extend(self.lstm.params_mut());
        out.extend(self.head1.params_mut());
        out.extend(self.head2.params_mut());
        out
    }

    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out: Vec<(String, &Param)> = Vec::new();
        match &self.graph {
            GraphBranch::Gat(layers) => {
                for (k, l) in layers.iter().enumerate() {
                    out.push((format!("graph.{k}.w"), &l.w));
                    out.push((format!("graph.{k}.attn"), &l.g));
                }
            }
            GraphBranch::Gcn(layers) => {
                for (k, l) in layers.iter().enumerate() {
                    out.push((format!("graph.{k}.w"), &l.w));
                }
            }
            GraphBranch::Conv(layers) => {
                for (k, l) in layers.iter().enumerate() {
                    out.push((format!("graph.{k}.w"), &l.w));
                    out.push((format!("graph.{k}.b"), &l.b));
                }
            }
            GraphBranch::None => {}
        }
        for (name, p) in ["wx", "wh", "b"].into_iter().zip(self.lstm.params()) {
            out.push((format!("lstm.{name}"), p));
        }
        for (k, d) in [&self.head1, &self.head2].into_iter().enumerate() {
            out.push((format!("head.{k}.w"), &d.w));
            out.push((format!("head.{k}.b"), &d.b));
        }
        out
    }

    /// Parameter counts per component: `(graph, lstm, head)`.
    pub fn param_counts(&self) -> (usize, usize, usize) {
        let mut counts = (0, 0, 0);
        for (name, p) in self.named_params() {
            match name.split('.').next() {
                Some("graph") => counts.0 += p.len(),
                Some("lstm") => counts.1 += p.len(),
                _ => counts.2 += p.len(),
            }
        }
        counts
    }

    pub fn zero_grad(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    fn snapshot(&self) -> Vec<Array2<f64>> {
        self.named_params().into_iter().map(|(_, p)| p.value.clone()).collect()
    }

    fn restore(&mut self, values: Vec<Array2<f64>>) {
        for (p, v) in self.params_mut().into_iter().zip(values) {
            p.value = v;
        }
    }

    pub fn param_set(&self) -> ParamSet {
        let mut set = ParamSet::default();
        for (name, p) in self.named_params() {
            set.insert(name, &p.value);
        }
        set
    }

    pub fn load_param_set(&mut self, set: &ParamSet) -> Result<(), ModelError> {
        let names: Vec<String> = self.named_params().into_iter().map(|(n, _)| n).collect();
        let mut values = Vec::with_capacity(names.len());
        for (name, p) in names.iter().zip(self.named_params()) {
            let v = set.get(name)?;
            if v.dim() != p.1.value.dim() {
                return Err(ModelError::Manifest(format!(
                    "{name}: shape {:?} does not match {:?}",
                    v.dim(),
                    p.1.value.dim()
                )));
            }
            values.push(v);
        }
        self.restore(values);
        Ok(())
    }

    pub fn manifest_json(&self) -> String {
        serde_json::to_string_pretty(&Manifest {
            kind: self.kind,
            config: self.cfg.clone(),
            ablation: self.ablation,
        })
        .expect("manifest serializes")
    }

    /// Rebuild a model from its manifest and parameter JSON documents.
    pub fn from_json(manifest: &str, params: &str) -> Result<Self, ModelError> {
        let m: Manifest =
            serde_json::from_str(manifest).map_err(|e| ModelError::Manifest(e.to_string()))?;
        let mut model = SleepModel::new(m.kind, m.config, 0).with_ablation(m.ablation);
        model.load_param_set(&ParamSet::from_json(params)?)?;
        Ok(model)
    }

    /// Output probabilities, one array of `eta` values per bundle.
    pub fn predict_proba(&self, bundles: &[Bundle]) -> Result<Vec<Array1<f64>>, ModelError> {
        let mut rng = seed::stream(0, "eval");
        let eta = self.cfg.eta;
        let mut out = Vec::with_capacity(bundles.len());
        for chunk in bundles.chunks(EVAL_CHUNK) {
            let refs: Vec<&Bundle> = chunk.iter().collect();
            let cache = self.forward_batch(&refs, DropoutMode::Eval, &mut rng)?;
            for k in 0..chunk.len() {
                out.push(cache.probs.slice(s![k * eta..(k + 1) * eta]).to_owned());
            }
        }
        Ok(out)
    }

    pub fn forward(&self, bundle: &Bundle) -> Result<Array1<f64>, ModelError> {
        Ok(self.predict_proba(std::slice::from_ref(bundle))?.remove(0))
    }

    /// Mean loss over all scored rows of `bundles`, in eval mode.
    pub fn loss(&self, bundles: &[Bundle], kind: crate::nn::LossKind) -> Result<f64, ModelError> {
        let probs = self.predict_proba(bundles)?;
        let mut total = 0.0;
        let mut count = 0usize;
        for (b, p) in bundles.iter().zip(&probs) {
            let n = b.scored();
            if n == 0 {
                continue;
            }
            total += kind.eval(p, &b.y_next, &b.mask).0 * n as f64;
            count += n;
        }
        Ok(if count == 0 { 0.0 } else { total / count as f64 })
    }

    /// Accumulate parameter gradients of the mean loss over `bundles` (train
    /// mode when `rng` is given) and return that loss.
    pub fn accumulate_gradients(
        &mut self,
        bundles: &[&Bundle],
        loss: crate::nn::LossKind,
        rng: Option<&mut Rng>,
    ) -> Result<f64, ModelError> {
        let mut eval_rng = seed::stream(0, "eval");
        let (mode, rng) = match rng {
            Some(r) => (DropoutMode::Train, r),
            None => (DropoutMode::Eval, &mut eval_rng),
        };
        let cache = self.forward_batch(bundles, mode, rng)?;
        let y = concatenate(
            Axis(0),
            &bundles.iter().map(|b| b.y_next.view()).collect::<Vec<_>>(),
        )
        .expect("label shapes agree");
        let mask: Vec<bool> = bundles.iter().flat_map(|b| b.mask.iter().copied()).collect();
        let (value, dlogits) = loss.eval(&cache.probs, &y, &mask);
        self.backward_batch(bundles, &cache, &dlogits);
        Ok(value)
    }

    /// Gradient of the mean output probability (over all `eta` rows) with
    /// respect to the day-`k` features. Day-`k` values enter both the graph
    /// branch and the last LSTM step, so the two contributions are summed.
    pub fn input_gradient(&self, bundle: &Bundle) -> Result<Array2<f64>, ModelError> {
        let mut work = self.clone();
        let mut rng = seed::stream(0, "eval");
        let cache = work.forward_batch(&[bundle], DropoutMode::Eval, &mut rng)?;
        let n = cache.probs.len() as f64;
        let dlogits = cache.probs.mapv(|p| p * (1.0 - p) / n);
        let (dx, dseq) = work.backward_batch(&[bundle], &cache, &dlogits);
        Ok(dx + dseq.last().expect("seq_len >= 1"))
    }

    /// Gradients with respect to both inputs, used by gradient checks.
    pub fn input_gradients_of_loss(
        &self,
        bundle: &Bundle,
        loss: crate::nn::LossKind,
    ) -> Result<(Array2<f64>, Vec<Array2<f64>>), ModelError> {
        let mut work = self.clone();
        let mut rng = seed::stream(0, "eval");
        let cache = work.forward_batch(&[bundle], DropoutMode::Eval, &mut rng)?;
        let (_, dlogits) = loss.eval(&cache.probs, &bundle.y_next, &bundle.mask);
        Ok(work.backward_batch(&[bundle], &cache, &dlogits))
    }

    /// Train with ADAM and early stopping on validation loss; the parameters
    /// of the best validation epoch are restored at the end.
    pub fn train(
        &mut self,
        train: &[Bundle],
        val: &[Bundle],
        cfg: &TrainConfig,
    ) -> Result<History, ModelError> {
        use rand::seq::SliceRandom;

        cfg.validate()?;
        self.cfg.dropout = cfg.dropout_rate;
        let mut history = History::default();
        if cfg.max_epochs == 0 || train.is_empty() {
            return Ok(history);
        }
        let mut shuffle_rng = seed::stream(cfg.seed, "shuffle");
        let mut drop_rng = seed::stream(cfg.seed, "dropout");
        let mut adam = Adam::new(cfg.lr);
        let mut stopper = EarlyStopper::new(cfg.patience, cfg.min_delta);
        let mut best = self.snapshot();
        let mut order: Vec<usize> = (0..train.len()).collect();
        for epoch in 1..=cfg.max_epochs {
            order.shuffle(&mut shuffle_rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0usize;
            for idx in order.chunks(cfg.batch_size) {
                let batch: Vec<&Bundle> = idx.iter().map(|&i| &train[i]).collect();
                self.zero_grad();
                let l = self.accumulate_gradients(&batch, cfg.loss, Some(&mut drop_rng))?;
                if !l.is_finite() {
                    return Err(ModelError::NonFiniteLoss { epoch });
                }
                adam.step(self.params_mut());
                epoch_loss += l;
                batches += 1;
            }
            history.train_loss.push(epoch_loss / batches as f64);
            let monitor = if val.is_empty() {
                self.loss(train, cfg.loss)?
            } else {
                self.loss(val, cfg.loss)?
            };
            if !monitor.is_finite() {
                return Err(ModelError::NonFiniteLoss { epoch });
            }
            history.val_loss.push(monitor);
            let decision = stopper.observe(monitor);
            if decision.improved {
                best = self.snapshot();
            }
            if decision.stop {
                history.stopped_early = true;
                break;
            }
        }
        history.best_epoch = stopper.best_epoch();
        self.restore(best);
        self.zero_grad();
        Ok(history)
    }
}

/// Scored predictions of one bundle.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPrediction {
    pub node: NodeRef,
    pub prob: f64,
    pub label: u8,
    pub truth: u8,
}

/// Threshold probabilities (`p >= threshold` → 1); rows excluded by the
/// scoring mask, including repetition copies, are dropped.
pub fn predict_labels(
    model: &SleepModel,
    bundles: &[Bundle],
    threshold: f64,
) -> Result<Vec<Vec<LabeledPrediction>>, ModelError> {
    let probs = model.predict_proba(bundles)?;
    Ok(bundles
        .iter()
        .zip(probs)
        .map(|(b, p)| label_bundle(b, &p, threshold))
        .collect())
}

pub fn threshold_label(p: f64, threshold: f64) -> u8 {
    u8::from(p >= threshold)
}

pub fn label_bundle(b: &Bundle, probs: &Array1<f64>, threshold: f64) -> Vec<LabeledPrediction> {
    (0..b.eta())
        .filter(|&r| b.mask[r])
        .map(|r| LabeledPrediction {
            node: b.nodes[r].clone(),
            prob: probs[r],
            label: threshold_label(probs[r], threshold),
            truth: b.y_next[r] as u8,
        })
        .collect()
}
