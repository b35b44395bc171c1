//! Weighted call/SMS graphs built from communication metadata, plus the
//! node-importance metrics used to stratify results.

use std::collections::{HashMap, VecDeque};
use std::io::Read;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type ParticipantId = String;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("negative call duration {duration} s ({src} -> {dst} at t={timestamp})")]
    NegativeDuration {
        src: String,
        dst: String,
        timestamp: i64,
        duration: f64,
    },
    #[error("sms class must be 0 or 1, got {0}")]
    BadSmsClass(u8),
    #[error("expected {expected} events but found a {found} event")]
    WrongKind {
        expected: &'static str,
        found: &'static str,
    },
    #[error("invalid window: start {0} > end {1}")]
    BadWindow(i64, i64),
    #[error("sms weights must satisfy w1 > w2 > 0 (got w1={0}, w2={1})")]
    BadSmsWeights(f64, f64),
    #[error("duplicate node id {0:?}")]
    DuplicateNode(String),
    #[error("graph json: {0}")]
    Json(String),
    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("power iteration did not converge within {max_iter} iterations")]
    NoConvergence { max_iter: usize, iterate: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Call { duration_s: f64 },
    Sms { class: u8 },
}

impl EventKind {
    fn name(&self) -> &'static str {
        match self {
            EventKind::Call { .. } => "call",
            EventKind::Sms { .. } => "sms",
        }
    }
}

/// One call or SMS metadata record.
#[derive(Debug, Clone, PartialEq)]
pub struct CommEvent {
    pub kind: EventKind,
    pub src: ParticipantId,
    pub dst: ParticipantId,
    pub timestamp: i64,
}

/// Inclusive time window in epoch seconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub start: i64,
    pub end: i64,
}

impl Window {
    pub fn new(start: i64, end: i64) -> Result<Self, GraphError> {
        if start > end {
            return Err(GraphError::BadWindow(start, end));
        }
        Ok(Self { start, end })
    }

    pub fn all() -> Self {
        Self {
            start: i64::MIN,
            end: i64::MAX,
        }
    }

    pub fn contains(&self, t: i64) -> bool {
        self.start <= t && t <= self.end
    }
}

/// Node set plus non-negative weighted adjacency. Diagonal is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedGraph {
    pub node_ids: Vec<ParticipantId>,
    pub adj: Array2<f64>,
}

/// A graph together with the number of events skipped because they named
/// participants outside the roster.
#[derive(Debug, Clone)]
pub struct BuiltGraph {
    pub graph: WeightedGraph,
    pub rejected: usize,
}

#[derive(Serialize, Deserialize)]
struct GraphJson {
    node_ids: Vec<String>,
    triplets: Vec<(usize, usize, f64)>,
}

impl WeightedGraph {
    pub fn empty(node_ids: Vec<ParticipantId>) -> Self {
        let n = node_ids.len();
        Self {
            node_ids,
            adj: Array2::zeros((n, n)),
        }
    }

    pub fn from_adjacency(node_ids: Vec<ParticipantId>, adj: Array2<f64>) -> Self {
        assert_eq!(adj.dim(), (node_ids.len(), node_ids.len()));
        Self { node_ids, adj }
    }

    /// Unit-weight undirected graph from an edge list over nodes `0..n`.
    pub fn from_edges(n: usize, edges: &[(usize, usize, f64)]) -> Self {
        let mut adj = Array2::zeros((n, n));
        for &(i, j, w) in edges {
            if i != j {
                adj[[i, j]] = w;
                adj[[j, i]] = w;
            }
        }
        Self {
            node_ids: (0..n).map(|i| i.to_string()).collect(),
            adj,
        }
    }

    pub fn n(&self) -> usize {
        self.node_ids.len()
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.adj[[i, j]] == self.adj[[j, i]]))
    }

    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        self.adj
            .row(i)
            .into_iter()
            .enumerate()
            .filter(|&(j, &w)| j != i && w > 0.0)
            .map(|(j, _)| j)
            .collect::<Vec<_>>()
            .into_iter()
    }

    /// Induced subgraph over `nodes`, in the given order.
    pub fn induced(&self, nodes: &[usize]) -> WeightedGraph {
        let k = nodes.len();
        let adj = Array2::from_shape_fn((k, k), |(a, b)| self.adj[[nodes[a], nodes[b]]]);
        WeightedGraph {
            node_ids: nodes.iter().map(|&i| self.node_ids[i].clone()).collect(),
            adj,
        }
    }

    pub fn to_json(&self) -> String {
        let n = self.n();
        let mut triplets = Vec::new();
        for i in 0..n {
            for j in 0..n {
                let w = self.adj[[i, j]];
                if w != 0.0 {
                    triplets.push((i, j, w));
                }
            }
        }
        serde_json::to_string(&GraphJson {
            node_ids: self.node_ids.clone(),
            triplets,
        })
        .expect("graph serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, GraphError> {
        let parsed: GraphJson =
            serde_json::from_str(text).map_err(|e| GraphError::Json(e.to_string()))?;
        let n = parsed.node_ids.len();
        check_unique(&parsed.node_ids)?;
        let mut adj = Array2::zeros((n, n));
        for (i, j, w) in parsed.triplets {
            if i >= n || j >= n {
                return Err(GraphError::Json(format!("triplet index ({i},{j}) out of range")));
            }
            if i == j || !(w >= 0.0) || !w.is_finite() {
                return Err(GraphError::Json(format!("invalid triplet ({i},{j},{w})")));
            }
            adj[[i, j]] = w;
        }
        Ok(Self {
            node_ids: parsed.node_ids,
            adj,
        })
    }
}

fn check_unique(ids: &[String]) -> Result<HashMap<&str, usize>, GraphError> {
    let mut index = HashMap::with_capacity(ids.len());
    for (i, id) in ids.iter().enumerate() {
        if index.insert(id.as_str(), i).is_some() {
            return Err(GraphError::DuplicateNode(id.clone()));
        }
    }
    Ok(index)
}

fn accumulate<F>(
    events: &[CommEvent],
    window: Window,
    roster: &[ParticipantId],
    expected: &'static str,
    mut weight: F,
) -> Result<BuiltGraph, GraphError>
where
    F: FnMut(&CommEvent) -> Result<Option<f64>, GraphError>,
{
    let index = check_unique(roster)?;
    let n = roster.len();
    let mut adj = Array2::zeros((n, n));
    let mut rejected = 0;
    for ev in events {
        let w = weight(ev)?.ok_or(GraphError::WrongKind {
            expected,
            found: ev.kind.name(),
        })?;
        if !window.contains(ev.timestamp) {
            continue;
        }
        match (index.get(ev.src.as_str()), index.get(ev.dst.as_str())) {
            (Some(&i), Some(&j)) if i != j => adj[[i, j]] += w,
            _ => rejected += 1,
        }
    }
    Ok(BuiltGraph {
        graph: WeightedGraph {
            node_ids: roster.to_vec(),
            adj,
        },
        rejected,
    })
}

/// Directed call graph: `adj[i][j]` is the total call time from `i` to `j`
/// inside `window`. Events naming non-roster participants are counted in
/// `rejected`.
pub fn build_call_graph(
    events: &[CommEvent],
    window: Window,
    roster: &[ParticipantId],
) -> Result<BuiltGraph, GraphError> {
    accumulate(events, window, roster, "call", |ev| match ev.kind {
        EventKind::Call { duration_s } if duration_s < 0.0 || duration_s.is_nan() => {
            Err(GraphError::NegativeDuration {
                src: ev.src.clone(),
                dst: ev.dst.clone(),
                timestamp: ev.timestamp,
                duration: duration_s,
            })
        }
        EventKind::Call { duration_s } => Ok(Some(duration_s)),
        EventKind::Sms { .. } => Ok(None),
    })
}

/// Directed SMS graph: class-1 messages weigh `w1`, class-0 messages `w2`.
pub fn build_sms_graph(
    events: &[CommEvent],
    window: Window,
    roster: &[ParticipantId],
    w1: f64,
    w2: f64,
) -> Result<BuiltGraph, GraphError> {
    if !(w1 > w2 && w2 > 0.0) {
        return Err(GraphError::BadSmsWeights(w1, w2));
    }
    accumulate(events, window, roster, "sms", |ev| match ev.kind {
        EventKind::Sms { class: 1 } => Ok(Some(w1)),
        EventKind::Sms { class: 0 } => Ok(Some(w2)),
        EventKind::Sms { class } => Err(GraphError::BadSmsClass(class)),
        EventKind::Call { .. } => Ok(None),
    })
}

pub const SMS_W1: f64 = 1.0;
pub const SMS_W2: f64 = 0.5;

/// `A + Aᵀ` for directed input. Already-symmetric graphs are returned
/// unchanged, which makes the operation idempotent.
pub fn symmetrize(g: &WeightedGraph) -> WeightedGraph {
    if g.is_symmetric() {
        return g.clone();
    }
    let mut adj = &g.adj + &g.adj.t();
    adj.diag_mut().fill(0.0);
    WeightedGraph {
        node_ids: g.node_ids.clone(),
        adj,
    }
}

/// Weight-blind degree: number of neighbours with a positive edge.
pub fn degree_centrality(g: &WeightedGraph) -> Vec<usize> {
    let n = g.n();
    (0..n)
        .map(|v| (0..n).filter(|&u| u != v && g.adj[[u, v]] > 0.0).count())
        .collect()
}

/// Result of [`eigenvalue_centrality`]. `degenerate` is set for graphs with
/// no edges, where the vector is all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenCentrality {
    pub values: Vec<f64>,
    pub eigenvalue: f64,
    pub degenerate: bool,
}

/// Principal eigenvector of the (symmetric, non-negative) adjacency.
///
/// Each connected component is solved separately by power iteration on
/// `A_c + I` from an all-ones start. The global principal eigenvector
/// lives on the component(s) with the largest eigenvalue; every other node,
/// including isolated ones, gets exactly zero. Ties between components share
/// the mass equally. The result has unit L2 norm.
pub fn eigenvalue_centrality(
    g: &WeightedGraph,
    tol: f64,
    max_iter: usize,
) -> Result<EigenCentrality, GraphError> {
    let n = g.n();
    let mut values = vec![0.0; n];
    let mut solved: Vec<(Vec<usize>, Vec<f64>, f64)> = Vec::new();
    for comp in connected_components(g) {
        if comp.len() < 2 {
            continue;
        }
        let (vec, lambda) = power_iteration(g, &comp, tol, max_iter)?;
        solved.push((comp, vec, lambda));
    }
    let Some(lambda_max) = solved.iter().map(|s| s.2).reduce(f64::max) else {
        return Ok(EigenCentrality {
            values,
            eigenvalue: 0.0,
            degenerate: true,
        });
    };
    let rel = 1e-9 * lambda_max.max(1.0);
    let winners: Vec<_> = solved
        .iter()
        .filter(|s| (lambda_max - s.2).abs() <= rel)
        .collect();
    let share = (1.0 / winners.len() as f64).sqrt();
    for (comp, vec, _) in winners {
        for (&node, &v) in comp.iter().zip(vec) {
            values[node] = v * share;
        }
    }
    Ok(EigenCentrality {
        values,
        eigenvalue: lambda_max,
        degenerate: false,
    })
}

fn power_iteration(
    g: &WeightedGraph,
    comp: &[usize],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, f64), GraphError> {
    let k = comp.len();
    let a = Array2::from_shape_fn((k, k), |(i, j)| g.adj[[comp[i], comp[j]]]);
    let mut x = vec![1.0 / (k as f64).sqrt(); k];
    let mut next = vec![0.0; k];
    for _ in 0..max_iter {
        for i in 0..k {
            let mut s = x[i];
            for j in 0..k {
                s += a[[i, j]] * x[j];
            }
            next[i] = s;
        }
        let norm = next.iter().map(|v| v * v).sum::<f64>().sqrt();
        next.iter_mut().for_each(|v| *v /= norm);
        let diff = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if diff < tol {
            // Rayleigh quotient of A (without the shift).
            let mut lambda = 0.0;
            for i in 0..k {
                for j in 0..k {
                    lambda += x[i] * a[[i, j]] * x[j];
                }
            }
            return Ok((x, lambda));
        }
    }
    let mut iterate = vec![0.0; g.n()];
    for (&node, &v) in comp.iter().zip(&x) {
        iterate[node] = v;
    }
    Err(GraphError::NoConvergence { max_iter, iterate })
}

pub const EIGEN_TOL: f64 = 1e-10;
pub const EIGEN_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Alone,
    Small,
    Large,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Alone, Category::Small, Category::Large];

    pub fn name(self) -> &'static str {
        match self {
            Category::Alone => "alone",
            Category::Small => "small",
            Category::Large => "large",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Degree,
    Eigen,
}

pub const EIGEN_ALONE: f64 = 1e-4;
pub const EIGEN_LARGE: f64 = 0.3;
pub const DEGREE_LARGE: f64 = 4.0;

pub fn categorize(value: f64, metric: Metric) -> Category {
    match metric {
        Metric::Eigen if value < EIGEN_ALONE => Category::Alone,
        Metric::Eigen if value < EIGEN_LARGE => Category::Small,
        Metric::Degree if value <= 0.0 => Category::Alone,
        Metric::Degree if value < DEGREE_LARGE => Category::Small,
        _ => Category::Large,
    }
}

pub fn categorize_centrality(values: &[f64], metric: Metric) -> Vec<Category> {
    values.iter().map(|&v| categorize(v, metric)).collect()
}

/// Per-node centrality values and their alone/small/large buckets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CentralityProfile {
    pub degree: Vec<usize>,
    pub eigen: Vec<f64>,
    pub category_degree: Vec<Category>,
    pub category_eigen: Vec<Category>,
    pub degenerate: bool,
}

impl CentralityProfile {
    pub fn compute(g: &WeightedGraph) -> Result<Self, GraphError> {
        let degree = degree_centrality(g);
        let eig = eigenvalue_centrality(g, EIGEN_TOL, EIGEN_MAX_ITER)?;
        let deg_f: Vec<f64> = degree.iter().map(|&d| d as f64).collect();
        Ok(Self {
            category_degree: categorize_centrality(&deg_f, Metric::Degree),
            category_eigen: categorize_centrality(&eig.values, Metric::Eigen),
            degree,
            eigen: eig.values,
            degenerate: eig.degenerate,
        })
    }

    pub fn category(&self, metric: Metric, node: usize) -> Category {
        match metric {
            Metric::Degree => self.category_degree[node],
            Metric::Eigen => self.category_eigen[node],
        }
    }
}

/// Connected components as sorted node-index lists, ordered by their
/// smallest member.
pub fn connected_components(g: &WeightedGraph) -> Vec<Vec<usize>> {
    let n = g.n();
    let mut seen = vec![false; n];
    let mut out = Vec::new();
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        let mut comp = vec![start];
        let mut queue = VecDeque::from([start]);
        while let Some(u) = queue.pop_front() {
            for v in 0..n {
                if !seen[v] && (g.adj[[u, v]] > 0.0 || g.adj[[v, u]] > 0.0) {
                    seen[v] = true;
                    comp.push(v);
                    queue.push_back(v);
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Parse an event log with header `kind,src,dst,timestamp,duration_s,sms_class`.
/// Errors carry the 1-based line number of the offending record.
pub fn read_events_csv<R: Read>(reader: R) -> Result<Vec<CommEvent>, GraphError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| GraphError::Csv { line: 1, msg: e.to_string() })?
        .clone();
    let expected = ["kind", "src", "dst", "timestamp", "duration_s", "sms_class"];
    if headers.iter().collect::<Vec<_>>() != expected {
        return Err(GraphError::Csv {
            line: 1,
            msg: format!("expected header {}", expected.join(",")),
        });
    }
    let mut events = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| GraphError::Csv {
            line: e.position().map_or(0, |p| p.line()),
            msg: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        let bad = |msg: String| GraphError::Csv { line, msg };
        let timestamp: i64 = rec[3]
            .parse()
            .map_err(|_| bad(format!("bad timestamp {:?}", &rec[3])))?;
        let kind = match &rec[0] {
            "call" => {
                if !rec[5].is_empty() {
                    return Err(bad("call rows must leave sms_class empty".into()));
                }
                let d: f64 = rec[4]
                    .parse()
                    .map_err(|_| bad(format!("bad duration {:?}", &rec[4])))?;
                EventKind::Call { duration_s: d }
            }
            "sms" => {
                if !rec[4].is_empty() {
                    return Err(bad("sms rows must leave duration_s empty".into()));
                }
                let c: u8 = rec[5]
                    .parse()
                    .map_err(|_| bad(format!("bad sms_class {:?}", &rec[5])))?;
                EventKind::Sms { class: c }
            }
            other => return Err(bad(format!("unknown event kind {other:?}"))),
        };
        if rec[1] == rec[2] {
            return Err(bad("src and dst must differ".into()));
        }
        events.push(CommEvent {
            kind,
            src: rec[1].to_string(),
            dst: rec[2].to_string(),
            timestamp,
        });
    }
    Ok(events)
}

pub fn write_events_csv<W: std::io::Write>(writer: W, events: &[CommEvent]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["kind", "src", "dst", "timestamp", "duration_s", "sms_class"])?;
    for ev in events {
        let (kind, dur, class) = match ev.kind {
            EventKind::Call { duration_s } => ("call", duration_s.to_string(), String::new()),
            EventKind::Sms { class } => ("sms", String::new(), class.to_string()),
        };
        w.write_record([kind, &ev.src, &ev.dst, &ev.timestamp.to_string(), &dur, &class])?;
    }
    w.flush()?;
    Ok(())
}
