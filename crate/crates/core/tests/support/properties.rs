//! Property checks against independent oracles, shared by the core
//! integration tests and the acceptance suite. Each check returns a short
//! summary on success and the first violation on failure.

use std::collections::{BTreeSet, VecDeque};

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use sleepnet::commgraph::{
    self, build_call_graph, build_sms_graph, eigenvalue_centrality, CommEvent, EventKind, Window, EIGEN_MAX_ITER,
    EIGEN_TOL,
};
use sleepnet::data::{generate_synthetic, make_bundles_all, preprocess_cohorts, SynthConfig};
use sleepnet::eval::stats::{anova_oneway, kruskal_wallis};
use sleepnet::eval::{prepare_trial, SplitKind};
use sleepnet::gedd::gedd_partition;
use sleepnet::nn::early_stop::replay;
use sleepnet::nn::{normalize_adjacency, Activation, GatLayer, GcnLayer};
use sleepnet::{seed, WeightedGraph};

pub type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i}")).collect()
}

/// Union of random blocks: some cliques, some sparse, some isolated nodes.
fn random_graph(n: usize, rng: &mut seed::Rng) -> WeightedGraph {
    let mut adj = Array2::zeros((n, n));
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut start = 0;
    while start < n {
        let size = rng.gen_range(1..=20).min(n - start);
        let block = &order[start..start + size];
        let p = rng.gen_range(0.1..1.0);
        for (a, &i) in block.iter().enumerate() {
            for &j in &block[..a] {
                if rng.gen::<f64>() < p {
                    let w = f64::from(rng.gen_range(1..20u32)) / 4.0;
                    adj[[i, j]] = w;
                    adj[[j, i]] = w;
                }
            }
        }
        start += size;
    }
    WeightedGraph::from_adjacency(ids(n), adj)
}

/// Random spanning tree plus extra edges.
fn random_connected(n: usize, rng: &mut seed::Rng) -> WeightedGraph {
    let mut adj = Array2::zeros((n, n));
    for i in 1..n {
        let j = rng.gen_range(0..i);
        let w = rng.gen_range(0.1..3.0);
        adj[[i, j]] = w;
        adj[[j, i]] = w;
    }
    let p = rng.gen_range(0.0..0.5);
    for i in 0..n {
        for j in 0..i {
            if adj[[i, j]] == 0.0 && rng.gen::<f64>() < p {
                let w = rng.gen_range(0.1..3.0);
                adj[[i, j]] = w;
                adj[[j, i]] = w;
            }
        }
    }
    WeightedGraph::from_adjacency(ids(n), adj)
}

/// GEDD size-exactness, node conservation, edge fidelity and output count
/// over 200 random graphs.
pub fn gedd_soundness() -> Check {
    let mut outputs = 0;
    for s in 0..200u64 {
        let mut rng = seed::stream(s, "gedd-oracle");
        let n = rng.gen_range(1..=60);
        let eta = [5, 10, 15][rng.gen_range(0..3)];
        let g = random_graph(n, &mut rng);
        let out = gedd_partition(&g, eta).map_err(|e| e.to_string())?;
        let want = (n + eta - 1) / eta;
        ensure!(out.graphs.len() == want, "graph {s}: {} outputs, expected {want}", out.graphs.len());
        let mut originals = vec![0usize; n];
        for (gi, eg) in out.graphs.iter().enumerate() {
            ensure!(
                eg.slots.len() == eta && eg.graph.n() == eta && eg.graph.adj.dim() == (eta, eta),
                "graph {s} output {gi}: size {} with {} slots",
                eg.graph.n(),
                eg.slots.len()
            );
            for slot in &eg.slots {
                ensure!(slot.src < n, "graph {s}: slot names node {}", slot.src);
                if !slot.duplicated {
                    originals[slot.src] += 1;
                }
            }
            for a in 0..eta {
                for b in 0..eta {
                    let w = eg.graph.adj[[a, b]];
                    if w != 0.0 {
                        let (sa, sb) = (eg.slots[a].src, eg.slots[b].src);
                        ensure!(
                            sa != sb && g.adj[[sa, sb]] == w,
                            "graph {s} output {gi}: edge {a}-{b} weight {w} not in source"
                        );
                    }
                }
            }
        }
        ensure!(
            originals.iter().all(|&c| c == 1),
            "graph {s}: original slot counts {originals:?}"
        );
        outputs += out.graphs.len();
    }
    Ok(format!("200 graphs, {outputs} outputs"))
}

/// Principal eigenvector of a dense symmetric matrix, positive and unit norm.
fn dense_principal(adj: &Array2<f64>) -> Vec<f64> {
    let n = adj.nrows();
    let m = DMatrix::from_fn(n, n, |i, j| adj[[i, j]]);
    let eig = SymmetricEigen::new(m);
    let top = eig.eigenvalues.imax();
    let v: Vec<f64> = eig.eigenvectors.column(top).iter().copied().collect();
    let sign = if v.iter().sum::<f64>() < 0.0 { -1.0 } else { 1.0 };
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| sign * x / norm).collect()
}

/// Eigenvalue centrality against a dense eigendecomposition on 100
/// connected graphs, plus the star fixture.
pub fn centrality_oracle() -> Check {
    let mut worst: f64 = 0.0;
    for s in 0..100u64 {
        let mut rng = seed::stream(s, "eigen-oracle");
        let n = rng.gen_range(2..=30);
        let g = random_connected(n, &mut rng);
        let got = eigenvalue_centrality(&g, EIGEN_TOL, EIGEN_MAX_ITER).map_err(|e| e.to_string())?;
        let want = dense_principal(&g.adj);
        let err = got.values.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        ensure!(err <= 1e-6, "graph {s} (n={n}): max error {err:e}");
        worst = worst.max(err);
    }
    let star = WeightedGraph::from_edges(6, &[(0, 1, 1.0), (0, 2, 1.0), (0, 3, 1.0), (0, 4, 1.0), (0, 5, 1.0)]);
    let hub = eigenvalue_centrality(&star, EIGEN_TOL, EIGEN_MAX_ITER).map_err(|e| e.to_string())?.values[0];
    ensure!((hub - 0.5f64.sqrt()).abs() <= 1e-6, "star hub {hub}");
    Ok(format!("100 graphs, worst {worst:.1e}, star hub {hub:.7}"))
}

fn random_log(rng: &mut seed::Rng, roster: &[String]) -> Vec<CommEvent> {
    let names: Vec<String> = roster.iter().cloned().chain(["x1".into(), "x2".into()]).collect();
    let len = rng.gen_range(0..120);
    (0..len)
        .map(|_| {
            let src = names[rng.gen_range(0..names.len())].clone();
            let dst = names[rng.gen_range(0..names.len())].clone();
            let kind = if rng.gen::<bool>() {
                EventKind::Call {
                    duration_s: f64::from(rng.gen_range(0..3600u32)),
                }
            } else {
                EventKind::Sms { class: rng.gen_range(0..2) }
            };
            CommEvent {
                kind,
                src,
                dst,
                timestamp: rng.gen_range(0..1000),
            }
        })
        .collect()
}

/// Brute force: for every ordered roster pair, scan the whole log.
fn replay_oracle(events: &[CommEvent], window: Window, roster: &[String]) -> (Array2<f64>, usize) {
    let n = roster.len();
    let mut adj = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            for ev in events {
                if ev.src == roster[i] && ev.dst == roster[j] && window.start <= ev.timestamp && ev.timestamp <= window.end {
                    adj[[i, j]] += match ev.kind {
                        EventKind::Call { duration_s } => duration_s,
                        EventKind::Sms { class: 1 } => 1.0,
                        EventKind::Sms { .. } => 0.5,
                    };
                }
            }
        }
    }
    let rejected = events
        .iter()
        .filter(|ev| window.start <= ev.timestamp && ev.timestamp <= window.end)
        .filter(|ev| {
            let known = |id: &String| roster.contains(id);
            !(known(&ev.src) && known(&ev.dst)) || ev.src == ev.dst
        })
        .count();
    (adj, rejected)
}

/// Call and SMS graphs equal the event-replay oracle exactly on 50 logs.
pub fn graph_replay() -> Check {
    for s in 0..50u64 {
        let mut rng = seed::stream(s, "replay-oracle");
        let roster = ids(rng.gen_range(2..10));
        let log = random_log(&mut rng, &roster);
        let a = rng.gen_range(0..1000);
        let b = rng.gen_range(0..1000);
        let window = Window::new(a.min(b), a.max(b)).map_err(|e| e.to_string())?;
        let calls: Vec<CommEvent> = log.iter().filter(|e| matches!(e.kind, EventKind::Call { .. })).cloned().collect();
        let texts: Vec<CommEvent> = log.iter().filter(|e| matches!(e.kind, EventKind::Sms { .. })).cloned().collect();
        let call = build_call_graph(&calls, window, &roster).map_err(|e| e.to_string())?;
        let (want, rejected) = replay_oracle(&calls, window, &roster);
        ensure!(call.graph.adj == want && call.rejected == rejected, "log {s}: call graph differs");
        let sms = build_sms_graph(&texts, window, &roster, commgraph::SMS_W1, commgraph::SMS_W2)
            .map_err(|e| e.to_string())?;
        let (want, rejected) = replay_oracle(&texts, window, &roster);
        ensure!(sms.graph.adj == want && sms.rejected == rejected, "log {s}: sms graph differs");
    }
    // two class-1 and three class-0 messages from a to b, one class-0 back
    let roster = vec!["a".to_string(), "b".to_string()];
    let ev = |src: &str, dst: &str, class| CommEvent {
        kind: EventKind::Sms { class },
        src: src.into(),
        dst: dst.into(),
        timestamp: 0,
    };
    let log = [
        ev("a", "b", 1),
        ev("a", "b", 1),
        ev("a", "b", 0),
        ev("a", "b", 0),
        ev("a", "b", 0),
        ev("b", "a", 0),
    ];
    let g = build_sms_graph(&log, Window::all(), &roster, commgraph::SMS_W1, commgraph::SMS_W2)
        .map_err(|e| e.to_string())?
        .graph;
    ensure!(
        g.adj[[0, 1]] == 2.0 * 1.0 + 3.0 * 0.5 && g.adj[[1, 0]] == 0.5,
        "sms weighting gave {:?}",
        g.adj
    );
    Ok("50 logs exact, sms a->b 3.5, b->a 0.5".into())
}

fn randn(rows: usize, cols: usize, rng: &mut seed::Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.sample(StandardNormal))
}

fn random_sparse_adj(n: usize, rng: &mut seed::Rng) -> Array2<f64> {
    let p = rng.gen_range(0.05..0.5);
    let mut a = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..i {
            if rng.gen::<f64>() < p {
                let w = rng.gen_range(0.2..2.0);
                a[[i, j]] = w;
                a[[j, i]] = w;
            }
        }
    }
    a
}

/// Nodes within `k` hops of `v`, `v` included.
fn within_hops(a: &Array2<f64>, v: usize, k: usize) -> BTreeSet<usize> {
    let n = a.nrows();
    let mut dist = vec![usize::MAX; n];
    dist[v] = 0;
    let mut queue = VecDeque::from([v]);
    while let Some(u) = queue.pop_front() {
        for w in 0..n {
            if a[[u, w]] > 0.0 && dist[w] == usize::MAX {
                dist[w] = dist[u] + 1;
                queue.push_back(w);
            }
        }
    }
    (0..n).filter(|&u| dist[u] <= k).collect()
}

/// GAT rows are distributions over closed neighbourhoods on 50 graphs, and
/// stacked GCN/GAT layers only see `k`-hop neighbourhoods.
pub fn attention_and_locality() -> Check {
    let mut worst: f64 = 0.0;
    for s in 0..50u64 {
        let mut rng = seed::stream(s, "attention");
        let n = rng.gen_range(2..=15);
        let a = random_sparse_adj(n, &mut rng);
        let layer = GatLayer::new(4, 3, Activation::Tanh, &mut rng);
        let x = randn(n, 4, &mut rng);
        let (_, cache) = layer.forward(&x, std::slice::from_ref(&a)).map_err(|e| e.to_string())?;
        let alpha = &cache.attention()[0];
        for i in 0..n {
            let sum: f64 = alpha.row(i).sum();
            worst = worst.max((sum - 1.0).abs());
            ensure!((sum - 1.0).abs() <= 1e-12, "graph {s} row {i} sums to {sum}");
            for j in 0..n {
                ensure!(
                    alpha[[i, j]] >= 0.0 && (i == j || a[[i, j]] > 0.0 || alpha[[i, j]] == 0.0),
                    "graph {s}: attention {i}->{j} = {}",
                    alpha[[i, j]]
                );
            }
        }
    }

    let mut probes = 0;
    for s in 0..50u64 {
        let mut rng = seed::stream(s, "locality");
        let n = rng.gen_range(4..=15);
        let a = random_sparse_adj(n, &mut rng);
        let a_hat = normalize_adjacency(&a);
        let gcn: Vec<GcnLayer> = (0..2).map(|_| GcnLayer::new(4, 4, Activation::Tanh, &mut rng)).collect();
        let gat: Vec<GatLayer> = (0..2).map(|_| GatLayer::new(4, 4, Activation::Tanh, &mut rng)).collect();
        let x = randn(n, 4, &mut rng);
        let v = rng.gen_range(0..n);
        for k in 1..=2 {
            let near = within_hops(&a, v, k);
            let mut twin = x.clone();
            for u in (0..n).filter(|u| !near.contains(u)) {
                twin.row_mut(u).mapv_inplace(|z| z + 1.0 + rng.gen::<f64>());
            }
            let run_gcn = |x: &Array2<f64>| -> Result<Array2<f64>, String> {
                gcn[..k].iter().try_fold(x.clone(), |h, l| {
                    l.forward(&h, std::slice::from_ref(&a_hat)).map(|o| o.0).map_err(|e| e.to_string())
                })
            };
            let run_gat = |x: &Array2<f64>| -> Result<Array2<f64>, String> {
                gat[..k].iter().try_fold(x.clone(), |h, l| {
                    l.forward(&h, std::slice::from_ref(&a)).map(|o| o.0).map_err(|e| e.to_string())
                })
            };
            for (name, out, out_twin) in [
                ("gcn", run_gcn(&x)?, run_gcn(&twin)?),
                ("gat", run_gat(&x)?, run_gat(&twin)?),
            ] {
                let same = out
                    .row(v)
                    .iter()
                    .zip(out_twin.row(v))
                    .all(|(p, q)| p.to_bits() == q.to_bits());
                ensure!(same, "graph {s}: {name} node {v} sees beyond {k} hops");
                probes += 1;
            }
        }
        // control: changing a direct neighbour does move the output
        if let Some(u) = (0..n).find(|&u| a[[v, u]] > 0.0) {
            let mut twin = x.clone();
            twin.row_mut(u).mapv_inplace(|z| z + 1.0);
            let o1 = gcn[0].forward(&x, std::slice::from_ref(&a_hat)).map_err(|e| e.to_string())?.0;
            let o2 = gcn[0].forward(&twin, std::slice::from_ref(&a_hat)).map_err(|e| e.to_string())?.0;
            ensure!(o1.row(v) != o2.row(v), "graph {s}: gcn ignores neighbour {u} of {v}");
        }
    }
    Ok(format!("50 graphs, worst row error {worst:.1e}, {probes} twin passes"))
}

fn small_synth(missing_rate: f64, seed_value: u64) -> SynthConfig {
    SynthConfig {
        n_cohorts: 2,
        participants_per_cohort: 12,
        days: 25,
        missing_rate,
        seed: seed_value,
        ..SynthConfig::default()
    }
}

/// No-leakage fixture, zero missing cells after preprocessing, and the
/// early-stopper examples.
pub fn pipeline_hygiene() -> Check {
    let raw = generate_synthetic(&small_synth(0.1, 3)).map_err(|e| e.to_string())?;
    let before: usize = raw.iter().map(|d| d.missing_cells()).sum();
    ensure!(before > 0, "fixture has no missing cells to repair");
    let (pre, _) = preprocess_cohorts(&raw).map_err(|e| e.to_string())?;
    let after: usize = pre.iter().map(|d| d.missing_cells()).sum();
    ensure!(after == 0, "{after} missing cells remain");

    let bundles = make_bundles_all(&pre, 3, 5).map_err(|e| e.to_string())?.bundles;
    let clean = prepare_trial(&bundles, SplitKind::Random, 0, 11).map_err(|e| e.to_string())?;
    let mut shifted = bundles.clone();
    for &i in &clean.split.test {
        shifted[i].x_day.mapv_inplace(|v| 5.0 * v + 100.0);
        shifted[i].s_seq.mapv_inplace(|v| 5.0 * v + 100.0);
    }
    let moved = prepare_trial(&shifted, SplitKind::Random, 0, 11).map_err(|e| e.to_string())?;
    ensure!(moved.split == clean.split, "split depends on test values");
    ensure!(moved.standardizer == clean.standardizer, "standardizer moved with the test set");
    ensure!(moved.train == clean.train && moved.val == clean.val, "training bundles changed");
    let x = moved.test[0].x_day.mean_axis(Axis(0)).expect("rows");
    ensure!(x.iter().any(|v| v.abs() > 10.0), "shift did not reach the test set");

    let constant = vec![0.7; 100];
    let mut drop = vec![1.0];
    drop.extend([0.5; 100]);
    let steady: Vec<f64> = (0..200).map(|k| 10.0 - 0.02 * f64::from(k)).collect();
    ensure!(replay(&constant, 30, 0.01) == (Some(31), 1), "constant loss: {:?}", replay(&constant, 30, 0.01));
    ensure!(replay(&drop, 30, 0.01) == (Some(32), 2), "drop then flat: {:?}", replay(&drop, 30, 0.01));
    ensure!(replay(&steady, 30, 0.01).0.is_none(), "steady improvement stopped");
    Ok(format!("{before} missing cells repaired, standardizer unchanged, stops 31/32/never"))
}

fn oracle_f(groups: &[Vec<f64>]) -> f64 {
    let n: f64 = groups.iter().map(|g| g.len() as f64).sum();
    let k = groups.len() as f64;
    let all: f64 = groups.iter().flatten().sum();
    let grand = all / n;
    let mut between = 0.0;
    let mut within = 0.0;
    for g in groups {
        let m = g.iter().sum::<f64>() / g.len() as f64;
        between += g.len() as f64 * (m - grand) * (m - grand);
        within += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    (between / (k - 1.0)) / (within / (n - k))
}

/// H for continuous data (no ties), from rank sums.
fn oracle_h(groups: &[Vec<f64>]) -> f64 {
    let mut all: Vec<(f64, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, v)| v.iter().map(move |&x| (x, g)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sums = vec![0.0; groups.len()];
    for (r, (_, g)) in all.iter().enumerate() {
        sums[*g] += (r + 1) as f64;
    }
    let n = all.len() as f64;
    let s: f64 = sums.iter().zip(groups).map(|(r, g)| r * r / g.len() as f64).sum();
    12.0 / (n * (n + 1.0)) * s - 3.0 * (n + 1.0)
}

pub const PERMUTATIONS: usize = 100_000;

/// ANOVA and Kruskal–Wallis p-values against permutation oracles on 20
/// random fixtures, plus identical-group fixtures.
pub fn statistics_oracle() -> Check {
    let (mut worst_f, mut worst_h): (f64, f64) = (0.0, 0.0);
    for s in 0..20u64 {
        let mut rng = seed::stream(s, "stats-oracle");
        // the chi-squared tail of H is within 1e-2 of the exact permutation
        // tail only from about three groups of fifteen
        let k = rng.gen_range(3..=4);
        let groups: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                let size = rng.gen_range(15..=25);
                let shift: f64 = 0.4 * rng.sample::<f64, _>(StandardNormal);
                (0..size).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect();
        let (f, p_f) = anova_oneway(&groups).map_err(|e| e.to_string())?;
        let (h, p_h) = kruskal_wallis(&groups).map_err(|e| e.to_string())?;
        let (f0, h0) = (oracle_f(&groups), oracle_h(&groups));
        ensure!((f - f0).abs() <= 1e-9 * f0.max(1.0), "fixture {s}: F {f} vs {f0}");
        ensure!((h - h0).abs() <= 1e-9 * h0.max(1.0), "fixture {s}: H {h} vs {h0}");

        let sizes: Vec<usize> = groups.iter().map(Vec::len).collect();
        let mut pool: Vec<f64> = groups.iter().flatten().copied().collect();
        let (mut hits_f, mut hits_h) = (0usize, 0usize);
        let mut perm_rng = seed::stream(s, "permutations");
        for _ in 0..PERMUTATIONS {
            pool.shuffle(&mut perm_rng);
            let mut regrouped = Vec::with_capacity(k);
            let mut at = 0;
            for &len in &sizes {
                regrouped.push(pool[at..at + len].to_vec());
                at += len;
            }
            hits_f += usize::from(oracle_f(&regrouped) >= f0 * (1.0 - 1e-12));
            hits_h += usize::from(oracle_h(&regrouped) >= h0 - 1e-9);
        }
        let (perm_f, perm_h) = (hits_f as f64 / PERMUTATIONS as f64, hits_h as f64 / PERMUTATIONS as f64);
        ensure!((p_f - perm_f).abs() <= 1e-2, "fixture {s}: ANOVA p {p_f:.4} vs permutation {perm_f:.4}");
        ensure!((p_h - perm_h).abs() <= 1e-2, "fixture {s}: KW p {p_h:.4} vs permutation {perm_h:.4}");
        worst_f = worst_f.max((p_f - perm_f).abs());
        worst_h = worst_h.max((p_h - perm_h).abs());
    }
    for groups in [
        vec![vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]],
        vec![vec![4.0; 3], vec![4.0; 5]],
    ] {
        let (f, p_f) = anova_oneway(&groups).map_err(|e| e.to_string())?;
        let (h, p_h) = kruskal_wallis(&groups).map_err(|e| e.to_string())?;
        ensure!(f == 0.0 && p_f == 1.0 && h == 0.0 && p_h == 1.0, "identical groups: F {f} p {p_f}, H {h} p {p_h}");
    }
    Ok(format!("20 fixtures, worst |dp| ANOVA {worst_f:.4}, KW {worst_h:.4}"))
}
