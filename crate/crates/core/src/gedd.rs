//! Fixed-size graph extraction.
//!
//! Splits a cohort graph of arbitrary size into graphs of exactly `eta` nodes
//! without dropping anybody:
//!
//! * components of size `eta` are emitted whole;
//! * larger components are carved into `eta`-sized pieces, keeping strong
//!   ties inside a piece, and the remainder joins the residue;
//! * residue fragments are packed into `eta`-sized bins (first-fit,
//!   largest first), carving fragments only when bins cannot otherwise be
//!   filled exactly;
//! * the last partial bin is padded by repeating its own nodes.

use serde::Serialize;
use thiserror::Error;

use crate::commgraph::{connected_components, WeightedGraph};

#[derive(Debug, Error, PartialEq)]
pub enum GeddError {
    #[error("eta must be at least 1")]
    ZeroEta,
}

/// One node slot of an extracted graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Slot {
    /// Index of the node in the source graph.
    pub src: usize,
    /// True for repetition-padding copies; only the first occurrence of a
    /// node is scored.
    pub duplicated: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedGraph {
    pub graph: WeightedGraph,
    pub slots: Vec<Slot>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeddOutput {
    pub graphs: Vec<ExtractedGraph>,
    /// Set when `eta` exceeds the number of nodes in the input.
    pub degenerate: bool,
}

#[derive(Debug, Serialize)]
pub struct ProvenanceRecord<'a> {
    pub out_graph: usize,
    pub out_slot: usize,
    pub src_node: &'a str,
    pub duplicated: bool,
}

impl GeddOutput {
    pub fn provenance<'a>(&self, source: &'a WeightedGraph) -> Vec<ProvenanceRecord<'a>> {
        let mut out = Vec::new();
        for (gi, eg) in self.graphs.iter().enumerate() {
            for (si, slot) in eg.slots.iter().enumerate() {
                out.push(ProvenanceRecord {
                    out_graph: gi,
                    out_slot: si,
                    src_node: &source.node_ids[slot.src],
                    duplicated: slot.duplicated,
                });
            }
        }
        out
    }

    pub fn provenance_json(&self, source: &WeightedGraph) -> String {
        serde_json::to_string(&self.provenance(source)).expect("provenance serializes")
    }

    pub fn duplicated(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self
            .graphs
            .iter()
            .flat_map(|g| g.slots.iter().filter(|s| s.duplicated).map(|s| s.src))
            .collect();
        d.sort_unstable();
        d.dedup();
        d
    }
}

/// Partition `g` into graphs of exactly `eta` nodes.
pub fn gedd_partition(g: &WeightedGraph, eta: usize) -> Result<GeddOutput, GeddError> {
    if eta == 0 {
        return Err(GeddError::ZeroEta);
    }
    let n = g.n();
    let mut main: Vec<Vec<usize>> = Vec::new();
    let mut residue: Vec<Vec<usize>> = Vec::new();
    for comp in connected_components(g) {
        let q = comp.len();
        if q == eta {
            main.push(comp);
        } else if q < eta {
            residue.push(comp);
        } else {
            let sub = g.induced(&comp);
            let mut pieces: Vec<Vec<usize>> = split_indices(&sub, eta)
                .into_iter()
                .map(|p| p.into_iter().map(|i| comp[i]).collect())
                .collect();
            if q % eta != 0 {
                residue.push(pieces.pop().expect("at least two pieces"));
            }
            main.extend(pieces);
        }
    }

    let (full, leftover) = pack_residue(g, residue, eta);
    main.extend(full);

    let mut graphs: Vec<ExtractedGraph> = main
        .into_iter()
        .map(|nodes| extract(g, &nodes, &[]))
        .collect();
    if !leftover.is_empty() {
        let pad: Vec<usize> = leftover
            .iter()
            .cycle()
            .take(eta - leftover.len())
            .copied()
            .collect();
        graphs.push(extract(g, &leftover, &pad));
    }
    Ok(GeddOutput {
        graphs,
        degenerate: eta > n,
    })
}

fn extract(g: &WeightedGraph, nodes: &[usize], pad: &[usize]) -> ExtractedGraph {
    let mut graph = g.induced(nodes);
    let mut slots: Vec<Slot> = nodes
        .iter()
        .map(|&src| Slot {
            src,
            duplicated: false,
        })
        .collect();
    if !pad.is_empty() {
        let k = nodes.len() + pad.len();
        let mut adj = ndarray::Array2::zeros((k, k));
        adj.slice_mut(ndarray::s![..nodes.len(), ..nodes.len()])
            .assign(&graph.adj);
        graph.adj = adj;
        let mut copies = vec![0usize; g.n()];
        for &src in pad {
            copies[src] += 1;
            graph
                .node_ids
                .push(format!("{}#{}", g.node_ids[src], copies[src]));
            slots.push(Slot {
                src,
                duplicated: true,
            });
        }
    }
    ExtractedGraph { graph, slots }
}

/// Pack residue fragments into bins of `eta` nodes. Returns the full bins and
/// the final partial bin (empty when everything packed exactly).
fn pack_residue(
    g: &WeightedGraph,
    mut residue: Vec<Vec<usize>>,
    eta: usize,
) -> (Vec<Vec<usize>>, Vec<usize>) {
    // descending size, ties by smallest member
    residue.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut bins: Vec<Vec<Vec<usize>>> = Vec::new();
    let mut fill: Vec<usize> = Vec::new();
    for frag in residue {
        match fill.iter().position(|&f| f + frag.len() <= eta) {
            Some(b) => {
                fill[b] += frag.len();
                bins[b].push(frag);
            }
            None => {
                fill.push(frag.len());
                bins.push(vec![frag]);
            }
        }
    }

    let mut full = Vec::new();
    let mut open: Vec<Vec<usize>> = Vec::new();
    for (bin, f) in bins.into_iter().zip(fill) {
        if f == eta {
            full.push(bin.concat());
        } else {
            open.extend(bin);
        }
    }

    // Bins first-fit could not complete: refill them in order, carving a
    // fragment at its weakest ties whenever it overflows the current bin.
    open.sort_by(|a, b| b.len().cmp(&a.len()).then(a[0].cmp(&b[0])));
    let mut current: Vec<usize> = Vec::new();
    for mut frag in open {
        while current.len() + frag.len() > eta {
            let need = eta - current.len();
            let sub = g.induced(&frag);
            let piece = grow_piece(&sub, &(0..frag.len()).collect::<Vec<_>>(), need);
            let taken: Vec<usize> = piece.iter().map(|&i| frag[i]).collect();
            frag.retain(|v| !taken.contains(v));
            current.extend(taken);
            current.sort_unstable();
            full.push(std::mem::take(&mut current));
        }
        current.extend(frag);
        if current.len() == eta {
            full.push(std::mem::take(&mut current));
        }
    }
    (full, current)
}

/// Split a component larger than `eta` into `⌈q/eta⌉` pieces: all of size
/// `eta` except the last, which holds `q mod eta` nodes (or `eta` when the
/// division is exact).
pub fn split_component(component: &WeightedGraph, eta: usize) -> Vec<WeightedGraph> {
    split_indices(component, eta)
        .iter()
        .map(|p| component.induced(p))
        .collect()
}

fn split_indices(component: &WeightedGraph, eta: usize) -> Vec<Vec<usize>> {
    let q = component.n();
    let mut remaining: Vec<usize> = (0..q).collect();
    let mut pieces = Vec::new();
    while remaining.len() > eta {
        let piece = grow_piece(component, &remaining, eta);
        remaining.retain(|v| !piece.contains(v));
        pieces.push(piece);
    }
    pieces.push(remaining);
    pieces
}

/// Greedily grow a piece of `size` nodes out of `pool`: seed at the node with
/// the largest weighted degree inside the pool, then repeatedly absorb the
/// pool node with the strongest total tie to the piece. Ties go to the lower
/// index. Returned indices are sorted.
fn grow_piece(g: &WeightedGraph, pool: &[usize], size: usize) -> Vec<usize> {
    let strength = |v: usize, set: &[usize]| -> f64 { set.iter().map(|&u| g.adj[[v, u]]).sum() };
    let mut left: Vec<usize> = pool.to_vec();
    let mut piece: Vec<usize> = Vec::with_capacity(size);
    let pick = |left: &[usize], score: &dyn Fn(usize) -> f64| -> usize {
        let mut best = 0;
        for k in 1..left.len() {
            let (s, b) = (score(left[k]), score(left[best]));
            if s > b || (s == b && left[k] < left[best]) {
                best = k;
            }
        }
        best
    };
    let seed = pick(&left, &|v| strength(v, pool));
    piece.push(left.swap_remove(seed));
    while piece.len() < size {
        let k = {
            let tie = |v: usize| strength(v, &piece);
            let best = pick(&left, &tie);
            if tie(left[best]) > 0.0 {
                best
            } else {
                // nothing attached to the piece; restart from the strongest
                // remaining node
                pick(&left, &|v| strength(v, &left))
            }
        };
        piece.push(left.swap_remove(k));
    }
    piece.sort_unstable();
    piece
}

/// Number of graphs `gedd_partition` emits for `n` nodes.
pub fn expected_count(n: usize, eta: usize) -> usize {
    n.div_ceil(eta)
}
