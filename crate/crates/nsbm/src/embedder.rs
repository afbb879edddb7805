//! Sequence-based neural graph embedder: per-node representative sequences
//! (neighborhood order or random-walk order), a single-head self-attention
//! layer with residual connection, pooling to one vector per node, and an
//! optional negative-sampling skip-gram objective over walks.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::numerics::{Rng, Tape, ValueId};
use crate::{Error, Result};

/// Where a representative sequence came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReprMode {
    Neighborhood,
    Walk,
}

/// Ordered node sequence fed to the sequence embedder; the center node comes
/// first in neighborhood mode.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRepr {
    pub nodes: Vec<usize>,
    pub mode: ReprMode,
}

/// Sorting key for neighborhood representatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SortKey {
    /// Ascending `|deg(u) - deg(v)|`, ties by ascending node id.
    DegreeDiff,
    /// Descending Jaccard overlap of neighbor sets, ties by ascending node id.
    Jaccard,
}

/// Pooling of the attended sequence into a single vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pooling {
    Mean,
    SelfAttention,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbedderConfig {
    /// Representative budget m: sequences hold at most this many nodes.
    pub repr_budget: usize,
    /// Width of the attention score space (query/key projections).
    pub attention_width: usize,
    /// Hidden width of the self-attention pooling head.
    pub pool_hidden: usize,
    /// Output embedding dimension.
    pub d_out: usize,
    pub pooling: Pooling,
    pub use_positions: bool,
    pub sort_key: SortKey,
}

impl Default for EmbedderConfig {
    fn default() -> Self {
        EmbedderConfig {
            repr_budget: 16,
            attention_width: 64,
            pool_hidden: 32,
            d_out: 32,
            pooling: Pooling::Mean,
            use_positions: true,
            sort_key: SortKey::DegreeDiff,
        }
    }
}

/// Builds the neighborhood representative of `v`: `v` first, then neighbors
/// under the configured sort key, truncated to `m - 1`.
pub fn build_repr(graph: &Graph, v: usize, m: usize, key: SortKey) -> NodeRepr {
    assert!(m >= 1, "representative budget must be at least 1");
    let mut nodes = Vec::with_capacity(m.min(graph.degree(v) + 1));
    nodes.push(v);
    let mut ranked: Vec<(f64, usize)> = match key {
        SortKey::DegreeDiff => {
            let dv = graph.degree(v) as f64;
            graph
                .neighbors(v)
                .iter()
                .map(|&(u, _)| ((graph.degree(u) as f64 - dv).abs(), u))
                .collect()
        }
        SortKey::Jaccard => graph
            .neighbors(v)
            .iter()
            .map(|&(u, _)| (-jaccard(graph, u, v), u))
            .collect(),
    };
    ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    for (_, u) in ranked.into_iter().take(m.saturating_sub(1)) {
        nodes.push(u);
    }
    NodeRepr {
        nodes,
        mode: ReprMode::Neighborhood,
    }
}

fn jaccard(graph: &Graph, u: usize, v: usize) -> f64 {
    let nu = graph.neighbors(u);
    let nv = graph.neighbors(v);
    if nu.is_empty() && nv.is_empty() {
        return 0.0;
    }
    let mut inter = 0usize;
    let (mut i, mut j) = (0usize, 0usize);
    while i < nu.len() && j < nv.len() {
        match nu[i].0.cmp(&nv[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    inter as f64 / (nu.len() + nv.len() - inter) as f64
}

/// Second-order biased random walk (return parameter `p`, in-out parameter
/// `q`) starting at `v`; the sequence keeps walk order and may terminate early
/// at a sink.
pub fn sample_walk(
    graph: &Graph,
    v: usize,
    length: usize,
    return_param: f64,
    inout_param: f64,
    rng: &mut Rng,
) -> NodeRepr {
    assert!(length >= 1, "walk length must be at least 1");
    let mut nodes = vec![v];
    let mut prev: Option<usize> = None;
    let mut current = v;
    while nodes.len() < length {
        let neighbors = graph.neighbors(current);
        if neighbors.is_empty() {
            break;
        }
        let weights: Vec<f64> = neighbors
            .iter()
            .map(|&(x, w)| {
                let bias = match prev {
                    None => 1.0,
                    Some(t) if x == t => 1.0 / return_param,
                    Some(t) if graph.has_edge(t, x) => 1.0,
                    Some(_) => 1.0 / inout_param,
                };
                w * bias
            })
            .collect();
        let pick = match rng.weighted_index(&weights) {
            Some(i) => i,
            None => break,
        };
        prev = Some(current);
        current = neighbors[pick].0;
        nodes.push(current);
    }
    NodeRepr {
        nodes,
        mode: ReprMode::Walk,
    }
}

/// Tape handles of the embedder's trainable arrays.
#[derive(Debug, Clone, Copy)]
pub struct EmbedderIds {
    /// Position-encoding table, [m, d_raw].
    pub pos: ValueId,
    /// Query/key projections, [attention_width, d_raw] each.
    pub wq: ValueId,
    pub wk: ValueId,
    /// Value projection, [d_raw, d_raw] (residual needs matching width).
    pub wv: ValueId,
    /// Self-attention pooling head.
    pub pool_w: ValueId,
    pub pool_b: ValueId,
    pub pool_v: ValueId,
    /// Output projection, [d_out, d_raw] and [d_out].
    pub out_w: ValueId,
    pub out_b: ValueId,
}

/// Embeds a batch of representative sequences against a raw-embedding matrix:
/// position encodings, one self-attention layer with residual connection,
/// pooling, output projection. Returns one row per sequence (its center).
pub fn embed_sequence(
    tape: &Tape,
    reprs: &[NodeRepr],
    raw: ValueId,
    ids: &EmbedderIds,
    config: &EmbedderConfig,
) -> Result<ValueId> {
    let d_raw = tape.shape(raw)[1];
    if reprs.is_empty() {
        return tape.constant(vec![0, config.d_out], Vec::new());
    }
    let scale = 1.0 / (config.attention_width.max(1) as f64).sqrt();
    let mut out_rows = Vec::with_capacity(reprs.len());
    for repr in reprs {
        let len = repr.nodes.len();
        if len == 0 {
            return Err(Error::Data("empty representative sequence".into()));
        }
        if len > config.repr_budget {
            return Err(Error::Data(format!(
                "sequence of {len} nodes exceeds the representative budget {}",
                config.repr_budget
            )));
        }
        let mut rows = tape.gather_rows(raw, &repr.nodes)?;
        if config.use_positions {
            let positions: Vec<usize> = (0..len).collect();
            let pos_rows = tape.gather_rows(ids.pos, &positions)?;
            rows = tape.add(rows, pos_rows)?;
        }
        let q = tape.matmul(rows, tape.transpose(ids.wq)?)?;
        let k = tape.matmul(rows, tape.transpose(ids.wk)?)?;
        let scores = tape.matmul(q, tape.transpose(k)?)?;
        let scores = tape.scale(scores, scale);
        let attn = tape.softmax_rows(scores)?;
        let values = tape.matmul(rows, tape.transpose(ids.wv)?)?;
        let ctx = tape.matmul(attn, values)?;
        let hidden = tape.add(rows, ctx)?;
        let pooled = match config.pooling {
            Pooling::Mean => {
                let col_sums = tape.sum_axis(hidden, 0)?;
                tape.scale(col_sums, 1.0 / len as f64)
            }
            Pooling::SelfAttention => {
                let h = tape.linear(hidden, ids.pool_w, ids.pool_b)?;
                let h = tape.tanh(h);
                let s = tape.matvec(h, ids.pool_v)?;
                let a = tape.softmax_rows(s)?;
                let ht = tape.transpose(hidden)?;
                tape.matvec(ht, a)?
            }
        };
        let pooled_row = tape.reshape(pooled, vec![1, d_raw])?;
        let out = tape.linear(pooled_row, ids.out_w, ids.out_b)?;
        // unit-norm rows keep pairwise similarity aggregates (and the
        // block-model loss built on them) bounded; unbounded embeddings
        // could inflate their norms without limit to game that loss
        let out = tape.normalize_rows(out)?;
        out_rows.push(tape.reshape(out, vec![config.d_out])?);
    }
    tape.stack_rows(&out_rows)
}

/// Skip-gram loss with uniform negative sampling: each (center, context) pair
/// within the window contributes `-ln sigma(x_c . x_ctx)` plus
/// `num_negatives` terms `-ln(1 - sigma(x_c . x_neg))`; mean over pairs.
pub fn skipgram_loss(
    tape: &Tape,
    walks: &[NodeRepr],
    window: usize,
    num_negatives: usize,
    x: ValueId,
    rng: &mut Rng,
) -> Result<ValueId> {
    let n_nodes = tape.shape(x)[0];
    let mut centers = Vec::new();
    let mut contexts = Vec::new();
    for walk in walks {
        let nodes = &walk.nodes;
        for i in 0..nodes.len() {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(nodes.len() - 1);
            for j in lo..=hi {
                if j != i {
                    centers.push(nodes[i]);
                    contexts.push(nodes[j]);
                }
            }
        }
    }
    if centers.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    let n_pairs = centers.len();
    let dot_sigmoid = |a: &[usize], b: &[usize]| -> Result<ValueId> {
        let xa = tape.gather_rows(x, a)?;
        let xb = tape.gather_rows(x, b)?;
        let prod = tape.mul(xa, xb)?;
        let dots = tape.sum_axis(prod, 1)?;
        Ok(tape.sigmoid(dots))
    };
    let pos = dot_sigmoid(&centers, &contexts)?;
    let pos_ln = tape.ln_guarded(pos)?;
    let mut total = tape.sum_all(pos_ln);
    if num_negatives > 0 {
        let mut neg_centers = Vec::with_capacity(n_pairs * num_negatives);
        let mut negatives = Vec::with_capacity(n_pairs * num_negatives);
        for &c in &centers {
            for _ in 0..num_negatives {
                neg_centers.push(c);
                negatives.push(rng.range(0..n_nodes));
            }
        }
        let neg = dot_sigmoid(&neg_centers, &negatives)?;
        let flipped = tape.scale(neg, -1.0);
        let one_minus = tape.add_scalar(flipped, 1.0);
        let neg_ln = tape.ln_guarded(one_minus)?;
        let neg_sum = tape.sum_all(neg_ln);
        total = tape.add(total, neg_sum)?;
    }
    Ok(tape.scale(total, -1.0 / n_pairs as f64))
}

// ---------------------------------------------------------------------------
// walk cache
// ---------------------------------------------------------------------------

const WALK_PAD: u32 = u32::MAX;

/// Pre-sampled walks, one record per start node, for reuse when embedding
/// fresh nodes from their neighbors' cached paths.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkCache {
    pub length: usize,
    pub walks: Vec<Vec<u32>>,
}

impl WalkCache {
    pub fn from_walks(walks: &[NodeRepr], length: usize) -> Self {
        WalkCache {
            length,
            walks: walks
                .iter()
                .map(|w| w.nodes.iter().map(|&n| n as u32).collect())
                .collect(),
        }
    }

    /// Binary format: `count: u32 LE`, `length: u32 LE`, then `count * length`
    /// 32-bit little-endian node ids, short walks padded with 0xFFFFFFFF.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::with_capacity(8 + self.walks.len() * self.length * 4);
        buf.extend_from_slice(&(self.walks.len() as u32).to_le_bytes());
        buf.extend_from_slice(&(self.length as u32).to_le_bytes());
        for walk in &self.walks {
            if walk.len() > self.length {
                return Err(Error::Data(format!(
                    "walk of {} nodes exceeds cache record length {}",
                    walk.len(),
                    self.length
                )));
            }
            for &n in walk {
                buf.extend_from_slice(&n.to_le_bytes());
            }
            for _ in walk.len()..self.length {
                buf.extend_from_slice(&WALK_PAD.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<WalkCache> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return Err(Error::Parse("walk cache: truncated header".into()));
        }
        let count = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let length = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let expected = 8 + count * length * 4;
        if bytes.len() != expected {
            return Err(Error::Parse(format!(
                "walk cache: expected {expected} bytes for {count} walks of length {length}, found {}",
                bytes.len()
            )));
        }
        let mut walks = Vec::with_capacity(count);
        for w in 0..count {
            let mut walk = Vec::with_capacity(length);
            for i in 0..length {
                let off = 8 + (w * length + i) * 4;
                let v = u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
                if v != WALK_PAD {
                    walk.push(v);
                }
            }
            walks.push(walk);
        }
        Ok(WalkCache { length, walks })
    }

    /// Representative for `v` assembled from its neighbors' cached walks
    /// instead of sampling fresh paths: `v` first, then up to `m - 1` distinct
    /// nodes drawn from the pooled cached path nodes.
    pub fn neighbor_repr(&self, graph: &Graph, v: usize, m: usize, rng: &mut Rng) -> NodeRepr {
        let mut pool: Vec<usize> = Vec::new();
        for &(u, _) in graph.neighbors(v) {
            if let Some(walk) = self.walks.get(u) {
                pool.extend(walk.iter().map(|&n| n as usize));
            }
        }
        pool.sort_unstable();
        pool.dedup();
        let mut nodes = vec![v];
        let picks = rng.sample_indices(pool.len(), m.saturating_sub(1));
        for i in picks {
            if pool[i] != v && nodes.len() < m {
                nodes.push(pool[i]);
            }
        }
        NodeRepr {
            nodes,
            mode: ReprMode::Walk,
        }
    }
}
