//! The neural block-model core: soft membership, community similarity, the
//! loss terms of the joint objective, community embeddings with clipping,
//! major-assignment bookkeeping and community-first batch construction.
//!
//! Tape-building functions here return [`ValueId`]s so heads and training
//! loops can compose them; `*_value` variants compute the same quantity
//! directly (with order-canonical summation, so community-index permutations
//! leave results bit-identical).

use serde::{Deserialize, Serialize};

use crate::graph::Graph;
use crate::numerics::{ln_guarded, stable_sum, Rng, Tape, ValueId};
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// assignments and batches
// ---------------------------------------------------------------------------

/// Per-node major community assignment. Real communities are `0..k`; the
/// value `k` denotes the pseudo-community when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignments {
    pub k: usize,
    pub pseudo_enabled: bool,
    pub major: Vec<usize>,
}

impl Assignments {
    pub fn pseudo_index(&self) -> usize {
        self.k
    }

    pub fn members_of(&self, community: usize) -> Vec<usize> {
        self.major
            .iter()
            .enumerate()
            .filter(|(_, &c)| c == community)
            .map(|(v, _)| v)
            .collect()
    }

    /// Community indices that currently hold at least one node, including the
    /// pseudo-community when enabled and non-empty.
    pub fn nonempty_communities(&self) -> Vec<usize> {
        let top = if self.pseudo_enabled {
            self.k + 1
        } else {
            self.k
        };
        let mut counts = vec![0usize; top];
        for &c in &self.major {
            counts[c] += 1;
        }
        (0..top).filter(|&c| counts[c] > 0).collect()
    }
}

/// Greedy seeded growth: K times, seed the highest-degree unassigned node and
/// keep absorbing frontier neighbors whose edge weight into this community is
/// at least half of their edge weight into assigned nodes overall, capped at
/// `ceil(|V| / K)` members per community (unbounded absorption would pull any
/// connected graph into the first community). Leftovers go to the
/// pseudo-community, or round-robin onto the smallest communities when the
/// pseudo-community is disabled.
pub fn init_assignment(graph: &Graph, k: usize, pseudo_enabled: bool) -> Result<Assignments> {
    if k == 0 {
        return Err(Error::Usage("init_assignment: K must be at least 1".into()));
    }
    let n = graph.num_nodes();
    let cap = n.div_ceil(k);
    let mut assigned: Vec<Option<usize>> = vec![None; n];
    for community in 0..k {
        let seed = (0..n)
            .filter(|&v| assigned[v].is_none())
            .max_by(|&a, &b| {
                graph
                    .degree(a)
                    .cmp(&graph.degree(b))
                    .then(b.cmp(&a)) // tie -> lowest id
            });
        let seed = match seed {
            Some(s) => s,
            None => break,
        };
        assigned[seed] = Some(community);
        let mut size = 1usize;
        while size < cap {
            let mut absorbed: Vec<(f64, usize)> = Vec::new();
            for v in 0..n {
                if assigned[v].is_some() {
                    continue;
                }
                let mut into_community = 0.0;
                let mut into_assigned = 0.0;
                for &(u, w) in graph.neighbors(v) {
                    if let Some(c) = assigned[u] {
                        into_assigned += w;
                        if c == community {
                            into_community += w;
                        }
                    }
                }
                if into_community > 0.0 && into_community >= 0.5 * into_assigned {
                    absorbed.push((into_community / into_assigned, v));
                }
            }
            if absorbed.is_empty() {
                break;
            }
            // strongest anchors first, ties by id, truncated at the cap
            absorbed.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
            for (_, v) in absorbed.into_iter().take(cap - size) {
                assigned[v] = Some(community);
                size += 1;
            }
        }
    }
    let mut major: Vec<usize> = Vec::with_capacity(n);
    if pseudo_enabled {
        for a in &assigned {
            major.push(a.unwrap_or(k));
        }
    } else {
        let mut sizes = vec![0usize; k];
        for a in assigned.iter().flatten() {
            sizes[*a] += 1;
        }
        let mut resolved = assigned.clone();
        for v in 0..n {
            if resolved[v].is_none() {
                let smallest = (0..k).min_by_key(|&c| (sizes[c], c)).unwrap();
                resolved[v] = Some(smallest);
                sizes[smallest] += 1;
            }
        }
        for a in resolved {
            major.push(a.unwrap());
        }
    }
    Ok(Assignments {
        k,
        pseudo_enabled,
        major,
    })
}

/// Uniformly samples `c` non-empty communities, then `batch_size` distinct
/// nodes from their union (all of them when the union is smaller). The batch
/// is returned in ascending node order.
pub fn sample_batch(
    assignments: &Assignments,
    c: usize,
    batch_size: usize,
    rng: &mut Rng,
) -> Vec<usize> {
    let candidates = assignments.nonempty_communities();
    if candidates.is_empty() {
        return Vec::new();
    }
    let picks = rng.sample_indices(candidates.len(), c.max(1));
    let mut union: Vec<usize> = Vec::new();
    for pi in picks {
        union.extend(assignments.members_of(candidates[pi]));
    }
    union.sort_unstable();
    let mut batch = if union.len() <= batch_size {
        union
    } else {
        rng.shuffle(&mut union);
        union.truncate(batch_size);
        union
    };
    batch.sort_unstable();
    batch
}

/// Sets each batch node's major assignment to the argmax of its membership
/// row (ties toward the lowest index); nodes outside the batch are untouched.
pub fn update_assignment(
    assignments: &mut Assignments,
    batch_nodes: &[usize],
    z_rows: &[f64],
    cols: usize,
) -> Result<()> {
    if batch_nodes.len() * cols != z_rows.len() {
        return Err(Error::Shape(format!(
            "update_assignment: {} membership values for {} nodes x {} columns",
            z_rows.len(),
            batch_nodes.len(),
            cols
        )));
    }
    for (i, &v) in batch_nodes.iter().enumerate() {
        let row = &z_rows[i * cols..(i + 1) * cols];
        let mut best = 0;
        for (j, &p) in row.iter().enumerate() {
            if p > row[best] {
                best = j;
            }
        }
        assignments.major[v] = best;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// membership and similarity
// ---------------------------------------------------------------------------

/// Soft membership: `Z = softmax(linear(X))`, with K+1 columns when the
/// pseudo-community is enabled (the linear layer decides the width).
pub fn membership(tape: &Tape, x: ValueId, w: ValueId, b: ValueId) -> Result<ValueId> {
    let logits = tape.linear(x, w, b)?;
    tape.softmax_rows(logits)
}

/// Flat row-major batch adjacency (weights, zero diagonal) for a node subset.
pub fn batch_adjacency(graph: &Graph, nodes: &[usize]) -> Vec<f64> {
    let nb = nodes.len();
    let mut a = vec![0.0; nb * nb];
    for (i, &u) in nodes.iter().enumerate() {
        for (j, &v) in nodes.iter().enumerate() {
            if i != j {
                if let Some(w) = graph.edge_weight(u, v) {
                    a[i * nb + j] = w;
                }
            }
        }
    }
    a
}

/// Random-walk-normalized batch adjacency: each entry is the edge weight over
/// the node's full-graph weighted degree, so row products stay within [0, 1].
/// This is the "appropriate matrix representing E" the training path feeds
/// into the similarity aggregate; with unit-norm embeddings and the 1/sqrt(2)
/// input scaling, per-pair similarity is capped at 1 and the block-model loss
/// keeps its count-world shape (concentrated blocks beat one merged blob).
pub fn batch_adjacency_normalized(graph: &Graph, nodes: &[usize]) -> Vec<f64> {
    let nb = nodes.len();
    let mut a = vec![0.0; nb * nb];
    for (i, &u) in nodes.iter().enumerate() {
        let deg_u = graph.weighted_degree(u);
        if deg_u <= 0.0 {
            continue;
        }
        for (j, &v) in nodes.iter().enumerate() {
            if i != j {
                if let Some(w) = graph.edge_weight(u, v) {
                    a[i * nb + j] = w / deg_u;
                }
            }
        }
    }
    a
}

/// Community similarity over a batch: `C = Zᵀ (X Xᵀ + A Aᵀ) Z`, with the
/// pseudo column already dropped from `z` by the caller. Negative entries
/// (possible since embeddings are signed) clip to zero, keeping C a valid
/// similarity for the guarded-logarithm loss.
pub fn community_similarity(
    tape: &Tape,
    z: ValueId,
    x: ValueId,
    a_batch: ValueId,
) -> Result<ValueId> {
    let xt = tape.transpose(x)?;
    let xxt = tape.matmul(x, xt)?;
    let at = tape.transpose(a_batch)?;
    let aat = tape.matmul(a_batch, at)?;
    let m = tape.add(xxt, aat)?;
    let zt = tape.transpose(z)?;
    let zm = tape.matmul(zt, m)?;
    let c = tape.matmul(zm, z)?;
    Ok(tape.clip_below(c, 0.0))
}

// ---------------------------------------------------------------------------
// loss terms
// ---------------------------------------------------------------------------

/// Block-model loss on a similarity matrix `c` ([k,k]) and community sizes
/// (column sums of Z, pseudo excluded):
/// `-( sum c ln c - sum_i ln(n_i) row_i(c) - sum_j col_j(c) ln(n_j) )`,
/// logarithms guarded by 1e-12 so `0 ln 0 = 0`.
pub fn sbm_loss(tape: &Tape, c: ValueId, sizes: ValueId) -> Result<ValueId> {
    let ln_c = tape.ln_guarded(c)?;
    let c_ln_c = tape.mul(c, ln_c)?;
    let t1 = tape.sum_all(c_ln_c);
    let row_sums = tape.sum_axis(c, 1)?;
    let col_sums = tape.sum_axis(c, 0)?;
    let ln_sizes = tape.ln_guarded(sizes)?;
    let t2 = tape.dot(ln_sizes, row_sums)?;
    let t3 = tape.dot(col_sums, ln_sizes)?;
    let inner = tape.sub(t1, t2)?;
    let inner = tape.sub(inner, t3)?;
    Ok(tape.scale(inner, -1.0))
}

/// Value-route twin of [`sbm_loss`]; bit-identical under any permutation of
/// community indices applied to both `c` and `sizes`.
pub fn sbm_loss_value(c: &[f64], k: usize, sizes: &[f64]) -> f64 {
    debug_assert_eq!(c.len(), k * k);
    debug_assert_eq!(sizes.len(), k);
    let ln_sizes: Vec<f64> = sizes.iter().map(|&n| ln_guarded(n)).collect();
    let mut terms = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            let cij = c[i * k + j];
            terms.push(cij * (ln_guarded(cij) - ln_sizes[i] - ln_sizes[j]));
        }
    }
    -stable_sum(&mut terms)
}

/// `alpha * cos(x1, x2)`; 0 when either vector is zero.
pub fn scaled_cosine(x1: &[f64], x2: &[f64], alpha: f64) -> f64 {
    let n1 = x1.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n2 = x2.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n1 <= 1e-300 || n2 <= 1e-300 {
        return 0.0;
    }
    let dot: f64 = x1.iter().zip(x2).map(|(a, b)| a * b).sum();
    alpha * dot / (n1 * n2)
}

/// Mean per-node entropy of the membership rows, all columns included
/// (a confident "in no community" is as good as a confident membership).
pub fn entropy_loss(tape: &Tape, z: ValueId) -> Result<ValueId> {
    let rows = tape.shape(z)[0].max(1);
    let ln_z = tape.ln_guarded(z)?;
    let z_ln_z = tape.mul(z, ln_z)?;
    let total = tape.sum_all(z_ln_z);
    Ok(tape.scale(total, -1.0 / rows as f64))
}

/// Value-route twin of [`entropy_loss`], exact under column permutations.
pub fn entropy_loss_value(z: &[f64], rows: usize, cols: usize) -> f64 {
    debug_assert_eq!(z.len(), rows * cols);
    let mut total = 0.0;
    for r in 0..rows {
        let mut terms: Vec<f64> = z[r * cols..(r + 1) * cols]
            .iter()
            .map(|&p| p * ln_guarded(p))
            .collect();
        total -= stable_sum(&mut terms);
    }
    total / rows.max(1) as f64
}

/// A linear layer's parameters on the tape.
#[derive(Debug, Clone, Copy)]
pub struct LinearIds {
    pub w: ValueId,
    pub b: ValueId,
}

/// Link-prediction loss over a batch. Each positive pair contributes
/// `-w ln sigma(alpha cos(L1 x1, L2 x2))` (w = edge weight normalized to the
/// batch max, 1 for unweighted graphs) and `num_negatives` uniformly sampled
/// non-adjacent batch pairs contribute `-ln(1 - sigma)`; the result is the
/// mean over all terms.
#[allow(clippy::too_many_arguments)]
pub fn link_loss(
    tape: &Tape,
    x: ValueId,
    positive_pairs: &[(usize, usize)],
    edge_weights: &[f64],
    num_negatives: usize,
    l1: LinearIds,
    l2: LinearIds,
    is_edge: impl Fn(usize, usize) -> bool,
    alpha: f64,
    rng: &mut Rng,
) -> Result<ValueId> {
    if positive_pairs.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    if positive_pairs.len() != edge_weights.len() {
        return Err(Error::Shape(format!(
            "link_loss: {} pairs vs {} weights",
            positive_pairs.len(),
            edge_weights.len()
        )));
    }
    let n_batch = tape.shape(x)[0];
    let mut neg_pairs: Vec<(usize, usize)> = Vec::new();
    if n_batch >= 2 {
        for _ in 0..positive_pairs.len() * num_negatives {
            for _attempt in 0..64 {
                let a = rng.range(0..n_batch);
                let b = rng.range(0..n_batch);
                if a != b && !is_edge(a, b) {
                    neg_pairs.push((a, b));
                    break;
                }
            }
        }
    }
    let score = |pairs: &[(usize, usize)]| -> Result<ValueId> {
        let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let xl = tape.gather_rows(x, &left)?;
        let xr = tape.gather_rows(x, &right)?;
        let pl = tape.linear(xl, l1.w, l1.b)?;
        let pr = tape.linear(xr, l2.w, l2.b)?;
        let cos = tape.cosine_rows(pl, pr)?;
        let logits = tape.scale(cos, alpha);
        Ok(tape.sigmoid(logits))
    };
    let pos_sigma = score(positive_pairs)?;
    let pos_ln = tape.ln_guarded(pos_sigma)?;
    let w_const = tape.constant_vector(edge_weights.to_vec());
    let pos_weighted = tape.mul(pos_ln, w_const)?;
    let mut total = tape.sum_all(pos_weighted);
    let mut n_terms = positive_pairs.len();
    if !neg_pairs.is_empty() {
        let neg_sigma = score(&neg_pairs)?;
        let flipped = tape.scale(neg_sigma, -1.0);
        let one_minus = tape.add_scalar(flipped, 1.0);
        let neg_ln = tape.ln_guarded(one_minus)?;
        let neg_sum = tape.sum_all(neg_ln);
        total = tape.add(total, neg_sum)?;
        n_terms += neg_pairs.len();
    }
    Ok(tape.scale(total, -1.0 / n_terms as f64))
}

/// Supervised membership loss: mean over labeled nodes of the negative log
/// probability of the true community; multi-label nodes average over labels.
pub fn label_loss(tape: &Tape, z: ValueId, labeled: &[(usize, Vec<usize>)]) -> Result<ValueId> {
    let cols = tape.shape(z)[1];
    let mut rows = Vec::new();
    let mut col_idx = Vec::new();
    let mut weights = Vec::new();
    let mut n_nodes = 0usize;
    for (node, labels) in labeled {
        if labels.is_empty() {
            continue;
        }
        for &l in labels {
            if l >= cols {
                return Err(Error::Data(format!(
                    "label {l} out of range for {cols} membership columns"
                )));
            }
            rows.push(*node);
            col_idx.push(l);
            weights.push(1.0 / labels.len() as f64);
        }
        n_nodes += 1;
    }
    if n_nodes == 0 {
        return Ok(tape.constant_scalar(0.0));
    }
    let probs = tape.gather_entries(z, &rows, &col_idx)?;
    let ln_p = tape.ln_guarded(probs)?;
    let w = tape.constant_vector(weights);
    let weighted = tape.mul(ln_p, w)?;
    let total = tape.sum_all(weighted);
    Ok(tape.scale(total, -1.0 / n_nodes as f64))
}

/// Per-term weights for the joint loss (all 1.0 as the objective is defined;
/// exposed for ablations).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub sbm: f64,
    pub entropy: f64,
    pub link: f64,
    pub labels: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            sbm: 1.0,
            entropy: 1.0,
            link: 1.0,
            labels: 1.0,
        }
    }
}

impl LossWeights {
    pub fn link_only() -> Self {
        LossWeights {
            sbm: 0.0,
            entropy: 0.0,
            link: 1.0,
            labels: 0.0,
        }
    }
}

/// Weighted contributions of the joint-loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sbm: f64,
    pub entropy: f64,
    pub link: f64,
    pub labels: Option<f64>,
    pub total: f64,
}

/// Sums the loss terms (each already a scalar on the tape) under the given
/// weights, returning the total and a value breakdown.
pub fn joint_loss(
    tape: &Tape,
    sbm: ValueId,
    entropy: ValueId,
    link: ValueId,
    labels: Option<ValueId>,
    weights: &LossWeights,
) -> Result<(ValueId, LossBreakdown)> {
    let ws = tape.scale(sbm, weights.sbm);
    let we = tape.scale(entropy, weights.entropy);
    let wl = tape.scale(link, weights.link);
    let mut total = tape.add(ws, we)?;
    total = tape.add(total, wl)?;
    let labels_part = match labels {
        Some(l) => {
            let wl = tape.scale(l, weights.labels);
            total = tape.add(total, wl)?;
            Some(tape.scalar_value(wl)?)
        }
        None => None,
    };
    let breakdown = LossBreakdown {
        sbm: tape.scalar_value(ws)?,
        entropy: tape.scalar_value(we)?,
        link: tape.scalar_value(wl)?,
        labels: labels_part,
        total: tape.scalar_value(total)?,
    };
    Ok((total, breakdown))
}

// ---------------------------------------------------------------------------
// community embeddings
// ---------------------------------------------------------------------------

/// Self-attention parameters for pooling community members into one vector.
#[derive(Debug, Clone, Copy)]
pub struct AttentionIds {
    /// Hidden projection, [h, d].
    pub w: ValueId,
    /// Hidden bias, [h].
    pub b: ValueId,
    /// Scoring vector, [h].
    pub v: ValueId,
}

/// One community's clipped member set and (optional) pooled embedding.
#[derive(Debug, Clone)]
pub struct CommunityEmbedding {
    pub members: Vec<usize>,
    /// Membership weights of the members (each >= the clip threshold).
    pub weights: Vec<f64>,
    /// Pooled community vector on the tape; `None` when the set is empty.
    pub vector: Option<ValueId>,
}

/// Clips membership at `theta_z` (no re-normalization), scales member
/// embedding rows by their membership weight, and pools each community with
/// tanh self-attention into one vector. Gradients flow back through both the
/// surviving membership entries and the member embeddings.
pub fn community_embeddings(
    tape: &Tape,
    z: ValueId,
    x: ValueId,
    k: usize,
    theta_z: f64,
    att: &AttentionIds,
) -> Result<Vec<CommunityEmbedding>> {
    let z_vals = tape.values(z);
    let cols = tape.shape(z)[1];
    let n = tape.shape(z)[0];
    if k > cols {
        return Err(Error::Shape(format!(
            "community_embeddings: K={k} exceeds membership width {cols}"
        )));
    }
    let mut out = Vec::with_capacity(k);
    for community in 0..k {
        let members: Vec<usize> = (0..n)
            .filter(|&v| z_vals[v * cols + community] >= theta_z)
            .collect();
        if members.is_empty() {
            out.push(CommunityEmbedding {
                members,
                weights: Vec::new(),
                vector: None,
            });
            continue;
        }
        let weights: Vec<f64> = members
            .iter()
            .map(|&v| z_vals[v * cols + community])
            .collect();
        let col_idx = vec![community; members.len()];
        let zcol = tape.gather_entries(z, &members, &col_idx)?;
        let xm = tape.gather_rows(x, &members)?;
        let scaled = tape.scale_rows(xm, zcol)?;
        let hidden = tape.linear(scaled, att.w, att.b)?;
        let activated = tape.tanh(hidden);
        let scores = tape.matvec(activated, att.v)?;
        let attn = tape.softmax_rows(scores)?;
        let scaled_t = tape.transpose(scaled)?;
        let vector = tape.matvec(scaled_t, attn)?;
        out.push(CommunityEmbedding {
            members,
            weights,
            vector: Some(vector),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classic_sbm::two_cliques;
    use crate::numerics::Tensor;

    #[test]
    fn membership_zero_weights_is_uniform() {
        let tape = Tape::new();
        let x = tape.constant(vec![3, 4], vec![0.5; 12]).unwrap();
        let w = tape.constant(vec![2, 4], vec![0.0; 8]).unwrap();
        let b = tape.constant_vector(vec![0.0, 0.0]);
        let z = membership(&tape, x, w, b).unwrap();
        for p in tape.values(z) {
            assert!((p - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn membership_large_logit_gap() {
        let tape = Tape::new();
        // logits [16, 0] via x = [1], w = [[16],[0]], b = 0
        let x = tape.constant(vec![1, 1], vec![1.0]).unwrap();
        let w = tape.constant(vec![2, 1], vec![16.0, 0.0]).unwrap();
        let b = tape.constant_vector(vec![0.0, 0.0]);
        let z = membership(&tape, x, w, b).unwrap();
        let v = tape.values(z);
        assert!((v[0] - 0.9999999).abs() < 1e-6);
        assert!((v[1] - 1.125e-7).abs() < 2e-8, "{}", v[1]);
        assert!((v[0] + v[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_identity_membership_reduces_to_aat() {
        // Z = I (each node its own community), X = 0 -> C = A Aᵀ
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0)], false).unwrap();
        let nodes = [0, 1, 2];
        let a = batch_adjacency(&g, &nodes);
        let tape = Tape::new();
        let a_id = tape.constant(vec![3, 3], a.clone()).unwrap();
        let x = tape.constant(vec![3, 2], vec![0.0; 6]).unwrap();
        let mut eye = vec![0.0; 9];
        for i in 0..3 {
            eye[i * 3 + i] = 1.0;
        }
        let z = tape.constant(vec![3, 3], eye).unwrap();
        let c = community_similarity(&tape, z, x, a_id).unwrap();
        // A Aᵀ for the path 0-1-2
        let expected = [1.0, 0.0, 1.0, 0.0, 2.0, 0.0, 1.0, 0.0, 1.0];
        let got = tape.values(c);
        for (g, e) in got.iter().zip(expected.iter()) {
            assert!((g - e).abs() < 1e-12, "{got:?}");
        }
    }

    #[test]
    fn similarity_triangle_single_community() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0), (1, 2, 1.0), (0, 2, 1.0)], false).unwrap();
        let a = batch_adjacency(&g, &[0, 1, 2]);
        let tape = Tape::new();
        let a_id = tape.constant(vec![3, 3], a).unwrap();
        let x = tape.constant(vec![3, 2], vec![0.0; 6]).unwrap();
        let z = tape.constant(vec![3, 1], vec![1.0; 3]).unwrap();
        let c = community_similarity(&tape, z, x, a_id).unwrap();
        assert!((tape.values(c)[0] - 12.0).abs() < 1e-12);
    }

    #[test]
    fn similarity_all_zero_inputs() {
        let tape = Tape::new();
        let a_id = tape.constant(vec![2, 2], vec![0.0; 4]).unwrap();
        let x = tape.constant(vec![2, 3], vec![0.0; 6]).unwrap();
        let z = tape.constant(vec![2, 2], vec![0.5; 4]).unwrap();
        let c = community_similarity(&tape, z, x, a_id).unwrap();
        assert!(tape.values(c).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sbm_loss_worked_example() {
        // C = [[4,1],[1,4]], sizes [2,2] -> loss = 4 ln 2
        let tape = Tape::new();
        let c = tape
            .constant(vec![2, 2], vec![4.0, 1.0, 1.0, 4.0])
            .unwrap();
        let sizes = tape.constant_vector(vec![2.0, 2.0]);
        let loss = sbm_loss(&tape, c, sizes).unwrap();
        let v = tape.scalar_value(loss).unwrap();
        assert!((v - 4.0 * 2.0f64.ln()).abs() < 1e-6, "{v}");
        // value route agrees
        let vv = sbm_loss_value(&[4.0, 1.0, 1.0, 4.0], 2, &[2.0, 2.0]);
        assert!((v - vv).abs() < 1e-9);
    }

    #[test]
    fn sbm_loss_zero_matrix_is_zero() {
        assert_eq!(sbm_loss_value(&[0.0; 9], 3, &[1.0, 2.0, 3.0]), 0.0);
    }

    #[test]
    fn sbm_loss_permutation_exactly_invariant() {
        let mut rng = Rng::new(4);
        let k = 5;
        let c: Vec<f64> = (0..k * k).map(|_| rng.uniform() * 10.0).collect();
        let sizes: Vec<f64> = (0..k).map(|_| 1.0 + rng.uniform() * 9.0).collect();
        let base = sbm_loss_value(&c, k, &sizes);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..k).collect();
            rng.shuffle(&mut perm);
            let mut cp = vec![0.0; k * k];
            let mut sp = vec![0.0; k];
            for i in 0..k {
                sp[perm[i]] = sizes[i];
                for j in 0..k {
                    cp[perm[i] * k + perm[j]] = c[i * k + j];
                }
            }
            assert_eq!(base.to_bits(), sbm_loss_value(&cp, k, &sp).to_bits());
        }
    }

    #[test]
    fn scaled_cosine_reference_points() {
        let a = [1.0, 2.0, -0.5];
        assert!((scaled_cosine(&a, &a, 16.0) - 16.0).abs() < 1e-9);
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((scaled_cosine(&a, &neg, 16.0) + 16.0).abs() < 1e-9);
        assert_eq!(scaled_cosine(&[1.0, 0.0], &[0.0, 2.0], 16.0), 0.0);
        assert_eq!(scaled_cosine(&[0.0, 0.0], &[1.0, 1.0], 16.0), 0.0);
    }

    #[test]
    fn entropy_loss_reference_points() {
        // one-hot rows -> 0
        let one_hot = [1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        assert!(entropy_loss_value(&one_hot, 2, 3).abs() < 1e-9);
        // uniform rows, 4 columns -> ln 4
        let uniform = vec![0.25; 8];
        assert!((entropy_loss_value(&uniform, 2, 4) - 4.0f64.ln()).abs() < 1e-9);
        // strictly between bounds otherwise
        let mixed = [0.7, 0.1, 0.1, 0.1];
        let h = entropy_loss_value(&mixed, 1, 4);
        assert!(h > 0.0 && h < 4.0f64.ln());
        // tape route agrees
        let tape = Tape::new();
        let z = tape.constant(vec![1, 4], mixed.to_vec()).unwrap();
        let l = entropy_loss(&tape, z).unwrap();
        assert!((tape.scalar_value(l).unwrap() - h).abs() < 1e-12);
    }

    #[test]
    fn entropy_loss_permutation_exactly_invariant() {
        let mut rng = Rng::new(8);
        let (rows, cols) = (6, 5);
        let mut z = vec![0.0; rows * cols];
        for r in 0..rows {
            let mut total = 0.0;
            for c in 0..cols {
                z[r * cols + c] = rng.uniform() + 0.01;
                total += z[r * cols + c];
            }
            for c in 0..cols {
                z[r * cols + c] /= total;
            }
        }
        let base = entropy_loss_value(&z, rows, cols);
        for _ in 0..20 {
            let mut perm: Vec<usize> = (0..cols).collect();
            rng.shuffle(&mut perm);
            let mut zp = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    zp[r * cols + perm[c]] = z[r * cols + c];
                }
            }
            assert_eq!(
                base.to_bits(),
                entropy_loss_value(&zp, rows, cols).to_bits()
            );
        }
    }

    fn linear_ids(tape: &Tape, d: usize, out: usize, scale: f64) -> LinearIds {
        // deterministic identity-ish projection
        let mut w = vec![0.0; out * d];
        for i in 0..out.min(d) {
            w[i * d + i] = scale;
        }
        LinearIds {
            w: tape.leaf(&Tensor::matrix(out, d, w).unwrap().trainable()),
            b: tape.leaf(&Tensor::vector(vec![0.0; out]).trainable()),
        }
    }

    #[test]
    fn link_loss_zero_embeddings_gives_ln2_per_term() {
        let tape = Tape::new();
        let x = tape.constant(vec![4, 3], vec![0.0; 12]).unwrap();
        let l1 = linear_ids(&tape, 3, 3, 1.0);
        let l2 = linear_ids(&tape, 3, 3, 1.0);
        let mut rng = Rng::new(7);
        let loss = link_loss(
            &tape,
            x,
            &[(0, 1), (2, 3)],
            &[1.0, 1.0],
            2,
            l1,
            l2,
            |_, _| false,
            16.0,
            &mut rng,
        )
        .unwrap();
        let v = tape.scalar_value(loss).unwrap();
        assert!((v - 2.0f64.ln()).abs() < 1e-9, "{v}");
    }

    #[test]
    fn link_loss_identical_projections_saturate() {
        let tape = Tape::new();
        let x = tape
            .constant(vec![2, 2], vec![0.6, 0.8, 0.6, 0.8])
            .unwrap();
        let l1 = linear_ids(&tape, 2, 2, 1.0);
        let l2 = linear_ids(&tape, 2, 2, 1.0);
        let mut rng = Rng::new(7);
        let loss = link_loss(
            &tape,
            x,
            &[(0, 1)],
            &[1.0],
            0,
            l1,
            l2,
            |_, _| true,
            16.0,
            &mut rng,
        )
        .unwrap();
        let v = tape.scalar_value(loss).unwrap();
        let expected = -(1.0 / (1.0 + (-16.0f64).exp())).ln();
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");
        assert!(v < 2e-7);
    }

    #[test]
    fn label_loss_reference_points() {
        let tape = Tape::new();
        let z = tape
            .constant(vec![2, 4], vec![1.0, 0.0, 0.0, 0.0, 0.25, 0.25, 0.25, 0.25])
            .unwrap();
        let l = label_loss(&tape, z, &[(0, vec![0])]).unwrap();
        assert!(tape.scalar_value(l).unwrap().abs() < 1e-9);
        let l = label_loss(&tape, z, &[(1, vec![2])]).unwrap();
        assert!((tape.scalar_value(l).unwrap() - 4.0f64.ln()).abs() < 1e-9);
        let err = label_loss(&tape, z, &[(0, vec![9])]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn joint_loss_totals_parts() {
        let tape = Tape::new();
        let s = tape.constant_scalar(1.5);
        let e = tape.constant_scalar(0.25);
        let l = tape.constant_scalar(2.0);
        let (total, bd) = joint_loss(&tape, s, e, l, None, &LossWeights::default()).unwrap();
        assert_eq!(tape.scalar_value(total).unwrap(), 3.75);
        assert_eq!(bd.total, bd.sbm + bd.entropy + bd.link);
        let zero_s = tape.constant_scalar(0.0);
        let zero_e = tape.constant_scalar(0.0);
        let zero_l = tape.constant_scalar(0.0);
        let (t0, _) =
            joint_loss(&tape, zero_s, zero_e, zero_l, None, &LossWeights::default()).unwrap();
        assert_eq!(tape.scalar_value(t0).unwrap(), 0.0);
    }

    fn attention_ids(tape: &Tape, d: usize, h: usize) -> AttentionIds {
        let mut rng = Rng::new(33);
        let w: Vec<f64> = (0..h * d).map(|_| rng.normal(0.0, 0.5)).collect();
        let v: Vec<f64> = (0..h).map(|_| rng.normal(0.0, 0.5)).collect();
        AttentionIds {
            w: tape.constant(vec![h, d], w).unwrap(),
            b: tape.constant_vector(vec![0.0; h]),
            v: tape.constant_vector(v),
        }
    }

    #[test]
    fn single_member_community_embedding_is_scaled_row() {
        let tape = Tape::new();
        let z = tape
            .constant(vec![2, 2], vec![0.9, 0.1, 0.05, 0.95])
            .unwrap();
        let x = tape
            .constant(vec![2, 3], vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0])
            .unwrap();
        let att = attention_ids(&tape, 3, 4);
        let embs = community_embeddings(&tape, z, x, 2, 0.1, &att).unwrap();
        assert_eq!(embs[0].members, vec![0]);
        let v = tape.values(embs[0].vector.unwrap());
        for (a, b) in v.iter().zip([0.9, 1.8, 2.7]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_members_pool_to_the_shared_row() {
        let tape = Tape::new();
        let z = tape.constant(vec![2, 1], vec![0.5, 0.5]).unwrap();
        let x = tape
            .constant(vec![2, 2], vec![2.0, -4.0, 2.0, -4.0])
            .unwrap();
        let att = attention_ids(&tape, 2, 3);
        let embs = community_embeddings(&tape, z, x, 1, 0.1, &att).unwrap();
        let v = tape.values(embs[0].vector.unwrap());
        for (a, b) in v.iter().zip([1.0, -2.0]) {
            assert!((a - b).abs() < 1e-12, "{v:?}");
        }
    }

    #[test]
    fn empty_community_is_flagged() {
        let tape = Tape::new();
        let z = tape.constant(vec![2, 2], vec![0.99, 0.01, 0.98, 0.02]).unwrap();
        let x = tape.constant(vec![2, 2], vec![1.0; 4]).unwrap();
        let att = attention_ids(&tape, 2, 3);
        let embs = community_embeddings(&tape, z, x, 2, 0.1, &att).unwrap();
        assert!(embs[1].vector.is_none());
        assert!(embs[1].members.is_empty());
    }

    #[test]
    fn init_assignment_recovers_two_cliques() {
        let g = two_cliques(5);
        let a = init_assignment(&g, 2, false).unwrap();
        assert_eq!(&a.major[..5], &[a.major[0]; 5]);
        assert_eq!(&a.major[5..], &[a.major[5]; 5]);
        assert_ne!(a.major[0], a.major[5]);
    }

    #[test]
    fn init_assignment_single_community_connected() {
        let g = Graph::from_edges(4, &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], false).unwrap();
        let a = init_assignment(&g, 1, true).unwrap();
        assert!(a.major.iter().all(|&c| c == 0));
    }

    #[test]
    fn init_assignment_edgeless_graph_goes_pseudo() {
        let g = Graph::from_edges(3, &[], false).unwrap();
        let a = init_assignment(&g, 2, true).unwrap();
        // seeds are still placed, everything else lands in the pseudo-community
        let pseudo = a.pseudo_index();
        assert_eq!(a.major.iter().filter(|&&c| c == pseudo).count(), 1);
        let b = init_assignment(&g, 2, false).unwrap();
        assert!(b.major.iter().all(|&c| c < 2));
    }

    #[test]
    fn sample_batch_stays_in_sampled_communities() {
        let assignments = Assignments {
            k: 4,
            pseudo_enabled: false,
            major: (0..40).map(|v| v / 10).collect(),
        };
        let mut rng = Rng::new(3);
        for _ in 0..50 {
            let batch = sample_batch(&assignments, 2, 8, &mut rng);
            assert_eq!(batch.len(), 8);
            let mut communities: Vec<usize> = batch.iter().map(|&v| assignments.major[v]).collect();
            communities.sort_unstable();
            communities.dedup();
            assert!(communities.len() <= 2);
            let mut sorted = batch.clone();
            sorted.dedup();
            assert_eq!(sorted.len(), batch.len(), "batch has duplicates");
        }
    }

    #[test]
    fn sample_batch_full_graph_when_everything_sampled() {
        let assignments = Assignments {
            k: 3,
            pseudo_enabled: false,
            major: (0..12).map(|v| v % 3).collect(),
        };
        let mut rng = Rng::new(3);
        let batch = sample_batch(&assignments, 3, 12, &mut rng);
        assert_eq!(batch, (0..12).collect::<Vec<_>>());
    }

    #[test]
    fn sample_batch_uniform_over_communities() {
        let assignments = Assignments {
            k: 4,
            pseudo_enabled: false,
            major: (0..40).map(|v| v / 10).collect(),
        };
        let mut rng = Rng::new(11);
        let mut hits = [0usize; 4];
        for _ in 0..10_000 {
            let batch = sample_batch(&assignments, 1, 1, &mut rng);
            hits[assignments.major[batch[0]]] += 1;
        }
        for h in hits {
            assert!(
                (h as i64 - 2500).abs() <= 150,
                "community draw counts {hits:?}"
            );
        }
    }

    #[test]
    fn update_assignment_rules() {
        let mut a = Assignments {
            k: 2,
            pseudo_enabled: true,
            major: vec![0, 0, 0],
        };
        // one-hot -> that index; tie -> lowest; outside batch untouched
        update_assignment(&mut a, &[0, 1], &[0.0, 0.0, 1.0, 0.4, 0.4, 0.2], 3).unwrap();
        assert_eq!(a.major, vec![2, 0, 0]);
    }
}
