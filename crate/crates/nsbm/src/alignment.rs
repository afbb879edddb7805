//! Graph alignment head: a pair of linear projections into a shared space,
//! the alignment loss with entropy regularization, community-first batch
//! training, and exact nearest-neighbor matching over projected embeddings.

use serde::{Deserialize, Serialize};

use crate::community::LinearIds;
use crate::framework::{bind_params, Framework};
use crate::knn::KdTree;
use crate::numerics::{Adam, Gradients, ParamStore, Rng, Tape, Tensor, ValueId};
use crate::{Error, Result};

/// The two projection layers (shared output space) and the similarity scale.
#[derive(Debug, Clone)]
pub struct AlignmentModel {
    pub params: ParamStore,
    pub alpha: f64,
    pub entropy_weight: f64,
    /// Tied models share one projection for both sides.
    pub tied: bool,
    pub d_in: usize,
    pub d_out: usize,
}

impl AlignmentModel {
    pub fn new(
        d_in: usize,
        d_out: usize,
        alpha: f64,
        tied: bool,
        seed: u64,
    ) -> Result<AlignmentModel> {
        let mut rng = Rng::stream(seed, 50);
        let mut params = ParamStore::new();
        let std = 1.0 / (d_in as f64).sqrt();
        let mk = |rng: &mut Rng| -> Vec<f64> {
            (0..d_out * d_in).map(|_| rng.normal(0.0, std)).collect()
        };
        params.insert("align.l1.w", Tensor::matrix(d_out, d_in, mk(&mut rng))?)?;
        params.insert("align.l1.b", Tensor::vector(vec![0.0; d_out]))?;
        if !tied {
            params.insert("align.l2.w", Tensor::matrix(d_out, d_in, mk(&mut rng))?)?;
            params.insert("align.l2.b", Tensor::vector(vec![0.0; d_out]))?;
        }
        Ok(AlignmentModel {
            params,
            alpha,
            entropy_weight: 1.0,
            tied,
            d_in,
            d_out,
        })
    }

    /// Binds the projections; tied models reuse the same ids for both sides,
    /// so gradients accumulate into one layer.
    pub fn bind(
        &self,
        tape: &Tape,
        trainable: bool,
    ) -> Result<(LinearIds, LinearIds, Vec<(String, ValueId)>)> {
        let bindings = bind_params(tape, &self.params, trainable);
        let l1 = LinearIds {
            w: bindings.get("align.l1.w")?,
            b: bindings.get("align.l1.b")?,
        };
        let l2 = if self.tied {
            l1
        } else {
            LinearIds {
                w: bindings.get("align.l2.w")?,
                b: bindings.get("align.l2.b")?,
            }
        };
        Ok((l1, l2, bindings.entries().to_vec()))
    }

    /// Value-route projection of embedding rows through L1 (side = 0) or L2.
    pub fn project(&self, x: &Tensor, side: usize) -> Result<Tensor> {
        let tape = Tape::new();
        let (l1, l2, _) = self.bind(&tape, false)?;
        let ids = if side == 0 { l1 } else { l2 };
        let x_id = tape.constant(x.shape().to_vec(), x.values().to_vec())?;
        let out = tape.linear(x_id, ids.w, ids.b)?;
        Tensor::new(tape.shape(out), tape.values(out))
    }
}

/// Row-stochastic alignment scores: row-wise softmax over the scaled pairwise
/// cosine of the projected embeddings.
pub fn alignment_scores(
    tape: &Tape,
    x1: ValueId,
    x2: ValueId,
    l1: LinearIds,
    l2: LinearIds,
    alpha: f64,
) -> Result<ValueId> {
    let p1 = tape.linear(x1, l1.w, l1.b)?;
    let p2 = tape.linear(x2, l2.w, l2.b)?;
    let cos = tape.cosine_pairwise(p1, p2)?;
    let scaled = tape.scale(cos, alpha);
    tape.softmax_rows(scaled)
}

/// Alignment loss: mean squared Euclidean row distance between `L1(X1)` and
/// `P L2(X2)` plus the mean row entropy of P (P produced by
/// [`alignment_scores`] with the same layers).
pub fn alignment_loss(
    tape: &Tape,
    x1: ValueId,
    x2: ValueId,
    l1: LinearIds,
    l2: LinearIds,
    alpha: f64,
    entropy_weight: f64,
) -> Result<ValueId> {
    let p = alignment_scores(tape, x1, x2, l1, l2, alpha)?;
    let proj1 = tape.linear(x1, l1.w, l1.b)?;
    let proj2 = tape.linear(x2, l2.w, l2.b)?;
    let target = tape.matmul(p, proj2)?;
    let diff = tape.sub(proj1, target)?;
    let sq = tape.mul(diff, diff)?;
    let rows = tape.shape(x1)[0].max(1) as f64;
    let dist = tape.scale(tape.sum_all(sq), 1.0 / rows);
    let ln_p = tape.ln_guarded(p)?;
    let p_ln_p = tape.mul(p, ln_p)?;
    let entropy = tape.scale(tape.sum_all(p_ln_p), -1.0 / rows);
    let weighted_entropy = tape.scale(entropy, entropy_weight);
    tape.add(dist, weighted_entropy)
}

/// Negative-sampling classification on labeled cross-graph pairs: the true
/// partner scores toward 1, sampled G2 nodes toward 0.
fn label_classification_loss(
    tape: &Tape,
    x1: ValueId,
    x2: ValueId,
    pairs: &[(usize, usize)],
    num_negatives: usize,
    l1: LinearIds,
    l2: LinearIds,
    alpha: f64,
    rng: &mut Rng,
) -> Result<ValueId> {
    if pairs.is_empty() {
        return Ok(tape.constant_scalar(0.0));
    }
    let n2 = tape.shape(x2)[0];
    let score = |left: &[usize], right: &[usize]| -> Result<ValueId> {
        let a = tape.gather_rows(x1, left)?;
        let b = tape.gather_rows(x2, right)?;
        let pa = tape.linear(a, l1.w, l1.b)?;
        let pb = tape.linear(b, l2.w, l2.b)?;
        let cos = tape.cosine_rows(pa, pb)?;
        Ok(tape.sigmoid(tape.scale(cos, alpha)))
    };
    let left: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    let right: Vec<usize> = pairs.iter().map(|p| p.1).collect();
    let pos = score(&left, &right)?;
    let pos_ln = tape.ln_guarded(pos)?;
    let mut total = tape.sum_all(pos_ln);
    let mut terms = pairs.len();
    if num_negatives > 0 && n2 > 1 {
        let mut nl = Vec::with_capacity(pairs.len() * num_negatives);
        let mut nr = Vec::with_capacity(pairs.len() * num_negatives);
        for &(u, v) in pairs {
            for _ in 0..num_negatives {
                let mut w = rng.range(0..n2);
                if w == v {
                    w = (w + 1) % n2;
                }
                nl.push(u);
                nr.push(w);
            }
        }
        let neg = score(&nl, &nr)?;
        let one_minus = tape.add_scalar(tape.scale(neg, -1.0), 1.0);
        let neg_ln = tape.ln_guarded(one_minus)?;
        total = tape.add(total, tape.sum_all(neg_ln))?;
        terms += nl.len();
    }
    Ok(tape.scale(total, -1.0 / terms as f64))
}

/// Matching of each G1 node to its top-k G2 candidates under Euclidean
/// distance in the projected space. `score` is the negated distance (higher
/// is more similar); exact search, ties toward the lower G2 id.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Matching {
    /// Per G1 node: (g2 node, score) candidates, best first.
    pub candidates: Vec<Vec<(usize, f64)>>,
}

impl Matching {
    pub fn top1(&self) -> Vec<(usize, usize)> {
        self.candidates
            .iter()
            .enumerate()
            .filter_map(|(g1, c)| c.first().map(|&(g2, _)| (g1, g2)))
            .collect()
    }
}

/// Exact nearest-neighbor matching over projected embeddings (k-d tree; a
/// linear scan gives identical results and backs the tests).
pub fn match_nodes(proj1: &Tensor, proj2: &Tensor, k: usize) -> Result<Matching> {
    let d = proj1.cols();
    if d != proj2.cols() {
        return Err(Error::Shape(format!(
            "match_nodes: projected widths {} vs {}",
            d,
            proj2.cols()
        )));
    }
    let tree = KdTree::build(proj2.values(), d);
    let mut candidates = Vec::with_capacity(proj1.rows());
    for i in 0..proj1.rows() {
        let q = &proj1.values()[i * d..(i + 1) * d];
        let found = tree.nearest_k(q, k);
        candidates.push(found.into_iter().map(|(id, dist)| (id, -dist)).collect());
    }
    Ok(Matching { candidates })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignTrainConfig {
    pub epochs: usize,
    /// Communities sampled from G1 per batch (c).
    pub communities_per_batch: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Negatives per labeled pair in the classification term.
    pub num_negatives: usize,
    /// Labeled pairs sampled per step (when labels are supplied).
    pub labels_per_step: usize,
    pub seed: u64,
}

impl Default for AlignTrainConfig {
    fn default() -> Self {
        AlignTrainConfig {
            epochs: 30,
            communities_per_batch: 2,
            batch_size: 128,
            learning_rate: 5e-3,
            num_negatives: 5,
            labels_per_step: 64,
            seed: 0,
        }
    }
}

/// Community-first alignment training over two frozen community cores:
/// each step aligns a node batch from sampled G1 communities against their
/// currently best-matched G2 communities (community-level and node-level
/// alignment losses, plus negative-sampling classification when alignment
/// labels are supplied); each epoch ends with a community-embedding-only
/// batch, where the community-detection losses stay inactive.
pub fn train_alignment(
    fw1: &Framework,
    fw2: &Framework,
    model: &mut AlignmentModel,
    cfg: &AlignTrainConfig,
    labels: Option<&[(usize, usize)]>,
) -> Result<Vec<f64>> {
    let (x1, _) = fw1.full_forward()?;
    let (x2, _) = fw2.full_forward()?;
    let comm1 = frozen_community_embeddings(fw1)?;
    let comm2 = frozen_community_embeddings(fw2)?;
    let members1: Vec<Vec<usize>> = (0..fw1.model.k)
        .map(|c| fw1.assignments.members_of(c))
        .collect();
    let members2: Vec<Vec<usize>> = (0..fw2.model.k)
        .map(|c| fw2.assignments.members_of(c))
        .collect();
    let mut adam = Adam::new(cfg.learning_rate);
    let mut rng = Rng::stream(cfg.seed, 51);
    let mut history = Vec::new();
    let steps_per_epoch = fw1
        .graph
        .num_nodes()
        .div_ceil(cfg.batch_size)
        .max(1);
    for _epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            // (1) sample c G1 communities and a node batch from them
            let nonempty1: Vec<usize> = (0..fw1.model.k)
                .filter(|&c| !members1[c].is_empty())
                .collect();
            if nonempty1.is_empty() {
                break;
            }
            let picks = rng.sample_indices(nonempty1.len(), cfg.communities_per_batch.max(1));
            let picked1: Vec<usize> = picks.iter().map(|&i| nonempty1[i]).collect();
            let mut batch1: Vec<usize> = picked1
                .iter()
                .flat_map(|&c| members1[c].iter().copied())
                .collect();
            batch1.sort_unstable();
            batch1.dedup();
            if batch1.len() > cfg.batch_size {
                rng.shuffle(&mut batch1);
                batch1.truncate(cfg.batch_size);
                batch1.sort_unstable();
            }
            // (2) rank G2 communities against the picked G1 communities under
            // the current projections
            let mut batch2: Vec<usize> = Vec::new();
            if !comm1.is_empty() && !comm2.is_empty() {
                for &c1 in &picked1 {
                    if let Some(e1) = &comm1[c1] {
                        let mut ranked: Vec<(f64, usize)> = comm2
                            .iter()
                            .enumerate()
                            .filter_map(|(c2, e2)| {
                                e2.as_ref().map(|e2| (projected_distance(model, e1, e2), c2))
                            })
                            .collect();
                        ranked.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
                        for (_, c2) in ranked.into_iter().take(cfg.communities_per_batch.max(1)) {
                            batch2.extend(members2[c2].iter().copied());
                        }
                    }
                }
            }
            if batch2.is_empty() {
                batch2 = (0..fw2.graph.num_nodes()).collect();
            }
            batch2.sort_unstable();
            batch2.dedup();
            if batch2.len() > cfg.batch_size {
                rng.shuffle(&mut batch2);
                batch2.truncate(cfg.batch_size);
                batch2.sort_unstable();
            }
            // (3) node-level alignment loss on the two batches
            let tape = Tape::new();
            let (l1, l2, bindings) = model.bind(&tape, true)?;
            let x1b = gather_constant(&tape, &x1, &batch1)?;
            let x2b = gather_constant(&tape, &x2, &batch2)?;
            let mut total =
                alignment_loss(&tape, x1b, x2b, l1, l2, model.alpha, model.entropy_weight)?;
            // community-level alignment loss in the same step
            if let Some((c1m, c2m)) = community_matrices(&tape, &comm1, &comm2)? {
                let comm_loss =
                    alignment_loss(&tape, c1m, c2m, l1, l2, model.alpha, model.entropy_weight)?;
                total = tape.add(total, comm_loss)?;
            }
            if let Some(all_pairs) = labels {
                if !all_pairs.is_empty() {
                    let count = cfg.labels_per_step.min(all_pairs.len());
                    let picks = rng.sample_indices(all_pairs.len(), count);
                    let mut chosen: Vec<(usize, usize)> =
                        picks.into_iter().map(|i| all_pairs[i]).collect();
                    chosen.sort_unstable();
                    let x1_full = tape.constant(x1.shape().to_vec(), x1.values().to_vec())?;
                    let x2_full = tape.constant(x2.shape().to_vec(), x2.values().to_vec())?;
                    let cls = label_classification_loss(
                        &tape,
                        x1_full,
                        x2_full,
                        &chosen,
                        cfg.num_negatives,
                        l1,
                        l2,
                        model.alpha,
                        &mut rng,
                    )?;
                    total = tape.add(total, cls)?;
                }
            }
            let loss_value = tape.scalar_value(total)?;
            if !loss_value.is_finite() {
                return Err(Error::Numeric("non-finite alignment loss".into()));
            }
            let grads_raw = tape.backward(total)?;
            let grads = Gradients::collect(&tape, &grads_raw, &bindings);
            adam.step(&mut model.params, &grads)?;
            history.push(loss_value);
        }
        // epoch-end batch on community embeddings only; the community
        // detection losses are inactive here by construction
        let tape = Tape::new();
        let (l1, l2, bindings) = model.bind(&tape, true)?;
        if let Some((c1m, c2m)) = community_matrices(&tape, &comm1, &comm2)? {
            let loss = alignment_loss(&tape, c1m, c2m, l1, l2, model.alpha, model.entropy_weight)?;
            let loss_value = tape.scalar_value(loss)?;
            let grads_raw = tape.backward(loss)?;
            let grads = Gradients::collect(&tape, &grads_raw, &bindings);
            adam.step(&mut model.params, &grads)?;
            history.push(loss_value);
        }
    }
    Ok(history)
}

/// Community embedding values (pooled vectors) of a frozen framework.
fn frozen_community_embeddings(fw: &Framework) -> Result<Vec<Option<Vec<f64>>>> {
    let (tape, embs) = fw.community_embeddings()?;
    Ok(embs
        .into_iter()
        .map(|e| e.vector.map(|id| tape.values(id)))
        .collect())
}

fn projected_distance(model: &AlignmentModel, e1: &[f64], e2: &[f64]) -> f64 {
    let t1 = Tensor::matrix(1, e1.len(), e1.to_vec()).expect("row");
    let t2 = Tensor::matrix(1, e2.len(), e2.to_vec()).expect("row");
    let p1 = model.project(&t1, 0).expect("projection");
    let p2 = model.project(&t2, 1).expect("projection");
    p1.values()
        .iter()
        .zip(p2.values())
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

fn gather_constant(tape: &Tape, x: &Tensor, nodes: &[usize]) -> Result<ValueId> {
    let d = x.cols();
    let mut vals = Vec::with_capacity(nodes.len() * d);
    for &v in nodes {
        vals.extend_from_slice(&x.values()[v * d..(v + 1) * d]);
    }
    tape.constant(vec![nodes.len(), d], vals)
}

fn community_matrices(
    tape: &Tape,
    comm1: &[Option<Vec<f64>>],
    comm2: &[Option<Vec<f64>>],
) -> Result<Option<(ValueId, ValueId)>> {
    let rows1: Vec<&Vec<f64>> = comm1.iter().flatten().collect();
    let rows2: Vec<&Vec<f64>> = comm2.iter().flatten().collect();
    if rows1.is_empty() || rows2.is_empty() {
        return Ok(None);
    }
    let d = rows1[0].len();
    let flat1: Vec<f64> = rows1.iter().flat_map(|r| r.iter().copied()).collect();
    let flat2: Vec<f64> = rows2.iter().flat_map(|r| r.iter().copied()).collect();
    Ok(Some((
        tape.constant(vec![rows1.len(), d], flat1)?,
        tape.constant(vec![rows2.len(), d], flat2)?,
    )))
}
