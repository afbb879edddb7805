//! Correlated-anomaly detection head: clipped correlation graphs, an
//! attention-based approximation of the principal score, alarms, plus the
//! exact power-iteration oracle that doubles as the classical PCA baseline.

use serde::{Deserialize, Serialize};

use crate::community::{self, AttentionIds};
use crate::framework::{argmax_rows, bind_params, Framework, ModelConfig, TrainConfig};
use crate::graph::Graph;
use crate::numerics::{Adam, Gradients, ParamStore, Rng, Tape, Tensor, ValueId};
use crate::{Error, Result};

/// Number of per-feature attributes derived from a correlation graph.
pub const WINDOW_ATTR_DIM: usize = 5;

/// Clipped Pearson correlations of one window, stored symmetric with a zero
/// diagonal (the diagonal is not an edge).
#[derive(Debug, Clone)]
pub struct CorrelationGraph {
    pub num_features: usize,
    /// Row-major [d, d]; entries are 0 or in `[theta_corr, 1]`.
    pub matrix: Vec<f64>,
    pub theta_corr: f64,
}

/// Standardizes columns to zero mean and unit (population) variance;
/// zero-variance columns become all-zero and are flagged.
pub fn standardize_columns(features: &[f64], samples: usize, d: usize) -> (Vec<f64>, Vec<bool>) {
    let mut out = vec![0.0; samples * d];
    let mut zero_var = vec![false; d];
    for j in 0..d {
        let mut mean = 0.0;
        for t in 0..samples {
            mean += features[t * d + j];
        }
        mean /= samples as f64;
        let mut var = 0.0;
        for t in 0..samples {
            let c = features[t * d + j] - mean;
            var += c * c;
        }
        var /= samples as f64;
        if var <= 1e-24 {
            zero_var[j] = true;
            continue;
        }
        let std = var.sqrt();
        for t in 0..samples {
            out[t * d + j] = (features[t * d + j] - mean) / std;
        }
    }
    (out, zero_var)
}

/// Pearson correlation per feature pair with entries below `theta_corr`
/// zeroed (negative correlations are always clipped away for positive
/// thresholds). Needs at least two samples.
pub fn clipped_correlation(
    features: &[f64],
    samples: usize,
    d: usize,
    theta_corr: f64,
) -> Result<CorrelationGraph> {
    if samples < 2 {
        return Err(Error::Data(format!(
            "clipped_correlation: {samples} sample(s); need at least 2"
        )));
    }
    if features.len() != samples * d {
        return Err(Error::Shape(format!(
            "clipped_correlation: {} values for {samples} x {d}",
            features.len()
        )));
    }
    let (std_cols, _) = standardize_columns(features, samples, d);
    let inv_n = 1.0 / samples as f64;
    let mut matrix = vec![0.0; d * d];
    for i in 0..d {
        for j in (i + 1)..d {
            let mut c = 0.0;
            for t in 0..samples {
                c += std_cols[t * d + i] * std_cols[t * d + j];
            }
            let r = (c * inv_n).clamp(-1.0, 1.0);
            if r >= theta_corr {
                matrix[i * d + j] = r;
                matrix[j * d + i] = r;
            }
        }
    }
    Ok(CorrelationGraph {
        num_features: d,
        matrix,
        theta_corr,
    })
}

/// Mean absolute off-diagonal correlation of a calibration window; the clip
/// threshold rule is 1.5 times this value.
pub fn mean_abs_offdiag_correlation(features: &[f64], samples: usize, d: usize) -> Result<f64> {
    if samples < 2 || d < 2 {
        return Err(Error::Data(
            "correlation calibration needs >= 2 samples and >= 2 features".into(),
        ));
    }
    let (std_cols, _) = standardize_columns(features, samples, d);
    let inv_n = 1.0 / samples as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..d {
        for j in (i + 1)..d {
            let mut c = 0.0;
            for t in 0..samples {
                c += std_cols[t * d + i] * std_cols[t * d + j];
            }
            total += (c * inv_n).abs();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

impl CorrelationGraph {
    /// Correlation sub-matrix of a member set with the unit diagonal restored
    /// (the block is a correlation matrix again, suitable for scoring).
    pub fn subset_matrix(&self, members: &[usize]) -> Vec<f64> {
        let m = members.len();
        let d = self.num_features;
        let mut out = vec![0.0; m * m];
        for (a, &i) in members.iter().enumerate() {
            out[a * m + a] = 1.0;
            for (b, &j) in members.iter().enumerate() {
                if a != b {
                    out[a * m + b] = self.matrix[i * d + j];
                }
            }
        }
        out
    }

    /// Weighted graph over the features; node attributes summarize each
    /// feature's clipped-correlation profile (degree fraction, mean/max
    /// weight, share of strong mass, mean of the top-5 weights).
    pub fn to_graph(&self) -> Result<Graph> {
        let d = self.num_features;
        let mut edges = Vec::new();
        for i in 0..d {
            for j in (i + 1)..d {
                let w = self.matrix[i * d + j];
                if w > 0.0 {
                    edges.push((i, j, w));
                }
            }
        }
        let mut graph = Graph::from_edges(d, &edges, false)?;
        let mut attrs = Vec::with_capacity(d);
        for i in 0..d {
            let mut weights: Vec<f64> = (0..d)
                .filter(|&j| j != i)
                .map(|j| self.matrix[i * d + j])
                .filter(|&w| w > 0.0)
                .collect();
            weights.sort_by(|a, b| b.partial_cmp(a).unwrap());
            let nnz = weights.len();
            let total: f64 = weights.iter().sum();
            let strong: f64 = weights.iter().filter(|&&w| w >= 0.5).sum();
            let top5: f64 = weights.iter().take(5).sum::<f64>() / 5.0;
            attrs.push(vec![
                nnz as f64 / (d.max(2) - 1) as f64,
                if nnz > 0 { total / nnz as f64 } else { 0.0 },
                weights.first().copied().unwrap_or(0.0),
                if total > 1e-12 { strong / total } else { 0.0 },
                top5,
            ]);
        }
        graph.attributes = Some(attrs);
        Ok(graph)
    }
}

// ---------------------------------------------------------------------------
// principal scores
// ---------------------------------------------------------------------------

/// Top eigenpair of a symmetric non-negative-spectrum matrix by power
/// iteration. Converges when successive eigenvalue estimates move by at most
/// `tol * max(1, |lambda|)`; errors out with the final iterate residual after
/// `max_iters`.
fn power_iteration_top(
    matrix: &[f64],
    n: usize,
    tol: f64,
    max_iters: usize,
) -> Result<(f64, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Data("power iteration on an empty matrix".into()));
    }
    if n == 1 {
        return Ok((matrix[0], vec![1.0]));
    }
    // mildly tilted start vector so symmetric ties cannot leave it orthogonal
    // to the dominant eigenvector
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + 1e-3 * i as f64).collect();
    normalize(&mut v);
    let mut lambda = 0.0;
    let mut w = vec![0.0; n];
    for _ in 0..max_iters {
        matvec_sym(matrix, n, &v, &mut w);
        let new_lambda: f64 = v.iter().zip(&w).map(|(a, b)| a * b).sum();
        let wnorm = norm(&w);
        if wnorm <= 1e-300 {
            return Ok((0.0, v));
        }
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wnorm;
        }
        if (new_lambda - lambda).abs() <= tol * new_lambda.abs().max(1.0) {
            return Ok((new_lambda, v));
        }
        lambda = new_lambda;
    }
    matvec_sym(matrix, n, &v, &mut w);
    let residual = v
        .iter()
        .zip(&w)
        .map(|(vi, wi)| (wi - lambda * vi).abs())
        .fold(0.0, f64::max);
    Err(Error::Numeric(format!(
        "power iteration did not converge in {max_iters} iterations (residual {residual:.3e})"
    )))
}

fn matvec_sym(matrix: &[f64], n: usize, v: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let row = &matrix[i * n..(i + 1) * n];
        out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Exact principal score: top eigenvalue of a symmetric matrix divided by
/// `size`. Power iteration with tolerance 1e-9 and at most 10^4 iterations;
/// the validation oracle and the classical PCA detector's score.
pub fn exact_principal_score(matrix: &[f64], n: usize, size: usize) -> Result<f64> {
    let (lambda, _) = power_iteration_top(matrix, n, 1e-9, 10_000)?;
    Ok(lambda / size as f64)
}

/// Full-window principal score `lambda_max(corr) / d`, computed through the
/// sample-side Gram matrix when that is smaller (the nonzero spectra agree),
/// so wide windows do not require a d x d eigensolve.
pub fn full_window_principal_score(features: &[f64], samples: usize, d: usize) -> Result<f64> {
    if samples < 2 || d == 0 {
        return Err(Error::Data(
            "full-window score needs >= 2 samples and >= 1 feature".into(),
        ));
    }
    let (std_cols, _) = standardize_columns(features, samples, d);
    let inv_n = 1.0 / samples as f64;
    if d <= samples {
        let mut corr = vec![0.0; d * d];
        for i in 0..d {
            for j in i..d {
                let mut c = 0.0;
                for t in 0..samples {
                    c += std_cols[t * d + i] * std_cols[t * d + j];
                }
                c *= inv_n;
                corr[i * d + j] = c;
                corr[j * d + i] = c;
            }
        }
        exact_principal_score(&corr, d, d)
    } else {
        let mut gram = vec![0.0; samples * samples];
        for s in 0..samples {
            for t in s..samples {
                let mut c = 0.0;
                for j in 0..d {
                    c += std_cols[s * d + j] * std_cols[t * d + j];
                }
                c *= inv_n;
                gram[s * samples + t] = c;
                gram[t * samples + s] = c;
            }
        }
        let (lambda, _) = power_iteration_top(&gram, samples, 1e-9, 10_000)?;
        Ok(lambda / d as f64)
    }
}

/// Unnormalized attention weights over community member embeddings:
/// `alpha = v . tanh(W x + b)` per member.
pub fn attention_weights(tape: &Tape, members_x: ValueId, att: &AttentionIds) -> Result<ValueId> {
    let hidden = tape.linear(members_x, att.w, att.b)?;
    let activated = tape.tanh(hidden);
    tape.matvec(activated, att.v)
}

/// Variance-maximization objective with a unit-norm penalty:
/// `-var(X alpha) + 50 (alpha . alpha - 1)^2`. Driving it down pushes
/// `alpha` toward the top principal direction of the (standardized) member
/// columns, which is what makes the quadratic-form score approximate the
/// normalized top eigenvalue.
pub fn pca_loss(tape: &Tape, member_columns: ValueId, alpha: ValueId) -> Result<ValueId> {
    let projected = tape.matvec(member_columns, alpha)?;
    let mean = tape.mean_all(projected);
    let centered = tape.sub(projected, mean)?;
    let sq = tape.mul(centered, centered)?;
    let var = tape.mean_all(sq);
    let alpha_sq = tape.dot(alpha, alpha)?;
    let shifted = tape.add_scalar(alpha_sq, -1.0);
    let penalty = tape.mul(shifted, shifted)?;
    let neg_var = tape.scale(var, -1.0);
    let scaled_penalty = tape.scale(penalty, 50.0);
    tape.add(neg_var, scaled_penalty)
}

/// Approximate principal score `alpha' corr_block alpha / m` with `alpha`
/// renormalized to unit length (making the Rayleigh bound exact).
pub fn approx_principal_score(alpha: &[f64], corr_block: &[f64], m: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::Data("approx score of an empty set".into()));
    }
    if alpha.len() != m || corr_block.len() != m * m {
        return Err(Error::Shape(format!(
            "approx score: {} weights, {} matrix entries for m={m}",
            alpha.len(),
            corr_block.len()
        )));
    }
    let n = norm(alpha);
    if n <= 1e-300 {
        return Ok(0.0);
    }
    let unit: Vec<f64> = alpha.iter().map(|a| a / n).collect();
    let mut quad = 0.0;
    for i in 0..m {
        for j in 0..m {
            quad += unit[i] * corr_block[i * m + j] * unit[j];
        }
    }
    Ok(quad / m as f64)
}

// ---------------------------------------------------------------------------
// detector
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub model: ModelConfig,
    /// Clip threshold for window correlations (calibrate with
    /// [`mean_abs_offdiag_correlation`] times 1.5).
    pub theta_corr: f64,
    /// Alarm threshold on the approximate principal score.
    pub theta_anomaly: f64,
    /// Sets smaller than this are reported without a score and never alarm
    /// (a single feature is trivially self-correlated).
    pub min_set_size: usize,
}

impl DetectorConfig {
    pub fn new(k: usize, theta_corr: f64) -> Self {
        let mut model = ModelConfig {
            k,
            pseudo: true,
            ..ModelConfig::default()
        };
        model.attr = crate::graph::AttributeEncoderConfig {
            hash_buckets: 0,
            numeric_dim: WINDOW_ATTR_DIM,
            free_dim: 0,
        };
        DetectorConfig {
            model,
            theta_corr,
            theta_anomaly: 0.7,
            min_set_size: 2,
        }
    }
}

/// Trained correlated-anomaly detector: shared model parameters applied to
/// each window's correlation graph.
#[derive(Debug, Clone)]
pub struct AnomalyDetector {
    pub config: DetectorConfig,
    pub params: ParamStore,
}

/// One monitored window in memory (row-major [samples, features]).
#[derive(Debug, Clone)]
pub struct WindowData {
    pub samples: usize,
    pub num_features: usize,
    pub features: Vec<f64>,
    /// Ground-truth injected member sets (training / evaluation truth).
    pub injected_sets: Vec<Vec<usize>>,
}

/// Per-set detection outcome.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalySet {
    pub members: Vec<usize>,
    /// Approximate principal score; absent below the minimum set size.
    pub approx_score: Option<f64>,
    /// Exact oracle score; present in oracle mode only.
    pub exact_score: Option<f64>,
    pub alarm: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyReport {
    pub sets: Vec<AnomalySet>,
    pub theta_anomaly: f64,
    pub any_alarm: bool,
}

impl AnomalyDetector {
    pub fn new(config: DetectorConfig, seed: u64) -> Result<AnomalyDetector> {
        let mut store = ParamStore::new();
        let d_raw = config.model.attr.total_dim();
        let mut rng = Rng::stream(seed, 40);
        crate::framework::init_model_params(&mut store, &config.model, d_raw, &mut rng)?;
        let h = config.model.comm_att_hidden;
        let d_out = config.model.embedder.d_out;
        let std = 1.0 / (d_out as f64).sqrt();
        let mk = |rng: &mut Rng, n: usize, s: f64| -> Vec<f64> {
            (0..n).map(|_| rng.normal(0.0, s)).collect()
        };
        store.insert(
            "anomaly.att.w",
            Tensor::matrix(h, d_out, mk(&mut rng, h * d_out, std))?,
        )?;
        store.insert("anomaly.att.b", Tensor::vector(vec![0.0; h]))?;
        store.insert(
            "anomaly.att.v",
            Tensor::vector(mk(&mut rng, h, 1.0 / (h as f64).sqrt())),
        )?;
        Ok(AnomalyDetector {
            config,
            params: store,
        })
    }

    fn framework_for(&self, window: &WindowData) -> Result<(Framework, CorrelationGraph)> {
        let corr = clipped_correlation(
            &window.features,
            window.samples,
            window.num_features,
            self.config.theta_corr,
        )?;
        let graph = corr.to_graph()?;
        let fw = Framework::with_params(graph, self.config.model.clone(), self.params.clone())?;
        Ok((fw, corr))
    }

    /// Semi-supervised training over labeled windows: the joint community
    /// loss plus a supervised membership term (injected features belong to
    /// the real communities, background to the pseudo-community) plus the
    /// variance objective on each true set.
    pub fn train(&mut self, windows: &[WindowData], train: &TrainConfig) -> Result<Vec<f64>> {
        let mut adam = Adam::new(train.learning_rate);
        let mut rng = Rng::stream(train.seed, 41);
        let mut losses = Vec::new();
        for _epoch in 0..train.epochs {
            let mut order: Vec<usize> = (0..windows.len()).collect();
            rng.shuffle(&mut order);
            for &wi in &order {
                let window = &windows[wi];
                let loss = self.train_window(window, &mut adam, train, &mut rng)?;
                losses.push(loss);
            }
        }
        Ok(losses)
    }

    fn train_window(
        &mut self,
        window: &WindowData,
        adam: &mut Adam,
        train: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<f64> {
        let (mut fw, corr) = self.framework_for(window)?;
        let k = self.config.model.k;
        let d = window.num_features;
        // truth labels: anomaly features may sit in any real community,
        // background features belong to the pseudo-community
        let mut node_labels: Vec<Vec<usize>> = vec![vec![k]; d];
        for set in &window.injected_sets {
            for &f in set {
                node_labels[f] = (0..k).collect();
            }
        }
        let (std_cols, _) = standardize_columns(&window.features, window.samples, d);
        let mut last = 0.0;
        for _ in 0..train.epochs.max(1).min(2) {
            let batch = community::sample_batch(
                &fw.assignments,
                train.communities_per_batch,
                train.batch_size,
                rng,
            );
            if batch.is_empty() {
                continue;
            }
            last = self.window_step(
                &mut fw,
                window,
                &corr,
                &std_cols,
                &node_labels,
                &batch,
                adam,
                train,
                rng,
            )?;
        }
        self.params = fw.params;
        Ok(last)
    }

    #[allow(clippy::too_many_arguments)]
    fn window_step(
        &self,
        fw: &mut Framework,
        window: &WindowData,
        corr: &CorrelationGraph,
        std_cols: &[f64],
        node_labels: &[Vec<usize>],
        batch: &[usize],
        adam: &mut Adam,
        train: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<f64> {
        let tape = Tape::new();
        let bindings = bind_params(&tape, &fw.params, true);
        let (x, z) = fw.forward_nodes(&tape, &bindings, batch)?;
        let k = self.config.model.k;
        let z_real = tape.slice_cols(z, 0, k)?;
        let scale = std::f64::consts::FRAC_1_SQRT_2;
        let a_batch = tape.constant(
            vec![batch.len(), batch.len()],
            community::batch_adjacency_normalized(&fw.graph, batch)
                .into_iter()
                .map(|w| w * scale)
                .collect(),
        )?;
        let x_sim = tape.scale(x, scale);
        let c = community::community_similarity(&tape, z_real, x_sim, a_batch)?;
        let sizes = tape.sum_axis(z_real, 0)?;
        let sbm_raw = community::sbm_loss(&tape, c, sizes)?;
        let sbm = tape.scale(sbm_raw, 1.0 / (batch.len() * batch.len()) as f64);
        let entropy = community::entropy_loss(&tape, z)?;
        let (pairs, weights) = batch_pairs(&fw.graph, batch, train.max_link_pairs, rng);
        let (l1, l2) = bindings.link_ids()?;
        let graph_ref = &fw.graph;
        let link = community::link_loss(
            &tape,
            x,
            &pairs,
            &weights,
            self.config.model.link_negatives,
            l1,
            l2,
            |a, b| graph_ref.has_edge(batch[a], batch[b]),
            self.config.model.alpha,
            rng,
        )?;
        let labeled: Vec<(usize, Vec<usize>)> = batch
            .iter()
            .enumerate()
            .map(|(bi, &v)| (bi, node_labels[v].clone()))
            .collect();
        let labels_term = community::label_loss(&tape, z, &labeled)?;
        let (mut total, breakdown) = community::joint_loss(
            &tape,
            sbm,
            entropy,
            link,
            Some(labels_term),
            &self.config.model.loss_weights,
        )?;
        // variance objective over the true sets present in this batch
        let att = AttentionIds {
            w: bindings.get("anomaly.att.w")?,
            b: bindings.get("anomaly.att.b")?,
            v: bindings.get("anomaly.att.v")?,
        };
        for set in &window.injected_sets {
            let present: Vec<usize> = set
                .iter()
                .copied()
                .filter(|f| batch.binary_search(f).is_ok())
                .collect();
            if present.len() < self.config.min_set_size.max(2) {
                continue;
            }
            let batch_rows: Vec<usize> = present
                .iter()
                .map(|f| batch.binary_search(f).unwrap())
                .collect();
            let members_x = tape.gather_rows(x, &batch_rows)?;
            let alpha = attention_weights(&tape, members_x, &att)?;
            // standardized member columns, [samples, m]
            let m = present.len();
            let mut cols = vec![0.0; window.samples * m];
            for (a, &f) in present.iter().enumerate() {
                for t in 0..window.samples {
                    cols[t * m + a] = std_cols[t * window.num_features + f];
                }
            }
            let data = tape.constant(vec![window.samples, m], cols)?;
            let pl = pca_loss(&tape, data, alpha)?;
            total = tape.add(total, pl)?;
        }
        let loss_value = tape.scalar_value(total)?;
        if !loss_value.is_finite() {
            return Err(Error::Numeric("non-finite anomaly training loss".into()));
        }
        let grads_raw = tape.backward(total)?;
        let grads = Gradients::collect(&tape, &grads_raw, bindings.entries());
        adam.step(&mut fw.params, &grads)?;
        community::update_assignment(
            &mut fw.assignments,
            batch,
            &tape.values(z),
            tape.shape(z)[1],
        )?;
        let _ = (corr, breakdown);
        Ok(loss_value)
    }

    /// Single-forward-pass evaluation of one window: embeds features as nodes
    /// of the clipped correlation graph, hard-labels them, scores each real
    /// community with the quadratic-form approximation, and raises alarms
    /// above the threshold. `oracle` adds exact per-set scores.
    pub fn monitor_window(&self, window: &WindowData, oracle: bool) -> Result<AnomalyReport> {
        let (fw, corr) = self.framework_for(window)?;
        let tape = Tape::new();
        let bindings = bind_params(&tape, &fw.params, false);
        let nodes: Vec<usize> = (0..window.num_features).collect();
        let (x, z) = fw.forward_nodes(&tape, &bindings, &nodes)?;
        let major = argmax_rows(&tape.values(z), tape.shape(z)[1]);
        let att = AttentionIds {
            w: bindings.get("anomaly.att.w")?,
            b: bindings.get("anomaly.att.b")?,
            v: bindings.get("anomaly.att.v")?,
        };
        let mut sets = Vec::new();
        let mut any_alarm = false;
        for community_idx in 0..self.config.model.k {
            let members: Vec<usize> = (0..window.num_features)
                .filter(|&f| major[f] == community_idx)
                .collect();
            if members.len() < self.config.min_set_size {
                sets.push(AnomalySet {
                    members,
                    approx_score: None,
                    exact_score: None,
                    alarm: false,
                });
                continue;
            }
            let members_x = tape.gather_rows(x, &members)?;
            let alpha_id = attention_weights(&tape, members_x, &att)?;
            let alpha = tape.values(alpha_id);
            let block = corr.subset_matrix(&members);
            let score = approx_principal_score(&alpha, &block, members.len())?;
            let exact = if oracle {
                Some(exact_principal_score(&block, members.len(), members.len())?)
            } else {
                None
            };
            let alarm = score > self.config.theta_anomaly;
            any_alarm |= alarm;
            sets.push(AnomalySet {
                members,
                approx_score: Some(score),
                exact_score: exact,
                alarm,
            });
        }
        Ok(AnomalyReport {
            sets,
            theta_anomaly: self.config.theta_anomaly,
            any_alarm,
        })
    }
}

fn batch_pairs(
    graph: &Graph,
    batch: &[usize],
    cap: usize,
    rng: &mut Rng,
) -> (Vec<(usize, usize)>, Vec<f64>) {
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for (bi, &u) in batch.iter().enumerate() {
        for &(v, w) in graph.neighbors(u) {
            if let Ok(bj) = batch.binary_search(&v) {
                if bi < bj {
                    pairs.push((bi, bj));
                    weights.push(w);
                }
            }
        }
    }
    if pairs.len() > cap {
        let mut keep = rng.sample_indices(pairs.len(), cap);
        keep.sort_unstable();
        pairs = keep.iter().map(|&i| pairs[i]).collect();
        weights = keep.iter().map(|&i| weights[i]).collect();
    }
    let max_w = weights.iter().cloned().fold(0.0, f64::max);
    if max_w > 0.0 {
        for w in weights.iter_mut() {
            *w /= max_w;
        }
    }
    (pairs, weights)
}

// ---------------------------------------------------------------------------
// classical PCA baseline
// ---------------------------------------------------------------------------

/// Full-window PCA detector: alarms when `lambda_max(corr)/d` exceeds a
/// threshold calibrated on clean history (1.5x the mean clean score, the same
/// rule family as the correlation clip threshold).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaBaseline {
    pub threshold: f64,
}

impl PcaBaseline {
    pub fn calibrate(clean_windows: &[WindowData]) -> Result<PcaBaseline> {
        if clean_windows.is_empty() {
            return Err(Error::Data("PCA calibration needs clean windows".into()));
        }
        let mut total = 0.0;
        for w in clean_windows {
            total += full_window_principal_score(&w.features, w.samples, w.num_features)?;
        }
        Ok(PcaBaseline {
            threshold: 1.5 * total / clean_windows.len() as f64,
        })
    }

    /// Score, alarm flag and (when alarming) the members extracted from the
    /// top principal direction (loadings at least half the maximum).
    pub fn detect(&self, window: &WindowData) -> Result<(f64, bool, Vec<usize>)> {
        let d = window.num_features;
        let score = full_window_principal_score(&window.features, window.samples, d)?;
        let alarm = score > self.threshold;
        if !alarm {
            return Ok((score, false, Vec::new()));
        }
        let (std_cols, _) = standardize_columns(&window.features, window.samples, d);
        let inv_n = 1.0 / window.samples as f64;
        let u = if d <= window.samples {
            let mut corr = vec![0.0; d * d];
            for i in 0..d {
                for j in i..d {
                    let mut c = 0.0;
                    for t in 0..window.samples {
                        c += std_cols[t * d + i] * std_cols[t * d + j];
                    }
                    c *= inv_n;
                    corr[i * d + j] = c;
                    corr[j * d + i] = c;
                }
            }
            power_iteration_top(&corr, d, 1e-9, 10_000)?.1
        } else {
            let n = window.samples;
            let mut gram = vec![0.0; n * n];
            for s in 0..n {
                for t in s..n {
                    let mut c = 0.0;
                    for j in 0..d {
                        c += std_cols[s * d + j] * std_cols[t * d + j];
                    }
                    c *= inv_n;
                    gram[s * n + t] = c;
                    gram[t * n + s] = c;
                }
            }
            let (_, v) = power_iteration_top(&gram, n, 1e-9, 10_000)?;
            // right-singular direction from the sample-side eigenvector
            let mut u = vec![0.0; d];
            for j in 0..d {
                let mut s = 0.0;
                for t in 0..n {
                    s += std_cols[t * d + j] * v[t];
                }
                u[j] = s;
            }
            normalize(&mut u);
            u
        };
        let max_load = u.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let members = (0..d)
            .filter(|&j| u[j].abs() >= 0.5 * max_load)
            .collect();
        Ok((score, true, members))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duplicated_feature_survives_clipping() {
        let samples = 50;
        let mut rng = Rng::new(2);
        let mut features = vec![0.0; samples * 3];
        for t in 0..samples {
            let a = rng.normal(0.0, 1.0);
            features[t * 3] = a;
            features[t * 3 + 1] = a; // exact duplicate
            features[t * 3 + 2] = rng.normal(0.0, 1.0);
        }
        let corr = clipped_correlation(&features, samples, 3, 0.9).unwrap();
        assert!((corr.matrix[1] - 1.0).abs() < 1e-9);
        assert_eq!(corr.matrix[0], 0.0, "diagonal is no self-edge");
    }

    #[test]
    fn independent_noise_mostly_clipped() {
        let samples = 500;
        let d = 20;
        let mut rng = Rng::new(7);
        let features: Vec<f64> = (0..samples * d).map(|_| rng.normal(0.0, 1.0)).collect();
        let corr = clipped_correlation(&features, samples, d, 0.3).unwrap();
        let nonzero = corr.matrix.iter().filter(|&&v| v != 0.0).count();
        let total = d * (d - 1);
        assert!(
            (nonzero as f64) < 0.01 * total as f64,
            "{nonzero} of {total} survived"
        );
    }

    #[test]
    fn negative_correlation_clips_to_zero() {
        let samples = 40;
        let mut rng = Rng::new(3);
        let mut features = vec![0.0; samples * 2];
        for t in 0..samples {
            let a = rng.normal(0.0, 1.0);
            features[t * 2] = a;
            features[t * 2 + 1] = -a;
        }
        let corr = clipped_correlation(&features, samples, 2, 0.1).unwrap();
        assert_eq!(corr.matrix[1], 0.0);
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(clipped_correlation(&[1.0, 2.0], 1, 2, 0.1).is_err());
    }

    #[test]
    fn attention_weights_reference_points() {
        let tape = Tape::new();
        let x = tape
            .constant(vec![2, 3], vec![0.5, -0.2, 0.8, 0.5, -0.2, 0.8])
            .unwrap();
        // zero parameters -> zero weights
        let att = AttentionIds {
            w: tape.constant(vec![4, 3], vec![0.0; 12]).unwrap(),
            b: tape.constant_vector(vec![0.0; 4]),
            v: tape.constant_vector(vec![0.0; 4]),
        };
        let a = attention_weights(&tape, x, &att).unwrap();
        assert_eq!(tape.values(a), vec![0.0, 0.0]);
        // identical member rows -> identical weights
        let mut rng = Rng::new(5);
        let wv: Vec<f64> = (0..12).map(|_| rng.normal(0.0, 1.0)).collect();
        let vv: Vec<f64> = (0..4).map(|_| rng.normal(0.0, 1.0)).collect();
        let att = AttentionIds {
            w: tape.constant(vec![4, 3], wv).unwrap(),
            b: tape.constant_vector(vec![0.1; 4]),
            v: tape.constant_vector(vv),
        };
        let a = attention_weights(&tape, x, &att).unwrap();
        let v = tape.values(a);
        assert!((v[0] - v[1]).abs() < 1e-12);
    }

    #[test]
    fn pca_loss_reference_points() {
        let tape = Tape::new();
        let data = tape
            .constant(vec![4, 2], vec![1.0, 0.0, -1.0, 0.0, 2.0, 0.0, -2.0, 0.0])
            .unwrap();
        // unit alpha -> penalty 0
        let alpha = tape.constant_vector(vec![1.0, 0.0]);
        let loss = pca_loss(&tape, data, alpha).unwrap();
        let projected_var = 2.5; // var of [1,-1,2,-2]
        assert!((tape.scalar_value(loss).unwrap() + projected_var).abs() < 1e-12);
        // zero alpha -> variance 0, penalty 50
        let alpha0 = tape.constant_vector(vec![0.0, 0.0]);
        let loss0 = pca_loss(&tape, data, alpha0).unwrap();
        assert!((tape.scalar_value(loss0).unwrap() - 50.0).abs() < 1e-12);
    }

    #[test]
    fn exact_score_reference_matrices() {
        // all-ones m x m -> 1.0
        let m = 6;
        let ones = vec![1.0; m * m];
        assert!((exact_principal_score(&ones, m, m).unwrap() - 1.0).abs() < 1e-9);
        // identity -> 1/m
        let mut eye = vec![0.0; m * m];
        for i in 0..m {
            eye[i * m + i] = 1.0;
        }
        assert!((exact_principal_score(&eye, m, m).unwrap() - 1.0 / m as f64).abs() < 1e-9);
        // [[1, 0.8], [0.8, 1]] -> 1.8 / 2 = 0.9
        let pair = vec![1.0, 0.8, 0.8, 1.0];
        assert!((exact_principal_score(&pair, 2, 2).unwrap() - 0.9).abs() < 1e-9);
    }

    #[test]
    fn rayleigh_quotient_never_exceeds_exact_top() {
        let mut rng = Rng::new(12);
        for _ in 0..50 {
            let m = 6;
            // correlation matrix of random data
            let samples = 30;
            let data: Vec<f64> = (0..samples * m).map(|_| rng.normal(0.0, 1.0)).collect();
            let corr = clipped_correlation(&data, samples, m, -1.0).unwrap();
            let mut block = corr.matrix.clone();
            for i in 0..m {
                block[i * m + i] = 1.0;
            }
            let exact = exact_principal_score(&block, m, m).unwrap();
            let alpha: Vec<f64> = (0..m).map(|_| rng.normal(0.0, 1.0)).collect();
            let approx = approx_principal_score(&alpha, &block, m).unwrap();
            assert!(approx <= exact + 1e-12, "{approx} > {exact}");
        }
    }

    #[test]
    fn gram_route_matches_direct_route() {
        let mut rng = Rng::new(21);
        // wide window: d > samples exercises the Gram path
        let (samples, d) = (12, 30);
        let features: Vec<f64> = (0..samples * d).map(|_| rng.normal(0.0, 1.0)).collect();
        let via_gram = full_window_principal_score(&features, samples, d).unwrap();
        // direct d x d route
        let (std_cols, _) = standardize_columns(&features, samples, d);
        let inv_n = 1.0 / samples as f64;
        let mut corr = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let mut c = 0.0;
                for t in 0..samples {
                    c += std_cols[t * d + i] * std_cols[t * d + j];
                }
                corr[i * d + j] = c * inv_n;
            }
        }
        let direct = exact_principal_score(&corr, d, d).unwrap();
        assert!(
            (via_gram - direct).abs() < 1e-6,
            "gram {via_gram} vs direct {direct}"
        );
    }

    #[test]
    fn zero_variance_features_get_zero_correlations() {
        let samples = 20;
        let mut rng = Rng::new(4);
        let mut features = vec![0.0; samples * 3];
        for t in 0..samples {
            features[t * 3] = rng.normal(0.0, 1.0);
            features[t * 3 + 1] = 5.0; // constant
            features[t * 3 + 2] = rng.normal(0.0, 1.0);
        }
        let corr = clipped_correlation(&features, samples, 3, 0.0).unwrap();
        for j in 0..3 {
            if j != 1 {
                assert_eq!(corr.matrix[1 * 3 + j], 0.0);
            }
        }
    }
}
