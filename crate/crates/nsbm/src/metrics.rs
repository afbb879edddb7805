//! Evaluation metrics: top-k community precision / macro-F1 with Hungarian
//! label matching, NMI as a matching-free cross-check, alignment accuracy,
//! and the anomaly alert/recall/accuracy/false-alarm counters.

use serde::{Deserialize, Serialize};

use crate::anomaly::AnomalyReport;
use crate::{Error, Result};

// ---------------------------------------------------------------------------
// assignment
// ---------------------------------------------------------------------------

/// Maximum-total assignment on a rectangular benefit matrix (rows -> distinct
/// columns). Returns `row -> Some(col)` for assigned rows. O(n^3) Hungarian
/// algorithm on the padded square matrix.
pub fn max_assignment(benefit: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = benefit.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = benefit[0].len();
    let n = rows.max(cols);
    let big = benefit
        .iter()
        .flatten()
        .fold(0.0f64, |a, &b| a.max(b.abs()))
        + 1.0;
    // minimize cost = big - benefit over the padded square matrix
    let cost = |r: usize, c: usize| -> f64 {
        if r < rows && c < cols {
            big - benefit[r][c]
        } else {
            big
        }
    };
    // potentials + shortest augmenting paths (1-indexed internals)
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1]; // p[col] = row matched to col
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![None; rows];
    for j in 1..=n {
        let i = p[j];
        if i >= 1 && i <= rows && j <= cols {
            out[i - 1] = Some(j - 1);
        }
    }
    out
}

// ---------------------------------------------------------------------------
// community metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityScore {
    pub truth: usize,
    /// Predicted column matched to this truth community (None if unmatched).
    pub predicted: Option<usize>,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CommunityEvalResult {
    pub average_precision: f64,
    pub macro_f1: f64,
    pub nmi: f64,
    pub per_community: Vec<CommunityScore>,
    /// truth community -> matched predicted column.
    pub matching: Vec<Option<usize>>,
}

/// Rank of column `c` in row `row` counting strictly-greater entries, so tied
/// values share the best rank.
fn rank_in_row(row: &[f64], c: usize) -> usize {
    1 + row.iter().filter(|&&v| v > row[c]).count()
}

/// Top-k community evaluation: predicted communities (argmax sets over the
/// first `k_pred` columns) are matched to truth communities by maximum
/// overlap; a node with k truth labels counts as predicting community c
/// whenever c's membership ranks in its top k. Precision/recall/F1 averaged
/// unweighted across truth communities.
pub fn community_metrics(
    z_values: &[f64],
    cols: usize,
    k_pred: usize,
    truth: &[Vec<usize>],
    num_truth: usize,
) -> Result<CommunityEvalResult> {
    if cols == 0 || k_pred > cols {
        return Err(Error::Shape(format!(
            "community_metrics: k_pred {k_pred} vs {cols} membership columns"
        )));
    }
    let n = truth.len();
    if z_values.len() != n * cols {
        return Err(Error::Shape(format!(
            "community_metrics: {} membership values for {n} nodes x {cols}",
            z_values.len()
        )));
    }
    // overlap between predicted argmax sets and truth communities
    let major: Vec<usize> = z_values
        .chunks(cols)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect();
    let mut overlap = vec![vec![0.0; num_truth]; k_pred];
    for v in 0..n {
        if major[v] < k_pred {
            for &t in &truth[v] {
                overlap[major[v]][t] += 1.0;
            }
        }
    }
    let pred_to_truth = max_assignment(&overlap);
    let mut truth_to_pred: Vec<Option<usize>> = vec![None; num_truth];
    for (p, t) in pred_to_truth.iter().enumerate() {
        if let Some(t) = t {
            truth_to_pred[*t] = Some(p);
        }
    }
    let mut per_community = Vec::with_capacity(num_truth);
    for t in 0..num_truth {
        let members: Vec<usize> = (0..n).filter(|&v| truth[v].contains(&t)).collect();
        let score = match truth_to_pred[t] {
            Some(c) => {
                let mut predicted_positive = 0usize;
                let mut hits = 0usize;
                for v in 0..n {
                    let k_v = truth[v].len().max(1);
                    let row = &z_values[v * cols..(v + 1) * cols];
                    if rank_in_row(row, c) <= k_v {
                        predicted_positive += 1;
                        if truth[v].contains(&t) {
                            hits += 1;
                        }
                    }
                }
                let precision = if predicted_positive > 0 {
                    hits as f64 / predicted_positive as f64
                } else {
                    0.0
                };
                let recall = if !members.is_empty() {
                    hits as f64 / members.len() as f64
                } else {
                    0.0
                };
                let f1 = if precision + recall > 0.0 {
                    2.0 * precision * recall / (precision + recall)
                } else {
                    0.0
                };
                CommunityScore {
                    truth: t,
                    predicted: Some(c),
                    precision,
                    recall,
                    f1,
                }
            }
            None => CommunityScore {
                truth: t,
                predicted: None,
                precision: 0.0,
                recall: 0.0,
                f1: 0.0,
            },
        };
        per_community.push(score);
    }
    let average_precision =
        per_community.iter().map(|s| s.precision).sum::<f64>() / num_truth.max(1) as f64;
    let macro_f1 = per_community.iter().map(|s| s.f1).sum::<f64>() / num_truth.max(1) as f64;
    let primary_truth: Vec<usize> = truth
        .iter()
        .map(|l| l.first().copied().unwrap_or(num_truth))
        .collect();
    let nmi = normalized_mutual_information(&major, &primary_truth);
    Ok(CommunityEvalResult {
        average_precision,
        macro_f1,
        nmi,
        per_community,
        matching: truth_to_pred,
    })
}

/// NMI between two hard labelings (natural logs, sqrt normalization).
pub fn normalized_mutual_information(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len();
    if n == 0 {
        return 0.0;
    }
    let ka = a.iter().max().map(|&m| m + 1).unwrap_or(0);
    let kb = b.iter().max().map(|&m| m + 1).unwrap_or(0);
    let mut joint = vec![vec![0.0; kb]; ka];
    for (&x, &y) in a.iter().zip(b) {
        joint[x][y] += 1.0;
    }
    let nf = n as f64;
    let pa: Vec<f64> = joint.iter().map(|row| row.iter().sum::<f64>() / nf).collect();
    let pb: Vec<f64> = (0..kb)
        .map(|j| joint.iter().map(|row| row[j]).sum::<f64>() / nf)
        .collect();
    let h = |p: &[f64]| -> f64 {
        -p.iter()
            .filter(|&&x| x > 0.0)
            .map(|&x| x * x.ln())
            .sum::<f64>()
    };
    let (ha, hb) = (h(&pa), h(&pb));
    if ha == 0.0 || hb == 0.0 {
        return if a == b { 1.0 } else { 0.0 };
    }
    let mut mi = 0.0;
    for i in 0..ka {
        for j in 0..kb {
            let pij = joint[i][j] / nf;
            if pij > 0.0 {
                mi += pij * (pij / (pa[i] * pb[j])).ln();
            }
        }
    }
    mi / (ha * hb).sqrt()
}

// ---------------------------------------------------------------------------
// alignment metrics
// ---------------------------------------------------------------------------

/// Fraction of truth pairs whose G1 node's top-1 match is the truth partner.
pub fn alignment_accuracy(top1: &[(usize, usize)], truth: &[(usize, usize)]) -> Result<f64> {
    if truth.is_empty() {
        return Err(Error::Data("alignment truth is empty".into()));
    }
    let mut correct = 0usize;
    for &(g1, g2) in truth {
        if top1.iter().any(|&(a, b)| a == g1 && b == g2) {
            correct += 1;
        }
    }
    Ok(correct as f64 / truth.len() as f64)
}

// ---------------------------------------------------------------------------
// anomaly metrics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnomalyEvalResult {
    /// Fraction of injected windows that raised any alarm.
    pub alert_recall: f64,
    /// Fraction of true anomaly members detected within alerted injected windows.
    pub anomaly_recall: f64,
    /// Fraction of detected members (in alerted windows) that are true anomalies.
    pub accuracy: f64,
    /// Alerted windows with no injection.
    pub excess_alarms: usize,
    pub injected_windows: usize,
    pub clean_windows: usize,
}

/// Scores detector reports against per-window injected truth (empty set list
/// = clean window). Reports and truth align by index.
pub fn anomaly_metrics(
    reports: &[AnomalyReport],
    truth: &[Vec<Vec<usize>>],
) -> Result<AnomalyEvalResult> {
    if reports.len() != truth.len() {
        return Err(Error::Data(format!(
            "anomaly_metrics: {} reports vs {} truth windows",
            reports.len(),
            truth.len()
        )));
    }
    let mut injected_windows = 0usize;
    let mut clean_windows = 0usize;
    let mut alerted_injected = 0usize;
    let mut excess_alarms = 0usize;
    let mut true_members_in_alerted = 0usize;
    let mut detected_true_in_alerted = 0usize;
    let mut detected_total_in_alerted = 0usize;
    for (report, window_truth) in reports.iter().zip(truth) {
        let injected = !window_truth.is_empty();
        if injected {
            injected_windows += 1;
        } else {
            clean_windows += 1;
        }
        if !report.any_alarm {
            continue;
        }
        if !injected {
            excess_alarms += 1;
        } else {
            alerted_injected += 1;
        }
        let mut detected: Vec<usize> = report
            .sets
            .iter()
            .filter(|s| s.alarm)
            .flat_map(|s| s.members.iter().copied())
            .collect();
        detected.sort_unstable();
        detected.dedup();
        let mut true_members: Vec<usize> = window_truth.iter().flatten().copied().collect();
        true_members.sort_unstable();
        true_members.dedup();
        let hits = detected
            .iter()
            .filter(|m| true_members.binary_search(m).is_ok())
            .count();
        detected_total_in_alerted += detected.len();
        detected_true_in_alerted += hits;
        if injected {
            true_members_in_alerted += true_members.len();
        }
    }
    let ratio = |num: usize, den: usize| if den > 0 { num as f64 / den as f64 } else { 0.0 };
    Ok(AnomalyEvalResult {
        alert_recall: ratio(alerted_injected, injected_windows),
        anomaly_recall: ratio(detected_true_in_alerted.min(true_members_in_alerted), true_members_in_alerted),
        accuracy: ratio(detected_true_in_alerted, detected_total_in_alerted),
        excess_alarms,
        injected_windows,
        clean_windows,
    })
}
