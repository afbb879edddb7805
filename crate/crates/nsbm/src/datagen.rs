//! Synthetic benchmark generation: planted partitions with attributes and
//! labels, perturbed graph pairs with ground-truth alignment, and correlated-
//! anomaly window streams. All generators are seed-deterministic.

use serde::{Deserialize, Serialize};

use crate::anomaly::{exact_principal_score, full_window_principal_score, WindowData};
use crate::graph::Graph;
use crate::numerics::Rng;
use crate::{Error, Result};

// rng stream ids within a generator seed
const STREAM_EDGES: u64 = 100;
const STREAM_MEANS: u64 = 101;
const STREAM_NOISE: u64 = 102;
const STREAM_PERM: u64 = 103;
const STREAM_FLIPS: u64 = 104;
const STREAM_JITTER: u64 = 105;
const STREAM_WINDOW_BASE: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedPartitionSpec {
    pub k: usize,
    pub community_sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    /// Attribute dimension (0 disables attributes).
    pub attr_dim: usize,
    /// Standard deviation of the attribute noise around community means.
    pub attr_noise: f64,
    pub seed: u64,
}

impl PlantedPartitionSpec {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.community_sizes.len() != self.k {
            return Err(Error::Usage(format!(
                "planted partition: {} community sizes for K={}",
                self.community_sizes.len(),
                self.k
            )));
        }
        if !(0.0..=1.0).contains(&self.p_in) || !(0.0..=1.0).contains(&self.p_out) {
            return Err(Error::Usage("planted partition: probabilities in [0,1]".into()));
        }
        if self.p_out >= self.p_in {
            return Err(Error::Usage(
                "planted partition: requires p_out < p_in".into(),
            ));
        }
        Ok(())
    }
}

/// Planted-partition graph: intra-community pairs are edges with probability
/// `p_in`, inter-community pairs with `p_out`; every node carries its
/// community as a ground-truth label, and (optionally) attributes drawn
/// around a community-specific mean.
pub fn planted_partition(spec: &PlantedPartitionSpec) -> Result<Graph> {
    spec.validate()?;
    let n: usize = spec.community_sizes.iter().sum();
    let mut community = Vec::with_capacity(n);
    for (c, &size) in spec.community_sizes.iter().enumerate() {
        community.extend(std::iter::repeat(c).take(size));
    }
    let mut edge_rng = Rng::stream(spec.seed, STREAM_EDGES);
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            let p = if community[u] == community[v] {
                spec.p_in
            } else {
                spec.p_out
            };
            if edge_rng.uniform() < p {
                edges.push((u, v, 1.0));
            }
        }
    }
    let mut graph = Graph::from_edges(n, &edges, false)?;
    graph.labels = Some(community.iter().map(|&c| vec![c]).collect());
    graph.label_names = (0..spec.k).map(|c| format!("c{c}")).collect();
    if spec.attr_dim > 0 {
        let mut mean_rng = Rng::stream(spec.seed, STREAM_MEANS);
        let means: Vec<Vec<f64>> = (0..spec.k)
            .map(|_| (0..spec.attr_dim).map(|_| mean_rng.normal(0.0, 1.0)).collect())
            .collect();
        let mut noise_rng = Rng::stream(spec.seed, STREAM_NOISE);
        let attrs = (0..n)
            .map(|v| {
                means[community[v]]
                    .iter()
                    .map(|&m| m + noise_rng.normal(0.0, spec.attr_noise))
                    .collect()
            })
            .collect();
        graph.attributes = Some(attrs);
    }
    Ok(graph)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentPairSpec {
    pub base: PlantedPartitionSpec,
    /// Probability that an edge of G1 is flipped in G2 (removed and replaced
    /// by a random non-edge).
    pub flip_probability: f64,
    /// Standard deviation of attribute jitter applied to G2.
    pub attr_jitter: f64,
    pub seed: u64,
}

impl AlignmentPairSpec {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if !(0.0..0.5).contains(&self.flip_probability) {
            return Err(Error::Usage(
                "alignment pair: flip probability must be in [0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// G2 = node-permuted copy of G1 with edge noise and attribute jitter; the
/// ground truth maps each G1 node to its G2 counterpart.
pub fn perturb_pair(spec: &AlignmentPairSpec) -> Result<(Graph, Graph, Vec<(usize, usize)>)> {
    spec.validate()?;
    let g1 = planted_partition(&spec.base)?;
    let n = g1.num_nodes();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut perm_rng = Rng::stream(spec.seed, STREAM_PERM);
    perm_rng.shuffle(&mut perm);

    let mut flip_rng = Rng::stream(spec.seed, STREAM_FLIPS);
    let mut kept: Vec<(usize, usize)> = Vec::new();
    let mut flipped = 0usize;
    for e in g1.edges() {
        if flip_rng.uniform() < spec.flip_probability {
            flipped += 1;
        } else {
            kept.push((e.src, e.dst));
        }
    }
    // replace each flipped edge by a random non-edge of G1 (in G1 coordinates)
    let mut replacements = 0usize;
    while replacements < flipped {
        let a = flip_rng.range(0..n);
        let b = flip_rng.range(0..n);
        if a == b || g1.has_edge(a, b) || kept.contains(&(a, b)) || kept.contains(&(b, a)) {
            continue;
        }
        kept.push((a, b));
        replacements += 1;
    }
    let g2_edges: Vec<(usize, usize, f64)> = kept
        .iter()
        .map(|&(u, v)| (perm[u], perm[v], 1.0))
        .collect();
    let mut g2 = Graph::from_edges(n, &g2_edges, false)?;
    if let Some(attrs) = &g1.attributes {
        let mut jitter_rng = Rng::stream(spec.seed, STREAM_JITTER);
        let mut out = vec![Vec::new(); n];
        for v in 0..n {
            out[perm[v]] = attrs[v]
                .iter()
                .map(|&a| a + jitter_rng.normal(0.0, spec.attr_jitter))
                .collect();
        }
        g2.attributes = Some(out);
    }
    if let Some(labels) = &g1.labels {
        let mut out = vec![Vec::new(); n];
        for v in 0..n {
            out[perm[v]] = labels[v].clone();
        }
        g2.labels = Some(out);
        g2.label_names = g1.label_names.clone();
    }
    let truth = (0..n).map(|v| (v, perm[v])).collect();
    Ok((g1, g2, truth))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    Large,
    Small,
    Hidden,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScenario {
    pub kind: ScenarioKind,
    /// Number of monitored features per window (the correlation graph size).
    pub window_features: usize,
    /// Time samples per window.
    pub window_samples: usize,
    pub num_windows: usize,
    /// Fraction of windows that receive injected anomaly sets.
    pub injected_fraction: f64,
    /// Anomaly sets per injected window.
    pub sets_per_window: usize,
    /// Inclusive size range of each injected set.
    pub set_size_range: (usize, usize),
    /// Inclusive range of the planted pairwise correlation strength.
    pub correlation_range: (f64, f64),
    pub seed: u64,
}

impl AnomalyScenario {
    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.set_size_range;
        if lo < 2 || hi < lo {
            return Err(Error::Usage("anomaly scenario: bad set size range".into()));
        }
        let (slo, shi) = self.correlation_range;
        if !(0.0..=1.0).contains(&slo) || !(0.0..=1.0).contains(&shi) || shi < slo {
            return Err(Error::Usage(
                "anomaly scenario: correlation range within [0,1]".into(),
            ));
        }
        if self.window_samples < 2 {
            return Err(Error::Usage("anomaly scenario: need >= 2 samples".into()));
        }
        let d = self.window_features as f64;
        let min_frac = (self.sets_per_window * lo) as f64 / d;
        let max_frac = (self.sets_per_window * hi) as f64 / d;
        match self.kind {
            ScenarioKind::Large => {
                if min_frac < 0.2 || max_frac > 0.5 {
                    return Err(Error::Usage(format!(
                        "large scenario: anomaly fraction range [{min_frac:.2}, {max_frac:.2}] outside [0.2, 0.5]"
                    )));
                }
            }
            ScenarioKind::Small => {
                if min_frac < 0.05 || max_frac > 0.2 {
                    return Err(Error::Usage(format!(
                        "small scenario: anomaly fraction range [{min_frac:.2}, {max_frac:.2}] outside [0.05, 0.2]"
                    )));
                }
            }
            ScenarioKind::Hidden => {
                if self.window_features <= 2000 {
                    return Err(Error::Usage(
                        "hidden scenario: window must exceed 2000 features".into(),
                    ));
                }
                if lo < 20 || hi > 200 {
                    return Err(Error::Usage(
                        "hidden scenario: set sizes must lie in [20, 200]".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Default desk-scale parameterizations per scenario kind.
    pub fn preset(kind: ScenarioKind, num_windows: usize, injected_fraction: f64, seed: u64) -> Self {
        match kind {
            ScenarioKind::Large => AnomalyScenario {
                kind,
                window_features: 80,
                window_samples: 400,
                num_windows,
                injected_fraction,
                sets_per_window: 1,
                set_size_range: (20, 36),
                correlation_range: (0.85, 0.95),
                seed,
            },
            ScenarioKind::Small => AnomalyScenario {
                kind,
                window_features: 120,
                window_samples: 400,
                num_windows,
                injected_fraction,
                sets_per_window: 1,
                set_size_range: (8, 22),
                correlation_range: (0.85, 0.95),
                seed,
            },
            ScenarioKind::Hidden => AnomalyScenario {
                kind,
                window_features: 2048,
                window_samples: 64,
                num_windows,
                injected_fraction,
                sets_per_window: 1,
                set_size_range: (24, 40),
                correlation_range: (0.8, 0.9),
                seed,
            },
        }
    }
}

/// Generated window stream plus the number of hidden-scenario rejections.
#[derive(Debug, Clone)]
pub struct WindowStream {
    pub windows: Vec<WindowData>,
    pub rejections: usize,
}

fn fill_window(scenario: &AnomalyScenario, rng: &mut Rng) -> WindowData {
    let d = scenario.window_features;
    let n = scenario.window_samples;
    WindowData {
        samples: n,
        num_features: d,
        features: (0..n * d).map(|_| rng.normal(0.0, 1.0)).collect(),
        injected_sets: Vec::new(),
    }
}

fn inject_sets(window: &mut WindowData, scenario: &AnomalyScenario, rng: &mut Rng) {
    let d = window.num_features;
    let n = window.samples;
    let (lo, hi) = scenario.set_size_range;
    let (slo, shi) = scenario.correlation_range;
    let mut available: Vec<usize> = (0..d).collect();
    rng.shuffle(&mut available);
    let mut offset = 0usize;
    for _ in 0..scenario.sets_per_window {
        let size = rng.range(lo..=hi);
        if offset + size > available.len() {
            break;
        }
        let mut members: Vec<usize> = available[offset..offset + size].to_vec();
        offset += size;
        members.sort_unstable();
        let s = slo + (shi - slo) * rng.uniform();
        // shared latent factor: x_i = sqrt(s) f + sqrt(1-s) eps_i gives
        // pairwise correlation s within the set
        let latent: Vec<f64> = (0..n).map(|_| rng.normal(0.0, 1.0)).collect();
        let (a, b) = (s.sqrt(), (1.0 - s).sqrt());
        for &f in &members {
            for t in 0..n {
                window.features[t * d + f] = a * latent[t] + b * rng.normal(0.0, 1.0);
            }
        }
        window.injected_sets.push(members);
    }
}

/// Generates the labeled window stream of a scenario. Injection hits an exact
/// `round(injected_fraction * num_windows)` count of windows (chosen by seeded
/// shuffle). Hidden-scenario injected windows are rejection-sampled until the
/// classical-PCA failure precondition holds: full-window exact principal score
/// below 0.7 while the planted subset scores above it.
pub fn synth_anomaly_windows(scenario: &AnomalyScenario) -> Result<WindowStream> {
    scenario.validate()?;
    let n_injected = (scenario.injected_fraction * scenario.num_windows as f64).round() as usize;
    let mut order: Vec<usize> = (0..scenario.num_windows).collect();
    let mut pick_rng = Rng::stream(scenario.seed, STREAM_WINDOW_BASE);
    pick_rng.shuffle(&mut order);
    let injected: std::collections::HashSet<usize> =
        order.into_iter().take(n_injected).collect();
    let mut windows = Vec::with_capacity(scenario.num_windows);
    let mut rejections = 0usize;
    for w in 0..scenario.num_windows {
        let mut attempt = 0u64;
        loop {
            let mut rng = Rng::stream(
                scenario.seed,
                STREAM_WINDOW_BASE + 1 + w as u64 * 101 + attempt,
            );
            let mut window = fill_window(scenario, &mut rng);
            if injected.contains(&w) {
                inject_sets(&mut window, scenario, &mut rng);
            }
            if scenario.kind == ScenarioKind::Hidden && !window.injected_sets.is_empty() {
                if !hidden_precondition(&window)? {
                    rejections += 1;
                    attempt += 1;
                    if attempt > 50 {
                        return Err(Error::Data(format!(
                            "hidden scenario: window {w} failed the PCA-failure precondition 50 times; adjust the scenario parameters"
                        )));
                    }
                    continue;
                }
            }
            windows.push(window);
            break;
        }
    }
    Ok(WindowStream {
        windows,
        rejections,
    })
}

/// Full-window score < 0.7 while every planted subset scores > 0.7.
fn hidden_precondition(window: &WindowData) -> Result<bool> {
    let full = full_window_principal_score(&window.features, window.samples, window.num_features)?;
    if full >= 0.7 {
        return Ok(false);
    }
    let (std_cols, _) =
        crate::anomaly::standardize_columns(&window.features, window.samples, window.num_features);
    for set in &window.injected_sets {
        let m = set.len();
        let mut corr = vec![0.0; m * m];
        let inv_n = 1.0 / window.samples as f64;
        for a in 0..m {
            corr[a * m + a] = 1.0;
            for b in (a + 1)..m {
                let (i, j) = (set[a], set[b]);
                let mut c = 0.0;
                for t in 0..window.samples {
                    c += std_cols[t * window.num_features + i]
                        * std_cols[t * window.num_features + j];
                }
                c *= inv_n;
                corr[a * m + b] = c;
                corr[b * m + a] = c;
            }
        }
        if exact_principal_score(&corr, m, m)? <= 0.7 {
            return Ok(false);
        }
    }
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base_spec(seed: u64) -> PlantedPartitionSpec {
        PlantedPartitionSpec {
            k: 2,
            community_sizes: vec![10, 10],
            p_in: 0.8,
            p_out: 0.05,
            attr_dim: 4,
            attr_noise: 0.3,
            seed,
        }
    }

    #[test]
    fn extreme_probabilities_give_disjoint_cliques() {
        let spec = PlantedPartitionSpec {
            p_in: 1.0,
            p_out: 0.0,
            ..base_spec(3)
        };
        let g = planted_partition(&spec).unwrap();
        assert_eq!(g.num_edges(), 2 * (10 * 9) / 2);
        for e in g.edges() {
            assert_eq!(e.src / 10, e.dst / 10, "cross edge {e:?}");
        }
    }

    #[test]
    fn labels_cover_every_node_once() {
        let g = planted_partition(&base_spec(5)).unwrap();
        let labels = g.labels.as_ref().unwrap();
        assert_eq!(labels.len(), 20);
        assert!(labels.iter().all(|l| l.len() == 1));
        assert_eq!(labels.iter().filter(|l| l[0] == 0).count(), 10);
    }

    #[test]
    fn intra_edge_count_tracks_binomial_mean() {
        // expected intra edges per community: p_in * C(10,2) = 0.8 * 45 = 36
        // 3-sigma band over 100 seeds on the total across both communities
        let mut totals = Vec::new();
        for seed in 0..100 {
            let g = planted_partition(&PlantedPartitionSpec {
                attr_dim: 0,
                ..base_spec(seed)
            })
            .unwrap();
            let labels = g.labels.as_ref().unwrap();
            let intra = g
                .edges()
                .iter()
                .filter(|e| labels[e.src] == labels[e.dst])
                .count();
            totals.push(intra as f64);
        }
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        let expected = 2.0 * 0.8 * 45.0;
        let sigma = (2.0 * 45.0 * 0.8 * 0.2f64).sqrt();
        assert!(
            (mean - expected).abs() <= 3.0 * sigma / (totals.len() as f64).sqrt(),
            "mean {mean} expected {expected}"
        );
    }

    #[test]
    fn validation_rejects_bad_probabilities() {
        let spec = PlantedPartitionSpec {
            p_in: 0.3,
            p_out: 0.3,
            ..base_spec(1)
        };
        assert!(planted_partition(&spec).is_err());
    }

    #[test]
    fn zero_flip_pair_is_isomorphic() {
        let spec = AlignmentPairSpec {
            base: base_spec(7),
            flip_probability: 0.0,
            attr_jitter: 0.0,
            seed: 7,
        };
        let (g1, g2, truth) = perturb_pair(&spec).unwrap();
        assert_eq!(g1.num_edges(), g2.num_edges());
        // applying the truth permutation to G1's edges recovers G2's edge set
        let perm: Vec<usize> = {
            let mut p = vec![0usize; truth.len()];
            for &(a, b) in &truth {
                p[a] = b;
            }
            p
        };
        for e in g1.edges() {
            assert!(g2.has_edge(perm[e.src], perm[e.dst]));
        }
        // attributes carried over exactly at zero jitter
        let a1 = g1.attributes.as_ref().unwrap();
        let a2 = g2.attributes.as_ref().unwrap();
        for &(u, v) in &truth {
            assert_eq!(a1[u], a2[v]);
        }
    }

    #[test]
    fn flip_counts_match_binomial_statistics() {
        let mut flips = Vec::new();
        for seed in 0..40 {
            let spec = AlignmentPairSpec {
                base: PlantedPartitionSpec {
                    community_sizes: vec![25, 25],
                    attr_dim: 0,
                    ..base_spec(seed)
                },
                flip_probability: 0.05,
                attr_jitter: 0.0,
                seed,
            };
            let (g1, g2, truth) = perturb_pair(&spec).unwrap();
            let perm: Vec<usize> = {
                let mut p = vec![0usize; truth.len()];
                for &(a, b) in &truth {
                    p[a] = b;
                }
                p
            };
            let removed = g1
                .edges()
                .iter()
                .filter(|e| !g2.has_edge(perm[e.src], perm[e.dst]))
                .count();
            let expected = 0.05 * g1.num_edges() as f64;
            flips.push((removed as f64, expected));
        }
        let mean_dev: f64 = flips.iter().map(|(f, e)| f - e).sum::<f64>() / flips.len() as f64;
        assert!(mean_dev.abs() < 5.0, "mean deviation {mean_dev}");
    }

    #[test]
    fn anomaly_sets_have_planted_correlation() {
        let scenario = AnomalyScenario {
            kind: ScenarioKind::Small,
            window_features: 60,
            window_samples: 1000,
            num_windows: 3,
            injected_fraction: 1.0,
            sets_per_window: 1,
            set_size_range: (6, 6),
            correlation_range: (0.8, 0.8),
            seed: 5,
        };
        let stream = synth_anomaly_windows(&scenario).unwrap();
        for w in &stream.windows {
            assert_eq!(w.injected_sets.len(), 1);
            let set = &w.injected_sets[0];
            let (std_cols, _) = crate::anomaly::standardize_columns(&w.features, w.samples, 60);
            let inv_n = 1.0 / w.samples as f64;
            let mut rs = Vec::new();
            for a in 0..set.len() {
                for b in (a + 1)..set.len() {
                    let mut c = 0.0;
                    for t in 0..w.samples {
                        c += std_cols[t * 60 + set[a]] * std_cols[t * 60 + set[b]];
                    }
                    rs.push(c * inv_n);
                }
            }
            let mean_r = rs.iter().sum::<f64>() / rs.len() as f64;
            assert!((mean_r - 0.8).abs() < 0.05, "mean pairwise corr {mean_r}");
        }
    }

    #[test]
    fn perfect_correlation_when_s_is_one() {
        let scenario = AnomalyScenario {
            kind: ScenarioKind::Small,
            window_features: 40,
            window_samples: 50,
            num_windows: 1,
            injected_fraction: 1.0,
            sets_per_window: 1,
            set_size_range: (4, 4),
            correlation_range: (1.0, 1.0),
            seed: 2,
        };
        let stream = synth_anomaly_windows(&scenario).unwrap();
        let w = &stream.windows[0];
        let set = &w.injected_sets[0];
        let corr = crate::anomaly::clipped_correlation(&w.features, w.samples, 40, 0.0).unwrap();
        for a in 0..set.len() {
            for b in (a + 1)..set.len() {
                let r = corr.matrix[set[a] * 40 + set[b]];
                assert!((r - 1.0).abs() < 1e-9, "corr {r}");
            }
        }
    }

    #[test]
    fn clean_windows_have_no_injections_and_streams_are_deterministic() {
        let scenario = AnomalyScenario {
            kind: ScenarioKind::Small,
            window_features: 30,
            window_samples: 40,
            num_windows: 10,
            injected_fraction: 0.3,
            sets_per_window: 1,
            set_size_range: (3, 5),
            correlation_range: (0.9, 0.95),
            seed: 9,
        };
        let a = synth_anomaly_windows(&scenario).unwrap();
        let b = synth_anomaly_windows(&scenario).unwrap();
        let injected = a.windows.iter().filter(|w| !w.injected_sets.is_empty()).count();
        assert_eq!(injected, 3);
        for (wa, wb) in a.windows.iter().zip(&b.windows) {
            assert_eq!(wa.features, wb.features);
            assert_eq!(wa.injected_sets, wb.injected_sets);
        }
    }

    #[test]
    fn scenario_validation_enforces_ranges() {
        let mut s = AnomalyScenario::preset(ScenarioKind::Large, 10, 0.1, 1);
        assert!(s.validate().is_ok());
        s.set_size_range = (2, 4); // under 20% of 80
        assert!(s.validate().is_err());
        let mut h = AnomalyScenario::preset(ScenarioKind::Hidden, 2, 0.5, 1);
        h.window_features = 500;
        assert!(h.validate().is_err());
    }
}
