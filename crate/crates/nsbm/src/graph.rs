//! Graph data model, attribute storage and file ingestion.
//!
//! Nodes are dense integers `0..|V|-1`; the original textual ids from an edge
//! list are kept as a sidecar (`node_names`) so labels/features files can refer
//! to them. Undirected graphs store each edge once and answer neighbor queries
//! symmetrically. Weights are finite floats, exactly 1.0 for unweighted input.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::numerics::{Rng, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone)]
pub struct Graph {
    directed: bool,
    num_nodes: usize,
    edges: Vec<Edge>,
    adj: Vec<Vec<(usize, f64)>>,
    /// Original node ids, index = dense id.
    pub node_names: Vec<String>,
    name_index: HashMap<String, usize>,
    /// Per-node numeric feature vectors (empty vector = missing).
    pub attributes: Option<Vec<Vec<f64>>>,
    /// Per-node text tokens.
    pub tokens: Option<Vec<Vec<String>>>,
    /// Ground-truth label sets (a node may carry several labels).
    pub labels: Option<Vec<Vec<usize>>>,
    /// Names of the ground-truth labels, index = label id.
    pub label_names: Vec<String>,
}

impl Graph {
    /// Builds a graph from raw edges. Duplicate edges collapse by summing
    /// weights; self-loops are rejected (block-model edge counts never include
    /// them).
    pub fn from_edges(
        num_nodes: usize,
        raw_edges: &[(usize, usize, f64)],
        directed: bool,
    ) -> Result<Graph> {
        let mut edges: Vec<Edge> = Vec::new();
        let mut seen: HashMap<(usize, usize), usize> = HashMap::new();
        for &(src, dst, weight) in raw_edges {
            if src == dst {
                return Err(Error::Data(format!("self-loop at node {src} rejected")));
            }
            if src >= num_nodes || dst >= num_nodes {
                return Err(Error::Data(format!(
                    "edge ({src},{dst}) out of bounds for {num_nodes} nodes"
                )));
            }
            if !weight.is_finite() {
                return Err(Error::Data(format!(
                    "non-finite weight on edge ({src},{dst})"
                )));
            }
            let key = if directed || src < dst {
                (src, dst)
            } else {
                (dst, src)
            };
            match seen.get(&key) {
                Some(&i) => edges[i].weight += weight,
                None => {
                    seen.insert(key, edges.len());
                    edges.push(Edge {
                        src: key.0,
                        dst: key.1,
                        weight,
                    });
                }
            }
        }
        let mut adj = vec![Vec::new(); num_nodes];
        for e in &edges {
            adj[e.src].push((e.dst, e.weight));
            if !directed {
                adj[e.dst].push((e.src, e.weight));
            }
        }
        for list in &mut adj {
            list.sort_by(|a, b| a.0.cmp(&b.0));
        }
        let node_names: Vec<String> = (0..num_nodes).map(|i| i.to_string()).collect();
        let name_index = node_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Ok(Graph {
            directed,
            num_nodes,
            edges,
            adj,
            node_names,
            name_index,
            attributes: None,
            tokens: None,
            labels: None,
            label_names: Vec::new(),
        })
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Sorted neighbor list with weights (out-neighbors for directed graphs).
    pub fn neighbors(&self, v: usize) -> &[(usize, f64)] {
        &self.adj[v]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.adj[v].len()
    }

    pub fn weighted_degree(&self, v: usize) -> f64 {
        self.adj[v].iter().map(|(_, w)| w).sum()
    }

    pub fn has_edge(&self, u: usize, v: usize) -> bool {
        self.adj[u].binary_search_by(|probe| probe.0.cmp(&v)).is_ok()
    }

    pub fn edge_weight(&self, u: usize, v: usize) -> Option<f64> {
        self.adj[u]
            .binary_search_by(|probe| probe.0.cmp(&v))
            .ok()
            .map(|i| self.adj[u][i].1)
    }

    pub fn node_id(&self, name: &str) -> Option<usize> {
        self.name_index.get(name).copied()
    }

    /// Loads a tab-separated edge list: `src<TAB>dst[<TAB>weight]`, one edge
    /// per line, `#` lines are comments. Node ids are re-indexed densely in
    /// first-appearance order; the original ids stay in `node_names`.
    pub fn load_edge_list(path: &Path, directed: bool, weighted: bool) -> Result<Graph> {
        let text = std::fs::read_to_string(path)?;
        let mut names: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut raw: Vec<(usize, usize, f64)> = Vec::new();
        let intern = |s: &str, names: &mut Vec<String>, index: &mut HashMap<String, usize>| {
            *index.entry(s.to_string()).or_insert_with(|| {
                names.push(s.to_string());
                names.len() - 1
            })
        };
        for (lineno, line) in text.lines().enumerate() {
            let line_display = lineno + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() < 2 || fields.len() > 3 {
                return Err(Error::Parse(format!(
                    "line {line_display}: expected 2 or 3 tab-separated fields, found {}",
                    fields.len()
                )));
            }
            let (src_name, dst_name) = (fields[0].trim(), fields[1].trim());
            if src_name == dst_name {
                return Err(Error::Parse(format!(
                    "line {line_display}: self-referential edge `{src_name}`"
                )));
            }
            let weight = match (weighted, fields.len()) {
                (true, 3) => fields[2].trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!(
                        "line {line_display}: non-numeric weight `{}`",
                        fields[2].trim()
                    ))
                })?,
                (true, _) => 1.0,
                (false, 3) => {
                    return Err(Error::Parse(format!(
                        "line {line_display}: unexpected weight column in unweighted load"
                    )))
                }
                (false, _) => 1.0,
            };
            if !weight.is_finite() {
                return Err(Error::Parse(format!(
                    "line {line_display}: non-finite weight"
                )));
            }
            let s = intern(src_name, &mut names, &mut index);
            let d = intern(dst_name, &mut names, &mut index);
            raw.push((s, d, weight));
        }
        if raw.is_empty() {
            return Err(Error::Parse(format!(
                "{}: no edges found",
                path.display()
            )));
        }
        let mut graph = Graph::from_edges(names.len(), &raw, directed)?;
        graph.name_index = index;
        graph.node_names = names;
        Ok(graph)
    }

    /// Writes the edge list back out with original node ids; a load of the
    /// result reproduces the edge multiset exactly.
    pub fn save_edge_list(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for e in &self.edges {
            writeln!(
                out,
                "{}\t{}\t{}",
                self.node_names[e.src], self.node_names[e.dst], e.weight
            )
            .expect("string write");
        }
        std::fs::write(path, out)?;
        Ok(())
    }

    /// Loads ground-truth labels: `node<TAB>label1,label2,...` per line.
    pub fn load_labels(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut labels = vec![Vec::new(); self.num_nodes];
        let mut label_names: Vec<String> = Vec::new();
        let mut label_index: HashMap<String, usize> = HashMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 2 {
                return Err(Error::Parse(format!(
                    "line {}: expected `node<TAB>labels`",
                    lineno + 1
                )));
            }
            let node = self.node_id(fields[0].trim()).ok_or_else(|| {
                Error::Parse(format!("line {}: unknown node `{}`", lineno + 1, fields[0]))
            })?;
            for name in fields[1].split(',') {
                let name = name.trim();
                if name.is_empty() {
                    continue;
                }
                let id = *label_index.entry(name.to_string()).or_insert_with(|| {
                    label_names.push(name.to_string());
                    label_names.len() - 1
                });
                labels[node].push(id);
            }
        }
        self.labels = Some(labels);
        self.label_names = label_names;
        Ok(())
    }

    /// Loads numeric node features from a CSV with a header row; the first
    /// column is the node id, remaining columns are features.
    pub fn load_features_csv(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)?;
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse(format!("{}: empty feature file", path.display())))?;
        let width = header.split(',').count();
        if width < 2 {
            return Err(Error::Parse(
                "feature CSV needs a node column and at least one feature column".into(),
            ));
        }
        let mut attrs = vec![Vec::new(); self.num_nodes];
        for (lineno, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != width {
                return Err(Error::Parse(format!(
                    "line {}: expected {width} columns, found {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let node = self.node_id(fields[0].trim()).ok_or_else(|| {
                Error::Parse(format!("line {}: unknown node `{}`", lineno + 1, fields[0]))
            })?;
            let mut row = Vec::with_capacity(width - 1);
            for f in &fields[1..] {
                row.push(f.trim().parse::<f64>().map_err(|_| {
                    Error::Parse(format!("line {}: non-numeric feature `{f}`", lineno + 1))
                })?);
            }
            attrs[node] = row;
        }
        self.attributes = Some(attrs);
        Ok(())
    }
}

/// Sizes of the three raw-embedding blocks produced by [`encode_attributes`].
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AttributeEncoderConfig {
    /// Bucket count of the hashed bag-of-words text encoder (0 disables).
    pub hash_buckets: usize,
    /// Width of the numeric feature passthrough (0 disables).
    pub numeric_dim: usize,
    /// Width of the per-node trainable free embedding (0 disables).
    pub free_dim: usize,
}

impl AttributeEncoderConfig {
    pub fn free_only(free_dim: usize) -> Self {
        AttributeEncoderConfig {
            hash_buckets: 0,
            numeric_dim: 0,
            free_dim,
        }
    }

    pub fn total_dim(&self) -> usize {
        self.hash_buckets + self.numeric_dim + self.free_dim
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_dim() == 0 {
            return Err(Error::Usage(
                "attribute encoder: total raw-embedding dimension must be > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Fixed (non-trainable) part of the raw embeddings plus the initial value of
/// the trainable free-embedding table.
#[derive(Debug, Clone)]
pub struct RawAttributes {
    /// `|V| x (hash_buckets + numeric_dim)`; zero-width when both are disabled.
    pub fixed: Tensor,
    /// `|V| x free_dim` drawn from N(0, 0.01); zero-width when disabled.
    pub free_init: Tensor,
}

/// 64-bit FNV-1a; a fixed, platform-independent token hash.
pub fn token_hash(token: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in token.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Per-node concatenation of [hashed token counts (L2-normalized), numeric
/// features, trainable free embedding]. The caller places `free_init` in the
/// parameter store and concatenates it with `fixed` on the tape.
pub fn encode_attributes(
    graph: &Graph,
    config: &AttributeEncoderConfig,
    rng: &mut Rng,
) -> Result<RawAttributes> {
    config.validate()?;
    let n = graph.num_nodes();
    let fixed_dim = config.hash_buckets + config.numeric_dim;
    let mut fixed = vec![0.0; n * fixed_dim];
    if config.hash_buckets > 0 {
        let tokens = graph.tokens.as_ref().ok_or_else(|| {
            Error::Data("text encoder enabled but the graph carries no tokens".into())
        })?;
        for v in 0..n {
            let row = &mut fixed[v * fixed_dim..v * fixed_dim + config.hash_buckets];
            for tok in &tokens[v] {
                let b = (token_hash(tok) % config.hash_buckets as u64) as usize;
                row[b] += 1.0;
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                for x in row.iter_mut() {
                    *x /= norm;
                }
            }
        }
    }
    if config.numeric_dim > 0 {
        let attrs = graph.attributes.as_ref().ok_or_else(|| {
            Error::Data("numeric encoder enabled but the graph carries no features".into())
        })?;
        for v in 0..n {
            if attrs[v].len() != config.numeric_dim {
                return Err(Error::Data(format!(
                    "node {} ({}) has {} numeric features, expected {}",
                    v,
                    graph.node_names[v],
                    attrs[v].len(),
                    config.numeric_dim
                )));
            }
            let off = v * fixed_dim + config.hash_buckets;
            fixed[off..off + config.numeric_dim].copy_from_slice(&attrs[v]);
        }
    }
    let free: Vec<f64> = (0..n * config.free_dim)
        .map(|_| rng.normal(0.0, 0.01))
        .collect();
    Ok(RawAttributes {
        fixed: Tensor::matrix(n, fixed_dim, fixed)?,
        free_init: Tensor::matrix(n, config.free_dim, free)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn loads_small_edge_list() {
        let f = write_tmp("# comment\n0\t1\n1\t2\n");
        let g = Graph::load_edge_list(f.path(), false, false).unwrap();
        assert_eq!(g.num_nodes(), 3);
        assert_eq!(g.num_edges(), 2);
        assert_eq!(
            (0..3).map(|v| g.degree(v)).collect::<Vec<_>>(),
            vec![1, 2, 1]
        );
    }

    #[test]
    fn duplicate_edges_collapse_by_summing() {
        let f = write_tmp("0\t1\t2.0\n0\t1\t2.0\n");
        let g = Graph::load_edge_list(f.path(), false, true).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edge_weight(0, 1), Some(4.0));
        // reversed direction collapses too on undirected graphs
        let f = write_tmp("0\t1\t1.5\n1\t0\t1.0\n");
        let g = Graph::load_edge_list(f.path(), false, true).unwrap();
        assert_eq!(g.num_edges(), 1);
        assert_eq!(g.edge_weight(1, 0), Some(2.5));
    }

    #[test]
    fn neighbor_query_from_worked_example() {
        let f = write_tmp("0\t1\n2\t3\n0\t2\n");
        let g = Graph::load_edge_list(f.path(), false, false).unwrap();
        assert_eq!(g.num_nodes(), 4);
        let n0: Vec<usize> = g.neighbors(0).iter().map(|(u, _)| *u).collect();
        // names are interned in first-appearance order: 0,1,2,3
        assert_eq!(n0, vec![1, 2]);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = Graph::load_edge_list(write_tmp("0\t1\n0\t1\tx\n").path(), false, true)
            .unwrap_err()
            .to_string();
        assert!(err.contains("line 2") && err.contains('x'), "{err}");
        let err = Graph::load_edge_list(write_tmp("3\t3\n").path(), false, false)
            .unwrap_err()
            .to_string();
        assert!(
            err.contains("line 1") && err.contains("self-referential"),
            "{err}"
        );
        let err = Graph::load_edge_list(write_tmp("# only a comment\n").path(), false, false)
            .unwrap_err()
            .to_string();
        assert!(err.contains("no edges"), "{err}");
    }

    #[test]
    fn save_load_roundtrip_preserves_edge_multiset() {
        let f = write_tmp("a\tb\t2.25\nb\tc\t0.5\na\tc\t1.0\n");
        let g = Graph::load_edge_list(f.path(), false, true).unwrap();
        let out = tempfile::NamedTempFile::new().unwrap();
        g.save_edge_list(out.path()).unwrap();
        let g2 = Graph::load_edge_list(out.path(), false, true).unwrap();
        assert_eq!(g.num_nodes(), g2.num_nodes());
        let key = |g: &Graph| {
            let mut v: Vec<(String, String, u64)> = g
                .edges()
                .iter()
                .map(|e| {
                    (
                        g.node_names[e.src].clone(),
                        g.node_names[e.dst].clone(),
                        e.weight.to_bits(),
                    )
                })
                .collect();
            v.sort();
            v
        };
        assert_eq!(key(&g), key(&g2));
    }

    #[test]
    fn degree_sum_is_twice_edge_count() {
        let mut rng = Rng::new(9);
        let mut raw = Vec::new();
        for u in 0..20usize {
            for v in (u + 1)..20 {
                if rng.uniform() < 0.2 {
                    raw.push((u, v, 1.0));
                }
            }
        }
        let g = Graph::from_edges(20, &raw, false).unwrap();
        let total: usize = (0..20).map(|v| g.degree(v)).sum();
        assert_eq!(total, 2 * g.num_edges());
    }

    #[test]
    fn labels_and_features_load() {
        let ef = write_tmp("a\tb\nb\tc\n");
        let mut g = Graph::load_edge_list(ef.path(), false, false).unwrap();
        let lf = write_tmp("a\tgroup1\nb\tgroup1,group2\n");
        g.load_labels(lf.path()).unwrap();
        let labels = g.labels.as_ref().unwrap();
        assert_eq!(labels[0], vec![0]);
        assert_eq!(labels[1], vec![0, 1]);
        assert!(labels[2].is_empty());
        let ff = write_tmp("node,f1,f2\na,1.0,2.0\nb,0.5,-1.5\nc,0.0,3.25\n");
        g.load_features_csv(ff.path()).unwrap();
        assert_eq!(g.attributes.as_ref().unwrap()[1], vec![0.5, -1.5]);
    }

    #[test]
    fn free_only_encoding_is_the_table_itself() {
        let g = Graph::from_edges(3, &[(0, 1, 1.0)], false).unwrap();
        let mut rng = Rng::new(1);
        let raw = encode_attributes(&g, &AttributeEncoderConfig::free_only(8), &mut rng).unwrap();
        assert_eq!(raw.fixed.shape(), &[3, 0]);
        assert_eq!(raw.free_init.shape(), &[3, 8]);
        assert!(raw.free_init.values().iter().any(|v| *v != 0.0));
    }

    #[test]
    fn single_token_fills_one_bucket() {
        let mut g = Graph::from_edges(2, &[(0, 1, 1.0)], false).unwrap();
        g.tokens = Some(vec![
            vec!["apple".into(), "apple".into()],
            vec!["pear".into()],
        ]);
        let mut rng = Rng::new(1);
        let cfg = AttributeEncoderConfig {
            hash_buckets: 4,
            numeric_dim: 0,
            free_dim: 0,
        };
        let raw = encode_attributes(&g, &cfg, &mut rng).unwrap();
        let row0 = &raw.fixed.values()[0..4];
        let nonzero: Vec<f64> = row0.iter().copied().filter(|v| *v != 0.0).collect();
        assert_eq!(nonzero, vec![1.0]); // full mass in one bucket after normalization
    }

    #[test]
    fn disjoint_tokens_have_zero_cosine_without_collisions() {
        // tokens chosen so their buckets differ (verified via token_hash)
        let b = 16u64;
        let (t1, t2) = ("alpha", "bravo");
        assert_ne!(token_hash(t1) % b, token_hash(t2) % b);
        let mut g = Graph::from_edges(2, &[(0, 1, 1.0)], false).unwrap();
        g.tokens = Some(vec![vec![t1.into()], vec![t2.into()]]);
        let mut rng = Rng::new(1);
        let cfg = AttributeEncoderConfig {
            hash_buckets: 16,
            numeric_dim: 0,
            free_dim: 0,
        };
        let raw = encode_attributes(&g, &cfg, &mut rng).unwrap();
        let v = raw.fixed.values();
        let dot: f64 = (0..16).map(|j| v[j] * v[16 + j]).sum();
        assert_eq!(dot, 0.0);
    }

    #[test]
    fn missing_numeric_feature_names_the_node() {
        let mut g = Graph::from_edges(2, &[(0, 1, 1.0)], false).unwrap();
        g.attributes = Some(vec![vec![1.0, 2.0], vec![]]);
        let mut rng = Rng::new(1);
        let cfg = AttributeEncoderConfig {
            hash_buckets: 0,
            numeric_dim: 2,
            free_dim: 0,
        };
        let err = encode_attributes(&g, &cfg, &mut rng)
            .unwrap_err()
            .to_string();
        assert!(err.contains("node 1"), "{err}");
    }
}
