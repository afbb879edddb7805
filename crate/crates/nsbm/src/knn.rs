//! Exact k-nearest-neighbor search over dense f64 points: a k-d tree with a
//! brute-force twin used to cross-check it. Ties on distance resolve toward
//! the lowest point id, so results are deterministic.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Candidate ordering: greater distance is "worse"; on equal distance the
/// higher id is "worse" (so the lowest id wins the last slot).
#[derive(Debug, Clone, Copy, PartialEq)]
struct Candidate {
    dist2: f64,
    id: usize,
}

impl Eq for Candidate {}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist2
            .partial_cmp(&other.dist2)
            .expect("finite distances")
            .then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// k-d tree over row-major points.
pub struct KdTree {
    dims: usize,
    points: Vec<f64>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    pub fn build(points: &[f64], dims: usize) -> KdTree {
        assert!(dims > 0, "kd-tree needs at least one dimension");
        assert_eq!(points.len() % dims, 0);
        let n = points.len() / dims;
        let mut tree = KdTree {
            dims,
            points: points.to_vec(),
            nodes: Vec::with_capacity(n),
            root: None,
        };
        let mut ids: Vec<usize> = (0..n).collect();
        tree.root = tree.build_rec(&mut ids, 0);
        tree
    }

    fn build_rec(&mut self, ids: &mut [usize], depth: usize) -> Option<usize> {
        if ids.is_empty() {
            return None;
        }
        let axis = depth % self.dims;
        let dims = self.dims;
        let points = std::mem::take(&mut self.points);
        ids.sort_by(|&a, &b| {
            points[a * dims + axis]
                .partial_cmp(&points[b * dims + axis])
                .expect("finite coordinates")
                .then(a.cmp(&b))
        });
        self.points = points;
        let mid = ids.len() / 2;
        let point = ids[mid];
        let node_idx = self.nodes.len();
        self.nodes.push(Node {
            point,
            axis,
            left: None,
            right: None,
        });
        let (left_ids, rest) = ids.split_at_mut(mid);
        let right_ids = &mut rest[1..];
        let left = self.build_rec(left_ids, depth + 1);
        let right = self.build_rec(right_ids, depth + 1);
        self.nodes[node_idx].left = left;
        self.nodes[node_idx].right = right;
        Some(node_idx)
    }

    /// Top-k nearest points to `query`, ascending by (distance, id).
    /// Returns Euclidean distances.
    pub fn nearest_k(&self, query: &[f64], k: usize) -> Vec<(usize, f64)> {
        assert_eq!(query.len(), self.dims);
        if k == 0 {
            return Vec::new();
        }
        let mut heap: BinaryHeap<Candidate> = BinaryHeap::new();
        self.search(self.root, query, k, &mut heap);
        let mut out: Vec<(usize, f64)> = heap
            .into_iter()
            .map(|c| (c.id, c.dist2.sqrt()))
            .collect();
        out.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
        out
    }

    fn search(
        &self,
        node: Option<usize>,
        query: &[f64],
        k: usize,
        heap: &mut BinaryHeap<Candidate>,
    ) {
        let Some(idx) = node else { return };
        let n = &self.nodes[idx];
        let p = &self.points[n.point * self.dims..(n.point + 1) * self.dims];
        let dist2: f64 = p
            .iter()
            .zip(query)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        let cand = Candidate {
            dist2,
            id: n.point,
        };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().unwrap() {
            heap.pop();
            heap.push(cand);
        }
        let delta = query[n.axis] - p[n.axis];
        let (near, far) = if delta < 0.0 {
            (n.left, n.right)
        } else {
            (n.right, n.left)
        };
        self.search(near, query, k, heap);
        // the far side can still hold closer points (or equal-distance points
        // with lower ids) when the splitting plane is within the current worst
        let must_visit = heap.len() < k || delta * delta <= heap.peek().unwrap().dist2;
        if must_visit {
            self.search(far, query, k, heap);
        }
    }
}

/// Brute-force twin of [`KdTree::nearest_k`] with the same tie-breaking.
pub fn linear_scan_k(points: &[f64], dims: usize, query: &[f64], k: usize) -> Vec<(usize, f64)> {
    let n = points.len() / dims;
    let mut all: Vec<(usize, f64)> = (0..n)
        .map(|i| {
            let p = &points[i * dims..(i + 1) * dims];
            let d2: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
            (i, d2.sqrt())
        })
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    #[test]
    fn agrees_with_linear_scan() {
        let mut rng = Rng::new(6);
        for trial in 0..20 {
            let dims = 1 + (trial % 4);
            let n = 40;
            let points: Vec<f64> = (0..n * dims).map(|_| rng.normal(0.0, 1.0)).collect();
            let tree = KdTree::build(&points, dims);
            for _ in 0..10 {
                let query: Vec<f64> = (0..dims).map(|_| rng.normal(0.0, 1.0)).collect();
                let k = 1 + (rng.range(0..5usize));
                let a = tree.nearest_k(&query, k);
                let b = linear_scan_k(&points, dims, &query, k);
                assert_eq!(a.len(), b.len());
                for (x, y) in a.iter().zip(&b) {
                    assert_eq!(x.0, y.0);
                    assert!((x.1 - y.1).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn equal_distance_prefers_lowest_id() {
        // duplicated points: ids 0/1 coincide, 2/3 coincide
        let points = vec![1.0, 0.0, 1.0, 0.0, 3.0, 0.0, 3.0, 0.0];
        let tree = KdTree::build(&points, 2);
        let got = tree.nearest_k(&[0.0, 0.0], 3);
        assert_eq!(got[0].0, 0);
        assert_eq!(got[1].0, 1);
        assert_eq!(got[2].0, 2);
    }

    #[test]
    fn k_larger_than_set_truncates() {
        let points = vec![0.0, 1.0, 2.0];
        let tree = KdTree::build(&points, 1);
        assert_eq!(tree.nearest_k(&[0.9], 10).len(), 3);
    }
}
