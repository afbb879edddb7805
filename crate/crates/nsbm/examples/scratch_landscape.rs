use nsbm::community::{batch_adjacency, community_similarity, sbm_loss};
use nsbm::datagen::{planted_partition, PlantedPartitionSpec};
use nsbm::numerics::Tape;

fn eval(z: &[f64], n: usize, k: usize, x: &[f64], d: usize, a: &[f64]) -> (f64, f64) {
    let tape = Tape::new();
    let z_id = tape.constant(vec![n, k], z.to_vec()).unwrap();
    let x_id = tape.constant(vec![n, d], x.to_vec()).unwrap();
    let a_id = tape.constant(vec![n, n], a.to_vec()).unwrap();
    let c = community_similarity(&tape, z_id, x_id, a_id).unwrap();
    let sizes = tape.sum_axis(z_id, 0).unwrap();
    let loss = sbm_loss(&tape, c, sizes).unwrap();
    let v = tape.scalar_value(loss).unwrap();
    (v, v / (n * n) as f64)
}

fn main() {
    let spec = PlantedPartitionSpec {
        k: 10, community_sizes: vec![60; 10], p_in: 0.15, p_out: 0.01,
        attr_dim: 0, attr_noise: 0.0, seed: 42,
    };
    let g = planted_partition(&spec).unwrap();
    let n = g.num_nodes();
    let k = 10;
    let truth: Vec<usize> = g.labels.as_ref().unwrap().iter().map(|l| l[0]).collect();
    let nodes: Vec<usize> = (0..n).collect();
    let a = batch_adjacency(&g, &nodes);
    // X = one-hot community direction (perfect structure), d = k
    let d = k;
    let mut x = vec![0.0; n * d];
    for v in 0..n { x[v * d + truth[v]] = 1.0; }
    // (a) truth one-hot Z
    let mut z_truth = vec![0.0; n * k];
    for v in 0..n { z_truth[v * k + truth[v]] = 1.0; }
    // (b) all in one community
    let mut z_one = vec![0.0; n * k];
    for v in 0..n { z_one[v * k] = 1.0; }
    // (c) uniform
    let z_unif = vec![1.0 / k as f64; n * k];
    // (d) two mega communities (truth 0-4 -> 0, 5-9 -> 1)
    let mut z_two = vec![0.0; n * k];
    for v in 0..n { z_two[v * k + if truth[v] < 5 {0} else {1}] = 1.0; }
    // (e) random one-hot
    let mut z_rand = vec![0.0; n * k];
    for v in 0..n { z_rand[v * k + (v * 7 + 3) % k] = 1.0; }
    for (name, z) in [("truth", &z_truth), ("one-community", &z_one), ("uniform", &z_unif), ("two-mega", &z_two), ("random", &z_rand)] {
        let (raw, per_pair) = eval(z, n, k, &x, d, &a);
        println!("{name:>14}: sbm_loss = {raw:>12.2}  per-pair = {per_pair:.4}");
    }
}
