use nsbm::datagen::{planted_partition, PlantedPartitionSpec};
use nsbm::framework::{Framework, ModelConfig, TrainConfig};
use nsbm::graph::AttributeEncoderConfig;
use nsbm::embedder::EmbedderConfig;
use nsbm::community::LossWeights;

fn main() {
    let spec = PlantedPartitionSpec {
        k: 10, community_sizes: vec![60; 10], p_in: 0.15, p_out: 0.01,
        attr_dim: 8, attr_noise: 0.5, seed: 42,
    };
    let g = planted_partition(&spec).unwrap();
    let truth: Vec<usize> = g.labels.as_ref().unwrap().iter().map(|l| l[0]).collect();
    let model = ModelConfig {
        k: 10, pseudo: false,
        attr: AttributeEncoderConfig { hash_buckets: 0, numeric_dim: 8, free_dim: 8 },
        embedder: EmbedderConfig { repr_budget: 16, attention_width: 64, pool_hidden: 32, d_out: 32, ..EmbedderConfig::default() },
        loss_weights: LossWeights::default(),
        ..ModelConfig::default()
    };
    let mut fw = Framework::new(g.clone(), model, 7).unwrap();
    let train = TrainConfig { epochs: 50, batch_size: 256, communities_per_batch: 3, learning_rate: 5e-3, seed: 7, ..TrainConfig::default() };
    fw.train(&train).unwrap();
    let (x, _) = fw.full_forward().unwrap();
    let d = 32;
    // per planted-community mean embeddings
    let mut means = vec![vec![0.0; d]; 10];
    for v in 0..600 {
        for j in 0..d { means[truth[v]][j] += x.values()[v*d+j] / 60.0; }
    }
    println!("community-mean cosine matrix (x100, planted communities):");
    for a in 0..10 {
        let row: Vec<i64> = (0..10).map(|b| {
            let na: f64 = means[a].iter().map(|v| v*v).sum::<f64>().sqrt();
            let nb: f64 = means[b].iter().map(|v| v*v).sum::<f64>().sqrt();
            let dot: f64 = means[a].iter().zip(&means[b]).map(|(p,q)| p*q).sum();
            (dot/(na*nb)*100.0).round() as i64
        }).collect();
        println!("{a}: {row:?}");
    }
    // and within-community coherence
    let mut intra = vec![0.0; 10]; let mut cnt = vec![0usize; 10];
    for u in 0..600 { for v in (u+1)..600 {
        if truth[u] == truth[v] {
            let cu = &x.values()[u*d..(u+1)*d]; let cv = &x.values()[v*d..(v+1)*d];
            intra[truth[u]] += cu.iter().zip(cv).map(|(a,b)| a*b).sum::<f64>();
            cnt[truth[u]] += 1;
        }
    }}
    let coh: Vec<i64> = (0..10).map(|c| (intra[c]/cnt[c] as f64 * 100.0).round() as i64).collect();
    println!("within-community mean cosine (x100): {coh:?}");
}
