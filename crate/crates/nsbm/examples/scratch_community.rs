use nsbm::datagen::{planted_partition, PlantedPartitionSpec};
use nsbm::framework::{Framework, ModelConfig, TrainConfig};
use nsbm::graph::AttributeEncoderConfig;
use nsbm::embedder::EmbedderConfig;
use nsbm::community::LossWeights;
use nsbm::metrics::community_metrics;
use std::time::Instant;

fn main() {
    let spec = PlantedPartitionSpec {
        k: 10, community_sizes: vec![60; 10], p_in: 0.15, p_out: 0.01,
        attr_dim: 8, attr_noise: 1.0, seed: 42,
    };
    let g = planted_partition(&spec).unwrap();
    let truth = g.labels.clone().unwrap();
    let model = ModelConfig {
        k: 10, pseudo: false,
        attr: AttributeEncoderConfig { hash_buckets: 0, numeric_dim: 8, free_dim: 8 },
        embedder: EmbedderConfig { repr_budget: 16, attention_width: 64, pool_hidden: 32, d_out: 32, ..EmbedderConfig::default() },
        loss_weights: LossWeights::default(),
        ..ModelConfig::default()
    };
    let mut fw = Framework::new(g.clone(), model, 7).unwrap();
    let t1 = Instant::now();
    let train = TrainConfig { epochs: 50, batch_size: 256, communities_per_batch: 3, learning_rate: 5e-3, seed: 7, ..TrainConfig::default() };
    let hist = fw.train(&train).unwrap();
    for (i, b) in hist.iter().enumerate() {
        if i % 15 == 0 || i == hist.len() - 1 {
            println!("step {i}: sbm={:.2} ent={:.4} link={:.4} total={:.2}", b.sbm, b.entropy, b.link, b.total);
        }
    }
    let (_, z) = fw.full_forward().unwrap();
    let cols = z.shape()[1];
    let mut col_mass = vec![0.0; cols];
    for v in 0..600 { for c in 0..cols { col_mass[c] += z.values()[v*cols+c]; } }
    println!("Z col mass: {:?}", col_mass.iter().map(|m| (m/600.0*100.0).round()/100.0).collect::<Vec<_>>());
    let m = community_metrics(z.values(), cols, 10, &truth, 10).unwrap();
    println!("precision={:.3} macroF1={:.3} nmi={:.3} time={:?}", m.average_precision, m.macro_f1, m.nmi, t1.elapsed());
}
