use nsbm::datagen::{planted_partition, PlantedPartitionSpec};
use nsbm::framework::{Framework, ModelConfig, TrainConfig};
use nsbm::graph::AttributeEncoderConfig;
use nsbm::embedder::EmbedderConfig;
use nsbm::community::LossWeights;
use nsbm::metrics::community_metrics;
use std::time::Instant;

fn main() {
    for attr_noise in [0.5, 1.0] {
        let spec = PlantedPartitionSpec {
            k: 10, community_sizes: vec![60; 10], p_in: 0.15, p_out: 0.01,
            attr_dim: 8, attr_noise, seed: 42,
        };
        let g = planted_partition(&spec).unwrap();
        let truth = g.labels.clone().unwrap();
        for (lr, c, epochs) in [(5e-3, 3, 50), (2e-3, 3, 80), (5e-3, 5, 50), (1e-2, 3, 50)] {
            let model = ModelConfig {
                k: 10, pseudo: false,
                attr: AttributeEncoderConfig { hash_buckets: 0, numeric_dim: 8, free_dim: 8 },
                embedder: EmbedderConfig { repr_budget: 16, attention_width: 64, pool_hidden: 32, d_out: 32, ..EmbedderConfig::default() },
                loss_weights: LossWeights::default(),
                ..ModelConfig::default()
            };
            let mut fw = Framework::new(g.clone(), model, 7).unwrap();
            let t = Instant::now();
            let train = TrainConfig { epochs, batch_size: 256, communities_per_batch: c, learning_rate: lr, seed: 7, ..TrainConfig::default() };
            fw.train(&train).unwrap();
            let (_, z) = fw.full_forward().unwrap();
            let m = community_metrics(z.values(), z.shape()[1], 10, &truth, 10).unwrap();
            let cols = z.shape()[1];
            let nonempty = {
                let mut mass = vec![0.0; cols];
                for v in 0..600 { for cc in 0..cols { mass[cc] += z.values()[v*cols+cc]; } }
                mass.iter().filter(|&&m| m > 6.0).count()
            };
            println!("noise={attr_noise} lr={lr} c={c} ep={epochs}: F1={:.3} nmi={:.3} cols={} ({:?})",
                     m.macro_f1, m.nmi, nonempty, t.elapsed());
        }
    }
}
