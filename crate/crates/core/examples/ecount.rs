// Scratch: edge-count distribution of pretrained samples by node count.
use flowgraph::graph::gen_community_small;
use flowgraph::model::HyperParams;
use flowgraph::prior::empirical_prior_with;
use flowgraph::sampler::{sample, SampleConfig};
use flowgraph::train::{train_from_scratch, TrainConfig, TrainOutputs};

fn main() {
    let all = gen_community_small(100, 42).unwrap();
    let (train, _) = all.split_at(80);
    let hp = HyperParams {
        layers: 2, heads: 4, dx: 32, de: 16, dy: 16, dropout: 0.0, n_max: 24,
        ..HyperParams::desk(1, 2)
    };
    let cfg = TrainConfig { batch_size: 8, steps: 3000, learning_rate: 1e-3, seed: 1, ..TrainConfig::default() };
    let (model, _) = train_from_scratch(&train.to_vec(), hp, &cfg, &TrainOutputs::default()).unwrap();
    let prior = empirical_prior_with(train, 1, 2).unwrap();
    let scfg = SampleConfig { n_steps: 50, n_samples: 300, seed: 77, ..Default::default() };
    let (samples, _) = sample(&model, &prior, &scfg).unwrap();
    let mut by_n: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for g in &samples {
        by_n.entry(g.n_nodes()).or_default().push(g.edge_count());
    }
    for (n, counts) in &by_n {
        let mean: f64 = counts.iter().sum::<usize>() as f64 / counts.len() as f64;
        println!("n={n}: {} samples, mean |E| {:.1}, range {}..{}", counts.len(), mean,
                 counts.iter().min().unwrap(), counts.iter().max().unwrap());
    }
    let all_counts: Vec<usize> = samples.iter().map(|g| g.edge_count()).collect();
    let mean: f64 = all_counts.iter().sum::<usize>() as f64 / all_counts.len() as f64;
    println!("overall mean |E| {:.1}", mean);
    for (t, s) in [(35.0, 4.0), (40.0, 4.0), (40.0, 6.0), (45.0, 6.0)] {
        let r: f64 = all_counts.iter().map(|&e| {
            let d = e as f64 - t;
            (-d * d / (2.0 * s * s)).exp()
        }).sum::<f64>() / all_counts.len() as f64;
        println!("reward(target={t}, sigma={s}): baseline {:.3}", r);
    }
}
