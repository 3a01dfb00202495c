// Scratch: full diagnosis — on-path accuracy, chain traces, iso-match rate.
use flowgraph::coupling::hamming;
use flowgraph::flow::QMode;
use flowgraph::graph::gen_community_small;
use flowgraph::metrics::is_isomorphic;
use flowgraph::model::{ForwardInput, HyperParams};
use flowgraph::prior::empirical_prior_with;
use flowgraph::rng::Rng;
use flowgraph::sampler::{sample, SampleConfig};
use flowgraph::train::{corrupt_graph, train_from_scratch, TrainConfig, TrainOutputs};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(2000);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let layers: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(2);
    let dx: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(32);
    let heads: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4);
    let g = gen_community_small(40, 7)
        .unwrap()
        .into_iter()
        .find(|g| g.n_nodes() == 12)
        .unwrap();
    let dataset = vec![g.clone()];
    let hp = HyperParams {
        layers,
        heads,
        dx,
        de: dx / 2,
        dy: dx / 2,
        dropout: 0.0,
        n_max: 24,
        ..HyperParams::desk(1, 2)
    };
    let cfg = TrainConfig {
        batch_size: 8,
        steps,
        learning_rate: lr,
        seed: 11,
        ..TrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let (model, reports) =
        train_from_scratch(&dataset, hp, &cfg, &TrainOutputs::default()).unwrap();
    let late: f64 = reports[reports.len() - 50..].iter().map(|r| r.total).sum::<f64>() / 50.0;
    println!("trained {:.0}s, late loss {late:.4}, params {}", t0.elapsed().as_secs_f64(), model.n_params());

    let prior = empirical_prior_with(&dataset, 1, 2).unwrap();
    let n = g.n_nodes();
    let mut rng = Rng::new(3);
    for t in [0.3, 0.5, 0.7, 0.9] {
        let mut mean_p_true = 0.0;
        let mut total = 0usize;
        for _ in 0..30 {
            let g0 = prior.sample_graph(n, &mut rng);
            let gt = corrupt_graph(&g0, &g, t, QMode::PointMass, None, &mut rng).unwrap();
            let out = model.forward(&ForwardInput::plain(&gt, t)).unwrap();
            for i in 0..n {
                for j in (i + 1)..n {
                    mean_p_true += out.edge_probs(i, j)[g.edge_type(i, j) as usize];
                    total += 1;
                }
            }
        }
        println!("t={t:.1}: on-path mean p(true) {:.3}", mean_p_true / total as f64);
    }

    for q_mode in [QMode::PointMass, QMode::Prior] {
        let scfg = SampleConfig {
            n_steps: 100,
            n_samples: 100,
            seed: 5,
            q_mode,
            record_trajectory: false,
            ..Default::default()
        };
        let (samples, _) = sample(&model, &prior, &scfg).unwrap();
        let hits = samples.iter().filter(|s| is_isomorphic(s, &g)).count();
        let mean_h: f64 = samples
            .iter()
            .map(|s| hamming(s, &g, 1.0).unwrap())
            .sum::<f64>()
            / samples.len() as f64;
        println!("{q_mode:?}: iso-match {}/100, mean labeled hamming {mean_h:.1}", hits);
    }
}
