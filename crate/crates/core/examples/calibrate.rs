// Scratch calibration harness for acceptance-test configuration.
use flowgraph::graph::{gen_community_small, Graph};
use flowgraph::metrics::{evaluate_sets, is_isomorphic};
use flowgraph::model::HyperParams;
use flowgraph::prior::empirical_prior_with;
use flowgraph::sampler::{sample, SampleConfig};
use flowgraph::train::{train_from_scratch, TrainConfig, TrainOutputs};
use std::time::Instant;

fn small_hp(node_cats: usize, edge_cats: usize, l: usize, h: usize, dx: usize, de: usize, dy: usize) -> HyperParams {
    HyperParams {
        layers: l,
        heads: h,
        dx,
        de,
        dy,
        dropout: 0.0,
        n_max: 24,
        ..HyperParams::desk(node_cats, edge_cats)
    }
}

fn timing() {
    let data = gen_community_small(16, 1).unwrap();
    for (l, h, dx, de, dy) in [(2, 4, 32, 16, 16), (3, 4, 32, 16, 16), (2, 4, 48, 24, 24), (4, 8, 64, 32, 32)] {
        let hp = small_hp(1, 2, l, h, dx, de, dy);
        for batch in [8, 16] {
            let cfg = TrainConfig {
                batch_size: batch,
                steps: 20,
                seed: 2,
                ..TrainConfig::default()
            };
            let t0 = Instant::now();
            let (model, _) = train_from_scratch(&data, hp.clone(), &cfg, &TrainOutputs::default()).unwrap();
            let per_step = t0.elapsed().as_secs_f64() / 20.0;
            // sampling timing
            let prior = empirical_prior_with(&data, 1, 2).unwrap();
            let t1 = Instant::now();
            let scfg = SampleConfig { n_steps: 50, n_samples: 4, seed: 1, ..Default::default() };
            let _ = sample(&model, &prior, &scfg).unwrap();
            let per_fwd = t1.elapsed().as_secs_f64() / (50.0 * 4.0);
            println!(
                "L={l} H={h} dx={dx} de={de} dy={dy} batch={batch}: {:.0} ms/step, {:.2} ms/forward, params={}",
                per_step * 1e3, per_fwd * 1e3, model.n_params()
            );
        }
    }
}

fn overfit(steps: usize, lr: f64, l: usize, dx: usize) {
    // One 12-node community graph.
    let g: Graph = gen_community_small(40, 7)
        .unwrap()
        .into_iter()
        .find(|g| g.n_nodes() == 12)
        .unwrap();
    println!("training graph: n={} |E|={}", g.n_nodes(), g.edge_count());
    let dataset = vec![g.clone()];
    let hp = small_hp(1, 2, l, 4, dx, dx / 2, dx / 2);
    let cfg = TrainConfig {
        batch_size: 8,
        steps,
        learning_rate: lr,
        seed: 11,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, reports) = train_from_scratch(&dataset, hp, &cfg, &TrainOutputs::default()).unwrap();
    let late: f64 = reports[reports.len() - 50..].iter().map(|r| r.total).sum::<f64>() / 50.0;
    println!("trained in {:.0}s, late loss {late:.4}", t0.elapsed().as_secs_f64());
    let prior = empirical_prior_with(&dataset, 1, 2).unwrap();
    let t1 = Instant::now();
    let scfg = SampleConfig { n_steps: 100, n_samples: 200, seed: 5, ..Default::default() };
    let (samples, _) = sample(&model, &prior, &scfg).unwrap();
    let hits = samples.iter().filter(|s| is_isomorphic(s, &g)).count();
    let exact = samples.iter().filter(|s| *s == &g).count();
    println!(
        "sampled 200 in {:.0}s: iso-match {}/200, labeled-exact {}/200",
        t1.elapsed().as_secs_f64(), hits, exact
    );
}

fn community(steps: usize, lr: f64, l: usize, h: usize, dx: usize, batch: usize, seed: u64) {
    let all = gen_community_small(100, 42).unwrap();
    let (train, test) = all.split_at(80);
    let hp = small_hp(1, 2, l, h, dx, dx / 2, dx / 2);
    let cfg = TrainConfig {
        batch_size: batch,
        steps,
        learning_rate: lr,
        seed,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, reports) =
        train_from_scratch(&train.to_vec(), hp, &cfg, &TrainOutputs::default()).unwrap();
    let late: f64 = reports[reports.len() - 100..].iter().map(|r| r.total).sum::<f64>() / 100.0;
    println!("steps={steps} lr={lr} L={l} dx={dx} batch={batch} seed={seed}: {:.0}s, loss {late:.4}", t0.elapsed().as_secs_f64());
    let prior = empirical_prior_with(train, 1, 2).unwrap();
    for n_steps in [100, 500] {
        let scfg = SampleConfig { n_steps, n_samples: 20, seed: 9, ..Default::default() };
        let (samples, _) = sample(&model, &prior, &scfg).unwrap();
        let report = evaluate_sets(&samples, test, Some(train)).unwrap();
        println!(
            "  n_steps={n_steps}: Deg {:.4} Clus {:.4} Orbit {:.4} Avg {:.4} (uniq {:.2})",
            report.degree_mmd, report.clustering_mmd, report.orbit_mmd, report.average_mmd, report.uniqueness
        );
    }
    // Baselines
    let report = evaluate_sets(&train[..20].to_vec(), test, None).unwrap();
    println!("  train-vs-test baseline: Avg {:.4}", report.average_mmd);
    let prior_samples: Vec<Graph> = {
        let mut rng = flowgraph::rng::Rng::new(3);
        (0..20).map(|_| {
            let n = prior.sample_size(&mut rng);
            prior.sample_graph(n, &mut rng)
        }).collect()
    };
    let report = evaluate_sets(&prior_samples, test, None).unwrap();
    println!("  prior-vs-test baseline: Avg {:.4}", report.average_mmd);
}

fn recover3(steps: usize, lr: f64) {
    use flowgraph::graph::GraphSpace;
    use flowgraph::metrics::{distribution_from_support, tv_distance_enumerated};
    use flowgraph::sampler::tabulated_sample;
    use flowgraph::train::sample_dataset_from;

    let space = GraphSpace::new(3, 2, 2).unwrap();
    // Two complement-symmetric targets: all-type-0 triangle, all-type-1
    // empty graph.
    let tri = Graph::from_edges(vec![0, 0, 0], &[(0, 1, 1), (0, 2, 1), (1, 2, 1)]).unwrap();
    let empty = Graph::from_edges(vec![1, 1, 1], &[]).unwrap();
    let target = distribution_from_support(&space, &[(tri.clone(), 0.5), (empty.clone(), 0.5)]);
    let dataset = sample_dataset_from(&space, &target, 1024, 9);
    let hp = HyperParams {
        layers: 2,
        heads: 2,
        dx: 16,
        de: 8,
        dy: 12,
        dropout: 0.0,
        n_max: 8,
        ..HyperParams::desk(2, 2)
    };
    let cfg = TrainConfig {
        batch_size: 16,
        steps,
        learning_rate: lr,
        seed: 4,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, reports) =
        train_from_scratch(&dataset, hp, &cfg, &TrainOutputs::default()).unwrap();
    let late: f64 = reports[reports.len() - 50..].iter().map(|r| r.total).sum::<f64>() / 50.0;
    println!("trained {:.0}s, late loss {late:.4}", t0.elapsed().as_secs_f64());
    let prior = empirical_prior_with(&dataset, 2, 2).unwrap();
    for n_steps in [50, 500] {
        let t1 = Instant::now();
        let scfg = SampleConfig {
            n_steps,
            n_samples: 50_000,
            seed: 12,
            ..SampleConfig::default()
        };
        let samples = tabulated_sample(&model, &prior, &space, &scfg).unwrap();
        let tv = tv_distance_enumerated(&samples, &space, &target).unwrap();
        println!("n_steps={n_steps}: tv={tv:.4} in {:.0}s", t1.elapsed().as_secs_f64());
    }
}

fn guide_calibration(pre_steps: usize, target: f64, sigma: f64, iters: usize) {
    use flowgraph::guide::{finetune, GuideOutputs, RLConfig, RewardFn};

    let all = gen_community_small(100, 42).unwrap();
    let (train, test) = all.split_at(80);
    let hp = small_hp(1, 2, 2, 4, 32, 16, 16);
    let cfg = TrainConfig {
        batch_size: 8,
        steps: pre_steps,
        learning_rate: 1e-3,
        seed: 1,
        ..TrainConfig::default()
    };
    let t0 = Instant::now();
    let (model, _) = train_from_scratch(&train.to_vec(), hp, &cfg, &TrainOutputs::default()).unwrap();
    println!("pretrained in {:.0}s", t0.elapsed().as_secs_f64());
    let prior = empirical_prior_with(train, 1, 2).unwrap();

    let reward = RewardFn::EdgeCountTarget { target, sigma };
    let measure = |m: &flowgraph::model::ModelParams, tag: &str| -> (f64, f64) {
        let scfg = SampleConfig { n_steps: 50, n_samples: 200, seed: 77, ..Default::default() };
        let (samples, _) = sample(m, &prior, &scfg).unwrap();
        let mean_r: f64 = samples.iter().map(|g| reward.eval(g)).sum::<f64>() / samples.len() as f64;
        let sizes: Vec<usize> = samples.iter().map(|g| g.edge_count()).collect();
        let report = evaluate_sets(&samples, test, None).unwrap();
        println!(
            "{tag}: mean reward {mean_r:.4}, deg mmd {:.4}, |E| range {:?}-{:?}",
            report.degree_mmd,
            sizes.iter().min(),
            sizes.iter().max()
        );
        (mean_r, report.degree_mmd)
    };
    let (base_r, base_deg) = measure(&model, "pretrained");
    // Chunked fine-tuning: measure the T=1 policy reward every 50 iters.
    let mut tuned = model.clone();
    let mut done = 0;
    while done < iters {
        let rl = RLConfig {
            alpha: 0.999,
            beta: 0.001,
            temperature: std::env::var("CAL_T").ok().and_then(|v| v.parse().ok()).unwrap_or(1.0),
            n_train: 50,
            traj_per_iter: 16,
            n_steps: 50,
            seed: 5 + done as u64,
            learning_rate: std::env::var("CAL_LR").ok().and_then(|v| v.parse().ok()).unwrap_or(1e-4),
            ..RLConfig::default()
        };
        let t1 = Instant::now();
        let (next, reports) = finetune(&tuned, &prior, &reward, &rl, &GuideOutputs::default()).unwrap();
        tuned = next;
        done += reports.len();
        let (tuned_r, tuned_deg) = measure(&tuned, &format!("after {done} iters"));
        println!(
            "  ({:.0}s) reward ratio {:.2}x, deg mmd delta {:+.4}",
            t1.elapsed().as_secs_f64(),
            tuned_r / base_r.max(1e-9),
            tuned_deg - base_deg
        );
        if tuned_r >= 1.5 * base_r {
            println!("reached 1.5x at {done} iters");
            break;
        }
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    match args[1].as_str() {
        "timing" => timing(),
        "overfit" => overfit(
            args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000),
            args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3),
            args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2),
            args.get(5).map(|s| s.parse().unwrap()).unwrap_or(32),
        ),
        "recover3" => recover3(
            args.get(2).map(|s| s.parse().unwrap()).unwrap_or(4000),
            args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3),
        ),
        "guide" => guide_calibration(
            args.get(2).map(|s| s.parse().unwrap()).unwrap_or(5000),
            args.get(3).map(|s| s.parse().unwrap()).unwrap_or(35.0),
            args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8.0),
            args.get(5).map(|s| s.parse().unwrap()).unwrap_or(300),
        ),
        "community" => community(
            args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2000),
            args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3),
            args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2),
            args.get(5).map(|s| s.parse().unwrap()).unwrap_or(4),
            args.get(6).map(|s| s.parse().unwrap()).unwrap_or(32),
            args.get(7).map(|s| s.parse().unwrap()).unwrap_or(8),
            args.get(8).map(|s| s.parse().unwrap()).unwrap_or(1),
        ),
        other => eprintln!("unknown: {other}"),
    }
}
