// Scratch: can the architecture learn a deterministic structural rule?
// Target: edge (i,j) present iff i and j share >= 2 common neighbors in the
// input graph. Pure supervised learning, fixed t.
use flowgraph::graph::Graph;
use flowgraph::model::{HyperParams, ModelParams};
use flowgraph::rng::Rng;
use flowgraph::tensor::Tape;
use flowgraph::train::{tape_loss, Adam};

fn rule_target(g: &Graph) -> Graph {
    let n = g.n_nodes();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            let common = (0..n)
                .filter(|&k| k != i && k != j && g.edge_type(i, k) != 0 && g.edge_type(j, k) != 0)
                .count();
            if common >= 2 {
                edges.push((i, j, 1));
            }
        }
    }
    Graph::from_edges(vec![0; n], &edges).unwrap()
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3000);
    let layers: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2);
    let dx: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(32);
    let hp = HyperParams {
        layers,
        heads: 4,
        dx,
        de: dx / 2,
        dy: dx / 2,
        dropout: 0.0,
        n_max: 16,
        ..HyperParams::desk(1, 2)
    };
    let mut model = ModelParams::init(hp, 1).unwrap();
    let mut adam = Adam::new(&model, 1e-3, 1.0);
    let mut rng = Rng::new(5);
    let batch = 8;
    for step in 0..steps {
        let mut grads: Vec<Vec<f64>> = model
            .params()
            .iter()
            .map(|p| vec![0.0; p.values.len()])
            .collect();
        let mut loss_sum = 0.0;
        for _ in 0..batch {
            let n = 10;
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.bernoulli(0.4) {
                        edges.push((i, j, 1));
                    }
                }
            }
            let g = Graph::from_edges(vec![0; n], &edges).unwrap();
            let target = rule_target(&g);
            let mut tape = Tape::new();
            let binding = model.bind(&mut tape);
            let (total, _, _) =
                tape_loss(&mut tape, &model, &binding, &g, None, &target, 0.5, 5.0, None).unwrap();
            let gr = tape.backward(total).unwrap();
            loss_sum += tape.scalar_value(total);
            for (acc, &id) in grads.iter_mut().zip(&binding.ids) {
                for (a, &v) in acc.iter_mut().zip(gr.get(id)) {
                    *a += v / batch as f64;
                }
            }
        }
        adam.step(&mut model, &grads);
        if step % 500 == 0 || step == steps - 1 {
            println!("step {step}: loss {:.4}", loss_sum / batch as f64);
        }
    }
}
