use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use surpsel_core::model::{init_params, train, Dataset, MlpConfig, MlpParams, OutputKind, Standardizer};

fn loss(p: &MlpParams, x: &Array2<f64>, y: &[usize]) -> f64 {
    p.batch_loss(&p.forward_batch(x.view(), None).probs, y)
}

/// Largest relative error between backprop and central differences.
fn grad_check(seed: u64, output: OutputKind) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.gen_range(2..7);
    let hidden: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(2..7)).collect();
    let cfg = MlpConfig {
        hidden,
        seed,
        output,
        ..MlpConfig::reference(input_dim)
    };
    let mut p = init_params(&cfg);
    for l in &mut p.layers {
        l.bias.mapv_inplace(|_| rng.gen_range(-0.1..0.1));
    }
    let batch = 5;
    let x = Array2::from_shape_fn((batch, input_dim), |_| rng.gen_range(-2.0..2.0));
    let y: Vec<usize> = (0..batch).map(|_| rng.gen_range(0..7)).collect();
    let grads = p.backward(&p.forward_batch(x.view(), None), &y);
    let h = 1e-5;
    let mut worst = 0.0f64;
    let rel = |a: f64, n: f64| (a - n).abs() / (a.abs() + n.abs()).max(1e-7);
    for l in 0..p.layers.len() {
        let (rows, cols) = p.layers[l].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = p.layers[l].weight[[r, c]];
                p.layers[l].weight[[r, c]] = orig + h;
                let up = loss(&p, &x, &y);
                p.layers[l].weight[[r, c]] = orig - h;
                let down = loss(&p, &x, &y);
                p.layers[l].weight[[r, c]] = orig;
                worst = worst.max(rel(grads.weight[l][[r, c]], (up - down) / (2.0 * h)));
            }
            let orig = p.layers[l].bias[r];
            p.layers[l].bias[r] = orig + h;
            let up = loss(&p, &x, &y);
            p.layers[l].bias[r] = orig - h;
            let down = loss(&p, &x, &y);
            p.layers[l].bias[r] = orig;
            worst = worst.max(rel(grads.bias[l][r], (up - down) / (2.0 * h)));
        }
    }
    worst
}

#[test]
fn gradients_match_central_differences() {
    for seed in 0..20 {
        for output in [OutputKind::SigmoidBce, OutputKind::SoftmaxCe] {
            let err = grad_check(seed, output);
            assert!(err < 1e-4, "seed {seed} {output:?}: {err}");
        }
    }
}

pub fn blobs(dim: usize, per_class: usize, seed: u64) -> (Dataset, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<Vec<f64>> = (0..7).map(|_| (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
    let mut make = |n: usize| {
        let mut y = Vec::new();
        let mut rows = Vec::new();
        for _ in 0..n {
            for (c, center) in centers.iter().enumerate() {
                y.push(c);
                rows.extend(center.iter().map(|m| m + rng.gen_range(-0.25..0.25)));
            }
        }
        Dataset::new(Array2::from_shape_vec((y.len(), dim), rows).unwrap(), y)
    };
    let (mut train_set, mut test_set) = (make(per_class), make(per_class / 2));
    let s = Standardizer::fit(train_set.x.view());
    s.apply(&mut train_set.x);
    s.apply(&mut test_set.x);
    (train_set, test_set)
}

fn accuracy(p: &MlpParams, d: &Dataset) -> f64 {
    let pred = p.predict_batch(d.x.view());
    pred.iter().zip(&d.y).filter(|(a, b)| a == b).count() as f64 / d.len() as f64
}

#[test]
fn learns_separable_blobs_deterministically() {
    let (train_set, test_set) = blobs(35, 200, 3);
    let cfg = MlpConfig::reference(35);
    let (p, record) = train(&cfg, &train_set, Some(&test_set)).unwrap();
    assert!(accuracy(&p, &test_set) >= 0.95, "accuracy {}", accuracy(&p, &test_set));
    assert!(record.train_loss.last().unwrap() < &record.train_loss[0]);
    let (again, record2) = train(&cfg, &train_set, Some(&test_set)).unwrap();
    assert_eq!(p, again);
    assert_eq!(record, record2);
}
