//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use aerframe::probe::{cross_entropy, he_init, Matrix, MlpModel, Mode, ModelOptions};
use aerframe::EventStream;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Mean cross-entropy of a training-mode pass with dropout disabled.
pub fn training_loss(model: &MlpModel, x: &Matrix, labels: &[usize]) -> f64 {
    let (logits, _) = model
        .forward(x, Mode::Training { dropout_seed: None })
        .expect("forward");
    cross_entropy(&logits, labels).expect("loss")
}

/// Central differences `(L(p + h) - L(p - h)) / 2h` for every scalar parameter,
/// in the model's parameter order.
pub fn numeric_gradients(model: &MlpModel, x: &Matrix, labels: &[usize], h: f64) -> Vec<Vec<f64>> {
    let sizes = model.parameter_sizes();
    let mut out = Vec::with_capacity(sizes.len());
    let mut probe = model.clone();
    for (t, &n) in sizes.iter().enumerate() {
        let mut g = Vec::with_capacity(n);
        for i in 0..n {
            let orig = probe.parameters()[t][i];
            probe.parameters_mut()[t][i] = orig + h;
            let up = training_loss(&probe, x, labels);
            probe.parameters_mut()[t][i] = orig - h;
            let down = training_loss(&probe, x, labels);
            probe.parameters_mut()[t][i] = orig;
            g.push((up - down) / (2.0 * h));
        }
        out.push(g);
    }
    out
}

/// Below this magnitude a gradient is compared on an absolute scale: finite
/// differences carry roughly `eps_machine / h ~ 1e-11` of rounding noise.
pub const GRAD_FLOOR: f64 = 1e-4;

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRAD_FLOOR)
}

/// Largest relative error and the (tensor, index) where it occurs.
pub fn max_relative_error(analytic: &[Vec<f64>], numeric: &[Vec<f64>]) -> (f64, usize, usize) {
    let mut worst = (0.0, 0, 0);
    for (t, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        assert_eq!(a.len(), n.len(), "tensor {t} length");
        for (i, (x, y)) in a.iter().zip(n).enumerate() {
            let e = relative_error(*x, *y);
            if e > worst.0 {
                worst = (e, t, i);
            }
        }
    }
    worst
}

/// A 4-8-3 probe with randomized biases and batch-norm affine parameters,
/// plus a batch that exercises every class.
pub fn gradient_fixture(seed: u64, batchnorm: bool) -> (MlpModel, Matrix, Vec<usize>) {
    let mut model = he_init(&[4, 8, 3], seed, ModelOptions { batchnorm, dropout_rate: 0.0 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for l in &mut model.layers {
        for b in &mut l.bias {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    for bn in model.batchnorm.iter_mut().flatten() {
        for g in &mut bn.gamma {
            *g = rng.random_range(0.5..1.5);
        }
        for b in &mut bn.beta {
            *b = rng.random_range(-0.5..0.5);
        }
    }
    let batch = 6;
    let data = (0..batch * 4).map(|_| rng.random_range(-2.0..2.0)).collect();
    let x = Matrix::from_vec(batch, 4, data);
    let labels = (0..batch).map(|i| i % 3).collect();
    (model, x, labels)
}

/// Per-pixel timestamp sums by grouping events in a hash map, independent of
/// the frame accumulator.
pub fn brute_force_time_sums(stream: &EventStream) -> Vec<u64> {
    let mut sums: HashMap<(u16, u16), Vec<u32>> = HashMap::new();
    for e in &stream.events {
        sums.entry((e.x, e.y)).or_default().push(e.timestamp);
    }
    let mut out = Vec::new();
    for y in 0..stream.height as u16 {
        for x in 0..stream.width as u16 {
            out.push(
                sums.get(&(x, y))
                    .map_or(0, |ts| ts.iter().map(|&t| u64::from(t)).sum()),
            );
        }
    }
    out
}
