use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::matrix::Matrix;
use super::model::{argmax, cross_entropy, MlpModel, Mode};
use super::ProbeError;

/// Flattened samples (one per row) with class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSet {
    pub features: Matrix,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    pub fn new(features: Matrix, labels: Vec<usize>) -> Result<Self, ProbeError> {
        if features.rows() != labels.len() {
            return Err(ProbeError::Shape(format!(
                "{} samples but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        Ok(LabeledSet { features, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Must agree with whether the model carries batch-norm layers.
    pub batchnorm: bool,
    pub dropout: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            seed: 0,
            shuffle: true,
            batchnorm: true,
            dropout: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        if self.epochs == 0 {
            return Err(ProbeError::InvalidArgument("epochs must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(ProbeError::InvalidArgument(
                "batch size must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when no validation set was supplied.
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub optimizer: AdamState,
    pub history: Vec<EpochRecord>,
}

/// Fraction of samples whose argmax prediction (inference mode) matches the label.
pub fn evaluate(model: &MlpModel, set: &LabeledSet) -> Result<f64, ProbeError> {
    if set.is_empty() {
        return Err(ProbeError::InvalidArgument("empty evaluation set".into()));
    }
    let logits = model.predict(&set.features)?;
    let correct = set
        .labels
        .iter()
        .enumerate()
        .filter(|&(r, &y)| argmax(logits.row(r)) == y)
        .count();
    Ok(correct as f64 / set.len() as f64)
}

/// Mini-batch boundaries over `n` samples. A trailing single-sample batch is
/// merged into its predecessor when batch statistics need two samples.
fn batch_ranges(n: usize, size: usize, need_pairs: bool) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = (0..n).step_by(size).map(|s| (s, (s + size).min(n))).collect();
    if need_pairs && out.len() > 1 && out.last().is_some_and(|(s, e)| e - s == 1) {
        let (_, end) = out.pop().expect("non-empty");
        out.last_mut().expect("non-empty").1 = end;
    }
    out
}

/// Mini-batch Adam on the mean cross-entropy. Each epoch reshuffles the
/// training order and draws dropout masks from a generator seeded by
/// `config.seed`, so identical inputs give identical histories.
pub fn train(
    mut model: MlpModel,
    mut optimizer: AdamState,
    train_set: &LabeledSet,
    val_set: Option<&LabeledSet>,
    config: &TrainConfig,
) -> Result<TrainOutcome, ProbeError> {
    config.validate()?;
    if config.batchnorm != model.has_batchnorm() {
        return Err(ProbeError::InvalidArgument(format!(
            "config batchnorm={} but model batchnorm={}",
            config.batchnorm,
            model.has_batchnorm()
        )));
    }
    for set in std::iter::once(train_set).chain(val_set) {
        if set.features.cols() != model.input_dim() {
            return Err(ProbeError::Shape(format!(
                "samples have {} features, model expects {}",
                set.features.cols(),
                model.input_dim()
            )));
        }
        if let Some(&y) = set.labels.iter().find(|&&y| y >= model.n_classes()) {
            return Err(ProbeError::InvalidArgument(format!(
                "label {y} outside [0, {})",
                model.n_classes()
            )));
        }
    }
    if model.has_batchnorm() && config.batch_size < 2 {
        return Err(ProbeError::InvalidArgument(
            "batch normalization needs a batch size of at least 2".into(),
        ));
    }
    if train_set.is_empty() {
        return Err(ProbeError::InvalidArgument("empty training set".into()));
    }
    if model.has_batchnorm() && train_set.len() < 2 {
        return Err(ProbeError::InvalidArgument(
            "batch normalization needs at least 2 training samples".into(),
        ));
    }
    if optimizer.m.iter().map(Vec::len).collect::<Vec<_>>() != model.parameter_sizes() {
        return Err(ProbeError::Shape(
            "optimizer state does not match the model's parameters".into(),
        ));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let ranges = batch_ranges(train_set.len(), config.batch_size, model.has_batchnorm());
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 1..=config.epochs {
        if config.shuffle {
            order.shuffle(&mut rng);
        }
        let mut loss_sum = 0.0;
        for &(start, end) in &ranges {
            let idx = &order[start..end];
            let x = train_set.features.select_rows(idx);
            let y: Vec<usize> = idx.iter().map(|&i| train_set.labels[i]).collect();
            let dropout_seed = config.dropout.then(|| rng.random::<u64>());
            let (logits, cache) = model.forward(&x, Mode::Training { dropout_seed })?;
            loss_sum += cross_entropy(&logits, &y)? * y.len() as f64;
            let grads = model.backward(&cache, &y)?;
            model.update_running_stats(&cache);
            optimizer.step(&mut model.parameters_mut(), &grads.tensors)?;
        }
        history.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: evaluate(&model, train_set)?,
            val_acc: match val_set {
                Some(v) if !v.is_empty() => Some(evaluate(&model, v)?),
                _ => None,
            },
        });
    }
    Ok(TrainOutcome {
        model,
        optimizer,
        history,
    })
}

/// CSV rendering of a training history: `epoch,train_loss,train_acc,val_acc`.
pub fn format_history(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_acc\n");
    for r in history {
        let val = r.val_acc.map_or_else(|| "nan".to_owned(), |v| format!("{v:.6}"));
        out.push_str(&format!(
            "{},{:.6},{:.6},{}\n",
            r.epoch, r.train_loss, r.train_acc, val
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probe::adam::AdamConfig;
    use crate::probe::model::{he_init, ModelOptions};

    fn toy_set(n_per_class: usize, dim: usize) -> LabeledSet {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..2 * n_per_class {
            let class = i % 2;
            rows.push(vec![class as f64; dim]);
            labels.push(class);
        }
        LabeledSet::new(Matrix::from_rows(&rows), labels).unwrap()
    }

    fn fresh(dims: &[usize], opts: ModelOptions) -> (MlpModel, AdamState) {
        let m = he_init(dims, 5, opts).unwrap();
        let s = AdamState::new(&m.parameter_sizes(), AdamConfig::default());
        (m, s)
    }

    #[test]
    fn separable_toy_reaches_full_train_accuracy() {
        let set = toy_set(10, 16);
        let (m, s) = fresh(&[16, 8, 2], ModelOptions::default());
        let cfg = TrainConfig { epochs: 50, batch_size: 4, ..Default::default() };
        let out = train(m, s, &set, Some(&set), &cfg).unwrap();
        assert_eq!(out.history.len(), 50);
        assert_eq!(out.history.last().unwrap().train_acc, 1.0);
    }

    #[test]
    fn training_is_reproducible() {
        let set = toy_set(6, 4);
        let cfg = TrainConfig { epochs: 5, batch_size: 3, seed: 9, ..Default::default() };
        let run = || {
            let (m, s) = fresh(&[4, 6, 2], ModelOptions::default());
            train(m, s, &set, Some(&set), &cfg).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(format_history(&a.history), format_history(&b.history));
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        }
        assert_eq!(a.model, b.model);
    }

    #[test]
    fn rejects_bad_configs() {
        let set = toy_set(2, 4);
        let (m, s) = fresh(&[4, 2], ModelOptions::default());
        let zero = TrainConfig { epochs: 0, ..Default::default() };
        assert!(matches!(train(m.clone(), s.clone(), &set, None, &zero), Err(ProbeError::InvalidArgument(_))));
        let narrow = toy_set(2, 3);
        assert!(matches!(
            train(m.clone(), s.clone(), &narrow, None, &TrainConfig::default()),
            Err(ProbeError::Shape(_))
        ));
        let no_bn = TrainConfig { batchnorm: false, ..Default::default() };
        let (m2, s2) = fresh(&[4, 3, 2], ModelOptions::default());
        assert!(train(m2, s2, &set, None, &no_bn).is_err());
    }

    #[test]
    fn evaluation_rules() {
        let mut m = he_init(&[2, 3], 0, ModelOptions { batchnorm: false, dropout_rate: 0.0 }).unwrap();
        m.layers[0].weights.as_mut_slice().fill(0.0);
        // all-equal logits: always class 0
        let set = LabeledSet::new(Matrix::zeros(4, 2), vec![0, 1, 0, 1]).unwrap();
        assert_eq!(evaluate(&m, &set).unwrap(), 0.5);
        let zeros = LabeledSet::new(Matrix::zeros(3, 2), vec![0; 3]).unwrap();
        assert_eq!(evaluate(&m, &zeros).unwrap(), 1.0);
        let empty = LabeledSet::new(Matrix::zeros(0, 2), vec![]).unwrap();
        assert!(evaluate(&m, &empty).is_err());
    }

    #[test]
    fn batching_merges_single_tail() {
        assert_eq!(batch_ranges(5, 2, true), vec![(0, 2), (2, 5)]);
        assert_eq!(batch_ranges(5, 2, false), vec![(0, 2), (2, 4), (4, 5)]);
        assert_eq!(batch_ranges(4, 8, true), vec![(0, 4)]);
    }
}
