use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{stack_tokens, Classifier};
use crate::error::{write_file, Error, Result};
use crate::mesh::DatasetSplit;
use crate::seed;
use crate::spae::EmbeddingSequence;
use crate::tensor::{lr_decay, save_checkpoint, AdamConfig, AdamState, Graph, TensorError};

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub decay_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub checkpoint_path: Option<PathBuf>,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            batch_size: 8,
            learning_rate: 1e-4,
            decay_rate: 0.7,
            weight_decay: 0.0,
            seed: 0,
            checkpoint_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<usize>,
    pub labels: Vec<usize>,
    pub accuracy: f64,
    /// Rows are true classes, columns predictions.
    pub confusion: Vec<Vec<u64>>,
}

fn labels_of(seqs: &[EmbeddingSequence], n_classes: usize) -> Result<Vec<usize>> {
    seqs.iter()
        .map(|s| match s.label {
            Some(l) if (l as usize) < n_classes => Ok(l as usize),
            Some(l) => Err(TensorError::LabelOutOfRange {
                label: l as usize,
                classes: n_classes,
            }
            .into()),
            None => Err(Error::Config("classification needs labeled sequences".into())),
        })
        .collect()
}

pub fn confusion_matrix(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Vec<Vec<u64>>> {
    if predictions.len() != labels.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut m = vec![vec![0u64; n_classes]; n_classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        if p >= n_classes || l >= n_classes {
            return Err(TensorError::LabelOutOfRange {
                label: p.max(l),
                classes: n_classes,
            }
            .into());
        }
        m[l][p] += 1;
    }
    Ok(m)
}

pub fn evaluate(model: &Classifier<f32>, seqs: &[EmbeddingSequence]) -> Result<Evaluation> {
    let n = model.config().n_classes;
    let labels = labels_of(seqs, n)?;
    let predictions: Vec<usize> = model.predict(seqs, 32)?.into_iter().map(|p| p.label).collect();
    let correct = predictions.iter().zip(&labels).filter(|(p, l)| p == l).count();
    let accuracy = if seqs.is_empty() { 0.0 } else { correct as f64 / seqs.len() as f64 };
    let confusion = confusion_matrix(&predictions, &labels, n)?;
    Ok(Evaluation {
        predictions,
        labels,
        accuracy,
        confusion,
    })
}

/// Mini-batch cross-entropy training with per-epoch exponential learning
/// rate decay; test accuracy is measured after every epoch.
pub fn train_classifier(
    model: &mut Classifier<f32>,
    data: &DatasetSplit<EmbeddingSequence>,
    config: &ClassifierTrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<Vec<EpochMetrics>> {
    if config.epochs == 0 || config.batch_size == 0 {
        return Err(Error::Config("epochs and batch_size must be positive".into()));
    }
    if !(config.learning_rate > 0.0) || !(config.decay_rate > 0.0 && config.decay_rate <= 1.0) {
        return Err(Error::Config("need learning_rate > 0 and decay_rate in (0, 1]".into()));
    }
    if data.train.is_empty() {
        return Err(Error::Config("classifier training needs at least one sequence".into()));
    }
    let n = model.config().n_classes;
    let labels = labels_of(&data.train, n)?;
    labels_of(&data.test, n)?;
    let mut optimizer = AdamState::new(model.params(), AdamConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(config.seed, "classifier-shuffle"));
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let lr = lr_decay(config.learning_rate, epoch, config.decay_rate);
        let mut total = 0.0;
        for (iteration, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<EmbeddingSequence> = chunk.iter().map(|&i| data.train[i].clone()).collect();
            let batch_labels: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();
            let (x, len) = stack_tokens::<f32>(&batch)?;
            let mut g = Graph::with_params(model.params());
            let x = g.constant(x);
            let abort = |loss: f64| Error::NonFiniteLoss {
                epoch,
                iteration,
                loss,
            };
            let logits = match model.logits_node(&mut g, x, batch.len(), len) {
                Ok(v) => v,
                Err(Error::Tensor(TensorError::NonFinite { .. })) => return Err(abort(f64::NAN)),
                Err(e) => return Err(e),
            };
            let loss_var = match g.cross_entropy(logits, &batch_labels) {
                Ok(v) => v,
                Err(TensorError::NonFinite { .. }) => return Err(abort(f64::NAN)),
                Err(e) => return Err(e.into()),
            };
            let loss = g.value(loss_var).item() as f64;
            if !loss.is_finite() {
                return Err(abort(loss));
            }
            let grads = g.backward(loss_var)?.into_param_grads();
            drop(g);
            optimizer.step(model.params_mut(), &grads, lr, config.weight_decay)?;
            total += loss * batch.len() as f64;
        }
        let test_accuracy = if data.test.is_empty() {
            0.0
        } else {
            evaluate(model, &data.test)?.accuracy
        };
        let m = EpochMetrics {
            epoch,
            train_loss: total / data.train.len() as f64,
            test_accuracy,
        };
        on_epoch(&m);
        history.push(m);
    }
    if let Some(path) = &config.checkpoint_path {
        save_checkpoint(path, model.params(), Some(&optimizer), &model.config().to_meta())?;
    }
    Ok(history)
}

pub fn metrics_csv(metrics: &[EpochMetrics]) -> String {
    let mut s = String::from("epoch,train_loss,test_accuracy\n");
    for m in metrics {
        s.push_str(&format!("{},{},{}\n", m.epoch, m.train_loss, m.test_accuracy));
    }
    s
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    write_file(path, metrics_csv(metrics).as_bytes())
}

pub fn confusion_csv(matrix: &[Vec<u64>]) -> String {
    let mut s = String::new();
    for row in matrix {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn write_confusion_csv(path: &Path, matrix: &[Vec<u64>]) -> Result<()> {
    write_file(path, confusion_csv(matrix).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::temporal::{ClassifierConfig, HeadKind};
    use crate::tensor::Tensor;

    fn toy() -> DatasetSplit<EmbeddingSequence> {
        // Class c has its signal in column c; the rest is a fixed pattern.
        let make = |c: usize, k: usize| {
            let t = Tensor::from_fn(4, 3, |i, j| if j == c { 1.0 } else { ((i + k) as f32 * 0.3).sin() * 0.1 });
            EmbeddingSequence::new(t, Some(c as u32)).unwrap()
        };
        let train = (0..18).map(|k| make(k % 3, k)).collect();
        let test = (0..6).map(|k| make(k % 3, k + 40)).collect();
        DatasetSplit {
            train,
            test,
            split_fraction: 0.75,
        }
    }

    fn config(kind: HeadKind) -> ClassifierConfig {
        ClassifierConfig {
            kind,
            d_model: 8,
            ffn_hidden: 8,
            hidden: 8,
            seq_len: 4,
            ..ClassifierConfig::transformer(3, 3)
        }
    }

    #[test]
    fn learns_toy_task_reproducibly() {
        let data = toy();
        let tc = ClassifierTrainConfig {
            epochs: 30,
            batch_size: 4,
            learning_rate: 1e-2,
            decay_rate: 0.95,
            seed: 5,
            ..Default::default()
        };
        for kind in [HeadKind::Transformer, HeadKind::Mlp, HeadKind::Lstm, HeadKind::Cnn] {
            let mut a = Classifier::new(config(kind), 3).unwrap();
            let mut b = a.clone();
            let ha = train_classifier(&mut a, &data, &tc, |_| {}).unwrap();
            let hb = train_classifier(&mut b, &data, &tc, |_| {}).unwrap();
            assert_eq!(ha, hb, "{kind}");
            assert_eq!(ha.last().unwrap().test_accuracy, 1.0, "{kind}");
            let eval = evaluate(&a, &data.test).unwrap();
            assert_eq!(eval.confusion, vec![vec![2, 0, 0], vec![0, 2, 0], vec![0, 0, 2]]);
        }
    }

    #[test]
    fn confusion_counts() {
        let m = confusion_matrix(&[0, 1, 1, 2, 0], &[0, 1, 2, 2, 1], 3).unwrap();
        assert_eq!(m, vec![vec![1, 0, 0], vec![1, 1, 0], vec![0, 1, 1]]);
        assert!(confusion_matrix(&[3], &[0], 3).is_err());
        assert!(confusion_matrix(&[0, 1], &[0], 3).is_err());
        assert_eq!(confusion_csv(&m), "1,0,0\n1,1,0\n0,1,1\n");
    }

    #[test]
    fn unlabeled_or_out_of_range_rejected() {
        let mut data = toy();
        data.train[0].label = Some(7);
        let mut m = Classifier::new(config(HeadKind::Cnn), 0).unwrap();
        assert!(train_classifier(&mut m, &data, &ClassifierTrainConfig::default(), |_| {}).is_err());
        data.train[0].label = None;
        assert!(train_classifier(&mut m, &data, &ClassifierTrainConfig::default(), |_| {}).is_err());
    }

    #[test]
    fn metrics_schema() {
        let csv = metrics_csv(&[EpochMetrics {
            epoch: 0,
            train_loss: 1.5,
            test_accuracy: 0.25,
        }]);
        assert_eq!(csv, "epoch,train_loss,test_accuracy\n0,1.5,0.25\n");
    }
}
