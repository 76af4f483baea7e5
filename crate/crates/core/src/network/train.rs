//! Loss, optimizer, training loop, metrics and checkpoints.

use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{checkpoint_paths, Network, NetworkConfig};
use crate::conv::{load_state, Mode};
use crate::geometry::{augment, PointCloud};
use crate::{tensors, Error, Result};

/// Mean softmax cross-entropy over rows and its gradient w.r.t. the scores.
pub fn cross_entropy(scores: &Array2<f64>, labels: &[usize]) -> Result<(f64, Array2<f64>)> {
    let (n, c) = scores.dim();
    if labels.len() != n {
        return Err(Error::dims(format!("{} labels for {n} score rows", labels.len())));
    }
    if let Some(&l) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::invalid(format!("label {l} out of range for {c} classes")));
    }
    let mut grad = Array2::zeros((n, c));
    let mut loss = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        let row = scores.row(r);
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
        loss += max + sum.ln() - row[label];
        for j in 0..c {
            grad[[r, j]] = (row[j] - max).exp() / sum / n as f64;
        }
        grad[[r, label]] -= 1.0 / n as f64;
    }
    Ok((loss / n as f64, grad))
}

/// Adam on a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(lr: f64, n: usize) -> Self {
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[f64]) -> Result<()> {
        let total: usize = params.iter().map(|p| p.len()).sum();
        if total != grads.len() || total != self.m.len() {
            return Err(Error::dims(format!(
                "{total} parameters, {} gradients, optimizer state {}",
                grads.len(),
                self.m.len()
            )));
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let mut k = 0;
        for slot in params {
            for p in slot.iter_mut() {
                let g = grads[k];
                self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g;
                self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g;
                *p -= self.lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + self.eps);
                k += 1;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    /// Accuracy on the training batches as they were seen.
    pub train_accuracy: f64,
    pub test_overall_accuracy: Option<f64>,
    pub test_mean_class_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochStats>,
    pub final_overall_accuracy: Option<f64>,
    pub final_mean_class_accuracy: Option<f64>,
    /// Kept out of serialized output so reports compare byte for byte.
    #[serde(skip)]
    pub wall_clock_seconds: f64,
}

fn labels_of(clouds: &[PointCloud], num_classes: usize) -> Result<Vec<usize>> {
    clouds
        .iter()
        .enumerate()
        .map(|(i, c)| match c.label {
            Some(l) if l < num_classes => Ok(l),
            Some(l) => Err(Error::invalid(format!("cloud {i} has label {l}, expected < {num_classes}"))),
            None => Err(Error::invalid(format!("cloud {i} has no label"))),
        })
        .collect()
}

/// Trains in place with Adam on cross-entropy. If `test` is given it is
/// evaluated after every epoch.
pub fn train(net: &mut Network, train_set: &[PointCloud], test: Option<&[PointCloud]>) -> Result<TrainReport> {
    let cfg: NetworkConfig = net.config.clone();
    if train_set.is_empty() {
        return Err(Error::invalid("empty training set"));
    }
    let labels = labels_of(train_set, cfg.num_classes)?;
    if let Some(t) = test {
        labels_of(t, cfg.num_classes)?;
    }
    let start = Instant::now();
    let mut adam = Adam::new(cfg.learning_rate, net.num_params());
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut epochs = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for batch in order.chunks(cfg.batch_size) {
            let clouds = batch
                .iter()
                .map(|&i| {
                    let c = &train_set[i];
                    match cfg.augment_scale {
                        Some(range) => {
                            let (pos, _) = augment(&c.positions, range, false, rng.random())?;
                            Ok(PointCloud { positions: pos, ..c.clone() })
                        }
                        None => Ok(c.clone()),
                    }
                })
                .collect::<Result<Vec<_>>>()?;
            let refs: Vec<&PointCloud> = clouds.iter().collect();
            let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (scores, tape) = net.forward(&refs, Mode::Train, None)?;
            let (loss, d_scores) = cross_entropy(&scores, &y)?;
            loss_sum += loss * batch.len() as f64;
            correct += argmax_rows(&scores).iter().zip(&y).filter(|(p, l)| p == l).count();
            let grads = net.backward(&tape, &d_scores)?;
            let mut slots = Vec::new();
            net.params_mut(&mut slots);
            adam.step(slots, &grads)?;
        }
        let (test_oa, test_mca) = match test {
            Some(t) => {
                let (oa, mca) = evaluate(net, t)?;
                (Some(oa), Some(mca))
            }
            None => (None, None),
        };
        let stats = EpochStats {
            epoch: epoch + 1,
            loss: loss_sum / train_set.len() as f64,
            train_accuracy: correct as f64 / train_set.len() as f64,
            test_overall_accuracy: test_oa,
            test_mean_class_accuracy: test_mca,
        };
        log::info!(
            "epoch {} loss {:.4} train acc {:.3} test acc {:?}",
            stats.epoch,
            stats.loss,
            stats.train_accuracy,
            stats.test_overall_accuracy
        );
        epochs.push(stats);
    }
    let (final_overall_accuracy, final_mean_class_accuracy) = match test {
        Some(t) if cfg.epochs == 0 => {
            let (oa, mca) = evaluate(net, t)?;
            (Some(oa), Some(mca))
        }
        _ => epochs
            .last()
            .map_or((None, None), |e| (e.test_overall_accuracy, e.test_mean_class_accuracy)),
    };
    Ok(TrainReport {
        epochs,
        final_overall_accuracy,
        final_mean_class_accuracy,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    })
}

fn argmax_rows(scores: &Array2<f64>) -> Vec<usize> {
    scores
        .rows()
        .into_iter()
        .map(|r| {
            let mut best = 0;
            for (j, &v) in r.iter().enumerate() {
                if v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per cloud, eval mode, in batches of the configured size.
pub fn predict(net: &mut Network, clouds: &[PointCloud]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(clouds.len());
    for chunk in clouds.chunks(net.config.batch_size) {
        let refs: Vec<&PointCloud> = chunk.iter().collect();
        let (scores, _) = net.forward(&refs, Mode::Eval, None)?;
        out.extend(argmax_rows(&scores));
    }
    Ok(out)
}

/// Overall accuracy and the unweighted mean of per-class accuracies over
/// the classes present in `labels`.
pub fn class_accuracies(predictions: &[usize], labels: &[usize]) -> Result<(f64, f64)> {
    if labels.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    if predictions.len() != labels.len() {
        return Err(Error::dims(format!("{} predictions for {} labels", predictions.len(), labels.len())));
    }
    let classes = labels.iter().max().unwrap() + 1;
    let mut total = vec![0usize; classes];
    let mut hit = vec![0usize; classes];
    for (&p, &l) in predictions.iter().zip(labels) {
        total[l] += 1;
        if p == l {
            hit[l] += 1;
        }
    }
    let overall = hit.iter().sum::<usize>() as f64 / labels.len() as f64;
    let present: Vec<f64> = (0..classes)
        .filter(|&c| total[c] > 0)
        .map(|c| hit[c] as f64 / total[c] as f64)
        .collect();
    Ok((overall, present.iter().sum::<f64>() / present.len() as f64))
}

pub fn evaluate(net: &mut Network, dataset: &[PointCloud]) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::invalid("empty dataset"));
    }
    let labels = labels_of(dataset, net.config.num_classes)?;
    class_accuracies(&predict(net, dataset)?, &labels)
}

/// Writes the weights container and the JSON config into `dir`.
pub fn save_checkpoint(net: &Network, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (weights, config) = checkpoint_paths(dir);
    tensors::save(weights, &net.tensors())?;
    std::fs::write(config, serde_json::to_string_pretty(&net.config)? + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Network> {
    let (weights, config) = checkpoint_paths(dir);
    let config: NetworkConfig = serde_json::from_str(&std::fs::read_to_string(config)?)?;
    let mut net = Network::new(config)?;
    let stored = tensors::load(weights)?;
    let mut slots = Vec::new();
    net.state_mut(&mut slots);
    if slots.len() != stored.len() {
        return Err(Error::invalid(format!(
            "checkpoint holds {} tensors, network has {}",
            stored.len(),
            slots.len()
        )));
    }
    load_state(slots, &stored)?;
    Ok(net)
}
