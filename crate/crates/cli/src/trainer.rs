//! Desk-scale training loop: augment, forward, loss, adjoint backward,
//! Adam. Deterministic given the seed; the worker count changes wall time
//! only, never the numbers (per-sample gradients are reduced in index
//! order).

use std::time::Instant;

use stream_core::model::{assign_params, flatten_params, EventClassifier, ModelError};
use stream_core::rng::CounterRng;
use stream_core::train::{
    adam_step, argmax, clip_global_norm, cross_entropy, one_hot, AdamConfig, AdamOutcome,
    AdamState, GapTaskDataset, TokenStreamSample, TrainError,
};

use crate::metrics::MetricsRecord;
use crate::parallel::parallel_map_indexed;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub grad_clip: f64,
    /// Stop once validation accuracy reaches this value.
    pub early_stop_acc: Option<f64>,
    /// Probability of time-scale jitter (factor 0.9..1.1) per train sample.
    pub time_jitter_prob: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 3e-3,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.0,
            batch: 32,
            epochs: 25,
            seed: 0,
            grad_clip: 1.0,
            early_stop_acc: None,
            time_jitter_prob: 0.0,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TrainerError {
    #[error("training diverged at epoch {epoch}, batch {batch}: loss = {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("{0}")]
    Model(ModelError),
    #[error("{0}")]
    Loss(TrainError),
    #[error("dataset is empty")]
    EmptyDataset,
}

impl From<ModelError> for TrainerError {
    fn from(e: ModelError) -> Self {
        TrainerError::Model(e)
    }
}

impl From<TrainError> for TrainerError {
    fn from(e: TrainError) -> Self {
        TrainerError::Loss(e)
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub records: Vec<MetricsRecord>,
    pub final_val_accuracy: f64,
    pub best_val_accuracy: f64,
    pub epochs_run: usize,
    pub adam_skips: usize,
}

struct SampleResult {
    loss: f64,
    correct: bool,
    grads: Vec<f64>,
}

fn forward_backward(
    model: &EventClassifier,
    sample: &TokenStreamSample,
    jitter: Option<f64>,
) -> Result<SampleResult, TrainerError> {
    let t_scaled: Vec<f64>;
    let t: &[f64] = match jitter {
        Some(s) => {
            t_scaled = sample.t.iter().map(|&x| x * s).collect();
            &t_scaled
        }
        None => &sample.t,
    };
    let (logits, cache) = model.forward_ids(t, &sample.ids)?;
    let target = one_hot(logits.len(), sample.label);
    let (loss, d_logits) = cross_entropy(&logits, &target)?;
    let mut grads = model.zeros_like();
    model.backward(&cache, &d_logits, &mut grads);
    Ok(SampleResult {
        loss,
        correct: argmax(&logits) == sample.label,
        grads: flatten_params(|f| grads.visit_params(f)),
    })
}

fn evaluate(
    model: &EventClassifier,
    samples: &[TokenStreamSample],
    workers: usize,
) -> Result<(f64, f64), TrainerError> {
    let results = parallel_map_indexed(workers, samples.len(), |i| {
        let s = &samples[i];
        let (logits, _) = model.forward_ids(&s.t, &s.ids)?;
        let (loss, _) = cross_entropy(&logits, &one_hot(logits.len(), s.label))?;
        Ok::<(f64, bool), TrainerError>((loss, argmax(&logits) == s.label))
    });
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for r in results {
        let (loss, ok) = r?;
        loss_sum += loss;
        correct += ok as usize;
    }
    Ok((loss_sum / samples.len() as f64, correct as f64 / samples.len() as f64))
}

/// Full training loop over the synthetic task. Emits one train and one val
/// metrics record per epoch; a non-finite batch loss aborts with a
/// divergence error.
pub fn train_toy(
    model: &mut EventClassifier,
    dataset: &GapTaskDataset,
    cfg: &TrainConfig,
    workers: usize,
) -> Result<TrainReport, TrainerError> {
    if dataset.train.is_empty() || dataset.val.is_empty() {
        return Err(TrainerError::EmptyDataset);
    }
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        beta1: cfg.beta1,
        beta2: cfg.beta2,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let mut params = flatten_params(|f| model.visit_params(f));
    let mut adam = AdamState::new(params.len());
    let rng_root = CounterRng::new(cfg.seed);
    let mut records = Vec::new();
    let mut best_val = 0.0f64;
    let mut final_val = 0.0f64;
    let mut epochs_run = 0;
    let mut adam_skips = 0usize;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut order_rng = rng_root.substream(epoch as u64);
        let order = order_rng.permutation(dataset.train.len());
        let mut train_loss = 0.0;
        let mut train_correct = 0usize;

        for (batch_idx, batch) in order.chunks(cfg.batch).enumerate() {
            // Per-sample jitter factors drawn up front so the parallel map
            // stays a pure function of the index.
            let mut aug_rng = order_rng.substream(batch_idx as u64);
            let jitters: Vec<Option<f64>> = batch
                .iter()
                .map(|_| {
                    if cfg.time_jitter_prob > 0.0 && aug_rng.bernoulli(cfg.time_jitter_prob) {
                        Some(aug_rng.range_f64(0.9, 1.1))
                    } else {
                        None
                    }
                })
                .collect();
            let results = parallel_map_indexed(workers, batch.len(), |i| {
                forward_backward(model, &dataset.train[batch[i]], jitters[i])
            });
            let mut grad_sum = vec![0.0; params.len()];
            let mut batch_loss = 0.0;
            for r in results {
                let r = r?;
                batch_loss += r.loss;
                train_correct += r.correct as usize;
                for (g, s) in grad_sum.iter_mut().zip(&r.grads) {
                    *g += s;
                }
            }
            batch_loss /= batch.len() as f64;
            train_loss += batch_loss * batch.len() as f64;
            if !batch_loss.is_finite() {
                return Err(TrainerError::Diverged { epoch, batch: batch_idx, loss: batch_loss });
            }
            let inv = 1.0 / batch.len() as f64;
            for g in grad_sum.iter_mut() {
                *g *= inv;
            }
            if cfg.grad_clip > 0.0 {
                clip_global_norm(&mut grad_sum, cfg.grad_clip);
            }
            if adam_step(&mut params, &grad_sum, &mut adam, &adam_cfg)?
                == AdamOutcome::SkippedNonFinite
            {
                adam_skips += 1;
            }
            assign_params(|f| model.visit_params_mut(f), &params)?;
        }

        let train_acc = train_correct as f64 / dataset.train.len() as f64;
        let (val_loss, val_acc) = evaluate(model, &dataset.val, workers)?;
        let wall = started.elapsed().as_secs_f64();
        records.push(MetricsRecord {
            epoch,
            split: "train".into(),
            loss: train_loss / dataset.train.len() as f64,
            accuracy: train_acc,
            wall_seconds: wall,
        });
        records.push(MetricsRecord {
            epoch,
            split: "val".into(),
            loss: val_loss,
            accuracy: val_acc,
            wall_seconds: started.elapsed().as_secs_f64(),
        });
        best_val = best_val.max(val_acc);
        final_val = val_acc;
        epochs_run = epoch;
        if let Some(target) = cfg.early_stop_acc {
            if val_acc >= target {
                break;
            }
        }
    }

    Ok(TrainReport {
        records,
        final_val_accuracy: final_val,
        best_val_accuracy: best_val,
        epochs_run,
        adam_skips,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stream_core::layer::AblationRow;
    use stream_core::model::ModelConfig;
    use stream_core::train::{make_gap_task, GapTaskConfig};

    fn tiny_setup(variant: AblationRow, seed: u64) -> (EventClassifier, GapTaskDataset) {
        let task_cfg = GapTaskConfig { events: 48, vocab: 8, ..GapTaskConfig::default() };
        let mut rng = CounterRng::new(seed);
        let data = make_gap_task(&mut rng, 40, 16, &task_cfg);
        let mut cfg = ModelConfig::new(6, 3, 1, variant, 2);
        cfg.median_gap = data.median_gap;
        let model = EventClassifier::init(&cfg, data.vocab, &mut rng).unwrap();
        (model, data)
    }

    #[test]
    fn zero_learning_rate_stays_at_chance() {
        let (mut model, data) = tiny_setup(AblationRow::Stream0Gamma, 1);
        let before = flatten_params(|f| model.visit_params(f));
        let cfg = TrainConfig { lr: 0.0, epochs: 2, batch: 8, ..TrainConfig::default() };
        let report = train_toy(&mut model, &data, &cfg, 2).unwrap();
        let after = flatten_params(|f| model.visit_params(f));
        assert_eq!(before, after, "lr=0 must not move parameters");
        for rec in &report.records {
            assert!(rec.accuracy > 0.15 && rec.accuracy < 0.85, "{rec:?}");
        }
    }

    #[test]
    fn identical_seeds_produce_identical_records() {
        let cfg = TrainConfig { epochs: 2, batch: 8, ..TrainConfig::default() };
        let (mut m1, d1) = tiny_setup(AblationRow::Stream0Gamma, 5);
        let r1 = train_toy(&mut m1, &d1, &cfg, 1).unwrap();
        let (mut m2, d2) = tiny_setup(AblationRow::Stream0Gamma, 5);
        let r2 = train_toy(&mut m2, &d2, &cfg, 2).unwrap();
        assert_eq!(r1.records.len(), r2.records.len());
        for (a, b) in r1.records.iter().zip(&r2.records) {
            assert!(a.same_measurement(b), "{a:?} vs {b:?}");
        }
        assert_eq!(m1, m2, "models must match bitwise across worker counts");
    }
}
