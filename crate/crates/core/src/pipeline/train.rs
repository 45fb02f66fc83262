use ndarray::{ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PipelineError, RunConfig};
use crate::nn::Dataset;
use crate::nn::{accuracy, argmax_rows, MlpModel};
use crate::quant::{AdamConfig, AdamState, OmegaCadence, QuantizedMlp, SteConfig, SteTrainer};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    /// Full-precision learning rate.
    pub lr: f64,
    /// Per-epoch learning-rate multiplier for full-precision training.
    pub lr_decay: f64,
    /// Decoupled weight decay on weight matrices during full-precision training.
    pub weight_decay: f64,
    pub fp_epochs: usize,
    pub ste_epochs: usize,
    /// Shadow-weight learning rate during straight-through training.
    pub ste_lr: f64,
    /// Basis-coefficient learning rate.
    pub omega_lr: f64,
    /// Per-epoch multiplier for both straight-through learning rates.
    pub ste_lr_decay: f64,
    pub lambda: f64,
    /// Straight-through steps over which λ rises linearly from 0. When
    /// non-zero the initial quantization uses λ = 0.
    pub lambda_ramp_steps: usize,
    pub cadence: OmegaCadence,
    /// Steps between code re-assignments; 0 re-assigns only at the end of
    /// each epoch.
    pub reassign_every: usize,
    /// Steps between ECL restarts from priors concentrated on code 0.
    /// Between them codes are assigned in one pass under fixed priors. 0 runs
    /// the full ECL iteration from the current priors at every re-assignment.
    pub prior_refresh: usize,
    /// Samples used to set the stored batchnorm statistics at the end of
    /// each epoch. Training steps normalize with batch statistics.
    pub bn_samples: usize,
    /// Test samples scored in the per-epoch log; all when unset.
    pub eval_limit: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 64,
            lr: 1e-3,
            lr_decay: 0.85,
            weight_decay: 0.0,
            fp_epochs: 10,
            ste_epochs: 5,
            ste_lr: 1e-4,
            omega_lr: 1e-6,
            ste_lr_decay: 1.0,
            lambda: 0.0,
            lambda_ramp_steps: 0,
            cadence: OmegaCadence::EveryStep,
            reassign_every: 1,
            prior_refresh: 100,
            bn_samples: 2048,
            eval_limit: None,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: String,
    pub epoch: usize,
    /// Mean per-sample training loss over the epoch.
    pub loss: f64,
    /// Accuracy on the evaluation set after the epoch.
    pub accuracy: f64,
    /// Mean bits per weight of the codes (quantized phase only).
    pub entropy: Option<f64>,
    pub sparsity: Option<f64>,
}

pub fn write_training_log<W: std::io::Write>(out: W, log: &[EpochRecord]) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    for r in log {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Accuracy of `model` on `data`, evaluated in chunks.
pub(crate) fn evaluate(model: &MlpModel, data: &Dataset) -> Result<f64, PipelineError> {
    let mut predictions = Vec::with_capacity(data.len());
    for chunk in data.samples.axis_chunks_iter(Axis(0), 2048) {
        predictions.extend(argmax_rows(model.predict(chunk)?.view()));
    }
    Ok(accuracy(&predictions, &data.labels))
}

fn eval_set<'a>(test: &'a Dataset, cfg: &TrainConfig, buf: &'a mut Option<Dataset>) -> &'a Dataset {
    match cfg.eval_limit {
        Some(n) if n < test.len() => buf.insert(test.take(n)),
        _ => test,
    }
}

fn batches(n: usize, batch: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch).map(<[usize]>::to_vec).collect()
}

fn has_batchnorm(model: &MlpModel) -> bool {
    model.layers.iter().any(|l| l.batchnorm.is_some())
}

fn calibrate(model: &mut MlpModel, data: &Dataset, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(), PipelineError> {
    if !has_batchnorm(model) {
        return Ok(());
    }
    let mut idx: Vec<usize> = (0..data.len()).collect();
    idx.shuffle(rng);
    idx.truncate(cfg.bn_samples.max(2));
    model.calibrate_batchnorm(data.samples.select(Axis(0), &idx).view())?;
    Ok(())
}

/// Statistics of the dequantized model, written back into the shadow layers.
fn calibrate_quantized(
    q: &mut QuantizedMlp,
    data: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), PipelineError> {
    if !has_batchnorm(&q.shadow) {
        return Ok(());
    }
    let mut model = q.dequantized_model();
    calibrate(&mut model, data, cfg, rng)?;
    for (dst, src) in q.shadow.layers.iter_mut().zip(model.layers) {
        dst.batchnorm = src.batchnorm;
    }
    Ok(())
}

/// Full-precision ADAM training with seeded shuffling. Batchnorm layers
/// train on batch statistics; the stored statistics are recalibrated from
/// the training data after each epoch.
pub fn train_full_precision(
    model: &mut MlpModel,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, PipelineError> {
    let mut adam = AdamState::new(AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    });
    let mut buf = None;
    let eval = eval_set(test, cfg, &mut buf);
    let mut log = Vec::new();
    for epoch in 0..cfg.fp_epochs {
        let lr = cfg.lr * cfg.lr_decay.powi(epoch as i32);
        let mut loss = 0.0;
        for idx in batches(train.len(), cfg.batch_size, rng) {
            let x = train.samples.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            let (_, cache) = model.forward_train(x.view())?;
            let grads = model.backward(&cache, &y)?;
            loss += grads.loss;
            for (k, (layer, g)) in model.layers.iter_mut().zip(&grads.layers).enumerate() {
                let w = layer.weights.as_slice_mut().expect("standard layout");
                adam.update_with_lr(&format!("layer{k}.weights"), w, g.weights.as_slice().expect("standard layout"), lr)?;
                if cfg.weight_decay > 0.0 {
                    let keep = 1.0 - lr * cfg.weight_decay;
                    w.iter_mut().for_each(|v| *v *= keep);
                }
                adam.update_with_lr(
                    &format!("layer{k}.bias"),
                    layer.bias.as_slice_mut().expect("contiguous"),
                    g.bias.as_slice().expect("contiguous"),
                    lr,
                )?;
                if let (Some(bn), Some(dg), Some(db)) = (layer.batchnorm.as_mut(), &g.gamma, &g.beta) {
                    adam.update_with_lr(
                        &format!("layer{k}.bn_gamma"),
                        bn.gamma.as_slice_mut().expect("contiguous"),
                        dg.as_slice().expect("contiguous"),
                        lr,
                    )?;
                    adam.update_with_lr(
                        &format!("layer{k}.bn_beta"),
                        bn.beta.as_slice_mut().expect("contiguous"),
                        db.as_slice().expect("contiguous"),
                        lr,
                    )?;
                }
            }
        }
        calibrate(model, train, cfg, rng)?;
        let record = EpochRecord {
            phase: "fp".into(),
            epoch,
            loss: loss / train.len() as f64,
            accuracy: evaluate(model, eval)?,
            entropy: None,
            sparsity: None,
        };
        log::info!(
            "fp epoch {epoch}: loss {:.4}, accuracy {:.4}",
            record.loss,
            record.accuracy
        );
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}

/// Initial codebooks and entropy-constrained codes for a trained model.
pub fn quantize_model(model: MlpModel, lambda: f64) -> Result<QuantizedMlp, PipelineError> {
    Ok(QuantizedMlp::quantize(model, lambda)?)
}

/// Straight-through fine-tuning: steps on the dequantized model, codes
/// re-assigned every `reassign_every` steps and at the end of each epoch,
/// with ECL restarted every `prior_refresh` steps and λ ramped over
/// `lambda_ramp_steps`.
pub fn train_ste(
    q: &mut QuantizedMlp,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    rng: &mut ChaCha8Rng,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, PipelineError> {
    let mut buf = None;
    let eval = eval_set(test, cfg, &mut buf);
    let mut log = Vec::new();
    let mut trainer = SteTrainer::new(SteConfig {
        lambda: cfg.lambda,
        weights: AdamConfig {
            lr: cfg.ste_lr,
            ..AdamConfig::default()
        },
        omega: AdamConfig {
            lr: cfg.omega_lr,
            ..AdamConfig::default()
        },
        cadence: cfg.cadence,
    });
    let mut steps = 0usize;
    let reassign = |trainer: &mut SteTrainer, q: &mut QuantizedMlp, steps: usize| {
        trainer.config.lambda = if cfg.lambda_ramp_steps > 0 {
            cfg.lambda * (steps as f64 / cfg.lambda_ramp_steps as f64).min(1.0)
        } else {
            cfg.lambda
        };
        if cfg.prior_refresh == 0 {
            trainer.reassign(q)
        } else {
            trainer.reassign_frozen(q, steps.is_multiple_of(cfg.prior_refresh))
        }
    };
    for epoch in 0..cfg.ste_epochs {
        let decay = cfg.ste_lr_decay.powi(epoch as i32);
        trainer.set_learning_rates(cfg.ste_lr * decay, cfg.omega_lr * decay);
        let mut loss = 0.0;
        for idx in batches(train.len(), cfg.batch_size, rng) {
            let x = train.samples.select(Axis(0), &idx);
            let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
            loss += trainer.step(q, x.view(), &y)?;
            steps += 1;
            if cfg.reassign_every > 0 && steps.is_multiple_of(cfg.reassign_every) {
                reassign(&mut trainer, q, steps)?;
            }
        }
        reassign(&mut trainer, q, steps)?;
        calibrate_quantized(q, train, cfg, rng)?;
        let record = EpochRecord {
            phase: "ste".into(),
            epoch,
            loss: loss / train.len() as f64,
            accuracy: evaluate(&q.dequantized_model(), eval)?,
            entropy: Some(q.entropy()),
            sparsity: Some(q.sparsity()),
        };
        log::info!(
            "ste epoch {epoch}: loss {:.4}, accuracy {:.4}, entropy {:.3}, sparsity {:.4}",
            record.loss,
            record.accuracy,
            q.entropy(),
            q.sparsity()
        );
        on_epoch(&record);
        log.push(record);
    }
    Ok(log)
}

/// Result of [`train_pipeline`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub full_precision: MlpModel,
    pub quantized: QuantizedMlp,
    pub log: Vec<EpochRecord>,
    /// Test accuracy of the full-precision model.
    pub fp_accuracy: f64,
    /// Test accuracy of the dequantized model.
    pub quantized_accuracy: f64,
}

/// Full-precision pre-training followed by straight-through fine-tuning.
pub fn train_pipeline(
    cfg: &RunConfig,
    train: &Dataset,
    test: &Dataset,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, PipelineError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let dims = cfg.dims_for(train.dim());
    if let Some(&out) = dims.last() {
        if out < train.num_classes {
            return Err(PipelineError::Config(format!(
                "model has {out} outputs for {} classes",
                train.num_classes
            )));
        }
    }
    let mut model = MlpModel::init(&dims, cfg.batchnorm(), &mut rng)?;
    let mut log = train_full_precision(&mut model, train, test, &cfg.train, &mut rng, &mut on_epoch)?;
    let fp_accuracy = evaluate(&model, test)?;
    let initial_lambda = if cfg.train.lambda_ramp_steps > 0 { 0.0 } else { cfg.train.lambda };
    let mut q = quantize_model(model.clone(), initial_lambda)?;
    log.extend(train_ste(&mut q, train, test, &cfg.train, &mut rng, &mut on_epoch)?);
    let quantized_accuracy = evaluate(&q.dequantized_model(), test)?;
    Ok(TrainOutcome {
        full_precision: model,
        quantized: q,
        log,
        fp_accuracy,
        quantized_accuracy,
    })
}

/// Accuracy of a float model on a dataset view.
pub fn model_accuracy(model: &MlpModel, x: ArrayView2<f64>, labels: &[usize]) -> Result<f64, PipelineError> {
    Ok(accuracy(&argmax_rows(model.predict(x)?.view()), labels))
}
