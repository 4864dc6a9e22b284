//! Mini-batch training with Adam, gradient clipping, and early stopping on
//! validation accuracy.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::features::dataset::PreparedUtterance;
use crate::harness::eval::{check_compatibility, evaluate, predict_labels};
use crate::harness::optim::{Adam, AdamConfig, Moments};
use crate::model::CanModel;
use crate::objective::{compute_loss, mean_loss, metrics};

/// Scalar training-progress state; optimizer moments live in `Adam`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub best_val_wa: f64,
    pub patience_used: usize,
    pub seed: u64,
}

pub struct TrainOutcome {
    pub model: CanModel,
    pub optimizer: Adam,
    pub state: TrainState,
    pub best_epoch: usize,
    pub final_train_wa: f64,
    pub log: Vec<String>,
}

impl std::fmt::Debug for TrainOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrainOutcome")
            .field("state", &self.state)
            .field("best_epoch", &self.best_epoch)
            .field("final_train_wa", &self.final_train_wa)
            .finish_non_exhaustive()
    }
}

struct Snapshot {
    values: Vec<Vec<f64>>,
    moments: Vec<Moments>,
    step_count: u64,
}

/// Splits off the trailing `val_fraction` of a seeded shuffle as the
/// validation set, then trains on the rest.
pub fn train(data: &[PreparedUtterance], config: &ModelConfig, seed: u64) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::Config("training manifest is empty".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xD1B5_4A32_D192_ED03);
    order.shuffle(&mut rng);
    let mut val_count = (data.len() as f64 * config.val_fraction).round() as usize;
    if config.val_fraction > 0.0 {
        val_count = val_count.max(1);
    }
    if val_count >= data.len() {
        return Err(Error::Config(format!(
            "validation split of {val_count} leaves no training data for {} utterances",
            data.len()
        )));
    }
    let train_set: Vec<PreparedUtterance> = order[..data.len() - val_count]
        .iter()
        .map(|&i| data[i].clone())
        .collect();
    let val_set: Vec<PreparedUtterance> = order[data.len() - val_count..]
        .iter()
        .map(|&i| data[i].clone())
        .collect();
    train_with_validation(&train_set, &val_set, config, seed)
}

/// Core loop over explicit train/validation splits. An empty validation set
/// disables early stopping and the best-checkpoint restore.
pub fn train_with_validation(
    train_set: &[PreparedUtterance],
    val_set: &[PreparedUtterance],
    config: &ModelConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let model = CanModel::init(config, seed)?;
    check_compatibility(&model, train_set)?;
    check_compatibility(&model, val_set)?;
    let params = model.parameters();
    let mut optimizer = Adam::new(
        AdamConfig {
            learning_rate: config.learning_rate,
            clip_norm: config.clip_norm,
            ..AdamConfig::default()
        },
        &params,
    );
    let alpha = config.effective_alpha();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut log = Vec::new();
    let mut global_step = 0usize;
    let mut best_val_wa = -1.0_f64;
    let mut best_epoch = 0usize;
    let mut patience_used = 0usize;
    let mut best: Option<Snapshot> = None;
    let mut final_train_wa = 0.0;
    let mut last_epoch = 0usize;

    for epoch in 0..config.max_epochs {
        last_epoch = epoch;
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(config.batch_size) {
            model.zero_grad();
            let reports = batch
                .iter()
                .map(|&i| {
                    let utt = &train_set[i];
                    let pass = model.forward(utt, true)?;
                    compute_loss(&pass.predictions, utt.label, alpha)
                })
                .collect::<Result<Vec<_>>>()?;
            let batch_report = mean_loss(&reports)?;
            batch_report.total.backward()?;
            let grad_norm = optimizer.step(&params)?;
            log.push(format!(
                "step={global_step} epoch={epoch} total={} main={} align={} alpha={} grad_norm={}",
                batch_report.total.value(),
                batch_report.main.value(),
                batch_report.align.value(),
                alpha,
                grad_norm
            ));
            global_step += 1;
        }

        let train_predictions = predict_labels(&model, train_set)?;
        let truth: Vec<usize> = train_set.iter().map(|u| u.label).collect();
        let train_wa = metrics(&train_predictions, &truth, config.class_count())?.wa;
        final_train_wa = train_wa;

        if val_set.is_empty() {
            log.push(format!("epoch={epoch} train_wa={train_wa}"));
        } else {
            let val_wa = evaluate(&model, val_set)?.wa;
            log.push(format!("epoch={epoch} train_wa={train_wa} val_wa={val_wa}"));
            if val_wa > best_val_wa {
                best_val_wa = val_wa;
                best_epoch = epoch;
                patience_used = 0;
                best = Some(Snapshot {
                    values: params.iter().map(|(_, t)| t.to_vec()).collect(),
                    moments: optimizer.moments.clone(),
                    step_count: optimizer.step_count,
                });
            } else {
                patience_used += 1;
                if patience_used >= config.patience {
                    log.push(format!(
                        "epoch={epoch} early_stop=true best_epoch={best_epoch} best_val_wa={best_val_wa}"
                    ));
                    break;
                }
            }
        }

        if let Some(target) = config.target_train_wa {
            if train_wa >= target {
                log.push(format!(
                    "epoch={epoch} target_reached=true train_wa={train_wa}"
                ));
                break;
            }
        }
    }

    if let Some(snapshot) = best {
        for ((_, tensor), values) in params.iter().zip(snapshot.values) {
            tensor.set_values(values)?;
        }
        optimizer.moments = snapshot.moments;
        optimizer.step_count = snapshot.step_count;
    }

    Ok(TrainOutcome {
        model,
        optimizer,
        state: TrainState {
            epoch: last_epoch,
            best_val_wa,
            patience_used,
            seed,
        },
        best_epoch,
        final_train_wa,
        log,
    })
}
