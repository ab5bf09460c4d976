use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::augmentation::{augment, AugmentationConfig};
use crate::datamodel::{ImageTensor, Sample};
use crate::error::{Error, Result};
use crate::model::{init_params, ModelConfig, ModelParams, PretrainedTrunk};
use crate::real::Real;
use crate::training::adam::{adam_step, AdamState, OptimizerConfig};
use crate::training::loss::{loss_gradients, LossConfig};

/// RNG stream for data order and augmentation; streams 0 and 1 seed the parameters.
const DATA_STREAM: u64 = 2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub diagnosis: f64,
    pub lesion: f64,
    pub seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub optimizer_steps: u64,
}

impl TrainingHistory {
    /// Epoch losses without wall-clock times; equal across reruns with the same seeds.
    pub fn losses(&self) -> Vec<(f64, f64, f64)> {
        self.epochs.iter().map(|e| (e.total, e.diagnosis, e.lesion)).collect()
    }

    /// CSV with `epoch,total,diagnosis,lesion` columns.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let mut out = String::from("epoch,total,diagnosis,lesion\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{},{},{}\n", e.epoch, e.total, e.diagnosis, e.lesion));
        }
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// A training sample paired with its (already resized) image.
#[derive(Clone, Copy, Debug)]
pub struct TrainItem<'a> {
    pub sample: &'a Sample,
    pub image: &'a ImageTensor,
}

pub struct TrainSettings<'a, F> {
    pub model: &'a ModelConfig,
    pub loss: &'a LossConfig,
    pub optimizer: &'a OptimizerConfig,
    pub augmentation: &'a AugmentationConfig,
    pub seed: u64,
    pub pretrained: Option<&'a PretrainedTrunk<F>>,
}

/// Trains one model from scratch (or from a pretrained trunk) with per-sample
/// Adam steps: every epoch shuffles the samples, then each one is augmented,
/// forwarded, and back-propagated.
pub fn train_fold<F: Real>(items: &[TrainItem<'_>], settings: &TrainSettings<'_, F>) -> Result<(ModelParams<F>, TrainingHistory)> {
    if items.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(item) = items.iter().find(|i| i.sample.diagnosis.is_none()) {
        return Err(Error::invalid(format!("training sample {} has no diagnosis", item.sample.sample_id)));
    }
    settings.loss.validate()?;
    settings.optimizer.validate()?;
    settings.augmentation.validate()?;

    let mut params = init_params::<F>(settings.model, settings.seed, settings.pretrained)?;
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(settings.seed);
    rng.set_stream(DATA_STREAM);
    let mut order: Vec<usize> = (0..items.len()).collect();
    let mut history = TrainingHistory::default();

    for epoch in 0..settings.optimizer.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut total, mut diagnosis, mut lesion) = (0.0, 0.0, 0.0);
        for &i in &order {
            let item = items[i];
            let image = augment(item.image, settings.augmentation, &mut rng);
            let (parts, grads) = loss_gradients(&params, &image, item.sample, settings.loss).map_err(|e| match e {
                Error::NonFinite(_) => Error::NonFiniteLoss {
                    epoch,
                    sample_id: item.sample.sample_id.clone(),
                },
                other => other,
            })?;
            history.optimizer_steps += 1;
            adam_step(&mut params, &grads, &mut state, settings.optimizer, history.optimizer_steps);
            total += parts.total;
            diagnosis += parts.diagnosis;
            lesion += parts.lesion;
        }
        let n = items.len() as f64;
        history.epochs.push(EpochRecord {
            epoch,
            total: total / n,
            diagnosis: diagnosis / n,
            lesion: lesion / n,
            seconds: started.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch}: loss {:.5}", total / n);
    }
    Ok((params, history))
}
