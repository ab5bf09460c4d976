use std::collections::{HashMap, HashSet};
use std::path::Path;
use std::str::FromStr;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augmentation::AugmentationConfig;
use crate::datamodel::{read_json, write_json, DatasetManifest, FoldPlan, ImageTensor, PredictionRecord, N_OUTPUTS};
use crate::error::{Error, Result};
use crate::ingestion::resize_to_width;
use crate::model::{classify, ModelConfig, ModelParams, PretrainedTrunk};
use crate::real::Real;
use crate::training::adam::OptimizerConfig;
use crate::training::loss::LossConfig;
use crate::training::train::{train_fold, TrainItem, TrainSettings, TrainingHistory};

/// Proposed multi-task training or the diagnosis-only ablation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// AMD diagnosis + lesion identification.
    Al,
    /// AMD diagnosis only: the lesion term is dropped from the loss.
    Ao,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "al" | "a+l" => Ok(Mode::Al),
            "ao" | "amd-only" => Ok(Mode::Ao),
            other => Err(Error::invalid(format!("unknown mode '{other}', expected al or ao"))),
        }
    }
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Al => "A+L",
            Mode::Ao => "AMD-only",
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Mode::Al => "al",
            Mode::Ao => "ao",
        }
    }

    pub fn loss_config(self, base: &LossConfig) -> LossConfig {
        match self {
            Mode::Al => base.clone(),
            Mode::Ao => base.amd_only(),
        }
    }
}

/// Everything a training run needs besides data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optimizer: OptimizerConfig,
    pub augmentation: AugmentationConfig,
    /// Images are resized to this width once, at load time.
    pub input_width: usize,
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::full(),
            loss: LossConfig::default(),
            optimizer: OptimizerConfig::default(),
            augmentation: AugmentationConfig::default(),
            input_width: 720,
            seed: 0,
        }
    }
}

/// Decoded, resized images keyed by sample id.
#[derive(Clone, Debug, Default)]
pub struct ImageStore {
    images: HashMap<String, ImageTensor>,
}

impl ImageStore {
    pub fn load(manifest: &DatasetManifest, input_width: usize) -> Result<Self> {
        let images = manifest
            .samples
            .par_iter()
            .map(|s| {
                let img = ImageTensor::load(&manifest.image_path(s))?;
                let img = if img.width() == input_width {
                    img
                } else {
                    resize_to_width(&img, input_width)?
                };
                Ok((s.sample_id.clone(), img))
            })
            .collect::<Result<HashMap<_, _>>>()?;
        Ok(Self { images })
    }

    pub fn insert(&mut self, sample_id: impl Into<String>, image: ImageTensor) {
        self.images.insert(sample_id.into(), image);
    }

    pub fn get(&self, sample_id: &str) -> Result<&ImageTensor> {
        self.images
            .get(sample_id)
            .ok_or_else(|| Error::invalid(format!("no image loaded for sample {sample_id}")))
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }
}

/// One test-set prediction, as written to the predictions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub sample_id: String,
    pub repetition: usize,
    pub probabilities: [f64; N_OUTPUTS],
}

pub fn save_predictions(rows: &[PredictionRow], path: &Path) -> Result<()> {
    write_json(path, rows)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRow>> {
    read_json(path)
}

pub struct FoldResult<F> {
    pub repetition: usize,
    pub fold: usize,
    pub params: ModelParams<F>,
    pub history: TrainingHistory,
    pub predictions: Vec<PredictionRecord>,
}

pub struct CvOutcome<F> {
    pub folds: Vec<FoldResult<F>>,
}

impl<F> CvOutcome<F> {
    /// Test predictions of every repetition, in plan order.
    pub fn rows(&self) -> Vec<PredictionRow> {
        self.folds
            .iter()
            .flat_map(|f| {
                f.predictions.iter().map(move |p| PredictionRow {
                    sample_id: p.sample_id.clone(),
                    repetition: f.repetition,
                    probabilities: p.probabilities,
                })
            })
            .collect()
    }

    pub fn records(&self) -> impl Iterator<Item = (usize, &PredictionRecord)> {
        self.folds.iter().flat_map(|f| f.predictions.iter().map(move |p| (f.repetition, p)))
    }
}

/// Training seed of one fold, derived from the experiment seed.
pub fn fold_seed(seed: u64, repetition: usize, fold: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((repetition as u64) << 32) | fold as u64);
    rng.next_u64()
}

/// Trains on the complement of every fold and predicts the fold itself.
///
/// With `jobs > 1` the runs execute on a thread pool; results do not depend on
/// the number of jobs.
pub fn run_cross_validation<F: Real>(
    manifest: &DatasetManifest,
    plan: &FoldPlan,
    images: &ImageStore,
    config: &ExperimentConfig,
    mode: Mode,
    jobs: usize,
    pretrained: Option<&PretrainedTrunk<F>>,
) -> Result<CvOutcome<F>> {
    let violations = plan.violations(manifest);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::invalid(format!("fold plan does not fit the manifest: {}", list.join("; "))));
    }
    let loss = mode.loss_config(&config.loss);
    let runs: Vec<(usize, usize)> = plan
        .repetitions
        .iter()
        .enumerate()
        .flat_map(|(r, folds)| (0..folds.len()).map(move |f| (r, f)))
        .collect();

    let run_one = |&(r, f): &(usize, usize)| -> Result<FoldResult<F>> {
        let tag = |e: Error| Error::Fold {
            repetition: r,
            fold: f,
            source: Box::new(e),
        };
        let test: HashSet<&str> = plan.repetitions[r][f].iter().map(String::as_str).collect();
        let mut items = Vec::new();
        for s in manifest.samples.iter().filter(|s| !test.contains(s.sample_id.as_str())) {
            if s.diagnosis.is_some() {
                items.push(TrainItem {
                    sample: s,
                    image: images.get(&s.sample_id).map_err(tag)?,
                });
            }
        }
        let settings = TrainSettings {
            model: &config.model,
            loss: &loss,
            optimizer: &config.optimizer,
            augmentation: &config.augmentation,
            seed: fold_seed(config.seed, r, f),
            pretrained,
        };
        log::info!("repetition {r} fold {f}: training on {} samples", items.len());
        let (params, history) = train_fold(&items, &settings).map_err(tag)?;
        let predictions = plan.repetitions[r][f]
            .iter()
            .map(|id| classify(&params, id, images.get(id)?))
            .collect::<Result<Vec<_>>>()
            .map_err(tag)?;
        Ok(FoldResult {
            repetition: r,
            fold: f,
            params,
            history,
            predictions,
        })
    };

    let folds = if jobs > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {jobs} workers: {e}")))?;
        pool.install(|| runs.par_iter().map(run_one).collect::<Result<Vec<_>>>())?
    } else {
        runs.iter().map(run_one).collect::<Result<Vec<_>>>()?
    };
    Ok(CvOutcome { folds })
}
