use std::path::{Path, PathBuf};

use amddx_core::augmentation::AugmentationConfig;
use amddx_core::datamodel::{read_json, DatasetManifest};
use amddx_core::ingestion::{
    assign_eye_groups, load_evaluation_set, load_eye_groups, load_ichallenge, EvaluationSet, IChallengeOptions,
    MaskPolarity,
};
use amddx_core::model::ModelConfig;
use amddx_core::training::{ExperimentConfig, LossConfig, Mode, OptimizerConfig};
use amddx_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that replaces the configured output directory.
pub const OUT_ENV: &str = "AMDDX_OUT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// A manifest JSON written by `ingest` or `synth`.
    Manifest,
    Ichallenge,
    Aria,
    Stare,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub kind: DatasetKind,
    /// Manifest file for `manifest`, dataset root otherwise.
    pub path: PathBuf,
    #[serde(default)]
    pub eye_groups: Option<PathBuf>,
    #[serde(default = "one")]
    pub min_lesion_pixels: usize,
    #[serde(default)]
    pub mask_polarity: MaskPolarity,
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FoldsSection {
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default = "five")]
    pub repetitions: usize,
    pub seed: u64,
}

fn two() -> usize {
    2
}

fn five() -> usize {
    5
}

fn default_width() -> usize {
    720
}

/// One experiment: data, model, training, and fold settings with every seed
/// written out.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSection,
    #[serde(default = "ModelConfig::full")]
    pub model: ModelConfig,
    #[serde(default)]
    pub loss: LossConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub augmentation: AugmentationConfig,
    #[serde(default = "default_width")]
    pub input_width: usize,
    /// Optional VGG-style trunk archive to start from.
    #[serde(default)]
    pub pretrained_trunk: Option<PathBuf>,
    pub folds: FoldsSection,
    /// Training seed; fold seeds are derived from it.
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl RunConfig {
    /// Reads the config, applies the output override, resolves relative paths
    /// against the config's directory, and checks that inputs exist.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        if let Some(out) = std::env::var_os(OUT_ENV) {
            cfg.output_dir = PathBuf::from(out);
        }
        let base = path.parent().unwrap_or(Path::new(""));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.dataset.path);
        cfg.dataset.eye_groups.as_mut().map(resolve);
        cfg.pretrained_trunk.as_mut().map(resolve);
        resolve(&mut cfg.output_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        let inputs = [Some(&self.dataset.path), self.dataset.eye_groups.as_ref(), self.pretrained_trunk.as_ref()];
        for p in inputs.into_iter().flatten() {
            if !p.exists() {
                missing.push(p.clone());
            }
        }
        if !missing.is_empty() {
            return Err(Error::MissingFiles(missing));
        }
        self.model.validate()?;
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.augmentation.validate()?;
        if self.input_width < self.model.min_input_side() {
            return Err(Error::invalid(format!(
                "input_width {} is below the model minimum {}",
                self.input_width,
                self.model.min_input_side()
            )));
        }
        Ok(())
    }

    pub fn experiment(&self) -> ExperimentConfig {
        ExperimentConfig {
            model: self.model.clone(),
            loss: self.loss.clone(),
            optimizer: self.optimizer.clone(),
            augmentation: self.augmentation.clone(),
            input_width: self.input_width,
            seed: self.seed,
        }
    }

    pub fn load_manifest(&self) -> Result<DatasetManifest> {
        load_dataset(
            self.dataset.kind,
            &self.dataset.path,
            self.dataset.eye_groups.as_deref(),
            self.dataset.min_lesion_pixels,
            self.dataset.mask_polarity,
        )
    }

    pub fn run_dir(&self, mode: Mode) -> PathBuf {
        self.output_dir.join(mode.tag())
    }
}

pub fn load_dataset(
    kind: DatasetKind,
    path: &Path,
    eye_groups: Option<&Path>,
    min_lesion_pixels: usize,
    polarity: MaskPolarity,
) -> Result<DatasetManifest> {
    if !path.exists() {
        return Err(Error::MissingFiles(vec![path.to_path_buf()]));
    }
    let groups = eye_groups.map(load_eye_groups).transpose()?.unwrap_or_default();
    match kind {
        DatasetKind::Manifest => {
            let mut m = DatasetManifest::load(path)?;
            if !groups.is_empty() {
                m.samples = assign_eye_groups(m.samples, &groups)?;
            }
            Ok(m)
        }
        DatasetKind::Ichallenge => load_ichallenge(
            path,
            &IChallengeOptions {
                min_lesion_pixels,
                polarity,
                eye_groups: groups,
            },
        ),
        DatasetKind::Aria | DatasetKind::Stare => {
            let set = if kind == DatasetKind::Aria { EvaluationSet::Aria } else { EvaluationSet::Stare };
            let mut m = load_evaluation_set(path, set)?;
            if !groups.is_empty() {
                m.samples = assign_eye_groups(m.samples, &groups)?;
            }
            Ok(m)
        }
    }
}

/// Written next to the outputs of a cross-validation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub mode: Mode,
    /// Manifest the run was trained and tested on.
    pub manifest: PathBuf,
    pub config: RunConfig,
}
