//! Shared domain types: images, samples, manifests, predictions and fold plans.
//!
//! Everything here is immutable after construction apart from plain field
//! access, so values can be shared freely between worker threads.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of lesion classes.
pub const N_LESIONS: usize = 5;

/// Number of model outputs: the diagnosis plus one detector per lesion class.
pub const N_OUTPUTS: usize = N_LESIONS + 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionClass {
    Drusen,
    Exudate,
    Hemorrhage,
    Scar,
    Others,
}

/// Canonical lesion order used by labels, model outputs and reports.
pub const LESION_ORDER: [LesionClass; N_LESIONS] = [
    LesionClass::Drusen,
    LesionClass::Exudate,
    LesionClass::Hemorrhage,
    LesionClass::Scar,
    LesionClass::Others,
];

impl LesionClass {
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            LesionClass::Drusen => "drusen",
            LesionClass::Exudate => "exudate",
            LesionClass::Hemorrhage => "hemorrhage",
            LesionClass::Scar => "scar",
            LesionClass::Others => "others",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        LESION_ORDER
            .iter()
            .copied()
            .find(|c| c.name().eq_ignore_ascii_case(name))
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// RGB image with channel-first storage and values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageTensor {
    data: Array3<f32>,
}

impl ImageTensor {
    /// Smallest side accepted by the resize step and the full-depth trunk.
    pub const MIN_SIDE: usize = 32;

    /// Wraps a `3 × H × W` array, checking that every value is finite and in `[0, 1]`.
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::Shape(format!("image must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::Shape(format!("empty image {h}x{w}")));
        }
        if let Some(bad) = data.iter().find(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))) {
            return Err(Error::invalid(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self {
            data: data.as_standard_layout().into_owned(),
        })
    }

    /// Builds an image from a closure over `(channel, row, col)`; values are clamped.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize, usize) -> f32) -> Self {
        let data = Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x).clamp(0.0, 1.0));
        Self { data }
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self::from_fn(height, width, |_, _, _| value)
    }

    pub fn from_rgb8(img: &RgbImage) -> Self {
        let (w, h) = img.dimensions();
        Self::from_fn(h as usize, w as usize, |c, y, x| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        })
    }

    pub fn to_rgb8(&self) -> RgbImage {
        RgbImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let px = |c| (self.data[[c, y as usize, x as usize]] * 255.0).round().clamp(0.0, 255.0) as u8;
            Rgb([px(0), px(1), px(2)])
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let img = image::open(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_rgb8(&img.to_rgb8()))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        self.to_rgb8().save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub sample_id: String,
    pub image_ref: String,
    /// 1 = AMD, 0 = healthy, `None` = unknown.
    pub diagnosis: Option<u8>,
    /// Image-level lesion labels in canonical order, `None` when not annotated.
    pub lesions: Option<Vec<u8>>,
    pub eye_group_id: String,
}

impl Sample {
    pub fn lesion_labels_known(&self) -> bool {
        self.lesions.is_some()
    }

    pub fn has_lesion(&self, class: LesionClass) -> Option<bool> {
        self.lesions
            .as_ref()
            .and_then(|l| l.get(class.index()))
            .map(|&v| v == 1)
    }
}

fn canonical_order() -> Vec<LesionClass> {
    LESION_ORDER.to_vec()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub samples: Vec<Sample>,
    #[serde(default = "canonical_order")]
    pub class_order: Vec<LesionClass>,
    /// Directory that relative `image_ref`s resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl DatasetManifest {
    pub fn new(name: impl Into<String>, samples: Vec<Sample>) -> Self {
        Self {
            name: name.into(),
            samples,
            class_order: canonical_order(),
            base_dir: None,
        }
    }

    pub fn with_base_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.base_dir = Some(dir.into());
        self
    }

    pub fn image_path(&self, sample: &Sample) -> PathBuf {
        let p = Path::new(&sample.image_ref);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn get(&self, sample_id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    pub fn index(&self) -> HashMap<&str, &Sample> {
        self.samples.iter().map(|s| (s.sample_id.as_str(), s)).collect()
    }

    /// Reads a manifest; relative image paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.base_dir = Some(
            path.parent()
                .map(Path::to_path_buf)
                .unwrap_or_else(|| PathBuf::from(".")),
        );
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// A broken manifest rule, optionally tied to one sample.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Violation {
    pub sample_id: Option<String>,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.sample_id {
            Some(id) => write!(f, "sample {id}: {}", self.rule),
            None => f.write_str(&self.rule),
        }
    }
}

fn violation(sample_id: &str, rule: impl Into<String>) -> Violation {
    Violation {
        sample_id: Some(sample_id.to_string()),
        rule: rule.into(),
    }
}

/// Checks every manifest invariant that does not need the file system.
pub fn validate_structure(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    if manifest.class_order != LESION_ORDER {
        out.push(Violation {
            sample_id: None,
            rule: "class_order differs from the canonical lesion order".into(),
        });
    }
    let mut seen = HashSet::new();
    for s in &manifest.samples {
        if !seen.insert(s.sample_id.as_str()) {
            out.push(violation(&s.sample_id, "duplicate sample_id"));
        }
        if s.sample_id.is_empty() {
            out.push(violation(&s.sample_id, "empty sample_id"));
        }
        if s.eye_group_id.is_empty() {
            out.push(violation(&s.sample_id, "empty eye_group_id"));
        }
        if let Some(d) = s.diagnosis.filter(|d| *d > 1) {
            out.push(violation(&s.sample_id, format!("diagnosis {d} is not binary")));
        }
        if let Some(l) = &s.lesions {
            if l.len() != N_LESIONS {
                out.push(violation(
                    &s.sample_id,
                    format!("lesion vector length {} ≠ {N_LESIONS}", l.len()),
                ));
            }
            if l.iter().any(|v| *v > 1) {
                out.push(violation(&s.sample_id, "lesion labels must be 0 or 1"));
            }
        }
    }
    out
}

/// Checks all manifest invariants, including that every image reference resolves.
pub fn validate_manifest(manifest: &DatasetManifest) -> Vec<Violation> {
    let mut out = validate_structure(manifest);
    for s in &manifest.samples {
        let path = manifest.image_path(s);
        if !path.is_file() {
            out.push(violation(
                &s.sample_id,
                format!("image {} not found", path.display()),
            ));
        }
    }
    out
}

/// Per-sample model output: `N_OUTPUTS` probabilities (index 0 = diagnosis)
/// plus the lesion activation maps when available.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub probabilities: [f64; N_OUTPUTS],
    pub activation_maps: Option<Vec<Array2<f32>>>,
}

impl PredictionRecord {
    pub fn diagnosis(&self) -> f64 {
        self.probabilities[0]
    }

    pub fn lesion(&self, class: LesionClass) -> f64 {
        self.probabilities[class.index() + 1]
    }
}

/// Assignment of samples to folds for each cross-validation repetition.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub seed: u64,
    /// `repetitions[r][f]` lists the sample ids of fold `f` in repetition `r`.
    pub repetitions: Vec<Vec<Vec<String>>>,
}

impl FoldPlan {
    pub fn k(&self) -> usize {
        self.repetitions.first().map_or(0, Vec::len)
    }

    pub fn runs(&self) -> usize {
        self.repetitions.iter().map(Vec::len).sum()
    }

    pub fn load(path: &Path) -> Result<Self> {
        read_json(path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    /// Violations of the partition and eye-group rules against `manifest`.
    pub fn violations(&self, manifest: &DatasetManifest) -> Vec<Violation> {
        let mut out = Vec::new();
        let index = manifest.index();
        let global = |rule: String| Violation {
            sample_id: None,
            rule,
        };
        for (r, folds) in self.repetitions.iter().enumerate() {
            let mut fold_of: HashMap<&str, usize> = HashMap::new();
            let mut group_fold: HashMap<&str, usize> = HashMap::new();
            for (f, ids) in folds.iter().enumerate() {
                for id in ids {
                    let Some(sample) = index.get(id.as_str()) else {
                        out.push(violation(id, format!("repetition {r}: unknown sample")));
                        continue;
                    };
                    if fold_of.insert(id, f).is_some() {
                        out.push(violation(id, format!("repetition {r}: sample in several folds")));
                    }
                    match group_fold.get(sample.eye_group_id.as_str()) {
                        Some(&g) if g != f => out.push(violation(
                            id,
                            format!(
                                "repetition {r}: eye group {} spans folds {g} and {f}",
                                sample.eye_group_id
                            ),
                        )),
                        _ => {
                            group_fold.insert(&sample.eye_group_id, f);
                        }
                    }
                }
            }
            let missing = manifest
                .samples
                .iter()
                .filter(|s| !fold_of.contains_key(s.sample_id.as_str()))
                .count();
            if missing > 0 {
                out.push(global(format!("repetition {r}: {missing} samples not assigned")));
            }
        }
        out
    }
}
