//! Fundus-like synthetic images with planted lesion blobs and known geometry.
//!
//! Every image is a dark-red disc on black. Each lesion class has its own color
//! and texture, so the lesion labels are recoverable from the pixels. A sample
//! is AMD exactly when at least two drusen blobs are centered in the central
//! third of the image.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{write_json, DatasetManifest, ImageTensor, LesionClass, Sample, LESION_ORDER, N_LESIONS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    /// Uniform color with a hard edge.
    Flat,
    /// Color fading out over the outer two pixels.
    Soft,
    /// Per-pixel multiplicative noise of the given amplitude.
    Speckled(f32),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    /// Anywhere inside the fundus disc.
    Anywhere,
    /// Each blob lies entirely inside the central third with this probability,
    /// otherwise entirely outside it.
    CentralOrPeripheral { central_probability: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LesionRecipe {
    pub class: LesionClass,
    /// Probability that a sample contains the class at all.
    pub presence: f64,
    /// Inclusive range of blobs when present.
    pub count: [usize; 2],
    /// Radius range in pixels.
    pub radius: [f32; 2],
    pub color: [f32; 3],
    pub texture: Texture,
    pub placement: Placement,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_samples: usize,
    pub image_size: usize,
    /// One recipe per lesion class, in canonical class order.
    pub recipes: Vec<LesionRecipe>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let recipe = |class, presence, count, color, texture, placement| LesionRecipe {
            class,
            presence,
            count,
            radius: if class == LesionClass::Drusen { [8.0, 10.0] } else { [10.0, 14.0] },
            color,
            texture,
            placement,
        };
        Self {
            n_samples: 200,
            image_size: 128,
            recipes: vec![
                recipe(
                    LesionClass::Drusen,
                    0.65,
                    [1, 4],
                    [0.95, 0.85, 0.3],
                    Texture::Soft,
                    Placement::CentralOrPeripheral { central_probability: 0.5 },
                ),
                recipe(LesionClass::Exudate, 0.35, [1, 2], [0.95, 0.05, 0.85], Texture::Flat, Placement::Anywhere),
                recipe(LesionClass::Hemorrhage, 0.35, [1, 2], [0.0, 0.9, 0.95], Texture::Flat, Placement::Anywhere),
                recipe(LesionClass::Scar, 0.35, [1, 2], [0.1, 0.2, 0.95], Texture::Flat, Placement::Anywhere),
                recipe(LesionClass::Others, 0.3, [1, 2], [0.1, 0.85, 0.15], Texture::Speckled(0.25), Placement::Anywhere),
            ],
            seed: 0,
        }
    }
}

const DISC_COLOR: [f32; 3] = [0.55, 0.16, 0.08];
const BACKGROUND_NOISE: f32 = 0.03;
/// Gap kept between peripheral drusen and the central third.
const CENTRAL_MARGIN: f32 = 2.0;
const PLACEMENT_ATTEMPTS: usize = 200;

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < ImageTensor::MIN_SIDE {
            return Err(Error::invalid(format!(
                "image_size must be at least {}, got {}",
                ImageTensor::MIN_SIDE,
                self.image_size
            )));
        }
        if self.recipes.len() != N_LESIONS || self.recipes.iter().zip(LESION_ORDER).any(|(r, c)| r.class != c) {
            return Err(Error::invalid("synthetic recipes must list every lesion class once, in canonical order"));
        }
        let s = self.image_size as f32;
        for r in &self.recipes {
            let name = r.class.name();
            if !(0.0..=1.0).contains(&r.presence) {
                return Err(Error::invalid(format!("{name}: presence must be a probability")));
            }
            if r.count[0] == 0 || r.count[0] > r.count[1] {
                return Err(Error::invalid(format!("{name}: count range must be 1 ≤ lo ≤ hi")));
            }
            if !(r.radius[0] >= 1.0 && r.radius[0] <= r.radius[1]) {
                return Err(Error::invalid(format!("{name}: radius range must be 1 ≤ lo ≤ hi")));
            }
            if 2.0 * r.radius[1] > disc_radius(self.image_size) {
                return Err(Error::invalid(format!("{name}: blobs do not fit the fundus disc")));
            }
            if let Placement::CentralOrPeripheral { central_probability } = r.placement {
                if !(0.0..=1.0).contains(&central_probability) {
                    return Err(Error::invalid(format!("{name}: central_probability must be a probability")));
                }
                if 2.0 * r.radius[1] > s / 3.0 {
                    return Err(Error::invalid(format!("{name}: blobs do not fit the central third")));
                }
                if disc_radius(self.image_size) - r.radius[1] < s / 6.0 + r.radius[1] + CENTRAL_MARGIN {
                    return Err(Error::invalid(format!("{name}: no room for blobs outside the central third")));
                }
            }
        }
        for (i, a) in self.recipes.iter().enumerate() {
            for b in &self.recipes[i + 1..] {
                if a.color == b.color {
                    return Err(Error::invalid(format!(
                        "{} and {} share a color",
                        a.class.name(),
                        b.class.name()
                    )));
                }
            }
        }
        Ok(())
    }
}

fn disc_radius(size: usize) -> f32 {
    0.46 * size as f32
}

/// One planted lesion.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Blob {
    pub class: LesionClass,
    /// (x, y) in pixels.
    pub center: [f32; 2],
    pub radius: f32,
}

impl Blob {
    /// `[x_min, y_min, x_max, y_max]` in pixels.
    pub fn bbox(&self) -> [f32; 4] {
        let [x, y] = self.center;
        [x - self.radius, y - self.radius, x + self.radius, y + self.radius]
    }

    fn overlaps(&self, other: &Blob) -> bool {
        let d = ((self.center[0] - other.center[0]).powi(2) + (self.center[1] - other.center[1]).powi(2)).sqrt();
        d < self.radius + other.radius + 1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryRecord {
    pub sample_id: String,
    pub class: LesionClass,
    pub bbox: [f32; 4],
}

/// Whether a point lies in the central third of a square image of side `size`.
pub fn in_central_third(x: f32, y: f32, size: usize) -> bool {
    let s = size as f32;
    let inside = |v: f32| v >= s / 3.0 && v <= 2.0 * s / 3.0;
    inside(x) && inside(y)
}

/// The diagnosis rule: at least two drusen centered in the central third.
pub fn diagnosis_of(blobs: &[Blob], size: usize) -> u8 {
    let central = blobs
        .iter()
        .filter(|b| b.class == LesionClass::Drusen && in_central_third(b.center[0], b.center[1], size))
        .count();
    u8::from(central >= 2)
}

pub struct SynthDataset {
    pub manifest: DatasetManifest,
    /// In manifest order, exactly as written to disk.
    pub images: Vec<ImageTensor>,
    pub blobs: Vec<Vec<Blob>>,
}

impl SynthDataset {
    pub fn geometry(&self) -> Vec<GeometryRecord> {
        self.manifest
            .samples
            .iter()
            .zip(&self.blobs)
            .flat_map(|(s, blobs)| {
                blobs.iter().map(move |b| GeometryRecord {
                    sample_id: s.sample_id.clone(),
                    class: b.class,
                    bbox: b.bbox(),
                })
            })
            .collect()
    }

    /// Writes `manifest.json`, `geometry.json`, and `images/<id>.png` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let images = dir.join("images");
        std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
        for (s, img) in self.manifest.samples.iter().zip(&self.images) {
            img.save_png(&dir.join(&s.image_ref))?;
        }
        write_json(&dir.join("geometry.json"), &self.geometry())?;
        self.manifest.save(&dir.join("manifest.json"))
    }
}

fn uniform(rng: &mut ChaCha8Rng, range: [f32; 2]) -> f32 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.random_range(range[0]..range[1])
    }
}

fn place(rng: &mut ChaCha8Rng, recipe: &LesionRecipe, size: usize, existing: &[Blob]) -> Result<Blob> {
    let s = size as f32;
    let c = s / 2.0;
    let disc = disc_radius(size);
    let radius = uniform(rng, recipe.radius);
    let central = match recipe.placement {
        Placement::Anywhere => None,
        Placement::CentralOrPeripheral { central_probability } => Some(rng.random_bool(central_probability)),
    };
    let mut last = None;
    for _ in 0..PLACEMENT_ATTEMPTS {
        let center = match central {
            Some(true) => [
                uniform(rng, [s / 3.0 + radius, 2.0 * s / 3.0 - radius]),
                uniform(rng, [s / 3.0 + radius, 2.0 * s / 3.0 - radius]),
            ],
            _ => [uniform(rng, [c - disc + radius, c + disc - radius]), uniform(rng, [c - disc + radius, c + disc - radius])],
        };
        let blob = Blob {
            class: recipe.class,
            center,
            radius,
        };
        let in_disc = ((center[0] - c).powi(2) + (center[1] - c).powi(2)).sqrt() <= disc - radius;
        let clear_of_center = || {
            let reach = s / 6.0 + radius + CENTRAL_MARGIN;
            (center[0] - c).abs() >= reach || (center[1] - c).abs() >= reach
        };
        let valid = in_disc && (central != Some(false) || clear_of_center());
        if !valid {
            continue;
        }
        if existing.iter().all(|b| !blob.overlaps(b)) {
            return Ok(blob);
        }
        last = Some(blob);
    }
    // a crowded image: accept an overlapping but otherwise valid position
    last.ok_or_else(|| {
        Error::invalid(format!(
            "no valid position found for a {} blob in a {size}px image",
            recipe.class.name()
        ))
    })
}

fn paint(data: &mut ndarray::Array3<f32>, blob: &Blob, recipe: &LesionRecipe, rng: &mut ChaCha8Rng) {
    let (_, h, w) = data.dim();
    let [x0, y0, x1, y1] = blob.bbox();
    let rows = (y0.floor().max(0.0) as usize)..((y1.ceil() as usize + 1).min(h));
    let cols = (x0.floor().max(0.0) as usize)..((x1.ceil() as usize + 1).min(w));
    for y in rows {
        for x in cols.clone() {
            let d = ((x as f32 + 0.5 - blob.center[0]).powi(2) + (y as f32 + 0.5 - blob.center[1]).powi(2)).sqrt();
            let (alpha, gain) = match recipe.texture {
                Texture::Flat => (f32::from(d <= blob.radius), 1.0),
                Texture::Soft => (((blob.radius - d) / 2.0).clamp(0.0, 1.0), 1.0),
                Texture::Speckled(a) => (f32::from(d <= blob.radius), 1.0 + a * rng.random_range(-1.0f32..1.0)),
            };
            if alpha > 0.0 {
                for ch in 0..3 {
                    let v = data[[ch, y, x]];
                    data[[ch, y, x]] = ((1.0 - alpha) * v + alpha * recipe.color[ch] * gain).clamp(0.0, 1.0);
                }
            }
        }
    }
}

fn render(blobs: &[Blob], cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> ImageTensor {
    let size = cfg.image_size;
    let c = size as f32 / 2.0;
    let disc = disc_radius(size);
    let mut data = ndarray::Array3::<f32>::zeros((3, size, size));
    for y in 0..size {
        for x in 0..size {
            let d = ((x as f32 + 0.5 - c).powi(2) + (y as f32 + 0.5 - c).powi(2)).sqrt();
            if d <= disc {
                // slightly brighter toward the center
                let shade = 1.0 - 0.3 * d / disc;
                for ch in 0..3 {
                    let noise = BACKGROUND_NOISE * rng.random_range(-1.0f32..1.0);
                    data[[ch, y, x]] = (DISC_COLOR[ch] * shade + noise).clamp(0.0, 1.0);
                }
            }
        }
    }
    for blob in blobs {
        paint(&mut data, blob, &cfg.recipes[blob.class.index()], rng);
    }
    // quantize so in-memory images equal the PNG files
    ImageTensor::from_rgb8(&ImageTensor::new(data).expect("valid synthetic image").to_rgb8())
}

fn draw_blobs(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<Vec<Blob>> {
    let mut blobs = Vec::new();
    for recipe in &cfg.recipes {
        if rng.random_bool(recipe.presence) {
            let n = rng.random_range(recipe.count[0]..=recipe.count[1]);
            for _ in 0..n {
                let blob = place(rng, recipe, cfg.image_size, &blobs)?;
                blobs.push(blob);
            }
        }
    }
    Ok(blobs)
}

/// Generates the dataset in memory. Candidates are redrawn while their
/// diagnosis class already holds `max(1, ⌊0.7·n⌋)` samples, which keeps the
/// AMD fraction within [0.3, 0.7].
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let cap = ((cfg.n_samples as f64 * 0.7).floor() as usize).max(1);
    let mut per_class = [0usize; 2];
    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut images = Vec::with_capacity(cfg.n_samples);
    let mut all_blobs = Vec::with_capacity(cfg.n_samples);
    while samples.len() < cfg.n_samples {
        let blobs = draw_blobs(cfg, &mut rng)?;
        let diagnosis = diagnosis_of(&blobs, cfg.image_size);
        if per_class[diagnosis as usize] >= cap {
            continue;
        }
        per_class[diagnosis as usize] += 1;
        let image = render(&blobs, cfg, &mut rng);
        let mut lesions = vec![0u8; N_LESIONS];
        for b in &blobs {
            lesions[b.class.index()] = 1;
        }
        let sample_id = format!("synth_{:04}", samples.len());
        samples.push(Sample {
            image_ref: format!("images/{sample_id}.png"),
            diagnosis: Some(diagnosis),
            lesions: Some(lesions),
            eye_group_id: sample_id.clone(),
            sample_id,
        });
        images.push(image);
        all_blobs.push(blobs);
    }
    Ok(SynthDataset {
        manifest: DatasetManifest::new("synthetic", samples),
        images,
        blobs: all_blobs,
    })
}
