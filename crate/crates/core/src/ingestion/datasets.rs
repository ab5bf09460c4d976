//! Adapters for the public dataset layouts.
//!
//! Assumed layouts (paths relative to the dataset root):
//!
//! * iChallenge-AMD: `Training400/AMD/*` (positives) and `Training400/Non-AMD/*`;
//!   lesion masks in `Training400-Lesion/Lesion_Masks/<class>/<image stem>.<ext>`
//!   with one directory per lesion class (`drusen`, `exudate`, `hemorrhage`,
//!   `scar`, `others`). An image counts as lesion-annotated when it has a mask
//!   in any class directory or is listed (one stem per line) in the optional
//!   `Training400-Lesion/annotated.txt`.
//! * ARIA: image directories named `aria_a*` (AMD), `aria_c*` (healthy
//!   controls) and `aria_d*` (diabetic, excluded). Directories whose name
//!   contains `markup` are ignored.
//! * STARE: `all-mg-codes.txt` with one `<id> <codes...> <description>` line
//!   per image and decompressed images named `<id>.<ext>` either in `images/`
//!   or in the root. Descriptions mentioning "macular degeneration" are AMD,
//!   a bare "Normal" is healthy, anything else is excluded.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use crate::datamodel::{DatasetManifest, Sample, LESION_ORDER, N_LESIONS};
use crate::error::{Error, Result};
use crate::ingestion::groups::assign_eye_groups;
use crate::ingestion::masks::{derive_lesion_labels, BinaryMask, LesionMaskSet, MaskPolarity};

const IMAGE_EXTENSIONS: [&str; 8] = ["jpg", "jpeg", "png", "bmp", "ppm", "pnm", "tif", "tiff"];

/// Counts reported for the released datasets; loaders compare against them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PublishedCounts {
    pub samples: usize,
    pub positives: usize,
    pub lesion_annotated: usize,
}

pub const ICHALLENGE_COUNTS: PublishedCounts = PublishedCounts {
    samples: 400,
    positives: 89,
    lesion_annotated: 118,
};
pub const ARIA_COUNTS: PublishedCounts = PublishedCounts {
    samples: 84,
    positives: 23,
    lesion_annotated: 0,
};
pub const STARE_COUNTS: PublishedCounts = PublishedCounts {
    samples: 82,
    positives: 46,
    lesion_annotated: 0,
};

/// Per-class image counts in the annotated iChallenge subset, canonical order.
pub const ICHALLENGE_LESION_COUNTS: [usize; N_LESIONS] = [61, 38, 19, 13, 17];

#[derive(Clone, Debug)]
pub struct IChallengeOptions {
    pub min_lesion_pixels: usize,
    pub polarity: MaskPolarity,
    pub eye_groups: Vec<Vec<String>>,
}

impl Default for IChallengeOptions {
    fn default() -> Self {
        Self {
            min_lesion_pixels: 1,
            polarity: MaskPolarity::DarkForeground,
            eye_groups: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvaluationSet {
    Aria,
    Stare,
}

impl std::str::FromStr for EvaluationSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "aria" => Ok(Self::Aria),
            "stare" => Ok(Self::Stare),
            other => Err(Error::invalid(format!("unknown evaluation dataset '{other}'"))),
        }
    }
}

impl EvaluationSet {
    pub fn published_counts(self) -> PublishedCounts {
        match self {
            Self::Aria => ARIA_COUNTS,
            Self::Stare => STARE_COUNTS,
        }
    }
}

/// Tallies a manifest the same way the published counts are stated.
pub fn count(manifest: &DatasetManifest) -> PublishedCounts {
    PublishedCounts {
        samples: manifest.samples.len(),
        positives: manifest.samples.iter().filter(|s| s.diagnosis == Some(1)).count(),
        lesion_annotated: manifest.samples.iter().filter(|s| s.lesion_labels_known()).count(),
    }
}

/// Per-class positive counts over lesion-annotated samples.
pub fn lesion_counts(manifest: &DatasetManifest) -> [usize; N_LESIONS] {
    let mut out = [0; N_LESIONS];
    for l in manifest.samples.iter().filter_map(|s| s.lesions.as_ref()) {
        for (o, v) in out.iter_mut().zip(l) {
            *o += usize::from(*v == 1);
        }
    }
    out
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn stem(path: &Path) -> String {
    path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string()
}

fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_image(&path) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn require_dirs(dirs: &[PathBuf]) -> Result<()> {
    let missing: Vec<PathBuf> = dirs.iter().filter(|d| !d.is_dir()).cloned().collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFiles(missing))
    }
}

fn sample(path: &Path, diagnosis: u8, lesions: Option<Vec<u8>>) -> Sample {
    let id = stem(path);
    Sample {
        eye_group_id: id.clone(),
        sample_id: id,
        image_ref: path.to_string_lossy().into_owned(),
        diagnosis: Some(diagnosis),
        lesions,
    }
}

pub fn load_ichallenge(root: &Path, options: &IChallengeOptions) -> Result<DatasetManifest> {
    let amd_dir = root.join("Training400").join("AMD");
    let normal_dir = root.join("Training400").join("Non-AMD");
    require_dirs(&[amd_dir.clone(), normal_dir.clone()])?;

    let mask_root = root.join("Training400-Lesion").join("Lesion_Masks");
    let mut masks_by_stem: BTreeMap<String, Vec<(usize, PathBuf)>> = BTreeMap::new();
    if mask_root.is_dir() {
        for class in LESION_ORDER {
            let dir = mask_root.join(class.name());
            if !dir.is_dir() {
                continue;
            }
            for path in list_images(&dir)? {
                masks_by_stem.entry(stem(&path)).or_default().push((class.index(), path));
            }
        }
    }
    let mut annotated: HashSet<String> = masks_by_stem.keys().cloned().collect();
    let listing = root.join("Training400-Lesion").join("annotated.txt");
    if listing.is_file() {
        let text = std::fs::read_to_string(&listing).map_err(|e| Error::io(&listing, e))?;
        annotated.extend(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from));
    }

    let mut samples = Vec::new();
    for (dir, diagnosis) in [(&amd_dir, 1u8), (&normal_dir, 0u8)] {
        for path in list_images(dir)? {
            let id = stem(&path);
            let lesions = if annotated.contains(&id) {
                let (w, h) = image::image_dimensions(&path).map_err(|source| Error::Image {
                    path: path.clone(),
                    source,
                })?;
                let mut set = LesionMaskSet::new(w as usize, h as usize);
                for (class, mask_path) in masks_by_stem.get(&id).into_iter().flatten() {
                    set.masks[*class] = Some(BinaryMask::load(mask_path, options.polarity)?);
                }
                let labels = derive_lesion_labels(&set, options.min_lesion_pixels)
                    .map_err(|e| Error::invalid(format!("{id}: {e}")))?;
                Some(labels.to_vec())
            } else {
                None
            };
            samples.push(sample(&path, diagnosis, lesions));
        }
    }
    if samples.is_empty() {
        return Err(Error::MissingFiles(vec![amd_dir.join("*"), normal_dir.join("*")]));
    }
    let samples = assign_eye_groups(samples, &options.eye_groups)?;
    Ok(DatasetManifest::new("ichallenge-amd", samples))
}

pub fn load_evaluation_set(root: &Path, dataset: EvaluationSet) -> Result<DatasetManifest> {
    let samples = match dataset {
        EvaluationSet::Aria => load_aria(root)?,
        EvaluationSet::Stare => load_stare(root)?,
    };
    let name = match dataset {
        EvaluationSet::Aria => "aria",
        EvaluationSet::Stare => "stare",
    };
    Ok(DatasetManifest::new(name, samples))
}

fn load_aria(root: &Path) -> Result<Vec<Sample>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    dirs.sort();
    let mut samples = Vec::new();
    let mut saw = (false, false);
    for dir in dirs {
        let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_ascii_lowercase();
        if name.contains("markup") {
            continue;
        }
        let diagnosis = if name.starts_with("aria_a") {
            saw.0 = true;
            1
        } else if name.starts_with("aria_c") {
            saw.1 = true;
            0
        } else {
            // aria_d: diabetic retinopathy, not part of the AMD evaluation
            continue;
        };
        samples.extend(list_images(&dir)?.iter().map(|p| sample(p, diagnosis, None)));
    }
    if !saw.0 || !saw.1 || samples.is_empty() {
        return Err(Error::MissingFiles(vec![root.join("aria_a*"), root.join("aria_c*")]));
    }
    Ok(samples)
}

fn load_stare(root: &Path) -> Result<Vec<Sample>> {
    let codes = root.join("all-mg-codes.txt");
    if !codes.is_file() {
        return Err(Error::MissingFiles(vec![codes]));
    }
    let text = std::fs::read_to_string(&codes).map_err(|e| Error::io(&codes, e))?;
    let image_dir = if root.join("images").is_dir() {
        root.join("images")
    } else {
        root.to_path_buf()
    };
    let available: BTreeMap<String, PathBuf> = list_images(&image_dir)?
        .into_iter()
        .map(|p| (stem(&p), p))
        .collect();

    let mut samples = Vec::new();
    let mut missing = Vec::new();
    for line in text.lines() {
        let mut tokens = line.split_whitespace();
        let Some(id) = tokens.next() else { continue };
        let description: Vec<&str> = tokens.skip_while(|t| t.chars().all(|c| c.is_ascii_digit())).collect();
        let description = description.join(" ").to_ascii_lowercase();
        let diagnosis = if description.contains("macular degeneration") {
            1
        } else if description == "normal" {
            0
        } else {
            continue;
        };
        match available.get(id) {
            Some(path) => samples.push(sample(path, diagnosis, None)),
            None => missing.push(image_dir.join(format!("{id}.ppm"))),
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    if samples.is_empty() {
        return Err(Error::invalid(format!("{} lists no AMD or normal images", codes.display())));
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{validate_manifest, ImageTensor};
    use image::{GrayImage, Luma};

    fn write_image(path: &Path, w: usize, h: usize) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        ImageTensor::filled(h, w, 0.3).save_png(path).unwrap();
    }

    fn write_mask(path: &Path, w: u32, h: u32, lesion_pixels: u32) {
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        let img = GrayImage::from_fn(w, h, |x, y| Luma([if y * w + x < lesion_pixels { 0 } else { 255 }]));
        img.save(path).unwrap();
    }

    #[test]
    fn ichallenge_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for id in ["A0001", "A0002"] {
            write_image(&root.join(format!("Training400/AMD/{id}.png")), 40, 36);
        }
        for id in ["N0001", "N0002", "N0003"] {
            write_image(&root.join(format!("Training400/Non-AMD/{id}.png")), 40, 36);
        }
        let masks = root.join("Training400-Lesion/Lesion_Masks");
        write_mask(&masks.join("drusen/A0001.png"), 40, 36, 12);
        write_mask(&masks.join("scar/A0001.png"), 40, 36, 0);
        write_mask(&masks.join("hemorrhage/N0002.png"), 40, 36, 3);
        std::fs::write(root.join("Training400-Lesion/annotated.txt"), "N0003\n").unwrap();

        let options = IChallengeOptions {
            eye_groups: vec![vec!["A0002".into(), "N0001".into()]],
            ..Default::default()
        };
        let m = load_ichallenge(root, &options).unwrap();
        assert!(validate_manifest(&m).is_empty());
        assert_eq!(
            count(&m),
            PublishedCounts {
                samples: 5,
                positives: 2,
                lesion_annotated: 3
            }
        );
        let a1 = m.get("A0001").unwrap();
        assert_eq!(a1.lesions.as_deref(), Some(&[1, 0, 0, 0, 0][..]));
        assert_eq!(m.get("N0003").unwrap().lesions.as_deref(), Some(&[0u8; 5][..]));
        assert_eq!(m.get("A0002").unwrap().lesions, None);
        assert_eq!(lesion_counts(&m), [1, 0, 1, 0, 0]);
        assert_eq!(m.get("A0002").unwrap().eye_group_id, m.get("N0001").unwrap().eye_group_id);
    }

    #[test]
    fn ichallenge_mask_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_image(&root.join("Training400/AMD/A0001.png"), 40, 36);
        std::fs::create_dir_all(root.join("Training400/Non-AMD")).unwrap();
        write_mask(&root.join("Training400-Lesion/Lesion_Masks/exudate/A0001.png"), 20, 36, 1);
        let err = load_ichallenge(root, &IChallengeOptions::default()).unwrap_err();
        assert!(err.to_string().contains("exudate"), "{err}");
    }

    #[test]
    fn empty_directory_fails() {
        let dir = tempfile::tempdir().unwrap();
        let err = load_ichallenge(dir.path(), &IChallengeOptions::default()).unwrap_err();
        match err {
            Error::MissingFiles(paths) => assert_eq!(paths.len(), 2),
            other => panic!("unexpected {other}"),
        }
        std::fs::create_dir_all(dir.path().join("Training400/AMD")).unwrap();
        std::fs::create_dir_all(dir.path().join("Training400/Non-AMD")).unwrap();
        assert!(matches!(
            load_ichallenge(dir.path(), &IChallengeOptions::default()),
            Err(Error::MissingFiles(_))
        ));
    }

    #[test]
    fn aria_excludes_diabetic() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        write_image(&root.join("aria_a_images/aria_a_1.png"), 32, 32);
        write_image(&root.join("aria_a_images/aria_a_2.png"), 32, 32);
        write_image(&root.join("aria_c_images/aria_c_1.png"), 32, 32);
        write_image(&root.join("aria_d_images/aria_d_1.png"), 32, 32);
        write_image(&root.join("aria_a_markups/aria_a_1_BDP.png"), 32, 32);
        let m = load_evaluation_set(root, EvaluationSet::Aria).unwrap();
        assert_eq!(
            count(&m),
            PublishedCounts {
                samples: 3,
                positives: 2,
                lesion_annotated: 0
            }
        );
        assert!(m.samples.iter().all(|s| !s.sample_id.starts_with("aria_d")));
    }

    #[test]
    fn stare_codes() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for id in ["im0001", "im0002", "im0003", "im0004"] {
            write_image(&root.join(format!("images/{id}.ppm")), 32, 32);
        }
        std::fs::write(
            root.join("all-mg-codes.txt"),
            "im0001\t14\tAge Related Macular Degeneration\n\
             im0002\t0\tNormal\n\
             im0003\t7\tBackground Diabetic Retinopathy\n\
             im0004\t13 14\tChoroidal Neovascularization AND Age Related Macular Degeneration\n",
        )
        .unwrap();
        let m = load_evaluation_set(root, EvaluationSet::Stare).unwrap();
        assert_eq!(count(&m).samples, 3);
        assert_eq!(count(&m).positives, 2);
        assert_eq!(m.get("im0002").unwrap().diagnosis, Some(0));
    }

    #[test]
    fn unknown_dataset_tag() {
        assert!("drive".parse::<EvaluationSet>().is_err());
        assert_eq!("STARE".parse::<EvaluationSet>().unwrap(), EvaluationSet::Stare);
    }

    #[test]
    fn published_counts_are_the_reported_ones() {
        assert_eq!((ICHALLENGE_COUNTS.samples, ICHALLENGE_COUNTS.positives), (400, 89));
        assert_eq!(ICHALLENGE_COUNTS.lesion_annotated, 118);
        assert_eq!((ARIA_COUNTS.samples, ARIA_COUNTS.positives), (23 + 61, 23));
        assert_eq!((STARE_COUNTS.samples, STARE_COUNTS.positives), (46 + 36, 46));
        assert_eq!(ICHALLENGE_LESION_COUNTS, [61, 38, 19, 13, 17]);
    }
}
