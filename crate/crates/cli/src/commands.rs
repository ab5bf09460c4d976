use std::path::{Path, PathBuf};

use amddx_core::datamodel::{read_json, validate_manifest, write_json, DatasetManifest, FoldPlan, ImageTensor};
use amddx_core::evaluation::{
    detection_table, export_activation_overlay, lesion_table, metric_report, write_curves_csv, Merge, MetricReport,
};
use amddx_core::ingestion::{build_folds, count, lesion_counts, resize_to_width, MaskPolarity};
use amddx_core::model::{classify, load_params, load_pretrained_trunk, save_params, ModelParams};
use amddx_core::synthdata::{generate, SynthConfig};
use amddx_core::training::{
    load_predictions, run_cross_validation, save_predictions, ImageStore, Mode, PredictionRow,
};
use amddx_core::{Error, Result};
use serde::Serialize;

use crate::config::{load_dataset, DatasetKind, RunConfig, RunRecord};

#[derive(Serialize)]
struct IngestReport {
    samples: usize,
    positives: usize,
    lesion_annotated: usize,
    lesion_positives: Vec<(String, usize)>,
    violations: Vec<String>,
}

pub fn ingest(
    kind: DatasetKind,
    root: &Path,
    eye_groups: Option<&Path>,
    min_lesion_pixels: usize,
    polarity: MaskPolarity,
    out: &Path,
) -> Result<()> {
    let root = root.canonicalize().map_err(|_| Error::MissingFiles(vec![root.to_path_buf()]))?;
    let manifest = load_dataset(kind, &root, eye_groups, min_lesion_pixels, polarity)?;
    let violations: Vec<String> = validate_manifest(&manifest).iter().map(ToString::to_string).collect();
    let counts = count(&manifest);
    let report = IngestReport {
        samples: counts.samples,
        positives: counts.positives,
        lesion_annotated: counts.lesion_annotated,
        lesion_positives: amddx_core::datamodel::LESION_ORDER
            .iter()
            .zip(lesion_counts(&manifest))
            .map(|(c, n)| (c.name().to_string(), n))
            .collect(),
        violations: violations.clone(),
    };
    manifest.save(out)?;
    write_json(&out.with_extension("validation.json"), &report)?;
    println!(
        "{}: {} samples, {} AMD, {} with lesion labels",
        manifest.name, counts.samples, counts.positives, counts.lesion_annotated
    );
    if violations.is_empty() {
        Ok(())
    } else {
        for v in &violations {
            eprintln!("{v}");
        }
        Err(Error::invalid(format!("{} manifest violations", violations.len())))
    }
}

pub fn folds(manifest: &Path, k: usize, repetitions: usize, seed: u64, out: &Path) -> Result<()> {
    let manifest = DatasetManifest::load(manifest)?;
    let plan = build_folds(&manifest, k, repetitions, seed)?;
    plan.save(out)?;
    println!("{} runs over {} samples", plan.runs(), manifest.samples.len());
    Ok(())
}

fn params_path(dir: &Path, repetition: usize, fold: usize) -> PathBuf {
    dir.join("params").join(format!("rep{repetition}_fold{fold}.amdx"))
}

pub fn cv(config_path: &Path, mode: Mode, jobs: usize, folds: Option<&Path>) -> Result<()> {
    let cfg = RunConfig::load(config_path)?;
    let manifest = cfg.load_manifest()?;
    let violations = validate_manifest(&manifest);
    if !violations.is_empty() {
        let list: Vec<String> = violations.iter().map(ToString::to_string).collect();
        return Err(Error::invalid(format!("manifest is invalid: {}", list.join("; "))));
    }
    let plan = match folds {
        Some(p) => FoldPlan::load(p)?,
        None => build_folds(&manifest, cfg.folds.k, cfg.folds.repetitions, cfg.folds.seed)?,
    };
    let pretrained = cfg.pretrained_trunk.as_deref().map(load_pretrained_trunk::<f32>).transpose()?;
    let images = ImageStore::load(&manifest, cfg.input_width)?;
    log::info!("{} images loaded, {} fold runs", images.len(), plan.runs());

    let outcome = run_cross_validation(&manifest, &plan, &images, &cfg.experiment(), mode, jobs, pretrained.as_ref())?;

    let dir = cfg.run_dir(mode);
    let manifest_copy = cfg.output_dir.join("manifest.json");
    let mut saved = manifest.clone();
    for s in &mut saved.samples {
        s.image_ref = manifest.image_path(s).to_string_lossy().into_owned();
    }
    saved.save(&manifest_copy)?;
    plan.save(&cfg.output_dir.join("folds.json"))?;
    write_json(
        &dir.join("run.json"),
        &RunRecord {
            mode,
            manifest: manifest_copy,
            config: cfg.clone(),
        },
    )?;
    for f in &outcome.folds {
        save_params(&f.params, &params_path(&dir, f.repetition, f.fold))?;
        f.history
            .write_csv(&dir.join("history").join(format!("rep{}_fold{}.csv", f.repetition, f.fold)))?;
    }
    save_predictions(&outcome.rows(), &dir.join("predictions.json"))?;
    println!("{} fold models written to {}", outcome.folds.len(), dir.display());
    Ok(())
}

pub struct EvalArgs {
    pub runs: Vec<PathBuf>,
    pub predictions: Vec<String>,
    pub manifest: Option<PathBuf>,
    pub external: Option<PathBuf>,
    pub merge: Merge,
    pub out: PathBuf,
}

/// Every fold model of a run applied to every sample of `manifest`; each
/// model's predictions form one repetition.
fn external_predictions(run: &Path, record: &RunRecord, manifest: &DatasetManifest) -> Result<Vec<PredictionRow>> {
    let params_dir = run.join("params");
    let mut archives: Vec<PathBuf> = std::fs::read_dir(&params_dir)
        .map_err(|e| Error::io(&params_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "amdx"))
        .collect();
    archives.sort();
    if archives.is_empty() {
        return Err(Error::MissingFiles(vec![params_dir]));
    }
    let images = ImageStore::load(manifest, record.config.input_width)?;
    let mut rows = Vec::new();
    for (i, path) in archives.iter().enumerate() {
        let params: ModelParams<f32> = load_params(path)?;
        for s in &manifest.samples {
            let p = classify(&params, &s.sample_id, images.get(&s.sample_id)?)?;
            rows.push(PredictionRow {
                sample_id: s.sample_id.clone(),
                repetition: i,
                probabilities: p.probabilities,
            });
        }
    }
    Ok(rows)
}

fn label_of(run: &Path) -> String {
    run.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let mut reports: Vec<(String, MetricReport)> = Vec::new();
    let external = args.external.as_deref().map(DatasetManifest::load).transpose()?;
    for run in &args.runs {
        let record: RunRecord = read_json(&run.join("run.json"))?;
        let label = record.mode.label().to_string();
        let report = match &external {
            Some(m) => metric_report(&external_predictions(run, &record, m)?, m, args.merge)?,
            None => {
                let manifest = DatasetManifest::load(&record.manifest)?;
                let rows = load_predictions(&run.join("predictions.json"))?;
                metric_report(&rows, &manifest, args.merge)?
            }
        };
        reports.push((label, report));
    }
    if !args.predictions.is_empty() {
        if external.is_some() {
            return Err(Error::invalid("--external applies to --run directories, not to --predictions"));
        }
        let manifest_path = args
            .manifest
            .as_deref()
            .ok_or_else(|| Error::invalid("--predictions needs --manifest"))?;
        let manifest = DatasetManifest::load(manifest_path)?;
        for spec in &args.predictions {
            let (label, path) = match spec.split_once('=') {
                Some((l, p)) => (l.to_string(), PathBuf::from(p)),
                None => (label_of(Path::new(spec).with_extension("").as_path()), PathBuf::from(spec)),
            };
            let rows = load_predictions(&path)?;
            reports.push((label, metric_report(&rows, &manifest, args.merge)?));
        }
    }
    if reports.is_empty() {
        return Err(Error::invalid("nothing to evaluate: pass --run or --predictions"));
    }

    for (label, report) in &reports {
        let tag: String = label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '_' })
            .collect();
        let dir = args.out.join(&tag);
        write_json(&dir.join("report.json"), report)?;
        std::fs::create_dir_all(dir.join("curves")).map_err(|e| Error::io(dir.join("curves"), e))?;
        for t in &report.targets {
            let curves = report.curves_of(&t.target);
            if !curves.is_empty() {
                write_curves_csv(&curves, &dir.join("curves").join(format!("{}.csv", t.target)))?;
            }
        }
    }
    let columns: Vec<(&str, &MetricReport)> = reports.iter().map(|(l, r)| (l.as_str(), r)).collect();
    let mut text = detection_table(&columns);
    text.push('\n');
    for (label, report) in &reports {
        text.push_str(&format!("Lesions, {label}\n{}\n", lesion_table(report)));
    }
    let path = args.out.join("tables.txt");
    std::fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
    print!("{text}");
    Ok(())
}

pub fn maps(params: &Path, manifest: &Path, ids: &[String], width: Option<usize>, out: &Path) -> Result<()> {
    let params: ModelParams<f32> = load_params(params)?;
    let manifest = DatasetManifest::load(manifest)?;
    let mut written = 0;
    for id in ids {
        let sample = manifest
            .get(id)
            .ok_or_else(|| Error::invalid(format!("sample {id} is not in manifest {}", manifest.name)))?;
        let mut image = ImageTensor::load(&manifest.image_path(sample))?;
        if let Some(w) = width.filter(|w| *w != image.width()) {
            image = resize_to_width(&image, w)?;
        }
        let prediction = classify(&params, id, &image)?;
        written += export_activation_overlay(&image, &prediction, out)?.len();
    }
    println!("{written} images written to {}", out.display());
    Ok(())
}

pub fn synth(n: usize, seed: u64, size: Option<usize>, config: Option<&Path>, out: &Path) -> Result<()> {
    let mut cfg: SynthConfig = config.map(read_json).transpose()?.unwrap_or_default();
    cfg.n_samples = n;
    cfg.seed = seed;
    if let Some(s) = size {
        cfg.image_size = s;
    }
    let ds = generate(&cfg)?;
    ds.write(out)?;
    write_json(&out.join("synth_config.json"), &cfg)?;
    let positives = ds.manifest.samples.iter().filter(|s| s.diagnosis == Some(1)).count();
    println!("{n} synthetic samples ({positives} AMD) written to {}", out.display());
    Ok(())
}
