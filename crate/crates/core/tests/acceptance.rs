//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`). A failing criterion is reported
//! but only turns into a non-zero exit status when `AMDDX_ACCEPTANCE_STRICT`
//! is set. The end-to-end synthetic experiment trains 30 models of 200 epochs
//! each and dominates the runtime.

mod common;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use std::collections::{HashMap, HashSet};
use std::process::ExitCode;
use std::time::Instant;

use amddx_core::datamodel::{DatasetManifest, LesionClass, Sample, LESION_ORDER};
use amddx_core::evaluation::{
    auc, detection_table, lesion_table, metric_report, peak_location, pr_curve, roc_curve, Merge, MetricReport,
};
use amddx_core::ingestion::build_folds;
use amddx_core::model::{adaptive_max_pool, ModelConfig};
use amddx_core::synthdata::{generate, SynthConfig, SynthDataset};
use amddx_core::training::{
    loss_and_logit_grad, loss_gradients, run_cross_validation, CvOutcome, ExperimentConfig, ImageStore, LesionPolicy,
    LossConfig, Mode, OptimizerConfig, PredictionRow,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: usize, title: &str, started: Instant, outcome: &Outcome) {
    println!(
        "criterion {n}: {} | {title} | {} | {:.1} s",
        if outcome.pass { "PASS" } else { "FAIL" },
        outcome.detail,
        started.elapsed().as_secs_f64()
    );
}

// 1 ---------------------------------------------------------------------------

fn gradient_oracle() -> Outcome {
    let started = Instant::now();
    let params = common::perturbed_params(7);
    let image = common::random_image(32, 32, 1);
    let sample = common::labelled(1, Some(vec![1, 0, 1, 0, 0]));
    let check = common::gradient_check(&params, &image, &sample, &LossConfig::default(), 100, 1e-4, 3);
    let secs = started.elapsed().as_secs_f64();
    Outcome {
        pass: check.checked == 100 && check.worst < 1e-4 && secs < 60.0,
        detail: format!(
            "max rel. error {:.2e} over {} coordinates ({} redrawn at ReLU/pool switches), {secs:.1} s",
            check.worst, check.checked, check.skipped
        ),
    }
}

// 2 ---------------------------------------------------------------------------

fn plain_bce(p: f64, y: f64) -> f64 {
    let p = p.clamp(1e-7, 1.0 - 1e-7);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

fn loss_identities() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut worst_sum: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut ao_exact = true;
    for _ in 0..2000 {
        let probs: Vec<f64> = (0..6).map(|_| rng.random::<f64>()).collect();
        let d = rng.random_range(0..2u8);
        let lesions = rng.random_bool(0.7).then(|| (0..5).map(|_| rng.random_range(0..2u8)).collect::<Vec<_>>());
        let sample = common::labelled(d, lesions.clone());
        let cfg = LossConfig {
            alpha: rng.random_range(0.0..2.0),
            ..Default::default()
        };
        let (parts, _) = loss_and_logit_grad(&probs, &sample, &cfg).unwrap();
        worst_sum = worst_sum.max((parts.total - (parts.diagnosis + cfg.alpha * parts.lesion)).abs());
        let lesion = lesions.map_or(0.0, |l| {
            l.iter().enumerate().map(|(i, y)| plain_bce(probs[i + 1], *y as f64)).sum::<f64>() / 5.0
        });
        let oracle = plain_bce(probs[0], d as f64) + cfg.alpha * lesion;
        worst_oracle = worst_oracle.max((parts.total - oracle).abs());

        let zero = LossConfig { alpha: 0.0, ..cfg.clone() };
        let (z, zg) = loss_and_logit_grad(&probs, &sample, &zero).unwrap();
        let (ao, aog) = loss_and_logit_grad(&probs, &sample, &Mode::Ao.loss_config(&cfg)).unwrap();
        ao_exact &= z.total == ao.total && zg == aog && ao.total == plain_bce(probs[0], d as f64);
    }

    // a sample without lesion labels leaves every parameter gradient as in AMD-only training
    let params = common::perturbed_params(3);
    let image = common::random_image(32, 32, 5);
    let masked = common::labelled(1, None);
    let cfg = LossConfig::default();
    assert_eq!(cfg.unlabeled_lesion_policy, LesionPolicy::Mask);
    let (_, g) = loss_gradients(&params, &image, &masked, &cfg).unwrap();
    let (_, g_ao) = loss_gradients(&params, &image, &masked, &cfg.amd_only()).unwrap();
    let grad_diff = g
        .flat_slices()
        .iter()
        .zip(g_ao.flat_slices())
        .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()))
        .fold(0.0f64, f64::max);

    Outcome {
        pass: worst_sum <= 1e-12 && worst_oracle <= 1e-12 && ao_exact && grad_diff < 1e-12,
        detail: format!(
            "|total - (diag + a*lesion)| {worst_sum:.1e}, vs direct BCE {worst_oracle:.1e}, a=0 equals AMD-only exactly: {ao_exact}, masked-sample gradient diff {grad_diff:.1e}"
        ),
    }
}

// 3 ---------------------------------------------------------------------------

fn mann_whitney(set: &[(f64, bool)]) -> f64 {
    let pos: Vec<f64> = set.iter().filter(|s| s.1).map(|s| s.0).collect();
    let neg: Vec<f64> = set.iter().filter(|s| !s.1).map(|s| s.0).collect();
    let mut wins = 0.0;
    for p in &pos {
        for n in &neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

/// Precision and recall at every distinct threshold, recomputed from scratch.
fn pr_sweep_oracle(set: &[(f64, bool)]) -> f64 {
    let mut thresholds: Vec<f64> = set.iter().map(|s| s.0).collect();
    thresholds.sort_by(|a, b| b.partial_cmp(a).unwrap());
    thresholds.dedup();
    let positives = set.iter().filter(|s| s.1).count() as f64;
    let mut points = Vec::new();
    for t in thresholds {
        let tp = set.iter().filter(|s| s.0 >= t && s.1).count() as f64;
        let predicted = set.iter().filter(|s| s.0 >= t).count() as f64;
        points.push((tp / positives, tp / predicted));
    }
    let mut area = 0.0;
    let mut prev = (0.0, points[0].1);
    for p in points {
        area += (p.0 - prev.0) * (p.1 + prev.1) / 2.0;
        prev = p;
    }
    area
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let (mut worst_roc, mut worst_pr): (f64, f64) = (0.0, 0.0);
    for _ in 0..500 {
        let n = rng.random_range(5..=200);
        let levels = rng.random_range(2..=30);
        let mut set: Vec<(f64, bool)> = (0..n)
            .map(|_| (rng.random_range(0..levels) as f64 / levels as f64, rng.random_bool(0.4)))
            .collect();
        set[0].1 = true;
        set[1].1 = false;
        let roc = auc(&roc_curve(&set).unwrap()).unwrap();
        let pr = auc(&pr_curve(&set).unwrap()).unwrap();
        worst_roc = worst_roc.max((roc - mann_whitney(&set)).abs());
        worst_pr = worst_pr.max((pr - pr_sweep_oracle(&set)).abs());
    }
    Outcome {
        pass: worst_roc <= 1e-9 && worst_pr <= 1e-9,
        detail: format!("500 tied sets: ROC vs Mann-Whitney {worst_roc:.1e}, PR vs threshold sweep {worst_pr:.1e}"),
    }
}

// 4 ---------------------------------------------------------------------------

fn brute_adaptive_pool(map: &Array2<f64>, out: usize) -> Array2<f64> {
    let (h, w) = map.dim();
    Array2::from_shape_fn((out, out), |(i, j)| {
        let (r0, r1) = ((i * h) as f64 / out as f64, ((i + 1) * h) as f64 / out as f64);
        let (c0, c1) = ((j * w) as f64 / out as f64, ((j + 1) * w) as f64 / out as f64);
        let mut best = f64::NEG_INFINITY;
        for r in r0.floor() as usize..r1.ceil() as usize {
            for c in c0.floor() as usize..c1.ceil() as usize {
                best = best.max(map[[r, c]]);
            }
        }
        best
    })
}

fn adaptive_pool_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let mut mismatches = 0;
    let mut cases = 0;
    for h in 1..=64 {
        for w in 1..=64 {
            let map = Array2::from_shape_fn((h, w), |_| rng.random_range(-1.0..1.0));
            for out in [1, 7, 31] {
                cases += 1;
                if adaptive_max_pool(map.view(), out).unwrap() != brute_adaptive_pool(&map, out) {
                    mismatches += 1;
                }
            }
        }
    }
    Outcome {
        pass: mismatches == 0,
        detail: format!("{cases} shapes, {mismatches} mismatches"),
    }
}

// 5 ---------------------------------------------------------------------------

fn fold_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut failures = Vec::new();
    for case in 0..100 {
        let n = rng.random_range(10..120);
        let mut samples = Vec::new();
        let mut group = 0;
        while samples.len() < n {
            let size = rng.random_range(1..=4);
            for _ in 0..size {
                let i = samples.len();
                samples.push(Sample {
                    sample_id: format!("c{case}_{i}"),
                    image_ref: format!("{i}.png"),
                    diagnosis: Some(rng.random_range(0..2)),
                    lesions: None,
                    eye_group_id: format!("g{group}"),
                });
            }
            group += 1;
        }
        let manifest = DatasetManifest::new("random", samples);
        let plan = build_folds(&manifest, 2, 5, rng.random()).unwrap();
        let group_of: HashMap<&str, &str> =
            manifest.samples.iter().map(|s| (s.sample_id.as_str(), s.eye_group_id.as_str())).collect();
        let mut ok = plan.runs() == 10;
        for rep in &plan.repetitions {
            let mut seen = HashSet::new();
            let mut fold_of_group = HashMap::new();
            for (f, fold) in rep.iter().enumerate() {
                for id in fold {
                    ok &= seen.insert(id.as_str());
                    ok &= *fold_of_group.entry(group_of[id.as_str()]).or_insert(f) == f;
                }
            }
            ok &= seen.len() == manifest.samples.len();
        }
        if !ok {
            failures.push(case);
        }
    }
    Outcome {
        pass: failures.is_empty(),
        detail: format!("100 random manifests, 5x2 plans; failing cases: {failures:?}"),
    }
}

// 6-8 -------------------------------------------------------------------------

const SYNTH_SAMPLES: usize = 200;
const SYNTH_SEED: u64 = 7;
const SYNTH_SIZE: usize = 96;
const FOLD_SEED: u64 = 11;
const TRAIN_SEED: u64 = 5;
const LEARNING_RATE: f64 = 1e-4;

fn synthetic_experiment() -> ExperimentConfig {
    ExperimentConfig {
        model: ModelConfig::desk(),
        optimizer: OptimizerConfig {
            learning_rate: LEARNING_RATE,
            epochs: 200,
            ..Default::default()
        },
        input_width: SYNTH_SIZE,
        seed: TRAIN_SEED,
        ..Default::default()
    }
}

struct Synthetic {
    data: SynthDataset,
    store: ImageStore,
    plan: amddx_core::datamodel::FoldPlan,
}

fn synthetic_data() -> Synthetic {
    let data = generate(&SynthConfig {
        n_samples: SYNTH_SAMPLES,
        image_size: SYNTH_SIZE,
        seed: SYNTH_SEED,
        ..Default::default()
    })
    .unwrap();
    let mut store = ImageStore::default();
    for (s, img) in data.manifest.samples.iter().zip(&data.images) {
        store.insert(s.sample_id.clone(), img.clone());
    }
    let plan = build_folds(&data.manifest, 2, 5, FOLD_SEED).unwrap();
    Synthetic { data, store, plan }
}

struct CvRun {
    outcome: CvOutcome<f32>,
    report: MetricReport,
    minutes: f64,
}

fn cross_validate(s: &Synthetic, mode: Mode) -> CvRun {
    let started = Instant::now();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let outcome =
        run_cross_validation::<f32>(&s.data.manifest, &s.plan, &s.store, &synthetic_experiment(), mode, jobs, None)
            .unwrap();
    let report = metric_report(&outcome.rows(), &s.data.manifest, Merge::Pool).unwrap();
    let minutes = started.elapsed().as_secs_f64() / 60.0;
    eprintln!("{} cross-validation on {jobs} thread(s): {minutes:.1} min", mode.label());
    CvRun { outcome, report, minutes }
}

fn end_to_end(al: &MetricReport, ao: &MetricReport, minutes: f64) -> Outcome {
    let diag = al.diagnosis().auc_roc.value().unwrap_or(0.0);
    let lesions: Vec<(LesionClass, f64)> = [LesionClass::Exudate, LesionClass::Hemorrhage, LesionClass::Scar]
        .into_iter()
        .map(|c| (c, al.target(c.name()).and_then(|t| t.auc_roc.value()).unwrap_or(0.0)))
        .collect();
    println!("{}", detection_table(&[("A+L", al), ("AMD-only", ao)]));
    println!("{}", lesion_table(al));
    let lesion_text: Vec<String> = lesions.iter().map(|(c, v)| format!("{} {v:.4}", c.name())).collect();
    Outcome {
        pass: diag >= 0.90 && lesions.iter().all(|(_, v)| *v >= 0.85),
        detail: format!(
            "A+L diagnosis AUC-ROC {diag:.4} (AMD-only {}), lesions {}; A+L run {minutes:.1} min (target < 30)",
            ao.diagnosis().auc_roc,
            lesion_text.join(", ")
        ),
    }
}

fn determinism(first: &[PredictionRow], second: &[PredictionRow]) -> Outcome {
    let bits = |rows: &[PredictionRow]| -> Vec<(String, usize, Vec<u64>)> {
        rows.iter()
            .map(|r| (r.sample_id.clone(), r.repetition, r.probabilities.iter().map(|p| p.to_bits()).collect()))
            .collect()
    };
    let same = bits(first) == bits(second);
    Outcome {
        pass: same && !first.is_empty(),
        detail: format!("{} predictions, bit-identical: {same}", first.len()),
    }
}

fn localization(s: &Synthetic, outcome: &CvOutcome<f32>) -> Outcome {
    let index: HashMap<&str, usize> =
        s.data.manifest.samples.iter().enumerate().map(|(i, s)| (s.sample_id.as_str(), i)).collect();
    let (mut hits, mut total) = (0, 0);
    for (_, record) in outcome.records() {
        let i = index[record.sample_id.as_str()];
        let [blob] = s.data.blobs[i].as_slice() else {
            continue;
        };
        let maps = record.activation_maps.as_ref().expect("classify keeps activation maps");
        let (x, y) = peak_location(&maps[blob.class.index()], SYNTH_SIZE, SYNTH_SIZE);
        let [x0, y0, x1, y1] = blob.bbox();
        total += 1;
        if x >= x0 && x <= x1 && y >= y0 && y <= y1 {
            hits += 1;
        }
    }
    let rate = hits as f64 / total.max(1) as f64;
    Outcome {
        pass: total > 0 && rate >= 0.60,
        detail: format!("{hits}/{total} single-lesion test predictions peak inside the blob ({:.1}%)", rate * 100.0),
    }
}

fn main() -> ExitCode {
    let mut all = true;
    let mut run = |n: usize, title: &str, f: &mut dyn FnMut() -> Outcome| {
        let started = Instant::now();
        let outcome = f();
        report(n, title, started, &outcome);
        all &= outcome.pass;
    };
    run(1, "gradient oracle", &mut gradient_oracle);
    run(2, "loss identities", &mut loss_identities);
    run(3, "AUC oracle", &mut auc_oracle);
    run(4, "adaptive pooling oracle", &mut adaptive_pool_oracle);
    run(5, "fold invariants", &mut fold_invariants);

    let synthetic = synthetic_data();
    let counts: Vec<usize> = LESION_ORDER
        .iter()
        .map(|c| synthetic.data.blobs.iter().filter(|b| b.iter().any(|x| x.class == *c)).count())
        .collect();
    eprintln!("synthetic set: {SYNTH_SAMPLES} samples, lesion prevalence {counts:?}");
    let mut al_run = None;
    run(6, "end-to-end synthetic 5x2 CV", &mut || {
        let al = cross_validate(&synthetic, Mode::Al);
        let ao = cross_validate(&synthetic, Mode::Ao);
        let outcome = end_to_end(&al.report, &ao.report, al.minutes);
        al_run = Some(al.outcome);
        outcome
    });
    let al = al_run.expect("criterion 6 ran");
    run(7, "determinism", &mut || {
        let again = cross_validate(&synthetic, Mode::Al);
        determinism(&al.rows(), &again.outcome.rows())
    });
    run(8, "activation-map localization", &mut || localization(&synthetic, &al));

    if all {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else if std::env::var_os("AMDDX_ACCEPTANCE_STRICT").is_some() {
        println!("acceptance: some criteria failed");
        ExitCode::FAILURE
    } else {
        println!("acceptance: some criteria failed (set AMDDX_ACCEPTANCE_STRICT to fail the run)");
        ExitCode::SUCCESS
    }
}
