use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ImageTensor, PredictionRecord, Sample, N_LESIONS};
use crate::error::{Error, Result};
use crate::model::{backward, forward_trace, ModelParams};
use crate::real::Real;

/// How lesion targets are formed for samples without lesion annotations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LesionPolicy {
    /// The lesion term is dropped for the sample.
    #[default]
    Mask,
    /// The sample is treated as free of every lesion.
    Negative,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    /// Weight of the lesion term; the diagnosis term has weight 1.
    pub alpha: f64,
    pub n_lesions: usize,
    pub epsilon_clamp: f64,
    pub unlabeled_lesion_policy: LesionPolicy,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            n_lesions: N_LESIONS,
            epsilon_clamp: 1e-7,
            unlabeled_lesion_policy: LesionPolicy::Mask,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::invalid(format!("alpha must be ≥ 0, got {}", self.alpha)));
        }
        if !(self.epsilon_clamp > 0.0 && self.epsilon_clamp < 0.5) {
            return Err(Error::invalid(format!(
                "epsilon_clamp must be in (0, 0.5), got {}",
                self.epsilon_clamp
            )));
        }
        if self.n_lesions == 0 {
            return Err(Error::invalid("n_lesions must be positive"));
        }
        Ok(())
    }

    /// Same settings with the lesion term switched off.
    pub fn amd_only(&self) -> Self {
        Self {
            alpha: 0.0,
            ..self.clone()
        }
    }
}

/// Binary cross-entropy with `p` clamped to `[eps, 1 - eps]`.
pub fn bce(p: f64, y: f64, eps: f64) -> f64 {
    let p = p.clamp(eps, 1.0 - eps);
    -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
}

/// Derivative of [`bce`] of `sigmoid(z)` w.r.t. the logit `z`, where `p = sigmoid(z)`.
/// Zero inside the clamped region, where the loss is constant.
pub fn bce_logit_grad(p: f64, y: f64, eps: f64) -> f64 {
    if p < eps || p > 1.0 - eps {
        0.0
    } else {
        p - y
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub diagnosis: f64,
    pub lesion: f64,
}

/// Lesion targets used by the loss, or `None` when the lesion term is masked out.
fn lesion_targets(sample: &Sample, cfg: &LossConfig) -> Result<Option<Vec<f64>>> {
    match (&sample.lesions, cfg.unlabeled_lesion_policy) {
        (Some(l), _) => {
            if l.len() != cfg.n_lesions {
                return Err(Error::Shape(format!(
                    "sample {} has {} lesion labels, expected {}",
                    sample.sample_id,
                    l.len(),
                    cfg.n_lesions
                )));
            }
            Ok(Some(l.iter().map(|v| *v as f64).collect()))
        }
        (None, LesionPolicy::Negative) => Ok(Some(vec![0.0; cfg.n_lesions])),
        (None, LesionPolicy::Mask) => Ok(None),
    }
}

/// Loss parts and the gradient of the total loss w.r.t. each output logit.
///
/// `probabilities[0]` is the diagnosis output, `probabilities[1..]` the lesions.
pub fn loss_and_logit_grad(probabilities: &[f64], sample: &Sample, cfg: &LossConfig) -> Result<(LossParts, Vec<f64>)> {
    let d = sample
        .diagnosis
        .ok_or_else(|| Error::invalid(format!("sample {} has no diagnosis label", sample.sample_id)))?
        as f64;
    if probabilities.len() != cfg.n_lesions + 1 {
        return Err(Error::Shape(format!(
            "{} probabilities for {} lesion classes",
            probabilities.len(),
            cfg.n_lesions
        )));
    }
    let eps = cfg.epsilon_clamp;
    let mut grad = vec![0.0; probabilities.len()];
    let diagnosis = bce(probabilities[0], d, eps);
    grad[0] = bce_logit_grad(probabilities[0], d, eps);

    let mut lesion = 0.0;
    if let Some(targets) = lesion_targets(sample, cfg)? {
        let n = cfg.n_lesions as f64;
        for (i, y) in targets.iter().enumerate() {
            let p = probabilities[i + 1];
            lesion += bce(p, *y, eps);
            grad[i + 1] = cfg.alpha * bce_logit_grad(p, *y, eps) / n;
        }
        lesion /= n;
    }
    let total = diagnosis + cfg.alpha * lesion;
    debug_assert_eq!(total, diagnosis + cfg.alpha * lesion);
    Ok((
        LossParts {
            total,
            diagnosis,
            lesion,
        },
        grad,
    ))
}

/// `total = diagnosis + alpha · lesion` for one prediction.
pub fn total_loss(prediction: &PredictionRecord, sample: &Sample, cfg: &LossConfig) -> Result<LossParts> {
    loss_and_logit_grad(&prediction.probabilities, sample, cfg).map(|(parts, _)| parts)
}

/// Exact gradient of the total loss w.r.t. every model parameter for one image.
pub fn loss_gradients<F: Real>(
    params: &ModelParams<F>,
    image: &ImageTensor,
    sample: &Sample,
    cfg: &LossConfig,
) -> Result<(LossParts, ModelParams<F>)> {
    let trace = forward_trace(params, image)?;
    let probs: Vec<f64> = trace.probabilities.iter().map(|p| p.as_f64()).collect();
    let (parts, grad) = loss_and_logit_grad(&probs, sample, cfg)?;
    if !parts.total.is_finite() {
        return Err(Error::NonFinite(format!("loss of sample {}", sample.sample_id)));
    }
    let grad_logits = Array1::from_iter(grad.into_iter().map(F::of));
    let grads = backward(params, &trace, grad_logits.view());
    if let Some(layer) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {layer}")));
    }
    Ok((parts, grads))
}
