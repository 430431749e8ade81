//! White-box adversarial example generators.
//!
//! All attacks operate on pixel batches in `[0, 1]` against a model
//! exposing differentiable logits. The four gradient-sign attacks (FGSM,
//! BIM, PGD, MIM) share an L-infinity budget `epsilon`; JSMA is bounded
//! by the fraction of pixels it may touch; C&W minimizes L2 distortion
//! under a box constraint.
//!
//! Every attack is a pure function of `(model, batch, config, seed)`.

mod cw;
mod jsma;

pub use cw::cw;
pub use jsma::jsma;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, BatchPrediction, GceConfig};
use crate::models::{self, BoundParams, ModelSpec, ParamSet};
use crate::seeding;
use crate::tensor::{RawTensor, Tensor};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Fgsm,
    Bim,
    Pgd,
    Mim,
    Jsma,
    Cw,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Fgsm => "fgsm",
            AttackKind::Bim => "bim",
            AttackKind::Pgd => "pgd",
            AttackKind::Mim => "mim",
            AttackKind::Jsma => "jsma",
            AttackKind::Cw => "cw",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fgsm" => Ok(AttackKind::Fgsm),
            "bim" => Ok(AttackKind::Bim),
            "pgd" => Ok(AttackKind::Pgd),
            "mim" => Ok(AttackKind::Mim),
            "jsma" => Ok(AttackKind::Jsma),
            "cw" => Ok(AttackKind::Cw),
            other => Err(Error::InvalidArgument(format!("unknown attack kind {other}"))),
        }
    }
}

/// Loss whose input gradient steers a gradient-based attack. Evaluations
/// default to cross-entropy even against models trained with other
/// objectives, so attack strength is comparable across models.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackLoss {
    Xe,
    Gce(GceConfig),
}

/// Attack kind plus every budget knob.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackConfig {
    pub kind: AttackKind,
    /// L-infinity budget for fgsm/bim/pgd/mim; per-pixel perturbation for
    /// jsma (1.0 saturates a pixel).
    pub epsilon: f64,
    /// Iteration count `r` for the iterative attacks.
    pub iterations: usize,
    /// Momentum decay factor (mim only).
    pub decay: f64,
    /// Maximum fraction of pixels modified per sample (jsma only).
    pub gamma: f64,
    /// Confidence margin kappa (cw only).
    pub confidence: f64,
    /// Initial trade-off constant c (cw only).
    pub initial_constant: f64,
    /// Binary-search rounds over c (cw only).
    pub binary_steps: usize,
    /// Optimizer iterations per binary-search round (cw only).
    pub max_opt_iterations: usize,
    /// Explicit target class; untargeted behavior when absent.
    pub targeted: Option<usize>,
    /// Seed for the pgd random start and the cw target draw.
    pub seed: u64,
    pub loss: AttackLoss,
    /// jsma: perturb saliency-map pixel pairs (the original formulation)
    /// or single pixels per iteration.
    pub jsma_pixel_pairs: bool,
}

impl AttackConfig {
    pub fn new(kind: AttackKind) -> Self {
        AttackConfig {
            kind,
            epsilon: match kind {
                AttackKind::Jsma => 1.0,
                _ => 0.1,
            },
            iterations: match kind {
                AttackKind::Fgsm => 1,
                AttackKind::Bim => 10,
                _ => 40,
            },
            decay: 1.0,
            gamma: 0.25,
            confidence: 0.0,
            initial_constant: 0.001,
            binary_steps: 9,
            max_opt_iterations: 1000,
            targeted: None,
            seed: 0,
            loss: AttackLoss::Xe,
            jsma_pixel_pairs: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidArgument("iterations must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::InvalidArgument("gamma must be in (0, 1]".into()));
        }
        if self.confidence < 0.0 {
            return Err(Error::InvalidArgument("confidence must be >= 0".into()));
        }
        if self.initial_constant <= 0.0 {
            return Err(Error::InvalidArgument("initial constant must be > 0".into()));
        }
        if self.binary_steps < 1 || self.max_opt_iterations < 1 {
            return Err(Error::InvalidArgument(
                "binary_steps and max_opt_iterations must be >= 1".into(),
            ));
        }
        if self.decay < 0.0 {
            return Err(Error::InvalidArgument("decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// Adversarial batch with per-sample outcome measures.
#[derive(Debug, Clone)]
pub struct AttackResult {
    pub adversarial: RawTensor,
    pub predictions: Vec<usize>,
    pub success: Vec<bool>,
    pub linf: Vec<f64>,
    pub l2: Vec<f64>,
}

impl AttackResult {
    /// Fraction of samples still classified as their true label, in percent.
    pub fn accuracy_pct(&self, labels: &[usize]) -> f64 {
        let correct = self
            .predictions
            .iter()
            .zip(labels)
            .filter(|(p, l)| p == l)
            .count();
        100.0 * correct as f64 / labels.len().max(1) as f64
    }

    pub fn success_rate(&self) -> f64 {
        self.success.iter().filter(|&&s| s).count() as f64 / self.success.len().max(1) as f64
    }

    pub fn mean_l2(&self) -> f64 {
        self.l2.iter().sum::<f64>() / self.l2.len().max(1) as f64
    }
}

/// Gradient of the configured loss w.r.t. the input pixels. Parameters
/// are bound as constants, so only the input path is differentiated.
fn input_gradient(
    spec: &ModelSpec,
    bound: &BoundParams,
    shape: &[usize],
    pixels: &[f64],
    labels: &[usize],
    loss: &AttackLoss,
) -> Result<Vec<f64>> {
    let x = Tensor::leaf(shape.to_vec(), pixels.to_vec())?;
    let logits = models::forward(spec, bound, &x)?;
    let probs = logits.softmax()?;
    let batch = BatchPrediction::new(probs, labels)?;
    let scalar = match loss {
        AttackLoss::Xe => losses::cross_entropy(&batch)?,
        AttackLoss::Gce(cfg) => losses::guided_complement_entropy(&batch, cfg)?,
    };
    scalar.backward()?;
    let grad = x.grad().unwrap_or_else(|| vec![0.0; pixels.len()]);
    if !grad.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "input_gradient" });
    }
    Ok(grad)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Shared core of the sign attacks: iterate, clip to the epsilon ball
/// around the original pixels intersected with the unit box.
#[allow(clippy::too_many_arguments)]
fn sign_attack(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
    steps: usize,
    step_size: f64,
    momentum: Option<f64>,
    start: Vec<f64>,
) -> Result<AttackResult> {
    cfg.validate()?;
    let bound = params.bind(false)?;
    let n = images.shape[0];
    let d: usize = images.shape[1..].iter().product();
    // Targeted mode descends the loss toward the target class.
    let (grad_labels, direction) = match cfg.targeted {
        Some(t) => (vec![t; n], -1.0),
        None => (labels.to_vec(), 1.0),
    };
    let mut current = start;
    let mut velocity = vec![0.0; current.len()];
    for _ in 0..steps {
        if step_size == 0.0 {
            break;
        }
        let grad = input_gradient(spec, &bound, &images.shape, &current, &grad_labels, &cfg.loss)?;
        let step_dir: &[f64] = match momentum {
            Some(mu) => {
                for i in 0..n {
                    let row = &grad[i * d..(i + 1) * d];
                    let l1: f64 = row.iter().map(|v| v.abs()).sum();
                    let v_row = &mut velocity[i * d..(i + 1) * d];
                    if l1 < 1e-20 {
                        // No direction information at a stationary point:
                        // the normalized term is zero, momentum decays.
                        for v in v_row.iter_mut() {
                            *v *= mu;
                        }
                    } else {
                        for (v, g) in v_row.iter_mut().zip(row) {
                            *v = mu * *v + g / l1;
                        }
                    }
                }
                &velocity
            }
            None => &grad,
        };
        for ((c, &g), &orig) in current.iter_mut().zip(step_dir).zip(&images.data) {
            let moved = *c + direction * step_size * sign(g);
            *c = moved
                .clamp(orig - cfg.epsilon, orig + cfg.epsilon)
                .clamp(0.0, 1.0);
        }
    }
    finish(spec, params, images, labels, cfg.targeted, current)
}

/// Predictions, success flags, and distortions for a finished batch.
fn finish(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    targeted: Option<usize>,
    adversarial: Vec<f64>,
) -> Result<AttackResult> {
    let adv = RawTensor::new(images.shape.clone(), adversarial)?;
    let predictions = models::predict(spec, params, &adv)?;
    let d: usize = images.shape[1..].iter().product();
    let n = images.shape[0];
    let mut linf = Vec::with_capacity(n);
    let mut l2 = Vec::with_capacity(n);
    for i in 0..n {
        let a = &adv.data[i * d..(i + 1) * d];
        let o = &images.data[i * d..(i + 1) * d];
        let mut worst: f64 = 0.0;
        let mut sq = 0.0;
        for (av, ov) in a.iter().zip(o) {
            let diff = av - ov;
            worst = worst.max(diff.abs());
            sq += diff * diff;
        }
        linf.push(worst);
        l2.push(sq.sqrt());
    }
    let success = predictions
        .iter()
        .zip(labels)
        .map(|(p, l)| match targeted {
            Some(t) => *p == t,
            None => p != l,
        })
        .collect();
    Ok(AttackResult {
        adversarial: adv,
        predictions,
        success,
        linf,
        l2,
    })
}

/// One signed gradient step of size epsilon.
pub fn fgsm(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    sign_attack(
        spec,
        params,
        images,
        labels,
        cfg,
        1,
        cfg.epsilon,
        None,
        images.data.clone(),
    )
}

/// `r` signed steps of size `epsilon / r`, clipped into the ball after
/// every step.
pub fn bim(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    sign_attack(
        spec,
        params,
        images,
        labels,
        cfg,
        cfg.iterations,
        cfg.epsilon / cfg.iterations as f64,
        None,
        images.data.clone(),
    )
}

/// BIM from a uniformly random point inside the epsilon ball;
/// deterministic given the config seed.
pub fn pgd(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(cfg.seed, "pgd-start", &[]));
    let start: Vec<f64> = images
        .data
        .iter()
        .map(|&x| {
            let jitter = if cfg.epsilon > 0.0 {
                rng.random_range(-cfg.epsilon..=cfg.epsilon)
            } else {
                0.0
            };
            (x + jitter).clamp(0.0, 1.0)
        })
        .collect();
    sign_attack(
        spec,
        params,
        images,
        labels,
        cfg,
        cfg.iterations,
        cfg.epsilon / cfg.iterations as f64,
        None,
        start,
    )
}

/// Momentum-accumulated signed steps: the gradient is L1-normalized per
/// sample before entering the velocity.
pub fn mim(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    sign_attack(
        spec,
        params,
        images,
        labels,
        cfg,
        cfg.iterations,
        cfg.epsilon / cfg.iterations as f64,
        Some(cfg.decay),
        images.data.clone(),
    )
}

/// PGD perturbation only: the adversarial pixels, without predictions or
/// distortion bookkeeping. This is the inner maximization of adversarial
/// training, always driven by cross-entropy.
pub fn pgd_perturb(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    epsilon: f64,
    iterations: usize,
    seed: u64,
) -> Result<RawTensor> {
    if epsilon < 0.0 {
        return Err(Error::InvalidArgument("epsilon must be >= 0".into()));
    }
    if epsilon == 0.0 {
        return Ok(images.clone());
    }
    let bound = params.bind(false)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seeding::derive(seed, "pgd-start", &[]));
    let mut current: Vec<f64> = images
        .data
        .iter()
        .map(|&x| (x + rng.random_range(-epsilon..=epsilon)).clamp(0.0, 1.0))
        .collect();
    let step = epsilon / iterations.max(1) as f64;
    for _ in 0..iterations {
        let grad = input_gradient(
            spec,
            &bound,
            &images.shape,
            &current,
            labels,
            &AttackLoss::Xe,
        )?;
        for ((c, &g), &orig) in current.iter_mut().zip(&grad).zip(&images.data) {
            *c = (*c + step * sign(g))
                .clamp(orig - epsilon, orig + epsilon)
                .clamp(0.0, 1.0);
        }
    }
    RawTensor::new(images.shape.clone(), current)
}

/// Dispatches on `cfg.kind`.
pub fn run(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    match cfg.kind {
        AttackKind::Fgsm => fgsm(spec, params, images, labels, cfg),
        AttackKind::Bim => bim(spec, params, images, labels, cfg),
        AttackKind::Pgd => pgd(spec, params, images, labels, cfg),
        AttackKind::Mim => mim(spec, params, images, labels, cfg),
        AttackKind::Jsma => jsma(spec, params, images, labels, cfg),
        AttackKind::Cw => cw(spec, params, images, labels, cfg),
    }
}

/// Attack summary over a dataset, evaluated in memory-bounded chunks.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSummary {
    pub accuracy_pct: f64,
    pub success_rate_pct: f64,
    pub mean_l2: f64,
    pub mean_linf: f64,
    pub samples: usize,
}

pub fn evaluate_attack(
    spec: &ModelSpec,
    params: &ParamSet,
    dataset: &Dataset,
    cfg: &AttackConfig,
    chunk: usize,
) -> Result<AttackSummary> {
    let n = dataset.len();
    let mut correct = 0usize;
    let mut succeeded = 0usize;
    let mut l2_sum = 0.0;
    let mut linf_sum = 0.0;
    let mut start = 0;
    let mut piece = 0u64;
    while start < n {
        let stop = (start + chunk.max(1)).min(n);
        let indices: Vec<usize> = (start..stop).collect();
        let (images, labels) = dataset.gather(&indices);
        // Decorrelate per-chunk randomness while keeping the whole
        // evaluation a function of the configured seed.
        let mut chunk_cfg = cfg.clone();
        chunk_cfg.seed = seeding::derive(cfg.seed, "eval-chunk", &[piece]);
        let result = run(spec, params, &images, &labels, &chunk_cfg)?;
        correct += result
            .predictions
            .iter()
            .zip(&labels)
            .filter(|(p, l)| p == l)
            .count();
        succeeded += result.success.iter().filter(|&&s| s).count();
        l2_sum += result.l2.iter().sum::<f64>();
        linf_sum += result.linf.iter().sum::<f64>();
        start = stop;
        piece += 1;
    }
    Ok(AttackSummary {
        accuracy_pct: 100.0 * correct as f64 / n.max(1) as f64,
        success_rate_pct: 100.0 * succeeded as f64 / n.max(1) as f64,
        mean_l2: l2_sum / n.max(1) as f64,
        mean_linf: linf_sum / n.max(1) as f64,
        samples: n,
    })
}

/// Clean (no attack) accuracy of a model over a dataset, in percent.
pub fn clean_accuracy(spec: &ModelSpec, params: &ParamSet, dataset: &Dataset) -> Result<f64> {
    let predictions = models::predict(spec, params, &dataset.images)?;
    let correct = predictions
        .iter()
        .zip(&dataset.labels)
        .filter(|(p, l)| p == l)
        .count();
    Ok(100.0 * correct as f64 / dataset.len().max(1) as f64)
}
