//! Optimizers, learning-rate schedules, and the three training loops:
//! natural, alternating (cross-entropy / complement-entropy), and PGD
//! min-max adversarial training with a pluggable outer loss.
//!
//! Every loop is bitwise reproducible: shuffles, initialization, and the
//! inner attack's random starts all derive from the config seed.

use crate::attacks;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{self, BatchPrediction, GceConfig};
use crate::models::{self, ModelSpec, ParamSet};
use crate::seeding;
use crate::tensor::Tensor;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    Xe,
    Gce,
    Cot,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Xe => "xe",
            LossKind::Gce => "gce",
            LossKind::Cot => "cot",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "xe" => Ok(LossKind::Xe),
            "gce" => Ok(LossKind::Gce),
            "cot" => Ok(LossKind::Cot),
            other => Err(Error::InvalidArgument(format!("unknown loss kind {other}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl OptimizerConfig {
    pub fn sgd_momentum(momentum: f64, weight_decay: f64) -> Self {
        OptimizerConfig {
            kind: OptimizerKind::SgdMomentum,
            momentum,
            weight_decay,
            beta1: 0.0,
            beta2: 0.0,
            epsilon: 0.0,
        }
    }

    pub fn adam() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            momentum: 0.0,
            weight_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Step schedule: `initial * decay_factor^(number of decay epochs passed)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub decay_factor: f64,
    pub decay_epochs: Vec<usize>,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            decay_factor: 1.0,
            decay_epochs: Vec::new(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = self.decay_epochs.iter().filter(|&&e| epoch >= e).count();
        self.initial * self.decay_factor.powi(drops as i32)
    }
}

/// Inner-attack section for adversarial training.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSection {
    pub enabled: bool,
    pub epsilon: f64,
    pub iterations: usize,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        AdversarialSection {
            enabled: false,
            epsilon: 0.3,
            iterations: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss: LossKind,
    pub gce: GceConfig,
    /// COT only: divide the complement objective by `log(K-1)`.
    pub cot_normalize_complement: bool,
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub adversarial: AdversarialSection,
}

impl TrainConfig {
    /// The desk-scale MNIST recipe: Adam at 1e-3, 10 epochs, batch 128.
    pub fn mnist_default(loss: LossKind) -> Self {
        TrainConfig {
            loss,
            gce: GceConfig::default(),
            cot_normalize_complement: false,
            optimizer: OptimizerConfig::adam(),
            epochs: 10,
            batch_size: 128,
            schedule: LrSchedule::constant(1e-3),
            seed: 42,
            adversarial: AdversarialSection::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::InvalidArgument("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if self.schedule.initial <= 0.0 {
            return Err(Error::InvalidArgument("learning rate must be > 0".into()));
        }
        if self.adversarial.enabled {
            if self.adversarial.epsilon < 0.0 {
                return Err(Error::InvalidArgument("attack epsilon must be >= 0".into()));
            }
            if self.adversarial.iterations < 1 {
                return Err(Error::InvalidArgument(
                    "attack iterations must be >= 1".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub test_error_pct: f64,
    pub lr: f64,
    pub seconds: f64,
    /// Mean predicted probability of the true class over the training
    /// batches, as seen during the epoch.
    pub mean_true_prob: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainLog {
    pub epochs: Vec<EpochStat>,
    /// One tag per optimizer step: 'x' cross-entropy, 'c' complement,
    /// 'g' guided complement, 'a' adversarial outer step.
    pub step_tags: Vec<char>,
}

impl TrainLog {
    pub fn loss_sequence(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.train_loss).collect()
    }

    /// CSV with header `epoch,train_loss,test_error,lr,seconds`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,test_error,lr,seconds\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:.12},{:.4},{},{:.3}\n",
                e.epoch, e.train_loss, e.test_error_pct, e.lr, e.seconds
            ));
        }
        out
    }
}

/// Optimizer state, aligned with the parameter set's entry order.
pub enum OptState {
    SgdMomentum { velocity: Vec<Vec<f64>> },
    Adam { m: Vec<Vec<f64>>, v: Vec<Vec<f64>>, t: u64 },
}

impl OptState {
    pub fn new(kind: OptimizerKind, params: &ParamSet) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .entries()
            .iter()
            .map(|(_, raw)| vec![0.0; raw.numel()])
            .collect();
        match kind {
            OptimizerKind::SgdMomentum => OptState::SgdMomentum { velocity: zeros },
            OptimizerKind::Adam => OptState::Adam {
                m: zeros.clone(),
                v: zeros,
                t: 0,
            },
        }
    }
}

fn check_grads(params: &ParamSet, grads: &[(String, Vec<f64>)]) -> Result<()> {
    if grads.len() != params.entries().len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.entries().len()
        )));
    }
    for ((name, raw), (gname, grad)) in params.entries().iter().zip(grads) {
        if name != gname || raw.numel() != grad.len() {
            return Err(Error::InvalidArgument(format!(
                "gradient {gname} does not match parameter {name}"
            )));
        }
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(Error::Diverged(format!(
                "non-finite gradient in parameter {name}"
            )));
        }
    }
    Ok(())
}

/// Classic momentum update: `v = momentum*v + (g + wd*w); w -= lr*v`.
pub fn sgd_momentum_step(
    params: &mut ParamSet,
    grads: &[(String, Vec<f64>)],
    velocity: &mut [Vec<f64>],
    hyper: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    for (slot, ((_, raw), (_, grad))) in params.entries_mut().iter_mut().zip(grads).enumerate() {
        let vel = &mut velocity[slot];
        for ((w, &g), v) in raw.data.iter_mut().zip(grad).zip(vel.iter_mut()) {
            let g = g + hyper.weight_decay * *w;
            *v = hyper.momentum * *v + g;
            *w -= lr * *v;
        }
    }
    Ok(())
}

/// Adam with bias correction; weight decay enters as an L2 gradient term.
#[allow(clippy::too_many_arguments)]
pub fn adam_step(
    params: &mut ParamSet,
    grads: &[(String, Vec<f64>)],
    m: &mut [Vec<f64>],
    v: &mut [Vec<f64>],
    t: &mut u64,
    hyper: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    check_grads(params, grads)?;
    *t += 1;
    let bias1 = 1.0 - hyper.beta1.powi(*t as i32);
    let bias2 = 1.0 - hyper.beta2.powi(*t as i32);
    for (slot, ((_, raw), (_, grad))) in params.entries_mut().iter_mut().zip(grads).enumerate() {
        let (ms, vs) = (&mut m[slot], &mut v[slot]);
        for (((w, &g), mi), vi) in raw
            .data
            .iter_mut()
            .zip(grad)
            .zip(ms.iter_mut())
            .zip(vs.iter_mut())
        {
            let g = g + hyper.weight_decay * *w;
            *mi = hyper.beta1 * *mi + (1.0 - hyper.beta1) * g;
            *vi = hyper.beta2 * *vi + (1.0 - hyper.beta2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *w -= lr * m_hat / (v_hat.sqrt() + hyper.epsilon);
        }
    }
    Ok(())
}

pub fn optimizer_step(
    params: &mut ParamSet,
    grads: &[(String, Vec<f64>)],
    state: &mut OptState,
    hyper: &OptimizerConfig,
    lr: f64,
) -> Result<()> {
    match state {
        OptState::SgdMomentum { velocity } => sgd_momentum_step(params, grads, velocity, hyper, lr),
        OptState::Adam { m, v, t } => adam_step(params, grads, m, v, t, hyper, lr),
    }
}

/// Which scalar to minimize on one batch.
enum StepLoss<'a> {
    Xe,
    Gce(&'a GceConfig),
    Complement { normalize: bool },
}

impl StepLoss<'_> {
    fn tag(&self) -> char {
        match self {
            StepLoss::Xe => 'x',
            StepLoss::Gce(_) => 'g',
            StepLoss::Complement { .. } => 'c',
        }
    }
}

struct StepOutcome {
    loss: f64,
    mean_true_prob: f64,
}

#[allow(clippy::too_many_arguments)]
fn train_step(
    spec: &ModelSpec,
    params: &mut ParamSet,
    state: &mut OptState,
    cfg: &TrainConfig,
    lr: f64,
    images: &crate::tensor::RawTensor,
    labels: &[usize],
    loss: &StepLoss,
) -> Result<StepOutcome> {
    let bound = params.bind(true)?;
    let x = Tensor::constant(images.shape.clone(), images.data.clone())?;
    let logits = models::forward(spec, &bound, &x)?;
    let probs = logits.softmax()?;
    let mean_true_prob = {
        let k = spec.classes;
        let data = probs.data();
        labels
            .iter()
            .enumerate()
            .map(|(i, &g)| data[i * k + g])
            .sum::<f64>()
            / labels.len() as f64
    };
    let batch = BatchPrediction::new(probs, labels)?;
    let scalar = match loss {
        StepLoss::Xe => losses::cross_entropy(&batch)?,
        StepLoss::Gce(gce) => losses::guided_complement_entropy(&batch, gce)?,
        StepLoss::Complement { normalize } => {
            let ce = losses::complement_entropy(&batch)?;
            if *normalize {
                ce.scale(1.0 / ((spec.classes - 1) as f64).ln())?
            } else {
                ce
            }
        }
    };
    let loss_value = scalar.item()?;
    scalar.backward()?;
    let grads = bound.grads()?;
    optimizer_step(params, &grads, state, &cfg.optimizer, lr)?;
    Ok(StepOutcome {
        loss: loss_value,
        mean_true_prob,
    })
}

fn test_error_pct(spec: &ModelSpec, params: &ParamSet, test: &Dataset) -> Result<f64> {
    Ok(100.0 - attacks::clean_accuracy(spec, params, test)?)
}

fn run_training<F>(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
    mut batch_loss: F,
) -> Result<(ParamSet, TrainLog)>
where
    F: FnMut(usize, usize) -> StepLossOwned,
{
    cfg.validate()?;
    let mut params = models::init(spec, cfg.seed)?;
    let mut state = OptState::new(cfg.optimizer.kind, &params);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let lr = cfg.schedule.lr_at(epoch);
        let batches = train.batches(cfg.batch_size, cfg.seed, epoch)?;
        let mut loss_sum = 0.0;
        let mut prob_sum = 0.0;
        let mut samples = 0usize;
        for (bi, indices) in batches.iter().enumerate() {
            let (mut images, labels) = train.gather(indices);
            let choice = batch_loss(epoch, bi);
            if cfg.adversarial.enabled {
                // Inner maximization: replace the batch by its PGD
                // counterpart crafted against the current parameters.
                images = attacks::pgd_perturb(
                    spec,
                    &params,
                    &images,
                    &labels,
                    cfg.adversarial.epsilon,
                    cfg.adversarial.iterations,
                    seeding::derive(cfg.seed, "adv-inner", &[epoch as u64, bi as u64]),
                )?;
            }
            let loss_ref = match &choice {
                StepLossOwned::Xe => StepLoss::Xe,
                StepLossOwned::Gce(g) => StepLoss::Gce(g),
                StepLossOwned::Complement { normalize } => StepLoss::Complement {
                    normalize: *normalize,
                },
            };
            let outcome = train_step(
                spec, &mut params, &mut state, cfg, lr, &images, &labels, &loss_ref,
            )
            .map_err(|e| match e {
                Error::NonFinite { op } => Error::Diverged(format!(
                    "epoch {epoch} batch {bi}: non-finite value in {op}"
                )),
                other => other,
            })?;
            let tag = if cfg.adversarial.enabled { 'a' } else { loss_ref.tag() };
            log.step_tags.push(tag);
            loss_sum += outcome.loss * labels.len() as f64;
            prob_sum += outcome.mean_true_prob * labels.len() as f64;
            samples += labels.len();
        }
        log.epochs.push(EpochStat {
            epoch,
            train_loss: loss_sum / samples as f64,
            test_error_pct: test_error_pct(spec, &params, test)?,
            lr,
            seconds: started.elapsed().as_secs_f64(),
            mean_true_prob: prob_sum / samples as f64,
        });
    }
    Ok((params, log))
}

enum StepLossOwned {
    Xe,
    Gce(GceConfig),
    Complement { normalize: bool },
}

/// Natural training with the configured loss (xe or gce).
pub fn train_natural(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainLog)> {
    let choice = match cfg.loss {
        LossKind::Xe => StepLossOwned::Xe,
        LossKind::Gce => StepLossOwned::Gce(cfg.gce.clone()),
        LossKind::Cot => {
            return Err(Error::InvalidArgument(
                "use train_cot for the alternating objective".into(),
            ))
        }
    };
    run_training(spec, train, test, cfg, move |_, _| match &choice {
        StepLossOwned::Xe => StepLossOwned::Xe,
        StepLossOwned::Gce(g) => StepLossOwned::Gce(g.clone()),
        StepLossOwned::Complement { normalize } => StepLossOwned::Complement {
            normalize: *normalize,
        },
    })
}

/// Alternating training: even-numbered batches take a cross-entropy
/// step, odd-numbered ones a complement-entropy step.
pub fn train_cot(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainLog)> {
    if spec.classes < 3 {
        return Err(Error::InvalidArgument(
            "complement step is degenerate for K = 2: the complement \
             distribution has a single class and zero entropy"
                .into(),
        ));
    }
    let normalize = cfg.cot_normalize_complement;
    run_training(spec, train, test, cfg, move |_, bi| {
        if bi % 2 == 0 {
            StepLossOwned::Xe
        } else {
            StepLossOwned::Complement { normalize }
        }
    })
}

/// PGD min-max adversarial training: the inner maximization crafts a
/// PGD batch against the current parameters with cross-entropy, the
/// outer minimization steps the configured loss on it.
pub fn train_adversarial_pgd(
    spec: &ModelSpec,
    train: &Dataset,
    test: &Dataset,
    cfg: &TrainConfig,
) -> Result<(ParamSet, TrainLog)> {
    if !cfg.adversarial.enabled {
        return Err(Error::InvalidArgument(
            "adversarial section must be enabled".into(),
        ));
    }
    let choice = match cfg.loss {
        LossKind::Xe => StepLossOwned::Xe,
        LossKind::Gce => StepLossOwned::Gce(cfg.gce.clone()),
        LossKind::Cot => {
            return Err(Error::InvalidArgument(
                "cot is not a supported outer loss for adversarial training".into(),
            ))
        }
    };
    run_training(spec, train, test, cfg, move |_, _| match &choice {
        StepLossOwned::Xe => StepLossOwned::Xe,
        StepLossOwned::Gce(g) => StepLossOwned::Gce(g.clone()),
        StepLossOwned::Complement { normalize } => StepLossOwned::Complement {
            normalize: *normalize,
        },
    })
}
