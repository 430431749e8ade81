//! Jacobian-based saliency map attack.
//!
//! Each iteration computes the full Jacobian of the logits w.r.t. the
//! input pixels, scores pixel pairs (or single pixels) by how strongly
//! they push the prediction toward the target class while pulling the
//! other classes down, and saturates the winners toward 1.0. The number
//! of distinct pixels touched per sample is capped by `gamma * d`.

use super::{finish, AttackConfig, AttackResult};
use crate::error::Result;
use crate::models::{self, BoundParams, ModelSpec, ParamSet};
use crate::tensor::{RawTensor, Tensor};

const SATURATED: f64 = 1.0 - 1e-12;

/// Jacobian of the logits w.r.t. one sample's pixels, `[k][d]` row-major.
fn jacobian(
    spec: &ModelSpec,
    bound: &BoundParams,
    shape: &[usize],
    pixels: &[f64],
    classes: usize,
) -> Result<Vec<f64>> {
    let d = pixels.len();
    let mut rows = Vec::with_capacity(classes * d);
    for class in 0..classes {
        let x = Tensor::leaf(shape.to_vec(), pixels.to_vec())?;
        let logits = models::forward(spec, bound, &x)?;
        let z = logits.gather(&[class])?;
        z.backward()?;
        rows.extend(x.grad().unwrap_or_else(|| vec![0.0; d]));
    }
    Ok(rows)
}

struct Saliency {
    /// d(Z_target)/d(x_p)
    alpha: Vec<f64>,
    /// sum over other classes of d(Z_j)/d(x_p)
    beta: Vec<f64>,
}

fn saliency(jac: &[f64], d: usize, classes: usize, target: usize) -> Saliency {
    let mut alpha = vec![0.0; d];
    let mut beta = vec![0.0; d];
    for class in 0..classes {
        let row = &jac[class * d..(class + 1) * d];
        if class == target {
            alpha.copy_from_slice(row);
        } else {
            for (b, v) in beta.iter_mut().zip(row) {
                *b += v;
            }
        }
    }
    Saliency { alpha, beta }
}

/// Best admissible pixel pair by the saliency criterion
/// `-(alpha_p + alpha_q)(beta_p + beta_q)` with `alpha > 0, beta < 0`.
fn best_pair(s: &Saliency, admissible: &[usize]) -> Option<(usize, usize)> {
    let mut best = None;
    let mut best_score = 0.0;
    for (i, &p) in admissible.iter().enumerate() {
        for &q in &admissible[i + 1..] {
            let a = s.alpha[p] + s.alpha[q];
            let b = s.beta[p] + s.beta[q];
            if a > 0.0 && b < 0.0 {
                let score = -a * b;
                if score > best_score {
                    best_score = score;
                    best = Some((p, q));
                }
            }
        }
    }
    best
}

fn best_single(s: &Saliency, admissible: &[usize]) -> Option<usize> {
    let mut best = None;
    let mut best_score = 0.0;
    for &p in admissible {
        if s.alpha[p] > 0.0 && s.beta[p] < 0.0 {
            let score = -s.alpha[p] * s.beta[p];
            if score > best_score {
                best_score = score;
                best = Some(p);
            }
        }
    }
    best
}

fn predict_one(
    spec: &ModelSpec,
    bound: &BoundParams,
    shape: &[usize],
    pixels: &[f64],
) -> Result<usize> {
    let x = Tensor::constant(shape.to_vec(), pixels.to_vec())?;
    let logits = models::forward(spec, bound, &x)?;
    Ok(models::argmax_rows(&logits.to_raw())[0])
}

pub fn jsma(
    spec: &ModelSpec,
    params: &ParamSet,
    images: &RawTensor,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    cfg.validate()?;
    let bound = params.bind(false)?;
    let n = images.shape[0];
    let d: usize = images.shape[1..].iter().product();
    let classes = spec.classes;
    let single_shape: Vec<usize> = std::iter::once(1)
        .chain(images.shape[1..].iter().copied())
        .collect();
    let budget = ((cfg.gamma * d as f64).floor() as usize).min(d);
    let per_iteration = if cfg.jsma_pixel_pairs { 2 } else { 1 };

    let mut adversarial = images.data.clone();
    for i in 0..n {
        let pixels = &mut adversarial[i * d..(i + 1) * d];
        let target = match cfg.targeted {
            Some(t) => t,
            None => {
                // Untargeted reduction: aim at the runner-up class of the
                // clean prediction (the most probable incorrect class).
                let x = Tensor::constant(single_shape.clone(), pixels.to_vec())?;
                let logits = models::forward(spec, &bound, &x)?;
                runner_up(logits.data(), labels[i])
            }
        };
        let done = |pred: usize| match cfg.targeted {
            Some(t) => pred == t,
            None => pred != labels[i],
        };
        let mut modified = vec![false; d];
        let mut modified_count = 0usize;
        let mut pred = predict_one(spec, &bound, &single_shape, pixels)?;
        while !done(pred) {
            let admissible: Vec<usize> =
                (0..d).filter(|&p| pixels[p] < SATURATED).collect();
            if admissible.len() < per_iteration {
                break;
            }
            let jac = jacobian(spec, &bound, &single_shape, pixels, classes)?;
            let sal = saliency(&jac, d, classes, target);
            let chosen: Vec<usize> = if cfg.jsma_pixel_pairs {
                match best_pair(&sal, &admissible) {
                    Some((p, q)) => vec![p, q],
                    None => break,
                }
            } else {
                match best_single(&sal, &admissible) {
                    Some(p) => vec![p],
                    None => break,
                }
            };
            let newly = chosen.iter().filter(|&&p| !modified[p]).count();
            if modified_count + newly > budget {
                break;
            }
            for &p in &chosen {
                pixels[p] = (pixels[p] + cfg.epsilon).min(1.0);
                if !modified[p] {
                    modified[p] = true;
                    modified_count += 1;
                }
            }
            pred = predict_one(spec, &bound, &single_shape, pixels)?;
        }
    }
    finish(spec, params, images, labels, cfg.targeted, adversarial)
}

fn runner_up(logits: &[f64], label: usize) -> usize {
    let mut best = None;
    for (j, &z) in logits.iter().enumerate() {
        if j == label {
            continue;
        }
        match best {
            Some((_, bz)) if bz >= z => {}
            _ => best = Some((j, z)),
        }
    }
    best.map(|(j, _)| j).unwrap_or(label)
}
