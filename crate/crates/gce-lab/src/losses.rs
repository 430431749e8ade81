//! Training objectives over predicted class probabilities.
//!
//! Four losses share one convention: the returned scalar is minimized by
//! a model that puts all probability on the ground-truth class while
//! spreading the leftover mass evenly over the incorrect classes.
//!
//! * [`cross_entropy`] — the plain `-(1/N) sum log p_g` baseline.
//! * [`complement_entropy`] — `-(1/N) sum H_i`, where `H_i` is the
//!   Shannon entropy of the *complement distribution*, the renormalized
//!   probabilities of the incorrect classes. Minimizing it flattens the
//!   complement distribution but is indifferent to the ground-truth
//!   probability itself.
//! * [`guided_complement_entropy`] — complement entropy modulated by the
//!   guiding factor `p_g^alpha`, so flattening only earns its reward as
//!   ground-truth confidence rises. The normalized variant divides the
//!   entropy by `log(K-1)`, pinning the range to `[-1, 0]` regardless of
//!   the class count.
//!
//! All probabilities are clamped to `[prob_floor, 1]` before logs, and a
//! sample whose ground-truth probability reaches `1 - prob_floor` (so its
//! complement mass is numerically gone) contributes the flat-complement
//! limit instead of a 0/0 artifact. `0 * log 0` follows the usual entropy
//! convention and contributes zero.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Default clamp floor for probabilities entering a log or a division.
pub const DEFAULT_PROB_FLOOR: f64 = 1e-12;

/// A batch of predicted probability rows with ground-truth labels.
pub struct BatchPrediction<'a> {
    probs: Tensor,
    labels: &'a [usize],
    classes: usize,
}

impl<'a> BatchPrediction<'a> {
    /// Validates that `probs` is `[n,k]` with `k >= 2`, rows summing to 1
    /// within 1e-9, one valid label per row, and a non-empty batch.
    pub fn new(probs: Tensor, labels: &'a [usize]) -> Result<Self> {
        let [n, k] = *probs.shape() else {
            return Err(Error::BadShape {
                op: "batch_prediction",
                shape: probs.shape().to_vec(),
                expected: "rank-2 [batch, classes]".into(),
            });
        };
        if n == 0 {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        if k < 2 {
            return Err(Error::InvalidArgument(
                "at least 2 classes required; the complement distribution is undefined for K = 1"
                    .into(),
            ));
        }
        if labels.len() != n {
            return Err(Error::InvalidArgument(format!(
                "{} labels for batch of {n}",
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&g| g >= k) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} out of range for {k} classes"
            )));
        }
        for (i, row) in probs.data().chunks_exact(k).enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidArgument(format!(
                    "probability row {i} sums to {sum}, not 1"
                )));
            }
        }
        Ok(BatchPrediction {
            probs,
            labels,
            classes: k,
        })
    }

    pub fn probs(&self) -> &Tensor {
        &self.probs
    }

    pub fn labels(&self) -> &[usize] {
        self.labels
    }

    pub fn batch_size(&self) -> usize {
        self.labels.len()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }
}

/// Configuration for the guided complement entropy family.
#[derive(Debug, Clone, PartialEq)]
pub struct GceConfig {
    /// Exponent of the guiding factor `p_g^alpha`, in `(0, 1]`.
    pub alpha: f64,
    /// Divide the complement entropy by `log(K-1)` (range `[-1, 0]`).
    pub normalized: bool,
    /// Clamp floor applied before logs and divisions, in `(0, 1e-6]`.
    pub prob_floor: f64,
    /// Return the sign-flipped value exactly as the formula typesets it
    /// (largest at the optimum); useful only for auditing. The default
    /// behavioral convention is the one worth minimizing.
    pub literal_typeset: bool,
}

impl GceConfig {
    pub fn new(alpha: f64, normalized: bool) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1], got {alpha}"
            )));
        }
        Ok(GceConfig {
            alpha,
            normalized,
            prob_floor: DEFAULT_PROB_FLOOR,
            literal_typeset: false,
        })
    }

    pub fn with_prob_floor(mut self, floor: f64) -> Result<Self> {
        if !(floor > 0.0 && floor <= 1e-6) {
            return Err(Error::InvalidArgument(format!(
                "prob_floor must be in (0, 1e-6], got {floor}"
            )));
        }
        self.prob_floor = floor;
        Ok(self)
    }
}

impl Default for GceConfig {
    /// `alpha = 1/3`, normalized: the configuration used throughout the
    /// robustness experiments.
    fn default() -> Self {
        GceConfig {
            alpha: 1.0 / 3.0,
            normalized: true,
            prob_floor: DEFAULT_PROB_FLOOR,
            literal_typeset: false,
        }
    }
}

/// `-(1/N) sum_i log p_{i,g}`, clamped below by `prob_floor`.
pub fn cross_entropy(batch: &BatchPrediction) -> Result<Tensor> {
    let picked = batch.probs().gather(batch.labels())?;
    picked
        .clamp(DEFAULT_PROB_FLOOR, 1.0)?
        .log()?
        .mean()?
        .neg()
}

/// Per-sample complement entropy `H_i` (an `[n]` tensor, each in
/// `[0, log(K-1)]`), plus the per-sample collapse mask and the gathered
/// ground-truth probabilities.
///
/// A sample is *collapsed* when `1 - p_g <= floor`: its complement mass
/// is numerically zero and the caller substitutes the flat-complement
/// limit for `H_i`.
fn complement_entropy_terms(
    batch: &BatchPrediction,
    floor: f64,
) -> Result<(Tensor, Vec<bool>, Tensor)> {
    let probs = batch.probs();
    let picked = probs.gather(batch.labels())?;
    let leftover = picked.neg()?.add_scalar(1.0)?;
    let collapsed: Vec<bool> = leftover.data().iter().map(|&v| v <= floor).collect();
    let denom = leftover.clamp(floor, 1.0)?;
    let complement = probs.div_column(&denom)?;
    let logs = complement.clamp(floor, 1.0)?.log()?;
    let entropy_terms = complement.mul(&logs)?.mask_index(batch.labels())?;
    let h = entropy_terms.row_sum()?.neg()?;
    Ok((h, collapsed, picked))
}

fn substitute_collapsed(h: Tensor, collapsed: &[bool], limit: f64) -> Result<Tensor> {
    if collapsed.iter().any(|&c| c) {
        let n = collapsed.len();
        let limits = Tensor::constant(vec![n], vec![limit; n])?;
        Tensor::where_mask(collapsed, &limits, &h)
    } else {
        Ok(h)
    }
}

/// `-(1/N) sum_i H_i`: most negative (`-log(K-1)`) when every complement
/// distribution is flat, zero when each one is a point mass.
pub fn complement_entropy(batch: &BatchPrediction) -> Result<Tensor> {
    let floor = DEFAULT_PROB_FLOOR;
    let (h, collapsed, _) = complement_entropy_terms(batch, floor)?;
    let flat_limit = ((batch.classes() - 1) as f64).ln();
    let h = substitute_collapsed(h, &collapsed, flat_limit)?;
    h.mean()?.neg()
}

/// `-(1/N) sum_i p_{i,g}^alpha * H_i`, optionally with `H_i` normalized
/// by `log(K-1)` so the result lies in `[-1, 0]`.
pub fn guided_complement_entropy(batch: &BatchPrediction, cfg: &GceConfig) -> Result<Tensor> {
    let k = batch.classes();
    if cfg.normalized && k == 2 {
        return Err(Error::InvalidArgument(
            "normalized guided complement entropy is undefined for K = 2 \
             (log(K-1) = 0); use the unnormalized form"
                .into(),
        ));
    }
    let (h, collapsed, picked) = complement_entropy_terms(batch, cfg.prob_floor)?;
    let log_km1 = ((k - 1) as f64).ln();
    let (h_term, flat_limit) = if cfg.normalized {
        (h.scale(1.0 / log_km1)?, 1.0)
    } else {
        (h, log_km1)
    };
    let h_term = substitute_collapsed(h_term, &collapsed, flat_limit)?;
    let guide = picked.clamp(cfg.prob_floor, 1.0)?.pow_scalar(cfg.alpha)?;
    let loss = guide.mul(&h_term)?.mean()?.neg()?;
    if cfg.literal_typeset {
        loss.neg()
    } else {
        Ok(loss)
    }
}
