//! Shared helpers for the integration suites: finite-difference checks
//! over the whole op table, the term-by-term loss oracle, and dataset
//! location.
#![allow(dead_code)]

use gce_lab::losses::{self, BatchPrediction, GceConfig};
use gce_lab::tensor::{finite_difference_check, RawTensor, Tensor};
use gce_lab::Result;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::PathBuf;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Data root for MNIST-backed tests: `GCE_LAB_DATA` or `<workspace>/data`.
pub fn data_root() -> PathBuf {
    std::env::var_os("GCE_LAB_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| {
            PathBuf::from(env!("CARGO_MANIFEST_DIR"))
                .join("..")
                .join("..")
                .join("data")
        })
}

/// Uniform values resampled until all pairwise gaps exceed `min_gap`
/// (keeps argmax-style ops away from ties under FD perturbation).
pub fn distinct_uniform(
    rng: &mut ChaCha8Rng,
    n: usize,
    lo: f64,
    hi: f64,
    min_gap: f64,
) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(lo..hi)).collect();
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if sorted.windows(2).all(|w| w[1] - w[0] > min_gap) {
            return v;
        }
    }
}

pub fn signed_away_from_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let mag = rng.random_range(0.1..2.0);
            if rng.random_bool(0.5) {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// Worst relative FD error over `trials` seeded random inputs.
pub fn max_fd_error<F>(
    name: &str,
    shape: Vec<usize>,
    mut data_gen: impl FnMut(&mut ChaCha8Rng) -> Vec<f64>,
    f: F,
    trials: usize,
) -> f64
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let mut worst: f64 = 0.0;
    for trial in 0..trials {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5EED + trial as u64);
        let x = RawTensor::new(shape.clone(), data_gen(&mut rng)).unwrap();
        let err = finite_difference_check(&f, &x, FD_STEP)
            .unwrap_or_else(|e| panic!("{name} trial {trial}: {e}"));
        worst = worst.max(err);
    }
    worst
}

/// Runs the FD check over every registered op, returning `(name, worst
/// relative error)` pairs.
pub fn gradient_check_all_ops(trials: usize) -> Vec<(&'static str, f64)> {
    let mut results: Vec<(&'static str, f64)> = Vec::new();
    let mut push = |name: &'static str, err: f64| results.push((name, err));

    let uni = |lo: f64, hi: f64, n: usize| {
        move |rng: &mut ChaCha8Rng| (0..n).map(|_| rng.random_range(lo..hi)).collect::<Vec<f64>>()
    };

    let other = Tensor::constant(vec![3, 4], (0..12).map(|i| 0.3 + i as f64 * 0.17).collect()).unwrap();
    push("add", max_fd_error("add", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.add(&other)?.sum(), trials));
    push("sub", max_fd_error("sub", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.sub(&other)?.sum(), trials));
    push("mul", max_fd_error("mul", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.mul(&other)?.sum(), trials));
    push("mul_rhs", max_fd_error("mul_rhs", vec![3, 4], uni(-2.0, 2.0, 12), |t| other.mul(t)?.sum(), trials));
    push("neg", max_fd_error("neg", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.neg()?.sum(), trials));
    push("scale", max_fd_error("scale", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.scale(-1.7)?.sum(), trials));
    push("add_scalar", max_fd_error("add_scalar", vec![3, 4], uni(-2.0, 2.0, 12), |t| t.add_scalar(0.9)?.mean(), trials));

    let rhs = Tensor::constant(vec![4, 2], (0..8).map(|i| (i as f64 - 3.0) * 0.25).collect()).unwrap();
    push("matmul_lhs", max_fd_error("matmul_lhs", vec![3, 4], uni(-1.5, 1.5, 12), |t| t.matmul(&rhs)?.sum(), trials));
    let lhs = Tensor::constant(vec![2, 3], (0..6).map(|i| (i as f64) * 0.3 - 0.7).collect()).unwrap();
    push("matmul_rhs", max_fd_error("matmul_rhs", vec![3, 4], uni(-1.5, 1.5, 12), |t| lhs.matmul(t)?.sum(), trials));
    push("transpose", max_fd_error("transpose", vec![3, 4], uni(-1.5, 1.5, 12), |t| t.transpose()?.mean(), trials));

    let bias4 = Tensor::constant(vec![4], vec![0.1, -0.2, 0.3, -0.4]).unwrap();
    push("add_row_bias_input", max_fd_error("add_row_bias_input", vec![2, 4], uni(-1.0, 1.0, 8), |t| t.add_row_bias(&bias4)?.sum(), trials));
    let mat = Tensor::constant(vec![2, 4], (0..8).map(|i| i as f64 * 0.1).collect()).unwrap();
    push("add_row_bias_bias", max_fd_error("add_row_bias_bias", vec![4], uni(-1.0, 1.0, 4), |t| mat.add_row_bias(t)?.sum(), trials));
    let bias3 = Tensor::constant(vec![3], vec![0.5, -0.1, 0.2]).unwrap();
    push("add_channel_bias_input", max_fd_error("add_channel_bias_input", vec![2, 3, 2, 2], uni(-1.0, 1.0, 24), |t| t.add_channel_bias(&bias3)?.sum(), trials));
    let img = Tensor::constant(vec![2, 3, 2, 2], (0..24).map(|i| i as f64 * 0.05).collect()).unwrap();
    push("add_channel_bias_bias", max_fd_error("add_channel_bias_bias", vec![3], uni(-1.0, 1.0, 3), |t| img.add_channel_bias(t)?.sum(), trials));

    let kernel = Tensor::constant(vec![2, 2, 3, 3], (0..36).map(|i| ((i * 7 % 11) as f64 - 5.0) * 0.1).collect()).unwrap();
    push("conv2d_input_s1p1", max_fd_error("conv2d_input_s1p1", vec![1, 2, 5, 5], uni(-1.0, 1.0, 50), |t| t.conv2d(&kernel, 1, 1)?.sum(), trials));
    push("conv2d_input_s2p0", max_fd_error("conv2d_input_s2p0", vec![1, 2, 5, 5], uni(-1.0, 1.0, 50), |t| t.conv2d(&kernel, 2, 0)?.sum(), trials));
    let input = Tensor::constant(vec![1, 2, 5, 5], (0..50).map(|i| ((i * 13 % 17) as f64 - 8.0) * 0.07).collect()).unwrap();
    push("conv2d_kernel_s1p1", max_fd_error("conv2d_kernel_s1p1", vec![2, 2, 3, 3], uni(-0.5, 0.5, 36), |t| input.conv2d(t, 1, 1)?.sum(), trials));
    push("conv2d_kernel_s2p2", max_fd_error("conv2d_kernel_s2p2", vec![2, 2, 3, 3], uni(-0.5, 0.5, 36), |t| input.conv2d(t, 2, 2)?.sum(), trials));

    push("maxpool2d", max_fd_error("maxpool2d", vec![1, 2, 4, 4], |rng| distinct_uniform(rng, 32, 0.0, 1.0, 1e-3), |t| t.maxpool2d(2)?.sum(), trials));

    push("relu", max_fd_error("relu", vec![2, 6], |rng| signed_away_from_zero(rng, 12), |t| t.relu()?.sum(), trials));
    push("tanh", max_fd_error("tanh", vec![2, 6], uni(-2.0, 2.0, 12), |t| t.tanh()?.sum(), trials));
    push("exp", max_fd_error("exp", vec![2, 6], uni(-3.0, 3.0, 12), |t| t.exp()?.mean(), trials));
    push("log", max_fd_error("log", vec![2, 6], uni(0.1, 2.0, 12), |t| t.log()?.sum(), trials));
    push("pow_scalar", max_fd_error("pow_scalar", vec![2, 6], uni(0.1, 2.0, 12), |t| t.pow_scalar(1.0 / 3.0)?.sum(), trials));
    push("clamp", max_fd_error("clamp", vec![2, 6], |rng| {
        (0..12)
            .map(|_| {
                let v: f64 = rng.random_range(0.0..1.0);
                if (v - 0.3).abs() < 1e-3 || (v - 0.7).abs() < 1e-3 { 0.5 } else { v }
            })
            .collect()
    }, |t| t.clamp(0.3, 0.7)?.sum(), trials));
    push("max_scalar", max_fd_error("max_scalar", vec![2, 6], |rng| signed_away_from_zero(rng, 12), |t| t.max_scalar(0.0)?.sum(), trials));

    push("sum", max_fd_error("sum", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.sum(), trials));
    push("mean", max_fd_error("mean", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.mean(), trials));
    let row_w = Tensor::constant(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
    push("row_sum", max_fd_error("row_sum", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.row_sum()?.mul(&row_w)?.sum(), trials));
    push("gather", max_fd_error("gather", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.gather(&[4, 0, 2])?.sum(), trials));
    push("mask_index", max_fd_error("mask_index", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.mask_index(&[1, 3, 0])?.sum(), trials));
    let reshape_w = Tensor::constant(vec![5, 3], (0..15).map(|i| i as f64 * 0.1 - 0.7).collect()).unwrap();
    push("reshape", max_fd_error("reshape", vec![3, 5], uni(-2.0, 2.0, 15), |t| t.reshape(vec![5, 3])?.mul(&reshape_w)?.sum(), trials));
    push("row_max_except", max_fd_error("row_max_except", vec![3, 5], |rng| distinct_uniform(rng, 15, -1.0, 1.0, 1e-3), |t| t.row_max_except(&[0, 2, 4])?.sum(), trials));

    let denom = Tensor::constant(vec![3], vec![0.8, 1.5, 0.6]).unwrap();
    push("div_column_numer", max_fd_error("div_column_numer", vec![3, 4], uni(-1.0, 1.0, 12), |t| t.div_column(&denom)?.sum(), trials));
    let numer = Tensor::constant(vec![3, 4], (0..12).map(|i| i as f64 * 0.2 - 1.0).collect()).unwrap();
    push("div_column_denom", max_fd_error("div_column_denom", vec![3], uni(0.5, 2.0, 3), |t| numer.div_column(t)?.sum(), trials));

    let mask = [true, false, true, false, false, true];
    let alt = Tensor::constant(vec![6], vec![0.9; 6]).unwrap();
    push("where_mask_true", max_fd_error("where_mask_true", vec![6], uni(-1.0, 1.0, 6), |t| Tensor::where_mask(&mask, t, &alt)?.sum(), trials));
    push("where_mask_false", max_fd_error("where_mask_false", vec![6], uni(-1.0, 1.0, 6), |t| Tensor::where_mask(&mask, &alt, t)?.sum(), trials));

    let soft_w = Tensor::constant(vec![3, 4], (0..12).map(|i| (i as f64).sin()).collect()).unwrap();
    push("softmax", max_fd_error("softmax", vec![3, 4], uni(-3.0, 3.0, 12), |t| t.softmax()?.mul(&soft_w)?.sum(), trials));

    results
}

/// FD checks for the four losses, each composed with softmax so
/// perturbed inputs stay on the simplex. Returns `(name, worst error)`.
pub fn gradient_check_losses(trials: usize) -> Vec<(&'static str, f64)> {
    let labels = [2usize, 0, 5, 1];
    let gen = |rng: &mut ChaCha8Rng| (0..32).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>();
    let mut results = Vec::new();
    results.push((
        "loss_cross_entropy",
        max_fd_error("loss_cross_entropy", vec![4, 8], gen, |t| {
            losses::cross_entropy(&BatchPrediction::new(t.softmax()?, &labels)?)
        }, trials),
    ));
    results.push((
        "loss_complement_entropy",
        max_fd_error("loss_complement_entropy", vec![4, 8], gen, |t| {
            losses::complement_entropy(&BatchPrediction::new(t.softmax()?, &labels)?)
        }, trials),
    ));
    let unnorm = GceConfig::new(0.5, false).unwrap();
    results.push((
        "loss_gce_unnormalized",
        max_fd_error("loss_gce_unnormalized", vec![4, 8], gen, |t| {
            losses::guided_complement_entropy(&BatchPrediction::new(t.softmax()?, &labels)?, &unnorm)
        }, trials),
    ));
    let norm = GceConfig::default();
    results.push((
        "loss_gce_normalized",
        max_fd_error("loss_gce_normalized", vec![4, 8], gen, |t| {
            losses::guided_complement_entropy(&BatchPrediction::new(t.softmax()?, &labels)?, &norm)
        }, trials),
    ));
    results
}

/// Straight scalar-loop evaluation of each loss from its definition.
/// No clamping (callers supply interior points), `0 log 0 = 0`.
pub mod oracle {
    pub fn cross_entropy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let total: f64 = probs
            .iter()
            .zip(labels)
            .map(|(row, &g)| -row[g].ln())
            .sum();
        total / probs.len() as f64
    }

    fn entropy_of_complement(row: &[f64], g: usize) -> f64 {
        let denom = 1.0 - row[g];
        let mut h = 0.0;
        for (j, &p) in row.iter().enumerate() {
            if j == g {
                continue;
            }
            let q = p / denom;
            if q > 0.0 {
                h -= q * q.ln();
            }
        }
        h
    }

    pub fn complement_entropy(probs: &[Vec<f64>], labels: &[usize]) -> f64 {
        let total: f64 = probs
            .iter()
            .zip(labels)
            .map(|(row, &g)| entropy_of_complement(row, g))
            .sum();
        -total / probs.len() as f64
    }

    pub fn gce(probs: &[Vec<f64>], labels: &[usize], alpha: f64, normalized: bool) -> f64 {
        let k = probs[0].len();
        let total: f64 = probs
            .iter()
            .zip(labels)
            .map(|(row, &g)| {
                let mut h = entropy_of_complement(row, g);
                if normalized {
                    h /= ((k - 1) as f64).ln();
                }
                row[g].powf(alpha) * h
            })
            .sum();
        -total / probs.len() as f64
    }
}

/// Softmax rows from seeded random logits, plus labels.
pub fn random_prob_batch(seed: u64, n: usize, k: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let probs = (0..n)
        .map(|_| {
            let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exp: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
            let total: f64 = exp.iter().sum();
            exp.into_iter().map(|e| e / total).collect()
        })
        .collect();
    let labels = (0..n).map(|_| rng.random_range(0..k)).collect();
    (probs, labels)
}

/// Wraps probability rows as a validated tensor batch.
pub struct ProbBatch {
    pub probs: Tensor,
    pub labels: Vec<usize>,
}

impl ProbBatch {
    pub fn from_rows(rows: &[Vec<f64>], labels: &[usize]) -> Self {
        let n = rows.len();
        let k = rows[0].len();
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        ProbBatch {
            probs: Tensor::constant(vec![n, k], flat).unwrap(),
            labels: labels.to_vec(),
        }
    }

    pub fn batch(&self) -> BatchPrediction<'_> {
        BatchPrediction::new(self.probs.clone(), &self.labels).unwrap()
    }
}
