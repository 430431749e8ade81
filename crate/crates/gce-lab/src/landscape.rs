//! The synthetic 3-class landscape study.
//!
//! With three classes, fixing class 0 as ground truth leaves two free
//! probabilities (p1, p2); every loss becomes a sheet over the triangle
//! `p1 + p2 <= 1`. Grid-sampling those sheets makes loss geometry
//! visible: complement entropy has a flat valley along `p1 = p2` (it
//! cannot tell how much mass the true class holds), while the guided
//! variants tilt that valley toward the origin, where the prediction is
//! both correct and confident.

use crate::error::{Error, Result};
use crate::losses::{self, BatchPrediction, GceConfig};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LandscapeLoss {
    ComplementEntropy,
    Gce,
    NormalizedGce,
    Xe,
}

impl LandscapeLoss {
    pub fn name(self) -> &'static str {
        match self {
            LandscapeLoss::ComplementEntropy => "complement_entropy",
            LandscapeLoss::Gce => "gce",
            LandscapeLoss::NormalizedGce => "normalized_gce",
            LandscapeLoss::Xe => "xe",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "complement_entropy" => Ok(LandscapeLoss::ComplementEntropy),
            "gce" => Ok(LandscapeLoss::Gce),
            "normalized_gce" => Ok(LandscapeLoss::NormalizedGce),
            "xe" => Ok(LandscapeLoss::Xe),
            other => Err(Error::InvalidArgument(format!(
                "unknown landscape loss {other} \
                 (complement_entropy | gce | normalized_gce | xe)"
            ))),
        }
    }
}

/// Single-sample loss at a 3-class probability point with ground truth 0.
pub fn point_value(loss: LandscapeLoss, alpha: f64, p1: f64, p2: f64) -> Result<f64> {
    let p0 = (1.0 - (p1 + p2)).max(0.0);
    let probs = Tensor::constant(vec![1, 3], vec![p0, p1, p2])?;
    let batch = BatchPrediction::new(probs, &[0])?;
    let scalar = match loss {
        LandscapeLoss::ComplementEntropy => losses::complement_entropy(&batch)?,
        LandscapeLoss::Xe => losses::cross_entropy(&batch)?,
        LandscapeLoss::Gce => {
            losses::guided_complement_entropy(&batch, &GceConfig::new(alpha, false)?)?
        }
        LandscapeLoss::NormalizedGce => {
            losses::guided_complement_entropy(&batch, &GceConfig::new(alpha, true)?)?
        }
    };
    scalar.item()
}

/// A grid-sampled loss sheet over the 3-class simplex.
#[derive(Debug, Clone)]
pub struct LandscapeSheet {
    pub loss: LandscapeLoss,
    pub alpha: f64,
    pub resolution: usize,
    /// Axis coordinates, shared by both incorrect classes.
    pub coords: Vec<f64>,
    /// Row-major `[p2 index][p1 index]`; `None` outside the simplex.
    pub values: Vec<Option<f64>>,
    /// `p0 > max(p1, p2)`: the region where the prediction is correct.
    pub shaded: Vec<bool>,
}

impl LandscapeSheet {
    pub fn at(&self, i1: usize, i2: usize) -> Option<f64> {
        self.values[i2 * self.resolution + i1]
    }

    /// Minimum over valid grid points, with its coordinates.
    pub fn minimum(&self) -> (f64, usize, usize) {
        let mut best = (f64::INFINITY, 0, 0);
        for i2 in 0..self.resolution {
            for i1 in 0..self.resolution {
                if let Some(v) = self.at(i1, i2) {
                    if v < best.0 {
                        best = (v, i1, i2);
                    }
                }
            }
        }
        best
    }

    /// Fraction of the valid grid area within `delta` of the minimum
    /// (the "basin" around the optimum).
    pub fn basin_fraction(&self, delta: f64) -> f64 {
        let min = self.minimum().0;
        let (mut near, mut valid) = (0usize, 0usize);
        for v in self.values.iter().flatten() {
            valid += 1;
            if *v <= min + delta {
                near += 1;
            }
        }
        near as f64 / valid.max(1) as f64
    }

    /// CSV rows `p1,p2,p0,loss,shaded` for every valid grid point.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("p1,p2,p0,loss,shaded\n");
        for i2 in 0..self.resolution {
            for i1 in 0..self.resolution {
                if let Some(v) = self.at(i1, i2) {
                    let (p1, p2) = (self.coords[i1], self.coords[i2]);
                    let p0 = (1.0 - (p1 + p2)).max(0.0);
                    let shaded = self.shaded[i2 * self.resolution + i1];
                    out.push_str(&format!(
                        "{p1:.6},{p2:.6},{p0:.6},{v:.12},{}\n",
                        u8::from(shaded)
                    ));
                }
            }
        }
        out
    }

    /// Binary PGM render: darker means lower loss; points outside the
    /// simplex are white.
    pub fn to_pgm(&self) -> Vec<u8> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in self.values.iter().flatten() {
            lo = lo.min(*v);
            hi = hi.max(*v);
        }
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let mut pgm = format!("P5\n{} {}\n255\n", self.resolution, self.resolution).into_bytes();
        // Image rows top-to-bottom mirror p2 descending, like a plot.
        for i2 in (0..self.resolution).rev() {
            for i1 in 0..self.resolution {
                let byte = match self.at(i1, i2) {
                    Some(v) => (254.0 * (v - lo) / span) as u8,
                    None => 255,
                };
                pgm.push(byte);
            }
        }
        pgm
    }
}

/// Grid-samples one loss sheet at `resolution` points per axis.
pub fn evaluate_sheet(
    loss: LandscapeLoss,
    alpha: f64,
    resolution: usize,
) -> Result<LandscapeSheet> {
    if resolution < 3 {
        return Err(Error::InvalidArgument("resolution must be >= 3".into()));
    }
    let coords: Vec<f64> = (0..resolution)
        .map(|i| i as f64 / (resolution - 1) as f64)
        .collect();
    let mut values = Vec::with_capacity(resolution * resolution);
    let mut shaded = Vec::with_capacity(resolution * resolution);
    for &p2 in &coords {
        for &p1 in &coords {
            if p1 + p2 > 1.0 + 1e-12 {
                values.push(None);
                shaded.push(false);
                continue;
            }
            let p0 = (1.0 - (p1 + p2)).max(0.0);
            values.push(Some(point_value(loss, alpha, p1, p2)?));
            shaded.push(p0 > p1.max(p2));
        }
    }
    Ok(LandscapeSheet {
        loss,
        alpha,
        resolution,
        coords,
        values,
        shaded,
    })
}

/// One profile curve: loss along the equal-incorrect line as a function
/// of the ground-truth probability.
#[derive(Debug, Clone)]
pub struct ProfileCurve {
    pub alpha: f64,
    /// `(p0, loss)` samples for `p0` strictly inside `(0, 1)`.
    pub points: Vec<(f64, f64)>,
}

/// Loss at ground-truth probability `p0` with the leftover mass split
/// evenly over the two incorrect classes.
pub fn profile_value(loss: LandscapeLoss, alpha: f64, p0: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p0) {
        return Err(Error::InvalidArgument(format!(
            "p0 must be in [0, 1), got {p0}"
        )));
    }
    let tail = (1.0 - p0) / 2.0;
    point_value(loss, alpha, tail, tail)
}

/// Profile curves for several guiding exponents.
pub fn profile_equal_incorrect(
    loss: LandscapeLoss,
    alphas: &[f64],
    resolution: usize,
) -> Result<Vec<ProfileCurve>> {
    if resolution < 10 {
        return Err(Error::InvalidArgument("resolution must be >= 10".into()));
    }
    for &a in alphas {
        if !(a > 0.0 && a <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "alpha must be in (0, 1], got {a}"
            )));
        }
    }
    alphas
        .iter()
        .map(|&alpha| {
            let points = (0..resolution)
                .map(|i| {
                    let p0 = (i + 1) as f64 / (resolution + 1) as f64;
                    Ok((p0, profile_value(loss, alpha, p0)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ProfileCurve { alpha, points })
        })
        .collect()
}

/// CSV rows `alpha,p0,loss` over all curves.
pub fn profiles_to_csv(curves: &[ProfileCurve]) -> String {
    let mut out = String::from("alpha,p0,loss\n");
    for c in curves {
        for (p0, v) in &c.points {
            out.push_str(&format!("{},{p0:.6},{v:.12}\n", c.alpha));
        }
    }
    out
}

/// Behavior of a loss along the `p1 = p2` valley.
#[derive(Debug, Clone, PartialEq)]
pub struct ValleyCheck {
    /// Largest deviation from the mean value along the valley.
    pub max_deviation: f64,
    /// Whether the value strictly decreases as the traversal approaches
    /// the origin (ground-truth probability rising toward 1).
    pub strictly_decreasing_toward_origin: bool,
    pub values: Vec<(f64, f64)>,
}

/// Samples the `p1 = p2 = t` line at `resolution` points and reports how
/// flat it is. Complement entropy is constant along it; the guided
/// variants tilt it toward the origin.
pub fn valley_flatness_check(
    loss: LandscapeLoss,
    alpha: f64,
    resolution: usize,
) -> Result<ValleyCheck> {
    if resolution < 10 {
        return Err(Error::InvalidArgument("resolution must be >= 10".into()));
    }
    // t from 0.5 down toward 0: traversal runs toward the origin.
    let mut values = Vec::with_capacity(resolution);
    for i in 0..resolution {
        let t = 0.5 * (resolution - i) as f64 / resolution as f64;
        values.push((t, point_value(loss, alpha, t, t)?));
    }
    let mean = values.iter().map(|(_, v)| v).sum::<f64>() / values.len() as f64;
    let max_deviation = values
        .iter()
        .map(|(_, v)| (v - mean).abs())
        .fold(0.0, f64::max);
    let strictly_decreasing_toward_origin =
        values.windows(2).all(|pair| pair[1].1 < pair[0].1);
    Ok(ValleyCheck {
        max_deviation,
        strictly_decreasing_toward_origin,
        values,
    })
}
