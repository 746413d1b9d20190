//! Gaussian posterior mass of weight boxes and of unions of boxes.
//!
//! Under a diagonal Gaussian the mass of one box factorizes over dimensions.
//! The mass of a union is resolved exactly by inclusion-exclusion over the
//! intersection lattice (each intersection of boxes is again a box), with a
//! Monte-Carlo estimator as an independent check.
//!
//! [`legacy_merged_mass`] reproduces a known-incorrect formulation that merges
//! intervals per dimension before multiplying. It integrates over the product
//! of the per-dimension unions, a superset of the union, and therefore
//! overestimates. It exists for regression tests.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{PosteriorParams, WeightBox};

/// Default maximum number of boxes resolved exactly by inclusion-exclusion.
pub const DEFAULT_IE_CAP: usize = 25;

/// Two-sided 99% standard normal quantile.
const Z99: f64 = 2.575_829_303_548_901;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MassMethod {
    ExactIe,
    MonteCarlo,
    LegacyMerge,
    /// Sum over a greedily chosen pairwise-disjoint subset; a sound lower bound.
    DisjointSubset,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassResult {
    pub value: f64,
    pub method: MassMethod,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<u64>,
    /// 99% Wilson score interval for Monte-Carlo estimates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ci99: Option<[f64; 2]>,
}

impl MassResult {
    fn exact(value: f64, method: MassMethod) -> Self {
        Self {
            value: value.clamp(0.0, 1.0),
            method,
            samples: None,
            ci99: None,
        }
    }

    pub fn half_width(&self) -> Option<f64> {
        self.ci99.map(|[lo, hi]| 0.5 * (hi - lo))
    }

    pub fn ci_contains(&self, v: f64) -> bool {
        self.ci99.is_some_and(|[lo, hi]| lo <= v && v <= hi)
    }
}

/// `ln P(l <= X <= u)` for `X ~ N(mu, sigma^2)`; point-mass semantics for `sigma = 0`.
pub fn interval_log_prob(mu: f64, sigma: f64, l: f64, u: f64) -> f64 {
    if l > u {
        return f64::NEG_INFINITY;
    }
    if sigma == 0.0 {
        return if l <= mu && mu <= u { 0.0 } else { f64::NEG_INFINITY };
    }
    let scale = sigma * std::f64::consts::SQRT_2;
    let a = (l - mu) / scale;
    let b = (u - mu) / scale;
    if a >= 0.0 {
        (0.5 * (libm::erfc(a) - libm::erfc(b))).ln()
    } else if b <= 0.0 {
        (0.5 * (libm::erfc(-b) - libm::erfc(-a))).ln()
    } else {
        // straddles the mean: 1 minus the two tails
        (-0.5 * (libm::erfc(b) + libm::erfc(-a))).ln_1p()
    }
}

pub fn interval_prob(mu: f64, sigma: f64, l: f64, u: f64) -> f64 {
    interval_log_prob(mu, sigma, l, u).exp()
}

/// Log of the posterior mass of a box, accumulated dimension by dimension.
pub fn box_log_mass(posterior: &PosteriorParams, b: &WeightBox) -> f64 {
    let (mean, std) = (posterior.mean(), posterior.std());
    let mut acc = 0.0;
    for d in 0..b.dim() {
        acc += interval_log_prob(mean[d], std[d], b.lower[d], b.upper[d]);
        if acc == f64::NEG_INFINITY {
            break;
        }
    }
    acc
}

pub fn box_mass(posterior: &PosteriorParams, b: &WeightBox) -> f64 {
    box_log_mass(posterior, b).exp()
}

/// Running sum with Neumaier compensation.
#[derive(Default)]
struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Exact union mass by inclusion-exclusion. Branches whose intersection is
/// empty or carries zero mass are pruned with all of their supersets.
pub fn union_mass_exact(posterior: &PosteriorParams, boxes: &[WeightBox], cap: usize) -> Result<MassResult> {
    if boxes.len() > cap {
        return Err(Error::ExactCapExceeded {
            boxes: boxes.len(),
            cap,
        });
    }
    let mut total = CompensatedSum::default();
    for (i, b) in boxes.iter().enumerate() {
        let m = box_mass(posterior, b);
        if m == 0.0 {
            continue;
        }
        total.add(m);
        extend_intersections(posterior, boxes, b, i + 1, -1.0, &mut total);
    }
    Ok(MassResult::exact(total.value(), MassMethod::ExactIe))
}

fn extend_intersections(
    posterior: &PosteriorParams,
    boxes: &[WeightBox],
    current: &WeightBox,
    start: usize,
    sign: f64,
    total: &mut CompensatedSum,
) {
    for j in start..boxes.len() {
        let Some(next) = current.intersect(&boxes[j]) else {
            continue;
        };
        let m = box_mass(posterior, &next);
        if m == 0.0 {
            continue;
        }
        total.add(sign * m);
        extend_intersections(posterior, boxes, &next, j + 1, -sign, total);
    }
}

/// Exact mass when the box count is within `cap`; otherwise the disjoint-subset lower bound.
pub fn union_mass(posterior: &PosteriorParams, boxes: &[WeightBox], cap: usize) -> MassResult {
    union_mass_exact(posterior, boxes, cap).unwrap_or_else(|_| disjoint_lower_bound(posterior, boxes))
}

/// True when the intersection of two boxes has positive posterior mass:
/// interiors overlap in every dimension with `sigma > 0`, and both boxes
/// contain the mean in every dimension with `sigma = 0`.
pub fn overlap_in_measure(posterior: &PosteriorParams, a: &WeightBox, b: &WeightBox) -> bool {
    let (mean, std) = (posterior.mean(), posterior.std());
    (0..a.dim()).all(|d| {
        if std[d] == 0.0 {
            let m = mean[d];
            a.lower[d] <= m && m <= a.upper[d] && b.lower[d] <= m && m <= b.upper[d]
        } else {
            a.lower[d].max(b.lower[d]) < a.upper[d].min(b.upper[d])
        }
    })
}

/// Drops boxes contained in another box of the list; of identical boxes the
/// first is kept. The union is unchanged.
pub fn maximal_boxes(boxes: &[WeightBox]) -> Vec<WeightBox> {
    boxes
        .iter()
        .enumerate()
        .filter(|&(i, b)| {
            !boxes
                .iter()
                .enumerate()
                .any(|(j, o)| j != i && o.contains_box(b) && (j < i || o != b))
        })
        .map(|(_, b)| b.clone())
        .collect()
}

/// Greedily keeps boxes that overlap no previously kept box in measure and
/// sums their masses.
pub fn disjoint_lower_bound(posterior: &PosteriorParams, boxes: &[WeightBox]) -> MassResult {
    let mut kept: Vec<&WeightBox> = Vec::new();
    let mut total = CompensatedSum::default();
    for b in boxes {
        if kept.iter().all(|k| !overlap_in_measure(posterior, k, b)) {
            total.add(box_mass(posterior, b));
            kept.push(b);
        }
    }
    MassResult::exact(total.value(), MassMethod::DisjointSubset)
}

/// 99% Wilson score interval for `hits` successes in `n` trials.
pub fn wilson_interval(hits: u64, n: u64) -> [f64; 2] {
    let n_f = n as f64;
    let p = hits as f64 / n_f;
    let z2 = Z99 * Z99;
    let denom = 1.0 + z2 / n_f;
    let center = (p + z2 / (2.0 * n_f)) / denom;
    let half = Z99 * (p * (1.0 - p) / n_f + z2 / (4.0 * n_f * n_f)).sqrt() / denom;
    [(center - half).max(0.0), (center + half).min(1.0)]
}

/// Fraction of posterior draws that land in at least one box.
pub fn union_mass_mc<R: Rng + ?Sized>(
    posterior: &PosteriorParams,
    boxes: &[WeightBox],
    n_samples: u64,
    rng: &mut R,
) -> Result<MassResult> {
    if n_samples < 1000 {
        return Err(Error::InvalidArgument(format!(
            "Monte-Carlo mass needs at least 1000 samples, got {n_samples}"
        )));
    }
    let (mean, std) = (posterior.mean(), posterior.std());
    let mut w = vec![0.0; posterior.len()];
    let mut hits = 0u64;
    for _ in 0..n_samples {
        for d in 0..w.len() {
            let z: f64 = rng.sample(StandardNormal);
            w[d] = mean[d] + std[d] * z;
        }
        if boxes.iter().any(|b| b.contains_point(&w)) {
            hits += 1;
        }
    }
    Ok(MassResult {
        value: hits as f64 / n_samples as f64,
        method: MassMethod::MonteCarlo,
        samples: Some(n_samples),
        ci99: Some(wilson_interval(hits, n_samples)),
    })
}

/// Merge-then-multiply formulation: per dimension, the mass of the union of
/// the boxes' intervals; then the product over dimensions.
pub fn legacy_merged_mass(posterior: &PosteriorParams, boxes: &[WeightBox]) -> MassResult {
    if boxes.is_empty() {
        return MassResult::exact(0.0, MassMethod::LegacyMerge);
    }
    let (mean, std) = (posterior.mean(), posterior.std());
    let mut log_total = 0.0;
    let mut intervals = Vec::with_capacity(boxes.len());
    for d in 0..boxes[0].dim() {
        intervals.clear();
        intervals.extend(boxes.iter().map(|b| (b.lower[d], b.upper[d])));
        intervals.sort_by(|x, y| x.0.total_cmp(&y.0));
        let mut p = 0.0;
        let (mut lo, mut hi) = intervals[0];
        for &(l, u) in &intervals[1..] {
            if l <= hi {
                hi = hi.max(u);
            } else {
                p += interval_prob(mean[d], std[d], lo, hi);
                (lo, hi) = (l, u);
            }
        }
        p += interval_prob(mean[d], std[d], lo, hi);
        log_total += p.min(1.0).ln();
    }
    MassResult::exact(log_total.exp(), MassMethod::LegacyMerge)
}
