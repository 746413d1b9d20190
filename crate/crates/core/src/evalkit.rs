//! Measurements around certification: PGD attacks, empirical robustness,
//! rho ablations, iteration statistics, timing breakdowns and reports.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundprop::{Verdict, Verifier, VerifierMode};
use crate::certify::{self, Certificate, CertifyParams, Method, PhaseTimings};
use crate::error::{Error, Result};
use crate::gradient::backprop;
use crate::model::{argmax, forward, sample_weights, Network, PosteriorParams, RobustnessSpec, WeightBox};
use crate::probmass;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PgdOptions {
    pub steps: usize,
    /// Defaults to `2.5 * epsilon / steps`.
    pub step_size: Option<f64>,
    pub clip: Option<[f64; 2]>,
}

impl Default for PgdOptions {
    fn default() -> Self {
        Self {
            steps: 40,
            step_size: None,
            clip: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackResult {
    pub success: bool,
    /// Final iterate; the misclassified point when `success`.
    pub adversarial: Vec<f64>,
    /// `y_label - max_{c != label} y_c` before the first step and after each step.
    pub margins: Vec<f64>,
}

fn class_margin(y: &[f64], label: usize) -> f64 {
    let other = y
        .iter()
        .enumerate()
        .filter(|&(c, _)| c != label)
        .map(|(_, &v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    y[label] - other
}

fn cross_entropy_grad(y: &[f64], label: usize) -> Vec<f64> {
    let m = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = y.iter().map(|v| (v - m).exp()).collect();
    let z: f64 = e.iter().sum();
    e.iter()
        .enumerate()
        .map(|(c, v)| v / z - if c == label { 1.0 } else { 0.0 })
        .collect()
}

/// Per-coordinate feasible interval: the epsilon ball intersected with the
/// clip domain, shrunk so that `|v - x| <= epsilon` holds in floating point.
fn feasible(x: f64, eps: f64, clip: Option<[f64; 2]>) -> (f64, f64) {
    let mut lo = x - eps;
    while x - lo > eps {
        lo = lo.next_up();
    }
    let mut hi = x + eps;
    while hi - x > eps {
        hi = hi.next_down();
    }
    if let Some([c0, c1]) = clip {
        let (l, h) = (lo.max(c0), hi.min(c1));
        if l <= h {
            return (l, h);
        }
    }
    (lo, hi)
}

/// L-infinity PGD with sign steps on the cross-entropy loss of the network at
/// weights `w`. Stops at the first misclassified iterate.
pub fn pgd_attack(
    net: &Network,
    w: &[f64],
    x: &[f64],
    label: usize,
    epsilon: f64,
    opts: &PgdOptions,
) -> Result<AttackResult> {
    if label >= net.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "label {label} outside {} classes",
            net.output_dim()
        )));
    }
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidArgument(format!("epsilon {epsilon} must be non-negative")));
    }
    let step = opts
        .step_size
        .unwrap_or(2.5 * epsilon / opts.steps.max(1) as f64);
    let bounds: Vec<(f64, f64)> = x.iter().map(|&v| feasible(v, epsilon, opts.clip)).collect();
    let mut adv = x.to_vec();
    let mut y = forward(net, w, &adv)?;
    let mut margins = vec![class_margin(&y, label)];
    let mut success = argmax(&y) != label;
    if epsilon > 0.0 {
        for _ in 0..opts.steps {
            if success {
                break;
            }
            let g = backprop(net, w, &adv, &cross_entropy_grad(&y, label))?.input;
            for (i, v) in adv.iter_mut().enumerate() {
                let dir = if g[i] > 0.0 {
                    1.0
                } else if g[i] < 0.0 {
                    -1.0
                } else {
                    0.0
                };
                *v = (*v + step * dir).clamp(bounds[i].0, bounds[i].1);
            }
            y = forward(net, w, &adv)?;
            margins.push(class_margin(&y, label));
            success = argmax(&y) != label;
        }
    }
    Ok(AttackResult {
        success,
        adversarial: adv,
        margins,
    })
}

/// Attack on the posterior-mean network.
pub fn pgd_attack_mean(net: &Network, x: &[f64], label: usize, epsilon: f64, opts: &PgdOptions) -> Result<AttackResult> {
    pgd_attack(net, net.posterior().mean(), x, label, epsilon, opts)
}

pub const DEFAULT_EMPIRICAL_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalEstimate {
    pub value: f64,
    pub safe: usize,
    pub samples: usize,
}

impl EmpiricalEstimate {
    /// Binomial standard deviation of the estimate.
    pub fn std_error(&self) -> f64 {
        (self.value * (1.0 - self.value) / self.samples as f64).sqrt()
    }
}

/// Fraction of posterior draws whose point network verifies Safe on the
/// whole input region under IBP.
pub fn empirical_psafe<R: Rng + ?Sized>(
    net: &Network,
    spec: &RobustnessSpec,
    n_samples: usize,
    rng: &mut R,
) -> Result<EmpiricalEstimate> {
    if n_samples == 0 {
        return Err(Error::InvalidArgument("empirical estimate needs at least one sample".into()));
    }
    spec.check_against(net)?;
    let draws: Vec<_> = (0..n_samples).map(|_| sample_weights(net.posterior(), rng)).collect();
    let verifier = Verifier::new(VerifierMode::Ibp);
    let safe = draws
        .par_iter()
        .filter(|w| verifier.verify_box(net, &WeightBox::point(w), spec) == Verdict::Safe)
        .count();
    Ok(EmpiricalEstimate {
        value: safe as f64 / n_samples as f64,
        safe,
        samples: n_samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub rho: f64,
    pub mean_psafe: f64,
    pub per_input: Vec<f64>,
}

/// GIE over every `rho` in `grid` for every spec, with the seed and budget of `params`.
pub fn ablate_rho(
    net: &Network,
    specs: &[RobustnessSpec],
    grid: &[f64],
    params: &CertifyParams,
) -> Result<Vec<AblationRow>> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("ablation needs at least one input".into()));
    }
    if !grid.contains(&0.0) {
        return Err(Error::InvalidArgument("rho grid must include 0".into()));
    }
    grid.iter()
        .map(|&rho| {
            let p = CertifyParams { rho, ..params.clone() };
            let per_input = specs
                .par_iter()
                .map(|s| certify::certify(net, s, Method::Gie, &p).map(|c| c.p_safe))
                .collect::<Result<Vec<f64>>>()?;
            Ok(AblationRow {
                rho,
                mean_psafe: mean(&per_input),
                per_input,
            })
        })
        .collect()
}

pub fn write_ablation_csv<W: Write>(out: W, rows: &[AblationRow], network: &str, budget: u64, seed: u64) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["rho", "network", "mean_psafe", "budget", "seed"])?;
    for r in rows {
        w.write_record([
            r.rho.to_string(),
            network.to_string(),
            r.mean_psafe.to_string(),
            budget.to_string(),
            seed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    /// `histogram[k]` counts draws whose largest verified multiplier is `k`.
    pub histogram: Vec<u64>,
    pub draws: usize,
    /// Per certificate: smallest cap on `j` at which the union mass already equals its final value.
    pub saturation: Vec<u32>,
}

pub fn iteration_stats(posterior: &PosteriorParams, certs: &[Certificate]) -> IterationStats {
    let mut histogram = Vec::new();
    let mut draws = 0;
    for d in certs.iter().flat_map(|c| &c.draws) {
        let k = d.iterations as usize;
        if histogram.len() <= k {
            histogram.resize(k + 1, 0);
        }
        histogram[k] += 1;
        draws += 1;
    }
    let saturation = certs.iter().map(|c| saturation_iteration(posterior, c)).collect();
    IterationStats {
        histogram,
        draws,
        saturation,
    }
}

fn capped_mass(posterior: &PosteriorParams, cert: &Certificate, cap: u32) -> f64 {
    let boxes: Vec<WeightBox> = cert
        .draws
        .iter()
        .filter(|d| d.iterations > 0 && cap > 0)
        .map(|d| d.box_at(d.iterations.min(cap)))
        .collect();
    probmass::union_mass(posterior, &probmass::maximal_boxes(&boxes), cert.params.ie_cap).value
}

fn saturation_iteration(posterior: &PosteriorParams, cert: &Certificate) -> u32 {
    let top = cert.draws.iter().map(|d| d.iterations).max().unwrap_or(0);
    let full = capped_mass(posterior, cert, top);
    (0..=top)
        .find(|&k| capped_mass(posterior, cert, k) >= full)
        .unwrap_or(top)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSeconds {
    pub sampling: f64,
    pub gradient: f64,
    pub verify: f64,
    pub mass: f64,
    pub total: f64,
}

impl From<&PhaseTimings> for PhaseSeconds {
    fn from(t: &PhaseTimings) -> Self {
        Self {
            sampling: t.sampling.as_secs_f64(),
            gradient: t.gradient.as_secs_f64(),
            verify: t.verify.as_secs_f64(),
            mass: t.mass.as_secs_f64(),
            total: t.total().as_secs_f64(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub network: String,
    pub pie: PhaseSeconds,
    pub gie: PhaseSeconds,
    /// Relative change of GIE's total time over PIE's, in percent.
    pub gie_overhead_percent: f64,
}

pub fn timing_report(network: &str, pie: &[Certificate], gie: &[Certificate]) -> TimingReport {
    let sum = |certs: &[Certificate]| {
        let mut t = PhaseTimings::default();
        for c in certs {
            t.sampling += c.timings.sampling;
            t.gradient += c.timings.gradient;
            t.verify += c.timings.verify;
            t.mass += c.timings.mass;
        }
        PhaseSeconds::from(&t)
    };
    let (p, g) = (sum(pie), sum(gie));
    let overhead = if p.total > 0.0 {
        100.0 * (g.total - p.total) / p.total
    } else {
        0.0
    };
    TimingReport {
        network: network.to_string(),
        pie: p,
        gie: g,
        gie_overhead_percent: overhead,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<usize>,
    pub p_safe: BTreeMap<Method, f64>,
    pub lbp_calls: BTreeMap<Method, u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub empirical: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack_success: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub inputs: usize,
    pub mean_psafe: BTreeMap<Method, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_empirical: Option<f64>,
    /// Fraction of attacked inputs the attack failed on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adversarial_accuracy: Option<f64>,
}

impl Aggregates {
    pub fn from_records(records: &[InputRecord]) -> Self {
        let mut mean_psafe = BTreeMap::new();
        for m in Method::ALL {
            let v: Vec<f64> = records.iter().filter_map(|r| r.p_safe.get(&m).copied()).collect();
            if !v.is_empty() {
                mean_psafe.insert(m, mean(&v));
            }
        }
        let emp: Vec<f64> = records.iter().filter_map(|r| r.empirical).collect();
        let att: Vec<f64> = records
            .iter()
            .filter_map(|r| r.attack_success.map(|s| if s { 0.0 } else { 1.0 }))
            .collect();
        Self {
            inputs: records.len(),
            mean_psafe,
            mean_empirical: (!emp.is_empty()).then(|| mean(&emp)),
            adversarial_accuracy: (!att.is_empty()).then(|| mean(&att)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metadata: serde_json::Value,
    pub records: Vec<InputRecord>,
    pub aggregates: Aggregates,
}

impl EvalReport {
    /// Sorts records by input index and derives the aggregates from them.
    pub fn new(metadata: serde_json::Value, mut records: Vec<InputRecord>) -> Self {
        records.sort_by_key(|r| r.index);
        let aggregates = Aggregates::from_records(&records);
        Self {
            metadata,
            records,
            aggregates,
        }
    }

    pub fn write_json<W: Write>(&self, mut out: W) -> Result<()> {
        serde_json::to_writer_pretty(&mut out, self)?;
        writeln!(out)?;
        Ok(())
    }

    /// One row per input per method.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["index", "label", "method", "p_safe", "lbp_calls", "empirical", "attack_success"])?;
        let opt = |v: Option<String>| v.unwrap_or_default();
        for r in &self.records {
            for (m, p) in &r.p_safe {
                w.write_record([
                    r.index.to_string(),
                    opt(r.label.map(|v| v.to_string())),
                    m.to_string(),
                    p.to_string(),
                    opt(r.lbp_calls.get(m).map(u64::to_string)),
                    opt(r.empirical.map(|v| v.to_string())),
                    opt(r.attack_success.map(|v| v.to_string())),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
