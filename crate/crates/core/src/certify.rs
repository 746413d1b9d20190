//! Certification loops: pure sampling, pure iterative expansion (PIE) and
//! gradient-guided iterative expansion (GIE).
//!
//! Draw `i` always uses the random stream `(seed, i)`, so every method sees
//! the same weight draws for a given seed. Verifier calls are charged to the
//! budget in draw order. Draws run in parallel only while the remaining
//! budget covers the worst case of the whole chunk; otherwise one at a time.
//! Either way the result equals a sequential run, whatever the worker count.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::boundprop::{Verdict, Verifier, VerifierMode};
use crate::error::{dim_err, Error, Result};
use crate::gradient::{binding_halfspace, expansion_vectors, grad_margin, partition_dims, ExpansionVectors};
use crate::model::{sample_weights, Network, RobustnessSpec, WeightBox};
use crate::probmass::{self, MassMethod, MassResult};

const CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Sampling,
    Pie,
    Gie,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Sampling, Method::Pie, Method::Gie];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Sampling => "sampling",
            Method::Pie => "pie",
            Method::Gie => "gie",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "sampling" => Ok(Method::Sampling),
            "pie" => Ok(Method::Pie),
            "gie" => Ok(Method::Gie),
            other => Err(format!("unknown method '{other}' (expected sampling, pie or gie)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyParams {
    /// Number of weight draws.
    pub samples: usize,
    /// Base box half-width, in posterior standard deviations.
    pub lambda: f64,
    /// Extra gradient-guided scaling; GIE only.
    pub rho: f64,
    pub max_verifier_calls: u64,
    /// Cap on the expansion multiplier `j`.
    pub max_expand_iters: u32,
    pub seed: u64,
    pub verifier: VerifierMode,
    /// Skip draws that land inside an already certified box.
    pub disjoint: bool,
    pub ie_cap: usize,
    /// Monte-Carlo samples for the union estimate when the exact cap is exceeded.
    pub mc_samples: u64,
}

impl Default for CertifyParams {
    fn default() -> Self {
        Self {
            samples: 100,
            lambda: 0.25,
            rho: 0.0,
            max_verifier_calls: 1000,
            max_expand_iters: 64,
            seed: 0,
            verifier: VerifierMode::Ibp,
            disjoint: false,
            ie_cap: probmass::DEFAULT_IE_CAP,
            mc_samples: 100_000,
        }
    }
}

impl CertifyParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.samples == 0 {
            return bad("samples must be at least 1".into());
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda {} must be positive", self.lambda));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return bad(format!("rho {} must be non-negative", self.rho));
        }
        if self.max_verifier_calls == 0 {
            return bad("max_verifier_calls must be positive".into());
        }
        if self.max_expand_iters == 0 {
            return bad("max_expand_iters must be positive".into());
        }
        if self.ie_cap == 0 {
            return bad("ie_cap must be positive".into());
        }
        if self.mc_samples < 1000 {
            return bad(format!("mc_samples {} must be at least 1000", self.mc_samples));
        }
        Ok(())
    }
}

/// Random source of draw `index` under `seed`.
pub fn draw_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Outcome of one weight draw. The box tested at multiplier `j` is
/// `[center - j * step_minus, center + j * step_plus]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DrawRecord {
    pub index: usize,
    pub center: Vec<f64>,
    pub step_minus: Vec<f64>,
    pub step_plus: Vec<f64>,
    /// Largest verified multiplier; 0 when nothing was certified.
    pub iterations: u32,
    pub calls: u64,
    /// Not expanded because the center was already covered (disjoint mode).
    pub skipped: bool,
}

impl DrawRecord {
    pub fn box_at(&self, j: u32) -> WeightBox {
        let jf = f64::from(j);
        WeightBox {
            lower: self.center.iter().zip(&self.step_minus).map(|(c, m)| c - jf * m).collect(),
            upper: self.center.iter().zip(&self.step_plus).map(|(c, p)| c + jf * p).collect(),
        }
    }

    pub fn certified_box(&self) -> Option<WeightBox> {
        (self.iterations > 0).then(|| self.box_at(self.iterations))
    }
}

/// Wall-clock per phase, summed over draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub sampling: Duration,
    pub gradient: Duration,
    pub verify: Duration,
    pub mass: Duration,
}

impl PhaseTimings {
    pub fn total(&self) -> Duration {
        self.sampling + self.gradient + self.verify + self.mass
    }

    fn add(&mut self, other: &PhaseTimings) {
        self.sampling += other.sampling;
        self.gradient += other.gradient;
        self.verify += other.verify;
        self.mass += other.mass;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Certificate {
    pub method: Method,
    pub params: CertifyParams,
    /// Certified boxes in draw order.
    pub boxes: Vec<WeightBox>,
    pub draws: Vec<DrawRecord>,
    /// Sound lower bound on the probability of safety.
    pub p_safe: f64,
    pub mass: MassResult,
    /// Monte-Carlo estimate of the union mass, reported when `mass` is only the disjoint-subset bound.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc_estimate: Option<MassResult>,
    pub lbp_calls: u64,
    pub budget_truncated: bool,
    #[serde(skip)]
    pub timings: PhaseTimings,
}

impl Certificate {
    /// Largest verified multiplier of each processed draw.
    pub fn iterations(&self) -> Vec<u32> {
        self.draws.iter().map(|d| d.iterations).collect()
    }
}

struct Outcome {
    record: DrawRecord,
    capped: bool,
    timings: PhaseTimings,
}

struct Ctx<'a> {
    net: &'a Network,
    spec: &'a RobustnessSpec,
    method: Method,
    params: &'a CertifyParams,
    verifier: &'a Verifier,
}

impl Ctx<'_> {
    fn max_calls_per_draw(&self) -> u64 {
        match self.method {
            Method::Sampling => 1,
            _ => u64::from(self.params.max_expand_iters),
        }
    }

    fn steps(&self, center: &[f64]) -> Result<ExpansionVectors> {
        let sigma = self.net.posterior().std();
        let lambda = self.params.lambda;
        match self.method {
            Method::Sampling | Method::Pie => Ok(ExpansionVectors::uniform(sigma, lambda)),
            Method::Gie => {
                let k = binding_halfspace(self.net, center, self.spec)?;
                let g = grad_margin(self.net, center, &self.spec.center, &self.spec.halfspaces[k].a)?;
                expansion_vectors(sigma, lambda, self.params.rho, &partition_dims(&g))
            }
        }
    }

    fn expand(&self, index: usize, center: Vec<f64>, cap: u64, mut timings: PhaseTimings) -> Result<Outcome> {
        let t = Instant::now();
        let steps = self.steps(&center)?;
        if self.method == Method::Gie {
            timings.gradient += t.elapsed();
        }
        let mut record = DrawRecord {
            index,
            center,
            step_minus: steps.minus,
            step_plus: steps.plus,
            iterations: 0,
            calls: 0,
            skipped: false,
        };
        let max_j = self.max_calls_per_draw() as u32;
        let mut capped = false;
        let t = Instant::now();
        for j in 1..=max_j {
            if record.calls == cap {
                capped = true;
                break;
            }
            record.calls += 1;
            if self.verifier.verify_box(self.net, &record.box_at(j), self.spec) == Verdict::Safe {
                record.iterations = j;
            } else {
                break;
            }
        }
        timings.verify += t.elapsed();
        Ok(Outcome {
            record,
            capped,
            timings,
        })
    }
}

fn run(
    net: &Network,
    spec: &RobustnessSpec,
    method: Method,
    params: &CertifyParams,
    samples: usize,
    center_of: &(dyn Fn(usize) -> Vec<f64> + Sync),
) -> Result<Certificate> {
    params.validate()?;
    spec.check_against(net)?;
    let verifier = Verifier::new(params.verifier);
    let ctx = Ctx {
        net,
        spec,
        method,
        params,
        verifier: &verifier,
    };
    let per_draw = ctx.max_calls_per_draw();
    let mut remaining = params.max_verifier_calls;
    let mut draws = Vec::new();
    let mut boxes: Vec<WeightBox> = Vec::new();
    let mut timings = PhaseTimings::default();
    let mut truncated = false;
    let mut next = 0;
    while next < samples {
        if remaining == 0 {
            truncated = true;
            break;
        }
        let width = if params.disjoint {
            1
        } else {
            ((remaining / per_draw) as usize).clamp(1, CHUNK).min(samples - next)
        };
        let kept = &boxes;
        let cap = remaining;
        let outcomes = (next..next + width)
            .into_par_iter()
            .map(|i| {
                let t = Instant::now();
                let center = center_of(i);
                let pre = PhaseTimings {
                    sampling: t.elapsed(),
                    ..Default::default()
                };
                if params.disjoint && kept.iter().any(|b| b.contains_point(&center)) {
                    return Ok(Outcome {
                        record: DrawRecord {
                            index: i,
                            center,
                            step_minus: Vec::new(),
                            step_plus: Vec::new(),
                            iterations: 0,
                            calls: 0,
                            skipped: true,
                        },
                        capped: false,
                        timings: pre,
                    });
                }
                ctx.expand(i, center, cap, pre)
            })
            .collect::<Result<Vec<_>>>()?;
        for out in outcomes {
            remaining -= out.record.calls;
            truncated |= out.capped;
            timings.add(&out.timings);
            boxes.extend(out.record.certified_box());
            draws.push(out.record);
        }
        next += width;
    }
    debug_assert_eq!(verifier.calls(), params.max_verifier_calls - remaining);

    let t = Instant::now();
    let (mass, mc_estimate) = union_mass_with_fallback(net, params, &boxes)?;
    timings.mass = t.elapsed();
    Ok(Certificate {
        method,
        params: params.clone(),
        boxes,
        draws,
        p_safe: mass.value,
        mass,
        mc_estimate,
        lbp_calls: verifier.calls(),
        budget_truncated: truncated,
        timings,
    })
}

/// Exact union mass of the maximal boxes when within the cap; beyond it the
/// disjoint-subset lower bound together with a Monte-Carlo estimate.
fn union_mass_with_fallback(
    net: &Network,
    params: &CertifyParams,
    boxes: &[WeightBox],
) -> Result<(MassResult, Option<MassResult>)> {
    let posterior = net.posterior();
    let maximal = probmass::maximal_boxes(boxes);
    let mass = probmass::union_mass(posterior, &maximal, params.ie_cap);
    if mass.method == MassMethod::ExactIe {
        return Ok((mass, None));
    }
    let mut rng = draw_rng(params.seed, u64::MAX);
    let mc = probmass::union_mass_mc(posterior, &maximal, params.mc_samples, &mut rng)?;
    Ok((mass, Some(mc)))
}

/// Certifies with weight draws from the posterior.
pub fn certify(net: &Network, spec: &RobustnessSpec, method: Method, params: &CertifyParams) -> Result<Certificate> {
    let posterior = net.posterior();
    let seed = params.seed;
    run(net, spec, method, params, params.samples, &|i| {
        sample_weights(posterior, &mut draw_rng(seed, i as u64)).0
    })
}

/// Certifies around the given centers in place of random draws; `params.samples` is ignored.
pub fn certify_from_centers(
    net: &Network,
    spec: &RobustnessSpec,
    method: Method,
    params: &CertifyParams,
    centers: &[Vec<f64>],
) -> Result<Certificate> {
    if let Some(c) = centers.iter().find(|c| c.len() != net.num_params()) {
        return Err(dim_err("draw center", net.num_params(), c.len()));
    }
    if centers.is_empty() {
        return Err(Error::InvalidArgument("no draw centers given".into()));
    }
    run(net, spec, method, params, centers.len(), &|i| centers[i].clone())
}

pub fn certify_pure_sampling(net: &Network, spec: &RobustnessSpec, params: &CertifyParams) -> Result<Certificate> {
    certify(net, spec, Method::Sampling, params)
}

pub fn certify_pie(net: &Network, spec: &RobustnessSpec, params: &CertifyParams) -> Result<Certificate> {
    certify(net, spec, Method::Pie, params)
}

pub fn certify_gie(net: &Network, spec: &RobustnessSpec, params: &CertifyParams) -> Result<Certificate> {
    certify(net, spec, Method::Gie, params)
}

/// True when every certified box verifies Safe again under a fresh verifier.
pub fn reverify(net: &Network, spec: &RobustnessSpec, cert: &Certificate) -> bool {
    let verifier = Verifier::new(cert.params.verifier);
    cert.boxes
        .iter()
        .all(|b| verifier.verify_box(net, b, spec) == Verdict::Safe)
}

/// Per-method lambda for equal-budget comparisons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MethodLambdas {
    pub sampling: f64,
    pub pie: f64,
    pub gie: f64,
}

impl MethodLambdas {
    pub fn uniform(lambda: f64) -> Self {
        Self {
            sampling: lambda,
            pie: lambda,
            gie: lambda,
        }
    }

    pub fn get(&self, method: Method) -> f64 {
        match method {
            Method::Sampling => self.sampling,
            Method::Pie => self.pie,
            Method::Gie => self.gie,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub sampling: Certificate,
    pub pie: Certificate,
    pub gie: Certificate,
}

impl Comparison {
    pub fn get(&self, method: Method) -> &Certificate {
        match method {
            Method::Sampling => &self.sampling,
            Method::Pie => &self.pie,
            Method::Gie => &self.gie,
        }
    }
}

/// Runs all three methods with the same seed and the same call budget.
pub fn run_budgeted_comparison(
    net: &Network,
    spec: &RobustnessSpec,
    params: &CertifyParams,
    lambdas: MethodLambdas,
) -> Result<Comparison> {
    let with = |method: Method| {
        let p = CertifyParams {
            lambda: lambdas.get(method),
            ..params.clone()
        };
        certify(net, spec, method, &p)
    };
    Ok(Comparison {
        sampling: with(Method::Sampling)?,
        pie: with(Method::Pie)?,
        gie: with(Method::Gie)?,
    })
}
