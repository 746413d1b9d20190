//! Command-line front end for `bnncert`.
//!
//! Exit codes: 0 success, 2 usage or IO error, 3 internal invariant violation.

mod inputs;

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use bnncert::certify::{self, draw_rng, Comparison, MethodLambdas};
use bnncert::evalkit::{self, AttackResult, EmpiricalEstimate, EvalReport, InputRecord, IterationStats, PgdOptions};
use bnncert::model::{all_other_classes, make_classification_spec};
use bnncert::report::CertificateReport;
use bnncert::{io, Certificate, CertifyParams, Method, Network, RobustnessSpec, VerifierMode};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use inputs::{parse_indices, read_inputs, read_labels};

/// Random streams at or above this offset are reserved for per-input
/// estimates so they never coincide with certification draws.
const AUX_STREAM: u64 = 1 << 62;

#[derive(Parser, Debug)]
#[command(name = "bnncert", version, about = "Probabilistic robustness certification for Bayesian neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Certify every input with one method and write the certificates.
    Verify(Opts),
    /// Run sampling, PIE and GIE on every input under the same call budget.
    Bench(Opts),
    /// PGD attack on the posterior-mean network.
    Attack(Opts),
    /// Fraction of posterior draws whose point network verifies.
    Empirical(Opts),
    /// GIE over a grid of rho values.
    Ablate(Opts),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Verify(_) => "verify",
            Command::Bench(_) => "bench",
            Command::Attack(_) => "attack",
            Command::Empirical(_) => "empirical",
            Command::Ablate(_) => "ablate",
        }
    }

    fn opts(&self) -> &Opts {
        match self {
            Command::Verify(o) | Command::Bench(o) | Command::Attack(o) | Command::Empirical(o) | Command::Ablate(o) => o,
        }
    }
}

/// Options shared by all commands. The same fields are accepted in a JSON
/// file given by `--config`; flags take precedence.
#[derive(Args, Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct Opts {
    /// JSON file with any of the options below.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
    /// Network interchange file.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Inputs: CSV, one vector per row, or an IDX image file.
    #[arg(long)]
    inputs: Option<PathBuf>,
    /// Labels: text/CSV integers or an IDX label file.
    #[arg(long)]
    labels: Option<PathBuf>,
    /// Inputs to use, e.g. `0-19,25`. Defaults to all.
    #[arg(long)]
    indices: Option<String>,
    /// JSON robustness specification (one object or an array), instead of inputs and labels.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    verifier: Option<VerifierMode>,
    /// L-infinity input radius for specs built from inputs.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Input domain, e.g. `0,1`.
    #[arg(long, value_delimiter = ',', num_args = 1)]
    clip: Option<Vec<f64>>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lambda_sampling: Option<f64>,
    #[arg(long)]
    lambda_pie: Option<f64>,
    #[arg(long)]
    lambda_gie: Option<f64>,
    #[arg(long)]
    rho: Option<f64>,
    /// Weight draws per input (posterior draws for `empirical`).
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    max_verifier_calls: Option<u64>,
    #[arg(long)]
    max_iters: Option<u32>,
    #[arg(long)]
    ie_cap: Option<usize>,
    #[arg(long)]
    mc_samples: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    disjoint: Option<bool>,
    /// Output directory; the main report goes to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, value_delimiter = ',', num_args = 1)]
    rho_grid: Option<Vec<f64>>,
    /// PGD steps.
    #[arg(long)]
    steps: Option<usize>,
    /// PGD step size; defaults to 2.5 * epsilon / steps.
    #[arg(long)]
    step_size: Option<f64>,
    /// Posterior draws for the empirical estimate in `bench`; off when omitted.
    #[arg(long)]
    empirical_samples: Option<usize>,
    /// Attack radius; defaults to `--epsilon`.
    #[arg(long)]
    attack_epsilon: Option<f64>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl Opts {
    fn with_config_file(mut self) -> Result<Self, CliError> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let file: Opts =
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        overlay!(self, file;
            network, inputs, labels, indices, spec, method, verifier, epsilon, clip, lambda,
            lambda_sampling, lambda_pie, lambda_gie, rho, samples, max_verifier_calls, max_iters,
            ie_cap, mc_samples, seed, disjoint, out, workers, rho_grid, steps, step_size,
            empirical_samples, attack_epsilon,
        );
        Ok(self)
    }
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(bnncert::Error),
    Invariant(String),
}

impl From<bnncert::Error> for CliError {
    fn from(e: bnncert::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Core(_) => 2,
            CliError::Invariant(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "error: {m}"),
            CliError::Core(e) => write!(f, "error: {e}"),
            CliError::Invariant(m) => write!(f, "internal invariant violated: {m}"),
        }
    }
}

/// Fully resolved run configuration, embedded in every report.
#[derive(Debug, Clone, Serialize)]
struct Resolved {
    command: &'static str,
    network: PathBuf,
    inputs: Option<PathBuf>,
    labels: Option<PathBuf>,
    spec: Option<PathBuf>,
    indices: Vec<usize>,
    epsilon: f64,
    clip: Option<[f64; 2]>,
    method: Method,
    params: CertifyParams,
    lambdas: MethodLambdas,
    rho_grid: Vec<f64>,
    pgd: PgdOptions,
    attack_epsilon: f64,
    empirical_samples: Option<usize>,
}

struct Task {
    index: usize,
    label: Option<usize>,
    x: Vec<f64>,
    spec: RobustnessSpec,
}

fn usage(m: impl Into<String>) -> CliError {
    CliError::Usage(m.into())
}

/// Prefixes file-level failures with the offending path.
fn at_path<T>(path: &Path, r: bnncert::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| match e {
        bnncert::Error::Io(_) | bnncert::Error::Json(_) | bnncert::Error::Format(_) | bnncert::Error::Csv(_) => {
            usage(format!("{}: {e}", path.display()))
        }
        other => CliError::Core(other),
    })
}

fn resolve(command: &'static str, o: &Opts) -> Result<Resolved, CliError> {
    let network = o.network.clone().ok_or_else(|| usage("missing --network"))?;
    let clip = match o.clip.as_deref() {
        None => None,
        Some([lo, hi]) => Some([*lo, *hi]),
        Some(_) => return Err(usage("--clip takes two values, e.g. 0,1")),
    };
    let defaults = CertifyParams::default();
    let lambda = o.lambda.unwrap_or(defaults.lambda);
    let params = CertifyParams {
        samples: o.samples.unwrap_or(defaults.samples),
        lambda,
        rho: o.rho.unwrap_or(defaults.rho),
        max_verifier_calls: o.max_verifier_calls.unwrap_or(defaults.max_verifier_calls),
        max_expand_iters: o.max_iters.unwrap_or(defaults.max_expand_iters),
        seed: o.seed.unwrap_or(defaults.seed),
        verifier: o.verifier.unwrap_or(defaults.verifier),
        disjoint: o.disjoint.unwrap_or(defaults.disjoint),
        ie_cap: o.ie_cap.unwrap_or(defaults.ie_cap),
        mc_samples: o.mc_samples.unwrap_or(defaults.mc_samples),
    };
    params.validate()?;
    let epsilon = o.epsilon.unwrap_or(0.0);
    let steps = o.steps.unwrap_or(PgdOptions::default().steps);
    let empirical_samples = match command {
        "empirical" => Some(o.empirical_samples.or(o.samples).unwrap_or(evalkit::DEFAULT_EMPIRICAL_SAMPLES)),
        _ => o.empirical_samples,
    };
    let indices = match &o.indices {
        Some(s) => parse_indices(s).map_err(usage)?,
        None => Vec::new(),
    };
    Ok(Resolved {
        command,
        network,
        inputs: o.inputs.clone(),
        labels: o.labels.clone(),
        spec: o.spec.clone(),
        indices,
        epsilon,
        clip,
        method: o.method.unwrap_or(Method::Pie),
        lambdas: MethodLambdas {
            sampling: o.lambda_sampling.unwrap_or(lambda),
            pie: o.lambda_pie.unwrap_or(lambda),
            gie: o.lambda_gie.unwrap_or(lambda),
        },
        params,
        rho_grid: o.rho_grid.clone().unwrap_or_else(|| vec![0.0, 0.1, 0.2, 0.4, 0.8]),
        pgd: PgdOptions {
            steps,
            step_size: o.step_size,
            clip,
        },
        attack_epsilon: o.attack_epsilon.unwrap_or(epsilon),
        empirical_samples,
    })
}

fn read_specs(path: &Path) -> Result<Vec<RobustnessSpec>, CliError> {
    let text = at_path(path, fs::read_to_string(path).map_err(Into::into))?;
    let value: serde_json::Value = at_path(path, serde_json::from_str(&text).map_err(Into::into))?;
    let specs: Vec<RobustnessSpec> = if value.is_array() {
        at_path(path, serde_json::from_value(value).map_err(Into::into))?
    } else {
        vec![at_path(path, serde_json::from_value(value).map_err(Into::into))?]
    };
    for s in &specs {
        s.validate()?;
    }
    Ok(specs)
}

fn load_tasks(cfg: &mut Resolved, net: &Network) -> Result<Vec<Task>, CliError> {
    let mut tasks = Vec::new();
    if let Some(path) = &cfg.spec {
        for (index, spec) in read_specs(path)?.into_iter().enumerate() {
            let spec = match cfg.clip {
                Some([lo, hi]) if spec.clip.is_none() => spec.with_clip(lo, hi)?,
                _ => spec,
            };
            tasks.push(Task {
                index,
                label: None,
                x: spec.center.clone(),
                spec,
            });
        }
    } else {
        let inputs_path = cfg.inputs.as_ref().ok_or_else(|| usage("give --spec, or --inputs with --labels"))?;
        let labels_path = cfg.labels.as_ref().ok_or_else(|| usage("--inputs needs --labels"))?;
        let xs = at_path(inputs_path, read_inputs(inputs_path))?;
        let labels = at_path(labels_path, read_labels(labels_path))?;
        if labels.len() < xs.len() {
            return Err(usage(format!("{} inputs but only {} labels", xs.len(), labels.len())));
        }
        let classes = net.output_dim();
        for (index, x) in xs.into_iter().enumerate() {
            let label = labels[index];
            let others = all_other_classes(label, classes);
            let mut spec = make_classification_spec(x.clone(), cfg.epsilon, label, &others, classes)?;
            if let Some([lo, hi]) = cfg.clip {
                spec = spec.with_clip(lo, hi)?;
            }
            tasks.push(Task {
                index,
                label: Some(label),
                x,
                spec,
            });
        }
    }
    if cfg.indices.is_empty() {
        cfg.indices = (0..tasks.len()).collect();
    } else {
        if let Some(&bad) = cfg.indices.iter().find(|&&i| i >= tasks.len()) {
            return Err(usage(format!("index {bad} out of range for {} inputs", tasks.len())));
        }
        let mut slots: Vec<Option<Task>> = tasks.into_iter().map(Some).collect();
        tasks = Vec::new();
        for &i in &cfg.indices {
            let t = slots[i].take().ok_or_else(|| usage(format!("index {i} listed twice")))?;
            tasks.push(t);
        }
    }
    if tasks.is_empty() {
        return Err(usage("no inputs to process"));
    }
    for t in &tasks {
        t.spec.check_against(net)?;
    }
    Ok(tasks)
}

fn check_certificate(c: &Certificate, net: &Network, spec: &RobustnessSpec, index: usize) -> Result<(), CliError> {
    if c.lbp_calls > c.params.max_verifier_calls {
        return Err(CliError::Invariant(format!(
            "input {index}: {} verifier calls exceed the budget of {}",
            c.lbp_calls, c.params.max_verifier_calls
        )));
    }
    if !(0.0..=1.0).contains(&c.p_safe) {
        return Err(CliError::Invariant(format!("input {index}: p_safe {} outside [0, 1]", c.p_safe)));
    }
    if !certify::reverify(net, spec, c) {
        return Err(CliError::Invariant(format!("input {index}: a certified box no longer verifies")));
    }
    Ok(())
}

struct Output<'a> {
    dir: Option<&'a Path>,
}

impl Output<'_> {
    fn write(&self, name: &str, bytes: &[u8], to_stdout: bool) -> Result<(), CliError> {
        match self.dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                fs::write(dir.join(name), bytes)?;
            }
            None if to_stdout => {
                let mut out = std::io::stdout().lock();
                out.write_all(bytes)?;
                out.flush()?;
            }
            None => {}
        }
        Ok(())
    }

    fn json<T: Serialize>(&self, name: &str, value: &T, to_stdout: bool) -> Result<(), CliError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(bnncert::Error::from)?;
        bytes.push(b'\n');
        self.write(name, &bytes, to_stdout)
    }
}

#[derive(Serialize)]
struct VerifyResult {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    certificate: CertificateReport,
}

#[derive(Serialize)]
struct VerifyReport<'a> {
    config: &'a Resolved,
    results: Vec<VerifyResult>,
    mean_psafe: f64,
}

#[derive(Serialize)]
struct TimingEntry {
    index: usize,
    method: Method,
    seconds: evalkit::PhaseSeconds,
}

#[derive(Serialize)]
struct TimingFile {
    workers: usize,
    entries: Vec<TimingEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gradient_overhead: Option<evalkit::TimingReport>,
}

fn cmd_verify(cfg: &Resolved, net: &Network, tasks: &[Task], out: &Output) -> Result<(), CliError> {
    let certs = tasks
        .par_iter()
        .map(|t| certify::certify(net, &t.spec, cfg.method, &cfg.params))
        .collect::<bnncert::Result<Vec<_>>>()?;
    for (t, c) in tasks.iter().zip(&certs) {
        check_certificate(c, net, &t.spec, t.index)?;
    }
    let report = VerifyReport {
        config: cfg,
        results: tasks
            .iter()
            .zip(&certs)
            .map(|(t, c)| VerifyResult {
                index: t.index,
                label: t.label,
                certificate: c.into(),
            })
            .collect(),
        mean_psafe: evalkit::mean(&certs.iter().map(|c| c.p_safe).collect::<Vec<_>>()),
    };
    out.json("verify.json", &report, true)?;
    let timing = TimingFile {
        workers: rayon::current_num_threads(),
        entries: tasks
            .iter()
            .zip(&certs)
            .map(|(t, c)| TimingEntry {
                index: t.index,
                method: c.method,
                seconds: (&c.timings).into(),
            })
            .collect(),
        gradient_overhead: None,
    };
    out.json("timing.json", &timing, false)
}

#[derive(Serialize)]
struct BenchResult {
    index: usize,
    certificates: BTreeMap<Method, CertificateReport>,
}

#[derive(Serialize)]
struct BenchReport {
    report: EvalReport,
    iterations: BTreeMap<Method, IterationStats>,
    results: Vec<BenchResult>,
}

fn network_name(cfg: &Resolved) -> String {
    cfg.network
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "network".into())
}

fn table_csv(cfg: &Resolved, report: &EvalReport) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mean = |m: Method| report.aggregates.mean_psafe.get(&m).copied().unwrap_or(0.0).to_string();
    w.write_record(["network", "inputs", "budget", "sampling", "pie", "gie"])
        .map_err(bnncert::Error::from)?;
    w.write_record([
        network_name(cfg),
        report.aggregates.inputs.to_string(),
        cfg.params.max_verifier_calls.to_string(),
        mean(Method::Sampling),
        mean(Method::Pie),
        mean(Method::Gie),
    ])
    .map_err(bnncert::Error::from)?;
    w.into_inner().map_err(|e| CliError::Core(e.into_error().into()))
}

fn cmd_bench(cfg: &Resolved, net: &Network, tasks: &[Task], out: &Output) -> Result<(), CliError> {
    type Row = (Comparison, Option<EmpiricalEstimate>, Option<AttackResult>);
    let rows = tasks
        .par_iter()
        .map(|t| -> bnncert::Result<Row> {
            let cmp = certify::run_budgeted_comparison(net, &t.spec, &cfg.params, cfg.lambdas)?;
            let emp = match cfg.empirical_samples {
                Some(n) => {
                    let mut rng = draw_rng(cfg.params.seed, AUX_STREAM + t.index as u64);
                    Some(evalkit::empirical_psafe(net, &t.spec, n, &mut rng)?)
                }
                None => None,
            };
            let att = match (cfg.attack_epsilon > 0.0, t.label) {
                (true, Some(label)) => Some(evalkit::pgd_attack_mean(net, &t.x, label, cfg.attack_epsilon, &cfg.pgd)?),
                _ => None,
            };
            Ok((cmp, emp, att))
        })
        .collect::<bnncert::Result<Vec<Row>>>()?;
    let mut records = Vec::new();
    let mut results = Vec::new();
    for (t, (cmp, emp, att)) in tasks.iter().zip(&rows) {
        let mut p_safe = BTreeMap::new();
        let mut calls = BTreeMap::new();
        let mut certificates = BTreeMap::new();
        for m in Method::ALL {
            let c = cmp.get(m);
            check_certificate(c, net, &t.spec, t.index)?;
            p_safe.insert(m, c.p_safe);
            calls.insert(m, c.lbp_calls);
            certificates.insert(m, CertificateReport::from(c));
        }
        records.push(InputRecord {
            index: t.index,
            label: t.label,
            p_safe,
            lbp_calls: calls,
            empirical: emp.map(|e| e.value),
            attack_success: att.as_ref().map(|a| a.success),
        });
        results.push(BenchResult {
            index: t.index,
            certificates,
        });
    }
    let metadata = serde_json::to_value(cfg).map_err(bnncert::Error::from)?;
    let report = EvalReport::new(metadata, records);
    let iterations = Method::ALL
        .into_iter()
        .map(|m| {
            let certs: Vec<Certificate> = rows.iter().map(|r| r.0.get(m).clone()).collect();
            (m, evalkit::iteration_stats(net.posterior(), &certs))
        })
        .collect();

    let table = table_csv(cfg, &report)?;
    out.write("bench.csv", &table, true)?;
    let mut records_csv = Vec::new();
    report.write_csv(&mut records_csv)?;
    out.write("records.csv", &records_csv, false)?;
    out.json(
        "bench.json",
        &BenchReport {
            report,
            iterations,
            results,
        },
        false,
    )?;

    let pie: Vec<Certificate> = rows.iter().map(|r| r.0.pie.clone()).collect();
    let gie: Vec<Certificate> = rows.iter().map(|r| r.0.gie.clone()).collect();
    let mut entries = Vec::new();
    for (t, r) in tasks.iter().zip(&rows) {
        for m in Method::ALL {
            entries.push(TimingEntry {
                index: t.index,
                method: m,
                seconds: (&r.0.get(m).timings).into(),
            });
        }
    }
    let timing = TimingFile {
        workers: rayon::current_num_threads(),
        entries,
        gradient_overhead: Some(evalkit::timing_report(&network_name(cfg), &pie, &gie)),
    };
    out.json("timing.json", &timing, false)
}

#[derive(Serialize)]
struct AttackEntry {
    index: usize,
    label: usize,
    #[serde(flatten)]
    result: AttackResult,
}

#[derive(Serialize)]
struct AttackReport<'a> {
    config: &'a Resolved,
    results: Vec<AttackEntry>,
    adversarial_accuracy: f64,
}

fn cmd_attack(cfg: &Resolved, net: &Network, tasks: &[Task], out: &Output) -> Result<(), CliError> {
    let labeled = tasks
        .iter()
        .map(|t| t.label.map(|l| (t, l)))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| usage("attack needs --inputs with --labels"))?;
    let results = labeled
        .par_iter()
        .map(|&(t, label)| {
            evalkit::pgd_attack_mean(net, &t.x, label, cfg.attack_epsilon, &cfg.pgd).map(|result| AttackEntry {
                index: t.index,
                label,
                result,
            })
        })
        .collect::<bnncert::Result<Vec<_>>>()?;
    let survived: Vec<f64> = results.iter().map(|r| if r.result.success { 0.0 } else { 1.0 }).collect();
    let report = AttackReport {
        config: cfg,
        adversarial_accuracy: evalkit::mean(&survived),
        results,
    };
    out.json("attack.json", &report, true)
}

#[derive(Serialize)]
struct EmpiricalEntry {
    index: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(flatten)]
    estimate: EmpiricalEstimate,
}

#[derive(Serialize)]
struct EmpiricalReport<'a> {
    config: &'a Resolved,
    results: Vec<EmpiricalEntry>,
    mean: f64,
}

fn cmd_empirical(cfg: &Resolved, net: &Network, tasks: &[Task], out: &Output) -> Result<(), CliError> {
    let n = cfg.empirical_samples.unwrap_or(evalkit::DEFAULT_EMPIRICAL_SAMPLES);
    let results = tasks
        .par_iter()
        .map(|t| {
            let mut rng = draw_rng(cfg.params.seed, AUX_STREAM + t.index as u64);
            evalkit::empirical_psafe(net, &t.spec, n, &mut rng).map(|estimate| EmpiricalEntry {
                index: t.index,
                label: t.label,
                estimate,
            })
        })
        .collect::<bnncert::Result<Vec<_>>>()?;
    let values: Vec<f64> = results.iter().map(|r| r.estimate.value).collect();
    let report = EmpiricalReport {
        config: cfg,
        mean: evalkit::mean(&values),
        results,
    };
    out.json("empirical.json", &report, true)
}

fn cmd_ablate(cfg: &Resolved, net: &Network, tasks: &[Task], out: &Output) -> Result<(), CliError> {
    let specs: Vec<RobustnessSpec> = tasks.iter().map(|t| t.spec.clone()).collect();
    let params = CertifyParams {
        lambda: cfg.lambdas.gie,
        ..cfg.params.clone()
    };
    let rows = evalkit::ablate_rho(net, &specs, &cfg.rho_grid, &params)?;
    let mut csv = Vec::new();
    evalkit::write_ablation_csv(&mut csv, &rows, &network_name(cfg), params.max_verifier_calls, params.seed)?;
    out.write("ablation.csv", &csv, true)
}

fn dispatch(command: &Command) -> Result<(), CliError> {
    let opts = command.opts().clone().with_config_file()?;
    let mut cfg = resolve(command.name(), &opts)?;
    let net = at_path(&cfg.network, io::load_network(&cfg.network))?;
    let tasks = load_tasks(&mut cfg, &net)?;
    let out = Output {
        dir: opts.out.as_deref(),
    };
    let go = || match command {
        Command::Verify(_) => cmd_verify(&cfg, &net, &tasks, &out),
        Command::Bench(_) => cmd_bench(&cfg, &net, &tasks, &out),
        Command::Attack(_) => cmd_attack(&cfg, &net, &tasks, &out),
        Command::Empirical(_) => cmd_empirical(&cfg, &net, &tasks, &out),
        Command::Ablate(_) => cmd_ablate(&cfg, &net, &tasks, &out),
    };
    match opts.workers {
        Some(0) => Err(usage("--workers must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| usage(e.to_string()))?
            .install(go),
        None => go(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(&cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{e}");
            e.code()
        }
    }
}
