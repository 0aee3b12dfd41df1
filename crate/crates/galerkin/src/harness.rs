//! Experiment orchestration: declarative TOML configs, built-in presets, the
//! six commands and their output artifacts.
//!
//! Every command writes its data files, a JSON report wrapped with the config
//! hash, the resolved config, and `manifest-<command>.json` listing each file
//! with its SHA-256. Rerunning into a directory whose manifest carries a
//! different config hash is refused.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use thiserror::Error;

use crate::coefficients::{check_k_assumptions, check_regime, BumpFamily, CoefficientSpec, RegimeExtras};
use crate::galerkin_sde::{simulate_path, GalerkinSystem, Integrator, Scheme, SdeError, SimConfig};
use crate::hypocoercivity::{centered_norm, estimate_decay, estimate_ergodic_error, HypocConstants, HypocError};
use crate::kolmogorov::{audit_identities, bounded_battery, sample_mu_phi, standard_battery, Cylinder, KolmogorovError, OperatorContext, Var};
use crate::mc::linear_fit;
use crate::potential::{PhiSpec, PotentialVariant, RegularizationSpec};
use crate::spectral_gaussian::{sample_gaussian, GaussianSpec};

/// Accepted range for the log-log slope of the ergodic error.
pub const ERGODIC_SLOPE_RANGE: (f64, f64) = (-0.65, -0.35);

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("output directory {dir} holds results of a different config (hash {found}, expected {expected})")]
    HashMismatch { dir: PathBuf, found: String, expected: String },
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Numerical(_) => 2,
            _ => 3,
        }
    }
}

impl From<SdeError> for HarnessError {
    fn from(e: SdeError) -> Self {
        match e {
            SdeError::Config(m) => HarnessError::Config(m),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}

impl From<HypocError> for HarnessError {
    fn from(e: HypocError) -> Self {
        match e {
            HypocError::Sde(s) => s.into(),
            HypocError::Domain(m) => HarnessError::Config(m),
            other => HarnessError::Numerical(other.to_string()),
        }
    }
}

impl From<KolmogorovError> for HarnessError {
    fn from(e: KolmogorovError) -> Self {
        HarnessError::Config(e.to_string())
    }
}

// ---------------------------------------------------------------------------
// Config
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PotentialConfig {
    pub phi: PhiSpec,
    pub variant: PotentialVariant,
    #[serde(default)]
    pub regularization: Option<RegularizationSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimSection {
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub scheme: Scheme,
    pub paths: usize,
    pub save_every: usize,
    /// Initial state `[x, y]`; zeros when absent.
    #[serde(default)]
    pub initial: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Budgets {
    /// Importance-sampling budget for expectations under `μ^Φ`.
    pub mc: usize,
    /// Samples dumped by `sample`.
    pub sample_count: usize,
    /// Samples for the structural coefficient checks and `C₂`, `M₂₂`.
    pub k_samples: usize,
    pub outer: usize,
    pub inner: usize,
    pub reps: usize,
    pub quad_nodes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Experiments {
    pub theta1: f64,
    pub decay_function: Cylinder,
    pub decay_times: Vec<f64>,
    pub decay_dt: f64,
    pub ergodic_function: Cylinder,
    pub ergodic_times: Vec<f64>,
    pub ergodic_dt: f64,
    /// Largest base dimension of the random polynomial audit battery.
    pub audit_max_dim: usize,
    #[serde(default)]
    pub regime: RegimeExtras,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub n: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub coefficients: CoefficientSpec,
    pub potential: PotentialConfig,
    pub sim: SimSection,
    pub budgets: Budgets,
    pub experiments: Experiments,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    OuLinear,
    ConvexQuadratic,
    PaperFinalRemark,
    NonconvexPerturbed,
}

impl Preset {
    pub const ALL: [Preset; 4] = [Preset::OuLinear, Preset::ConvexQuadratic, Preset::PaperFinalRemark, Preset::NonconvexPerturbed];

    pub fn name(self) -> &'static str {
        match self {
            Preset::OuLinear => "ou-linear",
            Preset::ConvexQuadratic => "convex-quadratic",
            Preset::PaperFinalRemark => "paper-final-remark",
            Preset::NonconvexPerturbed => "nonconvex-perturbed",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == s)
    }

    pub fn config(self) -> ExperimentConfig {
        let mut coefficients = CoefficientSpec::final_remark();
        let (phi, variant, regularization) = match self {
            Preset::OuLinear => {
                coefficients.bumps = BumpFamily::None;
                (PhiSpec::zero(), PotentialVariant::Zero, None)
            }
            Preset::ConvexQuadratic => (PhiSpec::quadratic(0.5), PotentialVariant::Raw, None),
            Preset::PaperFinalRemark => {
                let phi = PhiSpec::quadratic_quartic(0.5, 0.25);
                let reg = RegularizationSpec::for_phi(&phi).expect("quartic growth is admissible");
                (phi, PotentialVariant::Regularized { m: 10 }, Some(reg))
            }
            Preset::NonconvexPerturbed => (PhiSpec::quadratic_with_bump(0.5, 1.0, 0.5), PotentialVariant::Raw, None),
        };
        let extras = RegimeExtras::final_remark(&coefficients);
        ExperimentConfig {
            name: self.name().to_string(),
            n: 4,
            seed: 20240607,
            out: PathBuf::from(format!("out/{}", self.name())),
            coefficients,
            potential: PotentialConfig { phi, variant, regularization },
            sim: SimSection { dt: 1e-3, horizon: 10.0, scheme: Scheme::SemiImplicitLinear, paths: 2, save_every: 100, initial: None },
            budgets: Budgets { mc: 200_000, sample_count: 10_000, k_samples: 20_000, outer: 512, inner: 256, reps: 64, quad_nodes: 64 },
            experiments: Experiments {
                theta1: 2.0,
                decay_function: Cylinder::y(1),
                decay_times: vec![0.0, 1.0, 2.0, 5.0, 10.0],
                decay_dt: 1e-2,
                ergodic_function: Cylinder::monomial(1.0, &[(Var::Y(1), 2)]),
                ergodic_times: vec![10.0, 100.0, 1000.0],
                ergodic_dt: 1e-3,
                audit_max_dim: 3,
                regime: extras,
            },
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn cfg_err<E: fmt::Display>(e: E) -> HarnessError {
    HarnessError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(cfg_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// SHA-256 of the canonical TOML serialization.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.n == 0 {
            return Err(HarnessError::Config("n must be positive".into()));
        }
        self.coefficients.validate().map_err(cfg_err)?;
        let b = &self.budgets;
        if [b.mc, b.sample_count, b.k_samples, b.outer, b.inner, b.reps, b.quad_nodes].contains(&0) {
            return Err(HarnessError::Config("all budgets must be positive".into()));
        }
        if b.quad_nodes < 2 {
            return Err(HarnessError::Config("quad_nodes must be at least 2".into()));
        }
        self.sim_config().validate()?;
        if let Some(w0) = &self.sim.initial {
            if w0.len() != 2 * self.n || w0.iter().any(|v| !v.is_finite()) {
                return Err(HarnessError::Config(format!("initial state must have {} finite entries", 2 * self.n)));
            }
        }
        if let PotentialVariant::Regularized { .. } = self.potential.variant {
            if self.potential.regularization.is_none() {
                return Err(HarnessError::Config("regularized variant needs a [potential.regularization] section".into()));
            }
        }
        let e = &self.experiments;
        if !(e.theta1 > 1.0) {
            return Err(HarnessError::Config("theta1 must exceed 1".into()));
        }
        Integrator::new(e.decay_dt, self.sim.scheme)?;
        Integrator::new(e.ergodic_dt, self.sim.scheme)?;
        for (name, f) in [("decay_function", &e.decay_function), ("ergodic_function", &e.ergodic_function)] {
            if f.base_dim() > self.n {
                return Err(HarnessError::Config(format!("{name} uses {} modes but n = {}", f.base_dim(), self.n)));
            }
        }
        if e.audit_max_dim == 0 {
            return Err(HarnessError::Config("audit_max_dim must be positive".into()));
        }
        Ok(())
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            dt: self.sim.dt,
            horizon: self.sim.horizon,
            scheme: self.sim.scheme,
            seed: self.seed,
            paths: self.sim.paths,
            save_every: self.sim.save_every,
        }
    }

    pub fn context(&self) -> Result<OperatorContext, HarnessError> {
        OperatorContext::new(
            &self.coefficients,
            &self.potential.phi,
            self.potential.regularization.as_ref(),
            self.potential.variant,
            self.n,
            self.budgets.quad_nodes,
        )
        .map_err(cfg_err)
    }

    pub fn system(&self) -> Result<GalerkinSystem, HarnessError> {
        Ok(GalerkinSystem::assemble(&self.context()?, self.n)?)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Sample,
    Check,
    Audit,
    Simulate,
    Decay,
    Ergodic,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Sample => "sample",
            Command::Check => "check",
            Command::Audit => "audit",
            Command::Simulate => "simulate",
            Command::Decay => "decay",
            Command::Ergodic => "ergodic",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    VerdictFailed,
    NumericalFailure,
}

impl Status {
    pub fn exit_code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::VerdictFailed => 1,
            Status::NumericalFailure => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config_name: String,
    pub config_hash: String,
    pub crate_version: String,
    pub seed: u64,
    pub status: Status,
    pub messages: Vec<String>,
    pub files: Vec<FileEntry>,
}

/// Result of one command run.
#[derive(Clone, Debug)]
pub struct Outcome {
    pub status: Status,
    pub messages: Vec<String>,
    pub manifest: PathBuf,
}

struct Writer {
    dir: PathBuf,
    hash: String,
    files: Vec<FileEntry>,
}

impl Writer {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), HarnessError> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|source| HarnessError::Io { path, source })?;
        self.files.push(FileEntry { path: name.to_string(), sha256: hex(&Sha256::digest(bytes)) });
        Ok(())
    }

    /// JSON report wrapped as `{config_hash, report}`.
    fn report<T: Serialize>(&mut self, name: &str, report: &T) -> Result<(), HarnessError> {
        #[derive(Serialize)]
        struct Wrapped<'a, T> {
            config_hash: &'a str,
            report: &'a T,
        }
        let bytes = serde_json::to_vec_pretty(&Wrapped { config_hash: &self.hash, report }).map_err(cfg_err)?;
        self.write(name, &bytes)
    }
}

fn csv_bytes<F>(f: F) -> Result<Vec<u8>, HarnessError>
where
    F: FnOnce(&mut Vec<u8>) -> Result<(), String>,
{
    let mut buf = vec![];
    f(&mut buf).map_err(HarnessError::Numerical)?;
    Ok(buf)
}

fn rows_csv(header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<Vec<u8>, HarnessError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(header).map_err(|e| e.to_string())?;
        for r in rows {
            w.write_record(r.iter().map(|v| v.to_string())).map_err(|e| e.to_string())?;
        }
        w.flush().map_err(|e| e.to_string())
    })
}

fn coords(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|k| format!("{prefix}_{k}")).collect()
}

/// Runs `cmd` for `cfg`, writing into `cfg.out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig) -> Result<Outcome, HarnessError> {
    cfg.validate()?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).map_err(|source| HarnessError::Io { path: dir.clone(), source })?;
    let hash = cfg.hash();
    let manifest_path = dir.join(format!("manifest-{}.json", cmd.name()));
    if let Ok(text) = fs::read_to_string(&manifest_path) {
        let old: Manifest = serde_json::from_str(&text).map_err(|e| HarnessError::Config(format!("unreadable manifest: {e}")))?;
        if old.config_hash != hash {
            return Err(HarnessError::HashMismatch { dir, found: old.config_hash, expected: hash });
        }
    }
    let mut w = Writer { dir: dir.clone(), hash: hash.clone(), files: vec![] };
    w.write(&format!("config-{}.toml", cmd.name()), cfg.to_toml().as_bytes())?;
    let (status, messages) = match cmd {
        Command::Sample => cmd_sample(cfg, &mut w)?,
        Command::Check => cmd_check(cfg, &mut w)?,
        Command::Audit => cmd_audit(cfg, &mut w)?,
        Command::Simulate => cmd_simulate(cfg, &mut w)?,
        Command::Decay => cmd_decay(cfg, &mut w)?,
        Command::Ergodic => cmd_ergodic(cfg, &mut w)?,
    };
    let manifest = Manifest {
        command: cmd.name().to_string(),
        config_name: cfg.name.clone(),
        config_hash: hash,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed,
        status,
        messages: messages.clone(),
        files: w.files,
    };
    let bytes = serde_json::to_vec_pretty(&manifest).map_err(cfg_err)?;
    fs::write(&manifest_path, bytes).map_err(|source| HarnessError::Io { path: manifest_path.clone(), source })?;
    Ok(Outcome { status, messages, manifest: manifest_path })
}

type CmdResult = Result<(Status, Vec<String>), HarnessError>;

#[derive(Serialize)]
struct SampleSummary {
    count: usize,
    ess: f64,
    ess_ratio: f64,
    degenerate: bool,
    /// Quantiles of `w / mean(w)` at 0.5, 0.9, 0.99 and the maximum.
    weight_quantiles: [f64; 4],
}

fn cmd_sample(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let n = cfg.n;
    let count = cfg.budgets.sample_count;
    for (name, exponent, stream) in [("gaussian_mu1.csv", cfg.coefficients.alpha1, 1), ("gaussian_mu2.csv", cfg.coefficients.alpha2, 2)] {
        let spec = GaussianSpec::new(exponent, n).map_err(cfg_err)?;
        let samples = sample_gaussian(&spec, cfg.seed.wrapping_add(stream), count);
        w.write(name, &rows_csv(&coords("x", n), samples.into_iter().map(|s| s.into_vec()))?)?;
    }
    let ctx = cfg.context()?;
    let s = sample_mu_phi(&ctx, count, cfg.seed);
    let mut header = vec!["weight".to_string()];
    header.extend(coords("x", n));
    header.extend(coords("y", n));
    let rows = (0..s.len()).map(|i| {
        let (x, y) = s.state(i);
        let mut r = vec![s.weights[i]];
        r.extend_from_slice(x);
        r.extend_from_slice(y);
        r
    });
    w.write("mu_phi_samples.csv", &rows_csv(&header, rows)?)?;
    let est = s.estimate(&vec![0.0; s.len()]);
    let mean_w = s.weights.iter().sum::<f64>() / s.len() as f64;
    let mut norm: Vec<f64> = s.weights.iter().map(|v| v / mean_w).collect();
    norm.sort_by(f64::total_cmp);
    let q = |p: f64| norm[((norm.len() - 1) as f64 * p).round() as usize];
    let summary = SampleSummary {
        count,
        ess: est.ess,
        ess_ratio: est.ess / count as f64,
        degenerate: est.degenerate,
        weight_quantiles: [q(0.5), q(0.9), q(0.99), q(1.0)],
    };
    w.report("sample_summary.json", &summary)?;
    let msg = format!("ESS {:.1} of {} ({:.3})", summary.ess, count, summary.ess_ratio);
    if summary.degenerate {
        return Ok((Status::NumericalFailure, vec![format!("degenerate importance weights: {msg}")]));
    }
    Ok((Status::Ok, vec![msg]))
}

fn cmd_check(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let regime = check_regime(&cfg.coefficients, &cfg.potential.phi, &cfg.experiments.regime);
    let k = check_k_assumptions(&cfg.coefficients, Some(&cfg.potential.phi), cfg.n, cfg.budgets.k_samples, cfg.seed)
        .map_err(cfg_err)?;
    w.report("regime.json", &regime)?;
    w.write("regime.txt", regime.to_table().as_bytes())?;
    w.report("k_assumptions.json", &k)?;
    let v = &regime.verdicts;
    let mut messages = vec![];
    for (label, ok) in [
        ("m-dissipativity", v.m_dissipativity),
        ("hypocoercivity", v.hypocoercivity),
        ("process", v.process),
        ("ergodicity", v.ergodicity),
    ] {
        messages.push(format!("{label}: {}", if ok { "pass" } else { "FAIL" }));
    }
    for c in regime.conditions.iter().filter(|c| !c.pass && !c.groups.is_empty()) {
        messages.push(format!("failing: {} ({})", c.name, c.rendered));
    }
    for c in k.checks.iter().filter(|c| !c.pass) {
        messages.push(format!("failing: {} ({})", c.name, c.detail));
    }
    let ok = v.m_dissipativity && v.hypocoercivity && v.process && v.ergodicity && k.all_pass();
    Ok((if ok { Status::Ok } else { Status::VerdictFailed }, messages))
}

/// Consecutive pairs over the audit battery restricted to `n` modes.
pub fn audit_battery(cfg: &ExperimentConfig) -> Vec<(Cylinder, Cylinder)> {
    let mut fs = standard_battery(cfg.experiments.audit_max_dim.min(cfg.n), cfg.seed);
    fs.extend(bounded_battery().into_iter().filter(|f| f.base_dim() <= cfg.n));
    (0..fs.len()).map(|i| (fs[i].clone(), fs[(i + 1) % fs.len()].clone())).collect()
}

fn cmd_audit(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let ctx = cfg.context()?;
    let battery = audit_battery(cfg);
    let report = audit_identities(&ctx, &battery, cfg.budgets.mc, cfg.seed)?;
    w.report("audit.json", &report)?;
    let mut buf = vec![];
    report.write_csv(&mut buf).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    w.write("audit.csv", &buf)?;
    let mut messages: Vec<String> = report
        .rows
        .iter()
        .filter(|r| !r.pass)
        .map(|r| format!("failing: pair {} {} = {:.3e} (SE {:.3e})", r.pair, r.identity, r.estimate, r.se))
        .collect();
    messages.insert(0, format!("{} rows, ESS {:.0}", report.rows.len(), report.ess));
    if report.degenerate {
        return Ok((Status::NumericalFailure, messages));
    }
    Ok((if report.all_pass() { Status::Ok } else { Status::VerdictFailed }, messages))
}

fn cmd_simulate(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let system = cfg.system()?;
    let sim = cfg.sim_config();
    let w0 = cfg.sim.initial.clone().unwrap_or_else(|| vec![0.0; 2 * cfg.n]);
    let mut messages = vec![];
    if let Some(m) = system.stability_warning(sim.dt) {
        eprintln!("warning: {m}");
        messages.push(m);
    }
    for i in 0..sim.paths {
        match simulate_path(&system, &w0, &sim, i as u64) {
            Ok(traj) => {
                let mut buf = vec![];
                traj.write_csv(&mut buf).map_err(|e| HarnessError::Numerical(e.to_string()))?;
                w.write(&format!("trajectory_{i:04}.csv"), &buf)?;
            }
            Err(SdeError::BlowUp { step, time }) => {
                messages.push(format!("path {i}: blow-up at step {step} (t = {time})"));
                return Ok((Status::NumericalFailure, messages));
            }
            Err(e) => return Err(e.into()),
        }
    }
    messages.push(format!("{} paths to t = {}", sim.paths, sim.horizon));
    Ok((Status::Ok, messages))
}

/// Indices `i` with `estimate[i+1] > estimate[i] + k·√(SE_i² + SE_{i+1}²)`.
pub fn increases_beyond_noise(rows: &[crate::hypocoercivity::CurveRow], k: f64) -> Vec<usize> {
    rows.windows(2)
        .enumerate()
        .filter(|(_, p)| p[1].estimate > p[0].estimate + k * (p[0].se.powi(2) + p[1].se.powi(2)).sqrt())
        .map(|(i, _)| i)
        .collect()
}

#[derive(Serialize)]
struct DecaySummary<'a> {
    constants: &'a HypocConstants,
    direct_norm: f64,
    t0_estimate: f64,
    t0_se: f64,
    bound_violations: usize,
    increases: Vec<usize>,
    excluded_paths: usize,
    dt_refinement: Option<DtRefinement>,
}

/// Last decay point recomputed at half the step size.
#[derive(Serialize)]
struct DtRefinement {
    t: f64,
    dt: f64,
    estimate: f64,
    se: f64,
    half_dt_estimate: f64,
    half_dt_se: f64,
    delta: f64,
}

fn cmd_decay(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let e = &cfg.experiments;
    let k = HypocConstants::compute(&cfg.coefficients, &cfg.potential.phi, cfg.n, cfg.budgets.k_samples, cfg.seed, e.theta1)?;
    w.report("constants.json", &k)?;
    let system = cfg.system()?;
    let integ = Integrator::new(e.decay_dt, cfg.sim.scheme)?;
    let curve = estimate_decay(
        &system,
        &e.decay_function,
        &e.decay_times,
        cfg.budgets.outer,
        cfg.budgets.inner,
        cfg.seed,
        integ,
        Some((k.theta1, k.theta2)),
    )?;
    let (_, direct) = centered_norm(&system, &e.decay_function, cfg.budgets.mc.max(1000), cfg.seed)?;
    let dt_refinement = match curve.rows.last() {
        Some(last) if last.t > 0.0 => {
            let half = Integrator::new(e.decay_dt / 2.0, cfg.sim.scheme)?;
            let fine = estimate_decay(
                &system,
                &e.decay_function,
                &[last.t],
                cfg.budgets.outer,
                cfg.budgets.inner,
                cfg.seed,
                half,
                None,
            )?;
            let r = fine.rows[0];
            Some(DtRefinement {
                t: last.t,
                dt: e.decay_dt,
                estimate: last.estimate,
                se: last.se,
                half_dt_estimate: r.estimate,
                half_dt_se: r.se,
                delta: r.estimate - last.estimate,
            })
        }
        _ => None,
    };
    let mut buf = vec![];
    curve.write_csv(&mut buf).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    w.write("decay.csv", &buf)?;
    let violations = curve.bound_violations(3.0);
    let increases = increases_beyond_noise(&curve.rows, 3.0);
    let first = curve.rows.first().copied();
    w.report(
        "decay_summary.json",
        &DecaySummary {
            constants: &k,
            direct_norm: direct,
            t0_estimate: first.map(|r| r.estimate).unwrap_or(f64::NAN),
            t0_se: first.map(|r| r.se).unwrap_or(f64::NAN),
            bound_violations: violations.len(),
            increases: increases.clone(),
            excluded_paths: curve.excluded,
            dt_refinement,
        },
    )?;
    let mut messages = vec![format!("theta2 = {:.6e}, {} times", k.theta2, curve.rows.len())];
    messages.extend(violations.iter().map(|r| format!("bound exceeded at t = {}: {} > {:?}", r.t, r.estimate, r.bound)));
    messages.extend(increases.iter().map(|i| format!("increase beyond noise after t = {}", curve.rows[*i].t)));
    if curve.degenerate {
        messages.push("degenerate outer importance weights".into());
        return Ok((Status::NumericalFailure, messages));
    }
    let ok = violations.is_empty() && increases.is_empty();
    Ok((if ok { Status::Ok } else { Status::VerdictFailed }, messages))
}

#[derive(Serialize)]
struct SlopeReport {
    slope: f64,
    intercept: f64,
    range: (f64, f64),
    in_range: bool,
    reference: f64,
    reference_se: f64,
    centered_norm: f64,
    theta1: f64,
    theta2: f64,
}

fn cmd_ergodic(cfg: &ExperimentConfig, w: &mut Writer) -> CmdResult {
    let e = &cfg.experiments;
    let k = HypocConstants::compute(&cfg.coefficients, &cfg.potential.phi, cfg.n, cfg.budgets.k_samples, cfg.seed, e.theta1)?;
    let system = cfg.system()?;
    let (mean, norm) = centered_norm(&system, &e.ergodic_function, cfg.budgets.mc.max(1000), cfg.seed)?;
    let integ = Integrator::new(e.ergodic_dt, cfg.sim.scheme)?;
    let curve = estimate_ergodic_error(
        &system,
        &e.ergodic_function,
        &e.ergodic_times,
        cfg.budgets.reps,
        cfg.seed,
        integ,
        mean.estimate,
        Some((k.theta1, k.theta2, norm)),
    )?;
    let mut buf = vec![];
    curve.write_csv(&mut buf).map_err(|e| HarnessError::Numerical(e.to_string()))?;
    w.write("ergodic.csv", &buf)?;
    let lx: Vec<f64> = curve.rows.iter().map(|r| r.t.ln()).collect();
    let ly: Vec<f64> = curve.rows.iter().map(|r| r.estimate.ln()).collect();
    let (slope, intercept) = if lx.len() >= 2 { linear_fit(&lx, &ly) } else { (f64::NAN, f64::NAN) };
    let in_range = slope >= ERGODIC_SLOPE_RANGE.0 && slope <= ERGODIC_SLOPE_RANGE.1;
    w.report(
        "ergodic_slope.json",
        &SlopeReport {
            slope,
            intercept,
            range: ERGODIC_SLOPE_RANGE,
            in_range,
            reference: mean.estimate,
            reference_se: mean.se,
            centered_norm: norm,
            theta1: k.theta1,
            theta2: k.theta2,
        },
    )?;
    let violations = curve.bound_violations(3.0);
    let mut messages = vec![format!("log-log slope {slope:.3}")];
    messages.extend(violations.iter().map(|r| format!("bound exceeded at t = {}", r.t)));
    if curve.excluded > 0 {
        messages.push(format!("{} repetitions blew up", curve.excluded));
        return Ok((Status::NumericalFailure, messages));
    }
    let ok = violations.is_empty() && in_range;
    Ok((if ok { Status::Ok } else { Status::VerdictFailed }, messages))
}
