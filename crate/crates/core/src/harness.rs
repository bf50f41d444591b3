//! Experiment configuration, pipelines, persistence and run manifests.
//!
//! Outputs go to `{out}/{experiment}/{metric}-{n}.csv|json`; every data file
//! is rendered in memory after deterministic aggregation, then written once
//! and hashed into `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::concentration::{self, ERefPolicy};
use crate::error::{Error, Result};
use crate::exact::{EnergyTable, Enumerator, DEFAULT_ENUMERATION_LIMIT};
use crate::mc::{self, PtConfig, ReplicaSampling, TemperatureLadder};
use crate::model::{Beta, ModelSpec};
use crate::replica::{self, BracketMode, Phi};
use crate::rng::{self, RNG_ID, SEED_DERIVATION_ID};
use crate::stats::{self, Estimate};

pub const MANIFEST_FILE: &str = "manifest.json";
/// Offset separating Monte Carlo master seeds from disorder seeds.
pub const MC_SEED_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pipeline {
    Exact,
    Concentration,
    Audit,
    Gg,
    Sample,
    Sweep,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::Exact => "exact",
            Pipeline::Concentration => "concentration",
            Pipeline::Audit => "audit",
            Pipeline::Gg => "gg",
            Pipeline::Sample => "sample",
            Pipeline::Sweep => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Sk,
    Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Auto,
    Exact,
    Mc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditKind {
    Tail,
    Moment,
    Sandwich,
}

/// Everything a run depends on. Field names mirror the CLI flags.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: String,
    pub pipeline: Pipeline,
    pub model: ModelKind,
    pub h: f64,
    pub ns: Vec<usize>,
    pub betas: Vec<f64>,
    pub c: f64,
    pub cprime: f64,
    pub lambda0: f64,
    pub delta_window: f64,
    pub e_ref: ERefPolicy,
    pub samples: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub mode: Mode,
    pub enumeration_limit: usize,
    pub histogram_bins: usize,
    pub audit_kind: AuditKind,
    pub epsilons: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub beta_prime: Option<f64>,
    /// Sandwich width; defaults to `2 |E(beta) - E(beta')|`.
    pub epsilon: Option<f64>,
    pub replicas: usize,
    pub phi: String,
    pub sweeps: usize,
    pub chains: usize,
    pub thin: usize,
    pub swap_interval: usize,
    pub burn_in_fraction: f64,
    /// Thermodynamic integration from a `beta = 0` anchor.
    pub thermo: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: String::new(),
            pipeline: Pipeline::Exact,
            model: ModelKind::Sk,
            h: 1.0,
            ns: vec![],
            betas: vec![1.0],
            c: concentration::DEFAULT_EXPONENT,
            cprime: concentration::DEFAULT_EXPONENT,
            lambda0: 0.2,
            delta_window: concentration::DEFAULT_WINDOW,
            e_ref: ERefPolicy::PlugIn,
            samples: 1,
            seed: 0,
            out: PathBuf::from("out"),
            mode: Mode::Auto,
            enumeration_limit: DEFAULT_ENUMERATION_LIMIT,
            histogram_bins: crate::exact::DEFAULT_HISTOGRAM_BINS,
            audit_kind: AuditKind::Tail,
            epsilons: (1..=10).map(|k| 0.05 * k as f64).collect(),
            lambdas: (1..=8).map(|k| 0.05 * k as f64).collect(),
            beta_prime: None,
            epsilon: None,
            replicas: 2,
            phi: "r12^2".into(),
            sweeps: 20_000,
            chains: 2,
            thin: 1,
            swap_interval: 1,
            burn_in_fraction: mc::DEFAULT_BURN_IN_FRACTION,
            thermo: false,
        }
    }
}

/// Concrete evaluation path for one system size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResolvedMode {
    Exact,
    Mc,
}

impl ExperimentConfig {
    pub fn experiment_name(&self) -> &str {
        if self.experiment.is_empty() {
            self.pipeline.name()
        } else {
            &self.experiment
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.out.join(self.experiment_name())
    }

    /// `auto` picks exact enumeration iff `n <= enumeration_limit`.
    pub fn resolve_mode(&self, n: usize) -> ResolvedMode {
        match self.mode {
            Mode::Exact => ResolvedMode::Exact,
            Mode::Mc => ResolvedMode::Mc,
            Mode::Auto if n <= self.enumeration_limit => ResolvedMode::Exact,
            Mode::Auto => ResolvedMode::Mc,
        }
    }

    pub fn phi(&self) -> Result<Phi> {
        self.phi.parse()
    }

    /// Disorder samples actually drawn: one for the deterministic field model.
    pub fn sample_count(&self) -> usize {
        match self.model {
            ModelKind::Sk => self.samples,
            ModelKind::Field => 1,
        }
    }

    pub fn disorder_seed(&self, sample: usize) -> u64 {
        rng::derive_seed(self.seed, sample as u64)
    }

    pub fn mc_seed(&self, sample: usize) -> u64 {
        rng::derive_seed(self.seed, MC_SEED_OFFSET + sample as u64)
    }

    pub fn models(&self, n: usize) -> Result<Vec<ModelSpec>> {
        match self.model {
            ModelKind::Sk => (0..self.samples)
                .into_par_iter()
                .map(|k| ModelSpec::sk_from_seed(n, self.disorder_seed(k)))
                .collect(),
            ModelKind::Field => Ok(vec![ModelSpec::constant_field(n, self.h)?]),
        }
    }

    fn uses_exact_only(&self) -> bool {
        matches!(self.pipeline, Pipeline::Audit | Pipeline::Sweep)
    }

    /// All violated constraints at once.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        if !(self.c > 0.0 && self.cprime > 0.0 && self.c + self.cprime < 1.0) {
            bad.push(format!(
                "c, cprime: need c > 0, c' > 0, c + c' < 1 (got {}, {})",
                self.c, self.cprime
            ));
        }
        if !(self.delta_window > 0.0) {
            bad.push(format!("delta_window: must be positive (got {})", self.delta_window));
        }
        if !(self.lambda0 > 0.0 && self.lambda0 < self.delta_window) {
            bad.push(format!(
                "lambda0: must lie in (0, delta_window = {}) (got {})",
                self.delta_window, self.lambda0
            ));
        }
        if self.ns.is_empty() {
            bad.push("ns: list of system sizes is empty".into());
        }
        if self.ns.contains(&0) {
            bad.push("ns: system sizes must be >= 1".into());
        }
        if self.pipeline == Pipeline::Sweep && self.ns.windows(2).any(|w| w[1] <= w[0]) {
            bad.push("ns: sweep sizes must be strictly increasing".into());
        }
        if self.betas.is_empty() {
            bad.push("betas: list is empty".into());
        }
        if self.betas.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            bad.push("betas: values must be finite and >= 0".into());
        }
        let ladder = self.pipeline == Pipeline::Sample
            || self.ns.iter().any(|&n| self.resolve_mode(n) == ResolvedMode::Mc);
        if ladder && self.betas.windows(2).any(|w| w[1] <= w[0]) {
            bad.push("betas: a tempering ladder must be strictly increasing".into());
        }
        if self.thermo && self.betas.first().is_some_and(|&b| b != 0.0) {
            bad.push("betas: thermodynamic integration needs a ladder anchored at beta = 0".into());
        }
        if self.samples == 0 {
            bad.push("samples: must be >= 1".into());
        }
        if !self.h.is_finite() {
            bad.push("h: must be finite".into());
        }
        if self.sweeps == 0 || self.thin == 0 || self.swap_interval == 0 || self.chains == 0 {
            bad.push("sweeps, thin, swap_interval, chains: must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) {
            bad.push("burn_in_fraction: must lie in [0, 1)".into());
        }
        if self.enumeration_limit > 62 {
            bad.push("enumeration_limit: at most 62".into());
        }
        if let Some(&n) = self.ns.iter().find(|&&n| self.mode == Mode::Exact && n > self.enumeration_limit) {
            bad.push(format!(
                "mode: exact requested but n = {n} exceeds enumeration_limit = {}",
                self.enumeration_limit
            ));
        }
        if self.uses_exact_only() {
            if let Some(&n) = self.ns.iter().find(|&&n| self.resolve_mode(n) == ResolvedMode::Mc) {
                bad.push(format!("mode: the {} pipeline needs enumeration, n = {n} resolves to mc", self.pipeline.name()));
            }
        }
        match self.pipeline {
            Pipeline::Audit => match self.audit_kind {
                AuditKind::Tail => {
                    if self.epsilons.is_empty() || self.epsilons.iter().any(|e| !(*e > 0.0)) {
                        bad.push("epsilons: need a nonempty list of positive values".into());
                    }
                    if self.lambdas.is_empty()
                        || self.lambdas.iter().any(|l| !(*l > 0.0 && *l < self.delta_window))
                    {
                        bad.push(format!("lambdas: need a nonempty list inside (0, {})", self.delta_window));
                    }
                }
                AuditKind::Moment => {}
                AuditKind::Sandwich => match self.beta_prime {
                    None => bad.push("beta_prime: required for the sandwich audit".into()),
                    Some(bp) if self.betas.iter().any(|&b| bp > b) || bp < 0.0 => {
                        bad.push("beta_prime: must lie in [0, beta]".into())
                    }
                    _ => {}
                },
            },
            Pipeline::Gg => {
                if self.model != ModelKind::Sk {
                    bad.push("model: replica identities need the sk model".into());
                }
                if self.replicas < 2 {
                    bad.push("replicas: must be >= 2".into());
                }
                if self.betas.contains(&0.0) {
                    bad.push("betas: the residual bound divides by beta".into());
                }
            }
            _ => {}
        }
        if let Some(e) = self.epsilon {
            if !(e > 0.0) {
                bad.push("epsilon: must be positive".into());
            }
        }
        match self.phi() {
            Ok(phi) if self.pipeline == Pipeline::Gg && phi.max_replica() > self.replicas => bad.push(format!(
                "phi: uses replica {} beyond replicas = {}",
                phi.max_replica(),
                self.replicas
            )),
            Ok(_) => {}
            Err(e) => bad.push(format!("phi: {e}")),
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad))
        }
    }

    fn beta_values(&self) -> Result<Vec<Beta>> {
        self.betas.iter().map(|&b| Beta::new(b)).collect()
    }

    fn pt_config(&self, seed: u64) -> PtConfig {
        PtConfig {
            sweeps: self.sweeps,
            swap_interval: self.swap_interval,
            burn_in_fraction: self.burn_in_fraction,
            copies: self.chains,
            thin: self.thin,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditOutcome {
    pub name: String,
    pub pass: bool,
}

/// Provenance of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub rng_id: String,
    pub seed_derivation: String,
    pub disorder_seeds: Vec<u64>,
    pub mc_seeds: Vec<u64>,
    pub version: String,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    /// sha256 of every data file, keyed by path relative to the run directory.
    pub files: BTreeMap<String, String>,
    pub audits: Vec<AuditOutcome>,
    pub all_pass: bool,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_millis())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Data files rendered in memory, plus audit verdicts.
#[derive(Default)]
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    audits: Vec<AuditOutcome>,
}

impl Outputs {
    fn csv<S: Serialize>(&mut self, name: String, rows: &[S]) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in rows {
            w.serialize(r)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv buffer: {e}")))?;
        self.files.push((name, bytes));
        Ok(())
    }

    fn json<S: Serialize + ?Sized>(&mut self, name: String, value: &S) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.files.push((name, bytes));
        Ok(())
    }

    fn audit(&mut self, name: impl Into<String>, pass: bool) {
        self.audits.push(AuditOutcome { name: name.into(), pass });
    }
}

/// Runs the configured pipeline and writes data files and the manifest.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest> {
    config.validate()?;
    let started = now_ms();
    let mut out = Outputs::default();
    match config.pipeline {
        Pipeline::Exact => exact_pipeline(config, &mut out)?,
        Pipeline::Concentration => concentration_pipeline(config, &mut out)?,
        Pipeline::Audit => audit_pipeline(config, &mut out)?,
        Pipeline::Gg => gg_pipeline(config, &mut out)?,
        Pipeline::Sample => sample_pipeline(config, &mut out)?,
        Pipeline::Sweep => {
            let tables = sweep_n(config)?;
            tables.write(&mut out)?;
        }
    }
    let dir = config.output_dir();
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let mut files = BTreeMap::new();
    for (name, bytes) in &out.files {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        files.insert(name.clone(), sha256_hex(bytes));
    }
    let samples = config.sample_count();
    let manifest = RunManifest {
        config: config.clone(),
        rng_id: RNG_ID.into(),
        seed_derivation: SEED_DERIVATION_ID.into(),
        disorder_seeds: match config.model {
            ModelKind::Sk => (0..samples).map(|k| config.disorder_seed(k)).collect(),
            ModelKind::Field => vec![],
        },
        mc_seeds: (0..samples).map(|k| config.mc_seed(k)).collect(),
        version: env!("CARGO_PKG_VERSION").into(),
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        all_pass: out.audits.iter().all(|a| a.pass),
        audits: out.audits,
        files,
    };
    let path = dir.join(MANIFEST_FILE);
    let mut bytes = serde_json::to_vec_pretty(&manifest)?;
    bytes.push(b'\n');
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

/// Outcome of re-running a manifest's configuration.
#[derive(Debug, Clone)]
pub struct RerunReport {
    pub manifest: RunManifest,
    /// Files whose hash differs from, or is missing in, the original.
    pub mismatches: Vec<String>,
}

/// Re-runs the recorded configuration, optionally into another output root,
/// and compares data-file hashes with the original manifest.
pub fn rerun_from_manifest(path: &Path, out: Option<&Path>) -> Result<RerunReport> {
    let original = RunManifest::load(path)?;
    let mut config = original.config.clone();
    if let Some(o) = out {
        config.out = o.to_path_buf();
    }
    let manifest = run_experiment(&config)?;
    let mut mismatches: Vec<String> = original
        .files
        .iter()
        .filter(|(k, v)| manifest.files.get(*k) != Some(*v))
        .map(|(k, _)| k.clone())
        .collect();
    mismatches.extend(manifest.files.keys().filter(|k| !original.files.contains_key(*k)).cloned());
    Ok(RerunReport { manifest, mismatches })
}

fn tables(models: &[ModelSpec], limit: usize) -> Result<Vec<EnergyTable>> {
    let e = Enumerator::with_limit(limit);
    models.par_iter().map(|m| e.energy_table(m)).collect()
}

#[derive(Serialize)]
struct ExactRow {
    sample: usize,
    seed: u64,
    beta: f64,
    free_energy: f64,
    energy_density: f64,
    energy_density_second_moment: f64,
    min_energy_density: f64,
    max_energy_density: f64,
}

#[derive(Serialize)]
struct HistogramRow {
    sample: usize,
    beta: f64,
    left: f64,
    right: f64,
    mass: f64,
}

#[derive(Serialize)]
struct TraceRow {
    sample: usize,
    sweep: usize,
    beta: f64,
    chain: usize,
    energy_density: f64,
}

#[derive(Serialize)]
struct McSummary {
    sample: usize,
    seed: u64,
    summaries: Vec<mc::TraceSummary>,
    swap_acceptance: Vec<Option<f64>>,
    overlap_squared: Vec<Option<Estimate>>,
    thermo: Vec<mc::ThermoEstimate>,
    max_drift: f64,
}

fn seed_of(config: &ExperimentConfig, k: usize) -> u64 {
    match config.model {
        ModelKind::Sk => config.disorder_seed(k),
        ModelKind::Field => 0,
    }
}

fn exact_pipeline(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let betas = config.beta_values()?;
    for &n in &config.ns {
        let models = config.models(n)?;
        match config.resolve_mode(n) {
            ResolvedMode::Exact => {
                let enumerator = Enumerator {
                    histogram_bins: config.histogram_bins,
                    ..Enumerator::with_limit(config.enumeration_limit)
                };
                let mut rows = Vec::new();
                let mut hist = Vec::new();
                let mut summaries = Vec::new();
                for (k, m) in models.iter().enumerate() {
                    for &b in &betas {
                        let s = enumerator.enumerate(m, b)?;
                        rows.push(ExactRow {
                            sample: k,
                            seed: seed_of(config, k),
                            beta: b.value(),
                            free_energy: s.free_energy,
                            energy_density: s.energy_density_mean,
                            energy_density_second_moment: s.energy_density_second_moment,
                            min_energy_density: s.min_energy_density,
                            max_energy_density: s.max_energy_density,
                        });
                        hist.extend(s.histogram.rows().into_iter().map(|(left, right, mass)| HistogramRow {
                            sample: k,
                            beta: b.value(),
                            left,
                            right,
                            mass,
                        }));
                        summaries.push(s);
                    }
                }
                out.csv(format!("free_energy-{n}.csv"), &rows)?;
                out.csv(format!("histogram-{n}.csv"), &hist)?;
                out.json(format!("summary-{n}.json"), &summaries)?;
            }
            ResolvedMode::Mc => mc_runs(config, n, &models, &betas, out)?,
        }
    }
    Ok(())
}

fn mc_runs(
    config: &ExperimentConfig,
    n: usize,
    models: &[ModelSpec],
    betas: &[Beta],
    out: &mut Outputs,
) -> Result<()> {
    let ladder = TemperatureLadder::new(betas.to_vec())?;
    let runs = models
        .par_iter()
        .enumerate()
        .map(|(k, m)| mc::parallel_tempering_run(m, &ladder, &config.pt_config(config.mc_seed(k))))
        .collect::<Result<Vec<_>>>()?;
    let mut trace = Vec::new();
    let mut summaries = Vec::new();
    let mut replicas = Vec::new();
    for (k, run) in runs.into_iter().enumerate() {
        for (r, per_copy) in run.traces.iter().enumerate() {
            for (chain, series) in per_copy.iter().enumerate() {
                for (t, &u) in series.iter().enumerate() {
                    if (t + 1) % config.thin == 0 {
                        trace.push(TraceRow { sample: k, sweep: t + 1, beta: betas[r].value(), chain, energy_density: u });
                    }
                }
            }
        }
        let thermo = if config.thermo {
            betas
                .iter()
                .map(|&b| mc::thermo_integrate(&run.summaries, b))
                .collect::<Result<Vec<_>>>()?
        } else {
            vec![]
        };
        summaries.push(McSummary {
            sample: k,
            seed: config.mc_seed(k),
            summaries: run.summaries,
            swap_acceptance: run.ladder.swap_acceptance(),
            overlap_squared: run.overlap_squared,
            thermo,
            max_drift: run.max_drift,
        });
        replicas.push(serde_json::json!({
            "sample": k,
            "betas": config.betas,
            "chains": config.chains,
            "retained": run.retained,
        }));
    }
    out.csv(format!("trace-{n}.csv"), &trace)?;
    out.json(format!("summary-{n}.json"), &summaries)?;
    out.json(format!("replicas-{n}.json"), &replicas)?;
    Ok(())
}

#[derive(Serialize)]
struct Theorem1Row {
    sample: usize,
    seed: u64,
    beta: f64,
    lambda_n: f64,
    gamma_n: f64,
    epsilon_n: f64,
    e_ref: f64,
    gibbs_mass_outside: f64,
    bound_ii: f64,
    restricted_gap: Option<f64>,
    bound_iii: f64,
    prior_log_mass: Option<f64>,
    entropy_target: f64,
    pass_ii: bool,
    pass_iii: bool,
    pass_entropy: bool,
}

#[derive(Serialize)]
struct L1Row {
    sample: usize,
    seed: u64,
    beta: f64,
    l1: f64,
    l1_centered: f64,
}

#[derive(Serialize)]
struct L1Summary {
    beta: f64,
    disorder_mean: f64,
    stderr: f64,
    centering: f64,
    centered_mean: f64,
    centered_stderr: f64,
}

fn concentration_pipeline(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let betas = config.beta_values()?;
    for &n in &config.ns {
        let models = config.models(n)?;
        let mut l1_rows = Vec::new();
        let mut l1_summary = Vec::new();
        match config.resolve_mode(n) {
            ResolvedMode::Exact => {
                let tables = tables(&models, config.enumeration_limit)?;
                let mut reports = Vec::new();
                for &b in &betas {
                    let per = tables
                        .par_iter()
                        .map(|t| concentration::theorem1_from_table(t, b, config.c, config.cprime, config.e_ref))
                        .collect::<Result<Vec<_>>>()?;
                    reports.extend(per.into_iter().enumerate());
                    let l1 = concentration::l1_from_tables(&tables, b, config.e_ref)?;
                    for k in 0..tables.len() {
                        l1_rows.push(L1Row {
                            sample: k,
                            seed: seed_of(config, k),
                            beta: b.value(),
                            l1: l1.per_sample[k],
                            l1_centered: l1.centered_per_sample[k],
                        });
                    }
                    l1_summary.push(L1Summary {
                        beta: b.value(),
                        disorder_mean: l1.disorder_mean,
                        stderr: l1.stderr,
                        centering: l1.centering,
                        centered_mean: l1.centered_mean,
                        centered_stderr: l1.centered_stderr,
                    });
                }
                let rows: Vec<Theorem1Row> = reports
                    .iter()
                    .map(|(k, r)| Theorem1Row {
                        sample: *k,
                        seed: seed_of(config, *k),
                        beta: r.beta,
                        lambda_n: r.lambda_n,
                        gamma_n: r.gamma_n,
                        epsilon_n: r.epsilon_n,
                        e_ref: r.e_ref,
                        gibbs_mass_outside: r.gibbs_mass_outside,
                        bound_ii: r.bound_ii,
                        restricted_gap: r.restricted_gap,
                        bound_iii: r.bound_iii,
                        prior_log_mass: r.prior_log_mass,
                        entropy_target: r.entropy_target,
                        pass_ii: r.pass_ii,
                        pass_iii: r.pass_iii,
                        pass_entropy: r.pass_entropy,
                    })
                    .collect();
                out.audit(format!("theorem1-{n}"), reports.iter().all(|(_, r)| r.pass()));
                out.csv(format!("theorem1-{n}.csv"), &rows)?;
                let json: Vec<_> = reports.into_iter().map(|(_, r)| r).collect();
                out.json(format!("theorem1-{n}.json"), &json)?;
            }
            ResolvedMode::Mc => {
                // Plug-in centring at each chain's own mean energy density.
                for &b in &betas {
                    let traces = models
                        .par_iter()
                        .enumerate()
                        .map(|(k, m)| {
                            let cfg = PtConfig { copies: 1, ..config.pt_config(config.mc_seed(k)) };
                            let ladder = TemperatureLadder::new(vec![b])?;
                            let run = mc::parallel_tempering_run(m, &ladder, &cfg)?;
                            Ok(run.traces[0][0][cfg.burn_in()..].to_vec())
                        })
                        .collect::<Result<Vec<Vec<f64>>>>()?;
                    let means: Vec<f64> = traces.iter().map(|t| stats::mean(t)).collect();
                    let centre = stats::mean(&means);
                    let dev = |t: &[f64], c: f64| stats::mean(&t.iter().map(|u| (u - c).abs()).collect::<Vec<_>>());
                    let l1: Vec<f64> = traces
                        .iter()
                        .zip(&means)
                        .map(|(t, &m)| match config.e_ref {
                            ERefPolicy::PlugIn => dev(t, m),
                            ERefPolicy::Supplied(e) => dev(t, e),
                        })
                        .collect();
                    let centred: Vec<f64> = traces.iter().map(|t| dev(t, centre)).collect();
                    for k in 0..traces.len() {
                        l1_rows.push(L1Row {
                            sample: k,
                            seed: seed_of(config, k),
                            beta: b.value(),
                            l1: l1[k],
                            l1_centered: centred[k],
                        });
                    }
                    let a = stats::mean_stderr(&l1);
                    let c = stats::mean_stderr(&centred);
                    l1_summary.push(L1Summary {
                        beta: b.value(),
                        disorder_mean: a.value,
                        stderr: a.stderr,
                        centering: centre,
                        centered_mean: c.value,
                        centered_stderr: c.stderr,
                    });
                }
            }
        }
        out.csv(format!("l1-{n}.csv"), &l1_rows)?;
        out.json(format!("l1-{n}.json"), &l1_summary)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TailRow {
    sample: usize,
    beta: f64,
    epsilon: f64,
    lambda: f64,
    lhs: f64,
    rhs: f64,
    pass: bool,
}

#[derive(Serialize)]
struct MomentRow {
    sample: usize,
    beta: f64,
    lambda0: f64,
    lambda_selected: f64,
    e_ref: f64,
    lhs_plus: f64,
    lhs_minus: f64,
    lhs_abs: f64,
    rhs: f64,
    pass: bool,
}

fn audit_pipeline(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let betas = config.beta_values()?;
    for &n in &config.ns {
        let tables = tables(&config.models(n)?, config.enumeration_limit)?;
        match config.audit_kind {
            AuditKind::Tail => {
                let mut rows = Vec::new();
                let mut all = Vec::new();
                for &b in &betas {
                    let per = tables
                        .par_iter()
                        .map(|t| {
                            let e = config.e_ref.resolve(t, b.value());
                            concentration::tail_audit_from_table(t, b, &config.epsilons, &config.lambdas, e, config.delta_window)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    for (k, audits) in per.into_iter().enumerate() {
                        for a in audits {
                            let (epsilon, lambda, lhs, rhs, pass) = a.csv_row();
                            rows.push(TailRow { sample: k, beta: b.value(), epsilon, lambda, lhs, rhs, pass });
                            all.push(a);
                        }
                    }
                }
                out.audit(format!("tail-{n}"), all.iter().all(|a| a.pass));
                out.csv(format!("tail-{n}.csv"), &rows)?;
                out.json(format!("tail-{n}.json"), &all)?;
            }
            AuditKind::Moment => {
                let mut rows = Vec::new();
                for &b in &betas {
                    let per = tables
                        .par_iter()
                        .map(|t| {
                            let e = config.e_ref.resolve(t, b.value());
                            concentration::moment_audit_from_table(t, b, config.lambda0, e, config.delta_window)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    rows.extend(per.into_iter().enumerate().map(|(k, a)| MomentRow {
                        sample: k,
                        beta: b.value(),
                        lambda0: a.lambda0,
                        lambda_selected: a.lambda_selected,
                        e_ref: a.e_ref,
                        lhs_plus: a.lhs_plus,
                        lhs_minus: a.lhs_minus,
                        lhs_abs: a.lhs_abs,
                        rhs: a.rhs,
                        pass: a.pass,
                    }));
                }
                out.audit(format!("moment-{n}"), rows.iter().all(|r| r.pass));
                out.csv(format!("moment-{n}.csv"), &rows)?;
            }
            AuditKind::Sandwich => {
                let bp = Beta::new(config.beta_prime.expect("validated"))?;
                let mut reports = Vec::new();
                for &b in &betas {
                    let per = tables
                        .par_iter()
                        .map(|t| {
                            let e1 = t.gibbs_mean(b.value(), |u| u);
                            let e0 = t.gibbs_mean(bp.value(), |u| u);
                            let eps = config.epsilon.unwrap_or_else(|| (2.0 * (e1 - e0).abs()).max(1e-12));
                            concentration::sandwich_from_table(t, b, bp, eps, e1, e0)
                        })
                        .collect::<Result<Vec<_>>>()?;
                    reports.extend(per);
                }
                out.audit(format!("sandwich-{n}"), reports.iter().all(|r| r.pass()));
                out.json(format!("sandwich-{n}.json"), &reports)?;
            }
        }
    }
    Ok(())
}

#[derive(Serialize)]
struct GgRow {
    #[serde(rename = "N")]
    n: usize,
    beta: f64,
    #[serde(rename = "n")]
    replicas: usize,
    phi_id: String,
    residual: f64,
    stderr: f64,
    bound: f64,
    pass: bool,
}

impl From<&replica::GGReport> for GgRow {
    fn from(r: &replica::GGReport) -> Self {
        GgRow {
            n: r.n_system,
            beta: r.beta,
            replicas: r.n_replicas,
            phi_id: r.phi_id.clone(),
            residual: r.residual,
            stderr: r.stderr,
            bound: r.bound,
            pass: r.pass,
        }
    }
}

fn bracket_mode(config: &ExperimentConfig, n: usize) -> BracketMode {
    match config.resolve_mode(n) {
        ResolvedMode::Exact => BracketMode::Exact,
        ResolvedMode::Mc => BracketMode::Mc(ReplicaSampling {
            chains: config.chains.max(config.replicas + 1),
            sweeps: config.sweeps,
            thin: config.thin,
            burn_in_fraction: config.burn_in_fraction,
            seed: config.mc_seed(0),
        }),
    }
}

fn gg_pipeline(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let betas = config.beta_values()?;
    let phi = config.phi()?;
    for &n in &config.ns {
        let models = config.models(n)?;
        let mode = bracket_mode(config, n);
        let mut gg = Vec::new();
        let mut ibp = Vec::new();
        for &b in &betas {
            gg.push(replica::gg_residual(&models, b, config.replicas, &phi, mode)?);
            ibp.push(replica::ibp_audit(&models, b, config.replicas, &phi, mode)?);
        }
        out.audit(format!("gg-{n}"), gg.iter().all(|r| r.pass));
        out.audit(format!("ibp-{n}"), ibp.iter().all(|r| r.pass));
        out.csv(format!("gg-{n}.csv"), &gg.iter().map(GgRow::from).collect::<Vec<_>>())?;
        out.json(format!("gg-{n}.json"), &gg)?;
        out.json(format!("ibp-{n}.json"), &ibp)?;
    }
    Ok(())
}

fn sample_pipeline(config: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let betas = config.beta_values()?;
    for &n in &config.ns {
        let models = config.models(n)?;
        mc_runs(config, n, &models, &betas, out)?;
    }
    Ok(())
}

/// One row of a trend table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrendRow {
    #[serde(rename = "N")]
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
}

/// Kendall tau of the row means against `N`; absent for a single row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendStatistics {
    pub epsilon: Option<f64>,
    pub free_energy: Option<f64>,
    pub free_energy_stderr: Option<f64>,
    pub l1: Option<f64>,
    pub gg_abs_residual: Option<f64>,
}

/// `N`-sweep tables at the first configured beta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTables {
    pub beta: f64,
    pub epsilon: Vec<TrendRow>,
    pub free_energy: Vec<TrendRow>,
    pub l1: Vec<TrendRow>,
    pub gg: Vec<replica::GGReport>,
    pub trend: TrendStatistics,
}

impl SweepTables {
    fn write(&self, out: &mut Outputs) -> Result<()> {
        out.csv("epsilon.csv".into(), &self.epsilon)?;
        out.csv("free_energy.csv".into(), &self.free_energy)?;
        out.csv("l1.csv".into(), &self.l1)?;
        out.csv("gg.csv".into(), &self.gg.iter().map(GgRow::from).collect::<Vec<_>>())?;
        out.json("trend.json".into(), self)?;
        Ok(())
    }
}

pub fn sweep_n(config: &ExperimentConfig) -> Result<SweepTables> {
    config.validate()?;
    let beta = Beta::new(config.betas[0])?;
    let phi = config.phi()?;
    let mut epsilon = Vec::new();
    let mut free_energy = Vec::new();
    let mut l1 = Vec::new();
    let mut gg = Vec::new();
    for &n in &config.ns {
        let models = config.models(n)?;
        let tables = tables(&models, config.enumeration_limit)?;
        let reports = tables
            .par_iter()
            .map(|t| concentration::theorem1_from_table(t, beta, config.c, config.cprime, config.e_ref))
            .collect::<Result<Vec<_>>>()?;
        let row = |xs: Vec<f64>| {
            let e = stats::mean_stderr(&xs);
            TrendRow { n, mean: e.value, stderr: e.stderr }
        };
        epsilon.push(row(reports.iter().map(|r| r.epsilon_n).collect()));
        free_energy.push(row(reports.iter().map(|r| r.free_energy).collect()));
        l1.push(row(concentration::l1_from_tables(&tables, beta, config.e_ref)?.per_sample));
        if config.model == ModelKind::Sk && config.replicas >= 2 && beta.value() > 0.0 {
            let batches: Vec<_> = tables
                .par_iter()
                .zip(&models)
                .map(|(t, m)| replica::ReplicaBatch::from_table(t, beta, m.disorder().map_or(0, |d| d.seed)))
                .collect();
            gg.push(replica::gg_from_batches(&batches, n, beta, config.replicas, &phi)?);
        }
    }
    let tau = |rows: &[TrendRow], f: fn(&TrendRow) -> f64| {
        stats::kendall_tau_trend(&rows.iter().map(f).collect::<Vec<_>>())
    };
    let trend = TrendStatistics {
        epsilon: tau(&epsilon, |r| r.mean),
        free_energy: tau(&free_energy, |r| r.mean),
        free_energy_stderr: tau(&free_energy, |r| r.stderr),
        l1: tau(&l1, |r| r.mean),
        gg_abs_residual: stats::kendall_tau_trend(&gg.iter().map(|r| r.residual.abs()).collect::<Vec<_>>()),
    };
    Ok(SweepTables { beta: beta.value(), epsilon, free_energy, l1, gg, trend })
}
