//! Metropolis and parallel-tempering samplers for the Gibbs measure with
//! weight `exp(+beta * H)`, and thermodynamic integration of the energy
//! density.
//!
//! A proposal at site `i` draws a fresh value for the spin uniformly from
//! `{-1, +1}`; a change is accepted with probability `min(1, exp(beta dH))`.
//! At `beta = 0` every proposal is accepted and a sweep refreshes each site
//! uniformly.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Beta, ModelSpec};
use crate::replica::ReplicaBatch;
use crate::rng::{self, Stream};
use crate::spin::SpinConfiguration;
use crate::stats::{self, Estimate};

pub const DEFAULT_BURN_IN_FRACTION: f64 = 0.2;
/// Sweeps between full energy recomputations.
pub const RESYNC_INTERVAL: u64 = 100;
pub const CACHE_TOLERANCE: f64 = 1e-8;

/// One Markov chain at a fixed inverse temperature.
#[derive(Debug, Clone)]
pub struct ChainState {
    config: SpinConfiguration,
    spins: Vec<f64>,
    energy: f64,
    beta: Beta,
    rng: Stream,
    sweep_count: u64,
    max_drift: f64,
}

impl ChainState {
    /// Uniformly random start drawn from the chain's own stream.
    pub fn new(model: &ModelSpec, beta: Beta, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed);
        let config = SpinConfiguration::random(model.n(), &mut rng)?;
        Self::with_config(model, beta, config, rng)
    }

    pub fn from_config(model: &ModelSpec, beta: Beta, config: SpinConfiguration, seed: u64) -> Result<Self> {
        Self::with_config(model, beta, config, rng::stream(seed))
    }

    fn with_config(model: &ModelSpec, beta: Beta, config: SpinConfiguration, rng: Stream) -> Result<Self> {
        let energy = model.hamiltonian(&config)?;
        let spins = config.to_f64();
        Ok(Self { config, spins, energy, beta, rng, sweep_count: 0, max_drift: 0.0 })
    }

    pub fn config(&self) -> &SpinConfiguration {
        &self.config
    }

    /// Cached `H(config)`.
    pub fn energy(&self) -> f64 {
        self.energy
    }

    pub fn beta(&self) -> Beta {
        self.beta
    }

    pub fn sweep_count(&self) -> u64 {
        self.sweep_count
    }

    /// Largest cache discrepancy seen at a resync.
    pub fn max_drift(&self) -> f64 {
        self.max_drift
    }

    /// One proposal at `site`; returns whether the spin changed.
    pub fn step(&mut self, model: &ModelSpec, site: usize) -> bool {
        let u = rng::uniform(&mut self.rng);
        if u >= 0.5 {
            return false;
        }
        let delta = model.flip_delta_of_spins(&self.spins, site);
        let x = self.beta.value() * delta;
        let accept = x >= 0.0 || u < 0.5 * x.exp();
        if accept {
            self.energy += delta;
            self.spins[site] = -self.spins[site];
            self.config.flip(site);
        }
        accept
    }

    /// Recompute `H` from scratch and resynchronize the cache.
    pub fn resync(&mut self, model: &ModelSpec) -> f64 {
        let exact = model.energy_of_spins(&self.spins);
        let drift = (exact - self.energy).abs();
        self.max_drift = self.max_drift.max(drift);
        self.energy = exact;
        drift
    }

    fn swap_configuration(&mut self, other: &mut ChainState) {
        std::mem::swap(&mut self.config, &mut other.config);
        std::mem::swap(&mut self.spins, &mut other.spins);
        std::mem::swap(&mut self.energy, &mut other.energy);
    }
}

/// `n` proposals in site order `0..n`.
pub fn metropolis_sweep(model: &ModelSpec, state: &mut ChainState) {
    for site in 0..model.n() {
        state.step(model, site);
    }
    state.sweep_count += 1;
    if state.sweep_count.is_multiple_of(RESYNC_INTERVAL) {
        let drift = state.resync(model);
        debug_assert!(drift <= CACHE_TOLERANCE, "energy cache drifted by {drift}");
    }
}

/// Strictly increasing inverse temperatures with running swap statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemperatureLadder {
    betas: Vec<Beta>,
    swap_attempts: Vec<u64>,
    swap_accepts: Vec<u64>,
}

impl TemperatureLadder {
    pub fn new(betas: Vec<Beta>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::invalid("ladder needs at least one beta"));
        }
        if betas.windows(2).any(|w| w[1].value() <= w[0].value()) {
            return Err(Error::invalid("ladder betas must be strictly increasing"));
        }
        let pairs = betas.len() - 1;
        Ok(Self { betas, swap_attempts: vec![0; pairs], swap_accepts: vec![0; pairs] })
    }

    pub fn from_values(betas: &[f64]) -> Result<Self> {
        Self::new(betas.iter().map(|&b| Beta::new(b)).collect::<Result<_>>()?)
    }

    /// `start, start + step, ...` up to `stop` inclusive (within `step/1e6`).
    pub fn from_range(start: f64, stop: f64, step: f64) -> Result<Self> {
        Self::from_values(&beta_range(start, stop, step)?)
    }

    pub fn betas(&self) -> &[Beta] {
        &self.betas
    }

    pub fn len(&self) -> usize {
        self.betas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.betas.is_empty()
    }

    /// Acceptance rate per adjacent pair; `None` before any attempt.
    pub fn swap_acceptance(&self) -> Vec<Option<f64>> {
        self.swap_attempts
            .iter()
            .zip(&self.swap_accepts)
            .map(|(&n, &a)| (n > 0).then(|| a as f64 / n as f64))
            .collect()
    }
}

/// Grid `start:stop:step`, computed as `start + k * step` to avoid drift.
pub fn beta_range(start: f64, stop: f64, step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) || !(stop >= start) || !start.is_finite() || !stop.is_finite() {
        return Err(Error::invalid(format!("bad beta range {start}:{stop}:{step}")));
    }
    let count = ((stop - start) / step + 1e-6).floor() as usize + 1;
    Ok((0..count).map(|k| start + k as f64 * step).collect())
}

/// `min(1, exp((beta_i - beta_j)(H_j - H_i)))`.
pub fn swap_probability(beta_i: f64, beta_j: f64, h_i: f64, h_j: f64) -> f64 {
    ((beta_i - beta_j) * (h_j - h_i)).exp().min(1.0)
}

/// Per-temperature energy-density estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceSummary {
    pub beta: Beta,
    /// Estimate of `<H/n>_beta`.
    pub u_mean: f64,
    /// Autocorrelation-adjusted standard error.
    pub u_stderr: f64,
    pub tau: f64,
    pub n_samples: usize,
    pub burn_in: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PtConfig {
    pub sweeps: usize,
    pub swap_interval: usize,
    pub burn_in_fraction: f64,
    /// Independent ladders; two or more give overlap statistics.
    pub copies: usize,
    /// Sweeps between retained configurations.
    pub thin: usize,
    pub seed: u64,
}

impl PtConfig {
    pub fn new(sweeps: usize, seed: u64) -> Self {
        Self {
            sweeps,
            swap_interval: 1,
            burn_in_fraction: DEFAULT_BURN_IN_FRACTION,
            copies: 1,
            thin: 1,
            seed,
        }
    }

    pub fn burn_in(&self) -> usize {
        (self.sweeps as f64 * self.burn_in_fraction).floor() as usize
    }

    fn validate(&self) -> Result<()> {
        if self.sweeps == 0 || self.swap_interval == 0 || self.copies == 0 || self.thin == 0 {
            return Err(Error::invalid("sweeps, swap_interval, copies and thin must be positive"));
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) || self.burn_in() >= self.sweeps {
            return Err(Error::invalid(format!(
                "burn-in {} must be shorter than {} sweeps",
                self.burn_in(),
                self.sweeps
            )));
        }
        Ok(())
    }
}

/// Seeds of the chain at `rung` of ladder copy `copy`.
pub fn chain_seed(master: u64, copy: usize, rung: usize, rungs: usize) -> u64 {
    rng::derive_seed(master, (copy * rungs + rung) as u64)
}

fn swap_seed(master: u64, copy: usize) -> u64 {
    rng::derive_seed(master, 1_000_000 + copy as u64)
}

/// Output of a tempering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PtOutput {
    pub summaries: Vec<TraceSummary>,
    pub ladder: TemperatureLadder,
    /// `traces[rung][copy]`: energy density after every sweep.
    pub traces: Vec<Vec<Vec<f64>>>,
    /// `retained[rung]`: post-burn-in configurations, time-major over copies.
    pub retained: Vec<Vec<SpinConfiguration>>,
    /// `<R_12^2>` per rung from pairs of copies; `None` with a single copy.
    pub overlap_squared: Vec<Option<Estimate>>,
    pub max_drift: f64,
}

struct Ladder {
    chains: Vec<ChainState>,
    swap_rng: Stream,
    traces: Vec<Vec<f64>>,
    retained: Vec<Vec<SpinConfiguration>>,
    attempts: Vec<u64>,
    accepts: Vec<u64>,
}

impl Ladder {
    fn run(&mut self, model: &ModelSpec, cfg: &PtConfig) {
        let nf = model.n() as f64;
        let burn_in = cfg.burn_in();
        let mut parity = 0;
        let mut done = 0;
        while done < cfg.sweeps {
            let block = cfg.swap_interval.min(cfg.sweeps - done);
            self.chains
                .par_iter_mut()
                .zip(self.traces.par_iter_mut())
                .zip(self.retained.par_iter_mut())
                .for_each(|((chain, trace), kept)| {
                    for s in 0..block {
                        metropolis_sweep(model, chain);
                        trace.push(chain.energy / nf);
                        let t = done + s + 1;
                        if t > burn_in && (t - burn_in).is_multiple_of(cfg.thin) {
                            kept.push(chain.config.clone());
                        }
                    }
                });
            done += block;
            if block == cfg.swap_interval {
                self.swap(parity);
                parity ^= 1;
            }
        }
    }

    fn swap(&mut self, parity: usize) {
        let mut i = parity;
        while i + 1 < self.chains.len() {
            let (lo, hi) = self.chains.split_at_mut(i + 1);
            let (a, b) = (&mut lo[i], &mut hi[0]);
            let p = swap_probability(a.beta.value(), b.beta.value(), a.energy, b.energy);
            self.attempts[i] += 1;
            if rng::uniform(&mut self.swap_rng) < p {
                self.accepts[i] += 1;
                a.swap_configuration(b);
            }
            i += 2;
        }
    }
}

pub fn parallel_tempering_run(
    model: &ModelSpec,
    ladder: &TemperatureLadder,
    cfg: &PtConfig,
) -> Result<PtOutput> {
    cfg.validate()?;
    let rungs = ladder.len();
    let mut copies = (0..cfg.copies)
        .map(|copy| -> Result<Ladder> {
            let chains = ladder
                .betas
                .iter()
                .enumerate()
                .map(|(r, &b)| ChainState::new(model, b, chain_seed(cfg.seed, copy, r, rungs)))
                .collect::<Result<Vec<_>>>()?;
            Ok(Ladder {
                chains,
                swap_rng: rng::stream(swap_seed(cfg.seed, copy)),
                traces: vec![Vec::with_capacity(cfg.sweeps); rungs],
                retained: vec![Vec::new(); rungs],
                attempts: vec![0; rungs.saturating_sub(1)],
                accepts: vec![0; rungs.saturating_sub(1)],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    copies.par_iter_mut().for_each(|l| l.run(model, cfg));

    let mut out_ladder = ladder.clone();
    for l in &copies {
        for i in 0..l.attempts.len() {
            out_ladder.swap_attempts[i] += l.attempts[i];
            out_ladder.swap_accepts[i] += l.accepts[i];
        }
    }
    let burn_in = cfg.burn_in();
    let nf = model.n() as f64;
    let mut summaries = Vec::with_capacity(rungs);
    let mut traces = Vec::with_capacity(rungs);
    let mut retained = Vec::with_capacity(rungs);
    let mut overlap_squared = Vec::with_capacity(rungs);
    for r in 0..rungs {
        let per_copy: Vec<Vec<f64>> = copies.iter().map(|l| l.traces[r].clone()).collect();
        let ests: Vec<(Estimate, f64)> =
            per_copy.iter().map(|t| stats::correlated_mean(&t[burn_in..])).collect();
        let c = ests.len() as f64;
        let u_mean = ests.iter().map(|e| e.0.value).sum::<f64>() / c;
        let u_stderr = ests.iter().map(|e| e.0.stderr.powi(2)).sum::<f64>().sqrt() / c;
        let tau = ests.iter().map(|e| e.1).fold(0.0, f64::max);
        summaries.push(TraceSummary {
            beta: ladder.betas[r],
            u_mean,
            u_stderr,
            tau,
            n_samples: cfg.sweeps - burn_in,
            burn_in,
        });
        let times = copies[0].retained[r].len();
        let mut kept = Vec::with_capacity(times * copies.len());
        for t in 0..times {
            for l in &copies {
                kept.push(l.retained[r][t].clone());
            }
        }
        overlap_squared.push((copies.len() >= 2).then(|| {
            let series: Vec<f64> = (0..times)
                .map(|t| {
                    let snaps = &kept[t * copies.len()..(t + 1) * copies.len()];
                    let mut sum = 0.0;
                    let mut pairs = 0;
                    for i in 0..snaps.len() {
                        for j in i + 1..snaps.len() {
                            let d = snaps[i].hamming_distance(&snaps[j]).expect("same n");
                            let q = (nf - 2.0 * d as f64) / nf;
                            sum += q * q;
                            pairs += 1;
                        }
                    }
                    sum / pairs as f64
                })
                .collect();
            stats::correlated_mean(&series).0
        }));
        traces.push(per_copy);
        retained.push(kept);
    }
    let max_drift = copies
        .iter()
        .flat_map(|l| l.chains.iter().map(|c| c.max_drift))
        .fold(0.0, f64::max);
    Ok(PtOutput { summaries, ladder: out_ladder, traces, retained, overlap_squared, max_drift })
}

/// Plain Metropolis at one temperature: the single-rung, single-copy case of
/// [`parallel_tempering_run`].
pub fn run_metropolis(model: &ModelSpec, beta: Beta, sweeps: usize, seed: u64) -> Result<(TraceSummary, Vec<f64>)> {
    let ladder = TemperatureLadder::new(vec![beta])?;
    let mut out = parallel_tempering_run(model, &ladder, &PtConfig::new(sweeps, seed))?;
    Ok((out.summaries[0], out.traces.remove(0).remove(0)))
}

/// Free energy from the energy density integrated over `beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThermoEstimate {
    pub beta: f64,
    pub free_energy: f64,
    /// Propagated standard error of the trapezoid sum.
    pub statistical_error: f64,
    /// `sum h^3 / 12 |u''|` with `u''` from second differences.
    pub quadrature_error: f64,
    /// Sum of the two.
    pub error: f64,
}

pub fn thermo_integrate(traces: &[TraceSummary], target_beta: Beta) -> Result<ThermoEstimate> {
    let target = target_beta.value();
    let first = traces.first().ok_or_else(|| Error::invalid("no traces to integrate"))?;
    if first.beta.value() != 0.0 {
        return Err(Error::invalid(format!(
            "integration grid must start at beta = 0, starts at {}",
            first.beta.value()
        )));
    }
    if traces.windows(2).any(|w| w[1].beta.value() <= w[0].beta.value()) {
        return Err(Error::invalid("traces must be ordered by strictly increasing beta"));
    }
    let last = traces.last().expect("nonempty").beta.value();
    if target > last {
        return Err(Error::invalid(format!("grid ends at {last}, below target {target}")));
    }
    if target == 0.0 {
        return Ok(ThermoEstimate { beta: 0.0, free_energy: 0.0, statistical_error: 0.0, quadrature_error: 0.0, error: 0.0 });
    }
    let b: Vec<f64> = traces.iter().map(|t| t.beta.value()).collect();
    let u: Vec<f64> = traces.iter().map(|t| t.u_mean).collect();
    let curvature = |i: usize| -> f64 {
        if b.len() < 3 {
            return 0.0;
        }
        let k = i.clamp(1, b.len() - 2);
        let (h0, h1) = (b[k] - b[k - 1], b[k + 1] - b[k]);
        let d1 = (u[k] - u[k - 1]) / h0;
        let d2 = (u[k + 1] - u[k]) / h1;
        2.0 * (d2 - d1) / (h0 + h1)
    };
    let mut weights = vec![0.0; traces.len()];
    let mut value = 0.0;
    let mut quadrature_error = 0.0;
    for i in 0..b.len() - 1 {
        if b[i] >= target {
            break;
        }
        let right = b[i + 1].min(target);
        let h = right - b[i];
        // linear interpolation of u at the right end of a partial interval
        let t = h / (b[i + 1] - b[i]);
        let (wl, wr) = (0.5 * h * (1.0 - t) + 0.5 * h, 0.5 * h * t);
        weights[i] += wl;
        weights[i + 1] += wr;
        value += wl * u[i] + wr * u[i + 1];
        quadrature_error += h.powi(3) / 12.0 * curvature(i).abs().max(curvature(i + 1).abs());
    }
    let statistical_error = weights
        .iter()
        .zip(traces)
        .map(|(w, t)| (w * t.u_stderr).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ThermoEstimate {
        beta: target,
        free_energy: value,
        statistical_error,
        quadrature_error,
        error: statistical_error + quadrature_error,
    })
}

/// Parameters for independent replica chains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaSampling {
    pub chains: usize,
    pub sweeps: usize,
    pub thin: usize,
    pub burn_in_fraction: f64,
    pub seed: u64,
}

impl ReplicaSampling {
    pub fn new(chains: usize, sweeps: usize, seed: u64) -> Self {
        Self { chains, sweeps, thin: 1, burn_in_fraction: DEFAULT_BURN_IN_FRACTION, seed }
    }
}

/// `k` independent chains on the same disorder, each started uniformly at
/// random from its own stream `derive_seed(seed, chain)`.
pub fn sample_replicas(
    model: &ModelSpec,
    beta: Beta,
    k: usize,
    sweeps: usize,
    thin: usize,
    seed: u64,
) -> Result<ReplicaBatch> {
    let s = ReplicaSampling { thin, ..ReplicaSampling::new(k, sweeps, seed) };
    sample_replicas_with(model, beta, &s, seed)
}

pub fn sample_replicas_with(
    model: &ModelSpec,
    beta: Beta,
    s: &ReplicaSampling,
    seed: u64,
) -> Result<ReplicaBatch> {
    if s.chains < 2 {
        return Err(Error::invalid(format!("need k >= 2 replicas, got {}", s.chains)));
    }
    let cfg = PtConfig {
        sweeps: s.sweeps,
        swap_interval: 1,
        burn_in_fraction: s.burn_in_fraction,
        copies: 1,
        thin: s.thin,
        seed,
    };
    cfg.validate()?;
    let burn_in = cfg.burn_in();
    let per_chain = (0..s.chains)
        .into_par_iter()
        .map(|c| -> Result<Vec<SpinConfiguration>> {
            let mut chain = ChainState::new(model, beta, rng::derive_seed(seed, c as u64))?;
            let mut kept = Vec::with_capacity((s.sweeps - burn_in) / s.thin + 1);
            for t in 1..=s.sweeps {
                metropolis_sweep(model, &mut chain);
                if t > burn_in && (t - burn_in).is_multiple_of(s.thin) {
                    kept.push(chain.config.clone());
                }
            }
            Ok(kept)
        })
        .collect::<Result<Vec<_>>>()?;
    let times = per_chain[0].len();
    let mut snapshots = Vec::with_capacity(times * s.chains);
    for t in 0..times {
        for chain in &per_chain {
            snapshots.push(chain[t].clone());
        }
    }
    ReplicaBatch::from_chains(model, beta, s.chains, snapshots)
}
