//! Exact Gibbs quantities by full enumeration of `{-1,+1}^n`.
//!
//! Configurations are visited in binary-reflected Gray order, so consecutive
//! states differ by one spin and the energy is updated with an O(n) flip
//! delta. The range `[0, 2^n)` is split into contiguous chunks that are walked
//! in parallel; each chunk starts from a full energy evaluation, which also
//! bounds the drift of the incremental updates. Chunk results are merged in
//! chunk order, so outputs do not depend on the thread count.
//!
//! Sums of Gibbs weights are two-pass: the maximum of `beta * H` is found
//! first and every weight is taken relative to it. The reference measure is
//! the uniform probability on the hypercube, applied as an exact `2^-n` scale.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Beta, ModelSpec};
use crate::spin::SpinConfiguration;

pub const DEFAULT_ENUMERATION_LIMIT: usize = 24;
pub const DEFAULT_HISTOGRAM_BINS: usize = 512;
const DEFAULT_CHUNK_BITS: usize = 12;

/// Binary-reflected Gray code of `i`.
#[inline]
pub fn gray(i: u64) -> u64 {
    i ^ (i >> 1)
}

/// Walk configurations `gray(start) .. gray(end - 1)` in order, calling
/// `visit(config, energy)` for each.
fn walk_range<F>(model: &ModelSpec, start: u64, end: u64, mut visit: F)
where
    F: FnMut(&SpinConfiguration, f64),
{
    let n = model.n();
    let mut config = SpinConfiguration::from_bits(n, gray(start)).expect("n >= 1");
    let mut spins = config.to_f64();
    let mut energy = model.energy_of_spins(&spins);
    visit(&config, energy);
    for i in start + 1..end {
        let site = i.trailing_zeros() as usize;
        energy += model.flip_delta_of_spins(&spins, site);
        spins[site] = -spins[site];
        config.flip(site);
        visit(&config, energy);
    }
}

/// Exact log of `sum_k exp(x_k)` given the running maximum, in natural units.
#[derive(Debug, Clone, Copy)]
struct ShiftedSum {
    shift: f64,
    sum: f64,
}

impl ShiftedSum {
    /// `log(sum * 2^-n) + shift`, i.e. the log-integral against uniform `nu`.
    fn log_integral(&self, n: usize) -> Option<f64> {
        if self.sum > 0.0 {
            Some(self.shift + (self.sum * 0.5f64.powi(n as i32)).ln())
        } else {
            None
        }
    }
}

/// Mass histogram of the energy density `H/n` under a Gibbs measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyHistogram {
    pub min: f64,
    pub max: f64,
    pub masses: Vec<f64>,
}

impl EnergyHistogram {
    fn bin_of(min: f64, max: f64, bins: usize, u: f64) -> usize {
        if max > min {
            (((u - min) / (max - min) * bins as f64) as usize).min(bins - 1)
        } else {
            0
        }
    }

    /// `(bin_left, bin_right, gibbs_mass)` rows.
    pub fn rows(&self) -> Vec<(f64, f64, f64)> {
        let bins = self.masses.len();
        let width = (self.max - self.min) / bins as f64;
        self.masses
            .iter()
            .enumerate()
            .map(|(k, &m)| {
                let left = self.min + k as f64 * width;
                let right = if k + 1 == bins {
                    self.max
                } else {
                    self.min + (k + 1) as f64 * width
                };
                (left, right, m)
            })
            .collect()
    }
}

/// Result of a full enumeration at one inverse temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExactGibbsSummary {
    pub n: usize,
    pub beta: Beta,
    /// `n^{-1} log Z_n(beta)` against the uniform reference measure.
    pub free_energy: f64,
    /// `<H/n>_beta`, equal to the derivative of the free energy in `beta`.
    pub energy_density_mean: f64,
    pub energy_density_second_moment: f64,
    pub min_energy_density: f64,
    pub max_energy_density: f64,
    pub histogram: EnergyHistogram,
}

/// Gibbs and prior mass of a set of configurations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetMass {
    pub gibbs_mass: f64,
    pub prior_mass: f64,
    /// `n^{-1} log int 1_set exp(beta H) dnu`; `None` iff the set is empty.
    pub restricted_log_partition: Option<f64>,
}

/// `(beta, F_n(beta), <H/n>_beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub beta: f64,
    pub free_energy: f64,
    pub energy_density_mean: f64,
}

/// Enumeration settings.
#[derive(Debug, Clone, Copy)]
pub struct Enumerator {
    pub limit: usize,
    pub histogram_bins: usize,
    /// Each parallel work unit covers `2^chunk_bits` configurations.
    pub chunk_bits: usize,
}

impl Default for Enumerator {
    fn default() -> Self {
        Self {
            limit: DEFAULT_ENUMERATION_LIMIT,
            histogram_bins: DEFAULT_HISTOGRAM_BINS,
            chunk_bits: DEFAULT_CHUNK_BITS,
        }
    }
}

impl Enumerator {
    pub fn with_limit(limit: usize) -> Self {
        Self {
            limit,
            ..Self::default()
        }
    }

    pub fn check(&self, model: &ModelSpec) -> Result<()> {
        let n = model.n();
        if n > self.limit || n > 62 {
            return Err(Error::ResourceLimit {
                n,
                limit: self.limit.min(62),
            });
        }
        Ok(())
    }

    fn chunks(&self, n: usize) -> Vec<(u64, u64)> {
        let total = 1u64 << n;
        let size = 1u64 << self.chunk_bits.min(n);
        (0..total / size).map(|c| (c * size, (c + 1) * size)).collect()
    }

    /// Walk every configuration once, accumulating into one `T` per chunk.
    /// The returned vector is in chunk order.
    fn fold<T, I, V>(&self, model: &ModelSpec, init: I, visit: V) -> Vec<T>
    where
        T: Send,
        I: Fn() -> T + Sync,
        V: Fn(&mut T, &SpinConfiguration, f64) + Sync,
    {
        self.chunks(model.n())
            .into_par_iter()
            .map(|(start, end)| {
                let mut acc = init();
                walk_range(model, start, end, |c, e| visit(&mut acc, c, e));
                acc
            })
            .collect()
    }

    /// Minimum and maximum of `H` over the configurations accepted by `keep`.
    fn energy_range<P>(&self, model: &ModelSpec, keep: P) -> Option<(f64, f64)>
    where
        P: Fn(&SpinConfiguration) -> bool + Sync,
    {
        self.fold(
            model,
            || None,
            |acc: &mut Option<(f64, f64)>, c, e| {
                if keep(c) {
                    *acc = Some(match *acc {
                        Some((lo, hi)) => (lo.min(e), hi.max(e)),
                        None => (e, e),
                    });
                }
            },
        )
        .into_iter()
        .flatten()
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
    }

    pub fn enumerate(&self, model: &ModelSpec, beta: Beta) -> Result<ExactGibbsSummary> {
        self.check(model)?;
        let n = model.n();
        let nf = n as f64;
        let b = beta.value();
        let (h_min, h_max) = self.energy_range(model, |_| true).expect("nonempty");
        let (u_min, u_max) = (h_min / nf, h_max / nf);
        let shift = b * h_max;
        let bins = self.histogram_bins.max(1);

        #[derive(Clone)]
        struct Acc {
            w: f64,
            wu: f64,
            wu2: f64,
            hist: Vec<f64>,
        }
        let parts = self.fold(
            model,
            || Acc {
                w: 0.0,
                wu: 0.0,
                wu2: 0.0,
                hist: vec![0.0; bins],
            },
            |acc, _, e| {
                let w = (b * e - shift).exp();
                let u = e / nf;
                acc.w += w;
                acc.wu += w * u;
                acc.wu2 += w * u * u;
                acc.hist[EnergyHistogram::bin_of(u_min, u_max, bins, u)] += w;
            },
        );
        let mut total = Acc {
            w: 0.0,
            wu: 0.0,
            wu2: 0.0,
            hist: vec![0.0; bins],
        };
        for p in &parts {
            total.w += p.w;
            total.wu += p.wu;
            total.wu2 += p.wu2;
            for (t, x) in total.hist.iter_mut().zip(&p.hist) {
                *t += x;
            }
        }
        let log_z = ShiftedSum {
            shift,
            sum: total.w,
        }
        .log_integral(n)
        .expect("all weights positive");
        let mean = (total.wu / total.w).clamp(u_min, u_max);
        Ok(ExactGibbsSummary {
            n,
            beta,
            free_energy: log_z / nf,
            energy_density_mean: mean,
            energy_density_second_moment: (total.wu2 / total.w).max(mean * mean),
            min_energy_density: u_min,
            max_energy_density: u_max,
            histogram: EnergyHistogram {
                min: u_min,
                max: u_max,
                masses: total.hist.iter().map(|w| w / total.w).collect(),
            },
        })
    }

    pub fn gibbs_expectation<O>(&self, model: &ModelSpec, beta: Beta, observable: O) -> Result<f64>
    where
        O: Fn(&SpinConfiguration) -> f64 + Sync,
    {
        self.check(model)?;
        let b = beta.value();
        let (_, h_max) = self.energy_range(model, |_| true).expect("nonempty");
        let shift = b * h_max;
        let parts = self.fold(
            model,
            || (0.0, 0.0),
            |acc: &mut (f64, f64), c, e| {
                let w = (b * e - shift).exp();
                acc.0 += w;
                acc.1 += w * observable(c);
            },
        );
        let (w, wo) = parts
            .iter()
            .fold((0.0, 0.0), |(a, b), (c, d)| (a + c, b + d));
        Ok(wo / w)
    }

    pub fn set_mass<P>(&self, model: &ModelSpec, beta: Beta, predicate: P) -> Result<SetMass>
    where
        P: Fn(&SpinConfiguration) -> bool + Sync,
    {
        self.check(model)?;
        let n = model.n();
        let b = beta.value();
        let (_, h_max) = self.energy_range(model, |_| true).expect("nonempty");
        let set_range = self.energy_range(model, &predicate);
        let total_shift = b * h_max;
        let set_shift = set_range.map(|(_, hi)| b * hi).unwrap_or(0.0);
        let parts = self.fold(
            model,
            || (0.0, 0.0, 0u64),
            |acc: &mut (f64, f64, u64), c, e| {
                acc.0 += (b * e - total_shift).exp();
                if predicate(c) {
                    acc.1 += (b * e - set_shift).exp();
                    acc.2 += 1;
                }
            },
        );
        let (tot, set, count) = parts
            .iter()
            .fold((0.0, 0.0, 0u64), |a, p| (a.0 + p.0, a.1 + p.1, a.2 + p.2));
        let log_z = ShiftedSum {
            shift: total_shift,
            sum: tot,
        }
        .log_integral(n)
        .expect("nonempty");
        let log_set = ShiftedSum {
            shift: set_shift,
            sum: set,
        }
        .log_integral(n);
        let prior_mass = count as f64 * 0.5f64.powi(n as i32);
        Ok(SetMass {
            gibbs_mass: log_set.map_or(0.0, |ls| (ls - log_z).exp().min(1.0)),
            prior_mass,
            restricted_log_partition: log_set.map(|ls| ls / n as f64),
        })
    }

    pub fn free_energy_curve(&self, model: &ModelSpec, beta_grid: &[Beta]) -> Result<Vec<CurvePoint>> {
        check_grid(beta_grid)?;
        let table = self.energy_table(model)?;
        Ok(beta_grid
            .iter()
            .map(|b| CurvePoint {
                beta: b.value(),
                free_energy: table.free_energy(b.value()),
                energy_density_mean: table.gibbs_mean(b.value(), |u| u),
            })
            .collect())
    }

    /// Energies of all `2^n` configurations, indexed by configuration bits.
    pub fn energy_table(&self, model: &ModelSpec) -> Result<EnergyTable> {
        self.check(model)?;
        let n = model.n();
        let chunks = self.chunks(n);
        let parts: Vec<Vec<f64>> = chunks
            .par_iter()
            .map(|&(start, end)| {
                let mut out = Vec::with_capacity((end - start) as usize);
                walk_range(model, start, end, |_, e| out.push(e));
                out
            })
            .collect();
        let mut energies = vec![0.0; 1usize << n];
        for (&(start, _), part) in chunks.iter().zip(&parts) {
            for (k, &e) in part.iter().enumerate() {
                energies[gray(start + k as u64) as usize] = e;
            }
        }
        Ok(EnergyTable::from_energies(n, energies))
    }
}

fn check_grid(beta_grid: &[Beta]) -> Result<()> {
    if beta_grid.is_empty() {
        return Err(Error::invalid("beta grid is empty"));
    }
    if beta_grid.windows(2).any(|w| w[1].value() <= w[0].value()) {
        return Err(Error::invalid("beta grid must be strictly increasing"));
    }
    Ok(())
}

/// Full enumeration with default settings.
pub fn enumerate(model: &ModelSpec, beta: Beta) -> Result<ExactGibbsSummary> {
    Enumerator::default().enumerate(model, beta)
}

pub fn gibbs_expectation<O>(model: &ModelSpec, beta: Beta, observable: O) -> Result<f64>
where
    O: Fn(&SpinConfiguration) -> f64 + Sync,
{
    Enumerator::default().gibbs_expectation(model, beta, observable)
}

pub fn set_mass<P>(model: &ModelSpec, beta: Beta, predicate: P) -> Result<SetMass>
where
    P: Fn(&SpinConfiguration) -> bool + Sync,
{
    Enumerator::default().set_mass(model, beta, predicate)
}

pub fn free_energy_curve(model: &ModelSpec, beta_grid: &[Beta]) -> Result<Vec<CurvePoint>> {
    Enumerator::default().free_energy_curve(model, beta_grid)
}

/// Stored energies of every configuration, for repeated exact queries at
/// several inverse temperatures or on several sets.
///
/// Methods taking a plain `f64` inverse temperature accept any real value,
/// including negative ones; the finite-size inequalities need free energies
/// at `beta - lambda`, which may fall below zero.
#[derive(Debug, Clone)]
pub struct EnergyTable {
    n: usize,
    energies: Vec<f64>,
    min: f64,
    max: f64,
}

impl EnergyTable {
    pub(crate) fn from_energies(n: usize, energies: Vec<f64>) -> Self {
        let min = energies.iter().copied().fold(f64::INFINITY, f64::min);
        let max = energies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self {
            n,
            energies,
            min,
            max,
        }
    }

    pub fn build(model: &ModelSpec) -> Result<Self> {
        Enumerator::default().energy_table(model)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `H` indexed by configuration bits.
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }

    pub fn min_energy_density(&self) -> f64 {
        self.min / self.n as f64
    }

    pub fn max_energy_density(&self) -> f64 {
        self.max / self.n as f64
    }

    /// `log int 1_A exp(beta H) dnu` over configurations whose energy density
    /// passes `keep`; `None` for an empty set.
    pub fn log_integral<P: Fn(f64) -> bool>(&self, beta: f64, keep: P) -> Option<f64> {
        let nf = self.n as f64;
        let shift = self
            .energies
            .iter()
            .filter(|&&e| keep(e / nf))
            .map(|&e| beta * e)
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return None;
        }
        let sum: f64 = self
            .energies
            .iter()
            .filter(|&&e| keep(e / nf))
            .map(|&e| (beta * e - shift).exp())
            .sum();
        ShiftedSum { shift, sum }.log_integral(self.n)
    }

    /// Same as [`log_integral`](Self::log_integral) with a predicate on the
    /// configuration itself.
    pub fn log_integral_configs<P: Fn(&SpinConfiguration) -> bool>(
        &self,
        beta: f64,
        keep: P,
    ) -> Option<f64> {
        let mask = self.config_mask(keep);
        let shift = self
            .energies
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&e, _)| beta * e)
            .fold(f64::NEG_INFINITY, f64::max);
        if shift == f64::NEG_INFINITY {
            return None;
        }
        let sum: f64 = self
            .energies
            .iter()
            .zip(&mask)
            .filter(|(_, &m)| m)
            .map(|(&e, _)| (beta * e - shift).exp())
            .sum();
        ShiftedSum { shift, sum }.log_integral(self.n)
    }

    fn config_mask<P: Fn(&SpinConfiguration) -> bool>(&self, keep: P) -> Vec<bool> {
        let mut config = SpinConfiguration::all_down(self.n).expect("n >= 1");
        (0..self.energies.len() as u64)
            .map(|bits| {
                config.set_low_bits(bits);
                keep(&config)
            })
            .collect()
    }

    /// `n^{-1} log Z_n(beta)`.
    pub fn free_energy(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            return 0.0;
        }
        self.log_integral(beta, |_| true).expect("nonempty") / self.n as f64
    }

    /// Per-spin restricted log-partition over an energy-density set.
    pub fn restricted_free_energy<P: Fn(f64) -> bool>(&self, beta: f64, keep: P) -> Option<f64> {
        self.log_integral(beta, keep).map(|l| l / self.n as f64)
    }

    /// `nu(A)` for an energy-density set.
    pub fn prior_mass<P: Fn(f64) -> bool>(&self, keep: P) -> f64 {
        let nf = self.n as f64;
        let count = self.energies.iter().filter(|&&e| keep(e / nf)).count();
        count as f64 * 0.5f64.powi(self.n as i32)
    }

    /// `G_beta(A)` for an energy-density set, computed as `exp(n (B_A - F))`.
    pub fn gibbs_mass<P: Fn(f64) -> bool>(&self, beta: f64, keep: P) -> f64 {
        match self.log_integral(beta, keep) {
            Some(l) => (l - self.log_integral(beta, |_| true).expect("nonempty"))
                .exp()
                .min(1.0),
            None => 0.0,
        }
    }

    /// `<f(H/n)>_beta`.
    pub fn gibbs_mean<F: Fn(f64) -> f64>(&self, beta: f64, f: F) -> f64 {
        let nf = self.n as f64;
        let shift = if beta >= 0.0 { beta * self.max } else { beta * self.min };
        let (mut w, mut wf) = (0.0, 0.0);
        for &e in &self.energies {
            let x = (beta * e - shift).exp();
            w += x;
            wf += x * f(e / nf);
        }
        wf / w
    }

    /// Normalized Gibbs probabilities indexed by configuration bits.
    pub fn gibbs_probabilities(&self, beta: f64) -> Vec<f64> {
        let shift = if beta >= 0.0 { beta * self.max } else { beta * self.min };
        let mut p: Vec<f64> = self.energies.iter().map(|&e| (beta * e - shift).exp()).collect();
        let total: f64 = p.iter().sum();
        for x in &mut p {
            *x /= total;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DisorderSample;

    fn beta(b: f64) -> Beta {
        Beta::new(b).unwrap()
    }

    /// Independent oracle: per-configuration recomputation, single pass in
    /// natural order.
    fn naive_free_energy(model: &ModelSpec, b: f64) -> f64 {
        let n = model.n();
        let es: Vec<f64> = (0..1u64 << n)
            .map(|bits| {
                model
                    .hamiltonian(&SpinConfiguration::from_bits(n, bits).unwrap())
                    .unwrap()
            })
            .collect();
        let m = es.iter().map(|e| b * e).fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = es.iter().map(|e| (b * e - m).exp()).sum();
        (m + s.ln() - n as f64 * std::f64::consts::LN_2) / n as f64
    }

    #[test]
    fn gray_code_neighbours_differ_by_one_bit() {
        for i in 1..1024u64 {
            assert_eq!((gray(i) ^ gray(i - 1)).count_ones(), 1);
            assert_eq!(gray(i) ^ gray(i - 1), 1 << i.trailing_zeros());
        }
    }

    #[test]
    fn beta_zero_gives_zero_free_energy() {
        for n in [1, 5, 13] {
            let model = ModelSpec::sk_from_seed(n, 4).unwrap();
            let s = enumerate(&model, Beta::ZERO).unwrap();
            assert_eq!(s.free_energy, 0.0);
        }
    }

    #[test]
    fn constant_field_closed_form() {
        let h = 0.8;
        for n in [3, 9, 14] {
            let model = ModelSpec::constant_field(n, h).unwrap();
            for b in [0.25, 1.0, 2.5] {
                let s = enumerate(&model, beta(b)).unwrap();
                assert!((s.free_energy - (b * h).cosh().ln()).abs() < 1e-12);
                assert!((s.energy_density_mean - h * (b * h).tanh()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sk_two_spin_hand_enumeration() {
        let model = ModelSpec::sk(DisorderSample::from_couplings(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap());
        let s = enumerate(&model, beta(1.0)).unwrap();
        let expected = 0.5 * 2f64.sqrt().cosh().ln();
        assert!((s.free_energy - expected).abs() < 1e-12);
        assert!((s.free_energy - 0.389_245_649_278_835).abs() < 1e-12);
    }

    #[test]
    fn summary_invariants() {
        let model = ModelSpec::sk_from_seed(10, 21).unwrap();
        let s = enumerate(&model, beta(1.3)).unwrap();
        assert!(s.min_energy_density <= s.energy_density_mean);
        assert!(s.energy_density_mean <= s.max_energy_density);
        assert!(s.energy_density_second_moment >= s.energy_density_mean.powi(2));
        assert_eq!(s.histogram.masses.len(), DEFAULT_HISTOGRAM_BINS);
        let total: f64 = s.histogram.masses.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn over_limit_is_a_resource_error() {
        let model = ModelSpec::constant_field(30, 1.0).unwrap();
        assert!(matches!(
            enumerate(&model, beta(1.0)),
            Err(Error::ResourceLimit { n: 30, .. })
        ));
        let small = Enumerator::with_limit(4);
        assert!(small.enumerate(&ModelSpec::constant_field(5, 1.0).unwrap(), beta(1.0)).is_err());
    }

    #[test]
    fn gibbs_expectation_examples() {
        let model = ModelSpec::sk_from_seed(7, 5).unwrap();
        let one = gibbs_expectation(&model, beta(0.9), |_| 1.0).unwrap();
        assert!((one - 1.0).abs() < 1e-12);

        let n = 7.0f64;
        let diag: f64 = {
            let d = model.disorder().unwrap();
            (0..7).map(|i| d.g(i, i)).sum()
        };
        let u0 = gibbs_expectation(&model, Beta::ZERO, |c| model.hamiltonian(c).unwrap() / n).unwrap();
        assert!((u0 - diag * n.powf(-1.5)).abs() < 1e-12);

        let field = ModelSpec::constant_field(9, 0.6).unwrap();
        let m = gibbs_expectation(&field, beta(1.2), |c| c.magnetization_sum() as f64 / 9.0).unwrap();
        assert!((m - (1.2f64 * 0.6).tanh()).abs() < 1e-12);
    }

    #[test]
    fn set_mass_examples() {
        let model = ModelSpec::sk_from_seed(9, 6).unwrap();
        let b = beta(1.1);
        let all = set_mass(&model, b, |_| true).unwrap();
        let f = enumerate(&model, b).unwrap().free_energy;
        assert!((all.gibbs_mass - 1.0).abs() < 1e-12);
        assert_eq!(all.prior_mass, 1.0);
        assert!((all.restricted_log_partition.unwrap() - f).abs() < 1e-12);

        let none = set_mass(&model, b, |_| false).unwrap();
        assert_eq!(none.restricted_log_partition, None);
        assert_eq!(none.gibbs_mass, 0.0);

        let pred = |c: &SpinConfiguration| c.is_up(0) && c.magnetization_sum() > 0;
        let at_zero = set_mass(&model, Beta::ZERO, pred).unwrap();
        assert!((at_zero.gibbs_mass - at_zero.prior_mass).abs() < 1e-12);

        let p = set_mass(&model, b, pred).unwrap();
        let q = set_mass(&model, b, |c| !pred(c)).unwrap();
        let nf = 9.0;
        let lhs = (nf * p.restricted_log_partition.unwrap()).exp()
            + (nf * q.restricted_log_partition.unwrap()).exp();
        let rhs = (nf * f).exp();
        assert!(((lhs - rhs) / rhs).abs() < 1e-10);
    }

    #[test]
    fn gray_walk_matches_naive_recomputation() {
        for n in 1..=12 {
            for seed in 0..50u64 {
                let model = ModelSpec::sk_from_seed(n, 1000 * n as u64 + seed).unwrap();
                for b in [0.5, 1.5] {
                    let fast = enumerate(&model, beta(b)).unwrap().free_energy;
                    let slow = naive_free_energy(&model, b);
                    assert!(
                        ((fast - slow) / slow.abs().max(1e-300)).abs() <= 1e-10,
                        "n={n} seed={seed}: {fast} vs {slow}"
                    );
                }
            }
        }
    }

    #[test]
    fn chunking_does_not_change_results() {
        let model = ModelSpec::sk_from_seed(14, 99).unwrap();
        let reference = Enumerator {
            chunk_bits: 14,
            ..Enumerator::default()
        }
        .enumerate(&model, beta(1.0))
        .unwrap();
        for chunk_bits in [2, 5, 9, 12] {
            let s = Enumerator {
                chunk_bits,
                ..Enumerator::default()
            }
            .enumerate(&model, beta(1.0))
            .unwrap();
            assert!((s.free_energy - reference.free_energy).abs() <= 1e-12);
            assert!((s.energy_density_mean - reference.energy_density_mean).abs() <= 1e-12);
        }
    }

    #[test]
    fn table_agrees_with_streaming() {
        let model = ModelSpec::sk_from_seed(11, 3).unwrap();
        let table = EnergyTable::build(&model).unwrap();
        for b in [0.0, 0.4, 1.7] {
            let s = enumerate(&model, beta(b)).unwrap();
            assert!((table.free_energy(b) - s.free_energy).abs() < 1e-12);
            assert!((table.gibbs_mean(b, |u| u) - s.energy_density_mean).abs() < 1e-12);
        }
        for bits in [0u64, 5, 2047] {
            let c = SpinConfiguration::from_bits(11, bits).unwrap();
            assert!((table.energies()[bits as usize] - model.hamiltonian(&c).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_constant_field_closed_form() {
        let model = ModelSpec::constant_field(8, 1.0).unwrap();
        let grid: Vec<Beta> = [0.0, 0.5, 1.0].iter().map(|&b| beta(b)).collect();
        let curve = free_energy_curve(&model, &grid).unwrap();
        assert_eq!(curve[0].free_energy, 0.0);
        assert!(curve[0].energy_density_mean.abs() < 1e-12);
        for p in &curve {
            assert!((p.free_energy - p.beta.cosh().ln()).abs() < 1e-12);
            assert!((p.energy_density_mean - p.beta.tanh()).abs() < 1e-12);
        }
    }

    #[test]
    fn curve_rejects_bad_grids() {
        let model = ModelSpec::constant_field(3, 1.0).unwrap();
        assert!(free_energy_curve(&model, &[]).is_err());
        assert!(free_energy_curve(&model, &[beta(1.0), beta(0.5)]).is_err());
        assert!(free_energy_curve(&model, &[beta(1.0), beta(1.0)]).is_err());
    }

    #[test]
    fn convexity_and_support_bounds() {
        for seed in 0..10 {
            let model = ModelSpec::sk_from_seed(9, seed).unwrap();
            let table = EnergyTable::build(&model).unwrap();
            let step = 0.05;
            for k in 1..40 {
                let b = k as f64 * step;
                let second = table.free_energy(b - step) - 2.0 * table.free_energy(b)
                    + table.free_energy(b + step);
                assert!(second >= -1e-9);
                let f = table.free_energy(b);
                assert!(f >= b * table.min_energy_density() - 1e-12);
                assert!(f <= b * table.max_energy_density() + 1e-12);
            }
        }
    }

    #[test]
    fn derivative_matches_centered_difference() {
        let model = ModelSpec::sk_from_seed(8, 17).unwrap();
        let table = EnergyTable::build(&model).unwrap();
        let step = 1e-3;
        for b in [0.3, 1.0, 1.8] {
            let fd = (table.free_energy(b + step) - table.free_energy(b - step)) / (2.0 * step);
            let u = gibbs_expectation(&model, beta(b), |c| model.hamiltonian(c).unwrap() / 8.0).unwrap();
            assert!((fd - u).abs() < 1e-5);
        }
    }

    #[test]
    fn histogram_rows_cover_the_range() {
        let model = ModelSpec::sk_from_seed(6, 2).unwrap();
        let s = enumerate(&model, beta(0.7)).unwrap();
        let rows = s.histogram.rows();
        assert_eq!(rows.first().unwrap().0, s.min_energy_density);
        assert_eq!(rows.last().unwrap().1, s.max_energy_density);
    }
}
