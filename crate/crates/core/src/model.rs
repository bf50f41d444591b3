//! Hamiltonians, disorder and the inverse-temperature type.
//!
//! Gibbs weights throughout the crate are `exp(+beta * H)`, with no minus
//! sign. Large positive energies are favoured at large `beta`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, BoxMuller};
use crate::spin::SpinConfiguration;
use crate::stats::{self, Estimate};

/// Inverse temperature, finite and nonnegative.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Beta(f64);

impl Beta {
    pub const ZERO: Beta = Beta(0.0);

    pub fn new(value: f64) -> Result<Self> {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::invalid(format!(
                "beta must be finite and >= 0, got {value}"
            )));
        }
        Ok(Beta(value))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Beta {
    type Error = Error;
    fn try_from(v: f64) -> Result<Self> {
        Beta::new(v)
    }
}

impl From<Beta> for f64 {
    fn from(b: Beta) -> f64 {
        b.0
    }
}

/// Quenched Gaussian couplings `g_ij` of the SK model.
///
/// The matrix is dense and row-major and is NOT symmetrized: `g_ij` and
/// `g_ji` are independent draws and the diagonal is populated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisorderSample {
    pub n: usize,
    pub seed: u64,
    pub rng_id: String,
    pub couplings: Vec<f64>,
}

impl DisorderSample {
    /// Draws `n^2` standard normals in row-major order from the stream of `seed`.
    pub fn sk(n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("disorder needs n >= 1".into()));
        }
        let mut gauss = BoxMuller::new(rng::stream(seed));
        let couplings = (0..n * n).map(|_| gauss.next_normal()).collect();
        Ok(Self {
            n,
            seed,
            rng_id: rng::RNG_ID.to_string(),
            couplings,
        })
    }

    /// Explicit couplings, for hand-built instances. The seed is recorded as 0.
    pub fn from_couplings(n: usize, couplings: Vec<f64>) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("disorder needs n >= 1".into()));
        }
        if couplings.len() != n * n {
            return Err(Error::invalid(format!(
                "expected {} couplings, got {}",
                n * n,
                couplings.len()
            )));
        }
        if couplings.iter().any(|g| !g.is_finite()) {
            return Err(Error::invalid("couplings must be finite"));
        }
        Ok(Self {
            n,
            seed: 0,
            rng_id: "explicit".to_string(),
            couplings,
        })
    }

    /// Check the sample against a regeneration from its own seed.
    pub fn verify_regeneration(&self) -> Result<bool> {
        if self.rng_id != rng::RNG_ID {
            return Ok(false);
        }
        Ok(DisorderSample::sk(self.n, self.seed)?.couplings == self.couplings)
    }

    #[inline]
    pub fn g(&self, i: usize, j: usize) -> f64 {
        self.couplings[i * self.n + j]
    }

    pub fn negated(&self) -> Self {
        let mut d = self.clone();
        for g in &mut d.couplings {
            *g = -*g;
        }
        d
    }
}

/// Precomputed SK coupling data.
#[derive(Debug, Clone)]
pub struct SkCouplings {
    disorder: DisorderSample,
    /// `g_ij + g_ji` off the diagonal, zero on it.
    pair: Vec<f64>,
    diagonal_sum: f64,
    inv_sqrt_n: f64,
}

impl SkCouplings {
    fn new(disorder: DisorderSample) -> Self {
        let n = disorder.n;
        let mut pair = vec![0.0; n * n];
        let mut diagonal_sum = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i == j {
                    diagonal_sum += disorder.g(i, i);
                } else {
                    pair[i * n + j] = disorder.g(i, j) + disorder.g(j, i);
                }
            }
        }
        Self {
            inv_sqrt_n: 1.0 / (n as f64).sqrt(),
            disorder,
            pair,
            diagonal_sum,
        }
    }

    pub fn disorder(&self) -> &DisorderSample {
        &self.disorder
    }

    /// `N^{-1/2} sum_i g_ii`, the configuration-independent part of `H`.
    pub fn diagonal_energy(&self) -> f64 {
        self.diagonal_sum * self.inv_sqrt_n
    }
}

/// A Hamiltonian on `{-1,+1}^n`.
#[derive(Debug, Clone)]
pub enum ModelSpec {
    /// `H(sigma) = N^{-1/2} sum_{i,j} g_ij sigma_i sigma_j`, all ordered pairs
    /// including `i = j`.
    Sk(Arc<SkCouplings>),
    /// `H(sigma) = h sum_i sigma_i`; its free energy is `log cosh(beta h)`.
    ConstantField { n: usize, h: f64 },
}

impl ModelSpec {
    pub fn sk(disorder: DisorderSample) -> Self {
        ModelSpec::Sk(Arc::new(SkCouplings::new(disorder)))
    }

    pub fn sk_from_seed(n: usize, seed: u64) -> Result<Self> {
        Ok(Self::sk(DisorderSample::sk(n, seed)?))
    }

    pub fn constant_field(n: usize, h: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("model needs n >= 1".into()));
        }
        if !h.is_finite() {
            return Err(Error::invalid("field strength must be finite"));
        }
        Ok(ModelSpec::ConstantField { n, h })
    }

    pub fn n(&self) -> usize {
        match self {
            ModelSpec::Sk(sk) => sk.disorder.n,
            ModelSpec::ConstantField { n, .. } => *n,
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Sk(_) => "sk",
            ModelSpec::ConstantField { .. } => "field",
        }
    }

    pub fn disorder(&self) -> Option<&DisorderSample> {
        match self {
            ModelSpec::Sk(sk) => Some(&sk.disorder),
            ModelSpec::ConstantField { .. } => None,
        }
    }

    fn check_size(&self, config: &SpinConfiguration) -> Result<()> {
        if config.n() != self.n() {
            return Err(Error::invalid(format!(
                "configuration has n = {}, model has n = {}",
                config.n(),
                self.n()
            )));
        }
        Ok(())
    }

    pub fn hamiltonian(&self, config: &SpinConfiguration) -> Result<f64> {
        self.check_size(config)?;
        Ok(self.energy_of_spins(&config.to_f64()))
    }

    /// `H` on a `+-1.0` vector of the right length.
    pub(crate) fn energy_of_spins(&self, spins: &[f64]) -> f64 {
        match self {
            ModelSpec::Sk(sk) => {
                let n = spins.len();
                let g = &sk.disorder.couplings;
                let mut total = 0.0;
                for i in 0..n {
                    let row = &g[i * n..(i + 1) * n];
                    let local: f64 = row.iter().zip(spins).map(|(gij, sj)| gij * sj).sum();
                    total += spins[i] * local;
                }
                total * sk.inv_sqrt_n
            }
            ModelSpec::ConstantField { h, .. } => h * spins.iter().sum::<f64>(),
        }
    }

    /// `H(sigma with site flipped) - H(sigma)`.
    pub fn energy_flip_delta(&self, config: &SpinConfiguration, site: usize) -> Result<f64> {
        self.check_size(config)?;
        config.check_site(site)?;
        Ok(self.flip_delta_of_spins(&config.to_f64(), site))
    }

    /// O(n) flip delta; the SK diagonal term is invariant under a flip.
    #[inline]
    pub(crate) fn flip_delta_of_spins(&self, spins: &[f64], site: usize) -> f64 {
        match self {
            ModelSpec::Sk(sk) => {
                let n = spins.len();
                let row = &sk.pair[site * n..(site + 1) * n];
                let local: f64 = row.iter().zip(spins).map(|(j, s)| j * s).sum();
                -2.0 * spins[site] * local * sk.inv_sqrt_n
            }
            ModelSpec::ConstantField { h, .. } => -2.0 * h * spins[site],
        }
    }
}

/// Empirical `E[H(sigma) H(sigma')]` over `n_samples` fresh SK disorder draws
/// with seeds `derive_seed(master_seed, k)`.
pub fn covariance_probe(
    n: usize,
    configs: (&SpinConfiguration, &SpinConfiguration),
    n_samples: usize,
    master_seed: u64,
) -> Result<Estimate> {
    if n_samples < 2 {
        return Err(Error::invalid("covariance_probe needs n_samples >= 2"));
    }
    let (a, b) = configs;
    if a.n() != n || b.n() != n {
        return Err(Error::invalid(format!(
            "configurations must have n = {n}, got {} and {}",
            a.n(),
            b.n()
        )));
    }
    let (sa, sb) = (a.to_f64(), b.to_f64());
    let products = (0..n_samples as u64)
        .map(|k| {
            let model = ModelSpec::sk_from_seed(n, rng::derive_seed(master_seed, k))?;
            Ok(model.energy_of_spins(&sa) * model.energy_of_spins(&sb))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(stats::mean_stderr(&products))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn all_configs(n: usize) -> impl Iterator<Item = SpinConfiguration> {
        (0..1u64 << n).map(move |b| SpinConfiguration::from_bits(n, b).unwrap())
    }

    #[test]
    fn disorder_is_deterministic() {
        let a = DisorderSample::sk(3, 42).unwrap();
        let b = DisorderSample::sk(3, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.couplings.len(), 9);
        assert_eq!(a.rng_id, rng::RNG_ID);
        assert!(a.verify_regeneration().unwrap());
        assert_eq!(DisorderSample::sk(1, 5).unwrap().couplings.len(), 1);
    }

    #[test]
    fn zero_size_disorder_is_rejected() {
        assert!(matches!(DisorderSample::sk(0, 1), Err(Error::InvalidSize(_))));
    }

    #[test]
    fn disorder_round_trips_through_json() {
        let d = DisorderSample::sk(4, 9).unwrap();
        let json = serde_json::to_string(&d).unwrap();
        assert!(json.contains("\"rng_id\""));
        let back: DisorderSample = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn standard_normal_moments() {
        // g_11 over 1e5 seeds: mean and variance within 4 sigma of (0, 1).
        let m = 100_000;
        let xs: Vec<f64> = (0..m)
            .map(|k| DisorderSample::sk(1, rng::derive_seed(77, k)).unwrap().couplings[0])
            .collect();
        let mean = stats::mean(&xs);
        let var = stats::variance(&xs);
        let sd_mean = (1.0 / m as f64).sqrt();
        let sd_var = (2.0 / m as f64).sqrt();
        assert!(mean.abs() < 4.0 * sd_mean, "mean {mean}");
        assert!((var - 1.0).abs() < 4.0 * sd_var, "var {var}");
    }

    #[test]
    fn sk_single_spin_energy_is_g11() {
        let model = ModelSpec::sk_from_seed(1, 3).unwrap();
        let g11 = model.disorder().unwrap().couplings[0];
        for c in all_configs(1) {
            assert_eq!(model.hamiltonian(&c).unwrap(), g11);
        }
    }

    #[test]
    fn constant_field_all_up() {
        let model = ModelSpec::constant_field(7, 0.3).unwrap();
        let c = SpinConfiguration::all_up(7).unwrap();
        assert!((model.hamiltonian(&c).unwrap() - 7.0 * 0.3).abs() < 1e-15);
    }

    #[test]
    fn sk_two_spin_hand_example() {
        let d = DisorderSample::from_couplings(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let model = ModelSpec::sk(d);
        let up = SpinConfiguration::all_up(2).unwrap();
        assert!((model.hamiltonian(&up).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let model = ModelSpec::constant_field(3, 1.0).unwrap();
        let c = SpinConfiguration::all_up(4).unwrap();
        assert!(model.hamiltonian(&c).is_err());
        assert!(model.energy_flip_delta(&SpinConfiguration::all_up(3).unwrap(), 3).is_err());
    }

    #[test]
    fn constant_field_flip_delta() {
        let model = ModelSpec::constant_field(3, 0.7).unwrap();
        let c = SpinConfiguration::all_up(3).unwrap();
        assert!((model.energy_flip_delta(&c, 1).unwrap() + 1.4).abs() < 1e-15);
    }

    #[test]
    fn flip_delta_matches_recomputation() {
        for seed in 0..20 {
            let n = 8;
            let model = ModelSpec::sk_from_seed(n, seed).unwrap();
            let mut r = rng::stream(seed + 100);
            let c = SpinConfiguration::random(n, &mut r).unwrap();
            let h0 = model.hamiltonian(&c).unwrap();
            for site in 0..n {
                let flipped = c.flipped(site).unwrap();
                let direct = model.hamiltonian(&flipped).unwrap() - h0;
                let delta = model.energy_flip_delta(&c, site).unwrap();
                assert!((direct - delta).abs() <= 1e-12, "seed {seed} site {site}");
                let back = model.energy_flip_delta(&flipped, site).unwrap();
                assert!((delta + back).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn diagonal_contribution_is_configuration_independent() {
        // With off-diagonal couplings removed, H is the same on all 2^N states.
        let n = 5;
        let full = DisorderSample::sk(n, 8).unwrap();
        let mut diag_only = vec![0.0; n * n];
        for i in 0..n {
            diag_only[i * n + i] = full.g(i, i);
        }
        let model = ModelSpec::sk(DisorderSample::from_couplings(n, diag_only).unwrap());
        let expected = match &ModelSpec::sk(full) {
            ModelSpec::Sk(sk) => sk.diagonal_energy(),
            _ => unreachable!(),
        };
        for c in all_configs(n) {
            assert!((model.hamiltonian(&c).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_diagonal_case() {
        let n = 6;
        let s = SpinConfiguration::from_bits(n, 0b101101).unwrap();
        let est = covariance_probe(n, (&s, &s), 20_000, 1).unwrap();
        assert!((est.value - n as f64).abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn covariance_zero_overlap() {
        let n = 6;
        let s = SpinConfiguration::all_up(n).unwrap();
        let t = SpinConfiguration::from_bits(n, 0b000111).unwrap();
        let est = covariance_probe(n, (&s, &t), 20_000, 2).unwrap();
        assert!(est.value.abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn covariance_quarter_overlap() {
        // N = 4, one site differs: R = 1/2, E H H' = 4 * 1/4 = 1.
        let s = SpinConfiguration::all_up(4).unwrap();
        let t = s.flipped(0).unwrap();
        let est = covariance_probe(4, (&s, &t), 20_000, 3).unwrap();
        assert!((est.value - 1.0).abs() < 4.0 * est.stderr, "{est:?}");
    }

    #[test]
    fn covariance_needs_two_samples() {
        let s = SpinConfiguration::all_up(2).unwrap();
        assert!(covariance_probe(2, (&s, &s), 1, 0).is_err());
    }

    #[test]
    fn beta_validation() {
        assert!(Beta::new(-0.1).is_err());
        assert!(Beta::new(f64::NAN).is_err());
        assert!(Beta::new(f64::INFINITY).is_err());
        assert_eq!(Beta::new(0.5).unwrap().value(), 0.5);
    }

    proptest! {
        #[test]
        fn global_disorder_sign_flip_negates_energy(seed in any::<u64>(), bits in any::<u64>(), n in 1usize..10) {
            let d = DisorderSample::sk(n, seed).unwrap();
            let neg = ModelSpec::sk(d.negated());
            let pos = ModelSpec::sk(d);
            let c = SpinConfiguration::from_bits(n, bits).unwrap();
            prop_assert_eq!(neg.hamiltonian(&c).unwrap(), -pos.hamiltonian(&c).unwrap());
        }

        #[test]
        fn flip_delta_property(seed in any::<u64>(), bits in any::<u64>(), n in 1usize..=10) {
            let model = ModelSpec::sk_from_seed(n, seed).unwrap();
            let c = SpinConfiguration::from_bits(n, bits).unwrap();
            let h0 = model.hamiltonian(&c).unwrap();
            for site in 0..n {
                let h1 = model.hamiltonian(&c.flipped(site).unwrap()).unwrap();
                prop_assert!((h1 - h0 - model.energy_flip_delta(&c, site).unwrap()).abs() <= 1e-12);
            }
        }
    }
}
