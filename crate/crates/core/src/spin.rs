//! Bit-packed spin configurations on the hypercube `{-1, +1}^n`.

use std::fmt;

use rand::RngCore;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// An assignment of `n` Ising spins. Bit `i` is set iff spin `i` is `+1`;
/// bits past `n` in the last word are always zero.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct SpinConfiguration {
    n: usize,
    words: Vec<u64>,
}

fn word_count(n: usize) -> usize {
    n.div_ceil(64)
}

impl SpinConfiguration {
    /// All spins `-1`.
    pub fn all_down(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidSize("configurations need n >= 1".into()));
        }
        Ok(Self {
            n,
            words: vec![0; word_count(n)],
        })
    }

    /// All spins `+1`.
    pub fn all_up(n: usize) -> Result<Self> {
        let mut c = Self::all_down(n)?;
        for w in &mut c.words {
            *w = u64::MAX;
        }
        c.mask_tail();
        Ok(c)
    }

    /// Configuration whose spin `i` is `+1` iff bit `i` of `bits` is set.
    pub fn from_bits(n: usize, bits: u64) -> Result<Self> {
        let mut c = Self::all_down(n)?;
        c.words[0] = bits;
        c.mask_tail();
        Ok(c)
    }

    pub fn from_spins(spins: &[i8]) -> Result<Self> {
        let mut c = Self::all_down(spins.len())?;
        for (i, &s) in spins.iter().enumerate() {
            match s {
                1 => c.words[i / 64] |= 1 << (i % 64),
                -1 => {}
                other => {
                    return Err(Error::invalid(format!(
                        "spin values must be -1 or +1, got {other} at site {i}"
                    )))
                }
            }
        }
        Ok(c)
    }

    pub fn random<R: RngCore + ?Sized>(n: usize, rng: &mut R) -> Result<Self> {
        let mut c = Self::all_down(n)?;
        for w in &mut c.words {
            *w = rng.next_u64();
        }
        c.mask_tail();
        Ok(c)
    }

    fn mask_tail(&mut self) {
        let rem = self.n % 64;
        if rem != 0 {
            let last = self.words.len() - 1;
            self.words[last] &= (1u64 << rem) - 1;
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    /// The low 64 spins as a bit word (the whole configuration when `n <= 64`).
    pub fn low_bits(&self) -> u64 {
        self.words[0]
    }

    /// Overwrite the configuration from a bit word; requires `n <= 64`.
    pub(crate) fn set_low_bits(&mut self, bits: u64) {
        debug_assert!(self.n <= 64);
        self.words[0] = bits;
        self.mask_tail();
    }

    #[inline]
    pub fn is_up(&self, site: usize) -> bool {
        debug_assert!(site < self.n);
        (self.words[site / 64] >> (site % 64)) & 1 == 1
    }

    /// Spin value as `+1.0` or `-1.0`.
    #[inline]
    pub fn spin(&self, site: usize) -> f64 {
        if self.is_up(site) {
            1.0
        } else {
            -1.0
        }
    }

    #[inline]
    pub fn flip(&mut self, site: usize) {
        debug_assert!(site < self.n);
        self.words[site / 64] ^= 1 << (site % 64);
    }

    pub fn flipped(&self, site: usize) -> Result<Self> {
        self.check_site(site)?;
        let mut c = self.clone();
        c.flip(site);
        Ok(c)
    }

    /// The configuration `-sigma`.
    pub fn negated(&self) -> Self {
        let mut c = self.clone();
        for w in &mut c.words {
            *w = !*w;
        }
        c.mask_tail();
        c
    }

    pub(crate) fn check_site(&self, site: usize) -> Result<()> {
        if site >= self.n {
            return Err(Error::invalid(format!(
                "site {site} out of range for n = {}",
                self.n
            )));
        }
        Ok(())
    }

    pub fn to_spins(&self) -> Vec<i8> {
        (0..self.n).map(|i| if self.is_up(i) { 1 } else { -1 }).collect()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.spin(i)).collect()
    }

    /// Number of sites where the two configurations disagree.
    pub fn hamming_distance(&self, other: &Self) -> Result<usize> {
        if self.n != other.n {
            return Err(Error::invalid(format!(
                "size mismatch: {} vs {}",
                self.n, other.n
            )));
        }
        Ok(self
            .words
            .iter()
            .zip(&other.words)
            .map(|(a, b)| (a ^ b).count_ones() as usize)
            .sum())
    }

    /// Sum of spins.
    pub fn magnetization_sum(&self) -> i64 {
        let up: u32 = self.words.iter().map(|w| w.count_ones()).sum();
        2 * up as i64 - self.n as i64
    }
}

impl fmt::Debug for SpinConfiguration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: String = (0..self.n)
            .map(|i| if self.is_up(i) { '+' } else { '-' })
            .collect();
        write!(f, "SpinConfiguration({s})")
    }
}

impl Serialize for SpinConfiguration {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_spins().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SpinConfiguration {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let spins = Vec::<i8>::deserialize(deserializer)?;
        SpinConfiguration::from_spins(&spins).map_err(serde::de::Error::custom)
    }
}
