//! Replica overlaps, bounded overlap functions, and the disorder-averaged
//! integration-by-parts and Ghirlanda-Guerra audits for the SK model.
//!
//! Brackets of products of overlap functions are evaluated exactly by
//! XOR-convolving single-replica Gibbs weights (a Walsh-Hadamard transform
//! per edge of the replica graph), or empirically from independent chains.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::EnergyTable;
use crate::mc::{self, ReplicaSampling};
use crate::model::{Beta, ModelSpec};
use crate::spin::SpinConfiguration;
use crate::stats::{self, Estimate};

/// Largest `replicas * n` evaluated by brute force when the replica graph has
/// a cycle.
pub const CYCLE_BRUTE_FORCE_BITS: usize = 24;

/// `R(a, b) = n^{-1} sum_i a_i b_i`.
pub fn overlap(a: &SpinConfiguration, b: &SpinConfiguration) -> Result<f64> {
    let d = a.hamming_distance(b)?;
    Ok(overlap_from_distance(a.n(), d))
}

fn overlap_from_distance(n: usize, d: usize) -> f64 {
    (n as f64 - 2.0 * d as f64) / n as f64
}

/// One factor of an overlap monomial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum OverlapFactor {
    Power(u32),
    Abs,
}

impl OverlapFactor {
    fn apply(self, r: f64) -> f64 {
        match self {
            OverlapFactor::Power(k) => r.powi(k as i32),
            OverlapFactor::Abs => r.abs(),
        }
    }
}

/// `coef * prod f(R_ab)` with replica labels starting at 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Monomial {
    pub coef: f64,
    pub factors: Vec<(usize, usize, OverlapFactor)>,
}

/// A bounded function of replica overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phi {
    id: String,
    monomials: Vec<Monomial>,
    sup_norm: f64,
}

impl Phi {
    pub fn one() -> Self {
        Self::from_monomials("1", vec![Monomial { coef: 1.0, factors: vec![] }])
            .expect("constant is valid")
    }

    pub fn r12_squared() -> Self {
        Self::overlap_power(1, 2, 2).expect("labels are valid")
    }

    pub fn abs_r12() -> Self {
        Self::from_monomials(
            "|r12|",
            vec![Monomial { coef: 1.0, factors: vec![(1, 2, OverlapFactor::Abs)] }],
        )
        .expect("labels are valid")
    }

    /// `R_ab^k`.
    pub fn overlap_power(a: usize, b: usize, k: u32) -> Result<Self> {
        Self::from_monomials(
            &format!("r{a}{b}^{k}"),
            vec![Monomial { coef: 1.0, factors: vec![(a, b, OverlapFactor::Power(k))] }],
        )
    }

    /// A polynomial in overlaps; its sup-norm bound is `sum |coef|`.
    pub fn from_monomials(id: &str, monomials: Vec<Monomial>) -> Result<Self> {
        if monomials.is_empty() {
            return Err(Error::invalid("phi needs at least one monomial"));
        }
        for m in &monomials {
            if !m.coef.is_finite() {
                return Err(Error::invalid(format!("non-finite coefficient in phi `{id}`")));
            }
            if let Some(&(a, b, _)) = m.factors.iter().find(|(a, b, _)| *a == 0 || *b == 0) {
                return Err(Error::invalid(format!("replica labels start at 1, got r{a}{b}")));
            }
        }
        let sup_norm = monomials.iter().map(|m| m.coef.abs()).sum();
        Ok(Self { id: id.to_string(), monomials, sup_norm })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn monomials(&self) -> &[Monomial] {
        &self.monomials
    }

    /// Largest replica label used, 0 for a constant.
    pub fn max_replica(&self) -> usize {
        self.monomials
            .iter()
            .flat_map(|m| m.factors.iter().map(|&(a, b, _)| a.max(b)))
            .max()
            .unwrap_or(0)
    }

    /// Pointwise product.
    pub fn times(&self, other: &Phi) -> Phi {
        let mut monomials = Vec::with_capacity(self.monomials.len() * other.monomials.len());
        for a in &self.monomials {
            for b in &other.monomials {
                let mut factors = a.factors.clone();
                factors.extend_from_slice(&b.factors);
                monomials.push(Monomial { coef: a.coef * b.coef, factors });
            }
        }
        Phi {
            id: format!("({})*({})", self.id, other.id),
            monomials,
            sup_norm: self.sup_norm * other.sup_norm,
        }
    }

    /// Evaluate on explicit overlaps `r(a, b)`.
    pub fn eval_with(&self, r: impl Fn(usize, usize) -> f64) -> f64 {
        self.monomials
            .iter()
            .map(|m| m.coef * m.factors.iter().map(|&(a, b, f)| f.apply(r(a, b))).product::<f64>())
            .sum()
    }
}

impl fmt::Display for Phi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id)
    }
}

/// Parses `1`, `r12^2`, `|r12|`, `abs_r12`, and sums of products of these
/// with numeric coefficients, e.g. `0.5*r12^2*r13^2 - |r23|`.
impl FromStr for Phi {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let id: String = s.chars().filter(|c| !c.is_whitespace()).collect();
        let id = match id.as_str() {
            "one" => "1".to_string(),
            "r12_squared" | "r12sq" => "r12^2".to_string(),
            "abs_r12" => "|r12|".to_string(),
            _ => id,
        };
        let monomials = PhiParser { s: id.as_bytes(), pos: 0 }.parse()?;
        Phi::from_monomials(&id, monomials)
    }
}

struct PhiParser<'a> {
    s: &'a [u8],
    pos: usize,
}

impl PhiParser<'_> {
    fn err(&self, what: &str) -> Error {
        Error::invalid(format!(
            "cannot parse phi `{}` at offset {}: {what}",
            String::from_utf8_lossy(self.s),
            self.pos
        ))
    }

    fn peek(&self) -> Option<u8> {
        self.s.get(self.pos).copied()
    }

    fn parse(mut self) -> Result<Vec<Monomial>> {
        if self.s.is_empty() {
            return Err(self.err("empty"));
        }
        let mut out = Vec::new();
        let mut sign = 1.0;
        if let Some(c @ (b'+' | b'-')) = self.peek() {
            sign = if c == b'-' { -1.0 } else { 1.0 };
            self.pos += 1;
        }
        loop {
            let mut m = self.term()?;
            m.coef *= sign;
            out.push(m);
            match self.peek() {
                None => return Ok(out),
                Some(b'+') => sign = 1.0,
                Some(b'-') => sign = -1.0,
                Some(_) => return Err(self.err("expected `+` or `-`")),
            }
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<Monomial> {
        let mut m = Monomial { coef: 1.0, factors: vec![] };
        loop {
            self.factor(&mut m)?;
            if self.peek() == Some(b'*') {
                self.pos += 1;
            } else {
                return Ok(m);
            }
        }
    }

    fn labels(&mut self) -> Result<(usize, usize)> {
        let a = self.digit()?;
        let b = self.digit()?;
        Ok((a, b))
    }

    fn digit(&mut self) -> Result<usize> {
        match self.peek() {
            Some(c @ b'1'..=b'9') => {
                self.pos += 1;
                Ok((c - b'0') as usize)
            }
            _ => Err(self.err("expected a replica label 1-9")),
        }
    }

    fn factor(&mut self, m: &mut Monomial) -> Result<()> {
        let rest = &self.s[self.pos..];
        if rest.starts_with(b"abs_r") {
            self.pos += 5;
            let (a, b) = self.labels()?;
            m.factors.push((a, b, OverlapFactor::Abs));
        } else if rest.starts_with(b"|r") {
            self.pos += 2;
            let (a, b) = self.labels()?;
            if self.peek() != Some(b'|') {
                return Err(self.err("expected closing `|`"));
            }
            self.pos += 1;
            m.factors.push((a, b, OverlapFactor::Abs));
        } else if rest.starts_with(b"r") {
            self.pos += 1;
            let (a, b) = self.labels()?;
            let mut k = 1;
            if self.peek() == Some(b'^') {
                self.pos += 1;
                let start = self.pos;
                while matches!(self.peek(), Some(b'0'..=b'9')) {
                    self.pos += 1;
                }
                k = std::str::from_utf8(&self.s[start..self.pos])
                    .ok()
                    .and_then(|t| t.parse::<u32>().ok())
                    .ok_or_else(|| self.err("expected an integer exponent"))?;
            }
            m.factors.push((a, b, OverlapFactor::Power(k)));
        } else {
            let start = self.pos;
            while let Some(c) = self.peek() {
                let exp_sign = matches!(c, b'+' | b'-')
                    && self.pos > start
                    && matches!(self.s[self.pos - 1], b'e' | b'E');
                if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' || exp_sign {
                    self.pos += 1;
                } else {
                    break;
                }
            }
            let v = std::str::from_utf8(&self.s[start..self.pos])
                .ok()
                .and_then(|t| t.parse::<f64>().ok())
                .ok_or_else(|| self.err("expected a number or an overlap factor"))?;
            m.coef *= v;
        }
        Ok(())
    }
}

/// Where the replicas of a batch come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReplicaSource {
    /// Gibbs probabilities and energy densities indexed by configuration
    /// bits; any number of replicas is an exact product measure.
    ExactProductMeasure {
        probabilities: Vec<f64>,
        energy_density: Vec<f64>,
    },
    /// `snapshots[t * chains + c]` is chain `c` at retained time `t`.
    McChains {
        chains: usize,
        snapshots: Vec<SpinConfiguration>,
        energy_density: Vec<f64>,
    },
}

/// Replicas of one disorder sample at one temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaBatch {
    pub n: usize,
    pub beta: Beta,
    pub disorder_ref: u64,
    pub source: ReplicaSource,
}

fn disorder_ref(model: &ModelSpec) -> u64 {
    model.disorder().map_or(0, |d| d.seed)
}

impl ReplicaBatch {
    /// Exact product measure from enumeration.
    pub fn exact(model: &ModelSpec, beta: Beta) -> Result<Self> {
        let table = EnergyTable::build(model)?;
        Ok(Self::from_table(&table, beta, disorder_ref(model)))
    }

    pub fn from_table(table: &EnergyTable, beta: Beta, disorder_ref: u64) -> Self {
        let n = table.n();
        let nf = n as f64;
        Self {
            n,
            beta,
            disorder_ref,
            source: ReplicaSource::ExactProductMeasure {
                probabilities: table.gibbs_probabilities(beta.value()),
                energy_density: table.energies().iter().map(|e| e / nf).collect(),
            },
        }
    }

    pub fn from_chains(
        model: &ModelSpec,
        beta: Beta,
        chains: usize,
        snapshots: Vec<SpinConfiguration>,
    ) -> Result<Self> {
        if chains < 2 {
            return Err(Error::invalid(format!("a replica batch needs >= 2 chains, got {chains}")));
        }
        if snapshots.is_empty() || !snapshots.len().is_multiple_of(chains) {
            return Err(Error::invalid(format!(
                "{} snapshots do not fill whole times of {chains} chains",
                snapshots.len()
            )));
        }
        let n = model.n();
        let nf = n as f64;
        let energy_density = snapshots
            .iter()
            .map(|s| model.hamiltonian(s).map(|h| h / nf))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n,
            beta,
            disorder_ref: disorder_ref(model),
            source: ReplicaSource::McChains { chains, snapshots, energy_density },
        })
    }

    /// Retained configurations (empty for the exact source).
    pub fn replicas(&self) -> &[SpinConfiguration] {
        match &self.source {
            ReplicaSource::ExactProductMeasure { .. } => &[],
            ReplicaSource::McChains { snapshots, .. } => snapshots,
        }
    }

    /// Number of distinct replicas available; `None` means unlimited.
    pub fn replica_capacity(&self) -> Option<usize> {
        match &self.source {
            ReplicaSource::ExactProductMeasure { .. } => None,
            ReplicaSource::McChains { chains, .. } => Some(*chains),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.source, ReplicaSource::ExactProductMeasure { .. })
    }

    /// `<phi>` over i.i.d. replicas.
    pub fn bracket(&self, phi: &Phi) -> Result<f64> {
        self.bracket_weighted(phi, false)
    }

    /// `<phi * H(sigma^1)/n>`.
    pub fn bracket_with_energy(&self, phi: &Phi) -> Result<f64> {
        self.bracket_weighted(phi, true)
    }

    fn bracket_weighted(&self, phi: &Phi, energy: bool) -> Result<f64> {
        let mut total = 0.0;
        for m in phi.monomials() {
            if m.coef == 0.0 {
                continue;
            }
            let term = Term::new(self.n, m, energy);
            total += m.coef * self.eval_term(&term)?;
        }
        Ok(total)
    }

    fn eval_term(&self, term: &Term) -> Result<f64> {
        match &self.source {
            ReplicaSource::ExactProductMeasure { probabilities, energy_density } => {
                term.eval_exact(self.n, probabilities, energy_density)
            }
            ReplicaSource::McChains { chains, snapshots, energy_density } => {
                term.eval_chains(*chains, snapshots, energy_density)
            }
        }
    }
}

/// One monomial as a replica graph: edges carry a function of the Hamming
/// distance between their endpoints.
struct Term {
    labels: Vec<usize>,
    edges: Vec<(usize, usize, Vec<f64>)>,
    energy_label: Option<usize>,
}

impl Term {
    fn new(n: usize, m: &Monomial, energy: bool) -> Self {
        let mut edges: Vec<(usize, usize, Vec<f64>)> = Vec::new();
        for &(a, b, f) in &m.factors {
            if a == b {
                continue;
            }
            let (a, b) = (a.min(b), a.max(b));
            let values: Vec<f64> = (0..=n).map(|d| f.apply(overlap_from_distance(n, d))).collect();
            match edges.iter_mut().find(|(x, y, _)| *x == a && *y == b) {
                Some((_, _, g)) => g.iter_mut().zip(&values).for_each(|(g, v)| *g *= v),
                None => edges.push((a, b, values)),
            }
        }
        let mut labels: BTreeSet<usize> = edges.iter().flat_map(|&(a, b, _)| [a, b]).collect();
        if energy {
            labels.insert(1);
        }
        Self {
            labels: labels.into_iter().collect(),
            edges,
            energy_label: energy.then_some(1),
        }
    }

    fn eval_exact(&self, n: usize, p: &[f64], u: &[f64]) -> Result<f64> {
        let weight = |label: usize| -> Vec<f64> {
            if self.energy_label == Some(label) {
                p.iter().zip(u).map(|(p, u)| p * u).collect()
            } else {
                p.to_vec()
            }
        };
        let mut value = 1.0;
        let mut seen = BTreeSet::new();
        for &root in &self.labels {
            if seen.contains(&root) {
                continue;
            }
            let component = self.component(root);
            seen.extend(component.iter().copied());
            let edge_ids: Vec<usize> = (0..self.edges.len())
                .filter(|&e| component.contains(&self.edges[e].0))
                .collect();
            value *= if edge_ids.len() + 1 == component.len() {
                self.eval_tree(n, root, None, &weight).iter().sum::<f64>()
            } else {
                self.eval_brute_force(n, &component, &edge_ids, &weight)?
            };
        }
        Ok(value)
    }

    fn component(&self, root: usize) -> Vec<usize> {
        let mut out = vec![root];
        let mut i = 0;
        while i < out.len() {
            let x = out[i];
            for &(a, b, _) in &self.edges {
                let other = if a == x { b } else if b == x { a } else { continue };
                if !out.contains(&other) {
                    out.push(other);
                }
            }
            i += 1;
        }
        out
    }

    /// Weight of `node` times the messages of its subtree, as a function of
    /// the configuration at `node`.
    fn eval_tree(
        &self,
        n: usize,
        node: usize,
        parent: Option<usize>,
        weight: &dyn Fn(usize) -> Vec<f64>,
    ) -> Vec<f64> {
        let mut acc = weight(node);
        for (a, b, f) in &self.edges {
            let child = if *a == node { *b } else if *b == node { *a } else { continue };
            if Some(child) == parent {
                continue;
            }
            let sub = self.eval_tree(n, child, Some(node), weight);
            let msg = xor_convolve_radial(sub, f, n);
            acc.iter_mut().zip(&msg).for_each(|(x, m)| *x *= m);
        }
        acc
    }

    fn eval_brute_force(
        &self,
        n: usize,
        component: &[usize],
        edge_ids: &[usize],
        weight: &dyn Fn(usize) -> Vec<f64>,
    ) -> Result<f64> {
        let r = component.len();
        if r * n > CYCLE_BRUTE_FORCE_BITS {
            return Err(Error::Unsupported(format!(
                "cyclic overlap graph on {r} replicas with n = {n} exceeds {CYCLE_BRUTE_FORCE_BITS} enumerated bits"
            )));
        }
        let weights: Vec<Vec<f64>> = component.iter().map(|&l| weight(l)).collect();
        let pos = |label: usize| component.iter().position(|&l| l == label).expect("in component");
        let edges: Vec<(usize, usize, &Vec<f64>)> = edge_ids
            .iter()
            .map(|&e| {
                let (a, b, f) = &self.edges[e];
                (pos(*a), pos(*b), f)
            })
            .collect();
        let mask = (1u64 << n) - 1;
        let tuple = |idx: u64| {
            let x = |k: usize| (idx >> (k * n)) & mask;
            let mut v: f64 = (0..r).map(|k| weights[k][x(k) as usize]).product();
            for &(a, b, f) in &edges {
                v *= f[(x(a) ^ x(b)).count_ones() as usize];
            }
            v
        };
        // fixed chunks summed in order keep the result independent of scheduling
        let total_bits = r * n;
        let chunk_bits = total_bits.min(12);
        let partial: Vec<f64> = (0..1u64 << (total_bits - chunk_bits))
            .into_par_iter()
            .map(|c| {
                let base = c << chunk_bits;
                (0..1u64 << chunk_bits).map(|i| tuple(base | i)).sum::<f64>()
            })
            .collect();
        let total: f64 = partial.iter().sum();
        Ok(total)
    }

    fn eval_chains(&self, chains: usize, snapshots: &[SpinConfiguration], u: &[f64]) -> Result<f64> {
        let r = self.labels.len();
        if r > chains {
            return Err(Error::invalid(format!(
                "bracket needs {r} distinct replicas but the batch has {chains} chains"
            )));
        }
        if r == 0 {
            return Ok(1.0);
        }
        let edges: Vec<(usize, usize, &Vec<f64>)> = self
            .edges
            .iter()
            .map(|(a, b, f)| {
                let pos = |l: usize| self.labels.iter().position(|&x| x == l).expect("label");
                (pos(*a), pos(*b), f)
            })
            .collect();
        let energy_pos = self
            .energy_label
            .map(|l| self.labels.iter().position(|&x| x == l).expect("label"));
        let times = snapshots.len() / chains;
        let per_time: Vec<f64> = (0..times)
            .into_par_iter()
            .map(|t| {
                let snaps = &snapshots[t * chains..(t + 1) * chains];
                let energies = &u[t * chains..(t + 1) * chains];
                let mut dist = vec![0usize; chains * chains];
                for i in 0..chains {
                    for j in i + 1..chains {
                        let d = snaps[i].hamming_distance(&snaps[j]).expect("same n");
                        dist[i * chains + j] = d;
                        dist[j * chains + i] = d;
                    }
                }
                let mut assign = vec![0usize; r];
                let mut used = vec![false; chains];
                let mut sum = 0.0;
                let mut count = 0u64;
                assign_rec(0, r, chains, &mut assign, &mut used, &mut |assign| {
                    let mut v = energy_pos.map_or(1.0, |p| energies[assign[p]]);
                    for &(a, b, f) in &edges {
                        v *= f[dist[assign[a] * chains + assign[b]]];
                    }
                    sum += v;
                    count += 1;
                });
                sum / count as f64
            })
            .collect();
        Ok(stats::mean(&per_time))
    }
}

fn assign_rec(
    k: usize,
    r: usize,
    chains: usize,
    assign: &mut [usize],
    used: &mut [bool],
    visit: &mut dyn FnMut(&[usize]),
) {
    if k == r {
        visit(assign);
        return;
    }
    for c in 0..chains {
        if !used[c] {
            used[c] = true;
            assign[k] = c;
            assign_rec(k + 1, r, chains, assign, used, visit);
            used[c] = false;
        }
    }
}

/// In-place unnormalized Walsh-Hadamard transform.
pub fn walsh_hadamard(a: &mut [f64]) {
    let len = a.len();
    assert!(len.is_power_of_two(), "length must be a power of two");
    let mut h = 1;
    while h < len {
        for block in a.chunks_mut(2 * h) {
            let (lo, hi) = block.split_at_mut(h);
            for (x, y) in lo.iter_mut().zip(hi) {
                let (s, t) = (*x + *y, *x - *y);
                *x = s;
                *y = t;
            }
        }
        h *= 2;
    }
}

/// `out(x) = sum_y a(y) f(popcount(x ^ y))`.
fn xor_convolve_radial(mut a: Vec<f64>, f: &[f64], n: usize) -> Vec<f64> {
    let mut g: Vec<f64> = (0..1u64 << n).map(|x| f[x.count_ones() as usize]).collect();
    walsh_hadamard(&mut a);
    walsh_hadamard(&mut g);
    a.iter_mut().zip(&g).for_each(|(x, y)| *x *= y);
    walsh_hadamard(&mut a);
    let scale = 0.5f64.powi(n as i32);
    a.iter_mut().for_each(|x| *x *= scale);
    a
}

/// How inner Gibbs brackets are evaluated across an ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BracketMode {
    Exact,
    /// Independent chains per disorder sample; chain seeds derive from
    /// `derive_seed(seed, sample index)`.
    Mc(ReplicaSampling),
}

fn batches(models: &[ModelSpec], beta: Beta, mode: BracketMode, min_chains: usize) -> Result<Vec<ReplicaBatch>> {
    models
        .par_iter()
        .enumerate()
        .map(|(i, m)| match mode {
            BracketMode::Exact => ReplicaBatch::exact(m, beta),
            BracketMode::Mc(s) => {
                let s = ReplicaSampling { chains: s.chains.max(min_chains), ..s };
                mc::sample_replicas_with(m, beta, &s, crate::rng::derive_seed(s.seed, i as u64))
            }
        })
        .collect()
}

/// Disorder average of `<R_12^k>`, each batch averaging over all replica
/// pairs, with the between-disorder standard error.
pub fn overlap_moment(ensemble: &[ReplicaBatch], k: u32) -> Result<Estimate> {
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble is empty"));
    }
    if !k.is_multiple_of(2) {
        return Err(Error::invalid(format!("overlap moment order must be even, got {k}")));
    }
    if k == 0 {
        return Ok(Estimate::exact(1.0));
    }
    let phi = Phi::overlap_power(1, 2, k)?;
    let values = ensemble
        .par_iter()
        .map(|b| b.bracket(&phi))
        .collect::<Result<Vec<_>>>()?;
    Ok(stats::mean_stderr(&values))
}

/// Both sides of the integration-by-parts identity
/// `E<phi H/n> = beta [sum_{l<=n} E<phi R_1l^2> - n E<phi R_{1,n+1}^2>]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IbpRecord {
    pub n_system: usize,
    pub beta: f64,
    pub n_replicas: usize,
    pub phi_id: String,
    pub samples: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub stderr_lhs: f64,
    pub stderr_rhs: f64,
    /// `(lhs - rhs) / sqrt(stderr_lhs^2 + stderr_rhs^2)`.
    pub z_score: f64,
    /// Standard error of the per-sample difference.
    pub stderr_paired: f64,
    pub z_paired: f64,
    /// The right-hand side without the factor `beta`.
    pub rhs_uncorrected: f64,
    pub stderr_rhs_uncorrected: f64,
    pub z_uncorrected: f64,
    /// `|lhs - rhs| <= 3 sqrt(stderr_lhs^2 + stderr_rhs^2)`.
    pub pass: bool,
}

fn check_sk(models: &[ModelSpec]) -> Result<usize> {
    let first = models.first().ok_or_else(|| Error::invalid("ensemble is empty"))?;
    if let Some(m) = models.iter().find(|m| !matches!(m, ModelSpec::Sk(_))) {
        return Err(Error::Unsupported(format!(
            "replica identities need Gaussian disorder, got a `{}` model",
            m.kind()
        )));
    }
    if models.iter().any(|m| m.n() != first.n()) {
        return Err(Error::invalid("ensemble mixes system sizes"));
    }
    Ok(first.n())
}

fn check_phi(phi: &Phi, n_replicas: usize) -> Result<()> {
    if n_replicas < 1 {
        return Err(Error::invalid("n_replicas must be >= 1"));
    }
    if phi.max_replica() > n_replicas {
        return Err(Error::invalid(format!(
            "phi `{}` uses replica {} but only the first {n_replicas} are allowed",
            phi.id(),
            phi.max_replica()
        )));
    }
    Ok(())
}

fn z(diff: f64, se: f64) -> f64 {
    Estimate { value: diff, stderr: se }.z_against(&Estimate::exact(0.0))
}

pub fn ibp_audit(
    models: &[ModelSpec],
    beta: Beta,
    n_replicas: usize,
    phi: &Phi,
    mode: BracketMode,
) -> Result<IbpRecord> {
    let n_system = check_sk(models)?;
    check_phi(phi, n_replicas)?;
    let ensemble = batches(models, beta, mode, n_replicas + 1)?;
    let b = beta.value();
    let nr = n_replicas as f64;
    let per_sample = ensemble
        .par_iter()
        .map(|batch| -> Result<(f64, f64)> {
            let lhs = batch.bracket_with_energy(phi)?;
            let mut inner = batch.bracket(phi)?;
            for l in 2..=n_replicas {
                inner += batch.bracket(&phi.times(&Phi::overlap_power(1, l, 2)?))?;
            }
            inner -= nr * batch.bracket(&phi.times(&Phi::overlap_power(1, n_replicas + 1, 2)?))?;
            Ok((lhs, inner))
        })
        .collect::<Result<Vec<_>>>()?;
    let lhs_s: Vec<f64> = per_sample.iter().map(|p| p.0).collect();
    let inner_s: Vec<f64> = per_sample.iter().map(|p| p.1).collect();
    let rhs_s: Vec<f64> = inner_s.iter().map(|x| b * x).collect();
    let diff_s: Vec<f64> = lhs_s.iter().zip(&rhs_s).map(|(l, r)| l - r).collect();
    let lhs = stats::mean_stderr(&lhs_s);
    let rhs = stats::mean_stderr(&rhs_s);
    let un = stats::mean_stderr(&inner_s);
    let paired = stats::mean_stderr(&diff_s);
    let combined = lhs.stderr.hypot(rhs.stderr);
    Ok(IbpRecord {
        n_system,
        beta: b,
        n_replicas,
        phi_id: phi.id().to_string(),
        samples: models.len(),
        lhs: lhs.value,
        rhs: rhs.value,
        stderr_lhs: lhs.stderr,
        stderr_rhs: rhs.stderr,
        z_score: z(lhs.value - rhs.value, combined),
        stderr_paired: paired.stderr,
        z_paired: z(paired.value, paired.stderr),
        rhs_uncorrected: un.value,
        stderr_rhs_uncorrected: un.stderr,
        z_uncorrected: lhs.z_against(&un),
        pass: (lhs.value - rhs.value).abs() <= 3.0 * combined,
    })
}

/// Finite-size Ghirlanda-Guerra residual and its concentration bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GGReport {
    pub n_system: usize,
    pub n_replicas: usize,
    pub beta: f64,
    pub phi_id: String,
    /// `E<phi R_{1,n+1}^2> - E<phi> E<R_12^2>/n - sum_{l=2..n} E<phi R_1l^2>/n`.
    pub residual: f64,
    pub stderr: f64,
    /// `|phi|_inf / (beta n) * E<|H/n - E<H/n>|>`.
    pub bound: f64,
    pub bound_stderr: f64,
    /// `E<|H/n - E<H/n>|>`, centred at the ensemble mean.
    pub l1_concentration: f64,
    pub energy_mean: f64,
    pub samples: usize,
    /// `|residual| - bound <= 3 sqrt(stderr^2 + bound_stderr^2)`.
    pub pass: bool,
}

pub fn gg_residual(
    models: &[ModelSpec],
    beta: Beta,
    n_replicas: usize,
    phi: &Phi,
    mode: BracketMode,
) -> Result<GGReport> {
    let n_system = check_sk(models)?;
    if beta.value() == 0.0 {
        return Err(Error::invalid("the residual bound divides by beta; beta must be > 0"));
    }
    if n_replicas < 2 {
        return Err(Error::invalid(format!("n_replicas must be >= 2, got {n_replicas}")));
    }
    check_phi(phi, n_replicas)?;
    let ensemble = batches(models, beta, mode, n_replicas + 1)?;
    gg_from_batches(&ensemble, n_system, beta, n_replicas, phi)
}

pub fn gg_from_batches(
    ensemble: &[ReplicaBatch],
    n_system: usize,
    beta: Beta,
    n_replicas: usize,
    phi: &Phi,
) -> Result<GGReport> {
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble is empty"));
    }
    let nr = n_replicas as f64;
    let r12 = Phi::r12_squared();
    let tail = phi.times(&Phi::overlap_power(1, n_replicas + 1, 2)?);
    let inner: Vec<Phi> = (2..=n_replicas)
        .map(|l| Phi::overlap_power(1, l, 2).map(|p| phi.times(&p)))
        .collect::<Result<_>>()?;
    let rows = ensemble
        .par_iter()
        .map(|batch| -> Result<[f64; 5]> {
            let a = batch.bracket(&tail)?;
            let b = batch.bracket(phi)?;
            let c = batch.bracket(&r12)?;
            let mut d = 0.0;
            for p in &inner {
                d += batch.bracket(p)?;
            }
            let u = batch.bracket_with_energy(&Phi::one())?;
            Ok([a, b, c, d, u])
        })
        .collect::<Result<Vec<_>>>()?;
    let col = |k: usize| rows.iter().map(|r| r[k]).collect::<Vec<f64>>();
    let (a, b, c, d, u) = (col(0), col(1), col(2), col(3), col(4));
    let (bm, cm) = (stats::mean(&b), stats::mean(&c));
    let residual = stats::mean(&a) - bm * cm / nr - stats::mean(&d) / nr;
    let influence: Vec<f64> = (0..rows.len())
        .map(|s| a[s] - (b[s] * cm + bm * c[s]) / nr - d[s] / nr)
        .collect();
    let stderr = stats::mean_stderr(&influence).stderr;

    let energy_mean = stats::mean(&u);
    let l1 = ensemble
        .par_iter()
        .map(|batch| l1_deviation(batch, energy_mean))
        .collect::<Vec<_>>();
    let l1 = stats::mean_stderr(&l1);
    let scale = phi.sup_norm() / (beta.value() * nr);
    let (bound, bound_stderr) = (scale * l1.value, scale * l1.stderr);
    Ok(GGReport {
        n_system,
        n_replicas,
        beta: beta.value(),
        phi_id: phi.id().to_string(),
        residual,
        stderr,
        bound,
        bound_stderr,
        l1_concentration: l1.value,
        energy_mean,
        samples: ensemble.len(),
        pass: residual.abs() - bound <= 3.0 * stderr.hypot(bound_stderr),
    })
}

/// `<|H/n - centre|>` for one batch.
pub fn l1_deviation(batch: &ReplicaBatch, centre: f64) -> f64 {
    match &batch.source {
        ReplicaSource::ExactProductMeasure { probabilities, energy_density } => probabilities
            .iter()
            .zip(energy_density)
            .map(|(p, u)| p * (u - centre).abs())
            .sum(),
        ReplicaSource::McChains { energy_density, .. } => {
            stats::mean(&energy_density.iter().map(|u| (u - centre).abs()).collect::<Vec<_>>())
        }
    }
}
