//! Finite-size concentration audits of the energy density under the free
//! energy and under the Gibbs measure.
//!
//! All quantities are exact (enumeration). The reference energy `e_ref` plays
//! the role of the derivative of the limiting free energy; the default
//! plug-in choice is the finite-size derivative `<H/n>_beta`, for which every
//! inequality below is a deterministic statement about the sample at hand.
//! The Chernoff-type tail bounds hold for any `e_ref`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exact::EnergyTable;
use crate::model::{Beta, ModelSpec};
use crate::spin::SpinConfiguration;
use crate::stats::{self, Estimate};

pub const DEFAULT_WINDOW: f64 = 0.5;
pub const DEFAULT_EXPONENT: f64 = 0.3;
/// Absolute slack on log-scale inequalities.
pub const LOG_SLACK: f64 = 1e-9;
/// Absolute slack on probability inequalities.
pub const PROB_SLACK: f64 = 1e-12;

/// How the reference energy density is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ERefPolicy {
    /// `<H/n>_beta` of the sample itself.
    PlugIn,
    Supplied(f64),
}

impl ERefPolicy {
    pub fn resolve(&self, table: &EnergyTable, beta: f64) -> f64 {
        match *self {
            ERefPolicy::PlugIn => table.gibbs_mean(beta, |u| u),
            ERefPolicy::Supplied(e) => e,
        }
    }
}

impl std::str::FromStr for ERefPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plugin" | "plug_in" => Ok(ERefPolicy::PlugIn),
            other => other
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .map(ERefPolicy::Supplied)
                .ok_or_else(|| Error::invalid(format!("e_ref must be `plugin` or a number, got `{other}`"))),
        }
    }
}

/// One-sided secant deviations of the free energy from `e_ref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeltaPair {
    pub delta_plus: f64,
    pub delta_minus: f64,
    /// `max(delta_plus, delta_minus, 0)`.
    pub gamma: f64,
    pub lambda: f64,
    pub beta: Option<Beta>,
    pub e_ref: f64,
}

/// Deviations from the three free-energy values `F(beta - lambda)`,
/// `F(beta)`, `F(beta + lambda)`.
pub fn finite_deltas(
    f_minus: f64,
    f_center: f64,
    f_plus: f64,
    lambda: f64,
    e_ref: f64,
) -> Result<DeltaPair> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::invalid(format!("lambda must be positive, got {lambda}")));
    }
    let delta_plus = (f_plus - f_center) / lambda - e_ref;
    let delta_minus = (f_minus - f_center) / lambda + e_ref;
    Ok(DeltaPair {
        delta_plus,
        delta_minus,
        gamma: delta_plus.max(delta_minus).max(0.0),
        lambda,
        beta: None,
        e_ref,
    })
}

fn deltas_at(table: &EnergyTable, beta: f64, lambda: f64, e_ref: f64) -> Result<DeltaPair> {
    let mut d = finite_deltas(
        table.free_energy(beta - lambda),
        table.free_energy(beta),
        table.free_energy(beta + lambda),
        lambda,
        e_ref,
    )?;
    d.beta = Beta::new(beta).ok();
    Ok(d)
}

fn check_exponents(c: f64, cprime: f64) -> Result<()> {
    if !(c > 0.0 && cprime > 0.0 && c + cprime < 1.0) {
        return Err(Error::invalid(format!(
            "exponents need c > 0, c' > 0, c + c' < 1; got c = {c}, c' = {cprime}"
        )));
    }
    Ok(())
}

fn check_window(lambda: f64, window: f64, name: &str) -> Result<()> {
    if !(lambda > 0.0 && lambda < window) {
        return Err(Error::invalid(format!(
            "{name} = {lambda} must lie in (0, {window})"
        )));
    }
    Ok(())
}

/// The concentration set and its audits at one `(n, beta)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub n: usize,
    pub beta: f64,
    pub c: f64,
    pub cprime: f64,
    pub lambda_n: f64,
    pub delta_plus: f64,
    pub delta_minus: f64,
    pub gamma_n: f64,
    pub epsilon_n: f64,
    pub e_ref: f64,
    pub free_energy: f64,
    /// `G(C^c)`, summed from the two tails.
    pub gibbs_mass_outside: f64,
    pub bound_ii: f64,
    /// `n^{-1} log int 1_C exp(beta H) dnu`.
    pub restricted_log_partition: Option<f64>,
    pub restricted_gap: Option<f64>,
    pub bound_iii: f64,
    /// `n^{-1} log nu(C)`.
    pub prior_log_mass: Option<f64>,
    /// `F_n - beta e_ref`, the entropy the prior mass approaches.
    pub entropy_target: f64,
    /// `beta epsilon_n`, the exact bound on `|prior_log_mass - (B_C - beta e_ref)|`.
    pub entropy_slack: f64,
    pub pass_ii: bool,
    pub pass_iii: bool,
    pub pass_entropy: bool,
    pub diagnostics: Vec<String>,
}

impl Theorem1Report {
    pub fn pass(&self) -> bool {
        self.pass_ii && self.pass_iii && self.pass_entropy
    }
}

pub fn theorem1_report(
    model: &ModelSpec,
    beta: Beta,
    c: f64,
    cprime: f64,
    policy: ERefPolicy,
) -> Result<Theorem1Report> {
    check_exponents(c, cprime)?;
    let table = EnergyTable::build(model)?;
    theorem1_from_table(&table, beta, c, cprime, policy)
}

pub fn theorem1_from_table(
    table: &EnergyTable,
    beta: Beta,
    c: f64,
    cprime: f64,
    policy: ERefPolicy,
) -> Result<Theorem1Report> {
    check_exponents(c, cprime)?;
    let n = table.n();
    let nf = n as f64;
    let b = beta.value();
    let e_ref = policy.resolve(table, b);
    let lambda_n = nf.powf(-c);
    let deltas = deltas_at(table, b, lambda_n, e_ref)?;
    let epsilon_n = nf.powf(-cprime) + deltas.gamma;
    let free_energy = table.free_energy(b);
    let log_z = nf * free_energy;

    let tail = |keep: &dyn Fn(f64) -> bool| {
        table
            .log_integral(b, keep)
            .map_or(0.0, |l| (l - log_z).exp())
    };
    let outside = tail(&|u| u - e_ref > epsilon_n) + tail(&|u| u - e_ref < -epsilon_n);
    let inside = |u: f64| (u - e_ref).abs() <= epsilon_n;
    let restricted = table.restricted_free_energy(b, inside);
    let prior = table.prior_mass(inside);
    let prior_log_mass = (prior > 0.0).then(|| prior.ln() / nf);

    let exponent = nf.powf(1.0 - (c + cprime));
    let bound_ii = 2.0 * (-exponent).exp();
    let bound_iii = bound_ii / nf;
    let restricted_gap = restricted.map(|r| (r - free_energy).abs());
    let entropy_slack = b * epsilon_n;

    let mut diagnostics = Vec::new();
    let pass_ii = outside <= bound_ii + PROB_SLACK;
    if !pass_ii {
        diagnostics.push(format!(
            "G(C^c) = {outside:e} exceeds 2 exp(-n^(1-c-c')) = {bound_ii:e}"
        ));
    }
    let pass_iii = match restricted_gap {
        Some(gap) => gap <= bound_iii + LOG_SLACK,
        None => {
            diagnostics.push(format!(
                "concentration set is empty for e_ref = {e_ref}, epsilon_n = {epsilon_n}"
            ));
            false
        }
    };
    if let (false, Some(gap)) = (pass_iii, restricted_gap) {
        diagnostics.push(format!("restricted gap {gap:e} exceeds {bound_iii:e}"));
    }
    let pass_entropy = match (prior_log_mass, restricted) {
        (Some(p), Some(r)) => (p - (r - b * e_ref)).abs() <= entropy_slack + LOG_SLACK,
        _ => false,
    };

    Ok(Theorem1Report {
        n,
        beta: b,
        c,
        cprime,
        lambda_n,
        delta_plus: deltas.delta_plus,
        delta_minus: deltas.delta_minus,
        gamma_n: deltas.gamma,
        epsilon_n,
        e_ref,
        free_energy,
        gibbs_mass_outside: outside,
        bound_ii,
        restricted_log_partition: restricted,
        restricted_gap,
        bound_iii,
        prior_log_mass,
        entropy_target: free_energy - b * e_ref,
        entropy_slack,
        pass_ii,
        pass_iii,
        pass_entropy,
        diagnostics,
    })
}

/// Chernoff tail bounds at one `(epsilon, lambda)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailAudit {
    pub epsilon: f64,
    pub lambda: f64,
    pub gamma: f64,
    /// Restricted log-partition of the upper tail; `None` if it is empty.
    pub b_plus: Option<f64>,
    pub b_minus: Option<f64>,
    /// `F(beta + lambda) - lambda (epsilon + e_ref)`.
    pub rhs_plus: f64,
    /// `F(beta - lambda) - lambda (epsilon - e_ref)`.
    pub rhs_minus: f64,
    pub gibbs_plus: f64,
    pub gibbs_minus: f64,
    /// `exp(-n lambda (epsilon - gamma))`.
    pub exp_bound: f64,
    pub pass: bool,
}

impl TailAudit {
    /// `(epsilon, lambda, lhs, rhs, pass)` with the union-mass inequality as
    /// the reported pair.
    pub fn csv_row(&self) -> (f64, f64, f64, f64, bool) {
        (
            self.epsilon,
            self.lambda,
            self.gibbs_plus + self.gibbs_minus,
            2.0 * self.exp_bound,
            self.pass,
        )
    }
}

pub fn tail_bound_audit(
    model: &ModelSpec,
    beta: Beta,
    epsilons: &[f64],
    lambdas: &[f64],
    e_ref: f64,
    window: f64,
) -> Result<Vec<TailAudit>> {
    let table = EnergyTable::build(model)?;
    tail_audit_from_table(&table, beta, epsilons, lambdas, e_ref, window)
}

pub fn tail_audit_from_table(
    table: &EnergyTable,
    beta: Beta,
    epsilons: &[f64],
    lambdas: &[f64],
    e_ref: f64,
    window: f64,
) -> Result<Vec<TailAudit>> {
    if epsilons.is_empty() || lambdas.is_empty() {
        return Err(Error::invalid("epsilon and lambda grids must be nonempty"));
    }
    if let Some(e) = epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::invalid(format!("epsilon must be positive, got {e}")));
    }
    for &l in lambdas {
        check_window(l, window, "lambda")?;
    }
    let nf = table.n() as f64;
    let b = beta.value();
    let log_z = nf * table.free_energy(b);
    let mut out = Vec::with_capacity(epsilons.len() * lambdas.len());
    for &lambda in lambdas {
        let d = deltas_at(table, b, lambda, e_ref)?;
        let f_plus = table.free_energy(b + lambda);
        let f_minus = table.free_energy(b - lambda);
        for &epsilon in epsilons {
            let b_plus = table.restricted_free_energy(b, |u| u - e_ref > epsilon);
            let b_minus = table.restricted_free_energy(b, |u| u - e_ref < -epsilon);
            let rhs_plus = f_plus - lambda * (epsilon + e_ref);
            let rhs_minus = f_minus - lambda * (epsilon - e_ref);
            let mass = |r: Option<f64>| r.map_or(0.0, |r| (nf * r - log_z).exp());
            let gibbs_plus = mass(b_plus);
            let gibbs_minus = mass(b_minus);
            let exp_bound = (-nf * lambda * (epsilon - d.gamma)).exp();
            let below = |lhs: Option<f64>, rhs: f64| lhs.is_none_or(|l| l <= rhs + LOG_SLACK);
            let pass = below(b_plus, rhs_plus)
                && below(b_minus, rhs_minus)
                && gibbs_plus <= exp_bound + PROB_SLACK
                && gibbs_minus <= exp_bound + PROB_SLACK
                && gibbs_plus + gibbs_minus <= 2.0 * exp_bound + PROB_SLACK;
            out.push(TailAudit {
                epsilon,
                lambda,
                gamma: d.gamma,
                b_plus,
                b_minus,
                rhs_plus,
                rhs_minus,
                gibbs_plus,
                gibbs_minus,
                exp_bound,
                pass,
            });
        }
    }
    Ok(out)
}

/// Gibbs first absolute moment of `H/n - e_ref` against the integrated tail
/// bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentAudit {
    pub lambda0: f64,
    pub e_ref: f64,
    pub gamma0: f64,
    /// `lambda0` if `n lambda0 gamma0 <= 1`, else `1 / (n gamma0)`.
    pub lambda_selected: f64,
    pub lhs_plus: f64,
    pub lhs_minus: f64,
    pub lhs_abs: f64,
    /// `(n lambda)^{-1} exp(n lambda max(delta, 0))` at the selected lambda.
    pub rhs_integral_plus: f64,
    pub rhs_integral_minus: f64,
    /// `e * max(1/(n lambda0), gamma0)`, a bound on each one-sided moment.
    pub rhs_one_sided: f64,
    /// `2e/(n lambda0) + 2e gamma0`.
    pub rhs: f64,
    pub pass: bool,
}

pub fn moment_bound_audit(
    model: &ModelSpec,
    beta: Beta,
    lambda0: f64,
    e_ref: f64,
    window: f64,
) -> Result<MomentAudit> {
    check_window(lambda0, window, "lambda0")?;
    let table = EnergyTable::build(model)?;
    moment_audit_from_table(&table, beta, lambda0, e_ref, window)
}

pub fn moment_audit_from_table(
    table: &EnergyTable,
    beta: Beta,
    lambda0: f64,
    e_ref: f64,
    window: f64,
) -> Result<MomentAudit> {
    check_window(lambda0, window, "lambda0")?;
    let nf = table.n() as f64;
    let b = beta.value();
    let gamma0 = deltas_at(table, b, lambda0, e_ref)?.gamma;
    let lambda_selected = if lambda0 * nf * gamma0 <= 1.0 {
        lambda0
    } else {
        1.0 / (nf * gamma0)
    };
    let sel = deltas_at(table, b, lambda_selected, e_ref)?;
    let integral = |delta: f64| (nf * lambda_selected * delta.max(0.0)).exp() / (nf * lambda_selected);
    let lhs_plus = table.gibbs_mean(b, |u| (u - e_ref).max(0.0));
    let lhs_minus = table.gibbs_mean(b, |u| (e_ref - u).max(0.0));
    let lhs_abs = table.gibbs_mean(b, |u| (u - e_ref).abs());
    let e = std::f64::consts::E;
    let rhs_one_sided = e * (1.0 / (nf * lambda0)).max(gamma0);
    let rhs = 2.0 * e / (nf * lambda0) + 2.0 * e * gamma0;
    let rhs_integral_plus = integral(sel.delta_plus);
    let rhs_integral_minus = integral(sel.delta_minus);
    let pass = lhs_plus <= rhs_integral_plus + LOG_SLACK
        && lhs_minus <= rhs_integral_minus + LOG_SLACK
        && rhs_integral_plus <= rhs_one_sided + LOG_SLACK
        && lhs_plus <= rhs_one_sided + LOG_SLACK
        && lhs_minus <= rhs_one_sided + LOG_SLACK
        && lhs_abs <= rhs + LOG_SLACK;
    Ok(MomentAudit {
        lambda0,
        e_ref,
        gamma0,
        lambda_selected,
        lhs_plus,
        lhs_minus,
        lhs_abs,
        rhs_integral_plus,
        rhs_integral_minus,
        rhs_one_sided,
        rhs,
        pass,
    })
}

/// Disorder ensemble of Gibbs L1 deviations of the energy density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Concentration {
    /// `<|H/n - e_ref|>_beta` per sample.
    pub per_sample: Vec<f64>,
    pub disorder_mean: f64,
    pub stderr: f64,
    /// `<|H/n - c|>_beta` per sample, with `c` the ensemble mean of `<H/n>`.
    pub centered_per_sample: Vec<f64>,
    pub centering: f64,
    pub centered_mean: f64,
    pub centered_stderr: f64,
}

pub fn gibbs_l1_concentration(
    ensemble: &[ModelSpec],
    beta: Beta,
    policy: ERefPolicy,
) -> Result<L1Concentration> {
    if ensemble.is_empty() {
        return Err(Error::invalid("ensemble is empty"));
    }
    let tables = ensemble
        .par_iter()
        .map(EnergyTable::build)
        .collect::<Result<Vec<_>>>()?;
    l1_from_tables(&tables, beta, policy)
}

pub fn l1_from_tables(
    tables: &[EnergyTable],
    beta: Beta,
    policy: ERefPolicy,
) -> Result<L1Concentration> {
    if tables.is_empty() {
        return Err(Error::invalid("ensemble is empty"));
    }
    let b = beta.value();
    let means: Vec<f64> = tables.par_iter().map(|t| t.gibbs_mean(b, |u| u)).collect();
    let per_sample: Vec<f64> = tables
        .par_iter()
        .map(|t| {
            let e = policy.resolve(t, b);
            t.gibbs_mean(b, |u| (u - e).abs())
        })
        .collect();
    let centering = stats::mean(&means);
    let centered_per_sample: Vec<f64> = tables
        .par_iter()
        .map(|t| t.gibbs_mean(b, |u| (u - centering).abs()))
        .collect();
    let Estimate { value, stderr } = stats::mean_stderr(&per_sample);
    let centered = stats::mean_stderr(&centered_per_sample);
    Ok(L1Concentration {
        per_sample,
        disorder_mean: value,
        stderr,
        centered_per_sample,
        centering,
        centered_mean: centered.value,
        centered_stderr: centered.stderr,
    })
}

/// Gibbs-versus-prior conditional ratio on the concentration set, with the
/// individual lines of the chain that relates them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalenceReport {
    /// `n^{-1} log [G(A|C) / nu(A|C)]`.
    pub value: f64,
    pub epsilon_n: f64,
    pub e_ref: f64,
    /// Chain lines: `n^{-1} log G(A|C)`, `n^{-1} log G(A & C)`,
    /// `n^{-1} log nu(A & C) + beta e_ref - F_n` (twice: with `log Z / n`,
    /// then with the free energy), `n^{-1} log nu(A & C) - n^{-1} log nu(C)`,
    /// `n^{-1} log nu(A|C)`.
    pub chain: [f64; 6],
    /// `n^{-1} log G(C)`.
    pub log_gibbs_c: f64,
    /// `F_n - beta e_ref - n^{-1} log nu(C)`.
    pub entropy_gap: f64,
    /// `beta eps + |entropy_gap| + |log_gibbs_c|`, the triangle bound along the chain.
    pub chain_bound: f64,
    /// `2 beta eps`, from sandwiching both restricted integrals.
    pub two_sided_bound: f64,
    pub pass: bool,
}

pub fn conditional_equivalence<P>(
    model: &ModelSpec,
    beta: Beta,
    test_set: P,
    c: f64,
    cprime: f64,
) -> Result<EquivalenceReport>
where
    P: Fn(&SpinConfiguration) -> bool,
{
    check_exponents(c, cprime)?;
    let table = EnergyTable::build(model)?;
    let report = theorem1_from_table(&table, beta, c, cprime, ERefPolicy::PlugIn)?;
    let n = table.n();
    let nf = n as f64;
    let b = beta.value();
    let (e_ref, eps) = (report.e_ref, report.epsilon_n);
    let in_c = |cfg: &SpinConfiguration| {
        let u = table.energies()[cfg.low_bits() as usize] / nf;
        (u - e_ref).abs() <= eps
    };
    let log_ac = table
        .log_integral_configs(b, |cfg| in_c(cfg) && test_set(cfg))
        .ok_or_else(|| Error::Domain("test set does not intersect the concentration set".into()))?
        / nf;
    let log_c = report.restricted_log_partition.expect("C contains the Gibbs mean");
    let f = report.free_energy;
    let log_gibbs_ac = log_ac - f;
    let log_gibbs_c = log_c - f;

    let mut prior_count_ac = 0u64;
    let mut prior_count_c = 0u64;
    let mut cfg = SpinConfiguration::all_down(n)?;
    for bits in 0..1u64 << n {
        cfg.set_low_bits(bits);
        if in_c(&cfg) {
            prior_count_c += 1;
            if test_set(&cfg) {
                prior_count_ac += 1;
            }
        }
    }
    let log_nu_ac = (prior_count_ac as f64).ln() / nf - std::f64::consts::LN_2;
    let log_nu_c = (prior_count_c as f64).ln() / nf - std::f64::consts::LN_2;

    let l0 = log_gibbs_ac - log_gibbs_c;
    let l1 = log_gibbs_ac;
    let l2 = log_nu_ac + b * e_ref - f;
    let l3 = l2;
    let l4 = log_nu_ac - log_nu_c;
    let l5 = (prior_count_ac as f64 / prior_count_c as f64).ln() / nf;
    let value = l0 - l5;
    let entropy_gap = f - b * e_ref - log_nu_c;
    let chain_bound = b * eps + entropy_gap.abs() + log_gibbs_c.abs();
    let two_sided_bound = 2.0 * b * eps;
    let pass = value.abs() <= chain_bound + LOG_SLACK && value.abs() <= two_sided_bound + LOG_SLACK;
    Ok(EquivalenceReport {
        value,
        epsilon_n: eps,
        e_ref,
        chain: [l0, l1, l2, l3, l4, l5],
        log_gibbs_c,
        entropy_gap,
        chain_bound,
        two_sided_bound,
        pass,
    })
}

/// Both display chains relating restricted log-partitions at `beta` and
/// `beta' <= beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichReport {
    pub beta: f64,
    pub beta_prime: f64,
    pub epsilon: f64,
    /// Upper chain: restricted at `(E(beta), eps)`, at `(E(beta'), 2 eps)`,
    /// then at `beta'` plus `(beta - beta')(E(beta') + 2 eps)`.
    pub upper: [Option<f64>; 3],
    /// Lower chain: restricted at `(E(beta), 2 eps)`, at `(E(beta'), eps)`,
    /// then at `beta'` plus `(beta - beta')(E(beta') - eps)`.
    pub lower: [Option<f64>; 3],
    pub pass_upper: bool,
    pub pass_lower: bool,
}

impl SandwichReport {
    pub fn pass(&self) -> bool {
        self.pass_upper && self.pass_lower
    }
}

pub fn sandwich_check(
    model: &ModelSpec,
    beta: Beta,
    beta_prime: Beta,
    epsilon: f64,
    e_beta: f64,
    e_beta_prime: f64,
) -> Result<SandwichReport> {
    let table = EnergyTable::build(model)?;
    sandwich_from_table(&table, beta, beta_prime, epsilon, e_beta, e_beta_prime)
}

pub fn sandwich_from_table(
    table: &EnergyTable,
    beta: Beta,
    beta_prime: Beta,
    epsilon: f64,
    e_beta: f64,
    e_beta_prime: f64,
) -> Result<SandwichReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    let (b, bp) = (beta.value(), beta_prime.value());
    if bp > b {
        return Err(Error::Precondition(format!("beta' = {bp} must not exceed beta = {b}")));
    }
    if (e_beta - e_beta_prime).abs() > epsilon {
        return Err(Error::Precondition(format!(
            "|E(beta) - E(beta')| = {} exceeds epsilon = {epsilon}",
            (e_beta - e_beta_prime).abs()
        )));
    }
    let restricted = |beta: f64, center: f64, radius: f64| {
        table.restricted_free_energy(beta, |u| (u - center).abs() <= radius)
    };
    let db = b - bp;
    let upper = [
        restricted(b, e_beta, epsilon),
        restricted(b, e_beta_prime, 2.0 * epsilon),
        restricted(bp, e_beta_prime, 2.0 * epsilon).map(|r| r + db * (e_beta_prime + 2.0 * epsilon)),
    ];
    let lower = [
        restricted(b, e_beta, 2.0 * epsilon),
        restricted(b, e_beta_prime, epsilon),
        restricted(bp, e_beta_prime, epsilon).map(|r| r + db * (e_beta_prime - epsilon)),
    ];
    let le = |a: Option<f64>, b: Option<f64>| {
        let a = a.unwrap_or(f64::NEG_INFINITY);
        let b = b.unwrap_or(f64::NEG_INFINITY);
        a <= b + LOG_SLACK
    };
    Ok(SandwichReport {
        beta: b,
        beta_prime: bp,
        epsilon,
        upper,
        lower,
        pass_upper: le(upper[0], upper[1]) && le(upper[1], upper[2]),
        pass_lower: le(lower[1], lower[0]) && le(lower[2], lower[1]),
    })
}
