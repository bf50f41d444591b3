use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use spinglass_core::concentration::ERefPolicy;
use spinglass_core::harness::{
    self, AuditKind, ExperimentConfig, Mode, ModelKind, Pipeline, RunManifest, MANIFEST_FILE,
};
use spinglass_core::mc::beta_range;
use spinglass_core::Error;

/// Exact and Monte Carlo experiments on Gibbs measures of spin systems.
///
/// Any flag may also be given in a TOML file passed with `--config FILE`;
/// keys are flag names without dashes (`n = 12`, `eref = "plugin"`), and
/// flags on the command line take precedence.
#[derive(Parser, Debug)]
#[command(name = "spinglass", version, args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Exact free energy, energy moments and histograms (Monte Carlo above the enumeration limit).
    Exact(RunArgs),
    /// Concentration-set audits and Gibbs L1 concentration.
    Concentration(RunArgs),
    /// Tail, moment or sandwich inequality audits.
    Audit(RunArgs),
    /// Ghirlanda-Guerra residual and integration-by-parts audit.
    Gg(RunArgs),
    /// Parallel tempering traces, replica configurations and thermodynamic integration.
    Sample(RunArgs),
    /// Trend tables over a list of system sizes.
    Sweep(RunArgs),
    /// Re-run a recorded manifest and compare data-file hashes.
    Rerun {
        #[arg(long)]
        manifest: PathBuf,
        /// Output root for the re-run; defaults to the recorded one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Sk,
    Field,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Auto,
    Exact,
    Mc,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum KindArg {
    Tail,
    Moment,
    Sandwich,
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    experiment: Option<String>,
    #[arg(long, value_enum)]
    model: Option<ModelArg>,
    /// Field strength of the constant-field model.
    #[arg(long)]
    h: Option<f64>,
    /// System size(s), comma separated.
    #[arg(long, alias = "ns", value_delimiter = ',')]
    n: Vec<usize>,
    /// Inverse temperature(s), comma separated.
    #[arg(long, value_delimiter = ',')]
    beta: Vec<f64>,
    /// Inverse-temperature ladder `START:STOP:STEP` or a comma list.
    #[arg(long)]
    betas: Option<String>,
    #[arg(long)]
    c: Option<f64>,
    #[arg(long)]
    cprime: Option<f64>,
    #[arg(long)]
    lambda0: Option<f64>,
    #[arg(long)]
    window: Option<f64>,
    /// `plugin` or a number.
    #[arg(long)]
    eref: Option<String>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    enumeration_limit: Option<usize>,
    #[arg(long)]
    histogram_bins: Option<usize>,
    #[arg(long, value_enum)]
    kind: Option<KindArg>,
    #[arg(long, value_delimiter = ',')]
    epsilons: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    lambdas: Vec<f64>,
    #[arg(long)]
    beta_prime: Option<f64>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    phi: Option<String>,
    #[arg(long)]
    sweeps: Option<usize>,
    #[arg(long)]
    chains: Option<usize>,
    #[arg(long)]
    thin: Option<usize>,
    #[arg(long)]
    swap_interval: Option<usize>,
    #[arg(long)]
    burn_in_fraction: Option<f64>,
    /// Integrate the energy density from beta = 0.
    #[arg(long)]
    thermo: bool,
}

fn parse_betas(s: &str) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad number `{t}` in --betas: {e}"));
    match parts.as_slice() {
        [start, stop, step] => beta_range(num(start)?, num(stop)?, num(step)?).map_err(|e| e.to_string()),
        [list] => list.split(',').map(num).collect(),
        _ => Err(format!("--betas expects START:STOP:STEP or a comma list, got `{s}`")),
    }
}

impl RunArgs {
    fn into_config(self, pipeline: Pipeline) -> Result<ExperimentConfig, String> {
        let mut cfg = ExperimentConfig { pipeline, ..Default::default() };
        if let Some(v) = self.experiment {
            cfg.experiment = v;
        }
        if let Some(m) = self.model {
            cfg.model = match m {
                ModelArg::Sk => ModelKind::Sk,
                ModelArg::Field => ModelKind::Field,
            };
        }
        if let Some(v) = self.h {
            cfg.h = v;
        }
        cfg.ns = self.n;
        if let Some(s) = &self.betas {
            cfg.betas = parse_betas(s)?;
        } else if !self.beta.is_empty() {
            cfg.betas = self.beta;
        }
        macro_rules! set {
            ($($field:ident <- $arg:ident),* $(,)?) => {
                $(if let Some(v) = self.$arg { cfg.$field = v; })*
            };
        }
        set!(
            c <- c,
            cprime <- cprime,
            lambda0 <- lambda0,
            delta_window <- window,
            samples <- samples,
            seed <- seed,
            out <- out,
            enumeration_limit <- enumeration_limit,
            histogram_bins <- histogram_bins,
            replicas <- replicas,
            phi <- phi,
            sweeps <- sweeps,
            chains <- chains,
            thin <- thin,
            swap_interval <- swap_interval,
            burn_in_fraction <- burn_in_fraction,
        );
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Auto => Mode::Auto,
                ModeArg::Exact => Mode::Exact,
                ModeArg::Mc => Mode::Mc,
            };
        }
        if let Some(k) = self.kind {
            cfg.audit_kind = match k {
                KindArg::Tail => AuditKind::Tail,
                KindArg::Moment => AuditKind::Moment,
                KindArg::Sandwich => AuditKind::Sandwich,
            };
        }
        if let Some(e) = self.eref {
            cfg.e_ref = e.parse::<ERefPolicy>().map_err(|e| e.to_string())?;
        }
        if !self.epsilons.is_empty() {
            cfg.epsilons = self.epsilons;
        }
        if !self.lambdas.is_empty() {
            cfg.lambdas = self.lambdas;
        }
        cfg.beta_prime = self.beta_prime;
        cfg.epsilon = self.epsilon;
        cfg.thermo = self.thermo;
        Ok(cfg)
    }
}

fn toml_to_arg(value: &toml::Value) -> Result<String, String> {
    Ok(match value {
        toml::Value::String(s) => s.clone(),
        toml::Value::Integer(i) => i.to_string(),
        toml::Value::Float(f) => f.to_string(),
        toml::Value::Array(items) => items.iter().map(toml_to_arg).collect::<Result<Vec<_>, _>>()?.join(","),
        other => return Err(format!("unsupported config value `{other}`")),
    })
}

/// Flags equivalent to the key-value pairs of a TOML config file.
fn config_file_args(path: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let table: toml::Table = text.parse().map_err(|e| format!("{}: {e}", path.display()))?;
    let mut args = Vec::new();
    for (key, value) in &table {
        let flag = format!("--{}", key.replace('_', "-"));
        match value {
            toml::Value::Boolean(true) => args.push(flag),
            toml::Value::Boolean(false) => {}
            v => {
                args.push(flag);
                args.push(toml_to_arg(v)?);
            }
        }
    }
    Ok(args)
}

/// Splices `--config FILE` contents in right after the subcommand so that
/// explicit flags, which come later, override them.
fn expand_config(raw: Vec<String>) -> Result<Vec<String>, String> {
    let mut rest = Vec::with_capacity(raw.len());
    let mut file = None;
    let mut it = raw.into_iter();
    while let Some(a) = it.next() {
        if a == "--config" {
            file = Some(it.next().ok_or("--config needs a file")?);
        } else if let Some(f) = a.strip_prefix("--config=") {
            file = Some(f.to_string());
        } else {
            rest.push(a);
        }
    }
    let Some(file) = file else { return Ok(rest) };
    let injected = config_file_args(Path::new(&file))?;
    let at = rest.len().min(2);
    rest.splice(at..at, injected);
    Ok(rest)
}

fn report(manifest: &RunManifest) -> ExitCode {
    for a in &manifest.audits {
        println!("{} {}", if a.pass { "PASS" } else { "FAIL" }, a.name);
    }
    println!(
        "wrote {} files to {}",
        manifest.files.len(),
        manifest.config.output_dir().join(MANIFEST_FILE).display()
    );
    if manifest.all_pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn fail(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => return fail(e),
    };
    let cli = Cli::parse_from(args);
    let (pipeline, run) = match cli.command {
        Command::Exact(a) => (Pipeline::Exact, a),
        Command::Concentration(a) => (Pipeline::Concentration, a),
        Command::Audit(a) => (Pipeline::Audit, a),
        Command::Gg(a) => (Pipeline::Gg, a),
        Command::Sample(a) => (Pipeline::Sample, a),
        Command::Sweep(a) => (Pipeline::Sweep, a),
        Command::Rerun { manifest, out } => {
            return match harness::rerun_from_manifest(&manifest, out.as_deref()) {
                Ok(r) if r.mismatches.is_empty() => {
                    println!("reproduced {} files", r.manifest.files.len());
                    report(&r.manifest)
                }
                Ok(r) => {
                    for m in &r.mismatches {
                        eprintln!("mismatch: {m}");
                    }
                    ExitCode::from(1)
                }
                Err(e) => fail(e),
            };
        }
    };
    let config = match run.into_config(pipeline) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    match harness::run_experiment(&config) {
        Ok(m) => report(&m),
        Err(Error::Config(msgs)) => {
            eprintln!("error: invalid configuration");
            for m in msgs {
                eprintln!("  {m}");
            }
            ExitCode::from(2)
        }
        Err(e) => fail(e),
    }
}
