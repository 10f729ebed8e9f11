//! Command-line front end. Exit codes: 0 success, 2 usage or configuration
//! error, 3 infeasible request or failed diagnostic.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::codec::expected_bits_per_round;
use crate::error::{Error, Result};
use crate::flsim::experiment::{convergence_check, to_csv};
use crate::flsim::{run_experiment, FlConfig, Mechanism, MechanismConfig, Simulation, Task};
use crate::lattice::LatticeSpec;
use crate::noise::{NoiseFamily, NoiseKind};
use crate::privacy::{self, CalibrationTarget, GaussianParams};
use crate::quantizers::{lrsuq_decode, lrsuq_encode};
use crate::randomness::{RandomTape, Stream};
use crate::stats::ks_one_sample;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "cepam", version, about = "Privacy-noise-simulating lattice quantizers: audits, accounting and FL runs")]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "CEPAM_THREADS")]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Round-trip the layered quantizer and test the error against the target law.
    ChannelAudit(ChannelAuditArgs),
    /// Forward (noise to budget) or inverse (budget to noise) privacy accounting.
    PrivacyBudget(PrivacyArgs),
    /// Run a federated experiment and write per-seed CSVs plus a summary.
    FlRun(FlRunArgs),
    /// Replay an experiment and account every encoded record.
    BitAudit(ConfigArgs),
    /// Compare the measured objective gap with the convergence bound.
    BoundCheck(ConfigArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Family {
    Gaussian,
    Laplace,
}

impl Family {
    fn kind(self) -> NoiseKind {
        match self {
            Family::Gaussian => NoiseKind::GaussianBall,
            Family::Laplace => NoiseKind::LaplaceInterval,
        }
    }
}

#[derive(Debug, Args, Serialize)]
struct ChannelAuditArgs {
    #[arg(long, value_enum)]
    #[serde(serialize_with = "ser_family")]
    family: Family,
    /// Subvector dimension (1 for Laplace).
    #[arg(long, default_value_t = 1)]
    n: usize,
    /// `σ` (Gaussian) or `b` (Laplace).
    #[arg(long)]
    scale: f64,
    /// Lattice scale `α`.
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Round trips, at least 10⁴.
    #[arg(long, default_value_t = 100_000)]
    samples: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Inputs are drawn uniformly from `[−input_range, input_range]ⁿ`.
    #[arg(long, default_value_t = 1.0)]
    input_range: f64,
    /// Write `report.json` and `manifest.json` here instead of printing.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn ser_family<S: serde::Serializer>(f: &Family, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(match f {
        Family::Gaussian => "gaussian",
        Family::Laplace => "laplace",
    })
}

#[derive(Debug, Args, Serialize)]
struct PrivacyArgs {
    #[arg(long, value_enum)]
    #[serde(serialize_with = "ser_family")]
    family: Family,
    /// Forward mode: per-iteration budget `ε̃`.
    #[arg(long, conflicts_with_all = ["epsilon", "delta"], requires = "noise")]
    eps_tilde: Option<f64>,
    /// Forward mode: `σ` or `b`.
    #[arg(long)]
    noise: Option<f64>,
    /// Inverse mode: target `ε`.
    #[arg(long, required_unless_present = "eps_tilde")]
    epsilon: Option<f64>,
    /// Inverse mode (Gaussian): target `δ`.
    #[arg(long)]
    delta: Option<f64>,
    /// Local steps between synchronizations, `τ′`.
    #[arg(long)]
    tau_prime: u64,
    #[arg(long)]
    gamma: f64,
    /// Client count `K` (Gaussian).
    #[arg(long, default_value_t = 1)]
    clients: u64,
    /// Local dataset size `|D|`.
    #[arg(long)]
    dataset_size: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FlRunArgs {
    #[arg(long)]
    config: PathBuf,
    /// Overrides `reps` in the config.
    #[arg(long)]
    reps: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    reps: Option<u64>,
    /// Output directory; the JSON report is also printed.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Written next to every output so the run can be reproduced.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<String>,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub tool_version: String,
    /// SHA-256 of the config file, or of the canonical flag set.
    pub config_hash: String,
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut s = String::with_capacity(64);
    for b in digest.iter() {
        let _ = write!(s, "{b:02x}");
    }
    s
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn write_manifest(dir: &Path, subcommand: &str, config_path: Option<&Path>, seeds: Vec<u64>, hash: String) -> Result<()> {
    let manifest = RunManifest {
        subcommand: subcommand.into(),
        config_path: config_path.map(|p| p.display().to_string()),
        seeds,
        output_dir: dir.display().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").into(),
        config_hash: hash,
    };
    write_json(&dir.join("manifest.json"), &manifest)
}

/// Prints `value`, or writes it to `dir/name` with a manifest.
fn emit<T: Serialize>(value: &T, out: Option<&Path>, name: &str, subcommand: &str, seeds: Vec<u64>, hash: String) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            write_json(&dir.join(name), value)?;
            write_manifest(dir, subcommand, None, seeds, hash)
        }
        None => {
            println!("{}", serde_json::to_string_pretty(value)?);
            Ok(())
        }
    }
}

fn load_config(path: &Path, reps: Option<u64>) -> Result<(FlConfig, String)> {
    let bytes = fs::read(path)
        .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: FlConfig = serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    if let Some(r) = reps {
        cfg.reps = r;
    }
    cfg.validate()?;
    Ok((cfg, sha256_hex(&bytes)))
}

fn build_task(cfg: &FlConfig) -> Result<Task> {
    Task::build(&cfg.task, cfg.clients, &cfg.client_weights())
}

#[derive(Debug, Serialize)]
struct ChannelReport {
    family: &'static str,
    n: usize,
    scale: f64,
    alpha: f64,
    samples: u64,
    seed: u64,
    /// Per-coordinate KS statistic against the target marginal.
    ks_statistic: Vec<f64>,
    ks_p_value: Vec<f64>,
    /// Empirical `E‖Z‖²` over `Var(f)`.
    variance_ratio: f64,
    /// Samples over total rejection trials.
    acceptance_rate: f64,
    expected_acceptance: f64,
    mean_h: f64,
    lockstep_ok: bool,
}

fn channel_audit(a: &ChannelAuditArgs) -> Result<()> {
    if a.samples < 10_000 {
        return Err(Error::Config("--samples: at least 10000 round trips are required".into()));
    }
    if !(a.input_range >= 0.0 && a.input_range.is_finite()) {
        return Err(Error::Config("--input-range: must be finite and non-negative".into()));
    }
    let fam = NoiseFamily::new(a.family.kind(), a.n, a.scale).map_err(|e| Error::Config(format!("--scale/--n: {e}")))?;
    let spec = LatticeSpec::scaled_integer(fam.dim(), a.alpha).map_err(|e| Error::Config(format!("--alpha: {e}")))?;
    let n = fam.dim();
    let mut coords = vec![Vec::with_capacity(a.samples as usize); n];
    let (mut sq, mut h_sum, mut lockstep_ok) = (0.0, 0u64, true);
    for s in 0..a.samples {
        let mut data = RandomTape::derive_stream(Stream::Data, a.seed, 0, s, 0);
        let x: Vec<f64> = (0..n).map(|_| a.input_range * (2.0 * data.next_uniform() - 1.0)).collect();
        let e = lrsuq_encode(&x, &fam, &spec, &mut RandomTape::derive(a.seed, 0, s, 0))?;
        let y = lrsuq_decode(&e.encoded, &fam, &spec, &mut RandomTape::derive(a.seed, 0, s, 0))?;
        lockstep_ok &= y.iter().zip(&e.reconstruction).all(|(p, q)| p.to_bits() == q.to_bits());
        h_sum += e.encoded.h;
        for (i, (yi, xi)) in e.reconstruction.iter().zip(&x).enumerate() {
            let z = yi - xi;
            sq += z * z;
            coords[i].push(z);
        }
    }
    let ks: Vec<_> = coords.iter().map(|c| ks_one_sample(c, |z| fam.marginal_cdf(z))).collect();
    let ns = a.samples as f64;
    let report = ChannelReport {
        family: match a.family {
            Family::Gaussian => "gaussian",
            Family::Laplace => "laplace",
        },
        n,
        scale: a.scale,
        alpha: a.alpha,
        samples: a.samples,
        seed: a.seed,
        ks_statistic: ks.iter().map(|k| k.statistic).collect(),
        ks_p_value: ks.iter().map(|k| k.p_value).collect(),
        variance_ratio: sq / ns / fam.variance(),
        acceptance_rate: ns / h_sum as f64,
        expected_acceptance: fam.acceptance_prob(1.0, &spec),
        mean_h: h_sum as f64 / ns,
        lockstep_ok,
    };
    let hash = sha256_hex(serde_json::to_string(a)?.as_bytes());
    emit(&report, a.out.as_deref(), "report.json", "channel-audit", vec![a.seed], hash)?;
    if lockstep_ok {
        Ok(())
    } else {
        Err(Error::Lockstep("decoder disagreed with encoder".into()))
    }
}

fn privacy_budget(a: &PrivacyArgs) -> Result<()> {
    let report = match (a.eps_tilde, a.noise) {
        (Some(eps_tilde), Some(noise)) => match a.family {
            Family::Gaussian => privacy::gaussian_report(&GaussianParams {
                eps_tilde,
                tau_prime: a.tau_prime,
                gamma: a.gamma,
                clients: a.clients,
                sigma: noise,
                dataset_size: a.dataset_size,
            })?,
            Family::Laplace => privacy::laplace_report(eps_tilde, a.tau_prime, a.gamma, noise, a.dataset_size)?,
        },
        _ => {
            let epsilon = a.epsilon.ok_or_else(|| Error::Config("--epsilon is required in inverse mode".into()))?;
            let delta = match a.family {
                Family::Gaussian => a
                    .delta
                    .ok_or_else(|| Error::Config("--delta is required for gaussian calibration".into()))?,
                Family::Laplace => 0.0,
            };
            privacy::calibrate(&CalibrationTarget {
                epsilon,
                delta,
                tau_prime: a.tau_prime,
                gamma: a.gamma,
                clients: a.clients,
                dataset_size: a.dataset_size,
                kind: a.family.kind(),
            })?
        }
    };
    let hash = sha256_hex(serde_json::to_string(a)?.as_bytes());
    emit(&report, a.out.as_deref(), "privacy.json", "privacy-budget", Vec::new(), hash)
}

fn fl_run(a: &FlRunArgs) -> Result<()> {
    let (cfg, hash) = load_config(&a.config, a.reps)?;
    let task = build_task(&cfg)?;
    let res = run_experiment(&cfg, &task)?;
    fs::create_dir_all(&a.out)?;
    for (seed, run) in res.seeds.iter().zip(&res.runs) {
        fs::write(a.out.join(format!("run_seed{seed}.csv")), to_csv(run))?;
    }
    write_json(&a.out.join("summary.json"), &res.summary)?;
    write_manifest(&a.out, "fl-run", Some(&a.config), res.seeds.clone(), hash)
}

#[derive(Debug, Serialize)]
struct RoundBits {
    seed: u64,
    round: u64,
    bits: u64,
}

#[derive(Debug, Serialize)]
struct BitAuditReport {
    total_bits: u64,
    records: u64,
    mean_bits_per_record: f64,
    /// Monte-Carlo entropy estimate per round for quantizer mechanisms.
    entropy_bits_per_round: Option<f64>,
    rounds: Vec<RoundBits>,
}

fn bit_audit(a: &ConfigArgs) -> Result<()> {
    let (cfg, hash) = load_config(&a.config, a.reps)?;
    let task = build_task(&cfg)?;
    let mech = Mechanism::new(cfg.mechanism.clone())?;
    let seeds: Vec<u64> = (0..cfg.reps).map(|r| cfg.seed.wrapping_add(r)).collect();
    let mut csv = String::from("seed,round,client,subvector,h,bits\n");
    let mut rounds = Vec::new();
    let (mut total, mut records) = (0u64, 0u64);
    for &seed in &seeds {
        let mut sim = Simulation::new(&cfg, &task, seed)?;
        for round in 0..cfg.total_iters / cfg.tau {
            let detail = sim.step()?;
            let mut round_bits = 0;
            for (k, clipped) in detail.clipped.iter().enumerate() {
                for r in mech.audit(clipped, cfg.gamma, sim.upload_context(k, round))? {
                    let opt = |v: Option<u64>| v.map(|x| x.to_string()).unwrap_or_default();
                    let _ = writeln!(csv, "{seed},{},{k},{},{},{}", detail.report.t, opt(r.subvector), opt(r.h), r.bits);
                    round_bits += r.bits;
                    records += 1;
                }
            }
            if round_bits != detail.report.bits {
                return Err(Error::Lockstep(format!(
                    "seed {seed} round {}: audit {round_bits} bits, run {} bits",
                    detail.report.t, detail.report.bits
                )));
            }
            total += round_bits;
            rounds.push(RoundBits {
                seed,
                round: detail.report.t,
                bits: round_bits,
            });
        }
    }
    let entropy = match cfg.mechanism {
        MechanismConfig::CepamGaussian { n, sigma, alpha } => Some((NoiseFamily::gaussian(n, sigma)?, n, alpha)),
        MechanismConfig::CepamLaplace { b, alpha } => Some((NoiseFamily::laplace(b)?, 1, alpha)),
        _ => None,
    }
    .map(|(fam, n, alpha)| {
        let spec = LatticeSpec::scaled_integer(n, alpha)?;
        let nsub = mech.subvectors(task.dim()) * cfg.clients as u64;
        expected_bits_per_round(&fam, &spec, cfg.gamma, nsub, 1000, cfg.seed).map(|b| b.entropy_bits_per_round)
    })
    .transpose()?;
    let report = BitAuditReport {
        total_bits: total,
        records,
        mean_bits_per_record: total as f64 / records.max(1) as f64,
        entropy_bits_per_round: entropy,
        rounds,
    };
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("records.csv"), csv)?;
        write_json(&dir.join("bit_audit.json"), &report)?;
        write_manifest(dir, "bit-audit", Some(&a.config), seeds, hash)?;
    } else {
        println!("{}", serde_json::to_string_pretty(&report)?);
    }
    Ok(())
}

/// Returns whether the bound held.
fn bound_check(a: &ConfigArgs) -> Result<bool> {
    let (cfg, hash) = load_config(&a.config, a.reps)?;
    let task = build_task(&cfg)?;
    let res = run_experiment(&cfg, &task)?;
    let chk = convergence_check(&cfg, &task, &res)?;
    println!("{}", serde_json::to_string_pretty(&chk)?);
    if let Some(dir) = &a.out {
        fs::create_dir_all(dir)?;
        write_json(&dir.join("bound_check.json"), &chk)?;
        write_manifest(dir, "bound-check", Some(&a.config), res.seeds, hash)?;
    }
    Ok(chk.satisfied)
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Calibration(_)
        | Error::Unsupported(_)
        | Error::DegenerateTask(_)
        | Error::DomainTooLarge(_)
        | Error::RejectionOverflow { .. }
        | Error::Lockstep(_)
        | Error::UndefinedSnr => EXIT_INFEASIBLE,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    if let Some(n) = cli.threads {
        // Fails harmlessly if a pool already exists.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    let outcome = match &cli.command {
        Command::ChannelAudit(a) => channel_audit(a).map(|_| true),
        Command::PrivacyBudget(a) => privacy_budget(a).map(|_| true),
        Command::FlRun(a) => fl_run(a).map(|_| true),
        Command::BitAudit(a) => bit_audit(a).map(|_| true),
        Command::BoundCheck(a) => bound_check(a),
    };
    match outcome {
        Ok(true) => EXIT_OK,
        Ok(false) => {
            eprintln!("error: bound violated");
            EXIT_INFEASIBLE
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
