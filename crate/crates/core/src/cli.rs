//! Command-line entry point: `oracle`, `encrypted`, `verify` and `mae`.
//!
//! Every command prints a JSON report on stdout. Exit codes: 0 success,
//! 2 invalid input, 3 degenerate geometry, 4 audit violation, 5 verification
//! mismatch, 1 anything else.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::Rotation2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{audit_run, AuditReport};
use crate::geometry::{ConjunctionPlaneModel, GeometryError};
use crate::he::BackendConfig;
use crate::pc_oracle::{
    mae_experiment, pc_integral, pc_monte_carlo, pc_monte_carlo_split, McConfig, MaeRow, OracleError,
    QuadratureConfig,
};
use crate::protocol::{execute, Fault, ProtocolError, ProtocolOptions, ProtocolOutput, Seeds, DEFAULT_BATCH};
use crate::rng::ZStream;
use crate::scenario::{Scenario, ScenarioError};

pub const EXIT_OTHER: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DEGENERATE: i32 = 3;
pub const EXIT_AUDIT: i32 = 4;
pub const EXIT_MISMATCH: i32 = 5;

pub const DEFAULT_MAE_COUNTS: [u64; 5] = [100, 1_000, 10_000, 100_000, 1_000_000];

#[derive(Debug, Parser)]
#[command(name = "encpc", version, about = "Encrypted Monte Carlo collision probability for satellite conjunctions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plaintext quadrature and Monte Carlo estimates.
    Oracle(OracleArgs),
    /// Full three-party encrypted run.
    Encrypted(EncryptedArgs),
    /// Encrypted run checked against a plaintext replay of the same samples.
    Verify(VerifyArgs),
    /// Monte Carlo error against sample count.
    Mae(MaeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ScenarioArgs {
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    /// Overrides the scenario's sample count.
    #[arg(long, value_name = "N")]
    pub samples: Option<u64>,
    /// Overrides the scenario's seed.
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Also write the JSON report here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_name = "R", default_value_t = 2048)]
    pub quadrature_res: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Exact,
    Quantized,
}

#[derive(Debug, Clone, Args)]
pub struct EncryptedArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_enum, default_value_t = BackendKind::Exact)]
    pub backend: BackendKind,
    /// Fractional mantissa bits kept by the quantized backend.
    #[arg(long, value_name = "K", default_value_t = 40)]
    pub frac_bits: u32,
    /// Check every party's view against the leakage policy.
    #[arg(long)]
    pub audit: bool,
    #[arg(long, value_name = "PATH")]
    pub metrics_out: Option<PathBuf>,
    /// Message log as JSON lines.
    #[arg(long, value_name = "PATH")]
    pub transcript_out: Option<PathBuf>,
    /// Include full payloads in the transcript log.
    #[arg(long, hide = true)]
    pub dump_payloads: bool,
    /// Comparisons per operator per round.
    #[arg(long, value_name = "B", default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, hide = true, value_name = "FAULT")]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Args)]
pub struct VerifyArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,
    #[arg(long, value_name = "B", default_value_t = DEFAULT_BATCH)]
    pub batch: usize,
    #[arg(long, hide = true, value_name = "FAULT")]
    pub inject_fault: Option<Fault>,
}

#[derive(Debug, Clone, Args)]
pub struct MaeArgs {
    #[arg(long, value_name = "PATH")]
    pub scenario: PathBuf,
    #[arg(long, value_name = "S")]
    pub seed: Option<u64>,
    /// Comma-separated, strictly increasing sample counts.
    #[arg(long, value_name = "N,...", value_delimiter = ',', default_values_t = DEFAULT_MAE_COUNTS)]
    pub counts: Vec<u64>,
    #[arg(long, default_value_t = 100)]
    pub trials: usize,
    #[arg(long, value_name = "R", default_value_t = 2048)]
    pub quadrature_res: usize,
    /// Write the `N,mae,trials` table here.
    #[arg(long, value_name = "PATH")]
    pub csv_out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("degenerate geometry: {0}")]
    Degenerate(String),
    #[error("audit found {0} violation(s)")]
    Audit(usize),
    #[error("encrypted count {encrypted} differs from plaintext count {plaintext}")]
    Mismatch { encrypted: u64, plaintext: u64 },
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Degenerate(_) => EXIT_DEGENERATE,
            CliError::Audit(_) => EXIT_AUDIT,
            CliError::Mismatch { .. } => EXIT_MISMATCH,
            CliError::Other(_) => EXIT_OTHER,
        }
    }
}

impl From<GeometryError> for CliError {
    fn from(e: GeometryError) -> Self {
        match e {
            GeometryError::DegenerateGeometry(_) => CliError::Degenerate(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        match e {
            ScenarioError::Geometry(g) => g.into(),
            other => CliError::Validation(other.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Geometry(g) => g.into(),
            ProtocolError::DegenerateGeometry { .. } => CliError::Degenerate(e.to_string()),
            ProtocolError::InvalidConfig(_) => CliError::Validation(e.to_string()),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<OracleError> for CliError {
    fn from(e: OracleError) -> Self {
        match e {
            OracleError::SingularCovariance | OracleError::NotPositiveDefinite => CliError::Degenerate(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub scenario: String,
    pub samples: u64,
    pub seed: u64,
    pub quadrature_resolution: usize,
    pub pc_integral: f64,
    pub pc_monte_carlo: f64,
    pub collisions: u64,
    pub abs_difference: f64,
    /// Three binomial standard errors at the integral's probability.
    pub three_sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncryptedReport {
    pub scenario: String,
    pub samples: u64,
    pub seed: u64,
    pub backend: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frac_bits: Option<u32>,
    pub batch: usize,
    /// Documented bound on the deviation from the exact backend.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantization_tolerance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<ProtocolOutput>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub scenario: String,
    pub samples: u64,
    pub seed: u64,
    pub encrypted_collisions: u64,
    pub plaintext_collisions: u64,
    pub encrypted_pc: f64,
    pub plaintext_pc: f64,
    #[serde(rename = "match")]
    pub matched: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaeSummary {
    pub scenario: String,
    pub seed: u64,
    pub trials: usize,
    pub rows: Vec<MaeRow>,
    /// `"NA"` when undefined.
    #[serde(with = "slope_or_na")]
    pub slope: Option<f64>,
}

mod slope_or_na {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Value(f64),
        Na(String),
    }

    pub fn serialize<S: Serializer>(v: &Option<f64>, s: S) -> Result<S::Ok, S::Error> {
        match v {
            Some(x) => Repr::Value(*x).serialize(s),
            None => Repr::Na("NA".into()).serialize(s),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<f64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Value(x) => Ok(Some(x)),
            Repr::Na(s) if s == "NA" => Ok(None),
            Repr::Na(s) => Err(serde::de::Error::custom(format!("expected a number or NA, got {s}"))),
        }
    }
}

/// Rounding steps a position passes through before the relative position
/// is formed, with margin.
const POSITION_ROUNDING_STEPS: f64 = 4.0;

/// Documented bound on `|pc_quantized − pc_exact|` for a backend that keeps
/// `frac_bits` mantissa bits.
///
/// Relative rounding of absolute positions of norm `‖r‖` leaves the relative
/// position off by up to `δ = 4‖r‖·2^-K`, so the disk center may move by `δ`
/// in the plane. The bound is the largest change of the quadrature
/// probability over eight such shifts, plus two boundary flips (`2/N`) for
/// rounding on the comparison itself.
pub fn quantization_tolerance(
    model: &ConjunctionPlaneModel,
    position_norm: f64,
    frac_bits: u32,
    samples: u64,
    quad: &QuadratureConfig,
) -> Result<f64, CliError> {
    let delta = POSITION_ROUNDING_STEPS * position_norm * (-(frac_bits as f64)).exp2();
    let base = pc_integral(model, quad)?;
    let mut worst = 0.0f64;
    for k in 0..8 {
        let theta = k as f64 * std::f64::consts::FRAC_PI_4;
        let (cx, cz) = (model.r0 + delta * theta.cos(), delta * theta.sin());
        // Rotate so the moved center lies on the first axis again.
        let rot = Rotation2::new(-cz.atan2(cx));
        let sigma = rot.matrix() * model.sigma_xz * rot.matrix().transpose();
        let sigma = (sigma + sigma.transpose()) * 0.5;
        let moved = ConjunctionPlaneModel::new(sigma, cx.hypot(cz), model.radius)?;
        worst = worst.max((pc_integral(&moved, quad)? - base).abs());
    }
    Ok(worst + 2.0 / samples as f64)
}

struct Loaded {
    scenario: Scenario,
    samples: u64,
    seed: u64,
}

fn load(args: &ScenarioArgs) -> Result<Loaded, CliError> {
    let scenario = Scenario::load(&args.scenario)?;
    let samples = args.samples.unwrap_or(scenario.run.samples);
    if samples == 0 {
        return Err(CliError::Validation("--samples must be >= 1".into()));
    }
    let seed = args.seed.unwrap_or(scenario.run.seed);
    Ok(Loaded { scenario, samples, seed })
}

fn emit<T: Serialize>(report: &T, out: &mut dyn Write, path: Option<&Path>) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(report).map_err(|e| CliError::Other(e.to_string()))?;
    text.push('\n');
    if let Some(p) = path {
        std::fs::write(p, &text)?;
    }
    out.write_all(text.as_bytes())?;
    Ok(())
}

pub fn cmd_oracle(args: &OracleArgs, out: &mut dyn Write) -> Result<OracleReport, CliError> {
    let l = load(&args.scenario)?;
    let model = l.scenario.plane_model()?;
    let quad = QuadratureConfig {
        resolution: args.quadrature_res,
        ..QuadratureConfig::default()
    };
    let integral = pc_integral(&model, &quad)?;
    let mc = pc_monte_carlo(&model, &McConfig::new(l.samples, l.seed))?;
    let report = OracleReport {
        scenario: l.scenario.name,
        samples: l.samples,
        seed: l.seed,
        quadrature_resolution: args.quadrature_res,
        pc_integral: integral,
        pc_monte_carlo: mc.pc,
        collisions: mc.n_c,
        abs_difference: (mc.pc - integral).abs(),
        three_sigma: 3.0 * (integral * (1.0 - integral) / l.samples as f64).sqrt(),
    };
    emit(&report, out, args.scenario.out.as_deref())?;
    Ok(report)
}

pub fn cmd_encrypted(args: &EncryptedArgs, out: &mut dyn Write) -> Result<EncryptedReport, CliError> {
    let l = load(&args.scenario)?;
    if args.batch == 0 {
        return Err(CliError::Validation("--batch must be >= 1".into()));
    }
    let backend = match args.backend {
        BackendKind::Exact => BackendConfig::default(),
        BackendKind::Quantized => {
            if !(1..=52).contains(&args.frac_bits) {
                return Err(CliError::Validation("--frac-bits must be in 1..=52".into()));
            }
            BackendConfig::quantized(args.frac_bits)
        }
    };
    let seeds = Seeds::from_master(l.seed);
    let opts = ProtocolOptions {
        batch: args.batch,
        fault: args.inject_fault,
        ..ProtocolOptions::default()
    };
    let secrets = l.scenario.secrets.clone();
    let run = execute(secrets, l.samples, seeds, backend, opts)?;

    if let Some(p) = &args.transcript_out {
        std::fs::write(p, run.transcript.to_jsonl(args.dump_payloads))?;
    }
    if let (Some(p), Ok(o)) = (&args.metrics_out, &run.result) {
        std::fs::write(p, o.metrics.to_csv())?;
    }
    let quantization_tolerance = match args.backend {
        BackendKind::Exact => None,
        BackendKind::Quantized => {
            let norm = l.scenario.secrets.iter().map(|s| s.state.r.norm()).fold(0.0, f64::max);
            let model = l.scenario.plane_model()?;
            Some(quantization_tolerance(&model, norm, args.frac_bits, l.samples, &QuadratureConfig::default())?)
        }
    };
    let audit = if args.audit {
        Some(audit_run(&run, &l.scenario.secrets, &seeds, &opts)?)
    } else {
        None
    };
    let report = EncryptedReport {
        scenario: l.scenario.name,
        samples: l.samples,
        seed: l.seed,
        backend: args.backend,
        frac_bits: (args.backend == BackendKind::Quantized).then_some(args.frac_bits),
        batch: args.batch,
        quantization_tolerance,
        output: run.result.as_ref().ok().cloned(),
        error: run.result.as_ref().err().map(ToString::to_string),
        audit,
    };
    emit(&report, out, args.scenario.out.as_deref())?;
    if let Some(a) = report.audit.as_ref().filter(|a| !a.passed) {
        return Err(CliError::Audit(a.violations.len()));
    }
    run.result?;
    Ok(report)
}

pub fn cmd_verify(args: &VerifyArgs, out: &mut dyn Write) -> Result<VerifyReport, CliError> {
    let l = load(&args.scenario)?;
    let seeds = Seeds::from_master(l.seed);
    let opts = ProtocolOptions {
        batch: args.batch.max(1),
        fault: args.inject_fault,
        ..ProtocolOptions::default()
    };
    let enc = execute(l.scenario.secrets.clone(), l.samples, seeds, BackendConfig::default(), opts)?.result?;
    let plain = pc_monte_carlo_split(&l.scenario.split_model()?, ZStream::new(seeds.samples), l.samples)?;
    let report = VerifyReport {
        scenario: l.scenario.name,
        samples: l.samples,
        seed: l.seed,
        encrypted_collisions: enc.n_c,
        plaintext_collisions: plain.n_c,
        encrypted_pc: enc.pc,
        plaintext_pc: plain.pc,
        matched: enc.n_c == plain.n_c,
    };
    emit(&report, out, args.scenario.out.as_deref())?;
    if !report.matched {
        return Err(CliError::Mismatch {
            encrypted: enc.n_c,
            plaintext: plain.n_c,
        });
    }
    Ok(report)
}

pub fn cmd_mae(args: &MaeArgs, out: &mut dyn Write) -> Result<MaeSummary, CliError> {
    let scenario = Scenario::load(&args.scenario)?;
    let seed = args.seed.unwrap_or(scenario.run.seed);
    let model = scenario.plane_model()?;
    let quad = QuadratureConfig {
        resolution: args.quadrature_res,
        ..QuadratureConfig::default()
    };
    let table = mae_experiment(&model, &args.counts, args.trials, seed, &quad)?;
    if let Some(p) = &args.csv_out {
        std::fs::write(p, table.to_csv())?;
    }
    let summary = MaeSummary {
        scenario: scenario.name,
        seed,
        trials: args.trials,
        slope: table.loglog_slope(),
        rows: table.rows,
    };
    emit(&summary, out, args.out.as_deref())?;
    Ok(summary)
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    match &cli.command {
        Command::Oracle(a) => cmd_oracle(a, out).map(drop),
        Command::Encrypted(a) => cmd_encrypted(a, out).map(drop),
        Command::Verify(a) => cmd_verify(a, out).map(drop),
        Command::Mae(a) => cmd_mae(a, out).map(drop),
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { 0 };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
