//! Command-line front end.
//!
//! Every command writes its result to `--out` through a temporary file and a
//! rename, then writes `<out>.manifest.json` with the parsed arguments and the
//! SHA-256 of every input and of the output. Exit codes: 0 success,
//! 2 invalid input, 3 non-convergence (output still written), 4 I/O failure.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::io::MatrixJson;
use crate::metrics::{
    fidelity_vs_depolarized_target, mean_fidelity_report, mean_purity, per_gate_slope, FidelityEstimate, HaarSampler,
    DEFAULT_HAAR_SAMPLES,
};
use crate::msgate::ms_unitary;
use crate::msgate::{
    bell_fidelity, bell_state, parity_scan, populations, propagate_populations_depolarized, propagate_spin_states,
    MSGateParams, ParityScan, DEFAULT_ETA, DEFAULT_FOCK_CUTOFF,
};
use crate::noise::{depolarize, fit_depol_rate, ms_depolarized_chi, DepolFit};
use crate::protocol::{design_experiment, CountsDataset, ExperimentDesign};
use crate::qcore::{fidelity, unitary_to_chi, DensityMatrix};
use crate::simulator::{simulate_dataset, simulate_parity_scan, ProcessConfig};
use crate::tomography::{mle_reconstruct, MleOptions, TomographyReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "ms-qpt", version, about = "Process tomography toolkit for a two-ion entangling gate")]
pub struct Cli {
    /// Seed for every random choice the command makes.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file; a manifest is written next to it.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Serialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Write the canonical 240-setting measurement design.
    Design(DesignArgs),
    /// Sample a counts dataset from a process configuration.
    Simulate(SimulateArgs),
    /// Maximum-likelihood reconstruction of χ from counts.
    Reconstruct(ReconstructArgs),
    /// Fidelity, purity and depolarization analysis over gate counts.
    Analyze(AnalyzeArgs),
    /// Population dynamics during the gate.
    Populations(PopulationsArgs),
    /// Parity oscillation and its sinusoidal fit.
    Parity(ParityArgs),
}

#[derive(Debug, Serialize, Args)]
pub struct DesignArgs {
    /// Shots per measurement setting.
    #[arg(long, default_value_t = 400)]
    pub shots: u64,
}

#[derive(Debug, Serialize, Args)]
pub struct SimulateArgs {
    /// Process configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Measurement design the counts are sampled for.
    #[arg(long)]
    pub design: PathBuf,
}

#[derive(Debug, Serialize, Args)]
pub struct ReconstructArgs {
    /// Counts dataset to reconstruct from.
    #[arg(long)]
    pub counts: PathBuf,
    /// Design the counts were measured with.
    #[arg(long)]
    pub design: PathBuf,
    /// Fix only the trace of χ instead of full trace preservation.
    #[arg(long)]
    pub no_tp: bool,
    /// Extra perturbed starting points for the optimizer.
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// Iteration budget across all optimizer stages.
    #[arg(long, default_value_t = 5000)]
    pub max_iterations: usize,
}

#[derive(Debug, Serialize, Args)]
pub struct AnalyzeArgs {
    /// Reconstruction result for a gate count, as `N=PATH`; repeatable.
    #[arg(long = "result", value_parser = parse_result_arg, required = true)]
    pub results: Vec<(u32, PathBuf)>,
    /// Design the results must have been measured with.
    #[arg(long)]
    pub design: PathBuf,
    /// Depolarization per gate for the depolarized targets; defaults to the fitted rate.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Haar-random inputs used for mean fidelity and purity.
    #[arg(long, default_value_t = DEFAULT_HAAR_SAMPLES)]
    pub haar_samples: usize,
}

#[derive(Debug, Serialize, Args)]
pub struct PopulationsArgs {
    /// Detuning ε/2π in kHz.
    #[arg(long, default_value_t = 7.7)]
    pub epsilon_khz: f64,
    /// Lamb-Dicke parameter of the gate mode.
    #[arg(long, default_value_t = DEFAULT_ETA)]
    pub eta: f64,
    /// Carrier Rabi frequency Ω/2π in kHz; defaults to the calibrated ηΩ = ε/4.
    #[arg(long)]
    pub omega_khz: Option<f64>,
    /// Evolution time in gate times.
    #[arg(long, default_value_t = 1)]
    pub n_gates: u32,
    /// Number of time samples.
    #[arg(long, default_value_t = 201)]
    pub points: usize,
    /// Depolarization per gate time for the depolarized series.
    #[arg(long, default_value_t = 0.0)]
    pub alpha: f64,
    /// Number of Fock levels kept for the motional mode.
    #[arg(long, default_value_t = DEFAULT_FOCK_CUTOFF)]
    pub fock_cutoff: usize,
    /// Mean thermal phonon number of the initial motional state.
    #[arg(long, default_value_t = 0.0)]
    pub nbar: f64,
}

#[derive(Debug, Serialize, Args)]
pub struct ParityArgs {
    /// `bell`, `depolarized-bell`, `gate` (simulated gate output) or a density-matrix JSON file.
    #[arg(long, default_value = "bell")]
    pub state: String,
    /// Depolarization for `depolarized-bell`, or per gate time for `gate`.
    #[arg(long, default_value_t = 0.0)]
    pub p: f64,
    /// Number of analysis phases spread over [0, 2π).
    #[arg(long, default_value_t = 24)]
    pub phases: usize,
    /// Sample this many shots per phase instead of exact parities.
    #[arg(long)]
    pub shots: Option<u64>,
}

fn parse_result_arg(s: &str) -> std::result::Result<(u32, PathBuf), String> {
    let (n, path) = s.split_once('=').ok_or_else(|| format!("expected N=PATH, got {s:?}"))?;
    let n = n.trim().parse::<u32>().map_err(|e| format!("bad gate count {n:?}: {e}"))?;
    if path.is_empty() {
        return Err("empty path".into());
    }
    Ok((n, PathBuf::from(path)))
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn invalid(message: impl Into<String>) -> Self {
        Self { code: EXIT_INVALID, message: message.into() }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Io(_) => EXIT_IO,
            Error::NonConvergentIntegration(_) => EXIT_NOT_CONVERGED,
            _ => EXIT_INVALID,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError { code: EXIT_IO, message: format!("{}: {e}", path.display()) }
}

/// Inputs read so far, keyed by path as given, with their SHA-256.
#[derive(Default)]
struct Inputs(BTreeMap<String, String>);

impl Inputs {
    fn read(&mut self, path: &Path) -> CliResult<String> {
        let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
        self.0.insert(path.display().to_string(), hex::encode(Sha256::digest(&bytes)));
        String::from_utf8(bytes).map_err(|_| CliError::invalid(format!("{}: not UTF-8", path.display())))
    }

    fn json<T: serde::de::DeserializeOwned>(&mut self, path: &Path) -> CliResult<T> {
        let text = self.read(path)?;
        serde_json::from_str(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }

    fn design(&mut self, path: &Path) -> CliResult<ExperimentDesign> {
        let text = self.read(path)?;
        ExperimentDesign::from_json(&text).map_err(|e| CliError::invalid(format!("{}: {e}", path.display())))
    }
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    command: &'a Command,
    seed: Option<u64>,
    format: Format,
    inputs: &'a BTreeMap<String, String>,
    output: String,
    output_sha256: String,
}

fn json_bytes<T: Serialize>(value: &T) -> CliResult<Vec<u8>> {
    let mut text = serde_json::to_vec_pretty(value).map_err(|e| CliError::invalid(e.to_string()))?;
    text.push(b'\n');
    Ok(text)
}

fn csv_bytes(header: &[&str], rows: &[Vec<f64>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let fail = |e: csv::Error| CliError::invalid(e.to_string());
    w.write_record(header).map_err(fail)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:e}"))).map_err(fail)?;
    }
    w.into_inner().map_err(|e| CliError::invalid(e.to_string()))
}

/// Writes `bytes` to `path` via a sibling temporary file and a rename.
fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.json");
    out.with_file_name(name)
}

struct Output {
    bytes: Vec<u8>,
    converged: bool,
}

impl Output {
    fn done(bytes: Vec<u8>) -> Self {
        Self { bytes, converged: true }
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    match execute(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs a parsed command, writing its output and manifest.
pub fn execute(cli: &Cli) -> CliResult<i32> {
    let out = cli.out.as_deref().ok_or_else(|| CliError::invalid("--out is required"))?;
    let mut inputs = Inputs::default();
    let output = match &cli.command {
        Command::Design(a) => cmd_design(cli, a)?,
        Command::Simulate(a) => cmd_simulate(cli, a, &mut inputs)?,
        Command::Reconstruct(a) => cmd_reconstruct(cli, a, &mut inputs)?,
        Command::Analyze(a) => cmd_analyze(cli, a, &mut inputs)?,
        Command::Populations(a) => cmd_populations(cli, a)?,
        Command::Parity(a) => cmd_parity(cli, a, &mut inputs)?,
    };
    write_atomic(out, &output.bytes)?;
    let manifest = Manifest {
        tool: "ms-qpt",
        version: env!("CARGO_PKG_VERSION"),
        command: &cli.command,
        seed: cli.seed,
        format: cli.format,
        inputs: &inputs.0,
        output: out.display().to_string(),
        output_sha256: hex::encode(Sha256::digest(&output.bytes)),
    };
    write_atomic(&manifest_path(out), &json_bytes(&manifest)?)?;
    if output.converged {
        Ok(EXIT_OK)
    } else {
        eprintln!("warning: reconstruction did not converge; result written to {}", out.display());
        Ok(EXIT_NOT_CONVERGED)
    }
}

fn json_only(cli: &Cli, command: &str) -> CliResult<()> {
    match cli.format {
        Format::Json => Ok(()),
        Format::Csv => Err(CliError::invalid(format!("{command} writes JSON only"))),
    }
}

fn cmd_design(cli: &Cli, a: &DesignArgs) -> CliResult<Output> {
    json_only(cli, "design")?;
    let design = design_experiment(a.shots)?;
    Ok(Output::done(json_bytes(&design)?))
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs, inputs: &mut Inputs) -> CliResult<Output> {
    json_only(cli, "simulate")?;
    let mut config: ProcessConfig = inputs.json(&a.config)?;
    if let Some(seed) = cli.seed {
        config.noise_mut().seed = seed;
    }
    let design = inputs.design(&a.design)?;
    let data = simulate_dataset(&config.to_process()?, &design)?;
    Ok(Output::done(json_bytes(&data)?))
}

fn cmd_reconstruct(cli: &Cli, a: &ReconstructArgs, inputs: &mut Inputs) -> CliResult<Output> {
    json_only(cli, "reconstruct")?;
    let data: CountsDataset = inputs.json(&a.counts)?;
    let design = inputs.design(&a.design)?;
    let opts = MleOptions {
        trace_preserving: !a.no_tp,
        restarts: a.restarts,
        seed: cli.seed.unwrap_or(0),
        max_iterations: a.max_iterations,
        ..Default::default()
    };
    let result = mle_reconstruct(&data, &design, &opts)?;
    let report = result.to_report(&design.hash(), data.seed, opts);
    Ok(Output { bytes: json_bytes(&report)?, converged: result.converged })
}

#[derive(Serialize)]
struct GateCountMetrics {
    n_gates: u32,
    fidelity_ideal: FidelityEstimate,
    fidelity_depolarized: Option<f64>,
    mean_purity: f64,
    converged: bool,
}

#[derive(Serialize)]
struct AnalysisReport {
    design_hash: String,
    sampler_seed: u64,
    haar_samples: usize,
    per_gate_count: Vec<GateCountMetrics>,
    depolarization_fit: Option<DepolFit>,
    alpha_used: Option<f64>,
    fidelity_slope: Option<f64>,
    purity_slope: Option<f64>,
    notices: Vec<String>,
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs, inputs: &mut Inputs) -> CliResult<Output> {
    let design = inputs.design(&a.design)?;
    let hash = design.hash();
    let mut reports = BTreeMap::new();
    for (n, path) in &a.results {
        let report: TomographyReport = inputs.json(path)?;
        if report.design_hash != hash {
            return Err(Error::HashMismatch { expected: hash, found: report.design_hash }.into());
        }
        if reports.insert(*n, report).is_some() {
            return Err(CliError::invalid(format!("gate count {n} given twice")));
        }
    }
    if a.haar_samples == 0 {
        return Err(CliError::invalid("--haar-samples must be positive"));
    }
    let seed = cli.seed.unwrap_or(0);
    let sampler = HaarSampler::new(seed, a.haar_samples);
    let mut notices = Vec::new();

    let mut chis = BTreeMap::new();
    let mut fidelities = BTreeMap::new();
    let mut purities = BTreeMap::new();
    for (&n, report) in &reports {
        let chi = report.chi.to_chi()?;
        let target = unitary_to_chi(&ms_unitary(n))?;
        fidelities.insert(n, mean_fidelity_report(&chi, &target, &sampler)?);
        purities.insert(n, mean_purity(&chi, &sampler)?);
        chis.insert(n, chi);
    }

    let fit = if purities.keys().filter(|&&n| n != 0).count() >= 2 {
        Some(fit_depol_rate(&purities, true, &sampler)?)
    } else {
        notices.push("depolarization fit omitted: needs two nonzero gate counts".to_string());
        None
    };
    let alpha = a.alpha.or(fit.as_ref().map(|f| f.alpha));
    if let Some(alpha) = alpha {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(CliError::invalid(format!("alpha {alpha} outside [0, 1]")));
        }
    } else {
        notices.push("depolarized-target fidelities omitted: no alpha given or fitted".to_string());
    }

    let none = BTreeSet::new();
    let slope_of = |values: &BTreeMap<u32, f64>, exclude: &BTreeSet<u32>| per_gate_slope(values, exclude).ok();
    let fidelity_means: BTreeMap<u32, f64> = fidelities.iter().map(|(&n, f)| (n, f.mean)).collect();
    let fidelity_slope = slope_of(&fidelity_means, &none);
    let purity_slope = slope_of(&purities, &[0].into());
    if fidelity_slope.is_none() {
        notices.push("slope omitted: needs at least two gate counts".to_string());
    }

    let mut rows = Vec::new();
    for (&n, chi) in &chis {
        let depolarized = alpha.map(|al| fidelity_vs_depolarized_target(chi, n, al, &sampler)).transpose()?;
        rows.push(GateCountMetrics {
            n_gates: n,
            fidelity_ideal: fidelities[&n],
            fidelity_depolarized: depolarized,
            mean_purity: purities[&n],
            converged: reports[&n].converged,
        });
    }
    for notice in &notices {
        log::info!("{notice}");
    }

    let bytes = match cli.format {
        Format::Json => json_bytes(&AnalysisReport {
            design_hash: hash,
            sampler_seed: seed,
            haar_samples: a.haar_samples,
            per_gate_count: rows,
            depolarization_fit: fit,
            alpha_used: alpha,
            fidelity_slope,
            purity_slope,
            notices,
        })?,
        Format::Csv => {
            let model = |n: u32| -> CliResult<f64> {
                match alpha {
                    Some(al) => Ok(mean_purity(&ms_depolarized_chi(n, al)?, &sampler)?),
                    None => Ok(f64::NAN),
                }
            };
            let table = rows
                .iter()
                .map(|r| {
                    Ok(vec![
                        r.n_gates as f64,
                        r.fidelity_ideal.mean,
                        r.fidelity_ideal.std_error,
                        r.fidelity_depolarized.unwrap_or(f64::NAN),
                        r.mean_purity,
                        model(r.n_gates)?,
                    ])
                })
                .collect::<CliResult<Vec<_>>>()?;
            csv_bytes(
                &[
                    "n_gates",
                    "fidelity_ideal",
                    "fidelity_ideal_stderr",
                    "fidelity_depolarized",
                    "mean_purity",
                    "model_purity",
                ],
                &table,
            )?
        }
    };
    Ok(Output::done(bytes))
}

#[derive(Serialize)]
struct PopulationsReport {
    params: MSGateParams,
    alpha: f64,
    gate_time_s: f64,
    time_s: Vec<f64>,
    ideal: [Vec<f64>; 3],
    depolarized: [Vec<f64>; 3],
    bell_fidelity_ideal: f64,
    bell_fidelity_depolarized: f64,
}

fn cmd_populations(cli: &Cli, a: &PopulationsArgs) -> CliResult<Output> {
    let epsilon = 2.0 * PI * a.epsilon_khz * 1e3;
    let mut params = MSGateParams::calibrated(epsilon, a.eta);
    if let Some(omega) = a.omega_khz {
        params.omega = 2.0 * PI * omega * 1e3;
    }
    params.n_gates = a.n_gates;
    params.fock_cutoff = a.fock_cutoff;
    params.initial_nbar = a.nbar;
    params.validate()?;
    if !params.is_calibrated() {
        log::warn!("ηΩ differs from ε/4; the evolution will not close at the gate time");
    }
    if a.points < 2 {
        return Err(CliError::invalid("--points must be at least 2"));
    }
    if !(a.alpha.is_finite() && a.alpha >= 0.0) {
        return Err(CliError::invalid("--alpha must be non-negative"));
    }
    let times = params.time_grid(a.points);
    let ideal = propagate_populations_depolarized(&params, &times, 0.0)?;
    let noisy = propagate_populations_depolarized(&params, &times, a.alpha)?;
    let tg = params.gate_time();
    let at_gate = |alpha: f64| -> CliResult<f64> {
        let states = propagate_spin_states(&params, &[tg], alpha)?;
        Ok(fidelity(&states[0], &bell_state().projector()))
    };
    let bytes = match cli.format {
        Format::Json => json_bytes(&PopulationsReport {
            params,
            alpha: a.alpha,
            gate_time_s: tg,
            bell_fidelity_ideal: at_gate(0.0)?,
            bell_fidelity_depolarized: at_gate(a.alpha)?,
            time_s: times,
            ideal: [ideal.p0, ideal.p1, ideal.p2],
            depolarized: [noisy.p0, noisy.p1, noisy.p2],
        })?,
        Format::Csv => {
            let rows: Vec<Vec<f64>> = (0..times.len())
                .map(|k| vec![times[k], ideal.p0[k], ideal.p1[k], ideal.p2[k], noisy.p0[k], noisy.p1[k], noisy.p2[k]])
                .collect();
            csv_bytes(
                &["time_s", "p0_ideal", "p1_ideal", "p2_ideal", "p0_depolarized", "p1_depolarized", "p2_depolarized"],
                &rows,
            )?
        }
    };
    Ok(Output::done(bytes))
}

#[derive(Serialize)]
struct ParityReport {
    state: String,
    p: f64,
    shots: Option<u64>,
    scan: ParityScan,
    populations: [f64; 3],
    bell_fidelity: f64,
}

fn parity_state(a: &ParityArgs, inputs: &mut Inputs) -> CliResult<DensityMatrix> {
    let bell = bell_state().projector();
    match a.state.as_str() {
        "bell" => Ok(bell),
        "depolarized-bell" => Ok(depolarize(&bell, a.p)?),
        "gate" => {
            let params = MSGateParams::default();
            Ok(propagate_spin_states(&params, &[params.gate_time()], a.p)?.remove(0))
        }
        path => {
            let m: MatrixJson = inputs.json(Path::new(path))?;
            Ok(m.to_density()?)
        }
    }
}

fn cmd_parity(cli: &Cli, a: &ParityArgs, inputs: &mut Inputs) -> CliResult<Output> {
    if !(0.0..=1.0).contains(&a.p) {
        return Err(CliError::invalid("--p must lie in [0, 1]"));
    }
    let rho = parity_state(a, inputs)?;
    let phases: Vec<f64> = (0..a.phases).map(|k| 2.0 * PI * k as f64 / a.phases as f64).collect();
    let scan = match a.shots {
        Some(shots) => simulate_parity_scan(&rho, &phases, shots, cli.seed.unwrap_or(0))?,
        None => parity_scan(&rho, &phases)?,
    };
    let (p0, p1, p2) = populations(&rho);
    let bytes = match cli.format {
        Format::Json => json_bytes(&ParityReport {
            state: a.state.clone(),
            p: a.p,
            shots: a.shots,
            bell_fidelity: bell_fidelity(p0, p2, scan.fitted_contrast),
            populations: [p0, p1, p2],
            scan,
        })?,
        Format::Csv => {
            let rows: Vec<Vec<f64>> = scan
                .phases
                .iter()
                .zip(&scan.parity)
                .map(|(&phi, &par)| {
                    let fit = scan.fitted_contrast * (2.0 * phi + scan.fitted_phase).sin() + scan.offset;
                    vec![phi, par, fit]
                })
                .collect();
            csv_bytes(&["phase_rad", "parity", "fit"], &rows)?
        }
    };
    Ok(Output::done(bytes))
}
