//! Command-line experiment runner: data generation, recovery, hardware
//! reports and quantization checks driven by a scenario file.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    generate_dataset, load_csv, save_csv, CsvError, DynError, DynSystem, FnSystem, Lorenz,
    LotkaVolterra, Trajectory,
};
use crate::fxp::{FxError, FxFormat};
use crate::gru::{
    quantized_forward, seq_forward, ActivationTables, FormatConfig, GruError, GruParams, GruState,
};
use crate::hwmodel::{
    design_report, enumerate_mappings, mapping_report, resource_ordering_check, text_table, to_csv,
    CalibrationFixture, HwError, MappingName, PipelineConfig,
};
use crate::recovery::{
    build_library, reconstruction_mse, sindy_fit, train_merinda, truth_coefficients, CoeffVector,
    LibraryDynamics, MerindaModel, RecoveryError, SindyConfig, TermLibrary, TrainConfig, TrainLog,
};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("scenario: {0}")]
    Scenario(String),
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Csv(#[from] CsvError),
    #[error(transparent)]
    Dynamics(#[from] DynError),
    #[error(transparent)]
    Recovery(#[from] RecoveryError),
    #[error(transparent)]
    Gru(#[from] GruError),
    #[error(transparent)]
    Fixed(#[from] FxError),
    #[error(transparent)]
    Hw(#[from] HwError),
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LibrarySpec {
    pub n: usize,
    #[serde(default)]
    pub m: usize,
    pub order: u32,
}

/// One experiment: the system to simulate, how to sample it, and how to
/// recover and evaluate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    /// `lotka_volterra`, `lorenz`, or `library` (polynomial system given by
    /// its full coefficient matrix in `theta_true`).
    pub system: String,
    pub theta_true: Vec<f64>,
    pub x0: Vec<f64>,
    pub dt: f64,
    pub n_samples: usize,
    #[serde(default)]
    pub noise_std: f64,
    pub seed: u64,
    pub library: LibrarySpec,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub sindy: SindyConfig,
    #[serde(default)]
    pub formats: FormatConfig,
    /// Pipeline config for `hwreport`, relative to the scenario file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pipeline: Option<PathBuf>,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let mut sc: Scenario =
            serde_json::from_str(&read(path)?).map_err(|source| CliError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        if let Some(p) = &sc.pipeline {
            let resolved = path.parent().unwrap_or(Path::new(".")).join(p);
            if !resolved.exists() {
                return Err(CliError::Scenario(format!(
                    "pipeline config {} does not exist",
                    resolved.display()
                )));
            }
            sc.pipeline = Some(resolved);
        }
        sc.validate()?;
        Ok(sc)
    }

    pub fn lotka_volterra_default() -> Self {
        Scenario {
            system: "lotka_volterra".into(),
            theta_true: LotkaVolterra::DEFAULT_THETA.to_vec(),
            x0: vec![2.0, 1.0],
            dt: 0.01,
            n_samples: 2000,
            noise_std: 0.0,
            seed: 0,
            library: LibrarySpec {
                n: 2,
                m: 0,
                order: 2,
            },
            train: TrainConfig::default(),
            sindy: SindyConfig::default(),
            formats: FormatConfig::default(),
            pipeline: None,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        let bad = |s: String| Err(CliError::Scenario(s));
        if self.library.n != self.x0.len() {
            return bad(format!(
                "library has {} states but x0 has {}",
                self.library.n,
                self.x0.len()
            ));
        }
        if self.library.m != 0 {
            return bad("scenarios with exogenous inputs are not supported by `generate`".into());
        }
        if !(self.dt > 0.0) || self.n_samples < 2 {
            return bad("need dt > 0 and at least 2 samples".into());
        }
        if !(self.noise_std >= 0.0) {
            return bad("noise_std must be non-negative".into());
        }
        self.formats.validate()?;
        let lib = self.term_library()?;
        match self.system.as_str() {
            "lotka_volterra" | "lorenz" => {
                let sys = builtin(&self.system).expect("known");
                if sys.state_dim() != self.x0.len() || sys.param_dim() != self.theta_true.len() {
                    return bad(format!(
                        "{} needs {} states and {} parameters",
                        self.system,
                        sys.state_dim(),
                        sys.param_dim()
                    ));
                }
            }
            "library" => {
                if self.theta_true.len() != lib.state_dim() * lib.len() {
                    return bad(format!(
                        "library system needs {} coefficients",
                        lib.state_dim() * lib.len()
                    ));
                }
            }
            other => return bad(format!("unknown system {other:?}")),
        }
        Ok(())
    }

    pub fn term_library(&self) -> Result<TermLibrary, CliError> {
        Ok(build_library(
            self.library.n,
            self.library.m,
            self.library.order,
        )?)
    }

    /// Ground truth expressed in the scenario library, when it fits.
    pub fn truth(&self) -> Result<Option<CoeffVector>, CliError> {
        let lib = self.term_library()?;
        Ok(match self.system.as_str() {
            "library" => Some(CoeffVector::from_dense(
                lib.state_dim(),
                lib.len(),
                self.theta_true.clone(),
            )?),
            name => truth_coefficients(name, &self.theta_true, &lib),
        })
    }

    /// Samples the scenario's system; noise comes from the scenario seed.
    pub fn simulate(&self) -> Result<Trajectory, CliError> {
        self.simulate_from(&self.x0, self.n_samples)
    }

    fn simulate_from(&self, x0: &[f64], len: usize) -> Result<Trajectory, CliError> {
        let traj = match builtin(&self.system) {
            Some(sys) => generate_dataset(
                sys.as_ref(),
                x0,
                &self.theta_true,
                self.dt,
                len,
                self.noise_std,
                self.seed,
            )?,
            None => {
                let lib = self.term_library()?;
                let dynamics = LibraryDynamics::new(&lib);
                let sys = FnSystem::new(
                    "library",
                    lib.state_dim(),
                    0,
                    self.theta_true.len(),
                    |x, u, th, out| dynamics.rhs(x, u, th, out),
                );
                generate_dataset(
                    &sys,
                    x0,
                    &self.theta_true,
                    self.dt,
                    len,
                    self.noise_std,
                    self.seed,
                )?
            }
        };
        Ok(traj)
    }
}

fn builtin(name: &str) -> Option<Box<dyn DynSystem>> {
    match name {
        "lotka_volterra" => Some(Box::new(LotkaVolterra)),
        "lorenz" => Some(Box::new(Lorenz)),
        _ => None,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "merinda",
    version,
    about = "Sparse model recovery experiments with a GRU-based estimator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Scenario JSON file.
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    Merinda,
    Sindy,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Merinda => "merinda",
            Method::Sindy => "sindy",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate the scenario and write `trajectory.csv` plus a provenance sidecar.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Recover sparse coefficients and write `report_<method>.json`.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        method: Method,
        /// Trajectory CSV; the scenario is simulated when omitted.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Overrides the scenario's epoch count.
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Interval, throughput and energy tables for pipeline designs.
    Hwreport {
        /// `designs`, `mappings`, or a fixture JSON path.
        #[arg(long, default_value = "designs")]
        fixture: String,
        /// Pipeline config JSON; reported on its own, or used as the
        /// template for `mappings`.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Format printed to stdout; both are written to `--out`.
        #[arg(long, value_enum, default_value = "table")]
        format: ReportFormat,
    },
    /// Compare float and fixed-point GRU hidden states on a held-out window.
    QuantizeEval {
        #[command(flatten)]
        common: Common,
        /// Model or GRU checkpoint JSON.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Uniform datapath format such as `Q8.23/32`; overrides the scenario formats.
        #[arg(long)]
        format: Option<FxFormat>,
    },
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run(cmd: Command) -> Result<(), CliError> {
    match cmd {
        Command::Generate { common } => cmd_generate(&common),
        Command::Recover {
            common,
            method,
            data,
            epochs,
        } => cmd_recover(&common, method, data.as_deref(), epochs),
        Command::Hwreport {
            fixture,
            config,
            out,
            format,
        } => cmd_hwreport(&fixture, config.as_deref(), &out, format),
        Command::QuantizeEval {
            common,
            checkpoint,
            format,
        } => cmd_quantize_eval(&common, &checkpoint, format),
    }
}

fn load_scenario(common: &Common) -> Result<Scenario, CliError> {
    let mut sc = Scenario::load(&common.scenario)?;
    if let Some(seed) = common.seed {
        sc.seed = seed;
    }
    sc.train.seed = sc.seed;
    Ok(sc)
}

#[derive(Serialize)]
struct Provenance<'a> {
    tool: &'static str,
    version: &'static str,
    generated_unix_s: u64,
    scenario_path: String,
    seed: u64,
    rows: usize,
    scenario: &'a Scenario,
}

pub fn cmd_generate(common: &Common) -> Result<(), CliError> {
    let sc = load_scenario(common)?;
    let traj = sc.simulate()?;
    ensure_dir(&common.out)?;
    let csv_path = common.out.join("trajectory.csv");
    save_csv(&traj, &csv_path)?;
    let prov = Provenance {
        tool: "merinda",
        version: env!("CARGO_PKG_VERSION"),
        generated_unix_s: std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
        scenario_path: common.scenario.display().to_string(),
        seed: sc.seed,
        rows: traj.len(),
        scenario: &sc,
    };
    let json = serde_json::to_string_pretty(&prov).expect("provenance serializes");
    write(&common.out.join("trajectory.provenance.json"), &json)?;
    eprintln!("wrote {} ({} rows)", csv_path.display(), traj.len());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibraryReport {
    pub n: usize,
    pub m: usize,
    pub order: u32,
    pub terms: Vec<String>,
}

/// Result of one recovery run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub method: String,
    pub system: String,
    pub seed: u64,
    pub library: LibraryReport,
    /// `n × p`, one row per state equation.
    pub coefficients: Vec<Vec<f64>>,
    pub support: Vec<Vec<bool>>,
    pub true_coefficients: Option<Vec<Vec<f64>>>,
    pub coefficient_mse: Option<f64>,
    pub support_match: Option<bool>,
    /// Mean windowed ODE loss of the sparse estimate.
    pub reconstruction_mse: f64,
    /// The same loss for the all-zero coefficient matrix.
    pub baseline_reconstruction_mse: f64,
    pub reconstruction_window: usize,
    pub derivative_mse: Option<f64>,
    pub training: Option<TrainLog>,
    pub warnings: Vec<String>,
    pub config: serde_json::Value,
}

fn rows_of(c: &CoeffVector) -> Vec<Vec<f64>> {
    (0..c.state_dim()).map(|i| c.row(i).to_vec()).collect()
}

pub fn cmd_recover(
    common: &Common,
    method: Method,
    data: Option<&Path>,
    epochs: Option<usize>,
) -> Result<(), CliError> {
    let mut sc = load_scenario(common)?;
    if let Some(e) = epochs {
        sc.train.epochs = e;
    }
    let traj = match data {
        Some(p) => load_csv(p)?,
        None => sc.simulate()?,
    };
    let lib = sc.term_library()?;
    ensure_dir(&common.out)?;
    let k = sc.train.window;

    let (coeffs, derivative_mse, training, warnings, config) = match method {
        Method::Sindy => {
            let fit = sindy_fit(&traj, &lib, &sc.sindy)?;
            let cfg = serde_json::to_value(sc.sindy).expect("config serializes");
            (
                fit.coeffs,
                Some(fit.derivative_mse),
                None,
                fit.warnings,
                cfg,
            )
        }
        Method::Merinda => {
            let out = train_merinda(&traj, &lib, &sc.train)?;
            eprintln!(
                "initial loss {:.6e}, final loss {:.6e}",
                out.log.initial_loss,
                out.log.final_loss()
            );
            write(&common.out.join("model.json"), &out.model.to_json())?;
            let cfg = serde_json::to_value(&sc.train).expect("config serializes");
            (out.coeffs, None, Some(out.log), Vec::new(), cfg)
        }
    };
    let truth = sc.truth()?;
    let zero = vec![0.0; coeffs.values().len()];
    let report = RecoveryReport {
        method: method.name().into(),
        system: sc.system.clone(),
        seed: sc.seed,
        library: LibraryReport {
            n: lib.state_dim(),
            m: lib.input_dim(),
            order: lib.order(),
            terms: lib.term_names(),
        },
        coefficients: rows_of(&coeffs),
        support: (0..coeffs.state_dim())
            .map(|i| {
                coeffs.support()[i * coeffs.num_terms()..(i + 1) * coeffs.num_terms()].to_vec()
            })
            .collect(),
        true_coefficients: truth.as_ref().map(rows_of),
        coefficient_mse: truth.as_ref().map(|t| coeffs.mse(t)),
        support_match: truth.as_ref().map(|t| t.support() == coeffs.support()),
        reconstruction_mse: reconstruction_mse(coeffs.values(), &traj, &lib, k)?,
        baseline_reconstruction_mse: reconstruction_mse(&zero, &traj, &lib, k)?,
        reconstruction_window: k,
        derivative_mse,
        training,
        warnings,
        config,
    };
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let path = common.out.join(format!("report_{}.json", method.name()));
    write(
        &path,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn fmt_f(v: f64) -> String {
    if v.abs() >= 1e4 || (v != 0.0 && v.abs() < 1e-3) {
        format!("{v:.4e}")
    } else {
        format!("{v:.4}")
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn cmd_hwreport(
    fixture: &str,
    config: Option<&Path>,
    out: &Path,
    format: ReportFormat,
) -> Result<(), CliError> {
    let load_cfg = |p: &Path| PipelineConfig::from_json(&read(p)?).map_err(CliError::from);
    let fx = match fixture {
        "designs" => CalibrationFixture::design_comparison(),
        "mappings" => CalibrationFixture::mapping_sweep(),
        path => CalibrationFixture::from_json(&read(Path::new(path))?)?,
    };
    let is_sweep = fx
        .rows
        .iter()
        .all(|r| r.name.parse::<MappingName>().is_ok());

    let (csv, table) = if let (Some(p), "designs") = (config, fixture) {
        // A lone config is reported against its own modeled interval.
        let cfg = load_cfg(p)?;
        let rows = mapping_report(std::slice::from_ref(&cfg), &fx);
        let table_rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.config.clone(),
                    r.modeled_interval.to_string(),
                    fmt_f(r.throughput_per_s),
                ]
            })
            .collect::<Vec<_>>();
        (
            to_csv(&rows)?,
            text_table(&["config", "interval", "throughput/s"], &table_rows),
        )
    } else if is_sweep {
        let template = match config {
            Some(p) => load_cfg(p)?,
            None => PipelineConfig::reference_template(),
        };
        let rows = mapping_report(&enumerate_mappings(&template)?, &fx);
        let table_rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.config.clone(),
                    r.modeled_interval.to_string(),
                    opt(r.cycles),
                    opt(r.lut),
                    opt(r.ff),
                    opt(r.dsp),
                    opt(r.bram),
                ]
            })
            .collect::<Vec<_>>();
        let mut table = text_table(
            &["config", "interval", "cycles", "LUT", "FF", "DSP", "BRAM"],
            &table_rows,
        );
        if fx.rows.len() == 16 {
            let rep = resource_ordering_check(&fx)?;
            table.push_str(&format!(
                "\nBRAM constant: {}\nmin cycles: {} at {}\nhighlighted row is the minimum: {}\nDSP non-increasing under D->L flips: {} ({} of {} flips increase DSP)\n",
                rep.bram_constant(),
                rep.min_cycles,
                rep.min_cycle_configs.join(", "),
                rep.highlighted_is_min(),
                rep.dsp_monotone(),
                rep.dsp_violations.len(),
                rep.flips_checked
            ));
            for v in &rep.dsp_violations {
                table.push_str(&format!(
                    "  {} -> {}: DSP {} -> {}\n",
                    v.from, v.to, v.dsp_from, v.dsp_to
                ));
            }
        }
        (to_csv(&rows)?, table)
    } else {
        let rows = design_report(&fx)?;
        let table_rows = rows
            .iter()
            .map(|r| {
                vec![
                    r.design.clone(),
                    r.interval.to_string(),
                    format!("{:.3}", r.power_w),
                    fmt_f(r.throughput_per_s),
                    format!("{:.3}", r.speedup_vs_previous),
                    format!("{:.3}", r.speedup_vs_reference),
                    format!("{:.6}", r.energy_vs_reference),
                ]
            })
            .collect::<Vec<_>>();
        let header = [
            "design",
            "interval",
            "power_w",
            "throughput/s",
            "vs_prev",
            "vs_ref",
            "energy_vs_ref",
        ];
        (to_csv(&rows)?, text_table(&header, &table_rows))
    };

    ensure_dir(out)?;
    write(&out.join("hwreport.csv"), &csv)?;
    write(&out.join("hwreport.txt"), &table)?;
    match format {
        ReportFormat::Table => print!("{table}"),
        ReportFormat::Csv => print!("{csv}"),
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizeReport {
    pub formats: FormatConfig,
    pub hidden_dim: usize,
    pub window: usize,
    pub held_out_x0: Vec<f64>,
    pub max_abs_deviation: f64,
    pub mean_abs_deviation: f64,
    pub rms_deviation: f64,
}

/// Accepts a full model checkpoint or a bare GRU checkpoint.
fn load_gru(path: &Path) -> Result<GruParams, CliError> {
    let text = read(path)?;
    match MerindaModel::from_json(&text) {
        Ok(m) => Ok(m.gru),
        Err(_) => Ok(GruParams::from_checkpoint_json(&text)?),
    }
}

pub fn cmd_quantize_eval(
    common: &Common,
    checkpoint: &Path,
    format: Option<FxFormat>,
) -> Result<(), CliError> {
    let gru = load_gru(checkpoint)?;
    let sc = load_scenario(common)?;
    let fmts = match format {
        Some(f) => FormatConfig::uniform(f),
        None => sc.formats,
    };
    fmts.validate()?;
    if gru.input_dim() != sc.library.n + sc.library.m {
        return Err(CliError::Scenario(format!(
            "checkpoint expects {} input features, scenario provides {}",
            gru.input_dim(),
            sc.library.n + sc.library.m
        )));
    }
    // Held-out window: a fresh initial condition near the scenario's.
    let mut rng = stream_rng(sc.seed, Stream::HeldOut);
    let x0: Vec<f64> = sc
        .x0
        .iter()
        .map(|v| v * (1.0 + rng.gen_range(-0.2..0.2)))
        .collect();
    let window = sc.train.window.max(2);
    let traj = sc.simulate_from(&x0, window)?;
    let xs: Vec<Vec<f64>> = (0..traj.len())
        .map(|i| [traj.y_row(i), traj.u_row(i)].concat())
        .collect();
    let h0 = GruState::zeros(gru.hidden_dim());
    let (float, _) = seq_forward(&gru, &h0, &xs)?;
    let tables = ActivationTables::standard(fmts.activation);
    let quant = quantized_forward(&gru, &h0, &xs, &fmts, &tables)?;
    let devs: Vec<f64> = float
        .iter()
        .flatten()
        .zip(quant.iter().flatten())
        .map(|(a, b)| (a - b.to_f64()).abs())
        .collect();
    let count = devs.len() as f64;
    let report = QuantizeReport {
        formats: fmts,
        hidden_dim: gru.hidden_dim(),
        window,
        held_out_x0: x0,
        max_abs_deviation: devs.iter().copied().fold(0.0, f64::max),
        mean_abs_deviation: devs.iter().sum::<f64>() / count,
        rms_deviation: (devs.iter().map(|d| d * d).sum::<f64>() / count).sqrt(),
    };
    ensure_dir(&common.out)?;
    let name = format!(
        "quantize_eval_w{}_f{}.json",
        fmts.activation.total_bits(),
        fmts.activation.frac_bits()
    );
    let path = common.out.join(name);
    write(
        &path,
        &serde_json::to_string_pretty(&report).expect("report serializes"),
    )?;
    eprintln!(
        "max deviation {:.3e}, mean {:.3e} ({} activations); wrote {}",
        report.max_abs_deviation,
        report.mean_abs_deviation,
        fmts.activation,
        path.display()
    );
    Ok(())
}
