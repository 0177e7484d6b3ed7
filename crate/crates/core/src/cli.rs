//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical failure
//! or flagged result. Diagnostics go to stderr prefixed `error:` or `warn:`.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, Write};
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::Serialize;

use crate::classify::{classify_all, AttackVerdict, Classification, Verdict};
use crate::config::{locate_config, parse_raw, resolve, ConfigDocument, RawConfig};
use crate::error::{Error, Result};
use crate::estimator::{joint_identify_estimate, QuantizedDataset, RoundedEstimate};
use crate::fisher::{build_fim_bundle, crb, CrbReport};
use crate::harness::{run_experiment, ExperimentResult};
use crate::linalg::{fmt17, format_matrix};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Human,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "quantspoof", version, about = "Spoofing-attack analysis for quantized distributed estimation")]
struct Cli {
    /// Report format.
    #[arg(long, value_enum, default_value = "human", global = true)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Source {
    /// TOML config file. Relative paths are also searched in $QUANTSPOOF_CONFIG_PATH.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Use a built-in preset instead of a config file.
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// Scenario override KEY=VALUE (K, N, attacked, noise_variance, seed, D_p, R).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Solver option KEY=VALUE.
    #[arg(long = "solver", value_name = "KEY=VALUE")]
    solver: Vec<String>,
    /// Classifier option KEY=VALUE.
    #[arg(long = "classifier", value_name = "KEY=VALUE")]
    classifier: Vec<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Classify every attack group as ISA, OESA or estimable-non-optimal.
    Classify {
        #[command(flatten)]
        source: Source,
    },
    /// Cramer-Rao bounds at the true parameter point.
    Crb {
        #[command(flatten)]
        source: Source,
        /// Evaluate at this many rounds instead of the configured observation counts.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Joint attack identification and estimation from a dataset file.
    Estimate {
        #[command(flatten)]
        source: Source,
        /// CSV with header `sensor,k,level`, 1-based sensors and levels.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo experiment over a K grid, written as CSV.
    Simulate {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated rounds per sensor, e.g. 250,500,1000.
        #[arg(long, value_delimiter = ',')]
        k_grid: Option<Vec<usize>>,
        /// Record wall-clock times in the CSV (breaks byte reproducibility).
        #[arg(long)]
        timing: bool,
    },
    /// Check a config document without running anything.
    Validate {
        #[command(flatten)]
        source: Source,
    },
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Singular(_)
        | Error::InsufficientUnattackedData(_)
        | Error::NonFinite(_)
        | Error::DegenerateDerivatives(_)
        | Error::Infeasible(_)
        | Error::ShiftFormMismatch { .. } => EXIT_NUMERIC,
        _ => EXIT_CONFIG,
    }
}

fn split_pairs(items: &[String], what: &str) -> Result<Vec<(String, String)>> {
    items
        .iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::Config(format!("--{what} expects KEY=VALUE, got `{s}`")))
        })
        .collect()
}

fn load(source: &Source, extra_solver: &[(String, String)]) -> Result<ConfigDocument> {
    let (mut raw, origin) = match (&source.preset, &source.config) {
        (Some(p), _) => (RawConfig { preset: Some(p.clone()), ..RawConfig::default() }, None),
        (None, given) => {
            let path = locate_config(given.as_deref())?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            (parse_raw(&text).map_err(|e| located(e, &path))?, Some(path))
        }
    };
    for (k, v) in split_pairs(&source.classifier, "classifier")? {
        raw.classifier.insert(k, crate::config::parse_toml_value(&v));
    }
    let mut solver = split_pairs(&source.solver, "solver")?;
    solver.extend_from_slice(extra_solver);
    let sets = split_pairs(&source.sets, "set")?;
    resolve(raw, &sets, &solver).map_err(|e| match &origin {
        Some(path) => located(e, path),
        None => e,
    })
}

fn located(e: Error, path: &std::path::Path) -> Error {
    match e {
        Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
        other => other,
    }
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|r| m.row(r).iter().copied().collect()).collect()
}

fn list(v: &[f64]) -> String {
    v.iter().map(|x| fmt17(*x)).collect::<Vec<_>>().join(" ")
}

fn json<T: Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).unwrap_or_else(|e| format!("{{\"error\": \"{e}\"}}"))
}

fn verdict_line(v: &AttackVerdict) -> String {
    match v.verdict {
        Verdict::Isa if v.dimension_check => {
            format!("group {}: ISA (dimension bound {} < D_p {})", v.group, v.dimension_bound, v.attack_dim)
        }
        Verdict::Isa => format!("group {}: ISA (rank J_tau {} < D_p {})", v.group, v.rank_j_tau, v.attack_dim),
        other => format!("group {}: {}", v.group, other.label()),
    }
}

fn human_classification(c: &Classification) -> String {
    let mut s = String::new();
    for v in &c.groups {
        s.push_str(&verdict_line(v));
        s.push('\n');
        s.push_str(&format!("  attack_dim: {}\n", v.attack_dim));
        s.push_str(&format!("  dimension_bound: {}\n", v.dimension_bound));
        s.push_str(&format!("  rank_j_tau: {}\n", v.rank_j_tau));
        s.push_str(&format!("  singular_values_tau: {}\n", list(&v.singular_values_tau)));
        s.push_str(&format!("  inclusion_residual: {}\n", fmt17(v.inclusion_residual)));
        if let Some(r) = v.information_loss_relative {
            s.push_str(&format!("  information_loss_relative: {}\n", fmt17(r)));
        }
        if !v.information_loss_agrees {
            s.push_str("  information_loss_agrees: no\n");
        }
        if let Some(scale) = v.shift_scale {
            s.push_str(&format!("  shift_scale: {}\n", fmt17(scale)));
        }
        if v.point_independent {
            s.push_str("  point-independent OESA\n");
        }
    }
    s.push_str(&format!("OGDSA: {}\n", if c.is_ogdsa { "yes" } else { "no" }));
    s
}

#[derive(Serialize)]
struct CrbJson {
    k: Option<usize>,
    crb_unattacked_trace: f64,
    crb_esa_trace: Option<f64>,
    crb_alldata_trace: Option<f64>,
    condition_unattacked: f64,
    condition_joint: Option<f64>,
    ill_conditioned: bool,
    crb_unattacked: Vec<Vec<f64>>,
    crb_esa: Option<Vec<Vec<f64>>>,
    crb_alldata_known_attacks: Option<Vec<Vec<f64>>>,
}

fn crb_json(k: Option<usize>, r: &CrbReport) -> CrbJson {
    CrbJson {
        k,
        crb_unattacked_trace: r.crb_unattacked.trace(),
        crb_esa_trace: r.crb_esa.as_ref().map(|m| m.trace()),
        crb_alldata_trace: r.crb_alldata_known_attacks.as_ref().map(|m| m.trace()),
        condition_unattacked: r.condition_unattacked,
        condition_joint: r.condition_joint,
        ill_conditioned: r.ill_conditioned,
        crb_unattacked: rows(&r.crb_unattacked),
        crb_esa: r.crb_esa.as_ref().map(rows),
        crb_alldata_known_attacks: r.crb_alldata_known_attacks.as_ref().map(rows),
    }
}

fn human_crb(k: Option<usize>, r: &CrbReport) -> String {
    let mut s = String::new();
    if let Some(k) = k {
        s.push_str(&format!("K: {k}\n"));
    }
    let opt = |m: &Option<DMatrix<f64>>| m.as_ref().map_or("singular".to_string(), |m| fmt17(m.trace()));
    s.push_str(&format!("crb_unattacked_trace: {}\n", fmt17(r.crb_unattacked.trace())));
    s.push_str(&format!("crb_esa_trace: {}\n", opt(&r.crb_esa)));
    s.push_str(&format!("crb_alldata_trace: {}\n", opt(&r.crb_alldata_known_attacks)));
    s.push_str(&format!("condition_unattacked: {}\n", fmt17(r.condition_unattacked)));
    if let Some(c) = r.condition_joint {
        s.push_str(&format!("condition_joint: {}\n", fmt17(c)));
    }
    s.push_str("crb_unattacked:\n");
    s.push_str(&format_matrix(&r.crb_unattacked));
    if let Some(m) = &r.crb_esa {
        s.push_str("crb_esa:\n");
        s.push_str(&format_matrix(m));
    }
    if let Some(m) = &r.crb_alldata_known_attacks {
        s.push_str("crb_alldata_known_attacks:\n");
        s.push_str(&format_matrix(m));
    }
    s
}

#[derive(Serialize)]
struct EstimateJson<'a> {
    attacked: Vec<usize>,
    theta: &'a [f64],
    xi: &'a [Vec<f64>],
    pi: &'a [f64],
    selected: usize,
    candidates: Vec<Vec<usize>>,
    candidate_objectives: &'a [Option<f64>],
    relaxed_objective: f64,
    relaxed_trace: &'a [f64],
    restart: usize,
    flags: &'a [String],
}

fn one_based(eta: &[bool]) -> Vec<usize> {
    eta.iter().enumerate().filter(|(_, &a)| a).map(|(j, _)| j + 1).collect()
}

fn estimate_json(e: &RoundedEstimate) -> EstimateJson<'_> {
    EstimateJson {
        attacked: one_based(&e.eta),
        theta: &e.params.theta,
        xi: &e.params.xi,
        pi: &e.relaxed.pi,
        selected: e.selected + 1,
        candidates: e.candidates.iter().map(|c| one_based(c)).collect(),
        candidate_objectives: &e.candidate_objectives,
        relaxed_objective: e.relaxed.objective,
        relaxed_trace: &e.relaxed.trace,
        restart: e.relaxed.restart + 1,
        flags: &e.flags,
    }
}

fn human_estimate(e: &RoundedEstimate) -> String {
    let idx = |v: Vec<usize>| v.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(" ");
    let mut s = String::new();
    s.push_str(&format!("attacked: [{}]\n", idx(one_based(&e.eta))));
    s.push_str(&format!("theta: {}\n", list(&e.params.theta)));
    for (j, xi) in e.params.xi.iter().enumerate().filter(|(j, _)| e.eta[*j]) {
        s.push_str(&format!("xi[{}]: {}\n", j + 1, list(xi)));
    }
    s.push_str(&format!("pi: {}\n", list(&e.relaxed.pi)));
    for (c, (cand, obj)) in e.candidates.iter().zip(&e.candidate_objectives).enumerate() {
        let mark = if c == e.selected { " *" } else { "" };
        let obj = obj.map_or("infeasible".to_string(), fmt17);
        s.push_str(&format!("candidate {}: [{}] loglik {obj}{mark}\n", c + 1, idx(one_based(cand))));
    }
    s.push_str(&format!("relaxed_objective: {}\n", fmt17(e.relaxed.objective)));
    s.push_str(&format!("relaxed_trace: {}\n", list(&e.relaxed.trace)));
    s.push_str(&format!("restart: {}\n", e.relaxed.restart + 1));
    s
}

fn human_simulation(r: &ExperimentResult) -> String {
    let mut s = String::new();
    for row in &r.rows {
        s.push_str(&format!(
            "K {}: misclass_frac {} mse {} crb_unattacked_trace {} failures {}\n",
            row.k,
            fmt17(row.misclass_frac),
            list(&row.mse),
            fmt17(row.crb_unattacked_trace),
            row.failures
        ));
    }
    s
}

struct Outcome {
    report: String,
    warnings: Vec<String>,
    numeric_failure: bool,
}

impl Outcome {
    fn ok(report: String) -> Self {
        Outcome { report, warnings: Vec::new(), numeric_failure: false }
    }
}

fn dispatch(cli: Cli, out: &mut dyn Write) -> Result<Outcome> {
    let fmt = cli.format;
    match cli.command {
        Command::Validate { source } => {
            let doc = load(&source, &[])?;
            let m = &doc.scenario.model;
            let report = match fmt {
                Format::Human => format!(
                    "ok: {} sensors, {} groups, theta dimension {}\n",
                    m.n_sensors(),
                    m.n_groups(),
                    m.theta_dim()
                ),
                Format::Json => json(&serde_json::json!({
                    "valid": true,
                    "sensors": m.n_sensors(),
                    "groups": m.n_groups(),
                    "theta_dim": m.theta_dim(),
                    "solver": doc.solver,
                    "classifier": doc.classifier,
                    "experiment": doc.experiment,
                })),
            };
            Ok(Outcome::ok(report))
        }
        Command::Classify { source } => {
            let doc = load(&source, &[])?;
            let c = classify_all(&doc.scenario.model, &doc.scenario.truth, &doc.classifier)?;
            let mut o = Outcome::ok(match fmt {
                Format::Human => human_classification(&c),
                Format::Json => json(&c),
            });
            for v in c.groups.iter().filter(|v| !v.information_loss_agrees) {
                o.warnings.push(format!("group {}: range-inclusion and information-loss verdicts disagree", v.group));
            }
            Ok(o)
        }
        Command::Crb { source, k } => {
            let doc = load(&source, &[])?;
            let sc = match k {
                Some(k) => doc.scenario.with_rounds(k)?,
                None => doc.scenario,
            };
            let r = crb(&build_fim_bundle(&sc.model, &sc.truth)?)?;
            let mut o = Outcome::ok(match fmt {
                Format::Human => human_crb(k, &r),
                Format::Json => json(&crb_json(k, &r)),
            });
            if r.ill_conditioned {
                o.warnings.push("information matrix is ill-conditioned".into());
                o.numeric_failure = true;
            }
            Ok(o)
        }
        Command::Estimate { source, data, seed } => {
            let extra: Vec<(String, String)> = seed.map(|s| ("seed".to_string(), s.to_string())).into_iter().collect();
            let doc = load(&source, &extra)?;
            let file = File::open(&data).map_err(|e| Error::Io(format!("{}: {e}", data.display())))?;
            let dataset = QuantizedDataset::read_csv(BufReader::new(file), doc.scenario.model.n_sensors())?;
            let est = joint_identify_estimate(&doc.scenario.model, &dataset, &doc.solver)?;
            let mut o = Outcome::ok(match fmt {
                Format::Human => human_estimate(&est),
                Format::Json => json(&estimate_json(&est)),
            });
            o.numeric_failure = est.is_flagged();
            o.warnings.extend(est.flags.iter().cloned());
            Ok(o)
        }
        Command::Simulate { source, trials, seed, out: out_path, k_grid, timing } => {
            let doc = load(&source, &[])?;
            let exp = doc.experiment.clone();
            let k_grid = k_grid
                .or_else(|| exp.as_ref().map(|e| e.k_grid.clone()).filter(|g| !g.is_empty()))
                .ok_or_else(|| Error::Config("simulate needs --k-grid or experiment.k_grid".into()))?;
            let trials = trials.or(exp.as_ref().map(|e| e.trials)).unwrap_or(100);
            let seed = seed.or(exp.as_ref().map(|e| e.seed)).unwrap_or(0);
            let out_path = out_path.or(exp.and_then(|e| e.out));
            let result = run_experiment(&doc.scenario, &k_grid, trials, seed, &doc.solver)?;
            let csv = result.to_csv(timing);
            let report = match &out_path {
                Some(path) => {
                    std::fs::write(path, &csv).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
                    match fmt {
                        Format::Human => human_simulation(&result),
                        Format::Json => json(&result),
                    }
                }
                None => {
                    out.write_all(csv.as_bytes()).map_err(Error::from)?;
                    String::new()
                }
            };
            let failures: usize = result.rows.iter().map(|r| r.failures).sum();
            let mut o = Outcome::ok(report);
            if failures > 0 {
                o.warnings.push(format!("{failures} trials failed or were flagged"));
                o.numeric_failure = true;
            }
            Ok(o)
        }
    }
}

/// Run with explicit arguments (including the program name) and streams.
pub fn run_command_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                EXIT_CONFIG
            } else {
                let _ = write!(out, "{text}");
                EXIT_OK
            };
        }
    };
    match dispatch(cli, out) {
        Ok(o) => {
            let _ = write!(out, "{}", o.report);
            if !o.report.is_empty() && !o.report.ends_with('\n') {
                let _ = writeln!(out);
            }
            for w in &o.warnings {
                let _ = writeln!(err, "warn: {w}");
            }
            if o.numeric_failure {
                EXIT_NUMERIC
            } else {
                EXIT_OK
            }
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_command_with(argv, &mut stdout.lock(), &mut stderr.lock())
}
