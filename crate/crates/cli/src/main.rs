//! `treecast`: batch front end for the hardcore broadcast model on k-ary trees.

mod output;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;
use treecast_core::atoms::DEFAULT_ATOM_CAP;
use treecast_core::export::{write_atoms_csv, write_bound_csv, write_decay_csv};
use treecast_core::popdyn::{linear_grid, DEFAULT_EPS_REC, DEFAULT_POP};
use treecast_core::tree::sample_broadcast_many;
use treecast_core::{
    atom_recursion_with_cap, bounds_report, contraction_crossing, contraction_iterate, level_bound,
    magnetization_of, omega_bar, root_posterior, run_decay, scan_threshold, t3_estimates,
    AtomDistribution, BoundsReport, Configuration, DecayBoundTrace, DecaySettings, DecayTrace,
    MagnetizationMoments, ModelParams, PosteriorMode, RootCondition, ScanResult, T3Estimate,
    T3Method, TreeShape, BETA_STAR,
};

use crate::verify::{run_verify, VerifySettings};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] treecast_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("argument error: {0}")]
    Usage(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use treecast_core::Error as E;
        match self {
            CliError::Usage(_)
            | CliError::Core(E::Parameter(_) | E::Domain(_) | E::Conditioning(_)) => 2,
            _ => 1,
        }
    }
}

fn parse_seed(s: &str) -> Result<u64, String> {
    let parsed = match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u64::from_str_radix(hex, 16),
        None => s.parse(),
    };
    parsed.map_err(|e| format!("invalid seed {s:?}: {e}"))
}

#[derive(Debug, Parser)]
#[command(
    name = "treecast",
    version,
    about = "Hardcore broadcast model on k-ary trees"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Mode {
    Exact,
    Paper,
}

impl From<Mode> for PosteriorMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => PosteriorMode::Exact,
            Mode::Paper => PosteriorMode::Paper,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Root {
    Free,
    Zero,
    One,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Atoms,
    Popdyn,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Fugacity {
    /// Leaf fugacity ω
    #[arg(long)]
    omega: Option<f64>,
    /// Internal-vertex fugacity λ = ω(1+ω)^k
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
#[group(required = false, multiple = false)]
struct OptionalFugacity {
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct Model {
    /// Branching factor
    #[arg(long)]
    k: usize,
    #[command(flatten)]
    fugacity: Fugacity,
}

impl Model {
    fn params(&self) -> Result<ModelParams, CliError> {
        resolve(self.k, self.fugacity.omega, self.fugacity.lambda)?
            .ok_or_else(|| CliError::Usage("one of --omega or --lambda is required".into()))
    }
}

fn resolve(
    k: usize,
    omega: Option<f64>,
    lambda: Option<f64>,
) -> Result<Option<ModelParams>, CliError> {
    Ok(match (omega, lambda) {
        (Some(w), _) => Some(ModelParams::derive_from_omega(k, w)?),
        (None, Some(l)) => Some(ModelParams::derive_from_lambda(k, l)?),
        (None, None) => None,
    })
}

#[derive(Debug, Args)]
struct Run {
    /// Master seed, decimal or 0x-prefixed hex
    #[arg(long, default_value = "0xC0FFEE", value_parser = parse_seed)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Debug, Args)]
struct Output {
    /// Output file; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Derived model parameters
    Params {
        #[command(flatten)]
        model: Model,
        #[command(flatten)]
        output: Output,
    },
    /// Closed-form thresholds, contraction factor and its bound iteration
    Bounds {
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = BETA_STAR)]
        beta: f64,
        /// Evaluate at this ω instead of ω̄(k)
        #[arg(long)]
        omega: Option<f64>,
        /// Levels of the bound iteration to report
        #[arg(long, default_value_t = 0)]
        iterate: usize,
        /// Starting X̄ of the iteration; ω/2 by default
        #[arg(long)]
        xbar_seed: Option<f64>,
        /// Also search k in [16, K] for the contraction crossing
        #[arg(long)]
        crossing_max: Option<usize>,
        #[command(flatten)]
        output: Output,
    },
    /// Sample configurations of the broadcast process
    Broadcast {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, value_enum, default_value_t = Root::Free)]
        root: Root,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
    /// Root posterior of one leaf pattern, or its depth-3 expectation
    Posterior {
        #[arg(long)]
        k: usize,
        #[command(flatten)]
        fugacity: OptionalFugacity,
        /// Used for ω̄(k) when --t3 is given without a fugacity
        #[arg(long, default_value_t = BETA_STAR)]
        beta: f64,
        #[arg(long, required_unless_present = "t3")]
        depth: Option<usize>,
        /// Leaf states in breadth-first order, e.g. 0110
        #[arg(long, required_unless_present = "t3", conflicts_with = "t3")]
        leaves: Option<String>,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        /// Expected root-1 posterior given root 1 on the depth-3 tree
        #[arg(long)]
        t3: bool,
        #[arg(long, value_enum, default_value_t = Method::Atoms)]
        method: Method,
        #[arg(long, default_value_t = DEFAULT_POP)]
        pop: usize,
        #[arg(long, default_value_t = DEFAULT_ATOM_CAP)]
        cap: usize,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
    /// Exact atom laws of the root posterior and magnetization
    Atoms {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        depth: usize,
        #[arg(long, value_enum, default_value_t = Mode::Exact)]
        mode: Mode,
        #[arg(long, default_value_t = DEFAULT_ATOM_CAP)]
        cap: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Exact magnetization moments at every depth
    Moments {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_ATOM_CAP)]
        cap: usize,
        #[command(flatten)]
        output: Output,
    },
    /// Population-dynamics decay of X̄ with depth
    Decay {
        #[command(flatten)]
        model: Model,
        #[arg(long, default_value_t = 30)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_POP)]
        pop: usize,
        #[arg(long, default_value_t = DEFAULT_EPS_REC)]
        eps_rec: f64,
        /// Skip the per-level mean recalibration
        #[arg(long)]
        no_recalibrate: bool,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
    /// Decay verdicts over a linear λ grid
    Scan {
        #[arg(long)]
        k: usize,
        #[arg(long)]
        lambda_min: f64,
        #[arg(long)]
        lambda_max: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 30)]
        depth: usize,
        #[arg(long, default_value_t = DEFAULT_POP)]
        pop: usize,
        #[arg(long, default_value_t = DEFAULT_EPS_REC)]
        eps_rec: f64,
        #[arg(long)]
        no_recalibrate: bool,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
    /// Run the consistency suite; exits 1 if any check fails
    Verify {
        #[command(flatten)]
        model: Model,
        #[arg(long)]
        depth: usize,
        /// Sampled configurations for pointwise checks
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 20_000)]
        pop: usize,
        #[arg(long, default_value_t = DEFAULT_ATOM_CAP)]
        cap: usize,
        #[command(flatten)]
        run: Run,
        #[command(flatten)]
        output: Output,
    },
}

#[derive(Serialize)]
struct ParamsDoc {
    k: usize,
    omega: f64,
    lambda: f64,
    lambda_root: f64,
    theta: f64,
    pi1: f64,
    pi0: f64,
    pi01: f64,
    delta: f64,
    transition: [[f64; 2]; 2],
    ks_value: f64,
    contraction_factor: f64,
}

#[derive(Serialize)]
struct BoundsDoc {
    #[serde(flatten)]
    report: BoundsReport,
    crossing_search_max: Option<usize>,
    crossing_k: Option<usize>,
    trace: Option<DecayBoundTrace>,
}

#[derive(Serialize)]
struct BroadcastDoc {
    k: usize,
    omega: f64,
    lambda: f64,
    depth: usize,
    root: &'static str,
    count: usize,
    seed: u64,
    workers: usize,
    configurations: Vec<String>,
}

#[derive(Serialize)]
struct PosteriorDoc {
    k: usize,
    omega: f64,
    lambda: f64,
    depth: usize,
    mode: PosteriorMode,
    leaves: String,
    posterior_one: f64,
    posterior_zero: f64,
    magnetization: f64,
}

#[derive(Serialize)]
struct T3Doc {
    k: usize,
    omega: f64,
    lambda: f64,
    /// Set when ω was taken as ω̄(k, beta).
    beta: Option<f64>,
    method: &'static str,
    pop_size: Option<usize>,
    seed: Option<u64>,
    half_omega: f64,
    estimates: Vec<T3Estimate>,
}

#[derive(Serialize)]
struct AtomsDoc {
    k: usize,
    omega: f64,
    lambda: f64,
    depth: usize,
    mode: PosteriorMode,
    distributions: Vec<AtomDistribution>,
}

#[derive(Serialize)]
struct MomentLevel {
    #[serde(flatten)]
    moments: MagnetizationMoments,
    /// Level bound applied to the previous depth.
    level_bound: Option<f64>,
}

#[derive(Serialize)]
struct MomentsDoc {
    k: usize,
    omega: f64,
    lambda: f64,
    levels: Vec<MomentLevel>,
}

#[derive(Serialize)]
struct DecayDoc {
    #[serde(flatten)]
    trace: DecayTrace,
    recalibrate: bool,
}

#[derive(Serialize)]
struct ScanDoc {
    #[serde(flatten)]
    result: ScanResult,
    recalibrate: bool,
}

/// Bytes to write and whether the command counts as a success.
type Rendered = (Vec<u8>, bool);

fn params_cmd(model: &Model, format: Format) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let doc = ParamsDoc {
        k: p.k,
        omega: p.omega,
        lambda: p.lambda_internal,
        lambda_root: p.lambda_root,
        theta: p.theta,
        pi1: p.pi1,
        pi0: p.pi0,
        pi01: p.pi01,
        delta: p.delta,
        transition: p.transition,
        ks_value: p.ks_value(),
        contraction_factor: p.contraction_factor(),
    };
    let bytes = match format {
        Format::Json => output::json("params", &doc)?,
        Format::Csv => output::csv_fields(&[
            ("k", doc.k.to_string()),
            ("omega", output::real(doc.omega)),
            ("lambda", output::real(doc.lambda)),
            ("lambda_root", output::real(doc.lambda_root)),
            ("theta", output::real(doc.theta)),
            ("pi1", output::real(doc.pi1)),
            ("pi0", output::real(doc.pi0)),
            ("pi01", output::real(doc.pi01)),
            ("delta", output::real(doc.delta)),
            ("ks_value", output::real(doc.ks_value)),
            ("contraction_factor", output::real(doc.contraction_factor)),
        ])?,
    };
    Ok((bytes, true))
}

#[allow(clippy::too_many_arguments)]
fn bounds_cmd(
    k: usize,
    beta: f64,
    omega: Option<f64>,
    iterate: usize,
    xbar_seed: Option<f64>,
    crossing_max: Option<usize>,
    format: Format,
) -> Result<Rendered, CliError> {
    let report = bounds_report(k, beta, omega)?;
    let crossing_k = match crossing_max {
        Some(max) => contraction_crossing(beta, max)?,
        None => None,
    };
    let trace = if iterate > 0 {
        let w = report
            .omega
            .ok_or_else(|| CliError::Usage("no ω available for the iteration".into()))?;
        let params = ModelParams::derive_from_omega(k, w)?;
        Some(contraction_iterate(
            xbar_seed.unwrap_or(0.5 * w),
            &params,
            iterate,
        ))
    } else {
        None
    };
    let bytes = match (format, &trace) {
        (Format::Json, _) => output::json(
            "bounds",
            &BoundsDoc {
                report: report.clone(),
                crossing_search_max: crossing_max,
                crossing_k,
                trace: trace.clone(),
            },
        )?,
        (Format::Csv, Some(t)) => {
            let mut buf = Vec::new();
            write_bound_csv(&mut buf, t)?;
            buf
        }
        (Format::Csv, None) => output::csv_fields(&[
            ("k", report.k.to_string()),
            ("beta", output::real(report.beta)),
            ("omega", output::opt_real(report.omega)),
            ("omega_bar", output::opt_real(report.omega_bar)),
            ("ks_value", output::opt_real(report.ks_value)),
            ("martin_lambda", output::real(report.martin_lambda)),
            ("bw_lambda", output::real(report.bw_lambda)),
            ("main_lambda", output::opt_real(report.main_lambda)),
            (
                "contraction_factor",
                output::opt_real(report.contraction_factor),
            ),
            (
                "crossing_k",
                crossing_k.map(|c| c.to_string()).unwrap_or_default(),
            ),
            ("note", report.note.to_string()),
        ])?,
    };
    Ok((bytes, true))
}

fn broadcast_cmd(
    model: &Model,
    depth: usize,
    count: usize,
    root: Root,
    run: &Run,
    format: Format,
) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let shape = TreeShape::new(p.k, depth)?;
    let (condition, name) = match root {
        Root::Free => (RootCondition::Free, "free"),
        Root::Zero => (RootCondition::Zero, "zero"),
        Root::One => (RootCondition::One, "one"),
    };
    if run.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let configs = sample_broadcast_many(&p, &shape, condition, count, run.seed, run.workers)?;
    let strings: Vec<String> = configs.iter().map(Configuration::to_string).collect();
    let bytes = match format {
        Format::Json => output::json(
            "broadcast",
            &BroadcastDoc {
                k: p.k,
                omega: p.omega,
                lambda: p.lambda_internal,
                depth,
                root: name,
                count,
                seed: run.seed,
                workers: run.workers,
                configurations: strings,
            },
        )?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = strings
                .into_iter()
                .enumerate()
                .map(|(i, s)| vec![i.to_string(), s])
                .collect();
            output::csv(&["index", "configuration"], &rows)?
        }
    };
    Ok((bytes, true))
}

fn pointwise_posterior(
    p: &ModelParams,
    depth: usize,
    leaves: &str,
    mode: PosteriorMode,
    format: Format,
) -> Result<Rendered, CliError> {
    let shape = TreeShape::new(p.k, depth)?;
    let pattern: Configuration = leaves.parse()?;
    let p1 = root_posterior(p, &shape, &pattern.states, mode)?;
    let doc = PosteriorDoc {
        k: p.k,
        omega: p.omega,
        lambda: p.lambda_internal,
        depth,
        mode,
        leaves: pattern.to_string(),
        posterior_one: p1,
        posterior_zero: 1.0 - p1,
        magnetization: magnetization_of(p, p1)?,
    };
    let bytes = match format {
        Format::Json => output::json("posterior", &doc)?,
        Format::Csv => output::csv_fields(&[
            ("k", doc.k.to_string()),
            ("omega", output::real(doc.omega)),
            ("lambda", output::real(doc.lambda)),
            ("depth", doc.depth.to_string()),
            ("mode", mode.as_str().to_string()),
            ("leaves", doc.leaves.clone()),
            ("posterior_one", output::real(doc.posterior_one)),
            ("posterior_zero", output::real(doc.posterior_zero)),
            ("magnetization", output::real(doc.magnetization)),
        ])?,
    };
    Ok((bytes, true))
}

#[allow(clippy::too_many_arguments)]
fn t3_posterior(
    k: usize,
    fugacity: &OptionalFugacity,
    beta: f64,
    method: Method,
    pop: usize,
    cap: usize,
    run: &Run,
    format: Format,
) -> Result<Rendered, CliError> {
    let (p, beta_used) = match resolve(k, fugacity.omega, fugacity.lambda)? {
        Some(p) => (p, None),
        None => (
            ModelParams::derive_from_omega(k, omega_bar(k, beta)?)?,
            Some(beta),
        ),
    };
    let (t3_method, name, pop_size, seed) = match method {
        Method::Atoms => (T3Method::Atoms { cap }, "atoms", None, None),
        Method::Popdyn => (
            T3Method::PopDyn {
                pop_size: pop,
                seed: run.seed,
                workers: run.workers,
            },
            "popdyn",
            Some(pop),
            Some(run.seed),
        ),
    };
    let estimates = t3_estimates(&p, &[PosteriorMode::Exact, PosteriorMode::Paper], t3_method)?;
    let doc = T3Doc {
        k: p.k,
        omega: p.omega,
        lambda: p.lambda_internal,
        beta: beta_used,
        method: name,
        pop_size,
        seed,
        half_omega: 0.5 * p.omega,
        estimates,
    };
    let bytes = match format {
        Format::Json => output::json("posterior", &doc)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = doc
                .estimates
                .iter()
                .map(|e| {
                    vec![
                        e.k.to_string(),
                        output::real(e.omega),
                        e.mode.as_str().to_string(),
                        output::real(e.value),
                        output::real(e.stderr),
                        output::real(e.xbar3),
                        output::real(doc.half_omega),
                    ]
                })
                .collect();
            output::csv(
                &[
                    "k",
                    "omega",
                    "mode",
                    "value",
                    "stderr",
                    "xbar3",
                    "half_omega",
                ],
                &rows,
            )?
        }
    };
    Ok((bytes, true))
}

fn atoms_cmd(
    model: &Model,
    depth: usize,
    mode: Mode,
    cap: usize,
    format: Format,
) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let mode = PosteriorMode::from(mode);
    let ladder = atom_recursion_with_cap(&p, depth, mode, cap)?;
    let distributions = ladder[depth].distributions(&p);
    let bytes = match format {
        Format::Json => output::json(
            "atoms",
            &AtomsDoc {
                k: p.k,
                omega: p.omega,
                lambda: p.lambda_internal,
                depth,
                mode,
                distributions,
            },
        )?,
        Format::Csv => {
            let mut buf = Vec::new();
            write_atoms_csv(&mut buf, &distributions)?;
            buf
        }
    };
    Ok((bytes, true))
}

fn moments_cmd(
    model: &Model,
    depth: usize,
    cap: usize,
    format: Format,
) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let ladder = atom_recursion_with_cap(&p, depth, PosteriorMode::Exact, cap)?;
    let mut levels: Vec<MomentLevel> = Vec::with_capacity(depth + 1);
    for laws in &ladder {
        let bound = levels.last().map(|prev| level_bound(prev.moments.xbar, &p));
        levels.push(MomentLevel {
            moments: laws.moments(&p),
            level_bound: bound,
        });
    }
    let bytes = match format {
        Format::Json => output::json(
            "moments",
            &MomentsDoc {
                k: p.k,
                omega: p.omega,
                lambda: p.lambda_internal,
                levels,
            },
        )?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = levels
                .iter()
                .map(|l| {
                    let m = &l.moments;
                    vec![
                        m.depth.to_string(),
                        output::real(m.xbar),
                        output::real(m.xbar1),
                        output::real(m.xbar0),
                        output::real(m.e1x),
                        output::real(m.e0x),
                        output::opt_real(l.level_bound),
                    ]
                })
                .collect();
            output::csv(
                &[
                    "depth",
                    "xbar",
                    "xbar1",
                    "xbar0",
                    "e1x",
                    "e0x",
                    "level_bound",
                ],
                &rows,
            )?
        }
    };
    Ok((bytes, true))
}

fn decay_settings(
    depth: usize,
    pop: usize,
    eps_rec: f64,
    no_recalibrate: bool,
    run: &Run,
) -> DecaySettings {
    DecaySettings {
        max_depth: depth,
        pop_size: pop,
        seed: run.seed,
        workers: run.workers,
        eps_rec,
        recalibrate: !no_recalibrate,
    }
}

fn decay_cmd(
    model: &Model,
    settings: &DecaySettings,
    format: Format,
) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let trace = run_decay(&p, settings)?;
    let bytes = match format {
        Format::Json => output::json(
            "decay",
            &DecayDoc {
                trace,
                recalibrate: settings.recalibrate,
            },
        )?,
        Format::Csv => {
            let mut buf = Vec::new();
            write_decay_csv(&mut buf, &trace)?;
            buf
        }
    };
    Ok((bytes, true))
}

fn scan_cmd(
    k: usize,
    grid: &[f64],
    settings: &DecaySettings,
    format: Format,
) -> Result<Rendered, CliError> {
    let result = scan_threshold(k, grid, settings)?;
    let bytes = match format {
        Format::Json => output::json(
            "scan",
            &ScanDoc {
                result,
                recalibrate: settings.recalibrate,
            },
        )?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = result
                .points
                .iter()
                .map(|pt| {
                    vec![
                        output::real(pt.lambda),
                        output::real(pt.omega),
                        output::real(pt.terminal_xbar),
                        output::real(pt.stderr),
                        pt.depth_reached.to_string(),
                        pt.reconstructs.to_string(),
                    ]
                })
                .collect();
            output::csv(
                &[
                    "lambda",
                    "omega",
                    "terminal_xbar",
                    "stderr",
                    "depth_reached",
                    "reconstructs",
                ],
                &rows,
            )?
        }
    };
    Ok((bytes, true))
}

fn verify_cmd(
    model: &Model,
    settings: &VerifySettings,
    format: Format,
) -> Result<Rendered, CliError> {
    let p = model.params()?;
    let report = run_verify(&p, settings)?;
    let ok = report.passed();
    let bytes = match format {
        Format::Json => output::json("verify", &report)?,
        Format::Csv => {
            let rows: Vec<Vec<String>> = report
                .records
                .iter()
                .map(|r| {
                    vec![
                        r.name.clone(),
                        output::opt_real(r.lhs),
                        output::opt_real(r.rhs),
                        output::real(r.tolerance),
                        r.pass
                            .map(|b| b.to_string())
                            .unwrap_or_else(|| "skipped".into()),
                        r.reason.clone().unwrap_or_default(),
                    ]
                })
                .collect();
            output::csv(
                &["name", "lhs", "rhs", "tolerance", "pass", "reason"],
                &rows,
            )?
        }
    };
    Ok((bytes, ok))
}

fn dispatch(command: &Command) -> Result<(Rendered, Option<&PathBuf>), CliError> {
    let rendered = match command {
        Command::Params { model, output } => (params_cmd(model, output.format)?, &output.out),
        Command::Bounds {
            k,
            beta,
            omega,
            iterate,
            xbar_seed,
            crossing_max,
            output,
        } => (
            bounds_cmd(
                *k,
                *beta,
                *omega,
                *iterate,
                *xbar_seed,
                *crossing_max,
                output.format,
            )?,
            &output.out,
        ),
        Command::Broadcast {
            model,
            depth,
            count,
            root,
            run,
            output,
        } => (
            broadcast_cmd(model, *depth, *count, *root, run, output.format)?,
            &output.out,
        ),
        Command::Posterior {
            k,
            fugacity,
            beta,
            depth,
            leaves,
            mode,
            t3,
            method,
            pop,
            cap,
            run,
            output,
        } => {
            let rendered = if *t3 {
                t3_posterior(*k, fugacity, *beta, *method, *pop, *cap, run, output.format)?
            } else {
                let p = resolve(*k, fugacity.omega, fugacity.lambda)?.ok_or_else(|| {
                    CliError::Usage("a leaf posterior needs --omega or --lambda".into())
                })?;
                let (Some(depth), Some(leaves)) = (depth, leaves) else {
                    return Err(CliError::Usage("--depth and --leaves are required".into()));
                };
                pointwise_posterior(&p, *depth, leaves, (*mode).into(), output.format)?
            };
            (rendered, &output.out)
        }
        Command::Atoms {
            model,
            depth,
            mode,
            cap,
            output,
        } => (
            atoms_cmd(model, *depth, *mode, *cap, output.format)?,
            &output.out,
        ),
        Command::Moments {
            model,
            depth,
            cap,
            output,
        } => (
            moments_cmd(model, *depth, *cap, output.format)?,
            &output.out,
        ),
        Command::Decay {
            model,
            depth,
            pop,
            eps_rec,
            no_recalibrate,
            run,
            output,
        } => {
            let settings = decay_settings(*depth, *pop, *eps_rec, *no_recalibrate, run);
            (decay_cmd(model, &settings, output.format)?, &output.out)
        }
        Command::Scan {
            k,
            lambda_min,
            lambda_max,
            steps,
            depth,
            pop,
            eps_rec,
            no_recalibrate,
            run,
            output,
        } => {
            let grid = linear_grid(*lambda_min, *lambda_max, *steps)?;
            let settings = decay_settings(*depth, *pop, *eps_rec, *no_recalibrate, run);
            (scan_cmd(*k, &grid, &settings, output.format)?, &output.out)
        }
        Command::Verify {
            model,
            depth,
            samples,
            pop,
            cap,
            run,
            output,
        } => {
            let settings = VerifySettings {
                depth: *depth,
                samples: *samples,
                pop_size: *pop,
                seed: run.seed,
                workers: run.workers,
                atom_cap: *cap,
            };
            (verify_cmd(model, &settings, output.format)?, &output.out)
        }
    };
    Ok((rendered.0, rendered.1.as_ref()))
}

/// Result of one invocation: exit code and the bytes bound for each stream.
#[derive(Debug)]
struct Invocation {
    code: u8,
    stdout: Vec<u8>,
    stderr: String,
}

fn run<I, T>(argv: I) -> Invocation
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let failure = |e: CliError| Invocation {
        code: e.exit_code(),
        stdout: Vec::new(),
        stderr: format!("treecast: {e}\n"),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            let code = e.exit_code() as u8;
            return if e.use_stderr() {
                Invocation {
                    code,
                    stdout: Vec::new(),
                    stderr: text,
                }
            } else {
                Invocation {
                    code,
                    stdout: text.into_bytes(),
                    stderr: String::new(),
                }
            };
        }
    };
    let ((bytes, ok), out) = match dispatch(&cli.command) {
        Ok(done) => done,
        Err(e) => return failure(e),
    };
    let stdout = match out {
        Some(path) => match std::fs::write(path, &bytes) {
            Ok(()) => Vec::new(),
            Err(e) => return failure(e.into()),
        },
        None => bytes,
    };
    Invocation {
        code: if ok { 0 } else { 1 },
        stdout,
        stderr: String::new(),
    }
}

fn main() -> ExitCode {
    let inv = run(std::env::args_os());
    eprint!("{}", inv.stderr);
    if let Err(e) = output::write_stdout(&inv.stdout) {
        eprintln!("treecast: {e}");
        return ExitCode::from(1);
    }
    ExitCode::from(inv.code)
}
