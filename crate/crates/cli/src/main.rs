mod inputs;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use coherency::closedform::{
    acs_str_condition, acs_support_bounds, nk_itr_bound, nk_op_support, nk_tr_support, psi_cutoff,
    sunspot_closed_forms, ump_coherency_case, window_solutions,
};
use coherency::dynamics::{
    backward_solve, iterate_absorbing, iterate_transitory, paths_csv, BackwardOptions, PathOutcome,
    TrajectoryStatus, TransitoryMap,
};
use coherency::glm::{
    check_coherency, check_coherency_fast, find_psi_bar, CanonicalSystem, CoherencyOptions, Witness,
};
use coherency::msv::{enumerate_msv, enumerate_msv_fast, solutions_csv, MsvOptions};
use coherency::{MarkovChain, RegimeConfig, Verdict};
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use inputs::{ModelArgs, ParamArgs};

const EXIT_OK: u8 = 0;
const EXIT_USAGE: u8 = 2;
const EXIT_NOT_CC: u8 = 10;
const EXIT_DEGENERATE: u8 = 11;
const EXIT_RUNTIME: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] coherency::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use coherency::Error as E;
        match self {
            Self::Usage(_) => EXIT_USAGE,
            Self::Core(
                E::Domain(_)
                | E::Dimension { .. }
                | E::Validation(_)
                | E::Parse(_)
                | E::NotEligible(_),
            ) => EXIT_USAGE,
            Self::Core(_) | Self::Io(_) => EXIT_RUNTIME,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "coherency",
    version,
    about = "Coherency and completeness of models with an occasionally binding constraint"
)]
struct Cli {
    /// Worker threads (falls back to COHERENCE_THREADS, then all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Determinant-sign coherency test
    Check(CheckArgs),
    /// Enumerate all MSV solutions
    Enumerate(EnumerateArgs),
    /// Largest coherent Taylor-rule coefficient for a calibration
    Cutoff(CutoffArgs),
    /// Closed-form cutoffs and support bounds
    Bounds(BoundsArgs),
    /// Iterate the nonlinear ACS maps
    Simulate(SimulateArgs),
    /// Backward regime-path search for models with a lagged state
    Backward(BackwardArgs),
}

#[derive(Debug, Args)]
struct Tolerances {
    /// Relative determinant threshold
    #[arg(long, default_value_t = 1e-10)]
    det_tol: f64,
    /// Maximum number of configurations
    #[arg(long, default_value_t = 1 << 24)]
    cap: u64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// JSON report path
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EnumerateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    tol: Tolerances,
    /// Solution CSV path
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CutoffArgs {
    #[command(flatten)]
    params: ParamArgs,
    /// Number of Rouwenhorst states
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// Shock autocorrelation (defaults to the calibration's persistence)
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    lo: f64,
    #[arg(long, default_value_t = 1.5)]
    hi: f64,
    #[arg(long, default_value_t = 1e-7)]
    tol: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BoundKind {
    NkTr,
    NkOp,
    NkItr,
    Acs,
    AcsStr,
    Ump,
    Windows,
    Sunspot,
    PsiCutoff,
}

#[derive(Debug, Args)]
struct BoundsArgs {
    #[arg(value_enum)]
    kind: BoundKind,
    #[command(flatten)]
    params: ParamArgs,
    /// Persistence of the transitory state (defaults to the calibration's)
    #[arg(long)]
    p: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    q: f64,
    /// Natural-rate shock in the transitory state
    #[arg(long = "r-l", allow_hyphen_values = true)]
    r_l: Option<f64>,
    /// Gross steady-state real rate (nonlinear ACS)
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    pi_star: Option<f64>,
    #[arg(long)]
    pi_bar: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MapKind {
    AcsNonlinear,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ShockState {
    Absorbing,
    Transitory,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(value_enum)]
    map: MapKind,
    #[arg(long, value_enum, default_value = "absorbing")]
    state: ShockState,
    #[arg(long, default_value_t = 1.5)]
    psi: f64,
    /// Log steady-state nominal rate (absorbing map)
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.01)]
    mu: f64,
    #[arg(long, default_value_t = 0.8)]
    p: f64,
    #[arg(long, default_value_t = 1.005)]
    r: f64,
    #[arg(long, default_value_t = 1.005)]
    pi_star: f64,
    #[arg(long = "r-l", allow_hyphen_values = true, default_value_t = -0.001)]
    r_l: f64,
    #[arg(long)]
    pi_bar: Option<f64>,
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    pi0: f64,
    #[arg(long, default_value_t = 500)]
    steps: usize,
    /// Trajectory CSV path
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BackwardArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of dates before the terminal rule takes over
    #[arg(long, default_value_t = 1)]
    horizon: usize,
    /// Initial lagged state
    #[arg(long, allow_hyphen_values = true, default_value_t = 0.0)]
    y0: f64,
    /// Maximum number of regime paths
    #[arg(long, default_value_t = 1 << 22)]
    budget: u64,
    /// Keep explosive terminal roots
    #[arg(long)]
    all_roots: bool,
    /// Path CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Pretty JSON with sorted keys (serde_json maps are ordered by key).
fn write_json(path: Option<&Path>, value: &impl Serialize) -> Result<(), CliError> {
    let Some(path) = path else { return Ok(()) };
    let value = serde_json::to_value(value).map_err(coherency::Error::from)?;
    let mut text = serde_json::to_string_pretty(&value).map_err(coherency::Error::from)?;
    text.push('\n');
    std::fs::write(path, text)?;
    Ok(())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<(), CliError> {
    if let Some(path) = path {
        std::fs::write(path, text)?;
    }
    Ok(())
}

fn regime_label(cfg: &RegimeConfig) -> String {
    if cfg.m() != 1 {
        return cfg.bitstring();
    }
    (0..cfg.k())
        .map(|i| if cfg.is_slack(0, i) { "PIR" } else { "ZIR" })
        .collect::<Vec<_>>()
        .join(",")
}

fn witness_line(name: &str, w: &Option<Witness>) -> String {
    match w {
        Some(w) => format!("{name:<12}{} det={:.6e}", w.config.bitstring(), w.det),
        None => format!("{name:<12}-"),
    }
}

fn cmd_check(args: &CheckArgs) -> Result<u8, CliError> {
    let built = args.model.build()?;
    let opts = CoherencyOptions {
        det_tol: args.tol.det_tol,
        cap: args.tol.cap,
        ..Default::default()
    };
    let report = match &built.reduced {
        Some(red) => check_coherency_fast(red, &opts)?,
        None => check_coherency(&CanonicalSystem::new(&built.model, &built.chain)?, &opts)?,
    };
    println!(
        "configurations {} evaluated, {} skipped",
        report.evaluated, report.skipped
    );
    println!(
        "signs       +{} -{} degenerate {}",
        report.positive, report.negative, report.degenerate
    );
    println!(
        "verdict     {}",
        serde_json::to_value(report.verdict)
            .expect("verdict")
            .as_str()
            .unwrap_or_default()
    );
    println!("{}", witness_line("positive", &report.positive_witness));
    println!("{}", witness_line("negative", &report.negative_witness));
    write_json(
        args.out.as_deref(),
        &json!({ "inputs": built.inputs, "report": report }),
    )?;
    Ok(match report.verdict {
        Verdict::CoherentAndComplete => EXIT_OK,
        Verdict::IncoherentOrIncomplete => EXIT_NOT_CC,
        Verdict::Degenerate => EXIT_DEGENERATE,
    })
}

fn cmd_enumerate(args: &EnumerateArgs) -> Result<u8, CliError> {
    let built = args.model.build()?;
    let opts = MsvOptions {
        det_tol: args.tol.det_tol,
        cap: args.tol.cap,
        ..Default::default()
    };
    let (found, support) = match &built.reduced {
        Some(red) => {
            let scalar = built.chain.support().rows(1, 1).clone_owned();
            (enumerate_msv_fast(red, &opts)?, scalar)
        }
        None => (
            enumerate_msv(&CanonicalSystem::new(&built.model, &built.chain)?, &opts)?,
            built.chain.support().clone(),
        ),
    };
    println!("{}", found.count());
    for (i, s) in found.solutions.iter().enumerate() {
        let flag = if s.boundary_flag { " (boundary)" } else { "" };
        println!(
            "{i} {} {}{flag}",
            s.regime().bitstring(),
            regime_label(s.regime())
        );
    }
    write_text(
        args.csv.as_deref(),
        &solutions_csv(&support, &found.solutions),
    )?;
    let degenerate: Vec<String> = found.degenerate.iter().map(|c| c.bitstring()).collect();
    write_json(
        args.out.as_deref(),
        &json!({
            "inputs": built.inputs,
            "count": found.count(),
            "attempted": found.attempted,
            "degenerate": degenerate,
            "solutions": found.solutions,
            "system": if built.reduced.is_some() { "reduced-nk" } else { "canonical" },
        }),
    )?;
    Ok(if found.count() == 1 {
        EXIT_OK
    } else {
        EXIT_NOT_CC
    })
}

fn cmd_cutoff(args: &CutoffArgs) -> Result<u8, CliError> {
    let par = args.params.nk()?;
    let rho = args.rho.unwrap_or(par.p);
    let chain = MarkovChain::rouwenhorst(rho, 0.001, args.k)?;
    let sys =
        coherency::canonical::reduce_nk(par.beta, par.sigma, par.lambda, 1.0, par.mu, &chain)?;
    let res = find_psi_bar(
        &sys,
        args.lo,
        args.hi,
        args.tol,
        &CoherencyOptions::default(),
    )?;
    let status = serde_json::to_value(res.status).expect("status");
    println!(
        "psi_bar = {:.6} ({}, k = {}, rho = {rho})",
        res.psi_bar,
        status.as_str().unwrap_or_default(),
        args.k
    );
    write_json(
        args.out.as_deref(),
        &json!({
            "inputs": { "params": par, "calib": args.params.calib, "k": args.k, "rho": rho, "lo": args.lo, "hi": args.hi, "tol": args.tol },
            "value": res.psi_bar,
            "case": status,
            "result": res,
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_bounds(args: &BoundsArgs) -> Result<u8, CliError> {
    let mut par = args.params.nk()?;
    if let Some(p) = args.p {
        par.p = p;
    }
    par.q = args.q;
    if let Some(r_l) = args.r_l {
        par.r_l = r_l;
    }
    let need = |name: &str, v: Option<f64>| {
        v.ok_or_else(|| CliError::Usage(format!("--{name} is required for this bound")))
    };
    let (summary, value, case, result): (String, Value, Value, Value) = match args.kind {
        BoundKind::NkTr | BoundKind::NkOp => {
            let sr = if matches!(args.kind, BoundKind::NkTr) {
                nk_tr_support(&par)?
            } else {
                nk_op_support(&par)?
            };
            let v = json!(sr.upper);
            let s = match sr.upper {
                Some(u) => format!("-r_L <= {u:.8} (theta = {:.6})", sr.theta),
                None => format!("no upper bound on -r_L (theta = {:.6})", sr.theta),
            };
            (s, v, json!(sr.case), json!(sr))
        }
        BoundKind::NkItr => {
            let b = nk_itr_bound(&par)?;
            let s = format!(
                "gamma_R = {:.5}, gamma_pi = {:.6}, gamma_x = {:.6}, -r_bar_L = {:.8}",
                b.gamma_r, b.gamma_pi, b.gamma_x, b.bound
            );
            (s, json!(b.bound), json!(b.restriction.case), json!(b))
        }
        BoundKind::Acs => {
            let r = need("r", args.r)?;
            let pi_star = need("pi-star", args.pi_star)?;
            let b = acs_support_bounds(par.psi, par.p, r, pi_star, args.pi_bar)?;
            let s = format!(
                "nonlinear {:?}, linear {:?}",
                b.nonlinear_bound, b.linear_bound
            );
            let case = if b.first_condition {
                "first-condition-holds"
            } else {
                "first-condition-fails"
            };
            (s, json!(b.nonlinear_bound), json!(case), json!(b))
        }
        BoundKind::AcsStr => {
            let c = acs_str_condition(par.psi, par.phi, par.p, par.mu)?;
            let case = if c.coherent {
                "coherent"
            } else {
                "support-restriction"
            };
            (
                format!("{case}, bound {:.8}", c.support_bound),
                json!(c.support_bound),
                json!(case),
                json!(c),
            )
        }
        BoundKind::Ump => {
            let c = ump_coherency_case(par.psi, par.xi, par.p, par.beta, par.sigma, par.lambda)?;
            let case = json!(c.case);
            (
                format!("case {}", case.as_str().unwrap_or_default()),
                json!(c.coherent()),
                case,
                json!(c),
            )
        }
        BoundKind::Windows => {
            let cands = window_solutions(par.psi, par.p, par.mu, need("r-l", args.r_l)?)?;
            let valid = cands.iter().filter(|c| c.valid).count();
            let labels: Vec<&str> = cands.iter().filter(|c| c.valid).map(|c| c.label).collect();
            (
                format!("{valid} solutions: {}", labels.join(" ")),
                json!(valid),
                json!(labels),
                json!(cands),
            )
        }
        BoundKind::Sunspot => {
            let f = sunspot_closed_forms(
                par.psi, par.p, par.q, par.mu, par.beta, par.sigma, par.lambda,
            )?;
            (
                format!("a_p = {:.6}, a_q = {:.6}", f.a_p, f.a_q),
                json!(f.candidates.len()),
                Value::Null,
                json!(f),
            )
        }
        BoundKind::PsiCutoff => {
            let c = psi_cutoff(par.p, par.q, par.beta, par.sigma, par.lambda);
            (format!("psi_p,q = {c:.6}"), json!(c), Value::Null, json!(c))
        }
    };
    println!("{summary}");
    write_json(
        args.out.as_deref(),
        &json!({ "inputs": { "params": par, "calib": args.params.calib, "r": args.r, "pi_star": args.pi_star, "pi_bar": args.pi_bar },
                 "value": value, "case": case, "result": result }),
    )?;
    Ok(EXIT_OK)
}

fn status_line(status: &TrajectoryStatus) -> String {
    match status {
        TrajectoryStatus::ConvergedTo { fixed_point } => {
            format!("status converged to {fixed_point:.8}")
        }
        TrajectoryStatus::DivergedAt { t } => format!("status diverged at t = {t}"),
        TrajectoryStatus::DomainBreakdownAt { t } => format!("status domain breakdown at t = {t}"),
        TrajectoryStatus::Unsettled => "status unsettled".into(),
    }
}

fn cmd_simulate(args: &SimulateArgs) -> Result<u8, CliError> {
    let MapKind::AcsNonlinear = args.map;
    let (traj, inputs) = match args.state {
        ShockState::Absorbing => (
            iterate_absorbing(args.pi0, args.psi, args.mu, args.steps)?,
            json!({ "state": "absorbing", "psi": args.psi, "mu": args.mu, "pi0": args.pi0, "steps": args.steps }),
        ),
        ShockState::Transitory => {
            let map = TransitoryMap::new(
                args.psi,
                args.p,
                args.r,
                args.pi_star,
                args.r_l,
                args.pi_bar,
            )?;
            (
                iterate_transitory(&map, args.pi0, args.steps)?,
                json!({ "state": "transitory", "map": map, "pi0": args.pi0, "steps": args.steps }),
            )
        }
    };
    println!("{}", status_line(&traj.status));
    write_text(args.csv.as_deref(), &traj.to_csv())?;
    write_json(
        args.out.as_deref(),
        &json!({ "inputs": inputs, "trajectory": traj }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_backward(args: &BackwardArgs) -> Result<u8, CliError> {
    let built = args.model.build()?;
    let opts = BackwardOptions {
        budget: args.budget,
        stable_only: !args.all_roots,
        ..Default::default()
    };
    let res = backward_solve(&built.model, &built.chain, args.horizon, args.y0, &opts)?;
    let outcome = serde_json::to_value(res.outcome).expect("outcome");
    println!(
        "paths {} ({})",
        res.paths.len(),
        outcome.as_str().unwrap_or_default()
    );
    for path in &res.paths {
        let seq: Vec<String> = path.regimes.iter().map(|j| j.bitstring()).collect();
        println!(
            "  terminal {} root {}: {}",
            path.terminal.bitstring(),
            path.root,
            seq.join(" ")
        );
    }
    write_text(args.csv.as_deref(), &paths_csv(&res))?;
    write_json(
        args.out.as_deref(),
        &json!({ "inputs": built.inputs, "horizon": args.horizon, "y0": args.y0, "result": res }),
    )?;
    Ok(if res.outcome == PathOutcome::Unique {
        EXIT_OK
    } else {
        EXIT_NOT_CC
    })
}

fn configure_threads(flag: Option<usize>) -> Result<(), CliError> {
    let threads = match flag {
        Some(n) => Some(n),
        None => match std::env::var("COHERENCE_THREADS") {
            Ok(v) => Some(v.trim().parse().map_err(|_| {
                CliError::Usage(format!("COHERENCE_THREADS = `{v}` is not a count"))
            })?),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            return Err(CliError::Usage("thread count must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<u8, CliError> {
    configure_threads(cli.threads)?;
    match &cli.command {
        Command::Check(a) => cmd_check(a),
        Command::Enumerate(a) => cmd_enumerate(a),
        Command::Cutoff(a) => cmd_cutoff(a),
        Command::Bounds(a) => cmd_bounds(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Backward(a) => cmd_backward(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { EXIT_OK });
        }
    };
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
