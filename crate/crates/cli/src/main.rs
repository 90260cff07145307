mod plot;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

use prbt_core::certify::{
    encode_barrier, find_robust_barrier, verify_certificate, BarrierProblem, CertKind, CertifyOptions, LAMBDA_FLOOR,
    RESIDUAL_BOUND,
};
use prbt_core::lp::write_mps;
use prbt_core::pipeline::dump::TubeDump;
use prbt_core::pipeline::{check_safety, compute_prbt, monte_carlo_validate, Params, Safety, Termination};
use prbt_core::simulate::{rk4_step, VectorField};
use prbt_core::Model;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Failed(String),
    #[error("safety unknown: {0}")]
    Unknown(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Failed(_) => 3,
            CliError::Unknown(_) => 4,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "prbt", version, about = "Reachability by piecewise robust barrier tubes")]
struct Cli {
    /// Log progress to stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compute a tube chain from the model's initial set.
    Reach(ReachArgs),
    /// Search one robust barrier certificate separating the initial set from
    /// the first unsafe box of the initial mode.
    Certify(CertifyArgs),
    /// Export one trajectory as CSV.
    Simulate(SimulateArgs),
    /// Re-verify a tube dump: identities, sign grids, Monte Carlo, safety.
    Check(CheckArgs),
    /// Render a tube dump as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct CertArgs {
    /// Candidate degrees, tried in order.
    #[arg(long, default_value = "1,2,3,4", value_parser = parse_degrees)]
    degrees: Degrees,
    /// Margins for the initial, Lie and target conditions.
    #[arg(long, default_value = "1,1,1", value_parser = parse_triple_f64)]
    epsilon: [f64; 3],
    /// Handelman orders: `auto` or `m1,m2,m3`.
    #[arg(long, default_value = "auto", value_parser = parse_orders)]
    orders: Auto<[u32; 3]>,
}

impl CertArgs {
    fn options(&self) -> CertifyOptions {
        CertifyOptions { degrees: self.degrees.0.clone(), eps: self.epsilon, orders: self.orders.0 }
    }
}

#[derive(Args)]
struct ReachArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 10)]
    tubes: usize,
    #[command(flatten)]
    cert: CertArgs,
    #[arg(long, default_value_t = 0.3, value_parser = parse_positive)]
    theta0: f64,
    /// Initial simulation distance, or `auto` for a fifth of the invariant diameter.
    #[arg(long, default_value = "auto", value_parser = parse_auto)]
    dist0: Auto<f64>,
    /// Defaults to theta0 / 16.
    #[arg(long, value_parser = parse_positive)]
    theta_min: Option<f64>,
    #[arg(long, default_value_t = 0.01, value_parser = parse_positive)]
    eps_rel: f64,
    /// Tube dump path.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    svg: Option<PathBuf>,
    /// Plotted dimensions, one-based.
    #[arg(long, default_value = "1,2", value_parser = parse_dims)]
    dims: (usize, usize),
    /// Monte Carlo trajectories to validate the chain with.
    #[arg(long)]
    mc: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Run without the thread pool.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args)]
struct CertifyArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    cert: CertArgs,
    /// Lattice points per dimension for the sign check.
    #[arg(long, default_value_t = 5)]
    grid: usize,
    /// Write the first LP as MPS.
    #[arg(long)]
    lp_dump: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Start point; defaults to the center of the initial box.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    point: Option<Vec<f64>>,
    #[arg(long, default_value_t = 1e-3, value_parser = parse_positive)]
    h: f64,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    /// CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    model: PathBuf,
    /// Tube dump to check.
    dump: PathBuf,
    #[arg(long, default_value_t = 5)]
    grid: usize,
    #[arg(long, default_value_t = 100)]
    mc: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    model: PathBuf,
    dump: PathBuf,
    #[arg(long)]
    svg: PathBuf,
    #[arg(long, default_value = "1,2", value_parser = parse_dims)]
    dims: (usize, usize),
}

#[derive(Clone)]
struct Degrees(Vec<u32>);

/// `None` for `auto`.
#[derive(Clone)]
struct Auto<T>(Option<T>);

fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(|p| p.trim().parse::<T>().map_err(|_| format!("bad list entry `{p}`"))).collect()
}

fn parse_degrees(s: &str) -> std::result::Result<Degrees, String> {
    let d: Vec<u32> = parse_list(s)?;
    if d.is_empty() || d.contains(&0) || d.windows(2).any(|w| w[0] >= w[1]) {
        return Err("degrees must be positive and strictly ascending".into());
    }
    Ok(Degrees(d))
}

fn parse_triple_f64(s: &str) -> std::result::Result<[f64; 3], String> {
    let v: Vec<f64> = parse_list(s)?;
    match v[..] {
        [a, b, c] if a > 0.0 && b > 0.0 && c > 0.0 => Ok([a, b, c]),
        _ => Err("expected three positive numbers".into()),
    }
}

fn parse_orders(s: &str) -> std::result::Result<Auto<[u32; 3]>, String> {
    if s == "auto" {
        return Ok(Auto(None));
    }
    let v: Vec<u32> = parse_list(s)?;
    match v[..] {
        [a, b, c] => Ok(Auto(Some([a, b, c]))),
        _ => Err("expected `auto` or three orders".into()),
    }
}

fn parse_positive(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

fn parse_auto(s: &str) -> std::result::Result<Auto<f64>, String> {
    if s == "auto" {
        Ok(Auto(None))
    } else {
        parse_positive(s).map(|v| Auto(Some(v)))
    }
}

fn parse_dims(s: &str) -> std::result::Result<(usize, usize), String> {
    let v: Vec<usize> = parse_list(s)?;
    match v[..] {
        [i, j] if i >= 1 && j >= 1 && i != j => Ok((i - 1, j - 1)),
        _ => Err("expected two distinct one-based dimensions".into()),
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Model::load(path).map_err(|e| CliError::Usage(e.to_string()))
}

fn check_dims(model: &Model, dims: (usize, usize)) -> Result<()> {
    if dims.0 >= model.nstate() || dims.1 >= model.nstate() {
        return Err(CliError::Usage(format!("--dims out of range for {} state variables", model.nstate())));
    }
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))
}

fn write_svg(model: &Model, segments: &[prbt_core::pipeline::Segment], dims: (usize, usize), path: &Path) -> Result<()> {
    let unsafe_boxes: Vec<_> = model.unsafe_sets.iter().map(|(_, b)| b).collect();
    let names = (model.state_vars[dims.0].as_str(), model.state_vars[dims.1].as_str());
    write(path, &plot::emit_svg(segments, &model.init, &unsafe_boxes, dims, names))
}

/// Uncertainty is redrawn every fiftieth of the initial simulation distance.
fn u_arc(model: &Model, d0: Option<f64>) -> f64 {
    d0.unwrap_or(0.2 * model.modes[model.init_mode].invariant.diameter()) / 50.0
}

fn safety(model: &Model, segments: &[prbt_core::pipeline::Segment]) -> Result<()> {
    if model.unsafe_sets.is_empty() {
        return Ok(());
    }
    match check_safety(segments, &model.unsafe_sets, None) {
        Safety::Safe => {
            println!("safety: SAFE");
            Ok(())
        }
        Safety::Unknown(k) => {
            println!("safety: UNKNOWN (tube {k})");
            Err(CliError::Unknown(format!("tube {k} meets an unsafe box")))
        }
    }
}

fn reach(a: ReachArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    check_dims(&model, a.dims)?;
    let params = Params {
        theta0: a.theta0,
        d0: a.dist0.0,
        theta_min: a.theta_min,
        eps_rel: a.eps_rel,
        opts: a.cert.options(),
        parallel: !a.sequential,
        ..Params::default()
    };
    let prbt = compute_prbt(&model, a.tubes, &params).map_err(|e| CliError::Usage(e.to_string()))?;
    for (k, s) in prbt.segments.iter().enumerate() {
        let degrees: Vec<String> = s.certs.iter().map(|c| c.degree.to_string()).collect();
        println!(
            "tube {k} stage {} mode {} exit {} {} {} degrees [{}]",
            s.stage,
            model.modes[s.mode].id,
            model.state_vars[s.exit.dim],
            s.exit.side.as_str(),
            s.exit.value,
            degrees.join(",")
        );
    }
    for e in &prbt.events {
        let t = &model.transitions[e.transition];
        println!(
            "event {} -> {} at stage {} ({} sub-boxes)",
            model.modes[t.from].id, model.modes[t.to].id, e.stage, e.sub_boxes
        );
    }
    println!("termination: {}", prbt.termination);
    if let Some(path) = &a.out {
        write(path, &TubeDump::new(&model, &params, &prbt).to_json())?;
    }
    if let Some(path) = &a.svg {
        write_svg(&model, &prbt.segments, a.dims, path)?;
    }
    if let Some(k) = a.mc {
        if !prbt.segments.is_empty() {
            let rep = monte_carlo_validate(&model, &prbt.segments, k, a.seed, u_arc(&model, a.dist0.0), params.parallel)
                .map_err(|e| CliError::Usage(e.to_string()))?;
            println!(
                "monte carlo: {} trajectories, {} completed, {} unfinished, {} violations",
                rep.trajectories,
                rep.completed,
                rep.unfinished,
                rep.violations.len()
            );
            if let Some(v) = rep.violations.first() {
                return Err(CliError::Failed(format!("monte carlo violation in tube {}: {:?}", v.segment, v.kind)));
            }
        }
    }
    safety(&model, &prbt.segments)?;
    match prbt.termination {
        Termination::CountReached => Ok(()),
        t => Err(CliError::Failed(format!(
            "stopped after {} tubes: {t}{}",
            prbt.segments.len(),
            prbt.failure.map(|f| format!(" ({f})")).unwrap_or_default()
        ))),
    }
}

fn certify(a: CertifyArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let mode = model.init_mode;
    let target = model
        .unsafe_sets
        .iter()
        .find(|(m, _)| *m == mode)
        .map(|(_, b)| b)
        .ok_or_else(|| CliError::Usage("the model has no unsafe box in its initial mode".into()))?;
    let dynamics = &model.modes[mode].dynamics;
    let p = BarrierProblem {
        init: &model.init,
        domain: &model.modes[mode].invariant,
        uncertainty: &model.uncertainty,
        target,
        dynamics,
    };
    let opts = a.cert.options();
    if let Some(path) = &a.lp_dump {
        let enc = encode_barrier(&p, opts.degrees[0], &opts);
        write(path, &write_mps(&enc.lp, &format!("{}_d{}", model.name, opts.degrees[0])))?;
    }
    let cert = find_robust_barrier(&p, &opts, CertKind::Query)
        .map_err(|e| CliError::Failed(e.to_string()))?
        .ok_or_else(|| CliError::Failed(format!("no certificate of degree {:?}", opts.degrees)))?;
    let rep = verify_certificate(&cert, dynamics, a.grid);
    println!("degree: {}", cert.degree);
    println!("orders: {:?}", cert.orders);
    println!("B = {}", cert.b.to_string_with(&model.state_vars));
    println!(
        "check: min B on X0 {:.6e}, min LfB {:.6e}, max B on target {:.6e}, residual {:.3e}, min multiplier {:.3e}",
        rep.min_init, rep.min_lie, rep.max_target, rep.residual, rep.min_lambda
    );
    if rep.pass() {
        println!("PASS");
        Ok(())
    } else {
        println!("FAIL");
        Err(CliError::Failed("certificate failed the sign check".into()))
    }
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let x0 = a.point.clone().unwrap_or_else(|| model.init.center());
    if x0.len() != model.nstate() {
        return Err(CliError::Usage(format!("--point needs {} coordinates", model.nstate())));
    }
    let fields: Vec<VectorField> = model.modes.iter().map(|m| VectorField::new(&m.dynamics)).collect();
    let u = model.uncertainty.center();
    let mut mode = model.init_mode;
    let mut x = x0;
    let hybrid = !model.is_continuous();
    let mut csv = String::from("t");
    for n in &model.state_vars {
        csv.push(',');
        csv.push_str(n);
    }
    csv.push_str(if hybrid { ",mode\n" } else { "\n" });
    let row = |t: f64, x: &[f64], mode: usize, csv: &mut String| {
        csv.push_str(&t.to_string());
        for v in x {
            csv.push(',');
            csv.push_str(&v.to_string());
        }
        if hybrid {
            csv.push(',');
            csv.push_str(&model.modes[mode].id);
        }
        csv.push('\n');
    };
    row(0.0, &x, mode, &mut csv);
    for k in 1..=a.steps {
        let mut xn = rk4_step(&fields[mode], &x, &u, a.h);
        if xn.iter().any(|v| !v.is_finite()) {
            log::warn!("trajectory diverged at step {k}");
            break;
        }
        if let Some(t) = model.transitions.iter().find(|t| {
            let s = prbt_core::hybrid::guard_plane(&t.guard).side.sign();
            t.from == mode
                && (x[t.guard.var] - t.guard.bound) * s < 0.0
                && (xn[t.guard.var] - t.guard.bound) * s >= 0.0
        }) {
            xn = t.reset.iter().zip(&t.offset).map(|(r, o)| o + r.iter().zip(&xn).map(|(a, b)| a * b).sum::<f64>()).collect();
            mode = t.to;
        }
        x = xn;
        row(k as f64 * a.h, &x, mode, &mut csv);
    }
    match &a.out {
        Some(p) => write(p, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn load_dump(model: &Model, path: &Path) -> Result<(TubeDump, prbt_core::pipeline::PiecewiseTube)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let dump = TubeDump::from_json(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    let prbt = dump.to_prbt(model).map_err(|e| CliError::Usage(e.to_string()))?;
    Ok((dump, prbt))
}

fn check(a: CheckArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    let (dump, prbt) = load_dump(&model, &a.dump)?;
    let mut failures = 0;
    for (k, s) in prbt.segments.iter().enumerate() {
        let dynamics = &model.modes[s.mode].dynamics;
        for (i, c) in s.certs.iter().enumerate() {
            let rep = verify_certificate(c, dynamics, a.grid);
            if !rep.pass() {
                failures += 1;
                println!(
                    "tube {k} cert {i}: FAIL residual {:.3e} (bound {RESIDUAL_BOUND:e}), min multiplier {:.3e} (floor {LAMBDA_FLOOR:e}), min B on X0 {:.3e}, min LfB {:.3e}, max B on target {:.3e}",
                    rep.residual, rep.min_lambda, rep.min_init, rep.min_lie, rep.max_target
                );
            }
        }
    }
    let ncerts: usize = prbt.segments.iter().map(|s| s.certs.len()).sum();
    println!("certificates: {ncerts} checked, {failures} failed");
    if !prbt.segments.is_empty() {
        let rep = monte_carlo_validate(&model, &prbt.segments, a.mc, a.seed, u_arc(&model, dump.params.dist0), true)
            .map_err(|e| CliError::Usage(e.to_string()))?;
        println!(
            "monte carlo: {} trajectories, {} completed, {} unfinished, {} violations",
            rep.trajectories,
            rep.completed,
            rep.unfinished,
            rep.violations.len()
        );
        for v in rep.violations.iter().take(5) {
            println!("  trajectory {} tube {}: {:?} at {:?}", v.trajectory, v.segment, v.kind, v.point);
        }
        failures += rep.violations.len();
    }
    if failures > 0 {
        return Err(CliError::Failed(format!("{failures} check failures")));
    }
    safety(&model, &prbt.segments)
}

fn plot_cmd(a: PlotArgs) -> Result<()> {
    let model = load_model(&a.model)?;
    check_dims(&model, a.dims)?;
    let (_, prbt) = load_dump(&model, &a.dump)?;
    write_svg(&model, &prbt.segments, a.dims, &a.svg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(log::LevelFilter::Warn)
        .filter_module("prbt_core", level)
        .filter_module("prbt", level)
        .format_timestamp(None)
        .init();
    let r = match cli.cmd {
        Cmd::Reach(a) => reach(a),
        Cmd::Certify(a) => certify(a),
        Cmd::Simulate(a) => simulate(a),
        Cmd::Check(a) => check(a),
        Cmd::Plot(a) => plot_cmd(a),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("prbt: {e}");
            ExitCode::from(e.code())
        }
    }
}
