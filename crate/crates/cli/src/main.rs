mod config;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vmimo_ips::analytic::{analytic_report, asymptotics_report};
use vmimo_ips::engine::{
    estimate_ips, replication_seed, run_replications, run_scenario_traced, Budget, SchemeKind, SlotRecord,
};
use vmimo_ips::experiments::{
    compare_schemes, emit_csv, emit_gain_csv, emit_meta, format_sig6, gain_csv, grid, run_sweep, SweepParam,
    SweepSpec,
};
use vmimo_ips::model::{RawThresholds, ScenarioParams};
use vmimo_ips::validate::Suite;
use vmimo_ips::Error;

use config::ConfigFile;

/// Information propagation speed of virtual-MIMO broadcast on a two-lane
/// highway. All quantities are SI: metres, seconds, vehicles per metre.
#[derive(Debug, Parser)]
#[command(name = "vmimo-ips", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate the closed-form model.
    Analytic {
        #[command(flatten)]
        params: ParamArgs,
        /// Also write the report as a one-row CSV.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Simulate one scheme at one parameter point.
    Simulate {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        /// vmimo, flooding or reverse_aided [default: vmimo]
        #[arg(long)]
        scheme: Option<String>,
        /// Slots per reverse_aided hop.
        #[arg(long)]
        handshake_slots: Option<u32>,
        /// Write the per-slot trace of the first replication as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Sweep one parameter and write the results table.
    Sweep {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        /// Comma-separated schemes.
        #[arg(long, default_value = "vmimo,flooding,reverse_aided")]
        schemes: String,
        #[arg(long)]
        handshake_slots: Option<u32>,
        #[arg(long, default_value = "sweep.csv")]
        output: PathBuf,
    },
    /// Sweep one parameter for vmimo and flooding and write the gain table.
    Compare {
        #[command(flatten)]
        params: ParamArgs,
        #[command(flatten)]
        run: RunArgs,
        #[command(flatten)]
        sweep: SweepArgs,
        #[arg(long, default_value = "gain.csv")]
        output: PathBuf,
    },
    /// Run the property suite; exits 1 if any check fails.
    Validate {
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Debug, Args)]
struct ParamArgs {
    /// Reverse-lane density, vehicles/m.
    #[arg(long)]
    lambda_r: Option<f64>,
    /// Forward-lane density, vehicles/m.
    #[arg(long)]
    lambda_f: Option<f64>,
    /// Vehicle ground speed, m/s.
    #[arg(long)]
    v: Option<f64>,
    /// Transmission range, m.
    #[arg(long)]
    r: Option<f64>,
    /// Detection range, m.
    #[arg(long = "R")]
    big_r: Option<f64>,
    /// Slot duration, s.
    #[arg(long)]
    tau: Option<f64>,
    /// Link budget αP_t/N_0; with the two thresholds replaces --r and --R.
    #[arg(long)]
    alpha_pt_over_n0: Option<f64>,
    #[arg(long)]
    gamma_dec: Option<f64>,
    #[arg(long)]
    gamma_det: Option<f64>,
    /// key=value file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<u32>,
    #[arg(long)]
    max_slots: Option<u64>,
    /// Stop a replication after this many measured cycles (0 = run to max-slots).
    #[arg(long)]
    min_cycles: Option<u32>,
    /// Worker threads (0 = all available processors).
    #[arg(long)]
    workers: Option<usize>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// lambda_r, lambda_f, lambda (total, split evenly), v or R.
    #[arg(long)]
    param: String,
    #[arg(long)]
    from: f64,
    #[arg(long)]
    to: f64,
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// Geometric instead of linear spacing.
    #[arg(long)]
    log: bool,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidInput(m) => Failure::Usage(m),
            Error::UnderBudget(m) => Failure::Usage(format!("budget too small: {m}")),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

type CliResult<T> = Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CliResult<ConfigFile> {
    match path {
        Some(p) => ConfigFile::load(p).map_err(Failure::Usage),
        None => Ok(ConfigFile::default()),
    }
}

fn pick<T: std::str::FromStr>(flag: Option<T>, file: &ConfigFile, key: &str) -> CliResult<Option<T>> {
    match flag {
        Some(x) => Ok(Some(x)),
        None => file.get(key).map_err(Failure::Usage),
    }
}

fn resolve_params(args: &ParamArgs, file: &ConfigFile) -> CliResult<ScenarioParams> {
    let d = ScenarioParams::default();
    let lambda_r = pick(args.lambda_r, file, "lambda_r")?.unwrap_or(d.lambda_r);
    let lambda_f = pick(args.lambda_f, file, "lambda_f")?.unwrap_or(d.lambda_f);
    let v = pick(args.v, file, "v")?.unwrap_or(d.v);
    let tau = pick(args.tau, file, "tau")?.unwrap_or(d.tau);
    let budget = (
        pick(args.alpha_pt_over_n0, file, "alpha_pt_over_n0")?,
        pick(args.gamma_dec, file, "gamma_dec")?,
        pick(args.gamma_det, file, "gamma_det")?,
    );
    let r = pick(args.r, file, "r")?;
    let big_r = pick(args.big_r, file, "R")?;
    let params = match budget {
        (None, None, None) => ScenarioParams {
            lambda_r,
            lambda_f,
            v,
            tx_range: r.unwrap_or(d.tx_range),
            detect_range: big_r.unwrap_or(d.detect_range),
            tau,
            thresholds: None,
        },
        (Some(alpha_pt_over_n0), Some(gamma_dec), Some(gamma_det)) => {
            if r.is_some() || big_r.is_some() {
                return Err(Failure::Usage("give either --r/--R or the link-budget thresholds, not both".into()));
            }
            let t = RawThresholds { alpha_pt_over_n0, gamma_dec, gamma_det };
            ScenarioParams::from_thresholds(lambda_r, lambda_f, v, tau, t)?
        }
        _ => {
            return Err(Failure::Usage(
                "--alpha-pt-over-n0, --gamma-dec and --gamma-det must be given together".into(),
            ))
        }
    };
    Ok(params)
}

struct RunSettings {
    seed: u64,
    replications: u32,
    budget: Budget,
    workers: usize,
}

fn resolve_run(args: &RunArgs, file: &ConfigFile) -> CliResult<RunSettings> {
    let d = Budget::default();
    let budget = Budget {
        max_slots: pick(args.max_slots, file, "max_slots")?.unwrap_or(d.max_slots),
        min_cycles: pick(args.min_cycles, file, "min_cycles")?.unwrap_or(d.min_cycles),
        ..d
    };
    budget.validate()?;
    Ok(RunSettings {
        seed: pick(args.seed, file, "seed")?.unwrap_or(1),
        replications: pick(args.replications, file, "replications")?.unwrap_or(30),
        budget,
        workers: pick(args.workers, file, "workers")?.unwrap_or(0),
    })
}

fn resolve_scheme(name: &str, handshake: Option<u32>, file: &ConfigFile) -> CliResult<SchemeKind> {
    let scheme: SchemeKind = name.parse()?;
    let handshake = pick(handshake, file, "handshake_slots")?;
    let scheme = match (scheme, handshake) {
        (SchemeKind::ReverseAided { .. }, Some(h)) => SchemeKind::ReverseAided { handshake_slots: h },
        (s, _) => s,
    };
    scheme.validate()?;
    Ok(scheme)
}

fn row(label: &str, value: impl std::fmt::Display) -> String {
    format!("{label:<28}{value}\n")
}

fn cmd_analytic(args: &ParamArgs, output: Option<&Path>) -> CliResult<String> {
    let file = load_config(args.config.as_deref())?;
    let params = resolve_params(args, &file)?;
    let rep = analytic_report(&params)?;
    let asy = asymptotics_report(&params)?;
    let (t, e) = (rep.transition, rep.expectations);
    let g = format_sig6;
    let mut s = String::new();
    s += &row("parameters", params);
    s += &row("p_b", g(t.p_b));
    s += &row("p_f", g(t.p_f));
    s += &row("p_r", g(t.p_r));
    s += &row("sigma1", g(t.sigma1));
    s += &row("sigma2", g(t.sigma2));
    s += &row("E[D_mprop] (m)", g(e.e_d_mprop));
    s += &row("E[T_prop] (s)", g(e.e_t_prop));
    s += &row("E[D_prop] (m)", g(e.e_d_prop));
    s += &row("E[T_prop_II] (s)", g(e.e_t_prop2));
    s += &row("E[D_prop_II] (m)", g(e.e_d_prop2));
    s += &row("E[T_stop] (s)", g(e.e_t_stop));
    s += &row("ips_vmimo (m/s)", g(rep.ips_vmimo));
    s += &row("ips_conventional (m/s)", g(rep.ips_conventional));
    s += &row("gain", g(rep.gain));
    s += &row("high_density_approx (m/s)", g(asy.high_density_approx));
    s += &row("high_density_limit (m/s)", g(asy.high_density_limit));
    s += &row("infinite_speed_limit (m/s)", g(asy.infinite_speed_limit));
    s += &row("gain_high_density_approx", g(asy.gain_high_density_approx));
    s += &row("gain_limit", g(asy.gain_limit));

    if let Some(path) = output {
        let header = "lambda_r,lambda_f,v,r,R,tau,p_b,sigma1,sigma2,e_t_prop,e_d_prop,e_t_stop,ips_vmimo,ips_conventional,gain";
        let values = [
            params.lambda_r,
            params.lambda_f,
            params.v,
            params.tx_range,
            params.detect_range,
            params.tau,
            t.p_b,
            t.sigma1,
            t.sigma2,
            e.e_t_prop,
            e.e_d_prop,
            e.e_t_stop,
            rep.ips_vmimo,
            rep.ips_conventional,
            rep.gain,
        ]
        .map(g)
        .join(",");
        std::fs::write(path, format!("{header}\n{values}\n"))
            .map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(s)
}

fn write_trace(
    path: &Path,
    params: &ScenarioParams,
    scheme: SchemeKind,
    run: &RunSettings,
) -> CliResult<()> {
    let io_err = |e: std::io::Error| Failure::Runtime(format!("cannot write {}: {e}", path.display()));
    let mut out = BufWriter::new(File::create(path).map_err(io_err)?);
    writeln!(out, "{}", SlotRecord::CSV_HEADER).map_err(io_err)?;
    let mut failed = None;
    run_scenario_traced(params, scheme, &run.budget, replication_seed(run.seed, 0), |rec| {
        if failed.is_none() {
            if let Err(e) = writeln!(out, "{}", rec.csv_line()) {
                failed = Some(e);
            }
        }
    })?;
    if let Some(e) = failed {
        return Err(io_err(e));
    }
    out.flush().map_err(io_err)
}

fn cmd_simulate(
    args: &ParamArgs,
    run_args: &RunArgs,
    scheme: Option<&str>,
    handshake: Option<u32>,
    trace: Option<&Path>,
) -> CliResult<String> {
    let file = load_config(args.config.as_deref())?;
    let params = resolve_params(args, &file)?;
    params.validate_for_simulation()?;
    let run = resolve_run(run_args, &file)?;
    let name = pick(scheme.map(str::to_string), &file, "scheme")?.unwrap_or_else(|| "vmimo".into());
    let scheme = resolve_scheme(&name, handshake, &file)?;
    if run.replications < 2 {
        return Err(Failure::Usage("requires replications >= 2".into()));
    }
    let reps = run_replications(&params, scheme, &run.budget, run.replications, run.seed, run.workers)?;
    let est = estimate_ips(&reps)?;
    if let Some(path) = trace {
        write_trace(path, &params, scheme, &run)?;
    }
    let g = format_sig6;
    let mut s = String::new();
    s += &row("parameters", params);
    s += &row("scheme", scheme);
    if let SchemeKind::ReverseAided { handshake_slots } = scheme {
        s += &row("handshake_slots", handshake_slots);
    }
    s += &row("seed", run.seed);
    s += &row("replications", est.replications);
    s += &row("ips_mean (m/s)", g(est.mean));
    s += &row("ips_ci95_halfwidth (m/s)", g(est.ci95_halfwidth));
    s += &row("measured_slots_per_rep", g(est.slots_per_rep));
    s += &row("warmup_slots_per_rep", g(est.warmup_slots));
    let analytic = match scheme {
        SchemeKind::Vmimo => analytic_report(&params).ok().map(|r| r.ips_vmimo),
        SchemeKind::Flooding => analytic_report(&params).ok().map(|r| r.ips_conventional),
        SchemeKind::ReverseAided { .. } => None,
    };
    if let Some(a) = analytic {
        s += &row("ips_analytic (m/s)", g(a));
    }
    Ok(s)
}

fn build_spec(
    args: &ParamArgs,
    run_args: &RunArgs,
    sweep: &SweepArgs,
    schemes: Vec<SchemeKind>,
) -> CliResult<(SweepSpec, usize)> {
    let file = load_config(args.config.as_deref())?;
    let fixed = resolve_params(args, &file)?;
    let run = resolve_run(run_args, &file)?;
    let spec = SweepSpec {
        varying: sweep.param.parse::<SweepParam>()?,
        values: grid(sweep.from, sweep.to, sweep.steps, sweep.log)?,
        fixed,
        schemes,
        replications: run.replications,
        budget: run.budget,
        base_seed: run.seed,
    };
    spec.validate()?;
    Ok((spec, run.workers))
}

fn cmd_sweep(
    args: &ParamArgs,
    run_args: &RunArgs,
    sweep: &SweepArgs,
    schemes: &str,
    handshake: Option<u32>,
    output: &Path,
) -> CliResult<String> {
    let file = load_config(args.config.as_deref())?;
    let schemes = schemes
        .split(',')
        .map(|s| resolve_scheme(s.trim(), handshake, &file))
        .collect::<CliResult<Vec<_>>>()?;
    let (spec, workers) = build_spec(args, run_args, sweep, schemes)?;
    let rows = run_sweep(&spec, workers)?;
    emit_csv(&rows, output)?;
    emit_meta(&spec, &rows, output)?;
    let failed = rows.iter().filter(|r| r.failed()).count();
    let mut s = format!("wrote {} rows to {}\n", rows.len(), output.display());
    for r in rows.iter().filter(|r| r.failed()) {
        s += &format!("failed: {} {}: {}\n", r.params, r.scheme, r.error.as_deref().unwrap_or(""));
    }
    if failed > 0 {
        return Err(Failure::Runtime(format!("{s}{failed} row(s) failed")));
    }
    Ok(s)
}

fn cmd_compare(args: &ParamArgs, run_args: &RunArgs, sweep: &SweepArgs, output: &Path) -> CliResult<String> {
    let (spec, workers) = build_spec(args, run_args, sweep, vec![SchemeKind::Vmimo, SchemeKind::Flooding])?;
    let rows = run_sweep(&spec, workers)?;
    let table = compare_schemes(&rows);
    emit_gain_csv(&table, output)?;
    let mut s = gain_csv(&table);
    for w in &table.warnings {
        s += &format!("warning: {w}\n");
    }
    Ok(s)
}

fn cmd_validate(run_args: &RunArgs) -> CliResult<String> {
    let run = resolve_run(run_args, &ConfigFile::default())?;
    let suite = Suite {
        seed: run.seed,
        workers: run.workers,
        replications: run.replications.max(2),
        budget: run.budget,
    };
    let outcomes = suite.run();
    let mut s = String::new();
    for o in &outcomes {
        s += &format!("{o}\n");
    }
    let passed = outcomes.iter().filter(|o| o.passed).count();
    s += &format!("{passed}/{} checks passed\n", outcomes.len());
    if passed == outcomes.len() {
        Ok(s)
    } else {
        Err(Failure::Runtime(s))
    }
}

fn dispatch(cli: &Cli) -> CliResult<String> {
    match &cli.command {
        Command::Analytic { params, output } => cmd_analytic(params, output.as_deref()),
        Command::Simulate { params, run, scheme, handshake_slots, trace } => {
            cmd_simulate(params, run, scheme.as_deref(), *handshake_slots, trace.as_deref())
        }
        Command::Sweep { params, run, sweep, schemes, handshake_slots, output } => {
            cmd_sweep(params, run, sweep, schemes, *handshake_slots, output)
        }
        Command::Compare { params, run, sweep, output } => cmd_compare(params, run, sweep, output),
        Command::Validate { run } => cmd_validate(run),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            if msg.contains('\n') {
                print!("{msg}");
                if !msg.ends_with('\n') {
                    println!();
                }
            } else {
                eprintln!("error: {msg}");
            }
            ExitCode::from(1)
        }
    }
}
