//! Command-line front end for the contagion engine: file-based, seeded,
//! reproducible experiments. Every subcommand writes its result files plus a
//! `manifest.json` (command line, parameters, integrator settings, input
//! digests, seed, version, wall clock) into the output directory; result
//! files are bit-identical for a fixed seed regardless of `--jobs`.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use contagion::analysis::{
    bank_rank, default_probe_bank, phase_diagram, rewire_experiment, save_bankrank_csv,
    save_phase_csv,
};
use contagion::calib::{
    classify_regime, estimate_gamma_with, load_panel, save_gamma_csv, DEFAULT_DENOM_FLOOR,
    DEFAULT_WINDOW_DAYS,
};
use contagion::netgen::{generate, GenSpec, REFERENCE_SEED};
use contagion::{
    load_network, save_network, save_trajectory_csvs, save_verdict_json, simulate,
    ContagionError, HoldingsMatrix, IntegratorConfig, ModelParams, Result, ShockSpec,
};
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(
    name = "contagion",
    version,
    about = "Deterministic bank-asset contagion experiments",
    propagate_version = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Master seed; all randomness derives from it.
    #[arg(long, global = true, default_value_t = REFERENCE_SEED)]
    seed: u64,

    /// Worker threads for sweeps (default: one per CPU core).
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Integrator step override (default: min timescale / 50).
    #[arg(long, global = true)]
    dt: Option<f64>,

    /// Simulation horizon override (default: 200 x max timescale).
    #[arg(long, global = true)]
    tmax: Option<f64>,

    /// Suppress summary and warning output.
    #[arg(long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate one shock scenario and write the trajectory.
    Simulate(SimulateArgs),
    /// Rank banks by the damage done when they sit at their survival
    /// threshold during a probe shock.
    Bankrank(BankrankArgs),
    /// Sweep an (alpha, beta) grid and classify each cell.
    Phase(PhaseArgs),
    /// Estimate the coupling gamma from a bond/equity price panel.
    Calibrate(CalibrateArgs),
    /// Generate a synthetic bank-asset network.
    Generate(GenerateArgs),
    /// Rerun one shock on randomly rewired copies of a network.
    Rewire(RewireArgs),
}

#[derive(Args)]
struct NetArgs {
    /// Holdings CSV (bank_id,asset_id,amount).
    #[arg(long)]
    holdings: PathBuf,
    /// Banks CSV (bank_id,equity,cash_minus_liability).
    #[arg(long)]
    banks: PathBuf,
}

#[derive(Args)]
struct ShockArgs {
    /// Relative equity shock applied at t = 0 (e.g. -0.1).
    #[arg(long, default_value_t = -0.1, allow_negative_numbers = true)]
    shock: f64,
    /// Bank to shock (default: the bank with the largest holdings).
    #[arg(long)]
    shock_bank: Option<String>,
}

impl ShockArgs {
    fn resolve(&self, net: &HoldingsMatrix) -> ShockSpec {
        let bank = self
            .shock_bank
            .clone()
            .unwrap_or_else(|| default_probe_bank(net).to_string());
        ShockSpec::new(bank, self.shock)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    /// Market reaction timescale.
    #[arg(long, default_value_t = 1.0)]
    tau_a: f64,
    /// Bank reaction timescale.
    #[arg(long, default_value_t = 1.0)]
    tau_b: f64,
    #[command(flatten)]
    shock: ShockArgs,
}

#[derive(Args)]
struct BankrankArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    #[command(flatten)]
    shock: ShockArgs,
    /// Leave baseline-failing banks at their input equity instead of
    /// raising it to their total holdings first.
    #[arg(long)]
    no_fortify: bool,
}

#[derive(Args)]
struct PhaseArgs {
    #[command(flatten)]
    net: NetArgs,
    /// Grid values: a single number or START:STOP:STEP (inclusive).
    #[arg(long, allow_hyphen_values = true)]
    alpha: String,
    /// Grid values: a single number or START:STOP:STEP (inclusive).
    #[arg(long, allow_hyphen_values = true)]
    beta: String,
    #[command(flatten)]
    shock: ShockArgs,
}

#[derive(Args)]
struct CalibrateArgs {
    /// Panel CSV (date,series_id,series_type,value).
    #[arg(long)]
    panel: PathBuf,
    /// Window length in trading days.
    #[arg(long, default_value_t = DEFAULT_WINDOW_DAYS)]
    window: usize,
    /// Days between window starts (default: the window length).
    #[arg(long)]
    stride: Option<usize>,
    /// Trailing moving-average width applied before estimating.
    #[arg(long)]
    smooth: Option<usize>,
    /// Assets whose equity return is below this in magnitude are dropped.
    #[arg(long, default_value_t = DEFAULT_DENOM_FLOOR)]
    floor: f64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 121)]
    banks: usize,
    #[arg(long, default_value_t = 5)]
    assets: usize,
    /// Mean of ln(weight) for present holdings.
    #[arg(long, default_value_t = GenSpec::default().log_mu, allow_negative_numbers = true)]
    log_mu: f64,
    /// Std of ln(weight) for present holdings.
    #[arg(long, default_value_t = 2.5)]
    log_sigma: f64,
    /// Probability that a bank holds a given asset.
    #[arg(long, default_value_t = 0.3)]
    sparsity: f64,
    /// Lower bound of equity as a multiple of total holdings.
    #[arg(long, default_value_t = 0.05)]
    equity_lo: f64,
    /// Upper bound of equity as a multiple of total holdings.
    #[arg(long, default_value_t = 1.0)]
    equity_hi: f64,
}

#[derive(Args)]
struct RewireArgs {
    #[command(flatten)]
    net: NetArgs,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f64,
    #[arg(long, allow_negative_numbers = true)]
    beta: f64,
    #[command(flatten)]
    shock: ShockArgs,
    #[arg(long, default_value_t = 20)]
    trials: u64,
    /// Permute whole bank rows instead of each asset column independently.
    #[arg(long)]
    global_rows: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            // 2: bad request; 3: bad data; 4: the integration itself failed.
            let code = match e {
                ContagionError::Shock(_)
                | ContagionError::Config(_)
                | ContagionError::UnknownBank(_) => 2,
                ContagionError::Parse { .. }
                | ContagionError::Io(_)
                | ContagionError::Validation(_)
                | ContagionError::EmptyNetwork(_) => 3,
                ContagionError::NonFinite { .. } => 4,
            };
            ExitCode::from(code)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    let started = SystemTime::now();
    let t0 = Instant::now();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(ContagionError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| ContagionError::Config(format!("worker pool: {e}")))?;
    }
    std::fs::create_dir_all(&cli.out)?;

    let (params_json, inputs) = match &cli.command {
        Command::Simulate(a) => cmd_simulate(cli, a)?,
        Command::Bankrank(a) => cmd_bankrank(cli, a)?,
        Command::Phase(a) => cmd_phase(cli, a)?,
        Command::Calibrate(a) => cmd_calibrate(cli, a)?,
        Command::Generate(a) => cmd_generate(cli, a)?,
        Command::Rewire(a) => cmd_rewire(cli, a)?,
    };

    write_manifest(cli, params_json, &inputs, started, t0)
}

/// What each subcommand hands back for the manifest: its parameter record
/// and the input files that went into the run.
type CmdOutcome = (serde_json::Value, Vec<PathBuf>);

/// Stats `path` up front so a missing input names itself instead of
/// surfacing as a bare "No such file or directory".
fn require_file(path: &Path) -> Result<()> {
    std::fs::metadata(path).map_err(|e| {
        ContagionError::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    Ok(())
}

fn load_net(cli: &Cli, net: &NetArgs) -> Result<HoldingsMatrix> {
    require_file(&net.holdings)?;
    require_file(&net.banks)?;
    let (loaded, summary) = load_network(&net.holdings, &net.banks)?;
    if !cli.quiet {
        for id in &summary.dropped_banks {
            eprintln!("warning: dropped bank {id} (non-positive equity or no holdings)");
        }
        for id in &summary.dropped_assets {
            eprintln!("warning: dropped asset {id} (no holders left)");
        }
    }
    Ok(loaded)
}

fn integrator_config(cli: &Cli, params: &ModelParams) -> IntegratorConfig {
    let mut cfg = IntegratorConfig::for_params(params);
    if let Some(dt) = cli.dt {
        cfg.dt = dt;
    }
    if let Some(tmax) = cli.tmax {
        cfg.t_max = tmax;
    }
    cfg
}

fn config_json(cfg: &IntegratorConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("config serializes")
}

fn cmd_simulate(cli: &Cli, a: &SimulateArgs) -> Result<CmdOutcome> {
    let net = load_net(cli, &a.net)?;
    let params = ModelParams::with_taus(a.alpha, a.beta, a.tau_a, a.tau_b);
    let cfg = integrator_config(cli, &params);
    let shock = a.shock.resolve(&net);

    let traj = simulate(&net, params, cfg, Some(&shock))?;
    save_trajectory_csvs(
        &traj,
        &net,
        cli.out.join("prices.csv"),
        cli.out.join("equities.csv"),
    )?;
    save_verdict_json(&traj, cli.out.join("verdict.json"))?;
    if !cli.quiet {
        println!(
            "{}: relaxation time {}, {} failed of {} banks; wrote prices.csv, \
             equities.csv, verdict.json",
            traj.verdict,
            traj.relaxation_time,
            traj.failures.len(),
            net.n_banks()
        );
    }
    Ok((
        serde_json::json!({
            "alpha": a.alpha, "beta": a.beta, "tau_a": a.tau_a, "tau_b": a.tau_b,
            "shock": shock.relative_size, "shock_bank": shock.bank_id,
            "config": config_json(&cfg),
        }),
        vec![a.net.holdings.clone(), a.net.banks.clone()],
    ))
}

fn cmd_bankrank(cli: &Cli, a: &BankrankArgs) -> Result<CmdOutcome> {
    let net = load_net(cli, &a.net)?;
    let params = ModelParams::new(a.alpha, a.beta);
    let cfg = integrator_config(cli, &params);
    let shock = a.shock.resolve(&net);
    let fortify = !a.no_fortify;

    let reports = bank_rank(&net, params, &cfg, &shock, fortify)?;
    save_bankrank_csv(&reports, cli.out.join("bankrank.csv"))?;
    if !cli.quiet {
        let flagged = reports.iter().filter(|r| r.error.is_some()).count();
        let head: Vec<String> = reports
            .iter()
            .take(3)
            .map(|r| format!("{} ({:.4})", r.bank_id, r.rank_value))
            .collect();
        println!(
            "ranked {} banks (probe {}, fortify {}), most damaging: {}{}; wrote bankrank.csv",
            reports.len(),
            shock.bank_id,
            fortify,
            head.join(", "),
            if flagged > 0 {
                format!("; {flagged} banks flagged with errors")
            } else {
                String::new()
            }
        );
    }
    Ok((
        serde_json::json!({
            "alpha": a.alpha, "beta": a.beta,
            "shock": shock.relative_size, "shock_bank": shock.bank_id,
            "fortify": fortify,
            "config": config_json(&cfg),
        }),
        vec![a.net.holdings.clone(), a.net.banks.clone()],
    ))
}

fn cmd_phase(cli: &Cli, a: &PhaseArgs) -> Result<CmdOutcome> {
    let net = load_net(cli, &a.net)?;
    let alphas = parse_grid("--alpha", &a.alpha)?;
    let betas = parse_grid("--beta", &a.beta)?;
    // Cells fix the timescales at 1, so defaults follow tau = 1.
    let cfg = integrator_config(cli, &ModelParams::new(1.0, 1.0));
    let shock = a.shock.resolve(&net);

    let grid = phase_diagram(&net, &alphas, &betas, &cfg, &shock)?;
    save_phase_csv(&grid, cli.out.join("phase.csv"))?;
    if !cli.quiet {
        let mut counts = std::collections::BTreeMap::new();
        for v in &grid.verdicts {
            *counts.entry(v.as_str()).or_insert(0usize) += 1;
        }
        let summary: Vec<String> = counts.iter().map(|(v, n)| format!("{n} {v}")).collect();
        println!(
            "{} x {} grid: {}; wrote phase.csv",
            alphas.len(),
            betas.len(),
            summary.join(", ")
        );
    }
    Ok((
        serde_json::json!({
            "alpha": a.alpha, "beta": a.beta,
            "alpha_values": alphas, "beta_values": betas,
            "shock": shock.relative_size, "shock_bank": shock.bank_id,
            "config": config_json(&cfg),
        }),
        vec![a.net.holdings.clone(), a.net.banks.clone()],
    ))
}

fn cmd_calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<CmdOutcome> {
    require_file(&a.panel)?;
    let mut panel = load_panel(&a.panel)?;
    panel.smoothing = a.smooth;
    let stride = a.stride.unwrap_or(a.window);
    let estimates = estimate_gamma_with(&panel, a.window, stride, a.floor)?;
    save_gamma_csv(&estimates, cli.out.join("gamma.csv"))?;
    if !cli.quiet {
        for est in &estimates {
            if est.all_dropped {
                println!(
                    "{}..{}: all assets dropped by the return floor",
                    est.window_start, est.window_end
                );
            } else {
                println!(
                    "{}..{}: gamma = {:.4} +- {:.4} over {} assets ({})",
                    est.window_start,
                    est.window_end,
                    est.mean,
                    est.std,
                    est.per_asset.len(),
                    classify_regime(est).as_str()
                );
            }
        }
        println!("wrote gamma.csv ({} windows)", estimates.len());
    }
    Ok((
        serde_json::json!({
            "window": a.window, "stride": stride,
            "smooth": a.smooth, "floor": a.floor,
        }),
        vec![a.panel.clone()],
    ))
}

fn cmd_generate(cli: &Cli, a: &GenerateArgs) -> Result<CmdOutcome> {
    let spec = GenSpec {
        n_banks: a.banks,
        n_assets: a.assets,
        log_mu: a.log_mu,
        log_sigma: a.log_sigma,
        sparsity: a.sparsity,
        equity_multiple: (a.equity_lo, a.equity_hi),
        seed: cli.seed,
    };
    let net = generate(&spec)?;
    save_network(
        &net,
        cli.out.join("holdings.csv"),
        cli.out.join("banks.csv"),
    )?;
    if !cli.quiet {
        println!(
            "generated {} banks x {} assets (seed {}); wrote holdings.csv, banks.csv",
            net.n_banks(),
            net.n_assets(),
            cli.seed
        );
    }
    Ok((
        serde_json::to_value(&spec).expect("spec serializes"),
        Vec::new(),
    ))
}

fn cmd_rewire(cli: &Cli, a: &RewireArgs) -> Result<CmdOutcome> {
    let net = load_net(cli, &a.net)?;
    let params = ModelParams::new(a.alpha, a.beta);
    let cfg = integrator_config(cli, &params);
    let shock = a.shock.resolve(&net);

    let trials = rewire_experiment(
        &net,
        params,
        &cfg,
        &shock,
        cli.seed,
        a.trials,
        a.global_rows,
    )?;
    let mut csv = String::from("trial,asset_id,final_price\n");
    for t in &trials {
        for (mu, p) in t.final_prices.iter().enumerate() {
            use std::fmt::Write as _;
            let _ = writeln!(csv, "{},{},{}", t.trial, net.assets[mu].id, p);
        }
    }
    std::fs::write(cli.out.join("rewire.csv"), csv)?;
    if !cli.quiet {
        let mut worst: Vec<&str> = trials
            .iter()
            .map(|t| {
                let mu = t
                    .final_prices
                    .iter()
                    .enumerate()
                    .min_by(|x, y| x.1.partial_cmp(y.1).expect("finite prices"))
                    .expect("at least one asset")
                    .0;
                net.assets[mu].id.as_str()
            })
            .collect();
        worst.sort_unstable();
        worst.dedup();
        println!(
            "{} rewiring trials (seed {}): worst-hit asset takes {} distinct values ({}); \
             wrote rewire.csv",
            trials.len(),
            cli.seed,
            worst.len(),
            worst.join(" ")
        );
    }
    Ok((
        serde_json::json!({
            "alpha": a.alpha, "beta": a.beta,
            "shock": shock.relative_size, "shock_bank": shock.bank_id,
            "trials": a.trials, "global_rows": a.global_rows,
            "config": config_json(&cfg),
        }),
        vec![a.net.holdings.clone(), a.net.banks.clone()],
    ))
}

/// Parses a grid flag: either one number or `START:STOP:STEP` with both
/// endpoints included (the top endpoint within 1e-12 relative slack, so
/// `0.1:3:0.1` really ends at 3).
fn parse_grid(flag: &str, text: &str) -> Result<Vec<f64>> {
    let bad = |msg: String| ContagionError::Config(format!("{flag}: {msg}"));
    let num = |s: &str| -> Result<f64> {
        s.trim()
            .parse::<f64>()
            .map_err(|_| bad(format!("{s:?} is not a number")))
            .and_then(|v| {
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(bad(format!("{s:?} is not finite")))
                }
            })
    };
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        [one] => Ok(vec![num(one)?]),
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if step <= 0.0 {
                return Err(bad(format!("step must be positive, got {step}")));
            }
            if stop < start {
                return Err(bad(format!("stop {stop} is below start {start}")));
            }
            let slack = 1e-12 * stop.abs().max(1.0);
            let mut values = Vec::new();
            let mut k = 0u64;
            loop {
                let v = start + k as f64 * step;
                if v > stop + slack {
                    break;
                }
                values.push(v);
                k += 1;
            }
            Ok(values)
        }
        _ => Err(bad(format!(
            "expected VALUE or START:STOP:STEP, got {text:?}"
        ))),
    }
}

fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    let digest = hasher.finalize();
    let mut hex = String::with_capacity(2 * digest.len());
    for b in digest {
        use std::fmt::Write as _;
        let _ = write!(hex, "{b:02x}");
    }
    Ok(hex)
}

fn write_manifest(
    cli: &Cli,
    params: serde_json::Value,
    inputs: &[PathBuf],
    started: SystemTime,
    t0: Instant,
) -> Result<()> {
    let mut digests = serde_json::Map::new();
    for path in inputs {
        digests.insert(
            path.display().to_string(),
            serde_json::Value::String(format!("sha256:{}", sha256_hex(path)?)),
        );
    }
    let manifest = serde_json::json!({
        "command": std::env::args().collect::<Vec<_>>(),
        "params": params,
        "inputs": digests,
        "seed": cli.seed,
        "jobs": cli.jobs,
        "version": env!("CARGO_PKG_VERSION"),
        "started_unix": started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
        "elapsed_seconds": t0.elapsed().as_secs_f64(),
    });
    let text = serde_json::to_string_pretty(&manifest).expect("static JSON shape");
    std::fs::write(cli.out.join("manifest.json"), text + "\n")?;
    Ok(())
}
