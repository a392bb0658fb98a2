mod manifest;

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use gridid::dispatch::GridModel;
use gridid::lpsolve::SolveOptions;
use gridid::marketsim::{self, PriceDataset, SimulationConfig};
use gridid::netmodel::GridTopology;
use gridid::recovery::{admm_solve, AdmmSettings, Kappa, RecoveryResult, ResultMeta};
use gridid::tuneval::{self, EvalReport, KappaGrid, TuningConfig, TuningReport};
use gridid::{textio, tolerances};
use nalgebra::DMatrix;
use serde::Serialize;
use serde_json::json;

use manifest::{file_digest, RunManifest};

pub const REPORT_FORMAT: u32 = 1;

#[derive(Parser)]
#[command(
    name = "gridid",
    version,
    about = "Simulate nodal electricity prices on a DC grid and recover the grid Laplacian from them",
    after_help = "Set GRIDID_LOG (error, warn, info, debug, trace) to control log output on stderr."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a day of market clearing and write the congestion price dataset.
    Simulate(SimulateArgs),
    /// Grid-search the regularization weights by masked-entry reconstruction.
    Tune(TuneArgs),
    /// Estimate the reduced Laplacian and congestion sources from a dataset.
    Recover(RecoverArgs),
    /// Score a recovery result against the true grid.
    Evaluate(EvaluateArgs),
    /// Simulate, recover and evaluate on a built-in grid in one go.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SimulateArgs {
    /// Grid file (JSON); defaults to the built-in IEEE 14-bus grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Simulation config (JSON); defaults to the built-in 14-bus day.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the price noise level in the config.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    /// Write the final simplex tableau of every interval to this file.
    #[arg(long)]
    lp_dump: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct AdmmArgs {
    #[arg(long, default_value_t = 1e3)]
    rho: f64,
    #[arg(long, default_value_t = tolerances::ADMM_EPS_ABS)]
    eps_abs: f64,
    #[arg(long, default_value_t = tolerances::ADMM_EPS_REL)]
    eps_rel: f64,
    /// Rebalance rho when the residuals drift apart by more than 10x.
    #[arg(long)]
    adaptive_rho: bool,
}

impl AdmmArgs {
    fn settings(&self, max_iter: usize) -> AdmmSettings {
        let mut s = AdmmSettings::with_rho(self.rho);
        s.stop.eps_abs = self.eps_abs;
        s.stop.eps_rel = self.eps_rel;
        s.stop.max_iter = max_iter;
        s.adaptive_rho = self.adaptive_rho;
        s
    }
}

#[derive(Args)]
struct TuneArgs {
    #[arg(long)]
    data: PathBuf,
    /// Kappa grid (JSON with arrays k1..k4); defaults to 0.1x, 1x, 10x the
    /// 14-bus weights.
    #[arg(long)]
    grid: Option<PathBuf>,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    /// Fraction of price entries hidden per repeat.
    #[arg(long, default_value_t = 0.1)]
    mask: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// ADMM iteration cap per candidate run.
    #[arg(long, default_value_t = tolerances::TUNING_MAX_ITER)]
    max_iter: usize,
    #[command(flatten)]
    admm: AdmmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RecoverArgs {
    #[arg(long)]
    data: PathBuf,
    /// Weights as k1,k2,k3,k4.
    #[arg(long, default_value_t = Kappa::ieee14())]
    kappa: Kappa,
    #[arg(long, default_value_t = tolerances::ADMM_MAX_ITER)]
    max_iter: usize,
    #[command(flatten)]
    admm: AdmmArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    result: PathBuf,
    /// Grid file holding the true topology.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long, default_value_t = tolerances::EDGE_TAU)]
    tau: f64,
    /// Report file; defaults to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write plain CSV files for plotting into this directory.
    #[arg(long)]
    plot_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fixture {
    Ieee14,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long, value_enum, default_value = "ieee14")]
    fixture: Fixture,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = Kappa::ieee14())]
    kappa: Kappa,
    /// Pick kappa by grid search first (slow); --kappa is then ignored.
    #[arg(long)]
    tune: bool,
    #[arg(long, default_value_t = 10)]
    repeats: usize,
    #[arg(long, default_value_t = tolerances::ADMM_MAX_ITER)]
    max_iter: usize,
    #[command(flatten)]
    admm: AdmmArgs,
    #[arg(long, default_value_t = tolerances::EDGE_TAU)]
    tau: f64,
    #[arg(long, default_value = "gridid-out")]
    out_dir: PathBuf,
    #[arg(long)]
    lp_dump: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging();
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    match run(cli, command_line) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let module = e
                .chain()
                .find_map(|c| c.downcast_ref::<gridid::Error>())
                .map_or("cli", gridid::Error::module);
            eprintln!("error[{module}]: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn init_logging() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GRIDID_LOG", "warn"))
        .format(|buf, rec| {
            writeln!(
                buf,
                "level={} target={} {}",
                rec.level().as_str().to_ascii_lowercase(),
                rec.target(),
                rec.args()
            )
        })
        .init();
}

fn run(cli: Cli, command_line: String) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => simulate(a, command_line),
        Command::Tune(a) => tune(a, command_line),
        Command::Recover(a) => recover(a, command_line),
        Command::Evaluate(a) => evaluate(a, command_line),
        Command::Pipeline(a) => pipeline(a, command_line),
    }
}

fn load_grid(path: Option<&PathBuf>) -> Result<GridTopology> {
    match path {
        Some(p) => GridTopology::load(p).with_context(|| format!("reading grid {}", p.display())),
        None => Ok(GridTopology::ieee14()),
    }
}

fn load_sim_config(path: Option<&PathBuf>) -> Result<SimulationConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            let cfg: SimulationConfig = serde_json::from_str(&text)
                .map_err(gridid::Error::from)
                .with_context(|| format!("parsing config {}", p.display()))?;
            Ok(cfg)
        }
        None => Ok(SimulationConfig::ieee14(0)),
    }
}

fn load_dataset(path: &Path) -> Result<PriceDataset> {
    marketsim::load_dataset(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run_simulation(
    topo: GridTopology,
    cfg: &SimulationConfig,
    lp_dump: Option<&PathBuf>,
) -> Result<PriceDataset> {
    let model = GridModel::new(topo)?;
    let opts = SolveOptions {
        capture_tableau: lp_dump.is_some(),
        ..Default::default()
    };
    let (data, trace) = marketsim::simulate_day_with(&model, cfg, &opts)?;
    if let Some(path) = lp_dump {
        let mut text = String::new();
        for (t, tableau) in &trace.tableaus {
            let _ = writeln!(text, "## interval {t}\n{tableau}");
        }
        write_file(path, &text)?;
    }
    log::info!(
        "simulate seed={} congested={} kept={} distinct_lines={}",
        cfg.seed,
        data.meta.congested_intervals,
        data.t(),
        data.distinct_congested_lines().len()
    );
    Ok(data)
}

fn simulate(a: SimulateArgs, command_line: String) -> Result<()> {
    let topo = load_grid(a.grid.as_ref())?;
    let mut cfg = load_sim_config(a.config.as_ref())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    if let Some(noise) = a.noise {
        cfg.noise_sigma = noise;
    }
    let config = json!({ "command": "simulate", "grid": topo.to_file(), "config": cfg });
    let mut m = RunManifest::new(command_line, &config, Some(cfg.seed));
    m.add_output(&a.out);
    if let Some(p) = &a.lp_dump {
        m.add_output(p);
    }
    m.stage("simulate");
    let mut data = run_simulation(topo, &cfg, a.lp_dump.as_ref())?;
    m.finish_stage();
    data.meta.manifest = Some(m.to_value());
    write_file(&a.out, &data.to_text()?)?;
    println!(
        "congested intervals: {} of {}; distinct congested lines: {}",
        data.meta.congested_intervals,
        cfg.intervals,
        data.distinct_congested_lines().len()
    );
    Ok(())
}

fn default_grid() -> KappaGrid {
    KappaGrid::around(&Kappa::ieee14(), &[0.1, 1.0, 10.0])
}

fn tuning_json(report: &TuningReport, cfg: &TuningConfig, manifest: &RunManifest) -> serde_json::Value {
    let scores: Vec<_> = report
        .ranked()
        .iter()
        .enumerate()
        .map(|(rank, s)| {
            json!({
                "rank": rank + 1,
                "kappa": s.kappa,
                "mse": s.mse,
                "per_repeat": s.per_repeat,
                "converged": s.converged,
            })
        })
        .collect();
    json!({
        "format": REPORT_FORMAT,
        "kind": "tuning_report",
        "best": report.best,
        "masked_entries": report.masked_entries,
        "repeats": cfg.repeats,
        "mask_fraction": cfg.mask_fraction,
        "seed": cfg.seed,
        "admm": cfg.admm,
        "scores": scores,
        "manifest": manifest.to_value(),
    })
}

fn run_tuning(l: &DMatrix<f64>, cfg: &TuningConfig) -> Result<TuningReport> {
    let report = tuneval::tune_kappa(l, cfg)?;
    log::info!("tune best={} candidates={}", report.best, report.scores.len());
    Ok(report)
}

fn tune(a: TuneArgs, command_line: String) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let grid = match &a.grid {
        Some(p) => KappaGrid::load(p).with_context(|| format!("reading kappa grid {}", p.display()))?,
        None => default_grid(),
    };
    let mut cfg = TuningConfig::new(grid, a.seed);
    cfg.repeats = a.repeats;
    cfg.mask_fraction = a.mask;
    cfg.admm = a.admm.settings(a.max_iter);
    cfg.admm.objective_every = 0;
    cfg.validate()?;
    let config = json!({ "command": "tune", "data": file_digest(&a.data), "tuning": cfg });
    let mut m = RunManifest::new(command_line, &config, Some(a.seed));
    m.add_output(&a.out);
    m.stage("tune");
    let report = run_tuning(&data.prices, &cfg)?;
    m.finish_stage();
    let text = serde_json::to_string_pretty(&tuning_json(&report, &cfg, &m))?;
    write_file(&a.out, &(text + "\n"))?;
    println!("{}", report.best);
    Ok(())
}

fn run_recovery(l: &DMatrix<f64>, kappa: &Kappa, settings: &AdmmSettings) -> Result<RecoveryResult> {
    let r = admm_solve(l, kappa, settings)?;
    if !r.converged {
        log::warn!(
            "recover converged=false iterations={} primal={:.3e} dual={:.3e}",
            r.iterations,
            r.primal_residual,
            r.dual_residual
        );
    }
    Ok(r)
}

fn recover(a: RecoverArgs, command_line: String) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let settings = a.admm.settings(a.max_iter);
    let config = json!({
        "command": "recover",
        "data": file_digest(&a.data),
        "kappa": a.kappa,
        "admm": settings,
    });
    let mut m = RunManifest::new(command_line, &config, None);
    m.add_output(&a.out);
    m.stage("recover");
    let r = run_recovery(&data.prices, &a.kappa, &settings)?;
    m.finish_stage();
    write_file(&a.out, &r.to_text(Some(m.to_value()))?)?;
    println!(
        "converged: {} after {} iterations; primal {:.3e} (eps {:.3e}); dual {:.3e} (eps {:.3e}); objective {:.9e}",
        r.converged, r.iterations, r.primal_residual, r.eps_pri, r.dual_residual, r.eps_dual, r.objective
    );
    Ok(())
}

#[derive(Serialize)]
struct RecoverySummary {
    converged: bool,
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    eps_pri: f64,
    eps_dual: f64,
    #[serde(with = "gridid::textio::float")]
    objective: f64,
    kappa: Kappa,
    rho: f64,
}

#[derive(Serialize)]
struct ReportHeader {
    format: u32,
    kind: &'static str,
    #[serde(flatten)]
    metrics: EvalReport,
    recovery: RecoverySummary,
    manifest: serde_json::Value,
}

fn summary(meta: &ResultMeta) -> RecoverySummary {
    RecoverySummary {
        converged: meta.converged,
        iterations: meta.iterations,
        primal_residual: meta.primal_residual,
        dual_residual: meta.dual_residual,
        eps_pri: meta.eps_pri,
        eps_dual: meta.eps_dual,
        objective: meta.objective,
        kappa: meta.kappa,
        rho: meta.rho,
    }
}

/// Evaluation report text and the plot matrices it contains.
fn build_report(
    result: &RecoveryResult,
    b_true: &DMatrix<f64>,
    tau: f64,
    manifest: &RunManifest,
) -> Result<(String, EvalReport, Vec<(&'static str, DMatrix<f64>)>)> {
    let metrics = tuneval::evaluate(&result.b_hat, &result.s_hat, b_true, tau)?;
    let blocks = vec![
        ("b_hat_unit", tuneval::unit_max(&result.b_hat)),
        ("b_true_unit", tuneval::unit_max(b_true)),
        ("s_hat", result.s_hat.clone()),
        ("history", result.history_matrix()),
    ];
    let header = ReportHeader {
        format: REPORT_FORMAT,
        kind: "evaluation_report",
        metrics: metrics.clone(),
        recovery: summary(&result.meta()),
        manifest: manifest.to_value(),
    };
    let refs: Vec<(&str, &DMatrix<f64>)> = blocks.iter().map(|(n, m)| (*n, m)).collect();
    let text = textio::render(&header, &refs)?;
    Ok((text, metrics, blocks))
}

fn write_plot_dir(
    dir: &Path,
    blocks: &[(&'static str, DMatrix<f64>)],
    manifest: &mut RunManifest,
) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, m) in blocks {
        let path = dir.join(format!("{name}.csv"));
        let mut text = format!("# config_hash={} manifest=manifest.json\n", manifest.config_hash);
        if *name == "history" {
            text.push_str("iteration,primal,dual,eps_pri,eps_dual,rho\n");
        }
        textio::write_matrix_csv(&mut text, m);
        write_file(&path, &text)?;
        manifest.add_output(&path);
    }
    let path = dir.join("manifest.json");
    manifest.add_output(&path);
    manifest.write(&path)
}

fn print_metrics(e: &EvalReport) {
    println!(
        "F1 {:.3} (precision {:.3}, recall {:.3}; {} of {} true edges, {} estimated) frobenius error {:.4}",
        e.f1, e.precision, e.recall, e.true_positives, e.true_edges, e.estimated_edges, e.frobenius_error
    );
}

fn evaluate(a: EvaluateArgs, command_line: String) -> Result<()> {
    let text = std::fs::read_to_string(&a.result)
        .with_context(|| format!("reading result {}", a.result.display()))?;
    let (_, result) = RecoveryResult::from_text(&text)
        .with_context(|| format!("reading result {}", a.result.display()))?;
    let truth = GridTopology::load(&a.truth)
        .with_context(|| format!("reading grid {}", a.truth.display()))?;
    let config = json!({
        "command": "evaluate",
        "result": file_digest(&a.result),
        "truth": file_digest(&a.truth),
        "tau": a.tau,
    });
    let mut m = RunManifest::new(command_line, &config, None);
    if let Some(p) = &a.out {
        m.add_output(p);
    }
    m.stage("evaluate");
    let (report, metrics, blocks) = build_report(&result, &truth.laplacian().reduced, a.tau, &m)?;
    m.finish_stage();
    match &a.out {
        Some(p) => {
            write_file(p, &report)?;
            print_metrics(&metrics);
        }
        None => print!("{}", report),
    }
    if let Some(dir) = &a.plot_dir {
        write_plot_dir(dir, &blocks, &mut m)?;
    }
    Ok(())
}

fn pipeline(a: PipelineArgs, command_line: String) -> Result<()> {
    let (topo, mut cfg) = match a.fixture {
        Fixture::Ieee14 => (GridTopology::ieee14(), SimulationConfig::ieee14(a.seed)),
    };
    cfg.noise_sigma = a.noise;
    let settings = a.admm.settings(a.max_iter);
    let config = json!({
        "command": "pipeline",
        "grid": topo.to_file(),
        "config": cfg,
        "kappa": if a.tune { None } else { Some(a.kappa) },
        "tune_repeats": if a.tune { Some(a.repeats) } else { None },
        "admm": settings,
        "tau": a.tau,
    });
    let mut m = RunManifest::new(command_line, &config, Some(a.seed));
    let dataset_path = a.out_dir.join("dataset.txt");
    let tuning_path = a.out_dir.join("tuning.json");
    let result_path = a.out_dir.join("result.txt");
    let report_path = a.out_dir.join("report.txt");
    let manifest_path = a.out_dir.join("manifest.json");
    m.add_output(&dataset_path);
    if a.tune {
        m.add_output(&tuning_path);
    }
    m.add_output(&result_path);
    m.add_output(&report_path);
    m.add_output(&manifest_path);

    m.stage("simulate");
    let b_true = topo.laplacian().reduced;
    let mut data = run_simulation(topo, &cfg, a.lp_dump.as_ref())?;
    data.meta.manifest = Some(m.to_value());
    write_file(&dataset_path, &data.to_text()?)?;

    let kappa = if a.tune {
        m.stage("tune");
        let mut tcfg = TuningConfig::new(default_grid(), a.seed);
        tcfg.repeats = a.repeats;
        tcfg.admm = a.admm.settings(tolerances::TUNING_MAX_ITER);
        tcfg.admm.objective_every = 0;
        let report = run_tuning(&data.prices, &tcfg)?;
        let text = serde_json::to_string_pretty(&tuning_json(&report, &tcfg, &m))?;
        write_file(&tuning_path, &(text + "\n"))?;
        report.best
    } else {
        a.kappa
    };

    m.stage("recover");
    let result = run_recovery(&data.prices, &kappa, &settings)?;
    write_file(&result_path, &result.to_text(Some(m.to_value()))?)?;

    m.stage("evaluate");
    let (report, metrics, _) = build_report(&result, &b_true, a.tau, &m)?;
    write_file(&report_path, &report)?;
    m.write(&manifest_path)?;

    println!(
        "seed {}: {} congested intervals, {} distinct congested lines; converged {} after {} iterations",
        a.seed,
        data.meta.congested_intervals,
        data.distinct_congested_lines().len(),
        result.converged,
        result.iterations
    );
    print_metrics(&metrics);
    println!("report: {}", report_path.display());
    Ok(())
}
