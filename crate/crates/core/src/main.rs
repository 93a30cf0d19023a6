use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use softhybrid::dataset::{self, DEFAULT_FRACTIONS, DEFAULT_MAX_DELTA, DEFAULT_SAMPLES};
use softhybrid::domain::RolloutLog;
use softhybrid::harness::{
    emit_plots, run_ablation, run_adaptation_sweep, run_baseline_comparison, run_interchangeability_matrix, run_rollout,
    workspace_cloud, BaselineConfig, ExperimentConfig, PlantSpec, Report, TrajectoryKind, DEFAULT_SWITCH_STEPS,
};
use softhybrid::hybrid::{ControllerSpec, HybridConfig};
use softhybrid::lstm::{self, load_weights, save_weights, LstmSpec, LstmWeights, TrainConfig};
use softhybrid::{Error, Result};

#[derive(Parser)]
#[command(name = "softhybrid", version, about = "Hybrid LSTM and kinematics control of simulated soft robots")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Excite a plant with a random walk and save the dataset.
    Collect(CollectArgs),
    /// Train an LSTM inverse model on a dataset.
    Train(TrainArgs),
    /// Test-split error of saved weights on a dataset.
    Eval(EvalArgs),
    /// Closed-loop rollouts of one condition.
    Run(RunArgs),
    /// LSTM-only vs hybrid over rotated and perturbed robots.
    Matrix(RunArgs),
    /// Hybrid under changed control frequency and trajectory speed.
    Sweep(RunArgs),
    /// Switch from hybrid to kinematics-only part way through.
    Ablate(AblateArgs),
    /// Hybrid vs constant-curvature control on the arm grid.
    Baseline(BaselineArgs),
    /// Run one condition and render its figure.
    Plot(RunArgs),
}

#[derive(Args)]
struct CollectArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "nominal", help = "nominal | rotated:K | perturbed:SEVERITY:SEED")]
    plant: String,
    #[arg(long, default_value_t = DEFAULT_SAMPLES)]
    samples: usize,
    #[arg(long, default_value_t = DEFAULT_MAX_DELTA)]
    max_delta: f64,
    #[arg(long, default_value_t = 0.3)]
    period: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 10)]
    history: usize,
    #[arg(long, default_value_t = 128)]
    hidden: usize,
    #[arg(long, default_value_t = 0.1)]
    dropout: f64,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    weights: PathBuf,
}

/// Every `ExperimentConfig` field, each overriding the config file.
#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    /// JSON file holding an ExperimentConfig.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, help = "nominal | rotated:K | perturbed:SEVERITY:SEED")]
    plant: Option<String>,
    #[arg(long, help = "lstm | kinematics | hybrid")]
    controller: Option<String>,
    /// Hybrid weight on the kinematics estimate.
    #[arg(long)]
    weight: Option<f64>,
    #[arg(long, help = "A | B")]
    trajectory: Option<String>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    workspace: Option<f64>,
    #[arg(long)]
    kin_window: Option<usize>,
    #[arg(long)]
    kin_ridge: Option<f64>,
    #[arg(long)]
    severity: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    unit_seeds: Option<Vec<u64>>,
    #[arg(long)]
    history_len: Option<usize>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SWITCH_STEPS)]
    switch: Vec<usize>,
}

#[derive(Args)]
struct BaselineArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Excitation samples for the arm LSTM.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
}

fn parse_controller(name: &str, weight: Option<f64>) -> Result<ControllerSpec> {
    match name {
        "lstm" | "lstm-only" => Ok(ControllerSpec::LstmOnly),
        "kinematics" | "kinematics-only" => Ok(ControllerSpec::KinematicsOnly),
        "hybrid" => Ok(ControllerSpec::Hybrid(HybridConfig::constant(
            weight.unwrap_or(softhybrid::hybrid::DEFAULT_WEIGHT),
        ))),
        _ => Err(Error::InvalidArgument(format!("unknown controller {name:?}"))),
    }
}

fn build_config(a: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::from_json_file(p)?,
        None => ExperimentConfig::hybrid_default(a.seed),
    };
    cfg.seed = a.seed;
    if let Some(p) = &a.plant {
        cfg.plant = PlantSpec::parse(p)?;
    }
    if let Some(c) = &a.controller {
        cfg.controller = parse_controller(c, a.weight)?;
    } else if let (Some(w), ControllerSpec::Hybrid(h)) = (a.weight, &mut cfg.controller) {
        h.weight = w;
    }
    if let Some(t) = &a.trajectory {
        cfg.trajectory = TrajectoryKind::parse(t)?;
    }
    macro_rules! set {
        ($($field:ident <- $arg:ident),*) => {$(if let Some(v) = a.$arg.clone() { cfg.$field = v; })*};
    }
    set!(step_count <- steps, control_period <- period, trials <- trials, workspace_length <- workspace,
         kin_window <- kin_window, kin_ridge <- kin_ridge, severity <- severity, unit_seeds <- unit_seeds,
         history_len <- history_len);
    if a.out.is_some() {
        cfg.output_dir = a.out.clone();
    }
    if a.weights.is_some() {
        cfg.weights = a.weights.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("out"))
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write(path: &Path, body: &str) -> Result<()> {
    ensure_parent(path)?;
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn required_weights(cfg: &ExperimentConfig) -> Result<LstmWeights> {
    let path = cfg.weights.clone().ok_or_else(|| Error::MissingWeights(PathBuf::new()))?;
    load_weights(&path, None)
}

fn optional_weights(cfg: &ExperimentConfig) -> Result<Option<LstmWeights>> {
    if cfg.controller.needs_weights() {
        required_weights(cfg).map(Some)
    } else {
        Ok(None)
    }
}

fn write_logs(dir: &Path, prefix: &str, logs: &[RolloutLog]) -> Result<()> {
    for (i, l) in logs.iter().enumerate() {
        write(&dir.join(format!("{prefix}trial{i}.csv")), &l.to_csv())?;
    }
    Ok(())
}

fn write_report(cfg: &ExperimentConfig, report: &Report) -> Result<()> {
    let dir = out_dir(cfg);
    write(&dir.join(format!("{}.csv", report.name)), &report.to_csv())?;
    write(&dir.join("config.json"), &serde_json::to_string_pretty(cfg)?)?;
    for (row, logs) in report.rows.iter().zip(&report.logs) {
        let prefix = format!("{}_{}_{}_", report.name, safe(&row.condition), row.trajectory);
        write_logs(&dir.join("logs"), &prefix, logs)?;
    }
    print!("{}", report.to_csv());
    Ok(())
}

fn safe(s: &str) -> String {
    s.replace('*', "x")
}

fn cmd_collect(a: &CollectArgs) -> Result<()> {
    let params = PlantSpec::parse(&a.plant)?.build(a.seed)?;
    let ds = dataset::excite(&params, a.samples, a.max_delta, a.seed, a.period)?;
    let ds = dataset::split(&ds, DEFAULT_FRACTIONS)?;
    ensure_parent(&a.out)?;
    dataset::save(&ds, &a.out)?;
    println!("wrote {} records to {}", ds.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let ds = dataset::load(&a.data)?;
    let spec = LstmSpec::planar(a.layers, a.history, a.hidden, a.dropout);
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        learning_rate: a.lr.unwrap_or(d.learning_rate),
        batch_size: a.batch.unwrap_or(d.batch_size),
        max_epochs: a.epochs.unwrap_or(d.max_epochs),
        patience: a.patience.unwrap_or(d.patience),
        seed: a.seed,
        ..d
    };
    let (w, report) = lstm::train(&ds, &spec, &cfg)?;
    ensure_parent(&a.out)?;
    save_weights(&w, &a.out)?;
    let mut epochs = String::from("epoch,train_loss,val_loss\n");
    for e in &report.epochs {
        let _ = writeln!(epochs, "{},{},{}", e.epoch, e.train_loss, e.val_loss);
    }
    write(&a.out.with_extension("epochs.csv"), &epochs)?;
    let test = lstm::evaluate(&w, &ds)?;
    println!(
        "spec {} best epoch {} of {} test error {:.4} wall {:.1}s",
        spec.label(),
        report.best_epoch,
        report.epochs_run,
        test,
        report.wall_time_s
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let ds = dataset::load(&a.data)?;
    let w = load_weights(&a.weights, None)?;
    println!("test_error,{}", lstm::evaluate(&w, &ds)?);
    Ok(())
}

fn summary_csv(cfg: &ExperimentConfig, m: &softhybrid::domain::Metric, rollouts: usize) -> String {
    format!(
        "config_hash,plant,controller,trajectory,rollouts,mean_error,std_error,max_error\n{},{},{},{},{},{},{},{}\n",
        cfg.hash(),
        cfg.plant.label(),
        cfg.controller.label(),
        cfg.trajectory.label(),
        rollouts,
        m.mean_error,
        m.std_error,
        m.max_error
    )
}

fn cmd_run(a: &RunArgs, plot: bool) -> Result<()> {
    let cfg = build_config(a)?;
    let weights = optional_weights(&cfg)?;
    let r = run_rollout(&cfg, weights.as_ref())?;
    let dir = out_dir(&cfg);
    let summary = summary_csv(&cfg, &r.metric, r.logs.len());
    write(&dir.join("summary.csv"), &summary)?;
    write(&dir.join("config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    if plot {
        let name = format!("{}_{}_{}", cfg.plant.label(), cfg.controller.label(), cfg.trajectory.label());
        let cloud = workspace_cloud(&cfg.plant.build(0)?, 21);
        emit_plots(&[(name, r.logs)], &cloud, cfg.workspace_length, &dir)?;
    } else {
        write_logs(&dir, "", &r.logs)?;
    }
    print!("{summary}");
    Ok(())
}

fn cmd_experiment(a: &RunArgs, which: &str) -> Result<()> {
    let cfg = build_config(a)?;
    let w = required_weights(&cfg)?;
    let report = match which {
        "matrix" => run_interchangeability_matrix(&cfg, &w)?,
        _ => run_adaptation_sweep(&cfg, &w)?,
    };
    write_report(&cfg, &report)
}

fn cmd_ablate(a: &AblateArgs) -> Result<()> {
    let cfg = build_config(&a.run)?;
    let w = required_weights(&cfg)?;
    let report = run_ablation(&cfg, &w, &a.switch)?;
    write_report(&cfg, &report)
}

fn cmd_baseline(a: &BaselineArgs) -> Result<()> {
    let mut cfg = BaselineConfig::new(a.seed);
    if let Some(n) = a.samples {
        cfg.samples = n;
    }
    if let Some(n) = a.steps {
        cfg.setup.step_count = n;
    }
    let r = run_baseline_comparison(&cfg)?;
    let dir = a.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    write(&dir.join("baseline.csv"), &r.to_csv())?;
    write(&dir.join("baseline_config.json"), &serde_json::to_string_pretty(&cfg)?)?;
    let (wins, off) = r.grid.hybrid_wins_off_center();
    println!(
        "cc {:.4}±{:.4} hybrid {:.4}±{:.4} hybrid wins {wins}/{off} off-center",
        r.cc_aggregate.mean_error, r.cc_aggregate.std_error, r.hybrid_aggregate.mean_error, r.hybrid_aggregate.std_error
    );
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Collect(a) => cmd_collect(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Run(a) => cmd_run(a, false),
        Command::Plot(a) => cmd_run(a, true),
        Command::Matrix(a) => cmd_experiment(a, "matrix"),
        Command::Sweep(a) => cmd_experiment(a, "sweep"),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Baseline(a) => cmd_baseline(a),
    }
}

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprintln!("{}", error_line("usage", e.to_string().trim()));
            return ExitCode::from(2);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
