use std::io::{self, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use resnas::config::{ConfigError, EvaluatorConfig, RemoteConfig, RunConfig};
use resnas::evaluation::{scale_for_report, BatchEvaluator, EvalError, LocalEvaluator, SurrogateConfig, SurrogateEvaluator};
use resnas::genome::{count_params, decode, layer_params, ArchitectureSpec, Genome, SearchSpaceConfig};
use resnas::moead::{run_search, FinalEntry, MoeadError, SearchState};
use resnas::orchestrator::{replay_log, run_worker, Controller, ControllerOptions, RunLog, RunLogError, WorkerOptions};
use resnas::fixtures;
use serde_json::json;

const LOG_FILE: &str = "run.jsonl";
const EP_FILE: &str = "ep.json";
const DEFAULT_LOG_DIR: &str = "runs";

#[derive(Parser)]
#[command(name = "resnas", version, about = "Multi-objective residual architecture search")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a search from a config file.
    Search(SearchArgs),
    /// Continue an interrupted search from its run log.
    Resume(ResumeArgs),
    /// Run a search whose evaluations are served to remote workers.
    ServeController(SearchArgs),
    /// Connect to a controller and evaluate jobs.
    Worker(WorkerArgs),
    /// Print the architecture a genome decodes to.
    Decode(InspectArgs),
    /// Print the parameter count of a genome, spec or reference network.
    Params(ParamsArgs),
    /// Export per-generation archive fitness as CSV.
    Pareto(ParetoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum EvaluatorKind {
    Surrogate,
    Remote,
}

#[derive(Args)]
struct LogDirArg {
    /// Directory for run.jsonl and ep.json.
    #[arg(long, env = "RESNAS_LOG_DIR")]
    log_dir: Option<PathBuf>,
}

impl LogDirArg {
    fn dir(&self) -> PathBuf {
        self.log_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_LOG_DIR))
    }
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long)]
    generations: Option<usize>,
    #[arg(long, value_enum)]
    evaluator: Option<EvaluatorKind>,
    /// Controller address for the remote evaluator.
    #[arg(long)]
    listen: Option<String>,
    /// Multiplier applied to reported objectives.
    #[arg(long)]
    scale: Option<f64>,
    #[command(flatten)]
    log: LogDirArg,
    /// Replace an existing run log.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct ResumeArgs {
    #[command(flatten)]
    log: LogDirArg,
    #[arg(long)]
    listen: Option<String>,
    #[arg(long)]
    scale: Option<f64>,
}

#[derive(Args)]
struct WorkerArgs {
    #[arg(long)]
    connect: String,
    #[arg(long, default_value_t = 1)]
    capacity: u32,
    /// Run config whose search space and surrogate settings the worker uses.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "surrogate")]
    evaluator: EvaluatorKind,
    #[arg(long, default_value_t = 8)]
    max_retries: u32,
}

#[derive(Args)]
struct InspectArgs {
    /// Genome or architecture JSON; `-` reads stdin.
    input: PathBuf,
    /// Run config providing the search space (MNIST space otherwise).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the decoded architecture as JSON instead of a table.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ParamsArgs {
    input: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Reference network: resnet18 or resnet50.
    #[arg(long, conflicts_with = "input")]
    fixture: Option<String>,
    #[arg(long, default_value_t = 100)]
    classes: usize,
}

#[derive(Args)]
struct ParetoArgs {
    #[command(flatten)]
    log: LogDirArg,
    #[arg(long)]
    scale: Option<f64>,
    /// Write CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes with distinct exit codes.
#[derive(Debug)]
enum Failure {
    Config(anyhow::Error),
    Connectivity(anyhow::Error),
    Other(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Connectivity(_) => 3,
            Failure::Other(_) => 1,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Other(e)
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.into())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Connectivity(_) => Failure::Connectivity(e.into()),
            _ => Failure::Other(e.into()),
        }
    }
}

impl From<MoeadError> for Failure {
    fn from(e: MoeadError) -> Self {
        match e {
            MoeadError::Evaluation(e) => e.into(),
            MoeadError::InvalidConfig(_) | MoeadError::UnsupportedObjectiveCount(_) => Failure::Config(e.into()),
            e => Failure::Other(e.into()),
        }
    }
}

impl From<RunLogError> for Failure {
    fn from(e: RunLogError) -> Self {
        Failure::Other(e.into())
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Config(anyhow!(msg.into()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Search(a) => search(a, false),
        Command::ServeController(a) => search(a, true),
        Command::Resume(a) => resume(a),
        Command::Worker(a) => worker(a),
        Command::Decode(a) => decode_cmd(a),
        Command::Params(a) => params_cmd(a),
        Command::Pareto(a) => pareto(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Config(e) | Failure::Connectivity(e) | Failure::Other(e)) = &f;
            eprintln!("error: {e:#}");
            ExitCode::from(f.code())
        }
    }
}

fn apply_overrides(cfg: &mut RunConfig, a: &SearchArgs, remote: bool) -> Result<(), Failure> {
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(k) = a.k {
        cfg.k = k;
    }
    if let Some(g) = a.generations {
        cfg.generations = g;
    }
    if let Some(s) = a.scale {
        cfg.report_scale = s;
    }
    let kind = if remote { Some(EvaluatorKind::Remote) } else { a.evaluator };
    match (kind, &mut cfg.evaluator) {
        (Some(EvaluatorKind::Surrogate), EvaluatorConfig::Remote(_)) => {
            cfg.evaluator = EvaluatorConfig::Surrogate(SurrogateConfig::default());
        }
        (Some(EvaluatorKind::Remote), EvaluatorConfig::Surrogate(_)) => {
            let listen = a.listen.clone().ok_or_else(|| config_error("remote evaluator needs --listen"))?;
            cfg.evaluator = EvaluatorConfig::Remote(RemoteConfig::new(listen));
        }
        _ => {}
    }
    if let (Some(l), EvaluatorConfig::Remote(r)) = (&a.listen, &mut cfg.evaluator) {
        r.listen = l.clone();
    }
    cfg.validate()?;
    Ok(())
}

fn evaluator_for(cfg: &RunConfig) -> Result<Box<dyn BatchEvaluator>, Failure> {
    match &cfg.evaluator {
        EvaluatorConfig::Surrogate(s) => Ok(Box::new(LocalEvaluator::new(
            SurrogateEvaluator::new(cfg.search_space.clone(), s.clone()),
            cfg.execution,
        ))),
        EvaluatorConfig::Remote(r) => {
            let mut c = Controller::bind(r.listen.as_str(), ControllerOptions::from(r))
                .map_err(|e| Failure::Connectivity(anyhow!("cannot listen on {}: {e}", r.listen)))?;
            log::info!("controller listening on {}, waiting for {} worker(s)", c.local_addr(), r.min_workers);
            c.wait_for_workers(r.min_workers, std::time::Duration::from_secs(r.connect_timeout_secs))?;
            Ok(Box::new(c))
        }
    }
}

fn search(a: SearchArgs, remote: bool) -> Result<(), Failure> {
    let mut cfg = RunConfig::load(&a.config)?;
    apply_overrides(&mut cfg, &a, remote)?;
    let dir = a.log.dir();
    let log_path = dir.join(LOG_FILE);
    if log_path.exists() && !a.force {
        return Err(config_error(format!(
            "{} already exists; use `resume` or pass --force",
            log_path.display()
        )));
    }
    let mut evaluator = evaluator_for(&cfg)?;
    let mut log = RunLog::create(&log_path, &cfg)?;
    let out = run_search(&cfg, &mut *evaluator, &mut log, None)?;
    finish(&dir, &cfg, &out.state, &out.finals, cfg.report_scale)
}

fn resume(a: ResumeArgs) -> Result<(), Failure> {
    let dir = a.log.dir();
    let log_path = dir.join(LOG_FILE);
    if !log_path.exists() {
        return Err(config_error(format!("no run log at {}", log_path.display())));
    }
    let (mut log, replay) = match RunLog::resume(&log_path) {
        Err(RunLogError::MissingHeader) => {
            return Err(config_error(format!("{} is empty; start with `search`", log_path.display())))
        }
        r => r?,
    };
    let mut cfg = replay.config.clone().expect("resume checked the header");
    if let (Some(l), EvaluatorConfig::Remote(r)) = (&a.listen, &mut cfg.evaluator) {
        r.listen = l.clone();
    }
    let scale = a.scale.unwrap_or(cfg.report_scale);
    if let (Some(state), Some(finals)) = (replay.last_state(), &replay.finals) {
        log::info!("run already complete");
        return finish(&dir, &cfg, state, finals, scale);
    }
    match replay.last_state() {
        Some(s) => log::info!("resuming after generation {}", s.generation),
        None => log::info!("no completed generation in log; starting over"),
    }
    let mut evaluator = evaluator_for(&cfg)?;
    let out = run_search(&cfg, &mut *evaluator, &mut log, replay.last_state().cloned())?;
    finish(&dir, &cfg, &out.state, &out.finals, scale)
}

fn export(state: &SearchState, finals: &[FinalEntry], scale: f64) -> serde_json::Value {
    let entries: Vec<_> = state
        .archive
        .entries
        .iter()
        .zip(finals)
        .map(|(e, f)| {
            let (f1, f2) = scale_for_report(&e.fitness, scale);
            let (r1, r2) = scale_for_report(&f.fitness, scale);
            json!({
                "fingerprint": e.fingerprint,
                "generation": e.generation,
                "params": e.params,
                "fitness": e.fitness,
                "reported": [f1, f2],
                "retrained": f,
                "retrained_reported": [r1, r2],
                "genome": e.genome,
            })
        })
        .collect();
    json!({ "generation": state.generation, "seed": state.seed, "scale": scale, "archive": entries })
}

fn finish(dir: &Path, cfg: &RunConfig, state: &SearchState, finals: &[FinalEntry], scale: f64) -> Result<(), Failure> {
    let ep = export(state, finals, scale);
    let path = dir.join(EP_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&ep).context("serializing archive")? + "\n")
        .with_context(|| format!("writing {}", path.display()))?;
    let mut out = io::stdout().lock();
    writeln!(out, "generations: {} of {}", state.generation, cfg.generations).context("stdout")?;
    writeln!(out, "archive: {} architectures (written to {})", state.archive.len(), path.display()).context("stdout")?;
    for f in finals {
        let (f1, f2) = scale_for_report(&f.fitness, scale);
        writeln!(out, "  {}  f1 {f1:.4}  f2 {f2:.4}  params {}", f.fingerprint, f.params).context("stdout")?;
    }
    Ok(())
}

fn worker(a: WorkerArgs) -> Result<(), Failure> {
    if matches!(a.evaluator, EvaluatorKind::Remote) {
        return Err(config_error("a worker evaluates locally; use --evaluator surrogate"));
    }
    let cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::mnist_surrogate(),
    };
    let scfg = match &cfg.evaluator {
        EvaluatorConfig::Surrogate(s) => s.clone(),
        EvaluatorConfig::Remote(_) => SurrogateConfig::default(),
    };
    if a.capacity == 0 {
        return Err(config_error("--capacity must be at least 1"));
    }
    let opts = WorkerOptions { capacity: a.capacity, max_retries: a.max_retries, ..Default::default() };
    let ev = Arc::new(SurrogateEvaluator::new(cfg.search_space, scfg));
    run_worker(&a.connect, ev, &opts)?;
    log::info!("controller requested shutdown");
    Ok(())
}

fn read_input(path: &Path) -> Result<String, Failure> {
    if path.as_os_str() == "-" {
        let mut s = String::new();
        io::stdin().read_to_string(&mut s).context("reading stdin")?;
        return Ok(s);
    }
    std::fs::read_to_string(path).map_err(|e| config_error(format!("cannot read {}: {e}", path.display())))
}

fn space_for(config: &Option<PathBuf>) -> Result<SearchSpaceConfig, Failure> {
    Ok(match config {
        Some(p) => RunConfig::load(p)?.search_space,
        None => SearchSpaceConfig::mnist(),
    })
}

/// Accepts either a genome or an already decoded architecture.
fn load_spec(text: &str, space: &SearchSpaceConfig) -> Result<ArchitectureSpec, Failure> {
    if let Ok(g) = serde_json::from_str::<Genome>(text) {
        return decode(&g, space).map_err(|e| config_error(format!("genome does not decode: {e}")));
    }
    let spec: ArchitectureSpec =
        serde_json::from_str(text).map_err(|e| config_error(format!("input is neither a genome nor an architecture: {e}")))?;
    spec.check().map_err(|e| config_error(format!("architecture is inconsistent: {e}")))?;
    Ok(spec)
}

fn decode_cmd(a: InspectArgs) -> Result<(), Failure> {
    let space = space_for(&a.config)?;
    let spec = load_spec(&read_input(&a.input)?, &space)?;
    let mut out = io::stdout().lock();
    if a.json {
        let text = serde_json::to_string_pretty(&spec).context("serializing architecture")?;
        writeln!(out, "{text}").context("stdout")?;
        return Ok(());
    }
    writeln!(out, "input {}  classes {}  head {:?}", spec.input, spec.num_classes, spec.head_mode).context("stdout")?;
    writeln!(out, "{:<20} {:>14} {:>12}", "layer", "output", "params").context("stdout")?;
    for ((label, shape), layer) in spec.shape_trace().iter().skip(1).zip(spec.layers()) {
        writeln!(out, "{label:<20} {:>14} {:>12}", shape.to_string(), layer_params(layer)).context("stdout")?;
    }
    writeln!(out, "total params {}", count_params(&spec)).context("stdout")?;
    Ok(())
}

fn params_cmd(a: ParamsArgs) -> Result<(), Failure> {
    let spec = match (&a.fixture, &a.input) {
        (Some(name), _) => fixtures::by_name(name, a.classes)
            .ok_or_else(|| config_error(format!("unknown fixture {name}; expected resnet18 or resnet50")))?,
        (None, Some(input)) => load_spec(&read_input(input)?, &space_for(&a.config)?)?,
        (None, None) => return Err(config_error("give an input file or --fixture")),
    };
    println!("{}", count_params(&spec));
    Ok(())
}

fn pareto(a: ParetoArgs) -> Result<(), Failure> {
    let path = a.log.dir().join(LOG_FILE);
    if !path.exists() {
        return Err(config_error(format!("no run log at {}", path.display())));
    }
    let replay = replay_log(&path)?;
    let scale = a.scale.or(replay.config.as_ref().map(|c| c.report_scale)).unwrap_or(1.0);
    let mut csv = String::from("generation,f1,f2,params\n");
    for (g, f1, f2, p) in replay.pareto_rows(scale) {
        csv.push_str(&format!("{g},{f1},{f2},{p}\n"));
    }
    match &a.out {
        Some(p) => std::fs::write(p, csv).with_context(|| format!("writing {}", p.display()))?,
        None => io::stdout().lock().write_all(csv.as_bytes()).context("stdout")?,
    }
    Ok(())
}
