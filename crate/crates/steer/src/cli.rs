//! Command-line front end.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage error. Every command
//! except `broker` writes its outputs and a `manifest.json` into `--out`
//! (default `runs/<timestamp>`), even when it fails.

use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::Context as _;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use steer_core::campaign::{CampaignConfig, Policy, Space, SpaceKind};
use steer_core::synth::SynAppConfig;

use crate::broker::{Broker, TcpBroker, TcpBrokerServer, Topic};
use crate::campaign::{self, io as cio, CampaignError, CampaignReport};
use crate::proxy::{ProxyPolicy, ValueStore};
use crate::synapp::{self, MetricsReport, SynAppError};
use crate::taskserver::{serve, ServerConfig};

#[derive(Debug, Parser)]
#[command(name = "steer", version, about = "Steer task ensembles: benchmarks, campaigns and a standalone broker")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthetic overhead benchmark.
    #[command(subcommand)]
    Synapp(SynappCommand),
    /// Active-learning campaigns.
    #[command(subcommand)]
    Campaign(CampaignCommand),
    /// Run a standalone TCP broker until interrupted.
    Broker(BrokerArgs),
}

#[derive(Debug, Subcommand)]
pub enum SynappCommand {
    /// One run; writes per-task overheads.
    Run(SynappRunArgs),
    /// Direct vs proxied overhead across input sizes.
    SweepInput(SweepArgs),
    /// Utilization over task durations and payload sizes.
    Envelope(EnvelopeArgs),
    /// Serve benchmark tasks on an external broker until interrupted.
    Serve(ServeArgs),
}

#[derive(Debug, Subcommand)]
pub enum CampaignCommand {
    /// One campaign under one policy.
    Run(CampaignRunArgs),
    /// All three policies over paired seeds.
    Compare(CompareArgs),
    /// Write a synthetic search space to CSV.
    GenerateSpace(GenerateArgs),
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Output directory [default: runs/<timestamp>]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Broker address; runs in-process when absent.
    #[arg(long, env = "STEER_BROKER")]
    pub broker: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Debug, Args)]
pub struct SynappRunArgs {
    #[arg(long, default_value_t = 200)]
    pub tasks: usize,
    /// Task duration in seconds.
    #[arg(long, default_value_t = 0.0)]
    pub duration: f64,
    /// Bytes, or with a KB/MB/GB suffix.
    #[arg(long, default_value = "0", value_parser = parse_size)]
    pub input_size: usize,
    #[arg(long, default_value = "0", value_parser = parse_size)]
    pub output_size: usize,
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = Switch::Off)]
    pub proxy: Switch,
    #[arg(long, default_value = "100KB", value_parser = parse_size)]
    pub threshold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Use tasks served by `synapp serve` instead of an in-process server.
    #[arg(long)]
    pub external_server: bool,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long, value_delimiter = ',', default_value = "1KB,10KB,100KB,1MB,10MB", value_parser = parse_size)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub tasks: usize,
    #[arg(long, default_value_t = 0.0)]
    pub duration: f64,
    #[arg(long, default_value = "0", value_parser = parse_size)]
    pub output_size: usize,
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Proxy threshold for the proxied runs; 1 proxies every input.
    #[arg(long, default_value = "1", value_parser = parse_size)]
    pub threshold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct EnvelopeArgs {
    #[arg(long, value_delimiter = ',', default_value = "0.01,0.1,1")]
    pub durations: Vec<f64>,
    /// Input and output size per task.
    #[arg(long, value_delimiter = ',', default_value = "1MB", value_parser = parse_size)]
    pub sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "8")]
    pub workers: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    pub tasks_per_worker: usize,
    #[arg(long, value_enum, default_value_t = Switch::On)]
    pub proxy: Switch,
    #[arg(long, default_value = "100KB", value_parser = parse_size)]
    pub threshold: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value_t = 8)]
    pub workers: usize,
    #[arg(long, default_value = "100KB", value_parser = parse_size)]
    pub threshold: usize,
    #[arg(long, env = "STEER_BROKER")]
    pub broker: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct CampaignArgs {
    #[arg(long, default_value_t = 200)]
    pub budget: usize,
    #[arg(long, default_value_t = 8)]
    pub n_retrain: usize,
    #[arg(long, default_value_t = 10_000)]
    pub space_size: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Kind::Rippled)]
    pub space_kind: Kind,
    /// Load the space from CSV instead of generating it.
    #[arg(long)]
    pub space_file: Option<PathBuf>,
    #[arg(long, default_value_t = 2.0)]
    pub kappa: f64,
    #[arg(long, default_value_t = 8)]
    pub ensemble: usize,
    #[arg(long, default_value_t = 1e-2)]
    pub alpha: f64,
    /// Seconds per assay.
    #[arg(long, default_value_t = 0.05)]
    pub assay_duration: f64,
    #[arg(long, default_value_t = 0.0)]
    pub failure_prob: f64,
    /// Noise standard deviation relative to the value scale.
    #[arg(long, default_value_t = 0.01)]
    pub noise: f64,
    #[arg(long, default_value_t = 1)]
    pub nodes: u32,
    #[arg(long, default_value_t = 6)]
    pub sim_slots: u64,
    #[arg(long, default_value_t = 2)]
    pub ml_slots: u64,
    #[arg(long, default_value_t = 2000)]
    pub predict_batch: usize,
    /// Serialize selection so the run is reproducible.
    #[arg(long)]
    pub synchronous: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Rippled,
    Linear,
}

impl From<Kind> for SpaceKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Rippled => SpaceKind::Rippled,
            Kind::Linear => SpaceKind::Linear,
        }
    }
}

#[derive(Debug, Args)]
pub struct CampaignRunArgs {
    #[arg(long, value_parser = parse_policy)]
    pub policy: Policy,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    #[arg(long, default_value_t = 0)]
    pub first_seed: u64,
    #[command(flatten)]
    pub campaign: CampaignArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 10_000)]
    pub space_size: usize,
    #[arg(long, default_value_t = 8)]
    pub dim: usize,
    #[arg(long, value_enum, default_value_t = Kind::Rippled)]
    pub space_kind: Kind,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    #[arg(long, default_value = "127.0.0.1:7878")]
    pub bind: String,
}

/// Decimal sizes: `1500`, `1KB` (10^3), `1.5MB` (10^6), `2GB`.
pub fn parse_size(s: &str) -> Result<usize, String> {
    let t = s.trim();
    let upper = t.to_ascii_uppercase();
    let (num, mult) = [("GB", 1e9), ("MB", 1e6), ("KB", 1e3), ("G", 1e9), ("M", 1e6), ("K", 1e3), ("B", 1.0)]
        .iter()
        .find_map(|(suf, m)| upper.strip_suffix(suf).map(|n| (n.trim().to_owned(), *m)))
        .unwrap_or((upper.clone(), 1.0));
    let v: f64 = num.parse().map_err(|_| format!("invalid size `{s}`"))?;
    let bytes = v * mult;
    if !(bytes.is_finite() && bytes >= 0.0) || bytes.fract() != 0.0 {
        return Err(format!("invalid size `{s}`"));
    }
    Ok(bytes as usize)
}

fn parse_policy(s: &str) -> Result<Policy, String> {
    s.parse()
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<SynAppError> for Failure {
    fn from(e: SynAppError) -> Self {
        match e {
            SynAppError::Config(_) | SynAppError::Sweep(_) => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.into()),
        }
    }
}

impl From<CampaignError> for Failure {
    fn from(e: CampaignError) -> Self {
        match e {
            CampaignError::Config(_) | CampaignError::BudgetExceedsSpace { .. } => Failure::Usage(e.to_string()),
            e => Failure::Runtime(e.into()),
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: String,
    argv: Vec<String>,
    config: serde_json::Value,
    seed: Option<u64>,
    started: String,
    ended: String,
    outputs: Vec<String>,
    exit_status: i32,
    error: Option<String>,
}

/// Output directory plus what the manifest will record.
struct Session {
    dir: PathBuf,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
    seed: Option<u64>,
}

impl Session {
    fn open(out: Option<PathBuf>) -> Result<Self, Failure> {
        let dir = out.unwrap_or_else(|| {
            PathBuf::from("runs").join(chrono::Local::now().format("%Y%m%d-%H%M%S%.3f").to_string())
        });
        fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
        Ok(Session {
            dir,
            outputs: Vec::new(),
            config: serde_json::Value::Null,
            seed: None,
        })
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>, Failure> {
        let path = self.dir.join(name);
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        self.outputs.push(path);
        Ok(BufWriter::new(f))
    }

    fn write_text(&mut self, name: &str, text: &str) -> Result<(), Failure> {
        let mut w = self.create(name)?;
        w.write_all(text.as_bytes())?;
        w.flush()?;
        Ok(())
    }

    fn finish(self, command: &str, argv: &[String], started: String, status: i32, error: Option<String>) {
        let path = self.dir.join("manifest.json");
        let mut outputs: Vec<String> = self.outputs.iter().map(|p| p.display().to_string()).collect();
        outputs.push(path.display().to_string());
        let m = Manifest {
            command: command.into(),
            argv: argv.to_vec(),
            config: self.config,
            seed: self.seed,
            started,
            ended: now_rfc3339(),
            outputs,
            exit_status: status,
            error,
        };
        let written = serde_json::to_vec_pretty(&m)
            .map_err(std::io::Error::other)
            .and_then(|bytes| fs::write(&path, bytes));
        if let Err(e) = written {
            eprintln!("warning: could not write {}: {e}", path.display());
        }
    }
}

fn now_rfc3339() -> String {
    chrono::Local::now().to_rfc3339()
}

fn connect(addr: Option<&str>) -> Result<Option<Arc<dyn Broker>>, Failure> {
    match addr {
        None => Ok(None),
        Some(a) => {
            let b = TcpBroker::connect(a).with_context(|| format!("cannot reach broker at {a}"))?;
            Ok(Some(Arc::new(b)))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let started = now_rfc3339();
    let (name, out) = match &cli.command {
        Command::Broker(b) => return cmd_broker(b),
        Command::Synapp(SynappCommand::Serve(s)) => return cmd_serve(s),
        Command::Synapp(SynappCommand::Run(a)) => ("synapp run", a.common.out.clone()),
        Command::Synapp(SynappCommand::SweepInput(a)) => ("synapp sweep-input", a.common.out.clone()),
        Command::Synapp(SynappCommand::Envelope(a)) => ("synapp envelope", a.common.out.clone()),
        Command::Campaign(CampaignCommand::Run(a)) => ("campaign run", a.common.out.clone()),
        Command::Campaign(CampaignCommand::Compare(a)) => ("campaign compare", a.common.out.clone()),
        Command::Campaign(CampaignCommand::GenerateSpace(a)) => ("campaign generate-space", a.out.clone()),
    };
    let mut session = match Session::open(out) {
        Ok(s) => s,
        Err(f) => return report(f).0,
    };
    let result = match cli.command {
        Command::Synapp(SynappCommand::Run(a)) => cmd_synapp_run(a, &mut session),
        Command::Synapp(SynappCommand::SweepInput(a)) => cmd_sweep(a, &mut session),
        Command::Synapp(SynappCommand::Envelope(a)) => cmd_envelope(a, &mut session),
        Command::Campaign(CampaignCommand::Run(a)) => cmd_campaign_run(a, &mut session),
        Command::Campaign(CampaignCommand::Compare(a)) => cmd_compare(a, &mut session),
        Command::Campaign(CampaignCommand::GenerateSpace(a)) => cmd_generate(a, &mut session),
        Command::Broker(_) | Command::Synapp(SynappCommand::Serve(_)) => unreachable!("handled above"),
    };
    let (code, error) = match result {
        Ok(()) => (0, None),
        Err(f) => report(f),
    };
    eprintln!("outputs in {}", session.dir.display());
    session.finish(name, &argv, started, code, error);
    code
}

fn report(f: Failure) -> (i32, Option<String>) {
    match f {
        Failure::Usage(msg) => {
            eprintln!("error: {msg}");
            (2, Some(msg))
        }
        Failure::Runtime(e) => {
            eprintln!("error: {e:#}");
            (1, Some(format!("{e:#}")))
        }
    }
}

fn synapp_json(c: &SynAppConfig) -> serde_json::Value {
    serde_json::json!({
        "tasks": c.tasks,
        "duration_s": c.duration_s,
        "input_size": c.input_size,
        "output_size": c.output_size,
        "workers": c.workers,
        "use_proxy": c.use_proxy,
        "threshold_bytes": c.threshold_bytes,
        "seed": c.seed,
    })
}

fn synapp_summary(r: &MetricsReport) -> String {
    let mut s = String::new();
    for (seg, ms) in &r.medians {
        s += &format!("median_{seg}_ms: {ms:.4}\n");
    }
    s += &format!("utilization_incl_warmup: {:.4}\n", r.utilization_all);
    s += &format!("utilization_excl_warmup: {:.4}\n", r.utilization_steady);
    s += &format!("max_in_flight: {}\n", r.max_in_flight);
    s += &format!("wall_time_s: {:.3}\n", r.wall_time.as_secs_f64());
    s
}

fn cmd_synapp_run(a: SynappRunArgs, s: &mut Session) -> Result<(), Failure> {
    let cfg = SynAppConfig {
        tasks: a.tasks,
        duration_s: a.duration,
        input_size: a.input_size,
        output_size: a.output_size,
        workers: a.workers,
        use_proxy: a.proxy == Switch::On,
        threshold_bytes: a.threshold as u64,
        seed: a.seed,
    };
    s.config = synapp_json(&cfg);
    s.seed = Some(cfg.seed);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let broker = connect(a.common.broker.as_deref())?;
    let report = match (broker, a.external_server) {
        (Some(b), true) => synapp::run_synapp(&cfg, b)?,
        (None, true) => return Err(Failure::Usage("--external-server needs --broker or STEER_BROKER".into())),
        (Some(b), false) => synapp::run_with_server(&cfg, b)?,
        (None, false) => synapp::run_local(&cfg)?,
    };
    report.write_tasks_csv(s.create("tasks.csv")?)?;
    let summary = synapp_summary(&report);
    s.write_text("summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

fn runner(broker: Option<Arc<dyn Broker>>) -> impl FnMut(&SynAppConfig) -> Result<MetricsReport, SynAppError> {
    move |cfg| match &broker {
        Some(b) => synapp::run_with_server(cfg, b.clone()),
        None => synapp::run_local(cfg),
    }
}

fn cmd_sweep(a: SweepArgs, s: &mut Session) -> Result<(), Failure> {
    let base = SynAppConfig {
        tasks: a.tasks,
        duration_s: a.duration,
        output_size: a.output_size,
        workers: a.workers,
        threshold_bytes: a.threshold as u64,
        seed: a.seed,
        ..SynAppConfig::default()
    };
    s.config = serde_json::json!({ "base": synapp_json(&base), "sizes": a.sizes, "repeats": a.repeats });
    s.seed = Some(a.seed);
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let broker = connect(a.common.broker.as_deref())?;
    let rows = synapp::sweep_input_size(&a.sizes, &base, a.repeats, runner(broker))?;
    synapp::write_sweep_csv(&rows, s.create("sweep.csv")?)?;
    println!("{:>12} {:>12} {:>12} {:>8}", "input_bytes", "direct_ms", "proxy_ms", "ratio");
    for r in &rows {
        println!(
            "{:>12} {:>12.4} {:>12.4} {:>8.3}",
            r.input_size,
            r.direct_median_ms,
            r.proxy_median_ms,
            r.ratio()
        );
    }
    Ok(())
}

fn cmd_envelope(a: EnvelopeArgs, s: &mut Session) -> Result<(), Failure> {
    let base = SynAppConfig {
        use_proxy: a.proxy == Switch::On,
        threshold_bytes: a.threshold as u64,
        seed: a.seed,
        ..SynAppConfig::default()
    };
    s.config = serde_json::json!({
        "durations_s": a.durations,
        "sizes": a.sizes,
        "workers": a.workers,
        "tasks_per_worker": a.tasks_per_worker,
        "use_proxy": base.use_proxy,
        "threshold_bytes": base.threshold_bytes,
    });
    s.seed = Some(a.seed);
    if a.workers.contains(&0) || a.tasks_per_worker == 0 {
        return Err(Failure::Usage("workers and tasks per worker must be at least 1".into()));
    }
    if a.durations.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Failure::Usage("durations must be non-negative seconds".into()));
    }
    let broker = connect(a.common.broker.as_deref())?;
    let rows = synapp::envelope(&a.durations, &a.sizes, &a.workers, &base, a.tasks_per_worker, runner(broker))?;
    synapp::write_envelope_csv(&rows, s.create("envelope.csv")?)?;
    for r in &rows {
        println!(
            "D={}s s={}B N={}: utilization {:.3} (excluding warm-up {:.3})",
            r.duration_s, r.size_bytes, r.workers, r.utilization_all, r.utilization_steady
        );
    }
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> i32 {
    let Some(addr) = a.broker.as_deref() else {
        eprintln!("error: serve needs --broker or STEER_BROKER");
        return 2;
    };
    if a.workers == 0 || a.threshold == 0 {
        eprintln!("error: workers and threshold must be at least 1");
        return 2;
    }
    let result = (|| -> anyhow::Result<()> {
        let broker: Arc<dyn Broker> =
            Arc::new(TcpBroker::connect(addr).with_context(|| format!("cannot reach broker at {addr}"))?);
        let store = Arc::new(ValueStore::new(broker.clone(), format!("synapp-worker-{}", uuid::Uuid::new_v4())));
        let policy = ProxyPolicy::new(a.threshold as u64)?;
        let mut cfg = ServerConfig::with_store(store, policy);
        cfg.cache_entries = 2 * a.workers;
        cfg.poll = Duration::from_millis(5);
        let _server = serve(broker, synapp::registry(a.workers)?, &[Topic::fixed(synapp::TOPIC)], cfg)?;
        println!("serving {} on {addr} with {} workers", synapp::TOPIC, a.workers);
        let _ = std::io::stdout().flush();
        loop {
            std::thread::park();
        }
    })();
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn campaign_config(a: &CampaignArgs, seed: u64) -> CampaignConfig {
    CampaignConfig {
        budget: a.budget,
        n_retrain: a.n_retrain,
        ucb_kappa: a.kappa,
        ensemble_size: a.ensemble,
        ridge_alpha: a.alpha,
        assay_duration_s: a.assay_duration,
        assay_failure_prob: a.failure_prob,
        assay_noise: a.noise,
        nodes_per_assay: a.nodes,
        sim_slots: a.sim_slots,
        ml_slots: a.ml_slots,
        predict_batch: a.predict_batch,
        seed,
        synchronous: a.synchronous,
    }
}

fn campaign_json(c: &CampaignConfig, a: &CampaignArgs) -> serde_json::Value {
    serde_json::json!({
        "budget": c.budget,
        "n_retrain": c.n_retrain,
        "ucb_kappa": c.ucb_kappa,
        "ensemble_size": c.ensemble_size,
        "ridge_alpha": c.ridge_alpha,
        "assay_duration_s": c.assay_duration_s,
        "assay_failure_prob": c.assay_failure_prob,
        "assay_noise": c.assay_noise,
        "nodes_per_assay": c.nodes_per_assay,
        "sim_slots": c.sim_slots,
        "ml_slots": c.ml_slots,
        "predict_batch": c.predict_batch,
        "synchronous": c.synchronous,
        "space_size": a.space_size,
        "dim": a.dim,
        "space_kind": format!("{:?}", a.space_kind).to_lowercase(),
        "space_file": a.space_file.as_ref().map(|p| p.display().to_string()),
    })
}

fn load_space(a: &CampaignArgs, seed: u64) -> Result<Space, Failure> {
    match &a.space_file {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            cio::read_space_csv(f).map_err(|e| Failure::Runtime(anyhow::anyhow!("{}: {e}", p.display())))
        }
        None => {
            if a.space_size == 0 || a.dim == 0 {
                return Err(Failure::Usage("space size and dim must be at least 1".into()));
            }
            Ok(Space::generate(a.space_size, a.dim, seed, a.space_kind.into()))
        }
    }
}

fn write_campaign(s: &mut Session, prefix: &str, r: &CampaignReport) -> Result<(), Failure> {
    cio::write_series_csv(r, s.create(&format!("{prefix}series.csv"))?)?;
    cio::write_selections_csv(r, s.create(&format!("{prefix}selections.csv"))?)?;
    s.write_text(&format!("{prefix}summary.txt"), &cio::summary(r))
}

fn cmd_campaign_run(a: CampaignRunArgs, s: &mut Session) -> Result<(), Failure> {
    let cfg = campaign_config(&a.campaign, a.seed);
    s.config = campaign_json(&cfg, &a.campaign);
    s.config["policy"] = a.policy.name().into();
    s.seed = Some(a.seed);
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let space = load_space(&a.campaign, a.seed)?;
    if a.campaign.space_file.is_none() {
        cio::write_space_csv(&space, s.create("space.csv")?)?;
    }
    let report = match connect(a.common.broker.as_deref())? {
        Some(b) => campaign::run_campaign_on(b, &space, &cfg, a.policy)?,
        None => campaign::run_campaign(&space, &cfg, a.policy)?,
    };
    write_campaign(s, "", &report)?;
    print!("{}", cio::summary(&report));
    Ok(())
}

fn cmd_compare(a: CompareArgs, s: &mut Session) -> Result<(), Failure> {
    let base = campaign_config(&a.campaign, a.first_seed);
    s.config = campaign_json(&base, &a.campaign);
    s.config["seeds"] = a.seeds.into();
    s.seed = Some(a.first_seed);
    base.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    if a.seeds == 0 {
        return Err(Failure::Usage("need at least one seed".into()));
    }
    let broker = connect(a.common.broker.as_deref())?;
    let policies = [Policy::Random, Policy::NoRetrain, Policy::UpdateK];
    let mut totals = [0usize; 3];
    let mut rows = csv::Writer::from_writer(s.create("comparison.csv")?);
    rows.write_record(["seed", "policy", "discoveries", "best_value", "trainings", "fallbacks", "wall_s"])?;
    for seed in a.first_seed..a.first_seed + a.seeds {
        let space = load_space(&a.campaign, seed)?;
        let cfg = CampaignConfig { seed, ..base.clone() };
        for (i, p) in policies.iter().enumerate() {
            let r = match &broker {
                Some(b) => campaign::run_campaign_on(b.clone(), &space, &cfg, *p)?,
                None => campaign::run_campaign(&space, &cfg, *p)?,
            };
            totals[i] += r.score.count_above;
            rows.write_record([
                seed.to_string(),
                p.name().to_string(),
                r.score.count_above.to_string(),
                r.score.best.map_or(String::new(), |v| v.to_string()),
                r.trainings.to_string(),
                r.fallbacks.len().to_string(),
                format!("{:.3}", r.wall_time.as_secs_f64()),
            ])?;
            println!("seed {seed} {p}: {} discoveries", r.score.count_above);
        }
    }
    rows.flush()?;
    drop(rows);
    let n = a.seeds as f64;
    let mut summary = String::new();
    for (p, t) in policies.iter().zip(totals) {
        summary += &format!("mean_discoveries_{}: {:.3}\n", p, t as f64 / n);
    }
    s.write_text("summary.txt", &summary)?;
    print!("{summary}");
    Ok(())
}

fn cmd_generate(a: GenerateArgs, s: &mut Session) -> Result<(), Failure> {
    s.config = serde_json::json!({
        "space_size": a.space_size,
        "dim": a.dim,
        "space_kind": format!("{:?}", a.space_kind).to_lowercase(),
    });
    s.seed = Some(a.seed);
    if a.space_size == 0 || a.dim == 0 {
        return Err(Failure::Usage("space size and dim must be at least 1".into()));
    }
    let space = Space::generate(a.space_size, a.dim, a.seed, a.space_kind.into());
    cio::write_space_csv(&space, s.create("space.csv")?)?;
    println!("top-1% threshold: {}", space.top_percent_threshold());
    Ok(())
}

fn cmd_broker(a: &BrokerArgs) -> i32 {
    let server = match TcpBrokerServer::bind(&a.bind) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: cannot listen on {}: {e}", a.bind);
            return 1;
        }
    };
    println!("listening on {}", server.local_addr());
    let _ = std::io::stdout().flush();
    // the default signal action ends the process; the broker keeps no state
    // worth flushing
    loop {
        std::thread::park();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("1000"), Ok(1000));
        assert_eq!(parse_size("1KB"), Ok(1000));
        assert_eq!(parse_size("10kb"), Ok(10_000));
        assert_eq!(parse_size("1.5MB"), Ok(1_500_000));
        assert_eq!(parse_size("10MB"), Ok(10_000_000));
        assert_eq!(parse_size("2G"), Ok(2_000_000_000));
        assert_eq!(parse_size("7B"), Ok(7));
        assert!(parse_size("MB").is_err());
        assert!(parse_size("-1KB").is_err());
        assert!(parse_size("1.5").is_err());
        assert!(parse_size("ten").is_err());
    }

    #[test]
    fn usage_errors_exit_2() {
        assert_eq!(run(["steer", "frobnicate"]), 2);
        assert_eq!(run(["steer", "campaign", "run", "--policy", "greedy"]), 2);
        assert_eq!(run(["steer", "synapp", "run", "--input-size", "lots"]), 2);
        assert_eq!(run(["steer", "--help"]), 0);
    }
}
