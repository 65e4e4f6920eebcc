//! `motiongait`: synthesize data, train, embed, evaluate and check gradients.
//!
//! Every failure ends the process with one line on stderr,
//! `error[<class>]: <message>`, and exit code 2 (config), 3 (ingestion),
//! 4 (numeric) or 5 (i/o).

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use motiongait::backbone::Network;
use motiongait::checkpoint::Checkpoint;
use motiongait::config::{parse_assignment, Profile, RunConfig};
use motiongait::data::{load_dataset, synth_generate, Split, MANIFEST_FILE};
use motiongait::evalproto::{embed_entries, evaluate, read_embeddings, summarize, write_embeddings};
use motiongait::gradcheck;
use motiongait::training::{train_loop, CsvLossLog, DirCheckpoints, LossRecord, TrainData, Trainer};
use motiongait::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

const CONFIG_ECHO: &str = "config.resolved";
const LOSS_LOG: &str = "loss.csv";
const EMBEDDINGS: &str = "embeddings.mgemb";
const THREADS_ENV: &str = "MOTIONGAIT_THREADS";

#[derive(Parser)]
#[command(name = "motiongait", version, about = "Gait recognition from silhouette sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic walker dataset.
    Synth(SynthArgs),
    /// Train a network and write checkpoints and a loss log.
    Train(TrainArgs),
    /// Embed every sequence of a dataset split with a trained checkpoint.
    Embed(EmbedArgs),
    /// Cross-view rank-1 evaluation of an embedding file.
    Eval(EvalArgs),
    /// Finite-difference check of every differentiable op and a micro model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// Flat key = value config file.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// desk (single-core scale) or full.
    #[arg(long, value_name = "desk|full")]
    profile: Option<String>,
    /// Override one key, e.g. --set train.lr=1e-4 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Disable motion excitation in every MGE block.
    #[arg(long)]
    no_mem: bool,
    /// Use the global features in place of the local branch.
    #[arg(long)]
    no_ffe_local: bool,
    /// Frames per motion-excitation clip.
    #[arg(long, value_name = "L")]
    clip_len: Option<usize>,
    /// Horizontal parts of the local branch.
    #[arg(long, value_name = "N")]
    parts: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> motiongait::Result<RunConfig> {
        let text = match &self.config {
            Some(p) => Some(fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
            None => None,
        };
        let profile = self.profile.as_deref().map(str::parse::<Profile>).transpose()?;
        let mut overrides = self
            .set
            .iter()
            .map(|s| parse_assignment(s))
            .collect::<motiongait::Result<Vec<_>>>()?;
        let mut flag = |k: &str, v: String| overrides.push((k.to_string(), v));
        if let Some(s) = self.seed {
            flag("seed", s.to_string());
        }
        if self.no_mem {
            flag("mem.enabled", "false".into());
        }
        if self.no_ffe_local {
            flag("ffe.local", "false".into());
        }
        if let Some(l) = self.clip_len {
            flag("mem.clip_len", l.to_string());
        }
        if let Some(n) = self.parts {
            flag("ffe.num_parts", n.to_string());
        }
        RunConfig::resolve(text.as_deref(), profile, &overrides)
    }
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset root to create.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    subjects: Option<usize>,
    /// Frames per sequence.
    #[arg(long)]
    frames: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset root (defaults to data.root).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Run directory for checkpoints, loss log and config echo.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    iterations: Option<usize>,
    /// Continue from this checkpoint using the configuration stored in it.
    #[arg(long, value_name = "CKPT")]
    resume: Option<PathBuf>,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_name = "CKPT")]
    checkpoint: PathBuf,
    /// Dataset root (defaults to data.root of the checkpoint).
    #[arg(long)]
    data: Option<PathBuf>,
    /// train, test or all.
    #[arg(long, default_value = "test")]
    split: String,
    /// Output directory for the embedding file and config echo.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Embedding file written by `embed`.
    #[arg(long)]
    embeddings: PathBuf,
    /// Output directory for report.txt and report.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    /// Also write the full report as gradcheck.json here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn error_class(e: &Error) -> (&'static str, u8) {
    match e {
        Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Contract(_) => ("config", 2),
        Error::Ingestion(_) | Error::SequenceTooShort { .. } => ("ingestion", 3),
        Error::Numeric(_) => ("numeric", 4),
        Error::Io { .. } => ("io", 5),
    }
}

fn create_dir(dir: &Path) -> motiongait::Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> motiongait::Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn echo_config(dir: &Path, cfg: &RunConfig) -> motiongait::Result<()> {
    write_file(&dir.join(CONFIG_ECHO), &cfg.to_text())
}

fn data_root(arg: Option<PathBuf>, cfg: &RunConfig) -> motiongait::Result<PathBuf> {
    arg.or_else(|| cfg.data_root.clone())
        .ok_or_else(|| Error::Config("no dataset given (use --data or data.root)".into()))
}

fn cmd_synth(args: SynthArgs) -> motiongait::Result<()> {
    let mut cfg = args.config.resolve()?;
    if let Some(n) = args.subjects {
        cfg.set("synth.subjects", &n.to_string())?;
    }
    if let Some(n) = args.frames {
        cfg.set("synth.frames", &n.to_string())?;
    }
    cfg.validate()?;
    let manifest = synth_generate(&cfg.synth(), &args.out)?;
    echo_config(&args.out, &cfg)?;
    println!(
        "synthesized {} sequences of {} subjects into {}",
        manifest.num_sequences,
        manifest.subjects.len(),
        args.out.display()
    );
    println!("dataset sha256 {}", manifest.digest());
    log::info!("manifest: {}", args.out.join(MANIFEST_FILE).display());
    Ok(())
}

/// Drops log lines past `iteration` so a resumed run appends cleanly.
fn truncate_loss_log(path: &Path, iteration: u64) -> motiongait::Result<()> {
    if !path.exists() {
        return Ok(());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut kept = String::new();
    for (i, line) in text.lines().enumerate() {
        let keep = i == 0
            || line
                .split(',')
                .next()
                .and_then(|f| f.parse::<u64>().ok())
                .is_some_and(|it| it <= iteration);
        if keep {
            kept.push_str(line);
            kept.push('\n');
        }
    }
    write_file(path, &kept)
}

fn cmd_train(args: TrainArgs) -> motiongait::Result<()> {
    let resumed = match &args.resume {
        Some(p) => Some(Checkpoint::load(p)?),
        None => None,
    };
    let mut cfg = match &resumed {
        Some(ckpt) => RunConfig::parse(&ckpt.config)?,
        None => args.config.resolve()?,
    };
    if let Some(n) = args.iterations {
        cfg.set("train.iterations", &n.to_string())?;
    }
    let root = data_root(args.data.clone(), &cfg)?;
    let index = load_dataset(&root, cfg.split())?;
    let data = TrainData::load(&index)?;
    let num_classes = data.num_classes;
    if cfg.net.num_classes == 0 {
        cfg.set("net.num_classes", &num_classes.to_string())?;
    }
    let net_cfg = cfg.network(num_classes)?;
    create_dir(&args.out)?;
    echo_config(&args.out, &cfg)?;
    let log_path = args.out.join(LOSS_LOG);
    let mut trainer = match &resumed {
        Some(ckpt) => {
            truncate_loss_log(&log_path, ckpt.iteration)?;
            Trainer::resume(ckpt, &net_cfg, cfg.train(), cfg.to_text())?
        }
        None => {
            if log_path.exists() {
                fs::remove_file(&log_path).map_err(|e| Error::io(&log_path, e))?;
            }
            Trainer::new(&net_cfg, cfg.train(), cfg.to_text())?
        }
    };
    trainer.dump_dir = Some(args.out.clone());
    log::info!(
        "training {} parameters on {} sequences of {} subjects",
        trainer.net.num_parameters(),
        data.sequences.len(),
        num_classes
    );
    let mut log = CsvLossLog::open(&log_path)?;
    let mut sink = DirCheckpoints { dir: args.out.clone() };
    let last = train_loop(&mut trainer, &data, &mut sink, &mut log)?;
    let records: Vec<LossRecord> = motiongait::training::read_loss_csv(&log_path)?;
    if let Some(r) = records.last() {
        println!(
            "trained {} iterations; final joint loss {:.6} (triplet {:.6}, ce {:.6})",
            last.iteration, r.joint, r.triplet, r.ce
        );
    }
    println!("checkpoint {}", args.out.join(DirCheckpoints::LATEST).display());
    Ok(())
}

fn cmd_embed(args: EmbedArgs) -> motiongait::Result<()> {
    let ckpt = Checkpoint::load(&args.checkpoint)?;
    let cfg = RunConfig::parse(&ckpt.config)?;
    let net_cfg = cfg.network(cfg.net.num_classes)?;
    let net = Network::<f32>::from_checkpoint(&net_cfg, &ckpt)?;
    let split: Split = args.split.parse()?;
    let root = data_root(args.data, &cfg)?;
    let index = load_dataset(&root, cfg.split())?;
    let entries = index.entries(split);
    if entries.is_empty() {
        return Err(Error::Config(format!(
            "the {} split of {} is empty",
            args.split,
            root.display()
        )));
    }
    let records = embed_entries(&net, &entries)?;
    create_dir(&args.out)?;
    echo_config(&args.out, &cfg)?;
    let path = args.out.join(EMBEDDINGS);
    write_embeddings(&path, &records)?;
    let dim = records.first().map_or(0, |r| r.descriptor.len());
    println!("embedded {} sequences (dimension {dim}) into {}", records.len(), path.display());
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> motiongait::Result<()> {
    let records = read_embeddings(&args.embeddings)?;
    let report = evaluate(&records)?;
    let (table, json) = summarize(&report);
    create_dir(&args.out)?;
    let echo = args.embeddings.with_file_name(CONFIG_ECHO);
    if echo.is_file() {
        let dest = args.out.join(CONFIG_ECHO);
        if echo != dest {
            fs::copy(&echo, &dest).map_err(|e| Error::io(&dest, e))?;
        }
    }
    write_file(&args.out.join("report.txt"), &table)?;
    write_file(&args.out.join("report.json"), &json)?;
    print!("{table}");
    Ok(())
}

fn cmd_gradcheck(args: GradcheckArgs) -> motiongait::Result<()> {
    let reports = gradcheck::full_suite()?;
    for r in &reports {
        println!("{}", r.summary());
    }
    if let Some(dir) = &args.out {
        create_dir(dir)?;
        let json = serde_json::to_string_pretty(&reports).expect("reports serialize");
        write_file(&dir.join("gradcheck.json"), &json)?;
    }
    let failed = reports.iter().filter(|r| !r.passed).count();
    if failed > 0 {
        return Err(Error::Numeric(format!(
            "{failed} of {} gradient checks failed",
            reports.len()
        )));
    }
    println!("all {} gradient checks passed", reports.len());
    Ok(())
}

fn init_threads() -> motiongait::Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("cannot size the worker pool: {e}")))
}

fn run(cli: Cli) -> motiongait::Result<()> {
    init_threads()?;
    match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Train(a) => cmd_train(a),
        Command::Embed(a) => cmd_embed(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    }
}

fn one_line(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("invalid arguments");
            eprintln!("error[config]: {}", one_line(first.trim_start_matches("error: ")));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (class, code) = error_class(&e);
            eprintln!("error[{class}]: {}", one_line(&e.to_string()));
            ExitCode::from(code)
        }
    }
}
