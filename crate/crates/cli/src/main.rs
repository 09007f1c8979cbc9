use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use statrag::config::{DatasetConfig, EngineConfig, SynthConfig};
use statrag::embed::{build_provider, ProviderKind};
use statrag::eval::cost::{cost_report, CostLedger, CostRates, RequestLog};
use statrag::eval::{evaluate_pipeline, predict_windows, BenchmarkOptions, EvalReport};
use statrag::http::{api_key_from_env, probe_endpoint};
use statrag::ingest::synth::synth_dataset;
use statrag::ingest::{
    load_dataset, segment_dataset, DatasetSchema, NormalizationStats, SegmentIds, SourceRole,
};
use statrag::llm::{build_client, LlmKind};
use statrag::openset::{leave_one_class_out, make_openset_split, run_openset, OpenSetOptions};
use statrag::optimize::optimize;
use statrag::pipeline::PipelineFitness;
use statrag::store::{load_store, save_store, StoreError};
use statrag::{Components, Pipeline, Window};

#[derive(Parser)]
#[command(name = "statrag", version, about = "Retrieval-augmented activity recognition")]
struct Cli {
    /// Engine configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured split and optimizer seeds.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for the pipeline.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Validate config and provider reachability, then exit.
    #[arg(long, global = true)]
    dry_run: bool,
    /// Overwrite existing output files.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store from the indexing split.
    Index(StoreArgs),
    /// Classify windows against a store; one JSON line per window.
    Classify(ClassifyArgs),
    /// Index, classify the test split and write reports.
    Evaluate(OutArgs),
    /// Search for a better system instruction on the validation split.
    OptimizePrompt(OutArgs),
    /// Like `index`, embedding LLM-written descriptors.
    DescribeIndex(StoreArgs),
    /// Open-set protocols: openness splits or leave-one-class-out.
    Openset(OutArgs),
    /// Write a synthetic dataset as CSV plus a matching config.
    Synth(SynthArgs),
    /// Price a request log.
    CostReport(CostArgs),
}

#[derive(Args)]
struct StoreArgs {
    /// Store file to write.
    #[arg(long)]
    store: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[arg(long)]
    store: PathBuf,
    /// CSV in the configured schema; defaults to the configured test split.
    #[arg(long)]
    input: Option<PathBuf>,
    /// JSONL output; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OutArgs {
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Directory receiving `synth.csv` and `config.toml`.
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 200)]
    windows_per_class: usize,
    #[arg(long, default_value_t = 6)]
    channels: usize,
    #[arg(long, default_value_t = 40)]
    window_len: usize,
}

#[derive(Args)]
struct CostArgs {
    /// JSONL request log written by `evaluate`.
    #[arg(long)]
    log: PathBuf,
    /// Samples to amortize over.
    #[arg(long)]
    samples: u64,
    #[arg(long)]
    json: bool,
}

/// Failures the CLI raises itself.
#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{} exists; pass --force to overwrite", .0.display())]
    Refused(PathBuf),
    #[error("{0} windows failed to classify")]
    WindowsFailed(usize),
}

mod exit {
    pub const GENERIC: u8 = 1;
    pub const CONFIG: u8 = 2;
    pub const IO: u8 = 3;
    pub const MISMATCH: u8 = 4;
    pub const CORRUPT: u8 = 5;
    pub const PROVIDER: u8 = 6;
    pub const REFUSED: u8 = 7;
}

fn exit_code(err: &anyhow::Error) -> u8 {
    use statrag::embed::EmbedError;
    use statrag::llm::LlmError;
    use statrag::Error;

    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<CliError>() {
            return match e {
                CliError::Refused(_) => exit::REFUSED,
                CliError::WindowsFailed(_) => exit::PROVIDER,
            };
        }
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::ConfigInvalid(_) | Error::Ingest(_) => exit::CONFIG,
                Error::Io(_) => exit::IO,
                Error::Store(StoreError::DimensionMismatch { .. } | StoreError::ModeMismatch { .. }) => {
                    exit::MISMATCH
                }
                Error::Store(StoreError::CorruptStore(_)) => exit::CORRUPT,
                Error::Store(StoreError::Io(_)) => exit::IO,
                Error::Embed(EmbedError::InvalidConfig(_) | EmbedError::AuthMissing(_))
                | Error::Llm(LlmError::InvalidConfig(_) | LlmError::AuthMissing(_)) => exit::CONFIG,
                Error::Llm(_) | Error::Embed(EmbedError::ProviderUnavailable(_)) => exit::PROVIDER,
                Error::Optimize(statrag::optimize::OptimizeError::Llm(_)) => exit::PROVIDER,
                _ => exit::GENERIC,
            };
        }
        if let Some(e) = cause.downcast_ref::<StoreError>() {
            return match e {
                StoreError::DimensionMismatch { .. } | StoreError::ModeMismatch { .. } => exit::MISMATCH,
                StoreError::CorruptStore(_) => exit::CORRUPT,
                StoreError::Io(_) => exit::IO,
                _ => exit::GENERIC,
            };
        }
        if cause.downcast_ref::<io::Error>().is_some() {
            return exit::IO;
        }
    }
    exit::GENERIC
}

/// Written next to a store: what `classify` needs to rebuild the pipeline.
#[derive(Debug, Serialize, Deserialize)]
struct StoreSidecar {
    normalization: Option<NormalizationStats<f64>>,
    channel_names: Vec<String>,
    descriptor: bool,
}

fn sidecar_path(store: &Path) -> PathBuf {
    let mut name = store.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    store.with_file_name(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .with_writer(io::stderr)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Some(jobs) = cli.jobs {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build_global()
            .context("configuring worker threads")?;
    }
    match &cli.command {
        Command::Synth(args) => return cmd_synth(&cli, args),
        Command::CostReport(args) => return cmd_cost_report(&cli, args),
        _ => {}
    }
    let cfg = load_config(&cli)?;
    if cli.dry_run {
        return dry_run(&cfg, &cli.command);
    }
    match &cli.command {
        Command::Index(args) => cmd_index(&cli, cfg, &args.store),
        Command::DescribeIndex(args) => {
            let mut cfg = cfg;
            cfg.descriptor.enabled = true;
            cmd_index(&cli, cfg, &args.store)
        }
        Command::Classify(args) => cmd_classify(&cli, &cfg, args),
        Command::Evaluate(args) => cmd_evaluate(&cli, &cfg, &args.out_dir),
        Command::OptimizePrompt(args) => cmd_optimize(&cli, &cfg, &args.out_dir),
        Command::Openset(args) => cmd_openset(&cli, &cfg, &args.out_dir),
        Command::Synth(_) | Command::CostReport(_) => unreachable!("handled above"),
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<EngineConfig> {
    let path = cli.config.as_ref().context("--config is required")?;
    let mut cfg = EngineConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.optimizer.seed = seed;
    }
    Ok(cfg)
}

fn components(cfg: &EngineConfig, log: &RequestLog) -> anyhow::Result<Components> {
    Ok(Components {
        embedder: build_provider(&cfg.embed, log.clone()).map_err(statrag::Error::from)?,
        chat: build_client(&cfg.llm, log.clone()).map_err(statrag::Error::from)?,
    })
}

/// Refuses to replace `path` unless `--force`.
fn guard(cli: &Cli, path: &Path) -> anyhow::Result<()> {
    if path.exists() && !cli.force {
        return Err(CliError::Refused(path.to_path_buf()).into());
    }
    Ok(())
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn dry_run(cfg: &EngineConfig, command: &Command) -> anyhow::Result<()> {
    let _ = components(cfg, &RequestLog::new())?;
    let timeout = Duration::from_secs(5);
    if cfg.embed.kind == ProviderKind::RemoteHttp {
        check_remote("embedding", cfg.embed.endpoint_url.as_deref(), cfg.embed.api_key_env_var.as_deref(), timeout)?;
    }
    if cfg.llm.kind == LlmKind::RemoteChat {
        check_remote("chat", cfg.llm.endpoint_url.as_deref(), cfg.llm.api_key_env_var.as_deref(), timeout)?;
    }
    if let Command::Classify(args) = command {
        if !args.store.exists() {
            bail!(statrag::Error::ConfigInvalid(format!(
                "store {} not found",
                args.store.display()
            )));
        }
    }
    println!("config valid; providers reachable");
    Ok(())
}

fn check_remote(what: &str, url: Option<&str>, key_var: Option<&str>, timeout: Duration) -> anyhow::Result<()> {
    let url = url.unwrap_or_default();
    if let Some(var) = key_var {
        if api_key_from_env(var).is_none() {
            return Err(statrag::Error::ConfigInvalid(format!("{what}: ${var} is not set")).into());
        }
    }
    probe_endpoint(url, timeout).map_err(|e| {
        statrag::Error::Llm(statrag::llm::LlmError::ProviderUnavailable(format!("{what}: {e}")))
    })?;
    Ok(())
}

fn cmd_index(cli: &Cli, cfg: EngineConfig, store_path: &Path) -> anyhow::Result<()> {
    guard(cli, store_path)?;
    let start = Instant::now();
    let split = cfg.load_split()?;
    let log = RequestLog::new();
    let settings = cfg.pipeline_settings();
    let descriptor = settings.descriptor.is_some();
    let pipeline = Pipeline::index(&split.indexing, settings, components(&cfg, &log)?)?;
    save_store(pipeline.store(), store_path)?;
    let sidecar = StoreSidecar {
        normalization: pipeline.normalization().cloned(),
        channel_names: split.channel_names.clone(),
        descriptor,
    };
    write_file(&sidecar_path(store_path), serde_json::to_string_pretty(&sidecar)?)?;
    let store = pipeline.store();
    println!("segments  {}", store.segment_count());
    println!("records   {}", store.len());
    println!("labels    {}", store.labels().join(", "));
    println!("wall time {:.2}s", start.elapsed().as_secs_f64());
    Ok(())
}

fn read_windows(cfg: &EngineConfig, path: &Path) -> anyhow::Result<Vec<Window>> {
    let schema: &DatasetSchema = cfg
        .dataset
        .schema
        .as_ref()
        .ok_or_else(|| statrag::Error::ConfigInvalid("--input needs dataset.schema".into()))?;
    let series = load_dataset::<f64>(path, schema).map_err(statrag::Error::from)?;
    Ok(segment_dataset(&series, schema, SourceRole::Test, &mut SegmentIds::default())
        .map_err(statrag::Error::from)?)
}

fn cmd_classify(cli: &Cli, cfg: &EngineConfig, args: &ClassifyArgs) -> anyhow::Result<()> {
    if let Some(out) = &args.out {
        guard(cli, out)?;
    }
    let store = load_store(&args.store).map_err(statrag::Error::from)?;
    let sidecar: StoreSidecar = {
        let path = sidecar_path(&args.store);
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
    };
    let mut settings = cfg.pipeline_settings();
    settings.normalize = sidecar.normalization.is_some();
    if sidecar.channel_names != settings.channel_names {
        return Err(statrag::Error::ConfigInvalid(format!(
            "store was built for channels {:?}",
            sidecar.channel_names
        ))
        .into());
    }
    if sidecar.descriptor && settings.descriptor.is_none() {
        let mut with = cfg.clone();
        with.descriptor.enabled = true;
        settings = with.pipeline_settings();
        settings.normalize = sidecar.normalization.is_some();
    }
    let log = RequestLog::new();
    let pipeline = Pipeline::from_store(store, sidecar.normalization, settings, components(cfg, &log)?)?;
    let windows = match &args.input {
        Some(p) => read_windows(cfg, p)?,
        None => cfg.load_split()?.test,
    };
    let predictions = predict_windows(&pipeline, &windows, cfg.instruction(), None);
    let mut out: Box<dyn Write> = match &args.out {
        Some(p) => Box::new(BufWriter::new(
            fs::File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(io::stdout().lock()),
    };
    for p in &predictions {
        serde_json::to_writer(&mut out, p)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    let failed = predictions.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        return Err(CliError::WindowsFailed(failed).into());
    }
    Ok(())
}

fn prepare_out_dir(cli: &Cli, dir: &Path, files: &[&str]) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for f in files {
        guard(cli, &dir.join(f))?;
    }
    Ok(())
}

fn zero_runtime(mut r: EvalReport) -> EvalReport {
    r.runtime_ms = 0;
    r
}

fn cmd_evaluate(cli: &Cli, cfg: &EngineConfig, dir: &Path) -> anyhow::Result<()> {
    let files = [
        "report.json",
        "report.txt",
        "confusion.csv",
        "retrieval_only.json",
        "predictions.jsonl",
        "requests.jsonl",
    ];
    prepare_out_dir(cli, dir, &files)?;
    let start = Instant::now();
    let split = cfg.load_split()?;
    let log = RequestLog::new();
    let pipeline = Pipeline::index(&split.indexing, cfg.pipeline_settings(), components(cfg, &log)?)?;
    let opts = BenchmarkOptions {
        instruction: cfg.instruction().to_string(),
        threshold: Some(cfg.threshold),
        rates: cfg.cost,
        request_log: Some(log.clone()),
    };
    let outcome = evaluate_pipeline(&pipeline, &split.test, &opts)?;
    let mut report = outcome.report;
    report.runtime_ms = start.elapsed().as_millis() as u64;
    write_file(&dir.join("report.json"), report.to_json())?;
    write_file(&dir.join("report.txt"), report.to_text())?;
    write_file(&dir.join("confusion.csv"), report.confusion_csv())?;
    if let Some(r) = outcome.retrieval_only {
        write_file(&dir.join("retrieval_only.json"), zero_runtime(r).to_json())?;
    }
    let mut lines = String::new();
    for p in &outcome.predictions {
        lines.push_str(&serde_json::to_string(p)?);
        lines.push('\n');
    }
    write_file(&dir.join("predictions.jsonl"), lines)?;
    log.write_jsonl(dir.join("requests.jsonl"))?;
    print!("{}", report.to_text());
    Ok(())
}

fn cmd_optimize(cli: &Cli, cfg: &EngineConfig, dir: &Path) -> anyhow::Result<()> {
    prepare_out_dir(cli, dir, &["best_instruction.txt"])?;
    let split = cfg.load_split()?;
    if split.validation.is_empty() {
        return Err(statrag::Error::ConfigInvalid(
            "optimize-prompt needs dataset.validation_fraction > 0".into(),
        )
        .into());
    }
    let log = RequestLog::new();
    let comps = components(cfg, &log)?;
    let pipeline = Pipeline::index(&split.indexing, cfg.pipeline_settings(), comps.clone())?;
    let fitness = PipelineFitness::new(
        &pipeline,
        &split.validation,
        cfg.optimizer.validation_fraction,
        cfg.seed,
    )?;
    let exemplars = pipeline.exemplars(fitness.queries(), cfg.optimizer.exemplar_count);
    let (best, log_out) = optimize(
        &cfg.optimizer,
        comps.chat.as_ref(),
        &fitness,
        cfg.instruction(),
        &exemplars,
    )
    .map_err(statrag::Error::from)?;
    let log_path = log_out.append_to_dir(dir).map_err(statrag::Error::from)?;
    write_file(&dir.join("best_instruction.txt"), format!("{}\n", best.instruction))?;
    println!("run        {}", log_out.run_id);
    println!("evaluated  {}", log_out.evaluations);
    let trace: Vec<String> = log_out
        .best_fitness_trace()
        .iter()
        .map(|f| format!("{f:.4}"))
        .collect();
    println!("best trace {}", trace.join(" "));
    println!("best       {:.4} (candidate {})", best.fitness.unwrap_or(0.0), best.id);
    println!("log        {}", log_path.display());
    Ok(())
}

fn cmd_openset(cli: &Cli, cfg: &EngineConfig, dir: &Path) -> anyhow::Result<()> {
    let windows = cfg.load_all_windows()?;
    let oc = &cfg.openset;
    let mut splits = Vec::new();
    if oc.leave_one_out {
        let mut classes: Vec<String> = windows.iter().filter_map(|w| w.label.clone()).collect();
        classes.sort();
        classes.dedup();
        for c in classes {
            let s = leave_one_class_out(&windows, &c).map_err(statrag::Error::from)?;
            splits.push((format!("loco_{c}"), s));
        }
    } else {
        for &o in &oc.openness {
            let s = make_openset_split(&windows, o, oc.test_fraction, cfg.seed)
                .map_err(statrag::Error::from)?;
            splits.push((format!("openness_{:03}", (o * 100.0).round() as u32), s));
        }
    }
    let names: Vec<String> = splits.iter().map(|(t, _)| format!("{t}.json")).collect();
    prepare_out_dir(cli, dir, &names.iter().map(String::as_str).collect::<Vec<_>>())?;
    let opts = OpenSetOptions {
        mode: oc.mode,
        include_placeholder: oc.include_placeholder,
        label_unseen: oc.label_unseen,
        instruction: cfg.instruction(),
    };
    for ((tag, split), file) in splits.iter().zip(&names) {
        let log = RequestLog::new();
        let (report, records) =
            run_openset(&windows, split, cfg.pipeline_settings(), components(cfg, &log)?, &opts)?;
        let json = serde_json::json!({ "split": split, "report": report, "records": records });
        write_file(&dir.join(file), serde_json::to_string_pretty(&json)?)?;
        println!(
            "{tag}: withheld [{}] macro-F1 {:.4}{}",
            split.withheld_classes.join(", "),
            report.macro_f1,
            report
                .withheld
                .labeling_accuracy
                .map(|a| format!(" labeling accuracy {a:.4}"))
                .unwrap_or_default()
        );
    }
    Ok(())
}

fn cmd_synth(cli: &Cli, args: &SynthArgs) -> anyhow::Result<()> {
    let seed = cli.seed.unwrap_or(0);
    let synth = SynthConfig {
        n_classes: args.classes,
        windows_per_class: args.windows_per_class,
        channels: args.channels,
        window_len: args.window_len,
        seed,
    };
    let csv_path = args.out_dir.join("synth.csv");
    let cfg_path = args.out_dir.join("config.toml");
    guard(cli, &csv_path)?;
    guard(cli, &cfg_path)?;
    let channel_columns: Vec<String> = (0..args.channels).map(|c| format!("ch{c}")).collect();
    let mut dataset = DatasetConfig::synthetic(synth);
    dataset.synthetic = None;
    dataset.indexing_path = Some(PathBuf::from("synth.csv"));
    dataset.schema = Some(DatasetSchema {
        channel_columns: channel_columns.clone(),
        label_column: "label".into(),
        subject_column: "subject".into(),
        sampling_rate_hz: 1.0,
        window_len: args.window_len,
        step: args.window_len,
    });
    let cfg = EngineConfig {
        seed,
        ..EngineConfig::new(dataset)
    };
    cfg.validate()?;
    if cli.dry_run {
        println!("config valid");
        return Ok(());
    }
    fs::create_dir_all(&args.out_dir).with_context(|| format!("creating {}", args.out_dir.display()))?;
    let windows = synth_dataset(args.classes, args.windows_per_class, args.channels, args.window_len, seed);
    let mut out = String::from("subject,label,");
    out.push_str(&channel_columns.join(","));
    out.push('\n');
    for w in &windows {
        for t in 0..w.len() {
            out.push_str(&w.subject_id);
            out.push(',');
            out.push_str(w.label.as_deref().unwrap_or(""));
            for ch in &w.samples {
                out.push_str(&format!(",{}", ch[t]));
            }
            out.push('\n');
        }
    }
    write_file(&csv_path, out)?;
    write_file(&cfg_path, cfg.to_toml())?;
    println!("{} windows -> {}", windows.len(), csv_path.display());
    println!("config     -> {}", cfg_path.display());
    Ok(())
}

fn cmd_cost_report(cli: &Cli, args: &CostArgs) -> anyhow::Result<()> {
    let rates = match &cli.config {
        Some(_) => load_config(cli)?.cost,
        None => CostRates::default(),
    };
    let entries = RequestLog::read_jsonl(&args.log)
        .with_context(|| format!("reading {}", args.log.display()))?;
    let summary = cost_report(&CostLedger::replay(&entries, &rates), args.samples);
    if cli.dry_run {
        println!("{} requests readable", entries.len());
        return Ok(());
    }
    if args.json {
        println!("{}", serde_json::to_string_pretty(&summary)?);
    } else {
        print!("{}", summary.to_text());
    }
    Ok(())
}
