use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fusionkit::bridge::stub::{StubConfig, StubServer};
use fusionkit::bridge::{
    build_class_protos, cache_root, embed_queries, BridgeClient, GenerateParams, ProcessTransport,
    RecordingTransport, ReplayTransport, Transport, write_exchanges,
};
use fusionkit::embedstore::{write_store, Manifest};
use fusionkit::error::{Error, Result};
use fusionkit::harness::{
    emit_report, load_kv, plan_build, render_summary, run_experiment, synth_fixture, EvalReport,
    ExperimentConfig, PromptSource, ReportFormat, SynthSpec, WeightPolicy,
};
use fusionkit::prompts::{clip_templates, demographic_prompts, AxisName};

#[derive(Parser)]
#[command(name = "fusionkit", version, about = "Text/image prototype fusion for zero-shot classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic store with controllable text/image quality.
    Synth(SynthArgs),
    /// Embed prompts and generated images for every class through the bridge.
    BuildProtos(BuildArgs),
    /// Embed query images listed in a CSV of `path,label`.
    EmbedQueries(QueryArgs),
    /// Evaluate one configuration.
    Eval(EvalArgs),
    /// Evaluate with a weight scan (fused modes only).
    Scan(EvalArgs),
    /// Combine JSON reports into markdown tables.
    Report(ReportArgs),
    /// Show prompt sets.
    #[command(subcommand)]
    Prompts(PromptsCommand),
    /// Deterministic stand-in bridge on stdin/stdout.
    #[command(hide = true)]
    StubBridge {
        #[arg(long, default_value_t = 768)]
        dim: usize,
        #[arg(long, default_value = "stub-images")]
        image_dir: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 3)]
    classes: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    #[arg(long, default_value_t = 10)]
    queries_per_class: usize,
    #[arg(long, default_value_t = 0.8)]
    text_bias: f64,
    #[arg(long, default_value_t = 0.8)]
    image_bias: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    texts_per_class: usize,
    #[arg(long, default_value_t = 5)]
    images_per_class: usize,
    #[arg(long, default_value_t = 1.0)]
    query_noise: f64,
    #[arg(long, default_value_t = 0)]
    holdout_per_class: usize,
    #[arg(long, default_value = "photo_template")]
    text_source: String,
}

#[derive(Args)]
struct BridgeArgs {
    /// Command line that starts the bridge process.
    #[arg(long, conflicts_with = "replay")]
    bridge: Option<String>,
    /// Serve responses from a recorded JSONL session instead of a live bridge.
    #[arg(long)]
    replay: Option<PathBuf>,
    /// Record the session to this JSONL file.
    #[arg(long)]
    record: Option<PathBuf>,
    /// Reject embeddings of any other dimension.
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Args)]
struct BuildArgs {
    /// Manifest describing the dataset and its classes.
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    prompt_source: PromptSource,
    /// CuPL prompt file (overrides the manifest's `cupl` entry).
    #[arg(long)]
    cupl: Option<PathBuf>,
    #[arg(long)]
    classify_axis: Option<AxisName>,
    #[arg(long)]
    enrich_axis: Option<AxisName>,
    #[arg(long)]
    images_per_prompt: Option<u32>,
    #[arg(long, default_value_t = fusionkit::bridge::DEFAULT_STEPS)]
    steps: u32,
    #[arg(long, default_value_t = fusionkit::bridge::DEFAULT_GUIDANCE)]
    guidance: f64,
    #[arg(long, default_value_t = fusionkit::bridge::DEFAULT_SEED)]
    seed: u64,
    /// Cache root; defaults to $FUSIONKIT_CACHE_DIR or .fusionkit-cache.
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    bridge: BridgeArgs,
}

#[derive(Args)]
struct QueryArgs {
    #[arg(long)]
    manifest: PathBuf,
    /// CSV with header `path,label`; label is a class name or empty.
    #[arg(long)]
    list: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    bridge: BridgeArgs,
}

#[derive(Args)]
struct EvalArgs {
    /// key = value config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    store: Option<String>,
    #[arg(long)]
    protos: Option<String>,
    #[arg(long)]
    prompt_source: Option<String>,
    #[arg(long)]
    image_source: Option<String>,
    #[arg(long)]
    fusion_mode: Option<String>,
    /// `scan`, `fixed(w)` or a bare weight.
    #[arg(long)]
    weight: Option<String>,
    #[arg(long)]
    metric: Option<String>,
    #[arg(long)]
    classify_axis: Option<String>,
    #[arg(long)]
    enrich_axis: Option<String>,
    #[arg(long)]
    select_on: Option<String>,
    #[arg(long)]
    confused_pairs: Option<String>,
    #[arg(long)]
    threads: Option<String>,
    #[arg(long, default_value = "json")]
    format: ReportFormat,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON reports to combine.
    #[arg(required = true)]
    reports: Vec<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum PromptsCommand {
    /// Demographic prompts for each class value of an axis.
    Expand {
        #[arg(long)]
        classify: AxisName,
        #[arg(long)]
        enrich: AxisName,
        /// Target classes; all values of the classify axis when omitted.
        #[arg(long = "class")]
        classes: Vec<String>,
    },
    /// Registered templates of a benchmark dataset.
    Clip {
        #[arg(long)]
        dataset: String,
        #[arg(long = "class")]
        class: Option<String>,
    },
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => {
            if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
                fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
            }
            fs::write(path, text).map_err(|e| Error::io(path, e))
        }
        None => print_stdout(text),
    }
}

/// Writes to stdout; a closed pipe (e.g. `| head`) is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut out = io::stdout().lock();
    match out.write_all(text.as_bytes()).and_then(|_| out.flush()) {
        Err(e) if e.kind() != io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn open_client(args: &BridgeArgs) -> Result<(BridgeClient, Option<RecordingLog>)> {
    let base: Box<dyn Transport> = match (&args.bridge, &args.replay) {
        (Some(cmd), None) => Box::new(ProcessTransport::spawn_command_line(cmd)?),
        (None, Some(path)) => Box::new(ReplayTransport::load(path)?),
        _ => {
            return Err(Error::ConfigInvalid(
                "give exactly one of --bridge or --replay".into(),
            ))
        }
    };
    let (transport, log): (Box<dyn Transport>, _) = match &args.record {
        Some(path) => {
            let rec = RecordingTransport::new(base);
            let log = RecordingLog {
                path: path.clone(),
                log: rec.log(),
            };
            (Box::new(rec), Some(log))
        }
        None => (base, None),
    };
    let mut client = BridgeClient::new(transport);
    if let Some(d) = args.dim {
        client = client.with_expected_dim(d);
    }
    Ok((client, log))
}

struct RecordingLog {
    path: PathBuf,
    log: std::sync::Arc<std::sync::Mutex<Vec<fusionkit::bridge::Exchange>>>,
}

impl RecordingLog {
    fn write(&self) -> Result<()> {
        let exchanges = self.log.lock().expect("recording log poisoned").clone();
        write_exchanges(&exchanges, &self.path)
    }
}

fn eval_config(args: &EvalArgs, force_scan: bool) -> Result<ExperimentConfig> {
    let mut kv = match &args.config {
        Some(path) => load_kv(path)?,
        None => BTreeMap::new(),
    };
    let flags = [
        ("store", &args.store),
        ("protos", &args.protos),
        ("prompt_source", &args.prompt_source),
        ("image_source", &args.image_source),
        ("fusion_mode", &args.fusion_mode),
        ("weight", &args.weight),
        ("metric", &args.metric),
        ("classify_axis", &args.classify_axis),
        ("enrich_axis", &args.enrich_axis),
        ("select_on", &args.select_on),
        ("confused_pairs", &args.confused_pairs),
        ("threads", &args.threads),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            kv.insert(k.to_string(), v.clone());
        }
    }
    let cfg = ExperimentConfig::from_kv(&kv)?;
    if force_scan {
        if !cfg.fusion_mode.is_fused() {
            return Err(Error::ConfigInvalid(format!(
                "scan needs fusion_mode standard or confidence, got {}",
                cfg.fusion_mode
            )));
        }
        if cfg.weight_policy != WeightPolicy::Scan {
            return Err(Error::ConfigInvalid("scan does not take a fixed weight".into()));
        }
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => {
            let spec = SynthSpec {
                classes: a.classes,
                dim: a.dim,
                queries_per_class: a.queries_per_class,
                text_bias: a.text_bias,
                image_bias: a.image_bias,
                seed: a.seed,
                texts_per_class: a.texts_per_class,
                images_per_class: a.images_per_class,
                query_noise: a.query_noise,
                holdout_per_class: a.holdout_per_class,
                text_source: a.text_source,
            };
            synth_fixture(&spec, &a.out)?;
            println!("{}", a.out.display());
        }
        Command::BuildProtos(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let (prompts, mut opts) = plan_build(
                &manifest,
                a.prompt_source,
                a.cupl.as_deref(),
                a.classify_axis,
                a.enrich_axis,
                a.images_per_prompt,
            )?;
            opts.params = GenerateParams {
                steps: a.steps,
                guidance: a.guidance,
                seed: a.seed,
            };
            let (client, log) = open_client(&a.bridge)?;
            let root = a.cache_dir.unwrap_or_else(cache_root);
            let built = build_class_protos(&client, &manifest, &prompts, &opts, &root);
            if let Some(log) = &log {
                log.write()?;
            }
            let built = built?;
            log::info!(
                "{} records, {} bridge requests",
                built.records.len(),
                client.calls()
            );
            println!("{}", built.store_path.display());
        }
        Command::EmbedQueries(a) => {
            let manifest = Manifest::load(&a.manifest)?;
            let mut reader = csv::Reader::from_path(&a.list)?;
            let mut items = Vec::new();
            for rec in reader.records() {
                let rec = rec?;
                let path = rec.get(0).unwrap_or("").to_string();
                let label = match rec.get(1).map(str::trim).filter(|s| !s.is_empty()) {
                    Some(name) => Some(manifest.class_index(name).ok_or_else(|| Error::MalformedFile {
                        path: a.list.clone(),
                        reason: format!("unknown class {name:?}"),
                    })?),
                    None => None,
                };
                items.push((path, label));
            }
            let (client, log) = open_client(&a.bridge)?;
            let records = embed_queries(&client, &items);
            if let Some(log) = &log {
                log.write()?;
            }
            write_store(&records?, &manifest, &a.out)?;
            println!("{}", a.out.display());
        }
        Command::Eval(a) => {
            let cfg = eval_config(&a, false)?;
            let report = run_experiment(&cfg)?;
            write_output(a.out.as_deref(), &emit_report(&report, a.format)?)?;
        }
        Command::Scan(a) => {
            let cfg = eval_config(&a, true)?;
            let report = run_experiment(&cfg)?;
            write_output(a.out.as_deref(), &emit_report(&report, a.format)?)?;
        }
        Command::Report(a) => {
            let reports = a
                .reports
                .iter()
                .map(|p| EvalReport::load(p))
                .collect::<Result<Vec<_>>>()?;
            write_output(a.out.as_deref(), &render_summary(&reports))?;
        }
        Command::Prompts(PromptsCommand::Expand {
            classify,
            enrich,
            classes,
        }) => {
            let targets = if classes.is_empty() {
                // registry values are capitalized; prompts use them lowercased
                fusionkit::prompts::axis(classify).values.iter().map(|v| v.to_lowercase()).collect()
            } else {
                classes
            };
            let mut text = String::new();
            for target in targets {
                for p in demographic_prompts(classify, enrich, &target)?.prompts {
                    text.push_str(&format!("{target}\t{p}\n"));
                }
            }
            print_stdout(&text)?;
        }
        Command::Prompts(PromptsCommand::Clip { dataset, class }) => {
            let text: String = clip_templates(&dataset)?
                .iter()
                .map(|t| match &class {
                    Some(c) => format!("{}\n", t.replace("{}", c)),
                    None => format!("{t}\n"),
                })
                .collect();
            print_stdout(&text)?;
        }
        Command::StubBridge { dim, image_dir } => {
            let server = StubServer::new(StubConfig { dim, image_dir });
            server
                .serve(BufReader::new(io::stdin().lock()), io::stdout().lock())
                .map_err(|e| Error::io("<stdio>", e))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
