use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{Map, Value};

use tolc_core::driver::{self, CompressionRun, DriverConfig};
use tolc_core::encoder::load_model_any;
use tolc_core::synth::{gen_random_dataset, SynthConfig};
use tolc_core::train::{train, TrainConfig};
use tolc_core::{nn, Dataset, ErrorClass};

const DATA_FILE: &str = "data.bin";
const MODEL_FILE: &str = "model.json";
const COMPRESSED_FILE: &str = "compressed.json";
const RUN_LOG_FILE: &str = "run_log.json";
const EVALUATION_FILE: &str = "evaluation.json";
const MANIFEST_FILE: &str = "manifest.json";

#[derive(Parser)]
#[command(name = "tolc", version, about = "Tolerance-driven neural network compression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic two-class dataset.
    GenData(GenDataArgs),
    /// Train an uncompressed model.
    Train(TrainArgs),
    /// Compress a trained model.
    Compress(Box<CompressArgs>),
    /// Print loss and accuracy of a plain or compressed model as JSON.
    Evaluate(EvaluateArgs),
    /// Rebuild the CSV and summary of a previous compress run.
    Report(ReportArgs),
}

#[derive(Args)]
struct Common {
    /// Output directory; created if missing.
    #[arg(long)]
    out: PathBuf,
    /// JSON config file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize)]
struct GenDataArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    dim: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_informative: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    n_redundant: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    class_sep: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    flip: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    #[arg(long)]
    #[serde(skip)]
    data: PathBuf,
    /// Hidden layer widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden: Option<Vec<usize>>,
    /// sigmoid, relu or identity.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hidden_activation: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_epochs: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    learning_rate: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    l2: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    target_accuracy: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args, Serialize)]
struct CompressArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Plain or compressed model file; falls back to `model_in` in the config.
    #[arg(long)]
    #[serde(skip)]
    model: Option<PathBuf>,
    /// Falls back to `dataset` in the config.
    #[arg(long)]
    #[serde(skip)]
    data: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_init: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_max: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_delta: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    max_iters: Option<usize>,
    /// LogTolerance, QuadraticToCodeword or MagnitudePrune.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    complexity: Option<String>,
    /// constant or finite_difference.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    hessian: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    codebook_bits: Option<u32>,
    /// None, PruneGroups or LayerUniformBits.
    #[arg(long)]
    #[serde(skip)]
    policy: Option<String>,
    #[arg(long)]
    #[serde(skip)]
    group_size: Option<usize>,
    /// active or random.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    selection: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pool_fraction: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    batch_size: Option<usize>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    rerank_stride: Option<usize>,
    /// auto or general.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    solver: Option<String>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_lambda: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_tau: Option<f64>,
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[command(flatten)]
    common: Common,
    /// Output directory of a compress run.
    #[arg(long)]
    run_dir: PathBuf,
}

#[derive(Serialize)]
struct Timings {
    started_unix_s: f64,
    wall_s: f64,
}

#[derive(Serialize)]
struct RunManifest {
    command: &'static str,
    config_path: Option<PathBuf>,
    config: Value,
    seeds: Map<String, Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    tool_version: &'static str,
    timings: Timings,
}

fn config_error(msg: String) -> anyhow::Error {
    anyhow::Error::new(tolc_core::Error::Config(msg))
}

fn read_config(config: Option<&Path>) -> Result<Map<String, Value>> {
    let Some(path) = config else {
        return Ok(Map::new());
    };
    let text = std::fs::read_to_string(path)
        .map_err(tolc_core::Error::from)
        .with_context(|| format!("reading config {}", path.display()))?;
    let file: Value =
        serde_json::from_str(&text).map_err(|e| config_error(format!("{}: {e}", path.display())))?;
    match file {
        Value::Object(m) => Ok(m),
        _ => Err(config_error(format!("{}: expected a JSON object", path.display()))),
    }
}

/// Defaults, overlaid by the config file, overlaid by flags.
fn resolve<T>(file: Map<String, Value>, flags: Value) -> Result<(T, Value)>
where
    T: Default + Serialize + serde::de::DeserializeOwned,
{
    let mut merged = serde_json::to_value(T::default()).expect("defaults serialize");
    overlay(&mut merged, Value::Object(file));
    overlay(&mut merged, flags);
    let cfg = serde_json::from_value(merged.clone()).map_err(|e| config_error(e.to_string()))?;
    Ok((cfg, merged))
}

fn overlay(base: &mut Value, top: Value) {
    match (base, top) {
        (Value::Object(b), Value::Object(t)) => {
            for (k, v) in t {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => overlay(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, top) => *slot = top,
    }
}

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(tolc_core::Error::from)
        .with_context(|| format!("creating output directory {}", dir.display()))
}

fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(tolc_core::Error::from)
        .with_context(|| format!("writing {}", path.display()))
}

fn with_path<T>(r: tolc_core::Result<T>, what: &str, path: &Path) -> Result<T> {
    r.map_err(anyhow::Error::new)
        .with_context(|| format!("{what} {}", path.display()))
}

struct Finished {
    command: &'static str,
    config: Value,
    seeds: Map<String, Value>,
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
}

fn seed_map(pairs: &[(&str, u64)]) -> Map<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), Value::from(*v))).collect()
}

fn gen_data(a: GenDataArgs) -> Result<Finished> {
    let file = read_config(a.common.config.as_deref())?;
    let (cfg, resolved): (SynthConfig, _) = resolve(file, serde_json::to_value(&a)?)?;
    ensure_out(&a.common.out)?;
    let data = gen_random_dataset(&cfg)?;
    let path = a.common.out.join(DATA_FILE);
    with_path(data.save(&path), "writing", &path)?;
    log::info!("wrote {} samples of dimension {}", data.len(), data.dim());
    Ok(Finished {
        command: "gen-data",
        config: resolved,
        seeds: seed_map(&[("data", cfg.seed)]),
        inputs: vec![],
        outputs: vec![path],
    })
}

fn train_cmd(a: TrainArgs) -> Result<Finished> {
    let file = read_config(a.common.config.as_deref())?;
    let (cfg, resolved): (TrainConfig, _) = resolve(file, serde_json::to_value(&a)?)?;
    ensure_out(&a.common.out)?;
    let data = with_path(Dataset::load(&a.data), "reading dataset", &a.data)?;
    let out = train(&data, &cfg)?;
    let path = a.common.out.join(MODEL_FILE);
    with_path(out.model.save(&path), "writing", &path)?;
    log::info!(
        "trained {} epochs, accuracy {:.4}, loss {:.4}",
        out.epochs,
        out.accuracy,
        out.loss
    );
    Ok(Finished {
        command: "train",
        config: resolved,
        seeds: seed_map(&[("train", cfg.seed)]),
        inputs: vec![a.data],
        outputs: vec![path],
    })
}

fn compress(a: CompressArgs) -> Result<Finished> {
    let mut flags = serde_json::to_value(&a)?;
    let mut policy = Map::new();
    if let Some(kind) = &a.policy {
        policy.insert("kind".into(), Value::from(kind.as_str()));
    }
    if let Some(size) = a.group_size {
        policy.insert("group_size".into(), Value::from(size));
    }
    if !policy.is_empty() {
        flags["policy"] = Value::Object(policy);
    }
    let mut file = read_config(a.common.config.as_deref())?;
    let paths = CompressPaths::take(&mut file)?;
    let (cfg, resolved): (DriverConfig, _) = resolve(file, flags)?;
    let model_in = a
        .model
        .or(paths.model_in)
        .ok_or_else(|| config_error("no model given (--model or model_in)".into()))?;
    let data_in = a
        .data
        .or(paths.dataset)
        .ok_or_else(|| config_error("no dataset given (--data or dataset)".into()))?;
    let out = &a.common.out;
    let report_dir = out.join(paths.report_dir);
    ensure_out(&report_dir)?;
    let model = with_path(load_model_any(&model_in), "reading model", &model_in)?;
    let data = with_path(Dataset::load(&data_in), "reading dataset", &data_in)?;
    let run = driver::run(&model, &data, &cfg)?;
    let enc = run.final_model.as_ref().expect("a fresh run carries its final model");
    let compressed = out.join(paths.model_out);
    with_path(enc.save(&compressed), "writing", &compressed)?;
    let log_path = out.join(RUN_LOG_FILE);
    with_path(run.save(&log_path), "writing", &log_path)?;
    let summary = with_path(driver::report(&run, &report_dir), "writing report to", &report_dir)?;
    log::info!(
        "{} iterations ({} accepted), sparsity {:.3}, mean bits {:.2}, accuracy {:.4}",
        summary.iterations,
        summary.accepted,
        summary.final_sparsity,
        summary.final_mean_bits,
        summary.final_accuracy
    );
    Ok(Finished {
        command: "compress",
        config: resolved,
        seeds: seed_map(&[("compress", cfg.seed)]),
        inputs: vec![model_in, data_in],
        outputs: vec![
            compressed,
            log_path,
            report_dir.join(driver::ITERATIONS_CSV),
            report_dir.join(driver::SUMMARY_JSON),
        ],
    })
}

/// Path keys a compress config may carry next to the driver settings.
/// Outputs are names relative to `--out`.
struct CompressPaths {
    model_in: Option<PathBuf>,
    dataset: Option<PathBuf>,
    model_out: PathBuf,
    report_dir: PathBuf,
}

impl CompressPaths {
    fn take(file: &mut Map<String, Value>) -> Result<Self> {
        let mut get = |key: &str| -> Result<Option<PathBuf>> {
            match file.remove(key) {
                None => Ok(None),
                Some(Value::String(p)) => Ok(Some(PathBuf::from(p))),
                Some(v) => Err(config_error(format!("{key} must be a path string, got {v}"))),
            }
        };
        let model_in = get("model_in")?;
        let dataset = get("dataset")?;
        let model_out = get("model_out")?.unwrap_or_else(|| COMPRESSED_FILE.into());
        let report_dir = get("report_dir")?.unwrap_or_default();
        for (key, p) in [("model_out", &model_out), ("report_dir", &report_dir)] {
            if p.is_absolute() || p.components().any(|c| c == std::path::Component::ParentDir) {
                return Err(config_error(format!(
                    "{key} must stay inside --out, got {}",
                    p.display()
                )));
            }
        }
        Ok(Self {
            model_in,
            dataset,
            model_out,
            report_dir,
        })
    }
}

fn evaluate(a: EvaluateArgs) -> Result<Finished> {
    if a.common.config.is_some() {
        log::warn!("evaluate takes no configuration; ignoring --config");
    }
    ensure_out(&a.common.out)?;
    let model = with_path(load_model_any(&a.model), "reading model", &a.model)?;
    let data = with_path(Dataset::load(&a.data), "reading dataset", &a.data)?;
    let mut report = nn::loss(&model, &data)?;
    report.per_sample_loss = None;
    let text = serde_json::to_string_pretty(&report)?;
    println!("{text}");
    let path = a.common.out.join(EVALUATION_FILE);
    write_atomic(&path, &text)?;
    Ok(Finished {
        command: "evaluate",
        config: Value::Object(Map::new()),
        seeds: Map::new(),
        inputs: vec![a.model, a.data],
        outputs: vec![path],
    })
}

fn report(a: ReportArgs) -> Result<Finished> {
    if a.common.config.is_some() {
        log::warn!("report takes no configuration; ignoring --config");
    }
    ensure_out(&a.common.out)?;
    let log_path = a.run_dir.join(RUN_LOG_FILE);
    let run = with_path(CompressionRun::load(&log_path), "reading run log", &log_path)?;
    let out = &a.common.out;
    with_path(driver::report(&run, out), "writing report to", out)?;
    Ok(Finished {
        command: "report",
        config: serde_json::to_value(&run.config)?,
        seeds: seed_map(&[("compress", run.config.seed)]),
        inputs: vec![log_path],
        outputs: vec![out.join(driver::ITERATIONS_CSV), out.join(driver::SUMMARY_JSON)],
    })
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<tolc_core::Error>() {
            return match e.class() {
                ErrorClass::Config => 2,
                ErrorClass::Numeric => 3,
                ErrorClass::Io => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 4;
        }
        if cause.is::<serde_json::Error>() {
            return 2;
        }
    }
    1
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let started = SystemTime::now();
    let clock = Instant::now();
    let (out, config_path) = match &cli.command {
        Command::GenData(a) => (a.common.out.clone(), a.common.config.clone()),
        Command::Train(a) => (a.common.out.clone(), a.common.config.clone()),
        Command::Compress(a) => (a.common.out.clone(), a.common.config.clone()),
        Command::Evaluate(a) => (a.common.out.clone(), a.common.config.clone()),
        Command::Report(a) => (a.common.out.clone(), a.common.config.clone()),
    };
    let result = match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Compress(a) => compress(*a),
        Command::Evaluate(a) => evaluate(a),
        Command::Report(a) => report(a),
    }
    .and_then(|f| {
        let manifest = RunManifest {
            command: f.command,
            config_path,
            config: f.config,
            seeds: f.seeds,
            inputs: f.inputs,
            outputs: f.outputs,
            tool_version: env!("CARGO_PKG_VERSION"),
            timings: Timings {
                started_unix_s: started.duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64()),
                wall_s: clock.elapsed().as_secs_f64(),
            },
        };
        write_atomic(&out.join(MANIFEST_FILE), &serde_json::to_string_pretty(&manifest)?)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
