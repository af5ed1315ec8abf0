//! Command-line workflows: `train`, `predict`, `evaluate`, `codec`, `inspect`.
//!
//! Exit codes:
//!
//! | code | meaning                                  |
//! |------|------------------------------------------|
//! | 0    | success                                  |
//! | 1    | other failure (I/O on outputs, internal) |
//! | 2    | invalid configuration or arguments       |
//! | 3    | unreadable or malformed input data       |
//! | 4    | training diverged                        |
//! | 5    | embedding or vector dimension mismatch   |
//! | 6    | prediction for an unknown utterance      |
//! | 7    | rating outside the codec range           |

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::data_io::{self, Aggregation, EmbeddingSequence};
use crate::metrics::{self, KendallVariant, ScorePair};
use crate::model::{self as checkpoint, ModelConfig, ModelError};
use crate::rbf::{CodecError, RbfConfig};
use crate::seeds::{sub_seed, Stream};
use crate::train::{self, CsvLog, Example, TrainConfig, TrainError};
use crate::{Checkpoint, Codec};

pub const CHECKPOINT_FILE: &str = "checkpoint.mrck";
pub const LOG_FILE: &str = "train_log.csv";
pub const SPLIT_FILE: &str = "split.json";
pub const PREDICTIONS_HEADER: &str = "utterance_id,predicted_mos";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Other = 1,
    Config = 2,
    Data = 3,
    Diverged = 4,
    DimMismatch = 5,
    UnknownUtterance = 6,
    OutOfRange = 7,
}

#[derive(Debug)]
pub struct CliError {
    pub code: ExitCode,
    pub message: String,
}

impl CliError {
    fn new(code: ExitCode, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn data(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::new(ExitCode::Data, format!("{}: {e}", path.display()))
    }

    fn other(e: impl std::fmt::Display) -> Self {
        Self::new(ExitCode::Other, e.to_string())
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn codec_error(e: CodecError) -> CliError {
    let code = match e {
        CodecError::OutOfRange { .. } => ExitCode::OutOfRange,
        CodecError::WrongDimension { .. } => ExitCode::DimMismatch,
        CodecError::InvalidConfig(_) => ExitCode::Config,
    };
    CliError::new(code, e.to_string())
}

fn train_error(e: TrainError) -> CliError {
    let code = match &e {
        TrainError::DivergedLoss { .. } => ExitCode::Diverged,
        TrainError::InvalidConfig(_) | TrainError::EmptyTrainSet | TrainError::EmptyValSet => ExitCode::Config,
        TrainError::Model(ModelError::InvalidConfig(_)) => ExitCode::Config,
        TrainError::Model(ModelError::InputDim { .. }) | TrainError::WrongDimension { .. } => ExitCode::DimMismatch,
        TrainError::UnknownUtterance(_) => ExitCode::UnknownUtterance,
        TrainError::Codec(CodecError::OutOfRange { .. }) => ExitCode::OutOfRange,
        _ => ExitCode::Other,
    };
    CliError::new(code, e.to_string())
}

#[derive(Debug, Parser)]
#[command(name = "mambarate", version, about = "Train and evaluate MambaRate MOS predictors")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model from a JSON run config.
    Train {
        /// Run config (JSON).
        config: PathBuf,
    },
    /// Predict MOS for EMB1 embedding files or directories of them.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Embedding files; directories contribute every `*.emb` inside.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Score predictions against a rating manifest.
    Evaluate {
        /// CSV with columns `utterance_id,predicted_mos`.
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "mean")]
        aggregation: Aggregation,
        #[arg(long, default_value = "tau-b")]
        kendall: KendallVariant,
        #[arg(long, value_enum, default_value_t = ReportFormat::Table)]
        format: ReportFormat,
    },
    /// Encode a rating or decode an RBF vector.
    Codec {
        #[command(subcommand)]
        action: CodecAction,
        #[command(flatten)]
        rbf: RbfArgs,
    },
    /// Print EMB1 headers and checkpoint summaries.
    Inspect {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
}

#[derive(Debug, Subcommand)]
pub enum CodecAction {
    /// Print the RBF vector of a rating.
    Encode { value: f64 },
    /// Print the rating of an RBF vector (comma- or space-separated).
    Decode {
        #[arg(required = true, allow_negative_numbers = true)]
        values: Vec<String>,
    },
}

#[derive(Debug, Args)]
pub struct RbfArgs {
    #[arg(long, global = true, default_value_t = 16)]
    pub num_centers: usize,
    #[arg(long, global = true, default_value_t = 1.0)]
    pub range_min: f64,
    #[arg(long, global = true, default_value_t = 5.0)]
    pub range_max: f64,
    /// Kernel width; defaults to the center spacing.
    #[arg(long, global = true)]
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub embedding_dir: PathBuf,
    pub manifest: PathBuf,
    /// Train, validation and test fractions.
    pub split: (f64, f64, f64),
    /// Master seed for the split, initialization, noise and shuffling streams.
    pub seed: u64,
    pub target_mode: Aggregation,
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            embedding_dir: PathBuf::from("embeddings"),
            manifest: PathBuf::from("manifest.csv"),
            split: (0.9, 0.1, 0.0),
            seed: 0,
            target_mode: Aggregation::Mean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub rbf: RbfConfig,
    pub output: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: DataSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            rbf: RbfConfig::default(),
            output: PathBuf::from("run"),
        }
    }
}

impl RunConfig {
    /// Parses a config and propagates `data.seed` and `data.target_mode`.
    ///
    /// Relative paths resolve against `base`. A `train`/`rbf` seed or a
    /// `train.target_mode` that contradicts the `data` section is rejected.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, CliError> {
        let bad = |m: String| CliError::new(ExitCode::Config, m);
        let raw: serde_json::Value = serde_json::from_str(text).map_err(|e| bad(format!("config: {e}")))?;
        let mut cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(|e| bad(format!("config: {e}")))?;

        let explicit = |section: &str, key: &str| raw.get(section).and_then(|s| s.get(key)).is_some();
        if explicit("train", "seed") && cfg.train.seed != cfg.data.seed {
            return Err(bad("train.seed differs from data.seed".into()));
        }
        if explicit("rbf", "seed") && cfg.rbf.seed != cfg.data.seed {
            return Err(bad("rbf.seed differs from data.seed".into()));
        }
        if explicit("train", "target_mode") && cfg.train.target_mode != cfg.data.target_mode {
            return Err(bad("train.target_mode differs from data.target_mode".into()));
        }
        cfg.train.seed = cfg.data.seed;
        cfg.rbf.seed = cfg.data.seed;
        cfg.train.target_mode = cfg.data.target_mode;

        for p in [&mut cfg.data.embedding_dir, &mut cfg.data.manifest, &mut cfg.output] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.model.validate().map_err(|e| bad(e.to_string()))?;
        cfg.rbf.validate().map_err(|e| bad(e.to_string()))?;
        cfg.train.validate().map_err(|e| bad(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::new(ExitCode::Config, format!("{}: {e}", path.display())))?;
        Self::from_json(&text, path.parent().unwrap_or(Path::new(".")))
    }
}

pub fn run(cli: Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config } => cmd_train(&config),
        Command::Predict {
            checkpoint,
            inputs,
            output,
        } => {
            let csv = cmd_predict(&checkpoint, &inputs)?;
            match output {
                Some(path) => fs::write(&path, csv).map_err(|e| CliError::other(format!("{}: {e}", path.display()))),
                None => stdout.write_all(csv.as_bytes()).map_err(CliError::other),
            }
        }
        Command::Evaluate {
            predictions,
            manifest,
            aggregation,
            kendall,
            format,
        } => {
            let report = cmd_evaluate(&predictions, &manifest, aggregation, kendall, format)?;
            stdout.write_all(report.as_bytes()).map_err(CliError::other)
        }
        Command::Codec { action, rbf } => {
            let text = cmd_codec(&action, &rbf)?;
            stdout.write_all(text.as_bytes()).map_err(CliError::other)
        }
        Command::Inspect { paths } => {
            let text = cmd_inspect(&paths)?;
            stdout.write_all(text.as_bytes()).map_err(CliError::other)
        }
    }
}

/// Trains from a config file; writes checkpoint, epoch log and split to the output dir.
pub fn cmd_train(config_path: &Path) -> Result<(), CliError> {
    let cfg = RunConfig::load(config_path)?;
    let manifest = &cfg.data.manifest;
    let records = data_io::load_manifest(manifest).map_err(|e| CliError::data(manifest, e))?;

    let mut dataset = HashMap::with_capacity(records.len());
    for rec in &records {
        let path = data_io::embedding_path(&cfg.data.embedding_dir, &rec.utterance_id);
        let emb = data_io::load_embedding(&path).map_err(|e| CliError::data(&path, e))?;
        if emb.dim() != cfg.model.input_dim {
            return Err(CliError::new(
                ExitCode::DimMismatch,
                format!("{}: dim {} but model.input_dim is {}", path.display(), emb.dim(), cfg.model.input_dim),
            ));
        }
        let ex = Example {
            utterance_id: rec.utterance_id.clone(),
            input: emb.to_tensor::<f64>(),
            rating: data_io::aggregate_rating(rec, cfg.data.target_mode),
        };
        dataset.insert(rec.utterance_id.clone(), ex);
    }

    let ids: Vec<String> = records.iter().map(|r| r.utterance_id.clone()).collect();
    let split = data_io::make_split(&ids, cfg.data.split, sub_seed(cfg.data.seed, Stream::Split))
        .map_err(|e| CliError::new(ExitCode::Config, e.to_string()))?;
    log::info!("split: {} train, {} val, {} test", split.train.len(), split.val.len(), split.test.len());

    let out = &cfg.output;
    fs::create_dir_all(out).map_err(|e| CliError::other(format!("{}: {e}", out.display())))?;
    let split_json = serde_json::to_string_pretty(&split).map_err(CliError::other)?;
    fs::write(out.join(SPLIT_FILE), split_json + "\n").map_err(CliError::other)?;

    let log_path = out.join(LOG_FILE);
    let file = fs::File::create(&log_path).map_err(|e| CliError::other(format!("{}: {e}", log_path.display())))?;
    let mut csv_log = CsvLog::new(std::io::BufWriter::new(file)).map_err(CliError::other)?;
    let outcome = train::train(&dataset, &split, cfg.model.clone(), cfg.rbf.clone(), cfg.train.clone(), |row| {
        csv_log.push(row).map_err(TrainError::from)
    })
    .map_err(train_error)?;
    csv_log.into_inner().flush().map_err(CliError::other)?;

    outcome
        .best
        .save(&out.join(CHECKPOINT_FILE))
        .map_err(CliError::other)?;
    log::info!(
        "best epoch {} (val loss {:?}) saved to {}",
        outcome.best.epoch,
        outcome.best.val_loss,
        out.join(CHECKPOINT_FILE).display()
    );
    Ok(())
}

fn embedding_files(inputs: &[PathBuf]) -> Result<Vec<PathBuf>, CliError> {
    let mut files = Vec::new();
    for input in inputs {
        if input.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(input)
                .map_err(|e| CliError::data(input, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "emb"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(input.clone());
        }
    }
    Ok(files)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    Checkpoint::load(path).map_err(|e| CliError::data(path, e))
}

/// Returns the predictions CSV.
pub fn cmd_predict(checkpoint: &Path, inputs: &[PathBuf]) -> Result<String, CliError> {
    let ckpt = load_checkpoint(checkpoint)?;
    let model = ckpt.to_model().map_err(|e| CliError::data(checkpoint, e))?;
    let codec = Codec::new(&ckpt.rbf).map_err(codec_error)?;
    let mut out = format!("{PREDICTIONS_HEADER}\n");
    for path in embedding_files(inputs)? {
        let emb: EmbeddingSequence = data_io::load_embedding(&path).map_err(|e| CliError::data(&path, e))?;
        if emb.dim() != model.config().input_dim {
            return Err(CliError::new(
                ExitCode::DimMismatch,
                format!("{}: dim {} but the model expects {}", path.display(), emb.dim(), model.config().input_dim),
            ));
        }
        let raw = model.predict(&emb.to_tensor()).map_err(|e| CliError::new(ExitCode::Other, e.to_string()))?;
        let mos = codec.decode(&raw).map_err(codec_error)?;
        out.push_str(&format!("{},{mos}\n", emb.utterance_id));
    }
    Ok(out)
}

#[derive(Debug, Deserialize)]
struct PredictionRow {
    utterance_id: String,
    predicted_mos: f64,
}

fn read_predictions(path: &Path) -> Result<Vec<PredictionRow>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| CliError::data(path, e))?;
    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    for row in reader.deserialize() {
        let row: PredictionRow = row.map_err(|e| CliError::data(path, e))?;
        if !row.predicted_mos.is_finite() {
            return Err(CliError::data(path, format!("non-finite prediction for `{}`", row.utterance_id)));
        }
        if !seen.insert(row.utterance_id.clone()) {
            return Err(CliError::data(path, format!("duplicate prediction for `{}`", row.utterance_id)));
        }
        rows.push(row);
    }
    Ok(rows)
}

/// Returns the utterance-level and (when system ids exist) system-level report.
pub fn cmd_evaluate(
    predictions: &Path,
    manifest: &Path,
    aggregation: Aggregation,
    kendall: KendallVariant,
    format: ReportFormat,
) -> Result<String, CliError> {
    let rows = read_predictions(predictions)?;
    let records = data_io::load_manifest(manifest).map_err(|e| CliError::data(manifest, e))?;
    let by_id: HashMap<&str, &data_io::RatingRecord> = records.iter().map(|r| (r.utterance_id.as_str(), r)).collect();

    let mut pairs = Vec::with_capacity(rows.len());
    for row in rows {
        let rec = by_id.get(row.utterance_id.as_str()).ok_or_else(|| {
            CliError::new(
                ExitCode::UnknownUtterance,
                format!("{}: utterance `{}` is not in {}", predictions.display(), row.utterance_id, manifest.display()),
            )
        })?;
        pairs.push(ScorePair {
            utterance_id: row.utterance_id,
            system_id: rec.system_id.clone(),
            predicted: row.predicted_mos,
            reference: data_io::aggregate_rating(rec, aggregation),
        });
    }
    if pairs.len() < records.len() {
        log::warn!("{} manifest utterance(s) have no prediction", records.len() - pairs.len());
    }
    let (utt, sys) = metrics::evaluate(&pairs, kendall).map_err(|e| CliError::data(predictions, e))?;
    let mut reports = vec![&utt];
    reports.extend(sys.as_ref());
    Ok(match format {
        ReportFormat::Table => metrics::render_table(&reports),
        ReportFormat::Csv => metrics::render_csv(&reports),
    })
}

fn parse_vector(values: &[String]) -> Result<Vec<f64>, CliError> {
    values
        .iter()
        .flat_map(|v| v.split([',', ' ']))
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| CliError::new(ExitCode::Config, format!("`{s}`: {e}")))
        })
        .collect()
}

/// Encode prints one component per line, decode a single value; 9 decimals.
pub fn cmd_codec(action: &CodecAction, args: &RbfArgs) -> Result<String, CliError> {
    let cfg = RbfConfig {
        num_centers: args.num_centers,
        range_min: args.range_min,
        range_max: args.range_max,
        sigma: args.sigma,
        ..RbfConfig::default()
    };
    let codec = Codec::new(&cfg).map_err(codec_error)?;
    match action {
        CodecAction::Encode { value } => {
            let v = codec.encode(*value).map_err(codec_error)?;
            Ok(v.iter().map(|c| format!("{c:.9}\n")).collect())
        }
        CodecAction::Decode { values } => {
            let v = parse_vector(values)?;
            let x = codec.decode(&v).map_err(codec_error)?;
            Ok(format!("{x:.9}\n"))
        }
    }
}

/// One summary block per path.
pub fn cmd_inspect(paths: &[PathBuf]) -> Result<String, CliError> {
    let mut out = String::new();
    for path in paths {
        let bytes = fs::read(path).map_err(|e| CliError::data(path, e))?;
        if bytes.starts_with(data_io::EMB_MAGIC) {
            let h = data_io::parse_emb_header(&bytes).map_err(|e| CliError::data(path, e))?;
            let status = if bytes.len() == h.file_len() { "ok" } else { "size mismatch" };
            out.push_str(&format!(
                "{}: EMB1 dim={} frames={} bytes={} ({status})\n",
                path.display(),
                h.dim,
                h.frames,
                bytes.len()
            ));
        } else if bytes.starts_with(checkpoint::CHECKPOINT_MAGIC) {
            let h = checkpoint::read_header(&bytes).map_err(|e| CliError::data(path, e))?;
            let count = |group| -> usize {
                h.tensors
                    .iter()
                    .filter(|t| t.group == group)
                    .map(|t| t.shape.iter().product::<usize>())
                    .sum()
            };
            let val = h.val_loss.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "{}: checkpoint epoch={} val_loss={val} parameters={} optimizer_values={} tensors={}\n",
                path.display(),
                h.epoch,
                count(checkpoint::TensorGroup::Parameter),
                count(checkpoint::TensorGroup::Optimizer),
                h.tensors.len()
            ));
            out.push_str(&format!("  model: {}\n", serde_json::to_string(&h.model).map_err(CliError::other)?));
            out.push_str(&format!("  rbf: {}\n", serde_json::to_string(&h.rbf).map_err(CliError::other)?));
        } else {
            return Err(CliError::data(path, "neither an EMB1 file nor a checkpoint"));
        }
    }
    Ok(out)
}
