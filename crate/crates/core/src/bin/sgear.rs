//! Command-line front end: synthetic data, training, evaluation, late fusion
//! and prototype-geometry reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use sgear::dataio::synth::{block_graph, successor_graph, uniform_graph};
use sgear::dataio::{
    generate_synthetic_dataset, read_prototype_file, write_prototype_file, Dataset, DatasetManifest, PrototypeArray,
    SynthConfig,
};
use sgear::diff::Tensor;
use sgear::eval::{
    eval_variable_tau, fusion_preset, late_fuse, predict_dataset, prototype_ratio_sweep, write_rows_csv, ActionMap,
    Metrics, PredictionSet,
};
use sgear::model::{ModelConfig, Toggles};
use sgear::semantic::{alignment_score, nearest_actions, similarity_matrix, ProtoInit};
use sgear::trainer::{initial_prototypes, make_preset, Checkpoint, Trainer};
use sgear::{Error, Result};

#[derive(Parser)]
#[command(name = "sgear", version, about = "Prototype-guided action anticipation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset: manifest, feature files and language prototypes.
    Synth(SynthArgs),
    /// Train a model from a JSON run configuration and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint and write predictions and metric tables.
    Eval(EvalArgs),
    /// Late-fuse prediction files.
    Ensemble(EnsembleArgs),
    /// Prototype similarity matrices, alignment score and nearest actions.
    Analyze(AnalyzeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Graph {
    Successor,
    Block,
    Uniform,
}

#[derive(clap::Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 12)]
    classes: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 16)]
    dim: usize,
    /// Tokens per frame; 1 gives global features for the adapter path.
    #[arg(long, default_value_t = 5)]
    tokens: usize,
    #[arg(long, default_value_t = 300)]
    clips: usize,
    #[arg(long, value_enum, default_value_t = Graph::Successor)]
    graph: Graph,
    #[arg(long, default_value_t = 2)]
    blocks: usize,
    /// Successor probability or within-block mass.
    #[arg(long, default_value_t = 0.9)]
    strength: f64,
    #[arg(long, default_value_t = 0.25)]
    noise: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct TrainArgs {
    /// JSON run configuration; see the README for its keys.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    manifest: PathBuf,
    /// Language prototype file; defaults to `language.sglp` next to the manifest.
    #[arg(long)]
    language: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Override a configuration key, e.g. `train.lr=0.01` or `setting=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Per-epoch loss table.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(clap::Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    manifest: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Metrics to report: any of top1, top5, mt5r.
    #[arg(long, value_delimiter = ',', default_value = "top1,top5,mt5r")]
    metrics: Vec<String>,
    /// Anticipation times (seconds) for the rollout sweep.
    #[arg(long, value_delimiter = ',')]
    tau: Vec<f64>,
    /// Prototype subset ratios for the subset sweep.
    #[arg(long, value_delimiter = ',')]
    ratio: Vec<f64>,
    #[arg(long, default_value_t = 0)]
    ratio_seed: u64,
}

#[derive(clap::Args)]
struct EnsembleArgs {
    /// Prediction files as `NAME=PATH`.
    #[arg(long = "input", required = true, value_name = "NAME=PATH")]
    inputs: Vec<String>,
    /// Weights in input order.
    #[arg(long, value_delimiter = ',', conflicts_with = "preset")]
    weights: Vec<f64>,
    /// Named weights (`ek100`, `ek55`) looked up by input name.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// CSV with columns `action,verb,noun` for verb and noun metrics.
    #[arg(long)]
    actions: Option<PathBuf>,
}

#[derive(clap::Args)]
struct AnalyzeArgs {
    /// Take the visual prototypes from a checkpoint.
    #[arg(long, conflicts_with = "visual")]
    checkpoint: Option<PathBuf>,
    /// Visual prototype file.
    #[arg(long)]
    visual: Option<PathBuf>,
    #[arg(long)]
    language: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Neighbours listed per class.
    #[arg(long, default_value_t = 5)]
    nearest: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Analyze(a) => analyze(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let graph = match a.graph {
        Graph::Successor => successor_graph(a.classes, a.blocks, a.strength),
        Graph::Block => block_graph(a.classes, a.blocks, a.strength),
        Graph::Uniform => uniform_graph(a.classes),
    };
    let mut cfg = SynthConfig::new(a.classes, a.frames, a.dim, a.clips, graph, a.seed);
    cfg.tokens = a.tokens;
    cfg.noise_std = a.noise;
    let path = generate_synthetic_dataset(&cfg)?.write(&a.out)?;
    println!("wrote {}", path.display());
    Ok(())
}

/// Run configuration as read from the JSON file after overrides.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    #[serde(default = "default_preset")]
    preset: String,
    /// Ablation setting `1` to `5` or `full`.
    #[serde(default)]
    setting: Option<Value>,
    #[serde(default = "default_init")]
    proto_init: ProtoInit,
    #[serde(default)]
    train: Map<String, Value>,
    #[serde(default)]
    model: Map<String, Value>,
}

fn default_preset() -> String {
    "desk".into()
}

fn default_init() -> ProtoInit {
    ProtoInit::Random
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{key}`: `{part}` is not inside an object")))?;
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.entry(part.to_string()).or_insert_with(|| Value::Object(Map::new()));
    }
    Err(Error::Config("empty override key".into()))
}

fn apply_override(doc: &mut Value, arg: &str) -> Result<()> {
    let (key, raw) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{arg}` is not KEY=VALUE")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    set_path(doc, key.trim(), value)
}

/// `base` serialized, patched key by key with `patch`, and read back.
fn patched<T: Serialize + for<'de> Deserialize<'de>>(base: &T, patch: &Map<String, Value>, what: &str) -> Result<T> {
    let mut v = serde_json::to_value(base)?;
    let obj = v.as_object_mut().expect("configs serialize to objects");
    for (k, val) in patch {
        if !obj.contains_key(k) {
            return Err(Error::Config(format!("unknown {what} key `{k}`")));
        }
        obj.insert(k.clone(), val.clone());
    }
    serde_json::from_value(v).map_err(|e| Error::Config(format!("{what} configuration: {e}")))
}

#[derive(Serialize)]
struct EpochRow {
    epoch: usize,
    lr: f64,
    sem: f64,
    reg: f64,
    cls: f64,
    past: f64,
    feat: f64,
    total: f64,
}

fn train(a: TrainArgs) -> Result<()> {
    let mut doc = match &a.config {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?)
            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?,
        None => Value::Object(Map::new()),
    };
    for o in &a.overrides {
        apply_override(&mut doc, o)?;
    }
    let run: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(format!("run configuration: {e}")))?;

    let manifest = DatasetManifest::read(&a.manifest)?;
    let data = Dataset::from_manifest_at(&a.manifest, &manifest, manifest.tau_a)?;
    let first = data
        .clips
        .first()
        .ok_or_else(|| Error::Validation("manifest has no clips".into()))?;
    let shape = match &first.input {
        sgear::dataio::ClipInput::Tokens(x) => x.shape().to_vec(),
        sgear::dataio::ClipInput::Frames(_) => return Err(Error::Config("raw frames are not supported here".into())),
    };
    let (frames, tokens, dim) = (shape[0], shape[1], shape[2]);

    let mut tc = make_preset(&run.preset)?;
    if let Some(s) = &run.setting {
        let name = match s {
            Value::String(s) => s.clone(),
            other => other.to_string(),
        };
        tc.toggles = Toggles::setting(&name)?;
    }
    // single-token features go through the adapter, which has no aggregation blocks
    if tokens == 1 {
        tc.toggles.tca = false;
    }
    let tc = patched(&tc, &run.train, "train")?;
    let mc = patched(
        &ModelConfig::desk(manifest.num_classes, frames, tokens, dim),
        &run.model,
        "model",
    )?;

    let lang_path = a
        .language
        .clone()
        .unwrap_or_else(|| sibling(&a.manifest, "language.sglp"));
    let language = if lang_path.exists() {
        Some(read_prototype_file(&lang_path)?.to_tensor())
    } else {
        None
    };
    let mut t = Trainer::new(mc, tc, language)?;
    if t.model.visual.is_some() {
        let (mc, tc) = (t.model.config.clone(), t.config.clone());
        if let Some(init) = initial_prototypes(run.proto_init, &mc, &tc, &data)? {
            t.model.set_visual_prototypes(init)?;
        }
    }
    let history = t.fit(&data, |r| {
        println!(
            "epoch {:>3} lr {:.2e} total {:.4} cls {:.4} sem {:.4} reg {:.4} past {:.4} feat {:.4}",
            r.epoch, r.lr, r.loss.total, r.loss.cls, r.loss.sem, r.loss.reg, r.loss.past, r.loss.feat
        );
    })?;
    if let Some(p) = &a.log {
        let rows: Vec<EpochRow> = history
            .iter()
            .map(|r| EpochRow {
                epoch: r.epoch,
                lr: r.lr,
                sem: r.loss.sem,
                reg: r.loss.reg,
                cls: r.loss.cls,
                past: r.loss.past,
                feat: r.loss.feat,
                total: r.loss.total,
            })
            .collect();
        write_rows_csv(&rows, std::fs::File::create(p)?)?;
    }
    let m = Metrics::of(&predict_dataset(&t.model, &data, 0)?)?;
    println!("train top1 {:.4} top5 {:.4}", m.top1, m.top5);
    Checkpoint::from_trainer(&t).save(&a.out)?;
    println!("wrote {}", a.out.display());
    Ok(())
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

#[derive(Serialize)]
struct MetricRow<'a> {
    split: &'a str,
    metric: &'a str,
    value: f64,
}

fn metric_rows<'a>(split: &'a str, m: &Metrics, wanted: &[String]) -> Result<Vec<MetricRow<'a>>> {
    wanted
        .iter()
        .map(|w| {
            let (metric, value) = match w.as_str() {
                "top1" => ("top1", m.top1),
                "top5" => ("top5", m.top5),
                "mt5r" => ("mean_top5_recall", m.mean_top5_recall),
                other => return Err(Error::Config(format!("unknown metric `{other}`"))),
            };
            Ok(MetricRow { split, metric, value })
        })
        .collect()
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = Checkpoint::load(&a.checkpoint)?.into_model()?;
    let manifest = DatasetManifest::read(&a.manifest)?;
    let data = Dataset::from_manifest_at(&a.manifest, &manifest, manifest.tau_a)?;
    std::fs::create_dir_all(&a.out)?;

    let preds = predict_dataset(&model, &data, 0)?;
    preds.validate()?;
    preds.write(a.out.join("predictions.jsonl"))?;
    preds.write_csv(std::fs::File::create(a.out.join("predictions.csv"))?)?;
    let m = Metrics::of(&preds)?;
    let rows = metric_rows("all", &m, &a.metrics)?;
    for r in &rows {
        println!("{:<18} {:.4}", r.metric, r.value);
    }
    write_rows_csv(&rows, std::fs::File::create(a.out.join("metrics.csv"))?)?;

    if !a.tau.is_empty() {
        let rows = eval_variable_tau(&model, manifest.tau_a, manifest.fps, &a.tau, |tau| {
            Dataset::from_manifest_at(&a.manifest, &manifest, tau)
        })?;
        for r in &rows {
            println!(
                "tau {:.2} steps {} top1 {:.4} top5 {:.4}",
                r.tau_a, r.steps, r.top1, r.top5
            );
        }
        write_rows_csv(&rows, std::fs::File::create(a.out.join("tau.csv"))?)?;
    }
    if !a.ratio.is_empty() {
        let rows = prototype_ratio_sweep(&model, &data, &a.ratio, a.ratio_seed)?;
        for r in &rows {
            println!(
                "ratio {:.2} comparisons {} top1 {:.4} top5 {:.4}",
                r.ratio, r.comparisons, r.top1, r.top5
            );
        }
        write_rows_csv(&rows, std::fs::File::create(a.out.join("ratio.csv"))?)?;
    }
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    let mut named = Vec::new();
    for arg in &a.inputs {
        let (name, path) = arg
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("input `{arg}` is not NAME=PATH")))?;
        named.push((name.to_string(), PredictionSet::read(path)?));
    }
    let weights: Vec<f64> = match &a.preset {
        Some(p) => {
            let table = fusion_preset(p)?;
            named
                .iter()
                .map(|(n, _)| {
                    table
                        .iter()
                        .find(|(k, _)| k == n)
                        .map(|(_, w)| *w)
                        .ok_or_else(|| Error::Config(format!("preset `{p}` has no weight for `{n}`")))
                })
                .collect::<Result<_>>()?
        }
        None if a.weights.is_empty() => vec![1.0; named.len()],
        None => a.weights.clone(),
    };
    if weights.len() != named.len() {
        return Err(Error::Config(format!(
            "{} weights for {} inputs",
            weights.len(),
            named.len()
        )));
    }
    let sets: Vec<(&PredictionSet, f64)> = named.iter().map(|(_, s)| s).zip(weights).collect();
    let fused = late_fuse(&sets)?;
    fused.write(&a.out)?;
    let mut rows = metric_rows(
        "action",
        &Metrics::of(&fused)?,
        &["top1".into(), "top5".into(), "mt5r".into()],
    )?;
    if let Some(p) = &a.actions {
        let (verbs, nouns) = ActionMap::read(p)?.marginalize(&fused)?;
        rows.extend(metric_rows(
            "verb",
            &Metrics::of(&verbs)?,
            &["top1".into(), "top5".into(), "mt5r".into()],
        )?);
        rows.extend(metric_rows(
            "noun",
            &Metrics::of(&nouns)?,
            &["top1".into(), "top5".into(), "mt5r".into()],
        )?);
    }
    for r in &rows {
        println!("{:<7}{:<18} {:.4}", r.split, r.metric, r.value);
    }
    write_rows_csv(&rows, std::fs::File::create(a.out.with_extension("metrics.csv"))?)?;
    Ok(())
}

fn write_matrix(path: &Path, m: &Tensor) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let k = m.matrix_dims().1;
    let mut header = vec!["class".to_string()];
    header.extend((0..k).map(|j| j.to_string()));
    w.write_record(&header)?;
    for (i, row) in m.rows().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct NeighbourRow {
    store: &'static str,
    class: usize,
    rank: usize,
    neighbour: usize,
    cosine: f64,
}

fn analyze(a: AnalyzeArgs) -> Result<()> {
    let visual = match (&a.checkpoint, &a.visual) {
        (Some(c), _) => Checkpoint::load(c)?
            .into_model()?
            .visual_prototypes()
            .cloned()
            .ok_or_else(|| Error::Config("checkpoint has no visual prototypes".into()))?,
        (None, Some(v)) => read_prototype_file(v)?.to_tensor(),
        (None, None) => return Err(Error::Config("pass --checkpoint or --visual".into())),
    };
    let language = read_prototype_file(&a.language)?.to_tensor();
    std::fs::create_dir_all(&a.out)?;
    write_matrix(&a.out.join("visual_similarity.csv"), &similarity_matrix(&visual))?;
    write_matrix(&a.out.join("language_similarity.csv"), &similarity_matrix(&language))?;
    write_prototype_file(a.out.join("visual.sglp"), &PrototypeArray::from_tensor(&visual)?)?;

    let score = alignment_score(&visual, &language)?;
    println!("alignment {score:.4}");
    std::fs::write(a.out.join("alignment.csv"), format!("alignment\n{score}\n"))?;

    let mut rows = Vec::new();
    for (store, m) in [("visual", &visual), ("language", &language)] {
        for class in 0..m.matrix_dims().0 {
            for (rank, (neighbour, cosine)) in nearest_actions(class, m, a.nearest)?.into_iter().enumerate() {
                rows.push(NeighbourRow {
                    store,
                    class,
                    rank: rank + 1,
                    neighbour,
                    cosine,
                });
            }
        }
    }
    write_rows_csv(&rows, std::fs::File::create(a.out.join("nearest.csv"))?)?;
    Ok(())
}
