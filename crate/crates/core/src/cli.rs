//! Command-line front end. Exit codes: 0 success, 2 usage, configuration or
//! data error, 3 internal invariant failure.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    corpus_counts, generate_candidates, import_standoff, load_jsonl, parse_conllu_documents, relation_stats,
    sample_negatives, split_corpus, write_jsonl, CandidatePair, Document, RelationSchema, NONE_LABEL,
};
use crate::error::{Error, Result};
use crate::eval::{
    ensemble, evaluate, positive_count, report, threshold_filter, tp_fp_by_distance, tp_fp_tsv, EvalReport, Prediction,
};
use crate::features::load_embeddings;
use crate::fixtures::{self, FixtureSpec};
use crate::graph::{build_adp, build_document_graph, shortest_path, NodeRef, Subtree};
use crate::model::{ModelConfig, TrainedModel, Variant};
use crate::serialize::{load_model_file, save_model_file};
use crate::trainer::{grad_check, train, GradCheckTarget};

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_INTERNAL,
        _ => EXIT_DATA,
    }
}

/// A sentence-range bound: a count or `inf`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "KRepr", into = "KRepr")]
pub struct KValue(pub Option<usize>);

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum KRepr {
    Int(i64),
    Str(String),
}

impl TryFrom<KRepr> for KValue {
    type Error = String;

    fn try_from(r: KRepr) -> std::result::Result<Self, String> {
        match r {
            KRepr::Int(i) if i >= 0 => Ok(KValue(Some(i as usize))),
            KRepr::Int(i) => Err(format!("sentence range must be non-negative, got {i}")),
            KRepr::Str(s) => s.parse().map_err(|e: Error| e.to_string()),
        }
    }
}

impl From<KValue> for KRepr {
    fn from(k: KValue) -> Self {
        match k.0 {
            Some(k) => KRepr::Int(k as i64),
            None => KRepr::Str("inf".into()),
        }
    }
}

impl FromStr for KValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "inf" | "∞" => Ok(KValue(None)),
            t => t
                .parse()
                .map(|k| KValue(Some(k)))
                .map_err(|_| Error::Config(format!("invalid sentence range {s:?} (non-negative integer or inf)"))),
        }
    }
}

impl std::fmt::Display for KValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.0 {
            Some(k) => write!(f, "{k}"),
            None => f.write_str("inf"),
        }
    }
}

fn k_limit(k: Option<usize>) -> usize {
    k.unwrap_or(usize::MAX)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Single corpus split by `split`; ignored when `train` is set.
    pub corpus: Option<PathBuf>,
    pub split: [f64; 3],
    pub train: Option<PathBuf>,
    pub dev: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    /// Balance training negatives against positives.
    pub negative_sampling: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            corpus: None,
            split: [0.6, 0.2, 0.2],
            train: None,
            dev: None,
            test: None,
            embeddings: None,
            negative_sampling: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub k_eval: Vec<KValue>,
    pub thresholds: Vec<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k_eval: (0..=3).map(|k| KValue(Some(k))).collect(),
            thresholds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub model: Option<PathBuf>,
    pub log: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// `Label:Type1:Type2` entries; empty means `Lives_In:Bacteria:Habitat`.
    pub schema: Vec<String>,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub eval: EvalConfig,
    pub output: OutputConfig,
}

impl RunConfig {
    /// Reads a TOML file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        let d = &mut cfg.data;
        for p in [&mut d.corpus, &mut d.train, &mut d.dev, &mut d.test, &mut d.embeddings] {
            fix(p);
        }
        let o = &mut cfg.output;
        for p in [&mut o.model, &mut o.log, &mut o.report_dir] {
            fix(p);
        }
        Ok(cfg)
    }

    pub fn schema(&self) -> Result<RelationSchema> {
        if self.schema.is_empty() {
            Ok(fixtures::schema())
        } else {
            RelationSchema::parse(&self.schema)
        }
    }

    /// Checks every referenced input path and numeric setting.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let d = &self.data;
        for (name, p) in [
            ("corpus", &d.corpus),
            ("train", &d.train),
            ("dev", &d.dev),
            ("test", &d.test),
            ("embeddings", &d.embeddings),
        ] {
            if let Some(p) = p {
                if !p.is_file() {
                    return Err(Error::Config(format!("{name} path {} does not exist", p.display())));
                }
            }
        }
        if self.eval.thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::Config("thresholds must lie in [0, 1]".into()));
        }
        self.schema()?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "idepnn", version, about = "Cross-sentence relation extraction over dependency paths")]
pub struct Cli {
    /// Log progress at info level.
    #[arg(short, long, global = true)]
    pub verbose: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert CoNLL-U (+ standoff annotations) or JSONL into validated JSONL.
    Ingest(IngestArgs),
    /// List candidate entity pairs of a corpus.
    Candidates(CandidatesArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score models over a grid of sentence ranges.
    Eval(EvalArgs),
    /// Write predictions for every candidate of a corpus.
    Predict(PredictArgs),
    /// Union several prediction files.
    Ensemble(EnsembleArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Show the dependency path between two mentions.
    Inspect(InspectArgs),
    /// Generate a synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long, conflicts_with = "jsonl", required_unless_present = "jsonl")]
    pub conllu: Option<PathBuf>,
    /// Directory with `<doc>.txt`, `<doc>.a1` and optional `<doc>.a2`.
    #[arg(long, requires = "conllu")]
    pub standoff: Option<PathBuf>,
    #[arg(long)]
    pub jsonl: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CandidatesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// `Label:Type1:Type2`, repeatable.
    #[arg(long)]
    pub schema: Vec<String>,
    #[arg(long = "k-train", default_value = "inf")]
    pub k: KValue,
    #[arg(long)]
    pub negative_sampling: bool,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long = "k-train")]
    pub k_train: Option<KValue>,
    #[arg(long)]
    pub variant: Option<Variant>,
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    #[arg(long)]
    pub epochs: Option<usize>,
}

impl Overrides {
    fn apply(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.model.seed = s;
        }
        if let Some(k) = self.k_train {
            cfg.model.k_train = k.0;
        }
        if let Some(v) = self.variant {
            cfg.model.variant = v;
        }
        if let Some(e) = self.epochs {
            cfg.model.optimizer.max_epochs = e;
        }
        for (src, dst) in [
            (&self.train, &mut cfg.data.train),
            (&self.dev, &mut cfg.data.dev),
            (&self.test, &mut cfg.data.test),
            (&self.embeddings, &mut cfg.data.embeddings),
        ] {
            if src.is_some() {
                dst.clone_from(src);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Overrides,
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Overrides,
    /// Model file, repeatable; several models are also ensembled.
    #[arg(long = "model", required = true)]
    pub models: Vec<PathBuf>,
    /// Comma-separated sentence ranges, e.g. `0,1,2,3,inf`.
    #[arg(long = "k-eval", value_delimiter = ',')]
    pub k_eval: Vec<KValue>,
    /// Comma-separated probability thresholds.
    #[arg(long, value_delimiter = ',')]
    pub threshold: Vec<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long = "k-eval", default_value = "inf")]
    pub k: KValue,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    #[arg(long = "predictions", required = true)]
    pub predictions: Vec<PathBuf>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// recursive, sequence, full-adp or all.
    #[arg(long, default_value = "all")]
    pub target: String,
    #[arg(long, default_value_t = 50)]
    pub cases: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub doc: String,
    #[arg(long)]
    pub e1: String,
    #[arg(long)]
    pub e2: String,
    /// Write Graphviz output here instead of stdout.
    #[arg(long)]
    pub dot: Option<PathBuf>,
    /// Also list the off-path subtrees.
    #[arg(long)]
    pub adp: bool,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub docs: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Probabilities of sentence distances 0,1,2,3.
    #[arg(long, value_delimiter = ',')]
    pub k_dist: Vec<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn with_file<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Conllu { sentence, line, message } => Error::Config(format!(
            "{}:{line}: sentence {sentence}: {message}",
            path.display()
        )),
        Error::Jsonl { line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
        Error::Embedding { line, message } => Error::Config(format!("{}:{line}: {message}", path.display())),
        other => other,
    })
}

pub fn load_corpus(path: &Path) -> Result<Vec<Document>> {
    with_file(path, load_jsonl(&read(path)?))
}

fn write(path: &Path, content: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, content)?;
    Ok(())
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut s = String::new();
    for i in items {
        s.push_str(&serde_json::to_string(i).map_err(|e| Error::Format(e.to_string()))?);
        s.push('\n');
    }
    write(path, &s)
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(f).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .map_err(|e| Error::Config(format!("{}:{}: {e}", path.display(), n + 1)))?,
        );
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => cmd_ingest(a),
        Command::Candidates(a) => cmd_candidates(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Ensemble(a) => cmd_ensemble(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Inspect(a) => cmd_inspect(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn cmd_ingest(a: IngestArgs) -> Result<()> {
    let docs = match (&a.conllu, &a.jsonl) {
        (_, Some(j)) => load_corpus(j)?,
        (Some(c), None) => {
            let stem = c.file_stem().and_then(|s| s.to_str()).unwrap_or("doc").to_string();
            let parsed = with_file(c, parse_conllu_documents(&read(c)?, &stem))?;
            let mut docs = Vec::with_capacity(parsed.len());
            for (id, sentences) in parsed {
                let doc = match &a.standoff {
                    Some(dir) => {
                        let txt = read(&dir.join(format!("{id}.txt")))?;
                        let a1 = read(&dir.join(format!("{id}.a1")))?;
                        let a2_path = dir.join(format!("{id}.a2"));
                        let a2 = if a2_path.is_file() { Some(read(&a2_path)?) } else { None };
                        import_standoff(&id, &txt, &a1, a2.as_deref(), sentences)?
                    }
                    None => Document::new(id, None, sentences, Vec::new(), Vec::new())?,
                };
                docs.push(doc);
            }
            docs
        }
        (None, None) => return Err(Error::Config("one of --conllu or --jsonl is required".into())),
    };
    write(&a.out, &write_jsonl(&docs))?;
    let c = corpus_counts(&docs);
    println!(
        "documents={} sentences={} mentions={} relations={} intra={} inter={}",
        c.documents, c.sentences, c.mentions, c.relations, c.intra, c.inter
    );
    Ok(())
}

fn cmd_candidates(a: CandidatesArgs) -> Result<()> {
    let schema = if a.schema.is_empty() {
        fixtures::schema()
    } else {
        RelationSchema::parse(&a.schema)?
    };
    let docs = load_corpus(&a.corpus)?;
    let mut cands: Vec<CandidatePair> = docs
        .iter()
        .flat_map(|d| generate_candidates(d, k_limit(a.k.0), &schema))
        .collect();
    if a.negative_sampling {
        cands = sample_negatives(&cands, a.seed);
    }
    write_lines(&a.out, &cands)?;
    println!("label\tintra\tinter");
    for (label, s) in relation_stats(&cands) {
        println!("{label}\t{}\t{}", s.intra, s.inter);
    }
    Ok(())
}

struct Splits {
    train: Vec<Document>,
    dev: Vec<Document>,
    test: Vec<Document>,
}

fn load_splits(cfg: &RunConfig) -> Result<Splits> {
    let d = &cfg.data;
    let opt = |p: &Option<PathBuf>| -> Result<Vec<Document>> {
        p.as_deref().map(load_corpus).transpose().map(Option::unwrap_or_default)
    };
    if d.train.is_some() || d.corpus.is_none() {
        return Ok(Splits {
            train: opt(&d.train)?,
            dev: opt(&d.dev)?,
            test: opt(&d.test)?,
        });
    }
    let all = opt(&d.corpus)?;
    let [train, dev, test] = split_corpus(all, d.split, cfg.model.seed)?;
    Ok(Splits {
        train,
        dev: if d.dev.is_some() { opt(&d.dev)? } else { dev },
        test: if d.test.is_some() { opt(&d.test)? } else { test },
    })
}

fn candidates_of(docs: &[Document], k: Option<usize>, schema: &RelationSchema) -> Vec<CandidatePair> {
    docs.iter().flat_map(|d| generate_candidates(d, k_limit(k), schema)).collect()
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let cfg = a.common.apply()?;
    let model_path = a
        .model
        .or_else(|| cfg.output.model.clone())
        .ok_or_else(|| Error::Config("no model output path (--model or output.model)".into()))?;
    let log_path = a.log.or_else(|| cfg.output.log.clone()).unwrap_or_else(|| {
        let mut p = model_path.clone().into_os_string();
        p.push(".log.tsv");
        PathBuf::from(p)
    });
    let schema = cfg.schema()?;
    let splits = load_splits(&cfg)?;
    if splits.train.is_empty() {
        return Err(Error::Config("no training documents (data.train or data.corpus)".into()));
    }
    let k = cfg.model.k_train;
    let mut train_c = candidates_of(&splits.train, k, &schema);
    if cfg.data.negative_sampling {
        train_c = sample_negatives(&train_c, cfg.model.seed);
    }
    let dev_c = candidates_of(&splits.dev, k, &schema);
    let pretrained = match &cfg.data.embeddings {
        Some(p) => {
            let f = fs::File::open(p)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.model.seed);
            Some(with_file(p, load_embeddings(BufReader::new(f), cfg.model.word_dim, &mut rng))?)
        }
        None => None,
    };
    let mut docs = splits.train;
    docs.extend(splits.dev);
    let (model, log) = train(&docs, &train_c, &dev_c, &schema, &cfg.model, pretrained)?;
    save_model_file(&model, &model_path)?;
    write(&log_path, &log.to_tsv())?;
    println!(
        "{}: {} training and {} dev candidates, {} epochs, best epoch {} (dev macro-F1 {:.4}), {} skipped",
        model.config.variant,
        train_c.len(),
        dev_c.len(),
        model.metadata.epochs_run,
        model.metadata.best_epoch,
        model.metadata.best_dev_f1,
        model.metadata.skipped_candidates
    );
    println!("model written to {}", model_path.display());
    Ok(())
}

/// Predictions for every candidate; candidates without a usable sequence
/// are predicted NONE.
pub fn predict_all(model: &TrainedModel, docs: &[Document], cands: &[CandidatePair]) -> Result<Vec<Prediction>> {
    let (insts, _) = model.prepare_instances(docs, cands)?;
    let mut by_key: BTreeMap<_, Prediction> = BTreeMap::new();
    for inst in &insts {
        let p = model.predict(inst)?;
        by_key.insert(p.key.clone(), p);
    }
    let none = model.sequence.label_index(NONE_LABEL).unwrap_or(0);
    Ok(cands
        .iter()
        .map(|c| {
            by_key.remove(&c.key()).unwrap_or_else(|| {
                let mut distribution = vec![0.0; model.labels().len()];
                distribution[none] = 1.0;
                Prediction {
                    key: c.key(),
                    sentence_distance: c.sentence_distance,
                    label: NONE_LABEL.into(),
                    probability: 1.0,
                    distribution,
                }
            })
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
struct ReportCell {
    system: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    threshold: Option<f64>,
    #[serde(flatten)]
    report: EvalReport,
}

fn max_k(ks: &[KValue]) -> Option<usize> {
    if ks.iter().any(|k| k.0.is_none()) {
        None
    } else {
        ks.iter().filter_map(|k| k.0).max()
    }
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let cfg = a.common.apply()?;
    let ks = if a.k_eval.is_empty() { cfg.eval.k_eval.clone() } else { a.k_eval };
    if ks.is_empty() {
        return Err(Error::Config("empty k-eval grid".into()));
    }
    let thresholds = if a.threshold.is_empty() { cfg.eval.thresholds.clone() } else { a.threshold };
    if thresholds.iter().any(|t| !(0.0..=1.0).contains(t)) {
        return Err(Error::Config("thresholds must lie in [0, 1]".into()));
    }
    let out_dir = a.out_dir.or_else(|| cfg.output.report_dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    let splits = load_splits(&cfg)?;
    let docs = if splits.test.is_empty() { splits.dev } else { splits.test };
    if docs.is_empty() {
        return Err(Error::Config("no evaluation documents (data.test, data.dev or data.corpus)".into()));
    }
    let widest = max_k(&ks);

    let mut cells = Vec::new();
    let mut sets = Vec::new();
    let mut gold: Option<Vec<CandidatePair>> = None;
    for path in &a.models {
        let model = load_model_file(path)?;
        let cands = candidates_of(&docs, widest, &model.schema);
        let preds = predict_all(&model, &docs, &cands)?;
        for k in &ks {
            let mut r = evaluate(&preds, &cands, k.0)?;
            r.train_k = model.config.k_train;
            cells.push(ReportCell {
                system: path.display().to_string(),
                threshold: None,
                report: r,
            });
        }
        gold.get_or_insert(cands);
        sets.push((model.config.k_train, preds));
    }
    let gold = gold.expect("at least one model");
    let (system, train_k, final_preds) = if sets.len() > 1 {
        let preds: Vec<Vec<Prediction>> = sets.iter().map(|(_, p)| p.clone()).collect();
        let merged = ensemble(&preds)?;
        for k in &ks {
            let r = evaluate(&merged, &gold, k.0)?;
            cells.push(ReportCell {
                system: "ensemble".into(),
                threshold: None,
                report: r,
            });
        }
        ("ensemble".to_string(), None, merged)
    } else {
        let (tk, p) = sets.pop().expect("one model");
        (a.models[0].display().to_string(), tk, p)
    };
    for &t in &thresholds {
        let kept = threshold_filter(&final_preds, t);
        for k in &ks {
            let mut r = evaluate(&kept, &gold, k.0)?;
            r.train_k = train_k;
            cells.push(ReportCell {
                system: system.clone(),
                threshold: Some(t),
                report: r,
            });
        }
    }

    let mut text = String::new();
    let mut order: Vec<(String, Option<f64>)> = Vec::new();
    for c in &cells {
        let key = (c.system.clone(), c.threshold);
        if !order.contains(&key) {
            order.push(key);
        }
    }
    for (sys, t) in &order {
        let group: Vec<EvalReport> = cells
            .iter()
            .filter(|c| &c.system == sys && c.threshold == *t)
            .map(|c| c.report.clone())
            .collect();
        match t {
            Some(t) => text.push_str(&format!("# {sys} (p >= {t})\n")),
            None => text.push_str(&format!("# {sys}\n")),
        }
        text.push_str(&report(&group).0);
        text.push('\n');
    }
    let json = serde_json::to_string_pretty(&cells).map_err(|e| Error::Format(e.to_string()))?;
    let tsv = tp_fp_tsv(&tp_fp_by_distance(&final_preds, &gold)?);
    write(&out_dir.join("report.txt"), &text)?;
    write(&out_dir.join("report.json"), &json)?;
    write(&out_dir.join("tp_fp_by_k.tsv"), &tsv)?;
    print!("{text}");
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = load_model_file(&a.model)?;
    let docs = load_corpus(&a.corpus)?;
    let cands = candidates_of(&docs, a.k.0, &model.schema);
    let mut preds = predict_all(&model, &docs, &cands)?;
    if let Some(t) = a.threshold {
        preds = threshold_filter(&preds, t);
    }
    write_lines(&a.out, &preds)?;
    println!("{} predictions, {} positive", preds.len(), positive_count(&preds));
    Ok(())
}

fn cmd_ensemble(a: EnsembleArgs) -> Result<()> {
    let sets = a
        .predictions
        .iter()
        .map(|p| read_lines::<Prediction>(p))
        .collect::<Result<Vec<_>>>()?;
    let mut merged = ensemble(&sets)?;
    if let Some(t) = a.threshold {
        merged = threshold_filter(&merged, t);
    }
    write_lines(&a.out, &merged)?;
    println!("{} predictions, {} positive", merged.len(), positive_count(&merged));
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> Result<()> {
    let targets: Vec<GradCheckTarget> = if a.target == "all" {
        GradCheckTarget::ALL.to_vec()
    } else {
        vec![a.target.parse()?]
    };
    let mut failed = Vec::new();
    for t in targets {
        let r = grad_check(t, a.cases, a.epsilon, a.seed)?;
        let ok = r.max_relative_error < a.tolerance;
        println!(
            "{t}: {} cases, {} parameters, max relative error {:.3e} [{}]",
            r.cases,
            r.parameters_checked,
            r.max_relative_error,
            if ok { "ok" } else { "FAIL" }
        );
        if !ok {
            failed.push(t.to_string());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("gradient check failed for {}", failed.join(", "))))
    }
}

fn fmt_subtree(s: &Subtree, doc: &Document, out: &mut String, depth: usize) {
    for (rel, c) in &s.children {
        let surface = doc.token(c.root.sentence, c.root.token).map_or("?", |t| t.surface.as_str());
        out.push_str(&format!("{}{rel} -> {}/{surface}\n", "  ".repeat(depth + 2), c.root));
        fmt_subtree(c, doc, out, depth + 1);
    }
}

fn cmd_inspect(a: InspectArgs) -> Result<()> {
    let docs = load_corpus(&a.corpus)?;
    let doc = docs
        .iter()
        .find(|d| d.id == a.doc)
        .ok_or_else(|| Error::Config(format!("unknown document {}", a.doc)))?;
    let mention = |id: &str| {
        doc.mention(id)
            .ok_or_else(|| Error::Config(format!("unknown mention {id} in document {}", doc.id)))
    };
    let (m1, m2) = (mention(&a.e1)?, mention(&a.e2)?);
    let graph = build_document_graph(doc)?;
    let path = shortest_path(
        &graph,
        NodeRef::new(m1.sentence, m1.head_token),
        NodeRef::new(m2.sentence, m2.head_token),
    )?;
    let mut out = String::new();
    for (i, n) in path.nodes.iter().enumerate() {
        if i > 0 {
            out.push_str(&format!(" -{}- ", path.edge_labels[i - 1]));
        }
        out.push_str(&format!("{n}/{}", graph.surface(*n).unwrap_or("?")));
    }
    out.push('\n');
    out.push_str(&format!(
        "nodes {}, NEXTS crossings {}, sentence distance {}\n",
        path.len(),
        path.nexts_crossings(),
        m1.sentence.abs_diff(m2.sentence)
    ));
    if a.adp {
        let adp = build_adp(&graph, &path, None);
        for (n, s) in path.nodes.iter().zip(&adp.subtrees) {
            out.push_str(&format!("  {n}/{}\n", graph.surface(*n).unwrap_or("?")));
            fmt_subtree(s, doc, &mut out, 0);
        }
    }
    print!("{out}");
    let dot = graph.to_dot(Some(&path));
    match &a.dot {
        Some(p) => write(p, &dot)?,
        None => std::io::stdout().write_all(dot.as_bytes())?,
    }
    Ok(())
}

fn cmd_synth(a: SynthArgs) -> Result<()> {
    let mut spec = FixtureSpec {
        num_docs: a.docs,
        seed: a.seed,
        ..FixtureSpec::default()
    };
    if !a.k_dist.is_empty() {
        spec.distance_probs = a
            .k_dist
            .as_slice()
            .try_into()
            .map_err(|_| Error::Config("--k-dist needs four probabilities".into()))?;
    }
    let docs = fixtures::generate_corpus(&spec)?;
    write(&a.out, &write_jsonl(&docs))?;
    let c = corpus_counts(&docs);
    println!(
        "documents={} sentences={} mentions={} relations={} intra={} inter={}",
        c.documents, c.sentences, c.mentions, c.relations, c.intra, c.inter
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_values_parse() {
        assert_eq!("3".parse::<KValue>().unwrap(), KValue(Some(3)));
        assert_eq!("inf".parse::<KValue>().unwrap(), KValue(None));
        assert!("-1".parse::<KValue>().is_err());
        let e: EvalConfig = toml::from_str("k_eval = [0, 2, \"inf\"]").unwrap();
        assert_eq!(e.k_eval, [KValue(Some(0)), KValue(Some(2)), KValue(None)]);
        assert!(toml::from_str::<EvalConfig>("k_eval = [-1]").is_err());
    }

    #[test]
    fn run_config_defaults_and_unknown_keys() {
        let c: RunConfig = toml::from_str("[model]\nvariant = \"iDepNN-SDP\"\nk_train = 1\n").unwrap();
        assert_eq!(c.model.variant, Variant::Sdp);
        assert_eq!(c.model.k_train, Some(1));
        assert_eq!(c.model.word_dim, 200);
        assert!(c.data.negative_sampling);
        assert!(toml::from_str::<RunConfig>("bogus = 1").is_err());
        assert!(toml::from_str::<RunConfig>("[model]\nhiden = 3\n").is_err());
        assert!(toml::from_str::<RunConfig>("[model.optimizer]\nlr = 0.1\n").is_err());
        let c: RunConfig = toml::from_str("[model.features]\npos = 0\npi = 7\n").unwrap();
        assert_eq!(c.model.features.pos, None);
        assert_eq!(c.model.features.pi, Some(7));
        assert_eq!(c.model.features.et, Some(5));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Config("x".into())), EXIT_DATA);
        assert_eq!(exit_code(&Error::Numeric("x".into())), EXIT_INTERNAL);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
