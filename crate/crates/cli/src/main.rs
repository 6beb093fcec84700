//! `metastim` command-line driver.
//!
//! Every subcommand takes `--config PATH`, `--seed N` and `--out DIR`.
//! Outputs are staged in a scratch directory next to `--out` and moved into
//! place only when the command succeeds, so a failed run leaves nothing
//! behind. Exit status: 0 success, 1 usage or config error, 2 runtime or data
//! error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use serde_json::json;

use metastim::corpus::{tokenize, Atom, CategoryPath, Split};
use metastim::labelspace::ClassifyMode;
use metastim::neural::Features;
use metastim::pipeline::{self, Deployed, PipelineConfig};
use metastim::synth::{self, SynthParams};

#[derive(Parser)]
#[command(name = "metastim", version, about = "Text atoms to metastimulus label space")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled JSONL corpus.
    GenCorpus {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        categories: Option<usize>,
        #[arg(long)]
        atoms_per_category: Option<usize>,
        /// Signature words per category.
        #[arg(long)]
        vocab_size: Option<usize>,
        #[arg(long)]
        filler_ratio: Option<f64>,
    },
    /// Load the corpus, partition it and write a dataset artifact.
    Ingest(Common),
    /// Fit word vectors and write every atom's feature vector.
    Embed(Common),
    /// Train the networks and write losses plus a checkpoint.
    Train(Common),
    /// Run the hyper-parameter tuner for every network.
    Tune(Common),
    /// Pattern search over meta-parameters with nested tuning.
    Metaopt(Common),
    /// Classify atoms with a trained checkpoint.
    Classify {
        #[command(flatten)]
        common: Common,
        /// Checkpoint directory written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSONL records with `text` and optional `category`.
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<ClassifyMode>,
    },
}

fn parse_mode(s: &str) -> Result<ClassifyMode, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("unknown mode {s:?} (projected | node_space)"))
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

impl From<metastim::Error> for CliError {
    fn from(e: metastim::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult<T> = Result<T, CliError>;

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Scratch directory that becomes `--out` on [`Staging::commit`] and is
/// removed otherwise.
struct Staging {
    dir: PathBuf,
    out: PathBuf,
}

impl Staging {
    fn new(out: &Path) -> CliResult<Self> {
        let name = out
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        let parent = out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(runtime)?;
        let dir = parent.join(format!(".{name}.staging-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        fs::create_dir_all(&dir).map_err(runtime)?;
        Ok(Staging {
            dir,
            out: out.to_path_buf(),
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn write(&self, name: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        fs::write(self.path(name), contents).map_err(runtime)
    }

    fn commit(self) -> CliResult<()> {
        fs::create_dir_all(&self.out).map_err(runtime)?;
        for entry in fs::read_dir(&self.dir).map_err(runtime)? {
            let entry = entry.map_err(runtime)?;
            let target = self.out.join(entry.file_name());
            if target.is_dir() {
                fs::remove_dir_all(&target).map_err(runtime)?;
            }
            fs::rename(entry.path(), &target).map_err(runtime)?;
        }
        fs::remove_dir_all(&self.dir).map_err(runtime)?;
        Ok(())
    }
}

impl Drop for Staging {
    fn drop(&mut self) {
        let _ = fs::remove_dir_all(&self.dir);
    }
}

fn load_config(common: &Common) -> CliResult<PipelineConfig> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| CliError::Config("--config is required".into()))?;
    let mut cfg = PipelineConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cfg)
}

fn to_json<T: serde::Serialize>(v: &T) -> CliResult<String> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(runtime)
}

fn csv_string(header: &[String], rows: &[Vec<String>]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(runtime)?;
    for r in rows {
        w.write_record(r).map_err(runtime)?;
    }
    String::from_utf8(w.into_inner().map_err(runtime)?).map_err(runtime)
}

fn gen_corpus(
    common: &Common,
    categories: Option<usize>,
    atoms_per_category: Option<usize>,
    vocab_size: Option<usize>,
    filler_ratio: Option<f64>,
) -> CliResult<()> {
    let mut params = match &common.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            serde_json::from_str::<SynthParams>(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
        }
        None => SynthParams::default(),
    };
    if let Some(v) = categories {
        params.categories = v;
    }
    if let Some(v) = atoms_per_category {
        params.atoms_per_category = v;
    }
    if let Some(v) = vocab_size {
        params.signature_words = v;
    }
    if let Some(v) = filler_ratio {
        params.filler_ratio = v;
    }
    if let Some(seed) = common.seed {
        params.seed = seed;
    }
    let corpus = synth::generate(&params).map_err(|e| CliError::Config(e.to_string()))?;
    let stage = Staging::new(&common.out)?;
    stage.write("corpus.jsonl", corpus.to_jsonl())?;
    stage.write("params.json", to_json(&params)?)?;
    stage.commit()?;
    println!("wrote {} atoms in {} categories", corpus.atoms.len(), params.categories);
    Ok(())
}

fn ingest(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ds = pipeline::load_dataset(&cfg)?;
    let ds = pipeline::split_dataset(&cfg, &ds)?;
    let stage = Staging::new(&common.out)?;
    stage.write("dataset.json", serde_json::to_string(&ds).map_err(runtime)?)?;
    stage.commit()?;
    println!(
        "ingested {} atoms, {} categories ({} train / {} test)",
        ds.len(),
        ds.observed_labels().len(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Test).len()
    );
    Ok(())
}

fn embed(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ds = pipeline::load_dataset(&cfg)?;
    let ds = pipeline::split_dataset(&cfg, &ds)?;
    let enc = pipeline::Encoder::fit(&cfg, &ds)?;
    let dim = enc.input_dim();
    let mut header: Vec<String> = ["atom_id", "category", "split"].map(String::from).to_vec();
    header.extend((0..dim).map(|k| format!("v{k}")));
    let mut rows = Vec::with_capacity(ds.len());
    for (atom, split) in ds.atoms.iter().zip(&ds.split) {
        let values = match enc.encode(atom)? {
            Features::Vector(v) => v,
            // sequences are summarized by their mean token vector
            Features::Sequence(s) => (0..dim).map(|k| s.iter().map(|t| t[k]).sum::<f64>() / s.len() as f64).collect(),
        };
        let mut row = vec![
            atom.id.to_string(),
            atom.category.to_string(),
            if *split == Split::Train { "train" } else { "test" }.to_string(),
        ];
        row.extend(values.iter().map(f64::to_string));
        rows.push(row);
    }
    let stage = Staging::new(&common.out)?;
    stage.write("words.vec", enc.table.to_text())?;
    if let Some(p) = &enc.pvdm {
        stage.write("pvdm.txt", p.to_text())?;
    }
    stage.write("atoms.csv", csv_string(&header, &rows)?)?;
    stage.commit()?;
    println!("embedded {} atoms ({} method, {dim} dims, {} words)", ds.len(), cfg.method.name(), enc.table.len());
    Ok(())
}

fn train(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ds = pipeline::load_dataset(&cfg)?;
    let out = pipeline::run_training(&cfg, &ds)?;
    let stage = Staging::new(&common.out)?;
    let rows: Vec<Vec<String>> = out
        .combined
        .rows
        .iter()
        .map(|r| {
            vec![
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.test_loss.to_string(),
                r.null_loss_mean.map(|v| v.to_string()).unwrap_or_default(),
            ]
        })
        .collect();
    let header = ["epoch", "train", "test", "null_mean"].map(String::from);
    stage.write("losses.csv", csv_string(&header, &rows)?)?;
    for (k, log) in out.logs.iter().enumerate() {
        stage.write(&format!("epoch_log_{k}.csv"), log.to_csv())?;
    }
    stage.write("hyper_params.json", to_json(&out.hyper)?)?;
    if let Some(results) = &out.tuning {
        for (k, r) in results.iter().enumerate() {
            stage.write(&format!("trials_{k}.csv"), r.to_csv())?;
        }
    }
    out.deployed.save(stage.path("checkpoint"))?;
    stage.commit()?;
    let last = out.combined.last().expect("at least one epoch");
    println!(
        "trained {} network(s) for {} epochs: train {:.6}, test {:.6}, null mean {}",
        out.deployed.models.len(),
        last.epoch,
        last.train_loss,
        last.test_loss,
        last.null_loss_mean.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into())
    );
    Ok(())
}

fn tune(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ds = pipeline::load_dataset(&cfg)?;
    let prep = pipeline::prepare(&cfg, &ds)?;
    let results = pipeline::tune_networks(&cfg, &prep)?;
    let stage = Staging::new(&common.out)?;
    let best: Vec<_> = results
        .iter()
        .enumerate()
        .map(|(k, r)| {
            json!({
                "network": k,
                "trial": r.best.index,
                "epochs": r.best.epochs,
                "fitness": r.best.fitness,
                "hyper_params": r.best.hp,
            })
        })
        .collect();
    stage.write("best_hp.json", to_json(&best)?)?;
    for (k, r) in results.iter().enumerate() {
        stage.write(&format!("trials_{k}.csv"), r.to_csv())?;
    }
    stage.commit()?;
    for (k, r) in results.iter().enumerate() {
        println!(
            "network {k}: best fitness {:.6} (trial {} of {})",
            r.best.fitness.unwrap_or(f64::INFINITY),
            r.best.index,
            r.trials.len()
        );
    }
    Ok(())
}

fn metaopt(common: &Common) -> CliResult<()> {
    let cfg = load_config(common)?;
    let ds = pipeline::load_dataset(&cfg)?;
    let out = pipeline::run_metaopt(&cfg, &ds)?;
    let stage = Staging::new(&common.out)?;
    let best = json!({
        "values": out.best_values,
        "point": out.search.best,
        "fitness": out.search.best_fitness,
        "base_fitness": out.search.base_fitness,
        "evaluations": out.search.evaluations,
        "iterations": out.search.trace.iterations(),
    });
    stage.write("best_meta.json", to_json(&best)?)?;
    stage.write("trace.csv", out.search.trace.to_csv())?;
    let failures: Vec<Vec<String>> = out
        .failures
        .iter()
        .map(|(p, r)| vec![serde_json::to_string(&p.0).unwrap_or_default(), r.clone()])
        .collect();
    stage.write("failures.csv", csv_string(&["point_json".into(), "reason".into()], &failures)?)?;
    stage.commit()?;
    println!(
        "best fitness {:.6} (base {:.6}) after {} iterations, {} evaluations",
        out.search.best_fitness,
        out.search.base_fitness,
        out.search.trace.iterations(),
        out.search.evaluations
    );
    println!("{}", serde_json::to_string(&out.best_values).map_err(runtime)?);
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClassifyRecord {
    text: String,
    #[serde(default)]
    category: Option<Vec<String>>,
}

fn read_classify_input(path: &Path) -> CliResult<Vec<(Atom, Option<CategoryPath>)>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ClassifyRecord =
            serde_json::from_str(line).map_err(|e| CliError::Runtime(format!("line {}: {e}", n + 1)))?;
        let tokens = tokenize(&rec.text);
        if tokens.is_empty() {
            return Err(CliError::Runtime(format!("line {}: atom has no tokens", n + 1)));
        }
        let category = rec.category.map(CategoryPath::new).transpose()?;
        let atom = Atom {
            id: out.len() as u64,
            tokens,
            category: category.clone().unwrap_or_else(|| CategoryPath::new(["?"]).expect("non-empty")),
        };
        out.push((atom, category));
    }
    if out.is_empty() {
        return Err(CliError::Runtime(format!("{}: no atoms", path.display())));
    }
    Ok(out)
}

fn classify(common: &Common, checkpoint: &Path, input: &Path, mode: Option<ClassifyMode>) -> CliResult<()> {
    let override_mode = match &common.config {
        Some(_) => Some(load_config(common)?.classify_mode),
        None => None,
    };
    let deployed = Deployed::load(checkpoint)?;
    let mode = mode.or(override_mode).unwrap_or(deployed.config.classify_mode);
    let atoms = read_classify_input(input)?;
    let classifier = deployed.classifier()?;
    let d = deployed.projection.d_out();
    let mut header: Vec<String> = ["index", "predicted", "actual"].map(String::from).to_vec();
    header.extend((0..d).map(|k| format!("y{k}")));
    let mut rows = Vec::with_capacity(atoms.len());
    let mut lines = Vec::with_capacity(atoms.len());
    let (mut hits, mut labeled) = (0, 0);
    for (atom, actual) in &atoms {
        let yhat = deployed.predict(atom)?;
        let predicted = classifier.classify(&yhat, &deployed.tree, mode)?;
        if let Some(a) = actual {
            labeled += 1;
            hits += (a == predicted) as usize;
        }
        let mut row = vec![
            atom.id.to_string(),
            predicted.to_string(),
            actual.as_ref().map(|a| a.to_string()).unwrap_or_default(),
        ];
        row.extend(yhat.0.iter().map(f64::to_string));
        rows.push(row);
        lines.push(predicted.to_string());
    }
    let stage = Staging::new(&common.out)?;
    stage.write("predictions.csv", csv_string(&header, &rows)?)?;
    stage.commit()?;
    for l in lines {
        println!("{l}");
    }
    if labeled > 0 {
        eprintln!("accuracy {hits}/{labeled}");
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<()> {
    match &cli.command {
        Command::GenCorpus {
            common,
            categories,
            atoms_per_category,
            vocab_size,
            filler_ratio,
        } => gen_corpus(common, *categories, *atoms_per_category, *vocab_size, *filler_ratio),
        Command::Ingest(c) => ingest(c),
        Command::Embed(c) => embed(c),
        Command::Train(c) => train(c),
        Command::Tune(c) => tune(c),
        Command::Metaopt(c) => metaopt(c),
        Command::Classify {
            common,
            checkpoint,
            input,
            mode,
        } => classify(common, checkpoint, input, *mode),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
