//! End-to-end pipeline: corpus → atom features → projected labels →
//! networks, plus hyper-parameter tuning, the meta-parameter fitness used by
//! pattern search, and a deployable checkpoint.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::atomvec::{
    embed_bow, embed_nabla, train_pvdm, weight_tokens, BowMode, EmbeddingMethod, PvdmModel, PvdmParams,
};
use crate::corpus::{self, Atom, CategoryPath, Dataset, PimsTree, Split};
use crate::labelspace::{fit_pca, label_matrix, one_hot, ClassifyMode, Classifier, LabelPoint, ProjectionModel};
use crate::neural::{self, AnnModel, ArchKind, DataView, EpochLog, EpochRow, Features, HyperParams, OptimizerKind};
use crate::patsearch::{pattern_search, MetaPoint, MetaSpace, MetaValue, MetaValues, SearchParams, SearchResult};
use crate::rng::derive;
use crate::tuner::{self, HyperSpace, IntRange, TuneResult, TunerKind, TunerParams};
use crate::wordvec::{build_cooccurrence, extract_keywords, load_embeddings, train_embeddings, EmbeddingTable, KeywordSet};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// One `{"text", "category"}` record per line.
    #[default]
    Jsonl,
    /// Directory tree of `.txt` files; directories are categories.
    Tree,
    /// A dataset artifact written by `ingest`.
    Dataset,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputMode {
    /// One scalar-output network per projected dimension.
    #[default]
    PerDimension,
    /// One network predicting every dimension.
    Joint,
}

/// Fixed hyper-parameters: one set for every network, or one per dimension.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum HyperSetting {
    Shared(HyperParams),
    PerDimension(Vec<HyperParams>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PvdmSettings {
    pub window: usize,
    pub negatives: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Gradient steps when inferring an atom's vector.
    pub infer_steps: usize,
    pub infer_lr: f64,
}

impl Default for PvdmSettings {
    fn default() -> Self {
        PvdmSettings {
            window: 2,
            negatives: 5,
            epochs: 20,
            lr: 0.05,
            infer_steps: 100,
            infer_lr: 0.1,
        }
    }
}

/// Everything a run needs; every field has a default except the corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    /// Relative paths resolve against the config file's directory.
    pub corpus: PathBuf,
    pub corpus_format: CorpusFormat,
    pub seed: u64,
    pub test_fraction: f64,
    pub null_copies: usize,
    pub method: EmbeddingMethod,
    /// Word-vector dimension, which is also the network input width.
    pub input_dims: usize,
    pub keyword_weight: f64,
    /// Co-occurrence window for word vectors.
    pub window: usize,
    pub nabla_level: usize,
    pub pvdm: PvdmSettings,
    pub d_out: usize,
    pub architecture: ArchKind,
    pub optimizer: OptimizerKind,
    pub tuner: TunerKind,
    pub tuner_params: TunerParams,
    /// Defaults to the standard space for `optimizer`.
    pub hyper_space: Option<HyperSpace>,
    pub trial_epochs: usize,
    pub final_epochs: usize,
    pub output_mode: OutputMode,
    /// When set, `train` uses these instead of tuning first.
    pub hyper_params: Option<HyperSetting>,
    pub classify_mode: ClassifyMode,
    /// Defaults to [`MetaSpace::standard`].
    pub meta_space: Option<MetaSpace>,
    pub search: SearchParams,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            corpus: PathBuf::new(),
            corpus_format: CorpusFormat::Jsonl,
            seed: 0,
            test_fraction: 0.2,
            null_copies: 5,
            method: EmbeddingMethod::Pvdm,
            input_dims: 20,
            keyword_weight: 1.0,
            window: 2,
            nabla_level: 1,
            pvdm: PvdmSettings::default(),
            d_out: 4,
            architecture: ArchKind::Ffnn,
            optimizer: OptimizerKind::Adam,
            tuner: TunerKind::Random,
            tuner_params: TunerParams::default(),
            hyper_space: None,
            trial_epochs: 10,
            final_epochs: 200,
            output_mode: OutputMode::PerDimension,
            hyper_params: None,
            classify_mode: ClassifyMode::Projected,
            meta_space: None,
            search: SearchParams::default(),
        }
    }
}

fn check(ok: bool, what: &'static str, reason: impl Into<String>) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::invalid(what, reason))
    }
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config file, resolving a relative corpus path
    /// against the file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        if cfg.corpus.is_relative() && !cfg.corpus.as_os_str().is_empty() {
            if let Some(dir) = path.parent() {
                cfg.corpus = dir.join(&cfg.corpus);
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction",
            format!("{} is not in (0, 1)", self.test_fraction),
        )?;
        check(self.null_copies >= 1, "null_copies", "must be at least 1")?;
        check(self.input_dims >= 1, "input_dims", "must be at least 1")?;
        check(
            self.keyword_weight > 0.0 && self.keyword_weight.is_finite(),
            "keyword_weight",
            format!("{} is not positive", self.keyword_weight),
        )?;
        check(self.window >= 1, "window", "must be at least 1")?;
        check(self.nabla_level >= 1, "nabla_level", "must be at least 1")?;
        check(self.d_out >= 1, "d_out", "must be at least 1")?;
        check(self.trial_epochs >= 1, "trial_epochs", "must be at least 1")?;
        check(self.final_epochs >= 1, "final_epochs", "must be at least 1")?;
        check(self.tuner_params.budget >= 1, "tuner_params", "budget must be at least 1")?;
        check(self.tuner_params.eta >= 2, "tuner_params", "eta must be at least 2")?;
        check(self.tuner_params.r >= 1, "tuner_params", "r must be at least 1")?;
        check(self.pvdm.epochs >= 1 || self.method != EmbeddingMethod::Pvdm, "pvdm", "epochs must be at least 1")?;
        match &self.hyper_params {
            Some(HyperSetting::Shared(hp)) => hp.validate()?,
            Some(HyperSetting::PerDimension(hps)) => {
                let expected = match self.output_mode {
                    OutputMode::PerDimension => self.d_out,
                    OutputMode::Joint => 1,
                };
                check(
                    hps.len() == expected,
                    "hyper_params",
                    format!("{} sets given, {expected} networks", hps.len()),
                )?;
                for hp in hps {
                    hp.validate()?;
                }
            }
            None => {}
        }
        self.hyper_space().validate()?;
        if let Some(space) = &self.meta_space {
            space.validate()?;
        }
        self.search.validate()
    }

    /// The tuner's search space; recurrent networks get exactly one layer.
    pub fn hyper_space(&self) -> HyperSpace {
        let mut space = self
            .hyper_space
            .clone()
            .unwrap_or_else(|| HyperSpace::for_optimizer(self.optimizer));
        if self.hyper_space.is_none() {
            space.optimizer = self.optimizer;
        }
        if self.architecture == ArchKind::Rnn {
            space.hidden_layers = IntRange { min: 1, max: 1 };
        }
        space
    }

    pub fn meta_space(&self) -> MetaSpace {
        self.meta_space.clone().unwrap_or_else(MetaSpace::standard)
    }

    /// Current values of the variables in `space`.
    pub fn meta_values(&self, space: &MetaSpace) -> Result<MetaValues> {
        let mut out = MetaValues::new();
        for v in &space.variables {
            let value = match v.name.as_str() {
                "d_out" => MetaValue::Int(self.d_out as i64),
                "input_dims" => MetaValue::Int(self.input_dims as i64),
                "keyword_weight" => MetaValue::Real(self.keyword_weight),
                "method" => MetaValue::Choice(self.method.name().into()),
                "optimizer" => MetaValue::Choice(self.optimizer.name().into()),
                "architecture" => MetaValue::Choice(enum_name(&self.architecture)),
                "tuner" => MetaValue::Choice(enum_name(&self.tuner)),
                "tuner_budget" => MetaValue::Int(self.tuner_params.budget as i64),
                "hyperband_r" => MetaValue::Int(self.tuner_params.r as i64),
                "hyperband_eta" => MetaValue::Int(self.tuner_params.eta as i64),
                other => return Err(Error::invalid("meta_space", format!("unknown variable {other:?}"))),
            };
            out.insert(v.name.clone(), value);
        }
        Ok(out)
    }

    /// This config with the given meta-parameters substituted.
    pub fn with_meta(&self, values: &MetaValues) -> Result<Self> {
        let mut cfg = self.clone();
        for (name, value) in values {
            let bad = || Error::invalid("meta values", format!("{name} = {value:?}"));
            let uint = || value.as_i64().filter(|v| *v >= 0).map(|v| v as usize).ok_or_else(bad);
            let choice = || value.as_str().map(|s| serde_json::Value::String(s.into())).ok_or_else(bad);
            match name.as_str() {
                "d_out" => cfg.d_out = uint()?,
                "input_dims" => cfg.input_dims = uint()?,
                "keyword_weight" => cfg.keyword_weight = value.as_f64().ok_or_else(bad)?,
                "method" => cfg.method = serde_json::from_value(choice()?).map_err(|_| bad())?,
                "optimizer" => cfg.optimizer = serde_json::from_value(choice()?).map_err(|_| bad())?,
                "architecture" => cfg.architecture = serde_json::from_value(choice()?).map_err(|_| bad())?,
                "tuner" => cfg.tuner = serde_json::from_value(choice()?).map_err(|_| bad())?,
                "tuner_budget" => cfg.tuner_params.budget = uint()?,
                "hyperband_r" => cfg.tuner_params.r = uint()?,
                "hyperband_eta" => cfg.tuner_params.eta = uint()?,
                _ => return Err(bad()),
            }
        }
        // the optimizer choice carries its own constant ranges
        if let Some(space) = &mut cfg.hyper_space {
            if space.optimizer != cfg.optimizer {
                let fresh = HyperSpace::for_optimizer(cfg.optimizer);
                space.optimizer = cfg.optimizer;
                space.optimizer_params = fresh.optimizer_params;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn enum_name<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(String::from))
        .unwrap_or_default()
}

pub fn load_dataset(cfg: &PipelineConfig) -> Result<Dataset> {
    match cfg.corpus_format {
        CorpusFormat::Jsonl => corpus::ingest_jsonl(&cfg.corpus),
        CorpusFormat::Tree => corpus::ingest_tree(&cfg.corpus),
        CorpusFormat::Dataset => {
            let path = &cfg.corpus;
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let ds: Dataset = serde_json::from_str(&text)?;
            if ds.atoms.is_empty() || ds.split.len() != ds.atoms.len() {
                return Err(Error::invalid("dataset", "empty or inconsistent artifact"));
            }
            Ok(ds)
        }
    }
}

/// Seed streams of a run.
mod stream {
    pub const PARTITION: u64 = 1;
    pub const NULL_SETS: u64 = 2;
    pub const WORD_VECTORS: u64 = 3;
    pub const PVDM: u64 = 4;
    pub const SEARCH: u64 = 5;
    pub const INIT: u64 = 100;
    pub const TRAIN: u64 = 200;
    pub const TUNE: u64 = 300;
}

/// Per-coordinate standardization fitted on training features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Self {
        let mut n = 0.0_f64;
        let mut sum = vec![0.0; dim];
        let mut sq = vec![0.0; dim];
        for r in rows {
            n += 1.0;
            for k in 0..dim {
                sum[k] += r[k];
                sq[k] += r[k] * r[k];
            }
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n.max(1.0)).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n.max(1.0) - m * m).max(0.0);
                if var.sqrt() > 1e-12 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, scale }
    }

    fn apply(&self, v: &mut [f64]) {
        for ((x, m), s) in v.iter_mut().zip(&self.mean).zip(&self.scale) {
            *x = (*x - m) / s;
        }
    }
}

/// FNV-1a over the token sequence; seeds PV-DM inference so identical text
/// gets an identical vector.
fn text_hash(tokens: &[String]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for t in tokens {
        for b in t.bytes().chain(std::iter::once(0)) {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        }
    }
    h
}

/// Turns atoms into network inputs.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub method: EmbeddingMethod,
    pub architecture: ArchKind,
    pub nabla_level: usize,
    pub table: EmbeddingTable,
    pub pvdm: Option<PvdmModel>,
    pub keywords: KeywordSet,
    pub infer_steps: usize,
    pub infer_lr: f64,
    pub standardizer: Standardizer,
}

impl Encoder {
    /// Fits word vectors (and PV-DM when selected) on the text of every
    /// atom, then standardization on the training atoms.
    pub fn fit(cfg: &PipelineConfig, dataset: &Dataset) -> Result<Self> {
        let cooc = build_cooccurrence(&dataset.atoms, cfg.window)?;
        let table = train_embeddings(&cooc, cfg.input_dims, derive(cfg.seed, stream::WORD_VECTORS))?;
        let pvdm = if cfg.method == EmbeddingMethod::Pvdm && cfg.architecture == ArchKind::Ffnn {
            let params = PvdmParams {
                vec_size: cfg.input_dims,
                window: cfg.pvdm.window,
                negatives: cfg.pvdm.negatives,
                epochs: cfg.pvdm.epochs,
                lr: cfg.pvdm.lr,
                seed: derive(cfg.seed, stream::PVDM),
            };
            Some(train_pvdm(&dataset.atoms, &table, &params)?)
        } else {
            None
        };
        let mut enc = Encoder {
            method: cfg.method,
            architecture: cfg.architecture,
            nabla_level: cfg.nabla_level,
            table,
            pvdm,
            keywords: extract_keywords(&dataset.tree, cfg.keyword_weight),
            infer_steps: cfg.pvdm.infer_steps,
            infer_lr: cfg.pvdm.infer_lr,
            standardizer: Standardizer {
                mean: Vec::new(),
                scale: Vec::new(),
            },
        };
        let raw: Vec<Features> = dataset.train().map(|a| enc.raw(a)).collect::<Result<_>>()?;
        let dim = cfg.input_dims;
        enc.standardizer = match enc.architecture {
            ArchKind::Ffnn => Standardizer::fit(
                raw.iter().map(|f| match f {
                    Features::Vector(v) => v.as_slice(),
                    Features::Sequence(_) => unreachable!("vector encoder"),
                }),
                dim,
            ),
            ArchKind::Rnn => Standardizer::fit(
                raw.iter().flat_map(|f| match f {
                    Features::Sequence(s) => s.iter().map(Vec::as_slice),
                    Features::Vector(_) => unreachable!("sequence encoder"),
                }),
                dim,
            ),
        };
        Ok(enc)
    }

    pub fn input_dim(&self) -> usize {
        self.table.dim()
    }

    fn raw(&self, atom: &Atom) -> Result<Features> {
        if self.architecture == ArchKind::Rnn {
            return Ok(Features::Sequence(weight_tokens(atom, &self.table, &self.keywords)?));
        }
        let v = match self.method {
            EmbeddingMethod::BowSum => embed_bow(atom, &self.table, &self.keywords, BowMode::Sum)?,
            EmbeddingMethod::BowMean => embed_bow(atom, &self.table, &self.keywords, BowMode::Mean)?,
            EmbeddingMethod::Nabla => embed_nabla(atom, &self.table, &self.keywords, self.nabla_level)?,
            EmbeddingMethod::Pvdm => {
                let model = self
                    .pvdm
                    .as_ref()
                    .ok_or_else(|| Error::invalid("encoder", "PV-DM model missing"))?;
                let seed = derive(model.params.seed, text_hash(&atom.tokens));
                model.infer(atom, &self.keywords, self.infer_steps, self.infer_lr, seed)?
            }
        };
        Ok(Features::Vector(v.values))
    }

    pub fn encode(&self, atom: &Atom) -> Result<Features> {
        let mut f = self.raw(atom)?;
        match &mut f {
            Features::Vector(v) => self.standardizer.apply(v),
            Features::Sequence(s) => s.iter_mut().for_each(|v| self.standardizer.apply(v)),
        }
        Ok(f)
    }
}

/// Partitioned dataset with features, projected labels and null labels.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: Dataset,
    pub encoder: Encoder,
    pub projection: ProjectionModel,
    pub train_x: Vec<Features>,
    pub train_y: Vec<LabelPoint>,
    pub test_x: Vec<Features>,
    pub test_y: Vec<LabelPoint>,
    /// One entry per null copy, aligned with `test_x`.
    pub null_y: Vec<Vec<LabelPoint>>,
}

/// Partition, encode, fit the label projection on training labels and
/// build the null copies.
/// The run's train/test split; a dataset that already has both parts is kept.
pub fn split_dataset(cfg: &PipelineConfig, dataset: &Dataset) -> Result<Dataset> {
    if dataset.split.contains(&Split::Test) && dataset.split.contains(&Split::Train) {
        Ok(dataset.clone())
    } else {
        corpus::partition(dataset, cfg.test_fraction, derive(cfg.seed, stream::PARTITION))
    }
}

pub fn prepare(cfg: &PipelineConfig, dataset: &Dataset) -> Result<Prepared> {
    let dataset = split_dataset(cfg, dataset)?;
    let encoder = Encoder::fit(cfg, &dataset)?;
    let train_idx = dataset.indices(Split::Train);
    let test_idx = dataset.indices(Split::Test);
    let labels: Vec<usize> = train_idx.iter().map(|&i| dataset.label(i)).collect();
    let projection = fit_pca(&label_matrix(&labels, dataset.tree.len()), cfg.d_out)?;
    let project = |path: &CategoryPath| -> Result<LabelPoint> {
        projection.project(&one_hot(path, &dataset.tree)?.values())
    };
    let encode_all = |idx: &[usize]| -> Result<(Vec<Features>, Vec<LabelPoint>)> {
        idx.iter()
            .map(|&i| {
                let a = &dataset.atoms[i];
                Ok((encoder.encode(a)?, project(&a.category)?))
            })
            .collect::<Result<Vec<_>>>()
            .map(|v| v.into_iter().unzip())
    };
    let (train_x, train_y) = encode_all(&train_idx)?;
    let (test_x, test_y) = encode_all(&test_idx)?;
    let null_y = corpus::make_null_sets(&dataset, cfg.null_copies, derive(cfg.seed, stream::NULL_SETS))?
        .iter()
        .map(|n| n.relabels.iter().map(project).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    Ok(Prepared {
        dataset,
        encoder,
        projection,
        train_x,
        train_y,
        test_x,
        test_y,
        null_y,
    })
}

/// Regression targets for one network.
#[derive(Clone, Debug)]
pub struct Targets {
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub null: Vec<Vec<Vec<f64>>>,
}

impl Prepared {
    pub fn networks(&self, mode: OutputMode) -> usize {
        match mode {
            OutputMode::PerDimension => self.projection.d_out(),
            OutputMode::Joint => 1,
        }
    }

    /// Targets of network `k`: dimension `k` alone, or every dimension.
    pub fn targets(&self, mode: OutputMode, k: usize) -> Targets {
        let pick = |p: &LabelPoint| match mode {
            OutputMode::PerDimension => vec![p.0[k]],
            OutputMode::Joint => p.0.clone(),
        };
        Targets {
            train: self.train_y.iter().map(pick).collect(),
            test: self.test_y.iter().map(pick).collect(),
            null: self.null_y.iter().map(|n| n.iter().map(pick).collect()).collect(),
        }
    }

    fn view<'a>(&'a self, t: &'a Targets) -> DataView<'a> {
        DataView {
            train_x: &self.train_x,
            train_y: &t.train,
            test_x: &self.test_x,
            test_y: &t.test,
            null_y: &t.null,
        }
    }
}

/// Trains network `k` from a fresh seeded initialization.
pub fn train_network(
    cfg: &PipelineConfig,
    prep: &Prepared,
    k: usize,
    hp: &HyperParams,
    epochs: usize,
    seed: u64,
) -> Result<(AnnModel, EpochLog)> {
    let t = prep.targets(cfg.output_mode, k);
    let out = t.train[0].len();
    let arch = hp.arch(cfg.architecture, prep.encoder.input_dim(), out)?;
    let mut model = neural::init_network(&arch, derive(seed, stream::INIT + k as u64))?;
    let log = neural::train(&mut model, &prep.view(&t), hp, epochs, derive(seed, stream::TRAIN + k as u64))?;
    Ok((model, log))
}

/// Runs the configured tuner for every network. Fitness of a trial is the
/// test loss after its last epoch.
pub fn tune_networks(cfg: &PipelineConfig, prep: &Prepared) -> Result<Vec<TuneResult>> {
    let space = cfg.hyper_space();
    let mut params = cfg.tuner_params;
    params.epochs = cfg.trial_epochs;
    (0..prep.networks(cfg.output_mode))
        .map(|k| {
            let t = prep.targets(cfg.output_mode, k);
            let out = t.train[0].len();
            let fitness = |hp: &HyperParams, epochs: usize, seed: u64| -> Result<f64> {
                let arch = hp.arch(cfg.architecture, prep.encoder.input_dim(), out)?;
                let mut model = neural::init_network(&arch, derive(seed, stream::INIT))?;
                let mut view = prep.view(&t);
                view.null_y = &[];
                let log = neural::train(&mut model, &view, hp, epochs, derive(seed, stream::TRAIN))?;
                Ok(log.last().map_or(f64::INFINITY, |r| r.test_loss))
            };
            tuner::tune(cfg.tuner, &space, &params, fitness, derive(cfg.seed, stream::TUNE + k as u64))
        })
        .collect()
}

/// Hyper-parameters for each network: fixed from the config, or tuned.
pub fn resolve_hyper(cfg: &PipelineConfig, prep: &Prepared) -> Result<(Vec<HyperParams>, Option<Vec<TuneResult>>)> {
    let n = prep.networks(cfg.output_mode);
    match &cfg.hyper_params {
        Some(HyperSetting::Shared(hp)) => Ok((vec![hp.clone(); n], None)),
        Some(HyperSetting::PerDimension(hps)) => {
            check(hps.len() == n, "hyper_params", format!("{} sets given, {n} networks", hps.len()))?;
            Ok((hps.clone(), None))
        }
        None => {
            let results = tune_networks(cfg, prep)?;
            Ok((results.iter().map(|r| r.best.hp.clone()).collect(), Some(results)))
        }
    }
}

/// Mean over networks of each epoch's losses. With per-dimension networks
/// this is the joint mean squared error over all dimensions.
pub fn combine_logs(logs: &[EpochLog]) -> EpochLog {
    let epochs = logs.iter().map(EpochLog::len).min().unwrap_or(0);
    let n = logs.len() as f64;
    let rows = (0..epochs)
        .map(|e| {
            let rows: Vec<&EpochRow> = logs.iter().map(|l| &l.rows[e]).collect();
            let nulls: Option<Vec<f64>> = rows.iter().map(|r| r.null_loss_mean).collect();
            EpochRow {
                epoch: e + 1,
                train_loss: rows.iter().map(|r| r.train_loss).sum::<f64>() / n,
                test_loss: rows.iter().map(|r| r.test_loss).sum::<f64>() / n,
                null_loss_mean: nulls.map(|v| v.iter().sum::<f64>() / n),
            }
        })
        .collect();
    EpochLog { rows }
}

/// Trained pipeline: everything needed to classify new text.
#[derive(Clone, Debug)]
pub struct Deployed {
    pub config: PipelineConfig,
    pub tree: PimsTree,
    pub encoder: Encoder,
    pub projection: ProjectionModel,
    pub models: Vec<AnnModel>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub deployed: Deployed,
    pub hyper: Vec<HyperParams>,
    pub tuning: Option<Vec<TuneResult>>,
    pub logs: Vec<EpochLog>,
    pub combined: EpochLog,
    pub prepared: Prepared,
}

/// Full run: prepare, resolve hyper-parameters, train every network for
/// `final_epochs`.
pub fn run_training(cfg: &PipelineConfig, dataset: &Dataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    let prep = prepare(cfg, dataset)?;
    let (hyper, tuning) = resolve_hyper(cfg, &prep)?;
    let mut models = Vec::new();
    let mut logs = Vec::new();
    for (k, hp) in hyper.iter().enumerate() {
        let (m, log) = train_network(cfg, &prep, k, hp, cfg.final_epochs, cfg.seed)?;
        if m.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("training", format!("network {k} diverged")));
        }
        models.push(m);
        logs.push(log);
    }
    let combined = combine_logs(&logs);
    Ok(TrainOutcome {
        deployed: Deployed {
            config: cfg.clone(),
            tree: prep.dataset.tree.clone(),
            encoder: prep.encoder.clone(),
            projection: prep.projection.clone(),
            models,
        },
        hyper,
        tuning,
        logs,
        combined,
        prepared: prep,
    })
}

impl Deployed {
    pub fn predict_features(&self, x: &Features) -> Result<LabelPoint> {
        let mut y = Vec::with_capacity(self.projection.d_out());
        for m in &self.models {
            y.extend(m.forward(x)?);
        }
        Ok(LabelPoint(y))
    }

    pub fn predict(&self, atom: &Atom) -> Result<LabelPoint> {
        self.predict_features(&self.encoder.encode(atom)?)
    }

    pub fn classifier(&self) -> Result<Classifier> {
        Classifier::new(self.projection.clone())
    }

    pub fn classify(&self, atom: &Atom, mode: ClassifyMode) -> Result<(CategoryPath, LabelPoint)> {
        let yhat = self.predict(atom)?;
        let path = self.classifier()?.classify(&yhat, &self.tree, mode)?.clone();
        Ok((path, yhat))
    }

    /// Writes `manifest.json`, `words.vec`, `projection.txt`, `pvdm.txt`
    /// (PV-DM only) and `net_{k}.json` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let nets: Vec<String> = (0..self.models.len()).map(|k| format!("net_{k}.json")).collect();
        let manifest = Manifest {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            config: self.config.clone(),
            tree: self.tree.clone(),
            keyword_weight: self.encoder.keywords.weight,
            standardizer: self.encoder.standardizer.clone(),
            pvdm: self.encoder.pvdm.as_ref().map(|_| "pvdm.txt".to_string()),
            networks: nets.clone(),
        };
        let write = |name: &str, text: String| {
            let p = dir.join(name);
            fs::write(&p, text).map_err(|e| Error::io(p, e))
        };
        write("manifest.json", serde_json::to_string_pretty(&manifest)?)?;
        write("words.vec", self.encoder.table.to_text())?;
        write("projection.txt", self.projection.to_text())?;
        if let Some(p) = &self.encoder.pvdm {
            write("pvdm.txt", p.to_text())?;
        }
        for (m, name) in self.models.iter().zip(&nets) {
            write(name, m.to_json()?)?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let path = dir.join("manifest.json");
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let m: Manifest = serde_json::from_str(&text)?;
        if m.format != MANIFEST_FORMAT || m.version != MANIFEST_VERSION {
            return Err(Error::Unsupported(format!("checkpoint {} v{}", m.format, m.version)));
        }
        let table = load_embeddings(dir.join("words.vec"))?;
        let projection = ProjectionModel::load(dir.join("projection.txt"))?;
        let pvdm = m.pvdm.as_ref().map(|f| PvdmModel::load(dir.join(f))).transpose()?;
        let models = m
            .networks
            .iter()
            .map(|f| AnnModel::load(dir.join(f)))
            .collect::<Result<Vec<_>>>()?;
        let mut keywords = extract_keywords(&m.tree, m.keyword_weight);
        keywords.weight = m.keyword_weight;
        let cfg = m.config;
        Ok(Deployed {
            encoder: Encoder {
                method: cfg.method,
                architecture: cfg.architecture,
                nabla_level: cfg.nabla_level,
                table,
                pvdm,
                keywords,
                infer_steps: cfg.pvdm.infer_steps,
                infer_lr: cfg.pvdm.infer_lr,
                standardizer: m.standardizer,
            },
            config: cfg,
            tree: m.tree,
            projection,
            models,
        })
    }
}

const MANIFEST_FORMAT: &str = "metastim-pipeline";
const MANIFEST_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    config: PipelineConfig,
    tree: PimsTree,
    keyword_weight: f64,
    standardizer: Standardizer,
    pvdm: Option<String>,
    networks: Vec<String>,
}

/// Meta-parameter fitness: build the pipeline the point describes, tune
/// each network with the point's tuner, and average the best trial
/// fitnesses. Any construction failure yields `+∞` with the reason.
pub fn meta_fitness(
    base: &PipelineConfig,
    space: &MetaSpace,
    point: &MetaPoint,
    dataset: &Dataset,
) -> (f64, Option<String>) {
    let attempt = || -> Result<f64> {
        let cfg = base.with_meta(&space.decode(point)?)?;
        let prep = prepare(&cfg, dataset)?;
        let results = tune_networks(&cfg, &prep)?;
        let fits: Vec<f64> = results.iter().map(|r| r.best.fitness.unwrap_or(f64::INFINITY)).collect();
        Ok(fits.iter().sum::<f64>() / fits.len() as f64)
    };
    match attempt() {
        Ok(f) if f.is_finite() => (f, None),
        Ok(f) => (f64::INFINITY, Some(format!("non-finite fitness {f}"))),
        Err(e) => (f64::INFINITY, Some(e.to_string())),
    }
}

#[derive(Clone, Debug)]
pub struct MetaOutcome {
    pub search: SearchResult,
    pub best_values: MetaValues,
    /// Points whose pipeline could not be built, with the reason.
    pub failures: Vec<(MetaPoint, String)>,
}

/// Pattern search over the config's meta space using [`meta_fitness`].
pub fn run_metaopt(cfg: &PipelineConfig, dataset: &Dataset) -> Result<MetaOutcome> {
    cfg.validate()?;
    let space = cfg.meta_space();
    space.validate()?;
    // a partition shared by every point keeps fitnesses comparable
    let dataset = corpus::partition(dataset, cfg.test_fraction, derive(cfg.seed, stream::PARTITION))?;
    let mut failures = Vec::new();
    let search = pattern_search(
        &space,
        |p| {
            let (f, reason) = meta_fitness(cfg, &space, p, &dataset);
            if let Some(r) = reason {
                failures.push((p.clone(), r));
            }
            f
        },
        &cfg.search,
        derive(cfg.seed, stream::SEARCH),
    )?;
    let best_values = space.decode(&search.best)?;
    Ok(MetaOutcome {
        search,
        best_values,
        failures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Activation, LayerSpec};
    use crate::synth::{generate, SynthParams};
    use std::collections::BTreeMap;

    fn small_hp() -> HyperParams {
        HyperParams {
            learning_rate: 1e-2,
            optimizer: OptimizerKind::Adam,
            optimizer_params: BTreeMap::new(),
            layers: vec![LayerSpec {
                features: 8,
                activation: Activation::Tanh,
            }],
            epochs: 10,
            batch_size: 16,
            dropout: 0.0,
        }
    }

    fn synth() -> Dataset {
        let params = SynthParams {
            atoms_per_category: 15,
            ..SynthParams::default()
        };
        generate(&params).unwrap().dataset().unwrap()
    }

    fn cfg(method: EmbeddingMethod) -> PipelineConfig {
        PipelineConfig {
            method,
            input_dims: 8,
            d_out: 3,
            final_epochs: 20,
            null_copies: 2,
            hyper_params: Some(HyperSetting::Shared(small_hp())),
            pvdm: PvdmSettings {
                epochs: 3,
                infer_steps: 10,
                ..PvdmSettings::default()
            },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_errors() {
        let c = PipelineConfig::from_json(r#"{"corpus": "x.jsonl"}"#).unwrap();
        assert_eq!((c.trial_epochs, c.final_epochs, c.null_copies), (10, 200, 5));
        let err = PipelineConfig::from_json(r#"{"corpus": "x", "test_fraction": 1.5}"#).unwrap_err();
        assert!(err.to_string().contains("test_fraction"));
        assert!(PipelineConfig::from_json(r#"{"corpus": "x", "bogus": 1}"#).is_err());
        assert!(PipelineConfig::from_json(r#"{"corpus": "x", "method": "glove"}"#).is_err());
    }

    #[test]
    fn meta_values_round_trip_through_config() {
        let c = PipelineConfig::default();
        let space = MetaSpace::standard();
        let v = c.meta_values(&space).unwrap();
        let p = space.encode(&v).unwrap();
        let back = c.with_meta(&space.decode(&p).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_method_trains_and_classifies() {
        let ds = synth();
        for method in EmbeddingMethod::ALL {
            let out = run_training(&cfg(method), &ds).unwrap();
            assert_eq!(out.combined.len(), 20);
            assert_eq!(out.deployed.models.len(), 3);
            let atom = &out.prepared.dataset.atoms[0];
            let (path, y) = out.deployed.classify(atom, ClassifyMode::Projected).unwrap();
            assert_eq!(y.dim(), 3);
            assert!(out.deployed.tree.node_index(&path).is_some());
        }
    }

    #[test]
    fn rnn_and_joint_modes() {
        let ds = synth();
        let mut c = cfg(EmbeddingMethod::BowMean);
        c.architecture = ArchKind::Rnn;
        c.output_mode = OutputMode::Joint;
        let out = run_training(&c, &ds).unwrap();
        assert_eq!(out.deployed.models.len(), 1);
        assert_eq!(out.deployed.models[0].arch().output_dim, 3);
    }

    #[test]
    fn deterministic_and_checkpoint_round_trip() {
        let ds = synth();
        let c = cfg(EmbeddingMethod::Pvdm);
        let a = run_training(&c, &ds).unwrap();
        let b = run_training(&c, &ds).unwrap();
        assert_eq!(a.combined.to_csv(), b.combined.to_csv());
        let dir = tempfile::tempdir().unwrap();
        a.deployed.save(dir.path()).unwrap();
        let loaded = Deployed::load(dir.path()).unwrap();
        for atom in ds.atoms.iter().take(5) {
            assert_eq!(loaded.predict(atom).unwrap(), a.deployed.predict(atom).unwrap());
        }
    }

    #[test]
    fn rank_failure_is_infinite_fitness() {
        let ds = corpus::partition(&synth(), 0.2, 1).unwrap();
        let mut c = cfg(EmbeddingMethod::BowMean);
        c.hyper_params = None;
        c.tuner_params.budget = 1;
        let space = c.meta_space();
        let mut v = c.meta_values(&space).unwrap();
        v.insert("d_out".into(), MetaValue::Int(5));
        let p = space.encode(&v).unwrap();
        let (f, reason) = meta_fitness(&c, &space, &p, &ds);
        assert!(f.is_infinite());
        assert!(reason.unwrap().contains("rank"));
        v.insert("d_out".into(), MetaValue::Int(2));
        let p = space.encode(&v).unwrap();
        let (f1, _) = meta_fitness(&c, &space, &p, &ds);
        let (f2, _) = meta_fitness(&c, &space, &p, &ds);
        assert!(f1.is_finite());
        assert_eq!(f1.to_bits(), f2.to_bits());
    }
}
