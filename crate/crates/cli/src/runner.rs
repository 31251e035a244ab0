//! Base training and single unlearning runs.

use std::fs;
use std::path::{Path, PathBuf};

use grinlab::data::{attach_refusals, corpus_tsv, generate_corpus, record_sequences, Corpus, QARecord, Split};
use grinlab::metrics::{evaluate_split, mask_density_report, MaskDensityReport, MetricsReport};
use grinlab::model::{read_checkpoint, train, write_checkpoint, TrainLog};
use grinlab::unlearn::{run_unlearning, write_mask, MaskOrigin, SelectionMask, UnlearnConfig, UnlearnData, UnlearnLog};
use grinlab::Model;
use serde::{Deserialize, Serialize};

use crate::config::{fingerprint, sha256_hex, ExperimentConfig};
use crate::error::{CliError, Result};

pub const SPLITS: [Split; 3] = [Split::Forget, Split::Retain, Split::World];

/// A trained model together with the corpus it was trained on.
#[derive(Clone, Debug)]
pub struct Base {
    pub fingerprint: String,
    pub corpus: Corpus,
    /// Forget records with refusal targets attached.
    pub forget: Vec<QARecord>,
    pub retain: Vec<QARecord>,
    pub world: Vec<QARecord>,
    pub model: Model,
    pub data: UnlearnData,
    /// Metrics before unlearning, in [`SPLITS`] order.
    pub pre: Vec<MetricsReport>,
}

/// What `train` writes next to the checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub fingerprint: String,
    pub checkpoint_sha256: String,
    pub n_params: usize,
    pub train: TrainLog,
    pub metrics: Vec<MetricsReport>,
}

#[derive(Serialize)]
struct BaseKey<'a> {
    corpus: &'a grinlab::data::CorpusConfig,
    model: &'a grinlab::ModelConfig,
    train: &'a grinlab::model::TrainOptions,
}

fn base_fingerprint(cfg: &ExperimentConfig, corpus: &Corpus) -> Result<String> {
    let model = cfg.model.resolve(corpus.vocab.len())?;
    Ok(fingerprint(&BaseKey {
        corpus: &cfg.corpus,
        model: &model,
        train: &cfg.train,
    }))
}

type CorpusParts = (Corpus, Vec<QARecord>, Vec<QARecord>, Vec<QARecord>, UnlearnData);

fn corpus_parts(cfg: &ExperimentConfig) -> Result<CorpusParts> {
    let corpus = generate_corpus(&cfg.corpus)?;
    let forget = attach_refusals(&corpus.split(Split::Forget), cfg.corpus.seed);
    let retain = corpus.split(Split::Retain);
    let world = corpus.split(Split::World);
    let data = UnlearnData::from_records(&corpus.vocab, &forget, &retain)?;
    Ok((corpus, forget, retain, world, data))
}

impl Base {
    pub fn records(&self, split: Split) -> &[QARecord] {
        match split {
            Split::Forget => &self.forget,
            Split::Retain => &self.retain,
            Split::World => &self.world,
        }
    }

    pub fn evaluate(&self, model: &Model) -> Result<Vec<MetricsReport>> {
        SPLITS
            .iter()
            .map(|&s| Ok(evaluate_split(model, &self.corpus.vocab, s, self.records(s))?))
            .collect()
    }

    fn assemble(cfg: &ExperimentConfig, model: Model, pre: Option<Vec<MetricsReport>>) -> Result<Self> {
        let (corpus, forget, retain, world, data) = corpus_parts(cfg)?;
        if model.config().vocab_size < corpus.vocab.len() {
            return Err(CliError::Config(format!(
                "checkpoint vocabulary {} is smaller than the corpus vocabulary {}",
                model.config().vocab_size,
                corpus.vocab.len()
            )));
        }
        let mut base = Base {
            fingerprint: base_fingerprint(cfg, &corpus)?,
            corpus,
            forget,
            retain,
            world,
            model,
            data,
            pre: Vec::new(),
        };
        base.pre = match pre {
            Some(p) => p,
            None => base.evaluate(&base.model)?,
        };
        Ok(base)
    }
}

/// Generates the corpus and trains the base model.
pub fn train_base(cfg: &ExperimentConfig) -> Result<(Base, TrainLog)> {
    let (corpus, _, _, _, _) = corpus_parts(cfg)?;
    let model_cfg = cfg.model.resolve(corpus.vocab.len())?;
    let longest = corpus
        .records
        .iter()
        .map(|r| r.prompt.split(' ').count() + r.answer.split(' ').count() + 3)
        .max()
        .unwrap_or(0);
    if longest > model_cfg.context_len {
        return Err(CliError::Config(format!(
            "model.context_len ({}) is shorter than the longest training sequence ({longest})",
            model_cfg.context_len
        )));
    }
    let sequences = record_sequences(&corpus.vocab, &corpus.records)?;
    let mut model = Model::build(model_cfg)?;
    let log = train(&mut model, &sequences, &cfg.train)?;
    Ok((Base::assemble(cfg, model, None)?, log))
}

/// Pairs a saved checkpoint with the corpus described by `cfg`. The base
/// fingerprint covers the checkpoint bytes as well as the config.
pub fn load_base(cfg: &ExperimentConfig, checkpoint: &Path) -> Result<Base> {
    let bytes = fs::read(checkpoint).map_err(|e| CliError::io(checkpoint, e))?;
    let model = read_checkpoint(&bytes)?;
    let mut base = Base::assemble(cfg, model, None)?;
    base.fingerprint = fingerprint(&(&base.fingerprint, sha256_hex(&bytes)));
    Ok(base)
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    write(path, text + "\n")
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| CliError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes `base.ckpt`, `corpus.tsv` and `train_log.json` into `dir`.
pub fn write_base(base: &Base, log: &TrainLog, dir: &Path) -> Result<TrainRecord> {
    let bytes = write_checkpoint(&base.model);
    write(&dir.join("base.ckpt"), &bytes)?;
    let mut records = base.forget.clone();
    records.extend(base.retain.iter().cloned());
    records.extend(base.world.iter().cloned());
    records.sort_by_key(|r| r.id);
    write(&dir.join("corpus.tsv"), corpus_tsv(&records))?;
    let record = TrainRecord {
        fingerprint: base.fingerprint.clone(),
        checkpoint_sha256: sha256_hex(&bytes),
        n_params: base.model.params().total_count(),
        train: log.clone(),
        metrics: base.pre.clone(),
    };
    write_json(&dir.join("train_log.json"), &record)?;
    Ok(record)
}

/// Loads `dir/base.ckpt` when its training log matches `cfg`, otherwise
/// trains and writes a new base there.
pub fn ensure_base(cfg: &ExperimentConfig, dir: &Path) -> Result<Base> {
    let log_path = dir.join("train_log.json");
    let ckpt = dir.join("base.ckpt");
    if log_path.exists() && ckpt.exists() {
        let record: TrainRecord = read_json(&log_path)?;
        let (corpus, ..) = corpus_parts(cfg)?;
        let bytes = fs::read(&ckpt).map_err(|e| CliError::io(&ckpt, e))?;
        if record.fingerprint == base_fingerprint(cfg, &corpus)? && record.checkpoint_sha256 == sha256_hex(&bytes) {
            let model = read_checkpoint(&bytes)?;
            return Base::assemble(cfg, model, Some(record.metrics));
        }
    }
    let (base, log) = train_base(cfg)?;
    write_base(&base, &log, dir)?;
    Ok(base)
}

/// Table-style name of a mask origin and noise setting.
pub fn method_label(origin: MaskOrigin, sigma: f64) -> String {
    let name = match origin {
        MaskOrigin::Gri if sigma > 0.0 => return "GRIN".into(),
        MaskOrigin::Gri => "GRI",
        MaskOrigin::Full => "Full FT",
        MaskOrigin::Random => "Random",
        MaskOrigin::GradMagnitude => "Grad",
        MaskOrigin::WeightMagnitude => "Magnitude",
        MaskOrigin::LastLayers => "Last Layers",
        MaskOrigin::External => "External",
    };
    if sigma > 0.0 {
        format!("{name}-N")
    } else {
        name.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run_id: String,
    pub fingerprint: String,
    pub base_fingerprint: String,
    pub method: String,
    pub config: UnlearnConfig,
    /// Hash of the externally supplied mask file, if any.
    pub mask_file_sha256: Option<String>,
    pub pre: Vec<MetricsReport>,
    pub post: Vec<MetricsReport>,
    pub density: MaskDensityReport,
    pub mask_seconds: f64,
    pub unlearn_seconds: f64,
    /// Parameters outside the mask kept their exact pre-unlearning values.
    pub isolation_ok: bool,
    pub log: UnlearnLog,
}

impl RunResult {
    pub fn report(&self, split: Split, post: bool) -> &MetricsReport {
        let reports = if post { &self.post } else { &self.pre };
        reports.iter().find(|r| r.split == split).expect("every split is evaluated")
    }
}

/// An externally computed mask and the hash of the file it came from.
#[derive(Clone, Debug)]
pub struct ExternalMask {
    pub mask: SelectionMask,
    pub sha256: String,
}

#[derive(Serialize)]
struct RunKey<'a> {
    base: &'a str,
    unlearn: &'a UnlearnConfig,
    mask_file: Option<&'a str>,
}

pub fn run_fingerprint(base: &Base, cfg: &UnlearnConfig, external: Option<&ExternalMask>) -> String {
    fingerprint(&RunKey {
        base: &base.fingerprint,
        unlearn: cfg,
        mask_file: external.map(|m| m.sha256.as_str()),
    })
}

/// Short human-readable id; the fingerprint disambiguates.
pub fn run_id(cfg: &UnlearnConfig, fp: &str) -> String {
    format!(
        "{}-{}-p{}-s{:.4}-lr{:e}-e{}-seed{}-{}",
        cfg.origin,
        cfg.loss_kind,
        cfg.p_fraction,
        cfg.noise_sigma,
        cfg.lr,
        cfg.epochs,
        cfg.seed,
        &fp[..8]
    )
}

/// Unlearns from the base model and evaluates every split before and after.
pub fn run_cell(base: &Base, cfg: &UnlearnConfig, external: Option<&ExternalMask>) -> Result<(RunResult, SelectionMask)> {
    let fp = run_fingerprint(base, cfg, external);
    let outcome = run_unlearning(&base.model, &base.data, cfg, external.map(|m| m.mask.clone()))?;
    let post = base.evaluate(&outcome.model)?;
    let density = mask_density_report(&outcome.mask, outcome.model.params())?;
    let (before, after) = (base.model.params().to_flat(), outcome.model.params().to_flat());
    let isolation_ok = (0..before.len()).all(|i| outcome.mask.bits[i] || before[i].to_bits() == after[i].to_bits());
    let result = RunResult {
        run_id: run_id(cfg, &fp),
        fingerprint: fp,
        base_fingerprint: base.fingerprint.clone(),
        method: method_label(outcome.log.origin, cfg.noise_sigma),
        config: cfg.clone(),
        mask_file_sha256: external.map(|m| m.sha256.clone()),
        pre: base.pre.clone(),
        post,
        density,
        mask_seconds: outcome.log.mask_seconds,
        unlearn_seconds: outcome.log.unlearn_seconds,
        isolation_ok,
        log: outcome.log,
    };
    Ok((result, outcome.mask))
}

pub fn run_dir(out: &Path, run_id: &str) -> PathBuf {
    out.join("runs").join(run_id)
}

/// `run_id,split,stage,1-TR,KC,Rouge,K-Acc,C-Acc,n_records`.
pub fn metrics_csv(result: &RunResult) -> String {
    let mut out = String::from("run_id,split,stage,1-TR,KC,Rouge,K-Acc,C-Acc,n_records\n");
    for (stage, reports) in [("pre", &result.pre), ("post", &result.post)] {
        for r in reports {
            out.push_str(&format!(
                "{},{},{stage},{:.6},{:.6},{:.6},{:.6},{:.6},{}\n",
                result.run_id,
                r.split,
                r.one_minus_truth_ratio,
                r.keyword_confidence,
                r.rouge_l_recall,
                r.keyword_accuracy,
                r.cosine_accuracy,
                r.n_records
            ));
        }
    }
    out
}

/// Writes `result.json`, `metrics.csv`, `density.csv` and `mask.txt` under
/// `out/runs/<run_id>/`.
pub fn write_run(out: &Path, result: &RunResult, mask: &SelectionMask) -> Result<PathBuf> {
    let dir = run_dir(out, &result.run_id);
    write(&dir.join("metrics.csv"), metrics_csv(result))?;
    write(&dir.join("density.csv"), result.density.to_csv())?;
    write(&dir.join("mask.txt"), write_mask(mask))?;
    write_json(&dir.join("result.json"), result)?;
    Ok(dir)
}

/// A stored result whose fingerprint matches exactly, if there is one.
pub fn cached_run(out: &Path, cfg: &UnlearnConfig, fingerprint: &str) -> Option<RunResult> {
    let path = run_dir(out, &run_id(cfg, fingerprint)).join("result.json");
    let result: RunResult = read_json(&path).ok()?;
    (result.fingerprint == fingerprint).then_some(result)
}

pub fn read_result(path: &Path) -> Result<RunResult> {
    read_json(path)
}

pub fn read_external_mask(path: &Path) -> Result<ExternalMask> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(ExternalMask {
        mask: grinlab::unlearn::read_mask(&text)?,
        sha256: sha256_hex(text.as_bytes()),
    })
}
