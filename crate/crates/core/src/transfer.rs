//! Model persistence, the source-model library and layer-freezing fine-tuning.
//!
//! A model file (`*.lstm.json`) is a JSON object
//! `{format_version, architecture, standardizer, metadata, weights, crc32}` where
//! `crc32` covers the compact serialization of every other field in that order.
//! Floats are written in shortest round-trip form, so weights reload bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LstmArchitecture, ModelWeights};
use crate::trace::{median, parse_trace, serialize_trace, split, RttTrace, SplitSpec, Standardizer};
use crate::train::{evaluate, grid_search_with, train, train_from, Evaluation, GridResult, HyperGrid, TrainConfig, TrainReport};

pub const FORMAT_VERSION: u32 = 1;
pub const MODEL_EXTENSION: &str = "lstm.json";
pub const MANIFEST_FILE: &str = "library.json";
/// Fingerprints are strided down to at most this many points.
pub const MAX_FINGERPRINT_LEN: usize = 6000;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelMetadata {
    pub context: String,
    pub training_len: usize,
    pub train_smape: Option<f64>,
    pub test_smape: Option<f64>,
    /// Caller-supplied creation stamp; left empty for reproducible output.
    pub created_at: Option<String>,
    /// Median of the training data in ms, the default generation seed.
    pub median_ms: Option<f64>,
    /// Context label of the source model this one was fine-tuned from.
    pub source: Option<String>,
    pub frozen_layers: Option<usize>,
}

/// A trained network bundled with the standardizer of its training data.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmModel {
    pub architecture: LstmArchitecture,
    pub weights: ModelWeights,
    pub standardizer: Standardizer,
    pub metadata: ModelMetadata,
}

#[derive(Serialize)]
struct BodyRef<'a> {
    format_version: u32,
    architecture: &'a LstmArchitecture,
    standardizer: &'a Standardizer,
    metadata: &'a ModelMetadata,
    weights: &'a ModelWeights,
}

#[derive(Serialize)]
struct DocumentRef<'a> {
    #[serde(flatten)]
    body: BodyRef<'a>,
    crc32: String,
}

#[derive(Deserialize)]
struct Document {
    format_version: u32,
    architecture: LstmArchitecture,
    standardizer: Standardizer,
    metadata: ModelMetadata,
    weights: ModelWeights,
    crc32: String,
}

impl LstmModel {
    pub fn validate(&self) -> Result<()> {
        self.architecture.validate()?;
        self.weights.validate(&self.architecture)?;
        Standardizer::new(self.standardizer.mean, self.standardizer.std)?;
        Ok(())
    }

    pub fn label(&self) -> &str {
        &self.metadata.context
    }

    fn body(&self) -> BodyRef<'_> {
        BodyRef {
            format_version: FORMAT_VERSION,
            architecture: &self.architecture,
            standardizer: &self.standardizer,
            metadata: &self.metadata,
            weights: &self.weights,
        }
    }

    /// Serializes the model document.
    pub fn to_document(&self) -> Result<String> {
        self.validate()?;
        let canonical = serde_json::to_string(&self.body())?;
        let doc = DocumentRef {
            body: self.body(),
            crc32: format!("{:08x}", crc32fast::hash(canonical.as_bytes())),
        };
        let mut out = serde_json::to_string_pretty(&doc)?;
        out.push('\n');
        Ok(out)
    }

    /// Parses and verifies a model document. Never returns a partial model.
    pub fn from_document(document: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(document).map_err(|e| Error::Load(format!("malformed document: {e}")))?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == u64::from(FORMAT_VERSION) => {}
            Some(v) => return Err(Error::Load(format!("unsupported format version {v}"))),
            None => return Err(Error::Load("missing format_version".into())),
        }
        let doc: Document =
            serde_json::from_value(value).map_err(|e| Error::Load(format!("bad document: {e}")))?;
        let model = LstmModel {
            architecture: doc.architecture,
            weights: doc.weights,
            standardizer: doc.standardizer,
            metadata: doc.metadata,
        };
        debug_assert_eq!(doc.format_version, FORMAT_VERSION);
        let canonical = serde_json::to_string(&model.body())?;
        let crc = format!("{:08x}", crc32fast::hash(canonical.as_bytes()));
        if crc != doc.crc32 {
            return Err(Error::Load(format!(
                "checksum mismatch: stored {}, computed {crc}",
                doc.crc32
            )));
        }
        model
            .validate()
            .map_err(|e| Error::Load(format!("inconsistent model: {e}")))?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_document()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_document(&text)
    }

    /// Deterministic one-step accuracy on a raw (ms) series.
    pub fn evaluate(&self, series_ms: &[f64]) -> Result<Evaluation> {
        evaluate(&self.architecture, &self.weights, series_ms)
    }
}

pub fn save_model(model: &LstmModel) -> Result<String> {
    model.to_document()
}

pub fn load_model(document: &str) -> Result<LstmModel> {
    LstmModel::from_document(document)
}

/// Number of initial LSTM layers whose weights stay fixed during fine-tuning.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreezeSpec {
    pub k_frozen: usize,
}

impl Default for FreezeSpec {
    fn default() -> Self {
        Self { k_frozen: 1 }
    }
}

impl FreezeSpec {
    pub fn new(k_frozen: usize) -> Self {
        Self { k_frozen }
    }

    pub fn check(&self, arch: &LstmArchitecture) -> Result<()> {
        if self.k_frozen >= arch.num_layers {
            return Err(Error::Argument(format!(
                "freezing {} layers leaves nothing trainable in a {}-layer model",
                self.k_frozen, arch.num_layers
            )));
        }
        Ok(())
    }
}

fn trained_model(
    architecture: LstmArchitecture,
    weights: ModelWeights,
    standardizer: Standardizer,
    target: &RttTrace,
    report: &mut TrainReport,
) -> Result<LstmModel> {
    let train_eval = evaluate(&architecture, &weights, target.samples())?;
    report.train_mse = Some(train_eval.mse);
    Ok(LstmModel {
        architecture,
        weights,
        standardizer,
        metadata: ModelMetadata {
            context: target.context().to_string(),
            training_len: target.len(),
            train_smape: Some(train_eval.smape),
            median_ms: median(target.samples()),
            ..ModelMetadata::default()
        },
    })
}

/// Copies `source`, freezes its first `freeze.k_frozen` layers and continues training
/// on the target sample, which is standardized with its own statistics.
pub fn fine_tune(
    source: &LstmModel,
    target_train: &RttTrace,
    freeze: FreezeSpec,
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport)> {
    freeze.check(&source.architecture)?;
    let standardizer = Standardizer::fit(target_train.samples())?;
    let series = standardizer.apply(target_train.samples());
    let config = TrainConfig {
        frozen_layers: freeze.k_frozen,
        ..*config
    };
    let (weights, mut report) = train_from(source.weights.clone(), &series, &source.architecture, &config)?;
    let mut model = trained_model(source.architecture, weights, standardizer, target_train, &mut report)?;
    model.metadata.source = Some(source.metadata.context.clone());
    model.metadata.frozen_layers = Some(freeze.k_frozen);
    Ok((model, report))
}

/// Trains a target model from scratch; the baseline for transfer comparisons.
pub fn train_specialized(
    target_train: &RttTrace,
    arch: &LstmArchitecture,
    config: &TrainConfig,
) -> Result<(LstmModel, TrainReport)> {
    let standardizer = Standardizer::fit(target_train.samples())?;
    let series = standardizer.apply(target_train.samples());
    let config = TrainConfig {
        frozen_layers: 0,
        ..*config
    };
    let (weights, mut report) = train(&series, arch, &config)?;
    let model = trained_model(*arch, weights, standardizer, target_train, &mut report)?;
    Ok((model, report))
}

/// Evaluates `model` on `test_ms`, recording the test metrics in the model and report.
pub fn attach_test_metrics(model: &mut LstmModel, report: &mut TrainReport, test_ms: &[f64]) -> Result<Evaluation> {
    let eval = model.evaluate(test_ms)?;
    model.metadata.test_smape = Some(eval.smape);
    report.test_mse = Some(eval.mse);
    report.test_smape = Some(eval.smape);
    Ok(eval)
}

/// Strided copy of `series` with at most [`MAX_FINGERPRINT_LEN`] points.
pub fn downsample(series: &[f64]) -> Vec<f64> {
    let stride = series.len().div_ceil(MAX_FINGERPRINT_LEN).max(1);
    series.iter().step_by(stride).copied().collect()
}

/// A source model trained by grid search, with the pieces needed to file it in a library.
#[derive(Clone, Debug)]
pub struct SourceBuild {
    pub model: LstmModel,
    pub grid: GridResult,
    /// Raw (ms) test split, downsampled, used as the DTW fingerprint.
    pub fingerprint_ms: Vec<f64>,
}

/// Splits `trace` 80:20, grid-searches on the training part and keeps the best model.
pub fn build_source(
    trace: &RttTrace,
    grid: &HyperGrid,
    split_spec: SplitSpec,
    base: &TrainConfig,
) -> Result<SourceBuild> {
    let (train_ms, test_ms) = split(trace.samples(), split_spec)?;
    let result = grid_search_with(train_ms, test_ms, grid, base)?;
    let standardizer = Standardizer::fit(train_ms)?;
    let train_eval = evaluate(&result.best_arch, &result.best_weights, train_ms)?;
    let model = LstmModel {
        architecture: result.best_arch,
        weights: result.best_weights.clone(),
        standardizer,
        metadata: ModelMetadata {
            context: trace.context().to_string(),
            training_len: train_ms.len(),
            train_smape: Some(train_eval.smape),
            test_smape: result.best_report.test_smape,
            median_ms: median(train_ms),
            ..ModelMetadata::default()
        },
    };
    Ok(SourceBuild {
        model,
        grid: result,
        fingerprint_ms: downsample(test_ms),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LibraryEntry {
    pub model: LstmModel,
    /// Fingerprint in ms as stored on disk.
    pub fingerprint_ms: Vec<f64>,
    /// Standardized fingerprint compared against target samples.
    pub fingerprint: Vec<f64>,
}

impl LibraryEntry {
    pub fn new(model: LstmModel, fingerprint_ms: Vec<f64>) -> Result<Self> {
        if fingerprint_ms.is_empty() {
            return Err(Error::EmptyInput);
        }
        let fingerprint_ms = downsample(&fingerprint_ms);
        let fingerprint = Standardizer::fit(&fingerprint_ms)?.apply(&fingerprint_ms);
        Ok(Self {
            model,
            fingerprint_ms,
            fingerprint,
        })
    }

    pub fn label(&self) -> &str {
        self.model.label()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ManifestEntry {
    label: String,
    model: String,
    fingerprint: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    entries: Vec<ManifestEntry>,
}

/// Ordered collection of source models with unique context labels.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelLibrary {
    entries: Vec<LibraryEntry>,
}

impl ModelLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[LibraryEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, label: &str) -> Option<&LibraryEntry> {
        self.entries.iter().find(|e| e.label() == label)
    }

    pub fn add(&mut self, entry: LibraryEntry) -> Result<()> {
        if self.get(entry.label()).is_some() {
            return Err(Error::Argument(format!(
                "library already holds a model labelled {:?}",
                entry.label()
            )));
        }
        self.entries.push(entry);
        Ok(())
    }

    /// Reads `library.json` and every file it lists. A missing manifest is an empty library.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Ok(Self::new());
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Load(format!(
                "unsupported library format version {}",
                manifest.format_version
            )));
        }
        let mut library = Self::new();
        for e in manifest.entries {
            let model = LstmModel::load(&dir.join(&e.model))?;
            if model.label() != e.label {
                return Err(Error::Load(format!(
                    "manifest label {:?} does not match model context {:?}",
                    e.label,
                    model.label()
                )));
            }
            let fingerprint = parse_trace(&fs::read(dir.join(&e.fingerprint))?)?;
            library.add(LibraryEntry::new(model, fingerprint.into_samples())?)?;
        }
        Ok(library)
    }

    /// Writes every entry and the manifest into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut entries = Vec::with_capacity(self.entries.len());
        for entry in &self.entries {
            let stem = file_stem(entry.label());
            let model_file = format!("{stem}.{MODEL_EXTENSION}");
            let fingerprint_file = format!("{stem}.fingerprint.csv");
            entry.model.save(&dir.join(&model_file))?;
            let trace = RttTrace::new(entry.fingerprint_ms.clone(), crate::trace::DEFAULT_INTERVAL_MS, entry.label())?;
            fs::write(dir.join(&fingerprint_file), serialize_trace(&trace))?;
            entries.push(ManifestEntry {
                label: entry.label().to_string(),
                model: model_file,
                fingerprint: fingerprint_file,
            });
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            entries,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(dir.join(MANIFEST_FILE), text)?;
        Ok(())
    }
}

/// File-system friendly version of a context label.
pub fn file_stem(label: &str) -> String {
    let stem: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect();
    if stem.is_empty() {
        "model".into()
    } else {
        stem
    }
}

/// Default path of a model file inside `dir`.
pub fn model_path(dir: &Path, label: &str) -> PathBuf {
    dir.join(format!("{}.{MODEL_EXTENSION}", file_stem(label)))
}
