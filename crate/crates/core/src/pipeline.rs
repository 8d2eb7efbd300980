//! Configuration, run-directory layout and the stage drivers behind the `cgf`
//! binary: ingest, train, infer and report.

use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::archive;
use crate::autoenc::{AutoencoderConfig, AutoencoderModel, TrainReport};
use crate::cgf::{form_consistent_groups, CgfConfig, CgfResult, Grouping};
use crate::dataset::{AecsMatrix, ChannelStats, WindowedDataset};
use crate::error::{Error, Result};
use crate::grouplearn::{predict, train_per_group, train_single_baseline, ClassifierSpec, GroupModelBundle};
use crate::ingest::{load_corpus, load_dataset, save_dataset, stratified_split, window_sessions, ColumnMap, Road};
use crate::mapping::{infer_with_groups, MappingMethod, MappingReport, TrainReference};
use crate::metrics::{evaluate_metrics, ClassMetrics};
use crate::synthetic::{generate_synthetic, SyntheticSpec};

/// Fixed file names inside a run directory.
pub mod files {
    pub const TRAIN_DATASET: &str = "train.cgfd";
    pub const TEST_DATASET: &str = "test.cgfd";
    pub const PARSE_REPORT: &str = "parse_report.json";
    pub const ARCHETYPES: &str = "archetypes.json";
    pub const AUTOENCODER: &str = "autoencoder.cgfm";
    pub const AUTOENCODER_REPORT: &str = "autoencoder_report.json";
    pub const TRAIN_AECS: &str = "train_aecs.cgfa";
    pub const TRAIN_CGF: &str = "train_cgf.json";
    pub const GROUP_MODELS: &str = "groups";
    pub const BASELINE_MODEL: &str = "baseline";
    pub const TEST_AECS: &str = "test_aecs.cgfa";
    pub const TEST_CGF: &str = "test_cgf.json";
    pub const MAPPING: &str = "mapping.json";
    pub const PREDICTIONS: &str = "predictions.csv";
    pub const BASELINE_PREDICTIONS: &str = "predictions_baseline.csv";
    pub const METRICS: &str = "metrics.json";
    pub const MANIFEST: &str = "manifest.json";
    pub const LOCK: &str = ".lock";
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "UPPERCASE")]
pub enum DataSource {
    /// UAH-DriveSet directory tree at `paths.dataset_root`.
    #[default]
    Uah,
    /// Built-in synthetic generator.
    Synthetic,
    /// Canonical dataset file at `paths.dataset_file`, split by ingest.
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SyntheticPreset {
    #[default]
    Xor,
    ThreeArchetypes,
}

impl SyntheticPreset {
    pub fn spec(self, seed: u64) -> SyntheticSpec {
        match self {
            SyntheticPreset::Xor => SyntheticSpec::xor(seed),
            SyntheticPreset::ThreeArchetypes => SyntheticSpec::three_archetypes(seed),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub dataset_root: Option<PathBuf>,
    pub dataset_file: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig { dataset_root: None, dataset_file: None, output_dir: PathBuf::from("run") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IngestConfig {
    pub source: DataSource,
    pub roads: Vec<Road>,
    pub window_len: usize,
    pub overlap: f64,
    pub train_fraction: f64,
    pub seed: u64,
    pub synthetic: SyntheticPreset,
    pub columns: ColumnMap,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            source: DataSource::Uah,
            roads: vec![Road::Motorway],
            window_len: 64,
            overlap: 0.5,
            train_fraction: 0.8,
            seed: 0,
            synthetic: SyntheticPreset::Xor,
            columns: ColumnMap::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct MappingConfig {
    pub method: MappingMethod,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainOptions {
    /// Also train the single-model baseline.
    pub baseline: bool,
    /// Skip grouping and train only the baseline.
    pub baseline_only: bool,
    /// Replace the consistent groups by one group holding every instance.
    pub single_group: bool,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions { baseline: true, baseline_only: false, single_group: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub paths: PathsConfig,
    pub ingest: IngestConfig,
    pub autoencoder: AutoencoderConfig,
    pub cgf: CgfConfig,
    pub classifier: ClassifierSpec,
    pub mapping: MappingConfig,
    pub train: TrainOptions,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::at_path(path))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Settings for a quick run on the synthetic XOR data.
    pub fn synthetic(output_dir: impl Into<PathBuf>, seed: u64) -> Self {
        let mut cfg = PipelineConfig::default();
        cfg.paths.output_dir = output_dir.into();
        cfg.ingest.source = DataSource::Synthetic;
        cfg.ingest.seed = seed;
        cfg.autoencoder.epochs = 30;
        cfg.autoencoder.batch_size = 16;
        cfg.autoencoder.learning_rate = 3e-3;
        cfg.autoencoder.seed = seed;
        cfg.classifier.seed = seed;
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        let i = &self.ingest;
        if i.window_len < 2 {
            return Err(Error::Config(format!("ingest.window_len must be at least 2, got {}", i.window_len)));
        }
        if !(0.0..1.0).contains(&i.overlap) {
            return Err(Error::Config(format!("ingest.overlap must lie in [0, 1), got {}", i.overlap)));
        }
        if !(i.train_fraction > 0.0 && i.train_fraction < 1.0) {
            return Err(Error::Config(format!("ingest.train_fraction must lie in (0, 1), got {}", i.train_fraction)));
        }
        if i.source == DataSource::Uah && i.roads.is_empty() {
            return Err(Error::Config("ingest.roads must name at least one road".into()));
        }
        self.cgf.validate()?;
        self.classifier.validate()?;
        Ok(())
    }

    pub fn out(&self, name: &str) -> PathBuf {
        self.paths.output_dir.join(name)
    }
}

/// Exclusive ownership of a run directory for the lifetime of a stage.
pub struct RunLock {
    path: PathBuf,
}

impl RunLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(Error::at_path(dir))?;
        let path = dir.join(files::LOCK);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(RunLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Artifact(format!(
                "{} is locked by another run (delete {} if it is stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(Error::at_path(&path)(e)),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub seconds: f64,
    pub outputs: Vec<String>,
}

/// Record of everything a run directory holds. Artifact digests are content
/// hashes; timings live apart from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct RunManifest {
    pub version: String,
    pub config: PipelineConfig,
    pub seeds: BTreeMap<String, u64>,
    pub stages: BTreeMap<String, StageRecord>,
    /// Relative path to sha256 of the file contents.
    pub artifacts: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn load(dir: &Path) -> Result<Self> {
        read_json(&dir.join(files::MANIFEST))
    }

    fn load_or_new(dir: &Path) -> Self {
        RunManifest::load(dir).unwrap_or_default()
    }

    fn record(&mut self, dir: &Path, cfg: &PipelineConfig, stage: &str, started: Instant, outputs: &[String]) -> Result<()> {
        self.version = env!("CARGO_PKG_VERSION").to_string();
        self.config = cfg.clone();
        self.seeds = BTreeMap::from([
            ("ingest".to_string(), cfg.ingest.seed),
            ("autoencoder".to_string(), cfg.autoencoder.seed),
            ("classifier".to_string(), cfg.classifier.seed),
        ]);
        for rel in outputs {
            let bytes = fs::read(dir.join(rel)).map_err(Error::at_path(dir.join(rel)))?;
            self.artifacts.insert(rel.clone(), archive::digest_bytes(&bytes));
        }
        self.stages.insert(
            stage.to_string(),
            StageRecord { seconds: started.elapsed().as_secs_f64(), outputs: outputs.to_vec() },
        );
        write_json(&dir.join(files::MANIFEST), self)
    }

    /// Fails when a listed file no longer matches its recorded digest.
    pub fn verify(&self, dir: &Path, rels: &[String]) -> Result<()> {
        for rel in rels {
            let want = self
                .artifacts
                .get(rel)
                .ok_or_else(|| Error::Artifact(format!("{rel} is not recorded in the run manifest")))?;
            let bytes = fs::read(dir.join(rel)).map_err(Error::at_path(dir.join(rel)))?;
            if &archive::digest_bytes(&bytes) != want {
                return Err(Error::Artifact(format!("{rel} changed since it was recorded")));
            }
        }
        Ok(())
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_vec_pretty(value)?;
    text.push(b'\n');
    fs::write(path, text).map_err(Error::at_path(path))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(Error::at_path(path))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>> {
    let file = File::create(path).map_err(Error::at_path(path))?;
    Ok(csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(file))
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::Parse { path: path.to_path_buf(), msg: e.to_string() }
}

#[derive(Serialize, Deserialize)]
struct AecsHeader {
    n: usize,
    h: usize,
    source_model_id: String,
}

pub fn save_aecs(path: &Path, aecs: &AecsMatrix) -> Result<()> {
    let header = AecsHeader { n: aecs.rows(), h: aecs.dim(), source_model_id: aecs.source_model_id.clone() };
    archive::write(path, "aecs", &header, aecs.values())
}

pub fn load_aecs(path: &Path) -> Result<AecsMatrix> {
    let (header, values): (AecsHeader, Vec<f64>) = archive::read(path, "aecs")?;
    AecsMatrix::new(header.n, header.h, values, header.source_model_id)
}

/// Every regular file below `dir`, relative to `root`, sorted.
fn files_below(root: &Path, dir: &str) -> Result<Vec<String>> {
    let mut out: Vec<String> = fs::read_dir(root.join(dir))
        .map_err(Error::at_path(root.join(dir)))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_file())
        .map(|e| format!("{dir}/{}", e.file_name().to_string_lossy()))
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestSummary {
    pub train_windows: usize,
    pub test_windows: usize,
    pub timesteps: usize,
    pub channels: usize,
    pub classes: usize,
}

#[derive(Serialize, Deserialize)]
pub struct ArchetypeLabels {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Builds the canonical train and test files. Normalization statistics are
/// fitted on the train split only and stored in both headers.
pub fn cmd_ingest(cfg: &PipelineConfig) -> Result<IngestSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = &cfg.paths.output_dir;
    let _lock = RunLock::acquire(dir)?;
    let mut outputs = vec![files::TRAIN_DATASET.to_string(), files::TEST_DATASET.to_string()];

    let (full, archetypes) = match cfg.ingest.source {
        DataSource::Uah => {
            let root = cfg
                .paths
                .dataset_root
                .as_ref()
                .ok_or_else(|| Error::Config("paths.dataset_root is required for the UAH source".into()))?;
            if !root.is_dir() {
                return Err(Error::Path {
                    path: root.clone(),
                    source: std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
                });
            }
            let (sessions, report) = load_corpus(root, &cfg.ingest.roads, &cfg.ingest.columns)?;
            write_json(&cfg.out(files::PARSE_REPORT), &report)?;
            outputs.push(files::PARSE_REPORT.to_string());
            (window_sessions(&sessions, cfg.ingest.window_len, cfg.ingest.overlap)?, None)
        }
        DataSource::Synthetic => {
            let syn = generate_synthetic(&cfg.ingest.synthetic.spec(cfg.ingest.seed))?;
            (syn.dataset, Some(syn.archetype))
        }
        DataSource::File => {
            let path = cfg
                .paths
                .dataset_file
                .as_ref()
                .ok_or_else(|| Error::Config("paths.dataset_file is required for the FILE source".into()))?;
            (load_dataset(path)?.0, None)
        }
    };

    let split = stratified_split(&full, cfg.ingest.train_fraction, cfg.ingest.seed)?;
    let (mut train, mut test) = (split.train, split.test);
    let stats = ChannelStats::fit(&train);
    stats.apply(&mut train)?;
    stats.apply(&mut test)?;
    save_dataset(&cfg.out(files::TRAIN_DATASET), &train, Some(&stats))?;
    save_dataset(&cfg.out(files::TEST_DATASET), &test, Some(&stats))?;
    if let Some(arch) = archetypes {
        let labels = ArchetypeLabels {
            train: split.train_indices.iter().map(|&i| arch[i]).collect(),
            test: split.test_indices.iter().map(|&i| arch[i]).collect(),
        };
        write_json(&cfg.out(files::ARCHETYPES), &labels)?;
        outputs.push(files::ARCHETYPES.to_string());
    }
    log::info!("ingest: {} train / {} test windows of {}x{}", train.len(), test.len(), train.timesteps(), train.channels());

    let mut manifest = RunManifest::load_or_new(dir);
    manifest.record(dir, cfg, "ingest", started, &outputs)?;
    Ok(IngestSummary {
        train_windows: train.len(),
        test_windows: test.len(),
        timesteps: train.timesteps(),
        channels: train.channels(),
        classes: train.num_classes(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSummary {
    pub autoencoder: TrainReport,
    pub groups: Option<usize>,
    pub group_sizes: Vec<usize>,
    pub measure: Option<crate::DistanceMeasureId>,
    pub baseline: bool,
}

/// Autoencoder fit, train AECS, consistent groups and per-group models (plus
/// the baseline when configured).
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = &cfg.paths.output_dir;
    let _lock = RunLock::acquire(dir)?;
    let manifest = RunManifest::load(dir)?;
    manifest.verify(dir, &[files::TRAIN_DATASET.to_string()])?;
    let (train, _) = load_dataset(&cfg.out(files::TRAIN_DATASET))?;

    let (model, report) = AutoencoderModel::train(&train, &cfg.autoencoder).map_err(|e| stage("autoencoder", e))?;
    model.save(&cfg.out(files::AUTOENCODER))?;
    write_json(&cfg.out(files::AUTOENCODER_REPORT), &report)?;
    let aecs = model.transform(&train)?;
    save_aecs(&cfg.out(files::TRAIN_AECS), &aecs)?;
    let mut outputs: Vec<String> =
        [files::AUTOENCODER, files::AUTOENCODER_REPORT, files::TRAIN_AECS].map(String::from).to_vec();

    let mut summary = TrainSummary { autoencoder: report, groups: None, group_sizes: Vec::new(), measure: None, baseline: false };
    if !cfg.train.baseline_only {
        let mut result = form_consistent_groups(&aecs, &cfg.cgf).map_err(|e| stage("cgf", e))?;
        if cfg.train.single_group {
            result.grouping = Grouping::single(aecs.rows(), result.measure);
        }
        write_json(&cfg.out(files::TRAIN_CGF), &result)?;
        outputs.push(files::TRAIN_CGF.to_string());
        let bundle = train_per_group(&train, &aecs, &result.grouping, &cfg.classifier).map_err(|e| stage("grouplearn", e))?;
        replace_dir(&cfg.out(files::GROUP_MODELS))?;
        bundle.save(&cfg.out(files::GROUP_MODELS))?;
        outputs.extend(files_below(dir, files::GROUP_MODELS)?);
        summary.groups = Some(result.grouping.k);
        summary.group_sizes = result.grouping.sizes();
        summary.measure = Some(result.measure);
    }
    if cfg.train.baseline || cfg.train.baseline_only {
        let baseline = train_single_baseline(&train, &aecs, &cfg.classifier).map_err(|e| stage("baseline", e))?;
        replace_dir(&cfg.out(files::BASELINE_MODEL))?;
        baseline.save(&cfg.out(files::BASELINE_MODEL))?;
        outputs.extend(files_below(dir, files::BASELINE_MODEL)?);
        summary.baseline = true;
    }

    let mut manifest = manifest;
    manifest.record(dir, cfg, "train", started, &outputs)?;
    Ok(summary)
}

fn replace_dir(path: &Path) -> Result<()> {
    if path.exists() {
        fs::remove_dir_all(path).map_err(Error::at_path(path))?;
    }
    fs::create_dir_all(path).map_err(Error::at_path(path))
}

fn stage(name: &str, e: Error) -> Error {
    log::error!("stage {name} failed: {e}");
    e
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub headline_method: MappingMethod,
    pub grouped: BTreeMap<MappingMethod, ClassMetrics>,
    pub baseline: Option<ClassMetrics>,
    /// Headline grouped macro F1 minus baseline macro F1.
    pub delta_f1_macro: Option<f64>,
    pub delta_f1_weighted: Option<f64>,
    pub delta_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MappingSummary {
    pub headline_method: MappingMethod,
    pub reports: BTreeMap<MappingMethod, MappingReport>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InferSummary {
    pub test_groups: Option<usize>,
    pub mapping: BTreeMap<MappingMethod, Vec<usize>>,
    pub metrics: MetricsReport,
}

/// Test AECS, test-side consistent groups, mapping with both methods,
/// predictions and metrics.
pub fn cmd_infer(cfg: &PipelineConfig) -> Result<InferSummary> {
    cfg.validate()?;
    let started = Instant::now();
    let dir = &cfg.paths.output_dir;
    let _lock = RunLock::acquire(dir)?;
    let manifest = RunManifest::load(dir)?;
    let mut needed: Vec<String> =
        [files::TEST_DATASET, files::AUTOENCODER, files::TRAIN_AECS].map(String::from).to_vec();
    let grouped = dir.join(files::GROUP_MODELS).join("bundle.json").exists() && dir.join(files::TRAIN_CGF).exists();
    let baseline_present = dir.join(files::BASELINE_MODEL).join("bundle.json").exists();
    if grouped {
        needed.push(files::TRAIN_CGF.to_string());
        needed.extend(files_below(dir, files::GROUP_MODELS)?);
    }
    if baseline_present {
        needed.extend(files_below(dir, files::BASELINE_MODEL)?);
    }
    manifest.verify(dir, &needed)?;

    let (test, _) = load_dataset(&cfg.out(files::TEST_DATASET))?;
    let model = AutoencoderModel::load(&cfg.out(files::AUTOENCODER))?;
    let train_aecs = load_aecs(&cfg.out(files::TRAIN_AECS))?;
    if train_aecs.source_model_id != model.model_id {
        return Err(Error::Artifact("train AECS were not produced by the stored autoencoder".into()));
    }
    let test_aecs = model.transform(&test)?;
    save_aecs(&cfg.out(files::TEST_AECS), &test_aecs)?;
    let mut outputs = vec![files::TEST_AECS.to_string()];

    let truth = test.labels();
    let classes = test.num_classes();
    let mut grouped_metrics = BTreeMap::new();
    let mut chosen = BTreeMap::new();
    let mut test_groups = None;
    if grouped {
        let train_cgf: CgfResult = read_json(&cfg.out(files::TRAIN_CGF))?;
        let bundle = GroupModelBundle::load(&cfg.out(files::GROUP_MODELS))?;
        if bundle.aecs_model_id != model.model_id {
            return Err(Error::Artifact("group models were trained on a different autoencoder".into()));
        }
        let test_grouping = if test_aecs.rows() >= 3 {
            let result = form_consistent_groups(&test_aecs, &cfg.cgf).map_err(|e| stage("test cgf", e))?;
            write_json(&cfg.out(files::TEST_CGF), &result)?;
            outputs.push(files::TEST_CGF.to_string());
            result.grouping
        } else {
            log::warn!("fewer than 3 test windows; treating them as one group");
            Grouping::single(test_aecs.rows(), train_cgf.measure)
        };
        test_groups = Some(test_grouping.k);
        let train_ref = TrainReference { bundle: &bundle, aecs: &train_aecs, mahalanobis: &train_cgf.mahalanobis };
        let mut reports = BTreeMap::new();
        for method in MappingMethod::ALL {
            let (pred, report) = infer_with_groups(train_ref, &test, &test_aecs, &test_grouping, method)?;
            grouped_metrics.insert(method, evaluate_metrics(&pred, truth, classes)?);
            chosen.insert(method, report.chosen());
            if method == cfg.mapping.method {
                write_predictions(&cfg.out(files::PREDICTIONS), &pred, truth, Some((&test_grouping, &report)))?;
                write_confusions(dir, "grouped", &grouped_metrics[&method])?;
            }
            reports.insert(method, report);
        }
        write_json(&cfg.out(files::MAPPING), &MappingSummary { headline_method: cfg.mapping.method, reports })?;
        outputs.extend([files::MAPPING, files::PREDICTIONS, "confusion_grouped.csv", "confusion_grouped_normalized.csv"].map(String::from));
    }

    let mut baseline_metrics = None;
    if baseline_present {
        let bundle = GroupModelBundle::load(&cfg.out(files::BASELINE_MODEL))?;
        let pred = predict(&bundle, 0, &test, &test_aecs)?;
        write_predictions(&cfg.out(files::BASELINE_PREDICTIONS), &pred, truth, None)?;
        let m = evaluate_metrics(&pred, truth, classes)?;
        write_confusions(dir, "baseline", &m)?;
        outputs.extend([files::BASELINE_PREDICTIONS, "confusion_baseline.csv", "confusion_baseline_normalized.csv"].map(String::from));
        baseline_metrics = Some(m);
    }

    let headline = grouped_metrics.get(&cfg.mapping.method);
    let delta = |f: fn(&ClassMetrics) -> f64| headline.zip(baseline_metrics.as_ref()).map(|(g, b)| f(g) - f(b));
    let metrics = MetricsReport {
        headline_method: cfg.mapping.method,
        delta_f1_macro: delta(|m| m.f1_macro),
        delta_f1_weighted: delta(|m| m.f1_weighted),
        delta_accuracy: delta(|m| m.accuracy),
        grouped: grouped_metrics,
        baseline: baseline_metrics,
    };
    write_json(&cfg.out(files::METRICS), &metrics)?;
    outputs.push(files::METRICS.to_string());

    let mut manifest = manifest;
    manifest.record(dir, cfg, "infer", started, &outputs)?;
    Ok(InferSummary { test_groups, mapping: chosen, metrics })
}

fn write_predictions(path: &Path, pred: &[usize], truth: &[usize], groups: Option<(&Grouping, &MappingReport)>) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv_writer(path)?;
    match groups {
        Some((grouping, report)) => {
            w.write_record(["index", "predicted", "true", "test_group", "train_group"]).map_err(&err)?;
            for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
                let g = grouping.assignment[i];
                let fields = [i, p, t, g, report.groups[g].chosen].map(|v| v.to_string());
                w.write_record(&fields).map_err(&err)?;
            }
        }
        None => {
            w.write_record(["index", "predicted", "true"]).map_err(&err)?;
            for (i, (&p, &t)) in pred.iter().zip(truth).enumerate() {
                w.write_record([i, p, t].map(|v| v.to_string())).map_err(&err)?;
            }
        }
    }
    w.flush().map_err(Error::at_path(path))
}

fn write_confusions(dir: &Path, tag: &str, m: &ClassMetrics) -> Result<()> {
    let raw = dir.join(format!("confusion_{tag}.csv"));
    write_matrix(&raw, &m.confusion.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect::<Vec<Vec<String>>>())?;
    let norm = dir.join(format!("confusion_{tag}_normalized.csv"));
    write_matrix(&norm, &m.confusion_row_normalized.iter().map(|r| r.iter().map(|v| v.to_string()).collect()).collect::<Vec<Vec<String>>>())
}

/// Rows are true classes, columns predicted classes.
fn write_matrix(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv_writer(path)?;
    let mut header = vec!["true\\predicted".to_string()];
    header.extend((0..rows.len()).map(|c| c.to_string()));
    w.write_record(&header).map_err(&err)?;
    for (c, row) in rows.iter().enumerate() {
        let mut rec = vec![c.to_string()];
        rec.extend(row.iter().cloned());
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(Error::at_path(path))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportSummary {
    pub written: Vec<String>,
    pub skipped: Vec<String>,
}

/// Group composition tables, 2-D PCA coordinates and Hubert bar data.
pub fn cmd_report(dir: &Path) -> Result<ReportSummary> {
    let started = Instant::now();
    let _lock = RunLock::acquire(dir)?;
    let manifest = RunManifest::load(dir)?;
    let mut written = Vec::new();
    let mut skipped = Vec::new();
    let sides = [
        ("train", files::TRAIN_DATASET, files::TRAIN_AECS, files::TRAIN_CGF),
        ("test", files::TEST_DATASET, files::TEST_AECS, files::TEST_CGF),
    ];
    let mut hubert_rows = Vec::new();
    for (side, ds_file, aecs_file, cgf_file) in sides {
        let cgf_path = dir.join(cgf_file);
        let aecs_path = dir.join(aecs_file);
        if !cgf_path.exists() || !aecs_path.exists() {
            skipped.push(format!("{side}: no grouping or AECS in this run"));
            continue;
        }
        let cgf: CgfResult = read_json(&cgf_path)?;
        let aecs = load_aecs(&aecs_path)?;
        let (ds, _) = load_dataset(&dir.join(ds_file))?;
        if cgf.grouping.len() != ds.len() || aecs.rows() != ds.len() {
            return Err(Error::Artifact(format!("{side}: grouping, AECS and dataset sizes disagree")));
        }
        if ds.meta().iter().all(|m| m.driver_id.is_empty() && m.behavior.is_empty()) {
            let note = format!("{side}: no driver/behavior metadata; composition table skipped");
            log::warn!("{note}");
            skipped.push(note);
        } else {
            let name = format!("composition_{side}.csv");
            write_composition(&dir.join(&name), &ds, &cgf.grouping)?;
            written.push(name);
        }
        let name = format!("pca_{side}.csv");
        write_pca(&dir.join(&name), &aecs, &cgf.grouping)?;
        written.push(name);
        for (measure, rho) in &cgf.hubert.scores {
            hubert_rows.push([side.to_string(), measure.to_string(), rho.to_string(), (*measure == cgf.measure).to_string()]);
        }
    }
    if !hubert_rows.is_empty() {
        let path = dir.join("hubert_bars.csv");
        let err = csv_error(&path);
        let mut w = csv_writer(&path)?;
        w.write_record(["side", "measure", "rho", "selected"]).map_err(&err)?;
        for row in &hubert_rows {
            w.write_record(row).map_err(&err)?;
        }
        w.flush().map_err(Error::at_path(&path))?;
        written.push("hubert_bars.csv".to_string());
    }
    let mut manifest = manifest;
    let cfg = manifest.config.clone();
    manifest.record(dir, &cfg, "report", started, &written)?;
    Ok(ReportSummary { written, skipped })
}

/// Counts per (group, driver, behavior); rows sum to the group sizes.
fn write_composition(path: &Path, ds: &WindowedDataset, grouping: &Grouping) -> Result<()> {
    let mut counts: BTreeMap<(usize, &str, &str), usize> = BTreeMap::new();
    for (m, &g) in ds.meta().iter().zip(&grouping.assignment) {
        *counts.entry((g, m.driver_id.as_str(), m.behavior.as_str())).or_default() += 1;
    }
    let err = csv_error(path);
    let mut w = csv_writer(path)?;
    w.write_record(["group", "driver", "behavior", "count"]).map_err(&err)?;
    for ((g, driver, behavior), n) in counts {
        w.write_record([g.to_string(), driver.to_string(), behavior.to_string(), n.to_string()]).map_err(&err)?;
    }
    w.flush().map_err(Error::at_path(path))
}

/// Projection of the rows onto their two leading principal axes. Each axis is
/// signed so that its largest-magnitude loading is positive.
pub fn pca_2d(aecs: &AecsMatrix) -> Vec<[f64; 2]> {
    let (n, h) = (aecs.rows(), aecs.dim());
    let mean: Vec<f64> = (0..h).map(|k| (0..n).map(|i| aecs.row(i)[k]).sum::<f64>() / n as f64).collect();
    let centered = DMatrix::from_fn(n, h, |i, k| aecs.row(i)[k] - mean[k]);
    let cov = centered.transpose() * &centered / (n.max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..h).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&c| {
            let v: Vec<f64> = eig.eigenvectors.column(c).iter().cloned().collect();
            let pivot = v.iter().cloned().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
            if pivot < 0.0 { v.iter().map(|x| -x).collect() } else { v }
        })
        .collect();
    (0..n)
        .map(|i| {
            let mut out = [0.0; 2];
            for (slot, axis) in out.iter_mut().zip(&axes) {
                *slot = centered.row(i).iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect()
}

fn write_pca(path: &Path, aecs: &AecsMatrix, grouping: &Grouping) -> Result<()> {
    let err = csv_error(path);
    let mut w = csv_writer(path)?;
    w.write_record(["index", "group", "pc1", "pc2"]).map_err(&err)?;
    for (i, [a, b]) in pca_2d(aecs).into_iter().enumerate() {
        w.write_record([i.to_string(), grouping.assignment[i].to_string(), a.to_string(), b.to_string()]).map_err(&err)?;
    }
    w.flush().map_err(Error::at_path(path))
}

/// Reads the predictions CSV written by [`cmd_infer`].
pub fn read_predictions(path: &Path) -> Result<Vec<usize>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.records()
        .map(|rec| {
            let rec = rec.map_err(csv_error(path))?;
            rec.get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Parse { path: path.to_path_buf(), msg: "bad predicted column".into() })
        })
        .collect()
}
