//! Run configuration, multi-architecture orchestration and report files.

mod chart;
mod config;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::exec::{derive_seed, thread_count, Execution};
use crate::explain::{explain, ExplainerId, ModelTag};
use crate::harness::{
    cross_architecture_correlations, dataset_sensitivity, image_sensitivity, run_ipr_with,
    CorrelationMatrices, DatasetSensitivity, IprConfig, IprRun, RunOptions, SensitivityRecord,
};
use crate::nn::{train_with, Examples, Model, TrainConfig};
use crate::pgm;
use crate::zoo::{
    build_architecture, generate_synthetic_dataset, list_parameter_layers, load_model,
    randomize_layer, save_model, LabeledDataset, FORMAT_VERSION,
};

pub use chart::{emit_s_i_chart, value_to_y};
pub use config::{load_config, parse_config, DatasetSpec, RunConfig};

pub const REPORT_FILE: &str = "report.json";
pub const RECORDS_FILE: &str = "records.csv";
pub const CORRELATIONS_FILE: &str = "correlations.csv";
pub const CHART_FILE: &str = "s_I_chart.svg";
pub const TIMING_FILE: &str = "timing.json";
pub const RECORD_COLUMNS: [&str; 8] = [
    "architecture",
    "explainer",
    "image_id",
    "layer_id",
    "ssim_raw",
    "ssim",
    "layer_sensitivity",
    "sensitive_to_layer",
];

/// One row of `records.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub architecture: String,
    pub explainer: ExplainerId,
    pub image_id: String,
    pub layer_id: String,
    pub ssim_raw: f64,
    pub ssim: f64,
    pub layer_sensitivity: f64,
    pub sensitive_to_layer: bool,
}

impl RecordRow {
    fn new(architecture: &str, r: &SensitivityRecord) -> Self {
        RecordRow {
            architecture: architecture.to_string(),
            explainer: r.explainer,
            image_id: r.image_id.clone(),
            layer_id: r.layer_id.clone(),
            ssim_raw: r.ssim_raw,
            ssim: r.ssim,
            layer_sensitivity: r.layer_sensitivity,
            sensitive_to_layer: r.sensitive_to_layer,
        }
    }

    fn record(&self) -> SensitivityRecord {
        SensitivityRecord {
            image_id: self.image_id.clone(),
            layer_id: self.layer_id.clone(),
            explainer: self.explainer,
            ssim_raw: self.ssim_raw,
            ssim: self.ssim,
            layer_sensitivity: self.layer_sensitivity,
            sensitive_to_layer: self.sensitive_to_layer,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSummary {
    pub architecture: String,
    pub explainer: ExplainerId,
    pub image_id: String,
    pub s_i: f64,
    pub sensitive_to_image: bool,
}

/// Everything derivable from the record table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    pub dataset_sensitivities: Vec<DatasetSensitivity>,
    pub image_sensitivities: Vec<ImageSummary>,
    pub correlations: Option<CorrelationMatrices>,
    pub correlation_warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub architecture_id: String,
    pub train_accuracy: Option<f64>,
    pub layers: Vec<String>,
    /// Explained class of each evaluation image.
    pub classes: Vec<(String, usize)>,
}

/// Seeds and parameters echoed into the report. The output directory is
/// left out so reports from different locations compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub architectures: Vec<String>,
    pub dataset: DatasetSpec,
    pub train: TrainConfig,
    pub ipr: IprConfig,
}

impl From<&RunConfig> for ConfigEcho {
    fn from(c: &RunConfig) -> Self {
        ConfigEcho {
            architectures: c.architectures.clone(),
            dataset: c.dataset.clone(),
            train: c.train.clone(),
            ipr: c.ipr.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IprReport {
    pub config: ConfigEcho,
    pub models: Vec<ModelSummary>,
    #[serde(flatten)]
    pub aggregates: Aggregates,
    pub records: Vec<RecordRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureTiming {
    pub architecture_id: String,
    pub model_from_cache: bool,
    pub train_seconds: f64,
    pub ipr_seconds: f64,
}

/// Wall-clock metadata, kept apart from the deterministic report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub threads: usize,
    pub total_seconds: f64,
    pub architectures: Vec<ArchitectureTiming>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CommandOptions {
    pub execution: Execution,
    /// Retrain even when a cached model exists.
    pub no_cache: bool,
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn bootstrap_seed(config: &IprConfig, architecture: &str, explainer: ExplainerId) -> u64 {
    derive_seed(
        config.randomization_seed,
        &["bootstrap", architecture, explainer.name()],
    )
}

/// Evaluation images, and a disjoint training set from a derived seed.
pub fn datasets_for(spec: &DatasetSpec) -> Result<(LabeledDataset, LabeledDataset)> {
    let eval = generate_synthetic_dataset(spec.num_images, spec.image_size, spec.num_classes, spec.seed)?;
    let train = generate_synthetic_dataset(
        spec.train_images,
        spec.image_size,
        spec.num_classes,
        derive_seed(spec.seed, &["train"]),
    )?;
    Ok((eval, train))
}

fn cache_key(architecture: &str, config: &RunConfig) -> String {
    let d = &config.dataset;
    let key = serde_json::json!({
        "format": FORMAT_VERSION,
        "architecture": architecture,
        "image_size": d.image_size,
        "num_classes": d.num_classes,
        "seed": d.seed,
        "train_images": d.train_images,
        "train": config.train,
    });
    let digest = Sha256::digest(key.to_string().as_bytes());
    digest[..8].iter().map(|b| format!("{b:02x}")).collect()
}

/// Trains `architecture`, or loads it from `<output_dir>/models` when a
/// model with the same architecture, data and training settings exists.
pub fn prepare_model(
    architecture: &str,
    config: &RunConfig,
    train_set: &LabeledDataset,
    options: &CommandOptions,
) -> Result<(Model, bool)> {
    let dir = config.output_dir.join("models");
    let path = dir.join(format!("{architecture}-{}.iprm", cache_key(architecture, config)));
    if !options.no_cache && path.exists() {
        if let Ok(model) = load_model(&path) {
            return Ok((model, true));
        }
    }
    let d = &config.dataset;
    let init = build_architecture(architecture, d.image_size, d.num_classes, config.train.seed)?;
    let images = train_set.tensors();
    let model = train_with(
        &init,
        Examples {
            images: &images,
            labels: &train_set.labels,
        },
        &config.train,
        options.execution,
    )?;
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    save_model(&model, &path)?;
    Ok((model, false))
}

/// Aggregates and correlations for a set of per-architecture runs.
fn aggregate_runs(runs: &[IprRun]) -> Aggregates {
    let mut dataset_sensitivities = Vec::new();
    let mut image_sensitivities = Vec::new();
    for run in runs {
        dataset_sensitivities.extend(run.datasets.iter().cloned());
        image_sensitivities.extend(run.images.iter().map(|i| ImageSummary {
            architecture: run.architecture_id.clone(),
            explainer: i.explainer,
            image_id: i.image_id.clone(),
            s_i: i.score,
            sensitive_to_image: i.sensitive_to_image,
        }));
    }
    let (correlations, correlation_warning) = correlate(&dataset_sensitivities);
    Aggregates {
        dataset_sensitivities,
        image_sensitivities,
        correlations,
        correlation_warning,
    }
}

fn correlate(datasets: &[DatasetSensitivity]) -> (Option<CorrelationMatrices>, Option<String>) {
    let mut explainers: Vec<ExplainerId> = Vec::new();
    let mut architectures: Vec<String> = Vec::new();
    for d in datasets {
        if !explainers.contains(&d.explainer) {
            explainers.push(d.explainer);
        }
        if !architectures.contains(&d.architecture_id) {
            architectures.push(d.architecture_id.clone());
        }
    }
    if architectures.len() < 3 {
        return (
            None,
            Some(format!(
                "correlations need at least 3 architectures; got {}",
                architectures.len()
            )),
        );
    }
    let mut profiles = Vec::with_capacity(explainers.len());
    for e in &explainers {
        let mut row = Vec::with_capacity(architectures.len());
        for a in &architectures {
            match datasets.iter().find(|d| d.explainer == *e && &d.architecture_id == a) {
                Some(d) => row.push(d.score),
                None => return (None, Some(format!("missing S^I for {e} on {a}"))),
            }
        }
        profiles.push(row);
    }
    match cross_architecture_correlations(&explainers, &architectures, &profiles) {
        Ok(m) => (Some(m), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

/// Result of [`run_command`]: the deterministic report and its timing.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: IprReport,
    pub timing: Timing,
}

/// Trains or loads every configured architecture, runs the randomization
/// test on each and writes the report files into `config.output_dir`.
pub fn run_command(config: &RunConfig, options: &CommandOptions) -> Result<RunOutcome> {
    config.validate()?;
    let started = Instant::now();
    fs::create_dir_all(&config.output_dir).map_err(|e| Error::io(&config.output_dir, e))?;
    let (eval, train_set) = datasets_for(&config.dataset)?;
    let mut runs = Vec::with_capacity(config.architectures.len());
    let mut models = Vec::with_capacity(config.architectures.len());
    let mut timings = Vec::with_capacity(config.architectures.len());
    for arch in &config.architectures {
        let t = Instant::now();
        let (model, cached) = prepare_model(arch, config, &train_set, options)?;
        let train_seconds = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let run = run_ipr_with(
            &model,
            &eval,
            &config.ipr,
            &RunOptions {
                execution: options.execution,
                ..RunOptions::default()
            },
        )?;
        timings.push(ArchitectureTiming {
            architecture_id: arch.clone(),
            model_from_cache: cached,
            train_seconds,
            ipr_seconds: t.elapsed().as_secs_f64(),
        });
        models.push(ModelSummary {
            architecture_id: arch.clone(),
            train_accuracy: model.train_accuracy(),
            layers: run.layers.clone(),
            classes: run.classes.clone(),
        });
        runs.push(run);
    }
    let records = runs
        .iter()
        .flat_map(|run| run.records().map(|r| RecordRow::new(&run.architecture_id, r)))
        .collect();
    let report = IprReport {
        config: ConfigEcho::from(config),
        models,
        aggregates: aggregate_runs(&runs),
        records,
    };
    let timing = Timing {
        threads: thread_count(options.execution),
        total_seconds: started.elapsed().as_secs_f64(),
        architectures: timings,
    };
    write_report_files(&config.output_dir, &report, &timing)?;
    Ok(RunOutcome { report, timing })
}

pub fn write_report_files(dir: &Path, report: &IprReport, timing: &Timing) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    write_atomic(&dir.join(REPORT_FILE), json.as_bytes())?;
    write_atomic(&dir.join(RECORDS_FILE), &records_csv(&report.records)?)?;
    write_aggregate_files(dir, &report.aggregates)?;
    let timing = serde_json::to_string_pretty(timing).expect("timing serializes") + "\n";
    write_atomic(&dir.join(TIMING_FILE), timing.as_bytes())
}

fn write_aggregate_files(dir: &Path, aggregates: &Aggregates) -> Result<()> {
    write_atomic(
        &dir.join(CORRELATIONS_FILE),
        emit_correlation_tables(aggregates)?.as_bytes(),
    )?;
    write_atomic(
        &dir.join(CHART_FILE),
        emit_s_i_chart(&aggregates.dataset_sensitivities)?.as_bytes(),
    )
}

fn csv_error(e: csv::Error) -> Error {
    Error::invalid(format!("csv: {e}"))
}

pub fn records_csv(rows: &[RecordRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if rows.is_empty() {
        w.write_record(RECORD_COLUMNS).map_err(csv_error)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))
}

pub fn parse_records_csv(text: &str) -> Result<Vec<RecordRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().map_err(|e| Error::Config(format!("records.csv: {e}")))?;
    if headers.iter().ne(RECORD_COLUMNS) {
        return Err(Error::Config(format!(
            "records.csv columns must be {}",
            RECORD_COLUMNS.join(",")
        )));
    }
    r.deserialize()
        .enumerate()
        .map(|(i, row)| row.map_err(|e| Error::Config(format!("records.csv row {}: {e}", i + 2))))
        .collect()
}

type GroupKey = (String, ExplainerId);
type ImageRecords = (String, Vec<SensitivityRecord>);

/// Rebuilds image and dataset aggregates from a record table. Group order
/// follows first appearance in `rows`, which matches the order of a run.
pub fn recompute_aggregates(rows: &[RecordRow], ipr: &IprConfig) -> Result<Aggregates> {
    if rows.is_empty() {
        return Err(Error::invalid("record table is empty"));
    }
    // (architecture, explainer) -> image -> records, in order of appearance
    let mut groups: Vec<(GroupKey, Vec<ImageRecords>)> = Vec::new();
    let mut index: BTreeMap<(String, ExplainerId), usize> = BTreeMap::new();
    for row in rows {
        let key = (row.architecture.clone(), row.explainer);
        let g = *index.entry(key.clone()).or_insert_with(|| {
            groups.push((key, Vec::new()));
            groups.len() - 1
        });
        let images = &mut groups[g].1;
        match images.iter_mut().find(|(id, _)| *id == row.image_id) {
            Some((_, recs)) => recs.push(row.record()),
            None => images.push((row.image_id.clone(), vec![row.record()])),
        }
    }
    let mut dataset_sensitivities = Vec::with_capacity(groups.len());
    let mut image_sensitivities = Vec::new();
    for ((arch, explainer), images) in groups {
        let per_image = images
            .into_iter()
            .map(|(_, recs)| image_sensitivity(recs))
            .collect::<Result<Vec<_>>>()?;
        let layers = per_image[0].per_layer.len();
        if per_image.iter().any(|i| i.per_layer.len() != layers) {
            return Err(Error::invalid(format!(
                "{arch}/{explainer}: images have different layer counts"
            )));
        }
        dataset_sensitivities.push(dataset_sensitivity(
            &arch,
            &per_image,
            ipr.bootstrap_resamples,
            ipr.bootstrap_level,
            bootstrap_seed(ipr, &arch, explainer),
        )?);
        image_sensitivities.extend(per_image.into_iter().map(|i| ImageSummary {
            architecture: arch.clone(),
            explainer,
            image_id: i.image_id,
            s_i: i.score,
            sensitive_to_image: i.sensitive_to_image,
        }));
    }
    let (correlations, correlation_warning) = correlate(&dataset_sensitivities);
    Ok(Aggregates {
        dataset_sensitivities,
        image_sensitivities,
        correlations,
        correlation_warning,
    })
}

/// Reads `records.csv`, recomputes every aggregate and writes `audit.json`,
/// the chart and the correlation tables into `out_dir`.
pub fn report_from_records(records: &Path, ipr: &IprConfig, out_dir: &Path) -> Result<Aggregates> {
    let text = fs::read_to_string(records).map_err(|e| Error::io(records, e))?;
    let rows = parse_records_csv(&text)?;
    let aggregates = recompute_aggregates(&rows, ipr)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let json = serde_json::to_string_pretty(&aggregates).expect("aggregates serialize") + "\n";
    write_atomic(&out_dir.join("audit.json"), json.as_bytes())?;
    write_aggregate_files(out_dir, &aggregates)?;
    Ok(aggregates)
}

/// Spearman and Pearson matrices as CSV with `coef (stars)` cells, or a
/// single warning row when they could not be computed.
pub fn emit_correlation_tables(aggregates: &Aggregates) -> Result<String> {
    let mut w = csv::WriterBuilder::new().flexible(true).from_writer(Vec::new());
    match &aggregates.correlations {
        None => {
            let msg = aggregates
                .correlation_warning
                .as_deref()
                .unwrap_or("correlations unavailable");
            w.write_record(["warning", msg]).map_err(csv_error)?;
        }
        Some(m) => {
            for (name, matrix) in [("spearman", &m.spearman), ("pearson", &m.pearson)] {
                let mut header = vec![name.to_string()];
                header.extend(m.explainers.iter().map(|e| e.name().to_string()));
                w.write_record(&header).map_err(csv_error)?;
                for (i, e) in m.explainers.iter().enumerate() {
                    let mut row = vec![e.name().to_string()];
                    for (j, cell) in matrix[i].iter().enumerate() {
                        row.push(if i == j { "1".to_string() } else { cell.label() });
                    }
                    w.write_record(&row).map_err(csv_error)?;
                }
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::invalid(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn gallery_name(image_id: &str, explainer: ExplainerId, tag: &ModelTag) -> String {
    let tag = match tag {
        ModelTag::Original => "original".to_string(),
        ModelTag::Randomized(layer) => format!("layer-{layer}"),
    };
    format!("{image_id}__{}__{tag}.pgm", explainer.name())
}

/// Writes the normalized maps of `image_ids` for the original model and
/// every in-scope randomized layer as 8-bit PGMs under
/// `<output_dir>/gallery/<architecture>/`.
pub fn export_saliency_gallery(
    config: &RunConfig,
    image_ids: &[String],
    options: &CommandOptions,
) -> Result<Vec<PathBuf>> {
    config.validate()?;
    if image_ids.is_empty() {
        return Err(Error::invalid("no image ids requested"));
    }
    let (eval, train_set) = datasets_for(&config.dataset)?;
    let samples = image_ids
        .iter()
        .map(|id| {
            eval.find(id)
                .ok_or_else(|| Error::invalid(format!("unknown image id `{id}`")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut written = Vec::new();
    for arch in &config.architectures {
        let (model, _) = prepare_model(arch, config, &train_set, options)?;
        let mut layers = list_parameter_layers(&model);
        if let Some(scope) = &config.ipr.critical_layers {
            if let Some(bad) = scope.iter().find(|l| !layers.contains(l)) {
                return Err(Error::UnknownLayer(bad.clone()));
            }
            layers.retain(|l| scope.contains(l));
        }
        let mut variants = vec![(ModelTag::Original, model.clone())];
        for id in &layers {
            let seed = derive_seed(config.ipr.randomization_seed, &[id]);
            variants.push((ModelTag::Randomized(id.clone()), randomize_layer(&model, id, seed)?));
        }
        let dir = config.output_dir.join("gallery").join(arch);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for sample in &samples {
            let class = model.forward(&sample.tensor)?.argmax();
            for &explainer in &config.ipr.explainers {
                for (tag, m) in &variants {
                    let map = explain(
                        explainer,
                        m,
                        &sample.image_id,
                        &sample.tensor,
                        class,
                        &config.ipr.explainer,
                        tag.clone(),
                    )?;
                    let [h, w] = *map.normalized.shape() else {
                        unreachable!("normalized maps are [H, W]")
                    };
                    let path = dir.join(gallery_name(&sample.image_id, explainer, tag));
                    write_atomic(&path, &pgm::encode_pgm(w, h, map.normalized.data()))?;
                    written.push(path);
                }
            }
        }
    }
    Ok(written)
}
