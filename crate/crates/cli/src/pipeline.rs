//! The embedding pipeline behind `kernsne embed`: ingest, featurize, build
//! the joint distribution, initialize, optimize, then score and report every
//! checkpoint.

use std::collections::HashMap;
use std::fmt;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use kernsne_core::eval::{knn_from_similarity, knn_table, NeighborTable, QualityCurve};
use kernsne_core::init::{ica_init_with, IcaParams, IcaReport, InitKind};
use kernsne_core::kernels::{default_laplacian_sigma, read_matrix, write_matrix};
use kernsne_core::{
    approximate_kernel, build_feature_matrix, ensemble_init, gaussian_joint, generate_circle, isolation_kernel,
    kernel_to_joint, laplacian_kernel, parse_fasta, parse_labeled_csv, pca_init, random_init, read_points_csv,
    rescale_init, run_tsne_with, Embedding, Error, FeatureMatrix, JointDistribution, KernelKind, KernelMatrix,
    OptimizerParams, PointDataset, SequenceRecord,
};
use ndarray::Array2;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{HdSpace, InputFormat, RunConfig};
use crate::svg;

/// Circle radius used by `--data circle:N`.
pub const CIRCLE_RADIUS: f64 = 1.0;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Ingest,
    Featurize,
    Kernels,
    Init,
    Optimize,
    Eval,
    Report,
    Plot,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Config => "config",
            Stage::Ingest => "ingest",
            Stage::Featurize => "featurize",
            Stage::Kernels => "kernels",
            Stage::Init => "init",
            Stage::Optimize => "optimize",
            Stage::Eval => "eval",
            Stage::Report => "report",
            Stage::Plot => "plot",
        })
    }
}

#[derive(Debug, thiserror::Error)]
#[error("{stage}: {source}")]
pub struct StageError {
    pub stage: Stage,
    #[source]
    pub source: Error,
}

impl StageError {
    pub fn new(stage: Stage, source: Error) -> Self {
        Self { stage, source }
    }

    /// 2 for bad input or configuration, 3 for numeric or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match &self.source {
            Error::Io(_) => match self.stage {
                Stage::Config | Stage::Ingest | Stage::Plot => 2,
                _ => 3,
            },
            e if e.is_usage() => 2,
            _ => 3,
        }
    }
}

pub(crate) trait AtStage<T> {
    fn at(self, stage: Stage) -> Result<T, StageError>;
}

impl<T, E: Into<Error>> AtStage<T> for Result<T, E> {
    fn at(self, stage: Stage) -> Result<T, StageError> {
        self.map_err(|e| StageError::new(stage, e.into()))
    }
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// A loaded input: sequences or numeric points.
#[derive(Debug, Clone)]
pub enum Dataset {
    Sequences(Vec<SequenceRecord>),
    Points(PointDataset),
}

impl Dataset {
    pub fn len(&self) -> usize {
        match self {
            Dataset::Sequences(r) => r.len(),
            Dataset::Points(p) => p.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn ids(&self) -> Vec<String> {
        match self {
            Dataset::Sequences(r) => r.iter().map(|r| r.id.clone()).collect(),
            Dataset::Points(p) => p.ids.clone(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        match self {
            Dataset::Sequences(r) => r.iter().map(|r| r.label.clone()).collect(),
            Dataset::Points(p) => p.labels.clone(),
        }
    }
}

/// A dataset plus a digest identifying its content for caching.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub dataset: Dataset,
    pub format: InputFormat,
    pub fingerprint: String,
}

fn sniff_format(path: &Path, bytes: &[u8]) -> InputFormat {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "fa" | "fasta" | "fas" | "fna" | "faa" => InputFormat::Fasta,
        _ => {
            let first = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
            let first = String::from_utf8_lossy(first);
            let first = first.trim();
            if first.starts_with('>') {
                InputFormat::Fasta
            } else if first == "id,sequence,label" {
                InputFormat::Csv
            } else {
                InputFormat::Points
            }
        }
    }
}

fn parse_circle(spec: &str) -> Result<usize, Error> {
    spec.parse()
        .map_err(|_| Error::Argument(format!("expected circle:N with a point count, got `circle:{spec}`")))
}

/// Reads `--data`. `circle:N` generates the noisy circle from the run seed.
pub fn load_dataset(cfg: &RunConfig) -> Result<LoadedData, StageError> {
    let source = cfg
        .data
        .as_deref()
        .ok_or_else(|| Error::Argument("no dataset given (--data)".into()))
        .at(Stage::Config)?;
    if let Some(n) = source.strip_prefix("circle:") {
        let n = parse_circle(n).at(Stage::Ingest)?;
        let data = generate_circle(n, CIRCLE_RADIUS, 0.05 * CIRCLE_RADIUS, cfg.seed).at(Stage::Ingest)?;
        let fingerprint = hex::encode(Sha256::digest(format!("circle:{n}:{}", cfg.seed)));
        return Ok(LoadedData {
            dataset: Dataset::Points(data),
            format: InputFormat::Points,
            fingerprint,
        });
    }
    let path = Path::new(source);
    let bytes = fs::read(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
        .at(Stage::Ingest)?;
    let format = cfg.format.unwrap_or_else(|| sniff_format(path, &bytes));
    let dataset = match format {
        InputFormat::Fasta => Dataset::Sequences(parse_fasta(&bytes[..]).at(Stage::Ingest)?),
        InputFormat::Csv => Dataset::Sequences(parse_labeled_csv(&bytes[..]).at(Stage::Ingest)?),
        InputFormat::Points => Dataset::Points(read_points_csv(&bytes[..]).at(Stage::Ingest)?),
    };
    if dataset.is_empty() {
        return Err(StageError::new(Stage::Ingest, Error::Format("dataset has no records".into())));
    }
    Ok(LoadedData {
        dataset,
        format,
        fingerprint: hex::encode(Sha256::digest(&bytes)),
    })
}

/// Feature matrix of a dataset: k-mer spectra for sequences, the points
/// themselves otherwise.
pub fn features(data: &Dataset, kmer_k: usize) -> Result<FeatureMatrix, StageError> {
    match data {
        Dataset::Sequences(records) => build_feature_matrix(records, kmer_k, None).at(Stage::Featurize),
        Dataset::Points(p) => Ok(p.points.clone()),
    }
}

/// Whether the kernel matrix came from the cache.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CacheUse {
    Off,
    Hit,
    Miss,
}

/// Output of the kernel stage.
#[derive(Debug, Clone)]
pub struct Affinities {
    pub joint: JointDistribution,
    /// The kernel matrix, or P itself for the Gaussian kernel.
    pub similarity: Array2<f64>,
    /// Laplacian bandwidth actually used.
    pub sigma: Option<f64>,
    pub cache: CacheUse,
}

fn cache_key(cfg: &RunConfig, data: &LoadedData, sigma: Option<f64>) -> String {
    let mut h = Sha256::new();
    h.update(data.fingerprint.as_bytes());
    if matches!(data.dataset, Dataset::Sequences(_)) {
        h.update(format!("|kmer-k={}", cfg.kmer_k));
    }
    h.update(format!("|kernel={}", cfg.kernel));
    match cfg.kernel {
        KernelKind::Gaussian => h.update(format!("|perplexity={:x}", cfg.perplexity.to_bits())),
        KernelKind::Isolation => h.update(format!("|psi={}|trees={}|seed={}", cfg.psi, cfg.trees, cfg.seed)),
        KernelKind::Laplacian => h.update(format!("|sigma={:x}", sigma.unwrap_or(f64::NAN).to_bits())),
        KernelKind::Approximate => h.update(format!("|m=0|norm={}", cfg.spectrum_norm)),
    }
    hex::encode(h.finalize())
}

fn compute_kernel(cfg: &RunConfig, data: &Dataset, x: &FeatureMatrix, sigma: Option<f64>) -> Result<Array2<f64>, Error> {
    Ok(match cfg.kernel {
        KernelKind::Gaussian => gaussian_joint(x, cfg.perplexity)?.into_values(),
        KernelKind::Isolation => isolation_kernel(x, cfg.psi, cfg.trees, cfg.seed)?.values,
        KernelKind::Laplacian => laplacian_kernel(x, sigma.expect("resolved sigma"))?.values,
        KernelKind::Approximate => match data {
            Dataset::Sequences(records) => approximate_kernel(records, cfg.kmer_k, 0, cfg.spectrum_norm)?.values,
            Dataset::Points(_) => {
                return Err(Error::Argument(
                    "the approximate kernel needs sequence input (fasta or csv)".into(),
                ))
            }
        },
    })
}

/// On-disk kernel cache shared by the cells of a sweep. Cells asking for
/// the same matrix wait for the first one to publish it.
#[derive(Debug)]
pub struct KernelCache {
    dir: PathBuf,
    in_flight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl KernelCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: dir.into(),
            in_flight: Mutex::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn slot(&self, key: &str) -> Arc<Mutex<()>> {
        let mut map = self.in_flight.lock().unwrap_or_else(|e| e.into_inner());
        map.entry(key.to_string()).or_default().clone()
    }
}

fn publish_matrix(dir: &Path, path: &Path, m: &Array2<f64>) -> Result<(), Error> {
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    write_matrix(BufWriter::new(tmp.as_file_mut()), m)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

/// Builds P for the configured kernel, reusing a cached kernel matrix from
/// `cache` when one matches.
pub fn affinities(
    cfg: &RunConfig,
    data: &LoadedData,
    x: &FeatureMatrix,
    cache: Option<&KernelCache>,
) -> Result<Affinities, StageError> {
    let sigma = match cfg.kernel {
        KernelKind::Laplacian => Some(match cfg.sigma {
            Some(s) => s,
            None => default_laplacian_sigma(x).at(Stage::Kernels)?,
        }),
        _ => None,
    };
    let (values, cache) = match cache {
        None => (compute_kernel(cfg, &data.dataset, x, sigma).at(Stage::Kernels)?, CacheUse::Off),
        Some(cache) => {
            let key = cache_key(cfg, data, sigma);
            let slot = cache.slot(&key);
            let _held = slot.lock().unwrap_or_else(|e| e.into_inner());
            let dir = cache.dir();
            let path = dir.join(format!("{key}.bin"));
            match File::open(&path) {
                Ok(f) => (read_matrix(BufReader::new(f)).at(Stage::Kernels)?, CacheUse::Hit),
                Err(_) => {
                    let m = compute_kernel(cfg, &data.dataset, x, sigma).at(Stage::Kernels)?;
                    publish_matrix(dir, &path, &m).at(Stage::Kernels)?;
                    (m, CacheUse::Miss)
                }
            }
        }
    };
    if values.nrows() != x.nrows() {
        return Err(StageError::new(
            Stage::Kernels,
            Error::Format(format!("cached matrix has {} rows, expected {}", values.nrows(), x.nrows())),
        ));
    }
    let joint = match cfg.kernel {
        KernelKind::Gaussian => JointDistribution::new(values.clone()).at(Stage::Kernels)?,
        kind => kernel_to_joint(&KernelMatrix { values: values.clone(), kind }, cfg.joint_mode).at(Stage::Kernels)?,
    };
    Ok(Affinities {
        joint,
        similarity: values,
        sigma,
        cache,
    })
}

/// Reference neighbor table for scoring.
pub fn hd_table(cfg: &RunConfig, x: &FeatureMatrix, aff: Option<&Affinities>) -> Result<NeighborTable, StageError> {
    let n = x.nrows();
    if n < cfg.kmax + 2 {
        return Err(StageError::new(
            Stage::Eval,
            Error::Argument(format!("N = {n} is too small for kmax = {} (need N >= kmax + 2)", cfg.kmax)),
        ));
    }
    match (cfg.hd_space, aff) {
        (HdSpace::Features, _) => knn_table(x, cfg.kmax).at(Stage::Eval),
        (HdSpace::Kernel, Some(a)) => knn_from_similarity(&a.similarity, cfg.kmax).at(Stage::Eval),
        (HdSpace::Kernel, None) => Err(StageError::new(
            Stage::Eval,
            Error::Argument("kernel-space neighbors need the kernel matrix".into()),
        )),
    }
}

/// Initial layout for the configured strategy, rescaled to `init_std`.
pub fn initial_layout(cfg: &RunConfig, x: &FeatureMatrix) -> Result<(Embedding, Option<IcaReport>), StageError> {
    let (e, report) = match cfg.init {
        InitKind::Random => (random_init(x.nrows(), cfg.seed).at(Stage::Init)?, None),
        InitKind::Pca => (pca_init(x).at(Stage::Init)?, None),
        InitKind::Ica => {
            let (e, r) = ica_init_with(x, cfg.seed, &IcaParams::default()).at(Stage::Init)?;
            (e, Some(r))
        }
        InitKind::Ensemble => {
            let (e, r) = ensemble_init(x, cfg.seed, cfg.ensemble_mode).at(Stage::Init)?;
            (e, Some(r))
        }
    };
    Ok((rescale_init(&e, cfg.init_std).at(Stage::Init)?, report))
}

pub fn checkpoint_name(iteration: usize) -> String {
    format!("iter_{iteration:05}.csv")
}

/// Writes `id,x,y[,label]` rows.
pub fn write_layout(path: &Path, ids: &[String], coords: &Array2<f64>, labels: Option<&[String]>) -> Result<(), Error> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    let header: &[&str] = if labels.is_some() { &["id", "x", "y", "label"] } else { &["id", "x", "y"] };
    w.write_record(header).map_err(csv_error)?;
    for (i, id) in ids.iter().enumerate() {
        let (x, y) = (coords[[i, 0]].to_string(), coords[[i, 1]].to_string());
        match labels {
            Some(l) => w.write_record([id.as_str(), &x, &y, l[i].as_str()]),
            None => w.write_record([id.as_str(), &x, &y]),
        }
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

/// A layout read back from a checkpoint or embedding CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub ids: Vec<String>,
    pub coords: Array2<f64>,
    pub labels: Vec<String>,
}

/// Reads `id,x,y` or `id,x,y,label`.
pub fn read_layout(path: &Path) -> Result<Layout, Error> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let header = r.headers().map_err(csv_error)?.clone();
    let with_label = match header.iter().collect::<Vec<_>>().as_slice() {
        ["id", "x", "y"] => false,
        ["id", "x", "y", "label"] => true,
        _ => {
            return Err(Error::Format(format!(
                "{}: expected header id,x,y[,label]",
                path.display()
            )))
        }
    };
    let (mut ids, mut flat, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for (row, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_error)?;
        let num = |i: usize| -> Result<f64, Error> {
            rec[i].parse().map_err(|_| Error::Parse {
                line: row + 2,
                message: format!("bad coordinate `{}`", &rec[i]),
            })
        };
        ids.push(rec[0].to_string());
        flat.push(num(1)?);
        flat.push(num(2)?);
        labels.push(if with_label { rec[3].to_string() } else { String::new() });
    }
    let coords = Array2::from_shape_vec((ids.len(), 2), flat).expect("two columns per row");
    Ok(Layout { ids, coords, labels })
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckpointSummary {
    pub iteration: usize,
    pub kl: f64,
    pub auc_rnx: f64,
}

#[derive(Debug, Clone, Serialize)]
struct DatasetInfo {
    source: String,
    format: InputFormat,
    n: usize,
    dimension: usize,
    distinct_labels: usize,
    sha256: String,
}

#[derive(Debug, Clone, Serialize)]
struct KernelInfo {
    kind: KernelKind,
    sigma: Option<f64>,
    cache: CacheUse,
}

#[derive(Debug, Clone, Serialize)]
struct InitInfo {
    kind: InitKind,
    seed: u64,
    ica: Option<IcaReport>,
}

#[derive(Debug, Clone, Serialize)]
struct Manifest<'a> {
    status: &'a str,
    config: &'a RunConfig,
    dataset: DatasetInfo,
    kernel: KernelInfo,
    init: InitInfo,
    optimizer: OptimizerParams,
    checkpoints: &'a [CheckpointSummary],
}

/// What a finished run produced.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub checkpoints: Vec<CheckpointSummary>,
}

impl RunSummary {
    pub fn final_auc(&self) -> f64 {
        self.checkpoints.last().map_or(f64::NAN, |c| c.auc_rnx)
    }

    pub fn auc_series(&self) -> Vec<(usize, f64)> {
        self.checkpoints.iter().map(|c| (c.iteration, c.auc_rnx)).collect()
    }
}

/// Runs the whole pipeline into `cfg.out`. On failure a `FAILED` marker
/// naming the stage is left next to whatever was already written.
pub fn cmd_embed(cfg: &RunConfig) -> Result<RunSummary, StageError> {
    cmd_embed_cached(cfg, None)
}

pub(crate) fn cmd_embed_cached(cfg: &RunConfig, cache: Option<&KernelCache>) -> Result<RunSummary, StageError> {
    cfg.validate().at(Stage::Config)?;
    let dir = cfg.out.clone();
    fs::create_dir_all(&dir).at(Stage::Report)?;
    let marker = dir.join("FAILED");
    if marker.exists() {
        fs::remove_file(&marker).at(Stage::Report)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Argument(format!("cannot start {} worker threads: {e}", cfg.jobs)))
        .at(Stage::Config)?;
    let result = pool.install(|| embed_into(cfg, &dir, cache));
    if let Err(e) = &result {
        let _ = fs::write(&marker, format!("stage: {}\nerror: {}\n", e.stage, e.source));
    }
    result
}

fn embed_into(cfg: &RunConfig, dir: &Path, cache: Option<&KernelCache>) -> Result<RunSummary, StageError> {
    fs::write(dir.join("config.txt"), cfg.to_text()).at(Stage::Report)?;
    let data = load_dataset(cfg)?;
    let ids = data.dataset.ids();
    let labels = data.dataset.labels();
    let x = features(&data.dataset, cfg.kmer_k)?;
    let aff = affinities(cfg, &data, &x, cache)?;
    let hd = hd_table(cfg, &x, Some(&aff))?;

    let (init, ica) = initial_layout(cfg, &x)?;
    write_layout(&dir.join("init.csv"), &ids, &init.coords, None).at(Stage::Report)?;

    let ckpt_dir = dir.join("checkpoints");
    let quality_dir = dir.join("quality");
    fs::create_dir_all(&ckpt_dir).at(Stage::Report)?;
    fs::create_dir_all(&quality_dir).at(Stage::Report)?;

    let params = cfg.optimizer_params();
    let mut summaries = Vec::new();
    let mut last_coords = None;
    let mut failed_stage = Stage::Optimize;
    let outcome = run_tsne_with(&aff.joint, &init, &params, |cp| {
        let name = checkpoint_name(cp.iteration);
        failed_stage = Stage::Report;
        write_layout(&ckpt_dir.join(&name), &ids, &cp.embedding.coords, Some(&labels))?;
        failed_stage = Stage::Eval;
        let ld = knn_table(&cp.embedding.coords, cfg.kmax)?;
        let curve = QualityCurve::from_tables(&hd, &ld, cfg.kmax)?;
        failed_stage = Stage::Report;
        curve.write_csv(BufWriter::new(File::create(quality_dir.join(&name))?))?;
        summaries.push(CheckpointSummary {
            iteration: cp.iteration,
            kl: cp.kl,
            auc_rnx: curve.auc_rnx,
        });
        last_coords = Some(cp.embedding.coords);
        failed_stage = Stage::Optimize;
        Ok(())
    });
    outcome.at(failed_stage)?;

    let mut auc = String::from("iteration,auc_rnx\n");
    for s in &summaries {
        auc.push_str(&format!("{},{}\n", s.iteration, s.auc_rnx));
    }
    fs::write(dir.join("auc_vs_iter.csv"), auc).at(Stage::Report)?;

    let coords = last_coords.expect("at least one checkpoint");
    let pts: Vec<(f64, f64)> = coords.outer_iter().map(|r| (r[0], r[1])).collect();
    let last = summaries.last().expect("at least one checkpoint");
    let title = format!(
        "{} kernel, {} init, iteration {} (AUC_RNX {:.4})",
        cfg.kernel, cfg.init, last.iteration, last.auc_rnx
    );
    fs::write(dir.join("embedding.svg"), svg::scatter(&pts, &labels, &title)).at(Stage::Report)?;

    let mut distinct = labels.clone();
    distinct.sort();
    distinct.dedup();
    let manifest = Manifest {
        status: "ok",
        config: cfg,
        dataset: DatasetInfo {
            source: cfg.data.clone().unwrap_or_default(),
            format: data.format,
            n: x.nrows(),
            dimension: x.ncols(),
            distinct_labels: distinct.len(),
            sha256: data.fingerprint.clone(),
        },
        kernel: KernelInfo {
            kind: cfg.kernel,
            sigma: aff.sigma,
            cache: aff.cache,
        },
        init: InitInfo {
            kind: cfg.init,
            seed: cfg.seed,
            ica,
        },
        optimizer: params,
        checkpoints: &summaries,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Format(e.to_string()))
        .at(Stage::Report)?;
    fs::write(dir.join("manifest.json"), json + "\n").at(Stage::Report)?;

    Ok(RunSummary {
        dir: dir.to_path_buf(),
        checkpoints: summaries,
    })
}
