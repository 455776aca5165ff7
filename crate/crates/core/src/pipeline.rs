//! End-to-end extraction runs: nighttime lights and street networks.
//!
//! Each run reads a JSON config whose relative paths resolve against the
//! config file's directory, writes its outputs into a run directory guarded
//! by a lock file, and records a `manifest.json` with the resolved config,
//! seeds, crate version and SHA-256 of every file written. The expensive
//! intermediate stages (calibrated grids, street face sets) are stored under
//! `stages/`. With `resume` set, a stage whose inputs and files still match
//! the previous manifest is reloaded instead of recomputed.
//!
//! Threshold selection rules:
//! * nighttime lights: the largest candidate threshold whose evaluation-year
//!   clusters number at least `min_clusters` and pass the power-law test;
//! * streets: among head/tail levels selecting at least `min_clusters`
//!   clusters and passing the test, the one with the highest p-value.
//!
//! Both can be bypassed with an explicit override.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::calib::{calibrate_series, sum_of_lights, write_models_csv, CalibError, CalibrationModel, SeriesKey, WholeAreaSampler};
use crate::cluster::UrbanCluster;
use crate::compare::{concentration, largest_cluster, overlay_stats, CompareError, OverlayReport};
use crate::headtail::{head_tail_breaks, multi_year_thresholds, HeadTailError, HeadTailHierarchy, Rounding, TieRule, DEFAULT_HEAD_LIMIT};
use crate::io::{
    read_boundary, read_clusters, read_face_set, read_polygons, read_segments, read_values, write_clusters_geojson, write_face_set, DataError,
};
use crate::rastergrid::{
    clip, connected_components, load_grid, read_flat_binary, threshold_mask, vectorize, Connectivity, DnGrid, GridError, GridFormat, Smoothing,
    ThresholdRule, MAX_DN,
};
use crate::scaling::{
    fit_power_law, fit_power_law_at, goodness_of_fit, goodness_of_fit_fixed_xmin, rank_size, rank_size_svg, write_rank_size_csv, FitReport,
    ScalingError, MIN_BOOTSTRAP, MIN_SAMPLE,
};
use crate::streetnet::{
    build_voronoi, default_snap_tol, dual_clusters, extract_nodes, extract_nodes_with_crossings, merge_adjacent, polygonize, select_short_edges,
    threshold_clusters, FaceSet, StreetError, DEFAULT_CLIP_MARGIN, KM2_PER_SQ_METRE,
};

pub const LOCK_FILE: &str = "run.lock";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_N_BOOTSTRAP: usize = 250;
pub const DEFAULT_NTL_MIN_CLUSTERS: usize = 10;
pub const DEFAULT_STREET_MIN_CLUSTERS: usize = 50;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("run directory {0} is locked by another run")]
    Locked(PathBuf),
    #[error("no candidate threshold gives a plausible power law")]
    NoPlausibleThreshold { candidates: Vec<CandidateReport> },
    #[error("no head/tail level gives a plausible power law with enough clusters")]
    NoPlausibleLevel { levels: Vec<LevelReport> },
}

impl PipelineError {
    /// Process exit code for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) | PipelineError::Locked(_) => 2,
            PipelineError::Data(_) => 3,
            PipelineError::NoPlausibleThreshold { .. } | PipelineError::NoPlausibleLevel { .. } => 4,
        }
    }
}

macro_rules! data_error_from {
    ($($t:ty),*) => {$(
        impl From<$t> for PipelineError {
            fn from(e: $t) -> Self {
                PipelineError::Data(e.to_string())
            }
        }
    )*};
}
data_error_from!(DataError, GridError, CalibError, HeadTailError, StreetError, CompareError);

fn io_error(path: &Path, e: impl std::fmt::Display) -> PipelineError {
    PipelineError::Data(format!("{}: {e}", path.display()))
}

fn default_head_limit() -> f64 {
    DEFAULT_HEAD_LIMIT
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn default_n_bootstrap() -> usize {
    DEFAULT_N_BOOTSTRAP
}
fn default_ntl_min_clusters() -> usize {
    DEFAULT_NTL_MIN_CLUSTERS
}
fn default_street_min_clusters() -> usize {
    DEFAULT_STREET_MIN_CLUSTERS
}
fn default_clip_margin() -> f64 {
    DEFAULT_CLIP_MARGIN
}
fn default_km2_per_sq_unit() -> f64 {
    KM2_PER_SQ_METRE
}
fn default_crs() -> String {
    "projected".into()
}

/// Common behaviour of the JSON configs accepted by the command-line tool.
pub trait RunConfig: DeserializeOwned + Serialize {
    /// Makes relative paths absolute against `base`.
    fn resolve_paths(&mut self, base: &Path);
    fn validate(&self) -> Result<(), PipelineError>;
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

fn resolve_opt(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(p) = p {
        resolve(base, p);
    }
}

/// Reads, path-resolves and validates a config file.
pub fn load_config<C: RunConfig>(path: &Path) -> Result<C, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let mut cfg: C = serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    cfg.resolve_paths(&base);
    cfg.validate()?;
    Ok(cfg)
}

fn check_head_limit(h: f64) -> Result<(), PipelineError> {
    if h > 0.0 && h <= 1.0 {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("head_limit {h} is outside (0, 1]")))
    }
}

fn check_bootstrap(n: usize) -> Result<(), PipelineError> {
    if n >= MIN_BOOTSTRAP {
        Ok(())
    } else {
        Err(PipelineError::Config(format!("n_bootstrap must be at least {MIN_BOOTSTRAP}, got {n}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridInput {
    pub satellite: String,
    pub year: i32,
    pub path: PathBuf,
    /// Inferred from the extension when absent.
    #[serde(default)]
    pub format: Option<GridFormat>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NtlRunConfig {
    pub grids: Vec<GridInput>,
    pub boundary: PathBuf,
    /// `"projected"` (metres) or a geographic tag such as `"EPSG:4326"`.
    #[serde(default = "default_crs")]
    pub crs: String,
    #[serde(default = "default_head_limit")]
    pub head_limit: f64,
    #[serde(default)]
    pub connectivity: Connectivity,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub rounding: Rounding,
    #[serde(default)]
    pub threshold_rule: ThresholdRule,
    #[serde(default)]
    pub smoothing: Smoothing,
    /// Replaces the derived candidates. A single value is selected without
    /// testing it.
    #[serde(default)]
    pub candidate_override: Option<Vec<u8>>,
    /// Number of hierarchy levels turned into candidates; defaults to the
    /// deepest valid depth over all years.
    #[serde(default)]
    pub candidate_depth: Option<usize>,
    /// Year whose clusters are tested; defaults to the latest year.
    #[serde(default)]
    pub evaluation_year: Option<i32>,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    /// Candidates producing fewer clusters are treated as implausible.
    #[serde(default = "default_ntl_min_clusters")]
    pub min_clusters: usize,
    /// Optional reference urban layer (GeoJSON polygons) for an overlay.
    #[serde(default)]
    pub reference_urban: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub resume: bool,
}

impl RunConfig for NtlRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        for g in &mut self.grids {
            resolve(base, &mut g.path);
        }
        resolve(base, &mut self.boundary);
        resolve_opt(base, &mut self.reference_urban);
        resolve_opt(base, &mut self.out_dir);
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if self.grids.is_empty() {
            return Err(PipelineError::Config("`grids` is empty".into()));
        }
        let mut seen = std::collections::BTreeSet::new();
        for g in &self.grids {
            if !seen.insert((g.satellite.clone(), g.year)) {
                return Err(PipelineError::Config(format!("grid {}{} listed twice", g.satellite, g.year)));
            }
        }
        check_head_limit(self.head_limit)?;
        check_bootstrap(self.n_bootstrap)?;
        if let Some(c) = &self.candidate_override {
            if c.is_empty() {
                return Err(PipelineError::Config("`candidate_override` is empty".into()));
            }
            if let Some(t) = c.iter().find(|&&t| t > MAX_DN) {
                return Err(PipelineError::Config(format!("candidate threshold {t} exceeds {MAX_DN}")));
            }
        }
        if self.candidate_depth == Some(0) {
            return Err(PipelineError::Config("`candidate_depth` must be at least 1".into()));
        }
        if let Some(y) = self.evaluation_year {
            if !self.grids.iter().any(|g| g.year == y) {
                return Err(PipelineError::Config(format!("evaluation year {y} has no grid")));
            }
        }
        if let Smoothing::Chaikin(w) = self.smoothing {
            if !(w > 0.0 && w <= 0.5) {
                return Err(PipelineError::Config(format!("smoothing weight {w} is outside (0, 0.5]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreetRunConfig {
    /// CSV (`id,x1,y1,x2,y2`) or GeoJSON line features in a projected CRS.
    pub segments: PathBuf,
    /// Endpoint snapping distance; defaults to a tiny fraction of the extent.
    #[serde(default)]
    pub snap_tol: Option<f64>,
    #[serde(default = "default_clip_margin")]
    pub clip_margin: f64,
    /// Also place nodes where segments cross without sharing an endpoint.
    #[serde(default)]
    pub detect_crossings: bool,
    /// Build clusters from the Delaunay dual instead of short Voronoi edges.
    #[serde(default)]
    pub dual_mode: bool,
    #[serde(default = "default_head_limit")]
    pub head_limit: f64,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub level_override: Option<usize>,
    #[serde(default = "default_street_min_clusters")]
    pub min_clusters: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default = "default_km2_per_sq_unit")]
    pub km2_per_sq_unit: f64,
    #[serde(default)]
    pub region_area_km2: Option<f64>,
    #[serde(default)]
    pub reference_urban: Option<PathBuf>,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
    #[serde(default)]
    pub resume: bool,
}

impl RunConfig for StreetRunConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.segments);
        resolve_opt(base, &mut self.reference_urban);
        resolve_opt(base, &mut self.out_dir);
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if let Some(t) = self.snap_tol {
            if !(t >= 0.0 && t.is_finite()) {
                return Err(PipelineError::Config(format!("snap_tol must be finite and non-negative, got {t}")));
            }
        }
        if !(self.clip_margin > 0.0 && self.clip_margin.is_finite()) {
            return Err(PipelineError::Config(format!("clip_margin must be positive, got {}", self.clip_margin)));
        }
        if !(self.km2_per_sq_unit > 0.0 && self.km2_per_sq_unit.is_finite()) {
            return Err(PipelineError::Config("km2_per_sq_unit must be positive".into()));
        }
        if let Some(a) = self.region_area_km2 {
            if !(a > 0.0 && a.is_finite()) {
                return Err(PipelineError::Config(format!("region_area_km2 must be positive, got {a}")));
            }
        }
        if self.reference_urban.is_some() && self.region_area_km2.is_none() {
            return Err(PipelineError::Config("`reference_urban` needs `region_area_km2`".into()));
        }
        check_head_limit(self.head_limit)?;
        check_bootstrap(self.n_bootstrap)
    }
}

/// Largest cluster of a result set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LargestCluster {
    pub id: u32,
    pub area_km2: f64,
}

/// Headline figures of a run. Each pipeline fills the fields it can compute
/// and leaves the rest null.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    /// Cluster count per year at the chosen threshold.
    pub ntl_cluster_counts: BTreeMap<i32, usize>,
    /// Total cluster area in the evaluation year.
    pub ntl_total_area_km2: Option<f64>,
    pub ntl_total_area_pct: Option<f64>,
    /// Total area of the clusters selected at the chosen level.
    pub street_total_area_km2: Option<f64>,
    pub street_total_area_pct: Option<f64>,
    pub reference_urban_area_km2: Option<f64>,
    pub reference_urban_area_pct: Option<f64>,
    pub street_segments: Option<usize>,
    pub street_nodes: Option<usize>,
    pub street_polygons: Option<usize>,
    pub largest_cluster: Option<LargestCluster>,
    pub region_area_km2: Option<f64>,
}

/// Power-law assessment of one candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub threshold: u8,
    pub n_clusters: usize,
    pub total_area_km2: f64,
    pub fit: Option<FitReport>,
    pub plausible: bool,
    pub note: Option<String>,
}

/// Power-law assessment of one head/tail level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    /// Clusters strictly larger than this area are selected.
    pub threshold_km2: f64,
    pub n_clusters: usize,
    pub total_area_km2: f64,
    pub fit: Option<FitReport>,
    pub plausible: bool,
    pub note: Option<String>,
}

struct Assessment {
    fit: Option<FitReport>,
    plausible: bool,
    note: Option<String>,
}

/// Fits a power law when there are enough values and runs the bootstrap test
/// when there are at least `min_clusters`.
fn assess(areas: &[f64], min_clusters: usize, n_bootstrap: usize, seed: u64) -> Assessment {
    if areas.len() < MIN_SAMPLE {
        return Assessment { fit: None, plausible: false, note: Some(format!("{} clusters, too few to fit", areas.len())) };
    }
    let fit = match fit_power_law(areas) {
        Ok(f) => f,
        Err(e) => return Assessment { fit: None, plausible: false, note: Some(e.to_string()) },
    };
    if areas.len() < min_clusters {
        return Assessment {
            fit: Some(FitReport::new(&fit, None)),
            plausible: false,
            note: Some(format!("{} clusters, fewer than the required {min_clusters}", areas.len())),
        };
    }
    match goodness_of_fit(&fit, areas, n_bootstrap, seed) {
        Ok(gof) => Assessment { fit: Some(FitReport::new(&fit, Some(&gof))), plausible: gof.plausible, note: None },
        Err(e) => Assessment { fit: Some(FitReport::new(&fit, None)), plausible: false, note: Some(e.to_string()) },
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StageRecord {
    /// Hash of everything the stage depends on.
    key: String,
    files: BTreeMap<String, String>,
}

/// An exclusively owned run directory.
struct RunDir {
    root: PathBuf,
    previous: Option<Value>,
    outputs: BTreeMap<String, String>,
    stages: BTreeMap<String, StageRecord>,
}

impl RunDir {
    fn open(root: &Path, resume: bool) -> Result<RunDir, PipelineError> {
        fs::create_dir_all(root).map_err(|e| io_error(root, e))?;
        let lock = root.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&lock) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => return Err(PipelineError::Locked(root.to_path_buf())),
            Err(e) => return Err(io_error(&lock, e)),
        }
        let previous = if resume { fs::read_to_string(root.join(MANIFEST_FILE)).ok().and_then(|t| serde_json::from_str(&t).ok()) } else { None };
        Ok(RunDir { root: root.to_path_buf(), previous, outputs: BTreeMap::new(), stages: BTreeMap::new() })
    }

    fn put(&self, rel: &str, bytes: &[u8]) -> Result<String, PipelineError> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
        }
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        Ok(sha256_hex(bytes))
    }

    /// The previous run's record of `stage`, if its key matches and every file
    /// is still intact.
    fn reusable(&self, stage: &str, key: &str) -> Option<StageRecord> {
        let rec: StageRecord = serde_json::from_value(self.previous.as_ref()?.get("stages")?.get(stage)?.clone()).ok()?;
        if rec.key != key {
            return None;
        }
        for (rel, sha) in &rec.files {
            let bytes = fs::read(self.root.join(rel)).ok()?;
            if sha256_hex(&bytes) != *sha {
                return None;
            }
        }
        Some(rec)
    }
}

impl Drop for RunDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(self.root.join(LOCK_FILE));
    }
}

/// Output sink; writes nothing when the run has no directory.
struct Outputs {
    dir: Option<RunDir>,
}

impl Outputs {
    fn open(out_dir: Option<&Path>, resume: bool) -> Result<Outputs, PipelineError> {
        Ok(Outputs { dir: out_dir.map(|d| RunDir::open(d, resume)).transpose()? })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<(), PipelineError> {
        if let Some(d) = &mut self.dir {
            let sha = d.put(rel, bytes)?;
            d.outputs.insert(rel.to_string(), sha);
        }
        Ok(())
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, rel: &str, value: &T) -> Result<(), PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::Data(e.to_string()))?;
        bytes.push(b'\n');
        self.write(rel, &bytes)
    }

    fn reusable(&self, stage: &str, key: &str) -> Option<StageRecord> {
        self.dir.as_ref().and_then(|d| d.reusable(stage, key))
    }

    fn root(&self) -> Option<&Path> {
        self.dir.as_ref().map(|d| d.root.as_path())
    }

    fn record_stage(&mut self, stage: &str, key: &str, files: Vec<(String, Vec<u8>)>) -> Result<(), PipelineError> {
        if let Some(d) = &mut self.dir {
            let mut rec = StageRecord { key: key.to_string(), files: BTreeMap::new() };
            for (rel, bytes) in files {
                let sha = d.put(&rel, &bytes)?;
                rec.files.insert(rel, sha);
            }
            d.stages.insert(stage.to_string(), rec);
        }
        Ok(())
    }

    fn keep_stage(&mut self, stage: &str, rec: StageRecord) {
        if let Some(d) = &mut self.dir {
            d.stages.insert(stage.to_string(), rec);
        }
    }

    /// Writes `manifest.json` and releases the lock.
    fn finish(self, pipeline: &str, config: &impl Serialize, seeds: Value, interpretations: Value) -> Result<(), PipelineError> {
        let Some(d) = self.dir else { return Ok(()) };
        // Where and how the run was started does not affect its results.
        let mut config = serde_json::to_value(config).map_err(|e| PipelineError::Data(e.to_string()))?;
        if let Some(obj) = config.as_object_mut() {
            obj.remove("out_dir");
            obj.remove("resume");
        }
        let manifest = json!({
            "tool": env!("CARGO_PKG_NAME"),
            "version": env!("CARGO_PKG_VERSION"),
            "pipeline": pipeline,
            "config": config,
            "seeds": seeds,
            "interpretations": interpretations,
            "stages": d.stages,
            "outputs": d.outputs,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| PipelineError::Data(e.to_string()))?;
        bytes.push(b'\n');
        d.put(MANIFEST_FILE, &bytes)?;
        Ok(())
    }
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    f(&mut buf).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(buf)
}

fn geojson_bytes(clusters: &[UrbanCluster]) -> Result<Vec<u8>, PipelineError> {
    let mut buf = Vec::new();
    write_clusters_geojson(clusters, &mut buf).map_err(|e| PipelineError::Data(e.to_string()))?;
    Ok(buf)
}

fn clusters_csv(clusters: &[UrbanCluster]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["id", "area_km2", "cell_count", "threshold"])?;
        for c in clusters {
            w.write_record([
                c.id.to_string(),
                c.area_km2.to_string(),
                c.cell_count.map(|n| n.to_string()).unwrap_or_default(),
                c.threshold_used.map(|t| t.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn hierarchy_csv(h: &HeadTailHierarchy) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|buf| h.write_csv(buf))
}

fn rank_size_csv(areas: &[f64]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|buf| write_rank_size_csv(&rank_size(areas), buf))
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn fit_columns(fit: &Option<FitReport>) -> [String; 5] {
    match fit {
        Some(f) => [f.x_min.to_string(), f.alpha.to_string(), f.ks.to_string(), f.n_tail.to_string(), opt_str(f.p_value)],
        None => Default::default(),
    }
}

fn areas_of(clusters: &[UrbanCluster]) -> Vec<f64> {
    clusters.iter().map(|c| c.area_km2).collect()
}

/// Plain sum; unlike `Iterator::sum` it gives +0 for an empty slice.
fn total_of(areas: &[f64]) -> f64 {
    areas.iter().fold(0.0, |a, b| a + b)
}

fn largest(clusters: &[UrbanCluster]) -> Option<LargestCluster> {
    largest_cluster(clusters).ok().map(|(id, area_km2)| LargestCluster { id, area_km2 })
}

fn file_digest(hasher: &mut Sha256, path: &Path) -> Result<(), PipelineError> {
    let bytes = fs::read(path).map_err(|e| io_error(path, e))?;
    hasher.update(path.to_string_lossy().as_bytes());
    hasher.update(Sha256::digest(&bytes));
    Ok(())
}

/// Result of a nighttime-light run.
#[derive(Debug, Clone)]
pub struct NtlRunOutput {
    pub reference: SeriesKey,
    pub models: Vec<CalibrationModel>,
    pub hierarchies: BTreeMap<i32, HeadTailHierarchy>,
    pub candidates: Vec<CandidateReport>,
    pub chosen_threshold: u8,
    pub evaluation_year: i32,
    /// Clusters at the chosen threshold, per year.
    pub clusters: BTreeMap<i32, Vec<UrbanCluster>>,
    pub summary: SummaryReport,
    /// Stages reloaded from a previous run instead of recomputed.
    pub reused_stages: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CalibrationStage {
    reference: SeriesKey,
    crs: String,
    models: Vec<CalibrationModel>,
}

fn load_clipped(cfg: &NtlRunConfig) -> Result<BTreeMap<SeriesKey, DnGrid>, PipelineError> {
    let boundary = read_boundary(&cfg.boundary)?;
    let grids: Vec<(SeriesKey, DnGrid)> = cfg
        .grids
        .par_iter()
        .map(|g| {
            let format = g.format.unwrap_or_else(|| GridFormat::from_path(&g.path));
            let mut grid = load_grid(&g.path, format).map_err(|e| io_error(&g.path, e))?;
            grid.meta.crs_tag = cfg.crs.clone();
            let clipped = clip(&grid, &boundary).map_err(|e| io_error(&cfg.boundary, e))?;
            Ok(((g.satellite.clone(), g.year), clipped))
        })
        .collect::<Result<_, PipelineError>>()?;
    let first = &grids[0].1.meta;
    for (key, g) in &grids[1..] {
        let m = &g.meta;
        if (m.width, m.height, m.origin, m.cell_size) != (first.width, first.height, first.origin, first.cell_size) {
            return Err(PipelineError::Data(format!("grid {}{} is not aligned with {}{}", key.0, key.1, grids[0].0 .0, grids[0].0 .1)));
        }
    }
    Ok(grids.into_iter().collect())
}

fn stage_file_name(key: &SeriesKey) -> String {
    format!("stages/calibrate/{}_{}.bin", key.0, key.1)
}

/// Clips and calibrates all grids, or reloads the calibrated grids of a
/// previous run.
fn calibrate_stage(
    cfg: &NtlRunConfig,
    out: &mut Outputs,
    reused: &mut Vec<String>,
) -> Result<(CalibrationStage, BTreeMap<SeriesKey, DnGrid>), PipelineError> {
    let mut hasher = Sha256::new();
    hasher.update(cfg.crs.as_bytes());
    file_digest(&mut hasher, &cfg.boundary)?;
    for g in &cfg.grids {
        hasher.update(format!("{}|{}|{:?}", g.satellite, g.year, g.format).as_bytes());
        file_digest(&mut hasher, &g.path)?;
    }
    let key = format!("{:x}", hasher.finalize());

    if let (Some(rec), Some(root)) = (out.reusable("calibrate", &key), out.root()) {
        let stage: Option<CalibrationStage> = fs::read(root.join("stages/calibrate/series.json")).ok().and_then(|b| serde_json::from_slice(&b).ok());
        if let Some(stage) = stage {
            let mut grids = BTreeMap::new();
            for m in &stage.models {
                let k = (m.satellite_id.clone(), m.year);
                let path = root.join(stage_file_name(&k));
                let file = fs::File::open(&path).map_err(|e| io_error(&path, e))?;
                let mut g = read_flat_binary(std::io::BufReader::new(file)).map_err(|e| io_error(&path, e))?;
                g.meta.crs_tag = stage.crs.clone();
                grids.insert(k, g);
            }
            info!("reusing calibrated grids from a previous run");
            out.keep_stage("calibrate", rec);
            reused.push("calibrate".into());
            return Ok((stage, grids));
        }
    }

    let clipped = load_clipped(cfg)?;
    let series = calibrate_series(&clipped, &WholeAreaSampler)?;
    let stage = CalibrationStage { reference: series.reference.clone(), crs: cfg.crs.clone(), models: series.models.values().cloned().collect() };
    let mut files = Vec::new();
    for (k, g) in &series.grids {
        let mut bytes = Vec::new();
        g.write_flat_binary(&mut bytes).map_err(|e| PipelineError::Data(e.to_string()))?;
        files.push((stage_file_name(k), bytes));
    }
    files.push(("stages/calibrate/series.json".into(), serde_json::to_vec_pretty(&stage).map_err(|e| PipelineError::Data(e.to_string()))?));
    out.record_stage("calibrate", &key, files)?;
    Ok((stage, series.grids))
}

fn extract_clusters(grid: &DnGrid, cfg: &NtlRunConfig, t: u8, year: i32) -> Vec<UrbanCluster> {
    let mask = threshold_mask(grid, t, cfg.threshold_rule);
    let labels = connected_components(&mask, cfg.connectivity);
    vectorize(&labels, &grid.meta, cfg.smoothing)
        .into_iter()
        .map(|c| UrbanCluster { year: Some(year), threshold_used: Some(t as f64), ..c })
        .collect()
}

/// Clip → calibrate → per-year head/tail breaks → candidate thresholds →
/// power-law test per candidate → clusters for every year at the chosen
/// threshold.
///
/// When several satellites cover one year, the grid with the larger sum of
/// lights (after calibration) represents that year.
pub fn run_ntl_pipeline(cfg: &NtlRunConfig) -> Result<NtlRunOutput, PipelineError> {
    cfg.validate()?;
    let mut out = Outputs::open(cfg.out_dir.as_deref(), cfg.resume)?;
    let mut reused = Vec::new();
    let (stage, grids) = calibrate_stage(cfg, &mut out, &mut reused)?;

    let mut by_year: BTreeMap<i32, &SeriesKey> = BTreeMap::new();
    for (k, g) in &grids {
        let better = by_year.get(&k.1).is_none_or(|cur| sum_of_lights(g) > sum_of_lights(&grids[*cur]));
        if better {
            by_year.insert(k.1, k);
        }
    }
    let year_grid = |y: i32| &grids[by_year[&y]];

    let hierarchies: BTreeMap<i32, HeadTailHierarchy> = by_year
        .par_iter()
        .map(|(&y, k)| {
            let lit = grids[*k].lit_values();
            if lit.is_empty() {
                return Err(PipelineError::Data(format!("no lit cells inside the boundary in {y}")));
            }
            Ok((y, head_tail_breaks(&lit, cfg.head_limit, cfg.tie_rule)?))
        })
        .collect::<Result<_, PipelineError>>()?;

    let depth = cfg.candidate_depth.unwrap_or_else(|| hierarchies.values().map(HeadTailHierarchy::valid_depth).max().unwrap_or(1).max(1));
    let thresholds: Vec<u8> = match &cfg.candidate_override {
        Some(list) => {
            let mut l = list.clone();
            l.sort_unstable();
            l.dedup();
            l
        }
        None => multi_year_thresholds(&hierarchies, depth, cfg.rounding)?
            .into_iter()
            .filter_map(|t| u8::try_from(t).ok())
            .filter(|&t| t <= MAX_DN)
            .collect(),
    };
    let evaluation_year = cfg.evaluation_year.unwrap_or_else(|| *by_year.keys().next_back().expect("grids are nonempty"));
    let eval_grid = year_grid(evaluation_year);
    let region_area_km2: f64 = (0..eval_grid.height())
        .map(|r| (0..eval_grid.width()).filter(|&c| eval_grid.get(r, c).is_some()).count() as f64 * eval_grid.meta.cell_area_km2(r))
        .sum();

    let mut rank_series: Vec<(String, Vec<(usize, f64)>)> = Vec::new();
    let mut candidates = Vec::with_capacity(thresholds.len());
    for &t in &thresholds {
        let clusters = extract_clusters(eval_grid, cfg, t, evaluation_year);
        let areas = areas_of(&clusters);
        let a = assess(&areas, cfg.min_clusters, cfg.n_bootstrap, cfg.seed);
        info!("candidate {t}: {} clusters, plausible = {}", areas.len(), a.plausible);
        rank_series.push((format!("DN > {t}"), rank_size(&areas)));
        candidates.push(CandidateReport {
            threshold: t,
            n_clusters: areas.len(),
            total_area_km2: total_of(&areas),
            fit: a.fit,
            plausible: a.plausible,
            note: a.note,
        });
    }

    for (y, h) in &hierarchies {
        out.write(&format!("headtail_{y}.csv"), &hierarchy_csv(h)?)?;
    }
    out.write("calibration.csv", &csv_bytes(|buf| write_models_csv(&stage.models, buf))?)?;
    out.write("candidates.csv", &candidates_csv(&candidates)?)?;
    let svg_series: Vec<(&str, &[(usize, f64)])> = rank_series.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    out.write("rank_size.svg", rank_size_svg(&svg_series).as_bytes())?;

    let chosen = match cfg.candidate_override.as_deref() {
        Some([only]) => Some(*only),
        _ => candidates.iter().rev().find(|c| c.plausible).map(|c| c.threshold),
    };
    let interpretations = json!({
        "evaluation_year": evaluation_year,
        "evaluation_year_rule": if cfg.evaluation_year.is_some() { "configured" } else { "latest year" },
        "candidate_depth": depth,
        "selection_rule": if cfg.candidate_override.as_ref().is_some_and(|c| c.len() == 1) {
            "override".to_string()
        } else {
            format!("largest candidate with p > 0.1 and at least {} clusters", cfg.min_clusters)
        },
        "year_representatives": by_year.iter().map(|(y, k)| (y.to_string(), format!("{}{}", k.0, k.1))).collect::<BTreeMap<_, _>>(),
        "reference": format!("{}{}", stage.reference.0, stage.reference.1),
    });
    let seeds = json!({ "bootstrap": cfg.seed });
    let Some(chosen_threshold) = chosen else {
        out.finish("ntl", cfg, seeds, interpretations)?;
        return Err(PipelineError::NoPlausibleThreshold { candidates });
    };

    let clusters: BTreeMap<i32, Vec<UrbanCluster>> =
        by_year.par_iter().map(|(&y, _)| (y, extract_clusters(year_grid(y), cfg, chosen_threshold, y))).collect();
    for (y, cs) in &clusters {
        out.write(&format!("clusters_{y}.geojson"), &geojson_bytes(cs)?)?;
        out.write(&format!("clusters_{y}.csv"), &clusters_csv(cs)?)?;
    }
    let eval_clusters = &clusters[&evaluation_year];
    let eval_areas = areas_of(eval_clusters);
    out.write("rank_size.csv", &rank_size_csv(&eval_areas)?)?;
    let chosen_fit = match candidates.iter().find(|c| c.threshold == chosen_threshold) {
        Some(c) => c.fit.clone(),
        None => assess(&eval_areas, cfg.min_clusters, cfg.n_bootstrap, cfg.seed).fit,
    };
    out.write_json("fit.json", &chosen_fit)?;

    let total = total_of(&eval_areas);
    let mut summary = SummaryReport {
        ntl_cluster_counts: clusters.iter().map(|(y, c)| (*y, c.len())).collect(),
        ntl_total_area_km2: Some(total),
        ntl_total_area_pct: (region_area_km2 > 0.0).then(|| 100.0 * total / region_area_km2),
        largest_cluster: largest(eval_clusters),
        region_area_km2: Some(region_area_km2),
        ..SummaryReport::default()
    };
    if let Some(reference) = &cfg.reference_urban {
        if eval_grid.meta.is_geographic() {
            return Err(PipelineError::Config("an overlay with `reference_urban` needs projected grids".into()));
        }
        let report = overlay_stats(eval_clusters, &read_polygons(reference)?, region_area_km2, KM2_PER_SQ_METRE)?;
        summary.reference_urban_area_km2 = Some(report.total_area_b);
        summary.reference_urban_area_pct = Some(report.pct_of_region_b);
        out.write_json("overlay.json", &report)?;
    }
    out.write_json("selection.json", &json!({ "chosen_threshold": chosen_threshold, "evaluation_year": evaluation_year, "candidates": candidates }))?;
    out.write_json(SUMMARY_FILE, &summary)?;
    out.finish("ntl", cfg, seeds, interpretations)?;

    Ok(NtlRunOutput {
        reference: stage.reference,
        models: stage.models,
        hierarchies,
        candidates,
        chosen_threshold,
        evaluation_year,
        clusters,
        summary,
        reused_stages: reused,
    })
}

fn candidates_csv(candidates: &[CandidateReport]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["threshold", "n_clusters", "total_area_km2", "x_min", "alpha", "ks", "n_tail", "p_value", "plausible", "note"])?;
        for c in candidates {
            let f = fit_columns(&c.fit);
            w.write_record([
                c.threshold.to_string(),
                c.n_clusters.to_string(),
                c.total_area_km2.to_string(),
                f[0].clone(),
                f[1].clone(),
                f[2].clone(),
                f[3].clone(),
                f[4].clone(),
                c.plausible.to_string(),
                c.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

fn levels_csv(levels: &[LevelReport]) -> Result<Vec<u8>, PipelineError> {
    csv_bytes(|buf| {
        let mut w = csv::Writer::from_writer(buf);
        w.write_record(["level", "threshold_km2", "n_clusters", "total_area_km2", "x_min", "alpha", "ks", "n_tail", "p_value", "plausible", "note"])?;
        for l in levels {
            let f = fit_columns(&l.fit);
            w.write_record([
                l.level.to_string(),
                l.threshold_km2.to_string(),
                l.n_clusters.to_string(),
                l.total_area_km2.to_string(),
                f[0].clone(),
                f[1].clone(),
                f[2].clone(),
                f[3].clone(),
                f[4].clone(),
                l.plausible.to_string(),
                l.note.clone().unwrap_or_default(),
            ])?;
        }
        w.flush()?;
        Ok(())
    })
}

/// Result of a street-network run.
#[derive(Debug, Clone)]
pub struct StreetRunOutput {
    pub n_segments: usize,
    pub n_nodes: usize,
    /// Bounded faces before merging; `None` in dual mode.
    pub n_faces: Option<usize>,
    /// All merged clusters, before thresholding.
    pub all_clusters: Vec<UrbanCluster>,
    pub hierarchy: HeadTailHierarchy,
    pub levels: Vec<LevelReport>,
    pub chosen_level: usize,
    /// Clusters selected at the chosen level.
    pub clusters: Vec<UrbanCluster>,
    pub summary: SummaryReport,
    pub reused_stages: Vec<String>,
}

/// Segments → nodes → Voronoi diagram → short edges → faces → merged
/// clusters → head/tail breaks on cluster areas → power-law test per level.
pub fn run_street_pipeline(cfg: &StreetRunConfig) -> Result<StreetRunOutput, PipelineError> {
    cfg.validate()?;
    let mut out = Outputs::open(cfg.out_dir.as_deref(), cfg.resume)?;
    let mut reused = Vec::new();

    let segments = read_segments(&cfg.segments)?;
    if segments.is_empty() {
        return Err(StreetError::EmptyInput.into());
    }
    let snap_tol = cfg.snap_tol.unwrap_or_else(|| default_snap_tol(&segments));
    let nodes = if cfg.detect_crossings { extract_nodes_with_crossings(&segments, snap_tol)? } else { extract_nodes(&segments, snap_tol)? };
    info!("{} segments -> {} nodes", segments.len(), nodes.len());

    let (all_clusters, n_faces) = if cfg.dual_mode {
        let graph = build_voronoi(&nodes, cfg.clip_margin)?;
        (dual_clusters(&graph, cfg.km2_per_sq_unit).0, None)
    } else {
        let mut hasher = Sha256::new();
        file_digest(&mut hasher, &cfg.segments)?;
        hasher.update(format!("{snap_tol:?}|{:?}|{}|{:?}", cfg.clip_margin, cfg.detect_crossings, cfg.km2_per_sq_unit).as_bytes());
        let key = format!("{:x}", hasher.finalize());
        const FACES: &str = "stages/faces/faces.json";
        let reloaded = match (out.reusable("faces", &key), out.root()) {
            (Some(rec), Some(root)) => read_face_set(&root.join(FACES)).ok().map(|f| (rec, f)),
            _ => None,
        };
        let faces = match reloaded {
            Some((rec, faces)) => {
                info!("reusing the face set from a previous run");
                out.keep_stage("faces", rec);
                reused.push("faces".into());
                faces
            }
            None => {
                let faces = build_faces(&nodes, cfg)?;
                let mut bytes = Vec::new();
                write_face_set(&faces, &mut bytes).map_err(|e| PipelineError::Data(e.to_string()))?;
                out.record_stage("faces", &key, vec![(FACES.into(), bytes)])?;
                faces
            }
        };
        (merge_adjacent(&faces), Some(faces.faces.len()))
    };
    if all_clusters.is_empty() {
        return Err(PipelineError::Data("the street network produced no clusters".into()));
    }

    let areas = areas_of(&all_clusters);
    let hierarchy = head_tail_breaks(&areas, cfg.head_limit, cfg.tie_rule)?;
    if let Some(l) = cfg.level_override {
        if l >= hierarchy.len() {
            return Err(PipelineError::Config(format!("level_override {l} is out of range; the hierarchy has {} levels", hierarchy.len())));
        }
    }
    let mut levels = Vec::with_capacity(hierarchy.len());
    let mut selections = Vec::with_capacity(hierarchy.len());
    let mut rank_series = Vec::new();
    for level in 0..hierarchy.len() {
        let selected = threshold_clusters(&all_clusters, &hierarchy, level)?;
        let sel_areas = areas_of(&selected);
        let a = assess(&sel_areas, cfg.min_clusters, cfg.n_bootstrap, cfg.seed);
        info!("level {level}: {} clusters, plausible = {}", sel_areas.len(), a.plausible);
        rank_series.push((format!("level {level}"), rank_size(&sel_areas)));
        levels.push(LevelReport {
            level,
            threshold_km2: hierarchy.levels[level].mean,
            n_clusters: sel_areas.len(),
            total_area_km2: total_of(&sel_areas),
            fit: a.fit,
            plausible: a.plausible,
            note: a.note,
        });
        selections.push(selected);
    }

    out.write("headtail.csv", &hierarchy_csv(&hierarchy)?)?;
    out.write("levels.csv", &levels_csv(&levels)?)?;
    out.write("clusters_all.geojson", &geojson_bytes(&all_clusters)?)?;
    out.write("clusters_all.csv", &clusters_csv(&all_clusters)?)?;
    let svg_series: Vec<(&str, &[(usize, f64)])> = rank_series.iter().map(|(n, s)| (n.as_str(), s.as_slice())).collect();
    out.write("rank_size.svg", rank_size_svg(&svg_series).as_bytes())?;

    let chosen = cfg.level_override.or_else(|| {
        levels
            .iter()
            .filter(|l| l.plausible && l.n_clusters >= cfg.min_clusters)
            .filter_map(|l| Some((l.level, l.fit.as_ref()?.p_value?)))
            .fold(None, |best: Option<(usize, f64)>, (l, p)| match best {
                Some((_, bp)) if bp >= p => best,
                _ => Some((l, p)),
            })
            .map(|(l, _)| l)
    });
    let interpretations = json!({
        "selection_rule": if cfg.level_override.is_some() {
            "override".to_string()
        } else {
            format!("highest p among plausible levels with at least {} clusters", cfg.min_clusters)
        },
        "snap_tol": snap_tol,
        "mode": if cfg.dual_mode { "delaunay_dual" } else { "short_voronoi_edges" },
    });
    let seeds = json!({ "bootstrap": cfg.seed });
    let Some(chosen_level) = chosen else {
        out.finish("streets", cfg, seeds, interpretations)?;
        return Err(PipelineError::NoPlausibleLevel { levels });
    };

    let clusters = selections.swap_remove(chosen_level);
    let sel_areas = areas_of(&clusters);
    out.write("clusters.geojson", &geojson_bytes(&clusters)?)?;
    out.write("clusters.csv", &clusters_csv(&clusters)?)?;
    out.write("rank_size.csv", &rank_size_csv(&sel_areas)?)?;
    out.write_json("fit.json", &levels[chosen_level].fit)?;

    let total = total_of(&sel_areas);
    let mut summary = SummaryReport {
        street_total_area_km2: Some(total),
        street_total_area_pct: cfg.region_area_km2.map(|r| 100.0 * total / r),
        street_segments: Some(segments.len()),
        street_nodes: Some(nodes.len()),
        street_polygons: n_faces,
        largest_cluster: largest(&clusters),
        region_area_km2: cfg.region_area_km2,
        ..SummaryReport::default()
    };
    if let (Some(reference), Some(region)) = (&cfg.reference_urban, cfg.region_area_km2) {
        let report = overlay_stats(&clusters, &read_polygons(reference)?, region, cfg.km2_per_sq_unit)?;
        summary.reference_urban_area_km2 = Some(report.total_area_b);
        summary.reference_urban_area_pct = Some(report.pct_of_region_b);
        out.write_json("overlay.json", &report)?;
    }
    out.write_json(
        "selection.json",
        &json!({ "chosen_level": chosen_level, "threshold_km2": hierarchy.levels[chosen_level].mean, "levels": levels }),
    )?;
    out.write_json(SUMMARY_FILE, &summary)?;
    out.finish("streets", cfg, seeds, interpretations)?;

    Ok(StreetRunOutput {
        n_segments: segments.len(),
        n_nodes: nodes.len(),
        n_faces,
        all_clusters,
        hierarchy,
        levels,
        chosen_level,
        clusters,
        summary,
        reused_stages: reused,
    })
}

fn build_faces(nodes: &[crate::streetnet::StreetNode], cfg: &StreetRunConfig) -> Result<FaceSet, PipelineError> {
    let graph = build_voronoi(nodes, cfg.clip_margin)?;
    let short = select_short_edges(&graph)?;
    let edges: Vec<(usize, usize)> = short.edges.iter().map(|&i| (graph.edges[i].a, graph.edges[i].b)).collect();
    Ok(polygonize(&graph.vertices, &edges, cfg.km2_per_sq_unit))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifyConfig {
    /// CSV file with a header row.
    pub input: PathBuf,
    /// Column to read; the first column when absent.
    #[serde(default)]
    pub column: Option<String>,
    #[serde(default = "default_head_limit")]
    pub head_limit: f64,
    #[serde(default)]
    pub tie_rule: TieRule,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig for ClassifyConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.input);
        resolve_opt(base, &mut self.out_dir);
    }

    fn validate(&self) -> Result<(), PipelineError> {
        check_head_limit(self.head_limit)
    }
}

/// Head/tail breaks on one column of a CSV file; writes `headtail.csv`.
pub fn run_classify(cfg: &ClassifyConfig) -> Result<HeadTailHierarchy, PipelineError> {
    cfg.validate()?;
    let mut out = Outputs::open(cfg.out_dir.as_deref(), false)?;
    let values = read_values(&cfg.input, cfg.column.as_deref())?;
    let h = head_tail_breaks(&values, cfg.head_limit, cfg.tie_rule)?;
    out.write("headtail.csv", &hierarchy_csv(&h)?)?;
    out.write_json("headtail.json", &h)?;
    out.finish("headtail", cfg, Value::Null, Value::Null)?;
    Ok(h)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerLawConfig {
    pub input: PathBuf,
    #[serde(default)]
    pub column: Option<String>,
    /// Fixes the lower cutoff instead of choosing it by KS minimisation.
    #[serde(default)]
    pub x_min: Option<f64>,
    #[serde(default = "default_n_bootstrap")]
    pub n_bootstrap: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig for PowerLawConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.input);
        resolve_opt(base, &mut self.out_dir);
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if let Some(x) = self.x_min {
            if !(x > 0.0 && x.is_finite()) {
                return Err(PipelineError::Config(format!("x_min must be positive, got {x}")));
            }
        }
        check_bootstrap(self.n_bootstrap)
    }
}

/// Power-law fit and bootstrap test on one CSV column; writes `fit.json`,
/// `rank_size.csv` and `rank_size.svg`.
pub fn run_powerlaw(cfg: &PowerLawConfig) -> Result<FitReport, PipelineError> {
    cfg.validate()?;
    let mut out = Outputs::open(cfg.out_dir.as_deref(), false)?;
    let values = read_values(&cfg.input, cfg.column.as_deref())?;
    let scaling = |e: ScalingError| PipelineError::Data(e.to_string());
    let (fit, gof) = match cfg.x_min {
        Some(x) => {
            let fit = fit_power_law_at(&values, x).map_err(scaling)?;
            let gof = goodness_of_fit_fixed_xmin(&fit, &values, cfg.n_bootstrap, cfg.seed).map_err(scaling)?;
            (fit, gof)
        }
        None => {
            let fit = fit_power_law(&values).map_err(scaling)?;
            let gof = goodness_of_fit(&fit, &values, cfg.n_bootstrap, cfg.seed).map_err(scaling)?;
            (fit, gof)
        }
    };
    let report = FitReport::new(&fit, Some(&gof));
    let ranks = rank_size(&values);
    out.write_json("fit.json", &json!({ "fit": report, "plausible": gof.plausible }))?;
    out.write("rank_size.csv", &rank_size_csv(&values)?)?;
    out.write("rank_size.svg", rank_size_svg(&[("sizes", &ranks)]).as_bytes())?;
    out.finish("powerlaw", cfg, json!({ "bootstrap": cfg.seed }), Value::Null)?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlayConfig {
    /// Cluster GeoJSON as written by the pipelines.
    pub clusters: PathBuf,
    /// Reference urban polygons (GeoJSON).
    pub reference: PathBuf,
    pub region_area_km2: f64,
    #[serde(default = "default_km2_per_sq_unit")]
    pub km2_per_sq_unit: f64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

impl RunConfig for OverlayConfig {
    fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.clusters);
        resolve(base, &mut self.reference);
        resolve_opt(base, &mut self.out_dir);
    }

    fn validate(&self) -> Result<(), PipelineError> {
        if !(self.region_area_km2 > 0.0 && self.region_area_km2.is_finite()) {
            return Err(PipelineError::Config(format!("region_area_km2 must be positive, got {}", self.region_area_km2)));
        }
        if !(self.km2_per_sq_unit > 0.0 && self.km2_per_sq_unit.is_finite()) {
            return Err(PipelineError::Config("km2_per_sq_unit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayOutput {
    pub report: OverlayReport,
    pub largest_cluster: Option<LargestCluster>,
    /// Largest cluster area over total cluster area.
    pub concentration: Option<f64>,
}

/// Overlay of a cluster file with reference polygons; writes `overlay.json`.
pub fn run_overlay(cfg: &OverlayConfig) -> Result<OverlayOutput, PipelineError> {
    cfg.validate()?;
    let mut out = Outputs::open(cfg.out_dir.as_deref(), false)?;
    let clusters = read_clusters(&cfg.clusters, cfg.km2_per_sq_unit)?;
    let reference = read_polygons(&cfg.reference)?;
    let report = overlay_stats(&clusters, &reference, cfg.region_area_km2, cfg.km2_per_sq_unit)?;
    let result = OverlayOutput { report, largest_cluster: largest(&clusters), concentration: concentration(&clusters).ok() };
    out.write_json("overlay.json", &result)?;
    out.finish("overlay", cfg, Value::Null, Value::Null)?;
    Ok(result)
}
