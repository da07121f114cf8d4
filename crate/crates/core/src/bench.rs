//! COCO-derived multi-person benchmark and candidate evaluation.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use image::RgbImage;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::pose::{match_and_score, CocoKeypoints, PoseError, PoseMap, PoseSkeleton};
use crate::retrieval::{blocking_client, post_json, ClientError};

pub const DEFAULT_MAX_SUBJECTS: usize = 3;

/// Per-item flag for a benchmark item with no candidate pose map.
pub const FLAG_MISSING_CANDIDATE: &str = "missing_candidate";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Pose(#[from] PoseError),
    #[error("no image qualifies for the benchmark")]
    NoQualifyingImages,
    #[error("max_subjects must be at least 1")]
    MaxSubjects,
    #[error("{path}: {reason}")]
    Io { path: String, reason: String },
    #[error("malformed report: {0}")]
    Report(String),
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> BenchError {
    BenchError::Io {
        path: path.display().to_string(),
        reason: e.to_string(),
    }
}

/// A person's bounding box in the source image, plus the cropped pixels
/// once they have been loaded or written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCrop {
    /// `[x, y, width, height]`
    pub bbox: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<String>,
    #[serde(skip)]
    pub pixels: Option<RgbImage>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkItem {
    pub image_id: u64,
    pub prompt: String,
    pub identity_crops: Vec<IdentityCrop>,
    pub gt_pose_map: PoseMap,
    pub subject_count: usize,
}

/// First caption per image from a COCO captions document.
pub fn parse_coco_captions(document: &str) -> Result<BTreeMap<u64, String>, PoseError> {
    #[derive(Deserialize)]
    struct Doc {
        annotations: Vec<Caption>,
    }
    #[derive(Deserialize)]
    struct Caption {
        image_id: u64,
        caption: String,
    }
    let doc: Doc = serde_json::from_str(document).map_err(|e| PoseError::Parse(e.to_string()))?;
    let mut out = BTreeMap::new();
    for c in doc.annotations {
        out.entry(c.image_id)
            .or_insert_with(|| c.caption.trim().to_string());
    }
    Ok(out)
}

pub fn placeholder_prompt(subjects: usize) -> String {
    if subjects == 1 {
        "1 person: <action unknown>".to_string()
    } else {
        format!("{subjects} people: <action unknown>")
    }
}

fn bbox_of(person: &PoseSkeleton) -> [f64; 4] {
    if let Some(b) = person.bbox {
        return b;
    }
    // Fall back to the extent of the labeled keypoints.
    let labeled = person.keypoints.iter().filter(|k| k.v.is_labeled());
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for k in labeled {
        x0 = x0.min(k.x);
        y0 = y0.min(k.y);
        x1 = x1.max(k.x);
        y1 = y1.max(k.y);
    }
    [x0, y0, x1 - x0, y1 - y0]
}

/// Crops `bbox` out of `img`, clamped to the image bounds.
pub fn crop_region(img: &RgbImage, bbox: [f64; 4]) -> RgbImage {
    let (w, h) = img.dimensions();
    let x0 = (bbox[0].floor().max(0.0) as u32).min(w.saturating_sub(1));
    let y0 = (bbox[1].floor().max(0.0) as u32).min(h.saturating_sub(1));
    let x1 = ((bbox[0] + bbox[2]).ceil().max(0.0) as u32).clamp(x0 + 1, w.max(1));
    let y1 = ((bbox[1] + bbox[3]).ceil().max(0.0) as u32).clamp(y0 + 1, h.max(1));
    image::imageops::crop_imm(img, x0, y0, x1 - x0, y1 - y0).to_image()
}

/// Selects images with `1..=max_subjects` labeled persons in ascending id
/// order, up to `limit` items. When `images_root` is given the identity
/// crops are cut from the source images; items whose image cannot be read
/// are skipped with a warning.
pub fn build_benchmark(
    coco: &CocoKeypoints,
    images_root: Option<&Path>,
    limit: usize,
    max_subjects: usize,
    captions: Option<&BTreeMap<u64, String>>,
) -> Result<Vec<BenchmarkItem>, BenchError> {
    if max_subjects == 0 {
        return Err(BenchError::MaxSubjects);
    }
    let mut items = Vec::new();
    for (&image_id, image) in &coco.images {
        if items.len() >= limit {
            break;
        }
        let people = match coco.persons.get(&image_id) {
            Some(p) if !p.is_empty() && p.len() <= max_subjects => p,
            _ => continue,
        };
        let gt_pose_map = match PoseMap::new(image.width, image.height, people.clone()) {
            Ok(m) => m,
            Err(e) => {
                log::warn!("skipping image {image_id}: {e}");
                continue;
            }
        };
        let mut crops: Vec<IdentityCrop> = people
            .iter()
            .map(|p| IdentityCrop {
                bbox: bbox_of(p),
                path: None,
                pixels: None,
            })
            .collect();
        if let Some(root) = images_root {
            let path = root.join(&image.file_name);
            let source = match image::open(&path) {
                Ok(img) => img.to_rgb8(),
                Err(e) => {
                    log::warn!("skipping image {image_id}: {}: {e}", path.display());
                    continue;
                }
            };
            for crop in &mut crops {
                crop.pixels = Some(crop_region(&source, crop.bbox));
            }
        }
        let prompt = captions
            .and_then(|c| c.get(&image_id))
            .filter(|c| !c.is_empty())
            .cloned()
            .unwrap_or_else(|| placeholder_prompt(people.len()));
        items.push(BenchmarkItem {
            image_id,
            prompt,
            identity_crops: crops,
            gt_pose_map,
            subject_count: people.len(),
        });
    }
    if items.is_empty() {
        return Err(BenchError::NoQualifyingImages);
    }
    Ok(items)
}

/// Writes `manifest.json`, `poses/<id>.json` and any loaded crops as
/// `crops/<id>_<n>.png` under `dir`. Crop paths in the manifest are
/// relative to `dir`.
pub fn save_benchmark(items: &mut [BenchmarkItem], dir: &Path) -> Result<(), BenchError> {
    let poses = dir.join("poses");
    let crops = dir.join("crops");
    fs::create_dir_all(&poses).map_err(|e| io_err(&poses, e))?;
    for item in items.iter_mut() {
        let pose_path = poses.join(format!("{}.json", item.image_id));
        let body = serde_json::to_string_pretty(&item.gt_pose_map).expect("pose map serializes");
        fs::write(&pose_path, body).map_err(|e| io_err(&pose_path, e))?;
        for (n, crop) in item.identity_crops.iter_mut().enumerate() {
            if let Some(px) = &crop.pixels {
                fs::create_dir_all(&crops).map_err(|e| io_err(&crops, e))?;
                let name = format!("{}_{n}.png", item.image_id);
                let path = crops.join(&name);
                px.save(&path).map_err(|e| io_err(&path, e))?;
                crop.path = Some(format!("crops/{name}"));
            }
        }
    }
    let manifest = dir.join("manifest.json");
    let body = serde_json::to_string_pretty(&items).expect("benchmark serializes");
    fs::write(&manifest, body).map_err(|e| io_err(&manifest, e))
}

pub fn load_benchmark(dir: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    let manifest = dir.join("manifest.json");
    let text = fs::read_to_string(&manifest).map_err(|e| io_err(&manifest, e))?;
    let items: Vec<BenchmarkItem> =
        serde_json::from_str(&text).map_err(|e| io_err(&manifest, e))?;
    for item in &items {
        item.gt_pose_map.validate()?;
    }
    Ok(items)
}

// ---------------------------------------------------------------------------
// Evaluation

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginRequest {
    pub prompt: String,
    pub refs: Vec<String>,
    pub candidate: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginResponse {
    pub name: String,
    pub value: f64,
}

/// An external per-item metric.
pub trait MetricPlugin: Send + Sync {
    fn name(&self) -> &str;
    fn score(&self, request: &PluginRequest) -> Result<f64, ClientError>;
}

/// `POST {base}/score` per item.
pub struct HttpMetricPlugin {
    name: String,
    url: String,
    client: reqwest::blocking::Client,
}

impl HttpMetricPlugin {
    pub fn new(name: &str, base_url: &str, timeout: Duration) -> Result<Self, ClientError> {
        Ok(Self {
            name: name.to_string(),
            url: format!("{}/score", base_url.trim_end_matches('/')),
            client: blocking_client(timeout)?,
        })
    }
}

impl MetricPlugin for HttpMetricPlugin {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, request: &PluginRequest) -> Result<f64, ClientError> {
        let resp: PluginResponse = post_json(&self.client, &self.url, request)?;
        if resp.name != self.name {
            return Err(ClientError::Response {
                url: self.url.clone(),
                reason: format!("metric {:?}, expected {:?}", resp.name, self.name),
            });
        }
        if !resp.value.is_finite() {
            return Err(ClientError::Response {
                url: self.url.clone(),
                reason: "non-finite metric value".into(),
            });
        }
        Ok(resp.value)
    }
}

/// Predicted pose maps keyed by image id, plus optional artifact paths
/// (e.g. generated images) forwarded to plugins.
#[derive(Debug, Clone, Default)]
pub struct CandidateSet {
    pub method: String,
    pub poses: BTreeMap<u64, PoseMap>,
    pub artifacts: BTreeMap<u64, String>,
}

impl CandidateSet {
    /// Ground truth as its own candidate.
    pub fn from_ground_truth(benchmark: &[BenchmarkItem]) -> Self {
        Self {
            method: "ground_truth".into(),
            poses: benchmark
                .iter()
                .map(|i| (i.image_id, i.gt_pose_map.clone()))
                .collect(),
            artifacts: BTreeMap::new(),
        }
    }

    /// Reads `<image_id>.json` pose maps from a directory.
    pub fn from_dir(method: &str, dir: &Path) -> Result<Self, BenchError> {
        let mut poses = BTreeMap::new();
        let mut entries: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| io_err(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .collect();
        entries.sort();
        for path in entries {
            let Some(id) = path
                .file_stem()
                .and_then(|s| s.to_str())
                .and_then(|s| s.parse::<u64>().ok())
            else {
                continue;
            };
            if path.extension().and_then(|e| e.to_str()) != Some("json") {
                continue;
            }
            let text = fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
            poses.insert(id, PoseMap::from_json(&text)?);
        }
        Ok(Self {
            method: method.to_string(),
            poses,
            artifacts: BTreeMap::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub item_id: u64,
    pub oks: f64,
    /// Aligned with [`EvaluationReport::metrics`]; `None` when absent.
    pub metrics: Vec<Option<f64>>,
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub metrics: Vec<String>,
    pub rows: Vec<ReportRow>,
    pub mean_oks: f64,
    /// Mean of the present values per plugin metric.
    pub metric_means: Vec<Option<f64>>,
}

impl EvaluationReport {
    pub fn from_rows(method: String, metrics: Vec<String>, rows: Vec<ReportRow>) -> Self {
        let mean_oks = if rows.is_empty() {
            0.0
        } else {
            rows.iter().map(|r| r.oks).sum::<f64>() / rows.len() as f64
        };
        let metric_means = (0..metrics.len())
            .map(|m| {
                let present: Vec<f64> = rows.iter().filter_map(|r| r.metrics[m]).collect();
                (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
            })
            .collect();
        Self {
            method,
            metrics,
            rows,
            mean_oks,
            metric_means,
        }
    }
}

pub fn evaluate(
    benchmark: &[BenchmarkItem],
    candidates: &CandidateSet,
    plugins: &[Box<dyn MetricPlugin>],
) -> Result<EvaluationReport, BenchError> {
    let metrics: Vec<String> = plugins.iter().map(|p| p.name().to_string()).collect();
    let mut rows = Vec::with_capacity(benchmark.len());
    for item in benchmark {
        let mut flags = Vec::new();
        let mut values = vec![None; plugins.len()];
        let oks = match candidates.poses.get(&item.image_id) {
            None => {
                flags.push(FLAG_MISSING_CANDIDATE.to_string());
                0.0
            }
            Some(cand) => {
                let request = PluginRequest {
                    prompt: item.prompt.clone(),
                    refs: item
                        .identity_crops
                        .iter()
                        .filter_map(|c| c.path.clone())
                        .collect(),
                    candidate: candidates
                        .artifacts
                        .get(&item.image_id)
                        .cloned()
                        .unwrap_or_default(),
                };
                for (slot, plugin) in values.iter_mut().zip(plugins) {
                    match plugin.score(&request) {
                        Ok(v) => *slot = Some(v),
                        Err(e) => log::warn!(
                            "metric {} failed on item {}: {e}",
                            plugin.name(),
                            item.image_id
                        ),
                    }
                }
                match_and_score(&cand.people, &item.gt_pose_map.people)?
            }
        };
        rows.push(ReportRow {
            item_id: item.image_id,
            oks,
            metrics: values,
            flags,
        });
    }
    Ok(EvaluationReport::from_rows(
        candidates.method.clone(),
        metrics,
        rows,
    ))
}

// ---------------------------------------------------------------------------
// Report files

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(format!("unknown report format {other:?} (csv or json)")),
        }
    }
}

pub const FLAG_SEPARATOR: char = ';';

/// Columns: `item_id, oks, <plugin metrics...>, flags`. Absent metrics are
/// empty cells.
pub fn report_to_csv(report: &EvaluationReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["item_id".to_string(), "oks".to_string()];
    header.extend(report.metrics.iter().cloned());
    header.push("flags".into());
    w.write_record(&header).expect("in-memory write");
    for row in &report.rows {
        let mut rec = vec![row.item_id.to_string(), row.oks.to_string()];
        rec.extend(
            row.metrics
                .iter()
                .map(|m| m.map(|v| v.to_string()).unwrap_or_default()),
        );
        rec.push(row.flags.join(&FLAG_SEPARATOR.to_string()));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 output")
}

pub fn parse_report_csv(text: &str, method: &str) -> Result<EvaluationReport, BenchError> {
    let bad = |m: String| BenchError::Report(m);
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(str::to_string)
        .collect();
    let n = header.len();
    if n < 3 || header[0] != "item_id" || header[1] != "oks" || header[n - 1] != "flags" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let metrics = header[2..n - 1].to_vec();
    let num = |s: &str, line: usize| -> Result<f64, BenchError> {
        s.parse()
            .map_err(|_| BenchError::Report(format!("record {line}: bad number {s:?}")))
    };
    let mut rows = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        let item_id = rec[0]
            .parse()
            .map_err(|_| bad(format!("record {line}: bad item_id {:?}", &rec[0])))?;
        let oks = num(&rec[1], line)?;
        let values = (2..n - 1)
            .map(|c| {
                if rec[c].is_empty() {
                    Ok(None)
                } else {
                    num(&rec[c], line).map(Some)
                }
            })
            .collect::<Result<_, _>>()?;
        let flags = rec[n - 1]
            .split(FLAG_SEPARATOR)
            .filter(|f| !f.is_empty())
            .map(str::to_string)
            .collect();
        rows.push(ReportRow {
            item_id,
            oks,
            metrics: values,
            flags,
        });
    }
    Ok(EvaluationReport::from_rows(
        method.to_string(),
        metrics,
        rows,
    ))
}

pub fn emit_report(
    report: &EvaluationReport,
    path: &Path,
    format: ReportFormat,
) -> Result<(), BenchError> {
    let body = match format {
        ReportFormat::Csv => report_to_csv(report),
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
    };
    fs::write(path, body).map_err(|e| io_err(path, e))
}
