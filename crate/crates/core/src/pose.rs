//! COCO-17 pose skeletons: parsing, OpenPose-style rasterization and
//! Object Keypoint Similarity.
//!
//! Coordinates are canvas pixels with the origin at the top-left corner.
//! Metrics always use full-precision coordinates; rasterization rounds to
//! the nearest pixel.

use std::collections::BTreeMap;
use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, Rgb, RgbImage};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const NUM_KEYPOINTS: usize = 17;

pub const KEYPOINT_NAMES: [&str; NUM_KEYPOINTS] = [
    "nose",
    "left_eye",
    "right_eye",
    "left_ear",
    "right_ear",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
    "left_hip",
    "right_hip",
    "left_knee",
    "right_knee",
    "left_ankle",
    "right_ankle",
];

/// Per-keypoint sigmas from the COCO keypoint evaluation. The OKS falloff
/// constant is `k = 2 * sigma`.
pub const COCO_SIGMAS: [f64; NUM_KEYPOINTS] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// The 19 COCO skeleton edges, 0-based keypoint indices, in the order the
/// COCO person category lists them.
pub const SKELETON_EDGES: [(usize, usize); 19] = [
    (15, 13),
    (13, 11),
    (16, 14),
    (14, 12),
    (11, 12),
    (5, 11),
    (6, 12),
    (5, 6),
    (5, 7),
    (6, 8),
    (7, 9),
    (8, 10),
    (1, 2),
    (0, 1),
    (0, 2),
    (1, 3),
    (2, 4),
    (3, 5),
    (4, 6),
];

#[derive(Debug, Error)]
pub enum PoseError {
    #[error("malformed COCO document: {0}")]
    Parse(String),
    #[error("annotation {entry}: {reason}")]
    Validation { entry: String, reason: String },
    #[error("invalid pose map: {0}")]
    InvalidPoseMap(String),
    #[error("canvas must be non-empty, got {width}x{height}")]
    EmptyCanvas { width: u32, height: u32 },
    #[error("OKS undefined: ground truth has no labeled keypoints")]
    UndefinedMetric,
    #[error("OKS requires a positive ground-truth area, got {0}")]
    NonPositiveArea(f64),
    #[error("raster style needs {expected} limb colors, got {got}")]
    Palette { expected: usize, got: usize },
    #[error("image encoding failed: {0}")]
    Image(#[from] image::ImageError),
}

/// COCO visibility flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(try_from = "u8", into = "u8")]
pub enum Visibility {
    #[default]
    Unlabeled = 0,
    Occluded = 1,
    Visible = 2,
}

impl Visibility {
    pub fn is_labeled(self) -> bool {
        self != Visibility::Unlabeled
    }
}

impl TryFrom<u8> for Visibility {
    type Error = String;

    fn try_from(v: u8) -> Result<Self, Self::Error> {
        match v {
            0 => Ok(Visibility::Unlabeled),
            1 => Ok(Visibility::Occluded),
            2 => Ok(Visibility::Visible),
            other => Err(format!("visibility flag must be 0, 1 or 2, got {other}")),
        }
    }
}

impl From<Visibility> for u8 {
    fn from(v: Visibility) -> u8 {
        v as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub v: Visibility,
}

impl Keypoint {
    pub fn new(x: f64, y: f64, v: Visibility) -> Self {
        Self { x, y, v }
    }

    pub fn visible(x: f64, y: f64) -> Self {
        Self::new(x, y, Visibility::Visible)
    }
}

/// One person. `area` is the instance scale `s^2` used by OKS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseSkeleton {
    pub keypoints: [Keypoint; NUM_KEYPOINTS],
    pub area: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bbox: Option<[f64; 4]>,
}

impl PoseSkeleton {
    pub fn new(keypoints: [Keypoint; NUM_KEYPOINTS], area: f64) -> Self {
        Self {
            keypoints,
            area,
            bbox: None,
        }
    }

    /// A skeleton with every keypoint unlabeled.
    pub fn empty(area: f64) -> Self {
        Self::new([Keypoint::default(); NUM_KEYPOINTS], area)
    }

    pub fn num_labeled(&self) -> usize {
        self.keypoints.iter().filter(|k| k.v.is_labeled()).count()
    }

    /// Builds a skeleton from a flat COCO `[x1, y1, v1, x2, ...]` array.
    pub fn from_coco_triplets(values: &[f64], area: f64) -> Result<Self, String> {
        if values.len() != NUM_KEYPOINTS * 3 {
            return Err(format!(
                "keypoint array must have {} values, got {}",
                NUM_KEYPOINTS * 3,
                values.len()
            ));
        }
        let mut keypoints = [Keypoint::default(); NUM_KEYPOINTS];
        for (kp, chunk) in keypoints.iter_mut().zip(values.chunks_exact(3)) {
            let flag = chunk[2];
            if flag.fract() != 0.0 || !(0.0..=2.0).contains(&flag) {
                return Err(format!("visibility flag must be 0, 1 or 2, got {flag}"));
            }
            *kp = Keypoint::new(chunk[0], chunk[1], Visibility::try_from(flag as u8)?);
        }
        Ok(Self::new(keypoints, area))
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        let mut out = self.clone();
        for kp in out.keypoints.iter_mut() {
            kp.x += dx;
            kp.y += dy;
        }
        out
    }
}

/// A multi-person structural condition on a fixed canvas.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseMap {
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub people: Vec<PoseSkeleton>,
}

impl PoseMap {
    pub fn new(width: u32, height: u32, people: Vec<PoseSkeleton>) -> Result<Self, PoseError> {
        let map = Self {
            width,
            height,
            people,
        };
        map.validate()?;
        Ok(map)
    }

    /// Checks that every visible keypoint lies on the canvas.
    pub fn validate(&self) -> Result<(), PoseError> {
        for (p, person) in self.people.iter().enumerate() {
            for (k, kp) in person.keypoints.iter().enumerate() {
                if kp.v != Visibility::Visible {
                    continue;
                }
                let inside = kp.x >= 0.0
                    && kp.y >= 0.0
                    && kp.x < self.width as f64
                    && kp.y < self.height as f64;
                if !inside {
                    return Err(PoseError::InvalidPoseMap(format!(
                        "person {p} keypoint {} at ({}, {}) outside {}x{} canvas",
                        KEYPOINT_NAMES[k], kp.x, kp.y, self.width, self.height
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, PoseError> {
        let map: PoseMap =
            serde_json::from_str(text).map_err(|e| PoseError::Parse(e.to_string()))?;
        map.validate()?;
        Ok(map)
    }
}

// ---------------------------------------------------------------------------
// COCO parsing

/// Image record from the `images` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CocoImage {
    pub id: u64,
    #[serde(default)]
    pub file_name: String,
    pub width: u32,
    pub height: u32,
}

/// A parsed COCO keypoints document.
#[derive(Debug, Clone, Default)]
pub struct CocoKeypoints {
    pub images: BTreeMap<u64, CocoImage>,
    /// Labeled persons grouped by image id, in annotation order.
    pub persons: BTreeMap<u64, Vec<PoseSkeleton>>,
}

#[derive(Deserialize)]
struct RawDocument {
    #[serde(default)]
    images: Vec<serde_json::Value>,
    annotations: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct RawAnnotation {
    image_id: u64,
    keypoints: Vec<f64>,
    #[serde(default)]
    area: f64,
    #[serde(default)]
    bbox: Option<[f64; 4]>,
}

impl CocoKeypoints {
    pub fn parse(document: &str) -> Result<Self, PoseError> {
        let raw: RawDocument =
            serde_json::from_str(document).map_err(|e| PoseError::Parse(e.to_string()))?;

        let mut images = BTreeMap::new();
        for (idx, value) in raw.images.into_iter().enumerate() {
            let image: CocoImage = serde_json::from_value(value)
                .map_err(|e| PoseError::Parse(format!("images[{idx}]: {e}")))?;
            images.insert(image.id, image);
        }

        let mut persons: BTreeMap<u64, Vec<PoseSkeleton>> = BTreeMap::new();
        for (idx, value) in raw.annotations.into_iter().enumerate() {
            let entry = match value.get("id").and_then(|v| v.as_u64()) {
                Some(id) => format!("annotations[{idx}] (id {id})"),
                None => format!("annotations[{idx}]"),
            };
            let ann: RawAnnotation = serde_json::from_value(value)
                .map_err(|e| PoseError::Parse(format!("{entry}: {e}")))?;
            let mut skeleton =
                PoseSkeleton::from_coco_triplets(&ann.keypoints, ann.area).map_err(|reason| {
                    PoseError::Validation {
                        entry: entry.clone(),
                        reason,
                    }
                })?;
            // num_keypoints is recomputed from the flags rather than trusted.
            if skeleton.num_labeled() == 0 {
                continue;
            }
            skeleton.bbox = ann.bbox;
            persons.entry(ann.image_id).or_default().push(skeleton);
        }
        Ok(Self { images, persons })
    }
}

/// Groups every labeled person annotation under its image id.
pub fn parse_coco_keypoints(document: &str) -> Result<BTreeMap<u64, Vec<PoseSkeleton>>, PoseError> {
    Ok(CocoKeypoints::parse(document)?.persons)
}

// ---------------------------------------------------------------------------
// Rasterization

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RasterStyle {
    pub limb_palette: Vec<[u8; 3]>,
    pub joint_color: [u8; 3],
    pub joint_radius: u32,
    pub limb_thickness: u32,
    pub background: [u8; 3],
}

impl Default for RasterStyle {
    fn default() -> Self {
        Self {
            limb_palette: vec![
                [255, 0, 0],
                [255, 85, 0],
                [255, 170, 0],
                [255, 255, 0],
                [170, 255, 0],
                [85, 255, 0],
                [0, 255, 0],
                [0, 255, 85],
                [0, 255, 170],
                [0, 255, 255],
                [0, 170, 255],
                [0, 85, 255],
                [0, 0, 255],
                [85, 0, 255],
                [170, 0, 255],
                [255, 0, 255],
                [255, 0, 170],
                [255, 0, 85],
                [255, 85, 170],
            ],
            joint_color: [255, 255, 255],
            joint_radius: 4,
            limb_thickness: 4,
            background: [0, 0, 0],
        }
    }
}

/// One drawing operation of a rasterized pose map, in paint order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Primitive {
    Limb {
        person: usize,
        edge: usize,
        from: (i64, i64),
        to: (i64, i64),
    },
    Joint {
        person: usize,
        keypoint: usize,
        center: (i64, i64),
    },
}

fn pixel(kp: &Keypoint) -> (i64, i64) {
    (kp.x.round() as i64, kp.y.round() as i64)
}

/// Lists what [`rasterize`] will paint. Only `Visible` keypoints are drawn;
/// a limb needs both endpoints visible. Each person's limbs precede its joints.
pub fn render_plan(pose_map: &PoseMap) -> Vec<Primitive> {
    let mut plan = Vec::new();
    for (p, person) in pose_map.people.iter().enumerate() {
        let kps = &person.keypoints;
        for (edge, &(a, b)) in SKELETON_EDGES.iter().enumerate() {
            if kps[a].v == Visibility::Visible && kps[b].v == Visibility::Visible {
                plan.push(Primitive::Limb {
                    person: p,
                    edge,
                    from: pixel(&kps[a]),
                    to: pixel(&kps[b]),
                });
            }
        }
        for (k, kp) in kps.iter().enumerate() {
            if kp.v == Visibility::Visible {
                plan.push(Primitive::Joint {
                    person: p,
                    keypoint: k,
                    center: pixel(kp),
                });
            }
        }
    }
    plan
}

fn clamp_range(lo: f64, hi: f64, limit: u32) -> Option<(u32, u32)> {
    let lo = lo.floor().max(0.0);
    let hi = hi.ceil().min(limit as f64 - 1.0);
    (lo <= hi).then_some((lo as u32, hi as u32))
}

fn paint_disc(img: &mut RgbImage, center: (i64, i64), radius: f64, color: Rgb<u8>) {
    let (cx, cy) = (center.0 as f64, center.1 as f64);
    let (w, h) = img.dimensions();
    let (Some((x0, x1)), Some((y0, y1))) = (
        clamp_range(cx - radius, cx + radius, w),
        clamp_range(cy - radius, cy + radius, h),
    ) else {
        return;
    };
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            if dx * dx + dy * dy <= radius * radius {
                img.put_pixel(x, y, color);
            }
        }
    }
}

fn paint_segment(
    img: &mut RgbImage,
    from: (i64, i64),
    to: (i64, i64),
    thickness: f64,
    color: Rgb<u8>,
) {
    let half = (thickness / 2.0).max(0.5);
    let (ax, ay) = (from.0 as f64, from.1 as f64);
    let (bx, by) = (to.0 as f64, to.1 as f64);
    let (w, h) = img.dimensions();
    let (Some((x0, x1)), Some((y0, y1))) = (
        clamp_range(ax.min(bx) - half, ax.max(bx) + half, w),
        clamp_range(ay.min(by) - half, ay.max(by) + half, h),
    ) else {
        return;
    };
    let (ex, ey) = (bx - ax, by - ay);
    let len2 = ex * ex + ey * ey;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (px, py) = (x as f64 - ax, y as f64 - ay);
            let t = if len2 > 0.0 {
                ((px * ex + py * ey) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (dx, dy) = (px - t * ex, py - t * ey);
            if dx * dx + dy * dy <= half * half {
                img.put_pixel(x, y, color);
            }
        }
    }
}

/// Draws the pose map as an OpenPose-style skeleton image. Later people are
/// painted over earlier ones.
pub fn rasterize(pose_map: &PoseMap, style: &RasterStyle) -> Result<RgbImage, PoseError> {
    if pose_map.width == 0 || pose_map.height == 0 {
        return Err(PoseError::EmptyCanvas {
            width: pose_map.width,
            height: pose_map.height,
        });
    }
    if style.limb_palette.len() != SKELETON_EDGES.len() {
        return Err(PoseError::Palette {
            expected: SKELETON_EDGES.len(),
            got: style.limb_palette.len(),
        });
    }
    let mut img = RgbImage::from_pixel(pose_map.width, pose_map.height, Rgb(style.background));
    for primitive in render_plan(pose_map) {
        match primitive {
            Primitive::Limb { edge, from, to, .. } => paint_segment(
                &mut img,
                from,
                to,
                style.limb_thickness as f64,
                Rgb(style.limb_palette[edge]),
            ),
            Primitive::Joint { center, .. } => paint_disc(
                &mut img,
                center,
                style.joint_radius as f64,
                Rgb(style.joint_color),
            ),
        }
    }
    Ok(img)
}

pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>, PoseError> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

pub fn write_png(img: &RgbImage, path: impl AsRef<Path>) -> Result<(), PoseError> {
    img.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Metrics

/// COCO Object Keypoint Similarity of `pred` against `gt`.
///
/// Averages `exp(-d^2 / (2 * area * k^2))` over the keypoints labeled in `gt`.
/// A prediction that leaves such a keypoint unlabeled scores 0 for it.
pub fn oks(pred: &PoseSkeleton, gt: &PoseSkeleton) -> Result<f64, PoseError> {
    let labeled = gt.num_labeled();
    if labeled == 0 {
        return Err(PoseError::UndefinedMetric);
    }
    if !(gt.area > 0.0) {
        return Err(PoseError::NonPositiveArea(gt.area));
    }
    let mut total = 0.0;
    for (i, (p, g)) in pred.keypoints.iter().zip(gt.keypoints.iter()).enumerate() {
        if !g.v.is_labeled() || !p.v.is_labeled() {
            continue;
        }
        let k = 2.0 * COCO_SIGMAS[i];
        let (dx, dy) = (p.x - g.x, p.y - g.y);
        total += (-(dx * dx + dy * dy) / (2.0 * gt.area * k * k)).exp();
    }
    Ok(total / labeled as f64)
}

/// Greedy one-to-one matching: the highest-OKS unmatched pair is taken
/// first. Returns the mean over all ground truths; unmatched ones score 0.
pub fn match_and_score(preds: &[PoseSkeleton], gts: &[PoseSkeleton]) -> Result<f64, PoseError> {
    if gts.is_empty() {
        return Err(PoseError::UndefinedMetric);
    }
    // Validate every gt even when there are no predictions.
    for gt in gts {
        oks(gt, gt)?;
    }
    let mut pairs = Vec::with_capacity(preds.len() * gts.len());
    for (g, gt) in gts.iter().enumerate() {
        for (p, pred) in preds.iter().enumerate() {
            pairs.push((oks(pred, gt)?, g, p));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut gt_used = vec![false; gts.len()];
    let mut pred_used = vec![false; preds.len()];
    let mut total = 0.0;
    let mut matched = 0;
    for (score, g, p) in pairs {
        if matched == preds.len().min(gts.len()) {
            break;
        }
        if gt_used[g] || pred_used[p] {
            continue;
        }
        gt_used[g] = true;
        pred_used[p] = true;
        total += score;
        matched += 1;
    }
    Ok(total / gts.len() as f64)
}
