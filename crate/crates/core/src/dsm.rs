//! Text-embedding modulation adapter.
//!
//! Text rows pass through a trainable query projection and attend over
//! visual identity features; a zero-initialized output projection maps the
//! attended values back to the text width. The result is an additive offset
//! on the text embeddings, so a fresh adapter leaves them untouched.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::Path;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ASTRADSM";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const FEATURE_MAGIC: &[u8; 8] = b"ASTRAF32";

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Relative errors are measured against `max(|analytic|, |numeric|, floor)`.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum DsmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("need at least one layer, got {0}")]
    Layers(usize),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{path}: {reason}")]
    File { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DsmConfig {
    pub d_model: usize,
    pub d_visual: usize,
    pub d_attn: usize,
    pub heads: usize,
}

impl DsmConfig {
    pub fn validate(&self) -> Result<(), DsmError> {
        if self.d_model == 0 || self.d_visual == 0 || self.d_attn == 0 || self.heads == 0 {
            return Err(DsmError::Config(format!("zero dimension in {self:?}")));
        }
        if !self.d_attn.is_multiple_of(self.heads) {
            return Err(DsmError::Config(format!(
                "d_attn {} not divisible by {} heads",
                self.d_attn, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_attn / self.heads
    }
}

/// One cross-attention offset head.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmHead {
    pub config: DsmConfig,
    /// `d_model x d_attn`
    pub wq: Array2<f64>,
    /// `d_visual x d_attn`
    pub wk: Array2<f64>,
    /// `d_visual x d_attn`
    pub wv: Array2<f64>,
    /// `d_attn x d_model`, zero at initialization.
    pub wo: Array2<f64>,
}

fn xavier<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..a))
}

impl DsmHead {
    pub fn init<R: Rng + ?Sized>(config: DsmConfig, rng: &mut R) -> Result<Self, DsmError> {
        config.validate()?;
        Ok(Self {
            config,
            wq: xavier(rng, config.d_model, config.d_attn),
            wk: xavier(rng, config.d_visual, config.d_attn),
            wv: xavier(rng, config.d_visual, config.d_attn),
            wo: Array2::zeros((config.d_attn, config.d_model)),
        })
    }

    /// Like [`DsmHead::init`] but with a random output projection too, for
    /// gradient checks and tests that need a non-trivial offset.
    pub fn init_random<R: Rng + ?Sized>(config: DsmConfig, rng: &mut R) -> Result<Self, DsmError> {
        let mut head = Self::init(config, rng)?;
        head.wo = xavier(rng, config.d_attn, config.d_model);
        Ok(head)
    }

    fn tensors(&self) -> [(&'static str, &Array2<f64>); 4] {
        [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
        ]
    }

    fn check(&self, e_t: &Array2<f64>, f_v: &Array2<f64>) -> Result<(), DsmError> {
        let c = self.config;
        c.validate()?;
        let expect = [
            ("wq", (c.d_model, c.d_attn)),
            ("wk", (c.d_visual, c.d_attn)),
            ("wv", (c.d_visual, c.d_attn)),
            ("wo", (c.d_attn, c.d_model)),
        ];
        for ((name, w), (_, shape)) in self.tensors().iter().zip(expect) {
            if w.dim() != shape {
                return Err(DsmError::Shape(format!(
                    "{name} is {:?}, expected {shape:?}",
                    w.dim()
                )));
            }
        }
        if e_t.ncols() != c.d_model {
            return Err(DsmError::Shape(format!(
                "text embeddings have width {}, adapter expects {}",
                e_t.ncols(),
                c.d_model
            )));
        }
        if f_v.nrows() == 0 {
            return Err(DsmError::Shape("visual features have no rows".into()));
        }
        if f_v.ncols() != c.d_visual {
            return Err(DsmError::Shape(format!(
                "visual features have width {}, adapter expects {}",
                f_v.ncols(),
                c.d_visual
            )));
        }
        for (name, m) in [("text embeddings", e_t), ("visual features", f_v)] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DsmError::NonFinite(name.into()));
            }
        }
        Ok(())
    }
}

struct Cache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Per-head attention weights, each `L x M`.
    attn: Vec<Array2<f64>>,
    o: Array2<f64>,
}

fn softmax_rows(mut m: Array2<f64>) -> Array2<f64> {
    for mut row in m.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    m
}

fn forward_cached(
    e_t: &Array2<f64>,
    f_v: &Array2<f64>,
    head: &DsmHead,
) -> Result<(Array2<f64>, Cache), DsmError> {
    head.check(e_t, f_v)?;
    let dh = head.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let q = e_t.dot(&head.wq);
    let k = f_v.dot(&head.wk);
    let v = f_v.dot(&head.wv);
    let mut o = Array2::zeros((e_t.nrows(), head.config.d_attn));
    let mut attn = Vec::with_capacity(head.config.heads);
    for h in 0..head.config.heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let a = softmax_rows(q.slice(cols).dot(&k.slice(cols).t()) * scale);
        o.slice_mut(cols).assign(&a.dot(&v.slice(cols)));
        attn.push(a);
    }
    let out = o.dot(&head.wo);
    Ok((out, Cache { q, k, v, attn, o }))
}

/// Semantic offset `ΔE_t` (`L x d_model`).
pub fn dsm_forward(
    e_t: &Array2<f64>,
    f_v: &Array2<f64>,
    head: &DsmHead,
) -> Result<Array2<f64>, DsmError> {
    Ok(forward_cached(e_t, f_v, head)?.0)
}

/// `E'_t = E_t + ΔE_t`
pub fn modulate(e_t: &Array2<f64>, delta: &Array2<f64>) -> Result<Array2<f64>, DsmError> {
    if e_t.dim() != delta.dim() {
        return Err(DsmError::Shape(format!(
            "embeddings {:?} vs offset {:?}",
            e_t.dim(),
            delta.dim()
        )));
    }
    Ok(e_t + delta)
}

/// Gradients of a scalar loss with respect to every adapter input.
#[derive(Debug, Clone, PartialEq)]
pub struct DsmGrads {
    pub e_t: Array2<f64>,
    pub f_v: Array2<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
}

/// Backpropagates `grad_out = dLoss/dΔE_t` through the adapter.
pub fn dsm_backward(
    e_t: &Array2<f64>,
    f_v: &Array2<f64>,
    head: &DsmHead,
    grad_out: &Array2<f64>,
) -> Result<DsmGrads, DsmError> {
    let (out, cache) = forward_cached(e_t, f_v, head)?;
    if grad_out.dim() != out.dim() {
        return Err(DsmError::Shape(format!(
            "output gradient {:?} vs output {:?}",
            grad_out.dim(),
            out.dim()
        )));
    }
    let dh = head.config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();

    let d_wo = cache.o.t().dot(grad_out);
    let d_o = grad_out.dot(&head.wo.t());
    let mut d_q = Array2::zeros(cache.q.dim());
    let mut d_k = Array2::zeros(cache.k.dim());
    let mut d_v = Array2::zeros(cache.v.dim());
    for (h, a) in cache.attn.iter().enumerate() {
        let cols = s![.., h * dh..(h + 1) * dh];
        let d_oh = d_o.slice(cols);
        let d_a = d_oh.dot(&cache.v.slice(cols).t());
        d_v.slice_mut(cols).assign(&a.t().dot(&d_oh));
        // softmax Jacobian, row by row
        let row_dot = (&d_a * a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let d_s = a * &(&d_a - &row_dot) * scale;
        d_q.slice_mut(cols).assign(&d_s.dot(&cache.k.slice(cols)));
        d_k.slice_mut(cols)
            .assign(&d_s.t().dot(&cache.q.slice(cols)));
    }
    Ok(DsmGrads {
        e_t: d_q.dot(&head.wq.t()),
        f_v: d_k.dot(&head.wk.t()) + d_v.dot(&head.wv.t()),
        wq: e_t.t().dot(&d_q),
        wk: f_v.t().dot(&d_k),
        wv: f_v.t().dot(&d_v),
        wo: d_wo,
    })
}

// ---------------------------------------------------------------------------
// Hierarchical mode

/// A global offset head plus one head per injected transformer layer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterParams {
    pub global: DsmHead,
    pub layers: Vec<DsmHead>,
}

impl AdapterParams {
    pub fn init<R: Rng + ?Sized>(
        config: DsmConfig,
        n_layers: usize,
        rng: &mut R,
    ) -> Result<Self, DsmError> {
        Ok(Self {
            global: DsmHead::init(config, rng)?,
            layers: (0..n_layers)
                .map(|_| DsmHead::init(config, rng))
                .collect::<Result<_, _>>()?,
        })
    }

    fn named_tensors(&self) -> Vec<(String, &Array2<f64>)> {
        let mut out = Vec::new();
        for (prefix, head) in std::iter::once(("global".to_string(), &self.global)).chain(
            self.layers
                .iter()
                .enumerate()
                .map(|(l, h)| (format!("layer{l}"), h)),
        ) {
            for (name, t) in head.tensors() {
                out.push((format!("{prefix}.{name}"), t));
            }
        }
        out
    }
}

/// Global offset plus the first `n_layers` per-layer offsets.
pub fn hierarchical_offsets(
    e_t: &Array2<f64>,
    f_v: &Array2<f64>,
    params: &AdapterParams,
    n_layers: usize,
) -> Result<(Array2<f64>, Vec<Array2<f64>>), DsmError> {
    if n_layers < 1 {
        return Err(DsmError::Layers(n_layers));
    }
    if n_layers > params.layers.len() {
        return Err(DsmError::Config(format!(
            "{n_layers} layers requested, adapter has {} layer heads",
            params.layers.len()
        )));
    }
    let global = dsm_forward(e_t, f_v, &params.global)?;
    let layers = params.layers[..n_layers]
        .iter()
        .map(|h| dsm_forward(e_t, f_v, h))
        .collect::<Result<_, _>>()?;
    Ok((global, layers))
}

// ---------------------------------------------------------------------------
// Gradient checking

#[derive(Debug, Clone, Copy)]
pub enum GradCheckTarget<'a> {
    /// Loss `sum(ΔE_t^2)` over every adapter input and parameter.
    DsmForward {
        e_t: &'a Array2<f64>,
        f_v: &'a Array2<f64>,
        head: &'a DsmHead,
    },
    /// Loss `sum((E_t + ΔE_t)^2)` over both operands.
    Modulate {
        e_t: &'a Array2<f64>,
        delta: &'a Array2<f64>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: (usize, usize),
    pub entries_checked: usize,
}

type Named = Vec<(String, Array2<f64>)>;

fn unpack_dsm(t: &Named, config: DsmConfig) -> (Array2<f64>, Array2<f64>, DsmHead) {
    (
        t[0].1.clone(),
        t[1].1.clone(),
        DsmHead {
            config,
            wq: t[2].1.clone(),
            wk: t[3].1.clone(),
            wv: t[4].1.clone(),
            wo: t[5].1.clone(),
        },
    )
}

fn loss_of(target: &GradCheckTarget, t: &Named) -> Result<f64, DsmError> {
    let out = match target {
        GradCheckTarget::DsmForward { head, .. } => {
            let (e, f, h) = unpack_dsm(t, head.config);
            dsm_forward(&e, &f, &h)?
        }
        GradCheckTarget::Modulate { .. } => modulate(&t[0].1, &t[1].1)?,
    };
    Ok(out.mapv(|v| v * v).sum())
}

fn analytic(target: &GradCheckTarget, t: &Named) -> Result<Vec<Array2<f64>>, DsmError> {
    match target {
        GradCheckTarget::DsmForward { head, .. } => {
            let (e, f, h) = unpack_dsm(t, head.config);
            let out = dsm_forward(&e, &f, &h)?;
            let g = dsm_backward(&e, &f, &h, &(out * 2.0))?;
            Ok(vec![g.e_t, g.f_v, g.wq, g.wk, g.wv, g.wo])
        }
        GradCheckTarget::Modulate { .. } => {
            let sum = modulate(&t[0].1, &t[1].1)? * 2.0;
            Ok(vec![sum.clone(), sum])
        }
    }
}

/// Compares analytic gradients against central finite differences.
pub fn grad_check(target: GradCheckTarget) -> Result<GradCheckReport, DsmError> {
    grad_check_with(target, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradients before
/// comparison (for negative controls).
pub fn grad_check_with(
    target: GradCheckTarget,
    tamper: impl FnOnce(&mut [Array2<f64>]),
) -> Result<GradCheckReport, DsmError> {
    let mut tensors: Named = match target {
        GradCheckTarget::DsmForward { e_t, f_v, head } => vec![
            ("e_t".into(), e_t.clone()),
            ("f_v".into(), f_v.clone()),
            ("wq".into(), head.wq.clone()),
            ("wk".into(), head.wk.clone()),
            ("wv".into(), head.wv.clone()),
            ("wo".into(), head.wo.clone()),
        ],
        GradCheckTarget::Modulate { e_t, delta } => {
            vec![("e_t".into(), e_t.clone()), ("delta".into(), delta.clone())]
        }
    };
    for (name, t) in &tensors {
        if t.iter().any(|v| !v.is_finite()) {
            return Err(DsmError::NonFinite(name.clone()));
        }
    }
    let mut grads = analytic(&target, &tensors)?;
    tamper(&mut grads);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: (0, 0),
        entries_checked: 0,
    };
    for ti in 0..tensors.len() {
        let (rows, cols) = tensors[ti].1.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = tensors[ti].1[[r, c]];
                tensors[ti].1[[r, c]] = orig + FD_STEP;
                let plus = loss_of(&target, &tensors)?;
                tensors[ti].1[[r, c]] = orig - FD_STEP;
                let minus = loss_of(&target, &tensors)?;
                tensors[ti].1[[r, c]] = orig;
                let numeric = (plus - minus) / (2.0 * FD_STEP);
                let a = grads[ti][[r, c]];
                if !numeric.is_finite() || !a.is_finite() {
                    return Err(DsmError::NonFinite(tensors[ti].0.clone()));
                }
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERROR_FLOOR);
                report.entries_checked += 1;
                if rel > report.max_rel_error {
                    report.max_rel_error = rel;
                    report.worst_tensor = tensors[ti].0.clone();
                    report.worst_index = (r, c);
                }
            }
        }
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// Files

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorSpec {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    config: DsmConfig,
    n_layers: usize,
    tensors: Vec<TensorSpec>,
}

/// `ASTRADSM | u32 version | u64 manifest_len | manifest JSON | f64[]`
pub fn save_checkpoint(params: &AdapterParams, path: impl AsRef<Path>) -> Result<(), DsmError> {
    let named = params.named_tensors();
    let manifest = Manifest {
        config: params.global.config,
        n_layers: params.layers.len(),
        tensors: named
            .iter()
            .map(|(name, t)| TensorSpec {
                name: name.clone(),
                rows: t.nrows(),
                cols: t.ncols(),
            })
            .collect(),
    };
    let manifest = serde_json::to_vec(&manifest).expect("manifest serializes");
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest);
    for (_, t) in &named {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| DsmError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<AdapterParams, DsmError> {
    let path = path.as_ref();
    let fail = |reason: String| DsmError::File {
        path: path.display().to_string(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("not an adapter checkpoint (bad magic)".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported checkpoint version {version}")));
    }
    let mlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let mend = 20usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| fail("truncated manifest".into()))?;
    let manifest: Manifest =
        serde_json::from_slice(&bytes[20..mend]).map_err(|e| fail(format!("manifest: {e}")))?;
    manifest.config.validate()?;
    if manifest.tensors.len() != 4 * (manifest.n_layers + 1) {
        return Err(fail(
            "manifest tensor count does not match layer count".into(),
        ));
    }
    let mut cursor = mend;
    let mut tensors = Vec::with_capacity(manifest.tensors.len());
    for spec in &manifest.tensors {
        let n = spec.rows * spec.cols;
        let end = cursor + n * 8;
        if end > bytes.len() {
            return Err(fail(format!("truncated data for {}", spec.name)));
        }
        let data: Vec<f64> = bytes[cursor..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor = end;
        tensors.push(
            Array2::from_shape_vec((spec.rows, spec.cols), data)
                .map_err(|e| fail(e.to_string()))?,
        );
    }
    if cursor != bytes.len() {
        return Err(fail("trailing bytes after tensor data".into()));
    }
    let mut it = tensors.into_iter();
    let mut next_head = || DsmHead {
        config: manifest.config,
        wq: it.next().unwrap(),
        wk: it.next().unwrap(),
        wv: it.next().unwrap(),
        wo: it.next().unwrap(),
    };
    let global = next_head();
    let layers = (0..manifest.n_layers).map(|_| next_head()).collect();
    let params = AdapterParams { global, layers };
    let probe_e = Array2::zeros((1, manifest.config.d_model));
    let probe_f = Array2::zeros((1, manifest.config.d_visual));
    for head in std::iter::once(&params.global).chain(&params.layers) {
        head.check(&probe_e, &probe_f)?;
    }
    Ok(params)
}

fn matrix_from_rows(rows: Vec<Vec<f64>>, origin: &str) -> Result<Array2<f64>, DsmError> {
    let fail = |reason: String| DsmError::File {
        path: origin.to_string(),
        reason,
    };
    let cols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || cols == 0 {
        return Err(fail("no feature rows".into()));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != cols) {
        return Err(fail(format!("row {bad} has a different width")));
    }
    let n = rows.len();
    let m = Array2::from_shape_vec((n, cols), rows.into_iter().flatten().collect())
        .map_err(|e| fail(e.to_string()))?;
    if m.iter().any(|v| !v.is_finite()) {
        return Err(DsmError::NonFinite(origin.to_string()));
    }
    Ok(m)
}

/// One JSON array of numbers per line, one line per visual token.
pub fn read_features_jsonl(path: impl AsRef<Path>) -> Result<Array2<f64>, DsmError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| DsmError::File {
        path: shown.clone(),
        reason: e.to_string(),
    })?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| DsmError::File {
            path: shown.clone(),
            reason: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(
            serde_json::from_str::<Vec<f64>>(&line).map_err(|e| DsmError::File {
                path: shown.clone(),
                reason: format!("line {}: {e}", n + 1),
            })?,
        );
    }
    matrix_from_rows(rows, &shown)
}

/// `ASTRAF32 | u32 rows | u32 cols | f32[rows * cols]`, little-endian.
pub fn read_features_raw(path: impl AsRef<Path>) -> Result<Array2<f64>, DsmError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let fail = |reason: String| DsmError::File {
        path: shown.clone(),
        reason,
    };
    let bytes = fs::read(path).map_err(|e| fail(e.to_string()))?;
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(fail("bad feature header".into()));
    }
    let rows = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let cols = u32::from_le_bytes(bytes[12..16].try_into().unwrap()) as usize;
    if bytes.len() != 16 + rows * cols * 4 {
        return Err(fail(format!(
            "expected {} data bytes for {rows}x{cols}, found {}",
            rows * cols * 4,
            bytes.len() - 16
        )));
    }
    let data: Vec<Vec<f64>> = bytes[16..]
        .chunks_exact(4 * cols.max(1))
        .map(|row| {
            row.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect()
        })
        .collect();
    matrix_from_rows(data, &shown)
}

pub fn write_features_raw(m: &Array2<f64>, path: impl AsRef<Path>) -> Result<(), DsmError> {
    let mut out = Vec::with_capacity(16 + m.len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&(m.nrows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.ncols() as u32).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    let path = path.as_ref();
    fs::write(path, out).map_err(|e| DsmError::File {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
