//! Reference kernel for asymmetric rotary position encoding over a
//! concatenated conditioning stream.
//!
//! The stream is `text ⊕ ref_1 ⊕ … ⊕ ref_N ⊕ pose ⊕ latent`. Latent tokens
//! carry their native patch coordinates. In the asymmetric mode pose tokens
//! reuse the coordinates of the latent patches they cover, while each
//! reference image is shifted diagonally past the canvas and all preceding
//! references, so identity tokens never share a position with the canvas.
//! Text tokens sit at `(0, 0)`.
//!
//! Rotary embedding is axial: the first half of each feature vector rotates
//! with the width index `i`, the second half with the height index `j`.

use std::collections::BTreeSet;
use std::fmt;

use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_ROPE_BASE: f64 = 10_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum KernelError {
    #[error("invalid layout: {0}")]
    Layout(String),
    #[error("patch grid is empty")]
    EmptyGrid,
    #[error("feature dimension {0} is not divisible by 4")]
    RotaryDim(usize),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("token {index} has role {found}, expected {expected}")]
    RoleMismatch {
        index: usize,
        found: Role,
        expected: Role,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Text,
    /// Reference image `k`, 0-based in sequence order.
    Ref(usize),
    Pose,
    Latent,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Text => write!(f, "text"),
            Role::Ref(k) => write!(f, "ref{}", k + 1),
            Role::Pose => write!(f, "pose"),
            Role::Latent => write!(f, "latent"),
        }
    }
}

/// `(i, j)` = (width axis, height axis).
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize,
)]
pub struct PositionIndex {
    pub i: u32,
    pub j: u32,
}

impl PositionIndex {
    pub fn new(i: u32, j: u32) -> Self {
        Self { i, j }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridSize {
    pub width: u32,
    pub height: u32,
}

impl GridSize {
    pub fn new(width: u32, height: u32) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutSpec {
    pub latent: GridSize,
    pub refs: Vec<GridSize>,
    pub pose: Option<GridSize>,
    pub text_len: usize,
}

impl LayoutSpec {
    pub fn validate(&self) -> Result<(), KernelError> {
        let named = std::iter::once(("latent".to_string(), self.latent))
            .chain(
                self.refs
                    .iter()
                    .enumerate()
                    .map(|(k, g)| (format!("ref{}", k + 1), *g)),
            )
            .chain(self.pose.map(|g| ("pose".to_string(), g)));
        for (name, grid) in named {
            if grid.width == 0 || grid.height == 0 {
                return Err(KernelError::Layout(format!(
                    "{name} grid {}x{} has a zero dimension",
                    grid.width, grid.height
                )));
            }
        }
        if let Some(pose) = self.pose {
            if pose.width > self.latent.width || pose.height > self.latent.height {
                return Err(KernelError::Layout(format!(
                    "pose grid {}x{} exceeds latent {}x{}",
                    pose.width, pose.height, self.latent.width, self.latent.height
                )));
            }
        }
        Ok(())
    }

    pub fn total_tokens(&self) -> usize {
        self.text_len
            + self.refs.iter().map(GridSize::len).sum::<usize>()
            + self.pose.map_or(0, |g| g.len())
            + self.latent.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EncodingMode {
    /// Pose bound to the canvas, references offset past it.
    #[default]
    Asymmetric,
    /// Every image token bound to the canvas.
    SymmetricRope,
    /// Pose offset like one more reference.
    SymmetricUnope,
}

impl std::str::FromStr for EncodingMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "asymmetric" => Ok(Self::Asymmetric),
            "symmetric-rope" | "symmetric_rope" => Ok(Self::SymmetricRope),
            "symmetric-unope" | "symmetric_unope" => Ok(Self::SymmetricUnope),
            other => Err(format!(
                "unknown mode {other:?} (asymmetric, symmetric-rope, symmetric-unope)"
            )),
        }
    }
}

fn grid_positions(grid: GridSize, offset: (u32, u32)) -> impl Iterator<Item = PositionIndex> {
    (0..grid.height).flat_map(move |j| {
        (0..grid.width).map(move |i| PositionIndex::new(i + offset.0, j + offset.1))
    })
}

/// Position of every token in stream order.
pub fn assign_positions(
    layout: &LayoutSpec,
    mode: EncodingMode,
) -> Result<Vec<(Role, PositionIndex)>, KernelError> {
    layout.validate()?;
    let mut table = Vec::with_capacity(layout.total_tokens());
    table.extend(std::iter::repeat_n(
        (Role::Text, PositionIndex::default()),
        layout.text_len,
    ));

    // Cumulative offset: the latent extent, then every preceding reference.
    let mut offset = (layout.latent.width, layout.latent.height);
    for (k, grid) in layout.refs.iter().enumerate() {
        let origin = match mode {
            EncodingMode::SymmetricRope => (0, 0),
            EncodingMode::Asymmetric | EncodingMode::SymmetricUnope => offset,
        };
        table.extend(grid_positions(*grid, origin).map(|p| (Role::Ref(k), p)));
        offset = (offset.0 + grid.width, offset.1 + grid.height);
    }
    if let Some(grid) = layout.pose {
        let origin = match mode {
            EncodingMode::SymmetricUnope => offset,
            EncodingMode::Asymmetric | EncodingMode::SymmetricRope => (0, 0),
        };
        table.extend(grid_positions(grid, origin).map(|p| (Role::Pose, p)));
    }
    table.extend(grid_positions(layout.latent, (0, 0)).map(|p| (Role::Latent, p)));
    Ok(table)
}

/// Distinct positions held by tokens of `role`.
pub fn index_set(table: &[(Role, PositionIndex)], role: Role) -> BTreeSet<PositionIndex> {
    table
        .iter()
        .filter(|(r, _)| *r == role)
        .map(|(_, p)| *p)
        .collect()
}

// ---------------------------------------------------------------------------
// Tokens

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub role: Role,
    pub features: Vec<f64>,
    pub position: PositionIndex,
}

/// Patch features of one image, row-major (`j` selects the row).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchGrid {
    pub width: u32,
    pub height: u32,
    pub patches: Vec<Vec<f64>>,
}

impl PatchGrid {
    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> Vec<f64>) -> Self {
        let patches = (0..height)
            .flat_map(|j| (0..width).map(move |i| (i, j)))
            .map(|(i, j)| f(i, j))
            .collect();
        Self {
            width,
            height,
            patches,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageTokens {
    pub size: GridSize,
    pub tokens: Vec<Token>,
}

/// Flattens a patch grid into tokens with native grid coordinates.
pub fn tokenize_image(grid: &PatchGrid, role: Role) -> Result<ImageTokens, KernelError> {
    if grid.width == 0 || grid.height == 0 || grid.patches.is_empty() {
        return Err(KernelError::EmptyGrid);
    }
    let size = GridSize::new(grid.width, grid.height);
    if grid.patches.len() != size.len() {
        return Err(KernelError::Dimension(format!(
            "{}x{} grid holds {} patches",
            grid.width,
            grid.height,
            grid.patches.len()
        )));
    }
    let tokens = grid
        .patches
        .iter()
        .zip(grid_positions(size, (0, 0)))
        .map(|(features, position)| Token {
            role,
            features: features.clone(),
            position,
        })
        .collect();
    Ok(ImageTokens { size, tokens })
}

/// Fixed linear patch projection (`d_patch x d_model`).
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEmbedding {
    pub weight: Array2<f64>,
}

impl PatchEmbedding {
    pub fn tokenize(&self, grid: &PatchGrid, role: Role) -> Result<ImageTokens, KernelError> {
        let mut out = tokenize_image(grid, role)?;
        for token in out.tokens.iter_mut() {
            if token.features.len() != self.weight.nrows() {
                return Err(KernelError::Dimension(format!(
                    "patch has {} features, projection expects {}",
                    token.features.len(),
                    self.weight.nrows()
                )));
            }
            token.features = ArrayView1::from(&token.features).dot(&self.weight).to_vec();
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
    pub layout: LayoutSpec,
    pub mode: EncodingMode,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.tokens.iter().map(|t| t.role).collect()
    }

    pub fn position_table(&self) -> Vec<(Role, PositionIndex)> {
        self.tokens.iter().map(|t| (t.role, t.position)).collect()
    }

    pub fn feature_matrix(&self) -> Array2<f64> {
        let d = self.tokens.first().map_or(0, |t| t.features.len());
        Array2::from_shape_fn((self.tokens.len(), d), |(r, c)| self.tokens[r].features[c])
    }
}

fn check_roles(tokens: &[Token], expected: Role, start: usize) -> Result<(), KernelError> {
    for (n, t) in tokens.iter().enumerate() {
        if t.role != expected {
            return Err(KernelError::RoleMismatch {
                index: start + n,
                found: t.role,
                expected,
            });
        }
    }
    Ok(())
}

/// Concatenates `text ⊕ refs ⊕ pose ⊕ latent` and assigns positions.
pub fn assemble_sequence(
    text: Vec<Token>,
    refs: Vec<ImageTokens>,
    pose: Option<ImageTokens>,
    latent: ImageTokens,
    mode: EncodingMode,
) -> Result<TokenSequence, KernelError> {
    let layout = LayoutSpec {
        latent: latent.size,
        refs: refs.iter().map(|r| r.size).collect(),
        pose: pose.as_ref().map(|p| p.size),
        text_len: text.len(),
    };
    let positions = assign_positions(&layout, mode)?;

    let mut tokens = Vec::with_capacity(positions.len());
    check_roles(&text, Role::Text, tokens.len())?;
    tokens.extend(text);
    for (k, r) in refs.into_iter().enumerate() {
        check_roles(&r.tokens, Role::Ref(k), tokens.len())?;
        tokens.extend(r.tokens);
    }
    if let Some(p) = pose {
        check_roles(&p.tokens, Role::Pose, tokens.len())?;
        tokens.extend(p.tokens);
    }
    check_roles(&latent.tokens, Role::Latent, tokens.len())?;
    tokens.extend(latent.tokens);

    if tokens.len() != positions.len() {
        return Err(KernelError::Dimension(format!(
            "{} tokens for a layout of {} positions",
            tokens.len(),
            positions.len()
        )));
    }
    let d = tokens.first().map_or(0, |t| t.features.len());
    for (t, (_, pos)) in tokens.iter_mut().zip(positions) {
        if t.features.len() != d {
            return Err(KernelError::Dimension(format!(
                "mixed feature widths {} and {d}",
                t.features.len()
            )));
        }
        t.position = pos;
    }
    Ok(TokenSequence {
        tokens,
        layout,
        mode,
    })
}

// ---------------------------------------------------------------------------
// Rotary embedding and attention

/// Rotates feature pairs by position-dependent angles. Pair `m` of an axis
/// half (`d_axis = d / 2`) turns by `pos_axis * base^(-2m / d_axis)`.
pub fn rope_apply(
    features: &[f64],
    pos: PositionIndex,
    base: f64,
) -> Result<Vec<f64>, KernelError> {
    let d = features.len();
    if d == 0 || !d.is_multiple_of(4) {
        return Err(KernelError::RotaryDim(d));
    }
    let half = d / 2;
    let mut out = features.to_vec();
    for (axis, p) in [(0usize, pos.i), (1, pos.j)] {
        if p == 0 {
            continue;
        }
        let chunk = &mut out[axis * half..(axis + 1) * half];
        for m in 0..half / 2 {
            let theta = p as f64 * base.powf(-2.0 * m as f64 / half as f64);
            let (sin, cos) = theta.sin_cos();
            let (a, b) = (chunk[2 * m], chunk[2 * m + 1]);
            chunk[2 * m] = a * cos - b * sin;
            chunk[2 * m + 1] = a * sin + b * cos;
        }
    }
    Ok(out)
}

/// Single-head projections, each `d_model x d_head`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub rope_base: f64,
}

impl AttentionParams {
    pub fn new(wq: Array2<f64>, wk: Array2<f64>, wv: Array2<f64>) -> Self {
        Self {
            wq,
            wk,
            wv,
            rope_base: DEFAULT_ROPE_BASE,
        }
    }

    fn check(&self, d_model: usize) -> Result<usize, KernelError> {
        let d_head = self.wq.ncols();
        for (name, w) in [("wq", &self.wq), ("wk", &self.wk), ("wv", &self.wv)] {
            if w.nrows() != d_model {
                return Err(KernelError::Dimension(format!(
                    "{name} has {} rows, tokens have {d_model} features",
                    w.nrows()
                )));
            }
        }
        if self.wk.ncols() != d_head {
            return Err(KernelError::Dimension(
                "wq and wk head widths differ".into(),
            ));
        }
        if !d_head.is_multiple_of(4) {
            return Err(KernelError::RotaryDim(d_head));
        }
        Ok(d_head)
    }
}

fn rotate_rows(
    m: &Array2<f64>,
    seq: &TokenSequence,
    base: f64,
) -> Result<Array2<f64>, KernelError> {
    let mut out = m.clone();
    for (mut row, t) in out.rows_mut().into_iter().zip(&seq.tokens) {
        let rotated = rope_apply(row.as_slice().unwrap(), t.position, base)?;
        row.assign(&ArrayView1::from(&rotated));
    }
    Ok(out)
}

/// Pre-softmax logits `rope(Q) rope(K)^T / sqrt(d_head)`.
pub fn attention_logits(
    seq: &TokenSequence,
    params: &AttentionParams,
) -> Result<Array2<f64>, KernelError> {
    let x = seq.feature_matrix();
    let d_head = params.check(x.ncols())?;
    let q = rotate_rows(&x.dot(&params.wq), seq, params.rope_base)?;
    let k = rotate_rows(&x.dot(&params.wk), seq, params.rope_base)?;
    Ok(q.dot(&k.t()) / (d_head as f64).sqrt())
}

/// `softmax(logits) V` for every token.
pub fn attention_forward(
    seq: &TokenSequence,
    params: &AttentionParams,
) -> Result<Array2<f64>, KernelError> {
    let mut weights = attention_logits(seq, params)?;
    for mut row in weights.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
    let v = seq.feature_matrix().dot(&params.wv);
    Ok(weights.dot(&v))
}
