//! Independent reference implementations used as test oracles. None of
//! these call into the library code they check.
#![allow(dead_code)]

use std::path::PathBuf;

use astra_core::index::{FlatIndex, IngestRecord};
use astra_core::pose::{Keypoint, PoseSkeleton, Visibility};
use astra_core::retrieval::{embed_records, HashingEmbedder};
use rand::Rng;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
}

// ---------------------------------------------------------------------------
// Keypoint similarity

/// COCO per-keypoint constants, typed in independently of the library.
pub const SIGMAS: [f64; 17] = [
    0.026, 0.025, 0.025, 0.035, 0.035, 0.079, 0.079, 0.072, 0.072, 0.062, 0.062, 0.107, 0.107,
    0.087, 0.087, 0.089, 0.089,
];

/// `(x, y, v)` triplets.
pub type Raw = [(f64, f64, u8); 17];

/// Closed-form Gaussian similarity over raw triplets.
pub fn oks_oracle(pred: &Raw, gt: &Raw, area: f64) -> Option<f64> {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..17 {
        if gt[k].2 == 0 {
            continue;
        }
        den += 1.0;
        if pred[k].2 == 0 {
            continue;
        }
        let d2 = (pred[k].0 - gt[k].0).powi(2) + (pred[k].1 - gt[k].1).powi(2);
        let var = (2.0 * SIGMAS[k]).powi(2);
        num += (-d2 / (2.0 * area * var)).exp();
    }
    (den > 0.0).then(|| num / den)
}

pub fn skeleton(raw: &Raw, area: f64) -> PoseSkeleton {
    let mut s = PoseSkeleton::empty(area);
    for (k, &(x, y, v)) in raw.iter().enumerate() {
        let v = match v {
            0 => Visibility::Unlabeled,
            1 => Visibility::Occluded,
            _ => Visibility::Visible,
        };
        s.keypoints[k] = Keypoint::new(x, y, v);
    }
    s
}

pub fn random_raw(rng: &mut impl Rng, labeled: usize) -> Raw {
    let mut raw = [(0.0, 0.0, 0u8); 17];
    let mut idx: Vec<usize> = (0..17).collect();
    for n in 0..labeled {
        let pick = rng.random_range(n..17);
        idx.swap(n, pick);
        raw[idx[n]] = (
            rng.random_range(0.0..500.0),
            rng.random_range(0.0..500.0),
            rng.random_range(1..=2),
        );
    }
    raw
}

// ---------------------------------------------------------------------------
// Vectors

pub fn random_unit(rng: &mut impl Rng, dim: usize) -> Vec<f32> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-3 {
            return v.iter().map(|x| (x / n) as f32).collect();
        }
    }
}

/// Full-sort scan: score every row in f64, order by score desc then id asc.
pub fn brute_force_top_k(rows: &[(u64, Vec<f32>)], query: &[f32], k: usize) -> Vec<(u64, f64)> {
    let mut scored: Vec<(u64, f64)> = rows
        .iter()
        .map(|(id, v)| {
            let s = v
                .iter()
                .zip(query)
                .map(|(a, b)| *a as f64 * *b as f64)
                .sum::<f64>();
            (*id, s)
        })
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

// ---------------------------------------------------------------------------
// Curation

/// F1 at `theta` by direct counting.
pub fn f1_at(scored: &[(f64, bool)], theta: f64) -> f64 {
    let (mut tp, mut fp, mut fneg) = (0.0, 0.0, 0.0);
    for &(s, label) in scored {
        match (s >= theta, label) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fneg += 1.0,
            _ => {}
        }
    }
    if tp == 0.0 {
        0.0
    } else {
        2.0 * tp / (2.0 * tp + fp + fneg)
    }
}

/// Scans every candidate threshold (midpoints of distinct scores, 0 and 1)
/// and keeps the first best F1 in ascending order.
pub fn exhaustive_threshold(scored: &[(f64, bool)]) -> f64 {
    let mut s: Vec<f64> = scored.iter().map(|x| x.0).collect();
    s.sort_by(|a, b| a.partial_cmp(b).unwrap());
    s.dedup();
    let mut cands = vec![0.0, 1.0];
    for w in s.windows(2) {
        cands.push((w[0] + w[1]) / 2.0);
    }
    cands.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mut best = (-1.0, 0.0);
    for t in cands {
        let f = f1_at(scored, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    best.1
}

// ---------------------------------------------------------------------------
// Rotary attention

/// Dense `d x d` block-diagonal rotation for position `(i, j)`.
pub fn rotation_matrix(d: usize, i: u32, j: u32, base: f64) -> Vec<Vec<f64>> {
    let half = d / 2;
    let mut r = vec![vec![0.0; d]; d];
    for (axis, p) in [(0usize, i), (1, j)] {
        for m in 0..half / 2 {
            let freq = 1.0 / base.powf((2 * m) as f64 / half as f64);
            let a = p as f64 * freq;
            let o = axis * half + 2 * m;
            r[o][o] = a.cos();
            r[o][o + 1] = -a.sin();
            r[o + 1][o] = a.sin();
            r[o + 1][o + 1] = a.cos();
        }
    }
    r
}

pub fn matvec(m: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    m.iter()
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// `x (n x d_model)`, `w (d_model x d_out)` by loops.
pub fn matmul(x: &[Vec<f64>], w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let cols = w[0].len();
    x.iter()
        .map(|row| {
            (0..cols)
                .map(|c| row.iter().enumerate().map(|(k, v)| v * w[k][c]).sum())
                .collect()
        })
        .collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Single-head rotary attention with explicit rotation matrices.
pub fn dense_attention(
    x: &[Vec<f64>],
    pos: &[(u32, u32)],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    base: f64,
) -> Vec<Vec<f64>> {
    let d = wq[0].len();
    let rot = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        m.iter()
            .zip(pos)
            .map(|(row, &(i, j))| matvec(&rotation_matrix(d, i, j, base), row))
            .collect()
    };
    let q = rot(matmul(x, wq));
    let k = rot(matmul(x, wk));
    let v = matmul(x, wv);
    let n = x.len();
    (0..n)
        .map(|a| {
            let logits: Vec<f64> = (0..n)
                .map(|b| {
                    q[a].iter().zip(&k[b]).map(|(p, r)| p * r).sum::<f64>() / (d as f64).sqrt()
                })
                .collect();
            let w = softmax(&logits);
            (0..v[0].len())
                .map(|c| (0..n).map(|b| w[b] * v[b][c]).sum())
                .collect()
        })
        .collect()
}

/// Multi-head cross-attention offset by loops.
#[allow(clippy::too_many_arguments)]
pub fn dense_cross_attention(
    e: &[Vec<f64>],
    f: &[Vec<f64>],
    wq: &[Vec<f64>],
    wk: &[Vec<f64>],
    wv: &[Vec<f64>],
    wo: &[Vec<f64>],
    heads: usize,
) -> Vec<Vec<f64>> {
    let q = matmul(e, wq);
    let k = matmul(f, wk);
    let v = matmul(f, wv);
    let d_attn = wq[0].len();
    let dh = d_attn / heads;
    let mut o = vec![vec![0.0; d_attn]; e.len()];
    for h in 0..heads {
        let r = h * dh..(h + 1) * dh;
        for a in 0..e.len() {
            let logits: Vec<f64> = (0..f.len())
                .map(|b| r.clone().map(|c| q[a][c] * k[b][c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let w = softmax(&logits);
            for c in r.clone() {
                o[a][c] = (0..f.len()).map(|b| w[b] * v[b][c]).sum();
            }
        }
    }
    matmul(&o, wo)
}

pub fn to_rows(m: &ndarray::Array2<f64>) -> Vec<Vec<f64>> {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub fn random_rows(rng: &mut impl Rng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r)
        .map(|_| (0..c).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> ndarray::Array2<f64> {
    ndarray::Array2::from_shape_fn((rows.len(), rows[0].len()), |(r, c)| rows[r][c])
}

pub fn max_abs_diff(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .flat_map(|(x, y)| {
            assert_eq!(x.len(), y.len());
            x.iter().zip(y).map(|(p, q)| (p - q).abs())
        })
        .fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Fixture database

pub fn fixture_records() -> Vec<IngestRecord> {
    astra_core::index::read_ingest_jsonl(fixture("prompts.jsonl")).unwrap()
}

pub fn fixture_index() -> FlatIndex {
    FlatIndex::build(embed_records(fixture_records(), &HashingEmbedder).unwrap()).unwrap()
}
