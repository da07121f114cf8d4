use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use astra_core::bench::{
    build_benchmark, emit_report, evaluate, load_benchmark, parse_coco_captions, save_benchmark,
    CandidateSet, HttpMetricPlugin, MetricPlugin, ReportFormat,
};
use astra_core::curation::{
    aggregate_score, calibrate_threshold, calibrate_weights, read_samples_csv, CurationParams,
    Target, TargetKind, Weights,
};
use astra_core::dsm::{
    grad_check, grad_check_with, read_features_jsonl, read_features_raw, DsmConfig, DsmHead,
    GradCheckTarget,
};
use astra_core::europe::{assign_positions, EncodingMode, GridSize, LayoutSpec};
use astra_core::index::{read_ingest_jsonl, FlatIndex, INDEX_VERSION};
use astra_core::pose::{
    match_and_score, rasterize, write_png, CocoKeypoints, PoseMap, RasterStyle,
};
use astra_core::retrieval::{
    embed_records, FallbackEmbedder, GateConfig, HashingEmbedder, HttpEmbedder, HttpNormalizer,
    Normalization, RetrievalOutcome, Retriever, TextEmbedder, UserPrompt,
};

use crate::config::EngineConfig;

#[derive(Debug, Parser)]
#[command(name = "astra", version, about = "Pose retrieval engine")]
pub struct Cli {
    /// TOML configuration file (overrides ASTRA_CONFIG).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Log level (error, warn, info, debug, trace).
    #[arg(long, global = true)]
    pub log_level: Option<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Ingest JSON-lines records, embed missing vectors and write an index.
    BuildIndex {
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Run the retrieval pipeline once and print the outcome as JSON.
    Retrieve {
        #[arg(long)]
        prompt: String,
        #[arg(long)]
        index: Option<PathBuf>,
        /// Skip prompt normalization.
        #[arg(long)]
        passthrough: bool,
        #[arg(long)]
        alpha_u: Option<f64>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Render a pose map JSON document to PNG.
    Rasterize {
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted pose map against a ground-truth pose map.
    Oks { pred: PathBuf, gt: PathBuf },
    /// Fit aggregation weights and an acceptance threshold.
    Calibrate {
        /// CSV `id,s1,s2,s3,target` with scalar preference targets.
        #[arg(long)]
        preferences: Option<PathBuf>,
        /// CSV `id,s1,s2,s3,target` with accept/reject labels.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the multi-person benchmark from COCO keypoint annotations.
    BenchBuild {
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        images_root: Option<PathBuf>,
        #[arg(long)]
        captions: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        limit: usize,
        #[arg(long, default_value_t = 3)]
        max_subjects: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate candidate pose maps against a built benchmark.
    BenchEval {
        #[arg(long)]
        benchmark: PathBuf,
        /// Directory of `<image_id>.json` pose maps; omit to score ground truth.
        #[arg(long)]
        candidates: Option<PathBuf>,
        #[arg(long, default_value = "candidate")]
        method: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: ReportFormat,
    },
    /// Position-encoding and adapter diagnostics.
    KernelDemo {
        #[command(subcommand)]
        demo: KernelDemo,
    },
    /// Print index metadata as JSON.
    IndexInfo {
        #[arg(long)]
        index: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bind: Option<String>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        pose_store: Option<PathBuf>,
        #[arg(long)]
        alpha_u: Option<f64>,
        #[arg(long)]
        passthrough: bool,
        #[command(flatten)]
        embed: EmbedArgs,
    },
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    /// Use the offline hashing embedder instead of the embedding service.
    #[arg(long)]
    pub fixture_embedder: bool,
}

#[derive(Debug, Subcommand)]
pub enum KernelDemo {
    /// Print the position table for a layout.
    Positions {
        /// Latent grid as WxH.
        #[arg(long, default_value = "4x4")]
        latent: String,
        /// Reference grid as WxH; repeat for several references.
        #[arg(long = "ref")]
        refs: Vec<String>,
        /// Pose grid as WxH.
        #[arg(long)]
        pose: Option<String>,
        #[arg(long, default_value_t = 0)]
        text_len: usize,
        #[arg(long, default_value = "asymmetric")]
        mode: EncodingMode,
    },
    /// Check adapter gradients against finite differences.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Visual features (`.jsonl` rows or raw f32 block); random if omitted.
        #[arg(long)]
        features: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        d_model: usize,
        #[arg(long, default_value_t = 8)]
        d_attn: usize,
        #[arg(long, default_value_t = 1)]
        heads: usize,
        #[arg(long, default_value_t = 3)]
        text_tokens: usize,
    },
}

fn parse_grid(s: &str) -> Result<GridSize> {
    let (w, h) = s
        .split_once(['x', 'X'])
        .with_context(|| format!("grid {s:?} is not WxH"))?;
    Ok(GridSize::new(
        w.trim()
            .parse()
            .with_context(|| format!("grid width in {s:?}"))?,
        h.trim()
            .parse()
            .with_context(|| format!("grid height in {s:?}"))?,
    ))
}

pub fn make_embedder(cfg: &EngineConfig, fixture: bool) -> Result<Box<dyn TextEmbedder>> {
    match (&cfg.embed_url, fixture) {
        (Some(url), false) => {
            let http = HttpEmbedder::new(url, cfg.timeout())?;
            Ok(if cfg.embed_fallback {
                Box::new(FallbackEmbedder {
                    primary: http,
                    fallback: HashingEmbedder,
                })
            } else {
                Box::new(http)
            })
        }
        _ => Ok(Box::new(HashingEmbedder)),
    }
}

pub fn make_normalization(cfg: &EngineConfig, passthrough: bool) -> Result<Normalization> {
    match (&cfg.normalize_url, passthrough) {
        (Some(url), false) => Ok(Normalization::Client(Box::new(HttpNormalizer::new(
            url,
            cfg.timeout(),
        )?))),
        _ => Ok(Normalization::Passthrough),
    }
}

/// Outcome JSON shared by the CLI and the service; hits carry a link to
/// the rendered pose map.
pub fn outcome_json(outcome: &RetrievalOutcome) -> Value {
    let mut v = serde_json::to_value(outcome).expect("outcome serializes");
    if let RetrievalOutcome::Hit { id, .. } = outcome {
        v["pose_url"] = json!(format!("/pose/{id}.png"));
    }
    v
}

pub fn index_info(index: &FlatIndex, path: &Path) -> Value {
    let digest: String = index
        .vector_block_digest()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    json!({
        "path": path.display().to_string(),
        "entries": index.len(),
        "dim": index.dim(),
        "format_version": INDEX_VERSION,
        "vector_block_sha256": digest,
    })
}

fn load_index(path: &Path) -> Result<FlatIndex> {
    FlatIndex::load(path).with_context(|| format!("loading index {}", path.display()))
}

fn read_pose_map(path: &Path) -> Result<PoseMap> {
    let text =
        std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    PoseMap::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn print_json(v: &Value) {
    println!(
        "{}",
        serde_json::to_string_pretty(v).expect("json serializes")
    );
}

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = EngineConfig::from_process_env(cli.config.as_deref())?;
    if let Some(level) = cli.log_level {
        cfg.log_level = level;
    }
    let _ = env_logger::Builder::new()
        .parse_filters(&cfg.log_level)
        .format_timestamp(None)
        .try_init();

    match cli.command {
        Command::BuildIndex { input, out, embed } => {
            let out = out.unwrap_or_else(|| cfg.index_path.clone());
            let records = read_ingest_jsonl(&input)?;
            let embedder = make_embedder(&cfg, embed.fixture_embedder)?;
            let index = FlatIndex::build(embed_records(records, embedder.as_ref())?)?;
            index.save(&out)?;
            print_json(&index_info(&index, &out));
        }
        Command::Retrieve {
            prompt,
            index,
            passthrough,
            alpha_u,
            embed,
        } => {
            if let Some(a) = alpha_u {
                cfg.alpha_u = a;
            }
            let index = load_index(&index.unwrap_or_else(|| cfg.index_path.clone()))?;
            let retriever = Retriever::new(
                make_normalization(&cfg, passthrough)?,
                make_embedder(&cfg, embed.fixture_embedder)?,
                GateConfig::new(cfg.alpha_u)?,
            );
            let outcome = retriever.retrieve(&UserPrompt::new(prompt)?, &index)?;
            print_json(&outcome_json(&outcome));
        }
        Command::Rasterize { input, out } => {
            let map = read_pose_map(&input)?;
            write_png(&rasterize(&map, &RasterStyle::default())?, &out)?;
        }
        Command::Oks { pred, gt } => {
            let (pred, gt) = (read_pose_map(&pred)?, read_pose_map(&gt)?);
            let score = match_and_score(&pred.people, &gt.people)?;
            println!("{score:?}");
        }
        Command::Calibrate {
            preferences,
            labels,
            out,
        } => {
            let weights = match preferences {
                Some(p) => calibrate_weights(&read_samples_csv(&p, TargetKind::Preference)?)?,
                None => Weights::default(),
            };
            let scored: Vec<(f64, bool)> = read_samples_csv(&labels, TargetKind::Label)?
                .iter()
                .map(|s| match s.target {
                    Target::Accept(l) => (aggregate_score(&s.scores, &weights), l),
                    Target::Preference(_) => unreachable!("label file yields labels"),
                })
                .collect();
            let params = CurationParams::new(weights, calibrate_threshold(&scored)?);
            let body = serde_json::to_string_pretty(&params)?;
            match out {
                Some(path) => std::fs::write(&path, &body)
                    .with_context(|| format!("writing {}", path.display()))?,
                None => println!("{body}"),
            }
        }
        Command::BenchBuild {
            annotations,
            images_root,
            captions,
            limit,
            max_subjects,
            out,
        } => {
            let text = std::fs::read_to_string(&annotations)
                .with_context(|| format!("reading {}", annotations.display()))?;
            let coco = CocoKeypoints::parse(&text)
                .with_context(|| format!("parsing {}", annotations.display()))?;
            let captions = match captions {
                Some(p) => Some(parse_coco_captions(
                    &std::fs::read_to_string(&p)
                        .with_context(|| format!("reading {}", p.display()))?,
                )?),
                None => None,
            };
            let mut items = build_benchmark(
                &coco,
                images_root.as_deref(),
                limit,
                max_subjects,
                captions.as_ref(),
            )?;
            save_benchmark(&mut items, &out)?;
            print_json(&json!({
                "items": items.len(),
                "image_ids": items.iter().map(|i| i.image_id).collect::<Vec<_>>(),
                "out": out.display().to_string(),
            }));
        }
        Command::BenchEval {
            benchmark,
            candidates,
            method,
            out,
            format,
        } => {
            let items = load_benchmark(&benchmark)?;
            let candidates = match candidates {
                Some(dir) => CandidateSet::from_dir(&method, &dir)?,
                None => CandidateSet::from_ground_truth(&items),
            };
            let plugins = cfg
                .plugins
                .iter()
                .map(|p| {
                    HttpMetricPlugin::new(&p.name, &p.url, cfg.timeout())
                        .map(|h| Box::new(h) as Box<dyn MetricPlugin>)
                })
                .collect::<Result<Vec<_>, _>>()?;
            let report = evaluate(&items, &candidates, &plugins)?;
            emit_report(&report, &out, format)?;
            print_json(&json!({
                "method": report.method,
                "items": report.rows.len(),
                "mean_oks": report.mean_oks,
                "metrics": report.metrics,
                "metric_means": report.metric_means,
            }));
        }
        Command::KernelDemo { demo } => run_kernel_demo(demo)?,
        Command::IndexInfo { index } => {
            let path = index.unwrap_or_else(|| cfg.index_path.clone());
            print_json(&index_info(&load_index(&path)?, &path));
        }
        Command::Serve {
            bind,
            index,
            pose_store,
            alpha_u,
            passthrough,
            embed,
        } => {
            if let Some(b) = bind {
                cfg.bind = b;
            }
            if let Some(i) = index {
                cfg.index_path = i;
            }
            if let Some(p) = pose_store {
                cfg.pose_store_path = p;
            }
            if let Some(a) = alpha_u {
                cfg.alpha_u = a;
            }
            cfg.validate()?;
            crate::service::serve(&cfg, passthrough, embed.fixture_embedder)?;
        }
    }
    Ok(())
}

fn run_kernel_demo(demo: KernelDemo) -> Result<()> {
    match demo {
        KernelDemo::Positions {
            latent,
            refs,
            pose,
            text_len,
            mode,
        } => {
            let layout = LayoutSpec {
                latent: parse_grid(&latent)?,
                refs: refs.iter().map(|r| parse_grid(r)).collect::<Result<_>>()?,
                pose: pose.as_deref().map(parse_grid).transpose()?,
                text_len,
            };
            let mut out = std::io::stdout().lock();
            writeln!(out, "token\trole\ti\tj")?;
            for (n, (role, pos)) in assign_positions(&layout, mode)?.iter().enumerate() {
                writeln!(out, "{n}\t{role}\t{}\t{}", pos.i, pos.j)?;
            }
        }
        KernelDemo::GradCheck {
            seed,
            features,
            d_model,
            d_attn,
            heads,
            text_tokens,
        } => {
            let mut rng = rand::rngs::StdRng::seed_from_u64(seed);
            let mut random =
                |r: usize, c: usize| Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0));
            let f_v = match features {
                Some(p) if p.extension().is_some_and(|e| e == "jsonl") => read_features_jsonl(&p)?,
                Some(p) => read_features_raw(&p)?,
                None => random(4, 6),
            };
            if text_tokens == 0 {
                bail!("--text-tokens must be at least 1");
            }
            let e_t = random(text_tokens, d_model);
            let delta = random(text_tokens, d_model);
            let config = DsmConfig {
                d_model,
                d_visual: f_v.ncols(),
                d_attn,
                heads,
            };
            let head = DsmHead::init_random(config, &mut rand::rngs::StdRng::seed_from_u64(seed))?;
            let target = GradCheckTarget::DsmForward {
                e_t: &e_t,
                f_v: &f_v,
                head: &head,
            };
            let forward = grad_check(target)?;
            let corrupted = grad_check_with(target, |g| {
                let w = &mut g[5];
                if let Some((idx, _)) = w
                    .indexed_iter()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                {
                    w[idx] *= 1.5;
                }
            })?;
            let modulate = grad_check(GradCheckTarget::Modulate {
                e_t: &e_t,
                delta: &delta,
            })?;
            print_json(&json!({
                "dsm_forward": {
                    "max_rel_error": forward.max_rel_error,
                    "worst_tensor": forward.worst_tensor,
                    "entries_checked": forward.entries_checked,
                },
                "modulate": { "max_rel_error": modulate.max_rel_error },
                "negative_control": { "max_rel_error": corrupted.max_rel_error },
            }));
        }
    }
    Ok(())
}
