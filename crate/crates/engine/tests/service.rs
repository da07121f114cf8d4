mod common;

use std::net::SocketAddr;
use std::sync::Arc;

use astra_core::pose::{encode_png, rasterize, RasterStyle};
use astra_engine::config::EngineConfig;
use astra_engine::service::{router, AppState};
use common::{astra, build_fixture_index, sample_pose, stdout, write_json};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    base: String,
    _dir: tempfile::TempDir,
    index_path: std::path::PathBuf,
}

fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let index_path = build_fixture_index(dir.path());
    let store = dir.path().join("poses");
    std::fs::create_dir(&store).unwrap();
    write_json(&store.join("pose_042.json"), &sample_pose(0.0));

    let cfg = EngineConfig {
        index_path: index_path.clone(),
        pose_store_path: store,
        ..EngineConfig::default()
    };
    let state = Arc::new(AppState::load(&cfg, true, true).unwrap());
    let (tx, rx) = std::sync::mpsc::channel::<SocketAddr>();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()
            .unwrap();
        rt.block_on(async move {
            let l = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(l.local_addr().unwrap()).unwrap();
            axum::serve(l, router(state)).await.unwrap();
        });
    });
    Server {
        base: format!("http://{}", rx.recv().unwrap()),
        _dir: dir,
        index_path,
    }
}

#[test]
fn endpoints() {
    let s = start();
    let c = Client::new();

    let health: Value = c
        .get(format!("{}/health", s.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(health, json!({"status": "ok", "index_entries": 100}));

    // Service and CLI agree on index metadata.
    let info: Value = c
        .get(format!("{}/index/info", s.base))
        .send()
        .unwrap()
        .json()
        .unwrap();
    let cli = astra()
        .arg("index-info")
        .arg("--index")
        .arg(&s.index_path)
        .output()
        .unwrap();
    assert_eq!(info, serde_json::from_str::<Value>(&stdout(&cli)).unwrap());

    let prompt = "two children sitting cross legged in a park";
    let hit: Value = c
        .post(format!("{}/retrieve", s.base))
        .json(&json!({ "prompt": prompt }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(hit["kind"], "hit");
    assert_eq!(hit["pose_ref"], "pose_042");
    let cli = astra()
        .args([
            "retrieve",
            "--prompt",
            prompt,
            "--passthrough",
            "--fixture-embedder",
            "--index",
        ])
        .arg(&s.index_path)
        .output()
        .unwrap();
    assert_eq!(hit, serde_json::from_str::<Value>(&stdout(&cli)).unwrap());

    let png = c
        .get(format!("{}{}", s.base, hit["pose_url"].as_str().unwrap()))
        .send()
        .unwrap();
    assert_eq!(png.status(), StatusCode::OK);
    assert_eq!(png.headers()["content-type"], "image/png");
    let want = encode_png(&rasterize(&sample_pose(0.0), &RasterStyle::default()).unwrap()).unwrap();
    assert_eq!(png.bytes().unwrap().to_vec(), want);

    let bypass: Value = c
        .post(format!("{}/retrieve", s.base))
        .json(&json!({ "prompt": "quarterly spreadsheet reconciliation invoice" }))
        .send()
        .unwrap()
        .json()
        .unwrap();
    assert_eq!(bypass["kind"], "bypassed");
    assert!(bypass.get("pose_url").is_none());

    let empty = c
        .post(format!("{}/retrieve", s.base))
        .json(&json!({ "prompt": "   " }))
        .send()
        .unwrap();
    assert_eq!(empty.status(), StatusCode::BAD_REQUEST);

    for path in ["/pose/7.png", "/pose/999.png", "/pose/abc"] {
        let r = c.get(format!("{}{path}", s.base)).send().unwrap();
        assert_eq!(r.status(), StatusCode::NOT_FOUND, "{path}");
    }
}

#[test]
fn startup_fails_on_corrupt_index() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.idx");
    std::fs::write(&bad, b"not an index").unwrap();
    let cfg = EngineConfig {
        index_path: bad.clone(),
        pose_store_path: dir.path().to_path_buf(),
        ..EngineConfig::default()
    };
    assert!(AppState::load(&cfg, true, true).is_err());

    let out = astra()
        .arg("serve")
        .arg("--index")
        .arg(&bad)
        .arg("--pose-store")
        .arg(dir.path())
        .args(["--bind", "127.0.0.1:0", "--fixture-embedder"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}
