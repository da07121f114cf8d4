#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use astra_core::pose::{Keypoint, PoseMap, PoseSkeleton};

pub fn core_fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures")
        .join(name)
}

/// The `astra` binary with a clean `ASTRA_*` environment.
pub fn astra() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_astra"));
    for key in [
        "ASTRA_CONFIG",
        "ASTRA_INDEX_PATH",
        "ASTRA_EMBED_URL",
        "ASTRA_NORMALIZE_URL",
        "ASTRA_ALPHA_U",
    ] {
        cmd.env_remove(key);
    }
    cmd
}

pub fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

pub fn sample_pose(shift: f64) -> PoseMap {
    let mut p = PoseSkeleton::empty(3000.0);
    let pts = [
        (0, 40.0, 20.0),
        (5, 30.0, 40.0),
        (6, 50.0, 40.0),
        (7, 25.0, 60.0),
        (8, 55.0, 60.0),
        (11, 35.0, 75.0),
        (12, 45.0, 75.0),
    ];
    for (k, x, y) in pts {
        p.keypoints[k] = Keypoint::visible(x + shift, y);
    }
    PoseMap::new(128, 128, vec![p]).unwrap()
}

pub fn write_json(path: &Path, value: &impl serde::Serialize) {
    std::fs::write(path, serde_json::to_string_pretty(value).unwrap()).unwrap();
}

/// Builds the 100-entry fixture index with the offline embedder.
pub fn build_fixture_index(dir: &Path) -> PathBuf {
    let out = dir.join("fixture.idx");
    let res = astra()
        .arg("build-index")
        .arg(core_fixture("prompts.jsonl"))
        .arg("--out")
        .arg(&out)
        .arg("--fixture-embedder")
        .output()
        .unwrap();
    assert!(res.status.success(), "{}", stderr(&res));
    out
}
