//! Engine configuration: defaults, then a TOML file, then `ASTRA_*`
//! environment variables. Command-line flags are applied last by callers.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use astra_core::retrieval::{DEFAULT_ALPHA_U, DEFAULT_CLIENT_TIMEOUT};

pub const ENV_CONFIG: &str = "ASTRA_CONFIG";
pub const ENV_INDEX_PATH: &str = "ASTRA_INDEX_PATH";
pub const ENV_EMBED_URL: &str = "ASTRA_EMBED_URL";
pub const ENV_NORMALIZE_URL: &str = "ASTRA_NORMALIZE_URL";
pub const ENV_ALPHA_U: &str = "ASTRA_ALPHA_U";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PluginEndpoint {
    pub name: String,
    pub url: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub index_path: PathBuf,
    pub pose_store_path: PathBuf,
    pub alpha_u: f64,
    pub embed_url: Option<String>,
    pub normalize_url: Option<String>,
    /// Use the offline hashing embedder when the embedding service fails.
    pub embed_fallback: bool,
    pub plugins: Vec<PluginEndpoint>,
    pub timeout_ms: u64,
    pub log_level: String,
    pub bind: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            index_path: PathBuf::from("astra.idx"),
            pose_store_path: PathBuf::from("poses"),
            alpha_u: DEFAULT_ALPHA_U,
            embed_url: None,
            normalize_url: None,
            embed_fallback: false,
            plugins: Vec::new(),
            timeout_ms: DEFAULT_CLIENT_TIMEOUT.as_millis() as u64,
            log_level: "info".into(),
            bind: "127.0.0.1:8080".into(),
        }
    }
}

impl EngineConfig {
    pub fn from_toml_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// Layers file and environment over the defaults. `file` wins over
    /// `ASTRA_CONFIG` when both name a config file.
    pub fn load(file: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self> {
        let file = file
            .map(Path::to_path_buf)
            .or_else(|| env(ENV_CONFIG).map(PathBuf::from));
        let mut cfg = match file {
            Some(path) => Self::from_toml_file(&path)?,
            None => Self::default(),
        };
        if let Some(v) = env(ENV_INDEX_PATH) {
            cfg.index_path = v.into();
        }
        if let Some(v) = env(ENV_EMBED_URL) {
            cfg.embed_url = Some(v);
        }
        if let Some(v) = env(ENV_NORMALIZE_URL) {
            cfg.normalize_url = Some(v);
        }
        if let Some(v) = env(ENV_ALPHA_U) {
            cfg.alpha_u = v
                .trim()
                .parse()
                .with_context(|| format!("{ENV_ALPHA_U}={v:?} is not a number"))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_process_env(file: Option<&Path>) -> Result<Self> {
        Self::load(file, |k| std::env::var(k).ok().filter(|v| !v.is_empty()))
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha_u) {
            bail!("alpha_u must lie in [0, 1], got {}", self.alpha_u);
        }
        if self.timeout_ms == 0 {
            bail!("timeout_ms must be positive");
        }
        Ok(())
    }

    pub fn timeout(&self) -> std::time::Duration {
        std::time::Duration::from_millis(self.timeout_ms)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn env(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs
            .iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn precedence_file_then_env() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("astra.toml");
        std::fs::write(
            &path,
            "index_path = \"from_file.idx\"\nalpha_u = 0.6\n[[plugins]]\nname = \"dino\"\nurl = \"http://x\"\n",
        )
        .unwrap();

        let cfg = EngineConfig::load(Some(&path), env(&[])).unwrap();
        assert_eq!(cfg.index_path, PathBuf::from("from_file.idx"));
        assert_eq!(cfg.alpha_u, 0.6);
        assert_eq!(cfg.plugins.len(), 1);
        assert_eq!(cfg.timeout_ms, 2000);

        let cfg = EngineConfig::load(
            None,
            env(&[
                (ENV_CONFIG, path.to_str().unwrap()),
                (ENV_ALPHA_U, "0.7"),
                (ENV_EMBED_URL, "http://embed"),
            ]),
        )
        .unwrap();
        assert_eq!(cfg.index_path, PathBuf::from("from_file.idx"));
        assert_eq!(cfg.alpha_u, 0.7);
        assert_eq!(cfg.embed_url.as_deref(), Some("http://embed"));
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(EngineConfig::load(None, env(&[(ENV_ALPHA_U, "1.5")])).is_err());
        assert!(EngineConfig::load(None, env(&[(ENV_ALPHA_U, "high")])).is_err());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "unknown_key = 1\n").unwrap();
        assert!(EngineConfig::load(Some(&path), env(&[])).is_err());
    }
}
