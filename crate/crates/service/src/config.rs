use std::path::{Path, PathBuf};

use autoreview_core::extraction::RemoteConfig;
use autoreview_core::{Error, FieldSpec, Result, Strategy};
use serde::{Deserialize, Serialize};

/// Which implementation answers extraction and verification requests.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Builtin,
    Remote,
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "builtin" => Ok(Backend::Builtin),
            "remote" => Ok(Backend::Remote),
            other => Err(Error::Config(format!("unknown backend {other:?} (builtin|remote)"))),
        }
    }
}

/// Service settings, read from a TOML file and then overridden by
/// `AUTOREVIEW_*` environment variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    /// Write-ahead log file; `None` keeps everything in memory.
    pub store_path: Option<PathBuf>,
    pub model_dir: PathBuf,
    /// JSON list of field specs; the built-in three when unset.
    pub specs_file: Option<PathBuf>,
    pub strategy: Strategy,
    /// Run the error corrector before review.
    pub correct: bool,
    pub backend: Backend,
    pub remote: RemoteConfig,
    /// Static bearer token required on every endpoint except `/healthz`.
    pub bearer_token: Option<String>,
    pub page_size: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            listen: "127.0.0.1:8080".into(),
            store_path: Some(PathBuf::from("autoreview-store.jsonl")),
            model_dir: PathBuf::from("models"),
            specs_file: None,
            strategy: Strategy::Hybrid,
            correct: true,
            backend: Backend::Builtin,
            remote: RemoteConfig::default(),
            bearer_token: None,
            page_size: 50,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("service config: {e}")))
    }

    /// Reads `path` (defaults when `None`) and applies environment overrides.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml_str(&text)?
            }
            None => ServiceConfig::default(),
        };
        cfg.apply_vars(|k| std::env::var(k).ok())?;
        Ok(cfg)
    }

    pub fn apply_vars(&mut self, get: impl Fn(&str) -> Option<String>) -> Result<()> {
        if let Some(v) = get("AUTOREVIEW_LISTEN") {
            self.listen = v;
        }
        if let Some(v) = get("AUTOREVIEW_STORE") {
            self.store_path = if v.is_empty() { None } else { Some(v.into()) };
        }
        if let Some(v) = get("AUTOREVIEW_MODELS") {
            self.model_dir = v.into();
        }
        if let Some(v) = get("AUTOREVIEW_TOKEN") {
            self.bearer_token = Some(v);
        }
        if let Some(v) = get("AUTOREVIEW_BACKEND") {
            self.backend = v.parse()?;
        }
        if let Some(v) = get("AUTOREVIEW_STRATEGY") {
            self.strategy = v.parse()?;
        }
        self.remote = self.remote.clone().with_env_overrides()?;
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.page_size == 0 {
            return Err(Error::Config("page_size must be positive".into()));
        }
        if self.bearer_token.as_deref() == Some("") {
            return Err(Error::Config("bearer_token must not be empty".into()));
        }
        self.remote.validate()
    }

    pub fn specs(&self) -> Result<Vec<FieldSpec>> {
        load_specs(self.specs_file.as_deref())
    }
}

/// Field specs from a JSON file, or the built-in set.
pub fn load_specs(path: Option<&Path>) -> Result<Vec<FieldSpec>> {
    let Some(path) = path else {
        return Ok(FieldSpec::defaults());
    };
    let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let specs: Vec<FieldSpec> =
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let problems: Vec<String> = specs.iter().flat_map(|s| s.validate()).collect();
    if specs.is_empty() || !problems.is_empty() {
        return Err(Error::Config(format!("{}: invalid field specs: {}", path.display(), problems.join("; "))));
    }
    Ok(specs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_environment() {
        let mut cfg = ServiceConfig::from_toml_str(
            r#"
            listen = "0.0.0.0:9000"
            model_dir = "m"
            strategy = "DirectExtraction"
            "#,
        )
        .unwrap();
        assert_eq!(cfg.listen, "0.0.0.0:9000");
        assert_eq!(cfg.strategy, Strategy::DirectExtraction);
        cfg.apply_vars(|k| match k {
            "AUTOREVIEW_LISTEN" => Some("127.0.0.1:1".into()),
            "AUTOREVIEW_STORE" => Some(String::new()),
            "AUTOREVIEW_TOKEN" => Some("s3cret".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(cfg.listen, "127.0.0.1:1");
        assert_eq!(cfg.store_path, None);
        assert_eq!(cfg.bearer_token.as_deref(), Some("s3cret"));
    }

    #[test]
    fn bad_values_are_config_errors() {
        assert!(ServiceConfig::from_toml_str("nonsense = 1").is_err());
        let mut cfg = ServiceConfig::default();
        assert!(cfg.apply_vars(|k| (k == "AUTOREVIEW_BACKEND").then(|| "gpu".into())).is_err());
    }
}
