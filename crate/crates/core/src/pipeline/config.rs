//! Layered configuration: command-line flags over environment variables over
//! a TOML file over built-in defaults.
//!
//! Endpoints are configured per role (`composer`, `propositionizer`,
//! `scorer`, `compressor`, `reader`). For role `composer` the environment
//! variables are `HOPSUM_COMPOSER_URL`, `HOPSUM_COMPOSER_MODEL`,
//! `HOPSUM_COMPOSER_TOKEN_VAR` and `HOPSUM_COMPOSER_TIMEOUT`; the file section
//! is `[endpoints.composer]`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EvalConfig, PipelineError, SynthesisConfig};
use crate::gateway::EndpointConfig;

pub const ROLES: [&str; 5] = ["composer", "propositionizer", "scorer", "compressor", "reader"];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub endpoints: BTreeMap<String, EndpointConfig>,
    pub synthesis: Option<SynthesisConfig>,
    pub eval: Option<EvalConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let cfg: FileConfig = toml::from_str(text).map_err(|e| e.to_string())?;
        if let Some(bad) = cfg.endpoints.keys().find(|k| !ROLES.contains(&k.as_str())) {
            return Err(format!("unknown endpoint role `{bad}`"));
        }
        Ok(cfg)
    }
}

/// Endpoint values given on the command line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct EndpointOverrides {
    pub base_url: Option<String>,
    pub model_name: Option<String>,
    pub token_env: Option<String>,
    pub timeout_secs: Option<f64>,
    pub max_in_flight: Option<usize>,
}

fn env_prefix(role: &str) -> String {
    format!("HOPSUM_{}", role.to_uppercase().replace('-', "_"))
}

/// Resolves one role's endpoint. `env` looks up environment variables; pass
/// `|k| std::env::var(k).ok()` outside tests.
pub fn resolve_endpoint(
    role: &str,
    file: &FileConfig,
    env: &dyn Fn(&str) -> Option<String>,
    cli: &EndpointOverrides,
) -> Result<EndpointConfig, PipelineError> {
    let mut cfg = file.endpoints.get(role).cloned().unwrap_or_default();
    let prefix = env_prefix(role);
    if let Some(v) = env(&format!("{prefix}_URL")) {
        cfg.base_url = v;
    }
    if let Some(v) = env(&format!("{prefix}_MODEL")) {
        cfg.model_name = v;
    }
    if let Some(v) = env(&format!("{prefix}_TOKEN_VAR")) {
        cfg.token_env = Some(v);
    }
    if let Some(v) = env(&format!("{prefix}_TIMEOUT")) {
        cfg.timeout_secs = v
            .parse()
            .map_err(|_| PipelineError::Config(format!("{prefix}_TIMEOUT: not a number: {v:?}")))?;
    }
    if let Some(v) = &cli.base_url {
        cfg.base_url = v.clone();
    }
    if let Some(v) = &cli.model_name {
        cfg.model_name = v.clone();
    }
    if let Some(v) = &cli.token_env {
        cfg.token_env = Some(v.clone());
    }
    if let Some(v) = cli.timeout_secs {
        cfg.timeout_secs = v;
    }
    if let Some(v) = cli.max_in_flight {
        cfg.max_in_flight = v;
    }
    cfg.validate()
        .map_err(|e| PipelineError::Config(format!("endpoint `{role}`: {e}")))?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    const FILE: &str = r#"
[endpoints.composer]
base_url = "http://file:8000/v1"
model_name = "file-model"
timeout_secs = 30

[synthesis]
k = 4
"#;

    #[test]
    fn precedence_is_cli_env_file_default() {
        let file = FileConfig::parse(FILE).unwrap();
        assert_eq!(file.synthesis.as_ref().unwrap().k, 4);
        let no_env = |_: &str| None;
        let from_file = resolve_endpoint("composer", &file, &no_env, &EndpointOverrides::default()).unwrap();
        assert_eq!(from_file.base_url, "http://file:8000/v1");
        assert_eq!(from_file.timeout_secs, 30.0);

        let env = |k: &str| match k {
            "HOPSUM_COMPOSER_URL" => Some("http://env:1/v1".to_string()),
            "HOPSUM_COMPOSER_MODEL" => Some("env-model".to_string()),
            _ => None,
        };
        let from_env = resolve_endpoint("composer", &file, &env, &EndpointOverrides::default()).unwrap();
        assert_eq!((from_env.base_url.as_str(), from_env.model_name.as_str()), ("http://env:1/v1", "env-model"));

        let cli = EndpointOverrides {
            base_url: Some("http://cli:2/v1".into()),
            ..Default::default()
        };
        let from_cli = resolve_endpoint("composer", &file, &env, &cli).unwrap();
        assert_eq!(from_cli.base_url, "http://cli:2/v1");
        assert_eq!(from_cli.model_name, "env-model");

        let default = resolve_endpoint("reader", &file, &no_env, &EndpointOverrides::default()).unwrap();
        assert!(default.is_mock());
    }

    #[test]
    fn bad_config_is_reported() {
        assert!(FileConfig::parse("[endpoints.unknown]\nbase_url = \"x\"").is_err());
        assert!(FileConfig::parse("nonsense = 1").is_err());
        let env = |k: &str| (k == "HOPSUM_SCORER_TIMEOUT").then(|| "soon".to_string());
        assert!(resolve_endpoint("scorer", &FileConfig::default(), &env, &EndpointOverrides::default()).is_err());
        let cli = EndpointOverrides {
            max_in_flight: Some(0),
            ..Default::default()
        };
        assert!(resolve_endpoint("scorer", &FileConfig::default(), &|_| None, &cli).is_err());
    }
}
