//! App configuration: backend selection, pipeline defaults, and report
//! output. Config files are JSON with `${VAR}` environment interpolation in
//! string values; secrets are never stored, only the names of the variables
//! holding them. Referenced paths are checked eagerly at load time.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use omniroute_core::backend::{BackendConfig, HttpConfig, MockClient, MockRuleSpec, ModelClient};
use omniroute_core::pipeline::PipelineConfig;
use omniroute_core::planner::{PlannerMode, PlannerPolicy};
use omniroute_core::prompts::{DecideTemplate, PromptSet};

use crate::commands::CliError;

/// Which model client to construct. Mock rules can be inlined or referenced
/// as an ordered JSON array file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendSpec {
    Mock {
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        rules: Vec<MockRuleSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        rules_file: Option<PathBuf>,
    },
    Http(HttpConfig),
}

impl BackendSpec {
    /// Parse the `--backend` flag: `mock:<rules.json>` or `http:<config.json>`.
    pub fn from_flag(flag: &str) -> Result<Self, CliError> {
        if let Some(path) = flag.strip_prefix("mock:") {
            return Ok(BackendSpec::Mock { rules: vec![], rules_file: Some(PathBuf::from(path)) });
        }
        if let Some(path) = flag.strip_prefix("http:") {
            let text = std::fs::read_to_string(path)
                .map_err(|e| CliError::Data(format!("cannot read backend config {path}: {e}")))?;
            let mut value: Value = serde_json::from_str(&text)
                .map_err(|e| CliError::Data(format!("backend config {path}: {e}")))?;
            interpolate_env(&mut value)?;
            let cfg: HttpConfig = serde_json::from_value(value)
                .map_err(|e| CliError::Data(format!("backend config {path}: {e}")))?;
            return Ok(BackendSpec::Http(cfg));
        }
        Err(CliError::Usage(format!(
            "unrecognized --backend value {flag:?} (expected mock:<rules.json> or http:<config.json>)"
        )))
    }

    fn resolve_paths(&mut self, base: &Path) {
        if let BackendSpec::Mock { rules_file: Some(path), .. } = self {
            if path.is_relative() {
                *path = base.join(&path);
            }
        }
    }

    fn check_paths(&self) -> Result<(), CliError> {
        if let BackendSpec::Mock { rules_file: Some(path), .. } = self {
            if !path.exists() {
                return Err(CliError::Data(format!("mock rules file does not exist: {}", path.display())));
            }
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn ModelClient>, CliError> {
        match self {
            BackendSpec::Mock { rules, rules_file } => {
                let mut all = rules.clone();
                if let Some(path) = rules_file {
                    let text = std::fs::read_to_string(path)
                        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
                    let from_file: Vec<MockRuleSpec> = serde_json::from_str(&text)
                        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
                    all.extend(from_file);
                }
                Ok(Arc::new(MockClient::from_specs(all)))
            }
            BackendSpec::Http(cfg) => BackendConfig::Http(cfg.clone())
                .build()
                .map_err(|e| CliError::Backend(e.to_string())),
        }
    }
}

fn default_k() -> u32 {
    omniroute_core::topology::DEFAULT_INTERLEAVE_DENSITY
}

fn default_duration_tolerance() -> f64 {
    omniroute_core::topology::DEFAULT_DURATION_TOLERANCE_S
}

fn default_max_tokens() -> u32 {
    1024
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("reports")
}

fn default_concurrency() -> usize {
    8
}

fn default_true() -> bool {
    true
}

/// The full operator configuration. Every field except the backend has a
/// working default, and every field can be overridden by a CLI flag.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AppConfig {
    pub backend: BackendSpec,
    #[serde(default)]
    pub policy: PlannerMode,
    #[serde(default = "default_true")]
    pub repair_format_by_task: bool,
    #[serde(default = "default_k")]
    pub interleave_k: u32,
    /// Allowed audio/video duration mismatch before interleaving errors.
    #[serde(default = "default_duration_tolerance")]
    pub duration_tolerance_s: f64,
    #[serde(default)]
    pub template: DecideTemplate,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub media_root: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_dir: Option<PathBuf>,
    #[serde(default = "default_true")]
    pub check_media: bool,
}

impl AppConfig {
    pub fn with_backend(backend: BackendSpec) -> Self {
        AppConfig {
            backend,
            policy: PlannerMode::default(),
            repair_format_by_task: true,
            interleave_k: default_k(),
            duration_tolerance_s: default_duration_tolerance(),
            template: DecideTemplate::default(),
            max_tokens: default_max_tokens(),
            out_dir: default_out_dir(),
            concurrency: default_concurrency(),
            media_root: None,
            prompt_dir: None,
            check_media: true,
        }
    }

    /// Load a config file: parse, interpolate `${VAR}`, resolve relative
    /// paths against the file's directory, and check referenced paths.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Data(format!("cannot read config {}: {e}", path.display())))?;
        let mut value: Value = serde_json::from_str(&text)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;
        interpolate_env(&mut value)?;
        let mut cfg: AppConfig = serde_json::from_value(value)
            .map_err(|e| CliError::Data(format!("config {}: {e}", path.display())))?;

        let base = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        cfg.backend.resolve_paths(&base);
        for p in [&mut cfg.media_root, &mut cfg.prompt_dir].into_iter().flatten() {
            if p.is_relative() {
                *p = base.join(&p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), CliError> {
        self.backend.check_paths()?;
        for (name, path) in [("media_root", &self.media_root), ("prompt_dir", &self.prompt_dir)] {
            if let Some(p) = path {
                if !p.exists() {
                    return Err(CliError::Data(format!("{name} does not exist: {}", p.display())));
                }
            }
        }
        Ok(())
    }

    pub fn prompts(&self) -> Result<PromptSet, CliError> {
        match &self.prompt_dir {
            Some(dir) => PromptSet::load_dir(dir).map_err(|e| CliError::Data(format!("prompt dir: {e}"))),
            None => Ok(PromptSet::default()),
        }
    }

    /// Assemble the pipeline config this app config implies.
    pub fn pipeline(&self, seed: u64) -> Result<PipelineConfig, CliError> {
        let mut cfg = PipelineConfig {
            policy: PlannerPolicy { mode: self.policy, repair_format_by_task: self.repair_format_by_task },
            template: self.template,
            max_in_flight: self.concurrency,
            prompts: self.prompts()?,
            ..Default::default()
        };
        cfg.decoding.seed = seed;
        cfg.decoding.max_tokens = self.max_tokens;
        cfg.build.interleave_k = self.interleave_k;
        cfg.build.duration_tolerance_s = self.duration_tolerance_s;
        Ok(cfg)
    }
}

/// Expand `${VAR}` in every string value. Unset variables are data errors so
/// misconfigured secrets fail loudly at load time.
pub fn interpolate_env(value: &mut Value) -> Result<(), CliError> {
    match value {
        Value::String(s) => {
            if s.contains("${") {
                *s = expand_env(s)?;
            }
        }
        Value::Array(items) => {
            for item in items {
                interpolate_env(item)?;
            }
        }
        Value::Object(map) => {
            for (_, item) in map.iter_mut() {
                interpolate_env(item)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn expand_env(input: &str) -> Result<String, CliError> {
    let mut out = String::with_capacity(input.len());
    let mut rest = input;
    while let Some(start) = rest.find("${") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find('}') else {
            return Err(CliError::Data(format!("unterminated ${{...}} in config value {input:?}")));
        };
        let var = &after[..end];
        let value = std::env::var(var)
            .map_err(|_| CliError::Data(format!("environment variable {var} referenced in config is not set")))?;
        out.push_str(&value);
        rest = &after[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}
