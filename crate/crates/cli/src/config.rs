//! Pipeline configuration: one TOML file, then `STEPFRAME_*` environment
//! overrides, then command-line flags.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use stepframe::backends::{BackendDescriptor, BackendKind};
use stepframe::filter::{CURATION_CUTOFF, DEFAULT_THRESHOLD};
use stepframe::generation::DEFAULT_EPOCHS;
use stepframe::ingest::SelectionStrategy;

use crate::error::{CliError, CliResult};

pub const ENV_PREFIX: &str = "STEPFRAME_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BackendMode {
    #[default]
    Mock,
    Remote,
}

impl FromStr for BackendMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "mock" => Ok(BackendMode::Mock),
            "remote" => Ok(BackendMode::Remote),
            other => Err(format!(
                "unknown backend mode {other:?} (expected mock or remote)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Flags {
    pub auto_append_hands: bool,
    pub mclip_crop: bool,
    pub full_frame_fallback: bool,
}

impl Default for Flags {
    fn default() -> Self {
        Self {
            auto_append_hands: true,
            mclip_crop: true,
            full_frame_fallback: true,
        }
    }
}

/// One remote service. Without an endpoint the backend is mocked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Endpoint {
    pub endpoint: Option<String>,
    pub model_tag: String,
    pub timeout_secs: f64,
    pub max_concurrency: usize,
}

impl Default for Endpoint {
    fn default() -> Self {
        Self {
            endpoint: None,
            model_tag: String::new(),
            timeout_secs: 120.0,
            max_concurrency: 4,
        }
    }
}

impl Endpoint {
    pub fn descriptor(&self, kind: BackendKind, mode: BackendMode) -> CliResult<BackendDescriptor> {
        let endpoint = match mode {
            BackendMode::Mock => "mock".to_string(),
            BackendMode::Remote => self.endpoint.clone().ok_or_else(|| {
                CliError::Config(format!(
                    "remote backends need an endpoint for {kind} (backends.{kind}.endpoint or {ENV_PREFIX}{}_ENDPOINT)",
                    kind.to_string().to_uppercase()
                ))
            })?,
        };
        let d = BackendDescriptor {
            kind,
            endpoint,
            model_tag: if self.model_tag.is_empty() && mode == BackendMode::Mock {
                "mock".to_string()
            } else {
                self.model_tag.clone()
            },
            timeout_secs: self.timeout_secs,
            max_concurrency: self.max_concurrency,
        };
        d.validate()?;
        Ok(d)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsConfig {
    pub mode: BackendMode,
    /// Directory with `vlm.json` and `detector.json` for the mocks.
    pub fixtures: Option<PathBuf>,
    pub vlm: Endpoint,
    pub detector: Endpoint,
    pub inpainter: Endpoint,
    pub embedder: Endpoint,
    /// Working resolution of the inpainting model, `[width, height]`.
    pub inpainter_native_resolution: Option<[u32; 2]>,
    /// Seed of the mock embedder's projection.
    pub mock_embedder_seed: u64,
}

impl Default for BackendsConfig {
    fn default() -> Self {
        Self {
            mode: BackendMode::Mock,
            fixtures: None,
            vlm: Endpoint::default(),
            detector: Endpoint::default(),
            inpainter: Endpoint::default(),
            embedder: Endpoint::default(),
            inpainter_native_resolution: None,
            mock_embedder_seed: 0,
        }
    }
}

impl BackendsConfig {
    pub fn endpoint(&self, kind: BackendKind) -> &Endpoint {
        match kind {
            BackendKind::Vlm => &self.vlm,
            BackendKind::Detector => &self.detector,
            BackendKind::Inpainter => &self.inpainter,
            BackendKind::Embedder => &self.embedder,
        }
    }

    fn endpoint_mut(&mut self, kind: BackendKind) -> &mut Endpoint {
        match kind {
            BackendKind::Vlm => &mut self.vlm,
            BackendKind::Detector => &mut self.detector,
            BackendKind::Inpainter => &mut self.inpainter,
            BackendKind::Embedder => &mut self.embedder,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Detector score below which hits are discarded, in `[0, 1]`.
    pub detection_threshold: f64,
    /// Curation cutoff on the ×100 similarity scale.
    pub similarity_threshold: f64,
    /// Timestamp rule; the dataset's default when unset.
    pub selection_strategy: Option<SelectionStrategy>,
    pub seed: u64,
    pub split_seed: u64,
    pub split_ratio: f64,
    pub epochs: u32,
    /// Method name written into evaluation reports.
    pub method: String,
    /// Where audit logs go; `<stage output parent>/audit` when unset.
    pub audit_dir: Option<PathBuf>,
    /// Where `curate` writes frames; `<manifest dir>/frames` when unset.
    pub frames_dir: Option<PathBuf>,
    pub flags: Flags,
    pub backends: BackendsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            detection_threshold: DEFAULT_THRESHOLD,
            similarity_threshold: CURATION_CUTOFF,
            selection_strategy: None,
            seed: 0,
            split_seed: 0,
            split_ratio: 0.8,
            epochs: DEFAULT_EPOCHS,
            method: "stepframe".to_string(),
            audit_dir: None,
            frames_dir: None,
            flags: Flags::default(),
            backends: BackendsConfig::default(),
        }
    }
}

fn parse_env<T: FromStr>(key: &str, value: &str) -> CliResult<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| CliError::Config(format!("{key}={value:?}: {e}")))
}

fn parse_bool(key: &str, value: &str) -> CliResult<bool> {
    match value.trim().to_lowercase().as_str() {
        "1" | "true" | "yes" | "on" => Ok(true),
        "0" | "false" | "no" | "off" => Ok(false),
        _ => Err(CliError::Config(format!(
            "{key}={value:?}: expected a boolean"
        ))),
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Reads the file, or the defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                Self::from_toml(&text).map_err(|e| match e {
                    CliError::Config(m) => CliError::Config(format!("{}: {m}", p.display())),
                    other => other,
                })
            }
        }
    }

    /// Applies `STEPFRAME_*` variables. Unknown `STEPFRAME_*` names are errors
    /// so typos do not pass silently.
    pub fn apply_env<I, K, V>(&mut self, vars: I) -> CliResult<()>
    where
        I: IntoIterator<Item = (K, V)>,
        K: AsRef<str>,
        V: AsRef<str>,
    {
        for (key, value) in vars {
            let (key, value) = (key.as_ref(), value.as_ref());
            let Some(name) = key.strip_prefix(ENV_PREFIX) else {
                continue;
            };
            match name {
                "DETECTION_THRESHOLD" => self.detection_threshold = parse_env(key, value)?,
                "SIMILARITY_THRESHOLD" => self.similarity_threshold = parse_env(key, value)?,
                "SELECTION_STRATEGY" => self.selection_strategy = Some(parse_env(key, value)?),
                "SEED" => self.seed = parse_env(key, value)?,
                "SPLIT_SEED" => self.split_seed = parse_env(key, value)?,
                "SPLIT_RATIO" => self.split_ratio = parse_env(key, value)?,
                "EPOCHS" => self.epochs = parse_env(key, value)?,
                "METHOD" => self.method = value.to_string(),
                "AUDIT_DIR" => self.audit_dir = Some(PathBuf::from(value)),
                "FRAMES_DIR" => self.frames_dir = Some(PathBuf::from(value)),
                "AUTO_APPEND_HANDS" => self.flags.auto_append_hands = parse_bool(key, value)?,
                "MCLIP_CROP" => self.flags.mclip_crop = parse_bool(key, value)?,
                "FULL_FRAME_FALLBACK" => self.flags.full_frame_fallback = parse_bool(key, value)?,
                "BACKEND" => self.backends.mode = parse_env(key, value)?,
                "FIXTURES" => self.backends.fixtures = Some(PathBuf::from(value)),
                "LOG" | "CONFIG" => {}
                _ => {
                    let (kind, field) = name
                        .split_once('_')
                        .ok_or_else(|| CliError::Config(format!("unknown variable {key}")))?;
                    let kind = match kind {
                        "VLM" => BackendKind::Vlm,
                        "DETECTOR" => BackendKind::Detector,
                        "INPAINTER" => BackendKind::Inpainter,
                        "EMBEDDER" => BackendKind::Embedder,
                        _ => return Err(CliError::Config(format!("unknown variable {key}"))),
                    };
                    let ep = self.backends.endpoint_mut(kind);
                    match field {
                        "ENDPOINT" => ep.endpoint = Some(value.to_string()),
                        "MODEL" => ep.model_tag = value.to_string(),
                        "TIMEOUT" => ep.timeout_secs = parse_env(key, value)?,
                        "MAX_CONCURRENCY" => ep.max_concurrency = parse_env(key, value)?,
                        _ => return Err(CliError::Config(format!("unknown variable {key}"))),
                    }
                }
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> CliResult<()> {
        if !(0.0..=1.0).contains(&self.detection_threshold) {
            return Err(CliError::Config(format!(
                "detection_threshold {} outside [0, 1]",
                self.detection_threshold
            )));
        }
        if !(0.0..=100.0).contains(&self.similarity_threshold) {
            return Err(CliError::Config(format!(
                "similarity_threshold {} outside [0, 100]",
                self.similarity_threshold
            )));
        }
        if !(self.split_ratio > 0.0 && self.split_ratio < 1.0) {
            return Err(CliError::Config(format!(
                "split_ratio {} must lie strictly between 0 and 1",
                self.split_ratio
            )));
        }
        if self.epochs == 0 {
            return Err(CliError::Config("epochs must be at least 1".into()));
        }
        if let Some([w, h]) = self.backends.inpainter_native_resolution {
            if w == 0 || h == 0 {
                return Err(CliError::Config(
                    "inpainter_native_resolution must be positive".into(),
                ));
            }
        }
        for kind in [
            BackendKind::Vlm,
            BackendKind::Detector,
            BackendKind::Inpainter,
            BackendKind::Embedder,
        ] {
            self.backends
                .endpoint(kind)
                .descriptor(kind, self.backends.mode)?;
        }
        if self.backends.mode == BackendMode::Mock {
            if let Some(dir) = &self.backends.fixtures {
                if !dir.is_dir() {
                    return Err(CliError::Config(format!(
                        "fixture directory {} does not exist",
                        dir.display()
                    )));
                }
            }
        }
        for dir in [&self.audit_dir, &self.frames_dir].into_iter().flatten() {
            ensure_dir(dir)?;
        }
        Ok(())
    }
}

/// Creates a directory; failure means the configuration points somewhere unusable.
pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Config(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        assert_eq!(c.detection_threshold, 0.3);
        assert_eq!(c.similarity_threshold, 80.0);
        assert!(c.flags.auto_append_hands && c.flags.mclip_crop && c.flags.full_frame_fallback);
    }

    #[test]
    fn toml_round_trip() {
        let text = r#"
            detection_threshold = 0.25
            selection_strategy = "lego_style"
            seed = 9

            [flags]
            mclip_crop = false

            [backends]
            mode = "remote"

            [backends.vlm]
            endpoint = "http://vlm:8000"
            [backends.detector]
            endpoint = "http://det:8000"
            [backends.inpainter]
            endpoint = "http://inp:8000"
            [backends.embedder]
            endpoint = "http://emb:8000"
            timeout_secs = 5.0
        "#;
        let c = PipelineConfig::from_toml(text).unwrap();
        c.validate().unwrap();
        assert_eq!(c.detection_threshold, 0.25);
        assert_eq!(c.selection_strategy, Some(SelectionStrategy::LegoStyle));
        assert!(!c.flags.mclip_crop);
        assert!(c.flags.full_frame_fallback);
        assert_eq!(c.backends.embedder.timeout_secs, 5.0);
        let back = PipelineConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(matches!(
            PipelineConfig::from_toml("detection_treshold = 0.3"),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn env_overrides_file() {
        let mut c = PipelineConfig::from_toml("detection_threshold = 0.4").unwrap();
        c.apply_env([
            ("STEPFRAME_DETECTION_THRESHOLD", "0.35"),
            ("STEPFRAME_EMBEDDER_ENDPOINT", "http://e:1"),
            ("STEPFRAME_EMBEDDER_TIMEOUT", "3"),
            ("STEPFRAME_MCLIP_CROP", "false"),
            ("PATH", "/usr/bin"),
        ])
        .unwrap();
        assert_eq!(c.detection_threshold, 0.35);
        assert_eq!(c.backends.embedder.endpoint.as_deref(), Some("http://e:1"));
        assert_eq!(c.backends.embedder.timeout_secs, 3.0);
        assert!(!c.flags.mclip_crop);
    }

    #[test]
    fn bad_env_values_are_config_errors() {
        let mut c = PipelineConfig::default();
        assert!(matches!(
            c.apply_env([("STEPFRAME_SEED", "many")]),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            c.apply_env([("STEPFRAME_NOPE", "1")]),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn out_of_range_values_fail_validation() {
        for text in [
            "detection_threshold = 1.5",
            "similarity_threshold = -1.0",
            "split_ratio = 1.0",
            "epochs = 0",
        ] {
            let c = PipelineConfig::from_toml(text).unwrap();
            assert_eq!(c.validate().unwrap_err().exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn remote_mode_needs_endpoints() {
        let mut c = PipelineConfig::default();
        c.backends.mode = BackendMode::Remote;
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }

    #[test]
    fn uncreatable_directory_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("plain");
        std::fs::write(&file, "x").unwrap();
        let c = PipelineConfig {
            audit_dir: Some(file.join("audit")),
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(CliError::Config(_))));
    }
}
