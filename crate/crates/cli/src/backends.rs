//! Backend construction from the configuration.

use std::sync::Arc;

use stepframe::backends::{
    BackendKind, Backends, CheckerboardInpainter, DetectorFixture, MockDetector, MockEmbedder,
    MockVlm, RemoteDetector, RemoteEmbedder, RemoteInpainter, RemoteVlm, VlmFixture,
    FIXTURE_VERSION,
};

use crate::config::{BackendMode, PipelineConfig};
use crate::error::CliResult;

pub const VLM_FIXTURE: &str = "vlm.json";
pub const DETECTOR_FIXTURE: &str = "detector.json";

pub fn build(config: &PipelineConfig) -> CliResult<Backends> {
    let b = &config.backends;
    match b.mode {
        BackendMode::Mock => {
            let fixtures = b.fixtures.as_deref();
            let vlm = match fixtures
                .map(|d| d.join(VLM_FIXTURE))
                .filter(|p| p.is_file())
            {
                Some(p) => MockVlm::from_file(&p)?,
                None => {
                    log::warn!("no {VLM_FIXTURE} fixture; the mock model answers \"none\"");
                    MockVlm::new(VlmFixture {
                        version: FIXTURE_VERSION,
                        ..Default::default()
                    })?
                }
            };
            let detector = match fixtures
                .map(|d| d.join(DETECTOR_FIXTURE))
                .filter(|p| p.is_file())
            {
                Some(p) => MockDetector::from_file(&p)?,
                None => {
                    log::warn!("no {DETECTOR_FIXTURE} fixture; the mock detector finds nothing");
                    MockDetector::new(DetectorFixture {
                        version: FIXTURE_VERSION,
                        ..Default::default()
                    })?
                }
            };
            let embedder = Arc::new(MockEmbedder::new(
                b.mock_embedder_seed,
                MockEmbedder::DEFAULT_DIMENSION,
            ));
            Ok(Backends {
                vlm: Arc::new(vlm),
                detector: Arc::new(detector),
                inpainter: Arc::new(CheckerboardInpainter::default()),
                embedder: embedder.clone(),
                features: embedder,
            })
        }
        BackendMode::Remote => {
            let d = |kind| b.endpoint(kind).descriptor(kind, b.mode);
            let embedder = Arc::new(RemoteEmbedder::new(d(BackendKind::Embedder)?)?);
            Ok(Backends {
                vlm: Arc::new(RemoteVlm::new(d(BackendKind::Vlm)?)?),
                detector: Arc::new(RemoteDetector::new(d(BackendKind::Detector)?)?),
                inpainter: Arc::new(RemoteInpainter::new(
                    d(BackendKind::Inpainter)?,
                    b.inpainter_native_resolution.map(|[w, h]| (w, h)),
                )?),
                embedder: embedder.clone(),
                features: embedder,
            })
        }
    }
}

/// Tag recorded in generation sidecars.
pub fn inpainter_tag(config: &PipelineConfig) -> String {
    match config.backends.mode {
        BackendMode::Mock => "mock-checkerboard".to_string(),
        BackendMode::Remote => {
            let ep = &config.backends.inpainter;
            if ep.model_tag.is_empty() {
                "remote".to_string()
            } else {
                ep.model_tag.clone()
            }
        }
    }
}
