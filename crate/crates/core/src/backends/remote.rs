//! HTTP/JSON clients for model services.

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{self, *};
use super::{
    normalize, BackendDescriptor, BackendError, BackendKind, BackendResult, ChatRequest, Detection,
    Detector, Embedder, FeatureBackend, Inpainter, Limiter, Role, VisionLanguage,
};
use crate::raster::{BBox, Frame, Mask};

struct HttpClient {
    descriptor: BackendDescriptor,
    agent: ureq::Agent,
    limiter: Limiter,
}

impl HttpClient {
    fn new(descriptor: BackendDescriptor, kind: BackendKind) -> BackendResult<Self> {
        descriptor.validate()?;
        if descriptor.kind != kind || descriptor.is_mock() {
            return Err(BackendError::InvalidDescriptor(format!(
                "expected a remote {kind} descriptor, got {} at {:?}",
                descriptor.kind, descriptor.endpoint
            )));
        }
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(descriptor.timeout()))
            .build()
            .into();
        let limiter = Limiter::new(descriptor.max_concurrency);
        Ok(Self {
            descriptor,
            agent,
            limiter,
        })
    }

    fn protocol(&self, message: impl Into<String>) -> BackendError {
        BackendError::Protocol {
            kind: self.descriptor.kind,
            message: message.into(),
        }
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, route: &str, body: &B) -> BackendResult<R> {
        let _permit = self.limiter.acquire();
        let url = format!(
            "{}/{}",
            self.descriptor.endpoint.trim_end_matches('/'),
            route
        );
        let kind = self.descriptor.kind;
        let map_err = |e: ureq::Error| match e {
            ureq::Error::Timeout(_) => BackendError::Timeout {
                kind,
                after: self.descriptor.timeout(),
            },
            ureq::Error::Json(e) => BackendError::Protocol {
                kind,
                message: format!("bad reply from {url}: {e}"),
            },
            ureq::Error::StatusCode(code) => BackendError::Unavailable {
                kind,
                message: format!("{url} answered HTTP {code}"),
            },
            other => BackendError::Unavailable {
                kind,
                message: format!("{url}: {other}"),
            },
        };
        let mut response = self.agent.post(&url).send_json(body).map_err(map_err)?;
        response.body_mut().read_json::<R>().map_err(map_err)
    }

    fn model(&self) -> String {
        self.descriptor.model_tag.clone()
    }
}

pub struct RemoteVlm(HttpClient);

impl RemoteVlm {
    pub fn new(descriptor: BackendDescriptor) -> BackendResult<Self> {
        Ok(Self(HttpClient::new(descriptor, BackendKind::Vlm)?))
    }
}

impl VisionLanguage for RemoteVlm {
    fn chat(&self, request: &ChatRequest) -> BackendResult<String> {
        request.validate()?;
        let messages = request
            .turns
            .iter()
            .map(|t| {
                Ok(WireTurn {
                    role: match t.role {
                        Role::System => "system",
                        Role::User => "user",
                        Role::Assistant => "assistant",
                    }
                    .to_string(),
                    text: t.text.clone(),
                    image: t
                        .image
                        .as_ref()
                        .map(wire::encode_png_rgb)
                        .transpose()
                        .map_err(|e| self.0.protocol(e))?,
                })
            })
            .collect::<BackendResult<Vec<_>>>()?;
        let body = ChatBody {
            model: self.0.model(),
            action: request.action.clone(),
            messages,
        };
        let reply: ChatReply = self.0.post("chat", &body)?;
        Ok(reply.reply)
    }
}

pub struct RemoteDetector(HttpClient);

impl RemoteDetector {
    pub fn new(descriptor: BackendDescriptor) -> BackendResult<Self> {
        Ok(Self(HttpClient::new(descriptor, BackendKind::Detector)?))
    }
}

impl Detector for RemoteDetector {
    fn detect_segment(&self, frame: &Frame, labels: &[String]) -> BackendResult<Vec<Detection>> {
        if labels.is_empty() {
            return Err(BackendError::InvalidRequest("empty label list".into()));
        }
        let body = DetectBody {
            model: self.0.model(),
            image: wire::encode_png_rgb(&frame.image).map_err(|e| self.0.protocol(e))?,
            labels: labels.to_vec(),
        };
        let reply: DetectReply = self.0.post("detect", &body)?;
        let (w, h) = frame.dimensions();
        let mut out = Vec::with_capacity(reply.detections.len());
        for d in reply.detections {
            let pixel_mask = match d.mask {
                Some(data) => {
                    let m = wire::decode_png_mask(&data).map_err(|e| self.0.protocol(e))?;
                    if m.dimensions() != (w, h) {
                        return Err(self.0.protocol(format!(
                            "pixel mask is {:?}, frame is {:?}",
                            m.dimensions(),
                            (w, h)
                        )));
                    }
                    Some(m)
                }
                None => None,
            };
            let det = Detection {
                label: d.label.trim().to_lowercase(),
                score: d.score,
                bbox: BBox::new(d.bbox[0], d.bbox[1], d.bbox[2], d.bbox[3]),
                pixel_mask,
                clamped: false,
            };
            out.extend(det.sanitized(w, h));
        }
        Ok(out)
    }
}

pub struct RemoteInpainter {
    client: HttpClient,
    native: Option<(u32, u32)>,
}

impl RemoteInpainter {
    pub fn new(descriptor: BackendDescriptor, native: Option<(u32, u32)>) -> BackendResult<Self> {
        Ok(Self {
            client: HttpClient::new(descriptor, BackendKind::Inpainter)?,
            native,
        })
    }
}

impl Inpainter for RemoteInpainter {
    fn inpaint(
        &self,
        image: &RgbImage,
        mask: &Mask,
        prompt: &str,
        seed: u64,
    ) -> BackendResult<RgbImage> {
        if image.dimensions() != mask.dimensions() {
            return Err(BackendError::DimensionMismatch {
                expected: mask.dimensions(),
                actual: image.dimensions(),
            });
        }
        let proto = |e: String| self.client.protocol(e);
        let body = InpaintBody {
            model: self.client.model(),
            image: wire::encode_png_rgb(image).map_err(proto)?,
            mask: wire::encode_png_mask(mask).map_err(proto)?,
            prompt: prompt.to_string(),
            seed,
        };
        let reply: InpaintReply = self.client.post("inpaint", &body)?;
        let out = wire::decode_png_rgb(&reply.image).map_err(proto)?;
        if out.dimensions() != image.dimensions() {
            return Err(BackendError::DimensionMismatch {
                expected: image.dimensions(),
                actual: out.dimensions(),
            });
        }
        Ok(out)
    }

    fn native_resolution(&self) -> Option<(u32, u32)> {
        self.native
    }
}

pub struct RemoteEmbedder(HttpClient);

impl RemoteEmbedder {
    pub fn new(descriptor: BackendDescriptor) -> BackendResult<Self> {
        Ok(Self(HttpClient::new(descriptor, BackendKind::Embedder)?))
    }

    fn body(&self, image: &RgbImage) -> BackendResult<EmbedBody> {
        Ok(EmbedBody {
            model: self.0.model(),
            image: wire::encode_png_rgb(image).map_err(|e| self.0.protocol(e))?,
        })
    }
}

impl Embedder for RemoteEmbedder {
    fn embed(&self, image: &RgbImage) -> BackendResult<Vec<f64>> {
        let reply: EmbedReply = self.0.post("embed", &self.body(image)?)?;
        normalize(reply.embedding).map_err(|e| self.0.protocol(e.to_string()))
    }
}

impl FeatureBackend for RemoteEmbedder {
    fn features(&self, image: &RgbImage) -> BackendResult<Vec<f64>> {
        let reply: FeaturesReply = self.0.post("features", &self.body(image)?)?;
        if reply.features.is_empty() || reply.features.iter().any(|v| !v.is_finite()) {
            return Err(self.0.protocol("feature vector empty or non-finite"));
        }
        Ok(reply.features)
    }
}
