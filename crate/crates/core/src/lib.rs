//! Action-conditioned frame generation for egocentric cooking video.
//!
//! The crate is organised by pipeline stage:
//!
//! * [`ingest`] parses dataset annotations, picks the initial / action / final
//!   timestamps of each action and extracts the frames.
//! * [`filter`] keeps triplets whose frames show hands and action-relevant
//!   objects, and scores curation quality against a hand-picked benchmark.
//! * [`grounding`] asks a vision-language model which objects matter and in
//!   what role, grounds them to boxes and builds per-stage inpaint masks.
//! * [`generation`] runs the masked inpainting stages and prepares
//!   fine-tuning jobs.
//! * [`metrics`] implements CLIP-style similarity scores, FID, PSNR and SSIM.
//! * [`manifest`] reads and writes the JSONL manifests shared by the stages.
//! * [`backends`] defines the model-service contracts plus deterministic mocks.

pub mod backends;
pub mod filter;
pub mod generation;
pub mod grounding;
pub mod ingest;
pub mod manifest;
pub mod metrics;
pub mod prompts;
pub mod raster;

pub use image::RgbImage;
pub use raster::{BBox, Frame, Mask};
