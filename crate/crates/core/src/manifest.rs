//! JSON Lines manifests passed between stages.
//!
//! Frame paths are stored relative to the manifest's own directory so that an
//! output tree can be moved or compared byte-for-byte; [`read_manifest`]
//! resolves them back to absolute paths.

use std::io::{BufRead, BufReader, Write};
use std::path::{Component, Path, PathBuf};

use image::RgbImage;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::filter::{DetectionResult, FilterDecision, RejectionCode};
use crate::ingest::{ActionTriplet, FrameKind, FramePaths};
use crate::raster::Frame;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },
    #[error("triplet {0} has no extracted frames")]
    MissingFrames(String),
}

pub type ManifestResult<T> = Result<T, ManifestError>;

/// One manifest line: the triplet plus whatever later stages added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    #[serde(flatten)]
    pub triplet: ActionTriplet,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kept: Option<bool>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reasons: Vec<RejectionCode>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub relevant_objects: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub detections: Vec<DetectionResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ManifestRecord {
    pub fn new(triplet: ActionTriplet) -> Self {
        Self {
            triplet,
            kept: None,
            reasons: Vec::new(),
            relevant_objects: Vec::new(),
            detections: Vec::new(),
            error: None,
        }
    }

    /// Records that never went through filtering count as kept.
    pub fn is_kept(&self) -> bool {
        self.kept.unwrap_or(true)
    }
}

impl From<FilterDecision> for ManifestRecord {
    fn from(d: FilterDecision) -> Self {
        Self {
            triplet: d.triplet,
            kept: Some(d.kept),
            reasons: d.reasons,
            relevant_objects: d.relevant_objects,
            detections: d.detections,
            error: d.error,
        }
    }
}

/// Makes a path absolute and removes `.` and `..` components lexically.
pub fn normalize_path(path: &Path) -> PathBuf {
    let abs = std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf());
    let mut out = PathBuf::new();
    for c in abs.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

/// Path of `target` as seen from directory `base`, using `..` where needed.
pub fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let (t, b) = (normalize_path(target), normalize_path(base));
    let tc: Vec<_> = t.components().collect();
    let bc: Vec<_> = b.components().collect();
    let common = tc.iter().zip(&bc).take_while(|(x, y)| x == y).count();
    if common == 0 {
        return t;
    }
    let mut out = PathBuf::new();
    for _ in common..bc.len() {
        out.push("..");
    }
    for c in &tc[common..] {
        out.push(c);
    }
    out
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn map_paths(paths: &FramePaths, f: impl Fn(&str) -> String) -> FramePaths {
    FramePaths {
        initial: f(&paths.initial),
        action: f(&paths.action),
        final_: f(&paths.final_),
    }
}

/// Writes one JSON object per line. Parent directories are created.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> ManifestResult<()> {
    let io = |source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).map_err(|e| ManifestError::Parse {
            path: path.to_path_buf(),
            line: 0,
            message: e.to_string(),
        })?;
        out.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(io)?;
    file.write_all(&out).map_err(io)
}

/// Reads a JSON Lines file; blank lines are ignored.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> ManifestResult<Vec<T>> {
    let file = std::fs::File::open(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut items = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        items.push(
            serde_json::from_str(&line).map_err(|e| ManifestError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                message: e.to_string(),
            })?,
        );
    }
    Ok(items)
}

/// Writes records with frame paths rewritten relative to the manifest.
pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> ManifestResult<()> {
    let base = parent_dir(path);
    let rel: Vec<ManifestRecord> = records
        .iter()
        .map(|r| {
            let mut r = r.clone();
            if let Some(p) = &r.triplet.frame_paths {
                r.triplet.frame_paths = Some(map_paths(p, |s| {
                    relative_to(Path::new(s), &base)
                        .to_string_lossy()
                        .into_owned()
                }));
            }
            r
        })
        .collect();
    write_jsonl(path, &rel)
}

/// Reads records, resolving relative frame paths against the manifest's
/// directory.
pub fn read_manifest(path: &Path) -> ManifestResult<Vec<ManifestRecord>> {
    let base = parent_dir(path);
    let mut records: Vec<ManifestRecord> = read_jsonl(path)?;
    for r in &mut records {
        if let Some(p) = &r.triplet.frame_paths {
            r.triplet.frame_paths = Some(map_paths(p, |s| {
                let p = Path::new(s);
                let full = if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                };
                normalize_path(&full).to_string_lossy().into_owned()
            }));
        }
    }
    Ok(records)
}

pub fn load_image(path: &Path) -> ManifestResult<RgbImage> {
    image::open(path)
        .map(|i| i.to_rgb8())
        .map_err(|e| ManifestError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

pub fn save_png(path: &Path, image: &RgbImage) -> ManifestResult<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|source| ManifestError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    image
        .save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| ManifestError::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// Loads one of a triplet's frames, keyed for the mock backends.
pub fn load_frame(triplet: &ActionTriplet, kind: FrameKind) -> ManifestResult<Frame> {
    let paths = triplet
        .frame_paths
        .as_ref()
        .ok_or_else(|| ManifestError::MissingFrames(triplet.id()))?;
    let image = load_image(Path::new(paths.get(kind)))?;
    Ok(Frame::new(triplet.frame_key(kind), image))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::{ActionAnnotation, DatasetTag, SelectionStrategy};

    fn triplet() -> ActionTriplet {
        let a = ActionAnnotation::new("v1", "cut tomato", 1.0, 3.0, DatasetTag::Custom);
        ActionTriplet::select(a, SelectionStrategy::Midpoint).unwrap()
    }

    #[test]
    fn relative_paths() {
        assert_eq!(
            relative_to(Path::new("/a/b/frames/x.png"), Path::new("/a/b")),
            PathBuf::from("frames/x.png")
        );
        assert_eq!(
            relative_to(Path::new("/a/curate/frames/x.png"), Path::new("/a/filter")),
            PathBuf::from("../curate/frames/x.png")
        );
        assert_eq!(
            normalize_path(Path::new("/a/./b/../c")),
            PathBuf::from("/a/c")
        );
    }

    #[test]
    fn manifest_round_trip_with_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        let frames = dir.path().join("curate").join("frames");
        let mut t = triplet();
        t.frame_paths = Some(FramePaths {
            initial: frames.join("i.png").to_string_lossy().into(),
            action: frames.join("a.png").to_string_lossy().into(),
            final_: frames.join("f.png").to_string_lossy().into(),
        });
        let mut rec = ManifestRecord::new(t);
        rec.kept = Some(false);
        rec.reasons = vec![RejectionCode::NoHandsInAction];
        let path = dir.path().join("filter").join("kept.jsonl");
        write_manifest(&path, &[rec.clone()]).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(
            text.contains("\"initial\":\"../curate/frames/i.png\""),
            "{text}"
        );
        assert!(text.contains("\"NO_HANDS_IN_ACTION\""));
        assert!(text.contains("\"video_id\":\"v1\""));
        let back = read_manifest(&path).unwrap();
        assert_eq!(back, vec![rec]);
    }

    #[test]
    fn plain_triplet_reads_as_kept() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        write_jsonl(&path, &[triplet()]).unwrap();
        let back = read_manifest(&path).unwrap();
        assert!(back[0].is_kept());
        assert_eq!(back[0].triplet, triplet());
    }
}
