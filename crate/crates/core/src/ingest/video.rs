use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use super::{ActionTriplet, FrameKind, FramePaths, FrameTimes, IngestError, IngestResult};

/// Random-access frame source with a constant frame rate. Frame `i` shows
/// time `i / fps`.
pub trait VideoSource {
    fn fps(&self) -> f64;
    fn frame_count(&self) -> u64;
    fn decode(&self, index: u64) -> IngestResult<RgbImage>;

    fn duration(&self) -> f64 {
        self.frame_count() as f64 / self.fps()
    }
}

/// Index of the frame closest to `t`. Ties round up.
pub fn nearest_frame_index(t: f64, fps: f64, frame_count: u64) -> IngestResult<u64> {
    let out_of_range = || IngestError::TimestampOutOfRange {
        t,
        duration: frame_count as f64 / fps,
    };
    if !t.is_finite() || t < 0.0 {
        return Err(out_of_range());
    }
    let index = (t * fps).round();
    if index >= frame_count as f64 {
        return Err(out_of_range());
    }
    Ok(index as u64)
}

/// Frames already extracted to a directory (`frame_0000000001.jpg`, ...) plus
/// a `meta.json` carrying `{"fps": ...}`. Files are ordered by name.
pub struct FrameDirectory {
    fps: f64,
    files: Vec<PathBuf>,
}

#[derive(Deserialize)]
struct FrameDirMeta {
    fps: f64,
}

impl FrameDirectory {
    pub fn open(dir: &Path) -> IngestResult<Self> {
        let io = |source| IngestError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let meta_path = dir.join("meta.json");
        let meta_text = std::fs::read_to_string(&meta_path).map_err(|source| IngestError::Io {
            path: meta_path.clone(),
            source,
        })?;
        let meta: FrameDirMeta = serde_json::from_str(&meta_text)
            .map_err(|e| IngestError::DecodeFailure(format!("{}: {e}", meta_path.display())))?;
        if !(meta.fps.is_finite() && meta.fps > 0.0) {
            return Err(IngestError::DecodeFailure(format!(
                "{}: fps must be positive",
                meta_path.display()
            )));
        }
        let mut files = Vec::new();
        for entry in std::fs::read_dir(dir).map_err(io)? {
            let path = entry.map_err(io)?.path();
            let is_image = path
                .extension()
                .and_then(|e| e.to_str())
                .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
                .unwrap_or(false);
            if is_image {
                files.push(path);
            }
        }
        files.sort();
        Ok(Self {
            fps: meta.fps,
            files,
        })
    }
}

impl VideoSource for FrameDirectory {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_count(&self) -> u64 {
        self.files.len() as u64
    }

    fn decode(&self, index: u64) -> IngestResult<RgbImage> {
        let path = self
            .files
            .get(index as usize)
            .ok_or_else(|| IngestError::DecodeFailure(format!("no frame {index}")))?;
        Ok(image::open(path)
            .map_err(|e| IngestError::DecodeFailure(format!("{}: {e}", path.display())))?
            .to_rgb8())
    }
}

/// Procedurally rendered clip used by fixtures: a seeded background gradient
/// with two coloured blocks, one drifting right over time.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticVideo {
    pub fps: f64,
    pub frames: u64,
    pub width: u32,
    pub height: u32,
    #[serde(default)]
    pub seed: u64,
}

impl SyntheticVideo {
    pub fn load(path: &Path) -> IngestResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let video: SyntheticVideo = serde_json::from_str(&text)
            .map_err(|e| IngestError::DecodeFailure(format!("{}: {e}", path.display())))?;
        if !(video.fps > 0.0) || video.width == 0 || video.height == 0 {
            return Err(IngestError::DecodeFailure(format!(
                "{}: fps, width and height must be positive",
                path.display()
            )));
        }
        Ok(video)
    }

    fn palette(&self) -> [[u8; 3]; 3] {
        let s = self.seed;
        let byte = |shift: u32| ((s.wrapping_mul(0x9E37_79B9_7F4A_7C15) >> shift) & 0xff) as u8;
        [
            [byte(0), byte(8), byte(16)],
            [200, byte(24) / 2, 40],
            [30, 160, byte(32)],
        ]
    }
}

impl VideoSource for SyntheticVideo {
    fn fps(&self) -> f64 {
        self.fps
    }

    fn frame_count(&self) -> u64 {
        self.frames
    }

    fn decode(&self, index: u64) -> IngestResult<RgbImage> {
        if index >= self.frames {
            return Err(IngestError::DecodeFailure(format!("no frame {index}")));
        }
        let [bg, moving, fixed] = self.palette();
        let (w, h) = (self.width, self.height);
        let progress = index as f64 / self.frames.max(1) as f64;
        let block = (w / 5).max(1);
        let mx = ((w - block) as f64 * progress) as u32;
        let my = h / 4;
        let (fx, fy) = (w / 2, h / 2);
        Ok(RgbImage::from_fn(w, h, |x, y| {
            if x >= mx && x < mx + block && y >= my && y < my + block {
                Rgb(moving)
            } else if x >= fx && x < fx + block && y >= fy && y < fy + block {
                Rgb(fixed)
            } else {
                let gx = (x * 64 / w.max(1)) as u8;
                let gy = (y * 64 / h.max(1)) as u8;
                Rgb([
                    bg[0].wrapping_add(gx),
                    bg[1].wrapping_add(gy),
                    bg[2].wrapping_add(gx / 2 + gy / 2),
                ])
            }
        }))
    }
}

/// Opens `<dir>/<video_id>.synthetic.json` or the frame directory
/// `<dir>/<video_id>/`.
pub fn open_video(dir: &Path, video_id: &str) -> IngestResult<Box<dyn VideoSource>> {
    let synthetic = dir.join(format!("{video_id}.synthetic.json"));
    if synthetic.is_file() {
        return Ok(Box::new(SyntheticVideo::load(&synthetic)?));
    }
    let frames = dir.join(video_id);
    if frames.is_dir() {
        return Ok(Box::new(FrameDirectory::open(&frames)?));
    }
    Err(IngestError::DecodeFailure(format!(
        "no video source for {video_id} under {}",
        dir.display()
    )))
}

/// Decodes the frame nearest to each timestamp and writes
/// `<out_dir>/<triplet id>_{initial,action,final}.png`. The returned triplet
/// carries the written paths and the timestamps of the chosen frames.
pub fn extract_frames(
    triplet: &ActionTriplet,
    video: &dyn VideoSource,
    out_dir: &Path,
) -> IngestResult<ActionTriplet> {
    let fps = video.fps();
    let count = video.frame_count();
    let mut indices = [0u64; 3];
    for (slot, kind) in indices.iter_mut().zip(FrameKind::ALL) {
        *slot = nearest_frame_index(triplet.time(kind), fps, count)?;
    }
    std::fs::create_dir_all(out_dir).map_err(|source| IngestError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let id = triplet.id();
    let mut paths = Vec::with_capacity(3);
    for (index, kind) in indices.iter().zip(FrameKind::ALL) {
        let image = video.decode(*index)?;
        let path = out_dir.join(format!("{id}_{}.png", kind.as_str()));
        image
            .save(&path)
            .map_err(|e| IngestError::DecodeFailure(format!("{}: {e}", path.display())))?;
        paths.push(path.to_string_lossy().into_owned());
    }
    let mut out = triplet.clone();
    out.frame_paths = Some(FramePaths {
        initial: paths[0].clone(),
        action: paths[1].clone(),
        final_: paths[2].clone(),
    });
    out.frame_times = Some(FrameTimes {
        initial: indices[0] as f64 / fps,
        action: indices[1] as f64 / fps,
        final_: indices[2] as f64 / fps,
    });
    Ok(out)
}
