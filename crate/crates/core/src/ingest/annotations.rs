//! Adapters from each dataset's shipped annotation format to
//! [`ActionAnnotation`]. Malformed records are skipped and counted.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::Deserialize;

use super::{ActionAnnotation, DatasetTag, IngestError, IngestResult, Keyframes};

#[derive(Debug, Clone, Default)]
pub struct ParsedAnnotations {
    pub annotations: Vec<ActionAnnotation>,
    pub skipped: usize,
    /// `(line or record number, reason)` for every skipped record.
    pub skipped_reasons: Vec<(usize, String)>,
}

impl ParsedAnnotations {
    fn skip(&mut self, at: usize, reason: impl Into<String>) {
        self.skipped += 1;
        self.skipped_reasons.push((at, reason.into()));
    }

    fn push(&mut self, at: usize, annotation: ActionAnnotation) {
        match annotation.validate() {
            Ok(()) => self.annotations.push(annotation),
            Err(e) => self.skip(at, e.to_string()),
        }
    }
}

/// Parses an annotation file in the declared dataset's format.
///
/// * `EGTEA`: split files with lines `<clip> <action_idx> <verb_idx> <noun_idx>`
///   where `<clip>` is `<video>-<start_ms>-<end_ms>-F<start>-F<end>`; action
///   names come from `action_idx.txt` next to the split file.
/// * `EK100`: the CSV release (`video_id`, `start_timestamp`,
///   `stop_timestamp`, `narration`, ...).
/// * `Ego4D`: the hands-and-objects JSON (`videos[].annotated_intervals[]
///   .narrated_actions[]` with `critical_frames`).
/// * `Custom`: JSON Lines of [`ActionAnnotation`].
pub fn parse_annotations(path: &Path, tag: DatasetTag) -> IngestResult<ParsedAnnotations> {
    let text = std::fs::read_to_string(path).map_err(|source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let parsed = match tag {
        DatasetTag::Egtea => parse_egtea(path, &text)?,
        DatasetTag::Ek100 => parse_ek100(&text),
        DatasetTag::Ego4D => parse_ego4d(&text),
        DatasetTag::Custom => parse_custom(&text),
    };
    if parsed.annotations.is_empty() {
        let reason = parsed
            .skipped_reasons
            .first()
            .map(|(at, r)| format!("record {at}: {r}"))
            .unwrap_or_else(|| "no records".into());
        return Err(IngestError::SchemaMismatch {
            path: path.to_path_buf(),
            tag,
            reason,
        });
    }
    Ok(parsed)
}

fn parse_egtea(path: &Path, text: &str) -> IngestResult<ParsedAnnotations> {
    let index_path = path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join("action_idx.txt");
    let names = match std::fs::read_to_string(&index_path) {
        Ok(t) => parse_action_index(&t),
        Err(_) => {
            return Err(IngestError::SchemaMismatch {
                path: path.to_path_buf(),
                tag: DatasetTag::Egtea,
                reason: format!("missing {}", index_path.display()),
            })
        }
    };
    let mut out = ParsedAnnotations::default();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        match parse_egtea_line(line, &names) {
            Ok(a) => out.push(n + 1, a),
            Err(reason) => out.skip(n + 1, reason),
        }
    }
    Ok(out)
}

/// Lines of `<Action name> <index>`.
fn parse_action_index(text: &str) -> HashMap<u32, String> {
    text.lines()
        .filter_map(|line| {
            let (name, idx) = line.trim().rsplit_once(char::is_whitespace)?;
            Some((idx.parse().ok()?, name.trim().to_string()))
        })
        .collect()
}

fn parse_egtea_line(line: &str, names: &HashMap<u32, String>) -> Result<ActionAnnotation, String> {
    let mut fields = line.split_whitespace();
    let clip = fields.next().ok_or("empty line")?;
    let action_idx: u32 = fields
        .next()
        .ok_or("missing action index")?
        .parse()
        .map_err(|_| "action index is not an integer")?;
    let action = names
        .get(&action_idx)
        .ok_or_else(|| format!("unknown action index {action_idx}"))?;

    let parts: Vec<&str> = clip.rsplitn(5, '-').collect();
    if parts.len() != 5 {
        return Err(format!("clip name {clip:?} has too few fields"));
    }
    let (end_frame, start_frame, end_ms, start_ms, video) =
        (parts[0], parts[1], parts[2], parts[3], parts[4]);
    if !start_frame.starts_with('F') || !end_frame.starts_with('F') {
        return Err(format!("clip name {clip:?} lacks frame markers"));
    }
    let start_ms: f64 = start_ms.parse().map_err(|_| "bad start time")?;
    let end_ms: f64 = end_ms.parse().map_err(|_| "bad end time")?;
    let mut a = ActionAnnotation::new(
        video,
        action.clone(),
        start_ms / 1000.0,
        end_ms / 1000.0,
        DatasetTag::Egtea,
    );
    a.metadata.insert("clip".into(), clip.to_string());
    a.metadata
        .insert("action_idx".into(), action_idx.to_string());
    a.metadata
        .insert("start_frame".into(), start_frame[1..].to_string());
    a.metadata
        .insert("end_frame".into(), end_frame[1..].to_string());
    Ok(a)
}

/// `HH:MM:SS.fff` (or plain seconds) to seconds.
fn parse_clock(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        return Some(v);
    }
    let mut total = 0.0;
    for part in s.split(':') {
        total = total * 60.0 + part.parse::<f64>().ok()?;
    }
    Some(total)
}

fn parse_ek100(text: &str) -> ParsedAnnotations {
    let mut out = ParsedAnnotations::default();
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_reader(text.as_bytes());
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => {
            out.skip(0, e.to_string());
            return out;
        }
    };
    for (n, record) in reader.records().enumerate() {
        let row = n + 2;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.skip(row, e.to_string());
                continue;
            }
        };
        let fields: BTreeMap<&str, &str> = headers.iter().zip(record.iter()).collect();
        let get = |k: &str| fields.get(k).copied().filter(|v| !v.trim().is_empty());
        let parsed = (|| {
            let video = get("video_id").ok_or("missing video_id")?;
            let start = get("start_timestamp")
                .and_then(parse_clock)
                .ok_or("bad start_timestamp")?;
            let stop = get("stop_timestamp")
                .and_then(parse_clock)
                .ok_or("bad stop_timestamp")?;
            let narration = get("narration").ok_or("missing narration")?;
            let mut a =
                ActionAnnotation::new(video, narration.trim(), start, stop, DatasetTag::Ek100);
            for key in [
                "narration_id",
                "participant_id",
                "verb",
                "noun",
                "start_frame",
                "stop_frame",
            ] {
                if let Some(v) = get(key) {
                    a.metadata.insert(key.to_string(), v.to_string());
                }
            }
            Ok::<_, &str>(a)
        })();
        match parsed {
            Ok(a) => out.push(row, a),
            Err(reason) => out.skip(row, reason),
        }
    }
    out
}

#[derive(Deserialize)]
struct Ego4dFile {
    videos: Vec<Ego4dVideo>,
}

#[derive(Deserialize)]
struct Ego4dVideo {
    video_uid: String,
    #[serde(default = "default_ego4d_fps")]
    fps: f64,
    #[serde(default)]
    annotated_intervals: Vec<Ego4dInterval>,
}

fn default_ego4d_fps() -> f64 {
    30.0
}

#[derive(Deserialize)]
struct Ego4dInterval {
    #[serde(default)]
    narrated_actions: Vec<serde_json::Value>,
}

#[derive(Deserialize)]
struct Ego4dAction {
    narration_text: String,
    start_sec: f64,
    end_sec: f64,
    #[serde(default)]
    critical_frames: Option<Ego4dCritical>,
    #[serde(default)]
    is_invalid_annotation: bool,
}

#[derive(Deserialize)]
struct Ego4dCritical {
    pre_frame: Option<f64>,
    pnr_frame: Option<f64>,
    post_frame: Option<f64>,
}

/// Drops the `#C C` camera-wearer markers from Ego4D narrations.
fn clean_narration(text: &str) -> String {
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|w| !w.starts_with('#'))
        .collect();
    let words = match words.first() {
        Some(&"C") | Some(&"c") => &words[1..],
        _ => &words[..],
    };
    words.join(" ")
}

fn parse_ego4d(text: &str) -> ParsedAnnotations {
    let mut out = ParsedAnnotations::default();
    let file: Ego4dFile = match serde_json::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            out.skip(0, e.to_string());
            return out;
        }
    };
    let mut n = 0;
    for video in file.videos {
        for interval in video.annotated_intervals {
            for raw in interval.narrated_actions {
                n += 1;
                let action: Ego4dAction = match serde_json::from_value(raw) {
                    Ok(a) => a,
                    Err(e) => {
                        out.skip(n, e.to_string());
                        continue;
                    }
                };
                if action.is_invalid_annotation {
                    out.skip(n, "flagged invalid upstream");
                    continue;
                }
                let mut a = ActionAnnotation::new(
                    video.video_uid.clone(),
                    clean_narration(&action.narration_text),
                    action.start_sec,
                    action.end_sec,
                    DatasetTag::Ego4D,
                );
                a.metadata
                    .insert("narration_text".into(), action.narration_text.clone());
                if let Some(Ego4dCritical {
                    pre_frame: Some(pre),
                    pnr_frame: Some(pnr),
                    post_frame: Some(post),
                }) = action.critical_frames
                {
                    let k = Keyframes {
                        pre: pre / video.fps,
                        pnr: pnr / video.fps,
                        post: post / video.fps,
                    };
                    if !(k.pre <= k.pnr && k.pnr <= k.post) {
                        out.skip(n, "critical frames out of order");
                        continue;
                    }
                    // widen the interval so the keyframes sit inside it
                    if k.pre < a.t_start || k.post > a.t_end {
                        a.metadata.insert("start_sec".into(), a.t_start.to_string());
                        a.metadata.insert("end_sec".into(), a.t_end.to_string());
                        a.t_start = a.t_start.min(k.pre);
                        a.t_end = a.t_end.max(k.post);
                    }
                    a.keyframes = Some(k);
                }
                out.push(n, a);
            }
        }
    }
    out
}

fn parse_custom(text: &str) -> ParsedAnnotations {
    let mut out = ParsedAnnotations::default();
    for (n, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ActionAnnotation>(line) {
            Ok(a) => out.push(n + 1, a),
            Err(e) => out.skip(n + 1, e.to_string()),
        }
    }
    out
}
