//! Relevant-object reasoning and inpaint-mask construction.
//!
//! The vision-language model is asked, in one conversation, which visible
//! objects matter for the action and how each one participates: *core*
//! objects undergo the action, *location* objects say where it ends up and
//! *functional* objects (hands, tools) take part without moving anything.
//! Detected boxes of those objects then become the inpainting masks.

mod plan;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{BackendError, ChatRequest, ChatTurn, VisionLanguage};
use crate::filter::{is_hand_label, parse_object_list, FilterError, DEFAULT_THRESHOLD, HAND_LABEL};
use crate::manifest::ManifestError;
use crate::prompts::Prompts;
use crate::raster::Frame;

pub use plan::{
    build_mask_plan, ground_masks, load_plan, relocate_core, save_plan, GroundedMask,
    InpaintMaskPlan, PlanSidecar, Relocation, RelocationRecord, ACTION_STAGE1_FILE,
    ACTION_STAGE2_FILE, FINAL_STAGE_FILE, PLAN_FILE, PLAN_VERSION, RELOCATED_FILE,
};

#[derive(Debug, Error)]
pub enum GroundingError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("malformed backend reply: {0}")]
    MalformedBackendReply(String),
    #[error("the model named no relevant objects for {0:?}")]
    EmptyRelevantSet(String),
    #[error("core object {0:?} has no pixel mask")]
    MissingPixelMask(String),
    #[error("mask of {0:?} has zero area")]
    DegenerateMask(String),
    #[error("location bbox of {0:?} lies outside the frame")]
    LocationOutOfFrame(String),
    #[error("mask is {actual:?}, frame is {expected:?}")]
    DimensionMismatch {
        expected: (u32, u32),
        actual: (u32, u32),
    },
    #[error("plan file: {0}")]
    Plan(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

impl From<FilterError> for GroundingError {
    fn from(e: FilterError) -> Self {
        match e {
            FilterError::Backend(b) => GroundingError::Backend(b),
            other => GroundingError::MalformedBackendReply(other.to_string()),
        }
    }
}

pub type GroundingResult<T> = Result<T, GroundingError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectCategory {
    Core,
    Location,
    Functional,
}

impl ObjectCategory {
    pub const ALL: [ObjectCategory; 3] = [
        ObjectCategory::Core,
        ObjectCategory::Location,
        ObjectCategory::Functional,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ObjectCategory::Core => "core",
            ObjectCategory::Location => "location",
            ObjectCategory::Functional => "functional",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelevantObjectSet {
    pub action: String,
    pub core: Vec<String>,
    pub location: Vec<String>,
    pub functional: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flags: Vec<String>,
}

impl RelevantObjectSet {
    pub fn new(action: impl Into<String>) -> Self {
        Self {
            action: action.into(),
            core: Vec::new(),
            location: Vec::new(),
            functional: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn list(&self, category: ObjectCategory) -> &Vec<String> {
        match category {
            ObjectCategory::Core => &self.core,
            ObjectCategory::Location => &self.location,
            ObjectCategory::Functional => &self.functional,
        }
    }

    fn list_mut(&mut self, category: ObjectCategory) -> &mut Vec<String> {
        match category {
            ObjectCategory::Core => &mut self.core,
            ObjectCategory::Location => &mut self.location,
            ObjectCategory::Functional => &mut self.functional,
        }
    }

    pub fn category_of(&self, name: &str) -> Option<ObjectCategory> {
        ObjectCategory::ALL
            .into_iter()
            .find(|c| self.list(*c).iter().any(|n| n == name))
    }

    /// Every object with its category, core first.
    pub fn entries(&self) -> Vec<(String, ObjectCategory)> {
        ObjectCategory::ALL
            .into_iter()
            .flat_map(|c| self.list(c).iter().map(move |n| (n.clone(), c)))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.core.is_empty() && self.location.is_empty() && self.functional.is_empty()
    }

    /// Adds a name unless it is already in some category.
    pub fn insert(&mut self, name: &str, category: ObjectCategory) -> bool {
        if self.category_of(name).is_some() {
            return false;
        }
        self.list_mut(category).push(name.to_string());
        true
    }

    pub fn is_disjoint(&self) -> bool {
        let all: Vec<String> = self.entries().into_iter().map(|(n, _)| n).collect();
        let mut dedup = all.clone();
        dedup.sort();
        dedup.dedup();
        dedup.len() == all.len()
    }

    /// The assistant's categorisation as it would appear in the conversation.
    pub fn render_categories(&self) -> String {
        ObjectCategory::ALL
            .iter()
            .map(|c| {
                let names = self.list(*c);
                let body = if names.is_empty() {
                    "none".to_string()
                } else {
                    names.join(", ")
                };
                format!("{}: {body}", c.as_str())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundingConfig {
    pub threshold: f64,
    /// Add "hand" to the functional objects when the model leaves it out.
    pub auto_append_hands: bool,
    /// Turn an all-empty plan into full-frame masks.
    pub full_frame_fallback: bool,
}

impl Default for GroundingConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            auto_append_hands: true,
            full_frame_fallback: true,
        }
    }
}

fn normalize_name(name: &str) -> String {
    if is_hand_label(name) {
        HAND_LABEL.to_string()
    } else {
        name.to_string()
    }
}

fn category_key(key: &str) -> Option<ObjectCategory> {
    let key = key.to_lowercase();
    if key.contains("core") {
        Some(ObjectCategory::Core)
    } else if key.contains("location") {
        Some(ObjectCategory::Location)
    } else if key.contains("functional") {
        Some(ObjectCategory::Functional)
    } else {
        None
    }
}

/// Reads `category: a, b` lines. Lines that cannot be read are skipped.
fn parse_categories(reply: &str) -> Vec<(ObjectCategory, Vec<String>)> {
    reply
        .lines()
        .filter_map(|line| {
            let line = line.trim().trim_start_matches(['-', '*', '•']).trim();
            let (key, value) = line.split_once(':')?;
            let category = category_key(key)?;
            let names = parse_object_list(value).ok()?;
            Some((category, names.iter().map(|n| normalize_name(n)).collect()))
        })
        .collect()
}

fn first_turn(action: &str, frame: &Frame, prompts: &Prompts) -> ChatTurn {
    ChatTurn::user_with_image(prompts.relevant(action), frame.image.clone())
}

/// Two-turn conversation: which objects are relevant, then which category
/// each of them belongs to. Objects the model does not categorise become
/// functional, with a flag.
pub fn categorize_objects(
    action: &str,
    frame: &Frame,
    vlm: &dyn VisionLanguage,
    prompts: &Prompts,
    config: &GroundingConfig,
) -> GroundingResult<RelevantObjectSet> {
    let mut turns = vec![first_turn(action, frame, prompts)];
    let reply1 = vlm.chat(&ChatRequest {
        action: action.to_string(),
        turns: turns.clone(),
    })?;
    let mut objects: Vec<String> = parse_object_list(&reply1)?
        .iter()
        .map(|n| normalize_name(n))
        .collect();
    objects.dedup();
    if objects.is_empty() {
        return Err(GroundingError::EmptyRelevantSet(action.to_string()));
    }

    turns.push(ChatTurn::assistant(objects.join(", ")));
    turns.push(ChatTurn::user(prompts.categorize(action, &objects)));
    let reply2 = vlm.chat(&ChatRequest {
        action: action.to_string(),
        turns,
    })?;

    let mut set = RelevantObjectSet::new(action);
    for (category, names) in parse_categories(&reply2) {
        for name in names {
            if !objects.contains(&name) {
                set.flags.push(format!("ignored_uncategorizable:{name}"));
                continue;
            }
            set.insert(&name, category);
        }
    }
    for name in &objects {
        if set.category_of(name).is_none() {
            log::warn!("{action:?}: no category for {name:?}, treating it as functional");
            set.flags.push(format!("defaulted_functional:{name}"));
            set.functional.push(name.clone());
        }
    }
    if config.auto_append_hands && set.insert(HAND_LABEL, ObjectCategory::Functional) {
        set.flags.push("hand_appended".to_string());
    }
    Ok(set)
}

/// Keeps a single location object. Asks the model which location is the most
/// specific; when the model fails or names none of them, the one with the
/// highest detection score is kept (first listed when none was detected).
pub fn refine_location(
    objects: &RelevantObjectSet,
    frame: &Frame,
    vlm: &dyn VisionLanguage,
    prompts: &Prompts,
    location_scores: &[(String, f64)],
) -> RelevantObjectSet {
    if objects.location.len() <= 1 {
        return objects.clone();
    }
    let action = &objects.action;
    let named: Vec<String> = objects
        .entries()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| !(n == HAND_LABEL && objects.flags.iter().any(|f| f == "hand_appended")))
        .collect();
    let turns = vec![
        first_turn(action, frame, prompts),
        ChatTurn::assistant(named.join(", ")),
        ChatTurn::user(prompts.categorize(action, &named)),
        ChatTurn::assistant(objects.render_categories()),
        ChatTurn::user(prompts.refine(action, &objects.location)),
    ];
    let reply = vlm.chat(&ChatRequest {
        action: action.clone(),
        turns,
    });
    let picked = match &reply {
        Ok(text) => parse_object_list(text).ok().and_then(|names| {
            names
                .iter()
                .find_map(|n| objects.location.iter().find(|l| *l == n))
                .cloned()
        }),
        Err(_) => None,
    };
    let mut out = objects.clone();
    let keep = match picked {
        Some(name) => name,
        None => {
            let reason = match reply {
                Err(e) => e.to_string(),
                Ok(text) => format!("reply names no listed location: {text:?}"),
            };
            log::warn!("{action:?}: location refinement fell back ({reason})");
            let best = objects
                .location
                .iter()
                .filter_map(|l| {
                    location_scores
                        .iter()
                        .filter(|(n, _)| n == l)
                        .map(|(_, s)| *s)
                        .fold(None, |m: Option<f64>, s| Some(m.map_or(s, |m| m.max(s))))
                        .map(|s| (l, s))
                })
                .fold(None, |best: Option<(&String, f64)>, (l, s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((l, s)),
                });
            out.flags.push("location_refine_fallback".to_string());
            best.map(|(l, _)| l.clone())
                .unwrap_or_else(|| objects.location[0].clone())
        }
    };
    for dropped in objects.location.iter().filter(|l| **l != keep) {
        out.flags.push(format!("location_dropped:{dropped}"));
    }
    out.location = vec![keep];
    out
}
