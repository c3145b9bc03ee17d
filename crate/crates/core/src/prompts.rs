//! Versioned prompt templates for the object-reasoning conversation.
//!
//! Placeholders: `{action}`, `{objects}`, `{locations}`.

use std::path::Path;

pub const VERSION: &str = "v1";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prompts {
    /// Turn 1: which visible objects matter for the action.
    pub relevant: String,
    /// Turn 2: sort those objects into core / location / functional.
    pub categorize: String,
    /// Turn 3: keep the most specific location.
    pub refine: String,
}

impl Default for Prompts {
    fn default() -> Self {
        Self {
            relevant: include_str!("../prompts/v1/relevant.txt")
                .trim_end()
                .to_string(),
            categorize: include_str!("../prompts/v1/categorize.txt")
                .trim_end()
                .to_string(),
            refine: include_str!("../prompts/v1/refine.txt")
                .trim_end()
                .to_string(),
        }
    }
}

impl Prompts {
    /// Reads `relevant.txt`, `categorize.txt` and `refine.txt` from a directory.
    pub fn load(dir: &Path) -> std::io::Result<Self> {
        let read =
            |name: &str| std::fs::read_to_string(dir.join(name)).map(|s| s.trim_end().to_string());
        Ok(Self {
            relevant: read("relevant.txt")?,
            categorize: read("categorize.txt")?,
            refine: read("refine.txt")?,
        })
    }

    pub fn relevant(&self, action: &str) -> String {
        self.relevant.replace("{action}", action)
    }

    pub fn categorize(&self, action: &str, objects: &[String]) -> String {
        self.categorize
            .replace("{action}", action)
            .replace("{objects}", &objects.join(", "))
    }

    pub fn refine(&self, action: &str, locations: &[String]) -> String {
        self.refine
            .replace("{action}", action)
            .replace("{locations}", &locations.join(", "))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placeholders_are_filled() {
        let p = Prompts::default();
        let t = p.relevant("cut tomato");
        assert!(t.contains("\"cut tomato\""));
        assert!(!t.contains('{'));
        let c = p.categorize("cut tomato", &["tomato".into(), "knife".into()]);
        assert!(c.contains("tomato, knife"));
        assert!(!c.contains("{objects}"));
        let r = p.refine("put cheese", &["stove".into(), "burger".into()]);
        assert!(r.contains("stove, burger") && r.contains("put cheese"));
    }

    #[test]
    fn shipped_directory_matches_embedded() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("prompts")
            .join(VERSION);
        assert_eq!(Prompts::load(&dir).unwrap(), Prompts::default());
    }
}
