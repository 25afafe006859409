//! Cross-modal body-part tag mapping: canonicalizes the per-modality
//! vocabulary (DICOM-style BodyPartExamined strings) onto shared
//! anatomical keys. Loaded from a static table; a default covering the
//! common tags ships with the crate.
//!
//! File format: one `key: tag, tag, ...` line per canonical key, `#`
//! comments allowed. Matching is case-insensitive and every key maps to
//! itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BodyPartMap {
    map: BTreeMap<String, String>,
}

impl BodyPartMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: &str, tag: &str) -> Result<()> {
        let key_l = key.to_ascii_lowercase();
        let tag_l = tag.to_ascii_lowercase();
        if let Some(existing) = self.map.get(&tag_l) {
            if *existing != key_l {
                return Err(Error::label(format!(
                    "tag `{tag}` maps to both `{existing}` and `{key_l}`"
                )));
            }
        }
        self.map.insert(tag_l, key_l.clone());
        self.map.insert(key_l.clone(), key_l);
        Ok(())
    }

    /// Canonical key for a tag; unmapped tags are an error naming the tag.
    pub fn canonical(&self, tag: &str) -> Result<&str> {
        self.map
            .get(&tag.to_ascii_lowercase())
            .map(|s| s.as_str())
            .ok_or_else(|| Error::label(format!("unmapped body-part tag `{tag}`")))
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Identity map over a list of body parts (used for synthetic corpora
    /// whose tags already coincide across modalities).
    pub fn identity<I, S>(parts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut m = BodyPartMap::new();
        for p in parts {
            m.insert(p.as_ref(), p.as_ref()).expect("identity is consistent");
        }
        m
    }

    /// Default mapping for the common per-modality tag spellings.
    pub fn default_table() -> Self {
        let mut m = BodyPartMap::new();
        let entries: [(&str, &[&str]); 6] = [
            ("chest", &["CHEST", "thorax", "lung", "chest wall"]),
            ("abdomen", &["ABDOMEN", "belly", "abdominal"]),
            ("head", &["HEAD", "brain", "skull", "cranium"]),
            ("pelvis", &["PELVIS", "pelvic"]),
            ("spine", &["SPINE", "vertebral column", "back"]),
            ("extremity", &["EXTREMITY", "limb", "arm", "leg"]),
        ];
        for (key, tags) in entries {
            for tag in tags {
                m.insert(key, tag).expect("authored table is consistent");
            }
        }
        m
    }

    pub fn render(&self) -> String {
        // Group tags per canonical key.
        let mut grouped: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
        for (tag, key) in &self.map {
            grouped.entry(key).or_default().push(tag);
        }
        let mut out = String::new();
        for (key, tags) in grouped {
            out.push_str(key);
            out.push_str(": ");
            out.push_str(&tags.join(", "));
            out.push('\n');
        }
        out
    }
}

pub fn load_body_part_map(path: &Path) -> Result<BodyPartMap> {
    let text = fs::read_to_string(path)?;
    parse_body_part_map(&text)
}

pub fn parse_body_part_map(text: &str) -> Result<BodyPartMap> {
    let mut m = BodyPartMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, tags) = line
            .split_once(':')
            .ok_or_else(|| Error::label(format!("bad body-part map line `{line}`")))?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::label("empty canonical key".to_string()));
        }
        m.insert(key, key)?;
        for tag in tags.split(',') {
            let tag = tag.trim();
            if !tag.is_empty() {
                m.insert(key, tag)?;
            }
        }
    }
    Ok(m)
}

pub fn write_body_part_map(path: &Path, map: &BodyPartMap) -> Result<()> {
    fs::write(path, map.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shipped_table_canonicalizes_chest_spellings() {
        let m = BodyPartMap::default_table();
        assert_eq!(m.canonical("CHEST").unwrap(), "chest");
        assert_eq!(m.canonical("thorax").unwrap(), "chest");
        assert_eq!(m.canonical("Thorax").unwrap(), "chest");
    }

    #[test]
    fn identity_entries_map_to_themselves() {
        let m = BodyPartMap::default_table();
        for key in ["chest", "abdomen", "head", "pelvis", "spine", "extremity"] {
            assert_eq!(m.canonical(key).unwrap(), key);
        }
    }

    #[test]
    fn missing_tag_is_label_error_naming_it() {
        let m = BodyPartMap::default_table();
        match m.canonical("flipper") {
            Err(Error::Label(msg)) => assert!(msg.contains("flipper")),
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn parse_and_render_roundtrip() {
        let text = "# comment\nchest: CHEST, thorax\nhead: skull\n";
        let m = parse_body_part_map(text).unwrap();
        assert_eq!(m.canonical("THORAX").unwrap(), "chest");
        assert_eq!(m.canonical("head").unwrap(), "head");
        let again = parse_body_part_map(&m.render()).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn conflicting_tag_rejected() {
        let text = "chest: thorax\nhead: thorax\n";
        assert!(parse_body_part_map(text).is_err());
    }
}
