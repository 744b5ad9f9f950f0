use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::AuthoringError;
use crate::engine::Fact;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeRecord {
    pub cpt: String,
    pub attribute: String,
    pub default_value: bool,
    /// Model name, or "fixture".
    pub provenance: String,
    pub created_at: String,
}

/// Where `created_at` comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Clock {
    System,
    Fixed(String),
}

impl Clock {
    /// The timestamp used in fixture mode.
    pub fn fixture() -> Self {
        Clock::Fixed("1970-01-01T00:00:00Z".into())
    }

    pub fn now(&self) -> String {
        match self {
            Clock::System => chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            Clock::Fixed(s) => s.clone(),
        }
    }
}

/// Attribute records keyed by CPT, persisted as an append-only JSON Lines log.
///
/// A CPT's set is written once and appended. Forced regeneration replaces
/// the set in memory and compacts the log, which rewrites it with only the
/// live records.
#[derive(Debug, Clone, Default)]
pub struct AttributeStore {
    by_cpt: BTreeMap<String, Vec<AttributeRecord>>,
    path: Option<PathBuf>,
}

impl AttributeStore {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or starts) the log at `path`.
    pub fn open(path: impl Into<PathBuf>) -> Result<Self, AuthoringError> {
        let path = path.into();
        let mut store = AttributeStore {
            by_cpt: BTreeMap::new(),
            path: Some(path.clone()),
        };
        if !path.exists() {
            return Ok(store);
        }
        let text = std::fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let rec: AttributeRecord = serde_json::from_str(line).map_err(|e| AuthoringError::Store {
                path: path.display().to_string(),
                message: format!("line {}: {e}", i + 1),
            })?;
            let batch = store.by_cpt.entry(rec.cpt.clone()).or_default();
            if batch.iter().any(|r| r.attribute == rec.attribute) {
                return Err(AuthoringError::Store {
                    path: path.display().to_string(),
                    message: format!(
                        "line {}: duplicate attribute `{}` for {}",
                        i + 1,
                        rec.attribute,
                        rec.cpt
                    ),
                });
            }
            batch.push(rec);
        }
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn contains(&self, cpt: &str) -> bool {
        self.by_cpt.contains_key(cpt)
    }

    pub fn cpts(&self) -> impl Iterator<Item = &str> {
        self.by_cpt.keys().map(String::as_str)
    }

    pub fn records(&self, cpt: &str) -> Option<&[AttributeRecord]> {
        self.by_cpt.get(cpt).map(Vec::as_slice)
    }

    pub fn attributes(&self, cpt: &str) -> Option<BTreeMap<String, bool>> {
        self.by_cpt.get(cpt).map(|recs| {
            recs.iter()
                .map(|r| (r.attribute.clone(), r.default_value))
                .collect()
        })
    }

    /// The engine fact for `cpt`, if its attributes exist.
    pub fn fact(&self, cpt: &str) -> Option<Fact> {
        self.attributes(cpt).map(|attributes| Fact {
            cpt: cpt.to_string(),
            attributes,
        })
    }

    /// Stores a CPT's attribute set. Without `force` an existing set is left
    /// untouched and `false` is returned.
    pub fn put(&mut self, cpt: &str, records: Vec<AttributeRecord>, force: bool) -> Result<bool, AuthoringError> {
        if self.contains(cpt) && !force {
            return Ok(false);
        }
        let mut seen = std::collections::BTreeSet::new();
        for r in &records {
            if r.cpt != cpt || !seen.insert(r.attribute.as_str()) {
                return Err(AuthoringError::Store {
                    path: self.display_path(),
                    message: format!("record ({}, {}) does not belong to a unique set for {cpt}", r.cpt, r.attribute),
                });
            }
        }
        let replacing = self.contains(cpt);
        if replacing {
            self.by_cpt.insert(cpt.to_string(), records);
            self.compact()?;
            return Ok(true);
        }
        if let Some(path) = &self.path {
            if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
            }
            let mut file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(path)
                .map_err(|e| io_error(path, e))?;
            let mut buf = Vec::new();
            for r in &records {
                serde_json::to_writer(&mut buf, r).expect("record serializes");
                buf.push(b'\n');
            }
            file.write_all(&buf).map_err(|e| io_error(path, e))?;
        }
        self.by_cpt.insert(cpt.to_string(), records);
        Ok(true)
    }

    /// Drops one attribute from the in-memory view; the log is not touched.
    pub fn forget_attribute(&mut self, cpt: &str, attribute: &str) -> bool {
        match self.by_cpt.get_mut(cpt) {
            Some(recs) => {
                let before = recs.len();
                recs.retain(|r| r.attribute != attribute);
                recs.len() != before
            }
            None => false,
        }
    }

    /// Rewrites the log so it holds exactly the live records.
    pub fn compact(&self) -> Result<(), AuthoringError> {
        let Some(path) = &self.path else {
            return Ok(());
        };
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        }
        let tmp = path.with_extension("jsonl.tmp");
        std::fs::write(&tmp, self.to_jsonl()).map_err(|e| io_error(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| io_error(path, e))?;
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in self.by_cpt.values().flatten() {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    fn display_path(&self) -> String {
        self.path
            .as_ref()
            .map(|p| p.display().to_string())
            .unwrap_or_else(|| "<memory>".into())
    }
}

fn io_error(path: &Path, e: std::io::Error) -> AuthoringError {
    AuthoringError::Store {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(cpt: &str, attr: &str, v: bool) -> AttributeRecord {
        AttributeRecord {
            cpt: cpt.into(),
            attribute: attr.into(),
            default_value: v,
            provenance: "fixture".into(),
            created_at: Clock::fixture().now(),
        }
    }

    #[test]
    fn write_once_unless_forced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attrs.jsonl");
        let mut store = AttributeStore::open(&path).unwrap();
        assert!(store.put("S9212", vec![rec("S9212", "is_pregnancy", true)], false).unwrap());
        let bytes = std::fs::read(&path).unwrap();
        assert!(!store.put("S9212", vec![rec("S9212", "is_implant", true)], false).unwrap());
        assert_eq!(std::fs::read(&path).unwrap(), bytes);

        assert!(store.put("S9212", vec![rec("S9212", "is_implant", true)], true).unwrap());
        let reopened = AttributeStore::open(&path).unwrap();
        assert_eq!(
            reopened.attributes("S9212").unwrap(),
            BTreeMap::from([("is_implant".to_string(), true)])
        );
        reopened.compact().unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap().lines().count(), 1);
    }

    #[test]
    fn rejects_duplicate_attributes() {
        let mut store = AttributeStore::in_memory();
        let err = store
            .put("A", vec![rec("A", "x", true), rec("A", "x", false)], false)
            .unwrap_err();
        assert!(matches!(err, AuthoringError::Store { .. }));
    }

    #[test]
    fn fact_from_store() {
        let mut store = AttributeStore::in_memory();
        store.put("A", vec![rec("A", "x", true), rec("A", "y", false)], false).unwrap();
        let fact = store.fact("A").unwrap();
        assert_eq!(fact.attributes.len(), 2);
        assert!(store.forget_attribute("A", "x"));
        assert_eq!(store.fact("A").unwrap().attributes.len(), 1);
        assert!(store.fact("B").is_none());
    }
}
