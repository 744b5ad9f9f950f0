//! On-disk layout shared by the CLI and the service.
//!
//! ```text
//! <dir>/plans/*.plan | *.plan.json
//! <dir>/cpts.csv            cpt,description
//! <dir>/attributes.jsonl    attribute store
//! <dir>/rules/<plan>.rules  one rule base per plan
//! <dir>/gold.csv            optional gold labels
//! <dir>/completions.json    optional fixture completions
//! <dir>/cost_profiles.toml  optional cost profiles
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::authoring::{AttributeStore, AuthoringError};
use crate::eval::{read_gold_csv, EvalError, GoldLabel};
use crate::pipeline::{read_cpts_csv, CptEntry, PipelineError};
use crate::plan::{Corpus, PlanError};
use crate::rulelang::{parse_rules, RuleBase};

#[derive(Debug, Error)]
pub enum WorkspaceError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Store(#[from] AuthoringError),
    #[error(transparent)]
    Gold(#[from] EvalError),
    #[error("{}", .0.join("\n"))]
    Rules(Vec<String>),
    #[error("{path}: rule base declares plan `{declared}`")]
    PlanMismatch { path: String, declared: String },
}

pub fn io_error(path: &Path, e: impl std::fmt::Display) -> WorkspaceError {
    WorkspaceError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    }
}

pub fn read_text(path: &Path) -> Result<String, WorkspaceError> {
    std::fs::read_to_string(path).map_err(|e| io_error(path, e))
}

/// Parses one rules file, rendering diagnostics as `file:line:col: code: message`.
pub fn load_rules_file(path: &Path) -> Result<RuleBase, WorkspaceError> {
    let source = read_text(path)?;
    let name = path.display().to_string();
    parse_rules(&source).map_err(|ds| WorkspaceError::Rules(ds.iter().map(|d| d.render(&name)).collect()))
}

#[derive(Debug, Clone)]
pub struct Workspace {
    pub dir: PathBuf,
    pub corpus: Corpus,
    pub cpts: Vec<CptEntry>,
    pub store: AttributeStore,
    pub rulebases: BTreeMap<String, RuleBase>,
}

impl Workspace {
    pub fn plans_dir(dir: &Path) -> PathBuf {
        dir.join("plans")
    }

    pub fn rules_path(dir: &Path, plan_id: &str) -> PathBuf {
        dir.join("rules").join(format!("{plan_id}.rules"))
    }

    pub fn attributes_path(dir: &Path) -> PathBuf {
        dir.join("attributes.jsonl")
    }

    /// Loads plans, CPTs, attributes and whatever rule files exist.
    pub fn load(dir: &Path) -> Result<Self, WorkspaceError> {
        let corpus = Corpus::load_dir(&Self::plans_dir(dir))?;
        let cpts_path = dir.join("cpts.csv");
        let cpts = if cpts_path.exists() {
            let file = std::fs::File::open(&cpts_path).map_err(|e| io_error(&cpts_path, e))?;
            read_cpts_csv(file)?
        } else {
            Vec::new()
        };
        let store = AttributeStore::open(Self::attributes_path(dir))?;
        let mut rulebases = BTreeMap::new();
        for plan in corpus.plans() {
            let path = Self::rules_path(dir, &plan.plan_id);
            if !path.exists() {
                continue;
            }
            let mut base = load_rules_file(&path)?;
            if base.plan_id.is_empty() {
                base.plan_id = plan.plan_id.clone();
            } else if base.plan_id != plan.plan_id {
                return Err(WorkspaceError::PlanMismatch {
                    path: path.display().to_string(),
                    declared: base.plan_id,
                });
            }
            rulebases.insert(plan.plan_id.clone(), base);
        }
        Ok(Workspace {
            dir: dir.to_path_buf(),
            corpus,
            cpts,
            store,
            rulebases,
        })
    }

    pub fn description(&self, cpt: &str) -> Option<&str> {
        self.cpts.iter().find(|c| c.cpt == cpt).map(|c| c.description.as_str())
    }

    pub fn gold(&self) -> Result<Vec<GoldLabel>, WorkspaceError> {
        let path = self.dir.join("gold.csv");
        let file = std::fs::File::open(&path).map_err(|e| io_error(&path, e))?;
        Ok(read_gold_csv(file)?)
    }
}
