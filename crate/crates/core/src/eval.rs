//! Accuracy/F1 against gold determinations and the two-bucket error analysis.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::Trace;
use crate::rulelang::Status;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("no trace for gold rows: {}", .0.iter().map(|(p, c)| format!("{p}/{c}")).collect::<Vec<_>>().join(", "))]
    MissingTraces(Vec<(String, String)>),
    #[error("duplicate gold label for {0}/{1}")]
    DuplicateGold(String, String),
    #[error("gold CSV: {0}")]
    Csv(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Positive,
    Negative,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldLabel {
    pub plan_id: String,
    pub cpt: String,
    pub label: Label,
}

/// Reads `plan_id,cpt,label` CSV.
pub fn read_gold_csv<R: Read>(reader: R) -> Result<Vec<GoldLabel>, EvalError> {
    let mut rdr = csv::Reader::from_reader(reader);
    let headers = rdr.headers().map_err(|e| EvalError::Csv(e.to_string()))?.clone();
    if headers.iter().collect::<Vec<_>>() != ["plan_id", "cpt", "label"] {
        return Err(EvalError::Csv(format!(
            "expected header plan_id,cpt,label, got {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for rec in rdr.deserialize() {
        let g: GoldLabel = rec.map_err(|e| EvalError::Csv(e.to_string()))?;
        if !seen.insert((g.plan_id.clone(), g.cpt.clone())) {
            return Err(EvalError::DuplicateGold(g.plan_id, g.cpt));
        }
        out.push(g);
    }
    Ok(out)
}

pub fn write_gold_csv(gold: &[GoldLabel]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for g in gold {
        w.serialize(g).expect("gold row serializes");
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8")
}

/// How engine statuses map to the binary label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMapping {
    pub positive: BTreeSet<Status>,
}

impl Default for BinaryMapping {
    /// covered is positive; excluded and needs_review are negative.
    fn default() -> Self {
        BinaryMapping {
            positive: BTreeSet::from([Status::Covered]),
        }
    }
}

impl BinaryMapping {
    pub fn label(&self, status: Status) -> Label {
        if self.positive.contains(&status) {
            Label::Positive
        } else {
            Label::Negative
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, predicted: Label, gold: Label) {
        match (predicted, gold) {
            (Label::Positive, Label::Positive) => self.tp += 1,
            (Label::Positive, Label::Negative) => self.fp += 1,
            (Label::Negative, Label::Negative) => self.tn += 1,
            (Label::Negative, Label::Positive) => self.fn_ += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => (self.tp + self.tn) as f64 / n as f64,
        }
    }

    pub fn precision(&self) -> Option<f64> {
        let d = self.tp + self.fp;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    pub fn recall(&self) -> Option<f64> {
        let d = self.tp + self.fn_;
        (d > 0).then(|| self.tp as f64 / d as f64)
    }

    /// F1 over the positive class, or `None` when precision or recall is
    /// undefined or both are zero.
    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ModeCount {
    pub count: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ErrorModes {
    /// A rule fired but encoded the wrong logic.
    pub wrong_rule_fired: ModeCount,
    /// No rule fired.
    pub no_rule_fired: ModeCount,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorMode {
    WrongRuleFired,
    NoRuleFired,
}

pub fn error_mode(trace: &Trace) -> ErrorMode {
    if trace.firings.is_empty() {
        ErrorMode::NoRuleFired
    } else {
        ErrorMode::WrongRuleFired
    }
}

/// Assigns each incorrect case to exactly one bucket.
pub fn classify_errors<'a>(incorrect: impl IntoIterator<Item = (&'a Trace, &'a GoldLabel)>) -> ErrorModes {
    let (mut wrong, mut none) = (0u64, 0u64);
    for (trace, _) in incorrect {
        match error_mode(trace) {
            ErrorMode::WrongRuleFired => wrong += 1,
            ErrorMode::NoRuleFired => none += 1,
        }
    }
    let total = wrong + none;
    let frac = |c: u64| if total == 0 { 0.0 } else { c as f64 / total as f64 };
    ErrorModes {
        wrong_rule_fired: ModeCount {
            count: wrong,
            fraction: frac(wrong),
        },
        no_rule_fired: ModeCount {
            count: none,
            fraction: frac(none),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub plan_id: String,
    pub accuracy: f64,
    pub f1: f64,
    pub confusion: Confusion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncorrectCase {
    pub plan_id: String,
    pub cpt: String,
    pub gold: Label,
    pub final_status: Status,
    pub mode: ErrorMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub plans: Vec<PlanMetrics>,
    /// Macro averages over plans.
    pub average_accuracy: f64,
    pub average_f1: f64,
    pub confusion: Confusion,
    pub error_modes: ErrorModes,
    pub incorrect: Vec<IncorrectCase>,
    pub warnings: Vec<String>,
}

/// Scores traces (keyed by plan id and CPT) against gold labels.
pub fn evaluate(
    traces: &BTreeMap<(String, String), Trace>,
    gold: &[GoldLabel],
    mapping: &BinaryMapping,
) -> Result<EvalReport, EvalError> {
    let missing: Vec<(String, String)> = gold
        .iter()
        .map(|g| (g.plan_id.clone(), g.cpt.clone()))
        .filter(|k| !traces.contains_key(k))
        .collect();
    if !missing.is_empty() {
        return Err(EvalError::MissingTraces(missing));
    }

    let mut per_plan: BTreeMap<&str, Confusion> = BTreeMap::new();
    let mut overall = Confusion::default();
    let mut incorrect = Vec::new();
    let mut incorrect_pairs = Vec::new();
    for g in gold {
        let trace = &traces[&(g.plan_id.clone(), g.cpt.clone())];
        let predicted = mapping.label(trace.final_status);
        per_plan.entry(&g.plan_id).or_default().record(predicted, g.label);
        overall.record(predicted, g.label);
        if predicted != g.label {
            incorrect.push(IncorrectCase {
                plan_id: g.plan_id.clone(),
                cpt: g.cpt.clone(),
                gold: g.label,
                final_status: trace.final_status,
                mode: error_mode(trace),
            });
            incorrect_pairs.push((trace, g));
        }
    }

    let mut warnings = Vec::new();
    let plans: Vec<PlanMetrics> = per_plan
        .into_iter()
        .map(|(plan_id, c)| {
            let f1 = c.f1().unwrap_or_else(|| {
                warnings.push(format!("plan {plan_id}: F1 undefined (zero division), reported as 0"));
                0.0
            });
            PlanMetrics {
                plan_id: plan_id.to_string(),
                accuracy: c.accuracy(),
                f1,
                confusion: c,
            }
        })
        .collect();
    let n = plans.len().max(1) as f64;
    Ok(EvalReport {
        average_accuracy: plans.iter().map(|p| p.accuracy).sum::<f64>() / n,
        average_f1: plans.iter().map(|p| p.f1).sum::<f64>() / n,
        plans,
        confusion: overall,
        error_modes: classify_errors(incorrect_pairs),
        incorrect,
        warnings,
    })
}

/// Plain-text table: one row per plan with accuracy and F1, then the average.
pub fn render_table(report: &EvalReport) -> String {
    let width = report
        .plans
        .iter()
        .map(|p| p.plan_id.len())
        .chain(["Average".len(), "Plan".len()])
        .max()
        .unwrap_or(4);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}", "Plan", "Accuracy", "F1");
    let _ = writeln!(out, "{}", "-".repeat(width + 20));
    for p in &report.plans {
        let _ = writeln!(out, "{:<width$}  {:>8.2}  {:>8.2}", p.plan_id, p.accuracy, p.f1);
    }
    let _ = writeln!(out, "{}", "-".repeat(width + 20));
    let _ = writeln!(
        out,
        "{:<width$}  {:>8.2}  {:>8.2}",
        "Average", report.average_accuracy, report.average_f1
    );
    let m = &report.error_modes;
    if m.wrong_rule_fired.count + m.no_rule_fired.count > 0 {
        let _ = writeln!(
            out,
            "\nErrors: wrong rule fired {} ({:.1}%), no rule fired {} ({:.1}%)",
            m.wrong_rule_fired.count,
            100.0 * m.wrong_rule_fired.fraction,
            m.no_rule_fired.count,
            100.0 * m.no_rule_fired.fraction
        );
    }
    for w in &report.warnings {
        let _ = writeln!(out, "warning: {w}");
    }
    out
}
