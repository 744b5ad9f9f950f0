//! The synthetic fixture corpus: three plans, forty CPT codes, gold labels,
//! and the fixture completions that let the authoring pass run offline.
//!
//! Each plan decides, per category, whether the base service is covered and
//! whether a modifier (surrogacy, travel, maintenance and so on) flips that
//! decision. Gold labels follow directly from those decisions. Completions
//! are recorded by running the real authoring pass against an oracle client
//! that answers from the same decisions.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Mutex;

use thiserror::Error;

use crate::authoring::{AttributeStore, Author, ClientError, Clock, FixtureClient, GenerationClient, PromptTemplates};
use crate::eval::{write_gold_csv, GoldLabel, Label};
use crate::pipeline::{author_corpus, write_cpts_csv, AuthoringSummary, CptEntry, PipelineError};
use crate::plan::{serialize_plan, Corpus, PlanDocument, Section, Subsection};
use crate::retrieval::{LexicalScorer, RetrievalConfig};
use crate::rulelang::{serialize_rules, Condition, Conclusion, Rule, RuleBase, Status};

pub const PLAN_IDS: [&str; 3] = ["synthetic-A", "synthetic-B", "synthetic-C"];

const COVERED: &str = "Covered Services";
const EXCLUSIONS: &str = "Exclusions & Limitations";

/// Attribute deletions that make a broader covered rule fire in place of
/// the exclusion the modifier would trigger.
pub const FAULT_ATTRIBUTES: [(&str, &str); 3] = [
    ("S9901", "is_surrogacy"),
    ("90690", "is_travel"),
    ("97799", "is_maintenance"),
];

/// Rule deletions that leave the affected CPTs with no rule at all.
pub const FAULT_RULES: [(&str, &str); 2] = [
    ("synthetic-A", "mental_health_services"),
    ("synthetic-C", "dme_services"),
];

struct Category {
    key: &'static str,
    sub_id: &'static str,
    title: &'static str,
    base_attrs: &'static [&'static str],
    modifier: &'static str,
    services_rule: &'static str,
    /// `{status}` becomes "covered" or "not covered".
    base_text: &'static str,
    modifier_text: &'static str,
    /// Used when the modifier language has its own subsection.
    modifier_sub: (&'static str, &'static str),
    cpts: [(&'static str, &'static str, bool); 4],
}

const CATEGORIES: [Category; 10] = [
    Category {
        key: "maternity",
        sub_id: "maternity-1",
        title: "Maternity Services",
        base_attrs: &["is_pregnancy", "is_maternity"],
        modifier: "is_surrogacy",
        services_rule: "pregnancy_maternity_services",
        base_text: "Pregnancy and maternity care is {status}, including routine obstetric care, vaginal \
                    delivery, cesarean delivery, postpartum care, and home management of preeclampsia \
                    by maternity nursing visits.",
        modifier_text: "Services for a surrogacy arrangement are {status}, including care for a \
                        gestational carrier or surrogate mother under a surrogacy agreement.",
        modifier_sub: ("surrogacy-1", "Surrogacy"),
        cpts: [
            ("S9212", "home management of preeclampsia during pregnancy, per maternity nursing visit", false),
            ("59400", "routine obstetric care including vaginal delivery and postpartum care", false),
            ("59510", "routine obstetric care including cesarean delivery and postpartum care", false),
            ("S9901", "gestational carrier services for a surrogate mother under a surrogacy agreement", true),
        ],
    },
    Category {
        key: "preventive",
        sub_id: "preventive-1",
        title: "Preventive Care",
        base_attrs: &["is_preventive_care"],
        modifier: "is_travel",
        services_rule: "preventive_care_services",
        base_text: "Preventive care is {status}, including periodic wellness examinations, routine \
                    immunization with influenza vaccine, and preventive cancer screening such as \
                    screening mammography.",
        modifier_text: "Travel immunizations are {status}, including typhoid or yellow fever vaccine \
                        given only before international travel.",
        modifier_sub: ("travel-1", "Travel Immunizations"),
        cpts: [
            ("99395", "periodic preventive wellness examination, established adult patient", false),
            ("90686", "influenza vaccine for routine immunization", false),
            ("77067", "screening mammography for preventive cancer screening", false),
            ("90690", "typhoid vaccine before international travel", true),
        ],
    },
    Category {
        key: "dme",
        sub_id: "dme-1",
        title: "Durable Medical Equipment",
        base_attrs: &["is_durable_medical_equipment"],
        modifier: "is_convenience_item",
        services_rule: "dme_services",
        base_text: "Durable medical equipment is {status} when prescribed, including an external insulin \
                    pump, continuous glucose monitor sensor supplies, and a cpap device for positive \
                    airway pressure.",
        modifier_text: "Convenience items for comfort at home, such as a bath tub seat, are {status}.",
        modifier_sub: ("convenience-1", "Convenience Items"),
        cpts: [
            ("E0784", "external insulin pump, durable medical equipment", false),
            ("E0601", "continuous positive airway pressure cpap device", false),
            ("A9276", "continuous glucose monitor sensor supplies", false),
            ("E0240", "bath tub seat, convenience item for comfort at home", true),
        ],
    },
    Category {
        key: "mental_health",
        sub_id: "mental-health-1",
        title: "Mental Health Services",
        base_attrs: &["is_mental_health"],
        modifier: "is_court_ordered",
        services_rule: "mental_health_services",
        base_text: "Mental health services are {status}, including psychiatric diagnostic evaluation, \
                    individual psychotherapy, and group psychotherapy for behavioral conditions.",
        modifier_text: "Court ordered treatment mandated by a judge is {status}.",
        modifier_sub: ("court-ordered-1", "Court Ordered Treatment"),
        cpts: [
            ("90834", "individual psychotherapy session", false),
            ("90853", "group psychotherapy for behavioral conditions", false),
            ("90791", "psychiatric diagnostic evaluation", false),
            ("H2013", "court ordered treatment mandated by a judge", true),
        ],
    },
    Category {
        key: "rehabilitation",
        sub_id: "rehab-1",
        title: "Rehabilitation Therapy",
        base_attrs: &["is_rehabilitation"],
        modifier: "is_maintenance",
        services_rule: "rehabilitation_services",
        base_text: "Rehabilitation therapy to restore function is {status}, including physical therapy \
                    with therapeutic exercise, occupational therapy, and speech therapy after injury.",
        modifier_text: "Maintenance therapy when no further improvement is expected is {status}.",
        modifier_sub: ("maintenance-1", "Maintenance Therapy"),
        cpts: [
            ("97110", "therapeutic exercise in physical therapy to restore function", false),
            ("97530", "occupational therapy to restore function after injury", false),
            ("92507", "speech therapy to restore function", false),
            ("97799", "maintenance therapy when no further improvement is expected", true),
        ],
    },
    Category {
        key: "cosmetic",
        sub_id: "cosmetic-1",
        title: "Cosmetic Procedures",
        base_attrs: &["is_cosmetic"],
        modifier: "is_reconstructive",
        services_rule: "cosmetic_services",
        base_text: "Cosmetic procedures to improve appearance are {status}, including rhinoplasty, \
                    dermabrasion, and abdominoplasty.",
        modifier_text: "Reconstructive surgery, such as breast reconstruction after mastectomy, is {status}.",
        modifier_sub: ("reconstructive-1", "Reconstructive Surgery"),
        cpts: [
            ("15830", "abdominoplasty to improve appearance", false),
            ("15780", "dermabrasion to improve appearance", false),
            ("30400", "rhinoplasty to improve appearance", false),
            ("19357", "breast reconstruction after mastectomy", true),
        ],
    },
    Category {
        key: "experimental",
        sub_id: "experimental-1",
        title: "Experimental or Investigational Services",
        base_attrs: &["is_experimental"],
        modifier: "is_clinical_trial",
        services_rule: "experimental_services",
        base_text: "Experimental or investigational services are {status}, including procedures and \
                    devices not yet proven safe and effective.",
        modifier_text: "Routine patient costs in an approved clinical trial are {status}.",
        modifier_sub: ("clinical-trial-1", "Clinical Trials"),
        cpts: [
            ("0042T", "investigational perfusion imaging not yet proven effective", false),
            ("0101T", "experimental shock wave procedure not yet proven safe", false),
            ("0232T", "investigational injection of platelet plasma, not yet proven", false),
            ("S9988", "routine patient costs in an approved clinical trial", true),
        ],
    },
    Category {
        key: "infertility",
        sub_id: "infertility-1",
        title: "Infertility Treatment",
        base_attrs: &["is_infertility"],
        modifier: "is_diagnostic",
        services_rule: "infertility_services",
        base_text: "Infertility treatment is {status}, including in vitro fertilization, egg retrieval, \
                    embryo culture, and artificial insemination.",
        modifier_text: "Diagnostic testing for the cause of infertility, such as semen analysis, is {status}.",
        modifier_sub: ("infertility-testing-1", "Infertility Testing"),
        cpts: [
            ("58970", "egg retrieval for in vitro fertilization", false),
            ("89250", "embryo culture for in vitro fertilization", false),
            ("58321", "artificial insemination for infertility treatment", false),
            ("89320", "semen analysis, diagnostic testing for the cause of infertility", true),
        ],
    },
    Category {
        key: "dental",
        sub_id: "dental-1",
        title: "Dental Services",
        base_attrs: &["is_dental"],
        modifier: "is_accident_related",
        services_rule: "dental_services",
        base_text: "Dental services are {status}, including dental cleaning, crowns, restorations, and \
                    extraction of teeth.",
        modifier_text: "Repair of sound natural teeth injured in an accident is {status}.",
        modifier_sub: ("dental-accident-1", "Dental Accidents"),
        cpts: [
            ("D1110", "dental cleaning, adult prophylaxis", false),
            ("D2740", "dental crowns and restorations", false),
            ("D7140", "extraction of an erupted tooth", false),
            ("D7270", "repair of sound natural teeth injured in an accident", true),
        ],
    },
    Category {
        key: "weight_loss",
        sub_id: "weight-loss-1",
        title: "Weight Loss Programs",
        base_attrs: &["is_weight_loss"],
        modifier: "is_bariatric_surgery",
        services_rule: "weight_loss_services",
        base_text: "Weight loss programs are {status}, including weight management classes, nutrition \
                    programs, and behavioral counseling for obesity.",
        modifier_text: "Bariatric surgery such as gastric bypass for morbid obesity is {status}.",
        modifier_sub: ("bariatric-1", "Bariatric Surgery"),
        cpts: [
            ("S9449", "weight management classes", false),
            ("99078", "nutrition programs for weight loss", false),
            ("G0447", "behavioral counseling for obesity", false),
            ("43644", "gastric bypass, bariatric surgery for morbid obesity", true),
        ],
    },
];

#[derive(Clone, Copy)]
struct Decision {
    base_covered: bool,
    modifier_covered: bool,
    /// Modifier language gets its own subsection instead of sharing the
    /// base subsection.
    separate: bool,
}

const fn d(base_covered: bool, modifier_covered: bool, separate: bool) -> Decision {
    Decision {
        base_covered,
        modifier_covered,
        separate,
    }
}

struct PlanSpec {
    id: &'static str,
    title: &'static str,
    /// Extra non-canonical section: (section name, subsection id, title, text).
    extra: Option<(&'static str, &'static str, &'static str, &'static str)>,
    decisions: [Decision; 10],
}

const PLANS: [PlanSpec; 3] = [
    PlanSpec {
        id: "synthetic-A",
        title: "Synthetic Plan A",
        extra: None,
        decisions: [
            d(true, false, true),
            d(true, false, true),
            d(true, false, false),
            d(true, true, false),
            d(true, false, false),
            d(false, true, false),
            d(false, false, false),
            d(false, true, false),
            d(false, true, false),
            d(false, false, false),
        ],
    },
    PlanSpec {
        id: "synthetic-B",
        title: "Synthetic Plan B",
        extra: Some((
            "Introduction",
            "intro-1",
            "About This Certificate",
            "This certificate describes the benefits of your plan. Read it carefully and keep it with your records.",
        )),
        decisions: [
            d(true, false, true),
            d(true, false, true),
            d(true, true, false),
            d(true, false, false),
            d(true, false, false),
            d(false, true, false),
            d(false, true, false),
            d(true, true, false),
            d(false, true, false),
            d(false, true, false),
        ],
    },
    PlanSpec {
        id: "synthetic-C",
        title: "Synthetic Plan C",
        extra: Some((
            "Eligibility",
            "eligibility-1",
            "Who Is Eligible",
            "Employees and their enrolled dependents are eligible from the first day of the month after enrollment.",
        )),
        decisions: [
            d(true, false, true),
            d(true, false, true),
            d(true, false, false),
            d(true, true, false),
            d(true, true, false),
            d(false, true, false),
            d(false, false, false),
            d(false, false, false),
            d(false, false, false),
            d(false, false, false),
        ],
    },
];

fn status_word(covered: bool) -> &'static str {
    if covered {
        "covered"
    } else {
        "not covered"
    }
}

fn section_for(covered: bool) -> &'static str {
    if covered {
        COVERED
    } else {
        EXCLUSIONS
    }
}

fn sub(id: &str, title: &str, section: &str, text: String) -> Subsection {
    Subsection {
        id: id.into(),
        title: title.into(),
        text,
        section_name: section.into(),
    }
}

fn build_plan(spec: &PlanSpec) -> PlanDocument {
    let mut covered = Vec::new();
    let mut excluded = Vec::new();
    let mut modifiers_covered = Vec::new();
    let mut modifiers_excluded = Vec::new();
    for (cat, dec) in CATEGORIES.iter().zip(spec.decisions) {
        let base = cat.base_text.replace("{status}", status_word(dec.base_covered));
        let modifier = cat.modifier_text.replace("{status}", status_word(dec.modifier_covered));
        let section = section_for(dec.base_covered);
        let target = if dec.base_covered { &mut covered } else { &mut excluded };
        if dec.separate {
            target.push(sub(cat.sub_id, cat.title, section, base));
            let (id, title) = cat.modifier_sub;
            let msection = section_for(dec.modifier_covered);
            let s = sub(id, title, msection, modifier);
            if dec.modifier_covered {
                modifiers_covered.push(s);
            } else {
                modifiers_excluded.push(s);
            }
        } else {
            target.push(sub(cat.sub_id, cat.title, section, format!("{base} {modifier}")));
        }
    }
    // Separate modifier subsections lead their section.
    modifiers_covered.extend(covered);
    modifiers_excluded.extend(excluded);
    let mut sections = Vec::new();
    if let Some((name, id, title, text)) = spec.extra {
        sections.push(Section {
            name: name.into(),
            subsections: vec![sub(id, title, name, text.into())],
        });
    }
    for (name, subs) in [(COVERED, modifiers_covered), (EXCLUSIONS, modifiers_excluded)] {
        if !subs.is_empty() {
            sections.push(Section {
                name: name.into(),
                subsections: subs,
            });
        }
    }
    PlanDocument {
        plan_id: spec.id.into(),
        title: spec.title.into(),
        sections,
    }
}

pub fn plans() -> Vec<PlanDocument> {
    PLANS.iter().map(build_plan).collect()
}

pub fn corpus() -> Corpus {
    Corpus::new(plans()).expect("synthetic plan ids are distinct")
}

pub fn cpts() -> Vec<CptEntry> {
    CATEGORIES
        .iter()
        .flat_map(|c| c.cpts.iter())
        .map(|&(cpt, description, _)| CptEntry {
            cpt: cpt.into(),
            description: description.into(),
        })
        .collect()
}

/// The attribute set the oracle answers for `cpt`.
pub fn reference_attributes(cpt: &str) -> Option<Vec<(String, bool)>> {
    CATEGORIES.iter().find_map(|cat| {
        cat.cpts.iter().find(|c| c.0 == cpt).map(|&(_, _, modified)| {
            cat.base_attrs
                .iter()
                .map(|a| (a.to_string(), true))
                .chain([(cat.modifier.to_string(), modified)])
                .collect()
        })
    })
}

pub fn gold() -> Vec<GoldLabel> {
    let mut out = Vec::new();
    for spec in &PLANS {
        for (cat, dec) in CATEGORIES.iter().zip(spec.decisions) {
            for &(cpt, _, modified) in &cat.cpts {
                let covered = if modified { dec.modifier_covered } else { dec.base_covered };
                out.push(GoldLabel {
                    plan_id: spec.id.into(),
                    cpt: cpt.into(),
                    label: if covered { Label::Positive } else { Label::Negative },
                });
            }
        }
    }
    out
}

fn rule(name: String, conds: Vec<(&str, bool)>, status: Status, reason: String, cite: &str, salience: i64) -> Rule {
    Rule {
        name,
        conditions: conds
            .into_iter()
            .map(|(a, v)| Condition::new(a, v).expect("valid attribute"))
            .collect(),
        conclusion: Conclusion {
            status,
            reason,
            subsection_ref: cite.into(),
        },
        salience,
    }
}

/// The leading clause of a policy sentence, used as a rule's reason.
fn quote(template: &str, covered: bool) -> String {
    let sentence = template.replace("{status}", status_word(covered));
    let clause = sentence.split(", including").next().unwrap_or(&sentence);
    clause.trim_end_matches('.').to_string()
}

/// The rules each subsection is meant to yield, keyed by subsection id.
fn reference_fragments(spec: &PlanSpec) -> BTreeMap<String, Vec<Rule>> {
    let mut out: BTreeMap<String, Vec<Rule>> = BTreeMap::new();
    for (cat, dec) in CATEGORIES.iter().zip(spec.decisions) {
        let base_sub = cat.sub_id;
        let mod_sub = if dec.separate { cat.modifier_sub.0 } else { cat.sub_id };
        let base: Vec<(&str, bool)> = cat.base_attrs.iter().map(|a| (*a, true)).collect();
        let with = |v: bool| {
            let mut c = base.clone();
            c.push((cat.modifier, v));
            c
        };
        let modifier_name = cat.modifier.trim_start_matches("is_");
        let base_reason = quote(cat.base_text, dec.base_covered);
        let mod_reason = quote(cat.modifier_text, dec.modifier_covered);
        match (dec.base_covered, dec.modifier_covered) {
            (true, true) => {
                out.entry(base_sub.into()).or_default().push(rule(
                    cat.services_rule.into(),
                    base.clone(),
                    Status::Covered,
                    base_reason.clone(),
                    base_sub,
                    0,
                ));
            }
            (true, false) => {
                out.entry(base_sub.into()).or_default().push(rule(
                    cat.services_rule.into(),
                    base.clone(),
                    Status::Covered,
                    base_reason.clone(),
                    base_sub,
                    0,
                ));
                out.entry(mod_sub.into()).or_default().push(rule(
                    format!("{}_{}_exclusion", cat.key, modifier_name),
                    with(true),
                    Status::Excluded,
                    mod_reason.clone(),
                    mod_sub,
                    10,
                ));
            }
            (false, false) => {
                out.entry(base_sub.into()).or_default().push(rule(
                    format!("{}_exclusion", cat.key),
                    base.clone(),
                    Status::Excluded,
                    base_reason.clone(),
                    base_sub,
                    0,
                ));
            }
            (false, true) => {
                out.entry(base_sub.into()).or_default().push(rule(
                    format!("{}_exclusion", cat.key),
                    with(false),
                    Status::Excluded,
                    base_reason.clone(),
                    base_sub,
                    0,
                ));
                out.entry(mod_sub.into()).or_default().push(rule(
                    format!("{}_{}_exception", cat.key, modifier_name),
                    with(true),
                    Status::Covered,
                    mod_reason.clone(),
                    mod_sub,
                    10,
                ));
            }
        }
    }
    out
}

/// The intended rule base for `plan_id`, rules in subsection order.
pub fn reference_rules(plan_id: &str) -> Option<RuleBase> {
    let spec = PLANS.iter().find(|p| p.id == plan_id)?;
    let plan = build_plan(spec);
    let mut frags = reference_fragments(spec);
    let mut rules = Vec::new();
    for s in plan.subsections() {
        rules.extend(frags.remove(&s.id).unwrap_or_default());
    }
    Some(RuleBase {
        plan_id: plan_id.into(),
        rules,
    })
}

/// Answers prompts from the synthetic world and records every exchange.
struct Oracle {
    templates: PromptTemplates,
    /// Subsection block as it appears in a rule prompt → fragment text.
    fragments: Vec<(String, String)>,
    recorded: Mutex<FixtureClient>,
}

impl Oracle {
    fn new(templates: PromptTemplates) -> Self {
        let mut fragments = Vec::new();
        for spec in &PLANS {
            let plan = build_plan(spec);
            let frags = reference_fragments(spec);
            for s in plan.subsections() {
                let block = format!("[{}] {} ({})\n{}", s.id, s.title, s.section_name, s.text);
                let body = frags
                    .get(&s.id)
                    .map(|rules| {
                        serialize_rules(&RuleBase {
                            plan_id: String::new(),
                            rules: rules.clone(),
                        })
                    })
                    .unwrap_or_default();
                fragments.push((block, body));
            }
        }
        Oracle {
            templates,
            fragments,
            recorded: Mutex::new(FixtureClient::new()),
        }
    }

    fn answer(&self, prompt: &str) -> Result<String, ClientError> {
        let unknown = || ClientError::Request("synthetic oracle cannot answer this prompt".into());
        let head = |t: &str| t.split('{').next().unwrap_or_default().to_string();
        if prompt.starts_with(&head(&self.templates.attributes)) {
            let cpt = prompt
                .lines()
                .find_map(|l| l.strip_prefix("Procedure code: "))
                .ok_or_else(unknown)?;
            let attrs = reference_attributes(cpt.trim()).ok_or_else(unknown)?;
            return Ok(attrs.iter().map(|(a, v)| format!("{a}: {v}\n")).collect());
        }
        let hits: Vec<&String> = self
            .fragments
            .iter()
            .filter(|(block, _)| prompt.contains(block.as_str()))
            .map(|(_, body)| body)
            .collect();
        match hits.as_slice() {
            [first, rest @ ..] if rest.iter().all(|b| b == first) => Ok((*first).clone()),
            [] => Err(unknown()),
            _ => Err(ClientError::Request("subsection text is ambiguous across plans".into())),
        }
    }
}

impl GenerationClient for Oracle {
    fn complete(&self, prompt: &str) -> Result<String, ClientError> {
        let completion = self.answer(prompt)?;
        self.recorded.lock().expect("oracle lock").insert(prompt, completion.clone());
        Ok(completion)
    }

    fn provenance(&self) -> String {
        "fixture".into()
    }
}

#[derive(Debug, Error)]
pub enum SyntheticError {
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("synthetic corpus is inconsistent: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Every shipped fixture file, by path relative to the fixtures directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixtureSet {
    pub files: BTreeMap<String, String>,
}

impl FixtureSet {
    pub fn write(&self, dir: &Path) -> Result<(), SyntheticError> {
        for (rel, content) in &self.files {
            let path = dir.join(rel);
            let io = |source| SyntheticError::Io {
                path: path.display().to_string(),
                source,
            };
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent).map_err(io)?;
            }
            std::fs::write(&path, content).map_err(io)?;
        }
        Ok(())
    }

    /// Paths whose content on disk differs from this set.
    pub fn diff(&self, dir: &Path) -> Vec<String> {
        self.files
            .iter()
            .filter(|(rel, content)| std::fs::read_to_string(dir.join(rel)).ok().as_deref() != Some(content.as_str()))
            .map(|(rel, _)| rel.clone())
            .collect()
    }
}

fn sorted_rules(base: &RuleBase) -> Vec<Rule> {
    let mut r = base.rules.clone();
    r.sort_by(|a, b| a.name.cmp(&b.name));
    r
}

/// Builds the corpus, records completions with the oracle, and checks that
/// replaying them through a [`FixtureClient`] gives the intended rules.
pub fn generate(templates: &PromptTemplates) -> Result<FixtureSet, SyntheticError> {
    let corpus = corpus();
    let cpts = cpts();
    let config = RetrievalConfig::default();

    let oracle = Oracle::new(templates.clone());
    let mut store = AttributeStore::in_memory();
    let author = Author::new(&oracle, templates, Clock::fixture());
    let recorded_run = author_corpus(&corpus, &cpts, &LexicalScorer, &config, &author, &mut store, false)?;
    let fixture = oracle.recorded.into_inner().expect("oracle lock");

    let mut replay_store = AttributeStore::in_memory();
    let replay_author = Author::new(&fixture, templates, Clock::fixture());
    let replay = author_corpus(&corpus, &cpts, &LexicalScorer, &config, &replay_author, &mut replay_store, false)?;
    check(&recorded_run, &replay, &store, &replay_store)?;

    let mut files = BTreeMap::new();
    for plan in corpus.plans() {
        files.insert(format!("plans/{}.plan", plan.plan_id), serialize_plan(plan));
        files.insert(
            format!("rules/{}.rules", plan.plan_id),
            serialize_rules(&replay.rulebases[&plan.plan_id]),
        );
    }
    files.insert("cpts.csv".into(), write_cpts_csv(&cpts));
    files.insert("gold.csv".into(), write_gold_csv(&gold()));
    files.insert("completions.json".into(), fixture.to_json());
    files.insert("attributes.jsonl".into(), replay_store.to_jsonl());
    Ok(FixtureSet { files })
}

fn check(
    recorded: &AuthoringSummary,
    replay: &AuthoringSummary,
    store: &AttributeStore,
    replay_store: &AttributeStore,
) -> Result<(), SyntheticError> {
    let bad = |m: String| Err(SyntheticError::Inconsistent(m));
    if store.to_jsonl() != replay_store.to_jsonl() {
        return bad("replayed attributes differ from recorded ones".into());
    }
    for entry in cpts() {
        if !replay_store.contains(&entry.cpt) {
            return bad(format!("{} retrieved nothing in any plan", entry.cpt));
        }
    }
    for spec in &PLANS {
        let want = reference_rules(spec.id).expect("known plan");
        let got = &replay.rulebases[spec.id];
        if got != &recorded.rulebases[spec.id] {
            return bad(format!("{}: replayed rules differ from recorded rules", spec.id));
        }
        if sorted_rules(got) != sorted_rules(&want) {
            let names = |b: &RuleBase| b.rules.iter().map(|r| r.name.clone()).collect::<Vec<_>>();
            return bad(format!(
                "{}: authored rules {:?} do not match intended {:?}; a subsection hosting rules was not retrieved",
                spec.id,
                names(got),
                names(&want)
            ));
        }
    }
    Ok(())
}
