use std::collections::BTreeMap;
use std::fmt::Display;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use policytrace::authoring::{
    Author, Clock, FixtureClient, GenerationClient, PromptTemplates, RemoteLlmClient, RemoteLlmConfig,
};
use policytrace::cost::{self, CostProfile};
use policytrace::eval::{self, BinaryMapping};
use policytrace::pipeline::{adjudicate, adjudicate_corpus, author_corpus};
use policytrace::plan::{parse_plan, plan_to_json, serialize_plan};
use policytrace::retrieval::{
    self, examples, separable_items, FeatureExtractor, LexicalScorer, LinearFeatureScorer, Query,
    RemoteCrossEncoderClient, RetrievalConfig, Scorer,
};
use policytrace::rulelang::{serialize_rules, Status};
use policytrace::service::{self, AppState, ServiceConfig};
use policytrace::workspace::{io_error, load_rules_file, read_text, Workspace};
use policytrace::{engine, net, synthetic};

#[derive(Parser)]
#[command(name = "policytrace", version, about = "Coverage-policy retrieval, rules and adjudication")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Data directory; implies fixture mode (no outbound network).
    #[arg(long, global = true, value_name = "DIR", conflicts_with = "data")]
    fixtures: Option<PathBuf>,
    /// Data directory for live mode, where remote clients may be used.
    #[arg(long, global = true, value_name = "DIR")]
    data: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0.25)]
    tau: f64,
    #[arg(long, global = true, default_value_t = 5)]
    max_covered: usize,
    #[arg(long, global = true, default_value_t = 5)]
    max_exclusions: usize,
    #[arg(long, global = true, value_enum, default_value_t = ScorerKind::Lexical)]
    scorer: ScorerKind,
    /// Weights written by `train`, for `--scorer linear`.
    #[arg(long, global = true, value_name = "FILE")]
    model: Option<PathBuf>,
    /// Base URL of the cross-encoder, for `--scorer remote`.
    #[arg(long, global = true, env = "POLICYTRACE_SCORER_URL")]
    scorer_url: Option<String>,
    /// Completion endpoint for authoring in live mode.
    #[arg(long, global = true, env = "POLICYTRACE_LLM_URL")]
    llm_url: Option<String>,
    /// Model name recorded as provenance on authored records.
    #[arg(long, global = true, env = "POLICYTRACE_LLM_MODEL")]
    llm_model: Option<String>,
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    output: Output,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScorerKind {
    Lexical,
    Linear,
    Remote,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a plan file and print it in canonical form.
    Ingest {
        file: PathBuf,
        /// Also write it into the data directory's plans/.
        #[arg(long)]
        write: bool,
    },
    /// Retrieve governing passages for CPT codes.
    Retrieve {
        #[arg(long)]
        plan: String,
        /// Defaults to every code in cpts.csv.
        #[arg(long = "cpt")]
        cpts: Vec<String>,
    },
    /// Attribute store.
    Attrs {
        #[command(subcommand)]
        action: AttrsAction,
    },
    /// Rule bases.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
    /// Adjudicate one CPT under one plan.
    Run {
        #[arg(long)]
        plan: String,
        #[arg(long)]
        cpt: String,
        /// Attribute override, e.g. `--set is_pregnancy=false`.
        #[arg(long = "set", value_name = "ATTR=BOOL", value_parser = parse_override)]
        overrides: Vec<(String, bool)>,
    },
    /// Score every (plan, CPT) against gold labels.
    Eval {
        #[arg(long, value_name = "FILE")]
        gold: Option<PathBuf>,
        /// Statuses counted as the positive class.
        #[arg(long, value_delimiter = ',', default_value = "covered")]
        positive: Vec<String>,
    },
    /// Estimate inference cost.
    Cost {
        #[arg(long, conflicts_with = "per_1k")]
        profile: Option<String>,
        /// Flat price per 1,000 CPTs, in dollars.
        #[arg(long = "per-1k")]
        per_1k: Option<String>,
        /// One-time setup cost with `--per-1k`.
        #[arg(long, default_value = "0")]
        setup: String,
        #[arg(long)]
        n: i64,
        #[arg(long, value_name = "FILE")]
        profiles: Option<PathBuf>,
    },
    /// Serve the review API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
        #[arg(long)]
        cors_origin: Option<String>,
    },
    /// Train the linear scorer on a seeded separable dataset.
    Train {
        #[arg(long, default_value_t = 200)]
        examples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 0.5)]
        learning_rate: f64,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Regenerate the synthetic fixture corpus.
    Fixtures {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Compare instead of writing; fails if anything differs.
        #[arg(long)]
        check: bool,
    },
}

#[derive(Subcommand)]
enum AttrsAction {
    List {
        #[arg(long)]
        cpt: Option<String>,
    },
    Generate {
        /// Regenerate attribute sets that already exist.
        #[arg(long)]
        force: bool,
    },
}

#[derive(Subcommand)]
enum RulesAction {
    List {
        #[arg(long)]
        plan: String,
    },
    /// Parse rule files; defaults to every rule base in the data directory.
    Validate { files: Vec<PathBuf> },
    Generate {
        #[arg(long)]
        force: bool,
    },
}

fn parse_override(s: &str) -> Result<(String, bool), String> {
    let (name, value) = s.split_once('=').ok_or("expected ATTR=BOOL")?;
    let value = value.parse::<bool>().map_err(|_| format!("`{value}` is not true or false"))?;
    Ok((name.to_string(), value))
}

struct Failure(String);

impl<E: Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

struct Ctx {
    global: Global,
    dir: PathBuf,
    fixture_mode: bool,
}

impl Ctx {
    fn config(&self) -> Result<RetrievalConfig, Failure> {
        Ok(RetrievalConfig::new(self.global.tau, self.global.max_covered, self.global.max_exclusions)?)
    }

    fn scorer(&self) -> Result<Box<dyn Scorer>, Failure> {
        Ok(match self.global.scorer {
            ScorerKind::Lexical => Box::new(LexicalScorer),
            ScorerKind::Linear => {
                let path = self.global.model.as_ref().ok_or(Failure("--scorer linear needs --model".into()))?;
                let model: LinearFeatureScorer = serde_json::from_str(&read_text(path)?)?;
                Box::new(model)
            }
            ScorerKind::Remote => {
                let url = self
                    .global
                    .scorer_url
                    .as_ref()
                    .ok_or(Failure("--scorer remote needs --scorer-url".into()))?;
                Box::new(RemoteCrossEncoderClient::new(url.clone(), Duration::from_secs(60)))
            }
        })
    }

    fn workspace(&self) -> Result<Workspace, Failure> {
        Ok(Workspace::load(&self.dir)?)
    }

    fn client(&self) -> Result<Box<dyn GenerationClient>, Failure> {
        if self.fixture_mode {
            let path = self.dir.join("completions.json");
            Ok(Box::new(FixtureClient::load(&path)?))
        } else {
            let mut config = RemoteLlmConfig::default();
            if let Some(url) = &self.global.llm_url {
                config.url = url.clone();
            }
            if let Some(model) = &self.global.llm_model {
                config.model = model.clone();
            }
            Ok(Box::new(RemoteLlmClient::new(config)))
        }
    }

    fn json(&self) -> bool {
        self.global.output == Output::Json
    }
}

fn print_json(value: &impl serde::Serialize) -> CliResult {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

fn ingest(ctx: &Ctx, file: &Path, write: bool) -> CliResult {
    let plan = parse_plan(&read_text(file)?).map_err(|e| Failure(format!("{}: {e}", file.display())))?;
    if write {
        let dest = Workspace::plans_dir(&ctx.dir).join(format!("{}.plan", plan.plan_id));
        if dest.exists() {
            return Err(Failure(format!("{} already exists", dest.display())));
        }
        std::fs::create_dir_all(Workspace::plans_dir(&ctx.dir)).map_err(|e| io_error(&ctx.dir, e))?;
        std::fs::write(&dest, serialize_plan(&plan)).map_err(|e| io_error(&dest, e))?;
        eprintln!("wrote {}", dest.display());
    }
    if ctx.json() {
        println!("{}", plan_to_json(&plan));
    } else {
        print!("{}", serialize_plan(&plan));
    }
    Ok(())
}

fn retrieve(ctx: &Ctx, plan_id: &str, cpts: &[String]) -> CliResult {
    let ws = ctx.workspace()?;
    let plan = ws.corpus.get(plan_id).ok_or(Failure(format!("unknown plan `{plan_id}`")))?;
    let (config, scorer) = (ctx.config()?, ctx.scorer()?);
    let wanted: Vec<(String, String)> = if cpts.is_empty() {
        ws.cpts.iter().map(|c| (c.cpt.clone(), c.description.clone())).collect()
    } else {
        cpts.iter()
            .map(|c| {
                let desc = ws.description(c).ok_or(Failure(format!("`{c}` is not in cpts.csv")))?;
                Ok((c.clone(), desc.to_string()))
            })
            .collect::<Result<_, Failure>>()?
    };
    let mut rows = Vec::new();
    for (cpt, desc) in wanted {
        let out = retrieval::retrieve(plan, &Query::new(cpt, desc)?, scorer.as_ref(), &config, plan_id)?;
        if let Some(d) = out.diagnostic {
            eprintln!("{d}");
        }
        rows.extend(out.rows);
    }
    let stdout = std::io::stdout().lock();
    if ctx.json() {
        retrieval::write_jsonl(stdout, &rows)?;
    } else {
        retrieval::write_csv(stdout, &rows)?;
    }
    Ok(())
}

fn attrs_list(ctx: &Ctx, cpt: Option<&str>) -> CliResult {
    let ws = ctx.workspace()?;
    let cpts: Vec<&str> = match cpt {
        Some(c) => vec![c],
        None => ws.store.cpts().collect(),
    };
    let mut listing = BTreeMap::new();
    for c in cpts {
        let attrs = ws.store.attributes(c).ok_or(Failure(format!("no stored attributes for {c}")))?;
        listing.insert(c.to_string(), attrs);
    }
    if ctx.json() {
        return print_json(&listing);
    }
    for (c, attrs) in listing {
        let rendered: Vec<String> = attrs.iter().map(|(a, v)| format!("{a}={v}")).collect();
        println!("{c}: {}", rendered.join(" "));
    }
    Ok(())
}

/// Runs the authoring pass; writes rule files only when `write_rules` is set.
fn generate(ctx: &Ctx, force: bool, write_rules: bool) -> CliResult {
    let mut ws = ctx.workspace()?;
    let templates = PromptTemplates::default();
    let client = ctx.client()?;
    let clock = if ctx.fixture_mode { Clock::fixture() } else { Clock::System };
    let author = Author::new(client.as_ref(), &templates, clock);
    let (config, scorer) = (ctx.config()?, ctx.scorer()?);
    let summary = author_corpus(&ws.corpus, &ws.cpts, scorer.as_ref(), &config, &author, &mut ws.store, force)?;
    for w in &summary.warnings {
        eprintln!("warning: {w}");
    }
    if write_rules {
        for (plan_id, base) in &summary.rulebases {
            let path = Workspace::rules_path(&ctx.dir, plan_id);
            if path.exists() && !force {
                eprintln!("{} exists; pass --force to overwrite", path.display());
                continue;
            }
            std::fs::create_dir_all(path.parent().expect("rules dir")).map_err(|e| io_error(&path, e))?;
            std::fs::write(&path, serialize_rules(base)).map_err(|e| io_error(&path, e))?;
            eprintln!("wrote {} ({} rules)", path.display(), base.rules.len());
        }
    }
    if ctx.json() {
        return print_json(&json!({
            "attribute_reports": summary.attribute_reports,
            "rule_reports": summary.rule_reports,
            "warnings": summary.warnings,
        }));
    }
    println!(
        "{} attribute sets generated, {} stored CPTs",
        summary.attribute_reports.len(),
        ws.store.cpts().count()
    );
    for (plan_id, base) in &summary.rulebases {
        println!("{plan_id}: {} rules authored", base.rules.len());
    }
    Ok(())
}

fn rules_list(ctx: &Ctx, plan_id: &str) -> CliResult {
    let ws = ctx.workspace()?;
    let base = ws.rulebases.get(plan_id).ok_or(Failure(format!("no rule base for `{plan_id}`")))?;
    if ctx.json() {
        print_json(base)
    } else {
        print!("{}", serialize_rules(base));
        Ok(())
    }
}

fn rules_validate(ctx: &Ctx, files: &[PathBuf]) -> CliResult {
    let files: Vec<PathBuf> = if files.is_empty() {
        let ws = ctx.workspace()?;
        ws.corpus
            .plans()
            .iter()
            .map(|p| Workspace::rules_path(&ctx.dir, &p.plan_id))
            .filter(|p| p.exists())
            .collect()
    } else {
        files.to_vec()
    };
    let mut failed = false;
    for f in &files {
        match load_rules_file(f) {
            Ok(base) => println!("{}: ok ({} rules)", f.display(), base.rules.len()),
            Err(e) => {
                failed = true;
                println!("{e}");
            }
        }
    }
    if failed {
        Err(Failure("rule validation failed".into()))
    } else {
        Ok(())
    }
}

fn run(ctx: &Ctx, plan_id: &str, cpt: &str, overrides: &[(String, bool)]) -> CliResult {
    let ws = ctx.workspace()?;
    let plan = ws.corpus.get(plan_id).ok_or(Failure(format!("unknown plan `{plan_id}`")))?;
    let base = ws.rulebases.get(plan_id).ok_or(Failure(format!("no rule base for `{plan_id}`")))?;
    let desc = ws.description(cpt).ok_or(Failure(format!("`{cpt}` is not in cpts.csv")))?;
    let (config, scorer) = (ctx.config()?, ctx.scorer()?);
    let mut adj = adjudicate(plan, cpt, desc, &ws.store, base, &config, scorer.as_ref())?;
    if !overrides.is_empty() {
        let fact = ws.store.fact(cpt).ok_or(Failure(format!("no stored attributes for {cpt}")))?;
        let overrides: BTreeMap<String, bool> = overrides.iter().cloned().collect();
        adj.trace = engine::run(base, &fact.with_overrides(&overrides)?);
    }
    let payload = service::trace_payload(plan, cpt, &adj)?;
    if ctx.json() {
        return print_json(&payload);
    }
    print!("{}", payload["explanation"].as_str().unwrap_or_default());
    for d in &adj.diagnostics {
        eprintln!("note: {d}");
    }
    Ok(())
}

fn evaluate(ctx: &Ctx, gold: Option<&Path>, positive: &[String]) -> CliResult {
    let ws = ctx.workspace()?;
    let gold = match gold {
        Some(path) => {
            let file = std::fs::File::open(path).map_err(|e| io_error(path, e))?;
            eval::read_gold_csv(file)?
        }
        None => ws.gold()?,
    };
    let positive = positive
        .iter()
        .map(|s| Status::parse(s).ok_or(Failure(format!("unknown status `{s}`"))))
        .collect::<Result<_, _>>()?;
    let mapping = BinaryMapping { positive };
    let (config, scorer) = (ctx.config()?, ctx.scorer()?);
    let adjudications = adjudicate_corpus(&ws.corpus, &ws.cpts, &ws.store, &ws.rulebases, &config, scorer.as_ref())?;
    let traces = adjudications.into_iter().map(|(k, a)| (k, a.trace)).collect();
    let report = eval::evaluate(&traces, &gold, &mapping)?;
    if ctx.json() {
        return print_json(&report);
    }
    print!("{}", eval::render_table(&report));
    println!(
        "errors: wrong_rule_fired={} no_rule_fired={}",
        report.error_modes.wrong_rule_fired.count, report.error_modes.no_rule_fired.count
    );
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

fn estimate(ctx: &Ctx, profile: Option<&str>, per_1k: Option<&str>, setup: &str, n: i64, profiles: Option<&Path>) -> CliResult {
    let chosen: CostProfile = match (profile, per_1k) {
        (_, Some(p)) => CostProfile::flat("custom", cost::parse_money(p)?, cost::parse_money(setup)?),
        (Some(name), None) => {
            let all = match profiles {
                Some(path) => cost::parse_profiles(&read_text(path)?)?,
                None => {
                    let local = ctx.dir.join("cost_profiles.toml");
                    if local.exists() {
                        cost::parse_profiles(&read_text(&local)?)?
                    } else {
                        cost::default_profiles()
                    }
                }
            };
            cost::find_profile(&all, name)?.clone()
        }
        (None, None) => return Err(Failure("pass --profile or --per-1k".into())),
    };
    let est = cost::cost_estimate(&chosen, n)?;
    if ctx.json() {
        print_json(&est)
    } else {
        println!("{est}");
        Ok(())
    }
}

fn serve(ctx: &Ctx, listen: SocketAddr, cors_origin: Option<String>) -> CliResult {
    let config = ctx.config()?;
    let state = AppState::build(ctx.workspace()?, &config, ctx.scorer()?.as_ref())?;
    service::serve(
        state,
        &ServiceConfig {
            listen,
            retrieval: config,
            cors_origin,
        },
    )?;
    Ok(())
}

fn train(ctx: &Ctx, n: usize, seed: u64, epochs: usize, lr: f64, out: &Path) -> CliResult {
    let items = separable_items(n, seed);
    let data = examples(&items)?;
    let extractor = FeatureExtractor::from_passages(items.iter().flat_map(|i| i.candidates.iter().map(|c| c.text.as_str())));
    let run = retrieval::train_linear_scorer(&data, extractor, epochs, lr)?;
    std::fs::write(out, serde_json::to_string_pretty(&run.scorer)?).map_err(|e| io_error(out, e))?;
    let first = run.losses.first().copied().unwrap_or(f64::NAN);
    let last = run.losses.last().copied().unwrap_or(f64::NAN);
    if ctx.json() {
        return print_json(&json!({ "weights": run.scorer.weights, "initial_loss": first, "final_loss": last }));
    }
    println!("loss {first:.6} -> {last:.6} over {epochs} epochs; weights {:?}", run.scorer.weights);
    Ok(())
}

fn fixtures(out: &Path, check: bool) -> CliResult {
    let set = synthetic::generate(&PromptTemplates::default())?;
    if check {
        let differing = set.diff(out);
        if differing.is_empty() {
            println!("{}: up to date", out.display());
            return Ok(());
        }
        return Err(Failure(format!("out of date: {}", differing.join(", "))));
    }
    set.write(out)?;
    println!("wrote {} files to {}", set.files.len(), out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult {
    let fixture_mode = cli.global.data.is_none();
    let dir = cli
        .global
        .fixtures
        .clone()
        .or_else(|| cli.global.data.clone())
        .unwrap_or_else(|| PathBuf::from("fixtures"));
    if fixture_mode {
        net::deny_outbound();
    }
    let ctx = Ctx {
        global: cli.global,
        dir,
        fixture_mode,
    };
    match cli.command {
        Command::Ingest { file, write } => ingest(&ctx, &file, write),
        Command::Retrieve { plan, cpts } => retrieve(&ctx, &plan, &cpts),
        Command::Attrs { action } => match action {
            AttrsAction::List { cpt } => attrs_list(&ctx, cpt.as_deref()),
            AttrsAction::Generate { force } => generate(&ctx, force, false),
        },
        Command::Rules { action } => match action {
            RulesAction::List { plan } => rules_list(&ctx, &plan),
            RulesAction::Validate { files } => rules_validate(&ctx, &files),
            RulesAction::Generate { force } => generate(&ctx, force, true),
        },
        Command::Run { plan, cpt, overrides } => run(&ctx, &plan, &cpt, &overrides),
        Command::Eval { gold, positive } => evaluate(&ctx, gold.as_deref(), &positive),
        Command::Cost {
            profile,
            per_1k,
            setup,
            n,
            profiles,
        } => estimate(&ctx, profile.as_deref(), per_1k.as_deref(), &setup, n, profiles.as_deref()),
        Command::Serve { listen, cors_origin } => serve(&ctx, listen, cors_origin),
        Command::Train {
            examples,
            seed,
            epochs,
            learning_rate,
            out,
        } => train(&ctx, examples, seed, epochs, learning_rate, &out),
        Command::Fixtures { out, check } => fixtures(&out, check),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(message)) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}
