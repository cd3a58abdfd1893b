//! `slr`: operator commands over a literature-review store.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use slr_core::analytics::{
    cooccurrence_matrix, cumulative_cooccurrence_series, cumulative_cross_citation_series, label_frequency,
    occurrence_proportions, series_to_csv, DEFAULT_MIN_COMBINATION_COUNT,
};
use slr_core::citenet::{centrality, induce_category_subgraph, ranking_csv, top_k, Measure, RankedPaper};
use slr_core::classifier::AssignmentStatus;
use slr_core::corpus::FormatProfile;
use slr_core::evaluation::{bundles_to_csv, bundles_to_text, compare_models, evaluate, parse_gold_jsonl, SortKey};
use slr_core::llm::{transport_for, Gateway, ProviderConfig};
use slr_core::pipeline::{render_artifacts, ReviewState};
use slr_core::taxonomy::{AnswerMode, DimensionEntry, TaxonomyDimension, TaxonomyRegistry};
use slr_core::workspace::{ClassifyRequest, Workspace};
use slr_core::{format_percent, Clock, PaperId, SystemClock};
use slr_service::{serve_state, AppState, ServiceConfig};

pub mod config;
pub mod error;
pub mod output;

use config::{pick, FileConfig, DEFAULT_MODEL, DEFAULT_REPETITIONS};
pub use error::CliError;
use output::{OutputMode, Report};

#[derive(Debug, Parser)]
#[command(name = "slr", version, about = "Taxonomy-driven literature review: ingest, classify, evaluate, analyze")]
pub struct Cli {
    /// Store directory.
    #[arg(long, env = "SLR_STORE", global = true)]
    pub store: Option<PathBuf>,
    /// TOML config file.
    #[arg(long, env = "SLR_CONFIG", global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "SLR_OUTPUT", value_enum, global = true)]
    pub output: Option<OutputMode>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Read a bibliographic export into the corpus.
    Ingest(ExportArgs),
    /// Merge a later export (daily update) into the corpus.
    Update(ExportArgs),
    /// Show, edit or replace taxonomy dimensions and their prompts.
    #[command(subcommand)]
    Taxonomy(TaxonomyCommand),
    /// Manage human gold labels.
    #[command(subcommand)]
    Gold(GoldCommand),
    /// Label every target paper of a dimension, resuming a stored run set.
    Classify(ClassifyArgs),
    /// Reduce the newest run set of a dimension to final labels.
    Consolidate {
        #[arg(long)]
        dimension: String,
        #[arg(long)]
        model: Option<String>,
    },
    /// Score stored run sets against the gold labels.
    Evaluate {
        #[arg(long)]
        dimension: String,
        #[arg(long)]
        model: Option<String>,
        /// Metric to rank models by.
        #[arg(long)]
        sort: Option<String>,
    },
    /// Rank papers of the citation network.
    Network {
        #[arg(long, default_value = "pagerank")]
        measure: String,
        #[arg(long, default_value_t = 10)]
        top: usize,
        /// Restrict to papers citing from this category (needs --label).
        #[arg(long, requires = "label")]
        dimension: Option<String>,
        #[arg(long, requires = "dimension")]
        label: Option<String>,
    },
    /// Label statistics and co-occurrence tables.
    #[command(subcommand)]
    Analytics(AnalyticsCommand),
    /// Write every table computable from the store into a directory.
    Export {
        #[arg(long)]
        dir: PathBuf,
    },
    /// Run the HTTP service until interrupted.
    Serve {
        #[arg(long)]
        bind: Option<SocketAddr>,
        /// Environment variable holding the bearer token.
        #[arg(long)]
        token_env: Option<String>,
        #[arg(long, env = "SLR_MOCK_SCRIPT")]
        mock_script: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub file: PathBuf,
    #[arg(long, default_value = "scopus_csv")]
    pub profile: String,
}

#[derive(Debug, Subcommand)]
pub enum TaxonomyCommand {
    /// Print one dimension, or all of them.
    Show {
        #[arg(long)]
        dimension: Option<String>,
    },
    /// Replace a dimension's constraint lines with a file's non-empty lines.
    Edit {
        #[arg(long)]
        dimension: String,
        #[arg(long)]
        constraints_file: PathBuf,
        #[arg(long)]
        editor: String,
    },
    /// Replace the whole taxonomy with a TOML file.
    Load {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum GoldCommand {
    /// Add JSON-lines gold records; a paper's newer record replaces the older.
    Import {
        #[arg(long)]
        file: PathBuf,
    },
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub dimension: String,
    #[arg(long)]
    pub model: Option<String>,
    #[arg(long)]
    pub repetitions: Option<u32>,
    /// Scripted responses for the `mock` provider.
    #[arg(long, env = "SLR_MOCK_SCRIPT")]
    pub mock_script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum AnalyticsCommand {
    /// Single labels and frequent combinations.
    Frequency {
        #[arg(long)]
        dimension: String,
        #[arg(long, default_value_t = DEFAULT_MIN_COMBINATION_COUNT)]
        min_count: usize,
    },
    /// Share of papers per class.
    Occurrence {
        #[arg(long)]
        dimension: String,
    },
    /// Class co-occurrence matrix.
    Chord {
        #[arg(long)]
        dimension: String,
    },
    /// Cumulative yearly series of class pairs.
    Evolution {
        #[arg(long)]
        dimension: String,
        #[arg(long, value_parser = ["cooccurrence", "citation"], default_value = "cooccurrence")]
        kind: String,
    },
}

/// Runs the parsed command and returns its report with the output mode to print it in.
pub fn run(cli: Cli) -> Result<(Report, OutputMode), CliError> {
    let file = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mode = pick(cli.output, file.output, OutputMode::Text);
    let store = cli.store.clone().or(file.store.clone()).ok_or(CliError::NoStore);
    let clock = SystemClock;
    let report = match cli.command {
        Command::Ingest(args) => ingest(&Workspace::create(store?)?, &args, false, &clock)?,
        Command::Update(args) => ingest(&Workspace::create(store?)?, &args, true, &clock)?,
        Command::Taxonomy(cmd) => taxonomy(&Workspace::open(store?)?, cmd, &clock)?,
        Command::Gold(GoldCommand::Import { file: path }) => gold_import(&Workspace::open(store?)?, &path, &clock)?,
        Command::Classify(args) => classify(&Workspace::open(store?)?, &file, &args, &clock)?,
        Command::Consolidate { dimension, model } => {
            let finals = Workspace::open(store?)?.consolidate(&dimension, model.as_deref(), &clock)?;
            Report::Summary(vec![
                ("dimension", finals.dimension_id.clone()),
                ("model", finals.model_name.clone()),
                ("prompt_version", finals.prompt_version.to_string()),
                ("papers", finals.len().to_string()),
                ("unclassified", finals.unclassified.len().to_string()),
            ])
        }
        Command::Evaluate { dimension, model, sort } => {
            evaluate_cmd(&Workspace::open(store?)?, &dimension, model.as_deref(), sort.as_deref())?
        }
        Command::Network {
            measure,
            top,
            dimension,
            label,
        } => network(&Workspace::open(store?)?, &measure, top, dimension.zip(label))?,
        Command::Analytics(cmd) => analytics(&Workspace::open(store?)?, cmd)?,
        Command::Export { dir } => export(&Workspace::open(store?)?, &dir)?,
        Command::Serve {
            bind,
            token_env,
            mock_script,
        } => {
            let config = ServiceConfig {
                store_root: store?,
                bind: pick(bind, file.bind, ServiceConfig::new("").bind),
                token_env: pick(token_env, file.token_env.clone(), slr_service::DEFAULT_TOKEN_ENV.into()),
                providers: file.providers.clone(),
                mock_script: mock_script.or(file.mock_script.clone()),
            };
            serve(config, mode)?
        }
    };
    Ok((report, mode))
}

fn ingest(ws: &Workspace, args: &ExportArgs, update: bool, clock: &dyn Clock) -> Result<Report, CliError> {
    let profile: FormatProfile = args.profile.parse()?;
    let mut corpus = ws.corpus()?;
    let delta = if update {
        corpus.merge_update(&args.file, &profile, clock.now())?
    } else {
        corpus.ingest_export(&args.file, &profile, clock.now())?
    };
    if !delta.is_empty() {
        ws.save_corpus(&corpus, clock)?;
    }
    Ok(Report::Summary(vec![
        ("added", delta.added.len().to_string()),
        ("updated", delta.updated.len().to_string()),
        ("rejected", delta.rejected.len().to_string()),
        ("duplicates_merged", delta.duplicates_merged.to_string()),
    ]))
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serializes")
}

fn describe(entry: &DimensionEntry) -> String {
    let d = &entry.dimension;
    let mut out = format!("{} ({})\n", d.dimension_id, d.name);
    out += &format!("  answer mode: {:?}\n", d.answer_mode);
    if let Some(g) = &d.depends_on {
        out += &format!("  gated by: {g}\n");
    }
    out += &format!("  labels: {}\n", d.labels.len());
    match &d.prompt_template {
        Some(t) => {
            out += &format!("  prompt version: {} ({} in history)\n", t.version, entry.history.len());
            for (i, c) in t.constraints.iter().enumerate() {
                out += &format!("  {:>3}. {c}\n", i + 1);
            }
        }
        None => out += "  no prompt: labels come from keyword matching\n",
    }
    out
}

fn taxonomy(ws: &Workspace, cmd: TaxonomyCommand, clock: &dyn Clock) -> Result<Report, CliError> {
    match cmd {
        TaxonomyCommand::Show { dimension } => {
            let registry = ws.registry()?;
            let ids: Vec<String> = match dimension {
                Some(d) => vec![registry.get(&d)?.dimension_id.clone()],
                None => registry.dimensions().map(|d| d.dimension_id.clone()).collect(),
            };
            let entries = ids.iter().map(|id| registry.entry(id)).collect::<Result<Vec<_>, _>>()?;
            Ok(Report::Document {
                text: entries.iter().map(|e| describe(e)).collect::<Vec<_>>().join("\n"),
                machine: json(&entries) + "\n",
            })
        }
        TaxonomyCommand::Edit {
            dimension,
            constraints_file,
            editor,
        } => {
            let text = read(&constraints_file)?;
            let lines: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect();
            let mut registry = ws.registry()?;
            let template = registry.edit_constraints(&dimension, lines, &editor, clock.now())?;
            let summary = vec![
                ("dimension", dimension.clone()),
                ("prompt_version", template.version.to_string()),
                ("constraints", template.constraints.len().to_string()),
            ];
            ws.save_registry(&registry, clock)?;
            Ok(Report::Summary(summary))
        }
        TaxonomyCommand::Load { file } => {
            let registry = TaxonomyRegistry::from_toml(&read(&file)?)?;
            ws.save_registry(&registry, clock)?;
            Ok(Report::Summary(vec![("dimensions", registry.dimensions().count().to_string())]))
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.into(),
        source,
    })
}

fn gold_import(ws: &Workspace, path: &Path, clock: &dyn Clock) -> Result<Report, CliError> {
    let records = parse_gold_jsonl(&read(path)?)?;
    let registry = ws.registry()?;
    let corpus = ws.corpus()?;
    let mut sets = BTreeMap::new();
    for record in records {
        if corpus.get(record.paper_id.as_str()).is_none() {
            return Err(CliError::Input {
                path: path.into(),
                message: format!("paper `{}` is not in the corpus", record.paper_id),
            });
        }
        let dim = registry.get(&record.dimension_id)?;
        let set = match sets.entry(record.dimension_id.clone()) {
            std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
            std::collections::btree_map::Entry::Vacant(e) => e.insert(ws.gold(&record.dimension_id)?),
        };
        set.insert(record, dim)?;
    }
    let mut parts = Vec::new();
    for (dim, set) in &sets {
        ws.save_gold(set, clock)?;
        parts.push(Report::Summary(vec![("dimension", dim.clone()), ("records", set.len().to_string())]));
    }
    Ok(Report::Many(parts))
}

fn gateway_for(file: &FileConfig, model: &str, mock_script: Option<&Path>) -> Result<Gateway, CliError> {
    let provider = match file.provider_for(model) {
        Some(p) => p.clone(),
        None if model == DEFAULT_MODEL => ProviderConfig::mock(model),
        None => {
            return Err(CliError::Provider {
                model: model.into(),
                message: "no provider in the config file serves this model".into(),
            })
        }
    };
    let script = mock_script.or(file.mock_script.as_deref());
    let transport = transport_for(&provider, script).map_err(|message| CliError::Provider {
        model: model.into(),
        message,
    })?;
    Ok(Gateway::new(provider, transport))
}

fn classify(ws: &Workspace, file: &FileConfig, args: &ClassifyArgs, clock: &dyn Clock) -> Result<Report, CliError> {
    let registry = ws.registry()?;
    let model = pick(args.model.clone(), file.model.clone(), DEFAULT_MODEL.into());
    let repetitions = pick(args.repetitions, file.repetitions, DEFAULT_REPETITIONS);
    let gateway = if registry.get(&args.dimension)?.answer_mode == AnswerMode::TextMapped {
        // Keyword mapping never calls the gateway, so no provider is needed.
        Gateway::new(ProviderConfig::mock(&model), Arc::new(slr_core::llm::MockProvider::from_entries([])))
    } else {
        gateway_for(file, &model, args.mock_script.as_deref())?
    };
    let runs = ws.classify(&ClassifyRequest {
        dimension_id: &args.dimension,
        gateway: &gateway,
        repetitions,
        clock,
        cancel: None,
        on_assignment: None,
    })?;
    let count = |s: AssignmentStatus| runs.assignments.iter().filter(|a| a.status == s).count().to_string();
    Ok(Report::Summary(vec![
        ("run_set", runs.identity()),
        ("targets", runs.targets.len().to_string()),
        ("assignments", runs.assignments.len().to_string()),
        ("ok", count(AssignmentStatus::Ok)),
        ("parse_failed", count(AssignmentStatus::ParseFailed)),
        ("provider_failed", count(AssignmentStatus::ProviderFailed)),
        ("coverage", format_percent(runs.coverage())),
    ]))
}

fn evaluate_cmd(ws: &Workspace, dimension: &str, model: Option<&str>, sort: Option<&str>) -> Result<Report, CliError> {
    let registry = ws.registry()?;
    let dim = registry.get(dimension)?;
    let sort = sort
        .map(str::parse::<SortKey>)
        .transpose()
        .map_err(|message| CliError::Input {
            path: "--sort".into(),
            message,
        })?;
    let gold = ws.gold(dimension)?;
    let mut bundles = Vec::new();
    for runs in ws.run_sets(dimension)? {
        if model.is_none_or(|m| runs.model_name == m) {
            bundles.push(evaluate(&runs, &gold, dim)?);
        }
    }
    if bundles.is_empty() {
        return Err(CliError::Precondition(format!("no run set to evaluate for `{dimension}`")));
    }
    let rows = compare_models(&bundles, sort)?.rows;
    Ok(Report::Document {
        text: bundles_to_text(&rows),
        machine: bundles_to_csv(&rows),
    })
}

fn ranking_text(ranked: &[RankedPaper]) -> String {
    let mut out = String::from("paper_id,score\n");
    for r in ranked {
        out += &format!("{},{:.4}\n", r.paper_id, r.score);
    }
    out
}

fn network(ws: &Workspace, measure: &str, top: usize, category: Option<(String, String)>) -> Result<Report, CliError> {
    let measure: Measure = measure.parse().map_err(|message| CliError::Input {
        path: "--measure".into(),
        message,
    })?;
    let graph = ws.graph()?;
    let graph = match &category {
        Some((d, l)) => induce_category_subgraph(&graph, d, l)?,
        None => graph,
    };
    let scores = centrality(&graph, measure)?;
    let ranked = top_k(&scores, &graph, top)?;
    Ok(Report::Table {
        csv: ranking_csv(&ranked),
        text_csv: Some(ranking_text(&ranked)),
    })
}

fn finals_for(ws: &Workspace, dimension: &str) -> Result<(TaxonomyDimension, slr_core::classifier::FinalLabels), CliError> {
    let dim = ws.registry()?.get(dimension)?.clone();
    let finals = ws
        .finals(dimension)?
        .ok_or_else(|| CliError::Precondition(format!("`{dimension}` has no final labels; run consolidate first")))?;
    Ok((dim, finals))
}

fn analytics(ws: &Workspace, cmd: AnalyticsCommand) -> Result<Report, CliError> {
    let csv = match cmd {
        AnalyticsCommand::Frequency { dimension, min_count } => {
            let (dim, finals) = finals_for(ws, &dimension)?;
            label_frequency(&finals, &dim, min_count)?.to_csv()
        }
        AnalyticsCommand::Occurrence { dimension } => {
            let (dim, finals) = finals_for(ws, &dimension)?;
            occurrence_proportions(&finals, &dim)?.to_csv()
        }
        AnalyticsCommand::Chord { dimension } => {
            let (dim, finals) = finals_for(ws, &dimension)?;
            cooccurrence_matrix(&finals, &dim)?.to_csv()
        }
        AnalyticsCommand::Evolution { dimension, kind } => {
            let (dim, finals) = finals_for(ws, &dimension)?;
            if kind == "citation" {
                let cites = cumulative_cross_citation_series(&ws.graph()?, &finals, &dim)?;
                series_to_csv(&cites.series, true)
            } else {
                let years: BTreeMap<PaperId, i32> =
                    ws.corpus()?.papers().map(|p| (p.paper_id.clone(), p.year)).collect();
                series_to_csv(&cumulative_cooccurrence_series(&finals, &dim, &years)?, false)
            }
        }
    };
    Ok(Report::table(csv))
}

fn export(ws: &Workspace, dir: &Path) -> Result<Report, CliError> {
    let corpus = ws.corpus()?;
    let registry = ws.registry()?;
    let mut finals = BTreeMap::new();
    let mut run_sets = BTreeMap::new();
    let mut gold = BTreeMap::new();
    for dim in registry.dimensions() {
        let id = &dim.dimension_id;
        if let Some(f) = ws.finals(id)? {
            if let Ok(runs) = ws.latest_run_set(id, Some(&f.model_name)) {
                run_sets.insert(id.clone(), runs);
            }
            finals.insert(id.clone(), f);
        }
        gold.insert(id.clone(), ws.gold(id)?);
    }
    let state = ReviewState {
        corpus: &corpus,
        registry: &registry,
        run_sets: &run_sets,
        finals: &finals,
        gold: &gold,
    };
    let rendered = render_artifacts(&state, DEFAULT_MIN_COMBINATION_COUNT)
        .map_err(|e| CliError::Precondition(e.to_string()))?;
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (name, body) in &rendered.artifacts {
        let path = dir.join(name);
        std::fs::write(&path, body).map_err(io(&path))?;
    }
    Ok(Report::Summary(vec![
        ("dir", dir.display().to_string()),
        ("files", rendered.artifacts.len().to_string()),
    ]))
}

fn serve(config: ServiceConfig, mode: OutputMode) -> Result<Report, CliError> {
    let runtime = tokio::runtime::Runtime::new().map_err(|source| CliError::Io {
        path: "tokio runtime".into(),
        source,
    })?;
    runtime.block_on(async {
        let state = AppState::from_config(&config)?;
        let handle = serve_state(state, config.bind).await?;
        let ready = Report::Summary(vec![("listening", handle.addr.to_string())]);
        print!("{}", ready.render(mode));
        let _ = tokio::signal::ctrl_c().await;
        handle.shutdown().await?;
        Ok(Report::Summary(vec![("stopped", "true".into())]))
    })
}
