//! Command-line front end for the entity disambiguation pipeline.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use entlink::candidates::{candidate_recall, Candidate, CandidateSet, MentionKey};
use entlink::config::{BackendKind, PipelineConfig};
use entlink::eval::{
    attribute_errors, load_dataset, preprocess, read_predictions, score_ed, score_qa,
    write_errors_csv, write_predictions, DatasetFormat, ScoreOptions,
};
use entlink::instruct::{
    build_instruction_dataset, export_chat_jsonl, manifest_path, InstructOptions,
};
use entlink::kb::{build_prior_index_from_tsv, IndexFormat, KnowledgeBase, PriorIndex};
use entlink::llm::ChatRequest;
use entlink::pipeline::{evaluate_run, run_disambiguation, AblationVariant, PipelineRun};
use entlink::prompting::{parse_selection, render_qa_prompt, TemplateSet};

#[derive(Parser)]
#[command(
    name = "entlink",
    version,
    about = "Entity disambiguation over a knowledge base with a chat model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a surface -> entity prior index from anchor counts.
    BuildIndex(BuildIndexArgs),
    /// Run the three-step pipeline over a dataset and score it.
    Disambiguate(DisambiguateArgs),
    /// Score an existing predictions file against a dataset.
    Eval(EvalArgs),
    /// Export gold mentions as a chat-format instruction-tuning dataset.
    BuildInstructions(BuildInstructionsArgs),
    /// Answer a multiple-choice QA benchmark and report accuracy.
    Qa(QaArgs),
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::BuildIndex(args) => run_build_index(args),
        Command::Disambiguate(args) => run_disambiguate(args),
        Command::Eval(args) => run_eval(args),
        Command::BuildInstructions(args) => run_build_instructions(args),
        Command::Qa(args) => run_qa(args),
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

fn load_templates(config: &PipelineConfig) -> Result<TemplateSet> {
    Ok(match &config.templates_path {
        Some(path) => TemplateSet::load(path)?,
        None => TemplateSet::default(),
    })
}

fn write_pretty_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, format!("{text}\n")).with_context(|| format!("writing {}", path.display()))
}

#[derive(Args)]
struct BuildIndexArgs {
    /// TSV anchor counts: surface<TAB>entity_id<TAB>count.
    #[arg(long)]
    anchors: PathBuf,
    /// Knowledge base JSONL ({"id", "description"} per line).
    #[arg(long)]
    kb: PathBuf,
    /// Output path for the index.
    #[arg(long)]
    out: PathBuf,
    /// Output format: binary or jsonl.
    #[arg(long, default_value = "binary")]
    format: IndexFormat,
}

fn run_build_index(args: BuildIndexArgs) -> Result<()> {
    let kb = KnowledgeBase::load_jsonl(&args.kb)?;
    let (index, stats) = build_prior_index_from_tsv(&args.anchors, &kb)?;
    index.save(&args.out, args.format)?;
    println!("{} surfaces, {} entities", index.surfaces(), index.distinct_entities());
    println!(
        "rows {} | merged duplicates {} | dropped unresolved {} | empty surfaces {} | zero counts {} | malformed lines {}",
        stats.rows,
        stats.merged_duplicate_rows,
        stats.dropped_unresolved,
        stats.skipped_empty_surface,
        stats.skipped_zero_count,
        stats.malformed_lines,
    );
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Args)]
struct DisambiguateArgs {
    /// Run configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset format: native-json or tsv-spans.
    #[arg(long, default_value = "native-json")]
    dataset_format: DatasetFormat,
    /// Knowledge base JSONL (overrides kb_path in the config).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Prior index (overrides index_path in the config).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Where predictions.jsonl, artifacts.jsonl, and report.json go.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Pipeline variant (overrides the config).
    #[arg(long)]
    variant: Option<AblationVariant>,
    /// Chat backend kind (overrides the config).
    #[arg(long)]
    backend: Option<BackendKind>,
    /// Cassette path for the record/replay backends.
    #[arg(long)]
    cassette: Option<PathBuf>,
    /// Whether replay misses fail the run (true) or fall back (false).
    #[arg(long)]
    strict_replay: Option<bool>,
    /// Candidate list size (overrides the config).
    #[arg(long)]
    k: Option<usize>,
    /// Model name (overrides the config).
    #[arg(long)]
    model: Option<String>,
    /// Drop duplicate documents and out-of-KB mentions before running.
    #[arg(long)]
    preprocess: bool,
}

/// Reduced per-mention record written next to the predictions, enough for
/// `eval` to recompute candidate recall and step attribution later.
#[derive(Serialize, Deserialize)]
struct ArtifactLine {
    doc_id: String,
    start: usize,
    end: usize,
    candidates: Vec<String>,
    aux_present: bool,
}

fn write_artifacts(run: &PipelineRun, path: &Path) -> Result<()> {
    let mut artifacts: Vec<_> = run.artifacts.iter().collect();
    artifacts.sort_by(|a, b| a.mention.cmp(&b.mention));
    let mut out = String::new();
    for a in artifacts {
        let line = ArtifactLine {
            doc_id: a.mention.doc_id.clone(),
            start: a.mention.start,
            end: a.mention.end,
            candidates: a.candidates.candidates.iter().map(|c| c.entity_id.clone()).collect(),
            aux_present: a.aux_usable(),
        };
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn read_artifacts(path: &Path) -> Result<Vec<ArtifactLine>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut lines = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ArtifactLine = serde_json::from_str(line)
            .with_context(|| format!("{}:{}", path.display(), idx + 1))?;
        lines.push(parsed);
    }
    Ok(lines)
}

fn run_disambiguate(args: DisambiguateArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(path) = args.kb {
        config.kb_path = Some(path);
    }
    if let Some(path) = args.index {
        config.index_path = Some(path);
    }
    if let Some(dir) = args.out_dir {
        config.output_dir = Some(dir);
    }
    if let Some(variant) = args.variant {
        config.variant = variant;
    }
    if let Some(backend) = args.backend {
        config.llm.backend = backend;
    }
    if let Some(cassette) = args.cassette {
        config.llm.cassette = Some(cassette);
    }
    if let Some(strict) = args.strict_replay {
        config.llm.strict_replay = strict;
    }
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(model) = args.model {
        config.llm.model = model;
    }
    config.validate()?;

    let kb_path = config
        .kb_path
        .clone()
        .context("a knowledge base is required: pass --kb or set kb_path in the config")?;
    let index_path = config
        .index_path
        .clone()
        .context("a prior index is required: pass --index or set index_path in the config")?;
    let kb = KnowledgeBase::load_jsonl(&kb_path)?;
    let index = PriorIndex::load(&index_path)?;
    let mut dataset = load_dataset(&args.dataset, args.dataset_format)?;
    if args.preprocess {
        let (clean, report) = preprocess(&dataset, &kb);
        println!(
            "preprocess: dropped {} duplicate documents, {} out-of-KB mentions, {} empty documents",
            report.dropped_duplicate_documents,
            report.dropped_out_of_kb_mentions,
            report.dropped_empty_documents,
        );
        dataset = clean;
    }
    let templates = load_templates(&config)?;
    let retriever = config.build_retriever(&kb)?;
    let backend = config.build_backend()?;
    let opts = config.pipeline_options();

    let run = run_disambiguation(
        &dataset,
        &kb,
        &index,
        retriever.as_deref(),
        backend.as_ref(),
        &templates,
        &opts,
    )?;
    let report = evaluate_run(&dataset, &run, &config.score_options(), opts.variant, config.snapshot())?;

    let out_dir = config.output_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let predictions_path = out_dir.join("predictions.jsonl");
    write_predictions(&run.predictions(), &predictions_path)?;
    let artifacts_path = out_dir.join("artifacts.jsonl");
    write_artifacts(&run, &artifacts_path)?;
    let report_path = out_dir.join("report.json");
    write_pretty_json(&report_path, &report)?;

    println!("dataset {} | {} scored mentions | variant {}", report.dataset, report.mentions, opts.variant);
    println!(
        "precision {:.4} recall {:.4} micro-F1 {:.4}",
        report.precision, report.recall, report.micro_f1
    );
    if let Some(recall) = report.candidate_recall {
        println!("candidate recall {recall:.4}");
    }
    println!(
        "requests: {} augmentation, {} selection | retriever: {} calls, {} failures | llm failures {} | unparseable {}",
        run.stats.augmentation_requests,
        run.stats.selection_requests,
        run.stats.retriever_invocations,
        run.stats.retriever_failures,
        run.stats.llm_failures,
        run.stats.unparseable_responses,
    );
    println!(
        "wrote {}, {}, {}",
        predictions_path.display(),
        artifacts_path.display(),
        report_path.display()
    );
    if run.stats.partial {
        eprintln!("warning: partial run; the request budget ran out before every mention was processed");
        std::process::exit(1);
    }
    Ok(())
}

#[derive(Args)]
struct EvalArgs {
    /// Predictions JSONL produced by `disambiguate`.
    #[arg(long)]
    predictions: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset format: native-json or tsv-spans.
    #[arg(long, default_value = "native-json")]
    dataset_format: DatasetFormat,
    /// Artifacts JSONL; enables candidate recall and step attribution.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// The run being scored skipped the augmentation step.
    #[arg(long)]
    no_augmentation: bool,
    /// Count abstentions as false positives.
    #[arg(long)]
    strict_abstention: bool,
    /// Score mentions without predictions as abstentions instead of failing.
    #[arg(long)]
    allow_missing: bool,
    /// Write the full report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write attributed errors as CSV here.
    #[arg(long)]
    errors_csv: Option<PathBuf>,
}

fn run_eval(args: EvalArgs) -> Result<()> {
    let dataset = load_dataset(&args.dataset, args.dataset_format)?;
    let predictions = read_predictions(&args.predictions)?;
    let opts = ScoreOptions {
        strict_abstention: args.strict_abstention,
        allow_missing: args.allow_missing,
    };
    let mut report = score_ed(&predictions, &dataset, &opts)?;

    if let Some(path) = &args.artifacts {
        let mut sets: HashMap<MentionKey, CandidateSet> = HashMap::new();
        let mut aux_present: HashMap<MentionKey, bool> = HashMap::new();
        for line in read_artifacts(path)? {
            let key = MentionKey { doc_id: line.doc_id, start: line.start, end: line.end };
            let set = CandidateSet {
                mention: key.clone(),
                k: line.candidates.len(),
                candidates: line
                    .candidates
                    .into_iter()
                    .map(|entity_id| Candidate {
                        entity_id,
                        prior_score: None,
                        retrieval_score: None,
                    })
                    .collect(),
            };
            aux_present.insert(key.clone(), line.aux_present);
            sets.insert(key, set);
        }
        report.candidate_recall = candidate_recall(
            report.rows.iter().filter_map(|row| sets.get(&row.key()).map(|set| (set, row.gold.as_str()))),
        );
        report.errors = attribute_errors(&report.rows, &sets, &aux_present, args.no_augmentation);
    }

    if let Some(path) = &args.errors_csv {
        write_errors_csv(&report.errors, path)?;
        println!("wrote {}", path.display());
    }
    if let Some(path) = &args.out {
        write_pretty_json(path, &report)?;
        println!("wrote {}", path.display());
    }
    for warning in &report.warnings {
        eprintln!("warning: {warning}");
    }
    println!(
        "{} scored mentions | tp {} fp {} fn {}",
        report.mentions, report.tp, report.fp, report.fn_count
    );
    println!(
        "precision {:.4} recall {:.4} micro-F1 {:.4}",
        report.precision, report.recall, report.micro_f1
    );
    if let Some(recall) = report.candidate_recall {
        println!("candidate recall {recall:.4}");
    }
    if !report.errors.is_empty() {
        println!("{} errors attributed", report.errors.len());
    }
    Ok(())
}

#[derive(Args)]
struct BuildInstructionsArgs {
    /// Run configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dataset: PathBuf,
    /// Dataset format: native-json or tsv-spans.
    #[arg(long, default_value = "native-json")]
    dataset_format: DatasetFormat,
    /// Knowledge base JSONL (overrides kb_path in the config).
    #[arg(long)]
    kb: Option<PathBuf>,
    /// Prior index (overrides index_path in the config).
    #[arg(long)]
    index: Option<PathBuf>,
    /// Output JSONL; a .manifest.json sidecar is written next to it.
    #[arg(long)]
    out: PathBuf,
    /// Ask for free-form entity names instead of lettered candidates.
    #[arg(long)]
    no_candidates: bool,
    /// Base model recorded in the manifest.
    #[arg(long, default_value = "gpt-3.5-turbo")]
    base_model: String,
    /// Fine-tuning epochs recorded in the manifest.
    #[arg(long, default_value_t = 1)]
    epochs: u32,
}

fn run_build_instructions(args: BuildInstructionsArgs) -> Result<()> {
    let mut config = load_config(&args.config)?;
    if let Some(path) = args.kb {
        config.kb_path = Some(path);
    }
    if let Some(path) = args.index {
        config.index_path = Some(path);
    }
    let kb_path = config
        .kb_path
        .clone()
        .context("a knowledge base is required: pass --kb or set kb_path in the config")?;
    let index_path = config
        .index_path
        .clone()
        .context("a prior index is required: pass --index or set index_path in the config")?;
    let kb = KnowledgeBase::load_jsonl(&kb_path)?;
    let index = PriorIndex::load(&index_path)?;
    let dataset = load_dataset(&args.dataset, args.dataset_format)?;
    let templates = load_templates(&config)?;
    let retriever = if args.no_candidates { None } else { config.build_retriever(&kb)? };
    let opts = InstructOptions {
        gen: config.gen_config(),
        layout: config.layout(),
        include_candidates: !args.no_candidates,
    };
    let (records, stats) = build_instruction_dataset(
        &dataset.name,
        &dataset.documents,
        &kb,
        &index,
        retriever.as_deref(),
        &templates,
        &opts,
    )?;
    let manifest = export_chat_jsonl(&records, &args.out, &args.base_model, args.epochs)?;
    println!(
        "{} records | skipped {} mentions without a resolvable gold | {} retriever failures",
        stats.records, stats.skipped_gold_missing, stats.retriever_failures
    );
    println!("sha256 {}", manifest.sha256);
    println!("wrote {} and {}", args.out.display(), manifest_path(&args.out).display());
    Ok(())
}

#[derive(Args)]
struct QaArgs {
    /// Run configuration TOML; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// QA benchmark JSON: {"name", "items": [{"question", "answers", "gold"}]}.
    #[arg(long)]
    dataset: PathBuf,
    /// Write per-item answers JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Deserialize)]
struct QaDataset {
    name: String,
    items: Vec<QaItem>,
}

#[derive(Deserialize)]
struct QaItem {
    question: String,
    answers: Vec<String>,
    gold: char,
}

#[derive(Serialize)]
struct QaAnswer<'a> {
    question: &'a str,
    gold: char,
    predicted: char,
    raw_response: &'a str,
}

fn run_qa(args: QaArgs) -> Result<()> {
    let config = load_config(&args.config)?;
    let templates = load_templates(&config)?;
    let backend = config.build_backend()?;
    let text = fs::read_to_string(&args.dataset)
        .with_context(|| format!("reading {}", args.dataset.display()))?;
    let qa: QaDataset = serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", args.dataset.display()))?;

    let mut predicted = Vec::with_capacity(qa.items.len());
    let mut gold = Vec::with_capacity(qa.items.len());
    let mut raw = Vec::with_capacity(qa.items.len());
    for item in &qa.items {
        let prompt = render_qa_prompt(&item.question, &item.answers, &templates)?;
        let request = ChatRequest::single_turn(
            &config.llm.model,
            None,
            prompt.text.clone(),
            config.llm.temperature,
            config.llm.max_tokens,
        );
        let response = backend.complete(&request)?;
        let parsed = parse_selection(&response.content, &prompt);
        predicted.push(parsed.matched_label.unwrap_or('?'));
        gold.push(item.gold);
        raw.push(response.content);
    }
    let accuracy = score_qa(&predicted, &gold)?;
    let correct =
        predicted.iter().zip(&gold).filter(|(p, g)| p.eq_ignore_ascii_case(g)).count();
    println!("{}: accuracy {:.4} ({}/{} correct)", qa.name, accuracy, correct, qa.items.len());

    if let Some(path) = &args.out {
        let answers: Vec<QaAnswer<'_>> = qa
            .items
            .iter()
            .enumerate()
            .map(|(i, item)| QaAnswer {
                question: &item.question,
                gold: item.gold,
                predicted: predicted[i],
                raw_response: &raw[i],
            })
            .collect();
        let payload = serde_json::json!({
            "dataset": qa.name,
            "accuracy": accuracy,
            "answers": answers,
        });
        write_pretty_json(path, &payload)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}
