//! Running pipeline variants side by side to isolate what each step buys.

use serde::{Deserialize, Serialize};

use crate::candidates::Retriever;
use crate::eval::{BenchmarkDataset, EvalReport, ScoreOptions};
use crate::kb::{KnowledgeBase, PriorIndex};
use crate::llm::ChatBackend;
use crate::pipeline::{
    evaluate_run, run_disambiguation, AblationVariant, PipelineError, PipelineOptions,
    PipelineRun,
};
use crate::prompting::TemplateSet;

/// One variant's run together with its scored report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationOutcome {
    pub variant: AblationVariant,
    pub run: PipelineRun,
    pub report: EvalReport,
}

/// Runs one variant end to end and scores it. The variant overrides whatever
/// `opts.variant` says, so a single options value can drive a whole sweep.
#[allow(clippy::too_many_arguments)]
pub fn run_ablation(
    dataset: &BenchmarkDataset,
    kb: &KnowledgeBase,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    opts: &PipelineOptions,
    score: &ScoreOptions,
    variant: AblationVariant,
    config: serde_json::Value,
) -> Result<AblationOutcome, PipelineError> {
    let opts = PipelineOptions { variant, ..opts.clone() };
    let run = run_disambiguation(dataset, kb, index, retriever, backend, templates, &opts)?;
    let report = evaluate_run(dataset, &run, score, variant, config)?;
    Ok(AblationOutcome { variant, run, report })
}

/// Runs every requested variant in order.
#[allow(clippy::too_many_arguments)]
pub fn run_ablations(
    dataset: &BenchmarkDataset,
    kb: &KnowledgeBase,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    opts: &PipelineOptions,
    score: &ScoreOptions,
    variants: &[AblationVariant],
    config: serde_json::Value,
) -> Result<Vec<AblationOutcome>, PipelineError> {
    variants
        .iter()
        .map(|&variant| {
            run_ablation(
                dataset,
                kb,
                index,
                retriever,
                backend,
                templates,
                opts,
                score,
                variant,
                config.clone(),
            )
        })
        .collect()
}

/// `(variant name, micro-F1)` pairs for a quick comparison table.
pub fn f1_summary(outcomes: &[AblationOutcome]) -> Vec<(String, f64)> {
    outcomes
        .iter()
        .map(|o| (o.variant.as_str().to_string(), o.report.micro_f1))
        .collect()
}
