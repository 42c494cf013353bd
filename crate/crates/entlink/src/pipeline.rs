//! End-to-end disambiguation runs: candidates, augmentation, selection.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::candidates::{
    candidate_recall, generate_candidates, CandidateGenConfig, CandidateSet, Document, Mention,
    MentionKey, Retriever,
};
use crate::eval::{
    attribute_errors, score_ed, BenchmarkDataset, EvalError, EvalReport, Prediction,
    PredictionSource, ScoreOptions,
};
use crate::kb::{KnowledgeBase, PriorIndex};
use crate::llm::{ChatBackend, ChatRequest, LlmError};
use crate::prompting::{
    parse_selection, render_augmentation_prompt, render_free_selection_prompt,
    render_selection_prompt, AuxiliaryContext, Decision, PromptError, PromptLayout,
    SelectionResult, TemplateSet,
};

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Which parts of the pipeline a run exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum AblationVariant {
    /// Candidates, augmentation, and multiple-choice selection.
    #[default]
    Full,
    /// Selection without the augmentation step.
    NoAugmentation,
    /// Candidates from anchor statistics only; the retriever is never called.
    PriorOnlyCandidates,
    /// Free-form selection without a candidate list (the retriever is also
    /// skipped since its output would go unused).
    NoCandidatesInstruct,
}

impl AblationVariant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::NoAugmentation => "no-augmentation",
            Self::PriorOnlyCandidates => "prior-only-candidates",
            Self::NoCandidatesInstruct => "no-candidates-instruct",
        }
    }

    pub const ALL: [AblationVariant; 4] =
        [Self::Full, Self::NoAugmentation, Self::PriorOnlyCandidates, Self::NoCandidatesInstruct];
}

impl fmt::Display for AblationVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| format!("unknown variant `{s}` (expected one of: full, no-augmentation, prior-only-candidates, no-candidates-instruct)"))
    }
}

#[derive(Debug, Clone)]
pub struct PipelineOptions {
    pub gen: CandidateGenConfig,
    pub layout: PromptLayout,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: u32,
    pub parallelism: usize,
    pub variant: AblationVariant,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        Self {
            gen: CandidateGenConfig::default(),
            layout: PromptLayout::default(),
            model: "scripted".to_string(),
            temperature: 0.0,
            max_tokens: 256,
            parallelism: 4,
            variant: AblationVariant::Full,
        }
    }
}

/// Counters collected while a run executes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunStats {
    pub mentions_processed: u64,
    pub augmentation_requests: u64,
    pub selection_requests: u64,
    pub retriever_invocations: u64,
    pub retriever_failures: u64,
    pub llm_failures: u64,
    pub unparseable_responses: u64,
    /// True when the run stopped early (budget) and some mentions were never
    /// processed.
    pub partial: bool,
}

/// Everything the pipeline produced for one mention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MentionArtifacts {
    pub mention: MentionKey,
    pub surface: String,
    pub gold: Option<String>,
    pub candidates: CandidateSet,
    pub retriever_invoked: bool,
    pub retriever_error: Option<String>,
    pub aux: Option<AuxiliaryContext>,
    pub selection: Option<SelectionResult>,
    pub prediction: Prediction,
}

impl MentionArtifacts {
    /// True when a usable auxiliary description backed the selection.
    pub fn aux_usable(&self) -> bool {
        self.aux.as_ref().is_some_and(|a| !a.failed && !a.text.is_empty())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineRun {
    pub artifacts: Vec<MentionArtifacts>,
    pub stats: RunStats,
}

impl PipelineRun {
    /// Predictions sorted by document id and span.
    pub fn predictions(&self) -> Vec<Prediction> {
        let mut predictions: Vec<Prediction> =
            self.artifacts.iter().map(|a| a.prediction.clone()).collect();
        predictions.sort_by(|a, b| a.mention.cmp(&b.mention));
        predictions
    }
}

/// Interprets a free-form selection response: the first line, with any
/// trailing period removed, read as an entity name ("none" or an empty
/// answer mean no entity). Names that resolve in the knowledge base are
/// canonicalized; anything else is kept verbatim.
pub fn free_text_decision(response: &str, kb: &KnowledgeBase) -> Decision {
    let first_line = response.lines().next().unwrap_or("").trim();
    let answer = first_line.trim_end_matches('.').trim();
    if answer.is_empty() {
        return Decision::None;
    }
    let lowered = answer.to_lowercase();
    if lowered == "none" || lowered == "none of the above" {
        return Decision::None;
    }
    match kb.resolve(answer) {
        Some(record) => Decision::Entity(record.id.clone()),
        None => Decision::Entity(answer.to_string()),
    }
}

#[derive(Default)]
struct Tallies {
    augmentation_requests: u64,
    selection_requests: u64,
    retriever_invocations: u64,
    retriever_failures: u64,
    llm_failures: u64,
    unparseable_responses: u64,
}

enum Stop {
    Budget,
    Fatal(PipelineError),
}

struct MentionJob<'a> {
    doc: &'a Document,
    mention: &'a Mention,
}

fn run_mention(
    job: &MentionJob<'_>,
    kb: &KnowledgeBase,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    opts: &PipelineOptions,
    tallies: &mut Tallies,
) -> Result<MentionArtifacts, Stop> {
    let MentionJob { doc, mention } = job;
    let key = mention.key();
    let variant = opts.variant;

    let effective_retriever = match variant {
        AblationVariant::PriorOnlyCandidates | AblationVariant::NoCandidatesInstruct => None,
        _ => retriever,
    };
    let generated = generate_candidates(mention, doc, index, effective_retriever, &opts.gen);
    tallies.retriever_invocations += generated.retriever_invoked as u64;
    tallies.retriever_failures += generated.retriever_error.is_some() as u64;

    let dispatch = |request: &ChatRequest, tallies: &mut Tallies| match backend.complete(request) {
        Ok(response) => Ok(Some(response)),
        Err(LlmError::BudgetExceeded(_)) => Err(Stop::Budget),
        Err(err @ LlmError::Auth(_)) => Err(Stop::Fatal(err.into())),
        Err(_) => {
            tallies.llm_failures += 1;
            Ok(None)
        }
    };

    let aux = if variant == AblationVariant::NoAugmentation {
        None
    } else {
        let prompt = render_augmentation_prompt(doc, mention, opts.layout, templates)
            .map_err(|e| Stop::Fatal(e.into()))?;
        let request =
            ChatRequest::single_turn(&opts.model, None, prompt, opts.temperature, opts.max_tokens);
        tallies.augmentation_requests += 1;
        Some(match dispatch(&request, tallies)? {
            Some(response) => AuxiliaryContext {
                mention: key.clone(),
                text: response.content.trim().to_string(),
                model_id: opts.model.clone(),
                token_usage: response.usage.total(),
                failed: false,
            },
            None => AuxiliaryContext {
                mention: key.clone(),
                text: String::new(),
                model_id: opts.model.clone(),
                token_usage: 0,
                failed: true,
            },
        })
    };
    let aux_text = aux.as_ref().filter(|a| !a.failed && !a.text.is_empty()).map(|a| a.text.as_str());

    let selection = if variant == AblationVariant::NoCandidatesInstruct {
        let prompt_text = render_free_selection_prompt(doc, mention, aux_text, opts.layout, templates)
            .map_err(|e| Stop::Fatal(e.into()))?;
        let request = ChatRequest::single_turn(
            &opts.model,
            Some(&templates.instruction),
            prompt_text,
            opts.temperature,
            opts.max_tokens,
        );
        tallies.selection_requests += 1;
        dispatch(&request, tallies)?.map(|response| SelectionResult {
            decision: free_text_decision(&response.content, kb),
            raw_response: response.content,
            matched_label: None,
            mention: Some(key.clone()),
        })
    } else {
        let ids: Vec<String> =
            generated.set.candidates.iter().map(|c| c.entity_id.clone()).collect();
        let prompt =
            render_selection_prompt(doc, mention, aux_text, &ids, kb, opts.layout, templates)
                .map_err(|e| Stop::Fatal(e.into()))?;
        let request = ChatRequest::single_turn(
            &opts.model,
            Some(&templates.instruction),
            prompt.text.clone(),
            opts.temperature,
            opts.max_tokens,
        );
        tallies.selection_requests += 1;
        dispatch(&request, tallies)?.map(|response| parse_selection(&response.content, &prompt))
    };

    let source = if variant == AblationVariant::NoCandidatesInstruct {
        PredictionSource::FreeText
    } else {
        PredictionSource::Selection
    };
    let prediction = match &selection {
        Some(result) => match &result.decision {
            Decision::Entity(id) => {
                Prediction { mention: key.clone(), decision: Some(id.clone()), source }
            }
            Decision::None => Prediction { mention: key.clone(), decision: None, source },
            Decision::Unparseable(_) => {
                tallies.unparseable_responses += 1;
                Prediction {
                    mention: key.clone(),
                    decision: None,
                    source: PredictionSource::Unparseable,
                }
            }
        },
        None => Prediction {
            mention: key.clone(),
            decision: None,
            source: PredictionSource::LlmFailure,
        },
    };

    Ok(MentionArtifacts {
        mention: key,
        surface: mention.surface.clone(),
        gold: mention.gold_entity.clone(),
        candidates: generated.set,
        retriever_invoked: generated.retriever_invoked,
        retriever_error: generated.retriever_error,
        aux,
        selection,
        prediction,
    })
}

/// Runs the pipeline over every mention of the dataset.
///
/// Mentions are processed by a worker pool; results are deterministic for a
/// deterministic backend regardless of parallelism. Authentication failures
/// abort the run with an error. A spent request budget stops the run early
/// and returns the mentions processed so far with `stats.partial` set. Any
/// other model failure degrades only the affected mention.
pub fn run_disambiguation(
    dataset: &BenchmarkDataset,
    kb: &KnowledgeBase,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    backend: &dyn ChatBackend,
    templates: &TemplateSet,
    opts: &PipelineOptions,
) -> Result<PipelineRun, PipelineError> {
    let jobs: Vec<MentionJob<'_>> = dataset
        .documents
        .iter()
        .flat_map(|doc| doc.mentions.iter().map(move |mention| MentionJob { doc, mention }))
        .collect();
    let slots: Mutex<Vec<Option<MentionArtifacts>>> = Mutex::new(vec![None; jobs.len()]);
    let totals: Mutex<Tallies> = Mutex::new(Tallies::default());
    let fatal: Mutex<Option<PipelineError>> = Mutex::new(None);
    let cursor = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let workers = opts.parallelism.max(1).min(jobs.len().max(1));

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| {
                let mut tallies = Tallies::default();
                loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let i = cursor.fetch_add(1, Ordering::SeqCst);
                    if i >= jobs.len() {
                        break;
                    }
                    match run_mention(
                        &jobs[i],
                        kb,
                        index,
                        retriever,
                        backend,
                        templates,
                        opts,
                        &mut tallies,
                    ) {
                        Ok(artifacts) => {
                            slots.lock().expect("slot lock")[i] = Some(artifacts);
                        }
                        Err(Stop::Budget) => {
                            abort.store(true, Ordering::SeqCst);
                            break;
                        }
                        Err(Stop::Fatal(err)) => {
                            let mut fatal = fatal.lock().expect("fatal lock");
                            fatal.get_or_insert(err);
                            abort.store(true, Ordering::SeqCst);
                            break;
                        }
                    }
                }
                let mut totals = totals.lock().expect("totals lock");
                totals.augmentation_requests += tallies.augmentation_requests;
                totals.selection_requests += tallies.selection_requests;
                totals.retriever_invocations += tallies.retriever_invocations;
                totals.retriever_failures += tallies.retriever_failures;
                totals.llm_failures += tallies.llm_failures;
                totals.unparseable_responses += tallies.unparseable_responses;
            });
        }
    });

    if let Some(err) = fatal.into_inner().expect("fatal lock") {
        return Err(err);
    }
    let artifacts: Vec<MentionArtifacts> =
        slots.into_inner().expect("slot lock").into_iter().flatten().collect();
    let tallies = totals.into_inner().expect("totals lock");
    let stats = RunStats {
        mentions_processed: artifacts.len() as u64,
        augmentation_requests: tallies.augmentation_requests,
        selection_requests: tallies.selection_requests,
        retriever_invocations: tallies.retriever_invocations,
        retriever_failures: tallies.retriever_failures,
        llm_failures: tallies.llm_failures,
        unparseable_responses: tallies.unparseable_responses,
        partial: artifacts.len() < jobs.len(),
    };
    Ok(PipelineRun { artifacts, stats })
}

/// Scores a run and fills in candidate recall, step attribution, run stats,
/// and the configuration snapshot. A partial run is scored over what was
/// processed, with missing mentions tolerated as abstention warnings.
pub fn evaluate_run(
    dataset: &BenchmarkDataset,
    run: &PipelineRun,
    score: &ScoreOptions,
    variant: AblationVariant,
    config: serde_json::Value,
) -> Result<EvalReport, EvalError> {
    let effective =
        ScoreOptions { allow_missing: score.allow_missing || run.stats.partial, ..*score };
    let predictions = run.predictions();
    let mut report = score_ed(&predictions, dataset, &effective)?;

    report.candidate_recall = candidate_recall(
        run.artifacts
            .iter()
            .filter_map(|a| a.gold.as_deref().map(|gold| (&a.candidates, gold))),
    );

    let sets: HashMap<MentionKey, CandidateSet> =
        run.artifacts.iter().map(|a| (a.mention.clone(), a.candidates.clone())).collect();
    let aux_present: HashMap<MentionKey, bool> =
        run.artifacts.iter().map(|a| (a.mention.clone(), a.aux_usable())).collect();
    report.errors = attribute_errors(
        &report.rows,
        &sets,
        &aux_present,
        variant == AblationVariant::NoAugmentation,
    );

    report.variant = Some(variant.as_str().to_string());
    report.partial = report.partial || run.stats.partial;
    report.run_stats = Some(run.stats);
    report.config = config;
    Ok(report)
}
